use branchflow::measures::{
    config_distance, wbar1, wbar1_dense, wbar1_dual_lower_bound, wbar1_line, wbar1_with_padding, CemeteryMetric,
    Configuration, FiniteMeasure, Label, LipschitzTest,
};
use proptest::prelude::*;

type TestFn = Box<dyn Fn(&[f64]) -> f64>;

fn measure_1d(max_atoms: usize) -> impl Strategy<Value = FiniteMeasure> {
    prop::collection::vec((-3.0f64..3.0, 0.05f64..2.0), 0..=max_atoms).prop_map(|atoms| {
        let (xs, ws): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
        FiniteMeasure::from_points(&xs, &ws).unwrap()
    })
}

fn measure_2d(max_atoms: usize) -> impl Strategy<Value = FiniteMeasure> {
    prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0, 0.05f64..2.0), 0..=max_atoms).prop_map(|atoms| {
        let atoms: Vec<(Vec<f64>, f64)> = atoms.into_iter().map(|(x, y, w)| (vec![x, y], w)).collect();
        FiniteMeasure::from_atoms(2, &atoms).unwrap()
    })
}

/// Antichains built from roots 1..=4, each absent, a root, or split into two children.
fn configuration() -> impl Strategy<Value = Configuration> {
    prop::collection::vec((0u8..3, -2.0f64..2.0, -2.0f64..2.0), 4).prop_map(|slots| {
        let mut particles = Vec::new();
        for (r, (kind, x, y)) in slots.into_iter().enumerate() {
            let root = Label::root(r as u32 + 1);
            match kind {
                0 => {}
                1 => particles.push((root, vec![x])),
                _ => {
                    particles.push((root.child(1), vec![x]));
                    particles.push((root.child(2), vec![y]));
                }
            }
        }
        Configuration::new(1, particles).unwrap()
    })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

/// Exact transport between unit-weight atom lists by enumerating assignments,
/// with the lighter side padded by unit cemetery atoms.
fn brute_force_unit(xs: &[f64], ys: &[f64], base: f64) -> f64 {
    let n = xs.len().max(ys.len());
    let cost = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => (x - y).abs().min(1.0),
        (Some(x), None) | (None, Some(x)) => (x - base).abs().min(1.0) + 1.0,
        (None, None) => 0.0,
    };
    permutations(n)
        .into_iter()
        .map(|p| (0..n).map(|i| cost(xs.get(i).copied(), ys.get(p[i]).copied())).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Mean measure `(1/N) Σ_i Σ_k δ_{x^k_i}` of a list of configurations.
fn mean_measure(configs: &[Configuration]) -> FiniteMeasure {
    let w = 1.0 / configs.len() as f64;
    let atoms: Vec<(Vec<f64>, f64)> =
        configs.iter().flat_map(|c| c.particles().iter().map(move |(_, x)| (x.clone(), w))).collect();
    FiniteMeasure::from_atoms(1, &atoms).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn wbar1_is_a_metric_on_the_line(a in measure_1d(6), b in measure_1d(6), c in measure_1d(6)) {
        let m = CemeteryMetric::origin(1);
        let (ab, ba, bc, ac) = (wbar1(&a, &b, &m).unwrap(), wbar1(&b, &a, &m).unwrap(), wbar1(&b, &c, &m).unwrap(), wbar1(&a, &c, &m).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!(wbar1(&a, &a, &m).unwrap().abs() < 1e-12);
        if ab < 1e-12 {
            prop_assert!((a.mass() - b.mass()).abs() < 1e-9);
            prop_assert!((a.first_moment()[0] - b.first_moment()[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn wbar1_is_a_metric_in_the_plane(a in measure_2d(5), b in measure_2d(5), c in measure_2d(5)) {
        let m = CemeteryMetric::with_base(vec![0.5, -0.5]);
        let (ab, ba, bc, ac) = (wbar1(&a, &b, &m).unwrap(), wbar1(&b, &a, &m).unwrap(), wbar1(&b, &c, &m).unwrap(), wbar1(&a, &c, &m).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn padding_mass_does_not_matter(a in measure_1d(6), b in measure_1d(6)) {
        let m = CemeteryMetric::origin(1);
        let heavy = a.mass().max(b.mass());
        let tight = wbar1_with_padding(&a, &b, &m, heavy).unwrap();
        let loose = wbar1_with_padding(&a, &b, &m, heavy + 5.0).unwrap();
        prop_assert!((tight - loose).abs() < 1e-9, "{tight} vs {loose}");
    }

    #[test]
    fn line_and_dense_routes_agree(a in measure_1d(8), b in measure_1d(8), base in -2.0f64..2.0) {
        let m = CemeteryMetric::with_base(vec![base]);
        let line = wbar1_line(&a, &b, &m).unwrap();
        let dense = wbar1_dense(&a, &b, &m).unwrap();
        prop_assert!((line - dense).abs() < 1e-9, "{line} vs {dense}");
    }

    #[test]
    fn unit_atoms_match_assignment_enumeration(
        xs in prop::collection::vec(-3.0f64..3.0, 0..=5),
        ys in prop::collection::vec(-3.0f64..3.0, 0..=5),
        base in -1.0f64..1.0,
    ) {
        let m = CemeteryMetric::with_base(vec![base]);
        let mu = FiniteMeasure::from_points(&xs, &vec![1.0; xs.len()]).unwrap();
        let nu = FiniteMeasure::from_points(&ys, &vec![1.0; ys.len()]).unwrap();
        let exact = brute_force_unit(&xs, &ys, base);
        prop_assert!((wbar1(&mu, &nu, &m).unwrap() - exact).abs() < 1e-9);
        prop_assert!((wbar1_dense(&mu, &nu, &m).unwrap() - exact).abs() < 1e-9);
    }

    #[test]
    fn dual_bound_within_factor_two(
        a in measure_1d(8),
        b in measure_1d(8),
        kinks in prop::collection::vec((-3.0f64..3.0, -1.0f64..1.0, 0.1f64..1.0), 20),
    ) {
        let m = CemeteryMetric::origin(1);
        // Tent functions s · max(0, h - |x - c|) with h ≤ 1: 1-Lipschitz, zero far away.
        let fns: Vec<TestFn> = kinks
            .iter()
            .map(|&(c, s, h)| Box::new(move |x: &[f64]| s * (h - (x[0] - c).abs()).max(0.0)) as TestFn)
            .collect();
        let tests: Vec<LipschitzTest<'_>> = fns.iter().map(|f| f.as_ref() as LipschitzTest<'_>).collect();
        let dual = wbar1_dual_lower_bound(&a, &b, &tests, &m).unwrap();
        let primal = wbar1(&a, &b, &m).unwrap();
        prop_assert!(dual <= 2.0 * primal + 1e-9, "{dual} > 2 · {primal}");
    }

    #[test]
    fn config_distance_is_a_metric(a in configuration(), b in configuration(), c in configuration()) {
        let (ab, ba, bc, ac) = (
            config_distance(&a, &b).unwrap(),
            config_distance(&b, &a).unwrap(),
            config_distance(&b, &c).unwrap(),
            config_distance(&a, &c).unwrap(),
        );
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert!(ac <= ab + bc + 1e-12);
        prop_assert_eq!(config_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab == 0.0, a == b);
    }

    #[test]
    fn mean_measure_distance_bounded_by_twice_matching(
        e1 in prop::collection::vec(configuration(), 1..=4),
        e2 in prop::collection::vec(configuration(), 4),
    ) {
        let e2 = &e2[..e1.len()];
        let n = e1.len();
        let matching = permutations(n)
            .into_iter()
            .map(|p| (0..n).map(|i| config_distance(&e1[i], &e2[p[i]]).unwrap()).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        let d = wbar1(&mean_measure(&e1), &mean_measure(e2), &CemeteryMetric::origin(1)).unwrap();
        prop_assert!(d <= 2.0 * matching + 1e-9, "{d} > 2 · {matching}");
    }

    #[test]
    fn moments_are_additive(a in measure_1d(6), b in measure_1d(6)) {
        let sum = a.blend(1.0, &b, 1.0).unwrap();
        let (ma, mb, ms) = (a.moments(), b.moments(), sum.moments());
        prop_assert!((ms.mass - ma.mass - mb.mass).abs() < 1e-12);
        prop_assert!((ms.first[0] - ma.first[0] - mb.first[0]).abs() < 1e-12);
        prop_assert!((ms.second - ma.second - mb.second).abs() < 1e-12);
    }
}
