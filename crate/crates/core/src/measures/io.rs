use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::FiniteMeasure;
use crate::error::{Error, Result};
use crate::stats::fmt_f64;

#[derive(Serialize, Deserialize)]
struct AtomRecord {
    pos: Vec<f64>,
    w: f64,
}

impl FiniteMeasure {
    /// Writes a CSV block with header `x_1,...,x_d,weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x_{i}")).collect();
        header.push("weight".into());
        wtr.write_record(&header)?;
        for (x, w) in self.iter() {
            let mut row: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
            row.push(fmt_f64(w));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the CSV block written by [`FiniteMeasure::write_csv`]. Lines
    /// starting with `#` are ignored.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let dim = headers.len().saturating_sub(1);
        if dim == 0 || headers.get(dim) != Some("weight") {
            return Err(Error::InvalidMeasure("expected columns x_1..x_d, weight".into()));
        }
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            for i in 0..dim {
                positions.push(parse(&rec[i])?);
            }
            weights.push(parse(&rec[dim])?);
        }
        Self::from_flat(dim, positions, weights)
    }

    /// JSON array of `{"pos": [...], "w": ...}` records.
    pub fn to_json(&self) -> serde_json::Value {
        let atoms: Vec<AtomRecord> = self.iter().map(|(x, w)| AtomRecord { pos: x.to_vec(), w }).collect();
        serde_json::to_value(atoms).expect("atoms serialize")
    }

    /// Parses the JSON array form; `dim` is taken from the first atom, or must
    /// be supplied for an empty array.
    pub fn from_json(value: &serde_json::Value, dim: Option<usize>) -> Result<Self> {
        let atoms: Vec<AtomRecord> = serde_json::from_value(value.clone())?;
        let dim = match (atoms.first(), dim) {
            (Some(a), _) => a.pos.len(),
            (None, Some(d)) => d,
            (None, None) => return Err(Error::InvalidMeasure("cannot infer dimension of an empty atom list".into())),
        };
        let atoms: Vec<(Vec<f64>, f64)> = atoms.into_iter().map(|a| (a.pos, a.w)).collect();
        Self::from_atoms(dim, &atoms)
    }
}

fn parse(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|e| Error::InvalidMeasure(format!("bad number {s:?}: {e}")))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mu = FiniteMeasure::from_atoms(2, &[(vec![0.1, -2.0], 0.3), (vec![1.0 / 3.0, 4.0], 1.7)]).unwrap();
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x_1,x_2,weight\n"));
        assert_eq!(FiniteMeasure::read_csv(&buf[..]).unwrap(), mu);
    }

    #[test]
    fn json_round_trip() {
        let mu = FiniteMeasure::from_points(&[0.5, 2.0], &[1.0, 0.25]).unwrap();
        let v = mu.to_json();
        assert_eq!(v[0]["pos"][0], 0.5);
        assert_eq!(FiniteMeasure::from_json(&v, None).unwrap(), mu);
        let empty = FiniteMeasure::from_json(&serde_json::json!([]), Some(1)).unwrap();
        assert!(empty.is_empty());
    }
}
