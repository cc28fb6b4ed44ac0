//! Models x targets latency tables.
//!
//! The on-disk form is a long CSV with header `model,target,latency_ms,top1`.
//! A latency cell of `-`, `Failed` or empty marks a missing measurement.

use std::collections::HashMap;
use std::io;

use serde::Serialize;
use thiserror::Error;

/// The classification table's on-device latencies and top-1 accuracies.
pub const BUNDLED_CSV: &str = include_str!("../../../data/paper_latencies.csv");

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: duplicate entry for ({model}, {target})")]
    Duplicate { line: u64, model: String, target: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct LatencyMatrix {
    pub models: Vec<String>,
    pub targets: Vec<String>,
    /// `latency_ms[model][target]`, `None` where not measured.
    pub latency_ms: Vec<Vec<Option<f64>>>,
    pub accuracy: Vec<Option<f64>>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "-" | "Failed")
}

impl LatencyMatrix {
    pub fn bundled() -> Self {
        Self::from_csv_str(BUNDLED_CSV).expect("bundled latency CSV is well-formed")
    }

    pub fn from_csv_str(text: &str) -> Result<Self, LatencyError> {
        Self::read_csv(text.as_bytes())
    }

    pub fn read_csv<R: io::Read>(reader: R) -> Result<Self, LatencyError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let malformed = |line: u64, reason: String| LatencyError::Malformed { line, reason };
        let headers = rdr.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
        let expected = ["model", "target", "latency_ms", "top1"];
        if headers.len() < 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(malformed(
                1,
                format!(
                    "expected header `model,target,latency_ms,top1`, got `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            ));
        }
        let mut m = LatencyMatrix::default();
        let mut model_idx: HashMap<String, usize> = HashMap::new();
        let mut target_idx: HashMap<String, usize> = HashMap::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                malformed(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let model = record.get(0).unwrap_or("");
            let target = record.get(1).unwrap_or("");
            if model.is_empty() || target.is_empty() {
                return Err(malformed(line, "model and target must be non-empty".into()));
            }
            let latency = match record.get(2).unwrap_or("") {
                cell if is_missing(cell) => None,
                cell => {
                    let v: f64 = cell
                        .parse()
                        .map_err(|_| malformed(line, format!("latency `{cell}` is not a number")))?;
                    if !(v.is_finite() && v > 0.0) {
                        return Err(malformed(line, format!("latency must be > 0, got {v}")));
                    }
                    Some(v)
                }
            };
            let top1 = match record.get(3).unwrap_or("") {
                cell if is_missing(cell) => None,
                cell => Some(
                    cell.parse::<f64>()
                        .map_err(|_| malformed(line, format!("top1 `{cell}` is not a number")))?,
                ),
            };
            let mi = *model_idx.entry(model.to_string()).or_insert_with(|| {
                m.models.push(model.to_string());
                m.latency_ms.push(vec![None; m.targets.len()]);
                m.accuracy.push(None);
                m.models.len() - 1
            });
            let ti = *target_idx.entry(target.to_string()).or_insert_with(|| {
                m.targets.push(target.to_string());
                for row in &mut m.latency_ms {
                    row.push(None);
                }
                m.targets.len() - 1
            });
            if let Some(a) = top1 {
                match m.accuracy[mi] {
                    Some(prev) if prev != a => {
                        return Err(malformed(
                            line,
                            format!("conflicting top1 for `{model}`: {prev} vs {a}"),
                        ))
                    }
                    _ => m.accuracy[mi] = Some(a),
                }
            }
            let cell = &mut m.latency_ms[mi][ti];
            if cell.is_some() {
                return Err(LatencyError::Duplicate {
                    line,
                    model: model.into(),
                    target: target.into(),
                });
            }
            *cell = latency;
        }
        Ok(m)
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["model", "target", "latency_ms", "top1"])?;
        for (mi, model) in self.models.iter().enumerate() {
            let top1 = self.accuracy[mi].map_or_else(String::new, |a| a.to_string());
            for (ti, target) in self.targets.iter().enumerate() {
                let lat = self.latency_ms[mi][ti].map_or_else(|| "-".to_string(), |v| v.to_string());
                w.write_record([model.as_str(), target.as_str(), lat.as_str(), top1.as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn model_index(&self, model: &str) -> Option<usize> {
        self.models.iter().position(|m| m == model)
    }

    pub fn target_index(&self, target: &str) -> Option<usize> {
        self.targets.iter().position(|t| t == target)
    }

    pub fn get(&self, model: &str, target: &str) -> Option<f64> {
        self.latency_ms[self.model_index(model)?][self.target_index(target)?]
    }

    /// Models measured on `target`, with their latency, in table order.
    pub fn column(&self, target: &str) -> Vec<(&str, f64)> {
        let Some(ti) = self.target_index(target) else {
            return Vec::new();
        };
        self.models
            .iter()
            .zip(&self.latency_ms)
            .filter_map(|(m, row)| row[ti].map(|v| (m.as_str(), v)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_shape() {
        let m = LatencyMatrix::bundled();
        assert_eq!(m.models.len(), 25);
        assert_eq!(m.targets.len(), 7);
        assert_eq!(m.get("MNv4-Conv-S", "Pixel 6 CPU"), Some(2.4));
        assert_eq!(m.get("MNv4-Hybrid-M", "Pixel 4 Hexagon"), None);
        assert_eq!(m.get("MNv4-Conv-L", "Samsung S23 GPU"), Some(13.2));
        let i = m.model_index("MNv4-Conv-S").unwrap();
        assert_eq!(m.accuracy[i], Some(73.8));
        // NextViT-B has no measurements anywhere
        assert!(m.column("Pixel 6 CPU").iter().all(|(name, _)| *name != "NextViT-B"));
    }

    #[test]
    fn round_trip() {
        let m = LatencyMatrix::bundled();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = LatencyMatrix::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "model,target,latency_ms,top1\na,t,1.0,70\na,u,abc,70\n";
        match LatencyMatrix::from_csv_str(text) {
            Err(LatencyError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "model,target,latency_ms,top1\na,t,1.0,70\na,t,2.0,70\n";
        assert!(matches!(
            LatencyMatrix::from_csv_str(text),
            Err(LatencyError::Duplicate { line: 3, .. })
        ));
        let text = "model,target,latency_ms,top1\na,t,0,70\n";
        assert!(matches!(
            LatencyMatrix::from_csv_str(text),
            Err(LatencyError::Malformed { line: 2, .. })
        ));
        assert!(LatencyMatrix::from_csv_str("name,x\n").is_err());
    }

    #[test]
    fn top1_column_optional() {
        let m = LatencyMatrix::from_csv_str("model,target,latency_ms\na,t,1.5\n").unwrap();
        assert_eq!(m.accuracy, vec![None]);
        assert_eq!(m.get("a", "t"), Some(1.5));
    }
}
