//! Multi-hardware latency aggregation and Pareto analysis.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::LatencyMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {expected} targets expected, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("latencies and normalization factors must be finite and > 0")]
    NonPositiveLatency,
    #[error("cannot aggregate an empty latency vector")]
    Empty,
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
    #[error("reference model `{0}` is missing or lacks a measurement on a requested target")]
    MissingReference(String),
}

fn check_positive(xs: &[f64]) -> Result<(), MetricsError> {
    if xs.is_empty() {
        return Err(MetricsError::Empty);
    }
    if xs.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(MetricsError::NonPositiveLatency);
    }
    Ok(())
}

/// `(1/N) * sum(L_i / C_i)`.
pub fn arith_mean_normalized(latencies: &[f64], norm: &[f64]) -> Result<f64, MetricsError> {
    if latencies.len() != norm.len() {
        return Err(MetricsError::DimensionMismatch {
            expected: norm.len(),
            found: latencies.len(),
        });
    }
    check_positive(latencies)?;
    check_positive(norm)?;
    let sum: f64 = latencies.iter().zip(norm).map(|(l, c)| l / c).sum();
    Ok(sum / latencies.len() as f64)
}

/// `(prod L_i)^(1/N)`, computed in log space.
pub fn geo_mean(latencies: &[f64]) -> Result<f64, MetricsError> {
    check_positive(latencies)?;
    let mean_ln = latencies.iter().map(|l| l.ln()).sum::<f64>() / latencies.len() as f64;
    Ok(mean_ln.exp())
}

/// Geometric mean of `L_i / C_i`.
pub fn geo_mean_normalized(latencies: &[f64], norm: &[f64]) -> Result<f64, MetricsError> {
    if latencies.len() != norm.len() {
        return Err(MetricsError::DimensionMismatch {
            expected: norm.len(),
            found: latencies.len(),
        });
    }
    check_positive(norm)?;
    let ratios: Vec<f64> = latencies.iter().zip(norm).map(|(l, c)| l / c).collect();
    geo_mean(&ratios)
}

/// One model in (aggregated latency, accuracy) space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub name: String,
    pub latency: f64,
    pub accuracy: f64,
}

impl Point {
    pub fn new(name: impl Into<String>, latency: f64, accuracy: f64) -> Self {
        Self {
            name: name.into(),
            latency,
            accuracy,
        }
    }
}

/// `a` is at least as accurate and at least as fast as `b`, and strictly
/// better in one of the two. Pairs are `(latency, accuracy)`.
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    let (la, aa) = a;
    let (lb, ab) = b;
    aa >= ab && la <= lb && (aa > ab || la < lb)
}

/// Non-dominated points, ordered by ascending latency (stable for ties).
pub fn pareto_front(points: &[Point]) -> Vec<Point> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].latency.total_cmp(&points[b].latency));
    let mut front = Vec::new();
    // best accuracy among strictly faster points
    let mut best_faster = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let lat = points[order[i]].latency;
        let mut j = i;
        while j < order.len() && points[order[j]].latency == lat {
            j += 1;
        }
        let group = &order[i..j];
        let group_max = group
            .iter()
            .map(|&k| points[k].accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        for &k in group {
            let acc = points[k].accuracy;
            if acc > best_faster && acc == group_max {
                front.push(points[k].clone());
            }
        }
        best_faster = best_faster.max(group_max);
        i = j;
    }
    front
}

/// Write points as `model,latency,accuracy` rows, latency at full precision.
pub fn write_points_csv<W: std::io::Write>(points: &[Point], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "latency", "accuracy"])?;
    for p in points {
        w.write_record([p.name.clone(), p.latency.to_string(), p.accuracy.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// How per-target latencies collapse into a single number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Aggregation {
    /// Geometric mean, optionally of latencies normalized by a reference model.
    Geo { reference: Option<String> },
    /// Arithmetic mean of latencies normalized by a reference model.
    Arith { reference: String },
}

/// Aggregate every model of `matrix` over `targets`. Models without a
/// measurement on some requested target, or without an accuracy, are skipped.
pub fn aggregate(matrix: &LatencyMatrix, targets: &[&str], agg: &Aggregation) -> Result<Vec<Point>, MetricsError> {
    if targets.is_empty() {
        return Err(MetricsError::Empty);
    }
    let cols: Vec<usize> = targets
        .iter()
        .map(|t| {
            matrix
                .target_index(t)
                .ok_or_else(|| MetricsError::UnknownTarget(t.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let row = |mi: usize| -> Option<Vec<f64>> { cols.iter().map(|&ti| matrix.latency_ms[mi][ti]).collect() };
    let reference = match agg {
        Aggregation::Geo { reference: None } => None,
        Aggregation::Geo { reference: Some(r) } | Aggregation::Arith { reference: r } => Some(
            matrix
                .model_index(r)
                .and_then(row)
                .ok_or_else(|| MetricsError::MissingReference(r.clone()))?,
        ),
    };
    let mut out = Vec::new();
    for (mi, name) in matrix.models.iter().enumerate() {
        let (Some(lat), Some(acc)) = (row(mi), matrix.accuracy[mi]) else {
            continue;
        };
        let value = match (agg, &reference) {
            (Aggregation::Geo { .. }, None) => geo_mean(&lat)?,
            (Aggregation::Geo { .. }, Some(c)) => geo_mean_normalized(&lat, c)?,
            (Aggregation::Arith { .. }, Some(c)) => arith_mean_normalized(&lat, c)?,
            (Aggregation::Arith { .. }, None) => unreachable!("arith always has a reference"),
        };
        out.push(Point::new(name.clone(), value, acc));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_front(points: &[Point]) -> Vec<String> {
        let mut v: Vec<&Point> = points
            .iter()
            .filter(|p| {
                !points
                    .iter()
                    .any(|q| dominates((q.latency, q.accuracy), (p.latency, p.accuracy)))
            })
            .collect();
        v.sort_by(|a, b| a.latency.total_cmp(&b.latency));
        v.iter().map(|p| p.name.clone()).collect()
    }

    #[test]
    fn points_csv_round_trips_values() {
        let pts = [Point::new("a,b", 0.1 + 0.2, 73.8)];
        let mut buf = Vec::new();
        write_points_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "model,latency,accuracy\n\"a,b\",0.30000000000000004,73.8\n");
    }

    #[test]
    fn arith_examples() {
        assert_eq!(arith_mean_normalized(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(arith_mean_normalized(&[2.0, 8.0], &[1.0, 1.0]).unwrap(), 5.0);
        assert_eq!(arith_mean_normalized(&[10.0, 1.0], &[5.0, 2.0]).unwrap(), 1.25);
        assert_eq!(
            arith_mean_normalized(&[1.0], &[1.0, 2.0]),
            Err(MetricsError::DimensionMismatch { expected: 2, found: 1 })
        );
        assert_eq!(
            arith_mean_normalized(&[0.0], &[1.0]),
            Err(MetricsError::NonPositiveLatency)
        );
    }

    #[test]
    fn geo_examples() {
        assert!((geo_mean(&[2.0, 8.0]).unwrap() - 4.0).abs() < 1e-12);
        let a = geo_mean(&[10.0, 1.0]).unwrap();
        let b = geo_mean(&[5.0, 2.0]).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((a - 10f64.sqrt()).abs() < 1e-12);
        assert_eq!(geo_mean(&[1.0, -1.0]), Err(MetricsError::NonPositiveLatency));
    }

    #[test]
    fn arith_ranking_depends_on_normalization_geo_does_not() {
        let a = [10.0, 1.0];
        let b = [6.0, 2.0];
        for norm in [[1.0, 1.0], [10.0, 1.0]] {
            assert!(geo_mean_normalized(&a, &norm).unwrap() < geo_mean_normalized(&b, &norm).unwrap());
        }
        let flat = [1.0, 1.0];
        let skew = [10.0, 1.0];
        assert!(arith_mean_normalized(&b, &flat).unwrap() < arith_mean_normalized(&a, &flat).unwrap());
        assert!(arith_mean_normalized(&a, &skew).unwrap() < arith_mean_normalized(&b, &skew).unwrap());
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates((1.0, 70.0), (2.0, 70.0)));
        assert!(!dominates((1.0, 70.0), (1.0, 70.0)));
        assert!(!dominates((1.0, 60.0), (2.0, 70.0)));
        assert!(!dominates((2.0, 70.0), (1.0, 60.0)));
    }

    #[test]
    fn single_point_and_ties() {
        let p = vec![Point::new("a", 1.0, 50.0)];
        assert_eq!(pareto_front(&p), p);
        let pts = vec![
            Point::new("a", 1.0, 50.0),
            Point::new("b", 1.0, 50.0),
            Point::new("c", 1.0, 40.0),
            Point::new("d", 2.0, 50.0),
            Point::new("e", 3.0, 60.0),
        ];
        let names: Vec<_> = pareto_front(&pts).into_iter().map(|p| p.name).collect();
        assert_eq!(names, ["a", "b", "e"]);
    }

    #[test]
    fn bundled_geo_front_over_three_targets() {
        let m = LatencyMatrix::bundled();
        let targets = ["Pixel 6 CPU", "Pixel 8 EdgeTPU", "Samsung S23 GPU"];
        let pts = aggregate(&m, &targets, &Aggregation::Geo { reference: None }).unwrap();
        // rows with a '-' or 'Failed' on any of the three are excluded
        assert!(pts.iter().all(|p| !p.name.starts_with("MIT-EfficientViT")));
        let front: Vec<String> = pareto_front(&pts).into_iter().map(|p| p.name).collect();
        for p in pts.iter().filter(|p| p.name.starts_with("MNv4")) {
            assert!(front.contains(&p.name), "{} not on front: {front:?}", p.name);
        }
    }

    #[test]
    fn missing_reference() {
        let m = LatencyMatrix::bundled();
        let err = aggregate(
            &m,
            &["Pixel 4 Hexagon"],
            &Aggregation::Arith {
                reference: "MNv4-Hybrid-M".into(),
            },
        );
        assert!(matches!(err, Err(MetricsError::MissingReference(_))));
        assert!(matches!(
            aggregate(&m, &["Nope"], &Aggregation::Geo { reference: None }),
            Err(MetricsError::UnknownTarget(_))
        ));
    }

    fn pair() -> impl Strategy<Value = (f64, f64)> {
        // a small grid produces plenty of ties
        ((1u32..6).prop_map(f64::from), (1u32..6).prop_map(f64::from))
    }

    proptest! {
        #[test]
        fn dominance_is_a_strict_partial_order(a in pair(), b in pair(), c in pair()) {
            prop_assert!(!dominates(a, a));
            prop_assert!(!(dominates(a, b) && dominates(b, a)));
            if dominates(a, b) && dominates(b, c) {
                prop_assert!(dominates(a, c));
            }
        }

        #[test]
        fn front_matches_brute_force(raw in prop::collection::vec(pair(), 1..12)) {
            let pts: Vec<Point> = raw
                .iter()
                .enumerate()
                .map(|(i, &(l, a))| Point::new(format!("p{i}"), l, a))
                .collect();
            let fast: Vec<String> = pareto_front(&pts).into_iter().map(|p| p.name).collect();
            prop_assert_eq!(fast, brute_front(&pts));
        }

        #[test]
        fn geo_normalization_identity(
            pairs in prop::collection::vec((1e-3f64..1e3, 1e-3f64..1e3), 1..10)
        ) {
            let l: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let c: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let lhs = geo_mean_normalized(&l, &c).unwrap();
            let rhs = geo_mean(&l).unwrap() / geo_mean(&c).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
        }
    }
}
