//! Reliability diagrams with right-closed uniform bins, ACE and MCE, and
//! deterministic SVG / CSV / JSON output.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::argmax;
use crate::fsutil::write_atomic;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no predictions")]
    Empty,
    #[error("bin count must be >= 1")]
    BinCount,
    #[error("prediction {index} is not a probability vector")]
    NotSimplex { index: usize },
    #[error("prediction {index} has label {label} but only {classes} classes")]
    Label { index: usize, label: usize, classes: usize },
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("every bin is empty")]
    AllBinsEmpty,
    #[error("serialization: {0}")]
    Serialize(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    /// 1-based bin number; bin `b` covers `((b - 1)/m, b/m]`, and bin 1 also
    /// takes confidence 0.
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mean_confidence: Option<f64>,
    pub mean_accuracy: Option<f64>,
}

impl BinStats {
    /// `|C_m - A_m|`, or `None` for an empty bin.
    pub fn gap(&self) -> Option<f64> {
        Some((self.mean_confidence? - self.mean_accuracy?).abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityDiagram {
    pub m: usize,
    pub bins: Vec<BinStats>,
}

impl ReliabilityDiagram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn non_empty(&self) -> usize {
        self.bins.iter().filter(|b| b.count > 0).count()
    }
}

fn edge(i: usize, m: usize) -> f64 {
    i as f64 / m as f64
}

/// 1-based bin for confidence `c`.
pub fn bin_index(c: f64, m: usize) -> usize {
    let mut b = ((c * m as f64).ceil() as usize).clamp(1, m);
    // Guard against rounding in c * m against the stored edges.
    while b > 1 && c <= edge(b - 1, m) {
        b -= 1;
    }
    while b < m && c > edge(b, m) {
        b += 1;
    }
    b
}

/// Mean that is exact for constant input and independent of input order.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mut mean = 0.0;
    for (i, &v) in values.iter().enumerate() {
        mean += (v - mean) / (i + 1) as f64;
    }
    mean
}

/// Diagram from `(confidence, correct)` pairs.
pub fn build_diagram_from_confidences(items: &[(f64, bool)], m: usize) -> Result<ReliabilityDiagram, CalibrationError> {
    if m == 0 {
        return Err(CalibrationError::BinCount);
    }
    if items.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let mut conf: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut correct = vec![0usize; m];
    for &(c, ok) in items {
        if !(0.0..=1.0).contains(&c) {
            return Err(CalibrationError::Confidence(c));
        }
        let b = bin_index(c, m) - 1;
        conf[b].push(c);
        correct[b] += ok as usize;
    }
    let bins = conf
        .into_iter()
        .zip(correct)
        .enumerate()
        .map(|(i, (mut cs, ok))| {
            let count = cs.len();
            let (mean_confidence, mean_accuracy) = if count == 0 {
                (None, None)
            } else {
                (Some(stable_mean(&mut cs)), Some(ok as f64 / count as f64))
            };
            BinStats {
                index: i + 1,
                lo: edge(i, m),
                hi: edge(i + 1, m),
                count,
                mean_confidence,
                mean_accuracy,
            }
        })
        .collect();
    Ok(ReliabilityDiagram { m, bins })
}

/// Confidence is the top probability; a prediction is correct when its
/// argmax (lowest index on ties) equals the label.
pub fn build_diagram(preds: &[(Vec<f64>, usize)], m: usize) -> Result<ReliabilityDiagram, CalibrationError> {
    let items = preds
        .iter()
        .enumerate()
        .map(|(index, (p, label))| {
            let sum: f64 = p.iter().sum();
            if p.is_empty() || (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| !(*v >= 0.0)) {
                return Err(CalibrationError::NotSimplex { index });
            }
            if *label >= p.len() {
                return Err(CalibrationError::Label {
                    index,
                    label: *label,
                    classes: p.len(),
                });
            }
            let top = argmax(p);
            Ok((p[top].min(1.0), top == *label))
        })
        .collect::<Result<Vec<_>, _>>()?;
    build_diagram_from_confidences(&items, m)
}

/// Mean confidence-accuracy gap over non-empty bins.
pub fn ace(d: &ReliabilityDiagram) -> Result<f64, CalibrationError> {
    let gaps: Vec<f64> = d.bins.iter().filter_map(BinStats::gap).collect();
    if gaps.is_empty() {
        return Err(CalibrationError::AllBinsEmpty);
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// Largest confidence-accuracy gap over non-empty bins.
pub fn mce(d: &ReliabilityDiagram) -> Result<f64, CalibrationError> {
    d.bins
        .iter()
        .filter_map(BinStats::gap)
        .reduce(f64::max)
        .ok_or(CalibrationError::AllBinsEmpty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub ace: f64,
    pub mce: f64,
    pub m: usize,
    pub m_plus: usize,
    /// Path of the rendered diagram, when one was written.
    pub diagram_path: Option<String>,
    pub diagram: ReliabilityDiagram,
}

impl CalibrationReport {
    pub fn new(diagram: ReliabilityDiagram) -> Result<Self, CalibrationError> {
        Ok(Self {
            ace: ace(&diagram)?,
            mce: mce(&diagram)?,
            m: diagram.m,
            m_plus: diagram.non_empty(),
            diagram_path: None,
            diagram,
        })
    }

    pub fn to_json(&self) -> Result<String, CalibrationError> {
        serde_json::to_string_pretty(self).map_err(|e| CalibrationError::Serialize(e.to_string()))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// `bin_index,lo,hi,count,mean_confidence,mean_accuracy`, one row per bin.
pub fn diagram_csv(d: &ReliabilityDiagram) -> String {
    let mut out = String::from("bin_index,lo,hi,count,mean_confidence,mean_accuracy\n");
    for b in &d.bins {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{},{}",
            b.index,
            b.lo,
            b.hi,
            b.count,
            opt(b.mean_confidence),
            opt(b.mean_accuracy)
        );
    }
    out
}

/// Accuracy bars per bin, the identity diagonal, and confidence markers.
pub fn diagram_svg(d: &ReliabilityDiagram, title: &str) -> String {
    const SIZE: f64 = 320.0;
    const PAD: f64 = 48.0;
    let px = |v: f64| PAD + v * SIZE;
    let py = |v: f64| PAD + (1.0 - v) * SIZE;
    let total = SIZE + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total:.0}" height="{total:.0}" viewBox="0 0 {total:.0} {total:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{total:.0}" height="{total:.0}" fill="white"/>"#);
    let escaped = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{escaped}</text>"#, total / 2.0);
    for b in &d.bins {
        let Some(acc) = b.mean_accuracy else { continue };
        let (x0, x1) = (px(b.lo), px(b.hi));
        let _ = writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a78b5" stroke="#1f3d66" stroke-width="0.8"/>"##,
            py(acc),
            x1 - x0,
            py(0.0) - py(acc)
        );
        if let Some(c) = b.mean_confidence {
            let _ = writeln!(
                s,
                r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#d04a2f" stroke-width="2"/>"##,
                y = py(c)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="4 3"/>"#,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{PAD:.2}" y="{PAD:.2}" width="{SIZE:.2}" height="{SIZE:.2}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.1}</text>"#, px(v), py(0.0) + 16.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, px(0.0) - 6.0, py(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">confidence</text>"#, total / 2.0, total - 10.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">accuracy</text>"#,
        total / 2.0,
        total / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `<stem>.svg`, `<stem>.csv` and `<stem>.json` next to each other
/// and returns the report with its diagram path filled in.
pub fn render_diagram(d: &ReliabilityDiagram, stem: &Path, title: &str) -> Result<CalibrationReport, CalibrationError> {
    let svg = stem.with_extension("svg");
    write_atomic(&svg, diagram_svg(d, title).as_bytes())?;
    write_atomic(&stem.with_extension("csv"), diagram_csv(d).as_bytes())?;
    let mut report = CalibrationReport::new(d.clone())?;
    report.diagram_path = svg.file_name().map(|n| n.to_string_lossy().into_owned());
    write_atomic(&stem.with_extension("json"), report.to_json()?.as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant_set(conf: f64, n: usize, correct: usize) -> Vec<(f64, bool)> {
        (0..n).map(|i| (conf, i < correct)).collect()
    }

    #[test]
    fn single_prediction() {
        let d = build_diagram(&[(vec![0.95, 0.05], 0)], 10).unwrap();
        let b = &d.bins[9];
        assert_eq!((b.count, b.mean_confidence, b.mean_accuracy), (1, Some(0.95), Some(1.0)));
    }

    #[test]
    fn right_closed_edges() {
        assert_eq!(bin_index(0.1, 10), 1);
        assert_eq!(bin_index(0.0, 10), 1);
        assert_eq!(bin_index(0.7, 10), 7);
        assert_eq!(bin_index(0.7000001, 10), 8);
        assert_eq!(bin_index(1.0, 10), 10);
        assert_eq!(bin_index(0.3, 10), 3);
        assert_eq!(bin_index(0.5, 1), 1);
    }

    #[test]
    fn calibrated_set() {
        let d = build_diagram_from_confidences(&constant_set(0.7, 100, 70), 10).unwrap();
        let b = &d.bins[6];
        assert_eq!((b.count, b.mean_confidence, b.mean_accuracy), (100, Some(0.7), Some(0.7)));
        assert_eq!(ace(&d).unwrap(), 0.0);
        assert_eq!(mce(&d).unwrap(), 0.0);
    }

    #[test]
    fn miscalibrated_set() {
        let d = build_diagram_from_confidences(&constant_set(0.9, 10, 5), 10).unwrap();
        assert_eq!(ace(&d).unwrap(), 0.4);
        assert_eq!(mce(&d).unwrap(), 0.4);
    }

    #[test]
    fn two_bins() {
        // Bin 3: C = 0.3, A = 0.2 (gap 0.1). Bin 8: C = 0.8, A = 0.5 (gap 0.3).
        let mut items = constant_set(0.3, 10, 2);
        items.extend(constant_set(0.8, 4, 2));
        let d = build_diagram_from_confidences(&items, 10).unwrap();
        assert!((ace(&d).unwrap() - 0.2).abs() < 1e-12);
        assert!((mce(&d).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(d.non_empty(), 2);
    }

    #[test]
    fn errors() {
        assert!(matches!(build_diagram(&[], 10), Err(CalibrationError::Empty)));
        assert!(matches!(build_diagram(&[(vec![0.5, 0.6], 0)], 10), Err(CalibrationError::NotSimplex { index: 0 })));
        assert!(matches!(build_diagram(&[(vec![0.5, 0.5], 2)], 10), Err(CalibrationError::Label { .. })));
        assert!(matches!(build_diagram(&[(vec![1.0], 0)], 0), Err(CalibrationError::BinCount)));
        let empty = ReliabilityDiagram {
            m: 2,
            bins: vec![],
        };
        assert!(matches!(ace(&empty), Err(CalibrationError::AllBinsEmpty)));
    }

    #[test]
    fn csv_rows_and_determinism() {
        let d = build_diagram_from_confidences(&constant_set(0.9, 10, 5), 10).unwrap();
        let csv = diagram_csv(&d);
        assert_eq!(csv.lines().count(), 11);
        assert_eq!(csv.lines().nth(9).unwrap(), "9,0.800000,0.900000,10,0.900000,0.500000");
        assert_eq!(csv.lines().nth(1).unwrap(), "1,0.000000,0.100000,0,,");

        let dir = tempfile::tempdir().unwrap();
        let a = render_diagram(&d, &dir.path().join("a"), "map").unwrap();
        let bytes = |ext: &str, stem: &str| std::fs::read(dir.path().join(format!("{stem}.{ext}"))).unwrap();
        render_diagram(&d, &dir.path().join("b"), "map").unwrap();
        assert_eq!(bytes("svg", "a"), bytes("svg", "b"));
        assert_eq!(bytes("csv", "a"), bytes("csv", "b"));
        assert_eq!(a.m_plus, 1);
        assert_eq!(a.diagram_path.as_deref(), Some("a.svg"));
    }

    #[test]
    fn calibrated_bars_touch_diagonal() {
        let d = build_diagram_from_confidences(&constant_set(0.7, 100, 70), 10).unwrap();
        let svg = diagram_svg(&d, "t");
        // Bar top and confidence marker sit at the same height.
        let y = format!("{:.2}", 48.0 + 0.3 * 320.0);
        assert!(svg.contains(&format!(r#"y="{y}""#)));
        assert!(svg.contains(&format!(r#"y1="{y}""#)));
    }

    proptest! {
        #[test]
        fn bins_cover_unit_interval(c in 0.0f64..=1.0, m in 1usize..50) {
            let b = bin_index(c, m);
            prop_assert!((1..=m).contains(&b));
            let (lo, hi) = (edge(b - 1, m), edge(b, m));
            prop_assert!(c <= hi);
            prop_assert!(c > lo || (b == 1 && c >= 0.0));
        }

        #[test]
        fn diagram_invariants(items in proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200), m in 1usize..20, seed in any::<u64>()) {
            let d = build_diagram_from_confidences(&items, m).unwrap();
            prop_assert_eq!(d.total(), items.len());
            for b in &d.bins {
                if b.count > 0 {
                    let (c, a) = (b.mean_confidence.unwrap(), b.mean_accuracy.unwrap());
                    prop_assert!((0.0..=1.0).contains(&c) && (0.0..=1.0).contains(&a));
                }
            }
            let (a, x) = (ace(&d).unwrap(), mce(&d).unwrap());
            prop_assert!(0.0 <= a && a <= x && x <= 1.0);

            let mut shuffled = items.clone();
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            let e = build_diagram_from_confidences(&shuffled, m).unwrap();
            prop_assert_eq!(&e, &d);
            prop_assert_eq!(ace(&e).unwrap().to_bits(), a.to_bits());
        }
    }
}
