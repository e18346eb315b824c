//! Agreement between labelers: pairwise, micro and macro alignment,
//! Procrustes shape similarity, similarity-aware alignment, confidence
//! filtering curves and paired t-tests.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::LabelStore;
use crate::layout::{Algorithm, LayoutSet};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("no labeler pair shares a graph")]
    NoOverlap,
    #[error("point sets differ in size: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("configuration is degenerate (all points coincide)")]
    Degenerate,
    #[error("no layouts for graph {0}")]
    MissingLayouts(String),
    #[error("alpha {0} is outside [0, 1]")]
    BadAlpha(f64),
    #[error("thresholds must be strictly ascending")]
    Thresholds,
    #[error("paired samples need equal lengths of at least 2 (got {0} and {1})")]
    SampleSize(usize, usize),
    #[error("paired differences have zero variance")]
    ZeroVariance,
}

pub type Result<T> = std::result::Result<T, AlignError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairAlignment {
    pub matches: usize,
    pub overlap: usize,
}

impl PairAlignment {
    /// `None` when the two labelers share no graph.
    pub fn alignment(&self) -> Option<f64> {
        (self.overlap > 0).then(|| self.matches as f64 / self.overlap as f64)
    }
}

type Choices = BTreeMap<String, Algorithm>;

fn compare(a: &Choices, b: &Choices, mut same: impl FnMut(&str, Algorithm, Algorithm) -> Result<bool>) -> Result<PairAlignment> {
    let mut out = PairAlignment::default();
    for (g, &ca) in a {
        if let Some(&cb) = b.get(g) {
            out.overlap += 1;
            if same(g, ca, cb)? {
                out.matches += 1;
            }
        }
    }
    Ok(out)
}

pub fn pairwise_alignment(store: &LabelStore, i: &str, j: &str) -> PairAlignment {
    let all = store.choices_by_annotator();
    let empty = Choices::new();
    let a = all.get(i).unwrap_or(&empty);
    let b = all.get(j).unwrap_or(&empty);
    compare(a, b, |_, x, y| Ok(x == y)).expect("exact comparison cannot fail")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelerPair {
    pub i: String,
    pub j: String,
    pub matches: usize,
    pub overlap: usize,
    pub alignment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub labelers: Vec<String>,
    /// Unordered pairs with `i < j`, in lexicographic order.
    pub pairwise: Vec<LabelerPair>,
    pub micro: Option<f64>,
    #[serde(rename = "macro")]
    pub macro_: Option<f64>,
}

impl AlignmentReport {
    pub fn pair(&self, i: &str, j: &str) -> Option<PairAlignment> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.pairwise
            .iter()
            .find(|p| p.i == i && p.j == j)
            .map(|p| PairAlignment {
                matches: p.matches,
                overlap: p.overlap,
            })
    }

    /// Symmetric matrix of pairwise alignments in `labelers` order, with the
    /// diagonal set to 1.
    pub fn matrix(&self) -> Vec<Vec<Option<f64>>> {
        self.labelers
            .iter()
            .map(|i| {
                self.labelers
                    .iter()
                    .map(|j| if i == j { Some(1.0) } else { self.pair(i, j).and_then(|p| p.alignment()) })
                    .collect()
            })
            .collect()
    }
}

fn report_with(
    labelers: &[String],
    choices: &BTreeMap<String, Choices>,
    mut same: impl FnMut(&str, Algorithm, Algorithm) -> Result<bool>,
) -> Result<AlignmentReport> {
    let mut labelers: Vec<String> = labelers.to_vec();
    labelers.sort();
    labelers.dedup();
    let empty = Choices::new();
    let mut pairwise = Vec::new();
    let (mut matches, mut overlap) = (0usize, 0usize);
    let mut defined = Vec::new();
    for (x, i) in labelers.iter().enumerate() {
        for j in &labelers[x + 1..] {
            let p = compare(
                choices.get(i).unwrap_or(&empty),
                choices.get(j).unwrap_or(&empty),
                &mut same,
            )?;
            matches += p.matches;
            overlap += p.overlap;
            if let Some(a) = p.alignment() {
                defined.push(a);
            }
            pairwise.push(LabelerPair {
                i: i.clone(),
                j: j.clone(),
                matches: p.matches,
                overlap: p.overlap,
                alignment: p.alignment(),
            });
        }
    }
    Ok(AlignmentReport {
        labelers,
        pairwise,
        micro: (overlap > 0).then(|| matches as f64 / overlap as f64),
        macro_: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
    })
}

/// Pairwise, micro and macro alignment over a set of labelers; every
/// unordered pair is counted once.
pub fn alignment_report(store: &LabelStore, labelers: &[String]) -> AlignmentReport {
    report_with(labelers, &store.choices_by_annotator(), |_, a, b| Ok(a == b)).expect("exact comparison cannot fail")
}

pub fn micro_alignment(store: &LabelStore, labelers: &[String]) -> Result<f64> {
    alignment_report(store, labelers).micro.ok_or(AlignError::NoOverlap)
}

pub fn macro_alignment(store: &LabelStore, labelers: &[String]) -> Result<f64> {
    alignment_report(store, labelers).macro_.ok_or(AlignError::NoOverlap)
}

/// Pooled alignment between one labeler and each member of a group:
/// `sum_j matches(l, j) / sum_j overlap(l, j)`.
pub fn labeler_vs_group(store: &LabelStore, labeler: &str, group: &[String]) -> Result<f64> {
    let total = group
        .iter()
        .filter(|g| g.as_str() != labeler)
        .map(|g| pairwise_alignment(store, labeler, g))
        .fold(PairAlignment::default(), |acc, p| PairAlignment {
            matches: acc.matches + p.matches,
            overlap: acc.overlap + p.overlap,
        });
    total.alignment().ok_or(AlignError::NoOverlap)
}

/// Centers and scales to unit Frobenius norm.
fn standardize(x: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let n = x.len() as f64;
    let cx = x.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = x.iter().map(|p| p[1]).sum::<f64>() / n;
    let centered: Vec<[f64; 2]> = x.iter().map(|p| [p[0] - cx, p[1] - cy]).collect();
    let norm = centered.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>().sqrt();
    let scale = x
        .iter()
        .map(|p| p[0].abs().max(p[1].abs()))
        .fold(0.0f64, f64::max);
    if !(norm > 1e-12 * scale.max(f64::MIN_POSITIVE)) || !norm.is_finite() {
        return Err(AlignError::Degenerate);
    }
    Ok(centered.into_iter().map(|p| [p[0] / norm, p[1] / norm]).collect())
}

/// Procrustes similarity `S = 1 - d_proc` in `[0, 1]`: both configurations
/// are centered and scaled to unit Frobenius norm, and `S` is the trace of
/// the optimal orthogonal alignment, i.e. the sum of singular values of
/// `X^T Y`. Without reflections the optimum is restricted to rotations.
pub fn procrustes_similarity(x: &[[f64; 2]], y: &[[f64; 2]], allow_reflection: bool) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AlignError::SizeMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(AlignError::TooFewPoints(x.len()));
    }
    let (xs, ys) = (standardize(x)?, standardize(y)?);
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in xs.iter().zip(&ys) {
        a += p[0] * q[0];
        b += p[0] * q[1];
        c += p[1] * q[0];
        d += p[1] * q[1];
    }
    // For a 2x2 matrix, the best rotation attains sqrt((a+d)^2 + (b-c)^2)
    // and the best reflection sqrt((a-d)^2 + (b+c)^2); the larger of the two
    // is the sum of singular values.
    let rotation = (a + d).hypot(b - c);
    let s = if allow_reflection {
        rotation.max((a - d).hypot(b + c))
    } else {
        rotation
    };
    Ok(s.clamp(0.0, 1.0))
}

/// Similarity-aware alignment: two labelers agree on a graph when the
/// Procrustes similarity of their chosen layouts reaches `alpha`. Pairwise
/// similarities are cached per graph.
pub struct SimilarityAlignment<'a> {
    layouts: &'a HashMap<String, LayoutSet>,
    allow_reflection: bool,
    cache: HashMap<(String, Algorithm, Algorithm), f64>,
}

impl<'a> SimilarityAlignment<'a> {
    pub fn new(layouts: &'a HashMap<String, LayoutSet>, allow_reflection: bool) -> Self {
        Self {
            layouts,
            allow_reflection,
            cache: HashMap::new(),
        }
    }

    pub fn similarity(&mut self, graph_id: &str, a: Algorithm, b: Algorithm) -> Result<f64> {
        let set = self
            .layouts
            .get(graph_id)
            .ok_or_else(|| AlignError::MissingLayouts(graph_id.to_string()))?;
        if a == b {
            return Ok(1.0);
        }
        let key = (graph_id.to_string(), a.min(b), a.max(b));
        if let Some(&s) = self.cache.get(&key) {
            return Ok(s);
        }
        let s = procrustes_similarity(&set.get(key.1).coords, &set.get(key.2).coords, self.allow_reflection)?;
        self.cache.insert(key, s);
        Ok(s)
    }

    pub fn pairwise(&mut self, store: &LabelStore, i: &str, j: &str, alpha: f64) -> Result<PairAlignment> {
        check_alpha(alpha)?;
        let all = store.choices_by_annotator();
        let empty = Choices::new();
        compare(all.get(i).unwrap_or(&empty), all.get(j).unwrap_or(&empty), |g, x, y| {
            Ok(self.similarity(g, x, y)? >= alpha)
        })
    }

    pub fn report(&mut self, store: &LabelStore, labelers: &[String], alpha: f64) -> Result<AlignmentReport> {
        check_alpha(alpha)?;
        let choices = store.choices_by_annotator();
        report_with(labelers, &choices, |g, x, y| Ok(self.similarity(g, x, y)? >= alpha))
    }

    pub fn micro(&mut self, store: &LabelStore, labelers: &[String], alpha: f64) -> Result<f64> {
        self.report(store, labelers, alpha)?.micro.ok_or(AlignError::NoOverlap)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(AlignError::BadAlpha(alpha))
    }
}

/// One AI prediction with an optional confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChoice {
    pub graph_id: String,
    pub choice: Algorithm,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub retained_fraction: f64,
    /// `None` when no prediction is retained or none overlaps a human label.
    pub alignment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceCurve {
    pub points: Vec<CurvePoint>,
}

/// For each threshold `t`, keeps predictions with confidence at least `t`
/// and measures their pooled alignment with every human labeler in `store`.
/// Predictions without a confidence are left out entirely.
pub fn confidence_curve(preds: &[ScoredChoice], store: &LabelStore, thresholds: &[f64]) -> Result<ConfidenceCurve> {
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(AlignError::Thresholds);
    }
    let scored: Vec<&ScoredChoice> = preds.iter().filter(|p| p.confidence.is_some()).collect();
    let human_votes: HashMap<&str, Vec<Algorithm>> = store.records().iter().fold(HashMap::new(), |mut m, r| {
        m.entry(r.graph_id.as_str()).or_default().push(r.choice);
        m
    });
    let points = thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<&&ScoredChoice> = scored.iter().filter(|p| p.confidence.unwrap_or(0.0) >= t).collect();
            let (mut matches, mut overlap) = (0usize, 0usize);
            for p in &kept {
                for &h in human_votes.get(p.graph_id.as_str()).into_iter().flatten() {
                    overlap += 1;
                    matches += usize::from(h == p.choice);
                }
            }
            CurvePoint {
                threshold: t,
                retained_fraction: if scored.is_empty() {
                    0.0
                } else {
                    kept.len() as f64 / scored.len() as f64
                },
                alignment: (overlap > 0).then(|| matches as f64 / overlap as f64),
            }
        })
        .collect();
    Ok(ConfidenceCurve { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Paired two-sided t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(AlignError::SampleSize(a.len(), b.len()));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    if var == 0.0 {
        if mean == 0.0 {
            return Ok(TTest { t: 0.0, p: 1.0, df });
        }
        return Err(AlignError::ZeroVariance);
    }
    let t = mean / (var.sqrt() / n.sqrt());
    Ok(TTest {
        t,
        p: student_t_two_sided(t, df as f64),
        df,
    })
}

/// `P(|T| >= |t|)` for Student's t with `nu` degrees of freedom.
pub fn student_t_two_sided(t: f64, nu: f64) -> f64 {
    let x = nu / (nu + t * t);
    statrs::function::beta::beta_reg(nu / 2.0, 0.5, x).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::fixtures::record;
    use Algorithm::*;

    #[test]
    fn pairwise_counts() {
        let store = LabelStore::from_records([
            record("g1", "a", Neato),
            record("g1", "b", Neato),
            record("g2", "a", Fa2),
            record("g2", "b", Fdp),
            record("g3", "a", Fa2),
            record("g4", "b", Fa2),
        ]);
        let p = pairwise_alignment(&store, "a", "b");
        assert_eq!(p, PairAlignment { matches: 1, overlap: 2 });
        assert_eq!(p.alignment(), Some(0.5));
        assert_eq!(pairwise_alignment(&store, "b", "a"), p);
        assert_eq!(pairwise_alignment(&store, "a", "nobody").alignment(), None);
    }

    #[test]
    fn macro_is_mean_of_defined_pairs() {
        // (a,b) 1/5, (a,c) 3/5, (b,c) no overlap.
        let mut recs = Vec::new();
        for g in 0..5 {
            recs.push(record(&format!("x{g}"), "a", Neato));
            recs.push(record(&format!("x{g}"), "b", if g == 0 { Neato } else { Fa2 }));
            recs.push(record(&format!("y{g}"), "a", Spring));
            recs.push(record(&format!("y{g}"), "c", if g < 3 { Spring } else { Pmds }));
        }
        let store = LabelStore::from_records(recs);
        let labelers: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let m = macro_alignment(&store, &labelers).unwrap();
        assert!((m - 0.4).abs() < 1e-15);
        assert_eq!(micro_alignment(&store, &labelers).unwrap(), 4.0 / 10.0);
    }

    #[test]
    fn procrustes_basics() {
        let x = [[0.0, 0.0], [1.0, 0.0], [0.3, 0.8], [2.0, 1.5]];
        assert!((procrustes_similarity(&x, &x, true).unwrap() - 1.0).abs() < 1e-12);
        let mirrored: Vec<[f64; 2]> = x.iter().map(|p| [-p[0], p[1]]).collect();
        assert!((procrustes_similarity(&x, &mirrored, true).unwrap() - 1.0).abs() < 1e-12);
        assert!(procrustes_similarity(&x, &mirrored, false).unwrap() < 0.99);
        assert!(matches!(
            procrustes_similarity(&x, &x[..3], true),
            Err(AlignError::SizeMismatch(4, 3))
        ));
        assert!(matches!(
            procrustes_similarity(&[[1.0, 1.0]; 3], &x[..3], true),
            Err(AlignError::Degenerate)
        ));
    }

    #[test]
    fn procrustes_matches_svd() {
        use nalgebra::Matrix2;
        let x = [[0.1, 0.4], [1.2, -0.3], [0.5, 0.9], [-0.7, 0.2], [0.0, -1.1]];
        let y = [[0.3, 0.1], [-0.4, 0.8], [1.0, 1.0], [0.2, -0.6], [-0.9, 0.05]];
        let (xs, ys) = (standardize(&x).unwrap(), standardize(&y).unwrap());
        let mut m = Matrix2::<f64>::zeros();
        for (p, q) in xs.iter().zip(&ys) {
            for r in 0..2 {
                for c in 0..2 {
                    m[(r, c)] += p[r] * q[c];
                }
            }
        }
        let sv = m.svd(false, false).singular_values;
        let s = procrustes_similarity(&x, &y, true).unwrap();
        assert!((s - (sv[0] + sv[1])).abs() < 1e-12);
    }

    #[test]
    fn t_test_by_hand() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.df, 2);
        let same = paired_t_test(&[1.0, 5.0], &[1.0, 5.0]).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        assert!(matches!(paired_t_test(&[1.0, 2.0], &[0.0, 1.0]), Err(AlignError::ZeroVariance)));
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn confidence_thresholds_must_ascend() {
        let store = LabelStore::new();
        assert!(matches!(confidence_curve(&[], &store, &[0.5, 0.5]), Err(AlignError::Thresholds)));
    }

    #[test]
    fn curve_ignores_missing_confidence() {
        let store = LabelStore::from_records([record("g1", "h", Neato), record("g2", "h", Fa2)]);
        let preds = vec![
            ScoredChoice { graph_id: "g1".into(), choice: Neato, confidence: Some(0.9) },
            ScoredChoice { graph_id: "g2".into(), choice: Neato, confidence: Some(0.2) },
            ScoredChoice { graph_id: "g2".into(), choice: Fa2, confidence: None },
        ];
        let c = confidence_curve(&preds, &store, &[0.0, 0.5, 0.95]).unwrap();
        assert_eq!(c.points[0].retained_fraction, 1.0);
        assert_eq!(c.points[0].alignment, Some(0.5));
        assert_eq!(c.points[1].retained_fraction, 0.5);
        assert_eq!(c.points[1].alignment, Some(1.0));
        assert_eq!(c.points[2].retained_fraction, 0.0);
        assert_eq!(c.points[2].alignment, None);
    }
}
