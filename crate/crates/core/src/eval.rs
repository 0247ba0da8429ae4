//! Verification scoring: enroll x probe similarity matrices, exact FAR/FRR
//! at a threshold, and equal error rate by threshold sweep.
//!
//! A probe is accepted when its score is `>=` the threshold, everywhere.

use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{cosine_similarity, AuthError, Pipeline, DEFAULT_THRESHOLD};
use crate::corpus::Corpus;
use crate::net::Embedding;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate score matrix: {0}")]
    DegenerateMatrix(String),
    #[error("malformed score table at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("inconsistent score matrix: {0}")]
    Shape(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Auth(#[from] AuthError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    /// Row labels.
    pub enroll_ids: Vec<String>,
    /// Column labels.
    pub verify_ids: Vec<String>,
    /// `scores[i][j]`: enrollment `i` against probe `j`.
    pub scores: Vec<Vec<f64>>,
    pub genuine: Vec<Vec<bool>>,
}

/// Subject part of a label such as `"C1"`: trailing digits removed. A label
/// made only of digits is its own subject.
pub fn subject_of(label: &str) -> &str {
    let s = label.trim_end_matches(|c: char| c.is_ascii_digit());
    if s.is_empty() {
        label
    } else {
        s
    }
}

impl ScoreMatrix {
    /// Builds a matrix whose genuine mask marks cells where the row and
    /// column subjects match.
    pub fn new<S: AsRef<str>>(
        enroll_ids: Vec<String>,
        verify_ids: Vec<String>,
        enroll_subjects: &[S],
        verify_subjects: &[S],
        scores: Vec<Vec<f64>>,
    ) -> Result<Self, EvalError> {
        if enroll_subjects.len() != enroll_ids.len() || verify_subjects.len() != verify_ids.len() {
            return Err(EvalError::Shape("one subject per label required".into()));
        }
        let genuine = enroll_subjects
            .iter()
            .map(|e| verify_subjects.iter().map(|v| e.as_ref() == v.as_ref()).collect())
            .collect();
        let m = Self {
            enroll_ids,
            verify_ids,
            scores,
            genuine,
        };
        m.check()?;
        Ok(m)
    }

    /// Subjects inferred from labels with [`subject_of`].
    pub fn from_labels(enroll_ids: Vec<String>, verify_ids: Vec<String>, scores: Vec<Vec<f64>>) -> Result<Self, EvalError> {
        let es: Vec<String> = enroll_ids.iter().map(|l| subject_of(l).to_string()).collect();
        let vs: Vec<String> = verify_ids.iter().map(|l| subject_of(l).to_string()).collect();
        Self::new(enroll_ids, verify_ids, &es, &vs, scores)
    }

    fn check(&self) -> Result<(), EvalError> {
        let (r, c) = (self.enroll_ids.len(), self.verify_ids.len());
        if r == 0 || c == 0 {
            return Err(EvalError::Shape("matrix needs at least one row and one column".into()));
        }
        if self.scores.len() != r || self.scores.iter().any(|row| row.len() != c) {
            return Err(EvalError::Shape(format!("scores are not {r}x{c}")));
        }
        if self.genuine.len() != r || self.genuine.iter().any(|row| row.len() != c) {
            return Err(EvalError::Shape(format!("genuine mask is not {r}x{c}")));
        }
        if self.scores.iter().flatten().any(|s| !s.is_finite()) {
            return Err(EvalError::Shape("scores must be finite".into()));
        }
        Ok(())
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, f64, bool)> + '_ {
        self.scores.iter().enumerate().flat_map(move |(i, row)| {
            row.iter()
                .enumerate()
                .map(move |(j, &s)| (i, j, s, self.genuine[i][j]))
        })
    }

    pub fn genuine_scores(&self) -> Vec<f64> {
        self.cells().filter(|c| c.3).map(|c| c.2).collect()
    }

    pub fn impostor_scores(&self) -> Vec<f64> {
        self.cells().filter(|c| !c.3).map(|c| c.2).collect()
    }

    /// Parses whitespace-separated text: a header of column labels (with an
    /// optional leading corner token), then one line per row holding the row
    /// label and its scores. A trailing `*` on a score is ignored. Blank
    /// lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or(EvalError::Parse {
            line: 1,
            message: "empty table".into(),
        })?;
        let mut cols: Vec<String> = header.split_whitespace().map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut scores = Vec::new();
        for (ln, line) in lines {
            let mut toks = line.split_whitespace();
            let label = toks.next().unwrap().to_string();
            let vals = toks
                .map(|t| {
                    t.trim_end_matches('*').parse::<f64>().map_err(|e| EvalError::Parse {
                        line: ln,
                        message: format!("{t:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(label);
            scores.push(vals);
        }
        let width = scores.first().map(Vec::len).unwrap_or(0);
        if cols.len() == width + 1 {
            cols.remove(0);
        }
        if cols.len() != width {
            return Err(EvalError::Parse {
                line: hline,
                message: format!("{} column labels for {width} score columns", cols.len()),
            });
        }
        if let Some(i) = scores.iter().position(|r| r.len() != width) {
            return Err(EvalError::Parse {
                line: hline + i + 1,
                message: "row width differs from the first row".into(),
            });
        }
        Self::from_labels(rows, cols, scores)
    }

    /// Tab-separated table in the [`parse`](Self::parse) format. With a
    /// threshold, misclassified cells are suffixed with `*`.
    pub fn to_table(&self, decimals: usize, mark_at: Option<f64>) -> String {
        let mut out = String::from("Enroll\\Verify");
        for c in &self.verify_ids {
            let _ = write!(out, "\t{c}");
        }
        out.push('\n');
        for (i, row) in self.scores.iter().enumerate() {
            out.push_str(&self.enroll_ids[i]);
            for (j, s) in row.iter().enumerate() {
                let mark = match mark_at {
                    Some(t) if is_error(*s, self.genuine[i][j], t) => "*",
                    _ => "",
                };
                let _ = write!(out, "\t{s:.decimals$}{mark}");
            }
            out.push('\n');
        }
        out
    }
}

fn is_error(score: f64, genuine: bool, threshold: f64) -> bool {
    (score >= threshold) != genuine
}

/// Misclassified cells at `threshold`: genuine cells below it and impostor
/// cells at or above it, as (row, column) label pairs in row-major order.
pub fn flagged_cells(m: &ScoreMatrix, threshold: f64) -> Vec<(String, String)> {
    m.cells()
        .filter(|&(_, _, s, g)| is_error(s, g, threshold))
        .map(|(i, j, _, _)| (m.enroll_ids[i].clone(), m.verify_ids[j].clone()))
        .collect()
}

/// Error counts at one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub false_accepts: u64,
    pub impostors: u64,
    pub false_rejects: u64,
    pub genuines: u64,
}

fn ratio(num: u64, den: u64) -> Ratio<u64> {
    if den == 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(num, den)
    }
}

impl ErrorCounts {
    /// 0 when there are no impostor attempts.
    pub fn far(&self) -> Ratio<u64> {
        ratio(self.false_accepts, self.impostors)
    }

    /// 0 when there are no genuine attempts.
    pub fn frr(&self) -> Ratio<u64> {
        ratio(self.false_rejects, self.genuines)
    }
}

pub fn error_counts(m: &ScoreMatrix, threshold: f64) -> ErrorCounts {
    let mut c = ErrorCounts {
        false_accepts: 0,
        impostors: 0,
        false_rejects: 0,
        genuines: 0,
    };
    for (_, _, s, g) in m.cells() {
        if g {
            c.genuines += 1;
            c.false_rejects += u64::from(s < threshold);
        } else {
            c.impostors += 1;
            c.false_accepts += u64::from(s >= threshold);
        }
    }
    c
}

/// Exact `(far, frr)` at `threshold`.
pub fn far_frr(m: &ScoreMatrix, threshold: f64) -> (Ratio<u64>, Ratio<u64>) {
    let c = error_counts(m, threshold);
    (c.far(), c.frr())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EerConvention {
    /// Some swept threshold has FAR = FRR; the smallest such threshold is
    /// reported.
    ExactCrossing,
    /// No threshold equalizes the rates; EER is (FAR + FRR) / 2 at the
    /// smallest threshold minimizing |FAR - FRR|.
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
    pub counts: ErrorCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Ascending: a sentinel below the lowest score, every distinct score,
    /// and a sentinel just above the highest.
    pub thresholds: Vec<f64>,
    pub far_curve: Vec<f64>,
    pub frr_curve: Vec<f64>,
    pub eer: f64,
    /// EER as a reduced fraction, e.g. `"1/5"`.
    pub eer_fraction: String,
    pub eer_threshold: f64,
    /// Every threshold `t` with `lo < t <= hi` yields the same FAR and FRR as
    /// `eer_threshold`.
    pub eer_interval: (f64, f64),
    pub convention: EerConvention,
    pub n_genuine: usize,
    pub n_impostor: usize,
    /// Lookup at the named operating threshold.
    pub at: OperatingPoint,
}

fn next_up(x: f64) -> f64 {
    if x.is_nan() || x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let b = x.to_bits();
    f64::from_bits(if x > 0.0 { b + 1 } else { b - 1 })
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

fn abs_diff(a: Ratio<u64>, b: Ratio<u64>) -> Ratio<u64> {
    if a >= b {
        a - b
    } else {
        b - a
    }
}

/// Sweeps thresholds and reports the EER, with FAR/FRR looked up at
/// [`DEFAULT_THRESHOLD`].
pub fn compute_eer(m: &ScoreMatrix) -> Result<EvalReport, EvalError> {
    compute_eer_at(m, DEFAULT_THRESHOLD)
}

pub fn compute_eer_at(m: &ScoreMatrix, operating_threshold: f64) -> Result<EvalReport, EvalError> {
    m.check()?;
    let gen = m.genuine_scores();
    let imp = m.impostor_scores();
    if gen.is_empty() || imp.is_empty() {
        return Err(EvalError::DegenerateMatrix(format!(
            "{} genuine and {} impostor scores; both must be non-empty",
            gen.len(),
            imp.len()
        )));
    }
    let mut distinct: Vec<f64> = gen.iter().chain(&imp).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = Vec::with_capacity(distinct.len() + 2);
    thresholds.push(next_down(distinct[0]));
    thresholds.extend_from_slice(&distinct);
    thresholds.push(next_up(*distinct.last().unwrap()));

    let rates: Vec<(Ratio<u64>, Ratio<u64>)> = thresholds.iter().map(|&t| far_frr(m, t)).collect();
    let (best, convention, eer) = match rates.iter().position(|(a, r)| a == r) {
        Some(k) => (k, EerConvention::ExactCrossing, rates[k].0),
        None => {
            let mut k = 0;
            for (i, &(a, r)) in rates.iter().enumerate() {
                if abs_diff(a, r) < abs_diff(rates[k].0, rates[k].1) {
                    k = i;
                }
            }
            (k, EerConvention::Midpoint, (rates[k].0 + rates[k].1) / 2)
        }
    };
    // Rates are constant on (thresholds[k-1], thresholds[k]]; extend over
    // following thresholds with identical rates.
    let lo = if best == 0 { f64::NEG_INFINITY } else { thresholds[best - 1] };
    let mut hi_idx = best;
    while hi_idx + 1 < thresholds.len() && rates[hi_idx + 1] == rates[best] {
        hi_idx += 1;
    }
    let counts = error_counts(m, operating_threshold);
    let to_f = |r: Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
    Ok(EvalReport {
        far_curve: rates.iter().map(|r| to_f(r.0)).collect(),
        frr_curve: rates.iter().map(|r| to_f(r.1)).collect(),
        eer: to_f(eer),
        eer_fraction: format!("{}/{}", eer.numer(), eer.denom()),
        eer_threshold: thresholds[best],
        eer_interval: (lo, thresholds[hi_idx]),
        convention,
        n_genuine: gen.len(),
        n_impostor: imp.len(),
        at: OperatingPoint {
            threshold: operating_threshold,
            far: to_f(counts.far()),
            frr: to_f(counts.frr()),
            counts,
        },
        thresholds,
    })
}

/// A template with its row/column label and subject.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding<T> {
    pub label: String,
    pub subject: String,
    pub embedding: Embedding<T>,
}

/// Cosine score of every enrollment against every probe.
pub fn compute_matrix<T: Scalar>(
    enrollments: &[LabeledEmbedding<T>],
    probes: &[LabeledEmbedding<T>],
) -> Result<ScoreMatrix, EvalError> {
    if enrollments.is_empty() || probes.is_empty() {
        return Err(EvalError::Shape("need at least one enrollment and one probe".into()));
    }
    let scores = enrollments
        .iter()
        .map(|e| {
            probes
                .iter()
                .map(|p| cosine_similarity(&e.embedding, &p.embedding))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let es: Vec<&str> = enrollments.iter().map(|e| e.subject.as_str()).collect();
    let vs: Vec<&str> = probes.iter().map(|p| p.subject.as_str()).collect();
    ScoreMatrix::new(
        enrollments.iter().map(|e| e.label.clone()).collect(),
        probes.iter().map(|p| p.label.clone()).collect(),
        &es,
        &vs,
        scores,
    )
}

/// Enrolls every user's `enroll_session`, probes with every user's
/// `verify_session`, and evaluates the resulting matrix. Rows and columns
/// follow sorted user order; labels are `{user}.{session}`.
pub fn end_to_end_eval<T: Scalar>(
    corpus: &Corpus<f64>,
    pipeline: &Pipeline<T>,
    enroll_session: u32,
    verify_session: u32,
) -> Result<(EvalReport, ScoreMatrix), EvalError> {
    let users = corpus.users();
    if users.is_empty() {
        return Err(EvalError::Protocol("corpus is empty".into()));
    }
    let embed = |session: u32| -> Result<Vec<LabeledEmbedding<T>>, EvalError> {
        users
            .iter()
            .map(|u| {
                let entry = corpus
                    .get(u, session)
                    .ok_or_else(|| EvalError::Protocol(format!("user {u} has no session {session}")))?;
                Ok(LabeledEmbedding {
                    label: format!("{u}.{session}"),
                    subject: u.clone(),
                    embedding: pipeline.process_recording(&entry.recording)?,
                })
            })
            .collect()
    };
    let enroll = embed(enroll_session)?;
    let probes = embed(verify_session)?;
    let matrix = compute_matrix(&enroll, &probes)?;
    let report = compute_eer(&matrix)?;
    Ok((report, matrix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const STUDY: &str = include_str!("../fixtures/study_scores.tsv");

    fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    fn two_class(gen: &[f64], imp: &[f64]) -> ScoreMatrix {
        // One row per score: genuine cells share the subject "g".
        let n = gen.len() + imp.len();
        let scores: Vec<Vec<f64>> = gen.iter().chain(imp).map(|&s| vec![s]).collect();
        let subj: Vec<&str> = (0..n).map(|i| if i < gen.len() { "g" } else { "x" }).collect();
        ScoreMatrix::new(
            (0..n).map(|i| format!("r{i}")).collect(),
            vec!["p".into()],
            &subj,
            &["g"],
            scores,
        )
        .unwrap()
    }

    #[test]
    fn study_table_parses() {
        let m = ScoreMatrix::parse(STUDY).unwrap();
        assert_eq!(m.enroll_ids, ["A1", "B1", "C1", "D1", "E1"]);
        assert_eq!(m.verify_ids, ["A2", "B2", "C2", "D2", "E2"]);
        assert_eq!(m.genuine_scores(), [0.8119, 0.8551, 0.7987, 0.8169, 0.8494]);
        assert_eq!(m.impostor_scores().len(), 20);
        assert_eq!(m.scores[3][0], 0.8440);
    }

    #[test]
    fn study_rates_at_point_eight() {
        let m = ScoreMatrix::parse(STUDY).unwrap();
        let c = error_counts(&m, 0.8);
        assert_eq!((c.false_accepts, c.impostors, c.false_rejects, c.genuines), (4, 20, 1, 5));
        assert_eq!(far_frr(&m, 0.8), (Ratio::new(4, 20), Ratio::new(1, 5)));
        assert_eq!(far_frr(&m, -1.0), (Ratio::from_integer(1), Ratio::from_integer(0)));
        assert_eq!(far_frr(&m, next_up(0.8551)), (Ratio::from_integer(0), Ratio::from_integer(1)));
    }

    #[test]
    fn study_eer() {
        let m = ScoreMatrix::parse(STUDY).unwrap();
        let r = compute_eer(&m).unwrap();
        assert_eq!(r.eer_fraction, "1/5");
        assert_eq!(r.eer, 0.2);
        assert_eq!(r.convention, EerConvention::ExactCrossing);
        assert_eq!(r.eer_threshold, 0.8034);
        assert_eq!(r.eer_interval, (0.7987, 0.8034));
        assert!(r.eer_interval.0 < 0.8 && 0.8 <= r.eer_interval.1);
        assert_eq!(r.at.threshold, 0.8);
        assert_eq!((r.at.far, r.at.frr), (0.2, 0.2));
        assert_eq!(r.thresholds.len(), 26);
    }

    #[test]
    fn study_flags() {
        let m = ScoreMatrix::parse(STUDY).unwrap();
        assert_eq!(
            flagged_cells(&m, 0.8),
            pairs(&[("C1", "A2"), ("C1", "C2"), ("C1", "E2"), ("D1", "A2"), ("D1", "B2")])
        );
    }

    #[test]
    fn table_round_trip() {
        let m = ScoreMatrix::parse(STUDY).unwrap();
        let marked = m.to_table(4, Some(0.8));
        assert_eq!(marked.matches('*').count(), 5);
        assert_eq!(ScoreMatrix::parse(&marked).unwrap(), m);
        let bare = "A2 B2\nA1 0.9 0.1\nB1 0.2 0.8\n";
        let m2 = ScoreMatrix::parse(bare).unwrap();
        assert_eq!(m2.genuine, [[true, false], [false, true]]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(ScoreMatrix::parse(""), Err(EvalError::Parse { .. })));
        assert!(matches!(ScoreMatrix::parse("A2 B2\nA1 0.9 x\n"), Err(EvalError::Parse { line: 2, .. })));
        assert!(matches!(ScoreMatrix::parse("A2 B2\nA1 0.9 0.1\nB1 0.2\n"), Err(EvalError::Parse { .. })));
        assert!(matches!(ScoreMatrix::parse("A2 B2 C2 D2\nA1 0.9 0.1\n"), Err(EvalError::Parse { .. })));
    }

    #[test]
    fn separated_and_tied() {
        let r = compute_eer(&two_class(&[0.9, 0.95], &[0.1, 0.2])).unwrap();
        assert_eq!(r.eer, 0.0);
        assert!(r.eer_interval.0 == 0.2 && r.eer_interval.1 == 0.9);
        let r = compute_eer(&two_class(&[0.5], &[0.5])).unwrap();
        assert_eq!(r.eer, 0.5);
        assert_eq!(r.convention, EerConvention::Midpoint);
    }

    /// Exhaustive oracle: every distinct score plus one point beyond each
    /// end, with rates compared by integer cross-multiplication.
    fn oracle_eer(gen: &[f64], imp: &[f64]) -> f64 {
        let mut s: Vec<f64> = gen.iter().chain(imp).copied().collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        let mut cands = vec![s[0] - 1.0];
        cands.extend(s.iter().copied());
        cands.push(s[s.len() - 1] + 1.0);
        let (ni, ng) = (imp.len() as i64, gen.len() as i64);
        // (far * ni * ng, frr * ni * ng)
        let scaled: Vec<(i64, i64)> = cands
            .iter()
            .map(|&t| {
                let fa = imp.iter().filter(|&&x| x >= t).count() as i64;
                let fr = gen.iter().filter(|&&x| x < t).count() as i64;
                (fa * ng, fr * ni)
            })
            .collect();
        let denom = (ni * ng) as f64;
        if let Some(&(a, _)) = scaled.iter().find(|(a, r)| a == r) {
            return a as f64 / denom;
        }
        let best = scaled.iter().min_by_key(|(a, r)| (a - r).abs()).unwrap();
        (best.0 + best.1) as f64 / (2.0 * denom)
    }

    #[test]
    fn degenerate_matrices() {
        let only_gen = ScoreMatrix::from_labels(vec!["A1".into()], vec!["A2".into()], vec![vec![0.9]]).unwrap();
        assert_eq!(only_gen.genuine, [[true]]);
        assert!(matches!(compute_eer(&only_gen), Err(EvalError::DegenerateMatrix(_))));
        assert!(ScoreMatrix::from_labels(vec!["A1".into()], vec!["A2".into()], vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn identical_probes_give_unit_diagonal() {
        let e = |v: Vec<f64>, s: &str| LabeledEmbedding {
            label: format!("{s}1"),
            subject: s.into(),
            embedding: Embedding::from_raw(v, "m".into()),
        };
        let set = vec![e(vec![1.0, 0.2, 0.0], "A"), e(vec![0.0, 1.0, 0.3], "B"), e(vec![0.3, 0.0, 1.0], "C")];
        let m = compute_matrix(&set, &set).unwrap();
        for i in 0..3 {
            assert!((m.scores[i][i] - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.genuine_scores().len(), 3);
        assert_eq!(compute_eer(&m).unwrap().eer, 0.0);
        let mut foreign = set.clone();
        foreign[1].embedding.model_id = "other".into();
        assert!(matches!(compute_matrix(&set, &foreign), Err(EvalError::Auth(AuthError::ModelMismatch { .. }))));
    }

    fn scores_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        // Coarse grid so ties occur often.
        let s = (-20i32..=20).prop_map(|k| k as f64 / 20.0);
        (prop::collection::vec(s.clone(), 1..8), prop::collection::vec(s, 1..12))
    }

    proptest! {
        #[test]
        fn matches_exhaustive_oracle((gen, imp) in scores_strategy()) {
            let r = compute_eer(&two_class(&gen, &imp)).unwrap();
            prop_assert!((r.eer - oracle_eer(&gen, &imp)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.eer));
            for w in r.far_curve.windows(2) { prop_assert!(w[1] <= w[0]); }
            for w in r.frr_curve.windows(2) { prop_assert!(w[1] >= w[0]); }
        }

        #[test]
        fn invariant_under_monotone_transform((gen, imp) in scores_strategy()) {
            let f = |x: &f64| (3.0 * x).exp() + x * x * x;
            let a = compute_eer(&two_class(&gen, &imp)).unwrap();
            let g2: Vec<f64> = gen.iter().map(f).collect();
            let i2: Vec<f64> = imp.iter().map(f).collect();
            let b = compute_eer(&two_class(&g2, &i2)).unwrap();
            prop_assert_eq!(a.eer_fraction, b.eer_fraction);
            prop_assert_eq!(a.far_curve, b.far_curve);
        }

        #[test]
        fn invariant_under_row_and_column_permutation(
            rp in Just(vec![0usize, 1, 2, 3, 4]).prop_shuffle(),
            cp in Just(vec![0usize, 1, 2, 3, 4]).prop_shuffle(),
        ) {
            let m = ScoreMatrix::parse(STUDY).unwrap();
            let p = ScoreMatrix::from_labels(
                rp.iter().map(|&i| m.enroll_ids[i].clone()).collect(),
                cp.iter().map(|&j| m.verify_ids[j].clone()).collect(),
                rp.iter().map(|&i| cp.iter().map(|&j| m.scores[i][j]).collect()).collect(),
            ).unwrap();
            let (a, b) = (compute_eer(&m).unwrap(), compute_eer(&p).unwrap());
            prop_assert_eq!(a.eer_fraction, b.eer_fraction);
            prop_assert_eq!(a.eer_threshold, b.eer_threshold);
        }
    }
}
