//! Evaluation drivers: WiC accuracy with binomial intervals and SCD rank
//! correlation against gold ratings.

use std::fmt::Write as _;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{ConstraintSet, GoldRatings, Label};
use crate::dimensions::spearman;
use crate::encoder::cosine_distance;
use crate::error::{Error, Result};
use crate::itml::{classify_pair, BoundPair};
use crate::metric::MahalanobisMatrix;
use crate::scoring::ChangeScore;
use crate::store::EmbeddingStore;

/// Name of the interval construction, reported alongside results.
pub const INTERVAL_METHOD: &str = "wald";

/// Normal-approximation interval `p ± z sqrt(p(1-p)/n)`, clipped to `[0, 1]`.
pub fn binomial_ci(successes: u64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 || successes > n {
        return Err(Error::Input(format!("invalid counts: {successes} of {n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Input(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let z = Normal::standard().inverse_cdf(0.5 + confidence / 2.0);
    let p = successes as f64 / n as f64;
    let half = z * (p * (1.0 - p) / n as f64).sqrt();
    Ok(((p - half).max(0.0), (p + half).min(1.0)))
}

/// True when two intervals do not overlap.
pub fn significantly_different(a: (f64, f64), b: (f64, f64)) -> bool {
    a.1 < b.0 || b.1 < a.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct WicEvalResult {
    pub accuracy: f64,
    pub n: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci90_low: f64,
    pub ci90_high: f64,
    /// `(gold, predicted)` per instance, in input order.
    pub per_instance: Vec<(Label, Label)>,
}

impl WicEvalResult {
    pub fn from_predictions(per_instance: Vec<(Label, Label)>) -> Result<Self> {
        if per_instance.is_empty() {
            return Err(Error::Input("empty test set".into()));
        }
        let n = per_instance.len();
        let correct = per_instance.iter().filter(|(g, p)| g == p).count();
        let (ci_low, ci_high) = binomial_ci(correct as u64, n as u64, 0.95)?;
        let (ci90_low, ci90_high) = binomial_ci(correct as u64, n as u64, 0.90)?;
        Ok(Self {
            accuracy: correct as f64 / n as f64,
            n,
            ci_low,
            ci_high,
            ci90_low,
            ci90_high,
            per_instance,
        })
    }

    pub fn correct(&self) -> usize {
        self.per_instance.iter().filter(|(g, p)| g == p).count()
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.ci_low, self.ci_high)
    }

    /// Key-value summary followed by a `gold<TAB>predicted` table.
    pub fn report_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "accuracy = {}", self.accuracy);
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "correct = {}", self.correct());
        let _ = writeln!(out, "interval = {INTERVAL_METHOD}");
        let _ = writeln!(out, "ci95_low = {}", self.ci_low);
        let _ = writeln!(out, "ci95_high = {}", self.ci_high);
        let _ = writeln!(out, "ci90_low = {}", self.ci90_low);
        let _ = writeln!(out, "ci90_high = {}", self.ci90_high);
        out.push_str("\n# gold\tpredicted\n");
        for (g, p) in &self.per_instance {
            let _ = writeln!(out, "{}\t{}", g.as_u8(), p.as_u8());
        }
        out
    }
}

/// Accuracy of the midpoint rule under the learned metric.
pub fn eval_wic(
    a: &MahalanobisMatrix,
    bounds: &BoundPair,
    test: &ConstraintSet,
    store: &EmbeddingStore,
) -> Result<WicEvalResult> {
    if test.is_empty() {
        return Err(Error::Input("empty test set".into()));
    }
    let preds = test
        .resolve(store)?
        .into_iter()
        .map(|(i, j, gold)| Ok((gold, classify_pair(a, bounds, &store.row(i), &store.row(j))?.label)))
        .collect::<Result<Vec<_>>>()?;
    WicEvalResult::from_predictions(preds)
}

/// Predicts "same" iff the raw cosine distance is strictly below `margin`.
pub fn eval_wic_margin_baseline(
    test: &ConstraintSet,
    store: &EmbeddingStore,
    margin: f64,
) -> Result<WicEvalResult> {
    if test.is_empty() {
        return Err(Error::Input("empty test set".into()));
    }
    let preds = test
        .resolve(store)?
        .into_iter()
        .map(|(i, j, gold)| {
            let delta = cosine_distance(&store.row(i), &store.row(j))?;
            let pred = if delta < margin { Label::Same } else { Label::Different };
            Ok((gold, pred))
        })
        .collect::<Result<Vec<_>>>()?;
    WicEvalResult::from_predictions(preds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScdEvalResult {
    pub spearman_r: f64,
    pub n_targets: usize,
    /// `(word, predicted, gold)` in input order.
    pub per_word: Vec<(String, f64, f64)>,
}

impl ScdEvalResult {
    pub fn report_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "spearman_r = {}", self.spearman_r);
        let _ = writeln!(out, "n_targets = {}", self.n_targets);
        out.push_str("\n# word\tpredicted\tgold\n");
        for (w, p, g) in &self.per_word {
            let _ = writeln!(out, "{w}\t{p}\t{g}");
        }
        out
    }
}

/// Spearman correlation between predicted change scores and gold ratings.
pub fn eval_scd(scores: &[ChangeScore], gold: &GoldRatings) -> Result<ScdEvalResult> {
    if scores.len() < 2 {
        return Err(Error::Input("SCD evaluation needs at least two scored words".into()));
    }
    let per_word = scores
        .iter()
        .map(|s| Ok((s.word.clone(), s.score, gold.require(&s.word)?)))
        .collect::<Result<Vec<_>>>()?;
    let pred: Vec<f64> = per_word.iter().map(|p| p.1).collect();
    let truth: Vec<f64> = per_word.iter().map(|p| p.2).collect();
    Ok(ScdEvalResult {
        spearman_r: spearman(&pred, &truth)?,
        n_targets: per_word.len(),
        per_word,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::ScoreMode;

    #[test]
    fn ci_examples() {
        assert_eq!(binomial_ci(10, 10, 0.95).unwrap(), (1.0, 1.0));
        assert_eq!(binomial_ci(0, 10, 0.95).unwrap(), (0.0, 0.0));
        let (lo, hi) = binomial_ci(90, 100, 0.95).unwrap();
        assert!((lo - 0.8412).abs() < 5e-4 && (hi - 0.9588).abs() < 5e-4);
        assert!(binomial_ci(11, 10, 0.95).is_err());
        assert!(binomial_ci(0, 0, 0.95).is_err());
        assert!(binomial_ci(1, 2, 1.0).is_err());
    }

    #[test]
    fn significance_marker() {
        assert!(significantly_different((0.1, 0.2), (0.3, 0.4)));
        assert!(!significantly_different((0.1, 0.35), (0.3, 0.4)));
    }

    fn score(word: &str, s: f64) -> ChangeScore {
        ChangeScore {
            word: word.into(),
            score: s,
            pair_count: 1,
            mode: ScoreMode::Full,
            sampled_pairs: None,
        }
    }

    #[test]
    fn scd_examples() {
        let gold = GoldRatings::parse("a\t0.1\nb\t0.5\nc\t0.3\n").unwrap();
        let same = [score("a", 0.1), score("b", 0.5), score("c", 0.3)];
        assert_eq!(eval_scd(&same, &gold).unwrap().spearman_r, 1.0);
        let rev = [score("a", 0.5), score("b", 0.1), score("c", 0.3)];
        assert_eq!(eval_scd(&rev, &gold).unwrap().spearman_r, -1.0);
        let err = eval_scd(&[score("a", 1.0), score("zz", 2.0)], &gold).unwrap_err();
        assert!(err.to_string().contains("zz"));
    }

    #[test]
    fn empty_predictions_rejected() {
        assert!(WicEvalResult::from_predictions(vec![]).is_err());
    }
}
