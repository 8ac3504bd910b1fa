//! Per-dimension change scores, their rank correlation with gold ratings,
//! and the quartile comparison against metric row importance.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::data::{GoldRatings, TargetSpec};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::linalg::CompensatedSum;
use crate::metric::{row_importance, MahalanobisMatrix};
use crate::scoring::{check_sets, gather, OccurrenceSet};
use crate::store::EmbeddingStore;

/// Labels of the four rank bands, best first.
pub const QUARTILE_LABELS: [&str; 4] = ["Top-25%", "Top-50%", "Bottom-50%", "Bottom-25%"];

/// 1-based fractional ranks; tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Input("spearman needs at least two observations".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input vector".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean absolute per-coordinate difference over all cross-corpus pairs.
pub fn dimension_scores(
    s1: &OccurrenceSet,
    s2: &OccurrenceSet,
    store: &EmbeddingStore,
) -> Result<Vec<f64>> {
    check_sets(s1, s2)?;
    let d = store.dim();
    let x1 = gather(store, s1)?;
    let x2 = gather(store, s2)?;
    let mut acc = vec![CompensatedSum::default(); d];
    for a in x1.chunks_exact(d) {
        for b in x2.chunks_exact(d) {
            for ((s, p), q) in acc.iter_mut().zip(a).zip(b) {
                s.add((p - q).abs());
            }
        }
    }
    let pairs = (s1.count() * s2.count()) as f64;
    Ok(acc.into_iter().map(|s| s.value() / pairs).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionRanking {
    /// Signed correlation per dimension (0.0 where undefined).
    pub correlations: Vec<f64>,
    /// Dimensions by descending |correlation|, ties by index.
    pub order: Vec<usize>,
    /// Dimensions whose scores were constant across targets.
    pub undefined_dims: Vec<usize>,
}

/// Correlates each column of `per_word_scores` with the gold rating of the
/// matching word.
pub fn rank_dimensions(
    words: &[String],
    per_word_scores: &[Vec<f64>],
    gold: &GoldRatings,
) -> Result<DimensionRanking> {
    if words.len() != per_word_scores.len() {
        return Err(Error::Shape {
            expected: words.len(),
            got: per_word_scores.len(),
        });
    }
    if words.len() < 2 {
        return Err(Error::Input("ranking dimensions needs at least two targets".into()));
    }
    let d = per_word_scores[0].len();
    if let Some(row) = per_word_scores.iter().find(|r| r.len() != d) {
        return Err(Error::Shape {
            expected: d,
            got: row.len(),
        });
    }
    let g: Vec<f64> = words.iter().map(|w| gold.require(w)).collect::<Result<_>>()?;
    let outcomes: Vec<Result<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let col: Vec<f64> = per_word_scores.iter().map(|r| r[i]).collect();
            spearman(&col, &g)
        })
        .collect();
    let mut correlations = Vec::with_capacity(d);
    let mut undefined_dims = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => correlations.push(r),
            Err(Error::UndefinedCorrelation(_)) => {
                undefined_dims.push(i);
                correlations.push(0.0);
            }
            Err(e) => return Err(e),
        }
    }
    let order = rank_by(&correlations.iter().map(|c| c.abs()).collect::<Vec<_>>());
    Ok(DimensionRanking {
        correlations,
        order,
        undefined_dims,
    })
}

/// Indices sorted by descending key, ties by index.
fn rank_by(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    order
}

/// Sizes of the four disjoint rank bands; earlier bands absorb `d % 4`.
pub fn quartile_sizes(d: usize) -> [usize; 4] {
    let (base, extra) = (d / 4, d % 4);
    std::array::from_fn(|b| base + usize::from(b < extra))
}

/// Band (0 = Top-25%) of each dimension when ranked by descending `keys`.
pub fn quartile_assignment(keys: &[f64]) -> Vec<usize> {
    let sizes = quartile_sizes(keys.len());
    let mut band = vec![0; keys.len()];
    let mut pos = 0;
    let order = rank_by(keys);
    for (b, &size) in sizes.iter().enumerate() {
        for &dim in &order[pos..pos + size] {
            band[dim] = b;
        }
        pos += size;
    }
    band
}

/// Cell `(i, j)` counts dimensions in awareness band `i` (by |correlation|)
/// and importance band `j`.
pub fn quartile_confusion(importance: &[f64], correlations: &[f64]) -> Result<[[usize; 4]; 4]> {
    if importance.len() != correlations.len() {
        return Err(Error::Shape {
            expected: importance.len(),
            got: correlations.len(),
        });
    }
    if importance.len() < 4 {
        return Err(Error::Input(format!(
            "quartile analysis needs at least 4 dimensions, got {}",
            importance.len()
        )));
    }
    let aware = quartile_assignment(&correlations.iter().map(|c| c.abs()).collect::<Vec<_>>());
    let imp = quartile_assignment(importance);
    let mut m = [[0usize; 4]; 4];
    for (a, i) in aware.iter().zip(&imp) {
        m[*a][*i] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionAnalysisReport {
    pub words: Vec<String>,
    /// Targets x dimensions.
    pub per_dim_scores: Vec<Vec<f64>>,
    pub per_dim_correlation: Vec<f64>,
    pub dim_order: Vec<usize>,
    pub undefined_dims: Vec<usize>,
    pub importance: Vec<f64>,
    pub awareness_quartile: Vec<usize>,
    pub importance_quartile: Vec<usize>,
    pub quartile_confusion: [[usize; 4]; 4],
}

impl DimensionAnalysisReport {
    pub fn build(
        words: Vec<String>,
        per_dim_scores: Vec<Vec<f64>>,
        gold: &GoldRatings,
        importance: Vec<f64>,
    ) -> Result<Self> {
        let ranking = rank_dimensions(&words, &per_dim_scores, gold)?;
        let quartile_confusion = quartile_confusion(&importance, &ranking.correlations)?;
        let abs: Vec<f64> = ranking.correlations.iter().map(|c| c.abs()).collect();
        Ok(Self {
            awareness_quartile: quartile_assignment(&abs),
            importance_quartile: quartile_assignment(&importance),
            words,
            per_dim_scores,
            per_dim_correlation: ranking.correlations,
            dim_order: ranking.order,
            undefined_dims: ranking.undefined_dims,
            importance,
            quartile_confusion,
        })
    }

    /// One line per dimension in `dim_order`:
    /// `dim<TAB>correlation<TAB>importance<TAB>awareness band<TAB>importance band`.
    pub fn table_text(&self) -> String {
        let mut out = String::from("# dim\tcorrelation\timportance\tawareness_quartile\timportance_quartile\n");
        for &i in &self.dim_order {
            let _ = writeln!(
                out,
                "{i}\t{}\t{}\t{}\t{}",
                self.per_dim_correlation[i],
                self.importance[i],
                QUARTILE_LABELS[self.awareness_quartile[i]],
                QUARTILE_LABELS[self.importance_quartile[i]],
            );
        }
        out
    }

    /// Raw per-word, per-dimension scores, one row per target.
    pub fn scores_text(&self) -> String {
        let mut out = String::new();
        for (w, row) in self.words.iter().zip(&self.per_dim_scores) {
            out.push_str(w);
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }

    /// 4x4 matrix, rows awareness bands, columns importance bands.
    pub fn confusion_text(&self) -> String {
        let mut out = String::from("awareness\\importance");
        for l in QUARTILE_LABELS {
            let _ = write!(out, "\t{l}");
        }
        out.push('\n');
        for (label, row) in QUARTILE_LABELS.iter().zip(&self.quartile_confusion) {
            out.push_str(label);
            for c in row {
                let _ = write!(out, "\t{c}");
            }
            out.push('\n');
        }
        out
    }

    /// Writes `dimensions.tsv`, `confusion.txt` and `per_word_scores.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("dimensions.tsv"), self.table_text().as_bytes())?;
        write_atomic(&dir.join("confusion.txt"), self.confusion_text().as_bytes())?;
        write_atomic(&dir.join("per_word_scores.tsv"), self.scores_text().as_bytes())
    }
}

/// Per-dimension scores for every target, then ranking against `gold` and
/// comparison with the row importance of `a`.
pub fn analyze_dimensions(
    a: &MahalanobisMatrix,
    targets: &[TargetSpec],
    store: &EmbeddingStore,
    gold: &GoldRatings,
) -> Result<DimensionAnalysisReport> {
    if a.dim() != store.dim() {
        return Err(Error::Shape {
            expected: a.dim(),
            got: store.dim(),
        });
    }
    let per_dim_scores: Vec<Vec<f64>> = targets
        .par_iter()
        .map(|t| {
            let s1 = OccurrenceSet::from_store(store, &t.word, &t.corpus1);
            let s2 = OccurrenceSet::from_store(store, &t.word, &t.corpus2);
            dimension_scores(&s1, &s2, store)
        })
        .collect::<Result<_>>()?;
    let words = targets.iter().map(|t| t.word.clone()).collect();
    DimensionAnalysisReport::build(words, per_dim_scores, gold, row_importance(a))
}
