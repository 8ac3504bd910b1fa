//! Semantic change scores: the mean learned distance over every pair of
//! occurrences drawn from the two corpora.
//!
//! The metric is factored once (`A = L Lᵀ`) and every occurrence is mapped
//! to `Lᵀ x`, after which a pair costs one squared Euclidean distance. Pair
//! sums are reduced over fixed blocks of first-corpus rows with compensated
//! summation and combined in block order, so the result does not depend on
//! how many threads ran the blocks.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{data_lines, read_text, write_atomic};
use crate::linalg::{dot, squared_euclidean, CompensatedSum};
use crate::metric::{MahalanobisMatrix, MetricMode};
use crate::data::TargetSpec;
use crate::store::EmbeddingStore;

/// First-corpus rows per reduction block.
pub const BLOCK_ROWS: usize = 16;

/// Occurrences of one word in one corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccurrenceSet {
    pub word: String,
    pub corpus_id: String,
    pub embedding_ids: Vec<String>,
}

impl OccurrenceSet {
    pub fn new(word: impl Into<String>, corpus_id: impl Into<String>, embedding_ids: Vec<String>) -> Self {
        Self {
            word: word.into(),
            corpus_id: corpus_id.into(),
            embedding_ids,
        }
    }

    /// All rows of `word` in `corpus_id`, in manifest order.
    pub fn from_store(store: &EmbeddingStore, word: &str, corpus_id: &str) -> Self {
        Self::new(word, corpus_id, store.occurrence_ids(word, corpus_id))
    }

    pub fn count(&self) -> usize {
        self.embedding_ids.len()
    }
}

/// Occurrence-set pairs for each target, derived from the manifest.
pub fn occurrence_pairs(store: &EmbeddingStore, targets: &[TargetSpec]) -> Vec<(OccurrenceSet, OccurrenceSet)> {
    targets
        .iter()
        .map(|t| {
            (
                OccurrenceSet::from_store(store, &t.word, &t.corpus1),
                OccurrenceSet::from_store(store, &t.word, &t.corpus2),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    Full,
    Diagonal,
    BaselineCosine,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Full => "full",
            ScoreMode::Diagonal => "diagonal",
            ScoreMode::BaselineCosine => "baseline-cosine",
        }
    }
}

impl From<MetricMode> for ScoreMode {
    fn from(m: MetricMode) -> Self {
        match m {
            MetricMode::Full => ScoreMode::Full,
            MetricMode::Diagonal => ScoreMode::Diagonal,
        }
    }
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ScoreMode::Full),
            "diagonal" => Ok(ScoreMode::Diagonal),
            "baseline-cosine" => Ok(ScoreMode::BaselineCosine),
            other => Err(Error::Input(format!("unknown score mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeScore {
    pub word: String,
    pub score: f64,
    /// `n1 * n2`.
    pub pair_count: u64,
    pub mode: ScoreMode,
    /// Pairs actually averaged when subsampling was on.
    pub sampled_pairs: Option<u64>,
}

/// Seeded cap on the number of averaged pairs per target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subsample {
    pub max_pairs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScoreOptions {
    pub subsample: Option<Subsample>,
}

/// The metric reduced to a per-row linear map.
#[derive(Debug, Clone)]
pub enum PreparedMetric {
    /// Row-major lower Cholesky factor.
    Full { dim: usize, lower: Vec<f64> },
    /// Square roots of the diagonal weights.
    Diagonal(Vec<f64>),
}

impl PreparedMetric {
    pub fn new(a: &MahalanobisMatrix) -> Result<Self> {
        match a.mode() {
            MetricMode::Full => {
                let f = a.factor()?;
                Ok(PreparedMetric::Full {
                    dim: a.dim(),
                    lower: f.lower,
                })
            }
            MetricMode::Diagonal => Ok(PreparedMetric::Diagonal(
                a.raw().iter().map(|w| w.sqrt()).collect(),
            )),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PreparedMetric::Full { dim, .. } => *dim,
            PreparedMetric::Diagonal(s) => s.len(),
        }
    }

    /// Maps each row `x` of `block` to `Lᵀ x` in place.
    pub fn transform(&self, block: &mut [f64]) {
        match self {
            PreparedMetric::Diagonal(s) => {
                for row in block.chunks_exact_mut(s.len()) {
                    for (x, w) in row.iter_mut().zip(s) {
                        *x *= w;
                    }
                }
            }
            PreparedMetric::Full { dim, lower } => {
                let d = *dim;
                let mut out = vec![0.0; d];
                for row in block.chunks_exact_mut(d) {
                    for (j, o) in out.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for i in j..d {
                            s += lower[i * d + j] * row[i];
                        }
                        *o = s;
                    }
                    row.copy_from_slice(&out);
                }
            }
        }
    }
}

/// Mean of `kernel(x1_i, x2_j)` over all row pairs of two row-major blocks.
///
/// Deterministic blocked reduction; `parallel` only changes who runs the blocks.
pub fn average_pairwise<K>(x1: &[f64], x2: &[f64], dim: usize, kernel: K, parallel: bool) -> f64
where
    K: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    let n1 = x1.len() / dim;
    let n2 = x2.len() / dim;
    let block_sum = |rows: &[f64]| -> f64 {
        let mut acc = CompensatedSum::default();
        for a in rows.chunks_exact(dim) {
            for b in x2.chunks_exact(dim) {
                acc.add(kernel(a, b));
            }
        }
        acc.value()
    };
    let partials: Vec<f64> = if parallel {
        x1.par_chunks(BLOCK_ROWS * dim).map(block_sum).collect()
    } else {
        x1.chunks(BLOCK_ROWS * dim).map(block_sum).collect()
    };
    let total: CompensatedSum = partials.into_iter().collect();
    total.value() / (n1 as f64 * n2 as f64)
}

pub(crate) fn check_sets(s1: &OccurrenceSet, s2: &OccurrenceSet) -> Result<()> {
    if s1.word != s2.word {
        return Err(Error::Scoring {
            word: s1.word.clone(),
            msg: format!("occurrence sets disagree on the word ('{}')", s2.word),
        });
    }
    for s in [s1, s2] {
        if s.embedding_ids.is_empty() {
            return Err(Error::Scoring {
                word: s.word.clone(),
                msg: format!("no occurrences in corpus '{}'", s.corpus_id),
            });
        }
    }
    Ok(())
}

pub(crate) fn gather(store: &EmbeddingStore, set: &OccurrenceSet) -> Result<Vec<f64>> {
    store.gather(&set.embedding_ids).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{} ({}): {msg}", set.word, set.corpus_id)),
        other => other,
    })
}

fn score_prepared(
    prepared: &PreparedMetric,
    mode: ScoreMode,
    s1: &OccurrenceSet,
    s2: &OccurrenceSet,
    store: &EmbeddingStore,
    options: &ScoreOptions,
    parallel: bool,
) -> Result<ChangeScore> {
    check_sets(s1, s2)?;
    let d = store.dim();
    if prepared.dim() != d {
        return Err(Error::Shape {
            expected: prepared.dim(),
            got: d,
        });
    }
    let mut x1 = gather(store, s1)?;
    let mut x2 = gather(store, s2)?;
    prepared.transform(&mut x1);
    prepared.transform(&mut x2);
    let pair_count = (s1.count() as u64) * (s2.count() as u64);
    let (score, sampled_pairs) = match options.subsample {
        Some(sub) if (sub.max_pairs as u64) < pair_count => {
            (subsampled_mean(&x1, &x2, d, sub, squared_euclidean), Some(sub.max_pairs as u64))
        }
        _ => (average_pairwise(&x1, &x2, d, squared_euclidean, parallel), None),
    };
    Ok(ChangeScore {
        word: s1.word.clone(),
        score,
        pair_count,
        mode,
        sampled_pairs,
    })
}

fn subsampled_mean<K>(x1: &[f64], x2: &[f64], dim: usize, sub: Subsample, kernel: K) -> f64
where
    K: Fn(&[f64], &[f64]) -> f64,
{
    let n2 = x2.len() / dim;
    let total = (x1.len() / dim) * n2;
    let mut rng = ChaCha8Rng::seed_from_u64(sub.seed);
    let mut picks = rand::seq::index::sample(&mut rng, total, sub.max_pairs).into_vec();
    picks.sort_unstable();
    let acc: CompensatedSum = picks
        .iter()
        .map(|&k| {
            let (i, j) = (k / n2, k % n2);
            kernel(&x1[i * dim..(i + 1) * dim], &x2[j * dim..(j + 1) * dim])
        })
        .collect();
    acc.value() / picks.len() as f64
}

/// Average pairwise learned distance between the two occurrence sets.
pub fn score_word(
    a: &MahalanobisMatrix,
    s1: &OccurrenceSet,
    s2: &OccurrenceSet,
    store: &EmbeddingStore,
) -> Result<ChangeScore> {
    score_word_with(a, s1, s2, store, &ScoreOptions::default())
}

pub fn score_word_with(
    a: &MahalanobisMatrix,
    s1: &OccurrenceSet,
    s2: &OccurrenceSet,
    store: &EmbeddingStore,
    options: &ScoreOptions,
) -> Result<ChangeScore> {
    let prepared = PreparedMetric::new(a)?;
    score_prepared(&prepared, a.mode().into(), s1, s2, store, options, false)
}

/// Scores many targets on `workers` threads. Results keep input order and
/// each entry carries its own error.
pub fn score_batch(
    a: &MahalanobisMatrix,
    targets: &[(OccurrenceSet, OccurrenceSet)],
    store: &EmbeddingStore,
    workers: usize,
) -> Result<Vec<Result<ChangeScore>>> {
    score_batch_with(a, targets, store, workers, &ScoreOptions::default())
}

pub fn score_batch_with(
    a: &MahalanobisMatrix,
    targets: &[(OccurrenceSet, OccurrenceSet)],
    store: &EmbeddingStore,
    workers: usize,
    options: &ScoreOptions,
) -> Result<Vec<Result<ChangeScore>>> {
    if workers == 0 {
        return Err(Error::Input("worker count must be at least 1".into()));
    }
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let prepared = PreparedMetric::new(a)?;
    let mode = a.mode().into();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Numeric(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        targets
            .par_iter()
            .map(|(s1, s2)| score_prepared(&prepared, mode, s1, s2, store, options, workers > 1))
            .collect()
    }))
}

/// Cosine distance between raw rows: `1 - <a,b> / sqrt(|a|² |b|²)`.
pub(crate) fn cosine_kernel(a: &[f64], b: &[f64]) -> f64 {
    let (ab, na, nb) = (dot(a, b), dot(a, a), dot(b, b));
    (1.0 - ab / (na * nb).sqrt()).clamp(0.0, 2.0)
}

/// Average pairwise cosine distance (APD) baseline.
pub fn apd_cosine_baseline(
    s1: &OccurrenceSet,
    s2: &OccurrenceSet,
    store: &EmbeddingStore,
) -> Result<ChangeScore> {
    check_sets(s1, s2)?;
    let d = store.dim();
    let x1 = gather(store, s1)?;
    let x2 = gather(store, s2)?;
    for (set, block) in [(s1, &x1), (s2, &x2)] {
        for (k, row) in block.chunks_exact(d).enumerate() {
            let n: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 1e-12) {
                return Err(Error::Numeric(format!(
                    "zero-norm embedding '{}' for '{}'",
                    set.embedding_ids[k], set.word
                )));
            }
        }
    }
    Ok(ChangeScore {
        word: s1.word.clone(),
        score: average_pairwise(&x1, &x2, d, cosine_kernel, false),
        pair_count: (s1.count() as u64) * (s2.count() as u64),
        mode: ScoreMode::BaselineCosine,
        sampled_pairs: None,
    })
}

/// `word<TAB>score<TAB>pair_count<TAB>mode` lines, highest score first
/// (ties by word).
pub fn scores_to_text(scores: &[ChangeScore]) -> String {
    let mut sorted: Vec<&ChangeScore> = scores.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.word.cmp(&b.word)));
    sorted
        .iter()
        .map(|s| format!("{}\t{}\t{}\t{}\n", s.word, s.score, s.pair_count, s.mode.as_str()))
        .collect()
}

pub fn parse_scores(text: &str) -> Result<Vec<ChangeScore>> {
    data_lines(text)
        .map(|(line, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::Parse {
                    line,
                    msg: "expected word<TAB>score<TAB>pair_count<TAB>mode".into(),
                });
            }
            let bad = |what: &str| Error::Parse {
                line,
                msg: format!("bad {what}"),
            };
            Ok(ChangeScore {
                word: f[0].to_string(),
                score: f[1].parse().map_err(|_| bad("score"))?,
                pair_count: f[2].parse().map_err(|_| bad("pair count"))?,
                mode: f[3].parse().map_err(|_| bad("mode"))?,
                sampled_pairs: None,
            })
        })
        .collect()
}

pub fn write_scores(path: &Path, scores: &[ChangeScore]) -> Result<()> {
    write_atomic(path, scores_to_text(scores).as_bytes())
}

pub fn read_scores(path: &Path) -> Result<Vec<ChangeScore>> {
    parse_scores(&read_text(path)?)
}
