//! Seeded synthetic corpora with known structure, for demos and tests.
//!
//! * [`planted_wic`]: meaning identity lives on a few planted coordinates,
//!   all other coordinates are noise.
//! * [`planted_drift`]: target words drift between two corpora along a few
//!   change-aware coordinates, by an amount monotone in their gold rating,
//!   while the remaining coordinates carry rating-independent nuisance shifts.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{targets_to_text, Constraint, ConstraintSet, GoldRatings, Label, TargetSpec};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::store::{EmbeddingStore, ManifestRow};

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::Input(e.to_string()))
}

fn pick_dims(rng: &mut ChaCha8Rng, dim: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > dim {
        return Err(Error::Input(format!("cannot plant {k} of {dim} dimensions")));
    }
    let mut dims = sample(rng, dim, k).into_vec();
    dims.sort_unstable();
    Ok(dims)
}

fn signs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WicConfig {
    pub dim: usize,
    pub planted: usize,
    pub words: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Noise scale on non-planted coordinates.
    pub noise: f64,
    /// Noise scale on planted coordinates.
    pub planted_noise: f64,
    /// Magnitude of the sense centers on planted coordinates.
    pub separation: f64,
    pub seed: u64,
}

impl Default for WicConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            planted: 8,
            words: 20,
            train: 2000,
            dev: 500,
            test: 1000,
            noise: 1.0,
            planted_noise: 0.3,
            separation: 1.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WicData {
    pub store: EmbeddingStore,
    pub train: ConstraintSet,
    pub dev: ConstraintSet,
    pub test: ConstraintSet,
    pub planted: Vec<usize>,
}

/// Pairs of occurrences of the same word whose label is decided only by the
/// planted coordinates. Labels alternate, so every split is balanced.
pub fn planted_wic(cfg: &WicConfig) -> Result<WicData> {
    if cfg.words == 0 {
        return Err(Error::Input("need at least one word".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let planted = pick_dims(&mut rng, cfg.dim, cfg.planted)?;
    // Two senses per word, differing on at least two planted coordinates.
    let senses: Vec<[Vec<f64>; 2]> = (0..cfg.words)
        .map(|_| loop {
            let a = signs(&mut rng, cfg.planted);
            let b = signs(&mut rng, cfg.planted);
            if a.iter().zip(&b).filter(|(x, y)| x != y).count() >= 2.min(cfg.planted) {
                break [a, b];
            }
        })
        .collect();
    let mut is_planted = vec![None; cfg.dim];
    for (k, &d) in planted.iter().enumerate() {
        is_planted[d] = Some(k);
    }
    let noise = normal(cfg.noise)?;
    let pnoise = normal(cfg.planted_noise)?;
    let mut store = EmbeddingStore::new(cfg.dim);
    let mut row = vec![0.0; cfg.dim];
    let mut occurrence = |rng: &mut ChaCha8Rng, store: &mut EmbeddingStore, word: usize, sense: &[f64]| {
        for (d, v) in row.iter_mut().enumerate() {
            *v = match is_planted[d] {
                Some(k) => cfg.separation * sense[k] + pnoise.sample(rng),
                None => noise.sample(rng),
            };
        }
        let n = store.len();
        let id = format!("r{n}");
        store
            .push(ManifestRow::new(&id, format!("w{word}"), "wic", format!("s{n}")), &row)
            .map(|_| id)
    };
    let mut split = |rng: &mut ChaCha8Rng, store: &mut EmbeddingStore, n: usize| -> Result<ConstraintSet> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let word = rng.random_range(0..cfg.words);
            let label = if i % 2 == 0 { Label::Same } else { Label::Different };
            let s1 = rng.random_range(0..2usize);
            let s2 = if label.is_same() { s1 } else { 1 - s1 };
            let id1 = occurrence(rng, store, word, &senses[word][s1])?;
            let id2 = occurrence(rng, store, word, &senses[word][s2])?;
            out.push(Constraint::new(id1, id2, label)?);
        }
        Ok(ConstraintSet::new(out))
    };
    let train = split(&mut rng, &mut store, cfg.train)?;
    let dev = split(&mut rng, &mut store, cfg.dev)?;
    let test = split(&mut rng, &mut store, cfg.test)?;
    Ok(WicData {
        store,
        train,
        dev,
        test,
        planted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftConfig {
    pub dim: usize,
    /// Number of change-aware coordinates.
    pub aware: usize,
    pub words: usize,
    /// Occurrences per word per corpus.
    pub occurrences: usize,
    /// Drift along aware coordinates at gold rating 1.
    pub drift_scale: f64,
    /// Scale of rating-independent shifts on the other coordinates.
    pub nuisance: f64,
    pub noise: f64,
    pub aware_noise: f64,
    /// Same/different pairs used to learn the metric.
    pub train_pairs: usize,
    pub dev_pairs: usize,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            aware: 5,
            words: 20,
            occurrences: 30,
            drift_scale: 3.0,
            nuisance: 1.0,
            noise: 1.0,
            aware_noise: 0.3,
            train_pairs: 1000,
            dev_pairs: 300,
            seed: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DriftData {
    pub store: EmbeddingStore,
    pub targets: Vec<TargetSpec>,
    pub gold: GoldRatings,
    pub train: ConstraintSet,
    pub dev: ConstraintSet,
    pub aware: Vec<usize>,
}

/// Target words `t0..` with occurrences in corpora `"1"` and `"2"`, plus
/// labelled pairs of auxiliary words for metric learning.
pub fn planted_drift(cfg: &DriftConfig) -> Result<DriftData> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let aware = pick_dims(&mut rng, cfg.dim, cfg.aware)?;
    let mut is_aware = vec![false; cfg.dim];
    for &d in &aware {
        is_aware[d] = true;
    }
    let unit = normal(1.0)?;
    let noise = normal(cfg.noise)?;
    let anoise = normal(cfg.aware_noise)?;
    let nuisance = normal(cfg.nuisance)?;
    let mut store = EmbeddingStore::new(cfg.dim);

    let jitter = |rng: &mut ChaCha8Rng, x: &mut [f64]| {
        for (d, v) in x.iter_mut().enumerate() {
            *v += if is_aware[d] { anoise.sample(rng) } else { noise.sample(rng) };
        }
    };

    // Evenly spread ratings in a shuffled order.
    let mut ratings: Vec<f64> = (0..cfg.words)
        .map(|i| (i as f64 + 0.5) / cfg.words as f64)
        .collect();
    rand::seq::SliceRandom::shuffle(ratings.as_mut_slice(), &mut rng);

    let mut targets = Vec::with_capacity(cfg.words);
    for (w, &g) in ratings.iter().enumerate() {
        let word = format!("t{w}");
        let base: Vec<f64> = (0..cfg.dim).map(|_| unit.sample(&mut rng)).collect();
        let dir = signs(&mut rng, cfg.dim);
        let shift: Vec<f64> = (0..cfg.dim)
            .map(|d| {
                if is_aware[d] {
                    dir[d] * g * cfg.drift_scale
                } else {
                    nuisance.sample(&mut rng)
                }
            })
            .collect();
        for corpus in ["1", "2"] {
            for _ in 0..cfg.occurrences {
                let mut x = base.clone();
                if corpus == "2" {
                    x.iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
                }
                jitter(&mut rng, &mut x);
                let n = store.len();
                store.push(ManifestRow::new(format!("r{n}"), &word, corpus, format!("s{n}")), &x)?;
            }
        }
        targets.push(TargetSpec::new(word, "1", "2"));
    }
    let gold = GoldRatings::new(targets.iter().map(|t| t.word.clone()).zip(ratings.iter().copied()))?;

    // Pairs: both labels see nuisance shifts; only "different" pairs move
    // along the aware coordinates.
    let pairs = |rng: &mut ChaCha8Rng, store: &mut EmbeddingStore, n: usize, tag: &str| -> Result<ConstraintSet> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let label = if i % 2 == 0 { Label::Same } else { Label::Different };
            let word = format!("{tag}{i}");
            let base: Vec<f64> = (0..cfg.dim).map(|_| unit.sample(rng)).collect();
            let mut x1 = base.clone();
            let mut x2 = base;
            for (d, v) in x2.iter_mut().enumerate() {
                if !is_aware[d] {
                    *v += nuisance.sample(rng);
                } else if label == Label::Different {
                    let m = rng.random_range(0.5..1.0) * cfg.drift_scale;
                    *v += if rng.random_bool(0.5) { m } else { -m };
                }
            }
            jitter(rng, &mut x1);
            jitter(rng, &mut x2);
            let mut ids = Vec::with_capacity(2);
            for x in [&x1, &x2] {
                let n = store.len();
                let id = format!("r{n}");
                store.push(ManifestRow::new(&id, &word, "pairs", format!("s{n}")), x)?;
                ids.push(id);
            }
            out.push(Constraint::new(ids[0].clone(), ids[1].clone(), label)?);
        }
        Ok(ConstraintSet::new(out))
    };
    let train = pairs(&mut rng, &mut store, cfg.train_pairs, "p")?;
    let dev = pairs(&mut rng, &mut store, cfg.dev_pairs, "q")?;
    Ok(DriftData {
        store,
        targets,
        gold,
        train,
        dev,
        aware,
    })
}

impl DriftData {
    /// Writes `store.bin` (+ manifest), `train.tsv`, `dev.tsv`,
    /// `targets.tsv` and `gold.tsv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.store.write(&dir.join("store.bin"))?;
        self.train.write(&dir.join("train.tsv"))?;
        self.dev.write(&dir.join("dev.tsv"))?;
        write_atomic(&dir.join("targets.tsv"), targets_to_text(&self.targets).as_bytes())?;
        write_atomic(&dir.join("gold.tsv"), self.gold.to_text().as_bytes())
    }
}

impl WicData {
    /// Writes `store.bin` (+ manifest), `train.tsv`, `dev.tsv` and `test.tsv`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.store.write(&dir.join("store.bin"))?;
        self.train.write(&dir.join("train.tsv"))?;
        self.dev.write(&dir.join("dev.tsv"))?;
        self.test.write(&dir.join("test.tsv"))
    }
}
