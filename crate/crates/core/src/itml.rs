//! Information-theoretic metric learning.
//!
//! Learns a Mahalanobis matrix `A` that stays as close as possible (in
//! LogDet / Gaussian KL divergence) to a reference `A0` while pushing
//! same-meaning pairs under an upper bound `u` and different-meaning pairs
//! over a lower bound `l`. Each constraint is handled by a Bregman
//! projection, a rank-one update `A <- A + beta (A z)(A z)ᵀ` with
//! `z = w1 - w2`, visited cyclically until the dual variables settle.
//!
//! Bounds come from nearest-rank percentiles of the initial distances and
//! the slack weight `gamma` is picked on held-out pairs by [`slack_search`].

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ConstraintSet, Label};
use crate::error::{Error, Result};
use crate::io::{read_text, sidecar, write_atomic};
use crate::metric::{MahalanobisMatrix, MetricMode};
use crate::store::EmbeddingStore;

/// Smallest tolerated `|1 - delta * alpha * d|` in a projection.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Upper bound for same-meaning pairs and lower bound for different-meaning pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub upper: f64,
    pub lower: f64,
}

impl BoundPair {
    pub fn new(upper: f64, lower: f64) -> Result<Self> {
        for (name, v) in [("upper", upper), ("lower", lower)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Input(format!("{name} bound must be positive and finite, got {v}")));
            }
        }
        Ok(Self { upper, lower })
    }

    /// Decision threshold between the two bounds.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.upper + self.lower)
    }

    /// True when `u > l`, i.e. the classes overlap under the initial metric.
    pub fn overlapping(&self) -> bool {
        self.upper > self.lower
    }
}

/// Percentile anchoring for [`estimate_bounds_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPercentiles {
    /// Percentile of same-meaning distances used as `u`.
    pub similar: f64,
    /// Percentile of different-meaning distances used as `l`.
    pub dissimilar: f64,
}

impl BoundPercentiles {
    /// `u` low in the same-meaning distances, `l` high in the
    /// different-meaning ones, so the bounds leave a margin between classes.
    pub fn classical() -> Self {
        Self {
            similar: 5.0,
            dissimilar: 95.0,
        }
    }
}

impl Default for BoundPercentiles {
    fn default() -> Self {
        Self {
            similar: 95.0,
            dissimilar: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundWarning {
    /// An input list was constant, so its percentile carries no spread.
    Degenerate,
    /// `u > l`; fitting proceeds with the slack formulation.
    Overlapping { upper: f64, lower: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundEstimate {
    pub bounds: BoundPair,
    pub warnings: Vec<BoundWarning>,
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 * n)` of the sorted list.
pub fn nearest_rank(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("percentile of an empty list".into()));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::Input(format!("percentile {percentile} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// `u` = 95th percentile of same-meaning distances, `l` = 5th percentile of
/// different-meaning distances.
pub fn estimate_bounds(distances_pos: &[f64], distances_neg: &[f64]) -> Result<BoundEstimate> {
    estimate_bounds_with(distances_pos, distances_neg, BoundPercentiles::default())
}

pub fn estimate_bounds_with(
    distances_pos: &[f64],
    distances_neg: &[f64],
    percentiles: BoundPercentiles,
) -> Result<BoundEstimate> {
    if distances_pos.is_empty() || distances_neg.is_empty() {
        return Err(Error::Input(
            "bound estimation needs at least one same and one different pair".into(),
        ));
    }
    if let Some(v) = distances_pos.iter().chain(distances_neg).find(|v| !(**v >= 0.0)) {
        return Err(Error::Input(format!("distances must be non-negative, got {v}")));
    }
    let upper = nearest_rank(distances_pos, percentiles.similar)?;
    let lower = nearest_rank(distances_neg, percentiles.dissimilar)?;
    let bounds = BoundPair::new(upper, lower)?;
    let mut warnings = Vec::new();
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(distances_pos) || constant(distances_neg) {
        warnings.push(BoundWarning::Degenerate);
    }
    if bounds.overlapping() {
        warnings.push(BoundWarning::Overlapping { upper, lower });
    }
    Ok(BoundEstimate { bounds, warnings })
}

/// Distances of every constraint pair under `a`, split by label.
pub fn constraint_distances(
    store: &EmbeddingStore,
    constraints: &ConstraintSet,
    a: &MahalanobisMatrix,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, j, label) in constraints.resolve(store)? {
        let d = a.distance(&store.row(i), &store.row(j))?;
        if label.is_same() {
            pos.push(d);
        } else {
            neg.push(d);
        }
    }
    Ok((pos, neg))
}

/// How often positive definiteness is verified with a full Cholesky.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdCheck {
    /// Scalar certificate per update (`1 - delta*alpha*d > 0`) plus a
    /// Cholesky at the end of every sweep.
    #[default]
    PerSweep,
    /// Cholesky after every accepted update. O(d³) per projection.
    EveryUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItmlConfig {
    pub gamma: f64,
    pub max_sweeps: usize,
    pub convergence_tol: f64,
    pub seed: u64,
    /// Reshuffle the visiting order every sweep (seeded). Off: dataset order.
    pub shuffle: bool,
    pub pd_check: PdCheck,
}

impl Default for ItmlConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            max_sweeps: 1000,
            convergence_tol: 1e-3,
            seed: 0,
            shuffle: false,
            pd_check: PdCheck::PerSweep,
        }
    }
}

impl ItmlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::Input(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Input("max_sweeps must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Input("convergence_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitWarning {
    /// A different-meaning pair has zero distance; its projection is undefined.
    ZeroDistanceDissimilar { constraint: usize },
    /// The projection denominator vanished; the step was dropped.
    DenominatorClamped { constraint: usize },
}

/// Solver state. `lambdas` and `slacks` are indexed like the constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct ItmlState {
    pub matrix: MahalanobisMatrix,
    pub lambdas: Vec<f64>,
    pub slacks: Vec<f64>,
    pub sweep_count: usize,
    pub converged: bool,
    /// Rank-one updates actually applied.
    pub updates: usize,
    /// Largest `|Δλ|` in the last sweep.
    pub last_dual_change: f64,
    pub warnings: Vec<FitWarning>,
}

/// Difference vectors and labels, decoupled from any store.
#[derive(Debug, Clone)]
pub struct ItmlProblem {
    dim: usize,
    diffs: Vec<f64>,
    labels: Vec<Label>,
}

impl ItmlProblem {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            diffs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, w1: &[f64], w2: &[f64], label: Label) -> Result<()> {
        for w in [w1, w2] {
            if w.len() != self.dim {
                return Err(Error::Shape {
                    expected: self.dim,
                    got: w.len(),
                });
            }
        }
        self.diffs.extend(w1.iter().zip(w2).map(|(a, b)| a - b));
        self.labels.push(label);
        Ok(())
    }

    pub fn from_store(store: &EmbeddingStore, constraints: &ConstraintSet) -> Result<Self> {
        let mut p = Self::new(store.dim());
        let mut a = vec![0.0; store.dim()];
        let mut b = vec![0.0; store.dim()];
        for (i, j, label) in constraints.resolve(store)? {
            store.row_into(i, &mut a);
            store.row_into(j, &mut b);
            p.push(&a, &b, label)?;
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diff(&self, i: usize) -> &[f64] {
        &self.diffs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }
}

/// What a single projection did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Applied { alpha: f64, beta: f64 },
    /// `alpha == 0`: the constraint is inactive.
    Inactive,
    Skipped,
}

/// Cyclic Bregman projection solver.
#[derive(Debug)]
pub struct ItmlSolver<'p> {
    problem: &'p ItmlProblem,
    bounds: BoundPair,
    config: ItmlConfig,
    a: Vec<f64>,
    lambdas: Vec<f64>,
    slacks: Vec<f64>,
    scratch: Vec<f64>,
    updates: usize,
    sweeps: usize,
    warned: Vec<bool>,
    warnings: Vec<FitWarning>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl<'p> ItmlSolver<'p> {
    pub fn new(
        problem: &'p ItmlProblem,
        bounds: BoundPair,
        config: ItmlConfig,
        a0: &MahalanobisMatrix,
    ) -> Result<Self> {
        config.validate()?;
        if a0.dim() != problem.dim() {
            return Err(Error::Shape {
                expected: problem.dim(),
                got: a0.dim(),
            });
        }
        let pd = a0.check_positive_definite()?;
        if !pd.positive_definite {
            return Err(Error::NotPositiveDefinite { pivot: pd.min_pivot });
        }
        let n = problem.len();
        let slacks = (0..n)
            .map(|i| if problem.label(i).is_same() { bounds.upper } else { bounds.lower })
            .collect();
        Ok(Self {
            problem,
            bounds,
            config,
            a: a0.to_dense(),
            lambdas: vec![0.0; n],
            slacks,
            scratch: vec![0.0; problem.dim()],
            updates: 0,
            sweeps: 0,
            warned: vec![false; n],
            warnings: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            order: (0..n).collect(),
        })
    }

    pub fn bounds(&self) -> BoundPair {
        self.bounds
    }

    pub fn matrix(&self) -> MahalanobisMatrix {
        MahalanobisMatrix::from_full_unchecked(self.problem.dim(), self.a.clone())
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    fn warn(&mut self, i: usize, w: FitWarning) {
        if !self.warned[i] {
            self.warned[i] = true;
            self.warnings.push(w);
        }
    }

    /// Bregman projection onto constraint `i`.
    pub fn project(&mut self, i: usize) -> Result<Projection> {
        let d = self.problem.dim();
        let z = self.problem.diff(i);
        // v = A z, p = zᵀ A z
        for (r, v) in self.scratch.iter_mut().enumerate() {
            let row = &self.a[r * d..(r + 1) * d];
            *v = row.iter().zip(z).map(|(x, y)| x * y).sum();
        }
        let p: f64 = self.scratch.iter().zip(z).map(|(x, y)| x * y).sum();
        let label = self.problem.label(i);
        if !(p > 0.0) {
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("distance of constraint {i} is {p}")));
            }
            if !label.is_same() {
                self.warn(i, FitWarning::ZeroDistanceDissimilar { constraint: i });
            }
            return Ok(Projection::Skipped);
        }
        let delta = if label.is_same() { 1.0 } else { -1.0 };
        let gamma = self.config.gamma;
        let xi = self.slacks[i];
        let alpha = self.lambdas[i].min(delta * (1.0 / p - gamma / xi) / 2.0);
        if alpha == 0.0 {
            return Ok(Projection::Inactive);
        }
        let denom = 1.0 - delta * alpha * p;
        if denom.abs() <= DENOMINATOR_FLOOR {
            self.warn(i, FitWarning::DenominatorClamped { constraint: i });
            return Ok(Projection::Skipped);
        }
        // A + beta v vᵀ stays PD iff 1 + beta p = 1 / denom > 0.
        if denom < 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: 1.0 / denom });
        }
        self.slacks[i] = gamma * xi / (gamma + delta * alpha * xi);
        self.lambdas[i] -= alpha;
        let beta = delta * alpha / denom;
        for r in 0..d {
            let bv = beta * self.scratch[r];
            for c in r..d {
                let val = self.a[r * d + c] + bv * self.scratch[c];
                self.a[r * d + c] = val;
                self.a[c * d + r] = val;
            }
        }
        self.updates += 1;
        if self.config.pd_check == PdCheck::EveryUpdate {
            self.verify_pd()?;
        }
        Ok(Projection::Applied { alpha, beta })
    }

    fn verify_pd(&self) -> Result<()> {
        let report = self.matrix().check_positive_definite()?;
        if report.positive_definite {
            Ok(())
        } else {
            Err(Error::NotPositiveDefinite {
                pivot: report.min_pivot,
            })
        }
    }

    /// One pass over all constraints; returns the largest `|Δλ|`.
    pub fn sweep(&mut self) -> Result<f64> {
        let before = self.lambdas.clone();
        if self.config.shuffle {
            let mut order = std::mem::take(&mut self.order);
            order.shuffle(&mut self.rng);
            self.order = order;
        }
        for k in 0..self.order.len() {
            let i = self.order[k];
            self.project(i)?;
        }
        self.sweeps += 1;
        if self.config.pd_check == PdCheck::PerSweep {
            self.verify_pd()?;
        }
        Ok(before
            .iter()
            .zip(&self.lambdas)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Sweeps until `max |Δλ| <= convergence_tol` or `max_sweeps`.
    pub fn run(mut self) -> Result<ItmlState> {
        let mut converged = self.problem.is_empty();
        let mut change = 0.0;
        if !converged {
            while self.sweeps < self.config.max_sweeps {
                change = self.sweep()?;
                if change <= self.config.convergence_tol {
                    converged = true;
                    break;
                }
            }
        }
        Ok(ItmlState {
            matrix: self.matrix(),
            lambdas: self.lambdas,
            slacks: self.slacks,
            sweep_count: self.sweeps,
            converged,
            updates: self.updates,
            last_dual_change: change,
            warnings: self.warnings,
        })
    }
}

/// Fits a metric to the constraints starting from `a0`.
///
/// With no constraints the returned matrix is `a0` unchanged.
pub fn itml_fit(
    store: &EmbeddingStore,
    constraints: &ConstraintSet,
    bounds: BoundPair,
    config: &ItmlConfig,
    a0: &MahalanobisMatrix,
) -> Result<ItmlState> {
    if a0.dim() != store.dim() {
        return Err(Error::Shape {
            expected: store.dim(),
            got: a0.dim(),
        });
    }
    if constraints.is_empty() {
        config.validate()?;
        return Ok(ItmlState {
            matrix: a0.clone(),
            lambdas: Vec::new(),
            slacks: Vec::new(),
            sweep_count: 0,
            converged: true,
            updates: 0,
            last_dual_change: 0.0,
            warnings: Vec::new(),
        });
    }
    let problem = ItmlProblem::from_store(store, constraints)?;
    ItmlSolver::new(&problem, bounds, *config, a0)?.run()
}

/// Diagonal-mode copy of the fitted matrix.
pub fn extract_diagonal(state: &ItmlState) -> Result<MahalanobisMatrix> {
    state.matrix.to_diagonal()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPrediction {
    pub label: Label,
    pub distance: f64,
    pub threshold: f64,
}

/// Same meaning iff `h(w1, w2; A) <= (u + l) / 2`.
pub fn classify_pair(
    a: &MahalanobisMatrix,
    bounds: &BoundPair,
    w1: &[f64],
    w2: &[f64],
) -> Result<PairPrediction> {
    let distance = a.distance(w1, w2)?;
    Ok(classify_distance(distance, bounds))
}

pub fn classify_distance(distance: f64, bounds: &BoundPair) -> PairPrediction {
    let threshold = bounds.midpoint();
    PairPrediction {
        label: if distance <= threshold {
            Label::Same
        } else {
            Label::Different
        },
        distance,
        threshold,
    }
}

/// Fraction of `set` classified correctly.
pub fn pair_accuracy(
    a: &MahalanobisMatrix,
    bounds: &BoundPair,
    set: &ConstraintSet,
    store: &EmbeddingStore,
) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Input("accuracy of an empty pair set".into()));
    }
    let mut correct = 0usize;
    for (i, j, label) in set.resolve(store)? {
        if classify_pair(a, bounds, &store.row(i), &store.row(j))?.label == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

/// `{1e-5, 1e-4, ..., 1e4, 1e5}`.
pub fn default_gamma_grid() -> Vec<f64> {
    (-5..=5).map(|k| 10f64.powi(k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Base solver settings; `gamma` is overridden per grid point.
    pub itml: ItmlConfig,
    pub percentiles: BoundPercentiles,
    /// Fit grid points concurrently.
    pub parallel: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            itml: ItmlConfig::default(),
            percentiles: BoundPercentiles::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridPoint {
    pub gamma: f64,
    /// Dev accuracy, or the fit error message.
    pub outcome: std::result::Result<f64, String>,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_gamma: f64,
    pub state: ItmlState,
    pub bounds: BoundEstimate,
    pub grid: Vec<GridPoint>,
}

impl SearchResult {
    pub fn best_accuracy(&self) -> f64 {
        self.grid
            .iter()
            .find(|g| g.gamma == self.best_gamma)
            .and_then(|g| g.outcome.clone().ok())
            .unwrap_or(f64::NAN)
    }
}

/// Fits one metric per `gamma` and keeps the best on `dev`.
///
/// Bounds are estimated once from the training pairs under the identity.
/// Ties go to the smaller `gamma`; failed grid points are recorded and skipped.
pub fn slack_search(
    train: &ConstraintSet,
    dev: &ConstraintSet,
    store: &EmbeddingStore,
    grid: &[f64],
    config: &SearchConfig,
) -> Result<SearchResult> {
    if grid.is_empty() {
        return Err(Error::Input("gamma grid is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Input("development set is empty".into()));
    }
    let a0 = MahalanobisMatrix::identity(store.dim());
    let (pos, neg) = constraint_distances(store, train, &a0)?;
    let estimate = estimate_bounds_with(&pos, &neg, config.percentiles)?;
    let bounds = estimate.bounds;
    let problem = ItmlProblem::from_store(store, train)?;
    // resolve dev ids up front so a bad id fails the whole search
    dev.resolve(store)?;

    let fit_one = |gamma: f64| -> (f64, std::result::Result<(f64, ItmlState), String>) {
        let cfg = ItmlConfig {
            gamma,
            ..config.itml
        };
        let res = ItmlSolver::new(&problem, bounds, cfg, &a0)
            .and_then(|s| s.run())
            .and_then(|state| Ok((pair_accuracy(&state.matrix, &bounds, dev, store)?, state)));
        (gamma, res.map_err(|e| e.to_string()))
    };
    let fits: Vec<_> = if config.parallel {
        grid.par_iter().map(|&g| fit_one(g)).collect()
    } else {
        grid.iter().map(|&g| fit_one(g)).collect()
    };

    let mut best: Option<(f64, f64, ItmlState)> = None;
    let mut points = Vec::with_capacity(fits.len());
    for (gamma, res) in fits {
        match res {
            Ok((acc, state)) => {
                points.push(GridPoint {
                    gamma,
                    outcome: Ok(acc),
                });
                let better = match &best {
                    None => true,
                    Some((bg, ba, _)) => acc > *ba || (acc == *ba && gamma < *bg),
                };
                if better {
                    best = Some((gamma, acc, state));
                }
            }
            Err(msg) => points.push(GridPoint {
                gamma,
                outcome: Err(msg),
            }),
        }
    }
    let (best_gamma, _, state) = best.ok_or_else(|| {
        Error::Numeric(format!(
            "every grid point failed: {}",
            points
                .iter()
                .filter_map(|p| p.outcome.as_ref().err().map(|e| format!("gamma={}: {e}", p.gamma)))
                .collect::<Vec<_>>()
                .join("; ")
        ))
    })?;
    Ok(SearchResult {
        best_gamma,
        state,
        bounds: estimate,
        grid: points,
    })
}

/// Sidecar record written next to a fitted metric file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMetadata {
    pub gamma: f64,
    pub upper: f64,
    pub lower: f64,
    pub sweeps: usize,
    pub converged: bool,
    pub mode: String,
    pub percentiles: BoundPercentiles,
}

impl MetricMetadata {
    pub fn new(
        gamma: f64,
        bounds: BoundPair,
        percentiles: BoundPercentiles,
        state: &ItmlState,
        mode: MetricMode,
    ) -> Self {
        Self {
            gamma,
            upper: bounds.upper,
            lower: bounds.lower,
            sweeps: state.sweep_count,
            converged: state.converged,
            mode: mode.as_str().to_string(),
            percentiles,
        }
    }

    pub fn bounds(&self) -> Result<BoundPair> {
        BoundPair::new(self.upper, self.lower)
    }

    pub fn path_for(metric_path: &Path) -> std::path::PathBuf {
        sidecar(metric_path, ".meta")
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("metadata serializes")
    }

    pub fn save(&self, metric_path: &Path) -> Result<()> {
        write_atomic(&Self::path_for(metric_path), self.to_text().as_bytes())
    }

    pub fn load(metric_path: &Path) -> Result<Self> {
        let path = Self::path_for(metric_path);
        let text = read_text(&path)?;
        toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }
}
