//! Two-stage GMM fitting by block-coordinate Newton–Raphson.
//!
//! With `μ̂` substituted, the objective is a weighted sum of squares of
//! `Ê − model` where the model is multilinear in the columns `φ_jh`. Holding
//! every other column fixed the block objective is quadratic in `φ_jh` with a
//! diagonal Hessian, so each block update is the exact Newton step
//! `φ_jhc = num_c / den_c`:
//!
//! ```text
//! num_c = Σ_terms w · λ_h · a · Ē        den_c = Σ_terms w · λ_h² · a²
//! ```
//!
//! where each term is a moment coordinate involving cell `c` of variable `j`,
//! `a` is the product of the partner columns at that coordinate, and `Ē` is
//! the target minus the contributions of the other components.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Schema, VariableKind};
use crate::error::{MeldError, Result};
use crate::gmm::{estimate_diag_s, weights_from_s, Weights, DEFAULT_VARIANCE_FLOOR};
use crate::layout::MomentOrder;
use crate::moments::{compute_stats, DirichletPrior, LambdaDiagonals, MomentStats};
use crate::params::Phi;
use crate::select::fitness_index;
use crate::simplex::project_to_simplex;

pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_MAX_SWEEPS: usize = 500;
pub const DEFAULT_ALPHA: f64 = 0.1;
pub const DEFAULT_BOUND_WIDENING: f64 = 3.0;

/// Outcome of a single block Newton step.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockUpdate {
    Updated(Vec<f64>),
    /// Every partner column is zero; the block is left unchanged.
    Skipped,
}

/// Quadratic GMM objective bound to fixed moment targets and weights.
#[derive(Clone, Debug)]
pub struct MomentObjective<'a> {
    stats: &'a MomentStats,
    lambda: LambdaDiagonals,
    order: MomentOrder,
    weights: &'a Weights,
}

impl<'a> MomentObjective<'a> {
    pub fn new(
        stats: &'a MomentStats,
        lambda: LambdaDiagonals,
        order: MomentOrder,
        weights: &'a Weights,
    ) -> Result<Self> {
        if order > stats.order() {
            return Err(MeldError::Precondition(format!(
                "order-{order} objective needs order-{order} statistics, got order {}",
                stats.order()
            )));
        }
        if lambda.second.len() != lambda.third.len() {
            return Err(MeldError::Dimension("Λ² and Λ³ differ in length".into()));
        }
        weights.check_len(stats.layout().len_for(order))?;
        Ok(Self {
            stats,
            lambda,
            order,
            weights,
        })
    }

    pub fn order(&self) -> MomentOrder {
        self.order
    }

    pub fn weights(&self) -> &Weights {
        self.weights
    }

    /// Length of the moment vector this objective sums over.
    pub fn dim(&self) -> usize {
        self.stats.layout().len_for(self.order)
    }

    fn check_phi(&self, phi: &Phi) -> Result<()> {
        phi.check_shape(self.stats.layout().dims(), self.lambda.second.len())
    }

    /// `Q(Φ) = Σ_c w_c (Ê_c − model_c(Φ))²`.
    pub fn value(&self, phi: &Phi) -> Result<f64> {
        self.check_phi(phi)?;
        let layout = self.stats.layout();
        let dims = layout.dims();
        let targets = self.stats.targets();
        let k = phi.k();
        let mut total = 0.0;
        for b in layout.pairs() {
            let dj = dims[b.j];
            for ct in 0..dims[b.t] {
                for cj in 0..dj {
                    let idx = b.offset + cj + dj * ct;
                    let model: f64 = (0..k)
                        .map(|h| self.lambda.second[h] * phi.col(b.j, h)[cj] * phi.col(b.t, h)[ct])
                        .sum();
                    let r = targets[idx] - model;
                    total += self.weights.get(idx) * r * r;
                }
            }
        }
        if self.order == MomentOrder::Third {
            for b in layout.triples() {
                let (dj, ds) = (dims[b.j], dims[b.s]);
                for ct in 0..dims[b.t] {
                    for cs in 0..ds {
                        for cj in 0..dj {
                            let idx = b.offset + cj + dj * (cs + ds * ct);
                            let model: f64 = (0..k)
                                .map(|h| {
                                    self.lambda.third[h]
                                        * phi.col(b.j, h)[cj]
                                        * phi.col(b.s, h)[cs]
                                        * phi.col(b.t, h)[ct]
                                })
                                .sum();
                            let r = targets[idx] - model;
                            total += self.weights.get(idx) * r * r;
                        }
                    }
                }
            }
        }
        Ok(total)
    }

    /// Linear and diagonal-quadratic coefficients of the block objective in `φ_jh`.
    fn block_system(&self, phi: &Phi, j: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
        let layout = self.stats.layout();
        let dims = layout.dims();
        let targets = self.stats.targets();
        let p = dims.len();
        let k = phi.k();
        let dj = dims[j];
        let mut num = vec![0.0; dj];
        let mut den = vec![0.0; dj];

        let lam2 = &self.lambda.second;
        for t in (0..p).filter(|&t| t != j) {
            let dt = dims[t];
            // strides of cells c (variable j) and ct (variable t) inside the stored block
            let (offset, stride_j, stride_t) = if j < t {
                (layout.pair_block(j, t).offset, 1, dj)
            } else {
                (layout.pair_block(t, j).offset, dt, 1)
            };
            let partner = phi.col(t, h);
            for (ct, &a) in partner.iter().enumerate() {
                for c in 0..dj {
                    let idx = offset + c * stride_j + ct * stride_t;
                    let mut resid = targets[idx];
                    for hh in (0..k).filter(|&hh| hh != h) {
                        resid -= lam2[hh] * phi.col(j, hh)[c] * phi.col(t, hh)[ct];
                    }
                    let w = self.weights.get(idx);
                    num[c] += w * lam2[h] * a * resid;
                    den[c] += w * lam2[h] * lam2[h] * a * a;
                }
            }
        }

        if self.order == MomentOrder::Third {
            let lam3 = &self.lambda.third;
            for s in (0..p).filter(|&s| s != j) {
                for t in (s + 1..p).filter(|&t| t != j) {
                    let mut vars = [(j, 0usize), (s, 1), (t, 2)];
                    vars.sort_unstable_by_key(|v| v.0);
                    let offset = layout.triple_block(vars[0].0, vars[1].0, vars[2].0).offset;
                    let mut strides = [0usize; 3];
                    let mut acc = 1;
                    for &(var, role) in &vars {
                        strides[role] = acc;
                        acc *= dims[var];
                    }
                    let (ds, dt) = (dims[s], dims[t]);
                    let (fs, ft) = (phi.col(s, h), phi.col(t, h));
                    for ct in 0..dt {
                        for cs in 0..ds {
                            let a = fs[cs] * ft[ct];
                            for c in 0..dj {
                                let idx = offset + c * strides[0] + cs * strides[1] + ct * strides[2];
                                let mut resid = targets[idx];
                                for hh in (0..k).filter(|&hh| hh != h) {
                                    resid -= lam3[hh] * phi.col(j, hh)[c] * phi.col(s, hh)[cs] * phi.col(t, hh)[ct];
                                }
                                let w = self.weights.get(idx);
                                num[c] += w * lam3[h] * a * resid;
                                den[c] += w * lam3[h] * lam3[h] * a * a;
                            }
                        }
                    }
                }
            }
        }
        (num, den)
    }

    /// `∂Q/∂φ_jh = 2(den ∘ φ_jh − num)`.
    pub fn gradient_block(&self, phi: &Phi, j: usize, h: usize) -> Result<Vec<f64>> {
        self.check_phi(phi)?;
        check_block(phi, j, h)?;
        let (num, den) = self.block_system(phi, j, h);
        Ok(phi
            .col(j, h)
            .iter()
            .zip(num.iter().zip(&den))
            .map(|(x, (n, d))| 2.0 * (d * x - n))
            .collect())
    }

    /// Exact minimiser of `Q` over `φ_jh` with the other columns fixed, before retraction.
    pub fn newton_block(&self, phi: &Phi, j: usize, h: usize) -> Result<BlockUpdate> {
        self.check_phi(phi)?;
        check_block(phi, j, h)?;
        let (num, den) = self.block_system(phi, j, h);
        if den.iter().any(|&d| !(d > 0.0)) {
            return Ok(BlockUpdate::Skipped);
        }
        Ok(BlockUpdate::Updated(
            num.iter().zip(&den).map(|(n, d)| n / d).collect(),
        ))
    }
}

fn check_block(phi: &Phi, j: usize, h: usize) -> Result<()> {
    if j >= phi.p() || h >= phi.k() {
        return Err(MeldError::Dimension(format!(
            "block ({j}, {h}) outside Φ with p = {}, k = {}",
            phi.p(),
            phi.k()
        )));
    }
    Ok(())
}

/// Objective value; identity weights give the plain Frobenius form.
pub fn objective(
    phi: &Phi,
    stats: &MomentStats,
    lambda: &LambdaDiagonals,
    order: MomentOrder,
    weights: &Weights,
) -> Result<f64> {
    MomentObjective::new(stats, lambda.clone(), order, weights)?.value(phi)
}

pub fn gradient_block(
    j: usize,
    h: usize,
    phi: &Phi,
    stats: &MomentStats,
    lambda: &LambdaDiagonals,
    order: MomentOrder,
    weights: &Weights,
) -> Result<Vec<f64>> {
    MomentObjective::new(stats, lambda.clone(), order, weights)?.gradient_block(phi, j, h)
}

/// Newton step for `φ_jh` under the second-order objective.
pub fn update_block_q2(
    j: usize,
    h: usize,
    phi: &Phi,
    stats: &MomentStats,
    lambda: &LambdaDiagonals,
    weights: &Weights,
) -> Result<BlockUpdate> {
    MomentObjective::new(stats, lambda.clone(), MomentOrder::Second, weights)?.newton_block(phi, j, h)
}

/// Newton step for `φ_jh` under the combined second- and third-order objective.
pub fn update_block_q3(
    j: usize,
    h: usize,
    phi: &Phi,
    stats: &MomentStats,
    lambda: &LambdaDiagonals,
    weights: &Weights,
) -> Result<BlockUpdate> {
    MomentObjective::new(stats, lambda.clone(), MomentOrder::Third, weights)?.newton_block(phi, j, h)
}

/// How the per-sweep objective decrease is scaled before comparing with the tolerance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvergenceScale {
    /// `n · (Q_prev − Q_curr) / dim`, the decrease of the GMM statistic `J = n·Q`.
    #[default]
    Sample,
    /// `(Q_prev − Q_curr) / dim`.
    Unscaled,
}

impl ConvergenceScale {
    /// Multiplier applied to the objective decrease for a sample of size `n`.
    pub fn factor(self, n: usize) -> f64 {
        match self {
            // population statistics carry n = 0
            ConvergenceScale::Sample if n > 0 => n as f64,
            _ => 1.0,
        }
    }
}

/// Feasible region for one variable's component parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Retraction {
    Simplex,
    Interval { lo: f64, hi: f64 },
}

impl Retraction {
    pub fn apply(&self, v: Vec<f64>) -> Vec<f64> {
        match *self {
            Retraction::Simplex => project_to_simplex(&v),
            Retraction::Interval { lo, hi } => v.into_iter().map(|x| x.clamp(lo, hi)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub order: MomentOrder,
    /// Run the reweighted second stage after the identity-weight stage.
    pub two_stage: bool,
    pub tolerance: f64,
    pub convergence: ConvergenceScale,
    pub max_sweeps: usize,
    pub seed: u64,
    /// Dirichlet parameters; `None` means 0.1 per component.
    pub alpha: Option<Vec<f64>>,
    /// Explicit `[lo, hi]` bounds for named non-categorical variables.
    pub scalar_bounds: BTreeMap<String, (f64, f64)>,
    /// Default bounds are the data range widened by this many sample sds.
    pub bound_widening: f64,
    pub variance_floor: f64,
}

impl FitConfig {
    pub fn new(k: usize, order: MomentOrder) -> Self {
        Self {
            k,
            order,
            two_stage: false,
            tolerance: DEFAULT_TOLERANCE,
            convergence: ConvergenceScale::default(),
            max_sweeps: DEFAULT_MAX_SWEEPS,
            seed: 0,
            alpha: None,
            scalar_bounds: BTreeMap::new(),
            bound_widening: DEFAULT_BOUND_WIDENING,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_two_stage(mut self, two_stage: bool) -> Self {
        self.two_stage = two_stage;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(MeldError::InvalidParameter("k must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(MeldError::InvalidParameter(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_sweeps < 1 {
            return Err(MeldError::InvalidParameter("max sweeps must be at least 1".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(MeldError::InvalidParameter("variance floor must be positive".into()));
        }
        if !(self.bound_widening >= 0.0) {
            return Err(MeldError::InvalidParameter("bound widening must be nonnegative".into()));
        }
        for (name, (lo, hi)) in &self.scalar_bounds {
            if !(lo <= hi) {
                return Err(MeldError::InvalidParameter(format!("empty bounds for {name}")));
            }
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<DirichletPrior> {
        match &self.alpha {
            Some(alpha) if alpha.len() != self.k => Err(MeldError::InvalidParameter(format!(
                "α has {} entries but k = {}",
                alpha.len(),
                self.k
            ))),
            Some(alpha) => DirichletPrior::new(alpha.clone()),
            None => DirichletPrior::symmetric(self.k, DEFAULT_ALPHA),
        }
    }

    /// Retraction for every variable of `dataset`'s schema.
    pub fn retractions(&self, dataset: &Dataset) -> Result<Vec<Retraction>> {
        let schema = dataset.schema();
        if let Some(name) = self.scalar_bounds.keys().find(|n| schema.index_of(n).is_none()) {
            return Err(MeldError::InvalidParameter(format!("bounds given for unknown variable {name:?}")));
        }
        (0..schema.len())
            .map(|j| {
                let var = schema.variable(j);
                if var.is_categorical() {
                    return Ok(Retraction::Simplex);
                }
                if let Some(&(lo, hi)) = self.scalar_bounds.get(&var.name) {
                    return Ok(Retraction::Interval { lo, hi });
                }
                let (_, sd, min, max) = dataset.scalar_summary(j).ok_or_else(|| {
                    MeldError::Precondition(format!("no observations of {:?}", var.name))
                })?;
                let widen = self.bound_widening * sd;
                Ok(Retraction::Interval {
                    lo: min - widen,
                    hi: max + widen,
                })
            })
            .collect()
    }
}

/// Seeded starting point: flat-Dirichlet columns for categorical variables,
/// sample mean plus one sample sd of Gaussian jitter for scalar variables.
pub fn init_params(schema: &Schema, k: usize, dataset: &Dataset, seed: u64) -> Result<Phi> {
    if k < 1 {
        return Err(MeldError::InvalidParameter("k must be at least 1".into()));
    }
    if dataset.schema() != schema {
        return Err(MeldError::Schema("dataset was loaded under a different schema".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut components = Vec::with_capacity(schema.len());
    for (j, var) in schema.variables().iter().enumerate() {
        let cols = match &var.kind {
            VariableKind::Categorical { levels } => (0..k)
                .map(|_| {
                    let draws: Vec<f64> = (0..levels.len()).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                    let total: f64 = draws.iter().sum();
                    draws.into_iter().map(|x| x / total).collect()
                })
                .collect(),
            VariableKind::Continuous | VariableKind::Count => {
                let (mean, sd, _, _) = dataset.scalar_summary(j).ok_or_else(|| {
                    MeldError::Precondition(format!("no observations of {:?}", var.name))
                })?;
                (0..k)
                    .map(|_| vec![mean + sd * rng.sample::<f64, _>(StandardNormal)])
                    .collect()
            }
        };
        components.push(cols);
    }
    Phi::new(components)
}

/// Result of one estimation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    pub phi: Phi,
    /// Objective at the start point followed by its value after each sweep.
    pub objective: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub fitness_index: f64,
    pub skipped_blocks: usize,
}

impl StageReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("trajectory starts with the initial value")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub k: usize,
    pub order: MomentOrder,
    pub alpha: Vec<f64>,
    pub n: usize,
    pub variables: Vec<String>,
    pub moment_dim: usize,
    pub seed: u64,
    pub stages: Vec<StageReport>,
    /// Not serialised so reports stay byte-identical across runs.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl FitReport {
    pub fn stage(&self, stage: u8) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn last_stage(&self) -> &StageReport {
        self.stages.last().expect("a fit has at least one stage")
    }

    /// Component parameters of variable `j` as a delimited table: one row per
    /// level (or a single `mean` row for scalar variables), one column per component.
    pub fn phi_table(&self, stage: u8, schema: &Schema, j: usize) -> Result<String> {
        let report = self
            .stage(stage)
            .ok_or_else(|| MeldError::InvalidParameter(format!("fit has no stage {stage}")))?;
        let var = schema.variable(j);
        let mut out = csv::Writer::from_writer(Vec::new());
        let mut header = vec![if var.is_categorical() { "level" } else { "parameter" }.to_string()];
        header.extend((1..=self.k).map(|h| format!("component_{h}")));
        out.write_record(&header)?;
        let labels: Vec<String> = match var.levels() {
            Some(levels) => levels.to_vec(),
            None => vec!["mean".into()],
        };
        for (c, label) in labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            row.extend((0..self.k).map(|h| format!("{:?}", report.phi.col(j, h)[c])));
            out.write_record(&row)?;
        }
        let bytes = out.into_inner().map_err(|e| MeldError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Stopping rule of [`run_stage`]: stop once `scale · ΔQ / dim < tolerance`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StoppingRule {
    pub tolerance: f64,
    pub scale: f64,
    pub max_sweeps: usize,
}

impl StoppingRule {
    pub fn from_config(config: &FitConfig, n: usize) -> Self {
        Self {
            tolerance: config.tolerance,
            scale: config.convergence.factor(n),
            max_sweeps: config.max_sweeps,
        }
    }
}

/// Gauss–Seidel sweeps over `(j ascending, h ascending)` with retraction after
/// every block, until the scaled per-coordinate objective decrease drops below
/// the tolerance.
pub fn run_stage(
    objective: &MomentObjective<'_>,
    start: Phi,
    retractions: &[Retraction],
    rule: StoppingRule,
) -> Result<(Phi, Vec<f64>, bool, usize)> {
    let StoppingRule {
        tolerance,
        scale,
        max_sweeps,
    } = rule;
    let mut phi = start;
    let dim = objective.dim() as f64;
    let mut trajectory = vec![objective.value(&phi)?];
    if !trajectory[0].is_finite() {
        return Err(MeldError::Numerical("objective is not finite at the start point".into()));
    }
    let mut converged = false;
    let mut skipped = 0;
    for sweep in 1..=max_sweeps {
        for j in 0..phi.p() {
            for h in 0..phi.k() {
                match objective.newton_block(&phi, j, h)? {
                    BlockUpdate::Updated(col) => *phi.col_mut(j, h) = retractions[j].apply(col),
                    BlockUpdate::Skipped => {
                        skipped += 1;
                        log::warn!("sweep {sweep}: block ({j}, {h}) has a zero denominator, skipped");
                    }
                }
            }
        }
        let q = objective.value(&phi)?;
        if !q.is_finite() {
            return Err(MeldError::Numerical(format!(
                "objective became {q} after sweep {sweep}"
            )));
        }
        let prev = *trajectory.last().unwrap();
        trajectory.push(q);
        if scale * (prev - q) / dim < tolerance {
            converged = true;
            break;
        }
    }
    Ok((phi, trajectory, converged, skipped))
}

/// Two-stage estimation of Φ from `dataset`.
pub fn fit(dataset: &Dataset, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    let prior = config.prior()?;
    let stats = compute_stats(dataset, &prior, config.order)?;
    fit_with_stats(dataset, &stats, config)
}

/// Like [`fit`] with precomputed statistics (their prior overrides `config.alpha`).
pub fn fit_with_stats(dataset: &Dataset, stats: &MomentStats, config: &FitConfig) -> Result<FitReport> {
    let started = Instant::now();
    config.validate()?;
    if stats.prior().k() != config.k {
        return Err(MeldError::InvalidParameter(format!(
            "statistics were computed for k = {}, config asks for k = {}",
            stats.prior().k(),
            config.k
        )));
    }
    if dataset.schema().dims() != stats.layout().dims() {
        return Err(MeldError::Dimension("dataset does not match the statistics layout".into()));
    }
    let lambda = stats.prior().lambda_diagonals();
    let retractions = config.retractions(dataset)?;
    let mut start = init_params(dataset.schema(), config.k, dataset, config.seed)?;
    for (j, r) in retractions.iter().enumerate() {
        for h in 0..config.k {
            let col = std::mem::take(start.col_mut(j, h));
            *start.col_mut(j, h) = r.apply(col);
        }
    }

    let rule = StoppingRule::from_config(config, stats.n());
    let identity = Weights::Identity;
    let stage1_objective = MomentObjective::new(stats, lambda.clone(), config.order, &identity)?;
    let (phi1, traj1, conv1, skip1) =
        run_stage(&stage1_objective, start, &retractions, rule)?;
    let fi1 = fitness_index(*traj1.last().unwrap(), stats, &identity, config.order)?;
    let mut stages = vec![StageReport {
        stage: 1,
        phi: phi1.clone(),
        sweeps: traj1.len() - 1,
        objective: traj1,
        converged: conv1,
        fitness_index: fi1,
        skipped_blocks: skip1,
    }];

    if config.two_stage {
        let diag = estimate_diag_s(dataset, &phi1, stats, &lambda, config.order)?;
        let weights = Weights::Diagonal(weights_from_s(&diag, config.variance_floor, config.order)?);
        let stage2_objective = MomentObjective::new(stats, lambda, config.order, &weights)?;
        let (phi2, traj2, conv2, skip2) =
            run_stage(&stage2_objective, phi1, &retractions, rule)?;
        let fi2 = fitness_index(*traj2.last().unwrap(), stats, &weights, config.order)?;
        stages.push(StageReport {
            stage: 2,
            phi: phi2,
            sweeps: traj2.len() - 1,
            objective: traj2,
            converged: conv2,
            fitness_index: fi2,
            skipped_blocks: skip2,
        });
    }

    Ok(FitReport {
        k: config.k,
        order: config.order,
        alpha: stats.prior().alpha().to_vec(),
        n: dataset.n(),
        variables: dataset.schema().variables().iter().map(|v| v.name.clone()).collect(),
        moment_dim: stats.layout().len_for(config.order),
        seed: config.seed,
        stages,
        wall_time: started.elapsed(),
    })
}
