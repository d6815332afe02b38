//! Dirichlet scalings, empirical moment targets and closed-form population
//! moments.
//!
//! With `μ̂_j` the sample mean of `b_ij`, the data-only targets are
//!
//! ```text
//! Ê²_jt  = ⟨b_j∘b_t⟩ − α0/(α0+1) μ̂_j∘μ̂_t
//! Ê³_jst = ⟨b_j∘b_s∘b_t⟩
//!          − α0/(α0+2) (⟨b_j∘b_s⟩∘μ̂_t + μ̂_j∘⟨b_s∘b_t⟩ + ⟨b_j∘μ̂_s∘b_t⟩)
//!          + 2α0²/((α0+1)(α0+2)) μ̂_j∘μ̂_s∘μ̂_t
//! ```
//!
//! where `⟨·⟩` is the sample average. At the true parameters their expectations
//! are `Φ_j Λ² Φ_tᵀ` and `Λ³ ×₁ Φ_j ×₂ Φ_s ×₃ Φ_t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MeldError, Result};
use crate::layout::{MomentOrder, MomentVectorLayout};
use crate::params::Phi;

/// Symmetric-or-not Dirichlet prior on the membership proportions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DirichletPrior {
    alpha: Vec<f64>,
    alpha0: f64,
}

impl DirichletPrior {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(MeldError::InvalidParameter("α must have at least one entry".into()));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(MeldError::InvalidParameter(format!(
                "Dirichlet parameters must be positive and finite, got {a}"
            )));
        }
        let alpha0 = alpha.iter().sum();
        Ok(Self { alpha, alpha0 })
    }

    /// `k` copies of `value`.
    pub fn symmetric(k: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn lambda_diagonals(&self) -> LambdaDiagonals {
        let a0 = self.alpha0;
        let second = self.alpha.iter().map(|a| a / (a0 * (a0 + 1.0))).collect();
        let third = self
            .alpha
            .iter()
            .map(|a| 2.0 * a / (a0 * (a0 + 1.0) * (a0 + 2.0)))
            .collect();
        LambdaDiagonals { second, third }
    }
}

impl TryFrom<Vec<f64>> for DirichletPrior {
    type Error = MeldError;

    fn try_from(alpha: Vec<f64>) -> Result<Self> {
        Self::new(alpha)
    }
}

impl From<DirichletPrior> for Vec<f64> {
    fn from(prior: DirichletPrior) -> Vec<f64> {
        prior.alpha
    }
}

/// Diagonals of `Λ²` and `Λ³`.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaDiagonals {
    pub second: Vec<f64>,
    pub third: Vec<f64>,
}

pub fn lambda_diagonals(prior: &DirichletPrior) -> LambdaDiagonals {
    prior.lambda_diagonals()
}

/// Empirical moment targets `Ê²`, `Ê³` and means `μ̂`, laid out like the
/// stacked moment vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentStats {
    n: usize,
    prior: DirichletPrior,
    layout: MomentVectorLayout,
    means: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl MomentStats {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn prior(&self) -> &DirichletPrior {
        &self.prior
    }

    pub fn layout(&self) -> &MomentVectorLayout {
        &self.layout
    }

    pub fn order(&self) -> MomentOrder {
        self.layout.order()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn mean(&self, j: usize) -> &[f64] {
        &self.means[j]
    }

    /// All targets in moment-vector order (`e` in the fitness index).
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Stored `Ê²_jt` block for `j < t`, column-major `d_j × d_t`.
    pub fn e2_block(&self, j: usize, t: usize) -> &[f64] {
        let b = self.layout.pair_block(j, t);
        &self.targets[b.offset..b.offset + self.layout.dims()[j] * self.layout.dims()[t]]
    }

    /// Entry `(cj, ct)` of `Ê²_jt`, either orientation.
    #[inline]
    pub fn e2(&self, j: usize, t: usize, cj: usize, ct: usize) -> f64 {
        self.targets[self.layout.pair_index(j, t, cj, ct)]
    }

    /// Entry of `Ê³` for distinct variables in any order.
    #[inline]
    pub fn e3(&self, a: usize, b: usize, c: usize, ca: usize, cb: usize, cc: usize) -> f64 {
        self.targets[self.layout.triple_index(a, b, c, ca, cb, cc)]
    }

    /// Assembles targets from averaged raw moments. `raw[..second_len]` holds
    /// `⟨b_j∘b_t⟩`, the remainder `⟨b_j∘b_s∘b_t⟩`, both in layout order.
    fn from_raw(
        n: usize,
        prior: DirichletPrior,
        layout: MomentVectorLayout,
        means: Vec<Vec<f64>>,
        raw: Vec<f64>,
    ) -> Self {
        let a0 = prior.alpha0();
        let a2 = a0 / (a0 + 1.0);
        let a3 = a0 / (a0 + 2.0);
        let c3 = 2.0 * a0 * a0 / ((a0 + 1.0) * (a0 + 2.0));
        let dims = layout.dims().to_vec();
        let mut targets = raw.clone();

        for b in layout.pairs() {
            let (dj, dt) = (dims[b.j], dims[b.t]);
            for ct in 0..dt {
                for cj in 0..dj {
                    targets[b.offset + cj + dj * ct] -= a2 * means[b.j][cj] * means[b.t][ct];
                }
            }
        }
        for b in layout.triples() {
            let (dj, ds, dt) = (dims[b.j], dims[b.s], dims[b.t]);
            let pjs = layout.pair_block(b.j, b.s).offset;
            let pst = layout.pair_block(b.s, b.t).offset;
            let pjt = layout.pair_block(b.j, b.t).offset;
            let (mj, ms, mt) = (&means[b.j], &means[b.s], &means[b.t]);
            for ct in 0..dt {
                for cs in 0..ds {
                    for cj in 0..dj {
                        let cross = raw[pjs + cj + dj * cs] * mt[ct]
                            + mj[cj] * raw[pst + cs + ds * ct]
                            + raw[pjt + cj + dj * ct] * ms[cs];
                        targets[b.offset + cj + dj * (cs + ds * ct)] +=
                            -a3 * cross + c3 * mj[cj] * ms[cs] * mt[ct];
                    }
                }
            }
        }
        Self {
            n,
            prior,
            layout,
            means,
            targets,
        }
    }

    /// Structured dump for inspection or caching.
    pub fn to_dump(&self) -> MomentDump {
        let dims = self.layout.dims();
        MomentDump {
            n: self.n,
            order: self.order(),
            alpha: self.prior.alpha().to_vec(),
            dims: dims.to_vec(),
            means: self.means.clone(),
            pairs: self
                .layout
                .pairs()
                .iter()
                .map(|b| BlockDump {
                    vars: vec![b.j, b.t],
                    values: self.targets[b.offset..b.offset + dims[b.j] * dims[b.t]].to_vec(),
                })
                .collect(),
            triples: self
                .layout
                .triples()
                .iter()
                .map(|b| BlockDump {
                    vars: vec![b.j, b.s, b.t],
                    values: self.targets
                        [b.offset..b.offset + dims[b.j] * dims[b.s] * dims[b.t]]
                        .to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_dump(dump: MomentDump) -> Result<Self> {
        let prior = DirichletPrior::new(dump.alpha)?;
        let layout = MomentVectorLayout::new(&dump.dims, dump.order)?;
        if dump.means.len() != dump.dims.len()
            || dump.means.iter().zip(&dump.dims).any(|(m, &d)| m.len() != d)
        {
            return Err(MeldError::Parse("means do not match dims".into()));
        }
        let targets: Vec<f64> = dump
            .pairs
            .into_iter()
            .chain(dump.triples)
            .flat_map(|b| b.values)
            .collect();
        if targets.len() != layout.len() {
            return Err(MeldError::Parse(format!(
                "dump holds {} target entries, layout needs {}",
                targets.len(),
                layout.len()
            )));
        }
        Ok(Self {
            n: dump.n,
            prior,
            layout,
            means: dump.means,
            targets,
        })
    }
}

/// Serializable form of [`MomentStats`]; blocks are column-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentDump {
    pub n: usize,
    pub order: MomentOrder,
    pub alpha: Vec<f64>,
    pub dims: Vec<usize>,
    pub means: Vec<Vec<f64>>,
    pub pairs: Vec<BlockDump>,
    pub triples: Vec<BlockDump>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDump {
    pub vars: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone)]
struct RawSums {
    mean_sums: Vec<f64>,
    raw: Vec<f64>,
}

impl RawSums {
    fn merge(mut self, other: &RawSums) -> RawSums {
        for (a, b) in self.mean_sums.iter_mut().zip(&other.mean_sums) {
            *a += b;
        }
        for (a, b) in self.raw.iter_mut().zip(&other.raw) {
            *a += b;
        }
        self
    }
}

fn chunk_size(n: usize) -> usize {
    n.div_ceil(32).max(1024)
}

/// Sums chunk partials along a fixed binary tree so the result is independent
/// of thread scheduling.
pub(crate) fn pairwise_reduce<T: Clone, F: Fn(T, &T) -> T>(mut parts: Vec<T>, merge: F) -> Option<T> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut iter = parts.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(merge(a, &b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}

/// Single pass over the samples computing `μ̂`, `Ê²` and (order 3) `Ê³`.
pub fn compute_stats(dataset: &Dataset, prior: &DirichletPrior, order: MomentOrder) -> Result<MomentStats> {
    let n = dataset.n();
    if n < 2 {
        return Err(MeldError::Precondition(format!(
            "moment statistics need at least 2 samples, found {n}"
        )));
    }
    let dims = dataset.schema().dims();
    let layout = MomentVectorLayout::new(&dims, order)?;
    let p = dims.len();
    let mut mean_offsets = Vec::with_capacity(p);
    let mut total = 0;
    for &d in &dims {
        mean_offsets.push(total);
        total += d;
    }

    let chunk = chunk_size(n);
    let ranges: Vec<(usize, usize)> = (0..n)
        .step_by(chunk)
        .map(|start| (start, (start + chunk).min(n)))
        .collect();

    let partials: Vec<RawSums> = ranges
        .par_iter()
        .map(|&(start, end)| {
            let mut acc = RawSums {
                mean_sums: vec![0.0; total],
                raw: vec![0.0; layout.len()],
            };
            let mut row = vec![(0usize, 0.0f64); p];
            for i in start..end {
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot = dataset.sparse(i, j);
                    acc.mean_sums[mean_offsets[j] + slot.0] += slot.1;
                }
                for b in layout.pairs() {
                    let (cj, vj) = row[b.j];
                    let (ct, vt) = row[b.t];
                    acc.raw[b.offset + cj + dims[b.j] * ct] += vj * vt;
                }
                for b in layout.triples() {
                    let (cj, vj) = row[b.j];
                    let (cs, vs) = row[b.s];
                    let (ct, vt) = row[b.t];
                    acc.raw[b.offset + cj + dims[b.j] * (cs + dims[b.s] * ct)] += vj * vs * vt;
                }
            }
            acc
        })
        .collect();

    let sums = pairwise_reduce(partials, RawSums::merge).expect("n >= 2 gives one chunk");
    let inv_n = 1.0 / n as f64;
    let means = dims
        .iter()
        .zip(&mean_offsets)
        .map(|(&d, &off)| sums.mean_sums[off..off + d].iter().map(|x| x * inv_n).collect())
        .collect();
    let raw = sums.raw.into_iter().map(|x| x * inv_n).collect();
    Ok(MomentStats::from_raw(n, prior.clone(), layout, means, raw))
}

fn check_model(phi: &Phi, prior: &DirichletPrior, vars: &[usize]) -> Result<()> {
    if phi.k() != prior.k() {
        return Err(MeldError::Dimension(format!(
            "Φ has {} components but α has {}",
            phi.k(),
            prior.k()
        )));
    }
    if let Some(&j) = vars.iter().find(|&&j| j >= phi.p()) {
        return Err(MeldError::Dimension(format!("variable {j} out of range")));
    }
    for (a, &x) in vars.iter().enumerate() {
        if vars[a + 1..].contains(&x) {
            return Err(MeldError::InvalidParameter(format!(
                "cross moments need distinct variables, {x} repeats"
            )));
        }
    }
    Ok(())
}

fn weighted_column_sum(phi: &Phi, prior: &DirichletPrior, j: usize) -> Vec<f64> {
    let mut out = vec![0.0; phi.dim(j)];
    for (h, a) in prior.alpha().iter().enumerate() {
        for (o, x) in out.iter_mut().zip(phi.col(j, h)) {
            *o += a * x;
        }
    }
    out
}

/// `μ_j = Φ_j α / α0`.
pub fn population_mean(phi: &Phi, prior: &DirichletPrior, j: usize) -> Result<Vec<f64>> {
    check_model(phi, prior, &[j])?;
    let a0 = prior.alpha0();
    Ok(weighted_column_sum(phi, prior, j)
        .into_iter()
        .map(|x| x / a0)
        .collect())
}

/// `E[b_ij ∘ b_it]` for `j ≠ t`, column-major `d_j × d_t`.
pub fn population_pair_moment(phi: &Phi, prior: &DirichletPrior, j: usize, t: usize) -> Result<Vec<f64>> {
    check_model(phi, prior, &[j, t])?;
    let a0 = prior.alpha0();
    let mu_j = population_mean(phi, prior, j)?;
    let mu_t = population_mean(phi, prior, t)?;
    let (dj, dt) = (phi.dim(j), phi.dim(t));
    let scale = 1.0 / (a0 * (a0 + 1.0));
    let mut out = vec![0.0; dj * dt];
    for ct in 0..dt {
        for cj in 0..dj {
            let mut comp = 0.0;
            for (h, a) in prior.alpha().iter().enumerate() {
                comp += a * phi.col(j, h)[cj] * phi.col(t, h)[ct];
            }
            out[cj + dj * ct] = scale * comp + a0 / (a0 + 1.0) * mu_j[cj] * mu_t[ct];
        }
    }
    Ok(out)
}

/// `E[b_ij ∘ b_is ∘ b_it]` for distinct `j, s, t`, column-major `d_j × d_s × d_t`.
pub fn population_triple_moment(
    phi: &Phi,
    prior: &DirichletPrior,
    j: usize,
    s: usize,
    t: usize,
) -> Result<Vec<f64>> {
    check_model(phi, prior, &[j, s, t])?;
    let a0 = prior.alpha0();
    let scale = 1.0 / (a0 * (a0 + 1.0) * (a0 + 2.0));
    let (wj, ws, wt) = (
        weighted_column_sum(phi, prior, j),
        weighted_column_sum(phi, prior, s),
        weighted_column_sum(phi, prior, t),
    );
    let (dj, ds, dt) = (phi.dim(j), phi.dim(s), phi.dim(t));
    let mut out = vec![0.0; dj * ds * dt];
    for ct in 0..dt {
        for cs in 0..ds {
            for cj in 0..dj {
                let mut total = wj[cj] * ws[cs] * wt[ct];
                for (h, a) in prior.alpha().iter().enumerate() {
                    let (fj, fs, ft) = (phi.col(j, h)[cj], phi.col(s, h)[cs], phi.col(t, h)[ct]);
                    total += a * (fj * fs * wt[ct] + fj * ws[cs] * ft + wj[cj] * fs * ft + 2.0 * fj * fs * ft);
                }
                out[cj + dj * (cs + ds * ct)] = scale * total;
            }
        }
    }
    Ok(out)
}

/// Targets obtained by feeding population moments through the same formulas
/// as [`compute_stats`]; `n` is reported as 0.
pub fn population_stats(phi: &Phi, prior: &DirichletPrior, order: MomentOrder) -> Result<MomentStats> {
    check_model(phi, prior, &[])?;
    let dims = phi.dims();
    let layout = MomentVectorLayout::new(&dims, order)?;
    let means = (0..phi.p())
        .map(|j| population_mean(phi, prior, j))
        .collect::<Result<Vec<_>>>()?;
    let mut raw = vec![0.0; layout.len()];
    for b in layout.pairs() {
        let block = population_pair_moment(phi, prior, b.j, b.t)?;
        raw[b.offset..b.offset + block.len()].copy_from_slice(&block);
    }
    for b in layout.triples() {
        let block = population_triple_moment(phi, prior, b.j, b.s, b.t)?;
        raw[b.offset..b.offset + block.len()].copy_from_slice(&block);
    }
    Ok(MomentStats::from_raw(0, prior.clone(), layout, means, raw))
}
