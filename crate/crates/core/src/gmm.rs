//! Per-sample stacked moment vectors and the diagonal second-stage weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MeldError, Result};
use crate::layout::MomentOrder;
use crate::moments::{pairwise_reduce, LambdaDiagonals, MomentStats};
use crate::params::Phi;

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-8;

/// Diagonal of the weight matrix `A_n`, one entry per moment coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub order: MomentOrder,
    pub values: Vec<f64>,
}

/// Weighting used by the quadratic objective.
#[derive(Clone, Debug, PartialEq)]
pub enum Weights {
    Identity,
    Diagonal(WeightVector),
}

impl Weights {
    #[inline]
    pub fn get(&self, coord: usize) -> f64 {
        match self {
            Weights::Identity => 1.0,
            Weights::Diagonal(w) => w.values[coord],
        }
    }

    /// Multiplies every weight by `factor` (identity becomes diagonal).
    pub fn scaled(&self, factor: f64, len: usize, order: MomentOrder) -> Weights {
        let values = match self {
            Weights::Identity => vec![factor; len],
            Weights::Diagonal(w) => w.values.iter().map(|x| x * factor).collect(),
        };
        Weights::Diagonal(WeightVector { order, values })
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        match self {
            Weights::Diagonal(w) if w.values.len() < len => Err(MeldError::Dimension(format!(
                "{} weights for a moment vector of length {len}",
                w.values.len()
            ))),
            _ => Ok(()),
        }
    }
}

fn check_conformable(phi: &Phi, stats: &MomentStats, lambda: &LambdaDiagonals, order: MomentOrder) -> Result<()> {
    phi.check_shape(stats.layout().dims(), phi.k())?;
    if lambda.second.len() != phi.k() || lambda.third.len() != phi.k() {
        return Err(MeldError::Dimension(format!(
            "Λ has {} entries for k = {}",
            lambda.second.len(),
            phi.k()
        )));
    }
    if order > stats.order() {
        return Err(MeldError::Precondition(format!(
            "order-{order} moment vector requested from order-{} statistics",
            stats.order()
        )));
    }
    Ok(())
}

/// Sample-independent part of the stacked moment vector: the `μ̂`-only terms
/// minus the model products `Φ_j Λ² Φ_tᵀ`, `Λ³ ×₁ Φ_j ×₂ Φ_s ×₃ Φ_t`.
fn constant_part(phi: &Phi, stats: &MomentStats, lambda: &LambdaDiagonals, order: MomentOrder) -> Vec<f64> {
    let layout = stats.layout();
    let dims = layout.dims();
    let a0 = stats.prior().alpha0();
    let a2 = a0 / (a0 + 1.0);
    let c3 = 2.0 * a0 * a0 / ((a0 + 1.0) * (a0 + 2.0));
    let k = phi.k();
    let mut out = vec![0.0; layout.len_for(order)];
    for b in layout.pairs() {
        let (mj, mt) = (stats.mean(b.j), stats.mean(b.t));
        for ct in 0..dims[b.t] {
            for cj in 0..dims[b.j] {
                let model: f64 = (0..k)
                    .map(|h| lambda.second[h] * phi.col(b.j, h)[cj] * phi.col(b.t, h)[ct])
                    .sum();
                out[b.offset + cj + dims[b.j] * ct] = -a2 * mj[cj] * mt[ct] - model;
            }
        }
    }
    if order == MomentOrder::Third {
        for b in layout.triples() {
            let (mj, ms, mt) = (stats.mean(b.j), stats.mean(b.s), stats.mean(b.t));
            let (dj, ds) = (dims[b.j], dims[b.s]);
            for ct in 0..dims[b.t] {
                for cs in 0..ds {
                    for cj in 0..dj {
                        let model: f64 = (0..k)
                            .map(|h| {
                                lambda.third[h] * phi.col(b.j, h)[cj] * phi.col(b.s, h)[cs] * phi.col(b.t, h)[ct]
                            })
                            .sum();
                        out[b.offset + cj + dj * (cs + ds * ct)] = c3 * mj[cj] * ms[cs] * mt[ct] - model;
                    }
                }
            }
        }
    }
    out
}

/// Adds the sample-dependent part of `f(y_i, Φ)` to `buf`.
fn add_sample_part(buf: &mut [f64], i: usize, dataset: &Dataset, stats: &MomentStats, order: MomentOrder, row: &mut [(usize, f64)]) {
    let layout = stats.layout();
    let dims = layout.dims();
    for (j, slot) in row.iter_mut().enumerate() {
        *slot = dataset.sparse(i, j);
    }
    for b in layout.pairs() {
        let (cj, vj) = row[b.j];
        let (ct, vt) = row[b.t];
        buf[b.offset + cj + dims[b.j] * ct] += vj * vt;
    }
    if order == MomentOrder::Third {
        let a0 = stats.prior().alpha0();
        let a3 = a0 / (a0 + 2.0);
        for b in layout.triples() {
            let (dj, ds, dt) = (dims[b.j], dims[b.s], dims[b.t]);
            let (cj, vj) = row[b.j];
            let (cs, vs) = row[b.s];
            let (ct, vt) = row[b.t];
            let at = |xj: usize, xs: usize, xt: usize| b.offset + xj + dj * (xs + ds * xt);
            buf[at(cj, cs, ct)] += vj * vs * vt;
            let (mj, ms, mt) = (stats.mean(b.j), stats.mean(b.s), stats.mean(b.t));
            for (x, m) in mt.iter().enumerate().take(dt) {
                buf[at(cj, cs, x)] -= a3 * vj * vs * m;
            }
            for (x, m) in mj.iter().enumerate().take(dj) {
                buf[at(x, cs, ct)] -= a3 * m * vs * vt;
            }
            for (x, m) in ms.iter().enumerate().take(ds) {
                buf[at(cj, x, ct)] -= a3 * vj * m * vt;
            }
        }
    }
}

/// `f(y_i, Φ)` with `μ̂` substituted for `μ`, truncated to `order`.
pub fn stack_moment_vector(
    sample_index: usize,
    dataset: &Dataset,
    phi: &Phi,
    stats: &MomentStats,
    lambda: &LambdaDiagonals,
    order: MomentOrder,
) -> Result<Vec<f64>> {
    check_conformable(phi, stats, lambda, order)?;
    if dataset.schema().dims() != stats.layout().dims() {
        return Err(MeldError::Dimension("dataset does not match the statistics layout".into()));
    }
    if sample_index >= dataset.n() {
        return Err(MeldError::InvalidParameter(format!(
            "sample {sample_index} out of range for n = {}",
            dataset.n()
        )));
    }
    let mut buf = constant_part(phi, stats, lambda, order);
    let mut row = vec![(0, 0.0); dataset.p()];
    add_sample_part(&mut buf, sample_index, dataset, stats, order, &mut row);
    Ok(buf)
}

#[derive(Clone)]
struct Moments {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn push(&mut self, x: &[f64]) {
        self.count += 1.0;
        let inv = 1.0 / self.count;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta * inv;
            *s += delta * (v - *m);
        }
    }

    fn merge(mut self, other: &Moments) -> Moments {
        if other.count == 0.0 {
            return self;
        }
        let total = self.count + other.count;
        let wa = self.count * other.count / total;
        for c in 0..self.mean.len() {
            let delta = other.mean[c] - self.mean[c];
            self.mean[c] += delta * other.count / total;
            self.m2[c] += other.m2[c] + delta * delta * wa;
        }
        self.count = total;
        self
    }
}

/// Per-coordinate variance (divisor n, centred at the sample mean) of the
/// stacked moment vectors evaluated at `phi`.
pub fn estimate_diag_s(
    dataset: &Dataset,
    phi: &Phi,
    stats: &MomentStats,
    lambda: &LambdaDiagonals,
    order: MomentOrder,
) -> Result<Vec<f64>> {
    check_conformable(phi, stats, lambda, order)?;
    let n = dataset.n();
    if n < 2 {
        return Err(MeldError::Precondition(format!(
            "variance estimation needs at least 2 samples, found {n}"
        )));
    }
    if dataset.schema().dims() != stats.layout().dims() {
        return Err(MeldError::Dimension("dataset does not match the statistics layout".into()));
    }
    let constant = constant_part(phi, stats, lambda, order);
    let len = constant.len();
    let chunk = n.div_ceil(16).max(64);
    let ranges: Vec<(usize, usize)> = (0..n).step_by(chunk).map(|a| (a, (a + chunk).min(n))).collect();
    let partials: Vec<Moments> = ranges
        .par_iter()
        .map(|&(start, end)| {
            let mut acc = Moments {
                count: 0.0,
                mean: vec![0.0; len],
                m2: vec![0.0; len],
            };
            let mut buf = vec![0.0; len];
            let mut row = vec![(0, 0.0); dataset.p()];
            for i in start..end {
                buf.copy_from_slice(&constant);
                add_sample_part(&mut buf, i, dataset, stats, order, &mut row);
                acc.push(&buf);
            }
            acc
        })
        .collect();
    let total = pairwise_reduce(partials, Moments::merge).expect("n >= 2");
    Ok(total.m2.into_iter().map(|s| (s / total.count).max(0.0)).collect())
}

/// `w_c = 1 / max(S_cc, floor)`.
pub fn weights_from_s(diag_s: &[f64], floor: f64, order: MomentOrder) -> Result<WeightVector> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(MeldError::InvalidParameter(format!(
            "variance floor must be positive, got {floor}"
        )));
    }
    if let Some(v) = diag_s.iter().find(|v| !v.is_finite()) {
        return Err(MeldError::Numerical(format!("non-finite variance {v}")));
    }
    Ok(WeightVector {
        order,
        values: diag_s.iter().map(|&s| 1.0 / s.max(floor)).collect(),
    })
}
