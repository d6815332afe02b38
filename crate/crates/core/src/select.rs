//! Fitness index and selection of the number of components.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{MeldError, Result};
use crate::estimator::{fit, FitConfig, FitReport, DEFAULT_ALPHA};
use crate::gmm::Weights;
use crate::layout::MomentOrder;
use crate::moments::MomentStats;

/// `FI = 1 − Q / (eᵀ A e)` with `e` the stacked targets of the given order.
pub fn fitness_index(q: f64, stats: &MomentStats, weights: &Weights, order: MomentOrder) -> Result<f64> {
    if order > stats.order() {
        return Err(MeldError::Precondition(format!(
            "order-{order} fitness index needs order-{order} statistics"
        )));
    }
    let len = stats.layout().len_for(order);
    weights.check_len(len)?;
    let scale: f64 = stats.targets()[..len]
        .iter()
        .enumerate()
        .map(|(c, e)| weights.get(c) * e * e)
        .sum();
    if !(scale > 0.0) {
        return Err(MeldError::Numerical(
            "fitness index undefined: weighted target norm is zero".into(),
        ));
    }
    Ok(1.0 - q / scale)
}

/// Which fitness index drives the choice of k.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    #[default]
    Stage1,
    Stage2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub k: usize,
    pub fi_stage1: Option<f64>,
    pub fi_stage2: Option<f64>,
    pub sweeps_stage1: Option<usize>,
    pub sweeps_stage2: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub order: MomentOrder,
    pub criterion: Criterion,
    pub seed: u64,
    pub entries: Vec<SelectionEntry>,
    pub chosen_k: usize,
    #[serde(skip)]
    pub fits: Vec<Option<FitReport>>,
}

impl SelectionReport {
    pub fn fit_for(&self, k: usize) -> Option<&FitReport> {
        self.entries
            .iter()
            .position(|e| e.k == k)
            .and_then(|i| self.fits.get(i))
            .and_then(Option::as_ref)
    }

    /// Delimited table `k, fi_stage1, fi_stage2, sweeps_stage1, sweeps_stage2, converged, error`.
    pub fn to_table(&self) -> String {
        let fmt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
        let mut out = String::from("k,fi_stage1,fi_stage2,sweeps_stage1,sweeps_stage2,converged,error\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                e.k,
                fmt(e.fi_stage1),
                fmt(e.fi_stage2),
                e.sweeps_stage1.map(|s| s.to_string()).unwrap_or_default(),
                e.sweeps_stage2.map(|s| s.to_string()).unwrap_or_default(),
                e.converged.map(|c| c.to_string()).unwrap_or_default(),
                e.error.as_deref().unwrap_or("").replace(',', ";"),
            ));
        }
        out
    }
}

fn alpha_for(base: &FitConfig, k: usize) -> Result<Option<Vec<f64>>> {
    match &base.alpha {
        None => Ok(Some(vec![DEFAULT_ALPHA; k])),
        Some(a) if a.len() == k => Ok(Some(a.clone())),
        // a symmetric α given once is reused per component for every k
        Some(a) if !a.is_empty() && a.iter().all(|&x| x == a[0]) => Ok(Some(vec![a[0]; k])),
        Some(a) => Err(MeldError::InvalidParameter(format!(
            "asymmetric α of length {} cannot be used for k = {k}",
            a.len()
        ))),
    }
}

/// Fits every `k` in `k_values` (concurrently) and picks the one maximising the
/// criterion's fitness index; ties go to the smaller k.
pub fn sweep_k(dataset: &Dataset, k_values: &[usize], config: &FitConfig, criterion: Criterion) -> Result<SelectionReport> {
    if k_values.is_empty() {
        return Err(MeldError::InvalidParameter("no candidate k values".into()));
    }
    if criterion == Criterion::Stage2 && !config.two_stage {
        return Err(MeldError::InvalidParameter(
            "stage-2 criterion requires two-stage fitting".into(),
        ));
    }
    let mut ks = k_values.to_vec();
    ks.sort_unstable();
    ks.dedup();

    let results: Vec<Result<FitReport>> = ks
        .par_iter()
        .map(|&k| {
            let mut cfg = config.clone();
            cfg.k = k;
            cfg.alpha = alpha_for(config, k)?;
            fit(dataset, &cfg)
        })
        .collect();

    let mut entries = Vec::with_capacity(ks.len());
    let mut fits = Vec::with_capacity(ks.len());
    for (&k, result) in ks.iter().zip(results) {
        match result {
            Ok(report) => {
                let s1 = report.stage(1);
                let s2 = report.stage(2);
                entries.push(SelectionEntry {
                    k,
                    fi_stage1: s1.map(|s| s.fitness_index),
                    fi_stage2: s2.map(|s| s.fitness_index),
                    sweeps_stage1: s1.map(|s| s.sweeps),
                    sweeps_stage2: s2.map(|s| s.sweeps),
                    converged: Some(report.stages.iter().all(|s| s.converged)),
                    error: None,
                });
                fits.push(Some(report));
            }
            Err(err) => {
                log::warn!("fit with k = {k} failed: {err}");
                entries.push(SelectionEntry {
                    k,
                    fi_stage1: None,
                    fi_stage2: None,
                    sweeps_stage1: None,
                    sweeps_stage2: None,
                    converged: None,
                    error: Some(err.to_string()),
                });
                fits.push(None);
            }
        }
    }

    let mut chosen: Option<(usize, f64)> = None;
    for e in &entries {
        let fi = match criterion {
            Criterion::Stage1 => e.fi_stage1,
            Criterion::Stage2 => e.fi_stage2,
        };
        if let Some(fi) = fi.filter(|v| v.is_finite()) {
            if chosen.is_none_or(|(_, best)| fi > best) {
                chosen = Some((e.k, fi));
            }
        }
    }
    let (chosen_k, _) = chosen.ok_or_else(|| {
        MeldError::Numerical(format!(
            "every candidate fit failed: {}",
            entries
                .iter()
                .filter_map(|e| e.error.as_deref())
                .collect::<Vec<_>>()
                .join("; ")
        ))
    })?;

    Ok(SelectionReport {
        order: config.order,
        criterion,
        seed: config.seed,
        entries,
        chosen_k,
        fits,
    })
}
