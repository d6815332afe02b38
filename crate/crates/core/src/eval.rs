//! Label alignment, parameter error and KL-based variable ranking.

use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset};
use crate::error::{MeldError, Result};
use crate::params::Phi;

/// Optimal relabelling of estimated components onto the true ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `permutation[h]` is the estimated component matched to true component `h`.
    pub permutation: Vec<usize>,
    /// `Σ_j Σ_h ‖φ̂_{j,τ(h)} − φ_jh‖²` at the optimum.
    pub error: f64,
}

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian method with
/// potentials, O(n³)). Returns `row_for_col[c]`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays; index 0 is the virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| p[j] - 1).collect()
}

fn check_same_shape(phi_hat: &Phi, phi_true: &Phi) -> Result<()> {
    if phi_hat.k() != phi_true.k() {
        return Err(MeldError::Dimension(format!(
            "estimate has k = {}, truth has k = {}",
            phi_hat.k(),
            phi_true.k()
        )));
    }
    if phi_hat.dims() != phi_true.dims() {
        return Err(MeldError::Dimension("estimate and truth differ in variable dimensions".into()));
    }
    Ok(())
}

fn column_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Squared error of matching estimated component `a` to true component `b`.
fn cost_matrix(phi_hat: &Phi, phi_true: &Phi) -> Vec<Vec<f64>> {
    let k = phi_hat.k();
    (0..k)
        .map(|a| {
            (0..k)
                .map(|b| (0..phi_hat.p()).map(|j| column_distance(phi_hat.col(j, a), phi_true.col(j, b))).sum())
                .collect()
        })
        .collect()
}

pub fn align_components(phi_hat: &Phi, phi_true: &Phi) -> Result<Alignment> {
    check_same_shape(phi_hat, phi_true)?;
    let cost = cost_matrix(phi_hat, phi_true);
    let permutation = min_cost_assignment(&cost);
    let error = permutation.iter().enumerate().map(|(b, &a)| cost[a][b]).sum();
    Ok(Alignment { permutation, error })
}

/// Aligned squared error per parameter, `error / Σ_j d_j·k`.
pub fn param_mse(phi_hat: &Phi, phi_true: &Phi, alignment: &Alignment) -> Result<f64> {
    check_same_shape(phi_hat, phi_true)?;
    let k = phi_true.k();
    let mut seen = vec![false; k];
    if alignment.permutation.len() != k
        || alignment.permutation.iter().any(|&a| a >= k || std::mem::replace(&mut seen[a], true))
    {
        return Err(MeldError::InvalidParameter("alignment is not a permutation of the components".into()));
    }
    let error: f64 = alignment
        .permutation
        .iter()
        .enumerate()
        .map(|(h, &a)| (0..phi_true.p()).map(|j| column_distance(phi_hat.col(j, a), phi_true.col(j, h))).sum::<f64>())
        .sum();
    Ok(error / phi_true.num_parameters() as f64)
}

/// Level counts of categorical variable `j`.
pub fn level_counts(dataset: &Dataset, j: usize) -> Result<Vec<usize>> {
    let var = dataset.schema().variable(j);
    match dataset.column(j) {
        Column::Categorical(levels) => {
            let mut counts = vec![0; var.dim()];
            for &l in levels {
                counts[l] += 1;
            }
            Ok(counts)
        }
        Column::Scalar(_) => Err(MeldError::InvalidParameter(format!("{:?} is not categorical", var.name))),
    }
}

/// Empirical level frequencies of categorical variable `j`.
pub fn marginal_frequency(dataset: &Dataset, j: usize) -> Result<Vec<f64>> {
    let counts = level_counts(dataset, j)?;
    if dataset.n() == 0 {
        return Err(MeldError::Precondition("marginal frequency of an empty dataset".into()));
    }
    let n = dataset.n() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// `(1/k) Σ_h KL(φ̂_jh ‖ marginal)` in nats; `+∞` when a component puts mass on
/// a level with zero marginal frequency.
pub fn ave_kl(components: &[Vec<f64>], marginal: &[f64]) -> f64 {
    let k = components.len() as f64;
    let total: f64 = components
        .iter()
        .map(|phi| {
            phi.iter()
                .zip(marginal)
                .map(|(&q, &m)| {
                    if q <= 0.0 {
                        0.0
                    } else if m <= 0.0 {
                        f64::INFINITY
                    } else {
                        q * (q / m).ln()
                    }
                })
                .sum::<f64>()
        })
        .sum();
    // rounding can leave a tiny negative for components equal to the marginal
    (total / k).max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlScore {
    /// 0-based variable index.
    pub variable: usize,
    pub name: String,
    pub ave_kl: f64,
}

impl KlScore {
    /// True when the score is the infinite sentinel.
    pub fn is_degenerate(&self) -> bool {
        self.ave_kl.is_infinite()
    }
}

/// Categorical variables sorted by decreasing averaged KL distance; ties keep
/// variable order.
pub fn rank_variables_by_kl(phi_hat: &Phi, dataset: &Dataset) -> Result<Vec<KlScore>> {
    phi_hat.check_shape(&dataset.schema().dims(), phi_hat.k())?;
    let mut scores = dataset
        .schema()
        .categorical_indices()
        .into_iter()
        .map(|j| {
            let marginal = marginal_frequency(dataset, j)?;
            Ok(KlScore {
                variable: j,
                name: dataset.schema().variable(j).name.clone(),
                ave_kl: ave_kl(phi_hat.variable(j), &marginal),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| b.ave_kl.total_cmp(&a.ave_kl).then(a.variable.cmp(&b.variable)));
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Schema, VariableSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for perm in permutations(k - 1) {
            for pos in 0..=perm.len() {
                let mut p = perm.clone();
                p.insert(pos, k - 1);
                out.push(p);
            }
        }
        out
    }

    fn brute_force(phi_hat: &Phi, phi_true: &Phi) -> f64 {
        permutations(phi_true.k())
            .into_iter()
            .map(|perm| {
                perm.iter()
                    .enumerate()
                    .map(|(h, &a)| (0..phi_true.p()).map(|j| column_distance(phi_hat.col(j, a), phi_true.col(j, h))).sum::<f64>())
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn phi_strategy(k: usize) -> impl Strategy<Value = Phi> {
        proptest::collection::vec(proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 3), k), 3)
            .prop_map(|c| Phi::new(c).unwrap())
    }

    #[test]
    fn identical_and_swapped() {
        let phi = Phi::new(vec![
            vec![vec![0.1, 0.9], vec![0.6, 0.4]],
            vec![vec![2.0], vec![-1.0]],
        ])
        .unwrap();
        let a = align_components(&phi, &phi).unwrap();
        assert_eq!(a.permutation, vec![0, 1]);
        assert_eq!(a.error, 0.0);
        assert_eq!(param_mse(&phi, &phi, &a).unwrap(), 0.0);
        let swapped = phi.permuted(&[1, 0]);
        let a = align_components(&swapped, &phi).unwrap();
        assert_eq!(a.permutation, vec![1, 0]);
        assert_eq!(a.error, 0.0);
    }

    #[test]
    fn scalar_mse_by_hand() {
        let hat = Phi::new(vec![vec![vec![2.0]]]).unwrap();
        let truth = Phi::new(vec![vec![vec![3.0]]]).unwrap();
        let a = align_components(&hat, &truth).unwrap();
        assert_eq!(param_mse(&hat, &truth, &a).unwrap(), 1.0);
    }

    #[test]
    fn k_mismatch() {
        let a = Phi::new(vec![vec![vec![1.0], vec![2.0]]]).unwrap();
        let b = Phi::new(vec![vec![vec![1.0]]]).unwrap();
        assert!(align_components(&a, &b).is_err());
    }

    proptest! {
        #[test]
        fn assignment_matches_exhaustive_search((hat, truth) in (1usize..=5).prop_flat_map(|k| (phi_strategy(k), phi_strategy(k)))) {
            prop_assume!(hat.dims() == truth.dims());
            let a = align_components(&hat, &truth).unwrap();
            prop_assert!((a.error - brute_force(&hat, &truth)).abs() < 1e-12);
        }

        #[test]
        fn mse_absorbs_relabelling(hat in phi_strategy(3), seed in 0usize..6) {
            let truth = Phi::new(hat.as_nested().iter().map(|v| v.iter().map(|c| c.iter().map(|x| x * 0.5 + 0.1).collect()).collect()).collect()).unwrap();
            let perm = permutations(3)[seed].clone();
            let m1 = param_mse(&hat, &truth, &align_components(&hat, &truth).unwrap()).unwrap();
            let (ph, pt) = (hat.permuted(&perm), truth.permuted(&perm));
            let m2 = param_mse(&ph, &pt, &align_components(&ph, &pt).unwrap()).unwrap();
            prop_assert!((m1 - m2).abs() < 1e-14);
        }

        #[test]
        fn ave_kl_nonnegative_and_label_invariant(
            raw in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 4), 1..5),
            m in proptest::collection::vec(0.01f64..1.0, 4),
        ) {
            let comps: Vec<Vec<f64>> = raw.iter().map(|c| { let s: f64 = c.iter().sum(); c.iter().map(|x| x / s).collect() }).collect();
            let s: f64 = m.iter().sum();
            let marginal: Vec<f64> = m.iter().map(|x| x / s).collect();
            let kl = ave_kl(&comps, &marginal);
            prop_assert!(kl >= 0.0);
            let mut rev = comps.clone();
            rev.reverse();
            prop_assert!((ave_kl(&rev, &marginal) - kl).abs() < 1e-12);
        }
    }

    #[test]
    fn ave_kl_examples() {
        let marginal = vec![0.5, 0.5];
        assert_eq!(ave_kl(&[marginal.clone(), marginal.clone()], &marginal), 0.0);
        let kl = ave_kl(&[vec![1.0, 0.0], vec![0.0, 1.0]], &marginal);
        assert_abs_diff_eq!(kl, std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(ave_kl(&[vec![0.5, 0.5]], &[1.0, 0.0]).is_infinite());
    }

    #[test]
    fn marginal_frequency_examples() {
        let levels: Vec<String> = ["A", "C", "G", "T"].iter().map(|s| s.to_string()).collect();
        let schema = Schema::new(vec![
            VariableSpec::categorical("x", levels),
            VariableSpec::categorical("y", vec!["a".into(), "b".into()]),
            VariableSpec::continuous("z"),
        ])
        .unwrap();
        let data = Dataset::new(
            schema,
            vec![
                Column::Categorical(vec![1; 7]),
                Column::Categorical(vec![0, 1, 0, 1, 1, 0, 1]),
                Column::Scalar(vec![0.0; 7]),
            ],
        )
        .unwrap();
        assert_eq!(marginal_frequency(&data, 0).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
        let counts = level_counts(&data, 1).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), data.n());
        let f = marginal_frequency(&data, 1).unwrap();
        assert!((f.iter().sum::<f64>() - 1.0).abs() <= f64::EPSILON);
        assert!(marginal_frequency(&data, 2).is_err());

        let balanced = Dataset::new(
            data.schema().clone(),
            vec![
                Column::Categorical(vec![0, 1]),
                Column::Categorical(vec![0, 1]),
                Column::Scalar(vec![0.0; 2]),
            ],
        )
        .unwrap();
        assert_eq!(marginal_frequency(&balanced, 1).unwrap(), vec![0.5, 0.5]);

        let phi = Phi::new(vec![
            vec![vec![0.5, 0.5, 0.0, 0.0], vec![0.5, 0.5, 0.0, 0.0]],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            vec![vec![0.0], vec![1.0]],
        ])
        .unwrap();
        let ranking = rank_variables_by_kl(&phi, &balanced).unwrap();
        assert_eq!(ranking.len(), 2);
        assert_eq!(ranking[0].variable, 1);
        assert_eq!(ranking[1].ave_kl, 0.0);
        let spread = Phi::new(vec![
            vec![vec![0.25; 4], vec![0.25; 4]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.0], vec![1.0]],
        ])
        .unwrap();
        let ranking = rank_variables_by_kl(&spread, &balanced).unwrap();
        assert!(ranking[0].is_degenerate());
        assert_eq!(ranking[0].variable, 0);
    }
}
