use serde::{Deserialize, Serialize};

use crate::error::{MeldError, Result};
use crate::moments::{DirichletPrior, LambdaDiagonals};

/// Component mean parameters `Φ`, indexed as `phi[j][h][c]`: variable `j`,
/// component `h`, cell `c < d_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Phi(Vec<Vec<Vec<f64>>>);

impl Phi {
    pub fn new(components: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let k = components.first().map_or(0, Vec::len);
        if k == 0 {
            return Err(MeldError::Dimension("Φ needs at least one variable and one component".into()));
        }
        for (j, var) in components.iter().enumerate() {
            if var.len() != k {
                return Err(MeldError::Dimension(format!(
                    "variable {j} has {} components, expected {k}",
                    var.len()
                )));
            }
            let d = var[0].len();
            if d == 0 || var.iter().any(|col| col.len() != d) {
                return Err(MeldError::Dimension(format!(
                    "variable {j} has ragged or empty component columns"
                )));
            }
            if var.iter().flatten().any(|x| !x.is_finite()) {
                return Err(MeldError::Numerical(format!("variable {j} has a non-finite entry")));
            }
        }
        Ok(Self(components))
    }

    pub fn zeros(dims: &[usize], k: usize) -> Self {
        Self(dims.iter().map(|&d| vec![vec![0.0; d]; k]).collect())
    }

    pub fn p(&self) -> usize {
        self.0.len()
    }

    pub fn k(&self) -> usize {
        self.0[0].len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.0.iter().map(|var| var[0].len()).collect()
    }

    pub fn dim(&self, j: usize) -> usize {
        self.0[j][0].len()
    }

    /// Column `φ_jh`.
    #[inline]
    pub fn col(&self, j: usize, h: usize) -> &[f64] {
        &self.0[j][h]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize, h: usize) -> &mut Vec<f64> {
        &mut self.0[j][h]
    }

    pub fn variable(&self, j: usize) -> &[Vec<f64>] {
        &self.0[j]
    }

    pub fn as_nested(&self) -> &[Vec<Vec<f64>>] {
        &self.0
    }

    /// Relabels components so that new component `h` is old component `perm[h]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self(
            self.0
                .iter()
                .map(|var| perm.iter().map(|&h| var[h].clone()).collect())
                .collect(),
        )
    }

    /// Total number of scalar parameters `Σ_j d_j·k`.
    pub fn num_parameters(&self) -> usize {
        self.dims().iter().sum::<usize>() * self.k()
    }

    /// Checks conformity with schema dimensions and component count.
    pub fn check_shape(&self, dims: &[usize], k: usize) -> Result<()> {
        if self.dims() != dims || self.k() != k {
            return Err(MeldError::Dimension(format!(
                "Φ has dims {:?} with k = {}, expected {:?} with k = {k}",
                self.dims(),
                self.k(),
                dims
            )));
        }
        Ok(())
    }
}

/// Φ together with the Dirichlet prior and its derived diagonals.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub phi: Phi,
    pub prior: DirichletPrior,
    pub lambda: LambdaDiagonals,
}

impl ModelParams {
    pub fn new(phi: Phi, prior: DirichletPrior) -> Result<Self> {
        if phi.k() != prior.k() {
            return Err(MeldError::Dimension(format!(
                "Φ has {} components but α has {}",
                phi.k(),
                prior.k()
            )));
        }
        let lambda = prior.lambda_diagonals();
        Ok(Self { phi, prior, lambda })
    }
}
