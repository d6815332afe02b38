//! Sampling from the generative model
//!
//! ```text
//! x_i ~ Dir(α),  m_ij | x_i ~ Multi(x_i),  y_ij | m_ij = h ~ g_j(φ_jh)
//! ```
//!
//! with multinomial, Gaussian and Poisson emissions. Every sample draws from
//! its own ChaCha stream `(seed, i)`, so output is identical whether or not
//! sampling runs in parallel.

use std::collections::HashSet;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset, Schema, VariableSpec};
use crate::error::{MeldError, Result};
use crate::params::Phi;

fn unit_sd() -> f64 {
    1.0
}

/// Component-specific emission of one variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "emission", rename_all = "lowercase")]
pub enum Emission {
    Multinomial {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        levels: Option<Vec<String>>,
        /// One probability vector per component.
        components: Vec<Vec<f64>>,
    },
    Normal {
        means: Vec<f64>,
        #[serde(default = "unit_sd")]
        sd: f64,
    },
    Poisson {
        rates: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableEmission {
    pub name: String,
    #[serde(flatten)]
    pub emission: Emission,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerativeSpec {
    pub alpha: Vec<f64>,
    #[serde(rename = "variable")]
    pub variables: Vec<VariableEmission>,
}

impl GenerativeSpec {
    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let bad = |msg: String| Err(MeldError::InvalidParameter(msg));
        if k == 0 {
            return bad("α must be non-empty".into());
        }
        if self.alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return bad("α entries must be positive".into());
        }
        if self.variables.is_empty() {
            return bad("spec declares no variables".into());
        }
        let mut names = HashSet::new();
        for var in &self.variables {
            if !names.insert(var.name.as_str()) {
                return bad(format!("duplicate variable {:?}", var.name));
            }
            match &var.emission {
                Emission::Multinomial { levels, components } => {
                    if components.len() != k {
                        return bad(format!("{:?}: {} components for k = {k}", var.name, components.len()));
                    }
                    let d = components[0].len();
                    if d < 2 {
                        return bad(format!("{:?}: multinomial needs at least 2 levels", var.name));
                    }
                    for col in components {
                        if col.len() != d {
                            return bad(format!("{:?}: ragged component vectors", var.name));
                        }
                        let total: f64 = col.iter().sum();
                        if col.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                            return bad(format!("{:?}: component is not a probability vector", var.name));
                        }
                    }
                    if let Some(levels) = levels {
                        if levels.len() != d {
                            return bad(format!("{:?}: {} level labels for {d} levels", var.name, levels.len()));
                        }
                    }
                }
                Emission::Normal { means, sd } => {
                    if means.len() != k || means.iter().any(|m| !m.is_finite()) {
                        return bad(format!("{:?}: need {k} finite means", var.name));
                    }
                    if !(sd.is_finite() && *sd > 0.0) {
                        return bad(format!("{:?}: sd must be positive", var.name));
                    }
                }
                Emission::Poisson { rates } => {
                    if rates.len() != k || rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
                        return bad(format!("{:?}: need {k} positive rates", var.name));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::new(
            self.variables
                .iter()
                .map(|v| match &v.emission {
                    Emission::Multinomial { levels, components } => VariableSpec::categorical(
                        v.name.clone(),
                        levels
                            .clone()
                            .unwrap_or_else(|| (1..=components[0].len()).map(|c| c.to_string()).collect()),
                    ),
                    Emission::Normal { .. } => VariableSpec::continuous(v.name.clone()),
                    Emission::Poisson { .. } => VariableSpec::count(v.name.clone()),
                })
                .collect(),
        )
    }

    /// Component means Φ implied by the emissions.
    pub fn true_phi(&self) -> Result<Phi> {
        Phi::new(
            self.variables
                .iter()
                .map(|v| match &v.emission {
                    Emission::Multinomial { components, .. } => components.clone(),
                    Emission::Normal { means, .. } => means.iter().map(|&m| vec![m]).collect(),
                    Emission::Poisson { rates } => rates.iter().map(|&r| vec![r]).collect(),
                })
                .collect(),
        )
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serialisation cannot fail")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// A simulated dataset with its latent ground truth. Memberships are 0-based.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub proportions: Vec<Vec<f64>>,
    pub memberships: Vec<Vec<usize>>,
    pub spec: GenerativeSpec,
    pub seed: u64,
    /// Number of categorical cells redrawn by [`contaminate`].
    pub contaminated_cells: usize,
}

/// Serializable ground-truth sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub alpha: Vec<f64>,
    pub phi: Phi,
    pub contaminated_cells: usize,
    pub proportions: Vec<Vec<f64>>,
    pub memberships: Vec<Vec<usize>>,
}

impl SimulatedData {
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        Ok(GroundTruth {
            seed: self.seed,
            alpha: self.spec.alpha.clone(),
            phi: self.spec.true_phi()?,
            contaminated_cells: self.contaminated_cells,
            proportions: self.proportions.clone(),
            memberships: self.memberships.clone(),
        })
    }
}

/// Draws from a Dirichlet with arbitrary (runtime) dimension by normalising gammas.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let gammas: Vec<Gamma<f64>> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("validated positive shape"))
        .collect();
    loop {
        let draws: Vec<f64> = gammas.iter().map(|g| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // all-zero underflow is possible for tiny shapes; redraw
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|x| x / total).collect();
        }
    }
}

fn sample_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

enum Sampler {
    Categorical(Vec<WeightedIndex<f64>>),
    Normal(Vec<Normal<f64>>),
    Poisson(Vec<Poisson<f64>>),
}

impl Sampler {
    fn build(spec: &GenerativeSpec) -> Result<Vec<Sampler>> {
        spec.variables
            .iter()
            .map(|v| {
                Ok(match &v.emission {
                    Emission::Multinomial { components, .. } => Sampler::Categorical(
                        components
                            .iter()
                            .map(|c| WeightedIndex::new(c).map_err(|e| MeldError::InvalidParameter(e.to_string())))
                            .collect::<Result<_>>()?,
                    ),
                    Emission::Normal { means, sd } => Sampler::Normal(
                        means
                            .iter()
                            .map(|&m| Normal::new(m, *sd).map_err(|e| MeldError::InvalidParameter(e.to_string())))
                            .collect::<Result<_>>()?,
                    ),
                    Emission::Poisson { rates } => Sampler::Poisson(
                        rates
                            .iter()
                            .map(|&r| Poisson::new(r).map_err(|e| MeldError::InvalidParameter(e.to_string())))
                            .collect::<Result<_>>()?,
                    ),
                })
            })
            .collect()
    }
}

enum Draw {
    Level(usize),
    Value(f64),
}

struct Row {
    x: Vec<f64>,
    m: Vec<usize>,
    y: Vec<Draw>,
}

fn draw_row(samplers: &[Sampler], x: Vec<f64>, rng: &mut ChaCha8Rng, pure: Option<usize>) -> Row {
    let members = pure.is_none().then(|| WeightedIndex::new(&x).expect("proportions sum to one"));
    let mut m = Vec::with_capacity(samplers.len());
    let mut y = Vec::with_capacity(samplers.len());
    for sampler in samplers {
        let h = match (&members, pure) {
            (_, Some(g)) => g,
            (Some(dist), None) => dist.sample(rng),
            (None, None) => unreachable!(),
        };
        m.push(h);
        y.push(match sampler {
            Sampler::Categorical(d) => Draw::Level(d[h].sample(rng)),
            Sampler::Normal(d) => Draw::Value(d[h].sample(rng)),
            Sampler::Poisson(d) => Draw::Value(d[h].sample(rng)),
        });
    }
    Row { x, m, y }
}

fn assemble(spec: &GenerativeSpec, rows: Vec<Row>, seed: u64) -> Result<SimulatedData> {
    let schema = spec.schema()?;
    let mut columns: Vec<Column> = schema
        .variables()
        .iter()
        .map(|v| {
            if v.is_categorical() {
                Column::Categorical(Vec::with_capacity(rows.len()))
            } else {
                Column::Scalar(Vec::with_capacity(rows.len()))
            }
        })
        .collect();
    let mut proportions = Vec::with_capacity(rows.len());
    let mut memberships = Vec::with_capacity(rows.len());
    for row in rows {
        for (col, draw) in columns.iter_mut().zip(row.y) {
            match (col, draw) {
                (Column::Categorical(c), Draw::Level(l)) => c.push(l),
                (Column::Scalar(c), Draw::Value(v)) => c.push(v),
                _ => unreachable!("sampler follows the schema kind"),
            }
        }
        proportions.push(row.x);
        memberships.push(row.m);
    }
    Ok(SimulatedData {
        dataset: Dataset::new(schema, columns)?,
        proportions,
        memberships,
        spec: spec.clone(),
        seed,
        contaminated_cells: 0,
    })
}

/// `n` samples from the mixed-membership model, deterministic in `seed`.
pub fn sample_dataset(spec: &GenerativeSpec, n: usize, seed: u64) -> Result<SimulatedData> {
    spec.validate()?;
    if n < 1 {
        return Err(MeldError::InvalidParameter("n must be at least 1".into()));
    }
    let samplers = Sampler::build(spec)?;
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let x = sample_dirichlet(&spec.alpha, &mut rng);
            draw_row(&samplers, x, &mut rng, None)
        })
        .collect();
    assemble(spec, rows, seed)
}

/// Two pure groups: the first `n/2` samples belong entirely to component 1,
/// the rest to component 2.
pub fn sample_two_group_dataset(spec: &GenerativeSpec, n: usize, seed: u64) -> Result<SimulatedData> {
    spec.validate()?;
    if spec.k() != 2 {
        return Err(MeldError::InvalidParameter(format!(
            "two-group sampling needs k = 2, spec has k = {}",
            spec.k()
        )));
    }
    if n == 0 || !n.is_multiple_of(2) {
        return Err(MeldError::InvalidParameter(format!("n must be positive and even, got {n}")));
    }
    let samplers = Sampler::build(spec)?;
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let g = if i < n / 2 { 0 } else { 1 };
            let mut x = vec![0.0; 2];
            x[g] = 1.0;
            draw_row(&samplers, x, &mut rng, Some(g))
        })
        .collect();
    assemble(spec, rows, seed)
}

/// Replaces `⌊fraction · N⌋` categorical cells, chosen without replacement
/// among all `N` categorical cells, with uniform draws over the variable's levels.
pub fn contaminate(data: &SimulatedData, fraction: f64, seed: u64) -> Result<SimulatedData> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(MeldError::InvalidParameter(format!(
            "contamination fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let mut out = data.clone();
    let n = data.dataset.n();
    let categorical = data.dataset.schema().categorical_indices();
    let dims = data.dataset.schema().dims();
    let total = n * categorical.len();
    let count = (fraction * total as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, total, count).into_vec();
    chosen.sort_unstable();
    let columns = out.dataset.columns_mut();
    for cell in chosen {
        let j = categorical[cell / n];
        let i = cell % n;
        if let Column::Categorical(levels) = &mut columns[j] {
            levels[i] = rng.random_range(0..dims[j]);
        }
    }
    out.contaminated_cells += count;
    Ok(out)
}

/// Preset generative specs for the categorical and quantitative-trait studies.
pub mod presets {
    use super::*;

    /// 1-based indices of the trait-associated loci.
    pub const INFORMATIVE_LOCI: [usize; 8] = [2, 4, 12, 14, 32, 34, 42, 44];
    pub const NUM_LOCI: usize = 50;

    /// `p` categorical variables with `d` levels, each component vector drawn from
    /// a symmetric Dirichlet with the given concentration; symmetric α.
    pub fn categorical(p: usize, d: usize, k: usize, alpha: f64, concentration: f64, seed: u64) -> Result<GenerativeSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conc = vec![concentration; d];
        let spec = GenerativeSpec {
            alpha: vec![alpha; k],
            variables: (1..=p)
                .map(|j| VariableEmission {
                    name: format!("v{j}"),
                    emission: Emission::Multinomial {
                        levels: None,
                        components: (0..k).map(|_| sample_dirichlet(&conc, &mut rng)).collect(),
                    },
                })
                .collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The categorical study: 20 variables, 4 levels, 3 components, α = 0.1, φ ~ Dir(0.5).
    pub fn categorical_study(seed: u64) -> Result<GenerativeSpec> {
        categorical(20, 4, 3, 0.1, 0.5, seed)
    }

    #[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
    #[serde(rename_all = "lowercase")]
    pub enum TraitKind {
        Gaussian,
        Poisson,
    }

    /// 50 nucleotide loci plus one trait, k = 2. Informative loci draw both
    /// component vectors from Dir(0.5, 0.5, 0.5, 0.5); the rest are uniform.
    /// The trait is N(−3, 1) / N(3, 1) or Poisson(5) / Poisson(10).
    pub fn trait_study(kind: TraitKind, seed: u64) -> Result<GenerativeSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nucleotides: Vec<String> = ["A", "C", "G", "T"].iter().map(|s| s.to_string()).collect();
        let mut variables: Vec<VariableEmission> = (1..=NUM_LOCI)
            .map(|locus| {
                let components = if INFORMATIVE_LOCI.contains(&locus) {
                    (0..2).map(|_| sample_dirichlet(&[0.5; 4], &mut rng)).collect()
                } else {
                    vec![vec![0.25; 4]; 2]
                };
                VariableEmission {
                    name: format!("locus{locus}"),
                    emission: Emission::Multinomial {
                        levels: Some(nucleotides.clone()),
                        components,
                    },
                }
            })
            .collect();
        variables.push(VariableEmission {
            name: "trait".into(),
            emission: match kind {
                TraitKind::Gaussian => Emission::Normal {
                    means: vec![-3.0, 3.0],
                    sd: 1.0,
                },
                TraitKind::Poisson => Emission::Poisson {
                    rates: vec![5.0, 10.0],
                },
            },
        });
        let spec = GenerativeSpec {
            alpha: vec![0.1, 0.1],
            variables,
        };
        spec.validate()?;
        Ok(spec)
    }
}
