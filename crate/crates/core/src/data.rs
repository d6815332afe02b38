//! Variable schemas, tabular loading, and the one-hot / scalar encoding that
//! every moment computation consumes.
//!
//! A categorical observation with level `c` out of `d_j` becomes the standard
//! basis vector `e_c` of length `d_j`; continuous and count observations are
//! kept as scalars with effective dimension 1.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MeldError, Result};

/// Measurement type of a single variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VariableKind {
    Categorical { levels: Vec<String> },
    Continuous,
    Count,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

impl VariableSpec {
    pub fn categorical<S: Into<String>>(name: S, levels: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Categorical { levels },
        }
    }

    pub fn continuous<S: Into<String>>(name: S) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Continuous,
        }
    }

    pub fn count<S: Into<String>>(name: S) -> Self {
        Self {
            name: name.into(),
            kind: VariableKind::Count,
        }
    }

    /// Effective dimension `d_j`: number of levels for categorical variables, 1 otherwise.
    pub fn dim(&self) -> usize {
        match &self.kind {
            VariableKind::Categorical { levels } => levels.len(),
            VariableKind::Continuous | VariableKind::Count => 1,
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, VariableKind::Categorical { .. })
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            VariableKind::Categorical { levels } => Some(levels),
            _ => None,
        }
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels()?.iter().position(|l| l == label)
    }
}

/// Ordered list of variables. Immutable once validated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Schema {
    #[serde(rename = "variable")]
    variables: Vec<VariableSpec>,
}

#[derive(Deserialize)]
struct RawSchema {
    #[serde(default, rename = "variable")]
    variables: Vec<RawVariable>,
}

#[derive(Deserialize)]
struct RawVariable {
    name: String,
    kind: String,
    #[serde(default)]
    levels: Option<Vec<String>>,
}

impl Schema {
    pub fn new(variables: Vec<VariableSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for var in &variables {
            if var.name.is_empty() {
                return Err(MeldError::Schema("variable with empty name".into()));
            }
            if !seen.insert(var.name.as_str()) {
                return Err(MeldError::Schema(format!(
                    "duplicate variable name {:?}",
                    var.name
                )));
            }
            if let VariableKind::Categorical { levels } = &var.kind {
                if levels.len() < 2 {
                    return Err(MeldError::Schema(format!(
                        "categorical variable {:?} needs at least 2 levels, found {}",
                        var.name,
                        levels.len()
                    )));
                }
                let distinct: HashSet<&String> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(MeldError::Schema(format!(
                        "categorical variable {:?} repeats a level",
                        var.name
                    )));
                }
            }
        }
        Ok(Self { variables })
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn variable(&self, j: usize) -> &VariableSpec {
        &self.variables[j]
    }

    pub fn dims(&self) -> Vec<usize> {
        self.variables.iter().map(VariableSpec::dim).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn categorical_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&j| self.variables[j].is_categorical())
            .collect()
    }

    /// Serialise back to the TOML descriptor format read by [`parse_schema`].
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serialisation cannot fail")
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        parse_schema(&std::fs::read_to_string(path)?)
    }
}

/// Parses a TOML schema descriptor:
///
/// ```toml
/// [[variable]]
/// name = "locus1"
/// kind = "categorical"
/// levels = ["A", "C", "G", "T"]
///
/// [[variable]]
/// name = "trait"
/// kind = "continuous"
/// ```
pub fn parse_schema(descriptor: &str) -> Result<Schema> {
    let raw: RawSchema = toml::from_str(descriptor)?;
    let variables = raw
        .variables
        .into_iter()
        .map(|v| {
            let kind = match v.kind.as_str() {
                "categorical" => VariableKind::Categorical {
                    levels: v.levels.ok_or_else(|| {
                        MeldError::Schema(format!(
                            "categorical variable {:?} must list its levels",
                            v.name
                        ))
                    })?,
                },
                "continuous" | "count" if v.levels.is_some() => {
                    return Err(MeldError::Schema(format!(
                        "variable {:?} of kind {} cannot declare levels",
                        v.name, v.kind
                    )))
                }
                "continuous" => VariableKind::Continuous,
                "count" => VariableKind::Count,
                other => {
                    return Err(MeldError::Schema(format!(
                        "unknown kind {other:?} for variable {:?}",
                        v.name
                    )))
                }
            };
            Ok(VariableSpec { name: v.name, kind })
        })
        .collect::<Result<Vec<_>>>()?;
    Schema::new(variables)
}

/// An encoded observation `b_ij`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Encoded {
    OneHot { level: usize, dim: usize },
    Scalar(f64),
}

impl Encoded {
    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            Encoded::OneHot { level, dim } => {
                let mut v = vec![0.0; dim];
                v[level] = 1.0;
                v
            }
            Encoded::Scalar(x) => vec![x],
        }
    }

    /// Recovers the level index of a one-hot encoding.
    pub fn level(&self) -> Option<usize> {
        match *self {
            Encoded::OneHot { level, .. } => Some(level),
            Encoded::Scalar(_) => None,
        }
    }

    /// Position of the single non-zero coordinate and its value.
    #[inline]
    pub fn sparse(&self) -> (usize, f64) {
        match *self {
            Encoded::OneHot { level, .. } => (level, 1.0),
            Encoded::Scalar(x) => (0, x),
        }
    }
}

/// Encodes one textual cell under `spec`.
pub fn encode_value(cell: &str, spec: &VariableSpec) -> Result<Encoded> {
    let cell = cell.trim();
    let invalid = |message: String| MeldError::Data { row: 0, message };
    if cell.is_empty() {
        return Err(invalid(format!("missing value for {:?}", spec.name)));
    }
    match &spec.kind {
        VariableKind::Categorical { levels } => levels
            .iter()
            .position(|l| l == cell)
            .map(|level| Encoded::OneHot {
                level,
                dim: levels.len(),
            })
            .ok_or_else(|| {
                invalid(format!(
                    "level {cell:?} is not declared for {:?}",
                    spec.name
                ))
            }),
        VariableKind::Continuous => {
            let x: f64 = cell
                .parse()
                .map_err(|_| invalid(format!("{cell:?} is not a number ({:?})", spec.name)))?;
            if !x.is_finite() {
                return Err(invalid(format!(
                    "non-finite value {cell:?} for {:?}",
                    spec.name
                )));
            }
            Ok(Encoded::Scalar(x))
        }
        VariableKind::Count => match cell.parse::<i64>() {
            Ok(x) if x < 0 => Err(invalid(format!(
                "negative count {x} for {:?}",
                spec.name
            ))),
            Ok(x) => Ok(Encoded::Scalar(x as f64)),
            Err(_) => Err(invalid(format!(
                "{cell:?} is not a nonnegative integer count ({:?})",
                spec.name
            ))),
        },
    }
}

/// Storage for one encoded column.
#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    /// Level indices into the declared level list.
    Categorical(Vec<usize>),
    /// Continuous or count observations.
    Scalar(Vec<f64>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Categorical(v) => v.len(),
            Column::Scalar(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Encoded observations, column-major over variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Schema,
    columns: Vec<Column>,
    n: usize,
}

impl Dataset {
    pub fn new(schema: Schema, columns: Vec<Column>) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(MeldError::Dimension(format!(
                "{} columns for a schema of {} variables",
                columns.len(),
                schema.len()
            )));
        }
        let n = columns.first().map_or(0, Column::len);
        for (j, (col, var)) in columns.iter().zip(schema.variables()).enumerate() {
            if col.len() != n {
                return Err(MeldError::Dimension(format!(
                    "column {j} has length {} but column 0 has {n}",
                    col.len()
                )));
            }
            match (col, &var.kind) {
                (Column::Categorical(levels), VariableKind::Categorical { levels: declared }) => {
                    if let Some(row) = levels.iter().position(|&l| l >= declared.len()) {
                        return Err(MeldError::Data {
                            row,
                            message: format!("level index out of range for {:?}", var.name),
                        });
                    }
                }
                (Column::Scalar(values), VariableKind::Continuous) => {
                    if let Some(row) = values.iter().position(|x| !x.is_finite()) {
                        return Err(MeldError::Data {
                            row,
                            message: format!("non-finite value for {:?}", var.name),
                        });
                    }
                }
                (Column::Scalar(values), VariableKind::Count) => {
                    if let Some(row) = values.iter().position(|&x| !(x >= 0.0 && x.fract() == 0.0))
                    {
                        return Err(MeldError::Data {
                            row,
                            message: format!("invalid count for {:?}", var.name),
                        });
                    }
                }
                _ => {
                    return Err(MeldError::Schema(format!(
                        "column storage does not match the kind of {:?}",
                        var.name
                    )))
                }
            }
        }
        Ok(Self { schema, columns, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub(crate) fn columns_mut(&mut self) -> &mut [Column] {
        &mut self.columns
    }

    /// `b_ij` for sample `i`, variable `j`.
    #[inline]
    pub fn encoded(&self, i: usize, j: usize) -> Encoded {
        match &self.columns[j] {
            Column::Categorical(levels) => Encoded::OneHot {
                level: levels[i],
                dim: self.schema.variable(j).dim(),
            },
            Column::Scalar(values) => Encoded::Scalar(values[i]),
        }
    }

    /// Sparse view of `b_ij`: coordinate of the non-zero entry and its value.
    #[inline]
    pub fn sparse(&self, i: usize, j: usize) -> (usize, f64) {
        match &self.columns[j] {
            Column::Categorical(levels) => (levels[i], 1.0),
            Column::Scalar(values) => (0, values[i]),
        }
    }

    /// Scalar column summary: (mean, sample sd with divisor n-1, min, max).
    pub fn scalar_summary(&self, j: usize) -> Option<(f64, f64, f64, f64)> {
        let Column::Scalar(values) = &self.columns[j] else {
            return None;
        };
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|x| (x - mean).powi(2)).sum();
        let sd = if values.len() > 1 {
            (ss / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((mean, sd, min, max))
    }

    fn cell_text(&self, i: usize, j: usize) -> String {
        let var = self.schema.variable(j);
        match (&self.columns[j], &var.kind) {
            (Column::Categorical(levels), VariableKind::Categorical { levels: labels }) => {
                labels[levels[i]].clone()
            }
            (Column::Scalar(values), VariableKind::Count) => format!("{}", values[i] as u64),
            (Column::Scalar(values), _) => format!("{:?}", values[i]),
            _ => unreachable!("validated at construction"),
        }
    }

    /// Writes the dataset as a comma-separated table with a header row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(self.schema.variables().iter().map(|v| v.name.as_str()))?;
        for i in 0..self.n {
            out.write_record((0..self.p()).map(|j| self.cell_text(i, j)))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn from_path<P: AsRef<Path>>(path: P, schema: &Schema) -> Result<Self> {
        load_dataset(&std::fs::read_to_string(path)?, schema)
    }
}

/// Loads a comma- or tab-separated table whose header names every schema
/// variable exactly once (in any order).
pub fn load_dataset(table: &str, schema: &Schema) -> Result<Dataset> {
    let header_line = table.lines().next().unwrap_or("");
    if header_line.trim().is_empty() {
        let columns = schema
            .variables()
            .iter()
            .map(|v| {
                if v.is_categorical() {
                    Column::Categorical(Vec::new())
                } else {
                    Column::Scalar(Vec::new())
                }
            })
            .collect();
        return Dataset::new(schema.clone(), columns);
    }
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(table.as_bytes());

    let header = reader.headers()?.clone();
    if header.len() != schema.len() {
        return Err(MeldError::Schema(format!(
            "table has {} columns but schema declares {}",
            header.len(),
            schema.len()
        )));
    }
    // position in the table for each schema variable
    let mut source = Vec::with_capacity(schema.len());
    for var in schema.variables() {
        let pos = header.iter().position(|h| h == var.name).ok_or_else(|| {
            MeldError::Schema(format!("table header lacks variable {:?}", var.name))
        })?;
        source.push(pos);
    }

    let mut columns: Vec<Column> = schema
        .variables()
        .iter()
        .map(|v| {
            if v.is_categorical() {
                Column::Categorical(Vec::new())
            } else {
                Column::Scalar(Vec::new())
            }
        })
        .collect();

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (j, var) in schema.variables().iter().enumerate() {
            let cell = record.get(source[j]).unwrap_or("");
            let encoded = encode_value(cell, var).map_err(|e| match e {
                MeldError::Data { message, .. } => MeldError::Data {
                    row: row + 1,
                    message,
                },
                other => other,
            })?;
            match (&mut columns[j], encoded) {
                (Column::Categorical(col), Encoded::OneHot { level, .. }) => col.push(level),
                (Column::Scalar(col), Encoded::Scalar(x)) => col.push(x),
                _ => unreachable!("encoding follows the variable kind"),
            }
        }
    }
    Dataset::new(schema.clone(), columns)
}
