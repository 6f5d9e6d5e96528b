//! Column-oriented datasets, attribute schemas and CSV I/O.
//!
//! Domain bounds live on the schema because they fix each attribute's
//! sensitivity: `upper - lower` for numeric attributes and `1` for
//! categorical ones (semantic distances are bounded by 1).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, Taxonomy};

/// Multiplier applied to the column maximum when a schema asks for inferred
/// bounds.
pub const DEFAULT_BOUND_FACTOR: f64 = 1.5;

/// Decimal places used when writing numeric cells.
pub const DECIMALS: usize = 6;

#[derive(Clone, Debug)]
pub enum AttributeKind {
    Numeric {
        lower: f64,
        upper: f64,
        discrete: bool,
    },
    Categorical {
        taxonomy: Arc<Taxonomy>,
    },
}

#[derive(Clone, Debug)]
pub struct AttributeSchema {
    pub name: String,
    pub kind: AttributeKind,
}

impl AttributeSchema {
    pub fn numeric(name: impl Into<String>, lower: f64, upper: f64) -> Result<Self> {
        let name = name.into();
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidBounds {
                attribute: name,
                lower,
                upper,
            });
        }
        Ok(Self {
            name,
            kind: AttributeKind::Numeric {
                lower,
                upper,
                discrete: false,
            },
        })
    }

    pub fn categorical(name: impl Into<String>, taxonomy: Arc<Taxonomy>) -> Self {
        Self {
            name: name.into(),
            kind: AttributeKind::Categorical { taxonomy },
        }
    }

    pub fn with_discrete(mut self, flag: bool) -> Self {
        if let AttributeKind::Numeric { discrete, .. } = &mut self.kind {
            *discrete = flag;
        }
        self
    }

    /// Δ(Aᵢ): domain width for numeric attributes, 1 for categorical ones.
    pub fn sensitivity(&self) -> f64 {
        match self.kind {
            AttributeKind::Numeric { lower, upper, .. } => upper - lower,
            AttributeKind::Categorical { .. } => 1.0,
        }
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self.kind {
            AttributeKind::Numeric { lower, upper, .. } => Some((lower, upper)),
            AttributeKind::Categorical { .. } => None,
        }
    }

    pub fn taxonomy(&self) -> Option<&Arc<Taxonomy>> {
        match &self.kind {
            AttributeKind::Categorical { taxonomy } => Some(taxonomy),
            AttributeKind::Numeric { .. } => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, AttributeKind::Numeric { .. })
    }

    pub fn is_discrete(&self) -> bool {
        match self.kind {
            AttributeKind::Numeric { discrete, .. } => discrete,
            AttributeKind::Categorical { .. } => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Categorical(Vec<NodeId>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            Column::Numeric(v) => Some(v),
            Column::Categorical(_) => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&[NodeId]> {
        match self {
            Column::Categorical(v) => Some(v),
            Column::Numeric(_) => None,
        }
    }
}

/// One cell of a record, used when building neighbor datasets.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Numeric(f64),
    Categorical(NodeId),
}

/// Immutable, column-oriented table.
///
/// Datasets produced by [`load_dataset`] satisfy the schema's domain bounds.
/// Released datasets may not (unclamped noise), so the bound check is done at
/// ingestion rather than in the constructor.
#[derive(Clone, Debug)]
pub struct Dataset {
    schema: Arc<[AttributeSchema]>,
    columns: Vec<Column>,
    n: usize,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.columns == other.columns
            && self.schema.len() == other.schema.len()
            && self
                .schema
                .iter()
                .zip(other.schema.iter())
                .all(|(a, b)| a.name == b.name)
    }
}

impl Dataset {
    /// Checks column kinds and lengths against the schema. Does not check
    /// domain bounds; see [`Dataset::validate_bounds`].
    pub fn new(schema: impl Into<Arc<[AttributeSchema]>>, columns: Vec<Column>) -> Result<Self> {
        let schema = schema.into();
        if schema.len() != columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} attributes but {} columns",
                schema.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, Column::len);
        for (attr, col) in schema.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "column `{}` has {} values, expected {n}",
                    attr.name,
                    col.len()
                )));
            }
            let kind_ok = matches!(
                (&attr.kind, col),
                (AttributeKind::Numeric { .. }, Column::Numeric(_))
                    | (AttributeKind::Categorical { .. }, Column::Categorical(_))
            );
            if !kind_ok {
                return Err(Error::ShapeMismatch(format!(
                    "column `{}` does not match its attribute kind",
                    attr.name
                )));
            }
        }
        Ok(Self { schema, columns, n })
    }

    pub fn validate_bounds(&self) -> Result<()> {
        for (attr, col) in self.schema.iter().zip(&self.columns) {
            if let (Some((lower, upper)), Column::Numeric(values)) = (attr.bounds(), col) {
                if let Some((row, &value)) = values
                    .iter()
                    .enumerate()
                    .find(|(_, v)| !(lower..=upper).contains(*v))
                {
                    return Err(Error::OutOfBounds {
                        row,
                        column: attr.name.clone(),
                        value,
                        lower,
                        upper,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[AttributeSchema] {
        &self.schema
    }

    pub fn shared_schema(&self) -> Arc<[AttributeSchema]> {
        Arc::clone(&self.schema)
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|a| a.name == name)
    }

    pub fn record(&self, row: usize) -> Vec<Value> {
        self.columns
            .iter()
            .map(|c| match c {
                Column::Numeric(v) => Value::Numeric(v[row]),
                Column::Categorical(v) => Value::Categorical(v[row]),
            })
            .collect()
    }

    /// Keeps only the named attributes, in the order given.
    pub fn select(&self, names: &[impl AsRef<str>]) -> Result<Self> {
        let mut schema = Vec::with_capacity(names.len());
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            let idx = self
                .attribute_index(name)
                .ok_or_else(|| Error::Schema(format!("unknown attribute `{name}`")))?;
            schema.push(self.schema[idx].clone());
            columns.push(self.columns[idx].clone());
        }
        if schema.is_empty() {
            return Err(Error::Empty("attribute selection"));
        }
        Dataset::new(schema, columns)
    }

    /// Same schema, new columns.
    pub fn with_columns(&self, columns: Vec<Column>) -> Result<Self> {
        Dataset::new(Arc::clone(&self.schema), columns)
    }

    /// Formats one cell the way [`write_dataset`] does.
    pub fn cell_string(&self, row: usize, col: usize) -> String {
        match &self.columns[col] {
            Column::Numeric(v) => format!("{:.*}", DECIMALS, v[row]),
            Column::Categorical(v) => {
                let t = self.schema[col].taxonomy().expect("categorical schema");
                t.label(v[row]).to_string()
            }
        }
    }
}

/// Two datasets that differ in exactly one record.
#[derive(Clone, Debug)]
pub struct NeighborPair {
    pub base: Dataset,
    pub modified: Dataset,
    pub changed_index: usize,
}

impl NeighborPair {
    pub fn new(base: Dataset, changed_index: usize, replacement: Vec<Value>) -> Result<Self> {
        if changed_index >= base.n() {
            return Err(Error::InvalidParameter(format!(
                "record index {changed_index} out of range for n={}",
                base.n()
            )));
        }
        if replacement.len() != base.m() {
            return Err(Error::ShapeMismatch(format!(
                "replacement has {} values, dataset has {} attributes",
                replacement.len(),
                base.m()
            )));
        }
        let mut columns = base.columns.clone();
        for (col, value) in columns.iter_mut().zip(replacement) {
            match (col, value) {
                (Column::Numeric(v), Value::Numeric(x)) => v[changed_index] = x,
                (Column::Categorical(v), Value::Categorical(x)) => v[changed_index] = x,
                _ => return Err(Error::ShapeMismatch("replacement value kind".into())),
            }
        }
        let modified = base.with_columns(columns)?;
        Ok(Self {
            base,
            modified,
            changed_index,
        })
    }

    /// Indices of records that differ between the two datasets.
    pub fn differing_records(&self) -> Vec<usize> {
        (0..self.base.n())
            .filter(|&r| self.base.record(r) != self.modified.record(r))
            .collect()
    }
}

/// Returns `(0, factor * max(column))`.
pub fn infer_numeric_bounds(column: &[f64], factor: f64) -> Result<(f64, f64)> {
    if column.is_empty() {
        return Err(Error::Empty("column for bound inference"));
    }
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::InvalidParameter(format!("bound factor {factor}")));
    }
    if let Some(&neg) = column.iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "cannot infer bounds with lower=0 from value {neg}; give explicit bounds"
        )));
    }
    let max = column.iter().copied().fold(0.0_f64, f64::max);
    let upper = factor * max;
    if upper <= 0.0 {
        return Err(Error::InvalidBounds {
            attribute: String::new(),
            lower: 0.0,
            upper,
        });
    }
    Ok((0.0, upper))
}

/// Schema file contents: a list of attributes in release order.
///
/// ```toml
/// [[attribute]]
/// name = "income"
/// kind = "numeric"
/// bound_factor = 1.5     # or: lower = 0, upper = 1e6
///
/// [[attribute]]
/// name = "occupation"
/// kind = "categorical"
/// taxonomy = "occupation.tax"
/// ```
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaSpec {
    #[serde(rename = "attribute")]
    pub attributes: Vec<AttributeSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindSpec {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: KindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete: Option<bool>,
}

impl SchemaSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: SchemaSpec = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if spec.attributes.is_empty() {
            return Err(Error::Schema("schema lists no attributes".into()));
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema spec serializes")
    }

    /// Reads a schema file and loads every referenced taxonomy, resolving
    /// relative taxonomy paths against the schema file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<ResolvedSchema> {
        let path = path.as_ref();
        let spec = Self::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        spec.resolve(base)
    }

    pub fn resolve(self, base_dir: &Path) -> Result<ResolvedSchema> {
        let mut taxonomies = HashMap::new();
        for attr in &self.attributes {
            if attr.kind == KindSpec::Categorical {
                let rel = attr.taxonomy.as_ref().ok_or_else(|| {
                    Error::Schema(format!(
                        "categorical attribute `{}` has no taxonomy",
                        attr.name
                    ))
                })?;
                let full = base_dir.join(rel);
                if !taxonomies.contains_key(&full) {
                    let t = Taxonomy::from_path(&full)?;
                    taxonomies.insert(full.clone(), Arc::new(t));
                }
            }
        }
        let taxonomies = self
            .attributes
            .iter()
            .map(|a| {
                a.taxonomy
                    .as_ref()
                    .filter(|_| a.kind == KindSpec::Categorical)
                    .map(|rel| Arc::clone(&taxonomies[&base_dir.join(rel)]))
            })
            .collect();
        Ok(ResolvedSchema {
            spec: self,
            taxonomies,
        })
    }
}

/// A schema spec whose taxonomies are loaded. Numeric bounds may still be
/// pending inference from data.
#[derive(Clone, Debug)]
pub struct ResolvedSchema {
    pub spec: SchemaSpec,
    taxonomies: Vec<Option<Arc<Taxonomy>>>,
}

impl ResolvedSchema {
    pub fn with_taxonomies(spec: SchemaSpec, taxonomies: Vec<Option<Arc<Taxonomy>>>) -> Self {
        Self { spec, taxonomies }
    }

    pub fn taxonomy(&self, index: usize) -> Option<&Arc<Taxonomy>> {
        self.taxonomies.get(index).and_then(Option::as_ref)
    }
}

/// Parses a CSV stream against a resolved schema. Row order is preserved;
/// columns not named in the schema are ignored.
pub fn load_dataset(source: impl Read, schema: &ResolvedSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let positions = schema
        .spec
        .attributes
        .iter()
        .map(|a| {
            headers
                .iter()
                .position(|h| h.trim() == a.name)
                .ok_or_else(|| Error::MissingColumn(a.name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut raw: Vec<Column> = schema
        .spec
        .attributes
        .iter()
        .map(|a| match a.kind {
            KindSpec::Numeric => Column::Numeric(Vec::new()),
            KindSpec::Categorical => Column::Categorical(Vec::new()),
        })
        .collect();

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (i, attr) in schema.spec.attributes.iter().enumerate() {
            let cell = record.get(positions[i]).unwrap_or("").trim();
            if cell.is_empty() {
                return Err(Error::MissingValue {
                    row,
                    column: attr.name.clone(),
                });
            }
            match &mut raw[i] {
                Column::Numeric(values) => {
                    let v: f64 = cell
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| Error::Parse {
                            row,
                            column: attr.name.clone(),
                            value: cell.to_string(),
                        })?;
                    values.push(v);
                }
                Column::Categorical(values) => {
                    let t = schema.taxonomy(i).ok_or_else(|| {
                        Error::Schema(format!("no taxonomy loaded for `{}`", attr.name))
                    })?;
                    let id = t.id(cell).map_err(|_| {
                        Error::UnknownLabel(format!("{cell} (row {row}, column `{}`)", attr.name))
                    })?;
                    values.push(id);
                }
            }
        }
    }

    let mut attrs = Vec::with_capacity(raw.len());
    for (i, (spec, col)) in schema.spec.attributes.iter().zip(&raw).enumerate() {
        let attr = match col {
            Column::Numeric(values) => {
                let (lower, upper) = match (spec.lower, spec.upper, spec.bound_factor) {
                    (Some(l), Some(u), _) => (l, u),
                    (None, None, factor) => {
                        infer_numeric_bounds(values, factor.unwrap_or(DEFAULT_BOUND_FACTOR))
                            .map_err(|e| Error::Schema(format!("attribute `{}`: {e}", spec.name)))?
                    }
                    (Some(0.0), None, Some(f)) => infer_numeric_bounds(values, f)
                        .map_err(|e| Error::Schema(format!("attribute `{}`: {e}", spec.name)))?,
                    _ => {
                        return Err(Error::Schema(format!(
                            "attribute `{}` needs both `lower` and `upper`, or neither",
                            spec.name
                        )))
                    }
                };
                AttributeSchema::numeric(&spec.name, lower, upper)?
                    .with_discrete(spec.discrete.unwrap_or(false))
            }
            Column::Categorical(_) => {
                let t = schema.taxonomy(i).expect("checked above");
                AttributeSchema::categorical(&spec.name, Arc::clone(t))
            }
        };
        attrs.push(attr);
    }

    let data = Dataset::new(attrs, raw)?;
    data.validate_bounds()?;
    Ok(data)
}

pub fn load_dataset_path(path: impl AsRef<Path>, schema: &ResolvedSchema) -> Result<Dataset> {
    load_dataset(std::fs::File::open(path)?, schema)
}

/// Writes a CSV with a header row; numeric cells use [`DECIMALS`] places.
pub fn write_dataset(data: &Dataset, sink: impl Write) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_writer(sink);
    writer.write_record(data.schema().iter().map(|a| a.name.as_str()))?;
    let mut row_buf = Vec::with_capacity(data.m());
    for row in 0..data.n() {
        row_buf.clear();
        row_buf.extend((0..data.m()).map(|c| data.cell_string(row, c)));
        writer.write_record(&row_buf)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_dataset_path(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(data, file)
}

/// Schema spec that pins the bounds a loaded dataset ended up with, so the
/// same domains can be reused on a reload.
pub fn explicit_spec(data: &Dataset, taxonomy_paths: &[Option<PathBuf>]) -> SchemaSpec {
    SchemaSpec {
        attributes: data
            .schema()
            .iter()
            .enumerate()
            .map(|(i, a)| match &a.kind {
                AttributeKind::Numeric {
                    lower,
                    upper,
                    discrete,
                } => AttributeSpec {
                    name: a.name.clone(),
                    kind: KindSpec::Numeric,
                    lower: Some(*lower),
                    upper: Some(*upper),
                    bound_factor: None,
                    taxonomy: None,
                    discrete: discrete.then_some(true),
                },
                AttributeKind::Categorical { .. } => AttributeSpec {
                    name: a.name.clone(),
                    kind: KindSpec::Categorical,
                    lower: None,
                    upper: None,
                    bound_factor: None,
                    taxonomy: taxonomy_paths.get(i).cloned().flatten(),
                    discrete: None,
                },
            })
            .collect(),
    }
}
