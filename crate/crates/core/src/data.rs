//! Subject-level data model, individual net benefit and CSV ingestion.
//!
//! Indicator orientation: `survival_censored` is `1(C < T)` and
//! `cost_censored` is `1(C < T*)` with `T* = min(T, τ)`. A tie `C = T` counts
//! as an observed event. Survival models consume the complement of
//! `survival_censored`; censoring models consume `survival_censored` /
//! `cost_censored` directly as their event indicator.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn indicator(self) -> f64 {
        self.index() as f64
    }

    pub fn from_index(i: usize) -> Option<Arm> {
        match i {
            0 => Some(Arm::Control),
            1 => Some(Arm::Treated),
            _ => None,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// Values are stored as level codes `0, 1, ...`; the first level is the
    /// reference category when dummy coding.
    Categorical {
        levels: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
        }
    }

    pub fn categorical(name: impl Into<String>, levels: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical { levels },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ColumnKind::Categorical { .. })
    }
}

/// Which covariate vector a named column lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    X,
    L,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub source: Source,
    pub index: usize,
}

/// Names and types of the effect modifiers `X` and confounders `L`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub x: Vec<ColumnSpec>,
    pub l: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(x: Vec<ColumnSpec>, l: Vec<ColumnSpec>) -> Self {
        Self { x, l }
    }

    pub fn locate(&self, name: &str) -> Option<ColumnRef> {
        let find = |cols: &[ColumnSpec]| cols.iter().position(|c| c.name == name);
        find(&self.x)
            .map(|index| ColumnRef {
                source: Source::X,
                index,
            })
            .or_else(|| {
                find(&self.l).map(|index| ColumnRef {
                    source: Source::L,
                    index,
                })
            })
    }

    pub fn column(&self, r: ColumnRef) -> &ColumnSpec {
        match r.source {
            Source::X => &self.x[r.index],
            Source::L => &self.l[r.index],
        }
    }
}

/// One subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEffectivenessRecord {
    pub treatment: Arm,
    pub covariate_x: Vec<f64>,
    pub confounders_l: Vec<f64>,
    /// `Z = min(T, C)`.
    pub observed_time: f64,
    /// Accumulated cost; `None` only when the cost is censored.
    pub cost: Option<f64>,
    pub survival_censored: bool,
    pub cost_censored: bool,
}

impl CostEffectivenessRecord {
    pub fn event_observed(&self) -> bool {
        !self.survival_censored
    }

    pub fn cost_observed(&self) -> bool {
        !self.cost_censored
    }

    pub fn covariate(&self, r: ColumnRef) -> f64 {
        match r.source {
            Source::X => self.covariate_x[r.index],
            Source::L => self.confounders_l[r.index],
        }
    }
}

/// An individual net benefit `λZ − Y` with the covariates it was drawn at.
#[derive(Debug, Clone, PartialEq)]
pub struct InbSample {
    pub value: f64,
    pub treatment: Arm,
    pub covariate_x: Vec<f64>,
}

/// Individual net benefit `B(λ) = λZ − Y`.
pub fn compute_inb(lambda: f64, effectiveness: f64, cost: f64) -> Result<f64, DataError> {
    if !(lambda.is_finite() && effectiveness.is_finite() && cost.is_finite()) {
        return Err(DataError::InvalidInput(format!(
            "non-finite INB input (lambda={lambda}, effectiveness={effectiveness}, cost={cost})"
        )));
    }
    if lambda <= 0.0 {
        return Err(DataError::InvalidInput(format!(
            "willingness to pay must be positive, got {lambda}"
        )));
    }
    Ok(lambda * effectiveness - cost)
}

/// Immutable collection of records sharing a schema and cost horizon `τ`
/// (`f64::INFINITY` when costs are not truncated).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<CostEffectivenessRecord>,
    schema: Schema,
    horizon_tau: f64,
}

impl Dataset {
    pub fn new(records: Vec<CostEffectivenessRecord>, schema: Schema, horizon_tau: f64) -> Self {
        Self {
            records,
            schema,
            horizon_tau,
        }
    }

    pub fn records(&self) -> &[CostEffectivenessRecord] {
        &self.records
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn horizon_tau(&self) -> f64 {
        self.horizon_tau
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `[N₀, N₁]`.
    pub fn arm_counts(&self) -> [usize; 2] {
        let mut counts = [0, 0];
        for r in &self.records {
            counts[r.treatment.index()] += 1;
        }
        counts
    }

    /// `T* = min(Z, τ)` for record `i`.
    pub fn truncated_time(&self, i: usize) -> f64 {
        self.records[i].observed_time.min(self.horizon_tau)
    }

    /// New dataset made of the given rows (with repetition), as used by the
    /// bootstrap.
    pub fn resample(&self, rows: &[usize]) -> Dataset {
        Dataset {
            records: rows.iter().map(|&i| self.records[i].clone()).collect(),
            schema: self.schema.clone(),
            horizon_tau: self.horizon_tau,
        }
    }

    pub fn censoring_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.cost_censored).count() as f64 / self.len() as f64
    }
}

/// A violated dataset invariant. `record` is the zero-based record index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub record: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.record {
            Some(i) => write!(f, "record {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// All invariant violations; empty iff the dataset is usable.
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let schema = &dataset.schema;
    let tau = dataset.horizon_tau;
    if !(tau > 0.0) {
        out.push(Violation {
            record: None,
            message: format!("horizon tau must be positive, got {tau}"),
        });
    }
    for (i, r) in dataset.records.iter().enumerate() {
        let mut bad = |message: String| {
            out.push(Violation {
                record: Some(i),
                message,
            })
        };
        if !(r.observed_time.is_finite() && r.observed_time >= 0.0) {
            bad(format!(
                "observed_time must be finite and >= 0, got {}",
                r.observed_time
            ));
        }
        match r.cost {
            Some(c) if !(c.is_finite() && c >= 0.0) => bad(format!("cost must be finite and >= 0, got {c}")),
            None if !r.cost_censored => bad("cost missing for a record with observed cost".into()),
            _ => {}
        }
        if r.observed_time >= tau && r.cost_censored {
            bad(format!(
                "observed_time {} reaches the horizon {tau} but cost is flagged censored",
                r.observed_time
            ));
        }
        for (values, cols, what) in [(&r.covariate_x, &schema.x, "X"), (&r.confounders_l, &schema.l, "L")] {
            if values.len() != cols.len() {
                bad(format!(
                    "{what} has {} values but the schema declares {}",
                    values.len(),
                    cols.len()
                ));
                continue;
            }
            for (v, c) in values.iter().zip(cols) {
                match &c.kind {
                    ColumnKind::Numeric if !v.is_finite() => bad(format!("covariate {} is not finite", c.name)),
                    ColumnKind::Categorical { levels }
                        if !(v.fract() == 0.0 && *v >= 0.0 && (*v as usize) < levels.len()) =>
                    {
                        bad(format!("covariate {} has invalid level code {v}", c.name))
                    }
                    _ => {}
                }
            }
        }
    }
    let [n0, n1] = dataset.arm_counts();
    if n0 == 0 {
        out.push(Violation {
            record: None,
            message: "control arm empty".into(),
        });
    }
    if n1 == 0 {
        out.push(Violation {
            record: None,
            message: "treated arm empty".into(),
        });
    }
    out
}

/// Location-carrying CSV problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// One-based data row (the header is row 0).
    pub row: usize,
    pub column: String,
    pub reason: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "row {}, column {}: {}", self.row, self.column, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column {column:?} in CSV header")]
    MissingColumn { column: String },
    #[error("{} rejected row(s); first: {}", .0.len(), .0[0])]
    Rows(Vec<RowError>),
    #[error("dataset invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("schema: {0}")]
    Schema(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DataError {
    /// Rejected data-row numbers, for row-level errors.
    pub fn rows(&self) -> Vec<usize> {
        match self {
            DataError::Rows(rows) => rows.iter().map(|r| r.row).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingKind {
    #[default]
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    pub name: String,
    #[serde(default, rename = "type")]
    pub kind: MappingKind,
    /// Fixed level order for categorical columns; otherwise levels are taken in
    /// order of first appearance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// JSON document mapping CSV header names onto record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaMapping {
    pub treatment: String,
    pub time: String,
    pub cost: String,
    pub cost_censored: String,
    /// When absent, survival censoring is taken to equal cost censoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival_censored: Option<String>,
    #[serde(default)]
    pub x: Vec<ColumnMapping>,
    #[serde(default)]
    pub l: Vec<ColumnMapping>,
    /// Cost horizon; absent means no truncation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_tau: Option<f64>,
}

impl SchemaMapping {
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let m: SchemaMapping = serde_json::from_str(text).map_err(|e| DataError::Schema(e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mapping serializes")
    }

    /// Default column names for a dataset: `A, Z, Y, delta, delta_star`
    /// followed by the schema's covariate names.
    pub fn for_dataset(dataset: &Dataset) -> Self {
        let map = |cols: &[ColumnSpec]| {
            cols.iter()
                .map(|c| ColumnMapping {
                    name: c.name.clone(),
                    kind: if c.is_categorical() {
                        MappingKind::Categorical
                    } else {
                        MappingKind::Numeric
                    },
                    levels: match &c.kind {
                        ColumnKind::Categorical { levels } => Some(levels.clone()),
                        ColumnKind::Numeric => None,
                    },
                })
                .collect()
        };
        SchemaMapping {
            treatment: "A".into(),
            time: "Z".into(),
            cost: "Y".into(),
            cost_censored: "delta_star".into(),
            survival_censored: Some("delta".into()),
            x: map(&dataset.schema.x),
            l: map(&dataset.schema.l),
            horizon_tau: dataset.horizon_tau.is_finite().then_some(dataset.horizon_tau),
        }
    }

    fn check(&self) -> Result<(), DataError> {
        if let Some(t) = self.horizon_tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(DataError::Schema(format!("horizon_tau must be positive, got {t}")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        let fixed = [
            Some(&self.treatment),
            Some(&self.time),
            Some(&self.cost),
            Some(&self.cost_censored),
            self.survival_censored.as_ref(),
        ];
        for name in fixed
            .into_iter()
            .flatten()
            .chain(self.x.iter().chain(&self.l).map(|c| &c.name))
        {
            if !seen.insert(name.as_str()) {
                return Err(DataError::Schema(format!("column {name:?} mapped twice")));
            }
        }
        for c in self.x.iter().chain(&self.l) {
            if matches!(c.name.as_str(), "A" | "Z" | "1") && !self.is_fixed(&c.name) {
                return Err(DataError::Schema(format!(
                    "covariate name {:?} is reserved in formulas",
                    c.name
                )));
            }
            if c.kind == MappingKind::Numeric && c.levels.is_some() {
                return Err(DataError::Schema(format!(
                    "numeric column {:?} cannot declare levels",
                    c.name
                )));
            }
        }
        Ok(())
    }

    fn is_fixed(&self, name: &str) -> bool {
        name == self.treatment || name == self.time
    }
}

/// Reads and validates a dataset from a CSV file.
pub fn ingest_csv(path: impl AsRef<Path>, mapping: &SchemaMapping) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, mapping)
}

fn parse_flag(raw: &str) -> Option<bool> {
    match raw.trim() {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

fn parse_nonnegative(raw: &str) -> Result<f64, String> {
    let v: f64 = raw.trim().parse().map_err(|_| format!("not a number: {raw:?}"))?;
    if !v.is_finite() {
        return Err(format!("not finite: {raw:?}"));
    }
    if v < 0.0 {
        return Err(format!("negative value {v}"));
    }
    Ok(v)
}

struct CategoricalCoder {
    levels: Vec<String>,
    fixed: bool,
    lookup: HashMap<String, usize>,
}

impl CategoricalCoder {
    fn new(levels: Option<&Vec<String>>) -> Self {
        let levels = levels.cloned().unwrap_or_default();
        let lookup = levels.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
        Self {
            fixed: !levels.is_empty(),
            levels,
            lookup,
        }
    }

    fn code(&mut self, label: &str) -> Result<f64, String> {
        let label = label.trim();
        if label.is_empty() {
            return Err("empty categorical value".into());
        }
        if let Some(&i) = self.lookup.get(label) {
            return Ok(i as f64);
        }
        if self.fixed {
            return Err(format!("unknown level {label:?}"));
        }
        self.levels.push(label.to_string());
        self.lookup.insert(label.to_string(), self.levels.len() - 1);
        Ok((self.levels.len() - 1) as f64)
    }
}

/// Reads a dataset from any CSV source. Row-level problems are collected and
/// reported together with their row numbers.
pub fn read_csv<R: Read>(reader: R, mapping: &SchemaMapping) -> Result<Dataset, DataError> {
    mapping.check()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn {
                column: name.to_string(),
            })
    };
    let i_a = index(&mapping.treatment)?;
    let i_z = index(&mapping.time)?;
    let i_y = index(&mapping.cost)?;
    let i_cc = index(&mapping.cost_censored)?;
    let i_sc = mapping.survival_censored.as_deref().map(index).transpose()?;
    let i_x = mapping
        .x
        .iter()
        .map(|c| index(&c.name))
        .collect::<Result<Vec<_>, _>>()?;
    let i_l = mapping
        .l
        .iter()
        .map(|c| index(&c.name))
        .collect::<Result<Vec<_>, _>>()?;
    let mut coders_x: Vec<Option<CategoricalCoder>> = mapping
        .x
        .iter()
        .map(|c| (c.kind == MappingKind::Categorical).then(|| CategoricalCoder::new(c.levels.as_ref())))
        .collect();
    let mut coders_l: Vec<Option<CategoricalCoder>> = mapping
        .l
        .iter()
        .map(|c| (c.kind == MappingKind::Categorical).then(|| CategoricalCoder::new(c.levels.as_ref())))
        .collect();
    let tau = mapping.horizon_tau.unwrap_or(f64::INFINITY);

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row_no = k + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    row: row_no,
                    column: String::new(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let field = |i: usize| row.get(i).unwrap_or("");
        let before = errors.len();
        let mut row_errors: Vec<RowError> = Vec::new();
        let mut fail = |column: &str, reason: String| {
            row_errors.push(RowError {
                row: row_no,
                column: column.to_string(),
                reason,
            })
        };

        let treatment = match parse_flag(field(i_a)) {
            Some(true) => Arm::Treated,
            Some(false) => Arm::Control,
            None => {
                fail(&mapping.treatment, format!("non-binary treatment {:?}", field(i_a)));
                Arm::Control
            }
        };
        let observed_time = parse_nonnegative(field(i_z)).unwrap_or_else(|e| {
            fail(&mapping.time, e);
            0.0
        });
        let cost_censored = parse_flag(field(i_cc)).unwrap_or_else(|| {
            fail(&mapping.cost_censored, format!("non-binary flag {:?}", field(i_cc)));
            false
        });
        let survival_censored = match i_sc {
            Some(i) => parse_flag(field(i)).unwrap_or_else(|| {
                fail(
                    mapping.survival_censored.as_deref().unwrap_or(""),
                    format!("non-binary flag {:?}", field(i)),
                );
                false
            }),
            None => cost_censored,
        };
        let raw_cost = field(i_y).trim();
        let cost = if raw_cost.is_empty() {
            if !cost_censored {
                fail(&mapping.cost, "cost missing for a record with observed cost".into());
            }
            None
        } else {
            match parse_nonnegative(raw_cost) {
                Ok(v) => Some(v),
                Err(e) => {
                    fail(&mapping.cost, e);
                    None
                }
            }
        };
        if observed_time >= tau && cost_censored {
            fail(
                &mapping.cost_censored,
                format!("time {observed_time} reaches the horizon {tau} so cost cannot be censored"),
            );
        }
        errors.append(&mut row_errors);
        let read_covariates = |cols: &[ColumnMapping],
                               idx: &[usize],
                               coders: &mut [Option<CategoricalCoder>],
                               errors: &mut Vec<RowError>| {
            let mut out = Vec::with_capacity(cols.len());
            for ((c, &i), coder) in cols.iter().zip(idx).zip(coders.iter_mut()) {
                let raw = row.get(i).unwrap_or("");
                let value = match coder {
                    Some(coder) => coder.code(raw),
                    None => raw
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| format!("not a number: {raw:?}"))
                        .and_then(|v| {
                            if v.is_finite() {
                                Ok(v)
                            } else {
                                Err(format!("not finite: {raw:?}"))
                            }
                        }),
                };
                match value {
                    Ok(v) => out.push(v),
                    Err(reason) => {
                        errors.push(RowError {
                            row: row_no,
                            column: c.name.clone(),
                            reason,
                        });
                        out.push(0.0);
                    }
                }
            }
            out
        };
        let covariate_x = read_covariates(&mapping.x, &i_x, &mut coders_x, &mut errors);
        let confounders_l = read_covariates(&mapping.l, &i_l, &mut coders_l, &mut errors);
        if errors.len() == before {
            records.push(CostEffectivenessRecord {
                treatment,
                covariate_x,
                confounders_l,
                observed_time,
                cost,
                survival_censored,
                cost_censored,
            });
        }
    }
    if !errors.is_empty() {
        return Err(DataError::Rows(errors));
    }

    let to_specs = |cols: &[ColumnMapping], coders: Vec<Option<CategoricalCoder>>| {
        cols.iter()
            .zip(coders)
            .map(|(c, coder)| match coder {
                Some(coder) => ColumnSpec::categorical(c.name.clone(), coder.levels),
                None => ColumnSpec::numeric(c.name.clone()),
            })
            .collect()
    };
    let schema = Schema::new(to_specs(&mapping.x, coders_x), to_specs(&mapping.l, coders_l));
    let dataset = Dataset::new(records, schema, tau);
    let violations = validate(&dataset);
    if !violations.is_empty() {
        return Err(DataError::Invalid(violations));
    }
    Ok(dataset)
}

fn format_covariate(v: f64, spec: &ColumnSpec) -> String {
    match &spec.kind {
        ColumnKind::Numeric => v.to_string(),
        ColumnKind::Categorical { levels } => levels.get(v as usize).cloned().unwrap_or_else(|| v.to_string()),
    }
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes a dataset as CSV using the column names in `mapping`. Numbers use the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(dataset: &Dataset, mapping: &SchemaMapping, writer: W) -> Result<(), DataError> {
    if mapping.x.len() != dataset.schema.x.len() || mapping.l.len() != dataset.schema.l.len() {
        return Err(DataError::Schema(
            "mapping covariates do not match the dataset schema".into(),
        ));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![mapping.treatment.clone(), mapping.time.clone(), mapping.cost.clone()];
    if let Some(sc) = &mapping.survival_censored {
        header.push(sc.clone());
    }
    header.push(mapping.cost_censored.clone());
    header.extend(mapping.x.iter().chain(&mapping.l).map(|c| c.name.clone()));
    w.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![
            r.treatment.to_string(),
            r.observed_time.to_string(),
            r.cost.map(|c| c.to_string()).unwrap_or_default(),
        ];
        if mapping.survival_censored.is_some() {
            row.push(flag(r.survival_censored).into());
        }
        row.push(flag(r.cost_censored).into());
        row.extend(
            r.covariate_x
                .iter()
                .zip(&dataset.schema.x)
                .chain(r.confounders_l.iter().zip(&dataset.schema.l))
                .map(|(v, s)| format_covariate(*v, s)),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
