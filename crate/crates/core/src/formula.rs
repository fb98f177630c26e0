//! Model formulas and design rows.
//!
//! A formula is a `+`-separated list of terms; a term is one variable or a
//! `:`-joined interaction. `A` is the treatment indicator, `Z` the observed
//! time, anything else a named `X` or `L` covariate. The intercept is added by
//! the model, not written in the formula (`""` or `"1"` is intercept-only).
//! Categorical covariates expand to one indicator per non-reference level.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::data::{ColumnKind, ColumnRef, CostEffectivenessRecord, Dataset, Schema, Source};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormulaError {
    #[error("formula syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("formula references unknown column {0:?}")]
    UnknownColumn(String),
    #[error("duplicate term {0:?} in formula")]
    DuplicateTerm(String),
    #[error("term {term:?} is not allowed here: {reason}")]
    NotAllowed { term: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variable {
    Treatment,
    Time,
    Covariate(String),
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variable::Treatment => f.write_str("A"),
            Variable::Time => f.write_str("Z"),
            Variable::Covariate(name) => f.write_str(name),
        }
    }
}

/// A main effect (one variable) or an interaction (several).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term(pub Vec<Variable>);

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(":"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Formula {
    terms: Vec<Term>,
}

impl Formula {
    pub fn intercept_only() -> Self {
        Self::default()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn parse(text: &str) -> Result<Self, FormulaError> {
        let trimmed = text.trim();
        if trimmed.is_empty() || trimmed == "1" {
            return Ok(Self::default());
        }
        let mut terms: Vec<Term> = Vec::new();
        let mut offset = 0;
        for piece in text.split('+') {
            let mut vars = Vec::new();
            let mut inner = offset;
            for atom in piece.split(':') {
                let name = atom.trim();
                let pos = inner + atom.len() - atom.trim_start().len();
                if name.is_empty() {
                    return Err(FormulaError::Syntax {
                        position: pos,
                        message: "empty term".into(),
                    });
                }
                let valid_start = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
                if !valid_start || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
                    return Err(FormulaError::Syntax {
                        position: pos,
                        message: format!("invalid variable name {name:?}"),
                    });
                }
                let var = match name {
                    "A" => Variable::Treatment,
                    "Z" => Variable::Time,
                    other => Variable::Covariate(other.to_string()),
                };
                if vars.contains(&var) {
                    return Err(FormulaError::DuplicateTerm(piece.trim().to_string()));
                }
                vars.push(var);
                inner += atom.len() + 1;
            }
            let term = Term(vars);
            let mut canonical = term.0.clone();
            canonical.sort_by_key(|v| v.to_string());
            if terms.iter().any(|t| {
                let mut c = t.0.clone();
                c.sort_by_key(|v| v.to_string());
                c == canonical
            }) {
                return Err(FormulaError::DuplicateTerm(term.to_string()));
            }
            terms.push(term);
            offset += piece.len() + 1;
        }
        Ok(Self { terms })
    }
}

impl FromStr for Formula {
    type Err = FormulaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Formula::parse(s)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self.terms.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(" + "))
    }
}

impl Serialize for Formula {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Formula {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Formula::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Covariate values a design row is evaluated at.
#[derive(Debug, Clone, Copy)]
pub struct Covariates<'a> {
    pub treatment: f64,
    pub x: &'a [f64],
    pub l: &'a [f64],
    pub time: f64,
}

impl<'a> Covariates<'a> {
    pub fn of_record(r: &'a CostEffectivenessRecord) -> Self {
        Self {
            treatment: r.treatment.indicator(),
            x: &r.covariate_x,
            l: &r.confounders_l,
            time: r.observed_time,
        }
    }

    /// Only `X` values, for regressions on effect modifiers.
    pub fn x_only(x: &'a [f64]) -> Self {
        Self {
            treatment: 0.0,
            x,
            l: &[],
            time: 0.0,
        }
    }

    fn value(&self, r: ColumnRef) -> f64 {
        match r.source {
            Source::X => self.x[r.index],
            Source::L => self.l[r.index],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Treatment,
    Time,
    Numeric(ColumnRef),
    /// Indicator that a categorical column equals the given level code.
    Level(ColumnRef, usize),
}

impl Factor {
    fn eval(&self, c: &Covariates<'_>) -> f64 {
        match *self {
            Factor::Treatment => c.treatment,
            Factor::Time => c.time,
            Factor::Numeric(r) => c.value(r),
            Factor::Level(r, code) => {
                if c.value(r) == code as f64 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignColumn {
    pub name: String,
    /// Label of the formula term that produced this column (`"(Intercept)"`
    /// for the intercept).
    pub term: String,
    /// The column is the product of these factors; empty for the intercept.
    pub factors: Vec<Factor>,
}

/// A formula resolved against a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub formula: String,
    pub columns: Vec<DesignColumn>,
}

pub const INTERCEPT: &str = "(Intercept)";

/// Which kinds of variable a design may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allowed {
    pub treatment: bool,
    pub time: bool,
    pub confounders: bool,
}

impl Allowed {
    pub const ALL: Allowed = Allowed {
        treatment: true,
        time: true,
        confounders: true,
    };
    /// Effect modifiers only.
    pub const X_ONLY: Allowed = Allowed {
        treatment: false,
        time: false,
        confounders: false,
    };
    pub const NO_TIME: Allowed = Allowed {
        treatment: true,
        time: false,
        confounders: true,
    };
}

impl Design {
    pub fn build(
        formula: &Formula,
        schema: &Schema,
        intercept: bool,
        allowed: Allowed,
    ) -> Result<Design, FormulaError> {
        let mut columns = Vec::new();
        if intercept {
            columns.push(DesignColumn {
                name: INTERCEPT.into(),
                term: INTERCEPT.into(),
                factors: vec![],
            });
        }
        for term in formula.terms() {
            // Cartesian product of each variable's expansion.
            let mut expanded: Vec<(String, Vec<Factor>)> = vec![(String::new(), vec![])];
            for var in &term.0 {
                let options: Vec<(String, Factor)> = match var {
                    Variable::Treatment => {
                        if !allowed.treatment {
                            return Err(FormulaError::NotAllowed {
                                term: term.to_string(),
                                reason: "treatment cannot appear in this model".into(),
                            });
                        }
                        vec![("A".into(), Factor::Treatment)]
                    }
                    Variable::Time => {
                        if !allowed.time {
                            return Err(FormulaError::NotAllowed {
                                term: term.to_string(),
                                reason: "observed time cannot appear in this model".into(),
                            });
                        }
                        vec![("Z".into(), Factor::Time)]
                    }
                    Variable::Covariate(name) => {
                        let r = schema
                            .locate(name)
                            .ok_or_else(|| FormulaError::UnknownColumn(name.clone()))?;
                        if r.source == Source::L && !allowed.confounders {
                            return Err(FormulaError::NotAllowed {
                                term: term.to_string(),
                                reason: format!("{name} is a confounder, only effect modifiers are allowed"),
                            });
                        }
                        match &schema.column(r).kind {
                            ColumnKind::Numeric => vec![(name.clone(), Factor::Numeric(r))],
                            ColumnKind::Categorical { levels } => levels
                                .iter()
                                .enumerate()
                                .skip(1)
                                .map(|(code, lvl)| (format!("{name}[{lvl}]"), Factor::Level(r, code)))
                                .collect(),
                        }
                    }
                };
                let mut next = Vec::new();
                for (prefix, factors) in &expanded {
                    for (label, factor) in &options {
                        let name = if prefix.is_empty() {
                            label.clone()
                        } else {
                            format!("{prefix}:{label}")
                        };
                        let mut f = factors.clone();
                        f.push(*factor);
                        next.push((name, f));
                    }
                }
                expanded = next;
            }
            columns.extend(expanded.into_iter().map(|(name, factors)| DesignColumn {
                name,
                term: term.to_string(),
                factors,
            }));
        }
        Ok(Design {
            formula: formula.to_string(),
            columns,
        })
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn fill_row(&self, c: &Covariates<'_>, out: &mut [f64]) {
        for (o, col) in out.iter_mut().zip(&self.columns) {
            *o = col.factors.iter().map(|f| f.eval(c)).product();
        }
    }

    pub fn row(&self, c: &Covariates<'_>) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols()];
        self.fill_row(c, &mut out);
        out
    }

    /// Linear predictor `row · coefficients` without allocating.
    pub fn dot(&self, c: &Covariates<'_>, coefficients: &[f64]) -> f64 {
        self.columns
            .iter()
            .zip(coefficients)
            .map(|(col, b)| b * col.factors.iter().map(|f| f.eval(c)).product::<f64>())
            .sum()
    }

    /// Design matrix over the selected dataset rows.
    pub fn matrix(&self, dataset: &Dataset, rows: &[usize]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(rows.len(), self.ncols());
        let mut buf = vec![0.0; self.ncols()];
        for (i, &r) in rows.iter().enumerate() {
            self.fill_row(&Covariates::of_record(&dataset.records()[r]), &mut buf);
            for (j, v) in buf.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        m
    }

    pub fn uses_time(&self) -> bool {
        self.columns.iter().any(|c| c.factors.contains(&Factor::Time))
    }

    /// Columns belonging to a term label (e.g. `"stage"` or `"A:x"`) or, failing
    /// that, the single column with that exact name.
    pub fn columns_for(&self, label: &str) -> Vec<usize> {
        let by_term: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.term == label)
            .map(|(i, _)| i)
            .collect();
        if !by_term.is_empty() {
            return by_term;
        }
        self.columns.iter().position(|c| c.name == label).into_iter().collect()
    }

    /// Distinct term labels, excluding the intercept.
    pub fn terms(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.columns {
            if c.term != INTERCEPT && !out.contains(&c.term) {
                out.push(c.term.clone());
            }
        }
        out
    }
}
