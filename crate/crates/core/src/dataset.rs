//! Patient-level trial data: schema, ingestion, validation, design matrices.
//!
//! A [`TrialDataset`] holds one row per patient with a binary outcome, a
//! binary arm indicator (0 = control, 1 = treatment) and typed covariates.
//! Covariate values are stored in schema order. A covariate that a source
//! never recorded is marked unavailable for that source and stored as `None`
//! rather than imputed.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Continuous,
    Binary,
    Categorical { levels: Vec<String> },
}

/// Whether a covariate only shifts the baseline risk or also modifies the
/// treatment effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateRole {
    #[default]
    PrognosticOnly,
    EffectModifier,
    Both,
}

impl CovariateRole {
    pub fn is_modifier(self) -> bool {
        !matches!(self, CovariateRole::PrognosticOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
    #[serde(default)]
    pub role: CovariateRole,
}

impl CovariateSpec {
    pub fn continuous(name: &str) -> Self {
        CovariateSpec {
            name: name.to_string(),
            kind: CovariateKind::Continuous,
            role: CovariateRole::PrognosticOnly,
        }
    }

    pub fn binary(name: &str) -> Self {
        CovariateSpec {
            name: name.to_string(),
            kind: CovariateKind::Binary,
            role: CovariateRole::PrognosticOnly,
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        CovariateSpec {
            name: name.to_string(),
            kind: CovariateKind::Categorical {
                levels: levels.iter().map(|l| l.to_string()).collect(),
            },
            role: CovariateRole::PrognosticOnly,
        }
    }

    pub fn with_role(mut self, role: CovariateRole) -> Self {
        self.role = role;
        self
    }

    /// Parse a textual cell into a typed value.
    pub fn parse_value(&self, raw: &str) -> std::result::Result<CovValue, String> {
        let raw = raw.trim();
        match &self.kind {
            CovariateKind::Continuous => match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(CovValue::Num(v)),
                _ => Err(format!("{}: '{}' is not a finite number", self.name, raw)),
            },
            CovariateKind::Binary => match raw {
                "0" => Ok(CovValue::Num(0.0)),
                "1" => Ok(CovValue::Num(1.0)),
                _ => Err(format!("{}: binary value must be 0 or 1, got '{}'", self.name, raw)),
            },
            CovariateKind::Categorical { levels } => levels
                .iter()
                .position(|l| l == raw)
                .map(CovValue::Level)
                .ok_or_else(|| format!("{}: '{}' is not a declared level", self.name, raw)),
        }
    }

    fn check_value(&self, v: CovValue) -> std::result::Result<(), String> {
        match (&self.kind, v) {
            (CovariateKind::Continuous, CovValue::Num(x)) if x.is_finite() => Ok(()),
            (CovariateKind::Binary, CovValue::Num(x)) if x == 0.0 || x == 1.0 => Ok(()),
            (CovariateKind::Categorical { levels }, CovValue::Level(i)) if i < levels.len() => {
                Ok(())
            }
            _ => Err(format!("{}: value {:?} outside its domain", self.name, v)),
        }
    }

    fn format_value(&self, v: CovValue) -> String {
        match (&self.kind, v) {
            (CovariateKind::Categorical { levels }, CovValue::Level(i)) => levels[i].clone(),
            (CovariateKind::Binary, CovValue::Num(x)) => format!("{}", x as u8),
            (_, CovValue::Num(x)) => format!("{x}"),
            (_, CovValue::Level(i)) => format!("{i}"),
        }
    }
}

/// An ordered list of covariate declarations with unique names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CovariateSpec>", into = "Vec<CovariateSpec>")]
pub struct Schema {
    covariates: Vec<CovariateSpec>,
}

impl TryFrom<Vec<CovariateSpec>> for Schema {
    type Error = Error;

    fn try_from(covariates: Vec<CovariateSpec>) -> Result<Self> {
        Schema::new(covariates)
    }
}

impl From<Schema> for Vec<CovariateSpec> {
    fn from(s: Schema) -> Self {
        s.covariates
    }
}

const RESERVED: [&str; 2] = ["outcome", "arm"];

impl Schema {
    pub fn new(covariates: Vec<CovariateSpec>) -> Result<Self> {
        for (i, c) in covariates.iter().enumerate() {
            if c.name.is_empty() || RESERVED.contains(&c.name.as_str()) {
                return Err(Error::Schema(format!("invalid covariate name '{}'", c.name)));
            }
            if covariates[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::Schema(format!("duplicate covariate '{}'", c.name)));
            }
            if let CovariateKind::Categorical { levels } = &c.kind {
                if levels.len() < 2 {
                    return Err(Error::Schema(format!(
                        "categorical covariate '{}' needs at least two levels",
                        c.name
                    )));
                }
            }
        }
        Ok(Schema { covariates })
    }

    pub fn empty() -> Self {
        Schema { covariates: vec![] }
    }

    pub fn covariates(&self) -> &[CovariateSpec] {
        &self.covariates
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown covariate '{name}'")))
    }

    pub fn spec(&self, name: &str) -> Result<&CovariateSpec> {
        Ok(&self.covariates[self.require(name)?])
    }

    /// Covariates declared prognostic-only, the default weighting set.
    pub fn prognostic_only(&self) -> Vec<String> {
        self.covariates
            .iter()
            .filter(|c| c.role == CovariateRole::PrognosticOnly)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn parse_value(&self, name: &str, raw: &str) -> Result<CovValue> {
        self.spec(name)?.parse_value(raw).map_err(Error::Schema)
    }
}

/// A typed covariate value. Binary covariates use `Num(0.0)` / `Num(1.0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovValue {
    Num(f64),
    Level(usize),
}

impl CovValue {
    pub fn as_f64(self) -> f64 {
        match self {
            CovValue::Num(x) => x,
            CovValue::Level(i) => i as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub outcome: u8,
    pub arm: u8,
    /// One entry per schema covariate; `None` only where the covariate is
    /// unavailable for the record's source.
    pub covariates: Vec<Option<CovValue>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    source_id: String,
    schema: Arc<Schema>,
    patients: Vec<PatientRecord>,
    available: Vec<bool>,
}

impl TrialDataset {
    /// Validate and wrap records. Every covariate is treated as available.
    pub fn new(source_id: &str, schema: Arc<Schema>, patients: Vec<PatientRecord>) -> Result<Self> {
        let available = vec![true; schema.len()];
        Self::with_availability(source_id, schema, patients, available)
    }

    pub fn with_availability(
        source_id: &str,
        schema: Arc<Schema>,
        patients: Vec<PatientRecord>,
        available: Vec<bool>,
    ) -> Result<Self> {
        if available.len() != schema.len() {
            return Err(Error::Dimension {
                expected: schema.len(),
                got: available.len(),
            });
        }
        for (i, p) in patients.iter().enumerate() {
            validate_record(&schema, &available, p).map_err(|message| Error::Row {
                row: i + 1,
                message,
            })?;
        }
        Ok(TrialDataset {
            source_id: source_id.to_string(),
            schema,
            patients,
            available,
        })
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// Per-covariate availability for this source.
    pub fn available(&self) -> &[bool] {
        &self.available
    }

    pub fn value(&self, row: usize, name: &str) -> Result<Option<CovValue>> {
        let k = self.schema.require(name)?;
        Ok(self.patients[row].covariates[k])
    }

    /// Same schema, records selected by index (repeats allowed).
    pub fn select(&self, idx: &[usize], source_id: &str) -> TrialDataset {
        TrialDataset {
            source_id: source_id.to_string(),
            schema: self.schema.clone(),
            patients: idx.iter().map(|&i| self.patients[i].clone()).collect(),
            available: self.available.clone(),
        }
    }

    /// Stack several sources sharing one schema. A covariate is available in
    /// the result only if every part has it.
    pub fn concat(parts: &[&TrialDataset], source_id: &str) -> Result<TrialDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let schema = first.schema.clone();
        let mut available = vec![true; schema.len()];
        let mut patients = Vec::new();
        for part in parts {
            if part.schema != schema {
                return Err(Error::Schema(format!(
                    "source '{}' has a different schema from '{}'",
                    part.source_id, first.source_id
                )));
            }
            for (a, b) in available.iter_mut().zip(&part.available) {
                *a &= *b;
            }
            patients.extend(part.patients.iter().cloned());
        }
        Ok(TrialDataset {
            source_id: source_id.to_string(),
            schema,
            patients,
            available,
        })
    }

    /// Replace arms and outcomes, keeping covariates.
    pub fn with_assignments(&self, arms: &[u8], outcomes: &[u8], source_id: &str) -> Result<TrialDataset> {
        if arms.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: arms.len(),
            });
        }
        if arms.iter().any(|&a| a > 1) {
            return Err(Error::InvalidArgument("arm must be 0 or 1".into()));
        }
        let mut out = self.with_outcomes(outcomes)?;
        for (p, &a) in out.patients.iter_mut().zip(arms) {
            p.arm = a;
        }
        out.source_id = source_id.to_string();
        Ok(out)
    }

    /// Replace outcomes (used by simulations that reuse covariates).
    pub fn with_outcomes(&self, outcomes: &[u8]) -> Result<TrialDataset> {
        if outcomes.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: outcomes.len(),
            });
        }
        let mut out = self.clone();
        for (p, &y) in out.patients.iter_mut().zip(outcomes) {
            if y > 1 {
                return Err(Error::InvalidArgument("outcome must be 0 or 1".into()));
            }
            p.outcome = y;
        }
        Ok(out)
    }
}

fn validate_record(
    schema: &Schema,
    available: &[bool],
    p: &PatientRecord,
) -> std::result::Result<(), String> {
    if p.outcome > 1 {
        return Err(format!("outcome must be 0 or 1, got {}", p.outcome));
    }
    if p.arm > 1 {
        return Err(format!("arm must be 0 or 1, got {}", p.arm));
    }
    if p.covariates.len() != schema.len() {
        return Err(format!(
            "expected {} covariates, got {}",
            schema.len(),
            p.covariates.len()
        ));
    }
    for ((spec, value), &avail) in schema.covariates.iter().zip(&p.covariates).zip(available) {
        match value {
            Some(v) => spec.check_value(*v)?,
            None if !avail => {}
            None => return Err(format!("missing value for '{}'", spec.name)),
        }
    }
    Ok(())
}

/// Options for reading delimiter-separated files.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// Covariates this source never recorded. Their columns may be absent.
    pub absent: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            absent: vec![],
        }
    }
}

pub fn load_dataset(
    path: &Path,
    schema: Arc<Schema>,
    source_id: &str,
    options: &LoadOptions,
) -> Result<TrialDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, schema, source_id, options)
}

pub fn read_dataset<R: Read>(
    reader: R,
    schema: Arc<Schema>,
    source_id: &str,
    options: &LoadOptions,
) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Empty(format!("{source_id}: no header row")));
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let outcome_col = col("outcome").ok_or_else(|| Error::Schema("missing column 'outcome'".into()))?;
    let arm_col = col("arm").ok_or_else(|| Error::Schema("missing column 'arm'".into()))?;

    for a in &options.absent {
        schema.require(a)?;
    }
    let mut available = Vec::with_capacity(schema.len());
    let mut cov_cols = Vec::with_capacity(schema.len());
    for spec in schema.covariates() {
        let declared_absent = options.absent.iter().any(|a| a == &spec.name);
        match col(&spec.name) {
            Some(c) if !declared_absent => {
                available.push(true);
                cov_cols.push(Some(c));
            }
            _ if declared_absent => {
                available.push(false);
                cov_cols.push(None);
            }
            _ => return Err(Error::Schema(format!("missing column '{}'", spec.name))),
        }
    }

    let parse_flag = |raw: &str, what: &str, row: usize| -> Result<u8> {
        match raw {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::Row {
                row,
                message: format!("{what} must be 0 or 1, got '{other}'"),
            }),
        }
    };

    let mut patients = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let outcome = parse_flag(field(outcome_col), "outcome", row)?;
        let arm = parse_flag(field(arm_col), "arm", row)?;
        let mut covariates = Vec::with_capacity(schema.len());
        for (spec, c) in schema.covariates().iter().zip(&cov_cols) {
            match c {
                Some(c) => covariates.push(Some(
                    spec.parse_value(field(*c))
                        .map_err(|message| Error::Row { row, message })?,
                )),
                None => covariates.push(None),
            }
        }
        patients.push(PatientRecord {
            outcome,
            arm,
            covariates,
        });
    }
    if patients.is_empty() {
        return Err(Error::Empty(format!("{source_id}: no data rows")));
    }
    TrialDataset::with_availability(source_id, schema, patients, available)
}

/// Write a dataset in the same layout `read_dataset` accepts. Unavailable
/// covariates are omitted.
pub fn write_dataset<W: Write>(writer: W, data: &TrialDataset, delimiter: u8) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(writer);
    let schema = data.schema();
    let mut header = vec!["outcome".to_string(), "arm".to_string()];
    for (spec, &a) in schema.covariates().iter().zip(data.available()) {
        if a {
            header.push(spec.name.clone());
        }
    }
    wtr.write_record(&header)?;
    for p in data.patients() {
        let mut row = vec![p.outcome.to_string(), p.arm.to_string()];
        for ((spec, &a), v) in schema.covariates().iter().zip(data.available()).zip(&p.covariates) {
            if a {
                row.push(v.map(|v| spec.format_value(v)).unwrap_or_default());
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// Which covariates enter the baseline linear predictor and which modify the
/// treatment effect. Both parts get an intercept column.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Formula {
    #[serde(default)]
    pub prognostic: Vec<String>,
    #[serde(default)]
    pub modifiers: Vec<String>,
    /// Reference level per categorical covariate; defaults to the first
    /// declared level.
    #[serde(default)]
    pub reference_levels: BTreeMap<String, String>,
}

impl Formula {
    pub fn new(prognostic: &[&str], modifiers: &[&str]) -> Self {
        Formula {
            prognostic: prognostic.iter().map(|s| s.to_string()).collect(),
            modifiers: modifiers.iter().map(|s| s.to_string()).collect(),
            reference_levels: BTreeMap::new(),
        }
    }

    pub fn compile(&self, schema: &Arc<Schema>) -> Result<DesignEncoder> {
        for m in &self.modifiers {
            if !self.prognostic.contains(m) {
                return Err(Error::Formula(format!(
                    "modifier '{m}' must also appear among the prognostic covariates"
                )));
            }
        }
        for name in self.reference_levels.keys() {
            schema.require(name)?;
        }
        let terms = |names: &[String]| -> Result<(Vec<Term>, Vec<String>)> {
            let mut terms = Vec::new();
            let mut cols = vec!["intercept".to_string()];
            for name in names {
                let idx = schema.require(name)?;
                let spec = &schema.covariates()[idx];
                let encoding = match &spec.kind {
                    CovariateKind::Categorical { levels } => {
                        let reference = match self.reference_levels.get(name) {
                            Some(r) => levels.iter().position(|l| l == r).ok_or_else(|| {
                                Error::Formula(format!("'{r}' is not a level of '{name}'"))
                            })?,
                            None => 0,
                        };
                        for (j, l) in levels.iter().enumerate() {
                            if j != reference {
                                cols.push(format!("{name}:{l}"));
                            }
                        }
                        Encoding::Dummy {
                            reference,
                            levels: levels.len(),
                        }
                    }
                    _ => {
                        cols.push(name.clone());
                        Encoding::Numeric
                    }
                };
                terms.push(Term { index: idx, encoding });
            }
            Ok((terms, cols))
        };
        let (prognostic, prognostic_names) = terms(&self.prognostic)?;
        let (modifiers, modifier_names) = terms(&self.modifiers)?;
        Ok(DesignEncoder {
            schema: schema.clone(),
            prognostic,
            modifiers,
            prognostic_names,
            modifier_names,
        })
    }
}

#[derive(Debug, Clone)]
enum Encoding {
    Numeric,
    Dummy { reference: usize, levels: usize },
}

#[derive(Debug, Clone)]
struct Term {
    index: usize,
    encoding: Encoding,
}

/// A formula resolved against a schema; turns covariate rows into design rows.
#[derive(Debug, Clone)]
pub struct DesignEncoder {
    schema: Arc<Schema>,
    prognostic: Vec<Term>,
    modifiers: Vec<Term>,
    prognostic_names: Vec<String>,
    modifier_names: Vec<String>,
}

impl DesignEncoder {
    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    /// Number of prognostic columns `p`, intercept included.
    pub fn p(&self) -> usize {
        self.prognostic_names.len()
    }

    /// Number of modifier columns `q`, intercept included.
    pub fn q(&self) -> usize {
        self.modifier_names.len()
    }

    pub fn prognostic_names(&self) -> &[String] {
        &self.prognostic_names
    }

    pub fn modifier_names(&self) -> &[String] {
        &self.modifier_names
    }

    /// Coefficient labels in parameter order (`beta.*` then `psi.*`).
    pub fn coefficient_names(&self) -> Vec<String> {
        self.prognostic_names
            .iter()
            .map(|n| format!("beta.{n}"))
            .chain(self.modifier_names.iter().map(|n| format!("psi.{n}")))
            .collect()
    }

    /// Names of the covariates that modify the treatment effect.
    pub fn modifier_covariates(&self) -> Vec<String> {
        self.modifiers
            .iter()
            .map(|t| self.schema.covariates()[t.index].name.clone())
            .collect()
    }

    /// Covariate indices the formula reads.
    pub fn used_covariates(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.prognostic.iter().map(|t| t.index).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn fill(terms: &[Term], covs: &[Option<CovValue>], out: &mut [f64], schema: &Schema) -> Result<()> {
        out[0] = 1.0;
        let mut j = 1;
        for t in terms {
            let v = covs[t.index].ok_or_else(|| {
                Error::Formula(format!(
                    "covariate '{}' is unavailable but the formula uses it",
                    schema.covariates()[t.index].name
                ))
            })?;
            match t.encoding {
                Encoding::Numeric => {
                    out[j] = v.as_f64();
                    j += 1;
                }
                Encoding::Dummy { reference, levels } => {
                    let level = match v {
                        CovValue::Level(l) => l,
                        CovValue::Num(x) => x as usize,
                    };
                    for l in (0..levels).filter(|&l| l != reference) {
                        out[j] = if l == level { 1.0 } else { 0.0 };
                        j += 1;
                    }
                }
            }
        }
        Ok(())
    }

    /// Encode one covariate row into its prognostic (`x`, length p) and
    /// modifier (`s`, length q) design rows.
    pub fn encode_into(&self, covs: &[Option<CovValue>], x: &mut [f64], s: &mut [f64]) -> Result<()> {
        if covs.len() != self.schema.len() {
            return Err(Error::Dimension {
                expected: self.schema.len(),
                got: covs.len(),
            });
        }
        Self::fill(&self.prognostic, covs, x, &self.schema)?;
        Self::fill(&self.modifiers, covs, s, &self.schema)
    }

    pub fn encode(&self, covs: &[Option<CovValue>]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut x = vec![0.0; self.p()];
        let mut s = vec![0.0; self.q()];
        self.encode_into(covs, &mut x, &mut s)?;
        Ok((x, s))
    }

    pub fn build(&self, data: &TrialDataset) -> Result<DesignMatrixBundle> {
        if data.schema().as_ref() != self.schema.as_ref() {
            return Err(Error::Schema(format!(
                "dataset '{}' does not match the formula schema",
                data.source_id()
            )));
        }
        let n = data.len();
        let mut prognostic = Matrix::zeros(n, self.p());
        let mut modifier = Matrix::zeros(n, self.q());
        for (i, rec) in data.patients().iter().enumerate() {
            Self::fill(&self.prognostic, &rec.covariates, prognostic.row_mut(i), &self.schema)?;
            Self::fill(&self.modifiers, &rec.covariates, modifier.row_mut(i), &self.schema)?;
        }
        Ok(DesignMatrixBundle {
            prognostic,
            modifier,
            arm: data.patients().iter().map(|p| p.arm).collect(),
            outcome: data.patients().iter().map(|p| p.outcome).collect(),
            prognostic_names: self.prognostic_names.clone(),
            modifier_names: self.modifier_names.clone(),
        })
    }
}

/// Design matrices for the linear predictor `x'beta + (s'psi) * arm`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrixBundle {
    pub prognostic: Matrix,
    pub modifier: Matrix,
    pub arm: Vec<u8>,
    pub outcome: Vec<u8>,
    pub prognostic_names: Vec<String>,
    pub modifier_names: Vec<String>,
}

impl DesignMatrixBundle {
    pub fn nrows(&self) -> usize {
        self.outcome.len()
    }

    pub fn p(&self) -> usize {
        self.prognostic.ncols()
    }

    pub fn q(&self) -> usize {
        self.modifier.ncols()
    }

    pub fn empty(p: usize, q: usize) -> Self {
        DesignMatrixBundle {
            prognostic: Matrix::zeros(0, p),
            modifier: Matrix::zeros(0, q),
            arm: vec![],
            outcome: vec![],
            prognostic_names: vec![],
            modifier_names: vec![],
        }
    }
}

pub fn build_design(data: &TrialDataset, formula: &Formula) -> Result<DesignMatrixBundle> {
    formula.compile(data.schema())?.build(data)
}

/// Row filter over covariate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Always,
    Equals { name: String, value: String },
    Not(Box<Predicate>),
    All(Vec<Predicate>),
}

impl Predicate {
    pub fn equals(name: &str, value: &str) -> Self {
        Predicate::Equals {
            name: name.to_string(),
            value: value.to_string(),
        }
    }

    pub fn negate(self) -> Self {
        Predicate::Not(Box::new(self))
    }

    /// Conjunction of equalities, the usual way a subgroup is declared.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Predicate::All(pairs.into_iter().map(|(n, v)| Predicate::equals(n, v)).collect())
    }

    fn resolve(&self, schema: &Schema) -> Result<Resolved> {
        Ok(match self {
            Predicate::Always => Resolved::Always,
            Predicate::Equals { name, value } => {
                let idx = schema.require(name)?;
                Resolved::Equals(idx, schema.covariates()[idx].parse_value(value).map_err(Error::Schema)?)
            }
            Predicate::Not(p) => Resolved::Not(Box::new(p.resolve(schema)?)),
            Predicate::All(ps) => Resolved::All(ps.iter().map(|p| p.resolve(schema)).collect::<Result<_>>()?),
        })
    }
}

enum Resolved {
    Always,
    Equals(usize, CovValue),
    Not(Box<Resolved>),
    All(Vec<Resolved>),
}

impl Resolved {
    fn eval(&self, rec: &PatientRecord) -> bool {
        match self {
            Resolved::Always => true,
            Resolved::Equals(i, v) => rec.covariates[*i] == Some(*v),
            Resolved::Not(p) => !p.eval(rec),
            Resolved::All(ps) => ps.iter().all(|p| p.eval(rec)),
        }
    }
}

/// Records satisfying `predicate`, in their original order.
pub fn split_subgroup(data: &TrialDataset, predicate: &Predicate) -> Result<TrialDataset> {
    let resolved = predicate.resolve(data.schema())?;
    let idx: Vec<usize> = data
        .patients()
        .iter()
        .enumerate()
        .filter(|(_, p)| resolved.eval(p))
        .map(|(i, _)| i)
        .collect();
    Ok(data.select(&idx, data.source_id()))
}
