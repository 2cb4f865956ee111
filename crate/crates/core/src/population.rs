//! Finite populations of text pieces.
//!
//! A [`Population`] is the complete set of economically relevant pieces with
//! their trusted measurement `v_true`, linked covariates `w` (intercept
//! first), an optional outcome `y`, and zero or more machine labels keyed by
//! labeler name. Populations are immutable once built.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{Field, Real};

/// Labeler name used by [`generate_synthetic`].
pub const SYNTHETIC_LABELER: &str = "synthetic";

#[derive(Clone, Debug, PartialEq)]
pub struct TextPiece<T> {
    pub id: String,
    pub text: Option<String>,
    pub v_true: T,
    pub y: Option<T>,
    pub w: Vec<T>,
    pub labels: BTreeMap<String, T>,
}

impl<T: Field> TextPiece<T> {
    pub fn new(id: impl Into<String>, v_true: T, w: Vec<T>) -> Self {
        TextPiece {
            id: id.into(),
            text: None,
            v_true,
            y: None,
            w,
            labels: BTreeMap::new(),
        }
    }

    pub fn with_label(mut self, labeler: impl Into<String>, value: T) -> Self {
        self.labels.insert(labeler.into(), value);
        self
    }

    pub fn with_y(mut self, y: T) -> Self {
        self.y = Some(y);
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn label(&self, labeler: &str) -> Result<T> {
        self.labels
            .get(labeler)
            .copied()
            .ok_or_else(|| Error::MissingLabel {
                piece: self.id.clone(),
                labeler: labeler.to_string(),
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Population<T> {
    pieces: Vec<TextPiece<T>>,
    k: usize,
}

impl<T> Population<T> {
    pub fn pieces(&self) -> &[TextPiece<T>] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Covariate dimension, intercept included.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn piece(&self, index: usize) -> &TextPiece<T> {
        &self.pieces[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.pieces.iter().position(|p| p.id == id)
    }
}

impl<T: Field> Population<T> {
    /// Validates and freezes a list of pieces.
    pub fn new(pieces: Vec<TextPiece<T>>) -> Result<Self> {
        let first = pieces
            .first()
            .ok_or_else(|| Error::Validation("population must contain at least one piece".into()))?;
        let k = first.w.len();
        if k == 0 {
            return Err(Error::Validation("covariate dimension must be at least 1".into()));
        }
        let mut seen = HashSet::with_capacity(pieces.len());
        for piece in &pieces {
            if !seen.insert(piece.id.as_str()) {
                return Err(Error::DuplicateId(piece.id.clone()));
            }
            if piece.w.len() != k {
                return Err(Error::Validation(format!(
                    "piece {:?} has {} covariates, expected {k}",
                    piece.id,
                    piece.w.len()
                )));
            }
            let finite = piece.v_true.is_finite_value()
                && piece.y.is_none_or(|y| y.is_finite_value())
                && piece.w.iter().all(|x| x.is_finite_value())
                && piece.labels.values().all(|x| x.is_finite_value());
            if !finite {
                return Err(Error::Validation(format!(
                    "piece {:?} has a non-finite numeric field",
                    piece.id
                )));
            }
        }
        Ok(Population { pieces, k })
    }

    /// Labels of one labeler in canonical order; fails on the first gap.
    pub fn labels(&self, labeler: &str) -> Result<Vec<T>> {
        self.pieces.iter().map(|p| p.label(labeler)).collect()
    }

    pub fn truth(&self) -> Vec<T> {
        self.pieces.iter().map(|p| p.v_true).collect()
    }

    /// Sorted set of labeler names seen on any piece.
    pub fn labelers(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .pieces
            .iter()
            .flat_map(|p| p.labels.keys().cloned())
            .collect();
        names.sort();
        names.dedup();
        names
    }

    /// Returns a copy in which `labeler`'s labels are replaced by `f(piece)`.
    pub fn relabel(&self, labeler: &str, mut f: impl FnMut(usize, &TextPiece<T>) -> T) -> Result<Self> {
        let pieces = self
            .pieces
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut p = p.clone();
                let value = f(i, &p);
                p.labels.insert(labeler.to_string(), value);
                p
            })
            .collect();
        Population::new(pieces)
    }
}

impl<T: Real> Population<T> {
    /// `n x k` covariate matrix over the given piece indices.
    pub fn design(&self, rows: &[usize]) -> DMatrix<T> {
        DMatrix::from_fn(rows.len(), self.k, |i, j| self.pieces[rows[i]].w[j])
    }

    pub fn design_all(&self) -> DMatrix<T> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.design(&all)
    }

    pub fn truth_vector(&self, rows: &[usize]) -> DVector<T> {
        DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.pieces[r].v_true))
    }

    pub fn label_vector(&self, labeler: &str, rows: &[usize]) -> Result<DVector<T>> {
        let values = rows
            .iter()
            .map(|&r| self.pieces[r].label(labeler))
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(values))
    }

    /// Covariate column `j` over `rows`.
    pub fn covariate_vector(&self, j: usize, rows: &[usize]) -> DVector<T> {
        DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.pieces[r].w[j]))
    }
}

/// One-hot encoding of a categorical concept. With `drop` set, the column of
/// that category is omitted so the result can sit next to an intercept.
pub fn one_hot<T: Field>(values: &[String], drop: Option<&str>) -> (Vec<String>, Vec<Vec<T>>) {
    let mut categories: Vec<String> = values.to_vec();
    categories.sort();
    categories.dedup();
    if let Some(d) = drop {
        categories.retain(|c| c != d);
    }
    let rows = values
        .iter()
        .map(|v| {
            categories
                .iter()
                .map(|c| if c == v { T::one() } else { T::zero() })
                .collect()
        })
        .collect();
    (categories, rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CovariateLaw {
    StandardNormal,
    Bernoulli { p: f64 },
    /// Deterministic evenly spaced values on [-1, 1].
    FixedGrid,
}

/// Recipe for a synthetic population with planted label error
/// `vhat - v = w'gamma + u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_pieces: usize,
    pub beta_star: Vec<f64>,
    pub gamma: Vec<f64>,
    pub noise_sd_v: f64,
    pub noise_sd_delta: f64,
    pub covariate_law: CovariateLaw,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn k(&self) -> usize {
        self.beta_star.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(m.to_string()));
        if self.n_pieces == 0 {
            return bad("n_pieces must be positive");
        }
        if self.beta_star.is_empty() {
            return bad("beta_star must have at least one entry (the intercept)");
        }
        if self.gamma.len() != self.beta_star.len() {
            return bad("gamma and beta_star must have the same length");
        }
        if !(self.noise_sd_v >= 0.0 && self.noise_sd_delta >= 0.0) {
            return bad("noise standard deviations must be nonnegative");
        }
        if let CovariateLaw::Bernoulli { p } = self.covariate_law {
            if !(0.0..=1.0).contains(&p) {
                return bad("bernoulli probability must lie in [0, 1]");
            }
        }
        let finite = self
            .beta_star
            .iter()
            .chain(&self.gamma)
            .chain([&self.noise_sd_v, &self.noise_sd_delta])
            .all(|x| x.is_finite());
        if !finite {
            return bad("synthetic parameters must be finite");
        }
        Ok(())
    }
}

/// Draws a population from `spec`; piece `i` uses its own random stream.
pub fn generate_synthetic<T: Field>(spec: &SyntheticSpec) -> Result<Population<T>> {
    spec.validate()?;
    let k = spec.k();
    let n = spec.n_pieces;
    let bernoulli = match spec.covariate_law {
        CovariateLaw::Bernoulli { p } => Some(Bernoulli::new(p).expect("validated probability")),
        _ => None,
    };
    let pieces = (0..n)
        .map(|i| {
            let mut rng = rng::stream(spec.seed, rng::TAG_SYNTHETIC, i as u64);
            let mut w = Vec::with_capacity(k);
            w.push(1.0);
            for j in 1..k {
                let x = match spec.covariate_law {
                    CovariateLaw::StandardNormal => StandardNormal.sample(&mut rng),
                    CovariateLaw::Bernoulli { .. } => {
                        if bernoulli.unwrap().sample(&mut rng) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    CovariateLaw::FixedGrid => {
                        let pos = (i * (2 * j - 1)) % n;
                        if n == 1 {
                            0.0
                        } else {
                            -1.0 + 2.0 * pos as f64 / (n - 1) as f64
                        }
                    }
                };
                w.push(x);
            }
            let eps: f64 = StandardNormal.sample(&mut rng);
            let u: f64 = StandardNormal.sample(&mut rng);
            let dot = |c: &[f64]| c.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let v = dot(&spec.beta_star) + spec.noise_sd_v * eps;
            let vhat = v + dot(&spec.gamma) + spec.noise_sd_delta * u;
            TextPiece {
                id: format!("s{i}"),
                text: None,
                v_true: T::lit(v),
                y: None,
                w: w.into_iter().map(T::lit).collect(),
                labels: BTreeMap::from([(SYNTHETIC_LABELER.to_string(), T::lit(vhat))]),
            }
        })
        .collect();
    Population::new(pieces)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

pub fn load_population<T: Field>(path: &Path, format: Format) -> Result<Population<T>> {
    let file = File::open(path)?;
    match format {
        Format::Csv => read_csv(BufReader::new(file)),
        Format::Json => read_json(BufReader::new(file)),
    }
}

pub fn save_population<T: Field>(pop: &Population<T>, path: &Path, format: Format) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_csv(pop, &mut out)?,
        Format::Json => write_json(pop, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    let value: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        row,
        message: format!("column `{column}`: cannot parse {raw:?} as a number"),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("column `{column}`: value {raw:?} is not finite"),
        });
    }
    Ok(value)
}

fn check_intercept(w0: f64, row: usize) -> Result<()> {
    if w0 != 1.0 {
        return Err(Error::Parse {
            row,
            message: format!("w_0 must be 1.0 (intercept), found {w0}"),
        });
    }
    Ok(())
}

/// Reads the CSV schema. Data rows are numbered from 1.
pub fn read_csv<T: Field, R: std::io::Read>(reader: R) -> Result<Population<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let id_col = find("id").ok_or_else(|| Error::Parse {
        row: 0,
        message: "missing required column `id`".into(),
    })?;
    let v_col = find("v").ok_or_else(|| Error::Parse {
        row: 0,
        message: "missing required column `v`".into(),
    })?;
    let y_col = find("y");
    let text_col = find("text");
    let mut w_cols = Vec::new();
    while let Some(c) = find(&format!("w_{}", w_cols.len())) {
        w_cols.push(c);
    }
    if w_cols.is_empty() {
        return Err(Error::Parse {
            row: 0,
            message: "missing covariate column `w_0`".into(),
        });
    }
    let label_cols: Vec<(String, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("vhat_").map(|name| (name.to_string(), i)))
        .collect();

    let mut pieces = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let id = field(id_col).to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty id".into(),
            });
        }
        let v = parse_number(field(v_col), row, "v")?;
        let mut w = Vec::with_capacity(w_cols.len());
        for (j, &c) in w_cols.iter().enumerate() {
            w.push(T::lit(parse_number(field(c), row, &format!("w_{j}"))?));
        }
        check_intercept(w[0].as_f64(), row)?;
        let y = match y_col.map(field).filter(|s| !s.is_empty()) {
            Some(raw) => Some(T::lit(parse_number(raw, row, "y")?)),
            None => None,
        };
        let text = text_col.map(field).filter(|s| !s.is_empty()).map(str::to_string);
        let mut labels = BTreeMap::new();
        for (name, c) in &label_cols {
            let raw = field(*c);
            if !raw.is_empty() {
                labels.insert(name.clone(), T::lit(parse_number(raw, row, &format!("vhat_{name}"))?));
            }
        }
        pieces.push(TextPiece {
            id,
            text,
            v_true: T::lit(v),
            y,
            w,
            labels,
        });
    }
    Population::new(pieces)
}

pub fn write_csv<T: Field, W: Write>(pop: &Population<T>, out: W) -> Result<()> {
    let labelers = pop.labelers();
    let has_y = pop.pieces().iter().any(|p| p.y.is_some());
    let has_text = pop.pieces().iter().any(|p| p.text.is_some());
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "v".to_string()];
    header.extend((0..pop.k()).map(|j| format!("w_{j}")));
    if has_y {
        header.push("y".into());
    }
    if has_text {
        header.push("text".into());
    }
    header.extend(labelers.iter().map(|l| format!("vhat_{l}")));
    wtr.write_record(&header)?;
    for p in pop.pieces() {
        let mut rec = vec![p.id.clone(), p.v_true.as_f64().to_string()];
        rec.extend(p.w.iter().map(|x| x.as_f64().to_string()));
        if has_y {
            rec.push(p.y.map(|y| y.as_f64().to_string()).unwrap_or_default());
        }
        if has_text {
            rec.push(p.text.clone().unwrap_or_default());
        }
        rec.extend(
            labelers
                .iter()
                .map(|l| p.labels.get(l).map(|x| x.as_f64().to_string()).unwrap_or_default()),
        );
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

fn json_number(obj: &Map<String, Value>, key: &str, row: usize) -> Result<Option<f64>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n.as_f64().map(Some).ok_or_else(|| Error::Parse {
            row,
            message: format!("field `{key}` is not representable as f64"),
        }),
        Some(other) => Err(Error::Parse {
            row,
            message: format!("field `{key}` must be a number, found {other}"),
        }),
    }
}

pub fn read_json<T: Field, R: std::io::Read>(reader: R) -> Result<Population<T>> {
    let value: Value = serde_json::from_reader(reader)?;
    let rows = value.as_array().ok_or_else(|| Error::Parse {
        row: 0,
        message: "top-level JSON value must be an array of pieces".into(),
    })?;
    let mut pieces = Vec::with_capacity(rows.len());
    for (idx, item) in rows.iter().enumerate() {
        let row = idx + 1;
        let obj = item.as_object().ok_or_else(|| Error::Parse {
            row,
            message: "each piece must be a JSON object".into(),
        })?;
        let id = match obj.get("id") {
            Some(Value::String(s)) if !s.is_empty() => s.clone(),
            _ => {
                return Err(Error::Parse {
                    row,
                    message: "missing string field `id`".into(),
                })
            }
        };
        let v = json_number(obj, "v", row)?.ok_or_else(|| Error::Parse {
            row,
            message: "missing numeric field `v`".into(),
        })?;
        let mut w = Vec::new();
        while let Some(x) = json_number(obj, &format!("w_{}", w.len()), row)? {
            w.push(T::lit(x));
        }
        if w.is_empty() {
            return Err(Error::Parse {
                row,
                message: "missing covariate field `w_0`".into(),
            });
        }
        check_intercept(w[0].as_f64(), row)?;
        let y = json_number(obj, "y", row)?.map(T::lit);
        let text = match obj.get("text") {
            Some(Value::String(s)) => Some(s.clone()),
            None | Some(Value::Null) => None,
            Some(_) => {
                return Err(Error::Parse {
                    row,
                    message: "field `text` must be a string".into(),
                })
            }
        };
        let mut labels = BTreeMap::new();
        match obj.get("vhat") {
            None | Some(Value::Null) => {}
            Some(Value::Object(map)) => {
                for name in map.keys() {
                    if let Some(x) = json_number(map, name, row)? {
                        labels.insert(name.clone(), T::lit(x));
                    }
                }
            }
            Some(_) => {
                return Err(Error::Parse {
                    row,
                    message: "field `vhat` must be an object".into(),
                })
            }
        }
        pieces.push(TextPiece {
            id,
            text,
            v_true: T::lit(v),
            y,
            w,
            labels,
        });
    }
    Population::new(pieces)
}

pub fn write_json<T: Field, W: Write>(pop: &Population<T>, out: W) -> Result<()> {
    let rows: Vec<Value> = pop
        .pieces()
        .iter()
        .map(|p| {
            let mut obj = Map::new();
            obj.insert("id".into(), Value::from(p.id.clone()));
            obj.insert("v".into(), Value::from(p.v_true.as_f64()));
            for (j, x) in p.w.iter().enumerate() {
                obj.insert(format!("w_{j}"), Value::from(x.as_f64()));
            }
            if let Some(y) = p.y {
                obj.insert("y".into(), Value::from(y.as_f64()));
            }
            if let Some(t) = &p.text {
                obj.insert("text".into(), Value::from(t.clone()));
            }
            if !p.labels.is_empty() {
                let labels: Map<String, Value> = p
                    .labels
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::from(v.as_f64())))
                    .collect();
                obj.insert("vhat".into(), Value::Object(labels));
            }
            Value::Object(obj)
        })
        .collect();
    serde_json::to_writer(out, &rows)?;
    Ok(())
}
