//! Model files: one `key = value` per line, `#` starts a comment.
//!
//! Keys: `k`, `n`, `lagrangian` (required); `hamiltonian`, `ansatz`
//! (`symmetric`, `full` or matrix rows such as `1 1; 1 1`), `grid`,
//! `sample.NAME` (flat Lagrangian coordinates `q1..qn, v1_1, v1_2, ..`),
//! `constraint` (repeatable, on the covelocity bundle), `h0` and
//! `exact.qI` (closed-form section in `t1..tk`).

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{FieldModel, LagPoint, Space};
use crate::lagside::Ansatz;
use crate::symcore::{parse, q_name, Expr};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}:{line}: {message}")]
pub struct ModelFileError {
    pub path: String,
    /// 1-based; 0 when the problem is not tied to a line.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ModelFile {
    pub model: FieldModel,
    pub hamiltonian: Option<Expr>,
    pub ansatz: Ansatz,
    pub grid: Option<String>,
    pub samples: Vec<(String, LagPoint)>,
    pub constraints: Vec<Expr>,
    pub h0: Option<Expr>,
    pub exact: Option<Vec<Expr>>,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<ModelFile, ModelFileError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelFileError {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        ModelFile::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, path: &str) -> Result<ModelFile, ModelFileError> {
        let err = |line: usize, message: String| ModelFileError {
            path: path.to_string(),
            line,
            message,
        };
        let mut single: BTreeMap<String, (usize, String)> = BTreeMap::new();
        let mut samples_raw = Vec::new();
        let mut constraints_raw = Vec::new();
        let mut exact_raw = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, format!("expected `key = value`, found {content:?}")))?;
            let (key, value) = (key.trim(), value.trim().to_string());
            if value.is_empty() {
                return Err(err(line, format!("empty value for {key:?}")));
            }
            if let Some(name) = key.strip_prefix("sample.") {
                samples_raw.push((line, name.to_string(), value));
            } else if let Some(var) = key.strip_prefix("exact.") {
                if exact_raw.insert(var.to_string(), (line, value)).is_some() {
                    return Err(err(line, format!("duplicate key {key:?}")));
                }
            } else if key == "constraint" {
                constraints_raw.push((line, value));
            } else if matches!(
                key,
                "k" | "n" | "lagrangian" | "hamiltonian" | "ansatz" | "grid" | "h0"
            ) {
                if single.insert(key.to_string(), (line, value)).is_some() {
                    return Err(err(line, format!("duplicate key {key:?}")));
                }
            } else {
                return Err(err(line, format!("unknown key {key:?}")));
            }
        }
        let required = |key: &str| {
            single
                .get(key)
                .cloned()
                .ok_or_else(|| err(0, format!("missing key {key:?}")))
        };
        let count = |key: &str| -> Result<usize, ModelFileError> {
            let (line, v) = required(key)?;
            match v.parse::<usize>() {
                Ok(c) if c > 0 => Ok(c),
                _ => Err(err(
                    line,
                    format!("{key} must be a positive integer, found {v:?}"),
                )),
            }
        };
        let expr = |line: usize, v: &str| parse(v).map_err(|e| err(line, e.to_string()));
        let (k, n) = (count("k")?, count("n")?);
        let (lline, ltext) = required("lagrangian")?;
        let model =
            FieldModel::new(k, n, expr(lline, &ltext)?).map_err(|e| err(lline, e.to_string()))?;
        let optional = |key: &str| -> Result<Option<Expr>, ModelFileError> {
            single.get(key).map(|(line, v)| expr(*line, v)).transpose()
        };
        let hamiltonian = optional("hamiltonian")?;
        let h0 = optional("h0")?;
        let ham_coords = Space::Hamiltonian.coordinates(n, k);
        for key in ["hamiltonian", "h0"] {
            if let Some((line, v)) = single.get(key) {
                check_vars(&expr(*line, v)?, &ham_coords).map_err(|m| err(*line, m))?;
            }
        }
        let ansatz = match single.get("ansatz") {
            None => Ansatz::Symmetric,
            Some((line, v)) => parse_ansatz(v, k).map_err(|m| err(*line, m))?,
        };
        let mut samples = Vec::new();
        for (line, name, v) in samples_raw {
            if samples.iter().any(|(s, _)| *s == name) {
                return Err(err(line, format!("duplicate sample {name:?}")));
            }
            let coords = parse_numbers(&v).map_err(|m| err(line, m))?;
            let point = LagPoint::from_coords(n, k, &coords).map_err(|_| {
                err(
                    line,
                    format!(
                        "sample {name:?} needs {} coordinates, found {}",
                        Space::Lagrangian.dim(n, k),
                        coords.len()
                    ),
                )
            })?;
            samples.push((name, point));
        }
        let constraints = constraints_raw
            .into_iter()
            .map(|(line, v)| {
                let c = expr(line, &v)?;
                check_vars(&c, &ham_coords).map_err(|m| err(line, m))?;
                Ok(c)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let exact = if exact_raw.is_empty() {
            None
        } else {
            let ts: Vec<String> = (0..k).map(crate::symcore::t_name).collect();
            let mut out = Vec::new();
            for i in 0..n {
                let (line, v) = exact_raw
                    .remove(&q_name(i))
                    .ok_or_else(|| err(0, format!("exact solution lacks exact.{}", q_name(i))))?;
                let e = expr(line, &v)?;
                check_vars(&e, &ts).map_err(|m| err(line, m))?;
                out.push(e);
            }
            if let Some((name, (line, _))) = exact_raw.into_iter().next() {
                return Err(err(
                    line,
                    format!("exact.{name} is not a field of this model"),
                ));
            }
            Some(out)
        };
        Ok(ModelFile {
            model,
            hamiltonian,
            ansatz,
            grid: single.get("grid").map(|(_, v)| v.clone()),
            samples,
            constraints,
            h0,
            exact,
        })
    }
}

fn check_vars(e: &Expr, allowed: &[String]) -> Result<(), String> {
    match e.free_vars().into_iter().find(|v| !allowed.contains(v)) {
        Some(bad) => Err(format!("unexpected variable {bad:?}")),
        None => Ok(()),
    }
}

pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

fn parse_ansatz(text: &str, k: usize) -> Result<Ansatz, String> {
    match text {
        "symmetric" => return Ok(Ansatz::Symmetric),
        "full" => return Ok(Ansatz::Full),
        _ => {}
    }
    let rows = text
        .split(';')
        .map(parse_numbers)
        .collect::<Result<Vec<_>, _>>()?;
    if rows.len() != k || rows.iter().any(|r| r.len() != k) {
        return Err(format!("ansatz matrix must be {k} x {k}"));
    }
    Ok(Ansatz::UserMatrix(rows))
}
