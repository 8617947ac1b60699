//! Plain-text model files: a version line, a kind line, then named
//! tab-separated blocks. Floats use the shortest round-trip representation,
//! so a save/load cycle is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::eval::FittedModel;
use crate::ffnn::{Activation, FfnnModel};
use crate::plsr::PlsrModel;

pub const FORMAT_TAG: &str = "normprobe-model";
pub const FORMAT_VERSION: u32 = 1;

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "matrix\t{name}\t{}\t{}", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join("\t"));
    }
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("\t")
}

pub fn model_to_string(model: &FittedModel) -> String {
    let mut out = format!("{FORMAT_TAG}\t{FORMAT_VERSION}\n");
    match model {
        FittedModel::Plsr(m) => {
            out.push_str("kind\tplsr\n");
            let _ = writeln!(out, "iterations\t{}", join(m.iterations_used()));
            write_matrix(&mut out, "x_weights", m.x_weights());
            write_matrix(&mut out, "x_loadings", m.x_loadings());
            write_matrix(&mut out, "y_loadings", m.y_loadings());
            write_matrix(&mut out, "x_mean", &column(m.x_mean()));
            write_matrix(&mut out, "y_mean", &column(m.y_mean()));
        }
        FittedModel::Ffnn(m) => {
            out.push_str("kind\tffnn\n");
            let act = match m.activation() {
                Activation::Tanh => "tanh",
                Activation::Identity => "identity",
            };
            let _ = writeln!(out, "activation\t{act}");
            let _ = writeln!(out, "train_log\t{}", join(m.train_log()));
            write_matrix(&mut out, "w1", m.w1());
            write_matrix(&mut out, "b1", &column(m.b1()));
            write_matrix(&mut out, "w2", m.w2());
            write_matrix(&mut out, "b2", &column(m.b2()));
        }
    }
    out
}

struct Parsed {
    kind: String,
    fields: BTreeMap<String, Vec<String>>,
    matrices: BTreeMap<String, DMatrix<f64>>,
}

impl Parsed {
    fn matrix(&mut self, name: &str) -> Result<DMatrix<f64>> {
        self.matrices
            .remove(name)
            .ok_or_else(|| Error::MalformedHeader(format!("model file lacks matrix {name:?}")))
    }

    fn vector(&mut self, name: &str) -> Result<DVector<f64>> {
        let m = self.matrix(name)?;
        if m.ncols() != 1 {
            return Err(Error::DimensionMismatch {
                context: format!("model vector {name} columns"),
                expected: 1,
                found: m.ncols(),
            });
        }
        Ok(m.column(0).into_owned())
    }

    fn field(&self, name: &str) -> &[String] {
        self.fields.get(name).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn number<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::MalformedLine {
        line,
        reason: format!("not a number: {s:?}"),
    })
}

fn parse(text: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    let mut head = header.split('\t');
    if head.next() != Some(FORMAT_TAG) {
        return Err(Error::MalformedHeader(format!("not a model file: {header:?}")));
    }
    let version: u32 = number(head.next().unwrap_or(""), 1)?;
    if version != FORMAT_VERSION {
        return Err(Error::MalformedHeader(format!(
            "unsupported model format version {version}"
        )));
    }
    let mut parsed = Parsed {
        kind: String::new(),
        fields: BTreeMap::new(),
        matrices: BTreeMap::new(),
    };
    while let Some((no, line)) = lines.next() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        match cells[0] {
            "kind" => parsed.kind = cells.get(1).unwrap_or(&"").to_string(),
            "matrix" => {
                if cells.len() != 4 {
                    return Err(Error::MalformedLine {
                        line: no,
                        reason: "matrix header needs name, rows and cols".to_string(),
                    });
                }
                let rows: usize = number(cells[2], no)?;
                let cols: usize = number(cells[3], no)?;
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (rno, row) = lines.next().ok_or_else(|| Error::MalformedLine {
                        line: no,
                        reason: format!("matrix {} is truncated", cells[1]),
                    })?;
                    let values: Vec<&str> = if cols == 0 { Vec::new() } else { row.split('\t').collect() };
                    if values.len() != cols {
                        return Err(Error::DimensionMismatch {
                            context: format!("model matrix {} at line {rno}", cells[1]),
                            expected: cols,
                            found: values.len(),
                        });
                    }
                    for v in values {
                        data.push(number::<f64>(v, rno)?);
                    }
                }
                parsed
                    .matrices
                    .insert(cells[1].to_string(), DMatrix::from_row_slice(rows, cols, &data));
            }
            key => {
                let values = cells[1..].iter().filter(|c| !c.is_empty()).map(|c| c.to_string()).collect();
                parsed.fields.insert(key.to_string(), values);
            }
        }
    }
    Ok(parsed)
}

pub fn model_from_str(text: &str) -> Result<FittedModel> {
    let mut p = parse(text)?;
    match p.kind.as_str() {
        "plsr" => {
            let iterations = p
                .field("iterations")
                .iter()
                .map(|s| number(s, 0))
                .collect::<Result<Vec<usize>>>()?;
            let model = PlsrModel::from_parts(
                p.matrix("x_weights")?,
                p.matrix("x_loadings")?,
                p.matrix("y_loadings")?,
                p.vector("x_mean")?,
                p.vector("y_mean")?,
                iterations,
            )?;
            Ok(FittedModel::Plsr(model))
        }
        "ffnn" => {
            let activation = match p.field("activation").first().map(String::as_str) {
                Some("tanh") => Activation::Tanh,
                Some("identity") => Activation::Identity,
                other => {
                    return Err(Error::MalformedHeader(format!("unknown activation {other:?}")))
                }
            };
            let train_log = p
                .field("train_log")
                .iter()
                .map(|s| number(s, 0))
                .collect::<Result<Vec<f64>>>()?;
            let model = FfnnModel::from_parts(
                p.matrix("w1")?,
                p.vector("b1")?,
                p.matrix("w2")?,
                p.vector("b2")?,
                activation,
                train_log,
            )?;
            Ok(FittedModel::Ffnn(model))
        }
        other => Err(Error::MalformedHeader(format!("unknown model kind {other:?}"))),
    }
}

pub fn save_model(model: &FittedModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text)
}
