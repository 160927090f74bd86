//! Parameter checkpoints: `#`-prefixed `key=value` header lines describing the
//! architecture, then CSV rows `layer,row,col,value`.
//!
//! Diagonal networks use layers `w` and `c` with `row` the signed embedding
//! index. Deep networks use `diagonal` and `dense{i}.weight` / `dense{i}.bias`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, DeepNetParams, DenseLayer, DiagNetParams};
use crate::embedding::{EmbeddingConfig, EmbeddingKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Diag(DiagNetParams),
    Deep(DeepNetParams),
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    writeln!(out, "# fourier-diag checkpoint")?;
    match ckpt {
        Checkpoint::Diag(p) => {
            writeln!(out, "# arch=diag")?;
            writeln!(out, "# m={}", p.cfg.m())?;
            writeln!(out, "# activation={}", p.activation.as_str())?;
            writeln!(out, "# r_c={}", p.r_c)?;
            writeln!(out, "# q1={}", p.q1)?;
            writeln!(out, "# q2={}", p.q2)?;
        }
        Checkpoint::Deep(p) => {
            let widths: Vec<String> = p.widths().iter().map(usize::to_string).collect();
            writeln!(out, "# arch=deep")?;
            writeln!(out, "# m={}", p.cfg.m())?;
            writeln!(out, "# embedding={}", p.embedding.as_str())?;
            writeln!(out, "# diagonal={}", p.has_diagonal())?;
            writeln!(out, "# widths={}", widths.join(","))?;
            writeln!(out, "# activation=relu")?;
        }
    }
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["layer", "row", "col", "value"])?;
    match ckpt {
        Checkpoint::Diag(p) => {
            for (name, values) in [("w", &p.w), ("c", &p.c)] {
                for (slot, v) in values.iter().enumerate() {
                    let j = p.cfg.index_of_slot(slot);
                    wtr.write_record([name, &j.to_string(), "0", &v.to_string()])?;
                }
            }
        }
        Checkpoint::Deep(p) => {
            if let Some(d) = &p.diagonal {
                for (r, v) in d.iter().enumerate() {
                    wtr.write_record(["diagonal", &r.to_string(), "0", &v.to_string()])?;
                }
            }
            for (i, layer) in p.layers.iter().enumerate() {
                let wname = format!("dense{i}.weight");
                for ((r, c), v) in layer.weight.indexed_iter() {
                    wtr.write_record([&wname, &r.to_string(), &c.to_string(), &v.to_string()])?;
                }
                let bname = format!("dense{i}.bias");
                for (c, v) in layer.bias.iter().enumerate() {
                    wtr.write_record([&bname, "0", &c.to_string(), &v.to_string()])?;
                }
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let mut meta = BTreeMap::new();
    let mut header_lines = 0u64;
    for line in text.lines() {
        let Some(rest) = line.strip_prefix('#') else {
            break;
        };
        header_lines += 1;
        if let Some((k, v)) = rest.trim().split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |key: &str| -> Result<&String> {
        meta.get(key)
            .ok_or_else(|| parse_err(path, 1, format!("missing header key `{key}`")))
    };
    let num = |key: &str| -> Result<f64> {
        get(key)?
            .parse::<f64>()
            .map_err(|e| parse_err(path, 1, format!("header `{key}`: {e}")))
    };
    let m = num("m")? as usize;
    let cfg = EmbeddingConfig::new(m)?;

    let body: String = text
        .lines()
        .skip(header_lines as usize)
        .collect::<Vec<_>>()
        .join("\n");
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut rows: Vec<(String, i64, usize, f64, u64)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line()) + header_lines;
        if rec.len() != 4 {
            return Err(parse_err(path, line, "expected 4 fields"));
        }
        let row = rec[1]
            .parse::<i64>()
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        let col = rec[2]
            .parse::<usize>()
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        let value = rec[3]
            .parse::<f64>()
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        rows.push((rec[0].to_string(), row, col, value, line));
    }

    match get("arch")?.as_str() {
        "diag" => {
            let activation = match get("activation")?.as_str() {
                "relu" => Activation::Relu,
                "identity" => Activation::Identity,
                other => return Err(parse_err(path, 1, format!("unknown activation `{other}`"))),
            };
            let d = cfg.sym_dim();
            let (mut w, mut c) = (vec![0.0; d], vec![0.0; d]);
            for (name, row, _, value, line) in rows {
                let slot = cfg
                    .slot(row)
                    .ok_or_else(|| parse_err(path, line, format!("index {row} out of band")))?;
                match name.as_str() {
                    "w" => w[slot] = value,
                    "c" => c[slot] = value,
                    other => return Err(parse_err(path, line, format!("unknown layer `{other}`"))),
                }
            }
            let mut p = DiagNetParams::new(cfg, w, c, activation)?;
            p.r_c = num("r_c")?;
            p.q1 = num("q1")?;
            p.q2 = num("q2")?;
            Ok(Checkpoint::Diag(p))
        }
        "deep" => {
            let embedding = match get("embedding")?.as_str() {
                "symmetrized" => EmbeddingKind::Symmetrized,
                "doubled" => EmbeddingKind::Doubled,
                other => return Err(parse_err(path, 1, format!("unknown embedding `{other}`"))),
            };
            let has_diag = get("diagonal")? == "true";
            let widths: Vec<usize> = get("widths")?
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(path, 1, format!("widths: {e}")))?;
            if widths.len() < 2 {
                return Err(parse_err(path, 1, "widths needs at least two entries"));
            }
            let mut diagonal = has_diag.then(|| Array1::zeros(widths[0]));
            let mut layers: Vec<DenseLayer> = widths
                .windows(2)
                .map(|p| DenseLayer {
                    weight: Array2::zeros((p[0], p[1])),
                    bias: Array1::zeros(p[1]),
                })
                .collect();
            for (name, row, col, value, line) in rows {
                let oob = || parse_err(path, line, format!("entry ({row}, {col}) out of bounds"));
                let urow = usize::try_from(row).map_err(|_| oob())?;
                if name == "diagonal" {
                    let d = diagonal
                        .as_mut()
                        .ok_or_else(|| parse_err(path, line, "unexpected diagonal"))?;
                    *d.get_mut(urow).ok_or_else(oob)? = value;
                    continue;
                }
                let (layer, part) = name
                    .strip_prefix("dense")
                    .and_then(|s| s.split_once('.'))
                    .ok_or_else(|| parse_err(path, line, format!("unknown layer `{name}`")))?;
                let li: usize = layer
                    .parse()
                    .map_err(|_| parse_err(path, line, "bad layer number"))?;
                let l = layers.get_mut(li).ok_or_else(oob)?;
                match part {
                    "weight" => *l.weight.get_mut((urow, col)).ok_or_else(oob)? = value,
                    "bias" => *l.bias.get_mut(col).ok_or_else(oob)? = value,
                    _ => return Err(parse_err(path, line, format!("unknown layer `{name}`"))),
                }
            }
            Ok(Checkpoint::Deep(DeepNetParams::from_parts(
                cfg, embedding, diagonal, layers,
            )?))
        }
        other => Err(parse_err(path, 1, format!("unknown arch `{other}`"))),
    }
}
