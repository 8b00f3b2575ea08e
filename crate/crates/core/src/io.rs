//! Dataset exchange format and result documents.
//!
//! Datasets are UTF-8 CSV with header `task,class,f1,...,fp`; task and class
//! are 1-based integers, rows may appear in any order. Result documents are
//! JSON with a stable schema-version field and sorted keys; tabular outputs
//! are CSV with headers. Floating point is serialized in shortest
//! round-trip decimal form.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::MtlDataset;

/// Current result-document schema version.
pub const SCHEMA_VERSION: u32 = 1;

pub fn save_dataset(path: &Path, data: &MtlDataset) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let p = data.p();
    let mut header = String::from("task,class");
    for f in 1..=p {
        header.push_str(&format!(",f{f}"));
    }
    writeln!(w, "{header}")?;
    for i in 0..data.k() {
        for j in 0..data.m() {
            let b = data.block(i, j);
            for c in 0..b.ncols() {
                let mut line = format!("{},{}", i + 1, j + 1);
                for r in 0..p {
                    line.push(',');
                    line.push_str(&format!("{}", b[(r, c)]));
                }
                writeln!(w, "{line}")?;
            }
        }
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<MtlDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        detail: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "task" || cols[1] != "class" {
        return Err(Error::Schema {
            column: cols.first().unwrap_or(&"").to_string(),
            detail: "header must start with task,class,f1,...".into(),
        });
    }
    for (idx, c) in cols.iter().enumerate().skip(2) {
        let want = format!("f{}", idx - 1);
        if *c != want {
            return Err(Error::Schema {
                column: (*c).to_string(),
                detail: format!("expected column `{want}`"),
            });
        }
    }
    let p = cols.len() - 2;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut kmax = 0usize;
    let mut mmax = 0usize;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != p + 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                detail: format!("{} fields, expected {}", parts.len(), p + 2),
            });
        }
        let parse_idx = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .ok()
                .filter(|&v| v >= 1)
                .ok_or(Error::Parse {
                    line: lineno + 1,
                    detail: format!("bad {what} `{s}`"),
                })
        };
        let task = parse_idx(parts[0], "task")?;
        let class = parse_idx(parts[1], "class")?;
        let mut feats = Vec::with_capacity(p);
        for (fi, s) in parts[2..].iter().enumerate() {
            let v: f64 = s.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                detail: format!("non-numeric feature f{} `{s}`", fi + 1),
            })?;
            feats.push(v);
        }
        kmax = kmax.max(task);
        mmax = mmax.max(class);
        rows.push((task - 1, class - 1, feats));
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 2,
            detail: "no data rows".into(),
        });
    }
    let mut grouped: Vec<Vec<Vec<Vec<f64>>>> = vec![vec![Vec::new(); mmax]; kmax];
    for (t, c, f) in rows {
        grouped[t][c].push(f);
    }
    let blocks = grouped
        .into_iter()
        .enumerate()
        .map(|(i, task)| {
            task.into_iter()
                .enumerate()
                .map(|(j, cols)| {
                    if cols.is_empty() {
                        return Err(Error::InsufficientSamples(format!(
                            "no rows for task {}, class {}",
                            i + 1,
                            j + 1
                        )));
                    }
                    let n = cols.len();
                    Ok(DMatrix::from_fn(p, n, |r, c| cols[c][r]))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    MtlDataset::new(blocks)
}

/// Machine-readable result document: metrics tree plus the resolved
/// configuration that produced it.
#[derive(Debug, Serialize)]
pub struct ResultDoc {
    pub schema_version: u32,
    pub experiment: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub metrics: BTreeMap<String, serde_json::Value>,
    pub tables: Vec<String>,
}

impl ResultDoc {
    pub fn new(experiment: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.to_string(),
            seed,
            config,
            metrics: BTreeMap::new(),
            tables: Vec::new(),
        }
    }

    pub fn insert<T: Serialize>(&mut self, key: &str, value: T) {
        self.metrics
            .insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let text = serde_json::to_string_pretty(self).expect("serializable");
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// Plot-ready CSV table with a header row.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
