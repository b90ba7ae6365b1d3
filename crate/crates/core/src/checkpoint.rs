//! On-disk formats for trained models and reports.
//!
//! Embedding tables persist as text (`view dim V` header, then
//! `node_id v_1 .. v_d` per row) and as an equivalent little-endian
//! binary with length-prefixed strings. Text floats use the shortest
//! round-tripping decimal form, so text and binary round-trips are both
//! bit-exact. Only input vectors are persisted: they are the exported
//! representation, and nothing downstream reads context vectors.
//!
//! Transforms and per-task log-variances live in a line-oriented
//! metadata file keyed by task name. Training history is CSV. All
//! writers here take an open `Write`; `write_atomic` provides the
//! temp-file-and-rename wrapper the pipeline uses so failed runs never
//! leave partial outputs behind.

use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::diversity::MetricModel;
use crate::error::{Error, Result};
use crate::graph::Vocab;
use crate::training::{AlignmentTransform, EmbeddingTable, HistoryRecord, TaskUncertainty};
use crate::types::{Relation, TaskId, View};

/// Write through a temp file in the target directory, then rename into
/// place. The target is either fully written or untouched.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d),
        None => tempfile::NamedTempFile::new_in("."),
    }
    .map_err(|e| Error::io(path.display(), e))?;
    f(&mut tmp)?;
    tmp.flush().map_err(|e| Error::io(path.display(), e))?;
    tmp.persist(path)
        .map_err(|e| Error::io(path.display(), e.error))?;
    Ok(())
}

fn werr(e: std::io::Error) -> Error {
    Error::io("<checkpoint>", e)
}

/// `view dim V` header, then one `node_id v_1 .. v_d` line per row.
pub fn write_table_text(
    mut w: impl Write,
    table: &EmbeddingTable,
    vocab: &Vocab,
) -> Result<()> {
    if vocab.len() != table.vocab_size() {
        return Err(Error::Data(format!(
            "{} table has {} rows but vocabulary {} entries",
            table.view,
            table.vocab_size(),
            vocab.len()
        )));
    }
    writeln!(w, "{} {} {}", table.view, table.dim, vocab.len()).map_err(werr)?;
    for (i, id) in vocab.iter() {
        write!(w, "{id}").map_err(werr)?;
        for v in table.input_row(i) {
            write!(w, " {v}").map_err(werr)?;
        }
        writeln!(w).map_err(werr)?;
    }
    Ok(())
}

/// Inverse of [`write_table_text`]. Context vectors come back zeroed.
pub fn read_table_text(r: impl BufRead, path: &Path) -> Result<(EmbeddingTable, Vocab)> {
    let bad = |line_no: usize, what: &str| {
        Error::Data(format!("{}:{line_no}: {what}", path.display()))
    };
    let mut lines = r.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| bad(1, "empty table checkpoint"))?;
    let header = header.map_err(|e| Error::io(path.display(), e))?;
    let mut parts = header.split_whitespace();
    let view: View = parts
        .next()
        .ok_or_else(|| bad(1, "missing view"))?
        .parse()?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(1, "bad dim"))?;
    let v: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(1, "bad vocab size"))?;
    let mut vocab = Vocab::new();
    let mut input = Vec::with_capacity(v * dim);
    for (no, line) in lines {
        let line = line.map_err(|e| Error::io(path.display(), e))?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().ok_or_else(|| bad(no + 1, "missing node id"))?;
        if vocab.get(id).is_some() {
            return Err(bad(no + 1, "duplicate node id"));
        }
        vocab.get_or_insert(id);
        let mut count = 0;
        for p in parts {
            let x: f64 = p
                .parse()
                .map_err(|_| bad(no + 1, "bad float"))?;
            input.push(x);
            count += 1;
        }
        if count != dim {
            return Err(bad(no + 1, "wrong vector length"));
        }
    }
    if vocab.len() != v {
        return Err(Error::Data(format!(
            "{}: header claims {v} rows, found {}",
            path.display(),
            vocab.len()
        )));
    }
    let table = EmbeddingTable {
        view,
        dim,
        context: vec![0.0; input.len()],
        input,
    };
    Ok((table, vocab))
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes()).map_err(werr)?;
    w.write_all(s.as_bytes()).map_err(werr)
}

fn read_str(r: &mut impl Read, path: &Path) -> Result<String> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|e| Error::io(path.display(), e))?;
    let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)
        .map_err(|e| Error::io(path.display(), e))?;
    String::from_utf8(buf)
        .map_err(|_| Error::Data(format!("{}: invalid utf-8 in id", path.display())))
}

/// Binary table: length-prefixed view name, u64 dim, u64 V, then per
/// row a length-prefixed id and dim f64 values. All little-endian.
pub fn write_table_binary(
    mut w: impl Write,
    table: &EmbeddingTable,
    vocab: &Vocab,
) -> Result<()> {
    if vocab.len() != table.vocab_size() {
        return Err(Error::Data("table/vocabulary size mismatch".into()));
    }
    write_str(&mut w, table.view.as_str())?;
    w.write_all(&(table.dim as u64).to_le_bytes()).map_err(werr)?;
    w.write_all(&(vocab.len() as u64).to_le_bytes()).map_err(werr)?;
    for (i, id) in vocab.iter() {
        write_str(&mut w, id)?;
        for v in table.input_row(i) {
            w.write_all(&v.to_le_bytes()).map_err(werr)?;
        }
    }
    Ok(())
}

pub fn read_table_binary(mut r: impl Read, path: &Path) -> Result<(EmbeddingTable, Vocab)> {
    let ioerr = |e| Error::io(path.display(), e);
    let view: View = read_str(&mut r, path)?.parse()?;
    let mut n8 = [0u8; 8];
    r.read_exact(&mut n8).map_err(ioerr)?;
    let dim = u64::from_le_bytes(n8) as usize;
    r.read_exact(&mut n8).map_err(ioerr)?;
    let v = u64::from_le_bytes(n8) as usize;
    let mut vocab = Vocab::new();
    let mut input = Vec::with_capacity(v * dim);
    for _ in 0..v {
        let id = read_str(&mut r, path)?;
        if vocab.get(&id).is_some() {
            return Err(Error::Data(format!(
                "{}: duplicate node id {id}",
                path.display()
            )));
        }
        vocab.get_or_insert(&id);
        for _ in 0..dim {
            r.read_exact(&mut n8).map_err(ioerr)?;
            input.push(f64::from_le_bytes(n8));
        }
    }
    let table = EmbeddingTable {
        view,
        dim,
        context: vec![0.0; input.len()],
        input,
    };
    Ok((table, vocab))
}

/// Metadata file: alignment transforms and task log-variances.
///
/// ```text
/// floor_var 0.05
/// transform inter:item-category <out_dim> <in_dim>
/// <out_dim lines of in_dim floats>
/// log_var intra:item 0
/// ```
pub fn write_meta(
    mut w: impl Write,
    transforms: &BTreeMap<Relation, AlignmentTransform>,
    uncertainties: &BTreeMap<TaskId, TaskUncertainty>,
) -> Result<()> {
    let floor = uncertainties
        .values()
        .next()
        .map(|u| u.floor_var)
        .unwrap_or(0.05);
    writeln!(w, "floor_var {floor}").map_err(werr)?;
    for (rel, t) in transforms {
        writeln!(w, "transform {} {} {}", TaskId::Inter(*rel), t.out_dim, t.in_dim)
            .map_err(werr)?;
        for row in 0..t.out_dim {
            let cells = &t.matrix[row * t.in_dim..(row + 1) * t.in_dim];
            let line: Vec<String> = cells.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" ")).map_err(werr)?;
        }
    }
    for (task, u) in uncertainties {
        writeln!(w, "log_var {task} {}", u.log_var).map_err(werr)?;
    }
    Ok(())
}

pub fn read_meta(
    r: impl BufRead,
    path: &Path,
) -> Result<(BTreeMap<Relation, AlignmentTransform>, BTreeMap<TaskId, TaskUncertainty>)> {
    let mut transforms = BTreeMap::new();
    let mut log_vars: Vec<(TaskId, f64)> = Vec::new();
    let mut floor_var = 0.05;
    let mut lines = r.lines();
    let bad = |what: String| Error::Data(format!("{}: {what}", path.display()));
    while let Some(line) = lines.next() {
        let line = line.map_err(|e| Error::io(path.display(), e))?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("floor_var") => {
                floor_var = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad floor_var".into()))?;
            }
            Some("transform") => {
                let task: TaskId = parts
                    .next()
                    .ok_or_else(|| bad("transform missing task".into()))?
                    .parse()?;
                let TaskId::Inter(rel) = task else {
                    return Err(bad(format!("transform keyed by non-inter task {task}")));
                };
                let out_dim: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad out_dim".into()))?;
                let in_dim: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad in_dim".into()))?;
                let mut matrix = Vec::with_capacity(out_dim * in_dim);
                for _ in 0..out_dim {
                    let row = lines
                        .next()
                        .ok_or_else(|| bad("truncated transform".into()))?
                        .map_err(|e| Error::io(path.display(), e))?;
                    for cell in row.split_whitespace() {
                        matrix.push(
                            cell.parse()
                                .map_err(|_| bad("bad transform float".into()))?,
                        );
                    }
                }
                if matrix.len() != out_dim * in_dim {
                    return Err(bad("transform shape mismatch".into()));
                }
                transforms.insert(
                    rel,
                    AlignmentTransform {
                        relation: rel,
                        in_dim,
                        out_dim,
                        matrix,
                    },
                );
            }
            Some("log_var") => {
                let task: TaskId = parts
                    .next()
                    .ok_or_else(|| bad("log_var missing task".into()))?
                    .parse()?;
                let value: f64 = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad log_var value".into()))?;
                log_vars.push((task, value));
            }
            Some(other) => return Err(bad(format!("unknown record {other}"))),
            None => {}
        }
    }
    let uncertainties = log_vars
        .into_iter()
        .map(|(task, value)| {
            let mut u = TaskUncertainty::new(task, floor_var);
            u.log_var = value;
            (task, u)
        })
        .collect();
    Ok((transforms, uncertainties))
}

/// `step,task,loss,sigma2,weight` CSV.
pub fn write_history(mut w: impl Write, history: &[HistoryRecord]) -> Result<()> {
    writeln!(w, "step,task,loss,sigma2,weight").map_err(werr)?;
    for h in history {
        writeln!(w, "{},{},{},{},{}", h.step, h.task, h.loss, h.sigma2, h.weight)
            .map_err(werr)?;
    }
    Ok(())
}

/// Metric factors with shape headers:
///
/// ```text
/// margin 1
/// l_i 3 3
/// <3 lines of 3 floats>
/// l_ic 2 2
/// <2 lines of 2 floats>
/// ```
pub fn write_metric_model(mut w: impl Write, model: &MetricModel) -> Result<()> {
    writeln!(w, "margin {}", model.margin).map_err(werr)?;
    for (name, d, l) in [
        ("l_i", model.dim, &model.l_i),
        ("l_ic", model.rel_dim, &model.l_ic),
    ] {
        writeln!(w, "{name} {d} {d}").map_err(werr)?;
        for row in 0..d {
            let cells: Vec<String> =
                l[row * d..(row + 1) * d].iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(" ")).map_err(werr)?;
        }
    }
    Ok(())
}

pub fn read_metric_model(r: impl BufRead, path: &Path) -> Result<MetricModel> {
    let bad = |what: &str| Error::Data(format!("{}: {what}", path.display()));
    let mut margin = 1.0;
    let mut l_i: Option<(usize, Vec<f64>)> = None;
    let mut l_ic: Option<(usize, Vec<f64>)> = None;
    let mut lines = r.lines();
    while let Some(line) = lines.next() {
        let line = line.map_err(|e| Error::io(path.display(), e))?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("margin") => {
                margin = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad margin"))?;
            }
            Some(name @ ("l_i" | "l_ic")) => {
                let d: usize = parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("bad shape"))?;
                let mut m = Vec::with_capacity(d * d);
                for _ in 0..d {
                    let row = lines
                        .next()
                        .ok_or_else(|| bad("truncated factor"))?
                        .map_err(|e| Error::io(path.display(), e))?;
                    for cell in row.split_whitespace() {
                        m.push(cell.parse().map_err(|_| bad("bad float"))?);
                    }
                }
                if m.len() != d * d {
                    return Err(bad("factor shape mismatch"));
                }
                if name == "l_i" {
                    l_i = Some((d, m));
                } else {
                    l_ic = Some((d, m));
                }
            }
            Some(_) => return Err(bad("unknown record")),
            None => {}
        }
    }
    let (dim, l_i) = l_i.ok_or_else(|| bad("missing l_i"))?;
    let (rel_dim, l_ic) = l_ic.ok_or_else(|| bad("missing l_ic"))?;
    Ok(MetricModel {
        dim,
        rel_dim,
        l_i,
        l_ic,
        margin,
    })
}

/// `trigger_id<TAB>item:score,item:score,...` per line.
pub fn write_similarity_map(
    mut w: impl Write,
    entries: &[(String, Vec<(String, f64)>)],
) -> Result<()> {
    for (trigger, neighbors) in entries {
        let cells: Vec<String> = neighbors
            .iter()
            .map(|(id, score)| format!("{id}:{score}"))
            .collect();
        writeln!(w, "{trigger}\t{}", cells.join(",")).map_err(werr)?;
    }
    Ok(())
}
