//! Plain-text checkpoints.
//!
//! ```text
//! gcgpn-checkpoint/1
//! config {json}
//! seen <n>
//! <id>            (n lines)
//! side <operator> none | side <operator> <n>
//! <id> <v>...     (n lines, for tables)
//! param <name> <rows> <cols> <trainable|frozen>
//! <v> <v> ...     (rows lines)
//! ```
//!
//! Values are written with 17 significant digits, which round-trips `f64`
//! exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::ModelConfig;
use super::network::Model;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::operators::ClassSimilarity;

const MAGIC: &str = "gcgpn-checkpoint/1";

fn push_values(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:.16e}").expect("writing to a String");
    }
    out.push('\n');
}

impl Model {
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let config = serde_json::to_string(&self.config).expect("model config serializes");
        writeln!(out, "config {config}").unwrap();
        writeln!(out, "seen {}", self.seen_ids.len()).unwrap();
        for id in &self.seen_ids {
            writeln!(out, "{id}").unwrap();
        }
        for (i, table) in self.side_info.iter().enumerate() {
            match table {
                None => writeln!(out, "side {i} none").unwrap(),
                Some(t) => {
                    writeln!(out, "side {i} {}", t.ids().len()).unwrap();
                    for (r, id) in t.ids().iter().enumerate() {
                        out.push_str(id);
                        out.push(' ');
                        push_values(&mut out, t.matrix().row(r));
                    }
                }
            }
        }
        for p in &self.params {
            let (r, c) = p.value.shape();
            let state = if p.trainable { "trainable" } else { "frozen" };
            writeln!(out, "param {} {r} {c} {state}", p.name).unwrap();
            for i in 0..r {
                push_values(&mut out, p.value.row(i));
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn from_checkpoint(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("unexpected end of file, expected {what}")))
        };
        let (ln, magic) = next("header")?;
        if magic != MAGIC {
            return Err(Error::parse(path, ln, format!("expected `{MAGIC}`")));
        }
        let (ln, line) = next("config")?;
        let json = line
            .strip_prefix("config ")
            .ok_or_else(|| Error::parse(path, ln, "expected `config`"))?;
        let config: ModelConfig =
            serde_json::from_str(json).map_err(|e| Error::parse(path, ln, format!("bad config: {e}")))?;

        let (ln, line) = next("seen")?;
        let n_seen: usize = line
            .strip_prefix("seen ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, ln, "expected `seen <count>`"))?;
        let mut seen_ids = Vec::with_capacity(n_seen);
        for _ in 0..n_seen {
            seen_ids.push(next("seen class id")?.1.to_string());
        }

        let parse_row = |ln: usize, s: &str, width: usize| -> Result<Vec<f64>> {
            let row: Vec<f64> = s
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, ln, format!("bad number `{t}`"))))
                .collect::<Result<_>>()?;
            if row.len() != width {
                return Err(Error::parse(path, ln, format!("expected {width} values, found {}", row.len())));
            }
            Ok(row)
        };

        let mut side_info = Vec::with_capacity(config.operators.len());
        for i in 0..config.operators.len() {
            let (ln, line) = next("side information")?;
            let rest = line
                .strip_prefix(&format!("side {i} "))
                .ok_or_else(|| Error::parse(path, ln, format!("expected `side {i}`")))?;
            if rest == "none" {
                side_info.push(None);
                continue;
            }
            let n: usize = rest.parse().map_err(|_| Error::parse(path, ln, "bad table size"))?;
            let mut ids = Vec::with_capacity(n);
            let mut data = Vec::with_capacity(n * n);
            for _ in 0..n {
                let (ln, line) = next("table row")?;
                let (id, values) = line
                    .split_once(' ')
                    .ok_or_else(|| Error::parse(path, ln, "expected `<id> <values>`"))?;
                ids.push(id.to_string());
                data.extend(parse_row(ln, values, n)?);
            }
            side_info.push(Some(ClassSimilarity::new(ids, Matrix::new(n, n, data)?)?));
        }

        let mut model = Model::with_side_info(&config, seen_ids, side_info, 0)?;
        for p in model.params.iter_mut() {
            let (ln, line) = next("parameter header")?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let expected = (p.value.rows().to_string(), p.value.cols().to_string());
            if fields.len() != 5
                || fields[0] != "param"
                || fields[1] != p.name
                || fields[2] != expected.0
                || fields[3] != expected.1
            {
                return Err(Error::parse(
                    path,
                    ln,
                    format!("expected `param {} {} {}`", p.name, expected.0, expected.1),
                ));
            }
            p.trainable = match fields[4] {
                "trainable" => true,
                "frozen" => false,
                other => return Err(Error::parse(path, ln, format!("unknown parameter state `{other}`"))),
            };
            let (rows, cols) = p.value.shape();
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, line) = next("parameter row")?;
                data.extend(parse_row(ln, line, cols)?);
            }
            p.value = Matrix::new(rows, cols, data)?;
        }
        if let Some((ln, line)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(path, ln, format!("trailing content `{line}`")));
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text, path)
    }
}
