//! Dataset directory format:
//!
//! * `meta.json`: dimensions and per-class id, split, instance count and
//!   holdout counts, in dataset order.
//! * `features.csv`: `class_id,v1,…,v_d_in` per instance, ordered by class id
//!   then instance index.
//! * `attributes.csv`: `class_id,a1,…,a_d_attr` per class (omitted when the
//!   dataset has no attributes).
//!
//! Numbers are written in shortest round-trip decimal form, so a save/load
//! cycle is bit-exact.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{ClassData, Dataset, Split};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const FEATURES_FILE: &str = "features.csv";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";
const FORMAT_TAG: &str = "gcgpn-dataset/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: String,
    d_in: usize,
    d_attr: Option<usize>,
    classes: Vec<MetaClass>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaClass {
    id: String,
    split: Split,
    count: usize,
    holdout_val: usize,
    holdout_test: usize,
}

fn write_row(out: &mut String, id: &str, values: &[f64]) {
    out.push_str(id);
    for v in values {
        out.push(',');
        out.push_str(&v.to_string());
    }
    out.push('\n');
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = Meta {
        format: FORMAT_TAG.into(),
        d_in: ds.d_in(),
        d_attr: ds.d_attr(),
        classes: ds
            .classes()
            .iter()
            .map(|c| MetaClass {
                id: c.id.clone(),
                split: c.split,
                count: c.len(),
                holdout_val: c.holdout_val,
                holdout_test: c.holdout_test,
            })
            .collect(),
    };
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;

    let mut order: Vec<&ClassData> = ds.classes().iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));

    let mut features = String::new();
    for c in &order {
        for r in 0..c.len() {
            write_row(&mut features, &c.id, c.instances.row(r));
        }
    }
    let feat_path = dir.join(FEATURES_FILE);
    fs::write(&feat_path, features).map_err(|e| Error::io(&feat_path, e))?;

    let attr_path = dir.join(ATTRIBUTES_FILE);
    if ds.d_attr().is_some() {
        let mut attrs = String::new();
        for c in &order {
            write_row(&mut attrs, &c.id, c.attributes.as_deref().unwrap_or_default());
        }
        fs::write(&attr_path, attrs).map_err(|e| Error::io(&attr_path, e))?;
    } else if attr_path.exists() {
        fs::remove_file(&attr_path).map_err(|e| Error::io(&attr_path, e))?;
    }
    Ok(())
}

/// Reads `class_id,values…` rows, checking the value count on every line.
fn read_rows(path: &Path, width: usize) -> Result<Vec<(usize, String, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width + 1 {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} values after the class id, found {}", width, record.len().saturating_sub(1)),
            ));
        }
        let values = record
            .iter()
            .skip(1)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, line, format!("not a number: `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, line, "non-finite value"));
        }
        rows.push((line, record[0].trim().to_string(), values));
    }
    Ok(rows)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta =
        serde_json::from_str(&meta_text).map_err(|e| Error::parse(&meta_path, e.line(), e.to_string()))?;
    if meta.format != FORMAT_TAG {
        return Err(Error::parse(&meta_path, 1, format!("unsupported format `{}`", meta.format)));
    }

    let position: HashMap<&str, usize> = meta
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();

    let feat_path = dir.join(FEATURES_FILE);
    let mut buffers: Vec<Vec<f64>> = vec![Vec::new(); meta.classes.len()];
    let mut counts = vec![0usize; meta.classes.len()];
    for (line, id, values) in read_rows(&feat_path, meta.d_in)? {
        let Some(&ci) = position.get(id.as_str()) else {
            return Err(Error::parse(&feat_path, line, format!("class `{id}` is not declared in meta.json")));
        };
        buffers[ci].extend(values);
        counts[ci] += 1;
    }

    let mut attributes: Vec<Option<Vec<f64>>> = vec![None; meta.classes.len()];
    if let Some(d_attr) = meta.d_attr {
        let attr_path = dir.join(ATTRIBUTES_FILE);
        for (line, id, values) in read_rows(&attr_path, d_attr)? {
            let Some(&ci) = position.get(id.as_str()) else {
                return Err(Error::parse(&attr_path, line, format!("class `{id}` is not declared in meta.json")));
            };
            if attributes[ci].replace(values).is_some() {
                return Err(Error::parse(&attr_path, line, format!("duplicate attributes for `{id}`")));
            }
        }
        if let Some(ci) = attributes.iter().position(Option::is_none) {
            return Err(Error::parse(&attr_path, 0, format!("missing attributes for `{}`", meta.classes[ci].id)));
        }
    }

    let mut classes = Vec::with_capacity(meta.classes.len());
    for (((mc, data), count), attrs) in meta.classes.into_iter().zip(buffers).zip(counts).zip(attributes) {
        if count != mc.count {
            return Err(Error::parse(
                &feat_path,
                0,
                format!("class `{}` declares {} instances but has {count}", mc.id, mc.count),
            ));
        }
        classes.push(ClassData {
            instances: Matrix::new(count, meta.d_in, data)?,
            id: mc.id,
            split: mc.split,
            attributes: attrs,
            holdout_val: mc.holdout_val,
            holdout_test: mc.holdout_test,
        });
    }
    Dataset::new(meta.d_in, classes)
}
