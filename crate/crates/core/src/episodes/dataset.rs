use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    NovelVal,
    NovelTest,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::NovelVal => "novel_val",
            Split::NovelTest => "novel_test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "novel_val" => Ok(Split::NovelVal),
            "novel_test" => Ok(Split::NovelTest),
            other => Err(Error::Config(format!("unknown split tag `{other}`"))),
        }
    }
}

/// Pool of novel classes used by meta-testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NovelPool {
    Val,
    Test,
}

impl NovelPool {
    pub fn split(self) -> Split {
        match self {
            NovelPool::Val => Split::NovelVal,
            NovelPool::Test => Split::NovelTest,
        }
    }
}

/// Which slice of a seen class's instances a sampler may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Portion {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassData {
    pub id: String,
    pub split: Split,
    /// One instance per row.
    pub instances: Matrix,
    pub attributes: Option<Vec<f64>>,
    /// Trailing instances reserved for seen-class validation queries.
    pub holdout_val: usize,
    /// Trailing instances reserved for seen-class test queries.
    pub holdout_test: usize,
}

impl ClassData {
    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Instance layout is `[train | val | test]`.
    pub fn portion(&self, portion: Portion) -> Range<usize> {
        let n = self.len();
        let train_end = n - self.holdout_val - self.holdout_test;
        match portion {
            Portion::Train => 0..train_end,
            Portion::Val => train_end..train_end + self.holdout_val,
            Portion::Test => train_end + self.holdout_val..n,
        }
    }
}

/// Labeled feature vectors grouped by class. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    d_in: usize,
    d_attr: Option<usize>,
    classes: Vec<ClassData>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(d_in: usize, classes: Vec<ClassData>) -> Result<Self> {
        let mut index = HashMap::with_capacity(classes.len());
        let mut d_attr = None;
        for (i, c) in classes.iter().enumerate() {
            if index.insert(c.id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate class id `{}`", c.id)));
            }
            if c.instances.cols() != d_in && !c.is_empty() {
                return Err(Error::Config(format!(
                    "class `{}` has feature dimension {}, expected {d_in}",
                    c.id,
                    c.instances.cols()
                )));
            }
            if c.holdout_val + c.holdout_test > c.len() {
                return Err(Error::Config(format!(
                    "class `{}` holds out more instances than it has",
                    c.id
                )));
            }
            match (&c.attributes, i) {
                (Some(a), 0) => d_attr = Some(a.len()),
                (Some(a), _) if d_attr == Some(a.len()) => {}
                (None, _) if d_attr.is_none() => {}
                _ => {
                    return Err(Error::Config(format!(
                        "class `{}` breaks the shared attribute dimension",
                        c.id
                    )))
                }
            }
        }
        Ok(Self {
            d_in,
            d_attr,
            classes,
            index,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_attr(&self) -> Option<usize> {
        self.d_attr
    }

    pub fn classes(&self) -> &[ClassData] {
        &self.classes
    }

    pub fn class(&self, i: usize) -> &ClassData {
        &self.classes[i]
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn class_ids(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.id.as_str()).collect()
    }

    /// Indices of classes with the given split, in dataset order.
    pub fn split_classes(&self, split: Split) -> Vec<usize> {
        (0..self.classes.len())
            .filter(|&i| self.classes[i].split == split)
            .collect()
    }

    pub fn train_classes(&self) -> Vec<usize> {
        self.split_classes(Split::Train)
    }

    /// Per-class attribute vectors as rows, in dataset order.
    pub fn attribute_matrix(&self) -> Option<Matrix> {
        let rows: Option<Vec<&Vec<f64>>> = self.classes.iter().map(|c| c.attributes.as_ref()).collect();
        rows.map(|r| Matrix::from_rows(&r))
    }
}
