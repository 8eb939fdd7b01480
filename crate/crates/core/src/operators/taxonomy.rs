//! Path similarity over an unweighted taxonomy.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// Undirected graph built from `parent → child` edges.
#[derive(Clone, Debug, Default)]
pub struct Taxonomy {
    names: Vec<String>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<usize>>,
}

impl Taxonomy {
    pub fn from_edges<S: AsRef<str>>(edges: &[(S, S)]) -> Self {
        let mut t = Taxonomy::default();
        for (p, c) in edges {
            let (p, c) = (t.node(p.as_ref()), t.node(c.as_ref()));
            if p != c && !t.adjacency[p].contains(&c) {
                t.adjacency[p].push(c);
                t.adjacency[c].push(p);
            }
        }
        t
    }

    /// Parses one `parent<TAB>child` edge per line. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(p), Some(c), None) if !p.trim().is_empty() && !c.trim().is_empty() => {
                    edges.push((p.trim().to_string(), c.trim().to_string()))
                }
                _ => return Err(Error::parse(path, i + 1, "expected `parent<TAB>child`")),
            }
        }
        Ok(Self::from_edges(&edges))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn node(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.names.push(name.to_string());
        self.adjacency.push(Vec::new());
        self.index.insert(name.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Hop counts from `source` to every node; `None` when unreachable.
    pub fn hops_from(&self, source: &str) -> Option<Vec<Option<usize>>> {
        let start = *self.index.get(source)?;
        let mut dist = vec![None; self.names.len()];
        dist[start] = Some(0);
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes have a distance");
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        Some(dist)
    }
}

/// `sim(i, j) = 1 / (1 + d(i, j))` with `d` the shortest hop count between
/// classes `i` and `j`; disconnected pairs get 0.
pub fn taxonomy_path_similarity<S: AsRef<str>>(taxonomy: &Taxonomy, classes: &[S]) -> Result<Matrix> {
    let targets: Vec<usize> = classes
        .iter()
        .map(|c| {
            taxonomy
                .index
                .get(c.as_ref())
                .copied()
                .ok_or_else(|| Error::UnknownClass(c.as_ref().to_string()))
        })
        .collect::<Result<_>>()?;
    let n = classes.len();
    let mut sim = Matrix::zeros(n, n);
    for (i, c) in classes.iter().enumerate() {
        let hops = taxonomy.hops_from(c.as_ref()).expect("class was resolved above");
        for (j, &t) in targets.iter().enumerate() {
            if let Some(d) = hops[t] {
                sim.set(i, j, 1.0 / (1.0 + d as f64));
            }
        }
    }
    Ok(sim)
}
