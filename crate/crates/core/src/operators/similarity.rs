use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use super::taxonomy::{taxonomy_path_similarity, Taxonomy};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Symmetry tolerance enforced when reading similarity files.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Square similarity table over a universe of class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSimilarity {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Matrix,
}

impl ClassSimilarity {
    pub fn new(ids: Vec<String>, matrix: Matrix) -> Result<Self> {
        if matrix.shape() != (ids.len(), ids.len()) {
            return Err(Error::Shape {
                op: "ClassSimilarity::new",
                left: matrix.shape(),
                right: (ids.len(), ids.len()),
            });
        }
        if !matrix.is_finite() {
            return Err(Error::SideInfo("similarity matrix has non-finite entries".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::SideInfo(format!("duplicate class id `{id}`")));
            }
        }
        Ok(Self { ids, index, matrix })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn position(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownClass(id.to_string()))
    }

    pub fn get(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.matrix.get(self.position(a)?, self.position(b)?))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = &self.matrix;
        (0..m.rows()).all(|i| (0..i).all(|j| (m.get(i, j) - m.get(j, i)).abs() <= tol))
    }

    /// Cosine similarity of attribute vectors. Zero vectors are rejected.
    pub fn from_attributes<S: AsRef<str>>(ids: &[S], attributes: &[Vec<f64>]) -> Result<Self> {
        if ids.len() != attributes.len() {
            return Err(Error::SideInfo("one attribute vector per class is required".into()));
        }
        let dim = attributes.first().map_or(0, Vec::len);
        let mut unit = Vec::with_capacity(attributes.len());
        for (id, a) in ids.iter().zip(attributes) {
            if a.len() != dim {
                return Err(Error::SideInfo(format!("attribute dimension differs for `{}`", id.as_ref())));
            }
            let n = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::SideInfo(format!("zero attribute vector for class `{}`", id.as_ref())));
            }
            unit.push(a.iter().map(|v| v / n).collect::<Vec<f64>>());
        }
        let m = unit.len();
        let matrix = Matrix::from_fn(m, m, |i, j| {
            if i == j {
                1.0
            } else {
                unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum()
            }
        });
        Self::new(ids.iter().map(|s| s.as_ref().to_string()).collect(), matrix)
    }

    pub fn from_taxonomy<S: AsRef<str>>(taxonomy: &Taxonomy, ids: &[S]) -> Result<Self> {
        let matrix = taxonomy_path_similarity(taxonomy, ids)?;
        Self::new(ids.iter().map(|s| s.as_ref().to_string()).collect(), matrix)
    }

    /// The same table with class identities shuffled: class `i` inherits the
    /// relations of class `π(i)`. Keeps the value distribution, destroys the
    /// correspondence with real class structure.
    pub fn shuffled(&self, seed: u64) -> Self {
        let n = self.ids.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng_from(seed));
        let matrix = Matrix::from_fn(n, n, |i, j| self.matrix.get(perm[i], perm[j]));
        Self {
            ids: self.ids.clone(),
            index: self.index.clone(),
            matrix,
        }
    }

    /// Rows and columns rearranged into `order` (seen block first, then
    /// novel, for an episode).
    pub fn build_semantic<S: AsRef<str>>(&self, order: &[S]) -> Result<Matrix> {
        let pos: Vec<usize> = order.iter().map(|id| self.position(id.as_ref())).collect::<Result<_>>()?;
        Ok(self.select(&pos))
    }

    /// Rearranges by precomputed positions into this table.
    pub fn select(&self, pos: &[usize]) -> Matrix {
        Matrix::from_fn(pos.len(), pos.len(), |i, j| self.matrix.get(pos[i], pos[j]))
    }

    /// CSV with a header row and a leading id column. The corner cell is
    /// left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for id in &self.ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for v in self.matrix.row(i) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut records = reader.records();
        let header = match records.next() {
            Some(r) => r.map_err(|e| Error::parse(path, 1, e.to_string()))?,
            None => return Err(Error::parse(path, 1, "empty similarity file")),
        };
        let ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let n = ids.len();
        let mut data = Vec::with_capacity(n * n);
        for (row, record) in records.enumerate() {
            let record = record.map_err(|e| {
                Error::parse(path, e.position().map_or(0, |p| p.line() as usize), e.to_string())
            })?;
            let line = record.position().map_or(row + 2, |p| p.line() as usize);
            if row >= n {
                return Err(Error::parse(path, line, "more rows than header columns"));
            }
            if record.len() != n + 1 {
                return Err(Error::parse(path, line, format!("expected {} fields, found {}", n + 1, record.len())));
            }
            if record[0].trim() != ids[row] {
                return Err(Error::parse(
                    path,
                    line,
                    format!("row id `{}` does not match column id `{}`", record[0].trim(), ids[row]),
                ));
            }
            for f in record.iter().skip(1) {
                let v: f64 = f
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(path, line, format!("not a number: `{f}`")))?;
                data.push(v);
            }
        }
        if data.len() != n * n {
            return Err(Error::parse(path, n + 1, format!("expected {n} data rows")));
        }
        let sim = Self::new(ids, Matrix::new(n, n, data)?).map_err(|e| Error::parse(path, 1, e.to_string()))?;
        if !sim.is_symmetric(SYMMETRY_TOL) {
            return Err(Error::parse(path, 1, "similarity matrix is not symmetric"));
        }
        Ok(sim)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn attribute_cosine_examples() {
        let sim = ClassSimilarity::from_attributes(
            &["a", "b", "c", "d"],
            &[vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 2.0], vec![2.0, 2.0, 0.0]],
        )
        .unwrap();
        assert!((sim.get("a", "b").unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(sim.get("b", "c").unwrap(), 0.0);
        assert!((sim.get("a", "d").unwrap() - 1.0).abs() < 1e-15);
        assert!(sim.is_symmetric(0.0));
    }

    #[test]
    fn zero_attribute_is_an_error() {
        let err = ClassSimilarity::from_attributes(&["a", "b"], &[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::SideInfo(m) if m.contains("`b`")));
    }

    fn plus_table() -> ClassSimilarity {
        let ids = vec!["0".to_string(), "1".into(), "2".into()];
        ClassSimilarity::new(ids, Matrix::from_fn(3, 3, |i, j| (i + j) as f64)).unwrap()
    }

    #[test]
    fn semantic_permutation_by_hand() {
        let b = plus_table().build_semantic(&["2", "0", "1"]).unwrap();
        assert_eq!(b.get(0, 1), 2.0);
        assert_eq!(b.get(2, 2), 2.0);
    }

    #[test]
    fn identity_order_is_plain_indexing() {
        let t = plus_table();
        assert_eq!(t.build_semantic(&["0", "1", "2"]).unwrap(), *t.matrix());
    }

    #[test]
    fn swapping_classes_swaps_rows_and_cols() {
        let t = ClassSimilarity::from_attributes(
            &["a", "b", "c", "d"],
            &[vec![1.0, 0.2], vec![0.3, 1.0], vec![-0.5, 0.4], vec![0.9, -0.1]],
        )
        .unwrap();
        let x = t.build_semantic(&["a", "b", "c", "d"]).unwrap();
        let y = t.build_semantic(&["a", "b", "d", "c"]).unwrap();
        let swap = [0, 1, 3, 2];
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(y.get(i, j), x.get(swap[i], swap[j]));
            }
        }
    }

    #[test]
    fn missing_class_is_named() {
        assert!(matches!(plus_table().build_semantic(&["0", "7"]), Err(Error::UnknownClass(c)) if c == "7"));
    }

    #[test]
    fn csv_roundtrip_and_validation() {
        let t = plus_table();
        let back = ClassSimilarity::parse_csv(&t.to_csv(), Path::new("s.csv")).unwrap();
        assert_eq!(back, t);

        let asym = ",a,b\na,1,0.5\nb,0.4,1\n";
        assert!(ClassSimilarity::parse_csv(asym, Path::new("s.csv")).is_err());
        let ragged = ",a,b\na,1,0.5\nb,0.5\n";
        assert!(matches!(ClassSimilarity::parse_csv(ragged, Path::new("s.csv")), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn shuffle_keeps_values() {
        let t = ClassSimilarity::from_attributes(
            &["a", "b", "c"],
            &[vec![1.0, 0.2], vec![0.3, 1.0], vec![-0.5, 0.4]],
        )
        .unwrap();
        let s = t.shuffled(5);
        let mut x: Vec<f64> = t.matrix().data().to_vec();
        let mut y: Vec<f64> = s.matrix().data().to_vec();
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        assert_eq!(x, y);
        assert!(s.is_symmetric(0.0));
    }

    proptest! {
        #[test]
        fn reordering_is_a_conjugation(perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
                                        vals in prop::collection::vec(-1.0f64..1.0, 12)) {
            let ids: Vec<String> = (0..6).map(|i| format!("k{i}")).collect();
            let attrs: Vec<Vec<f64>> = vals.chunks(2).map(|c| vec![c[0] + 2.0, c[1]]).collect();
            let t = ClassSimilarity::from_attributes(&ids, &attrs).unwrap();
            let base = t.build_semantic(&ids).unwrap();
            let order: Vec<&String> = perm.iter().map(|&p| &ids[p]).collect();
            let permuted = t.build_semantic(&order).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert_eq!(permuted.get(i, j), base.get(perm[i], perm[j]));
                }
            }
        }
    }
}
