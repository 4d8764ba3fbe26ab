use ndarray::Array2;

use super::matrix::RepMatrix;
use super::tag::{LayerTag, Method, Parity};
use crate::error::{Error, Result};

/// One-hot class indicator matrix (`m x c`); the class representation whose
/// rows are vertices of the standard simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    data: Array2<f64>,
    classes: Vec<usize>,
    class_count: usize,
}

impl LabelMatrix {
    pub fn from_indices(classes: &[usize], class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::precondition(format!(
                "at least 2 classes are required, got {class_count}"
            )));
        }
        if let Some((row, &k)) = classes.iter().enumerate().find(|(_, &k)| k >= class_count) {
            return Err(Error::precondition(format!(
                "row {row}: class {k} out of range for {class_count} classes"
            )));
        }
        let mut data = Array2::zeros((classes.len(), class_count));
        for (row, &k) in classes.iter().enumerate() {
            data[[row, k]] = 1.0;
        }
        Ok(LabelMatrix {
            data,
            classes: classes.to_vec(),
            class_count,
        })
    }

    /// Class count inferred as `max index + 1`.
    pub fn from_indices_inferred(classes: &[usize]) -> Result<Self> {
        let c = classes.iter().max().map_or(0, |k| k + 1);
        Self::from_indices(classes, c)
    }

    /// Accepts an existing one-hot matrix; every row must hold exactly one 1.
    pub fn from_one_hot(data: Array2<f64>) -> Result<Self> {
        let mut classes = Vec::with_capacity(data.nrows());
        for (row, r) in data.rows().into_iter().enumerate() {
            let ones: Vec<usize> = r.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(j, _)| j).collect();
            let zeros = r.iter().filter(|&&v| v == 0.0).count();
            if ones.len() != 1 || zeros + 1 != r.len() {
                return Err(Error::precondition(format!("row {row} is not one-hot")));
            }
            classes.push(ones[0]);
        }
        Self::from_indices(&classes, data.ncols())
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn samples(&self) -> usize {
        self.classes.len()
    }

    /// Classes with no sample. Not an error, but worth a warning.
    pub fn missing_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.class_count];
        for &k in &self.classes {
            seen[k] = true;
        }
        (0..self.class_count).filter(|&k| !seen[k]).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &k in &self.classes {
            counts[k] += 1;
        }
        counts
    }

    /// Relabels class `k` as `perm[k]`.
    pub fn permute_classes(&self, perm: &[usize]) -> Result<Self> {
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..self.class_count).collect::<Vec<_>>() {
            return Err(Error::precondition("not a permutation of the class indices"));
        }
        let classes: Vec<usize> = self.classes.iter().map(|&k| perm[k]).collect();
        Self::from_indices(&classes, self.class_count)
    }

    pub fn class_tag() -> LayerTag {
        LayerTag::new("labels", Method::Supervised, 0, 1, Parity::Class)
    }

    /// The indicator matrix as a `p = c` representation.
    pub fn to_rep(&self) -> Result<RepMatrix> {
        RepMatrix::new(self.data.clone(), Self::class_tag())
    }
}
