use ndarray::{Array2, ArrayViewD, Axis};

use super::tag::LayerTag;
use crate::error::{Error, Result};

/// Fewer samples than this make every centered Gram a multiple of the centering
/// matrix, so CKA would be 1 for any pair of non-constant inputs.
pub const MIN_SAMPLES: usize = 3;

/// An `m x p` matrix of flattened per-sample activations for one layer.
///
/// Row `i` is sample `i` of an evaluation set shared by every matrix it is
/// compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct RepMatrix {
    data: Array2<f64>,
    tag: LayerTag,
}

impl RepMatrix {
    pub fn new(data: Array2<f64>, tag: LayerTag) -> Result<Self> {
        let (m, p) = data.dim();
        if m < MIN_SAMPLES {
            return Err(Error::precondition(format!(
                "{tag}: {m} samples, at least {MIN_SAMPLES} are required"
            )));
        }
        if p == 0 {
            return Err(Error::precondition(format!("{tag}: zero features")));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::precondition(format!(
                "{tag}: non-finite entry at row {}, column {}",
                pos / p,
                pos % p
            )));
        }
        Ok(RepMatrix { data, tag })
    }

    /// Widens 32-bit activations at ingestion.
    pub fn from_f32(data: Array2<f32>, tag: LayerTag) -> Result<Self> {
        Self::new(data.mapv(f64::from), tag)
    }

    /// Flattens a sample-major tensor and wraps it.
    pub fn from_tensor(tensor: ArrayViewD<'_, f64>, tag: LayerTag) -> Result<Self> {
        let m = tensor.shape().first().copied().unwrap_or(0);
        Self::new(flatten_sample_block(tensor, m)?, tag)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn tag(&self) -> &LayerTag {
        &self.tag
    }

    pub fn into_parts(self) -> (Array2<f64>, LayerTag) {
        (self.data, self.tag)
    }

    pub fn with_tag(mut self, tag: LayerTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn features(&self) -> usize {
        self.data.ncols()
    }

    /// Copy with every column shifted to zero mean.
    pub fn column_centered(&self) -> Array2<f64> {
        let mean = self.data.mean_axis(Axis(0)).expect("m >= 3");
        &self.data - &mean
    }

    /// Per-feature z-scoring. Raw activations are the default everywhere; this
    /// is an opt-in preprocessing step. Zero-variance columns become zero.
    pub fn standardized(&self) -> RepMatrix {
        let mut data = self.column_centered();
        for mut col in data.columns_mut() {
            let sd = (col.dot(&col) / col.len() as f64).sqrt();
            if sd > 0.0 {
                col /= sd;
            }
        }
        RepMatrix {
            data,
            tag: self.tag.clone(),
        }
    }
}

/// Flattens a tensor whose first axis is the sample axis into `m x p`.
///
/// The remaining axes are flattened in row-major (C) order, so the last axis
/// varies fastest, whatever the memory layout of the input.
pub fn flatten_sample_block(tensor: ArrayViewD<'_, f64>, m: usize) -> Result<Array2<f64>> {
    let shape = tensor.shape();
    match shape.first() {
        None => return Err(Error::Shape("scalar input has no sample axis".into())),
        Some(&n) if n != m => {
            return Err(Error::Shape(format!(
                "sample axis has length {n}, expected {m}"
            )))
        }
        _ => {}
    }
    let p: usize = shape[1..].iter().product();
    let flat: Vec<f64> = tensor.iter().copied().collect();
    Array2::from_shape_vec((m, p), flat).map_err(|e| Error::Shape(e.to_string()))
}

/// An `m x m` linear-kernel Gram matrix, optionally double-centered.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    data: Array2<f64>,
    centered: bool,
    /// Trace before centering, i.e. the squared Frobenius norm of the
    /// representation. Kept so degeneracy can be judged after centering.
    raw_trace: f64,
}

impl GramMatrix {
    /// Validates shape and symmetry (1e-10 relative).
    pub fn new(data: Array2<f64>, centered: bool) -> Result<Self> {
        let (r, c) = data.dim();
        if r != c {
            return Err(Error::Shape(format!("Gram matrix must be square, got {r}x{c}")));
        }
        let scale = data.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..r {
            for j in 0..i {
                if (data[[i, j]] - data[[j, i]]).abs() > 1e-10 * scale {
                    return Err(Error::precondition(format!(
                        "Gram matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let raw_trace = data.diag().sum();
        Ok(GramMatrix {
            data,
            centered,
            raw_trace,
        })
    }

    pub(crate) fn from_raw(data: Array2<f64>, centered: bool, raw_trace: f64) -> Self {
        GramMatrix {
            data,
            centered,
            raw_trace,
        }
    }

    /// Trace of the Gram matrix before any centering.
    pub fn raw_trace(&self) -> f64 {
        self.raw_trace
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn size(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.data.diag().sum()
    }
}

/// Grid of CKA values between two ordered lists of layers.
///
/// Cells involving a degenerate (constant) layer hold `NaN` and read back as
/// `None` through [`CkaMatrix::get`].
#[derive(Debug, Clone, PartialEq)]
pub struct CkaMatrix {
    values: Array2<f64>,
    row_tags: Vec<LayerTag>,
    col_tags: Vec<LayerTag>,
}

impl CkaMatrix {
    pub fn new(values: Array2<f64>, row_tags: Vec<LayerTag>, col_tags: Vec<LayerTag>) -> Result<Self> {
        if values.dim() != (row_tags.len(), col_tags.len()) {
            return Err(Error::Shape(format!(
                "{:?} values for {} row and {} column tags",
                values.dim(),
                row_tags.len(),
                col_tags.len()
            )));
        }
        Ok(CkaMatrix {
            values,
            row_tags,
            col_tags,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row_tags(&self) -> &[LayerTag] {
        &self.row_tags
    }

    pub fn col_tags(&self) -> &[LayerTag] {
        &self.col_tags
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn is_square(&self) -> bool {
        self.values.nrows() == self.values.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values.get((row, col)).copied().filter(|v| !v.is_nan())
    }

    /// Mean over defined diagonal cells.
    pub fn diagonal_mean(&self) -> Option<f64> {
        let n = self.values.nrows().min(self.values.ncols());
        mean_defined((0..n).filter_map(|i| self.get(i, i)))
    }

    pub fn undefined_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

pub(crate) fn mean_defined(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repcore::Parity;
    use ndarray::{array, ArrayD, IxDyn, ShapeBuilder};

    fn tag() -> LayerTag {
        LayerTag::anonymous("t")
    }

    #[test]
    fn rejects_degenerate_shapes_and_values() {
        assert!(RepMatrix::new(Array2::zeros((2, 3)), tag()).is_err());
        assert!(RepMatrix::new(Array2::zeros((3, 0)), tag()).is_err());
        let mut d = Array2::zeros((3, 2));
        d[[1, 1]] = f64::NAN;
        assert!(RepMatrix::new(d, tag()).is_err());
        assert!(RepMatrix::new(Array2::zeros((3, 2)), tag()).is_ok());
    }

    #[test]
    fn flatten_already_flat() {
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let out = flatten_sample_block(x.view().into_dyn(), 2).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn flatten_is_row_major() {
        let t = ArrayD::from_shape_vec(IxDyn(&[2, 2, 2]), (1..=8).map(f64::from).collect()).unwrap();
        let out = flatten_sample_block(t.view(), 2).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(out.row(1).to_vec(), vec![5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn flatten_ignores_memory_layout() {
        let t = ArrayD::from_shape_vec(IxDyn(&[3, 2, 2]), (0..12).map(f64::from).collect()).unwrap();
        let mut f = ArrayD::<f64>::zeros(IxDyn(&[3, 2, 2]).f());
        f.assign(&t);
        assert_eq!(
            flatten_sample_block(f.view(), 3).unwrap(),
            flatten_sample_block(t.view(), 3).unwrap()
        );
    }

    #[test]
    fn flatten_size_arithmetic() {
        let t = ArrayD::<f64>::zeros(IxDyn(&[5, 4, 4, 8]));
        let out = flatten_sample_block(t.view(), 5).unwrap();
        assert_eq!(out.dim(), (5, 128));
        assert!(flatten_sample_block(t.view(), 4).is_err());
    }

    #[test]
    fn from_tensor_tags_and_validates() {
        let t = ArrayD::from_shape_vec(IxDyn(&[3, 2, 1]), vec![0.0; 6]).unwrap();
        let tag = LayerTag::new("a", crate::repcore::Method::Supervised, 0, 2, Parity::Even);
        let r = RepMatrix::from_tensor(t.view(), tag.clone()).unwrap();
        assert_eq!(r.tag(), &tag);
        assert_eq!(r.features(), 2);
    }

    #[test]
    fn standardized_columns() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [6.0, 5.0]];
        let s = RepMatrix::new(x, tag()).unwrap().standardized();
        let col0 = s.data().column(0);
        assert!(col0.sum().abs() < 1e-12);
        assert!((col0.dot(&col0) / 4.0 - 1.0).abs() < 1e-12);
        assert!(s.data().column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gram_symmetry_checked() {
        assert!(GramMatrix::new(array![[1.0, 2.0], [2.0, 1.0]], false).is_ok());
        assert!(GramMatrix::new(array![[1.0, 2.0], [2.5, 1.0]], false).is_err());
        assert!(GramMatrix::new(Array2::zeros((2, 3)), false).is_err());
    }

    #[test]
    fn cka_matrix_undefined_cells() {
        let m = CkaMatrix::new(array![[1.0, f64::NAN], [0.5, 1.0]], vec![tag(), tag()], vec![tag(), tag()]).unwrap();
        assert_eq!(m.get(0, 1), None);
        assert_eq!(m.get(1, 0), Some(0.5));
        assert_eq!(m.undefined_count(), 1);
        assert_eq!(m.diagonal_mean(), Some(1.0));
        assert!(CkaMatrix::new(Array2::zeros((2, 2)), vec![tag()], vec![tag(), tag()]).is_err());
    }
}
