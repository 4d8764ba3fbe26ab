//! Analysis protocols built on CKA: layer-by-layer structure between two runs,
//! augmentation invariance, alignment with the class structure, and the
//! argmax lag used to quantify "stalling" at block-group entries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repcore::{mean_defined, BlockGroupSpec, CkaMatrix, LabelMatrix, LayerTag, Parity, RepMatrix};
use crate::similarity::{cka_or_undefined, pairwise_cka};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParityFilter {
    #[default]
    All,
    Odd,
    Even,
}

impl ParityFilter {
    pub fn keeps(self, parity: Parity) -> bool {
        match self {
            ParityFilter::All => true,
            ParityFilter::Odd => parity == Parity::Odd,
            ParityFilter::Even => parity == Parity::Even,
        }
    }

    pub fn apply(self, reps: &[RepMatrix]) -> Vec<&RepMatrix> {
        reps.iter().filter(|r| self.keeps(r.tag().parity)).collect()
    }
}

/// A per-layer CKA value; `None` where the layer is degenerate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub tag: LayerTag,
    pub value: Option<f64>,
}

/// One value per input layer, in input order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerCurve {
    pub points: Vec<CurvePoint>,
}

/// CKA between two differently augmented passes, layer by layer.
pub type InvarianceCurve = LayerCurve;
/// CKA of each layer with the one-hot class representation.
pub type ClassSimCurve = LayerCurve;

impl LayerCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points of one parity, in curve order.
    pub fn of_parity(&self, parity: Parity) -> impl Iterator<Item = &CurvePoint> {
        self.points.iter().filter(move |p| p.tag.parity == parity)
    }

    pub fn first_of(&self, parity: Parity) -> Option<&CurvePoint> {
        self.of_parity(parity).next()
    }

    pub fn last_of(&self, parity: Parity) -> Option<&CurvePoint> {
        self.of_parity(parity).last()
    }

    pub fn mean(&self) -> Option<f64> {
        mean_defined(self.points.iter().filter_map(|p| p.value))
    }
}

/// CKA grid between the (filtered) layers of two runs.
///
/// The runs can be two seeds of one method or two different methods.
pub fn internal_structure(run_a: &[RepMatrix], run_b: &[RepMatrix], parity: ParityFilter) -> Result<CkaMatrix> {
    let rows = parity.apply(run_a);
    let cols = parity.apply(run_b);
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::precondition(format!("no layers left after the {parity:?} filter")));
    }
    pairwise_cka(&rows, &cols)
}

fn check_paired(view1: &[RepMatrix], view2: &[RepMatrix]) -> Result<()> {
    if view1.len() != view2.len() {
        return Err(Error::precondition(format!(
            "views have {} and {} layers",
            view1.len(),
            view2.len()
        )));
    }
    if view1.is_empty() {
        return Err(Error::precondition("no layers to compare"));
    }
    for (position, (a, b)) in view1.iter().zip(view2).enumerate() {
        if !a.tag().same_layer(b.tag()) {
            return Err(Error::TagMismatch {
                position,
                left: Box::new(a.tag().clone()),
                right: Box::new(b.tag().clone()),
            });
        }
        if a.samples() != b.samples() {
            return Err(Error::Alignment {
                expected: a.samples(),
                found: b.samples(),
                tag: Box::new(b.tag().clone()),
            });
        }
    }
    Ok(())
}

/// CKA between corresponding layers of two passes over the same ordered
/// samples under independent augmentations. Layers are paired by
/// `(layer_index, parity)`, and a mismatch at any position is an error.
pub fn augmentation_invariance(view1: &[RepMatrix], view2: &[RepMatrix]) -> Result<InvarianceCurve> {
    check_paired(view1, view2)?;
    let points = view1
        .par_iter()
        .zip(view2.par_iter())
        .map(|(a, b)| {
            Ok(CurvePoint {
                tag: a.tag().clone(),
                value: cka_or_undefined(a, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerCurve { points })
}

/// All-pairs variant: every layer of view 1 against every layer of view 2.
pub fn augmentation_invariance_grid(view1: &[RepMatrix], view2: &[RepMatrix]) -> Result<CkaMatrix> {
    check_paired(view1, view2)?;
    pairwise_cka(view1, view2)
}

/// CKA of every layer with the one-hot label matrix.
pub fn class_structure_cka(reps: &[RepMatrix], labels: &LabelMatrix) -> Result<ClassSimCurve> {
    let class_rep = labels.to_rep()?;
    if let Some(bad) = reps.iter().find(|r| r.samples() != labels.samples()) {
        return Err(Error::Alignment {
            expected: labels.samples(),
            found: bad.samples(),
            tag: Box::new(bad.tag().clone()),
        });
    }
    let points = reps
        .par_iter()
        .map(|r| {
            Ok(CurvePoint {
                tag: r.tag().clone(),
                value: cka_or_undefined(r, &class_rep)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LayerCurve { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StallPoint {
    pub layer_index: usize,
    pub block_group: usize,
    /// First layer of its block group.
    pub group_entry: bool,
    pub argmax_layer_index: Option<usize>,
    /// Row position minus argmax column position. Positive means the row
    /// layer looks most like an earlier column layer.
    pub lag: Option<i64>,
}

/// Argmax lag per row of a square (even-layer) cross-method grid.
pub fn stall_profile(cross_method: &CkaMatrix, bg: &BlockGroupSpec) -> Result<Vec<StallPoint>> {
    if !cross_method.is_square() {
        let (r, c) = cross_method.dim();
        return Err(Error::precondition(format!("stall profile needs a square grid, got {r}x{c}")));
    }
    let curve = crate::similarity::diag_max_curve(cross_method)?;
    cross_method
        .row_tags()
        .iter()
        .zip(curve)
        .map(|(tag, point)| {
            let block_group = tag
                .block_group
                .ok_or_else(|| Error::precondition(format!("{tag} has no block-group tag")))?;
            if bg.group_of_layer(tag.layer_index) != Some(block_group) {
                return Err(Error::precondition(format!(
                    "{tag}: block group BG{block_group} disagrees with the block-group layout"
                )));
            }
            Ok(StallPoint {
                layer_index: tag.layer_index,
                block_group,
                group_entry: bg.is_group_entry_layer(tag.layer_index),
                argmax_layer_index: point.argmax_layer_index,
                lag: point.argmax.map(|j| point.row as i64 - j as i64),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repcore::Method;
    use crate::testutil::{gaussian, rng};
    use ndarray::Array2;
    use rand::Rng;

    fn tagged(data: Array2<f64>, layer: usize, parity: Parity, bg: Option<usize>) -> RepMatrix {
        RepMatrix::new(data, LayerTag::new("m", Method::Supervised, 0, layer, parity).with_block_group(bg)).unwrap()
    }

    fn run(seed: u64, blocks: usize, m: usize) -> Vec<RepMatrix> {
        let mut r = rng(seed);
        let mut out = Vec::new();
        for b in 1..=blocks {
            out.push(tagged(gaussian(&mut r, m, 4), 2 * b - 1, Parity::Odd, None));
            out.push(tagged(gaussian(&mut r, m, 4), 2 * b, Parity::Even, None));
        }
        out
    }

    #[test]
    fn identical_runs_give_symmetric_unit_diagonal() {
        let a = run(1, 3, 20);
        let g = internal_structure(&a, &a, ParityFilter::All).unwrap();
        assert_eq!(g.dim(), (6, 6));
        for i in 0..6 {
            assert!((g.get(i, i).unwrap() - 1.0).abs() < 1e-12);
            for j in 0..6 {
                assert!((g.get(i, j).unwrap() - g.get(j, i).unwrap()).abs() < 1e-12);
            }
        }
        assert_eq!(g, pairwise_cka(&a, &a).unwrap());
    }

    #[test]
    fn parity_filter_counts() {
        let a = run(2, 16, 5);
        let g = internal_structure(&a, &a, ParityFilter::Odd).unwrap();
        assert_eq!(g.dim(), (16, 16));
        assert!(g.row_tags().iter().all(|t| t.parity == Parity::Odd));
        let g = internal_structure(&a, &a, ParityFilter::Even).unwrap();
        assert!(g.col_tags().iter().all(|t| t.parity == Parity::Even));
    }

    #[test]
    fn identity_augmentation_is_fully_invariant() {
        let a = run(3, 2, 15);
        let c = augmentation_invariance(&a, &a.clone()).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.points.iter().all(|p| (p.value.unwrap() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn invariance_is_symmetric_in_views() {
        let a = run(4, 3, 25);
        let b = run(5, 3, 25);
        let ab = augmentation_invariance(&a, &b).unwrap();
        let ba = augmentation_invariance(&b, &a).unwrap();
        for (x, y) in ab.points.iter().zip(&ba.points) {
            assert!((x.value.unwrap() - y.value.unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn invariance_rejects_mismatched_tags() {
        let a = run(6, 2, 10);
        let mut b = a.clone();
        b.swap(0, 1);
        assert!(matches!(
            augmentation_invariance(&a, &b),
            Err(Error::TagMismatch { position: 0, .. })
        ));
        assert!(augmentation_invariance(&a, &a[..3]).is_err());
    }

    #[test]
    fn invariance_of_independent_noise_is_small() {
        // independent Gaussian features: CKA concentrates near p / m
        let mut r = rng(7);
        let m = 600;
        let a = vec![tagged(gaussian(&mut r, m, 8), 2, Parity::Even, None)];
        let b = vec![tagged(gaussian(&mut r, m, 8), 2, Parity::Even, None)];
        let c = augmentation_invariance(&a, &b).unwrap();
        assert!(c.points[0].value.unwrap() <= 0.1);
        let grid = augmentation_invariance_grid(&a, &b).unwrap();
        assert_eq!(grid.get(0, 0), c.points[0].value);
    }

    #[test]
    fn class_structure_self_and_permuted() {
        let classes: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let labels = LabelMatrix::from_indices(&classes, 4).unwrap();
        let as_rep = labels.to_rep().unwrap();
        let permuted = labels.permute_classes(&[2, 3, 0, 1]).unwrap().to_rep().unwrap();
        let c = class_structure_cka(&[as_rep, permuted], &labels).unwrap();
        for p in &c.points {
            assert!((p.value.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn class_structure_relabeling_invariance() {
        let mut r = rng(8);
        let classes: Vec<usize> = (0..60).map(|_| r.random_range(0..3)).collect();
        let labels = LabelMatrix::from_indices(&classes, 3).unwrap();
        let reps = run(9, 2, 60);
        let a = class_structure_cka(&reps, &labels).unwrap();
        let b = class_structure_cka(&reps, &labels.permute_classes(&[1, 2, 0]).unwrap()).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            assert!((x.value.unwrap() - y.value.unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn class_structure_rejects_misaligned() {
        let labels = LabelMatrix::from_indices(&[0, 1, 0, 1], 2).unwrap();
        assert!(matches!(
            class_structure_cka(&run(10, 1, 5), &labels),
            Err(Error::Alignment { .. })
        ));
    }

    fn even_grid(values: Array2<f64>, bg: &BlockGroupSpec) -> CkaMatrix {
        let tags: Vec<_> = (1..=values.nrows())
            .map(|b| {
                LayerTag::new("m", Method::Supervised, 0, 2 * b, Parity::Even).with_block_group(bg.group_of_block(b))
            })
            .collect();
        CkaMatrix::new(values, tags.clone(), tags).unwrap()
    }

    #[test]
    fn stall_identity_has_no_lag() {
        let bg = BlockGroupSpec::from_counts(&[2, 2]).unwrap();
        let g = even_grid(Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 1.0 } else { 0.3 }), &bg);
        let s = stall_profile(&g, &bg).unwrap();
        assert!(s.iter().all(|p| p.lag == Some(0)));
        assert_eq!(s.iter().filter(|p| p.group_entry).count(), 2);
        assert!(s[2].group_entry);
    }

    #[test]
    fn stall_lag_definition() {
        let bg = BlockGroupSpec::from_counts(&[2, 2]).unwrap();
        let mut v = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.8 } else { 0.1 });
        v[[3, 1]] = 0.95;
        let s = stall_profile(&even_grid(v, &bg), &bg).unwrap();
        assert_eq!(s[3].lag, Some(2));
        assert_eq!(s[3].argmax_layer_index, Some(4));
    }

    #[test]
    fn stall_needs_block_groups() {
        let bg = BlockGroupSpec::from_counts(&[2]).unwrap();
        let tags: Vec<_> = (1..=2).map(|b| LayerTag::new("m", Method::Supervised, 0, 2 * b, Parity::Even)).collect();
        let g = CkaMatrix::new(Array2::eye(2), tags.clone(), tags).unwrap();
        assert!(matches!(stall_profile(&g, &bg), Err(Error::Precondition(_))));
    }
}
