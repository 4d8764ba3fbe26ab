//! Linear-kernel Gram matrices, centering, HSIC and CKA.
//!
//! CKA between representations `X` (`m x p1`) and `Y` (`m x p2`) is
//!
//! ```text
//! CKA(K, L) = HSIC(K, L) / sqrt(HSIC(K, K) * HSIC(L, L)),   K = X X^T, L = Y Y^T
//! HSIC(K, L) = vec(HKH) . vec(HLH) / (m - 1)^2,             H = I - 11^T / m
//! ```
//!
//! Two evaluation routes give the same number: the Gram route above, which
//! costs `O(m^2 p)`, and the feature route
//! `||Y'^T X'||_F^2 / (||X'^T X'||_F ||Y'^T Y'||_F)` on column-centered
//! features, which costs `O(m p1 p2)`. [`cka_reps`] picks the cheaper one.
//!
//! All reductions run in a fixed order, so results do not depend on how rayon
//! schedules the work.

use std::borrow::Borrow;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::repcore::{CkaMatrix, GramMatrix, LayerTag, RepMatrix, MIN_SAMPLES};

/// Feature columns multiplied per pass when accumulating a Gram matrix.
const GRAM_COLUMN_BLOCK: usize = 512;
/// Square output tile edge; only tiles on or below the diagonal are computed.
const GRAM_TILE: usize = 512;

/// A representation whose centered variance is below this fraction of its
/// uncentered second moment is treated as constant.
const DEGENERATE_RELATIVE_VARIANCE: f64 = 1e-10;

/// Tolerance within which out-of-range CKA values are clamped to `[0, 1]`.
const CLAMP_TOLERANCE: f64 = 1e-9;

/// Kernel used to build Gram matrices. Only the linear kernel is supported.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Kernel {
    #[default]
    Linear,
}

impl Kernel {
    pub fn gram(self, x: &RepMatrix) -> GramMatrix {
        match self {
            Kernel::Linear => gram(x),
        }
    }
}

/// Constant dividing `Tr(KHLH)` to give HSIC.
///
/// It cancels in CKA, so the choice only matters for raw HSIC values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HsicNormalization {
    /// `(m - 1)^2`, the usual biased estimator.
    #[default]
    MinusOneSquared,
    /// `m^2 - 1`.
    SquaredMinusOne,
}

impl HsicNormalization {
    pub fn denominator(self, m: usize) -> f64 {
        let m = m as f64;
        match self {
            HsicNormalization::MinusOneSquared => (m - 1.0) * (m - 1.0),
            HsicNormalization::SquaredMinusOne => m * m - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsicValue {
    pub value: f64,
    pub samples: usize,
}

/// `K = X X^T`.
pub fn gram(x: &RepMatrix) -> GramMatrix {
    let k = gram_blocked(x.data().view());
    let trace = k.diag().sum();
    GramMatrix::from_raw(k, false, trace)
}

/// Blocked `X X^T`: the feature axis is consumed `GRAM_COLUMN_BLOCK` columns at
/// a time through views, so nothing beyond the output and the multiply's
/// packing buffers is allocated. Lower-triangle tiles are computed and
/// mirrored, which also makes the result exactly symmetric.
fn gram_blocked(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (m, p) = x.dim();
    let mut k = Array2::<f64>::zeros((m, m));
    for c0 in (0..p).step_by(GRAM_COLUMN_BLOCK) {
        let block = x.slice(s![.., c0..(c0 + GRAM_COLUMN_BLOCK).min(p)]);
        for i0 in (0..m).step_by(GRAM_TILE) {
            let i1 = (i0 + GRAM_TILE).min(m);
            let a = block.slice(s![i0..i1, ..]);
            for j0 in (0..=i0).step_by(GRAM_TILE) {
                let j1 = (j0 + GRAM_TILE).min(m);
                let b = block.slice(s![j0..j1, ..]);
                let mut out = k.slice_mut(s![i0..i1, j0..j1]);
                general_mat_mul(1.0, &a, &b.t(), 1.0, &mut out);
            }
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            k[[i, j]] = k[[j, i]];
        }
    }
    k
}

/// `K' = H K H`, computed by subtracting row means, column means and adding
/// back the grand mean. Idempotent up to round-off.
pub fn center_gram(k: &GramMatrix) -> GramMatrix {
    GramMatrix::from_raw(double_center(k.data().view()), true, k.raw_trace())
}

fn double_center(k: ArrayView2<'_, f64>) -> Array2<f64> {
    double_center_owned(k.to_owned())
}

fn double_center_owned(mut k: Array2<f64>) -> Array2<f64> {
    let n = k.nrows() as f64;
    let row_means: Vec<f64> = k.rows().into_iter().map(|r| r.sum() / n).collect();
    let col_means: Vec<f64> = k.columns().into_iter().map(|c| c.sum() / n).collect();
    let grand = row_means.iter().sum::<f64>() / n;
    for (i, mut row) in k.rows_mut().into_iter().enumerate() {
        let ri = row_means[i];
        Zip::from(&mut row)
            .and(&col_means)
            .for_each(|v, &cj| *v = *v - ri - cj + grand);
    }
    k
}

/// `sum_ij A_ij B_ij`, row partial sums accumulated in row order.
fn frobenius_dot(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(ra, rb)| ra.iter().zip(rb.iter()).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

fn check_pair(k: &GramMatrix, l: &GramMatrix) -> Result<usize> {
    let m = k.size();
    if l.size() != m {
        return Err(Error::Alignment {
            expected: m,
            found: l.size(),
            tag: Box::new(LayerTag::anonymous("second Gram matrix")),
        });
    }
    if m < MIN_SAMPLES {
        return Err(Error::precondition(format!(
            "HSIC needs at least {MIN_SAMPLES} samples, got {m}"
        )));
    }
    Ok(m)
}

fn centered(k: &GramMatrix) -> std::borrow::Cow<'_, Array2<f64>> {
    if k.is_centered() {
        std::borrow::Cow::Borrowed(k.data())
    } else {
        std::borrow::Cow::Owned(double_center(k.data().view()))
    }
}

/// Biased linear HSIC with the default `(m - 1)^2` normalization.
pub fn hsic(k: &GramMatrix, l: &GramMatrix) -> Result<HsicValue> {
    hsic_with(k, l, HsicNormalization::default())
}

pub fn hsic_with(k: &GramMatrix, l: &GramMatrix, norm: HsicNormalization) -> Result<HsicValue> {
    let m = check_pair(k, l)?;
    let kc = centered(k);
    let lc = centered(l);
    Ok(HsicValue {
        value: frobenius_dot(kc.view(), lc.view()) / norm.denominator(m),
        samples: m,
    })
}

fn is_degenerate(centered_trace: f64, raw_trace: f64) -> bool {
    raw_trace <= 0.0 || centered_trace <= DEGENERATE_RELATIVE_VARIANCE * raw_trace
}

fn finish_cka(cross: f64, self_a: f64, self_b: f64) -> f64 {
    let v = cross / (self_a.sqrt() * self_b.sqrt());
    if (-CLAMP_TOLERANCE..0.0).contains(&v) {
        0.0
    } else if v > 1.0 && v <= 1.0 + CLAMP_TOLERANCE {
        1.0
    } else {
        v
    }
}

fn degenerate(which: &str) -> Error {
    Error::DegenerateRepresentation(which.to_string())
}

/// CKA of two Gram matrices.
///
/// Either input may already be centered. A Gram matrix whose centered trace
/// is negligible next to its raw trace comes from a constant representation
/// and yields [`Error::DegenerateRepresentation`].
pub fn cka(k: &GramMatrix, l: &GramMatrix) -> Result<f64> {
    check_pair(k, l)?;
    let kc = centered(k);
    let lc = centered(l);
    if is_degenerate(kc.diag().sum(), k.raw_trace()) {
        return Err(degenerate("first Gram matrix"));
    }
    if is_degenerate(lc.diag().sum(), l.raw_trace()) {
        return Err(degenerate("second Gram matrix"));
    }
    let cross = frobenius_dot(kc.view(), lc.view());
    let self_k = frobenius_dot(kc.view(), kc.view());
    let self_l = frobenius_dot(lc.view(), lc.view());
    Ok(finish_cka(cross, self_k, self_l))
}

/// Column-centered features plus what the feature route needs per matrix.
struct FeatureSide {
    centered: Array2<f64>,
    /// `||X'^T X'||_F`
    self_norm: f64,
    degenerate: bool,
}

impl FeatureSide {
    fn new(x: &RepMatrix) -> Self {
        let centered = x.column_centered();
        let raw: f64 = x.data().iter().map(|v| v * v).sum();
        let var: f64 = centered.iter().map(|v| v * v).sum();
        let cov = centered.t().dot(&centered);
        FeatureSide {
            self_norm: frobenius_dot(cov.view(), cov.view()).sqrt(),
            centered,
            degenerate: is_degenerate(var, raw),
        }
    }

    fn cross(&self, other: &FeatureSide) -> f64 {
        let c = other.centered.t().dot(&self.centered);
        frobenius_dot(c.view(), c.view())
    }
}

fn require_aligned(x: &RepMatrix, y: &RepMatrix) -> Result<()> {
    if x.samples() != y.samples() {
        return Err(Error::Alignment {
            expected: x.samples(),
            found: y.samples(),
            tag: Box::new(y.tag().clone()),
        });
    }
    Ok(())
}

/// CKA through the feature-space route; same value as the Gram route.
pub fn cka_features(x: &RepMatrix, y: &RepMatrix) -> Result<f64> {
    require_aligned(x, y)?;
    let a = FeatureSide::new(x);
    let b = FeatureSide::new(y);
    if a.degenerate {
        return Err(degenerate(&x.tag().to_string()));
    }
    if b.degenerate {
        return Err(degenerate(&y.tag().to_string()));
    }
    Ok(finish_cka(a.cross(&b), a.self_norm * a.self_norm, b.self_norm * b.self_norm))
}

/// CKA through the Gram route.
pub fn cka_gram(x: &RepMatrix, y: &RepMatrix) -> Result<f64> {
    require_aligned(x, y)?;
    cka(&gram(x), &gram(y)).map_err(|e| match e {
        Error::DegenerateRepresentation(w) if w.starts_with("first") => degenerate(&x.tag().to_string()),
        Error::DegenerateRepresentation(_) => degenerate(&y.tag().to_string()),
        other => other,
    })
}

/// Which route evaluates CKA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CkaRoute {
    #[default]
    Auto,
    Gram,
    Features,
}

fn feature_route_is_cheaper(m: usize, p1: usize, p2: usize) -> bool {
    let (m, p1, p2) = (m as f64, p1 as f64, p2 as f64);
    let features = m * (p1 * p2 + p1 * p1 + p2 * p2);
    let grams = m * m * (p1 + p2 + 3.0);
    features < grams
}

/// CKA of two representations, through whichever route is cheaper.
pub fn cka_reps(x: &RepMatrix, y: &RepMatrix) -> Result<f64> {
    if feature_route_is_cheaper(x.samples(), x.features(), y.features()) {
        cka_features(x, y)
    } else {
        cka_gram(x, y)
    }
}

/// Work done by one [`pairwise_cka`] call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairwiseStats {
    pub route: CkaRoute,
    /// Distinct input matrices (shared between rows and columns by identity).
    pub distinct_inputs: usize,
    /// Gram matrices computed; one per distinct input on the Gram route.
    pub gram_evaluations: usize,
    pub cells: usize,
}

/// CKA between every row layer and every column layer.
pub fn pairwise_cka<R: Borrow<RepMatrix> + Sync>(rows: &[R], cols: &[R]) -> Result<CkaMatrix> {
    pairwise_cka_instrumented(rows, cols, CkaRoute::Auto).map(|(m, _)| m)
}

/// [`pairwise_cka`] with an explicit route and a report of the work done.
///
/// Each distinct input matrix is centered (and, on the Gram route, turned
/// into a Gram matrix) exactly once. A matrix that appears in both `rows` and
/// `cols` (same object) counts once. Cells touching a degenerate layer are
/// `NaN` instead of failing the grid.
pub fn pairwise_cka_instrumented<R: Borrow<RepMatrix> + Sync>(
    rows: &[R],
    cols: &[R],
    route: CkaRoute,
) -> Result<(CkaMatrix, PairwiseStats)> {
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::precondition("pairwise CKA needs at least one row and one column"));
    }
    let mut distinct: Vec<&RepMatrix> = Vec::new();
    let row_ids: Vec<usize> = rows.iter().map(|r| intern(r.borrow(), &mut distinct)).collect();
    let col_ids: Vec<usize> = cols.iter().map(|c| intern(c.borrow(), &mut distinct)).collect();

    check_distinct_alignment(&distinct)?;
    let m = distinct[0].samples();

    let route = match route {
        CkaRoute::Auto => {
            let mut features = 0.0;
            let mut grams = 0.0;
            let mf = m as f64;
            for d in &distinct {
                let p = d.features() as f64;
                features += mf * p * p;
                grams += mf * mf * p;
            }
            for &i in &row_ids {
                for &j in &col_ids {
                    features += mf * distinct[i].features() as f64 * distinct[j].features() as f64;
                    grams += mf * mf;
                }
            }
            if features < grams {
                CkaRoute::Features
            } else {
                CkaRoute::Gram
            }
        }
        r => r,
    };

    let cells: Vec<(usize, usize)> = (0..rows.len())
        .flat_map(|i| (0..cols.len()).map(move |j| (i, j)))
        .collect();

    let values: Vec<f64> = match route {
        CkaRoute::Gram | CkaRoute::Auto => {
            let sides: Vec<GramSide> = distinct.par_iter().map(|d| GramSide::new(d)).collect();
            cells
                .par_iter()
                .map(|&(i, j)| sides[row_ids[i]].cka(&sides[col_ids[j]]))
                .collect()
        }
        CkaRoute::Features => {
            let sides: Vec<FeatureSide> = distinct.par_iter().map(|d| FeatureSide::new(d)).collect();
            cells
                .par_iter()
                .map(|&(i, j)| {
                    let (a, b) = (&sides[row_ids[i]], &sides[col_ids[j]]);
                    if a.degenerate || b.degenerate {
                        f64::NAN
                    } else {
                        finish_cka(a.cross(b), a.self_norm * a.self_norm, b.self_norm * b.self_norm)
                    }
                })
                .collect()
        }
    };

    let grid = Array2::from_shape_vec((rows.len(), cols.len()), values).expect("cell count");
    let stats = PairwiseStats {
        route,
        distinct_inputs: distinct.len(),
        gram_evaluations: if route == CkaRoute::Gram { distinct.len() } else { 0 },
        cells: cells.len(),
    };
    let matrix = CkaMatrix::new(
        grid,
        rows.iter().map(|r| r.borrow().tag().clone()).collect(),
        cols.iter().map(|c| c.borrow().tag().clone()).collect(),
    )?;
    Ok((matrix, stats))
}

fn intern<'a>(r: &'a RepMatrix, distinct: &mut Vec<&'a RepMatrix>) -> usize {
    match distinct.iter().position(|d| std::ptr::eq(*d, r)) {
        Some(i) => i,
        None => {
            distinct.push(r);
            distinct.len() - 1
        }
    }
}

fn check_distinct_alignment(distinct: &[&RepMatrix]) -> Result<()> {
    let expected = distinct[0].samples();
    match distinct.iter().find(|r| r.samples() != expected) {
        Some(bad) => Err(Error::Alignment {
            expected,
            found: bad.samples(),
            tag: Box::new(bad.tag().clone()),
        }),
        None => Ok(()),
    }
}

/// Centered Gram matrix plus its squared Frobenius norm.
struct GramSide {
    centered: Array2<f64>,
    self_hsic: f64,
    degenerate: bool,
}

impl GramSide {
    fn new(x: &RepMatrix) -> Self {
        let k = gram(x);
        let raw_trace = k.trace();
        let centered = double_center_owned(k.into_data());
        let degenerate = is_degenerate(centered.diag().sum(), raw_trace);
        GramSide {
            self_hsic: frobenius_dot(centered.view(), centered.view()),
            centered,
            degenerate,
        }
    }

    fn cka(&self, other: &GramSide) -> f64 {
        if self.degenerate || other.degenerate {
            return f64::NAN;
        }
        let cross = frobenius_dot(self.centered.view(), other.centered.view());
        finish_cka(cross, self.self_hsic, other.self_hsic)
    }
}

/// One row of a diagonal-versus-maximum summary.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagMaxPoint {
    /// Row position.
    pub row: usize,
    pub layer_index: usize,
    pub diag: Option<f64>,
    pub max: Option<f64>,
    /// Column position of the maximum; the lowest index wins ties.
    pub argmax: Option<usize>,
    pub argmax_layer_index: Option<usize>,
}

/// For each row `i`: `M[i][i]`, `max_j M[i][j]` and the first `j` attaining it.
pub fn diag_max_curve(grid: &CkaMatrix) -> Result<Vec<DiagMaxPoint>> {
    if !grid.is_square() {
        let (r, c) = grid.dim();
        return Err(Error::precondition(format!(
            "diag/max curve needs a square grid, got {r}x{c}"
        )));
    }
    let (n, _) = grid.dim();
    Ok((0..n)
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..n {
                if let Some(v) = grid.get(i, j) {
                    if best.is_none_or(|(_, b)| v > b) {
                        best = Some((j, v));
                    }
                }
            }
            DiagMaxPoint {
                row: i,
                layer_index: grid.row_tags()[i].layer_index,
                diag: grid.get(i, i),
                max: best.map(|(_, v)| v),
                argmax: best.map(|(j, _)| j),
                argmax_layer_index: best.map(|(j, _)| grid.col_tags()[j].layer_index),
            }
        })
        .collect())
}

/// CKA by the cheaper route, with degenerate inputs mapped to `None`.
pub fn cka_or_undefined(x: &RepMatrix, y: &RepMatrix) -> Result<Option<f64>> {
    match cka_reps(x, y) {
        Ok(v) => Ok(Some(v)),
        Err(Error::DegenerateRepresentation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}
