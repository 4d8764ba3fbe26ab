//! Linear probes: multinomial logistic regression on frozen representations.
//!
//! The probe minimizes mean softmax cross-entropy plus `(l2 / 2) ||W||_F^2`
//! over a `(p + 1) x c` weight matrix (last row is the bias) by full-batch
//! gradient descent with a non-monotone Armijo backtracking line search,
//! starting from zero. Trial steps come from the Barzilai-Borwein rule. Everything is
//! deterministic; the objective is convex, so the starting point does not
//! change the optimum.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repcore::{LabelMatrix, LayerTag, RepMatrix};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
// Armijo reference is the max of this many recent losses
const NONMONOTONE_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub l2_penalty: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2_penalty: 1e-4,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            train_fraction: 0.8,
            split_seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::precondition("l2_penalty must be a finite value >= 0"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::precondition("train_fraction must lie in (0, 1)"));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::precondition("gradient_tolerance must be positive"));
        }
        Ok(())
    }
}

/// Train/test row indices, both sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: within each class, rows are shuffled with the seed and
/// the first `round(train_fraction * n_k)` go to training (at least one row
/// stays on each side when the class has two or more rows).
pub fn stratified_split(labels: &LabelMatrix, train_fraction: f64, seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for k in 0..labels.class_count() {
        let mut rows: Vec<usize> = (0..labels.samples()).filter(|&i| labels.classes()[i] == k).collect();
        rows.shuffle(&mut rng);
        let n = rows.len();
        let mut n_train = (train_fraction * n as f64).round() as usize;
        if n >= 2 {
            n_train = n_train.clamp(1, n - 1);
        }
        train.extend_from_slice(&rows[..n_train]);
        test.extend_from_slice(&rows[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Split { train, test }
}

/// A fitted softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    /// `(p + 1) x c`; the last row holds the biases.
    pub weights: Array2<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub loss: f64,
    pub gradient_norm: f64,
}

impl ProbeModel {
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let p = x.ncols();
        let mut z = x.dot(&self.weights.slice(s![..p, ..]));
        z += &self.weights.row(p);
        z
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.logits(x)
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (k, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }

    /// Fraction of rows whose prediction matches.
    pub fn accuracy(&self, x: ArrayView2<'_, f64>, classes: &[usize]) -> f64 {
        let hits = self.predict(x).iter().zip(classes).filter(|(a, b)| a == b).count();
        hits as f64 / classes.len().max(1) as f64
    }
}

/// Objective value and gradient of the penalized mean cross-entropy.
struct Objective<'a> {
    x: ArrayView2<'a, f64>,
    classes: &'a [usize],
    class_count: usize,
    l2: f64,
}

impl Objective<'_> {
    fn loss(&self, w: &Array2<f64>) -> f64 {
        self.eval(w, false).0
    }

    fn eval(&self, w: &Array2<f64>, with_grad: bool) -> (f64, Option<Array2<f64>>) {
        let n = self.x.nrows();
        let p = self.x.ncols();
        let mut z = self.x.dot(&w.slice(s![..p, ..]));
        z += &w.row(p);
        let mut loss = 0.0;
        for (i, mut row) in z.rows_mut().into_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut denom = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                denom += *v;
            }
            let y = self.classes[i];
            loss -= (row[y] / denom).ln();
            row.mapv_inplace(|v| v / denom);
        }
        loss = loss / n as f64 + 0.5 * self.l2 * w.iter().map(|v| v * v).sum::<f64>();
        if !with_grad {
            return (loss, None);
        }
        // z now holds probabilities; subtract the one-hot targets
        for (i, &y) in self.classes.iter().enumerate() {
            z[[i, y]] -= 1.0;
        }
        z /= n as f64;
        let mut grad = Array2::zeros((p + 1, self.class_count));
        grad.slice_mut(s![..p, ..]).assign(&self.x.t().dot(&z));
        grad.row_mut(p).assign(&z.sum_axis(Axis(0)));
        grad.scaled_add(self.l2, w);
        (loss, Some(grad))
    }
}

fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Fits on the given rows, from zero or from `init`.
pub fn fit_softmax(
    x: ArrayView2<'_, f64>,
    classes: &[usize],
    class_count: usize,
    cfg: &ProbeConfig,
    init: Option<Array2<f64>>,
) -> Result<ProbeModel> {
    cfg.validate()?;
    if class_count < 2 {
        return Err(Error::precondition("a probe needs at least 2 classes"));
    }
    if x.nrows() != classes.len() {
        return Err(Error::precondition(format!(
            "{} rows but {} labels",
            x.nrows(),
            classes.len()
        )));
    }
    let objective = Objective {
        x,
        classes,
        class_count,
        l2: cfg.l2_penalty,
    };
    let shape = (x.ncols() + 1, class_count);
    let mut w = match init {
        Some(w0) if w0.dim() == shape => w0,
        Some(w0) => {
            return Err(Error::precondition(format!(
                "initial weights {:?}, expected {shape:?}",
                w0.dim()
            )))
        }
        None => Array2::zeros(shape),
    };

    let (mut loss, grad) = objective.eval(&w, true);
    let mut grad = grad.expect("gradient requested");
    let mut gnorm = frobenius(&grad);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut recent = std::collections::VecDeque::from([loss]);
    while gnorm > cfg.gradient_tolerance && iterations < cfg.max_iterations {
        iterations += 1;
        let g2 = gnorm * gnorm;
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut t = step;
        let mut candidate = &w - &(&grad * t);
        let mut cand_loss = objective.loss(&candidate);
        let mut backtracks = 0;
        while !(cand_loss <= reference - ARMIJO * t * g2) && backtracks < MAX_BACKTRACKS {
            t *= 0.5;
            candidate = &w - &(&grad * t);
            cand_loss = objective.loss(&candidate);
            backtracks += 1;
        }
        if !(cand_loss <= reference) {
            // no decrease is representable at this scale
            break;
        }
        let (_, new_grad) = objective.eval(&candidate, true);
        let new_grad = new_grad.expect("gradient requested");
        let dw = &candidate - &w;
        let dg = &new_grad - &grad;
        let curvature: f64 = dw.iter().zip(dg.iter()).map(|(a, b)| a * b).sum();
        let dw2: f64 = dw.iter().map(|v| v * v).sum();
        step = if curvature > 0.0 { dw2 / curvature } else { 2.0 * t };
        w = candidate;
        loss = cand_loss;
        if recent.len() == NONMONOTONE_WINDOW {
            recent.pop_front();
        }
        recent.push_back(loss);
        grad = new_grad;
        gnorm = frobenius(&grad);
    }
    Ok(ProbeModel {
        weights: w,
        converged: gnorm <= cfg.gradient_tolerance,
        iterations,
        loss,
        gradient_norm: gnorm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub tag: LayerTag,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub converged: bool,
    /// Rows held out for testing; identical across a probe curve.
    pub test_rows: Vec<usize>,
}

fn check_labels(x: &RepMatrix, labels: &LabelMatrix) -> Result<()> {
    if x.samples() != labels.samples() {
        return Err(Error::Alignment {
            expected: labels.samples(),
            found: x.samples(),
            tag: Box::new(x.tag().clone()),
        });
    }
    Ok(())
}

/// Fits a probe on the configured training split of `x`.
pub fn fit_probe(x: &RepMatrix, labels: &LabelMatrix, cfg: &ProbeConfig) -> Result<ProbeModel> {
    check_labels(x, labels)?;
    cfg.validate()?;
    let split = stratified_split(labels, cfg.train_fraction, cfg.split_seed);
    fit_on_split(x, labels, cfg, &split)
}

fn fit_on_split(x: &RepMatrix, labels: &LabelMatrix, cfg: &ProbeConfig, split: &Split) -> Result<ProbeModel> {
    let xt = x.data().select(Axis(0), &split.train);
    let yt: Vec<usize> = split.train.iter().map(|&i| labels.classes()[i]).collect();
    fit_softmax(xt.view(), &yt, labels.class_count(), cfg, None)
}

fn evaluate(x: &RepMatrix, labels: &LabelMatrix, cfg: &ProbeConfig, split: &Split) -> Result<ProbeResult> {
    let model = fit_on_split(x, labels, cfg, split)?;
    let acc = |rows: &[usize]| {
        let xs = x.data().select(Axis(0), rows);
        let ys: Vec<usize> = rows.iter().map(|&i| labels.classes()[i]).collect();
        model.accuracy(xs.view(), &ys)
    };
    Ok(ProbeResult {
        tag: x.tag().clone(),
        train_accuracy: acc(&split.train),
        test_accuracy: acc(&split.test),
        converged: model.converged,
        test_rows: split.test.clone(),
    })
}

/// Probe one layer: fit on the training split, report both accuracies.
pub fn probe_layer(x: &RepMatrix, labels: &LabelMatrix, cfg: &ProbeConfig) -> Result<ProbeResult> {
    check_labels(x, labels)?;
    cfg.validate()?;
    let split = stratified_split(labels, cfg.train_fraction, cfg.split_seed);
    evaluate(x, labels, cfg, &split)
}

/// One probe per layer, all on the same split.
pub fn probe_curve(reps: &[RepMatrix], labels: &LabelMatrix, cfg: &ProbeConfig) -> Result<Vec<ProbeResult>> {
    cfg.validate()?;
    for r in reps {
        check_labels(r, labels)?;
    }
    let split = stratified_split(labels, cfg.train_fraction, cfg.split_seed);
    reps.par_iter().map(|r| evaluate(r, labels, cfg, &split)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gaussian, random_orthogonal, rep, rng};
    use ndarray::{concatenate, Array1};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn blobs(seed: u64, per_class: usize, sep: f64, p: usize) -> (RepMatrix, LabelMatrix) {
        let mut r = rng(seed);
        let mut x = gaussian(&mut r, 2 * per_class, p);
        let classes: Vec<usize> = (0..2 * per_class).map(|i| i % 2).collect();
        for (i, &k) in classes.iter().enumerate() {
            x[[i, 0]] += if k == 1 { sep } else { 0.0 };
        }
        (rep(x), LabelMatrix::from_indices(&classes, 2).unwrap())
    }

    #[test]
    fn separable_blobs() {
        // means 10 sigma apart: the Bayes error is Phi(-5), under 3e-7
        let (x, labels) = blobs(1, 200, 10.0, 5);
        let r = probe_layer(&x, &labels, &ProbeConfig::default()).unwrap();
        assert!(r.test_accuracy >= 0.99, "{r:?}");
        assert_eq!(r.test_rows.len(), 80);
    }

    #[test]
    fn uninformative_features_are_at_chance() {
        let classes: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let labels = LabelMatrix::from_indices(&classes, 4).unwrap();
        let x = rep(Array2::zeros((400, 6)));
        let r = probe_layer(&x, &labels, &ProbeConfig::default()).unwrap();
        assert!((r.test_accuracy - 0.25).abs() <= 0.05, "{r:?}");
    }

    #[test]
    fn one_coordinate_threshold() {
        let mut r = rng(3);
        let m = 200;
        let mut x = gaussian(&mut r, m, 3);
        let classes: Vec<usize> = (0..m).map(|i| (x[[i, 1]] > 0.0) as usize).collect();
        // keep a margin around the threshold
        for i in 0..m {
            x[[i, 1]] += if classes[i] == 1 { 0.5 } else { -0.5 };
        }
        let labels = LabelMatrix::from_indices(&classes, 2).unwrap();
        let cfg = ProbeConfig::default();
        let model = fit_probe(&rep(x.clone()), &labels, &cfg).unwrap();
        assert!(model.converged, "{} after {} iterations", model.gradient_norm, model.iterations);
        let res = probe_layer(&rep(x), &labels, &cfg).unwrap();
        assert_eq!(res.train_accuracy, 1.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(4);
        let x = gaussian(&mut r, 30, 4);
        let classes: Vec<usize> = (0..30).map(|_| r.random_range(0..3)).collect();
        let obj = Objective {
            x: x.view(),
            classes: &classes,
            class_count: 3,
            l2: 0.3,
        };
        let w = gaussian(&mut r, 5, 3);
        let (_, g) = obj.eval(&w, true);
        let g = g.unwrap();
        let h = 1e-6;
        for i in 0..5 {
            for k in 0..3 {
                let mut wp = w.clone();
                wp[[i, k]] += h;
                let mut wm = w.clone();
                wm[[i, k]] -= h;
                let fd = (obj.loss(&wp) - obj.loss(&wm)) / (2.0 * h);
                assert!((fd - g[[i, k]]).abs() < 1e-7, "{fd} vs {}", g[[i, k]]);
            }
        }
    }

    #[test]
    fn optimum_does_not_depend_on_start() {
        let (x, labels) = blobs(5, 60, 1.0, 4);
        let cfg = ProbeConfig {
            l2_penalty: 1e-2,
            max_iterations: 5000,
            gradient_tolerance: 1e-9,
            ..ProbeConfig::default()
        };
        let classes = labels.classes();
        let zero = fit_softmax(x.data().view(), classes, 2, &cfg, None).unwrap();
        assert!(zero.converged, "{} {}", zero.gradient_norm, zero.iterations);
        let mut r = rng(6);
        for _ in 0..3 {
            let init = Array2::from_shape_fn((5, 2), |_| 0.1 * r.sample::<f64, _>(StandardNormal));
            let other = fit_softmax(x.data().view(), classes, 2, &cfg, Some(init)).unwrap();
            assert!(other.converged);
            assert!((zero.loss - other.loss).abs() <= 1e-6);
        }
    }

    #[test]
    fn accuracy_invariant_to_rotation_without_penalty() {
        // overlapping classes so the unpenalized optimum is finite
        let (x, labels) = blobs(7, 150, 1.5, 4);
        let q = random_orthogonal(&mut rng(8), 4);
        let rotated = rep(x.data().dot(&q));
        let cfg = ProbeConfig {
            l2_penalty: 0.0,
            max_iterations: 20000,
            gradient_tolerance: 1e-8,
            ..ProbeConfig::default()
        };
        let a = probe_layer(&x, &labels, &cfg).unwrap();
        let b = probe_layer(&rotated, &labels, &cfg).unwrap();
        assert!(a.converged && b.converged);
        assert_eq!(a.test_accuracy, b.test_accuracy);
    }

    #[test]
    fn labels_as_features_are_perfect() {
        let classes: Vec<usize> = (0..100).map(|i| (i * 7) % 5).collect();
        let labels = LabelMatrix::from_indices(&classes, 5).unwrap();
        let x = labels.to_rep().unwrap();
        let curve = probe_curve(&[x.clone(), x], &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(curve[0].test_accuracy, 1.0);
        assert_eq!(curve[0], curve[1]);
    }

    #[test]
    fn curve_reuses_split() {
        let (x, labels) = blobs(9, 40, 2.0, 3);
        let y = rep(concatenate(Axis(1), &[x.data().view(), Array1::ones(80).insert_axis(Axis(1)).view()]).unwrap());
        let curve = probe_curve(&[x, y], &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(curve[0].test_rows, curve[1].test_rows);
    }

    #[test]
    fn stratified_split_proportions() {
        let classes: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let labels = LabelMatrix::from_indices(&classes, 4).unwrap();
        let s = stratified_split(&labels, 0.8, 3);
        assert_eq!((s.train.len(), s.test.len()), (80, 20));
        for k in 0..4 {
            assert_eq!(s.test.iter().filter(|&&i| classes[i] == k).count(), 5);
        }
        assert_eq!(s, stratified_split(&labels, 0.8, 3));
        assert_ne!(s, stratified_split(&labels, 0.8, 4));
    }

    #[test]
    fn rejects_bad_input() {
        let labels = LabelMatrix::from_indices(&[0, 1, 0, 1], 2).unwrap();
        let x = rep(Array2::zeros((5, 2)));
        assert!(matches!(probe_layer(&x, &labels, &ProbeConfig::default()), Err(Error::Alignment { .. })));
        let cfg = ProbeConfig {
            train_fraction: 1.0,
            ..ProbeConfig::default()
        };
        assert!(fit_probe(&rep(Array2::zeros((4, 2))), &labels, &cfg).is_err());
        assert!(fit_softmax(Array2::zeros((4, 2)).view(), &[0, 0, 0, 0], 1, &ProbeConfig::default(), None).is_err());
    }
}
