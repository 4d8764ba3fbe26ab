use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::loss::{info_nce, softmax_cross_entropy};
use crate::error::{Error, Result};
use crate::repcore::Parity;

/// Dense layer `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn init(rng: &mut impl Rng, fan_in: usize, fan_out: usize, std: f64) -> Self {
        Linear {
            weight: Array2::from_shape_fn((fan_in, fan_out), |_| std * rng.sample::<f64, _>(StandardNormal)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Linear {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    fn backward(&self, x: ArrayView2<'_, f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

fn relu(mut a: Array2<f64>) -> Array2<f64> {
    a.mapv_inplace(|v| v.max(0.0));
    a
}

/// Zeroes `d` wherever the ReLU output `y` is not positive.
fn relu_backward(d: &mut Array2<f64>, y: &Array2<f64>) {
    Zip::from(d).and(y).for_each(|g, &v| {
        if v <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Branch `outer(ReLU(inner(h)))`, added back onto `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Linear map to `classes` logits.
    Classifier { classes: usize },
    /// Three-layer perceptron `w -> w -> w -> dim`.
    Projection { dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Classifier(Linear),
    Projection([Linear; 3]),
}

/// Residual MLP: linear embedding, `B` residual blocks, then a head.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyResNet {
    pub embed: Linear,
    pub blocks: Vec<ResidualBlock>,
    pub head: Head,
}

/// Every intermediate of a forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub embed: Array2<f64>,
    /// ReLU(inner(h)) per block.
    pub hidden: Vec<Array2<f64>>,
    /// Branch outputs before the residual addition.
    pub odd: Vec<Array2<f64>>,
    /// ReLU(h + branch) per block.
    pub even: Vec<Array2<f64>>,
    /// Head layer outputs; the last is the logits or the projection.
    pub head: Vec<Array2<f64>>,
}

impl Activations {
    pub fn output(&self) -> &Array2<f64> {
        self.head.last().expect("a head has at least one layer")
    }

    /// `(layer_index, parity, block, matrix)` for every tap, in network order.
    /// Block `i` (1-based) gives layers `2i - 1` (odd) and `2i` (even); head
    /// layers continue the numbering.
    pub fn taps(&self) -> Vec<(usize, Parity, Option<usize>, &Array2<f64>)> {
        let mut out = Vec::with_capacity(2 * self.odd.len() + self.head.len());
        for (b, (o, e)) in self.odd.iter().zip(&self.even).enumerate() {
            out.push((2 * b + 1, Parity::Odd, Some(b + 1), o));
            out.push((2 * b + 2, Parity::Even, Some(b + 1), e));
        }
        let base = 2 * self.odd.len();
        for (j, h) in self.head.iter().enumerate() {
            out.push((base + j + 1, Parity::Head, None, h));
        }
        out
    }
}

impl ToyResNet {
    pub fn new(input_dim: usize, width: usize, blocks: usize, head: HeadKind, seed: u64) -> Result<Self> {
        let out_dim = match head {
            HeadKind::Classifier { classes } => classes,
            HeadKind::Projection { dim } => dim,
        };
        if input_dim == 0 || width == 0 || blocks == 0 || out_dim == 0 {
            return Err(Error::precondition("network dimensions and block count must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, w) = (input_dim as f64, width as f64);
        let embed = Linear::init(&mut rng, input_dim, width, (1.0 / d).sqrt());
        // outer layers start small so the residual stream stays O(1) with depth
        let blocks = (0..blocks)
            .map(|_| ResidualBlock {
                inner: Linear::init(&mut rng, width, width, (2.0 / w).sqrt()),
                outer: Linear::init(&mut rng, width, width, (1.0 / (w * blocks as f64)).sqrt()),
            })
            .collect();
        let head = match head {
            HeadKind::Classifier { classes } => Head::Classifier(Linear::init(&mut rng, width, classes, (1.0 / w).sqrt())),
            HeadKind::Projection { dim } => Head::Projection([
                Linear::init(&mut rng, width, width, (2.0 / w).sqrt()),
                Linear::init(&mut rng, width, width, (2.0 / w).sqrt()),
                Linear::init(&mut rng, width, dim, (2.0 / w).sqrt()),
            ]),
        };
        Ok(ToyResNet { embed, blocks, head })
    }

    pub fn input_dim(&self) -> usize {
        self.embed.weight.nrows()
    }

    pub fn width(&self) -> usize {
        self.embed.weight.ncols()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn head_kind(&self) -> HeadKind {
        match &self.head {
            Head::Classifier(l) => HeadKind::Classifier { classes: l.bias.len() },
            Head::Projection(ls) => HeadKind::Projection { dim: ls[2].bias.len() },
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<Activations> {
        if x.ncols() != self.input_dim() {
            return Err(Error::precondition(format!(
                "network expects {} input features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let embed = self.embed.forward(x);
        let mut hidden = Vec::with_capacity(self.blocks.len());
        let mut odd = Vec::with_capacity(self.blocks.len());
        let mut even: Vec<Array2<f64>> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let h = even.last().unwrap_or(&embed);
            let a = relu(block.inner.forward(h.view()));
            let o = block.outer.forward(a.view());
            let e = relu(h + &o);
            hidden.push(a);
            odd.push(o);
            even.push(e);
        }
        let top = even.last().expect("at least one block").view();
        let head = match &self.head {
            Head::Classifier(l) => vec![l.forward(top)],
            Head::Projection([l1, l2, l3]) => {
                let z1 = relu(l1.forward(top));
                let z2 = relu(l2.forward(z1.view()));
                let z3 = l3.forward(z2.view());
                vec![z1, z2, z3]
            }
        };
        Ok(Activations {
            embed,
            hidden,
            odd,
            even,
            head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ToyResNet {
            embed: self.embed.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResidualBlock {
                    inner: b.inner.zeros_like(),
                    outer: b.outer.zeros_like(),
                })
                .collect(),
            head: match &self.head {
                Head::Classifier(l) => Head::Classifier(l.zeros_like()),
                Head::Projection(ls) => Head::Projection([ls[0].zeros_like(), ls[1].zeros_like(), ls[2].zeros_like()]),
            },
        }
    }

    /// Gradient of the loss with respect to every parameter, given `dL/d(output)`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, acts: &Activations, d_out: Array2<f64>) -> ToyResNet {
        let mut grad = self.zeros_like();
        let top = acts.even.last().expect("at least one block");
        let mut dh = match (&self.head, &mut grad.head) {
            (Head::Classifier(l), Head::Classifier(g)) => l.backward(top.view(), &d_out, g),
            (Head::Projection([l1, l2, l3]), Head::Projection([g1, g2, g3])) => {
                let (z1, z2) = (&acts.head[0], &acts.head[1]);
                let mut d2 = l3.backward(z2.view(), &d_out, g3);
                relu_backward(&mut d2, z2);
                let mut d1 = l2.backward(z1.view(), &d2, g2);
                relu_backward(&mut d1, z1);
                l1.backward(top.view(), &d1, g1)
            }
            _ => unreachable!("gradient mirrors the network"),
        };
        for (b, (block, g)) in self.blocks.iter().zip(grad.blocks.iter_mut()).enumerate().rev() {
            let input = if b == 0 { &acts.embed } else { &acts.even[b - 1] };
            // dh becomes d(pre-ReLU sum) = d(branch) = d(identity path)
            relu_backward(&mut dh, &acts.even[b]);
            let mut da = block.outer.backward(acts.hidden[b].view(), &dh, &mut g.outer);
            relu_backward(&mut da, &acts.hidden[b]);
            dh += &block.inner.backward(input.view(), &da, &mut g.inner);
        }
        self.embed.backward(x, &dh, &mut grad.embed);
        grad
    }

    /// Mean cross-entropy of the classifier head and its parameter gradient.
    pub fn supervised_loss_grad(&self, x: ArrayView2<'_, f64>, classes: &[usize]) -> Result<(f64, ToyResNet)> {
        let HeadKind::Classifier { classes: c } = self.head_kind() else {
            return Err(Error::precondition("supervised loss needs a classifier head"));
        };
        if classes.len() != x.nrows() || classes.iter().any(|&k| k >= c) {
            return Err(Error::precondition("labels do not match the batch or the head"));
        }
        let acts = self.forward(x)?;
        let (loss, d_out) = softmax_cross_entropy(acts.output().view(), classes);
        Ok((loss, self.backward(x, &acts, d_out)))
    }

    /// InfoNCE of the projection head over interleaved view pairs, and its
    /// parameter gradient.
    pub fn contrastive_loss_grad(&self, views: ArrayView2<'_, f64>, temperature: f64) -> Result<(f64, ToyResNet)> {
        if !matches!(self.head, Head::Projection(_)) {
            return Err(Error::precondition("contrastive loss needs a projection head"));
        }
        let acts = self.forward(views)?;
        let (loss, d_out) = info_nce(acts.output().view(), temperature, true)?;
        Ok((loss, self.backward(views, &acts, d_out.expect("gradient requested"))))
    }

    /// Parameter arrays in a fixed order.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut layers = vec![&self.embed];
        for b in &self.blocks {
            layers.push(&b.inner);
            layers.push(&b.outer);
        }
        match &self.head {
            Head::Classifier(l) => layers.push(l),
            Head::Projection(ls) => layers.extend(ls.iter()),
        }
        layers
            .into_iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut layers = vec![&mut self.embed];
        for b in &mut self.blocks {
            layers.push(&mut b.inner);
            layers.push(&mut b.outer);
        }
        match &mut self.head {
            Head::Classifier(l) => layers.push(l),
            Head::Projection(ls) => layers.extend(ls.iter_mut()),
        }
        layers
            .into_iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// `self += alpha * other`, parameter by parameter.
    pub fn add_scaled(&mut self, alpha: f64, other: &ToyResNet) {
        for (p, g) in self.params_mut().into_iter().zip(other.params()) {
            for (a, b) in p.iter_mut().zip(g) {
                *a += alpha * b;
            }
        }
    }

    /// Classifier accuracy on unaugmented inputs; ties go to the lowest class.
    pub fn accuracy(&self, x: ArrayView2<'_, f64>, classes: &[usize]) -> Result<f64> {
        if !matches!(self.head, Head::Classifier(_)) {
            return Err(Error::precondition("accuracy needs a classifier head"));
        }
        let acts = self.forward(x)?;
        let hits = acts
            .output()
            .rows()
            .into_iter()
            .zip(classes)
            .filter(|(row, &y)| {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                best == y
            })
            .count();
        Ok(hits as f64 / classes.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{gaussian, rng};

    /// Max relative error of the analytic gradient against central differences
    /// over every parameter.
    fn gradient_error(net: &ToyResNet, loss: impl Fn(&ToyResNet) -> f64, grad: &ToyResNet) -> f64 {
        let h = 1e-5;
        let scale = grad
            .params()
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let mut worst = 0.0f64;
        let mut probe = net.clone();
        let counts: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        for (t, &len) in counts.iter().enumerate() {
            for j in 0..len {
                let orig = probe.params()[t][j];
                probe.params_mut()[t][j] = orig + h;
                let up = loss(&probe);
                probe.params_mut()[t][j] = orig - h;
                let down = loss(&probe);
                probe.params_mut()[t][j] = orig;
                let fd = (up - down) / (2.0 * h);
                let g = grad.params()[t][j];
                worst = worst.max((fd - g).abs() / g.abs().max(1e-3 * scale));
            }
        }
        worst
    }

    #[test]
    fn supervised_gradient_matches_finite_differences() {
        let net = ToyResNet::new(5, 8, 2, HeadKind::Classifier { classes: 3 }, 1).unwrap();
        let x = gaussian(&mut rng(2), 12, 5);
        let classes: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let (_, grad) = net.supervised_loss_grad(x.view(), &classes).unwrap();
        let err = gradient_error(&net, |n| n.supervised_loss_grad(x.view(), &classes).unwrap().0, &grad);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let net = ToyResNet::new(5, 8, 2, HeadKind::Projection { dim: 4 }, 3).unwrap();
        let x = gaussian(&mut rng(4), 8, 5);
        let (_, grad) = net.contrastive_loss_grad(x.view(), 0.5).unwrap();
        let err = gradient_error(&net, |n| n.contrastive_loss_grad(x.view(), 0.5).unwrap().0, &grad);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn residual_wiring() {
        let net = ToyResNet::new(6, 10, 3, HeadKind::Projection { dim: 4 }, 5).unwrap();
        let x = gaussian(&mut rng(6), 9, 6);
        let acts = net.forward(x.view()).unwrap();
        for b in 0..3 {
            let prev = if b == 0 { &acts.embed } else { &acts.even[b - 1] };
            let expected = (prev + &acts.odd[b]).mapv(|v| v.max(0.0));
            assert_eq!(acts.even[b], expected);
        }
        let taps = acts.taps();
        let labels: Vec<_> = taps.iter().map(|(i, p, _, _)| format!("{p}{i}")).collect();
        assert_eq!(labels, ["odd1", "even2", "odd3", "even4", "odd5", "even6", "head7", "head8", "head9"]);
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = ToyResNet::new(4, 8, 2, HeadKind::Classifier { classes: 2 }, 7).unwrap();
        assert_eq!(a, ToyResNet::new(4, 8, 2, HeadKind::Classifier { classes: 2 }, 7).unwrap());
        assert_ne!(a, ToyResNet::new(4, 8, 2, HeadKind::Classifier { classes: 2 }, 8).unwrap());
        assert_eq!(a.parameter_count(), 4 * 8 + 8 + 2 * 2 * (64 + 8) + 8 * 2 + 2);
    }

    #[test]
    fn wrong_head_rejected() {
        let x = gaussian(&mut rng(1), 4, 3);
        let sup = ToyResNet::new(3, 4, 1, HeadKind::Classifier { classes: 2 }, 0).unwrap();
        assert!(sup.contrastive_loss_grad(x.view(), 0.5).is_err());
        let nce = ToyResNet::new(3, 4, 1, HeadKind::Projection { dim: 2 }, 0).unwrap();
        assert!(nce.supervised_loss_grad(x.view(), &[0, 1, 0, 1]).is_err());
        assert!(nce.forward(gaussian(&mut rng(1), 4, 2).view()).is_err());
    }
}
