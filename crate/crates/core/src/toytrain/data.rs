use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::repcore::LabelMatrix;

/// Gaussian class blobs in `input_dim` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyDatasetSpec {
    pub class_count: usize,
    pub input_dim: usize,
    pub samples_per_class: usize,
    pub cluster_spread: f64,
    pub mean_scale: f64,
    pub seed: u64,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        ToyDatasetSpec {
            class_count: 4,
            input_dim: 32,
            samples_per_class: 250,
            cluster_spread: 0.3,
            mean_scale: 1.0,
            seed: 0,
        }
    }
}

impl ToyDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::precondition("class_count must be at least 2"));
        }
        if self.input_dim == 0 || self.samples_per_class == 0 {
            return Err(Error::precondition("input_dim and samples_per_class must be positive"));
        }
        if !(self.cluster_spread > 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::precondition("cluster_spread must be positive"));
        }
        if !self.mean_scale.is_finite() {
            return Err(Error::precondition("mean_scale must be finite"));
        }
        Ok(())
    }
}

/// Samples with their labels; row `i` belongs to class `i % c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSamples {
    pub x: Array2<f64>,
    pub labels: LabelMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub means: Array2<f64>,
    pub train: LabeledSamples,
    pub eval: LabeledSamples,
}

/// Draws class means `mean_scale * N(0, I)` once, then two disjoint
/// partitions of `c * n` rows each around them.
pub fn make_blobs(spec: &ToyDatasetSpec) -> Result<ToyDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (c, d) = (spec.class_count, spec.input_dim);
    let means = Array2::from_shape_fn((c, d), |_| spec.mean_scale * rng.sample::<f64, _>(StandardNormal));
    let partition = |rng: &mut ChaCha8Rng| -> Result<LabeledSamples> {
        let m = c * spec.samples_per_class;
        let classes: Vec<usize> = (0..m).map(|i| i % c).collect();
        let mut x = Array2::zeros((m, d));
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = means[[classes[i], j]] + spec.cluster_spread * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(LabeledSamples {
            x,
            labels: LabelMatrix::from_indices(&classes, c)?,
        })
    };
    let train = partition(&mut rng)?;
    let eval = partition(&mut rng)?;
    Ok(ToyDataset { means, train, eval })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentationFamily {
    Weak,
    Strong,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub noise_sigma: f64,
    pub mask_probability: f64,
    pub scale_range: [f64; 2],
    pub family: AugmentationFamily,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec {
            noise_sigma: 0.0,
            mask_probability: 0.0,
            scale_range: [1.0, 1.0],
            family: AugmentationFamily::Identity,
        }
    }

    /// Additive noise only.
    pub fn weak(noise_sigma: f64) -> Self {
        AugmentationSpec {
            noise_sigma,
            family: AugmentationFamily::Weak,
            ..Self::identity()
        }
    }

    pub fn strong(noise_sigma: f64, mask_probability: f64, scale_range: [f64; 2]) -> Self {
        AugmentationSpec {
            noise_sigma,
            mask_probability,
            scale_range,
            family: AugmentationFamily::Strong,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::precondition("noise_sigma must be a finite value >= 0"));
        }
        if !(0.0..1.0).contains(&self.mask_probability) {
            return Err(Error::precondition("mask_probability must lie in [0, 1)"));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::precondition("scale_range must satisfy 0 < lo <= hi"));
        }
        let plain = self.mask_probability == 0.0 && lo == 1.0 && hi == 1.0;
        match self.family {
            AugmentationFamily::Identity if !(plain && self.noise_sigma == 0.0) => Err(Error::precondition(
                "identity augmentation must have zero noise, zero masking and unit scale",
            )),
            AugmentationFamily::Weak if !plain => Err(Error::precondition(
                "weak augmentation is additive noise only (no masking, unit scale)",
            )),
            _ => Ok(()),
        }
    }
}

/// Scale, then mask, then add noise. Identity returns the input unchanged and
/// draws nothing from `rng`.
pub fn augment(x: ArrayView1<'_, f64>, spec: &AugmentationSpec, rng: &mut impl Rng) -> Result<Array1<f64>> {
    spec.validate()?;
    Ok(augment_unchecked(x, spec, rng))
}

fn augment_unchecked(x: ArrayView1<'_, f64>, spec: &AugmentationSpec, rng: &mut impl Rng) -> Array1<f64> {
    if spec.family == AugmentationFamily::Identity {
        return x.to_owned();
    }
    let [lo, hi] = spec.scale_range;
    let scale = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let mut out = x.mapv(|v| v * scale);
    if spec.mask_probability > 0.0 {
        for v in out.iter_mut() {
            if rng.random::<f64>() < spec.mask_probability {
                *v = 0.0;
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        for v in out.iter_mut() {
            *v += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    out
}

/// Augments every row. Row `i` uses its own ChaCha stream of `seed`, so a
/// row's view does not depend on the other rows.
pub fn augment_rows(x: ArrayView2<'_, f64>, spec: &AugmentationSpec, seed: u64) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut out = Array2::zeros(x.dim());
    for (i, (src, mut dst)) in x.rows().into_iter().zip(out.rows_mut()).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        dst.assign(&augment_unchecked(src, spec, &mut rng));
    }
    Ok(out)
}

/// Augments the rows of `x` selected by `rows`, drawing from one shared rng.
pub(crate) fn augment_batch(
    x: ArrayView2<'_, f64>,
    rows: &[usize],
    spec: &AugmentationSpec,
    rng: &mut impl Rng,
) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (&r, mut dst) in rows.iter().zip(out.rows_mut()) {
        dst.assign(&augment_unchecked(x.row(r), spec, rng));
    }
    out
}
