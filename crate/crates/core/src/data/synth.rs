//! Gaussian-blob classification data for offline runs and tests.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Class `c` is an isotropic Gaussian around a per-class center, clamped to
/// `[0, 1]`. Centers are `0.5 + separation·(u − 0.5)` with `u` uniform in
/// the unit cube, so `separation` and `noise_std` together set difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_per_class: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
}

fn default_noise() -> f64 {
    0.25
}

fn default_separation() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn new(n_per_class: usize, num_classes: usize, input_dim: usize) -> Self {
        SynthSpec {
            n_per_class,
            num_classes,
            input_dim,
            noise_std: default_noise(),
            separation: default_separation(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_per_class == 0 || self.num_classes == 0 || self.input_dim == 0 {
            return Err(Error::InvalidConfig(
                "synthetic dataset sizes must be at least 1".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || !self.separation.is_finite() {
            return Err(Error::InvalidConfig(
                "synthetic noise_std must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Class centers, `[num_classes × input_dim]`.
    pub fn centers(&self, stream: &RngStream) -> Vec<Vec<f64>> {
        let mut rng = stream.named("centers").rng();
        (0..self.num_classes)
            .map(|_| {
                (0..self.input_dim)
                    .map(|_| 0.5 + self.separation * (rng.unit_f64() - 0.5))
                    .collect()
            })
            .collect()
    }

    /// `n_per_class` examples of every class around `centers`, class-major.
    pub fn sample(&self, centers: &[Vec<f64>], stream: &RngStream) -> Result<Dataset> {
        self.validate()?;
        let mut rng = stream.rng();
        let n = self.n_per_class * self.num_classes;
        let mut data = Vec::with_capacity(n * self.input_dim);
        let mut labels = Vec::with_capacity(n);
        for (class, center) in centers.iter().enumerate() {
            for _ in 0..self.n_per_class {
                data.extend(
                    center
                        .iter()
                        .map(|&m| (m + self.noise_std * rng.normal()).clamp(0.0, 1.0) as f32),
                );
                labels.push(class);
            }
        }
        let inputs = Tensor::from_vec(vec![n, self.input_dim], data)?;
        Dataset::new(inputs, labels, self.num_classes.max(2))
    }

    /// Centers from `stream/"centers"`, samples from `stream/"samples"`.
    pub fn generate(&self, stream: &RngStream) -> Result<Dataset> {
        self.validate()?;
        self.sample(&self.centers(stream), &stream.named("samples"))
    }

    /// Train and test sets drawn around the same centers.
    pub fn generate_split(
        &self,
        stream: &RngStream,
        test_per_class: usize,
    ) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let centers = self.centers(stream);
        let train = self.sample(&centers, &stream.named("samples"))?;
        let test_spec = SynthSpec {
            n_per_class: test_per_class,
            ..*self
        };
        let test = test_spec.sample(&centers, &stream.named("test"))?;
        Ok((train, test))
    }
}

/// Default-difficulty blobs; linearly separable to well above 90%.
pub fn synth_dataset(
    stream: &RngStream,
    n_per_class: usize,
    num_classes: usize,
    input_dim: usize,
) -> Result<Dataset> {
    SynthSpec::new(n_per_class, num_classes, input_dim).generate(stream)
}
