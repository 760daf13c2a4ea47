//! Finite-difference audit of the hand-derived gradients.
//!
//! The reference loss here is a separate scalar `f64` implementation of the
//! forward pass; it shares no code with [`crate::models`]. Coordinates whose
//! central difference straddles a ReLU kink (some hidden pre-activation
//! changes sign between `w − h` and `w + h`) are skipped and counted, since
//! the loss is not differentiable there.

use serde::Serialize;

use crate::error::Result;
use crate::models::{init_params, loss_and_grad, Batch, ModelParams, ModelSpec};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableError {
    pub name: String,
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub model: String,
    pub variables: Vec<VariableError>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Mean cross-entropy in f64 plus the sign pattern of hidden pre-activations.
fn reference_loss(spec: &ModelSpec, vars: &[Vec<f64>], batch: &Batch) -> (f64, Vec<bool>) {
    let n = batch.labels.len();
    let d = spec.input_dim();
    let c = spec.num_classes();
    let x = batch.inputs.data();
    let mut signs = Vec::new();
    let mut total = 0.0;
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let logits: Vec<f64> = match *spec {
            ModelSpec::SoftmaxRegression { .. } => (0..c)
                .map(|o| {
                    vars[1][o]
                        + (0..d)
                            .map(|k| f64::from(xi[k]) * vars[0][k * c + o])
                            .sum::<f64>()
                })
                .collect(),
            ModelSpec::Mlp {
                hidden_units: h, ..
            } => {
                let hidden: Vec<f64> = (0..h)
                    .map(|j| {
                        let pre = vars[1][j]
                            + (0..d)
                                .map(|k| f64::from(xi[k]) * vars[0][k * h + j])
                                .sum::<f64>();
                        signs.push(pre > 0.0);
                        pre.max(0.0)
                    })
                    .collect();
                (0..c)
                    .map(|o| {
                        vars[3][o] + (0..h).map(|j| hidden[j] * vars[2][j * c + o]).sum::<f64>()
                    })
                    .collect()
            }
        };
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        total += lse - logits[batch.labels[i]];
    }
    (total / n as f64, signs)
}

/// Compares `grads` against central differences of the reference loss.
pub fn check_gradients(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Batch,
    grads: &ModelParams,
    step: f64,
    tolerance: f64,
) -> Result<GradcheckReport> {
    params.check(spec)?;
    params.check_compatible(grads)?;
    let mut vars: Vec<Vec<f64>> = params
        .variables()
        .iter()
        .map(|v| v.tensor.data().iter().map(|&x| f64::from(x)).collect())
        .collect();
    let mut report = Vec::new();
    for (vi, g) in grads.variables().iter().enumerate() {
        let mut worst = 0.0f64;
        let mut checked = 0;
        let mut skipped = 0;
        for (ci, &analytic) in g.tensor.data().iter().enumerate() {
            let original = vars[vi][ci];
            vars[vi][ci] = original + step;
            let (plus, s_plus) = reference_loss(spec, &vars, batch);
            vars[vi][ci] = original - step;
            let (minus, s_minus) = reference_loss(spec, &vars, batch);
            vars[vi][ci] = original;
            if s_plus != s_minus {
                skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(f64::from(analytic), numeric));
            checked += 1;
        }
        report.push(VariableError {
            name: g.name.clone(),
            max_relative_error: worst,
            checked,
            skipped_kinks: skipped,
        });
    }
    let max_relative_error = report
        .iter()
        .map(|v| v.max_relative_error)
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        model: format!("{spec:?}"),
        variables: report,
        max_relative_error,
        tolerance,
        passed: max_relative_error < tolerance,
    })
}

/// Glorot weights with small random biases, so bias gradients and hidden
/// units on both sides of zero are exercised.
pub fn random_params(spec: &ModelSpec, stream: &RngStream) -> Result<ModelParams> {
    let mut params = init_params(spec, &stream.named("weights"))?;
    let mut rng = stream.named("biases").rng();
    for v in params.variables_mut() {
        if v.tensor.shape().len() == 1 {
            for b in v.tensor.data_mut() {
                *b = (0.2 * rng.unit_f64() - 0.1) as f32;
            }
        }
    }
    Ok(params)
}

pub fn random_batch(spec: &ModelSpec, n: usize, stream: &RngStream) -> Result<Batch> {
    let mut rng = stream.rng();
    let d = spec.input_dim();
    let inputs = (0..n * d).map(|_| rng.unit_f64() as f32).collect();
    Ok(Batch {
        inputs: Tensor::from_vec(vec![n, d], inputs)?,
        labels: (0..n).map(|_| rng.below(spec.num_classes())).collect(),
    })
}

/// The small models audited by default.
pub fn audit_specs() -> [ModelSpec; 2] {
    [
        ModelSpec::SoftmaxRegression {
            input_dim: 6,
            num_classes: 4,
        },
        ModelSpec::Mlp {
            input_dim: 6,
            hidden_units: 5,
            num_classes: 4,
        },
    ]
}

/// Audits both model types on `trials` random (params, batch) draws each.
pub fn run_gradcheck(seed: u64, trials: u64, tolerance: f64) -> Result<Vec<GradcheckReport>> {
    let mut reports = Vec::new();
    for spec in audit_specs() {
        for t in 0..trials {
            let s = RngStream::with_path(seed, &[t]);
            let params = random_params(&spec, &s.named("params"))?;
            let batch = random_batch(&spec, 8, &s.named("batch"))?;
            let (_, grads) = loss_and_grad(&spec, &params, &batch)?;
            reports.push(check_gradients(
                &spec,
                &params,
                &batch,
                &grads,
                DEFAULT_STEP,
                tolerance,
            )?);
        }
    }
    Ok(reports)
}
