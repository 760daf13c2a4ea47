//! The two classifiers the experiments train, with hand-derived gradients.
//!
//! Canonical variable order:
//! - `SoftmaxRegression`: `W[input×classes]`, `b[classes]`
//! - `Mlp`: `W1[input×hidden]`, `b1[hidden]`, `W2[hidden×classes]`, `b2[classes]`
//!
//! Loss and gradients use mean (not sum) reduction over the batch.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{matmul, softmax_rows, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    SoftmaxRegression {
        input_dim: usize,
        num_classes: usize,
    },
    Mlp {
        input_dim: usize,
        hidden_units: usize,
        num_classes: usize,
    },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let (input, hidden, classes) = match *self {
            ModelSpec::SoftmaxRegression {
                input_dim,
                num_classes,
            } => (input_dim, 1, num_classes),
            ModelSpec::Mlp {
                input_dim,
                hidden_units,
                num_classes,
            } => (input_dim, hidden_units, num_classes),
        };
        if input == 0 || hidden == 0 {
            return Err(Error::InvalidModelSpec(
                "input_dim and hidden_units must be at least 1".into(),
            ));
        }
        if classes < 2 {
            return Err(Error::InvalidModelSpec(
                "num_classes must be at least 2".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            ModelSpec::SoftmaxRegression { input_dim, .. } | ModelSpec::Mlp { input_dim, .. } => {
                input_dim
            }
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            ModelSpec::SoftmaxRegression { num_classes, .. }
            | ModelSpec::Mlp { num_classes, .. } => num_classes,
        }
    }

    /// Names and shapes of the variables, in canonical order.
    pub fn variable_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            ModelSpec::SoftmaxRegression {
                input_dim,
                num_classes,
            } => vec![
                ("W", vec![input_dim, num_classes]),
                ("b", vec![num_classes]),
            ],
            ModelSpec::Mlp {
                input_dim,
                hidden_units,
                num_classes,
            } => vec![
                ("W1", vec![input_dim, hidden_units]),
                ("b1", vec![hidden_units]),
                ("W2", vec![hidden_units, num_classes]),
                ("b2", vec![num_classes]),
            ],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.variable_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub tensor: Tensor,
}

/// Named model variables in a fixed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    vars: Vec<Variable>,
}

impl ModelParams {
    pub fn new(vars: Vec<Variable>) -> Result<Self> {
        for (i, v) in vars.iter().enumerate() {
            if vars[..i].iter().any(|w| w.name == v.name) {
                return Err(Error::InvalidModelSpec(format!(
                    "duplicate variable name {}",
                    v.name
                )));
            }
        }
        Ok(ModelParams { vars })
    }

    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let vars = spec
            .variable_shapes()
            .into_iter()
            .map(|(name, shape)| {
                Ok(Variable {
                    name: name.to_string(),
                    tensor: Tensor::zeros(&shape)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ModelParams { vars })
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn variables_mut(&mut self) -> &mut [Variable] {
        &mut self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.vars.iter().find(|v| v.name == name).map(|v| &v.tensor)
    }

    pub fn element_count(&self) -> usize {
        self.vars.iter().map(|v| v.tensor.len()).sum()
    }

    /// Checks names and shapes against `spec`.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.variable_shapes();
        let matches = self.vars.len() == expected.len()
            && self
                .vars
                .iter()
                .zip(&expected)
                .all(|(v, (name, shape))| v.name == *name && v.tensor.shape() == &shape[..]);
        if !matches {
            return Err(Error::ShapeMismatch {
                op: "model params",
                left: self.vars.iter().map(|v| v.tensor.len()).collect(),
                right: expected.iter().map(|(_, s)| s.iter().product()).collect(),
            });
        }
        Ok(())
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn check_compatible(&self, other: &ModelParams) -> Result<()> {
        let ok = self.vars.len() == other.vars.len()
            && self
                .vars
                .iter()
                .zip(&other.vars)
                .all(|(a, b)| a.name == b.name && a.tensor.shape() == b.tensor.shape());
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "model params",
                left: self.vars.iter().map(|v| v.tensor.len()).collect(),
                right: other.vars.iter().map(|v| v.tensor.len()).collect(),
            });
        }
        Ok(())
    }

    /// Concatenation of all variables in canonical order.
    pub fn flatten(&self) -> Vec<f32> {
        self.vars
            .iter()
            .flat_map(|v| v.tensor.data().iter().copied())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean loss and accuracy over some set of examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &ModelSpec, stream: &RngStream) -> Result<ModelParams> {
    spec.validate()?;
    let vars = spec
        .variable_shapes()
        .into_iter()
        .map(|(name, shape)| {
            let tensor = if let [fan_in, fan_out] = shape[..] {
                let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = stream.named(name).rng();
                let data = (0..fan_in * fan_out)
                    .map(|_| (s * (2.0 * rng.unit_f64() - 1.0)) as f32)
                    .collect();
                Tensor::from_vec(shape, data)?
            } else {
                Tensor::zeros(&shape)?
            };
            Ok(Variable {
                name: name.to_string(),
                tensor,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ModelParams { vars })
}

fn check_batch(spec: &ModelSpec, inputs: &Tensor, labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if inputs.shape() != [labels.len(), spec.input_dim()] {
        return Err(Error::ShapeMismatch {
            op: "batch",
            left: inputs.shape().to_vec(),
            right: vec![labels.len(), spec.input_dim()],
        });
    }
    let num_classes = spec.num_classes();
    if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::LabelOutOfRange { label, num_classes });
    }
    Ok(())
}

struct Forward {
    /// Hidden pre-activation and activation (MLP only).
    hidden: Option<(Tensor, Tensor)>,
    logits: Tensor,
}

fn forward(spec: &ModelSpec, params: &ModelParams, inputs: &Tensor) -> Result<Forward> {
    params.check(spec)?;
    let v = params.variables();
    match spec {
        ModelSpec::SoftmaxRegression { .. } => Ok(Forward {
            hidden: None,
            logits: matmul(inputs, &v[0].tensor)?.add_row(&v[1].tensor)?,
        }),
        ModelSpec::Mlp { .. } => {
            let pre = matmul(inputs, &v[0].tensor)?.add_row(&v[1].tensor)?;
            let act = pre.relu();
            let logits = matmul(&act, &v[2].tensor)?.add_row(&v[3].tensor)?;
            Ok(Forward {
                hidden: Some((pre, act)),
                logits,
            })
        }
    }
}

/// Summed cross-entropy (via log-sum-exp in f64) and correct-prediction count.
fn loss_sum_and_correct(logits: &Tensor, labels: &[usize]) -> Result<(f64, usize)> {
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    let mut loss = 0.0f64;
    let mut correct = 0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        // Lowest index wins ties.
        let (argmax, max) = row
            .iter()
            .enumerate()
            .fold((0, f32::NEG_INFINITY), |best, (j, &x)| {
                if x > best.1 {
                    (j, x)
                } else {
                    best
                }
            });
        let lse = f64::from(max)
            + row
                .iter()
                .map(|&x| (f64::from(x) - f64::from(max)).exp())
                .sum::<f64>()
                .ln();
        loss += lse - f64::from(row[label]);
        if argmax == label {
            correct += 1;
        }
    }
    Ok((loss, correct))
}

pub fn forward_loss(spec: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<Evaluation> {
    check_batch(spec, &batch.inputs, &batch.labels)?;
    let fwd = forward(spec, params, &batch.inputs)?;
    let (loss, correct) = loss_sum_and_correct(&fwd.logits, &batch.labels)?;
    let n = batch.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

/// Loss/accuracy of the batch together with the gradient of the mean loss.
pub fn loss_and_grad(
    spec: &ModelSpec,
    params: &ModelParams,
    batch: &Batch,
) -> Result<(Evaluation, ModelParams)> {
    check_batch(spec, &batch.inputs, &batch.labels)?;
    let fwd = forward(spec, params, &batch.inputs)?;
    let (loss, correct) = loss_sum_and_correct(&fwd.logits, &batch.labels)?;
    let n = batch.len();
    let classes = spec.num_classes();

    // dL/dlogits = (softmax - one_hot) / n
    let mut dlogits = softmax_rows(&fwd.logits)?;
    let inv_n = 1.0 / n as f64;
    for (i, &label) in batch.labels.iter().enumerate() {
        let row = &mut dlogits.data_mut()[i * classes..(i + 1) * classes];
        for (j, p) in row.iter_mut().enumerate() {
            let y = if j == label { 1.0 } else { 0.0 };
            *p = ((f64::from(*p) - y) * inv_n) as f32;
        }
    }

    let grads = match &fwd.hidden {
        None => vec![
            matmul(&batch.inputs.transpose()?, &dlogits)?,
            dlogits.column_sums()?,
        ],
        Some((pre, act)) => {
            let w2 = &params.variables()[2].tensor;
            let d_w2 = matmul(&act.transpose()?, &dlogits)?;
            let d_b2 = dlogits.column_sums()?;
            let d_act = matmul(&dlogits, &w2.transpose()?)?;
            let d_pre = pre.relu_grad_mask(&d_act)?;
            let d_w1 = matmul(&batch.inputs.transpose()?, &d_pre)?;
            let d_b1 = d_pre.column_sums()?;
            vec![d_w1, d_b1, d_w2, d_b2]
        }
    };
    let vars = params
        .variables()
        .iter()
        .zip(grads)
        .map(|(v, tensor)| Variable {
            name: v.name.clone(),
            tensor,
        })
        .collect();
    let eval = Evaluation {
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
    };
    Ok((eval, ModelParams { vars }))
}

pub fn backward(spec: &ModelSpec, params: &ModelParams, batch: &Batch) -> Result<ModelParams> {
    loss_and_grad(spec, params, batch).map(|(_, g)| g)
}

/// `w - lr * g`, per coordinate.
pub fn sgd_step(params: &ModelParams, grads: &ModelParams, lr: f32) -> Result<ModelParams> {
    params.check_compatible(grads)?;
    let vars = params
        .variables()
        .iter()
        .zip(grads.variables())
        .map(|(w, g)| {
            let data = w
                .tensor
                .data()
                .iter()
                .zip(g.tensor.data())
                .map(|(&w, &g)| w - lr * g)
                .collect();
            Ok(Variable {
                name: w.name.clone(),
                tensor: Tensor::from_vec(w.tensor.shape().to_vec(), data)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ModelParams { vars })
}

const EVAL_CHUNK: usize = 1024;

/// Mean loss and accuracy over a whole dataset. Pure.
pub fn evaluate(spec: &ModelSpec, params: &ModelParams, dataset: &Dataset) -> Result<Evaluation> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = dataset.batch(chunk)?;
        check_batch(spec, &batch.inputs, &batch.labels)?;
        let fwd = forward(spec, params, &batch.inputs)?;
        let (l, c) = loss_sum_and_correct(&fwd.logits, &batch.labels)?;
        loss += l;
        correct += c;
    }
    Ok(Evaluation {
        loss: loss / n as f64,
        accuracy: correct as f64 / n as f64,
    })
}
