//! Transmission encoding of model variables with exact bit accounting.
//!
//! Two schemes: raw `f32` passthrough, and uniform min/max quantization to
//! `quant_bits`-bit codes. A variable is quantized only when it has strictly
//! more than `min_elements_threshold` elements.
//!
//! Accounting: raw costs `32·n` bits; quantized costs a 64-bit header
//! (min and max as two `f32`) plus `quant_bits·n`. Codes are held unpacked in
//! memory; `bit_count` is what a packed wire format would carry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelParams, ModelSpec, Variable};
use crate::tensor::Tensor;

pub const RAW_BITS_PER_ELEMENT: u64 = 32;
pub const QUANT_HEADER_BITS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Identity,
    UniformQuant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Broadcast,
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecPolicy {
    pub scheme: Scheme,
    #[serde(default = "default_bits")]
    pub quant_bits: u32,
    #[serde(default = "default_threshold")]
    pub min_elements_threshold: usize,
    #[serde(default = "yes")]
    pub apply_to_broadcast: bool,
    #[serde(default = "yes")]
    pub apply_to_aggregate: bool,
}

fn default_bits() -> u32 {
    8
}

fn default_threshold() -> usize {
    10_000
}

fn yes() -> bool {
    true
}

impl Default for CodecPolicy {
    fn default() -> Self {
        CodecPolicy::identity()
    }
}

impl CodecPolicy {
    pub fn identity() -> Self {
        CodecPolicy {
            scheme: Scheme::Identity,
            quant_bits: default_bits(),
            min_elements_threshold: default_threshold(),
            apply_to_broadcast: true,
            apply_to_aggregate: true,
        }
    }

    /// Quantization in both directions with the default 10000-element threshold.
    pub fn uniform(quant_bits: u32) -> Self {
        CodecPolicy {
            scheme: Scheme::UniformQuant,
            quant_bits,
            ..CodecPolicy::identity()
        }
    }

    pub fn with_threshold(mut self, min_elements_threshold: usize) -> Self {
        self.min_elements_threshold = min_elements_threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.quant_bits) {
            return Err(Error::InvalidPolicy(format!(
                "quant_bits must be in [1, 16], got {}",
                self.quant_bits
            )));
        }
        Ok(())
    }

    /// The policy actually applied in one direction; identity when the
    /// direction is switched off.
    pub fn for_direction(&self, direction: Direction) -> CodecPolicy {
        let applies = match direction {
            Direction::Broadcast => self.apply_to_broadcast,
            Direction::Aggregate => self.apply_to_aggregate,
        };
        if applies {
            *self
        } else {
            CodecPolicy {
                scheme: Scheme::Identity,
                ..*self
            }
        }
    }

    fn quantizes(&self, element_count: usize) -> bool {
        self.scheme == Scheme::UniformQuant && element_count > self.min_elements_threshold
    }

    /// Encoded size of a variable with `element_count` elements.
    pub fn variable_bits(&self, element_count: usize) -> u64 {
        let n = element_count as u64;
        if self.quantizes(element_count) {
            QUANT_HEADER_BITS + u64::from(self.quant_bits) * n
        } else {
            RAW_BITS_PER_ELEMENT * n
        }
    }

    /// Encoded size of a whole model, from shapes alone.
    pub fn model_bits(&self, spec: &ModelSpec) -> u64 {
        spec.variable_shapes()
            .iter()
            .map(|(_, s)| self.variable_bits(s.iter().product()))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Raw(Vec<f32>),
    Quantized {
        min: f32,
        max: f32,
        bits: u32,
        codes: Vec<u16>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodedScheme {
    Raw,
    Quantized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedVariable {
    pub name: String,
    pub shape: Vec<usize>,
    pub element_count: usize,
    pub payload: Payload,
    pub bit_count: u64,
}

impl EncodedVariable {
    pub fn scheme(&self) -> EncodedScheme {
        match self.payload {
            Payload::Raw(_) => EncodedScheme::Raw,
            Payload::Quantized { .. } => EncodedScheme::Quantized,
        }
    }

    /// Bit count recomputed from the payload alone.
    pub fn expected_bits(&self) -> u64 {
        let n = self.element_count as u64;
        match &self.payload {
            Payload::Raw(_) => RAW_BITS_PER_ELEMENT * n,
            Payload::Quantized { bits, .. } => QUANT_HEADER_BITS + u64::from(*bits) * n,
        }
    }
}

fn levels(bits: u32) -> u32 {
    (1u32 << bits) - 1
}

/// Quantization step for a header; zero for a constant tensor.
pub fn quant_step(min: f32, max: f32, bits: u32) -> f64 {
    (f64::from(max) - f64::from(min)) / f64::from(levels(bits))
}

pub fn encode_variable(
    name: &str,
    tensor: &Tensor,
    policy: &CodecPolicy,
) -> Result<EncodedVariable> {
    policy.validate()?;
    if !tensor.is_finite() {
        return Err(Error::NonFinite("encode_variable"));
    }
    let n = tensor.len();
    let payload = if policy.quantizes(n) {
        let data = tensor.data();
        let (min, max) = data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        let bits = policy.quant_bits;
        let codes = if max == min {
            vec![0; n]
        } else {
            let step = quant_step(min, max, bits);
            let top = f64::from(levels(bits));
            data.iter()
                // f64::round rounds half away from zero.
                .map(|&x| {
                    ((f64::from(x) - f64::from(min)) / step)
                        .round()
                        .clamp(0.0, top) as u16
                })
                .collect()
        };
        Payload::Quantized {
            min,
            max,
            bits,
            codes,
        }
    } else {
        Payload::Raw(tensor.data().to_vec())
    };
    let mut encoded = EncodedVariable {
        name: name.to_string(),
        shape: tensor.shape().to_vec(),
        element_count: n,
        payload,
        bit_count: 0,
    };
    encoded.bit_count = encoded.expected_bits();
    Ok(encoded)
}

pub fn decode_variable(encoded: &EncodedVariable) -> Result<Tensor> {
    let data = match &encoded.payload {
        Payload::Raw(values) => values.clone(),
        Payload::Quantized {
            min,
            max,
            bits,
            codes,
        } => {
            if !(1..=16).contains(bits) {
                return Err(Error::InvalidPolicy(format!(
                    "quantized payload with {bits} bits"
                )));
            }
            let top = levels(*bits);
            if let Some(&code) = codes.iter().find(|&&c| u32::from(c) > top) {
                return Err(Error::CorruptCode {
                    code: u32::from(code),
                    bits: *bits,
                });
            }
            let step = quant_step(*min, *max, *bits);
            let base = f64::from(*min);
            codes
                .iter()
                .map(|&c| (base + f64::from(c) * step) as f32)
                .collect()
        }
    };
    Tensor::from_vec(encoded.shape.clone(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedModel {
    pub variables: Vec<EncodedVariable>,
    pub total_bits: u64,
}

/// Encodes every variable independently, preserving order.
pub fn encode_model(params: &ModelParams, policy: &CodecPolicy) -> Result<EncodedModel> {
    let variables = params
        .variables()
        .iter()
        .map(|v| encode_variable(&v.name, &v.tensor, policy))
        .collect::<Result<Vec<_>>>()?;
    let total_bits = variables.iter().map(|v| v.bit_count).sum();
    Ok(EncodedModel {
        variables,
        total_bits,
    })
}

pub fn decode_model(encoded: &EncodedModel) -> Result<ModelParams> {
    let vars = encoded
        .variables
        .iter()
        .map(|v| {
            Ok(Variable {
                name: v.name.clone(),
                tensor: decode_variable(v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ModelParams::new(vars)
}

/// Encoded size over raw size for a model, from shapes alone.
pub fn compression_ratio(spec: &ModelSpec, policy: &CodecPolicy) -> f64 {
    let raw = RAW_BITS_PER_ELEMENT * spec.parameter_count() as u64;
    policy.model_bits(spec) as f64 / raw as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn t(values: &[f32]) -> Tensor {
        Tensor::from_vec(vec![values.len()], values.to_vec()).unwrap()
    }

    fn quantize_all(bits: u32) -> CodecPolicy {
        CodecPolicy::uniform(bits).with_threshold(0)
    }

    fn codes(e: &EncodedVariable) -> &[u16] {
        match &e.payload {
            Payload::Quantized { codes, .. } => codes,
            Payload::Raw(_) => panic!("expected quantized payload"),
        }
    }

    fn mlp_784_200_10() -> ModelSpec {
        ModelSpec::Mlp {
            input_dim: 784,
            hidden_units: 200,
            num_classes: 10,
        }
    }

    #[test]
    fn small_variable_stays_raw() {
        let e = encode_variable(
            "b",
            &Tensor::zeros(&[300]).unwrap(),
            &CodecPolicy::uniform(8),
        )
        .unwrap();
        assert_eq!(e.scheme(), EncodedScheme::Raw);
        assert_eq!(e.bit_count, 9600);
    }

    #[test]
    fn threshold_is_strict() {
        let p = CodecPolicy::uniform(8);
        let at = encode_variable("w", &Tensor::zeros(&[10_000]).unwrap(), &p).unwrap();
        let above = encode_variable("w", &Tensor::zeros(&[10_001]).unwrap(), &p).unwrap();
        assert_eq!(at.scheme(), EncodedScheme::Raw);
        assert_eq!(above.scheme(), EncodedScheme::Quantized);
        assert_eq!(above.bit_count, 64 + 8 * 10_001);
    }

    #[test]
    fn lattice_is_exact() {
        let values: Vec<f32> = (0..256).map(|i| i as f32).collect();
        let e = encode_variable("w", &t(&values), &quantize_all(8)).unwrap();
        assert_eq!(codes(&e), (0..256).map(|i| i as u16).collect::<Vec<_>>());
        assert_eq!(decode_variable(&e).unwrap().data(), &values[..]);
    }

    #[test]
    fn hand_computed_code() {
        let e = encode_variable("w", &t(&[0.0, 0.1, 0.25]), &quantize_all(8)).unwrap();
        match &e.payload {
            Payload::Quantized {
                min, max, codes, ..
            } => {
                assert_eq!((*min, *max), (0.0, 0.25));
                assert_eq!(codes, &[0, 102, 255]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn ties_round_away_from_zero() {
        // min 0, max 2, 1 bit -> step 2; 1.0 sits exactly halfway.
        let e = encode_variable("w", &t(&[0.0, 1.0, 2.0]), &quantize_all(1)).unwrap();
        assert_eq!(codes(&e), &[0, 1, 1]);
    }

    #[test]
    fn raw_round_trip_is_bitwise() {
        let values = [1.5f32, -0.0, f32::MIN_POSITIVE, 3.1e7];
        let e = encode_variable("w", &t(&values), &CodecPolicy::identity()).unwrap();
        let back = decode_variable(&e).unwrap();
        for (a, b) in back.data().iter().zip(values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn constant_tensor_decodes_exactly() {
        let e = encode_variable(
            "w",
            &Tensor::filled(&[50], -0.37).unwrap(),
            &quantize_all(8),
        )
        .unwrap();
        assert!(codes(&e).iter().all(|&c| c == 0));
        assert!(decode_variable(&e)
            .unwrap()
            .data()
            .iter()
            .all(|&x| x == -0.37));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            encode_variable("w", &t(&[1.0, f32::INFINITY]), &quantize_all(8)),
            Err(Error::NonFinite(_))
        ));
        assert!(encode_variable("w", &t(&[f32::NAN]), &CodecPolicy::identity()).is_err());
    }

    #[test]
    fn corrupt_code_rejected() {
        let mut e = encode_variable("w", &t(&[0.0, 1.0]), &quantize_all(4)).unwrap();
        if let Payload::Quantized { codes, .. } = &mut e.payload {
            codes[1] = 16;
        }
        assert!(matches!(
            decode_variable(&e),
            Err(Error::CorruptCode { code: 16, bits: 4 })
        ));
    }

    #[test]
    fn invalid_bits_rejected() {
        assert!(encode_variable("w", &t(&[0.0]), &CodecPolicy::uniform(0)).is_err());
        assert!(encode_variable("w", &t(&[0.0]), &CodecPolicy::uniform(17)).is_err());
    }

    #[test]
    fn mlp_model_bits() {
        let spec = mlp_784_200_10();
        let params = init_params(&spec, &RngStream::new(1)).unwrap();
        let enc = encode_model(&params, &CodecPolicy::uniform(8)).unwrap();
        let expected = (64 + 8 * 156_800) + 32 * (200 + 2000 + 10);
        assert_eq!(enc.total_bits, expected);
        assert_eq!(CodecPolicy::uniform(8).model_bits(&spec), expected);
        let schemes: Vec<_> = enc.variables.iter().map(EncodedVariable::scheme).collect();
        assert_eq!(
            schemes,
            vec![
                EncodedScheme::Quantized,
                EncodedScheme::Raw,
                EncodedScheme::Raw,
                EncodedScheme::Raw
            ]
        );

        let raw = encode_model(&params, &CodecPolicy::identity()).unwrap();
        assert_eq!(raw.total_bits, 32 * params.element_count() as u64);
        assert_eq!(decode_model(&raw).unwrap(), params);
    }

    #[test]
    fn ratios() {
        let spec = mlp_784_200_10();
        assert_eq!(compression_ratio(&spec, &CodecPolicy::identity()), 1.0);
        let r = compression_ratio(&spec, &CodecPolicy::uniform(8));
        assert!((r - 1_325_184.0 / 5_088_320.0).abs() < 1e-15);
        assert!((r - 0.2604).abs() < 1e-4);

        let single = ModelSpec::SoftmaxRegression {
            input_dim: 10_000,
            num_classes: 2,
        };
        let r = compression_ratio(&single, &CodecPolicy::uniform(8));
        // 20000-element W quantized, 2-element bias raw.
        assert!((r - (64.0 + 160_000.0 + 64.0) / (32.0 * 20_002.0)).abs() < 1e-15);
        assert!((r - 0.25).abs() < 1e-3);
    }

    #[test]
    fn direction_switches() {
        let p = CodecPolicy {
            apply_to_broadcast: false,
            ..CodecPolicy::uniform(8)
        };
        assert_eq!(
            p.for_direction(Direction::Broadcast).scheme,
            Scheme::Identity
        );
        assert_eq!(
            p.for_direction(Direction::Aggregate).scheme,
            Scheme::UniformQuant
        );
    }

    #[test]
    fn model_order_preserved() {
        let spec = ModelSpec::Mlp {
            input_dim: 200,
            hidden_units: 60,
            num_classes: 3,
        };
        let params = init_params(&spec, &RngStream::new(5)).unwrap();
        let enc = encode_model(&params, &CodecPolicy::uniform(8)).unwrap();
        let names: Vec<&str> = enc.variables.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["W1", "b1", "W2", "b2"]);
        let dec = decode_model(&enc).unwrap();
        dec.check(&spec).unwrap();
    }

    fn tensor_strategy() -> impl Strategy<Value = Vec<f32>> {
        (1usize..300, -100.0f32..100.0, 0.0f32..50.0).prop_flat_map(|(n, center, spread)| {
            prop::collection::vec(center - spread..=center + spread, n)
        })
    }

    proptest! {
        #[test]
        fn round_trip_error_bound(values in tensor_strategy(), bits in prop::sample::select(vec![1u32, 4, 8, 12, 16])) {
            let x = t(&values);
            let e = encode_variable("w", &x, &quantize_all(bits)).unwrap();
            let y = decode_variable(&e).unwrap();
            let (min, max) = match &e.payload {
                Payload::Quantized { min, max, .. } => (*min, *max),
                _ => unreachable!(),
            };
            let half_step = quant_step(min, max, bits) / 2.0;
            for (a, b) in x.data().iter().zip(y.data()) {
                let ulp = f64::from(f32::EPSILON) * f64::from(a.abs().max(b.abs()));
                prop_assert!(f64::from((a - b).abs()) <= half_step + ulp);
            }
        }

        #[test]
        fn quantization_is_idempotent(values in tensor_strategy(), bits in prop::sample::select(vec![4u32, 8, 16])) {
            let policy = quantize_all(bits);
            let first = encode_variable("w", &t(&values), &policy).unwrap();
            let again = encode_variable("w", &decode_variable(&first).unwrap(), &policy).unwrap();
            prop_assert_eq!(codes(&first), codes(&again));
        }

        #[test]
        fn stored_bits_match_formula(values in tensor_strategy(), threshold in 0usize..400, bits in 1u32..=16) {
            let policy = CodecPolicy::uniform(bits).with_threshold(threshold);
            let e = encode_variable("w", &t(&values), &policy).unwrap();
            prop_assert_eq!(e.bit_count, e.expected_bits());
            prop_assert_eq!(e.bit_count, policy.variable_bits(values.len()));
        }

        #[test]
        fn fewer_bits_smaller_and_coarser(values in prop::collection::vec(-1.0f32..1.0, 20..200)) {
            let x = t(&values);
            let e8 = encode_variable("w", &x, &quantize_all(8)).unwrap();
            let e4 = encode_variable("w", &x, &quantize_all(4)).unwrap();
            prop_assert!(e4.bit_count < e8.bit_count);
            let (min, max) = (x.data().iter().copied().fold(f32::INFINITY, f32::min), x.data().iter().copied().fold(f32::NEG_INFINITY, f32::max));
            prop_assert!(quant_step(min, max, 4) >= quant_step(min, max, 8));
        }
    }
}
