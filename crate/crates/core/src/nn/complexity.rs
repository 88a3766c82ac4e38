use serde::{Deserialize, Serialize};

use super::spec::{walk, Layer, ModelSpec, Shape};

/// Deployment cost of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ComplexityReport {
    /// Multiplications per sample. Binarized FC layers need only additions
    /// and contribute nothing; biases and activations are not counted.
    pub mul_count: u64,
    /// Float parameters plus binary weights at 1/32 each (rounded up).
    pub param_count_equiv: u64,
}

impl ComplexityReport {
    /// `muls=<n> params_equiv=<n>`.
    pub fn summary_line(&self) -> String {
        format!("muls={} params_equiv={}", self.mul_count, self.param_count_equiv)
    }

    /// Rounded to the nearest thousand, as printed in complexity tables.
    pub fn in_thousands(&self) -> (u64, u64) {
        ((self.mul_count + 500) / 1000, (self.param_count_equiv + 500) / 1000)
    }
}

pub fn count_complexity(spec: &ModelSpec) -> ComplexityReport {
    let mut muls = 0u64;
    let mut float_params = 0u64;
    let mut binary_weights = 0u64;
    let visit = &mut |layer: &Layer, input: Shape| match layer {
        Layer::Conv(c) => {
            if let Shape::Map { h, w, .. } = input {
                let taps = (c.kh * c.kw * c.in_channels * c.out_channels) as u64;
                muls += (h * w) as u64 * taps;
                float_params += taps + c.out_channels as u64;
            }
        }
        Layer::Fc(f) => {
            let weights = (f.inputs * f.outputs) as u64;
            if f.binarized {
                binary_weights += weights;
            } else {
                muls += weights;
                float_params += weights;
            }
            float_params += f.outputs as u64;
        }
        _ => {}
    };
    // An invalid spec still yields the cost of its well-formed prefix.
    let _ = walk(&spec.layers, spec.input_shape(), visit);
    ComplexityReport { mul_count: muls, param_count_equiv: float_params + binary_weights.div_ceil(32) }
}
