//! Declarative network descriptions.
//!
//! A [`ModelSpec`] fully determines a network's topology and parameter layout;
//! it is stored inline in checkpoints so a saved model can be rebuilt without
//! the experiment config.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slope of every leaky ReLU in the canonical networks.
pub const LEAKY_SLOPE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu { slope: f64 },
    Sigmoid,
}

impl Activation {
    pub const fn leaky() -> Self {
        Activation::LeakyRelu { slope: LEAKY_SLOPE }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub act: Activation,
}

impl ConvSpec {
    pub const fn new(in_channels: usize, out_channels: usize, kh: usize, kw: usize, act: Activation) -> Self {
        ConvSpec { in_channels, out_channels, kh, kw, act }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FcSpec {
    pub inputs: usize,
    pub outputs: usize,
    /// Sign weights with a per-layer scale; only fully connected layers can
    /// be binarized.
    pub binarized: bool,
    pub act: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum Layer {
    Conv(ConvSpec),
    Fc(FcSpec),
    /// `[C, H, W] -> [C*H*W]`.
    Flatten,
    /// `[n] -> [channels, height, width]`.
    Reshape { channels: usize, height: usize, width: usize },
    /// Parallel conv paths, concatenated on channels, then a fusing conv.
    MultiPath { branches: Vec<Vec<Layer>>, fuse: ConvSpec },
    /// `act(x + body(x))`.
    Residual { body: Vec<Layer>, act: Activation },
    Activation(Activation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Encoder,
    Decoder,
}

/// Size of the truncated angular-delay CSI matrix fed to the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsiDims {
    /// Retained delay rows.
    pub nc: usize,
    /// Base-station antennas.
    pub nt: usize,
}

impl CsiDims {
    pub const CANONICAL: CsiDims = CsiDims { nc: 32, nt: 32 };

    /// Real scalars per sample, `2 * nc * nt`.
    pub fn real_len(&self) -> usize {
        2 * self.nc * self.nt
    }

    /// Codeword size for compression ratio `1/inverse_ratio`.
    pub fn codeword_for_ratio(&self, inverse_ratio: usize) -> usize {
        self.real_len() / inverse_ratio
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub role: Role,
    pub codeword_size: usize,
    pub dims: CsiDims,
    pub layers: Vec<Layer>,
}

/// Intermediate shape while walking a layer list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Shape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    fn describe(&self) -> Vec<usize> {
        match *self {
            Shape::Map { c, h, w } => vec![c, h, w],
            Shape::Flat(n) => vec![n],
        }
    }
}

fn check_codeword(dims: CsiDims, m: usize) -> Result<()> {
    if dims.nc == 0 || dims.nt == 0 {
        return Err(Error::config("dims", "Nc and Nt must be positive"));
    }
    if m == 0 || m >= dims.real_len() {
        return Err(Error::config(
            "codeword_size",
            format!("M = {m} must satisfy 0 < M < 2*Nc*Nt = {}", dims.real_len()),
        ));
    }
    Ok(())
}

fn encoder_layers(dims: CsiDims, m: usize, binarized: bool) -> Vec<Layer> {
    let lr = Activation::leaky();
    vec![
        Layer::MultiPath {
            branches: vec![
                vec![
                    Layer::Conv(ConvSpec::new(2, 2, 3, 3, lr)),
                    Layer::Conv(ConvSpec::new(2, 2, 1, 9, lr)),
                    Layer::Conv(ConvSpec::new(2, 2, 9, 1, lr)),
                ],
                vec![Layer::Conv(ConvSpec::new(2, 2, 3, 3, lr))],
            ],
            fuse: ConvSpec::new(4, 2, 1, 1, Activation::Identity),
        },
        Layer::Flatten,
        Layer::Fc(FcSpec { inputs: dims.real_len(), outputs: m, binarized, act: Activation::Identity }),
    ]
}

fn residual_block() -> Layer {
    let lr = Activation::leaky();
    Layer::Residual {
        body: vec![Layer::MultiPath {
            branches: vec![
                vec![
                    Layer::Conv(ConvSpec::new(2, 8, 3, 3, lr)),
                    Layer::Conv(ConvSpec::new(8, 8, 1, 9, lr)),
                    Layer::Conv(ConvSpec::new(8, 2, 9, 1, lr)),
                ],
                vec![Layer::Conv(ConvSpec::new(2, 8, 1, 5, lr)), Layer::Conv(ConvSpec::new(8, 2, 5, 1, lr))],
            ],
            fuse: ConvSpec::new(4, 2, 1, 1, Activation::Identity),
        }],
        act: lr,
    }
}

impl ModelSpec {
    /// Multi-resolution conv front end followed by a float FC to `m`.
    pub fn teacher_encoder(dims: CsiDims, m: usize) -> Result<Self> {
        check_codeword(dims, m)?;
        Ok(ModelSpec { role: Role::Encoder, codeword_size: m, dims, layers: encoder_layers(dims, m, false) })
    }

    /// Same topology as [`ModelSpec::teacher_encoder`] with the FC binarized.
    pub fn student_encoder(dims: CsiDims, m: usize) -> Result<Self> {
        check_codeword(dims, m)?;
        Ok(ModelSpec { role: Role::Encoder, codeword_size: m, dims, layers: encoder_layers(dims, m, true) })
    }

    /// FC expansion, a 5x5 head conv, two multi-resolution residual blocks and
    /// a sigmoid output. Shared by teacher and student.
    pub fn decoder(dims: CsiDims, m: usize) -> Result<Self> {
        check_codeword(dims, m)?;
        let layers = vec![
            Layer::Fc(FcSpec { inputs: m, outputs: dims.real_len(), binarized: false, act: Activation::Identity }),
            Layer::Reshape { channels: 2, height: dims.nc, width: dims.nt },
            Layer::Conv(ConvSpec::new(2, 2, 5, 5, Activation::leaky())),
            residual_block(),
            residual_block(),
            Layer::Activation(Activation::Sigmoid),
        ];
        Ok(ModelSpec { role: Role::Decoder, codeword_size: m, dims, layers })
    }

    /// Expected per-sample input shape.
    pub(crate) fn input_shape(&self) -> Shape {
        match self.role {
            Role::Encoder => Shape::Map { c: 2, h: self.dims.nc, w: self.dims.nt },
            Role::Decoder => Shape::Flat(self.codeword_size),
        }
    }

    pub(crate) fn output_shape(&self) -> Shape {
        match self.role {
            Role::Encoder => Shape::Flat(self.codeword_size),
            Role::Decoder => Shape::Map { c: 2, h: self.dims.nc, w: self.dims.nt },
        }
    }

    /// Checks that consecutive layers agree on shapes and that the network
    /// maps its role's input shape onto its output shape.
    pub fn validate(&self) -> Result<()> {
        let out = walk(&self.layers, self.input_shape(), &mut |_, _| {})?;
        if !self.layers.is_empty() && out != self.output_shape() {
            return Err(Error::dim("model output", &out.describe(), &self.output_shape().describe()));
        }
        Ok(())
    }

    pub fn is_binarized(&self) -> bool {
        let mut any = false;
        let _ = walk(&self.layers, self.input_shape(), &mut |l, _| {
            if let Layer::Fc(f) = l {
                any |= f.binarized;
            }
        });
        any
    }
}

/// Walks `layers` from `input`, calling `visit(layer, input_shape)` on every
/// leaf layer (conv, fc) in parameter order. Returns the output shape.
pub(crate) fn walk(layers: &[Layer], input: Shape, visit: &mut impl FnMut(&Layer, Shape)) -> Result<Shape> {
    let mut shape = input;
    for layer in layers {
        shape = match layer {
            Layer::Conv(c) => {
                let Shape::Map { c: ch, h, w } = shape else {
                    return Err(Error::dim("conv input", &shape.describe(), &[c.in_channels, 0, 0]));
                };
                if ch != c.in_channels {
                    return Err(Error::dim("conv channels", &shape.describe(), &[c.in_channels, h, w]));
                }
                if c.kh % 2 == 0 || c.kw % 2 == 0 {
                    return Err(Error::config("kernel", format!("{}x{} kernel must be odd", c.kh, c.kw)));
                }
                visit(layer, shape);
                Shape::Map { c: c.out_channels, h, w }
            }
            Layer::Fc(f) => {
                let n = match shape {
                    Shape::Flat(n) => n,
                    Shape::Map { .. } => return Err(Error::dim("fc input", &shape.describe(), &[f.inputs])),
                };
                if n != f.inputs {
                    return Err(Error::dim("fc input", &[n], &[f.inputs]));
                }
                visit(layer, shape);
                Shape::Flat(f.outputs)
            }
            Layer::Flatten => match shape {
                Shape::Map { c, h, w } => Shape::Flat(c * h * w),
                flat => flat,
            },
            Layer::Reshape { channels, height, width } => {
                let n = match shape {
                    Shape::Flat(n) => n,
                    Shape::Map { c, h, w } => c * h * w,
                };
                if n != channels * height * width {
                    return Err(Error::dim("reshape", &shape.describe(), &[*channels, *height, *width]));
                }
                Shape::Map { c: *channels, h: *height, w: *width }
            }
            Layer::MultiPath { branches, fuse } => {
                let mut channels = 0;
                let mut spatial = None;
                for b in branches {
                    match walk(b, shape, visit)? {
                        Shape::Map { c, h, w } => {
                            channels += c;
                            spatial = Some((h, w));
                        }
                        flat => return Err(Error::dim("multipath branch", &flat.describe(), &[])),
                    }
                }
                let (h, w) = spatial.ok_or_else(|| Error::config("branches", "multipath needs a branch"))?;
                walk(&[Layer::Conv(*fuse)], Shape::Map { c: channels, h, w }, visit)?
            }
            Layer::Residual { body, .. } => {
                let out = walk(body, shape, visit)?;
                if out != shape {
                    return Err(Error::dim("residual", &shape.describe(), &out.describe()));
                }
                out
            }
            Layer::Activation(_) => shape,
        };
    }
    Ok(shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_specs_validate() {
        for inv in [4, 8, 16, 32] {
            let m = CsiDims::CANONICAL.codeword_for_ratio(inv);
            ModelSpec::teacher_encoder(CsiDims::CANONICAL, m).unwrap().validate().unwrap();
            ModelSpec::student_encoder(CsiDims::CANONICAL, m).unwrap().validate().unwrap();
            ModelSpec::decoder(CsiDims::CANONICAL, m).unwrap().validate().unwrap();
        }
        assert_eq!(CsiDims::CANONICAL.codeword_for_ratio(4), 512);
    }

    #[test]
    fn rejects_non_compressing_codewords() {
        for m in [0, 2048, 4096] {
            let err = ModelSpec::teacher_encoder(CsiDims::CANONICAL, m).unwrap_err();
            assert!(matches!(err, Error::Config { ref key, .. } if key == "codeword_size"));
        }
    }

    #[test]
    fn only_student_is_binarized() {
        assert!(ModelSpec::student_encoder(CsiDims::CANONICAL, 64).unwrap().is_binarized());
        assert!(!ModelSpec::teacher_encoder(CsiDims::CANONICAL, 64).unwrap().is_binarized());
        assert!(!ModelSpec::decoder(CsiDims::CANONICAL, 64).unwrap().is_binarized());
    }

    #[test]
    fn detects_channel_mismatch() {
        let mut spec = ModelSpec::teacher_encoder(CsiDims::CANONICAL, 64).unwrap();
        spec.layers.insert(0, Layer::Conv(ConvSpec::new(3, 2, 3, 3, Activation::Identity)));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_serializes_round_trip() {
        let spec = ModelSpec::decoder(CsiDims { nc: 8, nt: 4 }, 16).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), spec);
    }
}
