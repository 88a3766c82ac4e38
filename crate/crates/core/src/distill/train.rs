//! Plain, vanilla-KD and codeword-mimic training loops.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::loss::{cm_loss, vanilla_kd_loss};
use super::schedule::{alpha_schedule, lr_schedule, LrPlan, LrSettings, SchedulerKind};
use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{codeword_mse_flat, network_outputs, tensor_outputs};
use crate::nn::{CsiDims, ModelSpec, Network, Role};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Plain,
    VanillaKd,
    CodewordMimic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub pipeline: Pipeline,
    /// Total epochs `T`.
    pub epochs: usize,
    /// Mimic-stage epochs `T_cm`; ignored outside codeword mimic.
    pub mimic_epochs: usize,
    pub batch_size: usize,
    pub alpha0: f64,
    pub alpha_scheduler: SchedulerKind,
    /// Fixed KD weight; `None` balances both terms on the first batch.
    pub kd_beta0: Option<f64>,
    pub lr: LrSettings,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            pipeline: Pipeline::CodewordMimic,
            epochs: 100,
            mimic_epochs: 20,
            batch_size: 200,
            alpha0: 1e-4,
            alpha_scheduler: SchedulerKind::Cosine,
            kd_beta0: None,
            lr: LrSettings::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        if self.mimic_epochs > self.epochs {
            return Err(Error::config("T_cm", format!("{} mimic epochs exceed T = {}", self.mimic_epochs, self.epochs)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.alpha0) {
            return Err(Error::config("alpha0", "must lie in [0, 1]"));
        }
        if let Some(b) = self.kd_beta0 {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::config("kd_beta0", "must lie in [0, 1]"));
            }
        }
        self.lr.validate()
    }

    /// Learning-rate curve implied by the pipeline. A mimic stage of zero
    /// epochs is the benchmark itself.
    pub fn lr_plan(&self) -> LrPlan {
        match self.pipeline {
            Pipeline::CodewordMimic if self.mimic_epochs > 0 => {
                LrPlan::MimicExplore { total: self.epochs, mimic_epochs: self.mimic_epochs, settings: self.lr }
            }
            _ => LrPlan::Benchmark { total: self.epochs, settings: self.lr },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean reconstruction MSE over the epoch's batches.
    pub loss_gt: f64,
    /// Mean distillation MSE, when a distillation term was active.
    pub loss_distill: Option<f64>,
    /// `alpha(t)` for codeword mimic, `beta(t)` for KD, 0 otherwise.
    pub weight: f64,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub encoder: Network<f32>,
    pub decoder: Network<f32>,
    pub history: Vec<EpochRecord>,
    /// Test-set codeword MSE against the teacher after the mimic stage.
    pub mse_cm_mid: Option<f64>,
    /// Same, after the last epoch.
    pub mse_cm_end: Option<f64>,
    /// KD weight actually used at epoch 0.
    pub kd_beta0: Option<f64>,
}

/// Stream ids carved out of the run seed.
const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// Evaluation chunk; large enough to amortize graph setup.
pub const EVAL_CHUNK: usize = 200;

fn init_pair(plan: &TrainPlan, enc: ModelSpec, dec: ModelSpec) -> Result<(Network<f32>, Network<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(INIT_STREAM);
    let (se, sd) = (rng.next_u64(), rng.next_u64());
    Ok((Network::with_seed(enc, se)?, Network::with_seed(dec, sd)?))
}

fn dims_of(ds: &Dataset) -> CsiDims {
    CsiDims { nc: ds.dims.nc, nt: ds.dims.nt }
}

fn check_data(ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Usage("training needs a non-empty dataset".into()));
    }
    Ok(())
}

/// What the student is pulled toward besides the ground truth.
enum Guide<'a> {
    None,
    /// Teacher codewords, `m` per training sample.
    Codewords { v: &'a [f32], m: usize },
    /// Teacher reconstructions, one sample length per training sample.
    Outputs { h: &'a [f32] },
}

fn gather(rows: &[f32], width: usize, idx: &[usize], shape: Vec<usize>) -> Tensor<f32> {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&rows[i * width..(i + 1) * width]);
    }
    Tensor::new(shape, out).expect("gathered batch shape")
}

fn mse_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64
}

/// Shared epoch loop. `weight(t)` scales the guide term; `on_epoch(t)` runs
/// before epoch `t` and after the last one with `t == T`.
fn run_epochs(
    plan: &TrainPlan,
    lr_plan: &LrPlan,
    train: &Dataset,
    enc: &mut Network<f32>,
    dec: &mut Network<f32>,
    guide: Guide<'_>,
    weight: &dyn Fn(usize) -> Result<f64>,
    on_epoch: &mut dyn FnMut(usize, &Network<f32>) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut opt_e = Adam::new(plan.adam, enc.params());
    let mut opt_d = Adam::new(plan.adam, dec.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let sample_shape = [2, train.dims.nc, train.dims.nt];
    let mut history = Vec::with_capacity(plan.epochs);
    for t in 0..plan.epochs {
        on_epoch(t, enc)?;
        if lr_plan.stage_boundary() == Some(t) {
            opt_e.reset();
            opt_d.reset();
        }
        let (lr_e, lr_d) = lr_schedule(t, lr_plan)?;
        let w = weight(t)?;
        order.shuffle(&mut rng);
        let (mut sum_gt, mut sum_distill, mut batches) = (0.0, 0.0, 0usize);
        for idx in order.chunks(plan.batch_size) {
            let mut g = Graph::new();
            let pe = enc.bind(&mut g, false);
            let pd = dec.bind(&mut g, false);
            let x = g.constant(train.batch(idx));
            let v = enc.forward(&mut g, &pe, x)?;
            let y = dec.forward(&mut g, &pd, v)?;
            let loss = match guide {
                Guide::Codewords { v: codes, m } if w > 0.0 => {
                    let vt = g.constant(gather(codes, m, idx, vec![idx.len(), m]));
                    let l = cm_loss(&mut g, vt, v, x, y, w)?;
                    sum_distill += mse_f64(g.value(vt).data(), g.value(v).data());
                    l
                }
                Guide::Outputs { h } => {
                    let n = train.sample_len();
                    let mut shape = vec![idx.len()];
                    shape.extend_from_slice(&sample_shape);
                    let ht = g.constant(gather(h, n, idx, shape));
                    let l = vanilla_kd_loss(&mut g, ht, y, x, w)?;
                    sum_distill += mse_f64(g.value(ht).data(), g.value(y).data());
                    l
                }
                _ => g.mse(x, y)?,
            };
            sum_gt += mse_f64(g.value(x).data(), g.value(y).data());
            batches += 1;
            g.backward(loss)?;
            let ge: Vec<_> = pe.iter().map(|&p| g.take_grad(p)).collect();
            let gd: Vec<_> = pd.iter().map(|&p| g.take_grad(p)).collect();
            drop(g);
            opt_e.step(enc.params_mut(), &ge, lr_e);
            opt_d.step(dec.params_mut(), &gd, lr_d);
            enc.clip_latents();
            dec.clip_latents();
        }
        let distill_active = match guide {
            Guide::None => false,
            Guide::Codewords { .. } => w > 0.0,
            Guide::Outputs { .. } => true,
        };
        let rec = EpochRecord {
            epoch: t,
            loss_gt: sum_gt / batches as f64,
            loss_distill: distill_active.then(|| sum_distill / batches as f64),
            weight: w,
            lr_encoder: lr_e,
            lr_decoder: lr_d,
        };
        log::info!(
            "epoch {t}: loss_gt={:.6} weight={:.3e} lr=({:.3e}, {:.3e})",
            rec.loss_gt,
            rec.weight,
            rec.lr_encoder,
            rec.lr_decoder
        );
        history.push(rec);
    }
    on_epoch(plan.epochs, enc)?;
    Ok(history)
}

fn train_plain_pair(plan: &TrainPlan, train: &Dataset, enc: ModelSpec, dec: ModelSpec) -> Result<TrainedPair> {
    plan.validate()?;
    check_data(train)?;
    let (mut encoder, mut decoder) = init_pair(plan, enc, dec)?;
    let lr_plan = plan.lr_plan();
    let history = run_epochs(plan, &lr_plan, train, &mut encoder, &mut decoder, Guide::None, &|_| Ok(0.0), &mut |_, _| Ok(()))?;
    Ok(TrainedPair { encoder, decoder, history, mse_cm_mid: None, mse_cm_end: None, kd_beta0: None })
}

/// Full-precision CRNet trained on reconstruction only.
pub fn train_teacher(plan: &TrainPlan, train: &Dataset, codeword_size: usize) -> Result<TrainedPair> {
    if plan.pipeline != Pipeline::Plain {
        return Err(Error::Usage("the teacher is trained with the plain pipeline".into()));
    }
    let dims = dims_of(train);
    train_plain_pair(
        plan,
        train,
        ModelSpec::teacher_encoder(dims, codeword_size)?,
        ModelSpec::decoder(dims, codeword_size)?,
    )
}

/// BCRNet trained on reconstruction only, with the LR curve implied by
/// `plan` (the benchmark curve unless the plan describes a mimic stage).
pub fn train_student_plain(plan: &TrainPlan, train: &Dataset, codeword_size: usize) -> Result<TrainedPair> {
    let dims = dims_of(train);
    train_plain_pair(
        plan,
        train,
        ModelSpec::student_encoder(dims, codeword_size)?,
        ModelSpec::decoder(dims, codeword_size)?,
    )
}

fn check_teacher(teacher: &Network<f32>, role: Role, m: usize, train: &Dataset, what: &str) -> Result<()> {
    let spec = teacher.spec();
    if spec.role != role {
        return Err(Error::config("teacher", format!("{what} has role {:?}", spec.role)));
    }
    if spec.codeword_size != m {
        return Err(Error::config(
            "codeword_size",
            format!("teacher codeword size {} differs from student M = {m}", spec.codeword_size),
        ));
    }
    if spec.dims != dims_of(train) {
        return Err(Error::config("teacher", format!("{what} expects {:?}, data is {:?}", spec.dims, dims_of(train))));
    }
    Ok(())
}

/// Codeword-mimic distillation with the mimic-explore schedule. Only the
/// teacher encoder is needed; its codewords are computed once up front.
pub fn train_student_cm(
    plan: &TrainPlan,
    train: &Dataset,
    test: &Dataset,
    teacher_encoder: &Network<f32>,
    codeword_size: usize,
) -> Result<TrainedPair> {
    if plan.pipeline != Pipeline::CodewordMimic {
        return Err(Error::Usage("train_student_cm needs the codeword_mimic pipeline".into()));
    }
    plan.validate()?;
    check_data(train)?;
    check_data(test)?;
    check_teacher(teacher_encoder, Role::Encoder, codeword_size, train, "teacher encoder")?;
    let test_codes = network_outputs(teacher_encoder, test, EVAL_CHUNK)?;
    let m = codeword_size;
    let codeword_gap = |enc: &Network<f32>| -> Result<f64> {
        Ok(codeword_mse_flat(&test_codes, &network_outputs(enc, test, EVAL_CHUNK)?, m))
    };

    if plan.mimic_epochs == 0 {
        // No mimic stage: the benchmark student, evaluated against the teacher.
        let mut pair = train_student_plain(plan, train, codeword_size)?;
        pair.mse_cm_end = Some(codeword_gap(&pair.encoder)?);
        return Ok(pair);
    }

    let dims = dims_of(train);
    let (mut encoder, mut decoder) =
        init_pair(plan, ModelSpec::student_encoder(dims, m)?, ModelSpec::decoder(dims, m)?)?;
    let train_codes = network_outputs(teacher_encoder, train, EVAL_CHUNK)?;
    let lr_plan = plan.lr_plan();
    let t_cm = plan.mimic_epochs;
    let weight = |t: usize| -> Result<f64> {
        if t < t_cm {
            alpha_schedule(t, t_cm, plan.alpha0, plan.alpha_scheduler)
        } else {
            Ok(0.0)
        }
    };
    let (mut mid, mut end) = (None, None);
    let mut probe = |t: usize, enc: &Network<f32>| -> Result<()> {
        if t == t_cm {
            mid = Some(codeword_gap(enc)?);
        }
        if t == plan.epochs {
            end = if t == t_cm { mid } else { Some(codeword_gap(enc)?) };
        }
        Ok(())
    };
    let guide = Guide::Codewords { v: &train_codes, m };
    let history = run_epochs(plan, &lr_plan, train, &mut encoder, &mut decoder, guide, &weight, &mut probe)?;
    Ok(TrainedPair { encoder, decoder, history, mse_cm_mid: mid, mse_cm_end: end, kd_beta0: None })
}

/// Output-level distillation from a frozen teacher autoencoder over a single
/// benchmark stage. `beta(t)` follows the plan's scheduler over all `T`
/// epochs.
pub fn train_student_kd(
    plan: &TrainPlan,
    train: &Dataset,
    teacher_encoder: &Network<f32>,
    teacher_decoder: &Network<f32>,
    codeword_size: usize,
) -> Result<TrainedPair> {
    if plan.pipeline != Pipeline::VanillaKd {
        return Err(Error::Usage("train_student_kd needs the vanilla_kd pipeline".into()));
    }
    plan.validate()?;
    check_data(train)?;
    check_teacher(teacher_encoder, Role::Encoder, codeword_size, train, "teacher encoder")?;
    check_teacher(teacher_decoder, Role::Decoder, codeword_size, train, "teacher decoder")?;
    let dims = dims_of(train);
    let m = codeword_size;
    let (mut encoder, mut decoder) =
        init_pair(plan, ModelSpec::student_encoder(dims, m)?, ModelSpec::decoder(dims, m)?)?;
    let codes = network_outputs(teacher_encoder, train, EVAL_CHUNK)?;
    let n = codes.len() / m;
    let teacher_out = tensor_outputs(
        teacher_decoder,
        &Tensor::new(vec![n, m], codes).expect("codeword matrix"),
        EVAL_CHUNK,
    )?;

    let beta0 = match plan.kd_beta0 {
        Some(b) => b,
        None => {
            // Balance both terms on the first batch, in dataset order.
            let idx: Vec<usize> = (0..plan.batch_size.min(train.len())).collect();
            let x = train.batch(&idx);
            let y = decoder.infer(&encoder.infer(&x)?)?;
            let ht = gather(&teacher_out, train.sample_len(), &idx, x.shape().to_vec());
            let a = mse_f64(ht.data(), y.data());
            let b = mse_f64(x.data(), y.data());
            if a + b > 0.0 {
                b / (a + b)
            } else {
                0.0
            }
        }
    };
    let total = plan.epochs;
    let kind = plan.alpha_scheduler;
    let weight = move |t: usize| -> Result<f64> {
        if beta0 == 0.0 {
            Ok(0.0)
        } else {
            alpha_schedule(t, total, beta0, kind)
        }
    };
    let lr_plan = plan.lr_plan();
    let guide = Guide::Outputs { h: &teacher_out };
    let history = run_epochs(plan, &lr_plan, train, &mut encoder, &mut decoder, guide, &weight, &mut |_, _| Ok(()))?;
    Ok(TrainedPair { encoder, decoder, history, mse_cm_mid: None, mse_cm_end: None, kd_beta0: Some(beta0) })
}
