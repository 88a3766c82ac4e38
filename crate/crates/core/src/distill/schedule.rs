//! Epoch-granular distillation weights and learning-rate curves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Const,
    Linear,
    Cosine,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 3] = [SchedulerKind::Const, SchedulerKind::Linear, SchedulerKind::Cosine];

    pub fn label(self) -> &'static str {
        match self {
            SchedulerKind::Const => "const",
            SchedulerKind::Linear => "linear decay",
            SchedulerKind::Cosine => "cosine decay",
        }
    }
}

/// Weight of the mimic term at epoch `t` for a mimic stage of `t_cm` epochs.
pub fn alpha_schedule(t: usize, t_cm: usize, alpha0: f64, kind: SchedulerKind) -> Result<f64> {
    if t_cm == 0 {
        return Err(Error::config("T_cm", "the mimic stage needs at least one epoch"));
    }
    if t > t_cm {
        return Ok(0.0);
    }
    let u = t as f64 / t_cm as f64;
    Ok(match kind {
        SchedulerKind::Const => alpha0,
        SchedulerKind::Linear => alpha0 * (1.0 - u),
        // cos(pi) is not exactly -1 in floating point.
        SchedulerKind::Cosine if t == t_cm => 0.0,
        SchedulerKind::Cosine => 0.5 * alpha0 * (1.0 + (std::f64::consts::PI * u).cos()),
    })
}

/// Cosine anneal from `start` to `end` over `len` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anneal {
    pub start: f64,
    pub end: f64,
}

impl Anneal {
    pub const fn new(start: f64, end: f64) -> Self {
        Anneal { start, end }
    }

    pub fn at(&self, u: usize, len: usize) -> f64 {
        if u == 0 {
            return self.start;
        }
        let c = (std::f64::consts::PI * u as f64 / len as f64).cos();
        self.end + 0.5 * (self.start - self.end) * (1.0 + c)
    }
}

/// Learning-rate endpoints of every curve a run may use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSettings {
    /// Single-stage curve used by plain training and vanilla KD.
    pub benchmark: Anneal,
    pub warmup_epochs: usize,
    /// Shared by encoder and decoder during the mimic stage.
    pub mimic: Anneal,
    pub explore_decoder: Anneal,
    pub explore_encoder: Anneal,
}

impl Default for LrSettings {
    fn default() -> Self {
        LrSettings {
            benchmark: Anneal::new(2e-3, 4e-5),
            warmup_epochs: 30,
            mimic: Anneal::new(2e-3, 4e-5),
            explore_decoder: Anneal::new(4e-3, 4e-5),
            explore_encoder: Anneal::new(2e-4, 4e-5),
        }
    }
}

impl LrSettings {
    pub fn validate(&self) -> Result<()> {
        let curves = [
            ("lr.benchmark", self.benchmark),
            ("lr.mimic", self.mimic),
            ("lr.explore_decoder", self.explore_decoder),
            ("lr.explore_encoder", self.explore_encoder),
        ];
        for (key, a) in curves {
            if !(a.start > 0.0 && a.end > 0.0 && a.start.is_finite() && a.end.is_finite()) {
                return Err(Error::config(key, "learning rates must be positive"));
            }
        }
        Ok(())
    }
}

/// How learning rates evolve over a run of `total` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrPlan {
    /// Linear warmup from the final to the initial LR, then one cosine decay
    /// shared by encoder and decoder.
    Benchmark { total: usize, settings: LrSettings },
    /// Shared cosine decay for `mimic_epochs`, then separate encoder and
    /// decoder decays for the rest.
    MimicExplore { total: usize, mimic_epochs: usize, settings: LrSettings },
}

impl LrPlan {
    pub fn total(&self) -> usize {
        match *self {
            LrPlan::Benchmark { total, .. } | LrPlan::MimicExplore { total, .. } => total,
        }
    }

    /// Epoch at which a fresh optimizer state is started, if any.
    pub fn stage_boundary(&self) -> Option<usize> {
        match *self {
            LrPlan::MimicExplore { mimic_epochs, total, .. } if mimic_epochs > 0 && mimic_epochs < total => {
                Some(mimic_epochs)
            }
            _ => None,
        }
    }
}

/// `(encoder LR, decoder LR)` at epoch `t`.
pub fn lr_schedule(t: usize, plan: &LrPlan) -> Result<(f64, f64)> {
    let total = plan.total();
    if t >= total {
        return Err(Error::Usage(format!("epoch {t} is outside a {total}-epoch run")));
    }
    Ok(match *plan {
        LrPlan::Benchmark { settings, .. } => {
            let w = settings.warmup_epochs.min(total);
            let b = settings.benchmark;
            let lr = if t < w { b.end + (b.start - b.end) * t as f64 / w as f64 } else { b.at(t - w, total - w) };
            (lr, lr)
        }
        LrPlan::MimicExplore { mimic_epochs, settings, .. } => {
            if t < mimic_epochs {
                let lr = settings.mimic.at(t, mimic_epochs);
                (lr, lr)
            } else {
                let (u, len) = (t - mimic_epochs, total - mimic_epochs);
                (settings.explore_encoder.at(u, len), settings.explore_decoder.at(u, len))
            }
        }
    })
}
