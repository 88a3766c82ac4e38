//! Synthetic multipath downlink channels in the spatial-frequency domain.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius(&self) -> f64 {
        self.energy().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Few paths, short delay spread.
    IndoorLike,
    /// Many paths spread over most of the retained delay window.
    OutdoorLike,
}

impl Scenario {
    pub fn default_paths(self) -> usize {
        match self {
            Scenario::IndoorLike => 8,
            Scenario::OutdoorLike => 16,
        }
    }

    pub fn default_clusters(self) -> usize {
        match self {
            Scenario::IndoorLike => 2,
            Scenario::OutdoorLike => 4,
        }
    }

    /// Standard deviation of departure angles around a cluster centre.
    pub fn angle_spread_rad(self) -> f64 {
        match self {
            Scenario::IndoorLike => 2f64.to_radians(),
            Scenario::OutdoorLike => 5f64.to_radians(),
        }
    }

    /// Standard deviation of delays around a cluster centre, in samples.
    pub fn cluster_delay_spread(self) -> f64 {
        match self {
            Scenario::IndoorLike => 0.3,
            Scenario::OutdoorLike => 0.8,
        }
    }

    /// Delay spread in sample periods for a window of `nc` retained rows.
    pub fn default_spread(self, nc: usize) -> f64 {
        let budget = nc.saturating_sub(2 * guard_rows(nc)) as f64;
        match self {
            Scenario::IndoorLike => 0.4 * budget,
            Scenario::OutdoorLike => budget,
        }
    }
}

/// Rows kept free on each side of the delay window so that the sinc leakage
/// of fractional delays stays inside the retained block.
pub fn guard_rows(nc: usize) -> usize {
    nc / 4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Total subcarriers (N̄c).
    pub subcarriers: usize,
    /// Delay rows retained after the transform (Nc).
    pub nc: usize,
    /// Base-station antennas (Nt).
    pub nt: usize,
    /// Total paths, dealt round-robin to the clusters.
    pub paths: usize,
    pub clusters: usize,
    pub scenario: Scenario,
    /// Width of the window holding cluster delays, in seconds.
    pub delay_spread_s: f64,
    pub bandwidth_hz: f64,
    /// Carried for bookkeeping; phases depend only on baseband offsets.
    pub carrier_hz: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(scenario: Scenario) -> Self {
        let (bandwidth_hz, carrier_hz) = match scenario {
            Scenario::IndoorLike => (20e6, 5.3e9),
            Scenario::OutdoorLike => (20e6, 300e6),
        };
        let nc = 32;
        ChannelConfig {
            subcarriers: 1024,
            nc,
            nt: 32,
            paths: scenario.default_paths(),
            clusters: scenario.default_clusters(),
            scenario,
            delay_spread_s: scenario.default_spread(nc) / bandwidth_hz,
            bandwidth_hz,
            carrier_hz,
            seed: 0,
        }
    }

    /// Same scenario at other sizes, with the delay spread rescaled to the new
    /// retained window.
    pub fn with_dims(mut self, subcarriers: usize, nc: usize, nt: usize) -> Self {
        self.subcarriers = subcarriers;
        self.nc = nc;
        self.nt = nt;
        self.delay_spread_s = self.scenario.default_spread(nc) * self.sample_period();
        self
    }

    /// One sample period of the OFDM symbol.
    pub fn sample_period(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth_hz / self.subcarriers as f64
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("subcarriers", self.subcarriers), ("Nc", self.nc), ("Nt", self.nt), ("paths", self.paths), ("clusters", self.clusters)] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.nc > self.subcarriers {
            return Err(Error::config(
                "Nc",
                format!("Nc = {} exceeds the subcarrier count {}", self.nc, self.subcarriers),
            ));
        }
        if self.clusters > self.paths {
            return Err(Error::config("clusters", format!("{} clusters need at least as many paths", self.clusters)));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::config("bandwidth_hz", "must be positive"));
        }
        if !(self.carrier_hz > 0.0 && self.carrier_hz.is_finite()) {
            return Err(Error::config("carrier_hz", "must be positive"));
        }
        let spread = self.delay_spread_s / self.sample_period();
        let budget = self.nc as f64 - 2.0 * guard_rows(self.nc) as f64;
        if !(spread >= 0.0) || spread > budget {
            return Err(Error::config(
                "delay_spread_s",
                format!("spread of {spread:.2} samples exceeds the {budget} rows available inside Nc"),
            ));
        }
        Ok(())
    }
}

/// Half-wavelength ULA response toward `theta`.
pub fn steering_vector(nt: usize, theta: f64) -> Vec<Complex64> {
    let k = std::f64::consts::PI * theta.sin();
    (0..nt).map(|n| Complex64::from_polar(1.0, -k * n as f64)).collect()
}

/// One propagation path: complex gain, delay in seconds, departure angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    pub delay_s: f64,
    pub theta: f64,
}

/// Superposes `paths` into the `N̄c x Nt` spatial-frequency matrix; row `i`
/// is `sum_l g_l exp(-j 2 pi f_i tau_l) a(theta_l)^H`.
pub fn channel_from_paths(cfg: &ChannelConfig, paths: &[Path]) -> CMatrix {
    let mut h = CMatrix::zeros(cfg.subcarriers, cfg.nt);
    let df = cfg.subcarrier_spacing();
    for p in paths {
        let a_h: Vec<Complex64> = steering_vector(cfg.nt, p.theta).iter().map(|z| z.conj()).collect();
        let w = -2.0 * std::f64::consts::PI * df * p.delay_s;
        for i in 0..cfg.subcarriers {
            let coeff = p.gain * Complex64::from_polar(1.0, w * i as f64);
            for (dst, a) in h.data[i * cfg.nt..(i + 1) * cfg.nt].iter_mut().zip(&a_h) {
                *dst += coeff * a;
            }
        }
    }
    h
}

/// Clustered multipath: cluster centres are uniform in the delay window and
/// in angle, cluster powers are exponential draws, and each path scatters
/// around its centre. Delays are clamped to the window.
pub fn draw_paths<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> Vec<Path> {
    let ts = cfg.sample_period();
    let lo = guard_rows(cfg.nc) as f64 * ts;
    let hi = lo + cfg.delay_spread_s;
    let normal = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
    let centres: Vec<(f64, f64, f64)> = (0..cfg.clusters)
        .map(|_| {
            let delay = lo + rng.random::<f64>() * cfg.delay_spread_s;
            let theta = (rng.random::<f64>() - 0.5) * std::f64::consts::PI;
            let power = -(1.0 - rng.random::<f64>()).ln();
            (delay, theta, power)
        })
        .collect();
    (0..cfg.paths)
        .map(|l| {
            let c = l % cfg.clusters;
            let members = cfg.paths / cfg.clusters + usize::from(c < cfg.paths % cfg.clusters);
            let (delay, theta, power) = centres[c];
            let amp = (power / members as f64).sqrt() * std::f64::consts::FRAC_1_SQRT_2;
            let gain = Complex64::new(normal(rng), normal(rng)) * amp;
            let jitter = normal(rng) * cfg.scenario.cluster_delay_spread() * ts;
            let spread = normal(rng) * cfg.scenario.angle_spread_rad();
            Path {
                gain,
                delay_s: (delay + jitter).clamp(lo, hi),
                theta: (theta + spread).clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2),
            }
        })
        .collect()
}

pub fn generate_spatial_frequency_channel<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> Result<CMatrix> {
    cfg.validate()?;
    Ok(channel_from_paths(cfg, &draw_paths(cfg, rng)))
}
