//! Angular-delay transform `H = A H̄ B^H`, truncation and normalization.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::channel::CMatrix;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Unitary 2-D DFT between the spatial-frequency and angular-delay domains.
///
/// `A[k, n] = B[k, n] = exp(+j 2 pi k n / N) / sqrt(N)`, so a path delayed by
/// `d` sample periods lands in delay row `d` of `A H̄`, and `H̄ B^H` is a
/// forward DFT across antennas.
pub struct AngularDelay {
    rows: usize,
    cols: usize,
    delay_fwd: Arc<dyn Fft<f64>>,
    delay_inv: Arc<dyn Fft<f64>>,
    angle_fwd: Arc<dyn Fft<f64>>,
    angle_inv: Arc<dyn Fft<f64>>,
}

impl AngularDelay {
    pub fn new(subcarriers: usize, nt: usize) -> Self {
        let mut planner = FftPlanner::new();
        AngularDelay {
            rows: subcarriers,
            cols: nt,
            // rustfft's inverse carries the +j sign used by A.
            delay_fwd: planner.plan_fft_inverse(subcarriers),
            delay_inv: planner.plan_fft_forward(subcarriers),
            angle_fwd: planner.plan_fft_forward(nt),
            angle_inv: planner.plan_fft_inverse(nt),
        }
    }

    fn check(&self, m: &CMatrix) -> Result<()> {
        if (m.rows, m.cols) != (self.rows, self.cols) {
            return Err(Error::dim("angular-delay transform", &[m.rows, m.cols], &[self.rows, self.cols]));
        }
        Ok(())
    }

    /// `A H̄ B^H`.
    pub fn forward(&self, h_bar: &CMatrix) -> Result<CMatrix> {
        self.check(h_bar)?;
        Ok(self.apply(h_bar, &self.delay_fwd, &self.angle_fwd))
    }

    /// `A^H H B`.
    pub fn inverse(&self, h: &CMatrix) -> Result<CMatrix> {
        self.check(h)?;
        Ok(self.apply(h, &self.delay_inv, &self.angle_inv))
    }

    fn apply(&self, m: &CMatrix, along_rows: &Arc<dyn Fft<f64>>, along_cols: &Arc<dyn Fft<f64>>) -> CMatrix {
        let (r, c) = (self.rows, self.cols);
        let mut col = vec![Complex64::new(0.0, 0.0); r];
        let mut out = m.clone();
        for j in 0..c {
            for i in 0..r {
                col[i] = out.data[i * c + j];
            }
            along_rows.process(&mut col);
            for i in 0..r {
                out.data[i * c + j] = col[i];
            }
        }
        along_cols.process(&mut out.data);
        let s = 1.0 / ((r * c) as f64).sqrt();
        for z in &mut out.data {
            *z *= s;
        }
        out
    }
}

/// `H = A H̄ B^H` with freshly planned transforms.
pub fn to_angular_delay(h_bar: &CMatrix) -> Result<CMatrix> {
    AngularDelay::new(h_bar.rows, h_bar.cols).forward(h_bar)
}

/// Fraction of the energy of `h` that lies in its first `nc` rows.
pub fn leading_energy_fraction(h: &CMatrix, nc: usize) -> f64 {
    let total = h.energy();
    let head: f64 = h.data[..nc.min(h.rows) * h.cols].iter().map(|z| z.norm_sqr()).sum();
    if total == 0.0 {
        0.0
    } else {
        head / total
    }
}

/// Offset added after scaling; stored alongside the scale for inversion.
pub const NORM_SHIFT: f32 = 0.5;

/// One truncated, normalized angular-delay matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSample {
    /// `[2, Nc, Nt]`: real part then imaginary part, each in `[0, 1]`.
    pub matrix: Tensor<f32>,
    /// Largest absolute real or imaginary entry of the truncated matrix.
    pub scale: f32,
}

impl CsiSample {
    /// `(shift, scale)` of the affine map `x / (2 scale) + shift`.
    pub fn norm_record(&self) -> (f32, f32) {
        (NORM_SHIFT, self.scale)
    }

    /// Inverse of the normalization: the truncated complex matrix.
    pub fn denormalize(&self) -> CMatrix {
        let (nc, nt) = (self.matrix.shape()[1], self.matrix.shape()[2]);
        let d = self.matrix.data();
        let k = 2.0 * self.scale as f64;
        let mut out = CMatrix::zeros(nc, nt);
        for (i, z) in out.data.iter_mut().enumerate() {
            *z = Complex64::new(
                (d[i] as f64 - NORM_SHIFT as f64) * k,
                (d[nc * nt + i] as f64 - NORM_SHIFT as f64) * k,
            );
        }
        out
    }
}

/// Keeps rows `0..nc` and maps them affinely into `[0, 1]` around 0.5.
pub fn truncate_and_normalize(h: &CMatrix, nc: usize) -> Result<CsiSample> {
    if nc == 0 || nc > h.rows {
        return Err(Error::config("Nc", format!("cannot keep {nc} of {} delay rows", h.rows)));
    }
    let nt = h.cols;
    let head = &h.data[..nc * nt];
    let scale = head.iter().fold(0.0f64, |m, z| m.max(z.re.abs()).max(z.im.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::DegenerateSample);
    }
    let scale32 = scale as f32;
    let k = 1.0 / (2.0 * scale32 as f64);
    let mut data = vec![0.0f32; 2 * nc * nt];
    for (i, z) in head.iter().enumerate() {
        data[i] = (z.re * k + NORM_SHIFT as f64).clamp(0.0, 1.0) as f32;
        data[nc * nt + i] = (z.im * k + NORM_SHIFT as f64).clamp(0.0, 1.0) as f32;
    }
    Ok(CsiSample { matrix: Tensor::new(vec![2, nc, nt], data)?, scale: scale32 })
}
