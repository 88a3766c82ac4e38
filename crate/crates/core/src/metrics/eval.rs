//! Reconstruction and codeword error measures.

use serde::{Deserialize, Serialize};

use crate::data::transform::NORM_SHIFT;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

/// Runs `net` over `x` in chunks of `chunk` samples and concatenates the
/// flattened outputs.
pub fn tensor_outputs(net: &Network<f32>, x: &Tensor<f32>, chunk: usize) -> Result<Vec<f32>> {
    let n = x.shape()[0];
    let width = x.len() / n;
    let mut out = Vec::new();
    for start in (0..n).step_by(chunk.max(1)) {
        let end = (start + chunk.max(1)).min(n);
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let part = Tensor::new(shape, x.data()[start * width..end * width].to_vec())?;
        out.extend_from_slice(net.infer(&part)?.data());
    }
    Ok(out)
}

/// Encoder codewords, decoder outputs, or whatever `net` maps a dataset to.
pub fn network_outputs(net: &Network<f32>, ds: &Dataset, chunk: usize) -> Result<Vec<f32>> {
    let mut out = Vec::new();
    let idx: Vec<usize> = (0..ds.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        out.extend_from_slice(net.infer(&ds.batch(part))?.data());
    }
    Ok(out)
}

/// Reconstructions of every sample through `encoder` then `decoder`.
pub fn reconstruct(encoder: &Network<f32>, decoder: &Network<f32>, ds: &Dataset, chunk: usize) -> Result<Vec<f32>> {
    let codes = network_outputs(encoder, ds, chunk)?;
    let m = encoder.spec().codeword_size;
    if decoder.spec().codeword_size != m {
        return Err(Error::dim("encoder/decoder codeword", &[m], &[decoder.spec().codeword_size]));
    }
    tensor_outputs(decoder, &Tensor::new(vec![ds.len(), m], codes)?, chunk)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nmse {
    pub linear: f64,
    /// `10 log10(linear)`; negative infinity for exact reconstruction.
    #[serde(with = "crate::metrics::report::db_serde")]
    pub db: f64,
    /// Ground-truth samples with zero norm, left out of the mean.
    pub excluded: usize,
}

/// Mean over samples of `||h_hat - h||^2 / ||h||^2`, computed on values
/// centered at the normalization shift. Inputs hold `sample_len` values per
/// sample.
pub fn nmse(h: &[f32], h_hat: &[f32], sample_len: usize) -> Result<Nmse> {
    if h.len() != h_hat.len() || sample_len == 0 || h.len() % sample_len != 0 {
        return Err(Error::dim("nmse", &[h.len()], &[h_hat.len()]));
    }
    let shift = NORM_SHIFT as f64;
    let (mut sum, mut used, mut excluded) = (0.0f64, 0usize, 0usize);
    for (a, b) in h.chunks(sample_len).zip(h_hat.chunks(sample_len)) {
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for (&x, &y) in a.iter().zip(b) {
            let xc = x as f64 - shift;
            let yc = y as f64 - shift;
            num += (yc - xc) * (yc - xc);
            den += xc * xc;
        }
        if den == 0.0 {
            excluded += 1;
            continue;
        }
        sum += num / den;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Usage("nmse: every ground-truth sample has zero norm".into()));
    }
    if excluded > 0 {
        log::warn!("nmse: excluded {excluded} zero-norm samples");
    }
    let linear = sum / used as f64;
    Ok(Nmse { linear, db: 10.0 * linear.log10(), excluded })
}

/// Mean over samples of the per-sample codeword MSE; both slices hold `m`
/// values per sample.
pub fn codeword_mse_flat(v_t: &[f32], v_s: &[f32], m: usize) -> f64 {
    assert_eq!(v_t.len(), v_s.len(), "codeword sets differ in size");
    let n = v_t.len() / m;
    let total: f64 = v_t
        .chunks(m)
        .zip(v_s.chunks(m))
        .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / m as f64)
        .sum();
    total / n as f64
}

pub fn codeword_mse(encoder_t: &Network<f32>, encoder_s: &Network<f32>, ds: &Dataset) -> Result<f64> {
    let (mt, ms) = (encoder_t.spec().codeword_size, encoder_s.spec().codeword_size);
    if mt != ms {
        return Err(Error::config("codeword_size", format!("teacher M = {mt}, student M = {ms}")));
    }
    let a = network_outputs(encoder_t, ds, 200)?;
    let b = network_outputs(encoder_s, ds, 200)?;
    Ok(codeword_mse_flat(&a, &b, mt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_and_zero_predictors() {
        let h = [0.1f32, 0.9, 0.4, 0.7];
        let exact = nmse(&h, &h, 2).unwrap();
        assert_eq!(exact.linear, 0.0);
        assert_eq!(exact.db, f64::NEG_INFINITY);
        let zero = nmse(&h, &[0.5; 4], 2).unwrap();
        assert!((zero.linear - 1.0).abs() < 1e-12 && zero.db.abs() < 1e-9);
    }

    #[test]
    fn two_sample_mean() {
        // Centered truths (1, 0) and (0, 1); errors with ratios 0.1 and 0.3.
        let h = [1.5f32, 0.5, 0.5, 1.5];
        let e1 = 0.1f64.sqrt();
        let e2 = 0.3f64.sqrt();
        let hh = [(1.5 + e1) as f32, 0.5, 0.5, (1.5 - e2) as f32];
        let r = nmse(&h, &hh, 2).unwrap();
        assert!((r.linear - 0.2).abs() < 1e-6);
        assert!((r.db + 6.990).abs() < 1e-3);
    }

    #[test]
    fn zero_norm_samples_are_excluded() {
        let h = [0.5f32, 0.5, 1.0, 0.5];
        let r = nmse(&h, &[0.7, 0.2, 1.0, 0.5], 2).unwrap();
        assert_eq!((r.excluded, r.linear), (1, 0.0));
        assert!(nmse(&[0.5; 2], &[0.4; 2], 2).is_err());
    }

    #[test]
    fn codeword_offset_by_one() {
        let a = [0.25f32, -1.0, 2.0, 0.0];
        let b: Vec<f32> = a.iter().map(|x| x + 1.0).collect();
        assert!((codeword_mse_flat(&a, &b, 2) - 1.0).abs() < 1e-12);
        assert_eq!(codeword_mse_flat(&a, &b, 2), codeword_mse_flat(&b, &a, 2));
    }

    proptest::proptest! {
        #[test]
        fn nmse_ignores_a_common_scale(
            pairs in proptest::collection::vec((-0.2f32..0.2, -0.2f32..0.2), 8..40),
            k in -3i32..2,
        ) {
            let c = 2f32.powi(k);
            let h: Vec<f32> = pairs.iter().map(|p| 0.5 + p.0).collect();
            let hh: Vec<f32> = pairs.iter().map(|p| 0.5 + p.1).collect();
            let hs: Vec<f32> = pairs.iter().map(|p| 0.5 + c * p.0).collect();
            let hhs: Vec<f32> = pairs.iter().map(|p| 0.5 + c * p.1).collect();
            let (a, b) = (nmse(&h, &hh, 4), nmse(&hs, &hhs, 4));
            if let (Ok(a), Ok(b)) = (a, b) {
                proptest::prop_assert!((a.linear - b.linear).abs() <= 1e-5 * a.linear.max(1e-12));
            }
        }

        #[test]
        fn db_agrees_with_linear(pairs in proptest::collection::vec((0.0f32..1.0, 0.0f32..1.0), 4..40)) {
            let h: Vec<f32> = pairs.iter().map(|p| p.0).collect();
            let hh: Vec<f32> = pairs.iter().map(|p| p.1).collect();
            if let Ok(n) = nmse(&h, &hh, 2) {
                if n.linear > 0.0 {
                    proptest::prop_assert!((10f64.powf(n.db / 10.0) - n.linear).abs() <= 1e-9 * n.linear);
                }
            }
        }

        #[test]
        fn codeword_mse_is_symmetric(pairs in proptest::collection::vec((-3.0f32..3.0, -3.0f32..3.0), 1..30)) {
            let a: Vec<f32> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f32> = pairs.iter().map(|p| p.1).collect();
            proptest::prop_assert_eq!(codeword_mse_flat(&a, &b, 1), codeword_mse_flat(&b, &a, 1));
        }
    }
}
