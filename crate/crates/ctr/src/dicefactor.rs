//! Dropout on the factorized interaction vector.
//!
//! Training samples one Bernoulli keep-mask over the K_e interaction entries
//! per mini-batch (per example as an ablation option) and multiplies it into
//! `h_MF + h_FM` before the projection; because the elementwise products
//! distribute, one mask thins every pairwise interaction path at once.
//! Inference replaces the mask by its expectation and scales the vector by
//! the keep probability, so the served network is the mean of the sampled
//! thinned networks. With keep probability 1 both paths are the identity and
//! training equals inference bit for bit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// One sampled keep-mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceMask {
    pub keep: Vec<bool>,
    pub beta: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) || beta.is_nan() {
        return Err(Error::BetaOutOfRange(beta));
    }
    Ok(())
}

/// Draw a mask of `dim` independent keep decisions with probability `beta`.
pub fn sample_mask(beta: f64, dim: usize, rng: &mut impl Rng) -> Result<DiceMask> {
    check_beta(beta)?;
    let keep = (0..dim).map(|_| rng.random_bool(beta)).collect();
    Ok(DiceMask { keep, beta })
}

impl DiceMask {
    /// Mask entries as multiplicative scale factors.
    pub fn scale_vec<T: Real>(&self) -> Vec<T> {
        self.keep.iter().map(|&k| if k { T::one() } else { T::zero() }).collect()
    }
}

/// Training-path application: zero the dropped entries, keep the rest
/// bit-identical.
pub fn apply_train<T: Real>(v: &[T], mask: &DiceMask) -> Result<Vec<T>> {
    if v.len() != mask.keep.len() {
        return Err(Error::LengthMismatch { expected: mask.keep.len(), got: v.len() });
    }
    Ok(v.iter().zip(&mask.keep).map(|(&x, &k)| if k { x } else { T::zero() }).collect())
}

/// Inference-path application: scale every entry by the keep probability.
pub fn apply_inference<T: Real>(v: &[T], beta: f64) -> Result<Vec<T>> {
    check_beta(beta)?;
    let b = T::from_f64(beta);
    Ok(v.iter().map(|&x| x * b).collect())
}
