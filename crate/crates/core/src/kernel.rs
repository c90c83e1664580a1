//! Kernel weights that localize a fit around a grid value `z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
    Epanechnikov,
    Boxcar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { family, bandwidth })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, bandwidth)
    }

    /// Unscaled kernel profile `K(u)`.
    pub fn profile(&self, u: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => (-0.5 * u * u).exp(),
            KernelFamily::Epanechnikov if u.abs() <= 1.0 => 0.75 * (1.0 - u * u),
            KernelFamily::Boxcar if u.abs() <= 1.0 => 0.5,
            _ => 0.0,
        }
    }

    /// `K_h(u) = K(u / h) / h`.
    pub fn weight(&self, u: f64) -> f64 {
        self.profile(u / self.bandwidth) / self.bandwidth
    }
}

/// Kernel weights of every observation around one grid value.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    pub z: f64,
    pub weights: Vec<f64>,
    /// `(sum w)^2 / sum w^2`.
    pub ess: f64,
}

pub fn kernel_weight(spec: &KernelSpec, u: f64) -> f64 {
    spec.weight(u)
}

/// Weights `K_h(x_i - z)` for each candidate value `x_i`.
pub fn weight_vector(spec: &KernelSpec, candidates: &[f64], z: f64) -> Result<KernelWeights> {
    if candidates.is_empty() {
        return Err(Error::Empty("no observations to weight".into()));
    }
    let weights: Vec<f64> = candidates.iter().map(|&x| spec.weight(x - z)).collect();
    let sum: f64 = weights.iter().sum();
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum <= 0.0 || sum_sq <= 0.0 {
        return Err(Error::ZeroWeights { z });
    }
    Ok(KernelWeights { z, weights, ess: sum * sum / sum_sq })
}
