//! MMSE receive combining and SINR evaluation.
//!
//! Received signals are never sampled: SINRs follow in closed form from the
//! channels and combiners. Every linear system is solved through a Cholesky
//! factorization of the (scaled) Gram-plus-noise matrix.

use nalgebra::{DMatrix, DMatrixView};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, RadioParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombiningMode {
    /// Localized MMSE: each AP uses only its own channels.
    Lmmse,
    /// Centralized MMSE over the collective channels.
    Cmmse,
}

impl CombiningMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CombiningMode::Lmmse => "lmmse",
            CombiningMode::Cmmse => "cmmse",
        }
    }
}

impl std::str::FromStr for CombiningMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lmmse" => Ok(CombiningMode::Lmmse),
            "cmmse" => Ok(CombiningMode::Cmmse),
            other => Err(Error::param(
                "mode",
                format!("unknown combining mode `{other}` (expected cmmse or lmmse)"),
            )),
        }
    }
}

/// Collective combining vectors, one column per user.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerSet {
    pub mode: CombiningMode,
    pub vectors: DMatrix<Complex64>,
}

impl CombinerSet {
    pub fn vector(&self, k: usize) -> Vec<Complex64> {
        self.vectors.column(k).iter().copied().collect()
    }
}

/// `(p₀ H Hᴴ + σ² I)⁻¹ H` for one block of rows.
fn mmse_solve(block: DMatrixView<'_, Complex64>, radio: &RadioParams) -> Result<DMatrix<Complex64>> {
    let n = block.nrows();
    // Work with A/σ² to keep the diagonal at one.
    let snr = radio.tx_power / radio.noise_power;
    let mut gram = (block * block.adjoint()) * Complex64::new(snr, 0.0);
    for i in 0..n {
        gram[(i, i)] += Complex64::new(1.0, 0.0);
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("MMSE system matrix is not positive definite".into()))?;
    let mut v = chol.solve(&block.into_owned());
    v /= Complex64::new(radio.noise_power, 0.0);
    Ok(v)
}

pub fn lmmse_combiners(channels: &ChannelSet, radio: &RadioParams) -> Result<CombinerSet> {
    let per_ap = channels.antennas_per_ap();
    let mut vectors = DMatrix::zeros(channels.total_antennas(), channels.num_users());
    for m in 0..channels.num_aps() {
        let local = mmse_solve(channels.ap_block(m), radio)?;
        vectors
            .view_mut((m * per_ap, 0), (per_ap, channels.num_users()))
            .copy_from(&local);
    }
    Ok(CombinerSet {
        mode: CombiningMode::Lmmse,
        vectors,
    })
}

pub fn cmmse_combiners(channels: &ChannelSet, radio: &RadioParams) -> Result<CombinerSet> {
    let vectors = mmse_solve(channels.matrix().as_view(), radio)?;
    Ok(CombinerSet {
        mode: CombiningMode::Cmmse,
        vectors,
    })
}

pub fn combiners(
    channels: &ChannelSet,
    mode: CombiningMode,
    radio: &RadioParams,
) -> Result<CombinerSet> {
    match mode {
        CombiningMode::Lmmse => lmmse_combiners(channels, radio),
        CombiningMode::Cmmse => cmmse_combiners(channels, radio),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinr {
    pub value: f64,
    /// Set when the combiner is identically zero; `value` is then 0.
    pub zero_combiner: bool,
}

/// SINR of a combining vector `v` for user `k`.
pub fn sinr_of(v: &[Complex64], k: usize, channels: &ChannelSet, radio: &RadioParams) -> Sinr {
    let norm_sqr: f64 = v.iter().map(Complex64::norm_sqr).sum();
    if norm_sqr == 0.0 {
        return Sinr {
            value: 0.0,
            zero_combiner: true,
        };
    }
    let h = channels.matrix();
    let mut signal = 0.0;
    let mut interference = 0.0;
    for i in 0..channels.num_users() {
        let inner: Complex64 = v
            .iter()
            .zip(h.column(i).iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        if i == k {
            signal = inner.norm_sqr();
        } else {
            interference += inner.norm_sqr();
        }
    }
    let value = radio.tx_power * signal
        / (radio.tx_power * interference + radio.noise_power * norm_sqr);
    Sinr {
        value,
        zero_combiner: false,
    }
}

pub fn sinr(
    user_index: usize,
    combiners: &CombinerSet,
    channels: &ChannelSet,
    radio: &RadioParams,
) -> Sinr {
    sinr_of(
        combiners.vectors.column(user_index).as_slice(),
        user_index,
        channels,
        radio,
    )
}

/// SINRs of every user, sharing one `Vᴴ H` product.
pub fn all_sinrs(combiners: &CombinerSet, channels: &ChannelSet, radio: &RadioParams) -> Vec<Sinr> {
    let v = &combiners.vectors;
    let cross = v.adjoint() * channels.matrix();
    (0..channels.num_users())
        .map(|k| {
            let norm_sqr = v.column(k).norm_squared();
            if norm_sqr == 0.0 {
                return Sinr {
                    value: 0.0,
                    zero_combiner: true,
                };
            }
            let row = cross.row(k);
            let signal = row[k].norm_sqr();
            let total: f64 = row.iter().map(Complex64::norm_sqr).sum();
            let interference = (total - signal).max(0.0);
            Sinr {
                value: radio.tx_power * signal
                    / (radio.tx_power * interference + radio.noise_power * norm_sqr),
                zero_combiner: false,
            }
        })
        .collect()
}

/// `Σ_k log₂(1 + γ_k)` for one realization.
pub fn sum_rate_realization(
    channels: &ChannelSet,
    mode: CombiningMode,
    radio: &RadioParams,
) -> Result<f64> {
    if channels.num_users() == 0 {
        return Ok(0.0);
    }
    let comb = combiners(channels, mode, radio)?;
    Ok(all_sinrs(&comb, channels, radio)
        .iter()
        .map(|s| (1.0 + s.value).log2())
        .sum())
}
