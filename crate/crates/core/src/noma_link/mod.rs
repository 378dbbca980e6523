//! Physical-layer engine: superposition coding, DCO-OFDM, SIC detection,
//! SINR and rate expressions, CSI impairment and Monte Carlo estimators for
//! both O-NOMA and the OFDMA baseline.
//!
//! Superposition uses amplitude weights `sqrt(P_i / total)` on unit-energy
//! symbols, and the LED drive scales the composite by `sqrt(total)`, so user
//! `i` reaches a receiver with amplitude `h * sqrt(P_i)` and the power budget
//! holds literally.

mod montecarlo;
mod ofdm;
mod qam;
mod sic;

pub use montecarlo::{
    ber_montecarlo, coverage_probability, rate_montecarlo, CoverageScenario, LinkScenario,
    LinkStats, LinkUser, MeanCi, Placement, RateStats, Scheme, UserLinkStats,
};
pub use ofdm::{DcBias, DcoOfdm, DcoOfdmConfig};
pub use qam::{bit_errors, QamOrder};
pub use sic::{sic_decode, DecodedStream, SicLayer, SicResult};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel_geometry::{los_gain, ChannelGain, GeometryError, Luminaire, Receiver, Vec3};
use crate::power_allocation::AllocationError;
use crate::rng::{self, SimRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("invalid DCO-OFDM configuration: {0}")]
    Config(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("user {0} is not part of the superposition")]
    UnknownUser(usize),
    #[error("outdated CSI needs user geometry")]
    MissingGeometry,
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

/// One user's frame of constellation symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSignal {
    pub user_id: usize,
    pub qam: QamOrder,
    /// Symbol labels, `0..M`.
    pub labels: Vec<u32>,
    pub symbols: Vec<Complex64>,
}

impl UserSignal {
    pub fn from_labels(user_id: usize, qam: QamOrder, labels: Vec<u32>) -> Self {
        let symbols = labels.iter().map(|&s| qam.map(s)).collect();
        Self {
            user_id,
            qam,
            labels,
            symbols,
        }
    }

    pub fn random<R: Rng>(user_id: usize, qam: QamOrder, len: usize, rng: &mut R) -> Self {
        let labels = (0..len).map(|_| rng.random_range(0..qam.order())).collect();
        Self::from_labels(user_id, qam, labels)
    }

    pub fn mean_power(&self) -> f64 {
        self.symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.symbols.len().max(1) as f64
    }
}

/// Superposition coding: `s[k] = sum_i sqrt(P_i / total) x_i[k]`, with
/// `total = sum_i P_i`.
pub fn superpose(signals: &[UserSignal], powers: &[f64]) -> Result<Vec<Complex64>, LinkError> {
    if signals.len() != powers.len() {
        return Err(LinkError::Length(format!(
            "{} signals but {} power values",
            signals.len(),
            powers.len()
        )));
    }
    let Some(first) = signals.first() else {
        return Ok(Vec::new());
    };
    let len = first.symbols.len();
    if let Some(bad) = signals.iter().find(|s| s.symbols.len() != len) {
        return Err(LinkError::Length(format!(
            "user {} has {} symbols, expected {len}",
            bad.user_id,
            bad.symbols.len()
        )));
    }
    let total: f64 = powers.iter().sum();
    if !(total > 0.0) || powers.iter().any(|&p| p < 0.0) {
        return Err(LinkError::Scenario("powers must be nonnegative with a positive sum".into()));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (sig, &p) in signals.iter().zip(powers) {
        let amp = (p / total).sqrt();
        for (o, x) in out.iter_mut().zip(&sig.symbols) {
            *o += x * amp;
        }
    }
    Ok(out)
}

/// Flat LOS channel plus white Gaussian noise: `y = h x + n`.
pub fn apply_channel(samples: &[f64], gain: ChannelGain, noise_power: f64, seed: u64) -> Vec<f64> {
    apply_channel_with(samples, gain.value(), noise_power, &mut rng::stream(seed, &[]))
}

pub(crate) fn apply_channel_with<R: Rng>(
    samples: &[f64],
    gain: f64,
    noise_power: f64,
    rng: &mut R,
) -> Vec<f64> {
    if noise_power <= 0.0 {
        return samples.iter().map(|x| gain * x).collect();
    }
    let normal = Normal::new(0.0, noise_power.sqrt()).expect("finite noise std");
    samples
        .iter()
        .map(|x| gain * x + normal.sample(rng))
        .collect()
}

/// SINR of the user at sorted index `i` after cancelling every stronger-power
/// layer:
///
/// `P_i h^2 / (h^2 sum_{j > i} P_j + noise)`
///
/// Layers after `i` in sorted order are decoded later and stay as
/// interference. For strictly decreasing powers this is exactly the set of
/// lower-power users.
pub fn sinr_noma(i: usize, powers: &[f64], gain_i: ChannelGain, noise: f64) -> f64 {
    let h2 = gain_i.value().powi(2);
    let interference: f64 = powers[i + 1..].iter().sum();
    powers[i] * h2 / (h2 * interference + noise)
}

/// Rate of a real-valued intensity channel, `0.5 log2(1 + sinr)`.
pub fn rate(sinr: f64) -> f64 {
    0.5 * (1.0 + sinr).log2()
}

/// OFDMA baseline: each user gets `1/N` of the subcarriers at full LED power.
pub fn rate_ofdma(gains: &[ChannelGain], noise: f64, total: f64) -> Vec<f64> {
    let share = 1.0 / gains.len().max(1) as f64;
    gains
        .iter()
        .map(|g| share * rate(total * g.value().powi(2) / noise))
        .collect()
}

/// Channel-knowledge impairment at the transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CsiModel {
    #[default]
    Perfect,
    /// `h_hat = h (1 + e)`, `e ~ N(0, noise_std^2)`.
    Noisy { noise_std: f64 },
    /// Gain measured before the user moved `displacement` meters.
    Outdated { displacement: f64 },
}

impl CsiModel {
    pub fn validate(&self) -> Result<(), LinkError> {
        match *self {
            CsiModel::Noisy { noise_std } if !(noise_std >= 0.0) => Err(LinkError::Scenario(
                format!("csi noise_std must be >= 0, got {noise_std}"),
            )),
            CsiModel::Outdated { displacement } if !(displacement >= 0.0) => {
                Err(LinkError::Scenario(format!(
                    "csi displacement must be >= 0, got {displacement}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CsiModel::Perfect => "perfect",
            CsiModel::Noisy { .. } => "noisy",
            CsiModel::Outdated { .. } => "outdated",
        }
    }
}

/// Where a user sits relative to its serving LED.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGeometry {
    pub luminaire: Luminaire,
    pub receiver: Receiver,
}

/// Smallest estimate kept by the multiplicative error model, relative to `h`.
const NOISY_FLOOR: f64 = 1e-6;

/// Estimated gain under `model`. `geometry` is required for outdated CSI.
pub fn impair_csi(
    true_gain: ChannelGain,
    model: &CsiModel,
    geometry: Option<&UserGeometry>,
    rng_seed: u64,
) -> Result<ChannelGain, LinkError> {
    impair_csi_with(true_gain, model, geometry, &mut rng::stream(rng_seed, &[]))
}

pub(crate) fn impair_csi_with(
    true_gain: ChannelGain,
    model: &CsiModel,
    geometry: Option<&UserGeometry>,
    rng: &mut SimRng,
) -> Result<ChannelGain, LinkError> {
    model.validate()?;
    match *model {
        CsiModel::Perfect => Ok(true_gain),
        CsiModel::Noisy { noise_std } => {
            if noise_std == 0.0 {
                return Ok(true_gain);
            }
            let e = Normal::new(0.0, noise_std)
                .expect("validated std")
                .sample(rng);
            let factor = (1.0 + e).max(NOISY_FLOOR);
            Ok(ChannelGain::new(true_gain.value() * factor).expect("finite gain"))
        }
        CsiModel::Outdated { displacement } => {
            let geo = geometry.ok_or(LinkError::MissingGeometry)?;
            if displacement == 0.0 {
                return Ok(true_gain);
            }
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let p = geo.receiver.position;
            let moved = Vec3::new(
                p.x + displacement * theta.cos(),
                p.y + displacement * theta.sin(),
                p.z,
            );
            Ok(los_gain(&geo.luminaire, &geo.receiver.at(moved))?)
        }
    }
}
