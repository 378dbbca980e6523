//! Seeded Monte Carlo estimators.
//!
//! Every frame (or trial) draws from its own ChaCha8 streams derived from
//! `(seed, frame, purpose)`, so results do not depend on the rayon thread
//! count. Error counts are reduced as integers; floating-point averages are
//! accumulated sequentially over the frame-ordered results.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    bit_errors, impair_csi_with, rate, rate_ofdma, sic_decode, sinr_noma, superpose,
    CsiModel, DcoOfdm, DcoOfdmConfig, LinkError, QamOrder, SicLayer, UserGeometry, UserSignal,
};
use crate::channel_geometry::{los_gain, ChannelGain, Luminaire, Receiver, Vec3};
use crate::power_allocation::{optimal_search, sort_users, AllocationError, Objective, Strategy};
use crate::rng;

/// 95% two-sided normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Estimates below this fraction of the true gain are floored there.
const ESTIMATE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Noma,
    Ofdma,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Noma => "noma",
            Scheme::Ofdma => "ofdma",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkUser {
    /// True channel gain, normalized by the scenario's reference gain.
    pub gain: f64,
    pub qam: QamOrder,
    /// Needed only for outdated CSI.
    pub geometry: Option<UserGeometry>,
}

/// Single-cell downlink link-level scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkScenario {
    pub users: Vec<LinkUser>,
    /// Physical gain corresponding to a normalized gain of 1.
    pub reference_gain: f64,
    pub total_power: f64,
    pub noise_power: f64,
    pub ofdm: DcoOfdmConfig,
    pub ofdm_symbols_per_frame: usize,
    pub csi: CsiModel,
    pub strategy: Strategy,
    pub scheme: Scheme,
    /// Fraction of each cancelled layer left behind by SIC.
    pub cancellation_residual: f64,
}

impl LinkScenario {
    pub fn validate(&self) -> Result<(), LinkError> {
        if self.users.is_empty() {
            return Err(LinkError::Scenario("at least one user is required".into()));
        }
        if self.users.iter().any(|u| !(u.gain > 0.0) || !u.gain.is_finite()) {
            return Err(LinkError::Scenario("user gains must be positive".into()));
        }
        if !(self.total_power > 0.0) || !(self.noise_power >= 0.0) {
            return Err(LinkError::Scenario("total power > 0 and noise >= 0 required".into()));
        }
        if !(0.0..1.0).contains(&self.cancellation_residual) {
            return Err(LinkError::Scenario("cancellation residual must lie in [0, 1)".into()));
        }
        if self.ofdm_symbols_per_frame == 0 {
            return Err(LinkError::Scenario("ofdm_symbols_per_frame must be >= 1".into()));
        }
        if matches!(self.csi, CsiModel::Outdated { .. })
            && self.users.iter().any(|u| u.geometry.is_none())
        {
            return Err(LinkError::MissingGeometry);
        }
        self.csi.validate()?;
        self.ofdm.validate()?;
        if self.scheme == Scheme::Ofdma && self.ofdm.data_slots() < self.users.len() {
            return Err(LinkError::Scenario(
                "fewer data subcarriers than OFDMA users".into(),
            ));
        }
        Ok(())
    }

    fn true_gains(&self) -> Vec<ChannelGain> {
        self.users
            .iter()
            .map(|u| ChannelGain::new(u.gain).expect("validated gain"))
            .collect()
    }

    /// Transmitter-side gain estimates for one frame.
    fn estimate_gains(&self, frame: u64, seed: u64) -> Result<Vec<ChannelGain>, LinkError> {
        let mut r = rng::stream(seed, &[frame, 0]);
        self.users
            .iter()
            .map(|u| {
                let physical = ChannelGain::new(u.gain * self.reference_gain).expect("finite");
                let est = impair_csi_with(physical, &self.csi, u.geometry.as_ref(), &mut r)?;
                let g = (est.value() / self.reference_gain).max(ESTIMATE_FLOOR * u.gain);
                Ok(ChannelGain::new(g).expect("finite"))
            })
            .collect()
    }

    /// OFDMA subcarriers per user per OFDM symbol.
    fn ofdma_block(&self) -> usize {
        self.ofdm.data_slots() / self.users.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserLinkStats {
    pub user_id: usize,
    pub bit_errors: u64,
    pub bits: u64,
    pub ber: f64,
    pub ci_halfwidth: f64,
    /// Share of the data subcarriers used times `1 - BER`.
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkStats {
    pub scheme: Scheme,
    pub users: Vec<UserLinkStats>,
}

impl LinkStats {
    pub fn mean_ber(&self) -> f64 {
        self.users.iter().map(|u| u.ber).sum::<f64>() / self.users.len() as f64
    }
}

fn proportion_ci(successes: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let p = successes as f64 / n as f64;
    (p, Z95 * (p * (1.0 - p) / n as f64).sqrt())
}

/// Per-frame `(bit_errors, bits)` per user id.
type FrameCounts = Vec<(u64, u64)>;

fn noma_frame(
    sc: &LinkScenario,
    modem: &DcoOfdm,
    frame: u64,
    seed: u64,
) -> Result<FrameCounts, LinkError> {
    let n_users = sc.users.len();
    let est = sc.estimate_gains(frame, seed)?;
    let sorted = sort_users(&est)?;
    let powers = sc.strategy.allocate(&sorted, sc.noise_power, sc.total_power)?;
    let layers: Vec<SicLayer> = sorted
        .original_indices()
        .iter()
        .zip(powers.powers())
        .map(|(&id, &p)| SicLayer {
            user_id: id,
            power: p,
            qam: sc.users[id].qam,
        })
        .collect();

    let len = sc.ofdm_symbols_per_frame * sc.ofdm.data_slots();
    let mut data_rng = rng::stream(seed, &[frame, 1]);
    let signals: Vec<UserSignal> = (0..n_users)
        .map(|u| UserSignal::random(u, sc.users[u].qam, len, &mut data_rng))
        .collect();
    let ordered: Vec<UserSignal> = sorted
        .original_indices()
        .iter()
        .map(|&id| signals[id].clone())
        .collect();
    let drive = sc.total_power.sqrt();
    let composite: Vec<_> = superpose(&ordered, powers.powers())?
        .into_iter()
        .map(|s| s * drive)
        .collect();
    let samples = modem.modulate(&composite)?;

    (0..n_users)
        .map(|u| {
            let mut noise_rng = rng::stream(seed, &[frame, 2 + u as u64]);
            let rx = super::apply_channel_with(
                &samples,
                sc.users[u].gain,
                sc.noise_power,
                &mut noise_rng,
            );
            let freq = modem.demodulate(&rx)?;
            let res = sic_decode(&freq, est[u].value(), &layers, u, sc.cancellation_residual)?;
            let errs: u64 = res
                .own()
                .labels
                .iter()
                .zip(&signals[u].labels)
                .map(|(&a, &b)| bit_errors(a, b) as u64)
                .sum();
            Ok((errs, len as u64 * sc.users[u].qam.bits_per_symbol() as u64))
        })
        .collect()
}

fn ofdma_frame(
    sc: &LinkScenario,
    modem: &DcoOfdm,
    frame: u64,
    seed: u64,
) -> Result<FrameCounts, LinkError> {
    let n_users = sc.users.len();
    let est = sc.estimate_gains(frame, seed)?;
    let slots = sc.ofdm.data_slots();
    let block = sc.ofdma_block();
    let per_user = block * sc.ofdm_symbols_per_frame;
    let mut data_rng = rng::stream(seed, &[frame, 1]);
    let signals: Vec<UserSignal> = (0..n_users)
        .map(|u| UserSignal::random(u, sc.users[u].qam, per_user, &mut data_rng))
        .collect();
    let drive = sc.total_power.sqrt();
    let mut freq_tx = vec![num_complex::Complex64::new(0.0, 0.0); slots * sc.ofdm_symbols_per_frame];
    for (u, sig) in signals.iter().enumerate() {
        for (k, s) in sig.symbols.iter().enumerate() {
            let sym = k / block;
            freq_tx[sym * slots + u * block + k % block] = s * drive;
        }
    }
    let samples = modem.modulate(&freq_tx)?;

    (0..n_users)
        .map(|u| {
            let mut noise_rng = rng::stream(seed, &[frame, 2 + u as u64]);
            let rx = super::apply_channel_with(
                &samples,
                sc.users[u].gain,
                sc.noise_power,
                &mut noise_rng,
            );
            let freq = modem.demodulate(&rx)?;
            let amp = est[u].value() * drive;
            let qam = sc.users[u].qam;
            let errs: u64 = signals[u]
                .labels
                .iter()
                .enumerate()
                .map(|(k, &sent)| {
                    let z = freq[(k / block) * slots + u * block + k % block] / amp;
                    bit_errors(qam.detect(z), sent) as u64
                })
                .sum();
            Ok((errs, per_user as u64 * qam.bits_per_symbol() as u64))
        })
        .collect()
}

/// Bit-error rate per user through the full superpose, DCO-OFDM, channel,
/// demodulate and SIC chain (or the OFDMA equivalent).
pub fn ber_montecarlo(sc: &LinkScenario, n_frames: u64, seed: u64) -> Result<LinkStats, LinkError> {
    sc.validate()?;
    let modem = DcoOfdm::new(sc.ofdm)?;
    let n_users = sc.users.len();
    let totals = (0..n_frames)
        .into_par_iter()
        .map(|f| match sc.scheme {
            Scheme::Noma => noma_frame(sc, &modem, f, seed),
            Scheme::Ofdma => ofdma_frame(sc, &modem, f, seed),
        })
        .try_reduce(
            || vec![(0, 0); n_users],
            |mut acc, x| {
                for (a, b) in acc.iter_mut().zip(x) {
                    a.0 += b.0;
                    a.1 += b.1;
                }
                Ok(acc)
            },
        )?;
    let share = match sc.scheme {
        Scheme::Noma => 1.0,
        Scheme::Ofdma => sc.ofdma_block() as f64 / sc.ofdm.data_slots() as f64,
    };
    let users = totals
        .into_iter()
        .enumerate()
        .map(|(u, (errs, bits))| {
            let (ber, ci) = proportion_ci(errs, bits);
            UserLinkStats {
                user_id: u,
                bit_errors: errs,
                bits,
                ber,
                ci_halfwidth: ci,
                throughput: share * (1.0 - ber),
            }
        })
        .collect();
    Ok(LinkStats {
        scheme: sc.scheme,
        users,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci_halfwidth: f64,
}

fn mean_ci(values: &[f64]) -> MeanCi {
    let n = values.len() as f64;
    // Constant samples get an exact mean and zero width, free of rounding.
    if values.windows(2).all(|w| w[0] == w[1]) {
        return MeanCi {
            mean: values.first().copied().unwrap_or(f64::NAN),
            ci_halfwidth: 0.0,
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return MeanCi {
            mean,
            ci_halfwidth: 0.0,
        };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    MeanCi {
        mean,
        ci_halfwidth: Z95 * (var / n).sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateStats {
    /// Per user id.
    pub noma: Vec<MeanCi>,
    pub ofdma: Vec<MeanCi>,
    pub noma_sum: MeanCi,
    pub ofdma_sum: MeanCi,
}

/// Achievable rates averaged over frames. Power is allocated on the
/// CSI-impaired gains and evaluated on the true gains.
pub fn rate_montecarlo(sc: &LinkScenario, n_frames: u64, seed: u64) -> Result<RateStats, LinkError> {
    sc.validate()?;
    if n_frames == 0 {
        return Err(LinkError::Scenario("n_frames must be >= 1".into()));
    }
    let n_users = sc.users.len();
    let truth = sc.true_gains();
    let ofdma = rate_ofdma(&truth, sc.noise_power, sc.total_power);
    let per_frame: Vec<Vec<f64>> = (0..n_frames)
        .into_par_iter()
        .map(|f| -> Result<Vec<f64>, LinkError> {
            let est = sc.estimate_gains(f, seed)?;
            let sorted = sort_users(&est)?;
            let powers = sc.strategy.allocate(&sorted, sc.noise_power, sc.total_power)?;
            let mut rates = vec![0.0; n_users];
            for (k, &id) in sorted.original_indices().iter().enumerate() {
                rates[id] = rate(sinr_noma(k, powers.powers(), truth[id], sc.noise_power));
            }
            Ok(rates)
        })
        .collect::<Result<_, _>>()?;

    let column = |u: usize| per_frame.iter().map(|r| r[u]).collect::<Vec<_>>();
    let noma = (0..n_users).map(|u| mean_ci(&column(u))).collect();
    let sums: Vec<f64> = per_frame.iter().map(|r| r.iter().sum()).collect();
    let fixed = |v: f64| MeanCi {
        mean: v,
        ci_halfwidth: 0.0,
    };
    Ok(RateStats {
        noma,
        ofdma: ofdma.iter().map(|&v| fixed(v)).collect(),
        noma_sum: mean_ci(&sums),
        ofdma_sum: fixed(ofdma.iter().sum()),
    })
}

/// Region of the receiver plane where users are dropped uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Placement {
    pub fn sample<R: Rng>(&self, z: f64, rng: &mut R) -> Vec3 {
        Vec3::new(
            sample_range(self.x, rng),
            sample_range(self.y, rng),
            z,
        )
    }
}

fn sample_range<R: Rng>(r: [f64; 2], rng: &mut R) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageScenario {
    pub luminaire: Luminaire,
    /// Template receiver; its height fixes the placement plane.
    pub receiver: Receiver,
    pub placement: Placement,
    pub n_users: usize,
    pub total_power: f64,
    pub noise_power: f64,
    pub scheme: Scheme,
    pub strategy: Strategy,
}

fn trial_covered(
    sc: &CoverageScenario,
    gains: &[ChannelGain],
    targets: &[f64],
) -> Result<bool, LinkError> {
    let meets = |rates: &[f64]| rates.iter().zip(targets).all(|(r, t)| r >= t);
    if sc.scheme == Scheme::Ofdma {
        return Ok(meets(&rate_ofdma(gains, sc.noise_power, sc.total_power)));
    }
    let sorted = match sort_users(gains) {
        Ok(s) => s,
        Err(AllocationError::AllZero) => return Ok(targets.iter().all(|&t| t <= 0.0)),
        Err(e) => return Err(e.into()),
    };
    let alloc = match &sc.strategy {
        Strategy::Optimal { grid_points, .. } => optimal_search(
            &sorted,
            sc.noise_power,
            sc.total_power,
            Objective::Coverage,
            targets,
            *grid_points,
        ),
        other => other.allocate(&sorted, sc.noise_power, sc.total_power),
    };
    match alloc {
        Ok(pv) => {
            let rates = sorted.unsort(&crate::power_allocation::noma_rates(
                &sorted,
                pv.powers(),
                sc.noise_power,
            ));
            Ok(meets(&rates))
        }
        Err(AllocationError::Infeasible) => Ok(false),
        // A dark user cannot be served by a gain-ratio rule.
        Err(AllocationError::ZeroGain(_)) => Ok(targets.iter().all(|&t| t <= 0.0)),
        Err(e) => Err(e.into()),
    }
}

/// Fraction of random placements in which every user reaches its target
/// rate, with a 95% half-width. Placements depend only on `(seed, trial)`,
/// so sweeping the targets reuses the same drops.
pub fn coverage_probability(
    sc: &CoverageScenario,
    target_rates: &[f64],
    n_trials: u64,
    seed: u64,
) -> Result<(f64, f64), LinkError> {
    if target_rates.len() != sc.n_users || sc.n_users == 0 {
        return Err(LinkError::Scenario(format!(
            "expected {} target rates, got {}",
            sc.n_users,
            target_rates.len()
        )));
    }
    let z = sc.receiver.position.z;
    let covered: u64 = (0..n_trials)
        .into_par_iter()
        .map(|t| -> Result<u64, LinkError> {
            let mut r = rng::stream(seed, &[t]);
            let gains = (0..sc.n_users)
                .map(|_| {
                    let pos = sc.placement.sample(z, &mut r);
                    los_gain(&sc.luminaire, &sc.receiver.at(pos))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(trial_covered(sc, &gains, target_rates)? as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(proportion_ci(covered, n_trials))
}
