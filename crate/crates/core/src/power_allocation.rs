//! User ordering and power-allocation strategies for one LED.
//!
//! Users are indexed in ascending channel-gain order: sorted index 0 is the
//! weakest user and receives the largest share of the LED power budget.
//! Every strategy returns a [`PowerVector`] whose entries sum to the budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel_geometry::ChannelGain;
use crate::noma_link::{rate, sinr_noma};

const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("no users supplied")]
    Empty,
    #[error("every channel gain is zero")]
    AllZero,
    #[error("alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("total power must be positive, got {0}")]
    Total(f64),
    #[error("user count must be at least 1")]
    UserCount,
    #[error("gain ratio undefined: sorted user {0} has zero gain")]
    ZeroGain(usize),
    #[error("power coefficient {index} underflowed to {value}")]
    Underflow { index: usize, value: f64 },
    #[error("power vector invalid: {0}")]
    InvalidVector(String),
    #[error("grid needs at least 2 points per dimension, got {0}")]
    GridPoints(usize),
    #[error("expected {expected} minimum rates, got {got}")]
    MinRates { expected: usize, got: usize },
    #[error("no grid point satisfies the minimum-rate constraints")]
    Infeasible,
    #[error("noise power must be positive, got {0}")]
    Noise(f64),
}

/// Channel gains in ascending order with the permutation back to user ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedUserChannels {
    gains: Vec<ChannelGain>,
    original_indices: Vec<usize>,
}

impl SortedUserChannels {
    pub fn gains(&self) -> &[ChannelGain] {
        &self.gains
    }

    /// `original_indices()[k]` is the user id at sorted position `k`.
    pub fn original_indices(&self) -> &[usize] {
        &self.original_indices
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Sorted position of user `id`.
    pub fn position_of(&self, id: usize) -> Option<usize> {
        self.original_indices.iter().position(|&u| u == id)
    }

    /// Reorders per-sorted-position values back into user-id order.
    pub fn unsort<T: Clone>(&self, sorted: &[T]) -> Vec<T> {
        let mut out = sorted.to_vec();
        for (k, &id) in self.original_indices.iter().enumerate() {
            out[id] = sorted[k].clone();
        }
        out
    }
}

/// Sorts users by ascending gain; ties go to the lower user id.
pub fn sort_users(gains: &[ChannelGain]) -> Result<SortedUserChannels, AllocationError> {
    if gains.is_empty() {
        return Err(AllocationError::Empty);
    }
    if gains.iter().all(|g| g.value() == 0.0) {
        return Err(AllocationError::AllZero);
    }
    let mut idx: Vec<usize> = (0..gains.len()).collect();
    idx.sort_by(|&a, &b| gains[a].value().total_cmp(&gains[b].value()).then(a.cmp(&b)));
    Ok(SortedUserChannels {
        gains: idx.iter().map(|&i| gains[i]).collect(),
        original_indices: idx,
    })
}

/// Per-user power coefficients in sorted-user order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerVector {
    powers: Vec<f64>,
    total: f64,
}

impl PowerVector {
    pub fn new(powers: Vec<f64>, total: f64) -> Result<Self, AllocationError> {
        if !(total > 0.0) || !total.is_finite() {
            return Err(AllocationError::Total(total));
        }
        if powers.is_empty() {
            return Err(AllocationError::Empty);
        }
        if let Some((i, &p)) = powers.iter().enumerate().find(|(_, &p)| !(p > 0.0)) {
            return Err(AllocationError::Underflow { index: i, value: p });
        }
        let sum: f64 = powers.iter().sum();
        if ((sum - total) / total).abs() > SUM_TOLERANCE {
            return Err(AllocationError::InvalidVector(format!(
                "sum {sum} differs from total {total}"
            )));
        }
        if powers.windows(2).any(|w| w[1] > w[0]) {
            return Err(AllocationError::InvalidVector(
                "powers must be non-increasing in sorted-user order".into(),
            ));
        }
        Ok(Self { powers, total })
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }
}

/// Fixed power allocation: `P_i = alpha * P_{i-1}`, normalized to `total`.
pub fn fpa(alpha: f64, n_users: usize, total: f64) -> Result<PowerVector, AllocationError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(AllocationError::Alpha(alpha));
    }
    if n_users == 0 {
        return Err(AllocationError::UserCount);
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(AllocationError::Total(total));
    }
    let first = total * (1.0 - alpha) / (1.0 - alpha.powi(n_users as i32));
    let mut powers = Vec::with_capacity(n_users);
    let mut p = first;
    for _ in 0..n_users {
        powers.push(p);
        p *= alpha;
    }
    PowerVector::new(powers, total)
}

/// Gain-ratio power allocation: `P_i = (h_1 / h_i)^i * P_{i-1}` with 1-based
/// sorted index `i`, normalized to `total`.
pub fn grpa(channels: &SortedUserChannels, total: f64) -> Result<PowerVector, AllocationError> {
    if !(total > 0.0) || !total.is_finite() {
        return Err(AllocationError::Total(total));
    }
    if channels.len() == 1 {
        return PowerVector::new(vec![total], total);
    }
    if let Some(k) = channels.gains.iter().position(|g| g.value() == 0.0) {
        return Err(AllocationError::ZeroGain(k));
    }
    let h1 = channels.gains[0].value();
    let mut raw = Vec::with_capacity(channels.len());
    raw.push(1.0);
    for (k, g) in channels.gains.iter().enumerate().skip(1) {
        let prev = raw[k - 1];
        raw.push((h1 / g.value()).powi(k as i32 + 1) * prev);
    }
    let sum: f64 = raw.iter().sum();
    let powers: Vec<f64> = raw.iter().map(|u| total * u / sum).collect();
    PowerVector::new(powers, total)
}

/// What the exhaustive search maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    SumRate,
    MaxMinRate,
    /// Largest worst-case margin `min_i (R_i - target_i)` where the targets
    /// are the minimum rates.
    Coverage,
}

/// Per-user NOMA rates (bits/s/Hz) in sorted order for a given allocation.
pub fn noma_rates(channels: &SortedUserChannels, powers: &[f64], noise: f64) -> Vec<f64> {
    channels
        .gains
        .iter()
        .enumerate()
        .map(|(k, g)| rate(sinr_noma(k, powers, *g, noise)))
        .collect()
}

/// Enumerates integer compositions `k_1 >= k_2 >= ... >= k_n >= 0` of `units`.
fn ordered_compositions(units: u32, n: usize) -> Vec<Vec<u32>> {
    fn rec(remaining: u32, cap: u32, slots: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slots == 1 {
            if remaining <= cap {
                cur.push(remaining);
                out.push(cur.clone());
                cur.pop();
            }
            return;
        }
        // The remaining slots can hold at most `k * (slots - 1)` units.
        for k in (0..=cap.min(remaining)).rev() {
            if (k as u64) * (slots as u64 - 1) < (remaining - k) as u64 {
                break;
            }
            cur.push(k);
            rec(remaining - k, k, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(units, units, n, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Exhaustive search over a uniform grid on the ordered power simplex.
///
/// Candidate points are `P_i = eps + k_i / (G - 1) * (total - n eps)` with
/// integer `k_1 >= ... >= k_n`, `sum k_i = G - 1` and floor `eps = 1e-9 total`.
/// `min_rates` is indexed by user id and may be empty. Ties are resolved
/// after the full scan: more power to the weakest user, then the
/// lexicographically larger composition.
pub fn optimal_search(
    channels: &SortedUserChannels,
    noise: f64,
    total: f64,
    objective: Objective,
    min_rates: &[f64],
    grid_points: usize,
) -> Result<PowerVector, AllocationError> {
    if grid_points < 2 {
        return Err(AllocationError::GridPoints(grid_points));
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(AllocationError::Total(total));
    }
    if !(noise > 0.0) {
        return Err(AllocationError::Noise(noise));
    }
    let n = channels.len();
    if !min_rates.is_empty() && min_rates.len() != n {
        return Err(AllocationError::MinRates {
            expected: n,
            got: min_rates.len(),
        });
    }
    let targets: Vec<f64> = if min_rates.is_empty() {
        vec![0.0; n]
    } else {
        channels.original_indices.iter().map(|&id| min_rates[id]).collect()
    };

    let evaluate = |powers: &[f64]| -> Option<f64> {
        let rates = noma_rates(channels, powers, noise);
        if rates.iter().zip(&targets).any(|(r, t)| r < t) {
            return None;
        }
        Some(match objective {
            Objective::SumRate => rates.iter().sum(),
            Objective::MaxMinRate => rates.iter().copied().fold(f64::INFINITY, f64::min),
            Objective::Coverage => rates
                .iter()
                .zip(&targets)
                .map(|(r, t)| r - t)
                .fold(f64::INFINITY, f64::min),
        })
    };

    if n == 1 {
        let pv = PowerVector::new(vec![total], total)?;
        return evaluate(pv.powers()).map(|_| pv).ok_or(AllocationError::Infeasible);
    }

    let units = (grid_points - 1) as u32;
    let eps = 1e-9 * total;
    let spread = total - n as f64 * eps;
    let to_powers = |ks: &[u32]| -> Vec<f64> {
        ks.iter()
            .map(|&k| eps + k as f64 / units as f64 * spread)
            .collect()
    };

    let candidates = ordered_compositions(units, n);
    let scores: Vec<Option<f64>> = candidates
        .par_iter()
        .map(|ks| evaluate(&to_powers(ks)))
        .collect();

    let mut best: Option<(usize, f64)> = None;
    for (i, score) in scores.iter().enumerate() {
        let Some(v) = *score else { continue };
        best = match best {
            None => Some((i, v)),
            Some((j, bv)) => {
                let scale = bv.abs().max(v.abs()).max(1.0);
                if v > bv + 1e-12 * scale {
                    Some((i, v))
                } else if (v - bv).abs() <= 1e-12 * scale && candidates[i] > candidates[j] {
                    // Vec ordering compares k_1 first, i.e. the weakest user.
                    Some((i, v))
                } else {
                    Some((j, bv))
                }
            }
        };
    }
    let (i, _) = best.ok_or(AllocationError::Infeasible)?;
    let mut powers = to_powers(&candidates[i]);
    // Absorb rounding so the budget holds to the last bit of tolerance.
    let sum: f64 = powers.iter().sum();
    let correction = total - sum;
    // A negative correction goes to the end of the leading run of equal
    // powers so the order survives.
    let at = if correction < 0.0 {
        powers.iter().take_while(|&&p| p == powers[0]).count() - 1
    } else {
        0
    };
    powers[at] += correction;
    PowerVector::new(powers, total)
}

/// Named allocation strategy as selected in scenario configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Fpa {
        alpha: f64,
    },
    Grpa,
    Optimal {
        objective: Objective,
        #[serde(default = "default_grid_points")]
        grid_points: usize,
        #[serde(default)]
        min_rates: Vec<f64>,
    },
}

pub fn default_grid_points() -> usize {
    101
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Fpa { .. } => "fpa",
            Strategy::Grpa => "grpa",
            Strategy::Optimal { .. } => "optimal",
        }
    }

    pub fn allocate(
        &self,
        channels: &SortedUserChannels,
        noise: f64,
        total: f64,
    ) -> Result<PowerVector, AllocationError> {
        match self {
            Strategy::Fpa { alpha } => fpa(*alpha, channels.len(), total),
            Strategy::Grpa => grpa(channels, total),
            Strategy::Optimal {
                objective,
                grid_points,
                min_rates,
            } => optimal_search(channels, noise, total, *objective, min_rates, *grid_points),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gains(v: &[f64]) -> Vec<ChannelGain> {
        v.iter().map(|&x| ChannelGain::new(x).unwrap()).collect()
    }

    fn rel_eq(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!(((x - y) / y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn sort_examples() {
        let s = sort_users(&gains(&[0.5, 0.2, 0.9])).unwrap();
        assert_eq!(s.original_indices(), &[1, 0, 2]);
        assert_eq!(
            s.gains().iter().map(|g| g.value()).collect::<Vec<_>>(),
            vec![0.2, 0.5, 0.9]
        );
        assert_eq!(sort_users(&gains(&[0.3, 0.3])).unwrap().original_indices(), &[0, 1]);
        let one = sort_users(&gains(&[7e-6])).unwrap();
        assert_eq!(one.original_indices(), &[0]);
        assert_eq!(sort_users(&[]), Err(AllocationError::Empty));
        assert_eq!(sort_users(&gains(&[0.0, 0.0])), Err(AllocationError::AllZero));
    }

    #[test]
    fn unsort_inverts_permutation() {
        let s = sort_users(&gains(&[0.5, 0.2, 0.9])).unwrap();
        assert_eq!(s.unsort(&["b", "a", "c"]), vec!["a", "b", "c"]);
        assert_eq!(s.position_of(0), Some(1));
    }

    #[test]
    fn fpa_examples() {
        rel_eq(fpa(0.5, 2, 1.0).unwrap().powers(), &[2.0 / 3.0, 1.0 / 3.0], 1e-12);
        rel_eq(fpa(0.3, 1, 5.0).unwrap().powers(), &[5.0], 1e-12);
        rel_eq(
            fpa(0.5, 3, 1.0).unwrap().powers(),
            &[4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0],
            1e-12,
        );
    }

    #[test]
    fn fpa_domain_errors() {
        assert_eq!(fpa(1.2, 2, 1.0), Err(AllocationError::Alpha(1.2)));
        assert_eq!(fpa(0.0, 2, 1.0), Err(AllocationError::Alpha(0.0)));
        assert_eq!(fpa(0.5, 0, 1.0), Err(AllocationError::UserCount));
        assert_eq!(fpa(0.5, 2, -1.0), Err(AllocationError::Total(-1.0)));
    }

    #[test]
    fn grpa_examples() {
        let s = sort_users(&gains(&[1.0, 2.0])).unwrap();
        rel_eq(grpa(&s, 1.0).unwrap().powers(), &[0.8, 0.2], 1e-12);

        let s = sort_users(&gains(&[0.3, 0.3, 0.3])).unwrap();
        rel_eq(grpa(&s, 1.0).unwrap().powers(), &[1.0 / 3.0; 3], 1e-12);

        let s = sort_users(&gains(&[1.0, 2.0, 4.0])).unwrap();
        let raw = [1.0, 0.25, 0.003_906_25];
        let sum: f64 = raw.iter().sum();
        let expected: Vec<f64> = raw.iter().map(|r| r / sum).collect();
        rel_eq(grpa(&s, 1.0).unwrap().powers(), &expected, 1e-12);
    }

    #[test]
    fn grpa_rejects_zero_gain() {
        let s = sort_users(&gains(&[0.0, 2.0])).unwrap();
        assert_eq!(grpa(&s, 1.0), Err(AllocationError::ZeroGain(0)));
        let single = sort_users(&gains(&[2.0])).unwrap();
        assert_eq!(grpa(&single, 3.0).unwrap().powers(), &[3.0]);
    }

    #[test]
    fn power_vector_invariants() {
        assert!(PowerVector::new(vec![0.6, 0.4], 1.0).is_ok());
        assert!(PowerVector::new(vec![0.4, 0.6], 1.0).is_err());
        assert!(PowerVector::new(vec![1.0, 0.0], 1.0).is_err());
        assert!(PowerVector::new(vec![0.6, 0.3], 1.0).is_err());
    }

    #[test]
    fn compositions_are_ordered_and_complete() {
        let c = ordered_compositions(4, 3);
        // Partitions of 4 into at most 3 parts.
        assert_eq!(
            c,
            vec![vec![4, 0, 0], vec![3, 1, 0], vec![2, 2, 0], vec![2, 1, 1]]
        );
        for n in 1..=4 {
            for units in 0..12u32 {
                let c = ordered_compositions(units, n);
                assert!(c.iter().all(|k| k.iter().sum::<u32>() == units));
                assert!(c.iter().all(|k| k.windows(2).all(|w| w[0] >= w[1])));
            }
        }
    }

    #[test]
    fn optimal_single_user() {
        let s = sort_users(&gains(&[0.4])).unwrap();
        for obj in [Objective::SumRate, Objective::MaxMinRate, Objective::Coverage] {
            assert_eq!(optimal_search(&s, 0.01, 2.0, obj, &[], 11).unwrap().powers(), &[2.0]);
        }
    }

    #[test]
    fn optimal_infeasible() {
        let s = sort_users(&gains(&[0.5, 1.0])).unwrap();
        assert_eq!(
            optimal_search(&s, 0.01, 1.0, Objective::SumRate, &[50.0, 50.0], 101),
            Err(AllocationError::Infeasible)
        );
        assert!(matches!(
            optimal_search(&s, 0.01, 1.0, Objective::SumRate, &[1.0], 101),
            Err(AllocationError::MinRates { .. })
        ));
        assert_eq!(
            optimal_search(&s, 0.01, 1.0, Objective::SumRate, &[], 1),
            Err(AllocationError::GridPoints(1))
        );
    }

    #[test]
    fn optimal_respects_min_rates() {
        let s = sort_users(&gains(&[1.0, 0.5])).unwrap();
        // User 1 is the weak one here.
        let pv = optimal_search(&s, 0.01, 1.0, Objective::SumRate, &[0.5, 1.0], 101).unwrap();
        let rates = s.unsort(&noma_rates(&s, pv.powers(), 0.01));
        assert!(rates[0] >= 0.5 && rates[1] >= 1.0, "{rates:?}");
    }

    #[test]
    fn strategy_dispatch() {
        let s = sort_users(&gains(&[1.0, 2.0])).unwrap();
        assert_eq!(
            Strategy::Grpa.allocate(&s, 0.1, 1.0).unwrap(),
            grpa(&s, 1.0).unwrap()
        );
        assert_eq!(
            Strategy::Fpa { alpha: 0.5 }.allocate(&s, 0.1, 1.0).unwrap(),
            fpa(0.5, 2, 1.0).unwrap()
        );
    }

    #[test]
    fn search_keeps_order_with_equal_leading_powers() {
        let s = sort_users(&gains(&[0.01, 0.01, 0.01, 0.01, 0.16005926613043087])).unwrap();
        let pv = optimal_search(&s, 1e-4, 80.7691717339075, Objective::SumRate, &[], 21).unwrap();
        assert!(pv.powers().windows(2).all(|w| w[0] >= w[1]));
    }
}
