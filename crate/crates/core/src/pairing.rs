//! Hybrid OMA/NOMA scheduling: users are split into small NOMA groups and
//! the groups share the cell through orthogonal resources.

use std::io;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel_geometry::ChannelGain;
use crate::noma_link::rate;
use crate::power_allocation::{noma_rates, sort_users, AllocationError, Strategy};
use crate::rng;

pub const DEFAULT_GROUP_SIZE: usize = 2;
pub const MAX_GROUP_SIZE: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairingError {
    #[error("group size must lie in 1..={MAX_GROUP_SIZE}, got {0}")]
    GroupSize(usize),
    #[error("plan is not a partition of {0} users")]
    NotPartition(usize),
    #[error("{groups} groups exceed {resources} available resources")]
    Resources { groups: usize, resources: usize },
    #[error("noise power must be positive, got {0}")]
    Noise(f64),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceMode {
    #[default]
    Ofdma,
    Tdma,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairingPlan {
    /// User ids per group.
    pub groups: Vec<Vec<usize>>,
    /// Orthogonal resource (subband or slot) index per group.
    pub resource_assignment: Vec<usize>,
    pub mode: ResourceMode,
}

impl PairingPlan {
    fn from_groups(groups: Vec<Vec<usize>>) -> Self {
        let resource_assignment = (0..groups.len()).collect();
        Self {
            groups,
            resource_assignment,
            mode: ResourceMode::Ofdma,
        }
    }

    pub fn with_mode(mut self, mode: ResourceMode) -> Self {
        self.mode = mode;
        self
    }

    /// Checks that the groups partition `0..n_users` and fit the resources.
    pub fn validate(&self, n_users: usize, resources: usize) -> Result<(), PairingError> {
        let mut seen = vec![false; n_users];
        for &u in self.groups.iter().flatten() {
            if u >= n_users || std::mem::replace(&mut seen[u], true) {
                return Err(PairingError::NotPartition(n_users));
            }
        }
        if seen.iter().any(|s| !s) || self.groups.iter().any(Vec::is_empty) {
            return Err(PairingError::NotPartition(n_users));
        }
        if self.groups.len() > resources {
            return Err(PairingError::Resources {
                groups: self.groups.len(),
                resources,
            });
        }
        Ok(())
    }

    /// Bandwidth or time fraction per group.
    pub fn resource_fractions(&self) -> Vec<f64> {
        let g = self.groups.len();
        vec![1.0 / g as f64; g]
    }
}

fn ascending(gains: &[ChannelGain]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..gains.len()).collect();
    ids.sort_by(|&a, &b| gains[a].value().total_cmp(&gains[b].value()).then(a.cmp(&b)));
    ids
}

/// Strongest with weakest, second strongest with second weakest, and so on.
/// With an odd count the median user is left alone.
pub fn pair_max_disparity(gains: &[ChannelGain]) -> PairingPlan {
    let ids = ascending(gains);
    let n = ids.len();
    let mut groups: Vec<Vec<usize>> = (0..n / 2).map(|k| vec![ids[k], ids[n - 1 - k]]).collect();
    if n % 2 == 1 {
        groups.push(vec![ids[n / 2]]);
    }
    PairingPlan::from_groups(groups)
}

/// Groups of up to `size` users. Size 2 is [`pair_max_disparity`]; larger
/// sizes deal users in descending-gain order across the groups in a
/// back-and-forth sweep so every group spans the gain range.
pub fn group_max_disparity(gains: &[ChannelGain], size: usize) -> Result<PairingPlan, PairingError> {
    if size == 0 || size > MAX_GROUP_SIZE {
        return Err(PairingError::GroupSize(size));
    }
    if size == 2 {
        return Ok(pair_max_disparity(gains));
    }
    let mut ids = ascending(gains);
    ids.reverse();
    let n_groups = ids.len().div_ceil(size);
    let mut groups = vec![Vec::new(); n_groups];
    for (k, &u) in ids.iter().enumerate() {
        let round = k / n_groups.max(1);
        let pos = k % n_groups.max(1);
        let g = if round.is_multiple_of(2) { pos } else { n_groups - 1 - pos };
        groups[g].push(u);
    }
    Ok(PairingPlan::from_groups(groups))
}

/// Uniformly random pairing: a seeded shuffle paired off consecutively.
pub fn pair_random(gains: &[ChannelGain], seed: u64) -> PairingPlan {
    let mut ids: Vec<usize> = (0..gains.len()).collect();
    ids.shuffle(&mut rng::stream(seed, &[]));
    PairingPlan::from_groups(ids.chunks(2).map(<[usize]>::to_vec).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingStrategy {
    #[default]
    MaxDisparity,
    Random,
}

impl PairingStrategy {
    pub fn name(self) -> &'static str {
        match self {
            PairingStrategy::MaxDisparity => "max_disparity",
            PairingStrategy::Random => "random",
        }
    }

    pub fn plan(
        self,
        gains: &[ChannelGain],
        group_size: usize,
        seed: u64,
    ) -> Result<PairingPlan, PairingError> {
        match self {
            PairingStrategy::MaxDisparity => group_max_disparity(gains, group_size),
            PairingStrategy::Random if group_size == 2 => Ok(pair_random(gains, seed)),
            PairingStrategy::Random => {
                if group_size == 0 || group_size > MAX_GROUP_SIZE {
                    return Err(PairingError::GroupSize(group_size));
                }
                let mut ids: Vec<usize> = (0..gains.len()).collect();
                ids.shuffle(&mut rng::stream(seed, &[]));
                Ok(PairingPlan::from_groups(
                    ids.chunks(group_size).map(<[usize]>::to_vec).collect(),
                ))
            }
        }
    }
}

/// Power budget and allocation rule shared by every group.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridScenario {
    pub total_power: f64,
    pub noise_power: f64,
    pub strategy: Strategy,
}

/// Per-user rates when each group gets `1/|groups|` of the bandwidth
/// (OFDMA) or of the time (TDMA). Under the normalized rate model both modes
/// yield the same numbers. Groups of one are served without superposition.
pub fn schedule_hybrid(
    plan: &PairingPlan,
    gains: &[ChannelGain],
    scenario: &HybridScenario,
) -> Result<Vec<f64>, PairingError> {
    if !(scenario.noise_power > 0.0) {
        return Err(PairingError::Noise(scenario.noise_power));
    }
    plan.validate(gains.len(), plan.groups.len())?;
    let mut rates = vec![0.0; gains.len()];
    for (group, share) in plan.groups.iter().zip(plan.resource_fractions()) {
        if let [u] = group[..] {
            let snr = scenario.total_power * gains[u].value().powi(2) / scenario.noise_power;
            rates[u] = share * rate(snr);
            continue;
        }
        let local: Vec<ChannelGain> = group.iter().map(|&u| gains[u]).collect();
        let sorted = sort_users(&local)?;
        let pv = scenario
            .strategy
            .allocate(&sorted, scenario.noise_power, scenario.total_power)?;
        let r = sorted.unsort(&noma_rates(&sorted, pv.powers(), scenario.noise_power));
        for (&u, v) in group.iter().zip(r) {
            rates[u] = share * v;
        }
    }
    Ok(rates)
}

/// Writes `epoch,group,users,resource` rows; user ids are `;`-separated.
pub fn write_plan_csv<W: io::Write>(
    plans: &[(usize, PairingPlan)],
    out: &mut W,
    comment: Option<&str>,
) -> io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "epoch,group,users,resource")?;
    for (epoch, plan) in plans {
        for (g, (users, res)) in plan.groups.iter().zip(&plan.resource_assignment).enumerate() {
            let ids: Vec<String> = users.iter().map(|u| u.to_string()).collect();
            writeln!(out, "{epoch},{g},{},{res}", ids.join(";"))?;
        }
    }
    Ok(())
}
