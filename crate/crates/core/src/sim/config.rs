//! Scenario configuration: TOML schema, defaults, validation and digest.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel_geometry::{Luminaire, Receiver, RoomConfig, Vec3};
use crate::multicell::{EdgeDetection, FovPolicy, DEFAULT_RESERVED_FRACTION};
use crate::noma_link::{CsiModel, DcBias, DcoOfdmConfig, Placement, QamOrder};
use crate::pairing::{PairingStrategy, ResourceMode, MAX_GROUP_SIZE};
use crate::power_allocation::{Objective, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    PowerMap,
    SumRate,
    Throughput,
    Ber,
    Coverage,
    Handover,
    AreaMap,
    Pairing,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::PowerMap => "power_map",
            Metric::SumRate => "sum_rate",
            Metric::Throughput => "throughput",
            Metric::Ber => "ber",
            Metric::Coverage => "coverage",
            Metric::Handover => "handover",
            Metric::AreaMap => "area_map",
            Metric::Pairing => "pairing",
        }
    }

    /// Stream coordinate reserved for this metric's random draws.
    pub(crate) fn tag(self) -> u64 {
        self as u64 + 1
    }

    fn is_link_level(self) -> bool {
        matches!(self, Metric::SumRate | Metric::Throughput | Metric::Ber)
    }

    fn is_random(self) -> bool {
        !matches!(self, Metric::PowerMap | Metric::AreaMap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessScheme {
    Noma,
    Ofdma,
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LuminaireConfig {
    /// `[x, y, z]`, meters.
    pub position: [f64; 3],
    pub half_angle: f64,
    #[serde(default = "one")]
    pub optical_power: f64,
    pub frequency_group: Option<u8>,
    /// `[narrow, wide]` half-angles for cell zooming.
    pub zoom_settings: Option<[f64; 2]>,
}

impl LuminaireConfig {
    pub fn build(&self) -> Luminaire {
        let [x, y, z] = self.position;
        Luminaire {
            position: Vec3::new(x, y, z),
            half_angle: self.half_angle,
            optical_power: self.optical_power,
            frequency_group: self.frequency_group.unwrap_or(0),
            zoom_settings: self.zoom_settings.unwrap_or([self.half_angle; 2]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    #[serde(default = "default_fov")]
    pub fov: f64,
    #[serde(default = "default_area")]
    pub detector_area: f64,
    #[serde(default = "default_noise")]
    pub noise_power: f64,
    /// `[narrow, wide]` FOV settings used by handover policies.
    pub fov_settings: Option<[f64; 2]>,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            fov: default_fov(),
            detector_area: default_area(),
            noise_power: default_noise(),
            fov_settings: None,
        }
    }
}

impl ReceiverConfig {
    /// Receiver on the given plane height at the origin.
    pub fn build(&self, z: f64) -> Receiver {
        Receiver {
            position: Vec3::new(0.0, 0.0, z),
            fov: self.fov,
            detector_area: self.detector_area,
            noise_power: self.noise_power,
            fov_settings: self.fov_settings.unwrap_or([self.fov; 2]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsersConfig {
    /// Channel gains; normalized to a strongest gain of 1.
    pub gains: Option<Vec<f64>>,
    /// `[x, y]` positions on the receiver plane, served by the first LED.
    pub positions: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_qam")]
    pub qam: QamOrder,
}

impl Default for UsersConfig {
    fn default() -> Self {
        Self {
            gains: None,
            positions: None,
            qam: default_qam(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Fpa,
    Grpa,
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationConfig {
    pub strategy: StrategyName,
    pub alpha: Option<f64>,
    pub objective: Option<Objective>,
    pub grid_points: Option<usize>,
    #[serde(default)]
    pub min_rates: Vec<f64>,
    #[serde(default = "one")]
    pub total_power: f64,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyName::Grpa,
            alpha: None,
            objective: None,
            grid_points: None,
            min_rates: Vec::new(),
            total_power: 1.0,
        }
    }
}

impl AllocationConfig {
    /// Only meaningful after validation.
    pub fn strategy(&self) -> Strategy {
        match self.strategy {
            StrategyName::Fpa => Strategy::Fpa {
                alpha: self.alpha.unwrap_or(f64::NAN),
            },
            StrategyName::Grpa => Strategy::Grpa,
            StrategyName::Optimal => Strategy::Optimal {
                objective: self.objective.unwrap_or(Objective::SumRate),
                grid_points: self.grid_points.unwrap_or(101),
                min_rates: self.min_rates.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfdmConfig {
    #[serde(default = "default_subcarriers")]
    pub n_subcarriers: usize,
    #[serde(default = "default_cp")]
    pub cyclic_prefix_len: usize,
    #[serde(default = "default_bias")]
    pub dc_bias: DcBias,
    #[serde(default)]
    pub clip_floor: f64,
    #[serde(default = "default_symbols")]
    pub symbols_per_frame: usize,
    /// Fraction of each cancelled layer that SIC leaves behind.
    #[serde(default)]
    pub cancellation_residual: f64,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            n_subcarriers: default_subcarriers(),
            cyclic_prefix_len: default_cp(),
            dc_bias: default_bias(),
            clip_floor: 0.0,
            symbols_per_frame: default_symbols(),
            cancellation_residual: 0.0,
        }
    }
}

impl OfdmConfig {
    pub fn modem(&self) -> DcoOfdmConfig {
        DcoOfdmConfig {
            n_subcarriers: self.n_subcarriers,
            dc_bias: self.dc_bias,
            clip_floor: self.clip_floor,
            cyclic_prefix_len: self.cyclic_prefix_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Transmit SNR `total_power * h_max^2 / noise`, dB.
    #[serde(default = "default_snr")]
    pub snr_db: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snr_db: default_snr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerMapConfig {
    #[serde(default = "default_map_step")]
    pub grid_step: f64,
}

impl Default for PowerMapConfig {
    fn default() -> Self {
        Self {
            grid_step: default_map_step(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageConfig {
    /// Common per-user target rates, bits/s/Hz.
    #[serde(default)]
    pub targets: Vec<f64>,
    #[serde(default = "two")]
    pub n_users: usize,
    /// Drop region; the whole room when absent.
    pub region: Option<Placement>,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            targets: Vec::new(),
            n_users: 2,
            region: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MulticellConfig {
    /// Coverage threshold on received optical power, watts.
    pub threshold: Option<f64>,
    /// Replace the configured groups with a checkerboard assignment.
    #[serde(default)]
    pub assign_groups: bool,
    #[serde(default = "yes")]
    pub reuse: bool,
    #[serde(default = "default_reserved")]
    pub reserved_band_fraction: f64,
    #[serde(default = "default_area_step")]
    pub grid_step: f64,
    /// `t,user,x,y` CSV, relative to the config file.
    pub trace_file: Option<String>,
    /// Random straight-line traces used when no trace file is given.
    #[serde(default = "default_traces")]
    pub random_traces: usize,
    #[serde(default = "default_trace_steps")]
    pub trace_steps: usize,
    #[serde(default = "default_policies")]
    pub fov_policies: Vec<FovPolicy>,
    #[serde(default)]
    pub edge: EdgeDetection,
}

impl Default for MulticellConfig {
    fn default() -> Self {
        Self {
            threshold: None,
            assign_groups: false,
            reuse: true,
            reserved_band_fraction: default_reserved(),
            grid_step: default_area_step(),
            trace_file: None,
            random_traces: default_traces(),
            trace_steps: default_trace_steps(),
            fov_policies: default_policies(),
            edge: EdgeDetection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingConfig {
    #[serde(default = "default_pairings")]
    pub strategies: Vec<PairingStrategy>,
    #[serde(default = "two")]
    pub group_size: usize,
    #[serde(default = "default_pairing_users")]
    pub n_users: usize,
    /// Scheduling epochs; users are redrawn and re-paired every epoch.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub mode: ResourceMode,
    pub region: Option<Placement>,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            strategies: default_pairings(),
            group_size: 2,
            n_users: default_pairing_users(),
            epochs: default_epochs(),
            mode: ResourceMode::default(),
            region: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Master seed; required by every randomized metric.
    pub seed: Option<u64>,
    /// Frames per sweep point, placements per coverage level.
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default)]
    pub metrics: Vec<Metric>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<AccessScheme>,
    pub room: RoomConfig,
    #[serde(default)]
    pub luminaires: Vec<LuminaireConfig>,
    #[serde(default)]
    pub receiver: ReceiverConfig,
    #[serde(default)]
    pub users: UsersConfig,
    #[serde(default)]
    pub allocation: AllocationConfig,
    #[serde(default)]
    pub ofdm: OfdmConfig,
    #[serde(default)]
    pub csi: CsiModel,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub power_map: PowerMapConfig,
    #[serde(default)]
    pub coverage: CoverageConfig,
    #[serde(default)]
    pub multicell: MulticellConfig,
    #[serde(default)]
    pub pairing: PairingConfig,
}

fn one() -> f64 {
    1.0
}
fn two() -> usize {
    2
}
fn yes() -> bool {
    true
}
fn default_fov() -> f64 {
    70.0
}
fn default_area() -> f64 {
    1e-4
}
fn default_noise() -> f64 {
    1e-14
}
fn default_qam() -> QamOrder {
    QamOrder::Qam4
}
fn default_subcarriers() -> usize {
    64
}
fn default_cp() -> usize {
    8
}
fn default_bias() -> DcBias {
    DcBias::StdMultiple(3.0)
}
fn default_symbols() -> usize {
    1
}
fn default_snr() -> Vec<f64> {
    (0..7).map(|k| 10.0 + 5.0 * k as f64).collect()
}
fn default_map_step() -> f64 {
    0.05
}
fn default_reserved() -> f64 {
    DEFAULT_RESERVED_FRACTION
}
fn default_area_step() -> f64 {
    0.1
}
fn default_traces() -> usize {
    100
}
fn default_trace_steps() -> usize {
    200
}
fn default_policies() -> Vec<FovPolicy> {
    vec![FovPolicy::Fixed, FovPolicy::WidenAtEdge]
}
fn default_pairings() -> Vec<PairingStrategy> {
    vec![PairingStrategy::MaxDisparity, PairingStrategy::Random]
}
fn default_pairing_users() -> usize {
    4
}
fn default_epochs() -> usize {
    10
}
fn default_trials() -> u64 {
    1000
}
fn default_schemes() -> Vec<AccessScheme> {
    vec![AccessScheme::Noma, AccessScheme::Ofdma]
}

/// One failed constraint, named by its dotted config key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Default)]
struct Checker(Vec<Violation>);

impl Checker {
    fn fail(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.0.push(Violation {
            key: key.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, key: impl Into<String>, v: f64) {
        if !(v > 0.0 && v.is_finite()) {
            self.fail(key, format!("must be positive and finite, got {v}"));
        }
    }

    fn angle(&mut self, key: impl Into<String>, v: f64, max_inclusive: bool) {
        let ok = v > 0.0 && if max_inclusive { v <= 90.0 } else { v < 90.0 };
        if !ok {
            let range = if max_inclusive { "(0, 90]" } else { "(0, 90)" };
            self.fail(key, format!("must lie in {range} degrees, got {v}"));
        }
    }

    fn region(&mut self, key: &str, r: &Placement, room: &RoomConfig) {
        for (axis, [lo, hi], len) in [("x", r.x, room.width), ("y", r.y, room.depth)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0 && hi <= len) {
                self.fail(
                    format!("{key}.{axis}"),
                    format!("must be an ordered range inside [0, {len}], got [{lo}, {hi}]"),
                );
            }
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, Vec<Violation>> {
        toml::from_str(text).map_err(|e| {
            vec![Violation {
                key: "<parse>".into(),
                message: e.message().to_string()
                    + &e
                        .span()
                        .map(|s| format!(" (at byte {})", s.start))
                        .unwrap_or_default(),
            }]
        })
    }

    pub fn has(&self, m: Metric) -> bool {
        self.metrics.contains(&m)
    }

    pub fn link_schemes(&self) -> Vec<crate::noma_link::Scheme> {
        use crate::noma_link::Scheme;
        self.schemes
            .iter()
            .filter_map(|s| match s {
                AccessScheme::Noma => Some(Scheme::Noma),
                AccessScheme::Ofdma => Some(Scheme::Ofdma),
                AccessScheme::Hybrid => None,
            })
            .collect()
    }

    pub fn luminaires(&self) -> Vec<Luminaire> {
        self.luminaires.iter().map(LuminaireConfig::build).collect()
    }

    /// Whole-room drop region unless one is configured.
    pub fn region_or_room(&self, r: Option<Placement>) -> Placement {
        r.unwrap_or(Placement {
            x: [0.0, self.room.width],
            y: [0.0, self.room.depth],
        })
    }

    /// Every constraint violation, in a stable order.
    pub fn validate(&self) -> Vec<Violation> {
        let mut c = Checker::default();
        let room = &self.room;
        c.positive("room.width", room.width);
        c.positive("room.depth", room.depth);
        c.positive("room.height", room.height);
        if !(room.receiver_plane_height >= 0.0 && room.receiver_plane_height < room.height) {
            c.fail(
                "room.receiver_plane_height",
                format!(
                    "must lie in [0, room.height), got {}",
                    room.receiver_plane_height
                ),
            );
        }
        if self.trials == 0 {
            c.fail("trials", "must be at least 1");
        }
        if self.schemes.is_empty() {
            c.fail("schemes", "must name at least one of noma, ofdma, hybrid");
        }
        if self.seed.is_none() && self.metrics.iter().any(|m| m.is_random()) {
            let names: Vec<_> = self
                .metrics
                .iter()
                .filter(|m| m.is_random())
                .map(|m| m.name())
                .collect();
            c.fail("seed", format!("required by randomized metrics {names:?}"));
        }

        for (i, l) in self.luminaires.iter().enumerate() {
            let key = format!("luminaires[{i}]");
            c.angle(format!("{key}.half_angle"), l.half_angle, false);
            c.positive(format!("{key}.optical_power"), l.optical_power);
            if let Some([a, b]) = l.zoom_settings {
                c.angle(format!("{key}.zoom_settings[0]"), a, false);
                c.angle(format!("{key}.zoom_settings[1]"), b, false);
            }
            if l.frequency_group.is_some_and(|g| g > 1) {
                c.fail(format!("{key}.frequency_group"), "must be 0 or 1");
            }
            let [x, y, z] = l.position;
            if !(x.is_finite() && y.is_finite() && z.is_finite()) {
                c.fail(format!("{key}.position"), "must be finite");
            } else if z <= room.receiver_plane_height {
                c.fail(
                    format!("{key}.position"),
                    format!("z = {z} must be above the receiver plane"),
                );
            }
        }
        let needs_led = self
            .metrics
            .iter()
            .any(|&m| !m.is_link_level() || self.users.positions.is_some());
        if needs_led && self.luminaires.is_empty() {
            c.fail("luminaires", "at least one luminaire is required by the selected metrics");
        }

        let rx = &self.receiver;
        c.angle("receiver.fov", rx.fov, true);
        c.positive("receiver.detector_area", rx.detector_area);
        c.positive("receiver.noise_power", rx.noise_power);
        if let Some([a, b]) = rx.fov_settings {
            c.angle("receiver.fov_settings[0]", a, true);
            c.angle("receiver.fov_settings[1]", b, true);
            if a > b {
                c.fail("receiver.fov_settings", "narrow setting must not exceed the wide one");
            }
        }

        let alloc = &self.allocation;
        c.positive("allocation.total_power", alloc.total_power);
        match alloc.strategy {
            StrategyName::Fpa => match alloc.alpha {
                None => c.fail("allocation.alpha", "required by the fpa strategy"),
                Some(a) if !(a > 0.0 && a < 1.0) => c.fail(
                    "allocation.alpha",
                    format!("FPA requires alpha in the open range (0, 1), got {a}"),
                ),
                _ => {}
            },
            StrategyName::Grpa => {}
            StrategyName::Optimal => {
                if alloc.grid_points.is_some_and(|g| g < 2) {
                    c.fail("allocation.grid_points", "must be at least 2");
                }
                if alloc.min_rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
                    c.fail("allocation.min_rates", "must be finite and nonnegative");
                }
            }
        }
        if alloc.strategy != StrategyName::Fpa && alloc.alpha.is_some() {
            c.fail("allocation.alpha", "only valid with the fpa strategy");
        }
        if alloc.strategy != StrategyName::Optimal
            && (alloc.objective.is_some() || alloc.grid_points.is_some() || !alloc.min_rates.is_empty())
        {
            c.fail(
                "allocation",
                "objective, grid_points and min_rates are only valid with the optimal strategy",
            );
        }

        let link = self.metrics.iter().any(|m| m.is_link_level());
        if link {
            self.validate_link(&mut c);
        }

        if self.has(Metric::PowerMap) {
            let step = self.power_map.grid_step;
            if !(step > 0.0 && step < room.width && step < room.depth) {
                c.fail(
                    "power_map.grid_step",
                    format!("must be positive and smaller than the room, got {step}"),
                );
            }
        }
        if self.has(Metric::Coverage) {
            let cov = &self.coverage;
            if cov.targets.is_empty() {
                c.fail("coverage.targets", "at least one target rate is required");
            }
            if cov.targets.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                c.fail("coverage.targets", "must be finite and nonnegative");
            }
            if cov.n_users == 0 {
                c.fail("coverage.n_users", "must be at least 1");
            }
            if let Some(r) = &cov.region {
                c.region("coverage.region", r, room);
            }
            if !alloc.min_rates.is_empty() {
                c.fail("allocation.min_rates", "coverage sets the minimum rates from its targets");
            }
        }
        if self.has(Metric::Handover) || self.has(Metric::AreaMap) {
            self.validate_multicell(&mut c);
        }
        if self.has(Metric::Pairing) {
            let p = &self.pairing;
            if !self.schemes.contains(&AccessScheme::Hybrid) {
                c.fail("schemes", "the pairing metric requires the hybrid scheme");
            }
            if !(1..=MAX_GROUP_SIZE).contains(&p.group_size) {
                c.fail(
                    "pairing.group_size",
                    format!("must lie in 1..={MAX_GROUP_SIZE}, got {}", p.group_size),
                );
            }
            if p.n_users == 0 {
                c.fail("pairing.n_users", "must be at least 1");
            }
            if p.epochs == 0 {
                c.fail("pairing.epochs", "must be at least 1");
            }
            if p.strategies.is_empty() {
                c.fail("pairing.strategies", "must name at least one strategy");
            }
            if let Some(r) = &p.region {
                c.region("pairing.region", r, room);
            }
        }
        c.0
    }

    fn validate_link(&self, c: &mut Checker) {
        if self.link_schemes().is_empty() {
            c.fail("schemes", "link-level metrics need noma or ofdma");
        }
        let users = &self.users;
        let n = match (&users.gains, &users.positions) {
            (Some(_), Some(_)) => {
                c.fail("users", "give either gains or positions, not both");
                0
            }
            (None, None) => {
                c.fail("users", "link-level metrics need users.gains or users.positions");
                0
            }
            (Some(g), None) => {
                if g.is_empty() || g.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    c.fail("users.gains", "must be a nonempty list of positive values");
                }
                g.len()
            }
            (None, Some(p)) => {
                for (i, [x, y]) in p.iter().enumerate() {
                    if !(x.is_finite() && y.is_finite()) {
                        c.fail(format!("users.positions[{i}]"), "must be finite");
                    }
                }
                if p.is_empty() {
                    c.fail("users.positions", "must not be empty");
                }
                p.len()
            }
        };
        if matches!(self.csi, CsiModel::Outdated { .. }) && users.positions.is_none() {
            c.fail("csi.kind", "outdated CSI needs users.positions");
        }
        if let Err(e) = self.csi.validate() {
            c.fail("csi", e.to_string());
        }
        if let Err(e) = self.ofdm.modem().validate() {
            c.fail("ofdm", e.to_string());
        }
        let ofdm = &self.ofdm;
        if ofdm.symbols_per_frame == 0 {
            c.fail("ofdm.symbols_per_frame", "must be at least 1");
        }
        if !(0.0..1.0).contains(&ofdm.cancellation_residual) {
            c.fail("ofdm.cancellation_residual", "must lie in [0, 1)");
        }
        if n > 0 && self.link_schemes().contains(&crate::noma_link::Scheme::Ofdma)
            && (ofdm.n_subcarriers / 2).saturating_sub(1) < n
        {
            c.fail("ofdm.n_subcarriers", format!("too few data subcarriers for {n} OFDMA users"));
        }
        if n > 0 && !self.allocation.min_rates.is_empty() && self.allocation.min_rates.len() != n {
            c.fail(
                "allocation.min_rates",
                format!("expected {n} entries, got {}", self.allocation.min_rates.len()),
            );
        }
        if self.sweep.snr_db.is_empty() || self.sweep.snr_db.iter().any(|s| !s.is_finite()) {
            c.fail("sweep.snr_db", "must be a nonempty list of finite values");
        }
    }

    fn validate_multicell(&self, c: &mut Checker) {
        let m = &self.multicell;
        match m.threshold {
            None => c.fail("multicell.threshold", "required by area_map and handover"),
            Some(t) => c.positive("multicell.threshold", t),
        }
        if !(0.0..1.0).contains(&m.reserved_band_fraction) {
            c.fail("multicell.reserved_band_fraction", "must lie in [0, 1)");
        }
        if self.has(Metric::AreaMap) {
            let step = m.grid_step;
            if !(step > 0.0 && step < self.room.width && step < self.room.depth) {
                c.fail("multicell.grid_step", format!("must be positive and smaller than the room, got {step}"));
            }
        }
        if m.reuse && !m.assign_groups && self.luminaires.len() > 1 {
            let has = |g| self.luminaires.iter().any(|l| l.frequency_group.unwrap_or(0) == g);
            if !has(0) || !has(1) {
                c.fail("luminaires", "frequency reuse needs at least one LED in each group");
            }
        }
        if self.has(Metric::Handover) {
            if m.fov_policies.is_empty() {
                c.fail("multicell.fov_policies", "must name at least one policy");
            }
            if m.trace_file.is_none() && (m.random_traces == 0 || m.trace_steps == 0) {
                c.fail("multicell.random_traces", "random traces need positive count and steps");
            }
            if !(m.edge.power_margin_db >= 0.0) || !(m.edge.angle_margin_deg >= 0.0) {
                c.fail("multicell.edge", "margins must be nonnegative");
            }
        }
    }

    /// SHA-256 of the canonical JSON form: keys sorted, defaults filled in.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 1
        metrics = ["power_map"]
        [room]
        width = 4.0
        depth = 4.0
        height = 3.0
        receiver_plane_height = 0.85
        [[luminaires]]
        position = [2.0, 2.0, 3.0]
        half_angle = 30.0
    "#;

    fn parse(text: &str) -> ScenarioConfig {
        ScenarioConfig::from_toml(text).unwrap()
    }

    #[test]
    fn minimal_config_is_valid() {
        let cfg = parse(MINIMAL);
        assert!(cfg.validate().is_empty(), "{:?}", cfg.validate());
        assert_eq!(cfg.trials, 1000);
        assert_eq!(cfg.ofdm.n_subcarriers, 64);
    }

    #[test]
    fn fpa_alpha_out_of_range() {
        let text = format!("{MINIMAL}\n[allocation]\nstrategy = \"fpa\"\nalpha = 1.2\n");
        let v = parse(&text).validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].key, "allocation.alpha");
        assert!(v[0].message.contains("(0, 1)"));
    }

    #[test]
    fn negative_room_width() {
        let v = parse(&MINIMAL.replace("width = 4.0", "width = -4.0")).validate();
        assert!(v.iter().any(|x| x.key == "room.width"), "{v:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ScenarioConfig::from_toml(&MINIMAL.replace("half_angle", "half_angel")).unwrap_err();
        assert!(err[0].message.contains("half_angel"), "{err:?}");
    }

    #[test]
    fn seed_required_for_random_metrics() {
        let text = MINIMAL.replace("seed = 1", "").replace("[\"power_map\"]", "[\"coverage\"]");
        let v = parse(&text).validate();
        assert!(v.iter().any(|x| x.key == "seed"));
    }

    #[test]
    fn digest_ignores_key_order() {
        let a = parse(MINIMAL);
        let reordered = r#"
            metrics = ["power_map"]
            [[luminaires]]
            half_angle = 30.0
            position = [2.0, 2.0, 3.0]
            [room]
            receiver_plane_height = 0.85
            height = 3.0
            depth = 4.0
            width = 4.0
        "#;
        let b = parse(&format!("seed = 1\n{reordered}"));
        assert_eq!(a.digest(), b.digest());
        let mut c = a.clone();
        c.seed = Some(2);
        assert_ne!(a.digest(), c.digest());
    }
}
