//! Multi-LED network layer: frequency-reuse groups, overlap classes,
//! user association, FOV-assisted handover and cell zooming.
//!
//! A point is covered by an LED when the optical power it receives from that
//! LED is at least the coverage threshold.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel_geometry::{
    grid_axis, lambert_order, los_gain, GeometryError, Luminaire, Receiver, RoomConfig, Vec3,
};
use crate::csv_fmt::fmt_sig;

/// Largest layout `cell_zoom` will search exhaustively.
pub const MAX_ZOOM_LEDS: usize = 8;

/// Fraction of the bandwidth reserved for four-LED overlap zones by default.
pub const DEFAULT_RESERVED_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum MulticellError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("coverage threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("LED {led} has frequency group {group}; only 0 and 1 exist")]
    Group { led: usize, group: u8 },
    #[error("frequency reuse needs at least one LED in each group")]
    ReuseGroups,
    #[error("point ({x}, {y}) is covered by no LED")]
    GreyHole { x: f64, y: f64 },
    #[error("cell zooming supports at most {MAX_ZOOM_LEDS} LEDs, got {0}")]
    TooManyLeds(usize),
    #[error("reserved band fraction must lie in [0, 1), got {0}")]
    ReservedFraction(f64),
    #[error("edge margins must be nonnegative")]
    EdgeMargin,
    #[error("mobility trace: {0}")]
    Trace(String),
}

/// Luminaires sharing one room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLayout {
    pub room: RoomConfig,
    pub luminaires: Vec<Luminaire>,
    /// When set, both frequency groups must be populated.
    #[serde(default)]
    pub reuse: bool,
}

impl CellLayout {
    pub fn new(room: RoomConfig, luminaires: Vec<Luminaire>, reuse: bool) -> Result<Self, MulticellError> {
        let layout = Self {
            room,
            luminaires,
            reuse,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), MulticellError> {
        self.room.validate()?;
        for (i, led) in self.luminaires.iter().enumerate() {
            led.validate()?;
            if led.frequency_group > 1 {
                return Err(MulticellError::Group {
                    led: i,
                    group: led.frequency_group,
                });
            }
        }
        if self.reuse && self.luminaires.len() > 1 {
            let has = |g| self.luminaires.iter().any(|l| l.frequency_group == g);
            if !has(0) || !has(1) {
                return Err(MulticellError::ReuseGroups);
            }
        }
        Ok(())
    }

    /// Received optical power from every LED at the receiver's position.
    pub fn received_powers(&self, rx: &Receiver) -> Result<Vec<f64>, MulticellError> {
        self.luminaires
            .iter()
            .map(|led| Ok(led.optical_power * los_gain(led, rx)?.value()))
            .collect()
    }
}

fn check_threshold(threshold: f64) -> Result<(), MulticellError> {
    if threshold > 0.0 && threshold.is_finite() {
        Ok(())
    } else {
        Err(MulticellError::Threshold(threshold))
    }
}

/// Ids of the LEDs whose received power at `rx` reaches `threshold`.
pub fn coverage_set(
    rx: &Receiver,
    layout: &CellLayout,
    threshold: f64,
) -> Result<Vec<usize>, MulticellError> {
    check_threshold(threshold)?;
    Ok(covering(&layout.received_powers(rx)?, threshold))
}

fn covering(powers: &[f64], threshold: f64) -> Vec<usize> {
    powers
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AreaLabel {
    L1,
    L2,
    L3,
    L4,
}

impl fmt::Display for AreaLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AreaLabel::L1 => "L1",
            AreaLabel::L2 => "L2",
            AreaLabel::L3 => "L3",
            AreaLabel::L4 => "L4",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AreaClass {
    pub label: AreaLabel,
    pub covering_leds: Vec<usize>,
}

/// Label for a nonempty covering set.
///
/// Triple coverage always contains a same-group pair with two groups, and is
/// treated like the same-band overlap.
pub fn label_for(covering: &[usize], layout: &CellLayout) -> Option<AreaLabel> {
    let group = |i: usize| layout.luminaires[i].frequency_group;
    match covering {
        [] => None,
        [_] => Some(AreaLabel::L1),
        [a, b] if group(*a) != group(*b) => Some(AreaLabel::L2),
        [_, _] => Some(AreaLabel::L3),
        [_, _, _] => {
            log::debug!("triple LED coverage {covering:?} treated as L3");
            Some(AreaLabel::L3)
        }
        _ => Some(AreaLabel::L4),
    }
}

pub fn classify_area(
    rx: &Receiver,
    layout: &CellLayout,
    threshold: f64,
) -> Result<AreaClass, MulticellError> {
    let covering_leds = coverage_set(rx, layout, threshold)?;
    match label_for(&covering_leds, layout) {
        Some(label) => Ok(AreaClass {
            label,
            covering_leds,
        }),
        None => Err(MulticellError::GreyHole {
            x: rx.position.x,
            y: rx.position.y,
        }),
    }
}

fn ranks(values: impl Iterator<Item = f64> + Clone) -> impl Fn(f64) -> usize {
    let mut distinct: Vec<f64> = values.collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    move |v| distinct.iter().take_while(|&&d| d < v - 1e-9).count()
}

/// Checkerboard frequency groups over the LED grid. The group is the parity
/// of the LED's row rank plus column rank among the distinct coordinates.
pub fn assign_frequency_groups(layout: &CellLayout) -> CellLayout {
    let leds = &layout.luminaires;
    let xr = ranks(leds.iter().map(|l| l.position.x));
    let yr = ranks(leds.iter().map(|l| l.position.y));
    let luminaires = leds
        .iter()
        .map(|l| {
            let g = ((xr(l.position.x) + yr(l.position.y)) % 2) as u8;
            l.clone().with_group(g)
        })
        .collect();
    CellLayout {
        luminaires,
        room: layout.room,
        reuse: leds.len() > 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationPolicy {
    /// Share of the bandwidth carved out for L4 users.
    pub reserved_band_fraction: f64,
}

impl Default for AssociationPolicy {
    fn default() -> Self {
        Self {
            reserved_band_fraction: DEFAULT_RESERVED_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserAssociation {
    /// Empty for a user in a grey hole.
    pub serving: Vec<usize>,
    pub label: Option<AreaLabel>,
    pub fov: f64,
    /// Served on the band reserved for four-LED overlaps.
    pub reserved_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssociationMap {
    pub users: Vec<UserAssociation>,
    pub reserved_band_fraction: f64,
}

impl AssociationMap {
    pub fn grey_holes(&self) -> Vec<usize> {
        self.users
            .iter()
            .enumerate()
            .filter(|(_, u)| u.serving.is_empty())
            .map(|(i, _)| i)
            .collect()
    }

    /// Bandwidth fraction available to a user on each serving LED.
    pub fn band_share(&self, user: usize) -> f64 {
        match self.users[user].label {
            None => 0.0,
            Some(AreaLabel::L4) => self.reserved_band_fraction,
            Some(_) => (1.0 - self.reserved_band_fraction) / 2.0,
        }
    }

    /// Number of users attached to each LED.
    pub fn loads(&self, n_leds: usize) -> Vec<usize> {
        let mut load = vec![0; n_leds];
        for u in &self.users {
            for &l in &u.serving {
                load[l] += 1;
            }
        }
        load
    }
}

fn strongest(candidates: &[usize], powers: &[f64]) -> usize {
    // Iterating in id order keeps the lower id on ties.
    candidates
        .iter()
        .copied()
        .reduce(|best, c| if powers[c] > powers[best] { c } else { best })
        .expect("nonempty candidates")
}

/// Greedy association in user-id order.
///
/// Single-LED and different-band overlaps attach to every covering LED.
/// Same-band overlaps attach to the least-loaded covering LED (lower id on
/// ties), and four-LED overlaps to the strongest LED on the reserved band.
pub fn associate_users(
    users: &[Receiver],
    layout: &CellLayout,
    threshold: f64,
    policy: &AssociationPolicy,
) -> Result<AssociationMap, MulticellError> {
    check_threshold(threshold)?;
    if !(0.0..1.0).contains(&policy.reserved_band_fraction) {
        return Err(MulticellError::ReservedFraction(policy.reserved_band_fraction));
    }
    let mut load = vec![0usize; layout.luminaires.len()];
    let mut out = Vec::with_capacity(users.len());
    for rx in users {
        let powers = layout.received_powers(rx)?;
        let cover = covering(&powers, threshold);
        let label = label_for(&cover, layout);
        let serving = match label {
            None => Vec::new(),
            Some(AreaLabel::L1 | AreaLabel::L2) => cover.clone(),
            Some(AreaLabel::L3) => {
                let pick = cover
                    .iter()
                    .copied()
                    .min_by_key(|&l| (load[l], l))
                    .expect("nonempty");
                vec![pick]
            }
            Some(AreaLabel::L4) => vec![strongest(&cover, &powers)],
        };
        for &l in &serving {
            load[l] += 1;
        }
        out.push(UserAssociation {
            serving,
            label,
            fov: rx.fov,
            reserved_band: label == Some(AreaLabel::L4),
        });
    }
    Ok(AssociationMap {
        users: out,
        reserved_band_fraction: policy.reserved_band_fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FovPolicy {
    Fixed,
    WidenAtEdge,
}

/// When a receiver counts as being at the edge of its serving cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeDetection {
    /// Serving power within this many dB of the threshold.
    pub power_margin_db: f64,
    /// Incidence angle within this many degrees of the narrow FOV.
    pub angle_margin_deg: f64,
}

impl Default for EdgeDetection {
    fn default() -> Self {
        Self {
            power_margin_db: 3.0,
            angle_margin_deg: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub user: usize,
    pub x: f64,
    pub y: f64,
}

/// Timestamped positions of one or more users.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MobilityTrace {
    pub points: Vec<TracePoint>,
}

impl MobilityTrace {
    /// Reads `t,user,x,y` rows. Lines starting with `#` are skipped.
    pub fn from_csv<R: io::Read>(reader: R) -> Result<Self, MulticellError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let points = rdr
            .deserialize()
            .collect::<Result<Vec<TracePoint>, _>>()
            .map_err(|e| MulticellError::Trace(e.to_string()))?;
        if let Some(p) = points
            .iter()
            .find(|p| !(p.t.is_finite() && p.x.is_finite() && p.y.is_finite()))
        {
            return Err(MulticellError::Trace(format!("non-finite entry for user {}", p.user)));
        }
        Ok(Self { points })
    }

    /// Positions per user, ordered by time (stable for equal times).
    pub fn by_user(&self) -> BTreeMap<usize, Vec<(f64, f64, f64)>> {
        let mut map: BTreeMap<usize, Vec<(f64, f64, f64)>> = BTreeMap::new();
        for p in &self.points {
            map.entry(p.user).or_default().push((p.t, p.x, p.y));
        }
        for v in map.values_mut() {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        map
    }
}

fn incidence_deg(led: &Luminaire, p: Vec3) -> f64 {
    let d = led.position.distance(&p);
    let dz = led.position.z - p.z;
    if d == 0.0 {
        return 0.0;
    }
    (dz / d).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Serving-LED changes along one user's path.
///
/// The serving LED is kept for as long as it covers the receiver; when it is
/// lost the strongest LED covering the narrow-FOV receiver takes over. Under
/// `WidenAtEdge` the receiver switches to its wide FOV while it sits at the
/// edge of its serving cell (serving power within the power margin of the
/// threshold, or incidence within the angle margin of the narrow FOV), which
/// keeps the serving LED past the narrow FOV cutoff.
pub fn handover_count(
    path: &[Vec3],
    layout: &CellLayout,
    rx_template: &Receiver,
    policy: FovPolicy,
    edge: &EdgeDetection,
    threshold: f64,
) -> Result<usize, MulticellError> {
    check_threshold(threshold)?;
    if !(edge.power_margin_db >= 0.0) || !(edge.angle_margin_deg >= 0.0) {
        return Err(MulticellError::EdgeMargin);
    }
    let [narrow, wide] = rx_template.fov_settings;
    let edge_power = threshold * 10f64.powf(edge.power_margin_db / 10.0);
    let mut serving: Option<usize> = None;
    let mut last_served: Option<usize> = None;
    let mut count = 0;
    for &p in path {
        let rx = rx_template.at(p).with_fov(narrow);
        let powers = layout.received_powers(&rx)?;
        let keep = serving.filter(|&s| {
            let led = &layout.luminaires[s];
            let at_edge = powers[s] <= edge_power
                || incidence_deg(led, p) >= narrow - edge.angle_margin_deg;
            if policy == FovPolicy::Fixed || !at_edge {
                return powers[s] >= threshold;
            }
            let widened = los_gain(led, &rx.with_fov(wide)).map_or(0.0, |g| g.value());
            led.optical_power * widened >= threshold
        });
        serving = keep.or_else(|| {
            let cover = covering(&powers, threshold);
            (!cover.is_empty()).then(|| strongest(&cover, &powers))
        });
        if let Some(s) = serving {
            if last_served.is_some_and(|l| l != s) {
                count += 1;
            }
            last_served = Some(s);
        }
    }
    Ok(count)
}

/// Replays every user of `trace`; users are independent and run in parallel.
pub fn handover_counts(
    trace: &MobilityTrace,
    layout: &CellLayout,
    rx_template: &Receiver,
    policy: FovPolicy,
    edge: &EdgeDetection,
    threshold: f64,
) -> Result<BTreeMap<usize, usize>, MulticellError> {
    let z = layout.room.receiver_plane_height;
    let users: Vec<(usize, Vec<Vec3>)> = trace
        .by_user()
        .into_iter()
        .map(|(u, pts)| (u, pts.iter().map(|&(_, x, y)| Vec3::new(x, y, z)).collect()))
        .collect();
    users
        .par_iter()
        .map(|(u, path)| {
            Ok((*u, handover_count(path, layout, rx_template, policy, edge, threshold)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ZoomResult {
    /// `settings[led]` is 0 for the narrow angle and 1 for the wide one.
    pub settings: Vec<usize>,
    /// Users covered by no LED under the chosen settings.
    pub grey_holes: Vec<usize>,
    /// Users covered by two or more LEDs.
    pub overlap_users: usize,
}

/// Layout with each LED switched to the given zoom setting.
pub fn apply_zoom(layout: &CellLayout, settings: &[usize]) -> CellLayout {
    let mut out = layout.clone();
    for (led, &s) in out.luminaires.iter_mut().zip(settings) {
        led.half_angle = led.zoom_settings[s];
    }
    out
}

fn zoom_settings_for(combo: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| (combo >> i) & 1).collect()
}

/// Exhaustive search over every narrow/wide combination.
///
/// Minimizes, in order: uncovered users, users in overlaps, wide LEDs, and
/// the combination index.
pub fn cell_zoom(
    layout: &CellLayout,
    users: &[Receiver],
    threshold: f64,
) -> Result<ZoomResult, MulticellError> {
    check_threshold(threshold)?;
    let n = layout.luminaires.len();
    if n > MAX_ZOOM_LEDS {
        return Err(MulticellError::TooManyLeds(n));
    }
    // power[led][setting][user]
    let mut power = Vec::with_capacity(n);
    for led in &layout.luminaires {
        let mut per_setting = Vec::with_capacity(2);
        for &angle in &led.zoom_settings {
            let zoomed = Luminaire {
                half_angle: angle,
                ..led.clone()
            };
            lambert_order(angle)?;
            let p = users
                .iter()
                .map(|rx| Ok(led.optical_power * los_gain(&zoomed, rx)?.value()))
                .collect::<Result<Vec<_>, MulticellError>>()?;
            per_setting.push(p);
        }
        power.push(per_setting);
    }
    let mut best: Option<((usize, usize, usize, usize), ZoomResult)> = None;
    for combo in 0..(1usize << n) {
        let settings = zoom_settings_for(combo, n);
        let mut grey = Vec::new();
        let mut overlap = 0;
        for u in 0..users.len() {
            let c = (0..n)
                .filter(|&l| power[l][settings[l]][u] >= threshold)
                .count();
            match c {
                0 => grey.push(u),
                1 => {}
                _ => overlap += 1,
            }
        }
        let wide = settings.iter().sum::<usize>();
        let key = (grey.len(), overlap, wide, combo);
        if best.as_ref().is_none_or(|(k, _)| key < *k) {
            best = Some((
                key,
                ZoomResult {
                    settings,
                    grey_holes: grey,
                    overlap_users: overlap,
                },
            ));
        }
    }
    Ok(best.expect("at least one combination").1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaCell {
    pub x: f64,
    pub y: f64,
    pub label: Option<AreaLabel>,
    pub leds: Vec<usize>,
}

/// Area class at every grid cell center of the receiver plane.
pub fn area_map(
    layout: &CellLayout,
    rx_template: &Receiver,
    grid_step: f64,
    threshold: f64,
) -> Result<Vec<AreaCell>, MulticellError> {
    check_threshold(threshold)?;
    let room = &layout.room;
    if !(grid_step > 0.0) || grid_step >= room.width || grid_step >= room.depth {
        return Err(GeometryError::GridStep { step: grid_step }.into());
    }
    let xs = grid_axis(room.width, grid_step);
    let ys = grid_axis(room.depth, grid_step);
    let z = room.receiver_plane_height;
    let rows = ys
        .par_iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    let leds = coverage_set(&rx_template.at(Vec3::new(x, y, z)), layout, threshold)?;
                    Ok(AreaCell {
                        x,
                        y,
                        label: label_for(&leds, layout),
                        leds,
                    })
                })
                .collect::<Result<Vec<_>, MulticellError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

/// Writes `x,y,label,led_ids`; uncovered cells get the label `none` and LED
/// ids are separated by `;`.
pub fn write_area_csv<W: io::Write>(
    cells: &[AreaCell],
    out: &mut W,
    comment: Option<&str>,
) -> io::Result<()> {
    if let Some(c) = comment {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "x,y,label,led_ids")?;
    for c in cells {
        let label = c.label.map_or("none".to_string(), |l| l.to_string());
        let ids: Vec<String> = c.leds.iter().map(|i| i.to_string()).collect();
        writeln!(out, "{},{},{},{}", fmt_sig(c.x), fmt_sig(c.y), label, ids.join(";"))?;
    }
    Ok(())
}
