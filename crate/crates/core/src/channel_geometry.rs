//! Line-of-sight optical channel gains and received-power maps.
//!
//! LEDs face straight down from the ceiling and photodiodes face straight up,
//! so the emission angle at the LED equals the incidence angle at the
//! receiver. The DC gain follows the Lambertian LOS model with unity optical
//! filter and concentrator gains:
//!
//! ```text
//! h = (m + 1) A / (2 pi d^2) * cos^m(phi) * cos(psi),   psi <= FOV
//! h = 0                                                  otherwise
//! ```
//!
//! Reflections are not modelled.

use std::fmt::Write as _;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csv_fmt::fmt_sig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("half angle {0} deg outside (0, 90)")]
    HalfAngle(f64),
    #[error("field of view {0} deg outside (0, 90]")]
    FieldOfView(f64),
    #[error("{what} must be strictly positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("receiver plane height {plane} must lie in [0, {height})")]
    PlaneHeight { plane: f64, height: f64 },
    #[error("transmitter and receiver coincide")]
    Degenerate,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("grid step {step} must be positive and smaller than the room footprint")]
    GridStep { step: f64 },
}

/// Cartesian position in meters. `z` is height above the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Vec3) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2))
            .sqrt()
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomConfig {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
    pub receiver_plane_height: f64,
}

impl RoomConfig {
    pub fn new(
        width: f64,
        depth: f64,
        height: f64,
        receiver_plane_height: f64,
    ) -> Result<Self, GeometryError> {
        let room = Self {
            width,
            depth,
            height,
            receiver_plane_height,
        };
        room.validate()?;
        Ok(room)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for (what, value) in [
            ("room width", self.width),
            ("room depth", self.depth),
            ("room height", self.height),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(GeometryError::NonPositive { what, value });
            }
        }
        if !(self.receiver_plane_height >= 0.0 && self.receiver_plane_height < self.height) {
            return Err(GeometryError::PlaneHeight {
                plane: self.receiver_plane_height,
                height: self.height,
            });
        }
        Ok(())
    }
}

/// A downward-facing LED transmitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Luminaire {
    pub position: Vec3,
    /// Half-intensity semi-angle, degrees.
    pub half_angle: f64,
    /// Optical power budget, watts.
    pub optical_power: f64,
    pub frequency_group: u8,
    /// Alternative half-angle settings used by cell zooming, degrees.
    pub zoom_settings: [f64; 2],
}

impl Luminaire {
    /// LED with both zoom settings equal to `half_angle`.
    pub fn new(position: Vec3, half_angle: f64, optical_power: f64) -> Result<Self, GeometryError> {
        let led = Self {
            position,
            half_angle,
            optical_power,
            frequency_group: 0,
            zoom_settings: [half_angle, half_angle],
        };
        led.validate()?;
        Ok(led)
    }

    pub fn with_zoom(mut self, narrow: f64, wide: f64) -> Result<Self, GeometryError> {
        self.zoom_settings = [narrow, wide];
        self.validate()?;
        Ok(self)
    }

    pub fn with_group(mut self, group: u8) -> Self {
        self.frequency_group = group;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.position.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        check_half_angle(self.half_angle)?;
        for a in self.zoom_settings {
            check_half_angle(a)?;
        }
        if !(self.optical_power > 0.0) || !self.optical_power.is_finite() {
            return Err(GeometryError::NonPositive {
                what: "optical power",
                value: self.optical_power,
            });
        }
        Ok(())
    }
}

/// An upward-facing photodiode terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Receiver {
    pub position: Vec3,
    /// Field-of-view semi-angle, degrees.
    pub fov: f64,
    /// Detector area, square meters.
    pub detector_area: f64,
    /// Electrical noise variance.
    pub noise_power: f64,
    /// `[narrow, wide]` FOV settings, degrees.
    pub fov_settings: [f64; 2],
}

impl Receiver {
    pub fn new(
        position: Vec3,
        fov: f64,
        detector_area: f64,
        noise_power: f64,
    ) -> Result<Self, GeometryError> {
        let rx = Self {
            position,
            fov,
            detector_area,
            noise_power,
            fov_settings: [fov, fov],
        };
        rx.validate()?;
        Ok(rx)
    }

    pub fn with_fov_settings(mut self, narrow: f64, wide: f64) -> Result<Self, GeometryError> {
        self.fov_settings = [narrow, wide];
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.position.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        for f in std::iter::once(self.fov).chain(self.fov_settings) {
            if !(f > 0.0 && f <= 90.0) {
                return Err(GeometryError::FieldOfView(f));
            }
        }
        for (what, value) in [
            ("detector area", self.detector_area),
            ("noise power", self.noise_power),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(GeometryError::NonPositive { what, value });
            }
        }
        Ok(())
    }

    /// Copy of this receiver moved to `position`.
    pub fn at(&self, position: Vec3) -> Self {
        Self {
            position,
            ..self.clone()
        }
    }

    /// Copy of this receiver using the given FOV.
    pub fn with_fov(&self, fov: f64) -> Self {
        Self {
            fov,
            ..self.clone()
        }
    }
}

/// Optical-domain DC gain, linear and nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct ChannelGain(f64);

impl ChannelGain {
    pub const ZERO: ChannelGain = ChannelGain(0.0);

    /// Returns `None` for negative or non-finite values.
    pub fn new(value: f64) -> Option<Self> {
        (value >= 0.0 && value.is_finite()).then_some(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_half_angle(deg: f64) -> Result<(), GeometryError> {
    if deg > 0.0 && deg < 90.0 {
        Ok(())
    } else {
        Err(GeometryError::HalfAngle(deg))
    }
}

/// Lambertian emission order `m = -ln 2 / ln cos(half_angle)`.
pub fn lambert_order(half_angle: f64) -> Result<f64, GeometryError> {
    check_half_angle(half_angle)?;
    Ok(-std::f64::consts::LN_2 / half_angle.to_radians().cos().ln())
}

/// LOS DC gain from `tx` to `rx`.
pub fn los_gain(tx: &Luminaire, rx: &Receiver) -> Result<ChannelGain, GeometryError> {
    let m = lambert_order(tx.half_angle)?;
    los_gain_with_order(m, &tx.position, rx)
}

pub(crate) fn los_gain_with_order(
    m: f64,
    tx: &Vec3,
    rx: &Receiver,
) -> Result<ChannelGain, GeometryError> {
    if !tx.is_finite() || !rx.position.is_finite() {
        return Err(GeometryError::NonFinite);
    }
    let d = tx.distance(&rx.position);
    if d == 0.0 {
        return Err(GeometryError::Degenerate);
    }
    let dz = tx.z - rx.position.z;
    if dz <= 0.0 {
        // Receiver at or above the LED plane sees no emission.
        return Ok(ChannelGain::ZERO);
    }
    let cos_angle = dz / d;
    let incidence = cos_angle.clamp(-1.0, 1.0).acos().to_degrees();
    if incidence > rx.fov {
        return Ok(ChannelGain::ZERO);
    }
    let h = (m + 1.0) * rx.detector_area / (2.0 * std::f64::consts::PI * d * d)
        * cos_angle.powf(m)
        * cos_angle;
    Ok(ChannelGain(h))
}

/// Received optical power sampled on the receiver plane at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMap {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `values[iy][ix]`, watts.
    pub values: Vec<Vec<f64>>,
}

impl PowerMap {
    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn value_at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy][ix]
    }

    /// Index of the cell whose center is closest to `(x, y)`.
    pub fn nearest_cell(&self, x: f64, y: f64) -> (usize, usize) {
        let nearest = |axis: &[f64], v: f64| {
            axis.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        (nearest(&self.xs, x), nearest(&self.ys, y))
    }

    /// Mask of cells whose power is at least `fraction` of the global maximum.
    pub fn above_fraction(&self, fraction: f64) -> Vec<Vec<bool>> {
        let level = fraction * self.max();
        self.values
            .iter()
            .map(|row| row.iter().map(|&v| v >= level).collect())
            .collect()
    }

    pub fn write_csv<W: io::Write>(&self, out: &mut W, comment: Option<&str>) -> io::Result<()> {
        let mut buf = String::new();
        if let Some(c) = comment {
            writeln!(buf, "# {c}").unwrap();
        }
        buf.push_str("x,y,power_watts\n");
        for (iy, row) in self.values.iter().enumerate() {
            for (ix, v) in row.iter().enumerate() {
                writeln!(
                    buf,
                    "{},{},{}",
                    fmt_sig(self.xs[ix]),
                    fmt_sig(self.ys[iy]),
                    fmt_sig(*v)
                )
                .unwrap();
            }
        }
        out.write_all(buf.as_bytes())
    }
}

/// Cell-center coordinates along an axis of length `len`.
pub(crate) fn grid_axis(len: f64, step: f64) -> Vec<f64> {
    // Tolerate representation error so 4.0 / 0.05 yields 80 cells.
    let n = ((len / step) + 1e-9).floor().max(1.0) as usize;
    (0..n).map(|i| (i as f64 + 0.5) * step).collect()
}

/// Total received optical power over the receiver plane.
pub fn power_map(
    room: &RoomConfig,
    luminaires: &[Luminaire],
    grid_step: f64,
    rx_template: &Receiver,
) -> Result<PowerMap, GeometryError> {
    room.validate()?;
    if !(grid_step > 0.0) || grid_step >= room.width || grid_step >= room.depth {
        return Err(GeometryError::GridStep { step: grid_step });
    }
    let orders = luminaires
        .iter()
        .map(|l| {
            l.validate()?;
            lambert_order(l.half_angle)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let xs = grid_axis(room.width, grid_step);
    let ys = grid_axis(room.depth, grid_step);
    let z = room.receiver_plane_height;

    let values = ys
        .par_iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    let rx = rx_template.at(Vec3::new(x, y, z));
                    luminaires.iter().zip(&orders).try_fold(0.0, |acc, (led, &m)| {
                        los_gain_with_order(m, &led.position, &rx)
                            .map(|g| acc + led.optical_power * g.value())
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(PowerMap { xs, ys, values })
}

/// Number of 4-connected components in a boolean mask.
pub fn connected_components(mask: &[Vec<bool>]) -> usize {
    let rows = mask.len();
    let cols = mask.first().map_or(0, Vec::len);
    let mut seen = vec![vec![false; cols]; rows];
    let mut count = 0;
    let mut stack = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if !mask[r][c] || seen[r][c] {
                continue;
            }
            count += 1;
            seen[r][c] = true;
            stack.push((r, c));
            while let Some((i, j)) = stack.pop() {
                let neighbours = [
                    (i.wrapping_sub(1), j),
                    (i + 1, j),
                    (i, j.wrapping_sub(1)),
                    (i, j + 1),
                ];
                for (a, b) in neighbours {
                    if a < rows && b < cols && mask[a][b] && !seen[a][b] {
                        seen[a][b] = true;
                        stack.push((a, b));
                    }
                }
            }
        }
    }
    count
}
