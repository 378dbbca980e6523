//! Gray-mapped square QAM with unit average symbol energy.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum QamOrder {
    Qam4,
    Qam16,
    Qam64,
}

impl TryFrom<u32> for QamOrder {
    type Error = String;

    fn try_from(m: u32) -> Result<Self, Self::Error> {
        match m {
            4 => Ok(QamOrder::Qam4),
            16 => Ok(QamOrder::Qam16),
            64 => Ok(QamOrder::Qam64),
            other => Err(format!("unsupported QAM order {other}; expected 4, 16 or 64")),
        }
    }
}

impl From<QamOrder> for u32 {
    fn from(q: QamOrder) -> u32 {
        q.order()
    }
}

impl QamOrder {
    pub fn order(self) -> u32 {
        match self {
            QamOrder::Qam4 => 4,
            QamOrder::Qam16 => 16,
            QamOrder::Qam64 => 64,
        }
    }

    pub fn bits_per_symbol(self) -> u32 {
        self.order().trailing_zeros()
    }

    fn bits_per_axis(self) -> u32 {
        self.bits_per_symbol() / 2
    }

    fn levels(self) -> u32 {
        1 << self.bits_per_axis()
    }

    /// Amplitude scale giving unit average energy: `1 / sqrt(2 (M - 1) / 3)`.
    fn scale(self) -> f64 {
        (1.5 / (self.order() as f64 - 1.0)).sqrt()
    }

    fn level(self, gray: u32) -> f64 {
        let idx = gray_decode(gray);
        (2 * idx) as f64 - (self.levels() - 1) as f64
    }

    fn slice_axis(self, v: f64) -> u32 {
        let l = self.levels() as f64;
        let idx = ((v / self.scale() + l - 1.0) / 2.0).round().clamp(0.0, l - 1.0) as u32;
        idx ^ (idx >> 1)
    }

    /// Constellation point for symbol index `sym` (its bit label).
    pub fn map(self, sym: u32) -> Complex64 {
        let b = self.bits_per_axis();
        let mask = (1 << b) - 1;
        let i = self.level((sym >> b) & mask);
        let q = self.level(sym & mask);
        Complex64::new(i, q) * self.scale()
    }

    /// Minimum-distance decision; returns the symbol index.
    pub fn detect(self, z: Complex64) -> u32 {
        let b = self.bits_per_axis();
        (self.slice_axis(z.re) << b) | self.slice_axis(z.im)
    }

    pub fn points(self) -> impl Iterator<Item = Complex64> {
        (0..self.order()).map(move |s| self.map(s))
    }
}

fn gray_decode(mut g: u32) -> u32 {
    let mut n = g;
    while g > 1 {
        g >>= 1;
        n ^= g;
    }
    n
}

/// Number of differing bits between two symbol labels.
pub fn bit_errors(a: u32, b: u32) -> u32 {
    (a ^ b).count_ones()
}
