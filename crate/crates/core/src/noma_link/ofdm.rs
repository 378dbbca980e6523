//! DC-biased optical OFDM.
//!
//! Data occupies subcarriers `1..N/2`, the upper half carries the complex
//! conjugates so the inverse DFT is real, and subcarriers `0` and `N/2` are
//! zero. Both transforms are unitary, so white noise of variance `s2` per
//! time sample shows up with variance `s2` on every data subcarrier.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::LinkError;

/// How the DC bias is chosen for each OFDM symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcBias {
    /// Constant bias in signal amplitude units.
    Fixed(f64),
    /// Bias equal to `k` times the standard deviation of the symbol.
    StdMultiple(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcoOfdmConfig {
    pub n_subcarriers: usize,
    pub dc_bias: DcBias,
    #[serde(default)]
    pub clip_floor: f64,
    pub cyclic_prefix_len: usize,
}

impl Default for DcoOfdmConfig {
    fn default() -> Self {
        Self {
            n_subcarriers: 64,
            dc_bias: DcBias::StdMultiple(3.0),
            clip_floor: 0.0,
            cyclic_prefix_len: 8,
        }
    }
}

impl DcoOfdmConfig {
    pub fn validate(&self) -> Result<(), LinkError> {
        let n = self.n_subcarriers;
        if n < 8 || !n.is_power_of_two() {
            return Err(LinkError::Config(format!(
                "n_subcarriers must be a power of two >= 8, got {n}"
            )));
        }
        if self.cyclic_prefix_len >= n {
            return Err(LinkError::Config(format!(
                "cyclic prefix {} must be shorter than the symbol",
                self.cyclic_prefix_len
            )));
        }
        let bias_ok = match self.dc_bias {
            DcBias::Fixed(b) => b.is_finite(),
            DcBias::StdMultiple(k) => k.is_finite() && k >= 0.0,
        };
        if !bias_ok || !self.clip_floor.is_finite() {
            return Err(LinkError::Config("dc bias and clip floor must be finite".into()));
        }
        Ok(())
    }

    /// Data-bearing subcarriers per OFDM symbol.
    pub fn data_slots(&self) -> usize {
        self.n_subcarriers / 2 - 1
    }

    /// Time samples per OFDM symbol, cyclic prefix included.
    pub fn symbol_len(&self) -> usize {
        self.n_subcarriers + self.cyclic_prefix_len
    }
}

/// Modulator/demodulator with cached FFT plans.
#[derive(Clone)]
pub struct DcoOfdm {
    cfg: DcoOfdmConfig,
    inverse: Arc<dyn Fft<f64>>,
    forward: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DcoOfdm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DcoOfdm").field("cfg", &self.cfg).finish()
    }
}

impl DcoOfdm {
    pub fn new(cfg: DcoOfdmConfig) -> Result<Self, LinkError> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            inverse: planner.plan_fft_inverse(cfg.n_subcarriers),
            forward: planner.plan_fft_forward(cfg.n_subcarriers),
            cfg,
        })
    }

    pub fn config(&self) -> &DcoOfdmConfig {
        &self.cfg
    }

    /// Hermitian mapping followed by the unitary inverse DFT. The imaginary
    /// part of the result is rounding residue only.
    pub(crate) fn time_domain(&self, data: &[Complex64]) -> Vec<Complex64> {
        let n = self.cfg.n_subcarriers;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (k, &d) in data.iter().enumerate() {
            buf[k + 1] = d;
            buf[n - k - 1] = d.conj();
        }
        self.inverse.process(&mut buf);
        let norm = 1.0 / (n as f64).sqrt();
        buf.iter_mut().for_each(|v| *v *= norm);
        buf
    }

    /// Maps complex data symbols to a real, clipped, biased sample stream.
    pub fn modulate(&self, symbols: &[Complex64]) -> Result<Vec<f64>, LinkError> {
        let slots = self.cfg.data_slots();
        if !symbols.len().is_multiple_of(slots) {
            return Err(LinkError::Length(format!(
                "{} symbols do not fill whole OFDM symbols of {slots} slots",
                symbols.len()
            )));
        }
        let n = self.cfg.n_subcarriers;
        let cp = self.cfg.cyclic_prefix_len;
        let mut out = Vec::with_capacity(symbols.len() / slots * self.cfg.symbol_len());
        for chunk in symbols.chunks(slots) {
            let x: Vec<f64> = self.time_domain(chunk).iter().map(|v| v.re).collect();
            let bias = match self.cfg.dc_bias {
                DcBias::Fixed(b) => b,
                DcBias::StdMultiple(k) => {
                    let mean = x.iter().sum::<f64>() / n as f64;
                    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                    k * var.sqrt()
                }
            };
            let floor = self.cfg.clip_floor;
            out.extend(
                x[n - cp..]
                    .iter()
                    .chain(&x)
                    .map(|v| (v + bias).max(floor)),
            );
        }
        Ok(out)
    }

    /// Strips the cyclic prefix and bias, applies the unitary DFT and returns
    /// the data subcarriers.
    pub fn demodulate(&self, samples: &[f64]) -> Result<Vec<Complex64>, LinkError> {
        let sym_len = self.cfg.symbol_len();
        if !samples.len().is_multiple_of(sym_len) {
            return Err(LinkError::Length(format!(
                "{} samples are not a multiple of the symbol length {sym_len}",
                samples.len()
            )));
        }
        let n = self.cfg.n_subcarriers;
        let cp = self.cfg.cyclic_prefix_len;
        // A per-symbol adaptive bias lands on subcarrier 0 only, which is discarded.
        let bias = match self.cfg.dc_bias {
            DcBias::Fixed(b) => b,
            DcBias::StdMultiple(_) => 0.0,
        };
        let norm = 1.0 / (n as f64).sqrt();
        let mut out = Vec::with_capacity(samples.len() / sym_len * self.cfg.data_slots());
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for sym in samples.chunks(sym_len) {
            for (b, &s) in buf.iter_mut().zip(&sym[cp..]) {
                *b = Complex64::new(s - bias, 0.0);
            }
            self.forward.process(&mut buf);
            out.extend(buf[1..n / 2].iter().map(|v| v * norm));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, bias: f64, floor: f64) -> DcoOfdmConfig {
        DcoOfdmConfig {
            n_subcarriers: n,
            dc_bias: DcBias::Fixed(bias),
            clip_floor: floor,
            cyclic_prefix_len: 4,
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(DcoOfdm::new(cfg(4, 0.0, 0.0)).is_err());
        assert!(DcoOfdm::new(cfg(24, 0.0, 0.0)).is_err());
        let mut c = cfg(16, 0.0, 0.0);
        c.cyclic_prefix_len = 16;
        assert!(DcoOfdm::new(c).is_err());
    }

    #[test]
    fn zero_data_gives_constant_bias() {
        let m = DcoOfdm::new(cfg(16, 0.7, 0.0)).unwrap();
        let out = m.modulate(&vec![Complex64::new(0.0, 0.0); 14]).unwrap();
        assert_eq!(out.len(), 2 * 20);
        assert!(out.iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn single_tone_is_a_cosine() {
        let n = 16;
        let m = DcoOfdm::new(cfg(n, 0.0, -10.0)).unwrap();
        let a = Complex64::new(0.6, -0.3);
        let mut data = vec![Complex64::new(0.0, 0.0); 7];
        data[0] = a;
        let out = m.modulate(&data).unwrap();
        let body = &out[4..];
        for (i, &v) in body.iter().enumerate() {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let expected = 2.0 / (n as f64).sqrt() * (a.re * theta.cos() - a.im * theta.sin());
            assert!((v - expected).abs() < 1e-12, "{i}: {v} vs {expected}");
        }
        // Cyclic prefix copies the tail.
        assert_eq!(&out[..4], &body[n - 4..]);
    }

    #[test]
    fn wrong_lengths() {
        let m = DcoOfdm::new(cfg(16, 0.0, 0.0)).unwrap();
        assert!(m.modulate(&[Complex64::new(1.0, 0.0); 5]).is_err());
        assert!(m.demodulate(&[0.0; 19]).is_err());
    }

    #[test]
    fn adaptive_bias_clips_rarely() {
        let c = DcoOfdmConfig::default();
        let m = DcoOfdm::new(c).unwrap();
        let q = super::super::QamOrder::Qam4;
        let data: Vec<_> = (0..c.data_slots() * 50).map(|k| q.map((k * 7 % 4) as u32)).collect();
        let out = m.modulate(&data).unwrap();
        assert!(out.iter().all(|&v| v >= 0.0));
    }
}
