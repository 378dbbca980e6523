//! Hard-decision successive interference cancellation.

use num_complex::Complex64;

use super::{LinkError, QamOrder};

/// One superposed layer as seen by the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SicLayer {
    pub user_id: usize,
    /// Allocated power (not normalized).
    pub power: f64,
    pub qam: QamOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedStream {
    pub user_id: usize,
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SicResult {
    /// Streams in decoding order; the last one belongs to the receiver's user.
    pub streams: Vec<DecodedStream>,
    /// Mean residual energy per symbol after each cancellation stage.
    pub cancellation_error_power: Vec<f64>,
    /// `success[k]` is true when layer `k` was detected by this receiver.
    pub success: Vec<bool>,
}

impl SicResult {
    pub fn own(&self) -> &DecodedStream {
        self.streams.last().expect("own stream is always decoded")
    }
}

/// Decodes `own_user` from `received` by detecting and subtracting every
/// higher-power layer first.
///
/// Layers are processed in descending power; equal powers keep their order in
/// `layers`. `gain_hat` is the receiver's estimate of its own channel gain.
/// A fraction `residual` of every reconstructed layer is left behind in the
/// subtraction to model imperfect cancellation.
pub fn sic_decode(
    received: &[Complex64],
    gain_hat: f64,
    layers: &[SicLayer],
    own_user: usize,
    residual: f64,
) -> Result<SicResult, LinkError> {
    if !layers.iter().any(|l| l.user_id == own_user) {
        return Err(LinkError::UnknownUser(own_user));
    }
    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.sort_by(|&a, &b| layers[b].power.total_cmp(&layers[a].power).then(a.cmp(&b)));

    let mut remaining = received.to_vec();
    let mut streams = Vec::new();
    let mut errors = Vec::new();
    let mut success = vec![false; layers.len()];
    for k in order {
        let layer = layers[k];
        let amp = gain_hat * layer.power.sqrt();
        let labels: Vec<u32> = remaining.iter().map(|&r| layer.qam.detect(r / amp)).collect();
        success[k] = true;
        let done = layer.user_id == own_user;
        streams.push(DecodedStream {
            user_id: layer.user_id,
            labels,
        });
        if done {
            break;
        }
        let keep = 1.0 - residual;
        let labels = &streams.last().expect("just pushed").labels;
        for (r, &s) in remaining.iter_mut().zip(labels) {
            *r -= layer.qam.map(s) * (amp * keep);
        }
        let energy =
            remaining.iter().map(|r| r.norm_sqr()).sum::<f64>() / remaining.len().max(1) as f64;
        errors.push(energy);
    }
    Ok(SicResult {
        streams,
        cancellation_error_power: errors,
        success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noma_link::{superpose, UserSignal};
    use crate::rng;

    fn layers(powers: &[f64]) -> Vec<SicLayer> {
        powers
            .iter()
            .enumerate()
            .map(|(i, &p)| SicLayer {
                user_id: i,
                power: p,
                qam: QamOrder::Qam4,
            })
            .collect()
    }

    fn transmit(sigs: &[UserSignal], powers: &[f64], h: f64) -> Vec<Complex64> {
        let total: f64 = powers.iter().sum();
        superpose(sigs, powers)
            .unwrap()
            .iter()
            .map(|s| s * (h * total.sqrt()))
            .collect()
    }

    #[test]
    fn two_users_noiseless_recovery() {
        let q = QamOrder::Qam4;
        let powers = [2.0 / 3.0, 1.0 / 3.0];
        // All 16 label pairs.
        let a: Vec<u32> = (0..16).map(|k| k / 4).collect();
        let b: Vec<u32> = (0..16).map(|k| k % 4).collect();
        let sigs = [
            UserSignal::from_labels(0, q, a.clone()),
            UserSignal::from_labels(1, q, b.clone()),
        ];
        let rx = transmit(&sigs, &powers, 0.7);
        let r0 = sic_decode(&rx, 0.7, &layers(&powers), 0, 0.0).unwrap();
        assert_eq!(r0.own().labels, a);
        assert_eq!(r0.streams.len(), 1);
        assert_eq!(r0.success, vec![true, false]);
        let r1 = sic_decode(&rx, 0.7, &layers(&powers), 1, 0.0).unwrap();
        assert_eq!(r1.streams[0].labels, a);
        assert_eq!(r1.own().labels, b);
        assert_eq!(r1.cancellation_error_power.len(), 1);
    }

    #[test]
    fn decode_order_follows_power_not_position() {
        let q = QamOrder::Qam4;
        let powers = [0.2, 0.8];
        let sigs = [
            UserSignal::from_labels(0, q, vec![1, 2, 3]),
            UserSignal::from_labels(1, q, vec![3, 0, 2]),
        ];
        let rx = transmit(&sigs, &powers, 1.0);
        let r = sic_decode(&rx, 1.0, &layers(&powers), 0, 0.0).unwrap();
        assert_eq!(r.streams[0].user_id, 1);
        assert_eq!(r.own().labels, vec![1, 2, 3]);
    }

    #[test]
    fn unknown_user() {
        assert_eq!(
            sic_decode(&[], 1.0, &layers(&[0.6, 0.4]), 7, 0.0),
            Err(LinkError::UnknownUser(7))
        );
    }

    /// Brute force over every 4-QAM label combination for up to three users
    /// with FPA alpha = 0.25 amplitudes (each twice the next).
    #[test]
    fn fpa_quarter_exhaustive() {
        let q = QamOrder::Qam4;
        for n in 1..=3usize {
            let powers = crate::power_allocation::fpa(0.25, n, 1.0).unwrap();
            let combos = 4usize.pow(n as u32);
            let labels: Vec<Vec<u32>> = (0..n)
                .map(|u| (0..combos).map(|c| (c / 4usize.pow(u as u32) % 4) as u32).collect())
                .collect();
            let sigs: Vec<_> = labels
                .iter()
                .enumerate()
                .map(|(u, l)| UserSignal::from_labels(u, q, l.clone()))
                .collect();
            let rx = transmit(&sigs, powers.powers(), 1.0);
            for (u, l) in labels.iter().enumerate() {
                let r = sic_decode(&rx, 1.0, &layers(powers.powers()), u, 0.0).unwrap();
                assert_eq!(&r.own().labels, l, "n={n} user={u}");
            }
        }
    }

    #[test]
    fn fpa_quarter_four_users_randomized() {
        let q = QamOrder::Qam4;
        let powers = crate::power_allocation::fpa(0.25, 4, 1.0).unwrap();
        let mut r = rng::stream(11, &[]);
        let sigs: Vec<_> = (0..4).map(|u| UserSignal::random(u, q, 512, &mut r)).collect();
        let rx = transmit(&sigs, powers.powers(), 0.3);
        for s in &sigs {
            let d = sic_decode(&rx, 0.3, &layers(powers.powers()), s.user_id, 0.0).unwrap();
            assert_eq!(d.own().labels, s.labels);
        }
    }

    #[test]
    fn equal_powers_fail_under_noise() {
        use rand_distr::{Distribution, Normal};
        let q = QamOrder::Qam4;
        let powers = [0.5, 0.5];
        let mut r = rng::stream(5, &[]);
        let sigs: Vec<_> = (0..2).map(|u| UserSignal::random(u, q, 4000, &mut r)).collect();
        // 20 dB: per-dimension noise variance 0.005.
        let noise = Normal::new(0.0, (0.01f64 / 2.0).sqrt()).unwrap();
        let rx: Vec<Complex64> = transmit(&sigs, &powers, 1.0)
            .into_iter()
            .map(|s| s + Complex64::new(noise.sample(&mut r), noise.sample(&mut r)))
            .collect();
        let d = sic_decode(&rx, 1.0, &layers(&powers), 0, 0.0).unwrap();
        let errors = d
            .own()
            .labels
            .iter()
            .zip(&sigs[0].labels)
            .filter(|(a, b)| a != b)
            .count();
        assert!(errors > 0);
    }

    #[test]
    fn residual_fraction_leaves_energy() {
        let q = QamOrder::Qam4;
        let powers = [0.8, 0.2];
        let sigs = [
            UserSignal::from_labels(0, q, vec![0, 1, 2, 3]),
            UserSignal::from_labels(1, q, vec![0, 0, 0, 0]),
        ];
        let rx = transmit(&sigs, &powers, 1.0);
        let clean = sic_decode(&rx, 1.0, &layers(&powers), 1, 0.0).unwrap();
        let dirty = sic_decode(&rx, 1.0, &layers(&powers), 1, 0.1).unwrap();
        assert!((clean.cancellation_error_power[0] - 0.2).abs() < 1e-12);
        assert!(dirty.cancellation_error_power[0] > clean.cancellation_error_power[0]);
    }
}
