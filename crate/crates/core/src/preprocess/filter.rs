//! Butterworth band-pass design and zero-phase application.
//!
//! The design path is the classic analog-prototype route: prototype poles on
//! the unit circle, low-pass to band-pass transform with prewarped edges,
//! bilinear transform, then pairing into second-order sections. Filtering
//! runs each biquad in transposed direct form II, forward and backward, with
//! odd-reflection padding and steady-state initial conditions so edges stay
//! transient-free.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::math;

/// One second-order section, denominator normalised to `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// `[a1, a2]`.
    pub a: [f64; 2],
}

impl Biquad {
    /// Response to a constant unit input.
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Complex frequency response at `z = exp(i 2π f / fs)`.
    pub fn response(&self, f_hz: f64, fs_hz: f64) -> Complex64 {
        let w = 2.0 * core::f64::consts::PI * f_hz / fs_hz;
        let zinv = Complex64::new(math::cos(-w), math::sin(-w));
        let num = Complex64::new(self.b[0], 0.0) + (Complex64::new(self.b[1], 0.0) + self.b[2] * zinv) * zinv;
        let den = Complex64::new(1.0, 0.0) + (Complex64::new(self.a[0], 0.0) + self.a[1] * zinv) * zinv;
        num / den
    }
}

/// Cascade frequency response.
pub fn cascade_response(sections: &[Biquad], f_hz: f64, fs_hz: f64) -> Complex64 {
    sections
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(f_hz, fs_hz))
}

/// Butterworth band-pass of the given prototype order as second-order
/// sections. Preconditions (checked by the caller): `order >= 1` and
/// `0 < low < high < fs / 2`.
pub fn butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs_hz: f64) -> Vec<Biquad> {
    debug_assert!(order >= 1);
    debug_assert!(0.0 < low_hz && low_hz < high_hz && high_hz < fs_hz / 2.0);
    let pi = core::f64::consts::PI;

    // Prewarp the band edges so the bilinear transform lands them exactly.
    let fs2 = 2.0 * fs_hz;
    let wl = fs2 * math::tan(pi * low_hz / fs_hz);
    let wh = fs2 * math::tan(pi * high_hz / fs_hz);
    let bw = wh - wl;
    let wo = math::sqrt(wl * wh);

    // Analog low-pass prototype: poles evenly spaced on the left unit
    // semicircle, unit gain.
    let mut proto = Vec::with_capacity(order);
    for k in 0..order {
        let theta = pi * (2 * k + order + 1) as f64 / (2 * order) as f64;
        proto.push(Complex64::new(math::cos(theta), math::sin(theta)));
    }

    // Low-pass to band-pass: each prototype pole splits in two; `order`
    // zeros appear at s = 0; gain picks up bw^order.
    let mut poles = Vec::with_capacity(2 * order);
    for p in proto {
        let ps = p * (bw / 2.0);
        let d = (ps * ps - Complex64::new(wo * wo, 0.0)).sqrt();
        poles.push(ps + d);
        poles.push(ps - d);
    }
    let mut gain = math::powf(bw, order as f64);

    // Bilinear transform. The `order` analog zeros at s = 0 map to z = +1;
    // the remaining `order` zeros of the degree deficit land at z = -1, so
    // every section gets one of each and a numerator proportional to z² - 1.
    // Gain update: k * Re( prod(fs2 - z_analog) / prod(fs2 - p_analog) ).
    let mut den = Complex64::new(1.0, 0.0);
    let mut zpoles = Vec::with_capacity(2 * order);
    for p in poles {
        den *= Complex64::new(fs2, 0.0) - p;
        zpoles.push((Complex64::new(fs2, 0.0) + p) / (Complex64::new(fs2, 0.0) - p));
    }
    gain *= (Complex64::new(math::powf(fs2, order as f64), 0.0) / den).re;

    // Pair poles into sections: conjugate pairs first, leftover real poles
    // (wide bands can produce them) paired among themselves. Sorting keeps
    // the construction deterministic.
    let mut complex_poles: Vec<Complex64> =
        zpoles.iter().copied().filter(|p| p.im > 1e-12).collect();
    let mut real_poles: Vec<f64> = zpoles
        .iter()
        .copied()
        .filter(|p| math::abs(p.im) <= 1e-12)
        .map(|p| p.re)
        .collect();
    complex_poles.sort_by(|a, b| {
        (a.re, a.im).partial_cmp(&(b.re, b.im)).expect("finite poles")
    });
    real_poles.sort_by(|a, b| a.partial_cmp(b).expect("finite poles"));

    let n_sections = order;
    debug_assert_eq!(complex_poles.len() * 2 + real_poles.len(), 2 * order);
    // Spread the gain magnitude evenly across sections; a negative overall
    // gain flips one numerator so the product keeps the sign.
    let g = math::powf(math::abs(gain), 1.0 / n_sections as f64);

    let mut sections = Vec::with_capacity(n_sections);
    for p in complex_poles {
        sections.push(Biquad { b: [g, 0.0, -g], a: [-2.0 * p.re, p.norm_sqr()] });
    }
    let mut reals = real_poles.chunks_exact(2);
    for pair in &mut reals {
        sections.push(Biquad {
            b: [g, 0.0, -g],
            a: [-(pair[0] + pair[1]), pair[0] * pair[1]],
        });
    }
    debug_assert!(reals.remainder().is_empty());
    debug_assert_eq!(sections.len(), n_sections);
    if gain < 0.0 {
        for v in &mut sections[0].b {
            *v = -*v;
        }
    }
    sections
}

/// Samples of padding filtfilt reflects on each side.
pub fn pad_len(sections: &[Biquad]) -> usize {
    (12 * sections.len() + 3).max(64)
}

/// Run the cascade once, left to right, over `buf` in place. Initial state
/// per section is the constant-input steady state scaled to the first
/// sample, which suppresses the startup transient.
fn cascade_in_place(sections: &[Biquad], buf: &mut [f64]) {
    let mut scale = buf[0];
    for s in sections {
        let [b0, b1, b2] = s.b;
        let [a1, a2] = s.a;
        let h1 = s.dc_gain();
        let mut s1 = (h1 - b0) * scale;
        let mut s2 = (b2 - a2 * h1) * scale;
        for v in buf.iter_mut() {
            let x = *v;
            let y = b0 * x + s1;
            s1 = b1 * x - a1 * y + s2;
            s2 = b2 * x - a2 * y;
            *v = y;
        }
        scale *= h1;
    }
}

/// Zero-phase filtering: odd-reflection pad, filter forward, filter the
/// reversal, trim. Returns `None` when the input is too short to pad
/// (`len <= pad_len`).
pub fn filtfilt(sections: &[Biquad], x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len();
    let pad = pad_len(sections);
    if n <= pad {
        return None;
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let first = x[0];
    let last = x[n - 1];
    for i in 0..pad {
        ext.push(2.0 * first - x[pad - i]);
    }
    ext.extend_from_slice(x);
    for i in 0..pad {
        ext.push(2.0 * last - x[n - 2 - i]);
    }

    cascade_in_place(sections, &mut ext);
    ext.reverse();
    cascade_in_place(sections, &mut ext);
    ext.reverse();

    Some(ext[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn defaults() -> Vec<Biquad> {
        butterworth_bandpass(4, 4.0, 38.0, 256.0)
    }

    /// Amplitude of the `f` component over `x`, assuming an integer number
    /// of cycles fits the slice.
    fn tone_amplitude(x: &[f64], f: f64, fs: f64) -> f64 {
        let n = x.len() as f64;
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let (mut c, mut s) = (0.0, 0.0);
        for (t, &v) in x.iter().enumerate() {
            c += v * (w * t as f64).cos();
            s += v * (w * t as f64).sin();
        }
        (2.0 / n) * (c * c + s * s).sqrt()
    }

    #[test]
    fn sections_are_stable() {
        for s in defaults() {
            // Poles inside the unit circle: |a2| < 1 and |a1| < 1 + a2.
            assert!(s.a[1].abs() < 1.0, "a2 = {}", s.a[1]);
            assert!(s.a[0].abs() < 1.0 + s.a[1], "a1 = {}, a2 = {}", s.a[0], s.a[1]);
        }
    }

    #[test]
    fn response_matches_butterworth_magnitude() {
        // |H|² of an order-N Butterworth band-pass at the prewarped analog
        // frequency u: 1 / (1 + ((u² - wo²)/(bw u))^{2N}).
        let sections = defaults();
        let (fs, low, high, order) = (256.0, 4.0, 38.0, 4);
        let fs2 = 2.0 * fs;
        let wl = fs2 * (std::f64::consts::PI * low / fs).tan();
        let wh = fs2 * (std::f64::consts::PI * high / fs).tan();
        let (bw, wo2) = (wh - wl, wl * wh);
        for f in [2.0, 4.0, 6.0, 10.0, 21.0, 30.0, 38.0, 45.0, 60.0] {
            let u = fs2 * (std::f64::consts::PI * f / fs).tan();
            let x = (u * u - wo2) / (bw * u);
            let expected = 1.0 / (1.0 + x.powi(2 * order)).sqrt();
            let got = cascade_response(&sections, f, fs).norm();
            assert!(
                (got - expected).abs() < 1e-9 * expected.max(1e-12) + 1e-12,
                "f = {f}: got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn band_edges_sit_at_half_power() {
        let sections = defaults();
        for f in [4.0, 38.0] {
            let g = cascade_response(&sections, f, 256.0).norm();
            assert!((g - 0.5f64.sqrt()).abs() < 1e-9, "edge gain at {f} Hz: {g}");
        }
    }

    #[test]
    fn filtfilt_passes_10hz_and_kills_1hz() {
        let sections = defaults();
        let fs = 256.0;
        let n = 2048;
        for (f, keep) in [(10.0, true), (1.0, false)] {
            let x: Vec<f64> = (0..n)
                .map(|t| (2.0 * std::f64::consts::PI * f * t as f64 / fs).sin())
                .collect();
            let y = filtfilt(&sections, &x).unwrap();
            let mid = &y[512..1536];
            let amp = tone_amplitude(mid, f, fs);
            if keep {
                assert!((amp - 1.0).abs() < 0.02, "10 Hz amplitude {amp}");
            } else {
                assert!(amp < 0.01, "1 Hz amplitude {amp}"); // > 40 dB down
            }
        }
    }

    #[test]
    fn filtfilt_has_zero_phase_at_10hz() {
        let sections = defaults();
        let fs = 256.0;
        let f = 10.0;
        let n = 2048;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * f * t as f64 / fs).sin())
            .collect();
        let y = filtfilt(&sections, &x).unwrap();
        let w = 2.0 * std::f64::consts::PI * f / fs;
        let (mut cs, mut ss) = (0.0, 0.0);
        for t in 512..1536 {
            cs += y[t] * (w * t as f64).cos();
            ss += y[t] * (w * t as f64).sin();
        }
        // Input is a pure sine: the cosine projection measures the phase
        // error of the filtered output.
        let phase = cs.atan2(ss);
        assert!(phase.abs() < 1e-6, "phase shift {phase} rad");
    }

    #[test]
    fn spectrum_ratio_matches_squared_response() {
        let sections = defaults();
        let fs = 256.0;
        let n = 4096;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = filtfilt(&sections, &x).unwrap();
        // Bins k·fs/n; compare in-band bins away from the edges.
        for k in [160, 240, 320, 480] {
            let f = k as f64 * fs / n as f64; // 10, 15, 20, 30 Hz
            let ax = tone_amplitude(&x, f, fs);
            let ay = tone_amplitude(&y, f, fs);
            let expected = cascade_response(&sections, f, fs).norm_sqr();
            assert!(
                (ay / ax - expected).abs() < 0.05 * expected + 0.01,
                "bin {k}: ratio {} vs |H|² {expected}",
                ay / ax
            );
        }
    }

    #[test]
    fn zero_and_constant_inputs_come_out_flat() {
        let sections = defaults();
        let zeros = vec![0.0; 512];
        let y = filtfilt(&sections, &zeros).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));

        let constant = vec![7.5; 512];
        let y = filtfilt(&sections, &constant).unwrap();
        for &v in &y {
            assert!(v.abs() < 1e-9, "constant leak {v}");
        }
    }

    #[test]
    fn filtfilt_is_linear() {
        let sections = defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let combo: Vec<f64> = x.iter().zip(&z).map(|(a, b)| 2.5 * a - 0.75 * b).collect();
        let fx = filtfilt(&sections, &x).unwrap();
        let fz = filtfilt(&sections, &z).unwrap();
        let fc = filtfilt(&sections, &combo).unwrap();
        for t in 0..n {
            let lin = 2.5 * fx[t] - 0.75 * fz[t];
            assert!((fc[t] - lin).abs() < 1e-9, "t = {t}: {} vs {lin}", fc[t]);
        }
    }

    #[test]
    fn too_short_input_is_rejected() {
        let sections = defaults();
        assert!(filtfilt(&sections, &vec![1.0; pad_len(&sections)]).is_none());
        assert!(filtfilt(&sections, &vec![1.0; pad_len(&sections) + 1]).is_some());
    }
}
