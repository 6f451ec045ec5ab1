//! Memoryless loudspeaker distortions applied to the far-end signal.

use crate::audio::Waveform;

pub const DEFAULT_CLIP_RATIO: f64 = 0.8;

/// Soft clipping `x_max·x / sqrt(x_max² + x²)` with `x_max = ratio · max|x|`.
///
/// An all-zero input has `x_max = 0` and maps to zeros.
pub fn soft_clip(x: &Waveform, ratio: f64) -> Waveform {
    assert!(
        ratio > 0.0 && ratio <= 1.0,
        "clip ratio must lie in (0, 1], got {ratio}"
    );
    let x_max = ratio * x.peak();
    let samples = if x_max == 0.0 {
        vec![0.0; x.len()]
    } else {
        x.samples
            .iter()
            .map(|&v| soft_clip_sample(v, x_max))
            .collect()
    };
    Waveform::new(samples, x.sample_rate)
}

#[inline]
pub fn soft_clip_sample(v: f64, x_max: f64) -> f64 {
    // hypot avoids overflow of v² for large inputs
    x_max * v / x_max.hypot(v)
}

/// Sigmoidal loudspeaker model. The steeper branch (a = 4) applies only for
/// b > 0; b = 0 falls on the a = 2 branch.
#[inline]
pub fn loudspeaker_sample(x: f64) -> f64 {
    let b = 1.5 * x - 0.3 * x * x;
    let a = if b > 0.0 { 4.0 } else { 2.0 };
    1.0 / (1.0 + (-a * b).exp()) - 0.5
}

pub fn loudspeaker_nl(x: &Waveform) -> Waveform {
    Waveform::new(
        x.samples.iter().map(|&v| loudspeaker_sample(v)).collect(),
        x.sample_rate,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, 16000)
    }

    #[test]
    fn clip_examples() {
        assert_eq!(soft_clip_sample(0.0, 0.8), 0.0);
        let w = soft_clip(&wave(vec![1.0, 0.8, -1.0]), 0.8);
        assert!((w.samples[1] - 0.8 / 2f64.sqrt()).abs() < 1e-12);
        assert!((w.samples[1] - 0.56569).abs() < 1e-5);
        assert!((soft_clip_sample(10.0, 0.8) - 8.0 / 100.64f64.sqrt()).abs() < 1e-12);
        assert!((soft_clip_sample(10.0, 0.8) - 0.79745).abs() < 1e-5);
        assert_eq!(soft_clip(&wave(vec![0.0; 5]), 0.8).samples, vec![0.0; 5]);
    }

    #[test]
    fn nl_examples() {
        assert_eq!(loudspeaker_sample(0.0), 0.0);
        assert!((loudspeaker_sample(1.0) - 0.49184).abs() < 1e-5);
        assert!((loudspeaker_sample(-1.0) + 0.47340).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn clip_odd_monotone_bounded(a in -50.0f64..50.0, b in -50.0f64..50.0, xm in 0.01f64..2.0) {
            let fa = soft_clip_sample(a, xm);
            prop_assert!(fa.abs() < xm);
            prop_assert_eq!(soft_clip_sample(-a, xm), -fa);
            if a < b {
                prop_assert!(fa < soft_clip_sample(b, xm));
            }
        }

        #[test]
        fn nl_range(x in -3.0f64..3.0) {
            let y = loudspeaker_sample(x);
            prop_assert!(y > -0.5 && y < 0.5);
        }
    }
}
