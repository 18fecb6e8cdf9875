//! Episode-level statistics and the table arithmetic used in reports.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two points")]
    TooShort,
    #[error("zero variance, correlation undefined")]
    Degenerate,
}

/// Trailing moving average; the first `window − 1` points average what is available.
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= w {
            sum -= series[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Trailing sample standard deviation; a single point has deviation 0.
pub fn rolling_std(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..series.len())
        .map(|i| {
            let slice = &series[(i + 1).saturating_sub(w)..=i];
            sample_std(slice)
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// `100·(1 − min(e/e_max, 1))`.
pub fn tracking_efficiency(mean_error: f64, e_max: f64) -> f64 {
    100.0 * (1.0 - (mean_error / e_max).min(1.0))
}

/// Mean of the relative reward gain and the relative error reduction, in percent.
pub fn combined_gain(reward: f64, reward_base: f64, error: f64, error_base: f64) -> f64 {
    0.5 * (100.0 * (reward - reward_base) / reward_base + 100.0 * (error_base - error) / error_base)
}

/// First episode whose 50-smoothed return reaches `fraction` of the final
/// level (mean of the last 100 smoothed values). `None` if never reached.
pub fn convergence_episode(rewards: &[f64], fraction: f64) -> Option<usize> {
    if rewards.is_empty() {
        return None;
    }
    let s = smooth(rewards, 50);
    let tail = &s[s.len().saturating_sub(100)..];
    let target = fraction * mean(tail);
    s.iter().position(|v| *v >= target)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooShort);
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Degenerate);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smooth_examples() {
        assert_eq!(smooth(&[3.0; 10], 4), vec![3.0; 10]);
        let xs = [1.0, 5.0, -2.0, 7.5];
        assert_eq!(smooth(&xs, 1), xs.to_vec());
        assert_eq!(smooth(&[2.0, 4.0, 6.0], 2), vec![2.0, 3.0, 5.0]);
    }

    #[test]
    fn step_crosses_half_after_window_midpoint() {
        for k in [50usize, 60, 200] {
            let series: Vec<f64> = (0..400).map(|i| if i >= k { 1.0 } else { 0.0 }).collect();
            let s = smooth(&series, 50);
            assert_eq!(s.iter().position(|v| *v >= 0.5), Some(k + 24));
        }
    }

    #[test]
    fn rolling_std_examples() {
        assert!(rolling_std(&[2.0; 20], 5).iter().all(|v| *v == 0.0));
        assert!(rolling_std(&[1.0, 9.0, -4.0], 1).iter().all(|v| *v == 0.0));
        let alt: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let r = rolling_std(&alt, 2);
        for v in &r[1..] {
            assert!((v - 2f64.sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(pearson(&x, &[1.0; 4]), Err(MetricError::Degenerate));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(MetricError::TooShort));
        assert_eq!(pearson(&x, &[1.0]), Err(MetricError::LengthMismatch(4, 1)));
    }

    #[test]
    fn efficiency_and_gain() {
        assert_eq!(tracking_efficiency(0.0, 3.0), 100.0);
        assert_eq!(tracking_efficiency(5.0, 1.0), 0.0);
        assert!((tracking_efficiency(0.0618, 1.0) - 93.8).abs() < 0.05);
        assert_eq!(combined_gain(10.0, 10.0, 0.2, 0.2), 0.0);
        assert!((combined_gain(909.2, 825.1, 0.0315, 0.0618) - 29.6).abs() < 0.05);
        assert!((combined_gain(881.0, 825.1, 0.0479, 0.0618) - 14.6).abs() < 0.05);
    }

    #[test]
    fn convergence_examples() {
        assert_eq!(convergence_episode(&[5.0; 300], 0.95), Some(0));
        let ramp: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let s = smooth(&ramp, 50);
        let target = 0.95 * mean(&s[900..]);
        let brute = (0..1000).find(|&i| s[i] >= target);
        assert_eq!(convergence_episode(&ramp, 0.95), brute);
        assert!(brute.unwrap() > 800);
        // Negative returns never reach a larger multiple of themselves.
        assert_eq!(convergence_episode(&[-1.0; 200], 0.5), None);
        assert_eq!(convergence_episode(&[], 0.9), None);
    }

    proptest! {
        #[test]
        fn smooth_stays_within_range(xs in prop::collection::vec(-100.0f64..100.0, 1..200), w in 1usize..60) {
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in smooth(&xs, w) {
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }

        #[test]
        fn pearson_bounded(xs in prop::collection::vec(-10.0f64..10.0, 3..30), seed in 0u64..1000) {
            let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * ((seed + i as u64) % 7) as f64 - i as f64).collect();
            if let Ok(r) = pearson(&xs, &ys) {
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
