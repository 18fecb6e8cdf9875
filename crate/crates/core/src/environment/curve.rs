//! Target curves on the wall plane and the prescribed UAV base path.
//!
//! Curves live in the vertical plane `y = 0` and run along +x from the
//! origin; the profile displaces them in z. The base flies parallel to the
//! wall at `y = −standoff`.

use std::f64::consts::{E, PI};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::geometry::LinkGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Straight,
    SingleCurve,
    NonuniformWave,
    SinusoidComposite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub kind: CurveKind,
    /// Peak displacement in meters.
    #[serde(default)]
    pub amplitude: f64,
    /// Spatial frequency in cycles per meter.
    #[serde(default)]
    pub frequency: f64,
    pub length: f64,
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
}

fn default_sample_count() -> usize {
    400
}

impl CurveSpec {
    pub fn new(kind: CurveKind, amplitude: f64, frequency: f64, length: f64) -> Self {
        Self { kind, amplitude, frequency, length, sample_count: default_sample_count() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(ConfigError::invalid("curve.length", "must be positive"));
        }
        if self.sample_count < 2 {
            return Err(ConfigError::invalid("curve.sample_count", "need at least two samples"));
        }
        if !self.amplitude.is_finite() || !self.frequency.is_finite() {
            return Err(ConfigError::invalid("curve", "amplitude and frequency must be finite"));
        }
        Ok(())
    }

    /// Vertical displacement at parameter `s`.
    fn profile(&self, s: f64) -> f64 {
        let a = self.amplitude;
        match self.kind {
            CurveKind::Straight => 0.0,
            CurveKind::SingleCurve => a * (PI * s / self.length).sin(),
            CurveKind::NonuniformWave => {
                let w = 2.0 * PI * self.frequency * s;
                0.5 * a * (w.sin() + (E * w).sin())
            }
            CurveKind::SinusoidComposite => a * (2.0 * PI * self.frequency * s).sin(),
        }
    }

    /// Point on the curve at parameter `s` (meters along the wall).
    pub fn point(&self, s: f64) -> Vector3<f64> {
        Vector3::new(s, 0.0, self.profile(s))
    }
}

/// A curve sampled on a uniform parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCurve {
    spec: CurveSpec,
    points: Vec<Vector3<f64>>,
    params: Vec<f64>,
    /// Cumulative polyline length at each sample.
    arc_lengths: Vec<f64>,
}

impl SampledCurve {
    pub fn spec(&self) -> &CurveSpec {
        &self.spec
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc_lengths
    }

    pub fn total_length(&self) -> f64 {
        *self.arc_lengths.last().expect("curve has samples")
    }

    fn spacing(&self) -> f64 {
        self.params[1] - self.params[0]
    }

    /// Point at a fraction of the total arc length, interpolated between samples.
    pub fn point_at_arc_fraction(&self, fraction: f64) -> Vector3<f64> {
        let target = fraction.clamp(0.0, 1.0) * self.total_length();
        let idx = self.arc_lengths.partition_point(|&l| l < target);
        if idx == 0 {
            return self.points[0];
        }
        if idx >= self.points.len() {
            return *self.points.last().unwrap();
        }
        let (l0, l1) = (self.arc_lengths[idx - 1], self.arc_lengths[idx]);
        let w = if l1 > l0 { (target - l0) / (l1 - l0) } else { 0.0 };
        self.points[idx - 1] * (1.0 - w) + self.points[idx] * w
    }
}

pub fn generate_curve(spec: &CurveSpec) -> Result<SampledCurve, ConfigError> {
    spec.validate()?;
    let n = spec.sample_count;
    let params: Vec<f64> = (0..n).map(|i| spec.length * i as f64 / (n - 1) as f64).collect();
    let points: Vec<Vector3<f64>> = params.iter().map(|&s| spec.point(s)).collect();
    let mut arc_lengths = Vec::with_capacity(n);
    let mut acc = 0.0;
    arc_lengths.push(0.0);
    for w in points.windows(2) {
        acc += (w[1] - w[0]).norm();
        arc_lengths.push(acc);
    }
    Ok(SampledCurve { spec: spec.clone(), points, params, arc_lengths })
}

/// Base positions for steps `0..=horizon`, moving at constant arc-length speed.
#[derive(Debug, Clone, PartialEq)]
pub struct BasePath {
    positions: Vec<Vector3<f64>>,
}

impl BasePath {
    pub fn position(&self, step: usize) -> Vector3<f64> {
        self.positions[step.min(self.positions.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn generate_base_path(
    curve: &SampledCurve,
    standoff: f64,
    horizon: usize,
    links: &LinkGeometry,
) -> Result<BasePath, ConfigError> {
    if !(standoff > 0.0) {
        return Err(ConfigError::invalid("standoff", "must be positive"));
    }
    if horizon == 0 {
        return Err(ConfigError::invalid("horizon", "must be at least one step"));
    }
    let offset = Vector3::new(0.0, -standoff, 0.0);
    let positions: Vec<Vector3<f64>> =
        (0..=horizon).map(|t| curve.point_at_arc_fraction(t as f64 / horizon as f64) + offset).collect();
    let reach_limit = 0.9 * links.reach();
    let worst = (0..=horizon)
        .map(|t| (curve.point_at_arc_fraction(t as f64 / horizon as f64) - positions[t]).norm())
        .fold(0.0, f64::max);
    if worst > reach_limit {
        return Err(ConfigError::invalid(
            "standoff",
            format!("base-to-curve distance {worst:.3} m exceeds 90% of arm reach ({reach_limit:.3} m)"),
        ));
    }
    Ok(BasePath { positions })
}

/// Closest point on the curve: coarse scan over samples, then a parabolic
/// fit of squared distance through the neighbouring samples.
pub fn nearest_point(p: &Vector3<f64>, curve: &SampledCurve) -> (f64, Vector3<f64>) {
    let pts = curve.points();
    let d2: Vec<f64> = pts.iter().map(|c| (c - p).norm_squared()).collect();
    let mut best = 0;
    for (i, &d) in d2.iter().enumerate() {
        if d < d2[best] {
            best = i;
        }
    }
    let n = pts.len();
    if n < 3 {
        return (curve.params()[best], pts[best]);
    }
    let centre = best.clamp(1, n - 2);
    let (dm, d0, dp) = (d2[centre - 1], d2[centre], d2[centre + 1]);
    let curvature = dm - 2.0 * d0 + dp;
    if curvature <= 0.0 {
        return (curve.params()[best], pts[best]);
    }
    let delta = (0.5 * (dm - dp) / curvature).clamp(-1.0, 1.0);
    let s = (curve.params()[centre] + delta * curve.spacing()).clamp(0.0, curve.spec().length);
    (s, curve.spec().point(s))
}

pub fn tracking_error(p: &Vector3<f64>, curve: &SampledCurve) -> f64 {
    (p - nearest_point(p, curve).1).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn straight(length: f64, samples: usize) -> SampledCurve {
        generate_curve(&CurveSpec { sample_count: samples, ..CurveSpec::new(CurveKind::Straight, 0.0, 0.0, length) })
            .unwrap()
    }

    #[test]
    fn straight_curve_samples() {
        let c = straight(2.0, 5);
        assert_eq!(c.params(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        for p in c.points() {
            assert_eq!(p.y, 0.0);
            assert_eq!(p.z, 0.0);
        }
        assert_relative_eq!(c.total_length(), 2.0);
    }

    #[test]
    fn zero_amplitude_matches_straight() {
        let s = straight(1.5, 50);
        for kind in [CurveKind::SingleCurve, CurveKind::NonuniformWave, CurveKind::SinusoidComposite] {
            let spec = CurveSpec { sample_count: 50, ..CurveSpec::new(kind, 0.0, 1.3, 1.5) };
            assert_eq!(generate_curve(&spec).unwrap().points(), s.points());
        }
    }

    #[test]
    fn nonuniform_wave_has_varying_curvature() {
        let spec = CurveSpec { sample_count: 200, ..CurveSpec::new(CurveKind::NonuniformWave, 0.1, 1.0, 2.0) };
        let c = generate_curve(&spec).unwrap();
        let second: Vec<f64> = c.points().windows(3).map(|w| w[0].z - 2.0 * w[1].z + w[2].z).collect();
        let max = second.iter().cloned().fold(f64::MIN, f64::max);
        let min = second.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min > 1e-4);
        // Not a pure sinusoid either: |z''| / |z| is not constant.
        let ratios: Vec<f64> =
            second.iter().zip(&c.points()[1..]).filter(|(_, p)| p.z.abs() > 1e-3).map(|(d, p)| d / p.z).collect();
        let spread = ratios.iter().cloned().fold(f64::MIN, f64::max) - ratios.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread > 1e-5);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_curve(&CurveSpec::new(CurveKind::Straight, 0.0, 0.0, 0.0)).is_err());
        assert!(generate_curve(&CurveSpec { sample_count: 1, ..CurveSpec::new(CurveKind::Straight, 0.0, 0.0, 1.0) })
            .is_err());
    }

    #[test]
    fn base_path_offsets_from_wall() {
        let c = straight(2.0, 100);
        let links = LinkGeometry::default();
        let path = generate_base_path(&c, 0.6, 10, &links).unwrap();
        assert_eq!(path.len(), 11);
        for t in 0..=10 {
            let p = path.position(t);
            assert_relative_eq!(p.y, -0.6);
            assert_relative_eq!(p.z, 0.0);
            assert_relative_eq!(p.x, 0.2 * t as f64, epsilon = 1e-12);
            let target = c.point_at_arc_fraction(t as f64 / 10.0);
            assert_relative_eq!((target - p).norm(), 0.6, epsilon = 1e-12);
        }
        assert!(generate_base_path(&c, 1.2, 10, &links).is_err());
        assert!(generate_base_path(&c, 0.95, 10, &links).is_err());
        assert!(generate_base_path(&c, 0.0, 10, &links).is_err());
    }

    #[test]
    fn base_path_constant_arc_speed() {
        let spec = CurveSpec { sample_count: 400, ..CurveSpec::new(CurveKind::SingleCurve, 0.3, 0.0, 2.0) };
        let c = generate_curve(&spec).unwrap();
        let path = generate_base_path(&c, 0.6, 40, &LinkGeometry::default()).unwrap();
        let steps: Vec<f64> = (0..40).map(|t| (path.position(t + 1) - path.position(t)).norm()).collect();
        let mean = steps.iter().sum::<f64>() / steps.len() as f64;
        for s in steps {
            assert!((s - mean).abs() / mean < 0.02);
        }
    }

    #[test]
    fn nearest_point_examples() {
        let c = straight(2.0, 5);
        let (s, p) = nearest_point(&Vector3::new(1.5, 0.0, 0.0), &c);
        assert_eq!(s, 1.5);
        assert_eq!(p, Vector3::new(1.5, 0.0, 0.0));
        assert_eq!(tracking_error(&Vector3::new(0.5, 0.0, 0.0), &c), 0.0);

        let (s, p) = nearest_point(&Vector3::new(0.75, 0.2, 0.0), &c);
        assert_relative_eq!(s, 0.75, epsilon = 1e-12);
        assert_relative_eq!(p, Vector3::new(0.75, 0.0, 0.0), epsilon = 1e-12);

        let c = straight(2.0, 400);
        let (s, p) = nearest_point(&Vector3::new(1.0, 0.3, 0.0), &c);
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(tracking_error(&Vector3::new(1.0, 0.3, 0.0), &c), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn refinement_beats_discretization_on_curves() {
        let spec = CurveSpec::new(CurveKind::SinusoidComposite, 0.2, 1.0, 2.0);
        let c = generate_curve(&spec).unwrap();
        // Dense brute force along the analytic curve.
        for &x in &[0.31, 0.77, 1.23, 1.9] {
            let p = Vector3::new(x, 0.15, 0.05);
            let brute =
                (0..200_001).map(|i| (spec.point(2.0 * i as f64 / 200_000.0) - p).norm()).fold(f64::MAX, f64::min);
            assert!((tracking_error(&p, &c) - brute).abs() < 1e-4);
        }
    }
}
