//! Weighted least-squares fit of `A cos^2(theta - phi) + B` to fringe data.
//!
//! The model is linear in `(c0, c1, c2)` after writing it as
//! `c0 + c1 cos 2theta + c2 sin 2theta`, with `A = 2 hypot(c1, c2)`,
//! `B = c0 - A/2` and `phi = atan2(c2, c1) / 2`. Visibility `A / (A + 2B)`
//! is then simply `hypot(c1, c2) / c0`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::reduce_degrees;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub amplitude: f64,
    pub offset: f64,
    /// Angle of maximum transmission, degrees in `[0, 180)`.
    pub phase_deg: f64,
    pub visibility: f64,
    pub sigma_visibility: f64,
    /// Weighted residual sum of squares.
    pub chi2: f64,
    pub dof: usize,
}

impl FringeFit {
    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            f64::NAN
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

/// Largest arc of `[0, 180)` covered by the angles, i.e. 180 minus the
/// widest gap between neighbours on the circle.
fn angular_span(angles: &[f64]) -> f64 {
    let mut a: Vec<f64> = angles.iter().map(|&t| reduce_degrees(t)).collect();
    a.sort_by(f64::total_cmp);
    let mut widest = a[0] + 180.0 - a[a.len() - 1];
    for w in a.windows(2) {
        widest = widest.max(w[1] - w[0]);
    }
    180.0 - widest
}

/// Fit `(angle_deg, count)` points with Poisson weights `1 / max(count, 1)`.
pub fn fit_fringe(points: &[(f64, f64)]) -> Result<FringeFit> {
    if points.len() < 4 {
        return Err(LabError::Degenerate(format!(
            "fringe fit needs at least 4 points, got {}",
            points.len()
        )));
    }
    for &(theta, y) in points {
        if !theta.is_finite() {
            return Err(LabError::NonFiniteAngle(theta));
        }
        if !y.is_finite() || y < 0.0 {
            return Err(LabError::Degenerate(format!(
                "fringe value {y} is not a non-negative number"
            )));
        }
    }
    let angles: Vec<f64> = points.iter().map(|p| p.0).collect();
    let span = angular_span(&angles);
    if span < 90.0 - 1e-9 {
        return Err(LabError::SingularFit(format!(
            "angles span {span:.3} deg, need at least 90"
        )));
    }

    let rows: Vec<(Vector3<f64>, f64, f64)> = points
        .iter()
        .map(|&(theta, y)| {
            let (s, c) = (2.0 * theta).to_radians().sin_cos();
            (Vector3::new(1.0, c, s), y, 1.0 / y.max(1.0))
        })
        .collect();

    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (x, y, w) in &rows {
        normal += *w * x * x.transpose();
        rhs += *w * *y * x;
    }
    let cov = normal
        .try_inverse()
        .ok_or_else(|| LabError::SingularFit("normal equations are singular".into()))?;
    let c = cov * rhs;

    let r = c[1].hypot(c[2]);
    if c[0] <= 0.0 {
        return Err(LabError::SingularFit(format!(
            "fitted mean level {} is not positive",
            c[0]
        )));
    }
    let visibility = r / c[0];
    let grad = if r > 0.0 {
        Vector3::new(-visibility / c[0], c[1] / (c[0] * r), c[2] / (c[0] * r))
    } else {
        Vector3::new(0.0, 1.0 / c[0], 0.0)
    };
    let var_v = (grad.transpose() * cov * grad)[(0, 0)].max(0.0);

    let chi2 = rows
        .iter()
        .map(|(x, y, w)| {
            let resid = y - x.dot(&c);
            w * resid * resid
        })
        .sum();

    Ok(FringeFit {
        amplitude: 2.0 * r,
        offset: c[0] - r,
        phase_deg: reduce_degrees(0.5 * c[2].atan2(c[1]).to_degrees()),
        visibility,
        sigma_visibility: var_v.sqrt(),
        chi2,
        dof: points.len() - 3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(a: f64, b: f64, phi: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 180.0 / n as f64;
                (t, a * (t - phi).to_radians().cos().powi(2) + b)
            })
            .collect()
    }

    #[test]
    fn pure_cos2_has_unit_visibility() {
        let fit = fit_fringe(&synth(1000.0, 0.0, 30.0, 12)).unwrap();
        assert!((fit.visibility - 1.0).abs() < 1e-12);
        assert!((fit.amplitude - 1000.0).abs() < 1e-9);
        assert!(fit.offset.abs() < 1e-9);
        assert!((fit.phase_deg - 30.0).abs() < 1e-9);
        assert!(fit.chi2 < 1e-12);
    }

    #[test]
    fn a_equals_two_b_gives_half() {
        let fit = fit_fringe(&synth(200.0, 100.0, 140.0, 9)).unwrap();
        assert!((fit.visibility - 0.5).abs() < 1e-6);
        assert!((fit.phase_deg - 140.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_identical_angles() {
        let pts = vec![(10.0, 5.0); 6];
        assert!(matches!(fit_fringe(&pts), Err(LabError::SingularFit(_))));
    }

    #[test]
    fn rejects_short_or_narrow_scans() {
        assert!(fit_fringe(&synth(1.0, 1.0, 0.0, 3)).is_err());
        let narrow: Vec<_> = (0..10).map(|i| (i as f64 * 5.0, 3.0 + i as f64)).collect();
        assert!(matches!(fit_fringe(&narrow), Err(LabError::SingularFit(_))));
    }

    #[test]
    fn span_wraps_around() {
        assert!((angular_span(&[170.0, 10.0, 60.0]) - 70.0).abs() < 1e-12);
        assert!((angular_span(&[0.0, 45.0, 90.0, 135.0]) - 135.0).abs() < 1e-12);
    }
}
