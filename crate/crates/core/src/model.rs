//! Two-photon polarization model.
//!
//! The source emits `(|HH> + f |VV>) / sqrt(1 + |f|^2)`. An analyzer at angle
//! `theta` transmits an H photon with probability `sin^2(theta)` and a V photon
//! with probability `cos^2(theta)`, so `theta = 90` is the H axis and
//! `theta = 0` the V axis.
//!
//! A real polarizer is the POVM element `eps_par |a><a| + eps_perp |a_perp><a_perp|`.
//! In the H/V basis its matrix elements are
//!
//! ```text
//! E_HH = eps_par sin^2 + eps_perp cos^2        (t_h)
//! E_VV = eps_par cos^2 + eps_perp sin^2        (t_v)
//! E_HV = (eps_par - eps_perp) sin cos          (coherence)
//! ```
//!
//! and every probability below is `<psi| E_1 (x) E_2 |psi>` for the relevant
//! pair of elements. A removed polarizer is the identity element.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Tolerance used when comparing or folding angles, in degrees.
pub const ANGLE_EPS_DEG: f64 = 1e-9;

/// `(|HH> + f |VV>) / sqrt(1 + |f|^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntangledState {
    f: Complex64,
}

impl EntangledState {
    pub fn new(f: Complex64) -> Result<Self> {
        if !f.re.is_finite() || !f.im.is_finite() {
            return Err(LabError::invalid("f", format!("must be finite, got {f}")));
        }
        Ok(Self { f })
    }

    pub fn real(f: f64) -> Result<Self> {
        Self::new(Complex64::new(f, 0.0))
    }

    pub fn maximally_entangled() -> Self {
        Self {
            f: Complex64::new(1.0, 0.0),
        }
    }

    pub fn product() -> Self {
        Self {
            f: Complex64::new(0.0, 0.0),
        }
    }

    pub fn f(&self) -> Complex64 {
        self.f
    }

    /// `|f|^2`
    pub fn weight_vv(&self) -> f64 {
        self.f.norm_sqr()
    }

    /// `1 / (1 + |f|^2)`, the squared normalization of the state.
    pub fn normalization(&self) -> f64 {
        1.0 / (1.0 + self.weight_vv())
    }

    /// Normalized amplitudes of `|HH>` and `|VV>`.
    pub fn amplitudes(&self) -> (Complex64, Complex64) {
        let n = self.normalization().sqrt();
        (Complex64::new(n, 0.0), self.f * n)
    }

    pub fn norm(&self) -> f64 {
        let (hh, vv) = self.amplitudes();
        hh.norm_sqr() + vv.norm_sqr()
    }

    /// `f + f*`, the coefficient of the interference term.
    pub fn interference(&self) -> f64 {
        2.0 * self.f.re
    }

    pub fn is_product(&self) -> bool {
        self.f.norm_sqr() == 0.0
    }

    pub fn is_maximally_entangled(&self) -> bool {
        (self.f.norm() - 1.0).abs() < 1e-12
    }
}

/// Transmittances of the two polarizers for light aligned with (`par`) or
/// normal to (`perp`) the pass axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizerModel {
    pub eps_par_1: f64,
    pub eps_perp_1: f64,
    pub eps_par_2: f64,
    pub eps_perp_2: f64,
}

impl PolarizerModel {
    pub fn ideal() -> Self {
        Self::symmetric(1.0, 0.0)
    }

    pub fn symmetric(eps_par: f64, eps_perp: f64) -> Self {
        Self {
            eps_par_1: eps_par,
            eps_perp_1: eps_perp,
            eps_par_2: eps_par,
            eps_perp_2: eps_perp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let arms = [
            ("eps_par_1", "eps_perp_1", self.eps_par_1, self.eps_perp_1),
            ("eps_par_2", "eps_perp_2", self.eps_par_2, self.eps_perp_2),
        ];
        for (par_name, perp_name, par, perp) in arms {
            if !(0.0..=1.0).contains(&par) {
                return Err(LabError::invalid(par_name, format!("{par} not in [0, 1]")));
            }
            if !(0.0..=1.0).contains(&perp) {
                return Err(LabError::invalid(
                    perp_name,
                    format!("{perp} not in [0, 1]"),
                ));
            }
            if perp > par {
                return Err(LabError::invalid(
                    perp_name,
                    format!("{perp} exceeds the aligned transmittance {par}"),
                ));
            }
        }
        Ok(())
    }

    pub fn arm(&self, arm: Arm) -> (f64, f64) {
        match arm {
            Arm::One => (self.eps_par_1, self.eps_perp_1),
            Arm::Two => (self.eps_par_2, self.eps_perp_2),
        }
    }

    pub fn is_arm_symmetric(&self) -> bool {
        self.eps_par_1 == self.eps_par_2 && self.eps_perp_1 == self.eps_perp_2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    One,
    Two,
}

impl Arm {
    pub fn index(self) -> u8 {
        match self {
            Arm::One => 1,
            Arm::Two => 2,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::One => Arm::Two,
            Arm::Two => Arm::One,
        }
    }
}

impl TryFrom<u8> for Arm {
    type Error = LabError;

    fn try_from(value: u8) -> Result<Self> {
        match value {
            1 => Ok(Arm::One),
            2 => Ok(Arm::Two),
            other => Err(LabError::invalid(
                "arm",
                format!("expected 1 or 2, got {other}"),
            )),
        }
    }
}

/// Reduce an angle in degrees to `[0, 180)`, snapping values within
/// [`ANGLE_EPS_DEG`] of 180 back to 0.
pub fn reduce_degrees(theta: f64) -> f64 {
    let r = theta.rem_euclid(180.0);
    // also folds -0.0
    if r == 0.0 || 180.0 - r < ANGLE_EPS_DEG {
        0.0
    } else {
        r
    }
}

/// Polarizer setting on one arm. `Absent` means the polarizer is removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzerAngle {
    Degrees(f64),
    Absent,
}

impl AnalyzerAngle {
    pub fn degrees(theta: f64) -> Result<Self> {
        if !theta.is_finite() {
            return Err(LabError::NonFiniteAngle(theta));
        }
        Ok(AnalyzerAngle::Degrees(reduce_degrees(theta)))
    }

    pub fn is_absent(&self) -> bool {
        matches!(self, AnalyzerAngle::Absent)
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            AnalyzerAngle::Degrees(t) => Some(t),
            AnalyzerAngle::Absent => None,
        }
    }

    /// Angle equality modulo 180 degrees, within [`ANGLE_EPS_DEG`].
    pub fn same_setting(&self, other: &AnalyzerAngle) -> bool {
        match (self, other) {
            (AnalyzerAngle::Absent, AnalyzerAngle::Absent) => true,
            (AnalyzerAngle::Degrees(a), AnalyzerAngle::Degrees(b)) => {
                let d = (a - b).rem_euclid(180.0);
                d < ANGLE_EPS_DEG || 180.0 - d < ANGLE_EPS_DEG
            }
            _ => false,
        }
    }

    fn checked(&self) -> Result<Self> {
        match *self {
            AnalyzerAngle::Degrees(t) => AnalyzerAngle::degrees(t),
            AnalyzerAngle::Absent => Ok(AnalyzerAngle::Absent),
        }
    }
}

impl From<f64> for AnalyzerAngle {
    /// Panics on non-finite input in debug builds only; prefer
    /// [`AnalyzerAngle::degrees`] for untrusted values.
    fn from(theta: f64) -> Self {
        debug_assert!(theta.is_finite());
        AnalyzerAngle::Degrees(reduce_degrees(theta))
    }
}

/// Matrix elements of one analyzer's pass element in the H/V basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub t_h: f64,
    pub t_v: f64,
    pub coherence: f64,
}

impl Transmission {
    pub const TRANSPARENT: Transmission = Transmission {
        t_h: 1.0,
        t_v: 1.0,
        coherence: 0.0,
    };

    pub fn at(theta_deg: f64, eps_par: f64, eps_perp: f64) -> Self {
        let (s, c) = theta_deg.to_radians().sin_cos();
        let (s2, c2) = (s * s, c * c);
        Transmission {
            t_h: eps_par * s2 + eps_perp * c2,
            t_v: eps_par * c2 + eps_perp * s2,
            coherence: (eps_par - eps_perp) * s * c,
        }
    }

    pub fn of(angle: AnalyzerAngle, arm: Arm, pol: &PolarizerModel) -> Self {
        match angle {
            AnalyzerAngle::Absent => Transmission::TRANSPARENT,
            AnalyzerAngle::Degrees(t) => {
                let (par, perp) = pol.arm(arm);
                Transmission::at(t, par, perp)
            }
        }
    }

    /// Transmission for unpolarized light, `tr(E) / 2`.
    pub fn unpolarized(&self) -> f64 {
        0.5 * (self.t_h + self.t_v)
    }
}

/// Joint probability from two analyzer elements.
#[inline]
pub fn joint_from(state: &EntangledState, t1: &Transmission, t2: &Transmission) -> f64 {
    let w = state.weight_vv();
    (t1.t_h * t2.t_h + w * t1.t_v * t2.t_v + state.interference() * t1.coherence * t2.coherence)
        / (1.0 + w)
}

/// Single-arm pass probability with the other photon traced out.
#[inline]
pub fn marginal_from(state: &EntangledState, t: &Transmission) -> f64 {
    let w = state.weight_vv();
    (t.t_h + w * t.t_v) / (1.0 + w)
}

/// Joint and single-arm pass probabilities for one pair of settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassProbabilities {
    pub joint: f64,
    pub arm1: f64,
    pub arm2: f64,
}

impl PassProbabilities {
    /// Mix with an uncorrelated, unpolarized source: `(1 - p) self + p other`.
    pub fn mix(&self, other: &PassProbabilities, p: f64) -> PassProbabilities {
        PassProbabilities {
            joint: (1.0 - p) * self.joint + p * other.joint,
            arm1: (1.0 - p) * self.arm1 + p * other.arm1,
            arm2: (1.0 - p) * self.arm2 + p * other.arm2,
        }
    }
}

/// Pass probabilities for any combination of set or absent analyzers.
pub fn pass_probabilities(
    state: &EntangledState,
    theta1: AnalyzerAngle,
    theta2: AnalyzerAngle,
    pol: &PolarizerModel,
) -> Result<PassProbabilities> {
    pol.validate()?;
    let t1 = Transmission::of(theta1.checked()?, Arm::One, pol);
    let t2 = Transmission::of(theta2.checked()?, Arm::Two, pol);
    Ok(PassProbabilities {
        joint: joint_from(state, &t1, &t2),
        arm1: marginal_from(state, &t1),
        arm2: marginal_from(state, &t2),
    })
}

/// Pass probabilities for the maximally mixed two-photon state.
pub fn white_noise_probabilities(
    theta1: AnalyzerAngle,
    theta2: AnalyzerAngle,
    pol: &PolarizerModel,
) -> Result<PassProbabilities> {
    pol.validate()?;
    let u1 = Transmission::of(theta1.checked()?, Arm::One, pol).unpolarized();
    let u2 = Transmission::of(theta2.checked()?, Arm::Two, pol).unpolarized();
    Ok(PassProbabilities {
        joint: u1 * u2,
        arm1: u1,
        arm2: u2,
    })
}

/// Probability that both photons pass their polarizers.
pub fn joint_pass_probability(
    state: &EntangledState,
    theta1: AnalyzerAngle,
    theta2: AnalyzerAngle,
    pol: &PolarizerModel,
) -> Result<f64> {
    if theta1.is_absent() {
        return Err(LabError::AbsentAngle { arm: 1 });
    }
    if theta2.is_absent() {
        return Err(LabError::AbsentAngle { arm: 2 });
    }
    Ok(pass_probabilities(state, theta1, theta2, pol)?.joint)
}

/// Probability that the photon on `arm` passes its polarizer.
pub fn single_pass_probability(
    state: &EntangledState,
    theta: AnalyzerAngle,
    arm: Arm,
    pol: &PolarizerModel,
) -> Result<f64> {
    if theta.is_absent() {
        return Err(LabError::AbsentAngle { arm: arm.index() });
    }
    pol.validate()?;
    let t = Transmission::of(theta.checked()?, arm, pol);
    Ok(marginal_from(state, &t))
}

/// Detector and source parameters of the counting chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub eta_1: f64,
    pub eta_2: f64,
    /// Dark-count rates, counts/s.
    pub dark_1: f64,
    pub dark_2: f64,
    /// Entangled pairs emitted per second.
    pub pair_rate: f64,
    /// Coincidence window, s.
    pub window: f64,
    /// Integration time, s.
    pub duration: f64,
}

impl DetectionModel {
    /// Unit-efficiency detectors, no darks, one pair per second for one
    /// second: expected counts equal per-pair probabilities.
    pub fn ideal() -> Self {
        Self {
            eta_1: 1.0,
            eta_2: 1.0,
            dark_1: 0.0,
            dark_2: 0.0,
            pair_rate: 1.0,
            window: 0.0,
            duration: 1.0,
        }
    }

    /// Per-pair normalization with symmetric efficiency `eta` and a dark
    /// rate expressed as a fraction of the pair rate.
    pub fn symmetric_efficiency(eta: f64, background: f64) -> Self {
        Self {
            eta_1: eta,
            eta_2: eta,
            dark_1: background,
            dark_2: background,
            ..Self::ideal()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("eta_1", self.eta_1),
            ("eta_2", self.eta_2),
            ("dark_1", self.dark_1),
            ("dark_2", self.dark_2),
            ("pair_rate", self.pair_rate),
            ("window", self.window),
            ("duration", self.duration),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(LabError::invalid(
                    name,
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
        if self.eta_1 > 1.0 {
            return Err(LabError::invalid(
                "eta_1",
                format!("{} exceeds 1", self.eta_1),
            ));
        }
        if self.eta_2 > 1.0 {
            return Err(LabError::invalid(
                "eta_2",
                format!("{} exceeds 1", self.eta_2),
            ));
        }
        Ok(())
    }

    pub fn singles_rate(&self, arm: Arm, pass_probability: f64) -> f64 {
        match arm {
            Arm::One => self.pair_rate * self.eta_1 * pass_probability + self.dark_1,
            Arm::Two => self.pair_rate * self.eta_2 * pass_probability + self.dark_2,
        }
    }

    pub fn is_arm_symmetric(&self) -> bool {
        self.eta_1 == self.eta_2 && self.dark_1 == self.dark_2
    }

    pub(crate) fn check_occupancy(&self, arm: Arm, singles: f64) -> Result<()> {
        let occupancy = self.window * singles;
        if occupancy >= 1.0 {
            return Err(LabError::WindowSaturation {
                arm: arm.index(),
                occupancy,
            });
        }
        Ok(())
    }

    /// Rejects detection models whose largest possible singles rate would
    /// saturate the coincidence window.
    pub(crate) fn check_worst_case_occupancy(&self) -> Result<()> {
        self.check_occupancy(Arm::One, self.singles_rate(Arm::One, 1.0))?;
        self.check_occupancy(Arm::Two, self.singles_rate(Arm::Two, 1.0))
    }
}

/// Coincidence rate from already-computed pass probabilities: true pairs
/// plus accidentals `S1 S2 window`.
pub fn coincidence_rate_from(probs: &PassProbabilities, det: &DetectionModel) -> Result<f64> {
    det.validate()?;
    let s1 = det.singles_rate(Arm::One, probs.arm1);
    let s2 = det.singles_rate(Arm::Two, probs.arm2);
    det.check_occupancy(Arm::One, s1)?;
    det.check_occupancy(Arm::Two, s2)?;
    Ok(det.pair_rate * det.eta_1 * det.eta_2 * probs.joint + s1 * s2 * det.window)
}

/// Coincidence rate in counts/s. Either angle may be absent.
pub fn coincidence_rate(
    state: &EntangledState,
    theta1: AnalyzerAngle,
    theta2: AnalyzerAngle,
    pol: &PolarizerModel,
    det: &DetectionModel,
) -> Result<f64> {
    let probs = pass_probabilities(state, theta1, theta2, pol)?;
    coincidence_rate_from(&probs, det)
}

/// Joint pass probability with one analyzer fixed and the other stepped
/// uniformly over `[0, 180)`. Returns `(scanned angle, probability)`.
pub fn fringe_scan(
    state: &EntangledState,
    theta_fixed: AnalyzerAngle,
    arm_fixed: Arm,
    pol: &PolarizerModel,
    n_points: usize,
) -> Result<Vec<(f64, f64)>> {
    if n_points < 3 {
        return Err(LabError::invalid(
            "n_points",
            format!("need at least 3, got {n_points}"),
        ));
    }
    if theta_fixed.is_absent() {
        return Err(LabError::AbsentAngle {
            arm: arm_fixed.index(),
        });
    }
    scan_angles(n_points)
        .map(|theta| {
            let scanned = AnalyzerAngle::Degrees(theta);
            let (t1, t2) = match arm_fixed {
                Arm::One => (theta_fixed, scanned),
                Arm::Two => (scanned, theta_fixed),
            };
            joint_pass_probability(state, t1, t2, pol).map(|p| (theta, p))
        })
        .collect()
}

pub(crate) fn scan_angles(n_points: usize) -> impl Iterator<Item = f64> {
    let step = 180.0 / n_points as f64;
    (0..n_points).map(move |i| i as f64 * step)
}

/// `(max - min) / (max + min)` over the sampled values.
pub fn visibility(fringe: &[(f64, f64)]) -> Result<f64> {
    if fringe.len() < 3 {
        return Err(LabError::Degenerate(format!(
            "visibility needs at least 3 points, got {}",
            fringe.len()
        )));
    }
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    for &(_, v) in fringe {
        if !v.is_finite() || v < 0.0 {
            return Err(LabError::Degenerate(format!(
                "fringe value {v} is not a non-negative number"
            )));
        }
        max = max.max(v);
        min = min.min(v);
    }
    if max == 0.0 {
        return Err(LabError::Degenerate(
            "all-zero fringe has no visibility".into(),
        ));
    }
    Ok((max - min) / (max + min))
}
