//! Clauser-Horne sum, the ratio R and the deterministic local bound.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::model::{
    joint_from, marginal_from, reduce_degrees, AnalyzerAngle, Arm, DetectionModel, EntangledState,
    PolarizerModel, Transmission,
};

/// The four polarizer settings `(theta1, theta2, theta1', theta2')` in degrees,
/// each reduced to `[0, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerQuad {
    pub theta1: f64,
    pub theta2: f64,
    pub theta1_prime: f64,
    pub theta2_prime: f64,
}

impl AnalyzerQuad {
    pub fn new(theta1: f64, theta2: f64, theta1_prime: f64, theta2_prime: f64) -> Result<Self> {
        Self::from_array([theta1, theta2, theta1_prime, theta2_prime])
    }

    pub fn from_array(angles: [f64; 4]) -> Result<Self> {
        if let Some(&bad) = angles.iter().find(|a| !a.is_finite()) {
            return Err(LabError::NonFiniteAngle(bad));
        }
        let [a, b, ap, bp] = angles.map(reduce_degrees);
        Ok(Self {
            theta1: a,
            theta2: b,
            theta1_prime: ap,
            theta2_prime: bp,
        })
    }

    pub fn to_array(&self) -> [f64; 4] {
        [
            self.theta1,
            self.theta2,
            self.theta1_prime,
            self.theta2_prime,
        ]
    }

    /// Optimal settings for the maximally entangled state.
    pub fn maximal_entanglement() -> Self {
        Self {
            theta1: 67.5,
            theta2: 45.0,
            theta1_prime: 22.5,
            theta2_prime: 0.0,
        }
    }

    /// Largest per-angle distance modulo 180 degrees.
    pub fn max_angle_distance(&self, other: &AnalyzerQuad) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| {
                let d = (a - b).rem_euclid(180.0);
                d.min(180.0 - d)
            })
            .fold(0.0, f64::max)
    }
}

/// A count or rate with an optional standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Count {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sigma: Option<f64>,
}

impl Count {
    pub fn exact(value: f64) -> Self {
        Self { value, sigma: None }
    }

    /// A raw count with its Poisson standard deviation `sqrt(n)`.
    pub fn poisson(value: f64) -> Self {
        Self {
            value,
            sigma: Some(value.max(0.0).sqrt()),
        }
    }

    fn variance(&self) -> Option<f64> {
        self.sigma.map(|s| s * s)
    }
}

/// The six terms of the CH sum, in the order
/// `N(a,b) N(a,b') N(a',b) N(a',b') N(a',inf) N(inf,b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountsSextet {
    pub n_ab: Count,
    pub n_ab_prime: Count,
    pub n_a_prime_b: Count,
    pub n_a_prime_b_prime: Count,
    pub n_a_prime_inf: Count,
    pub n_inf_b: Count,
}

impl CountsSextet {
    pub fn new(terms: [Count; 6]) -> Result<Self> {
        let [n_ab, n_ab_prime, n_a_prime_b, n_a_prime_b_prime, n_a_prime_inf, n_inf_b] = terms;
        let s = Self {
            n_ab,
            n_ab_prime,
            n_a_prime_b,
            n_a_prime_b_prime,
            n_a_prime_inf,
            n_inf_b,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn from_values(values: [f64; 6]) -> Result<Self> {
        Self::new(values.map(Count::exact))
    }

    /// Raw counts with Poisson uncertainties attached.
    pub fn from_counts(values: [f64; 6]) -> Result<Self> {
        Self::new(values.map(Count::poisson))
    }

    pub fn terms(&self) -> [Count; 6] {
        [
            self.n_ab,
            self.n_ab_prime,
            self.n_a_prime_b,
            self.n_a_prime_b_prime,
            self.n_a_prime_inf,
            self.n_inf_b,
        ]
    }

    pub fn values(&self) -> [f64; 6] {
        self.terms().map(|c| c.value)
    }

    pub fn validate(&self) -> Result<()> {
        for c in self.terms() {
            if !c.value.is_finite() || c.value < 0.0 {
                return Err(LabError::invalid(
                    "counts",
                    format!("{} is not a non-negative number", c.value),
                ));
            }
            if let Some(s) = c.sigma {
                if !s.is_finite() || s < 0.0 {
                    return Err(LabError::invalid(
                        "sigma",
                        format!("{s} is not a non-negative number"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn has_uncertainties(&self) -> bool {
        self.terms().iter().all(|c| c.sigma.is_some())
    }

    /// `N(a,b) - N(a,b') + N(a',b) + N(a',b')`
    pub fn numerator(&self) -> f64 {
        self.n_ab.value - self.n_ab_prime.value
            + self.n_a_prime_b.value
            + self.n_a_prime_b_prime.value
    }

    /// `N(a',inf) + N(inf,b)`
    pub fn denominator(&self) -> f64 {
        self.n_a_prime_inf.value + self.n_inf_b.value
    }

    fn variances(&self) -> Option<(f64, f64)> {
        if !self.has_uncertainties() {
            return None;
        }
        let t = self.terms();
        let num: f64 = t[..4].iter().filter_map(Count::variance).sum();
        let den: f64 = t[4..].iter().filter_map(Count::variance).sum();
        Some((num, den))
    }

    /// Multiply every term (and its uncertainty) by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        let scale = |c: Count| Count {
            value: c.value * k,
            sigma: c.sigma.map(|s| s * k.abs()),
        };
        let [a, b, c, d, e, f] = self.terms().map(scale);
        Self {
            n_ab: a,
            n_ab_prime: b,
            n_a_prime_b: c,
            n_a_prime_b_prime: d,
            n_a_prime_inf: e,
            n_inf_b: f,
        }
    }
}

/// A value with an optional first-order uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChReport {
    pub ch: f64,
    pub sigma_ch: Option<f64>,
    /// `None` when the denominator of R vanishes.
    pub r: Option<f64>,
    pub sigma_r: Option<f64>,
}

/// CH sum with Poisson propagation when the sextet carries uncertainties.
pub fn ch_sum(counts: &CountsSextet) -> ChReport {
    let ch = counts.numerator() - counts.denominator();
    let sigma_ch = counts.variances().map(|(n, d)| (n + d).sqrt());
    let (r, sigma_r) = match ratio_r(counts) {
        Ok(m) => (Some(m.value), m.sigma),
        Err(_) => (None, None),
    };
    ChReport {
        ch,
        sigma_ch,
        r,
        sigma_r,
    }
}

/// `R = numerator / denominator`. First-order uncertainty
/// `sigma_R^2 = (var_num + R^2 var_den) / den^2`.
pub fn ratio_r(counts: &CountsSextet) -> Result<Measured> {
    let den = counts.denominator();
    if den <= 0.0 {
        return Err(LabError::Degenerate(
            "ratio R undefined: N(a',inf) + N(inf,b) is zero".into(),
        ));
    }
    let r = counts.numerator() / den;
    let sigma = counts
        .variances()
        .map(|(vn, vd)| ((vn + r * r * vd) / (den * den)).sqrt());
    Ok(Measured { value: r, sigma })
}

/// How the two polarizer-free terms are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    /// Coincidences with one polarizer removed; detector efficiencies cancel
    /// in R.
    #[default]
    CoincidenceNormalized,
    /// True single-arm counts, linear in the detector efficiency.
    Singles,
}

/// Expected-count model for the six CH terms, validated once so it can be
/// evaluated in tight loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountModel {
    state: EntangledState,
    pol: PolarizerModel,
    det: DetectionModel,
    mode: CountMode,
}

impl CountModel {
    pub fn new(
        state: EntangledState,
        pol: PolarizerModel,
        det: DetectionModel,
        mode: CountMode,
    ) -> Result<Self> {
        pol.validate()?;
        det.validate()?;
        det.check_worst_case_occupancy()?;
        Ok(Self {
            state,
            pol,
            det,
            mode,
        })
    }

    pub fn state(&self) -> &EntangledState {
        &self.state
    }

    pub fn polarizers(&self) -> &PolarizerModel {
        &self.pol
    }

    pub fn detection(&self) -> &DetectionModel {
        &self.det
    }

    pub fn mode(&self) -> CountMode {
        self.mode
    }

    /// True when swapping the two arms leaves every count unchanged.
    pub fn is_arm_symmetric(&self) -> bool {
        self.pol.is_arm_symmetric() && self.det.is_arm_symmetric()
    }

    fn transmission(&self, angle: AnalyzerAngle, arm: Arm) -> Transmission {
        Transmission::of(angle, arm, &self.pol)
    }

    fn coincidence_counts(&self, t1: &Transmission, t2: &Transmission) -> f64 {
        let d = &self.det;
        let s1 = d.singles_rate(Arm::One, marginal_from(&self.state, t1));
        let s2 = d.singles_rate(Arm::Two, marginal_from(&self.state, t2));
        let rate =
            d.pair_rate * d.eta_1 * d.eta_2 * joint_from(&self.state, t1, t2) + s1 * s2 * d.window;
        rate * d.duration
    }

    /// Expected coincidences with both polarizers set.
    pub fn pair_term(&self, theta1: f64, theta2: f64) -> f64 {
        let t1 = self.transmission(AnalyzerAngle::Degrees(theta1), Arm::One);
        let t2 = self.transmission(AnalyzerAngle::Degrees(theta2), Arm::Two);
        self.coincidence_counts(&t1, &t2)
    }

    /// Expected polarizer-free term for `arm` with the polarizer on that arm
    /// at `theta`.
    pub fn open_term(&self, arm: Arm, theta: f64) -> f64 {
        let t = self.transmission(AnalyzerAngle::Degrees(theta), arm);
        match self.mode {
            CountMode::CoincidenceNormalized => {
                let open = Transmission::TRANSPARENT;
                match arm {
                    Arm::One => self.coincidence_counts(&t, &open),
                    Arm::Two => self.coincidence_counts(&open, &t),
                }
            }
            CountMode::Singles => {
                self.det.singles_rate(arm, marginal_from(&self.state, &t)) * self.det.duration
            }
        }
    }

    pub fn sextet_values(&self, q: [f64; 4]) -> [f64; 6] {
        let [a, b, ap, bp] = q;
        [
            self.pair_term(a, b),
            self.pair_term(a, bp),
            self.pair_term(ap, b),
            self.pair_term(ap, bp),
            self.open_term(Arm::One, ap),
            self.open_term(Arm::Two, b),
        ]
    }

    /// CH sum at raw angles (degrees, not necessarily reduced).
    pub fn ch(&self, q: [f64; 4]) -> f64 {
        let [ab, abp, apb, apbp, apinf, infb] = self.sextet_values(q);
        ab - abp + apb + apbp - apinf - infb
    }

    pub fn counts(&self, quad: &AnalyzerQuad) -> CountsSextet {
        let values = self.sextet_values(quad.to_array());
        CountsSextet {
            n_ab: Count::exact(values[0]),
            n_ab_prime: Count::exact(values[1]),
            n_a_prime_b: Count::exact(values[2]),
            n_a_prime_b_prime: Count::exact(values[3]),
            n_a_prime_inf: Count::exact(values[4]),
            n_inf_b: Count::exact(values[5]),
        }
    }
}

/// Expected counts for the six CH settings.
pub fn qm_counts(
    state: &EntangledState,
    quad: &AnalyzerQuad,
    pol: &PolarizerModel,
    det: &DetectionModel,
    mode: CountMode,
) -> Result<CountsSextet> {
    Ok(CountModel::new(*state, *pol, *det, mode)?.counts(quad))
}

/// Deterministic local strategy: pass (`true`) or fail for each setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalStrategy {
    /// Outcome at `theta1`.
    pub a1: bool,
    /// Outcome at `theta1'`.
    pub a2: bool,
    /// Outcome at `theta2`.
    pub b1: bool,
    /// Outcome at `theta2'`.
    pub b2: bool,
}

impl LocalStrategy {
    pub fn all() -> impl Iterator<Item = LocalStrategy> {
        (0u8..16).map(|bits| LocalStrategy {
            a1: bits & 1 != 0,
            a2: bits & 2 != 0,
            b1: bits & 4 != 0,
            b2: bits & 8 != 0,
        })
    }

    /// `a1 b1 - a1 b2 + a2 b1 + a2 b2 - a2 - b1`
    pub fn ch(&self) -> i32 {
        let [a1, a2, b1, b2] = [self.a1, self.a2, self.b1, self.b2].map(i32::from);
        a1 * b1 - a1 * b2 + a2 * b1 + a2 * b2 - a2 - b1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhvExtrema {
    pub max: i32,
    pub min: i32,
    pub strategies: Vec<(LocalStrategy, i32)>,
}

/// Extrema of the per-pair CH sum over all deterministic local strategies.
/// Every local model is a mixture of these, so the range bounds them all.
pub fn lhv_extrema() -> LhvExtrema {
    let strategies: Vec<_> = LocalStrategy::all().map(|s| (s, s.ch())).collect();
    let max = strategies.iter().map(|s| s.1).max().unwrap_or(0);
    let min = strategies.iter().map(|s| s.1).min().unwrap_or(0);
    LhvExtrema {
        max,
        min,
        strategies,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ch_of_flat_sextet() {
        let s = CountsSextet::from_counts([100.0; 6]).unwrap();
        let rep = ch_sum(&s);
        assert_eq!(rep.ch, 0.0);
        assert!(close(rep.sigma_ch.unwrap(), 600f64.sqrt(), 1e-12));
        assert!(close(rep.sigma_ch.unwrap(), 24.4949, 1e-4));
        assert_eq!(rep.r, Some(1.0));
    }

    #[test]
    fn no_sigma_without_uncertainties() {
        let s = CountsSextet::from_values([3.0, 1.0, 2.0, 2.0, 2.0, 2.0]).unwrap();
        let rep = ch_sum(&s);
        assert_eq!(rep.ch, 2.0);
        assert_eq!(rep.sigma_ch, None);
        assert_eq!(rep.sigma_r, None);
        assert_eq!(rep.r, Some(1.5));
    }

    #[test]
    fn ratio_rejects_zero_denominator() {
        let s = CountsSextet::from_values([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(ratio_r(&s), Err(LabError::Degenerate(_))));
        assert_eq!(ch_sum(&s).r, None);
    }

    #[test]
    fn sextet_rejects_negative_terms() {
        assert!(CountsSextet::from_values([1.0, -1.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        let mut c = [Count::exact(1.0); 6];
        c[3].sigma = Some(-0.1);
        assert!(CountsSextet::new(c).is_err());
    }

    #[test]
    fn ratio_uncertainty_matches_finite_differences() {
        let s = CountsSextet::from_counts([420.0, 80.0, 410.0, 430.0, 500.0, 490.0]).unwrap();
        let m = ratio_r(&s).unwrap();
        let vals = s.values();
        let r_of = |v: [f64; 6]| (v[0] - v[1] + v[2] + v[3]) / (v[4] + v[5]);
        let mut var = 0.0;
        for i in 0..6 {
            let h = 1e-4;
            let mut up = vals;
            let mut dn = vals;
            up[i] += h;
            dn[i] -= h;
            let d = (r_of(up) - r_of(dn)) / (2.0 * h);
            var += d * d * vals[i];
        }
        assert!(close(m.sigma.unwrap(), var.sqrt(), 1e-9));
    }

    #[test]
    fn maximal_entanglement_sextet() {
        let s = qm_counts(
            &EntangledState::maximally_entangled(),
            &AnalyzerQuad::maximal_entanglement(),
            &PolarizerModel::ideal(),
            &DetectionModel::ideal(),
            CountMode::CoincidenceNormalized,
        )
        .unwrap();
        let c = (22.5f64).to_radians().cos().powi(2) / 2.0;
        let s67 = (67.5f64).to_radians().cos().powi(2) / 2.0;
        let expect = [c, s67, c, c, 0.5, 0.5];
        for (v, e) in s.values().iter().zip(expect) {
            assert!(close(*v, e, 1e-15));
        }
        assert!(close(s.values()[0], 0.42678, 1e-5));
        assert!(close(s.values()[1], 0.07322, 1e-5));
        let rep = ch_sum(&s);
        assert!(close(rep.ch, (2f64.sqrt() - 1.0) / 2.0, 1e-15));
        assert!(close(rep.r.unwrap(), (1.0 + 2f64.sqrt()) / 2.0, 1e-15));
    }

    #[test]
    fn singles_mode_scales_with_efficiency() {
        let state = EntangledState::real(0.6).unwrap();
        let quad = AnalyzerQuad::new(70.0, 40.0, 20.0, 5.0).unwrap();
        let pol = PolarizerModel::ideal();
        let base = qm_counts(
            &state,
            &quad,
            &pol,
            &DetectionModel::ideal(),
            CountMode::Singles,
        )
        .unwrap()
        .values();
        let eta = 0.73;
        let det = DetectionModel::symmetric_efficiency(eta, 0.0);
        let scaled = qm_counts(&state, &quad, &pol, &det, CountMode::Singles)
            .unwrap()
            .values();
        for i in 0..4 {
            assert!(close(scaled[i], eta * eta * base[i], 1e-15));
        }
        for i in 4..6 {
            assert!(close(scaled[i], eta * base[i], 1e-15));
        }
    }

    #[test]
    fn product_state_never_violates() {
        let state = EntangledState::product();
        for quad in [
            AnalyzerQuad::maximal_entanglement(),
            AnalyzerQuad::new(10.0, 100.0, 35.0, 170.0).unwrap(),
            AnalyzerQuad::new(90.0, 90.0, 90.0, 0.0).unwrap(),
        ] {
            for mode in [CountMode::CoincidenceNormalized, CountMode::Singles] {
                let s = qm_counts(
                    &state,
                    &quad,
                    &PolarizerModel::ideal(),
                    &DetectionModel::ideal(),
                    mode,
                )
                .unwrap();
                assert!(ch_sum(&s).ch <= 1e-15);
            }
        }
    }

    #[test]
    fn lhv_enumeration() {
        let ext = lhv_extrema();
        assert_eq!(ext.strategies.len(), 16);
        assert_eq!(ext.max, 0);
        assert_eq!(ext.min, -1);
        let all_pass = LocalStrategy {
            a1: true,
            a2: true,
            b1: true,
            b2: true,
        };
        assert_eq!(all_pass.ch(), 0);
    }

    #[test]
    fn quad_reduces_and_compares() {
        let q = AnalyzerQuad::new(-22.5, 225.0, 180.0, 359.0).unwrap();
        assert_eq!(q.to_array(), [157.5, 45.0, 0.0, 179.0]);
        let other = AnalyzerQuad::new(157.0, 45.0, 179.5, 0.5).unwrap();
        assert!(close(q.max_angle_distance(&other), 1.5, 1e-12));
        assert!(AnalyzerQuad::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
    }
}
