//! Monte Carlo model of the counting experiment.
//!
//! Each of the six CH settings is measured in sequence for
//! `det.duration` seconds and yields an independent Poisson count. The
//! source is the entangled state mixed with a fraction `noise_mix` of
//! unpolarized, uncorrelated pairs. Every random draw comes from a ChaCha8
//! stream selected by `(seed, unit index)`, so results do not depend on the
//! order in which units are evaluated.

pub mod fit;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::metrics::{ch_sum, AnalyzerQuad, ChReport, CountsSextet, Measured};
use crate::model::{
    coincidence_rate_from, pass_probabilities, white_noise_probabilities, AnalyzerAngle,
    DetectionModel, EntangledState, PassProbabilities, PolarizerModel,
};

pub use fit::{fit_fringe, FringeFit};

const FRINGE_STREAMS: u64 = 1 << 32;
const BASIS_STREAMS: u64 = 2 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub state: EntangledState,
    pub pol: PolarizerModel,
    pub det: DetectionModel,
    pub quad: AnalyzerQuad,
    pub seed: u64,
    /// Fraction of white-noise pairs in the source.
    pub noise_mix: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.pol.validate()?;
        self.det.validate()?;
        if !(0.0..=1.0).contains(&self.noise_mix) {
            return Err(LabError::invalid(
                "noise_mix",
                format!("{} not in [0, 1]", self.noise_mix),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    /// Pass probabilities of the mixed source.
    pub fn probabilities(
        &self,
        theta1: AnalyzerAngle,
        theta2: AnalyzerAngle,
    ) -> Result<PassProbabilities> {
        let pure = pass_probabilities(&self.state, theta1, theta2, &self.pol)?;
        let white = white_noise_probabilities(theta1, theta2, &self.pol)?;
        Ok(pure.mix(&white, self.noise_mix))
    }

    /// Expected counts at one setting over `duration` seconds.
    pub fn expected_count(
        &self,
        theta1: AnalyzerAngle,
        theta2: AnalyzerAngle,
        duration: f64,
    ) -> Result<f64> {
        let probs = self.probabilities(theta1, theta2)?;
        Ok(coincidence_rate_from(&probs, &self.det)? * duration)
    }

    /// The six CH settings, with the polarizer-free terms measured as
    /// coincidences.
    pub fn settings(&self) -> [(AnalyzerAngle, AnalyzerAngle); 6] {
        let q = &self.quad;
        let d = AnalyzerAngle::Degrees;
        [
            (d(q.theta1), d(q.theta2)),
            (d(q.theta1), d(q.theta2_prime)),
            (d(q.theta1_prime), d(q.theta2)),
            (d(q.theta1_prime), d(q.theta2_prime)),
            (d(q.theta1_prime), AnalyzerAngle::Absent),
            (AnalyzerAngle::Absent, d(q.theta2)),
        ]
    }

    pub fn expected_sextet(&self) -> Result<[f64; 6]> {
        let mut out = [0.0; 6];
        for (slot, (t1, t2)) in out.iter_mut().zip(self.settings()) {
            *slot = self.expected_count(t1, t2, self.det.duration)?;
        }
        Ok(out)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_poisson(rng: &mut ChaCha8Rng, mean: f64) -> Result<u64> {
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean)
        .map_err(|e| LabError::Degenerate(format!("Poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Seed of the `index`-th repetition of a seeded experiment (SplitMix64
/// finalizer over `seed + index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Raw integer counts for the six CH settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegerSextet {
    pub n_ab: u64,
    pub n_ab_prime: u64,
    pub n_a_prime_b: u64,
    pub n_a_prime_b_prime: u64,
    pub n_a_prime_inf: u64,
    pub n_inf_b: u64,
}

impl IntegerSextet {
    pub fn from_array(c: [u64; 6]) -> Self {
        Self {
            n_ab: c[0],
            n_ab_prime: c[1],
            n_a_prime_b: c[2],
            n_a_prime_b_prime: c[3],
            n_a_prime_inf: c[4],
            n_inf_b: c[5],
        }
    }

    pub fn to_array(&self) -> [u64; 6] {
        [
            self.n_ab,
            self.n_ab_prime,
            self.n_a_prime_b,
            self.n_a_prime_b_prime,
            self.n_a_prime_inf,
            self.n_inf_b,
        ]
    }

    /// As counts with Poisson uncertainties.
    pub fn to_sextet(&self) -> CountsSextet {
        CountsSextet::from_counts(self.to_array().map(|n| n as f64))
            .expect("counts are non-negative")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_digest: String,
    pub seed: u64,
    pub duration: f64,
    pub pair_rate: f64,
    pub noise_mix: f64,
    pub expected: [f64; 6],
    pub counts: IntegerSextet,
    pub report: ChReport,
}

impl RunRecord {
    /// CH report recomputed from the stored counts.
    pub fn reanalyze(&self) -> ChReport {
        ch_sum(&self.counts.to_sextet())
    }
}

/// One simulated CH measurement.
pub fn simulate_run(config: &SimConfig) -> Result<RunRecord> {
    config.validate()?;
    let expected = config.expected_sextet()?;
    let mut counts = [0u64; 6];
    for (k, (slot, mean)) in counts.iter_mut().zip(expected).enumerate() {
        *slot = sample_poisson(&mut stream_rng(config.seed, k as u64), mean)?;
    }
    let counts = IntegerSextet::from_array(counts);
    Ok(RunRecord {
        config_digest: config.digest(),
        seed: config.seed,
        duration: config.det.duration,
        pair_rate: config.det.pair_rate,
        noise_mix: config.noise_mix,
        expected,
        counts,
        report: ch_sum(&counts.to_sextet()),
    })
}

/// `n` independent repetitions; repetition `i` runs with
/// `derive_seed(config.seed, i)`.
pub fn simulate_repeats(config: &SimConfig, n: usize) -> Result<Vec<RunRecord>> {
    (0..n as u64)
        .map(|i| simulate_run(&config.with_seed(derive_seed(config.seed, i))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringePoint {
    pub angle_deg: f64,
    pub count: u64,
}

/// Poisson counts with the arm-1 polarizer fixed at `theta_fixed` and the
/// arm-2 polarizer stepped uniformly over `[0, 180)`.
pub fn simulate_fringe(
    config: &SimConfig,
    theta_fixed: f64,
    n_points: usize,
    per_point_duration: f64,
) -> Result<Vec<FringePoint>> {
    config.validate()?;
    if n_points < 8 {
        return Err(LabError::invalid(
            "n_points",
            format!("need at least 8, got {n_points}"),
        ));
    }
    if !per_point_duration.is_finite() || per_point_duration < 0.0 {
        return Err(LabError::invalid(
            "per_point_duration",
            format!("{per_point_duration} must be finite and >= 0"),
        ));
    }
    let fixed = AnalyzerAngle::degrees(theta_fixed)?;
    crate::model::scan_angles(n_points)
        .enumerate()
        .map(|(i, theta)| {
            let mean =
                config.expected_count(fixed, AnalyzerAngle::Degrees(theta), per_point_duration)?;
            let mut rng = stream_rng(config.seed, FRINGE_STREAMS + i as u64);
            Ok(FringePoint {
                angle_deg: theta,
                count: sample_poisson(&mut rng, mean)?,
            })
        })
        .collect()
}

pub fn fringe_as_pairs(points: &[FringePoint]) -> Vec<(f64, f64)> {
    points
        .iter()
        .map(|p| (p.angle_deg, p.count as f64))
        .collect()
}

/// Writes fringe data as CSV with header `angle_deg,count`.
pub fn write_fringe_csv<W: std::io::Write>(out: W, points: &[FringePoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `angle_deg,count` CSV; lines starting with `#` are skipped.
/// Counts may be fractional so analytic fringes can be fitted too.
pub fn read_fringe_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<(f64, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        angle_deg: f64,
        count: f64,
    }
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    r.deserialize::<Row>()
        .map(|row| row.map(|r| (r.angle_deg, r.count)))
        .collect()
}

/// Exact visibility of the expected fringe (arm 1 fixed, arm 2 scanned).
///
/// The scanned probability has the form `alpha + beta cos 2t + gamma sin 2t`,
/// so three samples fix its extrema.
pub fn model_fringe_visibility(config: &SimConfig, theta_fixed: f64) -> Result<f64> {
    let (alpha, amp) = fringe_harmonics(config, theta_fixed)?;
    if alpha <= 0.0 {
        return Err(LabError::Degenerate(
            "expected fringe is identically zero".into(),
        ));
    }
    Ok(amp / alpha)
}

fn fringe_harmonics(config: &SimConfig, theta_fixed: f64) -> Result<(f64, f64)> {
    let fixed = AnalyzerAngle::degrees(theta_fixed)?;
    let p = |t: f64| {
        config
            .probabilities(fixed, AnalyzerAngle::Degrees(t))
            .map(|p| p.joint)
    };
    let (p0, p45, p90) = (p(0.0)?, p(45.0)?, p(90.0)?);
    let alpha = 0.5 * (p0 + p90);
    let beta = 0.5 * (p0 - p90);
    let gamma = p45 - alpha;
    Ok((alpha, beta.hypot(gamma)))
}

/// White-noise fraction that brings the expected fringe visibility at
/// `theta_fixed` down to `target`.
pub fn noise_mix_for_visibility(config: &SimConfig, theta_fixed: f64, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(LabError::invalid(
            "target",
            format!("visibility {target} not in [0, 1]"),
        ));
    }
    let pure = SimConfig {
        noise_mix: 0.0,
        ..*config
    };
    let white = SimConfig {
        noise_mix: 1.0,
        ..*config
    };
    let (alpha, amp) = fringe_harmonics(&pure, theta_fixed)?;
    let (w, _) = fringe_harmonics(&white, theta_fixed)?;
    if alpha <= 0.0 || amp < target * alpha {
        return Err(LabError::Degenerate(format!(
            "noise-free visibility {:.6} is already below the target {target}",
            if alpha > 0.0 { amp / alpha } else { 0.0 }
        )));
    }
    // (1 - p) amp = V ((1 - p) alpha + p w)
    let excess = amp - target * alpha;
    Ok(excess / (excess + target * w))
}

/// Coincidences in the V/V `(0, 0)` and H/H `(90, 90)` settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisCounts {
    pub n_vv: f64,
    pub n_hh: f64,
}

/// `f = sqrt(N_VV / N_HH)` with Poisson-propagated uncertainty.
pub fn estimate_f(counts: &BasisCounts) -> Result<Measured> {
    let BasisCounts { n_vv, n_hh } = *counts;
    if !n_vv.is_finite() || !n_hh.is_finite() || n_vv < 0.0 || n_hh < 0.0 {
        return Err(LabError::invalid(
            "counts",
            "basis counts must be finite and >= 0",
        ));
    }
    if n_hh == 0.0 {
        return Err(LabError::Degenerate("H/H coincidence count is zero".into()));
    }
    let f = (n_vv / n_hh).sqrt();
    let sigma = if n_vv > 0.0 {
        0.5 * f * (1.0 / n_vv + 1.0 / n_hh).sqrt()
    } else {
        // no V/V events: one count's worth of resolution
        (1.0 / n_hh).sqrt()
    };
    Ok(Measured {
        value: f,
        sigma: Some(sigma),
    })
}

/// Poisson-sampled basis counts over `duration` seconds per setting.
pub fn simulate_basis_counts(config: &SimConfig, duration: f64) -> Result<BasisCounts> {
    config.validate()?;
    let d = AnalyzerAngle::Degrees;
    let vv = config.expected_count(d(0.0), d(0.0), duration)?;
    let hh = config.expected_count(d(90.0), d(90.0), duration)?;
    Ok(BasisCounts {
        n_vv: sample_poisson(&mut stream_rng(config.seed, BASIS_STREAMS), vv)? as f64,
        n_hh: sample_poisson(&mut stream_rng(config.seed, BASIS_STREAMS + 1), hh)? as f64,
    })
}
