//! Clauser-Horne Bell-test laboratory for the polarization state
//! `|HH> + f |VV>`: analytic pass and coincidence probabilities, the CH sum
//! and ratio R, angle optimization, critical detection efficiencies and a
//! Monte Carlo model of the coincidence-counting experiment.

pub mod error;
pub mod metrics;
pub mod model;
pub mod optimize;
pub mod sim;

pub use error::{LabError, Result};
pub use metrics::{
    ch_sum, lhv_extrema, qm_counts, ratio_r, AnalyzerQuad, ChReport, Count, CountMode, CountModel,
    CountsSextet, LhvExtrema, LocalStrategy, Measured,
};
pub use model::{
    coincidence_rate, fringe_scan, joint_pass_probability, single_pass_probability, visibility,
    AnalyzerAngle, Arm, DetectionModel, EntangledState, PolarizerModel,
};
pub use optimize::{
    critical_efficiency, maximize_ch, optimize_angles, scan_f, EfficiencyThreshold,
    OptimizationResult, OptimizerSettings,
};
pub use sim::{
    estimate_f, fit_fringe, simulate_fringe, simulate_run, BasisCounts, FringeFit, FringePoint,
    RunRecord, SimConfig,
};
