//! Experiment drivers: end-to-end detection runs, the label-permutation
//! accuracy metric, Monte Carlo consistency checks of the simulator against
//! the closed forms, and the CSV/JSON output formats. Everything here is a
//! pure function of `(inputs, seed)`; repeated runs produce byte-identical
//! files.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{stationary_expectation, AnalysisError};
use crate::detector::{Detector, DetectorError};
use crate::karate;
use crate::model::{
    BlockModel, Community, CommunityAssignment, GossipNetwork, ModelConfig, ModelError,
    StubbornPrior, ValidationReport,
};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::sim::{
    empirical_expectation, initial_state_gaussian, Observer, RunningAverage, SimError, Simulator,
    TrajectoryState,
};

/// Errors from the experiment drivers.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("assignments have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{0}")]
    BadArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fraction of agents labeled correctly, maximized over the two ways of
/// naming the communities — label names carry no meaning, only the
/// partition does. Always at least 1/2.
pub fn accuracy(
    estimate: &CommunityAssignment,
    truth: &CommunityAssignment,
) -> Result<f64, HarnessError> {
    if estimate.len() != truth.len() || truth.is_empty() {
        return Err(HarnessError::LengthMismatch(estimate.len(), truth.len()));
    }
    let matches = estimate
        .iter()
        .zip(truth.iter())
        .filter(|(a, b)| a == b)
        .count();
    Ok(matches.max(truth.len() - matches) as f64 / truth.len() as f64)
}

/// One decimated row of a detection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub t: u64,
    pub accuracy: f64,
    pub w_s_hat: f64,
    pub w_d_hat: f64,
    /// Agents whose label differs from the previously logged row.
    pub labels_changed: usize,
}

/// Writes trace rows as `t,accuracy,w_s_hat,w_d_hat`.
pub fn write_accuracy_csv<W: Write + ?Sized>(points: &[TracePoint], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "t,accuracy,w_s_hat,w_d_hat")?;
    for p in points {
        writeln!(out, "{},{},{},{}", p.t, p.accuracy, p.w_s_hat, p.w_d_hat)?;
    }
    Ok(())
}

/// Writes trace rows as `t,w_s_hat,w_d_hat,labels_changed,accuracy`.
pub fn write_detect_csv<W: Write + ?Sized>(points: &[TracePoint], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "t,w_s_hat,w_d_hat,labels_changed,accuracy")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.t, p.w_s_hat, p.w_d_hat, p.labels_changed, p.accuracy
        )?;
    }
    Ok(())
}

/// An [`Observer`] that feeds every state to a [`Detector`] and logs a
/// [`TracePoint`] every `every` steps.
pub struct TracedDetection {
    detector: Detector,
    truth: CommunityAssignment,
    every: u64,
    points: Vec<TracePoint>,
    last_logged: CommunityAssignment,
}

impl TracedDetection {
    pub fn new(
        detector: Detector,
        truth: CommunityAssignment,
        every: u64,
    ) -> Result<Self, HarnessError> {
        if every == 0 {
            return Err(HarnessError::BadArgument(
                "log decimation must be at least 1".to_string(),
            ));
        }
        if truth.len() != detector.labels().len() {
            return Err(HarnessError::LengthMismatch(
                detector.labels().len(),
                truth.len(),
            ));
        }
        let last_logged = detector.labels().clone();
        Ok(TracedDetection {
            detector,
            truth,
            every,
            points: Vec::new(),
            last_logged,
        })
    }

    /// Logs a row for the current detector state at time `t`.
    pub fn log_now(&mut self, t: u64) {
        let labels = self.detector.labels();
        let labels_changed = labels
            .iter()
            .zip(self.last_logged.iter())
            .filter(|(a, b)| a != b)
            .count();
        self.last_logged = labels.clone();
        self.points.push(TracePoint {
            t,
            accuracy: accuracy(labels, &self.truth).expect("lengths checked at construction"),
            w_s_hat: self.detector.w_s_hat(),
            w_d_hat: self.detector.w_d_hat(),
            labels_changed,
        });
    }

    pub fn last_point(&self) -> Option<&TracePoint> {
        self.points.last()
    }

    pub fn into_parts(self) -> (Detector, Vec<TracePoint>) {
        (self.detector, self.points)
    }
}

impl Observer for TracedDetection {
    fn on_step(&mut self, t: u64, _changed: &[usize], x: &[f64]) {
        self.detector
            .observe_full(x)
            .expect("observation stream inconsistent with detector setup");
        if t.is_multiple_of(self.every) {
            self.log_now(t);
        }
    }
}

/// Summary of one detection run (the JSON output of `detect`/`karate`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    /// Final community labels, 1/2 per agent in index order.
    pub final_labels: Vec<u8>,
    pub w_s_hat: f64,
    pub w_d_hat: f64,
    /// Estimation steps skipped due to degenerate label partitions.
    pub skipped_updates: u64,
    /// The last step at which the label partition changed (0 = never).
    pub converged_at: u64,
    /// Whether the partition stayed fixed over the entire second half of
    /// the run.
    pub stabilized: bool,
    /// Fraction of agents labeled correctly at the end (permutation
    /// maximized).
    pub final_accuracy: f64,
    /// True when the underlying network is not a two-block model, so the
    /// weight estimates target a model that does not actually generate the
    /// data.
    pub model_misspecified: bool,
    pub steps: u64,
    pub seed: u64,
}

/// Everything a detection run produces.
#[derive(Debug)]
pub struct DetectionRun {
    pub report: DetectionReport,
    pub trace: Vec<TracePoint>,
    pub detector: Detector,
}

/// Runs the full online pipeline on one trajectory: draw the initial state
/// (stream 0 of `seed`), seed the detector with it, then simulate `steps`
/// steps (stream 1) feeding the detector online (detector initialization
/// uses stream 2). A trace row is logged every `log_every` steps plus one
/// final row.
pub fn run_detection(
    net: &GossipNetwork,
    truth: &CommunityAssignment,
    prior: &StubbornPrior,
    steps: u64,
    log_every: u64,
    seed: u64,
    model_misspecified: bool,
) -> Result<DetectionRun, HarnessError> {
    let mut init_rng = stream_rng(seed, stream::INIT);
    let x0 = initial_state_gaussian(net, &mut init_rng);

    let mut detector = Detector::for_network(net, prior, derive_seed(seed, stream::DETECTOR))?;
    detector.observe_full(&x0)?;

    let mut traced = TracedDetection::new(detector, truth.clone(), log_every)?;
    traced.log_now(0);

    let simulator = Simulator::new(net);
    simulator.run(
        &x0,
        steps,
        stream_rng(seed, stream::TRAJECTORY),
        &mut [&mut traced],
    )?;
    if traced.last_point().map(|p| p.t) != Some(steps) {
        traced.log_now(steps);
    }

    let (detector, trace) = traced.into_parts();
    let final_accuracy = accuracy(detector.labels(), truth)?;
    let converged_at = detector.last_partition_change();
    let report = DetectionReport {
        final_labels: detector.labels().to_numbers(),
        w_s_hat: detector.w_s_hat(),
        w_d_hat: detector.w_d_hat(),
        skipped_updates: detector.skipped_updates(),
        converged_at,
        stabilized: converged_at <= steps / 2,
        final_accuracy,
        model_misspecified,
        steps,
        seed,
    };
    Ok(DetectionRun {
        report,
        trace,
        detector,
    })
}

/// Detection on the five-agent demonstration model.
pub fn run_five_node_experiment(
    steps: u64,
    log_every: u64,
    seed: u64,
) -> Result<DetectionRun, HarnessError> {
    let m = BlockModel::five_node_demo();
    let net = m.to_network()?;
    let prior = m.default_anchors()?;
    run_detection(&net, &m.truth(), &prior, steps, log_every, seed, false)
}

/// Detection on the bundled karate-club network (a deliberately
/// misspecified setting: the network is not a two-block model).
pub fn run_karate_experiment(
    steps: u64,
    log_every: u64,
    seed: u64,
) -> Result<DetectionRun, HarnessError> {
    let data = karate::load()?;
    run_detection(
        &data.network,
        &data.truth,
        &data.anchors,
        steps,
        log_every,
        seed,
        true,
    )
}

/// Detection on an arbitrary block model, using its canonical ground truth
/// and, unless one is supplied, the default anchors.
pub fn run_block_detection(
    m: &BlockModel,
    prior: Option<StubbornPrior>,
    steps: u64,
    log_every: u64,
    seed: u64,
) -> Result<DetectionRun, HarnessError> {
    let net = m.to_network()?;
    let prior = match prior {
        Some(p) => p,
        None => m.default_anchors()?,
    };
    run_detection(&net, &m.truth(), &prior, steps, log_every, seed, false)
}

/// Streaming batch means over selected coordinates, for the standard error
/// of a time-average over a correlated trajectory.
#[derive(Debug, Clone)]
pub struct BatchMeans {
    indices: Vec<usize>,
    batch_len: u64,
    sums: Vec<f64>,
    in_batch: u64,
    batch_means: Vec<Vec<f64>>,
}

impl BatchMeans {
    pub fn over(indices: Vec<usize>, batch_len: u64) -> Self {
        assert!(batch_len >= 1);
        let sums = vec![0.0; indices.len()];
        BatchMeans {
            indices,
            batch_len,
            sums,
            in_batch: 0,
            batch_means: Vec::new(),
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        for (sum, &idx) in self.sums.iter_mut().zip(&self.indices) {
            *sum += x[idx];
        }
        self.in_batch += 1;
        if self.in_batch == self.batch_len {
            let len = self.batch_len as f64;
            self.batch_means
                .push(self.sums.iter().map(|s| s / len).collect());
            self.sums.iter_mut().for_each(|s| *s = 0.0);
            self.in_batch = 0;
        }
    }

    /// Completed batches so far.
    pub fn batches(&self) -> usize {
        self.batch_means.len()
    }

    /// Standard error of the overall mean per coordinate: sample standard
    /// deviation of the batch means over √(#batches). Zero with fewer than
    /// two completed batches.
    pub fn std_err(&self) -> Vec<f64> {
        let b = self.batch_means.len();
        if b < 2 {
            return vec![0.0; self.indices.len()];
        }
        let bf = b as f64;
        let mut means = vec![0.0; self.indices.len()];
        for batch in &self.batch_means {
            for (m, &v) in means.iter_mut().zip(batch) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= bf);
        let mut var = vec![0.0; self.indices.len()];
        for batch in &self.batch_means {
            for (v, (&b_m, &m)) in var.iter_mut().zip(batch.iter().zip(&means)) {
                *v += (b_m - m) * (b_m - m);
            }
        }
        var.iter()
            .map(|v| (v / (bf - 1.0)).sqrt() / bf.sqrt())
            .collect()
    }
}

impl Observer for BatchMeans {
    fn on_step(&mut self, _t: u64, _changed: &[usize], x: &[f64]) {
        self.push(x);
    }
}

/// Settings for [`monte_carlo_stationarity`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    /// Independent replications for the fixed-horizon mean check.
    pub replications: usize,
    /// Horizon of each replication.
    pub horizon: u64,
    /// Steps of the single long trajectory for the time-average check.
    pub ergodic_steps: u64,
    /// Batches for the time-average standard error.
    pub batches: usize,
    /// Absolute tolerance for the time-average check.
    pub ergodic_tolerance: f64,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            replications: 2000,
            horizon: 2000,
            ergodic_steps: 1_000_000,
            batches: 100,
            ergodic_tolerance: 0.02,
            seed: 0,
        }
    }
}

/// One per-agent consistency check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoordinateCheck {
    /// 1-based agent id.
    pub agent: usize,
    /// The closed-form stationary value for this agent's community.
    pub target: f64,
    pub estimate: f64,
    pub std_err: f64,
    pub z: f64,
    pub pass: bool,
}

/// Monte Carlo consistency report: replication means of `x(T)` against the
/// closed form at 3 standard errors, and the long-run time-average against
/// the closed form at an absolute tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub chi1: f64,
    pub chi2: f64,
    pub replication_checks: Vec<CoordinateCheck>,
    pub ergodic_checks: Vec<CoordinateCheck>,
    pub pass: bool,
}

fn z_score(deviation: f64, std_err: f64) -> f64 {
    if std_err > 0.0 {
        deviation / std_err
    } else if deviation.abs() <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Checks the simulator against the closed-form stationary values both
/// ways the theory predicts: across independent replications and along a
/// single long trajectory.
pub fn monte_carlo_stationarity(
    m: &BlockModel,
    config: &MonteCarloConfig,
) -> Result<MonteCarloReport, HarnessError> {
    if config.replications == 0 || config.batches == 0 {
        return Err(HarnessError::BadArgument(
            "replications and batches must be at least 1".to_string(),
        ));
    }
    if config.ergodic_steps < config.batches as u64 {
        return Err(HarnessError::BadArgument(
            "ergodic_steps must be at least the number of batches".to_string(),
        ));
    }
    let analysis = stationary_expectation(m)?;
    let net = m.to_network()?;
    let chi_of = |agent: usize| match m.community_of(agent) {
        Community::One => analysis.chi1,
        Community::Two => analysis.chi2,
    };

    let mut init_rng = stream_rng(config.seed, stream::INIT);
    let x0 = initial_state_gaussian(&net, &mut init_rng);

    // Fixed-horizon replication means, 3-standard-error bands.
    let stats = empirical_expectation(&net, &x0, config.horizon, config.replications, config.seed)?;
    let replication_checks: Vec<CoordinateCheck> = net
        .regular()
        .iter()
        .map(|&agent| {
            let target = chi_of(agent);
            let estimate = stats.mean[agent];
            let std_err = stats.std_err[agent];
            let z = z_score(estimate - target, std_err);
            CoordinateCheck {
                agent: agent + 1,
                target,
                estimate,
                std_err,
                z,
                pass: z.abs() <= 3.0,
            }
        })
        .collect();

    // Single-trajectory time averages, absolute tolerance (plus an
    // informational z from batch means).
    let mut average = RunningAverage::for_regulars(&net);
    let mut batches = BatchMeans::over(
        net.regular().to_vec(),
        (config.ergodic_steps / config.batches as u64).max(1),
    );
    average.push(&x0);
    batches.push(&x0);
    let simulator = Simulator::new(&net);
    simulator.run(
        &x0,
        config.ergodic_steps,
        stream_rng(config.seed, stream::TRAJECTORY),
        &mut [&mut average, &mut batches],
    )?;
    let std_errs = batches.std_err();
    let ergodic_checks: Vec<CoordinateCheck> = net
        .regular()
        .iter()
        .enumerate()
        .map(|(slot, &agent)| {
            let target = chi_of(agent);
            let estimate = average.mean()[slot];
            let std_err = std_errs[slot];
            CoordinateCheck {
                agent: agent + 1,
                target,
                estimate,
                std_err,
                z: z_score(estimate - target, std_err),
                pass: (estimate - target).abs() <= config.ergodic_tolerance,
            }
        })
        .collect();

    let pass = replication_checks
        .iter()
        .chain(&ergodic_checks)
        .all(|c| c.pass);
    Ok(MonteCarloReport {
        chi1: analysis.chi1,
        chi2: analysis.chi2,
        replication_checks,
        ergodic_checks,
        pass,
    })
}

/// The JSON body of `analyze`.
#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub chi1: f64,
    pub chi2: f64,
    pub gamma: GammaReport,
    pub delta: f64,
    #[serde(rename = "rho_A_bar")]
    pub rho_a_bar: f64,
    pub identifiable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaReport {
    pub gamma11: f64,
    pub gamma12: f64,
    pub gamma21: f64,
    pub gamma22: f64,
}

/// Runs the closed-form analysis and packages the report.
pub fn analysis_report(m: &BlockModel) -> Result<AnalysisReport, HarnessError> {
    let analysis = stationary_expectation(m)?;
    Ok(AnalysisReport {
        chi1: analysis.chi1,
        chi2: analysis.chi2,
        gamma: GammaReport {
            gamma11: analysis.gamma.gamma11,
            gamma12: analysis.gamma.gamma12,
            gamma21: analysis.gamma.gamma21,
            gamma22: analysis.gamma.gamma22,
        },
        delta: analysis.gamma.delta,
        rho_a_bar: analysis.rho_a_bar,
        identifiable: crate::analysis::identifiable(m),
    })
}

/// Simulates one trajectory and writes it as CSV: header
/// `t,x_<id>,...` (1-based ids), one row at `t = 0`, every `log_every`
/// steps, and at the final step. `regular_only` restricts the columns to
/// regular agents. Initial state and trajectory use streams 0 and 1 of
/// `seed`, so identical inputs give byte-identical output.
pub fn simulate_to_csv<W: Write + ?Sized>(
    net: &GossipNetwork,
    steps: u64,
    log_every: u64,
    regular_only: bool,
    seed: u64,
    out: &mut W,
) -> Result<TrajectoryState, HarnessError> {
    if log_every == 0 {
        return Err(HarnessError::BadArgument(
            "log decimation must be at least 1".to_string(),
        ));
    }
    let columns: Vec<usize> = if regular_only {
        net.regular().to_vec()
    } else {
        (0..net.n()).collect()
    };

    write!(out, "t")?;
    for &c in &columns {
        write!(out, ",x_{}", c + 1)?;
    }
    writeln!(out)?;
    let write_row = |out: &mut W, t: u64, x: &[f64]| -> std::io::Result<()> {
        write!(out, "{t}")?;
        for &c in &columns {
            write!(out, ",{}", x[c])?;
        }
        writeln!(out)
    };

    let mut init_rng = stream_rng(seed, stream::INIT);
    let x0 = initial_state_gaussian(net, &mut init_rng);
    let simulator = Simulator::new(net);
    let mut state = simulator.start(&x0, stream_rng(seed, stream::TRAJECTORY))?;
    write_row(out, 0, &state.x)?;
    for _ in 0..steps {
        simulator.step(&mut state);
        if state.t % log_every == 0 {
            write_row(out, state.t, &state.x)?;
        }
    }
    if !steps.is_multiple_of(log_every) {
        write_row(out, state.t, &state.x)?;
    }
    Ok(state)
}

/// A self-contained experiment description (JSON): the model, the horizon,
/// and the reproducibility knobs. `seed` falls back to the model file's
/// seed, then to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub steps: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub regular_only: bool,
}

fn default_replications() -> usize {
    1
}

fn default_log_every() -> u64 {
    100
}

impl ExperimentConfig {
    /// The master seed this experiment runs under.
    pub fn master_seed(&self) -> u64 {
        self.seed.or(self.model.seed).unwrap_or(0)
    }

    /// Validates the run parameters along with the model itself.
    pub fn validate(&self) -> ValidationReport {
        let mut report = self.model.model().validate();
        if self.steps == 0 {
            report
                .violations
                .push("steps must be at least 1".to_string());
        }
        if self.replications == 0 {
            report
                .violations
                .push("replications must be at least 1".to_string());
        }
        if self.log_every == 0 {
            report
                .violations
                .push("log_every must be at least 1".to_string());
        }
        report
    }

    /// Runs the experiment's trajectory and returns the CSV bytes.
    pub fn trajectory_csv(&self) -> Result<Vec<u8>, HarnessError> {
        let report = self.validate();
        if !report.is_ok() {
            return Err(HarnessError::BadArgument(report.violations.join("; ")));
        }
        let net = self.model.model().to_network()?;
        let mut out = Vec::new();
        simulate_to_csv(
            &net,
            self.steps,
            self.log_every,
            self.regular_only,
            self.master_seed(),
            &mut out,
        )?;
        Ok(out)
    }
}
