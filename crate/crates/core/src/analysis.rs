//! Closed-form analysis of the expected dynamics.
//!
//! Averaging the per-pair updates over the activation distribution gives a
//! deterministic linear recursion for the expected opinions. For the block
//! model that recursion has a fully explicit structure: the regular-agent
//! part is governed by a matrix `Ā` built from the two weights and the
//! community sizes, the stubborn influence enters through `B̄`, and the
//! stationary expectation collapses to two numbers `(χ₁, χ₂)` — one
//! per community — with closed-form coefficients. Everything here is exact
//! linear algebra; no simulation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::model::{BlockModel, Community, MEAN_TOLERANCE};

/// Closed-form and linear-solve stationary values must agree to this
/// tolerance, or [`stationary_expectation`] reports a numerical mismatch.
pub const STATIONARY_AGREEMENT_TOL: f64 = 1e-10;

/// Entry tolerance for the structural checks on `(I − Ā)⁻¹`.
pub const INVERSE_STRUCTURE_TOL: f64 = 1e-10;

/// Errors from the analysis routines.
#[derive(Debug, Error)]
pub enum AnalysisError {
    /// The model failed hard validation; the message lists the violations.
    #[error("invalid model: {0}")]
    InvalidModel(String),
    /// `I − Ā` could not be inverted (e.g. no stubborn agents, so the
    /// expected dynamics preserve consensus and the system has no unique
    /// stationary point).
    #[error("stationary linear system is singular")]
    SingularSystem,
    /// Closed form and direct solve disagree beyond
    /// [`STATIONARY_AGREEMENT_TOL`] — a numerical inconsistency that should
    /// never happen for a valid model.
    #[error("closed-form and linear-solve stationary values disagree (max |diff| = {max_dev:e})")]
    StationaryMismatch { max_dev: f64 },
    /// The rank check needs at least two stubborn agents to say anything.
    #[error("rank check needs at least two stubborn agents, model has {n_s}")]
    TooFewStubborn { n_s: usize },
    /// A recorded state has the wrong dimension.
    #[error("state {index} has length {got}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    /// No states were supplied.
    #[error("empty trajectory")]
    EmptyTrajectory,
}

fn require_valid(m: &BlockModel) -> Result<(), AnalysisError> {
    let report = m.validate();
    if report.is_ok() {
        Ok(())
    } else {
        Err(AnalysisError::InvalidModel(report.violations.join("; ")))
    }
}

/// The expected one-step update matrices of a block model, in the canonical
/// ordering. `r_bar` is the full `n×n` expectation; `a_bar` is its
/// regular–regular part and `b_bar` the regular–stubborn part, so that
/// `E[x_r(t+1)] = Ā·E[x_r(t)] + B̄·x_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedMatrices {
    pub r_bar: DMatrix<f64>,
    pub a_bar: DMatrix<f64>,
    pub b_bar: DMatrix<f64>,
}

/// Builds [`ExpectedMatrices`] from the closed forms: for a regular agent
/// `k`, row `k` of `r_bar` has `w_kj` off the diagonal and
/// `1 − Σ_{j≠k} w_kj` on it; stubborn rows are identity rows. `a_bar` and
/// `b_bar` are the corresponding sub-blocks with constant entries `w_s`
/// inside a community and `w_d` across.
pub fn expected_matrices(m: &BlockModel) -> Result<ExpectedMatrices, AnalysisError> {
    require_valid(m)?;
    let n = m.n();
    let pair_weight = |i: usize, j: usize| {
        if m.community_of(i) == m.community_of(j) {
            m.w_s
        } else {
            m.w_d
        }
    };

    let mut r_bar = DMatrix::zeros(n, n);
    for i in 0..n {
        if !m.is_regular(i) {
            r_bar[(i, i)] = 1.0;
            continue;
        }
        let mut off_sum = 0.0;
        for j in 0..n {
            if j != i {
                let w = pair_weight(i, j);
                r_bar[(i, j)] = w;
                off_sum += w;
            }
        }
        r_bar[(i, i)] = 1.0 - off_sum;
    }

    let regular = m.regular_agents();
    let stubborn = m.stubborn_agents();
    let a_bar = DMatrix::from_fn(regular.len(), regular.len(), |p, q| {
        r_bar[(regular[p], regular[q])]
    });
    let b_bar = DMatrix::from_fn(regular.len(), stubborn.len(), |p, q| {
        r_bar[(regular[p], stubborn[q])]
    });
    Ok(ExpectedMatrices { r_bar, a_bar, b_bar })
}

/// Coefficients of the stationary closed form. The stationary expected
/// opinion is `χ₁ = (γ₁₁·Σx_s1 + γ₁₂·Σx_s2)/δ` for community 1's regular
/// agents and `χ₂ = (γ₂₁·Σx_s2 + γ₂₂·Σx_s1)/δ` for community 2's, where
/// the sums run over the fixed stubborn opinions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaCoefficients {
    pub gamma11: f64,
    pub gamma12: f64,
    pub gamma21: f64,
    pub gamma22: f64,
    pub delta: f64,
}

/// Evaluates the γ/δ coefficients from sizes and weights alone.
pub fn gamma_coefficients(m: &BlockModel) -> GammaCoefficients {
    let (n1, n2) = (m.n1 as f64, m.n2 as f64);
    let (n_r1, n_r2) = (m.n_r1 as f64, m.n_r2 as f64);
    let (n_s1, n_s2) = (m.n_s1() as f64, m.n_s2() as f64);
    let (ws, wd) = (m.w_s, m.w_d);
    GammaCoefficients {
        gamma11: ws * wd * n1 + wd * wd * n_r2 + ws * ws * n_s2,
        gamma12: wd * (wd * n1 + ws * n2),
        gamma21: ws * wd * n2 + wd * wd * n_r1 + ws * ws * n_s1,
        gamma22: wd * (wd * n2 + ws * n1),
        delta: ws * ws * n_s1 * n_s2
            + ws * wd * (n1 * n_s1 + n2 * n_s2)
            + wd * wd * (n1 * n2 - n_r1 * n_r2),
    }
}

/// Stationary expectation of the regular agents' opinions, computed two
/// independent ways and cross-checked.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryAnalysis {
    /// Stationary expected opinion of community 1's regular agents
    /// (closed form).
    pub chi1: f64,
    /// Same for community 2.
    pub chi2: f64,
    /// The direct solve of `(I − Ā)·x = B̄·x_s`, in canonical regular order.
    pub x_r_star: Vec<f64>,
    /// The closed-form coefficients behind `chi1`/`chi2`.
    pub gamma: GammaCoefficients,
    /// Spectral radius of `Ā`; the expected dynamics contract iff < 1.
    pub rho_a_bar: f64,
    /// Largest gap between the solve and the closed form, always at most
    /// [`STATIONARY_AGREEMENT_TOL`].
    pub solve_deviation: f64,
}

impl StationaryAnalysis {
    /// The stationary opinion of the given community's regular agents.
    pub fn chi(&self, community: Community) -> f64 {
        match community {
            Community::One => self.chi1,
            Community::Two => self.chi2,
        }
    }
}

/// Computes the stationary expectation of a valid block model. The closed
/// form (via [`gamma_coefficients`]) and a dense LU solve of
/// `(I − Ā)·x = B̄·x_s` are both evaluated; disagreement beyond
/// [`STATIONARY_AGREEMENT_TOL`] is an error rather than a silent pick.
pub fn stationary_expectation(m: &BlockModel) -> Result<StationaryAnalysis, AnalysisError> {
    require_valid(m)?;
    if m.n_s() == 0 {
        // No stubborn input: the expected dynamics preserve the consensus
        // line and `I − Ā` is exactly singular.
        return Err(AnalysisError::SingularSystem);
    }

    let gamma = gamma_coefficients(m);
    let sum_s1: f64 = m.x_s1.iter().sum();
    let sum_s2: f64 = m.x_s2.iter().sum();
    let chi1 = (gamma.gamma11 * sum_s1 + gamma.gamma12 * sum_s2) / gamma.delta;
    let chi2 = (gamma.gamma21 * sum_s2 + gamma.gamma22 * sum_s1) / gamma.delta;

    let matrices = expected_matrices(m)?;
    let n_r = m.n_r();
    let (x_r_star, rho_a_bar, solve_deviation) = if n_r == 0 {
        (Vec::new(), 0.0, 0.0)
    } else {
        let system = DMatrix::identity(n_r, n_r) - &matrices.a_bar;
        let rhs = &matrices.b_bar * DVector::from_vec(m.stubborn_states());
        let solved = system
            .lu()
            .solve(&rhs)
            .ok_or(AnalysisError::SingularSystem)?;
        let rho = spectral_radius_symmetric(&matrices.a_bar);
        let mut max_dev = 0.0f64;
        for (slot, &agent) in m.regular_agents().iter().enumerate() {
            let expected = match m.community_of(agent) {
                Community::One => chi1,
                Community::Two => chi2,
            };
            max_dev = max_dev.max((solved[slot] - expected).abs());
        }
        (solved.iter().copied().collect(), rho, max_dev)
    };

    if solve_deviation > STATIONARY_AGREEMENT_TOL {
        return Err(AnalysisError::StationaryMismatch {
            max_dev: solve_deviation,
        });
    }
    Ok(StationaryAnalysis {
        chi1,
        chi2,
        x_r_star,
        gamma,
        rho_a_bar,
        solve_deviation,
    })
}

/// Spectral radius of a symmetric matrix via a symmetric eigensolve.
/// An empty matrix has radius 0.
pub fn spectral_radius_symmetric(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    debug_assert!(
        {
            let mut sym = true;
            'rows: for i in 0..m.nrows() {
                for j in 0..i {
                    if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                        sym = false;
                        break 'rows;
                    }
                }
            }
            sym
        },
        "spectral_radius_symmetric needs a symmetric matrix"
    );
    nalgebra::SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &ev| acc.max(ev.abs()))
}

/// Whether the communities can in principle be recovered from a single
/// trajectory: both must hold stubborn agents, and the two stubborn-opinion
/// means must differ (beyond [`MEAN_TOLERANCE`]), otherwise `χ₁ = χ₂` and
/// the threshold rule has nothing to separate.
pub fn identifiable(m: &BlockModel) -> bool {
    if m.n_s1() == 0 || m.n_s2() == 0 {
        return false;
    }
    let mean1 = m.x_s1.iter().sum::<f64>() / m.n_s1() as f64;
    let mean2 = m.x_s2.iter().sum::<f64>() / m.n_s2() as f64;
    (mean1 - mean2).abs() > MEAN_TOLERANCE
}

/// Verifies the characteristic shape of `(I − Ā)⁻¹`: each off-diagonal
/// block is constant, and diagonal block `i` equals a constant matrix plus
/// `(1/aᵢ)·I` with `aᵢ = w_s·nᵢ + w_d·n_{3−i}` — i.e. within a block, the
/// diagonal exceeds the off-diagonal by exactly `1/aᵢ`. Checks are at
/// [`INVERSE_STRUCTURE_TOL`]; returns `Ok(true)` when all hold. One-agent
/// blocks have no off-diagonal part, so only the cross-block constancy
/// applies to them.
pub fn inverse_block_structure(m: &BlockModel) -> Result<bool, AnalysisError> {
    require_valid(m)?;
    let n_r = m.n_r();
    if n_r == 0 {
        return Ok(true);
    }
    let matrices = expected_matrices(m)?;
    let system = DMatrix::identity(n_r, n_r) - &matrices.a_bar;
    let inv = system
        .try_inverse()
        .ok_or(AnalysisError::SingularSystem)?;

    let tol = INVERSE_STRUCTURE_TOL;
    let ranges = [(0, m.n_r1), (m.n_r1, n_r)];
    let a = [
        m.w_s * m.n1 as f64 + m.w_d * m.n2 as f64,
        m.w_s * m.n2 as f64 + m.w_d * m.n1 as f64,
    ];

    let constant_over = |rows: (usize, usize), cols: (usize, usize), skip_diag: bool| -> Option<f64> {
        let mut value = None;
        for r in rows.0..rows.1 {
            for c in cols.0..cols.1 {
                if skip_diag && r == c {
                    continue;
                }
                let entry = inv[(r, c)];
                match value {
                    None => value = Some(entry),
                    Some(v) if (entry - v).abs() <= tol => {}
                    Some(_) => return None,
                }
            }
        }
        value
    };

    // Off-diagonal blocks: constant, and equal to each other by symmetry.
    let c12 = constant_over(ranges[0], ranges[1], false);
    let c21 = constant_over(ranges[1], ranges[0], false);
    match (m.n_r1 > 0 && m.n_r2 > 0, c12, c21) {
        (false, _, _) => {}
        (true, Some(x), Some(y)) if (x - y).abs() <= tol => {}
        _ => return Ok(false),
    }

    // Diagonal blocks: constant diagonal, constant off-diagonal, and the
    // two differing by exactly 1/aᵢ.
    for (block, &(lo, hi)) in ranges.iter().enumerate() {
        let size = hi - lo;
        if size == 0 {
            continue;
        }
        let diag = {
            let mut value = None;
            for r in lo..hi {
                let entry = inv[(r, r)];
                match value {
                    None => value = Some(entry),
                    Some(v) if (entry - v).abs() <= tol => {}
                    Some(_) => return Ok(false),
                }
            }
            value.unwrap()
        };
        if size == 1 {
            continue;
        }
        let off = match constant_over((lo, hi), (lo, hi), true) {
            Some(v) => v,
            None => return Ok(false),
        };
        if (diag - off - 1.0 / a[block]).abs() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Extremal singular values of the empirical second-moment matrix
/// `Σ_k z(k)·z(k)ᵀ` over recorded states `z = (x_r, x_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankDeficiency {
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl RankDeficiency {
    /// `σ_min/σ_max`, or 0 for an all-zero moment matrix. Values near zero
    /// mean the trajectory spans a strictly lower-dimensional subspace than
    /// the number of agents.
    pub fn ratio(&self) -> f64 {
        if self.sigma_max > 0.0 {
            self.sigma_min / self.sigma_max
        } else {
            0.0
        }
    }
}

/// Measures how rank-deficient the second-moment matrix of a trajectory is.
/// With two or more stubborn agents the stacked states are confined to a
/// subspace (the stubborn coordinates never move), so `σ_min/σ_max` ≈ 0 no
/// matter how long the trajectory runs — the reason single-trajectory
/// least-squares identification of the weights is hopeless and a different
/// estimator is needed. States are reordered to `(regulars, stubborn)`
/// before stacking, matching the analysis convention.
pub fn rank_deficiency(
    m: &BlockModel,
    states: &[Vec<f64>],
) -> Result<RankDeficiency, AnalysisError> {
    require_valid(m)?;
    let n_s = m.n_s();
    if n_s < 2 {
        return Err(AnalysisError::TooFewStubborn { n_s });
    }
    if states.is_empty() {
        return Err(AnalysisError::EmptyTrajectory);
    }
    let n = m.n();
    let order: Vec<usize> = m
        .regular_agents()
        .into_iter()
        .chain(m.stubborn_agents())
        .collect();

    let mut moment = DMatrix::zeros(n, n);
    let mut z = DVector::zeros(n);
    for (index, state) in states.iter().enumerate() {
        if state.len() != n {
            return Err(AnalysisError::DimensionMismatch {
                index,
                got: state.len(),
                expected: n,
            });
        }
        for (slot, &agent) in order.iter().enumerate() {
            z[slot] = state[agent];
        }
        moment.ger(1.0, &z, &z, 1.0);
    }

    let singular = moment.svd(false, false).singular_values;
    let sigma_max = singular.iter().fold(0.0f64, |acc, &s| acc.max(s));
    let sigma_min = singular.iter().fold(f64::INFINITY, |acc, &s| acc.min(s));
    Ok(RankDeficiency {
        sigma_min,
        sigma_max,
    })
}
