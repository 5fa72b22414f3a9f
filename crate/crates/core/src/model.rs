//! Model construction and validation.
//!
//! Two representations of the same object: [`BlockModel`] describes the
//! two-community setting by sizes and a pair of activation weights
//! (within-community `w_s`, across-community `w_d`), while
//! [`GossipNetwork`] is the general form — a symmetric pair-activation
//! matrix `W` plus a set of stubborn agents with fixed opinions. The block
//! form is what the closed-form analysis understands; the general form is
//! what the simulator runs.
//!
//! Agent ordering in the block form is canonical: regular agents of
//! community 1 first, then its stubborn agents, then community 2's regular
//! agents, then its stubborn agents. Indices are 0-based everywhere in
//! code; file formats (edge lists, anchor files) are 1-based.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the total-activation-mass constraint `Σᵢⱼ W[i][j] = 1`
/// and for the symmetry check on user-supplied matrices.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Two stubborn-opinion means closer than this are treated as equal, which
/// makes the two communities statistically indistinguishable.
pub const MEAN_TOLERANCE: f64 = 1e-12;

/// Errors from model construction, conversion, and file parsing.
#[derive(Debug, Error)]
pub enum ModelError {
    /// The model failed hard validation; the message lists every violation.
    #[error("invalid model: {0}")]
    Invalid(String),
    /// An agent index fell outside `0..n`.
    #[error("agent index {index} out of range for {n} agents")]
    IndexOutOfRange { index: usize, n: usize },
    /// A community holds stubborn agents but no regular agent to anchor
    /// them to.
    #[error("community {community} has stubborn agents but no regular agent to anchor them to")]
    NoAnchorCandidate { community: u8 },
    /// An edge-list or anchor file could not be parsed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One of the two communities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Community {
    One,
    Two,
}

impl Community {
    /// The opposite community.
    pub fn other(self) -> Self {
        match self {
            Community::One => Community::Two,
            Community::Two => Community::One,
        }
    }

    /// 0 for community one, 1 for community two.
    pub fn index(self) -> usize {
        match self {
            Community::One => 0,
            Community::Two => 1,
        }
    }

    /// 1 for community one, 2 for community two (the on-disk encoding).
    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    /// Inverse of [`Community::number`].
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Community::One),
            2 => Some(Community::Two),
            _ => None,
        }
    }
}

impl fmt::Display for Community {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// A community label for every agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommunityAssignment {
    labels: Vec<Community>,
}

impl CommunityAssignment {
    pub fn new(labels: Vec<Community>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, agent: usize) -> Community {
        self.labels[agent]
    }

    pub fn set(&mut self, agent: usize, label: Community) {
        self.labels[agent] = label;
    }

    pub fn iter(&self) -> impl Iterator<Item = Community> + '_ {
        self.labels.iter().copied()
    }

    /// How many agents carry the given label.
    pub fn count(&self, label: Community) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Labels as 1/2 numbers, for serialization.
    pub fn to_numbers(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.number()).collect()
    }

    /// True when both assignments induce the same partition, i.e. they are
    /// equal either as-is or after swapping the two label names.
    pub fn same_partition(&self, other: &Self) -> bool {
        if self.labels.len() != other.labels.len() {
            return false;
        }
        self.labels == other.labels
            || self
                .labels
                .iter()
                .zip(&other.labels)
                .all(|(a, b)| a.other() == *b)
    }
}

/// The two-community block model.
///
/// Community 1 has `n1` agents of which the first `n_r1` (in the canonical
/// ordering) are regular and the remaining `n1 - n_r1` are stubborn with
/// fixed opinions `x_s1`; community 2 follows the same pattern. Any two
/// distinct agents of the same community activate together with probability
/// `2·w_s` per step, agents of different communities with `2·w_d`, and the
/// leftover probability mass sits on self-pairs, which change nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockModel {
    pub n1: usize,
    pub n2: usize,
    pub n_r1: usize,
    pub n_r2: usize,
    pub w_s: f64,
    pub w_d: f64,
    pub x_s1: Vec<f64>,
    pub x_s2: Vec<f64>,
}

impl BlockModel {
    /// The five-agent demonstration model used throughout the examples and
    /// validation suites: communities of sizes 2 and 3, one stubborn agent
    /// per community holding opinions 1 and 0.
    pub fn five_node_demo() -> Self {
        BlockModel {
            n1: 2,
            n2: 3,
            n_r1: 1,
            n_r2: 2,
            w_s: 0.05,
            w_d: 7.0 / 240.0,
            x_s1: vec![1.0],
            x_s2: vec![0.0],
        }
    }

    /// Total number of agents.
    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    /// Number of regular agents.
    pub fn n_r(&self) -> usize {
        self.n_r1 + self.n_r2
    }

    /// Stubborn count in community 1.
    pub fn n_s1(&self) -> usize {
        self.n1.saturating_sub(self.n_r1)
    }

    /// Stubborn count in community 2.
    pub fn n_s2(&self) -> usize {
        self.n2.saturating_sub(self.n_r2)
    }

    /// Total stubborn count.
    pub fn n_s(&self) -> usize {
        self.n_s1() + self.n_s2()
    }

    /// Which community an agent belongs to under the canonical ordering.
    pub fn community_of(&self, agent: usize) -> Community {
        if agent < self.n1 {
            Community::One
        } else {
            Community::Two
        }
    }

    /// Whether an agent is regular under the canonical ordering.
    pub fn is_regular(&self, agent: usize) -> bool {
        agent < self.n_r1 || (agent >= self.n1 && agent < self.n1 + self.n_r2)
    }

    /// Regular agents in ascending index order.
    pub fn regular_agents(&self) -> Vec<usize> {
        (0..self.n_r1)
            .chain(self.n1..self.n1 + self.n_r2)
            .collect()
    }

    /// Stubborn agents in ascending index order.
    pub fn stubborn_agents(&self) -> Vec<usize> {
        (self.n_r1..self.n1)
            .chain(self.n1 + self.n_r2..self.n())
            .collect()
    }

    /// Fixed opinions of the stubborn agents, in ascending agent order
    /// (community 1's first, then community 2's).
    pub fn stubborn_states(&self) -> Vec<f64> {
        self.x_s1.iter().chain(&self.x_s2).copied().collect()
    }

    /// The ground-truth community assignment.
    pub fn truth(&self) -> CommunityAssignment {
        CommunityAssignment::new((0..self.n()).map(|i| self.community_of(i)).collect())
    }

    /// Checks every construction rule; see [`ValidationReport`].
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let mut warnings = Vec::new();

        if self.n1 == 0 || self.n2 == 0 {
            violations.push(format!(
                "both communities must be nonempty (n1 = {}, n2 = {})",
                self.n1, self.n2
            ));
        }
        if self.n_r1 > self.n1 {
            violations.push(format!(
                "regular count n_r1 = {} exceeds community size n1 = {}",
                self.n_r1, self.n1
            ));
        }
        if self.n_r2 > self.n2 {
            violations.push(format!(
                "regular count n_r2 = {} exceeds community size n2 = {}",
                self.n_r2, self.n2
            ));
        }
        if self.n_r1 <= self.n1 && self.x_s1.len() != self.n_s1() {
            violations.push(format!(
                "x_s1 holds {} opinions but community 1 has {} stubborn agents",
                self.x_s1.len(),
                self.n_s1()
            ));
        }
        if self.n_r2 <= self.n2 && self.x_s2.len() != self.n_s2() {
            violations.push(format!(
                "x_s2 holds {} opinions but community 2 has {} stubborn agents",
                self.x_s2.len(),
                self.n_s2()
            ));
        }
        for (name, xs) in [("x_s1", &self.x_s1), ("x_s2", &self.x_s2)] {
            if xs.iter().any(|x| !x.is_finite()) {
                violations.push(format!("{name} contains a non-finite opinion"));
            }
        }
        if !self.w_s.is_finite() || !self.w_d.is_finite() {
            violations.push("activation weights must be finite".to_string());
        } else {
            if self.w_d <= 0.0 {
                violations.push(format!(
                    "across-community weight must be positive (w_d = {})",
                    self.w_d
                ));
            }
            if self.w_s <= self.w_d {
                violations.push(format!(
                    "within-community weight must exceed the across-community weight \
                     (w_s = {}, w_d = {})",
                    self.w_s, self.w_d
                ));
            }
            let mass = self.off_diagonal_mass();
            if mass > 1.0 + MASS_TOLERANCE {
                violations.push(format!(
                    "pair-activation mass {mass} exceeds 1; \
                     shrink w_s/w_d or the community sizes"
                ));
            }
        }

        if self.n_s1() == 0 {
            warnings.push(
                "community 1 has no stubborn agents; its stationary opinion is driven \
                 entirely by community 2 and the partition is not identifiable"
                    .to_string(),
            );
        }
        if self.n_s2() == 0 {
            warnings.push(
                "community 2 has no stubborn agents; its stationary opinion is driven \
                 entirely by community 1 and the partition is not identifiable"
                    .to_string(),
            );
        }
        if self.n_s1() > 0 && self.n_s2() > 0 {
            let m1 = mean(&self.x_s1);
            let m2 = mean(&self.x_s2);
            if (m1 - m2).abs() <= MEAN_TOLERANCE {
                warnings.push(format!(
                    "stubborn opinion means coincide ({m1} vs {m2}); the two communities \
                     settle on the same stationary opinion and cannot be told apart"
                ));
            }
        }

        ValidationReport {
            violations,
            warnings,
        }
    }

    /// Shorthand for `validate().is_ok()`.
    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Total probability mass on distinct-agent pairs,
    /// `w_s·(n1(n1−1) + n2(n2−1)) + 2·w_d·n1·n2`. The remainder up to 1
    /// lands on self-pairs.
    pub fn off_diagonal_mass(&self) -> f64 {
        let same = (self.n1 * self.n1.saturating_sub(1) + self.n2 * self.n2.saturating_sub(1))
            as f64;
        let cross = 2.0 * (self.n1 * self.n2) as f64;
        self.w_s * same + self.w_d * cross
    }

    /// Expands the block model into its general network form: `W[i][j]` is
    /// `w_s` or `w_d` by community membership, and the leftover activation
    /// mass is spread uniformly over the diagonal so the total is exactly 1.
    pub fn to_network(&self) -> Result<GossipNetwork, ModelError> {
        let report = self.validate();
        if !report.is_ok() {
            return Err(ModelError::Invalid(report.violations.join("; ")));
        }
        let n = self.n();
        let diag = (1.0 - self.off_diagonal_mass()) / n as f64;
        let w = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                diag
            } else if self.community_of(i) == self.community_of(j) {
                self.w_s
            } else {
                self.w_d
            }
        });
        let stubborn: Vec<(usize, f64)> = self
            .stubborn_agents()
            .into_iter()
            .zip(self.stubborn_states())
            .collect();
        GossipNetwork::new(w, &stubborn)
    }

    /// Default anchor choice: each stubborn agent is anchored to the first
    /// regular agent of its own community. Fails when a community holds
    /// stubborn agents but no regular one.
    pub fn default_anchors(&self) -> Result<StubbornPrior, ModelError> {
        let mut anchors = BTreeMap::new();
        for agent in self.stubborn_agents() {
            let community = self.community_of(agent);
            let anchor = match community {
                Community::One if self.n_r1 > 0 => 0,
                Community::Two if self.n_r2 > 0 => self.n1,
                _ => {
                    return Err(ModelError::NoAnchorCandidate {
                        community: community.number(),
                    })
                }
            };
            anchors.insert(agent, anchor);
        }
        Ok(StubbornPrior::new(anchors))
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Outcome of model validation: `violations` are hard failures that make
/// the model unusable, `warnings` flag models that run fine but whose
/// communities cannot be recovered from observations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() && self.warnings.is_empty() {
            return writeln!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// A general gossip network: a symmetric nonnegative pair-activation matrix
/// whose entries sum to 1, plus the set of stubborn agents and their fixed
/// opinions. At each step an unordered pair `{i, j}` activates with
/// probability `2·W[i][j]` (for `i ≠ j`) or `W[i][i]` (a no-op), and the
/// activated agents average their opinions unless stubborn.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipNetwork {
    w: DMatrix<f64>,
    stubborn: Vec<usize>,
    x_s: Vec<f64>,
    is_stubborn: Vec<bool>,
    regular: Vec<usize>,
}

impl GossipNetwork {
    /// Builds and validates a network. `stubborn` pairs agent indices with
    /// their fixed opinions.
    pub fn new(w: DMatrix<f64>, stubborn: &[(usize, f64)]) -> Result<Self, ModelError> {
        let n = w.nrows();
        let mut violations = Vec::new();
        if n == 0 {
            violations.push("network must have at least one agent".to_string());
        }
        if w.ncols() != n {
            violations.push(format!(
                "activation matrix must be square, got {}×{}",
                w.nrows(),
                w.ncols()
            ));
        } else {
            let mut mass = 0.0;
            'scan: for i in 0..n {
                for j in 0..n {
                    let wij = w[(i, j)];
                    if !wij.is_finite() || wij < 0.0 {
                        violations.push(format!("W[{}][{}] = {} is not a probability weight", i + 1, j + 1, wij));
                        break 'scan;
                    }
                    if (wij - w[(j, i)]).abs() > MASS_TOLERANCE {
                        violations.push(format!(
                            "activation matrix is not symmetric at ({}, {}): {} vs {}",
                            i + 1,
                            j + 1,
                            wij,
                            w[(j, i)]
                        ));
                        break 'scan;
                    }
                    mass += wij;
                }
            }
            if violations.is_empty() && (mass - 1.0).abs() > MASS_TOLERANCE {
                violations.push(format!(
                    "activation mass must sum to 1, got {mass} (off by {:e})",
                    mass - 1.0
                ));
            }
        }

        let mut sorted: Vec<(usize, f64)> = stubborn.to_vec();
        sorted.sort_by_key(|&(i, _)| i);
        for pair in sorted.windows(2) {
            if pair[0].0 == pair[1].0 {
                violations.push(format!("agent {} listed as stubborn twice", pair[0].0 + 1));
            }
        }
        for &(i, x) in &sorted {
            if i >= n {
                violations.push(format!(
                    "stubborn agent index {} out of range for {} agents",
                    i + 1,
                    n
                ));
            }
            if !x.is_finite() {
                violations.push(format!("stubborn opinion for agent {} is not finite", i + 1));
            }
        }

        if !violations.is_empty() {
            return Err(ModelError::Invalid(violations.join("; ")));
        }

        let mut is_stubborn = vec![false; n];
        for &(i, _) in &sorted {
            is_stubborn[i] = true;
        }
        let regular = (0..n).filter(|&i| !is_stubborn[i]).collect();
        Ok(GossipNetwork {
            w,
            stubborn: sorted.iter().map(|&(i, _)| i).collect(),
            x_s: sorted.iter().map(|&(_, x)| x).collect(),
            is_stubborn,
            regular,
        })
    }

    /// Parses the plain-text edge-list format: one edge per line as
    /// `i j` or `i j weight` with 1-based indices, `#` starting a comment.
    /// All lines must agree on whether they carry weights. Unweighted edges
    /// must be simple (no self-loops or duplicates) and each receives
    /// activation weight `1/(2|E|)`; weighted lines give `W[i][j]` directly
    /// (a line `i i w` puts no-op mass `w` on the diagonal) and must sum to
    /// total mass 1. The parsed network has no stubborn agents; attach them
    /// with [`GossipNetwork::with_stubborn`].
    pub fn from_edge_list(text: &str) -> Result<Self, ModelError> {
        let mut edges: Vec<(usize, usize, Option<f64>)> = Vec::new();
        let mut n = 0usize;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let data = raw.split('#').next().unwrap_or("");
            let tokens: Vec<&str> = data.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            if tokens.len() != 2 && tokens.len() != 3 {
                return Err(ModelError::Parse {
                    line,
                    msg: format!("expected `i j` or `i j weight`, got {} fields", tokens.len()),
                });
            }
            let parse_id = |tok: &str| -> Result<usize, ModelError> {
                let id: usize = tok.parse().map_err(|_| ModelError::Parse {
                    line,
                    msg: format!("`{tok}` is not an agent id"),
                })?;
                if id == 0 {
                    return Err(ModelError::Parse {
                        line,
                        msg: "agent ids are 1-based".to_string(),
                    });
                }
                Ok(id)
            };
            let i = parse_id(tokens[0])?;
            let j = parse_id(tokens[1])?;
            let weight = if tokens.len() == 3 {
                Some(tokens[2].parse::<f64>().map_err(|_| ModelError::Parse {
                    line,
                    msg: format!("`{}` is not a weight", tokens[2]),
                })?)
            } else {
                None
            };
            if let Some(first) = edges.first() {
                if first.2.is_some() != weight.is_some() {
                    return Err(ModelError::Parse {
                        line,
                        msg: "mixed weighted and unweighted lines".to_string(),
                    });
                }
            }
            n = n.max(i).max(j);
            edges.push((i - 1, j - 1, weight));
        }
        if edges.is_empty() {
            return Err(ModelError::Parse {
                line: 0,
                msg: "edge list holds no edges".to_string(),
            });
        }

        let weighted = edges[0].2.is_some();
        let mut w = DMatrix::zeros(n, n);
        let mut seen = std::collections::HashSet::new();
        for (idx, &(i, j, weight)) in edges.iter().enumerate() {
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                return Err(ModelError::Parse {
                    line: idx + 1,
                    msg: format!("edge {}–{} appears more than once", i + 1, j + 1),
                });
            }
            if weighted {
                let weight = weight.unwrap();
                w[(i, j)] = weight;
                w[(j, i)] = weight;
            } else {
                if i == j {
                    return Err(ModelError::Parse {
                        line: idx + 1,
                        msg: format!("self-loop on agent {} in an unweighted list", i + 1),
                    });
                }
                let weight = 1.0 / (2.0 * edges.len() as f64);
                w[(i, j)] = weight;
                w[(j, i)] = weight;
            }
        }
        GossipNetwork::new(w, &[])
    }

    /// Returns the same network with the stubborn set replaced.
    pub fn with_stubborn(self, stubborn: &[(usize, f64)]) -> Result<Self, ModelError> {
        GossipNetwork::new(self.w, stubborn)
    }

    /// Number of agents.
    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// The pair-activation matrix.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Probability that the unordered pair `{i, j}` activates in one step:
    /// `2·W[i][j]` for distinct agents, `W[i][i]` for the no-op self-pair.
    pub fn pair_probability(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.w[(i, i)]
        } else {
            2.0 * self.w[(i, j)]
        }
    }

    pub fn is_stubborn(&self, agent: usize) -> bool {
        self.is_stubborn[agent]
    }

    pub fn is_regular(&self, agent: usize) -> bool {
        !self.is_stubborn[agent]
    }

    /// Stubborn agents in ascending order.
    pub fn stubborn(&self) -> &[usize] {
        &self.stubborn
    }

    /// Regular agents in ascending order.
    pub fn regular(&self) -> &[usize] {
        &self.regular
    }

    /// Fixed opinions aligned with [`GossipNetwork::stubborn`].
    pub fn stubborn_states(&self) -> &[f64] {
        &self.x_s
    }

    /// The fixed opinion of a stubborn agent, `None` for regular agents.
    pub fn stubborn_state(&self, agent: usize) -> Option<f64> {
        self.stubborn
            .binary_search(&agent)
            .ok()
            .map(|slot| self.x_s[slot])
    }

    /// The linear update applied when pair `{i, j}` activates, as an `n×n`
    /// matrix acting on the opinion vector: activated regular agents move
    /// to the pair average, stubborn agents and everyone else keep their
    /// opinion, and a self-pair is the identity.
    pub fn update_matrix(&self, i: usize, j: usize) -> Result<DMatrix<f64>, ModelError> {
        let n = self.n();
        for idx in [i, j] {
            if idx >= n {
                return Err(ModelError::IndexOutOfRange { index: idx, n });
            }
        }
        let mut r = DMatrix::identity(n, n);
        if i == j {
            return Ok(r);
        }
        for (target, other) in [(i, j), (j, i)] {
            if !self.is_stubborn[target] {
                r[(target, target)] = 0.5;
                r[(target, other)] = 0.5;
            }
        }
        Ok(r)
    }
}

/// Anchor choices for stubborn agents: the detector cannot classify a
/// stubborn agent from its (constant) opinion, so each one inherits the
/// label of a designated regular agent, typically a known associate.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StubbornPrior {
    anchors: BTreeMap<usize, usize>,
}

impl StubbornPrior {
    pub fn new(anchors: BTreeMap<usize, usize>) -> Self {
        Self { anchors }
    }

    /// The regular agent whose label the given stubborn agent inherits.
    pub fn anchor_of(&self, stubborn: usize) -> Option<usize> {
        self.anchors.get(&stubborn).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.anchors.iter().map(|(&s, &a)| (s, a))
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Parses an anchor file: one `stubborn_id anchor_id` pair per line,
    /// 1-based, `#` starting a comment.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut anchors = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let data = raw.split('#').next().unwrap_or("");
            let tokens: Vec<&str> = data.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            if tokens.len() != 2 {
                return Err(ModelError::Parse {
                    line,
                    msg: format!("expected `stubborn_id anchor_id`, got {} fields", tokens.len()),
                });
            }
            let parse = |tok: &str| -> Result<usize, ModelError> {
                let id: usize = tok.parse().map_err(|_| ModelError::Parse {
                    line,
                    msg: format!("`{tok}` is not an agent id"),
                })?;
                if id == 0 {
                    return Err(ModelError::Parse {
                        line,
                        msg: "agent ids are 1-based".to_string(),
                    });
                }
                Ok(id - 1)
            };
            let stubborn = parse(tokens[0])?;
            let anchor = parse(tokens[1])?;
            if anchors.insert(stubborn, anchor).is_some() {
                return Err(ModelError::Parse {
                    line,
                    msg: format!("agent {} anchored twice", stubborn + 1),
                });
            }
        }
        Ok(Self { anchors })
    }
}

/// On-disk model description (JSON). `seed` is the default master seed for
/// runs over this model; command-line seeds override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n1: usize,
    pub n2: usize,
    pub n_r1: usize,
    pub n_r2: usize,
    pub w_s: f64,
    pub w_d: f64,
    pub x_s1: Vec<f64>,
    pub x_s2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ModelConfig {
    pub fn from_model(m: &BlockModel, seed: Option<u64>) -> Self {
        ModelConfig {
            n1: m.n1,
            n2: m.n2,
            n_r1: m.n_r1,
            n_r2: m.n_r2,
            w_s: m.w_s,
            w_d: m.w_d,
            x_s1: m.x_s1.clone(),
            x_s2: m.x_s2.clone(),
            seed,
        }
    }

    pub fn model(&self) -> BlockModel {
        BlockModel {
            n1: self.n1,
            n2: self.n2,
            n_r1: self.n_r1,
            n_r2: self.n_r2,
            w_s: self.w_s,
            w_d: self.w_d,
            x_s1: self.x_s1.clone(),
            x_s2: self.x_s2.clone(),
        }
    }
}

/// Draws a random model that passes validation: community sizes in
/// `[1, max_total - 1]` summing to at most `max_total`, at least one
/// stubborn agent overall, weights satisfying the strict order
/// `w_s > w_d > 0` with total pair mass at most 0.98, and stubborn opinions
/// uniform in `[-1, 1]`. Used by the randomized validation suites.
pub fn sample_valid_model<R: Rng + ?Sized>(rng: &mut R, max_total: usize) -> BlockModel {
    assert!(max_total >= 2, "need room for two communities");
    loop {
        let n = rng.random_range(2..=max_total);
        let n1 = rng.random_range(1..n);
        let n2 = n - n1;
        let n_r1 = rng.random_range(0..=n1);
        let n_r2 = rng.random_range(0..=n2);
        if n1 - n_r1 + (n2 - n_r2) == 0 {
            continue;
        }

        let same_pairs = (n1 * (n1 - 1) + n2 * (n2 - 1)) as f64;
        let cross_pairs = 2.0 * (n1 * n2) as f64;
        let w_d_raw = rng.random_range(0.1..0.9);
        let w_s_raw = w_d_raw * rng.random_range(1.05..3.0);
        let target_mass = rng.random_range(0.5..0.98);
        let scale = target_mass / (same_pairs * w_s_raw + cross_pairs * w_d_raw);

        let draw_opinions =
            |rng: &mut R, k: usize| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = BlockModel {
            n1,
            n2,
            n_r1,
            n_r2,
            w_s: w_s_raw * scale,
            w_d: w_d_raw * scale,
            x_s1: draw_opinions(rng, n1 - n_r1),
            x_s2: draw_opinions(rng, n2 - n_r2),
        };
        if model.is_valid() {
            return model;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn five_node_demo_is_valid_without_warnings() {
        let report = BlockModel::five_node_demo().validate();
        assert!(report.is_ok(), "{report}");
        assert!(report.warnings.is_empty(), "{report}");
    }

    #[test]
    fn canonical_ordering() {
        let m = BlockModel::five_node_demo();
        assert_eq!(m.regular_agents(), vec![0, 2, 3]);
        assert_eq!(m.stubborn_agents(), vec![1, 4]);
        assert_eq!(m.community_of(1), Community::One);
        assert_eq!(m.community_of(2), Community::Two);
        assert_eq!(m.stubborn_states(), vec![1.0, 0.0]);
        assert_eq!(m.truth().to_numbers(), vec![1, 1, 2, 2, 2]);
    }

    #[test]
    fn weight_order_violations_are_hard_failures() {
        let mut m = BlockModel::five_node_demo();
        m.w_d = m.w_s; // equal weights: no community structure
        let report = m.validate();
        assert!(!report.is_ok());
        assert!(report.violations.iter().any(|v| v.contains("within-community")));

        let mut m = BlockModel::five_node_demo();
        m.w_d = 0.0;
        assert!(!m.validate().is_ok());

        let mut m = BlockModel::five_node_demo();
        m.w_s = 0.4; // off-diagonal mass 8·0.4 + 0.35 > 1
        assert!(m
            .validate()
            .violations
            .iter()
            .any(|v| v.contains("mass")));
    }

    #[test]
    fn size_mismatches_are_hard_failures() {
        let mut m = BlockModel::five_node_demo();
        m.n_r1 = 3;
        assert!(!m.validate().is_ok());

        let mut m = BlockModel::five_node_demo();
        m.x_s2 = vec![0.0, 0.25];
        assert!(!m.validate().is_ok());
    }

    #[test]
    fn identifiability_problems_are_warnings_only() {
        let mut m = BlockModel::five_node_demo();
        m.x_s1 = vec![0.0]; // same mean as community 2's stubborn agent
        let report = m.validate();
        assert!(report.is_ok());
        assert_eq!(report.warnings.len(), 1);

        let m = BlockModel {
            n1: 2,
            n2: 2,
            n_r1: 2,
            n_r2: 1,
            w_s: 0.08,
            w_d: 0.04,
            x_s1: vec![],
            x_s2: vec![0.5],
        };
        let report = m.validate();
        assert!(report.is_ok(), "{report}");
        assert!(report.warnings[0].contains("community 1"));
    }

    #[test]
    fn five_node_network_matches_hand_expansion() {
        let net = BlockModel::five_node_demo().to_network().unwrap();
        let w = net.weights();
        // Off-diagonal pair mass is 0.75, so each of the five diagonal
        // entries carries (1 - 0.75)/5 = 0.05.
        assert_abs_diff_eq!(w[(0, 0)], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(w[(0, 1)], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(w[(0, 2)], 7.0 / 240.0, epsilon = 1e-15);
        assert_abs_diff_eq!(w[(3, 4)], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(w.sum(), 1.0, epsilon = 1e-12);
        assert_eq!(net.stubborn(), &[1, 4]);
        assert_eq!(net.regular(), &[0, 2, 3]);
        assert_eq!(net.stubborn_state(1), Some(1.0));
        assert_eq!(net.stubborn_state(4), Some(0.0));
        assert_eq!(net.stubborn_state(0), None);
    }

    #[test]
    fn pair_probabilities_sum_to_one() {
        let net = BlockModel::five_node_demo().to_network().unwrap();
        let n = net.n();
        let mut total = 0.0;
        for i in 0..n {
            for j in i..n {
                total += net.pair_probability(i, j);
            }
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn update_matrix_cases() {
        let net = BlockModel::five_node_demo().to_network().unwrap();

        // Two regular agents average each other.
        let r = net.update_matrix(0, 2).unwrap();
        assert_eq!(r[(0, 0)], 0.5);
        assert_eq!(r[(0, 2)], 0.5);
        assert_eq!(r[(2, 2)], 0.5);
        assert_eq!(r[(2, 0)], 0.5);
        assert_eq!(r[(3, 3)], 1.0);

        // Regular meets stubborn: only the regular row changes.
        let r = net.update_matrix(0, 1).unwrap();
        assert_eq!(r[(0, 0)], 0.5);
        assert_eq!(r[(0, 1)], 0.5);
        assert_eq!(r[(1, 1)], 1.0);
        assert_eq!(r[(1, 0)], 0.0);

        // Two stubborn agents: identity.
        let r = net.update_matrix(1, 4).unwrap();
        assert!(r.is_identity(0.0));

        // Self-pair: identity.
        let r = net.update_matrix(2, 2).unwrap();
        assert!(r.is_identity(0.0));

        assert!(matches!(
            net.update_matrix(0, 9),
            Err(ModelError::IndexOutOfRange { index: 9, n: 5 })
        ));
    }

    #[test]
    fn network_constructor_rejects_bad_matrices() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.25, 0.30, 0.20, 0.25]);
        assert!(GossipNetwork::new(asym, &[]).is_err());

        let short = DMatrix::from_row_slice(2, 2, &[0.2, 0.2, 0.2, 0.2]);
        assert!(GossipNetwork::new(short, &[]).is_err());

        let ok = DMatrix::from_row_slice(2, 2, &[0.25, 0.25, 0.25, 0.25]);
        assert!(GossipNetwork::new(ok.clone(), &[(0, 1.0)]).is_ok());
        assert!(GossipNetwork::new(ok.clone(), &[(2, 1.0)]).is_err());
        assert!(GossipNetwork::new(ok, &[(0, 1.0), (0, 0.5)]).is_err());
    }

    #[test]
    fn unweighted_edge_list_normalizes_by_edge_count() {
        let text = "# triangle\n1 2\n2 3\n1 3  # closes the cycle\n";
        let net = GossipNetwork::from_edge_list(text).unwrap();
        assert_eq!(net.n(), 3);
        assert_abs_diff_eq!(net.weights()[(0, 1)], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(net.weights().sum(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(net.pair_probability(0, 1), 1.0 / 3.0, epsilon = 1e-15);

        assert!(GossipNetwork::from_edge_list("1 1\n1 2\n").is_err());
        assert!(GossipNetwork::from_edge_list("1 2\n2 1\n").is_err());
        assert!(GossipNetwork::from_edge_list("1 2\n2 3 0.1\n").is_err());
        assert!(GossipNetwork::from_edge_list("# nothing\n").is_err());
    }

    #[test]
    fn weighted_edge_list_takes_weights_verbatim() {
        let text = "1 2 0.3\n1 1 0.2\n2 2 0.2\n";
        let net = GossipNetwork::from_edge_list(text).unwrap();
        assert_abs_diff_eq!(net.pair_probability(0, 1), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(net.pair_probability(0, 0), 0.2, epsilon = 1e-15);

        // Mass off by more than the tolerance.
        assert!(GossipNetwork::from_edge_list("1 2 0.3\n").is_err());
    }

    #[test]
    fn stubborn_prior_parsing() {
        let prior = StubbornPrior::from_text("# anchors\n2 1\n5 4\n").unwrap();
        assert_eq!(prior.anchor_of(1), Some(0));
        assert_eq!(prior.anchor_of(4), Some(3));
        assert_eq!(prior.anchor_of(0), None);
        assert!(StubbornPrior::from_text("2 1\n2 3\n").is_err());
        assert!(StubbornPrior::from_text("0 1\n").is_err());
    }

    #[test]
    fn default_anchors_point_at_first_regular_of_each_community() {
        let m = BlockModel::five_node_demo();
        let prior = m.default_anchors().unwrap();
        assert_eq!(prior.anchor_of(1), Some(0));
        assert_eq!(prior.anchor_of(4), Some(2));

        let all_stubborn_side = BlockModel {
            n1: 1,
            n2: 2,
            n_r1: 0,
            n_r2: 2,
            w_s: 0.1,
            w_d: 0.05,
            x_s1: vec![1.0],
            x_s2: vec![],
        };
        assert!(matches!(
            all_stubborn_side.default_anchors(),
            Err(ModelError::NoAnchorCandidate { community: 1 })
        ));
    }

    #[test]
    fn config_round_trip_preserves_model() {
        let m = BlockModel::five_node_demo();
        let config = ModelConfig::from_model(&m, Some(7));
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.model(), m);

        let err = serde_json::from_str::<ModelConfig>("{\"n1\": 1, \"bogus\": 2}");
        assert!(err.is_err());
    }

    #[test]
    fn sampled_models_pass_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let m = sample_valid_model(&mut rng, 8);
            assert!(m.n() <= 8);
            assert!(m.n_s() >= 1);
            let report = m.validate();
            assert!(report.is_ok(), "sampled model invalid: {report}");
            // The expansion must also satisfy the network-level checks.
            m.to_network().unwrap();
        }
    }

    #[test]
    fn partition_equality_ignores_label_names() {
        use Community::*;
        let a = CommunityAssignment::new(vec![One, One, Two]);
        let b = CommunityAssignment::new(vec![Two, Two, One]);
        let c = CommunityAssignment::new(vec![One, Two, Two]);
        assert!(a.same_partition(&b));
        assert!(!a.same_partition(&c));
        assert_eq!(a.count(One), 2);
    }
}
