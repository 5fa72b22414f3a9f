//! Opinion dynamics on two-community gossip networks.
//!
//! A population of `n` agents holds scalar opinions. At each discrete step
//! one unordered pair of agents activates at random; activated *regular*
//! agents move to the pair's average opinion, while *stubborn* agents never
//! change theirs. When the activation probabilities take only two values —
//! `w_s` within a community, `w_d < w_s` across — the expected dynamics
//! have closed-form stationary values, one per community, and the
//! community structure plus the weights can be recovered online from a
//! single opinion trajectory.
//!
//! The crate provides, by module:
//!
//! * [`model`] — the block model, the general network form, validation,
//!   and the file formats (JSON model configs, edge lists, anchor files);
//! * [`analysis`] — expected update matrices, stationary closed forms and
//!   their cross-checked linear solve, identifiability, and the
//!   rank-deficiency diagnostic;
//! * [`sim`] — the trajectory simulator with streaming observers and
//!   replication fan-out;
//! * [`detector`] — the online community detector and weight estimator;
//! * [`karate`] — the bundled 34-member benchmark network;
//! * [`harness`] — end-to-end experiment drivers, the accuracy metric,
//!   Monte Carlo consistency checks, and CSV/JSON output;
//! * [`rng`] — seeded, stream-split randomness making every run a pure
//!   function of `(config, seed)`.
//!
//! ```
//! use gossip_blocks::analysis::stationary_expectation;
//! use gossip_blocks::harness::run_five_node_experiment;
//! use gossip_blocks::model::BlockModel;
//!
//! let model = BlockModel::five_node_demo();
//! let analysis = stationary_expectation(&model).unwrap();
//! assert!(analysis.chi1 > analysis.chi2);
//!
//! let run = run_five_node_experiment(20_000, 1_000, 7).unwrap();
//! assert_eq!(run.report.final_labels.len(), model.n());
//! ```

pub mod analysis;
pub mod detector;
pub mod harness;
pub mod karate;
pub mod model;
pub mod rng;
pub mod sim;
