//! Helpers shared by the integration suites.

#![allow(dead_code)] // each test binary uses a different subset

use gossip_blocks::model::GossipNetwork;
use nalgebra::DMatrix;
use std::io::Write;
use std::sync::Mutex;

/// Brute-force one-step expected update: the probability-weighted sum of
/// every unordered pair's update matrix, self-pairs included. This only
/// relies on the event-level contract (pair probabilities and per-pair
/// update matrices), so it checks the closed-form expected matrices
/// through a completely separate code path.
pub fn enumerated_expected_update(net: &GossipNetwork) -> DMatrix<f64> {
    let n = net.n();
    let mut sum = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let p = net.pair_probability(i, j);
            if p > 0.0 {
                sum += net.update_matrix(i, j).expect("indices in range") * p;
            }
        }
    }
    sum
}

/// Largest absolute entrywise difference.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

/// Median of a sample (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mid = sorted.len() / 2;
    if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    }
}

/// Serializes the acceptance criteria so their runtime budgets are measured
/// without interference from the other tests in the same binary.
pub static GATE: Mutex<()> = Mutex::new(());

/// Prints one verdict line for an acceptance criterion straight to the
/// process stderr (bypassing libtest's capture, so the line shows up in a
/// plain `cargo test` run), then fails the test if the criterion did not
/// hold.
pub fn criterion(number: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    // The leading newline detaches the verdict from libtest's in-progress
    // `test … ...` line, so each criterion gets a line of its own.
    let _ = writeln!(err, "\nacceptance {number:02} {verdict}  {name}: {detail}");
    drop(err);
    assert!(pass, "acceptance criterion {number:02} ({name}): {detail}");
}
