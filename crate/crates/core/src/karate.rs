//! The bundled benchmark network: Zachary's 34-member karate club with its
//! 78 friendship ties and the two-faction split observed when the club
//! broke apart. The instructor (member 1) and the senior officer
//! (member 34) act as the stubborn agents, holding opinions 1 and 0 by
//! default; everyone else is regular. Each step activates one tie uniformly
//! at random (weight `1/(2·78)` per tie, so the pair probability is
//! `1/78`).
//!
//! This network is *not* a two-block model — degrees vary wildly and the
//! factions are not homogeneous — which is exactly why it makes a good
//! robustness check for the detector.

use crate::model::{Community, CommunityAssignment, GossipNetwork, ModelError, StubbornPrior};

const EDGES_TXT: &str = include_str!("../data/karate_edges.txt");
const NODES_TXT: &str = include_str!("../data/karate_nodes.txt");
const ANCHORS_TXT: &str = include_str!("../data/karate_anchors.txt");

/// 0-based index of the instructor (member 1).
pub const INSTRUCTOR: usize = 0;
/// 0-based index of the senior officer (member 34).
pub const OFFICER: usize = 33;

/// The loaded benchmark: network with the two stubborn members attached,
/// the observed faction split, and the default anchors (member 1 → member
/// 2, member 34 → member 33).
#[derive(Debug, Clone)]
pub struct KarateDataset {
    pub network: GossipNetwork,
    pub truth: CommunityAssignment,
    pub anchors: StubbornPrior,
}

/// Loads the dataset with the default stubborn opinions 1.0 (instructor)
/// and 0.0 (officer).
pub fn load() -> Result<KarateDataset, ModelError> {
    load_with_opinions(1.0, 0.0)
}

/// Loads the dataset with explicit stubborn opinions for the instructor
/// and the officer.
pub fn load_with_opinions(
    instructor_opinion: f64,
    officer_opinion: f64,
) -> Result<KarateDataset, ModelError> {
    let network = GossipNetwork::from_edge_list(EDGES_TXT)?
        .with_stubborn(&[(INSTRUCTOR, instructor_opinion), (OFFICER, officer_opinion)])?;

    let mut labels = vec![None; network.n()];
    for (idx, raw) in NODES_TXT.lines().enumerate() {
        let data = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = data.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let parse_err = |msg: String| ModelError::Parse {
            line: idx + 1,
            msg,
        };
        if tokens.len() != 2 {
            return Err(parse_err(format!("expected `id label`, got {} fields", tokens.len())));
        }
        let id: usize = tokens[0]
            .parse()
            .map_err(|_| parse_err(format!("`{}` is not a member id", tokens[0])))?;
        if id == 0 || id > network.n() {
            return Err(parse_err(format!("member id {id} out of range")));
        }
        let label = tokens[1]
            .parse::<u8>()
            .ok()
            .and_then(Community::from_number)
            .ok_or_else(|| parse_err(format!("`{}` is not a community label", tokens[1])))?;
        labels[id - 1] = Some(label);
    }
    let truth = CommunityAssignment::new(
        labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or(ModelError::Parse {
                    line: 0,
                    msg: format!("member {} has no faction label", i + 1),
                })
            })
            .collect::<Result<_, _>>()?,
    );

    let anchors = StubbornPrior::from_text(ANCHORS_TXT)?;
    Ok(KarateDataset {
        network,
        truth,
        anchors,
    })
}
