//! Proposal generation by top-down bifurcating search.
//!
//! Every node takes both its best scaling action and its best translation
//! action, so `L` levels yield `2^L − 1` windows. Proposals are ranked level by
//! level; within a level parent order is kept and the scaling child precedes
//! the translation child.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::featurizer::Featurizer;
use crate::geometry::{Action, ActionGeometry, Window, SCALING_IDS, TRANSLATION_IDS};
use crate::mdp::{initial_state, transition, MdpError, SceneContext, State, HISTORY_LEN};
use crate::policy::{best_overall, best_scaling, best_translation};
use crate::qnet::{QNetError, QNetwork};

pub const MAX_LEVELS: usize = 10;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("levels must lie in 1..={MAX_LEVELS}, got {0}")]
    InvalidLevels(usize),
    #[error("single-path steps must be at most {HISTORY_LEN}, got {0}")]
    InvalidSteps(usize),
    #[error(transparent)]
    QNet(#[from] QNetError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub window: Window,
    /// 1-based tree depth; the root is level 1.
    pub level: usize,
    /// Level-order index: root 0, children of `i` are `2i+1` (scaling) and `2i+2`.
    pub node_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProposalSet {
    pub proposals: Vec<Proposal>,
}

impl ProposalSet {
    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn windows(&self) -> Vec<Window> {
        self.proposals.iter().map(|p| p.window).collect()
    }
}

/// Chooses the (scaling, translation) pair to expand at a node.
pub trait BranchPolicy {
    fn branches(&mut self, state: &State) -> Result<(Action, Action), SearchError>;
}

/// Group-wise argmax of the network's action values.
pub struct GreedyBranches<'a> {
    pub net: &'a QNetwork,
}

impl BranchPolicy for GreedyBranches<'_> {
    fn branches(&mut self, state: &State) -> Result<(Action, Action), SearchError> {
        let q = self.net.forward(&state.network_input())?;
        Ok((best_scaling(&q), best_translation(&q)))
    }
}

/// Uniformly random member of each group; the untrained baseline.
pub struct RandomBranches<R> {
    pub rng: R,
}

impl<R: Rng> BranchPolicy for RandomBranches<R> {
    fn branches(&mut self, _state: &State) -> Result<(Action, Action), SearchError> {
        let s = Action::ALL[self.rng.gen_range(SCALING_IDS)];
        let t = Action::ALL[self.rng.gen_range(TRANSLATION_IDS)];
        Ok((s, t))
    }
}

/// Breadth-first expansion to `levels` levels under an arbitrary branch policy.
pub fn propose_with(
    ctx: &SceneContext,
    featurizer: &dyn Featurizer,
    geometry: &ActionGeometry,
    levels: usize,
    policy: &mut dyn BranchPolicy,
) -> Result<ProposalSet, SearchError> {
    if levels == 0 || levels > MAX_LEVELS {
        return Err(SearchError::InvalidLevels(levels));
    }
    let root = initial_state(ctx, featurizer);
    let mut proposals = vec![Proposal {
        window: root.window,
        level: 1,
        node_index: 0,
    }];
    let mut frontier = vec![(0usize, root)];
    for level in 2..=levels {
        let mut next = Vec::with_capacity(frontier.len() * 2);
        for (index, state) in &frontier {
            let (scale, shift) = policy.branches(state)?;
            for (k, action) in [(1, scale), (2, shift)] {
                let child = transition(ctx, featurizer, geometry, state, action)?;
                let node_index = 2 * index + k;
                proposals.push(Proposal {
                    window: child.window,
                    level,
                    node_index,
                });
                next.push((node_index, child));
            }
        }
        frontier = next;
    }
    Ok(ProposalSet { proposals })
}

/// Tree proposals from a trained network.
pub fn propose(
    ctx: &SceneContext,
    featurizer: &dyn Featurizer,
    net: &QNetwork,
    geometry: &ActionGeometry,
    levels: usize,
) -> Result<ProposalSet, SearchError> {
    propose_with(ctx, featurizer, geometry, levels, &mut GreedyBranches { net })
}

/// Follows only the overall best action: `steps + 1` windows including the root.
pub fn propose_single_path(
    ctx: &SceneContext,
    featurizer: &dyn Featurizer,
    net: &QNetwork,
    geometry: &ActionGeometry,
    steps: usize,
) -> Result<ProposalSet, SearchError> {
    if steps > HISTORY_LEN {
        return Err(SearchError::InvalidSteps(steps));
    }
    let mut state = initial_state(ctx, featurizer);
    let mut proposals = Vec::with_capacity(steps + 1);
    proposals.push(Proposal {
        window: state.window,
        level: 1,
        node_index: 0,
    });
    for k in 1..=steps {
        let q = net.forward(&state.network_input())?;
        state = transition(ctx, featurizer, geometry, &state, best_overall(&q))?;
        proposals.push(Proposal {
            window: state.window,
            level: k + 1,
            node_index: k,
        });
    }
    Ok(ProposalSet { proposals })
}

#[derive(Debug, Error)]
#[error("line {line}: {message}")]
pub struct ProposalParseError {
    pub line: usize,
    pub message: String,
}

/// Tab-separated: scene_id, rank (1-based), level, x0, y0, x1, y1.
pub fn write_proposals<'a>(entries: impl IntoIterator<Item = (&'a str, &'a ProposalSet)>) -> String {
    let mut out = String::new();
    for (id, set) in entries {
        for (rank, p) in set.proposals.iter().enumerate() {
            let w = &p.window;
            writeln!(out, "{id}\t{}\t{}\t{}\t{}\t{}\t{}", rank + 1, p.level, w.x0(), w.y0(), w.x1(), w.y1()).unwrap();
        }
    }
    out
}

/// Proposals of one scene as read back from a proposal file.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneProposals {
    pub scene_id: String,
    /// Rank order.
    pub proposals: Vec<(usize, Window)>,
}

/// Parses a proposal file. Each scene's lines must be contiguous with ranks
/// 1, 2, 3, …; scenes keep their first-appearance order.
pub fn parse_proposals(text: &str) -> Result<Vec<SceneProposals>, ProposalParseError> {
    let mut out: Vec<SceneProposals> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| ProposalParseError { line: line_no, message };
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 tab-separated fields, found {}", f.len())));
        }
        let id = f[0];
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(err(format!("invalid scene id {id:?}")));
        }
        let rank: usize = f[1].parse().map_err(|_| err(format!("bad rank {:?}", f[1])))?;
        let level: usize = f[2].parse().map_err(|_| err(format!("bad level {:?}", f[2])))?;
        if level == 0 {
            return Err(err("level must be at least 1".into()));
        }
        let c: Vec<f64> = f[3..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| err(format!("bad coordinate {s:?}"))))
            .collect::<Result<_, _>>()?;
        let window = Window::new(c[0], c[1], c[2], c[3]).map_err(|e| err(e.to_string()))?;

        let slot = match out.last() {
            Some(last) if last.scene_id == id => out.len() - 1,
            _ => {
                if !seen.insert(id.to_string()) {
                    return Err(err(format!("proposals for scene {id:?} are not contiguous")));
                }
                out.push(SceneProposals {
                    scene_id: id.to_string(),
                    proposals: Vec::new(),
                });
                out.len() - 1
            }
        };
        let expected = out[slot].proposals.len() + 1;
        if rank != expected {
            return Err(err(format!("scene {id:?}: expected rank {expected}, found {rank}")));
        }
        out[slot].proposals.push((level, window));
    }
    Ok(out)
}
