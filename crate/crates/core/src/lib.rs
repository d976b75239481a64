//! Tree-structured deep Q-learning for multi-object window search.
//!
//! An agent starts from the whole image and transforms its attention window
//! with 13 discrete actions (5 sub-window scalings, 8 local translations).
//! A Q-network trained with experience replay scores the actions; at
//! inference every window expands into its best scaling child and its best
//! translation child, yielding `2^L − 1` ranked object proposals for `L`
//! levels.
//!
//! Scenes are synthetic: seeded rectangles on a noisy background, which keeps
//! every experiment reproducible from a manifest file.

pub mod cli;
pub mod evaluator;
pub mod featurizer;
pub mod geometry;
pub mod io;
pub mod mdp;
pub mod policy;
pub mod qnet;
pub mod replay;
pub mod scene;
pub mod svg;
pub mod trainer;
pub mod tree_search;

pub use featurizer::{FeatureVector, Featurizer, GridFeaturizer};
pub use geometry::{Action, ActionGeometry, ActionGroup, ImageExtent, Window};
pub use mdp::{Episode, HitFlags, Reward, SceneContext, State, Transition};
pub use qnet::{QNetwork, UpdateConfig};
pub use replay::ReplayMemory;
pub use scene::{Scene, SceneConfig};
pub use trainer::{train, TrainConfig};
pub use tree_search::{propose, propose_single_path, ProposalSet};
