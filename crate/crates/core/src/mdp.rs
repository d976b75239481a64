//! The window-search decision process: states, hit flags, rewards and stepping.

use std::sync::Arc;

use thiserror::Error;

use crate::featurizer::{FeatureVector, Featurizer};
use crate::geometry::{Action, ActionGeometry, Window, NUM_ACTIONS};
use crate::scene::{Raster, Scene};

/// Number of action slots recorded in a state.
pub const HISTORY_LEN: usize = 50;
/// IoU above which a ground truth counts as hit.
pub const HIT_IOU: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("episode already terminal after {0} steps")]
    Terminal(usize),
    #[error("scene {0:?} has no ground-truth objects")]
    NoGroundTruth(String),
    #[error("action history is full ({HISTORY_LEN} slots)")]
    HistoryFull,
    #[error("invalid history matrix: {0}")]
    InvalidHistory(String),
    #[error("max_steps must lie in 1..={HISTORY_LEN}, got {0}")]
    InvalidMaxSteps(usize),
}

/// The actions taken so far, one slot per step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionHistory {
    actions: Vec<Action>,
}

impl ActionHistory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn with(&self, action: Action) -> Result<Self, MdpError> {
        if self.actions.len() >= HISTORY_LEN {
            return Err(MdpError::HistoryFull);
        }
        let mut actions = self.actions.clone();
        actions.push(action);
        Ok(Self { actions })
    }

    /// Appends the 50×13 one-hot matrix, row-major, to `out`.
    pub fn encode_into(&self, out: &mut Vec<f64>) {
        let start = out.len();
        out.resize(start + HISTORY_LEN * NUM_ACTIONS, 0.0);
        for (t, a) in self.actions.iter().enumerate() {
            out[start + t * NUM_ACTIONS + a.id()] = 1.0;
        }
    }

    pub fn to_matrix(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(HISTORY_LEN * NUM_ACTIONS);
        self.encode_into(&mut out);
        out
    }

    /// Inverse of [`ActionHistory::to_matrix`]. Rows must be one-hot up to the
    /// last recorded step and all-zero afterwards.
    pub fn from_matrix(matrix: &[f64]) -> Result<Self, MdpError> {
        if matrix.len() != HISTORY_LEN * NUM_ACTIONS {
            return Err(MdpError::InvalidHistory(format!("expected {} values, got {}", HISTORY_LEN * NUM_ACTIONS, matrix.len())));
        }
        let mut actions = Vec::new();
        let mut ended = false;
        for (t, row) in matrix.chunks(NUM_ACTIONS).enumerate() {
            if row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(MdpError::InvalidHistory(format!("row {t} is not binary")));
            }
            let ones: Vec<usize> = (0..NUM_ACTIONS).filter(|&i| row[i] == 1.0).collect();
            match (ones.len(), ended) {
                (0, _) => ended = true,
                (1, false) => actions.push(Action::from_id(ones[0]).expect("index < 13")),
                (1, true) => return Err(MdpError::InvalidHistory(format!("row {t} follows an empty row"))),
                _ => return Err(MdpError::InvalidHistory(format!("row {t} has {} bits set", ones.len()))),
            }
        }
        Ok(Self { actions })
    }
}

/// An observation: the current window's features, the whole-image features and
/// the action history.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub window: Window,
    pub window_feature: FeatureVector,
    pub global_feature: Arc<FeatureVector>,
    pub history: ActionHistory,
}

impl State {
    pub fn step_index(&self) -> usize {
        self.history.len()
    }

    /// Length of [`State::network_input`] for features of length `feature_dim`.
    pub fn input_dim(feature_dim: usize) -> usize {
        2 * feature_dim + HISTORY_LEN * NUM_ACTIONS
    }

    pub fn network_input(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::input_dim(self.window_feature.len()));
        out.extend_from_slice(self.window_feature.as_slice());
        out.extend_from_slice(self.global_feature.as_slice());
        self.history.encode_into(&mut out);
        out
    }
}

/// A scene prepared for search: rendered raster and cached global feature.
#[derive(Debug, Clone)]
pub struct SceneContext {
    pub scene: Scene,
    pub raster: Raster,
    pub global_feature: Arc<FeatureVector>,
    pub ground_truths: Vec<Window>,
}

impl SceneContext {
    pub fn new(scene: Scene, featurizer: &dyn Featurizer) -> Self {
        let raster = scene.render();
        let global_feature = Arc::new(featurizer.extract_global(&raster));
        let ground_truths = scene.ground_truths();
        Self {
            scene,
            raster,
            global_feature,
            ground_truths,
        }
    }

    pub fn root_window(&self) -> Window {
        Window::full(self.scene.extent())
    }
}

pub fn initial_state(ctx: &SceneContext, featurizer: &dyn Featurizer) -> State {
    let window = ctx.root_window();
    State {
        window,
        window_feature: featurizer.extract(&ctx.raster, &window),
        global_feature: Arc::clone(&ctx.global_feature),
        history: ActionHistory::default(),
    }
}

/// Deterministic state transition (no reward).
pub fn transition(
    ctx: &SceneContext,
    featurizer: &dyn Featurizer,
    geometry: &ActionGeometry,
    state: &State,
    action: Action,
) -> Result<State, MdpError> {
    let window = geometry.apply(&state.window, action, ctx.scene.extent());
    Ok(State {
        window,
        window_feature: featurizer.extract(&ctx.raster, &window),
        global_feature: Arc::clone(&state.global_feature),
        history: state.history.with(action)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Reward {
    /// No ground truth got closer.
    Penalty,
    /// Some ground truth's IoU strictly increased.
    Improve,
    /// Some ground truth crossed the hit threshold for the first time.
    FirstHit,
}

impl Reward {
    pub fn value(self) -> f64 {
        match self {
            Reward::Penalty => -1.0,
            Reward::Improve => 1.0,
            Reward::FirstHit => 5.0,
        }
    }
}

/// Per-ground-truth record of whether any visited window exceeded [`HIT_IOU`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HitFlags {
    hit: Vec<bool>,
}

impl HitFlags {
    /// All flags at −1.
    pub fn new(n: usize) -> Self {
        Self { hit: vec![false; n] }
    }

    /// Flags after visiting only `root`.
    pub fn for_root(root: &Window, gts: &[Window]) -> Self {
        Self {
            hit: gts.iter().map(|g| root.iou(g) > HIT_IOU).collect(),
        }
    }

    pub fn from_bools(hit: Vec<bool>) -> Self {
        Self { hit }
    }

    pub fn len(&self) -> usize {
        self.hit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hit.is_empty()
    }

    pub fn is_hit(&self, i: usize) -> bool {
        self.hit[i]
    }

    /// Flag value in {−1, +1}.
    pub fn value(&self, i: usize) -> i8 {
        if self.hit[i] {
            1
        } else {
            -1
        }
    }

    pub fn hits(&self) -> usize {
        self.hit.iter().filter(|&&h| h).count()
    }
}

/// +1 if some ground truth has strictly higher IoU with `next` than with
/// `current`, else −1 (ties count as no improvement).
pub fn sign_reward(current: &Window, next: &Window, gts: &[Window]) -> Reward {
    if gts.iter().any(|g| next.iou(g) > current.iou(g)) {
        Reward::Improve
    } else {
        Reward::Penalty
    }
}

/// Updates hit flags with `next` and returns the first-hit bonus if any flag
/// flipped, otherwise the sign reward.
pub fn reward(current: &Window, next: &Window, gts: &[Window], flags: &HitFlags) -> (Reward, HitFlags) {
    assert_eq!(flags.len(), gts.len(), "one hit flag per ground truth");
    let mut updated = flags.clone();
    let mut first_hit = false;
    for (i, g) in gts.iter().enumerate() {
        if !updated.hit[i] && next.iou(g) > HIT_IOU {
            updated.hit[i] = true;
            first_hit = true;
        }
    }
    let r = if first_hit {
        Reward::FirstHit
    } else {
        sign_reward(current, next, gts)
    };
    (r, updated)
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: State,
    pub reward: Reward,
    pub flags: HitFlags,
    pub terminal: bool,
}

/// Takes `action` in `state`; `terminal` is set once the step count reaches `max_steps`.
pub fn step(
    ctx: &SceneContext,
    featurizer: &dyn Featurizer,
    geometry: &ActionGeometry,
    state: &State,
    action: Action,
    flags: &HitFlags,
    max_steps: usize,
) -> Result<StepResult, MdpError> {
    if state.step_index() >= max_steps {
        return Err(MdpError::Terminal(state.step_index()));
    }
    let next_state = transition(ctx, featurizer, geometry, state, action)?;
    let (reward, flags) = reward(&state.window, &next_state.window, &ctx.ground_truths, flags);
    let terminal = next_state.step_index() == max_steps;
    Ok(StepResult {
        next_state,
        reward,
        flags,
        terminal,
    })
}

/// A single-owner running episode over one scene.
pub struct Episode<'a> {
    ctx: &'a SceneContext,
    featurizer: &'a dyn Featurizer,
    geometry: ActionGeometry,
    max_steps: usize,
    state: Arc<State>,
    flags: HitFlags,
}

/// One recorded step of an [`Episode`].
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Arc<State>,
    pub action: Action,
    pub reward: Reward,
    pub next_state: Arc<State>,
    pub terminal: bool,
}

impl<'a> Episode<'a> {
    pub fn new(
        ctx: &'a SceneContext,
        featurizer: &'a dyn Featurizer,
        geometry: ActionGeometry,
        max_steps: usize,
    ) -> Result<Self, MdpError> {
        if ctx.ground_truths.is_empty() {
            return Err(MdpError::NoGroundTruth(ctx.scene.id.clone()));
        }
        if max_steps == 0 || max_steps > HISTORY_LEN {
            return Err(MdpError::InvalidMaxSteps(max_steps));
        }
        let state = initial_state(ctx, featurizer);
        let flags = HitFlags::for_root(&state.window, &ctx.ground_truths);
        Ok(Self {
            ctx,
            featurizer,
            geometry,
            max_steps,
            state: Arc::new(state),
            flags,
        })
    }

    pub fn state(&self) -> &Arc<State> {
        &self.state
    }

    pub fn flags(&self) -> &HitFlags {
        &self.flags
    }

    pub fn is_terminal(&self) -> bool {
        self.state.step_index() >= self.max_steps
    }

    pub fn step(&mut self, action: Action) -> Result<Transition, MdpError> {
        let out = step(self.ctx, self.featurizer, &self.geometry, &self.state, action, &self.flags, self.max_steps)?;
        let next = Arc::new(out.next_state);
        let prev = std::mem::replace(&mut self.state, Arc::clone(&next));
        self.flags = out.flags;
        Ok(Transition {
            state: prev,
            action,
            reward: out.reward,
            next_state: next,
            terminal: out.terminal,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::GridFeaturizer;
    use crate::geometry::{ImageExtent, SCALING_IDS};
    use crate::scene::{generate_dataset, SceneConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn win(x0: f64, y0: f64, x1: f64, y1: f64) -> Window {
        Window::new(x0, y0, x1, y1).unwrap()
    }

    fn context(seed: u64) -> SceneContext {
        let scene = generate_dataset(1, seed, &SceneConfig::default()).unwrap().remove(0);
        SceneContext::new(scene, &GridFeaturizer::default())
    }

    #[test]
    fn initial_state_is_whole_image() {
        let f = GridFeaturizer::default();
        let ctx = context(1);
        let s = initial_state(&ctx, &f);
        assert_eq!(s.window, win(0.0, 0.0, 128.0, 128.0));
        assert_eq!(s.history.to_matrix().iter().sum::<f64>(), 0.0);
        assert_eq!(&s.window_feature, s.global_feature.as_ref());
        assert_eq!(s.network_input().len(), State::input_dim(f.dim()));
        assert_eq!(State::input_dim(128), 906);
    }

    #[test]
    fn sign_reward_cases() {
        let g = [win(0.0, 0.0, 10.0, 10.0)];
        // IoU 0.30 -> 0.40 along the x-axis.
        let w = win(0.0, 0.0, 3.0, 10.0);
        let w2 = win(0.0, 0.0, 4.0, 10.0);
        assert!((w.iou(&g[0]) - 0.3).abs() < 1e-12 && (w2.iou(&g[0]) - 0.4).abs() < 1e-12);
        assert_eq!(sign_reward(&w, &w2, &g), Reward::Improve);
        assert_eq!(sign_reward(&w2, &w, &g), Reward::Penalty);
        assert_eq!(sign_reward(&w, &w, &g), Reward::Penalty);
    }

    #[test]
    fn reward_first_hit_then_improvement() {
        let g = [win(0.0, 0.0, 10.0, 10.0)];
        let flags = HitFlags::new(1);
        let (r, flags) = reward(&win(0.0, 0.0, 4.0, 10.0), &win(0.0, 0.0, 6.0, 10.0), &g, &flags);
        assert_eq!(r, Reward::FirstHit);
        assert_eq!(flags.value(0), 1);
        // Already hit: 0.6 -> 0.7 is a plain improvement.
        let (r, flags2) = reward(&win(0.0, 0.0, 6.0, 10.0), &win(0.0, 0.0, 7.0, 10.0), &g, &flags);
        assert_eq!(r, Reward::Improve);
        assert_eq!(flags2, flags);
    }

    #[test]
    fn first_hit_takes_precedence() {
        let gts = [win(0.0, 0.0, 10.0, 10.0), win(50.0, 50.0, 60.0, 60.0)];
        let w = win(0.0, 0.0, 55.0, 55.0);
        let w2 = win(0.0, 0.0, 8.0, 10.0);
        assert!(w2.iou(&gts[1]) < w.iou(&gts[1]));
        let (r, flags) = reward(&w, &w2, &gts, &HitFlags::new(2));
        assert_eq!(r, Reward::FirstHit);
        assert_eq!((flags.value(0), flags.value(1)), (1, -1));
    }

    #[test]
    fn history_round_trip_and_rejects() {
        let mut h = ActionHistory::default();
        for id in [4, 0, 12, 7, 7] {
            h = h.with(Action::from_id(id).unwrap()).unwrap();
        }
        let m = h.to_matrix();
        assert_eq!(m.len(), 650);
        assert_eq!(ActionHistory::from_matrix(&m).unwrap(), h);
        let mut gap = m.clone();
        gap[13] = 0.0; // clears row 1, leaving rows 2.. set
        assert!(ActionHistory::from_matrix(&gap).is_err());
        let mut double = m;
        double[1] = 1.0;
        assert!(ActionHistory::from_matrix(&double).is_err());
        assert!(ActionHistory::from_matrix(&[0.0; 10]).is_err());
    }

    #[test]
    fn episode_runs_to_terminal() {
        let f = GridFeaturizer::default();
        let ctx = context(4);
        let mut ep = Episode::new(&ctx, &f, ActionGeometry::default(), 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in 0..50 {
            let before = ep.state().history.to_matrix().iter().sum::<f64>();
            let a = Action::from_id(rng.gen_range(0..13)).unwrap();
            let tr = ep.step(a).unwrap();
            assert_eq!(tr.next_state.history.to_matrix().iter().sum::<f64>(), before + 1.0);
            assert_eq!(tr.terminal, t == 49);
            assert!(tr.next_state.window.is_within(ctx.scene.extent()));
        }
        assert!(ep.is_terminal());
        assert!(matches!(ep.step(Action::MoveLeft), Err(MdpError::Terminal(50))));
    }

    #[test]
    fn empty_scene_is_rejected() {
        let f = GridFeaturizer::default();
        let mut ctx = context(4);
        ctx.ground_truths.clear();
        assert!(matches!(
            Episode::new(&ctx, &f, ActionGeometry::default(), 50),
            Err(MdpError::NoGroundTruth(_))
        ));
    }

    #[test]
    fn flags_from_root_count_whole_image() {
        let root = Window::full(ImageExtent::new(100, 100).unwrap());
        let gts = [win(0.0, 0.0, 90.0, 90.0), win(0.0, 0.0, 10.0, 10.0)];
        let f = HitFlags::for_root(&root, &gts);
        assert!(f.is_hit(0) && !f.is_hit(1));
    }

    proptest! {
        #[test]
        fn reward_reduces_to_sign_reward_when_all_hit(
            seed in 0u64..200, id in 0usize..13, depth in 0usize..6
        ) {
            let ctx = context(seed);
            let geom = ActionGeometry::default();
            let mut w = ctx.root_window();
            for _ in 0..depth {
                w = geom.apply(&w, Action::from_id(SCALING_IDS.start + (seed as usize % 5)).unwrap(), ctx.scene.extent());
            }
            let w2 = geom.apply(&w, Action::from_id(id).unwrap(), ctx.scene.extent());
            let all = HitFlags::from_bools(vec![true; ctx.ground_truths.len()]);
            let (r, _) = reward(&w, &w2, &ctx.ground_truths, &all);
            prop_assert_eq!(r, sign_reward(&w, &w2, &ctx.ground_truths));
        }
    }
}
