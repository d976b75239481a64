//! Episode generation and the Q-learning training loop.
//!
//! Behaviour is ε-greedy with a group-aware exploitation step: with
//! probability ε a uniformly random action is taken, otherwise one of the two
//! group winners (best scaling, best translation) is chosen at random.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::featurizer::Featurizer;
use crate::geometry::{Action, ActionGeometry, NUM_ACTIONS};
use crate::mdp::{Episode, MdpError, SceneContext, State, Transition, HISTORY_LEN};
use crate::policy::{best_scaling, best_translation};
use crate::qnet::{Adam, QNetError, QNetwork, UpdateConfig};
use crate::replay::{ReplayError, ReplayMemory};
use crate::scene::Scene;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, episode {episode}")]
    NonFiniteLoss { epoch: usize, episode: usize },
    #[error(transparent)]
    QNet(#[from] QNetError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("{0}")]
    Callback(String),
}

/// Parameter update rule applied to the TD gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    #[default]
    Sgd,
    Adam,
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

impl std::str::FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!("unknown optimizer {other:?} (expected sgd or adam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub max_steps: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub anneal_epochs: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    /// Q-updates after each episode; `None` means ⌈max_steps / batch_size⌉.
    pub updates_per_episode: Option<usize>,
    /// Refresh a frozen bootstrap network every this many updates.
    pub target_sync: Option<usize>,
    pub update: UpdateConfig,
    pub optimizer: Optimizer,
    pub geometry: ActionGeometry,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            max_steps: 50,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            anneal_epochs: 10,
            batch_size: 64,
            replay_capacity: 100_000,
            hidden: vec![256, 128],
            updates_per_episode: None,
            target_sync: None,
            update: UpdateConfig::default(),
            optimizer: Optimizer::default(),
            geometry: ActionGeometry::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.epsilon_end > 0.0 && self.epsilon_start >= self.epsilon_end && self.epsilon_start <= 1.0) {
            return bad(format!(
                "need 1 >= epsilon_start ({}) >= epsilon_end ({}) > 0",
                self.epsilon_start, self.epsilon_end
            ));
        }
        if self.anneal_epochs > self.epochs {
            return bad(format!("anneal_epochs ({}) exceeds epochs ({})", self.anneal_epochs, self.epochs));
        }
        if self.max_steps == 0 || self.max_steps > HISTORY_LEN {
            return bad(format!("max_steps must lie in 1..={HISTORY_LEN}"));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 {
            return bad("batch_size and replay_capacity must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive".into());
        }
        if self.target_sync == Some(0) || self.updates_per_episode == Some(0) {
            return bad("target_sync and updates_per_episode must be positive when set".into());
        }
        self.update.validate()?;
        Ok(())
    }

    pub fn network_dims(&self, feature_dim: usize) -> Vec<usize> {
        let mut dims = vec![State::input_dim(feature_dim)];
        dims.extend(&self.hidden);
        dims.push(NUM_ACTIONS);
        dims
    }

    pub fn updates_after_episode(&self) -> usize {
        self.updates_per_episode
            .unwrap_or_else(|| self.max_steps.div_ceil(self.batch_size))
    }
}

/// Linear from `epsilon_start` at step 0 to `epsilon_end` at `anneal_steps`,
/// constant afterwards.
pub fn epsilon_at(global_step: usize, anneal_steps: usize, cfg: &TrainConfig) -> f64 {
    if global_step >= anneal_steps {
        return cfg.epsilon_end;
    }
    let frac = global_step as f64 / anneal_steps as f64;
    cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac
}

/// ε-greedy over the whole set, exploiting by a coin flip between the two
/// group winners.
pub fn select_training_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> Action {
    if rng.gen::<f64>() < epsilon {
        Action::ALL[rng.gen_range(0..NUM_ACTIONS)]
    } else if rng.gen::<bool>() {
        best_scaling(q)
    } else {
        best_translation(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    pub steps: usize,
    pub total_reward: f64,
    /// Ground truths whose hit flag is set at the end of the episode.
    pub hits: usize,
}

/// Runs one full-length episode, pushing every transition into `memory`.
/// `epsilon` maps the in-episode step index to the exploration rate.
pub fn run_episode<R: Rng + ?Sized>(
    ctx: &SceneContext,
    featurizer: &dyn Featurizer,
    net: &QNetwork,
    cfg: &TrainConfig,
    epsilon: impl Fn(usize) -> f64,
    memory: &mut ReplayMemory<Transition>,
    rng: &mut R,
) -> Result<EpisodeStats, TrainError> {
    let mut episode = Episode::new(ctx, featurizer, cfg.geometry, cfg.max_steps)?;
    let mut stats = EpisodeStats {
        steps: 0,
        total_reward: 0.0,
        hits: 0,
    };
    while !episode.is_terminal() {
        let q = net.forward(&episode.state().network_input())?;
        let action = select_training_action(&q, epsilon(stats.steps), rng);
        let t = episode.step(action)?;
        stats.steps += 1;
        stats.total_reward += t.reward.value();
        memory.push(t);
    }
    stats.hits = episode.flags().hits();
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Exploration rate at the end of the epoch.
    pub epsilon: f64,
    pub mean_reward: f64,
    /// NaN when no update ran during the epoch.
    pub mean_loss: f64,
    pub episodes: usize,
}

impl EpochLog {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.epoch, self.epsilon, self.mean_reward, self.mean_loss, self.episodes
        )
    }
}

pub const LOG_HEADER: &str = "epoch\tepsilon\tmean_reward\tmean_loss\tepisodes";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: QNetwork,
    pub log: Vec<EpochLog>,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn train(dataset: &[Scene], featurizer: &dyn Featurizer, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(dataset, featurizer, cfg, |_, _| Ok(()))
}

/// Sequential, fully deterministic training. `on_epoch` runs after every epoch
/// with that epoch's log line and the current network.
pub fn train_with(
    dataset: &[Scene],
    featurizer: &dyn Featurizer,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &QNetwork) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let contexts: Vec<SceneContext> = dataset
        .iter()
        .map(|s| SceneContext::new(s.clone(), featurizer))
        .collect();

    let mut net = QNetwork::new(&cfg.network_dims(featurizer.dim()), &mut rng_stream(cfg.seed, 0))?;
    let mut memory = ReplayMemory::new(cfg.replay_capacity, cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15))?;
    let mut action_rng = rng_stream(cfg.seed, 1);
    let mut shuffle_rng = rng_stream(cfg.seed, 2);
    let mut target = cfg.target_sync.map(|_| net.clone());
    let mut adam = (cfg.optimizer == Optimizer::Adam).then(|| Adam::new(&net));

    let steps_per_epoch = contexts.len() * cfg.max_steps;
    let anneal_steps = steps_per_epoch * cfg.anneal_epochs;
    let updates = cfg.updates_after_episode();
    let mut update_count = 0usize;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..contexts.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut reward_sum, mut loss_sum, mut loss_count) = (0.0, 0.0, 0usize);
        for (e, &idx) in order.iter().enumerate() {
            let base = (epoch * contexts.len() + e) * cfg.max_steps;
            let eps = |t: usize| epsilon_at(base + t, anneal_steps, cfg);
            let stats = run_episode(&contexts[idx], featurizer, &net, cfg, eps, &mut memory, &mut action_rng)?;
            reward_sum += stats.total_reward;

            if memory.len() >= cfg.batch_size {
                for _ in 0..updates {
                    let batch = memory.sample(cfg.batch_size)?;
                    let (grads, loss) = net.td_gradients(&batch, &cfg.update, target.as_ref())?;
                    match adam.as_mut() {
                        Some(a) => a.step(&mut net, &grads, cfg.update.learning_rate),
                        None => net.apply_gradients(&grads, cfg.update.learning_rate),
                    }
                    if !loss.is_finite() {
                        return Err(TrainError::NonFiniteLoss { epoch: epoch + 1, episode: e });
                    }
                    loss_sum += loss;
                    loss_count += 1;
                    update_count += 1;
                    if let (Some(every), Some(t)) = (cfg.target_sync, target.as_mut()) {
                        if update_count.is_multiple_of(every) {
                            *t = net.clone();
                        }
                    }
                }
            }
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            epsilon: epsilon_at((epoch + 1) * steps_per_epoch, anneal_steps, cfg),
            mean_reward: reward_sum / contexts.len() as f64,
            mean_loss: if loss_count == 0 { f64::NAN } else { loss_sum / loss_count as f64 },
            episodes: contexts.len(),
        };
        log::info!("{}", entry.to_tsv());
        on_epoch(&entry, &net)?;
        log.push(entry);
    }
    Ok(TrainOutcome { net, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::GridFeaturizer;
    use crate::scene::{generate_dataset, SceneConfig};

    #[test]
    fn epsilon_schedule_endpoints() {
        let cfg = TrainConfig::default();
        let anneal = 10 * 500 * 50;
        assert_eq!(epsilon_at(0, anneal, &cfg), 1.0);
        assert_eq!(epsilon_at(anneal, anneal, &cfg), 0.1);
        assert_eq!(epsilon_at(anneal + 12345, anneal, &cfg), 0.1);
        let mid = epsilon_at(anneal / 2, anneal, &cfg);
        assert!((mid - 0.55).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for s in (0..=anneal + 100).step_by(997) {
            let e = epsilon_at(s, anneal, &cfg);
            assert!(e <= prev);
            prev = e;
        }
        assert_eq!(epsilon_at(0, 0, &cfg), 0.1);
    }

    #[test]
    fn greedy_selection_uses_group_winners() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut q = [0.0; 13];
        q[0] = 9.0;
        q[12] = 8.0;
        let mut counts = [0usize; 13];
        for _ in 0..10_000 {
            counts[select_training_action(&q, 0.0, &mut rng).id()] += 1;
        }
        assert_eq!(counts[0] + counts[12], 10_000);
        assert!((counts[0] as f64 - 5_000.0).abs() < 300.0);

        let flat = [1.0; 13];
        for _ in 0..1_000 {
            let a = select_training_action(&flat, 0.0, &mut rng).id();
            assert!(a == 0 || a == 5);
        }
    }

    #[test]
    fn exploration_covers_all_actions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 13];
        let q = [0.0; 13];
        for _ in 0..100_000 {
            counts[select_training_action(&q, 1.0, &mut rng).id()] += 1;
        }
        let expected = 100_000.0 / 13.0;
        for c in counts {
            assert!((c as f64 - expected).abs() / expected < 0.05, "{counts:?}");
        }
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            anneal_epochs: 1,
            max_steps: 10,
            batch_size: 8,
            replay_capacity: 500,
            hidden: vec![16, 8],
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn episode_pushes_every_step() {
        let f = GridFeaturizer::new(4);
        let scene = generate_dataset(1, 5, &SceneConfig::default()).unwrap().remove(0);
        let ctx = SceneContext::new(scene, &f);
        let cfg = TrainConfig { hidden: vec![8], ..Default::default() };
        let net = QNetwork::new(&cfg.network_dims(f.dim()), &mut rng_stream(1, 0)).unwrap();
        let run = |seed| {
            let mut mem = ReplayMemory::new(1000, 0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stats = run_episode(&ctx, &f, &net, &cfg, |_| 0.5, &mut mem, &mut rng).unwrap();
            (stats, mem.iter().map(|t| (t.action, t.reward, t.terminal)).collect::<Vec<_>>())
        };
        let (stats, trace) = run(7);
        assert_eq!(stats.steps, 50);
        assert_eq!(trace.len(), 50);
        assert!(trace[..49].iter().all(|t| !t.2) && trace[49].2);
        assert!(stats.hits <= ctx.ground_truths.len());
        let sum: f64 = trace.iter().map(|t| t.1.value()).sum();
        assert_eq!(sum, stats.total_reward);
        assert_eq!(run(7), (stats, trace));
    }

    #[test]
    fn zero_epochs_returns_initial_network() {
        let f = GridFeaturizer::new(4);
        let data = generate_dataset(3, 1, &SceneConfig::default()).unwrap();
        let cfg = TrainConfig { epochs: 0, anneal_epochs: 0, hidden: vec![8], ..Default::default() };
        let out = train(&data, &f, &cfg).unwrap();
        assert!(out.log.is_empty());
        let fresh = QNetwork::new(&cfg.network_dims(f.dim()), &mut rng_stream(cfg.seed, 0)).unwrap();
        assert_eq!(out.net, fresh);
    }

    #[test]
    fn training_is_deterministic() {
        let f = GridFeaturizer::new(4);
        let data = generate_dataset(6, 2, &SceneConfig::default()).unwrap();
        let a = train(&data, &f, &tiny_cfg()).unwrap();
        let b = train(&data, &f, &tiny_cfg()).unwrap();
        assert_eq!(a.net.to_bytes(), b.net.to_bytes());
        assert_eq!(a.log.len(), 2);
        assert_eq!(a.log[1].epsilon, 0.1);
        assert!(a.log.iter().all(|l| l.mean_loss.is_finite()));

        let synced = TrainConfig { target_sync: Some(3), ..tiny_cfg() };
        let c = train(&data, &f, &synced).unwrap();
        assert_ne!(c.net, a.net);
    }

    #[test]
    fn rejects_bad_configs() {
        let f = GridFeaturizer::new(4);
        let data = generate_dataset(1, 2, &SceneConfig::default()).unwrap();
        assert!(matches!(train(&[], &f, &tiny_cfg()), Err(TrainError::EmptyDataset)));
        for cfg in [
            TrainConfig { anneal_epochs: 30, ..Default::default() },
            TrainConfig { epsilon_end: 0.0, ..Default::default() },
            TrainConfig { max_steps: 51, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(matches!(train(&data, &f, &cfg), Err(TrainError::InvalidConfig(_))));
        }
    }
}
