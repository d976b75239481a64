//! Command-line surface: gen-scenes, train, propose, evaluate, render.
//!
//! Every subcommand writes its outputs through a temporary file that is
//! renamed into place, so a failure never leaves a partial file behind.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::evaluator::evaluate;
use crate::featurizer::{Featurizer, GridFeaturizer};
use crate::geometry::{ActionGeometry, Window};
use crate::io::write_atomic;
use crate::mdp::{SceneContext, State};
use crate::qnet::{QNetError, QNetwork, UpdateConfig};
use crate::scene::{generate_dataset, load_manifest, save_manifest, Scene, SceneConfig, SceneError};
use crate::svg::scene_svg;
use crate::trainer::{train_with, Optimizer, TrainConfig, TrainError, LOG_HEADER};
use crate::tree_search::{parse_proposals, propose, write_proposals, ProposalParseError, SearchError, MAX_LEVELS};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Scene { path: PathBuf, source: SceneError },
    #[error("{path}: {source}")]
    Checkpoint { path: PathBuf, source: QNetError },
    #[error("{path}: {source}")]
    Proposals { path: PathBuf, source: ProposalParseError },
    #[error(transparent)]
    InvalidScenes(SceneError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("checkpoint input dimension {checkpoint} does not match featurizer state dimension {featurizer} (grid {grid})")]
    DimensionMismatch { checkpoint: usize, featurizer: usize, grid: usize },
    #[error("checkpoint emits {0} action values, expected 13")]
    OutputMismatch(usize),
    #[error("proposal file names scenes missing from the manifest: {0}")]
    UnknownScenes(String),
    #[error("proposal file has no proposals for manifest scenes: {0}")]
    MissingScenes(String),
    #[error("scene {0:?} not found in manifest")]
    UnknownScene(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Parser)]
#[command(name = "treerl", version, about = "Tree-structured Q-learning for multi-object window proposals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene manifest.
    GenScenes(GenScenesArgs),
    /// Train a Q-network on a manifest.
    Train(TrainArgs),
    /// Emit tree-search proposals for every scene of a manifest.
    Propose(ProposeArgs),
    /// Recall report (TSV plus SVG plots) for a proposal file.
    Evaluate(EvaluateArgs),
    /// Render one scene with its ground truths and proposals as SVG.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct SceneFlags {
    #[arg(long, default_value_t = 128)]
    pub width: u32,
    #[arg(long, default_value_t = 128)]
    pub height: u32,
    #[arg(long, default_value_t = 5)]
    pub max_objects: usize,
    #[arg(long, default_value_t = 64.0)]
    pub min_object_area: f64,
    #[arg(long, default_value_t = 0.6)]
    pub max_side_fraction: f64,
}

impl SceneFlags {
    fn config(&self) -> SceneConfig {
        SceneConfig {
            width: self.width,
            height: self.height,
            max_objects: self.max_objects,
            min_object_area: self.min_object_area,
            max_side_fraction: self.max_side_fraction,
        }
    }
}

/// Knobs shared by training and inference. Inference must use the values the
/// checkpoint was trained with; they are not stored in the checkpoint.
#[derive(Debug, Args)]
pub struct ModelFlags {
    /// Feature grid side; the window feature has 2·grid² entries.
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    #[arg(long, default_value_t = 0.55)]
    pub scale_factor: f64,
    #[arg(long, default_value_t = 0.25)]
    pub translation_factor: f64,
    #[arg(long, default_value_t = 8.0)]
    pub min_size: f64,
}

impl ModelFlags {
    fn featurizer(&self) -> Result<GridFeaturizer, CliError> {
        if self.grid == 0 {
            return Err(CliError::InvalidArgument("--grid must be positive".into()));
        }
        Ok(GridFeaturizer::new(self.grid))
    }

    fn geometry(&self) -> Result<ActionGeometry, CliError> {
        let g = ActionGeometry {
            scale_factor: self.scale_factor,
            translation_factor: self.translation_factor,
            min_size: self.min_size,
        };
        let ok = g.scale_factor > 0.0 && g.scale_factor < 1.0 && g.translation_factor > 0.0 && g.min_size > 0.0;
        if !(ok && g.translation_factor.is_finite() && g.min_size.is_finite()) {
            return Err(CliError::InvalidArgument(format!(
                "need 0 < scale factor < 1 and positive finite translation factor and min size, got {g:?}"
            )));
        }
        Ok(g)
    }
}

#[derive(Debug, Args)]
pub struct GenScenesArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub scene: SceneFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Final checkpoint path; epoch checkpoints go to `<out>.epoch-NNN`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Training log path, `<out>.log` by default.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon_start: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon_end: f64,
    #[arg(long, default_value_t = 10)]
    pub anneal_epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100_000)]
    pub replay_capacity: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [256, 128])]
    pub hidden: Vec<usize>,
    /// Updates after each episode; defaults to ceil(max_steps / batch_size).
    #[arg(long)]
    pub updates_per_episode: Option<usize>,
    /// Refresh a frozen bootstrap network every N updates.
    #[arg(long)]
    pub target_sync: Option<usize>,
    #[arg(long, default_value_t = UpdateConfig::default().learning_rate)]
    pub learning_rate: f64,
    /// sgd or adam
    #[arg(long, default_value_t = Optimizer::default())]
    pub optimizer: Optimizer,
    #[arg(long, default_value_t = 0.9)]
    pub discount: f64,
    #[arg(long, default_value_t = 5.0)]
    pub td_clip: f64,
    #[command(flatten)]
    pub model: ModelFlags,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            epochs: self.epochs,
            max_steps: self.max_steps,
            epsilon_start: self.epsilon_start,
            epsilon_end: self.epsilon_end,
            anneal_epochs: self.anneal_epochs,
            batch_size: self.batch_size,
            replay_capacity: self.replay_capacity,
            hidden: self.hidden.clone(),
            updates_per_episode: self.updates_per_episode,
            target_sync: self.target_sync,
            update: UpdateConfig {
                learning_rate: self.learning_rate,
                discount: self.discount,
                td_clip: self.td_clip,
            },
            optimizer: self.optimizer,
            geometry: self.model.geometry()?,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Args)]
pub struct ProposeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Tree depth; each scene gets 2^levels − 1 proposals.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u8).range(1..=MAX_LEVELS as i64))]
    pub levels: u8,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub proposals: PathBuf,
    /// Report path; plots go to `<out>.recall-iou.svg`, `<out>.recall-budget.svg`
    /// and `<out>.average-recall.svg`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.6, 0.7, 0.8, 0.9])]
    pub thresholds: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 3, 7, 15, 31, 63])]
    pub budgets: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub proposals: Option<PathBuf>,
    #[arg(long)]
    pub scene_id: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn load_scenes(path: &Path) -> Result<Vec<Scene>, CliError> {
    load_manifest(path).map_err(|source| CliError::Scene { path: path.to_path_buf(), source })
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenScenes(a) => gen_scenes(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Propose(a) => propose_cmd(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Render(a) => render_cmd(&a),
    }
}

fn gen_scenes(a: &GenScenesArgs) -> Result<(), CliError> {
    let scenes = generate_dataset(a.count, a.seed, &a.scene.config()).map_err(CliError::InvalidScenes)?;
    save_manifest(&scenes, &a.out).map_err(|source| CliError::Scene { path: a.out.clone(), source })
}

fn config_header(a: &TrainArgs, cfg: &TrainConfig) -> String {
    let mut h = String::new();
    writeln!(h, "# manifest={}", a.manifest.display()).unwrap();
    writeln!(h, "# out={}", a.out.display()).unwrap();
    writeln!(h, "# seed={}", cfg.seed).unwrap();
    writeln!(h, "# epochs={} max_steps={} anneal_epochs={}", cfg.epochs, cfg.max_steps, cfg.anneal_epochs).unwrap();
    writeln!(h, "# epsilon_start={} epsilon_end={}", cfg.epsilon_start, cfg.epsilon_end).unwrap();
    writeln!(h, "# batch_size={} replay_capacity={} updates_per_episode={}", cfg.batch_size, cfg.replay_capacity, cfg.updates_after_episode()).unwrap();
    let sync = cfg.target_sync.map_or("off".to_string(), |n| n.to_string());
    writeln!(h, "# hidden={:?} target_sync={sync}", cfg.hidden).unwrap();
    writeln!(h, "# optimizer={} learning_rate={} discount={} td_clip={}", cfg.optimizer, cfg.update.learning_rate, cfg.update.discount, cfg.update.td_clip).unwrap();
    writeln!(h, "# grid={} scale_factor={} translation_factor={} min_size={}", a.model.grid, cfg.geometry.scale_factor, cfg.geometry.translation_factor, cfg.geometry.min_size).unwrap();
    h
}

fn train_cmd(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = a.config()?;
    cfg.validate()?;
    let featurizer = a.model.featurizer()?;
    let scenes = load_scenes(&a.manifest)?;
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".log"));

    let mut log = config_header(a, &cfg);
    log.push_str(LOG_HEADER);
    log.push('\n');
    let outcome = train_with(&scenes, &featurizer, &cfg, |entry, net| {
        let path = with_suffix(&a.out, &format!(".epoch-{:03}", entry.epoch));
        net.save(&path)
            .map_err(|e| TrainError::Callback(format!("{}: {e}", path.display())))
    })?;
    for entry in &outcome.log {
        log.push_str(&entry.to_tsv());
        log.push('\n');
    }
    outcome
        .net
        .save(&a.out)
        .map_err(|source| CliError::Checkpoint { path: a.out.clone(), source })?;
    write(&log_path, log.as_bytes())
}

fn propose_cmd(a: &ProposeArgs) -> Result<(), CliError> {
    let featurizer = a.model.featurizer()?;
    let geometry = a.model.geometry()?;
    let net = QNetwork::load(&a.checkpoint).map_err(|source| CliError::Checkpoint { path: a.checkpoint.clone(), source })?;
    let expected = State::input_dim(featurizer.dim());
    if net.input_dim() != expected {
        return Err(CliError::DimensionMismatch {
            checkpoint: net.input_dim(),
            featurizer: expected,
            grid: featurizer.grid(),
        });
    }
    if net.output_dim() != crate::geometry::NUM_ACTIONS {
        return Err(CliError::OutputMismatch(net.output_dim()));
    }
    let scenes = load_scenes(&a.manifest)?;
    let mut sets = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let id = scene.id.clone();
        let ctx = SceneContext::new(scene, &featurizer);
        sets.push((id, propose(&ctx, &featurizer, &net, &geometry, a.levels as usize)?));
    }
    let text = write_proposals(sets.iter().map(|(id, s)| (id.as_str(), s)));
    write(&a.out, text.as_bytes())
}

/// Lines up proposal windows with manifest scenes. An empty proposal file means
/// no proposals anywhere; otherwise every manifest scene must be covered and
/// every proposal scene must exist in the manifest.
fn align_proposals(scenes: &[Scene], text: &str, path: &Path) -> Result<Vec<Vec<(usize, Window)>>, CliError> {
    let parsed = parse_proposals(text).map_err(|source| CliError::Proposals { path: path.to_path_buf(), source })?;
    let known: HashSet<&str> = scenes.iter().map(|s| s.id.as_str()).collect();
    let unknown: Vec<&str> = parsed.iter().map(|p| p.scene_id.as_str()).filter(|id| !known.contains(id)).collect();
    if !unknown.is_empty() {
        return Err(CliError::UnknownScenes(unknown.join(", ")));
    }
    let mut by_id: HashMap<String, Vec<(usize, Window)>> =
        parsed.into_iter().map(|p| (p.scene_id, p.proposals)).collect();
    if by_id.is_empty() {
        return Ok(vec![Vec::new(); scenes.len()]);
    }
    let missing: Vec<&str> = scenes.iter().map(|s| s.id.as_str()).filter(|id| !by_id.contains_key(*id)).collect();
    if !missing.is_empty() {
        return Err(CliError::MissingScenes(missing.join(", ")));
    }
    Ok(scenes.iter().map(|s| by_id.remove(&s.id).unwrap_or_default()).collect())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), CliError> {
    if a.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(CliError::InvalidArgument(format!("thresholds must lie in [0, 1], got {:?}", a.thresholds)));
    }
    if a.budgets.contains(&0) {
        return Err(CliError::InvalidArgument("budgets must be positive".into()));
    }
    let scenes = load_scenes(&a.manifest)?;
    let aligned = align_proposals(&scenes, &read_text(&a.proposals)?, &a.proposals)?;
    let proposals: Vec<Vec<Window>> = aligned.iter().map(|p| p.iter().map(|&(_, w)| w).collect()).collect();
    let gts: Vec<Vec<Window>> = scenes.iter().map(Scene::ground_truths).collect();
    let report = evaluate(&proposals, &gts, &a.budgets, &a.thresholds);

    // Plots first: the report appearing last marks a completed run.
    write(&with_suffix(&a.out, ".recall-iou.svg"), report.recall_vs_iou_svg().as_bytes())?;
    write(&with_suffix(&a.out, ".recall-budget.svg"), report.recall_vs_budget_svg().as_bytes())?;
    write(&with_suffix(&a.out, ".average-recall.svg"), report.average_recall_svg().as_bytes())?;
    write(&a.out, report.to_tsv().as_bytes())
}

fn render_cmd(a: &RenderArgs) -> Result<(), CliError> {
    let scenes = load_scenes(&a.manifest)?;
    let scene = scenes
        .iter()
        .find(|s| s.id == a.scene_id)
        .ok_or_else(|| CliError::UnknownScene(a.scene_id.clone()))?;
    let proposals = match &a.proposals {
        Some(path) => {
            let parsed = parse_proposals(&read_text(path)?)
                .map_err(|source| CliError::Proposals { path: path.clone(), source })?;
            parsed
                .into_iter()
                .find(|p| p.scene_id == a.scene_id)
                .map(|p| p.proposals)
                .unwrap_or_default()
        }
        None => Vec::new(),
    };
    let svg = scene_svg(&scene.render(), &scene.ground_truths(), &proposals);
    write(&a.out, svg.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_subcommands() {
        let cli = Cli::try_parse_from(["treerl", "gen-scenes", "--count", "3", "--seed", "1", "--out", "m.tsv"]).unwrap();
        assert!(matches!(cli.command, Command::GenScenes(GenScenesArgs { count: 3, seed: 1, .. })));
        let cli = Cli::try_parse_from(["treerl", "train", "--manifest", "m", "--out", "c", "--seed", "2", "--hidden", "32,16"]).unwrap();
        match cli.command {
            Command::Train(t) => {
                assert_eq!(t.hidden, vec![32, 16]);
                let cfg = t.config().unwrap();
                assert_eq!(TrainConfig { hidden: vec![256, 128], seed: 0, ..cfg }, TrainConfig::default());
            }
            _ => panic!("expected train"),
        }
        let cli = Cli::try_parse_from(["treerl", "evaluate", "--manifest", "m", "--proposals", "p", "--out", "r", "--budgets", "31,63", "--thresholds", "0.5,0.6,0.7"]).unwrap();
        match cli.command {
            Command::Evaluate(e) => {
                assert_eq!(e.budgets, vec![31, 63]);
                assert_eq!(e.thresholds, vec![0.5, 0.6, 0.7]);
            }
            _ => panic!("expected evaluate"),
        }
    }

    #[test]
    fn usage_errors() {
        assert!(Cli::try_parse_from(["treerl", "gen-scenes", "--count", "-1", "--seed", "1", "--out", "m"]).is_err());
        assert!(Cli::try_parse_from(["treerl", "gen-scenes", "--count", "1", "--out", "m"]).is_err());
        assert!(Cli::try_parse_from(["treerl", "train", "--manifest", "m", "--out", "c"]).is_err());
        assert!(Cli::try_parse_from(["treerl", "propose", "--manifest", "m", "--checkpoint", "c", "--out", "p", "--levels", "11"]).is_err());
        assert!(Cli::try_parse_from(["treerl", "propose", "--manifest", "m", "--checkpoint", "c", "--out", "p", "--levels", "0"]).is_err());
        assert!(Cli::try_parse_from(["treerl", "render", "--bogus"]).is_err());
    }

    #[test]
    fn suffixes_append() {
        assert_eq!(with_suffix(Path::new("a/b.ckpt"), ".log"), PathBuf::from("a/b.ckpt.log"));
    }
}
