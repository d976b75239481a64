//! Synthetic scenes: seeded rectangles on a noisy background.
//!
//! A scene record holds only the generating seed and the object boxes; the
//! raster is re-rendered on demand and is a pure function of the record.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{ImageExtent, Window};

/// Mean background intensity.
pub const BACKGROUND_LEVEL: f64 = 0.1;
/// Half-width of the uniform background noise.
pub const NOISE_AMPLITUDE: f64 = 0.1;
/// Minimum intensity difference between an object and the background level.
pub const MIN_CONTRAST: f64 = 0.3;
/// Objects with an area strictly above this many pixels count as large.
pub const LARGE_OBJECT_AREA: f64 = 2000.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate scene id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub max_objects: usize,
    pub min_object_area: f64,
    /// Largest object side as a fraction of the image side.
    pub max_side_fraction: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            max_objects: 5,
            min_object_area: 64.0,
            max_side_fraction: 0.6,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidConfig(m.to_string()));
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive");
        }
        if self.max_objects == 0 {
            return bad("max_objects must be at least 1");
        }
        if !(self.min_object_area.is_finite() && self.min_object_area > 0.0) {
            return bad("min_object_area must be positive");
        }
        if !(self.max_side_fraction > 0.0 && self.max_side_fraction <= 1.0) {
            return bad("max_side_fraction must lie in (0, 1]");
        }
        let max_w = (self.max_side_fraction * self.width as f64).floor();
        let max_h = (self.max_side_fraction * self.height as f64).floor();
        if max_w < 1.0 || max_h < 1.0 || max_w * max_h < self.min_object_area {
            return bad("min_object_area cannot fit inside the image");
        }
        Ok(())
    }

    pub fn extent(&self) -> ImageExtent {
        ImageExtent {
            width: self.width,
            height: self.height,
        }
    }
}

/// A ground-truth box and the flat intensity it is drawn with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub window: Window,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn extent(&self) -> ImageExtent {
        ImageExtent {
            width: self.width,
            height: self.height,
        }
    }

    pub fn ground_truths(&self) -> Vec<Window> {
        self.objects.iter().map(|o| o.window).collect()
    }

    pub fn render(&self) -> Raster {
        render(self)
    }
}

/// Single-channel image with samples in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl Raster {
    /// Builds a raster from row-major samples, clamping each to [0, 1].
    pub fn from_samples(width: u32, height: u32, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width as usize * height as usize, "sample count mismatch");
        for v in &mut data {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        }
        Self { width, height, data }
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self::from_samples(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn extent(&self) -> ImageExtent {
        ImageExtent {
            width: self.width,
            height: self.height,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: f64) {
        self.data[y as usize * self.width as usize + x as usize] = value.clamp(0.0, 1.0);
    }

    pub fn row(&self, y: u32) -> &[f64] {
        let w = self.width as usize;
        &self.data[y as usize * w..(y as usize + 1) * w]
    }

    pub fn samples(&self) -> &[f64] {
        &self.data
    }

    /// Plain (ASCII) PGM with 8-bit levels.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for y in 0..self.height {
            let line: Vec<String> = self
                .row(y)
                .iter()
                .map(|v| ((v * 255.0).round() as u8).to_string())
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Pixel index range `[lo, hi)` whose centers fall inside `[a, b)`.
pub(crate) fn pixel_span(a: f64, b: f64, limit: u32) -> (u32, u32) {
    let lo = (a - 0.5).ceil().max(0.0);
    let hi = (b - 0.5).ceil().max(0.0);
    let limit = limit as f64;
    (lo.min(limit) as u32, hi.min(limit) as u32)
}

/// Background noise first, then objects in order (later ones overdraw).
pub fn render(scene: &Scene) -> Raster {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    let n = scene.width as usize * scene.height as usize;
    let data: Vec<f64> = (0..n)
        .map(|_| BACKGROUND_LEVEL + rng.gen_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE))
        .collect();
    let mut raster = Raster::from_samples(scene.width, scene.height, data);
    for obj in &scene.objects {
        let w = &obj.window;
        let (xa, xb) = pixel_span(w.x0(), w.x1(), scene.width);
        let (ya, yb) = pixel_span(w.y0(), w.y1(), scene.height);
        for y in ya..yb {
            for x in xa..xb {
                raster.set(x, y, obj.intensity);
            }
        }
    }
    raster
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SizeClass {
    Large,
    Small,
}

pub fn size_class(g: &Window) -> SizeClass {
    if g.area() > LARGE_OBJECT_AREA {
        SizeClass::Large
    } else {
        SizeClass::Small
    }
}

/// Generates `count` scenes; identical arguments yield identical datasets.
pub fn generate_dataset(count: usize, seed: u64, config: &SceneConfig) -> Result<Vec<Scene>, SceneError> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let scene_seed: u64 = master.gen();
            Ok(generate_scene(format!("scene-{i:05}"), scene_seed, config))
        })
        .collect()
}

fn generate_scene(id: String, seed: u64, config: &SceneConfig) -> Scene {
    // Layout uses its own stream so the render noise stream stays independent.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let (w, h) = (config.width as f64, config.height as f64);
    let max_w = (config.max_side_fraction * w).floor().max(1.0);
    let max_h = (config.max_side_fraction * h).floor().max(1.0);
    let min_side = config.min_object_area.sqrt().ceil().min(max_w).min(max_h).max(1.0);
    let target = rng.gen_range(1..=config.max_objects);

    let mut objects: Vec<SceneObject> = Vec::with_capacity(target);
    let mut attempts = 0;
    while objects.len() < target && attempts < 200 {
        attempts += 1;
        let bw = rng.gen_range(min_side as u32..=max_w as u32) as f64;
        let bh = rng.gen_range(min_side as u32..=max_h as u32) as f64;
        if bw * bh < config.min_object_area {
            continue;
        }
        let x0 = rng.gen_range(0..=(w - bw) as u32) as f64;
        let y0 = rng.gen_range(0..=(h - bh) as u32) as f64;
        let window = Window::new(x0, y0, x0 + bw, y0 + bh).expect("positive box");
        // Heavily overlapping boxes would hide each other once drawn.
        if objects.iter().any(|o| o.window.iou(&window) > 0.3) {
            continue;
        }
        let intensity = rng.gen_range(BACKGROUND_LEVEL + MIN_CONTRAST..=1.0);
        objects.push(SceneObject { window, intensity });
    }
    if objects.is_empty() {
        // Unreachable for validated configs: the first candidate always fits.
        let window = Window::new(0.0, 0.0, max_w, max_h).expect("positive box");
        objects.push(SceneObject { window, intensity: 1.0 });
    }
    Scene {
        id,
        width: config.width,
        height: config.height,
        seed,
        objects,
    }
}

/// Serializes scenes to the tab-separated manifest format.
pub fn write_manifest(scenes: &[Scene]) -> String {
    let mut out = String::new();
    for s in scenes {
        write!(out, "{}\t{}\t{}\t{}", s.id, s.width, s.height, s.seed).unwrap();
        for o in &s.objects {
            let w = &o.window;
            write!(out, "\t{} {} {} {} {}", w.x0(), w.y0(), w.x1(), w.y1(), o.intensity).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses a manifest. Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_manifest(text: &str) -> Result<Vec<Scene>, SceneError> {
    let mut scenes = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let scene = parse_scene_line(line).map_err(|message| SceneError::Parse { line: line_no, message })?;
        if !seen.insert(scene.id.clone()) {
            return Err(SceneError::DuplicateId { line: line_no, id: scene.id });
        }
        scenes.push(scene);
    }
    Ok(scenes)
}

fn parse_scene_line(line: &str) -> Result<Scene, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 5 {
        return Err(format!("expected at least 5 tab-separated fields, found {}", fields.len()));
    }
    let id = fields[0];
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(format!("invalid scene id {id:?}"));
    }
    let dim = |name: &str, s: &str| -> Result<u32, String> {
        match s.parse::<u32>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(format!("{name} must be a positive integer, got {s:?}")),
        }
    };
    let width = dim("width", fields[1])?;
    let height = dim("height", fields[2])?;
    let seed = fields[3]
        .parse::<u64>()
        .map_err(|_| format!("seed must be an unsigned integer, got {:?}", fields[3]))?;
    let extent = ImageExtent { width, height };

    let mut objects = Vec::with_capacity(fields.len() - 4);
    for (k, group) in fields[4..].iter().enumerate() {
        let nums: Vec<f64> = group
            .split(' ')
            .map(|t| t.parse::<f64>().map_err(|_| format!("object {}: bad number {t:?}", k + 1)))
            .collect::<Result<_, _>>()?;
        if nums.len() != 5 {
            return Err(format!("object {}: expected 5 values, found {}", k + 1, nums.len()));
        }
        let window =
            Window::new(nums[0], nums[1], nums[2], nums[3]).map_err(|e| format!("object {}: {e}", k + 1))?;
        if !window.is_within(extent) {
            return Err(format!("object {}: box {window} outside {width}x{height} image", k + 1));
        }
        let intensity = nums[4];
        if !(0.0..=1.0).contains(&intensity) {
            return Err(format!("object {}: intensity {intensity} outside [0, 1]", k + 1));
        }
        objects.push(SceneObject { window, intensity });
    }
    Ok(Scene {
        id: id.to_string(),
        width,
        height,
        seed,
        objects,
    })
}

pub fn save_manifest(scenes: &[Scene], path: &std::path::Path) -> Result<(), SceneError> {
    crate::io::write_atomic(path, write_manifest(scenes).as_bytes())?;
    Ok(())
}

pub fn load_manifest(path: &std::path::Path) -> Result<Vec<Scene>, SceneError> {
    parse_manifest(&std::fs::read_to_string(path)?)
}
