//! Axis-aligned windows, intersection-over-union, and the 13 window actions.
//!
//! Actions come in two groups. The five scaling actions replace the window by
//! one of its sub-windows (four corners plus the center); the eight translation
//! actions move or resize it locally. Every action is total: the result is
//! always a valid window inside the image.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid window ({x0}, {y0}, {x1}, {y1}): coordinates must be finite with x0 < x1 and y0 < y1")]
    InvalidWindow { x0: f64, y0: f64, x1: f64, y1: f64 },
    #[error("action id {0} out of range 0..13")]
    InvalidAction(usize),
    #[error("invalid image extent {width}x{height}")]
    InvalidExtent { width: u32, height: u32 },
}

/// Axis-aligned rectangle in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Window {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, GeometryError> {
        let finite = x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite();
        if !finite || x0 >= x1 || y0 >= y1 {
            return Err(GeometryError::InvalidWindow { x0, y0, x1, y1 });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// The window covering the whole image.
    pub fn full(extent: ImageExtent) -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            x1: extent.width as f64,
            y1: extent.height as f64,
        }
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn intersection_area(&self, other: &Window) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection area over union area; 0 for disjoint windows.
    pub fn iou(&self, other: &Window) -> f64 {
        let inter = self.intersection_area(other);
        if inter == 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }

    /// True when `other` lies entirely inside `self` (boundaries may touch).
    pub fn contains(&self, other: &Window) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn is_within(&self, extent: ImageExtent) -> bool {
        Window::full(extent).contains(self)
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x0, self.y0, self.x1, self.y1)
    }
}

/// Free-function form of [`Window::iou`].
pub fn iou(a: &Window, b: &Window) -> f64 {
    a.iou(b)
}

/// Image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageExtent {
    pub width: u32,
    pub height: u32,
}

impl ImageExtent {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidExtent { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionGroup {
    Scaling,
    Translation,
}

/// One of the 13 discrete window transformations. Discriminants are the action ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Action {
    ScaleTopLeft = 0,
    ScaleTopRight = 1,
    ScaleBottomLeft = 2,
    ScaleBottomRight = 3,
    ScaleCenter = 4,
    MoveLeft = 5,
    MoveRight = 6,
    MoveUp = 7,
    MoveDown = 8,
    ShrinkHorizontal = 9,
    GrowHorizontal = 10,
    ShrinkVertical = 11,
    GrowVertical = 12,
}

pub const NUM_ACTIONS: usize = 13;

/// Action ids belonging to the scaling group.
pub const SCALING_IDS: std::ops::Range<usize> = 0..5;
/// Action ids belonging to the translation group.
pub const TRANSLATION_IDS: std::ops::Range<usize> = 5..13;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::ScaleTopLeft,
        Action::ScaleTopRight,
        Action::ScaleBottomLeft,
        Action::ScaleBottomRight,
        Action::ScaleCenter,
        Action::MoveLeft,
        Action::MoveRight,
        Action::MoveUp,
        Action::MoveDown,
        Action::ShrinkHorizontal,
        Action::GrowHorizontal,
        Action::ShrinkVertical,
        Action::GrowVertical,
    ];

    pub fn from_id(id: usize) -> Result<Self, GeometryError> {
        Action::ALL
            .get(id)
            .copied()
            .ok_or(GeometryError::InvalidAction(id))
    }

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn group(self) -> ActionGroup {
        if SCALING_IDS.contains(&self.id()) {
            ActionGroup::Scaling
        } else {
            ActionGroup::Translation
        }
    }
}

/// Geometric constants of the action set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionGeometry {
    /// Linear size of a scaling sub-window relative to its parent.
    pub scale_factor: f64,
    /// Translation step relative to the current window dimension.
    pub translation_factor: f64,
    /// Smallest width/height an action may produce, in pixels.
    pub min_size: f64,
}

impl Default for ActionGeometry {
    fn default() -> Self {
        Self {
            scale_factor: 0.55,
            translation_factor: 0.25,
            min_size: 8.0,
        }
    }
}

impl ActionGeometry {
    /// Applies `action` to `w` inside an image of size `extent`.
    ///
    /// Scaling children are kept inside the parent; translated windows are
    /// clipped to the image. A dimension that would fall below `min_size` is
    /// widened to `min_size` around its center and then shifted back inside the
    /// container (parent for scaling, image for translation).
    pub fn apply(&self, w: &Window, action: Action, extent: ImageExtent) -> Window {
        let (cx, cy) = w.center();
        let (width, height) = (w.width(), w.height());
        let sw = self.scale_factor * width;
        let sh = self.scale_factor * height;
        let dx = self.translation_factor * width;
        let dy = self.translation_factor * height;

        let image = Window::full(extent);
        let (x0, y0, x1, y1, container) = match action {
            Action::ScaleTopLeft => (w.x0, w.y0, w.x0 + sw, w.y0 + sh, *w),
            Action::ScaleTopRight => (w.x1 - sw, w.y0, w.x1, w.y0 + sh, *w),
            Action::ScaleBottomLeft => (w.x0, w.y1 - sh, w.x0 + sw, w.y1, *w),
            Action::ScaleBottomRight => (w.x1 - sw, w.y1 - sh, w.x1, w.y1, *w),
            Action::ScaleCenter => (cx - 0.5 * sw, cy - 0.5 * sh, cx + 0.5 * sw, cy + 0.5 * sh, *w),
            Action::MoveLeft => (w.x0 - dx, w.y0, w.x1 - dx, w.y1, image),
            Action::MoveRight => (w.x0 + dx, w.y0, w.x1 + dx, w.y1, image),
            Action::MoveUp => (w.x0, w.y0 - dy, w.x1, w.y1 - dy, image),
            Action::MoveDown => (w.x0, w.y0 + dy, w.x1, w.y1 + dy, image),
            Action::ShrinkHorizontal => (w.x0 + 0.5 * dx, w.y0, w.x1 - 0.5 * dx, w.y1, image),
            Action::GrowHorizontal => (w.x0 - 0.5 * dx, w.y0, w.x1 + 0.5 * dx, w.y1, image),
            Action::ShrinkVertical => (w.x0, w.y0 + 0.5 * dy, w.x1, w.y1 - 0.5 * dy, image),
            Action::GrowVertical => (w.x0, w.y0 - 0.5 * dy, w.x1, w.y1 + 0.5 * dy, image),
        };

        let (x0, x1) = fit_interval(x0, x1, container.x0, container.x1, self.min_size);
        let (y0, y1) = fit_interval(y0, y1, container.y0, container.y1, self.min_size);
        Window { x0, y0, x1, y1 }
    }
}

/// Clips `[lo, hi]` to `[min, max]`, then enforces the minimum length.
fn fit_interval(lo: f64, hi: f64, min: f64, max: f64, min_len: f64) -> (f64, f64) {
    let mut lo = lo.max(min);
    let mut hi = hi.min(max);
    // A translation step is at most a quarter of the width, so the clipped
    // interval is never empty; the guard covers user-supplied windows.
    if hi < lo {
        let c = 0.5 * (lo + hi);
        lo = c;
        hi = c;
    }
    let target = min_len.min(max - min);
    if hi - lo < target {
        let c = 0.5 * (lo + hi);
        lo = c - 0.5 * target;
        hi = c + 0.5 * target;
        // min + (max - min) can round past max, hence the outer clamps.
        if lo < min {
            lo = min;
            hi = (min + target).min(max);
        } else if hi > max {
            hi = max;
            lo = (max - target).max(min);
        }
    }
    (lo, hi)
}

/// Applies `action` with the default action geometry.
pub fn apply_action(w: &Window, action: Action, extent: ImageExtent) -> Window {
    ActionGeometry::default().apply(w, action, extent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn win(x0: f64, y0: f64, x1: f64, y1: f64) -> Window {
        Window::new(x0, y0, x1, y1).unwrap()
    }

    fn ext(w: u32, h: u32) -> ImageExtent {
        ImageExtent::new(w, h).unwrap()
    }

    #[track_caller]
    fn assert_close(a: Window, b: Window) {
        let d = [a.x0 - b.x0, a.y0 - b.y0, a.x1 - b.x1, a.y1 - b.y1];
        assert!(d.iter().all(|v| v.abs() < 1e-9), "{a} != {b}");
    }

    /// Counts unit cells of a 1/`res` grid covered by both/either window.
    fn pixel_iou(a: &Window, b: &Window, res: f64, extent: f64) -> f64 {
        let n = (extent * res) as usize;
        let (mut inter, mut union) = (0usize, 0usize);
        for j in 0..n {
            let y = (j as f64 + 0.5) / res;
            for i in 0..n {
                let x = (i as f64 + 0.5) / res;
                let in_a = x > a.x0 && x < a.x1 && y > a.y0 && y < a.y1;
                let in_b = x > b.x0 && x < b.x1 && y > b.y0 && y < b.y1;
                inter += (in_a && in_b) as usize;
                union += (in_a || in_b) as usize;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = win(0.0, 0.0, 10.0, 10.0);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(win(0.0, 0.0, 1.0, 1.0).iou(&win(5.0, 5.0, 6.0, 6.0)), 0.0);
        let (a, b) = (win(0.0, 0.0, 2.0, 2.0), win(1.0, 0.0, 3.0, 2.0));
        let oracle = pixel_iou(&a, &b, 8.0, 4.0);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-12);
        assert!((a.iou(&b) - oracle).abs() < 1e-12);
    }

    #[test]
    fn area_examples() {
        assert_eq!(win(0.0, 0.0, 10.0, 10.0).area(), 100.0);
        assert_eq!(win(0.0, 0.0, 1.0, 1.0).area(), 1.0);
        assert_eq!(win(2.0, 3.0, 47.0, 48.0).area(), 2025.0);
    }

    #[test]
    fn rejects_degenerate_windows() {
        assert!(Window::new(1.0, 0.0, 1.0, 5.0).is_err());
        assert!(Window::new(0.0, 5.0, 3.0, 2.0).is_err());
        assert!(Window::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(Action::from_id(13).is_err());
    }

    #[test]
    fn action_ids_and_groups() {
        for (id, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.id(), id);
            assert_eq!(Action::from_id(id).unwrap(), *a);
            let expected = if id < 5 { ActionGroup::Scaling } else { ActionGroup::Translation };
            assert_eq!(a.group(), expected);
        }
    }

    #[test]
    fn apply_action_examples() {
        let e = ext(100, 100);
        assert_close(apply_action(&win(0.0, 0.0, 100.0, 100.0), Action::ScaleCenter, e), win(22.5, 22.5, 77.5, 77.5));
        assert_close(apply_action(&win(0.0, 0.0, 40.0, 40.0), Action::MoveRight, e), win(10.0, 0.0, 50.0, 40.0));
        assert_close(apply_action(&win(70.0, 0.0, 100.0, 40.0), Action::MoveRight, e), win(77.5, 0.0, 100.0, 40.0));
    }

    #[test]
    fn corner_children_anchor_on_parent_corners() {
        let e = ext(100, 100);
        let w = win(0.0, 0.0, 100.0, 100.0);
        assert_close(apply_action(&w, Action::ScaleTopLeft, e), win(0.0, 0.0, 55.0, 55.0));
        assert_close(apply_action(&w, Action::ScaleTopRight, e), win(45.0, 0.0, 100.0, 55.0));
        assert_close(apply_action(&w, Action::ScaleBottomLeft, e), win(0.0, 45.0, 55.0, 100.0));
        assert_close(apply_action(&w, Action::ScaleBottomRight, e), win(45.0, 45.0, 100.0, 100.0));
    }

    #[test]
    fn resize_actions_are_symmetric() {
        let e = ext(100, 100);
        let w = win(20.0, 20.0, 60.0, 60.0);
        assert_close(apply_action(&w, Action::ShrinkHorizontal, e), win(25.0, 20.0, 55.0, 60.0));
        assert_close(apply_action(&w, Action::GrowHorizontal, e), win(15.0, 20.0, 65.0, 60.0));
        assert_close(apply_action(&w, Action::ShrinkVertical, e), win(20.0, 25.0, 60.0, 55.0));
        assert_close(apply_action(&w, Action::GrowVertical, e), win(20.0, 15.0, 60.0, 65.0));
        assert_close(apply_action(&w, Action::MoveUp, e), win(20.0, 10.0, 60.0, 50.0));
        assert_close(apply_action(&w, Action::MoveLeft, e), win(10.0, 20.0, 50.0, 60.0));
        assert_close(apply_action(&w, Action::MoveDown, e), win(20.0, 30.0, 60.0, 70.0));
    }

    #[test]
    fn min_size_clamp_stays_in_container() {
        let e = ext(100, 100);
        // 10 * 0.55 = 5.5 < 8: widened to 8 but kept inside the parent.
        let parent = win(0.0, 0.0, 10.0, 10.0);
        let child = apply_action(&parent, Action::ScaleTopLeft, e);
        assert_close(child, win(0.0, 0.0, 8.0, 8.0));
        assert!(parent.contains(&child));
        // Shrinking a 9 px window to 6.75 px clamps to 8 px about the center.
        let w = win(50.0, 50.0, 59.0, 59.0);
        let out = apply_action(&w, Action::ShrinkHorizontal, e);
        assert_close(out, win(50.5, 50.0, 58.5, 59.0));
        // Repeated pushes against the right edge stop at min_size.
        let mut w = win(60.0, 0.0, 100.0, 40.0);
        for _ in 0..30 {
            w = apply_action(&w, Action::MoveRight, e);
        }
        assert_close(w, win(92.0, 0.0, 100.0, 40.0));
    }

    fn arb_window(extent: f64) -> impl Strategy<Value = Window> {
        (0.0..extent - 1.0, 0.0..extent - 1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(
            move |(x0, y0, fw, fh): (f64, f64, f64, f64)| {
                let x1 = x0 + 1.0 + fw * (extent - 1.0 - x0);
                let y1 = y0 + 1.0 + fh * (extent - 1.0 - y0);
                Window::new(x0, y0, x1.min(extent), y1.min(extent)).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_window(64.0), b in arb_window(64.0)) {
            let ab = a.iou(&b);
            prop_assert_eq!(ab, b.iou(&a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(a.iou(&a), 1.0);
        }

        #[test]
        fn actions_keep_windows_valid(w in arb_window(128.0), id in 0usize..13) {
            let e = ext(128, 128);
            let a = Action::from_id(id).unwrap();
            let out = apply_action(&w, a, e);
            prop_assert!(out.width() > 0.0 && out.height() > 0.0);
            prop_assert!(out.is_within(e));
            prop_assert_eq!(out, apply_action(&w, a, e));
        }

        #[test]
        fn scaling_children_are_nested(w in arb_window(128.0), id in 0usize..5) {
            let e = ext(128, 128);
            let child = apply_action(&w, Action::from_id(id).unwrap(), e);
            prop_assert!(w.contains(&child));
            if 0.55 * w.width() >= 8.0 {
                prop_assert!((child.width() - 0.55 * w.width()).abs() < 1e-9);
            }
            if 0.55 * w.height() >= 8.0 {
                prop_assert!((child.height() - 0.55 * w.height()).abs() < 1e-9);
            }
        }
    }
}
