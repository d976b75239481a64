//! Proposal recall metrics.
//!
//! A ground truth is recalled at threshold τ within budget k when the best IoU
//! over the first k ranked proposals is at least τ. Matching is per ground
//! truth; one proposal may cover several objects.

use std::fmt::{self, Write as _};

use crate::featurizer::Featurizer;
use crate::geometry::{ActionGeometry, Window};
use crate::mdp::SceneContext;
use crate::qnet::QNetwork;
use crate::scene::{size_class, SizeClass};
use crate::svg::{line_plot, Series};
use crate::tree_search::{propose, SearchError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SizeFilter {
    All,
    Large,
    Small,
}

impl SizeFilter {
    pub const ALL: [SizeFilter; 3] = [SizeFilter::Large, SizeFilter::Small, SizeFilter::All];

    pub fn accepts(self, g: &Window) -> bool {
        match self {
            SizeFilter::All => true,
            SizeFilter::Large => size_class(g) == SizeClass::Large,
            SizeFilter::Small => size_class(g) == SizeClass::Small,
        }
    }
}

impl fmt::Display for SizeFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeFilter::All => "all",
            SizeFilter::Large => "large",
            SizeFilter::Small => "small",
        })
    }
}

/// Best IoU of each filtered ground truth over the first `budget` proposals
/// of its scene (0 when the scene has no proposals).
pub fn best_ious(proposals: &[Vec<Window>], gts: &[Vec<Window>], budget: usize, filter: SizeFilter) -> Vec<f64> {
    assert_eq!(proposals.len(), gts.len(), "one proposal list per scene");
    let mut out = Vec::new();
    for (props, scene_gts) in proposals.iter().zip(gts) {
        let top = &props[..budget.min(props.len())];
        for g in scene_gts.iter().filter(|g| filter.accepts(g)) {
            out.push(top.iter().map(|p| p.iou(g)).fold(0.0, f64::max));
        }
    }
    out
}

/// Fraction of filtered ground truths recalled; `None` when the filter leaves none.
pub fn recall(
    proposals: &[Vec<Window>],
    gts: &[Vec<Window>],
    budget: usize,
    threshold: f64,
    filter: SizeFilter,
) -> Option<f64> {
    let best = best_ious(proposals, gts, budget, filter);
    if best.is_empty() {
        return None;
    }
    Some(best.iter().filter(|&&b| b >= threshold).count() as f64 / best.len() as f64)
}

/// Recall averaged over IoU thresholds in [0.5, 1], in closed form per ground
/// truth: `clamp(2·(best − 0.5), 0, 1)`.
pub fn average_recall(proposals: &[Vec<Window>], gts: &[Vec<Window>], budget: usize, filter: SizeFilter) -> Option<f64> {
    let best = best_ious(proposals, gts, budget, filter);
    if best.is_empty() {
        return None;
    }
    Some(best.iter().map(|b| (2.0 * (b - 0.5)).clamp(0.0, 1.0)).sum::<f64>() / best.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallRow {
    pub budget: usize,
    pub size: SizeFilter,
    pub threshold: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageRecallRow {
    pub budget: usize,
    pub size: SizeFilter,
    pub average_recall: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecallReport {
    pub rows: Vec<RecallRow>,
    pub average: Vec<AverageRecallRow>,
}

impl RecallReport {
    pub fn get(&self, budget: usize, size: SizeFilter, threshold: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.budget == budget && r.size == size && r.threshold == threshold)
            .map(|r| r.recall)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("budget\tsize\tthreshold\trecall\n");
        for r in &self.rows {
            writeln!(out, "{}\t{}\t{:.2}\t{:.6}", r.budget, r.size, r.threshold, r.recall).unwrap();
        }
        out.push_str("\nbudget\tsize\taverage_recall\n");
        for r in &self.average {
            writeln!(out, "{}\t{}\t{:.6}", r.budget, r.size, r.average_recall).unwrap();
        }
        out
    }

    fn budgets(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.rows.iter().map(|r| r.budget).collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    fn thresholds(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.rows.iter().map(|r| r.threshold).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    /// Recall against IoU threshold, one line per budget (all objects).
    pub fn recall_vs_iou_svg(&self) -> String {
        let series: Vec<Series> = self
            .budgets()
            .into_iter()
            .map(|b| Series {
                label: format!("{b} proposals"),
                points: self
                    .rows
                    .iter()
                    .filter(|r| r.budget == b && r.size == SizeFilter::All)
                    .map(|r| (r.threshold, r.recall))
                    .collect(),
            })
            .collect();
        line_plot("Recall vs IoU threshold", "IoU threshold", "recall", &series, (0.5, 1.0))
    }

    /// Recall against proposal budget, one line per threshold (all objects).
    pub fn recall_vs_budget_svg(&self) -> String {
        let budgets = self.budgets();
        let hi = budgets.last().copied().unwrap_or(1).max(1) as f64;
        let series: Vec<Series> = self
            .thresholds()
            .into_iter()
            .map(|t| Series {
                label: format!("IoU {t:.2}"),
                points: self
                    .rows
                    .iter()
                    .filter(|r| r.threshold == t && r.size == SizeFilter::All)
                    .map(|r| (r.budget as f64, r.recall))
                    .collect(),
            })
            .collect();
        line_plot("Recall vs number of proposals", "proposals", "recall", &series, (0.0, hi))
    }

    /// Average recall against proposal budget (all objects).
    pub fn average_recall_svg(&self) -> String {
        let hi = self.budgets().last().copied().unwrap_or(1).max(1) as f64;
        let series = [Series {
            label: "average recall".into(),
            points: self
                .average
                .iter()
                .filter(|r| r.size == SizeFilter::All)
                .map(|r| (r.budget as f64, r.average_recall))
                .collect(),
        }];
        line_plot("Average recall (0.5 < IoU < 1)", "proposals", "average recall", &series, (0.0, hi))
    }
}

/// Recall rows for every budget × size class × threshold, plus average recall
/// per budget × size class. Size classes without ground truths are omitted.
pub fn evaluate(proposals: &[Vec<Window>], gts: &[Vec<Window>], budgets: &[usize], thresholds: &[f64]) -> RecallReport {
    let mut report = RecallReport::default();
    for &budget in budgets {
        for size in SizeFilter::ALL {
            for &threshold in thresholds {
                if let Some(r) = recall(proposals, gts, budget, threshold, size) {
                    report.rows.push(RecallRow {
                        budget,
                        size,
                        threshold,
                        recall: r,
                    });
                }
            }
            if let Some(ar) = average_recall(proposals, gts, budget, size) {
                report.average.push(AverageRecallRow {
                    budget,
                    size,
                    average_recall: ar,
                });
            }
        }
    }
    report
}

/// Runs the tree search at the deepest requested level and evaluates every
/// level's prefix (`2^L − 1` proposals).
pub fn report(
    contexts: &[SceneContext],
    featurizer: &dyn Featurizer,
    net: &QNetwork,
    geometry: &ActionGeometry,
    levels: &[usize],
    thresholds: &[f64],
) -> Result<RecallReport, SearchError> {
    let deepest = levels.iter().copied().max().unwrap_or(1);
    let proposals: Vec<Vec<Window>> = contexts
        .iter()
        .map(|ctx| propose(ctx, featurizer, net, geometry, deepest).map(|s| s.windows()))
        .collect::<Result<_, _>>()?;
    let gts: Vec<Vec<Window>> = contexts.iter().map(|c| c.ground_truths.clone()).collect();
    let budgets: Vec<usize> = levels.iter().map(|&l| (1usize << l) - 1).collect();
    Ok(evaluate(&proposals, &gts, &budgets, thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn win(x0: f64, y0: f64, x1: f64, y1: f64) -> Window {
        Window::new(x0, y0, x1, y1).unwrap()
    }

    fn random_window(rng: &mut ChaCha8Rng) -> Window {
        let x0 = rng.gen_range(0.0..100.0);
        let y0 = rng.gen_range(0.0..100.0);
        let w = rng.gen_range(4.0..(128.0 - x0));
        let h = rng.gen_range(4.0..(128.0 - y0));
        win(x0, y0, x0 + w, y0 + h)
    }

    fn random_instance(seed: u64) -> (Vec<Vec<Window>>, Vec<Vec<Window>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut props = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..20 {
            let np = rng.gen_range(0..40);
            props.push((0..np).map(|_| random_window(&mut rng)).collect());
            let ng = rng.gen_range(1..6);
            gts.push((0..ng).map(|_| random_window(&mut rng)).collect());
        }
        (props, gts)
    }

    /// Straight double loop over scenes and ground truths.
    fn brute_recall(props: &[Vec<Window>], gts: &[Vec<Window>], k: usize, tau: f64, f: SizeFilter) -> Option<f64> {
        let mut hit = 0;
        let mut total = 0;
        for s in 0..gts.len() {
            for g in &gts[s] {
                if !f.accepts(g) {
                    continue;
                }
                total += 1;
                let mut found = false;
                for (j, p) in props[s].iter().enumerate() {
                    if j < k && p.iou(g) >= tau {
                        found = true;
                    }
                }
                hit += found as usize;
            }
        }
        (total > 0).then(|| hit as f64 / total as f64)
    }

    #[test]
    fn exact_proposals_give_full_recall() {
        let gts = vec![vec![win(0.0, 0.0, 10.0, 10.0), win(50.0, 50.0, 120.0, 100.0)]];
        let props = gts.clone();
        for tau in [0.5, 0.7, 1.0] {
            assert_eq!(recall(&props, &gts, 2, tau, SizeFilter::All), Some(1.0));
        }
        assert_eq!(average_recall(&props, &gts, 2, SizeFilter::All), Some(1.0));
        assert_eq!(recall(&props, &gts, 1, 0.5, SizeFilter::All), Some(0.5));
    }

    #[test]
    fn root_only_misses_small_objects() {
        let root = win(0.0, 0.0, 128.0, 128.0);
        let g = win(10.0, 10.0, 30.0, 30.0);
        assert!(root.iou(&g) < 0.5);
        let r = recall(&[vec![root]], &[vec![g]], 1, 0.5, SizeFilter::All);
        assert_eq!(r, Some(0.0));
        assert_eq!(recall(&[vec![root]], &[vec![g]], 1, 0.5, SizeFilter::Large), None);
    }

    #[test]
    fn average_recall_closed_form() {
        // IoU 0.75 against a 10x10 box: proposal covering 75 of its 100 pixels.
        let g = win(0.0, 0.0, 10.0, 10.0);
        let p = win(0.0, 0.0, 7.5, 10.0);
        assert!((p.iou(&g) - 0.75).abs() < 1e-12);
        let ar = average_recall(&[vec![p]], &[vec![g]], 1, SizeFilter::All).unwrap();
        assert!((ar - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_and_quadrature() {
        for seed in 0..5 {
            let (props, gts) = random_instance(seed);
            for k in [1, 5, 31] {
                for f in SizeFilter::ALL {
                    for tau in [0.3, 0.5, 0.7] {
                        assert_eq!(recall(&props, &gts, k, tau, f), brute_recall(&props, &gts, k, tau, f));
                    }
                    if let Some(ar) = average_recall(&props, &gts, k, f) {
                        let samples: Vec<f64> = (50..=100)
                            .map(|t| brute_recall(&props, &gts, k, t as f64 / 100.0, f).unwrap())
                            .collect();
                        let quad = samples.iter().sum::<f64>() / samples.len() as f64;
                        assert!((ar - quad).abs() <= 0.01 + 1e-12, "ar {ar} quad {quad}");
                    }
                }
            }
        }
    }

    #[test]
    fn all_is_weighted_mean_of_classes() {
        let (props, gts) = random_instance(42);
        let count = |f: SizeFilter| gts.iter().flatten().filter(|g| f.accepts(g)).count() as f64;
        let report = evaluate(&props, &gts, &[31, 63], &[0.5, 0.6, 0.7]);
        for b in [31, 63] {
            for t in [0.5, 0.6, 0.7] {
                let (l, s, a) = (
                    report.get(b, SizeFilter::Large, t).unwrap(),
                    report.get(b, SizeFilter::Small, t).unwrap(),
                    report.get(b, SizeFilter::All, t).unwrap(),
                );
                let weighted = (l * count(SizeFilter::Large) + s * count(SizeFilter::Small)) / count(SizeFilter::All);
                assert!((a - weighted).abs() < 1e-12);
                assert!(a >= l.min(s) && a <= l.max(s));
            }
        }
        assert_eq!(report.rows.len(), 2 * 3 * 3);
        assert!(report.to_tsv().starts_with("budget\tsize\tthreshold\trecall\n31\tlarge\t0.50\t"));
    }

    #[test]
    fn empty_proposals_give_zero_recall() {
        let gts = vec![vec![win(0.0, 0.0, 10.0, 10.0)]];
        let report = evaluate(&[vec![]], &gts, &[31], &[0.5]);
        assert_eq!(report.get(31, SizeFilter::All, 0.5), Some(0.0));
        assert_eq!(report.get(31, SizeFilter::Large, 0.5), None);
    }

    proptest! {
        #[test]
        fn recall_monotone_in_threshold_and_budget(seed in 0u64..1000) {
            let (props, gts) = random_instance(seed);
            let taus = [0.3, 0.5, 0.6, 0.7, 0.9];
            for k in [1, 3, 7, 15, 31] {
                for w in taus.windows(2) {
                    let a = recall(&props, &gts, k, w[0], SizeFilter::All).unwrap();
                    let b = recall(&props, &gts, k, w[1], SizeFilter::All).unwrap();
                    prop_assert!(b <= a);
                }
            }
            for tau in taus {
                let mut prev = 0.0;
                for k in [1, 3, 7, 15, 31, 63] {
                    let r = recall(&props, &gts, k, tau, SizeFilter::All).unwrap();
                    prop_assert!(r >= prev);
                    prev = r;
                }
            }
        }
    }
}
