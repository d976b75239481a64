//! Action choice from a vector of 13 action values.

use std::ops::Range;

use crate::geometry::{Action, NUM_ACTIONS, SCALING_IDS, TRANSLATION_IDS};

/// Highest-valued action among `ids`; ties go to the lowest id.
pub fn argmax_in(q: &[f64], ids: Range<usize>) -> Action {
    let mut best = ids.start;
    for i in ids {
        if q[i] > q[best] {
            best = i;
        }
    }
    Action::from_id(best).expect("id within action range")
}

pub fn best_scaling(q: &[f64]) -> Action {
    argmax_in(q, SCALING_IDS)
}

pub fn best_translation(q: &[f64]) -> Action {
    argmax_in(q, TRANSLATION_IDS)
}

/// Best action over the whole action set.
pub fn best_overall(q: &[f64]) -> Action {
    argmax_in(q, 0..NUM_ACTIONS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_argmax_and_ties() {
        let mut q = [0.0; 13];
        assert_eq!(best_scaling(&q), Action::ScaleTopLeft);
        assert_eq!(best_translation(&q), Action::MoveLeft);
        assert_eq!(best_overall(&q), Action::ScaleTopLeft);
        q[3] = 2.0;
        q[11] = 5.0;
        q[12] = 5.0;
        assert_eq!(best_scaling(&q), Action::ScaleBottomRight);
        assert_eq!(best_translation(&q), Action::ShrinkVertical);
        assert_eq!(best_overall(&q), Action::ShrinkVertical);
    }
}
