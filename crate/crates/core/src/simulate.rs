//! Simulated annotator clicks.
//!
//! Training draws `N_u ~ U{0..n_u_max}` and clicks the centers of
//! `K = min(N_u, N_a)` ground-truth objects chosen without replacement.
//! Evaluation sessions issue clicks one at a time, again without replacement,
//! until the image runs out of objects or the click budget is spent.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::RandomSource;
use crate::types::{LabeledImage, UserInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Upper end (inclusive) of the training-time click count draw.
    pub n_u_max: usize,
    pub eval_max_clicks: usize,
    pub eval_sessions: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_u_max: 20,
            eval_max_clicks: 20,
            eval_sessions: 5,
        }
    }
}

/// A click together with the ground-truth object it was derived from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatedClick {
    pub input: UserInput,
    pub gt_index: usize,
}

fn click_for(gt: &LabeledImage, gt_index: usize) -> SimulatedClick {
    let obj = &gt.objects[gt_index];
    let (x, y) = obj.bbox.center();
    SimulatedClick {
        input: UserInput {
            x,
            y,
            class_id: obj.class_id,
        },
        gt_index,
    }
}

/// Draw the number of clicks for one training sample: `min(N_u, N_a)`.
pub fn draw_click_count(n_available: usize, n_u_max: usize, rng: &mut RandomSource) -> usize {
    let n_u = rng.random_range(0..=n_u_max);
    n_u.min(n_available)
}

/// Training-time input synthesis for one image.
pub fn sample_training_inputs(gt: &LabeledImage, n_u_max: usize, rng: &mut RandomSource) -> Vec<SimulatedClick> {
    let k = draw_click_count(gt.num_objects(), n_u_max, rng);
    if k == 0 {
        return Vec::new();
    }
    index::sample(rng, gt.num_objects(), k)
        .into_iter()
        .map(|i| click_for(gt, i))
        .collect()
}

/// Per-image evaluation state: which objects may still be clicked, and what
/// has been issued so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    remaining: BTreeSet<usize>,
    issued: Vec<SimulatedClick>,
    max_clicks: usize,
}

impl SessionState {
    pub fn new(gt: &LabeledImage, max_clicks: usize) -> Self {
        Self {
            remaining: (0..gt.num_objects()).collect(),
            issued: Vec::new(),
            max_clicks,
        }
    }

    pub fn issued(&self) -> &[SimulatedClick] {
        &self.issued
    }

    pub fn remaining(&self) -> &BTreeSet<usize> {
        &self.remaining
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining.is_empty() || self.issued.len() >= self.max_clicks
    }
}

/// Issue the next click, or `None` when no further inputs are available.
/// The state is left untouched when exhausted.
pub fn next_click(state: &mut SessionState, gt: &LabeledImage, rng: &mut RandomSource) -> Option<SimulatedClick> {
    if state.is_exhausted() {
        return None;
    }
    let pick = rng.random_range(0..state.remaining.len());
    let gt_index = *state.remaining.iter().nth(pick).expect("pick < remaining.len()");
    state.remaining.remove(&gt_index);
    let click = click_for(gt, gt_index);
    state.issued.push(click);
    Some(click)
}

/// Draw a whole session for one image: up to `max_clicks` clicks, in issue order.
pub fn draw_session(gt: &LabeledImage, max_clicks: usize, rng: &mut RandomSource) -> Vec<SimulatedClick> {
    let mut state = SessionState::new(gt, max_clicks);
    while next_click(&mut state, gt, rng).is_some() {}
    state.issued
}
