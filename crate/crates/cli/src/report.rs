//! JSON views of pipeline outputs. Field order is fixed by struct order, so
//! identical runs serialize to identical bytes.

use serde::Serialize;
use tailor_core::alignment::AlignResult;
use tailor_core::diffusion::{SamplerConfig, StepRecord};
use tailor_core::edit::{EditResult, EditStepRecord};
use tailor_core::prompt::APTree;
use tailor_core::world::{GarmentScene, PartSet};

#[derive(Serialize)]
pub struct ApView {
    pub adjectives: Vec<String>,
    pub noun: String,
    pub span: [usize; 2],
}

#[derive(Serialize)]
pub struct TreeView {
    pub full_prompt: String,
    pub category: String,
    pub aps: Vec<ApView>,
}

impl TreeView {
    pub fn new(tree: &APTree) -> Self {
        Self {
            full_prompt: tree.full_prompt.clone(),
            category: tree.category.name().to_string(),
            aps: tree
                .aps
                .iter()
                .map(|ap| ApView {
                    adjectives: ap.adjectives.iter().map(|t| t.text.clone()).collect(),
                    noun: ap.noun.text.clone(),
                    span: [ap.span().0, ap.span().1],
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
pub struct PairView {
    pub part: String,
    pub ap_index: Option<usize>,
    pub ap: Option<String>,
    pub similarity: f64,
    pub dummy: bool,
}

#[derive(Serialize)]
pub struct MatchReport {
    pub prompt: String,
    pub category: String,
    pub l_hungarian: f64,
    pub sim_full: f64,
    pub pairs: Vec<PairView>,
}

impl MatchReport {
    pub fn new(tree: &APTree, parts: &PartSet, aligned: &AlignResult) -> Self {
        let pairs = parts
            .parts
            .iter()
            .enumerate()
            .map(|(i, view)| {
                let ap_index = aligned
                    .pairs
                    .iter()
                    .find(|(part_idx, _)| *part_idx == i)
                    .map(|(_, ap_idx)| *ap_idx);
                PairView {
                    part: view.part.name().to_string(),
                    ap_index,
                    ap: ap_index.map(|j| {
                        tree.aps[j]
                            .token_texts()
                            .join(" ")
                    }),
                    similarity: aligned.assignment.pair_sims[i],
                    dummy: aligned.assignment.dummy[i],
                }
            })
            .collect();
        Self {
            prompt: tree.full_prompt.clone(),
            category: tree.category.name().to_string(),
            l_hungarian: aligned.score,
            sim_full: aligned.sim_full,
            pairs,
        }
    }
}

#[derive(Serialize)]
pub struct TrajectoryReport<'a> {
    pub prompt: &'a str,
    pub seed: u64,
    pub config: &'a SamplerConfig,
    pub steps: &'a [StepRecord],
}

#[derive(Serialize)]
pub struct ManipulateReport<'a> {
    pub old_prompt: &'a str,
    pub new_prompt: &'a str,
    pub seed: u64,
    pub config: &'a SamplerConfig,
    pub blend: bool,
    pub gamma: &'a [usize],
    pub realized: bool,
    pub consistency: f64,
    pub relevant_pixels: usize,
    pub keep_pixels: usize,
    pub inferred_scene: &'a GarmentScene,
    pub steps: &'a [EditStepRecord],
}

impl<'a> ManipulateReport<'a> {
    pub fn new(
        req_seed: u64,
        config: &'a SamplerConfig,
        blend: bool,
        edit: &'a EditResult,
        realized: bool,
        inferred_scene: &'a GarmentScene,
    ) -> Self {
        Self {
            old_prompt: &edit.old_tree.full_prompt,
            new_prompt: &edit.new_tree.full_prompt,
            seed: req_seed,
            config,
            blend,
            gamma: &edit.gamma,
            realized,
            consistency: edit.consistency,
            relevant_pixels: edit.b_relevant.count(),
            keep_pixels: edit.b_keep.count(),
            inferred_scene,
            steps: &edit.steps,
        }
    }
}
