//! Text-driven editing via synchronized trajectory replay, attention
//! injection, and region-consistent latent blending.
//!
//! Both trajectories restart from the same seeded noise. At every step the
//! edited phrases' token maps are binarized on both sides and unioned into
//! the blend-relevant region; everywhere else the new trajectory's latent is
//! overwritten with the original's before its guided denoise step. Attention
//! injection holds the unedited phrases' maps fixed (taken from the original
//! trajectory), so the bundle guidance of the new trajectory only
//! differentiates through the edited phrases.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::alignment::consensus_guidance_step;
use crate::attention::{ap_token_maps, binarize, blended_mask, d_is_from_maps, l_bundle_with_grad};
use crate::diffusion::{ddim_step, decode, guided_step, initial_noise, sample_tree, Engine, SamplerConfig};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, CanvasMask, Image, LatentGrid, LATENT};
use crate::prompt::{diff_aps, parse, APTree};

/// An attribute-substitution edit: same category, same phrase count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub old_prompt: String,
    pub new_prompt: String,
    pub seed: u64,
}

/// Knobs for ablations and invariant checks; defaults give the full method.
#[derive(Debug, Clone)]
pub struct EditOptions {
    /// Apply the per-step latent blend (disable to measure its effect).
    pub blend: bool,
    /// Override the computed keep mask at every step (diagnostics only).
    pub forced_keep: Option<BinaryMask>,
    /// Keep per-step latents in the result.
    pub record_latents: bool,
}

impl Default for EditOptions {
    fn default() -> Self {
        Self { blend: true, forced_keep: None, record_latents: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditStepRecord {
    pub t: usize,
    /// Pixels in this step's blend-relevant region.
    pub relevant_count: usize,
    /// Mean |z_new − z_old| over keep-region entries before blending.
    pub latent_keep_deviation: f64,
    /// Post-injection bundle loss seen by the new trajectory's guidance.
    pub l_bundle_injected: f64,
}

/// Per-step latents, kept only when requested.
#[derive(Debug, Clone)]
pub struct EditLatentTrace {
    pub t: usize,
    pub old: LatentGrid,
    pub new_pre_blend: LatentGrid,
    pub new_blended: LatentGrid,
}

#[derive(Debug, Clone)]
pub struct EditResult {
    pub original: Image,
    pub edited: Image,
    pub old_tree: APTree,
    pub new_tree: APTree,
    /// Indices of the edited phrases (Γ).
    pub gamma: Vec<usize>,
    /// Union over steps of the blend-relevant regions.
    pub b_relevant: BinaryMask,
    pub b_keep: BinaryMask,
    pub steps: Vec<EditStepRecord>,
    /// Image-level consistency over the decoded keep region.
    pub consistency: f64,
    pub trace: Option<Vec<EditLatentTrace>>,
}

/// Mean absolute RGB difference over pixels where the keep mask is set;
/// an empty mask scores 0 (nothing to preserve).
pub fn consistency_score(a: &Image, b: &Image, keep: &CanvasMask) -> Result<f64> {
    if a.raw().len() != b.raw().len() {
        return Err(Error::ShapeMismatch);
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (y, x) in keep.pixels() {
        let pa = a.get(y, x);
        let pb = b.get(y, x);
        for ch in 0..3 {
            total += crate::math::fabs(pa[ch] - pb[ch]);
            n += 1;
        }
    }
    if n == 0 {
        Ok(0.0)
    } else {
        Ok(total / n as f64)
    }
}

fn blend_latents(z_new: &LatentGrid, z_old: &LatentGrid, keep: &BinaryMask) -> LatentGrid {
    let mut out = z_new.clone();
    for p in 0..keep.len() {
        if keep.get(p) {
            let (y, x) = (p / LATENT, p % LATENT);
            out.set(y, x, z_old.get(y, x));
        }
    }
    out
}

fn keep_deviation(z_new: &LatentGrid, z_old: &LatentGrid, keep: &BinaryMask) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for p in 0..keep.len() {
        if keep.get(p) {
            let (y, x) = (p / LATENT, p % LATENT);
            let a = z_new.get(y, x);
            let b = z_old.get(y, x);
            for ch in 0..3 {
                total += crate::math::fabs(a[ch] - b[ch]);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Run an attribute-substitution edit.
///
/// A no-op request (Γ = ∅) blends the original latent everywhere at every
/// step, which reduces to replaying the original trajectory; it is answered
/// by exactly that replay, so the result is bit-identical to synthesis.
pub fn manipulate(
    engine: &Engine,
    cfg: &SamplerConfig,
    req: &EditRequest,
    opts: &EditOptions,
) -> Result<EditResult> {
    engine.check_cfg(cfg)?;
    let old_tree = parse(&req.old_prompt, &engine.world.lexicon)?;
    let new_tree = parse(&req.new_prompt, &engine.world.lexicon)?;
    let gamma = diff_aps(&old_tree, &new_tree)?;

    if gamma.is_empty() && opts.blend && opts.forced_keep.is_none() {
        let out = sample_tree(engine, cfg, &old_tree, req.seed)?;
        let steps = out
            .trajectory
            .iter()
            .map(|r| EditStepRecord {
                t: r.t,
                relevant_count: 0,
                latent_keep_deviation: 0.0,
                l_bundle_injected: r.l_bundle,
            })
            .collect();
        return Ok(EditResult {
            original: out.image.clone(),
            edited: out.image,
            old_tree,
            new_tree,
            gamma,
            b_relevant: BinaryMask::empty(),
            b_keep: BinaryMask::full(),
            steps,
            consistency: 0.0,
            trace: None,
        });
    }

    let mut in_gamma = alloc::vec![false; new_tree.aps.len()];
    for &i in &gamma {
        in_gamma[i] = true;
    }

    let mut z_old = initial_noise(req.seed);
    let mut z_new = z_old.clone();
    let mut union_relevant = BinaryMask::empty();
    let mut steps = Vec::with_capacity(cfg.t_steps);
    let mut trace = opts.record_latents.then(Vec::new);

    for t in (1..=cfg.t_steps).rev() {
        // (1) Token maps of both trajectories at the step's entry latents.
        let old_maps = ap_token_maps(&z_old, &old_tree, &engine.world, cfg.tau_attention)?;
        let new_maps = ap_token_maps(&z_new, &new_tree, &engine.world, cfg.tau_attention)?;

        // (3) Binarize the edited phrases' maps on both sides and union.
        let mut masks_old = Vec::new();
        let mut masks_new = Vec::new();
        for &i in &gamma {
            for map in &old_maps[i] {
                masks_old.push(binarize(map, cfg.percentile));
            }
            for map in &new_maps[i] {
                masks_new.push(binarize(map, cfg.percentile));
            }
        }
        let (mut b_relevant, mut b_keep) = if gamma.is_empty() {
            (BinaryMask::empty(), BinaryMask::full())
        } else {
            blended_mask(&masks_old, &masks_new)?
        };
        if let Some(forced) = &opts.forced_keep {
            b_keep = forced.clone();
            b_relevant = forced.not();
        }
        union_relevant = union_relevant.or(&b_relevant)?;

        let deviation = keep_deviation(&z_new, &z_old, &b_keep);

        // (4) Blend, then one guided step of the new trajectory.
        let z_pre = if opts.blend { blend_latents(&z_new, &z_old, &b_keep) } else { z_new.clone() };

        let (a_eff, b_eff) =
            if cfg.in_window(t) { (cfg.alpha, cfg.beta) } else { (0.0, 0.0) };
        let cons = consensus_guidance_step(&z_pre, &new_tree, &engine.world, a_eff)?;
        // (2) Bundle guidance over post-injection maps: unedited phrases keep
        // the original trajectory's maps, so only edited phrases carry
        // gradient; the injected part contributes a constant.
        let (gamma_value, bundle_grad) = l_bundle_with_grad(
            &cons.latent,
            &new_tree,
            &engine.world,
            cfg.tau_attention,
            Some(&in_gamma),
        )?;
        let injected_value: f64 = old_maps
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_gamma[*i])
            .map(|(_, maps)| d_is_from_maps(maps))
            .sum();
        let z_guided = if b_eff == 0.0 {
            cons.latent.clone()
        } else {
            cons.latent.axpy(-b_eff, &bundle_grad)
        };
        if !z_guided.is_finite() {
            return Err(Error::NonFinite { context: "edit guidance" });
        }
        let pred = engine.predict_noise(&z_guided, t, Some(&new_tree), cfg.lambda_cond)?;
        let z_new_next = ddim_step(&engine.schedule, &pred, t)?;

        // The original trajectory advances with its own full guided step.
        let (z_old_next, _) = guided_step(engine, cfg, &old_tree, &z_old, t)?;

        if let Some(trace) = trace.as_mut() {
            trace.push(EditLatentTrace {
                t,
                old: z_old.clone(),
                new_pre_blend: z_new.clone(),
                new_blended: z_pre.clone(),
            });
        }
        steps.push(EditStepRecord {
            t,
            relevant_count: b_relevant.count(),
            latent_keep_deviation: deviation,
            l_bundle_injected: gamma_value + injected_value,
        });
        z_old = z_old_next;
        z_new = z_new_next;
    }

    let original = decode(&z_old).clamped();
    let edited = decode(&z_new).clamped();
    let b_keep = union_relevant.not();
    let consistency = consistency_score(&original, &edited, &b_keep.upsample_to_canvas())?;
    Ok(EditResult {
        original,
        edited,
        old_tree,
        new_tree,
        gamma,
        b_relevant: union_relevant,
        b_keep,
        steps,
        consistency,
        trace,
    })
}
