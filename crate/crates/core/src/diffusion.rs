//! Noise schedule, latent autoencoding, forward diffusion, the analytic
//! prototype-mixture denoiser, and the guided DDIM sampling loop.
//!
//! The denoiser is exact rather than learned: the clean-latent distribution
//! is the finite prototype bank, so the Bayes-optimal noise estimate follows
//! from the closed-form posterior mean E[z₀ | z_t]. Text conditioning
//! reweights the prototype prior by each prototype's full-image similarity to
//! the prompt. Sampling is deterministic (DDIM with η = 0) and seeded only
//! through the initial noise.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::alignment::consensus_guidance_step;
use crate::attention::{ap_token_maps, bundle_guidance_step};
use crate::error::{Error, Result};
use crate::grid::{pool, unpool, Image, LatentGrid};
use crate::math::{exp, log_sum_exp, sqrt, GaussianSource};
use crate::prompt::{parse, APTree};
use crate::sim::{embed_all_parts, sim_full_from_embeddings, ImageEmbedding};
use crate::world::{build_prototype_bank, render, Category, PrototypeBank, World};

/// Linear-β noise schedule with ᾱ₀ = 1 exactly, so the final DDIM step lands
/// on the predicted clean latent bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// β linear from `beta_start` (t = 1) to `beta_end` (t = T).
    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps < 2 {
            return Err(Error::InvalidConfig { detail: "schedule needs T >= 2".into() });
        }
        for b in [beta_start, beta_end] {
            if !(0.0..1.0).contains(&b) || b <= 0.0 {
                return Err(Error::InvalidConfig {
                    detail: alloc::format!("beta {b} outside (0, 1)"),
                });
            }
        }
        let mut betas = vec![0.0];
        let mut alpha_bar = vec![1.0];
        for t in 1..=t_steps {
            let frac = (t - 1) as f64 / (t_steps - 1) as f64;
            let beta = beta_start + (beta_end - beta_start) * frac;
            betas.push(beta);
            alpha_bar.push(alpha_bar[t - 1] * (1.0 - beta));
        }
        for t in 1..=t_steps {
            if alpha_bar[t] >= alpha_bar[t - 1] {
                return Err(Error::InvalidConfig {
                    detail: "alpha-bar must strictly decrease".into(),
                });
            }
        }
        Ok(Self { betas, alpha_bar })
    }

    pub fn t_steps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    fn check_t(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.t_steps() {
            return Err(Error::BadTimestep { t, max: self.t_steps() });
        }
        Ok(())
    }
}

/// Encode an image to the latent grid (4×4 average pooling per channel).
pub fn encode(image: &Image) -> LatentGrid {
    pool(image)
}

/// Decode a latent to canvas resolution by block replication. Values are not
/// clamped here; clamp at emission so guidance gradients stay alive.
pub fn decode(z: &LatentGrid) -> Image {
    unpool(z)
}

/// Closed-form forward marginal: z_t = √ᾱ_t·z₀ + √(1−ᾱ_t)·ε.
pub fn forward_diffuse(
    schedule: &NoiseSchedule,
    z0: &LatentGrid,
    t: usize,
    eps: &LatentGrid,
) -> Result<LatentGrid> {
    schedule.check_t(t, 0)?;
    let ab = schedule.alpha_bar(t);
    let (sa, sb) = (sqrt(ab), sqrt(1.0 - ab));
    let data = z0.raw().iter().zip(eps.raw()).map(|(z, e)| sa * z + sb * e).collect();
    LatentGrid::from_raw(data)
}

/// Posterior-mean denoiser output.
#[derive(Debug, Clone)]
pub struct DenoisePrediction {
    pub eps_hat: LatentGrid,
    pub z0_hat: LatentGrid,
    /// Posterior weight of every bank prototype.
    pub weights: Vec<f64>,
}

/// Deterministic DDIM update: z_{t−1} = √ᾱ_{t−1}·ẑ₀ + √(1−ᾱ_{t−1})·ε̂.
pub fn ddim_step(
    schedule: &NoiseSchedule,
    pred: &DenoisePrediction,
    t: usize,
) -> Result<LatentGrid> {
    schedule.check_t(t, 1)?;
    let ab = schedule.alpha_bar(t - 1);
    let (sa, sb) = (sqrt(ab), sqrt(1.0 - ab));
    let data = pred
        .z0_hat
        .raw()
        .iter()
        .zip(pred.eps_hat.raw())
        .map(|(z, e)| sa * z + sb * e)
        .collect();
    LatentGrid::from_raw(data)
}

/// Sampler hyperparameters. `alpha` scales the consensus (Hungarian) ascent,
/// `beta` the bundle descent; both run only inside the guidance window,
/// given as fractions of T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub alpha: f64,
    pub beta: f64,
    pub window: (f64, f64),
    pub percentile: f64,
    pub tau_attention: f64,
    pub lambda_cond: f64,
    pub bank_cap: usize,
    pub bank_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            t_steps: 50,
            beta_start: 1e-4,
            // 0.35 puts the terminal ᾱ at ~4.5e-5, under the 1e-4 bound.
            beta_end: 0.35,
            alpha: 0.05,
            beta: 0.05,
            window: (0.2, 0.8),
            percentile: 0.75,
            tau_attention: 0.2,
            lambda_cond: 20.0,
            bank_cap: 4096,
            bank_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::InvalidConfig { detail });
        if self.t_steps < 2 {
            return bad("t_steps must be >= 2".into());
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return bad("guidance step sizes must be >= 0".into());
        }
        if !(self.percentile > 0.0 && self.percentile < 1.0) {
            return bad(alloc::format!("percentile {} outside (0,1)", self.percentile));
        }
        if !(0.0..=1.0).contains(&self.window.0)
            || !(0.0..=1.0).contains(&self.window.1)
            || self.window.0 > self.window.1
        {
            return bad("guidance window must satisfy 0 <= lo <= hi <= 1".into());
        }
        if self.tau_attention <= 0.0 {
            return bad("attention temperature must be positive".into());
        }
        if !self.lambda_cond.is_finite() || self.lambda_cond < 0.0 {
            return bad("conditioning strength must be finite and >= 0".into());
        }
        if self.bank_cap == 0 {
            return bad("bank cap must be >= 1".into());
        }
        NoiseSchedule::linear(self.t_steps, self.beta_start, self.beta_end).map(|_| ())
    }

    /// Whether guidance runs at timestep `t`.
    pub fn in_window(&self, t: usize) -> bool {
        let tf = t as f64;
        let total = self.t_steps as f64;
        tf >= self.window.0 * total && tf <= self.window.1 * total
    }
}

/// World, prototype bank, schedule, and the per-prototype part embeddings
/// that feed the conditioning prior. Read-only once built.
pub struct Engine {
    pub world: World,
    pub bank: PrototypeBank,
    pub schedule: NoiseSchedule,
    /// `prior_features[entry][template_index]` = part embeddings of the
    /// prototype's render under that template.
    prior_features: Vec<Vec<Vec<ImageEmbedding>>>,
    t_steps: usize,
    beta_start: f64,
    beta_end: f64,
}

impl Engine {
    pub fn new(world: World, cfg: &SamplerConfig) -> Result<Self> {
        let categories: Vec<Category> =
            world.templates().iter().map(|t| t.category).collect();
        Self::for_categories(world, cfg, &categories)
    }

    /// Restrict the bank to a subset of categories (smaller test engines).
    pub fn for_categories(
        world: World,
        cfg: &SamplerConfig,
        categories: &[Category],
    ) -> Result<Self> {
        cfg.validate()?;
        let schedule = NoiseSchedule::linear(cfg.t_steps, cfg.beta_start, cfg.beta_end)?;
        let bank = build_prototype_bank(&world, categories, cfg.bank_cap, cfg.bank_seed)?;
        let mut prior_features = Vec::with_capacity(bank.len());
        for proto in &bank.entries {
            let image = render(&proto.scene, &world)?;
            let per_template = world
                .templates()
                .iter()
                .map(|t| embed_all_parts(&image, t.category, &world))
                .collect::<Result<Vec<_>>>()?;
            prior_features.push(per_template);
        }
        Ok(Self {
            world,
            bank,
            schedule,
            prior_features,
            t_steps: cfg.t_steps,
            beta_start: cfg.beta_start,
            beta_end: cfg.beta_end,
        })
    }

    /// Reject configs whose schedule disagrees with the engine's.
    pub fn check_cfg(&self, cfg: &SamplerConfig) -> Result<()> {
        cfg.validate()?;
        if cfg.t_steps != self.t_steps
            || cfg.beta_start != self.beta_start
            || cfg.beta_end != self.beta_end
        {
            return Err(Error::CfgMismatch {
                detail: "schedule parameters differ from the engine's".into(),
            });
        }
        Ok(())
    }

    fn template_index(&self, category: Category) -> Result<usize> {
        self.world
            .templates()
            .iter()
            .position(|t| t.category == category)
            .ok_or_else(|| Error::UnknownCategory { name: category.name().into() })
    }

    /// Log prior over prototypes: uniform without conditioning, otherwise
    /// softmax of λ · sim_full(render_k, prompt) over the prompt category's
    /// prototypes. Conditioning commits to the parsed category the same way
    /// segmentation does, so other categories carry zero prior mass.
    fn log_prior(&self, cond: Option<&APTree>, lambda: f64) -> Result<Vec<f64>> {
        let n = self.bank.len();
        let raw: Vec<f64> = match cond {
            None => vec![0.0; n],
            Some(tree) => {
                let tidx = self.template_index(tree.category)?;
                let scores: Vec<f64> = self
                    .bank
                    .entries
                    .iter()
                    .zip(&self.prior_features)
                    .map(|(proto, per)| {
                        if proto.scene.category == tree.category {
                            lambda
                                * sim_full_from_embeddings(&per[tidx], tree, &self.world.lexicon)
                        } else {
                            f64::NEG_INFINITY
                        }
                    })
                    .collect();
                if scores.iter().all(|s| !s.is_finite()) {
                    return Err(Error::EmptyBank);
                }
                scores
            }
        };
        let z = log_sum_exp(&raw);
        Ok(raw.iter().map(|v| v - z).collect())
    }

    /// Bayes posterior-mean denoiser over the prototype bank, log-sum-exp
    /// stabilized. Valid for t in 1..=T.
    pub fn predict_noise(
        &self,
        z: &LatentGrid,
        t: usize,
        cond: Option<&APTree>,
        lambda: f64,
    ) -> Result<DenoisePrediction> {
        self.schedule.check_t(t, 1)?;
        if self.bank.is_empty() {
            return Err(Error::EmptyBank);
        }
        if !z.is_finite() {
            return Err(Error::NonFinite { context: "denoiser input" });
        }
        let ab = self.schedule.alpha_bar(t);
        let sa = sqrt(ab);
        let var = 1.0 - ab;
        let log_prior = self.log_prior(cond, lambda)?;
        let mut logits = Vec::with_capacity(self.bank.len());
        for (proto, lp) in self.bank.entries.iter().zip(&log_prior) {
            let mut d2 = 0.0;
            for (zi, pi) in z.raw().iter().zip(proto.latent.raw()) {
                let d = zi - sa * pi;
                d2 += d * d;
            }
            logits.push(lp - d2 / (2.0 * var));
        }
        let norm = log_sum_exp(&logits);
        let weights: Vec<f64> = logits.iter().map(|l| exp(l - norm)).collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite { context: "posterior weights" });
        }
        let mut z0 = vec![0.0; z.raw().len()];
        for (proto, &w) in self.bank.entries.iter().zip(&weights) {
            for (acc, v) in z0.iter_mut().zip(proto.latent.raw()) {
                *acc += w * v;
            }
        }
        let z0_hat = LatentGrid::from_raw(z0)?;
        let inv = 1.0 / sqrt(var);
        let eps: Vec<f64> = z
            .raw()
            .iter()
            .zip(z0_hat.raw())
            .map(|(zt, z0)| (zt - sa * z0) * inv)
            .collect();
        Ok(DenoisePrediction { eps_hat: LatentGrid::from_raw(eps)?, z0_hat, weights })
    }
}

/// Per-step scalar record of a sampling trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub l_hungarian: f64,
    pub l_bundle: f64,
    /// L2 norm of the applied consensus shift α·∇L.
    pub consensus_shift: f64,
    /// L2 norm of the applied bundle shift β·∇L.
    pub bundle_shift: f64,
}

/// Attention maps of every prompt token at one step (taken at the latent
/// entering the step, before guidance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSnapshot {
    pub t: usize,
    pub tokens: Vec<TokenMapRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMapRecord {
    pub token: String,
    pub ap_index: usize,
    pub probs: Vec<f64>,
}

pub struct SampleOutput {
    pub image: Image,
    pub final_latent: LatentGrid,
    pub tree: APTree,
    pub trajectory: Vec<StepRecord>,
    pub attention: Vec<AttentionSnapshot>,
}

/// Seeded initial noise for a trajectory.
pub fn initial_noise(seed: u64) -> LatentGrid {
    let mut z = LatentGrid::zeros();
    GaussianSource::new(seed).fill_normal(z.raw_mut());
    z
}

fn snapshot(
    z: &LatentGrid,
    t: usize,
    tree: &APTree,
    world: &World,
    tau: f64,
) -> Result<AttentionSnapshot> {
    let maps = ap_token_maps(z, tree, world, tau)?;
    let mut tokens = Vec::new();
    for (ap_index, (ap, ap_maps)) in tree.aps.iter().zip(&maps).enumerate() {
        for (tok, map) in
            ap.adjectives.iter().chain(core::iter::once(&ap.noun)).zip(ap_maps)
        {
            tokens.push(TokenMapRecord {
                token: tok.text.clone(),
                ap_index,
                probs: map.probs().into(),
            });
        }
    }
    Ok(AttentionSnapshot { t, tokens })
}

/// One guided denoising step: consensus ascent, bundle descent, posterior
/// denoise, DDIM update. Returns the next latent and the step record.
pub(crate) fn guided_step(
    engine: &Engine,
    cfg: &SamplerConfig,
    tree: &APTree,
    z: &LatentGrid,
    t: usize,
) -> Result<(LatentGrid, StepRecord)> {
    let (a_eff, b_eff) =
        if cfg.in_window(t) { (cfg.alpha, cfg.beta) } else { (0.0, 0.0) };
    let cons = consensus_guidance_step(z, tree, &engine.world, a_eff)?;
    let bund =
        bundle_guidance_step(&cons.latent, tree, &engine.world, cfg.tau_attention, b_eff)?;
    let pred = engine.predict_noise(&bund.latent, t, Some(tree), cfg.lambda_cond)?;
    let next = ddim_step(&engine.schedule, &pred, t)?;
    let record = StepRecord {
        t,
        l_hungarian: cons.loss,
        l_bundle: bund.loss,
        consensus_shift: cons.shift_norm,
        bundle_shift: bund.shift_norm,
    };
    Ok((next, record))
}

/// Full guided sampling run: seeded noise at t = T, per-step consensus and
/// bundle guidance inside the window, analytic denoising, DDIM updates, and
/// the decoded (clamped) image.
pub fn sample(engine: &Engine, cfg: &SamplerConfig, prompt: &str, seed: u64) -> Result<SampleOutput> {
    engine.check_cfg(cfg)?;
    let tree = parse(prompt, &engine.world.lexicon)?;
    sample_tree(engine, cfg, &tree, seed)
}

pub fn sample_tree(
    engine: &Engine,
    cfg: &SamplerConfig,
    tree: &APTree,
    seed: u64,
) -> Result<SampleOutput> {
    engine.check_cfg(cfg)?;
    let mut z = initial_noise(seed);
    let mut trajectory = Vec::with_capacity(cfg.t_steps);
    let mut attention = Vec::with_capacity(cfg.t_steps);
    for t in (1..=cfg.t_steps).rev() {
        attention.push(snapshot(&z, t, tree, &engine.world, cfg.tau_attention)?);
        let (next, record) = guided_step(engine, cfg, tree, &z, t)?;
        trajectory.push(record);
        z = next;
    }
    if !z.is_finite() {
        return Err(Error::NonFinite { context: "final latent" });
    }
    Ok(SampleOutput {
        image: decode(&z).clamped(),
        final_latent: z,
        tree: tree.clone(),
        trajectory,
        attention,
    })
}
