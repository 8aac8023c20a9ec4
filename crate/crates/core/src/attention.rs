//! Cross-attention maps over latent pixels and the semantic-bundle machinery.
//!
//! Every prompt token gets a key built from its lexicon color (centered so
//! neutral is zero), the centroid of its phrase's part region, and a
//! template-membership channel for that part. Queries combine the
//! decoded-then-pooled image (centered) with centered pixel coordinates and
//! the pixel's template membership. A token's attention map is the softmax
//! over pixels of the scaled query·key product, which concentrates color
//! adjectives on matching pixels and part nouns on their template region.
//!
//! Phrase-internal map similarity is measured with Jensen–Shannon divergence;
//! its sum over token pairs and phrases is the bundle loss whose descent step
//! runs during sampling. Binarized maps drive the editing-stage blend masks.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{pool, unpool, BinaryMask, LatentGrid, LATENT, LATENT_PIXELS};
use crate::math::{self, exp, ln, sqrt};
use crate::prompt::{APTree, AttrFeature, Token};
use crate::world::World;

/// Default softmax temperature τ for attention logits.
pub const TAU_ATTENTION: f64 = 0.2;
/// Membership logit bonus of part-noun keys.
///
/// Adjective keys get one unit less: on an aligned image their color channel
/// contributes roughly that unit inside the part, so aligned adjective maps
/// concentrate like their noun map while confused ones fall away from it.
pub const MEMBERSHIP_GAIN_NOUN: f64 = 2.0;
pub const MEMBERSHIP_GAIN_ADJECTIVE: f64 = 1.0;
/// Fixed query/key dimensions besides the per-category membership channels.
const BASE_DIMS: usize = 5;

/// Probability distribution over the 256 latent pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    probs: Vec<f64>,
}

impl AttentionMap {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.len() != LATENT_PIXELS {
            return Err(Error::BadShape { context: "attention map" });
        }
        let map = Self { probs };
        map.validate()?;
        Ok(map)
    }

    pub fn uniform() -> Self {
        Self { probs: vec![1.0 / LATENT_PIXELS as f64; LATENT_PIXELS] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for &p in &self.probs {
            if !(p >= 0.0) {
                return Err(Error::InvalidDistribution { sum: f64::NAN });
            }
            sum += p;
        }
        if math::fabs(sum - 1.0) > 1e-6 {
            return Err(Error::InvalidDistribution { sum });
        }
        Ok(())
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Per-token key: centered lexicon color (zero when the token carries no
/// color), centered centroid of the phrase's part region (zero when the part
/// is not in the category's layout), the part's membership channel, and the
/// part/adjective flag.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenKey {
    pub color: [f64; 3],
    pub centroid: [f64; 2],
    pub part_index: Option<usize>,
    pub membership_gain: f64,
    pub is_noun: bool,
}

impl TokenKey {
    pub fn is_zero(&self) -> bool {
        self.color == [0.0; 3] && self.centroid == [0.0; 2] && self.part_index.is_none()
    }
}

/// Key of one token of the tree. The token must be one of the tree's tokens.
pub fn token_key(token: &Token, tree: &APTree, world: &World) -> Result<TokenKey> {
    let template = world.template(tree.category)?;
    for ap in &tree.aps {
        let is_noun = ap.noun == *token;
        let is_adjective = ap.adjectives.iter().any(|t| t == token);
        if !is_noun && !is_adjective {
            continue;
        }
        let color = match world.lexicon.adjective(&token.text) {
            Some(AttrFeature::Color(rgb)) if is_adjective => {
                [rgb[0] - 0.5, rgb[1] - 0.5, rgb[2] - 0.5]
            }
            _ => [0.0; 3],
        };
        let part_index = template.part_index(ap.part);
        let centroid = match part_index {
            Some(_) => {
                let mask = template.mask_of(ap.part).expect("index implies mask");
                let (cx, cy) = mask.centroid().expect("template masks are non-empty");
                [cx - 0.5, cy - 0.5]
            }
            None => [0.0; 2],
        };
        let membership_gain = if part_index.is_none() {
            0.0
        } else if is_noun {
            MEMBERSHIP_GAIN_NOUN
        } else {
            MEMBERSHIP_GAIN_ADJECTIVE
        };
        return Ok(TokenKey { color, centroid, part_index, membership_gain, is_noun });
    }
    Err(Error::UnknownToken { word: token.text.clone() })
}

/// Per-pixel query features shared by every token of one latent: centered
/// pooled color, centered coordinates, template membership.
pub struct QueryField {
    rgb: Vec<[f64; 3]>,
    coords: Vec<[f64; 2]>,
    membership: Vec<Option<usize>>,
    part_count: usize,
}

impl QueryField {
    pub fn build(z: &LatentGrid, tree: &APTree, world: &World) -> Result<Self> {
        let template = world.template(tree.category)?;
        // Decode then pool back; block replication makes this exactly `z`.
        let pooled = pool(&unpool(z));
        let mut rgb = Vec::with_capacity(LATENT_PIXELS);
        let mut coords = Vec::with_capacity(LATENT_PIXELS);
        for y in 0..LATENT {
            for x in 0..LATENT {
                let c = pooled.get(y, x);
                rgb.push([c[0] - 0.5, c[1] - 0.5, c[2] - 0.5]);
                coords.push([
                    (x as f64 + 0.5) / LATENT as f64 - 0.5,
                    (y as f64 + 0.5) / LATENT as f64 - 0.5,
                ]);
            }
        }
        Ok(Self {
            rgb,
            coords,
            membership: template.latent_membership(),
            part_count: template.parts().len(),
        })
    }

    fn logit_scale(&self, tau: f64) -> f64 {
        sqrt((BASE_DIMS + self.part_count) as f64) * tau
    }

    fn logits(&self, key: &TokenKey, tau: f64) -> Vec<f64> {
        let s = self.logit_scale(tau);
        (0..LATENT_PIXELS)
            .map(|p| {
                let mut dot = self.rgb[p][0] * key.color[0]
                    + self.rgb[p][1] * key.color[1]
                    + self.rgb[p][2] * key.color[2]
                    + self.coords[p][0] * key.centroid[0]
                    + self.coords[p][1] * key.centroid[1];
                if key.part_index.is_some() && self.membership[p] == key.part_index {
                    dot += key.membership_gain;
                }
                dot / s
            })
            .collect()
    }

    pub fn map_for_key(&self, key: &TokenKey, tau: f64) -> AttentionMap {
        AttentionMap { probs: softmax(&self.logits(key, tau)) }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &l in logits {
        if l > m {
            m = l;
        }
    }
    let mut out: Vec<f64> = logits.iter().map(|&l| exp(l - m)).collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    out
}

/// Attention map of one token over the latent pixels.
pub fn attention_map(
    z: &LatentGrid,
    token: &Token,
    tree: &APTree,
    world: &World,
    tau: f64,
) -> Result<AttentionMap> {
    let field = QueryField::build(z, tree, world)?;
    let key = token_key(token, tree, world)?;
    Ok(field.map_for_key(&key, tau))
}

/// Maps of every token, grouped per phrase in tree order.
pub fn ap_token_maps(
    z: &LatentGrid,
    tree: &APTree,
    world: &World,
    tau: f64,
) -> Result<Vec<Vec<AttentionMap>>> {
    let field = QueryField::build(z, tree, world)?;
    tree.aps
        .iter()
        .map(|ap| {
            ap.adjectives
                .iter()
                .chain(core::iter::once(&ap.noun))
                .map(|tok| Ok(field.map_for_key(&token_key(tok, tree, world)?, tau)))
                .collect()
        })
        .collect()
}

/// Jensen–Shannon divergence with natural logarithm: ½KL(p‖m) + ½KL(q‖m)
/// with m the midpoint; zero-probability entries follow 0·log 0 = 0.
pub fn js_divergence(p: &AttentionMap, q: &AttentionMap) -> Result<f64> {
    p.validate()?;
    q.validate()?;
    Ok(js_unchecked(p, q))
}

fn js_unchecked(p: &AttentionMap, q: &AttentionMap) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.probs.iter().zip(&q.probs) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            total += 0.5 * pi * ln(pi / mi);
        }
        if qi > 0.0 {
            total += 0.5 * qi * ln(qi / mi);
        }
    }
    total
}

/// Internal structural similarity of one phrase: sum of JS divergences over
/// all unordered pairs of its token maps. Noun-only phrases score 0.
pub fn d_is(z: &LatentGrid, ap_index: usize, tree: &APTree, world: &World, tau: f64) -> Result<f64> {
    let maps = ap_token_maps(z, tree, world, tau)?;
    Ok(d_is_from_maps(&maps[ap_index]))
}

/// Pairwise JS sum over a phrase's already-computed token maps.
pub fn d_is_from_maps(maps: &[AttentionMap]) -> f64 {
    let mut total = 0.0;
    for a in 0..maps.len() {
        for b in a + 1..maps.len() {
            total += js_unchecked(&maps[a], &maps[b]);
        }
    }
    total
}

/// Semantic-bundle loss: sum of [`d_is`] over every phrase.
pub fn l_bundle(z: &LatentGrid, tree: &APTree, world: &World, tau: f64) -> Result<f64> {
    let maps = ap_token_maps(z, tree, world, tau)?;
    Ok(maps.iter().map(|m| d_is_from_maps(m)).sum())
}

/// Bundle loss and its analytic gradient through softmax and the query
/// colors. `active` restricts the loss to a subset of phrases (editing treats
/// injected phrases as constants); `None` means all phrases.
pub fn l_bundle_with_grad(
    z: &LatentGrid,
    tree: &APTree,
    world: &World,
    tau: f64,
    active: Option<&[bool]>,
) -> Result<(f64, LatentGrid)> {
    let field = QueryField::build(z, tree, world)?;
    let s = field.logit_scale(tau);
    let mut value = 0.0;
    let mut grad = LatentGrid::zeros();
    for (i, ap) in tree.aps.iter().enumerate() {
        if let Some(mask) = active {
            if !mask[i] {
                continue;
            }
        }
        let tokens: Vec<&Token> =
            ap.adjectives.iter().chain(core::iter::once(&ap.noun)).collect();
        if tokens.len() < 2 {
            continue;
        }
        let keys: Vec<TokenKey> =
            tokens.iter().map(|t| token_key(t, tree, world)).collect::<Result<_>>()?;
        let maps: Vec<AttentionMap> =
            keys.iter().map(|k| field.map_for_key(k, tau)).collect();
        // dL/dmap accumulated over this phrase's pairs.
        let mut dmap = vec![vec![0.0; LATENT_PIXELS]; maps.len()];
        for a in 0..maps.len() {
            for b in a + 1..maps.len() {
                value += js_unchecked(&maps[a], &maps[b]);
                for p in 0..LATENT_PIXELS {
                    let pa = maps[a].probs[p];
                    let pb = maps[b].probs[p];
                    let mid = 0.5 * (pa + pb);
                    if pa > 0.0 {
                        dmap[a][p] += 0.5 * ln(pa / mid);
                    }
                    if pb > 0.0 {
                        dmap[b][p] += 0.5 * ln(pb / mid);
                    }
                }
            }
        }
        // Softmax Jacobian, then the query color channels (∂q_rgb/∂z = I).
        for (k, map) in maps.iter().enumerate() {
            let inner: f64 =
                map.probs.iter().zip(&dmap[k]).map(|(&m, &g)| m * g).sum();
            let key = &keys[k];
            if key.color == [0.0; 3] {
                continue; // map independent of z
            }
            for p in 0..LATENT_PIXELS {
                let dl = map.probs[p] * (dmap[k][p] - inner) / s;
                let y = p / LATENT;
                let x = p % LATENT;
                let mut g = grad.get(y, x);
                g[0] += dl * key.color[0];
                g[1] += dl * key.color[1];
                g[2] += dl * key.color[2];
                grad.set(y, x, g);
            }
        }
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite { context: "bundle gradient" });
    }
    Ok((value, grad))
}

/// One semantic-bundle guidance step: latent descent on the bundle loss,
/// `z' = ẑ − β·∇L`.
pub fn bundle_guidance_step(
    z: &LatentGrid,
    tree: &APTree,
    world: &World,
    tau: f64,
    beta: f64,
) -> Result<crate::alignment::GuidedStep> {
    let (value, grad) = l_bundle_with_grad(z, tree, world, tau, None)?;
    if beta == 0.0 {
        return Ok(crate::alignment::GuidedStep {
            latent: z.clone(),
            loss: value,
            shift_norm: 0.0,
        });
    }
    let latent = z.axpy(-beta, &grad);
    if !latent.is_finite() {
        return Err(Error::NonFinite { context: "bundle guidance step" });
    }
    Ok(crate::alignment::GuidedStep { latent, loss: value, shift_norm: beta * grad.norm() })
}

/// Threshold a map at the given percentile of its entries; ties at the
/// threshold are included, so a uniform map binarizes to all-true.
pub fn binarize(map: &AttentionMap, percentile: f64) -> BinaryMask {
    debug_assert!(percentile > 0.0 && percentile < 1.0);
    let mut sorted = map.probs.clone();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("maps are finite"));
    let n = sorted.len();
    let k = {
        let raw = libm::ceil(percentile * n as f64) as usize;
        raw.min(n - 1)
    };
    let threshold = sorted[k];
    let mut mask = BinaryMask::empty();
    for (i, &p) in map.probs.iter().enumerate() {
        if p >= threshold {
            mask.set(i, true);
        }
    }
    mask
}

/// Union of all masks (boolean OR, the blend-relevant region) and its
/// complement (the region held fixed during editing).
pub fn blended_mask(
    masks_old: &[BinaryMask],
    masks_new: &[BinaryMask],
) -> Result<(BinaryMask, BinaryMask)> {
    let mut relevant = BinaryMask::empty();
    for m in masks_old.iter().chain(masks_new) {
        relevant = relevant.or(m)?;
    }
    let keep = relevant.not();
    Ok((relevant, keep))
}
