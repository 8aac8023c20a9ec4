//! Differentiable image↔phrase similarity oracle.
//!
//! Part images and attribute phrases embed into a small shared feature space
//! (masked mean color, colored coverage, part identity) and compare through
//! smooth distance kernels. The score is differentiable in the image pixels;
//! `grad_sim_image` is its exact analytic gradient and is checked against
//! central finite differences in the tests.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{CanvasMask, Image, Rgb, WHITE};
use crate::math::{self, exp, sigmoid};
use crate::prompt::{APTree, AttributePhrase, Lexicon};
use crate::world::{PartId, World, EPS_BG};

/// Color kernel width: sim color factor is exp(−‖Δc‖²/τ).
pub const TAU_COLOR: f64 = 0.5;
/// Coverage kernel width for the length/presence factor.
pub const TAU_LENGTH: f64 = 0.1;
/// Steepness of the smooth colored-pixel indicator (in squared distance).
pub const COVERAGE_KAPPA: f64 = 10.0;
/// White-anchor weight (as a fraction of the mask size) regularizing the
/// colored-weighted mean color, so empty regions read as background instead
/// of dividing by zero.
pub const MEAN_REG: f64 = 0.01;

/// Text-side features of one attribute phrase.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub part: PartId,
    /// Mean of the phrase's color adjectives, or neutral gray.
    pub color: Rgb,
    /// Requested coverage; `None` means "present", which scores like 1.0.
    pub length: Option<f64>,
}

/// Image-side features of one masked part region.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding {
    pub part: PartId,
    /// Colored-weighted mean color of the mask (background pixels carry
    /// almost no weight, so a short part reads as its fabric color rather
    /// than a white-diluted blend).
    pub mean_color: Rgb,
    /// Smooth colored-pixel fraction of the mask, in [0,1).
    pub coverage: f64,
}

pub fn embed_ap(ap: &AttributePhrase, lexicon: &Lexicon) -> TextEmbedding {
    TextEmbedding {
        part: ap.part,
        color: ap.color_target(lexicon),
        length: ap.length_target(lexicon).map(|k| k.coverage()),
    }
}

/// Smooth indicator that a pixel is colored (not background white).
///
/// A gentle logistic in squared distance, renormalized so an exactly white
/// pixel contributes 0 and lexicon colors contribute ~1. Gentleness keeps
/// finite-difference checks of the gradient tight.
fn colored_weight(px: Rgb) -> f64 {
    let u = math::dist2(px, WHITE);
    let s0 = sigmoid(-COVERAGE_KAPPA * EPS_BG * EPS_BG);
    (sigmoid(COVERAGE_KAPPA * (u - EPS_BG * EPS_BG)) - s0) / (1.0 - s0)
}

/// d(colored_weight)/du at squared distance u.
fn colored_weight_du(u: f64) -> f64 {
    let s0 = sigmoid(-COVERAGE_KAPPA * EPS_BG * EPS_BG);
    let s = sigmoid(COVERAGE_KAPPA * (u - EPS_BG * EPS_BG));
    COVERAGE_KAPPA * s * (1.0 - s) / (1.0 - s0)
}

pub fn embed_part(image: &Image, mask: &CanvasMask, part: PartId) -> Result<ImageEmbedding> {
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let reg = MEAN_REG * n as f64;
    // White anchor keeps the weighted mean defined on empty regions.
    let mut num = [reg * WHITE[0], reg * WHITE[1], reg * WHITE[2]];
    let mut den = reg;
    let mut coverage = 0.0;
    for (y, x) in mask.pixels() {
        let px = image.get(y, x);
        let w = colored_weight(px);
        num[0] += w * px[0];
        num[1] += w * px[1];
        num[2] += w * px[2];
        den += w;
        coverage += w;
    }
    Ok(ImageEmbedding {
        part,
        mean_color: [num[0] / den, num[1] / den, num[2] / den],
        coverage: coverage / n as f64,
    })
}

/// Similarity in [0,1]: zero across different parts, otherwise the product of
/// a color kernel and a coverage kernel. An unset length target scores
/// against full presence, so empty regions rank low for any phrase.
pub fn sim(v: &ImageEmbedding, w: &TextEmbedding) -> f64 {
    if v.part != w.part {
        return 0.0;
    }
    let cf = exp(-math::dist2(v.mean_color, w.color) / TAU_COLOR);
    let target = w.length.unwrap_or(1.0);
    let dl = v.coverage - target;
    cf * exp(-dl * dl / TAU_LENGTH)
}

/// Mean over phrases of the similarity between each phrase and its part's
/// template region. Phrases naming a part absent from the category's layout
/// contribute 0.
pub fn sim_full(image: &Image, tree: &APTree, world: &World) -> Result<f64> {
    let template = world.template(tree.category)?;
    let mut total = 0.0;
    for ap in &tree.aps {
        if let Some(mask) = template.mask_of(ap.part) {
            let v = embed_part(image, mask, ap.part)?;
            total += sim(&v, &embed_ap(ap, &world.lexicon));
        }
    }
    Ok(total / tree.aps.len() as f64)
}

/// Accumulate `scale · ∂sim/∂pixel` into `acc` for every masked pixel.
pub(crate) fn accumulate_grad_sim(
    image: &Image,
    mask: &CanvasMask,
    part: PartId,
    w: &TextEmbedding,
    scale: f64,
    acc: &mut Image,
) -> Result<()> {
    if part != w.part {
        return Ok(());
    }
    let v = embed_part(image, mask, part)?;
    let n = mask.count() as f64;
    let cf = exp(-math::dist2(v.mean_color, w.color) / TAU_COLOR);
    let target = w.length.unwrap_or(1.0);
    let dl = v.coverage - target;
    let lf = exp(-dl * dl / TAU_LENGTH);
    // ∂(cf·lf)/∂μ and ∂(cf·lf)/∂coverage.
    let dmu = [
        -2.0 / TAU_COLOR * (v.mean_color[0] - w.color[0]) * cf * lf,
        -2.0 / TAU_COLOR * (v.mean_color[1] - w.color[1]) * cf * lf,
        -2.0 / TAU_COLOR * (v.mean_color[2] - w.color[2]) * cf * lf,
    ];
    let dcov = cf * lf * (-2.0 / TAU_LENGTH) * dl;
    // Weighted-mean denominator D = Σ w_p + reg.
    let mut den = MEAN_REG * n;
    for (y, x) in mask.pixels() {
        den += colored_weight(image.get(y, x));
    }
    for (y, x) in mask.pixels() {
        let px = image.get(y, x);
        let u = math::dist2(px, WHITE);
        let wq = colored_weight(px);
        let wdu = colored_weight_du(u);
        let mut g = acc.get(y, x);
        for ch in 0..3 {
            // ∂w_q/∂px_{q,ch}, the only route through the smooth indicator.
            let dwq = wdu * 2.0 * (px[ch] - 1.0);
            // Quotient rule on μ = (Σ w p + reg·white)/D.
            let mut acc_ch = 0.0;
            for col in 0..3 {
                let dmu_dpx = (if col == ch { wq } else { 0.0 }
                    + (px[col] - v.mean_color[col]) * dwq)
                    / den;
                acc_ch += dmu[col] * dmu_dpx;
            }
            acc_ch += dcov * dwq / n;
            g[ch] += scale * acc_ch;
        }
        acc.set(y, x, g);
    }
    Ok(())
}

/// Analytic gradient of [`sim`] with respect to the image, zero outside the
/// mask.
pub fn grad_sim_image(
    image: &Image,
    mask: &CanvasMask,
    part: PartId,
    w: &TextEmbedding,
) -> Result<Image> {
    let mut acc = Image::filled([0.0, 0.0, 0.0]);
    accumulate_grad_sim(image, mask, part, w, 1.0, &mut acc)?;
    Ok(acc)
}

/// Convenience: embeddings of every template part of a category.
pub fn embed_all_parts(
    image: &Image,
    category: crate::world::Category,
    world: &World,
) -> Result<Vec<ImageEmbedding>> {
    let template = world.template(category)?;
    template
        .parts()
        .iter()
        .map(|(part, mask)| embed_part(image, mask, *part))
        .collect()
}

/// [`sim_full`] evaluated from precomputed part embeddings (used by the
/// denoiser's conditioning prior, where renders are embedded once).
pub fn sim_full_from_embeddings(
    embeddings: &[ImageEmbedding],
    tree: &APTree,
    lexicon: &Lexicon,
) -> f64 {
    let mut total = 0.0;
    for ap in &tree.aps {
        if let Some(v) = embeddings.iter().find(|e| e.part == ap.part) {
            total += sim(v, &embed_ap(ap, lexicon));
        }
    }
    total / tree.aps.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CANVAS, NEUTRAL};
    use crate::prompt::parse;
    use crate::world::{render, Category, GarmentScene, PartState, World};
    use alloc::vec;

    fn world() -> World {
        World::standard()
    }

    fn square_mask() -> CanvasMask {
        let mut m = CanvasMask::empty();
        m.set_rect(0, 8, 0, 8);
        m
    }

    #[test]
    fn embed_part_uniform_red() {
        let mut img = Image::white();
        for y in 0..8 {
            for x in 0..8 {
                img.set(y, x, [1.0, 0.0, 0.0]);
            }
        }
        let e = embed_part(&img, &square_mask(), PartId::Body).unwrap();
        // The white anchor pulls the weighted mean toward background by at
        // most MEAN_REG.
        assert!((e.mean_color[0] - 1.0).abs() < 1e-6);
        assert!(e.mean_color[1] < MEAN_REG && e.mean_color[2] < MEAN_REG);
        assert!((e.coverage - 1.0).abs() < 1e-6);
    }

    #[test]
    fn embed_part_white_region_has_zero_coverage() {
        let e = embed_part(&Image::white(), &square_mask(), PartId::Body).unwrap();
        assert_eq!(e.coverage, 0.0);
    }

    #[test]
    fn embed_part_half_colored() {
        let mut img = Image::white();
        for y in 0..4 {
            for x in 0..8 {
                img.set(y, x, [1.0, 0.0, 0.0]);
            }
        }
        let e = embed_part(&img, &square_mask(), PartId::Body).unwrap();
        assert!((e.coverage - 0.5).abs() < 1e-6, "coverage {}", e.coverage);
    }

    #[test]
    fn embed_part_rejects_empty_mask() {
        assert_eq!(
            embed_part(&Image::white(), &CanvasMask::empty(), PartId::Body),
            Err(Error::EmptyMask)
        );
    }

    #[test]
    fn sim_exact_match_is_near_one() {
        let v = ImageEmbedding { part: PartId::Body, mean_color: [1.0, 0.0, 0.0], coverage: 1.0 };
        let w = TextEmbedding { part: PartId::Body, color: [1.0, 0.0, 0.0], length: None };
        assert!(sim(&v, &w) >= 0.99);
        let w2 = TextEmbedding { part: PartId::Body, color: [1.0, 0.0, 0.0], length: Some(1.0) };
        assert!(sim(&v, &w2) >= 0.99);
    }

    #[test]
    fn sim_at_max_color_distance_matches_kernel() {
        let v = ImageEmbedding { part: PartId::Body, mean_color: [0.0, 0.0, 0.0], coverage: 1.0 };
        let w = TextEmbedding { part: PartId::Body, color: [1.0, 1.0, 1.0], length: None };
        // exp(−3/0.5) with a unity coverage factor target miss of (1−1)=… the
        // coverage here is 1 and target defaults to 1, so only the color kernel acts.
        let expected = exp(-3.0 / TAU_COLOR);
        assert!((sim(&v, &w) - expected).abs() < 1e-12);
        assert!((expected - 0.0024787521766663585).abs() < 1e-12);
    }

    #[test]
    fn sim_is_zero_across_parts() {
        let v = ImageEmbedding { part: PartId::Body, mean_color: [1.0, 0.0, 0.0], coverage: 1.0 };
        let w = TextEmbedding { part: PartId::Collar, color: [1.0, 0.0, 0.0], length: None };
        assert_eq!(sim(&v, &w), 0.0);
    }

    #[test]
    fn sim_decreases_monotonically_in_color_distance() {
        let w = TextEmbedding { part: PartId::Body, color: [0.2, 0.3, 0.4], length: None };
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let d = k as f64 * 0.05;
            let v = ImageEmbedding {
                part: PartId::Body,
                mean_color: [0.2 + d, 0.3, 0.4],
                coverage: 1.0,
            };
            let s = sim(&v, &w);
            assert!(s < last, "sim must strictly decrease");
            assert!((0.0..=1.0).contains(&s));
            last = s;
        }
    }

    #[test]
    fn sim_full_on_matching_render_is_high_and_low_on_blank() {
        let w = world();
        let tree = parse("red jacket with blue collar", &w.lexicon).unwrap();
        let scene = GarmentScene {
            category: Category::Jacket,
            parts: vec![
                PartState { part: PartId::Body, color: [1.0, 0.0, 0.0], length: None, pattern: None },
                PartState { part: PartId::Collar, color: [0.0, 0.0, 1.0], length: None, pattern: None },
            ],
        };
        let img = render(&scene, &w).unwrap();
        assert!(sim_full(&img, &tree, &w).unwrap() >= 0.99);
        assert!(sim_full(&Image::white(), &tree, &w).unwrap() <= 0.1);
        // Adjective-free prompts must also score low on a blank canvas.
        let bare = parse("sweater", &w.lexicon).unwrap();
        assert!(sim_full(&Image::white(), &bare, &w).unwrap() <= 0.1);
    }

    #[test]
    fn sim_full_of_single_phrase_equals_sim() {
        let w = world();
        let tree = parse("green sweater", &w.lexicon).unwrap();
        let scene = GarmentScene {
            category: Category::Sweater,
            parts: vec![PartState {
                part: PartId::Body,
                color: [0.0, 0.6, 0.0],
                length: None,
                pattern: None,
            }],
        };
        let img = render(&scene, &w).unwrap();
        let template = w.template(Category::Sweater).unwrap();
        let v = embed_part(&img, template.mask_of(PartId::Body).unwrap(), PartId::Body).unwrap();
        let direct = sim(&v, &embed_ap(&tree.aps[0], &w.lexicon));
        assert!((sim_full(&img, &tree, &w).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn gradient_vanishes_at_exact_target() {
        let w = world();
        let scene = GarmentScene {
            category: Category::Sweater,
            parts: vec![PartState {
                part: PartId::Body,
                color: [0.0, 0.6, 0.0],
                length: None,
                pattern: None,
            }],
        };
        let img = render(&scene, &w).unwrap();
        let template = w.template(Category::Sweater).unwrap();
        let mask = template.mask_of(PartId::Body).unwrap();
        // Aim at the region's own embedding: sim is maximal there, so the
        // gradient must vanish (the coverage term is ~1e-9 away).
        let v = embed_part(&img, mask, PartId::Body).unwrap();
        let te = TextEmbedding { part: PartId::Body, color: v.mean_color, length: None };
        let g = grad_sim_image(&img, mask, PartId::Body, &te).unwrap();
        let norm: f64 = g.raw().iter().map(|v| v * v).sum::<f64>();
        assert!(math::sqrt(norm) < 1e-6, "gradient norm {}", math::sqrt(norm));
    }

    #[test]
    fn gradient_is_zero_outside_mask() {
        let w = world();
        let template = w.template(Category::Sweater).unwrap();
        let mask = template.mask_of(PartId::Body).unwrap();
        let mut img = Image::white();
        for y in 0..CANVAS {
            for x in 0..CANVAS {
                img.set(y, x, [0.3, 0.8, 0.1]);
            }
        }
        let te = TextEmbedding { part: PartId::Body, color: [1.0, 0.0, 0.0], length: Some(0.5) };
        let g = grad_sim_image(&img, mask, PartId::Body, &te).unwrap();
        for y in 0..CANVAS {
            for x in 0..CANVAS {
                if !mask.contains(y, x) {
                    assert_eq!(g.get(y, x), [0.0, 0.0, 0.0]);
                }
            }
        }
    }

    /// Central finite differences over every masked pixel channel.
    fn fd_check(img: &Image, mask: &CanvasMask, te: &TextEmbedding) -> f64 {
        let h = 1e-4;
        let analytic = grad_sim_image(img, mask, PartId::Body, te).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        let eval = |image: &Image| {
            let v = embed_part(image, mask, PartId::Body).unwrap();
            sim(&v, te)
        };
        for (y, x) in mask.pixels() {
            for ch in 0..3 {
                let mut plus = img.clone();
                let mut px = plus.get(y, x);
                px[ch] += h;
                plus.set(y, x, px);
                let mut minus = img.clone();
                let mut mx = minus.get(y, x);
                mx[ch] -= h;
                minus.set(y, x, mx);
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.get(y, x)[ch];
                num += (a - fd) * (a - fd);
                den += fd * fd;
            }
        }
        math::sqrt(num) / math::sqrt(den).max(1e-12)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut src = math::GaussianSource::new(33);
        let mut mask = CanvasMask::empty();
        mask.set_rect(4, 12, 4, 12);
        for trial in 0..10 {
            let mut img = Image::white();
            for (y, x) in mask.pixels() {
                img.set(
                    y,
                    x,
                    [
                        0.5 + 0.8 * src.normal(),
                        0.5 + 0.8 * src.normal(),
                        0.5 + 0.8 * src.normal(),
                    ],
                );
            }
            let te = TextEmbedding {
                part: PartId::Body,
                color: [0.9, 0.1, 0.2],
                length: if trial % 2 == 0 { Some(0.5) } else { None },
            };
            let rel = fd_check(&img, &mask, &te);
            assert!(rel <= 1e-4, "trial {trial}: rel err {rel}");
        }
    }

    #[test]
    fn embed_ap_aggregates_features() {
        let w = world();
        let tree = parse("navy blue jacket with long sleeves", &w.lexicon).unwrap();
        let body = embed_ap(&tree.aps[0], &w.lexicon);
        assert_eq!(body.color, [0.025, 0.025, 0.675]);
        assert_eq!(body.length, None);
        let sleeves = embed_ap(&tree.aps[1], &w.lexicon);
        assert_eq!(sleeves.color, NEUTRAL);
        assert_eq!(sleeves.length, Some(1.0));
    }
}
