//! Synthetic parametric garment world.
//!
//! Each garment category owns a fixed layout template: disjoint part masks on
//! the 64×64 canvas, all aligned to the 4×4 latent blocks so that encoding
//! and decoding renders is lossless. Scenes assign a color (and optionally a
//! length or stripe pattern) to parts; rendering, template segmentation and
//! scene inference are exact inverses on every enumerable scene.

use alloc::string::ToString;
use alloc::vec::Vec;
use alloc::{format, vec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{pool, CanvasMask, Image, LatentGrid, Rgb, WHITE};
use crate::math;
use crate::prompt::Lexicon;

/// RGB distance from white below which a pixel counts as background.
pub const EPS_BG: f64 = 0.1;
/// Colored-pixel fraction below which a part is declared absent.
pub const ABSENT_COVERAGE: f64 = 0.25;
/// Colored-pixel fraction at or above which a length-capable part reads long.
pub const LONG_COVERAGE: f64 = 0.75;
/// Smallest permitted part mask, in pixels.
pub const MIN_MASK_PIXELS: usize = 16;
/// Stripe band period in canvas rows (half on, half off).
pub const STRIPE_PERIOD: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartId {
    Body,
    Sleeves,
    Collar,
    Hood,
    Pockets,
    Buttons,
    Belt,
}

impl PartId {
    pub const ALL: [PartId; 7] = [
        PartId::Body,
        PartId::Sleeves,
        PartId::Collar,
        PartId::Hood,
        PartId::Pockets,
        PartId::Buttons,
        PartId::Belt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PartId::Body => "body",
            PartId::Sleeves => "sleeves",
            PartId::Collar => "collar",
            PartId::Hood => "hood",
            PartId::Pockets => "pockets",
            PartId::Buttons => "buttons",
            PartId::Belt => "belt",
        }
    }

    pub fn from_name(name: &str) -> Option<PartId> {
        PartId::ALL.iter().copied().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Jacket,
    Sweater,
    Shirt,
    Dress,
}

impl Category {
    pub const ALL: [Category; 4] =
        [Category::Jacket, Category::Sweater, Category::Shirt, Category::Dress];

    pub fn name(self) -> &'static str {
        match self {
            Category::Jacket => "jacket",
            Category::Sweater => "sweater",
            Category::Shirt => "shirt",
            Category::Dress => "dress",
        }
    }

    pub fn from_name(name: &str) -> Option<Category> {
        Category::ALL.iter().copied().find(|c| c.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthKind {
    Long,
    Short,
}

impl LengthKind {
    /// Target colored-pixel fraction of the part mask.
    pub fn coverage(self) -> f64 {
        match self {
            LengthKind::Long => 1.0,
            LengthKind::Short => 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Plain,
    Striped,
}

/// Whether the length attribute renders and round-trips for this part.
pub fn length_capable(category: Category, part: PartId) -> bool {
    part == PartId::Sleeves || (category == Category::Dress && part == PartId::Body)
}

/// Disjoint part masks of one garment category.
#[derive(Debug, Clone)]
pub struct LayoutTemplate {
    pub category: Category,
    parts: Vec<(PartId, CanvasMask)>,
}

impl LayoutTemplate {
    pub fn new(category: Category, parts: Vec<(PartId, CanvasMask)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidConfig {
                detail: format!("template {} has no parts", category.name()),
            });
        }
        for (i, (pa, ma)) in parts.iter().enumerate() {
            if ma.count() < MIN_MASK_PIXELS {
                return Err(Error::InvalidConfig {
                    detail: format!("mask for {} has fewer than {MIN_MASK_PIXELS} pixels", pa.name()),
                });
            }
            for (pb, mb) in &parts[i + 1..] {
                if pa == pb {
                    return Err(Error::InvalidConfig {
                        detail: format!("duplicate part {} in template", pa.name()),
                    });
                }
                if ma.intersects(mb) {
                    return Err(Error::InvalidConfig {
                        detail: format!("masks for {} and {} overlap", pa.name(), pb.name()),
                    });
                }
            }
        }
        Ok(Self { category, parts })
    }

    pub fn parts(&self) -> &[(PartId, CanvasMask)] {
        &self.parts
    }

    pub fn part_ids(&self) -> impl Iterator<Item = PartId> + '_ {
        self.parts.iter().map(|(p, _)| *p)
    }

    pub fn mask_of(&self, part: PartId) -> Option<&CanvasMask> {
        self.parts.iter().find(|(p, _)| *p == part).map(|(_, m)| m)
    }

    pub fn part_index(&self, part: PartId) -> Option<usize> {
        self.parts.iter().position(|(p, _)| *p == part)
    }

    /// For each latent pixel, the index of the part whose mask holds it.
    pub fn latent_membership(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; crate::grid::LATENT_PIXELS];
        for (idx, (_, mask)) in self.parts.iter().enumerate() {
            let blocks = mask.to_latent_blocks();
            for (i, slot) in owner.iter_mut().enumerate() {
                if blocks.get(i) && slot.is_none() {
                    *slot = Some(idx);
                }
            }
        }
        owner
    }
}

fn rect_mask(y0: usize, y1: usize, x0: usize, x1: usize) -> CanvasMask {
    let mut m = CanvasMask::empty();
    m.set_rect(y0, y1, x0, x1);
    m
}

fn jacket_template() -> LayoutTemplate {
    let mut body = rect_mask(8, 48, 20, 44);
    body.clear_rect(36, 44, 20, 28);
    body.clear_rect(36, 44, 36, 44);
    let mut sleeves = rect_mask(8, 40, 8, 16);
    sleeves.set_rect(8, 40, 48, 56);
    let collar = rect_mask(0, 4, 24, 40);
    let mut pockets = rect_mask(36, 44, 20, 28);
    pockets.set_rect(36, 44, 36, 44);
    LayoutTemplate::new(
        Category::Jacket,
        vec![
            (PartId::Body, body),
            (PartId::Sleeves, sleeves),
            (PartId::Collar, collar),
            (PartId::Pockets, pockets),
        ],
    )
    .expect("builtin jacket template is valid")
}

fn sweater_template() -> LayoutTemplate {
    let body = rect_mask(8, 48, 20, 44);
    let mut sleeves = rect_mask(8, 40, 8, 16);
    sleeves.set_rect(8, 40, 48, 56);
    let hood = rect_mask(0, 8, 24, 40);
    LayoutTemplate::new(
        Category::Sweater,
        vec![(PartId::Body, body), (PartId::Sleeves, sleeves), (PartId::Hood, hood)],
    )
    .expect("builtin sweater template is valid")
}

fn shirt_template() -> LayoutTemplate {
    let mut body = rect_mask(8, 48, 20, 44);
    body.clear_rect(12, 44, 28, 32);
    let mut sleeves = rect_mask(8, 40, 8, 16);
    sleeves.set_rect(8, 40, 48, 56);
    let collar = rect_mask(0, 4, 24, 40);
    let buttons = rect_mask(12, 44, 28, 32);
    LayoutTemplate::new(
        Category::Shirt,
        vec![
            (PartId::Body, body),
            (PartId::Sleeves, sleeves),
            (PartId::Collar, collar),
            (PartId::Buttons, buttons),
        ],
    )
    .expect("builtin shirt template is valid")
}

fn dress_template() -> LayoutTemplate {
    let mut body = rect_mask(8, 56, 20, 44);
    body.clear_rect(28, 32, 20, 44);
    let collar = rect_mask(0, 4, 24, 40);
    let belt = rect_mask(28, 32, 20, 44);
    LayoutTemplate::new(
        Category::Dress,
        vec![(PartId::Body, body), (PartId::Collar, collar), (PartId::Belt, belt)],
    )
    .expect("builtin dress template is valid")
}

/// Lexicon plus the layout templates of every category.
#[derive(Debug, Clone)]
pub struct World {
    pub lexicon: Lexicon,
    templates: Vec<LayoutTemplate>,
}

impl World {
    pub fn standard() -> Self {
        Self {
            lexicon: Lexicon::standard(),
            templates: vec![
                jacket_template(),
                sweater_template(),
                shirt_template(),
                dress_template(),
            ],
        }
    }

    pub fn with_templates(lexicon: Lexicon, templates: Vec<LayoutTemplate>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::InvalidConfig { detail: "no templates".to_string() });
        }
        Ok(Self { lexicon, templates })
    }

    pub fn template(&self, category: Category) -> Result<&LayoutTemplate> {
        self.templates
            .iter()
            .find(|t| t.category == category)
            .ok_or_else(|| Error::UnknownCategory { name: category.name().to_string() })
    }

    pub fn templates(&self) -> &[LayoutTemplate] {
        &self.templates
    }

    /// Replace the template of `category`, keeping the others.
    pub fn set_template(&mut self, template: LayoutTemplate) {
        if let Some(slot) =
            self.templates.iter_mut().find(|t| t.category == template.category)
        {
            *slot = template;
        } else {
            self.templates.push(template);
        }
    }
}

/// Attribute assignment for one part of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartState {
    pub part: PartId,
    pub color: Rgb,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<LengthKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<PatternKind>,
}

/// Ground-truth parametric garment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarmentScene {
    pub category: Category,
    pub parts: Vec<PartState>,
}

impl GarmentScene {
    pub fn part(&self, id: PartId) -> Option<&PartState> {
        self.parts.iter().find(|p| p.part == id)
    }
}

/// Render a scene onto a white canvas.
///
/// Parts fill their template mask with the scene color. A short length keeps
/// only the top half of the mask's row extent; stripes darken alternating
/// 4-row bands to half intensity.
pub fn render(scene: &GarmentScene, world: &World) -> Result<Image> {
    let template = world.template(scene.category)?;
    if scene.parts.is_empty() {
        return Err(Error::InvalidScene { detail: "empty parts list".to_string() });
    }
    for (i, state) in scene.parts.iter().enumerate() {
        if template.mask_of(state.part).is_none() {
            return Err(Error::InvalidScene {
                detail: format!(
                    "part {} not in {} template",
                    state.part.name(),
                    scene.category.name()
                ),
            });
        }
        if scene.parts[i + 1..].iter().any(|s| s.part == state.part) {
            return Err(Error::InvalidScene {
                detail: format!("duplicate part {}", state.part.name()),
            });
        }
        if state.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidScene {
                detail: format!("color for {} outside [0,1]", state.part.name()),
            });
        }
    }
    let mut image = Image::white();
    for state in &scene.parts {
        let mask = template.mask_of(state.part).expect("validated above");
        let region = match state.length {
            Some(LengthKind::Short) => {
                let (lo, hi) = mask.row_extent().expect("mask is non-empty");
                let cut = lo + (hi + 1 - lo) / 2;
                mask.restricted_above(cut)
            }
            _ => mask.clone(),
        };
        for (y, x) in region.pixels() {
            let mut color = state.color;
            if state.pattern == Some(PatternKind::Striped)
                && (y / (STRIPE_PERIOD / 2)) % 2 == 1
            {
                color = [color[0] * 0.5, color[1] * 0.5, color[2] * 0.5];
            }
            image.set(y, x, color);
        }
    }
    Ok(image)
}

/// One part image with its mask, as produced by [`segment`].
#[derive(Debug, Clone)]
pub struct PartView {
    pub part: PartId,
    pub image: Image,
    pub mask: CanvasMask,
}

/// Full image plus its template-segmented part images.
#[derive(Debug, Clone)]
pub struct PartSet {
    pub category: Category,
    pub full_image: Image,
    pub parts: Vec<PartView>,
}

/// Segment an image by the category's fixed template masks. Works on any
/// pixel content, including pure noise and decoded latents.
pub fn segment(image: &Image, category: Category, world: &World) -> Result<PartSet> {
    let template = world.template(category)?;
    let parts = template
        .parts()
        .iter()
        .map(|(part, mask)| {
            let mut view = Image::white();
            for (y, x) in mask.pixels() {
                view.set(y, x, image.get(y, x));
            }
            PartView { part: *part, image: view, mask: mask.clone() }
        })
        .collect();
    Ok(PartSet { category, full_image: image.clone(), parts })
}

/// Hard per-pixel background test: strictly farther than `EPS_BG` from white.
pub fn is_colored(px: Rgb) -> bool {
    math::dist2(px, WHITE) > EPS_BG * EPS_BG
}

/// Colored-pixel fraction and mean colored color over a mask.
fn mask_stats(image: &Image, mask: &CanvasMask) -> (f64, Option<Rgb>) {
    let mut colored = 0usize;
    let mut total = 0usize;
    let mut acc = [0.0; 3];
    for (y, x) in mask.pixels() {
        total += 1;
        let px = image.get(y, x);
        if is_colored(px) {
            colored += 1;
            acc[0] += px[0];
            acc[1] += px[1];
            acc[2] += px[2];
        }
    }
    if total == 0 || colored == 0 {
        return (0.0, None);
    }
    let n = colored as f64;
    (colored as f64 / total as f64, Some([acc[0] / n, acc[1] / n, acc[2] / n]))
}

/// Invert an image to a scene: per template part, the mean colored color
/// snapped to the nearest lexicon color, length from colored coverage, and
/// absence when coverage falls below [`ABSENT_COVERAGE`].
pub fn infer_scene(image: &Image, category: Category, world: &World) -> Result<GarmentScene> {
    let template = world.template(category)?;
    let mut parts = Vec::new();
    for (part, mask) in template.parts() {
        let (coverage, mean) = mask_stats(image, mask);
        if coverage < ABSENT_COVERAGE {
            continue;
        }
        let mean = mean.expect("coverage above threshold implies colored pixels");
        let (_, _, snapped) = world
            .lexicon
            .snap_color(mean)
            .ok_or_else(|| Error::InvalidConfig { detail: "lexicon has no colors".to_string() })?;
        let length = if length_capable(category, *part) {
            Some(if coverage >= LONG_COVERAGE { LengthKind::Long } else { LengthKind::Short })
        } else {
            None
        };
        parts.push(PartState { part: *part, color: snapped, length, pattern: None });
    }
    Ok(GarmentScene { category, parts })
}

/// A canonical scene with the latent of its rendering.
#[derive(Debug, Clone)]
pub struct Prototype {
    pub scene: GarmentScene,
    pub latent: LatentGrid,
}

/// Enumerated prototype latents backing the analytic denoiser.
#[derive(Debug, Clone)]
pub struct PrototypeBank {
    pub entries: Vec<Prototype>,
}

impl PrototypeBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Enumerate all color × length scenes for the given categories, capped per
/// category by seeded subsampling, and render/encode each.
///
/// Enumeration is part-major (first template part varies slowest) with colors
/// in lexicon order and lengths ordered long, short.
pub fn build_prototype_bank(
    world: &World,
    categories: &[Category],
    cap_per_category: usize,
    seed: u64,
) -> Result<PrototypeBank> {
    let colors: Vec<Rgb> = world.lexicon.colors().map(|(_, rgb)| rgb).collect();
    if colors.is_empty() || cap_per_category == 0 {
        return Err(Error::EmptyBank);
    }
    let mut entries = Vec::new();
    for &category in categories {
        let template = world.template(category)?;
        // Per-part option lists: color-major, then length.
        let mut options: Vec<Vec<(Rgb, Option<LengthKind>)>> = Vec::new();
        for (part, _) in template.parts() {
            let lengths: &[Option<LengthKind>] = if length_capable(category, *part) {
                &[Some(LengthKind::Long), Some(LengthKind::Short)]
            } else {
                &[None]
            };
            let mut opts = Vec::new();
            for &color in &colors {
                for &len in lengths {
                    opts.push((color, len));
                }
            }
            options.push(opts);
        }
        let total: usize = options.iter().map(Vec::len).product();
        if total == 0 {
            continue;
        }
        let chosen: Vec<usize> = if total > cap_per_category {
            math::sample_indices(total, cap_per_category, seed)
        } else {
            (0..total).collect()
        };
        for index in chosen {
            // Mixed-radix decode, first part most significant.
            let mut rem = index;
            let mut digits = vec![0usize; options.len()];
            for (slot, opts) in options.iter().enumerate().rev() {
                digits[slot] = rem % opts.len();
                rem /= opts.len();
            }
            let parts = template
                .parts()
                .iter()
                .zip(&digits)
                .map(|((part, _), &d)| {
                    let (color, length) = options[template.part_index(*part).unwrap()][d];
                    PartState { part: *part, color, length, pattern: None }
                })
                .collect();
            let scene = GarmentScene { category, parts };
            let image = render(&scene, world)?;
            entries.push(Prototype { scene, latent: pool(&image) });
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyBank);
    }
    Ok(PrototypeBank { entries })
}
