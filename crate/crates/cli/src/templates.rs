//! Layout template JSON loading: `{category: {part: {runs: [...]}}}` with
//! row-major run-length encoding starting on cleared pixels.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use tailor_core::grid::CanvasMask;
use tailor_core::world::{Category, LayoutTemplate, PartId, World};

#[derive(Deserialize)]
struct RleMask {
    runs: Vec<usize>,
}

type TemplateFile = BTreeMap<String, BTreeMap<String, RleMask>>;

/// Replace templates of the listed categories with masks from a JSON file.
pub fn apply_template_file(world: &mut World, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading templates {}", path.display()))?;
    let file: TemplateFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for (cat_name, parts) in file {
        let Some(category) = Category::from_name(&cat_name) else {
            bail!("unknown category `{cat_name}` in template file");
        };
        let mut masks: Vec<(PartId, CanvasMask)> = Vec::new();
        // Canonical part order keeps downstream indexing deterministic.
        for part in PartId::ALL {
            if let Some(rle) = parts.get(part.name()) {
                let mask = CanvasMask::from_runs(&rle.runs)
                    .with_context(|| format!("mask for {cat_name}/{}", part.name()))?;
                masks.push((part, mask));
            }
        }
        for name in parts.keys() {
            if PartId::from_name(name).is_none() {
                bail!("unknown part `{name}` in template for `{cat_name}`");
            }
        }
        let template = LayoutTemplate::new(category, masks)
            .with_context(|| format!("template for `{cat_name}`"))?;
        world.set_template(template);
    }
    Ok(())
}
