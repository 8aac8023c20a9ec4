//! Command-line interface for the garment diffusion pipeline.
//!
//! Exit codes: 0 success, 2 invalid input (arguments, config, prompts,
//! unreadable files), 3 numeric failure during computation.

mod config;
mod pngio;
mod report;
mod templates;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use tailor_core::diffusion::{sample, Engine, SamplerConfig};
use tailor_core::edit::{manipulate, EditOptions, EditRequest};
use tailor_core::error::Error as CoreError;
use tailor_core::eval::{edit_realized, run_suite, SuiteSpec};
use tailor_core::grid::LATENT;
use tailor_core::prompt::parse;
use tailor_core::world::{infer_scene, segment, World};

use config::ConfigOverrides;

#[derive(Parser)]
#[command(name = "tailor", version, about = "Deterministic text-to-garment diffusion sandbox")]
struct Cli {
    #[command(flatten)]
    overrides: ConfigOverrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a prompt into its attribute-phrase tree (JSON on stdout).
    Parse {
        #[arg(long)]
        prompt: String,
    },
    /// Synthesize an image for a prompt.
    Synth {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        seed: u64,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
        /// Optional trajectory record JSON path.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Match an image's parts against a prompt (JSON on stdout).
    Match {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        image: PathBuf,
    },
    /// Render per-token attention maps at one step as a grayscale grid.
    Attmap {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        seed: u64,
        /// Timestep to visualize (T down to 1).
        #[arg(long)]
        step: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Edit a generated image by substituting attribute phrases.
    Manipulate {
        /// Original prompt.
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        new_prompt: String,
        #[arg(long)]
        seed: u64,
        /// Edited image PNG path.
        #[arg(long)]
        out: PathBuf,
        /// Optional PNG of the reproduced original.
        #[arg(long)]
        out_original: Option<PathBuf>,
        /// Optional edit report JSON path.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Disable the region-consistency blend (ablation).
        #[arg(long)]
        no_blend: bool,
    },
    /// Run a synthesis/edit suite under the four guidance ablations.
    Eval {
        /// Suite spec JSON.
        #[arg(long)]
        suite: PathBuf,
        /// Report JSON output path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn build_world(template_path: Option<&Path>) -> Result<World> {
    let mut world = World::standard();
    if let Some(path) = template_path {
        templates::apply_template_file(&mut world, path)?;
    }
    Ok(world)
}

fn build_engine(cfg: &SamplerConfig, template_path: Option<&Path>) -> Result<Engine> {
    let world = build_world(template_path)?;
    Ok(Engine::new(world, cfg)?)
}

fn cmd_parse(world: &World, prompt: &str) -> Result<()> {
    let tree = parse(prompt, &world.lexicon)?;
    println!("{}", serde_json::to_string_pretty(&report::TreeView::new(&tree))?);
    Ok(())
}

fn cmd_synth(
    cfg: &SamplerConfig,
    template_path: Option<&Path>,
    prompt: &str,
    seed: u64,
    out: &Path,
    trajectory: Option<&Path>,
) -> Result<()> {
    let engine = build_engine(cfg, template_path)?;
    let output = sample(&engine, cfg, prompt, seed)?;
    pngio::save_png(&output.image, out)?;
    if let Some(path) = trajectory {
        let view = report::TrajectoryReport {
            prompt,
            seed,
            config: cfg,
            steps: &output.trajectory,
        };
        write_json(&view, path)?;
    }
    Ok(())
}

fn cmd_match(world: &World, prompt: &str, image_path: &Path) -> Result<()> {
    let tree = parse(prompt, &world.lexicon)?;
    let image = pngio::load_png(image_path)?;
    let parts = segment(&image, tree.category, world)?;
    let aligned = tailor_core::alignment::align(&parts, &tree, world)?;
    let view = report::MatchReport::new(&tree, &parts, &aligned);
    println!("{}", serde_json::to_string_pretty(&view)?);
    Ok(())
}

/// Tile per-token maps horizontally, each normalized to its own maximum and
/// upscaled 8×, separated by white gutters.
fn render_attention_grid(maps: &[(String, Vec<f64>)]) -> (Vec<u8>, usize, usize) {
    const SCALE: usize = 8;
    const GUTTER: usize = 4;
    let tile = LATENT * SCALE;
    let width = maps.len() * tile + (maps.len() + 1) * GUTTER;
    let height = tile + 2 * GUTTER;
    let mut buf = vec![255u8; width * height];
    for (i, (_, probs)) in maps.iter().enumerate() {
        let max = probs.iter().cloned().fold(0.0, f64::max).max(1e-300);
        let x0 = GUTTER + i * (tile + GUTTER);
        for y in 0..tile {
            for x in 0..tile {
                let p = probs[(y / SCALE) * LATENT + (x / SCALE)];
                let v = ((p / max) * 255.0).round() as u8;
                buf[(GUTTER + y) * width + x0 + x] = v;
            }
        }
    }
    (buf, width, height)
}

fn cmd_attmap(
    cfg: &SamplerConfig,
    template_path: Option<&Path>,
    prompt: &str,
    seed: u64,
    step: usize,
    out: &Path,
) -> Result<()> {
    let engine = build_engine(cfg, template_path)?;
    let output = sample(&engine, cfg, prompt, seed)?;
    let snapshot = output
        .attention
        .iter()
        .find(|s| s.t == step)
        .ok_or_else(|| anyhow!("step {step} outside 1..={}", cfg.t_steps))?;
    let maps: Vec<(String, Vec<f64>)> = snapshot
        .tokens
        .iter()
        .map(|t| (t.token.clone(), t.probs.clone()))
        .collect();
    let (buf, width, height) = render_attention_grid(&maps);
    pngio::save_gray_png(&buf, width, height, out)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_manipulate(
    cfg: &SamplerConfig,
    template_path: Option<&Path>,
    prompt: &str,
    new_prompt: &str,
    seed: u64,
    out: &Path,
    out_original: Option<&Path>,
    report_path: Option<&Path>,
    no_blend: bool,
) -> Result<()> {
    let engine = build_engine(cfg, template_path)?;
    let req = EditRequest {
        old_prompt: prompt.to_string(),
        new_prompt: new_prompt.to_string(),
        seed,
    };
    let opts = EditOptions { blend: !no_blend, ..EditOptions::default() };
    let edit = manipulate(&engine, cfg, &req, &opts)?;
    pngio::save_png(&edit.edited, out)?;
    if let Some(path) = out_original {
        pngio::save_png(&edit.original, path)?;
    }
    if let Some(path) = report_path {
        let scene = infer_scene(&edit.edited, edit.new_tree.category, &engine.world)?;
        let realized = edit_realized(&edit.new_tree, &edit.gamma, &scene, &engine.world);
        let view =
            report::ManipulateReport::new(seed, cfg, !no_blend, &edit, realized, &scene);
        write_json(&view, path)?;
    }
    Ok(())
}

fn cmd_eval(
    cfg: &SamplerConfig,
    template_path: Option<&Path>,
    suite_path: &Path,
    out: &Path,
) -> Result<()> {
    let text = std::fs::read_to_string(suite_path)
        .with_context(|| format!("reading suite {}", suite_path.display()))?;
    let spec: SuiteSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", suite_path.display()))?;
    let engine = build_engine(cfg, template_path)?;
    let report = run_suite(&engine, cfg, &spec)?;
    write_json(&report, out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let (cfg, template_path) = config::effective(&cli.overrides)?;
    let template_path = template_path.as_deref();
    match &cli.command {
        Command::Parse { prompt } => cmd_parse(&build_world(template_path)?, prompt),
        Command::Synth { prompt, seed, out, trajectory } => {
            cmd_synth(&cfg, template_path, prompt, *seed, out, trajectory.as_deref())
        }
        Command::Match { prompt, image } => {
            cmd_match(&build_world(template_path)?, prompt, image)
        }
        Command::Attmap { prompt, seed, step, out } => {
            cmd_attmap(&cfg, template_path, prompt, *seed, *step, out)
        }
        Command::Manipulate {
            prompt,
            new_prompt,
            seed,
            out,
            out_original,
            report,
            no_blend,
        } => cmd_manipulate(
            &cfg,
            template_path,
            prompt,
            new_prompt,
            *seed,
            out,
            out_original.as_deref(),
            report.as_deref(),
            *no_blend,
        ),
        Command::Eval { suite, out } => cmd_eval(&cfg, template_path, suite, out),
    }
}

/// Numeric failures exit 3; everything else that goes wrong is bad input, 2.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::NonFinite { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
