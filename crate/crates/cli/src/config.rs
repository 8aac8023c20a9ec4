//! Flat key=value configuration files plus flag overrides.
//!
//! Precedence: built-in defaults, then the config file (`--config` or the
//! `TAILOR_CONFIG` environment variable), then command-line flags. The
//! effective configuration is echoed into every JSON report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use tailor_core::diffusion::SamplerConfig;

/// Global sampler/config flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct ConfigOverrides {
    /// Flat key=value config file (falls back to $TAILOR_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Diffusion step count T.
    #[arg(long, global = true)]
    pub t_steps: Option<usize>,
    /// Consensus (Hungarian) guidance step size.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Bundle guidance step size.
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Guidance window start, as a fraction of T.
    #[arg(long, global = true)]
    pub window_lo: Option<f64>,
    /// Guidance window end, as a fraction of T.
    #[arg(long, global = true)]
    pub window_hi: Option<f64>,
    /// Binarization percentile for attention masks.
    #[arg(long, global = true)]
    pub percentile: Option<f64>,
    /// Attention softmax temperature.
    #[arg(long, global = true)]
    pub tau_attention: Option<f64>,
    /// Conditioning strength λ of the prototype prior.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Noise schedule start β.
    #[arg(long, global = true)]
    pub beta_start: Option<f64>,
    /// Noise schedule end β.
    #[arg(long, global = true)]
    pub beta_end: Option<f64>,
    /// Per-category prototype cap.
    #[arg(long, global = true)]
    pub bank_cap: Option<usize>,
    /// Seed for capped prototype subsampling.
    #[arg(long, global = true)]
    pub bank_seed: Option<u64>,
    /// Layout template JSON overriding the built-in masks.
    #[arg(long, global = true)]
    pub templates: Option<PathBuf>,
}

fn parse_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected `key = value`", path.display(), lineno + 1);
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn set_from_map(cfg: &mut SamplerConfig, map: &BTreeMap<String, String>) -> Result<Option<PathBuf>> {
    let mut templates = None;
    for (key, value) in map {
        let num = || -> Result<f64> {
            value.parse::<f64>().with_context(|| format!("config key `{key}`: bad number `{value}`"))
        };
        match key.as_str() {
            "t_steps" => cfg.t_steps = num()? as usize,
            "alpha" => cfg.alpha = num()?,
            "beta" => cfg.beta = num()?,
            "window_lo" => cfg.window.0 = num()?,
            "window_hi" => cfg.window.1 = num()?,
            "percentile" => cfg.percentile = num()?,
            "tau_attention" => cfg.tau_attention = num()?,
            "lambda" => cfg.lambda_cond = num()?,
            "beta_start" => cfg.beta_start = num()?,
            "beta_end" => cfg.beta_end = num()?,
            "bank_cap" => cfg.bank_cap = num()? as usize,
            "bank_seed" => cfg.bank_seed = num()? as u64,
            "templates" => templates = Some(PathBuf::from(value)),
            other => bail!("unknown config key `{other}`"),
        }
    }
    Ok(templates)
}

/// Resolve the effective sampler config and optional template override path.
pub fn effective(overrides: &ConfigOverrides) -> Result<(SamplerConfig, Option<PathBuf>)> {
    let mut cfg = SamplerConfig::default();
    let mut templates = None;

    let file = overrides
        .config
        .clone()
        .or_else(|| std::env::var_os("TAILOR_CONFIG").map(PathBuf::from));
    if let Some(path) = file {
        let map = parse_file(&path)?;
        if let Some(t) = set_from_map(&mut cfg, &map)? {
            templates = Some(t);
        }
    }

    macro_rules! apply {
        ($($field:ident => $slot:expr),*) => {
            $(if let Some(v) = overrides.$field { $slot = v; })*
        };
    }
    apply! {
        t_steps => cfg.t_steps,
        alpha => cfg.alpha,
        beta => cfg.beta,
        window_lo => cfg.window.0,
        window_hi => cfg.window.1,
        percentile => cfg.percentile,
        tau_attention => cfg.tau_attention,
        lambda => cfg.lambda_cond,
        beta_start => cfg.beta_start,
        beta_end => cfg.beta_end,
        bank_cap => cfg.bank_cap,
        bank_seed => cfg.bank_seed
    }
    if let Some(t) = &overrides.templates {
        templates = Some(t.clone());
    }

    cfg.validate()?;
    Ok((cfg, templates))
}
