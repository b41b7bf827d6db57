use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use onoff_privacy::sim::{Policy, DEFAULT_MSG_BITS};
use onoff_privacy::{MarkovModel, Privacy, PrivacyPattern};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::ConfigError;

pub fn load_model(path: &Path) -> anyhow::Result<MarkovModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading model {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| ConfigError(format!("model {}: {e}", path.display())))
        .map_err(Into::into)
}

/// Parses a pattern string. Besides `1`/`0` flags this accepts
/// `bernoulli:P`, which draws `len` flags (the first is always ON) with each
/// later step ON with probability `P`.
pub fn parse_pattern(text: &str, len: usize, seed: u64) -> anyhow::Result<PrivacyPattern> {
    if let Some(p) = text.strip_prefix("bernoulli:") {
        let p: f64 = p.parse().map_err(|_| ConfigError(format!("bad Bernoulli probability in {text:?}")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(ConfigError(format!("Bernoulli probability {p} outside [0, 1]")).into());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flags = (0..len.max(1))
            .map(|t| if t == 0 || rng.gen_bool(p) { Privacy::On } else { Privacy::Off })
            .collect();
        return Ok(PrivacyPattern::new(flags)?);
    }
    Ok(text.parse()?)
}

/// Pattern from `--pattern`, or one ON step followed by `horizon` OFF steps.
pub fn pattern_for(text: Option<&str>, horizon: Option<usize>, seed: u64) -> anyhow::Result<(PrivacyPattern, usize)> {
    let pattern = match (text, horizon) {
        (Some(s), h) => parse_pattern(s, h.map_or(1, |h| h + 1), seed)?,
        (None, h) => PrivacyPattern::on_then_off(h.unwrap_or(1)),
    };
    let horizon = horizon.unwrap_or(pattern.len() - 1);
    if horizon + 1 > pattern.len() {
        bail!(ConfigError(format!("pattern {pattern} has {} steps, horizon {horizon} needs {}", pattern.len(), horizon + 1)));
    }
    Ok((pattern, horizon))
}

/// Episode configuration file. `model` is either a path or an inline model.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub model: Option<ModelRef>,
    pub pattern: Option<String>,
    #[serde(rename = "L")]
    pub msg_bits: Option<usize>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
    pub policy: Option<Policy>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Path(PathBuf),
    Inline(MarkovModel),
}

impl EpisodeConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("config {}: {e}", path.display())).into())
    }
}

/// Scenario for `simulate` after merging flags over the config file.
pub struct Scenario {
    pub model: MarkovModel,
    pub pattern: PrivacyPattern,
    pub msg_bits: usize,
    pub episodes: usize,
    pub seed: u64,
    pub policy: Policy,
}

pub struct SimulateFlags<'a> {
    pub config: Option<&'a Path>,
    pub model: Option<&'a Path>,
    pub pattern: Option<&'a str>,
    pub horizon: Option<usize>,
    pub msg_bits: Option<usize>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
    pub policy: Option<&'a str>,
}

impl Scenario {
    pub fn resolve(flags: SimulateFlags<'_>) -> anyhow::Result<Self> {
        let file = match flags.config {
            Some(p) => EpisodeConfig::load(p)?,
            None => EpisodeConfig::default(),
        };
        let model = match (flags.model, file.model) {
            (Some(p), _) => load_model(p)?,
            (None, Some(ModelRef::Path(p))) => load_model(&p)?,
            (None, Some(ModelRef::Inline(m))) => m,
            (None, None) => bail!(ConfigError("no model given (use --model or a config file)".into())),
        };
        let seed = flags.seed.or(file.seed).unwrap_or(0);
        let text = flags.pattern.map(str::to_owned).or(file.pattern);
        let (pattern, _) = pattern_for(text.as_deref(), flags.horizon, seed)?;
        let policy = match flags.policy {
            Some(p) => p.parse()?,
            None => file.policy.unwrap_or(Policy::Algorithm1),
        };
        Ok(Self {
            model,
            pattern,
            msg_bits: flags.msg_bits.or(file.msg_bits).unwrap_or(DEFAULT_MSG_BITS),
            episodes: flags.episodes.or(file.episodes).unwrap_or(1000),
            seed,
            policy,
        })
    }
}
