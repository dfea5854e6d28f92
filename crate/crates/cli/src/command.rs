//! Flags merged with the config file into fully resolved, validated commands.

use std::path::PathBuf;

use mmel_core::{EnhancerScalars, Method, ModelConfig, Objective};
use serde::Serialize;

use crate::args::*;
use crate::config::{parse_levels, parse_seeds, FileConfig};
use crate::error::{CliError, Result};

pub const DEFAULT_OUT: &str = "mmel-out";
pub const DEFAULT_SANITY_SEEDS: u64 = 20;
pub const DEFAULT_PLANTED_SAMPLES: u64 = 100;
pub const DEFAULT_REPETITIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    /// Image-text similarity of the dual encoder.
    Encoder,
    /// Closed-form planted-signal model on a 4x4 grid.
    Planted,
}

/// Enhancer overrides on top of the values stored in the weight file.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Enhance {
    pub alpha: Option<f64>,
    pub temperature: Option<f64>,
    pub beta: Option<f64>,
    pub scales: Option<Vec<f64>>,
    pub lambda: Option<f64>,
}

impl Enhance {
    pub fn apply(&self, base: &EnhancerScalars) -> EnhancerScalars {
        EnhancerScalars {
            alpha: self.alpha.unwrap_or(base.alpha),
            temperature: self.temperature.unwrap_or(base.temperature),
            beta: self.beta.unwrap_or(base.beta),
            scales: self.scales.clone().unwrap_or_else(|| base.scales.clone()),
        }
    }

    pub fn objective(&self) -> Objective {
        match self.lambda {
            Some(l) => Objective::combined(l).expect("validated at resolution"),
            None => Objective::Cosine,
        }
    }

    fn validate(&self) -> Result<()> {
        self.apply(&EnhancerScalars::default())
            .validate()
            .map_err(parameter)?;
        if let Some(l) = self.lambda {
            Objective::combined(l).map_err(parameter)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GenWeights {
    pub weights: PathBuf,
    pub seed: u64,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub enhance: Enhance,
}

#[derive(Debug, Clone, Serialize)]
pub struct Pair {
    pub weights: PathBuf,
    pub image: PathBuf,
    pub text: String,
    pub seed: u64,
    pub out: PathBuf,
    pub enhance: Enhance,
}

#[derive(Debug, Clone, Serialize)]
pub struct Attribute {
    #[serde(flatten)]
    pub pair: Pair,
    pub method: Method,
    pub format: Format,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluate {
    pub scorer: Scorer,
    pub weights: Option<PathBuf>,
    pub images: Vec<PathBuf>,
    pub text: Option<String>,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub enhance: Enhance,
    pub method: Method,
    pub retain: f64,
    pub steps: usize,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Occlude {
    #[serde(flatten)]
    pub pair: Pair,
    pub method: Method,
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Sanity {
    #[serde(flatten)]
    pub pair: Pair,
    pub method: Method,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Bench {
    #[serde(flatten)]
    pub pair: Pair,
    pub repetitions: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "verb", rename_all = "kebab-case")]
pub enum Command {
    GenWeights(GenWeights),
    Attribute(Attribute),
    Evaluate(Evaluate),
    Occlude(Occlude),
    Sanity(Sanity),
    Bench(Bench),
}

impl Command {
    pub fn verb(&self) -> &'static str {
        match self {
            Command::GenWeights(_) => "gen-weights",
            Command::Attribute(_) => "attribute",
            Command::Evaluate(_) => "evaluate",
            Command::Occlude(_) => "occlude",
            Command::Sanity(_) => "sanity",
            Command::Bench(_) => "bench",
        }
    }

    pub fn out(&self) -> &PathBuf {
        match self {
            Command::GenWeights(c) => &c.out,
            Command::Attribute(c) => &c.pair.out,
            Command::Evaluate(c) => &c.out,
            Command::Occlude(c) => &c.pair.out,
            Command::Sanity(c) => &c.pair.out,
            Command::Bench(c) => &c.pair.out,
        }
    }
}

fn parameter(e: mmel_core::Error) -> CliError {
    CliError::Usage(format!("parameter error: {e}"))
}

fn missing(flag: &str) -> CliError {
    CliError::Usage(format!("missing required flag --{flag}"))
}

struct Resolver {
    file: FileConfig,
}

impl Resolver {
    fn new(common: &CommonArgs) -> Result<Self> {
        let file = match &common.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Ok(Self { file })
    }

    fn seed(&self, common: &CommonArgs) -> Result<u64> {
        Ok(common.seed.or(self.file.uint("seed")?).unwrap_or(0))
    }

    fn out(&self, common: &CommonArgs) -> Result<PathBuf> {
        Ok(common
            .out
            .clone()
            .or(self.file.path("out")?)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)))
    }

    fn weights(&self, common: &CommonArgs) -> Result<Option<PathBuf>> {
        Ok(common.weights.clone().or(self.file.path("weights")?))
    }

    fn method(&self, flag: &Option<String>, default: Method) -> Result<Method> {
        match flag.clone().or(self.file.string("method")?) {
            Some(s) => s.parse().map_err(parameter),
            None => Ok(default),
        }
    }

    fn enhance(&self, a: &EnhanceArgs) -> Result<Enhance> {
        let e = Enhance {
            alpha: a.alpha.or(self.file.float("alpha")?),
            temperature: a.temperature.or(self.file.float("temperature")?),
            beta: a.beta.or(self.file.float("beta")?),
            scales: self.file.floats("scales")?,
            lambda: a.lambda.or(self.file.float("lambda")?),
        };
        e.validate()?;
        Ok(e)
    }

    fn pair(&self, common: &CommonArgs, pair: &PairArgs, enhance: &EnhanceArgs) -> Result<Pair> {
        Ok(Pair {
            weights: self.weights(common)?.ok_or_else(|| missing("weights"))?,
            image: pair
                .image
                .clone()
                .or(self.file.path("image")?)
                .ok_or_else(|| missing("image"))?,
            text: pair
                .text
                .clone()
                .or(self.file.string("text")?)
                .ok_or_else(|| missing("text"))?,
            seed: self.seed(common)?,
            out: self.out(common)?,
            enhance: self.enhance(enhance)?,
        })
    }

    fn model(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::default();
        let fields: [(&str, &mut usize); 10] = [
            ("image_size", &mut m.image_size),
            ("patch_size", &mut m.patch_size),
            ("d_model", &mut m.d_model),
            ("n_heads", &mut m.n_heads),
            ("n_layers_v", &mut m.n_layers_v),
            ("n_layers_t", &mut m.n_layers_t),
            ("mlp_ratio", &mut m.mlp_ratio),
            ("d_shared", &mut m.d_shared),
            ("vocab_size", &mut m.vocab_size),
            ("max_text_len", &mut m.max_text_len),
        ];
        for (key, slot) in fields {
            if let Some(v) = self.file.usize(key)? {
                *slot = v;
            }
        }
        if let Some(eps) = self.file.float("ln_eps")? {
            m.ln_eps = eps;
        }
        m.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(m)
    }
}

/// Merges flags over the config file and validates every value.
pub fn resolve(verb: &Verb) -> Result<Command> {
    match verb {
        Verb::GenWeights(a) => {
            let r = Resolver::new(&a.common)?;
            Ok(Command::GenWeights(GenWeights {
                weights: r.weights(&a.common)?.ok_or_else(|| missing("weights"))?,
                seed: r.seed(&a.common)?,
                out: r.out(&a.common)?,
                model: r.model()?,
                enhance: r.enhance(&a.enhance)?,
            }))
        }
        Verb::Attribute(a) => {
            let r = Resolver::new(&a.common)?;
            let format = match a.format {
                Some(f) => Some(f),
                None => r
                    .file
                    .string("format")?
                    .map(|s| parse_format(&s))
                    .transpose()?,
            };
            if format.is_some_and(|f| f != Format::Pgm) {
                return Err(CliError::Usage(
                    "attribute writes heatmaps; --format must be pgm".into(),
                ));
            }
            Ok(Command::Attribute(Attribute {
                pair: r.pair(&a.common, &a.pair, &a.enhance)?,
                method: r.method(&a.method, Method::Mmel)?,
                format: Format::Pgm,
            }))
        }
        Verb::Evaluate(a) => {
            let r = Resolver::new(&a.common)?;
            let scorer = match r.file.string("scorer")?.as_deref() {
                None | Some("encoder") => Scorer::Encoder,
                Some("planted") => Scorer::Planted,
                Some(other) => return Err(CliError::Config(format!("unknown scorer {other:?}"))),
            };
            let method = r.method(&a.method, Method::GradEclip)?;
            let images = if a.image.is_empty() {
                r.file.paths("image")?.unwrap_or_default()
            } else {
                a.image.clone()
            };
            let weights = r.weights(&a.common)?;
            let text = a.text.clone().or(r.file.string("text")?);
            let seeds_spec = a.seeds.clone().or(r.file.seeds("seeds")?);
            let seeds = match scorer {
                Scorer::Encoder => {
                    if weights.is_none() {
                        return Err(missing("weights"));
                    }
                    if images.is_empty() {
                        return Err(missing("image"));
                    }
                    if text.is_none() {
                        return Err(missing("text"));
                    }
                    Vec::new()
                }
                Scorer::Planted => {
                    if method == Method::Mmel {
                        return Err(CliError::Usage(
                            "the planted scorer has no encoder activations; use grad-eclip or random".into(),
                        ));
                    }
                    match seeds_spec {
                        Some(s) => parse_seeds(&s)?,
                        None => (0..DEFAULT_PLANTED_SAMPLES).collect(),
                    }
                }
            };
            let retain = a
                .retain
                .or(r.file.float("retain")?)
                .unwrap_or(mmel_core::eval::DEFAULT_RETAIN);
            if !(retain > 0.0 && retain <= 1.0) {
                return Err(CliError::Usage(format!(
                    "parameter error: retain {retain} outside (0, 1]"
                )));
            }
            let steps = a
                .steps
                .or(r.file.usize("steps")?)
                .unwrap_or(mmel_core::eval::DEFAULT_STEPS);
            if steps == 0 {
                return Err(CliError::Usage(
                    "parameter error: steps must be at least 1".into(),
                ));
            }
            let format = match a.format {
                Some(f) => Some(f),
                None => r
                    .file
                    .string("format")?
                    .map(|s| parse_format(&s))
                    .transpose()?,
            };
            let formats = match format {
                None => vec![Format::Csv, Format::Json],
                Some(Format::Pgm) => {
                    return Err(CliError::Usage("evaluate writes csv or json".into()))
                }
                Some(f) => vec![f],
            };
            Ok(Command::Evaluate(Evaluate {
                scorer,
                weights,
                images,
                text,
                seed: r.seed(&a.common)?,
                seeds,
                out: r.out(&a.common)?,
                enhance: r.enhance(&a.enhance)?,
                method,
                retain,
                steps,
                formats,
            }))
        }
        Verb::Occlude(a) => {
            let r = Resolver::new(&a.common)?;
            let levels = match a.levels.clone().or(r.file.levels("levels")?) {
                Some(s) => parse_levels(&s)?,
                None => mmel_core::eval::DEFAULT_LEVELS.to_vec(),
            };
            Ok(Command::Occlude(Occlude {
                pair: r.pair(&a.common, &a.pair, &a.enhance)?,
                method: r.method(&a.method, Method::Mmel)?,
                levels,
            }))
        }
        Verb::Sanity(a) => {
            let r = Resolver::new(&a.common)?;
            let seeds = match a.seeds.clone().or(r.file.seeds("seeds")?) {
                Some(s) => parse_seeds(&s)?,
                None => (0..DEFAULT_SANITY_SEEDS).collect(),
            };
            Ok(Command::Sanity(Sanity {
                pair: r.pair(&a.common, &a.pair, &a.enhance)?,
                method: r.method(&a.method, Method::GradEclip)?,
                seeds,
            }))
        }
        Verb::Bench(a) => {
            let r = Resolver::new(&a.common)?;
            let repetitions = a
                .repetitions
                .or(r.file.usize("repetitions")?)
                .unwrap_or(DEFAULT_REPETITIONS);
            if repetitions < 10 {
                return Err(CliError::Usage(format!(
                    "parameter error: need at least 10 repetitions, got {repetitions}"
                )));
            }
            Ok(Command::Bench(Bench {
                pair: r.pair(&a.common, &a.pair, &a.enhance)?,
                repetitions,
            }))
        }
    }
}

fn parse_format(s: &str) -> Result<Format> {
    <Format as clap::ValueEnum>::from_str(s, false)
        .map_err(|_| CliError::Config(format!("unknown format {s:?}")))
}
