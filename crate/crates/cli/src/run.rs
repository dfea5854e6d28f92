use std::path::{Path, PathBuf};

use mmel_core::attrib::AttributionMap;
use mmel_core::enhancer::{baseline_pipeline, mmel_pipeline};
use mmel_core::eval::{
    evaluate_sample, occlusion_series, random_attribution, sanity_randomization, timing_overhead,
    EvalReport, ImageScorer, PlantedModel,
};
use mmel_core::math::minmax_gamma;
use mmel_core::model::{content_hash, denormalize, preprocess, tokenize, WeightFile};
use mmel_core::rng::derive_seed;
use mmel_core::{
    AttributionRequest, EnhancerParams, EnhancerScalars, Method, PreprocessConfig, Tensor, Tokens,
    Weights,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::command::*;
use crate::error::{CliError, Result};
use crate::heatmap::heatmap_pgm;
use crate::netpbm::{encode_ppm, read_ppm};

/// Salt of the per-sample stream behind random control maps.
const RANDOM_MAP_SALT: u64 = 0x7a4d;
/// Grid side of the planted scorer.
const PLANTED_SIDE: usize = 4;
const PLANTED_COUNT: usize = 4;

/// Artifacts of one run, written together with the manifest.
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    weights_hash: Option<String>,
}

impl Artifacts {
    fn new(weights_hash: Option<String>) -> Self {
        Self {
            files: Vec::new(),
            weights_hash,
        }
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn json(&mut self, name: &str, value: &impl serde::Serialize) -> Result<()> {
        let v = serde_json::to_value(value)
            .map_err(|e| CliError::Core(mmel_core::Error::Evaluation(e.to_string())))?;
        self.add(name, pretty(&v));
        Ok(())
    }
}

/// Sorted-key, pretty-printed JSON with a trailing newline.
fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s.into_bytes()
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| CliError::io(path, e))
}

fn finish(cmd: &Command, art: Artifacts, extra_outputs: Vec<String>) -> Result<()> {
    let out = cmd.out();
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut outputs = extra_outputs;
    for (name, bytes) in &art.files {
        write(out, name, bytes)?;
        outputs.push(name.clone());
    }
    let manifest = json!({
        "command": serde_json::to_value(cmd).expect("command serializes"),
        "outputs": outputs,
        "tool": concat!("mmel ", env!("CARGO_PKG_VERSION")),
        "weights_hash": art.weights_hash,
    });
    write(out, "manifest.json", &pretty(&manifest))
}

fn load(path: &Path) -> Result<(WeightFile, String)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let file = WeightFile::from_bytes(&bytes)?;
    Ok((file, content_hash(&bytes)))
}

fn read_image(path: &Path, w: &Weights) -> Result<Tensor> {
    let size = w.config().image_size;
    let raw = read_ppm(path, size)?;
    Ok(preprocess(&raw, &PreprocessConfig::default(), size)?)
}

fn enhancer(file: &WeightFile, enhance: &Enhance) -> Result<EnhancerParams> {
    let p = file.enhancer.clone().ok_or_else(|| {
        CliError::Core(mmel_core::Error::Parameter(
            "weight file has no enhancer parameters".into(),
        ))
    })?;
    let scalars = enhance.apply(&p.scalars());
    Ok(p.with_scalars(&scalars)?)
}

fn scalars(file: &WeightFile, enhance: &Enhance) -> EnhancerScalars {
    let base = file
        .enhancer
        .as_ref()
        .map(EnhancerParams::scalars)
        .unwrap_or_default();
    enhance.apply(&base)
}

struct Loaded {
    file: WeightFile,
    hash: String,
    image: Tensor,
    tokens: Tokens,
    params: Option<EnhancerParams>,
}

fn load_pair(pair: &Pair, need_enhancer: bool) -> Result<Loaded> {
    let (file, hash) = load(&pair.weights)?;
    let image = read_image(&pair.image, &file.weights)?;
    let tokens = tokenize(&pair.text, file.weights.config());
    let params = if need_enhancer {
        Some(enhancer(&file, &pair.enhance)?)
    } else {
        None
    };
    Ok(Loaded {
        file,
        hash,
        image,
        tokens,
        params,
    })
}

impl Loaded {
    fn request(&self, pair: &Pair) -> AttributionRequest<'_> {
        AttributionRequest {
            weights: &self.file.weights,
            enhancer: self.params.as_ref(),
            objective: pair.enhance.objective(),
            seed: derive_seed(pair.seed, RANDOM_MAP_SALT),
        }
    }
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::GenWeights(c) => gen_weights(cmd, c),
        Command::Attribute(c) => attribute(cmd, c),
        Command::Evaluate(c) => evaluate(cmd, c),
        Command::Occlude(c) => occlude(cmd, c),
        Command::Sanity(c) => sanity(cmd, c),
        Command::Bench(c) => bench(cmd, c),
    }
}

fn gen_weights(cmd: &Command, c: &GenWeights) -> Result<()> {
    let weights = mmel_core::model::generate_weights(&c.model, c.seed)?;
    let p = EnhancerParams::generate(&c.model, c.seed);
    let scalars = c.enhance.apply(&p.scalars());
    let file = WeightFile {
        weights,
        enhancer: Some(p.with_scalars(&scalars)?),
    };
    let bytes = file.to_bytes()?;
    if let Some(dir) = c.weights.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(&c.weights, &bytes).map_err(|e| CliError::io(&c.weights, e))?;
    let art = Artifacts::new(Some(content_hash(&bytes)));
    finish(cmd, art, vec![c.weights.display().to_string()])
}

fn heatmap(values: &Tensor, beta: f64, size: usize) -> Result<Vec<u8>> {
    let vis = minmax_gamma(values, beta)?;
    heatmap_pgm(&vis, size).map_err(|source| CliError::Image {
        path: PathBuf::from("<heatmap>"),
        source,
    })
}

fn attribute(cmd: &Command, c: &Attribute) -> Result<()> {
    let l = load_pair(&c.pair, c.method == Method::Mmel)?;
    let w = &l.file.weights;
    let size = w.config().image_size;
    let s = scalars(&l.file, &c.pair.enhance);
    let objective = c.pair.enhance.objective();
    let mut art = Artifacts::new(Some(l.hash.clone()));
    let mut scores =
        json!({ "method": c.method, "scalars": s, "grid_side": w.config().grid_side() });
    match c.method {
        Method::Mmel => {
            let p = l.params.as_ref().expect("loaded for mmel");
            let out = mmel_pipeline(w, p, &l.image, &l.tokens, objective)?;
            art.add("e_base.pgm", heatmap(out.base.values(), p.beta, size)?);
            art.add(
                "e_mmel.pgm",
                heatmap_pgm(&out.visual, size).map_err(|source| CliError::Image {
                    path: PathBuf::from("e_mmel.pgm"),
                    source,
                })?,
            );
            let ratios: Vec<f64> = out
                .base
                .data()
                .iter()
                .zip(out.enhanced.data())
                .filter(|(b, _)| **b > 0.0)
                .map(|(b, e)| e / b)
                .collect();
            let stats = (!ratios.is_empty()).then(|| {
                json!({
                    "min": ratios.iter().cloned().fold(f64::INFINITY, f64::min),
                    "max": ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    "mean": ratios.iter().sum::<f64>() / ratios.len() as f64,
                })
            });
            scores["similarity"] = json!(out.similarity);
            scores["e_base"] = json!(out.base.data());
            scores["e_mmel"] = json!(out.enhanced.data());
            scores["importance"] = json!(out.importance);
            scores["multiplier"] = json!(stats);
        }
        Method::GradEclip => {
            let out = baseline_pipeline(w, &l.image, &l.tokens, objective)?;
            art.add("e_base.pgm", heatmap(out.base.values(), s.beta, size)?);
            scores["similarity"] = json!(out.similarity);
            scores["e_base"] = json!(out.base.data());
        }
        Method::Random => {
            let map = l
                .request(&c.pair)
                .attribute(Method::Random, &l.image, &l.tokens)?;
            art.add("e_random.pgm", heatmap(map.values(), s.beta, size)?);
            scores["e_random"] = json!(map.data());
        }
    }
    art.json("scores.json", &scores)?;
    finish(cmd, art, Vec::new())
}

fn file_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn evaluate(cmd: &Command, c: &Evaluate) -> Result<()> {
    let config = serde_json::to_value(cmd).expect("command serializes");
    let (rows, hash) = match c.scorer {
        Scorer::Planted => {
            let rows = c
                .seeds
                .par_iter()
                .map(|&s| {
                    let model = PlantedModel::grid(s, PLANTED_SIDE, PLANTED_COUNT)?;
                    let map = match c.method {
                        Method::Random => {
                            random_attribution(derive_seed(s, RANDOM_MAP_SALT), PLANTED_SIDE)?
                        }
                        _ => model.attribution()?,
                    };
                    evaluate_sample(
                        format!("planted-{s:06}"),
                        &model,
                        map.data(),
                        c.retain,
                        c.steps,
                    )
                })
                .collect::<mmel_core::Result<Vec<_>>>()?;
            (rows, "none".to_string())
        }
        Scorer::Encoder => {
            let (file, hash) = load(c.weights.as_ref().expect("validated"))?;
            let params = match c.method {
                Method::Mmel => Some(enhancer(&file, &c.enhance)?),
                _ => None,
            };
            let w = &file.weights;
            let tokens = tokenize(c.text.as_deref().expect("validated"), w.config());
            let rows = c
                .images
                .par_iter()
                .enumerate()
                .map(|(i, path)| {
                    let image = read_image(path, w)?;
                    let req = AttributionRequest {
                        weights: w,
                        enhancer: params.as_ref(),
                        objective: c.enhance.objective(),
                        seed: derive_seed(c.seed, RANDOM_MAP_SALT + i as u64),
                    };
                    let map = req.attribute(c.method, &image, &tokens)?;
                    let scorer = ImageScorer::new(w, &image, &tokens, 0.0)?;
                    Ok(evaluate_sample(
                        file_id(path),
                        &scorer,
                        map.data(),
                        c.retain,
                        c.steps,
                    )?)
                })
                .collect::<Result<Vec<_>>>()?;
            (rows, hash)
        }
    };
    let report = EvalReport::new(c.method, rows, config, hash.clone(), None)?;
    let mut art = Artifacts::new((c.scorer == Scorer::Encoder).then_some(hash));
    for f in &c.formats {
        match f {
            crate::args::Format::Csv => art.add("report.csv", report.to_csv()?.into_bytes()),
            crate::args::Format::Json => art.add("report.json", report.to_json()?.into_bytes()),
            crate::args::Format::Pgm => unreachable!("rejected at resolution"),
        }
    }
    finish(cmd, art, Vec::new())
}

fn occlude(cmd: &Command, c: &Occlude) -> Result<()> {
    let l = load_pair(&c.pair, c.method == Method::Mmel)?;
    let w = &l.file.weights;
    let map: AttributionMap = l
        .request(&c.pair)
        .attribute(c.method, &l.image, &l.tokens)?;
    let scorer = ImageScorer::new(w, &l.image, &l.tokens, 0.0)?;
    let steps = occlusion_series(&scorer, &map, &c.levels)?;
    let mut art = Artifacts::new(Some(l.hash.clone()));
    let mut csv = String::from("index,level,occluded_patches,similarity,file\n");
    for (i, s) in steps.iter().enumerate() {
        let name = format!("occluded_{i:02}.ppm");
        let pixels = denormalize(&s.image, &PreprocessConfig::default())?;
        art.add(name.clone(), encode_ppm(&pixels));
        let count = s.occluded.iter().filter(|&&o| o).count();
        csv.push_str(&format!(
            "{i},{},{count},{},{name}\n",
            s.level, s.similarity
        ));
    }
    art.add("occlusion.csv", csv.into_bytes());
    finish(cmd, art, Vec::new())
}

fn sanity(cmd: &Command, c: &Sanity) -> Result<()> {
    let l = load_pair(&c.pair, c.method == Method::Mmel)?;
    let report = sanity_randomization(
        &l.request(&c.pair),
        c.method,
        &l.image,
        &l.tokens,
        &c.seeds,
        None,
    )?;
    let mut art = Artifacts::new(Some(l.hash.clone()));
    art.add("sanity.csv", report.to_csv()?.into_bytes());
    art.json("sanity.json", &report)?;
    finish(cmd, art, Vec::new())
}

fn bench(cmd: &Command, c: &Bench) -> Result<()> {
    let l = load_pair(&c.pair, true)?;
    let p = l.params.as_ref().expect("loaded");
    let report = timing_overhead(
        &l.file.weights,
        p,
        &l.image,
        &l.tokens,
        c.pair.enhance.objective(),
        c.repetitions,
    )?;
    let mut art = Artifacts::new(Some(l.hash.clone()));
    art.json("bench.json", &report)?;
    finish(cmd, art, Vec::new())
}
