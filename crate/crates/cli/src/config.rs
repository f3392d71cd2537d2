//! Versioned `key = value` pipeline configuration.
//!
//! Precedence, lowest first: built-in defaults, the config file, `--set`
//! overrides, then the `--seed` flag. Per-stage seeds default to the global
//! seed unless set explicitly.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;

use mutraj_core::baseline::BaselineMode;
use mutraj_core::date::YearMonth;
use mutraj_core::eval::EvalTask;
use mutraj_core::sampler::SamplerConfig;
use mutraj_core::synth::{ShiftSpec, SynthConfig};
use mutraj_core::variants::ResolveRule;
use mutraj_core::weighting::WeightConfig;
use mutraj_model::{LrSchedule, ModelConfig, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    Model,
    Baseline,
    Count,
    Random,
}

impl FromStr for PredictorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "model" => Ok(Self::Model),
            "baseline" => Ok(Self::Baseline),
            "count" => Ok(Self::Count),
            "random" => Ok(Self::Random),
            _ => Err(format!("unknown predictor {s:?} (model, baseline, count, random)")),
        }
    }
}

impl Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Model => "model",
            Self::Baseline => "baseline",
            Self::Count => "count",
            Self::Random => "random",
        })
    }
}

/// Input file locations. Unset paths fall back to files produced by
/// `simulate` inside the output directory where that makes sense.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub tree: Option<PathBuf>,
    /// Separate tree for the evaluation split; topologies need not agree.
    pub eval_tree: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub annotation: Option<PathBuf>,
    pub population: Option<PathBuf>,
    pub definitions: Option<PathBuf>,
    pub nextstrain: Option<PathBuf>,
    pub frequencies: Option<PathBuf>,
    pub baseline_table: Option<PathBuf>,
    /// Directory of per-clade tables named `<clade>.csv`.
    pub clade_tables: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub task: EvalTask,
    pub ks: Vec<usize>,
    pub hide_location: bool,
    pub predictor: PredictorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub base_year: i32,
    pub train_cutoff: NaiveDate,
    pub eval_cutoff: NaiveDate,
    pub weight: WeightConfig,
    pub temporal_weighting: bool,
    pub representative_weighting: bool,
    pub sampler_workers: usize,
    pub sampler_carry_over: bool,
    pub sampler_seed: Option<u64>,
    pub epochs: u32,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub max_seq: usize,
    pub rope_base: f64,
    pub init_std: f64,
    pub train: TrainConfig,
    pub train_seed: Option<u64>,
    pub eval: EvalSettings,
    pub predict_k: usize,
    pub baseline_mode: BaselineMode,
    pub resolve_rule: ResolveRule,
    pub synth: SynthConfig,
    pub synth_seed: Option<u64>,
    pub synth_shift: Option<ShiftSpec>,
    pub synth_density_scale: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let desk = ModelConfig::desk(1);
        let date = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
        Self {
            seed: 0,
            paths: Paths::default(),
            base_year: 2019,
            train_cutoff: date(2022, 6, 30),
            eval_cutoff: date(2023, 1, 31),
            weight: WeightConfig::default(),
            temporal_weighting: true,
            representative_weighting: true,
            sampler_workers: 4,
            sampler_carry_over: false,
            sampler_seed: None,
            epochs: 1,
            layers: desk.layers,
            hidden: desk.hidden,
            heads: desk.heads,
            max_seq: desk.max_seq,
            rope_base: desk.rope_base,
            init_std: desk.init_std,
            train: TrainConfig::default(),
            train_seed: None,
            eval: EvalSettings { task: EvalTask::Nucleotide, ks: vec![1, 10, 100], hide_location: false, predictor: PredictorKind::Model },
            predict_k: 10,
            baseline_mode: BaselineMode::default(),
            resolve_rule: ResolveRule::default(),
            synth: SynthConfig::default(),
            synth_seed: None,
            synth_shift: None,
            synth_density_scale: 1.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| anyhow::anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => bail!("{key}: expected true or false, got {value:?}"),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, |v| v.to_string())
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

fn schedule_name(s: LrSchedule) -> &'static str {
    match s {
        LrSchedule::Linear => "linear",
        LrSchedule::Cosine => "cosine",
    }
}

impl PipelineConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "version" => {
                let n: u32 = parse(key, v)?;
                if n != SCHEMA_VERSION {
                    bail!("config schema version {n} is not supported (expected {SCHEMA_VERSION})");
                }
            }
            "seed" => self.seed = parse(key, v)?,
            "paths.tree" => self.paths.tree = parse_path(v),
            "paths.eval_tree" => self.paths.eval_tree = parse_path(v),
            "paths.reference" => self.paths.reference = parse_path(v),
            "paths.annotation" => self.paths.annotation = parse_path(v),
            "paths.population" => self.paths.population = parse_path(v),
            "paths.definitions" => self.paths.definitions = parse_path(v),
            "paths.nextstrain" => self.paths.nextstrain = parse_path(v),
            "paths.frequencies" => self.paths.frequencies = parse_path(v),
            "paths.baseline_table" => self.paths.baseline_table = parse_path(v),
            "paths.clade_tables" => self.paths.clade_tables = parse_path(v),
            "tokenizer.base_year" => self.base_year = parse(key, v)?,
            "split.train_cutoff" => self.train_cutoff = parse(key, v)?,
            "split.eval_cutoff" => self.eval_cutoff = parse(key, v)?,
            "weight.d0" => self.weight.d0 = parse(key, v)?,
            "weight.d1" => self.weight.d1 = parse(key, v)?,
            "weight.d2" => self.weight.d2 = parse(key, v)?,
            "weight.m" => self.weight.m = parse(key, v)?,
            "weight.r0" => self.weight.r0 = parse(key, v)?,
            "weight.lambda" => self.weight.lambda = parse(key, v)?,
            "weight.regional_countries" => {
                self.weight.regional_countries =
                    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
            }
            "weight.temporal" => self.temporal_weighting = parse_bool(key, v)?,
            "weight.representative" => self.representative_weighting = parse_bool(key, v)?,
            "sampler.workers" => self.sampler_workers = parse(key, v)?,
            "sampler.carry_over" => self.sampler_carry_over = parse_bool(key, v)?,
            "sampler.seed" => self.sampler_seed = parse_opt(key, v)?,
            "sampler.epochs" => self.epochs = parse(key, v)?,
            "model.layers" => self.layers = parse(key, v)?,
            "model.hidden" => self.hidden = parse(key, v)?,
            "model.heads" => self.heads = parse(key, v)?,
            "model.max_seq" => self.max_seq = parse(key, v)?,
            "model.rope_base" => self.rope_base = parse(key, v)?,
            "model.init_std" => self.init_std = parse(key, v)?,
            "train.steps" => self.train.steps = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr_start" => self.train.lr_start = parse(key, v)?,
            "train.lr_end" => self.train.lr_end = parse(key, v)?,
            "train.schedule" => self.train.schedule = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.eps" => self.train.eps = parse(key, v)?,
            "train.seed" => self.train_seed = parse_opt(key, v)?,
            "eval.task" => self.eval.task = parse(key, v)?,
            "eval.ks" => {
                self.eval.ks = v.split(',').map(|k| parse::<usize>(key, k.trim())).collect::<Result<_>>()?;
            }
            "eval.hide_location" => self.eval.hide_location = parse_bool(key, v)?,
            "eval.predictor" => self.eval.predictor = parse(key, v)?,
            "predict.k" => self.predict_k = parse(key, v)?,
            "baseline.mode" => self.baseline_mode = parse(key, v)?,
            "variants.min_share" => self.resolve_rule.min_share = parse(key, v)?,
            "variants.min_ratio" => self.resolve_rule.min_ratio = parse(key, v)?,
            "synth.seed" => self.synth_seed = parse_opt(key, v)?,
            "synth.genome_length" => self.synth.genome_length = parse(key, v)?,
            "synth.orf_start" => self.synth.orf_start = parse(key, v)?,
            "synth.orf_end" => self.synth.orf_end = parse(key, v)?,
            "synth.start" => self.synth.start = parse::<YearMonth>(key, v)?,
            "synth.months" => self.synth.months = parse(key, v)?,
            "synth.variants" => self.synth.variants = parse(key, v)?,
            "synth.variant_mutations" => self.synth.variant_mutations = parse(key, v)?,
            "synth.subclades_per_month" => self.synth.subclades_per_month = parse(key, v)?,
            "synth.subclade_mutations" => self.synth.subclade_mutations = parse(key, v)?,
            "synth.private_max" => self.synth.private_max = parse(key, v)?,
            "synth.buckets" => self.synth.buckets = parse(key, v)?,
            "synth.support" => self.synth.support = parse(key, v)?,
            "synth.zipf_exponent" => self.synth.zipf_exponent = parse(key, v)?,
            "synth.noise_rate" => self.synth.noise_rate = parse(key, v)?,
            "synth.release_lag_days" => self.synth.release_lag_days = parse(key, v)?,
            "synth.density_scale" => self.synth_density_scale = parse(key, v)?,
            "synth.shift" => {
                self.synth_shift = if v.is_empty() || v == "none" {
                    None
                } else {
                    let (m, r) = v.split_once(':').with_context(|| format!("{key}: expected MONTH:RAMP, got {v:?}"))?;
                    Some(ShiftSpec { month: parse(key, m)?, ramp: parse(key, r)? })
                }
            }
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').with_context(|| format!("{origin}:{}: expected key = value", i + 1))?;
            self.set(k.trim(), v).with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Every key with its resolved value, in schema order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let w = &self.weight;
        let t = &self.train;
        vec![
            ("version", SCHEMA_VERSION.to_string()),
            ("seed", self.seed.to_string()),
            ("paths.tree", show_path(&self.paths.tree)),
            ("paths.eval_tree", show_path(&self.paths.eval_tree)),
            ("paths.reference", show_path(&self.paths.reference)),
            ("paths.annotation", show_path(&self.paths.annotation)),
            ("paths.population", show_path(&self.paths.population)),
            ("paths.definitions", show_path(&self.paths.definitions)),
            ("paths.nextstrain", show_path(&self.paths.nextstrain)),
            ("paths.frequencies", show_path(&self.paths.frequencies)),
            ("paths.baseline_table", show_path(&self.paths.baseline_table)),
            ("paths.clade_tables", show_path(&self.paths.clade_tables)),
            ("tokenizer.base_year", self.base_year.to_string()),
            ("split.train_cutoff", self.train_cutoff.to_string()),
            ("split.eval_cutoff", self.eval_cutoff.to_string()),
            ("weight.d0", w.d0.to_string()),
            ("weight.d1", w.d1.to_string()),
            ("weight.d2", w.d2.to_string()),
            ("weight.m", w.m.to_string()),
            ("weight.r0", w.r0.to_string()),
            ("weight.lambda", w.lambda.to_string()),
            ("weight.regional_countries", w.regional_countries.join(",")),
            ("weight.temporal", self.temporal_weighting.to_string()),
            ("weight.representative", self.representative_weighting.to_string()),
            ("sampler.workers", self.sampler_workers.to_string()),
            ("sampler.carry_over", self.sampler_carry_over.to_string()),
            ("sampler.seed", show_opt(&self.sampler_seed)),
            ("sampler.epochs", self.epochs.to_string()),
            ("model.layers", self.layers.to_string()),
            ("model.hidden", self.hidden.to_string()),
            ("model.heads", self.heads.to_string()),
            ("model.max_seq", self.max_seq.to_string()),
            ("model.rope_base", self.rope_base.to_string()),
            ("model.init_std", self.init_std.to_string()),
            ("train.steps", t.steps.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr_start", t.lr_start.to_string()),
            ("train.lr_end", t.lr_end.to_string()),
            ("train.schedule", schedule_name(t.schedule).to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.eps", t.eps.to_string()),
            ("train.seed", show_opt(&self.train_seed)),
            ("eval.task", self.eval.task.to_string()),
            ("eval.ks", self.eval.ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")),
            ("eval.hide_location", self.eval.hide_location.to_string()),
            ("eval.predictor", self.eval.predictor.to_string()),
            ("predict.k", self.predict_k.to_string()),
            ("baseline.mode", self.baseline_mode.to_string()),
            ("variants.min_share", self.resolve_rule.min_share.to_string()),
            ("variants.min_ratio", self.resolve_rule.min_ratio.to_string()),
            ("synth.seed", show_opt(&self.synth_seed)),
            ("synth.genome_length", s.genome_length.to_string()),
            ("synth.orf_start", s.orf_start.to_string()),
            ("synth.orf_end", s.orf_end.to_string()),
            ("synth.start", s.start.to_string()),
            ("synth.months", s.months.to_string()),
            ("synth.variants", s.variants.to_string()),
            ("synth.variant_mutations", s.variant_mutations.to_string()),
            ("synth.subclades_per_month", s.subclades_per_month.to_string()),
            ("synth.subclade_mutations", s.subclade_mutations.to_string()),
            ("synth.private_max", s.private_max.to_string()),
            ("synth.buckets", s.buckets.to_string()),
            ("synth.support", s.support.to_string()),
            ("synth.zipf_exponent", s.zipf_exponent.to_string()),
            ("synth.noise_rate", s.noise_rate.to_string()),
            ("synth.release_lag_days", s.release_lag_days.to_string()),
            ("synth.density_scale", self.synth_density_scale.to_string()),
            ("synth.shift", self.synth_shift.map_or_else(String::new, |s| format!("{}:{}", s.month, s.ramp))),
        ]
    }

    /// The resolved configuration as a config file; loading it reproduces `self`.
    pub fn snapshot(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hash of the entries whose keys start with one of `prefixes`.
    pub fn section_hash(&self, prefixes: &[&str]) -> String {
        let text: String = self
            .entries()
            .into_iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        mutraj_core::artifact::sha256_hex(text.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        self.weight.validate()?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            bail!("eval.ks must be a non-empty list of positive integers");
        }
        if self.eval_cutoff < self.train_cutoff {
            bail!("split.eval_cutoff precedes split.train_cutoff");
        }
        if self.sampler_workers == 0 || self.epochs == 0 {
            bail!("sampler.workers and sampler.epochs must be positive");
        }
        if !(self.synth_density_scale > 0.0 && self.synth_density_scale.is_finite()) {
            bail!("synth.density_scale must be positive");
        }
        if self.predict_k == 0 {
            bail!("predict.k must be positive");
        }
        self.model_config(1).validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn model_config(&self, vocab: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            max_seq: self.max_seq,
            vocab,
            rope_base: self.rope_base,
            init_std: self.init_std,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.train_seed.unwrap_or(self.seed), ..self.train.clone() }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            workers: self.sampler_workers,
            seed: self.sampler_seed.unwrap_or(self.seed),
            carry_over: self.sampler_carry_over,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut cfg = SynthConfig {
            seed: self.synth_seed.unwrap_or(self.seed),
            shift: self.synth_shift,
            ..self.synth.clone()
        };
        for r in &mut cfg.regions {
            r.density *= self.synth_density_scale;
        }
        cfg
    }

    /// Month of the training cutoff, the reference point for sample age.
    pub fn cutoff_month(&self) -> YearMonth {
        use chrono::Datelike;
        YearMonth { year: self.train_cutoff.year(), month: self.train_cutoff.month() as u8 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text(
            "version = 1\n# comment\nseed = 7\ntrain.steps = 12 # trailing\neval.ks = 1, 5\nsynth.shift = 6:18\nweight.lambda = -0.1\npaths.tree = /x/t.jsonl\nbaseline.mode = mixed:0.5\n",
            "test",
        )
        .unwrap();
        assert_eq!(cfg.train.steps, 12);
        assert_eq!(cfg.eval.ks, vec![1, 5]);
        assert_eq!(cfg.synth_shift, Some(ShiftSpec { month: 6, ramp: 18 }));
        let mut again = PipelineConfig::default();
        again.apply_text(&cfg.snapshot(), "snapshot").unwrap();
        assert_eq!(again, cfg);
        assert_eq!(cfg.synth_config().seed, 7);
        assert_eq!(cfg.train_config().seed, 7);
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = PipelineConfig::default();
        assert!(cfg.set("train.stepz", "1").is_err());
        assert!(cfg.set("version", "2").is_err());
        assert!(cfg.set("train.steps", "many").is_err());
        assert!(cfg.apply_text("seed 3", "t").is_err());
        cfg.set("eval.ks", "0").unwrap();
        assert!(cfg.validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }

    #[test]
    fn defaults_follow_reference_constants() {
        let cfg = PipelineConfig::default();
        assert_eq!((cfg.train.lr_start, cfg.train.lr_end), (1e-4, 1e-5));
        assert_eq!((cfg.train.beta1, cfg.train.beta2), (0.9, 0.95));
        assert_eq!((cfg.weight.m, cfg.weight.r0, cfg.weight.lambda), (10.0, 100.0, 0.1));
        assert_eq!((cfg.layers, cfg.hidden, cfg.heads, cfg.max_seq), (2, 64, 4, 256));
    }
}
