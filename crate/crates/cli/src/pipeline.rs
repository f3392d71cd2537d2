//! Pipeline stages. Each reads its inputs from the run directory (or
//! configured paths), verifies them against upstream manifests, writes its
//! outputs atomically and records a manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::json;

use mutraj_core::artifact::{sha256_hex, write_atomic};
use mutraj_core::baseline::{BaselineMode, BaselineRanker, BaselineTable, CladeRankers, MutationKey, rank_baseline};
use mutraj_core::date::PartialDate;
use mutraj_core::eval::{
    evaluate_routed, nucleotide_candidates, write_month_series_csv, write_report_csv, EvalOptions, EvalOutcome,
    Predictor, RandomPredictor,
};
use mutraj_core::genome::{NtMutation, ReferenceGenome, SpikeMap};
use mutraj_core::sampler::{plan_epochs, EpochPlan};
use mutraj_core::synth::generate;
use mutraj_core::tokenizer::{read_token_stream, write_token_stream, TokenizedSample, TokenizerLayout};
use mutraj_core::tree::{extract_all, parse_tree, PhyloTree, read_trajectories, split_train_eval, write_trajectories, Trajectory};
use mutraj_core::variants::{read_nextstrain, refine_all, FrequencyTable, VariantDefinitions};
use mutraj_core::weighting::{density_table, representative_weights, sequence_weights, write_density_report, PopulationTable};
use mutraj_model::{
    rank_next_mutations, rank_without_location, train, write_log_csv, Checkpoint, Example, LogRow, Model,
    ModelPredictor, RankedPrediction, TrainState,
};

use crate::config::PredictorKind;
use crate::manifest::Run;

pub const SYNTH_DIR: &str = "synth";
pub const TREE: &str = "tree.jsonl";
pub const EVAL_TREE: &str = "eval_tree.jsonl";
pub const DEFINITIONS: &str = "definitions.json";
pub const LAYOUT: &str = "dataset/layout.txt";
pub const TRAIN_TOKENS: &str = "dataset/train.tok";
pub const EVAL_TOKENS: &str = "dataset/eval.tok";
pub const TRAIN_TRAJ: &str = "dataset/train.jsonl";
pub const EVAL_TRAJ: &str = "dataset/eval.jsonl";
pub const TRAIN_WEIGHTS: &str = "dataset/train_weights.csv";
pub const EVAL_WEIGHTS: &str = "dataset/eval_weights.csv";
pub const DENSITY: &str = "dataset/density.csv";
pub const PLAN: &str = "plan.bin";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const BASELINE_RANKING: &str = "baseline_ranking.csv";

type Inputs = Vec<(PathBuf, String)>;
type Info = BTreeMap<String, serde_json::Value>;

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

impl Run {
    fn synth_file(&self, name: &str) -> Option<PathBuf> {
        let p = self.out.join(SYNTH_DIR).join(name);
        p.exists().then_some(p)
    }

    fn reference_path(&self) -> Option<PathBuf> {
        self.cfg.paths.reference.clone().or_else(|| self.synth_file("reference.fasta"))
    }

    fn annotation_path(&self) -> Option<PathBuf> {
        self.cfg.paths.annotation.clone().or_else(|| self.synth_file("annotation.tsv"))
    }

    /// The configured reference, else the bundled SARS-CoV-2 genome.
    fn reference(&self, inputs: &mut Inputs) -> Result<ReferenceGenome> {
        match self.reference_path() {
            Some(p) => {
                inputs.push((p.clone(), self.verify_input(&p)?));
                Ok(ReferenceGenome::from_fasta(open(&p)?)?)
            }
            None => Ok(SpikeMap::sars_cov_2().genome),
        }
    }

    fn spike_map(&self, inputs: &mut Inputs) -> Result<SpikeMap> {
        match (self.reference_path(), self.annotation_path()) {
            (Some(r), Some(a)) => {
                inputs.push((r.clone(), self.verify_input(&r)?));
                inputs.push((a.clone(), self.verify_input(&a)?));
                Ok(SpikeMap::load(open(&r)?, open(&a)?, None)?)
            }
            (None, None) => Ok(SpikeMap::sars_cov_2()),
            _ => bail!("paths.reference and paths.annotation must be given together"),
        }
    }

    fn input(&self, rel: &str, inputs: &mut Inputs) -> Result<PathBuf> {
        let p = self.path(rel);
        inputs.push((p.clone(), self.verify_input(&p)?));
        Ok(p)
    }

    fn layout(&self, inputs: &mut Inputs) -> Result<TokenizerLayout> {
        let p = self.input(LAYOUT, inputs)?;
        Ok(TokenizerLayout::from_text(open(&p)?)?)
    }

    fn trajectories(&self, rel: &str, inputs: &mut Inputs) -> Result<Vec<Trajectory>> {
        let p = self.input(rel, inputs)?;
        Ok(read_trajectories(open(&p)?)?)
    }

    fn tokens(&self, rel: &str, inputs: &mut Inputs) -> Result<Vec<TokenizedSample>> {
        let p = self.input(rel, inputs)?;
        Ok(read_token_stream(open(&p)?)?)
    }
}

/// Generates a synthetic tree and its companion files into `synth/`.
pub fn simulate(run: &Run) -> Result<String> {
    let cfg = run.cfg.synth_config();
    let out = generate(&cfg).map_err(|e| anyhow::anyhow!("synth: {e}"))?;
    let dir = run.out.join(SYNTH_DIR);
    out.write_dir(&dir)?;
    let files: Vec<PathBuf> = ["tree.jsonl", "reference.fasta", "annotation.tsv", "population.csv", "spectrum.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    let info = Info::from([("leaves".into(), json!(out.leaf_count())), ("nodes".into(), json!(out.nodes.len()))]);
    run.finish("simulate", &[], &files, info)?;
    Ok(format!("simulated {} leaves into {}", out.leaf_count(), dir.display()))
}

fn ingest_one(run: &Run, src: &Path, genome_length: u32, dst: &str, inputs: &mut Inputs) -> Result<(PathBuf, PhyloTree)> {
    inputs.push((src.to_path_buf(), run.verify_input(src)?));
    let tree = parse_tree(open(src)?, genome_length).with_context(|| format!("parsing {}", src.display()))?;
    let dst = run.path(dst);
    write_atomic(&dst, tree.to_jsonl().as_bytes())?;
    Ok((dst, tree))
}

/// Parses and validates the input tree (and the optional evaluation tree),
/// storing normalised copies.
pub fn ingest(run: &Run) -> Result<String> {
    let mut inputs = Inputs::new();
    let reference = run.reference(&mut inputs)?;
    let src = run.cfg.paths.tree.clone().or_else(|| run.synth_file("tree.jsonl")).context(
        "no tree: set paths.tree or run `simulate` first",
    )?;
    let (dst, tree) = ingest_one(run, &src, reference.len(), TREE, &mut inputs)?;
    let mut outputs = vec![dst];
    let leaves = tree.nodes().iter().filter(|n| n.leaf_meta.is_some()).count();
    let variants = tree.nodes().iter().filter(|n| n.variant_name.is_some()).count();
    let mut info = Info::from([
        ("nodes".into(), json!(tree.len())),
        ("sequences".into(), json!(leaves)),
        ("variant_nodes".into(), json!(variants)),
        ("genome_length".into(), json!(reference.len())),
    ]);
    let stale = run.path(EVAL_TREE);
    let mut msg = format!("ingested {} nodes ({leaves} sampled sequences, {variants} variant nodes)", tree.len());
    if let Some(eval_src) = &run.cfg.paths.eval_tree {
        let (dst, eval_tree) = ingest_one(run, eval_src, reference.len(), EVAL_TREE, &mut inputs)?;
        outputs.push(dst);
        info.insert("eval_tree_nodes".into(), json!(eval_tree.len()));
        msg.push_str(&format!("; evaluation tree {} nodes", eval_tree.len()));
    } else if stale.exists() {
        std::fs::remove_file(&stale)?;
    }
    run.finish("ingest", &inputs, &outputs, info)?;
    Ok(msg)
}

/// Builds refined variant definitions from the ingested tree.
pub fn refine_variants(run: &Run) -> Result<String> {
    let mut inputs = Inputs::new();
    let reference = run.reference(&mut inputs)?;
    let tree_path = run.input(TREE, &mut inputs)?;
    let tree = parse_tree(open(&tree_path)?, reference.len())?;
    let nextstrain = match &run.cfg.paths.nextstrain {
        Some(p) => {
            inputs.push((p.clone(), run.verify_input(p)?));
            read_nextstrain(open(p)?)?
        }
        None => BTreeMap::new(),
    };
    let freq = match &run.cfg.paths.frequencies {
        Some(p) => {
            inputs.push((p.clone(), run.verify_input(p)?));
            FrequencyTable::from_csv(open(p)?)?
        }
        None => FrequencyTable::default(),
    };
    let defs = refine_all(&tree, &reference, &nextstrain, &freq, run.cfg.resolve_rule)?;
    let dst = run.path(DEFINITIONS);
    write_atomic(&dst, defs.to_json().as_bytes())?;
    run.finish("refine-variants", &inputs, std::slice::from_ref(&dst), Info::from([("variants".into(), json!(defs.len()))]))?;
    Ok(format!("refined {} variant definitions", defs.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub train: usize,
    pub eval: usize,
    pub dropped_too_long: usize,
    pub excluded_partial_date: usize,
    pub excluded_no_target: usize,
    pub layout_hash: String,
}

/// Effective per-sequence sampling probability under the weighting toggles.
fn sampling_weight(r: bool, t: bool, w: &mutraj_core::weighting::SequenceWeight) -> f64 {
    match (r, t) {
        (true, true) => w.p_adj,
        (true, false) => w.p,
        (false, true) => w.p_adj / w.p,
        (false, false) => 1.0,
    }
}

/// Extracts trajectories, splits by date, tokenizes and weights them.
pub fn build_dataset(run: &Run) -> Result<DatasetSummary> {
    let cfg = &run.cfg;
    cfg.validate()?;
    let mut inputs = Inputs::new();
    let reference = run.reference(&mut inputs)?;
    let tree_path = run.input(TREE, &mut inputs)?;
    let tree = parse_tree(open(&tree_path)?, reference.len())?;
    let defs_path = cfg.paths.definitions.clone().or_else(|| {
        let p = run.path(DEFINITIONS);
        p.exists().then_some(p)
    });
    let defs = match defs_path {
        Some(p) => {
            inputs.push((p.clone(), run.verify_input(&p)?));
            VariantDefinitions::from_json(open(&p)?)?
        }
        None => VariantDefinitions::default(),
    };
    let all = extract_all(&tree, &defs);
    let eval_all = if run.path(EVAL_TREE).exists() {
        let p = run.input(EVAL_TREE, &mut inputs)?;
        Some(extract_all(&parse_tree(open(&p)?, reference.len())?, &defs))
    } else {
        None
    };

    let pop_path = cfg.paths.population.clone().or_else(|| run.synth_file("population.csv"));
    let population = match pop_path {
        Some(p) => {
            inputs.push((p.clone(), run.verify_input(&p)?));
            PopulationTable::from_csv(open(&p)?)?
        }
        None if cfg.representative_weighting => {
            bail!("representative weighting needs paths.population (or set weight.representative = false)")
        }
        None => PopulationTable::default(),
    };
    let has_target = |t: &Trajectory| !t.sequence_mutations.is_empty();
    let densities = density_table(&all, &population, &cfg.weight);
    let eval_densities = eval_all.as_ref().map(|e| density_table(e, &population, &cfg.weight));
    let mut split = split_train_eval(all, cfg.train_cutoff, cfg.eval_cutoff, has_target);
    if let Some(eval_all) = eval_all {
        let other = split_train_eval(eval_all, cfg.train_cutoff, cfg.eval_cutoff, has_target);
        split.eval = other.eval;
        split.excluded_partial_date = other.excluded_partial_date;
        split.excluded_no_target = other.excluded_no_target;
    }
    let mut layout = TokenizerLayout::new(reference.len(), cfg.base_year);
    for t in split.train.iter().chain(&split.eval) {
        layout.register_trajectory_locations(t)?;
    }
    let tokenize = |ts: &[Trajectory]| -> Result<Vec<TokenizedSample>> {
        ts.iter().map(|t| layout.tokenize(t).with_context(|| format!("tokenizing {}", t.meta.name))).collect()
    };
    let mut train_trajs = Vec::with_capacity(split.train.len());
    let mut train_tok = Vec::with_capacity(split.train.len());
    let mut dropped = 0;
    for (t, s) in split.train.iter().zip(tokenize(&split.train)?) {
        if s.len() > cfg.max_seq {
            dropped += 1;
        } else {
            train_trajs.push(t.clone());
            train_tok.push(s);
        }
    }
    let eval_tok = tokenize(&split.eval)?;

    let t0 = cfg.cutoff_month();
    let train_w = sequence_weights(&train_trajs, &densities, &cfg.weight, t0)?;
    let eval_r = representative_weights(&split.eval, eval_densities.as_ref().unwrap_or(&densities), &cfg.weight);

    let mut train_csv = String::from("index,r,p,p_adj,weight\n");
    for (i, w) in train_w.iter().enumerate() {
        let s = sampling_weight(cfg.representative_weighting, cfg.temporal_weighting, w);
        train_csv.push_str(&format!("{i},{},{},{},{}\n", w.r, w.p, w.p_adj, s));
    }
    let mut eval_csv = String::from("index,r\n");
    for (i, r) in eval_r.iter().enumerate() {
        eval_csv.push_str(&format!("{i},{r}\n"));
    }
    let mut density_csv = Vec::new();
    write_density_report(&mut density_csv, &densities)?;
    let mut train_bytes = Vec::new();
    write_token_stream(&mut train_bytes, &train_tok)?;
    let mut eval_bytes = Vec::new();
    write_token_stream(&mut eval_bytes, &eval_tok)?;

    let files: Vec<(&str, Vec<u8>)> = vec![
        (LAYOUT, layout.to_text().into_bytes()),
        (TRAIN_TOKENS, train_bytes),
        (EVAL_TOKENS, eval_bytes),
        (TRAIN_TRAJ, write_trajectories(&train_trajs).into_bytes()),
        (EVAL_TRAJ, write_trajectories(&split.eval).into_bytes()),
        (TRAIN_WEIGHTS, train_csv.into_bytes()),
        (EVAL_WEIGHTS, eval_csv.into_bytes()),
        (DENSITY, density_csv),
    ];
    let mut outputs = Vec::new();
    for (rel, bytes) in files {
        let p = run.path(rel);
        write_atomic(&p, &bytes)?;
        outputs.push(p);
    }
    let summary = DatasetSummary {
        train: train_tok.len(),
        eval: eval_tok.len(),
        dropped_too_long: dropped,
        excluded_partial_date: split.excluded_partial_date,
        excluded_no_target: split.excluded_no_target,
        layout_hash: layout.hash(),
    };
    let info = Info::from([
        ("train".into(), json!(summary.train)),
        ("eval".into(), json!(summary.eval)),
        ("dropped_too_long".into(), json!(dropped)),
        ("excluded_partial_date".into(), json!(summary.excluded_partial_date)),
        ("excluded_no_target".into(), json!(summary.excluded_no_target)),
        ("layout_hash".into(), json!(summary.layout_hash)),
        ("vocab".into(), json!(layout.vocab_size())),
    ]);
    run.finish("build-dataset", &inputs, &outputs, info)?;
    Ok(summary)
}

fn read_weight_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == column)
        .with_context(|| format!("{}: no column {column}", path.display()))?;
    rdr.records()
        .map(|r| {
            let r = r?;
            r[idx].parse::<f64>().with_context(|| format!("{}: bad value {:?}", path.display(), &r[idx]))
        })
        .collect()
}

/// Plans as a `u32` count followed by length-prefixed plan blobs.
fn write_plans(plans: &[EpochPlan]) -> Result<Vec<u8>> {
    let mut out = (plans.len() as u32).to_le_bytes().to_vec();
    for p in plans {
        let mut blob = Vec::new();
        p.write(&mut blob)?;
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    Ok(out)
}

fn read_plans(path: &Path) -> Result<Vec<EpochPlan>> {
    let mut r = open(path)?;
    let mut n = [0u8; 4];
    r.read_exact(&mut n)?;
    (0..u32::from_le_bytes(n))
        .map(|_| {
            let mut len = [0u8; 8];
            r.read_exact(&mut len)?;
            let mut blob = vec![0u8; u64::from_le_bytes(len) as usize];
            r.read_exact(&mut blob).with_context(|| format!("{}: truncated", path.display()))?;
            Ok(EpochPlan::read(blob.as_slice())?)
        })
        .collect()
}

/// Runs the weighted sampler for the configured number of epochs.
pub fn sample_plan(run: &Run) -> Result<String> {
    let mut inputs = Inputs::new();
    let wpath = run.input(TRAIN_WEIGHTS, &mut inputs)?;
    let weights = read_weight_column(&wpath, "weight")?;
    let plans = plan_epochs(&weights, &run.cfg.sampler_config(), run.cfg.epochs)?;
    let dst = run.path(PLAN);
    write_atomic(&dst, &write_plans(&plans)?)?;
    let copies: Vec<u64> = plans.iter().map(EpochPlan::total_copies).collect();
    run.finish(
        "sample-plan",
        &inputs,
        std::slice::from_ref(&dst),
        Info::from([("copies_per_epoch".into(), json!(copies)), ("sequences".into(), json!(weights.len()))]),
    )?;
    Ok(format!("planned {} epochs over {} sequences: {copies:?} copies", plans.len(), weights.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_loss: f64,
    pub resumed_from: Option<u64>,
}

/// Trains (or resumes) the model on the sampled stream.
pub fn train_model(run: &Run, resume: bool) -> Result<TrainSummary> {
    let cfg = &run.cfg;
    cfg.validate()?;
    let mut inputs = Inputs::new();
    let layout = run.layout(&mut inputs)?;
    let samples = run.tokens(TRAIN_TOKENS, &mut inputs)?;
    if !run.path(PLAN).exists() {
        sample_plan(run)?;
    }
    let plan_path = run.input(PLAN, &mut inputs)?;
    let order: Vec<u32> = read_plans(&plan_path)?.iter().flat_map(EpochPlan::expand).collect();
    if order.is_empty() {
        bail!("the sampling plan selected no sequences");
    }
    let model_cfg = cfg.model_config(layout.vocab_size() as usize);
    let train_cfg = cfg.train_config();
    let ck_path = run.path(CHECKPOINT);
    let log_path = run.path(TRAIN_LOG);

    let (mut state, mut log, resumed_from) = if resume && ck_path.exists() {
        let ck = Checkpoint::read(&ck_path)?;
        if ck.header.layout_hash != layout.hash() {
            bail!("cannot resume: checkpoint layout hash {} differs from dataset layout {}", ck.header.layout_hash, layout.hash());
        }
        if ck.header.model != model_cfg {
            bail!("cannot resume: checkpoint model config differs from the current config");
        }
        let step = ck.header.step;
        let rows: Vec<LogRow> = if log_path.exists() { read_log(&log_path)?.into_iter().filter(|r| r.step <= step).collect() } else { Vec::new() };
        (ck.into_state()?, rows, Some(step))
    } else {
        (TrainState::new(Model::new(model_cfg, train_cfg.seed)?, &train_cfg), Vec::new(), None)
    };

    let pairs: Vec<(Vec<u32>, Vec<bool>)> = samples.iter().map(|s| (s.ids(), s.loss_mask())).collect();
    let examples: Vec<Example> = pairs.iter().map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
    let result = train(&mut state, &train_cfg, &examples, &order, train_cfg.steps, |r| log.push(r));
    let mut log_bytes = Vec::new();
    write_log_csv(&mut log_bytes, &log)?;
    write_atomic(&log_path, &log_bytes)?;
    result?;

    Checkpoint::from_state(&state, &train_cfg, &layout.hash()).write(&ck_path)?;
    let info = Info::from([
        ("steps".into(), json!(state.step)),
        ("final_loss".into(), json!(state.last_loss)),
        ("layout_hash".into(), json!(layout.hash())),
        ("model_config_hash".into(), json!(state.model.config().hash())),
        ("parameters".into(), json!(state.model.params().len())),
    ]);
    run.finish("train", &inputs, &[ck_path, log_path], info)?;
    Ok(TrainSummary { steps: state.step, final_loss: state.last_loss, resumed_from })
}

fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok(LogRow { step: r[0].parse()?, lr: r[1].parse()?, loss: r[2].parse()? })
        })
        .collect()
}

/// Loads the checkpoint and checks it was trained on `layout`.
fn load_model(run: &Run, layout: &TokenizerLayout, inputs: &mut Inputs) -> Result<Model> {
    let p = run.input(CHECKPOINT, inputs)?;
    let ck = Checkpoint::read(&p)?;
    if ck.header.layout_hash != layout.hash() {
        bail!(
            "layout hash mismatch: checkpoint {} was trained on tokenizer layout {} but the dataset layout is {}",
            p.display(),
            ck.header.layout_hash,
            layout.hash()
        );
    }
    Ok(ck.into_state()?.model)
}

/// A single prediction request.
#[derive(Debug, Clone, Default)]
pub struct PredictRequest {
    pub mutations: Vec<NtMutation>,
    pub country: Option<String>,
    pub region: Option<String>,
    pub date: Option<PartialDate>,
    pub hide_location: bool,
}

/// Ranks next mutations after the given trajectory.
pub fn predict(run: &Run, req: &PredictRequest) -> Result<Vec<RankedPrediction>> {
    let mut inputs = Inputs::new();
    let layout = run.layout(&mut inputs)?;
    let model = load_model(run, &layout, &mut inputs)?;
    let (c, r) = layout.location_tokens(req.country.as_deref(), req.region.as_deref());
    let mut ids = vec![c, r];
    ids.extend(layout.time_tokens(req.date)?);
    for m in &req.mutations {
        ids.push(layout.token_of(*m)?);
    }
    let k = run.cfg.predict_k;
    let ranked = if req.hide_location {
        rank_without_location(&model, &layout, &ids, k)?
    } else {
        rank_next_mutations(&model, &layout, &ids, k)?
    };
    let mut csv = String::from("rank,token,mutation,prob\n");
    for (i, p) in ranked.iter().enumerate() {
        csv.push_str(&format!("{},{},{},{}\n", i + 1, p.token, p.mutation, p.prob));
    }
    let dst = run.path(PREDICTIONS);
    write_atomic(&dst, csv.as_bytes())?;
    run.finish("predict", &inputs, &[dst], Info::new())?;
    Ok(ranked)
}

fn load_table(path: &Path) -> Result<BaselineTable> {
    BaselineTable::from_csv(open(path)?).with_context(|| format!("reading baseline table {}", path.display()))
}

/// Top-k mutations of the configured table, or of training-set counts when
/// no table is configured.
pub fn baseline_rank(run: &Run) -> Result<Vec<(MutationKey, f64)>> {
    let mut inputs = Inputs::new();
    let (table, mode) = match &run.cfg.paths.baseline_table {
        Some(p) => {
            inputs.push((p.clone(), run.verify_input(p)?));
            (load_table(p)?, run.cfg.baseline_mode)
        }
        None => (BaselineTable::from_training_counts(&run.trajectories(TRAIN_TRAJ, &mut inputs)?), BaselineMode::Count),
    };
    let ranked = rank_baseline(&table, mode, run.cfg.predict_k)?;
    let mut csv = String::from("rank,mutation,score\n");
    for (i, (m, s)) in ranked.iter().enumerate() {
        csv.push_str(&format!("{},{m},{s}\n", i + 1));
    }
    let dst = run.path(BASELINE_RANKING);
    write_atomic(&dst, csv.as_bytes())?;
    run.finish("baseline-rank", &inputs, &[dst], Info::from([("mode".into(), json!(mode.to_string()))]))?;
    Ok(ranked)
}

fn clade_rankers(run: &Run, layout: &TokenizerLayout, inputs: &mut Inputs) -> Result<CladeRankers> {
    let mode = run.cfg.baseline_mode;
    let mut out = CladeRankers::default();
    if let Some(p) = &run.cfg.paths.baseline_table {
        inputs.push((p.clone(), run.verify_input(p)?));
        out.default = Some(BaselineRanker::new(&load_table(p)?, mode, layout)?);
    }
    if let Some(dir) = &run.cfg.paths.clade_tables {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for p in files {
            let clade = p.file_stem().expect("csv file").to_string_lossy().to_string();
            inputs.push((p.clone(), run.verify_input(&p)?));
            out.clades.insert(clade, BaselineRanker::new(&load_table(&p)?, mode, layout)?);
        }
    }
    if out.default.is_none() && out.clades.is_empty() {
        bail!("eval.predictor = baseline needs paths.baseline_table or paths.clade_tables");
    }
    Ok(out)
}

/// Report file stem for the configured predictor and location mode.
pub fn report_stem(run: &Run) -> String {
    let e = &run.cfg.eval;
    format!("{}_{}{}", e.task, e.predictor, if e.hide_location { "_noloc" } else { "" })
}

/// Recall@k of the configured predictor on the evaluation split.
pub fn evaluate(run: &Run) -> Result<EvalOutcome> {
    let cfg = &run.cfg;
    cfg.validate()?;
    let mut inputs = Inputs::new();
    let layout = run.layout(&mut inputs)?;
    let trajs = run.trajectories(EVAL_TRAJ, &mut inputs)?;
    let samples = run.tokens(EVAL_TOKENS, &mut inputs)?;
    let wpath = run.input(EVAL_WEIGHTS, &mut inputs)?;
    let weights = read_weight_column(&wpath, "r")?;
    if trajs.len() != samples.len() || trajs.len() != weights.len() {
        bail!("evaluation artifacts disagree in length; rerun build-dataset");
    }
    let spike = match cfg.eval.task {
        mutraj_core::eval::EvalTask::Spike => Some(run.spike_map(&mut inputs)?),
        mutraj_core::eval::EvalTask::Nucleotide => None,
    };
    let opts = EvalOptions { task: cfg.eval.task, ks: cfg.eval.ks.clone(), hide_location: cfg.eval.hide_location };

    let outcome = match cfg.eval.predictor {
        PredictorKind::Model => {
            let model = load_model(run, &layout, &mut inputs)?;
            let p = ModelPredictor { model: &model, layout: &layout };
            evaluate_routed(&trajs, &samples, &weights, &|_| Some(&p as &dyn Predictor), &layout, spike.as_ref(), &opts)
        }
        PredictorKind::Baseline => {
            let rankers = clade_rankers(run, &layout, &mut inputs)?;
            let route = |t: &Trajectory| rankers.select(&t.variant_name).map(|r| r as &dyn Predictor);
            evaluate_routed(&trajs, &samples, &weights, &route, &layout, spike.as_ref(), &opts)
        }
        PredictorKind::Count => {
            let train_trajs = run.trajectories(TRAIN_TRAJ, &mut inputs)?;
            let table = BaselineTable::from_training_counts(&train_trajs);
            let p = BaselineRanker::new(&table, BaselineMode::Count, &layout)?;
            evaluate_routed(&trajs, &samples, &weights, &|_| Some(&p as &dyn Predictor), &layout, spike.as_ref(), &opts)
        }
        PredictorKind::Random => {
            let reference = run.reference(&mut inputs)?;
            let p = RandomPredictor { candidates: nucleotide_candidates(&layout, &reference.seq), seed: cfg.seed };
            evaluate_routed(&trajs, &samples, &weights, &|_| Some(&p as &dyn Predictor), &layout, spike.as_ref(), &opts)
        }
    };

    let stem = report_stem(run);
    let report = run.path(&format!("eval/report_{stem}.csv"));
    let months = run.path(&format!("eval/months_{stem}.csv"));
    let mut buf = Vec::new();
    write_report_csv(&mut buf, &outcome.report())?;
    write_atomic(&report, &buf)?;
    let mut buf = Vec::new();
    write_month_series_csv(&mut buf, &outcome)?;
    write_atomic(&months, &buf)?;
    let info = Info::from([
        ("evaluated".into(), json!(outcome.sequences.len())),
        ("excluded_too_long".into(), json!(outcome.excluded_too_long)),
        ("excluded_no_target".into(), json!(outcome.excluded_no_target)),
    ]);
    run.finish(&format!("evaluate-{stem}"), &inputs, &[report, months], info)?;
    Ok(outcome)
}

/// Hash of a file's bytes, for callers comparing artifacts across runs.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?))
}
