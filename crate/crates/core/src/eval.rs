//! Teacher-forced recall@k over private mutations, with macro and
//! representativeness-weighted aggregation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::date::YearMonth;
use crate::genome::{AaMutation, GenomeState, NtState, SpikeEffect, SpikeMap};
use crate::tokenizer::{TokenizedSample, TokenizerLayout, PREFIX_LEN};
use crate::tree::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EvalTask {
    Nucleotide,
    Spike,
}

impl fmt::Display for EvalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalTask::Nucleotide => "nucleotide",
            EvalTask::Spike => "spike",
        })
    }
}

impl std::str::FromStr for EvalTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nucleotide" => Ok(EvalTask::Nucleotide),
            "spike" => Ok(EvalTask::Spike),
            _ => Err(format!("unknown task {s:?}")),
        }
    }
}

/// Something that ranks next mutations for a tokenized context
/// (prefix followed by trajectory tokens).
pub trait Predictor: Sync {
    /// Walks candidate mutation tokens best first, returning the first `k`
    /// for which `keep` is true.
    fn rank(&self, context: &[u32], k: usize, keep: &mut dyn FnMut(u32) -> bool) -> Vec<u32>;

    /// Direct amino-acid ranking, for predictors that score residues natively.
    fn rank_aa(&self, _context: &[u32], _k: usize) -> Option<Vec<AaMutation>> {
        None
    }

    /// Longest context the predictor accepts.
    fn max_context(&self) -> Option<usize> {
        None
    }
}

/// Every mutation token whose state differs from the reference.
pub fn nucleotide_candidates(layout: &TokenizerLayout, reference: &[NtState]) -> Vec<u32> {
    layout
        .mutation_block()
        .filter(|&id| {
            let m = layout.mutation_of_token(id).expect("mutation block");
            reference[m.site as usize - 1] != m.to
        })
        .collect()
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Uniform random ranking over a fixed candidate set; deterministic per
/// (seed, context).
#[derive(Debug, Clone)]
pub struct RandomPredictor {
    pub candidates: Vec<u32>,
    pub seed: u64,
}

impl Predictor for RandomPredictor {
    fn rank(&self, context: &[u32], k: usize, keep: &mut dyn FnMut(u32) -> bool) -> Vec<u32> {
        let stream = context.iter().fold(splitmix(self.seed), |h, &t| splitmix(h ^ t as u64));
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let n = self.candidates.len();
        let mut swapped: HashMap<usize, usize> = HashMap::new();
        let mut out = Vec::with_capacity(k.min(n));
        for i in 0..n {
            if out.len() == k {
                break;
            }
            let j = rng.random_range(i..n);
            let vj = swapped.get(&j).copied().unwrap_or(j);
            let vi = swapped.get(&i).copied().unwrap_or(i);
            swapped.insert(j, vi);
            let pick = self.candidates[vj];
            if keep(pick) {
                out.push(pick);
            }
        }
        out
    }
}

/// Private spike residue changes of a trajectory as `(private index, aa)`.
pub fn spike_targets(spike: &SpikeMap, t: &Trajectory) -> Vec<(usize, AaMutation)> {
    let mut state = GenomeState::from_reference(&spike.genome);
    state.apply_all(&t.variant_mutations);
    let mut out = Vec::new();
    for (i, m) in t.sequence_mutations.iter().enumerate() {
        if let Some(ctx) = state.codon_at_site(&spike.orf, m.site) {
            if let SpikeEffect::Residue(aa) = spike.aa_mutation_of(*m, ctx) {
                out.push((i, aa));
            }
        }
        state.apply(*m);
    }
    out
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub task: EvalTask,
    pub ks: Vec<usize>,
    /// Replace the country and region tokens with the unknown token.
    pub hide_location: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceOutcome {
    pub index: usize,
    pub month: Option<YearMonth>,
    pub weight: f64,
    pub steps: usize,
    /// One entry per configured k.
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub task: EvalTask,
    pub ks: Vec<usize>,
    pub hide_location: bool,
    pub sequences: Vec<SequenceOutcome>,
    pub excluded_too_long: usize,
    pub excluded_no_target: usize,
}

/// Rank (0-based) of the first hit in a best-first list, if any.
fn hit_rank<T: PartialEq>(ranked: &[T], target: &T) -> Option<usize> {
    ranked.iter().position(|x| x == target)
}

enum SeqResult {
    Done(SequenceOutcome),
    TooLong,
    NoTarget,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_one(
    index: usize,
    t: &Trajectory,
    sample: &TokenizedSample,
    weight: f64,
    predictor: &dyn Predictor,
    layout: &TokenizerLayout,
    spike: Option<&SpikeMap>,
    opts: &EvalOptions,
) -> SeqResult {
    let kmax = opts.ks.iter().copied().max().unwrap_or(0);
    let mut ids = sample.ids();
    if opts.hide_location {
        ids[0] = layout.unknown_token();
        ids[1] = layout.unknown_token();
    }
    let variant_end = PREFIX_LEN + sample.split_index;
    let mut ranks: Vec<Option<usize>> = Vec::new();
    match opts.task {
        EvalTask::Nucleotide => {
            let n = sample.sequence_tokens().len();
            if n == 0 {
                return SeqResult::NoTarget;
            }
            if predictor.max_context().is_some_and(|max| variant_end + n - 1 > max) {
                return SeqResult::TooLong;
            }
            for i in 0..n {
                let ctx = &ids[..variant_end + i];
                let ranked = predictor.rank(ctx, kmax, &mut |_| true);
                ranks.push(hit_rank(&ranked, &ids[variant_end + i]));
            }
        }
        EvalTask::Spike => {
            let spike = spike.expect("spike task needs a spike map");
            let targets = spike_targets(spike, t);
            let Some(&(last, _)) = targets.last() else {
                return SeqResult::NoTarget;
            };
            if predictor.max_context().is_some_and(|max| variant_end + last > max) {
                return SeqResult::TooLong;
            }
            let mut state = GenomeState::from_reference(&spike.genome);
            state.apply_all(&t.variant_mutations);
            let mut applied = 0;
            for (i, target) in targets {
                state.apply_all(&t.sequence_mutations[applied..i]);
                applied = i;
                let ctx = &ids[..variant_end + i];
                let ranked = match predictor.rank_aa(ctx, kmax) {
                    Some(aa) => aa,
                    None => {
                        let mut seen = HashSet::new();
                        let mut aa_ranked = Vec::new();
                        predictor.rank(ctx, kmax, &mut |id| {
                            let Some(m) = layout.mutation_of_token(id) else { return false };
                            let Some(codon) = state.codon_at_site(&spike.orf, m.site) else { return false };
                            match spike.aa_mutation_of(m, codon) {
                                SpikeEffect::Residue(aa) if seen.insert(aa.clone()) => {
                                    aa_ranked.push(aa);
                                    true
                                }
                                _ => false,
                            }
                        });
                        aa_ranked
                    }
                };
                ranks.push(hit_rank(&ranked, &target));
            }
        }
    }
    let steps = ranks.len();
    let recall = opts
        .ks
        .iter()
        .map(|&k| ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count() as f64 / steps as f64)
        .collect();
    let month = t.meta.collected.and_then(|c| c.year_month());
    SeqResult::Done(SequenceOutcome { index, month, weight, steps, recall })
}

/// Evaluates every trajectory, in parallel. `samples` and `weights` are
/// aligned with `trajectories`.
pub fn evaluate(
    trajectories: &[Trajectory],
    samples: &[TokenizedSample],
    weights: &[f64],
    predictor: &dyn Predictor,
    layout: &TokenizerLayout,
    spike: Option<&SpikeMap>,
    opts: &EvalOptions,
) -> EvalOutcome {
    evaluate_routed(trajectories, samples, weights, &|_| Some(predictor), layout, spike, opts)
}

/// As [`evaluate`], choosing a predictor per trajectory. Trajectories routed
/// to `None` are skipped and counted as having no target.
pub fn evaluate_routed<'p>(
    trajectories: &[Trajectory],
    samples: &[TokenizedSample],
    weights: &[f64],
    route: &(dyn Fn(&Trajectory) -> Option<&'p dyn Predictor> + Sync),
    layout: &TokenizerLayout,
    spike: Option<&SpikeMap>,
    opts: &EvalOptions,
) -> EvalOutcome {
    assert_eq!(trajectories.len(), samples.len());
    assert_eq!(trajectories.len(), weights.len());
    let results: Vec<SeqResult> = (0..trajectories.len())
        .into_par_iter()
        .map(|i| match route(&trajectories[i]) {
            Some(p) => evaluate_one(i, &trajectories[i], &samples[i], weights[i], p, layout, spike, opts),
            None => SeqResult::NoTarget,
        })
        .collect();
    let mut out = EvalOutcome {
        task: opts.task,
        ks: opts.ks.clone(),
        hide_location: opts.hide_location,
        sequences: Vec::new(),
        excluded_too_long: 0,
        excluded_no_target: 0,
    };
    for r in results {
        match r {
            SeqResult::Done(s) => out.sequences.push(s),
            SeqResult::TooLong => out.excluded_too_long += 1,
            SeqResult::NoTarget => out.excluded_no_target += 1,
        }
    }
    out
}

/// `(macro, weighted)` means; `None` for an empty set.
pub fn aggregate(recalls: &[f64], weights: &[f64]) -> Option<(f64, f64)> {
    if recalls.is_empty() {
        return None;
    }
    let macro_recall = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let wsum: f64 = weights.iter().sum();
    let weighted = recalls.iter().zip(weights).map(|(r, w)| r * w).sum::<f64>() / wsum;
    Some((macro_recall, weighted))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallRow {
    pub task: EvalTask,
    pub k: usize,
    pub slice: String,
    pub macro_recall: f64,
    pub weighted_recall: f64,
    pub n_sequences: usize,
}

impl EvalOutcome {
    fn rows_for(&self, slice: &str, seqs: &[&SequenceOutcome]) -> Vec<RecallRow> {
        let weights: Vec<f64> = seqs.iter().map(|s| s.weight).collect();
        self.ks
            .iter()
            .enumerate()
            .filter_map(|(ki, &k)| {
                let recalls: Vec<f64> = seqs.iter().map(|s| s.recall[ki]).collect();
                let (macro_recall, weighted_recall) = aggregate(&recalls, &weights)?;
                Some(RecallRow { task: self.task, k, slice: slice.to_string(), macro_recall, weighted_recall, n_sequences: seqs.len() })
            })
            .collect()
    }

    fn label(&self, base: &str) -> String {
        if self.hide_location {
            format!("{base};location=hidden")
        } else {
            base.to_string()
        }
    }

    /// The whole set.
    pub fn overall(&self) -> Vec<RecallRow> {
        let all: Vec<&SequenceOutcome> = self.sequences.iter().collect();
        self.rows_for(&self.label("all"), &all)
    }

    /// One group of rows per collection month; months without sequences
    /// are absent.
    pub fn by_month(&self) -> BTreeMap<YearMonth, Vec<RecallRow>> {
        let mut groups: BTreeMap<YearMonth, Vec<&SequenceOutcome>> = BTreeMap::new();
        for s in &self.sequences {
            if let Some(m) = s.month {
                groups.entry(m).or_default().push(s);
            }
        }
        groups.into_iter().map(|(m, seqs)| (m, self.rows_for(&self.label(&format!("month={m}")), &seqs))).collect()
    }

    pub fn report(&self) -> Vec<RecallRow> {
        let mut rows = self.overall();
        rows.extend(self.by_month().into_values().flatten());
        rows
    }

    pub fn recall_at(&self, k: usize) -> Option<(f64, f64)> {
        self.overall().into_iter().find(|r| r.k == k).map(|r| (r.macro_recall, r.weighted_recall))
    }
}

pub fn write_report_csv<W: Write>(w: W, rows: &[RecallRow]) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["task", "k", "slice", "macro_recall", "weighted_recall", "n_sequences"])?;
    for r in rows {
        wtr.write_record([
            r.task.to_string(),
            r.k.to_string(),
            r.slice.clone(),
            r.macro_recall.to_string(),
            r.weighted_recall.to_string(),
            r.n_sequences.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Month series for plotting: `month,k,macro_recall,weighted_recall,n_sequences`.
pub fn write_month_series_csv<W: Write>(w: W, outcome: &EvalOutcome) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["month", "k", "macro_recall", "weighted_recall", "n_sequences"])?;
    for (m, rows) in outcome.by_month() {
        for r in rows {
            wtr.write_record([
                m.to_string(),
                r.k.to_string(),
                r.macro_recall.to_string(),
                r.weighted_recall.to_string(),
                r.n_sequences.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::PartialDate;
    use crate::genome::NtMutation;
    use crate::tree::SequenceMeta;
    use chrono::NaiveDate;

    /// Ranks a fixed list, skipping whatever `keep` rejects.
    struct Fixed(Vec<u32>);

    impl Predictor for Fixed {
        fn rank(&self, _context: &[u32], k: usize, keep: &mut dyn FnMut(u32) -> bool) -> Vec<u32> {
            self.0.iter().copied().filter(|&t| keep(t)).take(k).collect()
        }
    }

    fn traj(variant: &[&str], private: &[&str], date: &str) -> Trajectory {
        Trajectory {
            meta: SequenceMeta {
                name: "s".into(),
                collected: Some(date.parse::<PartialDate>().unwrap()),
                released: NaiveDate::from_ymd_opt(2026, 1, 1).unwrap(),
                country: Some("X".into()),
                region: None,
            },
            variant_name: "V".into(),
            variant_mutations: variant.iter().map(|s| s.parse().unwrap()).collect(),
            sequence_mutations: private.iter().map(|s| s.parse().unwrap()).collect(),
        }
    }

    fn opts(task: EvalTask, ks: &[usize]) -> EvalOptions {
        EvalOptions { task, ks: ks.to_vec(), hide_location: false }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[1.0, 0.0], &[100.0, 300.0]), Some((0.5, 0.25)));
        assert_eq!(aggregate(&[0.3, 0.9], &[2.0, 2.0]).map(|(m, w)| (m - w).abs() < 1e-15), Some(true));
        assert_eq!(aggregate(&[0.7], &[5.0]), Some((0.7, 0.7)));
        assert_eq!(aggregate(&[], &[]), None);
    }

    #[test]
    fn half_hit_sequence() {
        let layout = TokenizerLayout::new(100, 2019);
        let t = traj(&["1A"], &["2T", "3C"], "2020-03-01");
        let s = layout.tokenize(&t).unwrap();
        let hit = layout.token_of("2T".parse().unwrap()).unwrap();
        let p = Fixed(vec![hit, 0, 1, 2]);
        let out = evaluate(&[t], &[s], &[1.0], &p, &layout, None, &opts(EvalTask::Nucleotide, &[1, 4]));
        assert_eq!(out.sequences[0].recall, vec![0.5, 0.5]);
        assert_eq!(out.sequences[0].steps, 2);
    }

    #[test]
    fn exhaustive_list_recalls_everything() {
        let layout = TokenizerLayout::new(50, 2019);
        let t = traj(&[], &["2T", "3C", "40-"], "2020-03-01");
        let s = layout.tokenize(&t).unwrap();
        let p = Fixed(layout.mutation_block().collect());
        let n = layout.mutation_block().len();
        let out = evaluate(&[t], &[s], &[1.0], &p, &layout, None, &opts(EvalTask::Nucleotide, &[1, 10, n]));
        let r = &out.sequences[0].recall;
        assert_eq!(r[2], 1.0);
        assert!(r[0] <= r[1] && r[1] <= r[2]);
    }

    #[test]
    fn exclusions_are_counted() {
        struct Short;
        impl Predictor for Short {
            fn rank(&self, _: &[u32], _: usize, _: &mut dyn FnMut(u32) -> bool) -> Vec<u32> {
                vec![]
            }
            fn max_context(&self) -> Option<usize> {
                Some(PREFIX_LEN + 1)
            }
        }
        let layout = TokenizerLayout::new(100, 2019);
        let ts = vec![traj(&["1A"], &["2T"], "2020-01-01"), traj(&["1A"], &["2T", "3C"], "2020-01-01"), traj(&["1A"], &[], "2020-01-01")];
        let ss: Vec<_> = ts.iter().map(|t| layout.tokenize(t).unwrap()).collect();
        let out = evaluate(&ts, &ss, &[1.0; 3], &Short, &layout, None, &opts(EvalTask::Nucleotide, &[1]));
        assert_eq!((out.sequences.len(), out.excluded_too_long, out.excluded_no_target), (1, 1, 1));
    }

    #[test]
    fn month_slices_add_up() {
        let layout = TokenizerLayout::new(100, 2019);
        let ts = vec![
            traj(&[], &["2T"], "2020-01-03"),
            traj(&[], &["3T"], "2020-01-09"),
            traj(&[], &["2T", "4A"], "2020-03-01"),
        ];
        let ss: Vec<_> = ts.iter().map(|t| layout.tokenize(t).unwrap()).collect();
        let w = [100.0, 200.0, 700.0];
        let p = Fixed(vec![layout.token_of("2T".parse().unwrap()).unwrap()]);
        let out = evaluate(&ts, &ss, &w, &p, &layout, None, &opts(EvalTask::Nucleotide, &[1]));
        let months = out.by_month();
        assert_eq!(months.len(), 2);
        let (mut num, mut den) = (0.0, 0.0);
        for rows in months.values() {
            let n: f64 = out.sequences.iter().filter(|s| s.month.map(|m| m.to_string()) == rows[0].slice.strip_prefix("month=").map(String::from)).map(|s| s.weight).sum();
            num += rows[0].weighted_recall * n;
            den += n;
        }
        let (_, global) = out.recall_at(1).unwrap();
        assert!((num / den - global).abs() < 1e-12);
        assert_eq!(global, (100.0 + 700.0 * 0.5) / 1000.0);
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &out.report()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("task,k,slice,macro_recall,weighted_recall,n_sequences\nnucleotide,1,all,"));
        assert!(text.contains("nucleotide,1,month=2020-03,0.5,0.5,1"));
    }

    #[test]
    fn hidden_location_reaches_predictor() {
        struct Probe(u32);
        impl Predictor for Probe {
            fn rank(&self, ctx: &[u32], _: usize, _: &mut dyn FnMut(u32) -> bool) -> Vec<u32> {
                assert_eq!((ctx[0], ctx[1]), (self.0, self.0));
                vec![]
            }
        }
        let mut layout = TokenizerLayout::new(100, 2019);
        layout.register_location("X").unwrap();
        let t = traj(&[], &["2T"], "2020-01-03");
        let s = layout.tokenize(&t).unwrap();
        assert_ne!(s.prefix[0], layout.unknown_token());
        let o = EvalOptions { hide_location: true, ..opts(EvalTask::Nucleotide, &[1]) };
        let out = evaluate(&[t], &[s], &[1.0], &Probe(layout.unknown_token()), &layout, None, &o);
        assert_eq!(out.overall()[0].slice, "all;location=hidden");
    }

    #[test]
    fn spike_matching_uses_current_codon() {
        let spike = SpikeMap::sars_cov_2();
        let layout = TokenizerLayout::sars_cov_2();
        // codon 614 is GAT at 23402..=23404
        let t = traj(&[], &["23403G"], "2020-03-01");
        assert_eq!(spike_targets(&spike, &t), vec![(0, "S:D614G".parse().unwrap())]);
        let s = layout.tokenize(&t).unwrap();
        let tok = |m: &str| layout.token_of(m.parse::<NtMutation>().unwrap()).unwrap();
        // outside-spike and no-op tokens are skipped, so D614G ranks first
        let p = Fixed(vec![tok("100T"), tok("23402G"), tok("23403G")]);
        let out = evaluate(&[t.clone()], &[s.clone()], &[1.0], &p, &layout, Some(&spike), &opts(EvalTask::Spike, &[1]));
        assert_eq!(out.sequences[0].recall, vec![1.0]);
        // GAT -> GAC is synonymous, after which GAC -> GGC is still D614G
        let t2 = traj(&["23404C"], &["23403G"], "2020-03-01");
        assert_eq!(spike_targets(&spike, &t2), vec![(0, "S:D614G".parse().unwrap())]);
        let no_spike = traj(&[], &["100T"], "2020-03-01");
        let s3 = layout.tokenize(&no_spike).unwrap();
        let out = evaluate(&[no_spike], &[s3], &[1.0], &p, &layout, Some(&spike), &opts(EvalTask::Spike, &[1]));
        assert_eq!(out.excluded_no_target, 1);
    }

    #[test]
    fn random_predictor_is_uniform() {
        let layout = TokenizerLayout::sars_cov_2();
        let spike = SpikeMap::sars_cov_2();
        let cands = nucleotide_candidates(&layout, &spike.genome.seq);
        assert_eq!(cands.len(), 29_903 * 4);
        let p = RandomPredictor { candidates: cands.clone(), seed: 3 };
        let a = p.rank(&[1, 2, 3], 100, &mut |_| true);
        assert_eq!(a, p.rank(&[1, 2, 3], 100, &mut |_| true));
        assert_ne!(a, p.rank(&[1, 2, 4], 100, &mut |_| true));
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 100);
        let small = RandomPredictor { candidates: vec![5, 6, 7], seed: 0 };
        let mut all = small.rank(&[], 10, &mut |_| true);
        all.sort();
        assert_eq!(all, vec![5, 6, 7]);
        assert_eq!(small.rank(&[], 10, &mut |t| t != 6).len(), 2);
    }
}
