//! Synthetic mutation-annotated trees with a planted next-mutation spectrum.
//!
//! Each mutation is drawn from a sparse table conditioned on the site bucket
//! of the mutation before it. Leaf counts per (region, month) are fixed by the
//! configured densities, so the density table is reproduced exactly.

use std::collections::{BTreeMap, HashSet};
use std::io;
use std::path::Path;

use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::date::{PartialDate, YearMonth};
use crate::genome::{write_annotation, AnnotationRecord, NtMutation, NtState, ReferenceGenome, SPIKE_ORF};
use crate::tokenizer::region_key;
use crate::tree::{NodeSpec, PhyloTree, SequenceMeta, Trajectory, ROOT_VARIANT};
use crate::weighting::PopulationTable;

const STREAM_MAIN: u64 = 0;
const STREAM_SHIFT_DECISION: u64 = 1;
const STREAM_ALT_TABLE: u64 = 2;
const STREAM_REFERENCE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub country: String,
    pub region: Option<String>,
    pub population: f64,
    /// Sequences per million population per month.
    pub density: f64,
}

impl RegionSpec {
    pub fn monthly_count(&self) -> u64 {
        (self.density * self.population / 1e6).round() as u64
    }
}

/// From month index `month` on, draws switch to the alternate table with
/// probability rising linearly to 1 over `ramp` months.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub month: u32,
    pub ramp: u32,
}

impl ShiftSpec {
    pub fn alternate_share(&self, month: u32) -> f64 {
        let ramp = self.ramp.max(1) as f64;
        ((month as f64 - self.month as f64 + 1.0) / ramp).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub genome_length: u32,
    /// Spike ORF sites, inclusive, including its stop codon.
    pub orf_start: u32,
    pub orf_end: u32,
    pub start: YearMonth,
    pub months: u32,
    pub regions: Vec<RegionSpec>,
    pub variants: u32,
    pub variant_mutations: u32,
    pub subclades_per_month: u32,
    pub subclade_mutations: u32,
    /// Leaf branches carry between 1 and this many spectrum mutations.
    pub private_max: u32,
    pub buckets: u32,
    /// Non-zero entries per spectrum row.
    pub support: u32,
    pub zipf_exponent: f64,
    /// Mean number of uniform spurious mutations appended per leaf.
    pub noise_rate: f64,
    pub release_lag_days: u32,
    pub shift: Option<ShiftSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let r = |country: &str, region: Option<&str>, population: f64, density: f64| RegionSpec {
            country: country.into(),
            region: region.map(Into::into),
            population,
            density,
        };
        Self {
            seed: 1,
            genome_length: 1000,
            orf_start: 301,
            orf_end: 600,
            start: YearMonth { year: 2021, month: 1 },
            months: 24,
            regions: vec![
                r("USA", Some("East"), 50e6, 10.0),
                r("USA", Some("West"), 40e6, 20.0),
                r("France", None, 60e6, 5.0),
                r("Kenya", None, 50e6, 0.5),
                r("Brazil", None, 200e6, 2.0),
                r("Japan", None, 120e6, 1.0),
            ],
            variants: 12,
            variant_mutations: 3,
            subclades_per_month: 3,
            subclade_mutations: 1,
            private_max: 4,
            buckets: 20,
            support: 8,
            zipf_exponent: 1.0,
            noise_rate: 0.2,
            release_lag_days: 30,
            shift: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |c: bool, m: &str| if c { Ok(()) } else { Err(m.to_string()) };
        ok(self.genome_length >= 30, "genome_length too small")?;
        ok(
            self.orf_start >= 1 && self.orf_end <= self.genome_length && self.orf_end > self.orf_start + 5,
            "ORF outside genome",
        )?;
        ok((self.orf_end - self.orf_start + 1) % 3 == 0, "ORF length not a multiple of 3")?;
        ok(self.months >= 1 && self.variants >= 1 && self.private_max >= 1, "need months, variants, private_max >= 1")?;
        ok(self.buckets >= 1 && self.buckets <= self.genome_length, "bad bucket count")?;
        ok(self.support >= 1 && self.support as u64 <= 4 * self.genome_length as u64, "bad support")?;
        ok(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0, "bad zipf exponent")?;
        ok(self.noise_rate.is_finite() && self.noise_rate >= 0.0, "bad noise rate")?;
        ok(self.regions.iter().all(|r| r.population > 0.0 && r.density >= 0.0), "bad region")
    }

    /// The same config with a shift planted.
    pub fn with_shift(&self, shift: ShiftSpec) -> Self {
        Self { shift: Some(shift), ..self.clone() }
    }

    fn shift_effective(&self) -> Option<ShiftSpec> {
        self.shift.filter(|s| s.month < self.months)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub next: Vec<NtMutation>,
    pub p: Vec<f64>,
}

/// Next-mutation table: row `b` applies after a mutation in site bucket `b`;
/// the last row applies when there is no previous mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub genome_length: u32,
    pub buckets: u32,
    pub rows: Vec<SpectrumRow>,
}

fn random_change(reference: &ReferenceGenome, rng: &mut ChaCha20Rng) -> NtMutation {
    let site = rng.random_range(1..=reference.len());
    let others: Vec<NtState> = NtState::ALL.into_iter().filter(|&s| s != reference.state(site)).collect();
    NtMutation::new(site, others[rng.random_range(0..others.len())])
}

impl Spectrum {
    pub fn random(
        reference: &ReferenceGenome,
        buckets: u32,
        support: u32,
        zipf_exponent: f64,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        let weights: Vec<f64> = (1..=support).map(|i| (i as f64).powf(-zipf_exponent)).collect();
        let total: f64 = weights.iter().sum();
        let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let rows = (0..=buckets)
            .map(|_| {
                let mut seen = HashSet::new();
                let mut next = Vec::with_capacity(support as usize);
                while next.len() < support as usize {
                    let m = random_change(reference, rng);
                    if seen.insert(m) {
                        next.push(m);
                    }
                }
                SpectrumRow { next, p: p.clone() }
            })
            .collect();
        Self { genome_length: reference.len(), buckets, rows }
    }

    pub fn bucket(&self, site: u32) -> usize {
        ((site as u64 - 1) * self.buckets as u64 / self.genome_length as u64) as usize
    }

    pub fn row_index(&self, prev: Option<NtMutation>) -> usize {
        prev.map_or(self.buckets as usize, |m| self.bucket(m.site))
    }

    /// One unconstrained draw.
    pub fn sample(&self, prev: Option<NtMutation>, rng: &mut ChaCha20Rng) -> NtMutation {
        let row = &self.rows[self.row_index(prev)];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (m, p) in row.next.iter().zip(&row.p) {
            acc += p;
            if u < acc {
                return *m;
            }
        }
        *row.next.last().expect("non-empty row")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub base: Spectrum,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternate: Option<Spectrum>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<ShiftSpec>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub config: SynthConfig,
    pub nodes: Vec<NodeSpec>,
    pub reference: ReferenceGenome,
    pub annotation: AnnotationRecord,
    pub population: PopulationTable,
    pub truth: GroundTruth,
    /// Leaves generated per (population key, month).
    pub counts: BTreeMap<(String, YearMonth), u64>,
}

fn random_reference(cfg: &SynthConfig) -> ReferenceGenome {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_REFERENCE);
    let mut seq: Vec<NtState> =
        (0..cfg.genome_length).map(|_| NtState::BASES[rng.random_range(0..4)]).collect();
    let codons = (cfg.orf_end - cfg.orf_start + 1) / 3;
    for c in 0..codons {
        let at = (cfg.orf_start - 1 + c * 3) as usize;
        let codon = if c + 1 == codons {
            [NtState::T, NtState::A, NtState::A]
        } else {
            loop {
                let codon = [0; 3].map(|_| NtState::BASES[rng.random_range(0..4)]);
                if crate::genome::translate_codon(codon).expect("bases") != crate::genome::STOP {
                    break codon;
                }
            }
        };
        seq[at..at + 3].copy_from_slice(&codon);
    }
    ReferenceGenome { name: format!("synthetic-{}", cfg.seed), seq }
}

struct Drawer<'a> {
    base: &'a Spectrum,
    alternate: Option<&'a Spectrum>,
    shift: Option<ShiftSpec>,
    reference: &'a ReferenceGenome,
    rng: ChaCha20Rng,
    decision: ChaCha20Rng,
}

impl Drawer<'_> {
    /// Draws a mutation not already on `path`, following `path`'s last entry.
    fn next(&mut self, path: &[NtMutation], month: Option<u32>) -> NtMutation {
        let table = match (self.alternate, self.shift, month) {
            (Some(alt), Some(shift), Some(m)) => {
                let share = shift.alternate_share(m);
                if share > 0.0 && self.decision.random::<f64>() < share {
                    alt
                } else {
                    self.base
                }
            }
            _ => self.base,
        };
        let prev = path.last().copied();
        for _ in 0..64 {
            let m = table.sample(prev, &mut self.rng);
            if !path.contains(&m) {
                return m;
            }
        }
        self.noise(path)
    }

    fn noise(&mut self, path: &[NtMutation]) -> NtMutation {
        loop {
            let m = random_change(self.reference, &mut self.rng);
            if !path.contains(&m) {
                return m;
            }
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, String> {
    cfg.validate()?;
    let reference = random_reference(cfg);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_MAIN);
    let base = Spectrum::random(&reference, cfg.buckets, cfg.support, cfg.zipf_exponent, &mut rng);
    let shift = cfg.shift_effective();
    let alternate = shift.map(|_| {
        let mut alt_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        alt_rng.set_stream(STREAM_ALT_TABLE);
        Spectrum::random(&reference, cfg.buckets, cfg.support, cfg.zipf_exponent, &mut alt_rng)
    });
    let mut decision = ChaCha20Rng::seed_from_u64(cfg.seed);
    decision.set_stream(STREAM_SHIFT_DECISION);
    let mut d = Drawer { base: &base, alternate: alternate.as_ref(), shift, reference: &reference, rng, decision };

    let mut nodes = vec![NodeSpec {
        id: ROOT_VARIANT.into(),
        parent: None,
        branch_mutations: vec![],
        variant_name: None,
        leaf_meta: None,
    }];

    // variants: each hangs off the root or an earlier variant
    let mut variants: Vec<(String, Vec<NtMutation>)> = Vec::new();
    for v in 0..cfg.variants {
        let parent = d.rng.random_range(0..=v as usize);
        let (parent_id, mut path, name) = if parent == v as usize {
            let n = variants.iter().filter(|(n, _)| !n.contains('.')).count() + 1;
            (ROOT_VARIANT.to_string(), Vec::new(), format!("L{n}"))
        } else {
            let (pname, ppath) = &variants[parent];
            let n = variants.iter().filter(|(n, _)| n.rsplit_once('.').is_some_and(|(h, _)| h == pname)).count() + 1;
            (pname.clone(), ppath.clone(), format!("{pname}.{n}"))
        };
        let mut branch = Vec::new();
        for _ in 0..cfg.variant_mutations {
            let m = d.next(&path, None);
            path.push(m);
            branch.push(m);
        }
        nodes.push(NodeSpec {
            id: name.clone(),
            parent: Some(parent_id),
            branch_mutations: branch,
            variant_name: Some(name.clone()),
            leaf_meta: None,
        });
        variants.push((name, path));
    }

    let mut counts = BTreeMap::new();
    let mut leaf_no = 0u64;
    for m in 0..cfg.months {
        let month = cfg.start.add_months(m as i64);
        // fresh subclades every month, drawn with that month's spectrum
        let mut subclades: Vec<Vec<(String, Vec<NtMutation>)>> = Vec::with_capacity(variants.len());
        for (vname, vpath) in &variants {
            let mut subs = Vec::new();
            for s in 0..cfg.subclades_per_month {
                let id = format!("{vname}/{month}/{s}");
                let mut path = vpath.clone();
                let mut branch = Vec::new();
                for _ in 0..cfg.subclade_mutations {
                    let mu = d.next(&path, Some(m));
                    path.push(mu);
                    branch.push(mu);
                }
                nodes.push(NodeSpec {
                    id: id.clone(),
                    parent: Some(vname.clone()),
                    branch_mutations: branch,
                    variant_name: None,
                    leaf_meta: None,
                });
                subs.push((id, path));
            }
            subclades.push(subs);
        }
        for region in &cfg.regions {
            let n = region.monthly_count();
            let key = match &region.region {
                Some(r) => region_key(&region.country, r),
                None => region.country.clone(),
            };
            *counts.entry((key, month)).or_insert(0) += n;
            for _ in 0..n {
                let v = d.rng.random_range(0..variants.len());
                let (parent, mut path) = if cfg.subclades_per_month == 0 {
                    variants[v].clone()
                } else {
                    subclades[v][d.rng.random_range(0..subclades[v].len())].clone()
                };
                let mut branch = Vec::new();
                for _ in 0..d.rng.random_range(1..=cfg.private_max) {
                    let mu = d.next(&path, Some(m));
                    path.push(mu);
                    branch.push(mu);
                }
                let noise = cfg.noise_rate.floor() as u32 + u32::from(d.rng.random::<f64>() < cfg.noise_rate.fract());
                for _ in 0..noise {
                    let mu = d.noise(&path);
                    path.push(mu);
                    branch.push(mu);
                }
                let day = d.rng.random_range(1..=month.days());
                let collected = month.first_day() + Duration::days(day as i64 - 1);
                let released = collected + Duration::days(d.rng.random_range(0..=cfg.release_lag_days) as i64);
                leaf_no += 1;
                nodes.push(NodeSpec {
                    id: format!("seq{leaf_no}"),
                    parent: Some(parent),
                    branch_mutations: branch,
                    variant_name: None,
                    leaf_meta: Some(SequenceMeta {
                        name: format!("seq{leaf_no}"),
                        collected: Some(PartialDate::full(collected)),
                        released,
                        country: Some(region.country.clone()),
                        region: region.region.clone(),
                    }),
                });
            }
        }
    }

    let mut population = BTreeMap::new();
    for r in &cfg.regions {
        *population.entry(r.country.clone()).or_insert(0.0) += r.population;
        if let Some(reg) = &r.region {
            population.insert(region_key(&r.country, reg), r.population);
        }
    }

    Ok(SynthOutput {
        config: cfg.clone(),
        nodes,
        annotation: AnnotationRecord { name: SPIKE_ORF.into(), start: cfg.orf_start, end: cfg.orf_end },
        reference,
        population: PopulationTable(population),
        truth: GroundTruth { base, alternate, shift },
        counts,
    })
}

impl SynthOutput {
    pub fn tree(&self) -> PhyloTree {
        PhyloTree::from_specs(self.nodes.clone(), self.config.genome_length).expect("generated tree is valid")
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.leaf_meta.is_some()).count()
    }

    /// Writes `tree.jsonl`, `reference.fasta`, `annotation.tsv`,
    /// `population.csv` and `spectrum.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        write_atomic(&dir.join("tree.jsonl"), self.tree().to_jsonl().as_bytes())?;
        write_atomic(&dir.join("reference.fasta"), self.reference.to_fasta().as_bytes())?;
        write_atomic(&dir.join("annotation.tsv"), write_annotation(std::slice::from_ref(&self.annotation)).as_bytes())?;
        let mut pop = Vec::new();
        self.population.to_csv(&mut pop).map_err(|e| io::Error::other(e.to_string()))?;
        write_atomic(&dir.join("population.csv"), &pop)?;
        let truth = serde_json::to_string_pretty(&self.truth).map_err(io::Error::other)? + "\n";
        write_atomic(&dir.join("spectrum.json"), truth.as_bytes())
    }
}

/// Empirical next-mutation counts keyed by the spectrum row of the previous
/// mutation, over private steps only.
pub fn empirical_transitions(spectrum: &Spectrum, trajs: &[&Trajectory]) -> Vec<BTreeMap<NtMutation, u64>> {
    let mut rows = vec![BTreeMap::new(); spectrum.rows.len()];
    for t in trajs {
        let all: Vec<NtMutation> = t.all_mutations().copied().collect();
        for i in t.variant_mutations.len()..all.len() {
            let prev = i.checked_sub(1).map(|j| all[j]);
            *rows[spectrum.row_index(prev)].entry(all[i]).or_insert(0) += 1;
        }
    }
    rows
}

/// Mean total-variation distance between corresponding non-empty rows.
pub fn transition_distance(a: &[BTreeMap<NtMutation, u64>], b: &[BTreeMap<NtMutation, u64>]) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (ra, rb) in a.iter().zip(b) {
        let (sa, sb) = (ra.values().sum::<u64>() as f64, rb.values().sum::<u64>() as f64);
        if sa == 0.0 || sb == 0.0 {
            continue;
        }
        let keys: HashSet<&NtMutation> = ra.keys().chain(rb.keys()).collect();
        let tv: f64 = keys
            .into_iter()
            .map(|k| (ra.get(k).copied().unwrap_or(0) as f64 / sa - rb.get(k).copied().unwrap_or(0) as f64 / sb).abs())
            .sum::<f64>()
            / 2.0;
        total += tv;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::SpikeMap;
    use crate::tree::extract_all;
    use crate::variants::VariantDefinitions;
    use crate::weighting::{density_table, WeightConfig};

    fn small() -> SynthConfig {
        SynthConfig {
            months: 12,
            regions: vec![
                RegionSpec { country: "USA".into(), region: Some("East".into()), population: 10e6, density: 10.0 },
                RegionSpec { country: "Kenya".into(), region: None, population: 20e6, density: 2.5 },
            ],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_valid() {
        let cfg = small();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.tree().to_jsonl(), b.tree().to_jsonl());
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.leaf_count(), 12 * 150);
        let other = generate(&SynthConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.tree().to_jsonl(), other.tree().to_jsonl());
        let tree = a.tree();
        let round = crate::tree::parse_tree(tree.to_jsonl().as_bytes(), 1000).unwrap();
        assert_eq!(round.to_jsonl(), tree.to_jsonl());
    }

    #[test]
    fn output_files_load() {
        let out = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.write_dir(dir.path()).unwrap();
        let fasta = std::fs::read(dir.path().join("reference.fasta")).unwrap();
        let ann = std::fs::read(dir.path().join("annotation.tsv")).unwrap();
        let spike = SpikeMap::load(fasta.as_slice(), ann.as_slice(), Some(99)).unwrap();
        assert_eq!(spike.genome, out.reference);
        let truth: GroundTruth =
            serde_json::from_slice(&std::fs::read(dir.path().join("spectrum.json")).unwrap()).unwrap();
        assert_eq!(truth, out.truth);
        let pop = PopulationTable::from_csv(std::fs::File::open(dir.path().join("population.csv")).unwrap()).unwrap();
        assert_eq!(pop, out.population);
    }

    #[test]
    fn densities_reproduce() {
        let out = generate(&small()).unwrap();
        let trajs = extract_all(&out.tree(), &VariantDefinitions::default());
        let dens = density_table(&trajs, &out.population, &WeightConfig::default());
        assert_eq!(dens.len(), 24);
        for d in &dens {
            assert_eq!(out.counts[&(d.region_key.clone(), d.month)], d.n);
            let want = if d.region_key == "USA/East" { 10.0 } else { 2.5 };
            assert!((d.d - want).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn noise_free_paths_follow_the_spectrum() {
        let cfg = SynthConfig { noise_rate: 0.0, ..small() };
        let out = generate(&cfg).unwrap();
        let trajs = extract_all(&out.tree(), &VariantDefinitions::default());
        assert!(trajs.iter().all(|t| !t.sequence_mutations.is_empty()));
        let rows = empirical_transitions(&out.truth.base, &trajs.iter().collect::<Vec<_>>());
        let mut off = 0;
        for (r, row) in rows.iter().enumerate() {
            for m in row.keys() {
                if !out.truth.base.rows[r].next.contains(m) {
                    off += row[m];
                }
            }
        }
        let total: u64 = rows.iter().flat_map(|r| r.values()).sum();
        // only the path-collision fallback can leave the table
        assert!((off as f64) < 0.01 * total as f64, "{off}/{total}");
    }

    #[test]
    fn raw_draws_match_rows() {
        let out = generate(&small()).unwrap();
        let s = &out.truth.base;
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        let n = 100_000;
        for prev in [None, Some(NtMutation::new(1, NtState::A)), Some(NtMutation::new(990, NtState::Del))] {
            let row = &s.rows[s.row_index(prev)];
            let mut hits = vec![0u64; row.next.len()];
            for _ in 0..n {
                let m = s.sample(prev, &mut rng);
                hits[row.next.iter().position(|x| *x == m).expect("in row")] += 1;
            }
            for (h, p) in hits.iter().zip(&row.p) {
                let sigma = (p * (1.0 - p) / n as f64).sqrt();
                assert!((*h as f64 / n as f64 - p).abs() <= 3.0 * sigma, "{h} vs {p}");
            }
        }
    }

    #[test]
    fn shift_beyond_span_is_a_no_op() {
        let cfg = small();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg.with_shift(ShiftSpec { month: 12, ramp: 1 })).unwrap();
        assert_eq!(a.tree().to_jsonl(), b.tree().to_jsonl());
        assert_eq!(serde_json::to_string(&a.truth).unwrap(), serde_json::to_string(&b.truth).unwrap());
    }

    #[test]
    fn shift_changes_later_spectrum() {
        let cfg = small().with_shift(ShiftSpec { month: 6, ramp: 1 });
        let out = generate(&cfg).unwrap();
        assert_eq!(out.tree().to_jsonl(), generate(&cfg).unwrap().tree().to_jsonl());
        let trajs = extract_all(&out.tree(), &VariantDefinitions::default());
        let cut = cfg.start.add_months(6);
        let (early, late): (Vec<&Trajectory>, Vec<&Trajectory>) =
            trajs.iter().partition(|t| t.meta.collected.unwrap().year_month().unwrap() < cut);
        let s = &out.truth.base;
        let within = {
            let a: Vec<&Trajectory> = early.iter().step_by(2).copied().collect();
            let b: Vec<&Trajectory> = early.iter().skip(1).step_by(2).copied().collect();
            transition_distance(&empirical_transitions(s, &a), &empirical_transitions(s, &b))
        };
        let across = transition_distance(&empirical_transitions(s, &early), &empirical_transitions(s, &late));
        assert!(across > 0.5, "across {across}");
        assert!(across > 2.0 * within, "across {across} within {within}");
    }

    #[test]
    fn ramp_share() {
        let s = ShiftSpec { month: 4, ramp: 4 };
        let got: Vec<f64> = (2..10).map(|m| s.alternate_share(m)).collect();
        assert_eq!(got, vec![0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0]);
        assert_eq!(ShiftSpec { month: 4, ramp: 1 }.alternate_share(4), 1.0);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig { orf_end: 601, ..small() }).is_err());
        assert!(generate(&SynthConfig { months: 0, ..small() }).is_err());
        assert!(generate(&SynthConfig { noise_rate: -1.0, ..small() }).is_err());
    }
}
