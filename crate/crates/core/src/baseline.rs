//! Ranking from a static table of per-mutation expected counts and fitness.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::eval::Predictor;
use crate::genome::{AaMutation, NtMutation};
use crate::tokenizer::TokenizerLayout;
use crate::tree::Trajectory;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("baseline table line {line}: {msg}")]
    Table { line: usize, msg: String },
    #[error("empty baseline table")]
    Empty,
    #[error("k must be at least 1")]
    BadK,
    #[error("unknown baseline mode {0:?}")]
    BadMode(String),
    #[error("no baseline table for variant {0:?} and no default")]
    NoTable(String),
    #[error("io: {0}")]
    Io(String),
}

/// Either a nucleotide (`C1000T`) or a protein (`S:Q493E`) mutation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum MutationKey {
    Nt(NtMutation),
    Aa(AaMutation),
}

impl MutationKey {
    /// Nucleotide keys first, in token order, then protein keys.
    fn order(&self, other: &Self) -> Ordering {
        match (self, other) {
            (MutationKey::Nt(a), MutationKey::Nt(b)) => (a.site, a.to.index()).cmp(&(b.site, b.to.index())),
            (MutationKey::Nt(_), MutationKey::Aa(_)) => Ordering::Less,
            (MutationKey::Aa(_), MutationKey::Nt(_)) => Ordering::Greater,
            (MutationKey::Aa(a), MutationKey::Aa(b)) => a.cmp(b),
        }
    }
}

impl fmt::Display for MutationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MutationKey::Nt(m) => write!(f, "{m}"),
            MutationKey::Aa(m) => write!(f, "{m}"),
        }
    }
}

impl FromStr for MutationKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.contains(':') {
            s.parse().map(MutationKey::Aa).map_err(|e: crate::genome::GenomeError| e.to_string())
        } else {
            s.parse().map(MutationKey::Nt).map_err(|e: crate::genome::GenomeError| e.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BloomRecord {
    pub mutation: MutationKey,
    /// Expected count, non-negative.
    pub c: f64,
    /// Fitness, signed.
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineMode {
    Count,
    Fitness,
    Mixed(f64),
}

impl Default for BaselineMode {
    fn default() -> Self {
        BaselineMode::Mixed(1.0)
    }
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineMode::Count => f.write_str("count"),
            BaselineMode::Fitness => f.write_str("fitness"),
            BaselineMode::Mixed(a) => write!(f, "mixed:{a}"),
        }
    }
}

/// `count`, `fitness`, `mixed` (alpha 1) or `mixed:ALPHA`.
impl FromStr for BaselineMode {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BaselineError::BadMode(s.to_string());
        match s.split_once(':') {
            None if s == "count" => Ok(BaselineMode::Count),
            None if s == "fitness" => Ok(BaselineMode::Fitness),
            None if s == "mixed" => Ok(BaselineMode::default()),
            Some(("mixed", a)) => {
                let a: f64 = a.parse().map_err(|_| bad())?;
                if a.is_finite() {
                    Ok(BaselineMode::Mixed(a))
                } else {
                    Err(bad())
                }
            }
            _ => Err(bad()),
        }
    }
}

pub fn mixed_score(c: f64, f: f64, alpha: f64) -> f64 {
    c * (alpha * f).exp()
}

impl BaselineMode {
    pub fn score(&self, r: &BloomRecord) -> f64 {
        match *self {
            BaselineMode::Count => r.c,
            BaselineMode::Fitness => r.f,
            BaselineMode::Mixed(alpha) => mixed_score(r.c, r.f, alpha),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaselineTable {
    pub records: Vec<BloomRecord>,
}

impl BaselineTable {
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, BaselineError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| BaselineError::Table { line: 1, msg: e.to_string() })?;
        if headers != vec!["mutation", "expected_count", "fitness"] {
            return Err(BaselineError::Table { line: 1, msg: "expected header mutation,expected_count,fitness".into() });
        }
        let mut records = Vec::new();
        let mut seen = HashMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let bad = |msg: String| BaselineError::Table { line, msg };
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let mutation: MutationKey = rec[0].trim().parse().map_err(bad)?;
            let c: f64 = rec[1].trim().parse().map_err(|_| bad("expected_count is not a number".into()))?;
            let f: f64 = rec[2].trim().parse().map_err(|_| bad("fitness is not a number".into()))?;
            if !(c >= 0.0 && c.is_finite()) || !f.is_finite() {
                return Err(bad("need finite expected_count >= 0 and finite fitness".into()));
            }
            if let Some(prev) = seen.insert(mutation.clone(), line) {
                return Err(bad(format!("duplicate of line {prev}")));
            }
            records.push(BloomRecord { mutation, c, f });
        }
        Ok(Self { records })
    }

    pub fn to_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["mutation", "expected_count", "fitness"])?;
        for r in &self.records {
            wtr.write_record([r.mutation.to_string(), r.c.to_string(), r.f.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Count table of private mutations over a training set, fitness 0.
    pub fn from_training_counts(trajectories: &[Trajectory]) -> Self {
        let mut counts: BTreeMap<(u32, usize), (NtMutation, u64)> = BTreeMap::new();
        for m in trajectories.iter().flat_map(|t| &t.sequence_mutations) {
            counts.entry((m.site, m.to.index())).or_insert((*m, 0)).1 += 1;
        }
        let records = counts
            .into_values()
            .map(|(m, n)| BloomRecord { mutation: MutationKey::Nt(m), c: n as f64, f: 0.0 })
            .collect();
        Self { records }
    }
}

/// Every table entry ordered by score, descending, ties by mutation order.
pub fn rank_all(table: &BaselineTable, mode: BaselineMode) -> Vec<(MutationKey, f64)> {
    let mut scored: Vec<(MutationKey, f64)> = table.records.iter().map(|r| (r.mutation.clone(), mode.score(r))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.order(&b.0)));
    scored
}

pub fn rank_baseline(table: &BaselineTable, mode: BaselineMode, k: usize) -> Result<Vec<(MutationKey, f64)>, BaselineError> {
    if table.records.is_empty() {
        return Err(BaselineError::Empty);
    }
    if k < 1 {
        return Err(BaselineError::BadK);
    }
    let mut all = rank_all(table, mode);
    all.truncate(k);
    Ok(all)
}

/// A context-independent [`Predictor`] backed by one table.
#[derive(Debug, Clone)]
pub struct BaselineRanker {
    tokens: Vec<u32>,
    aa: Vec<AaMutation>,
}

impl BaselineRanker {
    pub fn new(table: &BaselineTable, mode: BaselineMode, layout: &TokenizerLayout) -> Result<Self, BaselineError> {
        if table.records.is_empty() {
            return Err(BaselineError::Empty);
        }
        let mut tokens = Vec::new();
        let mut aa = Vec::new();
        for (key, _) in rank_all(table, mode) {
            match key {
                MutationKey::Nt(m) => tokens.push(
                    layout.token_of(m).map_err(|e| BaselineError::Table { line: 0, msg: e.to_string() })?,
                ),
                MutationKey::Aa(m) => aa.push(m),
            }
        }
        Ok(Self { tokens, aa })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }
}

impl Predictor for BaselineRanker {
    fn rank(&self, _context: &[u32], k: usize, keep: &mut dyn FnMut(u32) -> bool) -> Vec<u32> {
        let mut out = Vec::with_capacity(k);
        for &t in &self.tokens {
            if out.len() == k {
                break;
            }
            if keep(t) {
                out.push(t);
            }
        }
        out
    }

    fn rank_aa(&self, _context: &[u32], k: usize) -> Option<Vec<AaMutation>> {
        (!self.aa.is_empty()).then(|| self.aa.iter().take(k).cloned().collect())
    }
}

/// Per-clade rankers with a fallback.
#[derive(Debug, Clone, Default)]
pub struct CladeRankers {
    pub clades: BTreeMap<String, BaselineRanker>,
    pub default: Option<BaselineRanker>,
}

impl CladeRankers {
    /// Exact variant name first, then shorter dotted prefixes
    /// (`BA.2.86` → `BA.2` → `BA`), then the default.
    pub fn select(&self, variant: &str) -> Option<&BaselineRanker> {
        let mut name = variant;
        loop {
            if let Some(r) = self.clades.get(name) {
                return Some(r);
            }
            match name.rsplit_once('.') {
                Some((head, _)) => name = head,
                None => return self.default.as_ref(),
            }
        }
    }
}
