//! Variant-definition refinement from three sources: the tree, a Nextstrain
//! style definition file, and per-site state frequencies.
//!
//! The schedule is:
//! 1. take the mutations on the path to the variant's shallowest tagged node;
//! 2. attach the Nextstrain insertions and deletions;
//! 3. where the tree and Nextstrain disagree on a site, consult the
//!    frequency table and keep a state only if it clears both the share and
//!    the ratio threshold, otherwise keep the tree's state.
//!
//! Recombinant definitions are finally sorted by site.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{NtMutation, NtState, ReferenceGenome};
use crate::tree::PhyloTree;

#[derive(Debug, Error)]
pub enum VariantError {
    #[error("variant {0:?} is not tagged in the tree")]
    Absent(String),
    #[error("definition file: {0}")]
    Definition(String),
    #[error("frequency table line {line}: {msg}")]
    Frequency { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Usher,
    Nextstrain,
    CovspectrumResolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Indel {
    Deletion { start: u32, end: u32 },
    /// Kept as metadata only: the vocabulary has no insertion tokens.
    Insertion { pos: u32, seq: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantDefinition {
    pub name: String,
    pub nt_mutations: Vec<NtMutation>,
    #[serde(default)]
    pub indels: Vec<Indel>,
    #[serde(default)]
    pub is_recombinant: bool,
    #[serde(default)]
    pub source_trace: BTreeMap<u32, Source>,
}

/// Refined definitions keyed by variant name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantDefinitions(pub BTreeMap<String, VariantDefinition>);

impl VariantDefinitions {
    pub fn get(&self, name: &str) -> Option<&VariantDefinition> {
        self.0.get(name)
    }

    pub fn insert(&mut self, def: VariantDefinition) {
        self.0.insert(def.name.clone(), def);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self, VariantError> {
        serde_json::from_reader(reader).map_err(|e| VariantError::Definition(e.to_string()))
    }
}

/// One variant's entry in the Nextstrain-style definition file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NextstrainDef {
    pub subs: Vec<NtMutation>,
    /// Inclusive deleted ranges.
    pub dels: Vec<(u32, u32)>,
    pub ins: Vec<(u32, String)>,
    pub recombinant: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NextstrainRecord {
    #[serde(default)]
    subs: Vec<String>,
    #[serde(default)]
    dels: Vec<String>,
    #[serde(default)]
    ins: Vec<String>,
    #[serde(default)]
    recombinant: bool,
}

/// Reads `{"<variant>": {"subs": [...], "dels": ["a-b"], "ins": ["pos:SEQ"]}}`.
pub fn read_nextstrain<R: Read>(reader: R) -> Result<BTreeMap<String, NextstrainDef>, VariantError> {
    let raw: BTreeMap<String, NextstrainRecord> =
        serde_json::from_reader(reader).map_err(|e| VariantError::Definition(e.to_string()))?;
    let bad = |v: &str, what: &str| VariantError::Definition(format!("{v}: bad entry {what:?}"));
    let mut out = BTreeMap::new();
    for (name, rec) in raw {
        let subs = rec.subs.iter().map(|s| s.parse().map_err(|_| bad(&name, s))).collect::<Result<Vec<_>, _>>()?;
        let mut dels = Vec::new();
        for d in &rec.dels {
            let (a, b) = d.split_once('-').unwrap_or((d.as_str(), d.as_str()));
            let a: u32 = a.trim().parse().map_err(|_| bad(&name, d))?;
            let b: u32 = b.trim().parse().map_err(|_| bad(&name, d))?;
            if a == 0 || b < a {
                return Err(bad(&name, d));
            }
            dels.push((a, b));
        }
        let mut ins = Vec::new();
        for i in &rec.ins {
            let (p, seq) = i.split_once(':').ok_or_else(|| bad(&name, i))?;
            let pos: u32 = p.trim_start_matches("ins").parse().map_err(|_| bad(&name, i))?;
            ins.push((pos, seq.to_string()));
        }
        out.insert(name, NextstrainDef { subs, dels, ins, recombinant: rec.recombinant });
    }
    Ok(out)
}

/// Per (variant, site) state counts, in [`NtState::ALL`] order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyTable {
    counts: HashMap<(String, u32), [u64; 5]>,
}

impl FrequencyTable {
    pub fn insert(&mut self, variant: &str, site: u32, counts: [u64; 5]) {
        self.counts.insert((variant.to_string(), site), counts);
    }

    pub fn get(&self, variant: &str, site: u32) -> Option<&[u64; 5]> {
        self.counts.get(&(variant.to_string(), site))
    }

    /// CSV with header `variant,site,A,T,C,G,Del`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, VariantError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| VariantError::Frequency { line: 1, msg: e.to_string() })?;
        let expected = ["variant", "site", "A", "T", "C", "G", "Del"];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(VariantError::Frequency { line: 1, msg: format!("expected header {}", expected.join(",")) });
        }
        let mut table = FrequencyTable::default();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| VariantError::Frequency { line, msg: e.to_string() })?;
            let num = |j: usize| {
                rec[j].trim().parse::<u64>().map_err(|_| VariantError::Frequency { line, msg: format!("bad count {:?}", &rec[j]) })
            };
            let site: u32 = rec[1].trim().parse().map_err(|_| VariantError::Frequency { line, msg: "bad site".into() })?;
            table.insert(&rec[0], site, [num(2)?, num(3)?, num(4)?, num(5)?, num(6)?]);
        }
        Ok(table)
    }
}

/// Thresholds for accepting a frequency-table state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolveRule {
    /// The state's share of all counts must exceed this.
    pub min_share: f64,
    /// The state's count must be at least this multiple of every other count.
    pub min_ratio: f64,
}

impl Default for ResolveRule {
    fn default() -> Self {
        Self { min_share: 0.5, min_ratio: 10.0 }
    }
}

/// The frequency-table state that clears both thresholds, if any.
pub fn dominant_state(counts: &[u64; 5], rule: ResolveRule) -> Option<NtState> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    NtState::ALL.into_iter().find(|s| {
        let c = counts[s.index()] as f64;
        c / total as f64 > rule.min_share
            && NtState::ALL.iter().filter(|o| *o != s).all(|o| c >= rule.min_ratio * counts[o.index()] as f64)
    })
}

/// Picks a state for a site where the tree and Nextstrain disagree. Falls
/// back to the tree's state when no state dominates (including zero coverage).
pub fn resolve_disagreement(usher_state: NtState, _nextclade_state: NtState, counts: &[u64; 5], rule: ResolveRule) -> NtState {
    dominant_state(counts, rule).unwrap_or(usher_state)
}

/// Mutations from the root to the shallowest node tagged `variant`.
pub fn base_definition(tree: &PhyloTree, variant: &str) -> Result<Vec<NtMutation>, VariantError> {
    let node = (0..tree.len())
        .filter(|&i| tree.node(i).variant_name.as_deref() == Some(variant))
        .min_by_key(|&i| (tree.depth(i), i))
        .ok_or_else(|| VariantError::Absent(variant.to_string()))?;
    Ok(tree.path_mutations(node))
}

/// Attaches Nextstrain indels to a base definition. Deletions are expanded
/// to one `Del` mutation per site; insertions are recorded only as metadata.
pub fn merge_indels(name: &str, base: Vec<NtMutation>, nextstrain: &NextstrainDef) -> VariantDefinition {
    let mut source_trace: BTreeMap<u32, Source> = base.iter().map(|m| (m.site, Source::Usher)).collect();
    let mut nt_mutations = base;
    let mut indels = Vec::new();
    for &(start, end) in &nextstrain.dels {
        indels.push(Indel::Deletion { start, end });
        for site in start..=end {
            let m = NtMutation::new(site, NtState::Del);
            if !nt_mutations.contains(&m) {
                nt_mutations.push(m);
                source_trace.insert(site, Source::Nextstrain);
            }
        }
    }
    for (pos, seq) in &nextstrain.ins {
        indels.push(Indel::Insertion { pos: *pos, seq: seq.clone() });
    }
    VariantDefinition {
        name: name.to_string(),
        nt_mutations,
        indels,
        is_recombinant: nextstrain.recombinant,
        source_trace,
    }
}

/// Stable sort by site.
pub fn order_recombinant(mut def: VariantDefinition) -> VariantDefinition {
    def.nt_mutations.sort_by_key(|m| m.site);
    def
}

fn final_state(muts: &[NtMutation], site: u32, reference: &ReferenceGenome) -> NtState {
    muts.iter().rev().find(|m| m.site == site).map(|m| m.to).unwrap_or_else(|| reference.state(site))
}

/// Applies the disagreement step to a merged definition.
pub fn resolve_definition(
    mut def: VariantDefinition,
    nextstrain: &NextstrainDef,
    reference: &ReferenceGenome,
    freq: &FrequencyTable,
    rule: ResolveRule,
) -> VariantDefinition {
    let mut ns_muts = nextstrain.subs.clone();
    for &(a, b) in &nextstrain.dels {
        ns_muts.extend((a..=b).map(|s| NtMutation::new(s, NtState::Del)));
    }
    let mut sites: Vec<u32> = def.nt_mutations.iter().chain(ns_muts.iter()).map(|m| m.site).collect();
    sites.sort_unstable();
    sites.dedup();
    for site in sites {
        let usher = final_state(&def.nt_mutations, site, reference);
        let nextclade = final_state(&ns_muts, site, reference);
        if usher == nextclade {
            continue;
        }
        let counts = freq.get(&def.name, site).copied().unwrap_or([0; 5]);
        let chosen = resolve_disagreement(usher, nextclade, &counts, rule);
        if chosen == usher {
            continue;
        }
        let first = def.nt_mutations.iter().position(|m| m.site == site);
        def.nt_mutations.retain(|m| m.site != site);
        if chosen != reference.state(site) {
            let m = NtMutation::new(site, chosen);
            match first {
                Some(i) => def.nt_mutations.insert(i.min(def.nt_mutations.len()), m),
                None => def.nt_mutations.push(m),
            }
        }
        def.source_trace.insert(site, Source::CovspectrumResolved);
    }
    def
}

fn dedup_mutations(def: &mut VariantDefinition) {
    let mut seen = std::collections::HashSet::new();
    def.nt_mutations.retain(|m| seen.insert(*m));
}

/// Runs the full schedule for every variant tagged in the tree.
pub fn refine_all(
    tree: &PhyloTree,
    reference: &ReferenceGenome,
    nextstrain: &BTreeMap<String, NextstrainDef>,
    freq: &FrequencyTable,
    rule: ResolveRule,
) -> Result<VariantDefinitions, VariantError> {
    let mut names: Vec<&str> = tree.nodes().iter().filter_map(|n| n.variant_name.as_deref()).collect();
    names.sort_unstable();
    names.dedup();
    let empty = NextstrainDef::default();
    let mut out = VariantDefinitions::default();
    for name in names {
        let base = base_definition(tree, name)?;
        let ns = nextstrain.get(name).unwrap_or(&empty);
        let merged = merge_indels(name, base, ns);
        let mut def = resolve_definition(merged, ns, reference, freq, rule);
        dedup_mutations(&mut def);
        if def.is_recombinant {
            def = order_recombinant(def);
        }
        out.insert(def);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::parse_tree;
    use NtState::*;

    fn m(s: &str) -> NtMutation {
        s.parse().unwrap()
    }

    const TREE: &str = r#"{"id":"r","parent":null,"muts":[]}
{"id":"a","parent":"r","muts":["100T"]}
{"id":"b","parent":"a","muts":["200G"],"variant":"V"}
{"id":"c","parent":"b","muts":["300A"]}
{"id":"d","parent":"c","muts":["400C"],"variant":"V"}
"#;

    #[test]
    fn base_uses_shallowest_tagged_node() {
        let tree = parse_tree(TREE.as_bytes(), 1000).unwrap();
        assert_eq!(base_definition(&tree, "V").unwrap(), vec![m("100T"), m("200G")]);
        assert!(matches!(base_definition(&tree, "W"), Err(VariantError::Absent(_))));
    }

    #[test]
    fn merges_indels() {
        let ns = NextstrainDef { dels: vec![(11288, 11296)], ins: vec![(22204, "GAGCCAGAA".into())], ..Default::default() };
        let def = merge_indels("V", vec![m("100T")], &ns);
        assert_eq!(def.nt_mutations.len(), 10);
        assert!(def.nt_mutations[1..].iter().all(|x| x.to == Del));
        assert_eq!(def.nt_mutations[1].site, 11288);
        assert_eq!(def.nt_mutations[9].site, 11296);
        assert!(def.indels.contains(&Indel::Insertion { pos: 22204, seq: "GAGCCAGAA".into() }));
        let unchanged = merge_indels("V", vec![m("100T")], &NextstrainDef::default());
        assert_eq!(unchanged.nt_mutations, vec![m("100T")]);
    }

    #[test]
    fn resolve_examples() {
        let rule = ResolveRule::default();
        // A, T, C, G, Del
        assert_eq!(resolve_disagreement(C, T, &[0, 120, 10, 0, 0], rule), T);
        assert_eq!(resolve_disagreement(C, T, &[0, 60, 40, 0, 0], rule), C);
        assert_eq!(resolve_disagreement(C, T, &[0, 55, 5, 0, 45], rule), C);
        assert_eq!(resolve_disagreement(G, T, &[0; 5], rule), G);
    }

    #[test]
    fn recombinant_sort_is_stable() {
        let def = VariantDefinition {
            name: "X".into(),
            nt_mutations: vec![m("500A"), m("100T"), m("300G"), m("100C")],
            indels: vec![],
            is_recombinant: true,
            source_trace: BTreeMap::new(),
        };
        let sorted = order_recombinant(def.clone());
        assert_eq!(sorted.nt_mutations, vec![m("100T"), m("100C"), m("300G"), m("500A")]);
        assert_eq!(order_recombinant(sorted.clone()), sorted);
    }

    #[test]
    fn full_schedule() {
        let tree = parse_tree(TREE.as_bytes(), 1000).unwrap();
        let reference = ReferenceGenome { name: "r".into(), seq: vec![A; 1000] };
        let ns_json = r#"{"V": {"subs": ["A100C", "A250G"], "dels": ["600-602"], "ins": ["ins700:TTT"]}}"#;
        let ns = read_nextstrain(ns_json.as_bytes()).unwrap();
        let freq = FrequencyTable::from_csv(
            "variant,site,A,T,C,G,Del\nV,100,0,5,200,0,0\nV,250,30,0,0,40,0\n".as_bytes(),
        )
        .unwrap();
        let defs = refine_all(&tree, &reference, &ns, &freq, ResolveRule::default()).unwrap();
        let v = defs.get("V").unwrap();
        // site 100 resolved to C; 250 undecided so the tree (reference) wins
        assert_eq!(v.nt_mutations, vec![m("100C"), m("200G"), m("600-"), m("601-"), m("602-")]);
        assert_eq!(v.source_trace[&100], Source::CovspectrumResolved);
        assert_eq!(v.source_trace[&600], Source::Nextstrain);
        let round = VariantDefinitions::from_json(defs.to_json().as_bytes()).unwrap();
        assert_eq!(round, defs);
    }

    #[test]
    fn frequency_header_checked() {
        assert!(FrequencyTable::from_csv("v,s\n".as_bytes()).is_err());
        assert!(FrequencyTable::from_csv("variant,site,A,T,C,G,Del\nV,1,x,0,0,0,0\n".as_bytes()).is_err());
    }
}
