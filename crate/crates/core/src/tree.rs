//! Mutation-annotated phylogenetic trees in a line-oriented JSON format, and
//! extraction of per-sequence evolutionary trajectories.
//!
//! Each line of a tree file is one node:
//!
//! ```text
//! {"id":"n1","parent":null,"muts":[]}
//! {"id":"n2","parent":"n1","muts":["C241T","23403G"],"variant":"B.1"}
//! {"id":"s1","parent":"n2","muts":["1000-"],"meta":{"name":"s1","collected":"2025-03","released":"2025-04-02","country":"France"}}
//! ```
//!
//! Nodes may appear in any order. The origin base of a mutation string is
//! optional and dropped on read.

use std::collections::HashMap;
use std::io::BufRead;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::date::{parse_full_date, PartialDate};
use crate::genome::NtMutation;
use crate::variants::VariantDefinitions;

/// Variant name assigned to sequences with no tagged ancestor.
pub const ROOT_VARIANT: &str = "root";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("line {line}: invalid JSON: {msg}")]
    Json { line: usize, msg: String },
    #[error("line {line}: duplicate node id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: dangling parent {parent:?} referenced by {id:?}")]
    DanglingParent { line: usize, id: String, parent: String },
    #[error("line {line}: multiple roots ({id:?} has no parent)")]
    MultipleRoots { line: usize, id: String },
    #[error("tree has no root")]
    NoRoot,
    #[error("line {line}: node {id:?} is on a cycle")]
    Cycle { line: usize, id: String },
    #[error("line {line}: malformed mutation {text:?}")]
    MalformedMutation { line: usize, text: String },
    #[error("line {line}: mutation site {site} beyond genome length {genome_length}")]
    SiteOutOfRange { line: usize, site: u32, genome_length: u32 },
    #[error("line {line}: bad metadata: {msg}")]
    BadMeta { line: usize, msg: String },
    #[error("leaf {0:?} not found")]
    LeafNotFound(String),
    #[error("node {0:?} is not a leaf")]
    NotALeaf(String),
    #[error("io: {0}")]
    Io(String),
}

/// Sampling metadata carried by leaves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collected: Option<PartialDate>,
    pub released: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
}

impl SequenceMeta {
    fn validate(&self) -> Result<(), String> {
        if let Some(collected) = self.collected.and_then(|c| c.as_full()) {
            if self.released < collected {
                return Err(format!("released {} before collected {}", self.released, collected));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub id: String,
    pub parent: Option<usize>,
    pub branch_mutations: Vec<NtMutation>,
    pub variant_name: Option<String>,
    pub leaf_meta: Option<SequenceMeta>,
    pub children: Vec<usize>,
}

/// Wire form of one line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: String,
    parent: Option<String>,
    #[serde(default)]
    muts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<MetaRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaRecord {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    collected: Option<String>,
    released: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region: Option<String>,
}

/// A node prior to linking, as produced by the parser or a generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub id: String,
    pub parent: Option<String>,
    pub branch_mutations: Vec<NtMutation>,
    pub variant_name: Option<String>,
    pub leaf_meta: Option<SequenceMeta>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhyloTree {
    nodes: Vec<TreeNode>,
    index: HashMap<String, usize>,
    root: usize,
    genome_length: u32,
}

impl PhyloTree {
    /// Links and validates nodes. Errors name the 1-based position of the
    /// offending node in `specs` (its line number when parsed from a file).
    pub fn from_specs(specs: Vec<NodeSpec>, genome_length: u32) -> Result<Self, TreeError> {
        let lines: Vec<usize> = (1..=specs.len()).collect();
        Self::link(specs, &lines, genome_length)
    }

    fn link(specs: Vec<NodeSpec>, lines: &[usize], genome_length: u32) -> Result<Self, TreeError> {
        let mut index = HashMap::with_capacity(specs.len());
        let mut root = None;
        for (i, spec) in specs.iter().enumerate() {
            if index.insert(spec.id.clone(), i).is_some() {
                return Err(TreeError::DuplicateId { line: lines[i], id: spec.id.clone() });
            }
            for m in &spec.branch_mutations {
                if m.site > genome_length {
                    return Err(TreeError::SiteOutOfRange { line: lines[i], site: m.site, genome_length });
                }
            }
            if spec.parent.is_none() {
                if root.is_some() {
                    return Err(TreeError::MultipleRoots { line: lines[i], id: spec.id.clone() });
                }
                root = Some(i);
            }
        }
        let root = root.ok_or(TreeError::NoRoot)?;
        let mut nodes: Vec<TreeNode> = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            let parent = match &spec.parent {
                None => None,
                Some(p) => Some(*index.get(p).ok_or_else(|| TreeError::DanglingParent {
                    line: lines[i],
                    id: spec.id.clone(),
                    parent: p.clone(),
                })?),
            };
            nodes.push(TreeNode {
                id: spec.id,
                parent,
                branch_mutations: spec.branch_mutations,
                variant_name: spec.variant_name,
                leaf_meta: spec.leaf_meta,
                children: Vec::new(),
            });
        }
        for i in 0..nodes.len() {
            if let Some(p) = nodes[i].parent {
                nodes[p].children.push(i);
            }
        }
        // everything not reachable from the root sits on a cycle
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            seen[n] = true;
            stack.extend(nodes[n].children.iter().copied());
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(TreeError::Cycle { line: lines[i], id: nodes[i].id.clone() });
        }
        Ok(Self { nodes, index, root, genome_length })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn genome_length(&self) -> u32 {
        self.genome_length
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, i: usize) -> &TreeNode {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn is_leaf(&self, i: usize) -> bool {
        self.nodes[i].children.is_empty() && i != self.root
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&i| self.is_leaf(i))
    }

    pub fn depth(&self, i: usize) -> usize {
        let mut d = 0;
        let mut n = i;
        while let Some(p) = self.nodes[n].parent {
            d += 1;
            n = p;
        }
        d
    }

    pub fn max_depth(&self) -> usize {
        (0..self.nodes.len()).map(|i| self.depth(i)).max().unwrap_or(0)
    }

    /// Node indices from the root down to `i`, inclusive.
    pub fn path_from_root(&self, i: usize) -> Vec<usize> {
        let mut path = vec![i];
        let mut n = i;
        while let Some(p) = self.nodes[n].parent {
            path.push(p);
            n = p;
        }
        path.reverse();
        path
    }

    /// All branch mutations from the root to `i`, in path order.
    pub fn path_mutations(&self, i: usize) -> Vec<NtMutation> {
        self.path_from_root(i).into_iter().flat_map(|n| self.nodes[n].branch_mutations.iter().copied()).collect()
    }

    /// Serializes in node order, one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for node in &self.nodes {
            let record = NodeRecord {
                id: node.id.clone(),
                parent: node.parent.map(|p| self.nodes[p].id.clone()),
                muts: node.branch_mutations.iter().map(|m| m.to_string()).collect(),
                variant: node.variant_name.clone(),
                meta: node.leaf_meta.as_ref().map(|m| MetaRecord {
                    name: m.name.clone(),
                    collected: m.collected.map(|d| d.to_string()),
                    released: m.released.format("%Y-%m-%d").to_string(),
                    country: m.country.clone(),
                    region: m.region.clone(),
                }),
            };
            out.push_str(&serde_json::to_string(&record).expect("serializable"));
            out.push('\n');
        }
        out
    }
}

fn convert_record(record: NodeRecord, line: usize) -> Result<NodeSpec, TreeError> {
    let branch_mutations = record
        .muts
        .iter()
        .map(|t| t.parse::<NtMutation>().map_err(|_| TreeError::MalformedMutation { line, text: t.clone() }))
        .collect::<Result<Vec<_>, _>>()?;
    let leaf_meta = match record.meta {
        None => None,
        Some(m) => {
            let bad = |msg: String| TreeError::BadMeta { line, msg };
            let collected = match m.collected.as_deref() {
                None | Some("") | Some("?") => None,
                Some(s) => Some(s.parse::<PartialDate>().map_err(|e| bad(e.to_string()))?),
            };
            let released = parse_full_date(&m.released).map_err(|e| bad(e.to_string()))?;
            let meta = SequenceMeta { name: m.name, collected, released, country: m.country, region: m.region };
            meta.validate().map_err(bad)?;
            Some(meta)
        }
    };
    Ok(NodeSpec { id: record.id, parent: record.parent, branch_mutations, variant_name: record.variant, leaf_meta })
}

/// Parses a JSONL tree. Blank lines are skipped but still counted.
pub fn parse_tree<R: BufRead>(reader: R, genome_length: u32) -> Result<PhyloTree, TreeError> {
    let mut specs = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TreeError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: NodeRecord =
            serde_json::from_str(&line).map_err(|e| TreeError::Json { line: line_no, msg: e.to_string() })?;
        specs.push(convert_record(record, line_no)?);
        lines.push(line_no);
    }
    PhyloTree::link(specs, &lines, genome_length)
}

/// One sampled sequence's path through the tree, split at its variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub meta: SequenceMeta,
    pub variant_name: String,
    pub variant_mutations: Vec<NtMutation>,
    pub sequence_mutations: Vec<NtMutation>,
}

impl Trajectory {
    pub fn all_mutations(&self) -> impl Iterator<Item = &NtMutation> {
        self.variant_mutations.iter().chain(self.sequence_mutations.iter())
    }
}

/// Nearest variant-tagged node on the path from `i` up to the root,
/// including `i` itself.
pub fn nearest_variant_node(tree: &PhyloTree, i: usize) -> Option<usize> {
    let mut n = Some(i);
    while let Some(cur) = n {
        if tree.node(cur).variant_name.is_some() {
            return Some(cur);
        }
        n = tree.node(cur).parent;
    }
    None
}

pub fn extract_trajectory(
    tree: &PhyloTree,
    leaf_id: &str,
    definitions: &VariantDefinitions,
) -> Result<Trajectory, TreeError> {
    let leaf = tree.find(leaf_id).ok_or_else(|| TreeError::LeafNotFound(leaf_id.to_string()))?;
    if !tree.is_leaf(leaf) {
        return Err(TreeError::NotALeaf(leaf_id.to_string()));
    }
    Ok(trajectory_of(tree, leaf, definitions))
}

fn trajectory_of(tree: &PhyloTree, leaf: usize, definitions: &VariantDefinitions) -> Trajectory {
    let node = tree.node(leaf);
    let meta = node.leaf_meta.clone().unwrap_or_else(|| SequenceMeta {
        name: node.id.clone(),
        collected: None,
        released: NaiveDate::MIN,
        country: None,
        region: None,
    });
    let path = tree.path_from_root(leaf);
    let split = nearest_variant_node(tree, leaf).map(|v| path.iter().position(|&n| n == v).expect("on path"));
    let (variant_name, variant_mutations, private_from) = match split {
        None => (ROOT_VARIANT.to_string(), Vec::new(), 0),
        Some(at) => {
            let vnode = path[at];
            let name = tree.node(vnode).variant_name.clone().expect("tagged");
            let muts = match definitions.get(&name) {
                Some(def) => def.nt_mutations.clone(),
                None => tree.path_mutations(vnode),
            };
            (name, muts, at + 1)
        }
    };
    let sequence_mutations =
        path[private_from..].iter().flat_map(|&n| tree.node(n).branch_mutations.iter().copied()).collect();
    Trajectory { meta, variant_name, variant_mutations, sequence_mutations }
}

/// Trajectories for every leaf that carries metadata, in node order.
/// Extraction is read-only so leaves are processed in parallel.
pub fn extract_all(tree: &PhyloTree, definitions: &VariantDefinitions) -> Vec<Trajectory> {
    use rayon::prelude::*;
    let leaves: Vec<usize> = tree.leaves().filter(|&i| tree.node(i).leaf_meta.is_some()).collect();
    leaves.par_iter().map(|&i| trajectory_of(tree, i, definitions)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Trajectory>,
    pub eval: Vec<Trajectory>,
    /// Post-cutoff candidates dropped for lacking a full collection date.
    pub excluded_partial_date: usize,
    /// Post-cutoff candidates dropped for having no target mutation.
    pub excluded_no_target: usize,
}

/// Train: released on or before `train_cutoff`. Eval: collected after
/// `train_cutoff`, released on or before `eval_cutoff`, and accepted by
/// `has_target`.
pub fn split_train_eval(
    trajectories: impl IntoIterator<Item = Trajectory>,
    train_cutoff: NaiveDate,
    eval_cutoff: NaiveDate,
    has_target: impl Fn(&Trajectory) -> bool,
) -> Split {
    let mut split = Split::default();
    for t in trajectories {
        if t.meta.released <= train_cutoff {
            split.train.push(t);
            continue;
        }
        if t.meta.released > eval_cutoff {
            continue;
        }
        match t.meta.collected.and_then(|c| c.as_full()) {
            None => split.excluded_partial_date += 1,
            Some(c) if c > train_cutoff => {
                if has_target(&t) {
                    split.eval.push(t);
                } else {
                    split.excluded_no_target += 1;
                }
            }
            Some(_) => {}
        }
    }
    split
}

pub fn write_trajectories(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajectories {
        out.push_str(&serde_json::to_string(t).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn read_trajectories<R: BufRead>(reader: R) -> Result<Vec<Trajectory>, TreeError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| TreeError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TreeError::Json { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{NtState, ReferenceGenome};
    use crate::genome::GenomeState;

    fn m(s: &str) -> NtMutation {
        s.parse().unwrap()
    }

    const SMALL: &str = r#"{"id":"root","parent":null,"muts":[]}
{"id":"v","parent":"root","muts":["C100T"],"variant":"V"}
{"id":"s1","parent":"v","muts":["A200G"],"meta":{"name":"s1","collected":"2025-03-01","released":"2025-03-10","country":"France"}}
{"id":"s2","parent":"root","muts":["500A"],"meta":{"name":"s2","collected":"2025","released":"2025-01-10"}}
"#;

    #[test]
    fn minimal_chain() {
        let text = "{\"id\":\"r\",\"parent\":null,\"muts\":[]}\n{\"id\":\"a\",\"parent\":\"r\",\"muts\":[\"1A\"]}\n{\"id\":\"l\",\"parent\":\"a\",\"muts\":[]}\n";
        let tree = parse_tree(text.as_bytes(), 10).unwrap();
        assert_eq!(tree.len(), 3);
        assert_eq!(tree.max_depth(), 2);
        assert_eq!(tree.to_jsonl(), text);
    }

    #[test]
    fn structural_errors_name_lines() {
        let dangling = "{\"id\":\"r\",\"parent\":null,\"muts\":[]}\n{\"id\":\"a\",\"parent\":\"zz\",\"muts\":[]}\n";
        assert!(matches!(parse_tree(dangling.as_bytes(), 10), Err(TreeError::DanglingParent { line: 2, .. })));
        let dup = "{\"id\":\"r\",\"parent\":null,\"muts\":[]}\n{\"id\":\"r\",\"parent\":\"r\",\"muts\":[]}\n";
        assert!(matches!(parse_tree(dup.as_bytes(), 10), Err(TreeError::DuplicateId { line: 2, .. })));
        let roots = "{\"id\":\"r\",\"parent\":null,\"muts\":[]}\n\n{\"id\":\"q\",\"parent\":null,\"muts\":[]}\n";
        assert!(matches!(parse_tree(roots.as_bytes(), 10), Err(TreeError::MultipleRoots { line: 3, .. })));
        let bad_mut = "{\"id\":\"r\",\"parent\":null,\"muts\":[\"C0T\"]}\n";
        assert!(matches!(parse_tree(bad_mut.as_bytes(), 10), Err(TreeError::MalformedMutation { line: 1, .. })));
        let cycle = "{\"id\":\"r\",\"parent\":null,\"muts\":[]}\n{\"id\":\"a\",\"parent\":\"b\",\"muts\":[]}\n{\"id\":\"b\",\"parent\":\"a\",\"muts\":[]}\n";
        assert!(matches!(parse_tree(cycle.as_bytes(), 10), Err(TreeError::Cycle { line: 2, .. })));
        let far = "{\"id\":\"r\",\"parent\":null,\"muts\":[\"11A\"]}\n";
        assert!(matches!(parse_tree(far.as_bytes(), 10), Err(TreeError::SiteOutOfRange { .. })));
        let meta = "{\"id\":\"r\",\"parent\":null,\"muts\":[]}\n{\"id\":\"a\",\"parent\":\"r\",\"muts\":[],\"meta\":{\"name\":\"a\",\"collected\":\"2025-02-01\",\"released\":\"2025-01-01\"}}\n";
        assert!(matches!(parse_tree(meta.as_bytes(), 10), Err(TreeError::BadMeta { line: 2, .. })));
        assert!(matches!(parse_tree("not json\n".as_bytes(), 10), Err(TreeError::Json { line: 1, .. })));
    }

    #[test]
    fn trajectories_split_at_nearest_variant() {
        let tree = parse_tree(SMALL.as_bytes(), 1000).unwrap();
        let defs = VariantDefinitions::default();
        let t1 = extract_trajectory(&tree, "s1", &defs).unwrap();
        assert_eq!(t1.variant_name, "V");
        assert_eq!(t1.variant_mutations, vec![m("100T")]);
        assert_eq!(t1.sequence_mutations, vec![m("200G")]);
        let t2 = extract_trajectory(&tree, "s2", &defs).unwrap();
        assert_eq!(t2.variant_name, ROOT_VARIANT);
        assert!(t2.variant_mutations.is_empty());
        assert_eq!(t2.sequence_mutations, vec![m("500A")]);
        assert!(matches!(extract_trajectory(&tree, "v", &defs), Err(TreeError::NotALeaf(_))));
        assert!(matches!(extract_trajectory(&tree, "nope", &defs), Err(TreeError::LeafNotFound(_))));
    }

    #[test]
    fn back_mutations_kept_in_order() {
        let text = "{\"id\":\"r\",\"parent\":null,\"muts\":[]}\n{\"id\":\"a\",\"parent\":\"r\",\"muts\":[\"300T\"]}\n{\"id\":\"l\",\"parent\":\"a\",\"muts\":[\"300C\"],\"meta\":{\"name\":\"l\",\"released\":\"2025-01-01\"}}\n";
        let tree = parse_tree(text.as_bytes(), 400).unwrap();
        let t = extract_trajectory(&tree, "l", &VariantDefinitions::default()).unwrap();
        assert_eq!(t.sequence_mutations, vec![m("300T"), m("300C")]);
        let reference = ReferenceGenome { name: "r".into(), seq: vec![NtState::A; 400] };
        let mut state = GenomeState::from_reference(&reference);
        state.apply_all(t.all_mutations());
        assert_eq!(state.state(300), NtState::C);
    }

    #[test]
    fn split_rules() {
        let tree = parse_tree(SMALL.as_bytes(), 1000).unwrap();
        let trajs = extract_all(&tree, &VariantDefinitions::default());
        let cutoff = NaiveDate::from_ymd_opt(2025, 2, 12).unwrap();
        let eval_cutoff = NaiveDate::from_ymd_opt(2025, 7, 16).unwrap();
        let split = split_train_eval(trajs.clone(), cutoff, eval_cutoff, |t| !t.sequence_mutations.is_empty());
        assert_eq!(split.train.len(), 1);
        assert_eq!(split.train[0].meta.name, "s2");
        assert_eq!(split.eval.len(), 1);
        assert_eq!(split.eval[0].meta.name, "s1");
        let none = split_train_eval(trajs, cutoff, eval_cutoff, |_| false);
        assert!(none.eval.is_empty());
        assert_eq!(none.excluded_no_target, 1);
    }

    #[test]
    fn trajectory_file_round_trip() {
        let tree = parse_tree(SMALL.as_bytes(), 1000).unwrap();
        let trajs = extract_all(&tree, &VariantDefinitions::default());
        let text = write_trajectories(&trajs);
        assert_eq!(read_trajectories(text.as_bytes()).unwrap(), trajs);
    }
}
