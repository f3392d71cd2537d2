//! Reference-genome coordinates, nucleotide states and spike codon translation.
//!
//! Sites are 1-based throughout. A nucleotide mutation only records the site
//! and the state it mutates *to*; the origin base is never stored, so `A1T`
//! and `G1T` are the same mutation.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use thiserror::Error;

/// Length of the SARS-CoV-2 Wuhan-Hu-1 reference genome.
pub const SARS_COV_2_GENOME_LENGTH: u32 = 29_903;

/// Residues in the reference spike protein (the ORF adds one stop codon).
pub const SPIKE_RESIDUES: u16 = 1273;

/// Name of the spike ORF in annotation files.
pub const SPIKE_ORF: &str = "S";

/// Marker for a deleted residue in [`AaMutation::to`].
pub const AA_DELETION: u8 = b'-';

/// Marker for a stop codon in translations.
pub const STOP: u8 = b'*';

/// Bundled Wuhan-Hu-1 reference (NC_045512.2).
pub const DEFAULT_REFERENCE_FASTA: &str = include_str!("../data/sars_cov_2_reference.fasta");

/// Bundled annotation with the spike ORF coordinates on the reference.
pub const DEFAULT_ANNOTATION_TSV: &str = include_str!("../data/sars_cov_2_annotation.tsv");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenomeError {
    #[error("codon incomplete: {0:?} contains a deletion")]
    CodonIncomplete([NtState; 3]),
    #[error("site {site} out of range 1..={genome_length}")]
    SiteOutOfRange { site: u32, genome_length: u32 },
    #[error("malformed mutation {0:?}")]
    MalformedMutation(String),
    #[error("malformed amino-acid mutation {0:?}")]
    MalformedAaMutation(String),
    #[error("annotation line {line}: {msg}")]
    Annotation { line: usize, msg: String },
    #[error("reference: {0}")]
    Reference(String),
    #[error("ORF {name}: {msg}")]
    Orf { name: String, msg: String },
    #[error("io: {0}")]
    Io(String),
}

/// One of the five states a site can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NtState {
    A,
    T,
    C,
    G,
    Del,
}

impl NtState {
    /// Canonical order, which is also the token order within a site.
    pub const ALL: [NtState; 5] = [NtState::A, NtState::T, NtState::C, NtState::G, NtState::Del];
    pub const BASES: [NtState; 4] = [NtState::A, NtState::T, NtState::C, NtState::G];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'A' => Some(NtState::A),
            'T' | 'U' => Some(NtState::T),
            'C' => Some(NtState::C),
            'G' => Some(NtState::G),
            '-' => Some(NtState::Del),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            NtState::A => 'A',
            NtState::T => 'T',
            NtState::C => 'C',
            NtState::G => 'G',
            NtState::Del => '-',
        }
    }

    pub fn is_base(self) -> bool {
        self != NtState::Del
    }
}

impl fmt::Display for NtState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_char())
    }
}

/// A site and the state it mutates to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NtMutation {
    pub site: u32,
    pub to: NtState,
}

impl NtMutation {
    pub fn new(site: u32, to: NtState) -> Self {
        Self { site, to }
    }

    pub fn check_range(&self, genome_length: u32) -> Result<(), GenomeError> {
        if self.site == 0 || self.site > genome_length {
            return Err(GenomeError::SiteOutOfRange { site: self.site, genome_length });
        }
        Ok(())
    }
}

impl fmt::Display for NtMutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.site, self.to)
    }
}

/// Accepts `C1000T`, `1000T`, `C1000-` and `1000-`. The origin base is
/// validated but discarded.
impl FromStr for NtMutation {
    type Err = GenomeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GenomeError::MalformedMutation(s.to_string());
        let s_trim = s.trim();
        let mut chars = s_trim.chars();
        let last = chars.next_back().ok_or_else(bad)?;
        let to = NtState::from_char(last).ok_or_else(bad)?;
        let body = chars.as_str();
        let digits = match body.chars().next() {
            Some(c) if c.is_ascii_digit() => body,
            Some(c) if NtState::from_char(c).is_some_and(NtState::is_base) => &body[c.len_utf8()..],
            _ => return Err(bad()),
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let site: u32 = digits.parse().map_err(|_| bad())?;
        if site == 0 {
            return Err(bad());
        }
        Ok(NtMutation { site, to })
    }
}

/// A residue change on a protein, e.g. `S:D614G` or `S:H69-`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AaMutation {
    pub gene: String,
    pub pos: u16,
    pub from: u8,
    pub to: u8,
}

impl AaMutation {
    pub fn is_deletion(&self) -> bool {
        self.to == AA_DELETION
    }
}

impl fmt::Display for AaMutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}{}{}", self.gene, self.from as char, self.pos, self.to as char)
    }
}

impl FromStr for AaMutation {
    type Err = GenomeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GenomeError::MalformedAaMutation(s.to_string());
        let (gene, rest) = s.trim().split_once(':').ok_or_else(bad)?;
        let bytes = rest.as_bytes();
        if gene.is_empty() || bytes.len() < 3 {
            return Err(bad());
        }
        let from = bytes[0];
        let to = bytes[bytes.len() - 1];
        let valid = |b: u8| b.is_ascii_uppercase() || b == STOP || b == AA_DELETION;
        if !valid(from) || !valid(to) {
            return Err(bad());
        }
        let pos: u16 = rest[1..rest.len() - 1].parse().map_err(|_| bad())?;
        if pos == 0 {
            return Err(bad());
        }
        Ok(AaMutation { gene: gene.to_string(), pos, from, to })
    }
}

const CODON_ORDER: [NtState; 4] = [NtState::T, NtState::C, NtState::A, NtState::G];
const CODON_TABLE: &[u8; 64] = b"FFLLSSSSYY**CC*WLLLLPPPPHHQQRRRRIIIMTTTTNNKKSSRRVVVVAAAADDEEGGGG";

fn codon_order_index(s: NtState) -> usize {
    match s {
        NtState::T => 0,
        NtState::C => 1,
        NtState::A => 2,
        NtState::G => 3,
        NtState::Del => unreachable!("deletions are rejected before lookup"),
    }
}

/// Standard genetic code. Returns the one-letter amino acid, or [`STOP`].
pub fn translate_codon(codon: [NtState; 3]) -> Result<u8, GenomeError> {
    if codon.iter().any(|s| !s.is_base()) {
        return Err(GenomeError::CodonIncomplete(codon));
    }
    let idx = codon_order_index(codon[0]) * 16 + codon_order_index(codon[1]) * 4 + codon_order_index(codon[2]);
    Ok(CODON_TABLE[idx])
}

/// Every codon in `TCAG` order, mostly useful for enumeration tests.
pub fn all_codons() -> impl Iterator<Item = [NtState; 3]> {
    (0..64).map(|i| [CODON_ORDER[i / 16], CODON_ORDER[(i / 4) % 4], CODON_ORDER[i % 4]])
}

/// A reference genome as a vector of states, site `i` at index `i - 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceGenome {
    pub name: String,
    pub seq: Vec<NtState>,
}

impl ReferenceGenome {
    /// Reads the first record of a FASTA stream. Only `ACGT` is accepted.
    pub fn from_fasta<R: BufRead>(reader: R) -> Result<Self, GenomeError> {
        let mut name = None;
        let mut seq = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| GenomeError::Io(e.to_string()))?;
            let line = line.trim();
            if let Some(header) = line.strip_prefix('>') {
                if name.is_some() {
                    break;
                }
                name = Some(header.split_whitespace().next().unwrap_or("").to_string());
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if name.is_none() {
                return Err(GenomeError::Reference("sequence data before header".into()));
            }
            for c in line.chars() {
                match NtState::from_char(c) {
                    Some(s) if s.is_base() => seq.push(s),
                    _ => return Err(GenomeError::Reference(format!("invalid base {c:?}"))),
                }
            }
        }
        let name = name.ok_or_else(|| GenomeError::Reference("missing FASTA header".into()))?;
        if seq.is_empty() {
            return Err(GenomeError::Reference("empty sequence".into()));
        }
        Ok(Self { name, seq })
    }

    pub fn to_fasta(&self) -> String {
        let mut out = format!(">{}\n", self.name);
        for chunk in self.seq.chunks(60) {
            out.extend(chunk.iter().map(|s| s.to_char()));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> u32 {
        self.seq.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    pub fn state(&self, site: u32) -> NtState {
        self.seq[site as usize - 1]
    }
}

/// One `name<TAB>start<TAB>end` record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub name: String,
    pub start: u32,
    pub end: u32,
}

pub fn read_annotation<R: BufRead>(reader: R) -> Result<Vec<AnnotationRecord>, GenomeError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| GenomeError::Io(e.to_string()))?;
        let line_no = i + 1;
        let trimmed = line.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 {
            return Err(GenomeError::Annotation { line: line_no, msg: "expected 3 tab-separated fields".into() });
        }
        let parse = |f: &str| {
            f.parse::<u32>()
                .map_err(|_| GenomeError::Annotation { line: line_no, msg: format!("bad coordinate {f:?}") })
        };
        let (start, end) = (parse(fields[1])?, parse(fields[2])?);
        if start == 0 || end < start {
            return Err(GenomeError::Annotation { line: line_no, msg: format!("bad span {start}..{end}") });
        }
        out.push(AnnotationRecord { name: fields[0].to_string(), start, end });
    }
    Ok(out)
}

pub fn write_annotation(records: &[AnnotationRecord]) -> String {
    records.iter().map(|r| format!("{}\t{}\t{}\n", r.name, r.start, r.end)).collect()
}

/// Position of a site inside an ORF: 1-based codon index, 0-based offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodonPos {
    pub codon: u16,
    pub offset: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrfAnnotation {
    pub name: String,
    pub nt_start: u32,
    pub nt_end: u32,
    pub reference: Vec<NtState>,
}

impl OrfAnnotation {
    /// Cuts the ORF out of `genome` and checks it is a whole number of codons
    /// ending in a stop, with `expected_residues` residues when given.
    pub fn from_reference(
        record: &AnnotationRecord,
        genome: &ReferenceGenome,
        expected_residues: Option<u16>,
    ) -> Result<Self, GenomeError> {
        let err = |msg: String| GenomeError::Orf { name: record.name.clone(), msg };
        if record.end > genome.len() {
            return Err(err(format!("end {} beyond genome length {}", record.end, genome.len())));
        }
        let span = record.end - record.start + 1;
        if span % 3 != 0 {
            return Err(err(format!("span {span} is not a multiple of 3")));
        }
        let reference = genome.seq[record.start as usize - 1..record.end as usize].to_vec();
        let orf = Self { name: record.name.clone(), nt_start: record.start, nt_end: record.end, reference };
        let last = orf.reference_codon(orf.codon_count());
        if translate_codon(last)? != STOP {
            return Err(err("last codon is not a stop codon".into()));
        }
        if let Some(expected) = expected_residues {
            if orf.residue_count() != expected {
                return Err(err(format!("{} residues, expected {expected}", orf.residue_count())));
            }
        }
        Ok(orf)
    }

    pub fn codon_count(&self) -> u16 {
        ((self.nt_end - self.nt_start + 1) / 3) as u16
    }

    /// Residues excluding the terminal stop codon.
    pub fn residue_count(&self) -> u16 {
        self.codon_count() - 1
    }

    pub fn codon_of_site(&self, site: u32) -> Option<CodonPos> {
        if site < self.nt_start || site > self.nt_end {
            return None;
        }
        let rel = site - self.nt_start;
        Some(CodonPos { codon: (rel / 3 + 1) as u16, offset: (rel % 3) as u8 })
    }

    /// First genome site of a 1-based codon.
    pub fn codon_start_site(&self, codon: u16) -> u32 {
        self.nt_start + (codon as u32 - 1) * 3
    }

    pub fn reference_codon(&self, codon: u16) -> [NtState; 3] {
        let i = (codon as usize - 1) * 3;
        [self.reference[i], self.reference[i + 1], self.reference[i + 2]]
    }
}

/// What a nucleotide mutation does to the spike protein.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpikeEffect {
    Outside,
    Synonymous,
    /// Missense change or whole-codon deletion.
    Residue(AaMutation),
    /// Premature stop; not a residue-level target.
    Nonsense,
    /// Partial-codon deletion (or partial restoration of one).
    Frameshift,
    /// The site lies in the terminal stop codon.
    StopCodonSite,
}

impl SpikeEffect {
    pub fn aa_mutation(&self) -> Option<&AaMutation> {
        match self {
            SpikeEffect::Residue(m) => Some(m),
            _ => None,
        }
    }
}

/// Reference genome plus the spike ORF laid on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeMap {
    pub genome: ReferenceGenome,
    pub orf: OrfAnnotation,
}

impl SpikeMap {
    pub fn new(genome: ReferenceGenome, orf: OrfAnnotation) -> Self {
        Self { genome, orf }
    }

    /// Loads a reference and annotation and picks the [`SPIKE_ORF`] record.
    pub fn load<R1: BufRead, R2: BufRead>(
        fasta: R1,
        annotation: R2,
        expected_residues: Option<u16>,
    ) -> Result<Self, GenomeError> {
        let genome = ReferenceGenome::from_fasta(fasta)?;
        let records = read_annotation(annotation)?;
        let record = records
            .iter()
            .find(|r| r.name == SPIKE_ORF)
            .ok_or_else(|| GenomeError::Orf { name: SPIKE_ORF.into(), msg: "not in annotation".into() })?;
        let orf = OrfAnnotation::from_reference(record, &genome, expected_residues)?;
        Ok(Self { genome, orf })
    }

    /// The bundled SARS-CoV-2 reference, validated to 1273 spike residues.
    pub fn sars_cov_2() -> Self {
        Self::load(DEFAULT_REFERENCE_FASTA.as_bytes(), DEFAULT_ANNOTATION_TSV.as_bytes(), Some(SPIKE_RESIDUES))
            .expect("bundled reference is valid")
    }

    pub fn genome_length(&self) -> u32 {
        self.genome.len()
    }

    pub fn spike_codon_of_site(&self, site: u32) -> Option<CodonPos> {
        self.orf.codon_of_site(site)
    }

    /// Classifies `mutation` given the codon it lands in as it stands before
    /// the mutation (i.e. with all earlier trajectory mutations applied).
    pub fn aa_mutation_of(&self, mutation: NtMutation, codon_context: [NtState; 3]) -> SpikeEffect {
        let Some(pos) = self.orf.codon_of_site(mutation.site) else {
            return SpikeEffect::Outside;
        };
        if pos.codon == self.orf.codon_count() {
            return SpikeEffect::StopCodonSite;
        }
        let mut after = codon_context;
        after[pos.offset as usize] = mutation.to;
        if after == codon_context {
            return SpikeEffect::Synonymous;
        }
        let before_complete = codon_context.iter().all(|s| s.is_base());
        let after_complete = after.iter().all(|s| s.is_base());
        let after_deleted = after.iter().all(|s| !s.is_base());
        let (from, to) = if before_complete && after_complete {
            (translate_codon(codon_context).expect("complete codon"), translate_codon(after).expect("complete codon"))
        } else if after_deleted {
            // last remaining base of an already partially deleted codon
            let reference = translate_codon(self.orf.reference_codon(pos.codon)).expect("reference codon");
            (reference, AA_DELETION)
        } else {
            return SpikeEffect::Frameshift;
        };
        if to == from {
            return SpikeEffect::Synonymous;
        }
        if to == STOP {
            return SpikeEffect::Nonsense;
        }
        SpikeEffect::Residue(AaMutation { gene: self.orf.name.clone(), pos: pos.codon, from, to })
    }

    /// Distinct residue changes reachable by one base substitution from the
    /// given genome state. Nonsense changes are not residue targets.
    pub fn reachable_substitutions(&self, state: &GenomeState) -> BTreeSet<AaMutation> {
        let mut out = BTreeSet::new();
        for codon in 1..self.orf.codon_count() {
            let ctx = state.codon(&self.orf, codon);
            let start = self.orf.codon_start_site(codon);
            for offset in 0..3u32 {
                for base in NtState::BASES {
                    let m = NtMutation::new(start + offset, base);
                    if let SpikeEffect::Residue(aa) = self.aa_mutation_of(m, ctx) {
                        if !aa.is_deletion() {
                            out.insert(aa);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Mutable genome used to replay a trajectory from the reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenomeState {
    seq: Vec<NtState>,
}

impl GenomeState {
    pub fn from_reference(genome: &ReferenceGenome) -> Self {
        Self { seq: genome.seq.clone() }
    }

    pub fn apply(&mut self, m: NtMutation) {
        self.seq[m.site as usize - 1] = m.to;
    }

    pub fn apply_all<'a>(&mut self, muts: impl IntoIterator<Item = &'a NtMutation>) {
        for m in muts {
            self.apply(*m);
        }
    }

    pub fn state(&self, site: u32) -> NtState {
        self.seq[site as usize - 1]
    }

    pub fn codon(&self, orf: &OrfAnnotation, codon: u16) -> [NtState; 3] {
        let s = orf.codon_start_site(codon) as usize - 1;
        [self.seq[s], self.seq[s + 1], self.seq[s + 2]]
    }

    /// Codon context for a site, if the site is in the ORF.
    pub fn codon_at_site(&self, orf: &OrfAnnotation, site: u32) -> Option<[NtState; 3]> {
        orf.codon_of_site(site).map(|p| self.codon(orf, p.codon))
    }

    pub fn as_slice(&self) -> &[NtState] {
        &self.seq
    }
}

/// Replays `prior` then each of `muts` in order, returning the spike
/// residue changes produced by each step of `muts` (`None` for steps that
/// do not change a residue).
pub fn spike_effects(spike: &SpikeMap, prior: &[NtMutation], muts: &[NtMutation]) -> Vec<SpikeEffect> {
    let mut state = GenomeState::from_reference(&spike.genome);
    state.apply_all(prior);
    muts.iter()
        .map(|m| {
            let effect = match state.codon_at_site(&spike.orf, m.site) {
                Some(ctx) => spike.aa_mutation_of(*m, ctx),
                None => SpikeEffect::Outside,
            };
            state.apply(*m);
            effect
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn codon(s: &str) -> [NtState; 3] {
        let v: Vec<NtState> = s.chars().map(|c| NtState::from_char(c).unwrap()).collect();
        [v[0], v[1], v[2]]
    }

    /// Standard code transcribed per amino acid, independent of the
    /// TCAG-ordered lookup string.
    const BY_AMINO_ACID: &[(u8, &str)] = &[
        (b'F', "TTT TTC"),
        (b'L', "TTA TTG CTT CTC CTA CTG"),
        (b'I', "ATT ATC ATA"),
        (b'M', "ATG"),
        (b'V', "GTT GTC GTA GTG"),
        (b'S', "TCT TCC TCA TCG AGT AGC"),
        (b'P', "CCT CCC CCA CCG"),
        (b'T', "ACT ACC ACA ACG"),
        (b'A', "GCT GCC GCA GCG"),
        (b'Y', "TAT TAC"),
        (b'*', "TAA TAG TGA"),
        (b'H', "CAT CAC"),
        (b'Q', "CAA CAG"),
        (b'N', "AAT AAC"),
        (b'K', "AAA AAG"),
        (b'D', "GAT GAC"),
        (b'E', "GAA GAG"),
        (b'C', "TGT TGC"),
        (b'W', "TGG"),
        (b'R', "CGT CGC CGA CGG AGA AGG"),
        (b'G', "GGT GGC GGA GGG"),
    ];

    #[test]
    fn codon_table_matches_independent_transcription() {
        let mut seen = 0;
        for (aa, codons) in BY_AMINO_ACID {
            for c in codons.split_whitespace() {
                assert_eq!(translate_codon(codon(c)).unwrap(), *aa, "{c}");
                seen += 1;
            }
        }
        assert_eq!(seen, 64);
        assert_eq!(all_codons().count(), 64);
    }

    #[test]
    fn codon_examples() {
        assert_eq!(translate_codon(codon("ATG")).unwrap(), b'M');
        assert_eq!(translate_codon(codon("TAA")).unwrap(), STOP);
        assert_eq!(translate_codon(codon("GAT")).unwrap(), b'D');
        assert!(matches!(translate_codon(codon("G-T")), Err(GenomeError::CodonIncomplete(_))));
    }

    #[test]
    fn parses_mutation_strings() {
        assert_eq!("C1000T".parse::<NtMutation>().unwrap(), NtMutation::new(1000, NtState::T));
        assert_eq!("1000-".parse::<NtMutation>().unwrap(), NtMutation::new(1000, NtState::Del));
        assert_eq!("A1T".parse::<NtMutation>().unwrap(), "G1T".parse::<NtMutation>().unwrap());
        for bad in ["", "T", "C0T", "X12T", "12", "C12Z", "C1 2T", "-12T"] {
            assert!(bad.parse::<NtMutation>().is_err(), "{bad}");
        }
        let aa: AaMutation = "S:Q493E".parse().unwrap();
        assert_eq!((aa.pos, aa.from, aa.to), (493, b'Q', b'E'));
        assert_eq!(aa.to_string(), "S:Q493E");
    }

    #[test]
    fn spike_coordinates() {
        let spike = SpikeMap::sars_cov_2();
        let start = spike.orf.nt_start;
        assert_eq!(start, 21563);
        assert_eq!(spike.genome_length(), SARS_COV_2_GENOME_LENGTH);
        assert_eq!(spike.spike_codon_of_site(start), Some(CodonPos { codon: 1, offset: 0 }));
        assert_eq!(spike.spike_codon_of_site(start - 1), None);
        assert_eq!(spike.spike_codon_of_site(start + 4), Some(CodonPos { codon: 2, offset: 1 }));
        let mapped = (1..=spike.genome_length()).filter(|&s| spike.spike_codon_of_site(s).is_some()).count();
        assert_eq!(mapped, 3822);
    }

    #[test]
    fn d614g_from_codon_replay() {
        let spike = SpikeMap::sars_cov_2();
        let state = GenomeState::from_reference(&spike.genome);
        let ctx = state.codon(&spike.orf, 614);
        assert_eq!(ctx, codon("GAT"));
        let site = spike.orf.codon_start_site(614) + 1;
        assert_eq!(site, 23403);
        let effect = spike.aa_mutation_of(NtMutation::new(site, NtState::G), ctx);
        assert_eq!(effect.aa_mutation().unwrap().to_string(), "S:D614G");
    }

    #[test]
    fn synonymous_and_outside() {
        let spike = SpikeMap::sars_cov_2();
        let ctx = codon("CTA");
        let site = spike.orf.codon_start_site(10) + 2;
        assert_eq!(spike.aa_mutation_of(NtMutation::new(site, NtState::G), ctx), SpikeEffect::Synonymous);
        assert_eq!(spike.aa_mutation_of(NtMutation::new(100, NtState::G), ctx), SpikeEffect::Outside);
        let stop_site = spike.orf.nt_end;
        assert_eq!(spike.aa_mutation_of(NtMutation::new(stop_site, NtState::G), codon("TAA")), SpikeEffect::StopCodonSite);
    }

    #[test]
    fn deletions_frameshift_and_codon_loss() {
        let spike = SpikeMap::sars_cov_2();
        let site = spike.orf.codon_start_site(69);
        let ctx = codon("CAT");
        assert_eq!(spike.aa_mutation_of(NtMutation::new(site, NtState::Del), ctx), SpikeEffect::Frameshift);
        let ctx2 = [NtState::Del, NtState::Del, NtState::T];
        let eff = spike.aa_mutation_of(NtMutation::new(site + 2, NtState::Del), ctx2);
        assert_eq!(eff.aa_mutation().unwrap().to_string(), "S:H69-");
        let restore = spike.aa_mutation_of(NtMutation::new(site, NtState::C), ctx2);
        assert_eq!(restore, SpikeEffect::Frameshift);
        let mut state = GenomeState::from_reference(&spike.genome);
        let dels: Vec<_> = (0..3).map(|o| NtMutation::new(site + o, NtState::Del)).collect();
        let effects = spike_effects(&spike, &[], &dels);
        assert_eq!(effects[0], SpikeEffect::Frameshift);
        assert_eq!(effects[1], SpikeEffect::Frameshift);
        assert_eq!(effects[2].aa_mutation().unwrap().to_string(), "S:H69-");
        state.apply_all(&dels);
        assert_eq!(state.codon(&spike.orf, 69), [NtState::Del; 3]);
    }

    #[test]
    fn exhaustive_single_substitution_round_trip() {
        let spike = SpikeMap::sars_cov_2();
        let start = spike.orf.codon_start_site(5);
        for ctx in all_codons() {
            for offset in 0..3usize {
                for base in NtState::BASES {
                    if base == ctx[offset] {
                        continue;
                    }
                    let m = NtMutation::new(start + offset as u32, base);
                    let mut after = ctx;
                    after[offset] = base;
                    let (from, to) = (translate_codon(ctx).unwrap(), translate_codon(after).unwrap());
                    match spike.aa_mutation_of(m, ctx) {
                        SpikeEffect::Residue(aa) => {
                            assert_eq!(aa.to, to);
                            assert_eq!(aa.from, from);
                            assert!(aa.pos <= SPIKE_RESIDUES);
                        }
                        SpikeEffect::Synonymous => assert_eq!(from, to),
                        SpikeEffect::Nonsense => assert_eq!(to, STOP),
                        other => panic!("unexpected {other:?}"),
                    }
                }
            }
        }
    }

    #[test]
    fn reachable_count_near_reported_value() {
        let spike = SpikeMap::sars_cov_2();
        let state = GenomeState::from_reference(&spike.genome);
        let n = spike.reachable_substitutions(&state).len();
        assert!((7_000..=8_500).contains(&n), "{n}");
    }

    #[test]
    fn rejects_bad_orf() {
        let genome = ReferenceGenome::from_fasta(">x\nATGAAATAA\n".as_bytes()).unwrap();
        let ok = AnnotationRecord { name: "S".into(), start: 1, end: 9 };
        let orf = OrfAnnotation::from_reference(&ok, &genome, Some(2)).unwrap();
        assert_eq!(orf.residue_count(), 2);
        let short = AnnotationRecord { name: "S".into(), start: 1, end: 8 };
        assert!(OrfAnnotation::from_reference(&short, &genome, None).is_err());
        assert!(OrfAnnotation::from_reference(&ok, &genome, Some(1273)).is_err());
        assert!(read_annotation("S\t10\n".as_bytes()).is_err());
    }
}
