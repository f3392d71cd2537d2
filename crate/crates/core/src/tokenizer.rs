//! Fixed vocabulary for mutations, locations and sampling times.
//!
//! Id space, in order:
//!
//! | block       | size                  |
//! |-------------|-----------------------|
//! | mutations   | `genome_length * 5`   |
//! | locations   | 366                   |
//! | year        | 7                     |
//! | year-month  | 84                    |
//! | day         | 31                    |
//! | unknown     | 1                     |
//! | reserved    | 206                   |
//!
//! With the SARS-CoV-2 genome this is 150,210 ids. Mutation ids are
//! `(site - 1) * 5 + state` with states ordered `A, T, C, G, Del`. Locations
//! past the 366th spill into the reserved block. Ids never move once assigned.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::ops::Range;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::date::PartialDate;
use crate::genome::{NtMutation, NtState, SARS_COV_2_GENOME_LENGTH};
use crate::tree::Trajectory;

pub const LOCATION_TOKENS: u32 = 366;
pub const YEAR_TOKENS: u32 = 7;
pub const MONTH_TOKENS: u32 = 84;
pub const DAY_TOKENS: u32 = 31;
pub const TIME_TOKENS: u32 = YEAR_TOKENS + MONTH_TOKENS + DAY_TOKENS;
pub const UNKNOWN_TOKENS: u32 = 1;
pub const RESERVED_TOKENS: u32 = 206;
pub const DEFAULT_BASE_YEAR: i32 = 2019;

/// country, region, year, year-month, day
pub const PREFIX_LEN: usize = 5;

const LAYOUT_MAGIC: &str = "mutraj-tokenizer-layout 1";
const STREAM_MAGIC: &[u8; 8] = b"MTRJTOK1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("site {site} out of range 1..={genome_length}")]
    SiteOutOfRange { site: u32, genome_length: u32 },
    #[error("year {year} out of layout range {base}..={last}")]
    YearOutOfRange { year: i32, base: i32, last: i32 },
    #[error("location registry full ({0} entries)")]
    RegistryFull(usize),
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("token stream: {0}")]
    Malformed(String),
    #[error("layout line {line}: {msg}")]
    BadLayout { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerLayout {
    genome_length: u32,
    base_year: i32,
    locations: Vec<String>,
    lookup: HashMap<String, u32>,
}

/// Registry key for a sub-national region.
pub fn region_key(country: &str, region: &str) -> String {
    format!("{country}/{region}")
}

impl TokenizerLayout {
    pub fn new(genome_length: u32, base_year: i32) -> Self {
        Self { genome_length, base_year, locations: Vec::new(), lookup: HashMap::new() }
    }

    pub fn sars_cov_2() -> Self {
        Self::new(SARS_COV_2_GENOME_LENGTH, DEFAULT_BASE_YEAR)
    }

    pub fn genome_length(&self) -> u32 {
        self.genome_length
    }

    pub fn base_year(&self) -> i32 {
        self.base_year
    }

    pub fn locations(&self) -> &[String] {
        &self.locations
    }

    pub fn vocab_size(&self) -> u32 {
        self.reserved_block().end
    }

    pub fn mutation_block(&self) -> Range<u32> {
        0..self.genome_length * 5
    }

    pub fn location_block(&self) -> Range<u32> {
        let s = self.mutation_block().end;
        s..s + LOCATION_TOKENS
    }

    pub fn year_block(&self) -> Range<u32> {
        let s = self.location_block().end;
        s..s + YEAR_TOKENS
    }

    pub fn month_block(&self) -> Range<u32> {
        let s = self.year_block().end;
        s..s + MONTH_TOKENS
    }

    pub fn day_block(&self) -> Range<u32> {
        let s = self.month_block().end;
        s..s + DAY_TOKENS
    }

    pub fn unknown_token(&self) -> u32 {
        self.day_block().end
    }

    pub fn reserved_block(&self) -> Range<u32> {
        let s = self.unknown_token() + UNKNOWN_TOKENS;
        s..s + RESERVED_TOKENS
    }

    pub fn is_mutation_token(&self, id: u32) -> bool {
        id < self.genome_length * 5
    }

    pub fn mutation_token(&self, site: u32, state: NtState) -> Result<u32, TokenizerError> {
        if site == 0 || site > self.genome_length {
            return Err(TokenizerError::SiteOutOfRange { site, genome_length: self.genome_length });
        }
        Ok((site - 1) * 5 + state.index() as u32)
    }

    pub fn token_of(&self, m: NtMutation) -> Result<u32, TokenizerError> {
        self.mutation_token(m.site, m.to)
    }

    pub fn mutation_of_token(&self, id: u32) -> Option<NtMutation> {
        if !self.is_mutation_token(id) {
            return None;
        }
        Some(NtMutation::new(id / 5 + 1, NtState::from_index((id % 5) as usize).expect("0..5")))
    }

    /// Year, year-month and day tokens; missing parts map to the unknown token.
    pub fn time_tokens(&self, date: Option<PartialDate>) -> Result<[u32; 3], TokenizerError> {
        let unk = self.unknown_token();
        let Some(date) = date else {
            return Ok([unk; 3]);
        };
        let offset = date.year - self.base_year;
        if !(0..YEAR_TOKENS as i32).contains(&offset) {
            return Err(TokenizerError::YearOutOfRange {
                year: date.year,
                base: self.base_year,
                last: self.base_year + YEAR_TOKENS as i32 - 1,
            });
        }
        let year = self.year_block().start + offset as u32;
        let month = match date.month {
            Some(m) => self.month_block().start + offset as u32 * 12 + (m as u32 - 1),
            None => unk,
        };
        let day = match (date.month, date.day) {
            (Some(_), Some(d)) => self.day_block().start + d as u32 - 1,
            _ => unk,
        };
        Ok([year, month, day])
    }

    fn location_id_of_index(&self, idx: usize) -> u32 {
        let idx = idx as u32;
        if idx < LOCATION_TOKENS {
            self.location_block().start + idx
        } else {
            self.reserved_block().start + (idx - LOCATION_TOKENS)
        }
    }

    fn location_index_of_id(&self, id: u32) -> Option<usize> {
        let idx = if self.location_block().contains(&id) {
            id - self.location_block().start
        } else if self.reserved_block().contains(&id) {
            LOCATION_TOKENS + id - self.reserved_block().start
        } else {
            return None;
        };
        ((idx as usize) < self.locations.len()).then_some(idx as usize)
    }

    /// Registers a location name, returning its (possibly existing) id.
    pub fn register_location(&mut self, name: &str) -> Result<u32, TokenizerError> {
        if let Some(&id) = self.lookup.get(name) {
            return Ok(id);
        }
        if self.locations.len() as u32 >= LOCATION_TOKENS + RESERVED_TOKENS {
            return Err(TokenizerError::RegistryFull(self.locations.len()));
        }
        let id = self.location_id_of_index(self.locations.len());
        self.locations.push(name.to_string());
        self.lookup.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn location_id(&self, name: &str) -> Option<u32> {
        self.lookup.get(name).copied()
    }

    /// Registers the country and, when present, its region.
    pub fn register_trajectory_locations(&mut self, t: &Trajectory) -> Result<(), TokenizerError> {
        if let Some(c) = &t.meta.country {
            self.register_location(c)?;
            if let Some(r) = &t.meta.region {
                self.register_location(&region_key(c, r))?;
            }
        }
        Ok(())
    }

    pub fn location_tokens(&self, country: Option<&str>, region: Option<&str>) -> (u32, u32) {
        let unk = self.unknown_token();
        let c = country.and_then(|c| self.location_id(c)).unwrap_or(unk);
        let r = match (country, region) {
            (Some(c), Some(r)) => self.location_id(&region_key(c, r)).unwrap_or(unk),
            _ => unk,
        };
        (c, r)
    }

    pub fn tokenize(&self, t: &Trajectory) -> Result<TokenizedSample, TokenizerError> {
        let (country, region) = self.location_tokens(t.meta.country.as_deref(), t.meta.region.as_deref());
        let [y, m, d] = self.time_tokens(t.meta.collected)?;
        let trajectory = t.all_mutations().map(|m| self.token_of(*m)).collect::<Result<Vec<_>, _>>()?;
        Ok(TokenizedSample {
            prefix: [country, region, y, m, d],
            trajectory,
            split_index: t.variant_mutations.len(),
        })
    }

    /// Decodes a prefix followed by mutation tokens.
    pub fn detokenize(&self, ids: &[u32]) -> Result<Detokenized, TokenizerError> {
        if ids.len() < PREFIX_LEN {
            return Err(TokenizerError::Malformed(format!("{} tokens, prefix needs {PREFIX_LEN}", ids.len())));
        }
        let unk = self.unknown_token();
        let location = |id: u32| -> Result<Option<&str>, TokenizerError> {
            if id == unk {
                return Ok(None);
            }
            let idx = self.location_index_of_id(id).ok_or(TokenizerError::UnknownToken(id))?;
            Ok(Some(&self.locations[idx]))
        };
        let country = location(ids[0])?.map(str::to_string);
        let region = location(ids[1])?.map(|k| k.split_once('/').map_or(k, |(_, r)| r).to_string());
        let year = if ids[2] == unk {
            None
        } else if self.year_block().contains(&ids[2]) {
            Some(self.base_year + (ids[2] - self.year_block().start) as i32)
        } else {
            return Err(TokenizerError::UnknownToken(ids[2]));
        };
        let month = if ids[3] == unk {
            None
        } else if self.month_block().contains(&ids[3]) {
            Some(((ids[3] - self.month_block().start) % 12 + 1) as u8)
        } else {
            return Err(TokenizerError::UnknownToken(ids[3]));
        };
        let day = if ids[4] == unk {
            None
        } else if self.day_block().contains(&ids[4]) {
            Some((ids[4] - self.day_block().start + 1) as u8)
        } else {
            return Err(TokenizerError::UnknownToken(ids[4]));
        };
        let collected = year.map(|year| PartialDate { year, month, day: month.and(day) });
        let mutations = ids[PREFIX_LEN..]
            .iter()
            .map(|&id| self.mutation_of_token(id).ok_or(TokenizerError::UnknownToken(id)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Detokenized { country, region, collected, mutations })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{LAYOUT_MAGIC}\ngenome_length {}\nbase_year {}\nlocations {}\n",
            self.genome_length,
            self.base_year,
            self.locations.len()
        );
        for l in &self.locations {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn from_text<R: BufRead>(reader: R) -> Result<Self, TokenizerError> {
        let lines: Vec<String> = reader.lines().collect::<Result<_, _>>().map_err(|e| TokenizerError::Io(e.to_string()))?;
        let bad = |line: usize, msg: &str| TokenizerError::BadLayout { line, msg: msg.to_string() };
        if lines.first().map(String::as_str) != Some(LAYOUT_MAGIC) {
            return Err(bad(1, "missing layout header"));
        }
        let field = |i: usize, key: &str| -> Result<&str, TokenizerError> {
            lines.get(i).and_then(|l| l.strip_prefix(key)).and_then(|l| l.strip_prefix(' ')).ok_or_else(|| bad(i + 1, key))
        };
        let genome_length: u32 = field(1, "genome_length")?.parse().map_err(|_| bad(2, "genome_length"))?;
        let base_year: i32 = field(2, "base_year")?.parse().map_err(|_| bad(3, "base_year"))?;
        let n: usize = field(3, "locations")?.parse().map_err(|_| bad(4, "locations"))?;
        if lines.len() != 4 + n {
            return Err(bad(lines.len(), "location count does not match"));
        }
        let mut layout = Self::new(genome_length, base_year);
        for (i, name) in lines[4..].iter().enumerate() {
            if name.is_empty() || layout.lookup.contains_key(name) {
                return Err(bad(i + 5, "empty or duplicate location"));
            }
            layout.register_location(name).map_err(|e| bad(i + 5, &e.to_string()))?;
        }
        Ok(layout)
    }

    /// Hex SHA-256 of the persisted text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// A trajectory as token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSample {
    pub prefix: [u32; PREFIX_LEN],
    /// Variant mutation tokens followed by sequence mutation tokens.
    pub trajectory: Vec<u32>,
    /// Number of variant mutation tokens.
    pub split_index: usize,
}

impl TokenizedSample {
    pub fn len(&self) -> usize {
        PREFIX_LEN + self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ids(&self) -> Vec<u32> {
        let mut v = self.prefix.to_vec();
        v.extend_from_slice(&self.trajectory);
        v
    }

    /// True on trajectory tokens only.
    pub fn loss_mask(&self) -> Vec<bool> {
        let mut m = vec![false; PREFIX_LEN];
        m.resize(self.len(), true);
        m
    }

    pub fn variant_tokens(&self) -> &[u32] {
        &self.trajectory[..self.split_index]
    }

    pub fn sequence_tokens(&self) -> &[u32] {
        &self.trajectory[self.split_index..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Detokenized {
    pub country: Option<String>,
    pub region: Option<String>,
    pub collected: Option<PartialDate>,
    pub mutations: Vec<NtMutation>,
}

/// Writes samples as little-endian `u32`s after an 8-byte magic and a
/// sample count. Each sample is `len, split_index, ids...` where `ids`
/// includes the prefix.
pub fn write_token_stream<W: Write>(mut w: W, samples: &[TokenizedSample]) -> std::io::Result<()> {
    w.write_all(STREAM_MAGIC)?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        w.write_all(&(s.len() as u32).to_le_bytes())?;
        w.write_all(&(s.split_index as u32).to_le_bytes())?;
        for id in s.ids() {
            w.write_all(&id.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_token_stream<R: Read>(mut r: R) -> Result<Vec<TokenizedSample>, TokenizerError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| TokenizerError::Io(e.to_string()))?;
    if buf.len() < 12 || &buf[..8] != STREAM_MAGIC {
        return Err(TokenizerError::Malformed("bad magic".into()));
    }
    let mut words = buf[8..].chunks(4).map(|c| {
        c.try_into().map(u32::from_le_bytes).map_err(|_| TokenizerError::Malformed("truncated word".into()))
    });
    let mut next = || words.next().unwrap_or_else(|| Err(TokenizerError::Malformed("truncated stream".into())));
    let n = next()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = next()? as usize;
        let split_index = next()? as usize;
        if len < PREFIX_LEN || split_index > len - PREFIX_LEN {
            return Err(TokenizerError::Malformed(format!("bad sample header len={len} split={split_index}")));
        }
        let mut prefix = [0u32; PREFIX_LEN];
        for p in prefix.iter_mut() {
            *p = next()?;
        }
        let trajectory = (PREFIX_LEN..len).map(|_| next()).collect::<Result<Vec<_>, _>>()?;
        out.push(TokenizedSample { prefix, trajectory, split_index });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::SequenceMeta;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    #[test]
    fn default_layout_totals() {
        let l = TokenizerLayout::sars_cov_2();
        assert_eq!(l.vocab_size(), 150_210);
        assert_eq!(l.mutation_block(), 0..149_515);
        assert_eq!(l.location_block(), 149_515..149_881);
        assert_eq!(l.year_block().start, 149_881);
        assert_eq!(l.day_block().end, 150_003);
        assert_eq!(l.unknown_token(), 150_003);
        assert_eq!(l.reserved_block(), 150_004..150_210);
    }

    #[test]
    fn mutation_token_examples() {
        let l = TokenizerLayout::sars_cov_2();
        assert_eq!(l.mutation_token(1, NtState::A).unwrap(), 0);
        assert_eq!(l.mutation_token(29_903, NtState::Del).unwrap(), 149_514);
        assert!(l.mutation_token(0, NtState::A).is_err());
        assert!(l.mutation_token(29_904, NtState::A).is_err());
        assert_eq!(l.token_of("A1T".parse().unwrap()), l.token_of("G1T".parse().unwrap()));
    }

    #[test]
    fn time_token_examples() {
        let l = TokenizerLayout::sars_cov_2();
        let [y, m, d] = l.time_tokens(Some("2019-01-01".parse().unwrap())).unwrap();
        assert_eq!((y - l.year_block().start, m - l.month_block().start, d - l.day_block().start), (0, 0, 0));
        let [y, m, d] = l.time_tokens(Some("2025-12-31".parse().unwrap())).unwrap();
        assert_eq!((y - l.year_block().start, m - l.month_block().start, d - l.day_block().start), (6, 83, 30));
        let unk = l.unknown_token();
        let [y, m, d] = l.time_tokens(Some("2025".parse().unwrap())).unwrap();
        assert_eq!((y - l.year_block().start, m, d), (6, unk, unk));
        assert_eq!(l.time_tokens(None).unwrap(), [unk; 3]);
        assert!(matches!(l.time_tokens(Some("2026".parse().unwrap())), Err(TokenizerError::YearOutOfRange { .. })));
        assert!(l.time_tokens(Some("2018-05".parse().unwrap())).is_err());
    }

    #[test]
    fn location_registry_capacity() {
        let mut l = TokenizerLayout::new(10, 2019);
        assert_eq!(l.register_location("L0").unwrap(), l.location_block().start);
        assert_eq!(l.location_tokens(Some("L0"), None), (l.location_block().start, l.unknown_token()));
        assert_eq!(l.location_tokens(Some("nowhere"), None).0, l.unknown_token());
        for i in 1..366 {
            l.register_location(&format!("L{i}")).unwrap();
        }
        assert_eq!(l.register_location("L366").unwrap(), l.reserved_block().start);
        for i in 367..572 {
            l.register_location(&format!("L{i}")).unwrap();
        }
        assert_eq!(l.register_location("L572"), Err(TokenizerError::RegistryFull(572)));
        assert_eq!(l.register_location("L3").unwrap(), l.location_block().start + 3);
    }

    #[test]
    fn tokenize_counts() {
        let l = TokenizerLayout::new(1000, 2019);
        let meta = SequenceMeta {
            name: "s".into(),
            collected: None,
            released: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            country: None,
            region: None,
        };
        let t = Trajectory {
            meta: meta.clone(),
            variant_name: "V".into(),
            variant_mutations: vec!["1A".parse().unwrap(), "2T".parse().unwrap()],
            sequence_mutations: vec!["3-".parse().unwrap()],
        };
        let s = l.tokenize(&t).unwrap();
        assert_eq!(s.split_index, 2);
        assert_eq!(s.loss_mask().iter().filter(|b| **b).count(), 3);
        assert!(s.loss_mask()[..PREFIX_LEN].iter().all(|b| !b));
        let empty = Trajectory { meta, variant_name: "root".into(), variant_mutations: vec![], sequence_mutations: vec![] };
        let s = l.tokenize(&empty).unwrap();
        assert_eq!(s.len(), PREFIX_LEN);
        assert!(s.loss_mask().iter().all(|b| !b));
        assert!(matches!(l.detokenize(&[l.reserved_block().start; 6]), Err(TokenizerError::UnknownToken(_))));
    }

    #[test]
    fn layout_text_is_stable() {
        let mut l = TokenizerLayout::new(1000, 2020);
        l.register_location("France").unwrap();
        l.register_location("China/Hubei").unwrap();
        let text = l.to_text();
        let back = TokenizerLayout::from_text(text.as_bytes()).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.to_text(), text);
        assert_eq!(back.hash(), l.hash());
        assert!(TokenizerLayout::from_text("junk\n".as_bytes()).is_err());
    }

    fn arb_trajectory(genome_length: u32, countries: usize) -> impl Strategy<Value = Trajectory> {
        let mutation = (1..=genome_length, 0..5usize).prop_map(|(s, i)| NtMutation::new(s, NtState::from_index(i).unwrap()));
        let date = prop_oneof![
            Just(None),
            (2019..2026i32).prop_map(|y| Some(PartialDate { year: y, month: None, day: None })),
            (2019..2026i32, 1..=12u8).prop_map(|(y, m)| Some(PartialDate { year: y, month: Some(m), day: None })),
            (2019..2026i32, 1..=12u8, 1..=28u8).prop_map(|(y, m, d)| Some(PartialDate { year: y, month: Some(m), day: Some(d) })),
        ];
        let place = prop_oneof![
            Just((None, None)),
            (0..countries).prop_map(|c| (Some(format!("C{c}")), None)),
            (0..countries, 0..3usize).prop_map(|(c, r)| (Some(format!("C{c}")), Some(format!("R{r}")))),
        ];
        (
            prop::collection::vec(mutation.clone(), 0..20),
            prop::collection::vec(mutation, 0..6),
            date,
            place,
        )
            .prop_map(|(v, s, collected, (country, region))| Trajectory {
                meta: SequenceMeta {
                    name: "x".into(),
                    collected,
                    released: NaiveDate::from_ymd_opt(2026, 1, 1).unwrap(),
                    country,
                    region,
                },
                variant_name: "V".into(),
                variant_mutations: v,
                sequence_mutations: s,
            })
    }

    fn registered_layout() -> TokenizerLayout {
        let mut l = TokenizerLayout::new(2000, 2019);
        for c in 0..130 {
            l.register_location(&format!("C{c}")).unwrap();
            for r in 0..3 {
                l.register_location(&region_key(&format!("C{c}"), &format!("R{r}"))).unwrap();
            }
        }
        l
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn round_trip(t in arb_trajectory(2000, 130)) {
            let l = registered_layout();
            let s = l.tokenize(&t).unwrap();
            let d = l.detokenize(&s.ids()).unwrap();
            prop_assert_eq!(d.country, t.meta.country.clone());
            prop_assert_eq!(d.region, t.meta.region.clone());
            prop_assert_eq!(d.collected, t.meta.collected);
            prop_assert_eq!(d.mutations, t.all_mutations().copied().collect::<Vec<_>>());
            prop_assert_eq!(s.split_index, t.variant_mutations.len());
        }

        #[test]
        fn token_stream_round_trip(ts in prop::collection::vec(arb_trajectory(2000, 130), 0..20)) {
            let l = registered_layout();
            let samples: Vec<_> = ts.iter().map(|t| l.tokenize(t).unwrap()).collect();
            let mut buf = Vec::new();
            write_token_stream(&mut buf, &samples).unwrap();
            prop_assert_eq!(read_token_stream(buf.as_slice()).unwrap(), samples);
        }

        #[test]
        fn mutation_token_bijection(site in 1..=29_903u32, state in 0..5usize) {
            let l = TokenizerLayout::sars_cov_2();
            let st = NtState::from_index(state).unwrap();
            let id = l.mutation_token(site, st).unwrap();
            prop_assert!(l.mutation_block().contains(&id));
            prop_assert_eq!(l.mutation_of_token(id), Some(NtMutation::new(site, st)));
        }
    }
}
