//! Sampling densities, representative weights and epoch sampling probabilities.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::date::YearMonth;
use crate::tokenizer::region_key;
use crate::tree::{SequenceMeta, Trajectory};

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("invalid weight config: {0}")]
    Config(String),
    #[error("representative weight {r} is below r0/e, sampling probability would be non-positive")]
    WeightTooSmall { r: f64 },
    #[error("sample month {t} not before cutoff month {t0}")]
    NotBeforeCutoff { t: YearMonth, t0: YearMonth },
    #[error("population table line {line}: {msg}")]
    Population { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    /// Densities in sequences per million population per month.
    pub d0: f64,
    pub d1: f64,
    pub d2: f64,
    pub m: f64,
    /// Persons.
    pub r0: f64,
    /// Temporal exponent, signed: `p' = p * age^lambda`.
    pub lambda: f64,
    /// Countries whose density is computed per sub-region.
    pub regional_countries: Vec<String>,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            d0: 0.1,
            d1: 10.0,
            d2: 10_000.0,
            m: 10.0,
            r0: 100.0,
            lambda: 0.1,
            regional_countries: vec!["China".into(), "India".into(), "USA".into()],
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<(), WeightError> {
        let ok = |c: bool, msg: &str| if c { Ok(()) } else { Err(WeightError::Config(msg.into())) };
        ok(0.0 < self.d0 && self.d0 < self.d1 && self.d1 < self.d2, "need 0 < d0 < d1 < d2")?;
        ok(self.m > 0.0, "need m > 0")?;
        ok(self.r0 > 0.0, "need r0 > 0")?;
        ok(self.lambda.is_finite(), "lambda must be finite")
    }
}

/// Persons represented by one sequence at density `d`.
pub fn representative_weight(d: f64, cfg: &WeightConfig) -> f64 {
    let per_million = if d <= cfg.d0 {
        1.0 / (cfg.d0 * cfg.d1).sqrt()
    } else if d <= cfg.d1 {
        1.0 / (d * cfg.d1).sqrt()
    } else if d <= cfg.d2 {
        1.0 / d
    } else {
        1.0 / cfg.d2
    };
    1e6 * per_million
}

pub fn sampling_probability(r: f64, cfg: &WeightConfig) -> Result<f64, WeightError> {
    let p = ((r / cfg.r0).ln() + 1.0) / cfg.m;
    if p > 0.0 {
        Ok(p)
    } else {
        Err(WeightError::WeightTooSmall { r })
    }
}

/// Calendar months between `t` and `t0`.
pub fn month_age(t: YearMonth, t0: YearMonth) -> Result<i64, WeightError> {
    let age = t0.index() - t.index();
    if age < 1 {
        return Err(WeightError::NotBeforeCutoff { t, t0 });
    }
    Ok(age)
}

pub fn temporal_adjust(p: f64, t: YearMonth, t0: YearMonth, lambda: f64) -> Result<f64, WeightError> {
    Ok(p * (month_age(t, t0)? as f64).powf(lambda))
}

/// Key used to look up the population for a sequence's density.
pub fn density_key(meta: &SequenceMeta, cfg: &WeightConfig) -> Option<String> {
    let country = meta.country.as_deref()?;
    match &meta.region {
        Some(r) if cfg.regional_countries.iter().any(|c| c == country) => Some(region_key(country, r)),
        _ => Some(country.to_string()),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PopulationTable(pub BTreeMap<String, f64>);

impl PopulationTable {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.get(key).copied()
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self, WeightError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| WeightError::Population { line: 1, msg: e.to_string() })?;
        if headers != vec!["region_key", "population"] {
            return Err(WeightError::Population { line: 1, msg: "expected header region_key,population".into() });
        }
        let mut out = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| WeightError::Population { line, msg: e.to_string() })?;
            let bad = |msg: &str| WeightError::Population { line, msg: msg.into() };
            let p: f64 = rec[1].trim().parse().map_err(|_| bad("population is not a number"))?;
            if !(p > 0.0 && p.is_finite()) {
                return Err(bad("population must be positive"));
            }
            if out.insert(rec[0].to_string(), p).is_some() {
                return Err(bad("duplicate region_key"));
            }
        }
        Ok(Self(out))
    }

    pub fn to_csv<W: Write>(&self, w: W) -> Result<(), WeightError> {
        let mut wtr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| WeightError::Io(e.to_string());
        wtr.write_record(["region_key", "population"]).map_err(io)?;
        for (k, p) in &self.0 {
            wtr.write_record([k.as_str(), &p.to_string()]).map_err(io)?;
        }
        wtr.flush().map_err(|e| WeightError::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRecord {
    pub region_key: String,
    pub month: YearMonth,
    pub n: u64,
    #[serde(rename = "P")]
    pub population: f64,
    pub d: f64,
    pub r: f64,
}

/// Per (region, month) sequence densities over the given trajectories.
/// Sequences without a location, a collection month, or a population entry
/// are not counted.
pub fn density_table(trajs: &[Trajectory], pop: &PopulationTable, cfg: &WeightConfig) -> Vec<DensityRecord> {
    let counts = trajs
        .par_iter()
        .filter_map(|t| {
            let key = density_key(&t.meta, cfg)?;
            let month = t.meta.collected?.year_month()?;
            pop.get(&key)?;
            Some((key, month))
        })
        .fold(HashMap::new, |mut acc: HashMap<(String, YearMonth), u64>, k| {
            *acc.entry(k).or_default() += 1;
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        });
    let mut out: Vec<DensityRecord> = counts
        .into_iter()
        .map(|((region_key, month), n)| {
            let population = pop.get(&region_key).expect("filtered above");
            let d = n as f64 / (population / 1e6);
            DensityRecord { region_key, month, n, population, d, r: representative_weight(d, cfg) }
        })
        .collect();
    out.sort_by(|a, b| (&a.region_key, a.month).cmp(&(&b.region_key, b.month)));
    out
}

pub fn write_density_report<W: Write>(w: W, records: &[DensityRecord]) -> Result<(), WeightError> {
    let mut wtr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| WeightError::Io(e.to_string());
    wtr.write_record(["region_key", "month", "n", "P", "d", "r"]).map_err(io)?;
    for d in records {
        wtr.write_record([
            d.region_key.clone(),
            d.month.to_string(),
            d.n.to_string(),
            d.population.to_string(),
            d.d.to_string(),
            d.r.to_string(),
        ])
        .map_err(io)?;
    }
    wtr.flush().map_err(|e| WeightError::Io(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceWeight {
    pub r: f64,
    pub p: f64,
    pub p_adj: f64,
}

fn density_lookup(densities: &[DensityRecord]) -> HashMap<(&str, YearMonth), f64> {
    densities.iter().map(|d| ((d.region_key.as_str(), d.month), d.r)).collect()
}

fn lookup_r(t: &Trajectory, by_key: &HashMap<(&str, YearMonth), f64>, cfg: &WeightConfig) -> f64 {
    let month = t.meta.collected.and_then(|c| c.year_month());
    match (density_key(&t.meta, cfg), month) {
        (Some(k), Some(m)) => by_key.get(&(k.as_str(), m)).copied().unwrap_or(cfg.r0),
        _ => cfg.r0,
    }
}

/// Representative weight `r` of each trajectory, with no temporal term.
/// Sequences missing a density entry get `r0`.
pub fn representative_weights(trajs: &[Trajectory], densities: &[DensityRecord], cfg: &WeightConfig) -> Vec<f64> {
    let by_key = density_lookup(densities);
    trajs.par_iter().map(|t| lookup_r(t, &by_key, cfg)).collect()
}

/// Weights for each trajectory against cutoff month `t0`.
///
/// Sequences missing a density entry get `r = r0`. Sequences without a
/// collection month are not temporally adjusted. A sequence collected in the
/// cutoff month itself counts as one month old.
pub fn sequence_weights(
    trajs: &[Trajectory],
    densities: &[DensityRecord],
    cfg: &WeightConfig,
    t0: YearMonth,
) -> Result<Vec<SequenceWeight>, WeightError> {
    cfg.validate()?;
    let by_key = density_lookup(densities);
    trajs
        .par_iter()
        .map(|t| {
            let month = t.meta.collected.and_then(|c| c.year_month());
            let r = lookup_r(t, &by_key, cfg);
            let p = sampling_probability(r, cfg)?;
            let p_adj = match month {
                Some(m) if m == t0 => p,
                Some(m) => temporal_adjust(p, m, t0, cfg.lambda)?,
                None => p,
            };
            Ok(SequenceWeight { r, p, p_adj })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::date::PartialDate;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs())
    }

    #[test]
    fn anchor_points() {
        let c = WeightConfig::default();
        assert!(close(representative_weight(0.05, &c), 1_000_000.0, 1e-12));
        assert!(close(representative_weight(10.0, &c), 100_000.0, 1e-12));
        assert!(close(representative_weight(20_000.0, &c), 100.0, 1e-12));
        assert!(close(representative_weight(100.0, &c), 10_000.0, 1e-12));
        assert!(close(representative_weight(0.0, &c), 1_000_000.0, 1e-12));
    }

    #[test]
    fn continuity_at_breakpoints() {
        let c = WeightConfig::default();
        for b in [c.d0, c.d1, c.d2] {
            let lo = representative_weight(b, &c);
            let hi = representative_weight(b * (1.0 + 1e-12), &c);
            assert!(close(lo, hi, 1e-9), "{b}: {lo} vs {hi}");
        }
    }

    #[test]
    fn probability_examples() {
        let c = WeightConfig::default();
        assert_eq!(sampling_probability(100.0, &c).unwrap(), 0.1);
        assert!(close(sampling_probability(1e6, &c).unwrap(), (1e4f64.ln() + 1.0) / 10.0, 1e-15));
        let unit = WeightConfig { m: 1.0, ..c.clone() };
        assert_eq!(sampling_probability(100.0, &unit).unwrap(), 1.0);
        assert!(sampling_probability(100.0 / std::f64::consts::E, &c).is_err());
        assert!(sampling_probability(10.0, &c).is_err());
    }

    #[test]
    fn temporal_examples() {
        let t0: YearMonth = "2023-06".parse().unwrap();
        let p = 0.7;
        assert_eq!(temporal_adjust(p, "2023-05".parse().unwrap(), t0, 0.1).unwrap(), p);
        assert_eq!(temporal_adjust(p, "2020-05".parse().unwrap(), t0, 0.0).unwrap(), p);
        let t = t0.add_months(-32);
        assert!(close(temporal_adjust(1.0, t, t0, 0.1).unwrap(), 2f64.sqrt(), 1e-12));
        assert!(matches!(temporal_adjust(p, t0, t0, 0.1), Err(WeightError::NotBeforeCutoff { .. })));
        assert!(temporal_adjust(p, t0.add_months(1), t0, 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(WeightConfig::default().validate().is_ok());
        assert!(WeightConfig { d1: 0.05, ..Default::default() }.validate().is_err());
        assert!(WeightConfig { m: 0.0, ..Default::default() }.validate().is_err());
        assert!(WeightConfig { r0: -1.0, ..Default::default() }.validate().is_err());
    }

    fn traj(country: Option<&str>, region: Option<&str>, date: &str) -> Trajectory {
        Trajectory {
            meta: SequenceMeta {
                name: "s".into(),
                collected: Some(date.parse::<PartialDate>().unwrap()),
                released: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
                country: country.map(Into::into),
                region: region.map(Into::into),
            },
            variant_name: "V".into(),
            variant_mutations: vec![],
            sequence_mutations: vec![],
        }
    }

    #[test]
    fn densities_and_weights() {
        let pop = PopulationTable::from_csv("region_key,population\nFrance,2000000\nChina/Hubei,1000000\n".as_bytes()).unwrap();
        let cfg = WeightConfig::default();
        let trajs = vec![
            traj(Some("France"), Some("Paris"), "2023-01-05"),
            traj(Some("France"), None, "2023-01-20"),
            traj(Some("France"), None, "2023-02-20"),
            traj(Some("China"), Some("Hubei"), "2023-01-02"),
            traj(Some("Mars"), None, "2023-01-02"),
            traj(None, None, "2023-01-02"),
            traj(Some("France"), None, "2023"),
        ];
        let dens = density_table(&trajs, &pop, &cfg);
        let got: Vec<_> = dens.iter().map(|d| (d.region_key.as_str(), d.month.to_string(), d.n, d.d)).collect();
        assert_eq!(
            got,
            vec![
                ("China/Hubei", "2023-01".to_string(), 1, 1.0),
                ("France", "2023-01".to_string(), 2, 1.0),
                ("France", "2023-02".to_string(), 1, 0.5),
            ]
        );
        let t0: YearMonth = "2023-02".parse().unwrap();
        let w = sequence_weights(&trajs, &dens, &cfg, t0).unwrap();
        assert!(close(w[0].r, 1e6 / 10f64.sqrt(), 1e-12));
        assert_eq!(w[2].p_adj, w[2].p);
        assert!(close(w[0].p_adj, w[0].p, 1e-15));
        assert_eq!(w[4].r, cfg.r0);
        assert_eq!(w[5].r, cfg.r0);
        assert_eq!((w[6].r, w[6].p_adj), (cfg.r0, w[6].p));
        let mut buf = Vec::new();
        write_density_report(&mut buf, &dens).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("region_key,month,n,P,d,r\nChina/Hubei,2023-01,1,1000000,1,"));
        let late = vec![traj(Some("France"), None, "2023-03-01")];
        assert!(sequence_weights(&late, &dens, &cfg, t0).is_err());
    }

    #[test]
    fn population_table_errors() {
        assert!(PopulationTable::from_csv("key,pop\n".as_bytes()).is_err());
        assert!(PopulationTable::from_csv("region_key,population\nA,0\n".as_bytes()).is_err());
        assert!(PopulationTable::from_csv("region_key,population\nA,1\nA,2\n".as_bytes()).is_err());
        let t = PopulationTable::from_csv("region_key,population\nA,1.5\n".as_bytes()).unwrap();
        let mut buf = Vec::new();
        t.to_csv(&mut buf).unwrap();
        assert_eq!(PopulationTable::from_csv(buf.as_slice()).unwrap(), t);
    }

    proptest! {
        #[test]
        fn weight_monotone_and_bounded(a in 0.0..1e6f64, b in 0.0..1e6f64) {
            let c = WeightConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (rl, rh) = (representative_weight(lo, &c), representative_weight(hi, &c));
            prop_assert!(rl >= rh);
            prop_assert!((100.0 * (1.0 - 1e-12)..=1e6 * (1.0 + 1e-12)).contains(&rh));
        }

        #[test]
        fn probability_strictly_increasing(a in 100.0..1e6f64, delta in 1e-6..1e5f64) {
            let c = WeightConfig::default();
            prop_assert!(sampling_probability(a + delta, &c).unwrap() > sampling_probability(a, &c).unwrap());
        }

        #[test]
        fn lambda_zero_is_identity(p in 1e-6..10.0f64, age in 1..200i64) {
            let t0: YearMonth = "2024-01".parse().unwrap();
            prop_assert_eq!(temporal_adjust(p, t0.add_months(-age), t0, 0.0).unwrap(), p);
        }
    }
}
