//! Core data pipeline for modelling mutation trajectories extracted from
//! mutation-annotated phylogenetic trees.

pub mod artifact;
pub mod baseline;
pub mod date;
pub mod eval;
pub mod genome;
pub mod sampler;
pub mod synth;
pub mod tokenizer;
pub mod tree;
pub mod variants;
pub mod weighting;

/// Serde through `Display`/`FromStr`, for types with a canonical text form.
macro_rules! serde_via_str {
    ($($t:ty),*) => {$(
        impl serde::Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> serde::Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = <std::borrow::Cow<'de, str>>::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    )*};
}

serde_via_str!(genome::NtMutation, genome::AaMutation, date::PartialDate, date::YearMonth);
