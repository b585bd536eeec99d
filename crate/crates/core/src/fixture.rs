//! Versioned JSON fixtures with floats stored as decimal strings.
//!
//! `f64`'s `Display` output is the shortest string that parses back to the
//! same bits, so instances round-trip exactly across machines.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

pub const FIXTURE_VERSION: u32 = 1;

fn parse<E: serde::de::Error>(s: &str) -> Result<f64, E> {
    s.parse::<f64>()
        .map_err(|e| E::custom(format!("invalid float string {s:?}: {e}")))
}

/// `Vec<f64>` as `["0.1", "2", ...]`.
pub mod floats {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| parse(s))
            .collect()
    }
}

/// `Vec<Vec<f64>>` as nested arrays of strings.
pub mod float_rows {
    use super::*;

    #[derive(Serialize)]
    struct Row<'a>(#[serde(with = "floats")] &'a [f64]);

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|r| Row(r)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        Vec::<Vec<String>>::deserialize(d)?
            .iter()
            .map(|row| row.iter().map(|s| parse(s)).collect())
            .collect()
    }
}

pub(crate) fn check_version<E: serde::de::Error>(found: u32) -> Result<(), E> {
    if found != FIXTURE_VERSION {
        return Err(E::custom(format!(
            "unsupported fixture version {found} (expected {FIXTURE_VERSION})"
        )));
    }
    Ok(())
}

pub(crate) fn check_kind(found: &str, expected: &str) -> Result<(), serde_json::Error> {
    if found != expected {
        return Err(serde_json::Error::custom(format!(
            "fixture kind `{found}`, expected `{expected}`"
        )));
    }
    Ok(())
}

/// Hex SHA-256 of a fixture's canonical JSON.
pub fn hash_json(json: &str) -> String {
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Holder {
        #[serde(with = "floats")]
        v: Vec<f64>,
        #[serde(with = "float_rows")]
        rows: Vec<Vec<f64>>,
    }

    proptest! {
        #[test]
        fn float_strings_round_trip_bits(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..16)) {
            let h = Holder { rows: vec![v.clone(), v.clone()], v };
            let json = serde_json::to_string(&h).unwrap();
            let back: Holder = serde_json::from_str(&json).unwrap();
            for (a, b) in h.v.iter().zip(&back.v) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(back, h);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(serde_json::from_str::<Holder>(r#"{"v":["abc"],"rows":[]}"#).is_err());
    }
}
