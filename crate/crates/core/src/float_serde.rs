//! JSON has no infinities or NaN. Floats that can legitimately be
//! non-finite are written as the strings `"inf"`, `"-inf"` or `"nan"`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Repr {
    Number(f64),
    Tag(String),
}

fn to_repr(v: f64) -> Repr {
    if v.is_finite() {
        Repr::Number(v)
    } else if v.is_nan() {
        Repr::Tag("nan".into())
    } else if v > 0.0 {
        Repr::Tag("inf".into())
    } else {
        Repr::Tag("-inf".into())
    }
}

fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
    match r {
        Repr::Number(v) => Ok(v),
        Repr::Tag(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(E::custom(format!("expected a number, got {other:?}"))),
        },
    }
}

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    to_repr(*v).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    from_repr(Repr::deserialize(d)?)
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| to_repr(x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
    }
}

#[cfg(test)]
mod tests {
    #[derive(serde::Serialize, serde::Deserialize, Debug)]
    struct W {
        #[serde(with = "super")]
        x: f64,
        #[serde(with = "super::vec")]
        v: Vec<f64>,
    }

    #[test]
    fn non_finite_values_round_trip() {
        let w = W {
            x: f64::NEG_INFINITY,
            v: vec![1.5, f64::INFINITY, f64::NAN],
        };
        let s = serde_json::to_string(&w).unwrap();
        assert_eq!(s, r#"{"x":"-inf","v":[1.5,"inf","nan"]}"#);
        let back: W = serde_json::from_str(&s).unwrap();
        assert_eq!(back.x, f64::NEG_INFINITY);
        assert_eq!(back.v[..2], [1.5, f64::INFINITY]);
        assert!(back.v[2].is_nan());
        assert!(serde_json::from_str::<W>(r#"{"x":"big","v":[]}"#).is_err());
    }
}
