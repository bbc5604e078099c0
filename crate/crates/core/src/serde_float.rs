//! JSON has no NaN or infinities; these are written as the strings
//! `"NaN"`, `"inf"` and `"-inf"` and read back from either form.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Repr {
    Number(f64),
    Text(String),
}

fn to_repr(v: f64) -> Repr {
    if v.is_finite() {
        Repr::Number(v)
    } else if v.is_nan() {
        Repr::Text("NaN".into())
    } else if v > 0.0 {
        Repr::Text("inf".into())
    } else {
        Repr::Text("-inf".into())
    }
}

fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
    match r {
        Repr::Number(v) => Ok(v),
        Repr::Text(s) => match s.as_str() {
            "NaN" => Ok(f64::NAN),
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(E::custom(format!("invalid float literal {other:?}"))),
        },
    }
}

pub mod scalar {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| to_repr(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?
            .into_iter()
            .map(from_repr)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    #[derive(Debug, serde::Serialize, serde::Deserialize)]
    struct Holder {
        #[serde(with = "super::vec")]
        v: Vec<f64>,
        #[serde(with = "super::scalar")]
        x: f64,
    }

    #[test]
    fn non_finite_round_trip() {
        let h = Holder {
            v: vec![1.5, f64::INFINITY, f64::NEG_INFINITY, f64::NAN],
            x: f64::NAN,
        };
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, r#"{"v":[1.5,"inf","-inf","NaN"],"x":"NaN"}"#);
        let back: Holder = serde_json::from_str(&s).unwrap();
        assert_eq!(back.v[..3], [1.5, f64::INFINITY, f64::NEG_INFINITY]);
        assert!(back.v[3].is_nan() && back.x.is_nan());
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }
}
