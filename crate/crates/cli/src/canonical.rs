//! Canonical JSON: sorted keys, shortest round-trip floats, and non-finite
//! floats as the strings `"NaN"`, `"inf"`, `"-inf"`.
//!
//! `serde_json::to_value` maps non-finite floats to `null`, which would make
//! an infinite characteristic indistinguishable from a missing one, so values
//! go through this serializer instead.

use std::fmt::Display;

use serde::ser::{self, Serialize};
use serde_json::{Map, Number, Value};

#[derive(Debug)]
pub struct Error(String);

impl Display for Error {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Error {}

impl ser::Error for Error {
    fn custom<T: Display>(msg: T) -> Self {
        Error(msg.to_string())
    }
}

type R = std::result::Result<Value, Error>;

pub fn float_value(v: f64) -> Value {
    match Number::from_f64(v) {
        Some(n) => Value::Number(n),
        None if v.is_nan() => Value::String("NaN".into()),
        None if v > 0.0 => Value::String("inf".into()),
        None => Value::String("-inf".into()),
    }
}

/// Text form of a float for CSV cells, matching the JSON number text.
pub fn float_text(v: f64) -> String {
    if v.is_finite() {
        ryu::Buffer::new().format_finite(v).to_string()
    } else {
        match float_value(v) {
            Value::String(s) => s,
            _ => unreachable!(),
        }
    }
}

pub fn to_value<T: Serialize + ?Sized>(v: &T) -> R {
    v.serialize(ValueSerializer)
}

/// Pretty-printed canonical text with a trailing newline.
pub fn to_string<T: Serialize + ?Sized>(v: &T) -> std::result::Result<String, Error> {
    let value = to_value(v)?;
    let mut s = serde_json::to_string_pretty(&value).map_err(|e| Error(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

struct ValueSerializer;

fn key_string(v: Value) -> std::result::Result<String, Error> {
    match v {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        other => Err(Error(format!("unsupported map key {other}"))),
    }
}

pub struct SeqBuilder(Vec<Value>);
pub struct VariantSeqBuilder(&'static str, Vec<Value>);
pub struct MapBuilder {
    map: Map<String, Value>,
    key: Option<String>,
}
pub struct VariantMapBuilder(&'static str, Map<String, Value>);

fn tagged(variant: &'static str, v: Value) -> Value {
    let mut m = Map::new();
    m.insert(variant.to_string(), v);
    Value::Object(m)
}

impl ser::Serializer for ValueSerializer {
    type Ok = Value;
    type Error = Error;
    type SerializeSeq = SeqBuilder;
    type SerializeTuple = SeqBuilder;
    type SerializeTupleStruct = SeqBuilder;
    type SerializeTupleVariant = VariantSeqBuilder;
    type SerializeMap = MapBuilder;
    type SerializeStruct = MapBuilder;
    type SerializeStructVariant = VariantMapBuilder;

    fn serialize_bool(self, v: bool) -> R {
        Ok(Value::Bool(v))
    }
    fn serialize_i8(self, v: i8) -> R {
        Ok(Value::from(v))
    }
    fn serialize_i16(self, v: i16) -> R {
        Ok(Value::from(v))
    }
    fn serialize_i32(self, v: i32) -> R {
        Ok(Value::from(v))
    }
    fn serialize_i64(self, v: i64) -> R {
        Ok(Value::from(v))
    }
    fn serialize_i128(self, v: i128) -> R {
        i64::try_from(v).map(Value::from).or_else(|_| Ok(Value::String(v.to_string())))
    }
    fn serialize_u8(self, v: u8) -> R {
        Ok(Value::from(v))
    }
    fn serialize_u16(self, v: u16) -> R {
        Ok(Value::from(v))
    }
    fn serialize_u32(self, v: u32) -> R {
        Ok(Value::from(v))
    }
    fn serialize_u64(self, v: u64) -> R {
        Ok(Value::from(v))
    }
    fn serialize_u128(self, v: u128) -> R {
        u64::try_from(v).map(Value::from).or_else(|_| Ok(Value::String(v.to_string())))
    }
    fn serialize_f32(self, v: f32) -> R {
        Ok(float_value(f64::from(v)))
    }
    fn serialize_f64(self, v: f64) -> R {
        Ok(float_value(v))
    }
    fn serialize_char(self, v: char) -> R {
        Ok(Value::String(v.to_string()))
    }
    fn serialize_str(self, v: &str) -> R {
        Ok(Value::String(v.to_string()))
    }
    fn serialize_bytes(self, v: &[u8]) -> R {
        Ok(Value::Array(v.iter().map(|b| Value::from(*b)).collect()))
    }
    fn serialize_none(self) -> R {
        Ok(Value::Null)
    }
    fn serialize_some<T: Serialize + ?Sized>(self, v: &T) -> R {
        v.serialize(self)
    }
    fn serialize_unit(self) -> R {
        Ok(Value::Null)
    }
    fn serialize_unit_struct(self, _: &'static str) -> R {
        Ok(Value::Null)
    }
    fn serialize_unit_variant(self, _: &'static str, _: u32, variant: &'static str) -> R {
        Ok(Value::String(variant.to_string()))
    }
    fn serialize_newtype_struct<T: Serialize + ?Sized>(self, _: &'static str, v: &T) -> R {
        v.serialize(self)
    }
    fn serialize_newtype_variant<T: Serialize + ?Sized>(self, _: &'static str, _: u32, variant: &'static str, v: &T) -> R {
        Ok(tagged(variant, v.serialize(self)?))
    }
    fn serialize_seq(self, len: Option<usize>) -> std::result::Result<SeqBuilder, Error> {
        Ok(SeqBuilder(Vec::with_capacity(len.unwrap_or(0))))
    }
    fn serialize_tuple(self, len: usize) -> std::result::Result<SeqBuilder, Error> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_struct(self, _: &'static str, len: usize) -> std::result::Result<SeqBuilder, Error> {
        self.serialize_seq(Some(len))
    }
    fn serialize_tuple_variant(self, _: &'static str, _: u32, variant: &'static str, len: usize) -> std::result::Result<VariantSeqBuilder, Error> {
        Ok(VariantSeqBuilder(variant, Vec::with_capacity(len)))
    }
    fn serialize_map(self, _: Option<usize>) -> std::result::Result<MapBuilder, Error> {
        Ok(MapBuilder { map: Map::new(), key: None })
    }
    fn serialize_struct(self, _: &'static str, _: usize) -> std::result::Result<MapBuilder, Error> {
        self.serialize_map(None)
    }
    fn serialize_struct_variant(self, _: &'static str, _: u32, variant: &'static str, _: usize) -> std::result::Result<VariantMapBuilder, Error> {
        Ok(VariantMapBuilder(variant, Map::new()))
    }
}

impl ser::SerializeSeq for SeqBuilder {
    type Ok = Value;
    type Error = Error;
    fn serialize_element<T: Serialize + ?Sized>(&mut self, v: &T) -> std::result::Result<(), Error> {
        self.0.push(to_value(v)?);
        Ok(())
    }
    fn end(self) -> R {
        Ok(Value::Array(self.0))
    }
}

impl ser::SerializeTuple for SeqBuilder {
    type Ok = Value;
    type Error = Error;
    fn serialize_element<T: Serialize + ?Sized>(&mut self, v: &T) -> std::result::Result<(), Error> {
        ser::SerializeSeq::serialize_element(self, v)
    }
    fn end(self) -> R {
        ser::SerializeSeq::end(self)
    }
}

impl ser::SerializeTupleStruct for SeqBuilder {
    type Ok = Value;
    type Error = Error;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, v: &T) -> std::result::Result<(), Error> {
        ser::SerializeSeq::serialize_element(self, v)
    }
    fn end(self) -> R {
        ser::SerializeSeq::end(self)
    }
}

impl ser::SerializeTupleVariant for VariantSeqBuilder {
    type Ok = Value;
    type Error = Error;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, v: &T) -> std::result::Result<(), Error> {
        self.1.push(to_value(v)?);
        Ok(())
    }
    fn end(self) -> R {
        Ok(tagged(self.0, Value::Array(self.1)))
    }
}

impl ser::SerializeMap for MapBuilder {
    type Ok = Value;
    type Error = Error;
    fn serialize_key<T: Serialize + ?Sized>(&mut self, k: &T) -> std::result::Result<(), Error> {
        self.key = Some(key_string(to_value(k)?)?);
        Ok(())
    }
    fn serialize_value<T: Serialize + ?Sized>(&mut self, v: &T) -> std::result::Result<(), Error> {
        let key = self.key.take().ok_or_else(|| Error("map value without key".into()))?;
        self.map.insert(key, to_value(v)?);
        Ok(())
    }
    fn end(self) -> R {
        Ok(Value::Object(self.map))
    }
}

impl ser::SerializeStruct for MapBuilder {
    type Ok = Value;
    type Error = Error;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, key: &'static str, v: &T) -> std::result::Result<(), Error> {
        self.map.insert(key.to_string(), to_value(v)?);
        Ok(())
    }
    fn end(self) -> R {
        Ok(Value::Object(self.map))
    }
}

impl ser::SerializeStructVariant for VariantMapBuilder {
    type Ok = Value;
    type Error = Error;
    fn serialize_field<T: Serialize + ?Sized>(&mut self, key: &'static str, v: &T) -> std::result::Result<(), Error> {
        self.1.insert(key.to_string(), to_value(v)?);
        Ok(())
    }
    fn end(self) -> R {
        Ok(tagged(self.0, Value::Object(self.1)))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use serde::Serialize;

    use super::*;

    #[derive(Serialize)]
    struct Sample {
        zeta: f64,
        alpha: Vec<f64>,
        map: BTreeMap<i32, f64>,
        tagged: Tag,
    }

    #[derive(Serialize)]
    #[serde(tag = "kind", rename_all = "snake_case")]
    enum Tag {
        Point { x: f64 },
    }

    #[test]
    fn sorted_keys_and_non_finite_strings() {
        let s = Sample {
            zeta: 0.1,
            alpha: vec![f64::INFINITY, f64::NEG_INFINITY, f64::NAN, 1e-300],
            map: [(-2, 1.0), (10, 2.5)].into_iter().collect(),
            tagged: Tag::Point { x: 3.0 },
        };
        let text = serde_json::to_string(&to_value(&s).unwrap()).unwrap();
        assert_eq!(
            text,
            r#"{"alpha":["inf","-inf","NaN",1e-300],"map":{"-2":1.0,"10":2.5},"tagged":{"kind":"point","x":3.0},"zeta":0.1}"#
        );
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 7f64.powf(0.25), f64::MIN_POSITIVE, 1e308] {
            let back: f64 = float_text(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
        assert_eq!(float_text(f64::INFINITY), "inf");
    }
}
