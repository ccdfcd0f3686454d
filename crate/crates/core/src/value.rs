use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five scalar types a datum may hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Text,
    Integer,
    Decimal,
    Date,
    Enum,
}

impl fmt::Display for ValueType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueType::Text => "text",
            ValueType::Integer => "integer",
            ValueType::Decimal => "decimal",
            ValueType::Date => "date",
            ValueType::Enum => "enum",
        })
    }
}

impl FromStr for ValueType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "text" => ValueType::Text,
            "integer" | "int" => ValueType::Integer,
            "decimal" => ValueType::Decimal,
            "date" => ValueType::Date,
            "enum" | "enum-token" => ValueType::Enum,
            other => return Err(Error::Parse(format!("unknown value type `{other}`"))),
        })
    }
}

/// A typed scalar. Serialized externally tagged, e.g. `{"integer":100}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    Text(String),
    Integer(i64),
    Decimal(Decimal),
    Date(NaiveDate),
    Enum(String),
}

impl Value {
    pub fn ty(&self) -> ValueType {
        match self {
            Value::Text(_) => ValueType::Text,
            Value::Integer(_) => ValueType::Integer,
            Value::Decimal(_) => ValueType::Decimal,
            Value::Date(_) => ValueType::Date,
            Value::Enum(_) => ValueType::Enum,
        }
    }

    pub fn text(s: &str) -> Self {
        Value::Text(s.to_string())
    }

    pub fn token(s: &str) -> Self {
        Value::Enum(s.to_string())
    }

    /// Converts to `ty` where the conversion is lossless (integer widens to
    /// decimal, text and enum tokens are interchangeable).
    pub fn conform(self, ty: ValueType) -> Result<Value> {
        if self.ty() == ty {
            return Ok(self);
        }
        match (self, ty) {
            (Value::Integer(i), ValueType::Decimal) => Ok(Value::Decimal(Decimal::from(i))),
            (Value::Decimal(d), ValueType::Integer) if d.fract().is_zero() => i64::try_from(d)
                .map(Value::Integer)
                .map_err(|_| Error::TypeMismatch { expected: ty, found: ValueType::Decimal }),
            (Value::Text(s), ValueType::Enum) => Ok(Value::Enum(s)),
            (Value::Enum(s), ValueType::Text) => Ok(Value::Text(s)),
            (v, ty) => Err(Error::TypeMismatch { expected: ty, found: v.ty() }),
        }
    }

    /// Parses raw text as a value of the given type.
    pub fn parse_as(ty: ValueType, raw: &str) -> Result<Value> {
        let bad = || Error::Parse(format!("`{raw}` is not a valid {ty}"));
        Ok(match ty {
            ValueType::Text => Value::Text(raw.to_string()),
            ValueType::Enum => Value::Enum(raw.to_string()),
            ValueType::Integer => Value::Integer(raw.trim().parse().map_err(|_| bad())?),
            ValueType::Decimal => Value::Decimal(raw.trim().parse().map_err(|_| bad())?),
            ValueType::Date => Value::Date(
                NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|_| bad())?,
            ),
        })
    }

    /// Best-effort literal parsing for untyped input: integer, then decimal,
    /// then ISO date, else text.
    pub fn parse_literal(raw: &str) -> Value {
        let t = raw.trim();
        if let Ok(i) = t.parse::<i64>() {
            return Value::Integer(i);
        }
        if let Ok(d) = t.parse::<Decimal>() {
            return Value::Decimal(d);
        }
        if let Ok(d) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
            return Value::Date(d);
        }
        Value::Text(raw.to_string())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Text(s) | Value::Enum(s) => f.write_str(s),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Decimal(d) => write!(f, "{d}"),
            Value::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}
