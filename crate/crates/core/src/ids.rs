use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Global append sequence number of the event log. Dense, starts at 1.
pub type Seq = u64;

fn valid_ident(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 128
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == ':')
}

/// Validates an attribute name. Same alphabet as entity ids.
pub fn check_attr_name(name: &str) -> Result<()> {
    if valid_ident(name) {
        Ok(())
    } else {
        Err(Error::InvalidIdentifier(name.to_string()))
    }
}

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Result<Self> {
                let s = s.into();
                if valid_ident(&s) {
                    Ok(Self(s))
                } else {
                    Err(Error::InvalidIdentifier(s))
                }
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                Self::new(s)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::new(s).map_err(serde::de::Error::custom)
            }
        }
    };
}

string_id!(
    /// Identifier of an entity. Also names the entity's control channel.
    EntityId
);
string_id!(
    /// Identifier of a hub instance taking part in federation.
    InstanceId
);

/// Shorthand used by tests and fixtures. Panics on invalid input.
pub fn eid(s: &str) -> EntityId {
    EntityId::new(s).expect("valid entity id")
}

/// Who authored an intervention: a local principal, or a principal of a
/// peer instance whose proposal was forwarded here.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Author {
    Local(EntityId),
    Remote { instance: InstanceId, principal: EntityId },
}

impl Author {
    pub fn principal(&self) -> &EntityId {
        match self {
            Author::Local(p) => p,
            Author::Remote { principal, .. } => principal,
        }
    }

    pub fn local(&self) -> Option<&EntityId> {
        match self {
            Author::Local(p) => Some(p),
            Author::Remote { .. } => None,
        }
    }
}

impl fmt::Display for Author {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Author::Local(p) => write!(f, "{p}"),
            Author::Remote { instance, principal } => write!(f, "{principal}@{instance}"),
        }
    }
}

impl FromStr for Author {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('@') {
            None => Ok(Author::Local(EntityId::new(s)?)),
            Some((p, i)) => Ok(Author::Remote {
                instance: InstanceId::new(i)?,
                principal: EntityId::new(p)?,
            }),
        }
    }
}

impl Serialize for Author {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Author {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
