//! Addressing of individual datums.
//!
//! A datum is either a specific attribute of an entity (`lab.budget`) or an
//! attribute of a directed connection (`lab->alice.role`). Both forms are
//! used verbatim as text in the API, the CLI and the event log.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ids::{check_attr_name, EntityId};

/// Directed edge key, `parent->child`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeKey {
    pub parent: EntityId,
    pub child: EntityId,
}

impl EdgeKey {
    pub fn new(parent: EntityId, child: EntityId) -> Self {
        Self { parent, child }
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.parent, self.child)
    }
}

impl FromStr for EdgeKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (p, c) = s
            .split_once("->")
            .ok_or_else(|| Error::Parse(format!("`{s}` is not an edge `parent->child`")))?;
        Ok(Self::new(p.parse()?, c.parse()?))
    }
}

/// Reference to one datum.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DatumRef {
    Attr { entity: EntityId, attr: String },
    Conn { edge: EdgeKey, attr: String },
}

impl DatumRef {
    pub fn attr(entity: &str, attr: &str) -> Self {
        DatumRef::Attr { entity: crate::ids::eid(entity), attr: attr.to_string() }
    }

    pub fn conn(parent: &str, child: &str, attr: &str) -> Self {
        DatumRef::Conn {
            edge: EdgeKey::new(crate::ids::eid(parent), crate::ids::eid(child)),
            attr: attr.to_string(),
        }
    }

    pub fn attr_name(&self) -> &str {
        match self {
            DatumRef::Attr { attr, .. } | DatumRef::Conn { attr, .. } => attr,
        }
    }

    pub fn edge(&self) -> Option<&EdgeKey> {
        match self {
            DatumRef::Conn { edge, .. } => Some(edge),
            DatumRef::Attr { .. } => None,
        }
    }

    /// Entity ids appearing in the locus.
    pub fn entities(&self) -> Vec<&EntityId> {
        match self {
            DatumRef::Attr { entity, .. } => vec![entity],
            DatumRef::Conn { edge, .. } => vec![&edge.parent, &edge.child],
        }
    }
}

impl fmt::Display for DatumRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatumRef::Attr { entity, attr } => write!(f, "{entity}.{attr}"),
            DatumRef::Conn { edge, attr } => write!(f, "{edge}.{attr}"),
        }
    }
}

impl FromStr for DatumRef {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (locus, attr) = s
            .rsplit_once('.')
            .ok_or_else(|| Error::Parse(format!("`{s}` is not a datum reference")))?;
        check_attr_name(attr)?;
        let attr = attr.to_string();
        if locus.contains("->") {
            Ok(DatumRef::Conn { edge: locus.parse()?, attr })
        } else {
            Ok(DatumRef::Attr { entity: locus.parse()?, attr })
        }
    }
}

impl Serialize for DatumRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DatumRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for EdgeKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EdgeKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// One segment of a pattern: a concrete id/name or `*`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Seg {
    Any,
    Exact(String),
}

impl Seg {
    fn parse(s: &str) -> Result<Self> {
        if s == "*" {
            Ok(Seg::Any)
        } else {
            check_attr_name(s)?;
            Ok(Seg::Exact(s.to_string()))
        }
    }

    fn matches(&self, s: &str) -> bool {
        match self {
            Seg::Any => true,
            Seg::Exact(e) => e == s,
        }
    }
}

impl fmt::Display for Seg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Seg::Any => f.write_str("*"),
            Seg::Exact(s) => f.write_str(s),
        }
    }
}

/// Glob over datum references: `lab.*`, `*->server.quota`, `lab->*.*`, or
/// `*` for every datum.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DatumPattern {
    All,
    Attr { entity: Seg, attr: Seg },
    Conn { parent: Seg, child: Seg, attr: Seg },
}

impl DatumPattern {
    pub fn matches(&self, d: &DatumRef) -> bool {
        match (self, d) {
            (DatumPattern::All, _) => true,
            (DatumPattern::Attr { entity, attr }, DatumRef::Attr { entity: e, attr: a }) => {
                entity.matches(e.as_str()) && attr.matches(a)
            }
            (DatumPattern::Conn { parent, child, attr }, DatumRef::Conn { edge, attr: a }) => {
                parent.matches(edge.parent.as_str())
                    && child.matches(edge.child.as_str())
                    && attr.matches(a)
            }
            _ => false,
        }
    }

    /// The concrete datum this pattern names, if it has no wildcard.
    pub fn exact(&self) -> Option<DatumRef> {
        self.to_string().parse().ok().filter(|_| !self.to_string().contains('*'))
    }
}

impl fmt::Display for DatumPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatumPattern::All => f.write_str("*"),
            DatumPattern::Attr { entity, attr } => write!(f, "{entity}.{attr}"),
            DatumPattern::Conn { parent, child, attr } => write!(f, "{parent}->{child}.{attr}"),
        }
    }
}

impl FromStr for DatumPattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "*" {
            return Ok(DatumPattern::All);
        }
        let (locus, attr) = s
            .rsplit_once('.')
            .ok_or_else(|| Error::Parse(format!("`{s}` is not a datum pattern")))?;
        let attr = Seg::parse(attr)?;
        match locus.split_once("->") {
            Some((p, c)) => Ok(DatumPattern::Conn { parent: Seg::parse(p)?, child: Seg::parse(c)?, attr }),
            None => Ok(DatumPattern::Attr { entity: Seg::parse(locus)?, attr }),
        }
    }
}

impl Serialize for DatumPattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DatumPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
