//! External sources: dictionaries, ingestion into proposals, and the
//! agreement ranking of channels and sources.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channels::{Decision, ProposalStatus};
use crate::datum::{DatumPattern, DatumRef};
use crate::error::{Error, Result};
use crate::event::Event;
use crate::expr::Expression;
use crate::graph::{EntityKind, Graph};
use crate::hub::Hub;
use crate::ids::{Author, EntityId, Seq};
use crate::rights::Right;
use crate::state::State;
use crate::value::{Value, ValueType};

/// Arbitrated proposals a subject needs before it gets a score.
pub const MIN_SAMPLE: u64 = 3;

fn identity() -> Expression {
    Expression::parse("value").expect("identity parses")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mapping {
    /// Dotted path into the external record, e.g. `person.login`.
    pub path: String,
    /// Datum template; `{field}` placeholders are filled from the record,
    /// e.g. `{person.id}->server.login`.
    pub target: String,
    /// Expression over `value` (the field at `path`) and the schema fields
    /// with dots written as underscores.
    #[serde(default = "identity")]
    pub transform: Expression,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dictionary {
    pub source: EntityId,
    #[serde(default)]
    pub version: u32,
    /// Declared type of each external field.
    pub schema: BTreeMap<String, ValueType>,
    #[serde(rename = "mapping")]
    pub mappings: Vec<Mapping>,
}

fn placeholders(template: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        let j = rest[i..]
            .find('}')
            .ok_or_else(|| Error::InvalidDictionary(format!("unclosed placeholder in `{template}`")))?;
        out.push(rest[i + 1..i + j].to_string());
        rest = &rest[i + j + 1..];
    }
    Ok(out)
}

fn fill(template: &str, mut f: impl FnMut(&str) -> String) -> Result<String> {
    let mut s = template.to_string();
    for p in placeholders(template)? {
        s = s.replace(&format!("{{{p}}}"), &f(&p));
    }
    Ok(s)
}

fn var_name(path: &str) -> String {
    path.replace(['.', '-', ':'], "_")
}

fn sample(ty: ValueType) -> Value {
    match ty {
        ValueType::Text => Value::text("x"),
        ValueType::Enum => Value::token("x"),
        ValueType::Integer => Value::Integer(1),
        ValueType::Decimal => Value::Decimal(1.into()),
        ValueType::Date => Value::Date(chrono::NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date")),
    }
}

impl Mapping {
    fn pattern(&self) -> Result<DatumPattern> {
        fill(&self.target, |_| "*".into())?
            .parse()
            .map_err(|e| Error::InvalidDictionary(format!("target `{}`: {e}", self.target)))
    }
}

impl Dictionary {
    pub fn parse_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidDictionary(e.to_string()))
    }

    /// Whether some mapping can land on `d`.
    pub fn covers(&self, d: &DatumRef, _graph: &Graph) -> bool {
        self.mappings.iter().any(|m| m.pattern().is_ok_and(|p| p.matches(d)))
    }

    fn validate(&self, graph: &Graph) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDictionary(m));
        if self.mappings.is_empty() {
            return bad("no mappings".into());
        }
        let vars: BTreeMap<String, ValueType> = self.schema.iter().map(|(k, t)| (var_name(k), *t)).collect();
        for m in &self.mappings {
            let Some(ty) = self.schema.get(&m.path) else {
                return bad(format!("path `{}` is not in the schema", m.path));
            };
            for p in placeholders(&m.target)? {
                if !self.schema.contains_key(&p) {
                    return bad(format!("placeholder `{p}` is not in the schema"));
                }
            }
            let pat = m.pattern()?;
            let (attr, on_edge) = match &pat {
                DatumPattern::Attr { attr, .. } => (attr, false),
                DatumPattern::Conn { attr, .. } => (attr, true),
                DatumPattern::All => return bad(format!("target `{}` is not a datum", m.target)),
            };
            let crate::datum::Seg::Exact(attr) = attr else {
                return bad(format!("target `{}` must name its attribute", m.target));
            };
            if !graph.has_attr_name(attr, on_edge) {
                return bad(format!("target `{}` names unknown attribute `{attr}`", m.target));
            }
            let mut env: BTreeMap<String, Value> = vars.iter().map(|(k, t)| (k.clone(), sample(*t))).collect();
            for v in m.transform.variables() {
                if v != "value" && !env.contains_key(&v) {
                    return bad(format!("transform `{}` uses unknown field `{v}`", m.transform));
                }
            }
            env.insert("value".into(), sample(*ty));
            if let Err(e) = m.transform.eval_value(&env) {
                return bad(format!("transform `{}` is not total over {ty}: {e}", m.transform));
            }
        }
        Ok(())
    }
}

fn lookup<'a>(record: &'a serde_json::Value, path: &str) -> Option<&'a serde_json::Value> {
    let mut cur = record;
    for part in path.split('.') {
        match cur.get(part) {
            Some(v) => cur = v,
            None => return record.get(path),
        }
    }
    Some(cur)
}

fn coerce(raw: &serde_json::Value, ty: ValueType) -> Result<Value, String> {
    use serde_json::Value as J;
    match (raw, ty) {
        (J::String(s), _) => Value::parse_as(ty, s).map_err(|e| e.to_string()),
        (J::Number(n), ValueType::Integer) => n.as_i64().map(Value::Integer).ok_or_else(|| format!("{n} is not an integer")),
        (J::Number(n), ValueType::Decimal) => Value::parse_as(ty, &n.to_string()).map_err(|e| e.to_string()),
        (J::Number(n), ValueType::Text | ValueType::Enum) => Value::parse_as(ty, &n.to_string()).map_err(|e| e.to_string()),
        (J::Bool(b), ValueType::Text | ValueType::Enum) => Value::parse_as(ty, &b.to_string()).map_err(|e| e.to_string()),
        (other, _) => Err(format!("{other} is not a valid {ty}")),
    }
}

/// One record that produced no writes, with the reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    /// Zero-based position in the batch.
    pub record: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Records that mapped cleanly (whether or not they changed anything).
    pub processed: usize,
    pub proposals: Vec<Seq>,
    /// Arbitrations issued by an elevated source on its own proposals.
    pub elevated: Vec<Seq>,
    /// Mapped values equal to the current golden value.
    pub unchanged: Vec<DatumRef>,
    pub errors: Vec<RecordError>,
}

impl Hub {
    pub fn register_source(&mut self, entity: &EntityId, mut dict: Dictionary) -> Result<Seq> {
        let e = self.state.graph.require_entity(entity)?;
        if e.kind != EntityKind::ExternalSource {
            return Err(Error::NotASource(entity.clone()));
        }
        if dict.source != *entity {
            return Err(Error::InvalidDictionary(format!("dictionary is for `{}`", dict.source)));
        }
        dict.validate(&self.state.graph)?;
        if dict.version == 0 {
            dict.version = self.state.sources.get(entity).map_or(1, |d| d.version + 1);
        }
        self.commit(Event::SourceRegistered(dict))
    }

    fn map_record(&self, dict: &Dictionary, record: &serde_json::Value) -> Result<Vec<(DatumRef, Value)>, String> {
        let mut fields: BTreeMap<String, Value> = BTreeMap::new();
        let mut raw_text: BTreeMap<&str, String> = BTreeMap::new();
        for (path, ty) in &dict.schema {
            if let Some(raw) = lookup(record, path) {
                let v = coerce(raw, *ty).map_err(|e| format!("field `{path}`: {e}"))?;
                raw_text.insert(path, v.to_string());
                fields.insert(var_name(path), v);
            }
        }
        let mut out = Vec::new();
        for m in &dict.mappings {
            let Some(value) = fields.get(&var_name(&m.path)).cloned() else {
                return Err(format!("missing field `{}`", m.path));
            };
            let mut missing = None;
            let target = fill(&m.target, |p| match raw_text.get(p) {
                Some(s) => s.clone(),
                None => {
                    missing = Some(p.to_string());
                    String::new()
                }
            })
            .map_err(|e| e.to_string())?;
            if let Some(p) = missing {
                return Err(format!("missing field `{p}`"));
            }
            let d: DatumRef = target.parse().map_err(|_| format!("`{target}` is not a datum"))?;
            let rec = self.state.graph.datum(&d).ok_or_else(|| format!("unknown datum `{d}`"))?;
            let mut env = fields.clone();
            env.insert("value".into(), value);
            let v = m
                .transform
                .eval_value(&env)
                .and_then(|v| v.conform(rec.ty))
                .map_err(|e| format!("`{d}`: {e}"))?;
            out.push((d, v));
        }
        Ok(out)
    }

    /// Maps each record through the source's dictionary. A record either
    /// yields proposals, is skipped as unchanged, or is reported; it never
    /// half-applies.
    pub fn ingest(&mut self, source: &EntityId, records: &[serde_json::Value]) -> Result<IngestReport> {
        let dict = self.state.sources.get(source).cloned().ok_or_else(|| Error::UnknownSource(source.clone()))?;
        let mut report = IngestReport::default();
        for (i, record) in records.iter().enumerate() {
            let mapped = match self.map_record(&dict, record) {
                Ok(m) => m,
                Err(reason) => {
                    report.errors.push(RecordError { record: i, reason });
                    continue;
                }
            };
            let mut todo = Vec::new();
            let mut seen = BTreeSet::new();
            let mut blocked = None;
            for (d, v) in mapped {
                if self.state.graph.value(&d) == Some(&v) {
                    report.unchanged.push(d);
                    continue;
                }
                if !seen.insert(d.clone()) {
                    blocked = Some(format!("record maps two values onto `{d}`"));
                } else if self.state.resolve_rights(source, &d)? < Some(Right::Propose) {
                    blocked = Some(format!("`{source}` cannot propose on `{d}`"));
                } else if let Some(open) = self.state.open_proposals.get(&d) {
                    blocked = Some(format!("proposal {open} is already in flight for `{d}`"));
                }
                todo.push((d, v));
            }
            if let Some(reason) = blocked {
                report.errors.push(RecordError { record: i, reason });
                continue;
            }
            report.processed += 1;
            let note = format!("ingested from {source} (dictionary v{})", dict.version);
            for (d, v) in todo {
                let p = self.propose(source, &d, v, &note)?;
                report.proposals.push(p);
                if self.state.can_arbitrate(source, &d) && self.state.peer_owner(&d).is_none() {
                    let a = self.arbitrate(source, p, Decision::Accept, &format!("elevated {note}"))?;
                    report.elevated.push(a);
                }
            }
        }
        Ok(report)
    }

    /// Line-delimited JSON variant of [`Hub::ingest`]; unparsable lines are
    /// reported like any other malformed record.
    pub fn ingest_lines(&mut self, source: &EntityId, text: &str) -> Result<IngestReport> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let mut records = Vec::new();
        let mut bad = Vec::new();
        for (i, l) in lines.iter().enumerate() {
            match serde_json::from_str::<serde_json::Value>(l) {
                Ok(v) if v.is_object() => records.push((i, v)),
                Ok(_) => bad.push(RecordError { record: i, reason: "record is not an object".into() }),
                Err(e) => bad.push(RecordError { record: i, reason: format!("unparsable record: {e}") }),
            }
        }
        let values: Vec<_> = records.iter().map(|(_, v)| v.clone()).collect();
        let mut report = self.ingest(source, &values)?;
        for e in &mut report.errors {
            e.record = records[e.record].0;
        }
        report.errors.extend(bad);
        report.errors.sort_by_key(|e| e.record);
        Ok(report)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subject {
    Channel(EntityId),
    Source(EntityId),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Channel(c) => write!(f, "channel:{c}"),
            Subject::Source(s) => write!(f, "source:{s}"),
        }
    }
}

impl Serialize for Subject {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Subject {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let (k, id) = s.split_once(':').ok_or_else(|| serde::de::Error::custom("expected kind:id"))?;
        let id = EntityId::new(id).map_err(serde::de::Error::custom)?;
        match k {
            "channel" => Ok(Subject::Channel(id)),
            "source" => Ok(Subject::Source(id)),
            _ => Err(serde::de::Error::custom(format!("unknown subject kind `{k}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementScore {
    pub subject: Subject,
    pub accepted: u64,
    pub arbitrated: u64,
    /// `accepted / arbitrated`, or `None` (unranked) below the minimum sample.
    pub score: Option<f64>,
}

impl State {
    /// Agreement ranking over proposals whose datum is in `scope` (all when
    /// `None`). A pure fold over recorded proposals.
    pub fn rank(&self, scope: Option<&BTreeSet<DatumRef>>, min_sample: u64) -> Vec<AgreementScore> {
        let mut tally: BTreeMap<Subject, (u64, u64)> = BTreeMap::new();
        for p in self.proposals.values() {
            if scope.is_some_and(|s| !s.contains(&p.datum)) {
                continue;
            }
            let subject = match &p.author {
                Author::Local(a) if self.graph.is_kind(a, EntityKind::ExternalSource) => Subject::Source(a.clone()),
                _ => Subject::Channel(p.channel.clone()),
            };
            let t = tally.entry(subject).or_default();
            match p.status {
                ProposalStatus::Accepted => {
                    t.0 += 1;
                    t.1 += 1;
                }
                ProposalStatus::Rejected => t.1 += 1,
                _ => {}
            }
        }
        let mut out: Vec<AgreementScore> = tally
            .into_iter()
            .map(|(subject, (accepted, arbitrated))| AgreementScore {
                subject,
                accepted,
                arbitrated,
                score: (arbitrated >= min_sample.max(1)).then(|| accepted as f64 / arbitrated as f64),
            })
            .collect();
        out.sort_by(|a, b| match (a.score.is_some(), b.score.is_some()) {
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            // exact ratio comparison by cross-multiplication
            (true, true) => (b.accepted * a.arbitrated)
                .cmp(&(a.accepted * b.arbitrated))
                .then(b.arbitrated.cmp(&a.arbitrated))
                .then_with(|| a.subject.cmp(&b.subject)),
            (false, false) => b.arbitrated.cmp(&a.arbitrated).then_with(|| a.subject.cmp(&b.subject)),
        });
        out
    }
}
