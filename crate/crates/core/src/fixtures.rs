//! Canonical small graph used by tests, the acceptance suite and `load-fixture`.
//!
//! dean -> lab {mandate}, lab -> alice {role=member}, lab -> bob {role=manager},
//! lab -> server {quota}, alice -> server {login, relevant}; hrdb stands alone.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::EntityKind;
use crate::hub::Hub;
use crate::ids::{eid, InstanceId};
use crate::rights::{ChannelConfig, Right};
use crate::value::Value;

pub const NAMES: &[&str] = &["f1", "f1-governed"];

fn attrs(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Builds the base graph into an existing (empty) hub.
pub fn build_f1(hub: &mut Hub, quota: i64) -> Result<()> {
    use EntityKind::*;
    hub.create_entity(Authority, "dean", BTreeMap::new())?;
    hub.create_entity(Structure, "lab", attrs(&[("budget", Value::Integer(0))]))?;
    hub.create_entity(Individual, "alice", attrs(&[("email", Value::text("alice@lab.example"))]))?;
    hub.create_entity(Individual, "bob", attrs(&[("email", Value::text("bob@lab.example"))]))?;
    hub.create_entity(Resource, "server", attrs(&[("capacity", Value::Integer(200))]))?;
    hub.create_entity(ExternalSource, "hrdb", attrs(&[("feed", Value::text("hr-export"))]))?;
    hub.connect(&eid("dean"), &eid("lab"), attrs(&[("mandate", Value::text("research"))]), false)?;
    hub.connect(&eid("lab"), &eid("alice"), attrs(&[("role", Value::token("member"))]), false)?;
    hub.connect(&eid("lab"), &eid("bob"), attrs(&[("role", Value::token("manager"))]), false)?;
    hub.connect(&eid("lab"), &eid("server"), attrs(&[("quota", Value::Integer(quota))]), false)?;
    hub.connect(&eid("alice"), &eid("server"), attrs(&[("login", Value::text("alice01"))]), true)?;
    Ok(())
}

pub fn f1_hub() -> Hub {
    f1_with_quota(150)
}

pub fn f1_with_quota(quota: i64) -> Hub {
    let mut hub = Hub::in_memory(InstanceId::new("local").expect("valid id"));
    build_f1(&mut hub, quota).expect("fixture builds");
    hub
}

/// Role map for the lab channel. With `arbiter`, adds carol as lab director
/// holding arbitration.
pub fn configure_lab_roles(hub: &mut Hub, arbiter: bool) {
    try_configure_lab_roles(hub, arbiter).expect("fixture roles apply")
}

pub fn try_configure_lab_roles(hub: &mut Hub, arbiter: bool) -> Result<()> {
    let mut role_map: BTreeMap<String, Right> =
        [("member".to_string(), Right::Propose), ("manager".to_string(), Right::Evaluate)].into();
    if arbiter {
        hub.create_entity(EntityKind::Individual, "carol", attrs(&[("email", Value::text("carol@lab.example"))]))?;
        hub.connect(&eid("lab"), &eid("carol"), attrs(&[("role", Value::token("director"))]), false)?;
        role_map.insert("director".into(), Right::Arbitrate);
    }
    hub.configure_channel(&eid("lab"), ChannelConfig { role_map, ..Default::default() })?;
    Ok(())
}

/// Loads a named fixture into an empty hub.
pub fn load_into(hub: &mut Hub, name: &str) -> Result<()> {
    match name {
        "f1" => build_f1(hub, 150),
        "f1-governed" => {
            build_f1(hub, 150)?;
            try_configure_lab_roles(hub, true)
        }
        other => Err(Error::Parse(format!("unknown fixture `{other}`"))),
    }
}

pub fn load(name: &str) -> Result<Hub> {
    load_as(name, InstanceId::new("local")?)
}

pub fn load_as(name: &str, instance: InstanceId) -> Result<Hub> {
    let mut hub = Hub::in_memory(instance);
    load_into(&mut hub, name)?;
    Ok(hub)
}
