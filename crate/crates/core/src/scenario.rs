//! Scenario documents: the TOML description of a scene, its avatar and its
//! four camera viewpoints.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scene::{Avatar, SceneObject, SceneState, DEFAULT_REACH, DEFAULT_SPEED, DEFAULT_TICK_DT};
use crate::snapshot::{Viewpoint, ViewpointName};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DocumentError {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
}

impl DocumentError {
    pub fn code(&self) -> &'static str {
        match self {
            DocumentError::Parse { .. } => "PARSE_ERROR",
            DocumentError::Validation(_) => "VALIDATION_ERROR",
        }
    }
}

pub(crate) fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, DocumentError> {
    toml::from_str(text).map_err(|e| {
        let location = match e.span() {
            Some(span) => {
                let upto = &text[..span.start.min(text.len())];
                let line = upto.matches('\n').count() + 1;
                let column = upto.len() - upto.rfind('\n').map_or(0, |i| i + 1) + 1;
                format!("line {line}, column {column}")
            }
            None => "document".to_string(),
        };
        DocumentError::Parse {
            location,
            message: e.message().to_string(),
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AvatarDoc {
    position: Vec3,
    #[serde(default)]
    heading: f64,
    #[serde(default = "default_speed")]
    speed: f64,
    #[serde(default = "default_reach")]
    reach_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDoc {
    id: String,
    name: String,
    category: String,
    position: Vec3,
    half_extents: Vec3,
    #[serde(default)]
    grabbable: Option<bool>,
    #[serde(default)]
    is_target: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    version: u32,
    name: String,
    #[serde(default = "default_tick_dt")]
    tick_dt: f64,
    avatar: AvatarDoc,
    objects: Vec<ObjectDoc>,
    viewpoints: Vec<Viewpoint>,
}

fn default_speed() -> f64 {
    DEFAULT_SPEED
}
fn default_reach() -> f64 {
    DEFAULT_REACH
}
fn default_tick_dt() -> f64 {
    DEFAULT_TICK_DT
}

/// A validated scene together with its camera viewpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scene: SceneState,
    pub viewpoints: Vec<Viewpoint>,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.scene.name
    }

    pub fn viewpoint(&self, name: ViewpointName) -> Option<&Viewpoint> {
        self.viewpoints.iter().find(|v| v.name == name)
    }
}

fn invalid(msg: impl Into<String>) -> DocumentError {
    DocumentError::Validation(msg.into())
}

fn check_finite(what: &str, v: Vec3) -> Result<(), DocumentError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{what}: all components must be finite")))
    }
}

/// Parses and validates a scenario document. Viewpoints are returned in the
/// canonical left, right, center, top order.
pub fn load_scenario(text: &str) -> Result<Scenario, DocumentError> {
    let doc: ScenarioDoc = parse_toml(text)?;
    if doc.version != SCENARIO_VERSION {
        return Err(invalid(format!(
            "unsupported version {} (expected {SCENARIO_VERSION})",
            doc.version
        )));
    }
    if doc.name.trim().is_empty() {
        return Err(invalid("name must be nonempty"));
    }
    if !(doc.tick_dt.is_finite() && doc.tick_dt > 0.0) {
        return Err(invalid("tick_dt must be > 0"));
    }
    check_finite("avatar.position", doc.avatar.position)?;
    if !doc.avatar.heading.is_finite() {
        return Err(invalid("avatar.heading must be finite"));
    }
    if !(doc.avatar.speed.is_finite() && doc.avatar.speed > 0.0) {
        return Err(invalid("avatar.speed must be > 0"));
    }
    if !(doc.avatar.reach_radius.is_finite() && doc.avatar.reach_radius > 0.0) {
        return Err(invalid("avatar.reach_radius must be > 0"));
    }

    let mut ids = HashSet::new();
    let mut objects = Vec::with_capacity(doc.objects.len());
    for o in doc.objects {
        if o.id.trim().is_empty() {
            return Err(invalid("object id must be nonempty"));
        }
        if !ids.insert(o.id.clone()) {
            return Err(invalid(format!("duplicate object id `{}`", o.id)));
        }
        if o.name.trim().is_empty() {
            return Err(invalid(format!("object `{}`: name must be nonempty", o.id)));
        }
        check_finite(&format!("object `{}` position", o.id), o.position)?;
        check_finite(&format!("object `{}` half_extents", o.id), o.half_extents)?;
        if !o.half_extents.gt_zero_all() {
            return Err(invalid(format!(
                "object `{}`: half_extents must be > 0 on every axis",
                o.id
            )));
        }
        let grabbable = o.grabbable.unwrap_or(!o.is_target);
        if grabbable && o.is_target {
            return Err(invalid(format!(
                "object `{}`: a target object cannot be grabbable",
                o.id
            )));
        }
        objects.push(SceneObject {
            id: o.id,
            name: o.name,
            category: o.category,
            position: o.position,
            half_extents: o.half_extents,
            grabbable,
            is_target: o.is_target,
        });
    }

    let mut viewpoints = Vec::with_capacity(4);
    for name in ViewpointName::ALL {
        let mut matching = doc.viewpoints.iter().filter(|v| v.name == name);
        let vp = matching
            .next()
            .ok_or_else(|| invalid(format!("missing viewpoint `{name}`")))?;
        if matching.next().is_some() {
            return Err(invalid(format!("duplicate viewpoint `{name}`")));
        }
        check_finite(&format!("viewpoint `{name}` camera_position"), vp.camera_position)?;
        check_finite(&format!("viewpoint `{name}` look_at"), vp.look_at)?;
        if vp.camera_position == vp.look_at {
            return Err(invalid(format!(
                "viewpoint `{name}`: camera_position must differ from look_at"
            )));
        }
        viewpoints.push(vp.clone());
    }

    Ok(Scenario {
        scene: SceneState {
            name: doc.name,
            objects,
            avatar: Avatar {
                position: doc.avatar.position,
                heading: doc.avatar.heading,
                held: None,
                reach_radius: doc.avatar.reach_radius,
                speed: doc.avatar.speed,
            },
            tick: 0,
            tick_dt: doc.tick_dt,
        },
        viewpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1
name = "mini"

[avatar]
position = [0.0, 0.8, 0.0]

[[objects]]
id = "apple"
name = "apple"
category = "fruit"
position = [0.0, 0.9, 0.5]
half_extents = [0.04, 0.04, 0.04]

[[objects]]
id = "bowl"
name = "bowl"
category = "container"
position = [0.0, 0.9, 2.0]
half_extents = [0.2, 0.08, 0.2]
is_target = true

[[viewpoints]]
name = "left"
camera_position = [-2.0, 1.6, 1.0]
look_at = [0.0, 0.9, 1.0]
[[viewpoints]]
name = "top"
camera_position = [0.0, 3.0, 1.0]
look_at = [0.0, 0.9, 1.0]
[[viewpoints]]
name = "right"
camera_position = [2.0, 1.6, 1.0]
look_at = [0.0, 0.9, 1.0]
[[viewpoints]]
name = "center"
camera_position = [0.0, 1.6, -1.0]
look_at = [0.0, 0.9, 1.0]
"#;

    #[test]
    fn minimal_loads_with_defaults() {
        let s = load_scenario(MINIMAL).unwrap();
        assert_eq!(s.scene.tick_dt, DEFAULT_TICK_DT);
        assert_eq!(s.scene.avatar.speed, DEFAULT_SPEED);
        assert_eq!(s.scene.avatar.reach_radius, DEFAULT_REACH);
        assert!(s.scene.object("apple").unwrap().grabbable);
        assert!(!s.scene.object("bowl").unwrap().grabbable);
        let order: Vec<_> = s.viewpoints.iter().map(|v| v.name).collect();
        assert_eq!(order, ViewpointName::ALL.to_vec());
    }

    #[test]
    fn deterministic() {
        assert_eq!(load_scenario(MINIMAL).unwrap(), load_scenario(MINIMAL).unwrap());
    }

    #[test]
    fn duplicate_id_is_validation_error() {
        let doc = MINIMAL.replacen("id = \"bowl\"", "id = \"apple\"", 1);
        let err = load_scenario(&doc).unwrap_err();
        assert_eq!(err.code(), "VALIDATION_ERROR");
        assert!(err.to_string().contains("duplicate object id"));
    }

    #[test]
    fn grabbable_target_rejected() {
        let doc = MINIMAL.replace("is_target = true", "is_target = true\ngrabbable = true");
        assert!(load_scenario(&doc).unwrap_err().to_string().contains("target"));
    }

    #[test]
    fn missing_viewpoint_rejected() {
        let doc = MINIMAL.replace("name = \"top\"", "name = \"left\"");
        let err = load_scenario(&doc).unwrap_err().to_string();
        assert!(err.contains("viewpoint"), "{err}");
    }

    #[test]
    fn parse_error_carries_location() {
        let doc = MINIMAL.replace("position = [0.0, 0.9, 0.5]", "position = [0.0, 0.9");
        match load_scenario(&doc).unwrap_err() {
            DocumentError::Parse { location, .. } => assert!(location.starts_with("line "), "{location}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn nonpositive_extents_rejected() {
        let doc = MINIMAL.replace("half_extents = [0.04, 0.04, 0.04]", "half_extents = [0.04, 0.0, 0.04]");
        assert_eq!(load_scenario(&doc).unwrap_err().code(), "VALIDATION_ERROR");
    }
}
