//! Render-free scene observations: world snapshots and pinhole projections
//! from the four fixed camera viewpoints.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::scene::SceneState;

/// Horizontal and vertical field of view of every viewpoint camera.
pub const FIELD_OF_VIEW_DEG: f64 = 90.0;

pub const WORLD_VIEW: &str = "world";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewpointName {
    Left,
    Right,
    Center,
    Top,
}

impl ViewpointName {
    pub const ALL: [ViewpointName; 4] = [
        ViewpointName::Left,
        ViewpointName::Right,
        ViewpointName::Center,
        ViewpointName::Top,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewpointName::Left => "left",
            ViewpointName::Right => "right",
            ViewpointName::Center => "center",
            ViewpointName::Top => "top",
        }
    }
}

impl fmt::Display for ViewpointName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewpointName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ViewpointName::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown viewpoint `{s}` (expected left, right, center or top)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub name: ViewpointName,
    pub camera_position: Vec3,
    pub look_at: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub id: String,
    pub name: String,
    pub category: String,
    pub position: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projected: Option<[f64; 2]>,
    pub held: bool,
    pub is_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub snapshot_id: String,
    /// A viewpoint name, or `"world"` for an unprojected snapshot.
    pub viewpoint: String,
    pub entries: Vec<SnapshotEntry>,
    pub tick: u64,
}

impl SceneSnapshot {
    pub fn entry(&self, id: &str) -> Option<&SnapshotEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

struct Camera {
    origin: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    focal: f64,
}

impl Camera {
    fn new(vp: &Viewpoint) -> Option<Camera> {
        let forward = (vp.look_at - vp.camera_position).normalized()?;
        // looking straight down or up: screen-up points along +z
        let reference = if forward.dot(Vec3::UP).abs() > 0.999 {
            Vec3::new(0.0, 0.0, 1.0)
        } else {
            Vec3::UP
        };
        let right = forward.cross(reference).normalized()?;
        let up = right.cross(forward);
        let half = (FIELD_OF_VIEW_DEG.to_radians() / 2.0).tan();
        Some(Camera {
            origin: vp.camera_position,
            forward,
            right,
            up,
            focal: 1.0 / half,
        })
    }

    fn project(&self, p: Vec3) -> Option<[f64; 2]> {
        let d = p - self.origin;
        let depth = d.dot(self.forward);
        if depth <= 0.0 {
            return None;
        }
        let x = self.focal * d.dot(self.right) / depth;
        let y = self.focal * d.dot(self.up) / depth;
        Some([
            (0.5 + x / 2.0).clamp(0.0, 1.0),
            (0.5 - y / 2.0).clamp(0.0, 1.0),
        ])
    }
}

fn entries(scene: &SceneState, camera: Option<&Camera>) -> Vec<SnapshotEntry> {
    scene
        .objects
        .iter()
        .map(|o| SnapshotEntry {
            id: o.id.clone(),
            name: o.name.clone(),
            category: o.category.clone(),
            position: o.position,
            projected: camera.and_then(|c| c.project(o.position)),
            held: scene.avatar.held.as_deref() == Some(o.id.as_str()),
            is_target: o.is_target,
        })
        .collect()
}

/// Unprojected snapshot in world coordinates.
pub fn world_snapshot(scene: &SceneState) -> SceneSnapshot {
    SceneSnapshot {
        snapshot_id: format!("{}@{}:{}", scene.name, scene.tick, WORLD_VIEW),
        viewpoint: WORLD_VIEW.to_string(),
        entries: entries(scene, None),
        tick: scene.tick,
    }
}

/// Pinhole projection of every object center into normalized image
/// coordinates, (0, 0) top-left. Objects behind the camera carry no 2D entry;
/// objects outside the field of view are clamped to the image border.
pub fn project_to_viewpoint(scene: &SceneState, vp: &Viewpoint) -> SceneSnapshot {
    let camera = Camera::new(vp);
    SceneSnapshot {
        snapshot_id: format!("{}@{}:{}", scene.name, scene.tick, vp.name),
        viewpoint: vp.name.to_string(),
        entries: entries(scene, camera.as_ref()),
        tick: scene.tick,
    }
}
