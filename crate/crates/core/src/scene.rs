//! Deterministic scene model: objects, the avatar, movement and grab/release.
//!
//! All transitions validate their preconditions before touching state, so a
//! failed operation leaves the scene unchanged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};

/// Where a held object sits relative to the avatar, before rotation by heading.
pub const HELD_OFFSET: Vec3 = Vec3::new(0.0, 0.2, 0.6);

pub const DEFAULT_TICK_DT: f64 = 0.05;
pub const DEFAULT_SPEED: f64 = 1.5;
pub const DEFAULT_REACH: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("avatar is already holding `{0}`")]
    AlreadyHolding(String),
    #[error("object `{0}` cannot be grabbed")]
    NotGrabbable(String),
    #[error("object `{id}` is {distance:.2} m away, beyond reach")]
    OutOfReach { id: String, distance: f64 },
    #[error("no object with id `{0}`")]
    NoSuchObject(String),
    #[error("avatar is not holding anything")]
    NotHolding,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl SceneError {
    pub fn code(&self) -> &'static str {
        match self {
            SceneError::AlreadyHolding(_) => "ALREADY_HOLDING",
            SceneError::NotGrabbable(_) => "NOT_GRABBABLE",
            SceneError::OutOfReach { .. } => "OUT_OF_REACH",
            SceneError::NoSuchObject(_) => "NO_SUCH_OBJECT",
            SceneError::NotHolding => "NOT_HOLDING",
            SceneError::InvalidArgument(_) => "BAD_ARGUMENT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub name: String,
    pub category: String,
    pub position: Vec3,
    pub half_extents: Vec3,
    pub grabbable: bool,
    pub is_target: bool,
}

impl SceneObject {
    pub fn aabb(&self) -> Aabb {
        aabb_of(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Avatar {
    pub position: Vec3,
    /// Radians about +y; 0 faces +z.
    pub heading: f64,
    pub held: Option<String>,
    pub reach_radius: f64,
    pub speed: f64,
}

impl Avatar {
    /// World position of a held object for the current pose.
    pub fn hold_point(&self) -> Vec3 {
        self.position + HELD_OFFSET.rotate_y(self.heading)
    }

    pub fn forward(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, 1.0).rotate_y(self.heading)
    }
}

/// A pair of object ids whose boxes touched when the first was released.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Contact {
    pub object: String,
    pub other: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    /// Name of the scenario this scene was loaded from.
    pub name: String,
    pub objects: Vec<SceneObject>,
    pub avatar: Avatar,
    pub tick: u64,
    pub tick_dt: f64,
}

pub fn aabb_of(obj: &SceneObject) -> Aabb {
    Aabb::from_center(obj.position, obj.half_extents)
}

pub fn aabb_intersects(a: &Aabb, b: &Aabb) -> bool {
    a.intersects(b)
}

impl SceneState {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    fn object_index(&self, id: &str) -> Result<usize, SceneError> {
        self.objects
            .iter()
            .position(|o| o.id == id)
            .ok_or_else(|| SceneError::NoSuchObject(id.to_string()))
    }

    /// Objects with the given display name, nearest to the avatar first.
    pub fn objects_named<'a>(&'a self, name: &str) -> Vec<&'a SceneObject> {
        let mut found: Vec<&SceneObject> = self
            .objects
            .iter()
            .filter(|o| crate::text::same_name(&o.name, name))
            .collect();
        let here = self.avatar.position;
        found.sort_by(|a, b| {
            a.position
                .distance(here)
                .total_cmp(&b.position.distance(here))
        });
        found
    }

    pub fn elapsed_seconds(&self, since_tick: u64) -> f64 {
        self.tick.saturating_sub(since_tick) as f64 * self.tick_dt
    }

    fn track_held(&mut self) {
        if let Some(id) = self.avatar.held.clone() {
            let point = self.avatar.hold_point();
            if let Some(obj) = self.objects.iter_mut().find(|o| o.id == id) {
                obj.position = point;
            }
        }
    }

    /// Moves the avatar at constant speed along a unit ground-plane direction.
    pub fn step_avatar(&mut self, direction: Vec3, ticks: u64) -> Result<(), SceneError> {
        if ticks == 0 {
            return Err(SceneError::InvalidArgument("ticks must be >= 1".into()));
        }
        if !direction.is_finite()
            || direction.y != 0.0
            || (direction.length() - 1.0).abs() > 1e-6
        {
            return Err(SceneError::InvalidArgument(
                "direction must be a unit vector in the xz-plane".into(),
            ));
        }
        let distance = self.avatar.speed * self.tick_dt * ticks as f64;
        self.avatar.position = self.avatar.position + direction * distance;
        self.track_held();
        self.tick += ticks;
        Ok(())
    }

    /// Instantaneous heading change ("rapid turning").
    pub fn turn(&mut self, heading: f64) -> Result<(), SceneError> {
        if !heading.is_finite() {
            return Err(SceneError::InvalidArgument("heading must be finite".into()));
        }
        self.avatar.heading = heading.rem_euclid(std::f64::consts::TAU);
        self.track_held();
        Ok(())
    }

    /// Advances the clock without moving anything. Never moves it backwards.
    pub fn advance_to(&mut self, tick: u64) {
        self.tick = self.tick.max(tick);
    }

    pub fn grab(&mut self, object_id: &str) -> Result<(), SceneError> {
        if let Some(held) = &self.avatar.held {
            return Err(SceneError::AlreadyHolding(held.clone()));
        }
        let idx = self.object_index(object_id)?;
        let obj = &self.objects[idx];
        if !obj.grabbable || obj.is_target {
            return Err(SceneError::NotGrabbable(object_id.to_string()));
        }
        let distance = obj.position.distance(self.avatar.position);
        if distance > self.avatar.reach_radius {
            return Err(SceneError::OutOfReach {
                id: object_id.to_string(),
                distance,
            });
        }
        self.avatar.held = Some(object_id.to_string());
        self.track_held();
        Ok(())
    }

    /// Drops the held object where it is and reports every object its box
    /// touches at that moment.
    pub fn release(&mut self) -> Result<Vec<Contact>, SceneError> {
        let id = self.avatar.held.take().ok_or(SceneError::NotHolding)?;
        let released = match self.object(&id) {
            Some(o) => o.aabb(),
            None => return Ok(Vec::new()),
        };
        Ok(self
            .objects
            .iter()
            .filter(|o| o.id != id && aabb_intersects(&released, &o.aabb()))
            .map(|o| Contact {
                object: id.clone(),
                other: o.id.clone(),
            })
            .collect())
    }

    /// Moves an object directly, bypassing reach and holding rules. Used when
    /// constructing progress states offline.
    pub fn teleport(&mut self, object_id: &str, position: Vec3) -> Result<(), SceneError> {
        let idx = self.object_index(object_id)?;
        if self.avatar.held.as_deref() == Some(object_id) {
            self.avatar.held = None;
        }
        self.objects[idx].position = position;
        Ok(())
    }

    /// Contacts the object would have if released right now at its position.
    pub fn contacts_of(&self, object_id: &str) -> Result<Vec<Contact>, SceneError> {
        let idx = self.object_index(object_id)?;
        let aabb = self.objects[idx].aabb();
        Ok(self
            .objects
            .iter()
            .filter(|o| o.id != object_id && aabb.intersects(&o.aabb()))
            .map(|o| Contact {
                object: object_id.to_string(),
                other: o.id.clone(),
            })
            .collect())
    }
}
