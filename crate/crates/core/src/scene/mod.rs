//! Scene representation, loading and ray queries.
//!
//! Scenes are immutable after loading. All geometry is triangles; a
//! [`Bvh`] built over them answers nearest-hit queries and shades the hit
//! with a fixed local rule (Lambertian direct lighting plus emission, no
//! shadows).

mod bvh;
mod load;
mod obj;
pub mod shapes;

pub use bvh::{Bvh, PrimHit};
pub use load::{load_scene, SceneFile};

use glam::{DVec3, Vec3};
use thiserror::Error;

use crate::image::Rgb;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("scene has no triangles")]
    EmptyGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub position: DVec3,
    /// Unit length.
    pub normal: DVec3,
}

/// World-space checkerboard modulation of a material's albedo.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checker {
    /// Square edge length in meters.
    pub size: f64,
    /// Albedo of the odd squares.
    pub albedo: Rgb,
    /// World axes spanning the pattern plane.
    pub axes: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub albedo: Rgb,
    /// Emission added on top of lighting. Values above the diffuse range
    /// mark bokeh-producing highlights.
    pub emissive: f32,
    /// Stored for completeness; the fixed shading rule is purely diffuse.
    pub specular: f32,
    pub checker: Option<Checker>,
}

impl Material {
    pub fn diffuse(albedo: Rgb) -> Self {
        Self {
            albedo,
            emissive: 0.0,
            specular: 0.0,
            checker: None,
        }
    }

    pub fn albedo_at(&self, p: DVec3) -> Rgb {
        match &self.checker {
            Some(ch) => {
                let a = (p[ch.axes[0]] / ch.size).floor() as i64;
                let b = (p[ch.axes[1]] / ch.size).floor() as i64;
                if (a + b).rem_euclid(2) == 1 {
                    ch.albedo
                } else {
                    self.albedo
                }
            }
            None => self.albedo,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub name: String,
    pub vertices: Vec<Vertex>,
    pub triangles: Vec<[u32; 3]>,
    pub material: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Light {
    Point { position: DVec3, intensity: Rgb },
    /// `direction` points from the light toward the scene.
    Directional { direction: DVec3, intensity: Rgb },
}

/// Camera placement and lens defaults carried by a scene file.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDefaults {
    pub position: DVec3,
    pub target: DVec3,
    #[serde(default = "default_up")]
    pub up: DVec3,
    pub aperture: f64,
    pub focal_length: f64,
    pub focus_distance: f64,
    pub sensor_width: f64,
}

fn default_up() -> DVec3 {
    DVec3::Y
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub meshes: Vec<Mesh>,
    pub materials: Vec<Material>,
    pub lights: Vec<Light>,
    /// Radiance returned by rays that escape.
    pub background: Rgb,
    pub ambient: Rgb,
    pub camera: Option<CameraDefaults>,
}

impl Scene {
    pub fn triangle_count(&self) -> usize {
        self.meshes.iter().map(|m| m.triangles.len()).sum()
    }

    pub fn vertex_count(&self) -> usize {
        self.meshes.iter().map(|m| m.vertices.len()).sum()
    }

    /// Check every structural invariant.
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.meshes.is_empty() {
            return Err(SceneError::Invalid("scene needs at least one mesh".into()));
        }
        for (mi, mat) in self.materials.iter().enumerate() {
            let channels = [mat.albedo.x, mat.albedo.y, mat.albedo.z];
            if channels.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(SceneError::Invalid(format!(
                    "materials[{mi}].albedo {:?} outside [0, 1]",
                    mat.albedo
                )));
            }
            if !mat.emissive.is_finite() || mat.emissive < 0.0 {
                return Err(SceneError::Invalid(format!(
                    "materials[{mi}].emissive must be finite and >= 0, got {}",
                    mat.emissive
                )));
            }
            if !(0.0..=1.0).contains(&mat.specular) {
                return Err(SceneError::Invalid(format!(
                    "materials[{mi}].specular must lie in [0, 1], got {}",
                    mat.specular
                )));
            }
            if let Some(ch) = &mat.checker {
                if !(ch.size > 0.0) || ch.axes[0] > 2 || ch.axes[1] > 2 {
                    return Err(SceneError::Invalid(format!("materials[{mi}].checker is malformed")));
                }
            }
        }
        for (mi, mesh) in self.meshes.iter().enumerate() {
            if mesh.material >= self.materials.len() {
                return Err(SceneError::Invalid(format!(
                    "meshes[{mi}].material index {} out of range ({} materials)",
                    mesh.material,
                    self.materials.len()
                )));
            }
            let n = mesh.vertices.len();
            for (ti, tri) in mesh.triangles.iter().enumerate() {
                for (k, &idx) in tri.iter().enumerate() {
                    if idx as usize >= n {
                        return Err(SceneError::Invalid(format!(
                            "meshes[{mi}].triangles[{ti}][{k}] = {idx} out of range ({n} vertices)"
                        )));
                    }
                }
            }
            for (vi, v) in mesh.vertices.iter().enumerate() {
                if !v.position.is_finite() {
                    return Err(SceneError::Invalid(format!("meshes[{mi}].positions[{vi}] not finite")));
                }
                if (v.normal.length() - 1.0).abs() > 1e-4 {
                    return Err(SceneError::Invalid(format!("meshes[{mi}].normals[{vi}] is not unit length")));
                }
            }
        }
        Ok(())
    }

    /// The fixed local shading rule: Lambertian direct light (no shadows)
    /// plus ambient, plus emission.
    pub fn shade(&self, material: usize, position: DVec3, normal: DVec3) -> Rgb {
        let mat = &self.materials[material];
        let albedo = mat.albedo_at(position);
        let mut irradiance = self.ambient;
        for light in &self.lights {
            match *light {
                Light::Point {
                    position: lp,
                    intensity,
                } => {
                    let to = lp - position;
                    let dist2 = to.length_squared();
                    if dist2 > 0.0 {
                        let cos = normal.dot(to / dist2.sqrt()).max(0.0);
                        irradiance += intensity * (cos / dist2) as f32;
                    }
                }
                Light::Directional {
                    direction,
                    intensity,
                } => {
                    let cos = normal.dot(-direction.normalize()).max(0.0);
                    irradiance += intensity * cos as f32;
                }
            }
        }
        albedo * irradiance + albedo * mat.emissive
    }
}

/// A ray with a unit direction and a valid parametric interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: DVec3,
    pub direction: DVec3,
    pub t_min: f64,
    pub t_max: f64,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: DVec3, direction: DVec3, t_min: f64, t_max: f64) -> Self {
        debug_assert!(t_min < t_max);
        Self {
            origin,
            direction: direction.normalize(),
            t_min,
            t_max,
        }
    }

    pub fn at(&self, t: f64) -> DVec3 {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub world_pos: DVec3,
    /// Shading normal, facing the incoming ray.
    pub normal: DVec3,
    pub material: usize,
    pub primitive: usize,
    pub shaded: Rgb,
}

impl Hit {
    pub fn albedo(&self, scene: &Scene) -> Rgb {
        scene.materials[self.material].albedo_at(self.world_pos)
    }

    pub fn emissive(&self, scene: &Scene) -> f32 {
        scene.materials[self.material].emissive
    }
}

#[inline]
pub(crate) fn rgb(v: [f32; 3]) -> Rgb {
    Vec3::from_array(v)
}
