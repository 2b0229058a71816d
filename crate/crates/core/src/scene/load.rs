//! TOML scene files.
//!
//! ```toml
//! background = [0.05, 0.05, 0.08]   # escaped-ray radiance
//! ambient = [0.1, 0.1, 0.1]
//!
//! [camera]                           # optional defaults
//! position = [0.0, 0.0, 0.0]
//! target = [0.0, 0.0, 1.0]
//! up = [0.0, 1.0, 0.0]
//! aperture = 0.06                    # meters, lens diameter
//! focal_length = 0.05
//! focus_distance = 1.6
//! sensor_width = 0.036
//!
//! [[materials]]
//! name = "wall"
//! albedo = [0.8, 0.8, 0.8]
//! emissive = 0.0                     # optional
//! specular = 0.0                     # optional
//! checker = { size = 0.1, albedo = [0.1, 0.1, 0.3], plane = "xy" }   # optional
//!
//! [[meshes]]
//! name = "backdrop"
//! material = "wall"
//! positions = [[-2, -2, 3], [2, -2, 3], [2, 2, 3], [-2, 2, 3]]
//! normals = [[0, 0, -1], [0, 0, -1], [0, 0, -1], [0, 0, -1]]   # optional
//! triangles = [[0, 1, 2], [0, 2, 3]]
//!
//! [[meshes]]
//! material = "wall"
//! obj = "teapot.obj"                 # relative to the scene file
//!
//! [[lights]]
//! type = "directional"               # or "point" with `position`
//! direction = [0.3, -0.5, 1.0]
//! intensity = [1.0, 1.0, 1.0]
//! ```

use std::path::Path;

use glam::DVec3;
use serde::{Deserialize, Serialize};

use super::{obj, rgb, CameraDefaults, Checker, Light, Material, Mesh, Scene, SceneError, Vertex};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    #[serde(default)]
    pub background: [f32; 3],
    #[serde(default)]
    pub ambient: [f32; 3],
    #[serde(default)]
    pub camera: Option<CameraDefaults>,
    pub materials: Vec<MaterialEntry>,
    pub meshes: Vec<MeshEntry>,
    #[serde(default)]
    pub lights: Vec<LightEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialEntry {
    pub name: String,
    pub albedo: [f32; 3],
    #[serde(default)]
    pub emissive: f32,
    #[serde(default)]
    pub specular: f32,
    #[serde(default)]
    pub checker: Option<CheckerEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerEntry {
    pub size: f64,
    pub albedo: [f32; 3],
    #[serde(default = "default_plane")]
    pub plane: String,
}

fn default_plane() -> String {
    "xy".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshEntry {
    #[serde(default)]
    pub name: String,
    pub material: String,
    #[serde(default)]
    pub positions: Vec<[f64; 3]>,
    #[serde(default)]
    pub normals: Vec<[f64; 3]>,
    #[serde(default)]
    pub triangles: Vec<[u32; 3]>,
    #[serde(default)]
    pub obj: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LightEntry {
    Point { position: [f64; 3], intensity: [f32; 3] },
    Directional { direction: [f64; 3], intensity: [f32; 3] },
}

/// Read and validate a scene file. Relative `obj` references resolve
/// against the scene file's directory.
pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Scene::from_toml_str(&text, &path.display().to_string(), Some(base))
}

impl Scene {
    /// Parse scene text. `origin` names the source in error messages;
    /// `base_dir` resolves `obj` references (which are rejected without it).
    pub fn from_toml_str(text: &str, origin: &str, base_dir: Option<&Path>) -> Result<Scene, SceneError> {
        let file: SceneFile = toml::from_str(text).map_err(|e| SceneError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        file.into_scene(base_dir)
    }
}

impl SceneFile {
    pub fn into_scene(self, base_dir: Option<&Path>) -> Result<Scene, SceneError> {
        let mut materials = Vec::with_capacity(self.materials.len());
        for (i, m) in self.materials.iter().enumerate() {
            let checker = match &m.checker {
                Some(c) => {
                    let axes = match c.plane.as_str() {
                        "xy" => [0, 1],
                        "xz" => [0, 2],
                        "yz" => [1, 2],
                        other => {
                            return Err(SceneError::Invalid(format!(
                                "materials[{i}].checker.plane must be xy, xz or yz, got {other:?}"
                            )))
                        }
                    };
                    Some(Checker {
                        size: c.size,
                        albedo: rgb(c.albedo),
                        axes,
                    })
                }
                None => None,
            };
            materials.push(Material {
                albedo: rgb(m.albedo),
                emissive: m.emissive,
                specular: m.specular,
                checker,
            });
        }

        let mut meshes = Vec::with_capacity(self.meshes.len());
        for (i, entry) in self.meshes.iter().enumerate() {
            let material = self
                .materials
                .iter()
                .position(|m| m.name == entry.material)
                .ok_or_else(|| {
                    SceneError::Invalid(format!("meshes[{i}].material {:?} is not a defined material", entry.material))
                })?;
            let (positions, normals, triangles) = match &entry.obj {
                Some(rel) => {
                    if !entry.positions.is_empty() || !entry.triangles.is_empty() {
                        return Err(SceneError::Invalid(format!(
                            "meshes[{i}] mixes `obj` with inline geometry"
                        )));
                    }
                    let base = base_dir.ok_or_else(|| {
                        SceneError::Invalid(format!("meshes[{i}].obj needs a scene file location"))
                    })?;
                    obj::load_obj(&base.join(rel))?
                }
                None => (
                    entry.positions.iter().map(|&p| DVec3::from_array(p)).collect(),
                    entry.normals.iter().map(|&n| DVec3::from_array(n)).collect(),
                    entry.triangles.clone(),
                ),
            };
            meshes.push(assemble_mesh(i, &entry.name, positions, normals, triangles, material)?);
        }

        let lights = self
            .lights
            .iter()
            .map(|l| match *l {
                LightEntry::Point { position, intensity } => Light::Point {
                    position: DVec3::from_array(position),
                    intensity: rgb(intensity),
                },
                LightEntry::Directional { direction, intensity } => Light::Directional {
                    direction: DVec3::from_array(direction).normalize(),
                    intensity: rgb(intensity),
                },
            })
            .collect();

        let scene = Scene {
            meshes,
            materials,
            lights,
            background: rgb(self.background),
            ambient: rgb(self.ambient),
            camera: self.camera,
        };
        scene.validate()?;
        Ok(scene)
    }
}

fn assemble_mesh(
    index: usize,
    name: &str,
    positions: Vec<DVec3>,
    normals: Vec<DVec3>,
    triangles: Vec<[u32; 3]>,
    material: usize,
) -> Result<Mesh, SceneError> {
    let n = positions.len();
    for (ti, tri) in triangles.iter().enumerate() {
        for (k, &idx) in tri.iter().enumerate() {
            if idx as usize >= n {
                return Err(SceneError::Invalid(format!(
                    "meshes[{index}].triangles[{ti}][{k}] = {idx} out of range ({n} vertices)"
                )));
            }
        }
    }
    let normals = if normals.is_empty() {
        face_averaged_normals(&positions, &triangles)
    } else {
        if normals.len() != n {
            return Err(SceneError::Invalid(format!(
                "meshes[{index}].normals has {} entries for {n} positions",
                normals.len()
            )));
        }
        let mut out = Vec::with_capacity(n);
        for (vi, nrm) in normals.into_iter().enumerate() {
            let len = nrm.length();
            if !(len > 0.0) || !len.is_finite() {
                return Err(SceneError::Invalid(format!("meshes[{index}].normals[{vi}] is degenerate")));
            }
            out.push(nrm / len);
        }
        out
    };
    Ok(Mesh {
        name: name.to_string(),
        vertices: positions
            .into_iter()
            .zip(normals)
            .map(|(position, normal)| Vertex { position, normal })
            .collect(),
        triangles,
        material,
    })
}

/// Area-weighted vertex normals; isolated vertices get +z.
fn face_averaged_normals(positions: &[DVec3], triangles: &[[u32; 3]]) -> Vec<DVec3> {
    let mut acc = vec![DVec3::ZERO; positions.len()];
    for t in triangles {
        let [a, b, c] = t.map(|i| positions[i as usize]);
        let face = (b - a).cross(c - a);
        for &i in t {
            acc[i as usize] += face;
        }
    }
    acc.into_iter()
        .map(|n| n.try_normalize().unwrap_or(DVec3::Z))
        .collect()
}
