//! Procedural mesh builders used by fixtures and tests.

use glam::{DVec3, Vec3};

use super::{Material, Mesh, Scene, Vertex};

/// Planar quad `center ± half_u ± half_v`, normal along `half_u × half_v`.
pub fn quad(name: &str, center: DVec3, half_u: DVec3, half_v: DVec3, material: usize) -> Mesh {
    let normal = half_u.cross(half_v).normalize();
    let corners = [
        center - half_u - half_v,
        center + half_u - half_v,
        center + half_u + half_v,
        center - half_u + half_v,
    ];
    Mesh {
        name: name.to_string(),
        vertices: corners
            .iter()
            .map(|&position| Vertex { position, normal })
            .collect(),
        triangles: vec![[0, 1, 2], [0, 2, 3]],
        material,
    }
}

/// Latitude/longitude sphere with poles on the z axis; `2·stacks·slices`
/// triangles minus the degenerate pole fans.
pub fn uv_sphere(center: DVec3, radius: f64, stacks: u32, slices: u32, material: usize) -> Mesh {
    let mut vertices = Vec::new();
    for i in 0..=stacks {
        let theta = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..=slices {
            let phi = std::f64::consts::TAU * j as f64 / slices as f64;
            let (st, ct) = theta.sin_cos();
            let (sp, cp) = phi.sin_cos();
            // theta = 0 at -z so the pole vertex sits exactly at (0, 0, -r).
            let n = if i == 0 {
                DVec3::NEG_Z
            } else if i == stacks {
                DVec3::Z
            } else {
                DVec3::new(st * cp, st * sp, -ct)
            };
            vertices.push(Vertex {
                position: center + n * radius,
                normal: n,
            });
        }
    }
    let row = slices + 1;
    let mut triangles = Vec::new();
    for i in 0..stacks {
        for j in 0..slices {
            let a = i * row + j;
            let b = a + 1;
            let c = a + row;
            let d = c + 1;
            if i != 0 {
                triangles.push([a, c, b]);
            }
            if i != stacks - 1 {
                triangles.push([b, c, d]);
            }
        }
    }
    Mesh {
        name: "sphere".into(),
        vertices,
        triangles,
        material,
    }
}

/// Closed axis-aligned box, one quad per face sharing corner positions.
pub fn closed_box(min: DVec3, max: DVec3, material: usize) -> Mesh {
    let c = (min + max) * 0.5;
    let h = (max - min) * 0.5;
    let faces = [
        (DVec3::new(h.x, 0.0, 0.0), DVec3::new(0.0, h.y, 0.0), DVec3::new(0.0, 0.0, h.z)),
        (DVec3::new(-h.x, 0.0, 0.0), DVec3::new(0.0, 0.0, h.z), DVec3::new(0.0, h.y, 0.0)),
        (DVec3::new(0.0, h.y, 0.0), DVec3::new(0.0, 0.0, h.z), DVec3::new(h.x, 0.0, 0.0)),
        (DVec3::new(0.0, -h.y, 0.0), DVec3::new(h.x, 0.0, 0.0), DVec3::new(0.0, 0.0, h.z)),
        (DVec3::new(0.0, 0.0, h.z), DVec3::new(h.x, 0.0, 0.0), DVec3::new(0.0, h.y, 0.0)),
        (DVec3::new(0.0, 0.0, -h.z), DVec3::new(0.0, h.y, 0.0), DVec3::new(h.x, 0.0, 0.0)),
    ];
    let mut mesh = Mesh {
        name: "box".into(),
        vertices: Vec::new(),
        triangles: Vec::new(),
        material,
    };
    for (offset, u, v) in faces {
        let q = quad("", c + offset, u, v, material);
        let base = mesh.vertices.len() as u32;
        mesh.vertices.extend(q.vertices);
        mesh.triangles
            .extend(q.triangles.iter().map(|t| t.map(|i| i + base)));
    }
    mesh
}

/// A scene with one grey diffuse material, a head-on directional light and
/// the given meshes.
pub fn scene_with(meshes: Vec<Mesh>) -> Scene {
    Scene {
        meshes,
        materials: vec![Material::diffuse(Vec3::splat(0.7))],
        lights: vec![super::Light::Directional {
            direction: DVec3::new(0.2, -0.3, 1.0).normalize(),
            intensity: Vec3::ONE,
        }],
        background: Vec3::new(0.1, 0.1, 0.15),
        ambient: Vec3::splat(0.05),
        camera: None,
    }
}

pub fn single_triangle_scene() -> Scene {
    let n = DVec3::NEG_Z;
    scene_with(vec![Mesh {
        name: "tri".into(),
        vertices: vec![
            Vertex {
                position: DVec3::new(-1.0, -1.0, 2.0),
                normal: n,
            },
            Vertex {
                position: DVec3::new(1.0, -1.0, 2.0),
                normal: n,
            },
            Vertex {
                position: DVec3::new(0.0, 1.0, 2.0),
                normal: n,
            },
        ],
        triangles: vec![[0, 1, 2]],
        material: 0,
    }])
}
