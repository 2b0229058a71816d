use glam::DVec3;

use super::{Hit, Ray, Scene, SceneError};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Aabb {
    min: DVec3,
    max: DVec3,
}

impl Aabb {
    const EMPTY: Aabb = Aabb {
        min: DVec3::splat(f64::INFINITY),
        max: DVec3::splat(f64::NEG_INFINITY),
    };

    fn grow(&mut self, p: DVec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    fn contains(&self, p: DVec3) -> bool {
        p.cmpge(self.min).all() && p.cmple(self.max).all()
    }

    /// Slab test; returns the entry distance when the interval overlaps.
    #[inline]
    fn hit(&self, origin: DVec3, inv_dir: DVec3, t_min: f64, t_max: f64) -> Option<f64> {
        let t0 = (self.min - origin) * inv_dir;
        let t1 = (self.max - origin) * inv_dir;
        let near = t0.min(t1);
        let far = t0.max(t1);
        let enter = near.x.max(near.y).max(near.z).max(t_min);
        let exit = far.x.min(far.y).min(far.z).min(t_max);
        (enter <= exit).then_some(enter)
    }
}

#[derive(Debug, Clone, Copy)]
enum NodeKind {
    Leaf { first: u32, count: u32 },
    Interior { left: u32, right: u32 },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

/// Raw triangle hit: primitive index (into the global triangle order),
/// distance and barycentrics of the second and third vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimHit {
    pub primitive: usize,
    pub t: f64,
    pub b1: f64,
    pub b2: f64,
}

const MAX_LEAF: usize = 4;

/// Bounding volume hierarchy over every triangle of a scene.
///
/// Built by median split of primitive centroids along the longest axis;
/// leaves hold at most four triangles.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Leaf slots → global primitive index.
    order: Vec<u32>,
    /// Global primitive index → (mesh, triangle).
    prims: Vec<(u32, u32)>,
    /// Global primitive index → vertex positions.
    tris: Vec<[DVec3; 3]>,
}

impl Bvh {
    pub fn build(scene: &Scene) -> Result<Self, SceneError> {
        let mut prims = Vec::new();
        let mut tris = Vec::new();
        for (mi, mesh) in scene.meshes.iter().enumerate() {
            for (ti, t) in mesh.triangles.iter().enumerate() {
                prims.push((mi as u32, ti as u32));
                tris.push(t.map(|i| mesh.vertices[i as usize].position));
            }
        }
        if tris.is_empty() {
            return Err(SceneError::EmptyGeometry);
        }
        let centroids: Vec<DVec3> = tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / MAX_LEAF + 1);
        build_node(&mut nodes, &mut order, 0, &tris, &centroids);
        Ok(Self {
            nodes,
            order,
            prims,
            tris,
        })
    }

    pub fn primitive_count(&self) -> usize {
        self.tris.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf { .. })).count()
    }

    /// (mesh index, triangle index) of a global primitive.
    pub fn primitive_source(&self, primitive: usize) -> (usize, usize) {
        let (m, t) = self.prims[primitive];
        (m as usize, t as usize)
    }

    /// Every leaf's triangles lie inside its bounds and every primitive
    /// appears in exactly one leaf.
    pub fn check_invariants(&self) -> bool {
        let mut seen = vec![0u32; self.tris.len()];
        for node in &self.nodes {
            if let NodeKind::Leaf { first, count } = node.kind {
                for slot in first..first + count {
                    let p = self.order[slot as usize] as usize;
                    seen[p] += 1;
                    if !self.tris[p].iter().all(|&v| node.bounds.contains(v)) {
                        return false;
                    }
                }
            }
        }
        seen.iter().all(|&c| c == 1)
    }

    /// Nearest triangle hit in `[t_min, t_max]` via the hierarchy.
    pub fn intersect_primitive(&self, ray: &Ray) -> Option<PrimHit> {
        let inv_dir = ray.direction.recip();
        let tester = TriangleTester::new(ray);
        let mut best: Option<PrimHit> = None;
        let mut t_max = ray.t_max;
        let mut stack = [0u32; 64];
        let mut sp = 0usize;
        if self.nodes[0].bounds.hit(ray.origin, inv_dir, ray.t_min, t_max).is_none() {
            return None;
        }
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            match node.kind {
                NodeKind::Leaf { first, count } => {
                    for slot in first..first + count {
                        let p = self.order[slot as usize] as usize;
                        if let Some((t, b1, b2)) = tester.test(&self.tris[p], ray.t_min, t_max) {
                            // Equal distances resolve to the lowest primitive
                            // index so the answer is traversal-order independent.
                            let better = match best {
                                Some(b) => t < b.t || (t == b.t && p < b.primitive),
                                None => true,
                            };
                            if better {
                                t_max = t;
                                best = Some(PrimHit {
                                    primitive: p,
                                    t,
                                    b1,
                                    b2,
                                });
                            }
                        }
                    }
                }
                NodeKind::Interior { left, right } => {
                    let hl = self.nodes[left as usize].bounds.hit(ray.origin, inv_dir, ray.t_min, t_max);
                    let hr = self.nodes[right as usize].bounds.hit(ray.origin, inv_dir, ray.t_min, t_max);
                    match (hl, hr) {
                        (Some(a), Some(b)) => {
                            // Push the farther child first so the nearer pops next.
                            let (near, far) = if a <= b { (left, right) } else { (right, left) };
                            stack[sp] = far;
                            stack[sp + 1] = near;
                            sp += 2;
                        }
                        (Some(_), None) => {
                            stack[sp] = left;
                            sp += 1;
                        }
                        (None, Some(_)) => {
                            stack[sp] = right;
                            sp += 1;
                        }
                        (None, None) => {}
                    }
                }
            }
        }
        best
    }

    /// Exhaustive scan over every triangle. Same triangle test as the
    /// hierarchy, used as the correctness oracle.
    pub fn intersect_primitive_linear(&self, ray: &Ray) -> Option<PrimHit> {
        let tester = TriangleTester::new(ray);
        let mut best: Option<PrimHit> = None;
        let mut t_max = ray.t_max;
        for (p, tri) in self.tris.iter().enumerate() {
            if let Some((t, b1, b2)) = tester.test(tri, ray.t_min, t_max) {
                if best.is_none_or(|b| t < b.t) {
                    t_max = t;
                    best = Some(PrimHit {
                        primitive: p,
                        t,
                        b1,
                        b2,
                    });
                }
            }
        }
        best
    }

    /// Nearest hit with shading applied.
    pub fn intersect(&self, scene: &Scene, ray: &Ray) -> Option<Hit> {
        self.intersect_primitive(ray).map(|h| self.resolve_hit(scene, ray, h))
    }

    pub fn intersect_linear(&self, scene: &Scene, ray: &Ray) -> Option<Hit> {
        self.intersect_primitive_linear(ray).map(|h| self.resolve_hit(scene, ray, h))
    }

    fn resolve_hit(&self, scene: &Scene, ray: &Ray, h: PrimHit) -> Hit {
        let (mi, ti) = self.prims[h.primitive];
        let mesh = &scene.meshes[mi as usize];
        let idx = mesh.triangles[ti as usize];
        let [n0, n1, n2] = idx.map(|i| mesh.vertices[i as usize].normal);
        let b0 = 1.0 - h.b1 - h.b2;
        let mut normal = (n0 * b0 + n1 * h.b1 + n2 * h.b2).normalize_or_zero();
        if normal == DVec3::ZERO {
            let [p0, p1, p2] = self.tris[h.primitive];
            normal = (p1 - p0).cross(p2 - p0).normalize();
        }
        if normal.dot(ray.direction) > 0.0 {
            normal = -normal;
        }
        let world_pos = ray.at(h.t);
        let material = mesh.material;
        Hit {
            t: h.t,
            world_pos,
            normal,
            material,
            primitive: h.primitive,
            shaded: scene.shade(material, world_pos, normal),
        }
    }
}

fn build_node(nodes: &mut Vec<Node>, order: &mut [u32], offset: u32, tris: &[[DVec3; 3]], centroids: &[DVec3]) -> u32 {
    let mut bounds = Aabb::EMPTY;
    let mut cbounds = Aabb::EMPTY;
    for &p in order.iter() {
        for v in tris[p as usize] {
            bounds.grow(v);
        }
        cbounds.grow(centroids[p as usize]);
    }
    let pad = (bounds.max - bounds.min).max_element() * 1e-9 + 1e-12;
    bounds.min -= DVec3::splat(pad);
    bounds.max += DVec3::splat(pad);

    let index = nodes.len() as u32;
    if order.len() <= MAX_LEAF {
        nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf {
                first: offset,
                count: order.len() as u32,
            },
        });
        return index;
    }
    nodes.push(Node {
        bounds,
        kind: NodeKind::Leaf { first: 0, count: 0 },
    });

    let extent = cbounds.max - cbounds.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(nodes, lo, offset, tris, centroids);
    let right = build_node(nodes, hi, offset + mid as u32, tris, centroids);
    nodes[index as usize].kind = NodeKind::Interior { left, right };
    index
}

/// Watertight ray/triangle test: vertices are sheared into a ray-aligned
/// frame and classified by 2D edge functions. A shared edge evaluates to
/// exactly negated values in both adjacent triangles, so rays through
/// edges and vertices cannot slip between them.
struct TriangleTester {
    origin: DVec3,
    kx: usize,
    ky: usize,
    kz: usize,
    sx: f64,
    sy: f64,
    sz: f64,
}

impl TriangleTester {
    fn new(ray: &Ray) -> Self {
        let d = ray.direction;
        let a = d.abs();
        let kz = if a.x >= a.y && a.x >= a.z {
            0
        } else if a.y >= a.z {
            1
        } else {
            2
        };
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if d[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        Self {
            origin: ray.origin,
            kx,
            ky,
            kz,
            sx: d[kx] / d[kz],
            sy: d[ky] / d[kz],
            sz: 1.0 / d[kz],
        }
    }

    #[inline]
    fn test(&self, tri: &[DVec3; 3], t_min: f64, t_max: f64) -> Option<(f64, f64, f64)> {
        let a = tri[0] - self.origin;
        let b = tri[1] - self.origin;
        let c = tri[2] - self.origin;
        let (kx, ky, kz) = (self.kx, self.ky, self.kz);
        let ax = a[kx] - self.sx * a[kz];
        let ay = a[ky] - self.sy * a[kz];
        let bx = b[kx] - self.sx * b[kz];
        let by = b[ky] - self.sy * b[kz];
        let cx = c[kx] - self.sx * c[kz];
        let cy = c[ky] - self.sy * c[kz];

        let u = cx * by - cy * bx;
        let v = ax * cy - ay * cx;
        let w = bx * ay - by * ax;
        if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
            return None;
        }
        let det = u + v + w;
        if det == 0.0 {
            return None;
        }
        let az = self.sz * a[kz];
        let bz = self.sz * b[kz];
        let cz = self.sz * c[kz];
        let t = (u * az + v * bz + w * cz) / det;
        if !(t >= t_min && t <= t_max) {
            return None;
        }
        Some((t, v / det, w / det))
    }
}
