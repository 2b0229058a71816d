//! Minimal Wavefront OBJ reader: `v`, `vn` and `f` records; polygons are
//! fan-triangulated. Everything else is ignored.

use std::path::Path;

use glam::DVec3;

use super::SceneError;

type ObjGeometry = (Vec<DVec3>, Vec<DVec3>, Vec<[u32; 3]>);

pub(super) fn load_obj(path: &Path) -> Result<ObjGeometry, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_obj(&text).map_err(|message| SceneError::Parse {
        path: path.display().to_string(),
        message,
    })
}

pub(super) fn parse_obj(text: &str) -> Result<ObjGeometry, String> {
    let mut positions = Vec::new();
    let mut file_normals = Vec::new();
    // (position index, normal index) per output vertex
    let mut corners: Vec<(usize, Option<usize>)> = Vec::new();
    let mut triangles = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => positions.push(parse_vec3(&mut parts, line_no)?),
            Some("vn") => file_normals.push(parse_vec3(&mut parts, line_no)?),
            Some("f") => {
                let mut face = Vec::new();
                for tok in parts {
                    let mut fields = tok.split('/');
                    let vi = resolve_index(fields.next(), positions.len(), line_no)?
                        .ok_or_else(|| format!("line {line_no}: face corner without a position index"))?;
                    let _tex = fields.next();
                    let ni = resolve_index(fields.next(), file_normals.len(), line_no)?;
                    corners.push((vi, ni));
                    face.push((corners.len() - 1) as u32);
                }
                if face.len() < 3 {
                    return Err(format!("line {line_no}: face needs at least 3 corners"));
                }
                for k in 1..face.len() - 1 {
                    triangles.push([face[0], face[k], face[k + 1]]);
                }
            }
            _ => {}
        }
    }

    let all_have_normals = corners.iter().all(|c| c.1.is_some());
    let verts = corners.iter().map(|&(vi, _)| positions[vi]).collect();
    let normals = if all_have_normals && !corners.is_empty() {
        corners.iter().map(|&(_, ni)| file_normals[ni.unwrap()]).collect()
    } else {
        Vec::new()
    };
    Ok((verts, normals, triangles))
}

fn parse_vec3<'a>(parts: &mut impl Iterator<Item = &'a str>, line_no: usize) -> Result<DVec3, String> {
    let mut v = [0.0; 3];
    for c in v.iter_mut() {
        let tok = parts
            .next()
            .ok_or_else(|| format!("line {line_no}: expected 3 components"))?;
        *c = tok
            .parse()
            .map_err(|_| format!("line {line_no}: bad number {tok:?}"))?;
    }
    Ok(DVec3::from_array(v))
}

fn resolve_index(field: Option<&str>, count: usize, line_no: usize) -> Result<Option<usize>, String> {
    let Some(s) = field.filter(|s| !s.is_empty()) else {
        return Ok(None);
    };
    let i: i64 = s
        .parse()
        .map_err(|_| format!("line {line_no}: bad index {s:?}"))?;
    let resolved = if i < 0 { count as i64 + i } else { i - 1 };
    if resolved < 0 || resolved as usize >= count {
        return Err(format!("line {line_no}: index {i} out of range"));
    }
    Ok(Some(resolved as usize))
}
