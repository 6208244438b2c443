//! ASCII OBJ and PLY codecs.

use std::fmt::Write as _;
use std::path::Path;

use super::{GeomError, Mesh, Point, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("obj") => Ok(MeshFormat::Obj),
            Some("ply") => Ok(MeshFormat::Ply),
            _ => Err(GeomError::Unsupported(format!(
                "cannot infer mesh format from {}; use .obj or .ply",
                path.display()
            ))),
        }
    }

    pub fn parse_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "obj" => Ok(MeshFormat::Obj),
            "ply" => Ok(MeshFormat::Ply),
            other => Err(GeomError::Unsupported(format!("unknown mesh format {other:?}"))),
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh").to_string()
}

pub fn read_mesh(path: &Path, format: Option<MeshFormat>) -> Result<Mesh> {
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let text = std::fs::read_to_string(path)?;
    match format {
        MeshFormat::Obj => parse_obj(&text, &stem(path)),
        MeshFormat::Ply => parse_ply(&text, &stem(path)),
    }
}

pub fn write_mesh(path: &Path, mesh: &Mesh, format: Option<MeshFormat>) -> Result<()> {
    let format = match format {
        Some(f) => f,
        None => MeshFormat::from_path(path)?,
    };
    let text = match format {
        MeshFormat::Obj => write_obj(mesh),
        MeshFormat::Ply => write_ply(mesh),
    };
    std::fs::write(path, text)?;
    Ok(())
}

/// Nine significant digits, shortest of fixed or exponent notation.
fn fmt_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { format!("{v}") };
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{v:.8e}")
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| GeomError::Parse { line, message: format!("expected a number, found {tok:?}") })
}

fn fan(polygon: &[usize], faces: &mut Vec<[usize; 3]>) {
    for i in 1..polygon.len() - 1 {
        faces.push([polygon[0], polygon[i], polygon[i + 1]]);
    }
}

/// Parses `v` and `f` records; other record types are ignored. Polygons are
/// fan-triangulated. Indices are 1-based; negative indices count back from
/// the most recent vertex.
pub fn parse_obj(text: &str, name: &str) -> Result<Mesh> {
    let mut vertices: Vec<Point> = Vec::new();
    let mut faces = Vec::new();
    let mut face_lines = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let coords: Vec<&str> = toks.collect();
                if coords.len() < 3 {
                    return Err(GeomError::Parse { line, message: "vertex needs three coordinates".into() });
                }
                vertices.push([parse_f64(coords[0], line)?, parse_f64(coords[1], line)?, parse_f64(coords[2], line)?]);
            }
            Some("f") => {
                let mut polygon = Vec::new();
                for tok in toks {
                    let idx_tok = tok.split('/').next().unwrap_or("");
                    let idx: i64 = idx_tok
                        .parse()
                        .map_err(|_| GeomError::Parse { line, message: format!("bad face index {tok:?}") })?;
                    let resolved = match idx {
                        0 => return Err(GeomError::Parse { line, message: "face index 0 is invalid".into() }),
                        i if i > 0 => (i - 1) as usize,
                        i => {
                            let back = (-i) as usize;
                            if back > vertices.len() {
                                return Err(GeomError::Parse {
                                    line,
                                    message: format!("relative index {i} before any such vertex"),
                                });
                            }
                            vertices.len() - back
                        }
                    };
                    polygon.push(resolved);
                }
                if polygon.len() < 3 {
                    return Err(GeomError::Parse { line, message: "face needs at least three vertices".into() });
                }
                let before = faces.len();
                fan(&polygon, &mut faces);
                face_lines.extend(std::iter::repeat_n(line, faces.len() - before));
            }
            _ => {}
        }
    }
    for (tri, &line) in faces.iter().zip(&face_lines) {
        if let Some(&bad) = tri.iter().find(|&&i| i >= vertices.len()) {
            return Err(GeomError::Parse {
                line,
                message: format!("vertex index {} out of range ({} vertices)", bad + 1, vertices.len()),
            });
        }
    }
    Mesh::new(vertices, faces, name)
}

pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {} vertices, {} faces", mesh.vertices.len(), mesh.faces.len());
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", fmt_sig9(v[0]), fmt_sig9(v[1]), fmt_sig9(v[2]));
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<String>,
    list_prop: bool,
}

/// ASCII PLY 1.0 with a `vertex` element (x, y, z plus any extra scalar
/// properties) and an optional `face` element with a vertex index list.
pub fn parse_ply(text: &str, name: &str) -> Result<Mesh> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(GeomError::Parse { line: 1, message: "missing 'ply' magic".into() }),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let Some((line, l)) = lines.next() else {
            return Err(GeomError::Parse { line: 0, message: "header ended without end_header".into() });
        };
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", "1.0"] => saw_format = true,
            ["format", other, ..] => {
                return Err(GeomError::Unsupported(format!("PLY format {other}; only ascii 1.0 is supported")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", ename, count] => {
                let count = count
                    .parse()
                    .map_err(|_| GeomError::Parse { line, message: format!("bad element count {count:?}") })?;
                elements.push(PlyElement { name: ename.to_string(), count, props: Vec::new(), list_prop: false });
            }
            ["property", "list", _, _, pname] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| GeomError::Parse { line, message: "property before element".into() })?;
                el.list_prop = true;
                el.props.push(pname.to_string());
            }
            ["property", _ty, pname] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| GeomError::Parse { line, message: "property before element".into() })?;
                el.props.push(pname.to_string());
            }
            ["end_header"] => break,
            _ => return Err(GeomError::Parse { line, message: format!("unexpected header line {l:?}") }),
        }
    }
    if !saw_format {
        return Err(GeomError::Parse { line: 2, message: "missing format line".into() });
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        let axis = |n: &str| el.props.iter().position(|p| p == n);
        for _ in 0..el.count {
            let Some((line, l)) = lines.next() else {
                return Err(GeomError::Parse { line: 0, message: format!("truncated {} element data", el.name) });
            };
            let toks: Vec<&str> = l.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    let (Some(x), Some(y), Some(z)) = (axis("x"), axis("y"), axis("z")) else {
                        return Err(GeomError::Parse { line, message: "vertex element lacks x/y/z".into() });
                    };
                    if toks.len() < el.props.len() {
                        return Err(GeomError::Parse { line, message: "short vertex record".into() });
                    }
                    vertices.push([parse_f64(toks[x], line)?, parse_f64(toks[y], line)?, parse_f64(toks[z], line)?]);
                }
                "face" if el.list_prop => {
                    let n: usize = toks
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| GeomError::Parse { line, message: "bad face record".into() })?;
                    if n < 3 || toks.len() < n + 1 {
                        return Err(GeomError::Parse { line, message: "face needs at least three indices".into() });
                    }
                    let mut polygon = Vec::with_capacity(n);
                    for t in &toks[1..=n] {
                        let i: usize = t
                            .parse()
                            .map_err(|_| GeomError::Parse { line, message: format!("bad face index {t:?}") })?;
                        if i >= el_count(&elements, "vertex") {
                            return Err(GeomError::Parse { line, message: format!("vertex index {i} out of range") });
                        }
                        polygon.push(i);
                    }
                    fan(&polygon, &mut faces);
                }
                _ => {}
            }
        }
    }
    Mesh::new(vertices, faces, name)
}

fn el_count(elements: &[PlyElement], name: &str) -> usize {
    elements.iter().find(|e| e.name == name).map_or(0, |e| e.count)
}

pub fn write_ply(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", mesh.vertices.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if !mesh.faces.is_empty() {
        let _ = writeln!(out, "element face {}", mesh.faces.len());
        out.push_str("property list uchar int vertex_indices\n");
    }
    out.push_str("end_header\n");
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} {}", fmt_sig9(v[0]), fmt_sig9(v[1]), fmt_sig9(v[2]));
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}
