//! Persistence: surfaces, trees, beta streams, corona results, graph
//! exports, Whitney families and grid functions.
//!
//! Text formats are JSON or JSON-lines; bulk arrays live in little-endian
//! binary sidecars next to the JSON file.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::beta::{BetaField, BetaParams, BetaRecord};
use crate::corona::CoronaResult;
use crate::dyadic::{Cube, DyadicTree};
use crate::error::{Error, Result};
use crate::regularity::{Boundary, GridFunction};
use crate::surface::Surface;
use crate::whitney::{Frame, GraphField, WhitneyCube};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Path with an extra extension appended: `a.json` -> `a.json.bin`.
pub fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

// ---------------------------------------------------------------- surfaces

#[derive(Serialize, Deserialize)]
struct SurfaceHeader {
    n: usize,
    h: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PointRecord {
    x: Vec<f64>,
    t: f64,
    w: f64,
}

pub fn write_surface<W: Write>(s: &Surface, mut w: W) -> Result<()> {
    serde_json::to_writer(&mut w, &SurfaceHeader { n: s.n, h: s.spacing })?;
    w.write_all(b"\n")?;
    for i in 0..s.len() {
        serde_json::to_writer(&mut w, &PointRecord { x: s.x(i).to_vec(), t: s.ts[i], w: s.ws[i] })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn surface_bytes(s: &Surface) -> Vec<u8> {
    let mut out = Vec::new();
    write_surface(s, &mut out).expect("writing to memory");
    out
}

/// Read a point-cloud file. Records are validated line by line; the
/// sampling check runs afterwards and fills `warnings`.
pub fn read_surface<R: Read>(r: R) -> Result<Surface> {
    let mut lines = BufReader::new(r).lines().enumerate().filter_map(|(i, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        other => Some((i + 1, other)),
    });
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty surface file"))?;
    let header: SurfaceHeader = serde_json::from_str(&header?).map_err(|e| parse_err(hl, format!("bad header: {e}")))?;
    if header.n == 0 {
        return Err(parse_err(hl, "n must be at least 1"));
    }
    if !(header.h > 0.0 && header.h.is_finite()) {
        return Err(parse_err(hl, format!("spacing h must be positive, got {}", header.h)));
    }
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    let mut ws = Vec::new();
    for (ln, line) in lines {
        let rec: PointRecord = serde_json::from_str(&line?).map_err(|e| parse_err(ln, e.to_string()))?;
        if rec.x.len() != header.n {
            return Err(parse_err(ln, format!("point has {} spatial coordinates, header says n = {}", rec.x.len(), header.n)));
        }
        if rec.x.iter().any(|v| !v.is_finite()) || !rec.t.is_finite() || !rec.w.is_finite() {
            return Err(parse_err(ln, "non-finite value"));
        }
        if rec.w < 0.0 {
            return Err(parse_err(ln, format!("negative weight {}", rec.w)));
        }
        xs.extend(rec.x);
        ts.push(rec.t);
        ws.push(rec.w);
    }
    if ts.is_empty() {
        return Err(parse_err(hl, "surface has no points"));
    }
    let mut s = Surface::new(header.n, header.h, xs, ts, ws)?;
    s.warnings = s.sampling_warnings();
    Ok(s)
}

pub fn save_surface(s: &Surface, path: &Path) -> Result<()> {
    write_surface(s, std::io::BufWriter::new(fs::File::create(path)?))
}

pub fn load_surface(path: &Path) -> Result<Surface> {
    read_surface(fs::File::open(path)?)
}

// ------------------------------------------------------------------- trees

#[derive(Serialize, Deserialize)]
struct TreeHeader {
    n: usize,
    spacing: f64,
    scale0: f64,
    cubes: usize,
    points: usize,
}

#[derive(Serialize, Deserialize)]
struct CenterRecord {
    index: u32,
    x: Vec<f64>,
    t: f64,
}

#[derive(Serialize, Deserialize)]
struct CubeRecord {
    id: u32,
    k: u32,
    parent: Option<u32>,
    children: Vec<u32>,
    center: CenterRecord,
    ell: f64,
    diam: f64,
    sigma: f64,
    members_offset: u32,
    members_len: u32,
}

/// Tree as JSON-lines plus the member permutation in `<path>.members`.
pub fn save_tree(tree: &DyadicTree, s: &Surface, path: &Path) -> Result<()> {
    fs::write(path, tree_bytes(tree, s))?;
    fs::write(sidecar(path, "members"), members_bytes(tree))?;
    Ok(())
}

pub fn tree_bytes(tree: &DyadicTree, s: &Surface) -> Vec<u8> {
    let mut out = Vec::new();
    let h = TreeHeader { n: tree.n, spacing: tree.spacing, scale0: tree.scale0, cubes: tree.len(), points: tree.order.len() };
    serde_json::to_writer(&mut out, &h).expect("memory");
    out.push(b'\n');
    for c in &tree.cubes {
        let rec = CubeRecord {
            id: c.id,
            k: c.k,
            parent: c.parent,
            children: c.children.clone(),
            center: CenterRecord { index: c.center, x: s.x(c.center as usize).to_vec(), t: s.ts[c.center as usize] },
            ell: c.ell,
            diam: c.diam,
            sigma: c.sigma,
            members_offset: c.members_offset,
            members_len: c.members_len,
        };
        serde_json::to_writer(&mut out, &rec).expect("memory");
        out.push(b'\n');
    }
    out
}

pub fn members_bytes(tree: &DyadicTree) -> Vec<u8> {
    tree.order.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn load_tree(path: &Path, s: &Surface) -> Result<DyadicTree> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty tree file"))?;
    let header: TreeHeader = serde_json::from_str(header).map_err(|e| parse_err(hl + 1, format!("bad header: {e}")))?;
    if header.n != s.n || header.points != s.len() {
        return Err(Error::Input(format!(
            "tree was built on a surface with n = {} and {} points; this surface has n = {} and {} points",
            header.n,
            header.points,
            s.n,
            s.len()
        )));
    }
    let raw = fs::read(sidecar(path, "members"))?;
    if raw.len() != 4 * header.points {
        return Err(Error::Input(format!("member sidecar holds {} bytes, expected {}", raw.len(), 4 * header.points)));
    }
    let order: Vec<u32> = raw.chunks_exact(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let mut cubes = Vec::with_capacity(header.cubes);
    for (i, line) in lines {
        let r: CubeRecord = serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        if r.id as usize != cubes.len() {
            return Err(parse_err(i + 1, format!("cube id {} out of sequence", r.id)));
        }
        if r.center.index as usize >= s.len() || (r.members_offset + r.members_len) as usize > order.len() {
            return Err(parse_err(i + 1, "cube refers to points outside the surface"));
        }
        cubes.push(Cube {
            id: r.id,
            k: r.k,
            parent: r.parent,
            children: r.children,
            center: r.center.index,
            ell: r.ell,
            diam: r.diam,
            sigma: r.sigma,
            members_offset: r.members_offset,
            members_len: r.members_len,
        });
    }
    if cubes.len() != header.cubes {
        return Err(Error::Input(format!("tree header announces {} cubes, file has {}", header.cubes, cubes.len())));
    }
    let depth = cubes.iter().map(|c| c.k).max().unwrap_or(0) as usize;
    let mut generations = vec![Vec::new(); depth + 1];
    let mut roots = Vec::new();
    let mut leaf_of = vec![0u32; s.len()];
    for c in &cubes {
        generations[c.k as usize].push(c.id);
        if c.parent.is_none() {
            roots.push(c.id);
        }
        if c.children.is_empty() {
            for &p in &order[c.members_offset as usize..(c.members_offset + c.members_len) as usize] {
                leaf_of[p as usize] = c.id;
            }
        }
    }
    Ok(DyadicTree { n: header.n, spacing: header.spacing, scale0: header.scale0, cubes, order, generations, leaf_of, roots })
}

// ------------------------------------------------------------------- betas

pub fn betas_bytes(field: &BetaField) -> Vec<u8> {
    let mut out = Vec::new();
    serde_json::to_writer(&mut out, &json!({ "params": field.params, "records": field.records.len() })).expect("memory");
    out.push(b'\n');
    for r in &field.records {
        serde_json::to_writer(&mut out, r).expect("memory");
        out.push(b'\n');
    }
    out
}

pub fn save_betas(field: &BetaField, path: &Path) -> Result<()> {
    fs::write(path, betas_bytes(field))?;
    Ok(())
}

pub fn load_betas(path: &Path) -> Result<BetaField> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty beta stream"))?;
    let header: Value = serde_json::from_str(header).map_err(|e| parse_err(hl + 1, e.to_string()))?;
    let params: BetaParams = serde_json::from_value(header["params"].clone()).map_err(|e| parse_err(hl + 1, e.to_string()))?;
    let mut records: Vec<BetaRecord> = Vec::new();
    for (i, line) in lines {
        let r: BetaRecord = serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        if r.cube as usize != records.len() {
            return Err(parse_err(i + 1, format!("record for cube {} out of sequence", r.cube)));
        }
        records.push(r);
    }
    Ok(BetaField { params, records })
}

// ------------------------------------------------------------------ corona

pub fn corona_bytes(c: &CoronaResult) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(c).expect("memory");
    v.push(b'\n');
    v
}

pub fn save_corona(c: &CoronaResult, path: &Path) -> Result<()> {
    fs::write(path, corona_bytes(c))?;
    Ok(())
}

pub fn load_corona(path: &Path) -> Result<CoronaResult> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(e.line(), e.to_string()))
}

// ------------------------------------------------------------ grid files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub t_lo: f64,
    pub t_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    #[serde(rename = "box")]
    pub bbox: GridBox,
    pub h_x: f64,
    pub policy: Boundary,
    pub dims: Vec<usize>,
    pub nt: usize,
}

impl GridHeader {
    pub fn of(g: &GridFunction) -> Self {
        let hi = g.lo.iter().zip(&g.dims).map(|(l, d)| l + (*d as f64 - 1.0) * g.hx).collect();
        GridHeader {
            bbox: GridBox { lo: g.lo.clone(), hi, t_lo: g.t_lo, t_hi: g.t_lo + (g.nt as f64 - 1.0) * g.ht() },
            h_x: g.hx,
            policy: g.policy,
            dims: g.dims.clone(),
            nt: g.nt,
        }
    }
}

pub fn grid_block(g: &GridFunction) -> Vec<u8> {
    g.values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Grid function as a JSON header plus `<path>.bin`.
pub fn save_grid(g: &GridFunction, path: &Path) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(&GridHeader::of(g))?;
    text.push(b'\n');
    fs::write(path, text)?;
    fs::write(sidecar(path, "bin"), grid_block(g))?;
    Ok(())
}

/// Read a grid file, or the grid of a graph export.
pub fn load_grid(path: &Path) -> Result<GridFunction> {
    let text = fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| parse_err(e.line(), e.to_string()))?;
    let hv = if v.get("grid").is_some() { v["grid"].clone() } else { v };
    let h: GridHeader = serde_json::from_value(hv).map_err(|e| Error::Input(format!("bad grid header: {e}")))?;
    let raw = fs::read(sidecar(path, "bin"))?;
    let count = h.dims.iter().product::<usize>() * h.nt;
    if raw.len() != 8 * count {
        return Err(Error::Input(format!("grid block holds {} bytes, expected {}", raw.len(), 8 * count)));
    }
    let values = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    GridFunction::new(h.bbox.lo, h.bbox.t_lo, h.h_x, h.dims, h.nt, h.policy, values)
}

// ------------------------------------------------------------------ graphs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphHeader {
    pub regime: u32,
    pub root: u32,
    pub frame: Frame,
    /// C'_{4 kappa R}(0, 0) in frame coordinates.
    pub support_box: GridBox,
    pub kappa: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub grid: GridHeader,
}

pub fn graph_header(g: &GraphField, grid: &GridFunction) -> GraphHeader {
    let f = &g.field;
    let rho = g.support_radius();
    let m = g.family.m;
    GraphHeader {
        regime: f.regime.id,
        root: f.regime.root,
        frame: f.frame.clone(),
        support_box: GridBox { lo: vec![-rho; m], hi: vec![rho; m], t_lo: -rho * rho, t_hi: rho * rho },
        kappa: f.kappa,
        r: f.r,
        epsilon: f.epsilon,
        delta: f.delta,
        grid: GridHeader::of(grid),
    }
}

/// Graph export: JSON header with `<path>.bin` holding the psi grid.
pub fn save_graph(g: &GraphField, grid: &GridFunction, path: &Path) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(&graph_header(g, grid))?;
    text.push(b'\n');
    fs::write(path, text)?;
    fs::write(sidecar(path, "bin"), grid_block(grid))?;
    Ok(())
}

/// One JSON line per Whitney cube, in the given order.
pub fn whitney_bytes(cubes: &[std::sync::Arc<WhitneyCube>]) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, c) in cubes.iter().enumerate() {
        let mut corner = c.corner.clone();
        corner.push(c.corner_t);
        let rec = json!({
            "i": i,
            "corner": corner,
            "r": c.r,
            "Q_of_i": c.q_of_i,
            "B": { "slope": c.b.slope, "offset": c.b.offset },
        });
        serde_json::to_writer(&mut out, &rec).expect("memory");
        out.push(b'\n');
    }
    out
}

pub fn save_whitney(cubes: &[std::sync::Arc<WhitneyCube>], path: &Path) -> Result<()> {
    fs::write(path, whitney_bytes(cubes))?;
    Ok(())
}

pub fn save_json<T: Serialize>(v: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(v)?;
    text.push(b'\n');
    fs::write(path, text)?;
    Ok(())
}
