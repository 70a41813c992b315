//! File formats: point clouds, frames, operator triplets, spectra and
//! trajectory snapshots.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Manifold, PointCloud};
use crate::operators::{BlockOperator, LaplacianKind, Spectrum};
use crate::pde::Trajectory;
use crate::tangent::{Frame, FrameField};

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad {what} value '{s}'")))
}

/// `x1..xn[,p1..pd]`, one row per point.
pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut w = create(path)?;
    let n = cloud.ambient_dim();
    let mut head: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    if cloud.params().is_some() {
        head.extend((1..=cloud.intrinsic_dim()).map(|i| format!("p{i}")));
    }
    writeln!(w, "{}", head.join(","))?;
    for i in 0..cloud.len() {
        let mut row: Vec<String> = cloud.point(i).iter().map(|v| format!("{v:e}")).collect();
        if let Some(p) = cloud.param(i) {
            row.extend(p.iter().map(|v| format!("{v:e}")));
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a cloud; `d` is required when the file carries no parameter columns.
pub fn read_cloud(path: &Path, d: Option<usize>, manifold: Option<Manifold>) -> Result<PointCloud> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let head = rdr.headers()?.clone();
    let n = head.iter().filter(|h| h.starts_with('x')).count();
    let np = head.iter().filter(|h| h.starts_with('p')).count();
    if n + np != head.len() || n == 0 {
        return Err(Error::Parse("cloud header must be x1..xn[,p1..pd]".into()));
    }
    let d = match (np, d) {
        (0, Some(d)) => d,
        (0, None) => return invalid("intrinsic dimension needed for a cloud without parameters"),
        (np, Some(d)) if d != np => return invalid(format!("file has {np} parameters but d = {d}")),
        (np, _) => np,
    };
    let mut pts = Vec::new();
    let mut params = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        for (c, v) in rec.iter().enumerate() {
            let x = parse_f64(v, "coordinate")?;
            if c < n {
                pts.push(x);
            } else {
                params.push(x);
            }
        }
    }
    let mut cloud = PointCloud::new(pts, n, d)?;
    if np > 0 {
        cloud = cloud.with_params(params)?;
    }
    if let Some(m) = manifold {
        cloud = cloud.with_manifold(m)?;
    }
    Ok(cloud)
}

/// `point_index,t1_1..tn_d` with t{i}_{j} the i-th ambient entry of column j.
pub fn write_frames(path: &Path, frames: &FrameField) -> Result<()> {
    let mut w = create(path)?;
    let (n, d) = (frames.ambient_dim(), frames.dim());
    let mut head = vec!["point_index".to_string()];
    for i in 1..=n {
        for j in 1..=d {
            head.push(format!("t{i}_{j}"));
        }
    }
    writeln!(w, "{}", head.join(","))?;
    for (p, f) in frames.iter().enumerate() {
        write!(w, "{p}")?;
        for i in 0..n {
            for j in 0..d {
                write!(w, ",{:e}", f.t()[(i, j)])?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_frames(path: &Path) -> Result<FrameField> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let head = rdr.headers()?.clone();
    let (mut n, mut d) = (0, 0);
    for h in head.iter().skip(1) {
        let (i, j) = h
            .strip_prefix('t')
            .and_then(|s| s.split_once('_'))
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Parse(format!("bad frame column '{h}'")))?;
        n = n.max(i);
        d = d.max(j);
    }
    if n * d + 1 != head.len() {
        return Err(Error::Parse("frame header is incomplete".into()));
    }
    let mut frames = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let idx: usize = rec[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad point index '{}'", &rec[0])))?;
        if idx != row {
            return Err(Error::Parse(format!("frame rows out of order at {row}")));
        }
        let vals = rec.iter().skip(1).map(|v| parse_f64(v, "frame")).collect::<Result<Vec<_>>>()?;
        frames.push(Frame::new(DMatrix::from_row_slice(n, d, &vals)));
    }
    FrameField::new(frames)
}

/// Scalar triplets `row col value`, sorted, under a `% dN .. K .. kind ..` header.
pub fn write_operator(path: &Path, op: &BlockOperator, k: usize, kind: LaplacianKind) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "% dN {} K {} kind {}", op.dim(), k, kind.name())?;
    let mut t = op.triplets();
    t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    for (r, c, v) in t {
        writeln!(w, "{r} {c} {v:e}")?;
    }
    w.flush()?;
    Ok(())
}

/// Header of an operator file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorHeader {
    pub dim: usize,
    pub k: usize,
    pub kind: LaplacianKind,
}

/// Read an operator written by [`write_operator`]. The block size follows from
/// the number of entries per scalar row.
pub fn read_operator(path: &Path) -> Result<(BlockOperator, OperatorHeader)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let head = lines.next().ok_or_else(|| Error::Parse("empty operator file".into()))??;
    let toks: Vec<&str> = head.split_whitespace().collect();
    let header = match toks.as_slice() {
        ["%", "dN", dn, "K", k, "kind", kind] => OperatorHeader {
            dim: dn.parse().map_err(|_| Error::Parse("bad dN".into()))?,
            k: k.parse().map_err(|_| Error::Parse("bad K".into()))?,
            kind: kind.parse()?,
        },
        _ => return Err(Error::Parse(format!("bad operator header '{head}'"))),
    };
    let mut trip = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(Error::Parse(format!("bad triplet line '{line}'")));
        }
        let r: usize = f[0].parse().map_err(|_| Error::Parse(format!("bad row '{}'", f[0])))?;
        let c: usize = f[1].parse().map_err(|_| Error::Parse(format!("bad column '{}'", f[1])))?;
        trip.push((r, c, parse_f64(f[2], "operator")?));
    }
    let row0 = trip.iter().filter(|t| t.0 == 0).count();
    if header.k == 0 || row0 % header.k != 0 || row0 == 0 {
        return Err(Error::Parse("cannot infer block size from the first row".into()));
    }
    let d = row0 / header.k;
    if header.dim % d != 0 {
        return Err(Error::Parse("dN is not a multiple of the block size".into()));
    }
    let n = header.dim / d;
    let mut rows: Vec<std::collections::BTreeMap<usize, DMatrix<f64>>> = vec![Default::default(); n];
    for (r, c, v) in trip {
        if r >= header.dim || c >= header.dim {
            return Err(Error::Parse(format!("triplet ({r}, {c}) outside dN")));
        }
        rows[r / d].entry(c / d).or_insert_with(|| DMatrix::zeros(d, d))[(r % d, c % d)] = v;
    }
    let rows = rows.into_iter().map(|m| m.into_iter().collect()).collect();
    Ok((BlockOperator::from_block_rows(n, d, rows)?, header))
}

/// `k,re,im`.
pub fn write_spectrum(path: &Path, s: &Spectrum) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "k,re,im")?;
    for (k, z) in s.values.iter().enumerate() {
        writeln!(w, "{k},{:e},{:e}", z.re, z.im)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrum(path: &Path) -> Result<Vec<num_complex::Complex64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    rdr.records()
        .map(|r| {
            let r = r?;
            if r.len() != 3 {
                return Err(Error::Parse("eig rows need k,re,im".into()));
            }
            Ok(num_complex::Complex64::new(parse_f64(&r[1], "re")?, parse_f64(&r[2], "im")?))
        })
        .collect()
}

/// Manifest listing snapshot files and their times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifold: Option<String>,
    pub points: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    pub files: Vec<String>,
}

/// One CSV per snapshot (`point_index,u_1..u_d,ambient_u_1..ambient_u_n`)
/// plus `manifest.json` in `dir`.
pub fn write_trajectory(dir: &Path, traj: &Trajectory, frames: &FrameField, manifold: Option<Manifold>) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let (n, d) = (frames.ambient_dim(), frames.dim());
    let mut files = Vec::new();
    for (s, snap) in traj.snapshots.iter().enumerate() {
        let name = format!("snapshot_{s:05}.csv");
        let mut w = create(&dir.join(&name))?;
        let mut head = vec!["point_index".to_string()];
        head.extend((1..=d).map(|i| format!("u_{i}")));
        head.extend((1..=n).map(|i| format!("ambient_u_{i}")));
        writeln!(w, "{}", head.join(","))?;
        for (p, f) in frames.iter().enumerate() {
            let u = &snap.u[p * d..(p + 1) * d];
            write!(w, "{p}")?;
            for v in u.iter().chain(f.to_ambient(u).iter()) {
                write!(w, ",{v:e}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        files.push(name);
    }
    let m = Manifest {
        manifold: manifold.map(|m| m.name().to_string()),
        points: frames.len(),
        dim: d,
        times: traj.snapshots.iter().map(|s| s.t).collect(),
        files,
    };
    serde_json::to_writer_pretty(create(&dir.join("manifest.json"))?, &m)?;
    Ok(m)
}

/// Read the coefficient columns of one snapshot file.
pub fn read_snapshot(path: &Path, d: usize) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for r in rdr.records() {
        let r = r?;
        if r.len() < d + 1 {
            return Err(Error::Parse("snapshot row too short".into()));
        }
        for v in r.iter().skip(1).take(d) {
            out.push(parse_f64(v, "snapshot")?);
        }
    }
    Ok(out)
}
