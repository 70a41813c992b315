//! Point clouds, the test-manifold zoo and exact nearest-neighbor search.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::jet::{Jet, Scalar};
use crate::tangent::Frame;

const RBC_R: f64 = 3.91 / 3.39;
const RBC_C0: f64 = 0.81 / 3.39;
const RBC_C2: f64 = 7.83 / 3.39;
const RBC_C4: f64 = -4.39 / 3.39;

/// Parametrized closed manifolds used throughout the tests and experiments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Manifold {
    /// Unit sphere in R^3, parameters (polar angle, azimuth).
    UnitSphere,
    /// Torus of revolution in R^3 with tube radius `r` around a circle of radius `big_r`.
    Torus3 { big_r: f64, r: f64 },
    /// Two-torus embedded in R^9 through four Fourier modes in φ.
    Torus9 { big_r: f64 },
    /// Flat three-torus in R^12 (metric is the identity).
    FlatTorus12,
    /// Red-blood-cell shaped surface.
    RedBloodCell,
    /// Sphere with radius 1 + 0.2 sin^7(3θ) sin(4φ).
    BumpySphere,
}

impl Manifold {
    pub fn torus3(big_r: f64, r: f64) -> Result<Manifold> {
        if !(big_r.is_finite() && r.is_finite() && r > 0.0 && r < big_r) {
            return invalid(format!("torus needs 0 < r < R, got R={big_r}, r={r}"));
        }
        Ok(Manifold::Torus3 { big_r, r })
    }

    pub fn torus9(big_r: f64) -> Result<Manifold> {
        if !(big_r.is_finite() && big_r > 1.0) {
            return invalid(format!("torus in R^9 needs R > 1, got {big_r}"));
        }
        Ok(Manifold::Torus9 { big_r })
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self {
            Manifold::FlatTorus12 => 3,
            _ => 2,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            Manifold::Torus9 { .. } => 9,
            Manifold::FlatTorus12 => 12,
            _ => 3,
        }
    }

    /// Parameter box as (lower, upper) per intrinsic coordinate.
    pub fn param_box(&self) -> Vec<(f64, f64)> {
        match self {
            Manifold::UnitSphere | Manifold::BumpySphere => vec![(0.0, PI), (0.0, 2.0 * PI)],
            Manifold::RedBloodCell => vec![(-PI / 2.0, PI / 2.0), (-PI, PI)],
            Manifold::FlatTorus12 => vec![(0.0, 2.0 * PI); 3],
            _ => vec![(0.0, 2.0 * PI); 2],
        }
    }

    /// Embedding x(p), generic so that jets yield exact derivatives.
    pub fn embed<S: Scalar>(&self, p: &[S]) -> Vec<S> {
        match *self {
            Manifold::UnitSphere => {
                let (st, ct) = (p[0].sin(), p[0].cos());
                vec![st * p[1].cos(), st * p[1].sin(), ct]
            }
            Manifold::Torus3 { big_r, r } => {
                let rho = S::cst(big_r) + p[0].cos().scale(r);
                vec![rho * p[1].cos(), rho * p[1].sin(), p[0].sin().scale(r)]
            }
            Manifold::Torus9 { big_r } => {
                let rho = S::cst(big_r) + p[0].cos();
                let mut x = Vec::with_capacity(9);
                let mut c2 = 0.0;
                for i in 1..=4 {
                    let ip = p[1].scale(i as f64);
                    let w = 1.0 / i as f64;
                    x.push((rho * ip.cos()).scale(w));
                    x.push((rho * ip.sin()).scale(w));
                    c2 += w * w;
                }
                x.push(p[0].sin().scale(c2.sqrt()));
                x
            }
            Manifold::FlatTorus12 => {
                let w = 1.0 / 5f64.sqrt();
                let mut x = Vec::with_capacity(12);
                for &a in &p[..3] {
                    let a2 = a.scale(2.0);
                    x.push(a.cos().scale(w));
                    x.push(a.sin().scale(w));
                    x.push(a2.cos().scale(w));
                    x.push(a2.sin().scale(w));
                }
                x
            }
            Manifold::RedBloodCell => {
                let (st, ct) = (p[0].sin(), p[0].cos());
                let c2 = ct * ct;
                let shape = S::cst(RBC_C0) + c2.scale(RBC_C2) + (c2 * c2).scale(RBC_C4);
                vec![
                    (ct * p[1].cos()).scale(RBC_R),
                    (ct * p[1].sin()).scale(RBC_R),
                    (st * shape).scale(0.5),
                ]
            }
            Manifold::BumpySphere => {
                let rad = S::cst(1.0) + ((p[0].scale(3.0)).sin().powi(7) * p[1].scale(4.0).sin()).scale(0.2);
                let (st, ct) = (p[0].sin(), p[0].cos());
                vec![rad * st * p[1].cos(), rad * st * p[1].sin(), rad * ct]
            }
        }
    }

    pub fn point(&self, p: &[f64]) -> Vec<f64> {
        self.embed(p)
    }

    /// Residual of the defining implicit equation, where one is available.
    pub fn implicit_residual(&self, x: &[f64]) -> Option<f64> {
        match *self {
            Manifold::UnitSphere => Some(x.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0),
            Manifold::Torus3 { big_r, r } => {
                let rho = (x[0] * x[0] + x[1] * x[1]).sqrt() - big_r;
                Some(rho * rho + x[2] * x[2] - r * r)
            }
            Manifold::FlatTorus12 => {
                let w2 = 1.0 / 5.0;
                let mut worst: f64 = 0.0;
                for j in 0..3 {
                    let a = x[4 * j] * x[4 * j] + x[4 * j + 1] * x[4 * j + 1] - w2;
                    let b = x[4 * j + 2] * x[4 * j + 2] + x[4 * j + 3] * x[4 * j + 3] - w2;
                    worst = worst.max(a.abs()).max(b.abs());
                }
                Some(worst)
            }
            _ => None,
        }
    }

    /// Orthonormalized coordinate tangents at parameter `p`.
    pub fn analytic_frame(&self, p: &[f64]) -> Result<Frame> {
        let d = self.intrinsic_dim();
        let n = self.ambient_dim();
        if p.len() != d {
            return invalid(format!("expected {d} parameters, got {}", p.len()));
        }
        let x = self.embed(&Jet::point(p));
        let mut t = DMatrix::zeros(n, d);
        for a in 0..d {
            for s in 0..n {
                t[(s, a)] = x[s].d1(a);
            }
        }
        let scale = t.norm();
        let t = crate::tangent::gram_schmidt(t, 1e-10 * scale.max(1e-300))
            .ok_or_else(|| Error::SingularChart(p.to_vec()))?;
        Ok(Frame::new(t))
    }

    fn sample_param<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            // Area-uniform on the round sphere: cos θ uniform in [-1, 1].
            Manifold::UnitSphere => {
                let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
                vec![z.clamp(-1.0, 1.0).acos(), 2.0 * PI * rng.random::<f64>()]
            }
            _ => self
                .param_box()
                .iter()
                .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Manifold::UnitSphere => "sphere",
            Manifold::Torus3 { .. } => "torus3",
            Manifold::Torus9 { .. } => "torus9",
            Manifold::FlatTorus12 => "flat_torus12",
            Manifold::RedBloodCell => "rbc",
            Manifold::BumpySphere => "bumpy_sphere",
        }
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Manifold {
    type Err = Error;
    fn from_str(s: &str) -> Result<Manifold> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sphere" | "unit_sphere" => Ok(Manifold::UnitSphere),
            "torus3" | "torus" => Ok(Manifold::Torus3 { big_r: 2.0, r: 1.0 }),
            "torus9" => Ok(Manifold::Torus9 { big_r: 2.0 }),
            "flat_torus12" | "flat_torus" => Ok(Manifold::FlatTorus12),
            "rbc" | "red_blood_cell" => Ok(Manifold::RedBloodCell),
            "bumpy_sphere" | "bsp" => Ok(Manifold::BumpySphere),
            other => invalid(format!("unknown manifold '{other}'")),
        }
    }
}

/// N points in R^n sampled from (or claimed to lie on) a d-manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<f64>,
    n: usize,
    d: usize,
    params: Option<Vec<f64>>,
    manifold: Option<Manifold>,
}

impl PointCloud {
    /// Wrap row-major coordinates (`points.len() == N * n`).
    pub fn new(points: Vec<f64>, n: usize, d: usize) -> Result<PointCloud> {
        if n == 0 || d == 0 || d >= n {
            return invalid(format!("need 1 <= d < n, got d={d}, n={n}"));
        }
        if points.is_empty() || points.len() % n != 0 {
            return invalid("point buffer is empty or not a multiple of n");
        }
        if points.iter().any(|v| !v.is_finite()) {
            return invalid("point coordinates must be finite");
        }
        Ok(PointCloud {
            points,
            n,
            d,
            params: None,
            manifold: None,
        })
    }

    pub fn with_params(mut self, params: Vec<f64>) -> Result<PointCloud> {
        if params.len() != self.len() * self.d {
            return invalid("parameter buffer must hold N*d values");
        }
        self.params = Some(params);
        Ok(self)
    }

    pub fn with_manifold(mut self, m: Manifold) -> Result<PointCloud> {
        if m.ambient_dim() != self.n || m.intrinsic_dim() != self.d {
            return invalid("manifold dimensions do not match the cloud");
        }
        self.manifold = Some(m);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.n..(i + 1) * self.n]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn param(&self, i: usize) -> Option<&[f64]> {
        self.params
            .as_ref()
            .map(|p| &p[i * self.d..(i + 1) * self.d])
    }

    pub fn params(&self) -> Option<&[f64]> {
        self.params.as_deref()
    }

    pub fn manifold(&self) -> Option<Manifold> {
        self.manifold
    }

    /// Sub-cloud with the selected rows (params and manifold carried over).
    pub fn select(&self, rows: &[usize]) -> PointCloud {
        let mut pts = Vec::with_capacity(rows.len() * self.n);
        for &i in rows {
            pts.extend_from_slice(self.point(i));
        }
        let params = self.params.as_ref().map(|p| {
            rows.iter()
                .flat_map(|&i| p[i * self.d..(i + 1) * self.d].iter().copied())
                .collect()
        });
        PointCloud {
            points: pts,
            n: self.n,
            d: self.d,
            params,
            manifold: self.manifold,
        }
    }
}

/// Draw `n_points` parameter samples from `m` with a seeded ChaCha8 stream.
///
/// Parameters are uniform in the parameter box, except on the unit sphere
/// where the polar angle is drawn so that points are uniform in area.
pub fn sample_manifold(m: Manifold, n_points: usize, seed: u64) -> Result<PointCloud> {
    if n_points == 0 {
        return invalid("need at least one point");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = m.intrinsic_dim();
    let n = m.ambient_dim();
    let mut params = Vec::with_capacity(n_points * d);
    for _ in 0..n_points {
        params.extend(m.sample_param(&mut rng));
    }
    let mut points = Vec::with_capacity(n_points * n);
    for p in params.chunks(d) {
        points.extend(m.point(p));
    }
    PointCloud::new(points, n, d)?
        .with_params(params)?
        .with_manifold(m)
}

/// Cloud built from explicit parameter values (no randomness).
pub fn cloud_from_params(m: Manifold, params: &[f64]) -> Result<PointCloud> {
    let d = m.intrinsic_dim();
    if params.is_empty() || params.len() % d != 0 {
        return invalid("parameter buffer must hold N*d values");
    }
    let mut points = Vec::with_capacity(params.len() / d * m.ambient_dim());
    for p in params.chunks(d) {
        points.extend(m.point(p));
    }
    PointCloud::new(points, m.ambient_dim(), d)?
        .with_params(params.to_vec())?
        .with_manifold(m)
}

/// Analytic frames at every sampled point (requires params and a manifold).
pub fn analytic_frames(cloud: &PointCloud) -> Result<crate::tangent::FrameField> {
    let m = cloud
        .manifold()
        .ok_or_else(|| Error::Invalid("cloud carries no manifold".into()))?;
    if cloud.params().is_none() {
        return invalid("cloud carries no parameters");
    }
    let frames = (0..cloud.len())
        .into_par_iter()
        .map(|i| m.analytic_frame(cloud.param(i).unwrap()).map_err(|e| e.at(i)))
        .collect::<Result<Vec<_>>>()?;
    crate::tangent::FrameField::new(frames)
}

#[derive(Clone, Copy, PartialEq)]
struct Cand {
    d2: f64,
    idx: usize,
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Cand {
    fn cmp(&self, o: &Self) -> Ordering {
        self.d2.total_cmp(&o.d2).then(self.idx.cmp(&o.idx))
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { lo: usize, hi: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Exact Euclidean kNN over a cloud (kd-tree with deterministic ties).
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    points: Vec<f64>,
    n: usize,
    order: Vec<usize>,
    nodes: Vec<Node>,
    duplicates: Vec<(usize, usize)>,
}

const LEAF: usize = 12;

impl NeighborIndex {
    pub fn build(cloud: &PointCloud) -> NeighborIndex {
        let n = cloud.ambient_dim();
        let mut idx = NeighborIndex {
            points: cloud.points().to_vec(),
            n,
            order: (0..cloud.len()).collect(),
            nodes: Vec::new(),
            duplicates: Vec::new(),
        };
        let len = idx.order.len();
        idx.build_node(0, len);
        let dups: Vec<(usize, usize)> = (0..len)
            .into_par_iter()
            .filter_map(|i| {
                let q = idx.query_raw(idx.point(i), 2.min(len));
                q.iter()
                    .find(|c| c.idx != i && c.d2 == 0.0)
                    .filter(|c| c.idx > i)
                    .map(|c| (i, c.idx))
            })
            .collect();
        idx.duplicates = dups;
        idx
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.n..(i + 1) * self.n]
    }

    fn build_node(&mut self, lo: usize, hi: usize) -> usize {
        let id = self.nodes.len();
        if hi - lo <= LEAF {
            self.nodes.push(Node::Leaf { lo, hi });
            return id;
        }
        let mut best = (0, -1.0);
        for dim in 0..self.n {
            let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in &self.order[lo..hi] {
                let v = self.points[i * self.n + dim];
                mn = mn.min(v);
                mx = mx.max(v);
            }
            if mx - mn > best.1 {
                best = (dim, mx - mn);
            }
        }
        let dim = best.0;
        let mid = (lo + hi) / 2;
        let pts = &self.points;
        let n = self.n;
        self.order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            pts[a * n + dim].total_cmp(&pts[b * n + dim]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] * n + dim];
        self.nodes.push(Node::Leaf { lo: 0, hi: 0 });
        let left = self.build_node(lo, mid);
        let right = self.build_node(mid, hi);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    fn search(&self, node: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Cand>) {
        match self.nodes[node] {
            Node::Leaf { lo, hi } => {
                for &i in &self.order[lo..hi] {
                    let p = self.point(i);
                    let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                    let c = Cand { d2, idx: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }

    fn query_raw(&self, q: &[f64], k: usize) -> Vec<Cand> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if !self.nodes.is_empty() && k > 0 {
            self.search(0, q, k, &mut heap);
        }
        heap.into_sorted_vec()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// K nearest indices of an arbitrary location, ascending (distance, index).
    pub fn nearest(&self, q: &[f64], k: usize) -> Vec<(usize, f64)> {
        self.query_raw(q, k.min(self.len()))
            .into_iter()
            .map(|c| (c.idx, c.d2.sqrt()))
            .collect()
    }

    /// Stencil of point `base`: K indices, base first, then by (distance, index).
    pub fn query(&self, base: usize, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.len() {
            return invalid(format!("stencil size {k} outside 1..={}", self.len()));
        }
        let mut c = self.query_raw(self.point(base), k);
        if let Some(pos) = c.iter().position(|c| c.idx == base) {
            let b = c.remove(pos);
            c.insert(0, b);
        } else {
            // base tied with k or more duplicates: force it in front
            c.pop();
            c.insert(0, Cand { d2: 0.0, idx: base });
        }
        Ok(c.into_iter().map(|c| c.idx).collect())
    }

    /// Pairs (i, j), i < j, of coincident points.
    pub fn duplicates(&self) -> &[(usize, usize)] {
        &self.duplicates
    }
}

/// Stencils for every point of a cloud, stored row-major (N × K).
#[derive(Clone, Debug, PartialEq)]
pub struct Stencils {
    k: usize,
    idx: Vec<usize>,
}

impl Stencils {
    pub fn build(index: &NeighborIndex, k: usize) -> Result<Stencils> {
        let rows = (0..index.len())
            .into_par_iter()
            .map(|i| index.query(i, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Stencils {
            k,
            idx: rows.concat(),
        })
    }

    pub fn from_rows(k: usize, idx: Vec<usize>) -> Result<Stencils> {
        if k == 0 || idx.len() % k != 0 {
            return invalid("stencil buffer must hold N*K indices");
        }
        Ok(Stencils { k, idx })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.idx.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.idx[i * self.k..(i + 1) * self.k]
    }

    /// Keep the first `k` entries of every stencil.
    pub fn truncated(&self, k: usize) -> Result<Stencils> {
        if k == 0 || k > self.k {
            return invalid(format!("cannot truncate stencils of size {} to {k}", self.k));
        }
        let idx = self.idx.chunks(self.k).flat_map(|r| r[..k].iter().copied()).collect();
        Ok(Stencils { k, idx })
    }
}

/// Rows of the stencil as a K × n matrix (base first).
pub fn stencil_matrix(cloud: &PointCloud, stencil: &[usize]) -> DMatrix<f64> {
    let n = cloud.ambient_dim();
    DMatrix::from_fn(stencil.len(), n, |k, s| cloud.point(stencil[k])[s])
}

/// Fill-distance estimate: the largest distance from a probe point on the
/// manifold to its nearest cloud point.
///
/// Probes are drawn from the cloud's manifold with a fixed seed. A cloud
/// without a manifold falls back to the largest nearest-neighbor distance.
pub fn fill_distance_estimate(cloud: &PointCloud) -> Result<f64> {
    if cloud.len() < 2 {
        return invalid("fill distance needs at least two points");
    }
    let index = NeighborIndex::build(cloud);
    match cloud.manifold() {
        Some(m) => {
            let probes = sample_manifold(m, (4 * cloud.len()).max(20_000), 0x5eed_f111)?;
            Ok((0..probes.len())
                .into_par_iter()
                .map(|i| index.nearest(probes.point(i), 1)[0].1)
                .reduce(|| 0.0, f64::max))
        }
        None => Ok((0..cloud.len())
            .into_par_iter()
            .map(|i| index.nearest(cloud.point(i), 2)[1].1)
            .reduce(|| 0.0, f64::max)),
    }
}
