//! Tangent frames: coarse local SVD, GMLS refinement, Gram–Schmidt.

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{stencil_matrix, PointCloud, Stencils};
use crate::gmls::{fit, local_coordinates, LocalFit, MultiIndexSet, WeightScheme};

/// SVD gap ratio σ_{d+1}/σ_d above which a coarse frame is flagged.
pub const GAP_RATIO: f64 = 0.9;

/// Orthonormal tangent basis at one point (columns of an n × d matrix).
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    t: DMatrix<f64>,
    normal: Option<Vector3<f64>>,
}

impl Frame {
    /// Wrap an orthonormal basis. For surfaces in R^3 the normal t₁ × t₂ is stored.
    pub fn new(t: DMatrix<f64>) -> Frame {
        let normal = if t.nrows() == 3 && t.ncols() == 2 {
            let a = Vector3::new(t[(0, 0)], t[(1, 0)], t[(2, 0)]);
            let b = Vector3::new(t[(0, 1)], t[(1, 1)], t[(2, 1)]);
            Some(a.cross(&b))
        } else {
            None
        };
        Frame { t, normal }
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn normal(&self) -> Option<&Vector3<f64>> {
        self.normal.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.t.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.t.nrows()
    }

    /// P = T Tᵀ.
    pub fn projection(&self) -> DMatrix<f64> {
        projection_matrix(self)
    }

    /// Frame T·O for a d × d orthogonal O.
    pub fn rotated(&self, o: &DMatrix<f64>) -> Frame {
        Frame::new(&self.t * o)
    }

    /// Tᵀ v.
    pub fn to_local(&self, v: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| (0..v.len()).map(|s| self.t[(s, i)] * v[s]).sum())
            .collect()
    }

    /// T u.
    pub fn to_ambient(&self, u: &[f64]) -> Vec<f64> {
        let n = self.ambient_dim();
        (0..n)
            .map(|s| (0..u.len()).map(|i| self.t[(s, i)] * u[i]).sum())
            .collect()
    }

    /// Largest |TᵀT − I| entry.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.t.transpose() * &self.t;
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let e = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - e).abs());
            }
        }
        worst
    }
}

/// P = T Tᵀ for a frame.
pub fn projection_matrix(frame: &Frame) -> DMatrix<f64> {
    &frame.t * frame.t.transpose()
}

/// One frame per cloud point; neighboring frames are not aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameField {
    frames: Vec<Frame>,
    n: usize,
    d: usize,
}

impl FrameField {
    pub fn new(frames: Vec<Frame>) -> Result<FrameField> {
        let Some(first) = frames.first() else {
            return invalid("empty frame field");
        };
        let (n, d) = (first.ambient_dim(), first.dim());
        if frames.iter().any(|f| f.ambient_dim() != n || f.dim() != d) {
            return invalid("frames disagree on dimensions");
        }
        Ok(FrameField { frames, n, d })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    /// Express a field of ambient vectors (N × n, row-major) in these frames.
    pub fn to_coefficients(&self, ambient: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.d);
        for (i, f) in self.frames.iter().enumerate() {
            out.extend(f.to_local(&ambient[i * self.n..(i + 1) * self.n]));
        }
        out
    }

    /// Push coefficients forward to ambient vectors (N × n, row-major).
    pub fn to_ambient(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.n);
        for (i, f) in self.frames.iter().enumerate() {
            out.extend(f.to_ambient(&coeffs[i * self.d..(i + 1) * self.d]));
        }
        out
    }

    /// Max over points of ‖P̂ − P‖_F.
    pub fn max_projection_error(&self, other: &FrameField) -> Result<f64> {
        if other.len() != self.len() || other.n != self.n {
            return invalid("frame fields have different shapes");
        }
        Ok(self
            .frames
            .par_iter()
            .zip(other.frames.par_iter())
            .map(|(a, b)| (a.projection() - b.projection()).norm())
            .reduce(|| 0.0, f64::max))
    }
}

/// Modified Gram–Schmidt on the columns, in order, with one
/// re-orthogonalization pass. Returns `None` if a column collapses below `tol`.
pub fn gram_schmidt(mut t: DMatrix<f64>, tol: f64) -> Option<DMatrix<f64>> {
    let d = t.ncols();
    for k in 0..d {
        let before = t.column(k).norm();
        for _ in 0..2 {
            for j in 0..k {
                let p = t.column(j).dot(&t.column(k));
                let cj = t.column(j).clone_owned();
                t.column_mut(k).axpy(-p, &cj, 1.0);
            }
        }
        let nrm = t.column(k).norm();
        if !(nrm > tol) || !(nrm > 1e-10 * before) {
            return None;
        }
        t.column_mut(k).scale_mut(1.0 / nrm);
    }
    Some(t)
}

/// Leading singular directions of the stencil differences.
#[derive(Clone, Debug)]
pub struct CoarseFrame {
    pub frame: Frame,
    /// Remaining left singular vectors (normal directions), n × (n − d) or fewer.
    pub normals: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    /// True when σ_{d+1}/σ_d exceeds [`GAP_RATIO`] or σ_d vanishes.
    pub unreliable: bool,
}

fn flip_sign(mut v: DMatrix<f64>) -> DMatrix<f64> {
    for c in 0..v.ncols() {
        let mut best = 0usize;
        for r in 0..v.nrows() {
            if v[(r, c)].abs() > v[(best, c)].abs() {
                best = r;
            }
        }
        if v[(best, c)] < 0.0 {
            v.column_mut(c).neg_mut();
        }
    }
    v
}

/// Coarse frame from an SVD of the K columns x_{0,i} − x₀ (`stencil` is K × n).
pub fn coarse_frame_svd(stencil: &DMatrix<f64>, d: usize) -> Result<CoarseFrame> {
    let k = stencil.nrows();
    let n = stencil.ncols();
    if d == 0 || d >= n {
        return invalid(format!("intrinsic dimension {d} must lie in 1..{n}"));
    }
    if k < d + 1 {
        return invalid(format!("stencil of {k} points cannot span {d} dimensions"));
    }
    let diff = DMatrix::from_fn(n, k, |s, i| stencil[(i, s)] - stencil[(0, s)]);
    // Eigen-decomposition of the n × n scatter matrix gives the left singular vectors.
    let scatter = &diff * diff.transpose();
    let eig = scatter.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let sv: Vec<f64> = order
        .iter()
        .map(|&j| eig.eigenvalues[j].max(0.0).sqrt())
        .collect();
    let u = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let u = flip_sign(u);
    let t = gram_schmidt(u.columns(0, d).clone_owned(), 1e-12)
        .ok_or_else(|| Error::RankDeficient {
            cond: f64::INFINITY,
        })?;
    let scale = sv[0].max(f64::MIN_POSITIVE);
    let unreliable = sv[d - 1] <= 1e-12 * scale || sv[d] / sv[d - 1] > GAP_RATIO;
    Ok(CoarseFrame {
        frame: Frame::new(t),
        normals: u.columns(d, n - d).clone_owned(),
        singular_values: sv,
        unreliable,
    })
}

/// Refined frame for a surface in R^3 via a height fit over the coarse plane.
pub fn refine_frame_2d(cloud: &PointCloud, stencils: &Stencils, base: usize, l: usize) -> Result<Frame> {
    if cloud.intrinsic_dim() != 2 || cloud.ambient_dim() != 3 {
        return invalid("height-function refinement needs a surface in R^3");
    }
    let x = stencil_matrix(cloud, stencils.get(base));
    let coarse = coarse_frame_svd(&x, 2)?;
    let t = coarse.frame.t();
    let a = Vector3::new(t[(0, 0)], t[(1, 0)], t[(2, 0)]);
    let b = Vector3::new(t[(0, 1)], t[(1, 1)], t[(2, 1)]);
    let nrm = a.cross(&b);
    let theta = local_coordinates(&x, t);
    let q: Vec<f64> = (0..x.nrows())
        .map(|r| (0..3).map(|s| nrm[s] * (x[(r, s)] - x[(0, s)])).sum())
        .collect();
    let idx = MultiIndexSet::new(2, 0, l);
    let lf = LocalFit::new(theta, idx, WeightScheme::BaseEmphasis)?;
    let c = fit(&lf, &q)?;
    let mut refined = t.clone();
    for k in 0..2 {
        let ak = c[lf.idx.linear(k).unwrap()];
        for s in 0..3 {
            refined[(s, k)] += ak * nrm[s];
        }
    }
    let out = gram_schmidt(refined, 1e-12).ok_or(Error::DegenerateBasis { neighbor: 0 })?;
    Ok(Frame::new(out))
}

/// Refined frame for any d < n: fit each ambient coordinate over the coarse
/// local coordinates and read the linear coefficients.
pub fn refine_frame_general(
    cloud: &PointCloud,
    stencils: &Stencils,
    base: usize,
    l: usize,
) -> Result<Frame> {
    let d = cloud.intrinsic_dim();
    let n = cloud.ambient_dim();
    let x = stencil_matrix(cloud, stencils.get(base));
    let coarse = coarse_frame_svd(&x, d)?;
    let theta = local_coordinates(&x, coarse.frame.t());
    let lf = LocalFit::new(theta, MultiIndexSet::new(d, 0, l), WeightScheme::BaseEmphasis)?;
    let lin: Vec<usize> = (0..d).map(|k| lf.idx.linear(k).unwrap()).collect();
    let mut refined = DMatrix::zeros(n, d);
    let mut y = vec![0.0; x.nrows()];
    for s in 0..n {
        for (r, v) in y.iter_mut().enumerate() {
            *v = x[(r, s)] - x[(0, s)];
        }
        for (k, &j) in lin.iter().enumerate() {
            refined[(s, k)] = lf.phi_dagger.row(j).iter().zip(&y).map(|(a, b)| a * b).sum();
        }
    }
    let out = gram_schmidt(refined, 1e-12).ok_or(Error::DegenerateBasis { neighbor: 0 })?;
    Ok(Frame::new(out))
}

/// How frames are estimated from the raw cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refinement {
    /// Coarse SVD frame only.
    Coarse,
    /// Height-function refinement (surfaces in R^3 only).
    Height,
    /// Per-coordinate graph refinement (any d < n).
    Graph,
    /// Height for surfaces in R^3, graph otherwise.
    Auto,
}

/// Estimate frames at every point using the stencils and fit degree `l`.
pub fn estimate_frames(
    cloud: &PointCloud,
    stencils: &Stencils,
    l: usize,
    how: Refinement,
) -> Result<FrameField> {
    if stencils.len() != cloud.len() {
        return invalid("stencils and cloud differ in length");
    }
    let surface = cloud.intrinsic_dim() == 2 && cloud.ambient_dim() == 3;
    let frames = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let r = match how {
                Refinement::Coarse => {
                    coarse_frame_svd(&stencil_matrix(cloud, stencils.get(i)), cloud.intrinsic_dim())
                        .map(|c| c.frame)
                }
                Refinement::Height => refine_frame_2d(cloud, stencils, i, l),
                Refinement::Graph => refine_frame_general(cloud, stencils, i, l),
                Refinement::Auto if surface => refine_frame_2d(cloud, stencils, i, l),
                Refinement::Auto => refine_frame_general(cloud, stencils, i, l),
            };
            r.map_err(|e| e.at(i))
        })
        .collect::<Result<Vec<_>>>()?;
    FrameField::new(frames)
}

/// Indices of points whose coarse SVD frame is flagged unreliable.
pub fn unreliable_points(cloud: &PointCloud, stencils: &Stencils) -> Vec<usize> {
    (0..cloud.len())
        .into_par_iter()
        .filter(|&i| {
            coarse_frame_svd(&stencil_matrix(cloud, stencils.get(i)), cloud.intrinsic_dim())
                .map(|c| c.unreliable)
                .unwrap_or(true)
        })
        .collect()
}
