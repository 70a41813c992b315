//! Intrinsic formulation: Monge patches, Christoffel derivatives at the base
//! point, local Laplacian weights and their transfer to the global frames.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{stencil_matrix, PointCloud, Stencils};
use crate::gmls::{local_coordinates, monomial_derivative, LocalFit, MultiIndexSet, WeightScheme};
use crate::operators::{BlockOperator, CovariantOperator, LaplacianKind};
use crate::tangent::{Frame, FrameField};

/// How the manifold is represented over the tangent space at the base.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchPath {
    /// Scalar height along the normal (surfaces in R^3).
    Height,
    /// One graph function per ambient coordinate (any d < n, no normals).
    Graph,
}

impl PatchPath {
    pub fn default_for(d: usize, n: usize) -> PatchPath {
        if d == 2 && n == 3 {
            PatchPath::Height
        } else {
            PatchPath::Graph
        }
    }
}

/// Local graph of the manifold over the base tangent plane, with only
/// monomials of degree 2..=l, so the chart has g = I and Γ = 0 at the base.
#[derive(Clone, Debug)]
pub struct MongePatch {
    pub frame: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub idx: MultiIndexSet,
    /// Height path: the unit normal. Graph path: `None`.
    pub normal: Option<[f64; 3]>,
    /// Height path: one coefficient vector a. Graph path: b^s for s = 1..n.
    pub coeffs: Vec<Vec<f64>>,
}

impl MongePatch {
    pub fn dim(&self) -> usize {
        self.frame.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.frame.nrows()
    }

    pub fn path(&self) -> PatchPath {
        if self.normal.is_some() {
            PatchPath::Height
        } else {
            PatchPath::Graph
        }
    }

    /// Hessians of the graph functions at the base (one per height/ambient coordinate).
    pub fn hessians(&self) -> Vec<DMatrix<f64>> {
        let d = self.dim();
        self.coeffs
            .iter()
            .map(|c| {
                let mut h = DMatrix::zeros(d, d);
                for i in 0..d {
                    for k in i..d {
                        let j = self.idx.quadratic(i, k).unwrap();
                        let v = if i == k { 2.0 * c[j] } else { c[j] };
                        h[(i, k)] = v;
                        h[(k, i)] = v;
                    }
                }
                h
            })
            .collect()
    }

    /// Symmetric quadratic coefficient matrices c^s (half the Hessians).
    pub fn quadratic_matrices(&self) -> Vec<DMatrix<f64>> {
        self.hessians().into_iter().map(|h| h * 0.5).collect()
    }

    /// ∂_k of the graph functions at θ: one d-vector per graph function.
    fn graph_gradients(&self, theta: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim();
        self.coeffs
            .iter()
            .map(|c| {
                (0..d)
                    .map(|k| {
                        self.idx
                            .iter()
                            .zip(c)
                            .map(|(a, v)| v * monomial_derivative(theta, a, k))
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// Coordinate tangent vectors ∂_k (columns, n × d) of the patch at θ.
    pub fn tangent_basis(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.ambient_dim();
        let grads = self.graph_gradients(theta);
        let mut out = self.frame.clone();
        match self.normal {
            Some(nv) => {
                for k in 0..d {
                    for s in 0..n {
                        out[(s, k)] += grads[0][k] * nv[s];
                    }
                }
            }
            None => {
                for s in 0..n {
                    for k in 0..d {
                        out[(s, k)] += grads[s][k];
                    }
                }
            }
        }
        out
    }

    /// Metric g = ∂ᵀ∂ of the patch at θ.
    pub fn metric(&self, theta: &[f64]) -> DMatrix<f64> {
        let b = self.tangent_basis(theta);
        b.transpose() * b
    }

    /// Γ^k_{ij} at the base point, indexed [k][i][j] (row-major d³).
    pub fn christoffel_at_base(&self) -> Vec<f64> {
        let d = self.dim();
        let n = self.ambient_dim();
        let hs = self.hessians();
        let mut out = vec![0.0; d * d * d];
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    // Second derivatives of the embedding dotted with ∂_k = t_k.
                    let v: f64 = match self.normal {
                        Some(nv) => (0..n).map(|s| self.frame[(s, k)] * nv[s]).sum::<f64>() * hs[0][(i, j)],
                        None => (0..n).map(|s| self.frame[(s, k)] * hs[s][(i, j)]).sum(),
                    };
                    out[(k * d + i) * d + j] = v;
                }
            }
        }
        out
    }
}

/// Fit the Monge patch with the default path for the dimensions.
pub fn fit_monge_patch(stencil: &DMatrix<f64>, frame: &Frame, l: usize) -> Result<MongePatch> {
    fit_monge_patch_with(stencil, frame, l, PatchPath::default_for(frame.dim(), frame.ambient_dim()))
}

/// Least-squares fit of the height (or ambient graph) over degrees 2..=l.
pub fn fit_monge_patch_with(stencil: &DMatrix<f64>, frame: &Frame, l: usize, path: PatchPath) -> Result<MongePatch> {
    let d = frame.dim();
    let n = frame.ambient_dim();
    if l < 2 {
        return invalid("Monge patch needs degree at least 2");
    }
    if stencil.ncols() != n {
        return invalid("stencil and frame disagree on ambient dimension");
    }
    let t = frame.t().clone();
    let theta = local_coordinates(stencil, &t);
    let idx = MultiIndexSet::new(d, 2, l);
    let fit = LocalFit::new(theta.clone(), idx.clone(), WeightScheme::BaseEmphasis)?;
    let k = stencil.nrows();
    // Normal component of x − x₀ per stencil row.
    let mut normal_part = DMatrix::zeros(k, n);
    for r in 0..k {
        for s in 0..n {
            let mut v = stencil[(r, s)] - stencil[(0, s)];
            for i in 0..d {
                v -= t[(s, i)] * theta[(r, i)];
            }
            normal_part[(r, s)] = v;
        }
    }
    match path {
        PatchPath::Height => {
            let nv = match frame.normal() {
                Some(v) => [v[0], v[1], v[2]],
                None => return invalid("height patch needs a surface in R^3"),
            };
            let q: Vec<f64> = (0..k)
                .map(|r| (0..3).map(|s| nv[s] * (stencil[(r, s)] - stencil[(0, s)])).sum())
                .collect();
            let a = crate::gmls::fit(&fit, &q)?;
            Ok(MongePatch {
                frame: t,
                theta,
                idx,
                normal: Some(nv),
                coeffs: vec![a],
            })
        }
        PatchPath::Graph => {
            let coeffs = (0..n)
                .map(|s| {
                    let col: Vec<f64> = normal_part.column(s).iter().copied().collect();
                    crate::gmls::fit(&fit, &col)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MongePatch {
                frame: t,
                theta,
                idx,
                normal: None,
                coeffs,
            })
        }
    }
}

/// ∂_rΓ^i_{kl} at the base point.
#[derive(Clone, Debug, PartialEq)]
pub struct ChristoffelDerivatives {
    d: usize,
    data: Vec<f64>,
}

impl ChristoffelDerivatives {
    pub fn dim(&self) -> usize {
        self.d
    }

    /// ∂_r Γ^i_{kl}.
    pub fn get(&self, r: usize, i: usize, k: usize, l: usize) -> f64 {
        let d = self.d;
        self.data[((r * d + i) * d + k) * d + l]
    }
}

/// ∂_rΓ^i_{kl} = Σ_s ∂_{ir}p^s ∂_{kl}p^s, valid at the base of a Monge patch.
pub fn christoffel_derivatives(patch: &MongePatch) -> ChristoffelDerivatives {
    christoffel_from_hessians(&patch.hessians(), patch.dim())
}

/// Same contraction for an explicit list of Hessians.
pub fn christoffel_from_hessians(hs: &[DMatrix<f64>], d: usize) -> ChristoffelDerivatives {
    let mut data = vec![0.0; d * d * d * d];
    for r in 0..d {
        for i in 0..d {
            for k in 0..d {
                for l in 0..d {
                    data[((r * d + i) * d + k) * d + l] = hs.iter().map(|h| h[(i, r)] * h[(k, l)]).sum();
                }
            }
        }
    }
    ChristoffelDerivatives { d, data }
}

/// Zeroth-order coupling C with (Δũ)^i ∋ Σ_l C_{il} ũ^l at the base.
pub fn coupling_matrix(kind: LaplacianKind, dg: &ChristoffelDerivatives) -> DMatrix<f64> {
    let d = dg.dim();
    DMatrix::from_fn(d, d, |a, b| {
        (0..d)
            .map(|i| match kind {
                LaplacianKind::Bochner => dg.get(i, a, i, b),
                LaplacianKind::L => dg.get(i, a, i, b) + dg.get(b, a, i, i),
                LaplacianKind::Hodge => 2.0 * dg.get(a, i, i, b) - dg.get(i, i, a, b),
            })
            .sum()
    })
}

/// Monge-frame weights: K blocks of d × d plus the patch bases at each neighbor.
#[derive(Clone, Debug)]
pub struct LocalWeights {
    pub blocks: Vec<DMatrix<f64>>,
    pub bases: Vec<DMatrix<f64>>,
}

/// Coefficient rows A[out][in][α] such that the Laplacian component `out` is
/// Σ_in Σ_α A[out][in][α] b^in_α for the field fit coefficients b.
fn operator_rows(kind: LaplacianKind, idx: &MultiIndexSet, coupling: &DMatrix<f64>) -> Vec<Vec<Vec<f64>>> {
    let d = idx.dim();
    let m = idx.len();
    let mut a = vec![vec![vec![0.0; m]; d]; d];
    let c0 = idx.position(&vec![0u8; d]).expect("field basis must include constants");
    for out in 0..d {
        for k in 0..d {
            let j = idx.quadratic(k, k).expect("field basis must include degree 2");
            a[out][out][j] += 2.0;
        }
        if kind == LaplacianKind::L {
            for i in 0..d {
                let j = idx.quadratic(out, i).unwrap();
                a[out][i][j] += if i == out { 2.0 } else { 1.0 };
            }
        }
        for inp in 0..d {
            a[out][inp][c0] += coupling[(out, inp)];
        }
    }
    a
}

/// Local weights of the chosen Laplacian; `fit` must share the patch's θ.
pub fn laplacian_local_weights(kind: LaplacianKind, patch: &MongePatch, fit: &LocalFit) -> Result<LocalWeights> {
    let d = patch.dim();
    if fit.idx.dim() != d || fit.stencil_size() != patch.theta.nrows() {
        return invalid("field fit does not match the patch");
    }
    if fit.idx.degree_range().0 != 0 || fit.idx.degree_range().1 < 2 {
        return invalid("field fit needs degrees 0..l with l >= 2");
    }
    let coupling = coupling_matrix(kind, &christoffel_derivatives(patch));
    let rows = operator_rows(kind, &fit.idx, &coupling);
    let k = fit.stencil_size();
    let m = fit.idx.len();
    let mut blocks = vec![DMatrix::zeros(d, d); k];
    for out in 0..d {
        for inp in 0..d {
            let row = &rows[out][inp];
            for (j, blk) in blocks.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (al, &r) in row.iter().enumerate().take(m) {
                    if r != 0.0 {
                        acc += r * fit.phi_dagger[(al, j)];
                    }
                }
                blk[(out, inp)] = acc;
            }
        }
    }
    let bases = (0..k)
        .map(|j| {
            let th: Vec<f64> = patch.theta.row(j).iter().copied().collect();
            patch.tangent_basis(&th)
        })
        .collect();
    Ok(LocalWeights { blocks, bases })
}

pub fn bochner_local_weights(patch: &MongePatch, fit: &LocalFit) -> Result<LocalWeights> {
    laplacian_local_weights(LaplacianKind::Bochner, patch, fit)
}

pub fn l_laplacian_local_weights(patch: &MongePatch, fit: &LocalFit) -> Result<LocalWeights> {
    laplacian_local_weights(LaplacianKind::L, patch, fit)
}

pub fn hodge_local_weights(patch: &MongePatch, fit: &LocalFit) -> Result<LocalWeights> {
    laplacian_local_weights(LaplacianKind::Hodge, patch, fit)
}

/// Maps M_j = (∂ᵀ∂)⁻¹∂ᵀT_j taking global coefficients at each neighbor to
/// coefficients in the patch basis ∂ evaluated there.
pub fn neighbor_maps(bases: &[DMatrix<f64>], frames: &[&Frame]) -> Result<Vec<DMatrix<f64>>> {
    if bases.len() != frames.len() {
        return invalid("one frame per stencil point is required");
    }
    bases
        .iter()
        .zip(frames)
        .enumerate()
        .map(|(j, (b, f))| {
            let g = b.transpose() * b;
            let chol = g.clone().cholesky().ok_or(Error::DegenerateBasis { neighbor: j })?;
            let diag_max = (0..g.nrows()).map(|i| g[(i, i)]).fold(0.0, f64::max);
            let det: f64 = chol.l().diagonal().iter().map(|v| v * v).product();
            if !(det > 1e-12 * diag_max.powi(g.nrows() as i32)) {
                return Err(Error::DegenerateBasis { neighbor: j });
            }
            Ok(chol.solve(&(b.transpose() * f.t())))
        })
        .collect()
}

/// Global blocks w^j = w̃^j M_j.
pub fn transform_weights_to_global(local: &LocalWeights, frames: &[&Frame]) -> Result<Vec<DMatrix<f64>>> {
    let maps = neighbor_maps(&local.bases, frames)?;
    Ok(local.blocks.iter().zip(&maps).map(|(w, m)| w * m).collect())
}

/// Degrees used for the manifold patch and for the field fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Degrees {
    pub field: usize,
    pub manifold: usize,
}

impl Degrees {
    pub fn same(l: usize) -> Degrees {
        Degrees { field: l, manifold: l }
    }
}

fn check_inputs(cloud: &PointCloud, frames: &FrameField, stencils: &Stencils) -> Result<()> {
    if frames.len() != cloud.len() || stencils.len() != cloud.len() {
        return invalid("cloud, frames and stencils must have the same length");
    }
    if frames.ambient_dim() != cloud.ambient_dim() || frames.dim() != cloud.intrinsic_dim() {
        return invalid("frames do not match the cloud dimensions");
    }
    Ok(())
}

/// Global weight blocks of one block row.
pub fn intrinsic_row(
    cloud: &PointCloud,
    frames: &FrameField,
    stencil: &[usize],
    kind: LaplacianKind,
    deg: Degrees,
) -> Result<Vec<DMatrix<f64>>> {
    let x = stencil_matrix(cloud, stencil);
    let base = frames.get(stencil[0]);
    let patch = fit_monge_patch(&x, base, deg.manifold)?;
    let fit = LocalFit::new(
        patch.theta.clone(),
        MultiIndexSet::new(base.dim(), 0, deg.field),
        WeightScheme::BaseEmphasis,
    )?;
    let local = laplacian_local_weights(kind, &patch, &fit)?;
    let nb: Vec<&Frame> = stencil.iter().map(|&j| frames.get(j)).collect();
    transform_weights_to_global(&local, &nb)
}

/// Sparse intrinsic Laplacian with one block row per point.
pub fn assemble_intrinsic(
    cloud: &PointCloud,
    frames: &FrameField,
    stencils: &Stencils,
    kind: LaplacianKind,
    deg: Degrees,
) -> Result<BlockOperator> {
    check_inputs(cloud, frames, stencils)?;
    let rows = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let st = stencils.get(i);
            intrinsic_row(cloud, frames, st, kind, deg)
                .map(|w| st.iter().copied().zip(w).collect::<Vec<_>>())
                .map_err(|e| e.at(i))
        })
        .collect::<Result<Vec<_>>>()?;
    BlockOperator::from_block_rows(cloud.len(), cloud.intrinsic_dim(), rows)
}

/// (ũ^k ∂_k ũ^i) at the base from per-component fits of the local components
/// `u_local` (K × d, already in the patch basis at each neighbor).
pub fn covariant_derivative_intrinsic(fit_u: &LocalFit, u_local: &DMatrix<f64>) -> Result<Vec<f64>> {
    let d = fit_u.idx.dim();
    if u_local.nrows() != fit_u.stencil_size() || u_local.ncols() != d {
        return invalid("local field has the wrong shape");
    }
    let c0 = fit_u.idx.position(&vec![0u8; d]).ok_or_else(|| Error::Invalid("fit lacks constants".into()))?;
    let coeffs: Vec<Vec<f64>> = (0..d)
        .map(|c| {
            let col: Vec<f64> = u_local.column(c).iter().copied().collect();
            crate::gmls::fit(fit_u, &col)
        })
        .collect::<Result<_>>()?;
    Ok((0..d)
        .map(|i| {
            (0..d)
                .map(|k| coeffs[k][c0] * coeffs[i][fit_u.idx.linear(k).unwrap()])
                .sum()
        })
        .collect())
}

/// Precomputed intrinsic covariant derivative ∇_u u for a whole cloud.
pub fn assemble_covariant_intrinsic(
    cloud: &PointCloud,
    frames: &FrameField,
    stencils: &Stencils,
    deg: Degrees,
) -> Result<CovariantOperator> {
    check_inputs(cloud, frames, stencils)?;
    let d = cloud.intrinsic_dim();
    let rows = (0..cloud.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<Vec<(usize, DMatrix<f64>)>>> {
            let st = stencils.get(i);
            let x = stencil_matrix(cloud, st);
            let base = frames.get(i);
            let patch = fit_monge_patch(&x, base, deg.manifold).map_err(|e| e.at(i))?;
            let fit = LocalFit::new(patch.theta.clone(), MultiIndexSet::new(d, 0, deg.field), WeightScheme::Uniform)
                .map_err(|e| e.at(i))?;
            let bases: Vec<DMatrix<f64>> = (0..st.len())
                .map(|j| {
                    let th: Vec<f64> = patch.theta.row(j).iter().copied().collect();
                    patch.tangent_basis(&th)
                })
                .collect();
            let nb: Vec<&Frame> = st.iter().map(|&j| frames.get(j)).collect();
            let maps = neighbor_maps(&bases, &nb).map_err(|e| e.at(i))?;
            let c0 = fit.idx.position(&vec![0u8; d]).unwrap();
            let mut out = Vec::with_capacity(d + 1);
            out.push(
                st.iter()
                    .enumerate()
                    .map(|(j, &c)| (c, &maps[j] * fit.phi_dagger[(c0, j)]))
                    .collect(),
            );
            for k in 0..d {
                let lk = fit.idx.linear(k).unwrap();
                out.push(
                    st.iter()
                        .enumerate()
                        .map(|(j, &c)| (c, &maps[j] * fit.phi_dagger[(lk, j)]))
                        .collect(),
                );
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    CovariantOperator::from_rows(cloud.len(), d, rows)
}
