//! Extrinsic formulation: projected ambient derivatives on each stencil,
//! reduced d × d block products, and the covariant derivative.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::geometry::{stencil_matrix, PointCloud, Stencils};
use crate::gmls::{local_coordinates, monomial_derivative, LocalFit, MultiIndexSet, WeightScheme};
use crate::operators::{BlockOperator, CovariantOperator, LaplacianKind};
use crate::tangent::{Frame, FrameField};

/// Stencil differentiation matrices: `g[s]` approximates e_sᵀP∇ and `d[s]`
/// the plain ambient derivative ∂/∂X^s, both K × K.
#[derive(Clone, Debug)]
pub struct StencilDifferentials {
    pub g: Vec<DMatrix<f64>>,
    pub d: Vec<DMatrix<f64>>,
}

/// Ambient gradient of every monomial at every stencil point: [k][α] → n-vector.
fn monomial_gradients(theta: &DMatrix<f64>, idx: &MultiIndexSet, base: &DMatrix<f64>) -> Vec<Vec<Vec<f64>>> {
    let k = theta.nrows();
    let d = theta.ncols();
    let n = base.nrows();
    (0..k)
        .map(|r| {
            let th: Vec<f64> = theta.row(r).iter().copied().collect();
            idx.iter()
                .map(|a| {
                    let mut g = vec![0.0; n];
                    for i in 0..d {
                        let di = monomial_derivative(&th, a, i);
                        if di != 0.0 {
                            for s in 0..n {
                                g[s] += di * base[(s, i)];
                            }
                        }
                    }
                    g
                })
                .collect()
        })
        .collect()
}

fn differentials(
    frames: &[&Frame],
    fit: &LocalFit,
    projected: bool,
) -> Vec<DMatrix<f64>> {
    let base = frames[0].t();
    let n = base.nrows();
    let k = fit.stencil_size();
    let m = fit.idx.len();
    let grads = monomial_gradients(&fit.theta, &fit.idx, base);
    let mut b: Vec<DMatrix<f64>> = vec![DMatrix::zeros(k, m); n];
    for r in 0..k {
        let t = frames[r].t();
        for a in 0..m {
            let g = &grads[r][a];
            if projected {
                // P_r g = T_r (T_rᵀ g)
                let c: Vec<f64> = (0..t.ncols()).map(|i| (0..n).map(|s| t[(s, i)] * g[s]).sum()).collect();
                for (s, bs) in b.iter_mut().enumerate() {
                    bs[(r, a)] = (0..t.ncols()).map(|i| t[(s, i)] * c[i]).sum();
                }
            } else {
                for (s, bs) in b.iter_mut().enumerate() {
                    bs[(r, a)] = g[s];
                }
            }
        }
    }
    b.into_iter().map(|bs| bs * &fit.phi_dagger).collect()
}

/// G_s = B_sΦ† and D_s with B entries from the chain rule through the base
/// frame; `frames[k]` is the frame at stencil point k (base first).
pub fn build_g_matrices(stencil: &DMatrix<f64>, frames: &[&Frame], fit: &LocalFit) -> Result<StencilDifferentials> {
    check_stencil(stencil, frames, fit)?;
    Ok(StencilDifferentials {
        g: differentials(frames, fit, true),
        d: differentials(frames, fit, false),
    })
}

fn check_stencil(stencil: &DMatrix<f64>, frames: &[&Frame], fit: &LocalFit) -> Result<()> {
    if frames.len() != stencil.nrows() || fit.stencil_size() != stencil.nrows() {
        return invalid("stencil, frames and fit disagree on K");
    }
    if frames.iter().any(|f| f.ambient_dim() != stencil.ncols()) {
        return invalid("frames do not match the ambient dimension");
    }
    Ok(())
}

/// Full K × K arrays of d × d blocks: R̂^ℓ, M̂^ℓ (indexed [ℓ][s][t]) and Ĵ ([s][t]).
#[derive(Clone, Debug)]
pub struct ReducedBlocks {
    pub r: Vec<Vec<Vec<DMatrix<f64>>>>,
    pub m: Vec<Vec<Vec<DMatrix<f64>>>>,
    pub j: Vec<Vec<DMatrix<f64>>>,
}

fn frame_products(frames: &[&Frame]) -> Vec<Vec<DMatrix<f64>>> {
    frames
        .iter()
        .map(|a| frames.iter().map(|b| a.t().transpose() * b.t()).collect())
        .collect()
}

/// Column vector (T_sᵀ g) for g ∈ R^n.
fn tt_vec(t: &DMatrix<f64>, g: &[f64]) -> DMatrix<f64> {
    let d = t.ncols();
    DMatrix::from_fn(d, 1, |i, _| (0..g.len()).map(|s| t[(s, i)] * g[s]).sum())
}

fn gvec(diff: &StencilDifferentials, s: usize, t: usize) -> Vec<f64> {
    diff.g.iter().map(|gl| gl[(s, t)]).collect()
}

/// Every reduced block, built directly from the d × d formulas.
pub fn reduced_blocks(diff: &StencilDifferentials, frames: &[&Frame]) -> ReducedBlocks {
    let n = diff.g.len();
    let k = frames.len();
    let tt = frame_products(frames);
    let r = (0..n)
        .map(|l| (0..k).map(|s| (0..k).map(|t| &tt[s][t] * diff.g[l][(s, t)]).collect()).collect())
        .collect();
    let m = (0..n)
        .map(|l| {
            (0..k)
                .map(|s| {
                    (0..k)
                        .map(|t| {
                            let a = tt_vec(frames[s].t(), &gvec(diff, s, t));
                            let row = frames[s].t().row(l) * &tt[s][t];
                            a * row
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let j = (0..k)
        .map(|s| {
            (0..k)
                .map(|t| {
                    let mut acc = DMatrix::zeros(frames[0].dim(), frames[0].dim());
                    for q in 0..k {
                        let a = tt_vec(frames[s].t(), &gvec(diff, s, q));
                        let b = tt_vec(frames[t].t(), &gvec(diff, q, t));
                        acc += a * b.transpose();
                    }
                    acc
                })
                .collect()
        })
        .collect();
    ReducedBlocks { r, m, j }
}

/// First block row of Σ_ℓ R̂(R̂ ± M̂) (+ Ĵ for Hodge) from the full block arrays.
pub fn weights_from_blocks(kind: LaplacianKind, blocks: &ReducedBlocks) -> Vec<DMatrix<f64>> {
    let n = blocks.r.len();
    let k = blocks.j.len();
    let d = blocks.j[0][0].nrows();
    (0..k)
        .map(|t| {
            let mut w = DMatrix::zeros(d, d);
            for l in 0..n {
                for q in 0..k {
                    let right = match kind {
                        LaplacianKind::Bochner => blocks.r[l][q][t].clone(),
                        LaplacianKind::L => &blocks.r[l][q][t] + &blocks.m[l][q][t],
                        LaplacianKind::Hodge => &blocks.r[l][q][t] - &blocks.m[l][q][t],
                    };
                    w += &blocks.r[l][0][q] * right;
                }
            }
            if kind == LaplacianKind::Hodge {
                w += &blocks.j[0][t];
            }
            w
        })
        .collect()
}

/// Base-row weights computed without forming the full block arrays.
pub fn extrinsic_weights(kind: LaplacianKind, g: &[DMatrix<f64>], frames: &[&Frame]) -> Vec<DMatrix<f64>> {
    let k = frames.len();
    let n = g.len();
    let d = frames[0].dim();
    // column-major n × d frames: entry (s, i) at s + i n
    let ts: Vec<&[f64]> = frames.iter().map(|f| f.t().as_slice()).collect();
    // ttv(q, v)[i] = Σ_s T_q(s, i) v[s]
    let ttv = |q: usize, v: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = ts[q][i * n..(i + 1) * n].iter().zip(v).map(|(a, b)| a * b).sum();
        }
    };
    // T_aᵀ T_b, row-major d × d
    let tt = |a: usize, b: usize, out: &mut [f64]| {
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = ts[a][i * n..(i + 1) * n]
                    .iter()
                    .zip(&ts[b][j * n..(j + 1) * n])
                    .map(|(x, y)| x * y)
                    .sum();
            }
        }
    };
    let gs: Vec<&[f64]> = g.iter().map(|m| m.as_slice()).collect();
    let gat = |l: usize, r: usize, t: usize| gs[l][r + t * k];

    let mut w = vec![0.0; k * d * d];
    let (mut g0r, mut grk) = (vec![0.0; n], vec![0.0; n]);
    let (mut c0, mut trt, mut p) = (vec![0.0; d * d], vec![0.0; d * d], vec![0.0; d * d]);
    let (mut br, mut a_rt, mut ca, mut q, mut lhs, mut rhs) =
        (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for r in 0..k {
        for (l, v) in g0r.iter_mut().enumerate() {
            *v = gat(l, 0, r);
        }
        if g0r.iter().all(|v| *v == 0.0) {
            continue;
        }
        tt(0, r, &mut c0);
        ttv(r, &g0r, &mut br);
        ttv(0, &g0r, &mut lhs);
        for t in 0..k {
            for (l, v) in grk.iter_mut().enumerate() {
                *v = gat(l, r, t);
            }
            tt(r, t, &mut trt);
            let dotg: f64 = g0r.iter().zip(&grk).map(|(a, c)| a * c).sum();
            let wt = &mut w[t * d * d..(t + 1) * d * d];
            for i in 0..d {
                for j in 0..d {
                    p[i * d + j] = (0..d).map(|m| c0[i * d + m] * trt[m * d + j]).sum();
                }
            }
            for (x, y) in wt.iter_mut().zip(&p) {
                *x += dotg * y;
            }
            if kind == LaplacianKind::Bochner {
                continue;
            }
            // (T₀ᵀT_r)(T_rᵀ g_rt) (b_rᵀ T_rᵀT_t)
            ttv(r, &grk, &mut a_rt);
            for i in 0..d {
                ca[i] = (0..d).map(|m| c0[i * d + m] * a_rt[m]).sum();
                q[i] = (0..d).map(|m| br[m] * trt[m * d + i]).sum();
            }
            let sign = if kind == LaplacianKind::L { 1.0 } else { -1.0 };
            for i in 0..d {
                for j in 0..d {
                    wt[i * d + j] += sign * ca[i] * q[j];
                }
            }
            if kind == LaplacianKind::Hodge {
                ttv(t, &grk, &mut rhs);
                for i in 0..d {
                    for j in 0..d {
                        wt[i * d + j] += lhs[i] * rhs[j];
                    }
                }
            }
        }
    }
    w.chunks(d * d).map(|c| DMatrix::from_row_slice(d, d, c)).collect()
}

/// Tangential differentials H_j = C_jΦ† with C_j[r, α] = t_j(x_r)·∇mono_α(x_r),
/// so that the projected differential at stencil point r is g_{rt} = T_r h_{rt}.
fn tangential_differentials(frames: &[&Frame], fit: &LocalFit) -> Vec<DMatrix<f64>> {
    let base = frames[0].t();
    let (n, d) = (base.nrows(), base.ncols());
    let k = fit.stencil_size();
    let m = fit.idx.len();
    let grads = monomial_gradients(&fit.theta, &fit.idx, base);
    let mut c: Vec<DMatrix<f64>> = vec![DMatrix::zeros(k, m); d];
    for r in 0..k {
        let t = frames[r].t();
        for a in 0..m {
            let g = &grads[r][a];
            for (j, cj) in c.iter_mut().enumerate() {
                cj[(r, a)] = (0..n).map(|s| t[(s, j)] * g[s]).sum();
            }
        }
    }
    c.into_iter().map(|cj| cj * &fit.phi_dagger).collect()
}

/// Base-row weights from the tangential differentials; every product is d × d.
fn reduced_weights(kind: LaplacianKind, h: &[DMatrix<f64>], frames: &[&Frame]) -> Vec<DMatrix<f64>> {
    let k = frames.len();
    let d = h.len();
    let n = frames[0].ambient_dim();
    let mut all = DMatrix::zeros(n, k * d);
    for (r, f) in frames.iter().enumerate() {
        all.columns_mut(r * d, d).copy_from(f.t());
    }
    let gram = all.transpose() * &all;
    let tt = |a: usize, b: usize, i: usize, j: usize| gram[(a * d + i, b * d + j)];
    let hv = |r: usize, t: usize, j: usize| h[j][(r, t)];

    let mut w = vec![0.0; k * d * d];
    let (mut h0r, mut b, mut ca, mut q, mut p) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d * d]);
    let mut c0h = vec![0.0; d];
    for r in 0..k {
        for (j, v) in h0r.iter_mut().enumerate() {
            *v = hv(0, r, j);
        }
        if h0r.iter().all(|v| *v == 0.0) {
            continue;
        }
        // c0h = C₀ᵣᵀ h₀ᵣ = T_rᵀ g₀ᵣ
        for (i, v) in c0h.iter_mut().enumerate() {
            *v = (0..d).map(|m| tt(0, r, m, i) * h0r[m]).sum();
        }
        b.copy_from_slice(&c0h);
        for t in 0..k {
            // g₀ᵣ·g_rt = (T_rᵀg₀ᵣ)·h_rt
            let dotg: f64 = (0..d).map(|j| c0h[j] * hv(r, t, j)).sum();
            for i in 0..d {
                for j in 0..d {
                    p[i * d + j] = (0..d).map(|m| tt(0, r, i, m) * tt(r, t, m, j)).sum();
                }
            }
            let wt = &mut w[t * d * d..(t + 1) * d * d];
            for (x, y) in wt.iter_mut().zip(&p) {
                *x += dotg * y;
            }
            if kind == LaplacianKind::Bochner {
                continue;
            }
            for i in 0..d {
                ca[i] = (0..d).map(|m| tt(0, r, i, m) * hv(r, t, m)).sum();
                q[i] = (0..d).map(|m| b[m] * tt(r, t, m, i)).sum();
            }
            let sign = if kind == LaplacianKind::L { 1.0 } else { -1.0 };
            for i in 0..d {
                for j in 0..d {
                    wt[i * d + j] += sign * ca[i] * q[j];
                }
            }
            if kind == LaplacianKind::Hodge {
                // (T₀ᵀg₀ᵣ)(T_tᵀg_rt)ᵀ with T₀ᵀg₀ᵣ = h₀ᵣ
                for j in 0..d {
                    let rhs: f64 = (0..d).map(|m| tt(t, r, j, m) * hv(r, t, m)).sum();
                    for i in 0..d {
                        wt[i * d + j] += h0r[i] * rhs;
                    }
                }
            }
        }
    }
    w.chunks(d * d).map(|c| DMatrix::from_row_slice(d, d, c)).collect()
}

pub fn bochner_weights_extrinsic(blocks: &ReducedBlocks) -> Vec<DMatrix<f64>> {
    weights_from_blocks(LaplacianKind::Bochner, blocks)
}

pub fn l_weights_extrinsic(blocks: &ReducedBlocks) -> Vec<DMatrix<f64>> {
    weights_from_blocks(LaplacianKind::L, blocks)
}

pub fn hodge_weights_extrinsic(blocks: &ReducedBlocks) -> Vec<DMatrix<f64>> {
    weights_from_blocks(LaplacianKind::Hodge, blocks)
}

/// Global weight blocks of one block row.
pub fn extrinsic_row(
    cloud: &PointCloud,
    frames: &FrameField,
    stencil: &[usize],
    kind: LaplacianKind,
    l: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let x = stencil_matrix(cloud, stencil);
    let nb: Vec<&Frame> = stencil.iter().map(|&j| frames.get(j)).collect();
    let theta = local_coordinates(&x, nb[0].t());
    let fit = LocalFit::new(theta, MultiIndexSet::new(nb[0].dim(), 0, l), WeightScheme::BaseEmphasis)?;
    let h = tangential_differentials(&nb, &fit);
    Ok(reduced_weights(kind, &h, &nb))
}

/// Sparse extrinsic Laplacian with one block row per point.
pub fn assemble_extrinsic(
    cloud: &PointCloud,
    frames: &FrameField,
    stencils: &Stencils,
    kind: LaplacianKind,
    l: usize,
) -> Result<BlockOperator> {
    if frames.len() != cloud.len() || stencils.len() != cloud.len() {
        return invalid("cloud, frames and stencils must have the same length");
    }
    let rows = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let st = stencils.get(i);
            extrinsic_row(cloud, frames, st, kind, l)
                .map(|w| st.iter().copied().zip(w).collect::<Vec<_>>())
                .map_err(|e| e.at(i))
        })
        .collect::<Result<Vec<_>>>()?;
    BlockOperator::from_block_rows(cloud.len(), cloud.intrinsic_dim(), rows)
}

/// T₀ᵀ(∇_U U)(x₀) with U = T u at each stencil point; `u_stencil` is K × d
/// in the global frames and `diff.d` must come from a Uniform-weight fit.
pub fn covariant_derivative_extrinsic(
    diff: &StencilDifferentials,
    frames: &[&Frame],
    u_stencil: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let k = frames.len();
    let n = diff.d.len();
    if u_stencil.nrows() != k || u_stencil.ncols() != frames[0].dim() {
        return invalid("stencil field has the wrong shape");
    }
    let amb: Vec<Vec<f64>> = (0..k)
        .map(|r| {
            let u: Vec<f64> = u_stencil.row(r).iter().copied().collect();
            frames[r].to_ambient(&u)
        })
        .collect();
    // grad[a][s] = Σ_k D_s[0,k] U_k^a
    let mut out = vec![0.0; n];
    for s in 0..n {
        for a in 0..n {
            let gas: f64 = (0..k).map(|r| diff.d[s][(0, r)] * amb[r][a]).sum();
            out[a] += gas * amb[0][s];
        }
    }
    Ok(frames[0].to_local(&out))
}

/// Precomputed extrinsic ∇_u u for a whole cloud (Uniform-weight fits of degree `l`).
pub fn assemble_covariant_extrinsic(
    cloud: &PointCloud,
    frames: &FrameField,
    stencils: &Stencils,
    l: usize,
) -> Result<CovariantOperator> {
    if frames.len() != cloud.len() || stencils.len() != cloud.len() {
        return invalid("cloud, frames and stencils must have the same length");
    }
    let d = cloud.intrinsic_dim();
    let n = cloud.ambient_dim();
    let rows = (0..cloud.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<Vec<(usize, DMatrix<f64>)>>> {
            let st = stencils.get(i);
            let x = stencil_matrix(cloud, st);
            let nb: Vec<&Frame> = st.iter().map(|&j| frames.get(j)).collect();
            let theta = local_coordinates(&x, nb[0].t());
            let fit = LocalFit::new(theta, MultiIndexSet::new(d, 0, l), WeightScheme::Uniform).map_err(|e| e.at(i))?;
            let dm = differentials(&nb, &fit, false);
            let t0 = nb[0].t();
            let mut out = Vec::with_capacity(d + 1);
            out.push(vec![(i, DMatrix::identity(d, d))]);
            for c in 0..d {
                out.push(
                    st.iter()
                        .enumerate()
                        .map(|(r, &col)| {
                            let w: f64 = (0..n).map(|s| t0[(s, c)] * dm[s][(0, r)]).sum();
                            (col, (t0.transpose() * nb[r].t()) * w)
                        })
                        .collect(),
                );
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    CovariantOperator::from_rows(cloud.len(), d, rows)
}
