//! Oracles and invariant checks shared by the property suite and the
//! acceptance run. Every check returns `Err(description)` on violation.

#![allow(dead_code)]

use std::sync::OnceLock;

use nalgebra::DMatrix;

use gmls_vec::extrinsic::{assemble_extrinsic, extrinsic_row};
use gmls_vec::geometry::{analytic_frames, sample_manifold, stencil_matrix, NeighborIndex, PointCloud, Stencils};
use gmls_vec::gmls::{self, local_coordinates, monomial, monomial_derivative, LocalFit, MultiIndexSet, WeightScheme};
use gmls_vec::harness::{fit_slope, ErrorReport, ReportRow};
use gmls_vec::intrinsic::{
    assemble_intrinsic, christoffel_derivatives, coupling_matrix, fit_monge_patch_with, intrinsic_row, Degrees,
    PatchPath,
};
use gmls_vec::operators::{BlockOperator, LaplacianKind};
use gmls_vec::tangent::{estimate_frames, Frame, FrameField, Refinement};
use gmls_vec::Manifold;

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

pub struct Setup {
    pub cloud: PointCloud,
    pub stencils: Stencils,
    pub exact: FrameField,
    pub estimated: FrameField,
}

fn setup(m: Manifold, n: usize, k: usize, l: usize) -> Setup {
    let cloud = sample_manifold(m, n, 7).unwrap();
    let stencils = Stencils::build(&NeighborIndex::build(&cloud), k).unwrap();
    let exact = analytic_frames(&cloud).unwrap();
    let estimated = estimate_frames(&cloud, &stencils, l, Refinement::Auto).unwrap();
    Setup {
        cloud,
        stencils,
        exact,
        estimated,
    }
}

pub fn sphere() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| setup(Manifold::UnitSphere, 400, 20, 3))
}

pub fn torus() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| setup(Manifold::torus3(2.0, 1.0).unwrap(), 600, 20, 3))
}

pub fn torus9() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| setup(Manifold::torus9(2.0).unwrap(), 600, 20, 3))
}

pub fn flat() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| setup(Manifold::FlatTorus12, 1500, 20, 2))
}

pub fn rbc() -> &'static Setup {
    static S: OnceLock<Setup> = OnceLock::new();
    S.get_or_init(|| setup(Manifold::RedBloodCell, 800, 20, 3))
}

/// Sphere, torus, 9D torus, flat 3-torus.
pub fn pick(which: usize) -> &'static Setup {
    match which % 4 {
        0 => sphere(),
        1 => torus(),
        2 => torus9(),
        _ => flat(),
    }
}

/// Surfaces in R^3: sphere, torus, red blood cell.
pub fn surface(which: usize) -> &'static Setup {
    match which % 3 {
        0 => sphere(),
        1 => torus(),
        _ => rbc(),
    }
}

pub fn kind_of(i: usize) -> LaplacianKind {
    [LaplacianKind::Bochner, LaplacianKind::L, LaplacianKind::Hodge][i % 3]
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Orthogonal d × d matrix from a raw vector (QR of the reshaped entries),
/// with a sign flip of the first column when `reflect`.
fn orthogonal(d: usize, raw: &[f64], reflect: bool) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |i, j| raw[i * d + j] + if i == j { 2.0 } else { 0.0 });
    let mut q = a.qr().q();
    if reflect {
        for i in 0..d {
            q[(i, 0)] = -q[(i, 0)];
        }
    }
    q
}

/// Weighted least squares by SVD: minimizes Σ w_r (Φc − y)_r².
fn weighted_lsq(phi: &DMatrix<f64>, w: &[f64], y: &[f64]) -> Vec<f64> {
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let a = DMatrix::from_fn(phi.nrows(), phi.ncols(), |r, c| sw[r] * phi[(r, c)]);
    let b = DMatrix::from_fn(y.len(), 1, |r, _| sw[r] * y[r]);
    let x = a.svd(true, true).solve(&b, 1e-14).unwrap();
    x.iter().copied().collect()
}

// ---------------------------------------------------------------- GMLS

/// Fit of an exact polynomial of degree ≤ l returns its coefficients, and the
/// derivative weights return its derivatives at the base. `pts` needs 180
/// entries in [−1, 1], `coef` 35.
pub fn polynomial_reproduction(d: usize, l: usize, extra: usize, h: f64, pts: &[f64], coef: &[f64], uniform: bool) -> Check {
    let idx = MultiIndexSet::new(d, 0, l);
    let m = idx.len();
    let k = m + 5 + extra;
    let mut theta = DMatrix::from_fn(k, d, |r, i| h * pts[r * d + i]);
    for i in 0..d {
        theta[(0, i)] = 0.0;
    }
    let scheme = if uniform { WeightScheme::Uniform } else { WeightScheme::BaseEmphasis };
    let fit = LocalFit::new(theta.clone(), idx.clone(), scheme).map_err(|e| e.to_string())?;
    let c = &coef[..m];
    let vals: Vec<f64> = (0..k)
        .map(|r| {
            let th: Vec<f64> = theta.row(r).iter().copied().collect();
            idx.iter().zip(c).map(|(a, v)| v * monomial(&th, a)).sum()
        })
        .collect();
    let got = gmls::fit(&fit, &vals).map_err(|e| e.to_string())?;
    for (j, a) in idx.iter().enumerate() {
        // accuracy of a degree-|α| coefficient scales like h^-|α|
        let s = h.powi(a.iter().map(|&e| e as i32).sum());
        ensure!((got[j] - c[j]).abs() * s <= 1e-8, "coefficient {a:?}: {} vs {}", got[j], c[j]);
        let f: f64 = a.iter().map(|&e| (1..=e as u32).product::<u32>() as f64).product();
        let w = fit.derivative_weights(a).map_err(|e| e.to_string())?;
        let dv: f64 = w.iter().zip(&vals).map(|(a, b)| a * b).sum();
        ensure!((dv - f * c[j]).abs() * s <= 1e-8, "derivative {a:?}: {dv} vs {}", f * c[j]);
    }
    Ok(())
}

// ---------------------------------------------------------------- Monge patches

/// g = I and Γ = 0 at the base of every fitted Monge patch.
pub fn chart_is_normal_at_base(which: usize, point: usize, l: usize, est: bool) -> Check {
    let s = pick(which);
    let frames = if est { &s.estimated } else { &s.exact };
    let st = s.stencils.get(point % s.cloud.len());
    let x = stencil_matrix(&s.cloud, st);
    let f = frames.get(st[0]);
    let paths: &[PatchPath] = if f.normal().is_some() {
        &[PatchPath::Height, PatchPath::Graph]
    } else {
        &[PatchPath::Graph]
    };
    let l = if s.cloud.intrinsic_dim() == 3 { 2 } else { l };
    for &path in paths {
        let patch = fit_monge_patch_with(&x, f, l, path).map_err(|e| e.to_string())?;
        let d = patch.dim();
        let g = patch.metric(&vec![0.0; d]);
        let dev = (g - DMatrix::<f64>::identity(d, d)).amax();
        ensure!(dev <= 1e-12, "{path:?}: |g − I| = {dev:e}");
        let gamma = patch.christoffel_at_base().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        ensure!(gamma <= 1e-12, "{path:?}: |Γ| = {gamma:e}");
    }
    Ok(())
}

/// ∂_rΓ^i_{kl} from a height function fitted here along the explicit normal.
fn normal_oracle(x: &DMatrix<f64>, f: &Frame, l: usize) -> Vec<f64> {
    let t = f.t();
    let nv = f.normal().unwrap();
    let k = x.nrows();
    let d = 2;
    let theta = DMatrix::from_fn(k, d, |r, i| (0..3).map(|s| t[(s, i)] * (x[(r, s)] - x[(0, s)])).sum::<f64>());
    let q: Vec<f64> = (0..k).map(|r| (0..3).map(|s| nv[s] * (x[(r, s)] - x[(0, s)])).sum()).collect();
    let mut alphas = Vec::new();
    for deg in 2..=l {
        for a in (0..=deg).rev() {
            alphas.push([a as u8, (deg - a) as u8]);
        }
    }
    let phi = DMatrix::from_fn(k, alphas.len(), |r, j| {
        theta[(r, 0)].powi(alphas[j][0] as i32) * theta[(r, 1)].powi(alphas[j][1] as i32)
    });
    let mut w = vec![1.0 / k as f64; k];
    w[0] = 1.0;
    let c = weighted_lsq(&phi, &w, &q);
    let coef = |a: [u8; 2]| c[alphas.iter().position(|b| *b == a).unwrap()];
    let hess = [[2.0 * coef([2, 0]), coef([1, 1])], [coef([1, 1]), 2.0 * coef([0, 2])]];
    let mut out = Vec::new();
    for r in 0..d {
        for i in 0..d {
            for kk in 0..d {
                for ll in 0..d {
                    out.push(hess[i][r] * hess[kk][ll]);
                }
            }
        }
    }
    out
}

/// The normal-free graph patch and the height patch both agree with the
/// explicit-normal oracle.
pub fn graph_matches_explicit_normal(which: usize, point: usize, l: usize) -> Check {
    let s = surface(which);
    let st = s.stencils.get(point % s.cloud.len());
    let x = stencil_matrix(&s.cloud, st);
    let f = s.estimated.get(st[0]);
    let fit = |p| fit_monge_patch_with(&x, f, l, p).map(|p| christoffel_derivatives(&p)).map_err(|e| e.to_string());
    let (graph, height) = (fit(PatchPath::Graph)?, fit(PatchPath::Height)?);
    let oracle = normal_oracle(&x, f, l);
    let scale = oracle.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut c = 0;
    for r in 0..2 {
        for i in 0..2 {
            for k in 0..2 {
                for ll in 0..2 {
                    let (g, h, o) = (graph.get(r, i, k, ll), height.get(r, i, k, ll), oracle[c]);
                    ensure!((g - o).abs() <= 1e-8 * scale, "graph {g} vs oracle {o}");
                    ensure!((h - o).abs() <= 1e-8 * scale, "height {h} vs oracle {o}");
                    c += 1;
                }
            }
        }
    }
    Ok(())
}

/// Hodge minus Bochner coupling equals −Ric from the Gauss equation, and
/// −I on the unit sphere. `offs` holds 60 entries in [−1, 1].
pub fn weitzenbock_on_sphere(phi: f64, lam: f64, offs: &[f64], h: f64, graph: bool) -> Check {
    let m = Manifold::UnitSphere;
    let base = [phi, lam];
    let mut rows = vec![m.point(&base)];
    for c in offs.chunks(2) {
        rows.push(m.point(&[phi + h * c[0], lam + h * c[1] / phi.sin()]));
    }
    let x = DMatrix::from_fn(rows.len(), 3, |r, s| rows[r][s]);
    let frame = m.analytic_frame(&base).map_err(|e| e.to_string())?;
    let path = if graph { PatchPath::Graph } else { PatchPath::Height };
    let patch = fit_monge_patch_with(&x, &frame, 4, path).map_err(|e| e.to_string())?;
    let dg = christoffel_derivatives(&patch);
    let diff = coupling_matrix(LaplacianKind::Hodge, &dg) - coupling_matrix(LaplacianKind::Bochner, &dg);
    let hs = patch.hessians();
    let ric = DMatrix::from_fn(2, 2, |a, b| {
        hs.iter()
            .map(|hh| (0..2).map(|i| hh[(i, i)] * hh[(a, b)] - hh[(a, i)] * hh[(i, b)]).sum::<f64>())
            .sum()
    });
    let e = (&diff + &ric).amax();
    ensure!(e <= 1e-12 * (1.0 + max_abs(&ric)), "Hodge − Bochner + Ric = {e:e}");
    let e = (&diff + DMatrix::<f64>::identity(2, 2)).amax();
    ensure!(e <= 1e-2, "Hodge − Bochner + I = {e:e}");
    Ok(())
}

// ---------------------------------------------------------------- extrinsic

/// First block row of the extrinsic Laplacian from full nK × nK ambient
/// matrices: T̂ᵀ(Σ_ℓ 𝔾_ℓ P (𝔾_ℓ ± 𝕄_ℓ) [+ 𝕁]) T̂.
pub fn dense_extrinsic_row(s: &Setup, frames: &FrameField, point: usize, kind: LaplacianKind, l: usize) -> Vec<DMatrix<f64>> {
    let st = s.stencils.get(point);
    let x = stencil_matrix(&s.cloud, st);
    let fr: Vec<&Frame> = st.iter().map(|&j| frames.get(j)).collect();
    let (k, n, d) = (st.len(), fr[0].ambient_dim(), fr[0].dim());
    let t0 = fr[0].t();
    let theta = local_coordinates(&x, t0);
    let idx = MultiIndexSet::new(d, 0, l);
    let fit = LocalFit::new(theta.clone(), idx.clone(), WeightScheme::BaseEmphasis).unwrap();
    let proj: Vec<DMatrix<f64>> = fr.iter().map(|f| f.t() * f.t().transpose()).collect();
    // B_s[r, α] = (P_r ∇_x θ^α(x_r))_s, then G_s = B_s Φ†
    let mut b = vec![DMatrix::zeros(k, idx.len()); n];
    for r in 0..k {
        let th: Vec<f64> = theta.row(r).iter().copied().collect();
        for (a, alpha) in idx.iter().enumerate() {
            let mut grad = DMatrix::zeros(n, 1);
            for i in 0..d {
                grad += t0.column(i) * monomial_derivative(&th, alpha, i);
            }
            let pg = &proj[r] * grad;
            for sdim in 0..n {
                b[sdim][(r, a)] = pg[(sdim, 0)];
            }
        }
    }
    let g: Vec<DMatrix<f64>> = b.iter().map(|bs| bs * &fit.phi_dagger).collect();
    let nk = n * k;
    let mut big_t = DMatrix::zeros(nk, d * k);
    let mut big_p = DMatrix::zeros(nk, nk);
    for r in 0..k {
        big_t.view_mut((r * n, r * d), (n, d)).copy_from(fr[r].t());
        big_p.view_mut((r * n, r * n), (n, n)).copy_from(&proj[r]);
    }
    let gvec = |q: usize, t: usize| DMatrix::from_fn(n, 1, |sdim, _| g[sdim][(q, t)]);
    let mut total = DMatrix::zeros(nk, nk);
    for ll in 0..n {
        let kron = DMatrix::from_fn(nk, nk, |a, c| if a % n == c % n { g[ll][(a / n, c / n)] } else { 0.0 });
        let mut right = kron.clone();
        if kind != LaplacianKind::Bochner {
            let sign = if kind == LaplacianKind::L { 1.0 } else { -1.0 };
            for q in 0..k {
                for t in 0..k {
                    let blk = &proj[q] * gvec(q, t) * proj[q].row(ll);
                    let mut v = right.view_mut((q * n, t * n), (n, n));
                    v += blk * sign;
                }
            }
        }
        total += &kron * &big_p * right;
    }
    if kind == LaplacianKind::Hodge {
        for sp in 0..k {
            for t in 0..k {
                let mut acc = DMatrix::zeros(n, n);
                for q in 0..k {
                    acc += gvec(sp, q) * gvec(q, t).transpose();
                }
                let mut v = total.view_mut((sp * n, t * n), (n, n));
                v += acc;
            }
        }
    }
    let w = big_t.transpose() * total * big_t;
    (0..k).map(|t| w.view((0, t * d), (d, d)).into_owned()).collect()
}

/// The library's reduced block row equals the dense ambient oracle (K ≤ 20).
pub fn reduced_matches_dense(which: usize, point: usize, kind: LaplacianKind, l: usize, est: bool) -> Check {
    let s = pick(which);
    let point = point % s.cloud.len();
    let l = if s.cloud.intrinsic_dim() == 3 { 2 } else { l };
    let frames = if est { &s.estimated } else { &s.exact };
    let st = s.stencils.get(point);
    ensure!(st.len() <= 20, "stencil of {} points", st.len());
    let fast = extrinsic_row(&s.cloud, frames, st, kind, l).map_err(|e| e.to_string())?;
    let dense = dense_extrinsic_row(s, frames, point, kind, l);
    let scale = dense.iter().map(max_abs).fold(1.0, f64::max);
    for (a, b) in fast.iter().zip(&dense) {
        let e = (a - b).amax();
        ensure!(e <= 1e-10 * scale, "block differs by {e:e} (scale {scale:e})");
    }
    Ok(())
}

// ---------------------------------------------------------------- frames

/// P² = P, P = Pᵀ and TᵀT = I for exact and estimated frames.
pub fn frame_is_orthonormal(which: usize, point: usize, est: bool) -> Check {
    let s = if which % 5 == 4 { rbc() } else { pick(which) };
    let point = point % s.cloud.len();
    let f = if est { s.estimated.get(point) } else { s.exact.get(point) };
    let p = f.projection();
    let e = (&p * &p - &p).amax();
    ensure!(e <= 1e-10, "|P² − P| = {e:e}");
    let e = (&p - p.transpose()).amax();
    ensure!(e <= 1e-10, "|P − Pᵀ| = {e:e}");
    let d = f.dim();
    let e = (f.t().transpose() * f.t() - DMatrix::<f64>::identity(d, d)).amax();
    ensure!(e <= 1e-10, "|TᵀT − I| = {e:e}");
    Ok(())
}

/// Re-basing every frame by its own orthogonal matrix leaves the ambient
/// weights T_i W_ij T_jᵀ unchanged. `raw` holds 9 entries.
pub fn rotation_invariance(which: usize, point: usize, kind: LaplacianKind, intrinsic: bool, raw: &[f64], reflect: bool) -> Check {
    let s = pick(which);
    let (d, l) = if s.cloud.intrinsic_dim() == 3 { (3, 2) } else { (2, 3) };
    let st = s.stencils.get(point % s.cloud.len());
    let rot: Vec<Frame> = s
        .estimated
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let shifted: Vec<f64> = raw.iter().map(|v| v + 0.1 * (i % 7) as f64).collect();
            f.rotated(&orthogonal(d, &shifted, reflect && i % 2 == 0))
        })
        .collect();
    let rot = FrameField::new(rot).map_err(|e| e.to_string())?;
    let row = |frames: &FrameField| {
        if intrinsic {
            intrinsic_row(&s.cloud, frames, st, kind, Degrees::same(l))
        } else {
            extrinsic_row(&s.cloud, frames, st, kind, l)
        }
        .map_err(|e| e.to_string())
    };
    let (a, b) = (row(&s.estimated)?, row(&rot)?);
    let scale = a.iter().map(max_abs).fold(1.0, f64::max);
    for (t, (wa, wb)) in a.iter().zip(&b).enumerate() {
        let j = st[t];
        let amb_a = s.estimated.get(st[0]).t() * wa * s.estimated.get(j).t().transpose();
        let amb_b = rot.get(st[0]).t() * wb * rot.get(j).t().transpose();
        let e = (amb_a - amb_b).amax();
        ensure!(e <= 1e-10 * scale, "ambient block {t} moved by {e:e}");
    }
    Ok(())
}

// ---------------------------------------------------------------- operators

/// Intrinsic Hodge and extrinsic L on a 250-point sphere (dN = 500).
pub fn small_operators() -> &'static Vec<BlockOperator> {
    static OPS: OnceLock<Vec<BlockOperator>> = OnceLock::new();
    OPS.get_or_init(|| {
        let cloud = sample_manifold(Manifold::UnitSphere, 250, 3).unwrap();
        let st = Stencils::build(&NeighborIndex::build(&cloud), 20).unwrap();
        let frames = analytic_frames(&cloud).unwrap();
        vec![
            assemble_intrinsic(&cloud, &frames, &st, LaplacianKind::Hodge, Degrees::same(3)).unwrap(),
            assemble_extrinsic(&cloud, &frames, &st, LaplacianKind::L, 3).unwrap(),
        ]
    })
}

/// Block-sparse apply agrees with a dense matrix built from the triplets.
pub fn apply_matches_dense(which: usize, x: &[f64]) -> Check {
    let op = &small_operators()[which % 2];
    let n = op.dim();
    ensure!(n <= 500 && x.len() >= n, "dN = {n}");
    let mut dense = DMatrix::<f64>::zeros(n, n);
    for (r, c, v) in op.triplets() {
        dense[(r, c)] += v;
    }
    let want = &dense * DMatrix::from_column_slice(n, 1, &x[..n]);
    let got = op.apply(&x[..n]).map_err(|e| e.to_string())?;
    let scale = want.amax().max(1.0);
    for (g, w) in got.iter().zip(want.iter()) {
        ensure!((g - w).abs() <= 1e-12 * scale, "apply {g} vs dense {w}");
    }
    Ok(())
}

// ---------------------------------------------------------------- reporting

pub fn report_round_trip(rows: Vec<ReportRow>) -> Check {
    let r = ErrorReport {
        rows,
        failures: Vec::new(),
    };
    let text = r.to_csv().map_err(|e| e.to_string())?;
    let back = ErrorReport::from_csv(&text).map_err(|e| e.to_string())?;
    ensure!(back == r, "report changed in a CSV round trip");
    Ok(())
}

/// Synthetic C·N^−p data gives slope −p.
pub fn slope_recovers_power_law(p: f64, c: f64, n0: f64, count: usize) -> Check {
    let ns: Vec<f64> = (0..count).map(|i| n0 * 2f64.powi(i as i32)).collect();
    let errs: Vec<f64> = ns.iter().map(|n| c * n.powf(-p)).collect();
    let fit = fit_slope(&ns, &errs).ok_or("no fit")?;
    ensure!((fit.slope + p).abs() <= 1e-6, "slope {} for p = {p}", fit.slope);
    Ok(())
}
