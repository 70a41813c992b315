//! Exact Riemannian quantities on the parametrized manifolds, used as ground
//! truth for manufactured solutions.
//!
//! Everything is computed in the chart: metric from the embedding jets,
//! Christoffel symbols and their first derivatives, Ricci tensor, and the
//! three vector Laplacians of a field given by contravariant components.

use crate::error::{invalid, Result};
use crate::geometry::{Manifold, PointCloud};
use crate::jet::{Jet, Scalar};
use crate::operators::LaplacianKind;

/// Manufactured tangent fields on the test manifolds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Field {
    Zero,
    /// amp·(sinθ sinφ ∂θ + sinθ cosφ ∂φ) on the tori.
    TorusSinSin { amp: f64 },
    /// 0.05 sin2θ sin3φ ∂θ + 0.05 sinθ cosφ ∂φ on the tori.
    TorusMixed,
    /// sinφ₁ sinφ₂ ∂₁ + sinφ₂ sinφ₃ ∂₂ + sinφ₃ cosφ₁ ∂₃ on the flat torus.
    FlatTorus,
    /// Tangent field with ambient values (x − x³, −x²y, −x²z) on the unit sphere.
    SphereCubic,
    /// Tangential part of the position vector.
    PositionTangent,
    /// Coordinate field ∂_a.
    Coordinate(usize),
}

impl std::str::FromStr for Field {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" => Ok(Field::Zero),
            "torus_sinsin" => Ok(Field::TorusSinSin { amp: 1.0 }),
            "torus_burgers" => Ok(Field::TorusSinSin { amp: 0.05 }),
            "torus_mixed" => Ok(Field::TorusMixed),
            "flat_torus" => Ok(Field::FlatTorus),
            "sphere_cubic" => Ok(Field::SphereCubic),
            "position" => Ok(Field::PositionTangent),
            o => invalid(format!("unknown field '{o}'")),
        }
    }
}

fn inverse<S: Scalar>(g: &[Vec<S>]) -> Vec<Vec<S>> {
    let d = g.len();
    match d {
        1 => vec![vec![g[0][0].recip()]],
        2 => {
            let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
            let r = det.recip();
            vec![vec![g[1][1] * r, -g[0][1] * r], vec![-g[1][0] * r, g[0][0] * r]]
        }
        3 => {
            let c = |i: usize, j: usize| {
                let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
                let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
                g[i1][j1] * g[i2][j2] - g[i1][j2] * g[i2][j1]
            };
            let det = g[0][0] * c(0, 0) + g[0][1] * c(0, 1) + g[0][2] * c(0, 2);
            let r = det.recip();
            (0..3).map(|i| (0..3).map(|j| c(j, i) * r).collect()).collect()
        }
        _ => panic!("metric inverse implemented for d <= 3"),
    }
}

impl Field {
    /// Contravariant components u^a as jets at the parameter point `p`.
    pub fn components(&self, m: &Manifold, p: &[Jet]) -> Vec<Jet> {
        let d = m.intrinsic_dim();
        match self {
            Field::Zero => vec![Jet::constant(0.0); d],
            Field::Coordinate(a) => (0..d).map(|i| Jet::constant(if i == *a { 1.0 } else { 0.0 })).collect(),
            Field::TorusSinSin { amp } => {
                let st = p[0].sin();
                vec![(st * p[1].sin()).scale(*amp), (st * p[1].cos()).scale(*amp)]
            }
            Field::TorusMixed => vec![
                (p[0].scale(2.0).sin() * p[1].scale(3.0).sin()).scale(0.05),
                (p[0].sin() * p[1].cos()).scale(0.05),
            ],
            Field::FlatTorus => vec![p[0].sin() * p[1].sin(), p[1].sin() * p[2].sin(), p[2].sin() * p[0].cos()],
            Field::SphereCubic | Field::PositionTangent => {
                let x = m.embed(p);
                let amb: Vec<Jet> = match self {
                    Field::SphereCubic => {
                        let x2 = x[0] * x[0];
                        vec![x[0] - x2 * x[0], -(x2 * x[1]), -(x2 * x[2])]
                    }
                    _ => x.clone(),
                };
                let xa: Vec<Vec<Jet>> = (0..d).map(|a| x.iter().map(|v| v.diff(a)).collect()).collect();
                let dotj = |u: &[Jet], v: &[Jet]| {
                    u.iter().zip(v).fold(Jet::constant(0.0), |acc, (a, b)| acc + *a * *b)
                };
                let g: Vec<Vec<Jet>> = (0..d).map(|a| (0..d).map(|b| dotj(&xa[a], &xa[b])).collect()).collect();
                let gi = inverse(&g);
                let cov: Vec<Jet> = (0..d).map(|b| dotj(&xa[b], &amb)).collect();
                (0..d)
                    .map(|a| (0..d).fold(Jet::constant(0.0), |acc, b| acc + gi[a][b] * cov[b]))
                    .collect()
            }
        }
    }
}

/// Chart quantities at one parameter point.
pub struct ChartGeometry {
    pub d: usize,
    pub n: usize,
    /// x_a, n-vectors.
    pub xa: Vec<Vec<f64>>,
    pub ginv: Vec<Vec<f64>>,
    /// Γ^k_{ij} as gamma[k][i][j].
    pub gamma: Vec<Vec<Vec<f64>>>,
    /// ∂_rΓ^k_{ij} as dgamma[r][k][i][j].
    pub dgamma: Vec<Vec<Vec<Vec<f64>>>>,
}

impl ChartGeometry {
    pub fn new(m: &Manifold, p: &[f64]) -> ChartGeometry {
        let d = m.intrinsic_dim();
        let n = m.ambient_dim();
        let x = m.embed(&Jet::point(p));
        let e = |a: &[usize]| -> [u8; 3] {
            let mut o = [0u8; 3];
            for &i in a {
                o[i] += 1;
            }
            o
        };
        let x1: Vec<Vec<f64>> = (0..d).map(|a| x.iter().map(|v| v.derivative(e(&[a]))).collect()).collect();
        let x2 = |a: usize, b: usize| -> Vec<f64> { x.iter().map(|v| v.derivative(e(&[a, b]))).collect() };
        let x3 = |a: usize, b: usize, c: usize| -> Vec<f64> { x.iter().map(|v| v.derivative(e(&[a, b, c]))).collect() };
        let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(a, b)| a * b).sum() };
        let g: Vec<Vec<f64>> = (0..d).map(|a| (0..d).map(|b| dot(&x1[a], &x1[b])).collect()).collect();
        let ginv = inverse(&g);
        let dg: Vec<Vec<Vec<f64>>> = (0..d)
            .map(|r| {
                (0..d)
                    .map(|a| (0..d).map(|b| dot(&x2(a, r), &x1[b]) + dot(&x1[a], &x2(b, r))).collect())
                    .collect()
            })
            .collect();
        // ∂_r g^{-1} = −g^{-1} (∂_r g) g^{-1}
        let dginv: Vec<Vec<Vec<f64>>> = (0..d)
            .map(|r| {
                (0..d)
                    .map(|a| {
                        (0..d)
                            .map(|b| {
                                let mut s = 0.0;
                                for c in 0..d {
                                    for q in 0..d {
                                        s -= ginv[a][c] * dg[r][c][q] * ginv[q][b];
                                    }
                                }
                                s
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        // first kind Γ_{c,ij} = x_c · x_ij and its derivative
        let first: Vec<Vec<Vec<f64>>> = (0..d)
            .map(|c| (0..d).map(|i| (0..d).map(|j| dot(&x1[c], &x2(i, j))).collect()).collect())
            .collect();
        let gamma: Vec<Vec<Vec<f64>>> = (0..d)
            .map(|k| {
                (0..d)
                    .map(|i| (0..d).map(|j| (0..d).map(|c| ginv[k][c] * first[c][i][j]).sum()).collect())
                    .collect()
            })
            .collect();
        let dgamma = (0..d)
            .map(|r| {
                (0..d)
                    .map(|k| {
                        (0..d)
                            .map(|i| {
                                (0..d)
                                    .map(|j| {
                                        (0..d)
                                            .map(|c| {
                                                let dfirst = dot(&x2(c, r), &x2(i, j)) + dot(&x1[c], &x3(i, j, r));
                                                dginv[r][k][c] * first[c][i][j] + ginv[k][c] * dfirst
                                            })
                                            .sum()
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        ChartGeometry {
            d,
            n,
            xa: x1,
            ginv,
            gamma,
            dgamma,
        }
    }

    /// Ric_{jk}.
    pub fn ricci(&self) -> Vec<Vec<f64>> {
        let d = self.d;
        let (ga, dga) = (&self.gamma, &self.dgamma);
        (0..d)
            .map(|j| {
                (0..d)
                    .map(|k| {
                        let mut s = 0.0;
                        for i in 0..d {
                            s += dga[i][i][j][k] - dga[k][i][j][i];
                            for m in 0..d {
                                s += ga[i][i][m] * ga[m][j][k] - ga[i][k][m] * ga[m][j][i];
                            }
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    /// Σ_a c^a x_a.
    pub fn pushforward(&self, c: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|s| (0..self.d).map(|a| c[a] * self.xa[a][s]).sum())
            .collect()
    }
}

struct FieldJet {
    u: Vec<f64>,
    du: Vec<Vec<f64>>,
    ddu: Vec<Vec<Vec<f64>>>,
}

fn field_jet(m: &Manifold, f: &Field, p: &[f64]) -> FieldJet {
    let d = m.intrinsic_dim();
    let comps = f.components(m, &Jet::point(p));
    FieldJet {
        u: comps.iter().map(|c| c.value()).collect(),
        du: comps.iter().map(|c| (0..d).map(|j| c.d1(j)).collect()).collect(),
        ddu: comps
            .iter()
            .map(|c| (0..d).map(|j| (0..d).map(|k| c.d2(j, k)).collect()).collect())
            .collect(),
    }
}

/// A^i_j = ∇_j u^i and ∂_k A^i_j.
fn covariant_gradient(geo: &ChartGeometry, fj: &FieldJet) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let d = geo.d;
    let a: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| fj.du[i][j] + (0..d).map(|m| geo.gamma[i][j][m] * fj.u[m]).sum::<f64>()).collect())
        .collect();
    let da = (0..d)
        .map(|k| {
            (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| {
                            fj.ddu[i][j][k]
                                + (0..d)
                                    .map(|m| geo.dgamma[k][i][j][m] * fj.u[m] + geo.gamma[i][j][m] * fj.du[m][k])
                                    .sum::<f64>()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    (a, da)
}

/// Contravariant components of the chosen Laplacian of `f` at `p`.
pub fn laplacian(m: &Manifold, f: &Field, kind: LaplacianKind, p: &[f64]) -> Vec<f64> {
    let geo = ChartGeometry::new(m, p);
    let fj = field_jet(m, f, p);
    let d = geo.d;
    let (a, da) = covariant_gradient(&geo, &fj);
    let mut bochner = vec![0.0; d];
    for (i, b) in bochner.iter_mut().enumerate() {
        for j in 0..d {
            for k in 0..d {
                let mut nabla = da[k][i][j];
                for m in 0..d {
                    nabla += geo.gamma[i][k][m] * a[m][j] - geo.gamma[m][k][j] * a[i][m];
                }
                *b += geo.ginv[j][k] * nabla;
            }
        }
    }
    if kind == LaplacianKind::Bochner {
        return bochner;
    }
    let ric = geo.ricci();
    let ric_u: Vec<f64> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| geo.ginv[i][j] * (0..d).map(|k| ric[j][k] * fj.u[k]).sum::<f64>())
                .sum()
        })
        .collect();
    match kind {
        LaplacianKind::Hodge => (0..d).map(|i| bochner[i] - ric_u[i]).collect(),
        LaplacianKind::L => {
            // ∂_j div u = Σ_i ∂_j A^i_i
            let ddiv: Vec<f64> = (0..d).map(|j| (0..d).map(|i| da[j][i][i]).sum()).collect();
            (0..d)
                .map(|i| bochner[i] + ric_u[i] + (0..d).map(|j| geo.ginv[i][j] * ddiv[j]).sum::<f64>())
                .collect()
        }
        LaplacianKind::Bochner => unreachable!(),
    }
}

/// Contravariant components of ∇_f f at `p`.
pub fn covariant_derivative(m: &Manifold, f: &Field, p: &[f64]) -> Vec<f64> {
    let geo = ChartGeometry::new(m, p);
    let fj = field_jet(m, f, p);
    let (a, _) = covariant_gradient(&geo, &fj);
    (0..geo.d).map(|i| (0..geo.d).map(|j| fj.u[j] * a[i][j]).sum()).collect()
}

/// Ambient vector of the field at `p`.
pub fn field_ambient(m: &Manifold, f: &Field, p: &[f64]) -> Vec<f64> {
    let geo = ChartGeometry::new(m, p);
    let fj = field_jet(m, f, p);
    geo.pushforward(&fj.u)
}

/// Ambient vector of the Laplacian at `p`.
pub fn laplacian_ambient(m: &Manifold, f: &Field, kind: LaplacianKind, p: &[f64]) -> Vec<f64> {
    let c = laplacian(m, f, kind, p);
    ChartGeometry::new(m, p).pushforward(&c)
}

/// Ambient vector of ∇_f f at `p`.
pub fn covariant_ambient(m: &Manifold, f: &Field, p: &[f64]) -> Vec<f64> {
    let c = covariant_derivative(m, f, p);
    ChartGeometry::new(m, p).pushforward(&c)
}

/// Evaluate an ambient quantity at every cloud point (N × n, row-major).
pub fn over_cloud(cloud: &PointCloud, eval: impl Fn(&Manifold, &[f64]) -> Vec<f64> + Sync) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let m = cloud
        .manifold()
        .ok_or_else(|| crate::Error::Invalid("cloud carries no manifold".into()))?;
    if cloud.params().is_none() {
        return invalid("cloud carries no parameters");
    }
    let rows: Vec<Vec<f64>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| eval(&m, cloud.param(i).unwrap()))
        .collect();
    Ok(rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_ricci_is_metric() {
        let m = Manifold::UnitSphere;
        let p = [0.9, 0.4];
        let geo = ChartGeometry::new(&m, &p);
        let ric = geo.ricci();
        // g = diag(1, sin²θ)
        assert!((ric[0][0] - 1.0).abs() < 1e-12);
        assert!((ric[1][1] - 0.9f64.sin().powi(2)).abs() < 1e-12);
        assert!(ric[0][1].abs() < 1e-12);
    }

    #[test]
    fn flat_torus_laplacian_is_componentwise() {
        let m = Manifold::FlatTorus12;
        let p = [0.3, 1.1, 2.0];
        let lap = laplacian(&m, &Field::FlatTorus, LaplacianKind::Bochner, &p);
        let want = [
            -2.0 * p[0].sin() * p[1].sin(),
            -2.0 * p[1].sin() * p[2].sin(),
            -2.0 * p[2].sin() * p[0].cos(),
        ];
        for i in 0..3 {
            assert!((lap[i] - want[i]).abs() < 1e-12);
        }
        let h = laplacian(&m, &Field::FlatTorus, LaplacianKind::Hodge, &p);
        assert!((h[2] - want[2]).abs() < 1e-12);
    }

    #[test]
    fn position_field_is_normal_on_sphere() {
        let v = field_ambient(&Manifold::UnitSphere, &Field::PositionTangent, &[1.0, 0.2]);
        assert!(v.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rotation_field_on_sphere() {
        // ∂φ is Killing: Bochner = −Ric(u) = −u, Hodge = −2u, L = 0.
        let m = Manifold::UnitSphere;
        let p = [0.7, 2.1];
        let u = Field::Coordinate(1);
        let b = laplacian(&m, &u, LaplacianKind::Bochner, &p);
        let h = laplacian(&m, &u, LaplacianKind::Hodge, &p);
        let l = laplacian(&m, &u, LaplacianKind::L, &p);
        assert!(b[0].abs() < 1e-12 && (b[1] + 1.0).abs() < 1e-12);
        assert!((h[1] + 2.0).abs() < 1e-12);
        assert!(l.iter().all(|v| v.abs() < 1e-12));
    }
}
