//! Weighted least-squares polynomial fitting on a stencil.
//!
//! Everything downstream consumes the solve operator Φ† = (ΦᵀΛΦ)⁻¹ΦᵀΛ: a
//! derivative of the fitted polynomial at the base point is a fixed linear
//! combination of the stencil values, given by a row of Φ†.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Condition estimate above which the Cholesky path is abandoned for an SVD.
pub const COND_FALLBACK: f64 = 1e8;
/// Condition estimate above which a fit is rejected.
pub const COND_LIMIT: f64 = 1e12;

/// Multi-indices of d variables with total degree in `lo..=hi`, graded lex.
///
/// Within one degree the first exponent decreases fastest, so for d = 2 the
/// order is 1, θ₁, θ₂, θ₁², θ₁θ₂, θ₂², ...
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiIndexSet {
    d: usize,
    lo: usize,
    hi: usize,
    alphas: Vec<Vec<u8>>,
}

fn push_degree(d: usize, deg: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if prefix.len() == d - 1 {
        prefix.push(deg as u8);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for a in (0..=deg).rev() {
        prefix.push(a as u8);
        push_degree(d, deg - a, prefix, out);
        prefix.pop();
    }
}

impl MultiIndexSet {
    pub fn new(d: usize, lo: usize, hi: usize) -> MultiIndexSet {
        assert!(d >= 1 && lo <= hi, "invalid multi-index range");
        let mut alphas = Vec::new();
        for deg in lo..=hi {
            push_degree(d, deg, &mut Vec::with_capacity(d), &mut alphas);
        }
        MultiIndexSet { d, lo, hi, alphas }
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn degree_range(&self) -> (usize, usize) {
        (self.lo, self.hi)
    }

    pub fn get(&self, j: usize) -> &[u8] {
        &self.alphas[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u8]> {
        self.alphas.iter().map(|a| a.as_slice())
    }

    pub fn position(&self, alpha: &[u8]) -> Option<usize> {
        self.alphas.iter().position(|a| a.as_slice() == alpha)
    }

    /// Position of e_i (the linear monomial θ_i).
    pub fn linear(&self, i: usize) -> Option<usize> {
        let mut a = vec![0u8; self.d];
        a[i] = 1;
        self.position(&a)
    }

    /// Position of e_i + e_j.
    pub fn quadratic(&self, i: usize, j: usize) -> Option<usize> {
        let mut a = vec![0u8; self.d];
        a[i] += 1;
        a[j] += 1;
        self.position(&a)
    }
}

/// Binomial coefficient C(n, k).
pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Least-squares weights over a stencil of size K.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightScheme {
    /// λ₁ = 1 for the base point and 1/K for every neighbor.
    BaseEmphasis,
    /// λ_k = 1.
    Uniform,
}

impl WeightScheme {
    pub fn weights(&self, k: usize) -> Vec<f64> {
        match self {
            WeightScheme::BaseEmphasis => {
                let mut w = vec![1.0 / k as f64; k];
                if k > 0 {
                    w[0] = 1.0;
                }
                w
            }
            WeightScheme::Uniform => vec![1.0; k],
        }
    }
}

impl FromStr for WeightScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base_emphasis" | "base" => Ok(WeightScheme::BaseEmphasis),
            "uniform" => Ok(WeightScheme::Uniform),
            o => invalid(format!("unknown weight scheme '{o}'")),
        }
    }
}

/// θ_i(x) = t_i(x₀)·(x − x₀) for each stencil row; `frame` is n × d.
pub fn local_coordinates(stencil: &DMatrix<f64>, frame: &DMatrix<f64>) -> DMatrix<f64> {
    let k = stencil.nrows();
    let n = stencil.ncols();
    let d = frame.ncols();
    let mut theta = DMatrix::zeros(k, d);
    for r in 0..k {
        for i in 0..d {
            let mut acc = 0.0;
            for s in 0..n {
                acc += frame[(s, i)] * (stencil[(r, s)] - stencil[(0, s)]);
            }
            theta[(r, i)] = acc;
        }
    }
    theta
}

/// Monomial ∏ θ_i^{α_i}.
pub fn monomial(theta: &[f64], alpha: &[u8]) -> f64 {
    theta
        .iter()
        .zip(alpha)
        .map(|(t, &a)| t.powi(a as i32))
        .product()
}

/// ∂/∂θ_i of the monomial θ^α.
pub fn monomial_derivative(theta: &[f64], alpha: &[u8], i: usize) -> f64 {
    if alpha[i] == 0 {
        return 0.0;
    }
    let mut v = alpha[i] as f64;
    for (j, (&t, &a)) in theta.iter().zip(alpha).enumerate() {
        let e = if j == i { a - 1 } else { a };
        v *= t.powi(e as i32);
    }
    v
}

/// Φ with Φ_kj = θ(x_{0,k})^{α(j)}.
pub fn design_matrix(theta: &DMatrix<f64>, idx: &MultiIndexSet) -> DMatrix<f64> {
    let mut row = vec![0.0; theta.ncols()];
    DMatrix::from_fn(theta.nrows(), idx.len(), |k, j| {
        for (i, r) in row.iter_mut().enumerate() {
            *r = theta[(k, i)];
        }
        monomial(&row, idx.get(j))
    })
}

/// A weighted least-squares fit prepared for one stencil.
#[derive(Clone, Debug)]
pub struct LocalFit {
    pub theta: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    /// m × K solve operator: coefficients = phi_dagger · values.
    pub phi_dagger: DMatrix<f64>,
    /// Condition estimate of the (scaled) normal matrix ΦᵀΛΦ.
    pub cond: f64,
    pub idx: MultiIndexSet,
    pub scheme: WeightScheme,
}

impl LocalFit {
    /// Build the solve operator. Internally the coordinates are divided by the
    /// stencil radius so that the normal matrix stays well scaled; the
    /// returned operator acts on unscaled coefficients.
    pub fn new(theta: DMatrix<f64>, idx: MultiIndexSet, scheme: WeightScheme) -> Result<LocalFit> {
        let k = theta.nrows();
        let m = idx.len();
        if theta.ncols() != idx.dim() {
            return invalid("local coordinates and multi-indices disagree on d");
        }
        let phi = design_matrix(&theta, &idx);
        if k < m {
            return Err(Error::RankDeficient {
                cond: f64::INFINITY,
            });
        }
        let rho = (0..k)
            .map(|r| theta.row(r).norm())
            .fold(0.0f64, f64::max);
        if !(rho > 0.0) && idx.degree_range().1 > 0 {
            return Err(Error::RankDeficient {
                cond: f64::INFINITY,
            });
        }
        let rho = if rho > 0.0 { rho } else { 1.0 };
        let scaled = DMatrix::from_fn(k, m, |r, j| {
            phi[(r, j)] / rho.powi(idx.get(j).iter().map(|&a| a as i32).sum())
        });
        let w = scheme.weights(k);
        let (pd_scaled, cond) = solve_operator(&scaled, &w)?;
        let mut phi_dagger = pd_scaled;
        for j in 0..m {
            let s = rho.powi(idx.get(j).iter().map(|&a| a as i32).sum());
            for c in 0..k {
                phi_dagger[(j, c)] /= s;
            }
        }
        Ok(LocalFit {
            theta,
            phi,
            phi_dagger,
            cond,
            idx,
            scheme,
        })
    }

    pub fn stencil_size(&self) -> usize {
        self.theta.nrows()
    }

    /// Stencil weights that produce D^δ of the fit at the base point.
    pub fn derivative_weights(&self, delta: &[u8]) -> Result<Vec<f64>> {
        let j = self
            .idx
            .position(delta)
            .ok_or_else(|| Error::Invalid(format!("multi-index {delta:?} not in fit basis")))?;
        let f = factorial(delta);
        Ok(self.phi_dagger.row(j).iter().map(|v| v * f).collect())
    }
}

fn factorial(delta: &[u8]) -> f64 {
    delta
        .iter()
        .map(|&a| (1..=a as u64).product::<u64>() as f64)
        .product()
}

fn solve_operator(phi: &DMatrix<f64>, w: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    let k = phi.nrows();
    let m = phi.ncols();
    let mut wphi_t = phi.transpose();
    for c in 0..k {
        for j in 0..m {
            wphi_t[(j, c)] *= w[c];
        }
    }
    let normal = &wphi_t * phi;
    if let Some(chol) = normal.clone().cholesky() {
        let cond = cond_estimate(&normal, &chol);
        if cond <= COND_FALLBACK {
            return Ok((chol.solve(&wphi_t), cond));
        }
    }
    // Rank-revealing path: SVD of Λ^{1/2} Φ.
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let a = DMatrix::from_fn(k, m, |r, j| sw[r] * phi[(r, j)]);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 {
        (smax / smin).powi(2)
    } else {
        f64::INFINITY
    };
    if !(cond <= COND_LIMIT) {
        return Err(Error::RankDeficient { cond });
    }
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut pd = DMatrix::zeros(m, k);
    for (q, &s) in svd.singular_values.iter().enumerate() {
        for j in 0..m {
            let vj = vt[(q, j)] / s;
            for c in 0..k {
                pd[(j, c)] += vj * u[(c, q)] * sw[c];
            }
        }
    }
    Ok((pd, cond))
}

/// Hager's 1-norm condition estimate using the Cholesky factor for solves.
fn cond_estimate(a: &DMatrix<f64>, chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let m = a.nrows();
    let norm_a = (0..m)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut x = DVector::from_element(m, 1.0 / m as f64);
    let mut est = 0.0;
    for _ in 0..5 {
        let y = chol.solve(&x);
        let ny: f64 = y.iter().map(|v| v.abs()).sum();
        if !ny.is_finite() {
            return f64::INFINITY;
        }
        if ny <= est {
            break;
        }
        est = ny;
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = chol.solve(&xi);
        let (jmax, zmax) = z
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (j, v)| if v.abs() > acc.1 { (j, v.abs()) } else { acc });
        if zmax <= z.dot(&x) {
            break;
        }
        x.fill(0.0);
        x[jmax] = 1.0;
    }
    norm_a * est
}

/// Coefficients b = Φ†f of the fit.
pub fn fit(design: &LocalFit, values: &[f64]) -> Result<Vec<f64>> {
    if values.len() != design.stencil_size() {
        return invalid(format!(
            "expected {} values, got {}",
            design.stencil_size(),
            values.len()
        ));
    }
    let f = DVector::from_column_slice(values);
    Ok((&design.phi_dagger * f).iter().copied().collect())
}

/// D^δ of the fitted polynomial at the base point: δ!·b_δ.
pub fn derivative_at_base(coeffs: &[f64], idx: &MultiIndexSet, delta: &[u8]) -> Result<f64> {
    if delta.len() != idx.dim() {
        return invalid("derivative multi-index has the wrong length");
    }
    let j = idx
        .position(delta)
        .ok_or_else(|| Error::Invalid(format!("multi-index {delta:?} not in fit basis")))?;
    Ok(factorial(delta) * coeffs[j])
}
