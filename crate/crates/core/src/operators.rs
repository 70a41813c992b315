//! Block-sparse operators, spectra, regularization and shifted solves.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use faer::prelude::*;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

/// Which vector Laplacian an operator discretizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LaplacianKind {
    Bochner,
    L,
    Hodge,
}

impl LaplacianKind {
    pub fn name(&self) -> &'static str {
        match self {
            LaplacianKind::Bochner => "bochner",
            LaplacianKind::L => "l",
            LaplacianKind::Hodge => "hodge",
        }
    }
}

impl fmt::Display for LaplacianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LaplacianKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bochner" => Ok(LaplacianKind::Bochner),
            "l" | "l_laplacian" => Ok(LaplacianKind::L),
            "hodge" => Ok(LaplacianKind::Hodge),
            o => invalid(format!("unknown laplacian kind '{o}'")),
        }
    }
}

/// Sparse dN × dN matrix stored as d × d dense blocks in block-CSR layout.
///
/// Block (i, j) couples the d coefficients at point j into the d outputs at
/// point i. Column indices are sorted within each block row.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockOperator {
    n: usize,
    d: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl BlockOperator {
    /// Build from per-row lists of (column, d × d block). Repeated columns are summed.
    pub fn from_block_rows(n: usize, d: usize, rows: Vec<Vec<(usize, DMatrix<f64>)>>) -> Result<Self> {
        if rows.len() != n {
            return invalid(format!("expected {n} block rows, got {}", rows.len()));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for mut row in rows {
            row.sort_by_key(|(c, _)| *c);
            let mut last: Option<usize> = None;
            for (c, b) in row {
                if c >= n {
                    return invalid(format!("block column {c} out of range"));
                }
                if b.nrows() != d || b.ncols() != d {
                    return invalid("block has the wrong shape");
                }
                if last == Some(c) {
                    let off = vals.len() - d * d;
                    for r in 0..d {
                        for q in 0..d {
                            vals[off + r * d + q] += b[(r, q)];
                        }
                    }
                    continue;
                }
                cols.push(c);
                for r in 0..d {
                    for q in 0..d {
                        vals.push(b[(r, q)]);
                    }
                }
                last = Some(c);
            }
            row_ptr.push(cols.len());
        }
        Ok(BlockOperator {
            n,
            d,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Raw block-CSR constructor; `vals` holds row-major d × d blocks.
    pub fn from_raw(n: usize, d: usize, row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<f64>) -> Result<Self> {
        if row_ptr.len() != n + 1 || row_ptr[0] != 0 || *row_ptr.last().unwrap() != cols.len() {
            return invalid("malformed block row pointer");
        }
        if vals.len() != cols.len() * d * d {
            return invalid("block values do not match column count");
        }
        for i in 0..n {
            let c = &cols[row_ptr[i]..row_ptr[i + 1]];
            if row_ptr[i] > row_ptr[i + 1] || c.windows(2).any(|w| w[0] >= w[1]) || c.iter().any(|&j| j >= n) {
                return invalid(format!("block row {i} has unsorted or invalid columns"));
            }
        }
        Ok(BlockOperator {
            n,
            d,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn identity(n: usize, d: usize) -> Self {
        let mut vals = Vec::with_capacity(n * d * d);
        for _ in 0..n {
            for r in 0..d {
                for q in 0..d {
                    vals.push(if r == q { 1.0 } else { 0.0 });
                }
            }
        }
        BlockOperator {
            n,
            d,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals,
        }
    }

    pub fn points(&self) -> usize {
        self.n
    }

    pub fn block_dim(&self) -> usize {
        self.d
    }

    /// Scalar dimension dN.
    pub fn dim(&self) -> usize {
        self.n * self.d
    }

    pub fn num_blocks(&self) -> usize {
        self.cols.len()
    }

    /// Number of stored scalars (d² per block).
    pub fn stored_scalars(&self) -> usize {
        self.vals.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn blocks_in_row(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// Iterate (column, row-major block) over block row i.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, &[f64])> {
        let dd = self.d * self.d;
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.cols[p], &self.vals[p * dd..(p + 1) * dd]))
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&[f64]> {
        let c = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        let dd = self.d * self.d;
        c.binary_search(&j).ok().map(|p| {
            let p = p + self.row_ptr[i];
            &self.vals[p * dd..(p + 1) * dd]
        })
    }

    pub fn is_finite(&self) -> bool {
        self.vals.iter().all(|v| v.is_finite())
    }

    /// y = A x.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y)?;
        Ok(y)
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let nd = self.dim();
        if x.len() != nd || y.len() != nd {
            return invalid(format!("operator has dimension {nd}, vectors {} and {}", x.len(), y.len()));
        }
        let d = self.d;
        y.par_chunks_mut(d).enumerate().for_each(|(i, yi)| {
            yi.fill(0.0);
            for (j, b) in self.row(i) {
                let xj = &x[j * d..(j + 1) * d];
                for r in 0..d {
                    let mut acc = 0.0;
                    for q in 0..d {
                        acc += b[r * d + q] * xj[q];
                    }
                    yi[r] += acc;
                }
            }
        });
        Ok(())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.d;
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        for i in 0..self.n {
            for (j, b) in self.row(i) {
                for r in 0..d {
                    for q in 0..d {
                        m[(i * d + r, j * d + q)] += b[r * d + q];
                    }
                }
            }
        }
        m
    }

    /// Scalar triplets (row, col, value), sorted by row then column.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let d = self.d;
        let mut out = Vec::with_capacity(self.vals.len());
        for i in 0..self.n {
            for r in 0..d {
                for (j, b) in self.row(i) {
                    for q in 0..d {
                        out.push((i * d + r, j * d + q, b[r * d + q]));
                    }
                }
            }
        }
        out
    }

    /// A + c I. Every block row must already hold its diagonal block.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        let mut out = self.clone();
        let d = self.d;
        for i in 0..self.n {
            let c_slice = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
            let p = c_slice
                .binary_search(&i)
                .map_err(|_| Error::Invalid(format!("block row {i} has no diagonal block")))?
                + self.row_ptr[i];
            for r in 0..d {
                out.vals[p * d * d + r * d + r] += c;
            }
        }
        Ok(out)
    }

    /// c A.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Scalar CSC matrix a I + c A for the sparse direct solver.
    pub fn to_faer(&self, a: f64, c: f64) -> Result<SparseColMat<usize, f64>> {
        let mut trip: Vec<Triplet<usize, usize, f64>> = self
            .triplets()
            .into_iter()
            .map(|(r, q, v)| Triplet::new(r, q, c * v))
            .collect();
        if a != 0.0 {
            trip.extend((0..self.dim()).map(|i| Triplet::new(i, i, a)));
        }
        SparseColMat::try_new_from_triplets(self.dim(), self.dim(), &trip)
            .map_err(|e| Error::Invalid(format!("sparse matrix construction failed: {e:?}")))
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let d = self.d;
        (0..self.n)
            .flat_map(|i| {
                (0..d).map(move |r| {
                    self.row(i)
                        .map(|(_, b)| (0..d).map(|q| b[r * d + q].abs()).sum::<f64>())
                        .sum::<f64>()
                })
            })
            .fold(0.0, f64::max)
    }
}

/// ∇_u u assembled as value and gradient operators: at each point,
/// (∇_u u)^i = Σ_k v^k (G_k u)^i with v = V u.
#[derive(Clone, Debug)]
pub struct CovariantOperator {
    pub value: BlockOperator,
    pub grads: Vec<BlockOperator>,
}

impl CovariantOperator {
    /// Rows per point: entry 0 feeds `value`, entries 1..=d the gradients.
    pub fn from_rows(n: usize, d: usize, rows: Vec<Vec<Vec<(usize, DMatrix<f64>)>>>) -> Result<Self> {
        let mut split: Vec<Vec<Vec<(usize, DMatrix<f64>)>>> = (0..=d).map(|_| Vec::with_capacity(n)).collect();
        for r in rows {
            if r.len() != d + 1 {
                return invalid("covariant row must hold d + 1 block rows");
            }
            for (k, part) in r.into_iter().enumerate() {
                split[k].push(part);
            }
        }
        let mut ops = split
            .into_iter()
            .map(|rows| BlockOperator::from_block_rows(n, d, rows))
            .collect::<Result<Vec<_>>>()?;
        let value = ops.remove(0);
        Ok(CovariantOperator { value, grads: ops })
    }

    pub fn dim(&self) -> usize {
        self.value.dim()
    }

    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let d = self.value.block_dim();
        let v = self.value.apply(u)?;
        let g = self.grads.iter().map(|op| op.apply(u)).collect::<Result<Vec<_>>>()?;
        let mut out = vec![0.0; u.len()];
        for (p, o) in out.chunks_mut(d).enumerate() {
            for (k, gk) in g.iter().enumerate() {
                let vk = v[p * d + k];
                for i in 0..d {
                    o[i] += vk * gk[p * d + i];
                }
            }
        }
        Ok(out)
    }
}

/// How a spectrum was computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EigenMethod {
    Dense,
    Iterative,
}

/// Eigenvalues sorted by descending real part, optionally with eigenvectors.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<Complex64>,
    pub vectors: Option<Vec<Vec<Complex64>>>,
    pub method: EigenMethod,
}

impl Spectrum {
    pub fn max_real(&self) -> f64 {
        self.values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Largest dN accepted by the dense eigensolver.
pub const DENSE_EIGEN_CAP: usize = 8000;

fn sort_desc(values: &mut [(Complex64, usize)]) {
    values.sort_by(|a, b| b.0.re.total_cmp(&a.0.re).then(b.0.im.total_cmp(&a.0.im)));
}

/// All eigenvalues via a dense nonsymmetric eigensolver.
pub fn eigen_dense(op: &BlockOperator, with_vectors: bool) -> Result<Spectrum> {
    let nd = op.dim();
    if nd > DENSE_EIGEN_CAP {
        return invalid(format!("dense eigensolver limited to dN <= {DENSE_EIGEN_CAP}, got {nd}"));
    }
    let dense = op.to_dense();
    let m = Mat::<f64>::from_fn(nd, nd, |i, j| dense[(i, j)]);
    if !with_vectors {
        let ev = m.eigenvalues().map_err(|_| Error::NoConvergence {
            what: "dense eigensolver",
            residual: f64::NAN,
        })?;
        let mut idx: Vec<(Complex64, usize)> = ev.into_iter().map(|z| Complex64::new(z.re, z.im)).zip(0..).collect();
        sort_desc(&mut idx);
        return Ok(Spectrum {
            values: idx.into_iter().map(|(z, _)| z).collect(),
            vectors: None,
            method: EigenMethod::Dense,
        });
    }
    let eig = m.eigen().map_err(|_| Error::NoConvergence {
        what: "dense eigensolver",
        residual: f64::NAN,
    })?;
    let s = eig.S();
    let u = eig.U();
    let mut idx: Vec<(Complex64, usize)> = (0..nd).map(|i| (Complex64::new(s[i].re, s[i].im), i)).collect();
    sort_desc(&mut idx);
    let vectors = idx
        .iter()
        .map(|&(_, c)| (0..nd).map(|r| Complex64::new(u[(r, c)].re, u[(r, c)].im)).collect())
        .collect();
    Ok(Spectrum {
        values: idx.into_iter().map(|(z, _)| z).collect(),
        vectors: Some(vectors),
        method: EigenMethod::Dense,
    })
}

/// Settings for the shift-invert block Arnoldi eigensolver.
#[derive(Clone, Copy, Debug)]
pub struct ExtremalOptions {
    /// Number of eigenvalues wanted.
    pub count: usize,
    /// Shift σ; eigenvalues nearest σ converge first. Place it just right of the spectrum.
    pub sigma: f64,
    /// Relative residual ‖Lz − λz‖ / (‖L‖∞ ‖z‖) required for every returned pair.
    pub tol: f64,
    pub max_restarts: usize,
    /// Extra block columns beyond `count`.
    pub guard: usize,
    /// Krylov steps per restart cycle.
    pub steps: usize,
    pub seed: u64,
}

impl Default for ExtremalOptions {
    fn default() -> Self {
        ExtremalOptions {
            count: 8,
            sigma: 0.5,
            tol: 1e-8,
            max_restarts: 300,
            guard: 8,
            steps: 3,
            seed: 0x00e1_9e75,
        }
    }
}

fn mgs_append(basis: &mut Vec<Vec<f64>>, mut v: Vec<f64>) -> bool {
    let before = norm2(&v);
    if !(before > 0.0) {
        return false;
    }
    for _ in 0..2 {
        for b in basis.iter() {
            let p = dot(b, &v);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
    }
    let nrm = norm2(&v);
    if nrm <= 1e-10 * before {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= nrm);
    basis.push(v);
    true
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigenvalues nearest the shift (for σ right of the spectrum: those of
/// largest real part), via block Arnoldi on (L − σI)⁻¹ with Rayleigh–Ritz
/// extraction and thick restarts.
pub fn eigen_extremal(op: &BlockOperator, opts: ExtremalOptions) -> Result<Spectrum> {
    let nd = op.dim();
    let k = opts.count;
    if k == 0 || k >= nd {
        return invalid(format!("requested {k} eigenvalues of a {nd}-dimensional operator"));
    }
    let p = (k + opts.guard).min(nd);
    let lu = op
        .to_faer(-opts.sigma, 1.0)?
        .sp_lu()
        .map_err(|_| Error::NoConvergence {
            what: "shift-invert factorization",
            residual: f64::NAN,
        })?;
    let solve = |v: &[f64]| -> Vec<f64> {
        let mut rhs = Mat::<f64>::from_fn(nd, 1, |i, _| v[i]);
        lu.solve_in_place(rhs.as_mut());
        (0..nd).map(|i| rhs[(i, 0)]).collect()
    };
    let scale = op.norm_inf().max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut block: Vec<Vec<f64>> = Vec::new();
    while block.len() < p {
        let v: Vec<f64> = (0..nd).map(|_| rng.random::<f64>() - 0.5).collect();
        mgs_append(&mut block, v);
    }
    let mut worst = f64::INFINITY;
    for _restart in 0..opts.max_restarts {
        // Krylov basis [X, AX, A²X, ...] and its image under A = (L − σI)⁻¹.
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for v in block.drain(..) {
            mgs_append(&mut basis, v);
        }
        let mut images: Vec<Vec<f64>> = Vec::new();
        let mut start = 0;
        for step in 0..=opts.steps {
            let end = basis.len();
            let new: Vec<Vec<f64>> = basis[start..end].par_iter().map(|v| solve(v)).collect();
            images.extend(new.iter().cloned());
            start = end;
            if step < opts.steps {
                for w in new {
                    mgs_append(&mut basis, w);
                }
                if basis.len() == end {
                    break;
                }
            }
        }
        // Images of any basis vectors not yet mapped.
        while images.len() < basis.len() {
            let v = solve(&basis[images.len()]);
            images.push(v);
        }
        let m = basis.len();
        let h = Mat::<f64>::from_fn(m, m, |i, j| dot(&basis[i], &images[j]));
        let eig = h.eigen().map_err(|_| Error::NoConvergence {
            what: "Ritz eigenproblem",
            residual: f64::NAN,
        })?;
        let s = eig.S();
        let y = eig.U();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            let ma = Complex64::new(s[a].re, s[a].im).norm();
            let mb = Complex64::new(s[b].re, s[b].im).norm();
            mb.total_cmp(&ma).then(a.cmp(&b))
        });
        let ritz = |c: usize| -> (Vec<f64>, Vec<f64>) {
            let mut re = vec![0.0; nd];
            let mut im = vec![0.0; nd];
            for (j, b) in basis.iter().enumerate() {
                let (yr, yi) = (y[(j, c)].re, y[(j, c)].im);
                for r in 0..nd {
                    re[r] += yr * b[r];
                    im[r] += yi * b[r];
                }
            }
            (re, im)
        };
        let mut values = Vec::with_capacity(k);
        let mut vectors = Vec::with_capacity(k);
        worst = 0.0f64;
        for &c in order.iter().take(k) {
            let mu = Complex64::new(s[c].re, s[c].im);
            let lambda = Complex64::new(opts.sigma, 0.0) + 1.0 / mu;
            let (re, im) = ritz(c);
            let lre = op.apply(&re)?;
            let lim = op.apply(&im)?;
            let mut res = 0.0;
            let mut zn = 0.0;
            for r in 0..nd {
                let z = Complex64::new(re[r], im[r]);
                let lz = Complex64::new(lre[r], lim[r]);
                res += (lz - lambda * z).norm_sqr();
                zn += z.norm_sqr();
            }
            let rel = res.sqrt() / (scale * zn.sqrt().max(f64::MIN_POSITIVE));
            worst = worst.max(rel);
            values.push(lambda);
            vectors.push((0..nd).map(|r| Complex64::new(re[r], im[r])).collect::<Vec<_>>());
        }
        if worst <= opts.tol {
            let mut idx: Vec<(Complex64, usize)> = values.iter().copied().zip(0..).collect();
            sort_desc(&mut idx);
            return Ok(Spectrum {
                values: idx.iter().map(|&(z, _)| z).collect(),
                vectors: Some(idx.iter().map(|&(_, i)| vectors[i].clone()).collect()),
                method: EigenMethod::Iterative,
            });
        }
        for &c in order.iter().take(p) {
            let (re, im) = ritz(c);
            if block.len() < p {
                block.push(re);
            }
            if s[c].im.abs() > 0.0 && block.len() < p {
                block.push(im);
            }
        }
        let mut ortho = Vec::new();
        for v in block.drain(..) {
            mgs_append(&mut ortho, v);
        }
        while ortho.len() < p {
            let v: Vec<f64> = (0..nd).map(|_| rng.random::<f64>() - 0.5).collect();
            mgs_append(&mut ortho, v);
        }
        block = ortho;
    }
    Err(Error::NoConvergence {
        what: "shift-invert block Arnoldi",
        residual: worst,
    })
}

/// Threshold above which the leading real part counts as positive.
pub const STABILIZE_EPS: f64 = 1e-12;

/// Shift the operator so its spectrum lies in the closed left half-plane:
/// returns (L − λ̂₀ I, λ̂₀) when λ̂₀ = max Re λ exceeds [`STABILIZE_EPS`],
/// otherwise (L, 0).
pub fn stabilize(op: &BlockOperator, max_real: f64) -> Result<(BlockOperator, f64)> {
    if max_real > STABILIZE_EPS {
        Ok((op.shifted(-max_real)?, max_real))
    } else {
        Ok((op.clone(), 0.0))
    }
}

/// Leading real part, dense for small operators and iterative otherwise.
pub fn leading_real_part(op: &BlockOperator) -> Result<f64> {
    if op.dim() <= 2000 {
        Ok(eigen_dense(op, false)?.max_real())
    } else {
        let opts = ExtremalOptions {
            count: 1,
            guard: 4,
            ..ExtremalOptions::default()
        };
        Ok(eigen_extremal(op, opts)?.max_real())
    }
}

/// Required ‖(aI + cL)u − f‖∞ / ‖f‖∞ of every shifted solve.
pub const SOLVE_TOL: f64 = 1e-8;
/// Direct factorization is allowed below this dN.
pub const DIRECT_LIMIT: usize = 20000;

/// Scalar CSR copy of a I + c L with an ILU(0) factorization on its pattern.
struct Ilu0 {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    a: Vec<f64>,
    lu: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    fn new(op: &BlockOperator, a: f64, c: f64) -> Result<Ilu0> {
        let d = op.block_dim();
        let nd = op.dim();
        let mut row_ptr = Vec::with_capacity(nd + 1);
        let mut cols = Vec::with_capacity(op.stored_scalars());
        let mut vals = Vec::with_capacity(op.stored_scalars());
        row_ptr.push(0);
        for i in 0..op.points() {
            for r in 0..d {
                for (j, b) in op.row(i) {
                    for q in 0..d {
                        cols.push(j * d + q);
                        let mut v = c * b[r * d + q];
                        if j == i && q == r {
                            v += a;
                        }
                        vals.push(v);
                    }
                }
                row_ptr.push(cols.len());
            }
        }
        let mut diag = vec![usize::MAX; nd];
        for (i, dg) in diag.iter_mut().enumerate() {
            for p in row_ptr[i]..row_ptr[i + 1] {
                if cols[p] == i {
                    *dg = p;
                }
            }
            if *dg == usize::MAX {
                return invalid("operator lacks a diagonal block");
            }
        }
        let mut lu = vals.clone();
        let mut pos = vec![usize::MAX; nd];
        for i in 0..nd {
            for p in row_ptr[i]..row_ptr[i + 1] {
                pos[cols[p]] = p;
            }
            for p in row_ptr[i]..row_ptr[i + 1] {
                let k = cols[p];
                if k >= i {
                    break;
                }
                let piv = lu[diag[k]];
                if piv == 0.0 {
                    continue;
                }
                let f = lu[p] / piv;
                lu[p] = f;
                for q in diag[k] + 1..row_ptr[k + 1] {
                    let t = pos[cols[q]];
                    if t != usize::MAX {
                        lu[t] -= f * lu[q];
                    }
                }
            }
            for p in row_ptr[i]..row_ptr[i + 1] {
                pos[cols[p]] = usize::MAX;
            }
            if lu[diag[i]] == 0.0 || !lu[diag[i]].is_finite() {
                lu[diag[i]] = 1e-12;
            }
        }
        Ok(Ilu0 {
            row_ptr,
            cols,
            a: vals,
            lu,
            diag,
        })
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.a[p] * x[self.cols[p]];
            }
            *yi = s;
        });
    }

    fn precondition(&self, v: &mut [f64]) {
        let nd = v.len();
        for i in 0..nd {
            let mut s = v[i];
            for p in self.row_ptr[i]..self.diag[i] {
                s -= self.lu[p] * v[self.cols[p]];
            }
            v[i] = s;
        }
        for i in (0..nd).rev() {
            let mut s = v[i];
            for p in self.diag[i] + 1..self.row_ptr[i + 1] {
                s -= self.lu[p] * v[self.cols[p]];
            }
            v[i] = s / self.lu[self.diag[i]];
        }
    }
}

/// Right-preconditioned restarted GMRES. Returns (solution, relative 2-norm residual).
fn gmres(m: &Ilu0, f: &[f64], x0: Option<&[f64]>, tol: f64, restart: usize, max_iter: usize) -> (Vec<f64>, f64) {
    let nd = f.len();
    let fnorm = norm2(f).max(f64::MIN_POSITIVE);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; nd]);
    let mut r = vec![0.0; nd];
    let mut w = vec![0.0; nd];
    let mut iters = 0;
    loop {
        m.matvec(&x, &mut r);
        r.iter_mut().zip(f).for_each(|(ri, fi)| *ri = fi - *ri);
        let beta = norm2(&r);
        if beta / fnorm <= tol || iters >= max_iter {
            return (x, beta / fnorm);
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::new();
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut used = 0;
        for j in 0..restart {
            let mut zj = v[j].clone();
            m.precondition(&mut zj);
            m.matvec(&zj, &mut w);
            z.push(zj);
            for (i, vi) in v.iter().enumerate() {
                let hij = dot(&w, vi);
                h[i][j] = hij;
                w.iter_mut().zip(vi).for_each(|(a, b)| *a -= hij * b);
            }
            let hn = norm2(&w);
            h[j + 1][j] = hn;
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let den = (h[j][j] * h[j][j] + h[j + 1][j] * h[j + 1][j]).sqrt();
            if den == 0.0 {
                break;
            }
            cs[j] = h[j][j] / den;
            sn[j] = h[j + 1][j] / den;
            h[j][j] = den;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            iters += 1;
            if g[j + 1].abs() / fnorm <= tol * 0.5 || hn == 0.0 || iters >= max_iter {
                break;
            }
            v.push(w.iter().map(|a| a / hn).collect());
        }
        let mut yv = vec![0.0; used];
        for i in (0..used).rev() {
            let mut s = g[i];
            for q in i + 1..used {
                s -= h[i][q] * yv[q];
            }
            yv[i] = s / h[i][i];
        }
        for (q, zq) in z.iter().take(used).enumerate() {
            x.iter_mut().zip(zq).for_each(|(a, b)| *a += yv[q] * b);
        }
        if used == 0 {
            return (x, beta / fnorm);
        }
    }
}

/// Reusable solver for (a I + c L) u = f.
pub struct ShiftedSolver {
    op: BlockOperator,
    a: f64,
    c: f64,
    ilu: Ilu0,
    direct: OnceLock<Option<Lu<usize, f64>>>,
    prefer_direct: bool,
}

impl ShiftedSolver {
    pub fn new(op: &BlockOperator, a: f64, c: f64) -> Result<ShiftedSolver> {
        Ok(ShiftedSolver {
            ilu: Ilu0::new(op, a, c)?,
            op: op.clone(),
            a,
            c,
            direct: OnceLock::new(),
            prefer_direct: false,
        })
    }

    /// Use the sparse direct factorization first (for many solves with one matrix).
    pub fn prefer_direct(mut self, yes: bool) -> Self {
        self.prefer_direct = yes && self.op.dim() < DIRECT_LIMIT;
        self
    }

    fn residual(&self, u: &[f64], f: &[f64]) -> Result<f64> {
        let lu = self.op.apply(u)?;
        let fmax = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rmax = (0..f.len()).fold(0.0f64, |m, i| m.max((self.a * u[i] + self.c * lu[i] - f[i]).abs()));
        Ok(if fmax > 0.0 { rmax / fmax } else { rmax })
    }

    fn lu(&self) -> Option<&Lu<usize, f64>> {
        self.direct
            .get_or_init(|| {
                if self.op.dim() >= DIRECT_LIMIT {
                    return None;
                }
                self.op.to_faer(self.a, self.c).ok()?.sp_lu().ok()
            })
            .as_ref()
    }

    fn solve_direct(&self, f: &[f64]) -> Option<Vec<f64>> {
        let lu = self.lu()?;
        let nd = f.len();
        let mut rhs = Mat::<f64>::from_fn(nd, 1, |i, _| f[i]);
        lu.solve_in_place(rhs.as_mut());
        Some((0..nd).map(|i| rhs[(i, 0)]).collect())
    }

    /// Solve with an optional initial guess; the residual bound is checked afterwards.
    pub fn solve(&self, f: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        if f.len() != self.op.dim() {
            return invalid(format!("right-hand side has length {}, expected {}", f.len(), self.op.dim()));
        }
        if f.iter().all(|v| *v == 0.0) {
            return Ok(vec![0.0; f.len()]);
        }
        let mut best = f64::INFINITY;
        if self.prefer_direct {
            if let Some(u) = self.solve_direct(f) {
                let r = self.residual(&u, f)?;
                if r <= SOLVE_TOL {
                    return Ok(u);
                }
                best = r;
            }
        }
        let (u, _) = gmres(&self.ilu, f, guess, 1e-11, 60, 1200);
        let r = self.residual(&u, f)?;
        if r <= SOLVE_TOL {
            return Ok(u);
        }
        best = best.min(r);
        if !self.prefer_direct {
            if let Some(u) = self.solve_direct(f) {
                let r = self.residual(&u, f)?;
                if r <= SOLVE_TOL {
                    return Ok(u);
                }
                best = best.min(r);
            }
        }
        Err(Error::NoConvergence {
            what: "shifted linear solve",
            residual: best,
        })
    }
}

/// Solve (a I − L) u = f.
pub fn solve_shifted(a: f64, op: &BlockOperator, f: &[f64]) -> Result<Vec<f64>> {
    ShiftedSolver::new(op, a, -1.0)?.solve(f, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_op(vals: &[f64]) -> BlockOperator {
        let rows = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| vec![(i, DMatrix::from_element(1, 1, v))])
            .collect();
        BlockOperator::from_block_rows(vals.len(), 1, rows).unwrap()
    }

    #[test]
    fn diagonal_spectrum_is_exact() {
        let op = diag_op(&[-3.0, -1.0, -2.0, -4.0]);
        let s = eigen_dense(&op, false).unwrap();
        let re: Vec<f64> = s.values.iter().map(|z| z.re).collect();
        assert_eq!(re, vec![-1.0, -2.0, -3.0, -4.0]);
    }

    #[test]
    fn shifted_solve_on_diagonal() {
        let op = diag_op(&[-2.0; 5]);
        let u = solve_shifted(1.0, &op, &[3.0; 5]).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let zero = diag_op(&[0.0; 3]);
        let u = solve_shifted(1.0, &zero, &[1.0, 2.0, 3.0]).unwrap();
        assert!((u[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stabilize_rules() {
        let op = diag_op(&[-0.1, -1.0]);
        let (same, s) = stabilize(&op, -0.1).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(same, op);
        let op = diag_op(&[0.001, -1.0]);
        let (shifted, s) = stabilize(&op, 0.001).unwrap();
        assert_eq!(s, 0.001);
        let m = eigen_dense(&shifted, false).unwrap().max_real();
        assert!(m.abs() <= 1e-10);
        let (_, again) = stabilize(&shifted, m).unwrap();
        assert_eq!(again, 0.0);
    }

    #[test]
    fn extremal_matches_dense_on_diagonal() {
        let vals: Vec<f64> = (0..200).map(|i| -(i as f64) * 0.37 - 0.05).collect();
        let op = diag_op(&vals);
        let s = eigen_extremal(&op, ExtremalOptions { count: 5, ..Default::default() }).unwrap();
        for (i, z) in s.values.iter().enumerate() {
            assert!((z.re - vals[i]).abs() < 1e-8, "{z} vs {}", vals[i]);
        }
    }
}
