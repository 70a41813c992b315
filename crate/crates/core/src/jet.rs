//! Truncated multivariate Taylor arithmetic.
//!
//! A [`Jet`] carries all partial derivatives up to order three of a function
//! of at most three variables at one point. It lets parametrizations and
//! manufactured fields be written once, generically over [`Scalar`], and then
//! differentiated exactly (no finite differences) to build metrics,
//! Christoffel symbols and analytic Laplacians.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

/// Number of independent variables a jet tracks.
pub const JET_VARS: usize = 3;
/// Highest derivative order kept.
pub const JET_ORDER: usize = 3;
const LEN: usize = 20;

struct Tables {
    alphas: Vec<[u8; JET_VARS]>,
    products: Vec<(usize, usize, usize)>,
    lookup: Vec<Option<usize>>,
}

fn key(a: [u8; JET_VARS]) -> usize {
    (a[0] as usize) * 16 + (a[1] as usize) * 4 + a[2] as usize
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let mut alphas = Vec::new();
        for deg in 0..=JET_ORDER as u8 {
            for a in (0..=deg).rev() {
                for b in (0..=deg - a).rev() {
                    alphas.push([a, b, deg - a - b]);
                }
            }
        }
        debug_assert_eq!(alphas.len(), LEN);
        let mut lookup = vec![None; 64];
        for (i, a) in alphas.iter().enumerate() {
            lookup[key(*a)] = Some(i);
        }
        let mut products = Vec::new();
        for (i, a) in alphas.iter().enumerate() {
            for (j, b) in alphas.iter().enumerate() {
                let s = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
                if (s[0] + s[1] + s[2]) as usize <= JET_ORDER {
                    products.push((i, j, lookup[key(s)].unwrap()));
                }
            }
        }
        Tables {
            alphas,
            products,
            lookup,
        }
    })
}

/// Scalar types that the analytic formulas are generic over.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn recip(self) -> Self;
    fn scale(self, c: f64) -> Self;

    fn powi(self, n: u32) -> Self {
        let mut out = Self::cst(1.0);
        for _ in 0..n {
            out = out * self;
        }
        out
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn recip(self) -> Self {
        1.0 / self
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
    fn powi(self, n: u32) -> Self {
        f64::powi(self, n as i32)
    }
}

/// Taylor coefficients c_α with f(p + h) = Σ c_α h^α, |α| ≤ 3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    c: [f64; LEN],
}

impl Jet {
    pub fn constant(v: f64) -> Jet {
        let mut c = [0.0; LEN];
        c[0] = v;
        Jet { c }
    }

    /// The coordinate function `x_i` expanded around `value`.
    pub fn variable(value: f64, i: usize) -> Jet {
        assert!(i < JET_VARS);
        let mut j = Jet::constant(value);
        let mut a = [0u8; JET_VARS];
        a[i] = 1;
        j.c[tables().lookup[key(a)].unwrap()] = 1.0;
        j
    }

    /// Jets for the point `p` (one variable per entry).
    pub fn point(p: &[f64]) -> Vec<Jet> {
        p.iter()
            .enumerate()
            .map(|(i, &v)| Jet::variable(v, i))
            .collect()
    }

    fn coeff(&self, a: [u8; JET_VARS]) -> f64 {
        match tables().lookup.get(key(a)).copied().flatten() {
            Some(i) => self.c[i],
            None => 0.0,
        }
    }

    /// Partial derivative D^α at the expansion point.
    pub fn derivative(&self, a: [u8; JET_VARS]) -> f64 {
        let fact = |k: u8| (1..=k as u64).product::<u64>() as f64;
        self.coeff(a) * fact(a[0]) * fact(a[1]) * fact(a[2])
    }

    pub fn d1(&self, i: usize) -> f64 {
        let mut a = [0u8; JET_VARS];
        a[i] = 1;
        self.derivative(a)
    }

    pub fn d2(&self, i: usize, j: usize) -> f64 {
        let mut a = [0u8; JET_VARS];
        a[i] += 1;
        a[j] += 1;
        self.derivative(a)
    }

    /// ∂/∂x_i as a jet; the result is exact up to order two.
    pub fn diff(&self, i: usize) -> Jet {
        let t = tables();
        let mut out = [0.0; LEN];
        for (k, a) in t.alphas.iter().enumerate() {
            if a[i] == 0 {
                continue;
            }
            let mut b = *a;
            b[i] -= 1;
            out[t.lookup[key(b)].unwrap()] += a[i] as f64 * self.c[k];
        }
        Jet { c: out }
    }

    fn compose(self, f: [f64; 4]) -> Jet {
        let mut h = self;
        h.c[0] = 0.0;
        let h2 = h * h;
        let h3 = h2 * h;
        let mut out = [0.0; LEN];
        for k in 0..LEN {
            out[k] = f[1] * h.c[k] + f[2] * 0.5 * h2.c[k] + f[3] / 6.0 * h3.c[k];
        }
        out[0] = f[0];
        Jet { c: out }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        for k in 0..LEN {
            self.c[k] += o.c[k];
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, o: Jet) -> Jet {
        for k in 0..LEN {
            self.c[k] -= o.c[k];
        }
        self
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        for v in self.c.iter_mut() {
            *v = -*v;
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut out = [0.0; LEN];
        for &(i, j, k) in &tables().products {
            out[k] += self.c[i] * o.c[j];
        }
        Jet { c: out }
    }
}

impl Scalar for Jet {
    fn cst(v: f64) -> Self {
        Jet::constant(v)
    }
    fn value(&self) -> f64 {
        self.c[0]
    }
    fn sin(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([s, c, -s, -c])
    }
    fn cos(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose([c, -s, -c, s])
    }
    fn sqrt(self) -> Self {
        let s = self.c[0].sqrt();
        self.compose([s, 0.5 / s, -0.25 / (s * s * s), 0.375 / s.powi(5)])
    }
    fn recip(self) -> Self {
        let a = self.c[0];
        self.compose([1.0 / a, -1.0 / (a * a), 2.0 / a.powi(3), -6.0 / a.powi(4)])
    }
    fn scale(mut self, c: f64) -> Self {
        for v in self.c.iter_mut() {
            *v *= c;
        }
        self
    }
}
