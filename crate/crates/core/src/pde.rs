//! Screened Poisson solves and method-of-lines integration of vector
//! diffusion and manifold Burgers' equations.

use std::sync::Arc;

use crate::analytic::{self, Field};
use crate::error::{invalid, Error, Result};
use crate::geometry::PointCloud;
use crate::operators::{solve_shifted, BlockOperator, CovariantOperator, LaplacianKind, ShiftedSolver};
use crate::tangent::FrameField;

/// Time-dependent forcing in global-frame coefficients.
pub type Forcing = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// u_t = ν L u + f(t) − ∇_u u (the last term only when `covariant` is set).
#[derive(Clone)]
pub struct EvolutionProblem {
    pub operator: BlockOperator,
    pub nu: f64,
    pub forcing: Option<Forcing>,
    pub initial: Vec<f64>,
    pub covariant: Option<CovariantOperator>,
}

impl EvolutionProblem {
    pub fn new(operator: BlockOperator, nu: f64, initial: Vec<f64>) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return invalid("viscosity must be finite and nonnegative");
        }
        if initial.len() != operator.dim() {
            return invalid(format!("initial state has length {}, expected {}", initial.len(), operator.dim()));
        }
        Ok(EvolutionProblem {
            operator,
            nu,
            forcing: None,
            initial,
            covariant: None,
        })
    }

    pub fn with_forcing(mut self, f: Forcing) -> Self {
        self.forcing = Some(f);
        self
    }

    pub fn with_covariant(mut self, c: CovariantOperator) -> Result<Self> {
        if c.dim() != self.operator.dim() {
            return invalid("covariant operator does not match the Laplacian");
        }
        self.covariant = Some(c);
        Ok(self)
    }

    fn forcing_at(&self, t: f64) -> Result<Option<Vec<f64>>> {
        match &self.forcing {
            None => Ok(None),
            Some(f) => {
                let v = f(t);
                if v.len() != self.operator.dim() {
                    return invalid("forcing has the wrong length");
                }
                Ok(Some(v))
            }
        }
    }

    /// f(t) − ∇_u u.
    fn explicit_part(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let mut e = self.forcing_at(t)?.unwrap_or_else(|| vec![0.0; u.len()]);
        if let Some(c) = &self.covariant {
            for (ei, ci) in e.iter_mut().zip(c.apply(u)?) {
                *ei -= ci;
            }
        }
        Ok(e)
    }

    /// Full right-hand side ν L u + f − ∇_u u.
    pub fn rhs(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.explicit_part(t, u)?;
        if self.nu != 0.0 {
            for (ri, li) in r.iter_mut().zip(self.operator.apply(u)?) {
                *ri += self.nu * li;
            }
        }
        Ok(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Rk2,
    Bdf2,
    Cnab,
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rk2" => Ok(Scheme::Rk2),
            "bdf2" => Ok(Scheme::Bdf2),
            "cnab" => Ok(Scheme::Cnab),
            o => invalid(format!("unknown time stepper '{o}'")),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Rk2 => "rk2",
            Scheme::Bdf2 => "bdf2",
            Scheme::Cnab => "cnab",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeStepper {
    pub scheme: Scheme,
    pub dt: f64,
}

impl TimeStepper {
    pub fn new(scheme: Scheme, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid("time step must be positive");
        }
        Ok(TimeStepper { scheme, dt })
    }
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub t: f64,
    pub u: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory holds at least the initial state")
    }
}

fn steps_for(span: f64, dt: f64, what: &str) -> Result<usize> {
    let n = (span / dt).round();
    if n < 1.0 || ((n * dt - span).abs() > 1e-9 * span.max(dt)) {
        return invalid(format!("time step does not divide the {what} {span}"));
    }
    Ok(n as usize)
}

fn rk2_step(p: &EvolutionProblem, t: f64, dt: f64, u: &[f64]) -> Result<Vec<f64>> {
    let k1 = p.rhs(t, u)?;
    let mid: Vec<f64> = u.iter().zip(&k1).map(|(a, b)| a + 0.5 * dt * b).collect();
    let k2 = p.rhs(t + 0.5 * dt, &mid)?;
    Ok(u.iter().zip(&k2).map(|(a, b)| a + dt * b).collect())
}

fn check_finite(u: &[f64], step: usize) -> Result<()> {
    if u.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::BlowUp { step })
    }
}

/// Integrate to `t_end`, recording a snapshot every `every` time units
/// (or only the endpoints when `None`).
pub fn integrate(p: &EvolutionProblem, stepper: TimeStepper, t_end: f64, every: Option<f64>) -> Result<Trajectory> {
    let dt = stepper.dt;
    let steps = steps_for(t_end, dt, "final time")?;
    let stride = match every {
        Some(s) => steps_for(s, dt, "snapshot interval")?,
        None => steps,
    };
    let nd = p.initial.len();
    // a I + c L with a = 1 and c = −θ ν dt-scaled for the implicit schemes
    let implicit_c = match stepper.scheme {
        Scheme::Rk2 => None,
        Scheme::Bdf2 => Some(-2.0 * dt * p.nu / 3.0),
        Scheme::Cnab => Some(-0.5 * dt * p.nu),
    };
    let solver = match implicit_c {
        Some(c) if c != 0.0 => Some(ShiftedSolver::new(&p.operator, 1.0, c)?.prefer_direct(true)),
        _ => None,
    };
    let solve = |rhs: Vec<f64>, guess: &[f64]| -> Result<Vec<f64>> {
        match &solver {
            Some(s) => s.solve(&rhs, Some(guess)),
            None => Ok(rhs),
        }
    };

    let mut traj = Trajectory {
        snapshots: vec![Snapshot {
            t: 0.0,
            u: p.initial.clone(),
        }],
    };
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None; // (u^{n−1}, E^{n−1})
    let mut u = p.initial.clone();
    for step in 0..steps {
        let t = step as f64 * dt;
        let en = match stepper.scheme {
            Scheme::Rk2 => Vec::new(),
            _ => p.explicit_part(t, &u)?,
        };
        let next = match (stepper.scheme, &prev) {
            (Scheme::Rk2, _) | (_, None) => rk2_step(p, t, dt, &u)?,
            (Scheme::Bdf2, Some((um1, em1))) => {
                // explicit terms extrapolated to t^{n+1}; forcing taken there exactly
                let f1 = p.forcing_at(t + dt)?;
                let fn_ = p.forcing_at(t)?;
                let fm1 = p.forcing_at(t - dt)?;
                let rhs: Vec<f64> = (0..nd)
                    .map(|i| {
                        let mut ex = 2.0 * en[i] - em1[i];
                        if let (Some(f1), Some(f0), Some(fm)) = (&f1, &fn_, &fm1) {
                            ex += f1[i] - (2.0 * f0[i] - fm[i]);
                        }
                        (4.0 * u[i] - um1[i]) / 3.0 + 2.0 * dt / 3.0 * ex
                    })
                    .collect();
                solve(rhs, &u)?
            }
            (Scheme::Cnab, Some((_, em1))) => {
                let lu = if p.nu != 0.0 { p.operator.apply(&u)? } else { vec![0.0; nd] };
                let rhs: Vec<f64> = (0..nd)
                    .map(|i| u[i] + 0.5 * dt * p.nu * lu[i] + dt * (1.5 * en[i] - 0.5 * em1[i]))
                    .collect();
                solve(rhs, &u)?
            }
        };
        check_finite(&next, step + 1)?;
        if stepper.scheme != Scheme::Rk2 {
            prev = Some((std::mem::replace(&mut u, next), en));
        } else {
            u = next;
        }
        if (step + 1) % stride == 0 || step + 1 == steps {
            traj.snapshots.push(Snapshot {
                t: (step + 1) as f64 * dt,
                u: u.clone(),
            });
        }
    }
    Ok(traj)
}

/// Solve (a I − L) u = f.
pub fn solve_screened_poisson(op: &BlockOperator, a: f64, f: &[f64]) -> Result<Vec<f64>> {
    solve_shifted(a, op, f)
}

fn coefficients(cloud: &PointCloud, frames: &FrameField, eval: impl Fn(&crate::geometry::Manifold, &[f64]) -> Vec<f64> + Sync) -> Result<Vec<f64>> {
    let amb = analytic::over_cloud(cloud, eval)?;
    Ok(frames.to_coefficients(&amb))
}

/// T̂ᵀU for an analytic field.
pub fn field_coefficients(cloud: &PointCloud, frames: &FrameField, field: Field) -> Result<Vec<f64>> {
    coefficients(cloud, frames, |m, p| analytic::field_ambient(m, &field, p))
}

/// T̂ᵀ(a U − ΔU): right-hand side of the screened Poisson problem.
pub fn poisson_forcing(cloud: &PointCloud, frames: &FrameField, field: Field, kind: LaplacianKind, a: f64) -> Result<Vec<f64>> {
    coefficients(cloud, frames, |m, p| {
        let u = analytic::field_ambient(m, &field, p);
        let l = analytic::laplacian_ambient(m, &field, kind, p);
        u.iter().zip(l).map(|(u, l)| a * u - l).collect()
    })
}

/// Constant forcing −ν ΔW, so that W is the steady state of the diffusion.
pub fn diffusion_forcing(cloud: &PointCloud, frames: &FrameField, field: Field, kind: LaplacianKind, nu: f64) -> Result<Forcing> {
    let v = coefficients(cloud, frames, |m, p| {
        analytic::laplacian_ambient(m, &field, kind, p).into_iter().map(|l| -nu * l).collect()
    })?;
    Ok(Arc::new(move |_| v.clone()))
}

/// Forcing for which u(t) = cos t · V solves Burgers' equation with
/// viscosity ν: f = −sin t V + cos² t ∇_V V − ν cos t ΔV.
pub fn burgers_forcing(cloud: &PointCloud, frames: &FrameField, field: Field, kind: LaplacianKind, nu: f64) -> Result<Forcing> {
    let v = field_coefficients(cloud, frames, field)?;
    let cov = coefficients(cloud, frames, |m, p| analytic::covariant_ambient(m, &field, p))?;
    let lap = coefficients(cloud, frames, |m, p| analytic::laplacian_ambient(m, &field, kind, p))?;
    Ok(Arc::new(move |t: f64| {
        let (s, c) = t.sin_cos();
        (0..v.len())
            .map(|i| -s * v[i] + c * c * cov[i] - nu * c * lap[i])
            .collect()
    }))
}

/// T̂ᵀx at every point.
pub fn position_coefficients(cloud: &PointCloud, frames: &FrameField) -> Vec<f64> {
    frames.to_coefficients(cloud.points())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn diag(vals: &[f64]) -> BlockOperator {
        let rows = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| vec![(i, DMatrix::from_element(1, 1, v))])
            .collect();
        BlockOperator::from_block_rows(vals.len(), 1, rows).unwrap()
    }

    #[test]
    fn zero_stays_zero() {
        let p = EvolutionProblem::new(diag(&[-1.0, -2.0]), 0.1, vec![0.0; 2]).unwrap();
        for s in [Scheme::Rk2, Scheme::Bdf2, Scheme::Cnab] {
            let tr = integrate(&p, TimeStepper::new(s, 0.01).unwrap(), 0.1, None).unwrap();
            assert!(tr.last().u.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn constant_forcing_is_linear_in_time() {
        let f: Forcing = Arc::new(|_| vec![2.0, -1.0]);
        let p = EvolutionProblem::new(diag(&[-5.0, -3.0]), 0.0, vec![1.0, 1.0])
            .unwrap()
            .with_forcing(f);
        let tr = integrate(&p, TimeStepper::new(Scheme::Rk2, 0.01).unwrap(), 0.5, Some(0.25)).unwrap();
        assert_eq!(tr.snapshots.len(), 3);
        let u = &tr.last().u;
        assert!((u[0] - 2.0).abs() < 1e-12 && (u[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn schemes_are_second_order() {
        let p = EvolutionProblem::new(diag(&[-1.0]), 1.0, vec![1.0]).unwrap();
        for s in [Scheme::Rk2, Scheme::Bdf2, Scheme::Cnab] {
            let err = |dt: f64| (integrate(&p, TimeStepper::new(s, dt).unwrap(), 1.0, None).unwrap().last().u[0] - (-1.0f64).exp()).abs();
            let ratio = err(0.02) / err(0.01);
            assert!((3.5..4.6).contains(&ratio), "{s}: ratio {ratio}");
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let p = EvolutionProblem::new(diag(&[-1000.0]), 1.0, vec![1.0]).unwrap();
        match integrate(&p, TimeStepper::new(Scheme::Rk2, 0.1).unwrap(), 100.0, None) {
            Err(Error::BlowUp { step }) => assert!(step > 1),
            other => panic!("expected blow-up, got {:?}", other.map(|t| t.snapshots.len())),
        }
    }

    #[test]
    fn mismatched_step_is_rejected() {
        let p = EvolutionProblem::new(diag(&[-1.0]), 1.0, vec![1.0]).unwrap();
        assert!(integrate(&p, TimeStepper::new(Scheme::Rk2, 0.3).unwrap(), 1.0, None).is_err());
    }
}
