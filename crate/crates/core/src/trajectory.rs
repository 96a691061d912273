//! Quintic Hermite trajectories, one polynomial per axis.
//!
//! A trajectory is fully determined by its start and end derivatives
//! (position, velocity, acceleration) and a fixed horizon `T`. The
//! coefficient vector of each axis is `a = M d` where `d` stacks the start
//! and end derivatives and `M` depends on `T` only.

use nalgebra::{Matrix6, Matrix6x3, RowVector6, Vector3, Vector6};

use crate::error::{invalid, Error, Result};

/// Highest derivative order `evaluate` supports (jerk).
pub const MAX_ORDER: usize = 3;

/// Position, velocity and acceleration of one boundary of a segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryDerivatives {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

impl BoundaryDerivatives {
    pub fn new(position: Vector3<f64>, velocity: Vector3<f64>, acceleration: Vector3<f64>) -> Self {
        Self { position, velocity, acceleration }
    }

    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self::new(position, Vector3::zeros(), Vector3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().chain(self.velocity.iter()).chain(self.acceleration.iter()).all(|v| v.is_finite())
    }

    /// The (p, v, a) triple of one axis.
    pub fn axis(&self, axis: usize) -> [f64; 3] {
        [self.position[axis], self.velocity[axis], self.acceleration[axis]]
    }
}

/// Maps stacked boundary derivatives `[p0, v0, a0, pT, vT, aT]` to the six
/// monomial coefficients of a quintic on `[0, T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermiteBasis {
    horizon: f64,
    matrix: Matrix6<f64>,
}

impl HermiteBasis {
    pub fn new(horizon: f64) -> Result<Self> {
        Ok(Self { horizon, matrix: hermite_matrix(horizon)? })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.matrix
    }

    /// Right 6x3 block of `M`: the columns acting on the end derivatives.
    pub fn end_block(&self) -> Matrix6x3<f64> {
        self.matrix.fixed_view::<6, 3>(0, 3).into_owned()
    }

    /// Sensitivity of the order-`order` derivative at time `t` to the end
    /// derivatives `(pT, vT, aT)` of the same axis.
    pub fn end_sensitivity(&self, t: f64, order: usize) -> Vector3<f64> {
        let row = monomial_row(t, order);
        (row * self.end_block()).transpose()
    }
}

/// Closed-form inverse of the boundary-condition matrix of a quintic.
pub fn hermite_matrix(horizon: f64) -> Result<Matrix6<f64>> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(invalid(format!("horizon must be positive, got {horizon}")));
    }
    let t = horizon;
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    #[rustfmt::skip]
    let m = Matrix6::new(
        1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.5, 0.0, 0.0, 0.0,
        -10.0 / t3, -6.0 / t2, -1.5 / t, 10.0 / t3, -4.0 / t2, 0.5 / t,
        15.0 / t4, 8.0 / t3, 1.5 / t2, -15.0 / t4, 7.0 / t3, -1.0 / t2,
        -6.0 / t5, -3.0 / t4, -0.5 / t3, 6.0 / t5, -3.0 / t4, 0.5 / t3,
    );
    Ok(m)
}

/// Row vector `d^k/dt^k [1, t, t^2, t^3, t^4, t^5]`.
pub fn monomial_row(t: f64, order: usize) -> RowVector6<f64> {
    let mut row = RowVector6::zeros();
    for i in order..6 {
        let mut factor = 1.0;
        for j in 0..order {
            factor *= (i - j) as f64;
        }
        row[i] = factor * t.powi((i - order) as i32);
    }
    row
}

/// A single quintic segment per axis over `[0, horizon]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    coefficients: [Vector6<f64>; 3],
    horizon: f64,
    start: BoundaryDerivatives,
    end: BoundaryDerivatives,
}

impl Trajectory {
    pub fn from_boundary(start: BoundaryDerivatives, end: BoundaryDerivatives, horizon: f64) -> Result<Self> {
        let basis = HermiteBasis::new(horizon)?;
        Self::with_basis(&basis, start, end)
    }

    /// Builds the trajectory reusing a precomputed basis for the horizon.
    pub fn with_basis(basis: &HermiteBasis, start: BoundaryDerivatives, end: BoundaryDerivatives) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(invalid("boundary derivatives must be finite"));
        }
        let coefficients = std::array::from_fn(|axis| {
            let [p0, v0, a0] = start.axis(axis);
            let [p1, v1, a1] = end.axis(axis);
            basis.matrix() * Vector6::new(p0, v0, a0, p1, v1, a1)
        });
        Ok(Self { coefficients, horizon: basis.horizon(), start, end })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn start(&self) -> &BoundaryDerivatives {
        &self.start
    }

    pub fn end(&self) -> &BoundaryDerivatives {
        &self.end
    }

    /// Monomial coefficients `a_0..a_5` of one axis.
    pub fn coefficients(&self, axis: usize) -> &Vector6<f64> {
        &self.coefficients[axis]
    }

    /// Order-`order` derivative at time `t`, per axis.
    pub fn evaluate(&self, t: f64, order: usize) -> Result<Vector3<f64>> {
        if order > MAX_ORDER {
            return Err(Error::Unsupported(format!("derivative order {order} (max {MAX_ORDER})")));
        }
        let slack = 1e-12 * self.horizon.max(1.0);
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::OutOfRange { value: t, min: 0.0, max: self.horizon });
        }
        Ok(self.eval_clamped(t, order))
    }

    /// Like `evaluate` but clamps `t` into the horizon. Panics on orders above jerk.
    pub fn eval_clamped(&self, t: f64, order: usize) -> Vector3<f64> {
        assert!(order <= MAX_ORDER, "derivative order {order} unsupported");
        let t = t.clamp(0.0, self.horizon);
        let row = monomial_row(t, order);
        Vector3::from_fn(|axis, _| row.dot(&self.coefficients[axis].transpose()))
    }

    /// The trajectory flown `alpha` times faster: same geometry, horizon `T / alpha`.
    pub fn time_scaled(&self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(invalid(format!("time scale must be positive, got {alpha}")));
        }
        let scale = |b: &BoundaryDerivatives| {
            BoundaryDerivatives::new(b.position, b.velocity * alpha, b.acceleration * (alpha * alpha))
        };
        Self::from_boundary(scale(&self.start), scale(&self.end), self.horizon / alpha)
    }
}

/// Maximum position deviation between a trajectory and its `alpha`-time-scaled
/// counterpart, sampled at 1000 uniformly spaced phases.
pub fn time_scaled_geometry_check(traj: &Trajectory, alpha: f64) -> Result<f64> {
    const SAMPLES: usize = 1000;
    let scaled = traj.time_scaled(alpha)?;
    let mut worst = 0.0_f64;
    for k in 0..=SAMPLES {
        let s = k as f64 / SAMPLES as f64;
        let original = traj.eval_clamped(s * traj.horizon(), 0);
        let fast = scaled.eval_clamped(s * scaled.horizon(), 0);
        worst = worst.max((original - fast).norm());
    }
    Ok(worst)
}

/// Velocity and acceleration expressed in the speed-normalized space the
/// planner reasons in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizedState {
    pub velocity_n: Vector3<f64>,
    pub acceleration_n: Vector3<f64>,
    pub alpha: f64,
    pub v_max: f64,
    pub a_max: f64,
}

impl NormalizedState {
    /// Back to physical units.
    pub fn denormalize(&self) -> (Vector3<f64>, Vector3<f64>) {
        (
            self.velocity_n * (self.alpha * self.v_max),
            self.acceleration_n * (self.alpha * self.alpha * self.a_max),
        )
    }
}

pub fn normalize_state(
    velocity: Vector3<f64>,
    acceleration: Vector3<f64>,
    alpha: f64,
    v_max: f64,
    a_max: f64,
) -> Result<NormalizedState> {
    if !(alpha > 0.0 && v_max > 0.0 && a_max > 0.0) {
        return Err(invalid(format!("scales must be positive (alpha={alpha}, v_max={v_max}, a_max={a_max})")));
    }
    Ok(NormalizedState {
        velocity_n: velocity / (alpha * v_max),
        acceleration_n: acceleration / (alpha * alpha * a_max),
        alpha,
        v_max,
        a_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix6;

    fn line_traj() -> Trajectory {
        let start = BoundaryDerivatives::new(Vector3::zeros(), Vector3::new(1.0, 1.0, 1.0), Vector3::zeros());
        let end = BoundaryDerivatives::new(Vector3::new(2.0, 2.0, 2.0), Vector3::new(1.0, 1.0, 1.0), Vector3::zeros());
        Trajectory::from_boundary(start, end, 2.0).unwrap()
    }

    /// Boundary-condition matrix assembled row by row and solved with LU.
    fn oracle_coefficients(d: [f64; 6], horizon: f64) -> Vector6<f64> {
        let mut a = Matrix6::zeros();
        for k in 0..3 {
            a.set_row(k, &monomial_row(0.0, k));
            a.set_row(k + 3, &monomial_row(horizon, k));
        }
        a.lu().solve(&Vector6::from_row_slice(&d)).unwrap()
    }

    #[test]
    fn zero_boundary_gives_zero_polynomial() {
        let z = BoundaryDerivatives::at_rest(Vector3::zeros());
        let traj = Trajectory::from_boundary(z, z, 3.7).unwrap();
        for axis in 0..3 {
            assert!(traj.coefficients(axis).iter().all(|c| *c == 0.0));
        }
        for order in 0..=3 {
            assert_eq!(traj.evaluate(1.1, order).unwrap(), Vector3::zeros());
        }
    }

    #[test]
    fn constant_velocity_line_is_linear() {
        let traj = line_traj();
        let c = traj.coefficients(0);
        assert!((c[1] - 1.0).abs() < 1e-12);
        for i in [0, 2, 3, 4, 5] {
            assert!(c[i].abs() < 1e-12, "a{i} = {}", c[i]);
        }
        assert!((traj.evaluate(0.7, 0).unwrap()[0] - 0.7).abs() < 1e-12);
        assert!((traj.evaluate(0.7, 1).unwrap()[0] - 1.0).abs() < 1e-12);
        assert!(traj.evaluate(0.7, 2).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_linear_solve() {
        let d = [0.0, 2.0, 0.0, 3.0, 0.0, -1.0];
        let oracle = oracle_coefficients(d, 1.5);
        let m = hermite_matrix(1.5).unwrap();
        let ours = m * Vector6::from_row_slice(&d);
        for i in 0..6 {
            assert!((ours[i] - oracle[i]).abs() < 1e-12 * (1.0 + oracle[i].abs()), "a{i}: {} vs {}", ours[i], oracle[i]);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(hermite_matrix(0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(hermite_matrix(-1.0), Err(Error::InvalidArgument(_))));
        let traj = line_traj();
        assert!(matches!(traj.evaluate(2.5, 0), Err(Error::OutOfRange { .. })));
        assert!(matches!(traj.evaluate(-0.1, 0), Err(Error::OutOfRange { .. })));
        assert!(matches!(traj.evaluate(1.0, 4), Err(Error::Unsupported(_))));
        assert!(traj.time_scaled(0.0).is_err());
        assert!(normalize_state(Vector3::zeros(), Vector3::zeros(), 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn normalization_examples() {
        let n = normalize_state(Vector3::new(5.0, 0.0, 0.0), Vector3::zeros(), 1.0, 5.0, 3.0).unwrap();
        assert_eq!(n.velocity_n, Vector3::new(1.0, 0.0, 0.0));
        let z = normalize_state(Vector3::zeros(), Vector3::zeros(), 2.3, 5.0, 3.0).unwrap();
        assert_eq!(z.velocity_n, Vector3::zeros());
        assert_eq!(z.acceleration_n, Vector3::zeros());

        let v = Vector3::new(3.0, 1.0, -0.5);
        let a = Vector3::new(0.2, -4.0, 1.0);
        let n = normalize_state(v, a, 1.5, 5.0, 4.0).unwrap();
        let expected = [0.4, 1.0 / 7.5, -0.5 / 7.5];
        for i in 0..3 {
            assert!((n.velocity_n[i] - expected[i]).abs() < 1e-15);
        }
        let (v2, a2) = n.denormalize();
        assert!((v2 - v).norm() < 1e-12);
        assert!((a2 - a).norm() < 1e-12);
    }

    #[test]
    fn time_scaling_identity_and_line() {
        let traj = line_traj();
        assert_eq!(time_scaled_geometry_check(&traj, 1.0).unwrap(), 0.0);
        assert!(time_scaled_geometry_check(&traj, 2.0).unwrap() < 1e-12);
    }

    #[test]
    fn end_sensitivity_matches_basis() {
        let basis = HermiteBasis::new(1.3).unwrap();
        let s = basis.end_sensitivity(1.3, 0);
        assert!((s - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        let s = basis.end_sensitivity(0.0, 1);
        assert!(s.norm() < 1e-12);
    }
}
