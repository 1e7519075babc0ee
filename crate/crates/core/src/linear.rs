//! Linearization about hover, the integral-augmented tracking model, and
//! Lyapunov / eigenvalue certification of the PIDA closed loop.

use nalgebra::{DMatrix, DVector, SVector, Schur};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    state_derivative, ControlVector, Disturbance, DynamicsError, QuadParams, RigidBodyState,
};
use crate::pida::{Channel, GainSet};

/// Equilibrium tolerance on the state-derivative norm.
pub const EQUILIBRIUM_TOL: f64 = 1e-6;

/// Relative residual accepted from the Lyapunov solve.
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearError {
    #[error("point is not an equilibrium (derivative norm {0:e})")]
    NotEquilibrium(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix has eigenvalues with lambda_i + lambda_j = 0; Lyapunov equation is singular")]
    SingularPencil,
    #[error("no positive definite Lyapunov solution; system is not asymptotically stable")]
    Unstable,
    #[error("Q must be symmetric positive definite")]
    InvalidWeight,
    #[error("Lyapunov residual {0:e} above tolerance")]
    Inaccurate(f64),
    #[error("eigenvalue iteration did not converge")]
    EigenNoConvergence,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Indices into the 12-element state vector (see [`RigidBodyState::to_vector`])
/// retained by the attitude/altitude model: roll, pitch, yaw, p, q, r, w, z.
pub const ANALYSIS_STATES: [usize; 8] = [0, 1, 2, 3, 4, 5, 8, 11];
pub const ANALYSIS_LABELS: [&str; 8] = ["phi", "theta", "psi", "p", "q", "r", "w", "z"];

/// `dx = A x + B u`, `y = C x` about `(x_eq, u_eq)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub x_eq: RigidBodyState,
    pub u_eq: ControlVector,
    pub labels: Vec<String>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, LinearError> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n {
            return Err(LinearError::DimensionMismatch(format!(
                "A {}x{}, B {}x{}, C {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        Ok(Self {
            a,
            b,
            c,
            x_eq: RigidBodyState::default(),
            u_eq: ControlVector::default(),
            labels: (0..n).map(|i| format!("x{i}")).collect(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
}

/// Central-difference Jacobians of the full 12-state model.
pub fn full_jacobians(
    params: &QuadParams,
    x_eq: &RigidBodyState,
    u_eq: &ControlVector,
    h: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), LinearError> {
    let d = Disturbance::none();
    let x0 = x_eq.to_vector();
    let u0 = u_eq.as_vector();
    let f = |x: &SVector<f64, 12>, u: &nalgebra::Vector4<f64>| {
        state_derivative(
            &RigidBodyState::from_vector(x),
            &ControlVector::from_vector(u),
            &d,
            params,
        )
        .map(|s| s.to_vector())
    };
    let mut a = DMatrix::zeros(12, 12);
    for j in 0..12 {
        let step = h * x0[j].abs().max(1.0);
        let (mut xp, mut xm) = (x0, x0);
        xp[j] += step;
        xm[j] -= step;
        let col = (f(&xp, &u0)? - f(&xm, &u0)?) / (2.0 * step);
        a.set_column(j, &col);
    }
    let mut b = DMatrix::zeros(12, 4);
    for j in 0..4 {
        let step = h * u0[j].abs().max(1.0);
        let (mut up, mut um) = (u0, u0);
        up[j] += step;
        um[j] -= step;
        let col = (f(&x0, &up)? - f(&x0, &um)?) / (2.0 * step);
        b.set_column(j, &col);
    }
    Ok((a, b))
}

/// Linear attitude/altitude model about `(x_eq, u_eq)`.
///
/// States are [`ANALYSIS_LABELS`]; outputs are roll, pitch, yaw and
/// altitude (`-z`), matching the controller channels.
pub fn linearize(
    params: &QuadParams,
    x_eq: &RigidBodyState,
    u_eq: &ControlVector,
    h: f64,
) -> Result<LinearModel, LinearError> {
    let residual = state_derivative(x_eq, u_eq, &Disturbance::none(), params)?
        .to_vector()
        .norm();
    if residual >= EQUILIBRIUM_TOL {
        return Err(LinearError::NotEquilibrium(residual));
    }
    let (fa, fb) = full_jacobians(params, x_eq, u_eq, h)?;
    let n = ANALYSIS_STATES.len();
    let a = DMatrix::from_fn(n, n, |i, j| fa[(ANALYSIS_STATES[i], ANALYSIS_STATES[j])]);
    let b = DMatrix::from_fn(n, 4, |i, j| fb[(ANALYSIS_STATES[i], j)]);
    let mut c = DMatrix::zeros(4, n);
    c[(0, 0)] = 1.0;
    c[(1, 1)] = 1.0;
    c[(2, 2)] = 1.0;
    c[(3, 7)] = -1.0;
    Ok(LinearModel {
        a,
        b,
        c,
        x_eq: *x_eq,
        u_eq: *u_eq,
        labels: ANALYSIS_LABELS.iter().map(|s| s.to_string()).collect(),
    })
}

/// Hover linearization with a relative step of 1e-6.
pub fn linearize_hover(params: &QuadParams) -> Result<LinearModel, LinearError> {
    linearize(
        params,
        &RigidBodyState::default(),
        &ControlVector::hover(params),
        1e-6,
    )
}

/// Plant augmented with integral-of-tracking-error states:
/// `[dx; dxn] = [[A, 0], [-C, 0]] [x; xn] + [B; 0] u + [0; I] r`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Reference input matrix.
    pub r: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

pub fn augment_for_tracking(model: &LinearModel) -> Result<AugmentedModel, LinearError> {
    let n = model.a.nrows();
    let m = model.b.ncols();
    let p = model.c.nrows();
    if model.a.ncols() != n || model.b.nrows() != n || model.c.ncols() != n {
        return Err(LinearError::DimensionMismatch("inconsistent linear model".into()));
    }
    let mut a = DMatrix::zeros(n + p, n + p);
    a.view_mut((0, 0), (n, n)).copy_from(&model.a);
    a.view_mut((n, 0), (p, n)).copy_from(&(-&model.c));
    let mut b = DMatrix::zeros(n + p, m);
    b.view_mut((0, 0), (n, m)).copy_from(&model.b);
    let mut r = DMatrix::zeros(n + p, p);
    r.view_mut((n, 0), (p, p)).fill_with_identity();
    let mut c = DMatrix::zeros(p, n + p);
    c.view_mut((0, 0), (p, n)).copy_from(&model.c);
    Ok(AugmentedModel { a, b, r, c })
}

/// Sweep limit of [`balance`]; it normally converges in a handful.
const BALANCE_SWEEPS: usize = 100;
/// QR iterations allowed per eigenvalue before giving up.
const SCHUR_ITERATIONS_PER_DIM: usize = 1000;

/// Diagonal similarity scaling that equalizes row and column norms
/// (powers of two, so the spectrum is unchanged bit-for-bit in exact
/// arithmetic). Unbalanced closed-loop matrices with exact zeros can make
/// the unshifted-deflation QR iteration cycle forever.
pub fn balance(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut b = a.clone();
    for _ in 0..BALANCE_SWEEPS {
        let mut converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let (mut cc, mut rr) = (c, r);
            while cc < rr / 2.0 {
                cc *= 2.0;
                rr /= 2.0;
                f *= 2.0;
            }
            while cc >= rr * 2.0 {
                cc /= 2.0;
                rr *= 2.0;
                f /= 2.0;
            }
            if (cc + rr) < 0.95 * s {
                converged = false;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
        if converged {
            break;
        }
    }
    b
}

/// Complex eigenvalues as `(re, im)` pairs.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<(f64, f64)>, LinearError> {
    let n = a.nrows();
    let schur = Schur::try_new(balance(a), f64::EPSILON, SCHUR_ITERATIONS_PER_DIM * n.max(1))
        .ok_or(LinearError::EigenNoConvergence)?;
    Ok(schur.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect())
}

fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

/// Solve `A^T P + P A = -Q` for symmetric positive definite `P`.
///
/// The equation is solved as the Kronecker system
/// `(I (x) A^T + A^T (x) I) vec(P) = -vec(Q)`. Stability is decided from the
/// definiteness of the solution, not from the spectrum: a solution that is
/// not positive definite yields [`LinearError::Unstable`].
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LinearError> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(LinearError::DimensionMismatch(format!(
            "A {}x{}, Q {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let q_norm = q.norm();
    if (q - q.transpose()).norm() > 1e-12 * q_norm.max(1.0) || !is_positive_definite(q) {
        return Err(LinearError::InvalidWeight);
    }

    let eig = eigenvalues(a)?;
    let scale = eig
        .iter()
        .map(|(re, im)| re.hypot(*im))
        .fold(1.0_f64, f64::max);
    for (i, (ri, ii)) in eig.iter().enumerate() {
        for (rj, ij) in &eig[i..] {
            if (ri + rj).hypot(ii + ij) < 1e-10 * scale {
                return Err(LinearError::SingularPencil);
            }
        }
    }

    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -DVector::from_column_slice(q.as_slice());
    let vec_p = k.lu().solve(&rhs).ok_or(LinearError::SingularPencil)?;
    let p = DMatrix::from_column_slice(n, n, vec_p.as_slice());
    let p = (&p + p.transpose()) * 0.5;

    let residual = (a.transpose() * &p + &p * a + q).norm();
    if residual >= LYAPUNOV_RESIDUAL_TOL * q_norm {
        return Err(LinearError::Inaccurate(residual / q_norm));
    }
    if !is_positive_definite(&p) {
        return Err(LinearError::Unstable);
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `(re, im)` pairs.
    pub eigenvalues: Vec<(f64, f64)>,
    pub max_real_part: f64,
    /// Row-major Lyapunov matrix for `Q = I`, when one exists.
    pub lyapunov_p: Option<Vec<Vec<f64>>>,
    pub is_stable: bool,
}

impl StabilityReport {
    pub fn for_matrix(a: &DMatrix<f64>) -> Result<Self, LinearError> {
        let eig = eigenvalues(a)?;
        let max_real_part = eig.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        let q = DMatrix::identity(a.nrows(), a.nrows());
        let p = match solve_lyapunov(a, &q) {
            Ok(p) => Some(p),
            Err(LinearError::Unstable | LinearError::SingularPencil) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            eigenvalues: eig,
            max_real_part,
            is_stable: p.is_some(),
            lyapunov_p: p.map(|p| p.row_iter().map(|r| r.iter().copied().collect()).collect()),
        })
    }
}

/// Closed-loop state matrix of the plant with one PIDA per output channel.
///
/// Each channel contributes two first-order filter states and, when
/// `ki != 0`, an integrator, appended after the plant states in the order
/// (integrator, filter 1, filter 2) per channel. An integrator with zero gain
/// never reaches the output and would only add an unobservable pole at the
/// origin, so it is left out. Output `i` drives input column `i`;
/// references are zero.
pub fn closed_loop_matrix(model: &LinearModel, gains: &GainSet) -> Result<DMatrix<f64>, LinearError> {
    let n = model.n_states();
    let p = model.c.nrows();
    if p != Channel::ALL.len() || model.b.ncols() != p {
        return Err(LinearError::DimensionMismatch(format!(
            "closed loop needs 4 outputs and 4 inputs, got {} and {}",
            p,
            model.b.ncols()
        )));
    }
    gains
        .validate()
        .map_err(|e| LinearError::DimensionMismatch(e.to_string()))?;
    let has_integrator = |ch: Channel| gains.get(ch).ki != 0.0;
    let total = n + Channel::ALL.iter().map(|c| 2 + usize::from(has_integrator(*c))).sum::<usize>();
    let mut a_cl = DMatrix::zeros(total, total);
    let mut u_rows = DMatrix::zeros(p, total);

    let mut next = n;
    for (j, ch) in Channel::ALL.iter().enumerate() {
        let g = gains.get(*ch);
        let xi = has_integrator(*ch).then(|| {
            next += 1;
            next - 1
        });
        let (eta1, eta2) = (next, next + 1);
        next += 2;
        let mut e_row = DVector::zeros(total);
        for k in 0..n {
            e_row[k] = -model.c[(j, k)];
        }
        let mut f1_row = e_row.clone();
        f1_row[eta1] -= 1.0;
        f1_row /= g.tf;
        let mut f2_row = f1_row.clone();
        f2_row[eta2] -= 1.0;
        f2_row /= g.tf;
        let mut u_row = &e_row * g.kp + &f1_row * g.kd + &f2_row * g.ka;
        if let Some(xi) = xi {
            u_row[xi] += g.ki;
            a_cl.set_row(xi, &e_row.transpose());
        }
        a_cl.set_row(eta1, &f1_row.transpose());
        a_cl.set_row(eta2, &f2_row.transpose());
        u_rows.set_row(j, &u_row.transpose());
    }
    let mut top = &model.b * &u_rows;
    top.view_mut((0, 0), (n, n)).zip_apply(&model.a, |v, a| *v += a);
    a_cl.view_mut((0, 0), (n, total)).copy_from(&top);
    Ok(a_cl)
}

pub fn certify_closed_loop(model: &LinearModel, gains: &GainSet) -> Result<StabilityReport, LinearError> {
    StabilityReport::for_matrix(&closed_loop_matrix(model, gains)?)
}
