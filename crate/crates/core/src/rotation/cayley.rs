use crate::error::{Error, Result};
use crate::linalg::{solve, Matrix};

const STEP_EPS: f64 = 1e-12;

/// Heavy-ball state of one rotation; `momentum = 0` disables it.
#[derive(Clone, Debug, Default)]
pub struct CayleyState {
    pub momentum: f64,
    velocity: Option<Matrix>,
}

impl CayleyState {
    pub fn new(momentum: f64) -> Self {
        CayleyState {
            momentum,
            velocity: None,
        }
    }
}

/// One Cayley-SGD step on the orthogonal group.
///
/// The Euclidean gradient `G` is mapped to the skew matrix `A = G Rᵀ − R Gᵀ`
/// (optionally accumulated with heavy-ball momentum) and the iterate becomes
/// `(I + η/2·A)⁻¹ (I − η/2·A) R`, which is orthogonal for any skew `A`. The
/// step size is `η = min(lr, 1/(‖A‖₁ + ε))` so a single step never turns
/// the iterate by more than a bounded angle.
pub fn cayley_sgd_step(r: &Matrix, grad: &Matrix, lr: f64, state: &mut CayleyState) -> Result<Matrix> {
    if !r.is_square() || r.shape() != grad.shape() {
        return Err(Error::dims(format!(
            "rotation {:?} with gradient {:?}",
            r.shape(),
            grad.shape()
        )));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    let mut a = grad.matmul_t(r).sub(&r.matmul_t(grad));
    if state.momentum > 0.0 {
        let v = match state.velocity.take() {
            Some(mut v) => {
                v = v.scale(state.momentum);
                v.add_assign_scaled(1.0, &a);
                v
            }
            None => a.clone(),
        };
        a = v.clone();
        state.velocity = Some(v);
    }
    let norm1 = one_norm(&a);
    if norm1 == 0.0 || lr == 0.0 {
        return Ok(r.clone());
    }
    let eta = lr.min(1.0 / (norm1 + STEP_EPS));
    let n = r.rows();
    let half = a.scale(eta / 2.0);
    let lhs = Matrix::identity(n).add(&half);
    let rhs = Matrix::identity(n).sub(&half).matmul(r);
    solve(&lhs, &rhs)
}

/// Maximum absolute column sum.
fn one_norm(a: &Matrix) -> f64 {
    let mut sums = vec![0.0; a.cols()];
    for row in a.rows_iter() {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v.abs();
        }
    }
    sums.into_iter().fold(0.0, f64::max)
}
