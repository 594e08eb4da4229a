//! Pairwise separation barrier, the exponentially damped propagation vector and the
//! psi-weighted safety function built from them.
//!
//! With `dx = x_i - x_j`:
//!
//! ```text
//! h_ij     = |dx|^2 - d_min^2
//! A_ij     = dx / sqrt(|dx|^2 + eps^2) * exp(-|dx|^2)
//! h~_ij    = h_ij + psi * A_ij . (u_i - u_j)
//! gamma_ij = 2 * w_bar * |grad h_ij|
//! ```

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyParams {
    /// Amplitude weight of the control-alignment term (>= 0).
    pub psi: f64,
    /// Regularizer in the propagation-vector denominator (> 0).
    pub reg_eps: f64,
    /// Minimum separation radius (> 0).
    pub d_min: f64,
    /// Gain of the linear class-K function (> 0).
    pub kappa: f64,
    /// Subtract the worst-case disturbance effect in the CBF constraint.
    pub robust_margin_enabled: bool,
}

impl Default for SafetyParams {
    fn default() -> Self {
        Self { psi: 2.0, reg_eps: 1e-6, d_min: 1.0, kappa: 1.0, robust_margin_enabled: true }
    }
}

impl SafetyParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::Config(format!("safety.{key}: {msg}")));
        if !(self.psi.is_finite() && self.psi >= 0.0) {
            return bad("psi", "must be finite and >= 0");
        }
        if !(self.reg_eps.is_finite() && self.reg_eps > 0.0) {
            return bad("reg_eps", "must be finite and > 0");
        }
        if !(self.d_min.is_finite() && self.d_min > 0.0) {
            return bad("d_min", "must be finite and > 0");
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return bad("kappa", "must be finite and > 0");
        }
        Ok(())
    }
}

fn diff(x_i: &[f64], x_j: &[f64]) -> Vec<f64> {
    x_i.iter().zip(x_j).map(|(a, b)| a - b).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_norm(v: &[f64]) -> f64 {
    dot(v, v)
}

/// Raw separation margin `|x_i - x_j|^2 - d_min^2`.
pub fn h_pair(x_i: &[f64], x_j: &[f64], params: &SafetyParams) -> f64 {
    sq_norm(&diff(x_i, x_j)) - params.d_min * params.d_min
}

/// Gradient of [`h_pair`] with respect to `x_i`; the gradient with respect to
/// `x_j` is its negation.
pub fn grad_h_pair(x_i: &[f64], x_j: &[f64], _params: &SafetyParams) -> Vec<f64> {
    diff(x_i, x_j).into_iter().map(|d| 2.0 * d).collect()
}

/// Scalar factor `phi(r2) = exp(-r2) / sqrt(r2 + eps^2)` so that `A = dx * phi`.
fn damping(r2: f64, eps: f64) -> f64 {
    (-r2).exp() / (r2 + eps * eps).sqrt()
}

/// Propagation vector `A_ij`. Odd in `x_i - x_j`, bounded by `exp(-|dx|^2)` in norm.
pub fn propagation_vector(x_i: &[f64], x_j: &[f64], params: &SafetyParams) -> Vec<f64> {
    let dx = diff(x_i, x_j);
    let phi = damping(sq_norm(&dx), params.reg_eps);
    dx.into_iter().map(|d| d * phi).collect()
}

/// Time derivative of `A_ij` along a relative velocity `d(x_i - x_j)/dt`.
///
/// The Jacobian of `A` with respect to `dx` is
/// `phi * (I - (2 + 1/(|dx|^2 + eps^2)) dx dx^T)`.
pub fn propagation_rate(x_i: &[f64], x_j: &[f64], rel_velocity: &[f64], params: &SafetyParams) -> Vec<f64> {
    let dx = diff(x_i, x_j);
    let r2 = sq_norm(&dx);
    let phi = damping(r2, params.reg_eps);
    let c = 2.0 + 1.0 / (r2 + params.reg_eps * params.reg_eps);
    let proj = dot(&dx, rel_velocity);
    rel_velocity.iter().zip(&dx).map(|(v, d)| phi * (v - c * d * proj)).collect()
}

/// psi-weighted safety value `h_ij + psi * A_ij . (u_i - u_j)`.
///
/// `u_i` and `u_j` must live in state coordinates; for models where the control
/// dimension differs from the state dimension pass `g(x) u`.
pub fn psi_safety(x_i: &[f64], x_j: &[f64], u_i: &[f64], u_j: &[f64], params: &SafetyParams) -> f64 {
    let a = propagation_vector(x_i, x_j, params);
    let du = diff(u_i, u_j);
    h_pair(x_i, x_j, params) + params.psi * dot(&a, &du)
}

/// Closed-form `sup |grad h . (w_i - w_j)|` over two independent balls of radius
/// `w_bar`, which is `2 * w_bar * |grad h|`.
pub fn disturbance_margin(x_i: &[f64], x_j: &[f64], w_bar: f64, params: &SafetyParams) -> f64 {
    2.0 * w_bar * sq_norm(&grad_h_pair(x_i, x_j, params)).sqrt()
}

/// Linear class-K function `kappa * s`.
pub fn class_k(s: f64, params: &SafetyParams) -> f64 {
    params.kappa * s
}

/// Everything the controller and the monitors need about one unordered pair.
/// Vectors are oriented from `j` to `i` (gradients with respect to `x_i`).
#[derive(Clone, Debug, PartialEq)]
pub struct PairMargin {
    pub i: usize,
    pub j: usize,
    pub h: f64,
    pub h_tilde: f64,
    pub grad_h: Vec<f64>,
    pub a: Vec<f64>,
    pub gamma: f64,
}

impl PairMargin {
    /// Evaluates a pair; `gu_i`, `gu_j` are the applied controls in state coordinates.
    pub fn evaluate(
        i: usize,
        j: usize,
        x_i: &[f64],
        x_j: &[f64],
        gu_i: &[f64],
        gu_j: &[f64],
        w_bar: f64,
        params: &SafetyParams,
    ) -> Self {
        let (i, j, x_i, x_j, gu_i, gu_j) =
            if i < j { (i, j, x_i, x_j, gu_i, gu_j) } else { (j, i, x_j, x_i, gu_j, gu_i) };
        Self {
            i,
            j,
            h: h_pair(x_i, x_j, params),
            h_tilde: psi_safety(x_i, x_j, gu_i, gu_j, params),
            grad_h: grad_h_pair(x_i, x_j, params),
            a: propagation_vector(x_i, x_j, params),
            gamma: disturbance_margin(x_i, x_j, w_bar, params),
        }
    }

    /// Gradient and propagation vector as seen from agent `from` toward `to`.
    pub fn oriented(&self, from: usize, to: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        if (from, to) == (self.i, self.j) {
            Some((self.grad_h.clone(), self.a.clone()))
        } else if (from, to) == (self.j, self.i) {
            let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
            Some((neg(&self.grad_h), neg(&self.a)))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params() -> SafetyParams {
        SafetyParams::default()
    }

    #[test]
    fn h_pair_examples() {
        let p = params();
        assert_eq!(h_pair(&[2.0, 0.0], &[0.0, 0.0], &p), 3.0);
        assert_eq!(h_pair(&[1.0, 0.0], &[0.0, 0.0], &p), 0.0);
        assert_eq!(h_pair(&[0.5, 0.5], &[0.5, 0.5], &p), -1.0);
    }

    #[test]
    fn grad_examples() {
        let p = params();
        assert_eq!(grad_h_pair(&[2.0, 0.0], &[0.0, 0.0], &p), vec![4.0, 0.0]);
        assert_eq!(grad_h_pair(&[1.0, 1.0], &[1.0, 1.0], &p), vec![0.0, 0.0]);
    }

    fn central_difference(x_i: &[f64], x_j: &[f64], p: &SafetyParams) -> Vec<f64> {
        let step = 1e-5;
        (0..x_i.len())
            .map(|k| {
                let mut plus = x_i.to_vec();
                let mut minus = x_i.to_vec();
                plus[k] += step;
                minus[k] -= step;
                (h_pair(&plus, x_j, p) - h_pair(&minus, x_j, p)) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn grad_matches_finite_differences() {
        let p = params();
        let fd = central_difference(&[1.3, -0.7], &[0.2, 0.4], &p);
        let g = grad_h_pair(&[1.3, -0.7], &[0.2, 0.4], &p);
        for (a, b) in fd.iter().zip(&g) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let x_i: Vec<f64> = (0..2).map(|_| rng.random_range(-5.0..5.0)).collect();
            let x_j: Vec<f64> = (0..2).map(|_| rng.random_range(-5.0..5.0)).collect();
            let fd = central_difference(&x_i, &x_j, &p);
            let g = grad_h_pair(&x_i, &x_j, &p);
            for (a, b) in fd.iter().zip(&g) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn propagation_examples() {
        let p = params();
        assert_eq!(propagation_vector(&[3.0, 4.0], &[3.0, 4.0], &p), vec![0.0, 0.0]);
        let a = propagation_vector(&[1.0, 0.0], &[0.0, 0.0], &p);
        // e^-1 / sqrt(1 + 1e-12)
        assert!((a[0] - 0.367_879_441_171_442_2).abs() < 1e-12);
        assert_eq!(a[1], 0.0);
    }

    #[test]
    fn propagation_rate_matches_finite_differences() {
        let p = params();
        let (x_i, x_j) = ([0.9, -0.3], [0.1, 0.2]);
        let v = [0.7, -1.1];
        let rate = propagation_rate(&x_i, &x_j, &v, &p);
        let step = 1e-6;
        let shifted = |s: f64| {
            let xi: Vec<f64> = x_i.iter().zip(&v).map(|(x, d)| x + s * d).collect();
            propagation_vector(&xi, &x_j, &p)
        };
        let (plus, minus) = (shifted(step), shifted(-step));
        for k in 0..2 {
            let fd = (plus[k] - minus[k]) / (2.0 * step);
            assert!((fd - rate[k]).abs() < 1e-7, "{fd} vs {}", rate[k]);
        }
    }

    #[test]
    fn psi_safety_examples() {
        let p = SafetyParams { psi: 2.0, ..params() };
        let x_i = [1.0, 0.0];
        let x_j = [0.0, 0.0];
        let v = psi_safety(&x_i, &x_j, &[1.0, 0.0], &[0.0, 0.0], &p);
        assert!((v - 0.735_758_882_342_884_4).abs() < 1e-9);
        let same = psi_safety(&[2.0, 1.0], &x_j, &[0.3, 0.3], &[0.3, 0.3], &p);
        assert_eq!(same, h_pair(&[2.0, 1.0], &x_j, &p));
        let no_psi = SafetyParams { psi: 0.0, ..params() };
        assert_eq!(psi_safety(&[2.0, 1.0], &x_j, &[5.0, -1.0], &[0.0, 2.0], &no_psi), 4.0);
    }

    #[test]
    fn disturbance_margin_examples() {
        let p = params();
        assert_eq!(disturbance_margin(&[1.0, 2.0], &[0.0, 0.0], 0.0, &p), 0.0);
        assert_eq!(disturbance_margin(&[1.0, 1.0], &[1.0, 1.0], 0.05, &p), 0.0);
        // grad h = (3, 4) at dx = (1.5, 2)
        let g = disturbance_margin(&[1.5, 2.0], &[0.0, 0.0], 0.05, &p);
        assert!((g - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disturbance_margin_matches_sampled_supremum() {
        let p = params();
        let (x_i, x_j, w_bar) = ([1.5, 2.0], [0.0, 0.0], 0.05);
        let grad = grad_h_pair(&x_i, &x_j, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        // The supremum over the ball is attained on its boundary.
        let mut ball = || {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            [w_bar * theta.cos(), w_bar * theta.sin()]
        };
        let mut best: f64 = 0.0;
        for _ in 0..10_000 {
            let (w_i, w_j) = (ball(), ball());
            best = best.max(dot(&grad, &[w_i[0] - w_j[0], w_i[1] - w_j[1]]).abs());
        }
        let closed = disturbance_margin(&x_i, &x_j, w_bar, &p);
        assert!(best <= closed + 1e-12);
        assert!(best >= 0.99 * closed, "sampled sup {best} vs {closed}");
    }

    #[test]
    fn class_k_examples() {
        let p = params();
        assert_eq!(class_k(0.0, &p), 0.0);
        assert_eq!(class_k(3.0, &p), 3.0);
    }

    #[test]
    fn pair_margin_orientation() {
        let p = params();
        let pm = PairMargin::evaluate(1, 0, &[0.0, 0.0], &[1.2, 0.0], &[0.0; 2], &[0.0; 2], 0.03, &p);
        assert_eq!((pm.i, pm.j), (0, 1));
        let (g01, a01) = pm.oriented(0, 1).unwrap();
        let (g10, a10) = pm.oriented(1, 0).unwrap();
        assert_eq!(g01, grad_h_pair(&[1.2, 0.0], &[0.0, 0.0], &p));
        assert_eq!(g10, g01.iter().map(|v| -v).collect::<Vec<_>>());
        assert_eq!(a10, a01.iter().map(|v| -v).collect::<Vec<_>>());
        assert!(pm.oriented(0, 2).is_none());
    }

    #[test]
    fn validation() {
        assert!(SafetyParams { psi: -1.0, ..params() }.validate().is_err());
        assert!(SafetyParams { reg_eps: 0.0, ..params() }.validate().is_err());
        assert!(SafetyParams { d_min: 0.0, ..params() }.validate().is_err());
        assert!(SafetyParams { kappa: 0.0, ..params() }.validate().is_err());
        assert!(params().validate().is_ok());
    }

    fn vec2() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-4.0f64..4.0, 2)
    }

    proptest! {
        #[test]
        fn propagation_is_odd(a in vec2(), b in vec2()) {
            let p = params();
            let ab = propagation_vector(&a, &b, &p);
            let ba = propagation_vector(&b, &a, &p);
            for k in 0..2 {
                prop_assert_eq!(ab[k], -ba[k]);
            }
        }

        #[test]
        fn propagation_norm_decays(a in vec2(), b in vec2()) {
            let p = params();
            let v = propagation_vector(&a, &b, &p);
            let n = sq_norm(&v).sqrt();
            let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            prop_assert!(n <= 1.0);
            prop_assert!(n <= (-d2).exp() * (1.0 + 1e-12));
        }

        #[test]
        fn psi_safety_is_affine_in_control_difference(
            a in vec2(), b in vec2(), du in vec2(), dv in vec2(), psi in 0.0f64..10.0,
        ) {
            let p = SafetyParams { psi, ..params() };
            let zero = [0.0, 0.0];
            let mid: Vec<f64> = du.iter().zip(&dv).map(|(x, y)| 0.5 * (x + y)).collect();
            let f0 = psi_safety(&a, &b, &du, &zero, &p);
            let f1 = psi_safety(&a, &b, &dv, &zero, &p);
            let fm = psi_safety(&a, &b, &mid, &zero, &p);
            prop_assert!((fm - 0.5 * (f0 + f1)).abs() < 1e-9);
        }

        #[test]
        fn class_k_is_increasing(s1 in -50.0f64..50.0, s2 in -50.0f64..50.0, kappa in 0.01f64..10.0) {
            let p = SafetyParams { kappa, ..params() };
            prop_assume!(s1 < s2);
            prop_assert!(class_k(s1, &p) < class_k(s2, &p));
        }
    }
}
