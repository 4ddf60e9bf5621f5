//! Furuta (rotary) pendulum: a horizontal arm driven by a motor torque with a
//! uniform pendulum hinged at its tip, swinging in the plane normal to the arm.
//!
//! State `[θ, α, θ̇, α̇]`: arm angle, pendulum angle (`α = 0` hanging down,
//! `α = π` upright) and their rates. Action: arm torque (N·m).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FurutaParams {
    pub arm_mass: f64,
    pub arm_length: f64,
    pub pendulum_mass: f64,
    pub pendulum_length: f64,
    pub gravity: f64,
    pub arm_damping: f64,
    pub pendulum_damping: f64,
}

impl Default for FurutaParams {
    fn default() -> Self {
        Self {
            arm_mass: 0.095,
            arm_length: 0.085,
            pendulum_mass: 0.024,
            pendulum_length: 0.129,
            gravity: 9.81,
            arm_damping: 5e-4,
            pendulum_damping: 5e-5,
        }
    }
}

impl FurutaParams {
    /// `(θ̈, α̈)` for the given state and torque.
    pub fn accelerations(&self, s: &DVector<f64>, torque: f64) -> (f64, f64) {
        let (alpha, theta_dot, alpha_dot) = (s[1], s[2], s[3]);
        let (mr, lr, mp, lp) = (self.arm_mass, self.arm_length, self.pendulum_mass, self.pendulum_length);
        let (sin, cos) = alpha.sin_cos();
        let arm_inertia = mr * lr * lr / 3.0;
        let pend_inertia = mp * lp * lp / 3.0;
        let coupling = 0.5 * mp * lr * lp;
        let m11 = arm_inertia + mp * lr * lr + pend_inertia * sin * sin;
        let m12 = coupling * cos;
        let m22 = pend_inertia;
        let rhs1 = torque - self.arm_damping * theta_dot - 2.0 * pend_inertia * sin * cos * theta_dot * alpha_dot
            + coupling * sin * alpha_dot * alpha_dot;
        let rhs2 = -self.pendulum_damping * alpha_dot + pend_inertia * sin * cos * theta_dot * theta_dot
            - 0.5 * mp * self.gravity * lp * sin;
        let det = m11 * m22 - m12 * m12;
        ((m22 * rhs1 - m12 * rhs2) / det, (m11 * rhs2 - m12 * rhs1) / det)
    }

    pub fn derivative(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        let (arm_acc, pend_acc) = self.accelerations(s, a[0]);
        DVector::from_vec(vec![s[2], s[3], arm_acc, pend_acc])
    }
}
