//! Cart-pole with a uniform pole hinged on a cart moving along a rail.
//!
//! State `[x, θ, ẋ, θ̇]` with `θ = 0` hanging down and `θ = π` upright.
//! Action: horizontal force on the cart (N).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Full pole length; the center of mass sits at half of it.
    pub pole_length: f64,
    pub gravity: f64,
    pub cart_damping: f64,
    pub pole_damping: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.81,
            cart_damping: 0.0,
            pole_damping: 0.0,
        }
    }
}

impl CartPoleParams {
    /// `(ẍ, θ̈)` for the given state and force.
    pub fn accelerations(&self, s: &DVector<f64>, force: f64) -> (f64, f64) {
        let (theta, x_dot, theta_dot) = (s[1], s[2], s[3]);
        let l = 0.5 * self.pole_length;
        let mp = self.pole_mass;
        let (sin, cos) = theta.sin_cos();
        let m11 = self.cart_mass + mp;
        let m12 = mp * l * cos;
        let m22 = 4.0 / 3.0 * mp * l * l;
        let rhs1 = force - self.cart_damping * x_dot + mp * l * sin * theta_dot * theta_dot;
        let rhs2 = -mp * self.gravity * l * sin - self.pole_damping * theta_dot;
        let det = m11 * m22 - m12 * m12;
        ((m22 * rhs1 - m12 * rhs2) / det, (m11 * rhs2 - m12 * rhs1) / det)
    }

    pub fn derivative(&self, s: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        let (x_acc, theta_acc) = self.accelerations(s, a[0]);
        DVector::from_vec(vec![s[2], s[3], x_acc, theta_acc])
    }
}
