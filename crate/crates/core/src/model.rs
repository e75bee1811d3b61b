//! Model parameters in biological and mean-field units, the scaling map
//! between them, and the deterministic normal-cell population.

use serde::{Deserialize, Serialize};

use crate::error::{finite, Error, Result};
use crate::real::Real;

/// Unscaled rates of the mutation model.
///
/// Normal cells replicate at `alpha` and mutate at `mu` per cell, so the
/// normal population grows at the net rate `alpha - mu`. Mutants replicate at
/// `beta`. `n0` is real valued since the normal population is treated as a
/// deterministic ODE solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub alpha: T,
    pub beta: T,
    pub mu: T,
    pub n0: T,
    pub m0: T,
}

/// Mean-field parameters: `beta = eps * gamma`, `mu = eps * nu` and
/// `alpha - mu = eps * gamma1`, with time rescaled as `tau = eps * t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledParams<T> {
    pub gamma: T,
    pub gamma1: T,
    pub nu: T,
    pub epsilon: T,
    pub n0: T,
    pub m0: T,
}

fn require<T: Real>(ok: bool, field: &'static str, value: T, rule: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{value} violates {rule}")))
    }
}

impl<T: Real> ModelParams<T> {
    /// Validated constructor. Direct struct construction bypasses the checks,
    /// which is how the degenerate `alpha == mu` boundary is reached.
    pub fn new(alpha: T, beta: T, mu: T, n0: T, m0: T) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            mu,
            n0,
            m0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        require(self.alpha > T::zero(), "alpha", self.alpha, "alpha > 0")?;
        require(self.beta >= T::zero(), "beta", self.beta, "beta >= 0")?;
        require(self.mu >= T::zero(), "mu", self.mu, "mu >= 0")?;
        require(self.mu < self.alpha, "mu", self.mu, "mu < alpha")?;
        require(self.n0 > T::zero(), "n0", self.n0, "n0 > 0")?;
        require(self.m0 >= T::zero(), "m0", self.m0, "m0 >= 0")?;
        Ok(())
    }

    /// Net growth rate `alpha - mu` of the normal population.
    #[inline]
    pub fn net_growth(&self) -> T {
        self.alpha - self.mu
    }
}

impl<T: Real> ScaledParams<T> {
    pub fn new(gamma: T, gamma1: T, nu: T, epsilon: T, n0: T, m0: T) -> Result<Self> {
        let s = Self {
            gamma,
            gamma1,
            nu,
            epsilon,
            n0,
            m0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        require(
            self.epsilon > T::zero() && self.epsilon.is_finite(),
            "epsilon",
            self.epsilon,
            "epsilon > 0",
        )?;
        require(self.gamma >= T::zero(), "gamma", self.gamma, "gamma >= 0")?;
        require(self.gamma1 > T::zero(), "gamma1", self.gamma1, "gamma1 > 0")?;
        require(self.nu >= T::zero(), "nu", self.nu, "nu >= 0")?;
        require(self.n0 > T::zero(), "n0", self.n0, "n0 > 0")?;
        require(self.m0 >= T::zero(), "m0", self.m0, "m0 >= 0")?;
        Ok(())
    }

    /// Same parameters at a different scaling parameter.
    pub fn with_epsilon(self, epsilon: T) -> Result<Self> {
        let s = Self { epsilon, ..self };
        s.validate()?;
        Ok(s)
    }

    /// Scaled normal population `N0 e^{gamma1 tau}`.
    pub fn normal_population(&self, tau: T) -> Result<T> {
        finite(self.n0 * (self.gamma1 * tau).exp(), "scaled normal population")
    }

    /// Unscaled time corresponding to the scaled horizon `tau`.
    #[inline]
    pub fn unscaled_time(&self, tau: T) -> T {
        tau / self.epsilon
    }
}

/// Maps mean-field parameters to the rates of the finite-`epsilon` model.
pub fn scale_params<T: Real>(scaled: &ScaledParams<T>) -> Result<ModelParams<T>> {
    scaled.validate()?;
    let eps = scaled.epsilon;
    let mu = eps * scaled.nu;
    Ok(ModelParams {
        alpha: eps * scaled.gamma1 + mu,
        beta: eps * scaled.gamma,
        mu,
        n0: scaled.n0,
        m0: scaled.m0,
    })
}

/// Inverse of [`scale_params`] at the given `epsilon`.
pub fn unscale_params<T: Real>(params: &ModelParams<T>, epsilon: T) -> Result<ScaledParams<T>> {
    if !(epsilon > T::zero() && epsilon.is_finite()) {
        return Err(Error::invalid(
            "epsilon",
            format!("{epsilon} violates epsilon > 0"),
        ));
    }
    Ok(ScaledParams {
        gamma: params.beta / epsilon,
        gamma1: params.net_growth() / epsilon,
        nu: params.mu / epsilon,
        epsilon,
        n0: params.n0,
        m0: params.m0,
    })
}

/// Normal-cell population `N(t) = N0 e^{(alpha - mu) t}`.
pub fn normal_population<T: Real>(params: &ModelParams<T>, t: T) -> Result<T> {
    if !(t >= T::zero()) {
        return Err(Error::invalid("t", format!("{t} violates t >= 0")));
    }
    finite(params.n0 * (params.net_growth() * t).exp(), "normal population")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn experiment(eps: f64) -> ScaledParams<f64> {
        ScaledParams::new(2.5, 3.0, 1e-7, eps, 1.0, 0.0).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn identity_scaling() {
        let p = scale_params(&experiment(1.0)).unwrap();
        assert_eq!(p.beta, 2.5);
        assert_eq!(p.mu, 1e-7);
        assert!(rel(p.net_growth(), 3.0) < 1e-15);
    }

    #[test]
    fn scaling_by_tenth() {
        let p = scale_params(&experiment(0.1)).unwrap();
        assert!(rel(p.beta, 0.25) < 1e-15);
        assert!(rel(p.mu, 1e-8) < 1e-15);
        assert!(rel(p.net_growth(), 0.3) < 1e-15);
    }

    #[test]
    fn unscale_inverts_example() {
        let p = ModelParams {
            alpha: 0.3 + 1e-8,
            beta: 0.25,
            mu: 1e-8,
            n0: 1.0,
            m0: 0.0,
        };
        let s = unscale_params(&p, 0.1).unwrap();
        assert!(rel(s.gamma, 2.5) < 1e-15);
        assert!(rel(s.nu, 1e-7) < 1e-15);
        assert!(rel(s.gamma1, 3.0) < 1e-14);

        let s1 = unscale_params(&p, 1.0).unwrap();
        assert_eq!(s1.gamma, p.beta);
        assert_eq!(s1.nu, p.mu);
        assert_eq!(s1.gamma1, p.net_growth());
    }

    #[test]
    fn rejects_bad_epsilon() {
        let p = scale_params(&experiment(1.0)).unwrap();
        assert!(unscale_params(&p, 0.0).is_err());
        assert!(unscale_params(&p, -0.5).is_err());
        let mut s = experiment(1.0);
        s.epsilon = 0.0;
        assert!(scale_params(&s).is_err());
    }

    #[test]
    fn validation_names_field() {
        let err = ModelParams::new(1.0, 0.5, 2.0, 1.0, 0.0).unwrap_err();
        assert!(err.to_string().contains("`mu`"), "{err}");
        assert!(ModelParams::new(1.0, -0.1, 0.0, 1.0, 0.0).is_err());
        assert!(ScaledParams::new(1.0, 0.0, 0.0, 0.1, 1.0, 0.0).is_err());
    }

    #[test]
    fn population_initial_and_growth() {
        let p = ModelParams::new(3.0 + 1e-7, 2.5, 1e-7, 1.0, 0.0).unwrap();
        assert_eq!(normal_population(&p, 0.0).unwrap(), 1.0);
        // reference from RK4 on dN/dt = 3N at tolerance 1e-10
        let n1: f64 = normal_population(&p, 1.0).unwrap();
        assert!((n1 - 20.085_536_923_187_668).abs() < 1e-8, "{n1}");
    }

    #[test]
    fn degenerate_boundary_is_constant() {
        let p = ModelParams {
            alpha: 0.7,
            beta: 0.1,
            mu: 0.7,
            n0: 4.0,
            m0: 0.0,
        };
        for t in [0.0, 1.0, 50.0] {
            assert_eq!(normal_population(&p, t).unwrap(), 4.0);
        }
    }

    #[test]
    fn overflow_is_reported() {
        let p = ModelParams::new(1000.0, 0.0, 0.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            normal_population(&p, 10.0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(normal_population(&p, -1.0).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let s = ScaledParams::<f32>::new(2.5, 3.0, 1e-3, 0.1, 1.0, 0.0).unwrap();
        let p = scale_params(&s).unwrap();
        assert!((p.beta - 0.25).abs() < 1e-7);
        assert!((normal_population(&p, 1.0).unwrap() - 0.3f32.exp()).abs() < 1e-6);
    }

    fn scaled_strategy() -> impl Strategy<Value = ScaledParams<f64>> {
        (
            0.0..10.0f64,
            1e-2..10.0f64,
            0.0..10.0f64,
            prop_oneof![Just(1.0), Just(0.1), Just(0.01), 1e-4..1.0f64],
            1e-3..1e3f64,
            0.0..1e3f64,
        )
            .prop_map(|(gamma, gamma1, nu, epsilon, n0, m0)| ScaledParams {
                gamma,
                gamma1,
                nu,
                epsilon,
                n0,
                m0,
            })
    }

    proptest! {
        #[test]
        fn round_trip_scaled(s in scaled_strategy()) {
            let back = unscale_params(&scale_params(&s).unwrap(), s.epsilon).unwrap();
            // multiplication then division by epsilon is exact up to rounding
            prop_assert!(rel(back.gamma, s.gamma) <= 4.0 * f64::EPSILON || s.gamma == 0.0);
            prop_assert!(rel(back.nu, s.nu) <= 4.0 * f64::EPSILON || s.nu == 0.0);
            prop_assert!(rel(back.gamma1, s.gamma1) <= 1e-12);
            prop_assert_eq!(back.n0, s.n0);
            prop_assert_eq!(back.m0, s.m0);
        }

        #[test]
        fn round_trip_model(beta in 0.0..5.0f64, net in 1e-3..5.0f64, mu in 0.0..1.0f64, eps in 1e-3..1.0f64) {
            let p = ModelParams::new(net + mu, beta, mu, 1.0, 0.0).unwrap();
            let q = scale_params(&unscale_params(&p, eps).unwrap()).unwrap();
            prop_assert!(rel(q.beta, p.beta) <= 4.0 * f64::EPSILON || p.beta == 0.0);
            prop_assert!(rel(q.mu, p.mu) <= 4.0 * f64::EPSILON || p.mu == 0.0);
            prop_assert!(rel(q.alpha, p.alpha) <= 1e-12);
        }

        #[test]
        fn semigroup(t1 in 0.0..5.0f64, t2 in 0.0..5.0f64, net in 1e-3..3.0f64, n0 in 0.1..10.0f64) {
            let p = ModelParams::new(net, 0.0, 0.0, n0, 0.0).unwrap();
            let lhs = normal_population(&p, t1 + t2).unwrap() * n0;
            let rhs = normal_population(&p, t1).unwrap() * normal_population(&p, t2).unwrap();
            prop_assert!(rel(lhs, rhs) < 1e-12);
            prop_assert!(normal_population(&p, t1 + 0.1).unwrap() > normal_population(&p, t1).unwrap());
        }

        #[test]
        fn scaled_population_cancels_epsilon(s in scaled_strategy(), tau in 0.0..6.7f64) {
            let p = scale_params(&s).unwrap();
            let unscaled = normal_population(&p, s.unscaled_time(tau)).unwrap();
            let direct = s.n0 * (s.gamma1 * tau).exp();
            prop_assert!(rel(unscaled, direct) < 1e-12);
        }
    }
}
