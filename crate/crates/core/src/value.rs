//! Closed-form value function of the single-player control problem.
//!
//! For a fixed terminal population law `μ` the HJB equation
//! `v_t + σ² v_xx / 2 + v_x² / (4c) = 0`, `v(T, ·) = R_μ`, linearises under
//! `u = exp(v / κ)`, `κ = 2cσ²`, into the backward heat equation, so
//!
//! ```text
//! u(t, x)  = E[ g(x + sZ) ]                 g = exp(R_μ / κ), s = σ √(T - t)
//! u_x      = E[ g(x + sZ) Z ] / s
//! u_xx     = E[ g(x + sZ) (Z² - 1) ] / s²
//! ```
//!
//! with `Z` standard normal. The optimal feedback drift is
//! `a* = v_x / (2c) = σ² u_x / u`.
//!
//! `R_μ` jumps at every atom of an empirical `μ`. Two evaluators are
//! provided:
//!
//! * [`QuadratureMethod::ExactStep`]: for rank-only rewards `g` is a step
//!   function, and each expectation is a finite sum of normal CDF / density
//!   terms over the atoms.
//! * [`QuadratureMethod::GaussHermite`]: for general `R(x, r)`. The jumps of
//!   `g` at the atoms are removed and integrated in closed form; the
//!   continuous remainder is integrated with a Gauss-Hermite rule.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::{ModelParams, RewardSpec};
use crate::special::{normal_cdf, normal_pdf, GaussHermite};

/// Derivative formulas are not evaluated closer than this to `T`.
pub const MIN_TIME_TO_MATURITY: f64 = 1e-8;

/// Atoms further than this many `s` from `x` contribute below 1e-18.
const WINDOW_Z: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMethod {
    ExactStep,
    GaussHermite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub method: QuadratureMethod,
    #[serde(default = "default_gh_nodes")]
    pub gh_nodes: usize,
    /// Tail truncation (in standard deviations) used by oracle checks.
    #[serde(default = "default_z_cutoff")]
    pub z_cutoff: f64,
}

fn default_gh_nodes() -> usize {
    128
}

fn default_z_cutoff() -> f64 {
    8.0
}

impl QuadratureConfig {
    pub fn exact_step() -> Self {
        Self {
            method: QuadratureMethod::ExactStep,
            gh_nodes: default_gh_nodes(),
            z_cutoff: default_z_cutoff(),
        }
    }

    pub fn gauss_hermite(nodes: usize) -> Self {
        Self {
            method: QuadratureMethod::GaussHermite,
            gh_nodes: nodes,
            z_cutoff: default_z_cutoff(),
        }
    }

    /// Exact step sums when the reward allows it, Gauss-Hermite otherwise.
    pub fn auto_for(reward: &RewardSpec) -> Self {
        if reward.is_rank_only() {
            Self::exact_step()
        } else {
            Self::gauss_hermite(default_gh_nodes())
        }
    }

    fn validate(&self, reward: &RewardSpec) -> Result<()> {
        if self.gh_nodes < 8 {
            return Err(invalid("quadrature.gh_nodes", "needs at least 8 nodes"));
        }
        if !(self.z_cutoff > 0.0) {
            return Err(invalid("quadrature.z_cutoff", "must be positive"));
        }
        if self.method == QuadratureMethod::ExactStep && !reward.is_rank_only() {
            return Err(Error::UnsupportedMethod(
                "exact_step needs a reward that does not depend on x".into(),
            ));
        }
        Ok(())
    }
}

/// `(u, u_x, u_xx)` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UDerivatives {
    pub u: f64,
    pub u_x: f64,
    pub u_xx: f64,
}

/// Value, gradient and optimal drift at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValuePoint {
    pub u: f64,
    pub u_x: f64,
    pub u_xx: f64,
    pub v: f64,
    pub v_x: f64,
    pub v_xx: f64,
    pub a_star: f64,
}

/// Jumps of `g = exp(R_μ / κ)` at the atoms of `μ`.
#[derive(Debug, Clone)]
pub(crate) struct StepJumps {
    pub(crate) locations: Vec<f64>,
    pub(crate) sizes: Vec<f64>,
    /// prefix[i] = sizes[0] + ... + sizes[i-1]
    prefix: Vec<f64>,
    /// `g(-∞)` for rank-only rewards.
    pub(crate) base: f64,
}

impl StepJumps {
    fn new(reward: &RewardSpec, mu: &EmpiricalMeasure, kappa: f64) -> Self {
        let locations = mu.locations().to_vec();
        let cum = mu.cumulative();
        let mut sizes = Vec::with_capacity(locations.len());
        let mut prefix = Vec::with_capacity(locations.len() + 1);
        prefix.push(0.0);
        let mut below = 0.0;
        for (j, &y) in locations.iter().enumerate() {
            let hi = (reward.eval_unchecked(y, cum[j]) / kappa).exp();
            let lo = (reward.eval_unchecked(y, below) / kappa).exp();
            sizes.push(hi - lo);
            prefix.push(prefix[j] + (hi - lo));
            below = cum[j];
        }
        let base = (reward.eval_unchecked(0.0, 0.0) / kappa).exp();
        Self {
            locations,
            sizes,
            prefix,
            base,
        }
    }

    /// Sum of jumps at atoms `<= y`.
    fn accumulated(&self, y: f64) -> f64 {
        self.prefix[self.locations.partition_point(|&l| l <= y)]
    }
}

/// Evaluator of `u`, `v` and `a*` for a fixed `(μ, R, model)`.
#[derive(Debug, Clone)]
pub struct ValueField {
    params: ModelParams,
    reward: RewardSpec,
    mu: EmpiricalMeasure,
    quad: QuadratureConfig,
    kappa: f64,
    jumps: StepJumps,
    gh: Option<GaussHermite>,
}

impl ValueField {
    /// Field with the default evaluator for `reward`.
    pub fn new(params: ModelParams, reward: RewardSpec, mu: EmpiricalMeasure) -> Result<Self> {
        let quad = QuadratureConfig::auto_for(&reward);
        Self::with_quadrature(params, reward, mu, quad)
    }

    pub fn with_quadrature(
        params: ModelParams,
        reward: RewardSpec,
        mu: EmpiricalMeasure,
        quad: QuadratureConfig,
    ) -> Result<Self> {
        quad.validate(&reward)?;
        let kappa = params.kappa();
        let jumps = StepJumps::new(&reward, &mu, kappa);
        let gh = match quad.method {
            QuadratureMethod::GaussHermite => Some(GaussHermite::new(quad.gh_nodes)),
            QuadratureMethod::ExactStep => None,
        };
        Ok(Self {
            params,
            reward,
            mu,
            quad,
            kappa,
            jumps,
            gh,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn reward(&self) -> &RewardSpec {
        &self.reward
    }

    pub fn measure(&self) -> &EmpiricalMeasure {
        &self.mu
    }

    pub fn quadrature(&self) -> &QuadratureConfig {
        &self.quad
    }

    pub(crate) fn jumps(&self) -> &StepJumps {
        &self.jumps
    }

    /// `σ √(T - t)` after checking `t` against the terminal cutoff.
    pub fn spread(&self, t: f64) -> Result<f64> {
        let tau = self.params.horizon_t - t;
        if !(tau >= MIN_TIME_TO_MATURITY) {
            return Err(Error::Domain(format!(
                "t = {t} is not before T - {MIN_TIME_TO_MATURITY:e} (T = {})",
                self.params.horizon_t
            )));
        }
        Ok(self.params.sigma * tau.sqrt())
    }

    /// `g(y) = exp(R_μ(y) / κ)`.
    pub fn terminal_exp(&self, y: f64) -> f64 {
        (self.terminal_value(y) / self.kappa).exp()
    }

    /// `v(T, y) = R_μ(y)`.
    pub fn terminal_value(&self, y: f64) -> f64 {
        self.reward.eval_unchecked(y, self.mu.cdf(y))
    }

    pub fn u_derivatives(&self, t: f64, x: f64) -> Result<UDerivatives> {
        let s = self.spread(t)?;
        Ok(match self.quad.method {
            QuadratureMethod::ExactStep => self.exact_step(s, x),
            QuadratureMethod::GaussHermite => self.gauss_hermite(s, x),
        })
    }

    fn exact_step(&self, s: f64, x: f64) -> UDerivatives {
        let j = &self.jumps;
        let lo = j.locations.partition_point(|&y| y < x - WINDOW_Z * s);
        let hi = j.locations.partition_point(|&y| y <= x + WINDOW_Z * s);
        let mut u = j.base + j.prefix[lo];
        let (mut ux, mut uxx) = (0.0, 0.0);
        for k in lo..hi {
            let z = (x - j.locations[k]) / s;
            let d = j.sizes[k];
            let pdf = normal_pdf(z);
            u += d * normal_cdf(z);
            ux += d * pdf;
            uxx -= d * z * pdf;
        }
        UDerivatives {
            u,
            u_x: ux / s,
            u_xx: uxx / (s * s),
        }
    }

    fn gauss_hermite(&self, s: f64, x: f64) -> UDerivatives {
        let gh = self.gh.as_ref().expect("gauss-hermite rule is built");
        let j = &self.jumps;
        // continuous remainder of g after removing the atom jumps
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for (&z, &w) in gh.nodes.iter().zip(&gh.weights) {
            let y = x + s * z;
            let c = self.terminal_exp(y) - j.accumulated(y);
            s0 += w * c;
            s1 += w * c * z;
            s2 += w * c * (z * z - 1.0);
        }
        let (mut ju, mut jux, mut juxx) = (0.0, 0.0, 0.0);
        for (&y, &d) in j.locations.iter().zip(&j.sizes) {
            let z = (x - y) / s;
            let pdf = normal_pdf(z);
            ju += d * normal_cdf(z);
            jux += d * pdf;
            juxx -= d * z * pdf;
        }
        UDerivatives {
            u: s0 + ju,
            u_x: (s1 + jux) / s,
            u_xx: (s2 + juxx) / (s * s),
        }
    }

    pub fn value_point(&self, t: f64, x: f64) -> Result<ValuePoint> {
        let d = self.u_derivatives(t, x)?;
        let k = self.kappa;
        let ratio = d.u_x / d.u;
        Ok(ValuePoint {
            u: d.u,
            u_x: d.u_x,
            u_xx: d.u_xx,
            v: k * d.u.ln(),
            v_x: k * ratio,
            v_xx: k * (d.u_xx / d.u - ratio * ratio),
            a_star: self.params.sigma * self.params.sigma * ratio,
        })
    }

    /// `(v, v_x, a*)`.
    pub fn value_and_drift(&self, t: f64, x: f64) -> Result<(f64, f64, f64)> {
        let p = self.value_point(t, x)?;
        Ok((p.v, p.v_x, p.a_star))
    }

    pub fn value(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.kappa * self.u_derivatives(t, x)?.u.ln())
    }

    /// `v_t + σ² v_xx / 2 + v_x² / (4c)` with `v_t` from a central
    /// difference of width `2 fd_step` and `v_x`, `v_xx` analytic.
    pub fn pde_residual(&self, t: f64, x: f64, fd_step: f64) -> Result<f64> {
        if !(fd_step > 0.0) {
            return Err(invalid("fd_step", "must be positive"));
        }
        if t + fd_step >= self.params.horizon_t {
            return Err(Error::Domain(format!(
                "t + fd_step = {} reaches T = {}",
                t + fd_step,
                self.params.horizon_t
            )));
        }
        let v_t = (self.value(t + fd_step, x)? - self.value(t - fd_step, x)?) / (2.0 * fd_step);
        let p = self.value_point(t, x)?;
        let s2 = self.params.sigma * self.params.sigma;
        Ok(v_t + 0.5 * s2 * p.v_xx + p.v_x * p.v_x / (4.0 * self.params.cost_c))
    }
}

/// A-priori bounds on `u`, `v` and their derivatives at time `t`; none of
/// them depends on `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundSet {
    /// `K = exp(‖R‖ / (2cσ²))`
    pub k: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub u_x_max: f64,
    pub v_x_max: f64,
    pub u_xx_abs_max: f64,
    pub v_xx_abs_max: f64,
    /// Cap on `∫_t^T a*(s, X_s) ds` along any optimal path.
    pub effort_cap: f64,
}

pub fn lemma_bounds(params: &ModelParams, reward: &RewardSpec, t: f64) -> Result<BoundSet> {
    let tau = params.horizon_t - t;
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("t = {t} is not before T")));
    }
    let (sigma, c) = (params.sigma, params.cost_c);
    let norm = reward.sup_norm();
    let k = (norm / params.kappa()).exp();
    let sqrt_2_pi = (2.0 / std::f64::consts::PI).sqrt();
    Ok(BoundSet {
        k,
        u_min: 1.0 / k,
        u_max: k,
        v_min: -norm,
        v_max: norm,
        u_x_max: k / sigma * sqrt_2_pi / tau.sqrt(),
        v_x_max: 2.0 * c * sigma * k * k * sqrt_2_pi / tau.sqrt(),
        u_xx_abs_max: 2.0 * k / (sigma * sigma * tau),
        v_xx_abs_max: 4.0 * c * k * k * (1.0 + k * k / std::f64::consts::PI) / tau,
        effort_cap: 2.0 * sigma * k * k * (2.0 * tau / std::f64::consts::PI).sqrt(),
    })
}

/// Violations of the bound set by `p`, with absolute slack `tol`.
pub fn bound_violations(b: &BoundSet, p: &ValuePoint, tol: f64) -> Vec<&'static str> {
    let mut out = Vec::new();
    let mut check = |ok: bool, name: &'static str| {
        if !ok {
            out.push(name);
        }
    };
    check(p.u >= b.u_min - tol && p.u <= b.u_max + tol, "u range");
    check(p.v >= b.v_min - tol && p.v <= b.v_max + tol, "v range");
    check(p.u_x >= -tol && p.u_x <= b.u_x_max + tol, "u_x cap");
    check(p.v_x >= -tol && p.v_x <= b.v_x_max + tol, "v_x cap");
    check(p.u_xx.abs() <= b.u_xx_abs_max + tol, "u_xx cap");
    check(p.v_xx.abs() <= b.v_xx_abs_max + tol, "v_xx cap");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::CdfConvention;
    use crate::model::rank_reward_eval;

    const E: f64 = std::f64::consts::E;

    fn params(c: f64, sigma: f64) -> ModelParams {
        ModelParams::new(sigma, 0.0, c, 1.0).unwrap()
    }

    /// Composite trapezoid of E[g(x + sZ) w(Z)] over z in [-8, 8].
    fn trapezoid(field: &ValueField, t: f64, x: f64, weight: impl Fn(f64) -> f64, h: f64) -> f64 {
        let s = field.spread(t).unwrap();
        let n = (16.0 / h).round() as usize;
        let f = |z: f64| field.terminal_exp(x + s * z) * weight(z) * normal_pdf(z);
        let mut acc = 0.5 * (f(-8.0) + f(8.0));
        for i in 1..n {
            acc += f(-8.0 + i as f64 * h);
        }
        acc * h
    }

    #[test]
    fn zero_and_constant_rewards() {
        let mu = EmpiricalMeasure::from_samples(vec![-1.0, 0.3, 2.0]).unwrap();
        let f0 = ValueField::new(params(1.0, 1.0), RewardSpec::constant(0.0).unwrap(), mu.clone()).unwrap();
        for (t, x) in [(0.0, 0.0), (0.7, -3.0), (0.99, 0.3)] {
            let d = f0.u_derivatives(t, x).unwrap();
            assert_eq!((d.u, d.u_x, d.u_xx), (1.0, 0.0, 0.0));
            assert_eq!(f0.value_and_drift(t, x).unwrap(), (0.0, 0.0, 0.0));
        }
        let f1 = ValueField::new(params(0.5, 1.0), RewardSpec::constant(1.0).unwrap(), mu).unwrap();
        let d = f1.u_derivatives(0.2, 0.1).unwrap();
        assert!((d.u - E).abs() < 1e-15);
        assert_eq!((d.u_x, d.u_xx), (0.0, 0.0));
        let (v, vx, a) = f1.value_and_drift(0.2, 0.1).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert_eq!((vx, a), (0.0, 0.0));
    }

    #[test]
    fn dirac_linear_rank_against_trapezoid_oracle() {
        let field = ValueField::new(
            params(0.5, 1.0),
            RewardSpec::linear_rank(),
            EmpiricalMeasure::dirac(0.0),
        )
        .unwrap();
        // Oracle values computed by trapezoid integration, step 1e-5 on [-8, 8].
        let u_oracle = trapezoid(&field, 0.0, 0.0, |_| 1.0, 1e-5);
        let ux_oracle = trapezoid(&field, 0.0, 0.0, |z| z, 1e-5);
        let expected_u = (1.0 + E) / 2.0;
        assert!((u_oracle - expected_u).abs() < 1e-5);
        assert!((ux_oracle - (E - 1.0) * normal_pdf(0.0)).abs() < 1e-5);

        let d = field.u_derivatives(0.0, 0.0).unwrap();
        assert!((d.u - 1.859_140_914_229_522_6).abs() < 1e-15);
        assert!((d.u_x - 0.685_495_271_017_794_8).abs() < 1e-12);
        assert!(d.u_xx.abs() < 1e-15);

        let (v, vx, a) = field.value_and_drift(0.0, 0.0).unwrap();
        assert!((v - 0.620_114_506_958_278).abs() < 1e-12);
        assert!((a - 0.368_716_145_059_871_5).abs() < 1e-12);
        // v_x = 2cσ² u_x/u, and a* = v_x / 2c
        assert!((vx - a).abs() < 1e-15);
        let h = 1e-5;
        let fd = (field.value(0.0, h).unwrap() - field.value(0.0, -h).unwrap()) / (2.0 * h);
        assert!((fd - vx).abs() < 1e-8);
    }

    #[test]
    fn exact_step_matches_gauss_hermite_on_rank_rewards() {
        let mu = EmpiricalMeasure::from_samples(vec![-0.7, -0.1, 0.0, 0.4, 1.3]).unwrap();
        let reward = RewardSpec::rank_power(1.0, 2.0).unwrap();
        let exact = ValueField::new(params(0.7, 1.2), reward.clone(), mu.clone()).unwrap();
        let gh = ValueField::with_quadrature(params(0.7, 1.2), reward, mu, QuadratureConfig::gauss_hermite(128)).unwrap();
        for (t, x) in [(0.0, 0.0), (0.5, -0.4), (0.9, 1.0), (0.999, 0.05)] {
            let a = exact.u_derivatives(t, x).unwrap();
            let b = gh.u_derivatives(t, x).unwrap();
            assert!((a.u - b.u).abs() <= 1e-12 * a.u);
            assert!((a.u_x - b.u_x).abs() <= 1e-10 * (1.0 + a.u_x.abs()));
        }
    }

    #[test]
    fn plain_gauss_hermite_cannot_resolve_a_step() {
        // Without removing the jump, 128 nodes miss the step at z = 0.3 by ~1e-2.
        let gh = GaussHermite::new(128);
        let plain = gh.expect(|z| if z >= 0.3 { E } else { 1.0 });
        let exact = 1.0 + (E - 1.0) * (1.0 - normal_cdf(0.3));
        assert!((plain - exact).abs() > 1e-4);
    }

    #[test]
    fn gauss_hermite_handles_x_dependent_rewards() {
        let mu = EmpiricalMeasure::from_samples(vec![-0.5, 0.2, 0.9]).unwrap();
        let reward = RewardSpec::mixed(1.0, 1.0, 0.5, 0.8).unwrap();
        let field = ValueField::new(params(1.0, 1.0), reward, mu).unwrap();
        assert_eq!(field.quadrature().method, QuadratureMethod::GaussHermite);
        for (t, x) in [(0.0, 0.0), (0.6, 0.4), (0.9, -1.0)] {
            let d = field.u_derivatives(t, x).unwrap();
            let u = trapezoid(&field, t, x, |_| 1.0, 1e-4);
            let s = field.spread(t).unwrap();
            let ux = trapezoid(&field, t, x, |z| z, 1e-4) / s;
            assert!((d.u - u).abs() < 1e-4 * u, "u {} vs {}", d.u, u);
            assert!((d.u_x - ux).abs() < 1e-3 * (1.0 + ux.abs()), "u_x {} vs {}", d.u_x, ux);
        }
    }

    #[test]
    fn exact_step_rejects_x_dependent_reward() {
        let reward = RewardSpec::mixed(1.0, 1.0, 0.5, 1.0).unwrap();
        let err = ValueField::with_quadrature(
            params(1.0, 1.0),
            reward,
            EmpiricalMeasure::dirac(0.0),
            QuadratureConfig::exact_step(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnsupportedMethod(_)));
    }

    #[test]
    fn terminal_time_is_a_domain_error() {
        let field = ValueField::new(params(1.0, 1.0), RewardSpec::linear_rank(), EmpiricalMeasure::dirac(0.0)).unwrap();
        assert!(matches!(field.u_derivatives(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(field.u_derivatives(1.5, 0.0), Err(Error::Domain(_))));
        assert!(field.u_derivatives(1.0 - 1e-6, 0.0).is_ok());
    }

    #[test]
    fn lemma_bound_examples() {
        let p = params(0.5, 1.0);
        let b = lemma_bounds(&p, &RewardSpec::linear_rank(), 0.0).unwrap();
        assert!((b.k - E).abs() < 1e-15);
        assert!((b.v_x_max - 5.895_613_780_243_015).abs() < 1e-12);
        assert!((b.effort_cap - 11.791_227_560_486_03).abs() < 1e-11);
        assert!(lemma_bounds(&p, &RewardSpec::linear_rank(), 1.0).is_err());
    }

    #[test]
    fn residual_examples() {
        let mu = EmpiricalMeasure::dirac(0.0);
        let zero = ValueField::new(params(0.5, 1.0), RewardSpec::constant(0.0).unwrap(), mu.clone()).unwrap();
        assert_eq!(zero.pde_residual(0.3, 0.2, 1e-4).unwrap(), 0.0);
        let one = ValueField::new(params(0.5, 1.0), RewardSpec::constant(1.0).unwrap(), mu.clone()).unwrap();
        assert!(one.pde_residual(0.3, 0.2, 1e-4).unwrap().abs() < 1e-12);
        let lin = ValueField::new(params(0.5, 1.0), RewardSpec::linear_rank(), mu).unwrap();
        let r1 = lin.pde_residual(0.5, 0.3, 1e-4).unwrap();
        let r2 = lin.pde_residual(0.5, 0.3, 5e-5).unwrap();
        assert!(r1.abs() <= 1e-5);
        assert!(r1.abs() / r2.abs() > 3.5, "{r1} {r2}");
        assert!(lin.pde_residual(0.5, 0.3, 0.0).is_err());
        assert!(lin.pde_residual(0.99, 0.3, 0.02).is_err());
    }

    #[test]
    fn drift_decays_far_from_the_atoms() {
        let mu = EmpiricalMeasure::from_samples(vec![-1.0, 0.0, 2.0]).unwrap();
        let field = ValueField::new(params(1.0, 1.0), RewardSpec::linear_rank(), mu).unwrap();
        for t in [0.0, 0.5, 0.9] {
            let reach = 10.0 * field.spread(t).unwrap();
            for x in [-1.0 - reach, 2.0 + reach, -1.0 - 2.0 * reach, 2.0 + 3.0 * reach] {
                let (_, _, a) = field.value_and_drift(t, x).unwrap();
                assert!(a.abs() <= 1e-6, "t={t} x={x} a={a}");
            }
        }
    }

    #[test]
    fn terminal_consistency_away_from_atoms() {
        let atoms = vec![-1.0, -0.2, 0.5, 1.1];
        let mu = EmpiricalMeasure::from_samples(atoms.clone()).unwrap();
        let reward = RewardSpec::rank_power(1.0, 0.5).unwrap();
        let field = ValueField::new(params(1.0, 1.0), reward.clone(), mu.clone()).unwrap();
        let t = 1.0 - 1e-6;
        let mut x = -2.0;
        while x < 2.0 {
            if atoms.iter().all(|a| (a - x).abs() >= 0.01) {
                let v = field.value(t, x).unwrap();
                let r = rank_reward_eval(&reward, &mu, x, CdfConvention::RightContinuous);
                assert!((v - r).abs() < 1e-3, "x={x}");
            }
            x += 0.013;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mu = EmpiricalMeasure::from_samples(vec![-0.5, 0.1, 0.15, 0.8]).unwrap();
        let field = ValueField::new(params(0.8, 1.1), RewardSpec::rank_power(2.0, 1.0).unwrap(), mu).unwrap();
        let h = 1e-5;
        for (t, x) in [(0.0, 0.0), (0.4, 0.3), (0.8, -0.2), (0.95, 0.12)] {
            let (_, vx, _) = field.value_and_drift(t, x).unwrap();
            let fd = (field.value(t, x + h).unwrap() - field.value(t, x - h).unwrap()) / (2.0 * h);
            assert!((fd - vx).abs() < 1e-6, "t={t} x={x}: {fd} vs {vx}");
        }
    }
}
