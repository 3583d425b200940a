//! Right-hand side and time integration of the relaxed compressible system.
//!
//! The evolution is written in solved form: the momentum and temperature
//! equations are divided by `1 + εη`, and the stress production in the
//! temperature equation is the full contraction `Σᵢⱼ (S₁ + S₂I)ᵢⱼ ∂ⱼuᵢ`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::spectral::{dealias, linf_norm, ScalarField, Spectrum};
use crate::state::{
    check_no_vacuum, in_state_space, PhysParams, RelaxedState, StateSpaceBounds,
    Tendency,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Classical explicit fourth-order Runge–Kutta on the full system.
    Erk4,
    /// Strang splitting: exact exponential decay of the stresses around an
    /// `Erk4` step of the remaining terms.
    #[default]
    RelaxExactSplit,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Erk4 => "erk4",
            Scheme::RelaxExactSplit => "relax_exact_split",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "erk4" => Ok(Scheme::Erk4),
            "relax_exact_split" => Ok(Scheme::RelaxExactSplit),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

fn evaluate(st: &RelaxedState, p: &PhysParams, with_relaxation: bool) -> Tendency {
    let grid = st.grid().clone();
    let eps = p.epsilon;

    let eta_hat = st.eta.spectrum();
    let u_hat: [Spectrum; 3] = std::array::from_fn(|i| st.u[i].spectrum());
    let phi_hat = st.phi.spectrum();
    let s1_hat: [Spectrum; 5] = std::array::from_fn(|c| st.s1.components()[c].spectrum());
    let s2_hat = st.s2.spectrum();

    let grad_eta: [ScalarField; 3] = std::array::from_fn(|j| eta_hat.partial(j));
    let grad_u: [[ScalarField; 3]; 3] =
        std::array::from_fn(|i| std::array::from_fn(|j| u_hat[i].partial(j)));
    let grad_phi: [ScalarField; 3] = std::array::from_fn(|j| phi_hat.partial(j));
    let lap_phi = phi_hat.laplacian();
    let grad_s2: [ScalarField; 3] = std::array::from_fn(|j| s2_hat.partial(j));

    // div S₁ with S₁₃₃ = -(a₁₁ + a₂₂)
    let [a11, a12, a13, a22, a23] = &s1_hat;
    let mut a33 = a11.clone();
    for (c, d) in a33.coeffs_mut().iter_mut().zip(a22.coeffs()) {
        *c = -(*c + d);
    }
    let div_s1 = [
        &(&a11.partial(0) + &a12.partial(1)) + &a13.partial(2),
        &(&a12.partial(0) + &a22.partial(1)) + &a23.partial(2),
        &(&a13.partial(0) + &a23.partial(1)) + &a33.partial(2),
    ];

    let n = grid.len();
    let mut out: [Vec<f64>; 11] = std::array::from_fn(|_| vec![0.0; n]);
    let eta = st.eta.values();
    let phi = st.phi.values();
    let u = [st.u[0].values(), st.u[1].values(), st.u[2].values()];
    let s1 = st.s1.components().map(|f| f.values());
    let s2 = st.s2.values();
    let relax = if with_relaxation { 1.0 } else { 0.0 };
    let (mu, lam, kappa) = (p.mu_eps, p.lambda_eps, p.kappa_eps);
    let (tau1, tau2) = (p.tau1_eps, p.tau2_eps);

    for x in 0..n {
        let rho = 1.0 + eps * eta[x];
        let theta = 1.0 + eps * phi[x];
        let ux = [u[0][x], u[1][x], u[2][x]];
        let du = |i: usize, j: usize| grad_u[i][j].values()[x];
        let div_u = du(0, 0) + du(1, 1) + du(2, 2);
        let adv = |g: &[ScalarField; 3]| {
            ux[0] * g[0].values()[x] + ux[1] * g[1].values()[x] + ux[2] * g[2].values()[x]
        };

        out[0][x] = -adv(&grad_eta) - rho / eps * div_u;

        for i in 0..3 {
            let self_adv = ux[0] * du(i, 0) + ux[1] * du(i, 1) + ux[2] * du(i, 2);
            let pressure =
                (theta * grad_eta[i].values()[x] + rho * grad_phi[i].values()[x]) / (eps * rho);
            let stress = (div_s1[i].values()[x] + grad_s2[i].values()[x]) / rho;
            out[1 + i][x] = -self_adv - pressure + stress;
        }

        let (b11, b12, b13, b22, b23) = (s1[0][x], s1[1][x], s1[2][x], s1[3][x], s1[4][x]);
        let b33 = -(b11 + b22);
        let contraction = b11 * du(0, 0)
            + b12 * (du(0, 1) + du(1, 0))
            + b13 * (du(0, 2) + du(2, 0))
            + b22 * du(1, 1)
            + b23 * (du(1, 2) + du(2, 1))
            + b33 * du(2, 2)
            + s2[x] * div_u;
        out[4][x] = -adv(&grad_phi) - (p.gamma - 1.0) / eps * theta * div_u
            + (kappa * lap_phi.values()[x] + eps * contraction) / rho;

        let third = div_u / 3.0;
        let target = [
            mu * 2.0 * (du(0, 0) - third),
            mu * (du(0, 1) + du(1, 0)),
            mu * (du(0, 2) + du(2, 0)),
            mu * 2.0 * (du(1, 1) - third),
            mu * (du(1, 2) + du(2, 1)),
        ];
        for c in 0..5 {
            out[5 + c][x] = (target[c] - relax * s1[c][x]) / tau1;
        }
        out[10][x] = (lam * div_u - relax * s2[x]) / tau2;
    }

    RelaxedState::from_components(out.map(|v| dealias(&ScalarField::from_vec_unchecked(&grid, v))))
}

/// Time derivative of the relaxed system, dealiased.
///
/// Fails when `1 + εη` or `1 + εφ` drops below the default `δ_G`.
pub fn rhs_relaxed(st: &RelaxedState, p: &PhysParams) -> Result<Tendency> {
    rhs_relaxed_with_bounds(st, p, &StateSpaceBounds::default())
}

pub fn rhs_relaxed_with_bounds(
    st: &RelaxedState,
    p: &PhysParams,
    bounds: &StateSpaceBounds,
) -> Result<Tendency> {
    check_no_vacuum(st, p.epsilon, bounds)?;
    Ok(evaluate(st, p, true))
}

/// Everything except the `-S/τ` relaxation terms.
fn rhs_without_relaxation(
    st: &RelaxedState,
    p: &PhysParams,
    bounds: &StateSpaceBounds,
) -> Result<Tendency> {
    check_no_vacuum(st, p.epsilon, bounds)?;
    Ok(evaluate(st, p, false))
}

fn erk4(
    st: &RelaxedState,
    dt: f64,
    f: impl Fn(&RelaxedState) -> Result<Tendency>,
) -> Result<RelaxedState> {
    let k1 = f(st)?;
    let mut s = st.clone();
    s.axpy(0.5 * dt, &k1);
    let k2 = f(&s)?;
    let mut s = st.clone();
    s.axpy(0.5 * dt, &k2);
    let k3 = f(&s)?;
    let mut s = st.clone();
    s.axpy(dt, &k3);
    let k4 = f(&s)?;
    let mut out = st.clone();
    out.axpy(dt / 6.0, &k1);
    out.axpy(dt / 3.0, &k2);
    out.axpy(dt / 3.0, &k3);
    out.axpy(dt / 6.0, &k4);
    Ok(out)
}

/// Exact solution of `τ ∂ₜS = -S` over `dt`.
fn relax_exactly(st: &mut RelaxedState, p: &PhysParams, dt: f64) {
    let f1 = (-dt / p.tau1_eps).exp();
    let f2 = (-dt / p.tau2_eps).exp();
    for c in st.s1.components_mut() {
        for v in c.values_mut() {
            *v *= f1;
        }
    }
    for v in st.s2.values_mut() {
        *v *= f2;
    }
}

/// Largest pointwise velocity magnitude.
pub fn sup_speed(st: &RelaxedState) -> f64 {
    let [u1, u2, u3] = &st.u;
    u1.values()
        .iter()
        .zip(u2.values())
        .zip(u3.values())
        .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
        .fold(0.0, f64::max)
}

/// `cfl · min(εΔx/(1+sup|u|), τ₁, τ₂, Δx²/(6κ))`; the relaxation times are
/// left out for the split scheme, which integrates them exactly.
pub fn dt_policy(st: &RelaxedState, p: &PhysParams, scheme: Scheme, cfl: f64) -> f64 {
    let h = st.grid().spacing();
    let mut limit = p.epsilon * h / (1.0 + sup_speed(st));
    limit = limit.min(h * h / (2.0 * p.kappa_eps * 3.0));
    if scheme == Scheme::Erk4 {
        limit = limit.min(p.tau1_eps).min(p.tau2_eps);
    }
    cfl * limit
}

/// Ceiling accepted by [`step`]: the policy at unit CFL number.
pub fn dt_max(st: &RelaxedState, p: &PhysParams, scheme: Scheme) -> f64 {
    dt_policy(st, p, scheme, 1.0)
}

/// Advances one step, checking the time-step ceiling and the default
/// admissible region.
pub fn step(st: &RelaxedState, p: &PhysParams, dt: f64, scheme: Scheme) -> Result<RelaxedState> {
    step_with_bounds(st, p, dt, scheme, &StateSpaceBounds::default())
}

pub fn step_with_bounds(
    st: &RelaxedState,
    p: &PhysParams,
    dt: f64,
    scheme: Scheme,
    bounds: &StateSpaceBounds,
) -> Result<RelaxedState> {
    let limit = dt_max(st, p, scheme);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::TimeStep { dt, dt_max: limit });
    }
    let next = match scheme {
        Scheme::Erk4 => erk4(st, dt, |s| rhs_relaxed_with_bounds(s, p, bounds))?,
        Scheme::RelaxExactSplit => {
            let mut s = st.clone();
            relax_exactly(&mut s, p, 0.5 * dt);
            let mut s = erk4(&s, dt, |s| rhs_without_relaxation(s, p, bounds))?;
            relax_exactly(&mut s, p, 0.5 * dt);
            s
        }
    };
    let report = in_state_space(&next, p.epsilon, bounds);
    if !report.inside {
        return Err(Error::OutsideStateSpace {
            field: report.worst_field,
            margin: report.worst_margin,
        });
    }
    Ok(next)
}

/// Stepping controls for [`simulate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimPolicy {
    pub scheme: Scheme,
    pub cfl: f64,
    /// Record a sample every this many steps (the first and last step are
    /// always recorded).
    pub sample_every: usize,
    /// Fixed step size; when `None` the step is derived from the initial
    /// state via [`dt_policy`] and shrunk so that it divides the horizon.
    pub dt: Option<f64>,
    pub bounds: StateSpaceBounds,
}

impl Default for SimPolicy {
    fn default() -> Self {
        Self {
            scheme: Scheme::RelaxExactSplit,
            cfl: 0.5,
            sample_every: 10,
            dt: None,
            bounds: StateSpaceBounds::default(),
        }
    }
}

impl SimPolicy {
    pub fn erk4() -> Self {
        Self {
            scheme: Scheme::Erk4,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub step: usize,
    pub t: f64,
    /// `∫ η dx`.
    pub mass: f64,
    pub sup_u: f64,
    pub sup_eta: f64,
    pub density_margin: f64,
    pub temperature_margin: f64,
}

impl Diagnostics {
    fn of(step: usize, t: f64, st: &RelaxedState, p: &PhysParams, b: &StateSpaceBounds) -> Self {
        let r = in_state_space(st, p.epsilon, b);
        Self {
            step,
            t,
            mass: st.eta.integral(),
            sup_u: sup_speed(st),
            sup_eta: linf_norm(&st.eta),
            density_margin: r.density_margin(b),
            temperature_margin: r.temperature_margin(b),
        }
    }
}

/// Samples recorded by [`simulate`].
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub dt: f64,
    pub diagnostics: Vec<Diagnostics>,
    /// States at the sampled times; empty for [`simulate_with`].
    pub snapshots: Vec<RelaxedState>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.diagnostics.iter().map(|d| d.t).collect()
    }

    /// Largest `|∫η(t) dx - ∫η(0) dx|` over the samples.
    pub fn mass_drift(&self) -> f64 {
        let Some(first) = self.diagnostics.first() else {
            return 0.0;
        };
        self.diagnostics
            .iter()
            .map(|d| (d.mass - first.mass).abs())
            .fold(0.0, f64::max)
    }
}

/// Integrates to `t_end`, keeping a snapshot at every sample.
pub fn simulate(
    init: &RelaxedState,
    p: &PhysParams,
    t_end: f64,
    policy: &SimPolicy,
) -> Result<Trajectory> {
    run(init, p, t_end, policy, true, |_, _, _| Ok(()))
}

/// Integrates to `t_end`, handing each sampled state to `observer` instead of
/// storing it.
pub fn simulate_with(
    init: &RelaxedState,
    p: &PhysParams,
    t_end: f64,
    policy: &SimPolicy,
    observer: impl FnMut(usize, f64, &RelaxedState) -> Result<()>,
) -> Result<Trajectory> {
    run(init, p, t_end, policy, false, observer)
}

/// Step count and uniform step size covering `[0, t_end]`.
pub fn plan_steps(init: &RelaxedState, p: &PhysParams, t_end: f64, policy: &SimPolicy) -> (usize, f64) {
    let target = policy
        .dt
        .unwrap_or_else(|| dt_policy(init, p, policy.scheme, policy.cfl));
    let steps = ((t_end / target) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (steps, t_end / steps as f64)
}

fn run(
    init: &RelaxedState,
    p: &PhysParams,
    t_end: f64,
    policy: &SimPolicy,
    keep: bool,
    mut observer: impl FnMut(usize, f64, &RelaxedState) -> Result<()>,
) -> Result<Trajectory> {
    p.validate()?;
    if !(t_end > 0.0) {
        return Err(Error::InvalidParameter {
            name: "T",
            value: t_end,
            reason: "must be positive",
        });
    }
    if !(policy.cfl > 0.0 && policy.cfl <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "cfl",
            value: policy.cfl,
            reason: "must lie in (0, 1]",
        });
    }
    let b = &policy.bounds;
    let report = in_state_space(init, p.epsilon, b);
    if !report.inside {
        return Err(Error::OutsideStateSpace {
            field: report.worst_field,
            margin: report.worst_margin,
        });
    }
    let (steps, dt) = plan_steps(init, p, t_end, policy);
    let every = policy.sample_every.max(1);

    let mut traj = Trajectory {
        dt,
        ..Default::default()
    };
    let mut state = init.clone();
    let mut record = |traj: &mut Trajectory, k: usize, st: &RelaxedState| -> Result<()> {
        let t = k as f64 * dt;
        traj.diagnostics.push(Diagnostics::of(k, t, st, p, b));
        if keep {
            traj.snapshots.push(st.clone());
        }
        observer(k, t, st)
    };
    record(&mut traj, 0, &state)?;
    for k in 1..=steps {
        state = match step_with_bounds(&state, p, dt, policy.scheme, b) {
            Ok(s) => s,
            Err(e) => {
                return Err(Error::Aborted {
                    step: k,
                    t: (k - 1) as f64 * dt,
                    source: Box::new(e),
                    partial: Box::new(traj),
                })
            }
        };
        if k % every == 0 || k == steps {
            record(&mut traj, k, &state)?;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::TorusGrid;
    use crate::state::{scaled_params, TauRule};

    fn setup(n: usize, eps: f64) -> (TorusGrid, PhysParams) {
        (
            TorusGrid::new(n).unwrap(),
            scaled_params(eps, 0.1, 0.1, 0.1, 5.0 / 3.0, TauRule::Linear).unwrap(),
        )
    }

    fn sup_all(st: &RelaxedState) -> f64 {
        st.components().iter().map(|f| linf_norm(f)).fold(0.0, f64::max)
    }

    #[test]
    fn rest_state_has_zero_tendency() {
        let (g, p) = setup(8, 0.1);
        let t = rhs_relaxed(&RelaxedState::zeros(&g), &p).unwrap();
        assert_eq!(sup_all(&t), 0.0);
    }

    #[test]
    fn constant_bulk_stress_relaxes() {
        let (g, p) = setup(8, 0.1);
        let mut st = RelaxedState::zeros(&g);
        st.s2 = ScalarField::constant(&g, 0.7);
        let t = rhs_relaxed(&st, &p).unwrap();
        let expect = -0.7 / p.tau2_eps;
        assert!(t.s2.values().iter().all(|v| (v - expect).abs() < 1e-12));
        for (i, f) in t.components().iter().enumerate() {
            if i != 10 {
                assert!(linf_norm(f) < 1e-12, "component {i}");
            }
        }
    }

    #[test]
    fn shear_flow_tendencies() {
        let (g, p) = setup(16, 0.1);
        let mut st = RelaxedState::zeros(&g);
        st.u[0] = ScalarField::from_fn(&g, |x| x[1].sin());
        let t = rhs_relaxed(&st, &p).unwrap();
        assert!(linf_norm(&t.eta) < 1e-12);
        assert!(linf_norm(&t.phi) < 1e-12);
        assert!(linf_norm(&t.u[0]) < 1e-12);
        let a12 = ScalarField::from_fn(&g, |x| p.mu_eps * x[1].cos() / p.tau1_eps);
        assert!(linf_norm(&(&t.s1.a12 - &a12)) < 1e-12);
        assert!(linf_norm(&t.s1.a11) < 1e-12);
        assert!(linf_norm(&t.s2) < 1e-12);
    }

    #[test]
    fn vacuum_is_rejected() {
        let (g, p) = setup(8, 0.1);
        let mut st = RelaxedState::zeros(&g);
        st.phi = ScalarField::constant(&g, -6.0);
        match rhs_relaxed(&st, &p) {
            Err(Error::OutsideStateSpace { field, margin }) => {
                assert_eq!(field, "temperature");
                assert!((margin + 0.1).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_state_is_fixed_for_both_schemes() {
        let (g, p) = setup(8, 0.1);
        let z = RelaxedState::zeros(&g);
        for scheme in [Scheme::Erk4, Scheme::RelaxExactSplit] {
            let dt = dt_policy(&z, &p, scheme, 0.5);
            let next = step(&z, &p, dt, scheme).unwrap();
            assert_eq!(sup_all(&next), 0.0);
        }
    }

    #[test]
    fn split_relaxes_bulk_stress_exactly() {
        let (g, p) = setup(8, 0.1);
        let mut st = RelaxedState::zeros(&g);
        st.s2 = ScalarField::constant(&g, 2.0);
        let dt = 0.01;
        let next = step(&st, &p, dt, Scheme::RelaxExactSplit).unwrap();
        let expect = 2.0 * (-dt / p.tau2_eps).exp();
        assert!(next.s2.values().iter().all(|v| (v - expect).abs() < 1e-14));
        assert!(sup_all(&next.map(|f| f.clone())) <= 2.0);
        assert!(linf_norm(&next.u[0]) == 0.0);
    }

    #[test]
    fn erk4_relaxation_local_error_is_fifth_order() {
        let (g, p) = setup(8, 0.1);
        let mut st = RelaxedState::zeros(&g);
        st.s2 = ScalarField::constant(&g, 1.0);
        let tau = p.tau2_eps;
        let mut errs = Vec::new();
        for dt in [tau / 10.0, tau / 20.0] {
            let next = step(&st, &p, dt, Scheme::Erk4).unwrap();
            let err = (next.s2.values()[0] - (-dt / tau).exp()).abs();
            // Taylor remainder of the degree-4 truncation: z⁵/120.
            let z: f64 = dt / tau;
            assert!(err <= 1.01 * z.powi(5) / 120.0);
            errs.push(err);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 4.8, "local order {order}");
    }

    #[test]
    fn dt_policy_arithmetic() {
        let (g, p) = setup(16, 0.1);
        let z = RelaxedState::zeros(&g);
        let h = 2.0 * std::f64::consts::PI / 16.0;
        let expect = 0.5 * (0.1 * h).min(0.1).min(h * h / 0.6);
        assert!((dt_policy(&z, &p, Scheme::Erk4, 0.5) - expect).abs() < 1e-15);
        let split = 0.5 * (0.1 * h).min(h * h / 0.6);
        assert!((dt_policy(&z, &p, Scheme::RelaxExactSplit, 0.5) - split).abs() < 1e-15);
    }

    #[test]
    fn oversized_step_is_rejected() {
        let (g, p) = setup(8, 0.1);
        let z = RelaxedState::zeros(&g);
        let dt = 2.0 * dt_max(&z, &p, Scheme::Erk4);
        assert!(matches!(step(&z, &p, dt, Scheme::Erk4), Err(Error::TimeStep { .. })));
    }

    #[test]
    fn zero_trajectory() {
        let (g, p) = setup(8, 0.1);
        let traj = simulate(&RelaxedState::zeros(&g), &p, 1.0, &SimPolicy::default()).unwrap();
        let last = traj.diagnostics.last().unwrap();
        assert!((last.t - 1.0).abs() < 1e-12);
        assert!(traj.times().windows(2).all(|w| w[1] > w[0]));
        assert!(traj.diagnostics.iter().all(|d| d.mass == 0.0));
        assert!(traj.snapshots.iter().all(|s| sup_all(s) == 0.0));
    }

    #[test]
    fn abort_carries_partial_trajectory() {
        let (g, p) = setup(8, 0.5);
        let mut st = RelaxedState::zeros(&g);
        // strong compression towards vacuum
        st.u[0] = ScalarField::from_fn(&g, |x| 3.0 * x[0].sin());
        let policy = SimPolicy {
            bounds: StateSpaceBounds::new(0.9, 10.0).unwrap(),
            sample_every: 1,
            ..SimPolicy::default()
        };
        match simulate(&st, &p, 2.0, &policy) {
            Err(Error::Aborted { step, partial, .. }) => {
                assert!(step >= 1);
                assert_eq!(partial.diagnostics.len(), step);
            }
            other => panic!("expected abort, got {:?}", other.map(|t| t.diagnostics.len())),
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in [Scheme::Erk4, Scheme::RelaxExactSplit] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("rk3".parse::<Scheme>().is_err());
    }
}
