//! Limit harness: well-prepared data, the approximate solution built from the
//! incompressible flow, its forcing residuals, error energies and the
//! ε-sweep measuring the convergence rates.

use std::ops::Deref;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::incompressible::{
    divergence_l2, simulate_incompressible, taylor_green, taylor_green_rate, IncompressibleState,
};
use crate::relaxed::{plan_steps, simulate_with, Scheme, SimPolicy};
use crate::spectral::{
    dealias, l2_inner, linf_norm, random_band_limited, sobolev_norm_sq, spectral_derivative,
    MultiIndex, ScalarField, Spectrum,
};
use crate::state::{
    check_no_vacuum, scaled_params, unpack_stress, PackedStress, PhysParams, RelaxedState,
    StateSpaceBounds, TauRule,
};

/// Largest admissible spread `max/min` of a normalised error column.
pub const NORMALIZED_RATIO_MAX: f64 = 3.0;
/// Smallest admissible least-squares slope for the fluid error.
pub const MIN_FIELDS_SLOPE: f64 = 0.8;
/// Largest admissible spread of the fitted Gronwall constant.
pub const GRONWALL_RATIO_MAX: f64 = 5.0;
/// Tolerance for the two integration-by-parts identities.
pub const CANCELLATION_TOL: f64 = 1e-10;

/// `μ(∇w + ∇wᵀ)` in packed form.
fn symmetric_gradient(w: &[ScalarField; 3], mu: f64) -> PackedStress {
    let s: [Spectrum; 3] = std::array::from_fn(|i| w[i].spectrum());
    let d = |i: usize, j: usize| s[i].partial(j);
    PackedStress {
        a11: d(0, 0).scale(2.0 * mu),
        a12: (&d(0, 1) + &d(1, 0)).scale(mu),
        a13: (&d(0, 2) + &d(2, 0)).scale(mu),
        a22: d(1, 1).scale(2.0 * mu),
        a23: (&d(1, 2) + &d(2, 1)).scale(mu),
    }
}

/// `(επ/2, w, επ/2, μ^ε(∇w+∇wᵀ), ελ^επ)` built from a limit state.
#[derive(Clone, Debug, PartialEq)]
pub struct ApproxState(pub RelaxedState);

impl Deref for ApproxState {
    type Target = RelaxedState;
    fn deref(&self) -> &RelaxedState {
        &self.0
    }
}

pub fn approximate_solution(reference: &IncompressibleState, p: &PhysParams) -> ApproxState {
    let eps = p.epsilon;
    let half = reference.pi.scale(0.5 * eps);
    ApproxState(RelaxedState {
        eta: half.clone(),
        u: reference.w.clone(),
        phi: half,
        s1: symmetric_gradient(&reference.w, p.mu_eps),
        s2: reference.pi.scale(eps * p.lambda_eps),
    })
}

/// Initial data coinciding with the approximate solution, so the initial
/// error vanishes identically.
pub fn well_prepared_initial(
    w0: &[ScalarField; 3],
    pi0: &ScalarField,
    p: &PhysParams,
) -> Result<RelaxedState> {
    let div = divergence_l2(w0);
    if div > 1e-10 {
        return Err(Error::NotDivergenceFree(div));
    }
    let mean = pi0.mean();
    if mean.abs() > 1e-12 * (1.0 + linf_norm(pi0)) {
        return Err(Error::InvalidParameter {
            name: "pi0",
            value: mean,
            reason: "pressure must have zero mean",
        });
    }
    let reference = IncompressibleState {
        w: w0.clone(),
        pi: pi0.clone(),
    };
    Ok(approximate_solution(&reference, p).0)
}

/// Adds band-limited noise of sup-amplitude `c·ε` to `(η, u, φ)` and `c·√ε`
/// to the stresses, matching the admissible initial-data scalings.
pub fn perturb(st: &RelaxedState, c: f64, p: &PhysParams, seed: u64) -> RelaxedState {
    let grid = st.grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kmax = (grid.n() / 3) as i64;
    let mut out = st.clone();
    for (i, f) in out.components_mut().into_iter().enumerate() {
        let noise = random_band_limited(&grid, kmax.min(3), &mut rng);
        let amp = if i < 5 { c * p.epsilon } else { c * p.epsilon.sqrt() };
        let sup = linf_norm(&noise).max(f64::MIN_POSITIVE);
        f.axpy(amp / sup, &noise);
    }
    out
}

/// Residuals `f₁…f₅` left by the approximate solution in the relaxed system
/// (before division by `1+εη` or `τ`), with their `H^s` norms.
#[derive(Clone, Debug)]
pub struct ForcingBundle {
    pub f1: ScalarField,
    pub f2: [ScalarField; 3],
    pub f3: ScalarField,
    pub f4: PackedStress,
    pub f5: ScalarField,
    pub s: usize,
    pub norms: [f64; 5],
}

/// Evaluates the forcings for a limit state and its time derivative
/// `rate = (w_t, π_t)`.
pub fn forcings(
    reference: &IncompressibleState,
    rate: &IncompressibleState,
    p: &PhysParams,
    s: usize,
) -> Result<ForcingBundle> {
    let eps = p.epsilon;
    let w = &reference.w;
    let pi = &reference.pi;
    let pi_hat = pi.spectrum();
    let grad_pi: [ScalarField; 3] = std::array::from_fn(|j| pi_hat.partial(j));
    let lap_pi = pi_hat.laplacian();
    let w_hat: [Spectrum; 3] = std::array::from_fn(|i| w[i].spectrum());

    let mut w_grad_pi = ScalarField::zeros(pi.grid());
    for j in 0..3 {
        w_grad_pi = &w_grad_pi + &(&w[j] * &grad_pi[j]);
    }
    let material_pi = dealias(&(&rate.pi + &w_grad_pi));

    let f1 = material_pi.scale(0.5 * eps);

    let f2: [ScalarField; 3] = std::array::from_fn(|i| {
        let mut conv = ScalarField::zeros(pi.grid());
        for j in 0..3 {
            conv = &conv + &(&w[j] * &w_hat[i].partial(j));
        }
        let momentum = &(&rate.w[i] + &conv) + &grad_pi[i];
        let lead = (pi * &momentum).scale(0.5 * eps * eps);
        dealias(&(&lead - &grad_pi[i].scale(eps * p.lambda_eps)))
    });

    let coef = pi.map(|v| 0.5 * eps + 0.25 * eps * eps * eps * v);
    let f3 = dealias(&(&(&coef * &material_pi) - &lap_pi.scale(0.5 * eps * p.kappa_eps)));

    let f4 = symmetric_gradient(&rate.w, p.tau1_eps * p.mu_eps);

    let f5 = (&rate.pi.scale(p.tau2_eps) + pi).scale(eps * p.lambda_eps);

    let norms = [
        sobolev_norm_sq(&[&f1], s)?.sqrt(),
        sobolev_norm_sq(&[&f2[0], &f2[1], &f2[2]], s)?.sqrt(),
        sobolev_norm_sq(&[&f3], s)?.sqrt(),
        stress_norm_sq(&f4, s)?.sqrt(),
        sobolev_norm_sq(&[&f5], s)?.sqrt(),
    ];
    Ok(ForcingBundle {
        f1,
        f2,
        f3,
        f4,
        f5,
        s,
        norms,
    })
}

/// `‖S₁‖_s²` summed over all nine matrix entries of the reconstructed tensor.
pub fn stress_norm_sq(s1: &PackedStress, s: usize) -> Result<f64> {
    let diag = sobolev_norm_sq(&[&s1.a11, &s1.a22, &s1.a33()], s)?;
    let off = sobolev_norm_sq(&[&s1.a12, &s1.a13, &s1.a23], s)?;
    Ok(diag + 2.0 * off)
}

/// Differences `U - U_ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorState {
    pub eta_d: ScalarField,
    pub u_d: [ScalarField; 3],
    pub phi_d: ScalarField,
    pub s1_d: PackedStress,
    pub s2_d: ScalarField,
}

impl ErrorState {
    pub fn from_state(d: RelaxedState) -> Self {
        Self {
            eta_d: d.eta,
            u_d: d.u,
            phi_d: d.phi,
            s1_d: d.s1,
            s2_d: d.s2,
        }
    }

    pub fn into_state(self) -> RelaxedState {
        RelaxedState {
            eta: self.eta_d,
            u: self.u_d,
            phi: self.phi_d,
            s1: self.s1_d,
            s2: self.s2_d,
        }
    }
}

pub fn error_state(u: &RelaxedState, approx: &ApproxState) -> Result<ErrorState> {
    u.eta.same_grid(&approx.eta)?;
    let comps: Vec<ScalarField> = u
        .components()
        .iter()
        .zip(approx.components())
        .map(|(a, b)| *a - b)
        .collect();
    let arr: [ScalarField; 11] = comps.try_into().expect("eleven components");
    Ok(ErrorState::from_state(RelaxedState::from_components(arr)))
}

/// Error norms at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    pub t: f64,
    pub s: usize,
    /// `E = ‖(η^d, u^d, φ^d, √τ₁ S₁^d, √τ₂ S₂^d)‖_s`.
    pub e_total: f64,
    /// `‖(η^d, u^d, φ^d)‖_s`.
    pub e_fields: f64,
    /// `‖(S₁^d, S₂^d)‖_s`.
    pub e_stress_raw: f64,
    pub s1_sq: f64,
    pub s2_sq: f64,
    /// Weighted energy at `α = 0` when a state was supplied.
    pub e_weighted: Option<f64>,
}

pub fn energy_e(e: &ErrorState, p: &PhysParams, s: usize) -> Result<EnergyReport> {
    let fields_sq = sobolev_norm_sq(&[&e.eta_d, &e.u_d[0], &e.u_d[1], &e.u_d[2], &e.phi_d], s)?;
    let s1_sq = stress_norm_sq(&e.s1_d, s)?;
    let s2_sq = sobolev_norm_sq(&[&e.s2_d], s)?;
    Ok(EnergyReport {
        t: 0.0,
        s,
        e_total: (fields_sq + p.tau1_eps * s1_sq + p.tau2_eps * s2_sq).sqrt(),
        e_fields: fields_sq.sqrt(),
        e_stress_raw: (s1_sq + s2_sq).sqrt(),
        s1_sq,
        s2_sq,
        e_weighted: None,
    })
}

/// `∫ { θ/ρ (∇^αη^d)² + ρ|∇^αu^d|² + ρ/((γ-1)θ) (∇^αφ^d)²
///      + τ₁/(2μ) |∇^αS₁^d|² + τ₂/λ (∇^αS₂^d)² } dx`
/// with `ρ = 1+εη`, `θ = 1+εφ` taken from `st`.
pub fn weighted_energy(
    e: &ErrorState,
    st: &RelaxedState,
    p: &PhysParams,
    alpha: MultiIndex,
) -> Result<f64> {
    check_no_vacuum(st, p.epsilon, &StateSpaceBounds::default())?;
    let eps = p.epsilon;
    let rho = st.eta.map(|v| 1.0 + eps * v);
    let theta = st.phi.map(|v| 1.0 + eps * v);
    let d = |f: &ScalarField| spectral_derivative(f, alpha);
    let sq = |f: &ScalarField| f.map(|v| v * v);

    let deta = d(&e.eta_d)?;
    let mut total = l2_inner(&theta.zip_map(&rho, |t, r| t / r), &sq(&deta))?;
    for ui in &e.u_d {
        total += l2_inner(&rho, &sq(&d(ui)?))?;
    }
    let dphi = d(&e.phi_d)?;
    let wphi = rho.zip_map(&theta, |r, t| r / ((p.gamma - 1.0) * t));
    total += l2_inner(&wphi, &sq(&dphi))?;

    let m = unpack_stress(&e.s1_d);
    let mut s1 = 0.0;
    for row in &m {
        for entry in row {
            let de = d(entry)?;
            s1 += l2_inner(&de, &de)?;
        }
    }
    total += p.tau1_eps / (2.0 * p.mu_eps) * s1;
    let ds2 = d(&e.s2_d)?;
    total += p.tau2_eps / p.lambda_eps * l2_inner(&ds2, &ds2)?;
    Ok(total)
}

/// Integrals entering the two integration-by-parts identities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CancellationResiduals {
    /// `∫ ∇^α(div S₁)·∇^αu`.
    pub shear_lhs: f64,
    /// `½ ∫ ∇^α(∇u + ∇uᵀ - ⅔ div u I) : ∇^αS₁`.
    pub shear_rhs: f64,
    /// `∫ ∇^α∇S₂·∇^αu`.
    pub bulk_lhs: f64,
    /// `∫ ∇^αS₂ ∇^α div u`.
    pub bulk_rhs: f64,
    pub shear: f64,
    pub bulk: f64,
}

fn relative_sum(a: f64, b: f64) -> f64 {
    (a + b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Checks `∫∇^α(div S₁)∇^αu = -½∫∇^α(∇u+∇uᵀ-⅔div u I):∇^αS₁` and
/// `∫∇^α∇S₂·∇^αu = -∫∇^αS₂ ∇^α div u`, returning relative residuals.
pub fn cancellation_check(
    s1_d: &PackedStress,
    s2_d: &ScalarField,
    u_d: &[ScalarField; 3],
    alpha: MultiIndex,
) -> Result<CancellationResiduals> {
    for f in s1_d.components().into_iter().chain(u_d.iter()) {
        s2_d.same_grid(f)?;
    }
    let m = unpack_stress(s1_d);
    let ms: [[Spectrum; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| m[i][j].spectrum()));
    let us: [Spectrum; 3] = std::array::from_fn(|i| u_d[i].spectrum());
    let s2s = s2_d.spectrum();
    let da = |f: &ScalarField| spectral_derivative(f, alpha);

    let div_u = &(&us[0].partial(0) + &us[1].partial(1)) + &us[2].partial(2);
    let du_alpha: [ScalarField; 3] = [da(&u_d[0])?, da(&u_d[1])?, da(&u_d[2])?];

    let mut shear_lhs = 0.0;
    let mut bulk_lhs = 0.0;
    for i in 0..3 {
        let div_s1_i = &(&ms[i][0].partial(0) + &ms[i][1].partial(1)) + &ms[i][2].partial(2);
        shear_lhs += l2_inner(&da(&div_s1_i)?, &du_alpha[i])?;
        bulk_lhs += l2_inner(&da(&s2s.partial(i))?, &du_alpha[i])?;
    }

    let mut shear_rhs = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let mut strain = &us[i].partial(j) + &us[j].partial(i);
            if i == j {
                strain.axpy(-2.0 / 3.0, &div_u);
            }
            shear_rhs += 0.5 * l2_inner(&da(&strain)?, &da(&m[i][j])?)?;
        }
    }
    let bulk_rhs = l2_inner(&da(s2_d)?, &da(&div_u)?)?;

    Ok(CancellationResiduals {
        shear_lhs,
        shear_rhs,
        bulk_lhs,
        bulk_rhs,
        shear: relative_sum(shear_lhs, shear_rhs),
        bulk: relative_sum(bulk_lhs, bulk_rhs),
    })
}

/// Smallest `C` with `d(E²)/dt ≤ C(1+E²)E² + Cε²` at every interior sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GronwallFit {
    pub c_min: f64,
    pub interior_samples: usize,
}

/// Fits the differential inequality on a uniformly sampled `E(t)` series,
/// using centred differences for `d(E²)/dt`.
pub fn gronwall_diagnostic(times: &[f64], energy: &[f64], epsilon: f64) -> Result<GronwallFit> {
    let n = times.len().min(energy.len());
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let h = times[1] - times[0];
    let uniform = times
        .windows(2)
        .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs());
    if !(h > 0.0) || !uniform {
        return Err(Error::InvalidParameter {
            name: "times",
            value: h,
            reason: "samples must be uniformly spaced and increasing",
        });
    }
    let mut c_min = 0.0_f64;
    for k in 1..n - 1 {
        let slope = (energy[k + 1].powi(2) - energy[k - 1].powi(2)) / (2.0 * h);
        let e2 = energy[k] * energy[k];
        let bound = (1.0 + e2) * e2 + epsilon * epsilon;
        c_min = c_min.max(slope / bound);
    }
    Ok(GronwallFit {
        c_min,
        interior_samples: n - 2,
    })
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
}

/// `None` when fewer than two points or any value is not strictly positive.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Option<LogFit> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Some(LogFit {
        slope,
        intercept: my - slope * mx,
    })
}

/// `max/min` of a column; `None` if any entry is not strictly positive.
pub fn spread(values: &[f64]) -> Option<f64> {
    if values.is_empty() || values.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Some(max / min)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SweepMode {
    /// Integrate the relaxed system.
    #[default]
    Solver,
    /// Replace the solver by the approximate solution itself.
    SelfTest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReferenceKind {
    /// Closed-form Taylor–Green pair.
    #[default]
    TaylorGreenExact,
    /// Taylor–Green initial data advanced by the projected spectral solver.
    TaylorGreenNumerical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub eps_list: Vec<f64>,
    pub n: usize,
    pub s: usize,
    pub t_star: f64,
    pub gamma: f64,
    pub mu_bar: f64,
    pub lambda_bar: f64,
    pub kappa_bar: f64,
    pub tau_rule: TauRule,
    pub scheme: Scheme,
    pub cfl: f64,
    pub sample_every: usize,
    pub mode: SweepMode,
    pub reference: ReferenceKind,
    /// `(c, seed)` for [`perturb`] applied to the initial data.
    pub perturbation: Option<(f64, u64)>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps_list: vec![0.2, 0.1, 0.05, 0.025],
            n: 16,
            s: 2,
            t_star: 0.5,
            gamma: 5.0 / 3.0,
            mu_bar: 0.1,
            lambda_bar: 0.1,
            kappa_bar: 0.1,
            tau_rule: TauRule::Linear,
            scheme: Scheme::RelaxExactSplit,
            cfl: 0.5,
            sample_every: 10,
            mode: SweepMode::Solver,
            reference: ReferenceKind::TaylorGreenExact,
            perturbation: None,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eps_list.len() < 3 {
            return Err(Error::TooFewSamples {
                needed: 3,
                got: self.eps_list.len(),
            });
        }
        if !self.eps_list.windows(2).all(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter {
                name: "eps_list",
                value: self.eps_list[0],
                reason: "must be strictly decreasing",
            });
        }
        if !(self.t_star > 0.0) {
            return Err(Error::InvalidParameter {
                name: "T_star",
                value: self.t_star,
                reason: "must be positive",
            });
        }
        for &eps in &self.eps_list {
            self.params(eps)?;
        }
        Ok(())
    }

    pub fn params(&self, epsilon: f64) -> Result<PhysParams> {
        scaled_params(
            epsilon,
            self.mu_bar,
            self.lambda_bar,
            self.kappa_bar,
            self.gamma,
            self.tau_rule,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepSample {
    pub step: usize,
    pub t: f64,
    pub energy: EnergyReport,
    pub forcing_norms: [f64; 5],
    pub mass: f64,
    /// Largest pointwise trace of the reconstructed `S₁`.
    pub s1_trace: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonRun {
    pub epsilon: f64,
    pub params: PhysParams,
    pub dt: f64,
    pub steps: usize,
    pub samples: Vec<SweepSample>,
    pub sup_e_fields: f64,
    pub sup_e_stress: f64,
    pub sup_e_total: f64,
    /// `sup_t ‖fᵢ‖_s / ε`.
    pub forcing_over_eps: [f64; 5],
    /// Largest `|∫η(t) - ∫η(0)|` over the samples.
    pub mass_drift: f64,
    pub max_s1_trace: f64,
    pub gronwall: Option<GronwallFit>,
}

impl EpsilonRun {
    pub fn fields_over_eps(&self) -> f64 {
        self.sup_e_fields / self.epsilon
    }

    pub fn stress_over_sqrt_eps(&self) -> f64 {
        self.sup_e_stress / self.epsilon.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepVerdicts {
    pub fields_bounded: bool,
    pub fields_slope: bool,
    pub stress_bounded: bool,
    pub forcing_bounded: [bool; 5],
    pub gronwall_bounded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub runs: Vec<EpsilonRun>,
    pub fields_fit: Option<LogFit>,
    pub stress_fit: Option<LogFit>,
    /// `max_ε sup_t E_fields / ε`.
    pub k_fields: f64,
    /// `max_ε sup_t E_stress / √ε`.
    pub k_stress: f64,
    pub fields_ratio: Option<f64>,
    pub stress_ratio: Option<f64>,
    pub forcing_ratios: [Option<f64>; 5],
    pub gronwall_ratio: Option<f64>,
    pub verdicts: SweepVerdicts,
}

impl SweepReport {
    fn assemble(config: SweepConfig, runs: Vec<EpsilonRun>) -> Self {
        let eps: Vec<f64> = runs.iter().map(|r| r.epsilon).collect();
        let fields: Vec<f64> = runs.iter().map(|r| r.sup_e_fields).collect();
        let stress: Vec<f64> = runs.iter().map(|r| r.sup_e_stress).collect();
        let f_norm: Vec<f64> = runs.iter().map(EpsilonRun::fields_over_eps).collect();
        let s_norm: Vec<f64> = runs.iter().map(EpsilonRun::stress_over_sqrt_eps).collect();
        let forcing_ratios: [Option<f64>; 5] = std::array::from_fn(|i| {
            spread(&runs.iter().map(|r| r.forcing_over_eps[i]).collect::<Vec<_>>())
        });
        let gronwall: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.gronwall.map(|g| g.c_min))
            .collect();
        let all_zero = |v: &[f64]| !v.is_empty() && v.iter().all(|&x| x == 0.0);
        let gronwall_ratio = spread(&gronwall);

        let fields_fit = fit_loglog(&eps, &fields);
        let fields_ratio = spread(&f_norm);
        let stress_ratio = spread(&s_norm);
        let bounded = |r: Option<f64>, v: &[f64]| {
            r.map_or(all_zero(v), |x| x <= NORMALIZED_RATIO_MAX)
        };
        let verdicts = SweepVerdicts {
            fields_bounded: bounded(fields_ratio, &f_norm),
            fields_slope: fields_fit.map_or(all_zero(&fields), |f| f.slope >= MIN_FIELDS_SLOPE),
            stress_bounded: bounded(stress_ratio, &s_norm),
            forcing_bounded: std::array::from_fn(|i| {
                forcing_ratios[i].is_some_and(|x| x <= NORMALIZED_RATIO_MAX)
            }),
            gronwall_bounded: gronwall.len() == runs.len()
                && gronwall_ratio.map_or(all_zero(&gronwall), |x| x <= GRONWALL_RATIO_MAX),
        };
        Self {
            k_fields: f_norm.iter().copied().fold(0.0, f64::max),
            k_stress: s_norm.iter().copied().fold(0.0, f64::max),
            fields_fit,
            stress_fit: fit_loglog(&eps, &stress),
            fields_ratio,
            stress_ratio,
            forcing_ratios,
            gronwall_ratio,
            verdicts,
            config,
            runs,
        }
    }

    pub fn all_passed(&self) -> bool {
        let v = &self.verdicts;
        v.fields_bounded
            && v.fields_slope
            && v.stress_bounded
            && v.forcing_bounded.iter().all(|&b| b)
            && v.gronwall_bounded
    }
}

struct Reference {
    numerical: Option<(Vec<IncompressibleState>, Vec<IncompressibleState>)>,
    grid: crate::spectral::TorusGrid,
    mu_bar: f64,
}

impl Reference {
    fn at(&self, sample: usize, t: f64) -> (IncompressibleState, IncompressibleState) {
        match &self.numerical {
            Some((states, rates)) => (states[sample].clone(), rates[sample].clone()),
            None => (
                taylor_green(&self.grid, t, self.mu_bar),
                taylor_green_rate(&self.grid, t, self.mu_bar),
            ),
        }
    }
}

fn run_epsilon(cfg: &SweepConfig, epsilon: f64) -> Result<EpsilonRun> {
    let grid = crate::spectral::TorusGrid::new(cfg.n)?;
    let p = cfg.params(epsilon)?;
    let tg0 = taylor_green(&grid, 0.0, cfg.mu_bar);
    let mut init = well_prepared_initial(&tg0.w, &tg0.pi, &p)?;
    if let Some((c, seed)) = cfg.perturbation {
        init = perturb(&init, c, &p, seed);
    }
    let policy = SimPolicy {
        scheme: cfg.scheme,
        cfl: cfg.cfl,
        sample_every: cfg.sample_every,
        dt: None,
        bounds: StateSpaceBounds::default(),
    };
    let (steps, dt) = plan_steps(&init, &p, cfg.t_star, &policy);
    let every = cfg.sample_every.max(1);

    let reference = Reference {
        numerical: match cfg.reference {
            ReferenceKind::TaylorGreenExact => None,
            ReferenceKind::TaylorGreenNumerical => {
                let traj = simulate_incompressible(&tg0.w, cfg.mu_bar, cfg.t_star, dt, every)?;
                Some((traj.states, traj.rates))
            }
        },
        grid: grid.clone(),
        mu_bar: cfg.mu_bar,
    };

    let mut samples = Vec::new();
    let mut observe = |k: usize, t: f64, st: &RelaxedState| -> Result<()> {
        let (r, rate) = reference.at(samples.len(), t);
        let approx = approximate_solution(&r, &p);
        let e = error_state(st, &approx)?;
        let mut energy = energy_e(&e, &p, cfg.s)?;
        energy.t = t;
        let f = forcings(&r, &rate, &p, cfg.s)?;
        let trace = linf_norm(&(&(&st.s1.a11 + &st.s1.a22) + &st.s1.a33()));
        samples.push(SweepSample {
            step: k,
            t,
            energy,
            forcing_norms: f.norms,
            mass: st.eta.integral(),
            s1_trace: trace,
        });
        Ok(())
    };

    match cfg.mode {
        SweepMode::Solver => {
            simulate_with(&init, &p, cfg.t_star, &policy, &mut observe)?;
        }
        SweepMode::SelfTest => {
            let mut taken = 0;
            for k in 0..=steps {
                if k % every == 0 || k == steps {
                    let t = k as f64 * dt;
                    let (r, _) = reference.at(taken, t);
                    taken += 1;
                    let st = approximate_solution(&r, &p).0;
                    observe(k, t, &st)?;
                }
            }
        }
    }

    let sup = |f: &dyn Fn(&SweepSample) -> f64| samples.iter().map(f).fold(0.0, f64::max);
    let forcing_over_eps: [f64; 5] =
        std::array::from_fn(|i| sup(&|s: &SweepSample| s.forcing_norms[i]) / epsilon);
    let mass0 = samples[0].mass;
    let uniform: Vec<&SweepSample> = samples.iter().filter(|s| s.step % every == 0).collect();
    let gronwall = gronwall_diagnostic(
        &uniform.iter().map(|s| s.t).collect::<Vec<_>>(),
        &uniform.iter().map(|s| s.energy.e_total).collect::<Vec<_>>(),
        epsilon,
    )
    .ok();
    Ok(EpsilonRun {
        epsilon,
        params: p,
        dt,
        steps,
        sup_e_fields: sup(&|s: &SweepSample| s.energy.e_fields),
        sup_e_stress: sup(&|s: &SweepSample| s.energy.e_stress_raw),
        sup_e_total: sup(&|s: &SweepSample| s.energy.e_total),
        forcing_over_eps,
        mass_drift: sup(&|s: &SweepSample| (s.mass - mass0).abs()),
        max_s1_trace: sup(&|s: &SweepSample| s.s1_trace),
        gronwall,
        samples,
    })
}

/// Runs the relaxed system for every `ε` (in parallel) against the limit
/// reference and fits the error rates.
pub fn convergence_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let results: Vec<(f64, Result<EpsilonRun>)> = cfg
        .eps_list
        .par_iter()
        .map(|&eps| (eps, run_epsilon(cfg, eps)))
        .collect();
    let mut runs = Vec::new();
    let mut failure = None;
    for (eps, r) in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) if failure.is_none() => failure = Some((eps, e)),
            Err(_) => {}
        }
    }
    let report = SweepReport::assemble(cfg.clone(), runs);
    match failure {
        None => Ok(report),
        Some((epsilon, source)) => Err(Error::SweepAborted {
            epsilon,
            source: Box::new(source),
            partial: Box::new(report),
        }),
    }
}

/// `sup_t ‖fᵢ‖_s / ε` for each `ε`, on the exact Taylor–Green reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingTable {
    pub eps: Vec<f64>,
    pub over_eps: Vec<[f64; 5]>,
    pub ratios: [Option<f64>; 5],
    pub passed: bool,
}

pub fn forcing_bound_check(cfg: &SweepConfig, time_samples: usize) -> Result<ForcingTable> {
    cfg.validate()?;
    let grid = crate::spectral::TorusGrid::new(cfg.n)?;
    let samples = time_samples.max(1);
    let mut over_eps = Vec::new();
    for &eps in &cfg.eps_list {
        let p = cfg.params(eps)?;
        let mut sup = [0.0_f64; 5];
        for j in 0..=samples {
            let t = cfg.t_star * j as f64 / samples as f64;
            let r = taylor_green(&grid, t, cfg.mu_bar);
            let rate = taylor_green_rate(&grid, t, cfg.mu_bar);
            let f = forcings(&r, &rate, &p, cfg.s)?;
            for i in 0..5 {
                sup[i] = sup[i].max(f.norms[i] / eps);
            }
        }
        over_eps.push(sup);
    }
    let ratios: [Option<f64>; 5] =
        std::array::from_fn(|i| spread(&over_eps.iter().map(|r| r[i]).collect::<Vec<_>>()));
    let passed = ratios.iter().all(|r| r.is_some_and(|x| x <= NORMALIZED_RATIO_MAX));
    Ok(ForcingTable {
        eps: cfg.eps_list.clone(),
        over_eps,
        ratios,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{sobolev_norm, TorusGrid, BOX_VOLUME};

    fn setup(eps: f64) -> (TorusGrid, PhysParams) {
        (
            TorusGrid::new(16).unwrap(),
            scaled_params(eps, 0.1, 0.1, 0.1, 5.0 / 3.0, TauRule::Linear).unwrap(),
        )
    }

    fn origin(f: &ScalarField) -> f64 {
        f.values()[0]
    }

    #[test]
    fn zero_limit_gives_zero_state() {
        let (g, p) = setup(0.1);
        let z = IncompressibleState::zeros(&g);
        let st = well_prepared_initial(&z.w, &z.pi, &p).unwrap();
        assert_eq!(st, RelaxedState::zeros(&g));
        let a = approximate_solution(&z, &p);
        assert!(a.components().iter().all(|f| linf_norm(f) == 0.0));
    }

    #[test]
    fn taylor_green_initial_values() {
        let (g, p) = setup(0.1);
        let tg = taylor_green(&g, 0.0, 0.1);
        let st = well_prepared_initial(&tg.w, &tg.pi, &p).unwrap();
        assert!((origin(&st.eta) - 0.025).abs() < 1e-15);
        assert!((origin(&st.phi) - 0.025).abs() < 1e-15);
        let trace = &(&st.s1.a11 + &st.s1.a22) + &st.s1.a33();
        assert!(linf_norm(&trace) < 1e-14);
        // explicit a₃₃ = 2μ∂₃w₃ = 0 for this flow
        assert!(linf_norm(&st.s1.a33()) < 1e-14);
    }

    #[test]
    fn approximate_bulk_stress_and_shear() {
        let (g, p) = setup(0.1);
        let tg = taylor_green(&g, 0.0, 0.1);
        let a = approximate_solution(&tg, &p);
        assert!((origin(&a.s2) - 0.005).abs() < 1e-15);
        // ∂₂w₁ + ∂₁w₂ = -sin x₁ sin x₂ + sin x₁ sin x₂ = 0
        assert!(linf_norm(&a.s1.a12) < 1e-14);
        // a₁₁ = 2μ cos x₁ cos x₂, a₂₂ = -2μ cos x₁ cos x₂
        let expect = ScalarField::from_fn(&g, |x| 2.0 * 0.1 * x[0].cos() * x[1].cos());
        assert!(linf_norm(&(&a.s1.a11 - &expect)) < 1e-13);
        assert!(linf_norm(&(&a.s1.a22 + &expect)) < 1e-13);
        assert!(linf_norm(&a.s1.a13) < 1e-14 && linf_norm(&a.s1.a23) < 1e-14);
    }

    #[test]
    fn rejects_divergent_or_offset_data() {
        let (g, p) = setup(0.1);
        let w = [
            ScalarField::from_fn(&g, |x| x[0].sin()),
            ScalarField::zeros(&g),
            ScalarField::zeros(&g),
        ];
        let pi = ScalarField::zeros(&g);
        assert!(matches!(
            well_prepared_initial(&w, &pi, &p),
            Err(Error::NotDivergenceFree(_))
        ));
        let tg = taylor_green(&g, 0.0, 0.1);
        let shifted = tg.pi.map(|v| v + 1.0);
        assert!(well_prepared_initial(&tg.w, &shifted, &p).is_err());
    }

    #[test]
    fn forcing_examples_for_taylor_green() {
        let (g, p) = setup(0.1);
        let mu = 0.1;
        let tg = taylor_green(&g, 0.0, mu);
        let rate = taylor_green_rate(&g, 0.0, mu);
        let f = forcings(&tg, &rate, &p, 2).unwrap();
        let s1 = symmetric_gradient(&tg.w, 1.0);
        let coef = -2.0 * mu * p.tau1_eps * p.mu_eps;
        for (got, base) in f.f4.components().iter().zip(s1.components()) {
            assert!(linf_norm(&(*got - &base.scale(coef))) < 1e-14);
        }
        let f5 = tg.pi.scale(p.epsilon * p.lambda_eps * (1.0 - 4.0 * mu * p.tau2_eps));
        assert!(linf_norm(&(&f.f5 - &f5)) < 1e-15);

        let z = IncompressibleState::zeros(&g);
        let fz = forcings(&z, &z, &p, 2).unwrap();
        assert!(fz.norms.iter().all(|&n| n == 0.0));
    }

    #[test]
    fn f1_and_f4_scale_exactly_with_epsilon() {
        let g = TorusGrid::new(16).unwrap();
        let tg = taylor_green(&g, 0.2, 0.1);
        let rate = taylor_green_rate(&g, 0.2, 0.1);
        let mut cols = Vec::new();
        for eps in [0.2, 0.1, 0.05] {
            let p = scaled_params(eps, 0.1, 0.1, 0.1, 5.0 / 3.0, TauRule::Linear).unwrap();
            let f = forcings(&tg, &rate, &p, 2).unwrap();
            cols.push([f.norms[0] / eps, f.norms[3] / eps, f.norms[1] / eps]);
        }
        for c in &cols[1..] {
            assert!((c[0] - cols[0][0]).abs() <= 1e-12 * cols[0][0]);
            assert!((c[1] - cols[0][1]).abs() <= 1e-12 * cols[0][1]);
        }
        // f₂ is not exactly linear (ε² term) but stays bounded
        assert!((cols[0][2] - cols[2][2]).abs() > 1e-6 * cols[0][2]);
        assert!(spread(&cols.iter().map(|c| c[2]).collect::<Vec<_>>()).unwrap() < 3.0);
    }

    #[test]
    fn error_state_basics() {
        let (g, p) = setup(0.1);
        let tg = taylor_green(&g, 0.0, 0.1);
        let a = approximate_solution(&tg, &p);
        let e = error_state(&a.0, &a).unwrap();
        assert!(e.clone().into_state().components().iter().all(|f| linf_norm(f) == 0.0));
        let init = well_prepared_initial(&tg.w, &tg.pi, &p).unwrap();
        let e0 = energy_e(&error_state(&init, &a).unwrap(), &p, 2).unwrap();
        assert_eq!(e0.e_total, 0.0);

        let mut shifted = a.0.clone();
        let delta = ScalarField::from_fn(&g, |x| 0.01 * x[2].sin());
        shifted.u[2].axpy(1.0, &delta);
        let e1 = error_state(&shifted, &a).unwrap();
        assert!(linf_norm(&(&e1.u_d[2] - &delta)) < 1e-15);
        assert_eq!(linf_norm(&e1.eta_d), 0.0);
    }

    #[test]
    fn energy_of_constant_bulk_error() {
        let (g, p) = setup(0.1);
        let mut d = RelaxedState::zeros(&g);
        d.s2 = ScalarField::constant(&g, 0.3);
        let e = ErrorState::from_state(d);
        let r = energy_e(&e, &p, 2).unwrap();
        let expect = p.tau2_eps.sqrt() * 0.3 * BOX_VOLUME.sqrt();
        assert!((r.e_total - expect).abs() < 1e-12 * expect);
        assert_eq!(r.e_fields, 0.0);

        let doubled = ErrorState::from_state(e.clone().into_state().scale(2.0));
        let r2 = energy_e(&doubled, &p, 2).unwrap();
        assert!((r2.e_total - 2.0 * r.e_total).abs() < 1e-12 * r.e_total);
    }

    #[test]
    fn stress_norm_counts_all_nine_entries() {
        let g = TorusGrid::new(8).unwrap();
        let mut s = PackedStress::zeros(&g);
        s.a12 = ScalarField::constant(&g, 1.0);
        let direct = 2.0 * BOX_VOLUME;
        assert!((stress_norm_sq(&s, 0).unwrap() - direct).abs() < 1e-10);
        let mut d = PackedStress::zeros(&g);
        d.a11 = ScalarField::constant(&g, 1.0);
        // a₁₁ = 1, a₃₃ = -1
        assert!((stress_norm_sq(&d, 3).unwrap() - 2.0 * BOX_VOLUME).abs() < 1e-10);
    }

    #[test]
    fn weighted_energy_at_rest() {
        let (g, p) = setup(0.1);
        let rest = RelaxedState::zeros(&g);
        let zero = ErrorState::from_state(RelaxedState::zeros(&g));
        assert_eq!(weighted_energy(&zero, &rest, &p, MultiIndex::ZERO).unwrap(), 0.0);

        let mut d = RelaxedState::zeros(&g);
        d.eta = ScalarField::from_fn(&g, |x| x[0].sin());
        let e = ErrorState::from_state(d);
        let v = weighted_energy(&e, &rest, &p, MultiIndex::ZERO).unwrap();
        assert!((v - 4.0 * std::f64::consts::PI.powi(3)).abs() < 1e-10);
    }

    #[test]
    fn weighted_energy_rest_readoff() {
        let (g, p) = setup(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = RelaxedState::zeros(&g);
        for f in d.components_mut() {
            *f = random_band_limited(&g, 3, &mut rng);
        }
        let e = ErrorState::from_state(d.clone());
        let got = weighted_energy(&e, &RelaxedState::zeros(&g), &p, MultiIndex::ZERO).unwrap();
        let l2 = |f: &ScalarField| l2_inner(f, f).unwrap();
        let expect = l2(&d.eta)
            + d.u.iter().map(l2).sum::<f64>()
            + l2(&d.phi) / (p.gamma - 1.0)
            + p.tau1_eps / (2.0 * p.mu_eps) * stress_norm_sq(&d.s1, 0).unwrap()
            + p.tau2_eps / p.lambda_eps * l2(&d.s2);
        assert!((got - expect).abs() <= 1e-12 * expect);
        // strictly positive away from rest as well
        let mut st = RelaxedState::zeros(&g);
        st.eta = ScalarField::constant(&g, 2.0);
        st.phi = ScalarField::constant(&g, -1.0);
        assert!(weighted_energy(&e, &st, &p, MultiIndex::new(1, 0, 1)).unwrap() > 0.0);
    }

    #[test]
    fn cancellation_zero_and_random() {
        let g = TorusGrid::new(12).unwrap();
        let z = ScalarField::zeros(&g);
        let r = cancellation_check(&PackedStress::zeros(&g), &z, &[z.clone(), z.clone(), z.clone()], MultiIndex::new(1, 0, 0)).unwrap();
        assert_eq!((r.shear, r.bulk), (0.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut f = || random_band_limited(&g, 4, &mut rng);
        let s1 = PackedStress::from_components([f(), f(), f(), f(), f()]);
        let s2 = f();
        let u = [f(), f(), f()];
        for alpha in MultiIndex::up_to(2) {
            let r = cancellation_check(&s1, &s2, &u, alpha).unwrap();
            assert!(r.shear <= CANCELLATION_TOL, "{alpha:?}: {}", r.shear);
            assert!(r.bulk <= CANCELLATION_TOL, "{alpha:?}: {}", r.bulk);
            assert!(r.shear_lhs.abs() > 1.0);
        }
    }

    #[test]
    fn cancellation_with_newtonian_stress_is_dissipative() {
        let g = TorusGrid::new(12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u: [ScalarField; 3] = std::array::from_fn(|_| random_band_limited(&g, 3, &mut rng));
        let mu = 0.3;
        let us: [Spectrum; 3] = std::array::from_fn(|i| u[i].spectrum());
        let div = &(&us[0].partial(0) + &us[1].partial(1)) + &us[2].partial(2);
        let strain = |i: usize, j: usize| {
            let mut s = &us[i].partial(j) + &us[j].partial(i);
            if i == j {
                s.axpy(-2.0 / 3.0, &div);
            }
            s
        };
        let s1 = PackedStress {
            a11: strain(0, 0).scale(mu),
            a12: strain(0, 1).scale(mu),
            a13: strain(0, 2).scale(mu),
            a22: strain(1, 1).scale(mu),
            a23: strain(1, 2).scale(mu),
        };
        let alpha = MultiIndex::new(0, 1, 0);
        let r = cancellation_check(&s1, &ScalarField::zeros(&g), &u, alpha).unwrap();
        let mut norm = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = spectral_derivative(&strain(i, j), alpha).unwrap();
                norm += l2_inner(&d, &d).unwrap();
            }
        }
        let expect = -0.5 * mu * norm;
        assert!(r.shear_lhs < 0.0);
        assert!((r.shear_lhs - expect).abs() <= 1e-10 * expect.abs());
    }

    #[test]
    fn gronwall_examples() {
        let times: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let zero = vec![0.0; times.len()];
        let fit = gronwall_diagnostic(&times, &zero, 0.1).unwrap();
        assert_eq!(fit.c_min, 0.0);
        assert_eq!(fit.interior_samples, 19);

        // E = εt: d(E²)/dt = 2ε²t exactly under centred differences, so the
        // minimal constant is max_k 2tₖ / (1 + tₖ² + ε²tₖ⁴).
        for eps in [0.2, 0.05] {
            let e: Vec<f64> = times.iter().map(|t| eps * t).collect();
            let oracle = times[1..times.len() - 1]
                .iter()
                .map(|t| 2.0 * t / (1.0 + t * t + eps * eps * t.powi(4)))
                .fold(0.0, f64::max);
            let fit = gronwall_diagnostic(&times, &e, eps).unwrap();
            assert!((fit.c_min - oracle).abs() < 1e-12);
            assert!((fit.c_min - 1.0).abs() < 0.05);
        }
        assert!(matches!(
            gronwall_diagnostic(&times[..2], &zero[..2], 0.1),
            Err(Error::TooFewSamples { .. })
        ));
        assert!(gronwall_diagnostic(&[0.0, 0.1, 0.3], &[0.0; 3], 0.1).is_err());
    }

    #[test]
    fn loglog_fit_recovers_power_law() {
        let x = [0.2, 0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        let fit = fit_loglog(&x, &y).unwrap();
        assert!((fit.slope - 1.5).abs() < 1e-12);
        assert!((fit.intercept - 3.0_f64.ln()).abs() < 1e-12);
        assert!(fit_loglog(&x, &[0.0, 1.0, 1.0, 1.0]).is_none());
        assert_eq!(spread(&[1.0, 2.0, 4.0]), Some(4.0));
        assert_eq!(spread(&[1.0, 0.0]), None);
    }

    #[test]
    fn self_test_sweep_has_zero_error() {
        let cfg = SweepConfig {
            eps_list: vec![0.2, 0.1, 0.05],
            n: 8,
            t_star: 0.1,
            mode: SweepMode::SelfTest,
            ..SweepConfig::default()
        };
        let r = convergence_sweep(&cfg).unwrap();
        assert!(r.runs.iter().all(|run| run.sup_e_fields == 0.0 && run.sup_e_stress == 0.0));
        assert!(r.fields_fit.is_none());
        assert!(r.fields_ratio.is_none());
        assert_eq!(r.k_fields, 0.0);
        assert!(r.verdicts.fields_bounded && r.verdicts.stress_bounded);
    }

    #[test]
    fn sweep_config_validation() {
        let mut cfg = SweepConfig {
            eps_list: vec![0.1, 0.2, 0.05],
            ..SweepConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.eps_list = vec![0.2, 0.1];
        assert!(matches!(cfg.validate(), Err(Error::TooFewSamples { .. })));
        cfg.eps_list = vec![0.2, 0.1, 0.05];
        cfg.t_star = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn perturbation_respects_scalings() {
        let (g, p) = setup(0.04);
        let base = RelaxedState::zeros(&g);
        let pert = perturb(&base, 2.0, &p, 9);
        assert!((linf_norm(&pert.eta) - 0.08).abs() < 1e-12);
        assert!((linf_norm(&pert.s2) - 0.4).abs() < 1e-12);
        assert!(sobolev_norm(&[&pert.u[0]], 1).unwrap() > 0.0);
        assert_eq!(perturb(&base, 2.0, &p, 9), pert);
    }
}
