//! Incompressible Navier–Stokes limit: exact Taylor–Green pair and a
//! Leray-projected pseudospectral solver.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{l2_inner, linf_norm, ScalarField, Spectrum, TorusGrid};

/// Divergence-free velocity `w` and zero-mean pressure `π`.
///
/// Also used to carry the time derivatives `(w_t, π_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncompressibleState {
    pub w: [ScalarField; 3],
    pub pi: ScalarField,
}

impl IncompressibleState {
    pub fn zeros(grid: &TorusGrid) -> Self {
        let z = ScalarField::zeros(grid);
        Self {
            w: [z.clone(), z.clone(), z.clone()],
            pi: z,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.pi.grid()
    }
}

/// Taylor–Green vortex
/// `w = (sin x₁ cos x₂, -cos x₁ sin x₂, 0) e^{-2μ̄t}`,
/// `π = ¼(cos 2x₁ + cos 2x₂) e^{-4μ̄t}`.
pub fn taylor_green(grid: &TorusGrid, t: f64, mu_bar: f64) -> IncompressibleState {
    let a = (-2.0 * mu_bar * t).exp();
    let b = (-4.0 * mu_bar * t).exp();
    IncompressibleState {
        w: [
            ScalarField::from_fn(grid, |x| a * x[0].sin() * x[1].cos()),
            ScalarField::from_fn(grid, |x| -a * x[0].cos() * x[1].sin()),
            ScalarField::zeros(grid),
        ],
        pi: ScalarField::from_fn(grid, |x| 0.25 * b * ((2.0 * x[0]).cos() + (2.0 * x[1]).cos())),
    }
}

/// Exact `(w_t, π_t) = (-2μ̄w, -4μ̄π)` of the Taylor–Green pair.
pub fn taylor_green_rate(grid: &TorusGrid, t: f64, mu_bar: f64) -> IncompressibleState {
    let tg = taylor_green(grid, t, mu_bar);
    IncompressibleState {
        w: tg.w.map(|f| f.scale(-2.0 * mu_bar)),
        pi: tg.pi.scale(-4.0 * mu_bar),
    }
}

fn spectra(v: &[ScalarField; 3]) -> [Spectrum; 3] {
    std::array::from_fn(|i| v[i].spectrum())
}

fn project_spectra(v: &mut [Spectrum; 3]) {
    let grid = v[0].grid().clone();
    for idx in 0..grid.len() {
        let k = grid.wave_vector(idx).map(|kj| kj as f64);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 {
            continue;
        }
        let dot: Complex64 = (0..3).map(|j| v[j].coeffs()[idx] * k[j]).sum();
        for j in 0..3 {
            v[j].coeffs_mut()[idx] -= dot * (k[j] / k2);
        }
    }
}

/// Leray projection `v̂ ↦ v̂ - k(k·v̂)/|k|²`; the mean mode is untouched.
pub fn leray_project(v: &[ScalarField; 3]) -> [ScalarField; 3] {
    let mut s = spectra(v);
    project_spectra(&mut s);
    std::array::from_fn(|i| s[i].to_field())
}

pub fn divergence(v: &[ScalarField; 3]) -> ScalarField {
    let s = spectra(v);
    &(&s[0].partial(0) + &s[1].partial(1)) + &s[2].partial(2)
}

/// `‖div v‖_{L²}`.
pub fn divergence_l2(v: &[ScalarField; 3]) -> f64 {
    let d = divergence(v);
    l2_inner(&d, &d).expect("same grid").sqrt()
}

/// Convective term `(a·∇)b`, dealiased, in spectral form.
fn convection(a: &[ScalarField; 3], b: &[ScalarField; 3]) -> [Spectrum; 3] {
    let bs = spectra(b);
    std::array::from_fn(|i| {
        let mut acc = ScalarField::zeros(a[0].grid());
        for j in 0..3 {
            let d = bs[i].partial(j);
            acc = acc.zip_map(&(&a[j] * &d), |x, y| x + y);
        }
        let mut s = acc.spectrum();
        s.dealias();
        s
    })
}

fn pressure_from_convection(n: &[Spectrum; 3]) -> ScalarField {
    let grid = n[0].grid().clone();
    let mut out = Spectrum::zeros(&grid);
    for idx in 0..grid.len() {
        let k = grid.wave_vector(idx).map(|kj| kj as f64);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 {
            continue;
        }
        // Δπ = -div N  ⇒  -|k|²π̂ = -i k·N̂
        let div: Complex64 = (0..3).map(|j| Complex64::new(0.0, k[j]) * n[j].coeffs()[idx]).sum();
        out.coeffs_mut()[idx] = div / k2;
    }
    out.to_field()
}

/// Zero-mean pressure solving `Δπ = -div((w·∇)w)`.
pub fn pressure_from_w(w: &[ScalarField; 3]) -> ScalarField {
    pressure_from_convection(&convection(w, w))
}

/// `π_t` from `Δπ_t = -div((w_t·∇)w + (w·∇)w_t)`.
pub fn pressure_rate(w: &[ScalarField; 3], w_t: &[ScalarField; 3]) -> ScalarField {
    let a = convection(w_t, w);
    let b = convection(w, w_t);
    let sum: [Spectrum; 3] = std::array::from_fn(|i| {
        let mut s = a[i].clone();
        for (c, d) in s.coeffs_mut().iter_mut().zip(b[i].coeffs()) {
            *c += d;
        }
        s
    });
    pressure_from_convection(&sum)
}

/// `P(-(w·∇)w) + μ̄Δw`.
pub fn rhs_incompressible(w: &[ScalarField; 3], mu_bar: f64) -> [ScalarField; 3] {
    let mut n = convection(w, w);
    for s in &mut n {
        for c in s.coeffs_mut() {
            *c = -*c;
        }
    }
    project_spectra(&mut n);
    std::array::from_fn(|i| &n[i].to_field() + &w[i].spectrum().laplacian().scale(mu_bar))
}

/// `‖∂ₜw + (w·∇)w + ∇π - μ̄Δw‖_{L²}` given the state and its time derivative.
pub fn momentum_residual(st: &IncompressibleState, rate: &IncompressibleState, mu_bar: f64) -> f64 {
    let n = convection(&st.w, &st.w);
    let pi_hat = st.pi.spectrum();
    let mut total = 0.0;
    for i in 0..3 {
        let r = &(&(&rate.w[i] + &n[i].to_field()) + &pi_hat.partial(i))
            - &st.w[i].spectrum().laplacian().scale(mu_bar);
        total += l2_inner(&r, &r).expect("same grid");
    }
    total.sqrt()
}

/// Largest time step accepted by [`simulate_incompressible`].
pub fn incompressible_dt_max(w: &[ScalarField; 3], mu_bar: f64) -> f64 {
    let h = w[0].grid().spacing();
    let speed = w.iter().map(linf_norm).fold(0.0, f64::max);
    (h / (1.0 + speed)).min(h * h / (6.0 * mu_bar))
}

#[derive(Clone, Debug, Default)]
pub struct IncompressibleTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<IncompressibleState>,
    /// `(w_t, π_t)` at each sample time.
    pub rates: Vec<IncompressibleState>,
}

fn rate_of(w: &[ScalarField; 3], mu_bar: f64) -> IncompressibleState {
    let w_t = rhs_incompressible(w, mu_bar);
    let pi_t = pressure_rate(w, &w_t);
    IncompressibleState { w: w_t, pi: pi_t }
}

/// Classical RK4 integration of the projected equations with a fixed step
/// (shrunk to divide `t_end`); samples every `sample_every` steps and at the
/// end.
pub fn simulate_incompressible(
    w0: &[ScalarField; 3],
    mu_bar: f64,
    t_end: f64,
    dt: f64,
    sample_every: usize,
) -> Result<IncompressibleTrajectory> {
    let div = divergence_l2(w0);
    if div > 1e-10 {
        return Err(Error::NotDivergenceFree(div));
    }
    if !(mu_bar > 0.0) {
        return Err(Error::InvalidParameter {
            name: "mu_bar",
            value: mu_bar,
            reason: "must be positive",
        });
    }
    if !(t_end > 0.0) {
        return Err(Error::InvalidParameter {
            name: "T",
            value: t_end,
            reason: "must be positive",
        });
    }
    let limit = incompressible_dt_max(w0, mu_bar);
    if !(dt > 0.0) || dt > limit {
        return Err(Error::TimeStep { dt, dt_max: limit });
    }
    let steps = ((t_end / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let every = sample_every.max(1);

    let mut traj = IncompressibleTrajectory::default();
    let mut w = w0.clone();
    let record = |traj: &mut IncompressibleTrajectory, k: usize, w: &[ScalarField; 3]| {
        traj.times.push(k as f64 * dt);
        traj.states.push(IncompressibleState {
            w: w.clone(),
            pi: pressure_from_w(w),
        });
        traj.rates.push(rate_of(w, mu_bar));
    };
    record(&mut traj, 0, &w);
    for k in 1..=steps {
        let k1 = rhs_incompressible(&w, mu_bar);
        let stage = |coef: f64, kk: &[ScalarField; 3]| -> [ScalarField; 3] {
            std::array::from_fn(|i| {
                let mut s = w[i].clone();
                s.axpy(coef, &kk[i]);
                s
            })
        };
        let k2 = rhs_incompressible(&stage(0.5 * dt, &k1), mu_bar);
        let k3 = rhs_incompressible(&stage(0.5 * dt, &k2), mu_bar);
        let k4 = rhs_incompressible(&stage(dt, &k3), mu_bar);
        for i in 0..3 {
            w[i].axpy(dt / 6.0, &k1[i]);
            w[i].axpy(dt / 3.0, &k2[i]);
            w[i].axpy(dt / 3.0, &k3[i]);
            w[i].axpy(dt / 6.0, &k4[i]);
        }
        if k % every == 0 || k == steps {
            record(&mut traj, k, &w);
        }
    }
    Ok(traj)
}

/// `‖a - b‖_{L²} / ‖b‖_{L²}` for velocity triples.
pub fn relative_l2_error(a: &[ScalarField; 3], b: &[ScalarField; 3]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..3 {
        let d = &a[i] - &b[i];
        num += l2_inner(&d, &d).expect("same grid");
        den += l2_inner(&b[i], &b[i]).expect("same grid");
    }
    (num / den).sqrt()
}
