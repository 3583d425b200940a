//! Acceptance suite: every criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion failed.

use machlimit::harness::{
    cancellation_check, convergence_sweep, energy_e, stress_norm_sq, well_prepared_initial,
    ErrorState, SweepConfig, SweepReport, CANCELLATION_TOL, GRONWALL_RATIO_MAX,
    MIN_FIELDS_SLOPE, NORMALIZED_RATIO_MAX,
};
use machlimit::incompressible::{
    divergence_l2, incompressible_dt_max, momentum_residual, relative_l2_error,
    simulate_incompressible, taylor_green, taylor_green_rate,
};
use machlimit::relaxed::{dt_max, simulate, step, Scheme, SimPolicy};
use machlimit::spectral::{random_band_limited, sobolev_norm_sq, MultiIndex, ScalarField, TorusGrid};
use machlimit::state::{
    scaled_params, unpack_stress, PackedStress, PhysParams, RelaxedState, StateSpaceBounds,
    TauRule,
};
use machlimit::symmetrizer::{check_symmetrizable, ASYMMETRY_TOL};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 42;

fn params(eps: f64) -> PhysParams {
    scaled_params(eps, 0.1, 0.1, 0.1, 5.0 / 3.0, TauRule::Linear).unwrap()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |x| format!("{x:.4}"))
}

fn fields_rate(r: &SweepReport) -> (bool, String) {
    let slope = r.fields_fit.map(|f| f.slope);
    let ok = r.fields_ratio.is_some_and(|x| x <= NORMALIZED_RATIO_MAX)
        && slope.is_some_and(|s| s >= MIN_FIELDS_SLOPE);
    (
        ok,
        format!(
            "ratio {} (<= {NORMALIZED_RATIO_MAX}), slope {} (>= {MIN_FIELDS_SLOPE}), K {:.4}",
            fmt_opt(r.fields_ratio),
            fmt_opt(slope),
            r.k_fields
        ),
    )
}

fn stress_rate(r: &SweepReport) -> (bool, String) {
    let ok = r.stress_ratio.is_some_and(|x| x <= NORMALIZED_RATIO_MAX);
    (
        ok,
        format!(
            "ratio {} (<= {NORMALIZED_RATIO_MAX}), slope {}, K' {:.4}",
            fmt_opt(r.stress_ratio),
            fmt_opt(r.stress_fit.map(|f| f.slope)),
            r.k_stress
        ),
    )
}

fn forcing_bound(r: &SweepReport) -> (bool, String) {
    let ok = r.forcing_ratios.iter().all(|x| x.is_some_and(|v| v <= NORMALIZED_RATIO_MAX));
    let cols: Vec<String> = r.forcing_ratios.iter().map(|&x| fmt_opt(x)).collect();
    (ok, format!("ratios f1..f5 = [{}] (<= {NORMALIZED_RATIO_MAX})", cols.join(", ")))
}

fn symmetrizability() -> (bool, String) {
    let r = check_symmetrizable(&params(0.1), 100, SEED, &StateSpaceBounds::default()).unwrap();
    let min_diag = r
        .samples
        .iter()
        .map(|s| s.min_diag_a0_tilde)
        .fold(f64::INFINITY, f64::min);
    let ok = r.samples.len() == 100 && r.worst_asymmetry <= ASYMMETRY_TOL && min_diag > 0.0;
    (
        ok,
        format!(
            "100 samples, worst asymmetry {:.3e} (<= {ASYMMETRY_TOL:e}), min diag {:.4}",
            r.worst_asymmetry, min_diag
        ),
    )
}

fn cancellation() -> (bool, String) {
    let grid = TorusGrid::new(16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let mut f = || random_band_limited(&grid, 5, &mut rng);
        let s1 = PackedStress::from_components([f(), f(), f(), f(), f()]);
        let s2 = f();
        let u = [f(), f(), f()];
        for alpha in MultiIndex::up_to(2) {
            let r = cancellation_check(&s1, &s2, &u, alpha).unwrap();
            worst = worst.max(r.shear).max(r.bulk);
        }
    }
    (
        worst <= CANCELLATION_TOL,
        format!("50 sets x 10 multi-indices, worst residual {worst:.3e} (<= {CANCELLATION_TOL:e})"),
    )
}

fn incompressible_oracle() -> (bool, String, f64) {
    let grid = TorusGrid::new(16).unwrap();
    let mu = 0.1;
    let w0 = taylor_green(&grid, 0.0, mu).w;
    let dt = 0.5 * incompressible_dt_max(&w0, mu);
    let traj = simulate_incompressible(&w0, mu, 1.0, dt, 10).unwrap();
    let last = traj.states.len() - 1;
    let exact = taylor_green(&grid, traj.times[last], mu);
    let err = relative_l2_error(&traj.states[last].w, &exact.w);
    let residual = traj
        .times
        .iter()
        .map(|&t| momentum_residual(&taylor_green(&grid, t, mu), &taylor_green_rate(&grid, t, mu), mu))
        .fold(0.0, f64::max);
    let div = traj.states.iter().map(|s| divergence_l2(&s.w)).fold(0.0, f64::max);
    (
        err <= 1e-6 && residual <= 1e-12,
        format!("T = 1 relative error {err:.3e} (<= 1e-6), exact residual {residual:.3e} (<= 1e-12)"),
        div,
    )
}

fn conservation(r: &SweepReport, div_w: f64) -> (bool, String) {
    let t = r.config.t_star;
    let drift = r.runs.iter().map(|run| run.mass_drift / t).fold(0.0, f64::max);
    let trace = r.runs.iter().map(|run| run.max_s1_trace).fold(0.0, f64::max);

    // the packed form is symmetric by construction; recheck on a state
    let grid = TorusGrid::new(16).unwrap();
    let p = params(0.1);
    let tg = taylor_green(&grid, 0.0, 0.1);
    let init = well_prepared_initial(&tg.w, &tg.pi, &p).unwrap();
    let traj = simulate(&init, &p, 0.2, &SimPolicy::default()).unwrap();
    let mut asym = 0.0_f64;
    for st in &traj.snapshots {
        let m = unpack_stress(&st.s1);
        for (i, row) in m.iter().enumerate() {
            for (j, entry) in row.iter().enumerate() {
                let d = entry - &m[j][i];
                asym = asym.max(machlimit::spectral::linf_norm(&d));
            }
        }
    }

    let mut rest_moved = false;
    for scheme in [Scheme::Erk4, Scheme::RelaxExactSplit] {
        let rest = RelaxedState::zeros(&grid);
        let dt = 0.5 * dt_max(&rest, &p, scheme);
        let mut st = rest.clone();
        for _ in 0..1000 {
            st = step(&st, &p, dt, scheme).unwrap();
        }
        rest_moved |= st.max_abs_diff(&rest) != 0.0;
    }
    let ok = drift <= 1e-10 && trace <= 1e-14 && asym <= 1e-14 && !rest_moved && div_w <= 1e-11;
    (
        ok,
        format!(
            "mass drift/T {drift:.3e}, S1 trace {trace:.3e}, asymmetry {asym:.3e}, rest fixed {}, div w {div_w:.3e}",
            !rest_moved
        ),
    )
}

fn well_prepared(r: &SweepReport) -> (bool, String) {
    let e0 = r
        .runs
        .iter()
        .map(|run| run.samples[0].energy.e_total)
        .fold(0.0, f64::max);
    let grid = TorusGrid::new(16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0_f64;
    for k in 0..20 {
        let p = params([0.2, 0.1, 0.05, 0.025][k % 4]);
        let f: [ScalarField; 11] = std::array::from_fn(|_| random_band_limited(&grid, 5, &mut rng));
        let e = ErrorState::from_state(RelaxedState::from_components(f));
        let rep = energy_e(&e, &p, 2).unwrap();
        let fields = sobolev_norm_sq(&[&e.eta_d, &e.u_d[0], &e.u_d[1], &e.u_d[2], &e.phi_d], 2).unwrap();
        let total = fields
            + p.tau1_eps * stress_norm_sq(&e.s1_d, 2).unwrap()
            + p.tau2_eps * sobolev_norm_sq(&[&e.s2_d], 2).unwrap();
        worst = worst.max((rep.e_total.powi(2) - total).abs() / total);
    }
    (
        e0 <= 1e-14 && worst <= 1e-12,
        format!("E(0) {e0:.3e} (<= 1e-14), definition identity {worst:.3e} (<= 1e-12)"),
    )
}

fn observed_order(scheme: Scheme, dts: [f64; 3]) -> f64 {
    let grid = TorusGrid::new(16).unwrap();
    let p = params(0.2);
    let tg = taylor_green(&grid, 0.0, 0.1);
    let init = well_prepared_initial(&tg.w, &tg.pi, &p).unwrap();
    let t_end = 0.3;
    let finals: Vec<RelaxedState> = dts
        .iter()
        .map(|&dt| {
            let policy = SimPolicy {
                scheme,
                dt: Some(dt),
                sample_every: usize::MAX,
                ..SimPolicy::default()
            };
            simulate(&init, &p, t_end, &policy).unwrap().snapshots.pop().unwrap()
        })
        .collect();
    let coarse = finals[0].max_abs_diff(&finals[1]);
    let fine = finals[1].max_abs_diff(&finals[2]);
    (coarse / fine).log2()
}

fn temporal_order() -> (bool, String) {
    let dts = [0.03, 0.015, 0.0075];
    let erk4 = observed_order(Scheme::Erk4, dts);
    let split = observed_order(Scheme::RelaxExactSplit, dts);
    (
        erk4 >= 3.5 && split >= 1.9,
        format!("erk4 order {erk4:.3} (>= 3.5), split order {split:.3} (>= 1.9), dt = {dts:?}"),
    )
}

fn gronwall(r: &SweepReport) -> (bool, String) {
    let cs: Vec<String> = r
        .runs
        .iter()
        .map(|run| fmt_opt(run.gronwall.map(|g| g.c_min)))
        .collect();
    (
        r.verdicts.gronwall_bounded,
        format!(
            "C per eps [{}], ratio {} (<= {GRONWALL_RATIO_MAX})",
            cs.join(", "),
            fmt_opt(r.gronwall_ratio)
        ),
    )
}

fn main() {
    let sweep = convergence_sweep(&SweepConfig::default()).unwrap();
    let (c6, d6, div_w) = incompressible_oracle();
    let results = [
        ("fields rate", fields_rate(&sweep)),
        ("stress rate", stress_rate(&sweep)),
        ("forcing bound", forcing_bound(&sweep)),
        ("symmetrizability", symmetrizability()),
        ("cancellation identities", cancellation()),
        ("incompressible oracle", (c6, d6)),
        ("conservation and structure", conservation(&sweep, div_w)),
        ("well-preparedness", well_prepared(&sweep)),
        ("temporal order", temporal_order()),
        ("gronwall diagnostic", gronwall(&sweep)),
    ];
    let mut failed = Vec::new();
    for (i, (name, (ok, detail))) in results.iter().enumerate() {
        println!(
            "criterion {:>2} {}: {name}: {detail}",
            i + 1,
            if *ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
