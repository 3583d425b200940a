//! Command dispatch and CSV report emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::harness::{
    cancellation_check, convergence_sweep, forcing_bound_check, well_prepared_initial,
    SweepReport, CANCELLATION_TOL,
};
use crate::incompressible::{
    divergence_l2, incompressible_dt_max, momentum_residual, relative_l2_error,
    simulate_incompressible, taylor_green, IncompressibleState,
};
use crate::relaxed::{simulate_with, Trajectory};
use crate::spectral::{random_band_limited, MultiIndex};
use crate::state::{PackedStress, StateSpaceBounds};
use crate::symmetrizer::{check_symmetrizable, compare_printed_blocks, ASYMMETRY_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

pub const IDENTITY_SETS: usize = 50;
pub const SYMMETRIZER_SAMPLES: usize = 100;
const FORCING_TIME_SAMPLES: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "machlimit", version, about = "Low-Mach-number limit experiments on the periodic box")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for CSV artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Integrate the relaxed system from well-prepared Taylor–Green data.
    Simulate,
    /// Integrate the incompressible limit and compare with the exact solution.
    Reference,
    /// Run the ε-sweep and fit the convergence rates.
    Sweep,
    /// Check the integration-by-parts identities on random fields.
    CheckIdentities,
    /// Sample the admissible region and check the symmetrizer.
    CheckSymmetrizer,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Reference => "reference",
            Command::Sweep => "sweep",
            Command::CheckIdentities => "check-identities",
            Command::CheckSymmetrizer => "check-symmetrizer",
        }
    }
}

/// Exit code for an error escaping a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Aborted { .. }
        | Error::SweepAborted { .. }
        | Error::OutsideStateSpace { .. }
        | Error::NonFinite(_)
        | Error::TimeStep { .. } => EXIT_ABORT,
        _ => EXIT_VALIDATION,
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

struct Report {
    text: String,
}

impl Report {
    fn new(command: Command, cfg: &RunConfig) -> Self {
        let mut text = format!("# machlimit {}\n", command.name());
        for line in cfg.render().lines() {
            writeln!(text, "# {line}").unwrap();
        }
        Self { text }
    }

    fn meta(&mut self, key: &str, value: impl std::fmt::Display) {
        writeln!(self.text, "# {key} = {value}").unwrap();
    }

    fn row<S: AsRef<str>>(&mut self, cells: &[S]) {
        let cells: Vec<&str> = cells.iter().map(AsRef::as_ref).collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    fn write(&self, dir: &Path, file: &str) -> Result<()> {
        let path = dir.join(file);
        std::fs::write(&path, &self.text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.display().to_string(),
                source,
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn configure_threads() {
    if let Some(n) = std::env::var("MACHLIMIT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Runs one command, returning the process exit code. Errors are printed to
/// stderr.
pub fn run(cli: &Cli) -> i32 {
    configure_threads();
    let outcome = load_config(cli).and_then(|cfg| {
        std::fs::create_dir_all(&cli.out).map_err(|source| Error::Io {
            path: cli.out.display().to_string(),
            source,
        })?;
        match cli.command {
            Command::Simulate => simulate(&cfg, &cli.out),
            Command::Reference => reference(&cfg, &cli.out),
            Command::Sweep => sweep(&cfg, &cli.out),
            Command::CheckIdentities => check_identities(&cfg, &cli.out),
            Command::CheckSymmetrizer => check_symmetrizer(&cfg, &cli.out),
        }
    });
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn trajectory_report(cfg: &RunConfig, traj: &Trajectory) -> Report {
    let mut r = Report::new(Command::Simulate, cfg);
    r.meta("dt", num(traj.dt));
    r.row(&["step", "t", "mass", "sup_u", "sup_eta", "density_margin", "temperature_margin"]);
    for d in &traj.diagnostics {
        r.row(&[
            d.step.to_string(),
            num(d.t),
            num(d.mass),
            num(d.sup_u),
            num(d.sup_eta),
            num(d.density_margin),
            num(d.temperature_margin),
        ]);
    }
    r
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let grid = cfg.grid()?;
    let p = cfg.params()?;
    let tg = taylor_green(&grid, 0.0, cfg.mu_bar);
    let init = well_prepared_initial(&tg.w, &tg.pi, &p)?;
    match simulate_with(&init, &p, cfg.t_end, &cfg.policy(), |_, _, _| Ok(())) {
        Ok(traj) => {
            trajectory_report(cfg, &traj).write(out, "trajectory.csv")?;
            println!("simulate: {} samples, dt = {}", traj.diagnostics.len(), num(traj.dt));
            Ok(EXIT_OK)
        }
        Err(Error::Aborted {
            step,
            t,
            source,
            partial,
        }) => {
            let mut r = trajectory_report(cfg, &partial);
            r.meta("aborted", format!("step {step}, t = {}: {source}", num(t)));
            r.write(out, "trajectory.csv")?;
            Err(Error::Aborted {
                step,
                t,
                source,
                partial,
            })
        }
        Err(e) => Err(e),
    }
}

fn snapshot(cfg: &RunConfig, st: &IncompressibleState, t: f64) -> Report {
    let mut r = Report::new(Command::Reference, cfg);
    r.meta("t", num(t));
    r.row(&["i0", "i1", "i2", "w1", "w2", "w3", "pi"]);
    let grid = st.pi.grid();
    for idx in 0..grid.len() {
        let [a, b, c] = grid.unflatten(idx);
        r.row(&[
            a.to_string(),
            b.to_string(),
            c.to_string(),
            num(st.w[0].values()[idx]),
            num(st.w[1].values()[idx]),
            num(st.w[2].values()[idx]),
            num(st.pi.values()[idx]),
        ]);
    }
    r
}

fn reference(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let grid = cfg.grid()?;
    let w0 = taylor_green(&grid, 0.0, cfg.mu_bar).w;
    let dt = 0.5 * incompressible_dt_max(&w0, cfg.mu_bar);
    let traj = simulate_incompressible(&w0, cfg.mu_bar, cfg.t_end, dt, cfg.sample_every)?;
    let mut r = Report::new(Command::Reference, cfg);
    r.row(&["t", "relative_error", "divergence_l2", "momentum_residual"]);
    for ((t, st), rate) in traj.times.iter().zip(&traj.states).zip(&traj.rates) {
        let exact = taylor_green(&grid, *t, cfg.mu_bar);
        r.row(&[
            num(*t),
            num(relative_l2_error(&st.w, &exact.w)),
            num(divergence_l2(&st.w)),
            num(momentum_residual(st, rate, cfg.mu_bar)),
        ]);
    }
    r.write(out, "reference.csv")?;
    let last = traj.states.len() - 1;
    snapshot(cfg, &traj.states[0], traj.times[0]).write(out, "reference_snapshot_initial.csv")?;
    snapshot(cfg, &traj.states[last], traj.times[last]).write(out, "reference_snapshot_final.csv")?;
    println!("reference: {} samples to t = {}", traj.times.len(), num(traj.times[last]));
    Ok(EXIT_OK)
}

fn write_sweep(cfg: &RunConfig, report: &SweepReport, out: &Path) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), num);
    let mut r = Report::new(Command::Sweep, cfg);
    r.row(&["eps", "sup_E_fields", "sup_E_stress", "E_fields_over_eps", "E_stress_over_sqrt_eps"]);
    for run in &report.runs {
        r.row(&[
            num(run.epsilon),
            num(run.sup_e_fields),
            num(run.sup_e_stress),
            num(run.fields_over_eps()),
            num(run.stress_over_sqrt_eps()),
        ]);
    }
    let v = &report.verdicts;
    r.meta("summary.fields_slope", opt(report.fields_fit.map(|f| f.slope)));
    r.meta("summary.stress_slope", opt(report.stress_fit.map(|f| f.slope)));
    r.meta("summary.K", num(report.k_fields));
    r.meta("summary.K_prime", num(report.k_stress));
    r.meta("summary.fields_ratio", opt(report.fields_ratio));
    r.meta("summary.stress_ratio", opt(report.stress_ratio));
    r.meta("summary.gronwall_ratio", opt(report.gronwall_ratio));
    r.meta("verdict.fields_bounded", v.fields_bounded);
    r.meta("verdict.fields_slope", v.fields_slope);
    r.meta("verdict.stress_bounded", v.stress_bounded);
    r.meta("verdict.forcing_bounded", v.forcing_bounded.iter().all(|&b| b));
    r.meta("verdict.gronwall_bounded", v.gronwall_bounded);
    r.write(out, "sweep_report.csv")?;

    let mut plot = Report::new(Command::Sweep, cfg);
    plot.row(&["ln_eps", "ln_sup_E_fields", "ln_sup_E_stress"]);
    for run in &report.runs {
        plot.row(&[
            num(run.epsilon.ln()),
            num(run.sup_e_fields.ln()),
            num(run.sup_e_stress.ln()),
        ]);
    }
    plot.write(out, "sweep_loglog.csv")?;

    let mut diag = Report::new(Command::Sweep, cfg);
    diag.row(&["eps", "dt", "steps", "mass_drift", "max_s1_trace", "gronwall_c"]);
    for run in &report.runs {
        diag.row(&[
            num(run.epsilon),
            num(run.dt),
            run.steps.to_string(),
            num(run.mass_drift),
            num(run.max_s1_trace),
            opt(run.gronwall.map(|g| g.c_min)),
        ]);
    }
    diag.write(out, "sweep_diagnostics.csv")?;

    let mut samples = Report::new(Command::Sweep, cfg);
    samples.row(&["eps", "step", "t", "E_total", "E_fields", "E_stress"]);
    for run in &report.runs {
        for s in &run.samples {
            samples.row(&[
                num(run.epsilon),
                s.step.to_string(),
                num(s.t),
                num(s.energy.e_total),
                num(s.energy.e_fields),
                num(s.energy.e_stress_raw),
            ]);
        }
    }
    samples.write(out, "sweep_samples.csv")
}

fn sweep(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let sweep_cfg = cfg.sweep();
    let report = match convergence_sweep(&sweep_cfg) {
        Ok(r) => r,
        Err(Error::SweepAborted {
            epsilon,
            source,
            partial,
        }) => {
            write_sweep(cfg, &partial, out)?;
            return Err(Error::SweepAborted {
                epsilon,
                source,
                partial,
            });
        }
        Err(e) => return Err(e),
    };
    write_sweep(cfg, &report, out)?;

    let table = forcing_bound_check(&sweep_cfg, FORCING_TIME_SAMPLES)?;
    let mut f = Report::new(Command::Sweep, cfg);
    f.row(&["eps", "f1_over_eps", "f2_over_eps", "f3_over_eps", "f4_over_eps", "f5_over_eps"]);
    for (eps, row) in table.eps.iter().zip(&table.over_eps) {
        let mut cells = vec![num(*eps)];
        cells.extend(row.iter().map(|&v| num(v)));
        f.row(&cells);
    }
    for (i, ratio) in table.ratios.iter().enumerate() {
        f.meta(&format!("ratio.f{}", i + 1), ratio.map_or_else(|| "none".to_string(), num));
    }
    f.write(out, "forcing_bounds.csv")?;

    println!(
        "sweep: {} values of eps, fields slope {}, all verdicts {}",
        report.runs.len(),
        report.fields_fit.map_or_else(|| "none".to_string(), |f| format!("{:.3}", f.slope)),
        if report.all_passed() { "pass" } else { "fail" }
    );
    Ok(EXIT_OK)
}

fn check_identities(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let grid = cfg.grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let kmax = (cfg.n / 3) as i64;
    let alphas = MultiIndex::up_to(cfg.s);
    let mut r = Report::new(Command::CheckIdentities, cfg);
    r.row(&["set", "alpha", "shear_residual", "bulk_residual"]);
    let mut worst = 0.0_f64;
    for set in 0..IDENTITY_SETS {
        let mut f = || random_band_limited(&grid, kmax, &mut rng);
        let s1 = PackedStress::from_components([f(), f(), f(), f(), f()]);
        let s2 = f();
        let u = [f(), f(), f()];
        for &alpha in &alphas {
            let res = cancellation_check(&s1, &s2, &u, alpha)?;
            worst = worst.max(res.shear).max(res.bulk);
            let [a, b, c] = alpha.0;
            r.row(&[
                set.to_string(),
                format!("{a}{b}{c}"),
                num(res.shear),
                num(res.bulk),
            ]);
        }
    }
    r.meta("max_residual", num(worst));
    r.write(out, "identities.csv")?;
    println!("check-identities: max residual {}", num(worst));
    Ok(if worst <= CANCELLATION_TOL {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

fn check_symmetrizer(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let p = cfg.params()?;
    let bounds = StateSpaceBounds::default();
    let report = check_symmetrizable(&p, SYMMETRIZER_SAMPLES, cfg.seed, &bounds)?;
    let mut r = Report::new(Command::CheckSymmetrizer, cfg);
    r.row(&[
        "sample",
        "max_asymmetry",
        "min_eigenvalue",
        "min_diag_a0_tilde",
        "min_eig_b_tilde",
        "zero_eigs_b_tilde",
    ]);
    let mut blocks = Report::new(Command::CheckSymmetrizer, cfg);
    blocks.row(&["sample", "c_block_diff", "d_block_diff"]);
    let mut worst_block = 0.0_f64;
    for s in &report.samples {
        r.row(&[
            s.index.to_string(),
            num(s.asymmetry),
            num(s.min_eig_a0),
            num(s.min_diag_a0_tilde),
            num(s.min_eig_b_tilde),
            s.zero_eigs_b_tilde.to_string(),
        ]);
        let (c, d) = compare_printed_blocks(&s.point, &p, s.xi)?;
        worst_block = worst_block.max(c).max(d);
        blocks.row(&[s.index.to_string(), num(c), num(d)]);
    }
    r.meta("worst_asymmetry", num(report.worst_asymmetry));
    r.meta("min_eigenvalue", num(report.min_eigenvalue));
    r.meta("passed", report.passed);
    r.write(out, "symmetrizer.csv")?;
    blocks.meta("worst_difference", num(worst_block));
    blocks.write(out, "symmetrizer_blocks.csv")?;
    println!(
        "check-symmetrizer: worst asymmetry {}, min eigenvalue {}",
        num(report.worst_asymmetry),
        num(report.min_eigenvalue)
    );
    Ok(if report.passed && worst_block <= ASYMMETRY_TOL {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}
