use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qkr_core::anderson::{
    commensurability_check, fit_hopping_decay, hopping_coefficients_1d, hopping_coefficients_3d,
    onsite_energies_1d, onsite_energies_3d, Hopping3dOptions, MIN_HOPPING_SAMPLES,
};
use qkr_core::classical::{
    classical_diffusion_constant, run_classical_ensemble, ClassicalEnsembleSpec,
};
use qkr_core::harness::{
    analyze_sweep, cost_estimate, read_dataset_csv, reproduce_figure, run_sweep, write_report,
    write_series_csv, write_table, FigureOptions, RunConfig, Scale, SweepOptions, SweepStatus,
    FIGURES, SITE_UPDATES_PER_SECOND,
};
use qkr_core::quantum::{estimated_site_updates, RecordPlan};
use qkr_core::scaling::{
    bootstrap_full_fit, collapse, fit_critical_cutoff, fit_full_scaling, order_robustness,
    BootstrapOptions, CutoffOptions, ScalingOrders,
};
use qkr_core::{Error, Result, SweepPath};

#[derive(Parser)]
#[command(
    name = "qkr",
    version,
    about = "Quasiperiodic kicked rotor simulator and scaling analysis"
)]
struct Cli {
    /// Worker threads (default: QKR_WORKERS or all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantum ensemble at one parameter point.
    Evolve(RunArgs),
    /// Classical ensemble and diffusion constant at one parameter point.
    Classical(ClassicalArgs),
    /// Quantum ensembles along a straight (K, epsilon) path.
    Sweep(SweepArgs),
    /// Scaling collapse of a dataset file.
    Collapse(DatasetArgs),
    /// Collapse, cutoff fit, crossings and slope method on a dataset file.
    FitCritical(FitCriticalArgs),
    /// Full scaling fit with irrelevant-variable corrections.
    FitFull(FitFullArgs),
    /// Hopping coefficients and on-site energies of the equivalent lattice.
    AndersonMap(AndersonArgs),
    /// Integer relations among kbar, omega2, omega3 and pi.
    CheckCommensurate(CommensurateArgs),
    /// Data behind one figure.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Clone)]
struct ParamArgs {
    /// Config file (TOML); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    kbar: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    omega2: Option<f64>,
    #[arg(long)]
    omega3: Option<f64>,
    #[arg(long)]
    eta_se: Option<f64>,
    #[arg(long)]
    eta_g: Option<f64>,
    #[arg(long)]
    n_traj: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_max: Option<u64>,
    #[arg(long)]
    t_first: Option<u64>,
    #[arg(long)]
    points_per_decade: Option<usize>,
}

impl ParamArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let p = &mut c.params;
        set(&mut p.k, self.k);
        set(&mut p.kbar, self.kbar);
        set(&mut p.epsilon, self.epsilon);
        set(&mut p.omega2, self.omega2);
        set(&mut p.omega3, self.omega3);
        set(&mut p.eta_se, self.eta_se);
        set(&mut p.eta_g, self.eta_g);
        set(&mut c.ensemble.n_traj, self.n_traj);
        set(&mut c.ensemble.seed, self.seed);
        set(&mut c.schedule.t_max, self.t_max);
        set(&mut c.schedule.t_first, self.t_first);
        set(&mut c.schedule.points_per_decade, self.points_per_decade);
        Ok(c)
    }
}

fn set<T>(field: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *field = v;
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Output directory.
    #[arg(long, default_value = "qkr-out")]
    out: PathBuf,
    /// Allow runs with t_max >= 1e6 or >= 1000 trajectories.
    #[arg(long)]
    paper_scale: bool,
    /// Stop after this many trajectory chunks (rerun to resume).
    #[arg(long)]
    stop_after_chunks: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    k_start: Option<f64>,
    #[arg(long)]
    k_end: Option<f64>,
    #[arg(long)]
    eps_start: Option<f64>,
    #[arg(long)]
    eps_end: Option<f64>,
    #[arg(long)]
    n_points: Option<usize>,
}

#[derive(Args)]
struct ClassicalArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value = "qkr-out")]
    out: PathBuf,
    /// Initial momentum FWHM in scaled-momentum units.
    #[arg(long, default_value_t = 4.0)]
    fwhm: f64,
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset file (K,t,ln_lambda,sigma).
    dataset: PathBuf,
    #[arg(long, default_value = "qkr-out")]
    out: PathBuf,
    /// Earliest time used.
    #[arg(long, default_value_t = 30.0)]
    t_min: f64,
}

#[derive(Args)]
struct FitCriticalArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Bootstrap resamples for the nu interval (0 disables).
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    /// Fix nu in the cutoff fit.
    #[arg(long)]
    fixed_nu: Option<f64>,
    /// Reference localized K values for the normalization of xi.
    #[arg(long, value_delimiter = ',')]
    localized_k: Vec<f64>,
}

#[derive(Args)]
struct FitFullArgs {
    dataset: PathBuf,
    #[arg(long, default_value = "qkr-out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1e3)]
    t_min: f64,
    #[arg(long, default_value_t = 3)]
    n_r: usize,
    #[arg(long, default_value_t = 1)]
    n_i: usize,
    #[arg(long, default_value_t = 2)]
    m_r: usize,
    /// Bootstrap resamples (0 disables).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    bootstrap_seed: u64,
    /// Also refit with each order changed by one.
    #[arg(long)]
    robustness: bool,
}

#[derive(Args)]
struct AndersonArgs {
    #[arg(long, default_value_t = 5.0)]
    k: f64,
    #[arg(long, default_value_t = 2.89)]
    kbar: f64,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 2.0 * std::f64::consts::PI * 5f64.sqrt())]
    omega2: f64,
    #[arg(long, default_value_t = 2.0 * std::f64::consts::PI * 13f64.sqrt())]
    omega3: f64,
    /// Quasi-energy.
    #[arg(long, default_value_t = 0.0)]
    omega: f64,
    #[arg(long, default_value_t = 0.3)]
    beta: f64,
    #[arg(long, default_value_t = 40)]
    r_max: usize,
    /// Half-width of the on-site energy listing.
    #[arg(long, default_value_t = 50)]
    m_max: i64,
    #[arg(long, default_value = "qkr-out")]
    out: PathBuf,
}

#[derive(Args)]
struct CommensurateArgs {
    #[arg(long, default_value_t = 2.85)]
    kbar: f64,
    #[arg(long, default_value_t = 2.0 * std::f64::consts::PI * 5f64.sqrt())]
    omega2: f64,
    #[arg(long, default_value_t = 2.0 * std::f64::consts::PI * 13f64.sqrt())]
    omega3: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 20)]
    q_max: i64,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Figure id (fig1, fig2, fig3, fig4, fig5, fig7, fig9, fig10a, fig10b, fig11, fig12, fig13, fig15).
    figure_id: String,
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// Confirm a paper-scale run.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long, default_value = "qkr-out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    match cli.command {
        Command::Evolve(a) => {
            let mut c = a.params.resolve()?;
            c.sweep = None;
            execute_sweep(&c, &a, workers)
        }
        Command::Sweep(a) => {
            let mut c = a.run.params.resolve()?;
            let mut path = c.sweep.unwrap_or_default();
            set(&mut path.k_start, a.k_start);
            set(&mut path.k_end, a.k_end);
            set(&mut path.eps_start, a.eps_start);
            set(&mut path.eps_end, a.eps_end);
            set(&mut path.n_points, a.n_points);
            c.sweep = Some(path);
            execute_sweep(&c, &a.run, workers)
        }
        Command::Classical(a) => classical(&a),
        Command::Collapse(a) => collapse_cmd(&a),
        Command::FitCritical(a) => fit_critical(&a),
        Command::FitFull(a) => fit_full(&a, workers),
        Command::AndersonMap(a) => anderson(&a),
        Command::CheckCommensurate(a) => {
            let r = commensurability_check(a.kbar, a.omega2, a.omega3, a.tol, a.q_max)?;
            print!("{}", to_toml(&r)?);
            println!(
                "# {}",
                if r.is_clean() {
                    "clean"
                } else {
                    "commensurate relations found"
                }
            );
            Ok(())
        }
        Command::Reproduce(a) => {
            if !FIGURES.contains(&a.figure_id.as_str()) {
                return Err(Error::UnknownFigure(a.figure_id));
            }
            let hours = cost_estimate(&a.figure_id, a.scale)? / 3600.0;
            eprintln!(
                "{} at {:?} scale: estimated {hours:.2} CPU hours",
                a.figure_id, a.scale
            );
            let opts = FigureOptions {
                allow_paper: a.paper_scale,
                workers,
                progress: true,
            };
            let o = reproduce_figure(&a.figure_id, a.scale, &a.out, &opts)?;
            for f in o.files {
                println!("{}", f.display());
            }
            Ok(())
        }
    }
}

fn to_toml<T: serde::Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Parse(e.to_string()))
}

fn print_params(c: &RunConfig) -> Result<()> {
    #[derive(serde::Serialize)]
    struct P<'a> {
        params: &'a qkr_core::RotorParams,
        sweep: Option<&'a SweepPath>,
    }
    print!(
        "{}",
        to_toml(&P {
            params: &c.params,
            sweep: c.sweep.as_ref()
        })?
    );
    Ok(())
}

fn execute_sweep(c: &RunConfig, a: &RunArgs, workers: Option<usize>) -> Result<()> {
    c.validate()?;
    print_params(c)?;
    let updates: f64 = c
        .points()
        .iter()
        .map(|p| estimated_site_updates(p, &c.ensemble, c.schedule.t_max))
        .sum();
    let hours = updates / SITE_UPDATES_PER_SECOND / 3600.0;
    eprintln!("estimated cost: {hours:.2} CPU hours");
    if (c.schedule.t_max >= 1_000_000 || c.ensemble.n_traj >= 1000) && !a.paper_scale {
        return Err(Error::InvalidParameter(format!(
            "paper-scale run (estimated {hours:.1} CPU hours) needs --paper-scale"
        )));
    }
    let opts = SweepOptions {
        stop_after_chunks: a.stop_after_chunks,
        workers,
        progress: true,
    };
    match run_sweep(c, &a.out, &opts)? {
        SweepStatus::Interrupted { points_done } => {
            eprintln!("stopped after {points_done} complete points; rerun to resume");
            Ok(())
        }
        SweepStatus::Complete(o) => {
            for f in &o.outputs {
                println!("{}", f.display());
            }
            o.check()
        }
    }
}

fn classical(a: &ClassicalArgs) -> Result<()> {
    let c = a.params.resolve()?;
    c.validate()?;
    print_params(&c)?;
    let spec = ClassicalEnsembleSpec {
        n_traj: a.params.n_traj.unwrap_or(10_000),
        seed: c.ensemble.seed,
        fwhm: a.fwhm,
        ..ClassicalEnsembleSpec::default()
    };
    let t_max = c.schedule.t_max;
    let cs = run_classical_ensemble(
        &c.params,
        &spec,
        t_max,
        &RecordPlan::new(c.schedule.times()),
    )?;
    std::fs::create_dir_all(&a.out)?;
    let series = a.out.join("classical_series.csv");
    write_series_csv(&series, "classical", std::slice::from_ref(&cs.series))?;
    let d = classical_diffusion_constant(&c.params, &spec, t_max)?;
    let report = a.out.join("diffusion.toml");
    write_report(&report, &d)?;
    println!("{}\n{}", series.display(), report.display());
    print!("{}", to_toml(&d)?);
    Ok(())
}

fn load(path: &Path, t_min: f64) -> Result<qkr_core::scaling::ScalingDataset> {
    read_dataset_csv(path)?.restrict(f64::NEG_INFINITY, f64::INFINITY, t_min, f64::INFINITY)
}

fn collapse_cmd(a: &DatasetArgs) -> Result<()> {
    let d = load(&a.dataset, a.t_min)?;
    let r = collapse(&d)?;
    let xi: Vec<Vec<f64>> = r
        .xi_curve()
        .into_iter()
        .map(|(k, x, e)| vec![k, x, e])
        .collect();
    let f1 = a.out.join("xi.csv");
    write_table(&f1, &["K", "xi", "xi_err"], &xi)?;
    let curve: Vec<Vec<f64>> = r
        .curve_samples(400)
        .into_iter()
        .map(|(x, y)| vec![x, y])
        .collect();
    let f2 = a.out.join("scaling_function.csv");
    write_table(&f2, &["ln_xi_t13", "ln_lambda"], &curve)?;
    println!("{}\n{}", f1.display(), f2.display());
    println!(
        "reduced_chi2 = {}\nresidual_variance = {}\nconverged = {}",
        r.reduced_chi2, r.residual_variance, r.converged
    );
    if r.converged {
        Ok(())
    } else {
        Err(Error::NonConvergence(format!(
            "collapse stopped after {} iterations",
            r.iterations
        )))
    }
}

fn fit_critical(a: &FitCriticalArgs) -> Result<()> {
    let d = load(&a.data.dataset, a.data.t_min)?;
    let mut cfg = qkr_core::harness::AnalysisConfig {
        collapse_t_min: a.data.t_min,
        bootstrap_resamples: a.bootstrap,
        localized_k: a.localized_k.clone(),
        ..Default::default()
    };
    if a.bootstrap == 0 {
        cfg.bootstrap_resamples = 200;
    }
    let mut r = analyze_sweep(&d, &cfg, a.bootstrap > 0)?;
    if let Some(nu) = a.fixed_nu {
        let xi: Vec<(f64, f64, f64)> = (0..r.k.len())
            .map(|i| (r.k[i], r.ln_xi[i].exp(), r.ln_xi[i].exp() * r.ln_xi_err[i]))
            .collect();
        r.cutoff = Some(fit_critical_cutoff(
            &xi,
            &CutoffOptions { fixed_nu: Some(nu) },
        )?);
    }
    let out = a.data.out.join("critical.toml");
    write_report(&out, &r)?;
    println!("{}", out.display());
    print!("{}", to_toml(&r)?);
    match (&r.cutoff, r.cutoff_error) {
        (Some(_), _) => Ok(()),
        (None, Some(e)) => Err(Error::NonConvergence(e)),
        (None, None) => Err(Error::NonConvergence("no cutoff fit".into())),
    }
}

fn fit_full(a: &FitFullArgs, workers: Option<usize>) -> Result<()> {
    let d = load(&a.dataset, a.t_min)?;
    let orders = ScalingOrders {
        n_r: a.n_r,
        n_i: a.n_i,
        m_r: a.m_r,
    };
    let w = workers.unwrap_or_else(qkr_core::harness::worker_count);
    qkr_core::harness::with_workers(w, || {
        let mut fit = fit_full_scaling(&d, orders)?;
        if a.bootstrap > 0 {
            let opts = BootstrapOptions {
                n_resamples: a.bootstrap,
                seed: a.bootstrap_seed,
                ..Default::default()
            };
            fit = bootstrap_full_fit(&d, &fit, &opts)?;
        }
        let out = a.out.join("full_fit.toml");
        write_report(&out, &fit)?;
        println!("{}", out.display());
        print!("{}", to_toml(&fit)?);
        if a.robustness {
            #[derive(serde::Serialize)]
            struct R {
                variants: Vec<qkr_core::scaling::OrderVariant>,
            }
            let r = R {
                variants: order_robustness(&d, orders),
            };
            let p = a.out.join("order_robustness.toml");
            write_report(&p, &r)?;
            println!("{}", p.display());
        }
        Ok(())
    })?
}

fn anderson(a: &AndersonArgs) -> Result<()> {
    let h = hopping_coefficients_1d(a.k, a.kbar, a.r_max, MIN_HOPPING_SAMPLES.max(8 * a.r_max))?;
    let rows: Vec<Vec<f64>> = (-(a.r_max as i64)..=a.r_max as i64)
        .map(|r| vec![r as f64, h.get(r)])
        .collect();
    let f1 = a.out.join("hopping_1d.csv");
    write_table(&f1, &["r", "W_r"], &rows)?;
    let e = onsite_energies_1d(a.kbar, a.omega, -a.m_max..=a.m_max, a.beta)?;
    let rows: Vec<Vec<f64>> = e
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| vec![e.site(i)[0] as f64, *v])
        .collect();
    let f2 = a.out.join("onsite_1d.csv");
    write_table(&f2, &["m", "epsilon_m"], &rows)?;
    println!("{}\n{}", f1.display(), f2.display());
    match fit_hopping_decay(&h, 1, a.r_max) {
        Ok(f) => println!(
            "gamma = {}\ngamma_err = {}\nc = {}",
            f.gamma, f.gamma_err, f.c
        ),
        Err(e) => println!("# decay fit: {e}"),
    }
    println!("pole_sites = {}", e.pole_sites.len());
    if a.epsilon > 0.0 {
        let r = a.r_max.min(12);
        let h3 = hopping_coefficients_3d(
            a.k,
            a.epsilon,
            a.kbar,
            [r, 4, 4],
            &Hopping3dOptions::default(),
        )?;
        let mut rows = Vec::new();
        for r1 in -(r as i64)..=r as i64 {
            for r2 in -4..=4 {
                for r3 in -4..=4 {
                    rows.push(vec![r1 as f64, r2 as f64, r3 as f64, h3.get([r1, r2, r3])]);
                }
            }
        }
        let f3 = a.out.join("hopping_3d.csv");
        write_table(&f3, &["r1", "r2", "r3", "W_r"], &rows)?;
        println!("{}", f3.display());
        println!("transverse_fraction = {}", h3.transverse_fraction());
        let half = a.m_max.clamp(1, 10) as usize;
        let e3 = onsite_energies_3d(a.kbar, a.omega2, a.omega3, a.omega, [half; 3])?;
        let rows: Vec<Vec<f64>> = e3
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let m = e3.site(i);
                vec![m[0] as f64, m[1] as f64, m[2] as f64, *v]
            })
            .collect();
        let f4 = a.out.join("onsite_3d.csv");
        write_table(&f4, &["m1", "m2", "m3", "epsilon_m"], &rows)?;
        println!("{}", f4.display());
    }
    Ok(())
}
