use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sslogit::config::{Estimator, RunConfig};
use sslogit::driver::run;
use sslogit::io::{load_panel, save_panel, write_panel, PanelSchema};
use sslogit::report::{results_text, write_all};
use sslogit_core::cre::{cre_plim, headline, CreOptions};
use sslogit_core::discovery::{count_moments, CountConfig, RankMethod};
use sslogit_core::gmm::validate_moments;
use sslogit_core::simulate::{simulate_panel_with, SimConfig};
use sslogit_core::{CommonParams, Gamma, HeterogeneityDist};

#[derive(Parser, Debug)]
#[command(name = "sslogit", version, about = "Simultaneous bivariate logit panels with fixed effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a panel and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate over group × window cells.
    Fit(RunArgs),
    /// Like `fit`, with household bootstrap standard errors (200 replicates
    /// unless configured).
    Bootstrap(RunArgs),
    /// Count valid moment conditions; prints "n_tot / n_para / n_rho".
    CountMoments(CountArgs),
    /// Probability limit of the correlated random effects estimator.
    PlimCre(PlimArgs),
    /// Check the closed-form moment conditions at random parameter draws.
    ValidateMoments(ValidateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long = "T", default_value_t = 3)]
    t: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Heterogeneity distribution.
    #[arg(long, default_value = "normal-linear")]
    dist: String,
    /// g11,g12,g21,g22
    #[arg(long, value_delimiter = ',', default_values_t = [2.5, -1.5, -1.5, 2.5], allow_negative_numbers = true)]
    gamma: Vec<f64>,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    rho: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    kappa: f64,
    /// Draw the second spouse's effect independently instead of alpha1 + kappa.
    #[arg(long)]
    unrestricted: bool,
    /// Spread households round-robin over this many groups g0, g1, ...
    #[arg(long)]
    groups: Option<usize>,
    /// Spread households round-robin over window keys lo..=hi, e.g. 1982,2021.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    window_keys: Option<Vec<i64>>,
    /// Output CSV; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// key = value config file, applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    estimator: Option<Estimator>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    group_column: Option<String>,
    #[arg(long)]
    window_column: Option<String>,
    /// width or width,step in window-key units.
    #[arg(long)]
    window: Option<String>,
    /// Drop the truncated windows at both ends.
    #[arg(long)]
    no_window_edges: bool,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    rho_low: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    rho_high: Option<f64>,
    #[arg(long)]
    quad_order: Option<usize>,
    /// Directory for results.csv, results.txt, figure.csv and config.txt.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Extra key=value overrides, applied last.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct CountArgs {
    #[arg(long = "T")]
    t: usize,
    #[arg(long, default_value_t = 0)]
    restricted: u8,
    #[arg(long, default_value_t = 0)]
    covariates: u8,
    /// exact or float
    #[arg(long, default_value = "exact")]
    method: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PlimArgs {
    /// A distribution name, or `all` for the five table rows.
    #[arg(long, default_value = "all")]
    dist: String,
    #[arg(long = "T", default_value_t = 3)]
    t: usize,
    #[arg(long, default_value_t = 32)]
    order: usize,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, default_value_t = 100)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

fn resolve(args: &RunArgs, bootstrap: bool) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let mut set = |k: &str, v: Option<String>| -> Result<()> {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
        Ok(())
    };
    set("estimator", args.estimator.map(|e| e.to_string()))?;
    set("input", args.input.as_ref().map(|p| p.display().to_string()))?;
    set("group_column", args.group_column.clone())?;
    set("window_column", args.window_column.clone())?;
    set("window", args.window.clone())?;
    set("window_edges", args.no_window_edges.then(|| "false".to_string()))?;
    set("bootstrap", args.replicates.map(|b| b.to_string()))?;
    set("seed", args.seed.map(|s| s.to_string()))?;
    set("rho_low", args.rho_low.map(|s| s.to_string()))?;
    set("rho_high", args.rho_high.map(|s| s.to_string()))?;
    set("quad_order", args.quad_order.map(|s| s.to_string()))?;
    set("output", args.output.as_ref().map(|p| p.display().to_string()))?;
    cfg.apply_overrides(&args.overrides)?;
    if bootstrap && cfg.bootstrap.is_none() {
        cfg.bootstrap = Some(200);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fit(args: &RunArgs, bootstrap: bool) -> Result<ExitCode> {
    let cfg = resolve(args, bootstrap)?;
    let input = cfg.input.clone().context("no input file: pass --input or set `input`")?;
    let schema = PanelSchema {
        group: cfg.group_column.clone(),
        window_key: cfg.window_column.clone(),
        ..PanelSchema::default()
    };
    let loaded = load_panel(&input, &schema)?;
    eprint!("{loaded}");
    eprint!("{}", cfg.echo());
    let report = run(&cfg, &loaded.panel)?;
    if let Some(dir) = &cfg.output {
        write_all(&report, dir)?;
        std::fs::write(dir.join("config.txt"), cfg.echo())?;
    }
    print!("{}", results_text(&report));
    Ok(if report.all_ok() {
        ExitCode::SUCCESS
    } else {
        eprintln!("some cells failed or did not converge");
        ExitCode::FAILURE
    })
}

fn simulate(a: &SimulateArgs) -> Result<ExitCode> {
    let dist = HeterogeneityDist::by_name(&a.dist)
        .with_context(|| format!("unknown distribution; expected one of {}", HeterogeneityDist::NAMES.join(", ")))?;
    if a.gamma.len() != 4 {
        bail!("--gamma takes four values g11,g12,g21,g22");
    }
    if a.window_keys.as_ref().is_some_and(|k| k.len() != 2 || k[1] < k[0]) {
        bail!("--window-keys takes lo,hi with lo <= hi");
    }
    let params = CommonParams::dynamic(Gamma::from_slice(&a.gamma), a.rho, a.kappa);
    let mut panel = simulate_panel_with(&params, &dist, &SimConfig::new(a.n, a.t, !a.unrestricted, a.seed))?;
    for (i, h) in panel.households.iter_mut().enumerate() {
        if let Some(g) = a.groups {
            h.group = format!("g{}", i % g.max(1));
        }
        if let Some(k) = &a.window_keys {
            h.window_key = Some(k[0] + (i as i64) % (k[1] - k[0] + 1));
        }
    }
    match &a.out {
        Some(p) => save_panel(&panel, p)?,
        None => write_panel(&panel, std::io::stdout().lock())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn count(a: &CountArgs) -> Result<ExitCode> {
    let mut cfg = CountConfig::new(a.t, a.restricted != 0, a.covariates != 0);
    cfg.method = match a.method.as_str() {
        "exact" => RankMethod::Exact,
        "float" => RankMethod::Float,
        m => bail!("unknown rank method {m:?}; expected exact or float"),
    };
    let report = count_moments(&cfg, a.seed)?;
    println!("{report}");
    Ok(ExitCode::SUCCESS)
}

/// Row labels of the published table.
const PLIM_ROWS: [(&str, &str); 5] = [
    ("normal-linear", "Correctly specified"),
    ("discrete-approx-normal", "Discrete, but approximately normal"),
    ("discrete-asymmetric", "Discrete, asymmetric"),
    ("heteroskedastic", "Heteroskedastic"),
    ("very-heteroskedastic", "Very heteroskedastic"),
];

fn plim(a: &PlimArgs) -> Result<ExitCode> {
    let rows: Vec<(&str, &str)> = if a.dist == "all" {
        PLIM_ROWS.to_vec()
    } else {
        let dist = HeterogeneityDist::by_name(&a.dist).context("unknown distribution")?;
        let label = PLIM_ROWS.iter().find(|r| r.0 == dist.name()).map_or(dist.name(), |r| r.1);
        vec![(dist.name(), label)]
    };
    let truth = CommonParams::dynamic(Gamma::new(2.5, -1.5, -1.5, 2.5), 1.0, 2.0);
    let opts = CreOptions {
        order: a.order,
        ..CreOptions::default()
    };
    let fits: Vec<_> = rows
        .par_iter()
        .map(|(name, _)| {
            let dist = HeterogeneityDist::by_name(name).expect("table rows are named distributions");
            cre_plim(&truth, &dist, a.t, &opts)
        })
        .collect();
    let width = rows.iter().map(|r| r.1.len()).max().unwrap_or(0);
    println!(
        "{:<width$} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "Distribution of heterogeneity", "g11", "g12", "g21", "g22", "rho", "kappa"
    );
    let mut ok = true;
    for ((_, label), fit) in rows.iter().zip(fits) {
        let fit = fit?;
        let h = headline(&fit);
        print!("{label:<width$}");
        for v in h {
            print!(" {v:>7.2}");
        }
        if !fit.fit.converged {
            ok = false;
            print!("  (not converged)");
        }
        println!();
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn validate(a: &ValidateArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let alphas: Vec<f64> = (0..7).map(|i| -3.0 + i as f64).collect();
    let mut worst = 0.0f64;
    for _ in 0..a.draws {
        let g: [f64; 4] = std::array::from_fn(|_| rng.random_range(-2.0..=2.0));
        let kappa = rng.random_range(-1.0..=1.0);
        let rho = rng.random_range(-1.0..=2.0);
        worst = worst.max(validate_moments(&Gamma::from_slice(&g), kappa, rho, &alphas)?);
    }
    let pass = worst <= a.tol;
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{} draws, largest relative moment residual {worst:.3e} ({}) in {:.2}s",
        a.draws,
        if pass { "pass" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    )?;
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a, false),
        Command::Bootstrap(a) => fit(a, true),
        Command::CountMoments(a) => count(a),
        Command::PlimCre(a) => plim(a),
        Command::ValidateMoments(a) => validate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
