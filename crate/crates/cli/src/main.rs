//! `excursion`: simulate fields, measure excursion sets, evaluate predictions
//! and run replicated experiments.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use stable_excursions::excursion::{euler_characteristic, lk_estimates, threshold, upcrossings_1d, Upcrossings};
use stable_excursions::fields::{FieldGrid, GaussianFieldSpec};
use stable_excursions::harness::{run_experiment, simulate_replicates, ExperimentConfig, CSV_HEADER};
use stable_excursions::sampling::{measure_moments, RngStream, SpectralMeasure};
use stable_excursions::theory::{
    concatenated_constants, concatenated_mean_ec_asymptote, conditional_identity_mc, gaussian_mean_ec,
    harmonisable_mean_ec_asymptote, subgaussian_asymptote_for, subgaussian_mean_ec_exact,
};
use stable_excursions::{Error, Rectangle};

#[derive(Parser)]
#[command(name = "excursion", version, about = "Excursion sets of Gaussian and stable random fields")]
struct Cli {
    /// Worker threads for replicated runs
    #[arg(long, global = true, env = "EXCURSION_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write replicate grids of a config in the binary dump format
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        first: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Measure the excursion sets of a grid file at the given levels
    Measure {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        levels: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate exact and asymptotic predictions of the mean Euler characteristic
    Theory(TheoryArgs),
    /// Run a replicated experiment and write CSV and JSON reports
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Output prefix: writes PREFIX.csv and PREFIX.json
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Turn report CSVs into long-format CSV and a pass/fail summary
    Report {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Allowed |ratio − 1| in standard errors when an exact prediction exists
        #[arg(long, default_value_t = 3.0)]
        sigmas: f64,
        /// Allowed |ratio − 1| when only the asymptote is available
        #[arg(long, default_value_t = 0.2)]
        asymptotic_tolerance: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Gaussian,
    #[value(name = "sub_gaussian", alias = "sub-gaussian")]
    SubGaussian,
    Harmonisable,
    Concatenated,
}

#[derive(clap::Args)]
struct TheoryArgs {
    #[arg(long, value_enum)]
    model: Model,
    /// Side lengths of the rectangle
    #[arg(long = "T", value_delimiter = ',', required = true)]
    sides: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    u: Vec<f64>,
    /// Standard deviation of the Gaussian base field
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Second spectral moment of the Gaussian base field
    #[arg(long, default_value_t = 1.0)]
    lambda2: f64,
    #[arg(long)]
    alpha: Option<f64>,
    /// Radius of the uniform-ball control measure
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Total mass of the control measure
    #[arg(long, default_value_t = 1.0)]
    mass: f64,
    #[arg(long, default_value_t = 1)]
    n_prime: usize,
    /// Monte Carlo draws for estimated ingredients; 0 skips the conditional predictor
    #[arg(long, default_value_t = 0)]
    draws: usize,
    #[arg(long, default_value_t = 1000)]
    truncation: usize,
    #[arg(long, default_value_t = 100_000)]
    lambda_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) | Error::Simulation(_) | Error::Degenerate(_) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { config, out, seed, first, count } => {
            let cfg = load_config(&config, seed, cli.threads)?;
            std::fs::create_dir_all(&out)?;
            for (i, g) in simulate_replicates(&cfg, first, count)?.into_iter().enumerate() {
                let path = out.join(format!("replicate_{:05}.bin", first + i));
                g.write_to(BufWriter::new(File::create(&path)?))?;
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Measure { input, levels, out } => {
            let grid = FieldGrid::read_from(BufReader::new(File::open(&input)?))?;
            let records = levels.iter().map(|&u| measure(&grid, u)).collect::<Result<Vec<_>, _>>()?;
            emit(out.as_deref(), &pretty(&records))
        }
        Command::Theory(args) => emit(None, &pretty(&theory(&args)?)),
        Command::Experiment { config, out, seed } => {
            let cfg = load_config(&config, seed, cli.threads)?;
            let start = Instant::now();
            let report = run_experiment(&cfg)?;
            eprintln!("wall-clock: {:.3} s for {} replicates", start.elapsed().as_secs_f64(), cfg.replications);
            match out {
                Some(prefix) => {
                    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
                        std::fs::create_dir_all(dir)?;
                    }
                    std::fs::write(with_ext(&prefix, "csv"), report.to_csv())?;
                    std::fs::write(with_ext(&prefix, "json"), report.to_json() + "\n")?;
                    Ok(())
                }
                None => emit(None, &report.to_csv()),
            }
        }
        Command::Report { inputs, out, sigmas, asymptotic_tolerance } => {
            let mut long = String::from("source,u,quantity,value\n");
            let mut summary = String::new();
            let mut failed = 0;
            for path in &inputs {
                let rows = read_report_csv(path)?;
                let name = path.display().to_string();
                for r in &rows {
                    for (q, v) in [
                        ("mean_ec", Some(r.mean_ec)),
                        ("stderr", Some(r.stderr)),
                        ("pred_exact", r.pred_exact),
                        ("pred_asymp", r.pred_asymp),
                        ("ratio", r.ratio),
                        ("ratio_se", r.ratio_se),
                    ] {
                        if let Some(v) = v {
                            long.push_str(&format!("{name},{},{q},{v}\n", r.u));
                        }
                    }
                    let verdict = match (r.ratio, r.ratio_se) {
                        (Some(ratio), Some(se)) if r.pred_exact.is_some() => {
                            Some(((ratio - 1.0).abs() <= sigmas * se, format!("ratio {ratio:.4} ± {se:.4} (exact)")))
                        }
                        (Some(ratio), _) => Some(((ratio - 1.0).abs() <= asymptotic_tolerance, format!("ratio {ratio:.4} (asymptotic)"))),
                        _ => None,
                    };
                    let line = match verdict {
                        Some((ok, what)) => {
                            if !ok {
                                failed += 1;
                            }
                            format!("{} {name} u={}: {what}", if ok { "PASS" } else { "FAIL" }, r.u)
                        }
                        None => format!("SKIP {name} u={}: no prediction", r.u),
                    };
                    summary.push_str(&line);
                    summary.push('\n');
                }
            }
            summary.push_str(&format!("{failed} failing row(s)\n"));
            match out {
                Some(p) => {
                    std::fs::write(p, long)?;
                    print!("{summary}");
                }
                None => {
                    print!("{long}");
                    eprint!("{summary}");
                }
            }
            Ok(())
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if threads.is_some() {
        cfg.threads = threads;
    }
    Ok(cfg)
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serialisable") + "\n"
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct MeasureRecord {
    level: f64,
    euler: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lk_estimates: Option<Vec<f64>>,
    cell_counts: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    upcrossings: Option<Upcrossings>,
}

fn measure(grid: &FieldGrid, u: f64) -> Result<MeasureRecord, Error> {
    let set = threshold(grid, u);
    let lk = if grid.dim() <= 3 { Some(lk_estimates(&set, u)?.lk_estimates) } else { None };
    Ok(MeasureRecord {
        level: u,
        euler: euler_characteristic(&set),
        lk_estimates: lk,
        cell_counts: set.cell_counts().to_vec(),
        upcrossings: if grid.dim() == 1 { Some(upcrossings_1d(grid, u)?) } else { None },
    })
}

fn theory(a: &TheoryArgs) -> Result<serde_json::Value, Error> {
    let t = Rectangle::new(a.sides.clone())?;
    let n = t.dim();
    let need_alpha = || a.alpha.ok_or_else(|| Error::Domain("--alpha is required for stable models".into()));
    let base = || GaussianFieldSpec::squared_exponential_with_lambda2(a.sigma * a.sigma, a.lambda2, n);
    let ball = || SpectralMeasure::uniform_ball(n, a.radius, a.mass);
    let rows = |exact: Option<Vec<f64>>, exact_se: Option<Vec<f64>>, asym: Option<&stable_excursions::theory::AsymptoticPrediction>| {
        a.u.iter()
            .enumerate()
            .map(|(i, &u)| {
                json!({
                    "u": u,
                    "exact": exact.as_ref().map(|e| e[i]),
                    "exact_se": exact_se.as_ref().map(|e| e[i]),
                    "asymptotic": asym.map(|p| p.at(u)),
                })
            })
            .collect::<Vec<_>>()
    };
    Ok(match a.model {
        Model::Gaussian => {
            let spec = base()?;
            let exact = a.u.iter().map(|&u| gaussian_mean_ec(&spec, &t, u)).collect::<Result<Vec<_>, _>>()?;
            json!({ "model": "gaussian", "levels": rows(Some(exact), None, None) })
        }
        Model::SubGaussian => {
            let alpha = need_alpha()?;
            let spec = base()?;
            let exact = a.u.iter().map(|&u| subgaussian_mean_ec_exact(&spec, alpha, &t, u)).collect::<Result<Vec<_>, _>>()?;
            let asym = subgaussian_asymptote_for(&spec, alpha, &t)?;
            json!({ "model": "sub_gaussian", "alpha": alpha, "asymptote": asym, "levels": rows(Some(exact), None, Some(&asym)) })
        }
        Model::Harmonisable | Model::Concatenated => {
            let alpha = need_alpha()?;
            let mu = ball()?;
            let concatenated = a.model == Model::Concatenated;
            let n_prime = if concatenated { a.n_prime } else { 1 };
            let asym = if concatenated {
                let consts = concatenated_constants(alpha, n_prime, &mu, a.lambda_samples, RngStream::new(a.seed, 1 << 32))?;
                concatenated_mean_ec_asymptote(&consts, &t)?
            } else {
                harmonisable_mean_ec_asymptote(&measure_moments(&mu)?, alpha, &t)?
            };
            let (exact, se) = if a.draws > 0 {
                let c = conditional_identity_mc(&mu, alpha, n_prime, a.truncation, &t, &a.u, a.draws, a.seed)?;
                (Some(c.iter().map(|x| x.0).collect()), Some(c.iter().map(|x| x.1).collect()))
            } else {
                (None, None)
            };
            json!({
                "model": if concatenated { "concatenated" } else { "harmonisable" },
                "alpha": alpha,
                "n_prime": n_prime,
                "measure": mu,
                "asymptote": asym,
                "levels": rows(exact, se, Some(&asym)),
            })
        }
    })
}

struct CsvRow {
    u: f64,
    mean_ec: f64,
    stderr: f64,
    pred_exact: Option<f64>,
    pred_asymp: Option<f64>,
    ratio: Option<f64>,
    ratio_se: Option<f64>,
}

fn read_report_csv(path: &Path) -> Result<Vec<CsvRow>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |line: usize, msg: &str| Error::Config(format!("{}: line {line}: {msg}", path.display()));
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(bad(1, &format!("expected header `{CSV_HEADER}`")));
    }
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != 8 {
            return Err(bad(i + 2, &format!("expected 8 fields, found {}", f.len())));
        }
        let num = |s: &str| -> Result<Option<f64>, Error> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(i + 2, &format!("`{s}` is not a number")))
            }
        };
        let req = |s: &str| num(s)?.ok_or_else(|| bad(i + 2, "missing required value"));
        rows.push(CsvRow {
            u: req(f[0])?,
            mean_ec: req(f[1])?,
            stderr: req(f[2])?,
            pred_exact: num(f[4])?,
            pred_asymp: num(f[5])?,
            ratio: num(f[6])?,
            ratio_se: num(f[7])?,
        });
    }
    Ok(rows)
}
