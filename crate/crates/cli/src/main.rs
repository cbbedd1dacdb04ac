use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use wpt_core::channel::{ChannelModel, FrameConfig};
use wpt_core::dp_policy::{solve_bellman, GridSpec, DEFAULT_GRID_POINTS};
use wpt_core::fixed_length::{energy_of_tau, optimal_tau, GTable};
use wpt_core::harness::{
    compare_with, fixed_length_curve, power_cap_sweep, run_scheme, write_comparison, write_curve, write_tau_curve,
    Artifacts, CurveFile, Scheme, SimConfig, OUT_DIR_ENV,
};
use wpt_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "wpt", version, about = "Wireless power transfer experiments: preamble length, stopping thresholds, power allocation")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FrameArgs {
    /// Frame length in symbols.
    #[arg(long = "T", default_value_t = 126)]
    t: usize,
    /// Transmit antennas.
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Noise variance.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
}

#[derive(Args)]
struct SimArgs {
    /// JSON configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of simulated frames.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Table of the partial-feedback gain G(m, q).
    Gtable {
        #[arg(long, default_value_t = 10)]
        mmax: usize,
    },
    /// Optimal fixed preamble length and the energy curve.
    FixedLength {
        #[command(flatten)]
        frame: FrameArgs,
        /// Fed-back coefficients (default m).
        #[arg(long)]
        q: Option<usize>,
        /// Restrict the preamble to whole slots.
        #[arg(long)]
        multiple_of_m: bool,
        /// Also simulate the curve with this many samples per length.
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Per-slot stopping thresholds of the optimal dynamic preamble.
    Thresholds {
        #[command(flatten)]
        frame: FrameArgs,
        /// Value-function grid points.
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid: usize,
    },
    /// Stopping distribution and the LCPA / LPA / CPA power plans.
    Allocate {
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Simulates a single scheme.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long, default_value = "LCPA")]
        scheme: String,
    },
    /// Simulates every configured scheme on the same frames.
    Compare {
        #[command(flatten)]
        sim: SimArgs,
        /// Comma-separated per-frame caps P1/P0 to sweep.
        #[arg(long, value_delimiter = ',')]
        p1_multiples: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            match err.downcast_ref::<Error>() {
                Some(e) if e.is_config() => ExitCode::from(EXIT_CONFIG),
                Some(Error::Convergence(_)) | Some(Error::Singular(_)) => ExitCode::from(EXIT_NUMERICAL),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn write(dir: &Path, name: &str, text: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn load_config(sim: &SimArgs) -> anyhow::Result<SimConfig> {
    let mut cfg = match &sim.config {
        Some(path) => SimConfig::load(path)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = sim.seed {
        cfg.seed = seed;
    }
    if let Some(frames) = sim.frames {
        cfg.frames = frames;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let out = &cli.out;
    match &cli.command {
        Command::Gtable { mmax } => {
            let table = GTable::new(*mmax)?;
            let csv = table.to_csv()?;
            print!("{csv}");
            write(out, "gtable.csv", &csv)?;
        }
        Command::FixedLength {
            frame,
            q,
            multiple_of_m,
            samples,
            seed,
        } => {
            let q = q.unwrap_or(frame.m);
            let choice = optimal_tau(frame.t, frame.m, q, frame.noise, *multiple_of_m)?;
            println!("tau* = {}", choice.tau);
            println!("E(tau*) = {:.6}", choice.energy);
            let step = if *multiple_of_m { frame.m } else { 1 };
            let points = (0..=frame.t)
                .step_by(step)
                .map(|tau| Ok((tau as f64, energy_of_tau(tau as f64, frame.t, frame.m, q, frame.noise)?)))
                .collect::<wpt_core::Result<Vec<_>>>()?;
            let curve = CurveFile {
                name: "fixed_length".into(),
                x_label: "tau".into(),
                y_label: "energy".into(),
                points,
            };
            write_curve(out, &curve)?;
            if *samples > 0 {
                let cfg = SimConfig {
                    symbols: frame.t,
                    antennas: frame.m,
                    noise_var: frame.noise,
                    feedback: Some(q),
                    seed: *seed,
                    schemes: vec![],
                    ..SimConfig::default()
                };
                let sim = fixed_length_curve(&cfg, *samples)?;
                write_tau_curve(out, "fixed_length_sim", &sim)?;
            }
        }
        Command::Thresholds { frame, grid } => {
            let cfg = FrameConfig::new(frame.t, frame.m)?;
            let model = ChannelModel::uncorrelated(frame.m, frame.noise)?;
            let spec = GridSpec::covering(frame.m, frame.noise, *grid)?;
            let (_, policy) = solve_bellman(&cfg, &model, spec)?;
            let mut csv = String::from("k,lambda\n");
            for k in 0..cfg.slots {
                match policy.thresholds(k) {
                    [] => csv.push_str(&format!("{k},inf\n")),
                    cuts => {
                        for c in cuts {
                            csv.push_str(&format!("{k},{c}\n"));
                        }
                    }
                }
            }
            print!("{csv}");
            write(out, "thresholds.csv", &csv)?;
            policy.save(&out.join("policy.json"))?;
        }
        Command::Allocate { sim } => {
            let cfg = load_config(sim)?;
            let art = Artifacts::prepare(&cfg)?;
            if let Some(d) = &art.distribution {
                write(out, "stopping_distribution.csv", &d.to_csv()?)?;
            }
            if let Some(p) = &art.policy {
                p.save(&out.join("policy.json"))?;
            }
            for (name, plan) in [("lcpa", &art.lcpa), ("lpa", &art.lpa), ("cpa", &art.cpa)] {
                if let Some(plan) = plan {
                    write(out, &format!("{name}_plan.csv"), &plan.to_csv()?)?;
                    println!("{}: objective {:.6}, spend {:.6} of {:.6}", plan.mode, plan.objective, plan.spend, plan.p2);
                }
            }
        }
        Command::Simulate { sim, scheme } => {
            let scheme: Scheme = scheme.parse()?;
            let mut cfg = load_config(sim)?;
            if !cfg.schemes.contains(&scheme) {
                cfg.schemes.push(scheme);
            }
            let art = Artifacts::prepare(&cfg)?;
            let r = run_scheme(scheme, &cfg, &art)?;
            println!(
                "{}: {:.6} +- {:.6} {} (spend {:.6})",
                r.scheme, r.mean_energy, r.std_err, r.energy_unit, r.mean_spend
            );
            let mut csv = String::from("scheme,frames,mean_energy,std_err,mean_spend,spend_std_err,unit\n");
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.scheme, r.frames, r.mean_energy, r.std_err, r.mean_spend, r.spend_std_err, r.energy_unit
            ));
            write(out, &format!("{}.csv", r.scheme.name().to_lowercase()), &csv)?;
        }
        Command::Compare { sim, p1_multiples } => {
            let cfg = load_config(sim)?;
            if p1_multiples.is_empty() {
                let art = Artifacts::prepare(&cfg)?;
                let cmp = compare_with(&cfg, &art)?;
                print_comparison(&cmp);
                write_comparison(out, &cmp)?;
            } else {
                let sweep = power_cap_sweep(&cfg, p1_multiples)?;
                let mut curves: Vec<CurveFile> = cfg
                    .schemes
                    .iter()
                    .map(|s| CurveFile {
                        name: format!("energy_vs_p1_{}", s.name().to_lowercase()),
                        x_label: "x".into(),
                        y_label: "y".into(),
                        points: vec![],
                    })
                    .collect();
                for cmp in &sweep {
                    println!("P1 = {} P0", cmp.config.p1_multiple);
                    print_comparison(cmp);
                    let dir = out.join(format!("p1x{}", cmp.config.p1_multiple));
                    write_comparison(&dir, cmp)?;
                    for (curve, r) in curves.iter_mut().zip(&cmp.reports) {
                        curve.points.push((cmp.config.p1_multiple, r.mean_energy));
                    }
                }
                for c in &curves {
                    write_curve(out, c)?;
                }
            }
        }
    }
    Ok(())
}

fn print_comparison(cmp: &wpt_core::harness::Comparison) {
    println!("tau* = {}, budget per frame = {:.6}", cmp.tau_star, cmp.p2);
    for r in &cmp.reports {
        println!(
            "  {:<6} {:>14.6} +- {:<12.6} spend {:.6}",
            r.scheme.name(),
            r.mean_energy,
            r.std_err,
            r.mean_spend
        );
    }
}
