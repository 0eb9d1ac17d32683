use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use curse_lab::envgen::Restriction;
use curse_lab::expt::{self, Preset, RunConfig};
use curse_lab::theory;

#[derive(Parser)]
#[command(name = "curse-lab", version, about = "Winner's-curse simulation lab for refugee matching")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with [env], [learners.<family>], [run] and [theory] sections,
    /// layered over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides run.master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// smoke, desk or full.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a historical dataset from the simulated environment.
    Envgen {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Restrict to free-case refugees.
        #[arg(long)]
        free_only: bool,
        /// Dataset CSV; a JSON sidecar is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the simulation protocol and write estimates and diagnostics.
    Run {
        /// Refit the learner on a fresh training set in every replication.
        #[arg(long)]
        refit_per_rep: bool,
    },
    /// Numerically verify the stylized winner's-curse results.
    Theory,
    /// Recompute histograms and summaries from existing estimates.csv files.
    Report {
        #[arg(long)]
        bins: Option<usize>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let base = common.preset.parse::<Preset>()?.config();
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_toml_over(&text, &base).with_context(|| format!("in {}", path.display()))?
        }
        None => base,
    };
    if let Some(seed) = common.seed {
        config.run.master_seed = seed;
    }
    Ok(config)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn envgen(config: &RunConfig, n: usize, free_only: bool, out: &Path) -> Result<()> {
    let restriction = if free_only { Restriction::FreeOnly } else { Restriction::Any };
    let (dataset, sidecar) = expt::sample_environment(config, n, restriction)?;
    let mut w = create(out)?;
    dataset.write_csv(&mut w)?;
    w.flush()?;
    let side = out.with_extension("json");
    let mut w = create(&side)?;
    serde_json::to_writer_pretty(&mut w, &sidecar)?;
    w.flush()?;
    println!("wrote {} records to {} (environment {})", n, out.display(), sidecar.env_digest);
    Ok(())
}

fn run(mut config: RunConfig, refit_per_rep: bool, out: &Path) -> Result<()> {
    config.run.refit_per_rep |= refit_per_rep;
    config.validate()?;
    let result = expt::run_protocol(&config)?;
    expt::write_run_outputs(&result, out)?;
    for family in &result.families {
        println!("{} ({} replications, {} failed)", family.label, family.replications.len(), family.failures.len());
        for s in family.report().summaries() {
            println!(
                "  {:<22} mean {:>8.2}%  sd {:>7.2}  t {:>7.2}  bias vs oracle {:>8.2}",
                s.method.label(),
                s.mean,
                s.sd,
                s.t_stat,
                s.bias
            );
        }
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn run_theory(config: &RunConfig, out: &Path) -> Result<bool> {
    let report = theory::run_all(&config.theory_config())?;
    let mut w = create(&out.join("theory_report.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    println!("{report}");
    Ok(report.all_pass())
}

fn report(out: &Path, bins: usize) -> Result<()> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)
        .with_context(|| format!("reading {}", out.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(expt::ESTIMATES_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no {} found under {}", expt::ESTIMATES_FILE, out.display());
    }
    for dir in dirs {
        let report = expt::read_family_report(&dir)?;
        expt::write_family_report(&report, &dir, bins)?;
        println!("{}: {} estimates", dir.display(), report.rows.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = (|| -> Result<bool> {
        if let Some(n) = cli.common.threads {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
        let config = load_config(&cli.common)?;
        let out = &cli.common.out_dir;
        match &cli.command {
            Command::Envgen { n, free_only, out: file } => {
                let file = file.clone().unwrap_or_else(|| out.join("history.csv"));
                envgen(&config, *n, *free_only, &file)?;
            }
            Command::Run { refit_per_rep } => run(config, *refit_per_rep, out)?,
            Command::Theory => return run_theory(&config, out),
            Command::Report { bins } => report(out, bins.unwrap_or(config.run.histogram_bins))?,
        }
        Ok(true)
    })();
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some theory checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
