use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use socialsim::scenario::{
    validate_config, BackendKind, ConfigError, RunConfig, Scenario, Simulation,
};
use socialsim::store::{ExportFormat, Store, StoreConfig};
use socialsim::usergen::{
    generate_profiles, sample_population, write_profiles_jsonl, DemographicSpec, ProfileGenerator,
    RemoteGeneratorConfig,
};

#[derive(Parser)]
#[command(
    name = "socialsim",
    version,
    about = "Run and inspect social media simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the config comes from, plus overrides.
#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Start from this preset when no config file is given.
    #[arg(long, conflicts_with = "config")]
    scenario: Option<Scenario>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    /// scripted or remote
    #[arg(long)]
    backend: Option<BackendKind>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match (&self.config, self.scenario) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(s)) => RunConfig::preset(s),
            (None, None) => bail!("give --config or --scenario"),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(steps) = self.steps {
            config.steps = steps;
        }
        if let Some(b) = self.backend {
            config.backend.kind = b;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its outputs.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory; overrides export.dir.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Concurrent agent decisions.
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Check a config without running it.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also probe the remote backend endpoints.
        #[arg(long)]
        check_workers: bool,
    },
    /// Export the tables of a file-backed store.
    Export {
        /// Store directory.
        #[arg(long)]
        store: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
    },
    /// Generate user profiles as JSONL.
    GenUsers {
        #[arg(long, short = 'n')]
        count: usize,
        /// The first `cores` users are marked as core users.
        #[arg(long, default_value_t = 0)]
        cores: usize,
        /// x or reddit topic pool.
        #[arg(long, default_value = "x")]
        platform: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
        /// Chat-completion endpoint for profile writing; templates otherwise.
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "default")]
        model: String,
    },
    /// Print a preset as TOML.
    Preset { scenario: Scenario },
}

fn run(cfg: &ConfigArgs, out: Option<PathBuf>, parallelism: Option<usize>) -> Result<()> {
    let mut config = cfg.load()?;
    if let Some(dir) = out {
        config.export.dir = Some(dir);
    }
    if let Some(p) = parallelism {
        config.runtime.parallelism = p;
    }
    let mut sim = Simulation::from_config(&config)?;
    let report = sim.run()?;
    eprintln!(
        "{}: {} steps, {} agents, {} activations, {} posts, {} comments, {} fallbacks",
        report.scenario,
        report.steps,
        report.agents,
        report.activations,
        report.posts,
        report.comments,
        report.fallbacks
    );
    match &config.export.dir {
        Some(dir) => {
            let files = sim.export(dir)?;
            eprintln!("wrote {} files to {}", files.len(), dir.display());
        }
        None => eprintln!("no export dir set; nothing written"),
    }
    Ok(())
}

fn validate(cfg: &ConfigArgs, check_workers: bool) -> Result<bool> {
    let mut config = cfg.load()?;
    config.runtime.check_workers = check_workers;
    match validate_config(&config) {
        Ok(v) => {
            for w in &v.warnings {
                eprintln!("warning: {w}");
            }
            if check_workers && config.backend.kind == BackendKind::Remote {
                // Building the simulation probes the workers.
                Simulation::new(v)?;
            }
            eprintln!("ok");
            Ok(true)
        }
        Err(ConfigError::Invalid(errors)) => {
            for e in errors {
                eprintln!("error: {e}");
            }
            Ok(false)
        }
        Err(e) => Err(e.into()),
    }
}

fn export(store: &Path, out: &Path, format: ExportFormat) -> Result<()> {
    if !store.join("user.jsonl").exists() {
        bail!("{} does not look like a store directory", store.display());
    }
    let s = Store::open(StoreConfig::file(store, 0))?;
    s.verify_integrity()
        .map_err(anyhow::Error::msg)
        .context("store failed its integrity check")?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let files = s.export_tables(format, out)?;
    eprintln!("wrote {} tables to {}", files.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn gen_users(
    count: usize,
    cores: usize,
    platform: &str,
    seed: u64,
    out: &Path,
    endpoint: Option<String>,
    model: String,
) -> Result<()> {
    if cores > count {
        bail!("--cores {cores} exceeds --count {count}");
    }
    let spec = match platform {
        "x" => DemographicSpec::x(),
        "reddit" => DemographicSpec::reddit(),
        other => bail!("unknown platform {other:?} (expected x or reddit)"),
    };
    let generator = match endpoint {
        Some(endpoint) => ProfileGenerator::Remote(RemoteGeneratorConfig {
            endpoint,
            model,
            ..RemoteGeneratorConfig::default()
        }),
        None => ProfileGenerator::Template,
    };
    let rows = sample_population(&spec, count, seed)?;
    let mut profiles = generate_profiles(&rows, &generator, seed)?;
    for p in profiles.iter_mut().take(cores) {
        p.is_core = true;
    }
    let fallbacks = profiles.iter().filter(|p| p.fallback).count();
    write_profiles_jsonl(out, &profiles)?;
    eprintln!(
        "wrote {count} profiles to {} ({fallbacks} from templates after errors)",
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            cfg,
            out,
            parallelism,
        } => run(&cfg, out, parallelism).map(|_| true),
        Command::Validate { cfg, check_workers } => validate(&cfg, check_workers),
        Command::Export { store, out, format } => export(&store, &out, format).map(|_| true),
        Command::GenUsers {
            count,
            cores,
            platform,
            seed,
            out,
            endpoint,
            model,
        } => gen_users(count, cores, &platform, seed, &out, endpoint, model).map(|_| true),
        Command::Preset { scenario } => {
            print!("{}", RunConfig::preset(scenario).to_toml());
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
