use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nfisac::harness::{parse_precoder, parse_weight_grid, run, Experiment, RunConfig};
use nfisac::Error;

#[derive(Parser)]
#[command(
    name = "nfisac",
    version,
    about = "Near-field ISAC transmit design and MUSIC validation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file; defaults describe the desk-scale scene.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "NFISAC_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long)]
    rho: Option<f64>,
    /// `slp` or `blp`.
    #[arg(long, value_parser = parse_precoder_arg)]
    precoder: Option<nfisac::designer::PrecoderKind>,
}

#[derive(Subcommand)]
enum Command {
    /// One design at a single weight.
    Design {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        design: DesignArgs,
    },
    /// Symbol-level and block-level trade-off curves.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `start:step:stop` or a comma list.
        #[arg(long, value_parser = parse_grid_arg)]
        rho_grid: Option<WeightGrid>,
    },
    /// Transmit power map of one design.
    Beampattern {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        design: DesignArgs,
    },
    /// One noisy echo and its MUSIC spectrum.
    Music {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        design: DesignArgs,
    },
    /// Repeated seeded MUSIC trials.
    Mc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        design: DesignArgs,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Print the default configuration.
    Defaults,
}

fn parse_precoder_arg(s: &str) -> Result<nfisac::designer::PrecoderKind, String> {
    parse_precoder(s).map_err(|e| e.to_string())
}

#[derive(Clone)]
struct WeightGrid(Vec<f64>);

fn parse_grid_arg(s: &str) -> Result<WeightGrid, String> {
    parse_weight_grid(s)
        .map(WeightGrid)
        .map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 1,
        Error::Infeasible(_) => 3,
        Error::Solver { .. } | Error::SingularFisher { .. } => 4,
        Error::Config { .. }
        | Error::InvalidInput(_)
        | Error::DimensionMismatch { .. }
        | Error::DegenerateGeometry(_)
        | Error::NotHermitian { .. }
        | Error::TooLarge(_) => 2,
    }
}

fn load(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| match e {
            Error::Io(io) => Error::Config {
                line: 0,
                message: format!("cannot read {}: {io}", path.display()),
            },
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(dir) = &common.output_dir {
        cfg.run.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn build(command: Command) -> Result<Option<RunConfig>, Error> {
    let cfg = match command {
        Command::Defaults => {
            print!("{}", RunConfig::default().to_text());
            return Ok(None);
        }
        Command::Design { common, design } => {
            let mut cfg = load(&common)?;
            cfg.run.experiment = Experiment::Design;
            cfg.design.rho = design.rho.unwrap_or(cfg.design.rho);
            cfg.design.precoder = design.precoder.unwrap_or(cfg.design.precoder);
            cfg
        }
        Command::Sweep { common, rho_grid } => {
            let mut cfg = load(&common)?;
            cfg.run.experiment = Experiment::Sweep;
            if let Some(g) = rho_grid {
                cfg.design.rho_grid = g.0;
            }
            cfg
        }
        Command::Beampattern { common, design } => {
            let mut cfg = load(&common)?;
            cfg.run.experiment = Experiment::Beampattern;
            cfg.beampattern.rho = design.rho.unwrap_or(cfg.beampattern.rho);
            cfg.beampattern.precoder = design.precoder.unwrap_or(cfg.beampattern.precoder);
            cfg
        }
        Command::Music { common, design } => {
            let mut cfg = load(&common)?;
            cfg.run.experiment = Experiment::Music;
            cfg.music.rho = design.rho.unwrap_or(cfg.music.rho);
            cfg.music.precoder = design.precoder.unwrap_or(cfg.music.precoder);
            cfg
        }
        Command::Mc {
            common,
            design,
            trials,
        } => {
            let mut cfg = load(&common)?;
            cfg.run.experiment = Experiment::Mc;
            cfg.music.rho = design.rho.unwrap_or(cfg.music.rho);
            cfg.music.precoder = design.precoder.unwrap_or(cfg.music.precoder);
            cfg.music.trials = trials.unwrap_or(cfg.music.trials);
            cfg
        }
    };
    cfg.validate()?;
    Ok(Some(cfg))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = build(cli.command).and_then(|cfg| match cfg {
        None => Ok(()),
        Some(cfg) => {
            let outcome = run(&cfg)?;
            for f in &outcome.record.files {
                println!("wrote {}", outcome.output_dir.join(f).display());
            }
            for w in &outcome.record.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "metrics in {}",
                outcome.output_dir.join("metrics.json").display()
            );
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
