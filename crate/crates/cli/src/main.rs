mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qbc_core::codesim::{Decoder, SimOptions};
use qbc_core::regions::RegionOptions;
use qbc_core::relay::{CutsetAuxiliary, RelayOptions};

use run::{Family, Failure, RunConfig};

/// Rate regions and capacity bounds for quantum broadcast channels with
/// cooperating decoders.
#[derive(Parser, Debug)]
#[command(name = "qbc", version)]
struct Cli {
    /// Worker threads for the parallel searches [env: QBC_WORKERS]
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inspect or export channel files.
    #[command(subcommand)]
    Channel(ChannelCmd),
    /// Rate regions under classical or quantum conferencing.
    Region {
        #[arg(value_enum)]
        family: Family,
        #[command(flatten)]
        args: RegionArgs,
    },
    /// Primitive relay bounds.
    #[command(subcommand)]
    Relay(RelayCmd),
    /// Monte Carlo simulation of the conferencing superposition code.
    Simulate(SimArgs),
    /// Conferencing-rate conversions by teleportation and super-dense coding.
    Convert(ConvertArgs),
    /// Re-run the configuration embedded in an artifact.
    Rerun(RerunArgs),
}

#[derive(Subcommand, Debug)]
enum ChannelCmd {
    /// Flags, marginal entropies and the degradability residual.
    Info {
        channel: String,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write the bundled channels as JSON files.
    ExportBundled {
        #[arg(long, default_value = "channels")]
        dir: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum RelayCmd {
    /// Cutset, decode-forward and EoF bounds on a conferencing grid.
    Bounds(RelayArgs),
}

#[derive(Args, Debug)]
struct OutArgs {
    /// JSON artifact path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV path for plotting.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RegionArgs {
    /// Channel file, or `builtin:<name>` for a bundled channel.
    #[arg(long)]
    channel: String,
    /// Conferencing rate (qubits per use for the quantum families).
    #[arg(long, visible_alias = "cq12", default_value_t = 0.0)]
    c12: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    weights: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Ensemble caps `card0,card1` for the classical family.
    #[arg(long, value_parser = parse_pair)]
    caps: Option<(usize, usize)>,
    /// Reference dimensions `a1,a2` for the quantum families.
    #[arg(long, value_parser = parse_pair)]
    ref_dims: Option<(usize, usize)>,
    #[arg(long)]
    t_dim: Option<usize>,
    #[arg(long)]
    max_evals: Option<usize>,
    /// Letters per use for the classical family (1 or 2).
    #[arg(long, default_value_t = 1)]
    letters: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct RelayArgs {
    #[arg(long)]
    channel: String,
    #[arg(long, default_value_t = 0.0, conflicts_with = "grid")]
    cq12: f64,
    /// `start:stop:count`, endpoints included.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<Grid>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    t_dim: Option<usize>,
    #[arg(long, value_enum, default_value_t = Auxiliary::Forwarded)]
    auxiliary: Auxiliary,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Auxiliary {
    Forwarded,
    InputReference,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DecoderArg {
    Ml,
    Jt,
    Pgm,
}

#[derive(Args, Debug)]
struct SimArgs {
    #[arg(long)]
    channel: String,
    /// Block lengths; repeat or comma-separate for a sweep.
    #[arg(long = "n", value_delimiter = ',', required = true)]
    ns: Vec<usize>,
    #[arg(long, default_value_t = 0.0)]
    r0: f64,
    #[arg(long, default_value_t = 0.0)]
    r1: f64,
    #[arg(long, default_value_t = 0.0)]
    c12: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = DecoderArg::Ml)]
    decoder: DecoderArg,
    /// Typicality slack; defaults to `n^(-1/3)`.
    #[arg(long)]
    delta: Option<f64>,
    /// Cloud alphabet size; defaults to the channel input dimension.
    #[arg(long)]
    card0: Option<usize>,
    /// `p(x0, x1)` row-major, comma-separated; defaults to `x1 = x0` with
    /// probability 0.9, other symbols uniform.
    #[arg(long, value_delimiter = ',')]
    pmf: Option<Vec<f64>>,
    /// Average over a fresh codebook per trial.
    #[arg(long)]
    codebook_per_trial: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct ConvertArgs {
    /// Classical rate to convert by teleportation.
    #[arg(long)]
    c12: Option<f64>,
    /// Quantum rate to convert by super-dense coding.
    #[arg(long)]
    cq12: Option<f64>,
}

#[derive(Args, Debug)]
struct RerunArgs {
    artifact: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected `a,b`")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

#[derive(Clone, Debug)]
struct Grid(Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts[..] else {
        return Err("expected `start:stop:count`".into());
    };
    let a: f64 = a.parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.parse().map_err(|e| format!("{e}"))?;
    let n: usize = n.parse().map_err(|e| format!("{e}"))?;
    if n == 0 || !(a.is_finite() && b.is_finite()) {
        return Err("grid needs a positive count and finite endpoints".into());
    }
    if n == 1 {
        return Ok(Grid(vec![a]));
    }
    Ok(Grid((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()))
}

fn region_config(family: Family, a: &RegionArgs) -> Result<RunConfig, Failure> {
    let d = RegionOptions::default();
    let mut options = RegionOptions {
        weights: a.weights.unwrap_or(d.weights),
        restarts: a.restarts.unwrap_or(d.restarts),
        seed: a.seed,
        caps: a.caps,
        ref_dims: a.ref_dims,
        t_dim: a.t_dim.unwrap_or(d.t_dim),
        ..d
    };
    if let Some(m) = a.max_evals {
        options.local.max_evals = m;
    }
    let (channel_path, channel) = run::load_channel(&a.channel)?;
    if a.letters != 1 && family != Family::Classical {
        return Err(Failure::Config("--letters applies to the classical family only".into()));
    }
    Ok(RunConfig::Region { family, channel_path, channel, c12: a.c12, letters: a.letters, options })
}

fn relay_config(a: &RelayArgs) -> Result<RunConfig, Failure> {
    let d = RelayOptions::default();
    let options = RelayOptions {
        restarts: a.restarts.unwrap_or(d.restarts),
        seed: a.seed,
        t_dim: a.t_dim.unwrap_or(d.t_dim),
        auxiliary: match a.auxiliary {
            Auxiliary::Forwarded => CutsetAuxiliary::ForwardedRegister,
            Auxiliary::InputReference => CutsetAuxiliary::InputReference,
        },
        ..d
    };
    let (channel_path, channel) = run::load_channel(&a.channel)?;
    let grid = a.grid.clone().map(|g| g.0).unwrap_or_else(|| vec![a.cq12]);
    Ok(RunConfig::Relay { channel_path, channel, grid, options })
}

fn sim_config(a: &SimArgs) -> Result<RunConfig, Failure> {
    let (channel_path, channel) = run::load_channel(&a.channel)?;
    let card1 = channel.kraus.in_dims.first().copied().unwrap_or(0);
    let card0 = a.card0.unwrap_or(card1);
    let pmf = match &a.pmf {
        Some(p) => p.clone(),
        None => run::default_pmf(card0, card1),
    };
    let options = SimOptions {
        trials: a.trials,
        seed: a.seed,
        decoder: match a.decoder {
            DecoderArg::Ml => Decoder::MaxLikelihood,
            DecoderArg::Jt => Decoder::JointTypicality,
            DecoderArg::Pgm => Decoder::PrettyGood,
        },
        delta: a.delta,
        codebook_per_trial: a.codebook_per_trial,
    };
    Ok(RunConfig::Simulate { channel_path, channel, card0, card1, pmf, ns: a.ns.clone(), rates: [a.r0, a.r1, a.c12], options })
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let workers = cli.workers.or_else(|| std::env::var("QBC_WORKERS").ok().and_then(|s| s.parse().ok()));
    if let Some(w) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| Failure::Config(format!("worker pool: {e}")))?;
    }
    let (config, out) = match cli.command {
        Command::Channel(ChannelCmd::ExportBundled { dir }) => {
            for p in qbc_core::broadcast::write_bundled(&dir)? {
                println!("{}", p.display());
            }
            return Ok(());
        }
        Command::Convert(c) => {
            match (c.c12, c.cq12) {
                (Some(x), _) => println!("CQ12 = {}", qbc_core::relay::teleport_convert(x)?),
                (_, Some(x)) => println!("C12 = {}", qbc_core::relay::superdense_convert(x)?),
                _ => unreachable!("clap enforces one of the flags"),
            }
            return Ok(());
        }
        Command::Channel(ChannelCmd::Info { channel, seed, out }) => {
            let (channel_path, channel) = run::load_channel(&channel)?;
            let options = qbc_core::broadcast::DegradedOptions { seed: seed.unwrap_or(0), ..Default::default() };
            (RunConfig::ChannelInfo { channel_path, channel, options }, out)
        }
        Command::Region { family, args } => (region_config(family, &args)?, args.out),
        Command::Relay(RelayCmd::Bounds(a)) => (relay_config(&a)?, a.out),
        Command::Simulate(a) => (sim_config(&a)?, a.out),
        Command::Rerun(r) => {
            let artifact = run::read_artifact(&r.artifact)?;
            let fresh = run::execute(artifact.config.clone(), workers)?;
            let same = fresh.artifact.result == artifact.result;
            run::emit(&fresh, r.out.out.as_ref(), r.out.csv.as_ref())?;
            println!("rerun of {}: {}", r.artifact.display(), if same { "identical result" } else { "result differs" });
            return if same { Ok(()) } else { Err(Failure::Mismatch) };
        }
    };
    let output = run::execute(config, workers)?;
    run::emit(&output, out.out.as_ref(), out.csv.as_ref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
