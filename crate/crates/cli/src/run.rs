use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use qbc_core::broadcast::{self, ChannelFile, DegradedOptions, DegradedOutcome};
use qbc_core::codesim::{self, SimOptions, SimReport};
use qbc_core::regions::{self, RateRegion, RegionOptions};
use qbc_core::relay::{self, RelayOptions};
use qbc_core::state::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Classical,
    QuantumInner,
    QuantumOuter,
}

/// Everything a run depends on, with defaults filled in. The channel is
/// embedded so that an artifact can be re-run without its source file.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    ChannelInfo { channel_path: String, channel: ChannelFile, options: DegradedOptions },
    Region {
        family: Family,
        channel_path: String,
        channel: ChannelFile,
        c12: f64,
        #[serde(default = "one")]
        letters: usize,
        options: RegionOptions,
    },
    Relay { channel_path: String, channel: ChannelFile, grid: Vec<f64>, options: RelayOptions },
    Simulate {
        channel_path: String,
        channel: ChannelFile,
        card0: usize,
        card1: usize,
        pmf: Vec<f64>,
        ns: Vec<usize>,
        /// `(R0, R1, C12)`
        rates: [f64; 3],
        options: SimOptions,
    },
}

fn one() -> usize {
    1
}

impl RunConfig {
    fn seed(&self) -> u64 {
        match self {
            RunConfig::ChannelInfo { options, .. } => options.seed,
            RunConfig::Region { options, .. } => options.seed,
            RunConfig::Relay { options, .. } => options.seed,
            RunConfig::Simulate { options, .. } => options.seed,
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct Artifact {
    pub version: String,
    pub tool_version: String,
    pub seed: u64,
    /// Informational; results do not depend on it.
    pub workers: Option<usize>,
    pub config: RunConfig,
    pub result: serde_json::Value,
}

pub struct Output {
    pub artifact: Artifact,
    pub csv: Option<String>,
    pub summary: String,
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Guard(String),
    Mismatch,
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Guard(_) | Failure::Mismatch => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) | Failure::Guard(m) => f.write_str(m),
            Failure::Mismatch => f.write_str("re-run result differs from the artifact"),
        }
    }
}

impl From<qbc_core::Error> for Failure {
    fn from(e: qbc_core::Error) -> Self {
        match e {
            qbc_core::Error::ResourceGuard(_) => Failure::Guard(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

/// `builtin:<name>` selects a bundled channel; anything else is a path.
pub fn load_channel(source: &str) -> Result<(String, ChannelFile), Failure> {
    let file = if let Some(name) = source.strip_prefix("builtin:") {
        let found = broadcast::bundled()?.into_iter().find(|(n, _)| *n == name);
        match found {
            Some((_, bc)) => bc.to_file(),
            None => {
                let names: Vec<&str> = broadcast::bundled()?.into_iter().map(|(n, _)| n).collect();
                return Err(Failure::Config(format!("unknown bundled channel `{name}` (have {})", names.join(", "))));
            }
        }
    } else {
        let text = std::fs::read_to_string(source).map_err(|e| Failure::Config(format!("{source}: {e}")))?;
        serde_json::from_str::<ChannelFile>(&text).map_err(|e| Failure::Config(format!("{source}: {e}")))?
    };
    file.clone().into_channel()?;
    Ok((source.to_string(), file))
}

/// `x1 = x0` with probability 0.9 when `card0 == card1`; uniform otherwise.
pub fn default_pmf(card0: usize, card1: usize) -> Vec<f64> {
    let mut p = vec![0.0; card0 * card1];
    for a in 0..card0 {
        for x in 0..card1 {
            p[a * card1 + x] = if card0 != card1 || card1 == 1 {
                1.0 / card1 as f64
            } else if a == x {
                0.9
            } else {
                0.1 / (card1 - 1) as f64
            } / card0 as f64;
        }
    }
    p
}

fn region_summary(r: &RateRegion, is_hadamard: bool) -> String {
    let label = match (r.family.as_str(), is_hadamard) {
        ("classical", true) => "capacity region (single-letter)",
        ("classical", false) => "achievable region (inner bound)",
        ("quantum-outer", _) => "outer bound (single-letter evaluation)",
        _ => "achievable region (inner bound)",
    };
    let mut s = format!("{} {label} at conferencing {}\nhull vertices (R0, R1):\n", r.family, r.conferencing);
    for p in &r.hull {
        s.push_str(&format!("  {:.6}  {:.6}\n", p[0], p[1]));
    }
    s
}

pub fn execute(config: RunConfig, workers: Option<usize>) -> Result<Output, Failure> {
    let (result, csv, summary) = match &config {
        RunConfig::ChannelInfo { channel, options, .. } => {
            let bc = channel.clone().into_channel()?;
            let info = broadcast::channel_info(&bc, options);
            let degraded = match &info.degraded {
                DegradedOutcome::Certified(c) => format!("degraded (residual {:.2e})", c.residual),
                DegradedOutcome::NotFound { best_residual, .. } => {
                    format!("no degrading map found (best residual {best_residual:.2e})")
                }
            };
            let summary = format!(
                "input {} -> B1 {} x B2 {}, Kraus rank {}\nclassical {}, classical input {}, Hadamard {}\nH(B1) = {:.6}, H(B2) = {:.6} for the maximally mixed input\n{degraded}\n",
                info.in_dim, info.d1, info.d2, info.kraus_rank, info.is_classical, info.classical_input, info.is_hadamard, info.h_b1, info.h_b2
            );
            (serde_json::to_value(&info)?, None, summary)
        }
        RunConfig::Region { family, channel, c12, letters, options, .. } => {
            let bc = channel.clone().into_channel()?;
            let r = match family {
                Family::Classical if *letters == 1 => regions::classical_region(&bc, *c12, options)?,
                Family::Classical => regions::multi_letter_classical_region(&bc, *c12, *letters, options)?,
                Family::QuantumInner => regions::quantum_inner_region(&bc, *c12, options)?,
                Family::QuantumOuter => regions::quantum_outer_region_single_letter(&bc, *c12, options)?,
            };
            let summary = region_summary(&r, bc.flags().is_hadamard);
            (serde_json::to_value(&r)?, Some(r.hull_csv()), summary)
        }
        RunConfig::Relay { channel, grid, options, .. } => {
            let bc = channel.clone().into_channel()?;
            let report = relay::relay_bounds(&bc, grid, options)?;
            let mut summary = String::from("cq12      cutset    decode-fwd  eof-lower\n");
            for p in &report.points {
                summary.push_str(&format!("{:<9.4} {:<9.6} {:<11.6} {:.6}\n", p.cq12, p.cutset, p.decode_forward, p.eof_lower));
            }
            (serde_json::to_value(&report)?, Some(report.csv()), summary)
        }
        RunConfig::Simulate { channel, card0, card1, pmf, ns, rates, options, .. } => {
            let bc = channel.clone().into_channel()?;
            let reports: Vec<SimReport> = codesim::sweep_block_lengths(&bc, *card0, *card1, pmf, ns, *rates, options)?;
            let mut summary = String::new();
            for r in &reports {
                summary.push_str(&format!(
                    "n = {:>3}  rates ({:.4}, {:.4}, {:.4})  error {:.4} +- {:.4}\n",
                    r.n,
                    r.rates[0],
                    r.rates[1],
                    r.rates[2],
                    r.empirical_error,
                    r.std_error()
                ));
            }
            (serde_json::to_value(&reports)?, Some(codesim::sweep_csv(&reports)), summary)
        }
    };
    let artifact = Artifact {
        version: SCHEMA_VERSION.into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed(),
        workers,
        config,
        result,
    };
    Ok(Output { artifact, csv, summary })
}

pub fn read_artifact(path: &Path) -> Result<Artifact, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let a: Artifact = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if a.version != SCHEMA_VERSION {
        return Err(Failure::Config(format!("unsupported artifact version {:?}", a.version)));
    }
    Ok(a)
}

pub fn emit(out: &Output, json: Option<&PathBuf>, csv: Option<&PathBuf>) -> Result<(), Failure> {
    print!("{}", out.summary);
    if let Some(p) = json {
        std::fs::write(p, serde_json::to_string_pretty(&out.artifact)?)?;
        println!("wrote {}", p.display());
    }
    if let Some(p) = csv {
        match &out.csv {
            Some(s) => {
                std::fs::write(p, s)?;
                println!("wrote {}", p.display());
            }
            None => return Err(Failure::Config("this command has no CSV output".into())),
        }
    }
    Ok(())
}
