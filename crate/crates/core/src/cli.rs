//! Command-line front end.
//!
//! Subcommands: `zvec`, `rho`, `rho-matrix`, `construct`, `bounds`,
//! `table`, `verify`, `simulate`. Data goes to standard output (or
//! `--output`); anything diagnostic goes to standard error, so pipelines
//! stay clean. Identical invocations produce byte-identical output: every
//! CSV float is printed with 17 significant digits, orders are fixed, and
//! all randomness is seeded.
//!
//! Flags override an optional `key = value` config file (`--config`),
//! which overrides built-in defaults. Exit codes: 0 ok, 1 usage error,
//! 2 resource/capacity error, 3 verification failure.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::bounds::{
    bounds_report, construct_info_set, ie_lower, info_set_size, theorem3_sandwich, trivial_lower,
    union_bound, CodeSpec,
};
use crate::correlation::{build_rho_matrix, rho_pair, RhoEvaluator};
use crate::index::SignSequence;
use crate::oracle::{self, bernoulli_rho_estimate, monte_carlo, proportion_std_error, McConfig};
use crate::polarize::{ChannelParam, ZTree};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CAPACITY: i32 = 2;
pub const EXIT_VERIFY_FAILED: i32 = 3;

/// Formats a float with 17 significant digits, enough to round-trip any
/// f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Binary,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Format> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "binary" => Ok(Format::Binary),
            other => Err(Error::Parse(format!(
                "unknown format {other:?}; expected csv, json, or binary"
            ))),
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "epsilon",
    "n",
    "k",
    "rate",
    "rates",
    "trials",
    "seed",
    "format",
    "output",
    "threads",
    "delta",
    "s",
    "t",
    "pairs",
    "sample-pairs",
    "exact",
];

/// A `key = value` file; `#` starts a comment. Only keys that exist as
/// flags are accepted, so typos fail loudly instead of being ignored.
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    entries: Vec<(String, String)>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<FileConfig> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!(
                    "config line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(Error::Parse(format!(
                    "config line {}: unknown key {key:?} (known keys: {})",
                    lineno + 1,
                    CONFIG_KEYS.join(", ")
                )));
            }
            entries.push((key, value.trim().to_string()));
        }
        Ok(FileConfig { entries })
    }

    pub fn load(path: &Path) -> Result<FileConfig> {
        FileConfig::parse(&std::fs::read_to_string(path)?)
    }

    fn get(&self, key: &str) -> Option<&str> {
        // Last occurrence wins, like repeated flags would.
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(text) => text.parse::<T>().map(Some).map_err(|_| {
                Error::Parse(format!("config key {key:?}: cannot parse value {text:?}"))
            }),
        }
    }
}

/// Flag value if given, else config-file value, else `None`.
fn resolve<T: std::str::FromStr>(
    flag: Option<T>,
    file: &FileConfig,
    key: &str,
) -> Result<Option<T>> {
    match flag {
        Some(v) => Ok(Some(v)),
        None => file.value(key),
    }
}

fn required<T>(value: Option<T>, key: &str) -> Result<T> {
    value.ok_or_else(|| {
        Error::Invalid(format!(
            "missing --{key}; pass the flag or set `{key} = ...` in the config file"
        ))
    })
}

#[derive(Parser, Debug)]
#[command(
    name = "polarbec",
    version,
    about = "Erasure probabilities, correlations, and error bounds for polarized BECs"
)]
struct CliArgs {
    /// Key=value config file providing defaults for flags.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: CommandArgs,
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// Erasure probability of the root channel, in [0, 1].
    #[arg(long)]
    epsilon: Option<f64>,

    /// Number of transform steps (2^n synthesized channels).
    #[arg(long)]
    n: Option<usize>,

    /// Output format.
    #[arg(long)]
    format: Option<String>,

    /// Write output to this file instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum CommandArgs {
    /// Erasure probabilities Z of all 2^n synthesized channels.
    Zvec {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Correlation coefficient of one channel pair (plain text).
    Rho {
        #[arg(long)]
        epsilon: Option<f64>,
        /// First channel as a sign word, e.g. "-++-".
        #[arg(long, allow_hyphen_values = true)]
        s: Option<String>,
        /// Second channel as a sign word of the same length.
        #[arg(long, allow_hyphen_values = true)]
        t: Option<String>,
    },
    /// Full correlation matrix (upper triangle; csv, json, or binary).
    RhoMatrix {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// The K (or ceil(N*rate)) channels with smallest Z.
    Construct {
        #[command(flatten)]
        common: CommonArgs,
        /// Information-set size.
        #[arg(long)]
        k: Option<usize>,
        /// Code rate in (0, 1]; used as K = ceil(N * rate).
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Block-error-probability bounds for the constructed code.
    Bounds {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        rate: Option<f64>,
        /// Also compute the exact block error by enumeration (n <= 4).
        #[arg(long)]
        exact: bool,
        /// Add the asymptotic sandwich values for this delta (JSON only).
        #[arg(long)]
        delta: Option<f64>,
    },
    /// One bounds row per rate: rate, sum of Z, max Z, IE lower bound.
    Table {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated rates, e.g. 0.1,0.2,0.3.
        #[arg(long)]
        rates: Option<String>,
    },
    /// Check recursions and bounds against an oracle; JSON report.
    Verify {
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        /// Exhaustive enumeration oracle (requires n <= 4).
        #[arg(long)]
        exact: bool,
        /// Monte Carlo oracle with this many trials.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Channel pairs to spot-check in Monte Carlo mode.
        #[arg(long, value_name = "COUNT")]
        sample_pairs: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo estimates of Z, pair correlations, and block error.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        rate: Option<f64>,
        /// Explicit index pairs to track, e.g. "0:3,1:2".
        #[arg(long)]
        pairs: Option<String>,
        /// Track this many uniformly sampled distinct pairs instead.
        #[arg(long, value_name = "COUNT")]
        sample_pairs: Option<usize>,
    },
}

/// A fully resolved invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub threads: Option<usize>,
    pub command: CommandConfig,
}

#[derive(Debug, Clone, Copy)]
pub enum SetSize {
    K(usize),
    Rate(f64),
}

#[derive(Debug, Clone)]
pub enum PairSelection {
    Explicit(Vec<(usize, usize)>),
    Sampled(usize),
    None,
}

#[derive(Debug, Clone)]
pub enum CommandConfig {
    Zvec {
        epsilon: f64,
        n: usize,
        format: Format,
        output: Option<PathBuf>,
    },
    Rho {
        epsilon: f64,
        s: SignSequence,
        t: SignSequence,
    },
    RhoMatrix {
        epsilon: f64,
        n: usize,
        format: Format,
        output: Option<PathBuf>,
    },
    Construct {
        epsilon: f64,
        n: usize,
        size: SetSize,
        format: Format,
        output: Option<PathBuf>,
    },
    Bounds {
        epsilon: f64,
        n: usize,
        size: SetSize,
        exact: bool,
        delta: Option<f64>,
        format: Format,
        output: Option<PathBuf>,
    },
    Table {
        epsilon: f64,
        n: usize,
        rates: Vec<f64>,
        format: Format,
        output: Option<PathBuf>,
    },
    Verify {
        epsilon: f64,
        n: usize,
        mode: VerifyMode,
        output: Option<PathBuf>,
    },
    Simulate {
        epsilon: f64,
        n: usize,
        trials: u64,
        seed: u64,
        size: Option<SetSize>,
        pair_selection: PairSelection,
        format: Format,
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy)]
pub enum VerifyMode {
    Exact,
    MonteCarlo {
        trials: u64,
        seed: u64,
        sample_pairs: usize,
    },
}

fn parse_set_size(k: Option<usize>, rate: Option<f64>) -> Result<Option<SetSize>> {
    match (k, rate) {
        (Some(_), Some(_)) => Err(Error::Invalid(
            "--k and --rate are mutually exclusive; give exactly one".into(),
        )),
        (Some(k), None) => Ok(Some(SetSize::K(k))),
        (None, Some(r)) => Ok(Some(SetSize::Rate(r))),
        (None, None) => Ok(None),
    }
}

fn parse_rates(text: &str) -> Result<Vec<f64>> {
    let rates: Vec<f64> = text
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("invalid rate {part:?}")))
        })
        .collect::<Result<_>>()?;
    if rates.is_empty() {
        return Err(Error::Invalid("no rates given".into()));
    }
    Ok(rates)
}

fn parse_pair_list(text: &str, channels: usize) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|part| {
            let (a, b) = part.trim().split_once(':').ok_or_else(|| {
                Error::Parse(format!("invalid pair {part:?}; expected `s:t` indices"))
            })?;
            let s: usize = a
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("invalid pair index {a:?}")))?;
            let t: usize = b
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("invalid pair index {b:?}")))?;
            if s >= channels || t >= channels {
                return Err(Error::Invalid(format!(
                    "pair ({s}, {t}) out of range for {channels} channels"
                )));
            }
            Ok((s, t))
        })
        .collect()
}

fn resolve_format(
    flag: Option<String>,
    file: &FileConfig,
    default: Format,
    allow_binary: bool,
) -> Result<Format> {
    let format = match resolve(flag, file, "format")? {
        Some(text) => text.parse::<Format>()?,
        None => default,
    };
    if format == Format::Binary && !allow_binary {
        return Err(Error::Invalid(
            "binary output is only available for rho-matrix".into(),
        ));
    }
    Ok(format)
}

fn resolve_common(
    common: CommonArgs,
    file: &FileConfig,
    default_format: Format,
    allow_binary: bool,
) -> Result<(f64, usize, Format, Option<PathBuf>)> {
    let epsilon = required(resolve(common.epsilon, file, "epsilon")?, "epsilon")?;
    let n = required(resolve(common.n, file, "n")?, "n")?;
    let format = resolve_format(common.format, file, default_format, allow_binary)?;
    let output = resolve(common.output, file, "output")?;
    Ok((epsilon, n, format, output))
}

fn resolve_config(args: CliArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let threads = resolve(args.threads, &file, "threads")?;

    let command = match args.command {
        CommandArgs::Zvec { common } => {
            let (epsilon, n, format, output) = resolve_common(common, &file, Format::Csv, false)?;
            CommandConfig::Zvec {
                epsilon,
                n,
                format,
                output,
            }
        }
        CommandArgs::Rho { epsilon, s, t } => {
            let epsilon = required(resolve(epsilon, &file, "epsilon")?, "epsilon")?;
            let s: SignSequence = required(resolve(s, &file, "s")?, "s")?.parse()?;
            let t: SignSequence = required(resolve(t, &file, "t")?, "t")?.parse()?;
            CommandConfig::Rho { epsilon, s, t }
        }
        CommandArgs::RhoMatrix { common } => {
            let (epsilon, n, format, output) = resolve_common(common, &file, Format::Csv, true)?;
            CommandConfig::RhoMatrix {
                epsilon,
                n,
                format,
                output,
            }
        }
        CommandArgs::Construct { common, k, rate } => {
            let (epsilon, n, format, output) = resolve_common(common, &file, Format::Csv, false)?;
            let k = resolve(k, &file, "k")?;
            let rate = resolve(rate, &file, "rate")?;
            let size = required(parse_set_size(k, rate)?, "k (or --rate)")?;
            CommandConfig::Construct {
                epsilon,
                n,
                size,
                format,
                output,
            }
        }
        CommandArgs::Bounds {
            common,
            k,
            rate,
            exact,
            delta,
        } => {
            let (epsilon, n, format, output) = resolve_common(common, &file, Format::Csv, false)?;
            let k = resolve(k, &file, "k")?;
            let rate = resolve(rate, &file, "rate")?;
            let size = required(parse_set_size(k, rate)?, "k (or --rate)")?;
            let exact = exact || file.value::<bool>("exact")?.unwrap_or(false);
            let delta = resolve(delta, &file, "delta")?;
            CommandConfig::Bounds {
                epsilon,
                n,
                size,
                exact,
                delta,
                format,
                output,
            }
        }
        CommandArgs::Table { common, rates } => {
            let (epsilon, n, format, output) = resolve_common(common, &file, Format::Csv, false)?;
            let rates = parse_rates(&required(resolve(rates, &file, "rates")?, "rates")?)?;
            CommandConfig::Table {
                epsilon,
                n,
                rates,
                format,
                output,
            }
        }
        CommandArgs::Verify {
            epsilon,
            n,
            exact,
            trials,
            seed,
            sample_pairs,
            output,
        } => {
            let epsilon = required(resolve(epsilon, &file, "epsilon")?, "epsilon")?;
            let n = required(resolve(n, &file, "n")?, "n")?;
            let exact = exact || file.value::<bool>("exact")?.unwrap_or(false);
            let trials = resolve(trials, &file, "trials")?;
            if exact && trials.is_some() {
                return Err(Error::Invalid(
                    "--exact and --trials are mutually exclusive".into(),
                ));
            }
            let mode = if exact {
                VerifyMode::Exact
            } else {
                VerifyMode::MonteCarlo {
                    trials: trials.unwrap_or(1_000_000),
                    seed: resolve(seed, &file, "seed")?.unwrap_or(0),
                    sample_pairs: resolve(sample_pairs, &file, "sample-pairs")?.unwrap_or(100),
                }
            };
            let output = resolve(output, &file, "output")?;
            CommandConfig::Verify {
                epsilon,
                n,
                mode,
                output,
            }
        }
        CommandArgs::Simulate {
            common,
            trials,
            seed,
            k,
            rate,
            pairs,
            sample_pairs,
        } => {
            let (epsilon, n, format, output) = resolve_common(common, &file, Format::Json, false)?;
            let trials = resolve(trials, &file, "trials")?.unwrap_or(1_000_000);
            let seed = resolve(seed, &file, "seed")?.unwrap_or(0);
            let k = resolve(k, &file, "k")?;
            let rate = resolve(rate, &file, "rate")?;
            let size = parse_set_size(k, rate)?;
            let pairs = resolve(pairs, &file, "pairs")?;
            let sample_pairs = resolve(sample_pairs, &file, "sample-pairs")?;
            let pair_selection = match (pairs, sample_pairs) {
                (Some(_), Some(_)) => {
                    return Err(Error::Invalid(
                        "--pairs and --sample-pairs are mutually exclusive".into(),
                    ))
                }
                (Some(text), None) => PairSelection::Explicit(parse_pair_list(&text, 1usize << n)?),
                (None, Some(count)) => PairSelection::Sampled(count),
                (None, None) => PairSelection::None,
            };
            CommandConfig::Simulate {
                epsilon,
                n,
                trials,
                seed,
                size,
                pair_selection,
                format,
                output,
            }
        }
    };

    Ok(RunConfig { threads, command })
}

fn emit(output: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable report");
    bytes.push(b'\n');
    bytes
}

fn spec_from_size(tree: &ZTree, size: &SetSize) -> Result<CodeSpec> {
    let k = match *size {
        SetSize::K(k) => k,
        SetSize::Rate(rate) => info_set_size(tree.depth(), rate)?,
    };
    construct_info_set(tree, k)
}

/// Uniformly samples `count` distinct unordered channel pairs, restricted
/// to channels whose indicator variance is at least `min_var`.
fn sample_pairs(tree: &ZTree, count: usize, seed: u64, min_var: f64) -> Vec<(usize, usize)> {
    let n = tree.depth();
    let eligible: Vec<usize> = (0..(1usize << n))
        .filter(|&u| tree.level(n)[u] * tree.zbar_level(n)[u] >= min_var)
        .collect();
    if eligible.len() < 2 || count == 0 {
        return Vec::new();
    }
    let total = eligible.len() * (eligible.len() - 1) / 2;
    if count >= total {
        let mut all = Vec::with_capacity(total);
        for (i, &u) in eligible.iter().enumerate() {
            for &v in &eligible[i + 1..] {
                all.push((u, v));
            }
        }
        return all;
    }
    let mut bytes = [0u8; 32];
    bytes[..16].copy_from_slice(b"polarbec-pairs-1");
    bytes[16..24].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha12Rng::from_seed(bytes);
    let mut seen = std::collections::HashSet::new();
    let mut picked = Vec::with_capacity(count);
    while picked.len() < count {
        let a = eligible[rng.gen_range(0..eligible.len())];
        let b = eligible[rng.gen_range(0..eligible.len())];
        if a == b {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if seen.insert(pair) {
            picked.push(pair);
        }
    }
    picked
}

fn signs_of(index: usize, n: usize) -> String {
    SignSequence::from_index(index, n)
        .expect("index in range")
        .to_string()
}

// ---------------------------------------------------------------------------
// Command bodies
// ---------------------------------------------------------------------------

fn run_zvec(epsilon: f64, n: usize, format: Format, output: Option<&Path>) -> Result<()> {
    let tree = ZTree::build(&ChannelParam::new(epsilon)?, n)?;
    let z = tree.level(n);
    let bytes = match format {
        Format::Csv => {
            let mut text = String::from("index,signs,z\n");
            for (i, &value) in z.iter().enumerate() {
                writeln!(text, "{i},{},{}", signs_of(i, n), fmt_f64(value)).unwrap();
            }
            text.into_bytes()
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Channel {
                index: usize,
                signs: String,
                z: f64,
            }
            #[derive(Serialize)]
            struct ZvecOut {
                epsilon: f64,
                n: usize,
                channels: Vec<Channel>,
            }
            json_bytes(&ZvecOut {
                epsilon,
                n,
                channels: z
                    .iter()
                    .enumerate()
                    .map(|(i, &z)| Channel {
                        index: i,
                        signs: signs_of(i, n),
                        z,
                    })
                    .collect(),
            })
        }
        Format::Binary => unreachable!("rejected at resolve time"),
    };
    emit(output, &bytes)
}

fn run_rho(epsilon: f64, s: SignSequence, t: SignSequence) -> Result<()> {
    if s.len() != t.len() {
        return Err(Error::LengthMismatch {
            left: s.len(),
            right: t.len(),
        });
    }
    let tree = ZTree::build(&ChannelParam::new(epsilon)?, s.len())?;
    let rho = rho_pair(&tree, s, t)?;
    emit(None, format!("{}\n", fmt_f64(rho)).as_bytes())
}

fn run_rho_matrix(epsilon: f64, n: usize, format: Format, output: Option<&Path>) -> Result<()> {
    let tree = ZTree::build(&ChannelParam::new(epsilon)?, n)?;
    let matrix = build_rho_matrix(&tree)?;
    let bytes = match format {
        Format::Csv => {
            let mut text = String::from("s_index,s_signs,t_index,t_signs,rho\n");
            for u in 0..matrix.dim() {
                for v in u..matrix.dim() {
                    writeln!(
                        text,
                        "{u},{},{v},{},{}",
                        signs_of(u, n),
                        signs_of(v, n),
                        fmt_f64(matrix.get(u, v))
                    )
                    .unwrap();
                }
            }
            text.into_bytes()
        }
        Format::Json => {
            #[derive(Serialize)]
            struct MatrixOut<'a> {
                epsilon: f64,
                n: usize,
                layout: &'static str,
                values: &'a [f64],
            }
            json_bytes(&MatrixOut {
                epsilon,
                n,
                layout: "row-major-upper-triangle",
                values: matrix.triangle(),
            })
        }
        Format::Binary => {
            let mut bytes = Vec::new();
            matrix.write_to(&mut bytes)?;
            bytes
        }
    };
    emit(output, &bytes)
}

fn run_construct(
    epsilon: f64,
    n: usize,
    size: &SetSize,
    format: Format,
    output: Option<&Path>,
) -> Result<()> {
    let tree = ZTree::build(&ChannelParam::new(epsilon)?, n)?;
    let spec = spec_from_size(&tree, size)?;
    let z = tree.level(n);
    let bytes = match format {
        Format::Csv => {
            let mut text = String::from("index,signs,z\n");
            for &i in spec.info_set() {
                writeln!(text, "{i},{},{}", signs_of(i, n), fmt_f64(z[i])).unwrap();
            }
            text.into_bytes()
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Channel {
                index: usize,
                signs: String,
                z: f64,
            }
            #[derive(Serialize)]
            struct ConstructOut {
                epsilon: f64,
                n: usize,
                k: usize,
                rate: f64,
                channels: Vec<Channel>,
            }
            json_bytes(&ConstructOut {
                epsilon,
                n,
                k: spec.k(),
                rate: spec.rate(),
                channels: spec
                    .info_set()
                    .iter()
                    .map(|&i| Channel {
                        index: i,
                        signs: signs_of(i, n),
                        z: z[i],
                    })
                    .collect(),
            })
        }
        Format::Binary => unreachable!("rejected at resolve time"),
    };
    emit(output, &bytes)
}

fn opt_f64_csv(value: Option<f64>) -> String {
    value.map(fmt_f64).unwrap_or_default()
}

fn run_bounds(
    epsilon: f64,
    n: usize,
    size: &SetSize,
    exact: bool,
    delta: Option<f64>,
    format: Format,
    output: Option<&Path>,
) -> Result<()> {
    let param = ChannelParam::new(epsilon)?;
    let tree = ZTree::build(&param, n)?;
    let spec = spec_from_size(&tree, size)?;
    let rho = RhoEvaluator::new(&tree);
    let exact_value = if exact {
        Some(oracle::PatternEnumeration::new(&param, n)?.block_error(&spec)?)
    } else {
        None
    };
    let mut report = bounds_report(&spec, &tree, &rho, exact_value)?;
    if let Some(delta) = delta {
        let (lo, hi) = theorem3_sandwich(&tree, spec.rate(), delta)?;
        report.theorem3_lower = Some(lo);
        report.theorem3_upper = Some(hi);
    }
    let bytes = match format {
        Format::Csv => {
            let mut text = String::from(
                "epsilon,n,rate,k,union_upper,trivial_lower,ie_lower,exact,\
                 union_upper_clamped,ie_lower_clamped\n",
            );
            writeln!(
                text,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_f64(report.epsilon),
                report.n,
                fmt_f64(report.rate),
                report.k,
                fmt_f64(report.union_upper),
                fmt_f64(report.trivial_lower),
                fmt_f64(report.ie_lower),
                opt_f64_csv(report.exact),
                fmt_f64(report.union_upper_clamped),
                fmt_f64(report.ie_lower_clamped),
            )
            .unwrap();
            text.into_bytes()
        }
        Format::Json => json_bytes(&report),
        Format::Binary => unreachable!("rejected at resolve time"),
    };
    emit(output, &bytes)
}

fn run_table(
    epsilon: f64,
    n: usize,
    rates: &[f64],
    format: Format,
    output: Option<&Path>,
) -> Result<()> {
    let tree = ZTree::build(&ChannelParam::new(epsilon)?, n)?;
    let rho = RhoEvaluator::new(&tree);

    #[derive(Serialize)]
    struct Row {
        rate: f64,
        sum_z: f64,
        max_z: f64,
        ie_lower: f64,
    }

    let mut rows = Vec::with_capacity(rates.len());
    for &rate in rates {
        let spec = construct_info_set(&tree, info_set_size(n, rate)?)?;
        rows.push(Row {
            rate,
            sum_z: union_bound(&spec, &tree)?,
            max_z: trivial_lower(&spec, &tree)?,
            ie_lower: ie_lower(&spec, &tree, &rho)?,
        });
    }

    let bytes = match format {
        Format::Csv => {
            let mut text = String::from("rate,sum_z,max_z,ie_lower\n");
            for row in &rows {
                writeln!(
                    text,
                    "{},{},{},{}",
                    fmt_f64(row.rate),
                    fmt_f64(row.sum_z),
                    fmt_f64(row.max_z),
                    fmt_f64(row.ie_lower)
                )
                .unwrap();
            }
            text.into_bytes()
        }
        Format::Json => {
            #[derive(Serialize)]
            struct TableOut {
                epsilon: f64,
                n: usize,
                rows: Vec<Row>,
            }
            json_bytes(&TableOut { epsilon, n, rows })
        }
        Format::Binary => unreachable!("rejected at resolve time"),
    };
    emit(output, &bytes)
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

/// One verification check; `worst_margin` is the smallest slack to the
/// allowance (negative = failure).
#[derive(Debug, Serialize)]
pub struct VerifyCheck {
    pub name: &'static str,
    pub pass: bool,
    pub worst_margin: f64,
    pub checked: u64,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub epsilon: f64,
    pub n: usize,
    pub mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub pass: bool,
    pub checks: Vec<VerifyCheck>,
}

struct MarginTracker {
    name: &'static str,
    worst: f64,
    checked: u64,
}

impl MarginTracker {
    fn new(name: &'static str) -> MarginTracker {
        MarginTracker {
            name,
            worst: f64::INFINITY,
            checked: 0,
        }
    }

    fn note(&mut self, margin: f64) {
        self.worst = self.worst.min(margin);
        self.checked += 1;
    }

    fn finish(self) -> VerifyCheck {
        let worst = if self.checked == 0 { 0.0 } else { self.worst };
        VerifyCheck {
            name: self.name,
            pass: worst >= 0.0,
            worst_margin: worst,
            checked: self.checked,
        }
    }
}

/// Oracle-equivalence tolerance: recursion vs exhaustive enumeration.
pub const ORACLE_TOL: f64 = 1e-10;
/// Variance floor below which enumeration correlations are not compared.
pub const RHO_VARIANCE_FLOOR: f64 = 1e-12;

/// Exact-oracle verification: Z, covariance, and correlation against
/// exhaustive enumeration, the two-event identity, and bound bracketing
/// over every constructed code size.
pub fn verify_exact(epsilon: f64, n: usize) -> Result<VerifyReport> {
    let param = ChannelParam::new(epsilon)?;
    let tree = ZTree::build(&param, n)?;
    let enumeration = oracle::PatternEnumeration::new(&param, n)?;
    let stats = enumeration.stats();
    let rho_eval = RhoEvaluator::new(&tree);
    let channels = 1usize << n;

    let mut z_check = MarginTracker::new("z_matches_enumeration");
    for (u, &z) in tree.level(n).iter().enumerate() {
        z_check.note(ORACLE_TOL - (z - stats.z()[u]).abs());
    }

    let mut cov_check = MarginTracker::new("cov_matches_enumeration");
    let mut rho_check = MarginTracker::new("rho_matches_enumeration");
    for u in 0..channels {
        for v in u..channels {
            let s = SignSequence::from_index(u, n)?;
            let t = SignSequence::from_index(v, n)?;
            let cov = crate::correlation::cov_pair(&tree, s, t)?;
            cov_check.note(ORACLE_TOL - (cov - stats.cov(u, v)).abs());
            if stats.var(u) > RHO_VARIANCE_FLOOR && stats.var(v) > RHO_VARIANCE_FLOOR {
                let reference = stats.rho(u, v).expect("variances bounded away from zero");
                let rho = rho_eval.pair_indices(n, u, v)?;
                rho_check.note(ORACLE_TOL - (rho - reference).abs());
            }
        }
    }

    let mut two_event = MarginTracker::new("two_event_ie_identity");
    for u in 0..channels {
        for v in (u + 1)..channels {
            let spec = CodeSpec::new(epsilon, n, vec![u, v])?;
            let ie = ie_lower(&spec, &tree, &rho_eval)?;
            let exact = enumeration.block_error(&spec)?;
            two_event.note(ORACLE_TOL - (ie - exact).abs());
        }
    }

    let mut bracketing = MarginTracker::new("bounds_bracket_exact");
    for k in 1..=channels {
        let spec = construct_info_set(&tree, k)?;
        let exact = enumeration.block_error(&spec)?;
        let union = union_bound(&spec, &tree)?;
        let trivial = trivial_lower(&spec, &tree)?;
        let ie = ie_lower(&spec, &tree, &rho_eval)?;
        bracketing.note(exact - trivial + ORACLE_TOL);
        bracketing.note(exact - ie + ORACLE_TOL);
        bracketing.note(union.min(1.0) - exact + ORACLE_TOL);
    }

    let checks = vec![
        z_check.finish(),
        cov_check.finish(),
        rho_check.finish(),
        two_event.finish(),
        bracketing.finish(),
    ];
    Ok(VerifyReport {
        epsilon,
        n,
        mode: "exact",
        trials: None,
        seed: None,
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}

/// Variance floor for picking Monte Carlo spot-check pairs: a pair is only
/// informative if both channels actually fluctuate in the sample.
pub const MC_PAIR_VARIANCE_FLOOR: f64 = 1e-3;

/// Monte Carlo verification: empirical Z per channel, empirical ρ on
/// sampled pairs, and empirical block error for the rate-1/4 code, each
/// within four standard errors of the recursion (or the bound bracket).
pub fn verify_monte_carlo(
    epsilon: f64,
    n: usize,
    trials: u64,
    seed: u64,
    pair_count: usize,
) -> Result<VerifyReport> {
    let param = ChannelParam::new(epsilon)?;
    let tree = ZTree::build(&param, n)?;
    let rho_eval = RhoEvaluator::new(&tree);
    let pairs = sample_pairs(&tree, pair_count, seed, MC_PAIR_VARIANCE_FLOOR);
    let spec = construct_info_set(&tree, info_set_size(n, 0.25)?)?;
    let cfg = McConfig {
        param,
        depth: n,
        trials,
        seed,
    };
    let report = monte_carlo(&cfg, &pairs, Some(&spec))?;

    let mut z_check = MarginTracker::new("z_within_4se");
    for (u, est) in report.z.iter().enumerate() {
        let reference = tree.level(n)[u];
        let se = proportion_std_error(reference, trials);
        z_check.note(4.0 * se - (est.value - reference).abs());
    }

    let mut rho_check = MarginTracker::new("rho_within_4se");
    for pe in &report.pairs {
        let reference = rho_eval.pair_indices(n, pe.s, pe.t)?;
        let z_s = tree.level(n)[pe.s];
        let z_t = tree.level(n)[pe.t];
        let sd = (z_s * tree.zbar_level(n)[pe.s] * z_t * tree.zbar_level(n)[pe.t]).sqrt();
        let joint = reference * sd + z_s * z_t;
        let se = bernoulli_rho_estimate(joint, z_s, z_t, trials)
            .map(|e| e.std_error)
            .unwrap_or(0.0);
        match &pe.rho {
            Some(est) => rho_check.note(4.0 * se - (est.value - reference).abs()),
            None => rho_check.note(f64::NEG_INFINITY),
        }
    }

    let mut block_check = MarginTracker::new("block_error_within_bracket");
    let union = union_bound(&spec, &tree)?.min(1.0);
    let ie = ie_lower(&spec, &tree, &rho_eval)?.clamp(0.0, 1.0);
    let est = report.block_error.expect("info set was provided").value;
    let se = proportion_std_error(union, trials).max(proportion_std_error(ie, trials));
    block_check.note(est - (ie - 4.0 * se));
    block_check.note((union + 4.0 * se) - est);

    let checks = vec![z_check.finish(), rho_check.finish(), block_check.finish()];
    Ok(VerifyReport {
        epsilon,
        n,
        mode: "monte-carlo",
        trials: Some(trials),
        seed: Some(seed),
        pass: checks.iter().all(|c| c.pass),
        checks,
    })
}

fn run_verify(epsilon: f64, n: usize, mode: &VerifyMode, output: Option<&Path>) -> Result<i32> {
    let report = match mode {
        VerifyMode::Exact => verify_exact(epsilon, n)?,
        VerifyMode::MonteCarlo {
            trials,
            seed,
            sample_pairs,
        } => verify_monte_carlo(epsilon, n, *trials, *seed, *sample_pairs)?,
    };
    emit(output, &json_bytes(&report))?;
    Ok(if report.pass {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    })
}

#[allow(clippy::too_many_arguments)]
fn run_simulate(
    epsilon: f64,
    n: usize,
    trials: u64,
    seed: u64,
    size: Option<&SetSize>,
    pair_selection: &PairSelection,
    format: Format,
    output: Option<&Path>,
) -> Result<()> {
    let param = ChannelParam::new(epsilon)?;
    let tree = ZTree::build(&param, n)?;
    let spec = match size {
        Some(size) => Some(spec_from_size(&tree, size)?),
        None => None,
    };
    let pairs = match pair_selection {
        PairSelection::Explicit(pairs) => pairs.clone(),
        PairSelection::Sampled(count) => sample_pairs(&tree, *count, seed, 0.0),
        PairSelection::None => Vec::new(),
    };
    let cfg = McConfig {
        param,
        depth: n,
        trials,
        seed,
    };
    let report = monte_carlo(&cfg, &pairs, spec.as_ref())?;
    let bytes = match format {
        Format::Csv => {
            let mut text = String::from("index,signs,z_hat,std_error\n");
            for (i, est) in report.z.iter().enumerate() {
                writeln!(
                    text,
                    "{i},{},{},{}",
                    signs_of(i, n),
                    fmt_f64(est.value),
                    fmt_f64(est.std_error)
                )
                .unwrap();
            }
            text.into_bytes()
        }
        Format::Json => json_bytes(&report),
        Format::Binary => unreachable!("rejected at resolve time"),
    };
    emit(output, &bytes)
}

/// Executes a resolved configuration; returns the process exit code.
pub fn run(config: &RunConfig) -> Result<i32> {
    if let Some(threads) = config.threads {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match &config.command {
        CommandConfig::Zvec {
            epsilon,
            n,
            format,
            output,
        } => run_zvec(*epsilon, *n, *format, output.as_deref()).map(|()| EXIT_OK),
        CommandConfig::Rho { epsilon, s, t } => run_rho(*epsilon, *s, *t).map(|()| EXIT_OK),
        CommandConfig::RhoMatrix {
            epsilon,
            n,
            format,
            output,
        } => run_rho_matrix(*epsilon, *n, *format, output.as_deref()).map(|()| EXIT_OK),
        CommandConfig::Construct {
            epsilon,
            n,
            size,
            format,
            output,
        } => run_construct(*epsilon, *n, size, *format, output.as_deref()).map(|()| EXIT_OK),
        CommandConfig::Bounds {
            epsilon,
            n,
            size,
            exact,
            delta,
            format,
            output,
        } => run_bounds(
            *epsilon,
            *n,
            size,
            *exact,
            *delta,
            *format,
            output.as_deref(),
        )
        .map(|()| EXIT_OK),
        CommandConfig::Table {
            epsilon,
            n,
            rates,
            format,
            output,
        } => run_table(*epsilon, *n, rates, *format, output.as_deref()).map(|()| EXIT_OK),
        CommandConfig::Verify {
            epsilon,
            n,
            mode,
            output,
        } => run_verify(*epsilon, *n, mode, output.as_deref()),
        CommandConfig::Simulate {
            epsilon,
            n,
            trials,
            seed,
            size,
            pair_selection,
            format,
            output,
        } => run_simulate(
            *epsilon,
            *n,
            *trials,
            *seed,
            size.as_ref(),
            pair_selection,
            *format,
            output.as_deref(),
        )
        .map(|()| EXIT_OK),
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Capacity { .. } | Error::Io(_) => EXIT_CAPACITY,
        _ => EXIT_USAGE,
    }
}

/// Binary entry point: parse, resolve, run, map errors to exit codes.
pub fn run_cli() -> i32 {
    let args = match CliArgs::try_parse() {
        Ok(args) => args,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            // clap renders help to stdout and errors to stderr on its own.
            let _ = err.print();
            return code;
        }
    };
    let config = match resolve_config(args) {
        Ok(config) => config,
        Err(err) => {
            eprintln!("error: {err}");
            return EXIT_USAGE;
        }
    };
    match run(&config) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fmt_f64_has_17_significant_digits() {
        assert_eq!(fmt_f64(0.75), "7.5000000000000000e-1");
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn file_config_parse_and_precedence() {
        let file = FileConfig::parse(
            "# a comment\nepsilon = 0.25\nn = 3\nseed = 9 # trailing comment\nseed = 11\n",
        )
        .unwrap();
        assert_eq!(file.value::<f64>("epsilon").unwrap(), Some(0.25));
        assert_eq!(file.value::<usize>("n").unwrap(), Some(3));
        // Later entries win, like repeated flags.
        assert_eq!(file.value::<u64>("seed").unwrap(), Some(11));
        // Flag beats file.
        assert_eq!(resolve(Some(0.5f64), &file, "epsilon").unwrap(), Some(0.5));
        assert_eq!(resolve(None::<f64>, &file, "epsilon").unwrap(), Some(0.25));
    }

    #[test]
    fn file_config_rejects_unknown_keys() {
        assert!(FileConfig::parse("epsilonn = 0.5").is_err());
        assert!(FileConfig::parse("epsilon 0.5").is_err());
    }

    #[test]
    fn pair_list_parsing() {
        assert_eq!(
            parse_pair_list("0:3, 1:2", 4).unwrap(),
            vec![(0, 3), (1, 2)]
        );
        assert!(parse_pair_list("0:4", 4).is_err());
        assert!(parse_pair_list("0-1", 4).is_err());
    }

    #[test]
    fn rates_parsing() {
        assert_eq!(parse_rates("0.1,0.2 ,0.3").unwrap(), vec![0.1, 0.2, 0.3]);
        assert!(parse_rates("0.1,x").is_err());
    }

    #[test]
    fn sampled_pairs_are_deterministic_and_distinct() {
        let tree = ZTree::build(&ChannelParam::new(0.5).unwrap(), 6).unwrap();
        let a = sample_pairs(&tree, 40, 7, 0.0);
        let b = sample_pairs(&tree, 40, 7, 0.0);
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        let set: std::collections::HashSet<_> = a.iter().collect();
        assert_eq!(set.len(), 40);
        for &(u, v) in &a {
            assert!(u < v);
        }
        // Different seed, different sample.
        assert_ne!(sample_pairs(&tree, 40, 8, 0.0), a);
    }

    #[test]
    fn sampled_pairs_respect_variance_floor() {
        let tree = ZTree::build(&ChannelParam::new(0.5).unwrap(), 8).unwrap();
        let pairs = sample_pairs(&tree, 100, 1, MC_PAIR_VARIANCE_FLOOR);
        assert_eq!(pairs.len(), 100);
        for &(u, v) in &pairs {
            for idx in [u, v] {
                let var = tree.level(8)[idx] * tree.zbar_level(8)[idx];
                assert!(var >= MC_PAIR_VARIANCE_FLOOR);
            }
        }
    }

    #[test]
    fn verify_exact_passes_on_small_instances() {
        for &eps in &[0.3, 0.5] {
            let report = verify_exact(eps, 3).unwrap();
            assert!(report.pass, "{report:?}");
            assert_eq!(report.mode, "exact");
        }
    }

    #[test]
    fn verify_exact_needs_small_depth() {
        assert!(matches!(verify_exact(0.5, 5), Err(Error::Capacity { .. })));
    }

    #[test]
    fn verify_monte_carlo_passes_small() {
        let report = verify_monte_carlo(0.5, 4, 150_000, 3, 20).unwrap();
        assert!(report.pass, "{report:?}");
        assert_eq!(report.mode, "monte-carlo");
    }

    proptest! {
        #[test]
        fn fmt_f64_round_trips(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let parsed: f64 = fmt_f64(x).parse().unwrap();
            prop_assert_eq!(parsed.to_bits(), x.to_bits());
        }
    }
}
