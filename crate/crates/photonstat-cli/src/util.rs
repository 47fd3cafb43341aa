//! Shared plumbing for the command implementations: the two-tier error
//! type behind the process exit codes, output directory resolution,
//! declarative config loading, and photon stream input handling.
//!
//! Exit semantics are part of the interface. Anything wrong with how the
//! tool was invoked (unparseable flags, malformed or unknown config keys,
//! missing required parameters) is a usage error and exits with code 2.
//! Anything that goes wrong while computing (invalid physics parameters,
//! unreadable data files, diverged fits) exits with code 1.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use photonstat::io;
use photonstat::synth::PhotonStream;
use serde::de::DeserializeOwned;

pub enum CliError {
    /// The invocation itself is wrong; exits with code 2.
    Usage(String),
    /// The invocation was fine but the computation failed; exits with code 1.
    Run(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl From<photonstat::Error> for CliError {
    fn from(err: photonstat::Error) -> Self {
        CliError::Run(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Run(err.to_string())
    }
}

pub fn usage(message: impl Display) -> CliError {
    CliError::Usage(message.to_string())
}

/// Prints one stable machine-readable summary line.
pub fn kv(key: &str, value: impl Display) {
    println!("{key}={value}");
}

/// Prints a summary line with a fixed-precision float, flattening the
/// negative zero that rounding a tiny negative residue would produce.
pub fn kvf(key: &str, value: f64, decimals: usize) {
    let mut text = format!("{value:.decimals$}");
    if text.starts_with('-') && text[1..].bytes().all(|b| b == b'0' || b == b'.') {
        text.remove(0);
    }
    println!("{key}={text}");
}

/// Output directory precedence: --out-dir flag, then the PHOTONSTAT_OUT_DIR
/// environment variable, then the working directory.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("PHOTONSTAT_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Joins a relative output name onto the output directory, creating the
/// directory on first use. Absolute names bypass the directory.
pub fn out_path(out_dir: &Path, name: &Path) -> CliResult<PathBuf> {
    if name.is_absolute() {
        return Ok(name.to_path_buf());
    }
    std::fs::create_dir_all(out_dir)?;
    Ok(out_dir.join(name))
}

/// Loads a declarative config file, or the type's defaults when no file was
/// given. Unknown keys and type mismatches are usage errors.
pub fn load_config<T>(path: Option<&Path>) -> CliResult<T>
where
    T: DeserializeOwned + Default,
{
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|err| usage(format!("cannot read config {}: {err}", path.display())))?;
    toml::from_str(&text).map_err(|err| usage(format!("config {}: {err}", path.display())))
}

/// Resolves a required parameter: explicit flag wins, then the config file.
pub fn require<T>(name: &str, flag: Option<T>, config: Option<T>) -> CliResult<T> {
    flag.or(config)
        .ok_or_else(|| usage(format!("missing required parameter --{name} (or config key)")))
}

/// Resolves an optional parameter with a default: flag, config, default.
pub fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

/// Reads every stream in a timestamp file. `.phst` files are the binary
/// format and hold one stream; anything else is parsed as CSV.
pub fn load_streams(path: &Path) -> CliResult<Vec<PhotonStream>> {
    let binary = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("phst"));
    if binary {
        Ok(vec![io::read_stream_binary(path)?])
    } else {
        Ok(io::read_streams_csv(path)?)
    }
}

/// Reads a file expected to hold exactly one stream.
pub fn load_single_stream(path: &Path) -> CliResult<PhotonStream> {
    let mut streams = load_streams(path)?;
    if streams.len() != 1 {
        return Err(usage(format!(
            "{} holds {} channels; pass a single-channel file, or use --input to take both detector channels from one file",
            path.display(),
            streams.len()
        )));
    }
    Ok(streams.remove(0))
}

/// Resolves the detector pair for a correlation: either one `--input` file
/// carrying both channels, or separate `--a` and `--b` files.
pub fn load_stream_pair(
    input: Option<&Path>,
    a: Option<&Path>,
    b: Option<&Path>,
) -> CliResult<(PhotonStream, PhotonStream)> {
    match (input, a, b) {
        (Some(path), None, None) => {
            let mut streams = load_streams(path)?;
            if streams.len() < 2 {
                return Err(usage(format!(
                    "{} holds {} channel(s); a correlation needs two",
                    path.display(),
                    streams.len()
                )));
            }
            streams.sort_by_key(|s| s.channel_id());
            let b = streams.swap_remove(1);
            let a = streams.swap_remove(0);
            Ok((a, b))
        }
        (None, Some(path_a), Some(path_b)) => {
            Ok((load_single_stream(path_a)?, load_single_stream(path_b)?))
        }
        _ => Err(usage(
            "pass either --input FILE (both channels) or --a FILE and --b FILE",
        )),
    }
}

/// Converts a rate quoted per second at the interface to the per-picosecond
/// rate used internally.
pub fn per_s_to_per_ps(rate_per_s: f64) -> f64 {
    rate_per_s * 1e-12
}

pub fn per_ps_to_per_s(rate_per_ps: f64) -> f64 {
    rate_per_ps * 1e12
}
