//! Global settings. Precedence: flags, then `VMSHIELD_*` environment
//! variables (both handled by clap), then the config file, then defaults.

use std::fs;
use std::path::Path;

use log::LevelFilter;
use serde::Deserialize;

use crate::args::{Format, GlobalArgs};
use crate::error::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub format: Option<Format>,
    pub verbosity: Option<String>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::parse(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalConfig {
    pub format: Format,
    pub level: LevelFilter,
    pub seed: Option<u64>,
}

impl GlobalConfig {
    pub fn resolve(args: &GlobalArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let file_level = match &file.verbosity {
            Some(v) => Some(v.parse::<LevelFilter>().map_err(|_| CliError::Usage(format!("config verbosity {v:?} is not a log level")))?),
            None => None,
        };
        let mut level = args.verbosity.or(file_level).unwrap_or(LevelFilter::Warn);
        if args.quiet {
            level = LevelFilter::Error;
        } else if args.verbose > 0 {
            level = bump(LevelFilter::Warn, args.verbose);
        }
        Ok(GlobalConfig {
            format: args.format.or(file.format).unwrap_or_default(),
            level,
            seed: args.seed.or(file.seed),
        })
    }
}

fn bump(base: LevelFilter, by: u8) -> LevelFilter {
    let levels = LevelFilter::iter().collect::<Vec<_>>();
    let at = levels.iter().position(|l| *l == base).unwrap_or(0);
    levels[(at + by as usize).min(levels.len() - 1)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn args() -> GlobalArgs {
        GlobalArgs { format: None, verbosity: None, verbose: 0, quiet: false, seed: None, config: None }
    }

    #[test]
    fn defaults() {
        let c = GlobalConfig::resolve(&args()).unwrap();
        assert_eq!(c, GlobalConfig { format: Format::Json, level: LevelFilter::Warn, seed: None });
    }

    #[test]
    fn flags_beat_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "format = \"table\"\nverbosity = \"debug\"\nseed = 9").unwrap();
        let from_file = GlobalArgs { config: Some(f.path().to_path_buf()), ..args() };
        let c = GlobalConfig::resolve(&from_file).unwrap();
        assert_eq!(c, GlobalConfig { format: Format::Table, level: LevelFilter::Debug, seed: Some(9) });

        let flagged = GlobalArgs { format: Some(Format::Csv), seed: Some(1), quiet: true, ..from_file };
        let c = GlobalConfig::resolve(&flagged).unwrap();
        assert_eq!(c, GlobalConfig { format: Format::Csv, level: LevelFilter::Error, seed: Some(1) });
    }

    #[test]
    fn verbose_counts() {
        assert_eq!(GlobalConfig::resolve(&GlobalArgs { verbose: 1, ..args() }).unwrap().level, LevelFilter::Info);
        assert_eq!(GlobalConfig::resolve(&GlobalArgs { verbose: 9, ..args() }).unwrap().level, LevelFilter::Trace);
    }

    #[test]
    fn bad_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "colour = 1").unwrap();
        let err = GlobalConfig::resolve(&GlobalArgs { config: Some(f.path().to_path_buf()), ..args() }).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
