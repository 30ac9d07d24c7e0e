//! The `rwf` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::analyze::{analyze, save_csv};
use crate::checkpoint::load_checkpoint;
use crate::config::RunConfig;
use crate::dataset::index_dataset;
use crate::error::{Result, RwfError};
use crate::image_io::{load_image, save_image};
use crate::report;
use crate::run::train_run;
use crate::verify::run_checks;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rwf", version, about = "Routed-window image restoration: train, infer, analyze, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model on paired images under DATA/input and DATA/target.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore one PNG, or every PNG in a directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Attention distances per scale, block, branch and head, as CSV.
    AnalyzeAttn {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter and MAC counts of a configuration.
    Count {
        #[arg(long)]
        config: PathBuf,
        /// Input size as H,W.
        #[arg(long, value_parser = parse_hw)]
        hw: (usize, usize),
    },
    /// Run the oracle and property checks.
    Verify {
        /// Only checks whose name contains this text.
        #[arg(long)]
        filter: Option<String>,
        /// Include the slow checks.
        #[arg(long)]
        full: bool,
    },
}

fn parse_hw(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(',').ok_or("expected H,W")?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    let (h, w) = (p(h)?, p(w)?);
    if h == 0 || w == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((h, w))
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| RwfError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn infer(ckpt: &Path, input: &Path, output: &Path) -> Result<String> {
    let state = load_checkpoint(ckpt)?;
    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        std::fs::create_dir_all(output).map_err(|e| RwfError::io(output, e))?;
        png_files(input)?
            .into_iter()
            .map(|p| {
                let out = output.join(p.file_name().expect("listed file"));
                (p, out)
            })
            .collect()
    } else {
        vec![(input.to_path_buf(), output.to_path_buf())]
    };
    for (src, dst) in &jobs {
        let img = load_image(src)?;
        let restored = rwf_core::train::restore(&state, &img)?;
        save_image(&restored, dst)?;
    }
    Ok(format!("restored {} image(s)", jobs.len()))
}

fn execute(cmd: Command, out: &mut impl std::io::Write) -> Result<()> {
    let say = |out: &mut dyn std::io::Write, msg: String| {
        let _ = writeln!(out, "{msg}");
    };
    match cmd {
        Command::Train { config, data, out: dir } => {
            let cfg = RunConfig::load(&config)?;
            let index = index_dataset(&data)?;
            let pairs = index.load()?;
            let s = train_run(&cfg, &pairs, &dir)?;
            let (first, last) = (s.log.first(), s.log.last());
            say(out, format!("model {} lambda {} alpha {}", cfg.model.name, cfg.train.weights.lambda, cfg.train.weights.alpha));
            if let (Some(a), Some(b)) = (first, last) {
                say(out, format!("steps {} loss {:.6} -> {:.6}", b.step, a.loss.total, b.loss.total));
            }
            say(
                out,
                format!(
                    "psnr identity {:.2} dB, initial {:.2} dB, final {:.2} dB",
                    s.psnr_identity, s.psnr_initial, s.psnr_final
                ),
            );
            say(out, format!("checkpoint {}", s.checkpoint.display()));
        }
        Command::Infer { ckpt, input, output } => say(out, infer(&ckpt, &input, &output)?),
        Command::AnalyzeAttn { ckpt, input, out: csv } => {
            let state = load_checkpoint(&ckpt)?;
            let img = load_image(&input)?;
            let rep = analyze(&state, &img)?;
            save_csv(&rep, &csv)?;
            say(out, format!("{} entries, normalized distance {}", rep.rows.len(), rep.aggregate));
        }
        Command::Count { config, hw } => {
            let cfg = RunConfig::load(&config)?;
            let s = report::count(&cfg.model, hw.0, hw.1)?;
            say(out, report::render(&cfg.model, &s));
        }
        Command::Verify { filter, full } => {
            let (passed, failed) = run_checks(filter.as_deref(), full, out).map_err(|e| RwfError::io("<stdout>", e))?;
            say(out, format!("{passed} passed, {failed} failed"));
            if passed + failed == 0 {
                return Err(RwfError::Config(format!("no check matches {:?}", filter.unwrap_or_default())));
            }
            if failed > 0 {
                return Err(RwfError::Verification(format!("{failed} check(s) failed")));
            }
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Errors go to standard error.
pub fn run_cli<I, T>(argv: I, out: &mut impl std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
