use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fhesift::image::{parse_pgm, write_pgm};
use fhesift::pipeline::keypoint::Site;
use fhesift::pipeline::oracle::run_oracle;
use fhesift::pipeline::{diff_keypoints, format_keypoints, parse_keypoints, Mode, RunConfig};
use fhesift::{synth, Error, Result};

mod report;

use report::RunReport;

#[derive(Parser)]
#[command(
    name = "fhesift",
    version,
    about = "SIFT-lite keypoints over simulated encrypted images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect keypoints in a PGM image.
    Run {
        #[arg(long)]
        image: PathBuf,
        /// `key = value` configuration; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// plaintext, interactive or deferred; overrides the config.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare two keypoint files; the first is the reference.
    Diff {
        reference: PathBuf,
        candidate: PathBuf,
        /// Sites (`x y octave scale` per line) to ignore on both sides.
        #[arg(long)]
        exclude: Option<PathBuf>,
    },
    /// Pretty-print a machine-readable run report.
    Report { file: PathBuf },
    /// Write the bundled synthetic and natural test images.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|_| Error::Io(format!("{}: not UTF-8", path.display())))
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, data).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn parse_sites(text: &str) -> Result<Vec<Site>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let f: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                offset: start,
                message: "expected `x y octave scale`".into(),
            })?;
        match f[..] {
            [] => {}
            [x, y, octave, scale] => out.push(Site {
                octave,
                y,
                x,
                scale,
            }),
            _ => {
                return Err(Error::Parse {
                    offset: start,
                    message: "expected `x y octave scale`".into(),
                })
            }
        }
    }
    Ok(out)
}

fn format_sites(sites: &[Site]) -> String {
    sites
        .iter()
        .map(|s| format!("{} {} {} {}\n", s.x, s.y, s.octave, s.scale))
        .collect()
}

fn run(
    image: &Path,
    config: Option<&Path>,
    mode: Option<&str>,
    out: &Path,
    seed: u64,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::parse(&read_text(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(m) = mode {
        cfg.pipeline.mode = m.parse()?;
    }
    let img = parse_pgm(&read(image)?)?;
    let result = fhesift::pipeline::run_pipeline(&img, &cfg, seed)?;

    let diff = if cfg.pipeline.mode == Mode::Plaintext {
        None
    } else {
        let reference = run_oracle(&img, &cfg.pipeline)?;
        Some(diff_keypoints(
            &reference.keypoints,
            &result.keypoints,
            &reference.exclusions,
        ))
    };
    let rep = RunReport::new(
        &result,
        seed,
        (img.width, img.height),
        cfg.sim.depth_budget,
        diff,
    );

    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    write(
        &out.join("keypoints.txt"),
        format_keypoints(&result.keypoints),
    )?;
    write(&out.join("report.kv"), rep.to_kv())?;
    write(&out.join("report.txt"), rep.pretty())?;
    if let Some(t) = &result.trace {
        write(&out.join("trace.txt"), t.to_text())?;
    }
    if cfg.pipeline.mode == Mode::Plaintext {
        write(
            &out.join("exclusions.txt"),
            format_sites(&result.exclusions),
        )?;
    }
    print!("{}", rep.pretty());
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            image,
            config,
            mode,
            out,
            seed,
        } => run(&image, config.as_deref(), mode.as_deref(), &out, seed),
        Command::Diff {
            reference,
            candidate,
            exclude,
        } => {
            let a = parse_keypoints(&read_text(&reference)?)?;
            let b = parse_keypoints(&read_text(&candidate)?)?;
            let skip = match exclude {
                Some(p) => parse_sites(&read_text(&p)?)?,
                None => Vec::new(),
            };
            print!("{}", diff_keypoints(&a, &b, &skip).to_text());
            Ok(())
        }
        Command::Report { file } => {
            print!("{}", RunReport::from_kv(&read_text(&file)?)?.pretty());
            Ok(())
        }
        Command::Synth { out, size } => {
            if size < 16 {
                return Err(Error::InvalidArgument("size must be at least 16".into()));
            }
            fs::create_dir_all(&out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
            for (name, img) in synth::synthetic_set(size) {
                write(&out.join(format!("{name}.pgm")), write_pgm(&img))?;
            }
            write(
                &out.join("natural.pgm"),
                write_pgm(&synth::natural(size, 1)),
            )
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::DepthExhausted { .. } => 2,
        Error::DeferralUnsupported(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
