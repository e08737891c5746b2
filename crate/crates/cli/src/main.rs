use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use lesionseg_core::dataset::Manifest;
use lesionseg_core::phantom::{generate_phantom_set, write_phantom_set, PhantomSetSpec};
use lesionseg_core::runner::{load_report, restate, run_experiment, ExperimentConfig, SegmenterBinding, SystemSpec};
use lesionseg_core::segment::plugin::{serve_plugin, EchoPlugin, PluginHandler, RefineRequest, ReferencePlugin};
use lesionseg_core::segment::wire::Handshake;
use lesionseg_core::split::{split_dataset, Split, SplitSpec};
use lesionseg_core::volume::SliceWindow;
use lesionseg_core::{Dims, Plane, Topology};
use lesionseg_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "lesionseg", version, about = "Interactive lesion segmentation with a simulated expert")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with a manifest.
    Phantom {
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        slices: usize,
        #[arg(long, default_value_t = 2)]
        max_scans_per_patient: usize,
    },
    /// Patient-grouped, area-stratified train/test split.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_frac: f64,
        #[arg(long, default_value_t = 5)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a system over the test scans and write a report.
    Run {
        /// Experiment file; the other flags are ignored when given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_topology)]
        system: Option<Topology>,
        #[arg(long, default_value_t = 0)]
        iterations: usize,
        #[arg(long, default_value = "threshold")]
        segmenter: String,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Defaults to the manifest recorded in the split file.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarise a report directory.
    Eval {
        #[arg(long)]
        report: PathBuf,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Speak the plug-in protocol on stdin/stdout.
    #[command(hide = true)]
    PluginServe {
        #[arg(long, value_enum, default_value = "reference")]
        mode: PluginMode,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PluginMode {
    Reference,
    Echo,
    /// Answers with a plane one row short.
    BadShape,
    /// Completes the handshake and never answers.
    Silent,
    /// Never sends a handshake.
    NoHandshake,
}

fn parse_topology(s: &str) -> Result<Topology, String> {
    s.parse()
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom {
            count,
            seed,
            out,
            height,
            width,
            slices,
            max_scans_per_patient,
        } => {
            let mut spec = PhantomSetSpec {
                count,
                max_scans_per_patient,
                ..Default::default()
            };
            spec.scan.dims = Dims::new(height, width, slices);
            let set = generate_phantom_set(seed, &spec)?;
            let manifest = write_phantom_set(&out, &set)?;
            println!(
                "wrote {} scans to {}",
                manifest.entries.len(),
                out.join("manifest.json").display()
            );
        }
        Command::Split {
            manifest,
            test_frac,
            bins,
            seed,
            out,
        } => {
            let m = Manifest::load(&manifest)?;
            let spec = SplitSpec {
                test_fraction: test_frac,
                n_bins: bins,
                seed,
            };
            let mut split = split_dataset(&m.entries, &spec)?;
            split.manifest = Some(std::path::absolute(&manifest)?);
            split.save(&out)?;
            println!(
                "{} train / {} test scans -> {}",
                split.train.len(),
                split.test.len(),
                out.display()
            );
        }
        Command::Run {
            config,
            system,
            iterations,
            segmenter,
            split,
            manifest,
            seed,
            out,
        } => {
            let cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => {
                    let topology = system.context("--system is required without --config")?;
                    let segmenter: SegmenterBinding = segmenter.parse()?;
                    let manifest = match (manifest, &split) {
                        (Some(m), _) => m,
                        (None, Some(s)) => Split::load(s)?
                            .manifest
                            .context("split file records no manifest; pass --manifest")?,
                        (None, None) => bail!("pass --split or --manifest"),
                    };
                    ExperimentConfig {
                        manifest,
                        split,
                        seed,
                        system: SystemSpec::from_cli(topology, iterations, segmenter),
                        session: Default::default(),
                        expert: Default::default(),
                        segmenters: Default::default(),
                    }
                }
            };
            let report = run_experiment(&cfg)?;
            report.write(&out)?;
            print_summary(&out)?;
            if report.summary.partial {
                eprintln!("warning: {} scan(s) failed; see per_scan.csv", report.summary.n_failed);
            }
        }
        Command::Eval { report } => print_summary(&report)?,
        Command::Serve {
            addr,
            manifest,
            seed,
            log_dir,
        } => {
            let m = Manifest::load(&manifest)?;
            if let Some(dir) = &log_dir {
                std::fs::create_dir_all(dir)?;
            }
            let state = AppState::new(
                m,
                ServiceConfig {
                    seed,
                    log_dir,
                    ..Default::default()
                },
            );
            tokio::runtime::Runtime::new()?.block_on(lesionseg_service::serve(addr, state))?;
        }
        Command::PluginServe { mode } => plugin_serve(mode)?,
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn print_summary(dir: &Path) -> Result<()> {
    let r = load_report(dir)?;
    let s = &r.summary;
    println!("{} scans ({} failed), {} iterations, {}", s.n_scans, s.n_failed, s.iterations, s.topology);
    if !r.rows.is_empty() && r.rows.iter().any(|row| row.iou.is_some()) {
        let stats = restate(&r)?;
        if Some(stats.mean) != s.mean || Some(stats.median) != s.median {
            bail!("summary.json disagrees with per_scan.csv");
        }
    }
    println!(
        "IoU mean {}  median {}  Q1 {}  Q3 {}",
        fmt_opt(s.mean),
        fmt_opt(s.median),
        fmt_opt(s.q1),
        fmt_opt(s.q3)
    );
    let f = &s.feedback;
    println!(
        "feedback score {:.2}  (positive {}, negative {}, erase {})",
        f.score, f.n_pos, f.n_neg, f.n_erase
    );
    if !s.histogram.is_empty() {
        println!("histogram {:?}", s.histogram);
    }
    if !r.curves.is_empty() {
        println!("iteration  mean_iou  score");
        for c in &r.curves {
            println!("{:>9}  {:.4}    {:.2}", c.iteration, c.mean_iou, c.feedback_score);
        }
    }
    Ok(())
}

struct BadShape;

impl PluginHandler for BadShape {
    fn predict(&mut self, window: SliceWindow) -> Result<Plane<f32>, String> {
        let s = window.shape();
        Ok(Plane::filled(lesionseg_core::Shape::new(s.height.saturating_sub(1), s.width), 0.0))
    }

    fn refine(&mut self, request: RefineRequest) -> Result<Plane<f32>, String> {
        self.predict(request.window)
    }
}

fn plugin_serve(mode: PluginMode) -> Result<()> {
    let stdin = std::io::stdin().lock();
    let stdout = std::io::stdout().lock();
    match mode {
        PluginMode::Reference => serve_plugin(stdin, stdout, &mut ReferencePlugin::default())?,
        PluginMode::Echo => serve_plugin(stdin, stdout, &mut EchoPlugin)?,
        PluginMode::BadShape => serve_plugin(stdin, stdout, &mut BadShape)?,
        PluginMode::Silent => {
            let mut out = stdout;
            lesionseg_core::segment::wire::write_handshake(&mut out, &Handshake::full())?;
            std::io::copy(&mut { stdin }, &mut std::io::sink())?;
        }
        PluginMode::NoHandshake => {
            std::io::copy(&mut { stdin }, &mut std::io::sink())?;
        }
    }
    Ok(())
}
