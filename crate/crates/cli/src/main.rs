use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cvl::config::{preset, ExperimentConfig, PRESETS};
use cvl::experiment::{
    analyze_manifest, theory, verify_covariance, write_analysis, write_simulation, write_theory,
};
use cvl::io::read_covariance;
use cvl::nullifier::Method;

#[derive(Parser)]
#[command(name = "cvl", version, about = "Simulate, analyze and verify EOM-generated CV cluster states")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in parameter set.
    #[arg(long)]
    preset: Option<String>,
    /// Override the EOM-on run count per quadrature configuration.
    #[arg(long)]
    runs: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the adjacency threshold.
    #[arg(long)]
    threshold: Option<f64>,
}

impl Source {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(p), _) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            (None, Some(name)) => preset(name)?,
            (None, None) => bail!("one of --config or --preset is required (presets: {})", PRESETS.join(", ")),
        };
        if let Some(r) = self.runs {
            cfg.runs = r;
            if cfg.eom_off_runs.is_some_and(|o| o > r) {
                cfg.eom_off_runs = Some(r);
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threshold {
            cfg.analysis.threshold = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Matrix,
    Lockin,
    Both,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Matrix => vec![Method::Matrix],
            MethodArg::Lockin => vec![Method::Lockin],
            MethodArg::Both => vec![Method::Matrix, Method::Lockin],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write one trace file per run plus a manifest.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Covariance, nullifier reports and spectra from a manifest.
    Analyze {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        method: MethodArg,
    },
    /// Analytic covariance, nullifiers, V/U and error vector.
    Theory {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a covariance's adjacency against the lattice implied by a config.
    Verify {
        covariance: PathBuf,
        #[command(flatten)]
        source: Source,
        /// Also write the structure report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a preset as an editable config.
    Preset { name: String },
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("CVL_THREADS") {
        let n: usize = v.parse().with_context(|| format!("CVL_THREADS={v:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn list(out: &Path, files: &[String]) {
    for f in files {
        println!("  {}", out.join(f).display());
    }
}

/// Ok(true) on success or verification pass, Ok(false) on verification fail.
fn run(cli: Cli) -> Result<bool> {
    init_threads()?;
    match cli.command {
        Command::Simulate { source, out } => {
            let cfg = source.load()?;
            let m = write_simulation(&cfg, &out)?;
            println!("wrote {} trace files and manifest to {}", m.runs.len(), out.display());
        }
        Command::Analyze { manifest, out, method } => {
            let (res, cfg) = analyze_manifest(&manifest)?;
            let files = write_analysis(&res, &cfg, &out, &method.methods())?;
            println!("delay {:.3} ns ({})", res.summary.delay_s * 1e9, res.summary.delay_source);
            for n in &res.summary.notes {
                println!("note: {n}");
            }
            list(&out, &files);
        }
        Command::Theory { source, out } => {
            let cfg = source.load()?;
            let t = theory(&cfg)?;
            let files = write_theory(&t, &cfg, &out)?;
            let s = &t.summary;
            println!(
                "error vector max {:.4}, U off-diagonal ratio {:.4} -> {:.4}",
                s.error_vector_max, s.offdiag_ratio_before_glu, s.offdiag_ratio_after_glu
            );
            list(&out, &files);
        }
        Command::Verify { covariance, source, out } => {
            let cfg = source.load()?;
            let (sigma, layout) = read_covariance(&covariance)?;
            let rep = verify_covariance(&sigma, &layout, &cfg, cfg.analysis.threshold)?;
            println!(
                "{}: {} expected edges, {} matched, {} missing, {} extraneous ({:.2}%), {} traceback",
                if rep.pass { "PASS" } else { "FAIL" },
                rep.expected_edges,
                rep.matched.len(),
                rep.missing.len(),
                rep.extraneous.len(),
                100.0 * rep.extraneous_fraction(),
                rep.traceback.len()
            );
            for e in rep.extraneous.iter().take(20) {
                println!("  extraneous {}-{} weight {:.4}", e.a, e.b, e.weight);
            }
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&rep)? + "\n")?;
            }
            return Ok(rep.pass);
        }
        Command::Preset { name } => print!("{}", preset(&name)?.to_json()?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
