use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use metabeam_harness::ablation::frequency_ablation;
use metabeam_harness::sandbox::sandbox_sweep;
use metabeam_harness::{run_experiment, summarize_dir, AblationConfig, ExperimentConfig, SandboxConfig};

#[derive(Parser)]
#[command(name = "metabeam", version, about = "Beam-search planning experiments for an aerial manipulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the episode count.
    #[arg(long)]
    episodes: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one method variant over every configured seed.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Sweep reference frequencies under the heuristic beam rule.
    AblateFrequency {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fixed-beam tracking table over the sandbox reference shapes.
    SandboxSweep {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Recompute a run summary from its episodes.csv files.
    Metrics { run_dir: PathBuf },
}

fn apply(o: &Overrides, seeds: &mut Vec<u64>, episodes: &mut usize, out: &mut PathBuf) {
    if let Some(s) = o.seed {
        *seeds = vec![s];
    }
    if let Some(e) = o.episodes {
        *episodes = e;
    }
    if let Some(p) = &o.out {
        *out = p.clone();
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            apply(&overrides, &mut cfg.seeds, &mut cfg.episodes, &mut cfg.out);
            let s = run_experiment(&cfg)?;
            println!(
                "{} seeds, final return {:.3} ± {:.3}, tracking efficiency {:.2}%",
                s.seeds.len(),
                s.mean_final_return,
                s.std_final_return,
                s.mean_tracking_efficiency
            );
            println!("wrote {}", cfg.out.display());
        }
        Command::AblateFrequency { config, overrides } => {
            let mut cfg = AblationConfig::load(&config)?;
            apply(&overrides, &mut cfg.seeds, &mut cfg.episodes, &mut cfg.out);
            let r = frequency_ablation(&cfg)?;
            println!("frequency  mean_B  mean_D  tracking%");
            for row in &r.rows {
                println!("{:9.2}  {:6.3}  {:6.3}  {:9.1}", row.frequency, row.mean_b, row.mean_d, row.tracking_pct);
            }
            let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:+.3}"));
            println!("rho_B = {}, rho_D = {}, eps_ref = {:.4}", fmt(r.rho_b), fmt(r.rho_d), r.eps_ref);
        }
        Command::SandboxSweep { config, overrides } => {
            let mut cfg = SandboxConfig::load(&config)?;
            apply(&overrides, &mut cfg.seeds, &mut cfg.episodes, &mut cfg.out);
            let rows = sandbox_sweep(&cfg)?;
            println!("curve            B  D  tracking%  efficiency%");
            for r in &rows {
                println!("{:<15}  {}  {}  {:9.1}  {:11.2}", r.curve, r.b, r.d, r.tracking_pct, r.search_efficiency);
            }
        }
        Command::Metrics { run_dir } => {
            let s = summarize_dir(&run_dir)?;
            let json = serde_json::to_string_pretty(&s)?;
            std::fs::write(run_dir.join("metrics.json"), &json)
                .with_context(|| format!("writing into {}", run_dir.display()))?;
            println!("{json}");
        }
    }
    Ok(())
}
