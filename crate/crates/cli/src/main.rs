use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use wqdil::archive::GridArchive;
use wqdil::config::ExperimentConfig;
use wqdil::demos::{demos_from_expert, generate_expert_archive, DemoSet};
use wqdil::env::PointWalker;
use wqdil::qd::{run_with, write_metrics_csv, IterationRecord, QdConfig};
use wqdil::vppo::{evaluate, Objective};
use wqdil::explorer::VisitCountArchive;

#[derive(Parser)]
#[command(name = "wqdil", version, about = "Quality-diversity imitation learning on PointWalker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.qd.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the QD loop and write metrics, archive, heatmaps and visit counts
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Re-evaluate a saved archive's elites with the true reward
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding archive.csv and archive_params.bin
        #[arg(long)]
        archive: PathBuf,
    },
    /// Write fitness heatmaps (CSV and PGM) for a saved archive
    ExportHeatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train an expert archive on the true reward and record demonstrations
    GenDemos {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "demos.csv")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { common, out_dir } => run(&common.load()?, &out_dir),
        Command::Eval { common, archive } => eval(&common.load()?, &archive),
        Command::ExportHeatmap { common, archive, out_dir } => {
            let cfg = common.load()?;
            let a = load_archive(&cfg.qd, &archive)?;
            write_heatmaps(&a, out_dir.as_deref().unwrap_or(&archive))
        }
        Command::GenDemos { common, out } => gen_demos(&common.load()?, &out),
    }
}

fn progress(start: Instant, every: usize) -> impl FnMut(&IterationRecord) {
    move |r| {
        if r.iteration % every == 0 {
            eprintln!(
                "[{:>7.1}s] iter {:>4}  qd {:>10.2}  coverage {:>5.1}%  best {:>7.2}{}",
                start.elapsed().as_secs_f64(),
                r.iteration,
                r.metrics.qd_score,
                r.metrics.coverage,
                r.metrics.best.unwrap_or(f64::NAN),
                if r.restarted { "  restart" } else { "" }
            );
        }
    }
}

fn expert_demos(cfg: &ExperimentConfig) -> Result<DemoSet> {
    eprintln!("training expert archive (seed {})", cfg.qd.seed);
    let ecfg = QdConfig {
        variant: None,
        ..cfg.qd.clone()
    };
    let expert = generate_expert_archive(&ecfg)?;
    let m = expert.final_metrics();
    eprintln!("expert archive: qd {:.2}, coverage {:.1}%", m.qd_score, m.coverage);
    Ok(demos_from_expert(&expert, &ecfg, cfg.pool_size, cfg.num_demos)?)
}

fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let env = PointWalker::new(cfg.qd.horizon);
    let features = match cfg.qd.variant {
        None => None,
        Some(v) => {
            let demos = match &cfg.demos {
                Some(p) => DemoSet::load_file(p, &env).with_context(|| format!("loading {}", p.display()))?,
                None => {
                    let d = expert_demos(cfg)?;
                    d.save_file(&out_dir.join("demos.csv"))?;
                    d
                }
            };
            eprintln!("{} demonstrations\n{}", demos.len(), demos.stats_table());
            Some(demos.features(&env, v))
        }
    };
    let label = cfg.qd.variant.map_or("true-reward".to_string(), |v| v.label());
    eprintln!("running {label}, seed {}", cfg.qd.seed);
    let start = Instant::now();
    let out = run_with(&cfg.qd, features.as_deref(), progress(start, 10))?;

    write_metrics_csv(BufWriter::new(File::create(out_dir.join("metrics.csv"))?), &out.log)?;
    out.archive.save(out_dir, &out.policy.serial_widths())?;
    write_heatmaps(&out.archive, out_dir)?;
    write_visits(&out.explorer, out_dir)?;
    if let Some(m) = &out.model {
        m.save_file(&out_dir.join("reward_model.bin"))?;
    }
    let m = out.final_metrics();
    println!(
        "{label} seed {}: qd_score {:.4} coverage {:.2}% best {:.4} ({:.1}s)",
        cfg.qd.seed,
        m.qd_score,
        m.coverage,
        m.best.unwrap_or(f64::NAN),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_archive(cfg: &QdConfig, dir: &Path) -> Result<GridArchive> {
    let widths = cfg.policy()?.serial_widths();
    GridArchive::load(dir, cfg.grid, &widths).with_context(|| format!("loading archive from {}", dir.display()))
}

fn eval(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let archive = load_archive(&cfg.qd, dir)?;
    if archive.is_empty() {
        bail!("archive in {} is empty", dir.display());
    }
    let env = PointWalker::new(cfg.qd.horizon);
    let policy = cfg.qd.policy()?;
    let seeds = cfg.qd.eval_seeds();
    let explorer = VisitCountArchive::new(cfg.qd.explorer_resolution)?;
    let mut fresh = GridArchive::new(cfg.qd.grid)?;
    let mut worst_gap: f64 = 0.0;
    println!("row,col,stored_fitness,eval_fitness,measure1,measure2");
    for ((r, c), e) in archive.elites() {
        let ev = evaluate(&env, &policy, &e.params, &seeds, Objective::true_reward(), &explorer)?;
        worst_gap = worst_gap.max((ev.true_return - e.fitness).abs());
        println!("{r},{c},{},{},{},{}", e.fitness, ev.true_return, ev.measure[0], ev.measure[1]);
        fresh.insert(wqdil::archive::Elite {
            params: e.params.clone(),
            fitness: ev.true_return,
            measure: ev.measure,
            learned_fitness: None,
        })?;
    }
    let (s, f) = (archive.metrics(), fresh.metrics());
    eprintln!("stored:      qd {:.4} coverage {:.2}%", s.qd_score, s.coverage);
    eprintln!("re-evaluated: qd {:.4} coverage {:.2}% (max fitness change {:.3e})", f.qd_score, f.coverage, worst_gap);
    Ok(())
}

fn write_heatmaps(archive: &GridArchive, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    archive.write_heatmap_csv(BufWriter::new(File::create(dir.join("heatmap.csv"))?))?;
    let mut w = BufWriter::new(File::create(dir.join("heatmap.pgm"))?);
    archive.write_heatmap_pgm(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_visits(explorer: &VisitCountArchive, dir: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join("visits.csv"))?);
    explorer.write_counts_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn gen_demos(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let demos = expert_demos(cfg)?;
    demos.save_file(out)?;
    for (i, d) in demos.demos.iter().enumerate() {
        println!(
            "demo {i}: cell {:?} measure ({:.3}, {:.3}) return {:.3}",
            d.source_cell.unwrap_or_default(),
            d.episodic_measure[0],
            d.episodic_measure[1],
            d.episode_return
        );
    }
    print!("{}", demos.stats_table());
    eprintln!("wrote {}", out.display());
    Ok(())
}
