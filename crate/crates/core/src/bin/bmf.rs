//! Command-line entry point.
//!
//! ```text
//! bmf train      --preset firefighter --set learner.algo=mfq --set run.episodes=50
//! bmf evaluate   --a runs/x/seed_0/checkpoints/final.bin --b runs/y/seed_0/checkpoints/final.bin
//! bmf zero-shot  --checkpoint final.bin --scales 32,64,128 --opponent scripted
//! bmf efficiency --agents 50 --updates 1000
//! bmf ablation   --suite k_sweep --preset firefighter
//! bmf theory     --family random_smooth --trials 1000
//! ```
//!
//! Outputs go under `--out`, which defaults to `$BMF_OUT` or `./runs`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bmf::harness::efficiency::{efficiency_csv, efficiency_table, Method};
use bmf::harness::eval::{zero_shot_eval, Opponent, ZERO_SHOT_HEADER};
use bmf::harness::{ablation_suite, efficiency_probe, evaluate, train, EfficiencyConfig, RunConfig, OUT_ENV};
use bmf::learners::{Algo, Checkpoint};
use bmf::par::Execution;
use bmf::theory::{fluctuation_scaling, residual_sweep, write_residual_csv, Family, SweepConfig};
use bmf::Result;

#[derive(Parser)]
#[command(name = "bmf", version, about = "Bi-level mean-field MARL: training, evaluation and experiments")]
struct Cli {
    /// Output root directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed of a run config.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue seeds that have a resume checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Greedy cross-play of two checkpoints, sides swapped every episode.
    Evaluate {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a frozen checkpoint at other team sizes.
    ZeroShot {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Total agent counts, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
        scales: Vec<usize>,
        /// `scripted`, `random`, or a checkpoint path.
        #[arg(long, default_value = "scripted")]
        opponent: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Time and memory of critic updates per method.
    Efficiency {
        #[arg(long, default_value_t = 50)]
        agents: usize,
        #[arg(long, default_value_t = 1000)]
        updates: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Matched-config comparison suite: delay, k_sweep or grouping.
    Ablation {
        #[arg(long)]
        suite: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Residual sweep and fluctuation scaling of the bi-level approximation.
    Theory {
        #[arg(long, default_value = "random_smooth")]
        family: String,
        #[arg(long, value_delimiter = ',', default_value = "0.1,1,10")]
        k_values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "16,64")]
        n_values: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        groups: usize,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Named setup: firefighter, pursuit, battle, battle64.
    #[arg(long)]
    preset: Option<String>,
    /// `key = value` file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set learner.gamma=0.9`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    algo: Option<Algo>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

impl RunArgs {
    fn build(&self, default_preset: &str) -> Result<RunConfig> {
        let mut pairs = Vec::new();
        if self.config.is_none() || self.preset.is_some() {
            let preset = self.preset.as_deref().unwrap_or(default_preset);
            pairs.push(("run.preset".to_string(), preset.to_string()));
        }
        if let Some(p) = &self.config {
            pairs.extend(RunConfig::parse_text(&std::fs::read_to_string(p)?)?);
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| bmf::BmfError::config(format!("--set expects KEY=VALUE, got '{o}'")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(a) = self.algo {
            pairs.push(("learner.algo".into(), a.name().into()));
        }
        if let Some(e) = self.episodes {
            pairs.push(("run.episodes".into(), e.to_string()));
        }
        if let Some(s) = &self.seeds {
            let list: Vec<String> = s.iter().map(|s| s.to_string()).collect();
            pairs.push(("run.seeds".into(), list.join(",")));
        }
        RunConfig::from_pairs(&pairs)
    }
}

fn write_out(out: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let p = out.join(name);
    std::fs::write(&p, text)?;
    Ok(p)
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out;
    match cli.cmd {
        Cmd::Train { run, resume } => {
            let cfg = run.build("firefighter")?;
            let rep = train(&cfg, &out, resume)?;
            for (s, r) in rep.seeds.iter().zip(&rep.final_returns) {
                println!("seed {s}: final return {r:.4}");
            }
            let (m, sd) = rep.final_mean_std();
            println!("final return {m:.4} ± {sd:.4} -> {}", rep.dir.display());
        }
        Cmd::Evaluate { a, b, episodes, seed, run } => {
            let cfg = run.build("battle")?;
            let rep = evaluate(&Checkpoint::load(&a)?, &Checkpoint::load(&b)?, &cfg.env, episodes, seed)?;
            let (ka, kb) = rep.mean_kills();
            let (ra, rb) = rep.mean_returns();
            println!("episodes {episodes}: A wins {} / B wins {} / draws {}", rep.wins_a, rep.wins_b, rep.draws);
            println!("win rate A {:.3} (draws count half), draw rate {:.3}", rep.win_rate(), rep.draw_rate());
            println!("mean kills A {ka:.2} B {kb:.2}; mean return A {ra:.3} B {rb:.3}");
            let text = format!("{}\n{}\n", bmf::harness::CrossPlayReport::CSV_HEADER, rep.to_csv());
            println!("-> {}", write_out(&out, "evaluate.csv", &text)?.display());
        }
        Cmd::ZeroShot {
            checkpoint,
            scales,
            opponent,
            episodes,
            seed,
            run,
        } => {
            let cfg = run.build("battle")?;
            let ck = Checkpoint::load(&checkpoint)?;
            let other;
            let opp = match opponent.as_str() {
                "scripted" => Opponent::Scripted,
                "random" => Opponent::Random,
                path => {
                    other = Checkpoint::load(Path::new(path))?;
                    Opponent::Checkpoint(&other)
                }
            };
            let rows = zero_shot_eval(&ck, &cfg.env, &scales, opp, episodes, seed)?;
            let mut text = format!("{ZERO_SHOT_HEADER}\n");
            println!("{:>6} {:>24} {:>9}", "Num", ck.algo, "win rate");
            for r in &rows {
                println!("{:>6} {:>24} {:>9.3}", r.scale, format!("{:.2} ± {:.2}", r.mean_return, r.std_return), r.win_rate);
                text.push_str(&format!("{},{:?},{:?},{:?}\n", r.scale, r.mean_return, r.std_return, r.win_rate));
            }
            println!("-> {}", write_out(&out, "zero_shot.csv", &text)?.display());
        }
        Cmd::Efficiency {
            agents,
            updates,
            seeds,
            batch,
        } => {
            let cfg = EfficiencyConfig {
                n_agents: agents,
                updates,
                seeds,
                batch_size: batch,
                ..Default::default()
            };
            let rows = efficiency_probe(&cfg)?;
            print!("{}", efficiency_table(&rows));
            let bmf_row = rows.iter().find(|r| r.method == Method::Learner(Algo::BmfQ));
            let pairs = rows.iter().find(|r| r.method == Method::AllPairs);
            if let (Some(b), Some(p)) = (bmf_row, pairs) {
                println!("time reduction vs all-pairs attention: {:.1}%", 100.0 * (1.0 - b.time().0 / p.time().0));
            }
            println!("-> {}", write_out(&out, "efficiency.csv", &efficiency_csv(&rows))?.display());
        }
        Cmd::Ablation { suite, run } => {
            let mut cfg = run.build("firefighter")?;
            cfg.name = format!("ablation_{suite}");
            let rep = ablation_suite(&suite, &cfg, &out)?;
            for (l, m, s) in rep.finals() {
                println!("{l:>10}: {m:.4} ± {s:.4}");
            }
            if let Some(g) = rep.relative_gap("delay", "no_delay") {
                println!("relative gap delay vs no delay: {:.2}%", 100.0 * g);
            }
            println!("-> {}", rep.dir.display());
        }
        Cmd::Theory {
            family,
            k_values,
            n_values,
            groups,
            dim,
            trials,
            sigma,
            seed,
        } => {
            let family: Family = family.parse()?;
            let cfg = SweepConfig {
                family,
                k_values: k_values.clone(),
                n_values,
                groups,
                dim,
                trials,
                sigma,
                seed,
                execution: Execution::best(),
            };
            let rows = residual_sweep(&cfg)?;
            for r in &rows {
                println!(
                    "K={:<6} n={:<4} residual in [{:.4e}, {:.4e}], bound ±{:.4e}: {}",
                    r.k_smooth,
                    r.n,
                    r.min_residual,
                    r.max_residual,
                    r.bound,
                    if r.within_bound { "ok" } else { "VIOLATED" }
                );
            }
            std::fs::create_dir_all(&out)?;
            let path = out.join("residuals.csv");
            write_residual_csv(&path, &rows)?;
            let scales = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0];
            for &k in &k_values {
                let (_, slope) = fluctuation_scaling(family, k, &scales, trials.min(200), seed, Execution::best())?;
                println!("K={k}: log-log slope of |residual| vs fluctuation scale = {slope:.4}");
            }
            println!("-> {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
