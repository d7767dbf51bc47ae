//! Command-line surface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dash_core::data::Provenance;
use serde::de::DeserializeOwned;

use crate::commands::compare::{run_compare, CompareConfig};
use crate::commands::gen_data::{run_gen_data, GenDataConfig};
use crate::commands::plot::{run_plot, PlotConfig};
use crate::commands::theory::{run_theory_verify, TheoryVerifyConfig};
use crate::commands::train::{run_train, TrainRunConfig};
use crate::config::load_config;
use crate::output::resolve_output;
use crate::CliResult;

#[derive(Debug, Parser)]
#[command(name = "dash", version, about = "Dynamic-threshold semi-supervised training experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write labeled, unlabeled and test CSV files.
    GenData(RunArgs),
    /// Train one model and write its metrics log and checkpoint.
    Train(RunArgs),
    /// Run algorithms across seeds and label budgets and tabulate test error.
    Compare(RunArgs),
    /// Check the convergence and set-size bounds on a synthetic problem.
    TheoryVerify(RunArgs),
    /// Turn metrics logs into two-column series files.
    PlotData(PlotArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON config document; defaults apply to every key it leaves out.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.schedule.gamma=1.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Replace results of an earlier run in the output directory.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Metrics files or directories holding them.
    pub inputs: Vec<PathBuf>,
    /// Also write fixed and dynamic threshold curves.
    #[arg(long)]
    pub threshold_demo: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

trait HasOutput {
    fn output_dir(&mut self) -> &mut Option<String>;
}

macro_rules! has_output {
    ($($t:ty),*) => {$(
        impl HasOutput for $t {
            fn output_dir(&mut self) -> &mut Option<String> {
                &mut self.output_dir
            }
        }
    )*};
}
has_output!(GenDataConfig, TrainRunConfig, CompareConfig, TheoryVerifyConfig, PlotConfig);

fn resolve<T: DeserializeOwned + HasOutput>(args: &RunArgs, command: &str) -> CliResult<T> {
    let mut cfg: T = load_config(args.config.as_deref(), &args.set)?;
    let dir = resolve_output(args.out.as_deref(), cfg.output_dir().as_deref(), command);
    *cfg.output_dir() = Some(dir.to_string_lossy().into_owned());
    Ok(cfg)
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

/// Runs one command, printing a short summary to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(args) => {
            let cfg: GenDataConfig = resolve(&args, "gen-data")?;
            let (dir, bundle) = run_gen_data(&cfg, args.overwrite)?;
            let (p, q) = (bundle.count(Provenance::UnlabeledP), bundle.count(Provenance::UnlabeledQ));
            println!(
                "wrote {}: {} labeled, {} unlabeled ({p} P, {q} Q), {} test",
                show(&dir),
                bundle.labeled.len(),
                bundle.unlabeled.len(),
                bundle.test.len()
            );
        }
        Command::Train(args) => {
            let cfg: TrainRunConfig = resolve(&args, "train")?;
            let s = run_train(&cfg, args.overwrite)?;
            println!(
                "wrote {}: {} steps, rho_hat {:.6}, final test error {:.4}",
                show(&s.dir),
                s.log.len(),
                s.rho_hat,
                s.final_test_error
            );
        }
        Command::Compare(args) => {
            let cfg: CompareConfig = resolve(&args, "compare")?;
            let table = run_compare(&cfg, args.overwrite)?;
            print!("{}", table.to_text());
        }
        Command::TheoryVerify(args) => {
            let cfg: TheoryVerifyConfig = resolve(&args, "theory-verify")?;
            let s = run_theory_verify(&cfg, args.overwrite)?;
            let r = &s.report;
            let k = &r.constants;
            println!(
                "m = {}, rho_hat = {:.6e}, a0 = {:.6}, b0 = {:.6}, gamma = {:.6}, T0 = {}, m0 = {}",
                k.m,
                k.rho_hat,
                k.a0,
                k.b0,
                k.gamma_theory,
                k.t0_steps(),
                k.m0_batch()
            );
            println!("pass fraction envelope: {}", r.pass_fraction_envelope);
            println!("pass fraction A: {}", r.pass_fraction_a);
            println!("pass fraction B: {}", r.pass_fraction_b);
            println!("A nondecreasing: {}", r.a_nondecreasing_fraction);
            println!("B below twice bound: {}", r.b_below_twice_bound_fraction);
            println!("samples used {} (bound {:.1})", r.samples_used, r.sample_bound);
            if let Some(note) = &s.tsybakov_note {
                println!("low-loss condition fit skipped: {note}");
            }
            println!("wrote {}", show(&s.dir));
        }
        Command::PlotData(args) => {
            let mut cfg: PlotConfig = resolve(&args.run, "plot-data")?;
            cfg.inputs
                .extend(args.inputs.iter().map(|p| p.to_string_lossy().into_owned()));
            cfg.threshold_demo |= args.threshold_demo;
            let files = run_plot(&cfg, args.run.overwrite)?;
            println!("wrote {} series files to {}", files.len(), cfg.output_dir.as_deref().unwrap_or(""));
        }
    }
    Ok(())
}
