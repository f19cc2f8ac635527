use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgedg::harness::{
    aldous_diagnostic, check_kernel, run_convergence, run_oracle_suite, run_solve, StudyConfig,
};
use clap::{Args, Parser, Subcommand};
use log::error;

#[derive(Parser, Debug)]
#[command(name = "cgedg", version, about = "Exchange-driven growth: particle, mean-field and oracle studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Law-of-large-numbers study along the configured schedule.
    Converge(Common),
    /// Time-increment modulus of the empirical measure.
    Aldous(Common),
    /// Monte Carlo against the exact master equation on small systems.
    Oracle(Common),
    /// Check the kernel conditions and the admissible moments.
    CheckKernel(Common),
    /// Solve the mean-field equation from the configured initial density.
    Solve(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Study configuration in TOML.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured replica count.
    #[arg(long)]
    replicas: Option<usize>,
    /// Worker threads; defaults to one per core.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> cgedg::Result<(StudyConfig, PathBuf)> {
        let mut config = StudyConfig::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(replicas) = self.replicas {
            config.replicas = replicas;
        }
        let out = match &self.out {
            Some(dir) => dir.clone(),
            None if config.output.is_absolute() => config.output.clone(),
            None => config.base_dir.join(&config.output),
        };
        config.validate()?;
        std::fs::create_dir_all(&out)?;
        Ok((config, out))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Converge(c)
        | Command::Aldous(c)
        | Command::Oracle(c)
        | Command::CheckKernel(c)
        | Command::Solve(c) => c,
    };
    if let Some(threads) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            error!("cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = common.load().and_then(|(config, out)| run(&cli.command, &config, &out));
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}

/// Runs one subcommand; the flag reports whether its checks passed.
fn run(command: &Command, config: &StudyConfig, out: &Path) -> cgedg::Result<bool> {
    match command {
        Command::Converge(_) => {
            let report = run_convergence(config, Some(out))?;
            for row in &report.rows {
                println!(
                    "L={} N={} eps={} t={}: mean W1 {:.5} ± {:.5}, W1 of mean {:.5}",
                    row.l, row.n, row.eps, row.t, row.mean_w1, row.se_w1, row.w1_of_mean
                );
            }
            let violations = report.moment_violations();
            println!("moment bound violations: {violations}");
            Ok(violations == 0)
        }
        Command::Aldous(_) => {
            let deltas = config
                .aldous
                .as_ref()
                .map(|a| a.deltas.clone())
                .unwrap_or_default();
            let table = aldous_diagnostic(config, &deltas, Some(out))?;
            for row in &table.rows {
                println!(
                    "delta={}: mean W1 {:.5} ± {:.5}, W1/sqrt(delta) {:.5}",
                    row.delta, row.mean_w1, row.se_w1, row.ratio
                );
            }
            println!("spread max/min = {:.3}", table.spread());
            Ok(table.passed())
        }
        Command::Oracle(_) => {
            let records = run_oracle_suite(config, Some(out))?;
            let worst = records.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
            println!("{} comparisons, max |z| = {worst:.3}", records.len());
            Ok(worst <= 3.0)
        }
        Command::CheckKernel(_) => {
            let cert = check_kernel(config, Some(out))?;
            println!(
                "K1 {}, K2 {}, |phi|_(1,1) = {:.6}",
                cert.k1.passed, cert.k2.passed, cert.phi_norm_11
            );
            for m in &cert.moments {
                println!("moment {}: {}", m.moment, m.passed);
            }
            Ok(cert.passed())
        }
        Command::Solve(_) => {
            let (traj, report) = run_solve(config, Some(out))?;
            println!(
                "{} checkpoints, {} steps ({} rejected), boundary leak {:.3e}, mass drift {:.3e}",
                traj.len(),
                report.steps,
                report.rejected_steps,
                report.boundary_leak,
                report.max_mass_drift
            );
            Ok(true)
        }
    }
}
