//! `higgslab` command line: run, sweep, compare, classify, loja, sandbox.
//!
//! Exit codes: 0 when every enabled check passes, 1 when a check fails,
//! 2 on an error (a JSON diagnostic goes to stderr).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use higgslab::config::{make_initial, ExperimentConfig};
use higgslab::experiment::{self, write_json, Check, Metadata};

#[derive(Parser)]
#[command(name = "higgslab", version, about = "Yang-Mills-Higgs flow lab on the flat torus")]
struct Cli {
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Evaluate the property checks and exit nonzero if any fails
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One flow from the configured initial data
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Seeds seed, seed+1, ... with classification of every limit
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 50)]
        n_seeds: usize,
    },
    /// Direct flow against metric flow + gauge fixing, at dt and dt/2
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, default_value_t = 4)]
        samples: usize,
        /// Also check that the composed pair ignores the square-root choice
        #[arg(long)]
        square_root_check: bool,
    },
    /// Criticality, HN type and degrees of a snapshot
    Classify {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Łojasiewicz exponent from a trajectory CSV
    Loja {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol_grad: f64,
    },
    /// Hyperkähler sandbox exactness suite
    Sandbox {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Also fit the exponent of a flow into a nondegenerate minimum
        #[arg(long)]
        loja: bool,
    },
}

fn load(config: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn summarize(checks: &[Check]) {
    for c in checks {
        let tag = if c.pass { "ok  " } else { "FAIL" };
        eprintln!("{tag} {:<28} {:.3e} (limit {:.1e})", c.name, c.value, c.threshold);
    }
}

/// Returns whether all checks passed.
fn dispatch(cli: &Cli) -> anyhow::Result<bool> {
    let start = Instant::now();
    let out = &cli.out;
    match &cli.cmd {
        Cmd::Run { config, seed } => {
            let cfg = load(config, *seed)?;
            let run = experiment::run_experiment(&cfg, cli.check)?;
            experiment::write_run(&cfg, out, &run)?;
            eprintln!(
                "{:?} at t = {:.4}, YMH {:.6e} -> {:.6e}, type {}",
                run.report.status,
                run.report.final_time,
                run.report.ymh_initial,
                run.report.ymh_final,
                run.report.critical.hn_type.as_ref().map(|t| t.label()).unwrap_or_else(|| "unsettled".into())
            );
            summarize(&run.report.checks);
            Ok(run.report.all_pass)
        }
        Cmd::Sweep { config, seed, n_seeds } => {
            let cfg = load(config, *seed)?;
            let sw = experiment::sweep(&cfg, *n_seeds, cli.check)?;
            experiment::write_sweep(&cfg, out, &sw, start.elapsed().as_secs_f64())?;
            for (ty, n) in &sw.report.type_counts {
                eprintln!("{ty}: {n}");
            }
            summarize(&sw.report.checks);
            Ok(sw.report.all_pass)
        }
        Cmd::Compare { config, seed, t_end, samples, square_root_check } => {
            let cfg = load(config, *seed)?;
            let (p0, _) = make_initial(&cfg, 0)?;
            let dt = experiment::compare_dt(&p0, &cfg.flow, *t_end, *samples);
            let xi = square_root_check.then(|| default_xi(cfg.rank));
            let mut rep = experiment::compare(&p0, *t_end, dt, *samples, xi)?;
            rep.config_hash = Some(cfg.hash());
            write_json(&out.join("compare_report.json"), &rep)?;
            write_json(&out.join("metadata.json"), &Metadata::new("compare", Some(cfg.hash()), start.elapsed().as_secs_f64()))?;
            eprintln!("discrepancy {:.3e} at dt, {:.3e} at dt/2 (ratio {:.2})", rep.coarse.discrepancy, rep.fine.discrepancy, rep.ratio);
            summarize(&rep.checks);
            Ok(rep.all_pass)
        }
        Cmd::Classify { snapshot, tol } => {
            let rep = experiment::classify(snapshot, *tol)?;
            write_json(&out.join("classify_report.json"), &rep)?;
            let c = &rep.critical;
            eprintln!(
                "critical {} (grad {:.3e}), type {}, degrees {:?}",
                c.critical,
                c.grad_norm,
                c.hn_type.as_ref().map(|t| t.label()).unwrap_or_else(|| "unsettled".into()),
                c.degrees
            );
            Ok(c.critical && c.hn_type.is_some())
        }
        Cmd::Loja { trajectory, tol_grad } => {
            let rep = experiment::loja_from_csv(trajectory, *tol_grad)?;
            write_json(&out.join("loja_report.json"), &rep)?;
            eprintln!("theta {:.4} (r2 {:.4}, {:.1} decades)", rep.fit.theta, rep.fit.fit_r2, rep.fit.decades);
            summarize(&rep.checks);
            Ok(rep.all_pass)
        }
        Cmd::Sandbox { seed, trials, loja } => {
            let rep = experiment::sandbox(*seed, *trials, *loja)?;
            write_json(&out.join("sandbox_report.json"), &rep)?;
            write_json(&out.join("metadata.json"), &Metadata::new("sandbox", None, start.elapsed().as_secs_f64()))?;
            summarize(&rep.checks);
            Ok(rep.all_pass)
        }
    }
}

/// A fixed traceless skew-Hermitian generator for the square-root check.
fn default_xi(r: usize) -> Vec<num_complex::Complex64> {
    use num_complex::Complex64 as C;
    let mut xi = vec![C::new(0.0, 0.0); r * r];
    for i in 0..r {
        xi[i * r + i] = C::new(0.0, 0.3 * (i as f64 - (r as f64 - 1.0) / 2.0));
        if i + 1 < r {
            xi[i * r + i + 1] = C::new(0.2, 0.1);
            xi[(i + 1) * r + i] = C::new(-0.2, 0.1);
        }
    }
    xi
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(pass) if pass || !cli.check => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            let kind = e
                .downcast_ref::<higgslab::LabError>()
                .map(|l| format!("{l:?}").split(['(', ' ', '{']).next().unwrap_or("LabError").to_string())
                .unwrap_or_else(|| "Error".into());
            let diag = serde_json::json!({ "error": kind, "message": format!("{e:#}") });
            eprintln!("{diag}");
            ExitCode::from(2)
        }
    }
}
