//! Pipelines behind the CLI: single runs, seed sweeps, flow comparison,
//! classification of snapshots, exponent fits and the sandbox suite.
//!
//! Every report carries the config hash and the code version. Wall-clock data
//! goes to a separate metadata file so reports and CSVs are reproducible.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use num_complex::Complex64 as C;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{make_initial, ExperimentConfig, InitialData, InitialReport};
use crate::critical::{self, hn_partial_order, CriticalReport, HnType, LojaFit, SweepRow, TypeOrder};
use crate::error::{LabError, Result};
use crate::fields::{self, HiggsPair, Tangent};
use crate::flow::{self, CompareConfig, EquivalenceReport, FlowDiagnostics, FlowStatus, Trajectory};
use crate::geometry::FormDegree;
use crate::mmflow::{self, SuiteReport};
use crate::{initial, snapshot, CODE_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when value ≤ threshold (NaN fails).
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), value, threshold, pass: value <= threshold }
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Check { name: name.into(), value: if ok { 0.0 } else { 1.0 }, threshold: 0.0, pass: ok }
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

// ---- gradient check --------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub directions: usize,
    pub eps: f64,
    /// max over directions of |FD − (−2 g(grad, v))| / |2 g(grad, v)|
    pub max_rel: f64,
    /// at a critical pair the relative error is undefined and no direction is tried
    pub skipped_critical: bool,
}

/// YMH along random smooth directions by central differences against the
/// analytic gradient, dYMH(v) = −2 g(V, v).
pub fn gradient_check(p: &HiggsPair, directions: usize, eps: f64, seed: u64) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = *p.grid();
    let v_grad = fields::grad_ymh(p);
    if fields::metric_norm(&v_grad) <= 1e-8 {
        return GradientCheck { directions: 0, eps, max_rel: 0.0, skipped_critical: true };
    }
    let mut max_rel: f64 = 0.0;
    for _ in 0..directions {
        let mut a = initial::random_modes(grid, p.r(), FormDegree::Dzbar, 1.5, 1.0, &mut rng);
        let mut psi = initial::random_modes(grid, p.r(), FormDegree::Dz, 1.5, 1.0, &mut rng);
        if p.fixed_det() {
            a = a.trace_free();
            psi = psi.trace_free();
        }
        let v = Tangent { a, psi };
        let fd = (fields::ymh(&p.displaced(&v, eps)) - fields::ymh(&p.displaced(&v, -eps))) / (2.0 * eps);
        let an = -2.0 * fields::metric(&v_grad, &v);
        max_rel = max_rel.max((fd - an).abs() / an.abs().max(1e-300));
    }
    GradientCheck { directions, eps, max_rel, skipped_critical: false }
}

// ---- single run ------------------------------------------------------------

pub const YMH_RISE_TOL: f64 = 1e-12;
pub const SUP_MU_RISE_TOL: f64 = 1e-8;
pub const CONVEX_RISE_TOL: f64 = 1e-6;
pub const RESIDUAL_DRIFT_TOL: f64 = 1e-8;
pub const TRACE_DRIFT_TOL: f64 = 1e-8;
/// the dissipation integral is a trapezoid sum, so this is an O(dt²) check
pub const ENERGY_IDENTITY_TOL: f64 = 1e-4;
pub const GRADIENT_FD_TOL: f64 = 1e-5;
pub const CRITICAL_TOL: f64 = 1e-5;
/// Flow discrepancies below this are accumulated roundoff over ~1e5 steps.
pub const DISCREPANCY_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub initial: InitialReport,
    pub status: FlowStatus,
    pub final_time: f64,
    pub ymh_initial: f64,
    pub ymh_final: f64,
    pub grad_final: f64,
    /// `wall_seconds` is zeroed here; it lives in the metadata file
    pub diagnostics: FlowDiagnostics,
    pub critical: CriticalReport,
    pub loja: Option<LojaFit>,
    pub loja_error: Option<String>,
    pub gradient: Option<GradientCheck>,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

pub struct RunOutput {
    pub report: RunReport,
    pub initial: HiggsPair,
    pub trajectory: Trajectory,
    pub wall_seconds: f64,
}

/// Step-level property checks of a finished trajectory.
pub fn trajectory_checks(traj: &Trajectory) -> Vec<Check> {
    let d = &traj.diagnostics;
    let ymh0 = traj.observables.first().map(|o| o.ymh).unwrap_or(0.0);
    vec![
        Check::flag("no_blowup", traj.status != FlowStatus::BlowUp),
        Check::at_most("ymh_rise", d.max_ymh_rise, YMH_RISE_TOL),
        Check::at_most("sup_mu_rise", d.max_sup_mu_rise, SUP_MU_RISE_TOL),
        Check::at_most("convex_rise", d.max_convex_rise, CONVEX_RISE_TOL),
        Check::at_most("higgs_residual_drift", (d.higgs_residual_max - d.higgs_residual_initial).max(0.0), RESIDUAL_DRIFT_TOL),
        Check::at_most("trace_drift", d.max_trace_drift, TRACE_DRIFT_TOL),
        Check::at_most(
            "energy_identity",
            (d.ymh_drop - d.dissipation).abs() / ymh0.max(1e-300),
            ENERGY_IDENTITY_TOL,
        ),
    ]
}

/// Builds the initial pair, runs the flow, classifies the endpoint. With
/// `check` the gradient is also tested against central differences.
pub fn run_experiment(cfg: &ExperimentConfig, check: bool) -> Result<RunOutput> {
    let start = Instant::now();
    let (p0, init) = make_initial(cfg, 0)?;
    let gradient = if check { Some(gradient_check(&p0, 5, 1e-5, cfg.seed ^ 0x5EED)) } else { None };
    let traj = flow::run_gradient_flow(&p0, &cfg.flow)?;
    let crit = critical::is_critical(&traj.final_pair, CRITICAL_TOL, critical::KAPPA_DEFAULT);
    let (loja, loja_error) = if traj.status == FlowStatus::Converged {
        match critical::loja_fit(&traj, cfg.flow.tol_grad) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("not converged".into()))
    };
    let mut checks = trajectory_checks(&traj);
    if let Some(g) = &gradient {
        checks.push(Check::at_most("gradient_fd", g.max_rel, GRADIENT_FD_TOL));
    }
    let mut diagnostics = traj.diagnostics.clone();
    diagnostics.wall_seconds = 0.0;
    let first = &traj.observables[0];
    let last = traj.observables.last().unwrap();
    let report = RunReport {
        code_version: CODE_VERSION.into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        initial: init,
        status: traj.status,
        final_time: traj.final_time,
        ymh_initial: first.ymh,
        ymh_final: last.ymh,
        grad_final: last.grad_norm,
        diagnostics,
        critical: crit,
        loja,
        loja_error,
        gradient,
        all_pass: all_pass(&checks),
        checks,
    };
    Ok(RunOutput { report, initial: p0, trajectory: traj, wall_seconds: start.elapsed().as_secs_f64() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub code_version: String,
    pub config_hash: Option<String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_seconds: f64,
    pub threads: usize,
    pub parallel_feature: bool,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl Metadata {
    pub fn new(command: &str, config_hash: Option<String>, wall_seconds: f64) -> Self {
        let now = unix_now();
        Metadata {
            command: command.into(),
            code_version: CODE_VERSION.into(),
            config_hash,
            started_unix: now - wall_seconds,
            finished_unix: now,
            wall_seconds,
            threads: crate::par::threads(),
            parallel_feature: cfg!(feature = "parallel"),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let s = serde_json::to_string_pretty(v).map_err(|e| LabError::Format(e.to_string()))?;
    fs::write(path, s + "\n")?;
    Ok(())
}

/// Writes the CSV, report, snapshots (initial, final, and the recorded ones if
/// kept) and `metadata.json` under `out`.
pub fn write_run(cfg: &ExperimentConfig, out: &Path, run: &RunOutput) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(cfg.resolve(out, &cfg.outputs.csv_path), run.trajectory.to_csv())?;
    write_json(&cfg.resolve(out, &cfg.outputs.report_path), &run.report)?;
    let snaps = cfg.resolve(out, &cfg.outputs.snapshot_dir);
    fs::create_dir_all(&snaps)?;
    snapshot::write(&snaps.join("initial.bin"), &run.initial, 0.0, Some(cfg.seed))?;
    snapshot::write(&snaps.join("final.bin"), &run.trajectory.final_pair, run.trajectory.final_time, Some(cfg.seed))?;
    for (k, (t, p)) in run.trajectory.snapshots.iter().enumerate() {
        snapshot::write(&snaps.join(format!("snap_{k:05}.bin")), p, *t, Some(cfg.seed))?;
    }
    write_json(&out.join("metadata.json"), &Metadata::new("run", Some(cfg.hash()), run.wall_seconds))
}

// ---- sweeps ----------------------------------------------------------------

/// The stratum the initial data is known to lie in. Split-plus-perturbation data
/// keep the degree-one line sub-bundle, so they lie in (1, −1). For random data the
/// type is not computed and the semistable type, below every other, is used.
pub fn initial_stratum(cfg: &ExperimentConfig) -> Result<(HnType, bool)> {
    match &cfg.initial {
        InitialData::SplitPlusPerturbation { block_degrees, .. } => Ok((HnType::from_integers(block_degrees)?, true)),
        _ => Ok((HnType::semistable(cfg.rank), false)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub seed: u64,
    pub status: FlowStatus,
    pub final_time: f64,
    pub initial_stratum: String,
    /// false when the initial stratum is only the semistable lower bound
    pub initial_known: bool,
    pub limit_type: Option<String>,
    pub order: Option<TypeOrder>,
    pub max_spatial_variance: f64,
    pub checks_pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub code_version: String,
    pub config_hash: String,
    pub n_seeds: usize,
    pub entries: Vec<SweepEntry>,
    pub type_counts: BTreeMap<String, usize>,
    pub unsettled: Vec<u64>,
    pub order_violations: Vec<u64>,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

pub struct SweepOutput {
    pub report: SweepReport,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunOutput>,
}

/// Runs seeds cfg.seed, cfg.seed + 1, …, classifies each limit and checks the
/// order λ ≥ μ against the initial stratum.
pub fn sweep(cfg: &ExperimentConfig, n_seeds: usize, check: bool) -> Result<SweepOutput> {
    let (mu, known) = initial_stratum(cfg)?;
    let mut runs = vec![];
    let mut entries = vec![];
    let mut rows = vec![];
    for k in 0..n_seeds {
        let mut c = cfg.clone();
        c.seed = cfg.seed + k as u64;
        let run = run_experiment(&c, check)?;
        let crit = &run.report.critical;
        let order = crit.hn_type.as_ref().map(|t| hn_partial_order(t, &mu));
        let var = crit.eigen.spatial_variance.iter().cloned().fold(0.0, f64::max);
        entries.push(SweepEntry {
            seed: c.seed,
            status: run.report.status,
            final_time: run.report.final_time,
            initial_stratum: mu.label(),
            initial_known: known,
            limit_type: crit.hn_type.as_ref().map(|t| t.label()),
            order,
            max_spatial_variance: var,
            checks_pass: run.report.all_pass,
        });
        rows.push(SweepRow {
            seed: c.seed,
            hn_type: crit.hn_type.as_ref().map(|t| t.label()).unwrap_or_else(|| "unsettled".into()),
            degrees: crit.degrees.clone(),
            theta: run.report.loja.as_ref().map(|f| f.theta),
            runtime: run.wall_seconds,
        });
        runs.push(run);
    }
    let mut type_counts = BTreeMap::new();
    for e in &entries {
        *type_counts.entry(e.limit_type.clone().unwrap_or_else(|| "unsettled".into())).or_insert(0) += 1;
    }
    let unsettled: Vec<u64> = entries.iter().filter(|e| e.limit_type.is_none()).map(|e| e.seed).collect();
    let order_violations: Vec<u64> = entries
        .iter()
        .filter(|e| !matches!(e.order, Some(TypeOrder::Greater | TypeOrder::Equal) | None))
        .map(|e| e.seed)
        .collect();
    let checks = vec![
        Check::at_most("unsettled_limits", unsettled.len() as f64, 0.0),
        Check::at_most("order_violations", order_violations.len() as f64, 0.0),
        Check::at_most("runs_failing_checks", entries.iter().filter(|e| !e.checks_pass).count() as f64, 0.0),
    ];
    let report = SweepReport {
        code_version: CODE_VERSION.into(),
        config_hash: cfg.hash(),
        n_seeds,
        entries,
        type_counts,
        unsettled,
        order_violations,
        all_pass: all_pass(&checks),
        checks,
    };
    Ok(SweepOutput { report, rows, runs })
}

pub fn write_sweep(cfg: &ExperimentConfig, out: &Path, sw: &SweepOutput, wall_seconds: f64) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("sweep.csv"), critical::sweep_csv(&sw.rows))?;
    write_json(&out.join("sweep_report.json"), &sw.report)?;
    for run in &sw.runs {
        let dir = out.join(format!("seed_{}", run.report.seed));
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("trajectory.csv"), run.trajectory.to_csv())?;
        write_json(&dir.join("report.json"), &run.report)?;
        snapshot::write(&dir.join("final.bin"), &run.trajectory.final_pair, run.trajectory.final_time, Some(run.report.seed))?;
    }
    write_json(&out.join("metadata.json"), &Metadata::new("sweep", Some(cfg.hash()), wall_seconds))
}

// ---- flow comparison -------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub code_version: String,
    pub config_hash: Option<String>,
    pub t_end: f64,
    pub coarse: EquivalenceReport,
    pub fine: EquivalenceReport,
    /// coarse.discrepancy / fine.discrepancy
    pub ratio: f64,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

/// CFL step at p0, shrunk so t_end is a whole multiple of 2 × samples steps.
pub fn compare_dt(p0: &HiggsPair, cfg: &flow::FlowConfig, t_end: f64, samples: usize) -> f64 {
    let dt = cfg.dt(p0.grid(), fields::moment1(p0).into_field().sup_norm());
    let block = 2 * samples.max(1);
    let steps = ((t_end / dt / block as f64).ceil() as usize).max(1) * block;
    t_end / steps as f64
}

/// Runs the comparison at dt and dt/2. `xi` (skew-Hermitian r×r) enables the
/// square-root-choice check.
pub fn compare(p0: &HiggsPair, t_end: f64, dt: f64, samples: usize, xi: Option<Vec<C>>) -> Result<CompareReport> {
    let coarse = flow::compare_flows(p0, &CompareConfig { t_end, dt, samples, uniqueness_xi: xi.clone() })?;
    let fine = flow::compare_flows(p0, &CompareConfig { t_end, dt: dt / 2.0, samples, uniqueness_xi: xi })?;
    let ratio = coarse.discrepancy / fine.discrepancy.max(1e-300);
    let mut checks = vec![
        Check::flag("complete", !coarse.partial && !fine.partial),
        Check::at_most("discrepancy", coarse.discrepancy, 1e-3),
        // halving dt should at least halve the discrepancy, unless it is already
        // at the roundoff floor where no trend is measurable
        Check::flag("halving_or_floor", ratio >= 2.0 || fine.discrepancy <= DISCREPANCY_FLOOR),
    ];
    if let Some(u) = fine.uniqueness_diff {
        checks.push(Check::at_most("square_root_choice", u, 1e-6));
    }
    Ok(CompareReport {
        code_version: CODE_VERSION.into(),
        config_hash: None,
        t_end,
        coarse,
        fine,
        ratio,
        all_pass: all_pass(&checks),
        checks,
    })
}

// ---- classification and fits -----------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub code_version: String,
    pub snapshot: PathBuf,
    pub t: f64,
    pub critical: CriticalReport,
}

pub fn classify(path: &Path, tol: f64) -> Result<ClassifyReport> {
    let (p, h) = snapshot::read(path)?;
    Ok(ClassifyReport {
        code_version: CODE_VERSION.into(),
        snapshot: path.to_path_buf(),
        t: h.t,
        critical: critical::is_critical(&p, tol, critical::KAPPA_DEFAULT),
    })
}

/// (time, ymh, grad_norm) columns of a trajectory CSV.
pub fn read_trajectory_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| LabError::Format(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| LabError::Format(e.to_string()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| LabError::Format(format!("column {name} missing")))
    };
    let (it, ie, ig) = (col("time")?, col("ymh")?, col("grad_norm")?);
    let (mut t, mut e, mut g) = (vec![], vec![], vec![]);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| LabError::Format(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i).unwrap_or("").trim().parse().map_err(|_| LabError::Format(format!("bad number in column {i}")))
        };
        t.push(num(it)?);
        e.push(num(ie)?);
        g.push(num(ig)?);
    }
    Ok((t, e, g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LojaReport {
    pub code_version: String,
    pub trajectory: PathBuf,
    pub fit: LojaFit,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

pub fn loja_from_csv(path: &Path, tol_grad: f64) -> Result<LojaReport> {
    let (t, e, g) = read_trajectory_csv(path)?;
    let fit = critical::loja_fit_series(&t, &e, &g, tol_grad * tol_grad)?;
    let checks = vec![
        Check::flag("theta_in_range", fit.theta > 0.0 && fit.theta < 0.55),
        Check::at_most("one_minus_r2", 1.0 - fit.fit_r2, 0.05),
        Check::at_most("sensitivity", fit.sensitivity, 0.05),
    ];
    Ok(LojaReport { code_version: CODE_VERSION.into(), trajectory: path.to_path_buf(), fit, all_pass: all_pass(&checks), checks })
}

// ---- sandbox ---------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandboxReport {
    pub code_version: String,
    pub suite: SuiteReport,
    pub loja_nondegenerate: Option<LojaFit>,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

pub fn sandbox_checks(s: &SuiteReport) -> Vec<Check> {
    vec![
        Check::at_most("identity_adjoint", s.max_identity_adjoint, 1e-10),
        Check::at_most("product_twisted", s.max_product_twisted, 1e-10),
        Check::at_most("product_commuting", s.max_product_commuting, 1e-10),
        Check::at_most("product_plain", s.max_product_plain, 1e-10),
        Check::at_most("moment_defining_property", s.max_defining_property, 1e-8),
        Check::at_most("equivariance", s.max_equivariance, 1e-10),
        Check::at_most("hessian_symmetry", s.max_hessian_asymmetry, 1e-10),
        Check::at_most("hessian_fd", s.max_hessian_fd, 1e-6),
        Check::at_most("gradient_fd", s.max_grad_fd_rel, 1e-6),
        Check::at_most("subspace_angle", s.max_subspace_angle, 1e-7),
        Check::flag("subspace_dimensions", s.subspace_dims_ok),
        Check::at_most("coulomb_failures", (s.coulomb_trials - s.coulomb_converged) as f64, 0.0),
        // residual ratios r_{k+1}/r_k² stay bounded for quadratic convergence
        Check::at_most("coulomb_ratio", s.coulomb_max_ratio, 1e3),
        Check::at_most("coulomb_recovery", s.coulomb_max_recovery, 1e-10),
    ]
}

/// The exactness suite plus, optionally, the exponent fit into a nondegenerate minimum.
pub fn sandbox(seed: u64, trials: usize, with_loja: bool) -> Result<SandboxReport> {
    let suite = mmflow::run_suite(seed, trials)?;
    let mut checks = sandbox_checks(&suite);
    let loja_nondegenerate = if with_loja {
        let rep = mmflow::UnitaryRep::u2_two_copies();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = rep.random_point(&mut rng, 0.5);
        let fit = mmflow::sandbox_loja(&rep, &x0, &mmflow::SandboxFlowConfig { dt: 1e-3, t_max: 30.0, record_every: 20 })?;
        checks.push(Check::at_most("loja_theta_half", (fit.theta - 0.5).abs(), 0.02));
        Some(fit)
    } else {
        None
    };
    Ok(SandboxReport { code_version: CODE_VERSION.into(), suite, loja_nondegenerate, all_pass: all_pass(&checks), checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ZERO_CFG: &str = r#"
seed = 3
rank = 2
fixed_det = false

[grid]
N = 8
L = 1.0
stencil = "spectral"

[initial]
kind = "random_smooth"
k0 = 1.0
amplitude = 0.0
tol = 1e-9

[flow]
c_cfl = 0.13
t_max = 1.0
integrator = "rk4"
tol_grad = 1e-6
snapshot_every = 50
geometric_growth = 1.02
keep_snapshots = false

[outputs]
csv_path = "trajectory.csv"
snapshot_dir = "snapshots"
report_path = "report.json"
"#;

    #[test]
    fn zero_pair_converges_at_time_zero() {
        let cfg = ExperimentConfig::parse(ZERO_CFG).unwrap();
        let run = run_experiment(&cfg, false).unwrap();
        assert_eq!(run.report.status, FlowStatus::Converged);
        assert_eq!(run.report.final_time, 0.0);
        assert_eq!(run.trajectory.diagnostics.steps, 0);
        assert!(run.report.all_pass, "{:?}", run.report.checks);
    }

    #[test]
    fn run_outputs_are_deterministic_and_readable() {
        let text = ZERO_CFG
            .replace("amplitude = 0.0", "amplitude = 0.2")
            .replace("t_max = 1.0", "t_max = 0.02")
            .replace("N = 8", "N = 16");
        let cfg = ExperimentConfig::parse(&text).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        for d in [&d1, &d2] {
            let run = run_experiment(&cfg, true).unwrap();
            assert!(run.report.all_pass, "{:?}", run.report.checks);
            write_run(&cfg, d.path(), &run).unwrap();
        }
        let a = fs::read(d1.path().join("trajectory.csv")).unwrap();
        assert_eq!(a, fs::read(d2.path().join("trajectory.csv")).unwrap());
        assert_eq!(fs::read(d1.path().join("report.json")).unwrap(), fs::read(d2.path().join("report.json")).unwrap());
        let (t, e, g) = read_trajectory_csv(&d1.path().join("trajectory.csv")).unwrap();
        assert_eq!(t.len(), e.len());
        assert!(g.iter().all(|x| *x > 0.0));
        let c = classify(&d1.path().join("snapshots/final.bin"), 1e-5).unwrap();
        assert!((c.t - 0.02).abs() < 1e-12);
        let report: serde_json::Value = serde_json::from_slice(&fs::read(d1.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(report["config_hash"], cfg.hash());
        assert_eq!(report["code_version"], CODE_VERSION);
    }

    #[test]
    fn sandbox_report_passes() {
        let r = sandbox(2, 20, false).unwrap();
        assert!(r.all_pass, "{:?}", r.checks);
    }

    #[test]
    fn compare_dt_divides_interval() {
        let cfg = ExperimentConfig::parse(ZERO_CFG).unwrap();
        let p = HiggsPair::zero(cfg.grid().unwrap(), 2, false);
        let dt = compare_dt(&p, &cfg.flow, 0.1, 4);
        let steps = (0.1 / dt).round() as usize;
        assert_eq!(steps % 8, 0);
        assert!((steps as f64 * dt - 0.1).abs() < 1e-12);
    }
}
