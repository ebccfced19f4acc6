//! `haarlab`: experiment runner for product-set arithmetic and Haar-measure
//! estimation on compact Lie groups.
//!
//! Exit codes: 0 = verified or diagnostic completed, 2 = a checked
//! inequality was violated, 3 = inconclusive (brackets too wide or
//! uncertified), 1 = usage/parse/runtime error. Reports are deterministic
//! for a fixed (arguments, seed, build); timing lives in `.meta.json`.

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use std::path::PathBuf;
use std::sync::Arc;

use haarlab_core::cellset::CellSet;
use haarlab_core::inequality::{
    ball_doubling_curve, check_brunn_minkowski, check_minimal_doubling, double_counting_check,
    kemperman_check, local_bm_sweep, MeasureCtx, Verdict,
};
use haarlab_core::net::{build_net, Net};
use haarlab_core::report::{envelope, merge_reports, strip_timing, to_canonical_json, write_report};
use haarlab_core::stability::{
    commutator_shrink, covering_number, fit_tube, ray_profile, scale_spectrum, slice_profile,
};
use haarlab_core::subgroup::{builtin_names, builtin_subgroup, catalog_table, critical_exponent};
use haarlab_core::transport::{
    brute_force_cost, check_cyclical_monotonicity, jacobian_amgm_check, solve_ot, solve_with_mode,
    PointCloud, SolveMode,
};
use haarlab_core::{Error, GroupDescriptor, Result, SetRegion};

#[derive(Parser)]
#[command(
    name = "haarlab",
    version,
    about = "Doubling, Brunn-Minkowski and transport experiments on compact Lie groups"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// RNG seed; every run must be reproducible
    #[arg(long)]
    seed: u64,
    /// cap the rayon worker pool
    #[arg(long)]
    threads: Option<usize>,
    /// report path; defaults to stdout, or $HAARLAB_OUT/<check>-<seed>.json
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NetArgs {
    /// carrier group: su2, so3, t1..t4, so4, so5, or a product like so3xt1
    #[arg(long)]
    group: String,
    /// net size; 0 skips net construction (exact/MC paths only)
    #[arg(long, default_value_t = 20_000)]
    cells: usize,
    /// Monte Carlo sample budget for measures without exact or cell paths
    #[arg(long, default_value_t = 200_000)]
    mc: usize,
}

impl NetArgs {
    fn group(&self) -> Result<GroupDescriptor> {
        GroupDescriptor::from_name(&self.group)
    }

    fn ctx(&self, seed: u64) -> Result<(GroupDescriptor, MeasureCtx)> {
        let group = self.group()?;
        let net = if self.cells > 0 {
            Some(Arc::new(build_net(&group, self.cells, seed)?))
        } else {
            None
        };
        Ok((group, MeasureCtx::new(net, self.mc, seed)))
    }

    fn net(&self, seed: u64) -> Result<(GroupDescriptor, Arc<Net>)> {
        let group = self.group()?;
        if self.cells == 0 {
            return Err(Error::Invalid("this command needs --cells > 0".into()));
        }
        Ok((group.clone(), Arc::new(build_net(&group, self.cells, seed)?)))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// List supported carriers, their subgroup catalogs, and the appendix
    /// table of maximal-subgroup dimensions
    Groups {
        #[command(flatten)]
        common: Common,
    },
    /// Check the minimal-doubling inequality mu(A^2) >= min(1, (2^k - C mu^{2/k}) mu)
    Doubling {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        /// set expression, e.g. tube:so2_z:0.05
        #[arg(long)]
        set: String,
        /// constant C; fitted empirically when omitted
        #[arg(long)]
        c: Option<f64>,
    },
    /// Check Brunn-Minkowski: mu(AB)^{1/k} >= (1-alpha) min(mu(A)^{1/k}+mu(B)^{1/k}, 1)
    Bm {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long = "setA")]
        set_a: String,
        #[arg(long = "setB")]
        set_b: String,
        /// critical exponent k = d_G - d_H
        #[arg(long)]
        k: usize,
        /// deficit alpha; fitted empirically when omitted
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Local Brunn-Minkowski sweep over chart radii, with the fitted
    /// exponent of the deficit eps ~ C rho^p
    LocalBm {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        /// comma-separated chart radii, e.g. 0.04,0.08,0.16
        #[arg(long)]
        rhos: String,
        /// sweep CSV output path
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check Kemperman's inequality mu(AB) >= min(mu(A)+mu(B), 1)
    Kemperman {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long = "setA")]
        set_a: String,
        #[arg(long = "setB")]
        set_b: String,
    },
    /// Ball doubling curve mu(B_{2rho})/mu(B_rho) with the curvature fit
    Balls {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        rhos: String,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Double-counting identity for a region inside a subgroup tube
    DoubleCounting {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        subgroup: String,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        rho: f64,
        /// quadrature samples on the subgroup
        #[arg(long = "n-h", default_value_t = 500)]
        n_h: usize,
        /// region X; defaults to the rectangle R(e, delta, rho)
        #[arg(long)]
        set: Option<String>,
    },
    /// Solve optimal transport between two point-cloud CSV files and verify
    /// optimality certificates and cyclical monotonicity
    OtVerify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// exact | auction | entropic; dispatched by size when omitted
        #[arg(long)]
        mode: Option<String>,
        /// sampled monotonicity cycles per length
        #[arg(long, default_value_t = 500)]
        cycles: usize,
    },
    /// Determinant AM-GM bound det(I+M+S+E) >= (1 - c rho^2)(1 + det M^{1/d})^d
    Amgm {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// perturbation scale; 0 checks the pure inequality
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
    },
    /// Fit a conjugated subgroup tube to a discretized set
    FitTube {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        set: String,
        /// coarse conjugator candidates before refinement
        #[arg(long, default_value_t = 200)]
        candidates: usize,
    },
    /// Slice measure profile A_{h,rho} over Haar samples of a subgroup
    Slices {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        set: String,
        #[arg(long)]
        subgroup: String,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long = "n-h", default_value_t = 16)]
        n_h: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Ray interval profile of a chart point cloud
    Rays {
        #[command(flatten)]
        common: Common,
        /// point cloud CSV (`# dim=<d> radius=<r>` header)
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value_t = 0.005)]
        width: f64,
        #[arg(long = "rho-min", default_value_t = 0.05)]
        rho_min: f64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
        #[arg(long, default_value_t = 100)]
        dirs: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Approximate-subgroup scale spectrum, covering numbers, and the
    /// commutator-shrinking probe
    Scales {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        set: String,
        /// power Lambda^m to cover
        #[arg(long, default_value_t = 3)]
        m: usize,
        /// approximateness budget K
        #[arg(long, default_value_t = 4.0)]
        k: f64,
    },
    /// Merge report files into one deterministic document
    ReportMerge {
        #[command(flatten)]
        common: Common,
        /// input report JSON files
        inputs: Vec<PathBuf>,
    },
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap uses exit code 2 by convention; the report contract
            // reserves 2 for `violated`, so usage errors map to 1
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Verified => 0,
        Verdict::Violated => 2,
        Verdict::Inconclusive => 3,
    }
}

fn worst_code(codes: impl IntoIterator<Item = i32>) -> i32 {
    let mut worst = 0;
    for c in codes {
        // violated (2) dominates inconclusive (3) dominates verified (0)
        let rank = |x: i32| match x {
            2 => 2,
            3 => 1,
            _ => 0,
        };
        if rank(c) > rank(worst) {
            worst = c;
        }
    }
    worst
}

fn emit(common: &Common, check: &str, net_hash: Option<&str>, body: Value) -> Result<()> {
    let mut report = envelope(check, common.seed, net_hash, body);
    let path = common.out.clone().or_else(|| {
        std::env::var_os("HAARLAB_OUT")
            .map(|dir| PathBuf::from(dir).join(format!("{check}-{}.json", common.seed)))
    });
    match path {
        Some(p) => write_report(&p, report),
        None => {
            strip_timing(&mut report);
            print!("{}", to_canonical_json(&report));
            Ok(())
        }
    }
}

fn init_threads(common: &Common) {
    if let Some(n) = common.threads {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    vals.map_err(|e| Error::Invalid(format!("bad number list `{s}`: {e}")))
}

fn execute(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Groups { common } => {
            init_threads(&common);
            let carriers: Vec<Value> = ["su2", "so3", "t1", "t2", "t3", "t4", "so4", "so5"]
                .iter()
                .map(|name| {
                    let g = GroupDescriptor::from_name(name).expect("builtin");
                    json!({
                        "name": g.name(),
                        "dim": g.dim,
                        "subgroups": builtin_names(&g),
                        "critical_exponent": critical_exponent(&g).ok(),
                    })
                })
                .collect();
            let table: Vec<Value> = catalog_table()
                .iter()
                .map(|e| serde_json::to_value(e).expect("serializable"))
                .collect();
            emit(
                &common,
                "groups",
                None,
                json!({"carriers": carriers, "maximal_subgroup_table": table}),
            )?;
            Ok(0)
        }
        Cmd::Doubling { common, net, set, c } => {
            init_threads(&common);
            let (group, ctx) = net.ctx(common.seed)?;
            let a = SetRegion::parse(&group, &set)?;
            let report = check_minimal_doubling(&a, c, &ctx)?;
            let verdict = report.verdict;
            emit(&common, "doubling", ctx.net_hash().as_deref(), serde_json::to_value(&report)?)?;
            Ok(verdict_code(verdict))
        }
        Cmd::Bm {
            common,
            net,
            set_a,
            set_b,
            k,
            alpha,
        } => {
            init_threads(&common);
            let (group, ctx) = net.ctx(common.seed)?;
            let a = SetRegion::parse(&group, &set_a)?;
            let b = SetRegion::parse(&group, &set_b)?;
            let report = check_brunn_minkowski(&a, &b, k, alpha, &ctx)?;
            let verdict = report.verdict;
            emit(&common, "bm", ctx.net_hash().as_deref(), serde_json::to_value(&report)?)?;
            Ok(verdict_code(verdict))
        }
        Cmd::LocalBm {
            common,
            net,
            rhos,
            csv,
        } => {
            init_threads(&common);
            let (group, ctx) = net.ctx(common.seed)?;
            let rhos = parse_list(&rhos)?;
            if rhos.is_empty() {
                return Err(Error::Invalid("empty radius sweep".into()));
            }
            let sweep = local_bm_sweep(&group, &rhos, &ctx)?;
            if let Some(path) = csv {
                let mut f = std::fs::File::create(path)?;
                use std::io::Write;
                writeln!(f, "rho,lhs_lower,lhs_upper,rhs_lower,rhs_upper,eps_empirical,used")?;
                for (r, used) in sweep.reports.iter().zip(&sweep.used) {
                    writeln!(
                        f,
                        "{},{},{},{},{},{},{}",
                        r.inputs["rho"],
                        r.lhs.lower,
                        r.lhs.upper,
                        r.rhs.lower,
                        r.rhs.upper,
                        r.fitted_constants["eps_empirical"],
                        used
                    )?;
                }
            }
            let codes: Vec<i32> = sweep.reports.iter().map(|r| verdict_code(r.verdict)).collect();
            emit(&common, "local_bm", ctx.net_hash().as_deref(), serde_json::to_value(&sweep)?)?;
            Ok(worst_code(codes))
        }
        Cmd::Kemperman {
            common,
            net,
            set_a,
            set_b,
        } => {
            init_threads(&common);
            let (group, ctx) = net.ctx(common.seed)?;
            let a = SetRegion::parse(&group, &set_a)?;
            let b = SetRegion::parse(&group, &set_b)?;
            let report = kemperman_check(&a, &b, &ctx)?;
            let verdict = report.verdict;
            emit(&common, "kemperman", ctx.net_hash().as_deref(), serde_json::to_value(&report)?)?;
            Ok(verdict_code(verdict))
        }
        Cmd::Balls {
            common,
            net,
            rhos,
            csv,
        } => {
            init_threads(&common);
            let (group, ctx) = net.ctx(common.seed)?;
            let rhos = parse_list(&rhos)?;
            let curve = ball_doubling_curve(&group, &rhos, &ctx)?;
            if let Some(path) = csv {
                let mut f = std::fs::File::create(path)?;
                use std::io::Write;
                writeln!(f, "rho,ratio_lower,ratio_upper")?;
                for p in &curve.points {
                    writeln!(f, "{},{},{}", p.rho, p.ratio.lower, p.ratio.upper)?;
                }
            }
            emit(&common, "balls", ctx.net_hash().as_deref(), serde_json::to_value(&curve)?)?;
            Ok(0)
        }
        Cmd::DoubleCounting {
            common,
            net,
            subgroup,
            delta,
            rho,
            n_h,
            set,
        } => {
            init_threads(&common);
            let (group, ctx) = net.ctx(common.seed)?;
            let sub = builtin_subgroup(&group, &subgroup)?;
            let x = match set {
                Some(expr) => SetRegion::parse(&group, &expr)?,
                None => SetRegion::rect(sub.clone(), group.identity(), delta, rho),
            };
            let outcome = double_counting_check(&x, &sub, delta, rho, n_h, &ctx)?;
            let verdict = outcome.report.verdict;
            let body = json!({
                "report": outcome.report,
                "lhs_value": outcome.lhs_value,
                "lhs_stderr": outcome.lhs_stderr,
                "rhs": outcome.rhs,
            });
            emit(&common, "double_counting", ctx.net_hash().as_deref(), body)?;
            Ok(verdict_code(verdict))
        }
        Cmd::OtVerify {
            common,
            source,
            target,
            mode,
            cycles,
        } => {
            init_threads(&common);
            let src = PointCloud::read_csv(&mut std::io::BufReader::new(std::fs::File::open(
                &source,
            )?))?;
            let tgt = PointCloud::read_csv(&mut std::io::BufReader::new(std::fs::File::open(
                &target,
            )?))?;
            let plan = match mode.as_deref() {
                None | Some("auto") => solve_ot(&src, &tgt)?,
                Some("exact") => solve_with_mode(&src, &tgt, SolveMode::Exact)?,
                Some("auction") => solve_with_mode(&src, &tgt, SolveMode::Auction)?,
                Some("entropic") => solve_with_mode(&src, &tgt, SolveMode::Entropic)?,
                Some(other) => {
                    return Err(Error::Invalid(format!(
                        "unknown mode `{other}`; use exact, auction, entropic, or auto"
                    )))
                }
            };
            let mono2 = check_cyclical_monotonicity(&plan, 2, cycles, common.seed)?;
            let mono3 = check_cyclical_monotonicity(&plan, 3, cycles, common.seed + 1)?;
            let n = src.len();
            let uniform_small = n == tgt.len()
                && n <= 7
                && src.weights.iter().all(|w| (w - 1.0 / n as f64).abs() < 1e-12)
                && tgt.weights.iter().all(|w| (w - 1.0 / n as f64).abs() < 1e-12);
            let brute = if uniform_small {
                Some(brute_force_cost(&src, &tgt)?)
            } else {
                None
            };
            let gap = plan.duality_gap();
            let certified = matches!(plan.mode, SolveMode::Exact | SolveMode::Auction)
                && gap.abs() <= 1e-6 * plan.cost.max(1e-9);
            let brute_match = brute.map(|b| (plan.cost - b).abs() <= 1e-9 * b.max(1.0));
            let body = json!({
                "mode": plan.mode,
                "n_source": n,
                "n_target": tgt.len(),
                "cost": plan.cost,
                "duality_gap": gap,
                "max_dual_violation": plan.max_dual_violation,
                "marginal_error": plan.marginal_error(),
                "monotonicity_2": mono2,
                "monotonicity_3": mono3,
                "brute_force_cost": brute,
                "brute_force_match": brute_match,
                "certified": certified,
            });
            emit(&common, "ot_verify", None, body)?;
            if brute_match == Some(false) || (certified && (!mono2.pass || !mono3.pass)) {
                Ok(2)
            } else if !certified {
                Ok(3)
            } else {
                Ok(0)
            }
        }
        Cmd::Amgm {
            common,
            dim,
            trials,
            rho,
        } => {
            init_threads(&common);
            let report = jacobian_amgm_check(dim, trials, rho, common.seed)?;
            let violated = rho == 0.0 && report.pure_violations > 0;
            emit(&common, "amgm", None, serde_json::to_value(&report)?)?;
            Ok(if violated { 2 } else { 0 })
        }
        Cmd::FitTube {
            common,
            net,
            set,
            candidates,
        } => {
            init_threads(&common);
            let (group, net) = net.net(common.seed)?;
            let region = SetRegion::parse(&group, &set)?;
            let cells = CellSet::discretize(&region, &net)?;
            let fit = fit_tube(&cells, candidates, common.seed)?;
            let body = json!({
                "subgroup": fit.subgroup.name,
                "conjugator": group.element_to_json(&fit.conjugator),
                "delta_prime": fit.delta_prime,
                "symdiff_ratio": fit.symdiff_ratio,
                "tube_measure": fit.tube_measure,
                "candidates_scored": fit.search_trace.len(),
            });
            emit(&common, "fit_tube", Some(&net.hash), body)?;
            Ok(0)
        }
        Cmd::Slices {
            common,
            net,
            set,
            subgroup,
            delta,
            rho,
            n_h,
            csv,
        } => {
            init_threads(&common);
            let (group, net) = net.net(common.seed)?;
            let sub = builtin_subgroup(&group, &subgroup)?;
            let region = SetRegion::parse(&group, &set)?;
            let cells = CellSet::discretize(&region, &net)?;
            let profile = slice_profile(&cells, &sub, delta, rho, n_h, common.seed)?;
            if let Some(path) = csv {
                let mut f = std::fs::File::create(path)?;
                profile.write_csv(&mut f)?;
            }
            emit(&common, "slices", Some(&net.hash), serde_json::to_value(&profile)?)?;
            Ok(0)
        }
        Cmd::Rays {
            common,
            cloud,
            width,
            rho_min,
            eps,
            dirs,
            csv,
        } => {
            init_threads(&common);
            let pc = PointCloud::read_csv(&mut std::io::BufReader::new(std::fs::File::open(
                &cloud,
            )?))?;
            let profile = ray_profile(&pc, width, rho_min, eps, dirs, common.seed)?;
            if let Some(path) = csv {
                let mut f = std::fs::File::create(path)?;
                profile.write_csv(&mut f)?;
            }
            emit(&common, "rays", None, serde_json::to_value(&profile)?)?;
            Ok(0)
        }
        Cmd::Scales {
            common,
            net,
            set,
            m,
            k,
        } => {
            init_threads(&common);
            let (group, net) = net.net(common.seed)?;
            let region = SetRegion::parse(&group, &set)?;
            let lam = CellSet::discretize(&region, &net)?;
            let spectrum = scale_spectrum(&lam, m, k)?;
            // companion diagnostics on the same set
            let ball_b = CellSet::discretize(
                &SetRegion::ball(&group, group.identity(), 2.0 * net.cell_radius.max(0.02)),
                &net,
            )?;
            let cover = covering_number(&lam, &ball_b).ok();
            let commutators = commutator_shrink(&group, 500, &[0.05, 0.1, 0.2], common.seed)?;
            let body = json!({
                "spectrum": spectrum,
                "covering_by_small_ball": cover.map(|c| json!({
                    "count": c.count,
                    "ratio_bound": c.ratio_bound,
                    "within_bound": c.within_bound,
                })),
                "commutator_shrink": commutators,
            });
            emit(&common, "scales", Some(&net.hash), body)?;
            Ok(0)
        }
        Cmd::ReportMerge { common, inputs } => {
            init_threads(&common);
            if inputs.is_empty() {
                return Err(Error::Invalid("report-merge needs at least one input".into()));
            }
            let mut reports = Vec::with_capacity(inputs.len());
            for p in &inputs {
                let text = std::fs::read_to_string(p)?;
                reports.push(
                    serde_json::from_str(&text)
                        .map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))?,
                );
            }
            let merged = merge_reports(reports);
            match &common.out {
                Some(p) => write_report(p, merged)?,
                None => print!("{}", to_canonical_json(&merged)),
            }
            Ok(0)
        }
    }
}
