//! Settings and execution of each subcommand.

use std::f64::consts::PI;

use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use subcoupling::bridge::BlockConfig;
use subcoupling::geometry::{CylPoint, Curvature};
use subcoupling::montecarlo::{
    fiber_coupling, frame_invariance, full_coupling, gradient_demo, reflection_suite, trial_rng,
    verify_exit_formulas, verify_hitting_tail, verify_kt_asymptotics, FiberConfig, FullCouplingConfig, KtConfig,
    McConfig, ReflectionSuiteConfig, TailCurve, TestFunction,
};
use subcoupling::reflection::{ensure_spherical, ReflectionConfig};
use subcoupling::sde::{simulate_full, SdeConfig};

use crate::output::OutputDir;
use crate::svg::{log_plot, Series};

/// What a command reports back to `main`.
pub struct Outcome {
    pub passed: bool,
    pub summary: String,
}

fn mc(trials: usize, seed: u64, threads: usize) -> Result<McConfig> {
    Ok(McConfig::new(trials, seed)?.with_parallelism(threads))
}

fn grid(step: f64, end: f64) -> Vec<f64> {
    let n = (end / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected a:b, got `{s}`"))?;
    let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok([p(a)?, p(b)?])
}

fn tail_svg(out: &mut OutputDir, title: &str, tail: &TailCurve, bound: Option<(&str, &[f64])>) -> Result<()> {
    let mut series = vec![
        Series {
            label: "P(tau > t)",
            xs: &tail.ts,
            ys: &tail.p_hat,
            color: "black",
            dashed: false,
        },
        Series {
            label: "95% upper",
            xs: &tail.ts,
            ys: &tail.ci_upper,
            color: "#888",
            dashed: true,
        },
    ];
    if let Some((label, ys)) = bound {
        series.push(Series {
            label,
            xs: &tail.ts,
            ys,
            color: "#c03",
            dashed: true,
        });
    }
    out.write_bytes("tail.svg", log_plot(title, "t", "survival", &series).as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Serialize, Debug)]
pub struct SimulateFlags {
    #[arg(long, allow_negative_numbers = true)]
    k: Option<i8>,
    #[arg(long)]
    phi0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    theta0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    z0: Option<f64>,
    /// Horizon.
    #[arg(long = "T")]
    #[serde(rename = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct SimulateSettings {
    pub k: Curvature,
    pub phi0: f64,
    pub theta0: f64,
    pub z0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    pub master_seed: u64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        SimulateSettings {
            k: Curvature::Spherical,
            phi0: 0.5 * PI,
            theta0: 0.0,
            z0: 0.0,
            horizon: 1.0,
            dt: 1e-3,
            master_seed: 1,
        }
    }
}

pub fn simulate(s: &SimulateSettings, out: &mut OutputDir) -> Result<Outcome> {
    let sde = SdeConfig::new(s.k, s.dt)?;
    let start = CylPoint::new(s.k, s.phi0, s.theta0, s.z0)?;
    let path = simulate_full(&sde, start, s.horizon, &mut trial_rng(s.master_seed, "simulate", 0))?;
    out.write_with("path.csv", |w| path.write_csv(w))?;
    Ok(Outcome {
        passed: true,
        summary: format!(
            "{} steps, {} radial clamps, end point {:?}",
            path.radial.n_steps(),
            path.radial.clamp_count,
            path.end_point()
        ),
    })
}

// ---------------------------------------------------------------------------

#[derive(Args, Serialize, Debug)]
pub struct ExitFlags {
    /// Intervals as `a:b`, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_pair, allow_hyphen_values = true)]
    intervals: Option<Vec<[f64; 2]>>,
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    #[arg(long)]
    dt_w: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct ExitSettings {
    pub intervals: Vec<[f64; 2]>,
    pub deltas: Vec<f64>,
    pub dt_w: f64,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for ExitSettings {
    fn default() -> Self {
        ExitSettings {
            intervals: vec![[-1.0, 1.0], [-1.0, 2.0], [-0.5, 1.0]],
            deltas: vec![0.5],
            dt_w: 1e-4,
            trials: 100_000,
            master_seed: 1,
        }
    }
}

pub fn verify_exit(s: &ExitSettings, threads: usize, out: &mut OutputDir) -> Result<Outcome> {
    let ivs: Vec<(f64, f64)> = s.intervals.iter().map(|p| (p[0], p[1])).collect();
    let r = verify_exit_formulas(&ivs, &s.deltas, s.dt_w, &mc(s.trials, s.master_seed, threads)?)?;
    out.write_json("exit_report.json", &r)?;
    out.write_with("exit_checks.csv", |w| {
        use std::io::Write;
        writeln!(w, "quantity,a,b,delta,estimate,se,exact,z_score,pass")?;
        for c in &r.checks {
            let d = c.delta.map_or(String::new(), |d| d.to_string());
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                c.quantity, c.a, c.b, d, c.estimate, c.se, c.exact, c.z_score, c.pass
            )?;
        }
        Ok(())
    })?;
    let worst = r.checks.iter().map(|c| c.z_score.abs()).fold(0.0, f64::max);
    Ok(Outcome {
        passed: r.all_pass,
        summary: format!("{} checks, largest |z| = {worst:.3}", r.checks.len()),
    })
}

#[derive(Args, Serialize, Debug)]
pub struct HittingFlags {
    #[arg(long, allow_negative_numbers = true)]
    level: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    ts: Option<Vec<f64>>,
    #[arg(long)]
    dt_w: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct HittingSettings {
    pub level: f64,
    pub ts: Vec<f64>,
    pub dt_w: f64,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for HittingSettings {
    fn default() -> Self {
        HittingSettings {
            level: 1.0,
            ts: vec![0.5, 1.0, 2.0, 5.0],
            dt_w: 1e-3,
            trials: 100_000,
            master_seed: 1,
        }
    }
}

pub fn verify_hitting(s: &HittingSettings, threads: usize, out: &mut OutputDir) -> Result<Outcome> {
    let r = verify_hitting_tail(s.level, &s.ts, s.dt_w, &mc(s.trials, s.master_seed, threads)?)?;
    out.write_json("hitting_report.json", &r)?;
    out.write_with("hitting_tail.csv", |w| {
        use std::io::Write;
        writeln!(w, "t,p_hat,ci_lower,ci_upper,bound,exact")?;
        for row in &r.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.t, row.p_hat, row.ci_lower, row.ci_upper, row.bound, row.exact
            )?;
        }
        Ok(())
    })?;
    let ts: Vec<f64> = r.rows.iter().map(|x| x.t).collect();
    let cols = |f: fn(&subcoupling::montecarlo::HittingTailRow) -> f64| r.rows.iter().map(f).collect::<Vec<f64>>();
    let (p, b, e) = (cols(|x| x.p_hat), cols(|x| x.bound), cols(|x| x.exact));
    let svg = log_plot(
        "first hitting time tail",
        "t",
        "P(D > t)",
        &[
            Series { label: "empirical", xs: &ts, ys: &p, color: "black", dashed: false },
            Series { label: "stated bound", xs: &ts, ys: &b, color: "#c03", dashed: true },
            Series { label: "exact", xs: &ts, ys: &e, color: "#06c", dashed: true },
        ],
    );
    out.write_bytes("hitting_tail.svg", svg.as_bytes())?;
    let fails = r.rows.iter().filter(|x| !x.below_bound).count();
    Ok(Outcome {
        passed: r.all_below_bound,
        summary: format!("{fails} of {} times above the bound", r.rows.len()),
    })
}

#[derive(Args, Serialize, Debug)]
pub struct KtFlags {
    #[arg(long, allow_negative_numbers = true)]
    k: Option<i8>,
    #[arg(long)]
    phi0: Option<f64>,
    /// Block lengths, comma separated, largest first.
    #[arg(long = "T", value_delimiter = ',')]
    #[serde(rename = "T")]
    t_list: Option<Vec<f64>>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct KtSettings {
    pub k: Curvature,
    pub phi0: f64,
    #[serde(rename = "T")]
    pub t_list: Vec<f64>,
    pub n_steps: usize,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for KtSettings {
    fn default() -> Self {
        KtSettings {
            k: Curvature::Spherical,
            phi0: 0.5 * PI,
            t_list: vec![0.05, 0.02, 0.01],
            n_steps: 500,
            trials: 2000,
            master_seed: 1,
        }
    }
}

pub fn verify_kt(s: &KtSettings, threads: usize, out: &mut OutputDir) -> Result<Outcome> {
    let cfg = KtConfig {
        k: s.k,
        phi0: s.phi0,
        t_list: s.t_list.clone(),
        n_steps: s.n_steps,
    };
    let r = verify_kt_asymptotics(&cfg, &mc(s.trials, s.master_seed, threads)?)?;
    out.write_json("kt_report.json", &r)?;
    out.write_with("kt_table.csv", |w| {
        use std::io::Write;
        writeln!(w, "T,mean,variance,ks_statistic,ks_p_value,corr_with_area")?;
        for row in &r.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.t_block, row.mean, row.variance, row.ks.statistic, row.ks.p_value, row.corr_with_area
            )?;
        }
        Ok(())
    })?;
    let last = r.rows.last().ok_or_else(|| crate::config::usage("empty block-length list"))?;
    let passed = (0.9..=1.1).contains(&last.variance)
        && last.ks.p_value > 0.01
        && last.corr_with_area >= 0.95
        && r.ks_monotone;
    Ok(Outcome {
        passed,
        summary: format!(
            "T = {}: variance {:.4}, KS p {:.3}, corr {:.4}; KS monotone: {}",
            last.t_block, last.variance, last.ks.p_value, last.corr_with_area, r.ks_monotone
        ),
    })
}

#[derive(Args, Serialize, Debug)]
pub struct GeometryFlags {
    #[arg(long, allow_negative_numbers = true)]
    k: Option<i8>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t_block: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct GeometrySettings {
    pub k: Curvature,
    #[serde(rename = "T")]
    pub t_block: f64,
    pub n_steps: usize,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for GeometrySettings {
    fn default() -> Self {
        GeometrySettings {
            k: Curvature::Spherical,
            t_block: 0.1,
            n_steps: 100,
            trials: 1000,
            master_seed: 1,
        }
    }
}

pub fn verify_geometry(s: &GeometrySettings, threads: usize, out: &mut OutputDir) -> Result<Outcome> {
    let block = BlockConfig::new(s.k, s.t_block, s.n_steps, 0.5 * PI)?;
    let r = frame_invariance(&block, &mc(s.trials, s.master_seed, threads)?)?;
    out.write_json("geometry_report.json", &r)?;
    Ok(Outcome {
        passed: r.pass(),
        summary: format!(
            "loop residual {:.3e}, triangle residual {:.3e}",
            r.max_loop_residual, r.max_triangle_residual
        ),
    })
}

// ---------------------------------------------------------------------------

#[derive(Args, Serialize, Debug)]
pub struct BridgeFlags {
    #[arg(long, allow_negative_numbers = true)]
    k: Option<i8>,
    #[arg(long)]
    phi0: Option<f64>,
    #[arg(long)]
    dz0: Option<f64>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t_block: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    max_blocks: Option<usize>,
    #[arg(long)]
    dt_w: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct BridgeSettings {
    pub k: Curvature,
    pub phi0: f64,
    pub dz0: f64,
    #[serde(rename = "T")]
    pub t_block: f64,
    pub n_steps: usize,
    pub max_blocks: usize,
    pub dt_w: f64,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for BridgeSettings {
    fn default() -> Self {
        BridgeSettings {
            k: Curvature::Spherical,
            phi0: 0.5 * PI,
            dz0: PI,
            t_block: 0.1,
            n_steps: 100,
            max_blocks: 50,
            dt_w: 1e-4,
            trials: 10_000,
            master_seed: 1,
        }
    }
}

pub fn couple_bridge(s: &BridgeSettings, threads: usize, out: &mut OutputDir) -> Result<Outcome> {
    let mut block = BlockConfig::new(s.k, s.t_block, s.n_steps, s.phi0)?;
    block.dt_w = s.dt_w;
    block.validate()?;
    let cfg = FiberConfig {
        block,
        delta_z0: s.dz0,
        max_blocks: s.max_blocks,
    };
    let (r, records) = fiber_coupling(&cfg, &mc(s.trials, s.master_seed, threads)?)?;
    out.write_json("bridge_report.json", &r)?;
    out.write_with("tail.csv", |w| r.tail.write_csv(w))?;
    out.write_json("fit.json", &r.tail.fitted_rate)?;
    out.write_jsonl("records.jsonl", &records)?;
    tail_svg(out, "fiber coupling", &r.tail, Some(("geometric bound", &r.geometric_bound)))?;
    let fit = r.tail.fitted_rate;
    Ok(Outcome {
        passed: r.decay_ok(),
        summary: format!(
            "block success {}/{}, fit {:?}",
            r.block_successes, r.blocks_run, fit
        ),
    })
}

#[derive(Args, Serialize, Debug)]
pub struct ReflectFlags {
    #[arg(long, allow_negative_numbers = true)]
    k: Option<i8>,
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct ReflectSettings {
    pub k: Curvature,
    pub rho0: f64,
    pub dt: f64,
    pub horizon: f64,
    pub delta: f64,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for ReflectSettings {
    fn default() -> Self {
        ReflectSettings {
            k: Curvature::Spherical,
            rho0: 1.0,
            dt: 1e-3,
            horizon: 50.0,
            delta: 0.4,
            trials: 10_000,
            master_seed: 1,
        }
    }
}

pub fn couple_reflect(s: &ReflectSettings, threads: usize, out: &mut OutputDir) -> Result<Outcome> {
    ensure_spherical(s.k)?;
    let refl = ReflectionConfig::new(s.dt, s.horizon)?;
    let cfg = ReflectionSuiteConfig {
        rho0s: vec![s.rho0],
        refl,
        delta: s.delta,
        stopped: (s.rho0, (0.5 * s.rho0 + 0.5 * PI) / 2.0),
        ..ReflectionSuiteConfig::default()
    };
    let mut r = reflection_suite(&cfg, &mc(s.trials, s.master_seed, threads)?)?;
    let row = &mut r.rows[0];
    row.tail.fitted_rate = subcoupling::montecarlo::fit_exponential_rate(&row.tail, 0..row.tail.ts.len()).ok();
    out.write_json("reflect_report.json", &r)?;
    let row = &r.rows[0];
    out.write_with("tail.csv", |w| row.tail.write_csv(w))?;
    out.write_json("fit.json", &row.tail.fitted_rate)?;
    tail_svg(out, "mirror coupling", &row.tail, Some(("tail bound", &row.tail_bound)))?;
    Ok(Outcome {
        passed: r.pass(),
        summary: format!(
            "mean tau1 {:.4} +- {:.4} (bound {:.4}), tail below bound: {}, clamps {}",
            row.mean_tau1.mean, row.mean_tau1.se, row.mean_bound, row.tail_ok, row.clamp_count
        ),
    })
}

#[derive(Args, Serialize, Debug)]
pub struct FullFlags {
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    zeta0: Option<f64>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t_block: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    max_blocks: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    t_step: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct FullSettings {
    pub rho0: f64,
    pub zeta0: f64,
    #[serde(rename = "T")]
    pub t_block: f64,
    pub n_steps: usize,
    pub max_blocks: usize,
    /// Step of the mirror phase.
    pub dt: f64,
    /// Horizon of the mirror phase.
    pub horizon: f64,
    /// Spacing of the tail grid.
    pub t_step: f64,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for FullSettings {
    fn default() -> Self {
        FullSettings {
            rho0: 1.0,
            zeta0: PI,
            t_block: 0.1,
            n_steps: 100,
            max_blocks: 50,
            dt: 1e-3,
            horizon: 50.0,
            t_step: 0.5,
            trials: 10_000,
            master_seed: 1,
        }
    }
}

impl FullSettings {
    pub fn coupling_config(&self) -> Result<FullCouplingConfig> {
        Ok(FullCouplingConfig {
            rho0: self.rho0,
            zeta0: self.zeta0,
            block: BlockConfig::equatorial(self.t_block, self.n_steps)?,
            refl: ReflectionConfig::new(self.dt, self.horizon)?,
            max_blocks: self.max_blocks,
            ts: Vec::new(),
        }
        .with_grid(self.t_step))
    }
}

pub fn couple_full(s: &FullSettings, threads: usize, out: &mut OutputDir) -> Result<Outcome> {
    let cfg = s.coupling_config()?;
    let (r, records) = full_coupling(&cfg, &mc(s.trials, s.master_seed, threads)?)?;
    out.write_json("full_report.json", &r)?;
    out.write_with("tail.csv", |w| r.tail.write_csv(w))?;
    out.write_json("fit.json", &r.tail.fitted_rate)?;
    out.write_jsonl("records.jsonl", &records)?;
    tail_svg(out, "full coupling", &r.tail, None)?;
    Ok(Outcome {
        passed: r.pass(),
        summary: format!(
            "coupled {:.2}% of trials, mean tau1 {:.3}, fit {:?}",
            100.0 * r.success_fraction,
            r.mean_tau1,
            r.tail.fitted_rate
        ),
    })
}

// ---------------------------------------------------------------------------

#[derive(Args, Serialize, Debug)]
pub struct GradientFlags {
    /// Test functions: const, f1, f2, f3 (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    f: Option<Vec<TestFunction>>,
    #[arg(long)]
    rho0: Option<f64>,
    /// Initial fiber gap.
    #[arg(long, allow_negative_numbers = true)]
    dz0: Option<f64>,
    #[arg(long = "T")]
    #[serde(rename = "T")]
    t_block: Option<f64>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    ts: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Serialize, Deserialize, Debug)]
pub struct GradientSettings {
    pub f: Vec<TestFunction>,
    pub rho0: f64,
    pub dz0: f64,
    #[serde(rename = "T")]
    pub t_block: f64,
    pub n_steps: usize,
    pub dt: f64,
    pub ts: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for GradientSettings {
    fn default() -> Self {
        GradientSettings {
            f: Vec::new(),
            rho0: 0.0,
            dz0: PI,
            t_block: 1.0,
            n_steps: 1000,
            dt: 1e-3,
            ts: grid(0.5, 5.0),
            trials: 2000,
            master_seed: 1,
        }
    }
}

pub fn gradient(s: &GradientSettings, threads: usize, out: &mut OutputDir) -> Result<Outcome> {
    if s.f.is_empty() {
        return Err(crate::config::usage("no test function given; pass --f const|f1|f2|f3"));
    }
    let horizon = s.ts.iter().cloned().fold(0.0, f64::max) + 1.0;
    let cfg = FullCouplingConfig {
        rho0: s.rho0,
        zeta0: s.dz0,
        block: BlockConfig::equatorial(s.t_block, s.n_steps)?,
        refl: ReflectionConfig::new(s.dt, horizon)?,
        max_blocks: 1,
        ts: s.ts.clone(),
    };
    let r = gradient_demo(&s.f, &cfg, &mc(s.trials, s.master_seed, threads)?)?;
    out.write_json("gradient_report.json", &r)?;
    out.write_with("gradient_table.csv", |w| {
        use std::io::Write;
        writeln!(w, "f,t,mean_f,mean_f_prime,difference,p_hat,bound,combined_se,pass")?;
        for row in &r.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                row.f.name(),
                row.t,
                row.mean_f,
                row.mean_f_prime,
                row.difference,
                row.p_hat,
                row.bound,
                row.combined_se,
                row.pass
            )?;
        }
        Ok(())
    })?;
    let fails = r.rows.iter().filter(|x| !x.pass).count();
    Ok(Outcome {
        passed: r.all_pass,
        summary: format!("{fails} of {} rows violate the inequality", r.rows.len()),
    })
}
