use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime};

use paydist_core::config::{Config, Mode};
use paydist_core::dynamics::{
    agent_simulation_with, integrate_with, MeanField, RevisionProtocol, TrajectoryRecord,
    RNG_ALGORITHM,
};
use paydist_core::equilibrium::{
    chebyshev_sigma, mixture_approx, params_to_lognormal, partitioned_equilibrium,
    PartitionOptions,
};
use paydist_core::fitting::{
    distribution_distance, fit_lognormal, fit_powerlaw_tail, FitModel, Metric,
};
use paydist_core::model::Occupancy;
use paydist_core::{ClassParams, Error as CoreError, PopulationState, SalaryGrid, Scenario};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::output::{
    num, read_histogram, timestamp, write_atomic, Histogram, HistogramCounts, OutputFile,
    OutputSet,
};

pub struct RunArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    toolkit: &'static str,
    toolkit_version: &'static str,
    command: &'static str,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    config: &'a Config,
    rng: Value,
    started_at: String,
    finished_at: String,
    diagnostics: Value,
    outputs: &'a [OutputFile],
}

/// Config with command-line overrides applied, its scenario and the output directory.
fn load(args: &RunArgs) -> Result<(Config, Scenario, PathBuf), CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::io(args.config.display(), e))?;
    let mut cfg = Config::parse(&text)?;
    if let Some(seed) = args.seed {
        cfg.dynamics.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.outputs.directory = out.display().to_string();
    }
    let scenario = cfg.scenario()?;
    let dir = PathBuf::from(&cfg.outputs.directory);
    Ok((cfg, scenario, dir))
}

struct Run<'a> {
    command: &'static str,
    cfg: &'a Config,
    started: SystemTime,
    outputs: OutputSet,
}

impl<'a> Run<'a> {
    fn start(command: &'static str, cfg: &'a Config, dir: &Path) -> Result<Self, CliError> {
        Ok(Self {
            command,
            cfg,
            started: SystemTime::now(),
            outputs: OutputSet::create(dir)?,
        })
    }

    /// Writes the manifest; on failure it is the only file written.
    fn finish(&self, diagnostics: Value, failure: Option<&CliError>) -> Result<(), CliError> {
        let status = match failure {
            None => "ok",
            Some(CliError::NonConvergence(_)) => "non_convergence",
            Some(_) => "failed",
        };
        let manifest = Manifest {
            toolkit: "paydist",
            toolkit_version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            status,
            error: failure.map(|e| e.to_string()),
            config: self.cfg,
            rng: json!({"algorithm": RNG_ALGORITHM, "seed": self.cfg.dynamics.seed}),
            started_at: timestamp(self.started),
            finished_at: timestamp(SystemTime::now()),
            diagnostics,
            outputs: self.outputs.files(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&self.outputs.dir().join("manifest.json"), format!("{text}\n").as_bytes())
    }
}

fn class_list(s: &Scenario) -> Vec<(ClassParams, u64)> {
    s.classes.iter().map(|c| (c.params, c.count)).collect()
}

fn budget_report(s: &Scenario, density: &[f64]) -> Value {
    let n = s.total_agents() as f64;
    let payroll: f64 = density.iter().zip(s.grid.levels()).map(|(x, sal)| n * x * sal).sum();
    match s.budget_kusd {
        None => json!({"implied_payroll_kusd": payroll}),
        Some(m) => {
            let cheb = chebyshev_sigma(m, s.grid.min(), 10.0).ok();
            json!({
                "budget_kusd": m,
                "implied_payroll_kusd": payroll,
                "budget_gap_kusd": m - payroll,
                "average_salary_kusd": m / n,
                "chebyshev_a10": cheb,
            })
        }
    }
}

pub fn solve(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, scenario, dir) = load(args)?;
    let run = Run::start("solve", &cfg, &dir)?;
    let classes = class_list(&scenario);
    let sol = match partitioned_equilibrium(&scenario.grid, &classes, &PartitionOptions::default()) {
        Ok(s) => s,
        Err(e @ CoreError::NonConvergence { iterations, residual }) => {
            let err = CliError::from(e);
            run.finish(json!({"iterations": iterations, "residual": residual}), Some(&err))?;
            return Err(err);
        }
        Err(e) => return Err(e.into()),
    };
    let mixture = mixture_approx(&scenario.grid, &classes)?;
    let mut run = run;
    let k = classes.len();
    let n = scenario.total_agents() as f64;

    let mut eq = String::from("level_index,salary_kusd");
    for j in 1..=k {
        let _ = write!(eq, ",density_class{j}");
    }
    eq.push_str(",density_total,partition\n");
    for (i, s) in scenario.grid.levels().iter().enumerate() {
        let _ = write!(eq, "{i},{}", num(*s));
        for cd in &sol.class_densities {
            let _ = write!(eq, ",{}", num(cd[i]));
        }
        let _ = writeln!(eq, ",{},{}", num(sol.densities[i]), sol.owner[i] + 1);
    }
    run.outputs.write("equilibrium.csv", &eq)?;

    let counts: Vec<Vec<f64>> = sol
        .class_densities
        .iter()
        .map(|cd| cd.iter().map(|x| x * n).collect())
        .collect();
    let hist = Histogram {
        salaries: scenario.grid.levels(),
        counts: HistogramCounts::Real(&counts),
        density: &sol.densities,
        model_density: &mixture,
    };
    run.outputs.write("histogram.csv", &hist.to_csv())?;

    let class_info: Vec<Value> = classes
        .iter()
        .enumerate()
        .map(|(j, (p, c))| {
            let ln = params_to_lognormal(p).expect("validated parameters");
            json!({
                "alpha": p.alpha, "beta": p.beta, "gamma": p.gamma, "count": c,
                "mu": ln.mu, "sigma": ln.sigma, "mode_kusd": ln.mode(),
                "h_star": sol.h_star[j], "z": sol.z[j], "lagrange_lambda": sol.lagrange_lambda[j],
                "levels": sol.partition[j].iter().map(|i| i + 1).collect::<Vec<_>>(),
            })
        })
        .collect();
    let l1_mixture = distribution_distance(&sol.densities, &mixture, Metric::L1)?;
    let diagnostics = json!({
        "flatness_residual": sol.flatness_residual,
        "exclusion_residual": sol.exclusion_residual,
        "lambda_consistency": sol.lambda_consistency(),
        "iterations": sol.iterations,
        "l1_to_mixture": l1_mixture,
        "budget": budget_report(&scenario, &sol.densities),
    });
    let solution = json!({"classes": class_info, "diagnostics": diagnostics});
    run.outputs
        .write("solution.json", &format!("{}\n", serde_json::to_string_pretty(&solution).unwrap()))?;
    run.finish(diagnostics, None)
}

fn trajectory_csv(records: &[&TrajectoryRecord], classes: usize) -> String {
    let mut out = String::from("step,time,potential");
    for j in 1..=classes {
        let _ = write!(out, ",mean_payoff_class{j}");
    }
    out.push_str(",residual\n");
    for r in records {
        let pot = r.potential.map(num).unwrap_or_default();
        let _ = write!(out, "{},{},{pot}", r.step, num(r.time));
        for m in &r.mean_payoff {
            let _ = write!(out, ",{}", num(*m));
        }
        let _ = writeln!(out, ",{}", num(r.residual));
    }
    out
}

fn snapshots_csv(records: &[&TrajectoryRecord], grid: &SalaryGrid, classes: usize) -> String {
    let mut out = String::from("step,level_index,salary_kusd");
    for j in 1..=classes {
        let _ = write!(out, ",count_class{j}");
    }
    out.push('\n');
    for r in records {
        let Some(state) = &r.state else { continue };
        for (i, s) in grid.levels().iter().enumerate() {
            let _ = write!(out, "{},{i},{}", r.step, num(*s));
            match state.occupancy() {
                Occupancy::Counts(c) => c.iter().for_each(|row| {
                    let _ = write!(out, ",{}", row[i]);
                }),
                Occupancy::Shares(sh) => sh.iter().for_each(|row| {
                    let _ = write!(out, ",{}", num(row[i] * state.total()));
                }),
            }
            out.push('\n');
        }
    }
    out
}

pub fn simulate(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, scenario, dir) = load(args)?;
    let mut run = Run::start("simulate", &cfg, &dir)?;
    let classes = class_list(&scenario);
    let k = classes.len();
    let model = mixture_approx(&scenario.grid, &classes)?;
    let clock = Instant::now();

    let (state, records, mut diagnostics): (PopulationState, Vec<TrajectoryRecord>, Value) =
        match cfg.dynamics.mode {
            Mode::Agent => {
                let out = agent_simulation_with(&scenario, |_| {})?;
                let diagnostics = json!({
                    "mode": "agent",
                    "sweeps": out.sweeps,
                    "stationary": out.stationary,
                    "residual": out.residual,
                    "offers": out.offers,
                    "moves": out.moves,
                    "shards": scenario.dynamics.shards,
                });
                if scenario.dynamics.epochs_max > 0 && !out.stationary {
                    let err = CliError::NonConvergence(format!(
                        "not stationary after {} sweeps (residual {:e})",
                        out.sweeps, out.residual
                    ));
                    run.finish(diagnostics, Some(&err))?;
                    return Err(err);
                }
                (out.state, out.trajectory, diagnostics)
            }
            Mode::MeanField => {
                let field = MeanField::from_scenario(&scenario)?;
                let start = PopulationState::from_shares(
                    field.uniform_state(),
                    scenario.total_agents() as f64,
                )?;
                match integrate_with(
                    &start,
                    &field,
                    &RevisionProtocol::default(),
                    &scenario.dynamics,
                    |_| {},
                ) {
                    Ok(out) => {
                        let diagnostics = json!({
                            "mode": "mean_field",
                            "steps": out.steps,
                            "residual": out.residual,
                        });
                        (out.state, out.trajectory, diagnostics)
                    }
                    Err(e @ CoreError::NonConvergence { iterations, residual }) => {
                        let err = CliError::from(e);
                        let diagnostics = json!({
                            "mode": "mean_field", "steps": iterations, "residual": residual,
                        });
                        run.finish(diagnostics, Some(&err))?;
                        return Err(err);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        };

    let density = state.level_shares();
    let hist = match state.occupancy() {
        Occupancy::Counts(c) => Histogram {
            salaries: scenario.grid.levels(),
            counts: HistogramCounts::Integer(c),
            density: &density,
            model_density: &model,
        }
        .to_csv(),
        Occupancy::Shares(sh) => {
            let counts: Vec<Vec<f64>> = sh
                .iter()
                .map(|r| r.iter().map(|x| x * state.total()).collect())
                .collect();
            Histogram {
                salaries: scenario.grid.levels(),
                counts: HistogramCounts::Real(&counts),
                density: &density,
                model_density: &model,
            }
            .to_csv()
        }
    };
    let cadence = scenario.dynamics.snapshot_cadence;
    let last = records.last().map(|r| r.step);
    let kept: Vec<&TrajectoryRecord> = records
        .iter()
        .filter(|r| r.step % cadence == 0 || Some(r.step) == last)
        .collect();
    run.outputs.write("histogram.csv", &hist)?;
    run.outputs.write("trajectory.csv", &trajectory_csv(&kept, k))?;
    run.outputs
        .write("snapshots.csv", &snapshots_csv(&kept, &scenario.grid, k))?;

    diagnostics["l1_to_model"] = json!(distribution_distance(&density, &model, Metric::L1)?);
    diagnostics["runtime_seconds"] = json!(clock.elapsed().as_secs_f64());
    diagnostics["budget"] = budget_report(&scenario, &density);
    run.finish(diagnostics, None)
}

fn histogram_grid(path: &Path) -> Result<(SalaryGrid, Vec<f64>), CliError> {
    let data = read_histogram(path)?;
    let grid = SalaryGrid::new(data.salaries)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((grid, data.density))
}

pub fn fit(path: &Path, mode: FitModel, top_fraction: f64) -> Result<String, CliError> {
    let (grid, density) = histogram_grid(path)?;
    let result = match mode {
        FitModel::Lognormal => fit_lognormal(&density, &grid)?,
        FitModel::Powerlaw => fit_powerlaw_tail(&density, &grid, top_fraction)?,
    };
    let text = format!("{}\n", serde_json::to_string_pretty(&result).unwrap());
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("histogram");
    let name = match mode {
        FitModel::Lognormal => format!("{stem}.lognormal_fit.json"),
        FitModel::Powerlaw => format!("{stem}.powerlaw_fit.json"),
    };
    write_atomic(&path.with_file_name(name), text.as_bytes())?;
    Ok(text)
}

pub fn compare(a: &Path, b: &Path, metric: Metric) -> Result<f64, CliError> {
    let (ga, da) = histogram_grid(a)?;
    let (gb, db) = histogram_grid(b)?;
    let same = ga.len() == gb.len()
        && ga
            .levels()
            .iter()
            .zip(gb.levels())
            .all(|(x, y)| (x - y).abs() <= 1e-9 * x.abs().max(1.0));
    if !same {
        return Err(CliError::Config(format!(
            "{} and {} use different salary levels",
            a.display(),
            b.display()
        )));
    }
    Ok(distribution_distance(&da, &db, metric)?)
}
