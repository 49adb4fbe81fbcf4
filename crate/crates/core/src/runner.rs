//! Scenario execution: a worker pool over paths, deterministic persistence,
//! and the verification pass over a persisted run directory.
//!
//! All files are written by the collecting thread in path order, so a run
//! with a fixed seed is byte-identical across repetitions regardless of the
//! worker schedule. Wall-clock metadata lives only in `run.json`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis;
use crate::error::{Error, Result};
use crate::integrator::{run_path_trajectory, ModelRt, StateField, Trajectory};
use crate::noise::StepIncrements;
use crate::scenario::{RunResult, Scenario};
use crate::spectral::FractionalNormSpec;

pub const TRAJECTORIES_FILE: &str = "trajectories.ndjson";
pub const MOMENTS_FILE: &str = "moments.csv";
pub const INCREMENTS_FILE: &str = "increments.ndjson";
pub const SCENARIO_FILE: &str = "scenario.toml";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FractionalValue {
    pub theta: f64,
    pub q: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormRecord {
    pub x: f64,
    pub e_half_u: f64,
    pub l2_u: f64,
    pub l2_v: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frac: Vec<FractionalValue>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub path: u64,
    pub t: f64,
    pub norms: NormRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IncrementRecord {
    pub path: u64,
    pub step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dbeta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_beta: Option<Vec<f64>>,
}

pub fn norms_of_state(
    model: &ModelRt<f64>,
    state: &StateField<f64>,
    fractional: &[FractionalNormSpec<f64>],
) -> Result<NormRecord> {
    let modes = &model.space.trunc.modes;
    let mut x2 = 0.0;
    let mut eh2 = 0.0;
    let mut lu2 = 0.0;
    let mut lv2 = 0.0;
    for k in 0..modes.len() {
        let a = modes[k].a;
        eh2 += a * state.u[k] * state.u[k];
        lu2 += state.u[k] * state.u[k];
        lv2 += state.v[k] * state.v[k];
    }
    x2 = eh2 + lv2;
    let mut frac = Vec::with_capacity(fractional.len());
    for spec in fractional {
        frac.push(FractionalValue {
            theta: spec.theta,
            q: spec.q,
            value: model.space.fractional_norm(&state.u, spec)?,
        });
    }
    Ok(NormRecord {
        x: x2.sqrt(),
        e_half_u: eh2.sqrt(),
        l2_u: lu2.sqrt(),
        l2_v: lv2.sqrt(),
        frac,
    })
}

struct PathOutput {
    path: u64,
    trajectory: Trajectory<f64>,
}

/// Execute the scenario and persist the run directory. Deterministic: two
/// runs with the same inputs produce byte-identical data files.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path, threads: Option<usize>) -> Result<RunResult> {
    let started = Instant::now();
    let model = scenario.build::<f64>()?;
    let plan = model.plan()?;
    let n_paths = scenario.run.paths;
    let record_increments = scenario.output.persist_increments;

    let simulate = || -> Result<Vec<PathOutput>> {
        (0..n_paths)
            .into_par_iter()
            .map(|path| {
                let trajectory = run_path_trajectory(&model, &plan, path, record_increments)?;
                Ok(PathOutput { path, trajectory })
            })
            .collect()
    };
    let mut outputs = match threads {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(simulate)?,
        _ => simulate()?,
    };
    outputs.sort_by_key(|o| o.path);

    fs::create_dir_all(out_dir)?;
    // canonical scenario copy + digest
    let canonical = scenario.to_canonical_toml();
    fs::write(out_dir.join(SCENARIO_FILE), &canonical)?;

    // trajectories, path-major order
    let traj_path = out_dir.join(TRAJECTORIES_FILE);
    {
        let mut w = BufWriter::new(fs::File::create(&traj_path)?);
        for out in &outputs {
            for state in &out.trajectory.states {
                let norms = norms_of_state(&model, state, &scenario.output.fractional_norms)?;
                let rec = TrajectoryRecord {
                    path: out.path,
                    t: state.t,
                    norms,
                    u: scenario.output.store_coefficients.then(|| state.u.clone()),
                    v: scenario.output.store_coefficients.then(|| state.v.clone()),
                };
                serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Parse(e.to_string()))?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
    }

    // moments: compensated sums in fixed path order
    let moments_path = out_dir.join(MOMENTS_FILE);
    {
        let n_times = outputs
            .first()
            .map(|o| o.trajectory.states.len())
            .unwrap_or(0);
        let names = ["x", "e_half_u", "l2_u", "l2_v"];
        let mut w = BufWriter::new(fs::File::create(&moments_path)?);
        writeln!(w, "t,norm,mean_sq,var_sq,paths")?;
        for ti in 0..n_times {
            let t = outputs[0].trajectory.states[ti].t;
            for (ni, name) in names.iter().enumerate() {
                let mut mean = KahanSum::new();
                let mut meansq = KahanSum::new();
                for out in &outputs {
                    let norms =
                        norms_of_state(&model, &out.trajectory.states[ti], &[])?;
                    let v = [norms.x, norms.e_half_u, norms.l2_u, norms.l2_v][ni];
                    mean.add(v * v);
                    meansq.add(v * v * v * v);
                }
                let n = n_paths as f64;
                let m = mean.value() / n;
                let var = (meansq.value() / n - m * m).max(0.0);
                writeln!(w, "{t},{name},{m},{var},{n_paths}")?;
            }
        }
        w.flush()?;
    }

    // optional increments
    let increments_path = if record_increments {
        let p = out_dir.join(INCREMENTS_FILE);
        let mut w = BufWriter::new(fs::File::create(&p)?);
        for out in &outputs {
            if let Some(incs) = &out.trajectory.increments {
                for (step, inc) in incs.iter().enumerate() {
                    let rec = IncrementRecord {
                        path: out.path,
                        step: step as u64,
                        dw: inc.point.as_ref().map(|p| p.dw),
                        theta_w: inc.point.as_ref().map(|p| p.theta),
                        dbeta: inc
                            .distributed
                            .as_ref()
                            .map(|d| d.iter().map(|i| i.dw).collect()),
                        theta_beta: inc
                            .distributed
                            .as_ref()
                            .map(|d| d.iter().map(|i| i.theta).collect()),
                    };
                    serde_json::to_writer(&mut w, &rec).map_err(|e| Error::Parse(e.to_string()))?;
                    w.write_all(b"\n")?;
                }
            }
        }
        w.flush()?;
        Some(p)
    } else {
        None
    };

    let result = RunResult {
        scenario_digest: scenario.digest(),
        trajectories_path: TRAJECTORIES_FILE.into(),
        moments_path: MOMENTS_FILE.into(),
        increments_path: increments_path.map(|_| INCREMENTS_FILE.into()),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        paths: n_paths,
    };
    fs::write(
        out_dir.join(RUN_FILE),
        serde_json::to_string_pretty(&result).map_err(|e| Error::Parse(e.to_string()))? + "\n",
    )?;
    Ok(result)
}

/// Simple compensated accumulator.
struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    fn new() -> Self {
        KahanSum { sum: 0.0, c: 0.0 }
    }

    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

/// A parsed run directory.
pub struct LoadedRun {
    pub scenario: Scenario,
    pub run: RunResult,
    pub records: Vec<TrajectoryRecord>,
    pub increments: Option<Vec<IncrementRecord>>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let scen_path = dir.join(SCENARIO_FILE);
    if !scen_path.exists() {
        return Err(Error::MissingArtifact(format!("{}", scen_path.display())));
    }
    let scenario = Scenario::from_toml_str(&fs::read_to_string(&scen_path)?)?;
    let run_path: PathBuf = dir.join(RUN_FILE);
    if !run_path.exists() {
        return Err(Error::MissingArtifact(format!("{}", run_path.display())));
    }
    let run: RunResult = serde_json::from_str(&fs::read_to_string(&run_path)?)
        .map_err(|e| Error::Parse(e.to_string()))?;
    let traj_path = dir.join(TRAJECTORIES_FILE);
    if !traj_path.exists() {
        return Err(Error::MissingArtifact(format!("{}", traj_path.display())));
    }
    let mut records = Vec::new();
    for line in fs::read_to_string(&traj_path)?.lines() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))?);
    }
    let inc_path = dir.join(INCREMENTS_FILE);
    let increments = if inc_path.exists() {
        let mut v = Vec::new();
        for line in fs::read_to_string(&inc_path)?.lines() {
            if line.trim().is_empty() {
                continue;
            }
            v.push(serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()))?);
        }
        Some(v)
    } else {
        None
    };
    Ok(LoadedRun {
        scenario,
        run,
        records,
        increments,
    })
}

#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub digest_ok: bool,
    pub admissible: bool,
    pub norms_ok: Option<bool>,
    pub weak_residual_max: Option<f64>,
    pub weak_residual_ok: Option<bool>,
    pub messages: Vec<String>,
    pub passed: bool,
}

/// Re-run the invariant suite bound to a persisted run.
pub fn verify_run(dir: &Path) -> Result<VerifyOutcome> {
    let loaded = load_run(dir)?;
    let mut messages = Vec::new();
    let digest_ok = loaded.scenario.digest() == loaded.run.scenario_digest;
    if !digest_ok {
        messages.push("scenario digest does not match run metadata".into());
    }
    let report = loaded.scenario.admissibility();
    let admissible = report.verdict;
    if !admissible {
        messages.push(format!("inadmissible: {}", report.violated.join("; ")));
    }
    let model = loaded.scenario.build::<f64>()?;

    // recompute norms when coefficients are stored
    let norms_ok = if loaded.scenario.output.store_coefficients {
        let mut ok = true;
        for rec in &loaded.records {
            if let (Some(u), Some(v)) = (&rec.u, &rec.v) {
                let state = StateField {
                    t: rec.t,
                    u: u.clone(),
                    v: v.clone(),
                };
                let norms = norms_of_state(&model, &state, &[])?;
                let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
                if !(close(norms.x, rec.norms.x)
                    && close(norms.e_half_u, rec.norms.e_half_u)
                    && close(norms.l2_v, rec.norms.l2_v))
                {
                    ok = false;
                    messages.push(format!(
                        "norm mismatch at path {} t {}",
                        rec.path, rec.t
                    ));
                    break;
                }
            }
        }
        Some(ok)
    } else {
        None
    };

    // weak residual on path 0 when the run stored everything it needs
    let every_step = matches!(loaded.scenario.run.output, crate::scenario::OutputSel::AllSteps);
    let (weak_residual_max, weak_residual_ok) = if loaded.scenario.output.store_coefficients
        && every_step
        && loaded.increments.is_some()
        && (model.b.zero || model.b.state_independent)
    {
        let incs = rebuild_increments(&loaded, 0, model.n_steps)?;
        let states: Vec<StateField<f64>> = loaded
            .records
            .iter()
            .filter(|r| r.path == 0)
            .map(|r| StateField {
                t: r.t,
                u: r.u.clone().expect("coefficients stored"),
                v: r.v.clone().expect("coefficients stored"),
            })
            .collect();
        let n_modes = model.space.n_modes().min(8);
        let test_modes: Vec<usize> = (0..n_modes).collect();
        let t_final = model.t_final();
        let checks: Vec<f64> = (1..=4).map(|i| t_final * i as f64 / 4.0).collect();
        let report = analysis::weak_residual(&model, &states, &incs, &test_modes, &checks)?;
        let ok = report.max_relative <= 1e-6;
        if !ok {
            messages.push(format!(
                "weak residual {} exceeds 1e-6",
                report.max_relative
            ));
        }
        (Some(report.max_relative), Some(ok))
    } else {
        if loaded.increments.is_none() {
            messages.push(
                "increments not persisted: weak-residual check skipped (enable persist_increments)"
                    .into(),
            );
        }
        (None, None)
    };

    let passed = digest_ok
        && admissible
        && norms_ok.unwrap_or(true)
        && weak_residual_ok.unwrap_or(true);
    Ok(VerifyOutcome {
        digest_ok,
        admissible,
        norms_ok,
        weak_residual_max,
        weak_residual_ok,
        messages,
        passed,
    })
}

fn rebuild_increments(
    loaded: &LoadedRun,
    path: u64,
    n_steps: u64,
) -> Result<Vec<StepIncrements<f64>>> {
    let recs = loaded
        .increments
        .as_ref()
        .ok_or_else(|| Error::MissingArtifact("increment stream".into()))?;
    let mut out = Vec::with_capacity(n_steps as usize);
    for step in 0..n_steps {
        let rec = recs
            .iter()
            .find(|r| r.path == path && r.step == step)
            .ok_or_else(|| {
                Error::MissingArtifact(format!("increments for path {path} step {step}"))
            })?;
        out.push(StepIncrements {
            point: match (rec.dw, rec.theta_w) {
                (Some(dw), Some(theta)) => Some(crate::noise::Increment { dw, theta }),
                _ => None,
            },
            distributed: match (&rec.dbeta, &rec.theta_beta) {
                (Some(d), Some(t)) => Some(
                    d.iter()
                        .zip(t.iter())
                        .map(|(&dw, &theta)| crate::noise::Increment { dw, theta })
                        .collect(),
                ),
                _ => None,
            },
        });
    }
    Ok(out)
}
