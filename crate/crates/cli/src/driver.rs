//! Runs problems and turns outcomes into exit codes.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};

use screwdyn::inclusion::Kinetics;
use screwdyn::integrator::{existence_bound, forbidden_distance, Simulator, SimulationRecord};
use screwdyn::scenarios::Scenario;

use crate::config::{self, Problem};
use crate::output;

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_EXPECTATION: i32 = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub t_max: Option<f64>,
    pub dt_max: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, p: &mut Problem) {
        if let Some(t) = self.t_max {
            p.controls.t_max = t;
        }
        if let Some(h) = self.dt_max {
            p.controls.dt_max = h;
        }
    }
}

pub fn problem_from_scenario(sc: &Scenario) -> Problem {
    Problem {
        domain: sc.domain.clone(),
        material: sc.material,
        glide: sc.glide.clone(),
        config: sc.config.clone(),
        kinetics: Kinetics::linear(sc.glide.len()),
        controls: sc.controls.clone(),
        stride: 1,
    }
}

/// Loads and validates a config file; the second value is its output
/// directory, if it names one.
pub fn problem_from_file(path: &Path, over: Overrides) -> Result<(Problem, Option<PathBuf>)> {
    let rc = config::load(path).with_context(|| format!("{}", path.display()))?;
    let mut p = rc.build().with_context(|| format!("{}", path.display()))?;
    over.apply(&mut p);
    p.controls.validate().context("controls after command-line overrides")?;
    Ok((p, rc.output.dir.map(PathBuf::from)))
}

pub fn simulate(p: &Problem) -> Result<SimulationRecord> {
    let sim = Simulator::new(&p.domain, &p.config, &p.material, &p.glide, p.kinetics.clone(), p.controls.clone())?;
    Ok(sim.run())
}

/// Dry-run report with the existence-time estimate on a ball of half the
/// distance to the nearest collision or boundary contact.
pub fn validation_report(p: &Problem) -> Result<String> {
    let dist = forbidden_distance(&p.domain, &p.config);
    let r0 = if dist.is_finite() { 0.5 * dist } else { 1.0 };
    let eb = existence_bound(&p.domain, &p.config, &p.material, r0)?;
    let mut s = format!(
        "configuration OK: {} dislocations, {} glide directions, domain {}\n",
        p.config.len(),
        p.glide.len(),
        p.domain.name()
    );
    s += &format!("existence ball radius r0 = {}, sampled force bound m0 = {}\n", output::float(eb.r0), output::float(eb.m0));
    if eb.t_min.is_finite() {
        s += &format!("solution exists at least until t = {} (estimate from {} samples, not rigorous)\n", output::float(eb.t_min), eb.samples);
    } else {
        s += "no force anywhere in the ball: existence time unbounded\n";
    }
    Ok(s)
}

/// One line describing how a run ended.
pub fn describe(record: &SimulationRecord) -> String {
    let end = record.samples.last().map_or(0.0, |s| s.t);
    let how = match (&record.failure, record.terminal()) {
        (Some(f), _) => format!("failed: {f}"),
        (None, Some(e)) => format!("ended with {} at t = {}", e.kind.name(), output::float(e.t)),
        (None, None) => format!("stopped at t = {}", output::float(end)),
    };
    format!("{how}; {} events, {} accepted and {} rejected steps", record.events.len(), record.accepted, record.rejected)
}

pub fn exit_code(record: &SimulationRecord) -> i32 {
    if record.failure.is_some() {
        EXIT_SOLVER
    } else {
        EXIT_OK
    }
}

/// Simulates and writes every artifact into `out`.
pub fn run_to(p: &Problem, out: &Path) -> Result<SimulationRecord> {
    let record = simulate(p)?;
    output::write_all(out, &record, p.config.len(), p.stride).with_context(|| format!("writing {}", out.display()))?;
    Ok(record)
}

/// Runs independent configs on `jobs` worker threads, each into
/// `out/<file stem>`. Returns one `(config, result line, exit code)` per
/// input, in input order.
pub fn sweep(configs: &[PathBuf], out: &Path, over: Overrides, jobs: usize) -> Result<Vec<(PathBuf, String, i32)>> {
    let mut stems: Vec<String> = vec![];
    for c in configs {
        let stem = c.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if stem.is_empty() || stems.contains(&stem) {
            bail!("sweep configs need distinct file names: {}", c.display());
        }
        stems.push(stem);
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<(String, i32)>>> = Mutex::new(vec![None; configs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(configs.len().max(1)) {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                if k >= configs.len() {
                    break;
                }
                let dir = out.join(&stems[k]);
                let res = match problem_from_file(&configs[k], over) {
                    // the path context is already on the line
                    Err(e) => (e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>().join(": "), EXIT_CONFIG),
                    Ok((p, _)) => match run_to(&p, &dir) {
                        Ok(r) => (describe(&r), exit_code(&r)),
                        Err(e) => (format!("{e:#}"), EXIT_IO),
                    },
                };
                results.lock().expect("no poisoned workers")[k] = Some(res);
            });
        }
    });
    let results = results.into_inner().expect("no poisoned workers");
    Ok(configs.iter().cloned().zip(results).map(|(c, r)| {
        let (line, code) = r.expect("every config ran");
        (c, line, code)
    }).collect())
}
