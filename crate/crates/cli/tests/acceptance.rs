//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p screwdyn-cli --test acceptance`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use screwdyn::boundary::boundary_response;
use screwdyn::elasticity::{burgers_loop_integral, renormalized_energy_plane, singular_strain};
use screwdyn::forces::{force_all, mirror_check, peach_kohler};
use screwdyn::inclusion::{hull_product, select_glide, velocity_set, GlideSelection, VelocitySet, TOL_AMB};
use screwdyn::integrator::{attracting_signs, double_sliding_coefficients, simulate, Controls, EventKind, SimulationRecord};
use screwdyn::oracles::{brute_force_hull_membership, fd_gradient, random_double_instance};
use screwdyn::scenarios::{self, Scenario};
use screwdyn::types::BoundaryCurve;
use screwdyn::{Configuration, Dislocation, Domain, GlideSet, Material, Vec2};
use screwdyn_cli::output::{events_jsonl, trajectory_csv};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Runs `f` and fails it when it takes longer than `limit`.
fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> (Outcome, Duration) {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let out = match (out, limit) {
        (Ok(_), Some(l)) if took > l => Err(format!("took {:.3} s, limit {:.0} s", took.as_secs_f64(), l.as_secs_f64())),
        (o, _) => o,
    };
    (out, took)
}

fn scenario(name: &str) -> Result<Scenario, String> {
    scenarios::by_name(name).ok_or_else(|| format!("scenario {name} missing"))
}

fn run(sc: &Scenario) -> Result<SimulationRecord, String> {
    let r = sc.run().map_err(|e| e.to_string())?;
    match &r.failure {
        Some(f) => Err(format!("run failed: {f}")),
        None => Ok(r),
    }
}

fn names(r: &SimulationRecord) -> Vec<&'static str> {
    r.events.iter().map(|e| e.kind.name()).collect()
}

fn config(points: &[(f64, f64, f64)]) -> Configuration {
    Configuration::new(points.iter().map(|&(x, y, b)| Dislocation::new(x, y, b)).collect()).unwrap()
}

fn moduli(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.gen_range(0.2..3.0);
    if rng.gen_bool(0.5) {
        m
    } else {
        -m
    }
}

/// `n` points from `draw`, pairwise at least `min` apart.
fn spread(rng: &mut ChaCha8Rng, n: usize, min: f64, draw: impl Fn(&mut ChaCha8Rng) -> (f64, f64)) -> Configuration {
    loop {
        let pts: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                let (x, y) = draw(rng);
                (x, y, moduli(rng))
            })
            .collect();
        let ok = pts.iter().enumerate().all(|(i, a)| pts[i + 1..].iter().all(|b| (a.0 - b.0).hypot(a.1 - b.1) >= min));
        if ok {
            return config(&pts);
        }
    }
}

fn in_disk(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    let (r, a) = (radius * rng.gen_range(0.0..1.0f64).sqrt(), rng.gen_range(0.0..2.0 * PI));
    (r * a.cos(), r * a.sin())
}

fn plane_pair_closed_form() -> Outcome {
    let sc = scenario("plane_pair")?;
    let r = run(&sc)?;
    ensure(names(&r) == ["fine_slip_enter", "collision"], || format!("events {:?}", names(&r)))?;
    let (mut err, mut off) = (0.0f64, 0.0f64);
    for s in &r.samples {
        if s.t <= 0.99 * PI {
            let q = (1.0 - s.t / PI).sqrt();
            err = err.max((s.z[0] - (0.5 - 0.5 * q)).abs()).max((s.z[2] - (0.5 + 0.5 * q)).abs());
        }
        off = off.max(s.z[1].abs()).max(s.z[3].abs());
    }
    let t = r.events[1].t;
    ensure(err <= 1e-5, || format!("position error {err:e}"))?;
    ensure(off <= 1e-8, || format!("left the axis by {off:e}"))?;
    ensure((t - PI).abs() <= 1e-4, || format!("collision at {t}"))?;
    Ok(format!("max error {err:.1e}, off-axis {off:.1e}, collision at {t:.10}"))
}

fn offaxis_pair() -> Outcome {
    let sc = scenario("plane_pair_offaxis")?;
    let r = run(&sc)?;
    ensure(names(&r) == ["fine_slip_enter", "collision"], || format!("events {:?}", names(&r)))?;
    let enter = r.events[0].t;
    let g = sc.glide.directions();
    for s in r.samples.iter().filter(|s| s.t < enter) {
        let v = Vec2::new(s.velocity[0], s.velocity[1]);
        let w = Vec2::new(s.velocity[2], s.velocity[3]);
        let along = |u: Vec2| g.iter().any(|d| (u.normalize() - d).norm() < 1e-12);
        ensure(along(v) && along(w), || format!("not gliding at t = {}: {v:?} {w:?}", s.t))?;
    }
    let z = &r.events[0].state;
    let gap = (z[1] - z[3]).abs();
    ensure(gap <= sc.controls.drift_tol, || format!("entered fine slip with z2 - w2 = {gap:e}"))?;
    Ok(format!("glide until t = {enter:.6}, one fine slip entry at z2 - w2 = {gap:.1e}, collision at {:.6}", r.events[1].t))
}

fn disk_single() -> Outcome {
    let m = Material::isotropic();
    let c = config(&[(0.5, 0.0, 1.0)]);
    let j = peach_kohler(&Domain::UnitDisk, &c, &m, 0).map_err(|e| e.to_string())?;
    let pk = (j - Vec2::new(1.0 / (3.0 * PI), 0.0)).norm();
    ensure(pk <= 1e-12, || format!("force off by {pk:e}"))?;
    let sc = scenario("disk_single")?;
    ensure(sc.glide == GlideSet::axes(), || "disk_single should glide on the axes".into())?;
    let r = run(&sc)?;
    ensure(names(&r) == ["boundary_collision"], || format!("events {:?}", names(&r)))?;
    let radius = |z: &[f64]| z[0].hypot(z[1]);
    ensure(r.samples.windows(2).all(|w| radius(&w[1].z) >= radius(&w[0].z)), || "|z| not monotone".into())?;
    let center = run(&scenario("disk_center")?)?;
    let speed = center.samples.iter().map(|s| s.velocity[0].hypot(s.velocity[1])).fold(0.0, f64::max);
    let moved = center.samples.iter().map(|s| radius(&s.z)).fold(0.0, f64::max);
    ensure(speed <= 1e-14 && moved == 0.0, || format!("center speed {speed:e}, moved {moved:e}"))?;
    let t_end = center.samples.last().map_or(0.0, |s| s.t);
    Ok(format!("force error {pk:.1e}, boundary hit at {:.6}, center still until t = {t_end}", r.events[0].t))
}

fn mirrors() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = Material::isotropic();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=5);
        let disk = spread(&mut rng, n, 0.05, |r| in_disk(r, 0.9));
        worst = worst.max(mirror_check(&disk, &m, &Domain::UnitDisk).map_err(|e| e.to_string())?);
        let half = spread(&mut rng, n, 0.05, |r| (r.gen_range(-2.0..2.0), r.gen_range(0.05..2.0)));
        worst = worst.max(mirror_check(&half, &m, &Domain::HalfPlane).map_err(|e| e.to_string())?);
    }
    ensure(worst <= 1e-12, || format!("discrepancy {worst:e}"))?;
    Ok(format!("max relative discrepancy {worst:.1e} over 100 disk and 100 half-plane configurations"))
}

fn mfs_cross_validation() -> Outcome {
    let curve = BoundaryCurve::regular_polygon(Vec2::zeros(), 1.0, 512).map_err(|e| e.to_string())?;
    let poly = Domain::Polygon { boundary: curve, n_charges: 128 };
    let m = Material::isotropic();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (x, y) = in_disk(&mut rng, 0.9);
        let c = config(&[(x, y, 1.0)]);
        let a = boundary_response(&poly, &c, &m).map_err(|e| e.to_string())?;
        let e = boundary_response(&Domain::UnitDisk, &c, &m).map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let (px, py) = in_disk(&mut rng, 0.9);
            let q = Vec2::new(px, py);
            worst = worst.max((a.strain(q) - e.strain(q)).norm() / e.strain(q).norm());
        }
    }
    ensure(worst <= 1e-6, || format!("relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.1e} over 1000 probes"))
}

fn loop_integral() -> Outcome {
    let mut worst = 0.0f64;
    for b in [-3.0, 1.0, 2.5] {
        for r in [0.05, 0.1, 0.2, 0.5] {
            let got = burgers_loop_integral(|x| singular_strain(x, Vec2::zeros(), b, 1.0), Vec2::zeros(), r, 256).map_err(|e| e.to_string())?;
            worst = worst.max((got - b).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("error {worst:e}"))?;
    Ok(format!("max error {worst:.1e} over 12 loops"))
}

fn energy_consistency() -> Outcome {
    let m = Material::isotropic();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=4);
        let c = spread(&mut rng, n, 0.3, |r| (r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)));
        let j = force_all(&Domain::Plane, &c, &m).map_err(|e| e.to_string())?;
        let grad = fd_gradient(|z| renormalized_energy_plane(&c.with_state(z).unwrap(), &m).unwrap(), &c.state(), 1e-5);
        for (l, jl) in j.iter().enumerate() {
            worst = worst.max((jl + Vec2::new(grad[2 * l], grad[2 * l + 1])).norm() / jl.norm());
        }
    }
    ensure(worst <= 1e-6, || format!("gradient mismatch {worst:e}"))?;
    let mut steps = 0;
    for _ in 0..20 {
        let glide = [GlideSet::axes(), GlideSet::diagonals(), GlideSet::axes_and_diagonal()][rng.gen_range(0..3)].clone();
        let n = rng.gen_range(2..=4);
        let c = spread(&mut rng, n, 0.3, |r| (r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)));
        let r = simulate(&Domain::Plane, &c, &m, &glide, &Controls { t_max: 2.0, ..Controls::default() }).map_err(|e| e.to_string())?;
        ensure(r.failure.is_none(), || format!("run failed: {:?}", r.failure))?;
        let u: Vec<f64> = r.samples.iter().map(|s| renormalized_energy_plane(&c.with_state(&s.z).unwrap(), &m).unwrap()).collect();
        for w in u.windows(2) {
            ensure(w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()), || format!("energy rose from {} to {}", w[0], w[1]))?;
        }
        steps += u.len() - 1;
    }
    Ok(format!("max gradient mismatch {worst:.1e}; energy non-increasing over {steps} steps of 20 runs"))
}

/// One velocity set: a tie, a unique direction or a zero force.
fn random_component(rng: &mut ChaCha8Rng, glide: &GlideSet) -> VelocitySet {
    let mag = rng.gen_range(0.1..3.0);
    let k = glide.len();
    let j = match rng.gen_range(0..5) {
        0 => Vec2::zeros(),
        1 | 2 => {
            let a = rng.gen_range(0..k);
            let b = (0..k).filter(|&b| b != a && glide.get(a).dot(&glide.get(b)) > -0.99).nth(rng.gen_range(0..2)).unwrap();
            (glide.get(a) + glide.get(b)).normalize() * mag
        }
        _ => {
            let t = rng.gen_range(0.0..2.0 * PI);
            Vec2::new(t.cos(), t.sin()) * mag
        }
    };
    let sel = if j.norm() == 0.0 { GlideSelection::Zero } else { select_glide(j, glide, TOL_AMB, 0.0).unwrap() };
    velocity_set(j, sel, glide)
}

fn hull_membership() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tol = 1e-10;
    let (mut checked, mut inside, mut banded) = (0, 0, 0);
    for _ in 0..1000 {
        let glide = [GlideSet::axes(), GlideSet::diagonals(), GlideSet::axes_and_diagonal()][rng.gen_range(0..3)].clone();
        let n = rng.gen_range(1..=4);
        let comps: Vec<VelocitySet> = (0..n).map(|_| random_component(&mut rng, &glide)).collect();
        let hull = hull_product(comps.clone());
        let corners = hull.corners();
        for p in 0..100 {
            let probe: Vec<f64> = comps
                .iter()
                .flat_map(|c| {
                    let (a, b) = c.endpoints();
                    let mut q = a + (b - a) * rng.gen_range(0.0..1.0);
                    if p % 2 == 1 {
                        q += Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * rng.gen_range(0.0..0.5f64).powi(3);
                    }
                    [q.x, q.y]
                })
                .collect();
            let d = hull.distance(&probe);
            if d > 0.5 * tol && d < 10.0 * tol {
                banded += 1;
                continue;
            }
            let ours = hull.contains_within(&probe, tol);
            let brute = brute_force_hull_membership(&corners, &probe, tol);
            ensure(ours == brute, || format!("disagreement at {probe:?}: hull {ours}, brute force {brute}"))?;
            checked += 1;
            inside += usize::from(ours);
        }
    }
    ensure(banded * 100 <= checked, || format!("{banded} probes fell in the tolerance band"))?;
    Ok(format!("{checked} probes agree ({inside} inside), {banded} in the tolerance band skipped"))
}

fn double_sliding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut accepted, mut drawn) = (0, 0);
    let (mut min_det, mut worst) = (f64::INFINITY, 0.0f64);
    while accepted < 10_000 {
        drawn += 1;
        let n = rng.gen_range(2..=4);
        let Some(inst) = random_double_instance(&mut rng, n) else { continue };
        accepted += 1;
        ensure(attracting_signs(&inst.fpp, &inst.fpm, &inst.fmp, &inst.fmm, &inst.n1, &inst.n2), || "sign conditions".into())?;
        let d = double_sliding_coefficients(&inst.fpp, &inst.fpm, &inst.fmp, &inst.fmm, &inst.n1, &inst.n2).map_err(|e| e.to_string())?;
        min_det = min_det.min(d.det).min(inst.det());
        worst = worst.max((d.a * Vec2::new(d.s, d.t) - d.b).norm());
    }
    ensure(min_det > 0.0, || format!("det A = {min_det:e}"))?;
    ensure(worst <= 1e-12, || format!("residual {worst:e}"))?;
    Ok(format!("10000 instances ({drawn} drawn): min det {min_det:.2e}, max residual {worst:.1e}"))
}

fn twelve() -> Outcome {
    let sc = scenario("disk_twelve")?;
    ensure(sc.glide == GlideSet::axes_and_diagonal() && sc.config.len() == 12, || "layout".into())?;
    ensure(sc.config.dislocations().iter().all(|d| d.burgers > 0.0), || "moduli must be positive".into())?;
    let near = sc.config.dislocations().iter().map(|d| d.position.norm()).enumerate().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    let r = run(&sc)?;
    let enters = r.events.iter().filter(|e| matches!(&e.kind, EventKind::FineSlipEnter { index, partners, .. } if *index == near || partners.contains(&near))).count();
    ensure(enters >= 1, || format!("no fine slip of dislocation {near}: {:?}", names(&r)))?;
    ensure(!r.events.iter().any(|e| matches!(e.kind, EventKind::Collision { .. })), || "collision between dislocations".into())?;
    ensure(matches!(r.terminal().map(|e| &e.kind), Some(EventKind::BoundaryCollision { .. })), || format!("ended with {:?}", r.terminal()))?;
    Ok(format!("{enters} fine slip entries of dislocation {}, {} events, boundary collision at {:.6}", near + 1, r.events.len(), r.terminal().unwrap().t))
}

fn determinism() -> Outcome {
    for name in ["plane_pair", "disk_twelve"] {
        let sc = scenario(name)?;
        let files = || -> Result<(String, String), String> {
            let r = run(&sc)?;
            Ok((trajectory_csv(&r, sc.config.len(), 1), events_jsonl(&r.events)))
        };
        let (a, b) = (files()?, files()?);
        ensure(a.0 == b.0, || format!("{name}: trajectories differ"))?;
        ensure(a.1 == b.1, || format!("{name}: event logs differ"))?;
    }
    Ok("trajectory and event files byte-identical across reruns".into())
}

fn main() -> ExitCode {
    let secs = |s: u64| Some(Duration::from_secs(s));
    let criteria: Vec<(&str, Option<Duration>, fn() -> Outcome)> = vec![
        ("plane pair follows the closed form", secs(1), plane_pair_closed_form),
        ("off-axis pair glides, slides once, collides", secs(1), offaxis_pair),
        ("disk single dislocation and stationary center", None, disk_single),
        ("disk and half-plane equal the mirrored plane", None, mirrors),
        ("boundary solver matches disk images", secs(10), mfs_cross_validation),
        ("loop integral recovers the modulus", None, loop_integral),
        ("plane energy: force gradient and dissipation", None, energy_consistency),
        ("hull product membership matches brute force", None, hull_membership),
        ("double sliding: det A > 0 and exact solve", None, double_sliding),
        ("twelve dislocations: fine slip then boundary", secs(30), twelve),
        ("reruns are byte-identical", None, determinism),
    ];
    let mut failed = 0;
    for (k, (name, limit, f)) in criteria.into_iter().enumerate() {
        let (out, took) = timed(limit, f);
        let (tag, detail) = match out {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} ({:.3} s)", k + 1, took.as_secs_f64());
    }
    if failed == 0 {
        println!("all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
