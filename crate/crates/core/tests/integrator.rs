use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use screwdyn::elasticity::renormalized_energy_plane;
use screwdyn::forces::ForceEngine;
use screwdyn::inclusion::{hull_product, select_glide, velocity_set, GlideSelection, TOL_AMB};
use screwdyn::integrator::*;
use screwdyn::scenarios::{self, Scenario};
use screwdyn::{Configuration, Dislocation, Domain, GlideSet, Material, Vec2};

fn pair(z: (f64, f64), w: (f64, f64), bz: f64, bw: f64) -> Configuration {
    Configuration::new(vec![Dislocation::new(z.0, z.1, bz), Dislocation::new(w.0, w.1, bw)]).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn tied_pair(j: Vec2, glide: &GlideSet) -> (usize, usize) {
    match select_glide(j, glide, 1e-6, 0.0).unwrap() {
        GlideSelection::Ambiguous(m, p) => (m, p),
        other => panic!("expected a tie, got {other:?}"),
    }
}

#[test]
fn smooth_field_examples() {
    let m = Material::isotropic();
    let disk = pair((0.5, 0.0), (0.0, 0.0), 1.0, 1.0);
    let one = Configuration::new(vec![disk.dislocations()[0]]).unwrap();
    let v = smooth_rhs(&Domain::UnitDisk, &one, &m, &GlideSet::axes(), &[Some(0)]).unwrap();
    assert!(close(&v, &[1.0 / (3.0 * PI), 0.0], 1e-14));
    assert_eq!(smooth_rhs(&Domain::UnitDisk, &one, &m, &GlideSet::axes(), &[None]).unwrap(), vec![0.0, 0.0]);

    let g = GlideSet::diagonals();
    let c = pair((0.0, 0.0), (1.0, 1.0), 1.0, -1.0);
    let v = smooth_rhs(&Domain::Plane, &c, &m, &g, &[Some(0), Some(2)]).unwrap();
    let j = ForceEngine::for_config(&Domain::Plane, &c, &m).unwrap().forces(&c.state()).unwrap();
    let g1 = g.get(0);
    let speed = j[0].dot(&g1).abs();
    assert!(speed > 0.0);
    assert!(close(&v, &[speed * g1.x, speed * g1.y, -speed * g1.x, -speed * g1.y], 1e-14));
    // the chosen directions maximize dissipation for both
    assert_eq!(select_glide(j[0], &g, TOL_AMB, 0.0).unwrap(), GlideSelection::Unique(0));
    assert_eq!(select_glide(j[1], &g, TOL_AMB, 0.0).unwrap(), GlideSelection::Unique(2));
}

#[test]
fn sign_classes() {
    assert_eq!(classify_signs(1.0, 2.0, 1e-12).unwrap(), ContactClass::CrossMinusToPlus);
    assert_eq!(classify_signs(-1.0, -2.0, 1e-12).unwrap(), ContactClass::CrossPlusToMinus);
    assert_eq!(classify_signs(1.0, -2.0, 1e-12).unwrap(), ContactClass::FineSlip);
    assert_eq!(classify_signs(-1.0, 2.0, 1e-12).unwrap(), ContactClass::Source);
    assert!(matches!(classify_signs(1e-14, 2.0, 1e-12), Err(SimError::ClassificationUncertain { .. })));
}

#[test]
fn plane_pair_slides_at_half() {
    let m = Material::isotropic();
    let g = GlideSet::diagonals();
    let c = pair((0.0, 0.0), (1.0, 0.0), 1.0, -1.0);
    let j = ForceEngine::for_config(&Domain::Plane, &c, &m).unwrap().forces(&c.state()).unwrap();
    let (minus, plus) = tied_pair(j[0], &g);
    assert_eq!(classify_surface_contact(&Domain::Plane, &c, &m, &g, 0, minus, plus).unwrap(), ContactClass::FineSlip);
    let (alpha, v) = sliding_velocity_single(&Domain::Plane, &c, &m, &g, 0, minus, plus).unwrap();
    assert!((alpha - 0.5).abs() < 1e-12);
    let s = 1.0 / (4.0 * PI);
    assert!(close(&v, &[s, 0.0, -s, 0.0], 1e-14), "{v:?}");
    // off the tie the pure functions refuse
    let off = pair((0.0, 0.0), (1.0, 0.3), 1.0, -1.0);
    assert!(matches!(sliding_velocity_single(&Domain::Plane, &off, &m, &g, 0, minus, plus), Err(SimError::NotOnSurface { .. })));
}

#[test]
fn repelling_pair_is_a_source() {
    let m = Material::isotropic();
    let g = GlideSet::diagonals();
    let c = pair((0.0, 0.0), (1.0, 0.0), 1.0, 1.0);
    let j = ForceEngine::for_config(&Domain::Plane, &c, &m).unwrap().forces(&c.state()).unwrap();
    let (minus, plus) = tied_pair(j[0], &g);
    assert_eq!(classify_surface_contact(&Domain::Plane, &c, &m, &g, 0, minus, plus).unwrap(), ContactClass::Source);
    let rec = simulate(&Domain::Plane, &c, &m, &g, &Controls::default()).unwrap();
    assert!(matches!(rec.terminal().unwrap().kind, EventKind::SourcePoint { .. }));
    assert_eq!(rec.terminal().unwrap().t, 0.0);
}

#[test]
fn double_sliding_synthetic() {
    // n1 ⊥ n2, fields symmetric about both surfaces
    let n1 = [1.0, 0.0, 0.0, 0.0];
    let n2 = [0.0, 0.0, 1.0, 0.0];
    let fpp = [-1.0, 0.5, -2.0, 0.0];
    let fpm = [-1.0, 0.5, 1.0, 0.0];
    let fmp = [3.0, 0.5, -2.0, 0.0];
    let fmm = [3.0, 0.5, 1.0, 0.0];
    assert!(attracting_signs(&fpp, &fpm, &fmp, &fmm, &n1, &n2));
    let d = double_sliding_coefficients(&fpp, &fpm, &fmp, &fmm, &n1, &n2).unwrap();
    assert_eq!(d.det, 12.0);
    let r = d.a * nalgebra::Vector2::new(d.s, d.t) - d.b;
    assert!(r.norm() <= 1e-12);
    assert!((d.s - 0.75).abs() < 1e-15 && (d.t - 1.0 / 3.0).abs() < 1e-15);
    let v: Vec<f64> = (0..4).map(|i| fmm[i] + d.s * (fpp[i] - fmp[i]) + d.t * (fpp[i] - fpm[i])).collect();
    assert!(v[0].abs() < 1e-15 && v[2].abs() < 1e-15);
    assert!(matches!(
        double_sliding_coefficients(&fpp, &fpm, &fmp, &fmm, &n1, &n1),
        Err(SimError::NonPositiveDeterminant { .. })
    ));
}

#[test]
fn coincident_surfaces_slide_as_one() {
    let sc = scenarios::by_name("plane_pair").unwrap();
    let rec = sc.run().unwrap();
    assert_eq!(rec.count("double_slip_enter"), 0);
    assert_eq!(rec.count("fine_slip_enter"), 1);
    match &rec.events[0].kind {
        EventKind::FineSlipEnter { index, partners, .. } => assert_eq!((*index, partners.clone()), (0, vec![1])),
        other => panic!("{other:?}"),
    }
    assert!(rec.samples[1..].iter().all(|s| s.mode == Mode::Sliding { members: vec![0, 1] }));
    let c = &sc.config;
    let m = Material::isotropic();
    let j = ForceEngine::for_config(&sc.domain, c, &m).unwrap().forces(&c.state()).unwrap();
    let (a, b) = (tied_pair(j[0], &sc.glide), tied_pair(j[1], &sc.glide));
    assert!(sliding_velocity_double(&sc.domain, c, &m, &sc.glide, (0, a.0, a.1), (1, b.0, b.1)).is_err());
}

#[test]
fn plane_pair_follows_closed_form() {
    let sc = scenarios::by_name("plane_pair").unwrap();
    let rec = sc.run().unwrap();
    let mut worst: f64 = 0.0;
    for s in rec.samples.iter().filter(|s| s.t <= 0.99 * PI) {
        let r = (1.0 - s.t / PI).sqrt();
        worst = worst.max((s.z[0] - (0.5 - 0.5 * r)).abs()).max((s.z[2] - (0.5 + 0.5 * r)).abs());
        assert!(s.z[1].abs() <= 1e-8 && s.z[3].abs() <= 1e-8);
    }
    assert!(worst <= 1e-5, "{worst}");
    let end = rec.terminal().unwrap();
    assert!(matches!(end.kind, EventKind::Collision { first: 0, second: 1 }));
    assert!((end.t - PI).abs() <= 1e-4, "{}", end.t);
}

#[test]
fn quiet_segment_has_no_events() {
    let c = Configuration::from_triples(&[(0.2, 0.0, 1.0)]).unwrap();
    let controls = Controls { t_max: 0.5, ..Controls::default() };
    let rec = simulate(&Domain::UnitDisk, &c, &Material::isotropic(), &GlideSet::axes(), &controls).unwrap();
    assert_eq!(rec.events.len(), 1);
    assert_eq!(rec.events[0].kind, EventKind::MaxTime);
    assert_eq!(rec.events[0].t, 0.5);
    assert!(rec.samples.iter().all(|s| s.mode == Mode::Smooth));
}

#[test]
fn single_dislocation_in_plane_never_moves() {
    let c = Configuration::from_triples(&[(0.3, -0.1, 2.0)]).unwrap();
    let controls = Controls { t_max: 1.0, ..Controls::default() };
    let rec = simulate(&Domain::Plane, &c, &Material::isotropic(), &GlideSet::axes(), &controls).unwrap();
    assert_eq!(rec.events.first().unwrap().kind, EventKind::ZeroForce { index: 0 });
    assert!(rec.samples.iter().all(|s| s.z == c.state()));
    let eb = existence_bound(&Domain::Plane, &c, &Material::isotropic(), 1.0).unwrap();
    assert_eq!(eb.m0, 0.0);
    assert!(eb.t_min.is_infinite());
}

#[test]
fn existence_bound_of_a_repelling_pair() {
    let d = 1.0;
    let c = pair((0.0, 0.0), (d, 0.0), 1.0, 1.0);
    let r0 = d / 4.0;
    let eb = existence_bound(&Domain::Plane, &c, &Material::isotropic(), r0).unwrap();
    assert_eq!(eb.dist, d / SQRT_2);
    // the largest force in the ball is at the closest approach d − √2 r0
    let exact = SQRT_2 / (2.0 * PI * (d - SQRT_2 * r0));
    assert!(eb.m0 <= exact * (1.0 + 1e-12) && eb.m0 >= 0.9 * exact, "{} vs {exact}", eb.m0);
    assert!(eb.t_min.is_finite() && eb.t_min > 0.0);
    assert!(matches!(existence_bound(&Domain::Plane, &c, &Material::isotropic(), d), Err(SimError::Radius { .. })));

    let controls = Controls { t_max: 1.0, ..Controls::default() };
    let c = pair((0.0, 0.0), (d, 0.3), 1.0, 1.0);
    let eb = existence_bound(&Domain::Plane, &c, &Material::isotropic(), r0).unwrap();
    let rec = simulate(&Domain::Plane, &c, &Material::isotropic(), &GlideSet::axes(), &controls).unwrap();
    let z0 = c.state();
    for s in &rec.samples {
        let moved = s.z.iter().zip(&z0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if moved <= r0 {
            assert!(moved <= eb.m0 * s.t * (1.0 + 1e-9) + 1e-12);
        }
    }
}

/// Random plane configurations with unit-scale spacing.
fn random_plane(rng: &mut ChaCha8Rng) -> (Configuration, GlideSet) {
    let glide = match rng.gen_range(0..3) {
        0 => GlideSet::axes(),
        1 => GlideSet::diagonals(),
        _ => GlideSet::from_angles_deg(&[rng.gen_range(0.0..60.0), 60.0 + rng.gen_range(0.0..60.0), 130.0]).unwrap(),
    };
    loop {
        let n = rng.gen_range(2..=4);
        let pts: Vec<Dislocation> = (0..n)
            .map(|_| Dislocation::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), if rng.gen_bool(0.5) { 1.0 } else { -1.0 }))
            .collect();
        let c = Configuration::new(pts).unwrap();
        if c.min_pair_distance() > 0.3 {
            return (c, glide);
        }
    }
}

fn random_disk(rng: &mut ChaCha8Rng) -> Configuration {
    loop {
        let n = rng.gen_range(1..=4);
        let pts: Vec<Dislocation> = (0..n)
            .map(|_| {
                let (r, a) = (rng.gen_range(0.0..0.7f64).sqrt(), rng.gen_range(0.0..std::f64::consts::TAU));
                Dislocation::new(r * a.cos(), r * a.sin(), 1.0)
            })
            .collect();
        let c = Configuration::new(pts).unwrap();
        if c.len() == 1 || c.min_pair_distance() > 0.2 {
            return c;
        }
    }
}

fn check_membership(domain: &Domain, c: &Configuration, glide: &GlideSet, rec: &SimulationRecord) {
    let m = Material::isotropic();
    let e = ForceEngine::for_config(domain, c, &m).unwrap();
    for s in &rec.samples {
        let j = e.forces(&s.z).unwrap();
        let comps = j
            .iter()
            .map(|jl| {
                let sel = if jl.norm() == 0.0 { GlideSelection::Zero } else { select_glide(*jl, glide, TOL_AMB, 0.0).unwrap() };
                velocity_set(*jl, sel, glide)
            })
            .collect();
        let hull = hull_product(comps);
        let scale = j.iter().map(|x| x.norm()).fold(1.0, f64::max);
        assert!(hull.contains_within(&s.velocity, 1e-9 * scale), "t={} d={} mode={:?}", s.t, hull.distance(&s.velocity), s.mode);
    }
}

#[test]
fn velocities_lie_in_the_hull_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for sc in scenarios::catalog() {
        check_membership(&sc.domain, &sc.config, &sc.glide, &sc.run().unwrap());
    }
    for _ in 0..10 {
        let (c, g) = random_plane(&mut rng);
        let controls = Controls { t_max: 2.0, ..Controls::default() };
        let rec = simulate(&Domain::Plane, &c, &Material::isotropic(), &g, &controls).unwrap();
        check_membership(&Domain::Plane, &c, &g, &rec);
        let c = random_disk(&mut rng);
        let rec = simulate(&Domain::UnitDisk, &c, &Material::isotropic(), &GlideSet::axes_and_diagonal(), &controls).unwrap();
        check_membership(&Domain::UnitDisk, &c, &GlideSet::axes_and_diagonal(), &rec);
    }
}

#[test]
fn plane_energy_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let m = Material::isotropic();
    for _ in 0..20 {
        let (c, g) = random_plane(&mut rng);
        let controls = Controls { t_max: 2.0, ..Controls::default() };
        let rec = simulate(&Domain::Plane, &c, &m, &g, &controls).unwrap();
        assert!(rec.failure.is_none(), "{:?}", rec.failure);
        let u: Vec<f64> = rec.samples.iter().map(|s| renormalized_energy_plane(&c.with_state(&s.z).unwrap(), &m).unwrap()).collect();
        for w in u.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
        }
        // the recorded trace carries the same energies and a growing dissipation
        for (e, ui) in rec.energy.iter().zip(&u) {
            assert_eq!(e.energy, Some(*ui));
            assert!(e.power >= -1e-12);
        }
        assert!(rec.energy.windows(2).all(|w| w[1].dissipated >= w[0].dissipated));
    }
}

#[test]
fn sliding_stays_on_the_surface() {
    let m = Material::isotropic();
    for name in ["plane_pair", "plane_pair_offaxis", "disk_twelve"] {
        let sc = scenarios::by_name(name).unwrap();
        let rec = sc.run().unwrap();
        let e = ForceEngine::for_config(&sc.domain, &sc.config, &m).unwrap();
        let mut seen = 0;
        for s in &rec.samples {
            let Mode::Sliding { members } = &s.mode else { continue };
            let j = e.forces(&s.z).unwrap();
            for &l in members {
                let (a, b) = tied_pair(j[l], &sc.glide);
                let gap = sc.glide.get(b) - sc.glide.get(a);
                let r = j[l].dot(&gap).abs();
                assert!(r <= 2.0 * sc.controls.drift_tol * j[l].norm() * gap.norm(), "{name} t={} r={r}", s.t);
                seen += 1;
            }
        }
        assert!(seen > 0, "{name}");
    }
}

#[test]
fn displacement_obeys_the_speed_bound() {
    let m = Material::isotropic();
    for sc in scenarios::catalog() {
        let rec = sc.run().unwrap();
        let e = ForceEngine::for_config(&sc.domain, &sc.config, &m).unwrap();
        let mag = |z: &[f64]| e.forces(z).unwrap().iter().map(|j| j.norm_squared()).sum::<f64>().sqrt();
        for w in rec.samples.windows(2) {
            let step = w[1].z.iter().zip(&w[0].z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let bound = mag(&w[0].z).max(mag(&w[1].z)) * (w[1].t - w[0].t);
            assert!(step <= 1.01 * bound + 1e-9, "{} t={} step={step} bound={bound}", sc.name, w[0].t);
        }
    }
}

#[test]
fn cross_slip_switches_to_the_announced_direction() {
    let m = Material::isotropic();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut seen = 0;
    for _ in 0..12 {
        let c = random_disk(&mut rng);
        let g = GlideSet::axes_and_diagonal();
        let mut sim = Simulator::new(&Domain::UnitDisk, &c, &m, &g, screwdyn::inclusion::Kinetics::linear(g.len()), Controls::default()).unwrap();
        while !sim.is_finished() {
            let events = sim.step();
            if events.len() != 1 {
                continue;
            }
            if let EventKind::CrossSlip { index, from, to } = events[0].kind {
                let st = sim.state();
                assert_ne!(from, to);
                assert_eq!(st.motions[index], Motion::Glide(to));
                let j = ForceEngine::for_config(&Domain::UnitDisk, &c, &m).unwrap().force(&st.z, index).unwrap();
                assert!(j.dot(&g.get(to)) >= j.dot(&g.get(from)) - 1e-9 * j.norm());
                seen += 1;
            }
        }
    }
    assert!(seen > 0);
}

fn twice(sc: &Scenario) {
    let a = sc.run().unwrap();
    let b = sc.run().unwrap();
    assert_eq!(a, b, "{}", sc.name);
}

#[test]
fn runs_are_deterministic() {
    for sc in scenarios::catalog() {
        twice(&sc);
    }
}

#[test]
fn bad_controls_and_configurations_are_rejected() {
    let c = pair((0.0, 0.0), (1.0, 0.0), 1.0, -1.0);
    let m = Material::isotropic();
    let bad = Controls { rtol: 0.0, ..Controls::default() };
    assert!(matches!(simulate(&Domain::Plane, &c, &m, &GlideSet::axes(), &bad), Err(SimError::Controls(_))));
    let outside = pair((0.0, 0.0), (1.5, 0.0), 1.0, -1.0);
    assert!(matches!(simulate(&Domain::UnitDisk, &outside, &m, &GlideSet::axes(), &Controls::default()), Err(SimError::InitialConfiguration(_))));
    let touching = pair((0.0, 0.0), (1e-7, 0.0), 1.0, -1.0);
    assert!(simulate(&Domain::Plane, &touching, &m, &GlideSet::axes(), &Controls::default()).is_err());
}

#[test]
fn converging_surfaces_merge_into_one() {
    let c = Configuration::from_triples(&[
        (0.9663447278372188, 0.7753242809774603, -1.0),
        (0.6128345543048441, -0.8454289104215618, -1.0),
        (0.6969903122243424, 0.2729270719956709, -1.0),
        (0.7734080920597748, -0.5595982737643501, 1.0),
    ])
    .unwrap();
    let controls = Controls { t_max: 2.0, ..Controls::default() };
    let rec = simulate(&Domain::Plane, &c, &Material::isotropic(), &GlideSet::diagonals(), &controls).unwrap();
    let names: Vec<&str> = rec.events.iter().map(|e| e.kind.name()).collect();
    let at = names.iter().position(|n| *n == "double_slip_exit").unwrap();
    assert_eq!(rec.events[at + 1].kind, EventKind::FineSlipEnter { index: 1, minus: 0, plus: 3, partners: vec![3] });
    assert_eq!(rec.terminal().unwrap().kind, EventKind::Collision { first: 1, second: 3 });
    check_membership(&Domain::Plane, &c, &GlideSet::diagonals(), &rec);
}

fn power_law_pair(domain: &Domain) -> SimulationRecord {
    let c = pair((0.3, 0.1), (-0.2, -0.4), 1.0, -1.0);
    let g = GlideSet::axes();
    let kin = screwdyn::inclusion::Kinetics::new(2.0, vec![1.0; 4], vec![0.0; 4], &g).unwrap();
    let controls = Controls { t_max: 100.0, ..Controls::default() };
    Simulator::new(domain, &c, &Material::isotropic(), &g, kin, controls).unwrap().run()
}

#[test]
fn simultaneous_ties_settle_jointly() {
    let rec = power_law_pair(&Domain::UnitDisk);
    assert!(rec.failure.is_none(), "{:?}", rec.failure);
    assert!(rec.events.iter().any(|e| matches!(&e.kind, EventKind::FineSlipEnter { partners, .. } if partners == &vec![1])));
    assert_eq!(rec.terminal().unwrap().kind, EventKind::Collision { first: 0, second: 1 });
}

#[test]
fn finite_time_approach_ends_in_collision() {
    let square = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)].map(|(x, y)| Vec2::new(x, y));
    let boundary = screwdyn::types::BoundaryCurve::new(&square, Some(0.02)).unwrap();
    let rec = power_law_pair(&Domain::Polygon { boundary, n_charges: 128 });
    assert!(rec.failure.is_none(), "{:?}", rec.failure);
    assert_eq!(rec.terminal().unwrap().kind, EventKind::Collision { first: 0, second: 1 });
}
