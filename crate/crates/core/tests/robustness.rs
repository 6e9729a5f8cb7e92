use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use screwdyn::inclusion::Kinetics;
use screwdyn::integrator::*;
use screwdyn::{Configuration, Dislocation, Domain, GlideSet, Material, Vec2};

fn random_glide(rng: &mut ChaCha8Rng, k: usize) -> GlideSet {
    match k % 4 {
        0 => GlideSet::axes(),
        1 => GlideSet::diagonals(),
        2 => GlideSet::axes_and_diagonal(),
        _ => {
            let m = rng.gen_range(2..=3);
            let a: Vec<f64> = (0..m).map(|i| 180.0 * i as f64 / m as f64 + rng.gen_range(0.0..30.0)).collect();
            GlideSet::from_angles_deg(&a).unwrap()
        }
    }
}

fn random_config(rng: &mut ChaCha8Rng, domain: &Domain, upper: bool) -> Configuration {
    let n = rng.gen_range(2..=6);
    let mut d: Vec<Dislocation> = vec![];
    while d.len() < n {
        let x = rng.gen_range(-0.7..0.7);
        let y: f64 = rng.gen_range(-0.7..0.7);
        let p = Vec2::new(x, if upper { y.abs() + 0.1 } else { y });
        if domain.boundary_distance(p) < 0.05 || d.iter().any(|q| (q.position - p).norm() < 0.05) {
            continue;
        }
        d.push(Dislocation::new(p.x, p.y, if rng.gen_bool(0.5) { 1.0 } else { -1.0 }));
    }
    Configuration::new(d).unwrap()
}

// Near-contact power-law approaches, ties meeting at walls and several
// simultaneous ties must all end in a typed event.
#[test]
fn random_runs_end_in_typed_events() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut ends = BTreeMap::new();
    for k in 0..400 {
        let domain = [Domain::UnitDisk, Domain::HalfPlane, Domain::Plane][k % 3].clone();
        let c = random_config(&mut rng, &domain, k % 3 == 1);
        let g = random_glide(&mut rng, k);
        let p = [1.0, 2.0, 3.0][rng.gen_range(0..3)];
        let mobility: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(0.5..2.0)).collect();
        let kin = Kinetics::new(p, mobility, vec![0.0; g.len()], &g).unwrap();
        let controls = Controls { t_max: 50.0, ..Controls::default() };
        let rec = Simulator::new(&domain, &c, &Material::isotropic(), &g, kin, controls).unwrap().run();
        assert!(rec.failure.is_none(), "run {k} ({} dislocations, p = {p}): {:?}", c.len(), rec.failure);
        *ends.entry(rec.terminal().expect("terminal event").kind.name()).or_insert(0) += 1;
    }
    assert!(ends.len() >= 3, "{ends:?}");
}
