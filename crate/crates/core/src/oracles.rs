//! Independent brute-force references for the test suite. Nothing here
//! calls into the modules it is used to check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::types::{Configuration, Material};

/// Least-squares solve through the SVD.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let cut = 1e-13 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, cut).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Nonnegative least squares by the active-set method of Lawson and Hanson.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let tol = 1e-14 * a.norm().max(1.0) * b.norm().max(1.0);
    for _ in 0..3 * n + 3 {
        let w = a.transpose() * (b - a * &x);
        let next = (0..n).filter(|&j| !passive[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = next else { break };
        passive[j] = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&k| passive[k]).collect();
            let sub = DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])]);
            let zs = lstsq(&sub, b);
            let mut s = DVector::zeros(n);
            for (c, &k) in cols.iter().enumerate() {
                s[k] = zs[c];
            }
            if cols.iter().all(|&k| s[k] > 0.0) {
                x = s;
                break;
            }
            let mut step: f64 = 1.0;
            for &k in &cols {
                if s[k] <= 0.0 {
                    step = step.min(x[k] / (x[k] - s[k]));
                }
            }
            x = &x + (s - &x) * step;
            for &k in &cols {
                if x[k] <= 1e-15 {
                    x[k] = 0.0;
                    passive[k] = false;
                }
            }
            if !passive.iter().any(|p| *p) {
                break;
            }
        }
    }
    x
}

/// Whether `probe` is a convex combination of `corners` up to `tol`.
///
/// Up to eight corners every subset is tried as a simplex carrying the
/// barycentric coordinates; beyond that a nonnegative least-squares fit of
/// the weights is used.
pub fn brute_force_hull_membership(corners: &[Vec<f64>], probe: &[f64], tol: f64) -> bool {
    let m = corners.len();
    let d = probe.len();
    if m == 0 || corners.iter().any(|c| c.len() != d) {
        return false;
    }
    let system = |cols: &[usize]| {
        let a = DMatrix::from_fn(d + 1, cols.len(), |r, c| if r < d { corners[cols[c]][r] } else { 1.0 });
        let mut b = DVector::from_column_slice(probe).resize_vertically(d + 1, 1.0);
        b[d] = 1.0;
        (a, b)
    };
    if m <= 8 {
        for mask in 1usize..1 << m {
            let cols: Vec<usize> = (0..m).filter(|k| mask >> k & 1 == 1).collect();
            if cols.len() > d + 1 {
                continue;
            }
            let (a, b) = system(&cols);
            let lam = lstsq(&a, &b);
            if lam.iter().all(|l| *l >= -tol) && (&a * &lam - &b).norm() <= tol {
                return true;
            }
        }
        false
    } else {
        let cols: Vec<usize> = (0..m).collect();
        let (a, b) = system(&cols);
        let lam = nnls(&a, &b);
        (&a * &lam - &b).norm() <= tol
    }
}

/// Four one-sided fields and two normals satisfying the attracting sign
/// conditions; the first surface belongs to dislocation 0 and the second
/// to dislocation 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleInstance {
    pub fpp: Vec<f64>,
    pub fpm: Vec<f64>,
    pub fmp: Vec<f64>,
    pub fmm: Vec<f64>,
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
}

fn d(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl DoubleInstance {
    /// All eight sign conditions.
    pub fn attracting(&self) -> bool {
        let (n1, n2) = (&self.n1, &self.n2);
        d(n1, &self.fpp) < 0.0
            && d(n1, &self.fpm) < 0.0
            && d(n1, &self.fmp) > 0.0
            && d(n1, &self.fmm) > 0.0
            && d(n2, &self.fpp) < 0.0
            && d(n2, &self.fpm) > 0.0
            && d(n2, &self.fmp) < 0.0
            && d(n2, &self.fmm) > 0.0
    }

    /// `det A` with `a_i1 = n_i·(f^(+,+) − f^(−,+))`, `a_i2 = n_i·(f^(+,+) − f^(+,−))`.
    pub fn det(&self) -> f64 {
        let c1: Vec<f64> = self.fpp.iter().zip(&self.fmp).map(|(a, b)| a - b).collect();
        let c2: Vec<f64> = self.fpp.iter().zip(&self.fpm).map(|(a, b)| a - b).collect();
        d(&self.n1, &c1) * d(&self.n2, &c2) - d(&self.n1, &c2) * d(&self.n2, &c1)
    }
}

/// Draws product-structured fields for `n` dislocations (n ≥ 2) with
/// random unit normals; `None` when the draw violates a sign condition.
pub fn random_double_instance<R: Rng>(rng: &mut R, n: usize) -> Option<DoubleInstance> {
    let dim = 2 * n;
    let unit = |rng: &mut R| {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let len = d(&v, &v).sqrt();
        v.into_iter().map(|x| x / len).collect::<Vec<f64>>()
    };
    let n1 = unit(rng);
    let n2 = unit(rng);
    let others: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let pick = |rng: &mut R| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let (k_plus, k_minus, l_plus, l_minus) = (pick(rng), pick(rng), pick(rng), pick(rng));
    let field = |k: [f64; 2], l: [f64; 2]| {
        let mut f = others.clone();
        f[0] = k[0];
        f[1] = k[1];
        f[2] = l[0];
        f[3] = l[1];
        f
    };
    let inst = DoubleInstance {
        fpp: field(k_plus, l_plus),
        fpm: field(k_plus, l_minus),
        fmp: field(k_minus, l_plus),
        fmm: field(k_minus, l_minus),
        n1,
        n2,
    };
    inst.attracting().then_some(inst)
}

/// Outcome of [`det_a_property_trial`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialReport {
    pub trials: usize,
    pub passes: usize,
    /// Draws discarded by the sign-condition filter.
    pub discarded: usize,
}

/// Draws `n_trials` attracting instances and counts those with `det A > 0`.
pub fn det_a_property_trial(seed: u64, n_trials: usize) -> TrialReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passes = 0;
    let mut discarded = 0;
    let mut trials = 0;
    while trials < n_trials {
        let n = rng.gen_range(2..=4);
        match random_double_instance(&mut rng, n) {
            Some(inst) => {
                trials += 1;
                if inst.det() > 0.0 {
                    passes += 1;
                }
            }
            None => discarded += 1,
        }
    }
    TrialReport { trials, passes, discarded }
}

/// `U = −(μλ/2π) Σ_{i<j} b_i b_j log|Λ(z_i − z_j)|`, written out directly.
pub fn plane_energy(config: &Configuration, material: &Material) -> f64 {
    let (mu, lambda) = (material.mu(), material.lambda());
    let d = config.dislocations();
    let mut u = 0.0;
    for i in 0..d.len() {
        for k in i + 1..d.len() {
            let dx = d[i].position.x - d[k].position.x;
            let dy = d[i].position.y - d[k].position.y;
            u += d[i].burgers * d[k].burgers * (lambda * dx).hypot(dy).ln();
        }
    }
    -mu * lambda * u / (2.0 * std::f64::consts::PI)
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, z: &[f64], h: f64) -> Vec<f64> {
    let mut w = z.to_vec();
    (0..z.len())
        .map(|i| {
            w[i] = z[i] + h;
            let fp = f(&w);
            w[i] = z[i] - h;
            let fm = f(&w);
            w[i] = z[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Jacobian of a vector function by Richardson extrapolation of central
/// differences with steps `h` and `h/2`; entry `(r, c)` is `∂f_r/∂z_c`.
pub fn richardson_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, z: &[f64], h: f64) -> DMatrix<f64> {
    let central = |h: f64| {
        let mut w = z.to_vec();
        let cols: Vec<Vec<f64>> = (0..z.len())
            .map(|i| {
                w[i] = z[i] + h;
                let fp = f(&w);
                w[i] = z[i] - h;
                let fm = f(&w);
                w[i] = z[i];
                fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
            })
            .collect();
        DMatrix::from_fn(cols[0].len(), z.len(), |r, c| cols[c][r])
    };
    (central(h / 2.0) * 4.0 - central(h)) / 3.0
}

/// Counterclockwise circulation `∮ h·t ds` of a planar field by the
/// periodic trapezoid rule with `n` nodes.
pub fn circulation<F: Fn(f64, f64) -> (f64, f64)>(field: F, center: (f64, f64), radius: f64, n: usize) -> f64 {
    let step = 2.0 * std::f64::consts::PI / n as f64;
    (0..n)
        .map(|k| {
            let (s, c) = (k as f64 * step).sin_cos();
            let (hx, hy) = field(center.0 + radius * c, center.1 + radius * s);
            -hx * s + hy * c
        })
        .sum::<f64>()
        * radius
        * step
}
