//! Initial data: constant, Gaussian bump, seeded random perturbation or a
//! snapshot file for `n0` and `c0`; the velocity is always projected onto
//! discretely divergence-free fields before the first step.

use std::path::{Path, PathBuf};

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use thiserror::Error;

use crate::config::{RunConfig, ScalarGenerator, ScalarInit, VelocityGenerator, VelocityInit};
use crate::fields::{FieldError, Grid, ScalarField, VectorField};
use crate::io::{read_snapshot, IoError, Snapshot};
use crate::linsolve::{project_div_free_with, SolveError};
use crate::stepper::SimState;

#[derive(Debug, Error)]
pub enum InitError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: snapshot has {found:?} cells on a box of {found_lengths:?}, the grid has {expected:?} on {expected_lengths:?}")]
    Shape {
        path: PathBuf,
        expected: Vec<usize>,
        found: Vec<usize>,
        expected_lengths: Vec<f64>,
        found_lengths: Vec<f64>,
    },
    #[error("{field} must be nonnegative, but the generator produced {value:e}")]
    Negative { field: &'static str, value: f64 },
    #[error("{field}: cannot rescale to mass {target}: generated total is {total:e}")]
    Mass { field: &'static str, target: f64, total: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("projecting u0: {0}")]
    Projection(#[from] SolveError),
}

/// The single named random stream: SplitMix64 (Steele, Lea and Flood) with
/// the usual constants. A `f64` draw is `(x >> 11) * 2^-53`, uniform on [0, 1).
pub struct SeededStream(SplitMix64);

impl SeededStream {
    pub fn new(seed: u64) -> Self {
        SeededStream(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_matching(grid: Grid, base: &Path, path: &str) -> Result<Snapshot, InitError> {
    let full = resolve(base, path);
    let snap = read_snapshot(&full)?;
    let dim = grid.dim();
    let expected = grid.n_cells()[..dim].to_vec();
    let expected_lengths = grid.lengths()[..dim].to_vec();
    let lengths_match = snap.lengths.len() == dim
        && snap.lengths.iter().zip(&expected_lengths).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs());
    if snap.n_cells != expected || !lengths_match {
        return Err(InitError::Shape { path: full, expected, found: snap.n_cells, expected_lengths, found_lengths: snap.lengths });
    }
    Ok(snap)
}

/// Builds `n0` or `c0`. `base` resolves relative snapshot paths.
pub fn scalar_field(grid: Grid, init: &ScalarInit, field: &'static str, base: &Path) -> Result<ScalarField, InitError> {
    let mut out = match init.generator {
        ScalarGenerator::Constant => ScalarField::constant(grid, init.value),
        ScalarGenerator::GaussianBump => {
            let two_w2 = 2.0 * init.width * init.width;
            ScalarField::from_fn(grid, |x| {
                let r2: f64 = init.center.iter().enumerate().map(|(a, c)| (x[a] - c) * (x[a] - c)).sum();
                init.base + init.amplitude * (-r2 / two_w2).exp()
            })
        }
        ScalarGenerator::SeededRandom => {
            let mut rng = SeededStream::new(init.seed);
            ScalarField::from_fn(grid, |_| init.base + init.amplitude * (2.0 * rng.next_f64() - 1.0))
        }
        ScalarGenerator::FromFile => {
            let snap = load_matching(grid, base, &init.path)?;
            let values = if field == "c0" { snap.c } else { snap.n };
            ScalarField::from_values(grid, values)?
        }
    };
    if let Some(target) = init.mass {
        let total = out.total();
        if !(total > 0.0) {
            return Err(InitError::Mass { field, target, total });
        }
        let scale = target / total;
        out.values.iter_mut().for_each(|v| *v *= scale);
    }
    let min = out.min();
    if !(min >= 0.0) {
        return Err(InitError::Negative { field, value: min });
    }
    Ok(out)
}

/// Builds `u0` before projection. Wall-normal components are zero.
pub fn raw_velocity(grid: Grid, init: &VelocityInit, base: &Path) -> Result<VectorField, InitError> {
    let mut u = match init.generator {
        VelocityGenerator::Zero => VectorField::zeros(grid),
        VelocityGenerator::Constant => VectorField::from_fn(grid, |a, _| init.value[a]),
        VelocityGenerator::SeededRandom => {
            let mut rng = SeededStream::new(init.seed);
            VectorField::from_fn(grid, |_, _| init.amplitude * (2.0 * rng.next_f64() - 1.0))
        }
        VelocityGenerator::FromFile => {
            let snap = load_matching(grid, base, &init.path)?;
            let mut u = VectorField::zeros(grid);
            for a in 0..grid.dim() {
                let cell = &snap.u[a];
                crate::fields::for_interior_faces(&grid, a, |f, l, r| u.comps[a][f] = 0.5 * (cell[l] + cell[r]));
            }
            u
        }
    };
    u.clear_boundary_normal();
    Ok(u)
}

/// The initial state described by `cfg`, with relative paths taken from `base`.
pub fn generate_initial(cfg: &RunConfig, base: &Path) -> Result<SimState, InitError> {
    let grid = cfg.grid()?;
    let n = scalar_field(grid, &cfg.initial.n0, "n0", base)?;
    let c = scalar_field(grid, &cfg.initial.c0, "c0", base)?;
    let raw = raw_velocity(grid, &cfg.initial.u0, base)?;
    let u = if raw.max_abs() == 0.0 {
        raw
    } else {
        let s = &cfg.stepping;
        project_div_free_with(&raw, s.proj_tol, s.cg_max_iter, s.precond)?.velocity
    };
    Ok(SimState::new(n, c, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::fields::divergence;

    #[test]
    fn splitmix_reference_stream() {
        // published SplitMix64 outputs for state 0
        let mut rng = SeededStream::new(0);
        assert_eq!(rng.next_u64(), 0xE220A8397B1DCDAF);
        assert_eq!(rng.next_u64(), 0x6E789E6AA1B965F4);
        assert_eq!(rng.next_u64(), 0x06C45D188009454F);
        let mut a = SeededStream::new(42);
        let mut b = SeededStream::new(42);
        for _ in 0..100 {
            let x = a.next_f64();
            assert!((0.0..1.0).contains(&x));
            assert_eq!(x.to_bits(), b.next_f64().to_bits());
        }
    }

    fn cfg(extra: &str) -> RunConfig {
        parse_config(&format!("[grid]\nn_cells = 32\n[initial]\n{extra}")).unwrap().config
    }

    #[test]
    fn constant_data() {
        let s = generate_initial(&cfg(""), Path::new(".")).unwrap();
        assert!((s.n.total() - 1.0).abs() < 1e-12);
        assert_eq!(s.c.max(), 1.0);
        assert_eq!(s.u.max_abs(), 0.0);
    }

    #[test]
    fn bump_mass_matches_quadrature() {
        let c = cfg("n0 = gaussian-bump\nn0_amplitude = 2\nn0_width = 0.1\nn0_center = 0.4 0.55\n");
        let n = scalar_field(c.grid().unwrap(), &c.initial.n0, "n0", Path::new(".")).unwrap();
        assert!(n.min() >= 0.0);
        // midpoint rule on a finer lattice of the same integrand
        let m = 256;
        let h = 1.0 / m as f64;
        let mut oracle = 0.0;
        for i in 0..m {
            for j in 0..m {
                let (x, y) = ((i as f64 + 0.5) * h - 0.4, (j as f64 + 0.5) * h - 0.55);
                oracle += 2.0 * (-(x * x + y * y) / 0.02).exp() * h * h;
            }
        }
        assert!((n.total() - oracle).abs() < 1e-3 * oracle, "{} vs {oracle}", n.total());

        let scaled = cfg("n0 = gaussian-bump\nn0_mass = 1\n");
        let n = scalar_field(scaled.grid().unwrap(), &scaled.initial.n0, "n0", Path::new(".")).unwrap();
        assert!((n.total() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn seeded_random_is_reproducible_and_checked() {
        let c = cfg("n0 = seeded-random\nn0_seed = 7\nn0_base = 1\nn0_amplitude = 0.5\nu0 = seeded-random\nu0_amplitude = 1\n");
        let a = generate_initial(&c, Path::new(".")).unwrap();
        let b = generate_initial(&c, Path::new(".")).unwrap();
        assert_eq!(a.n, b.n);
        assert_eq!(a.u, b.u);
        assert!(a.n.min() >= 0.5 && a.n.max() < 1.5);
        assert!(divergence(&a.u).max_abs() <= c.stepping.proj_tol);
        assert!(a.u.max_abs() > 0.1);

        let neg = cfg("n0 = seeded-random\nn0_amplitude = 0.5\n");
        assert!(matches!(generate_initial(&neg, Path::new(".")), Err(InitError::Negative { field: "n0", .. })));
    }

    #[test]
    fn from_file_checks_shape() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg("n0 = gaussian-bump\nc0 = seeded-random\nc0_base = 2\nu0 = constant\nu0_value = 1 0\n");
        let s = generate_initial(&c, dir.path()).unwrap();
        crate::io::write_snapshot(&dir.path().join("s.bin"), &Snapshot::of(&s), crate::config::SnapshotFormat::Bin).unwrap();

        let back = cfg("n0 = from-file\nn0_path = s.bin\nc0 = from-file\nc0_path = s.bin\nu0 = from-file\nu0_path = s.bin\n");
        let t = generate_initial(&back, dir.path()).unwrap();
        assert_eq!(t.n, s.n);
        assert_eq!(t.c, s.c);
        assert!(divergence(&t.u).max_abs() <= c.stepping.proj_tol);

        let other = parse_config("[grid]\nn_cells = 16 32\n[initial]\nn0 = from-file\nn0_path = s.bin\n").unwrap().config;
        match generate_initial(&other, dir.path()) {
            Err(InitError::Shape { expected, found, .. }) => {
                assert_eq!(expected, vec![16, 32]);
                assert_eq!(found, vec![32, 32]);
            }
            r => panic!("{:?}", r.map(|_| ())),
        }
    }
}
