//! Continuous model data of the chemotaxis-Stokes system.
//!
//! Holds the diffusion law `D`, the consumption law `f`, the chemotactic
//! sensitivity tensor `S` with its envelope `S0`, the gravitational potential
//! `phi`, the regularized coefficients `D_eps` and `S_eps`, and the checker for
//! the exponent regime under which the boundedness results hold.
//!
//! Everything here is a pure function of its arguments.

use thiserror::Error;

/// Small 3x3 matrix; in two dimensions only the leading 2x2 block is used.
pub type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{what} must be nonnegative, got {value}")]
    NegativeArgument { what: &'static str, value: f64 },
    #[error("point {point:?} lies outside the domain box {lengths:?}")]
    OutsideDomain { point: [f64; 3], lengths: [f64; 3] },
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
}

/// Selector for the diffusion law `D(n)`.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionLaw {
    /// `D(n) = m n^(m-1)`; the lower-bound constant is `k_D = m`.
    Prototype,
    /// `D(n) = coeff n^(m-1) + offset` with `offset >= 0`.
    PowerPlusConstant { coeff: f64, offset: f64 },
    /// Piecewise-linear through knots `(n_i, D_i)` starting at `n = 0`,
    /// continued beyond the last knot by `D_last (n / n_last)^(m-1)`.
    Table { knots: Vec<(f64, f64)> },
}

/// Selector for the consumption law `f(c)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConsumptionLaw {
    /// `f(c) = c`
    Linear,
    /// `f(c) = c / (1 + c)`
    Saturating,
    /// `f(c) = rate c^exponent`, `exponent >= 1`.
    Power { rate: f64, exponent: f64 },
}

/// Selector for the sensitivity tensor `S(x, n, c)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SensitivityLaw {
    /// `chi0 I`
    Scalar { chi0: f64 },
    /// `chi0 (I + delta R)` with `R` the canonical antisymmetric generator:
    /// the 90 degree rotation in 2D, rotation about the vertical axis in 3D.
    Rotation { chi0: f64, delta: f64 },
    /// A constant matrix.
    Matrix { entries: Mat3 },
}

/// Gravitational potential `phi`.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    /// `phi(x) = g . x`
    Linear { gradient: [f64; 3] },
    /// `phi(x) = amplitude sin(2 pi wavenumber x_axis)`
    Sinusoidal { amplitude: f64, axis: usize, wavenumber: f64 },
}

/// All data of the continuous model, including the box it lives on.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    /// Box extents; entries beyond `dim` are ignored.
    pub lengths: [f64; 3],
    pub m: f64,
    pub kappa_d: f64,
    pub eps: f64,
    pub diffusion: DiffusionLaw,
    pub consumption: ConsumptionLaw,
    pub sensitivity: SensitivityLaw,
    pub potential: Potential,
    /// Demand `f(c) > 0` for `c > 0`, needed for stabilization toward equilibrium.
    pub require_positive_consumption: bool,
}

/// `n^e` with fast paths for the exponents that show up in practice.
#[inline]
pub(crate) fn pow_nonneg(n: f64, e: f64) -> f64 {
    if e == 1.0 {
        n
    } else if e == 0.0 {
        1.0
    } else if e == 2.0 {
        n * n
    } else if e == 0.5 {
        n.sqrt()
    } else if e == 1.5 {
        n * n.sqrt()
    } else if e.fract() == 0.0 && e.abs() < 32.0 {
        n.powi(e as i32)
    } else {
        n.powf(e)
    }
}

/// Quintic smoothstep on `[0, 1]`, clamped outside.
#[inline]
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    }
}

impl ModelParams {
    /// Prototype configuration: `D(n) = m n^(m-1)`, `f(c) = c`, `S = I`, `phi = 0`.
    pub fn prototype(dim: usize, lengths: [f64; 3], m: f64, eps: f64) -> Result<Self, ModelError> {
        let params = ModelParams {
            dim,
            lengths,
            m,
            kappa_d: m,
            eps,
            diffusion: DiffusionLaw::Prototype,
            consumption: ConsumptionLaw::Linear,
            sensitivity: SensitivityLaw::Scalar { chi0: 1.0 },
            potential: Potential::Linear { gradient: [0.0; 3] },
            require_positive_consumption: false,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks parameter ranges and samples the structural hypotheses on `D`, `S` and `f`.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |s: String| Err(ModelError::InvalidParameter(s));
        if self.dim != 2 && self.dim != 3 {
            return bad(format!("dim must be 2 or 3, got {}", self.dim));
        }
        if self.lengths[..self.dim].iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return bad(format!("box lengths must be positive, got {:?}", self.lengths));
        }
        if !(self.m > 1.0 && self.m.is_finite()) {
            return bad(format!("m must exceed 1, got {}", self.m));
        }
        if !(self.kappa_d > 0.0 && self.kappa_d.is_finite()) {
            return bad(format!("kappa_d must be positive, got {}", self.kappa_d));
        }
        if !(self.eps > 0.0 && self.eps <= 1.0) {
            return bad(format!("eps must lie in (0, 1], got {}", self.eps));
        }
        match &self.diffusion {
            DiffusionLaw::Prototype => {}
            DiffusionLaw::PowerPlusConstant { coeff, offset } => {
                if !(*coeff > 0.0) || !(*offset >= 0.0) {
                    return bad(format!(
                        "power-plus-constant diffusion needs coeff > 0 and offset >= 0, got {coeff}, {offset}"
                    ));
                }
            }
            DiffusionLaw::Table { knots } => {
                if knots.len() < 2 || knots[0].0 != 0.0 {
                    return bad("diffusion table needs at least two knots, the first at n = 0".into());
                }
                if knots.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return bad("diffusion table knots must be strictly increasing in n".into());
                }
                if knots.iter().any(|&(_, d)| !(d >= 0.0 && d.is_finite())) {
                    return bad("diffusion table values must be finite and nonnegative".into());
                }
            }
        }
        match &self.consumption {
            ConsumptionLaw::Linear | ConsumptionLaw::Saturating => {}
            ConsumptionLaw::Power { rate, exponent } => {
                if !(*rate >= 0.0) || !(*exponent >= 1.0) {
                    return bad(format!("power consumption needs rate >= 0 and exponent >= 1, got {rate}, {exponent}"));
                }
            }
        }
        match &self.sensitivity {
            SensitivityLaw::Scalar { chi0 } | SensitivityLaw::Rotation { chi0, .. } if !chi0.is_finite() => {
                return bad("chi0 must be finite".into());
            }
            SensitivityLaw::Rotation { delta, .. } if !delta.is_finite() => {
                return bad("rotation delta must be finite".into());
            }
            SensitivityLaw::Matrix { entries } if entries.iter().flatten().any(|v| !v.is_finite()) => {
                return bad("sensitivity matrix entries must be finite".into());
            }
            _ => {}
        }
        if let Potential::Sinusoidal { axis, .. } = self.potential {
            if axis >= self.dim {
                return bad(format!("potential axis {axis} out of range for dim {}", self.dim));
            }
        }

        // Lower bound D(n) >= k_D n^(m-1), sampled on a log-spaced set plus 0.
        for n in self.sample_densities() {
            let d = self.diffusion(n)?;
            let lower = self.kappa_d * pow_nonneg(n, self.m - 1.0);
            if d < lower * (1.0 - 1e-12) {
                return Err(ModelError::Hypothesis(format!(
                    "D({n}) = {d} is below k_D n^(m-1) = {lower}"
                )));
            }
        }
        for c in self.sample_densities() {
            let f = self.consumption(c)?;
            if f < 0.0 {
                return Err(ModelError::Hypothesis(format!("f({c}) = {f} is negative")));
            }
            if self.require_positive_consumption && c > 0.0 && f <= 0.0 {
                return Err(ModelError::Hypothesis(format!("f({c}) = {f} is not positive")));
            }
        }
        Ok(())
    }

    fn sample_densities(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        out.extend((-60..=60).map(|k| 10f64.powf(k as f64 / 10.0)));
        if let DiffusionLaw::Table { knots } = &self.diffusion {
            for w in knots.windows(2) {
                out.extend((0..=64).map(|s| w[0].0 + (w[1].0 - w[0].0) * s as f64 / 64.0));
            }
        }
        out
    }

    /// `D(n)`.
    pub fn diffusion(&self, n: f64) -> Result<f64, ModelError> {
        if !(n >= 0.0) {
            return Err(ModelError::NegativeArgument { what: "density n", value: n });
        }
        Ok(self.diffusion_unchecked(n))
    }

    #[inline]
    pub(crate) fn diffusion_unchecked(&self, n: f64) -> f64 {
        match &self.diffusion {
            DiffusionLaw::Prototype => self.m * pow_nonneg(n, self.m - 1.0),
            DiffusionLaw::PowerPlusConstant { coeff, offset } => coeff * pow_nonneg(n, self.m - 1.0) + offset,
            DiffusionLaw::Table { knots } => {
                let (n_last, d_last) = knots[knots.len() - 1];
                if n >= n_last {
                    return d_last * pow_nonneg(n / n_last, self.m - 1.0);
                }
                let seg = knots.partition_point(|&(x, _)| x <= n).max(1) - 1;
                let (x0, d0) = knots[seg];
                let (x1, d1) = knots[seg + 1];
                d0 + (d1 - d0) * (n - x0) / (x1 - x0)
            }
        }
    }

    /// `D_eps(n)`: a smoothed `max(D(n), eps)`.
    ///
    /// Uses the C1 soft maximum `max(a, b) + (h - |a - b|)^2 / (4h)` on the band
    /// `|a - b| < h` with `h = eps`, so `eps <= D_eps` and `D <= D_eps <= D + 2 eps`.
    pub fn diffusion_regularized(&self, n: f64) -> Result<f64, ModelError> {
        let d = self.diffusion(n)?;
        Ok(self.soft_floor(d))
    }

    #[inline]
    pub(crate) fn soft_floor(&self, d: f64) -> f64 {
        let h = self.eps;
        let gap = (d - h).abs();
        if gap >= h {
            d.max(h)
        } else {
            d.max(h) + (h - gap) * (h - gap) / (4.0 * h)
        }
    }

    /// `f(c)`.
    pub fn consumption(&self, c: f64) -> Result<f64, ModelError> {
        if !(c >= 0.0) {
            return Err(ModelError::NegativeArgument { what: "concentration c", value: c });
        }
        Ok(self.consumption_unchecked(c))
    }

    #[inline]
    pub(crate) fn consumption_unchecked(&self, c: f64) -> f64 {
        match self.consumption {
            ConsumptionLaw::Linear => c,
            ConsumptionLaw::Saturating => c / (1.0 + c),
            ConsumptionLaw::Power { rate, exponent } => rate * pow_nonneg(c, exponent),
        }
    }

    /// Whether `f` is exactly `c`, which makes the quotient consumption update exact.
    pub fn consumption_is_linear(&self) -> bool {
        matches!(self.consumption, ConsumptionLaw::Linear)
            || matches!(self.consumption, ConsumptionLaw::Power { rate, exponent } if rate == 1.0 && exponent == 1.0)
    }

    /// The unregularized tensor `S(x, n, c)`.
    pub fn sensitivity(&self, _x: [f64; 3], _n: f64, _c: f64) -> Mat3 {
        let mut s = [[0.0; 3]; 3];
        match self.sensitivity {
            SensitivityLaw::Scalar { chi0 } => {
                for (a, row) in s.iter_mut().enumerate().take(self.dim) {
                    row[a] = chi0;
                }
            }
            SensitivityLaw::Rotation { chi0, delta } => {
                for (a, row) in s.iter_mut().enumerate().take(self.dim) {
                    row[a] = chi0;
                }
                s[0][1] = -chi0 * delta;
                s[1][0] = chi0 * delta;
            }
            SensitivityLaw::Matrix { entries } => {
                for a in 0..self.dim {
                    for b in 0..self.dim {
                        s[a][b] = entries[a][b];
                    }
                }
            }
        }
        s
    }

    /// Whether `S` has no off-diagonal entries (drift along an axis sees only that axis' gradient).
    pub fn sensitivity_is_diagonal(&self) -> bool {
        let s = self.sensitivity([0.0; 3], 0.0, 0.0);
        (0..self.dim).all(|a| (0..self.dim).all(|b| a == b || s[a][b] == 0.0))
    }

    /// Nondecreasing envelope `S0(c)` with `|S(x, n, c)|_F <= S0(c)`.
    pub fn s0_bound(&self, _c: f64) -> f64 {
        let root_dim = (self.dim as f64).sqrt();
        match self.sensitivity {
            SensitivityLaw::Scalar { chi0 } => chi0.abs() * root_dim,
            SensitivityLaw::Rotation { chi0, delta } => chi0.abs() * (1.0 + delta.abs()) * root_dim,
            SensitivityLaw::Matrix { .. } => frobenius(&self.sensitivity([0.0; 3], 0.0, 0.0), self.dim),
        }
    }

    /// Euclidean diameter of the box.
    pub fn diameter(&self) -> f64 {
        self.lengths[..self.dim].iter().map(|l| l * l).sum::<f64>().sqrt()
    }

    /// Domain cutoff `rho_eps(x)`: 0 on the boundary, 1 at distance `>= eps diam` from it.
    pub fn cutoff_domain(&self, x: [f64; 3]) -> Result<f64, ModelError> {
        let tol = 1e-12 * self.diameter();
        let mut dist = f64::INFINITY;
        for a in 0..self.dim {
            if x[a] < -tol || x[a] > self.lengths[a] + tol || !x[a].is_finite() {
                return Err(ModelError::OutsideDomain { point: x, lengths: self.lengths });
            }
            dist = dist.min(x[a].max(0.0)).min((self.lengths[a] - x[a]).max(0.0));
        }
        Ok(smoothstep(dist / (self.eps * self.diameter())))
    }

    /// Density cutoff `chi_eps(n)`: 1 on `[0, 1/eps]`, 0 on `[2/eps, inf)`.
    #[inline]
    pub fn cutoff_density(&self, n: f64) -> f64 {
        1.0 - smoothstep(n * self.eps - 1.0)
    }

    /// `S_eps(x, n, c) = rho_eps(x) chi_eps(n) S(x, n, c)`.
    pub fn sensitivity_regularized(&self, x: [f64; 3], n: f64, c: f64) -> Result<Mat3, ModelError> {
        if !(n >= 0.0) {
            return Err(ModelError::NegativeArgument { what: "density n", value: n });
        }
        if !(c >= 0.0) {
            return Err(ModelError::NegativeArgument { what: "concentration c", value: c });
        }
        let scale = self.cutoff_domain(x)? * self.cutoff_density(n);
        let mut s = self.sensitivity(x, n, c);
        for row in s.iter_mut() {
            for v in row.iter_mut() {
                *v *= scale;
            }
        }
        Ok(s)
    }

    /// `grad phi(x)`.
    pub fn potential_gradient(&self, x: [f64; 3]) -> [f64; 3] {
        match self.potential {
            Potential::Linear { gradient } => {
                let mut g = [0.0; 3];
                g[..self.dim].copy_from_slice(&gradient[..self.dim]);
                g
            }
            Potential::Sinusoidal { amplitude, axis, wavenumber } => {
                let k = 2.0 * std::f64::consts::PI * wavenumber;
                let mut g = [0.0; 3];
                g[axis] = amplitude * k * (k * x[axis]).cos();
                g
            }
        }
    }

    /// `phi(x)`.
    pub fn potential(&self, x: [f64; 3]) -> f64 {
        match self.potential {
            Potential::Linear { gradient } => (0..self.dim).map(|a| gradient[a] * x[a]).sum(),
            Potential::Sinusoidal { amplitude, axis, wavenumber } => {
                amplitude * (2.0 * std::f64::consts::PI * wavenumber * x[axis]).sin()
            }
        }
    }
}

/// Frobenius norm of the leading `dim x dim` block.
pub fn frobenius(s: &Mat3, dim: usize) -> f64 {
    s.iter().take(dim).flat_map(|row| row.iter().take(dim)).map(|v| v * v).sum::<f64>().sqrt()
}

/// Exponents `(m, p, q, r)` to test against the boundedness regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeQuery {
    pub m: f64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

/// One inequality of the regime, evaluated as `lhs <op> rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub strict: bool,
    pub holds: bool,
    /// Both sides agree to rounding; strict inequalities fail here.
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub query: RegimeQuery,
    pub checks: Vec<RegimeCheck>,
}

impl RegimeReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn check(&self, name: &str) -> Option<&RegimeCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl std::fmt::Display for RegimeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let RegimeQuery { m, p, q, r } = self.query;
        writeln!(f, "regime check for m = {m}, p = {p}, q = {q}, r = {r}")?;
        for c in &self.checks {
            let op = if c.strict { "<" } else { "<=" };
            let tag = match (c.holds, c.boundary) {
                (true, false) => "pass",
                (true, true) => "pass (boundary)",
                (false, true) => "FAIL (boundary)",
                (false, false) => "FAIL",
            };
            writeln!(f, "  {:<34} {:>12.6} {op:<2} {:<12.6} {tag}", c.name, c.lhs, c.rhs)?;
        }
        write!(f, "overall: {}", if self.all_pass() { "pass" } else { "FAIL" })
    }
}

pub const CHECK_M: &str = "7/6 < m";
pub const CHECK_P_LOWER: &str = "max{1, m-1} < p";
pub const CHECK_Q: &str = "1 < q";
pub const CHECK_R: &str = "1 <= r";
pub const CHECK_R_SMALL: &str = "q < (2r+3)/3  [r <= 3/2]";
pub const CHECK_R_LARGE: &str = "(4-2r)q <= r-1  [r > 3/2]";
pub const CHECK_P_WINDOW_LOW: &str = "(3q-3m+4)/3 < p";
pub const CHECK_P_WINDOW_HIGH: &str = "p < (2m-4/3)q + m-1";
pub const CHECK_P_CEILING: &str = "p < 5m - 11/3";

fn compare(name: &'static str, lhs: f64, rhs: f64, strict: bool) -> RegimeCheck {
    let scale = 1f64.max(lhs.abs()).max(rhs.abs());
    let boundary = (lhs - rhs).abs() <= 1e-12 * scale;
    let holds = if strict { lhs < rhs && !boundary } else { lhs <= rhs || boundary };
    RegimeCheck { name, lhs, rhs, strict, holds, boundary }
}

/// Evaluates every exponent condition of the boundedness argument as printed,
/// strict where strict. Near-ties (relative 1e-12) are flagged as boundary cases.
pub fn validate_regime(query: RegimeQuery) -> RegimeReport {
    let RegimeQuery { m, p, q, r } = query;
    let mut checks = vec![
        compare(CHECK_M, 7.0 / 6.0, m, true),
        compare(CHECK_P_LOWER, 1f64.max(m - 1.0), p, true),
        compare(CHECK_Q, 1.0, q, true),
        compare(CHECK_R, 1.0, r, false),
    ];
    if r <= 1.5 {
        checks.push(compare(CHECK_R_SMALL, q, (2.0 * r + 3.0) / 3.0, true));
    } else {
        checks.push(compare(CHECK_R_LARGE, (4.0 - 2.0 * r) * q, r - 1.0, false));
    }
    checks.push(compare(CHECK_P_WINDOW_LOW, (3.0 * q - 3.0 * m + 4.0) / 3.0, p, true));
    checks.push(compare(CHECK_P_WINDOW_HIGH, p, (2.0 * m - 4.0 / 3.0) * q + m - 1.0, true));
    checks.push(compare(CHECK_P_CEILING, p, 5.0 * m - 11.0 / 3.0, true));
    RegimeReport { query, checks }
}
