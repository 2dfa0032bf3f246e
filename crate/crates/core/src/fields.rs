//! MAC-grid geometry and discrete calculus on an axis-aligned box.
//!
//! Scalars live at cell centers, vector components on the faces normal to
//! their axis. Cells are numbered lexicographically with the first axis
//! fastest: `idx = i + nx * (j + ny * k)`. Face arrays for axis `a` use the
//! same ordering over a shape with one extra entry along `a`.
//!
//! Two-dimensional grids carry a trailing axis with a single cell so that all
//! index arithmetic is shared; loops only ever visit the first `dim` axes.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("field shape mismatch: expected {expected} values, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("cannot raise negative value {value} at cell {cell} to fractional power {power}")]
    NegativeBase { cell: usize, value: f64, power: f64 },
}

/// Boundary closure for scalar Laplacians.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    /// Zero normal derivative: the ghost value mirrors the boundary cell.
    Neumann,
    /// Zero value on the wall: the ghost value is the negated boundary cell.
    Dirichlet0,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 3],
    lengths: [f64; 3],
    dx: [f64; 3],
}

impl Grid {
    /// Builds a 2D or 3D grid; `n_cells` and `lengths` must both have `dim` entries.
    pub fn new(n_cells: &[usize], lengths: &[f64]) -> Result<Self, FieldError> {
        let dim = n_cells.len();
        if dim != 2 && dim != 3 {
            return Err(FieldError::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if lengths.len() != dim {
            return Err(FieldError::InvalidGrid(format!(
                "{} lengths given for a {dim}-dimensional grid",
                lengths.len()
            )));
        }
        let mut n = [1usize; 3];
        let mut l = [1.0; 3];
        let mut dx = [1.0; 3];
        for a in 0..dim {
            if n_cells[a] < 4 {
                return Err(FieldError::InvalidGrid(format!(
                    "need at least 4 cells per axis, axis {a} has {}",
                    n_cells[a]
                )));
            }
            if !(lengths[a] > 0.0 && lengths[a].is_finite()) {
                return Err(FieldError::InvalidGrid(format!("axis {a} length must be positive, got {}", lengths[a])));
            }
            n[a] = n_cells[a];
            l[a] = lengths[a];
            dx[a] = lengths[a] / n_cells[a] as f64;
        }
        Ok(Grid { dim, n, lengths: l, dx })
    }

    /// Unit box with `cells` cells per axis.
    pub fn unit(dim: usize, cells: usize) -> Result<Self, FieldError> {
        Grid::new(&vec![cells; dim], &vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cell counts; unused trailing axes report 1.
    pub fn n_cells(&self) -> [usize; 3] {
        self.n
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.dx
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx[..self.dim].iter().product()
    }

    /// `|Omega|`
    pub fn volume(&self) -> f64 {
        self.lengths[..self.dim].iter().product()
    }

    pub fn diameter(&self) -> f64 {
        self.lengths[..self.dim].iter().map(|l| l * l).sum::<f64>().sqrt()
    }

    pub fn num_cells(&self) -> usize {
        self.n.iter().product()
    }

    /// Shape of the face array holding the component normal to `axis`.
    pub fn face_shape(&self, axis: usize) -> [usize; 3] {
        let mut s = self.n;
        s[axis] += 1;
        s
    }

    pub fn num_faces(&self, axis: usize) -> usize {
        self.face_shape(axis).iter().product()
    }

    /// Index step between neighboring cells along `axis`.
    pub fn cell_stride(&self, axis: usize) -> usize {
        shape_stride(self.n, axis)
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn cell_coords(&self, idx: usize) -> [usize; 3] {
        [idx % self.n[0], (idx / self.n[0]) % self.n[1], idx / (self.n[0] * self.n[1])]
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            (i as f64 + 0.5) * self.dx[0],
            (j as f64 + 0.5) * self.dx[1],
            (k as f64 + 0.5) * self.dx[2],
        ]
    }

    /// Center of face `(i, j, k)` in the face array of `axis`.
    pub fn face_center(&self, axis: usize, i: usize, j: usize, k: usize) -> [f64; 3] {
        let mut x = self.cell_center(i, j, k);
        x[axis] -= 0.5 * self.dx[axis];
        x
    }

    /// Cell centers in storage order.
    pub fn cell_centers(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.num_cells());
        for_each_index(self.n, |i, j, k, _| out.push(self.cell_center(i, j, k)));
        out
    }

    /// Face centers of `axis` in storage order.
    pub fn face_centers(&self, axis: usize) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.num_faces(axis));
        for_each_index(self.face_shape(axis), |i, j, k, _| out.push(self.face_center(axis, i, j, k)));
        out
    }

    /// Whether a face of `axis` with coordinate `ia` along that axis lies on the boundary.
    #[inline]
    pub fn is_boundary_face(&self, axis: usize, ia: usize) -> bool {
        ia == 0 || ia == self.n[axis]
    }

    /// Whether the cell is at least `margin` cells away from every wall.
    pub fn is_interior(&self, idx: usize, margin: usize) -> bool {
        let c = self.cell_coords(idx);
        (0..self.dim).all(|a| c[a] >= margin && c[a] + margin < self.n[a])
    }
}

#[inline]
pub(crate) fn shape_stride(shape: [usize; 3], axis: usize) -> usize {
    match axis {
        0 => 1,
        1 => shape[0],
        _ => shape[0] * shape[1],
    }
}

/// Visits every index of a 3-index box in storage order.
#[inline]
pub(crate) fn for_each_index(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize, usize)) {
    let mut idx = 0;
    for k in 0..shape[2] {
        for j in 0..shape[1] {
            for i in 0..shape[0] {
                f(i, j, k, idx);
                idx += 1;
            }
        }
    }
}

/// Visits the interior faces normal to `axis` row by row as
/// `(first face, first left cell, first right cell, row length)`; within a
/// row all three indices advance by one.
#[inline]
pub(crate) fn for_interior_face_rows(grid: &Grid, axis: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let n = grid.n_cells();
    let fshape = grid.face_shape(axis);
    let cs = grid.cell_stride(axis);
    let start = |a: usize| usize::from(a == axis && a > 0);
    let (skip, len) = if axis == 0 { (1, n[0] - 1) } else { (0, n[0]) };
    for k in start(2)..n[2] {
        for j in start(1)..n[1] {
            let fb = fshape[0] * (j + fshape[1] * k);
            let cb = n[0] * (j + n[1] * k);
            f(fb + skip, cb + skip - cs, cb + skip, len);
        }
    }
}

/// Visits the interior faces normal to `axis` in storage order as
/// `(face, left cell, right cell)`.
#[inline]
pub(crate) fn for_interior_faces(grid: &Grid, axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    for_interior_face_rows(grid, axis, |fb, lb, rb, len| {
        for i in 0..len {
            f(fb + i, lb + i, rb + i);
        }
    });
}

/// `out = scale * div(field)`, summing the axes in order.
pub(crate) fn divergence_into(field: &VectorField, scale: f64, out: &mut [f64]) {
    let grid = field.grid;
    let n = grid.n_cells();
    let dx = grid.spacing();
    out.fill(0.0);
    for a in 0..grid.dim() {
        let fshape = grid.face_shape(a);
        let fs = shape_stride(fshape, a);
        let inv = scale / dx[a];
        let comp = &field.comps[a];
        for k in 0..n[2] {
            for j in 0..n[1] {
                let cb = n[0] * (j + n[1] * k);
                let fb = fshape[0] * (j + fshape[1] * k);
                let o = &mut out[cb..cb + n[0]];
                if a == 0 {
                    for (ov, w) in o.iter_mut().zip(comp[fb..fb + n[0] + 1].windows(2)) {
                        *ov += (w[1] - w[0]) * inv;
                    }
                } else {
                    let (l, r) = (&comp[fb..fb + n[0]], &comp[fb + fs..fb + fs + n[0]]);
                    for ((ov, lv), rv) in o.iter_mut().zip(l).zip(r) {
                        *ov += (rv - lv) * inv;
                    }
                }
            }
        }
    }
}

/// `u -= grad(p)` on interior faces (Neumann closure leaves walls alone).
pub(crate) fn sub_gradient(p: &[f64], u: &mut VectorField) {
    let grid = u.grid;
    let dx = grid.spacing();
    for a in 0..grid.dim() {
        let inv = 1.0 / dx[a];
        let comp = &mut u.comps[a];
        for_interior_face_rows(&grid, a, |fb, lb, rb, len| {
            let row = comp[fb..fb + len].iter_mut().zip(p[lb..lb + len].iter().zip(&p[rb..rb + len]));
            for (v, (l, r)) in row {
                *v -= (r - l) * inv;
            }
        });
    }
}

/// Cell-centered scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField { grid, values: vec![0.0; grid.num_cells()] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        ScalarField { grid, values: vec![value; grid.num_cells()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.num_cells() {
            return Err(FieldError::ShapeMismatch { expected: grid.num_cells(), found: values.len() });
        }
        Ok(ScalarField { grid, values })
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: Grid, f: impl FnMut([f64; 3]) -> f64) -> Self {
        let values = grid.cell_centers().into_iter().map(f).collect();
        ScalarField { grid, values }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `sum v dV`
    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.total() / self.grid.volume()
    }

    /// dV-weighted inner product.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_volume()
    }

    /// dV-weighted L2 norm.
    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }
}

/// Face-centered vector: component `a` lives on the faces normal to axis `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField { grid, comps: (0..grid.dim()).map(|a| vec![0.0; grid.num_faces(a)]).collect() }
    }

    /// Samples each component at its face centers; boundary-normal faces are set to 0.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, [f64; 3]) -> f64) -> Self {
        let mut v = VectorField::zeros(grid);
        for a in 0..grid.dim() {
            let shape = grid.face_shape(a);
            let comp = &mut v.comps[a];
            for_each_index(shape, |i, j, k, idx| {
                let ia = [i, j, k][a];
                if !grid.is_boundary_face(a, ia) {
                    comp[idx] = f(a, grid.face_center(a, i, j, k));
                }
            });
        }
        v
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }

    /// Largest magnitude on boundary-normal faces; zero for admissible velocities.
    pub fn boundary_normal_max(&self) -> f64 {
        let mut m: f64 = 0.0;
        for a in 0..self.grid.dim() {
            for_each_index(self.grid.face_shape(a), |i, j, k, idx| {
                if self.grid.is_boundary_face(a, [i, j, k][a]) {
                    m = m.max(self.comps[a][idx].abs());
                }
            });
        }
        m
    }

    /// Zeroes the boundary-normal faces.
    pub fn clear_boundary_normal(&mut self) {
        let grid = self.grid;
        for a in 0..grid.dim() {
            let comp = &mut self.comps[a];
            for_each_index(grid.face_shape(a), |i, j, k, idx| {
                if grid.is_boundary_face(a, [i, j, k][a]) {
                    comp[idx] = 0.0;
                }
            });
        }
    }

    /// dV-weighted inner product (each face carries one cell volume).
    pub fn inner(&self, other: &VectorField) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    pub fn norm_l2(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Averages the two faces of each cell into a cell-centered vector.
    pub fn cell_average(&self, axis: usize) -> ScalarField {
        let grid = self.grid;
        let fs = shape_stride(grid.face_shape(axis), axis);
        let comp = &self.comps[axis];
        let n = grid.n_cells();
        let fshape = grid.face_shape(axis);
        let mut out = ScalarField::zeros(grid);
        for_each_index(n, |i, j, k, idx| {
            let f = i + fshape[0] * (j + fshape[1] * k);
            out.values[idx] = 0.5 * (comp[f] + comp[f + fs]);
        });
        out
    }
}

/// Face gradient with the given wall closure on boundary faces.
pub fn gradient_with(field: &ScalarField, bc: Bc) -> VectorField {
    let grid = field.grid;
    if bc == Bc::Neumann {
        let mut out = VectorField::zeros(grid);
        let dx = grid.spacing();
        for a in 0..grid.dim() {
            let inv = 1.0 / dx[a];
            let comp = &mut out.comps[a];
            let c = &field.values;
            for_interior_face_rows(&grid, a, |fb, lb, rb, len| {
                let row = comp[fb..fb + len].iter_mut().zip(c[lb..lb + len].iter().zip(&c[rb..rb + len]));
                for (g, (l, r)) in row {
                    *g = (r - l) * inv;
                }
            });
        }
        return out;
    }
    let n = grid.n_cells();
    let dx = grid.spacing();
    let c = &field.values;
    let mut out = VectorField::zeros(grid);
    for a in 0..grid.dim() {
        let cs = grid.cell_stride(a);
        let inv = 1.0 / dx[a];
        let comp = &mut out.comps[a];
        for_each_index(grid.face_shape(a), |i, j, k, idx| {
            let ia = [i, j, k][a];
            // cell to the right of the face has the face's own coordinates
            let right = |ii: usize, jj: usize, kk: usize| ii + n[0] * (jj + n[1] * kk);
            comp[idx] = if ia == 0 {
                match bc {
                    Bc::Neumann => 0.0,
                    Bc::Dirichlet0 => 2.0 * c[right(i, j, k)] * inv,
                }
            } else if ia == n[a] {
                let mut cc = [i, j, k];
                cc[a] -= 1;
                match bc {
                    Bc::Neumann => 0.0,
                    Bc::Dirichlet0 => -2.0 * c[right(cc[0], cc[1], cc[2])] * inv,
                }
            } else {
                let r = right(i, j, k);
                (c[r] - c[r - cs]) * inv
            };
        });
    }
    out
}

/// Face gradient with homogeneous Neumann closure (zero on boundary faces).
pub fn gradient(field: &ScalarField) -> VectorField {
    gradient_with(field, Bc::Neumann)
}

/// Cell divergence `sum_a (F_out - F_in) / dx_a`.
pub fn divergence(field: &VectorField) -> ScalarField {
    let mut out = ScalarField::zeros(field.grid);
    divergence_into(field, 1.0, &mut out.values);
    out
}

/// Standard `2 dim + 1` point Laplacian; the Neumann variant is `divergence(gradient(.))`.
pub fn laplacian(field: &ScalarField, bc: Bc) -> ScalarField {
    divergence(&gradient_with(field, bc))
}

/// Donor-cell face values: left cell where the face velocity is `>= 0`, right cell otherwise.
/// Boundary faces take their single adjacent cell.
pub fn upwind_face_value(field: &ScalarField, face_velocity: &VectorField) -> VectorField {
    let grid = field.grid;
    let n = grid.n_cells();
    let c = &field.values;
    let mut out = VectorField::zeros(grid);
    for a in 0..grid.dim() {
        let cs = grid.cell_stride(a);
        let vel = &face_velocity.comps[a];
        let comp = &mut out.comps[a];
        for_each_index(grid.face_shape(a), |i, j, k, idx| {
            let ia = [i, j, k][a];
            let mut cc = [i, j, k];
            if ia == n[a] {
                cc[a] -= 1;
            }
            let base = grid.cell_index(cc[0], cc[1], cc[2]);
            comp[idx] = if ia == 0 || ia == n[a] {
                c[base]
            } else if vel[idx] >= 0.0 {
                c[base - cs]
            } else {
                c[base]
            };
        });
    }
    out
}

/// `|D^2 c|^2` at cells with a one-cell margin, zero (and flagged) elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct InteriorField {
    pub field: ScalarField,
    pub interior: Vec<bool>,
}

/// Squared Frobenius norm of the discrete Hessian from centered second and mixed differences.
pub fn second_derivative_norm_sq(field: &ScalarField) -> InteriorField {
    let grid = field.grid;
    let dim = grid.dim();
    let dx = grid.spacing();
    let c = &field.values;
    let strides: Vec<usize> = (0..dim).map(|a| grid.cell_stride(a)).collect();
    let mut out = ScalarField::zeros(grid);
    let mut interior = vec![false; grid.num_cells()];
    for_each_index(grid.n_cells(), |_, _, _, idx| {
        if !grid.is_interior(idx, 1) {
            return;
        }
        interior[idx] = true;
        let mut sum = 0.0;
        for a in 0..dim {
            let sa = strides[a];
            let daa = (c[idx + sa] - 2.0 * c[idx] + c[idx - sa]) / (dx[a] * dx[a]);
            sum += daa * daa;
            for b in (a + 1)..dim {
                let sb = strides[b];
                let dab = (c[idx + sa + sb] - c[idx + sa - sb] - c[idx - sa + sb] + c[idx - sa - sb])
                    / (4.0 * dx[a] * dx[b]);
                sum += 2.0 * dab * dab;
            }
        }
        out.values[idx] = sum;
    });
    InteriorField { field: out, interior }
}

/// Midpoint quadrature `sum v^power dV`.
pub fn integrate(field: &ScalarField, power: f64) -> Result<f64, FieldError> {
    let fractional = power.fract() != 0.0;
    let mut sum = 0.0;
    for (cell, &v) in field.values.iter().enumerate() {
        if fractional && v < 0.0 {
            return Err(FieldError::NegativeBase { cell, value: v, power });
        }
        sum += if power == 1.0 { v } else { crate::model::pow_nonneg(v, power) };
    }
    Ok(sum * field.grid.cell_volume())
}
