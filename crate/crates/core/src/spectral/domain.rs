//! Box geometry and the Dirichlet sine basis.
//!
//! A domain is the box `[0, L_1] x ... x [0, L_d]` with the orthonormal
//! eigenbasis `e_k(x) = prod_i sqrt(2/L_i) sin(k_i pi x_i / L_i)` of the
//! Dirichlet Laplacian, truncated to `N_i` modes per axis. Coefficients are
//! stored in lexicographic multi-index order (last axis fastest). Grid samples
//! live on the interior points `x_j = j L / (P + 1)`, `j = 1..=P`, with
//! `P = grid_oversample * N` per axis, also in row-major order.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_oversample() -> usize {
    2
}

/// Box geometry, particle mass and spectral truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub dim: usize,
    pub lengths: Vec<f64>,
    pub modes: Vec<usize>,
    pub mass: f64,
    #[serde(default = "default_oversample")]
    pub grid_oversample: usize,
}

impl DomainSpec {
    /// One-dimensional box `[0, length]`.
    pub fn interval(length: f64, modes: usize, mass: f64) -> Self {
        DomainSpec { dim: 1, lengths: vec![length], modes: vec![modes], mass, grid_oversample: default_oversample() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::InvalidDomain(format!("dim must be 1, 2 or 3 (got {})", self.dim)));
        }
        if self.lengths.len() != self.dim || self.modes.len() != self.dim {
            return Err(Error::InvalidDomain(format!(
                "expected {} lengths and modes, got {} and {}",
                self.dim,
                self.lengths.len(),
                self.modes.len()
            )));
        }
        if let Some(l) = self.lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidDomain(format!("box lengths must be positive (got {l})")));
        }
        if self.modes.contains(&0) {
            return Err(Error::InvalidDomain("mode counts must be positive".into()));
        }
        if !(self.mass.is_finite() && self.mass >= 0.0) {
            return Err(Error::InvalidDomain(format!("mass must be nonnegative (got {})", self.mass)));
        }
        if self.grid_oversample < 2 {
            return Err(Error::InvalidDomain(format!(
                "grid_oversample must be at least 2 (got {})",
                self.grid_oversample
            )));
        }
        Ok(())
    }

    /// Total number of sine modes `M = prod N_i`.
    pub fn mode_count(&self) -> usize {
        self.modes.iter().product()
    }
}

/// Sampled 1D sine basis on one axis.
#[derive(Debug, Clone)]
struct AxisBasis {
    modes: usize,
    points: usize,
    spacing: f64,
    coords: Vec<f64>,
    /// `values[j * modes + k] = sqrt(2/L) sin((k+1) pi x_j / L)`
    values: Vec<f64>,
}

impl AxisBasis {
    fn new(length: f64, modes: usize, oversample: usize) -> Self {
        let points = oversample * modes;
        let spacing = length / (points + 1) as f64;
        let norm = (2.0 / length).sqrt();
        let coords: Vec<f64> = (1..=points).map(|j| j as f64 * spacing).collect();
        let mut values = Vec::with_capacity(points * modes);
        for j in 1..=points {
            for k in 1..=modes {
                // exact integer phase keeps the DST-I orthogonality at round-off
                let phase = (k * j) % (2 * (points + 1));
                values.push(norm * (PI * phase as f64 / (points + 1) as f64).sin());
            }
        }
        AxisBasis { modes, points, spacing, coords, values }
    }
}

/// Scalars the grid transforms act on.
pub trait Sample: Copy + Default + std::ops::Add<Output = Self> + std::ops::Mul<f64, Output = Self> {}
impl Sample for f64 {}
impl Sample for Complex64 {}

/// A validated domain with its cached spectra and sampled basis.
#[derive(Debug)]
pub struct Domain {
    spec: DomainSpec,
    indices: Vec<Vec<usize>>,
    laplace: Vec<f64>,
    kinetic: Vec<f64>,
    axes: Vec<AxisBasis>,
    grid_shape: Vec<usize>,
    cell_volume: f64,
    product: OnceLock<ProductRule>,
}

/// Per-axis `g[j][q] = (h/L) sum_p e_j(x_p) cos(q pi x_p / L)`, `q = 0..=2N`.
#[derive(Debug)]
struct CosineTable {
    modes: usize,
    width: usize,
    values: Vec<f64>,
}

/// Product-to-sum bookkeeping: for every coefficient pair `(a, b)` (column-major
/// slot `a + M b`), the `2^d` signed cosine multi-indices it contributes to.
#[derive(Debug)]
struct ProductRule {
    axes: Vec<CosineTable>,
    fan: usize,
    terms: Vec<(u32, f64)>,
}

impl ProductRule {
    fn new(axes: &[AxisBasis], indices: &[Vec<usize>]) -> Self {
        let tables: Vec<CosineTable> = axes
            .iter()
            .map(|b| {
                let n = b.modes;
                let width = 2 * n + 1;
                let period = 2 * (b.points + 1);
                let length = b.spacing * (b.points + 1) as f64;
                let mut values = vec![0.0; n * width];
                for j in 0..n {
                    for q in 0..width {
                        let mut acc = 0.0;
                        for p in 1..=b.points {
                            let phase = (q * p) % period;
                            acc += b.values[(p - 1) * n + j] * (PI * phase as f64 / (b.points + 1) as f64).cos();
                        }
                        values[j * width + q] = acc * b.spacing / length;
                    }
                }
                CosineTable { modes: n, width, values }
            })
            .collect();
        let dim = axes.len();
        let fan = 1 << dim;
        let strides: Vec<usize> = (0..dim).map(|i| tables[i + 1..].iter().map(|t| t.width).product()).collect();
        let m = indices.len();
        let mut terms = Vec::with_capacity(m * m * fan);
        for b in 0..m {
            for a in 0..m {
                for combo in 0..fan {
                    let mut flat = 0;
                    let mut sign = 1.0;
                    for axis in 0..dim {
                        let (ka, kb) = (indices[a][axis], indices[b][axis]);
                        let q = if combo >> axis & 1 == 0 {
                            ka.abs_diff(kb)
                        } else {
                            sign = -sign;
                            ka + kb
                        };
                        flat += q * strides[axis];
                    }
                    terms.push((flat as u32, sign));
                }
            }
        }
        ProductRule { axes: tables, fan, terms }
    }
}

impl Domain {
    pub fn new(spec: DomainSpec) -> Result<Arc<Domain>> {
        spec.validate()?;
        let axes: Vec<AxisBasis> =
            (0..spec.dim).map(|i| AxisBasis::new(spec.lengths[i], spec.modes[i], spec.grid_oversample)).collect();
        let indices = multi_indices(&spec.modes);
        let laplace: Vec<f64> = indices
            .iter()
            .map(|k| k.iter().zip(&spec.lengths).map(|(&ki, &li)| (PI * ki as f64 / li).powi(2)).sum())
            .collect();
        let m = spec.mass;
        let kinetic = laplace.iter().map(|&mu| kinetic_symbol(mu, m)).collect();
        let grid_shape = axes.iter().map(|a| a.points).collect();
        let cell_volume = axes.iter().map(|a| a.spacing).product();
        Ok(Arc::new(Domain {
            spec,
            indices,
            laplace,
            kinetic,
            axes,
            grid_shape,
            cell_volume,
            product: OnceLock::new(),
        }))
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn mass(&self) -> f64 {
        self.spec.mass
    }

    pub fn mode_count(&self) -> usize {
        self.indices.len()
    }

    /// Multi-index `(k_1, .., k_d)`, each `k_i >= 1`, of the mode stored at `slot`.
    pub fn multi_index(&self, slot: usize) -> &[usize] {
        &self.indices[slot]
    }

    /// Dirichlet Laplacian eigenvalues in storage order.
    pub fn laplace_eigenvalues(&self) -> &[f64] {
        &self.laplace
    }

    /// `T_m(k) = sqrt(mu0_k + m^2) - m` in storage order.
    pub fn kinetic_eigenvalues(&self) -> &[f64] {
        &self.kinetic
    }

    pub fn grid_shape(&self) -> &[usize] {
        &self.grid_shape
    }

    pub fn grid_len(&self) -> usize {
        self.grid_shape.iter().product()
    }

    /// Quadrature weight of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn volume(&self) -> f64 {
        self.spec.lengths.iter().product()
    }

    /// Coordinates of grid point `flat` (row-major).
    pub fn grid_point(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut x = vec![0.0; self.dim()];
        for axis in (0..self.dim()).rev() {
            let p = self.grid_shape[axis];
            x[axis] = self.axes[axis].coords[rem % p];
            rem /= p;
        }
        x
    }

    pub fn axis_coords(&self, axis: usize) -> &[f64] {
        &self.axes[axis].coords
    }

    /// Same discretization (pointer or structural equality).
    pub fn same_as(&self, other: &Domain) -> bool {
        std::ptr::eq(self, other) || self.spec == other.spec
    }

    /// Evaluate a sine series on the grid.
    pub fn synthesize<T: Sample>(&self, coeffs: &[T]) -> Vec<T> {
        debug_assert_eq!(coeffs.len(), self.mode_count());
        let mut shape = self.spec.modes.clone();
        let mut data = coeffs.to_vec();
        for axis in 0..self.dim() {
            let basis = &self.axes[axis];
            data = apply_axis(&data, &shape, axis, basis.points, |r, c| basis.values[r * basis.modes + c]);
            shape[axis] = basis.points;
        }
        data
    }

    /// Project grid samples onto the retained modes by grid quadrature.
    pub fn analyze<T: Sample>(&self, grid: &[T]) -> Vec<T> {
        debug_assert_eq!(grid.len(), self.grid_len());
        let mut shape = self.grid_shape.clone();
        let mut data = grid.to_vec();
        for axis in 0..self.dim() {
            let basis = &self.axes[axis];
            let h = basis.spacing;
            data = apply_axis(&data, &shape, axis, basis.modes, |r, c| basis.values[c * basis.modes + r] * h);
            shape[axis] = basis.modes;
        }
        data
    }

    fn product_rule(&self) -> &ProductRule {
        self.product.get_or_init(|| ProductRule::new(&self.axes, &self.indices))
    }

    /// Galerkin potential matrix `W_ab = sum_x h V(x) e_a(x) e_b(x)` from the
    /// sine coefficients of `V`, exactly symmetric.
    ///
    /// Uses `e_a e_b = (1/L) [cos((a-b) pi x/L) - cos((a+b) pi x/L)]` per axis, so
    /// the cost is `O(2^d M^2)` instead of a pass over the grid per mode.
    pub fn potential_matrix_coeffs(&self, potential: &[f64]) -> DMatrix<f64> {
        debug_assert_eq!(potential.len(), self.mode_count());
        let rule = self.product_rule();
        let mut shape = self.spec.modes.clone();
        let mut g = potential.to_vec();
        for (axis, table) in rule.axes.iter().enumerate() {
            let width = table.width;
            g = apply_axis(&g, &shape, axis, width, |q, j| table.values[j * width + q]);
            shape[axis] = width;
        }
        let m = self.mode_count();
        let fan = rule.fan;
        let mut w = DMatrix::<f64>::zeros(m, m);
        for (pair, out) in w.as_mut_slice().iter_mut().enumerate() {
            *out = rule.terms[pair * fan..(pair + 1) * fan].iter().map(|&(q, sign)| sign * g[q as usize]).sum();
        }
        w
    }

    /// Projected density `n_j = sum_ab rho_ab sum_x h e_j e_a e_b` of a real
    /// symmetric one-body matrix, consistent with [`Domain::potential_matrix_coeffs`].
    pub fn pair_density(&self, rho: &DMatrix<f64>) -> Vec<f64> {
        let rule = self.product_rule();
        let fan = rule.fan;
        let mut r = vec![0.0; rule.axes.iter().map(|t| t.width).product()];
        for (pair, value) in rho.as_slice().iter().enumerate() {
            if *value == 0.0 {
                continue;
            }
            for &(q, sign) in &rule.terms[pair * fan..(pair + 1) * fan] {
                r[q as usize] += sign * value;
            }
        }
        let mut shape: Vec<usize> = rule.axes.iter().map(|t| t.width).collect();
        for (axis, table) in rule.axes.iter().enumerate() {
            let width = table.width;
            r = apply_axis(&r, &shape, axis, table.modes, |j, q| table.values[j * width + q]);
            shape[axis] = table.modes;
        }
        r
    }

    /// Grid samples of the single basis function stored at `slot`.
    pub fn basis_on_grid(&self, slot: usize) -> Vec<f64> {
        let k = &self.indices[slot];
        let per_axis: Vec<Vec<f64>> = (0..self.dim())
            .map(|axis| {
                let b = &self.axes[axis];
                (0..b.points).map(|j| b.values[j * b.modes + k[axis] - 1]).collect()
            })
            .collect();
        let mut out = vec![1.0];
        for column in per_axis {
            out = out.iter().flat_map(|&a| column.iter().map(move |&c| a * c)).collect();
        }
        out
    }
}

/// `sqrt(mu0 + m^2) - m`, evaluated without cancellation for large `m`.
pub fn kinetic_symbol(laplace: f64, mass: f64) -> f64 {
    if mass == 0.0 {
        laplace.sqrt()
    } else {
        laplace / ((laplace + mass * mass).sqrt() + mass)
    }
}

fn multi_indices(modes: &[usize]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![vec![]];
    for &n in modes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (1..=n).map(move |k| {
                    let mut v = prefix.clone();
                    v.push(k);
                    v
                })
            })
            .collect();
    }
    out
}

/// Apply a dense `rows x shape[axis]` matrix along one axis of a row-major array.
fn apply_axis<T: Sample>(
    data: &[T],
    shape: &[usize],
    axis: usize,
    rows: usize,
    mat: impl Fn(usize, usize) -> f64,
) -> Vec<T> {
    let cols = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![T::default(); outer * rows * inner];
    for o in 0..outer {
        for r in 0..rows {
            let dst = &mut out[(o * rows + r) * inner..(o * rows + r + 1) * inner];
            for c in 0..cols {
                let w = mat(r, c);
                if w == 0.0 {
                    continue;
                }
                let src = &data[(o * cols + c) * inner..(o * cols + c + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s * w;
                }
            }
        }
    }
    out
}

/// Laplacian spectrum sorted ascending, ties broken by lexicographic multi-index.
pub fn laplacian_spectrum(domain: &Domain) -> Vec<(Vec<usize>, f64)> {
    let mut out: Vec<(Vec<usize>, f64)> = domain.indices.iter().cloned().zip(domain.laplace.iter().copied()).collect();
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Largest `C` with `mu0_k >= C k^(2/3)` over the sorted retained spectrum.
///
/// The true constant depends on the box volume; this is the value fitted at
/// the current truncation, reported rather than assumed.
pub fn semiclassical_constant(domain: &Domain) -> f64 {
    laplacian_spectrum(domain)
        .iter()
        .enumerate()
        .map(|(rank, (_, mu))| mu / ((rank + 1) as f64).powf(2.0 / 3.0))
        .fold(f64::INFINITY, f64::min)
}
