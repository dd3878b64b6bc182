//! Galerkin Hamiltonian `T_m + V` in the sine basis and its dense eigensolver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

use super::domain::Domain;
use super::field::ModeField;

/// Assembled Hamiltonian with the symmetrization defect of the quadrature.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    pub matrix: DMatrix<f64>,
    pub symmetry_defect: f64,
}

/// Potential matrix `W_kl = int e_k V e_l` by grid quadrature.
///
/// Returns the matrix and its symmetry defect, which is zero by construction
/// of the product rule.
pub fn potential_matrix(domain: &Domain, potential: &ModeField) -> Result<(DMatrix<f64>, f64)> {
    potential.check_domain(domain)?;
    Ok((domain.potential_matrix_coeffs(potential.coeffs()), 0.0))
}

/// Column-by-column grid quadrature; reference for the product rule.
#[cfg(test)]
pub(crate) fn potential_matrix_on_grid(domain: &Domain, potential: &ModeField) -> (DMatrix<f64>, f64) {
    let m = domain.mode_count();
    let v_grid = potential.to_grid();
    let mut w = DMatrix::<f64>::zeros(m, m);
    let mut product = vec![0.0; v_grid.len()];
    for l in 0..m {
        let e_l = domain.basis_on_grid(l);
        for ((p, v), e) in product.iter_mut().zip(&v_grid).zip(&e_l) {
            *p = v * e;
        }
        let column = domain.analyze(&product);
        w.set_column(l, &DVector::from_vec(column));
    }
    let mut defect: f64 = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let (a, b) = (w[(i, j)], w[(j, i)]);
            defect = defect.max((a - b).abs());
            let avg = 0.5 * (a + b);
            w[(i, j)] = avg;
            w[(j, i)] = avg;
        }
    }
    (w, defect)
}

/// `H = diag(T_m(k)) + W[V]`.
pub fn hamiltonian_matrix(domain: &Domain, potential: &ModeField) -> Result<Hamiltonian> {
    let (mut matrix, symmetry_defect) = potential_matrix(domain, potential)?;
    for (i, t) in domain.kinetic_eigenvalues().iter().enumerate() {
        matrix[(i, i)] += t;
    }
    Ok(Hamiltonian { matrix, symmetry_defect })
}

/// Eigenpairs sorted ascending; column `k` of `vectors` belongs to `values[k]`.
#[derive(Debug, Clone)]
pub struct Eigensystem {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl Eigensystem {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Dense symmetric eigendecomposition with a reproducible gauge.
///
/// Each eigenvector is signed so that its largest-magnitude component (first
/// one on ties) is positive. Eigenvalues closer than `1e-12 * (1 + |mu|)` are
/// treated as degenerate and ordered lexicographically by their coefficients.
pub fn eigendecompose(h: &DMatrix<f64>) -> Result<Eigensystem> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(Error::NotSymmetric { defect: f64::INFINITY });
    }
    let scale = h.amax().max(1.0);
    let defect = (h - h.transpose()).amax();
    if defect > 1e-10 * scale {
        return Err(Error::NotSymmetric { defect });
    }
    let eig = SymmetricEigen::new(h.clone());
    let mut pairs: Vec<(f64, DVector<f64>)> = (0..n)
        .map(|i| {
            let mut v = eig.eigenvectors.column(i).into_owned();
            let lead = v.iamax();
            if v[lead] < 0.0 {
                v.neg_mut();
            }
            (eig.eigenvalues[i], v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && pairs[end].0 - pairs[end - 1].0 <= 1e-12 * (1.0 + pairs[end].0.abs()) {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| lexicographic(&a.1, &b.1));
        start = end;
    }
    let values = pairs.iter().map(|p| p.0).collect();
    let vectors = DMatrix::from_columns(&pairs.iter().map(|p| p.1.clone()).collect::<Vec<_>>());
    Ok(Eigensystem { values, vectors })
}

fn lexicographic(a: &DVector<f64>, b: &DVector<f64>) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match y.total_cmp(x) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::super::domain::DomainSpec;
    use super::*;

    fn interval(n: usize, m: f64) -> Arc<Domain> {
        Domain::new(DomainSpec::interval(PI, n, m)).unwrap()
    }

    #[test]
    fn free_spectrum_massless() {
        let d = interval(16, 0.0);
        let h = hamiltonian_matrix(&d, &ModeField::zeros(&d)).unwrap();
        let off = h.matrix.clone() - DMatrix::from_diagonal(&h.matrix.diagonal());
        assert_eq!(off.amax(), 0.0);
        let eig = eigendecompose(&h.matrix).unwrap();
        for (k, mu) in eig.values.iter().enumerate() {
            assert!((mu - (k + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn free_spectrum_massive() {
        let d = interval(16, 3.0);
        let h = hamiltonian_matrix(&d, &ModeField::zeros(&d)).unwrap();
        let eig = eigendecompose(&h.matrix).unwrap();
        for (k, mu) in eig.values.iter().enumerate() {
            let kf = (k + 1) as f64;
            assert!((mu - ((kf * kf + 9.0).sqrt() - 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn parity_zero_entry() {
        // W_12 for V = e_1 vanishes by symmetry about pi/2
        let d = interval(16, 0.0);
        let (w, defect) = potential_matrix(&d, &ModeField::basis(&d, 0, 1.0)).unwrap();
        assert!(w[(0, 1)].abs() < 1e-14);
        assert!(defect < 1e-13);
    }

    #[test]
    fn product_rule_matches_grid_quadrature() {
        let spec = DomainSpec { dim: 2, lengths: vec![1.0, 2.0], modes: vec![5, 4], mass: 0.0, grid_oversample: 2 };
        let d = Domain::new(spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = ModeField::from_coeffs(&d, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (table, _) = potential_matrix(&d, &v).unwrap();
        let (grid, defect) = potential_matrix_on_grid(&d, &v);
        assert!((table.clone() - grid).amax() < 1e-13);
        assert!(defect < 1e-13);
        assert_eq!(table.clone(), table.transpose());
    }

    #[test]
    fn constant_potential_shifts_interior_states() {
        // project V = c onto the basis; low states feel ~c, boundary projection error measured
        let d = interval(64, 1.0);
        let c = 0.3;
        let grid = vec![c; d.grid_len()];
        let v = ModeField::from_grid(&d, &grid).unwrap();
        let h = hamiltonian_matrix(&d, &v).unwrap();
        let eig = eigendecompose(&h.matrix).unwrap();
        for k in 0..5 {
            let shift = eig.values[k] - d.kinetic_eigenvalues()[k];
            assert!((shift - c).abs() < 0.02 * c, "k={k}: shift {shift}");
        }
    }

    #[test]
    fn random_symmetric_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = DMatrix::<f64>::from_fn(16, 16, |_, _| rng.gen_range(-1.0..1.0));
        let h = &a + a.transpose();
        let eig = eigendecompose(&h).unwrap();
        let norm = h.norm();
        for k in 0..16 {
            let v = eig.vectors.column(k);
            let r = (&h * v - v * eig.values[k]).norm();
            assert!(r <= 1e-9 * norm);
            assert!(v[v.iamax()] > 0.0);
        }
        let gram = eig.vectors.transpose() * &eig.vectors;
        assert!((gram - DMatrix::identity(16, 16)).amax() < 1e-10);
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn deterministic_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::<f64>::from_fn(12, 12, |_, _| rng.gen_range(-1.0..1.0));
        let h = &a + a.transpose();
        let e1 = eigendecompose(&h).unwrap();
        let e2 = eigendecompose(&h).unwrap();
        assert_eq!(e1.values, e2.values);
        assert_eq!(e1.vectors, e2.vectors);
    }

    #[test]
    fn rejects_non_symmetric() {
        let mut h = DMatrix::<f64>::identity(3, 3);
        h[(0, 1)] = 1.0;
        assert!(matches!(eigendecompose(&h), Err(Error::NotSymmetric { .. })));
    }
}
