//! Dense complex linear algebra helpers shared by every module.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`; multipartite index
//! conventions are row-major over the subsystem list (first label is the
//! most significant digit), matching `kron`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Eigenvalues below this are treated as exact zeros in entropies.
pub const EIGEN_FLOOR: f64 = 1e-12;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    a.kronecker(b)
}

pub fn dagger(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn basis_vector(d: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(d);
    v[i] = ONE;
    v
}

pub fn projector(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

pub fn trace(m: &CMatrix) -> C64 {
    m.trace()
}

/// max |m_ij - conj(m_ji)|
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    match m.nrows() {
        0 => Vec::new(),
        1 => vec![m[(0, 0)].re],
        2 => {
            let a = m[(0, 0)].re;
            let d = m[(1, 1)].re;
            let b = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
            let mean = 0.5 * (a + d);
            let r = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
            vec![mean - r, mean + r]
        }
        _ => {
            let mut ev: Vec<f64> = hermitize(m).symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(|x, y| x.total_cmp(y));
            ev
        }
    }
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and the
/// matching orthonormal eigenvectors as columns.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    if m.nrows() == 2 {
        return hermitian_eigen_2x2(m);
    }
    let eig = hermitize(m).symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

fn hermitian_eigen_2x2(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)].conj());
    let vals = hermitian_eigenvalues(m);
    let scale = a.abs().max(d.abs()).max(b.norm()).max(1e-300);
    if b.norm() <= 1e-15 * scale {
        let (lo, hi) = if a <= d { (0, 1) } else { (1, 0) };
        let mut v = CMatrix::zeros(2, 2);
        v[(lo, 0)] = ONE;
        v[(hi, 1)] = ONE;
        return (vec![a.min(d), a.max(d)], v);
    }
    // eigenvector of the larger eigenvalue from whichever row is better
    // conditioned
    let l = vals[1];
    let (x, y) = if (l - a).abs() >= (l - d).abs() { (b, c(l - a, 0.0)) } else { (c(l - d, 0.0), b.conj()) };
    let n = (x.norm_sqr() + y.norm_sqr()).sqrt();
    let (x, y) = (x / n, y / n);
    let v = CMatrix::from_row_slice(2, 2, &[-y.conj(), x, x.conj(), y]);
    (vals, v)
}

/// Shannon entropy in bits of a spectrum, with `0 log 0 = 0` and every
/// eigenvalue below [`EIGEN_FLOOR`] clamped to zero. Returns the entropy
/// and how many eigenvalues were clamped.
pub fn entropy_of_spectrum(eigs: &[f64]) -> (f64, usize) {
    let mut h = 0.0;
    let mut hits = 0;
    for &l in eigs {
        if l < EIGEN_FLOOR {
            hits += 1;
            continue;
        }
        h -= l * l.log2();
    }
    (h, hits)
}

/// Entropy in bits of a Hermitian PSD matrix; no validation.
pub fn entropy_bits(m: &CMatrix) -> f64 {
    entropy_of_spectrum(&hermitian_eigenvalues(m)).0
}

/// Function `f` applied to the spectrum of a Hermitian matrix.
pub fn hermitian_map(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let n = m.nrows();
    let mut scaled = vecs.clone();
    for j in 0..n {
        let s = f(vals[j]);
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    scaled * vecs.adjoint()
}

pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    hermitian_map(m, |x| x.max(0.0).sqrt())
}

/// Moore-Penrose inverse square root on the support above `floor`.
pub fn psd_inv_sqrt(m: &CMatrix, floor: f64) -> CMatrix {
    hermitian_map(m, |x| if x > floor { 1.0 / x.sqrt() } else { 0.0 })
}

/// Index digits of `index` in the mixed radix `dims` (row-major).
pub fn digits(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        out[k] = index % dims[k];
        index /= dims[k];
    }
    out
}

pub fn compose_index(digits: &[usize], dims: &[usize]) -> usize {
    digits.iter().zip(dims).fold(0, |acc, (&d, &n)| acc * n + d)
}

/// For subsystems split into `keep` and its complement, the full index of
/// every (kept, traced) digit pair: `table[a * dim_traced + t]`.
pub fn split_index_table(dims: &[usize], keep: &[usize]) -> (usize, usize, Vec<usize>) {
    let traced: Vec<usize> = (0..dims.len()).filter(|i| !keep.contains(i)).collect();
    let keep_dims: Vec<usize> = keep.iter().map(|&i| dims[i]).collect();
    let trace_dims: Vec<usize> = traced.iter().map(|&i| dims[i]).collect();
    let dk: usize = keep_dims.iter().product();
    let dt: usize = trace_dims.iter().product();
    let mut table = vec![0; dk * dt];
    let mut full = vec![0; dims.len()];
    for a in 0..dk {
        let ad = digits(a, &keep_dims);
        for (pos, &sys) in keep.iter().enumerate() {
            full[sys] = ad[pos];
        }
        for t in 0..dt {
            let td = digits(t, &trace_dims);
            for (pos, &sys) in traced.iter().enumerate() {
                full[sys] = td[pos];
            }
            table[a * dt + t] = compose_index(&full, dims);
        }
    }
    (dk, dt, table)
}

/// Partial trace keeping the subsystems at positions `keep` (in the order
/// given).
pub fn partial_trace(m: &CMatrix, dims: &[usize], keep: &[usize]) -> CMatrix {
    let (dk, dt, table) = split_index_table(dims, keep);
    let mut out = CMatrix::zeros(dk, dk);
    for a in 0..dk {
        for b in 0..dk {
            let mut acc = ZERO;
            for t in 0..dt {
                acc += m[(table[a * dt + t], table[b * dt + t])];
            }
            out[(a, b)] = acc;
        }
    }
    out
}

/// Reduced density matrix of the pure (possibly unnormalized) vector `v`
/// on the subsystems `keep`.
pub fn reduced_from_vector(v: &CVector, dims: &[usize], keep: &[usize]) -> CMatrix {
    let (dk, dt, table) = split_index_table(dims, keep);
    // Reshape into dk x dt then form X X^dagger.
    let mut x = CMatrix::zeros(dk, dt);
    for a in 0..dk {
        for t in 0..dt {
            x[(a, t)] = v[table[a * dt + t]];
        }
    }
    &x * x.adjoint()
}

/// Reorder subsystems: output subsystem `k` is input subsystem `perm[k]`.
pub fn permute_subsystems(m: &CMatrix, dims: &[usize], perm: &[usize]) -> CMatrix {
    let map = permutation_map(dims, perm);
    let n = m.nrows();
    let mut out = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = m[(map[i], map[j])];
        }
    }
    out
}

pub fn permute_vector(v: &CVector, dims: &[usize], perm: &[usize]) -> CVector {
    let map = permutation_map(dims, perm);
    CVector::from_iterator(v.len(), map.iter().map(|&i| v[i]))
}

/// `map[new_index] = old_index` for the subsystem permutation `perm`.
fn permutation_map(dims: &[usize], perm: &[usize]) -> Vec<usize> {
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let n: usize = dims.iter().product();
    let mut old = vec![0; dims.len()];
    (0..n)
        .map(|i| {
            let nd = digits(i, &new_dims);
            for (k, &p) in perm.iter().enumerate() {
                old[p] = nd[k];
            }
            compose_index(&old, dims)
        })
        .collect()
}

pub fn random_complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im)
}

/// Haar-random unit vector.
pub fn random_unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CVector {
    let v = CVector::from_fn(d, |_, _| random_complex_gaussian(rng));
    let n = v.norm();
    v / c(n, 0.0)
}

/// Haar-random unitary via QR of a Ginibre matrix with phase correction.
pub fn random_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let g = CMatrix::from_fn(d, d, |_, _| random_complex_gaussian(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        let diag = r[(j, j)];
        let phase = if diag.norm() > 0.0 { diag / c(diag.norm(), 0.0) } else { ONE };
        for i in 0..d {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Random density matrix of the given rank from the induced (Ginibre)
/// measure.
pub fn random_density_matrix<R: Rng + ?Sized>(d: usize, rank: usize, rng: &mut R) -> CMatrix {
    let g = CMatrix::from_fn(d, rank.max(1), |_, _| random_complex_gaussian(rng));
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    m / c(tr, 0.0)
}

/// Unit vector from `2d` unconstrained reals (re, im pairs). The zero
/// vector maps to the first basis vector.
pub fn unit_vector_from_reals(x: &[f64]) -> CVector {
    let d = x.len() / 2;
    let v = CVector::from_fn(d, |i, _| c(x[2 * i], x[2 * i + 1]));
    let n = v.norm();
    if n < 1e-300 {
        basis_vector(d, 0)
    } else {
        v / c(n, 0.0)
    }
}

pub fn complex_matrix_from_reals(x: &[f64], rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |i, j| {
        let k = 2 * (i * cols + j);
        c(x[k], x[k + 1])
    })
}

pub fn reals_from_complex_matrix(m: &CMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)].re);
            out.push(m[(i, j)].im);
        }
    }
    out
}

/// Closest isometry (polar factor) `M (M^dagger M)^{-1/2}`; columns become
/// orthonormal. Rank-deficient inputs are completed with Gram-Schmidt.
pub fn polar_isometry(m: &CMatrix) -> CMatrix {
    let gram = m.adjoint() * m;
    let (vals, _) = hermitian_eigen(&gram);
    if vals.first().copied().unwrap_or(0.0) > 1e-14 * vals.last().copied().unwrap_or(1.0).max(1e-300) {
        m * psd_inv_sqrt(&gram, 0.0)
    } else {
        gram_schmidt_columns(m)
    }
}

/// Modified Gram-Schmidt; degenerate columns are replaced by basis vectors.
pub fn gram_schmidt_columns(m: &CMatrix) -> CMatrix {
    let (rows, cols) = m.shape();
    let mut q = CMatrix::zeros(rows, cols);
    let mut next_basis = 0;
    for j in 0..cols {
        let mut v: CVector = m.column(j).into_owned();
        let mut attempts = 0;
        loop {
            for k in 0..j {
                let qk = q.column(k);
                let proj = qk.dotc(&v);
                v -= qk * proj;
            }
            let n = v.norm();
            if n > 1e-10 || attempts > rows {
                v /= c(n.max(1e-300), 0.0);
                break;
            }
            v = basis_vector(rows, next_basis % rows);
            next_basis += 1;
            attempts += 1;
        }
        q.set_column(j, &v);
    }
    q
}

pub fn isometry_from_reals(x: &[f64], rows: usize, cols: usize) -> CMatrix {
    polar_isometry(&complex_matrix_from_reals(x, rows, cols))
}
