//! Density operators over labelled tensor factorizations and the entropic
//! functionals built from them. All logarithms are base 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, CVector};

/// Entrywise Hermiticity slack.
pub const TOL_HERM: f64 = 1e-10;
/// Trace slack.
pub const TOL_TRACE: f64 = 1e-10;
/// Most negative eigenvalue still accepted as PSD.
pub const TOL_PSD: f64 = 1e-10;
/// Norm slack for pure states.
pub const TOL_NORM: f64 = 1e-12;

/// Ordered subsystem dimensions with their labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsystems {
    pub dims: Vec<usize>,
    pub labels: Vec<String>,
}

impl Subsystems {
    pub fn new<S: AsRef<str>>(dims: &[usize], labels: &[S]) -> Result<Self> {
        if dims.len() != labels.len() {
            return Err(Error::InvalidParameter(format!(
                "{} dimensions for {} labels",
                dims.len(),
                labels.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter("zero subsystem dimension".into()));
        }
        let labels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidParameter(format!("duplicate label `{l}`")));
            }
        }
        Ok(Self { dims: dims.to_vec(), labels })
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn position(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Positions of `labels`, preserving the stored subsystem order.
    pub fn positions<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<usize>> {
        let mut pos = labels
            .iter()
            .map(|l| self.position(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        pos.sort_unstable();
        pos.dedup();
        Ok(pos)
    }

    pub fn dim_of<S: AsRef<str>>(&self, labels: &[S]) -> Result<usize> {
        Ok(self.positions(labels)?.iter().map(|&p| self.dims[p]).product())
    }

    fn select(&self, positions: &[usize]) -> Subsystems {
        Subsystems {
            dims: positions.iter().map(|&p| self.dims[p]).collect(),
            labels: positions.iter().map(|&p| self.labels[p].clone()).collect(),
        }
    }

    fn concat(&self, other: &Subsystems) -> Subsystems {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        Subsystems { dims, labels }
    }
}

/// Hermitian, PSD, unit-trace matrix over labelled subsystems.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: CMatrix,
    systems: Subsystems,
}

/// Entropy in bits together with the number of eigenvalues clamped to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub value: f64,
    pub eigen_floor_hits: usize,
}

impl DensityOperator {
    pub fn new<S: AsRef<str>>(matrix: CMatrix, dims: &[usize], labels: &[S]) -> Result<Self> {
        let systems = Subsystems::new(dims, labels)?;
        Self::with_systems(matrix, systems)
    }

    pub fn with_systems(matrix: CMatrix, systems: Subsystems) -> Result<Self> {
        let n = systems.total_dim();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, found: matrix.nrows() });
        }
        let herm = linalg::hermiticity_defect(&matrix);
        if herm > TOL_HERM {
            return Err(Error::InvalidState(format!("not Hermitian (defect {herm:.3e})")));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TOL_TRACE || tr.im.abs() > TOL_TRACE {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        let min_eig = linalg::hermitian_eigenvalues(&matrix).first().copied().unwrap_or(0.0);
        if min_eig < -TOL_PSD {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:.3e}")));
        }
        Ok(Self { matrix, systems })
    }

    /// Skips validation; callers guarantee the invariants (hot paths).
    pub(crate) fn from_parts_unchecked(matrix: CMatrix, systems: Subsystems) -> Self {
        Self { matrix, systems }
    }

    pub fn from_pure(psi: &PureState) -> Self {
        Self { matrix: linalg::projector(&psi.vector), systems: psi.systems.clone() }
    }

    pub fn maximally_mixed<S: AsRef<str>>(dims: &[usize], labels: &[S]) -> Result<Self> {
        let systems = Subsystems::new(dims, labels)?;
        let n = systems.total_dim();
        let m = linalg::identity(n) / c(n as f64, 0.0);
        Ok(Self { matrix: m, systems })
    }

    /// `|index><index|` in the computational basis.
    pub fn basis<S: AsRef<str>>(dims: &[usize], labels: &[S], index: usize) -> Result<Self> {
        let psi = PureState::basis(dims, labels, index)?;
        Ok(Self::from_pure(&psi))
    }

    /// Diagonal state from a probability vector.
    pub fn diagonal<S: AsRef<str>>(probs: &[f64], dims: &[usize], labels: &[S]) -> Result<Self> {
        let n = probs.len();
        let m = CMatrix::from_fn(n, n, |i, j| if i == j { c(probs[i], 0.0) } else { linalg::ZERO });
        Self::new(m, dims, labels)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn systems(&self) -> &Subsystems {
        &self.systems
    }

    pub fn dims(&self) -> &[usize] {
        &self.systems.dims
    }

    pub fn labels(&self) -> &[String] {
        &self.systems.labels
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn tensor(&self, other: &DensityOperator) -> Result<DensityOperator> {
        let systems = self.systems.concat(&other.systems);
        // re-run label uniqueness
        let systems = Subsystems::new(&systems.dims, &systems.labels)?;
        Ok(Self { matrix: linalg::kron(&self.matrix, &other.matrix), systems })
    }

    /// Marginal on `keep`, ordered as in this operator.
    pub fn partial_trace<S: AsRef<str>>(&self, keep: &[S]) -> Result<DensityOperator> {
        let pos = self.systems.positions(keep)?;
        if pos.len() == self.systems.dims.len() {
            return Ok(self.clone());
        }
        let m = linalg::partial_trace(&self.matrix, &self.systems.dims, &pos);
        Ok(Self { matrix: m, systems: self.systems.select(&pos) })
    }

    /// Reorders subsystems to the label order given.
    pub fn reorder<S: AsRef<str>>(&self, order: &[S]) -> Result<DensityOperator> {
        if order.len() != self.systems.labels.len() {
            return Err(Error::InvalidParameter("reorder needs every label exactly once".into()));
        }
        let perm = order
            .iter()
            .map(|l| self.systems.position(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let m = linalg::permute_subsystems(&self.matrix, &self.systems.dims, &perm);
        Ok(Self { matrix: m, systems: self.systems.select(&perm) })
    }

    pub fn entropy(&self) -> Result<EntropyReport> {
        entropy(self)
    }

    pub fn to_json(&self) -> StateFile {
        StateFile::from_state(self)
    }
}

/// Unit vector over labelled subsystems.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    vector: CVector,
    systems: Subsystems,
}

impl PureState {
    pub fn new<S: AsRef<str>>(vector: CVector, dims: &[usize], labels: &[S]) -> Result<Self> {
        let systems = Subsystems::new(dims, labels)?;
        if vector.len() != systems.total_dim() {
            return Err(Error::DimensionMismatch { expected: systems.total_dim(), found: vector.len() });
        }
        let n = vector.norm();
        if (n - 1.0).abs() > TOL_NORM {
            return Err(Error::InvalidState(format!("norm {n} is not 1")));
        }
        Ok(Self { vector, systems })
    }

    /// Normalizes `vector` first.
    pub fn normalized<S: AsRef<str>>(vector: CVector, dims: &[usize], labels: &[S]) -> Result<Self> {
        let n = vector.norm();
        if n < 1e-300 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        Self::new(vector / c(n, 0.0), dims, labels)
    }

    pub(crate) fn from_parts_unchecked(vector: CVector, systems: Subsystems) -> Self {
        Self { vector, systems }
    }

    pub fn basis<S: AsRef<str>>(dims: &[usize], labels: &[S], index: usize) -> Result<Self> {
        let systems = Subsystems::new(dims, labels)?;
        let n = systems.total_dim();
        if index >= n {
            return Err(Error::InvalidParameter(format!("basis index {index} out of range {n}")));
        }
        Ok(Self { vector: linalg::basis_vector(n, index), systems })
    }

    /// `sum_i |ii> / sqrt(d)` on two subsystems of dimension `d`.
    pub fn maximally_entangled(d: usize, label_a: &str, label_b: &str) -> Result<Self> {
        let mut v = CVector::zeros(d * d);
        let amp = c(1.0 / (d as f64).sqrt(), 0.0);
        for i in 0..d {
            v[i * d + i] = amp;
        }
        Self::new(v, &[d, d], &[label_a, label_b])
    }

    pub fn vector(&self) -> &CVector {
        &self.vector
    }

    pub fn systems(&self) -> &Subsystems {
        &self.systems
    }

    pub fn dims(&self) -> &[usize] {
        &self.systems.dims
    }

    pub fn labels(&self) -> &[String] {
        &self.systems.labels
    }

    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let s = self.systems.concat(&other.systems);
        let systems = Subsystems::new(&s.dims, &s.labels)?;
        Ok(Self { vector: linalg::kron_vec(&self.vector, &other.vector), systems })
    }

    /// Reduced state on `keep` computed from the vector directly.
    pub fn reduced<S: AsRef<str>>(&self, keep: &[S]) -> Result<DensityOperator> {
        let pos = self.systems.positions(keep)?;
        let m = linalg::reduced_from_vector(&self.vector, &self.systems.dims, &pos);
        Ok(DensityOperator::from_parts_unchecked(m, self.systems.select(&pos)))
    }

    /// Entropy of the marginal on `keep` (zero for the empty set).
    pub fn marginal_entropy<S: AsRef<str>>(&self, keep: &[S]) -> Result<f64> {
        if keep.is_empty() {
            return Ok(0.0);
        }
        let pos = self.systems.positions(keep)?;
        Ok(marginal_entropy_by_position(&self.vector, &self.systems.dims, &pos))
    }

    pub fn reorder<S: AsRef<str>>(&self, order: &[S]) -> Result<PureState> {
        if order.len() != self.systems.labels.len() {
            return Err(Error::InvalidParameter("reorder needs every label exactly once".into()));
        }
        let perm = order
            .iter()
            .map(|l| self.systems.position(l.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let v = linalg::permute_vector(&self.vector, &self.systems.dims, &perm);
        Ok(Self { vector: v, systems: self.systems.select(&perm) })
    }
}

/// Entropy of a pure vector's marginal, computed on whichever side of the
/// cut is smaller.
pub fn marginal_entropy_by_position(v: &CVector, dims: &[usize], keep: &[usize]) -> f64 {
    if keep.is_empty() || keep.len() == dims.len() {
        return 0.0;
    }
    let dk: usize = keep.iter().map(|&p| dims[p]).product();
    let total: usize = dims.iter().product();
    let side: Vec<usize> = if dk * dk <= total {
        keep.to_vec()
    } else {
        (0..dims.len()).filter(|p| !keep.contains(p)).collect()
    };
    linalg::entropy_bits(&linalg::reduced_from_vector(v, dims, &side))
}

pub fn tensor(a: &DensityOperator, b: &DensityOperator) -> Result<DensityOperator> {
    a.tensor(b)
}

pub fn partial_trace<S: AsRef<str>>(rho: &DensityOperator, keep: &[S]) -> Result<DensityOperator> {
    rho.partial_trace(keep)
}

/// Von Neumann entropy in bits. Eigenvalues below `1e-12` contribute zero.
pub fn entropy(rho: &DensityOperator) -> Result<EntropyReport> {
    let eigs = linalg::hermitian_eigenvalues(&rho.matrix);
    if let Some(&min) = eigs.first() {
        if min < -TOL_PSD {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
        }
    }
    let (value, hits) = linalg::entropy_of_spectrum(&eigs);
    Ok(EntropyReport { value, eigen_floor_hits: hits })
}

fn marginal_entropy<S: AsRef<str>>(rho: &DensityOperator, labels: &[S]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    Ok(entropy(&rho.partial_trace(labels)?)?.value)
}

fn check_disjoint<S: AsRef<str>>(rho: &DensityOperator, a: &[S], b: &[S]) -> Result<Vec<String>> {
    for l in a.iter().chain(b) {
        rho.systems.position(l.as_ref())?;
    }
    for l in a {
        if b.iter().any(|m| m.as_ref() == l.as_ref()) {
            return Err(Error::OverlappingParts(l.as_ref().to_string()));
        }
    }
    Ok(a.iter().chain(b).map(|s| s.as_ref().to_string()).collect())
}

/// `I(A;B) = H(A) + H(B) - H(AB)`.
pub fn mutual_information<S: AsRef<str>>(rho: &DensityOperator, a: &[S], b: &[S]) -> Result<f64> {
    let ab = check_disjoint(rho, a, b)?;
    Ok(marginal_entropy(rho, a)? + marginal_entropy(rho, b)? - marginal_entropy(rho, &ab)?)
}

/// `I(A>B) = H(B) - H(AB)`.
pub fn coherent_information<S: AsRef<str>>(rho: &DensityOperator, a: &[S], b: &[S]) -> Result<f64> {
    let ab = check_disjoint(rho, a, b)?;
    Ok(marginal_entropy(rho, b)? - marginal_entropy(rho, &ab)?)
}

/// `I(A;B|C) = H(AC) + H(BC) - H(ABC) - H(C)`.
pub fn conditional_mutual_information<S: AsRef<str>>(
    rho: &DensityOperator,
    a: &[S],
    b: &[S],
    cond: &[S],
) -> Result<f64> {
    let ab = check_disjoint(rho, a, b)?;
    let ac = check_disjoint(rho, a, cond)?;
    let bc = check_disjoint(rho, b, cond)?;
    let abc: Vec<String> = ab.iter().cloned().chain(cond.iter().map(|s| s.as_ref().to_string())).collect();
    Ok(marginal_entropy(rho, &ac)? + marginal_entropy(rho, &bc)?
        - marginal_entropy(rho, &abc)?
        - marginal_entropy(rho, cond)?)
}

/// `(1/2) ||rho - sigma||_1`.
pub fn trace_distance(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    if rho.dims() != sigma.dims() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), found: sigma.dim() });
    }
    Ok(trace_distance_matrices(&rho.matrix, &sigma.matrix))
}

pub(crate) fn trace_distance_matrices(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = a - b;
    let s: f64 = if diff.nrows() <= 2 {
        linalg::hermitian_eigenvalues(&diff).iter().map(|x| x.abs()).sum()
    } else {
        diff.singular_values().iter().sum()
    };
    (0.5 * s).clamp(0.0, 1.0)
}

/// JSON form shared by states and channel Kraus operators: row-major
/// `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub version: String,
    pub dims: Vec<usize>,
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<[f64; 2]>>,
}

pub const SCHEMA_VERSION: &str = "qbc/1";

pub fn matrix_to_rows(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix> {
    let r = rows.len();
    let cols = rows.first().map_or(0, |row| row.len());
    if rows.iter().any(|row| row.len() != cols) {
        return Err(Error::Schema("ragged matrix rows".into()));
    }
    Ok(CMatrix::from_fn(r, cols, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

impl StateFile {
    pub fn from_state(rho: &DensityOperator) -> Self {
        Self {
            version: SCHEMA_VERSION.to_string(),
            dims: rho.dims().to_vec(),
            labels: rho.labels().to_vec(),
            matrix: matrix_to_rows(&rho.matrix),
        }
    }

    pub fn into_state(self) -> Result<DensityOperator> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported version `{}`", self.version)));
        }
        let m = matrix_from_rows(&self.matrix)?;
        DensityOperator::new(m, &self.dims, &self.labels)
    }
}

pub fn state_to_json(rho: &DensityOperator) -> Result<String> {
    Ok(serde_json::to_string_pretty(&StateFile::from_state(rho))?)
}

pub fn state_from_json(s: &str) -> Result<DensityOperator> {
    let f: StateFile = serde_json::from_str(s)?;
    f.into_state()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn phi2() -> DensityOperator {
        DensityOperator::from_pure(&PureState::maximally_entangled(2, "A", "B").unwrap())
    }

    fn classical_pair() -> DensityOperator {
        DensityOperator::diagonal(&[0.5, 0.0, 0.0, 0.5], &[2, 2], &["A", "B"]).unwrap()
    }

    #[test]
    fn tensor_of_maximally_mixed_is_maximally_mixed() {
        let a = DensityOperator::maximally_mixed(&[2], &["A"]).unwrap();
        let b = DensityOperator::maximally_mixed(&[2], &["B"]).unwrap();
        let ab = a.tensor(&b).unwrap();
        let expect = DensityOperator::maximally_mixed(&[2, 2], &["A", "B"]).unwrap();
        assert!(linalg::max_abs(&(ab.matrix() - expect.matrix())) < 1e-15);
        assert_eq!(ab.dims(), &[2, 2]);
    }

    #[test]
    fn tensor_of_basis_states() {
        let z = DensityOperator::basis(&[2], &["A"], 0).unwrap();
        let o = DensityOperator::basis(&[2], &["B"], 1).unwrap();
        let zo = z.tensor(&o).unwrap();
        let expect = DensityOperator::basis(&[2, 2], &["A", "B"], 1).unwrap();
        assert_eq!(zo.matrix(), expect.matrix());
        let t = phi2().tensor(&DensityOperator::basis(&[2], &["C"], 0).unwrap()).unwrap();
        assert!((t.trace() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tensor_rejects_duplicate_labels() {
        let a = DensityOperator::maximally_mixed(&[2], &["A"]).unwrap();
        assert!(a.tensor(&a).is_err());
    }

    #[test]
    fn partial_trace_cases() {
        let marg = phi2().partial_trace(&["A"]).unwrap();
        let mixed = DensityOperator::maximally_mixed(&[2], &["A"]).unwrap();
        assert!(linalg::max_abs(&(marg.matrix() - mixed.matrix())) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ra = DensityOperator::new(linalg::random_density_matrix(2, 2, &mut rng), &[2], &["A"]).unwrap();
        let sb = DensityOperator::new(linalg::random_density_matrix(3, 3, &mut rng), &[3], &["B"]).unwrap();
        let back = ra.tensor(&sb).unwrap().partial_trace(&["A"]).unwrap();
        assert!(linalg::max_abs(&(back.matrix() - ra.matrix())) < 1e-14);

        let whole = phi2().partial_trace(&["A", "B"]).unwrap();
        assert_eq!(whole, phi2());
        assert!(matches!(phi2().partial_trace(&["Q"]), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn entropy_examples() {
        let half = DensityOperator::maximally_mixed(&[2], &["A"]).unwrap();
        assert!((entropy(&half).unwrap().value - 1.0).abs() < 1e-12);
        assert!(entropy(&phi2()).unwrap().value.abs() < 1e-12);
        // -0.25 log2 0.25 - 0.75 log2 0.75
        let oracle = -(0.25f64 * 0.25f64.log2() + 0.75 * 0.75f64.log2());
        let d = DensityOperator::diagonal(&[0.25, 0.75], &[2], &["A"]).unwrap();
        assert!((entropy(&d).unwrap().value - oracle).abs() < 1e-12);
        assert!((oracle - 0.811_278_124_459_133).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_non_psd() {
        let bad = DensityOperator::from_parts_unchecked(
            CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.5, 0.0), c(-0.5, 0.0)])),
            Subsystems::new(&[2], &["A"]).unwrap(),
        );
        assert!(matches!(entropy(&bad), Err(Error::InvalidState(_))));
        let m = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.5, 0.0), c(-0.5, 0.0)]));
        assert!(DensityOperator::new(m, &[2], &["A"]).is_err());
    }

    #[test]
    fn mutual_and_coherent_information_examples() {
        let phi = phi2();
        assert!((mutual_information(&phi, &["A"], &["B"]).unwrap() - 2.0).abs() < 1e-12);
        assert!((coherent_information(&phi, &["A"], &["B"]).unwrap() - 1.0).abs() < 1e-12);

        let prod = DensityOperator::diagonal(&[0.25, 0.75], &[2], &["A"])
            .unwrap()
            .tensor(&DensityOperator::maximally_mixed(&[2], &["B"]).unwrap())
            .unwrap();
        assert!(mutual_information(&prod, &["A"], &["B"]).unwrap().abs() < 1e-12);
        let ha = entropy(&prod.partial_trace(&["A"]).unwrap()).unwrap().value;
        assert!((coherent_information(&prod, &["A"], &["B"]).unwrap() + ha).abs() < 1e-12);

        // H(A) = H(B) = 1, H(AB) = 1
        let cl = classical_pair();
        assert!((mutual_information(&cl, &["A"], &["B"]).unwrap() - 1.0).abs() < 1e-12);
        assert!(coherent_information(&cl, &["A"], &["B"]).unwrap().abs() < 1e-12);
        assert!(matches!(
            mutual_information(&cl, &["A"], &["A"]),
            Err(Error::OverlappingParts(_))
        ));
    }

    #[test]
    fn trace_distance_examples() {
        let z = DensityOperator::basis(&[2], &["A"], 0).unwrap();
        let o = DensityOperator::basis(&[2], &["A"], 1).unwrap();
        let half = DensityOperator::maximally_mixed(&[2], &["A"]).unwrap();
        assert_eq!(trace_distance(&z, &z).unwrap(), 0.0);
        assert!((trace_distance(&z, &o).unwrap() - 1.0).abs() < 1e-15);
        // difference has eigenvalues +1/2, -1/2
        assert!((trace_distance(&z, &half).unwrap() - 0.5).abs() < 1e-15);
        assert!(trace_distance(&z, &phi2()).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = DensityOperator::new(linalg::random_density_matrix(4, 3, &mut rng), &[2, 2], &["A", "B"]).unwrap();
        let s = state_to_json(&rho).unwrap();
        let back = state_from_json(&s).unwrap();
        assert_eq!(back, rho);
    }
}
