//! CPTP maps in Kraus form, their Stinespring dilations and complementary
//! channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, CVector};
use crate::state::{matrix_from_rows, matrix_to_rows, DensityOperator, PureState, Subsystems};

/// Trace-preservation slack for `sum K^dagger K = I`.
pub const TOL_TP: f64 = 1e-9;
/// Singular values below this are dropped when trimming Kraus sets.
pub const KRAUS_TRIM: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumChannel {
    kraus: Vec<CMatrix>,
    input: Subsystems,
    output: Subsystems,
}

impl QuantumChannel {
    pub fn new(kraus: Vec<CMatrix>, input: Subsystems, output: Subsystems) -> Result<Self> {
        let (din, dout) = (input.total_dim(), output.total_dim());
        if kraus.is_empty() {
            return Err(Error::InvalidChannel("empty Kraus list".into()));
        }
        for k in &kraus {
            if k.nrows() != dout || k.ncols() != din {
                return Err(Error::InvalidChannel(format!(
                    "Kraus operator is {}x{}, expected {dout}x{din}",
                    k.nrows(),
                    k.ncols()
                )));
            }
        }
        let ch = Self { kraus, input, output };
        let defect = ch.tp_defect();
        if defect > TOL_TP {
            return Err(Error::InvalidChannel(format!("not trace preserving (defect {defect:.3e})")));
        }
        Ok(ch)
    }

    pub(crate) fn from_parts_unchecked(kraus: Vec<CMatrix>, input: Subsystems, output: Subsystems) -> Self {
        Self { kraus, input, output }
    }

    pub fn identity(d: usize, in_label: &str, out_label: &str) -> Result<Self> {
        Self::new(
            vec![linalg::identity(d)],
            Subsystems::new(&[d], &[in_label])?,
            Subsystems::new(&[d], &[out_label])?,
        )
    }

    /// Discards the input and prepares `sigma`.
    pub fn constant(din: usize, sigma: &CMatrix, input: Subsystems, output: Subsystems) -> Result<Self> {
        let (vals, vecs) = linalg::hermitian_eigen(sigma);
        let mut kraus = Vec::new();
        for (j, &l) in vals.iter().enumerate() {
            if l <= KRAUS_TRIM {
                continue;
            }
            let col = vecs.column(j) * c(l.sqrt(), 0.0);
            for i in 0..din {
                let mut k = CMatrix::zeros(sigma.nrows(), din);
                k.set_column(i, &col);
                kraus.push(k);
            }
        }
        Self::new(kraus, input, output)
    }

    pub fn kraus(&self) -> &[CMatrix] {
        &self.kraus
    }

    pub fn input(&self) -> &Subsystems {
        &self.input
    }

    pub fn output(&self) -> &Subsystems {
        &self.output
    }

    pub fn in_dim(&self) -> usize {
        self.input.total_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.output.total_dim()
    }

    /// max-entry of `sum K^dagger K - I`.
    pub fn tp_defect(&self) -> f64 {
        let d = self.in_dim();
        let mut s = CMatrix::zeros(d, d);
        for k in &self.kraus {
            s += k.adjoint() * k;
        }
        linalg::max_abs(&(s - linalg::identity(d)))
    }

    /// Smallest Choi eigenvalue (non-negative for CP maps up to rounding).
    pub fn choi_min_eigenvalue(&self) -> f64 {
        linalg::hermitian_eigenvalues(&self.choi()).first().copied().unwrap_or(0.0)
    }

    /// `J = sum_ij |i><j| (x) N(|i><j|)`.
    pub fn choi(&self) -> CMatrix {
        let (din, dout) = (self.in_dim(), self.out_dim());
        let mut j = CMatrix::zeros(din * dout, din * dout);
        for k in &self.kraus {
            // vec(K) with input index major
            let v = CVector::from_fn(din * dout, |idx, _| k[(idx % dout, idx / dout)]);
            j += &v * v.adjoint();
        }
        j
    }

    pub fn apply(&self, rho: &DensityOperator) -> Result<DensityOperator> {
        if rho.dim() != self.in_dim() {
            return Err(Error::DimensionMismatch { expected: self.in_dim(), found: rho.dim() });
        }
        let out = self.apply_matrix(rho.matrix());
        Ok(DensityOperator::from_parts_unchecked(linalg::hermitize(&out), self.output.clone()))
    }

    pub fn apply_matrix(&self, rho: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.out_dim(), self.out_dim());
        for k in &self.kraus {
            out += k * rho * k.adjoint();
        }
        out
    }

    /// Output of the pure input `psi` (not necessarily normalized).
    pub fn apply_pure(&self, psi: &CVector) -> CMatrix {
        let mut out = CMatrix::zeros(self.out_dim(), self.out_dim());
        for k in &self.kraus {
            let v = k * psi;
            out += &v * v.adjoint();
        }
        out
    }

    /// `after` applied to the output of `self`.
    pub fn then(&self, after: &QuantumChannel) -> Result<QuantumChannel> {
        if after.in_dim() != self.out_dim() {
            return Err(Error::DimensionMismatch { expected: self.out_dim(), found: after.in_dim() });
        }
        let mut kraus = Vec::with_capacity(self.kraus.len() * after.kraus.len());
        for a in &after.kraus {
            for k in &self.kraus {
                kraus.push(a * k);
            }
        }
        Ok(Self { kraus, input: self.input.clone(), output: after.output.clone() }.trimmed())
    }

    /// Product channel; labels of `other` must not clash.
    pub fn tensor(&self, other: &QuantumChannel) -> Result<QuantumChannel> {
        let mut kraus = Vec::with_capacity(self.kraus.len() * other.kraus.len());
        for a in &self.kraus {
            for b in &other.kraus {
                kraus.push(linalg::kron(a, b));
            }
        }
        let join = |x: &Subsystems, y: &Subsystems| {
            let dims: Vec<usize> = x.dims.iter().chain(&y.dims).copied().collect();
            let labels: Vec<String> = x.labels.iter().chain(&y.labels).cloned().collect();
            Subsystems::new(&dims, &labels)
        };
        Ok(Self { kraus, input: join(&self.input, &other.input)?, output: join(&self.output, &other.output)? })
    }

    /// Minimal Kraus set: the SVD of the stacked operators with singular
    /// values below [`KRAUS_TRIM`] removed.
    pub fn trimmed(&self) -> QuantumChannel {
        let (din, dout) = (self.in_dim(), self.out_dim());
        let n = self.kraus.len();
        let mut stacked = CMatrix::zeros(din * dout, n);
        for (col, k) in self.kraus.iter().enumerate() {
            for i in 0..dout {
                for j in 0..din {
                    stacked[(i * din + j, col)] = k[(i, j)];
                }
            }
        }
        let svd = stacked.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut kraus = Vec::new();
        for (idx, &sv) in svd.singular_values.iter().enumerate() {
            if sv <= KRAUS_TRIM {
                continue;
            }
            let col = u.column(idx) * c(sv, 0.0);
            kraus.push(CMatrix::from_fn(dout, din, |i, j| col[i * din + j]));
        }
        if kraus.is_empty() {
            kraus.push(CMatrix::zeros(dout, din));
        }
        Self { kraus, input: self.input.clone(), output: self.output.clone() }
    }

    pub fn stinespring(&self) -> IsometricExtension {
        let t = self.trimmed();
        let (din, dout) = (t.in_dim(), t.out_dim());
        let env = t.kraus.len();
        let mut v = CMatrix::zeros(dout * env, din);
        for (e, k) in t.kraus.iter().enumerate() {
            for i in 0..dout {
                for j in 0..din {
                    v[(i * env + e, j)] = k[(i, j)];
                }
            }
        }
        IsometricExtension { isometry: v, env_dim: env, input: t.input, output: t.output }
    }

    pub fn complementary(&self) -> QuantumChannel {
        self.stinespring().complementary()
    }

    pub fn to_file(&self) -> KrausFile {
        KrausFile {
            in_dims: self.input.dims.clone(),
            in_labels: self.input.labels.clone(),
            out_dims: self.output.dims.clone(),
            out_labels: self.output.labels.clone(),
            kraus: self.kraus.iter().map(matrix_to_rows).collect(),
        }
    }
}

/// `V: in -> out (x) env`, with the environment as the least significant
/// factor.
#[derive(Debug, Clone, PartialEq)]
pub struct IsometricExtension {
    pub isometry: CMatrix,
    pub env_dim: usize,
    pub input: Subsystems,
    pub output: Subsystems,
}

impl IsometricExtension {
    pub fn isometry_defect(&self) -> f64 {
        let d = self.isometry.ncols();
        linalg::max_abs(&(self.isometry.adjoint() * &self.isometry - linalg::identity(d)))
    }

    pub fn out_dim(&self) -> usize {
        self.output.total_dim()
    }

    /// `Tr_env V rho V^dagger`.
    pub fn channel_output(&self, rho: &CMatrix) -> CMatrix {
        let full = &self.isometry * rho * self.isometry.adjoint();
        linalg::partial_trace(&full, &[self.out_dim(), self.env_dim], &[0])
    }

    pub fn complementary(&self) -> QuantumChannel {
        let (dout, env, din) = (self.out_dim(), self.env_dim, self.isometry.ncols());
        let kraus = (0..dout)
            .map(|b| CMatrix::from_fn(env, din, |e, j| self.isometry[(b * env + e, j)]))
            .collect();
        let env_sys = Subsystems { dims: vec![env], labels: vec!["E".into()] };
        QuantumChannel::from_parts_unchecked(kraus, self.input.clone(), env_sys)
    }

    /// Applies the dilation to subsystem `target` of a pure state. The
    /// target is replaced by the output subsystems and `env_label` is
    /// appended last.
    pub fn apply_to_pure(&self, psi: &PureState, target: &str, env_label: &str) -> Result<PureState> {
        let sys = psi.systems();
        let pos = sys.position(target)?;
        if sys.dims[pos] != self.isometry.ncols() {
            return Err(Error::DimensionMismatch { expected: self.isometry.ncols(), found: sys.dims[pos] });
        }
        let before: usize = sys.dims[..pos].iter().product();
        let after: usize = sys.dims[pos + 1..].iter().product();
        let din = sys.dims[pos];
        let dv = self.isometry.nrows();
        // result index order: before, out, after, env
        let (dout, env) = (self.out_dim(), self.env_dim);
        let v = psi.vector();
        let mut outv = CVector::zeros(before * dv * after);
        for b in 0..before {
            for a in 0..after {
                for j in 0..din {
                    let amp = v[(b * din + j) * after + a];
                    if amp == linalg::ZERO {
                        continue;
                    }
                    for o in 0..dout {
                        for e in 0..env {
                            let w = self.isometry[(o * env + e, j)];
                            outv[((b * dout + o) * after + a) * env + e] += w * amp;
                        }
                    }
                }
            }
        }
        let mut dims: Vec<usize> = sys.dims[..pos].to_vec();
        dims.extend_from_slice(&self.output.dims);
        dims.extend_from_slice(&sys.dims[pos + 1..]);
        dims.push(env);
        let mut labels: Vec<String> = sys.labels[..pos].to_vec();
        labels.extend(self.output.labels.iter().cloned());
        labels.extend(sys.labels[pos + 1..].iter().cloned());
        labels.push(env_label.to_string());
        Ok(PureState::from_parts_unchecked(outv, Subsystems::new(&dims, &labels)?))
    }
}

/// Kraus operators plus subsystem layout, as stored in channel files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrausFile {
    pub in_dims: Vec<usize>,
    pub in_labels: Vec<String>,
    pub out_dims: Vec<usize>,
    pub out_labels: Vec<String>,
    pub kraus: Vec<Vec<Vec<[f64; 2]>>>,
}

impl KrausFile {
    pub fn into_channel(self) -> Result<QuantumChannel> {
        let kraus = self.kraus.iter().map(|k| matrix_from_rows(k)).collect::<Result<Vec<_>>>()?;
        QuantumChannel::new(
            kraus,
            Subsystems::new(&self.in_dims, &self.in_labels)?,
            Subsystems::new(&self.out_dims, &self.out_labels)?,
        )
    }
}

/// `(1-p) rho + p Z rho Z` on a qubit.
pub fn dephasing(p: f64, in_label: &str, out_label: &str) -> Result<QuantumChannel> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("dephasing probability {p} outside [0,1]")));
    }
    let z = CMatrix::from_diagonal(&CVector::from_vec(vec![linalg::ONE, c(-1.0, 0.0)]));
    QuantumChannel::new(
        vec![linalg::identity(2) * c((1.0 - p).sqrt(), 0.0), z * c(p.sqrt(), 0.0)],
        Subsystems::new(&[2], &[in_label])?,
        Subsystems::new(&[2], &[out_label])?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qubit(label: &str) -> Subsystems {
        Subsystems::new(&[2], &[label]).unwrap()
    }

    /// Random CPTP map from a random isometry.
    pub(crate) fn random_channel(din: usize, dout: usize, nk: usize, seed: u64) -> Vec<CMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = CMatrix::from_fn(dout * nk, din, |_, _| linalg::random_complex_gaussian(&mut rng));
        let v = linalg::polar_isometry(&g);
        (0..nk).map(|e| CMatrix::from_fn(dout, din, |i, j| v[(i * nk + e, j)])).collect()
    }

    #[test]
    fn identity_channel_leaves_states_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = DensityOperator::new(linalg::random_density_matrix(2, 2, &mut rng), &[2], &["A"]).unwrap();
        let id = QuantumChannel::identity(2, "A", "B").unwrap();
        let out = id.apply(&rho).unwrap();
        assert!(linalg::max_abs(&(out.matrix() - rho.matrix())) < 1e-15);
        assert_eq!(out.labels(), &["B".to_string()]);
    }

    #[test]
    fn full_dephasing_sends_plus_to_maximally_mixed() {
        let plus = PureState::normalized(CVector::from_vec(vec![linalg::ONE, linalg::ONE]), &[2], &["A"]).unwrap();
        let ch = dephasing(0.5, "A", "B").unwrap();
        let out = ch.apply(&DensityOperator::from_pure(&plus)).unwrap();
        // off-diagonals (1-p)/2 - p/2 = 0
        let half = linalg::identity(2) * c(0.5, 0.0);
        assert!(linalg::max_abs(&(out.matrix() - half)) < 1e-15);
    }

    #[test]
    fn rejects_non_trace_preserving_kraus() {
        let k = linalg::identity(2) * c(0.9, 0.0);
        assert!(QuantumChannel::new(vec![k], qubit("A"), qubit("B")).is_err());
        let wrong_shape = CMatrix::zeros(3, 2);
        assert!(QuantumChannel::new(vec![wrong_shape], qubit("A"), qubit("B")).is_err());
    }

    #[test]
    fn identity_dilation_has_trivial_environment() {
        let id = QuantumChannel::identity(2, "A", "B").unwrap();
        let ext = id.stinespring();
        assert_eq!(ext.env_dim, 1);
        let comp = ext.complementary();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = comp.apply_matrix(&linalg::random_density_matrix(2, 2, &mut rng));
        let b = comp.apply_matrix(&linalg::random_density_matrix(2, 1, &mut rng));
        assert!(linalg::max_abs(&(a - b)) < 1e-14);
    }

    #[test]
    fn dephasing_complement_measures_in_z_basis() {
        let ch = dephasing(0.5, "A", "B").unwrap();
        let ext = ch.stinespring();
        assert!(ext.isometry_defect() < 1e-9);
        assert_eq!(ext.env_dim, 2);
        let comp = ext.complementary();
        // Complement of full dephasing outputs the same environment state
        // for |+> and |->, and orthogonal states for |0> and |1>.
        let plus = CVector::from_vec(vec![c(0.5f64.sqrt(), 0.0), c(0.5f64.sqrt(), 0.0)]);
        let minus = CVector::from_vec(vec![c(0.5f64.sqrt(), 0.0), c(-(0.5f64.sqrt()), 0.0)]);
        let ep = comp.apply_pure(&plus);
        let em = comp.apply_pure(&minus);
        assert!(linalg::max_abs(&(ep - em)) < 1e-12);
        let e0 = comp.apply_pure(&linalg::basis_vector(2, 0));
        let e1 = comp.apply_pure(&linalg::basis_vector(2, 1));
        assert!(crate::state::trace_distance_matrices(&e0, &e1) > 1.0 - 1e-12);
    }

    #[test]
    fn three_kraus_dilation_round_trip() {
        // amplitude-damping-like channel with an extra dephasing branch
        let g: f64 = 0.3;
        let q: f64 = 0.2;
        let k0 = CMatrix::from_row_slice(2, 2, &[linalg::ONE, linalg::ZERO, linalg::ZERO, c((1.0 - g).sqrt(), 0.0)])
            * c((1.0 - q).sqrt(), 0.0);
        let k1 = CMatrix::from_row_slice(2, 2, &[linalg::ZERO, c(g.sqrt(), 0.0), linalg::ZERO, linalg::ZERO])
            * c((1.0 - q).sqrt(), 0.0);
        let k2 = CMatrix::from_row_slice(2, 2, &[linalg::ONE, linalg::ZERO, linalg::ZERO, c(-1.0, 0.0)]) * c(q.sqrt(), 0.0);
        let ch = QuantumChannel::new(vec![k0, k1, k2], qubit("A"), qubit("B")).unwrap();
        let ext = ch.stinespring();
        assert!(ext.isometry_defect() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let rho = linalg::random_density_matrix(2, 2, &mut rng);
            let residual = linalg::max_abs(&(ext.channel_output(&rho) - ch.apply_matrix(&rho)));
            assert!(residual <= 1e-9, "{residual}");
        }
    }

    #[test]
    fn trimming_preserves_action_and_minimizes_rank() {
        let kraus = random_channel(2, 3, 3, 5);
        let mut doubled: Vec<CMatrix> = kraus.iter().map(|k| k * c(0.5f64.sqrt(), 0.0)).collect();
        doubled.extend(doubled.clone());
        let ch = QuantumChannel::new(doubled, qubit("A"), Subsystems::new(&[3], &["B"]).unwrap()).unwrap();
        let t = ch.trimmed();
        assert_eq!(t.kraus().len(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rho = linalg::random_density_matrix(2, 2, &mut rng);
        assert!(linalg::max_abs(&(t.apply_matrix(&rho) - ch.apply_matrix(&rho))) < 1e-12);
    }

    #[test]
    fn dilation_applied_to_subsystem_matches_channel() {
        let kraus = random_channel(2, 2, 2, 9);
        let ch = QuantumChannel::new(kraus, qubit("Ap"), qubit("B")).unwrap();
        let ext = ch.stinespring();
        let phi = PureState::maximally_entangled(2, "R", "Ap").unwrap();
        let out = ext.apply_to_pure(&phi, "Ap", "E").unwrap();
        let rb = out.reduced(&["R", "B"]).unwrap();
        // (id (x) N)(Phi) computed directly
        let id_n = QuantumChannel::identity(2, "R", "R").unwrap().tensor(&ch).unwrap();
        let direct = id_n.apply_matrix(&linalg::projector(phi.vector()));
        assert!(linalg::max_abs(&(rb.matrix() - direct)) < 1e-12);
    }
}
