//! Pure input states pushed through a broadcast channel's dilation, and the
//! coherent informations read off the resulting pure state.

use crate::broadcast::BroadcastChannel;
use crate::linalg::{self, CMatrix, CVector};
use crate::state;

/// `V: A -> B1 B2 E` for a broadcast channel.
#[derive(Debug, Clone)]
pub struct Dilation {
    pub isometry: CMatrix,
    pub d_in: usize,
    pub d1: usize,
    pub d2: usize,
    pub env: usize,
}

impl Dilation {
    pub fn of(bc: &BroadcastChannel) -> Self {
        let ext = bc.channel().stinespring();
        Self { d_in: bc.in_dim(), d1: bc.d1(), d2: bc.d2(), env: ext.env_dim, isometry: ext.isometry }
    }

    /// `(I_R (x) V) phi` for `phi` on `R (x) A`, `R` of total dimension
    /// `phi.len() / d_in`. The result is laid out as `R, B1, B2, E`.
    pub fn push(&self, phi: &CVector) -> CVector {
        let rest = phi.len() / self.d_in;
        let m = CMatrix::from_fn(rest, self.d_in, |r, a| phi[r * self.d_in + a]);
        let out = m * self.isometry.transpose();
        let dv = self.isometry.nrows();
        CVector::from_fn(rest * dv, |i, _| out[(i / dv, i % dv)])
    }

    /// Gradient with respect to `phi` of a real function whose gradient
    /// with respect to `push(phi)` is `g`.
    pub fn pull_gradient(&self, g: &CVector) -> CVector {
        let dv = self.isometry.nrows();
        let rest = g.len() / dv;
        let gm = CMatrix::from_fn(rest, dv, |r, i| g[r * dv + i]);
        let out = gm * self.isometry.conjugate();
        CVector::from_fn(rest * self.d_in, |i, _| out[(i / self.d_in, i % self.d_in)])
    }

    /// Subsystem dimensions of [`Dilation::push`] output for references
    /// `refs`.
    pub fn output_dims(&self, refs: &[usize]) -> Vec<usize> {
        let mut dims = refs.to_vec();
        dims.extend([self.d1, self.d2, self.env]);
        dims
    }
}

/// Entropy of the marginal on `keep` of a pure (unit) vector.
pub fn h(v: &CVector, dims: &[usize], keep: &[usize]) -> f64 {
    state::marginal_entropy_by_position(v, dims, keep)
}

/// `I(R > B) = H(B) - H(RB)` on a pure vector.
pub fn coherent(v: &CVector, dims: &[usize], r: &[usize], b: &[usize]) -> f64 {
    let mut rb: Vec<usize> = r.iter().chain(b).copied().collect();
    rb.sort_unstable();
    h(v, dims, b) - h(v, dims, &rb)
}

/// `f(A) = -Tr A log2 A` over eigenvalues above the floor, and its
/// derivative `-log2 A - 1/ln 2` (eigenvalues floored).
pub fn entropy_and_derivative(a: &CMatrix) -> (f64, CMatrix) {
    let (vals, vecs) = linalg::hermitian_eigen(a);
    let mut f = 0.0;
    let mut scaled = vecs.clone();
    for (j, &l) in vals.iter().enumerate() {
        if l >= linalg::EIGEN_FLOOR {
            f -= l * l.log2();
        }
        let g = -(l.max(linalg::EIGEN_FLOOR)).log2() - std::f64::consts::LOG2_E;
        for i in 0..a.nrows() {
            scaled[(i, j)] *= g;
        }
    }
    (f, scaled * vecs.adjoint())
}

/// Marginal entropy on `keep` of the (possibly unnormalized) vector `v`,
/// read as `-Tr rho log2 rho` with `rho` the unnormalized reduced matrix,
/// and its gradient with respect to `v` (real view: `d/dRe + i d/dIm`).
pub fn entropy_with_gradient(v: &CVector, dims: &[usize], keep: &[usize]) -> (f64, CVector) {
    if keep.is_empty() || keep.len() == dims.len() {
        // -n log n for the scalar n = |v|^2
        let n = v.norm_squared();
        if n < linalg::EIGEN_FLOOR {
            return (0.0, CVector::zeros(v.len()));
        }
        let g = -n.log2() - std::f64::consts::LOG2_E;
        return (-n * n.log2(), v * linalg::c(2.0 * g, 0.0));
    }
    let dk: usize = keep.iter().map(|&p| dims[p]).product();
    let total: usize = dims.iter().product();
    let side: Vec<usize> =
        if dk * dk <= total { keep.to_vec() } else { (0..dims.len()).filter(|p| !keep.contains(p)).collect() };
    let (dk, dt, table) = linalg::split_index_table(dims, &side);
    let x = CMatrix::from_fn(dk, dt, |a, t| v[table[a * dt + t]]);
    let rho = &x * x.adjoint();
    let (f, g) = entropy_and_derivative(&rho);
    let gx = g * &x * linalg::c(2.0, 0.0);
    let mut grad = CVector::zeros(v.len());
    for a in 0..dk {
        for t in 0..dt {
            grad[table[a * dt + t]] = gx[(a, t)];
        }
    }
    (f, grad)
}

/// Unit vector from unconstrained reals.
pub fn unit(x: &[f64]) -> CVector {
    linalg::unit_vector_from_reals(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broadcast;
    use crate::state::{coherent_information, DensityOperator, PureState};

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let dims = [2, 3, 2];
        let v = linalg::random_unit_vector(12, &mut rng) * linalg::c(0.9, 0.0);
        for keep in [vec![0], vec![1], vec![0, 2], vec![]] {
            let (f, g) = entropy_with_gradient(&v, &dims, &keep);
            let eps = 1e-6;
            for i in 0..12 {
                for (dir, part) in [(linalg::c(eps, 0.0), g[i].re), (linalg::c(0.0, eps), g[i].im)] {
                    let mut w = v.clone();
                    w[i] += dir;
                    let (fp, _) = entropy_with_gradient(&w, &dims, &keep);
                    let mut w = v.clone();
                    w[i] -= dir;
                    let (fm, _) = entropy_with_gradient(&w, &dims, &keep);
                    let fd = (fp - fm) / (2.0 * eps);
                    assert!((fd - part).abs() < 1e-5, "{keep:?} {i}: {fd} vs {part} (f = {f})");
                }
            }
        }
    }

    #[test]
    fn push_matches_channel_action() {
        let bc = broadcast::random_broadcast(2, 2, 2, 3, 4).unwrap();
        let dil = Dilation::of(&bc);
        let phi = PureState::maximally_entangled(2, "R", "A").unwrap();
        let out = dil.push(phi.vector());
        let dims = dil.output_dims(&[2]);
        let rb = linalg::reduced_from_vector(&out, &dims, &[0, 1, 2]);
        let id = crate::channel::QuantumChannel::identity(2, "R", "R").unwrap();
        let direct = id.tensor(bc.channel()).unwrap().apply_matrix(&linalg::projector(phi.vector()));
        assert!(linalg::max_abs(&(rb - direct)) < 1e-12);
    }

    #[test]
    fn coherent_information_agrees_with_state_route() {
        let bc = broadcast::qubit_dephasing_broadcast(0.2, 0.1).unwrap();
        let dil = Dilation::of(&bc);
        let phi = PureState::maximally_entangled(2, "R", "A").unwrap();
        let out = dil.push(phi.vector());
        let dims = dil.output_dims(&[2]);
        let rb1 = linalg::reduced_from_vector(&out, &dims, &[0, 1]);
        let rho = DensityOperator::new(rb1, &[2, 2], &["R", "B1"]).unwrap();
        let direct = coherent_information(&rho, &["R"], &["B1"]).unwrap();
        assert!((coherent(&out, &dims, &[0], &[1]) - direct).abs() < 1e-12);
        // 1 - h(0.2) for a dephasing channel with a maximally entangled input
        assert!((direct - (1.0 - crate::eof::binary_entropy(0.2))).abs() < 1e-12);
    }
}
