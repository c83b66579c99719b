//! Rate regions of broadcast channels with a conferencing link between the
//! receivers.
//!
//! Every region is the convex hull of pentagons `{x <= a, y <= b,
//! x + y <= s}`, one per witness (an input ensemble or an input state).
//! Witnesses come from a weight sweep: for each weight `w` the support
//! value `max w . p` over a witness's pentagon is maximized by multi-start
//! L-BFGS on a smoothed version of that value, then re-evaluated exactly.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::broadcast::BroadcastChannel;
use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::linalg::{self, c, CMatrix, CVector};
use crate::optimize::{self, LocalOptions, LocalResult};
use crate::quantum::{self, Dilation};
use crate::state::{self, DensityOperator, SCHEMA_VERSION};

/// Pure input states `theta^{x0,x1}` with their joint pmf, flattened
/// row-major over `(x0, x1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEnsemble {
    pub card0: usize,
    pub card1: usize,
    pub pmf: Vec<f64>,
    pub states: Vec<Vec<[f64; 2]>>,
}

impl InputEnsemble {
    pub fn new(card0: usize, card1: usize, pmf: Vec<f64>, states: Vec<CVector>) -> Result<Self> {
        if card0 == 0 || card1 == 0 || pmf.len() != card0 * card1 || states.len() != pmf.len() {
            return Err(Error::InvalidParameter(format!(
                "ensemble of {card0}x{card1} needs {} probabilities and states",
                card0 * card1
            )));
        }
        if pmf.iter().any(|&p| p < 0.0 || !p.is_finite()) || (pmf.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("pmf must be non-negative and sum to 1".into()));
        }
        let d = states[0].len();
        for s in &states {
            if s.len() != d || (s.norm() - 1.0).abs() > state::TOL_NORM {
                return Err(Error::InvalidState("ensemble states must be unit vectors of equal dimension".into()));
            }
        }
        Ok(Self { card0, card1, pmf, states: states.iter().map(to_pairs).collect() })
    }

    /// From subnormalized vectors `sqrt(p) theta` (jointly unit norm).
    /// Zero vectors get `|0>` and probability zero.
    pub fn from_weighted(card0: usize, card1: usize, vs: &[CVector]) -> Self {
        let total: f64 = vs.iter().map(|v| v.norm_squared()).sum();
        let pmf = vs.iter().map(|v| v.norm_squared() / total).collect();
        let states = vs
            .iter()
            .map(|v| {
                let n = v.norm();
                if n > 1e-150 {
                    to_pairs(&(v / c(n, 0.0)))
                } else {
                    to_pairs(&linalg::basis_vector(v.len(), 0))
                }
            })
            .collect();
        Self { card0, card1, pmf, states }
    }

    pub fn input_dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn state(&self, i: usize) -> CVector {
        from_pairs(&self.states[i])
    }

    pub fn weighted_vectors(&self) -> Vec<CVector> {
        (0..self.pmf.len()).map(|i| self.state(i) * c(self.pmf[i].sqrt(), 0.0)).collect()
    }

    /// Product ensemble for the two-fold product channel: symbols
    /// `(x0, x0')` and `(x1, x1')`, states `theta (x) theta'`.
    pub fn tensor(&self, other: &InputEnsemble) -> InputEnsemble {
        let (c0, c1) = (self.card0 * other.card0, self.card1 * other.card1);
        let mut pmf = vec![0.0; c0 * c1];
        let mut states = vec![Vec::new(); c0 * c1];
        for a0 in 0..self.card0 {
            for b0 in 0..other.card0 {
                for a1 in 0..self.card1 {
                    for b1 in 0..other.card1 {
                        let i = a0 * self.card1 + a1;
                        let j = b0 * other.card1 + b1;
                        let k = (a0 * other.card0 + b0) * c1 + a1 * other.card1 + b1;
                        pmf[k] = self.pmf[i] * other.pmf[j];
                        states[k] = to_pairs(&linalg::kron_vec(&self.state(i), &other.state(j)));
                    }
                }
            }
        }
        InputEnsemble { card0: c0, card1: c1, pmf, states }
    }

    /// The classical-quantum state `sum p |x0 x1><x0 x1| (x) N(theta)` on
    /// `X0 X1 B1 B2`.
    pub fn cq_state(&self, bc: &BroadcastChannel) -> Result<DensityOperator> {
        self.check_dims(bc)?;
        let (d1, d2) = (bc.d1(), bc.d2());
        let db = d1 * d2;
        let n = self.pmf.len();
        let mut m = CMatrix::zeros(n * db, n * db);
        for i in 0..n {
            let out = bc.channel().apply_pure(&self.state(i)) * c(self.pmf[i], 0.0);
            m.view_mut((i * db, i * db), (db, db)).copy_from(&out);
        }
        DensityOperator::new(m, &[self.card0, self.card1, d1, d2], &["X0", "X1", "B1", "B2"])
    }

    fn check_dims(&self, bc: &BroadcastChannel) -> Result<()> {
        if self.input_dim() != bc.in_dim() {
            return Err(Error::DimensionMismatch { expected: bc.in_dim(), found: self.input_dim() });
        }
        Ok(())
    }
}

fn to_pairs(v: &CVector) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn from_pairs(p: &[[f64; 2]]) -> CVector {
    CVector::from_iterator(p.len(), p.iter().map(|z| c(z[0], z[1])))
}

/// Right-hand sides of the three classical rate constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalBounds {
    /// `I(X0;B2) + C12`
    pub r0: f64,
    /// `I(X1;B1|X0)`
    pub r1: f64,
    /// `I(X0 X1;B1)`
    pub sum: f64,
}

/// Evaluates the three bounds from the entropies of the cq state's blocks.
pub fn eval_classical_point(ens: &InputEnsemble, bc: &BroadcastChannel, c12: f64) -> Result<ClassicalBounds> {
    ens.check_dims(bc)?;
    let (n1, n2) = (bc.marginal(1), bc.marginal(2));
    let h = |m: &CMatrix, d: usize, w: f64| -> Result<f64> {
        if w <= 0.0 {
            return Ok(0.0);
        }
        let rho = DensityOperator::new(m / c(w, 0.0), &[d], &["B"])?;
        Ok(state::entropy(&rho)?.value)
    };
    let (d1, d2) = (bc.d1(), bc.d2());
    let mut tot1 = CMatrix::zeros(d1, d1);
    let mut tot2 = CMatrix::zeros(d2, d2);
    let (mut cond0_b2, mut cond0_b1, mut cond01_b1) = (0.0, 0.0, 0.0);
    for x0 in 0..ens.card0 {
        let mut g1 = CMatrix::zeros(d1, d1);
        let mut g2 = CMatrix::zeros(d2, d2);
        let mut p0 = 0.0;
        for x1 in 0..ens.card1 {
            let i = x0 * ens.card1 + x1;
            let p = ens.pmf[i];
            let theta = ens.state(i);
            let o1 = n1.apply_pure(&theta);
            cond01_b1 += p * h(&o1, d1, 1.0)?;
            g1 += o1 * c(p, 0.0);
            g2 += n2.apply_pure(&theta) * c(p, 0.0);
            p0 += p;
        }
        cond0_b1 += p0 * h(&g1, d1, p0)?;
        cond0_b2 += p0 * h(&g2, d2, p0)?;
        tot1 += g1;
        tot2 += g2;
    }
    Ok(ClassicalBounds {
        r0: h(&tot2, d2, 1.0)? - cond0_b2 + c12,
        r1: cond0_b1 - cond01_b1,
        sum: h(&tot1, d1, 1.0)? - cond01_b1,
    })
}

/// Fast evaluation of `I(X0;B2)`, `I(X1;B1|X0)`, `I(X0X1;B1)` and their
/// gradients in the subnormalized vectors `v_x = sqrt(p_x) theta_x`.
struct CqModel {
    card0: usize,
    card1: usize,
    d: usize,
    k1: Vec<CMatrix>,
    k2: Vec<CMatrix>,
}

fn push_vec(kraus: &[CMatrix], v: &CVector) -> CMatrix {
    let dout = kraus[0].nrows();
    let mut out = CMatrix::zeros(dout, dout);
    for k in kraus {
        let y = k * v;
        out += &y * y.adjoint();
    }
    out
}

fn adjoint_apply(kraus: &[CMatrix], g: &CMatrix, v: &CVector) -> CVector {
    let mut out = CVector::zeros(v.len());
    for k in kraus {
        out += k.adjoint() * (g * (k * v));
    }
    out
}

fn plogp_and_derivative(p: f64) -> (f64, f64) {
    if p < 1e-300 {
        (0.0, 0.0)
    } else {
        (p * p.log2(), p.log2() + std::f64::consts::LOG2_E)
    }
}

type BoundGrads = [Vec<CVector>; 3];

impl CqModel {
    fn new(bc: &BroadcastChannel, card0: usize, card1: usize) -> Self {
        Self {
            card0,
            card1,
            d: bc.in_dim(),
            k1: bc.marginal(1).kraus().to_vec(),
            k2: bc.marginal(2).kraus().to_vec(),
        }
    }

    fn bounds(&self, v: &[CVector], want_grad: bool) -> ([f64; 3], Option<BoundGrads>) {
        let n = v.len();
        let c1 = self.card1;
        let t1: Vec<CMatrix> = v.iter().map(|x| push_vec(&self.k1, x)).collect();
        let t2: Vec<CMatrix> = v.iter().map(|x| push_vec(&self.k2, x)).collect();
        let p: Vec<f64> = v.iter().map(|x| x.norm_squared()).collect();
        let (d1, d2) = (t1[0].nrows(), t2[0].nrows());
        let mut tot1 = CMatrix::zeros(d1, d1);
        let mut tot2 = CMatrix::zeros(d2, d2);
        let mut g1s = Vec::with_capacity(self.card0);
        let mut g2s = Vec::with_capacity(self.card0);
        let mut p0 = vec![0.0; self.card0];
        for x0 in 0..self.card0 {
            let mut g1 = CMatrix::zeros(d1, d1);
            let mut g2 = CMatrix::zeros(d2, d2);
            for x1 in 0..c1 {
                let i = x0 * c1 + x1;
                g1 += &t1[i];
                g2 += &t2[i];
                p0[x0] += p[i];
            }
            tot1 += &g1;
            tot2 += &g2;
            g1s.push(g1);
            g2s.push(g2);
        }
        let (f_tot1, d_tot1) = quantum::entropy_and_derivative(&tot1);
        let (f_tot2, d_tot2) = quantum::entropy_and_derivative(&tot2);
        let grp1: Vec<(f64, CMatrix)> = g1s.iter().map(quantum::entropy_and_derivative).collect();
        let grp2: Vec<(f64, CMatrix)> = g2s.iter().map(quantum::entropy_and_derivative).collect();
        let each1: Vec<(f64, CMatrix)> = t1.iter().map(quantum::entropy_and_derivative).collect();
        let pl0: Vec<(f64, f64)> = p0.iter().map(|&q| plogp_and_derivative(q)).collect();
        let pl: Vec<(f64, f64)> = p.iter().map(|&q| plogp_and_derivative(q)).collect();

        let sum_pl0: f64 = pl0.iter().map(|x| x.0).sum();
        let sum_pl: f64 = pl.iter().map(|x| x.0).sum();
        let sum_f_each1: f64 = each1.iter().map(|x| x.0).sum();
        let i0 = f_tot2 - grp2.iter().map(|x| x.0).sum::<f64>() - sum_pl0;
        let i1 = grp1.iter().map(|x| x.0).sum::<f64>() + sum_pl0 - sum_f_each1 - sum_pl;
        let is = f_tot1 - sum_f_each1 - sum_pl;
        if !want_grad {
            return ([i0, i1, is], None);
        }
        let mut ga = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut gs = Vec::with_capacity(n);
        for (i, vx) in v.iter().enumerate() {
            let x0 = i / c1;
            let two = c(2.0, 0.0);
            let lp0 = c(2.0 * pl0[x0].1, 0.0);
            let lp = c(2.0 * pl[i].1, 0.0);
            ga.push(adjoint_apply(&self.k2, &(&d_tot2 - &grp2[x0].1), vx) * two - vx * lp0);
            gb.push(adjoint_apply(&self.k1, &(&grp1[x0].1 - &each1[i].1), vx) * two + vx * lp0 - vx * lp);
            gs.push(adjoint_apply(&self.k1, &(&d_tot1 - &each1[i].1), vx) * two - vx * lp);
        }
        ([i0, i1, is], Some([ga, gb, gs]))
    }

    fn vectors(&self, x: &[f64]) -> (Vec<CVector>, f64) {
        let d = self.d;
        let raw: Vec<CVector> =
            (0..self.card0 * self.card1).map(|i| CVector::from_fn(d, |j, _| c(x[2 * (i * d + j)], x[2 * (i * d + j) + 1]))).collect();
        let norm = raw.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt().max(1e-300);
        (raw.into_iter().map(|v| v / c(norm, 0.0)).collect(), norm)
    }
}

/// Gradient through `v = u / |u|` for a stacked set of vectors.
fn normalize_gradient(v: &[CVector], g: &[CVector], norm: f64) -> Vec<f64> {
    let radial: f64 = v.iter().zip(g).map(|(a, b)| a.dotc(b).re).sum();
    let mut out = Vec::with_capacity(2 * v.len() * v.first().map_or(0, |x| x.len()));
    for (a, b) in v.iter().zip(g) {
        for (ai, bi) in a.iter().zip(b.iter()) {
            let z = (bi - ai * radial) / norm;
            out.push(z.re);
            out.push(z.im);
        }
    }
    out
}

fn softplus(x: f64, tau: f64) -> (f64, f64) {
    let z = x / tau;
    if z > 30.0 {
        (x, 1.0)
    } else if z < -30.0 {
        (tau * z.exp(), z.exp())
    } else {
        let e = z.exp();
        (tau * e.ln_1p(), e / (1.0 + e))
    }
}

/// Smooth lower approximation of [`geometry::pentagon_value`] (soft-min of
/// the dual pieces) and its partial derivatives in `(a, b, s)`.
fn smooth_pentagon(w: Point, abs: [f64; 3], tau: f64, clip: bool) -> (f64, [f64; 3]) {
    let mut vals = abs;
    let mut dclip = [1.0; 3];
    if clip {
        for k in 0..3 {
            let (v, d) = softplus(abs[k], tau);
            vals[k] = v;
            dclip[k] = d;
        }
    }
    let pieces = geometry::pentagon_dual_pieces(w);
    let p: Vec<f64> = pieces.iter().map(|cf| cf[0] * vals[0] + cf[1] * vals[1] + cf[2] * vals[2]).collect();
    let m = p.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = p.iter().map(|v| (-(v - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    let value = m - tau * z.ln();
    let mut d = [0.0; 3];
    for (j, cf) in pieces.iter().enumerate() {
        for k in 0..3 {
            d[k] += e[j] / z * cf[k] * dclip[k];
        }
    }
    (value, d)
}

pub(crate) const TAUS: [f64; 4] = [0.05, 0.01, 0.002, 0.0005];

/// Maximizes the smoothed support value with an annealed smoothing width.
fn soft_search<T>(terms: &T, w: Point, clip: bool, x0: Vec<f64>, local: &LocalOptions) -> LocalResult
where
    T: Fn(&[f64]) -> ([f64; 3], [Vec<f64>; 3]),
{
    let mut x = x0;
    let mut evals = 0;
    let mut converged = true;
    let mut value = f64::NAN;
    for &tau in &TAUS {
        let fg = |x: &[f64]| {
            let (abs, grads) = terms(x);
            let (v, d) = smooth_pentagon(w, abs, tau, clip);
            let g: Vec<f64> = (0..x.len()).map(|i| -(d[0] * grads[0][i] + d[1] * grads[1][i] + d[2] * grads[2][i])).collect();
            (-v, g)
        };
        let r = optimize::lbfgs(&fg, x, local);
        evals += r.evals;
        converged &= r.converged;
        x = r.x;
        value = r.value;
    }
    LocalResult { x, value, evals, converged }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionOptions {
    /// Number of weights `mu` in `[0, 1]`, endpoints included.
    pub weights: usize,
    pub restarts: usize,
    pub seed: u64,
    /// `(|X0|, |X1|)`; `None` uses `d^2 + 2` and `(d^2 + 2) d^2 + 1`.
    pub caps: Option<(usize, usize)>,
    /// Weight on the secondary rate at `mu = 0` and `mu = 1`.
    pub tie_break: f64,
    pub local: LocalOptions,
    /// Reference dimensions `(A1, A2)` for quantum regions; `None` uses the
    /// channel input dimension.
    pub ref_dims: Option<(usize, usize)>,
    /// Dimension of the auxiliary `T` in the outer bound.
    pub t_dim: usize,
}

impl Default for RegionOptions {
    fn default() -> Self {
        Self {
            weights: 33,
            restarts: 64,
            seed: 0,
            caps: None,
            tie_break: 1e-4,
            local: LocalOptions { max_evals: 600, f_tol: 1e-11, x_tol: 1e-9, initial_step: 0.5, ..Default::default() },
            ref_dims: None,
            t_dim: 4,
        }
    }
}

impl RegionOptions {
    pub fn cardinality_caps(&self, d: usize) -> (usize, usize) {
        self.caps.unwrap_or_else(|| cardinality_caps(d))
    }

    pub fn weight_grid(&self) -> Vec<Point> {
        let n = self.weights.max(2);
        (0..n)
            .map(|i| {
                let mu = i as f64 / (n - 1) as f64;
                if i == 0 {
                    [self.tie_break, 1.0]
                } else if i == n - 1 {
                    [1.0, self.tie_break]
                } else {
                    [mu, 1.0 - mu]
                }
            })
            .collect()
    }
}

/// Cardinality bounds sufficient for the classical region with input
/// dimension `d`.
pub fn cardinality_caps(d: usize) -> (usize, usize) {
    let d2 = d * d;
    (d2 + 2, (d2 + 2) * d2 + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    Inner,
    Outer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub rates: Point,
    pub witness: usize,
}

/// Pure state on the reference systems and the channel input, in the order
/// of `labels` (input last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumInputState {
    pub dims: Vec<usize>,
    pub labels: Vec<String>,
    pub vector: Vec<[f64; 2]>,
}

impl QuantumInputState {
    pub fn new<S: AsRef<str>>(vector: &CVector, dims: &[usize], labels: &[S]) -> Result<Self> {
        let psi = state::PureState::new(vector.clone(), dims, labels)?;
        Ok(Self { dims: psi.dims().to_vec(), labels: psi.labels().to_vec(), vector: to_pairs(vector) })
    }

    pub fn vector(&self) -> CVector {
        from_pairs(&self.vector)
    }

    pub fn density(&self) -> Result<DensityOperator> {
        DensityOperator::new(linalg::projector(&self.vector()), &self.dims, &self.labels)
    }

    fn check(&self, bc: &BroadcastChannel, refs: usize) -> Result<()> {
        if self.dims.len() != refs + 1 {
            return Err(Error::InvalidParameter(format!("expected {} subsystems, got {}", refs + 1, self.dims.len())));
        }
        if *self.dims.last().unwrap() != bc.in_dim() {
            return Err(Error::DimensionMismatch { expected: bc.in_dim(), found: *self.dims.last().unwrap() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum WitnessPayload {
    Ensemble {
        ensemble: InputEnsemble,
        i_x0_b2: f64,
        i_x1_b1_given_x0: f64,
        i_x0x1_b1: f64,
    },
    QuantumInner {
        state: QuantumInputState,
        i1: f64,
        i2: f64,
        /// `(I1, I2)`
        corner1: Point,
        /// `(I1 - CQ12, I2 + CQ12)`
        corner2: Point,
    },
    QuantumOuter {
        state: QuantumInputState,
        i1: f64,
        /// `I(A2 T > B2)`
        i2t: f64,
        /// `I(A2 > B1 B2)`
        i2_b1b2: f64,
        /// `I(A2 T > B1 B2)`, the sum term with `T` included.
        i2t_b1b2: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// `(a, b, s)` of the pentagon, conferencing included.
    pub bounds: [f64; 3],
    pub payload: WitnessPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostic {
    pub weight: Point,
    pub conferencing: f64,
    pub best_value: f64,
    pub starts: usize,
    pub converged_starts: usize,
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRegion {
    pub version: String,
    pub kind: RegionKind,
    /// `classical`, `quantum-inner` or `quantum-outer`.
    pub family: String,
    pub conferencing: f64,
    pub hull: Vec<Point>,
    pub points: Vec<RatePoint>,
    pub witnesses: Vec<Witness>,
    pub diagnostics: Vec<WeightDiagnostic>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl RateRegion {
    fn assemble(kind: RegionKind, family: &str, conferencing: f64, witnesses: Vec<Witness>) -> Self {
        let mut points = Vec::new();
        for (i, w) in witnesses.iter().enumerate() {
            let [p, q] = geometry::pentagon_vertices(w.bounds[0], w.bounds[1], w.bounds[2]);
            points.push(RatePoint { rates: p, witness: i });
            if q != p {
                points.push(RatePoint { rates: q, witness: i });
            }
        }
        let pts: Vec<Point> = points.iter().map(|p| p.rates).collect();
        Self {
            version: SCHEMA_VERSION.into(),
            kind,
            family: family.into(),
            conferencing,
            hull: geometry::downward_closed_hull(&pts),
            points,
            witnesses,
            diagnostics: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    /// Largest support value over the region in direction `w`.
    pub fn support(&self, w: Point) -> f64 {
        geometry::support(&self.hull, w)
    }

    pub fn hull_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for p in &self.hull {
            s.push_str(&format!("{},{}\n", p[0], p[1]));
        }
        s
    }
}

pub(crate) struct TaskOutcome {
    pub slot: usize,
    pub x: Vec<f64>,
    pub exact: f64,
    pub converged: bool,
    pub evals: usize,
}

/// Runs every `(slot, restart)` task in parallel and keeps the best exact
/// value per slot (lowest restart index on ties).
pub(crate) fn run_tasks<S, E>(slots: usize, restarts: usize, seed: u64, search: S, exact: E) -> Vec<(TaskOutcome, usize, usize)>
where
    S: Fn(usize, usize, &mut ChaCha8Rng) -> LocalResult + Sync,
    E: Fn(usize, &[f64]) -> f64 + Sync,
{
    let restarts = restarts.max(1);
    let outcomes: Vec<TaskOutcome> = (0..slots * restarts)
        .into_par_iter()
        .map(|t| {
            let (slot, r) = (t / restarts, t % restarts);
            let mut rng = optimize::stream_rng(seed, t as u64);
            let res = search(slot, r, &mut rng);
            let value = exact(slot, &res.x);
            TaskOutcome { slot, exact: value, converged: res.converged, evals: res.evals, x: res.x }
        })
        .collect();
    let mut best: Vec<(Option<TaskOutcome>, usize, usize)> = (0..slots).map(|_| (None, 0, 0)).collect();
    for o in outcomes {
        let entry = &mut best[o.slot];
        entry.1 += usize::from(o.converged);
        entry.2 += o.evals;
        let better = match &entry.0 {
            None => true,
            Some(b) => o.exact > b.exact,
        };
        if better {
            entry.0 = Some(o);
        }
    }
    best.into_iter().map(|(o, conv, evals)| (o.expect("at least one restart"), conv, evals)).collect()
}

pub(crate) fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
}

fn classical_witness(model: &CqModel, x: &[f64], c12: f64) -> Witness {
    let (v, _) = model.vectors(x);
    let ([i0, i1, is], _) = model.bounds(&v, false);
    Witness {
        bounds: [i0 + c12, i1, is],
        payload: WitnessPayload::Ensemble {
            ensemble: InputEnsemble::from_weighted(model.card0, model.card1, &v),
            i_x0_b2: i0,
            i_x1_b1_given_x0: i1,
            i_x0x1_b1: is,
        },
    }
}

fn with_conferencing(w: &Witness, c12: f64) -> Witness {
    let mut out = w.clone();
    if let WitnessPayload::Ensemble { i_x0_b2, .. } = &w.payload {
        out.bounds[0] = i_x0_b2 + c12;
    }
    out
}

/// Optimized classical witnesses for every `(C12, weight)` pair.
fn classical_search(
    bc: &BroadcastChannel,
    c12s: &[f64],
    opts: &RegionOptions,
) -> Result<(Vec<Witness>, Vec<WeightDiagnostic>)> {
    let d = bc.in_dim();
    let (card0, card1) = opts.cardinality_caps(d);
    if card0 == 0 || card1 == 0 {
        return Err(Error::InvalidParameter("cardinality caps must be positive".into()));
    }
    let model = CqModel::new(bc, card0, card1);
    let grid = opts.weight_grid();
    let slots: Vec<(f64, Point)> = c12s.iter().flat_map(|&c| grid.iter().map(move |&w| (c, w))).collect();
    let nparams = 2 * d * card0 * card1;
    let terms_for = |c12: f64| {
        let model = &model;
        move |x: &[f64]| {
            let (v, norm) = model.vectors(x);
            let ([i0, i1, is], g) = model.bounds(&v, true);
            let g = g.expect("gradient requested");
            let grads = [normalize_gradient(&v, &g[0], norm), normalize_gradient(&v, &g[1], norm), normalize_gradient(&v, &g[2], norm)];
            ([i0 + c12, i1, is], grads)
        }
    };
    let search = |slot: usize, _r: usize, rng: &mut ChaCha8Rng| {
        let (c12, w) = slots[slot];
        soft_search(&terms_for(c12), w, false, gaussian_vec(nparams, rng), &opts.local)
    };
    let exact = |slot: usize, x: &[f64]| {
        let (c12, w) = slots[slot];
        let (v, _) = model.vectors(x);
        let ([i0, i1, is], _) = model.bounds(&v, false);
        geometry::pentagon_value(w, i0 + c12, i1, is)
    };
    let best = run_tasks(slots.len(), opts.restarts, opts.seed, search, exact);
    let mut witnesses = Vec::new();
    let mut diags = Vec::new();
    for (slot, (o, conv, evals)) in best.into_iter().enumerate() {
        let (c12, w) = slots[slot];
        witnesses.push(classical_witness(&model, &o.x, 0.0));
        diags.push(WeightDiagnostic {
            weight: w,
            conferencing: c12,
            best_value: o.exact,
            starts: opts.restarts.max(1),
            converged_starts: conv,
            evals,
        });
    }
    Ok((witnesses, diags))
}

fn classical_metadata(bc: &BroadcastChannel, opts: &RegionOptions, pooled: &[f64]) -> BTreeMap<String, serde_json::Value> {
    let (c0, c1) = opts.cardinality_caps(bc.in_dim());
    let mut m = BTreeMap::new();
    m.insert("caps".into(), serde_json::json!([c0, c1]));
    m.insert("pooled_conferencing".into(), serde_json::json!(pooled));
    m.insert("is_hadamard".into(), serde_json::json!(bc.flags().is_hadamard));
    let label = if bc.flags().is_hadamard { "capacity (single-letter)" } else { "inner bound (single-letter)" };
    m.insert("label".into(), serde_json::json!(label));
    m
}

/// Classical region at one conferencing rate.
pub fn classical_region(bc: &BroadcastChannel, c12: f64, opts: &RegionOptions) -> Result<RateRegion> {
    Ok(classical_region_sweep(bc, &[c12], opts)?.remove(0))
}

/// Classical regions for several conferencing rates. Witnesses found at any
/// rate are valid at all of them, so the pooled set is used for every
/// region; regions are then nested in `C12` by construction.
pub fn classical_region_sweep(bc: &BroadcastChannel, c12s: &[f64], opts: &RegionOptions) -> Result<Vec<RateRegion>> {
    if c12s.is_empty() {
        return Err(Error::InvalidParameter("no conferencing rates given".into()));
    }
    if c12s.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::InvalidParameter("conferencing rate must be non-negative".into()));
    }
    let (pool, diags) = classical_search(bc, c12s, opts)?;
    Ok(c12s
        .iter()
        .map(|&c12| {
            let ws = pool.iter().map(|w| with_conferencing(w, c12)).collect();
            let mut r = RateRegion::assemble(RegionKind::Inner, "classical", c12, ws);
            r.diagnostics = diags.iter().filter(|d| d.conferencing == c12).cloned().collect();
            r.metadata = classical_metadata(bc, opts, c12s);
            r
        })
        .collect())
}

/// Superposition-coding region without conferencing, evaluated through
/// [`eval_classical_point`] on the optimizer's witnesses.
pub fn no_conferencing_region(bc: &BroadcastChannel, opts: &RegionOptions) -> Result<RateRegion> {
    let (pool, diags) = classical_search(bc, &[0.0], opts)?;
    let mut ws = Vec::with_capacity(pool.len());
    for w in pool {
        if let WitnessPayload::Ensemble { ensemble, .. } = &w.payload {
            let b = eval_classical_point(ensemble, bc, 0.0)?;
            ws.push(Witness { bounds: [b.r0, b.r1, b.sum], payload: w.payload.clone() });
        }
    }
    let mut r = RateRegion::assemble(RegionKind::Inner, "classical", 0.0, ws);
    r.diagnostics = diags;
    r.metadata = classical_metadata(bc, opts, &[0.0]);
    Ok(r)
}

/// Region of the `k`-fold product channel with rates per channel use.
/// Tensor squares of the single-letter witnesses are included.
pub fn multi_letter_classical_region(bc: &BroadcastChannel, c12: f64, k: usize, opts: &RegionOptions) -> Result<RateRegion> {
    match k {
        1 => classical_region(bc, c12, opts),
        2 => {
            if bc.in_dim() > 2 {
                return Err(Error::ResourceGuard(format!(
                    "two-letter regions need input dimension <= 2, got {}",
                    bc.in_dim()
                )));
            }
            let single = classical_region(bc, c12, opts)?;
            let sq = bc.power(2)?;
            let caps = opts.cardinality_caps(bc.in_dim());
            let sq_opts = RegionOptions { caps: Some(caps), ..opts.clone() };
            let (pool, diags) = classical_search(&sq, &[2.0 * c12], &sq_opts)?;
            let mut ws: Vec<Witness> = pool.iter().map(|w| with_conferencing(w, 2.0 * c12)).collect();
            for w in &single.witnesses {
                if let WitnessPayload::Ensemble { ensemble, .. } = &w.payload {
                    let e2 = ensemble.tensor(ensemble);
                    let b = eval_classical_point(&e2, &sq, 2.0 * c12)?;
                    ws.push(Witness {
                        bounds: [b.r0, b.r1, b.sum],
                        payload: WitnessPayload::Ensemble {
                            ensemble: e2,
                            i_x0_b2: b.r0 - 2.0 * c12,
                            i_x1_b1_given_x0: b.r1,
                            i_x0x1_b1: b.sum,
                        },
                    });
                }
            }
            for w in ws.iter_mut() {
                w.bounds.iter_mut().for_each(|v| *v /= 2.0);
            }
            let mut r = RateRegion::assemble(RegionKind::Inner, "classical", c12, ws);
            r.diagnostics = diags;
            r.metadata = classical_metadata(bc, &sq_opts, &[c12]);
            r.metadata.insert("letters".into(), serde_json::json!(2));
            Ok(r)
        }
        _ => Err(Error::ResourceGuard(format!("multi-letter evaluation supports k <= 2, got {k}"))),
    }
}

/// `Q1`, `Q2` and sum bounds of the quantum inner region for one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerBounds {
    pub q1: f64,
    pub q2: f64,
    pub sum: f64,
    pub i1: f64,
    pub i2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterBounds {
    pub q1: f64,
    pub q2: f64,
    pub sum: f64,
    /// Sum bound with `T` also on the `A2` side.
    pub sum_with_t: f64,
}

/// Coherent informations `I(A1>B1)`, `I(A2>B2)` of `phi` on `A1 A2 A'`.
pub(crate) fn inner_terms(dil: &Dilation, phi: &CVector, refs: [usize; 2], grad: bool) -> ([f64; 2], Option<[CVector; 2]>) {
    let psi = dil.push(phi);
    let dims = dil.output_dims(&refs);
    // A1 A2 B1 B2 E
    let keeps: [&[usize]; 4] = [&[2], &[0, 2], &[3], &[1, 3]];
    let mut f = [0.0; 4];
    let mut g: Vec<CVector> = Vec::new();
    for (k, keep) in keeps.iter().enumerate() {
        if grad {
            let (v, gr) = quantum::entropy_with_gradient(&psi, &dims, keep);
            f[k] = v;
            g.push(gr);
        } else {
            f[k] = quantum::h(&psi, &dims, keep);
        }
    }
    let vals = [f[0] - f[1], f[2] - f[3]];
    if !grad {
        return (vals, None);
    }
    let g1 = dil.pull_gradient(&(&g[0] - &g[1]));
    let g2 = dil.pull_gradient(&(&g[2] - &g[3]));
    (vals, Some([g1, g2]))
}

/// `I(A1>B1)`, `I(A2 T>B2)`, `I(A2>B1B2)`, `I(A2 T>B1B2)` of `phi` on
/// `T A1 A2 A'`.
fn outer_terms(dil: &Dilation, phi: &CVector, refs: [usize; 3], grad: bool) -> ([f64; 4], Option<[CVector; 4]>) {
    let psi = dil.push(phi);
    let dims = dil.output_dims(&refs);
    // T A1 A2 B1 B2 E
    let keeps: [&[usize]; 7] = [&[3], &[1, 3], &[4], &[0, 2, 4], &[3, 4], &[2, 3, 4], &[0, 2, 3, 4]];
    let mut f = [0.0; 7];
    let mut g: Vec<CVector> = Vec::new();
    for (k, keep) in keeps.iter().enumerate() {
        if grad {
            let (v, gr) = quantum::entropy_with_gradient(&psi, &dims, keep);
            f[k] = v;
            g.push(gr);
        } else {
            f[k] = quantum::h(&psi, &dims, keep);
        }
    }
    let vals = [f[0] - f[1], f[2] - f[3], f[4] - f[5], f[4] - f[6]];
    if !grad {
        return (vals, None);
    }
    let gs = [
        dil.pull_gradient(&(&g[0] - &g[1])),
        dil.pull_gradient(&(&g[2] - &g[3])),
        dil.pull_gradient(&(&g[4] - &g[5])),
        dil.pull_gradient(&(&g[4] - &g[6])),
    ];
    (vals, Some(gs))
}

/// Unit vector from reals and the gradient map back to the reals.
pub(crate) fn unit_with_norm(x: &[f64]) -> (CVector, f64) {
    let d = x.len() / 2;
    let u = CVector::from_fn(d, |i, _| c(x[2 * i], x[2 * i + 1]));
    let n = u.norm().max(1e-300);
    (u / c(n, 0.0), n)
}

pub(crate) fn real_gradient(v: &CVector, g: &CVector, norm: f64) -> Vec<f64> {
    normalize_gradient(std::slice::from_ref(v), std::slice::from_ref(g), norm)
}

fn ref_dims(bc: &BroadcastChannel, opts: &RegionOptions) -> [usize; 2] {
    let (a, b) = opts.ref_dims.unwrap_or((bc.in_dim(), bc.in_dim()));
    [a, b]
}

pub fn quantum_inner_point(st: &QuantumInputState, bc: &BroadcastChannel, cq12: f64) -> Result<InnerBounds> {
    st.check(bc, 2)?;
    let dil = Dilation::of(bc);
    let ([i1, i2], _) = inner_terms(&dil, &st.vector(), [st.dims[0], st.dims[1]], false);
    Ok(InnerBounds { q1: i1, q2: i2 + cq12, sum: i1 + i2, i1, i2 })
}

pub fn quantum_outer_point(st: &QuantumInputState, bc: &BroadcastChannel, cq12: f64) -> Result<OuterBounds> {
    st.check(bc, 3)?;
    let dil = Dilation::of(bc);
    let ([i1, i2t, i2b, i2tb], _) = outer_terms(&dil, &st.vector(), [st.dims[0], st.dims[1], st.dims[2]], false);
    Ok(OuterBounds { q1: i1, q2: i2t + cq12, sum: i1 + i2b, sum_with_t: i1 + i2tb })
}

fn inner_witness(dil: &Dilation, refs: [usize; 2], phi: &CVector, cq12: f64) -> Result<Witness> {
    let ([i1, i2], _) = inner_terms(dil, phi, refs, false);
    let st = QuantumInputState::new(phi, &[refs[0], refs[1], dil.d_in], &["A1", "A2", "A'"])?;
    Ok(Witness {
        bounds: [i1, i2 + cq12, i1 + i2],
        payload: WitnessPayload::QuantumInner { state: st, i1, i2, corner1: [i1, i2], corner2: [i1 - cq12, i2 + cq12] },
    })
}

/// Inner region: for each optimized state, both corner points and their
/// time-sharing segment.
pub fn quantum_inner_region(bc: &BroadcastChannel, cq12: f64, opts: &RegionOptions) -> Result<RateRegion> {
    if cq12 < 0.0 || !cq12.is_finite() {
        return Err(Error::InvalidParameter("conferencing rate must be non-negative".into()));
    }
    let dil = Dilation::of(bc);
    let refs = ref_dims(bc, opts);
    let dim = refs[0] * refs[1] * bc.in_dim();
    let grid = opts.weight_grid();
    let terms = |x: &[f64]| {
        let (phi, n) = unit_with_norm(x);
        let ([i1, i2], g) = inner_terms(&dil, &phi, refs, true);
        let [g1, g2] = g.expect("gradient requested");
        let r1 = real_gradient(&phi, &g1, n);
        let r2 = real_gradient(&phi, &g2, n);
        let rs: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| a + b).collect();
        ([i1, i2 + cq12, i1 + i2], [r1, r2, rs])
    };
    let search = |slot: usize, _r: usize, rng: &mut ChaCha8Rng| soft_search(&terms, grid[slot], true, gaussian_vec(2 * dim, rng), &opts.local);
    let exact = |slot: usize, x: &[f64]| {
        let (phi, _) = unit_with_norm(x);
        let ([i1, i2], _) = inner_terms(&dil, &phi, refs, false);
        geometry::pentagon_value(grid[slot], i1, i2 + cq12, i1 + i2)
    };
    let best = run_tasks(grid.len(), opts.restarts, opts.seed, search, exact);
    let mut ws = Vec::new();
    let mut diags = Vec::new();
    for (slot, (o, conv, evals)) in best.into_iter().enumerate() {
        let (phi, _) = unit_with_norm(&o.x);
        ws.push(inner_witness(&dil, refs, &phi, cq12)?);
        diags.push(WeightDiagnostic {
            weight: grid[slot],
            conferencing: cq12,
            best_value: o.exact,
            starts: opts.restarts.max(1),
            converged_starts: conv,
            evals,
        });
    }
    let mut r = RateRegion::assemble(RegionKind::Inner, "quantum-inner", cq12, ws);
    r.diagnostics = diags;
    r.metadata.insert("reference_dims".into(), serde_json::json!(refs));
    Ok(r)
}

/// Embeds an inner witness `phi_{A1 A2 A'}` as `|0>_T (x) phi`.
fn embed_with_trivial_t(phi: &CVector, t_dim: usize) -> CVector {
    linalg::kron_vec(&linalg::basis_vector(t_dim, 0), phi)
}

fn outer_witness(dil: &Dilation, refs: [usize; 3], phi: &CVector, cq12: f64) -> Result<Witness> {
    let ([i1, i2t, i2b, i2tb], _) = outer_terms(dil, phi, refs, false);
    let st = QuantumInputState::new(phi, &[refs[0], refs[1], refs[2], dil.d_in], &["T", "A1", "A2", "A'"])?;
    Ok(Witness {
        bounds: [i1, i2t + cq12, i1 + i2b],
        payload: WitnessPayload::QuantumOuter { state: st, i1, i2t, i2_b1b2: i2b, i2t_b1b2: i2tb },
    })
}

/// Single-letter evaluation of the outer bound with `T` capped at
/// `opts.t_dim`. The inner region's witnesses (with trivial `T`) seed the
/// witness set.
pub fn quantum_outer_region_single_letter(bc: &BroadcastChannel, cq12: f64, opts: &RegionOptions) -> Result<RateRegion> {
    let inner = quantum_inner_region(bc, cq12, opts)?;
    quantum_outer_region_seeded(bc, cq12, opts, &inner)
}

/// As [`quantum_outer_region_single_letter`], seeded by an existing inner
/// region.
pub fn quantum_outer_region_seeded(bc: &BroadcastChannel, cq12: f64, opts: &RegionOptions, inner: &RateRegion) -> Result<RateRegion> {
    if opts.t_dim == 0 {
        return Err(Error::InvalidParameter("T dimension must be positive".into()));
    }
    let dil = Dilation::of(bc);
    let [a1, a2] = ref_dims(bc, opts);
    let refs = [opts.t_dim, a1, a2];
    let dim = opts.t_dim * a1 * a2 * bc.in_dim();
    let grid = opts.weight_grid();
    let seeds: Vec<CVector> = inner
        .witnesses
        .iter()
        .filter_map(|w| match &w.payload {
            WitnessPayload::QuantumInner { state, .. } if state.dims == [a1, a2, bc.in_dim()] => {
                Some(embed_with_trivial_t(&state.vector(), opts.t_dim))
            }
            _ => None,
        })
        .collect();
    let terms = |x: &[f64]| {
        let (phi, n) = unit_with_norm(x);
        let ([i1, i2t, i2b, _], g) = outer_terms(&dil, &phi, refs, true);
        let g = g.expect("gradient requested");
        let r1 = real_gradient(&phi, &g[0], n);
        let r2 = real_gradient(&phi, &g[1], n);
        let rb = real_gradient(&phi, &g[2], n);
        let rs: Vec<f64> = r1.iter().zip(&rb).map(|(a, b)| a + b).collect();
        ([i1, i2t + cq12, i1 + i2b], [r1, r2, rs])
    };
    let search = |slot: usize, r: usize, rng: &mut ChaCha8Rng| {
        let x0 = if r == 0 && slot < seeds.len() {
            // restart 0 climbs from the inner witness of the same weight
            let mut x = linalg::reals_from_complex_matrix(&CMatrix::from_column_slice(dim, 1, seeds[slot].as_slice()));
            x.iter_mut().for_each(|v| *v += 1e-3 * rng.sample::<f64, _>(rand_distr::StandardNormal));
            x
        } else {
            gaussian_vec(2 * dim, rng)
        };
        soft_search(&terms, grid[slot], true, x0, &opts.local)
    };
    let exact = |slot: usize, x: &[f64]| {
        let (phi, _) = unit_with_norm(x);
        let ([i1, i2t, i2b, _], _) = outer_terms(&dil, &phi, refs, false);
        geometry::pentagon_value(grid[slot], i1, i2t + cq12, i1 + i2b)
    };
    let best = run_tasks(grid.len(), opts.restarts, opts.seed, search, exact);
    let mut ws = Vec::new();
    let mut diags = Vec::new();
    for (slot, (o, conv, evals)) in best.into_iter().enumerate() {
        let (phi, _) = unit_with_norm(&o.x);
        ws.push(outer_witness(&dil, refs, &phi, cq12)?);
        diags.push(WeightDiagnostic {
            weight: grid[slot],
            conferencing: cq12,
            best_value: o.exact,
            starts: opts.restarts.max(1),
            converged_starts: conv,
            evals,
        });
    }
    for s in &seeds {
        ws.push(outer_witness(&dil, refs, s, cq12)?);
    }
    let alt_pts: Vec<Point> = ws
        .iter()
        .flat_map(|w| match &w.payload {
            WitnessPayload::QuantumOuter { i1, i2t_b1b2, .. } => {
                geometry::pentagon_vertices(w.bounds[0], w.bounds[1], i1 + i2t_b1b2).to_vec()
            }
            _ => Vec::new(),
        })
        .collect();
    let mut r = RateRegion::assemble(RegionKind::Outer, "quantum-outer", cq12, ws);
    r.diagnostics = diags;
    r.metadata.insert("t_dim".into(), serde_json::json!(opts.t_dim));
    r.metadata.insert("heuristic_t_cap".into(), serde_json::json!("heuristic cap on T"));
    r.metadata.insert("evaluation".into(), serde_json::json!("single-letter evaluation of a regularized expression"));
    r.metadata.insert("reference_dims".into(), serde_json::json!([a1, a2]));
    r.metadata.insert("hull_t_in_sum".into(), serde_json::json!(geometry::downward_closed_hull(&alt_pts)));
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broadcast;
    use crate::eof::binary_entropy;
    use rand::SeedableRng;

    fn quick(caps: (usize, usize)) -> RegionOptions {
        RegionOptions { weights: 9, restarts: 6, caps: Some(caps), ..Default::default() }
    }

    fn random_ensemble(card0: usize, card1: usize, d: usize, seed: u64) -> InputEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<CVector> = (0..card0 * card1).map(|_| CVector::from_fn(d, |_, _| linalg::random_complex_gaussian(&mut rng))).collect();
        let n = v.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt();
        let v: Vec<CVector> = v.into_iter().map(|x| x / c(n, 0.0)).collect();
        InputEnsemble::from_weighted(card0, card1, &v)
    }

    #[test]
    fn model_matches_cq_state_entropies() {
        let bc = broadcast::random_broadcast(2, 2, 3, 3, 11).unwrap();
        let ens = random_ensemble(2, 3, 2, 5);
        let b = eval_classical_point(&ens, &bc, 0.25).unwrap();
        let rho = ens.cq_state(&bc).unwrap();
        let i0 = state::mutual_information(&rho, &["X0"], &["B2"]).unwrap();
        let i1 = state::conditional_mutual_information(&rho, &["X1"], &["B1"], &["X0"]).unwrap();
        let is = state::mutual_information(&rho, &["X0", "X1"], &["B1"]).unwrap();
        assert!((b.r0 - 0.25 - i0).abs() < 1e-10);
        assert!((b.r1 - i1).abs() < 1e-10);
        assert!((b.sum - is).abs() < 1e-10);
        let model = CqModel::new(&bc, 2, 3);
        let (vals, _) = model.bounds(&ens.weighted_vectors(), false);
        assert!((vals[0] - i0).abs() < 1e-10 && (vals[1] - i1).abs() < 1e-10 && (vals[2] - is).abs() < 1e-10);
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        let bc = broadcast::random_broadcast(2, 2, 2, 3, 2).unwrap();
        let model = CqModel::new(&bc, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = gaussian_vec(16, &mut rng);
        let (v, n) = model.vectors(&x);
        let (_, g) = model.bounds(&v, true);
        let g = g.unwrap();
        for k in 0..3 {
            let rg = normalize_gradient(&v, &g[k], n);
            for i in 0..x.len() {
                let eps = 1e-6;
                let mut xp = x.clone();
                xp[i] += eps;
                let mut xm = x.clone();
                xm[i] -= eps;
                let fp = model.bounds(&model.vectors(&xp).0, false).0[k];
                let fm = model.bounds(&model.vectors(&xm).0, false).0[k];
                let fd = (fp - fm) / (2.0 * eps);
                assert!((fd - rg[i]).abs() < 1e-6, "bound {k} coord {i}: {fd} vs {}", rg[i]);
            }
        }
    }

    #[test]
    fn smoothing_is_a_lower_bound_that_tightens() {
        let w = [0.3, 0.7];
        let abs = [0.4, 0.6, 0.8];
        let exact = geometry::pentagon_value(w, abs[0], abs[1], abs[2]);
        let mut prev = f64::NEG_INFINITY;
        for tau in TAUS {
            let (v, _) = smooth_pentagon(w, abs, tau, false);
            assert!(v <= exact + 1e-15 && v >= prev);
            prev = v;
        }
        assert!(exact - prev < 1e-3);
    }

    /// Superposition coding over binary symmetric channels: `X = U xor V`
    /// with `U` uniform and `V ~ Bern(beta)`.
    fn bsc_oracle_support(p1: f64, q2: f64, c12: f64, w: Point) -> f64 {
        let conv = |a: f64, b: f64| a * (1.0 - b) + b * (1.0 - a);
        (0..=2000)
            .map(|i| {
                let beta = 0.5 * i as f64 / 2000.0;
                let a = 1.0 - binary_entropy(conv(beta, q2)) + c12;
                let b = binary_entropy(conv(beta, p1)) - binary_entropy(p1);
                geometry::pentagon_value(w, a, b, 1.0 - binary_entropy(p1))
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn bsc_cascade_matches_superposition_oracle() {
        let (p1, p2) = (0.05, 0.1);
        let bc = broadcast::bsc_cascade(p1, p2).unwrap();
        let q2 = p1 * (1.0 - p2) + p2 * (1.0 - p1);
        let r = classical_region(&bc, 0.25, &quick((2, 2))).unwrap();
        for w in (RegionOptions { weights: 9, ..Default::default() }).weight_grid() {
            let oracle = bsc_oracle_support(p1, q2, 0.25, w);
            let got = r.support(w);
            assert!((got - oracle).abs() < 5e-3, "w = {w:?}: {got} vs {oracle}");
        }
    }

    #[test]
    fn regions_nest_in_conferencing() {
        let bc = broadcast::bsc_cascade(0.05, 0.1).unwrap();
        let rs = classical_region_sweep(&bc, &[0.0, 0.25], &quick((2, 2))).unwrap();
        assert!(geometry::includes(&rs[1].hull, &rs[0].hull, 1e-12));
    }

    #[test]
    fn inner_witnesses_reproduce_corners() {
        let bc = broadcast::qubit_dephasing_broadcast(0.1, 0.2).unwrap();
        let opts = RegionOptions { weights: 5, restarts: 3, ..Default::default() };
        let r = quantum_inner_region(&bc, 0.3, &opts).unwrap();
        for w in &r.witnesses {
            if let WitnessPayload::QuantumInner { state, i1, i2, corner1, corner2 } = &w.payload {
                let b = quantum_inner_point(state, &bc, 0.3).unwrap();
                assert!((b.i1 - i1).abs() < 1e-9 && (b.i2 - i2).abs() < 1e-9);
                assert!((corner2[0] - (corner1[0] - 0.3)).abs() < 1e-12);
            }
        }
        // the best single rate is the dephasing coherent information
        let best1 = r.support([1.0, 0.0]);
        assert!((best1 - (1.0 - binary_entropy(0.1))).abs() < 1e-3, "{best1}");
        let outer = quantum_outer_region_seeded(&bc, 0.3, &RegionOptions { t_dim: 2, ..opts }, &r).unwrap();
        assert!(geometry::includes(&outer.hull, &r.hull, 1e-9));
    }

    #[test]
    fn guards_on_letters() {
        let bc = broadcast::random_broadcast(3, 2, 2, 2, 1).unwrap();
        assert!(matches!(multi_letter_classical_region(&bc, 0.0, 2, &quick((2, 2))), Err(Error::ResourceGuard(_))));
        let bc = broadcast::bsc_cascade(0.1, 0.1).unwrap();
        assert!(matches!(multi_letter_classical_region(&bc, 0.0, 3, &quick((2, 2))), Err(Error::ResourceGuard(_))));
    }

    #[test]
    fn ensemble_tensor_is_consistent() {
        let e = random_ensemble(2, 2, 2, 3);
        let t = e.tensor(&e);
        assert_eq!((t.card0, t.card1), (4, 4));
        assert!((t.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let bc = broadcast::bsc_cascade(0.1, 0.2).unwrap();
        let b1 = eval_classical_point(&e, &bc, 0.0).unwrap();
        let b2 = eval_classical_point(&t, &bc.power(2).unwrap(), 0.0).unwrap();
        assert!((b2.r0 - 2.0 * b1.r0).abs() < 1e-9 && (b2.r1 - 2.0 * b1.r1).abs() < 1e-9 && (b2.sum - 2.0 * b1.sum).abs() < 1e-9);
    }
}
