//! Broadcast channels `A -> B1 B2`: builders, marginals, structural flags,
//! the degradedness search and the bundled example set.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{self, KrausFile, QuantumChannel};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, CVector};
use crate::optimize::{self, LocalMethod, LocalOptions};
use crate::state::{self, matrix_from_rows, matrix_to_rows, Subsystems, SCHEMA_VERSION};

pub const INPUT_LABEL: &str = "A";
pub const B1: &str = "B1";
pub const B2: &str = "B2";

/// Builder provenance, stored with channel files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ChannelKind {
    Custom,
    Classical { kernel: Vec<Vec<Vec<f64>>> },
    DegradedClassical { kernel: Vec<Vec<Vec<f64>>> },
    BscCascade { p1: f64, p2: f64 },
    Hadamard { povm: Vec<Vec<Vec<[f64; 2]>>>, states: Vec<Vec<Vec<[f64; 2]>>> },
    QubitDephasing { p1: f64, p2: f64 },
    Erasure { e1: f64, e2: f64 },
    AmplitudeDamping { gamma: f64 },
    RouteToB1,
    RouteToB2,
    Random { kraus: usize, seed: u64 },
    Power { base: Box<ChannelKind>, k: usize },
}

impl ChannelKind {
    fn hadamard_by_construction(&self) -> bool {
        match self {
            ChannelKind::DegradedClassical { .. } | ChannelKind::BscCascade { .. } | ChannelKind::Hadamard { .. } => {
                true
            }
            ChannelKind::Power { base, .. } => base.hadamard_by_construction(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFlags {
    /// Off-diagonal inputs are annihilated (the channel only sees `|x><x|`).
    pub classical_input: bool,
    /// Classical input and diagonal outputs.
    pub is_classical: bool,
    pub is_hadamard: bool,
    pub degraded_cert: Option<DegradingCertificate>,
}

#[derive(Debug, Clone)]
pub struct BroadcastChannel {
    channel: QuantumChannel,
    marginal1: QuantumChannel,
    marginal2: QuantumChannel,
    flags: ChannelFlags,
    kind: ChannelKind,
}

impl BroadcastChannel {
    /// `kraus` map `A` (dim `din`) to `B1 (x) B2`.
    pub fn new(kraus: Vec<CMatrix>, din: usize, d1: usize, d2: usize, kind: ChannelKind) -> Result<Self> {
        let channel = QuantumChannel::new(
            kraus,
            Subsystems::new(&[din], &[INPUT_LABEL])?,
            Subsystems::new(&[d1, d2], &[B1, B2])?,
        )?;
        Ok(Self::from_channel(channel, kind))
    }

    fn from_channel(channel: QuantumChannel, kind: ChannelKind) -> Self {
        let (d1, d2) = (channel.output().dims[0], channel.output().dims[1]);
        let marginal1 = trace_out(&channel, d1, d2, true);
        let marginal2 = trace_out(&channel, d1, d2, false);
        let classical_input = has_classical_input(&channel);
        let is_classical = classical_input && has_diagonal_outputs(&channel);
        let is_hadamard = kind.hadamard_by_construction();
        let flags = ChannelFlags { classical_input, is_classical, is_hadamard, degraded_cert: None };
        Self { channel, marginal1, marginal2, flags, kind }
    }

    pub fn channel(&self) -> &QuantumChannel {
        &self.channel
    }

    pub fn marginal(&self, which: u8) -> &QuantumChannel {
        if which == 1 {
            &self.marginal1
        } else {
            &self.marginal2
        }
    }

    pub fn flags(&self) -> &ChannelFlags {
        &self.flags
    }

    pub fn kind(&self) -> &ChannelKind {
        &self.kind
    }

    pub fn in_dim(&self) -> usize {
        self.channel.in_dim()
    }

    pub fn d1(&self) -> usize {
        self.channel.output().dims[0]
    }

    pub fn d2(&self) -> usize {
        self.channel.output().dims[1]
    }

    /// Runs [`check_degraded`] and stores a certificate if one is found.
    pub fn certify_degraded(&mut self, opts: &DegradedOptions) -> DegradedOutcome {
        let outcome = check_degraded(self, opts);
        if let DegradedOutcome::Certified(cert) = &outcome {
            self.flags.degraded_cert = Some(cert.clone());
        }
        outcome
    }

    /// `P(y1, y2 | x)` read off the diagonal outputs of a classical channel.
    pub fn classical_kernel(&self) -> Option<Vec<Vec<Vec<f64>>>> {
        if !self.flags.is_classical {
            return None;
        }
        let (d1, d2) = (self.d1(), self.d2());
        Some(
            (0..self.in_dim())
                .map(|x| {
                    let out = self.channel.apply_pure(&linalg::basis_vector(self.in_dim(), x));
                    (0..d1).map(|y1| (0..d2).map(|y2| out[(y1 * d2 + y2, y1 * d2 + y2)].re.max(0.0)).collect()).collect()
                })
                .collect(),
        )
    }

    /// Output states `N(|x><x|)` on `B1 B2` for each computational input.
    pub fn classical_input_outputs(&self) -> Vec<CMatrix> {
        (0..self.in_dim()).map(|x| self.channel.apply_pure(&linalg::basis_vector(self.in_dim(), x))).collect()
    }

    /// `k`-fold product channel with outputs regrouped as `(B1^k)(B2^k)`.
    pub fn power(&self, k: usize) -> Result<BroadcastChannel> {
        if k == 0 {
            return Err(Error::InvalidParameter("power must be at least 1".into()));
        }
        if k == 1 {
            return Ok(self.clone());
        }
        let (din, d1, d2) = (self.in_dim(), self.d1(), self.d2());
        let mut kraus = self.channel.kraus().to_vec();
        for _ in 1..k {
            let mut next = Vec::with_capacity(kraus.len() * self.channel.kraus().len());
            for a in &kraus {
                for b in self.channel.kraus() {
                    next.push(linalg::kron(a, b));
                }
            }
            kraus = next;
        }
        // rows are (B1 B2)^k; gather all B1 factors first
        let mut dims = Vec::with_capacity(2 * k);
        for _ in 0..k {
            dims.push(d1);
            dims.push(d2);
        }
        let perm: Vec<usize> = (0..k).map(|i| 2 * i).chain((0..k).map(|i| 2 * i + 1)).collect();
        let kraus: Vec<CMatrix> = kraus
            .into_iter()
            .map(|m| {
                let cols: Vec<CVector> =
                    (0..m.ncols()).map(|j| linalg::permute_vector(&m.column(j).into_owned(), &dims, &perm)).collect();
                CMatrix::from_columns(&cols)
            })
            .collect();
        let kind = ChannelKind::Power { base: Box::new(self.kind.clone()), k };
        let out = BroadcastChannel::new(kraus, din.pow(k as u32), d1.pow(k as u32), d2.pow(k as u32), kind)?;
        Ok(BroadcastChannel { channel: out.channel.trimmed(), ..out })
    }

    pub fn to_file(&self) -> ChannelFile {
        ChannelFile { version: SCHEMA_VERSION.to_string(), kind: self.kind.clone(), kraus: self.channel.to_file() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ChannelFile = serde_json::from_str(s)?;
        file.into_channel()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Channel file: schema version, builder kind and the Kraus data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFile {
    pub version: String,
    pub kind: ChannelKind,
    #[serde(flatten)]
    pub kraus: KrausFile,
}

impl ChannelFile {
    pub fn into_channel(self) -> Result<BroadcastChannel> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::Schema(format!("unsupported version {:?}", self.version)));
        }
        let k = &self.kraus;
        if k.in_dims.len() != 1 || k.out_dims.len() != 2 || k.out_labels != [B1, B2] {
            return Err(Error::Schema("broadcast channel needs one input and outputs [B1, B2]".into()));
        }
        let (din, d1, d2) = (k.in_dims[0], k.out_dims[0], k.out_dims[1]);
        let kraus = self.kraus.kraus.iter().map(|m| matrix_from_rows(m)).collect::<Result<Vec<_>>>()?;
        BroadcastChannel::new(kraus, din, d1, d2, self.kind)
    }
}

fn trace_out(ch: &QuantumChannel, d1: usize, d2: usize, keep_first: bool) -> QuantumChannel {
    let din = ch.in_dim();
    let mut kraus = Vec::new();
    for k in ch.kraus() {
        if keep_first {
            for j in 0..d2 {
                kraus.push(CMatrix::from_fn(d1, din, |a, i| k[(a * d2 + j, i)]));
            }
        } else {
            for j in 0..d1 {
                kraus.push(CMatrix::from_fn(d2, din, |b, i| k[(j * d2 + b, i)]));
            }
        }
    }
    let (dim, label) = if keep_first { (d1, B1) } else { (d2, B2) };
    let output = Subsystems { dims: vec![dim], labels: vec![label.to_string()] };
    QuantumChannel::from_parts_unchecked(kraus, ch.input().clone(), output).trimmed()
}

const STRUCTURE_TOL: f64 = 1e-12;

fn has_classical_input(ch: &QuantumChannel) -> bool {
    let d = ch.in_dim();
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let mut e = CMatrix::zeros(d, d);
            e[(i, j)] = linalg::ONE;
            if linalg::max_abs(&ch.apply_matrix(&e)) > STRUCTURE_TOL {
                return false;
            }
        }
    }
    true
}

fn has_diagonal_outputs(ch: &QuantumChannel) -> bool {
    let d = ch.in_dim();
    (0..d).all(|x| {
        let out = ch.apply_pure(&linalg::basis_vector(d, x));
        let mut off = 0.0f64;
        for i in 0..out.nrows() {
            for j in 0..out.ncols() {
                if i != j {
                    off = off.max(out[(i, j)].norm());
                }
            }
        }
        off <= STRUCTURE_TOL
    })
}

fn real(x: f64) -> linalg::C64 {
    c(x, 0.0)
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::InvalidParameter(format!("{name} = {p} outside [0, 1]")));
    }
    Ok(())
}

fn validate_kernel(kernel: &[Vec<Vec<f64>>]) -> Result<(usize, usize, usize)> {
    let din = kernel.len();
    if din == 0 {
        return Err(Error::InvalidKernel("kernel has no inputs".into()));
    }
    let d1 = kernel[0].len();
    let d2 = kernel[0].first().map_or(0, |r| r.len());
    if d1 == 0 || d2 == 0 {
        return Err(Error::InvalidKernel("empty output alphabet".into()));
    }
    for (x, row) in kernel.iter().enumerate() {
        if row.len() != d1 || row.iter().any(|r| r.len() != d2) {
            return Err(Error::InvalidKernel(format!("row {x} has inconsistent shape")));
        }
        if row.iter().flatten().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidKernel(format!("row {x} has negative or non-finite entries")));
        }
        let s: f64 = row.iter().flatten().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidKernel(format!("row {x} sums to {s}")));
        }
    }
    Ok((din, d1, d2))
}

/// `rho -> sum P(y1,y2|x) <x|rho|x> |y1 y2><y1 y2|`, from `kernel[x][y1][y2]`.
pub fn classical_broadcast(kernel: Vec<Vec<Vec<f64>>>) -> Result<BroadcastChannel> {
    let kraus = classical_kraus(&kernel)?;
    let (din, d1, d2) = validate_kernel(&kernel)?;
    BroadcastChannel::new(kraus, din, d1, d2, ChannelKind::Classical { kernel })
}

fn classical_kraus(kernel: &[Vec<Vec<f64>>]) -> Result<Vec<CMatrix>> {
    let (din, d1, d2) = validate_kernel(kernel)?;
    let mut kraus = Vec::new();
    for (x, row) in kernel.iter().enumerate() {
        for y1 in 0..d1 {
            for y2 in 0..d2 {
                let p = row[y1][y2];
                if p > 0.0 {
                    let mut k = CMatrix::zeros(d1 * d2, din);
                    k[(y1 * d2 + y2, x)] = real(p.sqrt());
                    kraus.push(k);
                }
            }
        }
    }
    Ok(kraus)
}

/// Physically degraded classical channel `x -> y1 -> y2`.
pub fn degraded_classical_broadcast(w1: &[Vec<f64>], w21: &[Vec<f64>]) -> Result<BroadcastChannel> {
    let d1 = w1.first().map_or(0, |r| r.len());
    if w21.len() != d1 {
        return Err(Error::InvalidKernel(format!("degrading kernel has {} rows, expected {d1}", w21.len())));
    }
    let kernel: Vec<Vec<Vec<f64>>> =
        w1.iter().map(|row| row.iter().enumerate().map(|(y1, &p)| w21[y1].iter().map(|q| p * q).collect()).collect()).collect();
    let kraus = classical_kraus(&kernel)?;
    let (din, d1, d2) = validate_kernel(&kernel)?;
    BroadcastChannel::new(kraus, din, d1, d2, ChannelKind::DegradedClassical { kernel })
}

fn bsc(p: f64) -> Vec<Vec<f64>> {
    vec![vec![1.0 - p, p], vec![p, 1.0 - p]]
}

/// Binary symmetric cascade: `Y1 = X + Z1`, `Y2 = Y1 + Z2`.
pub fn bsc_cascade(p1: f64, p2: f64) -> Result<BroadcastChannel> {
    check_probability("p1", p1)?;
    check_probability("p2", p2)?;
    let base = degraded_classical_broadcast(&bsc(p1), &bsc(p2))?;
    Ok(BroadcastChannel { kind: ChannelKind::BscCascade { p1, p2 }, ..base })
}

/// Measure with `povm` on `A`, record the outcome `y` in `B1` and prepare
/// `states[y]` in `B2`.
pub fn hadamard(povm: &[CMatrix], states: &[CMatrix]) -> Result<BroadcastChannel> {
    if povm.is_empty() || povm.len() != states.len() {
        return Err(Error::InvalidChannel("need one preparation state per POVM element".into()));
    }
    let din = povm[0].nrows();
    let d2 = states[0].nrows();
    let ny = povm.len();
    let mut total = CMatrix::zeros(din, din);
    for m in povm {
        if m.shape() != (din, din) {
            return Err(Error::DimensionMismatch { expected: din, found: m.nrows() });
        }
        total += m;
    }
    if linalg::max_abs(&(total - linalg::identity(din))) > channel::TOL_TP {
        return Err(Error::InvalidChannel("POVM elements do not sum to the identity".into()));
    }
    let mut kraus = Vec::new();
    for (y, (m, s)) in povm.iter().zip(states).enumerate() {
        state::DensityOperator::new(s.clone(), &[d2], &[B2])?;
        let (mv, mvec) = linalg::hermitian_eigen(m);
        let (sv, svec) = linalg::hermitian_eigen(s);
        for (a, &ma) in mv.iter().enumerate() {
            if ma < -channel::TOL_TP {
                return Err(Error::InvalidChannel("POVM element is not PSD".into()));
            }
            if ma <= channel::KRAUS_TRIM {
                continue;
            }
            for (b, &sb) in sv.iter().enumerate() {
                if sb <= channel::KRAUS_TRIM {
                    continue;
                }
                let out = linalg::kron_vec(&linalg::basis_vector(ny, y), &svec.column(b).into_owned());
                kraus.push(&out * mvec.column(a).adjoint() * real((ma * sb).sqrt()));
            }
        }
    }
    let kind = ChannelKind::Hadamard {
        povm: povm.iter().map(matrix_to_rows).collect(),
        states: states.iter().map(matrix_to_rows).collect(),
    };
    BroadcastChannel::new(kraus, din, ny, d2, kind)
}

/// `B1` is the output of a `p1`-dephasing qubit channel, `B2` its
/// environment qubit after a further `p2`-dephasing.
pub fn qubit_dephasing_broadcast(p1: f64, p2: f64) -> Result<BroadcastChannel> {
    check_probability("p1", p1)?;
    check_probability("p2", p2)?;
    let z = CMatrix::from_diagonal(&CVector::from_vec(vec![linalg::ONE, real(-1.0)]));
    let e0 = CMatrix::from_column_slice(2, 1, &[linalg::ONE, linalg::ZERO]);
    let e1 = CMatrix::from_column_slice(2, 1, &[linalg::ZERO, linalg::ONE]);
    let v = linalg::kron(&linalg::identity(2), &e0) * real((1.0 - p1).sqrt()) + linalg::kron(&z, &e1) * real(p1.sqrt());
    let d0 = linalg::kron(&linalg::identity(2), &(linalg::identity(2) * real((1.0 - p2).sqrt())));
    let d1 = linalg::kron(&linalg::identity(2), &(z * real(p2.sqrt())));
    BroadcastChannel::new(vec![&d0 * &v, &d1 * &v], 2, 2, 2, ChannelKind::QubitDephasing { p1, p2 })
}

/// Qubit erasure broadcast with qutrit outputs (`|2>` flags erasure).
/// The qubit reaches `B1` with probability `1-e1`, `B2` with `1-e2`, and
/// nobody otherwise; a qubit cannot reach both, so `e1 + e2 >= 1`.
pub fn erasure_broadcast(e1: f64, e2: f64) -> Result<BroadcastChannel> {
    check_probability("e1", e1)?;
    check_probability("e2", e2)?;
    let both = e1 + e2 - 1.0;
    if both < -1e-12 {
        return Err(Error::InvalidParameter(format!("erasure probabilities must satisfy e1 + e2 >= 1, got {e1} + {e2}")));
    }
    let both = both.max(0.0);
    let mut kraus = Vec::new();
    let mut to_b1 = CMatrix::zeros(9, 2);
    let mut to_b2 = CMatrix::zeros(9, 2);
    for i in 0..2 {
        to_b1[(i * 3 + 2, i)] = real((1.0 - e1).sqrt());
        to_b2[(2 * 3 + i, i)] = real((1.0 - e2).sqrt());
    }
    kraus.push(to_b1);
    kraus.push(to_b2);
    for i in 0..2 {
        let mut k = CMatrix::zeros(9, 2);
        k[(8, i)] = real(both.sqrt());
        kraus.push(k);
    }
    let ch = BroadcastChannel::new(kraus, 2, 3, 3, ChannelKind::Erasure { e1, e2 })?;
    Ok(BroadcastChannel { channel: ch.channel.trimmed(), ..ch })
}

/// Amplitude damping to `B1`; the environment qubit goes to `B2`.
pub fn amplitude_damping_broadcast(gamma: f64) -> Result<BroadcastChannel> {
    check_probability("gamma", gamma)?;
    let mut v = CMatrix::zeros(4, 2);
    v[(0, 0)] = linalg::ONE;
    v[(2, 1)] = real((1.0 - gamma).sqrt());
    v[(1, 1)] = real(gamma.sqrt());
    BroadcastChannel::new(vec![v], 2, 2, 2, ChannelKind::AmplitudeDamping { gamma })
}

/// Identity to `B1`, constant `sigma` at `B2`.
pub fn route_to_b1(d: usize, sigma: &CMatrix) -> Result<BroadcastChannel> {
    let kraus = routing_kraus(d, sigma, true)?;
    BroadcastChannel::new(kraus, d, d, sigma.nrows(), ChannelKind::RouteToB1)
}

/// Constant `sigma` at `B1`, identity to `B2`.
pub fn route_to_b2(d: usize, sigma: &CMatrix) -> Result<BroadcastChannel> {
    let kraus = routing_kraus(d, sigma, false)?;
    BroadcastChannel::new(kraus, d, sigma.nrows(), d, ChannelKind::RouteToB2)
}

fn routing_kraus(d: usize, sigma: &CMatrix, first: bool) -> Result<Vec<CMatrix>> {
    state::DensityOperator::new(sigma.clone(), &[sigma.nrows()], &["S"])?;
    let (vals, vecs) = linalg::hermitian_eigen(sigma);
    let mut kraus = Vec::new();
    for (j, &l) in vals.iter().enumerate() {
        if l <= channel::KRAUS_TRIM {
            continue;
        }
        let s = CMatrix::from_columns(&[vecs.column(j).into_owned()]) * real(l.sqrt());
        let id = linalg::identity(d);
        kraus.push(if first { linalg::kron(&id, &s) } else { linalg::kron(&s, &id) });
    }
    Ok(kraus)
}

/// Random channel from a Haar-like isometry `A -> B1 B2 E`.
pub fn random_broadcast(din: usize, d1: usize, d2: usize, nkraus: usize, seed: u64) -> Result<BroadcastChannel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = CMatrix::from_fn(d1 * d2 * nkraus, din, |_, _| linalg::random_complex_gaussian(&mut rng));
    let v = linalg::polar_isometry(&g);
    let kraus = (0..nkraus).map(|e| CMatrix::from_fn(d1 * d2, din, |i, j| v[(i * nkraus + e, j)])).collect();
    BroadcastChannel::new(kraus, din, d1, d2, ChannelKind::Random { kraus: nkraus, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradedOptions {
    /// Residual accepted as a certificate.
    pub tol: f64,
    pub starts: usize,
    /// Dilation environment of the candidate map; `None` means `d1 * d2`.
    pub env_dim: Option<usize>,
    pub local: LocalOptions,
    pub seed: u64,
}

impl Default for DegradedOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            starts: 8,
            env_dim: None,
            local: LocalOptions { method: LocalMethod::NelderMead, max_evals: 20_000, ..Default::default() },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradingCertificate {
    /// `B1 -> B2`.
    pub kraus: KrausFile,
    /// Worst-case trace distance over the probe inputs.
    pub residual: f64,
}

impl DegradingCertificate {
    pub fn channel(&self) -> Result<QuantumChannel> {
        self.kraus.clone().into_channel()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum DegradedOutcome {
    Certified(DegradingCertificate),
    /// The search failed; this is not a proof that no degrading map exists.
    NotFound { best_residual: f64, note: String },
}

impl DegradedOutcome {
    pub fn residual(&self) -> f64 {
        match self {
            DegradedOutcome::Certified(c) => c.residual,
            DegradedOutcome::NotFound { best_residual, .. } => *best_residual,
        }
    }
}

/// `|i>`, `(|i>+|j>)/sqrt2` and `(|i>+i|j>)/sqrt2`: informationally complete.
pub fn probe_states(d: usize) -> Vec<CVector> {
    let mut out: Vec<CVector> = (0..d).map(|i| linalg::basis_vector(d, i)).collect();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..d {
        for j in i + 1..d {
            for phase in [linalg::ONE, c(0.0, 1.0)] {
                let mut v = CVector::zeros(d);
                v[i] = real(h);
                v[j] = phase * h;
                out.push(v);
            }
        }
    }
    out
}

/// Column `(i, j)` holds `vec N(|i><j|)` (row-major).
fn transfer_matrix(ch: &QuantumChannel) -> CMatrix {
    let (din, dout) = (ch.in_dim(), ch.out_dim());
    let mut t = CMatrix::zeros(dout * dout, din * din);
    for i in 0..din {
        for j in 0..din {
            let mut e = CMatrix::zeros(din, din);
            e[(i, j)] = linalg::ONE;
            let out = ch.apply_matrix(&e);
            for a in 0..dout {
                for b in 0..dout {
                    t[(a * dout + b, i * din + j)] = out[(a, b)];
                }
            }
        }
    }
    t
}

/// Least-squares map `P` with `P N1 = N2` on the operator span, projected to
/// a CPTP map: Choi eigenvalues clipped, then trace deficit filled with a
/// maximally mixed output. Returns the isometry `B1 -> B2 (x) E`.
fn linear_candidate(n1: &QuantumChannel, n2: &QuantumChannel, env: usize) -> CMatrix {
    let (d1, d2) = (n1.out_dim(), n2.out_dim());
    let t1 = transfer_matrix(n1);
    let t2 = transfer_matrix(n2);
    let pt = match t1.clone().pseudo_inverse(1e-10) {
        Ok(pinv) => t2 * pinv,
        Err(_) => CMatrix::zeros(d2 * d2, d1 * d1),
    };
    // Choi in (input, output) order
    let mut choi = CMatrix::zeros(d1 * d2, d1 * d2);
    for a in 0..d1 {
        for b in 0..d1 {
            for o in 0..d2 {
                for p in 0..d2 {
                    choi[(a * d2 + o, b * d2 + p)] = pt[(o * d2 + p, a * d1 + b)];
                }
            }
        }
    }
    let choi = linalg::hermitian_map(&linalg::hermitize(&choi), |l| l.max(0.0));
    let mut x = linalg::partial_trace(&choi, &[d1, d2], &[0]);
    let mut choi = choi;
    let lmax = linalg::hermitian_eigenvalues(&x).last().copied().unwrap_or(0.0);
    if lmax > 1.0 {
        choi /= real(lmax);
        x /= real(lmax);
    }
    let deficit = linalg::hermitize(&(linalg::identity(d1) - x));
    choi += linalg::kron(&deficit, &(linalg::identity(d2) * real(1.0 / d2 as f64)));
    let (vals, vecs) = linalg::hermitian_eigen(&choi);
    let mut v = CMatrix::zeros(d2 * env, d1);
    let mut e = 0;
    for idx in (0..vals.len()).rev() {
        if vals[idx] <= 1e-14 || e >= env {
            continue;
        }
        let s = vals[idx].sqrt();
        for a in 0..d1 {
            for o in 0..d2 {
                v[(o * env + e, a)] = vecs[(a * d2 + o, idx)] * real(s);
            }
        }
        e += 1;
    }
    linalg::polar_isometry(&v)
}

fn isometry_kraus(v: &CMatrix, dout: usize, env: usize) -> Vec<CMatrix> {
    (0..env).map(|e| CMatrix::from_fn(dout, v.ncols(), |o, a| v[(o * env + e, a)])).collect()
}

fn worst_residual(v: &CMatrix, d2: usize, env: usize, b1_states: &[CMatrix], b2_states: &[CMatrix]) -> f64 {
    let mut worst = 0.0f64;
    for (s1, s2) in b1_states.iter().zip(b2_states) {
        let full = v * s1 * v.adjoint();
        let out = linalg::partial_trace(&full, &[d2, env], &[0]);
        worst = worst.max(state::trace_distance_matrices(&out, s2));
    }
    worst
}

/// Searches for `P: B1 -> B2` with `P o N1 = N2`, minimizing the worst-case
/// trace distance over [`probe_states`]. A least-squares candidate seeds a
/// multi-start Nelder-Mead search over dilation isometries.
pub fn check_degraded(bc: &BroadcastChannel, opts: &DegradedOptions) -> DegradedOutcome {
    let (n1, n2) = (bc.marginal(1), bc.marginal(2));
    let (d1, d2) = (n1.out_dim(), n2.out_dim());
    let env = opts.env_dim.unwrap_or(d1 * d2).max(1);
    let probes = probe_states(bc.in_dim());
    let b1_states: Vec<CMatrix> = probes.iter().map(|p| n1.apply_pure(p)).collect();
    let b2_states: Vec<CMatrix> = probes.iter().map(|p| n2.apply_pure(p)).collect();

    let v0 = linear_candidate(n1, n2, env);
    let r0 = worst_residual(&v0, d2, env, &b1_states, &b2_states);
    let (v, residual) = if r0 <= opts.tol {
        (v0, r0)
    } else {
        let objective = |x: &[f64]| {
            let v = linalg::isometry_from_reals(x, d2 * env, d1);
            worst_residual(&v, d2, env, &b1_states, &b2_states)
        };
        let x_lin = linalg::reals_from_complex_matrix(&v0);
        let init = |s: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
            if s == 0 {
                x_lin.clone()
            } else {
                use rand::Rng;
                (0..x_lin.len()).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()
            }
        };
        let res = optimize::multistart(&objective, init, opts.starts, opts.seed, &opts.local);
        let v = linalg::isometry_from_reals(&res.best.x, d2 * env, d1);
        let r = worst_residual(&v, d2, env, &b1_states, &b2_states);
        if r < r0 {
            (v, r)
        } else {
            (v0, r0)
        }
    };
    if residual <= opts.tol {
        let p = QuantumChannel::from_parts_unchecked(
            isometry_kraus(&v, d2, env),
            Subsystems { dims: vec![d1], labels: vec![B1.into()] },
            Subsystems { dims: vec![d2], labels: vec![B2.into()] },
        )
        .trimmed();
        DegradedOutcome::Certified(DegradingCertificate { kraus: p.to_file(), residual })
    } else {
        DegradedOutcome::NotFound {
            best_residual: residual,
            note: "numerical search only; not a proof that the channel is not degraded".into(),
        }
    }
}

/// Summary printed by `channel info`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub kind: ChannelKind,
    pub in_dim: usize,
    pub d1: usize,
    pub d2: usize,
    pub kraus_rank: usize,
    pub classical_input: bool,
    pub is_classical: bool,
    pub is_hadamard: bool,
    /// `H(B1)`, `H(B2)` for the maximally mixed input.
    pub h_b1: f64,
    pub h_b2: f64,
    pub degraded: DegradedOutcome,
}

pub fn channel_info(bc: &BroadcastChannel, opts: &DegradedOptions) -> ChannelInfo {
    let d = bc.in_dim();
    let mixed = linalg::identity(d) * real(1.0 / d as f64);
    let h = |ch: &QuantumChannel| linalg::entropy_bits(&ch.apply_matrix(&mixed));
    ChannelInfo {
        kind: bc.kind().clone(),
        in_dim: d,
        d1: bc.d1(),
        d2: bc.d2(),
        kraus_rank: bc.channel().trimmed().kraus().len(),
        classical_input: bc.flags().classical_input,
        is_classical: bc.flags().is_classical,
        is_hadamard: bc.flags().is_hadamard,
        h_b1: h(bc.marginal(1)),
        h_b2: h(bc.marginal(2)),
        degraded: check_degraded(bc, opts),
    }
}

/// Prepares `cos t |0> + sin t |1>`.
fn real_qubit(t: f64) -> CMatrix {
    let v = CVector::from_vec(vec![real(t.cos()), real(t.sin())]);
    linalg::projector(&v)
}

/// The measure-and-prepare test channel: `Z` measurement, outcome 0
/// prepares `|0>`, outcome 1 prepares `cos(pi/8)|0> + sin(pi/8)|1>`.
pub fn hadamard_test_channel() -> Result<BroadcastChannel> {
    let p0 = linalg::projector(&linalg::basis_vector(2, 0));
    let p1 = linalg::projector(&linalg::basis_vector(2, 1));
    hadamard(&[p0, p1], &[real_qubit(0.0), real_qubit(std::f64::consts::PI / 8.0)])
}

/// The five channels shipped with the tool, by file stem.
pub fn bundled() -> Result<Vec<(&'static str, BroadcastChannel)>> {
    Ok(vec![
        ("bsc-cascade", bsc_cascade(0.05, 0.1)?),
        ("hadamard", hadamard_test_channel()?),
        ("dephasing", qubit_dephasing_broadcast(0.1, 0.1)?),
        ("erasure", erasure_broadcast(0.25, 0.75)?),
        ("amplitude-damping", amplitude_damping_broadcast(0.3)?),
    ])
}

pub fn write_bundled(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (name, bc) in bundled()? {
        let p = dir.join(format!("{name}.json"));
        std::fs::write(&p, bc.to_json()?)?;
        paths.push(p);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::DensityOperator;

    fn random_rho(d: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        linalg::random_density_matrix(d, d, &mut rng)
    }

    fn assert_marginals_match(bc: &BroadcastChannel, seeds: std::ops::Range<u64>) {
        let (d1, d2) = (bc.d1(), bc.d2());
        for s in seeds {
            let rho = random_rho(bc.in_dim(), s);
            let joint = bc.channel().apply_matrix(&rho);
            let m1 = linalg::partial_trace(&joint, &[d1, d2], &[0]);
            let m2 = linalg::partial_trace(&joint, &[d1, d2], &[1]);
            assert!(linalg::max_abs(&(bc.marginal(1).apply_matrix(&rho) - m1)) < 1e-9);
            assert!(linalg::max_abs(&(bc.marginal(2).apply_matrix(&rho) - m2)) < 1e-9);
        }
    }

    #[test]
    fn classical_kernel_acts_on_basis_inputs() {
        let kernel = vec![vec![vec![0.5, 0.2], vec![0.1, 0.2]], vec![vec![0.0, 0.0], vec![0.3, 0.7]]];
        let bc = classical_broadcast(kernel.clone()).unwrap();
        assert!(bc.flags().is_classical);
        let out = bc.channel().apply_pure(&linalg::basis_vector(2, 0));
        for y1 in 0..2 {
            for y2 in 0..2 {
                assert!((out[(y1 * 2 + y2, y1 * 2 + y2)].re - kernel[0][y1][y2]).abs() < 1e-15);
            }
        }
        let back = bc.classical_kernel().unwrap();
        for (r, e) in back.iter().flatten().flatten().zip(kernel.iter().flatten().flatten()) {
            assert!((r - e).abs() < 1e-15);
        }
        // marginal kernel
        let m1 = bc.marginal(1).apply_pure(&linalg::basis_vector(2, 0));
        assert!((m1[(0, 0)].re - 0.7).abs() < 1e-12 && (m1[(1, 1)].re - 0.3).abs() < 1e-12);
    }

    #[test]
    fn deterministic_kernel_is_classical() {
        let bc = classical_broadcast(vec![vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![vec![0.0, 0.0], vec![0.0, 1.0]]])
            .unwrap();
        assert!(bc.flags().is_classical);
        assert!(!bc.flags().is_hadamard);
    }

    #[test]
    fn kernel_validation() {
        assert!(classical_broadcast(vec![vec![vec![0.5, 0.4]]]).is_err());
        assert!(classical_broadcast(vec![vec![vec![1.2, -0.2]]]).is_err());
        assert!(classical_broadcast(vec![]).is_err());
        assert!(classical_broadcast(vec![vec![vec![1.0]], vec![vec![0.5, 0.5]]]).is_err());
    }

    #[test]
    fn marginals_agree_with_partial_trace() {
        assert_marginals_match(&random_broadcast(2, 2, 2, 3, 1).unwrap(), 0..20);
        assert_marginals_match(&random_broadcast(3, 2, 3, 2, 2).unwrap(), 0..20);
        for (_, bc) in bundled().unwrap() {
            assert_marginals_match(&bc, 0..5);
        }
    }

    #[test]
    fn routing_channel_has_constant_marginal() {
        let sigma = real_qubit(0.3);
        let bc = route_to_b1(2, &sigma).unwrap();
        for s in 0..5 {
            let out = bc.marginal(2).apply_matrix(&random_rho(2, s));
            assert!(linalg::max_abs(&(out - &sigma)) < 1e-12);
        }
    }

    #[test]
    fn erasure_boundary_parameters() {
        let bc = erasure_broadcast(0.0, 1.0).unwrap();
        let flag = linalg::projector(&linalg::basis_vector(3, 2));
        for s in 0..5 {
            let rho = random_rho(2, s);
            let m1 = bc.marginal(1).apply_matrix(&rho);
            let embedded = CMatrix::from_fn(3, 3, |i, j| if i < 2 && j < 2 { rho[(i, j)] } else { linalg::ZERO });
            assert!(linalg::max_abs(&(m1 - embedded)) < 1e-12);
            assert!(linalg::max_abs(&(bc.marginal(2).apply_matrix(&rho) - &flag)) < 1e-12);
        }
        assert!(erasure_broadcast(0.2, 0.3).is_err());
    }

    #[test]
    fn hadamard_builder_is_certified_degraded() {
        let bc = hadamard_test_channel().unwrap();
        assert!(bc.flags().is_hadamard);
        assert!(bc.flags().classical_input);
        match check_degraded(&bc, &DegradedOptions::default()) {
            DegradedOutcome::Certified(cert) => {
                assert!(cert.residual <= 1e-6);
                let p = cert.channel().unwrap();
                assert!(p.tp_defect() <= 1e-8);
                assert!(p.choi_min_eigenvalue() >= -1e-8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equal_marginals_give_identity_certificate() {
        // |y> -> |y y>: both receivers see the fully dephased input
        let copy = |y: usize| {
            let mut m = CMatrix::zeros(4, 2);
            m[(y * 2 + y, y)] = linalg::ONE;
            m
        };
        let bc = BroadcastChannel::new(vec![copy(0), copy(1)], 2, 2, 2, ChannelKind::Custom).unwrap();
        match check_degraded(&bc, &DegradedOptions::default()) {
            DegradedOutcome::Certified(cert) => {
                assert!(cert.residual < 1e-12, "{}", cert.residual);
                let p = cert.channel().unwrap();
                for s in 0..3 {
                    let rho = random_rho(2, s);
                    let diag = CMatrix::from_fn(2, 2, |i, j| if i == j { rho[(i, j)] } else { linalg::ZERO });
                    assert!(linalg::max_abs(&(p.apply_matrix(&diag) - &diag)) < 1e-9);
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn routing_to_b2_is_not_certified() {
        let bc = route_to_b2(2, &real_qubit(0.0)).unwrap();
        let outcome = check_degraded(&bc, &DegradedOptions { starts: 4, ..Default::default() });
        match outcome {
            DegradedOutcome::NotFound { best_residual, note } => {
                assert!(best_residual > 1e-3);
                assert!(note.contains("not a proof"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stinespring_of_broadcast_reproduces_channel() {
        let bc = random_broadcast(2, 2, 2, 2, 7).unwrap();
        let ext = bc.channel().stinespring();
        assert!(ext.isometry_defect() < 1e-9);
        for s in 0..10 {
            let rho = random_rho(2, s);
            assert!(linalg::max_abs(&(ext.channel_output(&rho) - bc.channel().apply_matrix(&rho))) < 1e-9);
        }
    }

    #[test]
    fn channel_file_round_trip() {
        for (_, bc) in bundled().unwrap() {
            let json = bc.to_json().unwrap();
            let back = BroadcastChannel::from_json(&json).unwrap();
            assert_eq!(back.kind(), bc.kind());
            assert_eq!(back.channel().kraus(), bc.channel().kraus());
            assert_eq!(back.flags().is_classical, bc.flags().is_classical);
        }
    }

    #[test]
    fn power_regroups_outputs() {
        let bc = bsc_cascade(0.1, 0.2).unwrap();
        let sq = bc.power(2).unwrap();
        assert_eq!((sq.in_dim(), sq.d1(), sq.d2()), (4, 4, 4));
        let k = sq.classical_kernel().unwrap();
        let k1 = bc.classical_kernel().unwrap();
        // x = (1, 0), y1 = (1, 1), y2 = (0, 1)
        let expect = k1[1][1][0] * k1[0][1][1];
        assert!((k[2][3][1] - expect).abs() < 1e-12);
    }

    #[test]
    fn dephasing_broadcast_b1_is_dephasing() {
        let bc = qubit_dephasing_broadcast(0.1, 0.3).unwrap();
        let deph = channel::dephasing(0.1, "A", "B1").unwrap();
        for s in 0..5 {
            let rho = random_rho(2, s);
            assert!(linalg::max_abs(&(bc.marginal(1).apply_matrix(&rho) - deph.apply_matrix(&rho))) < 1e-12);
        }
        let out = DensityOperator::new(bc.marginal(2).apply_matrix(&random_rho(2, 3)), &[2], &["B2"]);
        assert!(out.is_ok());
    }

    #[test]
    fn writes_bundled_files() {
        let dir = std::env::temp_dir().join(format!("qbc-bundled-{}", std::process::id()));
        let paths = write_bundled(&dir).unwrap();
        assert_eq!(paths.len(), 5);
        for p in &paths {
            BroadcastChannel::load(p).unwrap();
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
