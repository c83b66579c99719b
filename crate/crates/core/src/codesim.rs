//! Monte-Carlo runs of superposition coding with binning over a broadcast
//! channel whose receivers confer.
//!
//! Bob 1 decodes `(m0, m1)` and forwards the bin index of `m0`; Bob 2
//! decodes `m0` inside that bin. Codebooks are fixed by the seed, messages
//! are drawn uniformly per trial, and each trial has its own RNG stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::broadcast::BroadcastChannel;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, CVector};
use crate::optimize::stream_rng;
use crate::state::SCHEMA_VERSION;

/// Cap on `2^{nR0} (1 + 2^{nR1})` stored words.
pub const MAX_WORDS: usize = 1 << 20;
pub const MAX_CQ_BLOCK: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub n: usize,
    pub card0: usize,
    pub card1: usize,
    /// `p(x0, x1)`, row-major.
    pub pmf: Vec<f64>,
    pub requested: [f64; 3],
    /// `(R0, R1, C12)` after rounding to multiples of `1/n`.
    pub rates: [f64; 3],
    pub x0_words: Vec<Vec<u8>>,
    /// Indexed by `m0 * 2^{nR1} + m1`.
    pub x1_words: Vec<Vec<u8>>,
    pub bin_size: usize,
    pub seed: u64,
}

impl Codebook {
    pub fn m0_count(&self) -> usize {
        self.x0_words.len()
    }

    pub fn m1_count(&self) -> usize {
        self.x1_words.len() / self.x0_words.len()
    }

    pub fn bins(&self) -> usize {
        self.m0_count() / self.bin_size
    }

    pub fn bin_of(&self, m0: usize) -> usize {
        m0 / self.bin_size
    }

    pub fn bin(&self, g: usize) -> std::ops::Range<usize> {
        g * self.bin_size..(g + 1) * self.bin_size
    }

    pub fn x1(&self, m0: usize, m1: usize) -> &[u8] {
        &self.x1_words[m0 * self.m1_count() + m1]
    }

    fn p0(&self) -> Vec<f64> {
        (0..self.card0).map(|a| (0..self.card1).map(|b| self.pmf[a * self.card1 + b]).sum()).collect()
    }
}

fn sample_index<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&q| q > 0.0).unwrap_or(0)
}

fn draw_words<R: Rng>(card0: usize, card1: usize, pmf: &[f64], n: usize, m0: usize, m1: usize, rng: &mut R) -> (Vec<Vec<u8>>, Vec<Vec<u8>>) {
    let p0: Vec<f64> = (0..card0).map(|a| (0..card1).map(|b| pmf[a * card1 + b]).sum()).collect();
    let cond: Vec<Vec<f64>> = (0..card0)
        .map(|a| (0..card1).map(|b| if p0[a] > 0.0 { pmf[a * card1 + b] / p0[a] } else { 0.0 }).collect())
        .collect();
    let x0_words: Vec<Vec<u8>> = (0..m0).map(|_| (0..n).map(|_| sample_index(&p0, rng) as u8).collect()).collect();
    let mut x1_words = Vec::with_capacity(m0 * m1);
    for w in &x0_words {
        for _ in 0..m1 {
            x1_words.push(w.iter().map(|&a| sample_index(&cond[a as usize], rng) as u8).collect());
        }
    }
    (x0_words, x1_words)
}

impl Codebook {
    /// Same construction with fresh words drawn from `rng`.
    pub fn redraw<R: Rng>(&self, rng: &mut R) -> Codebook {
        let (x0_words, x1_words) = draw_words(self.card0, self.card1, &self.pmf, self.n, self.m0_count(), self.m1_count(), rng);
        Codebook { x0_words, x1_words, ..self.clone() }
    }
}

/// Random superposition codebook with `2^{nC12}` equal bins.
pub fn build_codebook(card0: usize, card1: usize, pmf: &[f64], n: usize, r0: f64, r1: f64, c12: f64, seed: u64) -> Result<Codebook> {
    if n == 0 || card0 == 0 || card1 == 0 || card0 > 256 || card1 > 256 {
        return Err(Error::InvalidParameter("need n >= 1 and alphabets of size 1..=256".into()));
    }
    if pmf.len() != card0 * card1 || pmf.iter().any(|&p| p < 0.0 || !p.is_finite()) || (pmf.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter("pmf must be a distribution over card0 x card1 symbols".into()));
    }
    if [r0, r1, c12].iter().any(|&r| r < 0.0 || !r.is_finite()) {
        return Err(Error::InvalidParameter("rates must be non-negative".into()));
    }
    let nf = n as f64;
    let k0 = (nf * r0).round() as u32;
    let k1 = (nf * r1).round() as u32;
    let kc = ((nf * c12).round() as u32).min(k0);
    if k0 >= 40 || k1 >= 40 {
        return Err(Error::ResourceGuard(format!("codebook of 2^{} x 2^{} words", k0, k1)));
    }
    let (m0, m1) = (1usize << k0, 1usize << k1);
    if m0.saturating_mul(1 + m1) > MAX_WORDS {
        return Err(Error::ResourceGuard(format!("{} words exceed the cap of {MAX_WORDS}", m0 * (1 + m1))));
    }
    let (x0_words, x1_words) = draw_words(card0, card1, pmf, n, m0, m1, &mut stream_rng(seed, u64::MAX));
    Ok(Codebook {
        n,
        card0,
        card1,
        pmf: pmf.to_vec(),
        requested: [r0, r1, c12],
        rates: [k0 as f64 / nf, k1 as f64 / nf, kc as f64 / nf],
        x0_words,
        x1_words,
        bin_size: 1 << (k0 - kc),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decoder {
    MaxLikelihood,
    JointTypicality,
    /// Pretty-good measurements from typical projectors (cq runs).
    PrettyGood,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    /// Codeword pair not jointly typical.
    pub e1: usize,
    /// Bob 1 misses `m0`.
    pub e2: usize,
    /// Bob 1 gets `m0` but misses `m1`.
    pub e3: usize,
    /// Bob 2 misses `m0`.
    pub e4: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub version: String,
    pub n: usize,
    pub trials: usize,
    pub requested: [f64; 3],
    /// `(R0, R1, C12)` as realized by the codebook.
    pub rates: [f64; 3],
    pub decoder: Decoder,
    pub delta: f64,
    pub events: EventCounts,
    /// Trials with any message decoded wrongly.
    pub errors: usize,
    pub empirical_error: f64,
    /// Trials where Bob 1 had `m0` right but forwarded a bin without it.
    pub forwarding_violations: usize,
    pub seed: u64,
}

impl SimReport {
    fn from_outcomes(cb: &Codebook, trials: usize, decoder: Decoder, delta: f64, seed: u64, outs: &[Outcome]) -> Self {
        let mut ev = EventCounts::default();
        let mut errors = 0;
        let mut fwd = 0;
        for o in outs {
            ev.e1 += usize::from(o.e1);
            ev.e2 += usize::from(o.e2);
            ev.e3 += usize::from(o.e3);
            ev.e4 += usize::from(o.e4);
            errors += usize::from(o.e2 || o.e3 || o.e4);
            fwd += usize::from(o.forward_violation);
        }
        Self {
            version: SCHEMA_VERSION.into(),
            n: cb.n,
            trials,
            requested: cb.requested,
            rates: cb.rates,
            decoder,
            delta,
            events: ev,
            errors,
            empirical_error: if trials > 0 { errors as f64 / trials as f64 } else { 0.0 },
            forwarding_violations: fwd,
            seed,
        }
    }

    /// Binomial standard error of the empirical error.
    pub fn std_error(&self) -> f64 {
        let p = self.empirical_error;
        (p * (1.0 - p) / self.trials.max(1) as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub trials: usize,
    pub seed: u64,
    pub decoder: Decoder,
    /// Typicality slack; `None` means `n^{-1/3}`.
    pub delta: Option<f64>,
    /// Draw a new codebook for every trial (ensemble-average error) instead
    /// of reusing the given one. Classical ML and typicality decoders only.
    #[serde(default)]
    pub codebook_per_trial: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { trials: 10_000, seed: 0, decoder: Decoder::MaxLikelihood, delta: None, codebook_per_trial: false }
    }
}

#[derive(Clone, Copy, Default)]
struct Outcome {
    e1: bool,
    e2: bool,
    e3: bool,
    e4: bool,
    forward_violation: bool,
}

/// Counts of each symbol tuple; `true` when every empirical frequency is
/// within `delta * p` of `p` (zero-probability tuples must not occur).
fn robust_typical(counts: &[usize], p: &[f64], n: usize, delta: f64) -> bool {
    counts.iter().zip(p).all(|(&k, &q)| {
        let f = k as f64 / n as f64;
        if q <= 0.0 {
            k == 0
        } else {
            (f - q).abs() <= delta * q
        }
    })
}

struct ClassicalSetup {
    w: Vec<Vec<Vec<f64>>>,
    lw1: Vec<Vec<f64>>,
    lw2: Vec<Vec<f64>>,
    /// `p(x0, x1, y1)` and `p(x0, y2)` for typicality tests.
    p_xy1: Vec<f64>,
    p_x0y2: Vec<f64>,
    d1: usize,
    d2: usize,
}

fn classical_setup(bc: &BroadcastChannel, cb: &Codebook) -> Result<ClassicalSetup> {
    let w = bc
        .classical_kernel()
        .ok_or_else(|| Error::InvalidChannel("simulate_classical needs a classical channel".into()))?;
    if cb.card1 != w.len() {
        return Err(Error::DimensionMismatch { expected: w.len(), found: cb.card1 });
    }
    let (d1, d2) = (w[0].len(), w[0][0].len());
    let w1: Vec<Vec<f64>> = w.iter().map(|r| r.iter().map(|row| row.iter().sum()).collect()).collect();
    let w2: Vec<Vec<f64>> = w.iter().map(|r| (0..d2).map(|b| r.iter().map(|row| row[b]).sum()).collect()).collect();
    let log = |v: &Vec<Vec<f64>>| -> Vec<Vec<f64>> { v.iter().map(|r| r.iter().map(|&q| q.ln()).collect()).collect() };
    let mut p_xy1 = vec![0.0; cb.card0 * cb.card1 * d1];
    let mut p_x0y2 = vec![0.0; cb.card0 * d2];
    for a in 0..cb.card0 {
        for x in 0..cb.card1 {
            let p = cb.pmf[a * cb.card1 + x];
            for y in 0..d1 {
                p_xy1[(a * cb.card1 + x) * d1 + y] = p * w1[x][y];
            }
            for y in 0..d2 {
                p_x0y2[a * d2 + y] += p * w2[x][y];
            }
        }
    }
    Ok(ClassicalSetup { lw1: log(&w1), lw2: log(&w2), w, p_xy1, p_x0y2, d1, d2 })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn argmax_first(v: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in v.enumerate() {
        if x > f64::NEG_INFINITY && best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

fn pair_typical(cb: &Codebook, m0: usize, m1: usize, delta: f64) -> bool {
    let mut counts = vec![0; cb.card0 * cb.card1];
    for (a, x) in cb.x0_words[m0].iter().zip(cb.x1(m0, m1)) {
        counts[*a as usize * cb.card1 + *x as usize] += 1;
    }
    robust_typical(&counts, &cb.pmf, cb.n, delta)
}

fn triple_typical(cb: &Codebook, s: &ClassicalSetup, m0: usize, m1: usize, y1: &[u8], delta: f64) -> bool {
    let mut counts = vec![0; s.p_xy1.len()];
    for i in 0..cb.n {
        let (a, x) = (cb.x0_words[m0][i] as usize, cb.x1(m0, m1)[i] as usize);
        counts[(a * cb.card1 + x) * s.d1 + y1[i] as usize] += 1;
    }
    robust_typical(&counts, &s.p_xy1, cb.n, delta)
}

fn cloud_typical(cb: &Codebook, s: &ClassicalSetup, m0: usize, y2: &[u8], delta: f64) -> bool {
    let mut counts = vec![0; s.p_x0y2.len()];
    for i in 0..cb.n {
        counts[cb.x0_words[m0][i] as usize * s.d2 + y2[i] as usize] += 1;
    }
    robust_typical(&counts, &s.p_x0y2, cb.n, delta)
}

/// Unique element satisfying `pred`, if any.
fn unique(range: impl Iterator<Item = usize>, mut pred: impl FnMut(usize) -> bool) -> Option<usize> {
    let mut found = None;
    for i in range {
        if pred(i) {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        }
    }
    found
}

fn classical_trial(
    cb: &Codebook,
    s: &ClassicalSetup,
    pgm: Option<&CqSetup>,
    decoder: Decoder,
    delta: f64,
    rng: &mut ChaCha8Rng,
) -> Outcome {
    let (mc0, mc1) = (cb.m0_count(), cb.m1_count());
    let m0 = rng.random_range(0..mc0);
    let m1 = rng.random_range(0..mc1);
    let x = cb.x1(m0, m1);
    let mut y1 = Vec::with_capacity(cb.n);
    let mut y2 = Vec::with_capacity(cb.n);
    for &xi in x {
        let flat: Vec<f64> = s.w[xi as usize].iter().flatten().copied().collect();
        let k = sample_index(&flat, rng);
        y1.push((k / s.d2) as u8);
        y2.push((k % s.d2) as u8);
    }
    if let Some(cq) = pgm {
        return classical_pgm_trial(cb, cq, m0, m1, &y1, &y2, delta, s, rng);
    }
    let ll1 = |a: usize, b: usize| -> f64 { cb.x1(a, b).iter().zip(&y1).map(|(&xi, &yi)| s.lw1[xi as usize][yi as usize]).sum() };
    let ll2 = |a: usize, b: usize| -> f64 { cb.x1(a, b).iter().zip(&y2).map(|(&xi, &yi)| s.lw2[xi as usize][yi as usize]).sum() };
    let (hat0, hat1) = match decoder {
        Decoder::JointTypicality => {
            let h0 = unique(0..mc0, |a| (0..mc1).any(|b| triple_typical(cb, s, a, b, &y1, delta)));
            let h1 = h0.and_then(|a| unique(0..mc1, |b| triple_typical(cb, s, a, b, &y1, delta)));
            (h0, h1)
        }
        _ => match argmax_first((0..mc0 * mc1).map(|k| ll1(k / mc1, k % mc1))) {
            Some(k) => (Some(k / mc1), Some(k % mc1)),
            None => (None, None),
        },
    };
    let g = hat0.map_or(0, |a| cb.bin_of(a));
    let bin = cb.bin(g);
    let tilde = match decoder {
        Decoder::JointTypicality => unique(bin.clone(), |a| cloud_typical(cb, s, a, &y2, delta)),
        _ => argmax_first(bin.clone().map(|a| log_sum_exp(&(0..mc1).map(|b| ll2(a, b)).collect::<Vec<_>>()))).map(|i| bin.start + i),
    };
    Outcome {
        e1: !pair_typical(cb, m0, m1, delta / 2.0),
        e2: hat0 != Some(m0),
        e3: hat0 == Some(m0) && hat1 != Some(m1),
        e4: tilde != Some(m0),
        forward_violation: hat0 == Some(m0) && !bin.contains(&m0),
    }
}

/// With commuting outputs the measurements are diagonal, so outcomes are
/// drawn from their diagonals at the sampled output strings.
#[allow(clippy::too_many_arguments)]
fn classical_pgm_trial(
    cb: &Codebook,
    cq: &CqSetup,
    m0: usize,
    m1: usize,
    y1: &[u8],
    y2: &[u8],
    delta: f64,
    s: &ClassicalSetup,
    rng: &mut ChaCha8Rng,
) -> Outcome {
    let index = |y: &[u8], d: usize| y.iter().fold(0, |acc, &v| acc * d + v as usize);
    let (i1, i2) = (index(y1, s.d1), index(y2, s.d2));
    let mc1 = cb.m1_count();
    let p1: Vec<f64> = cq.bob1.iter().map(|m| m[(i1, i1)].re.max(0.0)).collect();
    let z1: f64 = p1.iter().sum();
    let a = sample_index(&p1.iter().map(|q| q / z1).collect::<Vec<_>>(), rng);
    let (hat0, hat1) = if a + 1 < cq.bob1.len() { (Some(a / mc1), Some(a % mc1)) } else { (None, None) };
    let g = hat0.map_or(0, |h| cb.bin_of(h));
    let p2: Vec<f64> = cq.bob2[g].iter().map(|m| m[(i2, i2)].re.max(0.0)).collect();
    let z2: f64 = p2.iter().sum();
    let b = sample_index(&p2.iter().map(|q| q / z2).collect::<Vec<_>>(), rng);
    let tilde = (b < cb.bin_size).then(|| cb.bin(g).start + b);
    Outcome {
        e1: !pair_typical(cb, m0, m1, delta / 2.0),
        e2: hat0 != Some(m0),
        e3: hat0 == Some(m0) && hat1 != Some(m1),
        e4: tilde != Some(m0),
        forward_violation: hat0 == Some(m0) && !cb.bin(g).contains(&m0),
    }
}

fn default_delta(n: usize, d: Option<f64>) -> f64 {
    d.unwrap_or((n as f64).powf(-1.0 / 3.0))
}

/// Classical channel: exact sampling of `(y1^n, y2^n)` and ML,
/// joint-typicality or pretty-good-measurement decoding.
pub fn simulate_classical(bc: &BroadcastChannel, cb: &Codebook, opts: &SimOptions) -> Result<SimReport> {
    let s = classical_setup(bc, cb)?;
    let delta = default_delta(cb.n, opts.delta);
    let pgm = if opts.decoder == Decoder::PrettyGood { Some(cq_setup(bc, cb, delta)?) } else { None };
    if pgm.is_some() && opts.codebook_per_trial {
        return Err(Error::InvalidParameter("per-trial codebooks are not supported with pretty-good measurements".into()));
    }
    let outs: Vec<Outcome> = (0..opts.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(opts.seed, t as u64);
            if opts.codebook_per_trial {
                let fresh = cb.redraw(&mut stream_rng(cb.seed, t as u64));
                classical_trial(&fresh, &s, None, opts.decoder, delta, &mut rng)
            } else {
                classical_trial(cb, &s, pgm.as_ref(), opts.decoder, delta, &mut rng)
            }
        })
        .collect();
    Ok(SimReport::from_outcomes(cb, opts.trials, opts.decoder, delta, opts.seed, &outs))
}

/// Per-letter eigen-decomposition of a state.
struct Spectrum {
    vals: Vec<f64>,
    vecs: CMatrix,
}

fn spectrum(rho: &CMatrix) -> Spectrum {
    let (vals, vecs) = linalg::hermitian_eigen(rho);
    Spectrum { vals, vecs }
}

/// Projector onto products of eigenvectors whose sample entropy is within
/// `delta` of `target`; `letters[i]` is the spectrum used at position `i`.
fn typical_projector(letters: &[&Spectrum], target: f64, delta: f64) -> CMatrix {
    let dims: Vec<usize> = letters.iter().map(|s| s.vals.len()).collect();
    let total: usize = dims.iter().product();
    let n = letters.len() as f64;
    let mut cols: Vec<CVector> = Vec::new();
    for idx in 0..total {
        let digits = linalg::digits(idx, &dims);
        let mut sample = 0.0;
        let mut ok = true;
        for (s, &k) in letters.iter().zip(&digits) {
            let l = s.vals[k];
            if l <= linalg::EIGEN_FLOOR {
                ok = false;
                break;
            }
            sample -= l.log2();
        }
        if ok && (sample / n - target).abs() <= delta {
            let mut v = CVector::from_element(1, linalg::ONE);
            for (s, &k) in letters.iter().zip(&digits) {
                v = linalg::kron_vec(&v, &s.vecs.column(k).into_owned());
            }
            cols.push(v);
        }
    }
    let mut p = CMatrix::zeros(total, total);
    for v in cols {
        p += &v * v.adjoint();
    }
    p
}

fn kron_all(ms: &[&CMatrix]) -> CMatrix {
    ms.iter().fold(CMatrix::from_element(1, 1, linalg::ONE), |acc, m| linalg::kron(&acc, m))
}

/// Square-root measurement for `{S_a}`; the last element is the remainder
/// `I - sum`.
fn pretty_good(ops: &[CMatrix]) -> Vec<CMatrix> {
    let d = ops[0].nrows();
    let mut t = CMatrix::zeros(d, d);
    for s in ops {
        t += s;
    }
    let inv = linalg::psd_inv_sqrt(&linalg::hermitize(&t), 1e-12);
    let mut out: Vec<CMatrix> = ops.iter().map(|s| linalg::hermitize(&(&inv * s * &inv))).collect();
    let mut rest = linalg::identity(d);
    for m in &out {
        rest -= m;
    }
    out.push(linalg::hermitize(&rest));
    out
}

/// `Tr_{B1^n}[(L (x) I) rho_1 (x) ... (x) rho_n]` with each `rho_i` on
/// `B1 B2`, contracted one letter at a time.
fn conditional_b2(l: &CMatrix, rhos: &[&CMatrix], d1: usize, d2: usize) -> CMatrix {
    let n = rhos.len();
    // tensor over letters; letter slot holds a pair (k, j) of B1 indices
    // (dimension d1^2) or, once contracted, a pair (j', k') of B2 indices
    let mut dims = vec![d1 * d1; n];
    let d1n = d1.pow(n as u32);
    let mut t: Vec<linalg::C64> = Vec::with_capacity(d1n * d1n);
    for idx in 0..d1n * d1n {
        let digits = linalg::digits(idx, &dims);
        let (mut k, mut j) = (0, 0);
        for &p in &digits {
            k = k * d1 + p / d1;
            j = j * d1 + p % d1;
        }
        t.push(l[(k, j)]);
    }
    for (i, rho) in rhos.iter().enumerate() {
        let left: usize = dims[..i].iter().product();
        let right: usize = dims[i + 1..].iter().product();
        let mut next = vec![linalg::ZERO; left * d2 * d2 * right];
        for p in 0..d1 * d1 {
            let (k, j) = (p / d1, p % d1);
            for q in 0..d2 * d2 {
                let (jp, kp) = (q / d2, q % d2);
                let r = rho[(j * d2 + jp, k * d2 + kp)];
                if r == linalg::ZERO {
                    continue;
                }
                for a in 0..left {
                    for b in 0..right {
                        next[(a * d2 * d2 + q) * right + b] += t[(a * d1 * d1 + p) * right + b] * r;
                    }
                }
            }
        }
        t = next;
        dims[i] = d2 * d2;
    }
    let d2n = d2.pow(n as u32);
    let mut out = CMatrix::zeros(d2n, d2n);
    for (idx, &v) in t.iter().enumerate() {
        let digits = linalg::digits(idx, &dims);
        let (mut jp, mut kp) = (0, 0);
        for &q in &digits {
            jp = jp * d2 + q / d2;
            kp = kp * d2 + q % d2;
        }
        out[(jp, kp)] = v;
    }
    out
}

struct CqSetup {
    /// `N(|x><x|)` on `B1 B2` per input symbol.
    joint: Vec<CMatrix>,
    b1: Vec<CMatrix>,
    bob1: Vec<CMatrix>,
    /// PGM per bin.
    bob2: Vec<Vec<CMatrix>>,
    d1: usize,
    d2: usize,
}

fn cq_setup(bc: &BroadcastChannel, cb: &Codebook, delta: f64) -> Result<CqSetup> {
    let (d1, d2) = (bc.d1(), bc.d2());
    if cb.n > MAX_CQ_BLOCK || d1 > 2 || d2 > 2 {
        return Err(Error::ResourceGuard(format!("cq simulation needs n <= {MAX_CQ_BLOCK} and qubit outputs")));
    }
    if cb.card1 != bc.in_dim() {
        return Err(Error::DimensionMismatch { expected: bc.in_dim(), found: cb.card1 });
    }
    let inputs: Vec<CMatrix> = (0..cb.card1).map(|x| linalg::projector(&linalg::basis_vector(cb.card1, x))).collect();
    let joint: Vec<CMatrix> = inputs.iter().map(|r| bc.channel().apply_matrix(r)).collect();
    let b1: Vec<CMatrix> = inputs.iter().map(|r| bc.marginal(1).apply_matrix(r)).collect();
    let b2: Vec<CMatrix> = inputs.iter().map(|r| bc.marginal(2).apply_matrix(r)).collect();
    let p0 = cb.p0();
    let px1: Vec<f64> = (0..cb.card1).map(|x| (0..cb.card0).map(|a| cb.pmf[a * cb.card1 + x]).sum()).collect();
    let avg = |states: &[CMatrix], p: &[f64]| -> CMatrix {
        states.iter().zip(p).fold(CMatrix::zeros(states[0].nrows(), states[0].nrows()), |acc, (s, &q)| acc + s * c(q, 0.0))
    };
    let ent = |m: &CMatrix| linalg::entropy_bits(m);

    // Bob 1: codeword projectors for x1^n(m0, m1)
    let s1: Vec<Spectrum> = b1.iter().map(spectrum).collect();
    let h_b1_given_x: f64 = px1.iter().zip(&b1).map(|(&p, s)| p * ent(s)).sum();
    let avg1 = avg(&b1, &px1);
    let sa1 = spectrum(&avg1);
    let pi1 = typical_projector(&vec![&sa1; cb.n], ent(&avg1), delta);
    let mut ops1 = Vec::with_capacity(cb.x1_words.len());
    for w in &cb.x1_words {
        let letters: Vec<&Spectrum> = w.iter().map(|&x| &s1[x as usize]).collect();
        let pc = typical_projector(&letters, h_b1_given_x, delta);
        ops1.push(&pi1 * pc * &pi1);
    }
    let bob1 = pretty_good(&ops1);

    // Bob 2: cloud-center projectors for x0^n(m0), states averaged over x1
    let b2_given_x0: Vec<CMatrix> = (0..cb.card0)
        .map(|a| {
            let cond: Vec<f64> =
                (0..cb.card1).map(|x| if p0[a] > 0.0 { cb.pmf[a * cb.card1 + x] / p0[a] } else { 0.0 }).collect();
            avg(&b2, &cond)
        })
        .collect();
    let s2: Vec<Spectrum> = b2_given_x0.iter().map(spectrum).collect();
    let h_b2_given_x0: f64 = p0.iter().zip(&b2_given_x0).map(|(&p, s)| p * ent(s)).sum();
    let avg2 = avg(&b2, &px1);
    let sa2 = spectrum(&avg2);
    let pi2 = typical_projector(&vec![&sa2; cb.n], ent(&avg2), delta);
    let ops2: Vec<CMatrix> = cb
        .x0_words
        .iter()
        .map(|w| {
            let letters: Vec<&Spectrum> = w.iter().map(|&a| &s2[a as usize]).collect();
            &pi2 * typical_projector(&letters, h_b2_given_x0, delta) * &pi2
        })
        .collect();
    let bob2 = (0..cb.bins()).map(|g| pretty_good(&ops2[cb.bin(g)])).collect();
    Ok(CqSetup { joint, b1, bob1, bob2, d1, d2 })
}

fn born<R: Rng>(povm: &[CMatrix], rho: &CMatrix, rng: &mut R) -> usize {
    // Tr(M rho) for Hermitian rho
    let p: Vec<f64> = povm.iter().map(|m| rho.dotc(m).re.max(0.0)).collect();
    let total: f64 = p.iter().sum();
    let scaled: Vec<f64> = p.iter().map(|q| q / total).collect();
    sample_index(&scaled, rng)
}

fn cq_trial(cb: &Codebook, s: &CqSetup, delta: f64, rng: &mut ChaCha8Rng) -> Outcome {
    let (mc0, mc1) = (cb.m0_count(), cb.m1_count());
    let m0 = rng.random_range(0..mc0);
    let m1 = rng.random_range(0..mc1);
    let x = cb.x1(m0, m1);
    let rho1 = kron_all(&x.iter().map(|&xi| &s.b1[xi as usize]).collect::<Vec<_>>());
    let a = born(&s.bob1, &rho1, rng);
    let (hat0, hat1) = if a < mc0 * mc1 { (Some(a / mc1), Some(a % mc1)) } else { (None, None) };
    let g = hat0.map_or(0, |h| cb.bin_of(h));
    // Bob 2 measures what Bob 1's outcome leaves on B2^n
    let sigma = conditional_b2(&s.bob1[a], &x.iter().map(|&xi| &s.joint[xi as usize]).collect::<Vec<_>>(), s.d1, s.d2);
    let b = born(&s.bob2[g], &sigma, rng);
    let tilde = (b < cb.bin_size).then(|| cb.bin(g).start + b);
    Outcome {
        e1: !pair_typical(cb, m0, m1, delta / 2.0),
        e2: hat0 != Some(m0),
        e3: hat0 == Some(m0) && hat1 != Some(m1),
        e4: tilde != Some(m0),
        forward_violation: hat0 == Some(m0) && !cb.bin(g).contains(&m0),
    }
}

/// Classical input, quantum outputs: pretty-good measurements built from
/// typical projectors, Bob 1 first and Bob 2 on the post-measurement state.
pub fn simulate_cq(bc: &BroadcastChannel, cb: &Codebook, opts: &SimOptions) -> Result<SimReport> {
    let delta = default_delta(cb.n, opts.delta);
    let s = cq_setup(bc, cb, delta)?;
    let outs: Vec<Outcome> =
        (0..opts.trials).into_par_iter().map(|t| cq_trial(cb, &s, delta, &mut stream_rng(opts.seed, t as u64))).collect();
    Ok(SimReport::from_outcomes(cb, opts.trials, Decoder::PrettyGood, delta, opts.seed, &outs))
}

/// Error against block length for fixed rates; one codebook per `n`.
pub fn sweep_block_lengths(
    bc: &BroadcastChannel,
    card0: usize,
    card1: usize,
    pmf: &[f64],
    ns: &[usize],
    rates: [f64; 3],
    opts: &SimOptions,
) -> Result<Vec<SimReport>> {
    ns.iter()
        .map(|&n| {
            let cb = build_codebook(card0, card1, pmf, n, rates[0], rates[1], rates[2], opts.seed)?;
            if bc.classical_kernel().is_some() {
                simulate_classical(bc, &cb, opts)
            } else {
                simulate_cq(bc, &cb, opts)
            }
        })
        .collect()
}

pub fn sweep_csv(reports: &[SimReport]) -> String {
    let mut s = String::from("n,r0,r1,c12,trials,errors,empirical_error\n");
    for r in reports {
        s.push_str(&format!("{},{},{},{},{},{},{}\n", r.n, r.rates[0], r.rates[1], r.rates[2], r.trials, r.errors, r.empirical_error));
    }
    s
}
