//! Numerical discovery and counting of moment conditions.
//!
//! A weight vector `w` over the `4^T` continuations of one initial pair is a
//! valid moment condition when `sum_s w_s p_s(alpha) = 0` for every fixed
//! effect. Multiplying every sequence probability by the product of the
//! transition denominators it lacks puts all `p_s` over one common
//! denominator, so the condition becomes a polynomial identity in `u = e^alpha`
//! (or in `(u1, u2)` without the restriction): `C w = 0`, where column `s` of
//! `C` holds the coefficients of the cleared numerator of sequence `s`.
//!
//! Ranks of `C` are decided exactly over the prime field `F_p`,
//! `p = 2^61 - 1`, at random parameter values (`G_ij = e^g_ij`, `P = e^rho`,
//! `K = e^kappa`, `e^(x beta)` are all replaced by field elements). A rank
//! over `F_p` at a random point equals the generic rank except with
//! negligible probability, and the count is repeated with a second seed. A
//! floating-point path based on singular values is kept for extracting real
//! bases and for cross-checking small configurations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{enumerate_sequences, sequence_prob, CommonParams, CovariatePath, FixedEffects, Pair, PairSequence};

const MODULUS: u64 = (1 << 61) - 1;

/// Element of `F_p` with `p = 2^61 - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Fp(u64);

impl Fp {
    pub fn new(v: u64) -> Self {
        Fp(v % MODULUS)
    }

    pub fn from_i64(v: i64) -> Self {
        if v >= 0 {
            Fp::new(v as u64)
        } else {
            Fp(0) - Fp::new(v.unsigned_abs())
        }
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn pow(self, mut e: u64) -> Self {
        let mut base = self;
        let mut acc = Fp(1);
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }

    pub fn powi(self, e: i64) -> Self {
        if e >= 0 {
            self.pow(e as u64)
        } else {
            self.inverse().pow(e.unsigned_abs())
        }
    }

    pub fn inverse(self) -> Self {
        debug_assert!(self.0 != 0);
        self.pow(MODULUS - 2)
    }

    fn random<R: Rng>(rng: &mut R) -> Self {
        Fp(rng.random_range(2..MODULUS - 1))
    }
}

impl Add for Fp {
    type Output = Fp;
    #[inline]
    fn add(self, o: Fp) -> Fp {
        let s = self.0 + o.0;
        Fp(if s >= MODULUS { s - MODULUS } else { s })
    }
}

impl Sub for Fp {
    type Output = Fp;
    #[inline]
    fn sub(self, o: Fp) -> Fp {
        Fp(if self.0 >= o.0 { self.0 - o.0 } else { self.0 + MODULUS - o.0 })
    }
}

impl Mul for Fp {
    type Output = Fp;
    #[inline]
    fn mul(self, o: Fp) -> Fp {
        let x = self.0 as u128 * o.0 as u128;
        let r = (x as u64 & MODULUS) + (x >> 61) as u64;
        let r = (r & MODULUS) + (r >> 61);
        Fp(if r >= MODULUS { r - MODULUS } else { r })
    }
}

/// Ring operations the coefficient matrix is built from.
pub trait Scalar: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + PartialEq {
    fn zero() -> Self;
    fn one() -> Self;
}

impl Scalar for Fp {
    fn zero() -> Self {
        Fp(0)
    }
    fn one() -> Self {
        Fp(1)
    }
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
}

/// Parameters in multiplicative form: `g = e^gamma`, `p = e^rho`,
/// `k = e^kappa`, and per-period `w[s][t - 1] = e^(x_st' beta_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultParams<S> {
    pub g: [S; 4],
    pub p: S,
    pub k: S,
    pub w: Option<[Vec<S>; 2]>,
}

impl MultParams<f64> {
    pub fn from_common(params: &CommonParams, xpath: Option<&CovariatePath>) -> Result<Self> {
        let w = match xpath {
            Some(x) if x.dim() > 0 => {
                crate::error::check_len("covariate dimension", params.covariate_dim(), x.dim())?;
                let t = x.periods();
                let idx = |s: usize, i: usize| {
                    let (x1, x2) = x.row(i + 1);
                    if s == 0 {
                        libm::exp(crate::model::dot(&params.beta1, x1))
                    } else {
                        libm::exp(crate::model::dot(&params.beta2, x2))
                    }
                };
                Some([(0..t).map(|i| idx(0, i)).collect(), (0..t).map(|i| idx(1, i)).collect()])
            }
            _ => {
                if params.covariate_dim() > 0 {
                    return Err(Error::InvalidInput("covariate coefficients need a covariate path".into()));
                }
                None
            }
        };
        Ok(Self {
            g: params.gamma.to_array().map(libm::exp),
            p: libm::exp(params.rho),
            k: libm::exp(params.kappa),
            w,
        })
    }
}

/// Dense bivariate polynomial with coefficients `c[i * n2 + j]` of
/// `u1^i u2^j`.
#[derive(Debug, Clone)]
struct Poly<S> {
    n1: usize,
    n2: usize,
    c: Vec<S>,
}

impl<S: Scalar> Poly<S> {
    fn constant(v: S) -> Self {
        Self { n1: 1, n2: 1, c: vec![v] }
    }

    fn mul(&self, o: &Poly<S>) -> Poly<S> {
        let (n1, n2) = (self.n1 + o.n1 - 1, self.n2 + o.n2 - 1);
        let mut c = vec![S::zero(); n1 * n2];
        for i in 0..self.n1 {
            for j in 0..self.n2 {
                let a = self.c[i * self.n2 + j];
                if a == S::zero() {
                    continue;
                }
                for k in 0..o.n1 {
                    for l in 0..o.n2 {
                        let idx = (i + k) * n2 + j + l;
                        c[idx] = c[idx] + a * o.c[k * o.n2 + l];
                    }
                }
            }
        }
        Poly { n1, n2, c }
    }

    fn monomial(d1: usize, d2: usize, v: S) -> Self {
        let mut c = vec![S::zero(); (d1 + 1) * (d2 + 1)];
        c[d1 * (d2 + 1) + d2] = v;
        Poly { n1: d1 + 1, n2: d2 + 1, c }
    }
}

fn pow_bits<S: Scalar>(base: S, bit: u8) -> S {
    if bit == 1 {
        base
    } else {
        S::one()
    }
}

/// Coefficient matrix: one row per monomial of the cleared numerators, one
/// column per continuation (in continuation-code order).
pub fn coefficient_matrix<S: Scalar>(t: usize, restricted: bool, initial: Pair, mp: &MultParams<S>) -> Vec<Vec<S>> {
    // exponentiated indices (without the effect) of a transition at period s
    let ez = |s: usize, prev: Pair| -> (S, S) {
        let mut e1 = pow_bits(mp.g[0], prev.0) * pow_bits(mp.g[1], prev.1);
        let mut e2 = pow_bits(mp.g[2], prev.0) * pow_bits(mp.g[3], prev.1);
        if let Some(w) = &mp.w {
            e1 = e1 * w[0][s - 1];
            e2 = e2 * w[1][s - 1];
        }
        if restricted {
            e2 = e2 * mp.k;
        }
        (e1, e2)
    };
    // 1 + e1 u1 + e2 u2 + e1 e2 P u1 u2, or its restricted form in u alone
    let denom = |s: usize, prev: Pair| -> Poly<S> {
        let (e1, e2) = ez(s, prev);
        if restricted {
            Poly {
                n1: 3,
                n2: 1,
                c: vec![S::one(), e1 + e2, e1 * e2 * mp.p],
            }
        } else {
            Poly {
                n1: 2,
                n2: 2,
                c: vec![S::one(), e2, e1, e1 * e2 * mp.p],
            }
        }
    };
    let states: [Pair; 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];
    let denoms: Vec<[Poly<S>; 4]> = (0..=t)
        .map(|s| states.map(|st| if s >= 2 { denom(s, st) } else { Poly::constant(S::one()) }))
        .collect();

    let cols: Vec<Poly<S>> = enumerate_sequences(t, initial)
        .iter()
        .map(|seq| {
            let mut coef = S::one();
            let (mut d1, mut d2) = (0usize, 0usize);
            for s in 1..=t {
                let (e1, e2) = ez(s, seq.at(s - 1));
                let (c, d) = seq.at(s);
                coef = coef * pow_bits(e1, c) * pow_bits(e2, d) * pow_bits(mp.p, c & d);
                if restricted {
                    d1 += (c + d) as usize;
                } else {
                    d1 += c as usize;
                    d2 += d as usize;
                }
            }
            let mut poly = Poly::monomial(d1, d2, coef);
            for s in 2..=t {
                let prev = seq.at(s - 1);
                for (i, st) in states.iter().enumerate() {
                    if *st != prev {
                        poly = poly.mul(&denoms[s][i]);
                    }
                }
            }
            poly
        })
        .collect();

    let n1 = cols.iter().map(|p| p.n1).max().unwrap_or(1);
    let n2 = cols.iter().map(|p| p.n2).max().unwrap_or(1);
    let mut rows = vec![vec![S::zero(); cols.len()]; n1 * n2];
    for (j, p) in cols.iter().enumerate() {
        for a in 0..p.n1 {
            for b in 0..p.n2 {
                rows[a * n2 + b][j] = p.c[a * p.n2 + b];
            }
        }
    }
    rows.retain(|r| r.iter().any(|v| *v != S::zero()));
    rows
}

/// Basis of the right null space over `F_p`, as column vectors.
pub fn nullspace_fp(rows: &[Vec<Fp>], cols: usize) -> Vec<Vec<Fp>> {
    let mut m: Vec<Vec<Fp>> = rows.to_vec();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let Some(piv) = (r..m.len()).find(|&i| m[i][c] != Fp(0)) else {
            continue;
        };
        m.swap(r, piv);
        let inv = m[r][c].inverse();
        for v in m[r].iter_mut() {
            *v = *v * inv;
        }
        let pivot_row = m[r].clone();
        for (i, row) in m.iter_mut().enumerate() {
            if i != r && row[c] != Fp(0) {
                let f = row[c];
                for (x, p) in row.iter_mut().zip(&pivot_row) {
                    *x = *x - f * *p;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == m.len() {
            break;
        }
    }
    let mut is_pivot = vec![false; cols];
    for &c in &pivots {
        is_pivot[c] = true;
    }
    (0..cols)
        .filter(|&f| !is_pivot[f])
        .map(|f| {
            let mut v = vec![Fp(0); cols];
            v[f] = Fp(1);
            for (i, &pc) in pivots.iter().enumerate() {
                v[pc] = Fp(0) - m[i][f];
            }
            v
        })
        .collect()
}

fn mat_mul_basis_fp(rows: &[Vec<Fp>], basis: &[Vec<Fp>]) -> Vec<Vec<Fp>> {
    rows.iter()
        .map(|r| {
            basis
                .iter()
                .map(|b| r.iter().zip(b).fold(Fp(0), |acc, (x, y)| acc + *x * *y))
                .collect()
        })
        .collect()
}

/// `N <- N Z` with `Z` the null space of `C N`: the intersection of the
/// current space with the null space of another coefficient matrix.
fn intersect_fp(basis: &[Vec<Fp>], rows: &[Vec<Fp>]) -> Vec<Vec<Fp>> {
    if basis.is_empty() {
        return Vec::new();
    }
    let cn = mat_mul_basis_fp(rows, basis);
    let z = nullspace_fp(&cn, basis.len());
    let n = basis[0].len();
    z.iter()
        .map(|zc| {
            let mut v = vec![Fp(0); n];
            for (b, &coef) in basis.iter().zip(zc) {
                if coef != Fp(0) {
                    for (x, y) in v.iter_mut().zip(b) {
                        *x = *x + coef * *y;
                    }
                }
            }
            v
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankMethod {
    /// Exact ranks over `F_p`.
    #[default]
    Exact,
    /// Singular values with a relative cutoff and a gap check.
    Float,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountConfig {
    pub t: usize,
    pub restricted: bool,
    pub with_covariates: bool,
    pub initial: Pair,
    /// Parameter draws are added until the intersection has not shrunk for
    /// `stable_draws` consecutive draws, with at least `min_draws` draws.
    pub min_draws: usize,
    pub stable_draws: usize,
    pub max_draws: usize,
    /// Relative singular-value cutoff of the float path.
    pub rank_tol: f64,
    pub method: RankMethod,
    /// Repeat the count with a second seed and require agreement.
    pub confirm: bool,
}

impl CountConfig {
    pub fn new(t: usize, restricted: bool, with_covariates: bool) -> Self {
        Self {
            t,
            restricted,
            with_covariates,
            initial: (0, 1),
            min_draws: 5,
            stable_draws: 3,
            max_draws: 400,
            rank_tol: 1e-8,
            method: RankMethod::Exact,
            confirm: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.t) {
            return Err(Error::InvalidInput(format!("T = {} is outside the supported range 1..=6", self.t)));
        }
        if self.initial.0 > 1 || self.initial.1 > 1 {
            return Err(Error::InvalidInput("initial outcomes must be 0 or 1".into()));
        }
        if !(self.rank_tol > 0.0 && self.rank_tol < 1.0) {
            return Err(Error::InvalidInput("rank_tol must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountReport {
    pub n_tot: usize,
    pub n_para: usize,
    pub n_rho: usize,
    pub draws_para: usize,
    pub draws_rho: usize,
    /// Float path only: smallest ratio between the singular values on either
    /// side of the cutoff over all rank decisions.
    pub min_gap: Option<f64>,
}

impl fmt::Display for CountReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {} / {}", self.n_tot, self.n_para, self.n_rho)
    }
}

/// Distinct nonzero covariate values of one scalar regressor per spouse and
/// period, held fixed across parameter draws.
fn covariate_exponents(t: usize, rng: &mut ChaCha8Rng) -> [Vec<i64>; 2] {
    let mut used = Vec::new();
    let mut one = || -> Vec<i64> {
        (0..t)
            .map(|_| loop {
                let v: i64 = rng.random_range(-60..=60);
                if v != 0 && !used.contains(&v) {
                    used.push(v);
                    break v;
                }
            })
            .collect()
    };
    let a = one();
    let b = one();
    [a, b]
}

struct FpDraws {
    rng: ChaCha8Rng,
    x: Option<[Vec<i64>; 2]>,
}

impl FpDraws {
    fn new(seed: u64, t: usize, with_covariates: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = with_covariates.then(|| covariate_exponents(t, &mut rng));
        Self { rng, x }
    }

    fn draw(&mut self) -> (MultParams<Fp>, [Fp; 2]) {
        let g = [(); 4].map(|_| Fp::random(&mut self.rng));
        let p = Fp::random(&mut self.rng);
        let k = Fp::random(&mut self.rng);
        let b = [Fp::random(&mut self.rng), Fp::random(&mut self.rng)];
        (self.with_b(g, p, k, b), b)
    }

    fn with_b(&self, g: [Fp; 4], p: Fp, k: Fp, b: [Fp; 2]) -> MultParams<Fp> {
        let w = self
            .x
            .as_ref()
            .map(|x| [0, 1].map(|s| x[s].iter().map(|&e| b[s].powi(e)).collect::<Vec<_>>()));
        MultParams { g, p, k, w }
    }
}

fn count_exact(config: &CountConfig, seed: u64) -> Result<CountReport> {
    let (t, r, init) = (config.t, config.restricted, config.initial);
    let ncols = 1usize << (2 * t);
    let mut draws = FpDraws::new(seed, t, config.with_covariates);
    let (base, _) = draws.draw();
    let c0 = coefficient_matrix(t, r, init, &base);
    let null0 = nullspace_fp(&c0, ncols);
    let n_tot = null0.len();

    let shrink = |mut basis: Vec<Vec<Fp>>, draws: &mut FpDraws, only_rho: bool| -> Result<(usize, usize)> {
        let mut stable = 0;
        let mut used = 0;
        while !basis.is_empty() && (used < config.min_draws || stable < config.stable_draws) {
            if used == config.max_draws {
                return Err(Error::AmbiguousRank {
                    what: "moment count",
                    detail: format!("intersection still shrinking after {used} parameter draws"),
                });
            }
            let mp = if only_rho {
                MultParams {
                    p: Fp::random(&mut draws.rng),
                    ..base.clone()
                }
            } else {
                draws.draw().0
            };
            let before = basis.len();
            basis = intersect_fp(&basis, &coefficient_matrix(t, r, init, &mp));
            stable = if basis.len() == before { stable + 1 } else { 0 };
            used += 1;
        }
        Ok((basis.len(), used))
    };
    let (common_para, draws_para) = shrink(null0.clone(), &mut draws, false)?;
    let (common_rho, draws_rho) = shrink(null0, &mut draws, true)?;
    Ok(CountReport {
        n_tot,
        n_para: n_tot - common_para,
        n_rho: n_tot - common_rho,
        draws_para,
        draws_rho,
        min_gap: None,
    })
}

/// Float draws: `gamma` uniform in `[-1, 1]^4`, `rho`, `kappa` and covariate
/// coefficients uniform in `[-1, 1]`, covariates standard-normal-like values
/// in `[-1, 1]`.
struct FloatDraws {
    rng: ChaCha8Rng,
    x: Option<[Vec<f64>; 2]>,
}

impl FloatDraws {
    fn new(seed: u64, t: usize, with_covariates: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = with_covariates
            .then(|| [0, 1].map(|_| (0..t).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>()));
        Self { rng, x }
    }

    fn u(&mut self) -> f64 {
        self.rng.random_range(-1.0..1.0)
    }

    fn draw(&mut self) -> MultParams<f64> {
        let g = [(); 4].map(|_| libm::exp(self.u()));
        let p = libm::exp(self.u());
        let k = libm::exp(self.u());
        let b = [self.u(), self.u()];
        let w = self
            .x
            .as_ref()
            .map(|x| [0, 1].map(|s| x[s].iter().map(|v| libm::exp(v * b[s])).collect::<Vec<_>>()));
        MultParams { g, p, k, w }
    }
}

struct FloatRank {
    tol: f64,
    min_gap: f64,
}

impl FloatRank {
    /// Orthonormal null-space basis (columns of the result) of `m`, with
    /// singular values measured relative to `scale` (the largest singular
    /// value of `m` when `None`).
    fn nullspace(&mut self, m: &DMatrix<f64>, scale: Option<f64>) -> Result<DMatrix<f64>> {
        let (r, c) = m.shape();
        let mut a = DMatrix::<f64>::zeros(r.max(c), c);
        a.view_mut((0, 0), (r, c)).copy_from(m);
        let svd = a.svd(false, true);
        let v_t = svd.v_t.ok_or(Error::Singular("singular value decomposition failed"))?;
        let sv = &svd.singular_values;
        let smax = scale.unwrap_or_else(|| sv.iter().copied().fold(0.0, f64::max));
        let mut keep = Vec::new();
        let mut kept_min = f64::INFINITY;
        let mut dropped_max: f64 = 0.0;
        for (i, s) in sv.iter().enumerate() {
            let rel = if smax > 0.0 { s / smax } else { 0.0 };
            if rel > self.tol / 10.0 && rel < self.tol * 10.0 {
                return Err(Error::AmbiguousRank {
                    what: "singular values",
                    detail: format!("relative singular value {rel:e} is within 10x of the cutoff {:e}", self.tol),
                });
            }
            if rel > self.tol {
                kept_min = kept_min.min(rel);
            } else {
                dropped_max = dropped_max.max(rel);
                keep.push(i);
            }
        }
        if kept_min.is_finite() && dropped_max > 0.0 {
            self.min_gap = self.min_gap.min(kept_min / dropped_max);
        }
        let mut out = DMatrix::<f64>::zeros(c, keep.len());
        for (k, &i) in keep.iter().enumerate() {
            for j in 0..c {
                out[(j, k)] = v_t[(i, j)];
            }
        }
        Ok(out)
    }
}

/// Dense matrix with every row scaled to unit max-norm; the null space is
/// unchanged.
fn equilibrated(rows: &[Vec<f64>], cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols, |i, j| {
        let s = rows[i].iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if s > 0.0 {
            rows[i][j] / s
        } else {
            0.0
        }
    })
}

fn count_float(config: &CountConfig, seed: u64) -> Result<CountReport> {
    let (t, r, init) = (config.t, config.restricted, config.initial);
    let ncols = 1usize << (2 * t);
    let mut draws = FloatDraws::new(seed, t, config.with_covariates);
    let mut ranker = FloatRank {
        tol: config.rank_tol,
        min_gap: f64::INFINITY,
    };
    let base = draws.draw();
    let null0 = ranker.nullspace(&equilibrated(&coefficient_matrix(t, r, init, &base), ncols), None)?;
    let n_tot = null0.ncols();

    // Every draw's equilibrated matrix, restricted to the first null space,
    // is stacked and the whole stack is ranked at once. Ranking products
    // with a shrinking basis one draw at a time lets genuine directions
    // fade towards the noise floor.
    let mut shrink = |draws: &mut FloatDraws, only_rho: bool| -> Result<(usize, usize)> {
        let mut stack = DMatrix::<f64>::zeros(0, n_tot);
        let mut scale: f64 = 0.0;
        let mut common = n_tot;
        let mut stable = 0;
        let mut used = 0;
        while common > 0 && (used < config.min_draws || stable < config.stable_draws) {
            if used == config.max_draws {
                return Err(Error::AmbiguousRank {
                    what: "moment count",
                    detail: format!("intersection still shrinking after {used} parameter draws"),
                });
            }
            let mp = if only_rho {
                MultParams {
                    p: libm::exp(draws.u()),
                    ..base.clone()
                }
            } else {
                draws.draw()
            };
            let c = equilibrated(&coefficient_matrix(t, r, init, &mp), ncols);
            scale = scale.max(c.singular_values().max());
            let block = c * &null0;
            let old = stack.nrows();
            stack = stack.resize_vertically(old + block.nrows(), 0.0);
            stack.view_mut((old, 0), block.shape()).copy_from(&block);
            let next = ranker.nullspace(&stack, Some(scale))?.ncols();
            stable = if next == common { stable + 1 } else { 0 };
            common = next;
            used += 1;
        }
        Ok((common, used))
    };
    let (common_para, draws_para) = shrink(&mut draws, false)?;
    let (common_rho, draws_rho) = shrink(&mut draws, true)?;
    Ok(CountReport {
        n_tot,
        n_para: n_tot - common_para,
        n_rho: n_tot - common_rho,
        draws_para,
        draws_rho,
        min_gap: ranker.min_gap.is_finite().then_some(ranker.min_gap),
    })
}

/// `n_tot / n_para / n_rho` for one configuration.
///
/// `n_tot` is the dimension of the valid-moment space at one generic
/// parameter value. Moments whose weights do not depend on the parameters
/// lie in the null space at every draw; `n_para` is `n_tot` minus the
/// dimension of that intersection over draws of all parameters, and `n_rho`
/// the same over draws of `rho` alone.
pub fn count_moments(config: &CountConfig, seed: u64) -> Result<CountReport> {
    config.validate()?;
    let run = |s: u64| match config.method {
        RankMethod::Exact => count_exact(config, s),
        RankMethod::Float => count_float(config, s),
    };
    let first = run(seed)?;
    if config.confirm {
        let second = run(seed ^ 0x9e37_79b9_7f4a_7c15)?;
        if (first.n_tot, first.n_para, first.n_rho) != (second.n_tot, second.n_para, second.n_rho) {
            return Err(Error::AmbiguousRank {
                what: "moment count",
                detail: format!("two seeds disagree: {first} versus {second}"),
            });
        }
    }
    Ok(first)
}

/// Uniform draws of the fixed effects, `4 * 4^T` of them by default, over
/// `[-6, 6]` per free dimension. Restricted configurations set
/// `alpha2 = alpha1 + kappa`.
pub fn default_alpha_draws(t: usize, restricted: bool, kappa: f64, count: Option<usize>, seed: u64) -> Vec<FixedEffects> {
    let n = count.unwrap_or(4 << (2 * t));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a1 = rng.random_range(-6.0..6.0);
            if restricted {
                FixedEffects::restricted(a1, kappa)
            } else {
                FixedEffects::new(a1, rng.random_range(-6.0..6.0))
            }
        })
        .collect()
}

/// Sequence probabilities: one row per effect draw, one column per
/// continuation of `initial`.
pub fn probability_matrix(
    t: usize,
    initial: Pair,
    params: &CommonParams,
    xpath: Option<&CovariatePath>,
    effects: &[FixedEffects],
) -> Result<DMatrix<f64>> {
    let seqs = enumerate_sequences(t, initial);
    let mut m = DMatrix::<f64>::zeros(effects.len(), seqs.len());
    for (i, fe) in effects.iter().enumerate() {
        for (j, s) in seqs.iter().enumerate() {
            m[(i, j)] = sequence_prob(params, *fe, xpath, s)?;
        }
    }
    Ok(m)
}

/// Rank of the coefficient matrix at a random point of `F_p`, which is its
/// generic rank with overwhelming probability.
pub fn generic_rank(t: usize, restricted: bool, with_covariates: bool, initial: Pair, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = || Fp::random(&mut rng);
    let g = [r(), r(), r(), r()];
    let (p, k) = (r(), r());
    let w = with_covariates.then(|| [(0..t).map(|_| r()).collect(), (0..t).map(|_| r()).collect()]);
    let mp = MultParams { g, p, k, w };
    (1usize << (2 * t)) - nullspace_fp(&coefficient_matrix(t, restricted, initial, &mp), 1 << (2 * t)).len()
}

/// Smallest acceptable ratio between the last retained singular value and
/// the first discarded one when extracting a basis.
pub const MIN_BASIS_GAP: f64 = 1e4;

/// Orthonormal basis (columns) of the valid moment weights at `params`,
/// for the configuration's `T`, restriction and initial pair.
///
/// The dimension comes from the exact generic rank; the singular value
/// decomposition supplies the vectors, and a weak spectral gap at the
/// implied cut is an error.
pub fn extract_moment_basis(
    config: &CountConfig,
    params: &CommonParams,
    xpath: Option<&CovariatePath>,
) -> Result<DMatrix<f64>> {
    config.validate()?;
    let mp = MultParams::from_common(params, xpath)?;
    let ncols = 1usize << (2 * config.t);
    let rank = generic_rank(config.t, config.restricted, mp.w.is_some(), config.initial, 17);
    if rank == ncols {
        return Err(Error::NoInformation("no valid moment conditions in this configuration".into()));
    }
    let c = equilibrated(&coefficient_matrix(config.t, config.restricted, config.initial, &mp), ncols);
    let mut a = DMatrix::<f64>::zeros(c.nrows().max(ncols), ncols);
    a.view_mut((0, 0), c.shape()).copy_from(&c);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::Singular("singular value decomposition failed"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = |k: usize| svd.singular_values[order[k]];
    let gap = if rank == 0 { f64::INFINITY } else { sv(rank - 1) / sv(rank).max(f64::MIN_POSITIVE) };
    if gap < MIN_BASIS_GAP {
        return Err(Error::AmbiguousRank {
            what: "moment basis",
            detail: format!("singular value gap {gap:e} at the generic rank {rank} is too small"),
        });
    }
    let dim = ncols - rank;
    Ok(DMatrix::from_fn(ncols, dim, |j, k| v_t[(order[rank + k], j)]))
}

/// Weight vector over continuations of a sequence-indexed moment.
pub fn weights_vector(t: usize, entries: &[(PairSequence, f64)]) -> Vec<f64> {
    let mut w = vec![0.0; 1usize << (2 * t)];
    for (s, v) in entries {
        w[s.continuation_code()] += v;
    }
    w
}
