//! Brute-force ground truth: the full `(C^d)^{⊗n}` space, dense quadrature
//! of the twirl integral, and Monte Carlo frame potentials.
//!
//! Nothing here goes through the sector-tuple machinery except where a
//! result is explicitly compared against it.

use std::f64::consts::PI;

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    norm, symmetric_eigen, symmetric_eigenvalues, LinearOperator, SparseMatrix, TensorShape,
};
use crate::moments::{
    step_channel, BlockOptions, Ensemble, Geometry, GeometryKind, IrrepCache, YjmConvention,
};
use crate::snpart::{dim_irrep, multiplicity, partitions, Partition};
use crate::spectra::enumerate_tuples;
use crate::yor::build_irrep;

/// Largest full space the oracle will build.
pub const FULL_SPACE_CAP: usize = 4096;

/// Permutation action on computational basis strings of `n` qudits.
///
/// Site 1 is the most significant digit. A permutation `σ` (images, 0-based)
/// moves the digit at site `i` to site `σ(i)`.
#[derive(Clone, Debug)]
pub struct FullSpaceModel {
    n: usize,
    d: usize,
    dim: usize,
}

impl FullSpaceModel {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        if n == 0 || d < 2 {
            return Err(Error::InvalidArgument(format!(
                "need n >= 1 and d >= 2, got n={n}, d={d}"
            )));
        }
        let dim = d
            .checked_pow(n as u32)
            .filter(|&v| v <= 1 << 24)
            .ok_or_else(|| Error::SizeCap(format!("{d}^{n} basis states")))?;
        Ok(Self { n, d, dim })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_perm(&self, perm: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.n];
        if perm.len() != self.n {
            return Err(Error::InvalidArgument(format!(
                "permutation of length {} on {} sites",
                perm.len(),
                self.n
            )));
        }
        for &p in perm {
            if p >= self.n || seen[p] {
                return Err(Error::InvalidArgument(format!(
                    "{perm:?} is not a permutation"
                )));
            }
            seen[p] = true;
        }
        Ok(())
    }

    /// `map[x]` is the basis state `π(σ)` sends `x` to.
    pub fn index_map(&self, perm: &[usize]) -> Result<Vec<usize>> {
        self.check_perm(perm)?;
        let mut digits = vec![0; self.n];
        let mut out = vec![0; self.n];
        Ok((0..self.dim)
            .map(|x| {
                let mut r = x;
                for i in (0..self.n).rev() {
                    digits[i] = r % self.d;
                    r /= self.d;
                }
                for i in 0..self.n {
                    out[perm[i]] = digits[i];
                }
                out.iter().fold(0, |acc, &v| acc * self.d + v)
            })
            .collect())
    }

    pub fn permutation_matrix(&self, perm: &[usize]) -> Result<SparseMatrix> {
        let map = self.index_map(perm)?;
        Ok(SparseMatrix::from_triplets(
            self.dim,
            map.iter().enumerate().map(|(x, &y)| (y, x, 1.0)).collect(),
        ))
    }

    /// Transposition of sites `i` and `j` (1-based) as an image list.
    pub fn transposition(&self, i: usize, j: usize) -> Result<Vec<usize>> {
        if i == 0 || j == 0 || i > self.n || j > self.n || i == j {
            return Err(Error::IndexOutOfRange {
                index: i.max(j),
                min: 1,
                max: self.n,
            });
        }
        let mut p: Vec<usize> = (0..self.n).collect();
        p.swap(i - 1, j - 1);
        Ok(p)
    }

    /// Number of random pairs `(σ, τ)` with `π(στ) != π(σ)π(τ)`, plus any
    /// sampled `π(σ)` that is not a 0/1 matrix with one entry per row.
    pub fn homomorphism_failures(&self, samples: usize, seed: u64) -> Result<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut failures = 0;
        for _ in 0..samples {
            let s = random_permutation(self.n, &mut rng);
            let t = random_permutation(self.n, &mut rng);
            let st: Vec<usize> = (0..self.n).map(|i| s[t[i]]).collect();
            let (ms, mt, mst) = (
                self.index_map(&s)?,
                self.index_map(&t)?,
                self.index_map(&st)?,
            );
            let composed = (0..self.dim).all(|x| mst[x] == ms[mt[x]]);
            let mat = self.permutation_matrix(&s)?;
            let unit_rows = (0..self.dim).all(|r| {
                let row: Vec<_> = mat.row(r).collect();
                row.len() == 1 && row[0].1 == 1.0
            });
            if !composed || !unit_rows {
                failures += 1;
            }
        }
        Ok(failures)
    }
}

fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.random_range(0..=i));
    }
    p
}

/// All permutations of `0..n` in lexicographic order.
fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        f(&p);
        let Some(i) = (0..n.saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else {
            return;
        };
        let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).unwrap();
        p.swap(i, j);
        p[i + 1..].reverse();
    }
}

fn cycle_type(perm: &[usize]) -> Vec<usize> {
    let mut seen = vec![false; perm.len()];
    let mut lens = Vec::new();
    for start in 0..perm.len() {
        let mut len = 0;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = perm[i];
            len += 1;
        }
        if len > 0 {
            lens.push(len);
        }
    }
    lens.sort_unstable_by(|a, b| b.cmp(a));
    lens
}

/// Character of `λ` on a cycle type, read off the orthogonal-form matrices:
/// cycles on consecutive sites are products of consecutive adjacent
/// transpositions.
fn character(lambda: &Partition, cycles: &[usize]) -> Result<f64> {
    let rep = build_irrep(lambda, lambda.n())?;
    let mut m = SparseMatrix::identity(rep.dim());
    let mut site = 1;
    for &len in cycles {
        for j in site..site + len - 1 {
            m = m.matmul(rep.adjacent(j)?);
        }
        site += len;
    }
    Ok((0..rep.dim()).map(|i| m.get(i, i)).sum())
}

#[derive(Clone, Debug, Serialize)]
pub struct SectorCheck {
    pub shape: String,
    pub multiplicity: u64,
    pub irrep_dim: u64,
    /// Trace of the character-averaged isotypic projector.
    pub trace: f64,
    /// `‖P(Pv) - Pv‖` on a random unit `v`.
    pub idempotency_defect: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionReport {
    pub n: usize,
    pub d: usize,
    pub dim: usize,
    pub sectors: Vec<SectorCheck>,
    /// `Σ m_λ d_λ`.
    pub total: u64,
    /// `‖Σ_λ P_λ v - v‖`.
    pub completeness_defect: f64,
    pub passed: bool,
}

/// Isotypic decomposition of `(C^d)^{⊗n}` checked by brute force.
///
/// Each projector `P_λ = (d_λ/n!) Σ_σ χ_λ(σ) π(σ)` is built from the
/// permutation action; its trace must equal `m_λ d_λ`. Shapes with more
/// than `d` rows are included and must come out empty.
pub fn full_decomposition_check(n: usize, d: usize) -> Result<DecompositionReport> {
    let model = FullSpaceModel::new(n, d)?;
    if model.dim() > FULL_SPACE_CAP || n > 8 {
        return Err(Error::SizeCap(format!(
            "decomposition check needs d^n <= {FULL_SPACE_CAP} and n <= 8, got {d}^{n}"
        )));
    }
    let shapes = partitions(n, n);
    let mut table: std::collections::HashMap<Vec<usize>, Vec<f64>> = Default::default();
    for cycles in partitions(n, n) {
        let chars = shapes
            .iter()
            .map(|l| character(l, cycles.parts()))
            .collect::<Result<Vec<_>>>()?;
        table.insert(cycles.parts().to_vec(), chars);
    }
    let dims: Vec<f64> = shapes
        .iter()
        .map(|l| dim_irrep(l).map(|v| v as f64))
        .collect::<Result<_>>()?;
    let mut order = 1.0;
    for i in 2..=n {
        order *= i as f64;
    }

    let dim = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0dec_0a05_e000_0001);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() - 0.5).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    // One pass over S_n applies every projector to each input vector.
    let project = |inputs: &[Vec<f64>]| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut traces = vec![0.0; shapes.len()];
        let mut outs = vec![vec![0.0; dim]; shapes.len()];
        let mut err = None;
        for_each_permutation(n, |perm| {
            let map = match model.index_map(perm) {
                Ok(m) => m,
                Err(e) => {
                    err = Some(e);
                    return;
                }
            };
            let chars = &table[&cycle_type(perm)];
            let fixed = map.iter().enumerate().filter(|(x, &y)| *x == y).count() as f64;
            for (l, &chi) in chars.iter().enumerate() {
                if chi == 0.0 {
                    continue;
                }
                traces[l] += chi * fixed;
                let input = &inputs[l.min(inputs.len() - 1)];
                let out = &mut outs[l];
                for (x, &y) in map.iter().enumerate() {
                    out[y] += chi * input[x];
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        for (l, out) in outs.iter_mut().enumerate() {
            let scale = dims[l] / order;
            traces[l] *= scale;
            out.iter_mut().for_each(|x| *x *= scale);
        }
        Ok((traces, outs))
    };
    let (traces, pv) = project(std::slice::from_ref(&v))?;
    let (_, ppv) = project(&pv)?;

    let mut sum = vec![0.0; dim];
    for out in &pv {
        for (s, x) in sum.iter_mut().zip(out) {
            *s += x;
        }
    }
    let completeness_defect = norm(&sum.iter().zip(&v).map(|(a, b)| a - b).collect::<Vec<_>>());

    let mut sectors = Vec::new();
    let mut total = 0;
    let mut passed = completeness_defect < 1e-9;
    for (l, shape) in shapes.iter().enumerate() {
        let m = if shape.rows() <= d {
            multiplicity(shape, d)?
        } else {
            0
        };
        let f = dim_irrep(shape)?;
        let defect = norm(
            &ppv[l]
                .iter()
                .zip(&pv[l])
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        passed &= (traces[l] - (m * f) as f64).abs() < 1e-9 && defect < 1e-9;
        total += m * f;
        sectors.push(SectorCheck {
            shape: shape.to_string(),
            multiplicity: m,
            irrep_dim: f,
            trace: traces[l],
            idempotency_defect: defect,
        });
    }
    passed &= total == dim as u64;
    Ok(DecompositionReport {
        n,
        d,
        dim,
        sectors,
        total,
        completeness_defect,
        passed,
    })
}

fn kron_complex(a: &Mat<Complex64>, b: &Mat<Complex64>) -> Mat<Complex64> {
    let (ra, ca, rb, cb) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    Mat::from_fn(ra * rb, ca * cb, |i, j| {
        a[(i / rb, j / cb)] * b[(i % rb, j % cb)]
    })
}

fn check_involution(tau: &Mat<f64>) -> Result<()> {
    let n = tau.nrows();
    if tau.ncols() != n {
        return Err(Error::InvalidArgument("tau must be square".into()));
    }
    let sq = tau * tau;
    let defect = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (sq[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    if defect > 1e-10 {
        return Err(Error::InvalidArgument(format!(
            "tau is not involutive: ‖τ²-I‖ = {defect:.3e}"
        )));
    }
    Ok(())
}

/// Trapezoid rule for `(1/2π)∫ ⊗_ket e^{-itτ_f} ⊗_bra e^{+itτ_f} dt` with
/// `e^{-itτ} = cos t I - i sin t τ` for involutive factors.
pub fn twirl_quadrature_factors(
    ket: &[Mat<f64>],
    bra: &[Mat<f64>],
    steps: usize,
) -> Result<Mat<Complex64>> {
    if steps < 64 {
        return Err(Error::InvalidArgument(format!(
            "need at least 64 quadrature steps, got {steps}"
        )));
    }
    if ket.is_empty() && bra.is_empty() {
        return Err(Error::InvalidArgument("no factors".into()));
    }
    for t in ket.iter().chain(bra) {
        check_involution(t)?;
    }
    let dim: usize = ket.iter().chain(bra).map(|t| t.nrows()).product();
    let mut acc = Mat::<Complex64>::zeros(dim, dim);
    let i = Complex64::new(0.0, 1.0);
    for s in 0..steps {
        let t = 2.0 * PI * s as f64 / steps as f64;
        let (sin, cos) = t.sin_cos();
        let factor = |tau: &Mat<f64>, phase: Complex64| {
            Mat::from_fn(tau.nrows(), tau.ncols(), |r, c| {
                let id = if r == c { cos } else { 0.0 };
                Complex64::new(id, 0.0) + phase * sin * tau[(r, c)]
            })
        };
        let mut u = Mat::<Complex64>::from_fn(1, 1, |_, _| Complex64::new(1.0, 0.0));
        for tau in ket {
            u = kron_complex(&u, &factor(tau, -i));
        }
        for tau in bra {
            u = kron_complex(&u, &factor(tau, i));
        }
        acc += &u;
    }
    let w = Complex64::new(1.0 / steps as f64, 0.0);
    Ok(Mat::from_fn(dim, dim, |r, c| acc[(r, c)] * w))
}

/// [`twirl_quadrature_factors`] with the same `tau` on `k` ket and `k` bra copies.
pub fn twirl_quadrature(tau: &Mat<f64>, k: usize, steps: usize) -> Result<Mat<Complex64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let copies = vec![tau.clone(); k];
    twirl_quadrature_factors(&copies, &copies, steps)
}

/// Largest entrywise distance between a complex and a real matrix.
pub fn max_complex_deviation(a: &Mat<Complex64>, b: &Mat<f64>) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            dev = dev.max((a[(i, j)] - Complex64::new(b[(i, j)], 0.0)).norm());
        }
    }
    dev
}

/// `‖(1/d) Σ_P P ⊗ P† - Σ_ij E_ij ⊗ E_ji‖_max` over the generalized Pauli
/// basis `X^a Z^b`.
pub fn w12_identity_residual(d: usize) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("local dimension {d} < 2")));
    }
    let omega = |e: usize| Complex64::from_polar(1.0, 2.0 * PI * (e % d) as f64 / d as f64);
    // (X^a Z^b)[r][c] = ω^{bc} if r = c + a mod d.
    let pauli = |a: usize, b: usize, r: usize, c: usize| {
        if r == (c + a) % d {
            omega(b * c)
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let mut worst: f64 = 0.0;
    for i1 in 0..d {
        for i2 in 0..d {
            for j1 in 0..d {
                for j2 in 0..d {
                    let mut s = Complex64::new(0.0, 0.0);
                    for a in 0..d {
                        for b in 0..d {
                            s += pauli(a, b, i1, j1) * pauli(a, b, j2, i2).conj();
                        }
                    }
                    s /= d as f64;
                    let swap = if i1 == j2 && i2 == j1 { 1.0 } else { 0.0 };
                    worst = worst.max((s - swap).norm());
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
struct Compensated {
    sum: f64,
    carry: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Trace of a Haar-random `f × f` unitary: modified Gram–Schmidt on complex
/// Gaussian columns, which leaves the triangular factor with positive
/// diagonal.
fn haar_trace(f: usize, rng: &mut impl Rng) -> Complex64 {
    let mut gauss = || {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im)
    };
    let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(f);
    let mut trace = Complex64::new(0.0, 0.0);
    for j in 0..f {
        let mut v: Vec<Complex64> = (0..f).map(|_| gauss()).collect();
        for q in &cols {
            let c: Complex64 = q.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
        }
        let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.iter_mut().for_each(|z| *z /= nv);
        trace += v[j];
        cols.push(v);
    }
    trace
}

const MC_CHUNK: usize = 1 << 14;

/// Monte Carlo estimate of `E|tr U|^{2k}` for `U = ⊕_λ I_{m_λ} ⊗ e^{iφ_λ} V_λ`
/// on qubits, with independent uniform phases and Haar `V_λ` per sector.
///
/// Chunks of samples use independent streams of one ChaCha8 seed, so the
/// result does not depend on the thread count.
pub fn frame_potential_mc(n: usize, k: usize, samples: usize, seed: u64) -> Result<McEstimate> {
    if samples < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 samples, got {samples}"
        )));
    }
    if !(1..=8).contains(&n) || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "frame potential sampling needs 1 <= n <= 8 and k >= 1, got n={n}, k={k}"
        )));
    }
    let sectors: Vec<(f64, usize)> = partitions(n, 2)
        .iter()
        .map(|l| Ok((multiplicity(l, 2)? as f64, dim_irrep(l)? as usize)))
        .collect::<Result<_>>()?;
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<(Compensated, Compensated)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut s1 = Compensated::default();
            let mut s2 = Compensated::default();
            for _ in 0..count {
                let mut z = Complex64::new(0.0, 0.0);
                for &(m, f) in &sectors {
                    let phi = 2.0 * PI * rng.random::<f64>();
                    z += Complex64::from_polar(m, phi) * haar_trace(f, &mut rng);
                }
                let x = z.norm_sqr().powi(k as i32);
                s1.add(x);
                s2.add(x * x);
            }
            (s1, s2)
        })
        .collect();
    let mut s1 = Compensated::default();
    let mut s2 = Compensated::default();
    for (a, b) in &partial {
        s1.add(a.sum);
        s1.add(a.carry);
        s2.add(b.sum);
        s2.add(b.carry);
    }
    let count = samples as f64;
    let mean = s1.value() / count;
    let var = ((s2.value() - count * mean * mean) / (count - 1.0)).max(0.0);
    Ok(McEstimate {
        estimate: mean,
        stderr: (var / count).sqrt(),
        samples,
        seed,
    })
}

/// Quadrature coefficients of the twirl expansion over subsets of the `2k`
/// copies carrying `τ` (bit `f` set). Terms that vanish are dropped.
fn expansion_by_quadrature(k: usize) -> Result<Vec<(usize, f64)>> {
    const STEPS: usize = 1024;
    let copies = 2 * k;
    let mut out = Vec::new();
    for subset in 0..1usize << copies {
        let mut acc = Complex64::new(0.0, 0.0);
        for s in 0..STEPS {
            let t = 2.0 * PI * s as f64 / STEPS as f64;
            let (sin, cos) = t.sin_cos();
            let mut v = Complex64::new(1.0, 0.0);
            for f in 0..copies {
                v *= if subset >> f & 1 == 1 {
                    let sign = if f < k { -1.0 } else { 1.0 };
                    Complex64::new(0.0, sign * sin)
                } else {
                    Complex64::new(cos, 0.0)
                };
            }
            acc += v;
        }
        acc /= STEPS as f64;
        if acc.im.abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "twirl coefficient {acc} is not real"
            )));
        }
        if acc.re.abs() > 1e-14 {
            out.push((subset, acc.re));
        }
    }
    Ok(out)
}

/// The one-step swap channel on the full `d^{2nk}` space: every term is a
/// permutation of basis states, applied as an index shuffle.
struct FullSwapChannel {
    dim: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl LinearOperator for FullSwapChannel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for (c, map) in &self.terms {
            for (yi, &src) in y.iter_mut().zip(map) {
                *yi += c * x[src as usize];
            }
        }
    }
}

/// Diagonal second-order YJM twirl in a joint eigenbasis `V` of the
/// full-space YJM elements, applied as `V^{⊗2k} D V^{T⊗2k}`.
struct FullYjmTwirl {
    shape: TensorShape,
    v: SparseMatrix,
    vt: SparseMatrix,
    keep: Vec<bool>,
}

impl FullYjmTwirl {
    fn transform(&self, mat: &SparseMatrix, cur: &mut Vec<f64>, tmp: &mut Vec<f64>) {
        for mode in 0..self.shape.dims().len() {
            self.shape.apply_mode(mode, mat, cur, tmp);
            std::mem::swap(cur, tmp);
        }
    }
}

impl LinearOperator for FullYjmTwirl {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut cur = x.to_vec();
        let mut tmp = vec![0.0; cur.len()];
        self.transform(&self.vt, &mut cur, &mut tmp);
        for (c, &keep) in cur.iter_mut().zip(&self.keep) {
            if !keep {
                *c = 0.0;
            }
        }
        self.transform(&self.v, &mut cur, &mut tmp);
        y.copy_from_slice(&cur);
    }
}

struct Sandwich<'a> {
    outer: &'a dyn LinearOperator,
    inner: &'a dyn LinearOperator,
}

impl LinearOperator for Sandwich<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut a = vec![0.0; x.len()];
        let mut b = vec![0.0; x.len()];
        self.outer.apply(x, &mut a);
        self.inner.apply(&a, &mut b);
        self.outer.apply(&b, y);
    }
}

fn full_yjm_twirl(
    model: &FullSpaceModel,
    k: usize,
    convention: YjmConvention,
) -> Result<FullYjmTwirl> {
    let n = model.n();
    let dn = model.dim();
    // X_a = Σ_{i<a} (i a) on the single-copy space, densely.
    let mut xs = Vec::new();
    for a in 1..=n {
        let mut m = Mat::<f64>::zeros(dn, dn);
        for i in 1..a {
            let map = model.index_map(&model.transposition(i, a)?)?;
            for (x, &y) in map.iter().enumerate() {
                m[(y, x)] += 1.0;
            }
        }
        xs.push(m);
    }
    // A generic combination has the joint eigenspaces as eigenspaces.
    let weights: Vec<f64> = [
        2.0f64, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0,
    ]
    .iter()
    .map(|p| p.sqrt())
    .collect();
    let mut g = Mat::<f64>::zeros(dn, dn);
    for (a, x) in xs.iter().enumerate() {
        g += faer::Scale(weights[a % weights.len()] * (1.0 + a as f64 / 7.0)) * x;
    }
    let (_, v) = symmetric_eigen(&g)?;
    let mut contents = vec![vec![0i64; n]; dn];
    for col in 0..dn {
        let vc: Vec<f64> = (0..dn).map(|r| v[(r, col)]).collect();
        for (a, x) in xs.iter().enumerate() {
            let xv: Vec<f64> = (0..dn)
                .map(|r| (0..dn).map(|c| x[(r, c)] * vc[c]).sum())
                .collect();
            let rq: f64 = xv.iter().zip(&vc).map(|(p, q)| p * q).sum();
            let c = rq.round();
            let resid = norm(
                &xv.iter()
                    .zip(&vc)
                    .map(|(p, q)| p - c * q)
                    .collect::<Vec<_>>(),
            );
            if resid > 1e-8 {
                return Err(Error::Eigensolver(format!(
                    "YJM joint eigenvector residual {resid:.3e}"
                )));
            }
            contents[col][a] = c as i64;
        }
    }
    let mut pairs: Vec<(usize, usize)> = (2..=n)
        .flat_map(|a| (a..=n).map(move |b| (a, b)))
        .filter(|&(a, b)| convention != YjmConvention::Exclusive || a < b)
        .collect();
    if convention == YjmConvention::WithLinear {
        // c(a)·1 is encoded as the pair (a, 1) with X_1 = 0 replaced by one.
        pairs.extend((2..=n).map(|a| (a, 0)));
    }
    let profile = |col: usize, (a, b): (usize, usize)| {
        let cb = if b == 0 { 1 } else { contents[col][b - 1] };
        contents[col][a - 1] * cb
    };
    let copies = 2 * k;
    let shape = TensorShape::new(vec![dn; copies]);
    let mut digits = vec![0; copies];
    let keep = (0..shape.len())
        .map(|flat| {
            shape.unravel(flat, &mut digits);
            pairs.iter().all(|&p| {
                let s: i64 = digits
                    .iter()
                    .enumerate()
                    .map(|(f, &col)| {
                        if f < k {
                            profile(col, p)
                        } else {
                            -profile(col, p)
                        }
                    })
                    .sum();
                s == 0
            })
        })
        .collect();
    Ok(FullYjmTwirl {
        shape,
        vt: SparseMatrix::from_dense(&v.transpose().to_owned(), 0.0),
        v: SparseMatrix::from_dense(&v, 0.0),
        keep,
    })
}

fn full_swap_channel(model: &FullSpaceModel, k: usize) -> Result<FullSwapChannel> {
    let n = model.n();
    let dn = model.dim();
    let copies = 2 * k;
    let dim = dn.pow(copies as u32);
    let coeffs = expansion_by_quadrature(k)?;
    let pairs: Vec<(usize, usize)> = (1..n).map(|i| (i, i + 1)).collect();
    let shape = TensorShape::new(vec![dn; copies]);
    let mut digits = vec![0; copies];
    let mut terms = Vec::new();
    for &(i, j) in &pairs {
        let single = model.index_map(&model.transposition(i, j)?)?;
        for &(subset, c) in &coeffs {
            // Swaps are involutions, so the gather map equals the scatter map.
            let map = (0..dim)
                .map(|flat| {
                    shape.unravel(flat, &mut digits);
                    digits.iter().enumerate().fold(0usize, |acc, (f, &x)| {
                        acc * dn + if subset >> f & 1 == 1 { single[x] } else { x }
                    }) as u32
                })
                .collect();
            terms.push((c / pairs.len() as f64, map));
        }
    }
    Ok(FullSwapChannel { dim, terms })
}

#[derive(Clone, Debug, Serialize)]
pub struct FullChannelReport {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub ensemble: Ensemble,
    pub dim: usize,
    /// Eigenvalues `>= 1 - 1e-6` of the full-space channel.
    pub unit_count: usize,
    /// The same count aggregated over sector-tuple blocks with multiplicity weights.
    pub block_unit_count: u128,
    /// Largest distance between the sorted full and block spectra.
    pub spectrum_deviation: f64,
    pub passed: bool,
}

/// Open-chain one-step channel on the full `d^{2nk}` space against the
/// multiplicity-weighted union of its sector-tuple blocks.
pub fn full_channel_eigencheck(
    n: usize,
    d: usize,
    k: usize,
    ensemble: Ensemble,
) -> Result<FullChannelReport> {
    if n < 2 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "need n >= 2 and k >= 1, got n={n}, k={k}"
        )));
    }
    let model = FullSpaceModel::new(n, d)?;
    let dim = model
        .dim()
        .checked_pow(2 * k as u32)
        .filter(|&v| v <= FULL_SPACE_CAP)
        .ok_or_else(|| {
            Error::SizeCap(format!(
                "full channel on {d}^{} states exceeds {FULL_SPACE_CAP}",
                2 * n * k
            ))
        })?;
    let opts = BlockOptions::default();
    let swap = full_swap_channel(&model, k)?;
    let full = match ensemble {
        Ensemble::SwapOnly => swap.to_dense(),
        Ensemble::Cqa => {
            let yjm = full_yjm_twirl(&model, k, opts.yjm)?;
            Sandwich {
                outer: &yjm,
                inner: &swap,
            }
            .to_dense()
        }
    };
    let mut full_ev = symmetric_eigenvalues(&full)?;
    full_ev.sort_by(f64::total_cmp);
    let unit = |v: &f64| *v >= 1.0 - 1e-6;
    let unit_count = full_ev.iter().filter(|v| unit(v)).count();

    let cache = IrrepCache::new();
    let geometry = Geometry::new(GeometryKind::OpenChain, n)?;
    let mut block_ev: Vec<f64> = Vec::with_capacity(dim);
    let mut block_unit_count = 0u128;
    for class in enumerate_tuples(n, d, k)? {
        let block = step_channel(&class.representative, &cache, &geometry, ensemble, &opts)?;
        let ev = symmetric_eigenvalues(&block.to_dense(opts.dense_cap)?)?;
        block_unit_count += class.weight * ev.iter().filter(|v| unit(v)).count() as u128;
        for v in ev {
            let copies =
                usize::try_from(class.weight).map_err(|_| Error::Overflow("block multiplicity"))?;
            block_ev.extend(std::iter::repeat(v).take(copies));
        }
    }
    if block_ev.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "blocks cover {} of {dim} dimensions",
            block_ev.len()
        )));
    }
    block_ev.sort_by(f64::total_cmp);
    let spectrum_deviation = full_ev
        .iter()
        .zip(&block_ev)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(FullChannelReport {
        n,
        d,
        k,
        ensemble,
        dim,
        unit_count,
        block_unit_count,
        spectrum_deviation,
        passed: spectrum_deviation <= 1e-8 && unit_count as u128 == block_unit_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{twirl_swap_k, SectorTuple};

    #[test]
    fn permutation_action_is_a_homomorphism() {
        for (n, d) in [(3, 2), (4, 3), (5, 2)] {
            let m = FullSpaceModel::new(n, d).unwrap();
            assert_eq!(m.homomorphism_failures(100, 7).unwrap(), 0);
        }
    }

    #[test]
    fn transposition_swaps_digits() {
        let m = FullSpaceModel::new(3, 2).unwrap();
        let map = m.index_map(&m.transposition(1, 3).unwrap()).unwrap();
        // |100> -> |001>
        assert_eq!(map[0b100], 0b001);
        assert_eq!(map[0b110], 0b011);
        assert_eq!(map[0b010], 0b010);
        assert!(m.index_map(&[0, 0, 1]).is_err());
    }

    #[test]
    fn characters_of_small_groups() {
        let std = Partition::new(vec![2, 1]).unwrap();
        assert_eq!(character(&std, &[1, 1, 1]).unwrap(), 2.0);
        assert_eq!(character(&std, &[2, 1]).unwrap(), 0.0);
        assert_eq!(character(&std, &[3]).unwrap(), -1.0);
        let p = Partition::new(vec![2, 2]).unwrap();
        assert_eq!(character(&p, &[2, 2]).unwrap(), 2.0);
        assert_eq!(cycle_type(&[1, 2, 0, 4, 3]), vec![3, 2]);
    }

    #[test]
    fn decomposition_examples() {
        let r = full_decomposition_check(3, 2).unwrap();
        assert!(r.passed, "{r:?}");
        let s: Vec<_> = r
            .sectors
            .iter()
            .map(|s| (s.shape.as_str(), s.multiplicity, s.irrep_dim))
            .collect();
        assert_eq!(s, vec![("(3)", 4, 1), ("(2,1)", 2, 2), ("(1,1,1)", 0, 1)]);
        assert_eq!(full_decomposition_check(2, 2).unwrap().total, 4);
        let r = full_decomposition_check(4, 3).unwrap();
        assert!(r.passed);
        assert_eq!(r.total, 81);
        assert!(full_decomposition_check(13, 2).is_err());
    }

    #[test]
    fn quadrature_k1_is_half_identity_plus_half_swap() {
        let tau = Mat::from_fn(2, 2, |i, j| if i != j { 1.0 } else { 0.0 });
        let q = twirl_quadrature(&tau, 1, 64).unwrap();
        let expect = Mat::from_fn(4, 4, |i, j| {
            let id = if i == j { 0.5 } else { 0.0 };
            let tt = if i == 3 - j { 0.5 } else { 0.0 };
            id + tt
        });
        assert!(max_complex_deviation(&q, &expect) < 1e-14);
    }

    #[test]
    fn quadrature_matches_block_twirls() {
        let cache = IrrepCache::new();
        let opts = BlockOptions::default();
        for (shapes, k) in [
            (vec!["2,1"], 1),
            (vec!["2,1", "3"], 2),
            (vec!["2,1"], 3),
            (vec!["3,1", "2,2"], 2),
        ] {
            let parts: Vec<Partition> = shapes.iter().map(|s| s.parse().unwrap()).collect();
            let ket: Vec<Partition> = (0..k).map(|i| parts[i % parts.len()].clone()).collect();
            let bra: Vec<Partition> = (0..k)
                .map(|i| parts[(i + 1) % parts.len()].clone())
                .collect();
            let tuple = SectorTuple::new(ket.clone(), bra.clone()).unwrap();
            let n = tuple.n();
            let taus = |ps: &[Partition]| -> Vec<Mat<f64>> {
                ps.iter()
                    .map(|p| {
                        cache
                            .get(p)
                            .unwrap()
                            .transposition_matrix(1, n)
                            .unwrap()
                            .to_dense()
                    })
                    .collect()
            };
            let q = twirl_quadrature_factors(&taus(&ket), &taus(&bra), 1024).unwrap();
            let block = twirl_swap_k(&tuple, &cache, (1, n), k, &opts).unwrap();
            let dense = block.to_dense(4096).unwrap();
            assert!(max_complex_deviation(&q, &dense) < 1e-10, "{tuple}");
            let q2 = twirl_quadrature_factors(&taus(&ket), &taus(&bra), 2048).unwrap();
            let mut diff: f64 = 0.0;
            for i in 0..q.nrows() {
                for j in 0..q.ncols() {
                    diff = diff.max((q[(i, j)] - q2[(i, j)]).norm());
                }
            }
            assert!(diff < 1e-13);
        }
    }

    #[test]
    fn quadrature_rejects_bad_input() {
        let not_inv = Mat::from_fn(2, 2, |i, j| if i == j { 2.0 } else { 0.0 });
        assert!(twirl_quadrature(&not_inv, 1, 128).is_err());
        let tau = Mat::<f64>::identity(2, 2);
        assert!(twirl_quadrature(&tau, 1, 32).is_err());
    }

    #[test]
    fn w12_identity_holds() {
        for d in [2, 3] {
            assert!(w12_identity_residual(d).unwrap() < 1e-12);
        }
    }

    #[test]
    fn expansion_by_quadrature_has_eight_terms_at_k2() {
        let c = expansion_by_quadrature(2).unwrap();
        assert_eq!(c.len(), 8);
        let total: f64 = c.iter().map(|(_, v)| v).sum();
        // Sum of the coefficients is the twirl evaluated on τ = I.
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mc_is_reproducible_and_close() {
        let a = frame_potential_mc(2, 2, 20_000, 11).unwrap();
        let b = frame_potential_mc(2, 2, 20_000, 11).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert!((a.estimate - 118.0).abs() < 4.0 * a.stderr, "{a:?}");
        let k1 = frame_potential_mc(2, 1, 20_000, 3).unwrap();
        assert!((k1.estimate - 10.0).abs() < 4.0 * k1.stderr, "{k1:?}");
        assert!(frame_potential_mc(2, 2, 99, 0).is_err());
        assert!(frame_potential_mc(9, 2, 1000, 0).is_err());
    }

    #[test]
    fn haar_traces_have_unit_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples = 20_000;
        let m2: f64 = (0..samples)
            .map(|_| haar_trace(3, &mut rng).norm_sqr())
            .sum::<f64>()
            / samples as f64;
        assert!((m2 - 1.0).abs() < 0.05, "{m2}");
    }

    #[test]
    fn small_full_channels_agree_with_blocks() {
        for (n, k, ens) in [
            (2, 1, Ensemble::SwapOnly),
            (2, 2, Ensemble::SwapOnly),
            (3, 1, Ensemble::SwapOnly),
            (3, 1, Ensemble::Cqa),
            (2, 2, Ensemble::Cqa),
        ] {
            let r = full_channel_eigencheck(n, 2, k, ens).unwrap();
            assert!(r.passed, "{r:?}");
            assert!(r.unit_count >= if k == 1 { 1 } else { 2 });
        }
        let r = full_channel_eigencheck(2, 2, 1, Ensemble::SwapOnly).unwrap();
        assert_eq!(r.unit_count, 10);
        let r = full_channel_eigencheck(2, 2, 2, Ensemble::SwapOnly).unwrap();
        assert_eq!(r.unit_count, 118);
        assert!(full_channel_eigencheck(4, 2, 2, Ensemble::SwapOnly).is_err());
    }
}
