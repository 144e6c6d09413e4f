//! k-fold moment operators of one random-walk step, restricted to a tuple of
//! irrep factors `S^{λ_1} ⊗ .. ⊗ S^{λ_k} ⊗ S^{μ_1} ⊗ .. ⊗ S^{μ_k}`.
//!
//! For an involution `τ` the twirl `(1/2π)∫ (e^{-itτ})^{⊗k} ⊗ (e^{itτ})^{⊗k} dt`
//! has two equivalent forms. The trigonometric expansion ([`TwirlExpansion`])
//! writes it as a rational combination of `I`/`τ` words. The spectral form
//! diagonalizes `τ` on every factor: the twirl keeps exactly the product
//! eigenvectors whose ket signs sum to the bra signs. Blocks are applied in
//! the spectral form; the expansion is kept as an exact cross-check.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use faer::Mat;
use num_bigint::BigInt;
use num_complex::Complex;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    dense_asymmetry, kron_all, DiagonalMask, LinearOperator, OperatorChain, OperatorSum,
    SparseMatrix, TensorShape,
};
use crate::snpart::{dim_irrep, Partition};
use crate::yor::{build_irrep, IrrepAction};

/// Shared, lazily built irrep matrices keyed by shape.
#[derive(Default)]
pub struct IrrepCache {
    map: Mutex<HashMap<Partition, Arc<IrrepAction>>>,
}

impl IrrepCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, lambda: &Partition) -> Result<Arc<IrrepAction>> {
        if let Some(rep) = self.map.lock().expect("irrep cache poisoned").get(lambda) {
            return Ok(Arc::clone(rep));
        }
        let rep = Arc::new(build_irrep(lambda, lambda.n())?);
        let mut map = self.map.lock().expect("irrep cache poisoned");
        Ok(Arc::clone(map.entry(lambda.clone()).or_insert(rep)))
    }
}

/// `k` ket shapes and `k` bra shapes, all partitions of the same `n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SectorTuple {
    ket: Vec<Partition>,
    bra: Vec<Partition>,
}

impl SectorTuple {
    pub fn new(ket: Vec<Partition>, bra: Vec<Partition>) -> Result<Self> {
        if ket.is_empty() || ket.len() != bra.len() {
            return Err(Error::InvalidArgument(format!(
                "sector tuple needs k >= 1 ket and bra shapes, got {} and {}",
                ket.len(),
                bra.len()
            )));
        }
        let n = ket[0].n();
        for p in ket.iter().chain(&bra) {
            if p.n() != n {
                return Err(Error::BoxCountMismatch {
                    shape: p.to_string(),
                    expected: n,
                    found: p.n(),
                });
            }
        }
        Ok(Self { ket, bra })
    }

    /// `k` copies of `lambda` on both sides.
    pub fn uniform(lambda: &Partition, k: usize) -> Result<Self> {
        Self::new(vec![lambda.clone(); k], vec![lambda.clone(); k])
    }

    pub fn k(&self) -> usize {
        self.ket.len()
    }

    pub fn n(&self) -> usize {
        self.ket[0].n()
    }

    pub fn ket(&self) -> &[Partition] {
        &self.ket
    }

    pub fn bra(&self) -> &[Partition] {
        &self.bra
    }

    /// Ket shapes followed by bra shapes.
    pub fn factors(&self) -> impl Iterator<Item = &Partition> {
        self.ket.iter().chain(&self.bra)
    }

    pub fn factor_dims(&self) -> Result<Vec<usize>> {
        self.factors()
            .map(|p| {
                dim_irrep(p).and_then(|d| {
                    usize::try_from(d).map_err(|_| Error::Overflow("irrep dimension"))
                })
            })
            .collect()
    }

    pub fn block_dim(&self) -> Result<usize> {
        self.factor_dims()?
            .into_iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(d))
            .ok_or(Error::Overflow("block dimension"))
    }

    /// Representative of the class of tuples with the same spectra: ket and
    /// bra factors may each be reordered, and ket and bra exchanged.
    pub fn canonical(&self) -> Self {
        let mut ket = self.ket.clone();
        let mut bra = self.bra.clone();
        ket.sort_by(|a, b| b.cmp(a));
        bra.sort_by(|a, b| b.cmp(a));
        if bra > ket {
            std::mem::swap(&mut ket, &mut bra);
        }
        Self { ket, bra }
    }

    /// Product of the multiplicities of all `2k` shapes in `d`-level qudits.
    pub fn multiplicity_weight(&self, d: usize) -> Result<u128> {
        self.factors().try_fold(1u128, |acc, p| {
            let m = crate::snpart::multiplicity(p, d)? as u128;
            acc.checked_mul(m)
                .ok_or(Error::Overflow("multiplicity weight"))
        })
    }
}

impl fmt::Display for SectorTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |ps: &[Partition]| {
            ps.iter()
                .map(Partition::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        write!(f, "{};{}", join(&self.ket), join(&self.bra))
    }
}

impl FromStr for SectorTuple {
    type Err = Error;

    /// Parses `(2,1),(3);(2,1),(2,1)`.
    fn from_str(s: &str) -> Result<Self> {
        let (ket, bra) = s
            .split_once(';')
            .ok_or_else(|| Error::InvalidArgument(format!("sector tuple {s:?} lacks ';'")))?;
        let parse_side = |side: &str| -> Result<Vec<Partition>> {
            side.split(')')
                .map(|t| t.trim().trim_start_matches(',').trim())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<Partition>())
                .collect()
        };
        Self::new(parse_side(ket)?, parse_side(bra)?)
    }
}

/// Rational value of `(1/2π)∫_0^{2π} cos^p t sin^q t dt`.
pub fn trig_moment(p: usize, q: usize) -> BigRational {
    if p % 2 == 1 || q % 2 == 1 {
        return BigRational::zero();
    }
    let double_factorial = |m: usize| -> BigInt {
        let mut acc = BigInt::one();
        let mut i = m;
        while i > 1 {
            acc *= i;
            i -= 2;
        }
        acc
    };
    let num = double_factorial(p.saturating_sub(1)) * double_factorial(q.saturating_sub(1));
    BigRational::new(num, double_factorial(p + q))
}

/// One `I`/`τ` word of the expanded twirl.
#[derive(Clone, Debug, PartialEq)]
pub struct TwirlTerm {
    /// `true` where the factor carries `τ`; ket factors first.
    pub pattern: Vec<bool>,
    pub coefficient: BigRational,
}

impl TwirlTerm {
    pub fn label(&self) -> String {
        self.pattern
            .iter()
            .map(|&t| if t { 'τ' } else { 'I' })
            .collect()
    }
}

/// Exact expansion of the k-fold twirl of an involution.
#[derive(Clone, Debug)]
pub struct TwirlExpansion {
    k: usize,
    terms: Vec<TwirlTerm>,
    max_imaginary: BigRational,
}

impl TwirlExpansion {
    /// Expands `(cos t I - i sin t τ)^{⊗k} ⊗ (cos t I + i sin t τ)^{⊗k}`.
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k > 8 {
            return Err(Error::InvalidArgument(format!(
                "twirl order k = {k} outside 1..=8"
            )));
        }
        let width = 2 * k;
        let i_unit = Complex::new(BigRational::zero(), BigRational::one());
        let minus_i = Complex::new(BigRational::zero(), -BigRational::one());
        let mut terms = Vec::new();
        let mut max_imaginary = BigRational::zero();
        for bits in 0u32..(1 << width) {
            let pattern: Vec<bool> = (0..width)
                .map(|f| bits >> (width - 1 - f) & 1 == 1)
                .collect();
            let ket_tau = pattern[..k].iter().filter(|&&t| t).count();
            let bra_tau = pattern[k..].iter().filter(|&&t| t).count();
            let sines = ket_tau + bra_tau;
            let mut phase = Complex::new(BigRational::one(), BigRational::zero());
            for _ in 0..ket_tau {
                phase *= minus_i.clone();
            }
            for _ in 0..bra_tau {
                phase *= i_unit.clone();
            }
            let integral = trig_moment(width - sines, sines);
            let value = Complex::new(phase.re * integral.clone(), phase.im * integral);
            if value.im.abs() > max_imaginary {
                max_imaginary = value.im.abs();
            }
            if !value.re.is_zero() {
                terms.push(TwirlTerm {
                    pattern,
                    coefficient: value.re,
                });
            }
        }
        Ok(Self {
            k,
            terms,
            max_imaginary,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Nonzero terms in binary order of the pattern (`I` = 0 first).
    pub fn terms(&self) -> &[TwirlTerm] {
        &self.terms
    }

    /// Coefficient of a word such as `"IτIτ"` (also accepts `t` for `τ`).
    pub fn coefficient(&self, word: &str) -> Option<BigRational> {
        let pattern: Vec<bool> = word
            .chars()
            .map(|c| c == 'τ' || c == 't' || c == 'T')
            .collect();
        if pattern.len() != 2 * self.k {
            return None;
        }
        Some(
            self.terms
                .iter()
                .find(|t| t.pattern == pattern)
                .map_or_else(BigRational::zero, |t| t.coefficient.clone()),
        )
    }

    /// Largest imaginary part met during the expansion (exactly zero).
    pub fn max_imaginary(&self) -> &BigRational {
        &self.max_imaginary
    }

    /// Dense `Σ c_w ⊗_f (τ_f or I)` for explicit per-factor involutions.
    pub fn assemble(&self, taus: &[Mat<f64>]) -> Result<Mat<f64>> {
        if taus.len() != 2 * self.k {
            return Err(Error::InvalidArgument(format!(
                "expected {} factor matrices, got {}",
                2 * self.k,
                taus.len()
            )));
        }
        let dim: usize = taus.iter().map(|t| t.nrows()).product();
        let mut out = Mat::<f64>::zeros(dim, dim);
        for term in &self.terms {
            let factors: Vec<Mat<f64>> = term
                .pattern
                .iter()
                .zip(taus)
                .map(|(&t, tau)| {
                    if t {
                        tau.clone()
                    } else {
                        Mat::identity(tau.nrows(), tau.nrows())
                    }
                })
                .collect();
            let c = term.coefficient.to_f64().expect("small rational");
            out += kron_all(&factors) * faer::Scale(c);
        }
        Ok(out)
    }
}

/// Orthonormal eigenbasis of the transposition `(i, j)` on `rep`: returns
/// `Q` (eigenvectors as columns) and the `±1` eigenvalue of each column.
pub fn reflection_eigenbasis(
    rep: &IrrepAction,
    i: usize,
    j: usize,
) -> Result<(SparseMatrix, Vec<i8>)> {
    let base = rep.adjacent(i)?;
    if j <= i || j > rep.n() {
        return Err(Error::IndexOutOfRange {
            index: j,
            min: i + 1,
            max: rep.n(),
        });
    }
    let dim = rep.dim();
    let mut triplets = Vec::with_capacity(2 * dim);
    let mut signs = vec![0i8; dim];
    for t in 0..dim {
        let partner = base.row(t).find(|&(c, _)| c != t).map(|(c, _)| c);
        match partner {
            None => {
                triplets.push((t, t, 1.0));
                signs[t] = if base.get(t, t) > 0.0 { 1 } else { -1 };
            }
            Some(p) if p > t => {
                // Reflection [[cos θ, sin θ], [sin θ, -cos θ]] on (t, p).
                let theta = base.get(t, p).atan2(base.get(t, t));
                let (s, c) = (0.5 * theta).sin_cos();
                triplets.extend([(t, t, c), (p, t, s), (t, p, -s), (p, p, c)]);
                signs[t] = 1;
                signs[p] = -1;
            }
            Some(_) => {}
        }
    }
    let mut q = SparseMatrix::from_triplets(dim, triplets);
    // (i, j) = W τ_i Wᵀ with W = τ_{j-1} ⋯ τ_{i+1}.
    for k in i + 1..j {
        q = rep.adjacent(k)?.matmul(&q);
    }
    Ok((q, signs))
}

/// Twirl of one transposition on a block, applied in the spectral form.
pub struct PairTwirl {
    shape: TensorShape,
    pair: (usize, usize),
    /// `None` where the factor's eigenbasis is the standard basis.
    q: Vec<Option<SparseMatrix>>,
    qt: Vec<Option<SparseMatrix>>,
    keep: Vec<bool>,
}

fn is_identity(m: &SparseMatrix) -> bool {
    (0..m.dim()).all(|r| {
        m.row(r)
            .all(|(c, v)| if c == r { v == 1.0 } else { v == 0.0 })
    })
}

/// Calls `f(flat, digits)` for every multi-index of `dims` in row-major order.
fn for_each_index(dims: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let len: usize = dims.iter().product();
    let mut digits = vec![0usize; dims.len()];
    for flat in 0..len {
        f(flat, &digits);
        for pos in (0..dims.len()).rev() {
            digits[pos] += 1;
            if digits[pos] < dims[pos] {
                break;
            }
            digits[pos] = 0;
        }
    }
}

impl PairTwirl {
    pub fn new(tuple: &SectorTuple, cache: &IrrepCache, pair: (usize, usize)) -> Result<Self> {
        let (i, j) = pair;
        let n = tuple.n();
        if i == 0 || i >= j || j > n {
            return Err(Error::IndexOutOfRange {
                index: if i == 0 || i >= j { i } else { j },
                min: 1,
                max: n,
            });
        }
        let k = tuple.k();
        let mut q = Vec::new();
        let mut qt = Vec::new();
        let mut signs = Vec::new();
        for shape in tuple.factors() {
            let rep = cache.get(shape)?;
            let (basis, s) = reflection_eigenbasis(&rep, i, j)?;
            if is_identity(&basis) {
                q.push(None);
                qt.push(None);
            } else {
                qt.push(Some(basis.transpose()));
                q.push(Some(basis));
            }
            signs.push(s);
        }
        let dims = tuple.factor_dims()?;
        let shape = TensorShape::new(dims.clone());
        let mut keep = vec![false; shape.len()];
        for_each_index(&dims, |flat, digits| {
            let balance: i32 = digits
                .iter()
                .enumerate()
                .map(|(f, &t)| {
                    if f < k {
                        signs[f][t] as i32
                    } else {
                        -(signs[f][t] as i32)
                    }
                })
                .sum();
            keep[flat] = balance == 0;
        });
        Ok(Self {
            shape,
            pair,
            q,
            qt,
            keep,
        })
    }

    pub fn pair(&self) -> (usize, usize) {
        self.pair
    }

    /// Rank of the projection.
    pub fn rank(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    fn transform(&self, mats: &[Option<SparseMatrix>], cur: &mut Vec<f64>, tmp: &mut Vec<f64>) {
        for (mode, m) in mats.iter().enumerate() {
            if let Some(m) = m {
                self.shape.apply_mode(mode, m, cur, tmp);
                std::mem::swap(cur, tmp);
            }
        }
    }
}

impl LinearOperator for PairTwirl {
    fn dim(&self) -> usize {
        self.shape.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut cur = x.to_vec();
        let mut tmp = vec![0.0; cur.len()];
        self.transform(&self.qt, &mut cur, &mut tmp);
        for (v, &keep) in cur.iter_mut().zip(&self.keep) {
            if !keep {
                *v = 0.0;
            }
        }
        self.transform(&self.q, &mut cur, &mut tmp);
        y.copy_from_slice(&cur);
    }
}

/// Which `(a, b)` index pairs the second-order YJM twirl constrains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum YjmConvention {
    /// `2 <= a <= b <= n`: diagonal products `X_a²` included.
    #[default]
    Inclusive,
    /// `2 <= a < b <= n`.
    Exclusive,
    /// Inclusive pairs plus the single-index conditions `Σ_ket c(a) = Σ_bra c(a)`.
    WithLinear,
}

/// Diagonal of the second-order YJM twirl in the product tableau basis.
///
/// Entry `1` iff `Σ_ket c(a)c(b) = Σ_bra c(a)c(b)` for every constrained pair.
pub fn yjm_mask(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    convention: YjmConvention,
) -> Result<Vec<bool>> {
    let n = tuple.n();
    let k = tuple.k();
    let pairs: Vec<(usize, usize)> = (2..=n)
        .flat_map(|a| (a..=n).map(move |b| (a, b)))
        .filter(|&(a, b)| convention != YjmConvention::Exclusive || a < b)
        .collect();
    let linear: Vec<usize> = if convention == YjmConvention::WithLinear {
        (2..=n).collect()
    } else {
        Vec::new()
    };
    // Per factor and tableau: the vector of c(a)c(b) over constrained pairs.
    let mut profiles: Vec<Vec<Vec<i64>>> = Vec::new();
    for shape in tuple.factors() {
        let rep = cache.get(shape)?;
        let diag: Vec<&[i64]> = (1..=n)
            .map(|j| rep.yjm_diagonal(j))
            .collect::<Result<_>>()?;
        profiles.push(
            (0..rep.dim())
                .map(|t| {
                    pairs
                        .iter()
                        .map(|&(a, b)| diag[a - 1][t] * diag[b - 1][t])
                        .chain(linear.iter().map(|&a| diag[a - 1][t]))
                        .collect()
                })
                .collect(),
        );
    }
    let dims = tuple.factor_dims()?;
    let mut mask = vec![false; dims.iter().product()];
    let mut acc = vec![0i64; pairs.len() + linear.len()];
    for_each_index(&dims, |flat, digits| {
        acc.fill(0);
        for (f, &t) in digits.iter().enumerate() {
            let sign = if f < k { 1 } else { -1 };
            for (a, v) in acc.iter_mut().zip(&profiles[f][t]) {
                *a += sign * v;
            }
        }
        mask[flat] = acc.iter().all(|&v| v == 0);
    });
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    SwapOnly,
    YjmOnly,
    CqaStep,
    BulkHamiltonian,
    AllToAllHamiltonian,
    BrickworkStep,
}

impl BlockKind {
    pub fn is_channel(self) -> bool {
        matches!(
            self,
            Self::SwapOnly | Self::YjmOnly | Self::CqaStep | Self::BrickworkStep
        )
    }

    pub fn is_hamiltonian(self) -> bool {
        matches!(self, Self::BulkHamiltonian | Self::AllToAllHamiltonian)
    }

    pub fn is_symmetric(self) -> bool {
        self != Self::BrickworkStep
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    OpenChain,
    PeriodicChain,
    AllToAll,
    Brickwork,
}

impl FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" | "open_chain" => Ok(Self::OpenChain),
            "periodic" | "periodic_chain" => Ok(Self::PeriodicChain),
            "all-to-all" | "all_to_all" => Ok(Self::AllToAll),
            "brickwork" => Ok(Self::Brickwork),
            _ => Err(Error::InvalidArgument(format!("unknown geometry {s:?}"))),
        }
    }
}

/// A pair of sites, 1-based.
pub type Pair = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    pub kind: GeometryKind,
    pub n: usize,
}

impl Geometry {
    pub fn new(kind: GeometryKind, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "geometry needs n >= 2, got {n}"
            )));
        }
        Ok(Self { kind, n })
    }

    /// Transpositions sampled by one step (both brickwork layers for brickwork).
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        match self.kind {
            GeometryKind::OpenChain | GeometryKind::Brickwork => {
                (1..n).map(|j| (j, j + 1)).collect()
            }
            GeometryKind::PeriodicChain => {
                let mut p: Vec<_> = (1..n).map(|j| (j, j + 1)).collect();
                if n > 2 {
                    p.push((1, n));
                }
                p
            }
            GeometryKind::AllToAll => (1..n)
                .flat_map(|i| (i + 1..=n).map(move |j| (i, j)))
                .collect(),
        }
    }

    /// Brickwork layers `(odd, even)`: pairs `(1,2),(3,4),..` then `(2,3),(4,5),..`.
    pub fn brickwork_layers(&self) -> (Vec<Pair>, Vec<Pair>) {
        let all: Vec<_> = (1..self.n).map(|j| (j, j + 1)).collect();
        let odd = all.iter().copied().filter(|(j, _)| j % 2 == 1).collect();
        let even = all.into_iter().filter(|(j, _)| j % 2 == 0).collect();
        (odd, even)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ensemble {
    SwapOnly,
    Cqa,
}

impl FromStr for Ensemble {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swap" | "swap_only" => Ok(Self::SwapOnly),
            "cqa" => Ok(Self::Cqa),
            _ => Err(Error::InvalidArgument(format!("unknown ensemble {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BlockOptions {
    /// Blocks up to this dimension are materialized.
    pub dense_threshold: usize,
    /// Hard cap for any explicit dense request.
    pub dense_cap: usize,
    pub yjm: YjmConvention,
}

impl Default for BlockOptions {
    fn default() -> Self {
        Self {
            dense_threshold: 4096,
            dense_cap: 16384,
            yjm: YjmConvention::Inclusive,
        }
    }
}

#[derive(Clone)]
pub enum BlockOperator {
    Dense(Arc<Mat<f64>>),
    MatrixFree(Arc<dyn LinearOperator>),
}

/// A moment operator restricted to one sector tuple.
#[derive(Clone)]
pub struct MomentBlock {
    tuple: SectorTuple,
    kind: BlockKind,
    dim: usize,
    op: BlockOperator,
    /// Transpose, kept for non-symmetric kinds.
    adjoint: Option<Arc<dyn LinearOperator>>,
}

impl fmt::Debug for MomentBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentBlock")
            .field("tuple", &self.tuple.to_string())
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("dense", &self.is_dense())
            .finish()
    }
}

impl MomentBlock {
    fn build(
        tuple: &SectorTuple,
        kind: BlockKind,
        op: Arc<dyn LinearOperator>,
        adjoint: Option<Arc<dyn LinearOperator>>,
        opts: &BlockOptions,
    ) -> Self {
        let dim = op.dim();
        let op = if dim <= opts.dense_threshold {
            BlockOperator::Dense(Arc::new(op.to_dense()))
        } else {
            BlockOperator::MatrixFree(op)
        };
        Self {
            tuple: tuple.clone(),
            kind,
            dim,
            op,
            adjoint,
        }
    }

    pub fn tuple(&self) -> &SectorTuple {
        &self.tuple
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.op, BlockOperator::Dense(_))
    }

    pub fn dense(&self) -> Option<&Mat<f64>> {
        match &self.op {
            BlockOperator::Dense(m) => Some(m),
            BlockOperator::MatrixFree(_) => None,
        }
    }

    pub fn operator(&self) -> &dyn LinearOperator {
        match &self.op {
            BlockOperator::Dense(m) => m.as_ref(),
            BlockOperator::MatrixFree(op) => op.as_ref(),
        }
    }

    pub fn adjoint(&self) -> Option<&Arc<dyn LinearOperator>> {
        self.adjoint.as_ref()
    }

    /// Dense copy, refused above `cap`.
    pub fn to_dense(&self, cap: usize) -> Result<Mat<f64>> {
        match &self.op {
            BlockOperator::Dense(m) => Ok(m.as_ref().clone()),
            BlockOperator::MatrixFree(op) if self.dim <= cap => Ok(op.to_dense()),
            BlockOperator::MatrixFree(_) => Err(Error::DenseCapExceeded { dim: self.dim, cap }),
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.operator().apply(x, y);
    }

    /// Entrywise asymmetry on dense blocks; on matrix-free blocks the largest
    /// `|<u, A v> - <A u, v>|` over a few seeded random probes.
    pub fn asymmetry(&self, seed: u64) -> f64 {
        if let Some(m) = self.dense() {
            return dense_asymmetry(m);
        }
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim;
        let mut worst: f64 = 0.0;
        let (mut au, mut av) = (vec![0.0; n], vec![0.0; n]);
        for _ in 0..3 {
            let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            self.apply(&u, &mut au);
            self.apply(&v, &mut av);
            let lhs = crate::linalg::dot(&u, &av);
            let rhs = crate::linalg::dot(&au, &v);
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
        worst
    }

    /// Coordinate-format dump (`row col value`, 1-based) of a dense block.
    pub fn write_coordinates(&self, out: &mut dyn Write, cap: usize, drop_tol: f64) -> Result<()> {
        let m = self.to_dense(cap)?;
        let io = |e: std::io::Error| Error::InvalidArgument(format!("write failed: {e}"));
        writeln!(out, "% {} {:?} dim={}", self.tuple, self.kind, self.dim).map_err(io)?;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v.abs() > drop_tol {
                    writeln!(out, "{} {} {:.17e}", r + 1, c + 1, v).map_err(io)?;
                }
            }
        }
        Ok(())
    }
}

fn check_k(tuple: &SectorTuple, k: usize) -> Result<()> {
    if tuple.k() != k {
        return Err(Error::InvalidArgument(format!(
            "moment order k = {k} does not match tuple with {} ket factors",
            tuple.k()
        )));
    }
    Ok(())
}

fn twirls(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    pairs: &[(usize, usize)],
) -> Result<Vec<Arc<dyn LinearOperator>>> {
    pairs
        .iter()
        .map(|&p| PairTwirl::new(tuple, cache, p).map(|t| Arc::new(t) as Arc<dyn LinearOperator>))
        .collect()
}

fn average(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    pairs: &[(usize, usize)],
) -> Result<OperatorSum> {
    let w = 1.0 / pairs.len() as f64;
    let terms = twirls(tuple, cache, pairs)?
        .into_iter()
        .map(|t| (w, t))
        .collect();
    OperatorSum::new(tuple.block_dim()?, 0.0, terms)
}

fn hamiltonian(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    pairs: &[(usize, usize)],
) -> Result<OperatorSum> {
    let terms = twirls(tuple, cache, pairs)?
        .into_iter()
        .map(|t| (-1.0, t))
        .collect();
    OperatorSum::new(tuple.block_dim()?, pairs.len() as f64, terms)
}

/// Twirl of the transposition `pair` at moment order `k`.
pub fn twirl_swap_k(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    pair: (usize, usize),
    k: usize,
    opts: &BlockOptions,
) -> Result<MomentBlock> {
    check_k(tuple, k)?;
    let op = Arc::new(PairTwirl::new(tuple, cache, pair)?);
    Ok(MomentBlock::build(
        tuple,
        BlockKind::SwapOnly,
        op,
        None,
        opts,
    ))
}

/// The same twirl assembled densely from the exact trigonometric expansion.
pub fn twirl_swap_expanded(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    pair: (usize, usize),
    cap: usize,
) -> Result<Mat<f64>> {
    let dim = tuple.block_dim()?;
    if dim > cap {
        return Err(Error::DenseCapExceeded { dim, cap });
    }
    let taus = tuple
        .factors()
        .map(|p| {
            Ok(cache
                .get(p)?
                .transposition_matrix(pair.0, pair.1)?
                .to_dense())
        })
        .collect::<Result<Vec<_>>>()?;
    TwirlExpansion::new(tuple.k())?.assemble(&taus)
}

/// Second-order YJM twirl: a diagonal 0/1 projection.
pub fn twirl_yjm_k2(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    opts: &BlockOptions,
) -> Result<MomentBlock> {
    let mask = Arc::new(yjm_mask(tuple, cache, opts.yjm)?);
    let op = Arc::new(DiagonalMask::new(mask));
    Ok(MomentBlock::build(
        tuple,
        BlockKind::YjmOnly,
        op,
        None,
        opts,
    ))
}

/// One random-walk step: the average of pair twirls over the geometry, or
/// for `Cqa` the sandwich `Y S Y` with the YJM twirl `Y`.
pub fn step_channel(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    geometry: &Geometry,
    ensemble: Ensemble,
    opts: &BlockOptions,
) -> Result<MomentBlock> {
    if geometry.kind == GeometryKind::Brickwork {
        return Err(Error::InvalidArgument(
            "brickwork steps are built by brickwork_step".into(),
        ));
    }
    if geometry.n != tuple.n() {
        return Err(Error::BoxCountMismatch {
            shape: tuple.to_string(),
            expected: geometry.n,
            found: tuple.n(),
        });
    }
    let swap: Arc<dyn LinearOperator> = Arc::new(average(tuple, cache, &geometry.pairs())?);
    match ensemble {
        Ensemble::SwapOnly => Ok(MomentBlock::build(
            tuple,
            BlockKind::SwapOnly,
            swap,
            None,
            opts,
        )),
        Ensemble::Cqa => {
            let mask: Arc<dyn LinearOperator> = Arc::new(DiagonalMask::new(Arc::new(yjm_mask(
                tuple, cache, opts.yjm,
            )?)));
            let op = Arc::new(OperatorChain::new(vec![Arc::clone(&mask), swap, mask])?);
            Ok(MomentBlock::build(
                tuple,
                BlockKind::CqaStep,
                op,
                None,
                opts,
            ))
        }
    }
}

fn layer(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    pairs: &[(usize, usize)],
) -> Result<Arc<dyn LinearOperator>> {
    if pairs.is_empty() {
        let dim = tuple.block_dim()?;
        return Ok(Arc::new(OperatorSum::new(dim, 1.0, Vec::new())?));
    }
    Ok(Arc::new(OperatorChain::new(twirls(tuple, cache, pairs)?)?))
}

/// Layer projections `(P_odd, P_even)` of the brickwork circuit.
pub fn brickwork_layers(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    opts: &BlockOptions,
) -> Result<(MomentBlock, MomentBlock)> {
    let geometry = Geometry::new(GeometryKind::Brickwork, tuple.n())?;
    let (odd, even) = geometry.brickwork_layers();
    let build = |pairs| -> Result<MomentBlock> {
        Ok(MomentBlock::build(
            tuple,
            BlockKind::SwapOnly,
            layer(tuple, cache, pairs)?,
            None,
            opts,
        ))
    };
    Ok((build(&odd)?, build(&even)?))
}

/// One brickwork step `P_even · P_odd` (not symmetric).
pub fn brickwork_step(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    k: usize,
    opts: &BlockOptions,
) -> Result<MomentBlock> {
    check_k(tuple, k)?;
    if tuple.n() < 3 {
        return Err(Error::InvalidArgument("brickwork needs n >= 3".into()));
    }
    let geometry = Geometry::new(GeometryKind::Brickwork, tuple.n())?;
    let (odd, even) = geometry.brickwork_layers();
    let p_odd = layer(tuple, cache, &odd)?;
    let p_even = layer(tuple, cache, &even)?;
    let step = Arc::new(OperatorChain::new(vec![
        Arc::clone(&p_odd),
        Arc::clone(&p_even),
    ])?);
    let adjoint: Arc<dyn LinearOperator> = Arc::new(OperatorChain::new(vec![p_even, p_odd])?);
    Ok(MomentBlock::build(
        tuple,
        BlockKind::BrickworkStep,
        step,
        Some(adjoint),
        opts,
    ))
}

/// `Σ_{i=start}^{start+width-2} (I - T^{(i,i+1)})`: the bulk Hamiltonian on
/// a window of `width` sites (`width - 1` projections).
pub fn bulk_hamiltonian(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    width: usize,
    start: usize,
    opts: &BlockOptions,
) -> Result<MomentBlock> {
    let n = tuple.n();
    if width < 2 || start == 0 || start + width - 1 > n {
        return Err(Error::InvalidArgument(format!(
            "bulk window of width {width} at {start} does not fit in n = {n}"
        )));
    }
    let pairs: Vec<_> = (start..start + width - 1).map(|i| (i, i + 1)).collect();
    let op = Arc::new(hamiltonian(tuple, cache, &pairs)?);
    Ok(MomentBlock::build(
        tuple,
        BlockKind::BulkHamiltonian,
        op,
        None,
        opts,
    ))
}

/// `Σ_{i<j} (I - T^{(i,j)})`.
pub fn all_to_all_hamiltonian(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    opts: &BlockOptions,
) -> Result<MomentBlock> {
    let pairs = Geometry::new(GeometryKind::AllToAll, tuple.n())?.pairs();
    let op = Arc::new(hamiltonian(tuple, cache, &pairs)?);
    Ok(MomentBlock::build(
        tuple,
        BlockKind::AllToAllHamiltonian,
        op,
        None,
        opts,
    ))
}

/// `Σ (I - T^{(i,j)})` over the pairs of an open, periodic or all-to-all geometry.
pub fn geometry_hamiltonian(
    tuple: &SectorTuple,
    cache: &IrrepCache,
    geometry: &Geometry,
    opts: &BlockOptions,
) -> Result<MomentBlock> {
    if geometry.n != tuple.n() {
        return Err(Error::BoxCountMismatch {
            shape: tuple.to_string(),
            expected: geometry.n,
            found: tuple.n(),
        });
    }
    let kind = match geometry.kind {
        GeometryKind::OpenChain | GeometryKind::PeriodicChain => BlockKind::BulkHamiltonian,
        GeometryKind::AllToAll => BlockKind::AllToAllHamiltonian,
        GeometryKind::Brickwork => {
            return Err(Error::InvalidArgument(
                "brickwork has no Hamiltonian form here; use brickwork_step".into(),
            ))
        }
    };
    let op = Arc::new(hamiltonian(tuple, cache, &geometry.pairs())?);
    Ok(MomentBlock::build(tuple, kind, op, None, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigenvalues;
    use crate::snpart::partitions;

    fn p(s: &str) -> Partition {
        s.parse().unwrap()
    }

    fn t(s: &str) -> SectorTuple {
        s.parse().unwrap()
    }

    fn max_abs_diff(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
            }
        }
        worst
    }

    fn rat(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn tuple_parsing_and_canonical_form() {
        let x = t("(2,1),(3);(3),(2,1)");
        assert_eq!(x.to_string(), "(2,1),(3);(3),(2,1)");
        assert_eq!(x.block_dim().unwrap(), 4);
        assert_eq!(x.canonical(), t("(3),(2,1);(3),(2,1)"));
        assert_eq!(
            t("(2,1),(2,1);(3),(3)").canonical(),
            t("(3),(3);(2,1),(2,1)")
        );
        assert!("(2,1);(3),(3)".parse::<SectorTuple>().is_err());
        assert!("(2,1);(2,2)".parse::<SectorTuple>().is_err());
        assert!("(2,1)".parse::<SectorTuple>().is_err());
    }

    #[test]
    fn trig_moments() {
        assert_eq!(trig_moment(0, 0), rat(1, 1));
        assert_eq!(trig_moment(2, 0), rat(1, 2));
        assert_eq!(trig_moment(2, 2), rat(1, 8));
        assert_eq!(trig_moment(4, 0), rat(3, 8));
        assert_eq!(trig_moment(1, 1), rat(0, 1));
        assert_eq!(trig_moment(4, 2), rat(1, 16));
    }

    #[test]
    fn expansion_k1_and_k2() {
        let e1 = TwirlExpansion::new(1).unwrap();
        assert_eq!(e1.coefficient("II"), Some(rat(1, 2)));
        assert_eq!(e1.coefficient("ττ"), Some(rat(1, 2)));
        assert_eq!(e1.coefficient("Iτ"), Some(rat(0, 1)));
        let e2 = TwirlExpansion::new(2).unwrap();
        for (w, c) in [
            ("IIII", rat(3, 8)),
            ("ττττ", rat(3, 8)),
            ("IτIτ", rat(1, 8)),
            ("IττI", rat(1, 8)),
            ("τIIτ", rat(1, 8)),
            ("τIτI", rat(1, 8)),
            ("IIττ", rat(-1, 8)),
            ("ττII", rat(-1, 8)),
        ] {
            assert_eq!(e2.coefficient(w), Some(c), "{w}");
        }
        assert_eq!(e2.terms().len(), 8);
        assert!(e2.max_imaginary().is_zero());
        assert!(TwirlExpansion::new(0).is_err());
    }

    #[test]
    fn reflection_basis_diagonalizes_transpositions() {
        let cache = IrrepCache::new();
        for n in 2..=6 {
            for lambda in partitions(n, n) {
                let rep = cache.get(&lambda).unwrap();
                for i in 1..n {
                    for j in i + 1..=n {
                        let (q, s) = reflection_eigenbasis(&rep, i, j).unwrap();
                        let d = SparseMatrix::from_triplets(
                            rep.dim(),
                            s.iter()
                                .enumerate()
                                .map(|(a, &v)| (a, a, v as f64))
                                .collect(),
                        );
                        let recon = q.matmul(&d).matmul(&q.transpose()).to_dense();
                        let tau = rep.transposition_matrix(i, j).unwrap().to_dense();
                        assert!(max_abs_diff(&recon, &tau) < 1e-12, "{lambda} ({i},{j})");
                        let qtq = q.transpose().matmul(&q).to_dense();
                        assert!(max_abs_diff(&qtq, &Mat::identity(rep.dim(), rep.dim())) < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn spectral_twirl_matches_expansion() {
        let cache = IrrepCache::new();
        let opts = BlockOptions::default();
        for (s, pair) in [
            ("(2,1);(2,1)", (1, 2)),
            ("(2,1);(2,1)", (1, 3)),
            ("(2,1),(3);(2,1),(2,1)", (2, 3)),
            ("(3,1),(2,2);(3,1),(2,1,1)", (1, 4)),
            ("(2,1),(2,1),(2,1);(2,1),(2,1),(2,1)", (2, 3)),
        ] {
            let tuple = t(s);
            let block = twirl_swap_k(&tuple, &cache, pair, tuple.k(), &opts).unwrap();
            let dense = block.dense().unwrap();
            let expanded = twirl_swap_expanded(&tuple, &cache, pair, 4096).unwrap();
            assert!(max_abs_diff(dense, &expanded) < 1e-12, "{s}");
            assert!(max_abs_diff(&(dense * dense), dense) < 1e-10);
            assert!(dense_asymmetry(dense) < 1e-12);
        }
        assert!(twirl_swap_k(&t("(2,1);(2,1)"), &cache, (1, 2), 2, &opts).is_err());
        assert!(twirl_swap_k(&t("(2,1);(2,1)"), &cache, (2, 4), 1, &opts).is_err());
    }

    #[test]
    fn yjm_mask_examples() {
        let cache = IrrepCache::new();
        let opts = BlockOptions::default();
        let tuple = t("(2,1),(2,1);(2,1),(2,1)");
        let block = twirl_yjm_k2(&tuple, &cache, &opts).unwrap();
        let m = block.dense().unwrap();
        assert!(max_abs_diff(&(m * m), m) == 0.0);
        // Both (2,1) tableaux have the same second-order profile
        // (c2², c2c3, c3²) = (1, -1, 1), so nothing is cut at n = 3.
        let mask = yjm_mask(&tuple, &cache, YjmConvention::Inclusive).unwrap();
        assert!(mask.iter().all(|&k| k));
        // Linear terms separate them: c(2) = 1 versus -1.
        let linear = yjm_mask(&tuple, &cache, YjmConvention::WithLinear).unwrap();
        assert!(linear[0] && !linear[1]);
        // At n = 4 the second-order profiles of (3,1) tableaux differ.
        let tuple = t("(3,1),(3,1);(3,1),(3,1)");
        let mask = yjm_mask(&tuple, &cache, YjmConvention::Inclusive).unwrap();
        assert!(mask[0]);
        // ket (T0, T1), bra (T0, T0)
        assert!(!mask[3 * 9]);
    }

    #[test]
    fn small_channels_are_contractions_with_identity_fixed() {
        let cache = IrrepCache::new();
        let opts = BlockOptions::default();
        for s in [
            "(3),(2,1);(3),(2,1)",
            "(2,1),(2,1);(2,1),(2,1)",
            "(3,1),(2,2);(2,2),(3,1)",
        ] {
            let tuple = t(s);
            for kind in [
                GeometryKind::OpenChain,
                GeometryKind::PeriodicChain,
                GeometryKind::AllToAll,
            ] {
                let g = Geometry::new(kind, tuple.n()).unwrap();
                for ens in [Ensemble::SwapOnly, Ensemble::Cqa] {
                    let block = step_channel(&tuple, &cache, &g, ens, &opts).unwrap();
                    let m = block.dense().unwrap();
                    assert!(dense_asymmetry(m) < 1e-10);
                    let ev = symmetric_eigenvalues(m).unwrap();
                    assert!(
                        ev[0] > -1e-9 && ev[ev.len() - 1] < 1.0 + 1e-9,
                        "{s} {kind:?} {ens:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn cqa_is_yjm_sandwich() {
        let cache = IrrepCache::new();
        let opts = BlockOptions::default();
        let tuple = t("(3,1),(3,1);(3,1),(3,1)");
        let g = Geometry::new(GeometryKind::OpenChain, 4).unwrap();
        let c = step_channel(&tuple, &cache, &g, Ensemble::Cqa, &opts).unwrap();
        let s = step_channel(&tuple, &cache, &g, Ensemble::SwapOnly, &opts).unwrap();
        let y = twirl_yjm_k2(&tuple, &cache, &opts).unwrap();
        let (c, s, y) = (c.dense().unwrap(), s.dense().unwrap(), y.dense().unwrap());
        assert!(max_abs_diff(c, &(y * s * y)) < 1e-12);
        assert!(max_abs_diff(&(y * c * y), c) < 1e-12);
    }

    #[test]
    fn brickwork_layers_are_projections() {
        let cache = IrrepCache::new();
        let opts = BlockOptions::default();
        let tuple = t("(4),(3,1);(4),(3,1)");
        let (po, pe) = brickwork_layers(&tuple, &cache, &opts).unwrap();
        for layer in [po.dense().unwrap(), pe.dense().unwrap()] {
            assert!(max_abs_diff(&(layer * layer), layer) < 1e-10);
        }
        let step = brickwork_step(&tuple, &cache, 2, &opts).unwrap();
        let m = step.dense().unwrap();
        assert!(max_abs_diff(m, &(pe.dense().unwrap() * po.dense().unwrap())) < 1e-12);
        let sv = crate::linalg::singular_values(m).unwrap();
        assert!(sv[0] < 1.0 + 1e-9 && sv[1] < 1.0 - 1e-6 && *sv.last().unwrap() > -1e-12);
        assert!(step_channel(
            &tuple,
            &cache,
            &Geometry::new(GeometryKind::Brickwork, 4).unwrap(),
            Ensemble::SwapOnly,
            &opts
        )
        .is_err());
    }

    #[test]
    fn bulk_spectrum_is_translation_invariant() {
        let cache = IrrepCache::new();
        let opts = BlockOptions::default();
        let tuple = t("(3,2),(4,1);(3,2),(4,1)");
        let a = bulk_hamiltonian(&tuple, &cache, 3, 1, &opts).unwrap();
        let b = bulk_hamiltonian(&tuple, &cache, 3, 2, &opts).unwrap();
        let c = bulk_hamiltonian(&tuple, &cache, 3, 3, &opts).unwrap();
        let ea = symmetric_eigenvalues(a.dense().unwrap()).unwrap();
        for other in [b, c] {
            let eb = symmetric_eigenvalues(other.dense().unwrap()).unwrap();
            assert!(ea.iter().zip(&eb).all(|(x, y)| (x - y).abs() < 1e-9));
        }
        assert!(bulk_hamiltonian(&tuple, &cache, 3, 4, &opts).is_err());
    }

    #[test]
    fn matrix_free_blocks_agree_with_dense() {
        let cache = IrrepCache::new();
        let dense_opts = BlockOptions::default();
        let free_opts = BlockOptions {
            dense_threshold: 0,
            ..BlockOptions::default()
        };
        let tuple = t("(3,1),(2,2);(3,1),(2,2)");
        let g = Geometry::new(GeometryKind::PeriodicChain, 4).unwrap();
        let a = step_channel(&tuple, &cache, &g, Ensemble::Cqa, &dense_opts).unwrap();
        let b = step_channel(&tuple, &cache, &g, Ensemble::Cqa, &free_opts).unwrap();
        assert!(!b.is_dense());
        assert!(b.asymmetry(7) < 1e-12);
        assert!(max_abs_diff(a.dense().unwrap(), &b.to_dense(4096).unwrap()) < 1e-14);
        assert!(matches!(
            b.to_dense(10),
            Err(Error::DenseCapExceeded { .. })
        ));
        let mut buf = Vec::new();
        a.write_coordinates(&mut buf, 4096, 1e-14).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("% (3,1),(2,2);(3,1),(2,2) CqaStep"));
    }

    #[test]
    fn multiplicity_weights() {
        let tuple = t("(3),(2,1);(3),(2,1)");
        assert_eq!(tuple.multiplicity_weight(2).unwrap(), 4 * 2 * 4 * 2);
        assert_eq!(t("(1,1,1);(1,1,1)").multiplicity_weight(2).unwrap(), 0);
        let _ = p("(3)");
    }
}
