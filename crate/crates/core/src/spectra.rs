//! Eigenanalysis of moment blocks, the closed-form bounds they are compared
//! against, exact frame potentials and the scans behind the gap figures.

use std::ops::RangeInclusive;
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::{extremal_eigenpair, Extremal, LanczosOptions};
use crate::linalg::{singular_values, symmetric_eigenvalues, LinearOperator, OperatorChain};
use crate::moments::{
    all_to_all_hamiltonian, brickwork_step, bulk_hamiltonian, geometry_hamiltonian, BlockKind,
    BlockOptions, Geometry, GeometryKind, IrrepCache, MomentBlock, SectorTuple,
};
use crate::snpart::{dim_irrep, multiplicity, partitions, Partition};
use crate::yor::central_sum_eigenvalue;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    #[default]
    Auto,
    Dense,
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Dense,
    Iterative,
}

#[derive(Clone, Debug)]
pub struct SpectralOptions {
    pub mode: SolverMode,
    /// Eigenvalues within `tol` of 1 (channels) or 0 (Hamiltonians) are unit/kernel.
    pub tol: f64,
    pub dense_threshold: usize,
    /// Largest block an explicit dense solve will materialize.
    pub dense_cap: usize,
    pub lanczos: LanczosOptions,
    /// Upper limit on deflated unit/kernel vectors in iterative mode.
    pub max_deflation: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            mode: SolverMode::Auto,
            tol: 1e-6,
            dense_threshold: 4096,
            dense_cap: 16384,
            lanczos: LanczosOptions::default(),
            max_deflation: 256,
        }
    }
}

/// Result of one block eigenanalysis.
///
/// For channels `second_eigenvalue` is the largest eigenvalue below the unit
/// eigenspace and `gap = 1 - second_eigenvalue`; for Hamiltonians `unit_dim`
/// is the kernel dimension and `gap = second_eigenvalue` is the smallest
/// eigenvalue above it. `gap` is `None` when no such eigenvalue exists.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub tuple: String,
    pub kind: BlockKind,
    pub dim: usize,
    pub gap: Option<f64>,
    pub second_eigenvalue: Option<f64>,
    pub unit_dim: usize,
    pub solver: Solver,
    pub iterations: usize,
    pub residual: f64,
}

fn validate_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "tolerance {tol} outside (0, 0.5)"
        )));
    }
    Ok(())
}

/// Splits a spectrum into the unit part (values with `score <= tol`) and the
/// first value beyond it; `score` is the distance to the target eigenvalue.
fn classify(scores: &[f64], tol: f64) -> Result<(usize, Option<usize>)> {
    let coarse = scores.iter().filter(|&&s| s <= tol).count();
    let fine = scores.iter().filter(|&&s| s <= tol / 10.0).count();
    if coarse != fine {
        return Err(Error::AmbiguousCount { coarse, fine });
    }
    let next = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol)
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i);
    Ok((coarse, next))
}

struct Extremes {
    unit_dim: usize,
    next: Option<f64>,
    solver: Solver,
    iterations: usize,
    residual: f64,
}

/// Unit count and next eigenvalue of a symmetric operator whose target
/// eigenvalue (`1` when `top`, else `0`) is extremal.
fn extremes(
    op: &dyn LinearOperator,
    dense: Option<&faer::Mat<f64>>,
    top: bool,
    opts: &SpectralOptions,
) -> Result<Extremes> {
    let target = if top { 1.0 } else { 0.0 };
    let dim = op.dim();
    let use_dense = match opts.mode {
        SolverMode::Dense => true,
        SolverMode::Iterative => false,
        SolverMode::Auto => dense.is_some() || dim <= opts.dense_threshold,
    };
    if use_dense {
        let owned;
        let m = match dense {
            Some(m) => m,
            None => {
                if dim > opts.dense_cap {
                    return Err(Error::DenseCapExceeded {
                        dim,
                        cap: opts.dense_cap,
                    });
                }
                owned = op.to_dense();
                &owned
            }
        };
        let ev = symmetric_eigenvalues(m)?;
        let scores: Vec<f64> = ev.iter().map(|v| (v - target).abs()).collect();
        let (unit_dim, next) = classify(&scores, opts.tol)?;
        return Ok(Extremes {
            unit_dim,
            next: next.map(|i| ev[i]),
            solver: Solver::Dense,
            iterations: 0,
            residual: 0.0,
        });
    }
    let which = if top {
        Extremal::Largest
    } else {
        Extremal::Smallest
    };
    let mut found: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut residual: f64 = 0.0;
    let mut next = None;
    while found.len() < dim {
        if found.len() > opts.max_deflation {
            return Err(Error::SizeCap(format!(
                "more than {} unit eigenvectors; raise max_deflation",
                opts.max_deflation
            )));
        }
        let pair = extremal_eigenpair(op, which, &found, &opts.lanczos)?;
        iterations += pair.iterations;
        residual = residual.max(pair.residual);
        let score = (pair.value - target).abs();
        if score <= opts.tol / 10.0 {
            found.push(pair.vector);
        } else if score <= opts.tol {
            return Err(Error::AmbiguousCount {
                coarse: found.len() + 1,
                fine: found.len(),
            });
        } else {
            next = Some(pair.value);
            break;
        }
    }
    Ok(Extremes {
        unit_dim: found.len(),
        next,
        solver: Solver::Iterative,
        iterations,
        residual,
    })
}

/// Gap of a symmetric block: below the unit eigenspace for channels, above
/// the kernel for Hamiltonians.
pub fn spectral_gap(block: &MomentBlock, opts: &SpectralOptions) -> Result<SpectralReport> {
    validate_tol(opts.tol)?;
    if !block.kind().is_symmetric() {
        return Err(Error::NotSymmetric(block.asymmetry(opts.lanczos.seed)));
    }
    let top = block.kind().is_channel();
    let ex = extremes(block.operator(), block.dense(), top, opts)?;
    let gap = ex.next.map(|v| if top { 1.0 - v } else { v });
    Ok(SpectralReport {
        tuple: block.tuple().to_string(),
        kind: block.kind(),
        dim: block.dim(),
        gap,
        second_eigenvalue: ex.next,
        unit_dim: ex.unit_dim,
        solver: ex.solver,
        iterations: ex.iterations,
        residual: ex.residual,
    })
}

/// Number of eigenvalues above `1 - tol` of a channel block.
pub fn unit_eigenspace_dim(block: &MomentBlock, tol: f64, opts: &SpectralOptions) -> Result<usize> {
    if !block.kind().is_channel() || !block.kind().is_symmetric() {
        return Err(Error::InvalidArgument(format!(
            "{:?} is not a symmetric channel block",
            block.kind()
        )));
    }
    let opts = SpectralOptions {
        tol,
        ..opts.clone()
    };
    spectral_gap(block, &opts).map(|r| r.unit_dim)
}

/// Singular-value analysis of a non-symmetric channel (brickwork steps):
/// `unit_dim` counts singular values above `1 - tol`, and
/// `second_eigenvalue` holds the next singular value.
pub fn singular_gap(block: &MomentBlock, opts: &SpectralOptions) -> Result<SpectralReport> {
    validate_tol(opts.tol)?;
    let report = |unit_dim, next: Option<f64>, solver, iterations, residual| SpectralReport {
        tuple: block.tuple().to_string(),
        kind: block.kind(),
        dim: block.dim(),
        gap: next.map(|s| 1.0 - s),
        second_eigenvalue: next,
        unit_dim,
        solver,
        iterations,
        residual,
    };
    if let Some(m) = block.dense() {
        let sv = singular_values(m)?;
        let scores: Vec<f64> = sv.iter().map(|s| (1.0 - s).abs()).collect();
        let (unit, next) = classify(&scores, opts.tol)?;
        return Ok(report(unit, next.map(|i| sv[i]), Solver::Dense, 0, 0.0));
    }
    let adjoint = block
        .adjoint()
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("matrix-free block without adjoint".into()))?;
    let forward: Arc<dyn LinearOperator> = Arc::new(BlockRef(block.clone()));
    let normal = OperatorChain::new(vec![forward, adjoint])?;
    // σ >= 1 - tol  <=>  σ² >= (1 - tol)²
    let sq_tol = 1.0 - (1.0 - opts.tol) * (1.0 - opts.tol);
    let inner = SpectralOptions {
        tol: sq_tol,
        mode: SolverMode::Iterative,
        ..opts.clone()
    };
    let ex = extremes(&normal, None, true, &inner)?;
    Ok(report(
        ex.unit_dim,
        ex.next.map(|v| v.max(0.0).sqrt()),
        Solver::Iterative,
        ex.iterations,
        ex.residual,
    ))
}

struct BlockRef(MomentBlock);

impl LinearOperator for BlockRef {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.apply(x, y);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Knabe,
    AllToAll,
    Detectability,
    ConvergenceSteps,
    OneDesignSteps,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: BoundKind,
    pub inputs: Vec<(String, f64)>,
    pub value: f64,
    pub valid: bool,
}

/// Local-gap threshold `6/((m+1)(m+2))`.
pub fn knabe_threshold(m: usize) -> f64 {
    6.0 / ((m + 1) * (m + 2)) as f64
}

/// `5(m²+3m+1)/(6(m²+2m-3)) · (local_gap - 6/((m+1)(m+2)))`.
pub fn knabe_bound(m: usize, local_gap: f64) -> Result<BoundReport> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "Knabe bound needs m >= 2, got {m}"
        )));
    }
    if !local_gap.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "local gap {local_gap} is not finite"
        )));
    }
    let mf = m as f64;
    let prefactor = 5.0 * (mf * mf + 3.0 * mf + 1.0) / (6.0 * (mf * mf + 2.0 * mf - 3.0));
    let threshold = knabe_threshold(m);
    let value = prefactor * (local_gap - threshold);
    Ok(BoundReport {
        name: BoundKind::Knabe,
        inputs: vec![("m".into(), mf), ("local_gap".into(), local_gap)],
        value,
        valid: local_gap > threshold && value > 0.0,
    })
}

/// `1 + (n-2)/(m-2) · (gamma_m - 1)`.
pub fn all_to_all_bound(n: usize, m: usize, gamma_m: f64) -> Result<BoundReport> {
    if m <= 2 {
        return Err(Error::InvalidArgument(format!(
            "all-to-all bound needs m >= 3, got {m}"
        )));
    }
    if n < m {
        return Err(Error::InvalidArgument(format!(
            "all-to-all bound needs n >= m, got n = {n}, m = {m}"
        )));
    }
    let value = 1.0 + (n as f64 - 2.0) / (m as f64 - 2.0) * (gamma_m - 1.0);
    Ok(BoundReport {
        name: BoundKind::AllToAll,
        inputs: vec![
            ("n".into(), n as f64),
            ("m".into(), m as f64),
            ("gamma_m".into(), gamma_m),
        ],
        value,
        valid: value > 0.0,
    })
}

/// `1/(delta/4 + 1)`, the bound on the second singular value of a brickwork step.
pub fn detectability_bound(delta: f64) -> Result<BoundReport> {
    if delta.is_nan() || delta < 0.0 || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "detectability needs delta >= 0, got {delta}"
        )));
    }
    let value = 1.0 / (delta / 4.0 + 1.0);
    Ok(BoundReport {
        name: BoundKind::Detectability,
        inputs: vec![("delta".into(), delta)],
        value,
        valid: value > 0.0,
    })
}

/// Ceiling that ignores floating noise a few ulps above an integer.
fn ceil_steps(x: f64) -> Result<u64> {
    if !x.is_finite() || x < 0.0 || x > u64::MAX as f64 {
        return Err(Error::Overflow("step count"));
    }
    let r = x.round();
    if (x - r).abs() <= 1e-12 * x.abs().max(1.0) {
        return Ok(r as u64);
    }
    Ok(x.ceil() as u64)
}

/// `⌈(2kn/delta) ln(d/epsilon)⌉`.
pub fn convergence_steps(k: usize, n: usize, d: usize, epsilon: f64, delta: f64) -> Result<u64> {
    if k == 0 || n == 0 || d == 0 {
        return Err(Error::InvalidArgument("k, n and d must be positive".into()));
    }
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive, got {delta}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < d as f64) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < epsilon < d, got epsilon = {epsilon}, d = {d}"
        )));
    }
    ceil_steps(2.0 * (k * n) as f64 / delta * (d as f64 / epsilon).ln())
}

/// `⌈(n-1)(2n ln d + ln(1/epsilon))⌉`.
pub fn one_design_steps(n: usize, d: usize, epsilon: f64) -> Result<u64> {
    if n < 2 || d < 2 {
        return Err(Error::InvalidArgument(format!(
            "need n >= 2 and d >= 2, got n = {n}, d = {d}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < epsilon < 1, got {epsilon}"
        )));
    }
    let nf = n as f64;
    ceil_steps((nf - 1.0) * (2.0 * nf * (d as f64).ln() + (1.0 / epsilon).ln()))
}

pub fn convergence_report(
    k: usize,
    n: usize,
    d: usize,
    epsilon: f64,
    delta: f64,
) -> Result<BoundReport> {
    let steps = convergence_steps(k, n, d, epsilon, delta)?;
    Ok(BoundReport {
        name: BoundKind::ConvergenceSteps,
        inputs: vec![
            ("k".into(), k as f64),
            ("n".into(), n as f64),
            ("d".into(), d as f64),
            ("epsilon".into(), epsilon),
            ("delta".into(), delta),
        ],
        value: steps as f64,
        valid: true,
    })
}

pub fn one_design_report(n: usize, d: usize, epsilon: f64) -> Result<BoundReport> {
    let steps = one_design_steps(n, d, epsilon)?;
    Ok(BoundReport {
        name: BoundKind::OneDesignSteps,
        inputs: vec![
            ("n".into(), n as f64),
            ("d".into(), d as f64),
            ("epsilon".into(), epsilon),
        ],
        value: steps as f64,
        valid: true,
    })
}

fn sectors(n: usize, d: usize) -> Result<Vec<(Partition, u128, u64)>> {
    partitions(n, d)
        .into_iter()
        .map(|p| {
            let m = multiplicity(&p, d)? as u128;
            let f = dim_irrep(&p)?;
            Ok((p, m, f))
        })
        .collect()
}

/// `dim Comm_1 = Σ_λ m_λ²` of the SU(d)-symmetric unitaries.
pub fn haar_commutant_dim_k1(n: usize, d: usize) -> Result<u128> {
    sectors(n, d)?
        .iter()
        .try_fold(0u128, |acc, (_, m, _)| acc.checked_add(m.checked_mul(*m)?))
        .ok_or(Error::Overflow("commutant dimension"))
}

/// `dim Comm_2 = Σ_λ m_λ⁴ (2 if d_λ >= 2 else 1) + 2 Σ_{λ≠μ ordered} m_λ² m_μ²`.
pub fn haar_commutant_dim_k2(n: usize, d: usize) -> Result<u128> {
    let s = sectors(n, d)?;
    let overflow = || Error::Overflow("commutant dimension");
    let mut total = 0u128;
    for (i, (_, m, f)) in s.iter().enumerate() {
        let m2 = m.checked_mul(*m).ok_or_else(overflow)?;
        let m4 = m2.checked_mul(m2).ok_or_else(overflow)?;
        total = total
            .checked_add(if *f >= 2 { 2 * m4 } else { m4 })
            .ok_or_else(overflow)?;
        for (j, (_, mu, _)) in s.iter().enumerate() {
            if i != j {
                let term = m2
                    .checked_mul(mu * mu)
                    .and_then(|t| t.checked_mul(2))
                    .ok_or_else(overflow)?;
                total = total.checked_add(term).ok_or_else(overflow)?;
            }
        }
    }
    Ok(total)
}

/// `dim Comm_k` of Haar-random `U(f)` acting as `U^{⊗k}` on `(C^f)^{⊗k}`:
/// `Σ_{μ ⊢ k, rows(μ) <= f} (dim μ)²`, which is `k!` once `f >= k`.
pub fn unitary_commutant_dim(f: usize, k: usize) -> Result<u128> {
    if f == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "need f >= 1 and k >= 1, got f = {f}, k = {k}"
        )));
    }
    partitions(k, f).iter().try_fold(0u128, |acc, mu| {
        let d = dim_irrep(mu)? as u128;
        Ok(acc + d * d)
    })
}

/// Exact second frame potential of the SU(2)-symmetric Haar measure on `n` qubits.
pub fn frame_potential_exact_k2(n: usize) -> Result<u128> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    haar_commutant_dim_k2(n, 2)
}

/// Literal qubit formula `(n+1)⁴ + 2Σ_{r>=1}(n-2r+1)⁴ + 2Σ_{r≠s}(n-2r+1)²(n-2s+1)²`.
pub fn frame_potential_paper_k2(n: usize) -> Result<u128> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    let half = n / 2;
    let w = |r: usize| (n - 2 * r + 1) as u128;
    let mut total = w(0).pow(4);
    for r in 1..=half {
        total += 2 * w(r).pow(4);
    }
    for r in 0..=half {
        for s in 0..=half {
            if r != s {
                total += 2 * w(r).pow(2) * w(s).pow(2);
            }
        }
    }
    Ok(total)
}

/// Exact rank of an integer matrix by fraction-free (Bareiss) elimination.
pub fn integer_rank(rows: &[Vec<BigInt>]) -> usize {
    let mut a: Vec<Vec<BigInt>> = rows.to_vec();
    let nrows = a.len();
    let ncols = a.first().map_or(0, Vec::len);
    let mut rank = 0;
    let mut prev = BigInt::from(1);
    for col in 0..ncols {
        let Some(pivot) = (rank..nrows).find(|&r| !a[r][col].is_zero()) else {
            continue;
        };
        a.swap(rank, pivot);
        for r in rank + 1..nrows {
            for c in col + 1..ncols {
                let v = (&a[rank][col] * &a[r][c] - &a[r][col] * &a[rank][c]) / &prev;
                a[r][c] = v;
            }
            a[r][col] = BigInt::zero();
        }
        prev = a[rank][col].abs();
        rank += 1;
        if rank == nrows {
            break;
        }
    }
    rank
}

/// Rank of `V[l][λ] = s_λ^l`, `l = 0..=l_max`, over qubit sectors, where
/// `s_λ` is the scalar of the sum of all transpositions on `S^λ`.
pub fn phase_basis_rank(n: usize, l_max: usize) -> Result<usize> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    let nodes: Vec<BigInt> = partitions(n, 2)
        .iter()
        .map(|p| BigInt::from(central_sum_eigenvalue(p)))
        .collect();
    let rows: Vec<Vec<BigInt>> = (0..=l_max)
        .map(|l| {
            nodes
                .iter()
                .map(|s| num_traits::pow(s.clone(), l))
                .collect()
        })
        .collect();
    Ok(integer_rank(&rows))
}

/// One spectral-equivalence class of sector tuples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TupleClass {
    pub representative: SectorTuple,
    /// Number of ordered tuples in the class.
    pub members: u64,
    /// Σ over members of the multiplicity weight.
    pub weight: u128,
}

/// All `2k`-tuples of `d`-row partitions of `n`, grouped by
/// [`SectorTuple::canonical`], in order of the representatives.
pub fn enumerate_tuples(n: usize, d: usize, k: usize) -> Result<Vec<TupleClass>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let shapes = partitions(n, d);
    let p = shapes.len();
    let total = p
        .checked_pow(2 * k as u32)
        .ok_or(Error::Overflow("tuple count"))?;
    let mut classes: std::collections::BTreeMap<SectorTuple, (u64, u128)> = Default::default();
    for code in 0..total {
        let mut c = code;
        let mut pick = Vec::with_capacity(2 * k);
        for _ in 0..2 * k {
            pick.push(shapes[c % p].clone());
            c /= p;
        }
        pick.reverse();
        let bra = pick.split_off(k);
        let tuple = SectorTuple::new(pick, bra)?;
        let w = tuple.multiplicity_weight(d)?;
        let entry = classes.entry(tuple.canonical()).or_insert((0, 0));
        entry.0 += 1;
        entry.1 += w;
    }
    Ok(classes
        .into_iter()
        .map(|(representative, (members, weight))| TupleClass {
            representative,
            members,
            weight,
        })
        .collect())
}

/// 17 significant digits, positional for moderate magnitudes.
pub fn fmt_sig17(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.0000000000000000".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..16).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // Rounding can carry into a new leading digit; re-check the digit count.
        let digits = s.chars().filter(char::is_ascii_digit).collect::<String>();
        if digits.trim_start_matches('0').len() > 17 && decimals > 0 {
            let decimals = decimals - 1;
            return format!("{x:.decimals$}");
        }
        s
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowConvention {
    /// `m` counts projection terms: window of `m + 1` sites.
    Projections,
    /// `m` counts sites: `m - 1` projection terms.
    Sites,
}

impl WindowConvention {
    pub fn width(self, m: usize) -> usize {
        match self {
            Self::Projections => m + 1,
            Self::Sites => m,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub enum TuplePolicy {
    #[default]
    All,
    List(Vec<SectorTuple>),
}

#[derive(Clone, Debug)]
pub struct ScanOptions {
    pub d: usize,
    pub k: usize,
    /// Rows needing a block larger than this are reported infeasible.
    pub max_dim: usize,
    /// Minimize over the tuples within `max_dim` instead of marking the row
    /// infeasible; the row then records how many tuples it skipped.
    pub skip_oversized: bool,
    pub tuples: TuplePolicy,
    pub block: BlockOptions,
    pub spectral: SpectralOptions,
}

/// Scans touch many mid-sized blocks; Lanczos beats a dense eigensolve well
/// below the single-block default.
pub const SCAN_DENSE_THRESHOLD: usize = 512;

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            d: 2,
            k: 2,
            max_dim: 65536,
            skip_oversized: false,
            tuples: TuplePolicy::All,
            block: BlockOptions {
                dense_threshold: SCAN_DENSE_THRESHOLD,
                ..BlockOptions::default()
            },
            spectral: SpectralOptions {
                dense_threshold: SCAN_DENSE_THRESHOLD,
                ..SpectralOptions::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Complete,
    Infeasible(String),
    Failed(String),
}

/// One row of a gap scan: the minimizing tuple and its block data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanRow {
    pub m_or_n: usize,
    pub tuple: Option<String>,
    pub dim: Option<usize>,
    pub gap: Option<f64>,
    /// Eigenvalue realizing the gap (equal to `gap` for Hamiltonians).
    pub second_eig: Option<f64>,
    pub unit_dim: Option<usize>,
    pub threshold: Option<f64>,
    pub bound: Option<f64>,
    pub valid: Option<bool>,
    pub status: RowStatus,
    /// Tuples left out for exceeding the dimension cap; nonzero makes the
    /// gap an upper bound on the true minimum.
    #[serde(default)]
    pub skipped: usize,
}

pub const GAP_SCAN_HEADER: &str = "m_or_n,tuple,dim,gap,second_eig,unit_dim,threshold,bound,valid";
pub const FRAME_POTENTIAL_HEADER: &str = "n,exact,paper_formula,mc_estimate,mc_stderr";

impl ScanRow {
    fn empty(m_or_n: usize, status: RowStatus) -> Self {
        Self {
            m_or_n,
            tuple: None,
            dim: None,
            gap: None,
            second_eig: None,
            unit_dim: None,
            threshold: None,
            bound: None,
            valid: None,
            status,
            skipped: 0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.status == RowStatus::Complete
    }

    /// CSV record; infeasible and failed rows carry the reason in the tuple column.
    pub fn to_csv(&self) -> String {
        let f = |x: Option<f64>| x.map(fmt_sig17).unwrap_or_default();
        let tuple = match &self.status {
            RowStatus::Complete => self.tuple.clone().unwrap_or_default(),
            RowStatus::Infeasible(why) => format!("infeasible: {why}"),
            RowStatus::Failed(why) => format!("failed: {why}"),
        };
        format!(
            "{},\"{}\",{},{},{},{},{},{},{}",
            self.m_or_n,
            tuple.replace('"', "'"),
            self.dim.map(|d| d.to_string()).unwrap_or_default(),
            f(self.gap),
            f(self.second_eig),
            self.unit_dim.map(|d| d.to_string()).unwrap_or_default(),
            f(self.threshold),
            f(self.bound),
            self.valid.map(|v| v.to_string()).unwrap_or_default(),
        )
    }
}

/// The smallest gap over a set of tuples and the report that realizes it.
#[derive(Clone, Debug)]
pub struct MinimumGap {
    pub report: SpectralReport,
    pub evaluated: usize,
}

type Analyzer = fn(&MomentBlock, &SpectralOptions) -> Result<SpectralReport>;

/// Minimizes the block gap over `tuples`; `None` when no block has a gap.
pub fn minimize_gap<F>(
    tuples: &[SectorTuple],
    build: F,
    opts: &SpectralOptions,
) -> Result<Option<MinimumGap>>
where
    F: Fn(&SectorTuple) -> Result<MomentBlock> + Sync,
{
    minimize_with(tuples, build, spectral_gap, opts)
}

fn minimize_with<F>(
    tuples: &[SectorTuple],
    build: F,
    analyze: Analyzer,
    opts: &SpectralOptions,
) -> Result<Option<MinimumGap>>
where
    F: Fn(&SectorTuple) -> Result<MomentBlock> + Sync,
{
    let reports: Vec<SpectralReport> = tuples
        .par_iter()
        .map(|t| build(t).and_then(|b| analyze(&b, opts)))
        .collect::<Result<_>>()?;
    let evaluated = reports.len();
    Ok(reports
        .into_iter()
        .filter(|r| r.gap.is_some())
        .min_by(|a, b| a.gap.unwrap().total_cmp(&b.gap.unwrap()))
        .map(|report| MinimumGap { report, evaluated }))
}

fn scan_tuples(n: usize, opts: &ScanOptions) -> Result<Vec<SectorTuple>> {
    match &opts.tuples {
        TuplePolicy::All => Ok(enumerate_tuples(n, opts.d, opts.k)?
            .into_iter()
            .map(|c| c.representative)
            .collect()),
        TuplePolicy::List(list) => {
            let mut out: Vec<SectorTuple> = list
                .iter()
                .filter(|t| t.n() == n && t.k() == opts.k)
                .map(SectorTuple::canonical)
                .collect();
            out.sort();
            out.dedup();
            Ok(out)
        }
    }
}

fn scan_row<F>(label: usize, n: usize, opts: &ScanOptions, build: F) -> ScanRow
where
    F: Fn(&SectorTuple) -> Result<MomentBlock> + Sync,
{
    scan_row_with(label, n, opts, build, spectral_gap)
}

fn scan_row_with<F>(
    label: usize,
    n: usize,
    opts: &ScanOptions,
    build: F,
    analyze: Analyzer,
) -> ScanRow
where
    F: Fn(&SectorTuple) -> Result<MomentBlock> + Sync,
{
    let tuples = match scan_tuples(n, opts) {
        Ok(t) => t,
        Err(e) => return ScanRow::empty(label, RowStatus::Failed(e.to_string())),
    };
    if tuples.is_empty() {
        return ScanRow::empty(
            label,
            RowStatus::Infeasible(format!("no sector tuples with n = {n}")),
        );
    }
    let fits = |t: &SectorTuple| t.block_dim().is_ok_and(|d| d <= opts.max_dim);
    let total = tuples.len();
    let tuples: Vec<SectorTuple> = if opts.skip_oversized {
        tuples.into_iter().filter(fits).collect()
    } else {
        tuples
    };
    let skipped = total - tuples.len();
    let largest = tuples
        .iter()
        .map(|t| t.block_dim().unwrap_or(usize::MAX))
        .max()
        .unwrap_or(0);
    if tuples.is_empty() {
        return ScanRow::empty(
            label,
            RowStatus::Infeasible(format!(
                "all {total} tuples exceed the dimension cap {}",
                opts.max_dim
            )),
        );
    }
    if largest > opts.max_dim {
        return ScanRow::empty(
            label,
            RowStatus::Infeasible(format!(
                "block dimension {largest} exceeds cap {}",
                opts.max_dim
            )),
        );
    }
    match minimize_with(&tuples, build, analyze, &opts.spectral) {
        Ok(Some(min)) => ScanRow {
            skipped,
            m_or_n: label,
            tuple: Some(min.report.tuple.clone()),
            dim: Some(min.report.dim),
            gap: min.report.gap,
            second_eig: min.report.second_eigenvalue,
            unit_dim: Some(min.report.unit_dim),
            threshold: None,
            bound: None,
            valid: None,
            status: RowStatus::Complete,
        },
        Ok(None) => ScanRow::empty(
            label,
            RowStatus::Failed("no block has a nonzero eigenvalue".into()),
        ),
        Err(e) => ScanRow::empty(label, RowStatus::Failed(e.to_string())),
    }
}

/// Bulk gaps of `Σ (I - T^{(i,i+1)})` over a window, minimized over tuples,
/// with the Knabe threshold and bound for each `m`. Rows are passed to
/// `on_row` as soon as they finish.
pub fn bulk_gap_scan(
    m_range: RangeInclusive<usize>,
    convention: WindowConvention,
    cache: &IrrepCache,
    opts: &ScanOptions,
    mut on_row: impl FnMut(&ScanRow),
) -> Vec<ScanRow> {
    let mut rows = Vec::new();
    for m in m_range {
        let width = convention.width(m);
        let mut row = if width < 2 {
            ScanRow::empty(
                m,
                RowStatus::Infeasible(format!("window of width {width} has no projection")),
            )
        } else {
            scan_row(m, width, opts, |t| {
                bulk_hamiltonian(t, cache, width, 1, &opts.block)
            })
        };
        if m >= 2 {
            row.threshold = Some(knabe_threshold(m));
            if let Some(gap) = row.gap {
                if let Ok(b) = knabe_bound(m, gap) {
                    row.bound = Some(b.value);
                    row.valid = Some(b.valid);
                }
            }
        }
        on_row(&row);
        rows.push(row);
    }
    rows
}

/// Gaps of the all-to-all Hamiltonian `Σ_{i<j} (I - T^{(i,j)})` per `n`.
pub fn all_to_all_gap_scan(
    n_range: RangeInclusive<usize>,
    cache: &IrrepCache,
    opts: &ScanOptions,
    mut on_row: impl FnMut(&ScanRow),
) -> Vec<ScanRow> {
    let mut rows = Vec::new();
    for n in n_range {
        let row = if n < 2 {
            ScanRow::empty(n, RowStatus::Infeasible("n must be at least 2".into()))
        } else {
            scan_row(n, n, opts, |t| {
                all_to_all_hamiltonian(t, cache, &opts.block)
            })
        };
        on_row(&row);
        rows.push(row);
    }
    rows
}

/// Gaps of the full open-chain Hamiltonian `Σ_{j<n} (I - T^{(j,j+1)})` per `n`.
pub fn chain_gap_scan(
    n_range: RangeInclusive<usize>,
    cache: &IrrepCache,
    opts: &ScanOptions,
    mut on_row: impl FnMut(&ScanRow),
) -> Vec<ScanRow> {
    let mut rows = Vec::new();
    for n in n_range {
        let row = if n < 2 {
            ScanRow::empty(n, RowStatus::Infeasible("n must be at least 2".into()))
        } else {
            scan_row(n, n, opts, |t| {
                bulk_hamiltonian(t, cache, n, 1, &opts.block)
            })
        };
        on_row(&row);
        rows.push(row);
    }
    rows
}

/// Brickwork steps per `n`: the smallest singular gap `1 - σ₂` over tuples,
/// checked against the detectability bound `σ₂ <= 1/(Δ/4 + 1)` where `Δ` is
/// the open-chain gap at the same `n`. The `threshold` column carries `Δ`.
pub fn brickwork_gap_scan(
    n_range: RangeInclusive<usize>,
    cache: &IrrepCache,
    opts: &ScanOptions,
    mut on_row: impl FnMut(&ScanRow),
) -> Vec<ScanRow> {
    let mut rows = Vec::new();
    for n in n_range {
        let mut row = if n < 3 {
            ScanRow::empty(n, RowStatus::Infeasible("brickwork needs n >= 3".into()))
        } else {
            scan_row_with(
                n,
                n,
                opts,
                |t| brickwork_step(t, cache, opts.k, &opts.block),
                singular_gap,
            )
        };
        if row.is_complete() {
            let chain = scan_row(n, n, opts, |t| {
                bulk_hamiltonian(t, cache, n, 1, &opts.block)
            });
            match (chain.status, chain.gap) {
                (RowStatus::Complete, Some(delta)) => {
                    row.threshold = Some(delta);
                    if let (Ok(b), Some(sigma)) = (detectability_bound(delta), row.second_eig) {
                        row.bound = Some(b.value);
                        row.valid = Some(sigma <= b.value + 1e-12);
                    }
                }
                (status, _) => {
                    row.status =
                        RowStatus::Failed(format!("open-chain gap unavailable: {status:?}"))
                }
            }
        }
        on_row(&row);
        rows.push(row);
    }
    rows
}

/// Whole-system gap scan over `n` for any geometry; brickwork rows report
/// singular gaps as in [`brickwork_gap_scan`].
pub fn geometry_gap_scan(
    kind: GeometryKind,
    n_range: RangeInclusive<usize>,
    cache: &IrrepCache,
    opts: &ScanOptions,
    mut on_row: impl FnMut(&ScanRow),
) -> Vec<ScanRow> {
    match kind {
        GeometryKind::Brickwork => return brickwork_gap_scan(n_range, cache, opts, on_row),
        GeometryKind::AllToAll => return all_to_all_gap_scan(n_range, cache, opts, on_row),
        GeometryKind::OpenChain => return chain_gap_scan(n_range, cache, opts, on_row),
        GeometryKind::PeriodicChain => {}
    }
    let mut rows = Vec::new();
    for n in n_range {
        let row = match Geometry::new(kind, n) {
            Ok(g) => scan_row(n, n, opts, |t| {
                geometry_hamiltonian(t, cache, &g, &opts.block)
            }),
            Err(e) => ScanRow::empty(n, RowStatus::Infeasible(e.to_string())),
        };
        on_row(&row);
        rows.push(row);
    }
    rows
}

/// Least-squares exponent `alpha` of `gap ≈ C n^{-alpha}` over `(n, gap)` points.
pub fn power_law_exponent(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, g)| g.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}
