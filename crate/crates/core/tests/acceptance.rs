//! Acceptance criteria A1–A12, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines always reach the terminal.
//! A12 is reported only; any failure among A1–A11 fails the target.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use faer::Mat;
use num_rational::BigRational;
use symdesign_core::moments::{step_channel, twirl_swap_k};
use symdesign_core::oracle::{
    frame_potential_mc, full_channel_eigencheck, max_complex_deviation, twirl_quadrature_factors,
};
use symdesign_core::spectra::{
    all_to_all_bound, all_to_all_gap_scan, bulk_gap_scan, chain_gap_scan, convergence_steps,
    detectability_bound, enumerate_tuples, frame_potential_exact_k2, frame_potential_paper_k2,
    knabe_bound, knabe_threshold, minimize_gap, one_design_steps, phase_basis_rank,
    power_law_exponent,
};
use symdesign_core::{
    build_irrep, bulk_hamiltonian, dim_irrep, multiplicity, partitions, representation_defects,
    spectral_gap, BlockOptions, Ensemble, Geometry, GeometryKind, IrrepCache, Partition, RowStatus,
    ScanOptions, SectorTuple, SolverMode, SpectralOptions, TwirlExpansion, WindowConvention,
};

type Verdict = Result<(bool, String), String>;

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// A1: two-projection bulk gap on qubits, at n = 3 and embedded in n = 4, 5.
fn a1() -> Verdict {
    let cache = IrrepCache::new();
    let opts = BlockOptions::default();
    let mut gaps = Vec::new();
    for n in 3..=5 {
        let tuples: Vec<SectorTuple> = enumerate_tuples(n, 2, 2)
            .map_err(fail)?
            .into_iter()
            .map(|c| c.representative)
            .collect();
        let min = minimize_gap(
            &tuples,
            |t| bulk_hamiltonian(t, &cache, 3, 1, &opts),
            &SpectralOptions::default(),
        )
        .map_err(fail)?
        .ok_or("no gap")?;
        gaps.push(min.report.gap.ok_or("no gap")?);
    }
    let ok = gaps.iter().all(|g| (g - 0.375).abs() <= 1e-10);
    Ok((ok, format!("gaps at n = 3, 4, 5: {gaps:?}")))
}

/// A2: the qutrit (3,2,1) block of dimension 65536, solved matrix-free.
fn a2() -> Verdict {
    let cache = IrrepCache::new();
    let lambda: Partition = "3,2,1".parse().map_err(fail)?;
    let tuple = SectorTuple::uniform(&lambda, 2).map_err(fail)?;
    let g = Geometry::new(GeometryKind::OpenChain, 6).map_err(fail)?;
    let opts = SpectralOptions {
        mode: SolverMode::Iterative,
        ..SpectralOptions::default()
    };
    let mut counts = Vec::new();
    let mut worst_residual: f64 = 0.0;
    for ens in [Ensemble::SwapOnly, Ensemble::Cqa] {
        let block =
            step_channel(&tuple, &cache, &g, ens, &BlockOptions::default()).map_err(fail)?;
        let r = spectral_gap(&block, &opts).map_err(fail)?;
        counts.push(r.unit_dim);
        worst_residual = worst_residual.max(r.residual);
    }
    let ok = counts == [3, 2] && worst_residual <= 1e-8;
    Ok((
        ok,
        format!(
            "swap-only {}, CQA {}, residual {worst_residual:.1e}",
            counts[0], counts[1]
        ),
    ))
}

/// A3: bulk gaps strictly below the Knabe threshold for m = 2..6, bounds non-positive.
fn a3() -> Verdict {
    let rows = bulk_gap_scan(
        2..=6,
        WindowConvention::Projections,
        &IrrepCache::new(),
        &ScanOptions::default(),
        |_| {},
    );
    let mut ok = true;
    let mut notes = Vec::new();
    for r in &rows {
        let (Some(gap), Some(bound)) = (r.gap, r.bound) else {
            return Ok((
                false,
                format!("m = {} incomplete: {:?}", r.m_or_n, r.status),
            ));
        };
        let threshold = knabe_threshold(r.m_or_n);
        ok &= threshold - gap > 1e-6 && bound <= 0.0 && r.valid == Some(false);
        notes.push(format!("m={} {gap:.6}<{threshold:.6}", r.m_or_n));
    }
    Ok((ok, notes.join(" ")))
}

/// A4: all-to-all gaps over n = 4..7 vary by less than 25%.
fn a4() -> Verdict {
    let rows = all_to_all_gap_scan(4..=7, &IrrepCache::new(), &ScanOptions::default(), |_| {});
    let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
    if gaps.len() != 4 {
        return Ok((false, format!("only {} of 4 rows complete", gaps.len())));
    }
    let (lo, hi) = gaps
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &g| (l.min(g), h.max(g)));
    let spread = (hi - lo) / hi;
    Ok((
        spread < 0.25,
        format!("gaps {gaps:.6?}, spread {:.1}%", 100.0 * spread),
    ))
}

/// A5: exact and closed-form frame potentials agree for 3 <= n <= 12; MC within 3σ at n = 2, 3, 4.
fn a5() -> Verdict {
    for n in 3..=12 {
        let (e, p) = (
            frame_potential_exact_k2(n).map_err(fail)?,
            frame_potential_paper_k2(n).map_err(fail)?,
        );
        if e != p {
            return Ok((false, format!("n = {n}: exact {e}, formula {p}")));
        }
    }
    let mut ok = true;
    let mut notes = Vec::new();
    for (n, expect) in [(2, 118.0), (3, 544.0), (4, 1825.0)] {
        let mc = frame_potential_mc(n, 2, 1_000_000, 2024).map_err(fail)?;
        let z = (mc.estimate - expect) / mc.stderr;
        ok &= z.abs() <= 3.0;
        notes.push(format!("n={n} {:.2}±{:.2}", mc.estimate, mc.stderr));
    }
    Ok((ok, notes.join(" ")))
}

/// A6: exact k = 2 coefficients, and block twirls against quadrature for k = 1, 2, 3.
fn a6() -> Verdict {
    let e = TwirlExpansion::new(2).map_err(fail)?;
    let r = |n: i64| BigRational::new(n.into(), 8.into());
    let expect = [
        ("IIII", r(3)),
        ("ττττ", r(3)),
        ("IτIτ", r(1)),
        ("IττI", r(1)),
        ("τIIτ", r(1)),
        ("τIτI", r(1)),
        ("IIττ", r(-1)),
        ("ττII", r(-1)),
    ];
    let exact = e.terms().len() == 8
        && expect
            .iter()
            .all(|(w, c)| e.coefficient(w).as_ref() == Some(c));

    let cache = IrrepCache::new();
    let mut worst: f64 = 0.0;
    for (ket, bra) in [
        (vec!["2,1"], vec!["2,1"]),
        (vec!["2,1", "3"], vec!["3", "2,1"]),
        (vec!["3,1", "2,2"], vec!["2,2", "3,1"]),
        (vec!["2,1", "2,1", "3"], vec!["2,1", "3", "2,1"]),
    ] {
        let parse = |v: &[&str]| {
            v.iter()
                .map(|s| s.parse::<Partition>())
                .collect::<Result<Vec<_>, _>>()
        };
        let (ket, bra) = (parse(&ket).map_err(fail)?, parse(&bra).map_err(fail)?);
        let tuple = SectorTuple::new(ket.clone(), bra.clone()).map_err(fail)?;
        let n = tuple.n();
        let taus = |ps: &[Partition]| -> Result<Vec<Mat<f64>>, String> {
            ps.iter()
                .map(|p| {
                    Ok(cache
                        .get(p)
                        .map_err(fail)?
                        .transposition_matrix(1, n)
                        .map_err(fail)?
                        .to_dense())
                })
                .collect()
        };
        let q = twirl_quadrature_factors(&taus(&ket)?, &taus(&bra)?, 1024).map_err(fail)?;
        let block = twirl_swap_k(&tuple, &cache, (1, n), tuple.k(), &BlockOptions::default())
            .map_err(fail)?;
        worst = worst.max(max_complex_deviation(
            &q,
            &block.to_dense(4096).map_err(fail)?,
        ));
    }
    Ok((
        exact && worst <= 1e-10,
        format!("coefficients exact: {exact}, quadrature deviation {worst:.1e}"),
    ))
}

/// A7: involution, braid, YJM recursion and contents for every shape with n <= 7.
fn a7() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut shapes = 0;
    for n in 1..=7 {
        for lambda in partitions(n, n) {
            let d =
                representation_defects(&build_irrep(&lambda, n).map_err(fail)?).map_err(fail)?;
            if !d.passes(1e-12) {
                return Ok((false, format!("{lambda}: {d:?}")));
            }
            worst = worst.max(d.max());
            shapes += 1;
        }
    }
    Ok((true, format!("{shapes} shapes, max defect {worst:.1e}")))
}

/// A8: Σ m_λ d_λ = d^n, n <= 8 for d = 2 and n <= 5 for d = 3.
fn a8() -> Verdict {
    for (d, n_max) in [(2usize, 8usize), (3, 5)] {
        for n in 1..=n_max {
            let mut total = 0u64;
            for p in partitions(n, d) {
                total += multiplicity(&p, d).map_err(fail)? * dim_irrep(&p).map_err(fail)?;
            }
            if total != (d as u64).pow(n as u32) {
                return Ok((false, format!("n = {n}, d = {d}: {total}")));
            }
        }
    }
    Ok((true, "exact for all listed (n, d)".into()))
}

/// A9: phase_basis_rank(n, ⌊n/2⌋) = ⌊n/2⌋ + 1 = p(n, 2).
fn a9() -> Verdict {
    for n in 2..=20 {
        let rank = phase_basis_rank(n, n / 2).map_err(fail)?;
        if rank != n / 2 + 1 || rank != partitions(n, 2).len() {
            return Ok((false, format!("n = {n}: rank {rank}")));
        }
    }
    Ok((true, "full rank for 2 <= n <= 20".into()))
}

/// A10: the full 4096-dimensional n = 3, k = 2 channel against its blocks.
fn a10() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for ens in [Ensemble::SwapOnly, Ensemble::Cqa] {
        let r = full_channel_eigencheck(3, 2, 2, ens).map_err(fail)?;
        ok &= r.dim == 4096
            && r.unit_count == 544
            && r.block_unit_count == 544
            && r.spectrum_deviation <= 1e-8;
        notes.push(format!(
            "{ens:?}: {} units, deviation {:.1e}",
            r.unit_count, r.spectrum_deviation
        ));
    }
    Ok((ok, notes.join("; ")))
}

/// A11: worked examples of every bound calculator.
fn a11() -> Verdict {
    let knabe = knabe_bound(2, 0.375).map_err(fail)?;
    let boundary = knabe_bound(2, knabe_threshold(2)).map_err(fail)?;
    let a2a = all_to_all_bound(6, 4, 0.9).map_err(fail)?;
    let fixed = all_to_all_bound(40, 4, 1.0).map_err(fail)?;
    let checks = [
        (knabe.value - (-11.0 / 48.0)).abs() <= 1e-15 && !knabe.valid,
        boundary.value == 0.0 && !boundary.valid,
        (a2a.value - 0.8).abs() <= 1e-15,
        fixed.value == 1.0,
        detectability_bound(0.0).map_err(fail)?.value == 1.0,
        detectability_bound(4.0).map_err(fail)?.value == 0.5,
        convergence_steps(2, 10, 2, 0.01, 0.1).map_err(fail)? == 2120,
        convergence_steps(2, 4, 2, 2.0, 0.1).is_err(),
        one_design_steps(5, 2, 0.01).map_err(fail)? == 47,
    ];
    let passed = checks.iter().filter(|&&c| c).count();
    Ok((
        passed == checks.len(),
        format!("{passed}/{} worked examples", checks.len()),
    ))
}

/// A12: power-law fit of open-chain gaps over n = 4..10.
fn a12() -> Verdict {
    let opts = ScanOptions {
        max_dim: 8192,
        skip_oversized: true,
        ..ScanOptions::default()
    };
    let rows = chain_gap_scan(4..=10, &IrrepCache::new(), &opts, |_| {});
    let mut points = Vec::new();
    let mut skipped = 0;
    for r in &rows {
        match (&r.status, r.gap) {
            (RowStatus::Complete, Some(g)) => points.push((r.m_or_n, g)),
            _ => {
                return Ok((
                    false,
                    format!("n = {} incomplete: {:?}", r.m_or_n, r.status),
                ))
            }
        }
        skipped += r.skipped;
    }
    let alpha = power_law_exponent(&points).ok_or("fit failed")?;
    Ok((
        (1.5..=2.5).contains(&alpha),
        format!("alpha = {alpha:.3} ({skipped} tuples above dimension 8192 skipped)"),
    ))
}

fn main() {
    type Criterion = (&'static str, fn() -> Verdict, bool);
    let criteria: [Criterion; 12] = [
        ("A1", a1, true),
        ("A2", a2, true),
        ("A3", a3, true),
        ("A4", a4, true),
        ("A5", a5, true),
        ("A6", a6, true),
        ("A7", a7, true),
        ("A8", a8, true),
        ("A9", a9, true),
        ("A10", a10, true),
        ("A11", a11, true),
        ("A12", a12, false),
    ];
    let mut gate_failures = Vec::new();
    for (id, run, gating) in criteria {
        let start = Instant::now();
        let verdict =
            catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let (passed, detail) = match verdict {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let tag = if gating { "" } else { " (reported only)" };
        println!(
            "{id:<4} {}{tag}  [{:.1}s]  {detail}",
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if gating && !passed {
            gate_failures.push(id);
        }
    }
    if !gate_failures.is_empty() {
        eprintln!("acceptance failures: {}", gate_failures.join(", "));
        std::process::exit(1);
    }
}
