use std::time::Instant;

use faer::Mat;
use serde::Serialize;
use symdesign_core::linalg::singular_values;
use symdesign_core::moments::twirl_swap_k;
use symdesign_core::oracle::{
    frame_potential_mc, full_channel_eigencheck, full_decomposition_check, max_complex_deviation,
    twirl_quadrature, w12_identity_residual, FullSpaceModel,
};
use symdesign_core::spectra::{
    convergence_steps, detectability_bound, enumerate_tuples, frame_potential_exact_k2,
    frame_potential_paper_k2, knabe_bound, minimize_gap, one_design_steps, phase_basis_rank,
};
use symdesign_core::{
    branch_restrict, build_irrep, bulk_hamiltonian, count_sectors, dim_irrep, multiplicity,
    partitions, representation_defects, step_channel, unit_eigenspace_dim, BlockOptions, Ensemble,
    Geometry, GeometryKind, IrrepCache, SectorTuple, SpectralOptions, TwirlExpansion,
};

use crate::commands::DEFAULT_SEED;
use crate::config::Format;
use crate::{CliError, Context, Outcome};

type Observed = symdesign_core::Result<(bool, String)>;

#[derive(Serialize)]
struct CheckResult {
    module: &'static str,
    id: &'static str,
    passed: bool,
    observed: String,
    seconds: f64,
}

struct Check {
    module: &'static str,
    id: &'static str,
    run: Box<dyn Fn(bool) -> Observed>,
}

fn check(
    module: &'static str,
    id: &'static str,
    run: impl Fn(bool) -> Observed + 'static,
) -> Check {
    Check {
        module,
        id,
        run: Box::new(run),
    }
}

fn schur_weyl(quick: bool) -> Observed {
    let n_max = if quick { 5 } else { 8 };
    let mut worst = String::new();
    for d in 2..=4usize {
        for n in 1..=n_max {
            let total: u64 = partitions(n, d)
                .iter()
                .map(|p| Ok(multiplicity(p, d)? * dim_irrep(p)?))
                .sum::<symdesign_core::Result<u64>>()?;
            let expect = (d as u64).pow(n as u32);
            if total != expect {
                worst = format!("n={n} d={d}: {total} != {expect}");
                return Ok((false, worst));
            }
        }
    }
    worst.push_str(&format!("sum m*f = d^n for n <= {n_max}, d <= 4"));
    Ok((true, worst))
}

fn sector_counts(quick: bool) -> Observed {
    let n_max = if quick { 8 } else { 14 };
    for d in 1..=5 {
        for n in 1..=n_max {
            let listed = partitions(n, d).len() as u64;
            let counted = count_sectors(n, d);
            if listed != counted {
                return Ok((false, format!("n={n} d={d}: {counted} != {listed}")));
            }
        }
    }
    Ok((true, format!("n <= {n_max}, d <= 5")))
}

fn branching(quick: bool) -> Observed {
    let n_max = if quick { 5 } else { 8 };
    for n in 2..=n_max {
        for lambda in partitions(n, n) {
            let restricted = branch_restrict(&lambda, n - 1)?;
            let sum: u64 = restricted
                .iter()
                .map(|(mu, c)| Ok(c * dim_irrep(mu)?))
                .sum::<symdesign_core::Result<u64>>()?;
            if sum != dim_irrep(&lambda)? {
                return Ok((false, format!("{lambda}: {sum} != {}", dim_irrep(&lambda)?)));
            }
        }
    }
    Ok((true, format!("all shapes n <= {n_max}")))
}

fn yor_relations(quick: bool) -> Observed {
    let n_max = if quick { 5 } else { 7 };
    let mut worst: f64 = 0.0;
    for n in 1..=n_max {
        for lambda in partitions(n, n) {
            let defects = representation_defects(&build_irrep(&lambda, n)?)?;
            if !defects.passes(1e-10) {
                return Ok((false, format!("{lambda}: {defects:?}")));
            }
            worst = worst.max(defects.max());
        }
    }
    Ok((true, format!("max defect {worst:.1e} over n <= {n_max}")))
}

fn twirl_coefficients(_: bool) -> Observed {
    let e = TwirlExpansion::new(2)?;
    let expect = [
        ("IIII", "3/8"),
        ("ττττ", "3/8"),
        ("IτIτ", "1/8"),
        ("IττI", "1/8"),
        ("τIIτ", "1/8"),
        ("τIτI", "1/8"),
        ("IIττ", "-1/8"),
        ("ττII", "-1/8"),
    ];
    for (word, want) in expect {
        let c = e.coefficient(word).map(|c| c.to_string());
        if c.as_deref() != Some(want) {
            return Ok((false, format!("{word}: {c:?}")));
        }
    }
    let ok = e.terms().len() == 8 && e.max_imaginary().to_string() == "0";
    Ok((ok, format!("{} nonzero real terms at k=2", e.terms().len())))
}

fn twirl_quadrature_agreement(_: bool) -> Observed {
    let cache = IrrepCache::new();
    let mut worst: f64 = 0.0;
    for (shape, k) in [("(2,1)", 1), ("(2,1)", 2), ("(3,1)", 2), ("(2,1)", 3)] {
        let lambda = shape.parse()?;
        let tuple = SectorTuple::uniform(&lambda, k)?;
        let n = tuple.n();
        let tau = cache.get(&lambda)?.transposition_matrix(1, n)?.to_dense();
        let q = twirl_quadrature(&tau, k, 1024)?;
        let block = twirl_swap_k(&tuple, &cache, (1, n), k, &BlockOptions::default())?;
        worst = worst.max(max_complex_deviation(&q, &block.to_dense(4096)?));
    }
    Ok((
        worst < 1e-10,
        format!("max deviation {worst:.1e} for k = 1, 2, 3"),
    ))
}

fn bulk_gap(quick: bool) -> Observed {
    let cache = IrrepCache::new();
    let opts = BlockOptions::default();
    let spectral = SpectralOptions::default();
    let n_max = if quick { 4 } else { 5 };
    let mut gaps = Vec::new();
    for n in 3..=n_max {
        let tuples: Vec<SectorTuple> = enumerate_tuples(n, 2, 2)?
            .into_iter()
            .map(|c| c.representative)
            .collect();
        let min = minimize_gap(
            &tuples,
            |t| bulk_hamiltonian(t, &cache, 3, 1, &opts),
            &spectral,
        )?;
        gaps.push(min.and_then(|m| m.report.gap).unwrap_or(f64::NAN));
    }
    let ok = gaps.iter().all(|g| (g - 0.375).abs() < 1e-10);
    Ok((ok, format!("two-projection bulk gaps {gaps:?}")))
}

fn frame_formula(quick: bool) -> Observed {
    let n_max = if quick { 8 } else { 12 };
    for n in 3..=n_max {
        let (e, p) = (frame_potential_exact_k2(n)?, frame_potential_paper_k2(n)?);
        if e != p {
            return Ok((false, format!("n={n}: exact {e}, formula {p}")));
        }
    }
    let (e2, p2) = (frame_potential_exact_k2(2)?, frame_potential_paper_k2(2)?);
    let small = [frame_potential_exact_k2(3)?, frame_potential_exact_k2(4)?];
    let ok = e2 == 118 && p2 == 119 && small == [544, 1825];
    Ok((
        ok,
        format!("agree for 3 <= n <= {n_max}; n=2 exact {e2} vs formula {p2}"),
    ))
}

fn phase_rank(_: bool) -> Observed {
    for n in 2..=20 {
        let sectors = n / 2 + 1;
        for l in 0..sectors + 2 {
            let r = phase_basis_rank(n, l)?;
            if r != (l + 1).min(sectors) {
                return Ok((false, format!("n={n} l={l}: rank {r}")));
            }
        }
    }
    Ok((true, "full rank at l = sectors - 1 for 2 <= n <= 20".into()))
}

fn bound_examples(_: bool) -> Observed {
    let knabe = knabe_bound(2, 0.375)?;
    let detect = detectability_bound(4.0)?.value;
    let steps = convergence_steps(2, 10, 2, 0.01, 0.1)?;
    let one = one_design_steps(5, 2, 0.01)?;
    let ok = (knabe.value + 11.0 / 48.0).abs() < 1e-12
        && !knabe.valid
        && (detect - 0.5).abs() < 1e-15
        && steps == 2120
        && one == 47;
    Ok((
        ok,
        format!(
            "knabe {:.6} valid={}, detectability {detect}, steps {steps}, one-design {one}",
            knabe.value, knabe.valid
        ),
    ))
}

fn unit_count_nullity(quick: bool) -> Observed {
    let cache = IrrepCache::new();
    let opts = SpectralOptions::default();
    let n = if quick { 3 } else { 4 };
    let mut checked = 0;
    for class in enumerate_tuples(n, 2, 2)? {
        for kind in [GeometryKind::OpenChain, GeometryKind::AllToAll] {
            let g = Geometry::new(kind, n)?;
            let block = step_channel(
                &class.representative,
                &cache,
                &g,
                Ensemble::SwapOnly,
                &BlockOptions::default(),
            )?;
            let m = block.to_dense(4096)?;
            let shifted = &m - Mat::<f64>::identity(m.nrows(), m.ncols());
            let nullity = singular_values(&shifted)?
                .iter()
                .filter(|&&v| v < 1e-6)
                .count();
            let units = unit_eigenspace_dim(&block, 1e-6, &opts)?;
            if units != nullity {
                return Ok((
                    false,
                    format!("{}: {units} != {nullity}", class.representative),
                ));
            }
            checked += 1;
        }
    }
    Ok((true, format!("{checked} blocks at n = {n}")))
}

fn decomposition(quick: bool) -> Observed {
    let cases: &[(usize, usize)] = if quick {
        &[(3, 2), (4, 2), (3, 3)]
    } else {
        &[(3, 2), (4, 2), (5, 2), (3, 3), (4, 3)]
    };
    for &(n, d) in cases {
        let r = full_decomposition_check(n, d)?;
        if !r.passed {
            return Ok((
                false,
                format!("n={n} d={d}: completeness {:.1e}", r.completeness_defect),
            ));
        }
    }
    Ok((true, format!("{} (n, d) cases", cases.len())))
}

fn homomorphism(_: bool) -> Observed {
    let mut failures = 0;
    for (n, d) in [(3, 2), (4, 2), (3, 3)] {
        failures += FullSpaceModel::new(n, d)?.homomorphism_failures(100, DEFAULT_SEED)?;
    }
    Ok((failures == 0, format!("{failures} failures in 300 pairs")))
}

fn w12(_: bool) -> Observed {
    let worst = w12_identity_residual(2)?.max(w12_identity_residual(3)?);
    Ok((worst <= 1e-12, format!("residual {worst:.1e}")))
}

fn full_channels(quick: bool) -> Observed {
    let mut cases = vec![
        (2, 1, Ensemble::SwapOnly),
        (3, 1, Ensemble::SwapOnly),
        (3, 1, Ensemble::Cqa),
        (2, 2, Ensemble::SwapOnly),
        (2, 2, Ensemble::Cqa),
    ];
    if !quick {
        cases.push((3, 2, Ensemble::SwapOnly));
        cases.push((3, 2, Ensemble::Cqa));
    }
    let mut counts = Vec::new();
    for (n, k, ens) in cases {
        let r = full_channel_eigencheck(n, 2, k, ens)?;
        if !r.passed {
            return Ok((
                false,
                format!(
                    "n={n} k={k} {ens:?}: {} vs {}",
                    r.unit_count, r.block_unit_count
                ),
            ));
        }
        counts.push(format!("{n}/{k}:{}", r.unit_count));
    }
    Ok((true, counts.join(" ")))
}

fn frame_mc(quick: bool) -> Observed {
    let samples = if quick { 100_000 } else { 1_000_000 };
    let mut notes = Vec::new();
    let mut ok = true;
    for n in 2..=4 {
        let exact = frame_potential_exact_k2(n)? as f64;
        let mc = frame_potential_mc(n, 2, samples, DEFAULT_SEED)?;
        let z = (mc.estimate - exact) / mc.stderr;
        ok &= z.abs() <= 3.0;
        notes.push(format!("n={n} z={z:.2}"));
    }
    Ok((ok, notes.join(" ")))
}

fn checks() -> Vec<Check> {
    vec![
        check("snpart", "schur-weyl-dimension", schur_weyl),
        check("snpart", "sector-count", sector_counts),
        check("snpart", "branching-rule", branching),
        check("yor", "coxeter-and-yjm-relations", yor_relations),
        check("moments", "twirl-coefficients", twirl_coefficients),
        check("moments", "twirl-vs-quadrature", twirl_quadrature_agreement),
        check("moments", "bulk-gap-three-eighths", bulk_gap),
        check("spectra", "frame-potential-formula", frame_formula),
        check("spectra", "phase-basis-rank", phase_rank),
        check("spectra", "bound-examples", bound_examples),
        check("spectra", "unit-count-equals-nullity", unit_count_nullity),
        check("oracle", "isotypic-decomposition", decomposition),
        check("oracle", "homomorphism", homomorphism),
        check("oracle", "w12-identity", w12),
        check("oracle", "full-channel-vs-blocks", full_channels),
        check("oracle", "frame-potential-mc", frame_mc),
    ]
}

pub fn run(ctx: &Context, quick: bool) -> Result<Outcome, CliError> {
    let mut results = Vec::new();
    for c in checks() {
        let start = Instant::now();
        let (passed, observed) = match (c.run)(quick) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        results.push(CheckResult {
            module: c.module,
            id: c.id,
            passed,
            observed,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let text = match ctx.format.unwrap_or(Format::Csv) {
        Format::Json => serde_json::to_string_pretty(&results)?,
        Format::Csv => {
            let mut t = String::new();
            for r in &results {
                t.push_str(&format!(
                    "{:<4} {:<8} {:<28} {:>7.2}s  {}\n",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.module,
                    r.id,
                    r.seconds,
                    r.observed
                ));
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            t.push_str(&format!("{} checks, {failed} failed", results.len()));
            t
        }
    };
    match &ctx.out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|source| CliError::Io {
            path: p.display().to_string(),
            source,
        })?,
        None => println!("{text}"),
    }
    Ok(if results.iter().all(|r| r.passed) {
        Outcome::Success
    } else {
        Outcome::Failed
    })
}
