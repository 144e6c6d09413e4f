use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use symdesign_core::oracle::frame_potential_mc;
use symdesign_core::spectra::{
    all_to_all_bound, all_to_all_gap_scan, brickwork_gap_scan, bulk_gap_scan, chain_gap_scan,
    convergence_report, detectability_bound, fmt_sig17, frame_potential_exact_k2,
    frame_potential_paper_k2, geometry_gap_scan, knabe_bound, one_design_report,
    unitary_commutant_dim, TuplePolicy, FRAME_POTENTIAL_HEADER, GAP_SCAN_HEADER,
};
use symdesign_core::{
    central_sum_eigenvalue, dim_irrep, multiplicity, spectral_gap, step_channel, BlockOptions,
    Ensemble, Geometry, GeometryKind, IrrepCache, Partition, RowStatus, ScanOptions, ScanRow,
    SectorTuple, SpectralOptions, WindowConvention,
};

use crate::config::{Format, Span};
use crate::{CliError, Context, Outcome, ScanArgs, Window};

pub const DEFAULT_SEED: u64 = 2024;
/// Largest n the Monte Carlo estimator accepts.
const MC_MAX_N: usize = 8;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Destination of a command's output: `--out` or stdout.
struct Sink {
    inner: Box<dyn Write>,
    path: Option<PathBuf>,
}

impl Sink {
    fn open(out: Option<&Path>, append: bool) -> Result<Self, CliError> {
        let inner: Box<dyn Write> = match out {
            Some(p) => {
                let file = if append {
                    OpenOptions::new().append(true).open(p)
                } else {
                    File::create(p)
                };
                Box::new(BufWriter::new(file.map_err(io_err(p))?))
            }
            None => Box::new(BufWriter::new(io::stdout())),
        };
        Ok(Self {
            inner,
            path: out.map(Path::to_path_buf),
        })
    }

    fn line(&mut self, text: &str) -> Result<(), CliError> {
        let path = self
            .path
            .clone()
            .unwrap_or_else(|| PathBuf::from("<stdout>"));
        writeln!(self.inner, "{text}").map_err(io_err(&path))
    }

    /// Writes a line and makes sure it reaches the file before the next row starts.
    fn checkpoint(&mut self, text: &str) -> Result<(), CliError> {
        self.line(text)?;
        self.flush()
    }

    fn flush(&mut self) -> Result<(), CliError> {
        let path = self
            .path
            .clone()
            .unwrap_or_else(|| PathBuf::from("<stdout>"));
        self.inner.flush().map_err(io_err(&path))
    }

    fn json(&mut self, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)?;
        self.line(&text)?;
        self.flush()
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}

fn usage(e: symdesign_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "'"))
}

pub fn partitions(ctx: &Context, n: Option<usize>, d: Option<usize>) -> Result<Outcome, CliError> {
    let n = required(ctx.file.pick(n, "n")?, "n")?;
    let d = ctx.file.pick(d, "d")?.unwrap_or(2);
    if n == 0 || d == 0 {
        return Err(CliError::Usage("n and d must be positive".into()));
    }
    let mut sink = Sink::open(ctx.out.as_deref(), false)?;
    let mut rows = Vec::new();
    for p in symdesign_core::partitions(n, d) {
        rows.push((
            p.clone(),
            dim_irrep(&p)?,
            multiplicity(&p, d)?,
            central_sum_eigenvalue(&p),
        ));
    }
    match ctx.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            sink.line("shape,irrep_dim,multiplicity,central_sum")?;
            for (p, f, m, c) in &rows {
                sink.line(&format!("{},{f},{m},{c}", csv_quote(&p.to_string())))?;
            }
            sink.flush()?;
        }
        Format::Json => {
            let value: Vec<_> = rows
                .iter()
                .map(|(p, f, m, c)| json!({"shape": p.parts(), "irrep_dim": f, "multiplicity": m, "central_sum": c}))
                .collect();
            sink.json(&value)?;
        }
    }
    Ok(Outcome::Success)
}

pub fn rep(ctx: &Context, shape: Option<Partition>) -> Result<Outcome, CliError> {
    let shape = required(ctx.file.pick(shape, "shape")?, "shape")?;
    let cache = IrrepCache::new();
    let rep = cache.get(&shape)?;
    let mut sink = Sink::open(ctx.out.as_deref(), false)?;
    match ctx.format.unwrap_or(Format::Json) {
        Format::Json => sink.json(&rep.to_json())?,
        Format::Csv => {
            sink.line("generator,row,col,value")?;
            for (j, m) in rep.adjacent_all().iter().enumerate() {
                for (r, c, v) in m.triplets() {
                    sink.line(&format!("{},{r},{c},{}", j + 1, fmt_sig17(v)))?;
                }
            }
            sink.flush()?;
        }
    }
    Ok(Outcome::Success)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanKind {
    Gap,
    AllToAll,
    Brickwork,
}

fn read_tuples(path: &str) -> Result<Vec<SectorTuple>, CliError> {
    let p = Path::new(path);
    let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
    text.lines()
        .enumerate()
        .map(|(no, l)| (no, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(no, l)| {
            l.parse()
                .map_err(|e| CliError::Usage(format!("{path}:{}: {e}", no + 1)))
        })
        .collect()
}

fn scan_options(ctx: &Context, a: &ScanArgs) -> Result<ScanOptions, CliError> {
    let mut opts = ScanOptions {
        d: ctx.file.pick(a.d, "d")?.unwrap_or(2),
        k: ctx.file.pick(a.k, "k")?.unwrap_or(2),
        ..ScanOptions::default()
    };
    if opts.d < 2 || opts.k == 0 {
        return Err(CliError::Usage(format!(
            "need d >= 2 and k >= 1, got d = {}, k = {}",
            opts.d, opts.k
        )));
    }
    if let Some(cap) = ctx.file.pick(a.max_dim, "max-dim")? {
        if cap == 0 {
            return Err(CliError::Usage("--max-dim must be positive".into()));
        }
        opts.max_dim = cap;
    }
    opts.skip_oversized = ctx.file.switch(a.skip_oversized, "skip-oversized")?;
    if let Some(tol) = ctx.tol {
        if !(tol > 0.0 && tol < 0.5) {
            return Err(CliError::Usage(format!("--tol {tol} outside (0, 0.5)")));
        }
        opts.spectral.tol = tol;
    }
    if let Some(seed) = ctx.seed {
        opts.spectral.lanczos.seed = seed;
    }
    match ctx.file.pick(a.tuples.clone(), "tuples")?.as_deref() {
        None | Some("all") => {}
        Some(path) => opts.tuples = TuplePolicy::List(read_tuples(path)?),
    }
    Ok(opts)
}

/// Completed rows already in a checkpoint file, keyed by their first column.
/// Infeasible and failed rows are dropped so a resumed run retries them.
fn completed_rows(path: &Path) -> Result<Vec<(usize, String)>, CliError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut lines = text.lines();
    match lines.next() {
        None => return Ok(Vec::new()),
        Some(h) if h == GAP_SCAN_HEADER => {}
        Some(h) => {
            return Err(CliError::Usage(format!(
                "{}: header {h:?} is not a gap-scan checkpoint",
                path.display()
            )))
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        let Some((label, rest)) = line.split_once(',') else {
            continue;
        };
        let Ok(label) = label.parse::<usize>() else {
            continue;
        };
        if rest.starts_with("\"infeasible") || rest.starts_with("\"failed") {
            continue;
        }
        // A row cut short by an interrupt has fewer than all columns.
        if line.matches(',').count() + 1 < GAP_SCAN_HEADER.split(',').count() {
            continue;
        }
        rows.push((label, line.to_string()));
    }
    Ok(rows)
}

pub fn scan(ctx: &Context, kind: ScanKind, a: ScanArgs) -> Result<Outcome, CliError> {
    let opts = scan_options(ctx, &a)?;
    let geometry: Option<GeometryKind> = ctx.file.pick(a.geometry, "geometry")?;
    let window = ctx
        .file
        .pick(a.window, "window")?
        .unwrap_or(Window(WindowConvention::Projections))
        .0;
    // gap-scan walks window sizes unless a geometry asks for whole systems.
    let by_window = kind == ScanKind::Gap && geometry.is_none();
    let span = if by_window {
        ctx.file
            .pick(a.m, "m")?
            .unwrap_or(Span { start: 2, end: 6 })
    } else {
        let default = match kind {
            ScanKind::Brickwork => Span { start: 3, end: 6 },
            _ => Span { start: 4, end: 7 },
        };
        ctx.file.pick(a.n, "n")?.unwrap_or(default)
    };
    if by_window && span.start < 2 {
        return Err(CliError::Usage(format!(
            "--m {span}: window sizes start at 2"
        )));
    }
    if !by_window && span.start < 2 {
        return Err(CliError::Usage(format!(
            "--n {span}: system sizes start at 2"
        )));
    }
    let format = ctx.format.unwrap_or(Format::Csv);
    let resume = ctx.file.switch(a.resume, "resume")?;
    if resume && (format != Format::Csv || ctx.out.is_none()) {
        return Err(CliError::Usage(
            "--resume needs --out and CSV output".into(),
        ));
    }

    let mut kept = Vec::new();
    if resume {
        let path = ctx.out.as_deref().unwrap();
        kept = completed_rows(path)?;
        kept.retain(|(label, _)| span.range().contains(label));
        // Rewrite the checkpoint with only the rows that will be kept.
        let mut fresh = Sink::open(Some(path), false)?;
        fresh.line(GAP_SCAN_HEADER)?;
        for (_, line) in &kept {
            fresh.line(line)?;
        }
        fresh.flush()?;
    }
    let done: BTreeSet<usize> = kept.iter().map(|(l, _)| *l).collect();
    let mut sink = Sink::open(ctx.out.as_deref(), resume)?;
    if format == Format::Csv && !resume {
        sink.checkpoint(GAP_SCAN_HEADER)?;
    }

    let cache = IrrepCache::new();
    let mut rows: Vec<ScanRow> = Vec::new();
    let mut write_err = None;
    for label in span.range().filter(|l| !done.contains(l)) {
        let mut emit = |row: &ScanRow| {
            if format == Format::Csv && write_err.is_none() {
                if let Err(e) = sink.checkpoint(&row.to_csv()) {
                    write_err = Some(e);
                }
            }
        };
        let one = label..=label;
        let mut new = match (kind, geometry) {
            (ScanKind::Gap, None) => bulk_gap_scan(one, window, &cache, &opts, &mut emit),
            (ScanKind::Gap, Some(g)) => geometry_gap_scan(g, one, &cache, &opts, &mut emit),
            (ScanKind::AllToAll, _) => all_to_all_gap_scan(one, &cache, &opts, &mut emit),
            (ScanKind::Brickwork, _) => brickwork_gap_scan(one, &cache, &opts, &mut emit),
        };
        if let Some(e) = write_err.take() {
            return Err(e);
        }
        for row in &new {
            if row.skipped > 0 {
                eprintln!(
                    "note: row {} skipped {} tuples above --max-dim; its gap is an upper bound",
                    row.m_or_n, row.skipped
                );
            }
        }
        rows.append(&mut new);
    }
    if format == Format::Json {
        sink.json(&rows)?;
    }
    Ok(scan_outcome(&rows))
}

fn scan_outcome(rows: &[ScanRow]) -> Outcome {
    if rows
        .iter()
        .any(|r| matches!(r.status, RowStatus::Failed(_)))
    {
        Outcome::Failed
    } else if rows.iter().any(|r| !r.is_complete()) {
        Outcome::Partial
    } else {
        Outcome::Success
    }
}

#[derive(Serialize)]
struct EnsembleCount {
    unit_dim: usize,
    dim: usize,
    residual: f64,
    solver: String,
}

pub fn counterexample(
    ctx: &Context,
    shape: Option<Partition>,
    d: Option<usize>,
    geometry: Option<GeometryKind>,
    ensemble: Option<Ensemble>,
) -> Result<Outcome, CliError> {
    let shape = ctx
        .file
        .pick(shape, "shape")?
        .unwrap_or_else(|| Partition::new(vec![3, 2, 1]).expect("valid shape"));
    let d = ctx.file.pick(d, "d")?.unwrap_or(3);
    let geometry = ctx
        .file
        .pick(geometry, "geometry")?
        .unwrap_or(GeometryKind::OpenChain);
    let only: Option<Ensemble> = ctx.file.pick(ensemble, "ensemble")?;
    if shape.rows() > d {
        return Err(CliError::Usage(format!(
            "shape {shape} has more than d = {d} rows"
        )));
    }
    if geometry == GeometryKind::Brickwork {
        return Err(CliError::Usage(
            "counterexample needs a symmetric step: open, periodic or all-to-all".into(),
        ));
    }
    let n = shape.n();
    let g = Geometry::new(geometry, n).map_err(usage)?;
    let tuple = SectorTuple::uniform(&shape, 2)?;
    let cache = IrrepCache::new();
    let mut spectral = SpectralOptions::default();
    if let Some(tol) = ctx.tol {
        spectral.tol = tol;
    }
    if let Some(seed) = ctx.seed {
        spectral.lanczos.seed = seed;
    }
    let count = |ens: Ensemble| -> Result<EnsembleCount, CliError> {
        let block = step_channel(&tuple, &cache, &g, ens, &BlockOptions::default())?;
        let r = spectral_gap(&block, &spectral)?;
        Ok(EnsembleCount {
            unit_dim: r.unit_dim,
            dim: r.dim,
            residual: r.residual,
            solver: format!("{:?}", r.solver).to_lowercase(),
        })
    };
    let swap = match only {
        None | Some(Ensemble::SwapOnly) => Some(count(Ensemble::SwapOnly)?),
        Some(Ensemble::Cqa) => None,
    };
    let cqa = match only {
        None | Some(Ensemble::Cqa) => Some(count(Ensemble::Cqa)?),
        Some(Ensemble::SwapOnly) => None,
    };
    let haar = unitary_commutant_dim(dim_irrep(&shape)? as usize, 2)?;
    let verdict = |c: &Option<EnsembleCount>| {
        c.as_ref().map(|c| {
            if c.unit_dim as u128 == haar {
                "matches Haar".to_string()
            } else {
                format!("exceeds Haar by {}", c.unit_dim as i128 - haar as i128)
            }
        })
    };
    let report = json!({
        "shape": shape.parts(),
        "d": d,
        "n": n,
        "geometry": geometry,
        "tuple": tuple.to_string(),
        "unit_dim_swap_only": swap.as_ref().map(|c| c.unit_dim),
        "unit_dim_cqa": cqa.as_ref().map(|c| c.unit_dim),
        "haar_commutant_dim": haar,
        "verdict_swap_only": verdict(&swap),
        "verdict_cqa": verdict(&cqa),
        "swap_only": swap,
        "cqa": cqa,
        "tol": spectral.tol,
    });
    Sink::open(ctx.out.as_deref(), false)?.json(&report)?;
    // Verdict rule: the CQA count decides; with only swap-only requested it decides instead.
    let decisive = cqa.as_ref().or(swap.as_ref()).map(|c| c.unit_dim as u128);
    Ok(if decisive == Some(haar) {
        Outcome::Success
    } else {
        Outcome::Failed
    })
}

#[derive(Serialize)]
struct FrameRow {
    n: usize,
    exact: u128,
    paper_formula: u128,
    mc_estimate: Option<f64>,
    mc_stderr: Option<f64>,
    mc_seed: Option<u64>,
    mc_status: Option<String>,
}

pub fn frame_potential(
    ctx: &Context,
    n: Option<Span>,
    samples: Option<usize>,
) -> Result<Outcome, CliError> {
    let span = ctx.file.pick(n, "n")?.unwrap_or(Span { start: 2, end: 6 });
    if span.start < 2 {
        return Err(CliError::Usage(format!(
            "--n {span}: frame potentials start at n = 2"
        )));
    }
    let samples = ctx.file.pick(samples, "samples")?.unwrap_or(0);
    if samples > 0 && samples < 100 {
        return Err(CliError::Usage(
            "--samples must be 0 or at least 100".into(),
        ));
    }
    let seed = ctx.seed.unwrap_or(DEFAULT_SEED);
    let format = ctx.format.unwrap_or(Format::Csv);
    let mut sink = Sink::open(ctx.out.as_deref(), false)?;
    if format == Format::Csv {
        sink.checkpoint(FRAME_POTENTIAL_HEADER)?;
    }
    let mut rows = Vec::new();
    let mut partial = false;
    for n in span.range() {
        let exact = frame_potential_exact_k2(n)?;
        let paper = frame_potential_paper_k2(n)?;
        if exact != paper {
            eprintln!("note: n = {n}: exact {exact} differs from the closed formula {paper}");
        }
        let mut row = FrameRow {
            n,
            exact,
            paper_formula: paper,
            mc_estimate: None,
            mc_stderr: None,
            mc_seed: None,
            mc_status: None,
        };
        if samples > 0 {
            if n > MC_MAX_N {
                partial = true;
                row.mc_status = Some(format!(
                    "infeasible: Monte Carlo limited to n <= {MC_MAX_N}"
                ));
            } else {
                let mc = frame_potential_mc(n, 2, samples, seed)?;
                row.mc_estimate = Some(mc.estimate);
                row.mc_stderr = Some(mc.stderr);
                row.mc_seed = Some(seed);
            }
        }
        if format == Format::Csv {
            let mc = match (&row.mc_status, row.mc_estimate, row.mc_stderr) {
                (Some(_), _, _) => "infeasible,infeasible".to_string(),
                (None, Some(e), Some(s)) => format!("{},{}", fmt_sig17(e), fmt_sig17(s)),
                _ => ",".to_string(),
            };
            sink.checkpoint(&format!("{n},{exact},{paper},{mc}"))?;
        }
        rows.push(row);
    }
    if samples > 0 && format == Format::Csv {
        eprintln!("note: Monte Carlo seed {seed}");
    }
    if format == Format::Json {
        sink.json(&rows)?;
    }
    Ok(if partial {
        Outcome::Partial
    } else {
        Outcome::Success
    })
}

pub struct BoundInputs {
    pub m: Option<usize>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub d: Option<usize>,
    pub gap: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
}

pub fn bounds(ctx: &Context, name: &str, b: BoundInputs) -> Result<Outcome, CliError> {
    let f = &ctx.file;
    let report = match name {
        "knabe" => knabe_bound(
            required(f.pick(b.m, "m")?, "m")?,
            required(f.pick(b.gap, "gap")?, "gap")?,
        ),
        "all-to-all" => all_to_all_bound(
            required(f.pick(b.n, "n")?, "n")?,
            required(f.pick(b.m, "m")?, "m")?,
            required(f.pick(b.gamma, "gamma")?, "gamma")?,
        ),
        "detectability" => detectability_bound(required(f.pick(b.delta, "delta")?, "delta")?),
        "convergence" => convergence_report(
            required(f.pick(b.k, "k")?, "k")?,
            required(f.pick(b.n, "n")?, "n")?,
            required(f.pick(b.d, "d")?, "d")?,
            required(f.pick(b.epsilon, "epsilon")?, "epsilon")?,
            required(f.pick(b.delta, "delta")?, "delta")?,
        ),
        "one-design" => one_design_report(
            required(f.pick(b.n, "n")?, "n")?,
            required(f.pick(b.d, "d")?, "d")?,
            required(f.pick(b.epsilon, "epsilon")?, "epsilon")?,
        ),
        other => {
            return Err(CliError::Usage(format!(
            "unknown bound {other:?} (knabe, all-to-all, detectability, convergence, one-design)"
        )))
        }
    }
    .map_err(usage)?;
    let inputs: serde_json::Map<String, serde_json::Value> = report
        .inputs
        .iter()
        .map(|(k, v)| (k.clone(), json!(v)))
        .collect();
    let value = json!({
        "name": report.name,
        "inputs": inputs,
        "value": report.value,
        "valid": report.valid,
    });
    Sink::open(ctx.out.as_deref(), false)?.json(&value)?;
    Ok(Outcome::Success)
}

pub fn convergence(
    ctx: &Context,
    k: Option<usize>,
    n: Option<usize>,
    d: Option<usize>,
    epsilon: Option<f64>,
    delta: Option<f64>,
) -> Result<Outcome, CliError> {
    let f = &ctx.file;
    let k = f.pick(k, "k")?.unwrap_or(2);
    let n = required(f.pick(n, "n")?, "n")?;
    let d = f.pick(d, "d")?.unwrap_or(2);
    let epsilon = f.pick(epsilon, "epsilon")?.unwrap_or(0.01);
    let (delta, source, tuple) = match f.pick(delta, "delta")? {
        Some(v) => (v, "given", None),
        None => {
            if n < 2 || d < 2 || k == 0 {
                return Err(CliError::Usage(format!(
                    "cannot measure a gap for n = {n}, d = {d}, k = {k}"
                )));
            }
            let mut opts = ScanOptions {
                d,
                k,
                ..ScanOptions::default()
            };
            if let Some(seed) = ctx.seed {
                opts.spectral.lanczos.seed = seed;
            }
            let row = chain_gap_scan(n..=n, &IrrepCache::new(), &opts, |_| {}).remove(0);
            match (&row.status, row.gap) {
                (RowStatus::Complete, Some(g)) => (g, "open-chain gap", row.tuple),
                (RowStatus::Infeasible(why), _) => {
                    eprintln!("error: gap measurement infeasible: {why}");
                    return Ok(Outcome::Partial);
                }
                (status, _) => {
                    eprintln!("error: gap measurement failed: {status:?}");
                    return Ok(Outcome::Failed);
                }
            }
        }
    };
    let report = convergence_report(k, n, d, epsilon, delta).map_err(usage)?;
    let value = json!({
        "k": k,
        "n": n,
        "d": d,
        "epsilon": epsilon,
        "delta": delta,
        "delta_source": source,
        "delta_tuple": tuple,
        "steps": report.value as u64,
    });
    Sink::open(ctx.out.as_deref(), false)?.json(&value)?;
    Ok(Outcome::Success)
}
