//! Decode → probes → figures over one experiment.
//!
//! Layout under the output root:
//!
//! ```text
//! {hash}/traces/{mode}__p{prompt:03}__r{rep:02}.jsonl
//! {hash}/probes/{kind}.jsonl  {hash}/probes/{kind}.csv
//! {hash}/figures/fig{3,4,5,7}.csv  {hash}/figures/fig3_bands.csv
//! ```
//!
//! Work fans out over a bounded rayon pool; results are gathered in job
//! order so file contents never depend on scheduling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use softthink::decode::{decode, Mode, Phase, Trace};
use softthink::probes::{
    self, find_branching_points, js_probe, lens_probe_weighted, linearity_check, step_context, LensCurve, ScanGrid,
    LINEARITY_MAX_SUPPORT,
};
use softthink::samplers::{derive_seed, Randomizer};
use softthink::{ModelWeights, SoftToken, TokenId};

use crate::artifact::{self, num, read_jsonl, write_csv, write_jsonl, Provenance, Staging};
use crate::error::{data, file_err, Result};
use crate::spec::Experiment;

pub const TRACES_DIR: &str = "traces";
pub const PROBES_DIR: &str = "probes";
pub const FIGURES_DIR: &str = "figures";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProbeKind {
    Js,
    Lens,
    Similarity,
    Scan,
    Linearity,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 5] =
        [ProbeKind::Js, ProbeKind::Lens, ProbeKind::Similarity, ProbeKind::Scan, ProbeKind::Linearity];

    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::Js => "js",
            ProbeKind::Lens => "lens",
            ProbeKind::Similarity => "similarity",
            ProbeKind::Scan => "scan",
            ProbeKind::Linearity => "linearity",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

pub fn run_dir(out_root: &Path, exp: &Experiment) -> PathBuf {
    out_root.join(&exp.hash)
}

pub fn worker_pool(workers: Option<usize>) -> Result<ThreadPool> {
    let n = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().map_err(|e| data(format!("worker pool: {e}")))
}

fn provenance(exp: &Experiment) -> Provenance {
    Provenance::new(&exp.hash, exp.root_seed())
}

pub fn trace_name(mode: Mode, prompt: usize, replication: usize) -> String {
    format!("{}__p{prompt:03}__r{replication:02}", mode.name())
}

/// One trace per (replication, prompt, mode). Replication `r` decodes with
/// seed `derive_seed(root_seed, r)`.
pub fn decode_all(exp: &Experiment, weights: &ModelWeights, out_root: &Path, pool: &ThreadPool) -> Result<PathBuf> {
    let prompts = exp.prompt_ids();
    let mut jobs = Vec::new();
    for rep in 0..exp.spec.replications {
        for p in 0..prompts.len() {
            for mode in exp.spec.modes() {
                jobs.push((rep, p, mode));
            }
        }
    }
    let rendered: Vec<Result<(String, String)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(rep, p, mode)| {
                let mut config = exp.spec.decode.clone();
                config.mode = mode;
                config.seed = derive_seed(exp.root_seed(), rep as u64);
                let mut trace = decode(&prompts[p], &config, weights)?;
                trace.labels = BTreeMap::from([
                    ("spec_hash".to_owned(), exp.hash.clone()),
                    ("root_seed".to_owned(), exp.root_seed().to_string()),
                    ("prompt".to_owned(), p.to_string()),
                    ("replication".to_owned(), rep.to_string()),
                ]);
                Ok((trace_name(mode, p, rep), trace.to_jsonl()))
            })
            .collect()
    });
    let staging = Staging::new(&run_dir(out_root, exp).join(TRACES_DIR))?;
    for item in rendered {
        let (name, text) = item?;
        let path = staging.path().join(format!("{name}.jsonl"));
        fs::write(&path, text).map_err(file_err(&path))?;
    }
    staging.commit()
}

/// A trace with its file stem and harness labels.
#[derive(Debug, Clone)]
pub struct TraceFile {
    pub name: String,
    pub trace: Trace,
    pub prompt: usize,
    pub replication: usize,
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let file = fs::File::open(path).map_err(file_err(path))?;
    Trace::read_jsonl(std::io::BufReader::new(file)).map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Every trace of the experiment, sorted by name.
pub fn load_traces(exp: &Experiment, out_root: &Path) -> Result<Vec<TraceFile>> {
    let dir = run_dir(out_root, exp).join(TRACES_DIR);
    if !dir.is_dir() {
        return Err(data(format!("no traces at {}; run `softthink decode` first", dir.display())));
    }
    let mut paths: Vec<PathBuf> =
        fs::read_dir(&dir).map_err(file_err(&dir))?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "jsonl"));
    paths.sort();
    paths
        .iter()
        .map(|path| {
            let trace = read_trace(path)?;
            let label = |key: &str| -> Result<String> {
                trace.labels.get(key).cloned().ok_or_else(|| data(format!("{}: missing label {key}", path.display())))
            };
            if label("spec_hash")? != exp.hash {
                return Err(data(format!("{}: belongs to another experiment", path.display())));
            }
            let index = |key: &str| -> Result<usize> {
                label(key)?.parse().map_err(|_| data(format!("{}: bad label {key}", path.display())))
            };
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(TraceFile { name, prompt: index("prompt")?, replication: index("replication")?, trace })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeHeader {
    pub record: String,
    pub kind: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub params: serde_json::Value,
    pub traces: usize,
    pub records: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsRow {
    pub trace: String,
    pub step: usize,
    pub entropy: f64,
    pub top1_weight: f64,
    pub top2_weight: f64,
    pub js_top1: f64,
    pub js_top2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensRow {
    pub trace: String,
    pub step: usize,
    pub token1: TokenId,
    pub token2: TokenId,
    pub curve: LensCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub trace: String,
    pub mode: Mode,
    pub prompt: usize,
    pub replication: usize,
    pub reference: String,
    /// `(prefix length, ROUGE-L F1)` pairs.
    pub curve: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub randomizer: String,
    pub hyperparam: f64,
    pub steps: usize,
    pub mean_softness: f64,
    pub mean_randomness: f64,
    pub softness: Vec<f64>,
    pub randomness: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityRow {
    pub trace: String,
    pub step: usize,
    pub support: usize,
    pub js: f64,
}

struct ProbeOutput {
    params: serde_json::Value,
    traces: usize,
    note: Option<String>,
    columns: &'static [&'static str],
    csv: Vec<Vec<String>>,
    jsonl: Vec<serde_json::Value>,
}

fn rows_to_json<R: Serialize>(rows: &[R]) -> Result<Vec<serde_json::Value>> {
    rows.iter().map(|r| Ok(serde_json::to_value(r)?)).collect()
}

/// Token ids of the thinking phase: the trajectory compared by the
/// similarity probe.
pub fn thought_ids(trace: &Trace) -> Vec<TokenId> {
    trace.steps.iter().filter(|s| s.phase == Phase::Thinking).map(|s| s.dominant_id).collect()
}

fn soft_traces(traces: &[TraceFile]) -> Vec<&TraceFile> {
    traces.iter().filter(|t| t.trace.config.mode.is_soft()).collect()
}

fn no_soft_note(soft: &[&TraceFile]) -> Option<String> {
    soft.is_empty().then(|| "no soft-mode traces: nothing to probe".to_owned())
}

fn flatten<T>(parts: Vec<Result<Vec<T>>>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

fn probe_js(traces: &[TraceFile], weights: &ModelWeights, pool: &ThreadPool) -> Result<ProbeOutput> {
    let soft = soft_traces(traces);
    let parts: Vec<Result<Vec<JsRow>>> = pool.install(|| {
        soft.par_iter()
            .map(|t| {
                Ok(js_probe(&t.trace, weights)?
                    .into_iter()
                    .map(|r| JsRow {
                        trace: t.name.clone(),
                        step: r.step,
                        entropy: r.entropy,
                        top1_weight: r.top1_weight,
                        top2_weight: r.top2_weight,
                        js_top1: r.js_top1,
                        js_top2: r.js_top2,
                    })
                    .collect())
            })
            .collect()
    });
    let rows = flatten(parts)?;
    Ok(ProbeOutput {
        params: serde_json::json!({ "temperature": 1.0 }),
        traces: soft.len(),
        note: no_soft_note(&soft),
        columns: &["trace", "step", "entropy", "top1_weight", "top2_weight", "js_top1", "js_top2"],
        csv: rows
            .iter()
            .map(|r| {
                vec![
                    r.trace.clone(),
                    r.step.to_string(),
                    num(r.entropy),
                    num(r.top1_weight),
                    num(r.top2_weight),
                    num(r.js_top1),
                    num(r.js_top2),
                ]
            })
            .collect(),
        jsonl: rows_to_json(&rows)?,
    })
}

fn top_two(st: &SoftToken) -> (TokenId, TokenId) {
    (st.dominant_id(), st.runner_up().expect("multi-support step").0)
}

fn probe_lens(
    exp: &Experiment,
    traces: &[TraceFile],
    weights: &ModelWeights,
    pool: &ThreadPool,
) -> Result<ProbeOutput> {
    let p = &exp.spec.probes;
    let soft = soft_traces(traces);
    let parts: Vec<Result<Vec<LensRow>>> = pool.install(|| {
        soft.par_iter()
            .map(|t| {
                let points = find_branching_points(&t.trace, weights, p.branch_threshold)?;
                points
                    .into_iter()
                    .take(p.lens_points)
                    .map(|step| {
                        let st = t.trace.steps[step].fed_soft_token().expect("branching steps are soft");
                        let (token1, token2) = top_two(st);
                        let context = step_context(&t.trace, step);
                        let curve = lens_probe_weighted(
                            &context,
                            (token1, p.lens_weights[0]),
                            (token2, p.lens_weights[1]),
                            weights,
                        )?;
                        Ok(LensRow { trace: t.name.clone(), step, token1, token2, curve })
                    })
                    .collect()
            })
            .collect()
    });
    let rows = flatten(parts)?;
    let mut csv = Vec::new();
    for r in &rows {
        for (layer, (a, b)) in r.curve.token1.iter().zip(&r.curve.token2).enumerate() {
            csv.push(vec![
                r.trace.clone(),
                r.step.to_string(),
                r.token1.to_string(),
                r.token2.to_string(),
                layer.to_string(),
                num(*a),
                num(*b),
            ]);
        }
    }
    Ok(ProbeOutput {
        params: serde_json::json!({
            "branch_threshold": p.branch_threshold,
            "lens_points": p.lens_points,
            "lens_weights": p.lens_weights,
        }),
        traces: soft.len(),
        note: no_soft_note(&soft),
        columns: &["trace", "step", "token1", "token2", "layer", "token1_overlap", "token2_overlap"],
        csv,
        jsonl: rows_to_json(&rows)?,
    })
}

fn probe_similarity(exp: &Experiment, traces: &[TraceFile]) -> Result<ProbeOutput> {
    let lengths = &exp.spec.probes.prefix_lengths;
    let references: BTreeMap<(usize, usize), &TraceFile> =
        traces.iter().filter(|t| t.trace.config.mode == Mode::Greedy).map(|t| ((t.prompt, t.replication), t)).collect();
    if references.is_empty() {
        return Err(data("similarity probe needs greedy traces as references; add \"greedy\" to modes"));
    }
    let mut rows = Vec::new();
    for t in traces.iter().filter(|t| t.trace.config.mode != Mode::Greedy) {
        let Some(reference) = references.get(&(t.prompt, t.replication)) else {
            return Err(data(format!("{}: no greedy reference for its prompt and replication", t.name)));
        };
        let (cand, refr) = (thought_ids(&t.trace), thought_ids(&reference.trace));
        let all: Vec<usize>;
        let lengths = if lengths.is_empty() {
            all = (1..=cand.len().max(refr.len())).collect();
            &all
        } else {
            lengths
        };
        rows.push(SimilarityRow {
            trace: t.name.clone(),
            mode: t.trace.config.mode,
            prompt: t.prompt,
            replication: t.replication,
            reference: reference.name.clone(),
            curve: probes::prefix_curve(&cand, &refr, lengths),
        });
    }
    let mut csv = Vec::new();
    for r in &rows {
        for (len, f1) in &r.curve {
            csv.push(vec![
                r.trace.clone(),
                r.mode.name().to_owned(),
                r.prompt.to_string(),
                r.replication.to_string(),
                len.to_string(),
                num(*f1),
            ]);
        }
    }
    Ok(ProbeOutput {
        params: serde_json::json!({ "prefix_lengths": lengths, "unit": "steps", "phase": "thinking" }),
        traces: traces.len(),
        note: None,
        columns: &["trace", "mode", "prompt", "replication", "length", "f1"],
        csv,
        jsonl: rows_to_json(&rows)?,
    })
}

fn probe_scan(exp: &Experiment, weights: &ModelWeights, pool: &ThreadPool) -> Result<ProbeOutput> {
    let p = &exp.spec.probes;
    let points = p.scan_points();
    if points.is_empty() {
        return Err(data("scan grid is empty; set probes.scan_gammas or probes.scan_taus"));
    }
    let mut base = exp.spec.decode.clone();
    base.max_len = p.scan_max_len.unwrap_or(base.max_len);
    let prompts = exp.prompt_ids();
    let records: Vec<Result<probes::ScanRecord>> = pool.install(|| {
        points
            .par_iter()
            .map(|&point| {
                let grid = ScanGrid { points: vec![point] };
                let mut r = probes::randomness_softness_scan(&prompts, weights, &grid, &base)?;
                Ok(r.remove(0))
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in records {
        let r = r?;
        rows.push(ScanRow {
            randomizer: r.randomizer.name().to_owned(),
            hyperparam: r.randomizer.hyperparameter(),
            steps: r.softness.len(),
            mean_softness: r.mean_softness(),
            mean_randomness: r.mean_randomness(),
            softness: r.softness,
            randomness: r.randomness,
        });
    }
    let mut csv = Vec::new();
    for r in &rows {
        for (i, (s, j)) in r.softness.iter().zip(&r.randomness).enumerate() {
            csv.push(vec![r.randomizer.clone(), num(r.hyperparam), i.to_string(), num(*s), num(*j)]);
        }
    }
    Ok(ProbeOutput {
        params: serde_json::json!({
            "grid": points,
            "max_len": base.max_len,
            "prompts": prompts.len(),
        }),
        traces: 0,
        note: None,
        columns: &["randomizer", "hyperparam", "index", "softness", "randomness"],
        csv,
        jsonl: rows_to_json(&rows)?,
    })
}

fn probe_linearity(
    exp: &Experiment,
    traces: &[TraceFile],
    weights: &ModelWeights,
    pool: &ThreadPool,
) -> Result<ProbeOutput> {
    let p = &exp.spec.probes;
    if !(2..=LINEARITY_MAX_SUPPORT).contains(&p.linearity_support) {
        return Err(data(format!("probes.linearity_support must be in 2..={LINEARITY_MAX_SUPPORT}")));
    }
    let soft = soft_traces(traces);
    let parts: Vec<Result<Vec<LinearityRow>>> = pool.install(|| {
        soft.par_iter()
            .map(|t| {
                t.trace
                    .steps
                    .iter()
                    .filter(|s| s.phase == Phase::Thinking && s.fed_soft_token().is_some_and(|st| st.len() >= 2))
                    .take(p.linearity_points)
                    .map(|s| {
                        let fed = s.fed_soft_token().expect("filtered");
                        let top = fed.entries()[..p.linearity_support.min(fed.len())].to_vec();
                        let st = SoftToken::normalized(top)?;
                        let r = linearity_check(&step_context(&t.trace, s.step), &st, weights)?;
                        Ok(LinearityRow { trace: t.name.clone(), step: s.step, support: st.len(), js: r.js })
                    })
                    .collect()
            })
            .collect()
    });
    let rows = flatten(parts)?;
    Ok(ProbeOutput {
        params: serde_json::json!({ "support": p.linearity_support, "points": p.linearity_points }),
        traces: soft.len(),
        note: no_soft_note(&soft),
        columns: &["trace", "step", "support", "js"],
        csv: rows.iter().map(|r| vec![r.trace.clone(), r.step.to_string(), r.support.to_string(), num(r.js)]).collect(),
        jsonl: rows_to_json(&rows)?,
    })
}

/// Runs one probe and writes `probes/{kind}.jsonl` and `probes/{kind}.csv`.
pub fn run_probe(
    kind: ProbeKind,
    exp: &Experiment,
    weights: &ModelWeights,
    out_root: &Path,
    pool: &ThreadPool,
) -> Result<PathBuf> {
    let output = match kind {
        ProbeKind::Scan => probe_scan(exp, weights, pool)?,
        _ => {
            let traces = load_traces(exp, out_root)?;
            match kind {
                ProbeKind::Js => probe_js(&traces, weights, pool)?,
                ProbeKind::Lens => probe_lens(exp, &traces, weights, pool)?,
                ProbeKind::Similarity => probe_similarity(exp, &traces)?,
                ProbeKind::Linearity => probe_linearity(exp, &traces, weights, pool)?,
                ProbeKind::Scan => unreachable!(),
            }
        }
    };
    let provenance = provenance(exp);
    let header = ProbeHeader {
        record: "header".into(),
        kind: kind.name().into(),
        provenance: provenance.clone(),
        params: output.params,
        traces: output.traces,
        records: output.jsonl.len(),
        note: output.note,
    };
    let staging = Staging::new(&run_dir(out_root, exp).join(PROBES_DIR))?;
    write_jsonl(&staging.path().join(format!("{}.jsonl", kind.name())), &header, &output.jsonl)?;
    write_csv(&staging.path().join(format!("{}.csv", kind.name())), &provenance, output.columns, &output.csv)?;
    staging.merge()
}

fn read_probe<R: for<'de> Deserialize<'de>>(probes: &Path, kind: ProbeKind) -> Result<(ProbeHeader, Vec<R>)> {
    read_jsonl(&probes.join(format!("{}.jsonl", kind.name())))
}

const FIGURE_PROBES: [ProbeKind; 4] = [ProbeKind::Js, ProbeKind::Lens, ProbeKind::Similarity, ProbeKind::Scan];

/// Builds the figure CSVs from probe outputs under `run_dir`.
pub fn figures(run_dir: &Path) -> Result<PathBuf> {
    let probes = run_dir.join(PROBES_DIR);
    let missing: Vec<&str> = FIGURE_PROBES
        .iter()
        .filter(|k| !probes.join(format!("{}.jsonl", k.name())).is_file())
        .map(|k| k.name())
        .collect();
    if !missing.is_empty() {
        let runs: Vec<String> = missing.iter().map(|k| format!("`softthink probe {k}`")).collect();
        return Err(data(format!("missing probe outputs: {}; run {}", missing.join(", "), runs.join(", "))));
    }
    let (h3, js): (_, Vec<JsRow>) = read_probe(&probes, ProbeKind::Js)?;
    let (h4, lens): (_, Vec<LensRow>) = read_probe(&probes, ProbeKind::Lens)?;
    let (h5, sim): (_, Vec<SimilarityRow>) = read_probe(&probes, ProbeKind::Similarity)?;
    let (h7, scan): (_, Vec<ScanRow>) = read_probe(&probes, ProbeKind::Scan)?;
    let prov = h3.provenance.clone();
    if [&h4, &h5, &h7].iter().any(|h| h.provenance != prov) {
        return Err(data("probe outputs come from different experiments; rerun the probes"));
    }

    let staging = Staging::new(&run_dir.join(FIGURES_DIR))?;
    let dir = staging.path();

    let fig3: Vec<Vec<String>> = js
        .iter()
        .map(|r| vec![num(r.entropy), num(r.top1_weight), num(r.top2_weight), num(r.js_top1), num(r.js_top2)])
        .collect();
    write_csv(&dir.join("fig3.csv"), &prov, &["entropy", "top1_weight", "top2_weight", "js_top1", "js_top2"], &fig3)?;
    let bands = vec![
        vec!["low_entropy".into(), "entropy".into(), "<".into(), num(0.05)],
        vec!["confident_top1".into(), "top1_weight".into(), ">".into(), num(0.7)],
    ];
    write_csv(&dir.join("fig3_bands.csv"), &prov, &["band", "column", "comparison", "threshold"], &bands)?;

    let layers = lens.iter().map(|r| r.curve.token1.len()).max().unwrap_or(0);
    let fig4: Vec<Vec<String>> = (0..layers)
        .map(|layer| {
            let at: Vec<&LensRow> = lens.iter().filter(|r| layer < r.curve.token1.len()).collect();
            let mean =
                |f: fn(&LensCurve) -> &Vec<f64>| at.iter().map(|r| f(&r.curve)[layer]).sum::<f64>() / at.len() as f64;
            vec![layer.to_string(), num(mean(|c| &c.token1)), num(mean(|c| &c.token2)), at.len().to_string()]
        })
        .collect();
    write_csv(&dir.join("fig4.csv"), &prov, &["layer", "token1", "token2", "points"], &fig4)?;

    let mut sums: BTreeMap<(&str, usize), (f64, usize)> = BTreeMap::new();
    for r in &sim {
        for &(len, f1) in &r.curve {
            let e = sums.entry((r.mode.name(), len)).or_default();
            e.0 += f1;
            e.1 += 1;
        }
    }
    let fig5: Vec<Vec<String>> = sums
        .iter()
        .map(|(&(mode, len), &(sum, n))| vec![mode.to_owned(), len.to_string(), num(sum / n as f64), n.to_string()])
        .collect();
    write_csv(&dir.join("fig5.csv"), &prov, &["mode", "length", "f1", "curves"], &fig5)?;

    let mut fig7 = Vec::new();
    for r in &scan {
        for (s, j) in r.softness.iter().zip(&r.randomness) {
            fig7.push(vec![r.randomizer.clone(), num(r.hyperparam), num(*s), num(*j)]);
        }
    }
    write_csv(&dir.join("fig7.csv"), &prov, &["randomizer", "hyperparam", "softness", "randomness"], &fig7)?;
    staging.commit()
}

/// Decode, every probe, then figures. Returns the run directory.
pub fn run_all(exp: &Experiment, out_root: &Path, pool: &ThreadPool) -> Result<PathBuf> {
    let weights = exp.load_model()?;
    decode_all(exp, &weights, out_root, pool)?;
    for kind in ProbeKind::ALL {
        run_probe(kind, exp, &weights, out_root, pool)?;
    }
    figures(&run_dir(out_root, exp))?;
    Ok(run_dir(out_root, exp))
}

/// Mean prefix-similarity curve of `mode` against greedy from similarity
/// rows, by prefix length.
pub fn mean_curve(rows: &[SimilarityRow], mode: Mode) -> BTreeMap<usize, f64> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.mode == mode) {
        for &(len, f1) in &r.curve {
            let e = sums.entry(len).or_default();
            e.0 += f1;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(len, (s, n))| (len, s / n as f64)).collect()
}

/// Reads `probes/similarity.jsonl` under `run_dir`.
pub fn read_similarity(run_dir: &Path) -> Result<Vec<SimilarityRow>> {
    Ok(read_probe(&run_dir.join(PROBES_DIR), ProbeKind::Similarity)?.1)
}

/// Reads `probes/scan.jsonl` under `run_dir`.
pub fn read_scan(run_dir: &Path) -> Result<Vec<ScanRow>> {
    Ok(read_probe(&run_dir.join(PROBES_DIR), ProbeKind::Scan)?.1)
}

pub use artifact::ARTIFACT_SCHEMA;

impl ScanRow {
    pub fn randomizer(&self) -> Option<Randomizer> {
        match self.randomizer.as_str() {
            "dirichlet" => Some(Randomizer::Dirichlet { gamma: self.hyperparam }),
            "gumbel" => Some(Randomizer::GumbelSoftmax { tau: self.hyperparam }),
            _ => None,
        }
    }
}
