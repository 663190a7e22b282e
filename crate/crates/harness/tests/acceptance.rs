//! Acceptance suite: one PASS/FAIL line per criterion with its tolerance
//! and time budget.
//!
//! Criteria listed in `EXPECTED_FAILURES` cannot hold as stated; they are
//! still run and reported as FAIL, but do not fail the process.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use softthink::decode::{decode, DecodeConfig, Mode};
use softthink::model::{init_linear_mixture_model, init_toy_model, tokenizer, ModelInput, ToySpec};
use softthink::probes::{linearity_check, randomness_softness_scan, rouge_l, ScanGrid};
use softthink::samplers::{dirichlet_resample, gumbel_argmax, gumbel_top_k, Randomizer, RngState, Truncation};
use softthink::simplex::{js_divergence, softmax, truncate, truncate_soft};
use softthink::{ModelWeights, ProbVector, SoftToken, TokenId};
use softthink_harness::pipeline::{self, mean_curve, ProbeKind};
use softthink_harness::spec::{Experiment, ExperimentSpec};

const EXPECTED_FAILURES: &[(u32, &str)] =
    &[(1, "top-k then top-p truncation is not idempotent for top_p < 1, e.g. [0.4, 0.3, 0.3] at top_p 0.5")];

const TOY_SEED: u64 = 7;

type Criterion = (u32, &'static str, u64, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn corpus() -> Vec<Vec<TokenId>> {
    let text = fs::read_to_string(manifest_dir().join("corpus/toy_tasks.txt")).expect("shipped corpus");
    text.lines().filter(|l| !l.trim().is_empty()).map(tokenizer::tokenize).collect()
}

fn toy_model() -> ModelWeights {
    init_toy_model(&ToySpec::default(), TOY_SEED).expect("toy model")
}

/// Random distribution over `n` entries with a heavy-ish tail.
fn random_probs(n: usize, rng: &mut RngState) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| (3.0 * rng.standard_normal()).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn c1_simplex() -> Outcome {
    const CASES: usize = 1000;
    let mut rng = RngState::new(1);
    let (mut sum_ok, mut bounds_ok, mut sym_ok, mut idem_ok, mut ratio_ok) = (0, 0, 0, 0, 0);
    let mut idem_example = None;
    for _ in 0..CASES {
        let n = 2 + (rng.uniform() * 60.0) as usize;
        let logits: Vec<f64> = (0..n).map(|_| 4.0 * rng.standard_normal()).collect();
        let t = 0.2 + 1.8 * rng.uniform();
        let p = softmax(&logits, t).unwrap();
        let k = 1 + (rng.uniform() * n as f64) as usize;
        let top_p = 0.05 + 0.95 * rng.uniform();
        let st = truncate(&p, k, top_p).unwrap();
        let sum_p: f64 = p.weights().iter().sum();
        let sum_st: f64 = st.entries().iter().map(|e| e.1).sum();
        sum_ok += usize::from((sum_p - 1.0).abs() <= 1e-9 && (sum_st - 1.0).abs() <= 1e-9);

        let q = ProbVector::new(random_probs(n, &mut rng)).unwrap();
        let (pq, qp) = (js_divergence(&p, &q), js_divergence(&q, &p));
        bounds_ok += usize::from((0.0..=std::f64::consts::LN_2).contains(&pq));
        sym_ok += usize::from((pq - qp).abs() <= 1e-12);

        let again = truncate_soft(&st, k, top_p).unwrap();
        let same = again.len() == st.len()
            && again.entries().iter().zip(st.entries()).all(|(a, b)| a.0 == b.0 && (a.1 - b.1).abs() <= 1e-12);
        idem_ok += usize::from(same);
        if !same && idem_example.is_none() {
            idem_example = Some(format!("k={k} top_p={top_p:.3}: {} -> {} entries", st.len(), again.len()));
        }

        let ratios = st.entries().iter().all(|&(i, wi)| {
            st.entries().iter().all(|&(j, wj)| {
                let want = p.weights()[i as usize] / p.weights()[j as usize];
                ((wi / wj) - want).abs() <= 1e-9 * want.max(1.0)
            })
        });
        ratio_ok += usize::from(ratios);
    }
    let all = [sum_ok, bounds_ok, sym_ok, idem_ok, ratio_ok].iter().all(|&c| c == CASES);
    let mut detail = format!(
        "sum-to-one {sum_ok}/{CASES} (1e-9), JS in [0, ln 2] {bounds_ok}/{CASES}, JS symmetry {sym_ok}/{CASES} (1e-12), \
         idempotence {idem_ok}/{CASES}, ratio preservation {ratio_ok}/{CASES}"
    );
    if let Some(e) = idem_example {
        detail += &format!("; first non-idempotent case {e}");
    }
    Outcome::new(all, detail)
}

fn c2_gumbel_max() -> Outcome {
    let pi = [0.5, 0.3, 0.2];
    let st = SoftToken::new(vec![(0, 0.5), (1, 0.3), (2, 0.2)]).unwrap();
    let mut rng = RngState::new(2);
    let draws = 100_000;
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        counts[gumbel_argmax(&st, &mut rng) as usize] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let err = freq.iter().zip(pi).map(|(f, p)| (f - p).abs()).fold(0.0, f64::max);
    Outcome::new(err <= 0.01, format!("freq {freq:.4?} vs {pi:?}, max |err| {err:.4} (tol 0.01)"))
}

fn c3_gumbel_top_k() -> Outcome {
    let pi = [0.4, 0.3, 0.2, 0.1];
    let st = SoftToken::new(pi.iter().enumerate().map(|(i, &p)| (i as TokenId, p)).collect()).unwrap();
    let mut rng = RngState::new(3);
    let draws = 200_000;
    let mut counts = [[0usize; 4]; 4];
    for _ in 0..draws {
        let ids = gumbel_top_k(&st, 2, &mut rng).unwrap();
        counts[ids[0] as usize][ids[1] as usize] += 1;
    }
    let mut worst = 0.0f64;
    for i in 0..4 {
        for j in (0..4).filter(|&j| j != i) {
            // sequential draws without replacement
            let oracle = pi[i] * pi[j] / (1.0 - pi[i]);
            worst = worst.max((counts[i][j] as f64 / draws as f64 - oracle).abs());
        }
    }
    // the three-class example
    let three = SoftToken::new(vec![(0, 0.5), (1, 0.3), (2, 0.2)]).unwrap();
    let hits = (0..draws).filter(|_| gumbel_top_k(&three, 2, &mut rng).unwrap() == [0, 1]).count();
    let ex = hits as f64 / draws as f64;
    let pass = worst <= 0.01 && (ex - 0.30).abs() <= 0.01;
    Outcome::new(
        pass,
        format!("12 ordered pairs max |err| {worst:.4}; P(0 then 1) on (.5,.3,.2) = {ex:.4} vs 0.30 (tol 0.01)"),
    )
}

fn c4_dirichlet() -> Outcome {
    let pi = [0.5, 0.3, 0.2];
    let st = SoftToken::new(vec![(0, 0.5), (1, 0.3), (2, 0.2)]).unwrap();
    let draws = 100_000;
    let mut rng = RngState::new(4);
    let mut mean_err = 0.0f64;
    let mut variances = Vec::new();
    for gamma in [1.0, 4.0, 10.0] {
        let (mut sum, mut sq) = ([0.0f64; 3], [0.0f64; 3]);
        for _ in 0..draws {
            let r = dirichlet_resample(&st, gamma, Truncation::NONE, &mut rng).unwrap();
            for i in 0..3 {
                let w = r.token.weight_of(i as TokenId);
                sum[i] += w;
                sq[i] += w * w;
            }
        }
        let n = draws as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        mean_err = mean_err.max(mean.iter().zip(pi).map(|(m, p)| (m - p).abs()).fold(0.0, f64::max));
        variances.push((0..3).map(|i| sq[i] / n - mean[i] * mean[i]).collect::<Vec<f64>>());
    }
    let decreasing = (0..3).all(|i| variances[0][i] > variances[1][i] && variances[1][i] > variances[2][i]);
    let v0: Vec<String> = variances.iter().map(|v| format!("{:.4}", v[0])).collect();
    Outcome::new(
        mean_err <= 0.01 && decreasing,
        format!("max |mean - π| {mean_err:.4} (tol 0.01); var of component 0 over γ=1,4,10: {}", v0.join(" > ")),
    )
}

fn c5_scan_shape() -> Outcome {
    let w = toy_model();
    let base = DecodeConfig { max_len: 128, seed: 1, ..DecodeConfig::default() };
    let grid = ScanGrid {
        points: vec![
            Randomizer::GumbelSoftmax { tau: 0.3 },
            Randomizer::GumbelSoftmax { tau: 0.6 },
            Randomizer::GumbelSoftmax { tau: 0.9 },
            Randomizer::Dirichlet { gamma: 1.0 },
            Randomizer::Dirichlet { gamma: 10.0 },
        ],
    };
    let r = randomness_softness_scan(&corpus(), &w, &grid, &base).unwrap();
    let steps = r.iter().map(|x| x.softness.len()).min().unwrap_or(0);
    let s: Vec<f64> = r[..3].iter().map(|x| x.mean_softness()).collect();
    let (d1, d10) = (r[3].mean_randomness(), r[4].mean_randomness());
    let pass = steps >= 1000 && s[0] < s[1] && s[1] < s[2] && d1 > d10;
    Outcome::new(
        pass,
        format!(
            "softness τ=0.3/0.6/0.9: {:.4} < {:.4} < {:.4}; Dirichlet randomness γ=1 {d1:.4} > γ=10 {d10:.4}; \
             ≥{steps} steps per point (need 1000)",
            s[0], s[1], s[2]
        ),
    )
}

fn c6_one_hot_equivalence() -> Outcome {
    let w = toy_model();
    let prompts = corpus();
    let greedy = DecodeConfig { mode: Mode::Greedy, max_len: 128, seed: 6, ..DecodeConfig::default() };
    let soft = DecodeConfig { mode: Mode::SoftVanilla, top_k: 1, ..greedy.clone() };
    let mut matched = 0;
    let mut steps = 0;
    for p in &prompts {
        let a = decode(p, &greedy, &w).unwrap();
        let b = decode(p, &soft, &w).unwrap();
        steps += a.steps.len();
        matched += usize::from(a.dominant_ids() == b.dominant_ids());
    }
    Outcome::new(
        matched == prompts.len() && prompts.len() >= 10,
        format!("{matched}/{} prompts identical over full length ({steps} greedy steps)", prompts.len()),
    )
}

fn c7_engine_consistency() -> Outcome {
    let w = toy_model();
    let prompt = &corpus()[0];
    let mut inputs: Vec<ModelInput> = prompt.iter().map(|&t| ModelInput::Token(t)).collect();
    let mut cache = w.new_cache();
    let mut out = w.forward_inputs(&inputs, &mut cache, true).unwrap();
    let (mut worst_rel, mut worst_js) = (0.0f64, 0.0f64);
    for _ in 0..64 {
        let mut fresh = w.new_cache();
        let full = w.forward_inputs(&inputs, &mut fresh, false).unwrap();
        let scale = full.logits.iter().fold(0.0f32, |m, x| m.max(x.abs())) as f64;
        let diff = out.logits.iter().zip(&full.logits).fold(0.0f32, |m, (a, b)| m.max((a - b).abs())) as f64;
        worst_rel = worst_rel.max(diff / scale.max(f64::MIN_POSITIVE));

        let acts = out.activations.as_ref().expect("captured");
        let lens = w.logit_lens(acts.layers.last().expect("layers")).unwrap();
        let logits: Vec<f64> = out.logits.iter().map(|&x| x as f64).collect();
        worst_js = worst_js.max(js_divergence(&lens, &softmax(&logits, 1.0).unwrap()));

        let next = logits.iter().enumerate().fold(0, |b, (i, &x)| if x > logits[b] { i } else { b }) as TokenId;
        inputs.push(ModelInput::Token(next));
        out = w.forward_inputs(&[ModelInput::Token(next)], &mut cache, true).unwrap();
    }
    Outcome::new(
        worst_rel <= 1e-5 && worst_js < 1e-6,
        format!("64 steps: max relative logit diff {worst_rel:.3e} (tol 1e-5), final-layer lens JS {worst_js:.3e} (tol 1e-6)"),
    )
}

fn c8_linearity() -> Outcome {
    let mut rng = RngState::new(8);
    let pick = |rng: &mut RngState, n: usize| (rng.uniform() * n as f64) as TokenId;

    let linear: ModelWeights = init_linear_mixture_model(16, 8).unwrap();
    let mut linear_js = 0.0f64;
    for _ in 0..50 {
        let ctx: Vec<ModelInput> = (0..3).map(|_| ModelInput::Token(pick(&mut rng, 16))).collect();
        let probs = random_probs(3, &mut rng);
        let mut ids = vec![pick(&mut rng, 16)];
        while ids.len() < 3 {
            let id = pick(&mut rng, 16);
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        let st = SoftToken::normalized(ids.into_iter().zip(probs).collect()).unwrap();
        linear_js = linear_js.max(linearity_check(&ctx, &st, &linear).unwrap().js);
    }

    let w = toy_model();
    let prompts = corpus();
    let (mut one_hot_js, mut soft_min, mut soft_max) = (0.0f64, f64::INFINITY, 0.0f64);
    for (i, p) in prompts.iter().enumerate() {
        let ctx: Vec<ModelInput> = p.iter().map(|&t| ModelInput::Token(t)).collect();
        let id = p[i % p.len()];
        one_hot_js = one_hot_js.max(linearity_check(&ctx, &SoftToken::one_hot(id), &w).unwrap().js);
        let other = (id + 1 + i as TokenId) % 256;
        let st = SoftToken::normalized(vec![(id, 0.6), (other, 0.4)]).unwrap();
        let js = linearity_check(&ctx, &st, &w).unwrap().js;
        soft_min = soft_min.min(js);
        soft_max = soft_max.max(js);
    }
    Outcome::new(
        linear_js < 1e-6 && one_hot_js < 1e-9 && soft_min > 0.0,
        format!(
            "single-linear-layer js {linear_js:.3e} (tol 1e-6); toy one-hot js {one_hot_js:.3e} (tol 1e-9); \
             toy 2-token js in [{soft_min:.4}, {soft_max:.4}] (must be > 0)"
        ),
    )
}

/// Longest common subsequence by trying every subsequence of the shorter
/// sequence, longest first.
fn brute_force_lcs(a: &[TokenId], b: &[TokenId]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let is_subsequence = |s: &[TokenId]| {
        let mut it = long.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let n = mask.count_ones() as usize;
        if n > best {
            let sub: Vec<TokenId> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| short[i]).collect();
            if is_subsequence(&sub) {
                best = n;
            }
        }
    }
    best
}

fn c9_rouge() -> Outcome {
    let mut rng = RngState::new(9);
    let mut exact = 0;
    let pairs = 500;
    for _ in 0..pairs {
        let seq = |rng: &mut RngState| -> Vec<TokenId> {
            let n = 1 + (rng.uniform() * 12.0) as usize;
            (0..n).map(|_| (rng.uniform() * 4.0) as TokenId).collect()
        };
        let (c, r) = (seq(&mut rng), seq(&mut rng));
        let lcs = brute_force_lcs(&c, &r) as f64;
        let (p, rec) = (lcs / c.len() as f64, lcs / r.len() as f64);
        let f1 = if lcs == 0.0 { 0.0 } else { 2.0 * p * rec / (p + rec) };
        exact += usize::from(rouge_l(&c, &r).unwrap().f1 == f1);
    }
    let example = rouge_l(&[0, 1, 2, 3], &[0, 2, 1, 3]).unwrap().f1;
    Outcome::new(
        exact == pairs && example == 0.75,
        format!("{exact}/{pairs} pairs exactly equal to brute-force LCS F1; [a,b,c,d] vs [a,c,b,d] = {example}"),
    )
}

fn similarity_spec(seed: u64) -> String {
    let corpus = manifest_dir().join("corpus/toy_tasks.txt");
    format!(
        r#"
modes = ["greedy", "sample", "soft_vanilla"]
[model]
toy = {{}}
seed = {TOY_SEED}
[prompts]
file = {corpus:?}
[decode]
max_len = 64
seed = {seed}
[probes]
prefix_lengths = [{}]
"#,
        (1..=64).map(|n| n.to_string()).collect::<Vec<_>>().join(", ")
    )
}

fn experiment(text: &str, dir: &Path) -> Experiment {
    Experiment::resolve(ExperimentSpec::from_toml(text, dir).unwrap()).unwrap()
}

fn c10_greedy_pitfall() -> Outcome {
    let out = tempfile::tempdir().unwrap();
    let pool = pipeline::worker_pool(None).unwrap();
    let mut rows = Vec::new();
    for seed in 1..=10 {
        let exp = experiment(&similarity_spec(seed), out.path());
        let w = exp.load_model().unwrap();
        pipeline::decode_all(&exp, &w, out.path(), &pool).unwrap();
        pipeline::run_probe(ProbeKind::Similarity, &exp, &w, out.path(), &pool).unwrap();
        rows.extend(pipeline::read_similarity(&pipeline::run_dir(out.path(), &exp)).unwrap());
    }
    let soft = mean_curve(&rows, Mode::SoftVanilla);
    let sample = mean_curve(&rows, Mode::Sample);
    let lengths: Vec<usize> = soft.keys().copied().filter(|l| sample.contains_key(l)).collect();
    let above = lengths.iter().filter(|l| soft[l] >= sample[l]).count();
    let frac = above as f64 / lengths.len().max(1) as f64;
    let at = |m: &BTreeMap<usize, f64>, l: usize| m.get(&l).copied().unwrap_or(f64::NAN);
    Outcome::new(
        frac >= 0.8,
        format!(
            "soft_vanilla ≥ sample at {above}/{} prefix lengths ({:.0}%, need 80%); f1 at 16: {:.3} vs {:.3}, at 64: {:.3} vs {:.3}",
            lengths.len(),
            100.0 * frac,
            at(&soft, 16),
            at(&sample, 16),
            at(&soft, 64),
            at(&sample, 64)
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn c11_determinism() -> Outcome {
    let spec = manifest_dir().join("specs/toy.toml");
    let exp = Experiment::resolve(ExperimentSpec::from_path(&spec).unwrap()).unwrap();
    let pool = pipeline::worker_pool(None).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let sa = snapshot(&pipeline::run_all(&exp, a.path(), &pool).unwrap());
    let sb = snapshot(&pipeline::run_all(&exp, b.path(), &pool).unwrap());
    let count = |prefix: &str| sa.keys().filter(|k| k.starts_with(prefix)).count();
    let differing =
        sa.iter().filter(|(k, v)| sb.get(*k) != Some(v)).count() + sb.keys().filter(|k| !sa.contains_key(*k)).count();
    Outcome::new(
        differing == 0 && count("traces") > 0 && count("probes") > 0 && count("figures") > 0,
        format!(
            "{} files ({} traces, {} probe, {} figure), {differing} differ between runs",
            sa.len(),
            count("traces"),
            count("probes"),
            count("figures")
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "simplex suite", 5, c1_simplex),
        (2, "Gumbel-Max marginals", 5, c2_gumbel_max),
        (3, "Gumbel-top-k pair law", 30, c3_gumbel_top_k),
        (4, "Dirichlet moments", 30, c4_dirichlet),
        (5, "softness/randomness shape", 120, c5_scan_shape),
        (6, "one-hot equivalence", 60, c6_one_hot_equivalence),
        (7, "engine consistency", 60, c7_engine_consistency),
        (8, "linearity boundary", 30, c8_linearity),
        (9, "ROUGE-L oracle", 5, c9_rouge),
        (10, "greedy-pitfall direction", 300, c10_greedy_pitfall),
        (11, "end-to-end determinism", 600, c11_determinism),
    ];
    let mut unexpected = Vec::new();
    for (n, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let pass = outcome.pass && in_time;
        let expected = EXPECTED_FAILURES.iter().find(|(k, _)| *k == n);
        println!(
            "criterion {n:>2}: {} {name}: {} [{:.2}s, budget {budget}s{}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
        match (pass, expected) {
            (false, Some((_, why))) => println!("              expected failure: {why}"),
            (false, None) => unexpected.push(n),
            (true, Some(_)) => println!("              note: listed as an expected failure but passed"),
            (true, None) => {}
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: no unexpected failures");
    } else {
        println!("acceptance: unexpected failures in criteria {unexpected:?}");
        std::process::exit(1);
    }
}
