//! Experiment specification: a TOML file naming a model, prompts, decode
//! settings and probe parameters.
//!
//! ```toml
//! modes = ["greedy", "sample", "soft_vanilla"]
//! replications = 2
//!
//! [model]
//! toy = { layers = 2, dim = 32 }
//! seed = 7
//!
//! [prompts]
//! inline = ["2+2="]
//! file = "../corpus/toy_tasks.txt"
//!
//! [decode]
//! max_len = 128
//! seed = 1
//! ```
//!
//! Relative paths resolve against the spec file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use softthink::decode::{AnswerMode, DecodeConfig, Mode};
use softthink::model::{card_path, init_toy_model, load_weights, tokenizer, ToySpec};
use softthink::probes::{BRANCH_THRESHOLD, LENS_WEIGHTS};
use softthink::samplers::Randomizer;
use softthink::{ModelWeights, TokenId};

use crate::error::{data, file_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: ModelRef,
    #[serde(default)]
    pub prompts: PromptSet,
    #[serde(default)]
    pub decode: DecodeConfig,
    /// Modes to decode; empty means `decode.mode` alone.
    #[serde(default)]
    pub modes: Vec<Mode>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub probes: ProbeParams,
    /// Output root; the CLI flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}

/// Either a weights file (with its `.card.json` sidecar) or a toy spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToySpec>,
    /// Toy initialization seed.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSet {
    #[serde(default)]
    pub inline: Vec<String>,
    /// One prompt per non-empty line, appended after `inline`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeParams {
    /// JS(P1, P2) threshold for branching points.
    pub branch_threshold: f64,
    /// Branching points examined by the lens probe, per trace.
    pub lens_points: usize,
    pub lens_weights: [f64; 2],
    /// Top entries of the step's soft token used by the linearity probe.
    pub linearity_support: usize,
    /// Steps examined by the linearity probe, per trace.
    pub linearity_points: usize,
    /// Prefix lengths in steps; empty means every length up to the longer
    /// of the two sequences.
    pub prefix_lengths: Vec<usize>,
    pub scan_gammas: Vec<f64>,
    pub scan_taus: Vec<f64>,
    /// Step cap for scan decodes; defaults to `decode.max_len`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scan_max_len: Option<usize>,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self {
            branch_threshold: BRANCH_THRESHOLD,
            lens_points: 4,
            lens_weights: [LENS_WEIGHTS.0, LENS_WEIGHTS.1],
            linearity_support: 2,
            linearity_points: 8,
            prefix_lengths: Vec::new(),
            scan_gammas: (1..=10).map(f64::from).collect(),
            scan_taus: (3..=9).map(|t| f64::from(t) / 10.0).collect(),
            scan_max_len: None,
        }
    }
}

impl ProbeParams {
    pub fn scan_points(&self) -> Vec<Randomizer> {
        let gammas = self.scan_gammas.iter().map(|&gamma| Randomizer::Dirichlet { gamma });
        let taus = self.scan_taus.iter().map(|&tau| Randomizer::GumbelSoftmax { tau });
        gammas.chain(taus).collect()
    }
}

/// Command-line overrides of spec fields; set fields win.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub modes: Option<Vec<Mode>>,
    pub temperature: Option<f64>,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub max_len: Option<usize>,
    pub seed: Option<u64>,
    pub answer_mode: Option<AnswerMode>,
    pub replications: Option<usize>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| data(format!("experiment spec: {e}")))?;
        Ok(spec.rebased(base_dir))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(file_err(path))?;
        let spec: Self =
            toml::from_str(&text).map_err(|source| HarnessError::Toml { path: path.to_path_buf(), source })?;
        Ok(spec.rebased(path.parent().unwrap_or(Path::new("."))))
    }

    fn rebased(mut self, base: &Path) -> Self {
        let join = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        join(&mut self.model.path);
        join(&mut self.prompts.file);
        join(&mut self.output);
        self
    }

    pub fn apply(&mut self, o: &Overrides) {
        let d = &mut self.decode;
        macro_rules! set {
            ($($src:ident => $dst:expr),* $(,)?) => {$(if let Some(v) = o.$src.clone() { $dst = v; })*};
        }
        set! {
            mode => d.mode,
            temperature => d.temperature,
            top_k => d.top_k,
            top_p => d.top_p,
            gamma => d.gamma,
            tau => d.tau,
            max_len => d.max_len,
            seed => d.seed,
            answer_mode => d.answer_mode,
            modes => self.modes,
            replications => self.replications,
        }
    }

    pub fn modes(&self) -> Vec<Mode> {
        if self.modes.is_empty() {
            vec![self.decode.mode]
        } else {
            self.modes.clone()
        }
    }
}

/// A spec with prompts read, the model located and the content hash taken.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub prompts: Vec<String>,
    /// sha256 of the weights file and card, for file-backed models.
    pub model_digest: Option<String>,
    /// First 16 hex digits of the sha256 of the canonical spec JSON.
    pub hash: String,
}

#[derive(Serialize)]
struct Canonical<'a> {
    model: CanonicalModel<'a>,
    prompts: &'a [String],
    decode: &'a DecodeConfig,
    modes: Vec<Mode>,
    replications: usize,
    probes: &'a ProbeParams,
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum CanonicalModel<'a> {
    File { sha256: &'a str },
    Toy { spec: &'a ToySpec, seed: u64 },
}

impl Experiment {
    pub fn resolve(spec: ExperimentSpec) -> Result<Self> {
        if spec.replications == 0 {
            return Err(data("replications must be at least 1"));
        }
        let mut prompts = spec.prompts.inline.clone();
        if let Some(file) = &spec.prompts.file {
            let text = fs::read_to_string(file).map_err(file_err(file))?;
            prompts.extend(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned));
        }
        if prompts.is_empty() {
            return Err(data("experiment has no prompts"));
        }
        let model_digest = match (&spec.model.path, &spec.model.toy) {
            (Some(path), None) => {
                let mut h = Sha256::new();
                h.update(fs::read(path).map_err(file_err(path))?);
                let card = card_path(path);
                h.update(fs::read(&card).map_err(file_err(&card))?);
                Some(hex::encode(h.finalize()))
            }
            (None, Some(_)) => None,
            _ => return Err(data("model needs exactly one of `path` or `toy`")),
        };
        let canonical = Canonical {
            model: match (&model_digest, &spec.model.toy) {
                (Some(sha256), _) => CanonicalModel::File { sha256 },
                (None, Some(toy)) => CanonicalModel::Toy { spec: toy, seed: spec.model.seed },
                _ => unreachable!("checked above"),
            },
            prompts: &prompts,
            decode: &spec.decode,
            modes: spec.modes(),
            replications: spec.replications,
            probes: &spec.probes,
        };
        // serde_json::Value keeps object keys sorted, which fixes the byte form
        let json = serde_json::to_string(&serde_json::to_value(&canonical)?)?;
        let hash = hex::encode(Sha256::digest(json.as_bytes()))[..16].to_owned();
        Ok(Self { spec, prompts, model_digest, hash })
    }

    pub fn root_seed(&self) -> u64 {
        self.spec.decode.seed
    }

    pub fn prompt_ids(&self) -> Vec<Vec<TokenId>> {
        self.prompts.iter().map(tokenizer::tokenize).collect()
    }

    pub fn load_model(&self) -> Result<ModelWeights> {
        let weights = match (&self.spec.model.path, &self.spec.model.toy) {
            (Some(path), _) => load_weights(path)?,
            (None, Some(toy)) => init_toy_model(toy, self.spec.model.seed)?,
            _ => unreachable!("checked in resolve"),
        };
        self.spec.decode.validate(weights.card())?;
        Ok(weights)
    }
}
