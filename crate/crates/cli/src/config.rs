//! Experiment configuration files.

use mixsense::dataset::StorageMode;
use mixsense::pipeline::PipelineConfig;
use mixsense::synth::{make_ground_truth, GroundTruth};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// The formula token accepted in place of a literal sample size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeFormula {
    /// `N = 90·n·r·K` with `n = max(n1, n2)` and `r = max_k r_k`.
    #[serde(rename = "90nrK")]
    NinetyNrK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleSize {
    Count(usize),
    Formula(SizeFormula),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sigma {
    Single(f64),
    List(Vec<f64>),
}

impl Sigma {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Sigma::Single(s) => vec![*s],
            Sigma::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n1: usize,
    pub n2: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub ranks: Vec<usize>,
    pub proportions: Vec<f64>,
    pub spectra: Vec<Vec<f64>>,
    pub sigma: Sigma,
    #[serde(rename = "N")]
    pub n: SampleSize,
    /// Trial `t` uses seed `seed + t`.
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    /// Design storage; chosen from the problem size when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage: Option<StorageMode>,
    /// `pipeline.k` defaults to `K`; `pipeline.seed` is replaced by the trial seed.
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

fn one() -> usize {
    1
}

/// What the configuration is about to drive; the checks differ slightly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Trace,
    SweepNoise,
}

impl ExperimentConfig {
    /// Parses JSON, filling `pipeline.k` from `K` when it is not given.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut v: Value = serde_json::from_str(text).map_err(|e| format!("malformed config: {e}"))?;
        let obj = v.as_object_mut().ok_or("config must be a JSON object")?;
        if let Some(k) = obj.get("K").cloned() {
            let p = obj
                .entry("pipeline")
                .or_insert_with(|| Value::Object(Default::default()));
            if let Some(p) = p.as_object_mut() {
                p.entry("k").or_insert(k);
            }
        }
        serde_json::from_value(v).map_err(|e| format!("malformed config: {e}"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn samples(&self) -> usize {
        match self.n {
            SampleSize::Count(n) => n,
            SampleSize::Formula(SizeFormula::NinetyNrK) => {
                let r = self.ranks.iter().copied().max().unwrap_or(0);
                90 * self.n1.max(self.n2) * r * self.k
            }
        }
    }

    pub fn trial_seed(&self, t: usize) -> u64 {
        self.seed.wrapping_add(t as u64)
    }

    pub fn storage_mode(&self) -> StorageMode {
        self.storage.unwrap_or_else(|| {
            StorageMode::auto(
                self.n1,
                self.n2,
                self.samples(),
                mixsense::dataset::DEFAULT_STORAGE_BUDGET,
            )
        })
    }

    pub fn ground_truth(&self, seed: u64) -> mixsense::Result<GroundTruth> {
        make_ground_truth(
            self.n1,
            self.n2,
            &self.ranks,
            &self.proportions,
            &self.spectra,
            seed,
        )
    }

    /// Everything that can be rejected before any work starts.
    pub fn check(&self, cmd: Command) -> Result<(), String> {
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        if self.n1 == 0 || self.n2 == 0 {
            return Err("n1 and n2 must be positive".into());
        }
        if self.k == 0 || self.ranks.len() != self.k {
            return Err(format!("K = {} but {} ranks given", self.k, self.ranks.len()));
        }
        if self.pipeline.k != self.k {
            return Err(format!(
                "pipeline.k = {} differs from K = {}",
                self.pipeline.k, self.k
            ));
        }
        let sigmas = self.sigma.values();
        if sigmas.is_empty() {
            return Err("sigma list is empty".into());
        }
        if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(format!("noise level {s} must be finite and >= 0"));
        }
        if cmd != Command::SweepNoise && sigmas.len() != 1 {
            return Err("run and trace take a single noise level".into());
        }
        if self.samples() < self.k {
            return Err(format!("N = {} is smaller than K", self.samples()));
        }
        let pipeline = match cmd {
            // A zero-iteration trace shows just the initialisation.
            Command::Trace if self.pipeline.t0 == 0 => PipelineConfig {
                t0: 1,
                ..self.pipeline.clone()
            },
            _ => self.pipeline.clone(),
        };
        pipeline.validate().map_err(|e| e.to_string())?;
        self.ground_truth(self.seed).map_err(|e| e.to_string())?;
        Ok(())
    }
}
