use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::privacy::MiaConfig;
use crate::taskbench::{ClassifierConfig, ExperimentConfig, GeneratorConfig, PipelineToggles, SynthesisConfig, TaskSpec};
use crate::theory::{BoundParams, FiniteClassExperiment};
use crate::{Error, Result};

/// Monte-Carlo check of the bound on a finite threshold class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub experiment: FiniteClassExperiment,
    pub sample_size: usize,
    pub t: f64,
    pub trials: usize,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        MonteCarloSection {
            experiment: FiniteClassExperiment::default(),
            sample_size: 500,
            t: 0.1,
            trials: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSection {
    pub log_cardinality_f: f64,
    pub delta: f64,
    pub sample_size: u64,
    pub monte_carlo: Option<MonteCarloSection>,
}

impl Default for BoundSection {
    fn default() -> Self {
        BoundSection {
            log_cardinality_f: 50f64.ln(),
            delta: 0.05,
            sample_size: 500,
            monte_carlo: None,
        }
    }
}

impl BoundSection {
    pub fn params(&self) -> BoundParams {
        BoundParams {
            log_cardinality_f: self.log_cardinality_f,
            delta: self.delta,
            sample_size: self.sample_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiaSection {
    pub num_shadows: usize,
    pub privacy_size: usize,
    pub epoch_factor: usize,
    pub classifier_hidden: Vec<usize>,
    pub shuffles: usize,
    pub num_seeds: usize,
}

impl Default for MiaSection {
    fn default() -> Self {
        let d = MiaConfig::default();
        MiaSection {
            num_shadows: d.num_shadows,
            privacy_size: d.privacy_size,
            epoch_factor: d.epoch_factor,
            classifier_hidden: d.classifier_hidden,
            shuffles: d.shuffles,
            num_seeds: 3,
        }
    }
}

/// Everything a command needs besides `--seed` and `--out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub generator: GeneratorConfig,
    pub synthesis: SynthesisConfig,
    pub classifier: ClassifierConfig,
    pub toggles: PipelineToggles,
    pub lambda: f64,
    /// Seeds `seed, seed + 1, ...` used by multi-seed commands.
    pub num_seeds: usize,
    /// Size of `synth` output; defaults to the real training size.
    pub synth_size: Option<usize>,
    pub scale_ks: Vec<f64>,
    pub bound: BoundSection,
    pub mia: MiaSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskSpec::default(),
            generator: GeneratorConfig::default(),
            synthesis: SynthesisConfig::default(),
            classifier: ClassifierConfig::default(),
            toggles: PipelineToggles::full(),
            lambda: 0.0,
            num_seeds: 5,
            synth_size: None,
            scale_ks: vec![1.0, 2.0, 5.0, 10.0],
            bound: BoundSection::default(),
            mia: MiaSection::default(),
        }
    }
}

impl RunConfig {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            task: self.task.clone(),
            generator: self.generator.clone(),
            synthesis: self.synthesis,
            classifier: self.classifier.clone(),
            lambda: self.lambda,
        }
    }

    pub fn mia_config(&self) -> MiaConfig {
        MiaConfig {
            num_shadows: self.mia.num_shadows,
            privacy_size: self.mia.privacy_size,
            epoch_factor: self.mia.epoch_factor,
            classifier_hidden: self.mia.classifier_hidden.clone(),
            shuffles: self.mia.shuffles,
            toggles: self.toggles,
        }
    }

    pub fn seeds(&self, base: u64) -> Vec<u64> {
        (0..self.num_seeds as u64).map(|i| base.wrapping_add(i)).collect()
    }

    pub fn mia_seeds(&self, base: u64) -> Vec<u64> {
        (0..self.mia.num_seeds as u64).map(|i| base.wrapping_add(i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment().validate()?;
        self.toggles.validate()?;
        self.mia_config().validate()?;
        self.bound.params().validate()?;
        let bad = |what: &'static str, detail: String| Err(Error::OutOfRange { what, detail });
        if self.num_seeds == 0 {
            return bad("num_seeds", "must be >= 1".into());
        }
        if self.mia.num_seeds == 0 {
            return bad("num_seeds", "mia.num_seeds must be >= 1".into());
        }
        if let Some(n) = self.synth_size {
            if n < self.task.num_classes {
                return bad("synth_size", format!("{n} is smaller than num_classes"));
            }
        }
        if self.scale_ks.is_empty() || self.scale_ks.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return bad("scale_ks", "must be a nonempty list of positive numbers".into());
        }
        if let Some(mc) = &self.bound.monte_carlo {
            mc.experiment.validate()?;
            if mc.sample_size == 0 || mc.trials == 0 || !(mc.t > 0.0 && mc.t.is_finite()) {
                return bad("monte_carlo", "sample_size and trials must be >= 1 and t positive".into());
            }
        }
        Ok(())
    }
}

/// 1-based line of the first occurrence of `"key"`, if any.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map(|i| i + 1)
}

/// Parses and validates config text; an empty document means all defaults.
///
/// Errors carry the line of the offending key when one can be located, and
/// line 0 otherwise.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = if text.trim().is_empty() {
        RunConfig::default()
    } else {
        serde_json::from_str(text).map_err(|e| Error::Config {
            line: e.line(),
            message: e.to_string(),
        })?
    };
    cfg.validate().map_err(|e| {
        let field = match &e {
            Error::OutOfRange { what, .. } | Error::DimensionMismatch { what, .. } => Some(*what),
            _ => None,
        };
        // "optimizer.lr" or "epochs / batch_size" style names: anchor on the first plain key found
        let line = field
            .into_iter()
            .flat_map(|f| f.split(['.', '/', ' ']))
            .filter(|k| !k.is_empty())
            .find_map(|k| line_of_key(text, k))
            .unwrap_or(0);
        Error::Config {
            line,
            message: e.to_string(),
        }
    })?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text)
}

/// Pretty JSON listing every field, defaults included.
pub fn snapshot(cfg: &RunConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults_and_snapshot_lists_them() {
        let cfg = parse_config_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let snap = snapshot(&cfg);
        for key in ["\"gamma\"", "\"guidance_scale\"", "\"strength\"", "\"num_steps\"", "\"num_shadows\"", "\"beta_end\""] {
            assert!(snap.contains(key), "{key} missing from snapshot");
        }
        assert_eq!(parse_config_str("{}").unwrap(), cfg);
    }

    #[test]
    fn snapshot_round_trips() {
        let text = r#"{"generator": {"loss": {"gamma": 0.125}}, "bound": {"monte_carlo": {}}, "synth_size": 33}"#;
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.generator.loss.gamma, 0.125);
        assert_eq!(parse_config_str(&snapshot(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn negative_gamma_names_field_and_line() {
        let text = "{\n  \"generator\": {\n    \"loss\": {\"gamma\": -1}\n  }\n}";
        match parse_config_str(text) {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("gamma"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_type_mismatch_are_line_anchored() {
        match parse_config_str("{\n\"task\": {\n\"colour\": 1}}") {
            Err(Error::Config { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("colour"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match parse_config_str("{\n\n\"lambda\": \"big\"}") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_toggle_combination_rejected() {
        let text = r#"{"toggles": {"finetune": false, "mmd_loss": true}}"#;
        assert!(matches!(parse_config_str(text), Err(Error::Config { .. })));
    }
}
