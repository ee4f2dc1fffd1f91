use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::envs::{preset, EnvSpec};
use crate::error::{Error, Result};
use crate::learners::{InitSpec, DEFAULT_QR_STEP_SIZE};
use crate::policies::{PolicyConfig, PolicyKind};
use crate::wgf::ProximalConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Regress,
    Ablate,
    Evaluate,
    Control,
    ComparePolicies,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Regress => "regress",
            ExperimentKind::Ablate => "ablate",
            ExperimentKind::Evaluate => "evaluate",
            ExperimentKind::Control => "control",
            ExperimentKind::ComparePolicies => "compare-policies",
        }
    }

    fn default_preset(self) -> &'static str {
        match self {
            ExperimentKind::Regress | ExperimentKind::Ablate => "gmm-five",
            ExperimentKind::Evaluate => "cliffwalk-standard",
            ExperimentKind::Control | ExperimentKind::ComparePolicies => "cliffwalk-modified",
        }
    }

    fn default_trials(self) -> usize {
        match self {
            ExperimentKind::Regress => 100,
            ExperimentKind::Evaluate => 10,
            _ => 50,
        }
    }

    fn is_control(self) -> bool {
        matches!(self, ExperimentKind::Control | ExperimentKind::ComparePolicies)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    #[default]
    Wgf,
    Qr,
}

/// One compared method of a control experiment.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default)]
    pub learner: LearnerKind,
    pub policy: PolicyConfig,
}

impl MethodSpec {
    fn new(name: &str, learner: LearnerKind, kind: PolicyKind) -> Self {
        Self {
            name: name.into(),
            learner,
            policy: PolicyConfig::new(kind),
        }
    }
}

/// Settings shared by the control learners.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub episodes: usize,
    pub particles: usize,
    /// Defaults to the environment's horizon.
    pub horizon: Option<usize>,
    /// Defaults to the environment's discount.
    pub gamma: Option<f64>,
    pub init: InitSpec,
    pub qr_step_size: f64,
    pub evaluate_greedy: bool,
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            episodes: 200,
            particles: 16,
            horizon: None,
            gamma: None,
            init: InitSpec::default(),
            qr_step_size: DEFAULT_QR_STEP_SIZE,
            evaluate_greedy: true,
        }
    }
}

/// Overrides of the proximal loss settings.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProximalSection {
    pub h: Option<f64>,
    pub gradient_step_size: Option<f64>,
    pub max_gradient_steps: Option<usize>,
    pub loss_tolerance: Option<f64>,
    pub annealing: Option<Vec<f64>>,
    pub debias: Option<bool>,
}

impl ProximalSection {
    fn apply(&self, mut cfg: ProximalConfig) -> Result<ProximalConfig> {
        if let Some(h) = self.h {
            cfg.h = h;
        }
        if let Some(s) = self.gradient_step_size {
            cfg.gradient_step_size = s;
        }
        if let Some(n) = self.max_gradient_steps {
            cfg.max_gradient_steps = n;
        }
        if let Some(t) = self.loss_tolerance {
            cfg.loss_tolerance = t;
        }
        if let Some(a) = &self.annealing {
            if a.is_empty() {
                return Err(Error::Config("proximal.annealing must not be empty".into()));
            }
            cfg = with_final_temperature(cfg, a.clone())?;
        }
        if let Some(d) = self.debias {
            cfg.debias = d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Uses `temps` as the loss annealing and ends the Sinkhorn schedule on the last of them.
pub fn with_final_temperature(cfg: ProximalConfig, temps: Vec<f64>) -> Result<ProximalConfig> {
    let last = *temps
        .last()
        .ok_or_else(|| Error::Config("annealing needs at least one temperature".into()))?;
    let mut cfg = ProximalConfig::new(
        cfg.h,
        last,
        cfg.gradient_step_size,
        cfg.max_gradient_steps,
        cfg.loss_tolerance,
    )
    .map(|fresh| ProximalConfig {
        max_backtracks: cfg.max_backtracks,
        debias: cfg.debias,
        ..fresh
    })?;
    cfg.annealing = temps;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressSection {
    pub sample_counts: Vec<usize>,
    pub reference_samples: usize,
    pub gradient_steps: usize,
    pub qr_iterations: usize,
    pub qr_step_size: f64,
}

impl Default for RegressSection {
    fn default() -> Self {
        Self {
            sample_counts: vec![5, 10, 20, 50],
            reference_samples: 10_000,
            gradient_steps: 100,
            qr_iterations: 5_000,
            qr_step_size: DEFAULT_QR_STEP_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    /// Minimum (final) loss temperatures.
    pub temperatures: Vec<f64>,
    /// JKO time steps.
    pub step_sizes: Vec<f64>,
    pub samples: usize,
    pub reference_samples: usize,
    pub gradient_steps: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            temperatures: vec![0.01, 0.1, 0.2, 0.25, 0.5, 0.9],
            step_sizes: vec![0.01, 0.1, 0.5, 1.0, 10.0],
            samples: 20,
            reference_samples: 10_000,
            gradient_steps: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub q_episodes: usize,
    pub q_epsilon: f64,
    pub q_gamma: f64,
    pub q_learning_rate: f64,
    pub rollouts: usize,
    pub depth: usize,
    pub particles: usize,
    pub gradient_steps: usize,
    /// `[row, col]` of the evaluated state; the start cell when absent.
    pub state: Option<[usize; 2]>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            q_episodes: 10_000,
            q_epsilon: 0.1,
            q_gamma: 0.9,
            q_learning_rate: 0.5,
            rollouts: 200,
            depth: 200,
            particles: 200,
            gradient_steps: 100,
            state: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    kind: Option<ExperimentKind>,
    preset: Option<String>,
    env_file: Option<PathBuf>,
    trials: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: Option<usize>,
    #[serde(default)]
    learner: LearnerSection,
    #[serde(default)]
    proximal: ProximalSection,
    #[serde(default)]
    methods: Vec<MethodSpec>,
    #[serde(default)]
    regress: RegressSection,
    #[serde(default)]
    ablate: AblateSection,
    #[serde(default)]
    evaluate: EvaluateSection,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Preset name or config path, for reports.
    pub env_name: String,
    pub env: EnvSpec,
    pub trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub learner: LearnerSection,
    pub proximal: ProximalConfig,
    pub methods: Vec<MethodSpec>,
    pub regress: RegressSection,
    pub ablate: AblateSection,
    pub evaluate: EvaluateSection,
}

impl ExperimentConfig {
    /// Built-in settings of `kind`.
    pub fn defaults(kind: ExperimentKind) -> Result<Self> {
        Self::from_file(kind, empty_file(), None)
    }

    /// Parses a TOML config. `kind` comes from the command line and must agree with the
    /// file's `kind` when both are given. Relative `env_file` paths resolve against `base`.
    pub fn from_toml(kind: ExperimentKind, text: &str, base: Option<&Path>) -> Result<Self> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        Self::from_file(kind, file, base)
    }

    pub fn load(kind: ExperimentKind, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(kind, &text, path.parent())
    }

    fn from_file(kind: ExperimentKind, file: ConfigFile, base: Option<&Path>) -> Result<Self> {
        if let Some(k) = file.kind {
            if k != kind {
                return Err(Error::Config(format!(
                    "config is for `{}` but `{}` was requested",
                    k.name(),
                    kind.name()
                )));
            }
        }
        let (env_name, env) = match (file.preset, file.env_file) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("give either preset or env_file, not both".into()))
            }
            (None, Some(path)) => {
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path,
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                (path.display().to_string(), EnvSpec::from_toml(&text)?)
            }
            (name, None) => {
                let name = name.unwrap_or_else(|| kind.default_preset().to_string());
                let env = preset(&name)?;
                (name, env)
            }
        };
        let base_proximal = match kind {
            ExperimentKind::Control | ExperimentKind::ComparePolicies => ProximalConfig::control(),
            _ => ProximalConfig::policy_evaluation(),
        };
        if !kind.is_control() && !file.methods.is_empty() {
            return Err(Error::Config(format!(
                "`{}` compares fixed methods; [[methods]] only applies to control experiments",
                kind.name()
            )));
        }
        let methods = if file.methods.is_empty() {
            default_methods(kind)
        } else {
            file.methods
        };
        let cfg = Self {
            kind,
            env_name,
            env,
            trials: file.trials.unwrap_or(kind.default_trials()),
            seed: file.seed.unwrap_or(0),
            out: file.out.unwrap_or_else(|| PathBuf::from("results").join(kind.name())),
            threads: file.threads.unwrap_or(0),
            learner: file.learner,
            proximal: file.proximal.apply(base_proximal)?,
            methods,
            regress: file.regress,
            ablate: file.ablate,
            evaluate: file.evaluate,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        let wants_grid = !matches!(self.kind, ExperimentKind::Regress | ExperimentKind::Ablate);
        match (&self.env, wants_grid) {
            (EnvSpec::Grid(_), false) | (EnvSpec::Gmm(_), true) => {
                return Err(Error::Config(format!(
                    "`{}` cannot run on environment {}",
                    self.kind.name(),
                    self.env_name
                )))
            }
            _ => {}
        }
        if self.kind.is_control() {
            if self.methods.is_empty() {
                return Err(Error::Config("at least one method is required".into()));
            }
            let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
            names.sort_unstable();
            if names.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config("method names must be unique".into()));
            }
            for m in &self.methods {
                if m.name.is_empty() || m.name.contains(['/', '\\']) {
                    return Err(Error::Config(format!("method name `{}` is not a file name", m.name)));
                }
                m.policy.validate()?;
            }
            let l = &self.learner;
            if l.episodes == 0 || l.particles == 0 || l.horizon == Some(0) {
                return Err(Error::Config("episodes, particles and horizon must be >= 1".into()));
            }
            if !(l.qr_step_size > 0.0) {
                return Err(Error::Config("qr_step_size must be > 0".into()));
            }
        }
        let r = &self.regress;
        if r.sample_counts.is_empty() || r.sample_counts.contains(&0) || r.reference_samples == 0 {
            return Err(Error::Config("regress sample counts must be >= 1".into()));
        }
        if r.gradient_steps == 0 || !(r.qr_step_size > 0.0) {
            return Err(Error::Config("regress needs gradient steps and a positive qr step".into()));
        }
        let a = &self.ablate;
        if a.temperatures.iter().chain(&a.step_sizes).any(|v| !(*v > 0.0))
            || a.temperatures.is_empty()
            || a.step_sizes.is_empty()
        {
            return Err(Error::Config("ablate grid values must be positive and non-empty".into()));
        }
        if a.samples == 0 || a.reference_samples == 0 || a.gradient_steps == 0 {
            return Err(Error::Config("ablate counts must be >= 1".into()));
        }
        let e = &self.evaluate;
        if e.rollouts == 0 || e.depth == 0 || e.particles == 0 || e.gradient_steps == 0 {
            return Err(Error::Config("evaluate counts must be >= 1".into()));
        }
        Ok(())
    }
}

fn empty_file() -> ConfigFile {
    toml::from_str("").expect("an empty config parses")
}

fn default_methods(kind: ExperimentKind) -> Vec<MethodSpec> {
    use LearnerKind::{Qr, Wgf};
    let cvar = |alpha| PolicyKind::Cvar {
        alpha,
        epsilon_explore: 0.0,
    };
    match kind {
        ExperimentKind::Control => vec![
            MethodSpec::new("wgf", Wgf, PolicyKind::Ssd),
            MethodSpec::new("qr", Qr, PolicyKind::Ssd),
        ],
        ExperimentKind::ComparePolicies => vec![
            MethodSpec::new("ssd", Wgf, PolicyKind::Ssd),
            MethodSpec::new("egreedy", Wgf, PolicyKind::EpsilonGreedy { epsilon: 0.1 }),
            MethodSpec::new("cvar@0.05", Wgf, cvar(0.05)),
            MethodSpec::new("cvar@0.25", Wgf, cvar(0.25)),
            MethodSpec::new("cvar@0.45", Wgf, cvar(0.45)),
        ],
        _ => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_per_kind() {
        let c = ExperimentConfig::defaults(ExperimentKind::ComparePolicies).unwrap();
        assert_eq!(c.trials, 50);
        assert_eq!(c.methods.len(), 5);
        assert_eq!(c.env_name, "cliffwalk-modified");
        assert_eq!(c.proximal, ProximalConfig::control());
        let r = ExperimentConfig::defaults(ExperimentKind::Regress).unwrap();
        assert_eq!(r.trials, 100);
        assert_eq!(r.regress.sample_counts, [5, 10, 20, 50]);
        let a = ExperimentConfig::defaults(ExperimentKind::Ablate).unwrap();
        assert_eq!(a.ablate.temperatures.len() * a.ablate.step_sizes.len(), 30);
    }

    #[test]
    fn parses_a_full_file() {
        let text = r#"
            kind = "compare-policies"
            preset = "cliffwalk-modified"
            trials = 3
            seed = 7
            out = "o"
            [learner]
            episodes = 20
            init = { kind = "constant", value = 0.0 }
            [proximal]
            max_gradient_steps = 10
            annealing = [1.0, 0.5]
            [[methods]]
            name = "a"
            policy = { kind = "cvar", alpha = 0.25 }
            [[methods]]
            name = "b"
            learner = "qr"
            policy = { kind = "egreedy", epsilon = 0.2, value_tie_tolerance = 0.01 }
        "#;
        let c = ExperimentConfig::from_toml(ExperimentKind::ComparePolicies, text, None).unwrap();
        assert_eq!((c.trials, c.seed, c.learner.episodes), (3, 7, 20));
        assert_eq!(c.proximal.max_gradient_steps, 10);
        assert_eq!(c.proximal.epsilon_schedule.final_epsilon(), 0.5);
        assert_eq!(c.methods[1].learner, LearnerKind::Qr);
        assert_eq!(c.methods[1].policy.value_tie_tolerance, 0.01);
        assert_eq!(c.methods[0].policy.value_tie_tolerance, crate::policies::DEFAULT_TIE_TOLERANCE);
    }

    #[test]
    fn rejects_bad_files() {
        let k = ExperimentKind::Control;
        for text in [
            "trials = 0",
            "kind = \"regress\"",
            "preset = \"nope\"",
            "unknown = 1",
            "preset = \"gmm-five\"",
            "[[methods]]\nname = \"x\"\npolicy = { kind = \"cvar\", alpha = 2.0 }",
            "[[methods]]\nname = \"x\"\npolicy = { kind = \"ssd\" }\n[[methods]]\nname = \"x\"\npolicy = { kind = \"ssd\" }",
        ] {
            let err = ExperimentConfig::from_toml(k, text, None).unwrap_err();
            assert!(err.is_usage(), "{text}: {err}");
        }
        let err = ExperimentConfig::from_toml(
            ExperimentKind::Regress,
            "[[methods]]\nname = \"x\"\npolicy = { kind = \"ssd\" }",
            None,
        );
        assert!(err.is_err());
    }
}
