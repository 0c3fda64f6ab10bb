//! Run configuration, presets and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{ActionKind, ActionSet, ReadConfig};
use crate::agent::{Condition, PromptConfig, RemoteConfig, ScriptPolicy};
use crate::recsys::{ProviderKind, RecConfig, RecKind};
use crate::store::{Backing, ExportFormat, UserId};
use crate::time::{ClockConfig, SimClock};
use crate::usergen::{DemographicSpec, NetworkSpec, RemoteGeneratorConfig};

pub const DILEMMA_QUESTION: &str = include_str!("../../assets/dilemma_question.txt");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    InfoSpread,
    Polarization,
    HerdReddit,
    MisinfoX,
    Custom,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::InfoSpread,
        Scenario::Polarization,
        Scenario::HerdReddit,
        Scenario::MisinfoX,
        Scenario::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::InfoSpread => "info_spread",
            Scenario::Polarization => "polarization",
            Scenario::HerdReddit => "herd_reddit",
            Scenario::MisinfoX => "misinfo_x",
            Scenario::Custom => "custom",
        }
    }

    pub fn actions(self) -> ActionSet {
        match self {
            Scenario::InfoSpread => ActionSet::information_spreading(),
            Scenario::Polarization => ActionSet::group_polarization(),
            Scenario::HerdReddit => ActionSet::herd_counterfactual(),
            Scenario::MisinfoX => {
                use ActionKind::*;
                ActionSet::new([
                    CreatePost,
                    Repost,
                    LikePost,
                    DislikePost,
                    Follow,
                    CreateComment,
                    LikeComment,
                    DislikeComment,
                    DoNothing,
                ])
                .expect("nonempty")
                .0
            }
            Scenario::Custom => ActionSet::full(),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Scenario::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    X,
    Reddit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationConfig {
    /// Per-step probability for agents without a profile.
    pub prob: f64,
    /// Probability for core users, when it differs.
    pub core_prob: Option<f64>,
    /// Hourly profiles keyed by agent id (CSV or JSONL).
    pub profiles: Option<PathBuf>,
}

impl Default for ActivationConfig {
    fn default() -> Self {
        ActivationConfig {
            prob: 0.1,
            core_prob: None,
            profiles: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Remote,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scripted" => Ok(BackendKind::Scripted),
            "remote" => Ok(BackendKind::Remote),
            other => Err(format!(
                "unknown backend {other:?} (expected scripted or remote)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub policy: ScriptPolicy,
    pub remote: RemoteConfig,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            policy: ScriptPolicy::default(),
            remote: RemoteConfig::default(),
        }
    }
}

/// Where the agents come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationConfig {
    /// Synthetic users; the first `cores` of them are core users.
    Generated {
        agents: usize,
        #[serde(default)]
        cores: usize,
        #[serde(default)]
        spec: DemographicSpec,
        #[serde(default)]
        network: NetworkSpec,
        /// Core profiles (JSONL) to use instead of generated cores.
        #[serde(default)]
        core_profiles: Option<PathBuf>,
        /// Remote profile writer; templates are used when absent.
        #[serde(default)]
        generator: Option<RemoteGeneratorConfig>,
    },
    /// Profiles file (JSONL) with `is_core` flags; follows are generated.
    Profiles {
        file: PathBuf,
        #[serde(default)]
        network: NetworkSpec,
    },
    /// Store tables exported earlier. Users with `agent_id >= 0` are agents.
    Import { dir: PathBuf, format: ExportFormat },
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig::Generated {
            agents: 100,
            cores: 0,
            spec: DemographicSpec::default(),
            network: NetworkSpec::default(),
            core_profiles: None,
            generator: None,
        }
    }
}

/// Items released by a drip injection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ItemSource {
    /// One item per non-empty line.
    File(PathBuf),
    /// `n` synthetic counterfactual statements.
    Generate(usize),
    Inline(Vec<String>),
}

/// Scheduled events. `user = None` means the controlled (non-agent) user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Injection {
    Post {
        #[serde(default)]
        step: u64,
        #[serde(default)]
        user: Option<UserId>,
        content: String,
    },
    /// Posts `per_step` items a step from `start_step` until exhausted.
    Drip {
        #[serde(default)]
        start_step: u64,
        #[serde(default)]
        user: Option<UserId>,
        per_step: usize,
        items: ItemSource,
        /// Split items into treatment groups and seed one vote on treated ones.
        #[serde(default)]
        treatment: bool,
    },
    Survey {
        every: u64,
        #[serde(default)]
        question: Option<String>,
        #[serde(default)]
        question_file: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSection {
    pub backing: Backing,
    pub path: Option<PathBuf>,
}

impl Default for StoreSection {
    fn default() -> Self {
        StoreSection {
            backing: Backing::Memory,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Posts whose cascades are measured; empty means every injected post.
    pub roots: Vec<u64>,
    pub tfidf_references: Vec<String>,
    pub tfidf_threshold: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            roots: Vec::new(),
            tfidf_references: Vec::new(),
            tfidf_threshold: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub dir: Option<PathBuf>,
    pub format: ExportFormat,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            dir: None,
            format: ExportFormat::Csv,
        }
    }
}

/// Settings that may change how fast a run goes but never what it produces.
/// They are left out of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    /// Concurrent agent decisions, and tokio worker threads.
    pub parallelism: usize,
    /// Probe remote workers during validation.
    pub check_workers: bool,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            parallelism: std::thread::available_parallelism().map_or(4, |n| n.get()),
            check_workers: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub steps: u64,
    pub platform: Platform,
    /// Action names; empty means the scenario's preset subset.
    pub actions: Vec<String>,
    /// Let agents see posts made earlier in the same step. Agents then
    /// decide one at a time.
    pub same_step_visibility: bool,
    pub clock: ClockConfig,
    pub rec: RecConfig,
    pub reads: ReadConfig,
    pub prompt: PromptConfig,
    pub activation: ActivationConfig,
    pub backend: BackendConfig,
    pub population: PopulationConfig,
    pub store: StoreSection,
    pub injections: Vec<Injection>,
    pub analysis: AnalysisConfig,
    pub export: ExportConfig,
    #[serde(skip_serializing)]
    pub runtime: RuntimeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: Scenario::Custom,
            seed: 0,
            steps: 10,
            platform: Platform::X,
            actions: Vec::new(),
            same_step_visibility: false,
            clock: ClockConfig::default(),
            rec: RecConfig::default(),
            reads: ReadConfig::default(),
            prompt: PromptConfig::default(),
            activation: ActivationConfig::default(),
            backend: BackendConfig::default(),
            population: PopulationConfig::default(),
            store: StoreSection::default(),
            injections: Vec::new(),
            analysis: AnalysisConfig::default(),
            export: ExportConfig::default(),
            runtime: RuntimeConfig::default(),
        }
    }
}

const MISINFO_PAIRS: [&str; 8] = [
    "Health officials confirm the new flu vaccine is available at local pharmacies from next week.",
    "Leaked memo: the new flu vaccine contains tracking chips, officials are hiding the truth.",
    "A major phone maker announced a battery recycling program for old devices.",
    "Phones will be remotely disabled next month unless owners install a secret update.",
    "The film festival announced its lineup, opening with a restored classic.",
    "The film festival was cancelled after organizers fled with ticket money.",
    "The university expanded its scholarship program for first-generation students.",
    "The university will expel students who criticize tuition increases online.",
];

impl RunConfig {
    /// Defaults for a scenario, sized for a desk run.
    pub fn preset(scenario: Scenario) -> RunConfig {
        let base = RunConfig {
            scenario,
            ..RunConfig::default()
        };
        match scenario {
            Scenario::InfoSpread => RunConfig {
                steps: 50,
                activation: ActivationConfig {
                    prob: 0.2,
                    ..ActivationConfig::default()
                },
                population: PopulationConfig::Generated {
                    agents: 300,
                    cores: 10,
                    spec: DemographicSpec::x(),
                    network: NetworkSpec::default(),
                    core_profiles: None,
                    generator: None,
                },
                backend: BackendConfig {
                    policy: ScriptPolicy::default()
                        .rule(Condition::Always, ActionKind::Repost, 0.1)
                        .rule(Condition::Always, ActionKind::LikePost, 0.2)
                        .rule(Condition::Always, ActionKind::Follow, 0.05),
                    ..BackendConfig::default()
                },
                injections: vec![Injection::Post {
                    step: 0,
                    user: Some(1),
                    content: "Breaking: city council approves free public transit for students starting this fall."
                        .into(),
                }],
                ..base
            },
            Scenario::Polarization => RunConfig {
                steps: 80,
                activation: ActivationConfig {
                    prob: 0.1,
                    ..ActivationConfig::default()
                },
                population: PopulationConfig::Generated {
                    agents: 396,
                    cores: 196,
                    spec: DemographicSpec::x(),
                    network: NetworkSpec::default(),
                    core_profiles: None,
                    generator: None,
                },
                backend: BackendConfig {
                    policy: ScriptPolicy {
                        survey_answer: "She should take the chance and open the second shop.".into(),
                        text: "I think she should go for it.".into(),
                        ..ScriptPolicy::default()
                    }
                    .rule(Condition::Always, ActionKind::CreateComment, 0.1)
                    .rule(Condition::Always, ActionKind::LikePost, 0.2)
                    .rule(Condition::Always, ActionKind::Repost, 0.05),
                    ..BackendConfig::default()
                },
                injections: vec![
                    Injection::Post {
                        step: 0,
                        user: Some(1),
                        content: DILEMMA_QUESTION.trim().into(),
                    },
                    Injection::Survey {
                        every: 10,
                        question: Some(DILEMMA_QUESTION.trim().into()),
                        question_file: None,
                    },
                ],
                ..base
            },
            Scenario::HerdReddit => RunConfig::herd_reddit(100),
            Scenario::MisinfoX => RunConfig {
                steps: 60,
                activation: ActivationConfig {
                    prob: 0.01,
                    core_prob: Some(0.1),
                    profiles: None,
                },
                population: PopulationConfig::Generated {
                    agents: 1000,
                    cores: 20,
                    spec: DemographicSpec::x(),
                    network: NetworkSpec::default(),
                    core_profiles: None,
                    generator: None,
                },
                backend: BackendConfig {
                    policy: ScriptPolicy::default()
                        .rule(Condition::Always, ActionKind::Repost, 0.2)
                        .rule(Condition::Always, ActionKind::LikePost, 0.2),
                    ..BackendConfig::default()
                },
                injections: MISINFO_PAIRS
                    .iter()
                    .map(|c| Injection::Post {
                        step: 0,
                        user: Some(1),
                        content: c.to_string(),
                    })
                    .collect(),
                analysis: AnalysisConfig {
                    tfidf_references: MISINFO_PAIRS.iter().map(|s| s.to_string()).collect(),
                    ..AnalysisConfig::default()
                },
                ..base
            },
            Scenario::Custom => base,
        }
    }

    /// The herd preset sized for `agents`: cache of half the population,
    /// 0.3 drip posts per agent a step and about 2.19 items per agent.
    pub fn herd_reddit(agents: usize) -> RunConfig {
        RunConfig {
            steps: 30,
            platform: Platform::Reddit,
            rec: RecConfig {
                kind: RecKind::Reddit,
                cache_size: (agents / 2).max(5),
                feed_sample_size: 5,
                ..RecConfig::default()
            },
            activation: ActivationConfig {
                prob: 0.1,
                ..ActivationConfig::default()
            },
            population: PopulationConfig::Generated {
                agents,
                cores: 0,
                spec: DemographicSpec::reddit(),
                network: NetworkSpec { p_follow_core: 0.0 },
                core_profiles: None,
                generator: None,
            },
            backend: BackendConfig {
                policy: ScriptPolicy::default()
                    .rule(Condition::ScorePositive, ActionKind::LikePost, 0.5)
                    .rule(Condition::ScoreNegative, ActionKind::DislikePost, 0.5)
                    .rule(Condition::Always, ActionKind::CreateComment, 0.1),
                ..BackendConfig::default()
            },
            injections: vec![Injection::Drip {
                start_step: 0,
                user: None,
                per_step: (agents * 3 / 10).max(1),
                items: ItemSource::Generate(agents * 21919 / 10000),
                treatment: true,
            }],
            scenario: Scenario::HerdReddit,
            ..RunConfig::default()
        }
    }

    /// Parses TOML. Keys left out fall back to the named scenario's preset.
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        let user: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let scenario = match user.get("scenario") {
            Some(toml::Value::String(s)) => s.parse::<Scenario>().map_err(ConfigError::Parse)?,
            Some(_) => return Err(ConfigError::Parse("scenario must be a string".into())),
            None => Scenario::Custom,
        };
        let herd_agents = user
            .get("population")
            .and_then(|p| p.get("agents"))
            .and_then(toml::Value::as_integer);
        let preset = match (scenario, herd_agents) {
            (Scenario::HerdReddit, Some(n)) if n > 0 => RunConfig::herd_reddit(n as usize),
            _ => RunConfig::preset(scenario),
        };
        let runtime = preset.runtime.clone();
        let mut merged =
            toml::Table::try_from(&preset).map_err(|e| ConfigError::Parse(e.to_string()))?;
        // Tagged enums and lists replace the preset wholesale.
        for key in ["population", "injections", "actions"] {
            if user.contains_key(key) {
                merged.remove(key);
            }
        }
        merge(&mut merged, user);
        let mut config: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if !text.contains("[runtime]") {
            config.runtime = runtime;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut config = RunConfig::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.activation.profiles.as_mut() {
            fix(p);
        }
        match &mut self.population {
            PopulationConfig::Generated { core_profiles, .. } => {
                if let Some(p) = core_profiles.as_mut() {
                    fix(p);
                }
            }
            PopulationConfig::Profiles { file, .. } => fix(file),
            PopulationConfig::Import { dir, .. } => fix(dir),
        }
        for inj in &mut self.injections {
            match inj {
                Injection::Drip {
                    items: ItemSource::File(p),
                    ..
                } => fix(p),
                Injection::Survey {
                    question_file: Some(p),
                    ..
                } => fix(p),
                _ => {}
            }
        }
        if let Some(p) = self.store.path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.export.dir.as_mut() {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// A config that passed validation, plus what was fixed on the way.
#[derive(Debug, Clone)]
pub struct ValidConfig {
    pub config: RunConfig,
    pub actions: ActionSet,
    pub warnings: Vec<String>,
}

fn check_file(path: &Path, what: &str, errors: &mut Vec<String>) {
    if !path.exists() {
        errors.push(format!("{what} not found: {}", path.display()));
    }
}

/// Checks everything that can be checked before running. All problems are
/// reported together.
pub fn validate_config(config: &RunConfig) -> Result<ValidConfig, ConfigError> {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();

    if config.steps == 0 {
        errors.push("steps must be at least 1".into());
    }
    if let Err(e) = SimClock::new(config.clock.clone()) {
        errors.push(format!("clock: {e}"));
    }
    if let Err(e) = config.rec.validate() {
        errors.push(e.to_string());
    }
    if config.rec.embedding.provider == ProviderKind::Remote
        && config.rec.embedding.endpoint.is_none()
    {
        errors.push("rec.embedding: remote provider needs an endpoint".into());
    }
    match (config.platform, config.rec.kind) {
        (Platform::Reddit, RecKind::X) | (Platform::X, RecKind::Reddit) => warnings.push(format!(
            "platform {:?} runs with the {:?} recommender",
            config.platform, config.rec.kind
        )),
        _ => {}
    }

    let mut kinds = Vec::new();
    for name in &config.actions {
        match ActionKind::from_name(name) {
            Some(k) => kinds.push(k),
            None => errors.push(format!("unknown action {name:?}")),
        }
    }
    let actions = if config.actions.is_empty() || kinds.len() < config.actions.len() {
        config.scenario.actions()
    } else {
        match ActionSet::new(kinds) {
            Ok((set, added)) => {
                if added {
                    warnings.push("action subset had no do_nothing; added it".into());
                }
                if config.scenario != Scenario::Custom && set != config.scenario.actions() {
                    errors.push(format!(
                        "action subset differs from the {} preset; use scenario = \"custom\" to change it",
                        config.scenario.name()
                    ));
                }
                set
            }
            Err(e) => {
                errors.push(e.to_string());
                config.scenario.actions()
            }
        }
    };

    let a = &config.activation;
    for (what, p) in [
        ("activation.prob", Some(a.prob)),
        ("activation.core_prob", a.core_prob),
    ] {
        if let Some(p) = p {
            if !(0.0..=1.0).contains(&p) {
                errors.push(format!("{what} = {p} is outside [0, 1]"));
            }
        }
    }
    if let Some(p) = &a.profiles {
        check_file(p, "activation profiles file", &mut errors);
    }

    match &config.population {
        PopulationConfig::Generated {
            agents,
            cores,
            spec,
            network,
            core_profiles,
            ..
        } => {
            if *agents == 0 {
                errors.push("population.agents must be at least 1".into());
            }
            if cores > agents {
                errors.push(format!(
                    "population.cores ({cores}) exceeds population.agents ({agents})"
                ));
            }
            if let Err(e) = spec.validate() {
                errors.push(format!("population.spec: {e}"));
            }
            if !(0.0..=1.0).contains(&network.p_follow_core) {
                errors.push(format!(
                    "p_follow_core = {} is outside [0, 1]",
                    network.p_follow_core
                ));
            }
            if let Some(p) = core_profiles {
                check_file(p, "core profiles file", &mut errors);
            }
        }
        PopulationConfig::Profiles { file, network } => {
            check_file(file, "population file", &mut errors);
            if !(0.0..=1.0).contains(&network.p_follow_core) {
                errors.push(format!(
                    "p_follow_core = {} is outside [0, 1]",
                    network.p_follow_core
                ));
            }
        }
        PopulationConfig::Import { dir, .. } => {
            check_file(dir, "population directory", &mut errors)
        }
    }

    for (i, inj) in config.injections.iter().enumerate() {
        match inj {
            Injection::Drip {
                per_step, items, ..
            } => {
                if *per_step == 0 {
                    errors.push(format!("injections[{i}]: per_step must be at least 1"));
                }
                if let ItemSource::File(p) = items {
                    check_file(p, "drip items file", &mut errors);
                }
            }
            Injection::Survey {
                every,
                question,
                question_file,
            } => {
                if *every == 0 {
                    errors.push(format!("injections[{i}]: survey every must be at least 1"));
                }
                match (question, question_file) {
                    (None, None) => errors.push(format!(
                        "injections[{i}]: survey needs question or question_file"
                    )),
                    (_, Some(p)) => check_file(p, "survey question file", &mut errors),
                    _ => {}
                }
            }
            Injection::Post { .. } => {}
        }
    }

    if config.backend.kind == BackendKind::Remote && config.backend.remote.endpoints.is_empty() {
        errors.push("backend.remote.endpoints is empty".into());
    }
    if config.store.backing == Backing::File && config.store.path.is_none() {
        errors.push("store.backing = \"file\" needs store.path".into());
    }
    if !(config.analysis.tfidf_threshold > 0.0 && config.analysis.tfidf_threshold < 1.0) {
        errors.push(format!(
            "analysis.tfidf_threshold = {} is outside (0, 1)",
            config.analysis.tfidf_threshold
        ));
    }
    if config.runtime.parallelism == 0 {
        errors.push("runtime.parallelism must be at least 1".into());
    }

    if errors.is_empty() {
        Ok(ValidConfig {
            config: config.clone(),
            actions,
            warnings,
        })
    } else {
        Err(ConfigError::Invalid(errors))
    }
}
