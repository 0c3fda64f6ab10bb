//! Step loop, injections and run outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::runtime::Runtime;
use tokio::sync::Semaphore;

use super::config::{
    validate_config, BackendKind, ConfigError, Injection, ItemSource, PopulationConfig, RunConfig,
    ValidConfig,
};
use crate::actions::{ActionError, ActionSet, ExecContext};
use crate::agent::{
    apply_decision, assemble_prompt, build_feed, decide, draw_feed, survey, write_survey_jsonl,
    AgentState, BackendError, DecisionBackend, FeedPost, Prompt, RemoteBackend, ScriptedBackend,
    SurveyAnswer,
};
use crate::analytics::{
    build_propagation_tree, group_post_scores, metric_series, seed_treatments,
    tfidf_relevance_counts, write_series_csv, AnalyticsError, Group, ItemKind, TreatmentAssignment,
};
use crate::channel::{Channel, HttpWorker, PoolConfig, Worker};
use crate::recsys::{Recommender, RecsysError};
use crate::rng::{content_hash, stream, Purpose};
use crate::store::{NewUser, PostId, Store, StoreConfig, StoreError, UserId};
use crate::time::{activation_draw, load_activity_profiles, ActivityProfile, SimClock, TimeError};
use crate::usergen::{
    build_network, generate_profiles, load_profiles_jsonl, population_store, sample_population,
    GeneratedProfile, ProfileGenerator, UsergenError,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Usergen(#[from] UsergenError),
    #[error(transparent)]
    Recsys(#[from] RecsysError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("population: {0}")]
    Population(String),
    #[error("runtime: {0}")]
    Runtime(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One post shown to one active agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exposure {
    pub step: u64,
    pub agent_id: u64,
    pub user_id: UserId,
    pub post_id: PostId,
    /// Net score when the feed was drawn.
    pub score: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub active: usize,
    /// Agent ids activated this step, ascending.
    #[serde(skip)]
    pub active_ids: Vec<u64>,
    pub fallbacks: usize,
    pub calls_ok: usize,
    pub calls_rejected: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub steps: u64,
    pub agents: usize,
    pub activations: usize,
    pub fallbacks: usize,
    pub calls_ok: usize,
    pub calls_rejected: usize,
    pub users: usize,
    pub posts: usize,
    pub comments: usize,
    pub trace_rows: usize,
    pub surveys: usize,
    pub injected_posts: Vec<PostId>,
}

struct Drip {
    start: u64,
    user: UserId,
    per_step: usize,
    items: Vec<String>,
    next: usize,
    /// Group by item index.
    groups: Option<TreatmentAssignment>,
}

struct SurveySchedule {
    every: u64,
    question: String,
}

/// Statements for counterfactual drips. Item `i` is the same for every run.
pub fn counterfactual_items(n: usize) -> Vec<String> {
    const SUBJECTS: [&str; 15] = [
        "the printing press",
        "electricity",
        "the internet",
        "antibiotics",
        "railways",
        "the telephone",
        "vaccines",
        "satellites",
        "the steam engine",
        "paper money",
        "the bicycle",
        "refrigeration",
        "photography",
        "radio",
        "aviation",
    ];
    const TWISTS: [&str; 7] = [
        "had never been invented",
        "had arrived a century earlier",
        "had stayed a luxury for the rich",
        "had been banned everywhere",
        "had been invented on another continent",
        "had been owned by a single company",
        "had failed commercially at first",
    ];
    const FRAMES: [&str; 3] = [
        "How would daily life differ if {s} {t}?",
        "Would we be better off if {s} {t}?",
        "What would cities look like today if {s} {t}?",
    ];
    let per_round = SUBJECTS.len() * TWISTS.len() * FRAMES.len();
    (0..n)
        .map(|i| {
            let j = i % per_round;
            let text = FRAMES[j % 3]
                .replace("{s}", SUBJECTS[(j / 3) % SUBJECTS.len()])
                .replace("{t}", TWISTS[j / (3 * SUBJECTS.len())]);
            match i / per_round {
                0 => text,
                r => format!("{text} (take {})", r + 1),
            }
        })
        .collect()
}

/// A running simulation. Build with [`Simulation::new`], then [`Simulation::run`].
pub struct Simulation {
    config: RunConfig,
    actions: ActionSet,
    store: Store,
    clock: SimClock,
    agents: Vec<AgentState>,
    backends: Vec<Arc<dyn DecisionBackend>>,
    channel: Option<Channel>,
    recommender: Recommender,
    rt: Runtime,
    drips: Vec<Drip>,
    surveys: Vec<SurveySchedule>,
    exposures: Vec<Exposure>,
    survey_log: Vec<(u64, Vec<SurveyAnswer>)>,
    treatments: TreatmentAssignment,
    post_step: BTreeMap<PostId, u64>,
    injected: Vec<PostId>,
    totals: StepReport,
    steps_run: u64,
}

impl Simulation {
    pub fn from_config(config: &RunConfig) -> Result<Simulation, RunError> {
        let valid = validate_config(config)?;
        for w in &valid.warnings {
            log::warn!("{w}");
        }
        Simulation::new(valid)
    }

    pub fn new(valid: ValidConfig) -> Result<Simulation, RunError> {
        let ValidConfig {
            config, actions, ..
        } = valid;
        let seed = config.seed;
        let clock = SimClock::new(config.clock.clone())?;
        let t0 = clock.wall_time();
        let store_cfg = StoreConfig {
            backing: config.store.backing,
            path: config.store.path.clone(),
            seed,
        };

        let (mut store, personas, cores) = build_population(&config, store_cfg, t0)?;

        let mut file_profiles = BTreeMap::new();
        if let Some(p) = &config.activation.profiles {
            file_profiles.extend(load_activity_profiles(p)?);
        }
        let mut agents = Vec::new();
        let agent_users: Vec<(i64, UserId)> = store
            .users()
            .iter()
            .filter(|u| u.agent_id >= 0)
            .map(|u| (u.agent_id, u.user_id))
            .collect();
        for (agent_id, user_id) in agent_users {
            let agent_id = agent_id as u64;
            let is_core = cores.contains(&agent_id);
            let profile = match file_profiles.get(&agent_id) {
                Some(p) => p.clone(),
                None => {
                    let p = match config.activation.core_prob {
                        Some(cp) if is_core => cp,
                        _ => config.activation.prob,
                    };
                    ActivityProfile::constant(p)?
                }
            };
            let persona = personas.get(&agent_id).cloned().unwrap_or_else(|| {
                store
                    .user(user_id)
                    .map(|u| u.bio.clone())
                    .unwrap_or_default()
            });
            agents.push(AgentState::new(agent_id, user_id, persona, profile));
        }
        agents.sort_by_key(|a| a.agent_id);
        if agents.is_empty() {
            return Err(RunError::Population("no agents".into()));
        }

        // The controlled user exists only when something posts on its behalf.
        let needs_controller = config.injections.iter().any(|i| {
            matches!(
                i,
                Injection::Post { user: None, .. } | Injection::Drip { user: None, .. }
            )
        });
        let controller = if needs_controller {
            match store.users().iter().find(|u| u.agent_id < 0) {
                Some(u) => Some(u.user_id),
                None => Some(store.register_user(
                    NewUser::new("controller", "Controller", ""),
                    -1,
                    t0,
                )?),
            }
        } else {
            None
        };
        let user_or_controller =
            |u: Option<UserId>| u.or(controller).expect("controller registered");

        let mut drips = Vec::new();
        let mut surveys = Vec::new();
        for inj in &config.injections {
            match inj {
                Injection::Drip {
                    start_step,
                    user,
                    per_step,
                    items,
                    treatment,
                } => {
                    let items = match items {
                        ItemSource::File(p) => std::fs::read_to_string(p)
                            .map_err(io_err(p))?
                            .lines()
                            .map(str::trim)
                            .filter(|l| !l.is_empty())
                            .map(str::to_string)
                            .collect(),
                        ItemSource::Generate(n) => counterfactual_items(*n),
                        ItemSource::Inline(v) => v.clone(),
                    };
                    let groups = treatment.then(|| {
                        let idx: Vec<u64> = (0..items.len() as u64).collect();
                        crate::analytics::assign_treatments(&idx, seed)
                    });
                    drips.push(Drip {
                        start: *start_step,
                        user: user_or_controller(*user),
                        per_step: *per_step,
                        items,
                        next: 0,
                        groups,
                    });
                }
                Injection::Survey {
                    every,
                    question,
                    question_file,
                } => {
                    let question = match (question_file, question) {
                        (Some(p), _) => std::fs::read_to_string(p)
                            .map_err(io_err(p))?
                            .trim()
                            .to_string(),
                        (None, Some(q)) => q.clone(),
                        (None, None) => unreachable!("validated"),
                    };
                    surveys.push(SurveySchedule {
                        every: *every,
                        question,
                    });
                }
                Injection::Post { .. } => {}
            }
        }

        let parallelism = config.runtime.parallelism.max(1);
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(parallelism)
            .enable_all()
            .build()
            .map_err(|e| RunError::Runtime(e.to_string()))?;

        let (backends, channel): (Vec<Arc<dyn DecisionBackend>>, _) = match config.backend.kind {
            BackendKind::Scripted => (
                vec![Arc::new(ScriptedBackend::new(
                    config.backend.policy.clone(),
                    seed,
                ))],
                None,
            ),
            BackendKind::Remote => {
                let rc = &config.backend.remote;
                let mut workers: Vec<Arc<dyn Worker>> = Vec::new();
                for e in &rc.endpoints {
                    let w = HttpWorker::new(e.clone(), Duration::from_secs_f64(rc.timeout_secs))
                        .map_err(|err| RunError::Runtime(format!("worker {e}: {err}")))?;
                    workers.push(Arc::new(w));
                }
                let pool = PoolConfig {
                    max_concurrency: rc.max_concurrency,
                    max_retries: rc.max_retries,
                    ..PoolConfig::default()
                };
                let channel = {
                    let _guard = rt.enter();
                    Channel::start(workers, pool, None)
                };
                if config.runtime.check_workers {
                    let health = rt.block_on(channel.probe_workers());
                    let dead: Vec<&String> = rc
                        .endpoints
                        .iter()
                        .zip(&health)
                        .filter(|(_, ok)| !**ok)
                        .map(|(e, _)| e)
                        .collect();
                    if !dead.is_empty() {
                        return Err(RunError::Runtime(format!("unreachable workers: {dead:?}")));
                    }
                }
                let backend = RemoteBackend::new(channel.clone(), rc.clone());
                (vec![Arc::new(backend)], Some(channel))
            }
        };

        let recommender = Recommender::new(config.rec.clone())?;
        let known_posts = store.posts().iter().map(|p| (p.post_id, 0)).collect();
        Ok(Simulation {
            actions,
            store,
            clock,
            agents,
            backends,
            channel,
            recommender,
            rt,
            drips,
            surveys,
            exposures: Vec::new(),
            survey_log: Vec::new(),
            treatments: TreatmentAssignment(BTreeMap::new()),
            post_step: known_posts,
            injected: Vec::new(),
            totals: StepReport::default(),
            steps_run: 0,
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn exposures(&self) -> &[Exposure] {
        &self.exposures
    }

    pub fn surveys(&self) -> &[(u64, Vec<SurveyAnswer>)] {
        &self.survey_log
    }

    /// Treatment groups of drip posts, keyed by post id.
    pub fn treatments(&self) -> &TreatmentAssignment {
        &self.treatments
    }

    /// Posts made by injections, in posting order.
    pub fn injected_posts(&self) -> &[PostId] {
        &self.injected
    }

    /// Step in which each post was created.
    pub fn post_steps(&self) -> &BTreeMap<PostId, u64> {
        &self.post_step
    }

    fn inject(&mut self, step: u64) -> Result<(), RunError> {
        let controller = self
            .store
            .users()
            .iter()
            .find(|u| u.agent_id < 0)
            .map(|u| u.user_id);
        for inj in &self.config.injections {
            if let Injection::Post {
                step: s,
                user,
                content,
            } = inj
            {
                if *s == step {
                    let user = user.or(controller).expect("controller registered");
                    let id = self
                        .store
                        .insert_post(user, content, self.clock.stamp().time)?;
                    self.injected.push(id);
                }
            }
        }
        for d in &mut self.drips {
            if step < d.start || d.next >= d.items.len() {
                continue;
            }
            let end = (d.next + d.per_step).min(d.items.len());
            for i in d.next..end {
                let now = self.clock.stamp().time;
                let id = self.store.insert_post(d.user, &d.items[i], now)?;
                if let Some(g) = d.groups.as_ref().and_then(|g| g.0.get(&(i as u64))) {
                    let one = TreatmentAssignment(BTreeMap::from([(id, *g)]));
                    seed_treatments(&mut self.store, &one, ItemKind::Post, d.user, now)?;
                    self.treatments.0.insert(id, *g);
                }
            }
            d.next = end;
        }
        Ok(())
    }

    fn run_surveys(&mut self, step: u64, closing: bool) {
        for s in &self.surveys {
            if !closing && !step.is_multiple_of(s.every) {
                continue;
            }
            let answers = self.rt.block_on(survey(
                &self.agents,
                &self.backends,
                &s.question,
                step,
                &self.config.prompt,
            ));
            let failed = answers.iter().filter(|a| a.failed).count();
            log::info!(
                "survey at step {step}: {} answers, {failed} failed",
                answers.len()
            );
            self.survey_log.push((step, answers));
        }
    }

    /// Runs the decisions for `prompts` concurrently; envelopes come back in input order.
    fn decide_all(&self, prompts: Vec<(usize, Prompt)>) -> Vec<crate::actions::ActionEnvelope> {
        let sem = Arc::new(Semaphore::new(self.config.runtime.parallelism.max(1)));
        let handles: Vec<_> = prompts
            .into_iter()
            .map(|(i, prompt)| {
                let backend =
                    self.backends[self.agents[i].backend.min(self.backends.len() - 1)].clone();
                let sem = sem.clone();
                self.rt.spawn(async move {
                    let _permit = sem.acquire_owned().await.expect("semaphore open");
                    decide(backend.as_ref(), &prompt).await
                })
            })
            .collect();
        self.rt.block_on(async {
            let mut out = Vec::with_capacity(handles.len());
            for h in handles {
                out.push(match h.await {
                    Ok(env) => env,
                    Err(e) => crate::actions::ActionEnvelope::fallback(
                        crate::actions::Fallback::BackendError(format!(
                            "decision task failed: {e}"
                        )),
                    ),
                });
            }
            out
        })
    }

    fn prepare(&mut self, i: usize, step: u64) -> Result<(Vec<FeedPost>, Prompt), RunError> {
        let agent = &self.agents[i];
        let ids = draw_feed(
            &self.store,
            agent,
            self.config.seed,
            step,
            self.config.rec.feed_sample_size,
        );
        let feed = build_feed(&self.store, &ids, self.config.prompt.comments_per_post);
        for f in &feed {
            self.exposures.push(Exposure {
                step,
                agent_id: agent.agent_id,
                user_id: agent.user_id,
                post_id: f.post.post_id,
                score: f.post.score(),
            });
        }
        let prompt = assemble_prompt(agent, &feed, &self.actions, &self.config.prompt)?;
        Ok((feed, prompt))
    }

    fn execute(
        &mut self,
        i: usize,
        feed: &[FeedPost],
        envelope: &crate::actions::ActionEnvelope,
        report: &mut StepReport,
    ) {
        let ctx = ExecContext {
            clock: &self.clock,
            allowed: &self.actions,
            seed: self.config.seed,
            reads: self.config.reads,
        };
        let results = apply_decision(
            &mut self.agents[i],
            &mut self.store,
            feed,
            envelope,
            &ctx,
            &self.config.prompt,
        );
        report.fallbacks += usize::from(envelope.fallback.is_some());
        report.calls_ok += results.iter().filter(|r| r.ok).count();
        report.calls_rejected += results.iter().filter(|r| !r.ok).count();
    }

    /// Runs one step: injections, surveys, rec refresh, activation, decisions
    /// and execution in agent order.
    pub fn step(&mut self) -> Result<StepReport, RunError> {
        let step = self.clock.step();
        let seed = self.config.seed;
        self.inject(step)?;
        self.run_surveys(step, false);
        self.recommender
            .refresh_rec_cache(&mut self.store, self.clock.wall_time())?;

        let hour = self.clock.hour_of();
        let mut active = Vec::new();
        for (i, a) in self.agents.iter().enumerate() {
            let mut rng = stream(seed, a.agent_id, step, Purpose::Activation);
            if activation_draw(&a.activity, hour, &mut rng)? {
                active.push(i);
            }
        }

        let mut report = StepReport {
            step,
            active: active.len(),
            active_ids: active.iter().map(|&i| self.agents[i].agent_id).collect(),
            ..StepReport::default()
        };
        if self.config.same_step_visibility {
            for &i in &active {
                let (feed, prompt) = self.prepare(i, step)?;
                let env = self
                    .decide_all(vec![(i, prompt)])
                    .pop()
                    .expect("one envelope");
                self.execute(i, &feed, &env, &mut report);
            }
        } else {
            let mut feeds = Vec::with_capacity(active.len());
            let mut prompts = Vec::with_capacity(active.len());
            for &i in &active {
                let (feed, prompt) = self.prepare(i, step)?;
                feeds.push(feed);
                prompts.push((i, prompt));
            }
            let envelopes = self.decide_all(prompts);
            for ((&i, feed), env) in active.iter().zip(&feeds).zip(&envelopes) {
                self.execute(i, feed, env, &mut report);
            }
        }

        // Post ids are dense, so the new ones are the tail.
        for p in &self.store.posts()[self.post_step.len()..] {
            self.post_step.insert(p.post_id, step);
        }
        self.totals.active += report.active;
        self.totals.fallbacks += report.fallbacks;
        self.totals.calls_ok += report.calls_ok;
        self.totals.calls_rejected += report.calls_rejected;
        self.clock.advance_step();
        self.steps_run += 1;
        log::info!(
            "step {step}: {} active, {} ok, {} rejected, {} fallbacks, {} posts",
            report.active,
            report.calls_ok,
            report.calls_rejected,
            report.fallbacks,
            self.store.posts().len()
        );
        Ok(report)
    }

    /// Runs the remaining steps and the closing survey.
    pub fn run(&mut self) -> Result<RunReport, RunError> {
        while self.steps_run < self.config.steps {
            self.step()?;
        }
        let end = self.clock.step();
        if !self.survey_log.iter().any(|(s, _)| *s == end) {
            self.run_surveys(end, true);
        }
        self.store.flush()?;
        if let Some(c) = &self.channel {
            c.shutdown();
        }
        Ok(self.report())
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            scenario: self.config.scenario.name().into(),
            seed: self.config.seed,
            steps: self.steps_run,
            agents: self.agents.len(),
            activations: self.totals.active,
            fallbacks: self.totals.fallbacks,
            calls_ok: self.totals.calls_ok,
            calls_rejected: self.totals.calls_rejected,
            users: self.store.users().len(),
            posts: self.store.posts().len(),
            comments: self.store.comments().len(),
            trace_rows: self.store.trace().len(),
            surveys: self.survey_log.len(),
            injected_posts: self.injected.clone(),
        }
    }

    /// Posts whose cascades are measured.
    pub fn analysis_roots(&self) -> Vec<PostId> {
        if self.config.analysis.roots.is_empty() {
            self.injected.clone()
        } else {
            self.config.analysis.roots.clone()
        }
    }

    /// Writes every output under `dir` and returns the paths, relative to `dir`.
    pub fn export(&self, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tables = dir.join("tables");
        std::fs::create_dir_all(&tables).map_err(io_err(&tables))?;
        self.store
            .export_tables(self.config.export.format, &tables)?;

        let mut wtr = csv::Writer::from_path(dir.join("exposures.csv"))
            .map_err(|e| RunError::Runtime(e.to_string()))?;
        for e in &self.exposures {
            wtr.serialize(e)
                .map_err(|e| RunError::Runtime(e.to_string()))?;
        }
        wtr.flush().map_err(io_err(dir))?;

        if !self.survey_log.is_empty() {
            let sdir = dir.join("surveys");
            std::fs::create_dir_all(&sdir).map_err(io_err(&sdir))?;
            for (step, answers) in &self.survey_log {
                let p = sdir.join(format!("survey_step_{step:04}.jsonl"));
                write_survey_jsonl(&p, answers).map_err(io_err(&p))?;
            }
        }

        let roots = self.analysis_roots();
        if !roots.is_empty() {
            let mdir = dir.join("metrics");
            std::fs::create_dir_all(&mdir).map_err(io_err(&mdir))?;
            let horizon =
                (self.steps_run as f64 * self.config.clock.minutes_per_step).ceil() as usize;
            for root in roots {
                let tree = build_propagation_tree(&self.store, root)?;
                let m = metric_series(&tree, horizon);
                write_series_csv(&mdir.join(format!("post_{root}_scale.csv")), &m.scale)?;
                write_series_csv(&mdir.join(format!("post_{root}_depth.csv")), &m.depth)?;
                write_series_csv(
                    &mdir.join(format!("post_{root}_max_breadth.csv")),
                    &m.max_breadth,
                )?;
            }
        }

        if !self.treatments.0.is_empty() {
            let mut w = String::from("post_id,group\n");
            for (id, g) in &self.treatments.0 {
                w.push_str(&format!("{id},{}\n", group_name(*g)));
            }
            let p = dir.join("treatments.csv");
            std::fs::write(&p, w).map_err(io_err(&p))?;
            let mut w = String::from("group,n,mean,half_width\n");
            for (g, ci) in group_post_scores(&self.store, &self.treatments) {
                if let Some(ci) = ci {
                    w.push_str(&format!(
                        "{},{},{},{}\n",
                        group_name(g),
                        ci.n,
                        ci.mean,
                        ci.half_width
                    ));
                }
            }
            let p = dir.join("group_scores.csv");
            std::fs::write(&p, w).map_err(io_err(&p))?;
        }

        let refs = &self.config.analysis.tfidf_references;
        if !refs.is_empty() {
            let posts: Vec<(u64, String)> = self
                .store
                .posts()
                .iter()
                .filter(|p| p.original_post_id.is_none())
                .map(|p| {
                    (
                        self.post_step.get(&p.post_id).copied().unwrap_or(0),
                        p.content.clone(),
                    )
                })
                .collect();
            let counts =
                tfidf_relevance_counts(&posts, refs, self.config.analysis.tfidf_threshold)?;
            let mut w = String::from("reference,step,count\n");
            for (r, per_step) in counts.iter().enumerate() {
                for (step, n) in per_step {
                    w.push_str(&format!("{r},{step},{n}\n"));
                }
            }
            let p = dir.join("tfidf_counts.csv");
            std::fs::write(&p, w).map_err(io_err(&p))?;
        }

        let p = dir.join("report.json");
        let report = serde_json::to_string_pretty(&self.report()).expect("report serializes");
        std::fs::write(&p, report).map_err(io_err(&p))?;

        write_manifest(dir, &self.config)
    }
}

fn group_name(g: Group) -> &'static str {
    match g {
        Group::UpTreated => "up_treated",
        Group::Control => "control",
        Group::DownTreated => "down_treated",
    }
}

fn list_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), RunError> {
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// `manifest.json`: the effective config, the seed and a hash per file.
/// Nothing in it depends on wall-clock time or thread count.
fn write_manifest(dir: &Path, config: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    let mut files = Vec::new();
    list_files(dir, dir, &mut files)?;
    files.retain(|f| f != Path::new("manifest.json"));
    files.sort();
    let mut hashes = BTreeMap::new();
    for f in &files {
        let bytes = std::fs::read(dir.join(f)).map_err(io_err(f))?;
        hashes.insert(f.to_string_lossy().replace('\\', "/"), content_hash(&bytes));
    }
    let manifest = json!({
        "seed": config.seed,
        "config": config,
        "files": hashes,
    });
    let p = dir.join("manifest.json");
    std::fs::write(
        &p,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(io_err(&p))?;
    files.push(PathBuf::from("manifest.json"));
    Ok(files)
}

type Population = (Store, BTreeMap<u64, String>, Vec<u64>);

fn build_population(
    config: &RunConfig,
    store_cfg: StoreConfig,
    t0: crate::time::SimTime,
) -> Result<Population, RunError> {
    let seed = config.seed;
    let assemble = |cores: Vec<GeneratedProfile>,
                    ordinary: Vec<GeneratedProfile>,
                    network|
     -> Result<Population, RunError> {
        let edges = build_network(&ordinary, &cores, network, seed)?;
        let personas = cores
            .iter()
            .chain(&ordinary)
            .enumerate()
            .map(|(i, p)| (i as u64, p.persona.clone()))
            .collect();
        let core_ids = (0..cores.len() as u64).collect();
        let store = population_store(&cores, &ordinary, &edges, store_cfg.clone(), t0)?;
        Ok((store, personas, core_ids))
    };
    match &config.population {
        PopulationConfig::Generated {
            agents,
            cores,
            spec,
            network,
            core_profiles,
            generator,
        } => {
            let generator = match generator {
                Some(g) => ProfileGenerator::Remote(g.clone()),
                None => ProfileGenerator::Template,
            };
            let (core_list, n_generated) = match core_profiles {
                Some(p) => {
                    let list = load_profiles_jsonl(p)?;
                    let rest = agents.checked_sub(list.len()).ok_or_else(|| {
                        RunError::Population(format!(
                            "{} core profiles exceed {agents} agents",
                            list.len()
                        ))
                    })?;
                    (Some(list), rest)
                }
                None => (None, *agents),
            };
            let rows = sample_population(spec, n_generated, seed)?;
            let mut generated = generate_profiles(&rows, &generator, seed)?;
            let (mut core_list, ordinary) = match core_list {
                Some(list) => (list, generated),
                None => {
                    let ordinary = generated.split_off(*cores);
                    (generated, ordinary)
                }
            };
            for c in &mut core_list {
                c.is_core = true;
            }
            assemble(core_list, ordinary, network)
        }
        PopulationConfig::Profiles { file, network } => {
            let all = load_profiles_jsonl(file)?;
            let (cores, ordinary): (Vec<_>, Vec<_>) = all.into_iter().partition(|p| p.is_core);
            assemble(cores, ordinary, network)
        }
        PopulationConfig::Import { dir, format } => {
            let store = Store::import_tables(*format, dir, store_cfg)?;
            Ok((store, BTreeMap::new(), Vec::new()))
        }
    }
}

/// Validates, runs and (when an export dir is configured) writes outputs.
pub fn run_scenario(config: &RunConfig) -> Result<(RunReport, Vec<PathBuf>), RunError> {
    let mut sim = Simulation::from_config(config)?;
    let report = sim.run()?;
    let files = match &config.export.dir {
        Some(dir) => sim.export(dir)?,
        None => Vec::new(),
    };
    Ok((report, files))
}
