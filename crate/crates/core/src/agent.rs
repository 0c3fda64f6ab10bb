//! Agents: persona, bounded memory, prompt assembly and decision backends.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::actions::{
    execute_envelope, parse_action_envelope, render_action_menu, ActionEnvelope, ActionError,
    ActionKind, ActionResult, ActionSet, Detail, ExecContext, Fallback,
};
use crate::channel::{Channel, ChannelError, RequestKind};
use crate::recsys::sample_feed;
use crate::rng::{stream, stream_from_bytes, Purpose};
use crate::store::{CommentRecord, PostId, PostRecord, Store, UserId};
use crate::time::ActivityProfile;

/// Marker that opens the system prompt of a survey question.
pub const SURVEY_MARKER: &str = "# SURVEY";
const NO_POSTS: &str = "(no posts)";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("backend setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn len(&self) -> usize {
        self.system.len() + self.user.len()
    }

    pub fn is_empty(&self) -> bool {
        self.system.is_empty() && self.user.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub content_chars: usize,
    pub comments_per_post: usize,
    pub memory_bound: usize,
    pub memory_in_prompt: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            content_chars: 280,
            comments_per_post: 5,
            memory_bound: 20,
            memory_in_prompt: 5,
        }
    }
}

/// A post as an agent sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedPost {
    pub post: PostRecord,
    pub comments: Vec<CommentRecord>,
}

/// Looks up feed posts and their first comments. Unknown ids are skipped.
pub fn build_feed(store: &Store, ids: &[PostId], comments_per_post: usize) -> Vec<FeedPost> {
    ids.iter()
        .filter_map(|&id| store.post(id))
        .map(|p| FeedPost {
            post: p.clone(),
            comments: store
                .comments_on(p.post_id)
                .iter()
                .take(comments_per_post)
                .filter_map(|&c| store.comment(c).cloned())
                .collect(),
        })
        .collect()
}

fn truncate(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

fn quoted(text: &str, max_chars: usize) -> String {
    Value::String(truncate(text, max_chars).to_string()).to_string()
}

pub fn render_feed(feed: &[FeedPost], cfg: &PromptConfig) -> String {
    let mut out = String::from("# FEED\n");
    if feed.is_empty() {
        out.push_str(NO_POSTS);
        out.push('\n');
        return out;
    }
    for item in feed {
        let p = &item.post;
        let _ = writeln!(
            out,
            "[post] post_id={} user_id={} likes={} dislikes={} score={} comments={} content={}",
            p.post_id,
            p.user_id,
            p.num_likes,
            p.num_dislikes,
            p.score(),
            item.comments.len(),
            quoted(&p.content, cfg.content_chars)
        );
        for c in item.comments.iter().take(cfg.comments_per_post) {
            let _ = writeln!(
                out,
                "  [comment] comment_id={} user_id={} likes={} dislikes={} content={}",
                c.comment_id,
                c.user_id,
                c.num_likes,
                c.num_dislikes,
                quoted(&c.content, cfg.content_chars)
            );
        }
    }
    out
}

/// A post line parsed back out of a rendered feed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeenPost {
    pub post_id: PostId,
    pub user_id: UserId,
    pub score: i64,
}

/// Recovers the posts of a rendered feed, in order.
pub fn parse_feed(text: &str) -> Vec<SeenPost> {
    text.lines()
        .filter_map(|l| l.strip_prefix("[post] "))
        .filter_map(|rest| {
            let field = |key: &str| {
                rest.split(' ')
                    .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            };
            Some(SeenPost {
                post_id: field("post_id")?.parse().ok()?,
                user_id: field("user_id")?.parse().ok()?,
                score: field("score")?.parse().ok()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedDigest {
    pub post_id: PostId,
    pub content: String,
    pub likes: u64,
    pub dislikes: u64,
    pub comments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub step: u64,
    pub feed: Vec<FeedDigest>,
    pub actions: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub agent_id: u64,
    pub user_id: UserId,
    pub persona: String,
    pub memory: VecDeque<MemoryEntry>,
    pub activity: ActivityProfile,
    /// Index into the runner's backend list.
    pub backend: usize,
}

impl AgentState {
    pub fn new(
        agent_id: u64,
        user_id: UserId,
        persona: impl Into<String>,
        activity: ActivityProfile,
    ) -> Self {
        AgentState {
            agent_id,
            user_id,
            persona: persona.into(),
            memory: VecDeque::new(),
            activity,
            backend: 0,
        }
    }

    pub fn remember(&mut self, entry: MemoryEntry, bound: usize) {
        self.memory.push_back(entry);
        while self.memory.len() > bound {
            self.memory.pop_front();
        }
    }

    pub fn memory_digest(&self, last: usize, content_chars: usize) -> String {
        let mut out = String::new();
        let skip = self.memory.len().saturating_sub(last);
        for m in self.memory.iter().skip(skip) {
            let seen: Vec<String> = m
                .feed
                .iter()
                .map(|f| format!("{}({:+})", f.post_id, f.likes as i64 - f.dislikes as i64))
                .collect();
            let _ = writeln!(
                out,
                "[memory] step={} seen=[{}] did=[{}] reason={}",
                m.step,
                seen.join(","),
                m.actions.join(","),
                quoted(&m.reason, content_chars)
            );
        }
        out
    }
}

/// Builds an agent's decision prompt.
pub fn assemble_prompt(
    agent: &AgentState,
    feed: &[FeedPost],
    subset: &ActionSet,
    cfg: &PromptConfig,
) -> Result<Prompt, ActionError> {
    let system = render_action_menu(subset, &agent.persona)?;
    let mut user = render_feed(feed, cfg);
    let memory = agent.memory_digest(cfg.memory_in_prompt, cfg.content_chars);
    if !memory.is_empty() {
        user.push_str("\n# MEMORY\n");
        user.push_str(&memory);
    }
    user.push_str("\nPick your actions and answer in the response format.\n");
    Ok(Prompt { system, user })
}

pub fn survey_prompt(agent: &AgentState, question: &str, cfg: &PromptConfig) -> Prompt {
    let system = format!(
        "{SURVEY_MARKER}\nAnswer the question below as the person described here.\n\n# WHO YOU ARE\n{}\n",
        agent.persona.trim()
    );
    let memory = agent.memory_digest(cfg.memory_in_prompt, cfg.content_chars);
    let mut user = String::new();
    if !memory.is_empty() {
        user.push_str("# MEMORY\n");
        user.push_str(&memory);
        user.push('\n');
    }
    user.push_str("# QUESTION\n");
    user.push_str(question.trim());
    user.push('\n');
    Prompt { system, user }
}

#[async_trait]
pub trait DecisionBackend: Send + Sync {
    fn identity(&self) -> String;
    async fn decide(&self, prompt: &Prompt) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Always,
    ScorePositive,
    ScoreNegative,
    ScoreZero,
}

impl Condition {
    fn holds(self, score: i64) -> bool {
        match self {
            Condition::Always => true,
            Condition::ScorePositive => score > 0,
            Condition::ScoreNegative => score < 0,
            Condition::ScoreZero => score == 0,
        }
    }
}

/// "When a feed post meets `when`, take `action` on it with probability `prob`."
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub when: Condition,
    pub action: ActionKind,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptPolicy {
    /// Rules tried per feed post, in order; the first that fires wins.
    pub rules: Vec<Rule>,
    pub survey_answer: String,
    pub text: String,
}

impl Default for ScriptPolicy {
    fn default() -> Self {
        ScriptPolicy {
            rules: Vec::new(),
            survey_answer: "No comment.".into(),
            text: "Interesting.".into(),
        }
    }
}

impl ScriptPolicy {
    pub fn do_nothing() -> Self {
        ScriptPolicy::default()
    }

    pub fn rule(mut self, when: Condition, action: ActionKind, prob: f64) -> Self {
        self.rules.push(Rule { when, action, prob });
        self
    }
}

/// Rule-table backend. Its output is a pure function of the prompt and seed.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    policy: ScriptPolicy,
    seed: u64,
}

impl ScriptedBackend {
    pub fn new(policy: ScriptPolicy, seed: u64) -> Self {
        ScriptedBackend { policy, seed }
    }

    pub fn respond(&self, prompt: &Prompt) -> String {
        if prompt.system.starts_with(SURVEY_MARKER) {
            return self.policy.survey_answer.clone();
        }
        let mut bytes = prompt.system.clone().into_bytes();
        bytes.extend_from_slice(prompt.user.as_bytes());
        let mut rng = stream_from_bytes(self.seed, &bytes, Purpose::Backend);
        let mut functions = Vec::new();
        for seen in parse_feed(&prompt.user) {
            for rule in &self.policy.rules {
                if !rule.when.holds(seen.score) {
                    continue;
                }
                if rng.random::<f64>() < rule.prob {
                    if let Some(args) = self.arguments(rule.action, &seen) {
                        functions.push(json!({"name": rule.action.name(), "arguments": args}));
                    }
                    break;
                }
            }
        }
        let reason = if functions.is_empty() {
            functions.push(json!({"name": "do_nothing", "arguments": {}}));
            "Nothing here calls for a reaction."
        } else {
            "Reacting to the posts in my feed."
        };
        json!({"reason": reason, "functions": functions}).to_string()
    }

    fn arguments(&self, kind: ActionKind, seen: &SeenPost) -> Option<Value> {
        use ActionKind::*;
        Some(match kind {
            Repost | LikePost | UnlikePost | DislikePost | UndoDislikePost => {
                json!({"post_id": seen.post_id})
            }
            CreateComment => json!({"post_id": seen.post_id, "content": self.policy.text}),
            CreatePost => json!({"content": self.policy.text}),
            Follow | Unfollow => json!({"followee_id": seen.user_id}),
            Mute | Unmute => json!({"mutee_id": seen.user_id}),
            Refresh | Trend | DoNothing => json!({}),
            SearchPosts | SearchUser => json!({"query": self.policy.text}),
            SignUp | LikeComment | UnlikeComment | DislikeComment | UndoDislikeComment => {
                return None
            }
        })
    }
}

#[async_trait]
impl DecisionBackend for ScriptedBackend {
    fn identity(&self) -> String {
        format!("scripted:{}", self.seed)
    }

    async fn decide(&self, prompt: &Prompt) -> Result<String, BackendError> {
        Ok(self.respond(prompt))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoints: Vec<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrency: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoints: Vec::new(),
            model: "default".into(),
            temperature: 0.0,
            timeout_secs: 60.0,
            max_retries: 3,
            max_concurrency: 64,
        }
    }
}

/// Chat-completion backend reached through the channel's worker pool.
pub struct RemoteBackend {
    channel: Channel,
    config: RemoteConfig,
}

impl RemoteBackend {
    pub fn new(channel: Channel, config: RemoteConfig) -> Self {
        RemoteBackend { channel, config }
    }

    pub fn request_body(&self, prompt: &Prompt) -> Value {
        json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": self.config.temperature,
        })
    }
}

/// Text of the first choice of a chat-completion response.
pub fn completion_text(body: &str) -> Result<String, BackendError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Malformed("no choices[0].message.content".into()))
}

#[async_trait]
impl DecisionBackend for RemoteBackend {
    fn identity(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    async fn decide(&self, prompt: &Prompt) -> Result<String, BackendError> {
        let body = self.request_body(prompt).to_string();
        // Per-attempt timeouts live in the workers; this bound covers retries.
        let total = Duration::from_secs_f64(
            self.config.timeout_secs * (self.config.max_retries as f64 + 1.0) + 1.0,
        );
        let raw = self
            .channel
            .request(RequestKind::LlmDecide, body, total)
            .await?;
        completion_text(&raw)
    }
}

/// Runs the backend and parses its answer; failures become `do_nothing`.
pub async fn decide(backend: &dyn DecisionBackend, prompt: &Prompt) -> ActionEnvelope {
    match backend.decide(prompt).await {
        Ok(text) => parse_action_envelope(&text),
        Err(e) => {
            log::warn!("{} failed: {e}", backend.identity());
            ActionEnvelope::fallback(Fallback::BackendError(e.to_string()))
        }
    }
}

/// Samples the agent's feed from the rec cache for this step.
pub fn draw_feed(store: &Store, agent: &AgentState, seed: u64, step: u64, n: usize) -> Vec<PostId> {
    let mut rng = stream(seed, agent.agent_id, step, Purpose::Feed);
    sample_feed(store.rec_cache().for_user(agent.user_id), n, &mut rng)
}

fn describe(env: &ActionEnvelope, results: &[ActionResult]) -> Vec<String> {
    env.calls
        .iter()
        .zip(results)
        .map(|(c, r)| {
            let args: Vec<String> = c
                .arguments
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            let mark = if r.ok { "" } else { "!" };
            format!("{mark}{}({})", c.name, args.join(","))
        })
        .collect()
}

/// Executes a decision and records it in the agent's memory.
pub fn apply_decision(
    agent: &mut AgentState,
    store: &mut Store,
    feed: &[FeedPost],
    envelope: &ActionEnvelope,
    ctx: &ExecContext<'_>,
    cfg: &PromptConfig,
) -> Vec<ActionResult> {
    let results = execute_envelope(store, agent.user_id, envelope, ctx);
    let digest = feed
        .iter()
        .map(|f| FeedDigest {
            post_id: f.post.post_id,
            content: truncate(&f.post.content, cfg.content_chars).to_string(),
            likes: f.post.num_likes,
            dislikes: f.post.num_dislikes,
            comments: f.comments.len(),
        })
        .collect();
    agent.remember(
        MemoryEntry {
            step: ctx.clock.step(),
            feed: digest,
            actions: describe(envelope, &results),
            reason: envelope.reason.clone(),
        },
        cfg.memory_bound,
    );
    results
}

/// Full single-agent step: feed, prompt, decision, execution, memory.
pub async fn step_agent(
    agent: &mut AgentState,
    store: &mut Store,
    backend: &dyn DecisionBackend,
    ctx: &ExecContext<'_>,
    cfg: &PromptConfig,
) -> Result<Vec<ActionResult>, ActionError> {
    let ids = draw_feed(
        store,
        agent,
        ctx.seed,
        ctx.clock.step(),
        ctx.reads.feed_sample_size,
    );
    let feed = build_feed(store, &ids, cfg.comments_per_post);
    let prompt = assemble_prompt(agent, &feed, ctx.allowed, cfg)?;
    let envelope = decide(backend, &prompt).await;
    Ok(apply_decision(agent, store, &feed, &envelope, ctx, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyAnswer {
    pub agent_id: u64,
    pub step: u64,
    pub answer: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

/// Asks every agent `question`. Answers come back in agent order.
pub async fn survey(
    agents: &[AgentState],
    backends: &[Arc<dyn DecisionBackend>],
    question: &str,
    step: u64,
    cfg: &PromptConfig,
) -> Vec<SurveyAnswer> {
    let mut tasks = Vec::with_capacity(agents.len());
    for a in agents {
        let prompt = survey_prompt(a, question, cfg);
        let backend = backends[a.backend.min(backends.len() - 1)].clone();
        tasks.push(tokio::spawn(async move { backend.decide(&prompt).await }));
    }
    let mut out = Vec::with_capacity(agents.len());
    for (a, t) in agents.iter().zip(tasks) {
        let answer = match t.await {
            Ok(Ok(text)) => SurveyAnswer {
                agent_id: a.agent_id,
                step,
                answer: text,
                failed: false,
            },
            Ok(Err(e)) => {
                log::warn!("survey answer of agent {} failed: {e}", a.agent_id);
                SurveyAnswer {
                    agent_id: a.agent_id,
                    step,
                    answer: String::new(),
                    failed: true,
                }
            }
            Err(e) => {
                log::warn!("survey task of agent {} panicked: {e}", a.agent_id);
                SurveyAnswer {
                    agent_id: a.agent_id,
                    step,
                    answer: String::new(),
                    failed: true,
                }
            }
        };
        out.push(answer);
    }
    out
}

pub fn write_survey_jsonl(path: &Path, answers: &[SurveyAnswer]) -> std::io::Result<()> {
    let mut out = String::new();
    for a in answers {
        out.push_str(&serde_json::to_string(a).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Ids of posts an executed call touched, for exposure bookkeeping.
pub fn result_posts(results: &[ActionResult]) -> Vec<PostId> {
    results
        .iter()
        .filter_map(|r| match &r.detail {
            Detail::Posts(ids) => Some(ids.clone()),
            _ => None,
        })
        .flatten()
        .collect()
}
