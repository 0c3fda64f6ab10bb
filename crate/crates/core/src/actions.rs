//! The agent action protocol.
//!
//! Agents answer with a JSON object holding a free-text `reason` and an ordered
//! list of `functions`, each a `{"name", "arguments"}` pair. This module parses
//! that wire format, renders the action menu agents choose from, and executes
//! parsed calls against the [`Store`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::recsys::sample_feed;
use crate::rng::{stream, Purpose};
use crate::store::{EdgeKind, NewUser, PostId, Store, StoreError, UserId};
use crate::time::SimClock;

/// The 21 actions an agent can take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    SignUp,
    Refresh,
    Trend,
    SearchPosts,
    SearchUser,
    CreatePost,
    Repost,
    Follow,
    Unfollow,
    Mute,
    Unmute,
    LikePost,
    UnlikePost,
    DislikePost,
    UndoDislikePost,
    CreateComment,
    LikeComment,
    UnlikeComment,
    DislikeComment,
    UndoDislikeComment,
    DoNothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgType {
    Int,
    Str,
}

impl ActionKind {
    pub const ALL: [ActionKind; 21] = [
        ActionKind::SignUp,
        ActionKind::Refresh,
        ActionKind::Trend,
        ActionKind::SearchPosts,
        ActionKind::SearchUser,
        ActionKind::CreatePost,
        ActionKind::Repost,
        ActionKind::Follow,
        ActionKind::Unfollow,
        ActionKind::Mute,
        ActionKind::Unmute,
        ActionKind::LikePost,
        ActionKind::UnlikePost,
        ActionKind::DislikePost,
        ActionKind::UndoDislikePost,
        ActionKind::CreateComment,
        ActionKind::LikeComment,
        ActionKind::UnlikeComment,
        ActionKind::DislikeComment,
        ActionKind::UndoDislikeComment,
        ActionKind::DoNothing,
    ];

    pub fn name(self) -> &'static str {
        use ActionKind::*;
        match self {
            SignUp => "sign_up",
            Refresh => "refresh",
            Trend => "trend",
            SearchPosts => "search_posts",
            SearchUser => "search_user",
            CreatePost => "create_post",
            Repost => "repost",
            Follow => "follow",
            Unfollow => "unfollow",
            Mute => "mute",
            Unmute => "unmute",
            LikePost => "like_post",
            UnlikePost => "unlike_post",
            DislikePost => "dislike_post",
            UndoDislikePost => "undo_dislike_post",
            CreateComment => "create_comment",
            LikeComment => "like_comment",
            UnlikeComment => "unlike_comment",
            DislikeComment => "dislike_comment",
            UndoDislikeComment => "undo_dislike_comment",
            DoNothing => "do_nothing",
        }
    }

    pub fn from_name(name: &str) -> Option<ActionKind> {
        ActionKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn args(self) -> &'static [(&'static str, ArgType)] {
        use ActionKind::*;
        use ArgType::*;
        match self {
            SignUp => &[("user_name", Str), ("name", Str), ("bio", Str)],
            Refresh | Trend | DoNothing => &[],
            SearchPosts | SearchUser => &[("query", Str)],
            CreatePost => &[("content", Str)],
            Repost | LikePost | UnlikePost | DislikePost | UndoDislikePost => &[("post_id", Int)],
            Follow | Unfollow => &[("followee_id", Int)],
            Mute | Unmute => &[("mutee_id", Int)],
            CreateComment => &[("post_id", Int), ("content", Str)],
            LikeComment | UnlikeComment | DislikeComment | UndoDislikeComment => {
                &[("comment_id", Int)]
            }
        }
    }

    /// Menu line for the action, without its argument list.
    pub fn description(self) -> &'static str {
        use ActionKind::*;
        match self {
            SignUp => "Register a new account with a username, a display name and a short bio.",
            Refresh => "Load a fresh set of recommended posts into your feed.",
            Trend => "See the most liked posts of the last two days.",
            SearchPosts => "Find posts whose text contains the query.",
            SearchUser => "Find users whose username or bio contains the query.",
            CreatePost => "Publish a new post.",
            Repost => "Share an existing post with your followers. Use it when you want the post to spread.",
            Follow => "Start following a user you respect, like or care about.",
            Unfollow => "Stop following a user.",
            Mute => "Hide a user you dislike or strongly disagree with.",
            Unmute => "Stop hiding a previously muted user.",
            LikePost => "Like a post you find interesting or agree with.",
            UnlikePost => "Take back an earlier like on a post.",
            DislikePost => "Dislike a post you disagree with or find uninteresting.",
            UndoDislikePost => "Take back an earlier dislike on a post.",
            CreateComment => "Reply to a post with your own comment.",
            LikeComment => "Like a comment you agree with or appreciate.",
            UnlikeComment => "Take back an earlier like on a comment.",
            DislikeComment => "Dislike a comment you disagree with or find unhelpful.",
            UndoDislikeComment => "Take back an earlier dislike on a comment.",
            DoNothing => {
                "Most of the time you just read the posts without reacting. In that case choose do_nothing."
            }
        }
    }

    fn edge(self) -> Option<(EdgeKind, bool)> {
        use ActionKind::*;
        Some(match self {
            Follow => (EdgeKind::Follow, true),
            Unfollow => (EdgeKind::Follow, false),
            Mute => (EdgeKind::Mute, true),
            Unmute => (EdgeKind::Mute, false),
            LikePost => (EdgeKind::LikePost, true),
            UnlikePost => (EdgeKind::LikePost, false),
            DislikePost => (EdgeKind::DislikePost, true),
            UndoDislikePost => (EdgeKind::DislikePost, false),
            LikeComment => (EdgeKind::LikeComment, true),
            UnlikeComment => (EdgeKind::LikeComment, false),
            DislikeComment => (EdgeKind::DislikeComment, true),
            UndoDislikeComment => (EdgeKind::DislikeComment, false),
            _ => return None,
        })
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionKind {
    type Err = ActionError;
    fn from_str(s: &str) -> Result<Self, ActionError> {
        ActionKind::from_name(s).ok_or_else(|| ActionError::UnknownAction(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ActionError {
    #[error("action subset is empty")]
    EmptySubset,
    #[error("unknown action {0:?}")]
    UnknownAction(String),
}

/// A scenario's permitted actions. Always contains `do_nothing`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ActionKind>", into = "Vec<ActionKind>")]
pub struct ActionSet(BTreeSet<ActionKind>);

impl ActionSet {
    /// Builds a set, adding `do_nothing` when missing. The flag reports
    /// whether it was added.
    pub fn new(
        kinds: impl IntoIterator<Item = ActionKind>,
    ) -> Result<(ActionSet, bool), ActionError> {
        let mut set: BTreeSet<_> = kinds.into_iter().collect();
        if set.is_empty() {
            return Err(ActionError::EmptySubset);
        }
        let added = set.insert(ActionKind::DoNothing);
        Ok((ActionSet(set), added))
    }

    fn of(kinds: &[ActionKind]) -> ActionSet {
        ActionSet::new(kinds.iter().copied())
            .expect("nonempty preset")
            .0
    }

    pub fn full() -> ActionSet {
        ActionSet::of(&ActionKind::ALL)
    }

    pub fn information_spreading() -> ActionSet {
        use ActionKind::*;
        ActionSet::of(&[LikePost, Repost, Follow, DoNothing])
    }

    pub fn group_polarization() -> ActionSet {
        use ActionKind::*;
        ActionSet::of(&[
            DoNothing,
            Repost,
            LikePost,
            DislikePost,
            Follow,
            CreateComment,
            LikeComment,
            DislikeComment,
        ])
    }

    pub fn herd_humans() -> ActionSet {
        use ActionKind::*;
        ActionSet::of(&[
            LikeComment,
            DislikeComment,
            LikePost,
            DislikePost,
            SearchPosts,
            SearchUser,
            Trend,
            Refresh,
            DoNothing,
        ])
    }

    pub fn herd_counterfactual() -> ActionSet {
        use ActionKind::*;
        ActionSet::of(&[
            CreateComment,
            LikeComment,
            DislikeComment,
            LikePost,
            DislikePost,
            SearchUser,
            Trend,
            Refresh,
            DoNothing,
        ])
    }

    pub fn contains(&self, kind: ActionKind) -> bool {
        self.0.contains(&kind)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ActionKind> + '_ {
        self.0.iter().copied()
    }
}

impl TryFrom<Vec<ActionKind>> for ActionSet {
    type Error = ActionError;
    fn try_from(v: Vec<ActionKind>) -> Result<Self, ActionError> {
        ActionSet::new(v).map(|(s, _)| s)
    }
}

impl From<ActionSet> for Vec<ActionKind> {
    fn from(s: ActionSet) -> Self {
        s.0.into_iter().collect()
    }
}

/// One requested call. `kind` is `None` when the name is not a known action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionCall {
    pub name: String,
    pub kind: Option<ActionKind>,
    pub arguments: Map<String, Value>,
}

impl ActionCall {
    pub fn new(kind: ActionKind, arguments: Value) -> Self {
        ActionCall {
            name: kind.name().to_string(),
            kind: Some(kind),
            arguments: match arguments {
                Value::Object(m) => m,
                _ => Map::new(),
            },
        }
    }
}

/// An agent's parsed decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEnvelope {
    pub reason: String,
    pub calls: Vec<ActionCall>,
    /// Set when the envelope is the `do_nothing` fallback.
    pub fallback: Option<Fallback>,
}

/// Why an agent ended up with the `do_nothing` fallback.
#[derive(Debug, Clone, PartialEq)]
pub enum Fallback {
    ParseFailure(String),
    BackendError(String),
}

impl Fallback {
    pub fn tag(&self) -> &'static str {
        match self {
            Fallback::ParseFailure(_) => "parse_failure",
            Fallback::BackendError(_) => "backend_error",
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            Fallback::ParseFailure(d) | Fallback::BackendError(d) => d,
        }
    }
}

impl ActionEnvelope {
    pub fn do_nothing(reason: impl Into<String>) -> Self {
        ActionEnvelope {
            reason: reason.into(),
            calls: vec![ActionCall::new(ActionKind::DoNothing, json!({}))],
            fallback: None,
        }
    }

    pub fn fallback(why: Fallback) -> Self {
        ActionEnvelope {
            fallback: Some(why),
            ..ActionEnvelope::do_nothing("")
        }
    }

    /// Serializes to the wire format.
    pub fn to_wire(&self) -> String {
        let functions: Vec<Value> = self
            .calls
            .iter()
            .map(|c| json!({"name": c.name, "arguments": Value::Object(c.arguments.clone())}))
            .collect();
        json!({"reason": self.reason, "functions": functions}).to_string()
    }
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let t = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```JSON"))
        .or_else(|| t.strip_prefix("```"))
        .unwrap_or(t);
    t.strip_suffix("```").unwrap_or(t).trim()
}

fn candidate_objects(text: &str) -> Vec<&str> {
    let mut out = vec![strip_fences(text)];
    if let (Some(start), Some(end)) = (text.find('{'), text.rfind('}')) {
        if start < end {
            out.push(&text[start..=end]);
        }
    }
    out
}

fn envelope_from_value(v: Value) -> Result<ActionEnvelope, String> {
    let Value::Object(mut obj) = v else {
        return Err("response is not a JSON object".into());
    };
    let reason = match obj.remove("reason") {
        Some(Value::String(s)) => s,
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    };
    let Some(Value::Array(functions)) = obj.remove("functions") else {
        return Err("missing \"functions\" array".into());
    };
    let mut calls = Vec::with_capacity(functions.len());
    for (i, f) in functions.into_iter().enumerate() {
        let Value::Object(mut f) = f else {
            return Err(format!("functions[{i}] is not an object"));
        };
        let Some(Value::String(name)) = f.remove("name") else {
            return Err(format!("functions[{i}] has no string \"name\""));
        };
        let arguments = match f.remove("arguments") {
            Some(Value::Object(m)) => m,
            Some(Value::Null) | None => Map::new(),
            Some(_) => return Err(format!("functions[{i}].arguments is not an object")),
        };
        calls.push(ActionCall {
            kind: ActionKind::from_name(&name),
            name,
            arguments,
        });
    }
    if calls.is_empty() {
        calls.push(ActionCall::new(ActionKind::DoNothing, json!({})));
    }
    Ok(ActionEnvelope {
        reason,
        calls,
        fallback: None,
    })
}

/// Parses an agent response. Never fails: unparseable input yields a
/// `do_nothing` envelope with [`ActionEnvelope::fallback`] set. Unknown
/// call names are kept with `kind: None` and rejected at execution.
pub fn parse_action_envelope(text: &str) -> ActionEnvelope {
    if text.trim().is_empty() {
        return ActionEnvelope::fallback(Fallback::ParseFailure("empty response".into()));
    }
    let mut last_err = String::from("no JSON object found");
    for candidate in candidate_objects(text) {
        match serde_json::from_str::<Value>(candidate) {
            Ok(v) => match envelope_from_value(v) {
                Ok(env) => return env,
                Err(e) => last_err = e,
            },
            Err(e) => last_err = e.to_string(),
        }
    }
    ActionEnvelope::fallback(Fallback::ParseFailure(last_err))
}

const OBJECTIVE: &str = "# TASK
You are browsing a social media platform. A few posts are listed below. Read them, then pick one or more of the functions that follow.
";

const SELF_DESCRIPTION: &str = "# WHO YOU ARE
Act the way the person described here would act.
";

/// Answer format block shown to agents.
pub const RESPONSE_FORMAT: &str = r#"# ANSWER FORMAT
Reply with a single JSON object shaped like this:

{
    "reason": "a short account of how the posts made you feel and why you picked the functions below; put every explanation here",
    "functions": [{
        "name": "first function",
        "arguments": {
            "argument_1": "value",
            "argument_2": "value"
        }
    }, {
        "name": "second function",
        "arguments": {
            "argument_1": "value"
        }
    }]
}

Output only the JSON object with no text around it. Every entry in "functions" needs a "name".
"#;

fn render_action(kind: ActionKind, out: &mut String) {
    out.push_str(&format!("- {}: {}\n", kind.name(), kind.description()));
    let args = kind.args();
    if args.is_empty() {
        if kind != ActionKind::DoNothing {
            out.push_str("    - No arguments required.\n");
        }
        return;
    }
    out.push_str("    - Arguments:\n");
    for (name, ty) in args {
        let ty = match ty {
            ArgType::Int => "integer",
            ArgType::Str => "str",
        };
        out.push_str(&format!("        \"{name}\" ({ty})\n"));
    }
}

/// The fixed part of an agent prompt: objective, the permitted actions,
/// self-description with `persona`, and the response format.
pub fn render_action_menu(subset: &ActionSet, persona: &str) -> Result<String, ActionError> {
    if subset.is_empty() {
        return Err(ActionError::EmptySubset);
    }
    let mut out = String::with_capacity(2048);
    out.push_str(OBJECTIVE);
    out.push('\n');
    // Menu order follows the protocol listing, not the set's sort order.
    for kind in ActionKind::ALL.into_iter().filter(|k| subset.contains(*k)) {
        render_action(kind, &mut out);
    }
    out.push('\n');
    out.push_str(SELF_DESCRIPTION);
    out.push('\n');
    out.push_str(persona.trim());
    out.push_str("\n\n");
    out.push_str(RESPONSE_FORMAT);
    Ok(out)
}

/// Number of actions listed in a rendered menu.
pub fn menu_action_count(menu: &str) -> usize {
    menu.lines()
        .filter(|l| {
            l.strip_prefix("- ")
                .and_then(|r| r.split_once(':'))
                .is_some_and(|(name, _)| ActionKind::from_name(name).is_some())
        })
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectTag {
    UnknownAction,
    BadArguments,
    DuplicateEdge,
    AbsentTarget,
    AlreadyReposted,
    NotPermitted,
}

impl RejectTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectTag::UnknownAction => "unknown_action",
            RejectTag::BadArguments => "bad_arguments",
            RejectTag::DuplicateEdge => "duplicate_edge",
            RejectTag::AbsentTarget => "absent_target",
            RejectTag::AlreadyReposted => "already_reposted",
            RejectTag::NotPermitted => "not_permitted",
        }
    }

    fn from_store(e: &StoreError) -> RejectTag {
        match e {
            StoreError::DuplicateEdge { .. } | StoreError::DuplicateUserName(_) => {
                RejectTag::DuplicateEdge
            }
            StoreError::AlreadyReposted { .. } => RejectTag::AlreadyReposted,
            StoreError::SelfEdge { .. } => RejectTag::BadArguments,
            _ => RejectTag::AbsentTarget,
        }
    }
}

impl fmt::Display for RejectTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detail {
    Created(u64),
    Removed(u64),
    Posts(Vec<PostId>),
    Users(Vec<UserId>),
    Nothing,
    Rejected(RejectTag),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub index: usize,
    pub action: String,
    pub ok: bool,
    pub detail: Detail,
}

/// Knobs for the read actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadConfig {
    pub feed_sample_size: usize,
    pub trend_window_secs: f64,
    pub trend_k: usize,
    pub search_limit: usize,
}

impl Default for ReadConfig {
    fn default() -> Self {
        ReadConfig {
            feed_sample_size: 5,
            trend_window_secs: 2.0 * 24.0 * 3600.0,
            trend_k: 10,
            search_limit: 10,
        }
    }
}

/// What an envelope executes against besides the store.
pub struct ExecContext<'a> {
    pub clock: &'a SimClock,
    pub allowed: &'a ActionSet,
    pub seed: u64,
    pub reads: ReadConfig,
}

fn int_arg(args: &Map<String, Value>, name: &str) -> Option<u64> {
    match args.get(name)? {
        Value::Number(n) => n.as_u64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn str_arg<'a>(args: &'a Map<String, Value>, name: &str) -> Option<&'a str> {
    args.get(name)?.as_str()
}

fn validate_args(kind: ActionKind, args: &Map<String, Value>) -> bool {
    kind.args().iter().all(|(name, ty)| match ty {
        ArgType::Int => int_arg(args, name).is_some(),
        ArgType::Str => str_arg(args, name).is_some(),
    })
}

/// Top `k` posts by like count created within the trend window.
pub fn trending(store: &Store, now: f64, window_secs: f64, k: usize) -> Vec<PostId> {
    let mut recent: Vec<_> = store
        .posts()
        .iter()
        .filter(|p| now - p.created_at.0 <= window_secs)
        .collect();
    recent.sort_by(|a, b| {
        b.num_likes
            .cmp(&a.num_likes)
            .then(b.created_at.0.total_cmp(&a.created_at.0))
            .then(a.post_id.cmp(&b.post_id))
    });
    recent.into_iter().take(k).map(|p| p.post_id).collect()
}

fn search_posts(store: &Store, query: &str, limit: usize) -> Vec<PostId> {
    let q = query.to_lowercase();
    store
        .posts()
        .iter()
        .rev()
        .filter(|p| p.content.to_lowercase().contains(&q))
        .take(limit)
        .map(|p| p.post_id)
        .collect()
}

fn search_users(store: &Store, query: &str, limit: usize) -> Vec<UserId> {
    let q = query.to_lowercase();
    store
        .users()
        .iter()
        .filter(|u| u.user_name.to_lowercase().contains(&q) || u.bio.to_lowercase().contains(&q))
        .take(limit)
        .map(|u| u.user_id)
        .collect()
}

fn args_value(args: &Map<String, Value>) -> Value {
    Value::Object(args.clone())
}

/// Executes one envelope for `user_id`. Every call yields one trace row and
/// one result, in order; a failed call does not stop the ones after it.
pub fn execute_envelope(
    store: &mut Store,
    user_id: UserId,
    envelope: &ActionEnvelope,
    ctx: &ExecContext<'_>,
) -> Vec<ActionResult> {
    let mut results = Vec::with_capacity(envelope.calls.len());
    for (index, call) in envelope.calls.iter().enumerate() {
        let now = ctx.clock.stamp().time;
        let reject = |store: &mut Store, tag: RejectTag| {
            store.record_rejection(
                user_id,
                &call.name,
                args_value(&call.arguments),
                tag.as_str(),
                now,
            );
            ActionResult {
                index,
                action: call.name.clone(),
                ok: false,
                detail: Detail::Rejected(tag),
            }
        };
        let Some(kind) = call.kind else {
            results.push(reject(store, RejectTag::UnknownAction));
            continue;
        };
        if !ctx.allowed.contains(kind) {
            results.push(reject(store, RejectTag::NotPermitted));
            continue;
        }
        if !validate_args(kind, &call.arguments) {
            results.push(reject(store, RejectTag::BadArguments));
            continue;
        }
        let args = &call.arguments;
        let outcome: Result<Detail, StoreError> = match kind {
            ActionKind::DoNothing => {
                let info = match &envelope.fallback {
                    Some(why) => json!({"fallback": why.tag(), "detail": why.detail()}),
                    None => json!({}),
                };
                store.record(user_id, kind.name(), info, now);
                Ok(Detail::Nothing)
            }
            ActionKind::SignUp => {
                let agent_id = store.user(user_id).map(|u| u.agent_id).unwrap_or(-1);
                let profile = NewUser::new(
                    str_arg(args, "user_name").unwrap_or_default(),
                    str_arg(args, "name").unwrap_or_default(),
                    str_arg(args, "bio").unwrap_or_default(),
                );
                store
                    .register_user(profile, agent_id, now)
                    .map(Detail::Created)
            }
            ActionKind::Refresh => {
                let mut rng = stream(ctx.seed, user_id, ctx.clock.step(), Purpose::Refresh);
                let ids = sample_feed(
                    store.rec_cache().for_user(user_id),
                    ctx.reads.feed_sample_size,
                    &mut rng,
                );
                store.record(user_id, kind.name(), json!({"post_ids": ids}), now);
                Ok(Detail::Posts(ids))
            }
            ActionKind::Trend => {
                let ids = trending(store, now.0, ctx.reads.trend_window_secs, ctx.reads.trend_k);
                store.record(user_id, kind.name(), json!({"post_ids": ids}), now);
                Ok(Detail::Posts(ids))
            }
            ActionKind::SearchPosts => {
                let q = str_arg(args, "query").unwrap_or_default();
                let ids = search_posts(store, q, ctx.reads.search_limit);
                store.record(
                    user_id,
                    kind.name(),
                    json!({"query": q, "post_ids": ids}),
                    now,
                );
                Ok(Detail::Posts(ids))
            }
            ActionKind::SearchUser => {
                let q = str_arg(args, "query").unwrap_or_default();
                let ids = search_users(store, q, ctx.reads.search_limit);
                store.record(
                    user_id,
                    kind.name(),
                    json!({"query": q, "user_ids": ids}),
                    now,
                );
                Ok(Detail::Users(ids))
            }
            ActionKind::CreatePost => {
                let content = str_arg(args, "content").unwrap_or_default();
                store
                    .insert_post(user_id, content, now)
                    .map(Detail::Created)
            }
            ActionKind::Repost => {
                let post = int_arg(args, "post_id").unwrap_or_default();
                store.insert_repost(user_id, post, now).map(Detail::Created)
            }
            ActionKind::CreateComment => {
                let post = int_arg(args, "post_id").unwrap_or_default();
                let content = str_arg(args, "content").unwrap_or_default();
                store
                    .insert_comment(user_id, post, content, now)
                    .map(Detail::Created)
            }
            edge_kind => {
                let (edge, add) = edge_kind.edge().expect("remaining kinds are edges");
                let target = int_arg(args, edge.target_arg()).unwrap_or_default();
                if add {
                    store
                        .upsert_edge(edge, user_id, target, now)
                        .map(Detail::Created)
                } else {
                    store
                        .remove_edge(edge, user_id, target, now)
                        .map(Detail::Removed)
                }
            }
        };
        results.push(match outcome {
            Ok(detail) => ActionResult {
                index,
                action: call.name.clone(),
                ok: true,
                detail,
            },
            Err(e) => reject(store, RejectTag::from_store(&e)),
        });
    }
    results
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::StoreConfig;
    use crate::time::{ClockConfig, SimTime};

    #[test]
    fn exactly_21_actions_with_unique_names() {
        let names: BTreeSet<_> = ActionKind::ALL.iter().map(|k| k.name()).collect();
        assert_eq!(names.len(), 21);
        for k in ActionKind::ALL {
            assert_eq!(k.name().parse::<ActionKind>().unwrap(), k);
        }
    }

    #[test]
    fn parses_wire_format() {
        let env = parse_action_envelope(
            r#"{"reason":"agree","functions":[{"name":"like_post","arguments":{"post_id":1}}]}"#,
        );
        assert_eq!(env.reason, "agree");
        assert_eq!(env.calls.len(), 1);
        assert_eq!(env.calls[0].kind, Some(ActionKind::LikePost));
        assert!(env.fallback.is_none());
    }

    #[test]
    fn fenced_and_chatty_responses_parse() {
        let env = parse_action_envelope(
            "Sure!\n```json\n{\"reason\": \"x\", \"functions\": [{\"name\": \"do_nothing\", \"arguments\": {}}]}\n```",
        );
        assert!(env.fallback.is_none());
        assert_eq!(env.calls[0].kind, Some(ActionKind::DoNothing));
    }

    #[test]
    fn empty_and_garbage_fall_back() {
        for text in [
            "",
            "   ",
            "not json",
            "{\"reason\": 1}",
            "[1,2]",
            "{\"functions\": [3]}",
        ] {
            let env = parse_action_envelope(text);
            assert!(env.fallback.is_some(), "{text:?}");
            assert_eq!(env.calls.len(), 1);
            assert_eq!(env.calls[0].kind, Some(ActionKind::DoNothing));
        }
    }

    #[test]
    fn unknown_names_are_flagged() {
        let env = parse_action_envelope(
            r#"{"reason":"","functions":[{"name":"like","arguments":{"post_id":1}}]}"#,
        );
        assert_eq!(env.calls[0].name, "like");
        assert_eq!(env.calls[0].kind, None);
    }

    #[test]
    fn menu_subsets() {
        let m = render_action_menu(&ActionSet::information_spreading(), "I like news.").unwrap();
        assert_eq!(menu_action_count(&m), 4);
        assert!(m.contains("- repost:") && m.contains("- follow:") && m.contains("I like news."));
        assert!(m.contains("# ANSWER FORMAT"));
        assert!(!m.contains("- create_comment:"));
        let full = render_action_menu(&ActionSet::full(), "p").unwrap();
        assert_eq!(menu_action_count(&full), 21);
        let (set, added) = ActionSet::new([ActionKind::LikePost]).unwrap();
        assert!(added && set.contains(ActionKind::DoNothing));
        assert_eq!(ActionSet::new([]).unwrap_err(), ActionError::EmptySubset);
    }

    #[test]
    fn preset_sizes() {
        assert_eq!(ActionSet::information_spreading().len(), 4);
        assert_eq!(ActionSet::group_polarization().len(), 8);
        assert_eq!(ActionSet::herd_humans().len(), 9);
        assert_eq!(ActionSet::herd_counterfactual().len(), 9);
    }

    fn setup() -> (Store, SimClock) {
        let mut s = Store::open(StoreConfig::memory(5)).unwrap();
        s.register_user(NewUser::new("a", "A", "likes cats"), 0, SimTime(0.0))
            .unwrap();
        s.register_user(NewUser::new("b", "B", "dogs"), 1, SimTime(0.0))
            .unwrap();
        s.insert_post(1, "Cats are great", SimTime(0.0)).unwrap();
        (s, SimClock::new(ClockConfig::default()).unwrap())
    }

    fn run(
        s: &mut Store,
        clock: &SimClock,
        user: UserId,
        wire: &str,
        allowed: &ActionSet,
    ) -> Vec<ActionResult> {
        let ctx = ExecContext {
            clock,
            allowed,
            seed: 1,
            reads: ReadConfig::default(),
        };
        execute_envelope(s, user, &parse_action_envelope(wire), &ctx)
    }

    #[test]
    fn repost_twice_is_rejected() {
        let (mut s, clock) = setup();
        let full = ActionSet::full();
        let wire = r#"{"reason":"","functions":[{"name":"repost","arguments":{"post_id":1}},{"name":"repost","arguments":{"post_id":1}}]}"#;
        let r = run(&mut s, &clock, 2, wire, &full);
        assert!(r[0].ok);
        assert_eq!(r[1].detail, Detail::Rejected(RejectTag::AlreadyReposted));
        assert_eq!(
            s.trace().last().unwrap().info_json()["error"],
            "already_reposted"
        );
    }

    #[test]
    fn do_nothing_only_traces() {
        let (mut s, clock) = setup();
        let before = s.row_counts();
        let r = run(
            &mut s,
            &clock,
            1,
            r#"{"reason":"meh","functions":[{"name":"do_nothing","arguments":{}}]}"#,
            &ActionSet::full(),
        );
        assert_eq!(r[0].detail, Detail::Nothing);
        let after = s.row_counts();
        for (b, a) in before.iter().zip(&after) {
            let expected = if b.0 == "trace" { b.1 + 1 } else { b.1 };
            assert_eq!(a.1, expected, "{}", a.0);
        }
    }

    #[test]
    fn rejection_tags() {
        let (mut s, clock) = setup();
        let full = ActionSet::full();
        let cases = [
            (
                r#"{"reason":"","functions":[{"name":"like_post","arguments":{"post_id":99}}]}"#,
                RejectTag::AbsentTarget,
            ),
            (
                r#"{"reason":"","functions":[{"name":"like_post","arguments":{}}]}"#,
                RejectTag::BadArguments,
            ),
            (
                r#"{"reason":"","functions":[{"name":"like","arguments":{"post_id":1}}]}"#,
                RejectTag::UnknownAction,
            ),
            (
                r#"{"reason":"","functions":[{"name":"follow","arguments":{"followee_id":1}}]}"#,
                RejectTag::BadArguments,
            ),
            (
                r#"{"reason":"","functions":[{"name":"unfollow","arguments":{"followee_id":2}}]}"#,
                RejectTag::AbsentTarget,
            ),
        ];
        for (wire, tag) in cases {
            let r = run(&mut s, &clock, 1, wire, &full);
            assert_eq!(r[0].detail, Detail::Rejected(tag), "{wire}");
        }
        run(
            &mut s,
            &clock,
            2,
            r#"{"reason":"","functions":[{"name":"like_post","arguments":{"post_id":"1"}}]}"#,
            &full,
        );
        let r = run(
            &mut s,
            &clock,
            2,
            r#"{"reason":"","functions":[{"name":"like_post","arguments":{"post_id":1}}]}"#,
            &full,
        );
        assert_eq!(r[0].detail, Detail::Rejected(RejectTag::DuplicateEdge));
        assert_eq!(s.post(1).unwrap().num_likes, 1);
    }

    #[test]
    fn calls_outside_subset_are_rejected() {
        let (mut s, clock) = setup();
        let wire = r#"{"reason":"","functions":[{"name":"create_post","arguments":{"content":"x"}},{"name":"do_nothing","arguments":{}}]}"#;
        let r = run(&mut s, &clock, 1, wire, &ActionSet::information_spreading());
        assert_eq!(r[0].detail, Detail::Rejected(RejectTag::NotPermitted));
        assert!(r[1].ok);
    }

    #[test]
    fn read_actions() {
        let (mut s, clock) = setup();
        let full = ActionSet::full();
        let r = run(
            &mut s,
            &clock,
            2,
            r#"{"reason":"","functions":[{"name":"search_posts","arguments":{"query":"CATS"}},{"name":"search_user","arguments":{"query":"dog"}},{"name":"trend","arguments":{}},{"name":"refresh","arguments":{}}]}"#,
            &full,
        );
        assert_eq!(r[0].detail, Detail::Posts(vec![1]));
        assert_eq!(r[1].detail, Detail::Users(vec![2]));
        assert_eq!(r[2].detail, Detail::Posts(vec![]));
        assert_eq!(r[3].detail, Detail::Posts(vec![]));
    }

    #[test]
    fn parse_failure_is_traced_as_do_nothing() {
        let (mut s, clock) = setup();
        run(&mut s, &clock, 1, "garbage", &ActionSet::full());
        let last = s.trace().last().unwrap();
        assert_eq!(last.action, "do_nothing");
        assert_eq!(last.info_json()["fallback"], "parse_failure");
    }

    #[test]
    fn wire_roundtrip() {
        let env = ActionEnvelope {
            reason: "r".into(),
            calls: vec![ActionCall::new(
                ActionKind::Follow,
                json!({"followee_id": 2}),
            )],
            fallback: None,
        };
        assert_eq!(parse_action_envelope(&env.to_wire()), env);
    }
}
