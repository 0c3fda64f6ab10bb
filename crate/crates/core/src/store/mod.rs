//! The environment store: every user, post, comment, relation, trace row and
//! recommendation cache entry of a run.
//!
//! The store is a single-writer in-memory relational model with eleven
//! tables. Vote and follow counters are denormalized onto their rows and
//! updated together with the edge that changes them, so ranking code can read
//! them in O(1). Each successful mutation appends exactly one trace row;
//! callers that reject an action record it with [`Store::record_rejection`].
//!
//! A file-backed store keeps its tables as JSONL files in a directory and
//! reloads them on open.

mod table;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::time::SimTime;

pub use table::{ExportFormat, TABLE_NAMES};

pub type UserId = u64;
pub type PostId = u64;
pub type CommentId = u64;
pub type EdgeId = u64;

/// Store handle shared between the single writer and any number of readers.
pub type SharedStore = Arc<RwLock<Store>>;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cannot open store at {path}: {reason}")]
    Open { path: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("user name {0:?} is already taken")]
    DuplicateUserName(String),
    #[error("user {0} does not exist")]
    UnknownUser(UserId),
    #[error("post {0} does not exist")]
    UnknownPost(PostId),
    #[error("comment {0} does not exist")]
    UnknownComment(CommentId),
    #[error("{kind} edge {source_id} -> {target_id} already exists")]
    DuplicateEdge {
        kind: EdgeKind,
        source_id: u64,
        target_id: u64,
    },
    #[error("{kind} edge {source_id} -> {target_id} does not exist")]
    AbsentEdge {
        kind: EdgeKind,
        source_id: u64,
        target_id: u64,
    },
    #[error("{kind} edge from user {user} to itself")]
    SelfEdge { kind: EdgeKind, user: UserId },
    #[error("user {user} already reposted into the cascade of post {root}")]
    AlreadyReposted { user: UserId, root: PostId },
    #[error("unknown view {0:?}")]
    UnknownView(String),
    #[error("view {view} needs parameter {param}")]
    MissingParam {
        view: &'static str,
        param: &'static str,
    },
    #[error("import of table {table} failed: {reason}")]
    Import { table: String, reason: String },
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backing {
    #[default]
    Memory,
    File,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub backing: Backing,
    pub path: Option<PathBuf>,
    pub seed: u64,
}

impl StoreConfig {
    pub fn memory(seed: u64) -> Self {
        StoreConfig {
            backing: Backing::Memory,
            path: None,
            seed,
        }
    }

    pub fn file(path: impl Into<PathBuf>, seed: u64) -> Self {
        StoreConfig {
            backing: Backing::File,
            path: Some(path.into()),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: UserId,
    pub agent_id: i64,
    pub user_name: String,
    pub name: String,
    pub bio: String,
    pub created_at: SimTime,
    pub num_followings: u64,
    pub num_followers: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: PostId,
    pub user_id: UserId,
    pub content: String,
    pub created_at: SimTime,
    pub num_likes: u64,
    pub num_dislikes: u64,
    /// Set on reposts: the post that was reposted.
    pub original_post_id: Option<PostId>,
}

impl PostRecord {
    /// Net score, likes minus dislikes.
    pub fn score(&self) -> i64 {
        self.num_likes as i64 - self.num_dislikes as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub comment_id: CommentId,
    pub post_id: PostId,
    pub user_id: UserId,
    pub content: String,
    pub created_at: SimTime,
    pub num_likes: u64,
    pub num_dislikes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Follow,
    Mute,
    LikePost,
    DislikePost,
    LikeComment,
    DislikeComment,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 6] = [
        EdgeKind::Follow,
        EdgeKind::Mute,
        EdgeKind::LikePost,
        EdgeKind::DislikePost,
        EdgeKind::LikeComment,
        EdgeKind::DislikeComment,
    ];

    fn index(self) -> usize {
        self as usize
    }

    /// Trace action recorded when the edge is created.
    pub fn add_action(self) -> &'static str {
        match self {
            EdgeKind::Follow => "follow",
            EdgeKind::Mute => "mute",
            EdgeKind::LikePost => "like_post",
            EdgeKind::DislikePost => "dislike_post",
            EdgeKind::LikeComment => "like_comment",
            EdgeKind::DislikeComment => "dislike_comment",
        }
    }

    /// Trace action recorded when the edge is removed.
    pub fn remove_action(self) -> &'static str {
        match self {
            EdgeKind::Follow => "unfollow",
            EdgeKind::Mute => "unmute",
            EdgeKind::LikePost => "unlike_post",
            EdgeKind::DislikePost => "undo_dislike_post",
            EdgeKind::LikeComment => "unlike_comment",
            EdgeKind::DislikeComment => "undo_dislike_comment",
        }
    }

    /// Argument name of the target in the action protocol.
    pub fn target_arg(self) -> &'static str {
        match self {
            EdgeKind::Follow => "followee_id",
            EdgeKind::Mute => "mutee_id",
            EdgeKind::LikePost | EdgeKind::DislikePost => "post_id",
            EdgeKind::LikeComment | EdgeKind::DislikeComment => "comment_id",
        }
    }

    pub fn table(self) -> &'static str {
        match self {
            EdgeKind::Follow => "follow",
            EdgeKind::Mute => "mute",
            EdgeKind::LikePost => "like",
            EdgeKind::DislikePost => "dislike",
            EdgeKind::LikeComment => "comment_like",
            EdgeKind::DislikeComment => "comment_dislike",
        }
    }
}

impl std::fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.add_action())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub edge_id: EdgeId,
    pub kind: EdgeKind,
    pub source_id: u64,
    pub target_id: u64,
    pub created_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Insertion sequence; ties on `created_at` are ordered by it.
    pub seq: u64,
    pub user_id: UserId,
    pub created_at: SimTime,
    pub action: String,
    /// JSON object with the action's arguments and outcome.
    pub info: String,
}

impl TraceEntry {
    pub fn info_json(&self) -> Value {
        serde_json::from_str(&self.info).unwrap_or(Value::Null)
    }

    pub fn is_rejection(&self) -> bool {
        self.info_json().get("error").is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecCacheEntry {
    pub user_id: UserId,
    pub post_id: PostId,
}

/// Profile fields supplied at registration.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NewUser {
    pub user_name: String,
    pub name: String,
    pub bio: String,
}

impl NewUser {
    pub fn new(
        user_name: impl Into<String>,
        name: impl Into<String>,
        bio: impl Into<String>,
    ) -> Self {
        NewUser {
            user_name: user_name.into(),
            name: name.into(),
            bio: bio.into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct EdgeTable {
    rows: BTreeMap<EdgeId, RelationEdge>,
    index: HashMap<(u64, u64), EdgeId>,
    next_id: EdgeId,
}

impl EdgeTable {
    fn contains(&self, source: u64, target: u64) -> bool {
        self.index.contains_key(&(source, target))
    }
}

/// Materialized recommendation table.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum RecCache {
    #[default]
    Empty,
    /// One list shared by every user.
    Global(Vec<PostId>),
    PerUser(BTreeMap<UserId, Vec<PostId>>),
}

impl RecCache {
    pub fn for_user(&self, user: UserId) -> &[PostId] {
        match self {
            RecCache::Empty => &[],
            RecCache::Global(ids) => ids,
            RecCache::PerUser(map) => map.get(&user).map(Vec::as_slice).unwrap_or(&[]),
        }
    }
}

/// Read-only views served by [`Store::query`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    UserById,
    PostsByAuthor,
    FeedFromCache,
    FolloweesOf,
    TraceOf,
    AllPostsSince,
    CommentsOfPost,
}

impl FromStr for View {
    type Err = StoreError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "user_by_id" => View::UserById,
            "posts_by_author" => View::PostsByAuthor,
            "feed_from_cache" => View::FeedFromCache,
            "followees_of" => View::FolloweesOf,
            "trace_of" => View::TraceOf,
            "all_posts_since" => View::AllPostsSince,
            "comments_of_post" => View::CommentsOfPost,
            other => return Err(StoreError::UnknownView(other.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct QueryParams {
    pub id: Option<u64>,
    pub since: Option<SimTime>,
}

impl QueryParams {
    pub fn id(id: u64) -> Self {
        QueryParams {
            id: Some(id),
            since: None,
        }
    }

    pub fn since(t: SimTime) -> Self {
        QueryParams {
            id: None,
            since: Some(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rows {
    Users(Vec<UserRecord>),
    Posts(Vec<PostRecord>),
    Comments(Vec<CommentRecord>),
    Trace(Vec<TraceEntry>),
}

impl Rows {
    pub fn len(&self) -> usize {
        match self {
            Rows::Users(v) => v.len(),
            Rows::Posts(v) => v.len(),
            Rows::Comments(v) => v.len(),
            Rows::Trace(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default)]
pub struct Store {
    config: StoreConfig,
    users: Vec<UserRecord>,
    user_names: HashMap<String, UserId>,
    posts: Vec<PostRecord>,
    posts_by_author: HashMap<UserId, Vec<PostId>>,
    comments: Vec<CommentRecord>,
    comments_by_post: HashMap<PostId, Vec<CommentId>>,
    edges: [EdgeTable; 6],
    followees: HashMap<UserId, Vec<UserId>>,
    cascade_root: HashMap<PostId, PostId>,
    reposted: HashSet<(UserId, PostId)>,
    trace: Vec<TraceEntry>,
    rec: RecCache,
}

impl Store {
    /// Opens an empty in-memory store, or loads/creates a file-backed one.
    pub fn open(config: StoreConfig) -> Result<Store> {
        match config.backing {
            Backing::Memory => Ok(Store {
                config,
                ..Default::default()
            }),
            Backing::File => {
                let path = config.path.clone().ok_or_else(|| StoreError::Open {
                    path: String::new(),
                    reason: "file-backed store needs a path".into(),
                })?;
                let open_err = |reason: String| StoreError::Open {
                    path: path.display().to_string(),
                    reason,
                };
                std::fs::create_dir_all(&path).map_err(|e| open_err(e.to_string()))?;
                let probe = path.join(".write-probe");
                std::fs::write(&probe, b"").map_err(|e| open_err(e.to_string()))?;
                let _ = std::fs::remove_file(&probe);
                let mut store = if path.join("user.jsonl").exists() {
                    table::import_dir(&path, ExportFormat::Jsonl)?
                } else {
                    let s = Store::default();
                    table::export_dir(&s, &path, ExportFormat::Jsonl)?;
                    s
                };
                store.config = config;
                Ok(store)
            }
        }
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn shared(self) -> SharedStore {
        Arc::new(RwLock::new(self))
    }

    /// Writes a file-backed store's tables to its directory. No-op in memory.
    pub fn flush(&self) -> Result<()> {
        if let (Backing::File, Some(path)) = (self.config.backing, &self.config.path) {
            table::export_dir(self, path, ExportFormat::Jsonl)?;
        }
        Ok(())
    }

    pub fn close(self) -> Result<()> {
        self.flush()
    }

    /// Writes one file per table into `dir`.
    pub fn export_tables(&self, format: ExportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
        table::export_dir(self, dir, format)
    }

    /// Rebuilds a store from files written by [`Store::export_tables`].
    pub fn import_tables(format: ExportFormat, dir: &Path, config: StoreConfig) -> Result<Store> {
        let mut s = table::import_dir(dir, format)?;
        s.config = config;
        Ok(s)
    }

    /// Row count per table, in [`TABLE_NAMES`] order.
    pub fn row_counts(&self) -> Vec<(&'static str, usize)> {
        TABLE_NAMES
            .iter()
            .map(|&name| {
                let n = match name {
                    "user" => self.users.len(),
                    "post" => self.posts.len(),
                    "comment" => self.comments.len(),
                    "trace" => self.trace.len(),
                    "rec" => self.rec_rows().len(),
                    edge => {
                        let kind = EdgeKind::ALL.iter().find(|k| k.table() == edge).unwrap();
                        self.edges[kind.index()].rows.len()
                    }
                };
                (name, n)
            })
            .collect()
    }

    // ---- reads ----

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn posts(&self) -> &[PostRecord] {
        &self.posts
    }

    pub fn comments(&self) -> &[CommentRecord] {
        &self.comments
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn user(&self, id: UserId) -> Option<&UserRecord> {
        id.checked_sub(1).and_then(|i| self.users.get(i as usize))
    }

    pub fn user_by_name(&self, name: &str) -> Option<&UserRecord> {
        self.user_names.get(name).and_then(|&id| self.user(id))
    }

    pub fn post(&self, id: PostId) -> Option<&PostRecord> {
        id.checked_sub(1).and_then(|i| self.posts.get(i as usize))
    }

    pub fn comment(&self, id: CommentId) -> Option<&CommentRecord> {
        id.checked_sub(1)
            .and_then(|i| self.comments.get(i as usize))
    }

    pub fn posts_of(&self, user: UserId) -> &[PostId] {
        self.posts_by_author
            .get(&user)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn comments_on(&self, post: PostId) -> &[CommentId] {
        self.comments_by_post
            .get(&post)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Users followed by `user`, in follow order.
    pub fn followees(&self, user: UserId) -> &[UserId] {
        self.followees.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_edge(&self, kind: EdgeKind, source: u64, target: u64) -> bool {
        self.edges[kind.index()].contains(source, target)
    }

    pub fn edges(&self, kind: EdgeKind) -> impl Iterator<Item = &RelationEdge> {
        self.edges[kind.index()].rows.values()
    }

    pub fn edge_count(&self, kind: EdgeKind) -> usize {
        self.edges[kind.index()].rows.len()
    }

    /// Root of the repost cascade `post` belongs to (itself for originals).
    pub fn cascade_root(&self, post: PostId) -> PostId {
        self.cascade_root.get(&post).copied().unwrap_or(post)
    }

    pub fn rec_cache(&self) -> &RecCache {
        &self.rec
    }

    /// Rec table rows as stored: user-major, cache order within a user.
    pub fn rec_rows(&self) -> Vec<RecCacheEntry> {
        let mut rows = Vec::new();
        match &self.rec {
            RecCache::Empty => {}
            RecCache::Global(ids) => {
                for u in &self.users {
                    rows.extend(ids.iter().map(|&p| RecCacheEntry {
                        user_id: u.user_id,
                        post_id: p,
                    }));
                }
            }
            RecCache::PerUser(map) => {
                for (&u, ids) in map {
                    rows.extend(ids.iter().map(|&p| RecCacheEntry {
                        user_id: u,
                        post_id: p,
                    }));
                }
            }
        }
        rows
    }

    pub fn query(&self, view: View, params: QueryParams) -> Result<Rows> {
        let need_id = |name: &'static str| {
            params.id.ok_or(StoreError::MissingParam {
                view: name,
                param: "id",
            })
        };
        Ok(match view {
            View::UserById => Rows::Users(
                self.user(need_id("user_by_id")?)
                    .cloned()
                    .into_iter()
                    .collect(),
            ),
            View::PostsByAuthor => {
                let u = need_id("posts_by_author")?;
                Rows::Posts(
                    self.posts_of(u)
                        .iter()
                        .map(|&p| self.posts[p as usize - 1].clone())
                        .collect(),
                )
            }
            View::FeedFromCache => {
                let u = need_id("feed_from_cache")?;
                Rows::Posts(
                    self.rec
                        .for_user(u)
                        .iter()
                        .filter_map(|&p| self.post(p).cloned())
                        .collect(),
                )
            }
            View::FolloweesOf => {
                let u = need_id("followees_of")?;
                Rows::Users(
                    self.followees(u)
                        .iter()
                        .filter_map(|&f| self.user(f).cloned())
                        .collect(),
                )
            }
            View::TraceOf => {
                let u = need_id("trace_of")?;
                let mut rows: Vec<_> = self
                    .trace
                    .iter()
                    .filter(|t| t.user_id == u)
                    .cloned()
                    .collect();
                rows.sort_by(|a, b| {
                    a.created_at
                        .0
                        .total_cmp(&b.created_at.0)
                        .then(a.seq.cmp(&b.seq))
                });
                Rows::Trace(rows)
            }
            View::AllPostsSince => {
                let since = params.since.ok_or(StoreError::MissingParam {
                    view: "all_posts_since",
                    param: "since",
                })?;
                Rows::Posts(
                    self.posts
                        .iter()
                        .filter(|p| p.created_at >= since)
                        .cloned()
                        .collect(),
                )
            }
            View::CommentsOfPost => {
                let p = need_id("comments_of_post")?;
                Rows::Comments(
                    self.comments_on(p)
                        .iter()
                        .map(|&c| self.comments[c as usize - 1].clone())
                        .collect(),
                )
            }
        })
    }

    /// Same as [`Store::query`] with the view given by name.
    pub fn query_named(&self, view: &str, params: QueryParams) -> Result<Rows> {
        self.query(view.parse()?, params)
    }

    // ---- writes ----

    fn push_trace(&mut self, user_id: UserId, now: SimTime, action: &str, info: Value) {
        let seq = self.trace.len() as u64;
        self.trace.push(TraceEntry {
            seq,
            user_id,
            created_at: now,
            action: action.to_string(),
            info: info.to_string(),
        });
    }

    fn require_user(&self, id: UserId) -> Result<()> {
        self.user(id).map(|_| ()).ok_or(StoreError::UnknownUser(id))
    }

    pub fn register_user(
        &mut self,
        profile: NewUser,
        agent_id: i64,
        now: SimTime,
    ) -> Result<UserId> {
        if self.user_names.contains_key(&profile.user_name) {
            return Err(StoreError::DuplicateUserName(profile.user_name));
        }
        let user_id = self.users.len() as UserId + 1;
        self.user_names.insert(profile.user_name.clone(), user_id);
        let info =
            json!({"name": profile.name, "user_name": profile.user_name, "bio": profile.bio});
        self.users.push(UserRecord {
            user_id,
            agent_id,
            user_name: profile.user_name,
            name: profile.name,
            bio: profile.bio,
            created_at: now,
            num_followings: 0,
            num_followers: 0,
        });
        self.push_trace(user_id, now, "sign_up", info);
        Ok(user_id)
    }

    fn push_post(
        &mut self,
        user_id: UserId,
        content: String,
        now: SimTime,
        original: Option<PostId>,
    ) -> PostId {
        let post_id = self.posts.len() as PostId + 1;
        self.posts.push(PostRecord {
            post_id,
            user_id,
            content,
            created_at: now,
            num_likes: 0,
            num_dislikes: 0,
            original_post_id: original,
        });
        self.posts_by_author
            .entry(user_id)
            .or_default()
            .push(post_id);
        post_id
    }

    pub fn insert_post(&mut self, user_id: UserId, content: &str, now: SimTime) -> Result<PostId> {
        self.require_user(user_id)?;
        let id = self.push_post(user_id, content.to_string(), now, None);
        self.push_trace(
            user_id,
            now,
            "create_post",
            json!({"content": content, "post_id": id}),
        );
        Ok(id)
    }

    /// Reposts `original`. A user joins each repost cascade at most once, and
    /// the cascade's root author is already part of it.
    pub fn insert_repost(
        &mut self,
        user_id: UserId,
        original: PostId,
        now: SimTime,
    ) -> Result<PostId> {
        self.require_user(user_id)?;
        let orig = self
            .post(original)
            .ok_or(StoreError::UnknownPost(original))?;
        let content = orig.content.clone();
        let root = self.cascade_root(original);
        let root_author = self.posts[root as usize - 1].user_id;
        if root_author == user_id || self.reposted.contains(&(user_id, root)) {
            return Err(StoreError::AlreadyReposted {
                user: user_id,
                root,
            });
        }
        let id = self.push_post(user_id, content, now, Some(original));
        self.cascade_root.insert(id, root);
        self.reposted.insert((user_id, root));
        self.push_trace(
            user_id,
            now,
            "repost",
            json!({"post_id": original, "new_post_id": id, "root_post_id": root}),
        );
        Ok(id)
    }

    pub fn insert_comment(
        &mut self,
        user_id: UserId,
        post_id: PostId,
        content: &str,
        now: SimTime,
    ) -> Result<CommentId> {
        self.require_user(user_id)?;
        if self.post(post_id).is_none() {
            return Err(StoreError::UnknownPost(post_id));
        }
        let comment_id = self.comments.len() as CommentId + 1;
        self.comments.push(CommentRecord {
            comment_id,
            post_id,
            user_id,
            content: content.to_string(),
            created_at: now,
            num_likes: 0,
            num_dislikes: 0,
        });
        self.comments_by_post
            .entry(post_id)
            .or_default()
            .push(comment_id);
        self.push_trace(
            user_id,
            now,
            "create_comment",
            json!({"post_id": post_id, "content": content, "comment_id": comment_id}),
        );
        Ok(comment_id)
    }

    fn check_edge_endpoints(&self, kind: EdgeKind, source: u64, target: u64) -> Result<()> {
        self.require_user(source)?;
        match kind {
            EdgeKind::Follow | EdgeKind::Mute => {
                self.require_user(target)?;
                if source == target {
                    return Err(StoreError::SelfEdge { kind, user: source });
                }
            }
            EdgeKind::LikePost | EdgeKind::DislikePost => {
                self.post(target).ok_or(StoreError::UnknownPost(target))?;
            }
            EdgeKind::LikeComment | EdgeKind::DislikeComment => {
                self.comment(target)
                    .ok_or(StoreError::UnknownComment(target))?;
            }
        }
        Ok(())
    }

    fn bump(&mut self, kind: EdgeKind, source: u64, target: u64, up: bool) {
        fn adj(c: &mut u64, up: bool) {
            if up {
                *c += 1
            } else {
                *c -= 1
            }
        }
        match kind {
            EdgeKind::Follow => {
                adj(&mut self.users[source as usize - 1].num_followings, up);
                adj(&mut self.users[target as usize - 1].num_followers, up);
                let list = self.followees.entry(source).or_default();
                if up {
                    list.push(target);
                } else {
                    list.retain(|&f| f != target);
                }
            }
            EdgeKind::Mute => {}
            EdgeKind::LikePost => adj(&mut self.posts[target as usize - 1].num_likes, up),
            EdgeKind::DislikePost => adj(&mut self.posts[target as usize - 1].num_dislikes, up),
            EdgeKind::LikeComment => adj(&mut self.comments[target as usize - 1].num_likes, up),
            EdgeKind::DislikeComment => {
                adj(&mut self.comments[target as usize - 1].num_dislikes, up)
            }
        }
    }

    /// Creates the edge and adjusts the counters it feeds.
    pub fn upsert_edge(
        &mut self,
        kind: EdgeKind,
        source: u64,
        target: u64,
        now: SimTime,
    ) -> Result<EdgeId> {
        self.check_edge_endpoints(kind, source, target)?;
        let table = &mut self.edges[kind.index()];
        if table.contains(source, target) {
            return Err(StoreError::DuplicateEdge {
                kind,
                source_id: source,
                target_id: target,
            });
        }
        table.next_id += 1;
        let edge_id = table.next_id;
        table.index.insert((source, target), edge_id);
        table.rows.insert(
            edge_id,
            RelationEdge {
                edge_id,
                kind,
                source_id: source,
                target_id: target,
                created_at: now,
            },
        );
        self.bump(kind, source, target, true);
        self.push_trace(
            source,
            now,
            kind.add_action(),
            json!({ kind.target_arg(): target }),
        );
        Ok(edge_id)
    }

    /// Deletes the edge and reverts its counters. Returns the removed edge id.
    pub fn remove_edge(
        &mut self,
        kind: EdgeKind,
        source: u64,
        target: u64,
        now: SimTime,
    ) -> Result<EdgeId> {
        let table = &mut self.edges[kind.index()];
        let Some(edge_id) = table.index.remove(&(source, target)) else {
            return Err(StoreError::AbsentEdge {
                kind,
                source_id: source,
                target_id: target,
            });
        };
        table.rows.remove(&edge_id);
        self.bump(kind, source, target, false);
        self.push_trace(
            source,
            now,
            kind.remove_action(),
            json!({ kind.target_arg(): target }),
        );
        Ok(edge_id)
    }

    /// Traces an action that reads but does not mutate (refresh, search, ...).
    pub fn record(&mut self, user_id: UserId, action: &str, info: Value, now: SimTime) {
        self.push_trace(user_id, now, action, info);
    }

    /// Traces a rejected action with its error tag.
    pub fn record_rejection(
        &mut self,
        user_id: UserId,
        action: &str,
        mut info: Value,
        tag: &str,
        now: SimTime,
    ) {
        if !info.is_object() {
            info = json!({ "raw": info });
        }
        info["error"] = Value::String(tag.to_string());
        self.push_trace(user_id, now, action, info);
    }

    /// Replaces the whole rec table.
    pub fn replace_rec_cache(&mut self, cache: RecCache) {
        self.rec = cache;
    }

    /// Recounts every counter from the edge tables and checks referential
    /// integrity. Returns a description of the first violation found.
    pub fn verify_integrity(&self) -> std::result::Result<(), String> {
        let mut likes = vec![0u64; self.posts.len()];
        let mut dislikes = vec![0u64; self.posts.len()];
        let mut clikes = vec![0u64; self.comments.len()];
        let mut cdislikes = vec![0u64; self.comments.len()];
        let mut followings = vec![0u64; self.users.len()];
        let mut followers = vec![0u64; self.users.len()];
        let nu = self.users.len() as u64;
        let np = self.posts.len() as u64;
        let nc = self.comments.len() as u64;
        for kind in EdgeKind::ALL {
            let t = &self.edges[kind.index()];
            if t.rows.len() != t.index.len() {
                return Err(format!("{kind}: index size mismatch"));
            }
            for e in t.rows.values() {
                if e.source_id == 0 || e.source_id > nu {
                    return Err(format!("{kind} edge {} has missing source", e.edge_id));
                }
                let (limit, counter): (u64, Option<&mut Vec<u64>>) = match kind {
                    EdgeKind::Follow => (nu, Some(&mut followers)),
                    EdgeKind::Mute => (nu, None),
                    EdgeKind::LikePost => (np, Some(&mut likes)),
                    EdgeKind::DislikePost => (np, Some(&mut dislikes)),
                    EdgeKind::LikeComment => (nc, Some(&mut clikes)),
                    EdgeKind::DislikeComment => (nc, Some(&mut cdislikes)),
                };
                if e.target_id == 0 || e.target_id > limit {
                    return Err(format!("{kind} edge {} has missing target", e.edge_id));
                }
                if matches!(kind, EdgeKind::Follow | EdgeKind::Mute) && e.source_id == e.target_id {
                    return Err(format!("{kind} edge {} is a self edge", e.edge_id));
                }
                if let Some(c) = counter {
                    c[e.target_id as usize - 1] += 1;
                }
                if kind == EdgeKind::Follow {
                    followings[e.source_id as usize - 1] += 1;
                }
            }
        }
        for (i, u) in self.users.iter().enumerate() {
            if u.num_followers != followers[i] || u.num_followings != followings[i] {
                return Err(format!("user {} follow counters out of sync", u.user_id));
            }
            if self.followees(u.user_id).len() as u64 != u.num_followings {
                return Err(format!("user {} followee index out of sync", u.user_id));
            }
        }
        for (i, p) in self.posts.iter().enumerate() {
            if p.num_likes != likes[i] || p.num_dislikes != dislikes[i] {
                return Err(format!("post {} vote counters out of sync", p.post_id));
            }
            if p.user_id == 0 || p.user_id > nu {
                return Err(format!("post {} has missing author", p.post_id));
            }
            if let Some(o) = p.original_post_id {
                if o == 0 || o >= p.post_id {
                    return Err(format!("post {} reposts a missing post", p.post_id));
                }
            }
        }
        for (i, c) in self.comments.iter().enumerate() {
            if c.num_likes != clikes[i] || c.num_dislikes != cdislikes[i] {
                return Err(format!(
                    "comment {} vote counters out of sync",
                    c.comment_id
                ));
            }
            if c.post_id == 0 || c.post_id > np {
                return Err(format!("comment {} has missing parent", c.comment_id));
            }
        }
        for r in self.rec_rows() {
            if r.post_id == 0 || r.post_id > np {
                return Err(format!("rec row references missing post {}", r.post_id));
            }
        }
        Ok(())
    }

    /// Rebuilds derived indexes after a bulk load.
    fn reindex(&mut self) {
        self.user_names = self
            .users
            .iter()
            .map(|u| (u.user_name.clone(), u.user_id))
            .collect();
        self.posts_by_author.clear();
        self.cascade_root.clear();
        self.reposted.clear();
        for i in 0..self.posts.len() {
            let (pid, uid, orig) = (
                self.posts[i].post_id,
                self.posts[i].user_id,
                self.posts[i].original_post_id,
            );
            self.posts_by_author.entry(uid).or_default().push(pid);
            if let Some(o) = orig {
                let root = self.cascade_root(o);
                self.cascade_root.insert(pid, root);
                self.reposted.insert((uid, root));
            }
        }
        self.comments_by_post.clear();
        for c in &self.comments {
            self.comments_by_post
                .entry(c.post_id)
                .or_default()
                .push(c.comment_id);
        }
        self.followees.clear();
        for e in self.edges[EdgeKind::Follow.index()].rows.values() {
            self.followees
                .entry(e.source_id)
                .or_default()
                .push(e.target_id);
        }
        for t in self.edges.iter_mut() {
            t.index = t
                .rows
                .values()
                .map(|e| ((e.source_id, e.target_id), e.edge_id))
                .collect();
            t.next_id = t
                .next_id
                .max(t.rows.keys().next_back().copied().unwrap_or(0));
        }
    }
}
