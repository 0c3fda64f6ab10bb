//! Measures computed from finished (or running) simulations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::rng::{stream, Purpose};
use crate::store::{EdgeKind, PostId, PostRecord, Store, StoreError, UserId};
use crate::time::SimTime;

pub const DISAGREE_PROMPT: &str = include_str!("../assets/disagree_judge.txt");
pub const POLARIZATION_PROMPT: &str = include_str!("../assets/polarization_judge.txt");
pub const HELPFULNESS_PROMPT: &str = include_str!("../assets/helpfulness_judge.txt");

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series are empty")]
    Empty,
    #[error("the reference series ends at 0, so the error cannot be normalized")]
    ZeroNormalizer,
    #[error("threshold {0} is outside (0, 1)")]
    Threshold(f64),
    #[error("unknown post {0}")]
    UnknownPost(PostId),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub user_id: UserId,
    pub post_id: PostId,
    /// Index of the parent node; `None` for the root.
    pub parent: Option<usize>,
    pub time: SimTime,
}

/// A repost cascade. Node 0 is the root post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationTree {
    pub root: PostId,
    pub nodes: Vec<TreeNode>,
}

impl PropagationTree {
    /// Builds a tree from `(post, parent post, user, time)` rows given in
    /// time order.
    pub fn from_reposts(
        root: TreeNode,
        reposts: impl IntoIterator<Item = (PostId, PostId, UserId, SimTime)>,
    ) -> Self {
        let mut index: HashMap<PostId, usize> = HashMap::from([(root.post_id, 0)]);
        let mut nodes = vec![TreeNode {
            parent: None,
            ..root
        }];
        for (post_id, parent_post, user_id, time) in reposts {
            let Some(&parent) = index.get(&parent_post) else {
                continue;
            };
            index.insert(post_id, nodes.len());
            nodes.push(TreeNode {
                user_id,
                post_id,
                parent: Some(parent),
                time,
            });
        }
        PropagationTree {
            root: root.post_id,
            nodes,
        }
    }

    pub fn depths(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                d[i] = d[p] + 1;
            }
        }
        d
    }
}

/// Replays the trace to rebuild the cascade of `root_post`.
pub fn build_propagation_tree(
    store: &Store,
    root_post: PostId,
) -> Result<PropagationTree, AnalyticsError> {
    let root_id = store.cascade_root(root_post);
    let root = store
        .post(root_id)
        .ok_or(AnalyticsError::UnknownPost(root_post))?;
    let reposts = store
        .trace()
        .iter()
        .filter(|t| t.action == "repost" && !t.is_rejection())
        .filter_map(|t| {
            let info = t.info_json();
            let field = |k: &str| info.get(k).and_then(Value::as_u64);
            (field("root_post_id")? == root_id).then_some((
                field("new_post_id")?,
                field("post_id")?,
                t.user_id,
                t.created_at,
            ))
        });
    Ok(PropagationTree::from_reposts(
        TreeNode {
            user_id: root.user_id,
            post_id: root.post_id,
            parent: None,
            time: root.created_at,
        },
        reposts,
    ))
}

/// Per-minute cascade measures, index = minutes since the root post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub scale: Vec<u64>,
    pub depth: Vec<u64>,
    pub max_breadth: Vec<u64>,
}

/// Minute `m` covers nodes with `floor(minutes since root) <= m`. Scale
/// counts distinct users; depth and breadth count nodes.
pub fn metric_series(tree: &PropagationTree, horizon_minutes: usize) -> MetricSeries {
    let depths = tree.depths();
    let root_time = tree.nodes[0].time;
    let mut order: Vec<(u64, usize)> = tree
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| ((n.time.minutes_since(root_time).max(0.0)).floor() as u64, i))
        .collect();
    order.sort_unstable();
    let mut per_depth = vec![0u64; depths.iter().max().map_or(1, |d| d + 1)];
    let (mut depth, mut breadth) = (0u64, 0u64);
    let mut users = HashSet::new();
    let mut out = MetricSeries {
        scale: Vec::with_capacity(horizon_minutes + 1),
        depth: Vec::with_capacity(horizon_minutes + 1),
        max_breadth: Vec::with_capacity(horizon_minutes + 1),
    };
    let mut next = 0;
    for m in 0..=horizon_minutes as u64 {
        while next < order.len() && order[next].0 <= m {
            let d = depths[order[next].1];
            users.insert(tree.nodes[order[next].1].user_id);
            depth = depth.max(d as u64);
            per_depth[d] += 1;
            breadth = breadth.max(per_depth[d]);
            next += 1;
        }
        out.scale.push(users.len() as u64);
        out.depth.push(depth);
        out.max_breadth.push(breadth);
    }
    out
}

fn check_pair(simu: &[f64], real: &[f64]) -> Result<f64, AnalyticsError> {
    if simu.len() != real.len() {
        return Err(AnalyticsError::LengthMismatch(simu.len(), real.len()));
    }
    let last = *real.last().ok_or(AnalyticsError::Empty)?;
    if last == 0.0 {
        return Err(AnalyticsError::ZeroNormalizer);
    }
    Ok(last)
}

/// Root mean squared error divided by the last value of `real`.
pub fn normalized_rmse(simu: &[f64], real: &[f64]) -> Result<f64, AnalyticsError> {
    let norm = check_pair(simu, real)?;
    let mse = simu
        .iter()
        .zip(real)
        .map(|(s, r)| (s - r).powi(2))
        .sum::<f64>()
        / simu.len() as f64;
    Ok(mse.sqrt() / norm)
}

/// `|simu_i - real_i|` divided by the last value of `real`.
pub fn per_minute_error(simu: &[f64], real: &[f64]) -> Result<Vec<f64>, AnalyticsError> {
    let norm = check_pair(simu, real)?;
    Ok(simu
        .iter()
        .zip(real)
        .map(|(s, r)| (s - r).abs() / norm)
        .collect())
}

pub fn write_series_csv<T: std::fmt::Display>(
    path: &Path,
    values: &[T],
) -> Result<(), AnalyticsError> {
    let mut out = String::from("minute,value\n");
    for (m, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{m},{v}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a `minute,value` CSV, e.g. a real cascade to compare against.
pub fn read_series_csv(path: &Path) -> Result<Vec<f64>, AnalyticsError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| std::io::Error::other(e.to_string()))?;
        let v = rec
            .get(1)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .ok_or_else(|| std::io::Error::other(format!("bad row {:?}", rec)))?;
        out.push(v);
    }
    Ok(out)
}

/// Likes minus dislikes.
pub fn post_score(post: &PostRecord) -> i64 {
    post.score()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    UpTreated,
    Control,
    DownTreated,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::UpTreated, Group::Control, Group::DownTreated];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentAssignment(pub BTreeMap<u64, Group>);

impl TreatmentAssignment {
    pub fn members(&self, group: Group) -> Vec<u64> {
        self.0
            .iter()
            .filter(|(_, g)| **g == group)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn sizes(&self) -> [usize; 3] {
        Group::ALL.map(|g| self.0.values().filter(|v| **v == g).count())
    }
}

/// Random thirds. Leftover items go to control first, then up-treated. The
/// result depends on the seed and the set of ids, not their order.
pub fn assign_treatments(items: &[u64], seed: u64) -> TreatmentAssignment {
    let mut ids = items.to_vec();
    ids.sort_unstable();
    ids.dedup();
    ids.shuffle(&mut stream(seed, 0, 0, Purpose::Treatment));
    let n = ids.len();
    let base = n / 3;
    let rem = n % 3;
    let control = base + usize::from(rem >= 1);
    let up = base + usize::from(rem >= 2);
    let mut map = BTreeMap::new();
    for (i, id) in ids.into_iter().enumerate() {
        let g = if i < up {
            Group::UpTreated
        } else if i < up + control {
            Group::Control
        } else {
            Group::DownTreated
        };
        map.insert(id, g);
    }
    TreatmentAssignment(map)
}

/// What the treated items are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Post,
    Comment,
}

/// Gives up-treated items one like and down-treated items one dislike from
/// `seeding_user`. The edges are traced like any other.
pub fn seed_treatments(
    store: &mut Store,
    assignment: &TreatmentAssignment,
    kind: ItemKind,
    seeding_user: UserId,
    now: SimTime,
) -> Result<(), AnalyticsError> {
    for (&id, &g) in &assignment.0 {
        let edge = match (g, kind) {
            (Group::Control, _) => continue,
            (Group::UpTreated, ItemKind::Post) => EdgeKind::LikePost,
            (Group::DownTreated, ItemKind::Post) => EdgeKind::DislikePost,
            (Group::UpTreated, ItemKind::Comment) => EdgeKind::LikeComment,
            (Group::DownTreated, ItemKind::Comment) => EdgeKind::DislikeComment,
        };
        store.upsert_edge(edge, seeding_user, id, now)?;
    }
    Ok(())
}

pub fn assign_and_seed_treatments(
    store: &mut Store,
    items: &[u64],
    kind: ItemKind,
    seed: u64,
    seeding_user: UserId,
    now: SimTime,
) -> Result<TreatmentAssignment, AnalyticsError> {
    let a = assign_treatments(items, seed);
    seed_treatments(store, &a, kind, seeding_user, now)?;
    Ok(a)
}

/// Mean with a 95% normal-approximation interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    /// `1.96 * s / sqrt(n)` with the sample standard deviation.
    pub half_width: f64,
}

pub fn mean_ci(values: &[f64]) -> Option<MeanCi> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let half_width = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * var.sqrt() / (n as f64).sqrt()
    };
    Some(MeanCi {
        n,
        mean,
        half_width,
    })
}

/// Post scores per treatment group.
pub fn group_post_scores(
    store: &Store,
    assignment: &TreatmentAssignment,
) -> BTreeMap<Group, Option<MeanCi>> {
    Group::ALL
        .into_iter()
        .map(|g| {
            let scores: Vec<f64> = assignment
                .members(g)
                .into_iter()
                .filter_map(|id| store.post(id))
                .map(|p| post_score(p) as f64)
                .collect();
            (g, mean_ci(&scores))
        })
        .collect()
}

/// Rates how strongly a comment rejects a post. Returns the raw judge text.
pub trait Judge {
    fn judge(&self, prompt: &str) -> Result<String, String>;
}

/// Judge backed by a function, for tests and offline use.
pub struct StubJudge<F: Fn(&str) -> String>(pub F);

impl<F: Fn(&str) -> String> Judge for StubJudge<F> {
    fn judge(&self, prompt: &str) -> Result<String, String> {
        Ok((self.0)(prompt))
    }
}

/// Judge service taking `{"prompt": ...}` and answering `{"score": n}`.
pub struct RemoteJudge {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteJudge {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(RemoteJudge {
            endpoint: endpoint.into(),
            client,
        })
    }
}

impl Judge for RemoteJudge {
    fn judge(&self, prompt: &str) -> Result<String, String> {
        self.client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "prompt": prompt }))
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(|e| e.to_string())
    }
}

pub fn disagree_prompt(post: &str, comment: &str) -> String {
    DISAGREE_PROMPT
        .replace("{post_content}", post)
        .replace("{comment_content}", comment)
}

/// Pulls an integer 1..=10 out of `{"score": n}`, tolerating text around it.
pub fn parse_judge_score(text: &str) -> Option<u8> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    let v: Value = serde_json::from_str(text.get(start..=end)?).ok()?;
    let s = v.get("score")?.as_i64()?;
    (1..=10).contains(&s).then_some(s as u8)
}

/// A comment to be judged, tagged with the step it was written in.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgedItem {
    pub step: u64,
    pub post: String,
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisagreeReport {
    pub per_step: BTreeMap<u64, MeanCi>,
    pub skipped: usize,
}

pub fn disagree_scores(judge: &dyn Judge, items: &[JudgedItem]) -> DisagreeReport {
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut skipped = 0;
    for item in items {
        let score = judge
            .judge(&disagree_prompt(&item.post, &item.comment))
            .ok()
            .and_then(|t| parse_judge_score(&t));
        match score {
            Some(s) => by_step.entry(item.step).or_default().push(s as f64),
            None => skipped += 1,
        }
    }
    DisagreeReport {
        per_step: by_step
            .into_iter()
            .filter_map(|(step, v)| mean_ci(&v).map(|ci| (step, ci)))
            .collect(),
        skipped,
    }
}

/// Lowercased runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sparse L2-normalized TF-IDF vector, sorted by term index.
pub type SparseVec = Vec<(u32, f64)>;

/// TF-IDF model over a fixed corpus.
#[derive(Debug, Clone)]
pub struct TfIdf {
    vocab: HashMap<String, u32>,
    idf: Vec<f64>,
    vectors: Vec<SparseVec>,
}

impl TfIdf {
    /// Raw term counts times `ln(N / df)`, L2-normalized per document.
    pub fn fit<S: AsRef<str>>(docs: &[S]) -> TfIdf {
        let mut vocab: HashMap<String, u32> = HashMap::new();
        let mut counts: Vec<BTreeMap<u32, f64>> = Vec::with_capacity(docs.len());
        let mut df: Vec<u64> = Vec::new();
        for d in docs {
            let mut tf = BTreeMap::new();
            for tok in tokenize(d.as_ref()) {
                let next = vocab.len() as u32;
                let id = *vocab.entry(tok).or_insert(next);
                if id as usize == df.len() {
                    df.push(0);
                }
                *tf.entry(id).or_insert(0.0) += 1.0;
            }
            for &id in tf.keys() {
                df[id as usize] += 1;
            }
            counts.push(tf);
        }
        let n = docs.len() as f64;
        let idf: Vec<f64> = df.iter().map(|&d| (n / d as f64).ln()).collect();
        let vectors = counts
            .into_iter()
            .map(|tf| {
                let mut v: SparseVec = tf
                    .into_iter()
                    .map(|(t, c)| (t, c * idf[t as usize]))
                    .filter(|(_, w)| *w != 0.0)
                    .collect();
                let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|(_, w)| *w /= norm);
                }
                v
            })
            .collect();
        TfIdf {
            vocab,
            idf,
            vectors,
        }
    }

    pub fn vector(&self, doc: usize) -> &SparseVec {
        &self.vectors[doc]
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocab.get(term).map(|&i| self.idf[i as usize])
    }
}

pub fn sparse_cosine(a: &SparseVec, b: &SparseVec) -> f64 {
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot
}

/// For each reference text, the number of posts per step whose TF-IDF
/// cosine with it exceeds `threshold`. The model is fit on posts and
/// references together.
pub fn tfidf_relevance_counts(
    posts: &[(u64, String)],
    references: &[String],
    threshold: f64,
) -> Result<Vec<BTreeMap<u64, usize>>, AnalyticsError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(AnalyticsError::Threshold(threshold));
    }
    if posts.is_empty() {
        return Err(AnalyticsError::Empty);
    }
    let docs: Vec<&str> = posts
        .iter()
        .map(|(_, t)| t.as_str())
        .chain(references.iter().map(String::as_str))
        .collect();
    let model = TfIdf::fit(&docs);
    Ok((0..references.len())
        .map(|r| {
            let rv = model.vector(posts.len() + r);
            let mut counts = BTreeMap::new();
            for (i, (step, _)) in posts.iter().enumerate() {
                if sparse_cosine(model.vector(i), rv) > threshold {
                    *counts.entry(*step).or_insert(0) += 1;
                }
            }
            counts
        })
        .collect())
}
