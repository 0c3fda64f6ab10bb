//! Recommendation: hot-score ranking, interest-based two-source ranking,
//! text embeddings and the per-user rec cache.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::store::{PostId, PostRecord, RecCache, Store, UserId};
use crate::time::SimTime;

/// Reference instant of the hot score, in seconds since the Unix epoch.
pub const HOT_EPOCH: f64 = 1_134_028_003.0;
/// Recency horizon of the out-of-network score, in recency units.
pub const RECENCY_HORIZON: f64 = 271.8;

type UserRanks = Vec<(UserId, Vec<PostId>)>;

#[derive(Debug, Error)]
pub enum RecsysError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("invalid rec config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecKind {
    Reddit,
    X,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecConfig {
    pub kind: RecKind,
    pub cache_size: usize,
    pub k_in: usize,
    pub k_out: usize,
    pub feed_sample_size: usize,
    /// Length of one recency unit in seconds.
    pub recency_unit_secs: f64,
    pub embedding: EmbeddingConfig,
}

impl Default for RecConfig {
    fn default() -> Self {
        RecConfig {
            kind: RecKind::X,
            cache_size: 20,
            k_in: 10,
            k_out: 10,
            feed_sample_size: 5,
            recency_unit_secs: 60.0,
            embedding: EmbeddingConfig::default(),
        }
    }
}

impl RecConfig {
    pub fn validate(&self) -> Result<(), RecsysError> {
        if self.feed_sample_size == 0 {
            return Err(RecsysError::Config(
                "feed_sample_size must be at least 1".into(),
            ));
        }
        if self.cache_size < self.feed_sample_size {
            return Err(RecsysError::Config(format!(
                "cache_size {} is smaller than feed_sample_size {}",
                self.cache_size, self.feed_sample_size
            )));
        }
        if !(self.recency_unit_secs > 0.0) {
            return Err(RecsysError::Config(
                "recency_unit_secs must be positive".into(),
            ));
        }
        if self.embedding.dim == 0 {
            return Err(RecsysError::Config("embedding dim must be positive".into()));
        }
        Ok(())
    }
}

/// `log10(max(|u-d|,1)) + sign(u-d)(t - HOT_EPOCH)/45000`.
pub fn reddit_hot_score(u: u64, d: u64, t: f64) -> f64 {
    let s = u as i128 - d as i128;
    let order = (s.unsigned_abs().max(1) as f64).log10();
    let sign = s.signum() as f64;
    order + sign * (t - HOT_EPOCH) / 45000.0
}

fn recency_then_id(a: (f64, PostId), b: (f64, PostId)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top `k` posts by hot score, ties to newer then lower id.
pub fn rank_reddit<'a>(posts: impl IntoIterator<Item = &'a PostRecord>, k: usize) -> Vec<PostId> {
    let mut scored: Vec<(f64, f64, PostId)> = posts
        .into_iter()
        .map(|p| {
            (
                reddit_hot_score(p.num_likes, p.num_dislikes, p.created_at.0),
                p.created_at.0,
                p.post_id,
            )
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(recency_then_id((a.1, a.2), (b.1, b.2)))
    });
    scored.into_iter().take(k).map(|s| s.2).collect()
}

/// `ln((271.8 - dt)/100)`, or `None` once the post is past the horizon.
pub fn recency_score(dt: f64) -> Option<f64> {
    (dt < RECENCY_HORIZON).then(|| ((RECENCY_HORIZON - dt) / 100.0).ln())
}

/// `max(1, log_1000(fans + 1))`.
pub fn fan_score(fans: u64) -> f64 {
    ((fans as f64 + 1.0).ln() / 1000f64.ln()).max(1.0)
}

pub fn cosine_sim(a: &[f32], b: &[f32]) -> Result<f64, RecsysError> {
    if a.len() != b.len() {
        return Err(RecsysError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// A post competing for an out-of-network slot.
#[derive(Debug, Clone)]
pub struct Candidate<'a> {
    pub post_id: PostId,
    pub created_at: SimTime,
    pub author_followers: u64,
    pub embedding: &'a [f32],
}

/// Top `k_out` candidates by `R × F × S`. `unit_secs` converts the age to
/// recency units; candidates past the horizon are dropped.
pub fn x_out_network_rank(
    user_embedding: &[f32],
    candidates: &[Candidate<'_>],
    now: SimTime,
    unit_secs: f64,
    k_out: usize,
) -> Result<Vec<PostId>, RecsysError> {
    let mut scored = Vec::with_capacity(candidates.len());
    for c in candidates {
        let Some(r) = recency_score((now.0 - c.created_at.0) / unit_secs) else {
            continue;
        };
        let s = cosine_sim(user_embedding, c.embedding)?;
        let score = if s == 0.0 {
            0.0
        } else {
            r * fan_score(c.author_followers) * s
        };
        scored.push((score, c.created_at.0, c.post_id));
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(recency_then_id((a.1, a.2), (b.1, b.2)))
    });
    Ok(scored.into_iter().take(k_out).map(|s| s.2).collect())
}

/// Out-of-network ranking prepared once for many users over the same
/// candidates. Gives exactly the order of [`x_out_network_rank`], but only
/// visits the dimensions where both vectors are nonzero, which makes sparse
/// embeddings cheap.
pub struct OutNetworkIndex {
    dim: usize,
    cands: Vec<IndexedCandidate>,
    /// Per dimension, `(candidate, value)` for nonzero entries.
    postings: Vec<Vec<(u32, f64)>>,
    /// Candidates by the tie-break order: newer first, then lower id.
    by_recency: Vec<u32>,
}

struct IndexedCandidate {
    post_id: PostId,
    created: f64,
    author: UserId,
    /// `R × F`.
    rf: f64,
    norm_sq: f64,
}

/// Per-thread working memory for [`OutNetworkIndex::rank`].
pub struct RankScratch {
    dot: Vec<f64>,
    // 0 untouched, 1 touched, 2 touched with score +0, 3 other score
    state: Vec<u8>,
    touched: Vec<u32>,
}

impl OutNetworkIndex {
    /// `authors[i]` is the author of `candidates[i]`.
    pub fn new(
        candidates: &[Candidate<'_>],
        authors: &[UserId],
        now: SimTime,
        unit_secs: f64,
    ) -> Result<Self, RecsysError> {
        let dim = candidates.first().map_or(0, |c| c.embedding.len());
        let mut cands = Vec::new();
        let mut postings = vec![Vec::new(); dim];
        for (c, &author) in candidates.iter().zip(authors) {
            let Some(r) = recency_score((now.0 - c.created_at.0) / unit_secs) else {
                continue;
            };
            if c.embedding.len() != dim {
                return Err(RecsysError::DimensionMismatch(dim, c.embedding.len()));
            }
            let idx = cands.len() as u32;
            let mut norm_sq = 0f64;
            for (d, &y) in c.embedding.iter().enumerate() {
                let y = y as f64;
                norm_sq += y * y;
                if y != 0.0 {
                    postings[d].push((idx, y));
                }
            }
            cands.push(IndexedCandidate {
                post_id: c.post_id,
                created: c.created_at.0,
                author,
                rf: r * fan_score(c.author_followers),
                norm_sq,
            });
        }
        let mut by_recency: Vec<u32> = (0..cands.len() as u32).collect();
        by_recency.sort_by(|&a, &b| {
            let (a, b) = (&cands[a as usize], &cands[b as usize]);
            recency_then_id((a.created, a.post_id), (b.created, b.post_id))
        });
        Ok(OutNetworkIndex {
            dim,
            cands,
            postings,
            by_recency,
        })
    }

    pub fn scratch(&self) -> RankScratch {
        RankScratch {
            dot: vec![0.0; self.cands.len()],
            state: vec![0; self.cands.len()],
            touched: Vec::new(),
        }
    }

    /// Top `k_out` candidates for `user_embedding`, skipping candidates whose
    /// author `excluded` returns true for.
    pub fn rank(
        &self,
        user_embedding: &[f32],
        excluded: impl Fn(UserId) -> bool,
        k_out: usize,
        scratch: &mut RankScratch,
    ) -> Result<Vec<PostId>, RecsysError> {
        if self.cands.is_empty() || k_out == 0 {
            return Ok(Vec::new());
        }
        if user_embedding.len() != self.dim {
            return Err(RecsysError::DimensionMismatch(
                user_embedding.len(),
                self.dim,
            ));
        }
        let RankScratch {
            dot,
            state,
            touched,
        } = scratch;
        // Summing in dimension order reproduces the dense dot product bit
        // for bit: the skipped terms are all zero.
        let mut user_norm_sq = 0f64;
        for (d, &x) in user_embedding.iter().enumerate() {
            let x = x as f64;
            user_norm_sq += x * x;
            if x == 0.0 {
                continue;
            }
            for &(c, y) in &self.postings[d] {
                if state[c as usize] == 0 {
                    state[c as usize] = 1;
                    touched.push(c);
                }
                dot[c as usize] += x * y;
            }
        }

        let mut positive = Vec::new();
        let mut negative = Vec::new();
        for &c in touched.iter() {
            let cand = &self.cands[c as usize];
            let s = if user_norm_sq == 0.0 || cand.norm_sq == 0.0 {
                0.0
            } else {
                (dot[c as usize] / (user_norm_sq.sqrt() * cand.norm_sq.sqrt())).clamp(-1.0, 1.0)
            };
            let score = if s == 0.0 { 0.0 } else { cand.rf * s };
            state[c as usize] = match score.total_cmp(&0.0) {
                std::cmp::Ordering::Equal => 2,
                _ => 3,
            };
            if excluded(cand.author) {
                continue;
            }
            match score.total_cmp(&0.0) {
                std::cmp::Ordering::Greater => positive.push((score, c)),
                std::cmp::Ordering::Less => negative.push((score, c)),
                std::cmp::Ordering::Equal => {}
            }
        }

        let order = |a: &(f64, u32), b: &(f64, u32)| {
            let (ca, cb) = (&self.cands[a.1 as usize], &self.cands[b.1 as usize]);
            b.0.total_cmp(&a.0).then(recency_then_id(
                (ca.created, ca.post_id),
                (cb.created, cb.post_id),
            ))
        };
        let top = |mut v: Vec<(f64, u32)>, k: usize| {
            if v.len() > k {
                v.select_nth_unstable_by(k - 1, order);
                v.truncate(k);
            }
            v.sort_by(order);
            v
        };
        let mut out: Vec<PostId> = top(positive, k_out)
            .into_iter()
            .map(|(_, c)| self.cands[c as usize].post_id)
            .collect();
        if out.len() < k_out {
            // Score exactly zero: everything untouched plus exact cancellations.
            for &c in &self.by_recency {
                if out.len() == k_out {
                    break;
                }
                let cand = &self.cands[c as usize];
                if matches!(state[c as usize], 0 | 2) && !excluded(cand.author) {
                    out.push(cand.post_id);
                }
            }
        }
        if out.len() < k_out {
            let rest = k_out - out.len();
            out.extend(
                top(negative, rest)
                    .into_iter()
                    .map(|(_, c)| self.cands[c as usize].post_id),
            );
        }

        for &c in touched.iter() {
            dot[c as usize] = 0.0;
            state[c as usize] = 0;
        }
        touched.clear();
        Ok(out)
    }
}

/// Followee posts by like count, ties to newer then lower id.
pub fn x_in_network_rank(store: &Store, user: UserId, k_in: usize) -> Vec<PostId> {
    let mut posts: Vec<&PostRecord> = store
        .followees(user)
        .iter()
        .flat_map(|&f| store.posts_of(f))
        .filter_map(|&p| store.post(p))
        .collect();
    posts.sort_by(|a, b| {
        b.num_likes.cmp(&a.num_likes).then(recency_then_id(
            (a.created_at.0, a.post_id),
            (b.created_at.0, b.post_id),
        ))
    });
    posts.into_iter().take(k_in).map(|p| p.post_id).collect()
}

/// Uniform sample without replacement of `min(n, cache.len())` ids.
pub fn sample_feed<R: Rng + ?Sized>(cache: &[PostId], n: usize, rng: &mut R) -> Vec<PostId> {
    let n = n.min(cache.len());
    let mut picked = index::sample(rng, cache.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| cache[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Deterministic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: ProviderKind,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    /// Fall back to the deterministic provider when the remote one fails.
    pub fallback: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            provider: ProviderKind::Deterministic,
            dim: 384,
            endpoint: None,
            timeout_secs: 30.0,
            fallback: true,
        }
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, RecsysError>;
}

/// Signed feature hashing of lowercase alphanumeric tokens, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        HashingEmbedder { dim: dim.max(1) }
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f64; self.dim];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let digest = Sha256::digest(token.to_lowercase().as_bytes());
            let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return vec![0.0; self.dim];
        }
        v.into_iter().map(|x| (x / norm) as f32).collect()
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, RecsysError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Client for an embedding service taking `{"texts": [...]}` and answering
/// `{"vectors": [[...], ...]}`.
pub struct RemoteEmbedder {
    endpoint: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        dim: usize,
        timeout: Duration,
    ) -> Result<Self, RecsysError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RecsysError::Provider(e.to_string()))?;
        Ok(RemoteEmbedder {
            endpoint: endpoint.into(),
            dim,
            client,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, RecsysError> {
        let provider = |e: reqwest::Error| RecsysError::Provider(e.to_string());
        let resp: EmbedResponse = self
            .client
            .post(&self.endpoint)
            .json(&EmbedRequest { texts })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(provider)?
            .json()
            .map_err(provider)?;
        if resp.vectors.len() != texts.len() {
            return Err(RecsysError::Provider(format!(
                "asked for {} vectors, got {}",
                texts.len(),
                resp.vectors.len()
            )));
        }
        for v in &resp.vectors {
            if v.len() != self.dim {
                return Err(RecsysError::DimensionMismatch(self.dim, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(RecsysError::Provider("non-finite vector entry".into()));
            }
        }
        Ok(resp.vectors)
    }
}

/// Remote provider that degrades to hashing on failure.
pub struct FallbackEmbedder {
    primary: RemoteEmbedder,
    backup: HashingEmbedder,
}

impl EmbeddingProvider for FallbackEmbedder {
    fn dim(&self) -> usize {
        self.primary.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, RecsysError> {
        self.primary.embed(texts).or_else(|e| {
            log::warn!("{e}; using hashed embeddings for this batch");
            self.backup.embed(texts)
        })
    }
}

pub fn provider_from_config(
    cfg: &EmbeddingConfig,
) -> Result<Box<dyn EmbeddingProvider>, RecsysError> {
    match cfg.provider {
        ProviderKind::Deterministic => Ok(Box::new(HashingEmbedder::new(cfg.dim))),
        ProviderKind::Remote => {
            let endpoint = cfg.endpoint.clone().ok_or_else(|| {
                RecsysError::Config("remote embedding provider needs an endpoint".into())
            })?;
            let remote =
                RemoteEmbedder::new(endpoint, cfg.dim, Duration::from_secs_f64(cfg.timeout_secs))?;
            if cfg.fallback {
                Ok(Box::new(FallbackEmbedder {
                    primary: remote,
                    backup: HashingEmbedder::new(cfg.dim),
                }))
            } else {
                Ok(Box::new(remote))
            }
        }
    }
}

/// Text a user is embedded from: bio plus the five most recent posts.
pub fn user_text(store: &Store, user: UserId) -> String {
    let mut text = store.user(user).map(|u| u.bio.clone()).unwrap_or_default();
    for &p in store.posts_of(user).iter().rev().take(5) {
        if let Some(post) = store.post(p) {
            text.push('\n');
            text.push_str(&post.content);
        }
    }
    text
}

/// Builds rec caches, keeping post embeddings between refreshes.
pub struct Recommender {
    config: RecConfig,
    provider: Box<dyn EmbeddingProvider>,
    post_vectors: HashMap<PostId, Vec<f32>>,
}

impl Recommender {
    pub fn new(config: RecConfig) -> Result<Self, RecsysError> {
        config.validate()?;
        let provider = provider_from_config(&config.embedding)?;
        Ok(Self::with_provider(config, provider))
    }

    pub fn with_provider(config: RecConfig, provider: Box<dyn EmbeddingProvider>) -> Self {
        Recommender {
            config,
            provider,
            post_vectors: HashMap::new(),
        }
    }

    pub fn config(&self) -> &RecConfig {
        &self.config
    }

    fn embed_missing_posts(&mut self, store: &Store) -> Result<(), RecsysError> {
        let missing: Vec<&PostRecord> = store
            .posts()
            .iter()
            .filter(|p| !self.post_vectors.contains_key(&p.post_id))
            .collect();
        for chunk in missing.chunks(256) {
            let texts: Vec<&str> = chunk.iter().map(|p| p.content.as_str()).collect();
            let vectors = self.provider.embed(&texts)?;
            for (p, v) in chunk.iter().zip(vectors) {
                self.post_vectors.insert(p.post_id, v);
            }
        }
        Ok(())
    }

    /// Computes the cache for every user without touching the store.
    pub fn compute(&mut self, store: &Store, now: SimTime) -> Result<RecCache, RecsysError> {
        match self.config.kind {
            RecKind::Reddit => Ok(RecCache::Global(rank_reddit(
                store.posts(),
                self.config.cache_size,
            ))),
            RecKind::X => self.compute_x(store, now),
        }
    }

    fn compute_x(&mut self, store: &Store, now: SimTime) -> Result<RecCache, RecsysError> {
        self.embed_missing_posts(store)?;
        let users: Vec<UserId> = store.users().iter().map(|u| u.user_id).collect();
        let texts: Vec<String> = users.iter().map(|&u| user_text(store, u)).collect();
        let mut user_vectors = Vec::with_capacity(users.len());
        for chunk in texts.chunks(256) {
            let refs: Vec<&str> = chunk.iter().map(String::as_str).collect();
            user_vectors.extend(self.provider.embed(&refs)?);
        }

        let unit = self.config.recency_unit_secs;
        let fresh: Vec<Candidate<'_>> = store
            .posts()
            .iter()
            .filter(|p| recency_score((now.0 - p.created_at.0) / unit).is_some())
            .map(|p| Candidate {
                post_id: p.post_id,
                created_at: p.created_at,
                author_followers: store.user(p.user_id).map_or(0, |u| u.num_followers),
                embedding: &self.post_vectors[&p.post_id],
            })
            .collect();
        let authors: Vec<UserId> = fresh
            .iter()
            .map(|c| store.post(c.post_id).map_or(0, |p| p.user_id))
            .collect();
        let index = OutNetworkIndex::new(&fresh, &authors, now, unit)?;

        let cfg = &self.config;
        let per_user =
            |i: usize, scratch: &mut RankScratch| -> Result<(UserId, Vec<PostId>), RecsysError> {
                let user = users[i];
                let followees = store.followees(user);
                let excluded = |a: UserId| a == user || followees.contains(&a);
                let mut ids = x_in_network_rank(store, user, cfg.k_in);
                ids.extend(index.rank(&user_vectors[i], excluded, cfg.k_out, scratch)?);
                ids.truncate(cfg.cache_size);
                Ok((user, ids))
            };

        let threads = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(users.len().max(1));
        let chunk = users.len().div_ceil(threads).max(1);
        let n_users = users.len();
        let parts: Vec<Result<UserRanks, RecsysError>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..n_users)
                .step_by(chunk)
                .map(|start| {
                    let per_user = &per_user;
                    let index = &index;
                    s.spawn(move || {
                        let mut scratch = index.scratch();
                        (start..(start + chunk).min(n_users))
                            .map(|i| per_user(i, &mut scratch))
                            .collect()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ranking thread panicked"))
                .collect()
        });
        let mut map = BTreeMap::new();
        for part in parts {
            map.extend(part?);
        }
        Ok(RecCache::PerUser(map))
    }

    /// Recomputes and installs the rec table. Returns the number of rows.
    pub fn refresh_rec_cache(
        &mut self,
        store: &mut Store,
        now: SimTime,
    ) -> Result<usize, RecsysError> {
        let cache = self.compute(store, now)?;
        store.replace_rec_cache(cache);
        Ok(store.rec_rows().len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{NewUser, StoreConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn hot_score_cases() {
        assert_eq!(reddit_hot_score(0, 0, 1e9), 0.0);
        assert_eq!(reddit_hot_score(1, 0, HOT_EPOCH), 0.0);
        assert!((reddit_hot_score(11, 1, HOT_EPOCH + 45000.0) - 2.0).abs() < 1e-9);
        assert!((reddit_hot_score(57, 12, HOT_EPOCH + 90000.0) - 3.653212513775344).abs() < 1e-9);
        assert!(reddit_hot_score(0, 5, HOT_EPOCH + 45000.0) < 0.0);
    }

    #[test]
    fn recency_and_fans() {
        assert!(recency_score(171.8).unwrap().abs() < 1e-12);
        assert!((recency_score(0.0).unwrap() - (271.8f64 / 100.0).ln()).abs() < 1e-12);
        assert!(recency_score(300.0).is_none());
        assert!(recency_score(271.8).is_none());
        assert_eq!(fan_score(0), 1.0);
        assert!((fan_score(999) - 1.0).abs() < 1e-12);
        assert!((fan_score(999_999) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_rules() {
        assert!((cosine_sim(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_sim(&[1.0], &[1.0, 2.0]),
            Err(RecsysError::DimensionMismatch(1, 2))
        ));
    }

    #[test]
    fn out_network_prefers_bigger_audience() {
        let e = [1.0f32, 0.0];
        let now = SimTime(10_000.0);
        let mk = |id, fans| Candidate {
            post_id: id,
            created_at: SimTime(10_000.0 - 60.0),
            author_followers: fans,
            embedding: &e,
        };
        let ranked = x_out_network_rank(&e, &[mk(1, 0), mk(2, 999_999)], now, 60.0, 2).unwrap();
        assert_eq!(ranked, vec![2, 1]);
        let single = Candidate {
            created_at: SimTime(now.0 - 171.8 * 60.0),
            ..mk(3, 0)
        };
        assert_eq!(
            x_out_network_rank(&e, &[single], now, 60.0, 1).unwrap(),
            vec![3]
        );
    }

    #[test]
    fn sample_feed_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_feed(&[4, 5, 6], 5, &mut rng), vec![4, 5, 6]);
        let cache: Vec<u64> = (1..=5000).collect();
        let s = sample_feed(&cache, 5, &mut rng);
        assert_eq!(s.iter().collect::<HashSet<_>>().len(), 5);
        let a = sample_feed(&cache, 5, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_feed(&cache, 5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn hashing_embedder() {
        let h = HashingEmbedder::new(384);
        let a = h.embed_one("The cat sat");
        assert_eq!(a, h.embed_one("the CAT sat"));
        assert!((cosine_sim(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        assert!(h.embed_one("").iter().all(|&x| x == 0.0));
    }

    // Unrelated texts are near orthogonal on average; hashing collisions
    // make a hard per-pair bound impossible at this dimension.
    #[test]
    fn hashing_unrelated_texts() {
        let h = HashingEmbedder::new(384);
        let text = |p: usize| {
            (0..12)
                .map(|w| format!("w{p}x{w}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let sims: Vec<f64> = (0..300)
            .map(|p| {
                cosine_sim(&h.embed_one(&text(2 * p)), &h.embed_one(&text(2 * p + 1))).unwrap()
            })
            .collect();
        let mean = sims.iter().sum::<f64>() / sims.len() as f64;
        let under = sims.iter().filter(|s| s.abs() < 0.1).count();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!(under * 10 >= sims.len() * 8, "{under} of {}", sims.len());
    }

    fn store_with_posts() -> Store {
        let mut s = Store::open(StoreConfig::memory(0)).unwrap();
        for i in 0..3 {
            s.register_user(
                NewUser::new(format!("u{i}"), "n", "cats and dogs"),
                i,
                SimTime(0.0),
            )
            .unwrap();
        }
        s.insert_post(2, "cats rule", SimTime(100.0)).unwrap();
        s.insert_post(3, "dogs rule", SimTime(200.0)).unwrap();
        s.insert_post(3, "more dogs", SimTime(300.0)).unwrap();
        s
    }

    #[test]
    fn reddit_cache_is_global() {
        let mut s = store_with_posts();
        let mut r = Recommender::new(RecConfig {
            kind: RecKind::Reddit,
            cache_size: 300,
            ..RecConfig::default()
        })
        .unwrap();
        assert_eq!(r.refresh_rec_cache(&mut s, SimTime(400.0)).unwrap(), 9);
        assert_eq!(s.rec_cache().for_user(1), s.rec_cache().for_user(3));
    }

    #[test]
    fn x_cache_without_followees_is_out_of_network() {
        let mut s = store_with_posts();
        let mut r = Recommender::new(RecConfig::default()).unwrap();
        r.refresh_rec_cache(&mut s, SimTime(400.0)).unwrap();
        let mut c = s.rec_cache().for_user(1).to_vec();
        c.sort();
        assert_eq!(c, vec![1, 2, 3]);
        // own posts are never recommended out of network
        assert!(!s.rec_cache().for_user(3).contains(&2));
        s.upsert_edge(crate::store::EdgeKind::Follow, 1, 3, SimTime(400.0))
            .unwrap();
        r.refresh_rec_cache(&mut s, SimTime(400.0)).unwrap();
        assert_eq!(&s.rec_cache().for_user(1)[..2], &[3, 2]);
    }

    #[test]
    fn config_invariants() {
        let bad = RecConfig {
            cache_size: 2,
            feed_sample_size: 5,
            ..RecConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
