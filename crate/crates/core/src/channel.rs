//! Request channel and inference worker pool.
//!
//! Callers submit a request and get a [`RequestId`] back at once; the answer
//! lands in a slot keyed by that id. Decision and embedding requests go to the
//! least loaded healthy worker. Environment actions skip the pool and are
//! applied one at a time, in submission order, by a single writer.

use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use dashmap::DashMap;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{mpsc, oneshot, Notify};
use uuid::Uuid;

pub type RequestId = Uuid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    EnvAction,
    LlmDecide,
    Embed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("channel is shut down")]
    Closed,
    #[error("request {0} was never issued or was already read")]
    UnknownRequest(RequestId),
    #[error("timed out waiting for request {0}")]
    Timeout(RequestId),
    #[error("no healthy worker")]
    NoWorker,
    #[error("request failed after {attempts} attempt(s): {reason}")]
    Failed { attempts: u32, reason: String },
    #[error("no environment writer attached")]
    NoWriter,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkerError {
    /// The worker is gone; it is marked unhealthy and the request moves on.
    #[error("worker unavailable: {0}")]
    Unavailable(String),
    /// This request failed; the worker stays in rotation.
    #[error("request failed: {0}")]
    Failed(String),
}

#[derive(Debug)]
pub struct RequestMessage {
    pub request_id: RequestId,
    pub kind: RequestKind,
    pub payload: String,
    pub enqueued_at: Instant,
    reply: oneshot::Sender<Result<String, ChannelError>>,
}

/// Something that serves decision or embedding requests.
#[async_trait]
pub trait Worker: Send + Sync {
    async fn handle(&self, kind: RequestKind, payload: &str) -> Result<String, WorkerError>;

    /// Cheap liveness check.
    async fn probe(&self) -> bool {
        true
    }
}

/// Applies environment actions. Runs on the single writer task.
pub type EnvWriter = Box<dyn FnMut(String) -> Result<String, String> + Send>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    /// Concurrent requests per worker.
    pub max_concurrency: usize,
    /// Extra attempts after the first failure.
    pub max_retries: u32,
    pub probe_timeout_secs: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            max_concurrency: 64,
            max_retries: 3,
            probe_timeout_secs: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WorkerStatus {
    pub in_flight: usize,
    pub healthy: bool,
    pub handled: u64,
}

struct PoolState {
    workers: Vec<WorkerStatus>,
    cursor: usize,
}

struct Pool {
    workers: Vec<Arc<dyn Worker>>,
    state: Mutex<PoolState>,
    released: Notify,
    config: PoolConfig,
}

impl Pool {
    /// Reserves a slot on the healthy worker with the fewest requests in
    /// flight, preferring workers not in `avoid`. Ties rotate.
    async fn acquire(&self, avoid: &[usize]) -> Result<usize, ChannelError> {
        loop {
            let released = self.released.notified();
            {
                let mut st = self.state.lock();
                if !st.workers.iter().any(|w| w.healthy) {
                    return Err(ChannelError::NoWorker);
                }
                let n = st.workers.len();
                let cursor = st.cursor;
                let pick = |skip_avoided: bool| {
                    (0..n)
                        .map(|off| (cursor + off) % n)
                        .filter(|&i| {
                            let w = &st.workers[i];
                            w.healthy
                                && w.in_flight < self.config.max_concurrency
                                && !(skip_avoided && avoid.contains(&i))
                        })
                        .min_by_key(|&i| st.workers[i].in_flight)
                };
                if let Some(i) = pick(true).or_else(|| pick(false)) {
                    st.workers[i].in_flight += 1;
                    st.cursor = (i + 1) % n;
                    return Ok(i);
                }
            }
            released.await;
        }
    }

    fn release(&self, i: usize, outcome: &Result<String, WorkerError>) {
        {
            let mut st = self.state.lock();
            let w = &mut st.workers[i];
            w.in_flight -= 1;
            match outcome {
                Ok(_) => w.handled += 1,
                Err(WorkerError::Unavailable(_)) => w.healthy = false,
                Err(WorkerError::Failed(_)) => {}
            }
        }
        self.released.notify_waiters();
    }

    async fn serve(&self, kind: RequestKind, payload: &str) -> Result<String, ChannelError> {
        let mut tried = Vec::new();
        let mut last = String::new();
        let attempts = self.config.max_retries + 1;
        for _ in 0..attempts {
            let i = self.acquire(&tried).await?;
            let outcome = self.workers[i].handle(kind, payload).await;
            self.release(i, &outcome);
            match outcome {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::debug!("worker {i} failed: {e}");
                    last = e.to_string();
                    tried.push(i);
                }
            }
        }
        Err(ChannelError::Failed {
            attempts,
            reason: last,
        })
    }
}

struct Inner {
    queue: Mutex<Option<mpsc::UnboundedSender<RequestMessage>>>,
    slots: DashMap<RequestId, oneshot::Receiver<Result<String, ChannelError>>>,
    pool: Arc<Pool>,
}

/// Handle to a running channel. Cheap to clone.
#[derive(Clone)]
pub struct Channel {
    inner: Arc<Inner>,
}

impl Channel {
    /// Starts the dispatch loop on the current tokio runtime.
    pub fn start(
        workers: Vec<Arc<dyn Worker>>,
        config: PoolConfig,
        writer: Option<EnvWriter>,
    ) -> Channel {
        let (tx, rx) = mpsc::unbounded_channel();
        let pool = Arc::new(Pool {
            state: Mutex::new(PoolState {
                workers: vec![
                    WorkerStatus {
                        in_flight: 0,
                        healthy: true,
                        handled: 0
                    };
                    workers.len()
                ],
                cursor: 0,
            }),
            workers,
            released: Notify::new(),
            config,
        });
        tokio::spawn(dispatch_loop(pool.clone(), rx, writer));
        Channel {
            inner: Arc::new(Inner {
                queue: Mutex::new(Some(tx)),
                slots: DashMap::new(),
                pool,
            }),
        }
    }

    /// Enqueues a request without waiting.
    pub fn send_request(
        &self,
        kind: RequestKind,
        payload: impl Into<String>,
    ) -> Result<RequestId, ChannelError> {
        let queue = self.inner.queue.lock();
        let tx = queue.as_ref().ok_or(ChannelError::Closed)?;
        let request_id = Uuid::new_v4();
        let (reply, slot) = oneshot::channel();
        self.inner.slots.insert(request_id, slot);
        let msg = RequestMessage {
            request_id,
            kind,
            payload: payload.into(),
            enqueued_at: Instant::now(),
            reply,
        };
        if tx.send(msg).is_err() {
            self.inner.slots.remove(&request_id);
            return Err(ChannelError::Closed);
        }
        Ok(request_id)
    }

    /// Waits for a response and consumes its slot. On timeout the slot is
    /// kept so the caller may wait again.
    pub async fn await_response(
        &self,
        id: RequestId,
        timeout: Duration,
    ) -> Result<String, ChannelError> {
        let (_, mut slot) = self
            .inner
            .slots
            .remove(&id)
            .ok_or(ChannelError::UnknownRequest(id))?;
        match tokio::time::timeout(timeout, &mut slot).await {
            Ok(Ok(result)) => result,
            Ok(Err(_)) => Err(ChannelError::Failed {
                attempts: 0,
                reason: "request dropped during shutdown".into(),
            }),
            Err(_) => {
                self.inner.slots.insert(id, slot);
                Err(ChannelError::Timeout(id))
            }
        }
    }

    /// Sends and waits in one call.
    pub async fn request(
        &self,
        kind: RequestKind,
        payload: impl Into<String>,
        timeout: Duration,
    ) -> Result<String, ChannelError> {
        let id = self.send_request(kind, payload)?;
        self.await_response(id, timeout).await
    }

    /// Number of issued responses not yet read.
    pub fn pending(&self) -> usize {
        self.inner.slots.len()
    }

    pub fn worker_status(&self) -> Vec<WorkerStatus> {
        self.inner.pool.state.lock().workers.clone()
    }

    /// Probes every worker and updates its health flag.
    pub async fn probe_workers(&self) -> Vec<bool> {
        let pool = &self.inner.pool;
        let limit = Duration::from_secs_f64(pool.config.probe_timeout_secs);
        let mut health = Vec::with_capacity(pool.workers.len());
        for w in &pool.workers {
            health.push(
                tokio::time::timeout(limit, w.probe())
                    .await
                    .unwrap_or(false),
            );
        }
        {
            let mut st = pool.state.lock();
            for (status, &ok) in st.workers.iter_mut().zip(&health) {
                status.healthy = ok;
            }
        }
        pool.released.notify_waiters();
        health
    }

    /// Stops accepting requests. Queued requests are still served.
    pub fn shutdown(&self) {
        self.inner.queue.lock().take();
    }
}

async fn dispatch_loop(
    pool: Arc<Pool>,
    mut rx: mpsc::UnboundedReceiver<RequestMessage>,
    writer: Option<EnvWriter>,
) {
    let writer_tx = writer.map(|mut apply| {
        let (tx, mut wrx) = mpsc::unbounded_channel::<RequestMessage>();
        tokio::spawn(async move {
            while let Some(msg) = wrx.recv().await {
                let result = apply(msg.payload).map_err(|reason| ChannelError::Failed {
                    attempts: 1,
                    reason,
                });
                let _ = msg.reply.send(result);
            }
        });
        tx
    });
    while let Some(msg) = rx.recv().await {
        match msg.kind {
            RequestKind::EnvAction => match &writer_tx {
                Some(tx) => {
                    if let Err(e) = tx.send(msg) {
                        let _ = e.0.reply.send(Err(ChannelError::Closed));
                    }
                }
                None => {
                    let _ = msg.reply.send(Err(ChannelError::NoWriter));
                }
            },
            kind => {
                let pool = pool.clone();
                tokio::spawn(async move {
                    let result = pool.serve(kind, &msg.payload).await;
                    let _ = msg.reply.send(result);
                });
            }
        }
    }
}

/// Worker that returns the payload unchanged.
pub struct EchoWorker;

#[async_trait]
impl Worker for EchoWorker {
    async fn handle(&self, _kind: RequestKind, payload: &str) -> Result<String, WorkerError> {
        Ok(payload.to_string())
    }
}

/// Worker that POSTs the payload as JSON to an HTTP endpoint and returns the
/// response body.
pub struct HttpWorker {
    endpoint: String,
    client: reqwest::Client,
}

impl HttpWorker {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, WorkerError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| WorkerError::Unavailable(e.to_string()))?;
        Ok(HttpWorker {
            endpoint: endpoint.into(),
            client,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

#[async_trait]
impl Worker for HttpWorker {
    async fn handle(&self, _kind: RequestKind, payload: &str) -> Result<String, WorkerError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(payload.to_string())
            .send()
            .await
            .map_err(|e| {
                if e.is_connect() {
                    WorkerError::Unavailable(e.to_string())
                } else {
                    WorkerError::Failed(e.to_string())
                }
            })?;
        let status = resp.status();
        let body = resp
            .text()
            .await
            .map_err(|e| WorkerError::Failed(e.to_string()))?;
        if !status.is_success() {
            return Err(WorkerError::Failed(format!("HTTP {status}: {body}")));
        }
        Ok(body)
    }

    async fn probe(&self) -> bool {
        self.client.get(&self.endpoint).send().await.is_ok()
    }
}
