//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Every check uses scripted backends and no network.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use socialsim::actions::{
    execute_envelope, parse_action_envelope, ActionCall, ActionEnvelope, ActionKind, ActionSet,
    ExecContext, ReadConfig,
};
use socialsim::analytics::{
    metric_series, normalized_rmse, tfidf_relevance_counts, Group, PropagationTree, TreeNode,
};
use socialsim::channel::{Channel, ChannelError, PoolConfig, RequestKind, Worker, WorkerError};
use socialsim::recsys::{
    fan_score, recency_score, reddit_hot_score, x_out_network_rank, Candidate,
};
use socialsim::rng::{stream, Purpose};
use socialsim::scenario::{RunConfig, Scenario, Simulation};
use socialsim::store::{EdgeKind, ExportFormat, NewUser, Store, StoreConfig};
use socialsim::time::{activation_draw, ActivityProfile, ClockConfig, SimClock, SimTime};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const T0: f64 = 1_134_028_003.0;

// ---------------------------------------------------------------- 1

fn hot_oracle(u: u64, d: u64, t: f64) -> f64 {
    let diff = u as f64 - d as f64;
    let sign = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    diff.abs().max(1.0).log10() + sign * (t - T0) / 45000.0
}

fn formula_exactness() -> Outcome {
    // log10(45) + 2 to 20 digits: 3.65321251377534367937
    let cases = [
        (0, 0, 1_700_000_000.0, 0.0),
        (1, 0, T0, 0.0),
        (11, 1, T0 + 45000.0, 2.0),
        (57, 12, T0 + 90000.0, 3.653_212_513_775_343_7),
    ];
    for (u, d, t, want) in cases {
        let got = reddit_hot_score(u, d, t);
        if (got - want).abs() > 1e-9 {
            return outcome(false, format!("h({u},{d},{t}) = {got}, want {want}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Violations are split by region so a failure says where the formula
    // and the monotonicity property disagree.
    let (mut oracle_err, mut time_err, mut vote_err_ahead, mut vote_err_behind) = (0, 0, 0, 0);
    for _ in 0..100_000 {
        let u = rng.random_range(0..1_000_000u64);
        let d = rng.random_range(0..1_000_000u64);
        let t = T0 + rng.random_range(0.0..1e8);
        let dt = rng.random_range(1.0..1e6);
        let h = reddit_hot_score(u, d, t);
        oracle_err += usize::from((h - hot_oracle(u, d, t)).abs() > 1e-9);
        let votes_ok = reddit_hot_score(u + 1, d, t) >= h && reddit_hot_score(u, d + 1, t) <= h;
        if !votes_ok {
            if u >= d {
                vote_err_ahead += 1;
            } else {
                vote_err_behind += 1;
            }
        }
        let later = reddit_hot_score(u, d, t + dt);
        let time_ok = match u.cmp(&d) {
            std::cmp::Ordering::Greater => later > h,
            std::cmp::Ordering::Less => later < h,
            std::cmp::Ordering::Equal => later == h,
        };
        time_err += usize::from(!time_ok);
    }
    // With u < d the log term grows with d - u, so more upvotes lower h.
    let witness = (reddit_hot_score(0, 10, T0), reddit_hot_score(1, 10, T0));
    outcome(
        oracle_err + time_err + vote_err_ahead + vote_err_behind == 0,
        format!(
            "4 tabulated cases exact; over 1e5 triples: {oracle_err} oracle, {time_err} recency, \
             {vote_err_ahead} vote-monotonicity (u >= d), {vote_err_behind} vote-monotonicity (u < d) \
             violations; e.g. h(0,10,t0) = {:.4} > h(1,10,t0) = {:.4}",
            witness.0, witness.1
        ),
    )
}

// ---------------------------------------------------------------- 2

fn oracle_out_rank(
    user: &[f32],
    cands: &[(u64, f64, u64, Vec<f32>)],
    now: f64,
    k: usize,
) -> Vec<u64> {
    let mut scored: Vec<(f64, f64, u64)> = Vec::new();
    for (id, created, fans, emb) in cands {
        let age = (now - created) / 60.0;
        if age >= 271.8 {
            continue;
        }
        let r = ((271.8 - age) / 100.0).ln();
        let f = ((*fans as f64 + 1.0).log(1000.0)).max(1.0);
        let dot: f64 = user
            .iter()
            .zip(emb)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        let nu: f64 = user.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
        let ne: f64 = emb.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
        let s = if nu == 0.0 || ne == 0.0 {
            0.0
        } else {
            dot / (nu * ne)
        };
        scored.push((r * f * s, *created, *id));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(b.1.partial_cmp(&a.1).unwrap())
            .then(a.2.cmp(&b.2))
    });
    scored.into_iter().take(k).map(|s| s.2).collect()
}

fn score_components() -> Outcome {
    let exact = [
        (fan_score(0), 1.0),
        (fan_score(999), 1.0),
        (fan_score(999_999), 2.0),
        (recency_score(171.8).unwrap(), 0.0),
        // ln(2.718) to 20 digits: 0.99989631572895196894
        (recency_score(0.0).unwrap(), 0.999_896_315_728_952),
    ];
    for (i, (got, want)) in exact.iter().enumerate() {
        if (got - want).abs() > 1e-9 {
            return outcome(false, format!("case {i}: {got} vs {want}"));
        }
    }
    if recency_score(300.0).is_some() {
        return outcome(false, "dt = 300 not excluded");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let now = 1_800_000_000.0;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let dim = rng.random_range(1..12);
        let vec = |rng: &mut ChaCha8Rng| -> Vec<f32> {
            if rng.random_bool(0.1) {
                vec![0.0; dim]
            } else {
                (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
            }
        };
        let user = vec(&mut rng);
        let n = rng.random_range(0..=50);
        let cands: Vec<(u64, f64, u64, Vec<f32>)> = (0..n)
            .map(|i| {
                let created = now - 60.0 * rng.random_range(0..320) as f64;
                let fans =
                    [0, 999, 999_999, rng.random_range(0..5_000_000)][rng.random_range(0..4)];
                (i as u64 + 1, created, fans, vec(&mut rng))
            })
            .collect();
        let k = rng.random_range(1..=60);
        let candidates: Vec<Candidate> = cands
            .iter()
            .map(|(id, created, fans, emb)| Candidate {
                post_id: *id,
                created_at: SimTime(*created),
                author_followers: *fans,
                embedding: emb,
            })
            .collect();
        let got = x_out_network_rank(&user, &candidates, SimTime(now), 60.0, k).unwrap();
        mismatches += usize::from(got != oracle_out_rank(&user, &cands, now, k));
    }
    outcome(
        mismatches == 0,
        format!("exact cases within 1e-9, {mismatches}/1000 rank mismatches vs brute force"),
    )
}

// ---------------------------------------------------------------- 3

fn random_call(rng: &mut ChaCha8Rng) -> ActionCall {
    if rng.random_bool(0.02) {
        return ActionCall {
            name: "teleport".into(),
            kind: None,
            arguments: Default::default(),
        };
    }
    let kind = ActionKind::ALL[rng.random_range(0..ActionKind::ALL.len())];
    let mut args = serde_json::Map::new();
    for (name, _) in kind.args() {
        if rng.random_bool(0.03) {
            continue; // missing argument
        }
        let v = match *name {
            "content" => json!(format!("text {}", rng.random_range(0..50))),
            "query" => json!(format!("{}", rng.random_range(0..50))),
            "user_name" => json!(format!("u{}", rng.random_range(0..40))),
            "name" | "bio" => json!("someone"),
            _ if rng.random_bool(0.05) => json!("not a number"),
            _ if rng.random_bool(0.1) => json!(rng.random_range(0..60).to_string()),
            _ => json!(rng.random_range(0..60)),
        };
        args.insert(name.to_string(), v);
    }
    ActionCall::new(kind, Value::Object(args))
}

struct FuzzRun {
    store: Store,
    ok: usize,
    rejected: usize,
}

fn fuzz_store(seed: u64, ops: usize) -> FuzzRun {
    let mut store = Store::open(StoreConfig::memory(seed)).unwrap();
    let mut clock = SimClock::new(ClockConfig::default()).unwrap();
    for i in 0..20 {
        store
            .register_user(
                NewUser::new(format!("user{i}"), "U", "bio"),
                i,
                clock.wall_time(),
            )
            .unwrap();
    }
    let baseline = store.trace().len();
    let allowed = ActionSet::full();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ok, mut rejected, mut done) = (0, 0, 0);
    while done < ops {
        let n = rng.random_range(1..=3).min(ops - done);
        let env = ActionEnvelope {
            reason: String::new(),
            calls: (0..n).map(|_| random_call(&mut rng)).collect(),
            fallback: None,
        };
        let user = rng.random_range(1..=store.users().len() as u64);
        let ctx = ExecContext {
            clock: &clock,
            allowed: &allowed,
            seed,
            reads: ReadConfig::default(),
        };
        for r in execute_envelope(&mut store, user, &env, &ctx) {
            if r.ok {
                ok += 1;
            } else {
                rejected += 1;
            }
        }
        done += n;
        if done % 500 < n {
            clock.advance_step();
        }
    }
    assert_eq!(store.trace().len() - baseline, ok + rejected);
    FuzzRun {
        store,
        ok,
        rejected,
    }
}

fn recount_errors(store: &Store) -> Vec<String> {
    let mut errs = Vec::new();
    let count = |kind: EdgeKind, by_target: bool| {
        let mut m: HashMap<u64, u64> = HashMap::new();
        for e in store.edges(kind) {
            *m.entry(if by_target { e.target_id } else { e.source_id })
                .or_default() += 1;
        }
        m
    };
    let followers = count(EdgeKind::Follow, true);
    let followings = count(EdgeKind::Follow, false);
    for u in store.users() {
        if u.num_followers != followers.get(&u.user_id).copied().unwrap_or(0)
            || u.num_followings != followings.get(&u.user_id).copied().unwrap_or(0)
        {
            errs.push(format!("user {} follow counters", u.user_id));
        }
    }
    let (likes, dislikes) = (
        count(EdgeKind::LikePost, true),
        count(EdgeKind::DislikePost, true),
    );
    for p in store.posts() {
        if p.num_likes != likes.get(&p.post_id).copied().unwrap_or(0)
            || p.num_dislikes != dislikes.get(&p.post_id).copied().unwrap_or(0)
        {
            errs.push(format!("post {} vote counters", p.post_id));
        }
    }
    let (likes, dislikes) = (
        count(EdgeKind::LikeComment, true),
        count(EdgeKind::DislikeComment, true),
    );
    for c in store.comments() {
        if c.num_likes != likes.get(&c.comment_id).copied().unwrap_or(0)
            || c.num_dislikes != dislikes.get(&c.comment_id).copied().unwrap_or(0)
        {
            errs.push(format!("comment {} vote counters", c.comment_id));
        }
    }
    errs
}

fn read_dir_bytes(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn store_integrity() -> Outcome {
    let a = fuzz_store(3, 100_000);
    let b = fuzz_store(3, 100_000);
    let errs = recount_errors(&a.store);
    let rejections = a.store.trace().iter().filter(|t| t.is_rejection()).count();
    let tmp = tempfile::tempdir().unwrap();
    let mut identical = true;
    for fmt in [ExportFormat::Csv, ExportFormat::Jsonl] {
        let (da, db) = (
            tmp.path().join(format!("a{fmt:?}")),
            tmp.path().join(format!("b{fmt:?}")),
        );
        std::fs::create_dir_all(&da).unwrap();
        std::fs::create_dir_all(&db).unwrap();
        a.store.export_tables(fmt, &da).unwrap();
        b.store.export_tables(fmt, &db).unwrap();
        identical &= read_dir_bytes(&da) == read_dir_bytes(&db);
    }
    outcome(
        errs.is_empty() && rejections == a.rejected && identical,
        format!(
            "{} ok + {} rejected = trace rows, {} counter mismatches, exports identical: {identical}",
            a.ok,
            a.rejected,
            errs.len()
        ),
    )
}

// ---------------------------------------------------------------- 4

/// `(user, parent index, seconds after root)` per non-root node.
fn random_history(rng: &mut ChaCha8Rng) -> Vec<(u64, usize, f64)> {
    let n = rng.random_range(0..200);
    let mut t = 0.0;
    (0..n)
        .map(|i| {
            t += rng.random_range(0.0..90.0);
            (rng.random_range(1..120), rng.random_range(0..=i), t)
        })
        .collect()
}

fn bfs_oracle(history: &[(u64, usize, f64)], root_user: u64, horizon: usize) -> [Vec<u64>; 3] {
    let n = history.len() + 1;
    let mut children = vec![Vec::new(); n];
    for (i, (_, parent, _)) in history.iter().enumerate() {
        children[*parent].push(i + 1);
    }
    let mut depth = vec![0u64; n];
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        for &c in &children[v] {
            depth[c] = depth[v] + 1;
            queue.push_back(c);
        }
    }
    let user = |i: usize| if i == 0 { root_user } else { history[i - 1].0 };
    let minute = |i: usize| {
        if i == 0 {
            0
        } else {
            (history[i - 1].2 / 60.0).floor() as usize
        }
    };
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for m in 0..=horizon {
        let live: Vec<usize> = (0..n).filter(|&i| minute(i) <= m).collect();
        let users: HashSet<u64> = live.iter().map(|&i| user(i)).collect();
        let mut width: HashMap<u64, u64> = HashMap::new();
        for &i in &live {
            *width.entry(depth[i]).or_default() += 1;
        }
        out[0].push(users.len() as u64);
        out[1].push(live.iter().map(|&i| depth[i]).max().unwrap_or(0));
        out[2].push(width.values().copied().max().unwrap_or(0));
    }
    out
}

fn propagation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    let mut rmse_worst = 0f64;
    for _ in 0..500 {
        let history = random_history(&mut rng);
        let root_user = rng.random_range(1..120);
        let start = 1_722_729_600.0;
        let root = TreeNode {
            user_id: root_user,
            post_id: 1,
            parent: None,
            time: SimTime(start),
        };
        let tree = PropagationTree::from_reposts(
            root,
            history
                .iter()
                .enumerate()
                .map(|(i, (u, p, t))| (i as u64 + 2, *p as u64 + 1, *u, SimTime(start + t))),
        );
        let horizon = history.last().map_or(0, |h| (h.2 / 60.0) as usize) + 3;
        let got = metric_series(&tree, horizon);
        let want = bfs_oracle(&history, root_user, horizon);
        mismatches +=
            usize::from(got.scale != want[0] || got.depth != want[1] || got.max_breadth != want[2]);

        // Integer series: the squared error sum is exact in i128.
        let len = rng.random_range(1..300);
        let real: Vec<i64> = (0..len).map(|_| rng.random_range(0..1000)).collect();
        let simu: Vec<i64> = (0..len).map(|_| rng.random_range(0..1000)).collect();
        let last = *real.last().unwrap();
        if last == 0 {
            continue;
        }
        let sq: i128 = simu
            .iter()
            .zip(&real)
            .map(|(s, r)| ((s - r) as i128).pow(2))
            .sum();
        let want = (sq as f64 / len as f64).sqrt() / last as f64;
        let f = |v: &[i64]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let got = normalized_rmse(&f(&simu), &f(&real)).unwrap();
        rmse_worst = rmse_worst.max((got - want).abs());
    }
    outcome(
        mismatches == 0 && rmse_worst <= 1e-12,
        format!(
            "{mismatches}/500 series mismatches vs BFS oracle, worst rmse error {rmse_worst:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn fixture_corpus() -> Vec<(Vec<String>, String)> {
    let text = include_str!("fixtures/envelopes.txt");
    let mut out: Vec<(Vec<String>, String)> = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("### expect:") {
            let names = rest.split(',').map(|s| s.trim().to_string()).collect();
            out.push((names, String::new()));
        } else if let Some(last) = out.last_mut() {
            last.1.push_str(line);
            last.1.push('\n');
        }
    }
    out
}

fn protocol_conformance() -> Outcome {
    let corpus = fixture_corpus();
    let mut covered = BTreeSet::new();
    for (i, (want, text)) in corpus.iter().enumerate() {
        let env = parse_action_envelope(text);
        let got: Vec<&str> = env.calls.iter().map(|c| c.name.as_str()).collect();
        let known = env.calls.iter().all(|c| c.kind.is_some());
        if env.fallback.is_some() || got != *want || !known {
            return outcome(
                false,
                format!("fixture {i}: got {got:?} ({:?})", env.fallback),
            );
        }
        covered.extend(got.iter().map(|s| s.to_string()));
    }
    if corpus.len() < 20 || covered.len() != ActionKind::ALL.len() {
        return outcome(
            false,
            format!("{} fixtures cover {} actions", corpus.len(), covered.len()),
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut panics, mut fallbacks) = (0, 0);
    let fixtures: Vec<&[u8]> = corpus.iter().map(|(_, t)| t.as_bytes()).collect();
    for i in 0..100_000 {
        // Half pure noise, half damaged fixtures.
        let bytes: Vec<u8> = if i % 2 == 0 {
            (0..rng.random_range(0..256))
                .map(|_| rng.random())
                .collect()
        } else {
            let mut b = fixtures[rng.random_range(0..fixtures.len())].to_vec();
            for _ in 0..rng.random_range(1..4) {
                let at = rng.random_range(0..b.len());
                match rng.random_range(0..3) {
                    0 => b[at] = rng.random(),
                    1 => b.truncate(at),
                    _ => {
                        b.remove(at);
                    }
                }
                if b.is_empty() {
                    break;
                }
            }
            b
        };
        let text = String::from_utf8_lossy(&bytes).into_owned();
        match std::panic::catch_unwind(|| parse_action_envelope(&text)) {
            Ok(env) => fallbacks += usize::from(env.fallback.is_some()),
            Err(_) => panics += 1,
        }
    }
    outcome(
        panics == 0,
        format!(
            "{} fixtures cover all {} actions; 1e5 random inputs: {panics} panics, fallback rate {:.3}",
            corpus.len(),
            covered.len(),
            fallbacks as f64 / 1e5
        ),
    )
}

// ---------------------------------------------------------------- 6

struct KillableEcho {
    dead: AtomicBool,
    handled: AtomicUsize,
}

#[async_trait]
impl Worker for KillableEcho {
    async fn handle(&self, _kind: RequestKind, payload: &str) -> Result<String, WorkerError> {
        if self.dead.load(Ordering::SeqCst) {
            return Err(WorkerError::Unavailable("killed".into()));
        }
        self.handled.fetch_add(1, Ordering::SeqCst);
        Ok(payload.to_string())
    }

    async fn probe(&self) -> bool {
        !self.dead.load(Ordering::SeqCst)
    }
}

fn channel_correctness() -> (Outcome, Duration) {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap();
    rt.block_on(async {
        let workers: Vec<Arc<KillableEcho>> = (0..2)
            .map(|_| {
                Arc::new(KillableEcho {
                    dead: AtomicBool::new(false),
                    handled: AtomicUsize::new(0),
                })
            })
            .collect();
        let pool: Vec<Arc<dyn Worker>> = workers.iter().map(|w| w.clone() as Arc<dyn Worker>).collect();
        let config = PoolConfig {
            max_retries: 3,
            ..PoolConfig::default()
        };
        let channel = Channel::start(pool, config, None);
        const N: usize = 10_000;
        let start = Instant::now();
        let killer = {
            let w = workers[0].clone();
            tokio::spawn(async move {
                while w.handled.load(Ordering::SeqCst) < 2_000 {
                    tokio::task::yield_now().await;
                }
                w.dead.store(true, Ordering::SeqCst);
            })
        };
        let mut ids = Vec::with_capacity(N);
        for i in 0..N {
            ids.push((i, channel.send_request(RequestKind::LlmDecide, format!("req-{i}")).unwrap()));
        }
        let tasks: Vec<_> = ids
            .into_iter()
            .map(|(i, id)| {
                let ch = channel.clone();
                tokio::spawn(async move {
                    let first = ch.await_response(id, Duration::from_secs(30)).await;
                    let again = ch.await_response(id, Duration::from_millis(1)).await;
                    (i, first, again)
                })
            })
            .collect();
        let (mut correct, mut wrong, mut lost, mut duplicate) = (0, 0, 0, 0);
        for t in tasks {
            let (i, first, again) = t.await.unwrap();
            match first {
                Ok(body) if body == format!("req-{i}") => correct += 1,
                Ok(_) => wrong += 1,
                Err(_) => lost += 1,
            }
            if !matches!(again, Err(ChannelError::UnknownRequest(_))) {
                duplicate += 1;
            }
        }
        let elapsed = start.elapsed();
        killer.abort();
        let throughput = N as f64 / elapsed.as_secs_f64();
        let killed = workers[0].dead.load(Ordering::SeqCst);
        let handled: usize = workers.iter().map(|w| w.handled.load(Ordering::SeqCst)).sum();
        let pass = correct == N
            && wrong + lost + duplicate == 0
            && killed
            && handled == N
            && channel.pending() == 0
            && throughput >= 5_000.0;
        (
            outcome(
                pass,
                format!(
                    "{correct}/{N} correct, {wrong} miscorrelated, {lost} lost, {duplicate} duplicated, worker killed: {killed}, {throughput:.0} round-trips/s"
                ),
            ),
            elapsed,
        )
    })
}

// ---------------------------------------------------------------- 7

fn herd_protocol() -> Outcome {
    let config = RunConfig::preset(Scenario::HerdReddit);
    let q = config.backend.policy.rules[0].prob;
    let mut sim = Simulation::from_config(&config).unwrap();
    sim.run().unwrap();
    let store = sim.store();
    let groups = sim.treatments();
    let sizes = groups.sizes();
    if sizes != [73, 73, 73] {
        return outcome(false, format!("group sizes {sizes:?}"));
    }
    let step_secs = config.clock.minutes_per_step * 60.0;
    let step_of = |t: SimTime| ((t.0 - config.clock.epoch) / step_secs).round() as u64;
    // First step at which each agent voted on each post.
    let mut voted: HashMap<(&str, u64, u64), u64> = HashMap::new();
    for t in store.trace().iter().filter(|t| !t.is_rejection()) {
        let kind = match t.action.as_str() {
            "like_post" => "like",
            "dislike_post" => "dislike",
            _ => continue,
        };
        if let Some(p) = t.info_json().get("post_id").and_then(Value::as_u64) {
            voted
                .entry((kind, t.user_id, p))
                .or_insert(step_of(t.created_at));
        }
    }
    // A view is eligible when the policy may vote and the agent has not yet.
    let (mut up_views, mut down_views) = (0u64, 0u64);
    for e in sim.exposures() {
        let eligible = |kind| {
            voted
                .get(&(kind, e.user_id, e.post_id))
                .is_none_or(|&s| s >= e.step)
        };
        match groups.0.get(&e.post_id) {
            Some(Group::UpTreated) if e.score > 0 && eligible("like") => up_views += 1,
            Some(Group::DownTreated) if e.score < 0 && eligible("dislike") => down_views += 1,
            _ => {}
        }
    }
    let mean = |g: Group| {
        let m = groups.members(g);
        m.iter()
            .map(|&id| store.post(id).unwrap().score() as f64)
            .sum::<f64>()
            / m.len() as f64
    };
    let (up, control, down) = (
        mean(Group::UpTreated),
        mean(Group::Control),
        mean(Group::DownTreated),
    );
    let observed = up - down;
    let n = 73.0;
    // Seeds give +1 and -1; every eligible view votes with probability q.
    let expected = 2.0 + q * (up_views + down_views) as f64 / n;
    let se = (q * (1.0 - q) * (up_views + down_views) as f64).sqrt() / n;
    let pass = (observed - expected).abs() <= 1.96 * se && control == 0.0;
    outcome(
        pass,
        format!(
            "groups {sizes:?}, gap {observed:.3} vs expected {expected:.3} ± {:.3} (up {up:.3}, control {control:.3}, down {down:.3}, {} eligible views)",
            1.96 * se,
            up_views + down_views
        ),
    )
}

// ---------------------------------------------------------------- 8

fn activation_statistics() -> Outcome {
    let mut config = RunConfig::preset(Scenario::Custom);
    config.seed = 8;
    config.steps = 100;
    config.actions = vec!["do_nothing".into()];
    config.population = socialsim::scenario::PopulationConfig::Generated {
        agents: 10_000,
        cores: 0,
        spec: Default::default(),
        network: socialsim::usergen::NetworkSpec { p_follow_core: 0.0 },
        core_profiles: None,
        generator: None,
    };
    config.rec.kind = socialsim::recsys::RecKind::Reddit;
    config.activation.prob = 0.1;
    let mut sim = Simulation::from_config(&config).unwrap();
    let profile = ActivityProfile::constant(0.1).unwrap();
    let mut order: Vec<u64> = sim.agents().iter().map(|a| a.agent_id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut total, mut order_mismatch) = (0usize, 0usize);
    for step in 0..100 {
        let hour = sim.clock().hour_of();
        let report = sim.step().unwrap();
        total += report.active;
        order.shuffle(&mut rng);
        let mut shuffled: Vec<u64> = order
            .iter()
            .copied()
            .filter(|&a| {
                activation_draw(&profile, hour, &mut stream(8, a, step, Purpose::Activation))
                    .unwrap()
            })
            .collect();
        shuffled.sort_unstable();
        order_mismatch += usize::from(shuffled != report.active_ids);
    }
    let rate = total as f64 / 1e6;
    outcome(
        (rate - 0.1).abs() <= 0.005 && order_mismatch == 0,
        format!("rate {rate:.4}, {order_mismatch}/100 steps differ under shuffled agent order"),
    )
}

// ---------------------------------------------------------------- 9

fn manifest_of(parallelism: usize, dir: &std::path::Path) -> String {
    let mut config = RunConfig::preset(Scenario::InfoSpread);
    config.runtime.parallelism = parallelism;
    let mut sim = Simulation::from_config(&config).unwrap();
    sim.run().unwrap();
    sim.export(dir).unwrap();
    let m: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["files"].to_string()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let a = manifest_of(8, &tmp.path().join("a"));
    let b = manifest_of(8, &tmp.path().join("b"));
    let c = manifest_of(1, &tmp.path().join("c"));
    let bytes = |d: &str| std::fs::read(tmp.path().join(d).join("manifest.json")).unwrap();
    let pass = a == b && a == c && bytes("a") == bytes("c");
    outcome(
        pass,
        format!(
            "same seed twice: identical {}; 8-way vs 1-way: identical {}",
            a == b,
            a == c
        ),
    )
}

// ---------------------------------------------------------------- 10

fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn oracle_tfidf(docs: &[String]) -> Vec<HashMap<String, f64>> {
    let toks: Vec<Vec<String>> = docs.iter().map(|d| oracle_tokens(d)).collect();
    let mut df: HashMap<&str, f64> = HashMap::new();
    for t in &toks {
        for w in t.iter().map(String::as_str).collect::<HashSet<_>>() {
            *df.entry(w).or_default() += 1.0;
        }
    }
    let n = docs.len() as f64;
    toks.iter()
        .map(|t| {
            let mut v: HashMap<String, f64> = HashMap::new();
            for w in t {
                *v.entry(w.clone()).or_default() += 1.0;
            }
            for (w, x) in v.iter_mut() {
                *x *= (n / df[w.as_str()]).ln();
            }
            let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.values_mut().for_each(|x| *x /= norm);
            }
            v
        })
        .collect()
}

fn tfidf_relevance() -> Outcome {
    let references: Vec<String> = [
        "Volcano eruption forces evacuation of coastal villages overnight",
        "Central bank unexpectedly raises interest rates by half a point",
        "Local football club wins championship after dramatic penalty shootout",
        "Scientists discover water ice deposits near the lunar south pole",
    ]
    .map(String::from)
    .to_vec();
    let filler: Vec<String> = (0..400).map(|i| format!("w{i}")).collect();
    let common = ["the", "a", "of", "by", "after", "near", "and", "is"];
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    // (step, text, planted reference, exact echo)
    let mut posts: Vec<(u64, String, Option<usize>, bool)> = Vec::new();
    for (r, reference) in references.iter().enumerate() {
        for i in 0..25 {
            posts.push((
                rng.random_range(0..20),
                reference.clone(),
                Some(r),
                true,
            ));
            let mut words: Vec<String> = oracle_tokens(reference);
            words.truncate(6 + i % 3);
            words.extend((0..4).map(|_| filler[rng.random_range(0..filler.len())].clone()));
            posts.push((rng.random_range(0..20), words.join(" "), Some(r), false));
        }
    }
    while posts.len() < 1000 {
        let mut words: Vec<String> = (0..rng.random_range(8..16))
            .map(|_| filler[rng.random_range(0..filler.len())].clone())
            .collect();
        words.push(common[rng.random_range(0..common.len())].to_string());
        posts.push((rng.random_range(0..20), words.join(" "), None, false));
    }
    posts.shuffle(&mut rng);
    let input: Vec<(u64, String)> = posts.iter().map(|(s, t, _, _)| (*s, t.clone())).collect();
    let got = tfidf_relevance_counts(&input, &references, 0.2).unwrap();

    let docs: Vec<String> = input
        .iter()
        .map(|p| p.1.clone())
        .chain(references.iter().cloned())
        .collect();
    let vecs = oracle_tfidf(&docs);
    let cos = |a: &HashMap<String, f64>, b: &HashMap<String, f64>| -> f64 {
        a.iter().filter_map(|(w, x)| b.get(w).map(|y| x * y)).sum()
    };
    let mut want = vec![BTreeMap::new(); 4];
    let (mut missed_exact, mut false_pos, mut partial_hits) = (0, 0, 0);
    for (i, (step, _, planted, exact)) in posts.iter().enumerate() {
        for (r, counts) in want.iter_mut().enumerate() {
            let hit = cos(&vecs[i], &vecs[1000 + r]) > 0.2;
            if hit {
                *counts.entry(*step).or_insert(0usize) += 1;
            }
            match (planted, exact) {
                (Some(p), true) if *p == r && !hit => missed_exact += 1,
                (Some(p), false) if *p == r && hit => partial_hits += 1,
                (None, _) if hit => false_pos += 1,
                _ => {}
            }
        }
    }
    outcome(
        got == want && missed_exact == 0 && false_pos == 0,
        format!(
            "counts equal oracle: {}; exact echoes missed {missed_exact}/100; non-planted above threshold {false_pos}; partial echoes caught {partial_hits}/100",
            got == want
        ),
    )
}

fn main() {
    type Check = fn() -> Outcome;
    let checks: [(&str, u64, Check); 10] = [
        ("formula exactness", 5, formula_exactness),
        ("score components", 30, score_components),
        ("store integrity fuzz", 120, store_integrity),
        ("propagation metrics oracle", 60, propagation_oracle),
        ("protocol conformance", 30, protocol_conformance),
        ("channel correctness", 60, || channel_correctness().0),
        ("herd protocol", 120, herd_protocol),
        ("activation statistics", 60, activation_statistics),
        ("end-to-end determinism", 180, determinism),
        ("tf-idf relevance", 30, tfidf_relevance),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, budget, check)) in checks.into_iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check);
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (
                false,
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into()),
            ),
        };
        let in_time = elapsed <= Duration::from_secs(budget);
        let ok = pass && in_time;
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {name}: {} ({detail}; {:.2}s of {budget}s)",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
