//! Synthetic populations and the initial core/ordinary follow network.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::time::Duration;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::rng::{stream, Purpose};
use crate::store::{EdgeKind, NewUser, Store, StoreConfig, StoreError};
use crate::time::SimTime;

pub const PROFILE_PROMPT: &str = include_str!("../assets/profile_prompt.txt");

pub const MBTI_TYPES: [&str; 16] = [
    "INTJ", "INTP", "ENTJ", "ENTP", "INFJ", "INFP", "ENFJ", "ENFP", "ISTJ", "ISFJ", "ESTJ", "ESFJ",
    "ISTP", "ISFP", "ESTP", "ESFP",
];

pub const PROFESSIONS: [&str; 13] = [
    "Agriculture, Food & Natural Resources",
    "Architecture & Construction",
    "Arts, Audio/Video Technology & Communications",
    "Business Management & Administration",
    "Education & Training",
    "Finance",
    "Government & Public Administration",
    "Health Science",
    "Hospitality & Tourism",
    "Human Services",
    "Information Technology",
    "Law, Public Safety, Corrections & Security",
    "Manufacturing",
];

pub const X_TOPICS: [&str; 9] = [
    "Politics",
    "Business",
    "Technology",
    "Entertainment",
    "Sports",
    "Health",
    "Education",
    "Science",
    "Lifestyle",
];

pub const REDDIT_TOPICS: [&str; 7] = [
    "Business",
    "Culture & Society",
    "Economics",
    "Fun",
    "General News",
    "IT",
    "Politics",
];

#[derive(Debug, Error)]
pub enum UsergenError {
    #[error("bad distribution {name}: {reason}")]
    Distribution { name: String, reason: String },
    #[error("population size must be at least 1")]
    EmptyPopulation,
    #[error("follow probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("profile generator: {0}")]
    Generator(String),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile file line {line}: {reason}")]
    ProfileFile { line: usize, reason: String },
}

/// Categorical distribution as `[label, weight]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical(pub Vec<(String, f64)>);

impl Categorical {
    pub fn uniform(labels: &[&str]) -> Self {
        let p = 1.0 / labels.len() as f64;
        Categorical(labels.iter().map(|l| (l.to_string(), p)).collect())
    }

    pub fn point(label: &str) -> Self {
        Categorical(vec![(label.to_string(), 1.0)])
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(l, _)| l.as_str())
    }

    fn sampler(&self, name: &str) -> Result<WeightedIndex<f64>, UsergenError> {
        let bad = |reason: String| UsergenError::Distribution {
            name: name.to_string(),
            reason,
        };
        if self.0.is_empty() {
            return Err(bad("no categories".into()));
        }
        if let Some((l, w)) = self.0.iter().find(|(_, w)| !w.is_finite() || *w < 0.0) {
            return Err(bad(format!("weight {w} of {l:?}")));
        }
        let total: f64 = self.0.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(bad(format!("weights sum to {total}")));
        }
        WeightedIndex::new(self.0.iter().map(|(_, w)| *w)).map_err(|e| bad(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemographicSpec {
    pub age: Categorical,
    pub gender: Categorical,
    pub mbti: Categorical,
    pub profession: Categorical,
    pub topics: Categorical,
}

impl Default for DemographicSpec {
    fn default() -> Self {
        DemographicSpec::x()
    }
}

impl DemographicSpec {
    pub fn x() -> Self {
        DemographicSpec {
            age: Categorical::uniform(&["18-24", "25-34", "35-49", "50-64", "65+"]),
            gender: Categorical::uniform(&["female", "male"]),
            mbti: Categorical::uniform(&MBTI_TYPES),
            profession: Categorical::uniform(&PROFESSIONS),
            topics: Categorical::uniform(&X_TOPICS),
        }
    }

    pub fn reddit() -> Self {
        DemographicSpec {
            topics: Categorical::uniform(&REDDIT_TOPICS),
            ..DemographicSpec::x()
        }
    }

    pub fn validate(&self) -> Result<(), UsergenError> {
        self.samplers().map(|_| ())
    }

    fn samplers(&self) -> Result<[WeightedIndex<f64>; 5], UsergenError> {
        Ok([
            self.age.sampler("age")?,
            self.gender.sampler("gender")?,
            self.mbti.sampler("mbti")?,
            self.profession.sampler("profession")?,
            self.topics.sampler("topics")?,
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub age: String,
    pub gender: String,
    pub mbti: String,
    pub profession: String,
    /// Two draws with replacement, so both may be the same topic.
    pub topics: [String; 2],
}

/// Draws `n` independent rows. Row `i` uses its own stream.
pub fn sample_population(
    spec: &DemographicSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<Demographics>, UsergenError> {
    if n == 0 {
        return Err(UsergenError::EmptyPopulation);
    }
    let [age, gender, mbti, profession, topics] = spec.samplers()?;
    let pick = |d: &Categorical, w: &WeightedIndex<f64>, rng: &mut rand_chacha::ChaCha8Rng| {
        d.0[w.sample(rng)].0.clone()
    };
    Ok((0..n as u64)
        .map(|i| {
            let mut rng = stream(seed, i, 0, Purpose::Population);
            Demographics {
                age: pick(&spec.age, &age, &mut rng),
                gender: pick(&spec.gender, &gender, &mut rng),
                mbti: pick(&spec.mbti, &mbti, &mut rng),
                profession: pick(&spec.profession, &profession, &mut rng),
                topics: [
                    pick(&spec.topics, &topics, &mut rng),
                    pick(&spec.topics, &topics, &mut rng),
                ],
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedProfile {
    pub realname: String,
    pub username: String,
    pub bio: String,
    pub persona: String,
    pub topics: Vec<String>,
    #[serde(default)]
    pub is_core: bool,
    /// Set when a remote generator failed and the template filled in.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

impl GeneratedProfile {
    pub fn distinct_topics(&self) -> BTreeSet<&str> {
        self.topics.iter().map(String::as_str).collect()
    }
}

const FIRST_NAMES: [&str; 16] = [
    "Alex", "Maria", "Sam", "Priya", "Jordan", "Chen", "Lena", "Omar", "Grace", "Diego", "Yuki",
    "Noah", "Amara", "Ivan", "Sofia", "Kwame",
];
const LAST_NAMES: [&str; 16] = [
    "Smith", "Garcia", "Nguyen", "Patel", "Kim", "Müller", "Rossi", "Okafor", "Silva", "Cohen",
    "Ivanova", "Tanaka", "Brown", "Haddad", "Larsen", "Mensah",
];

/// Fills a fixed sentence skeleton from the demographics.
pub fn template_profile(row: &Demographics, index: usize, seed: u64) -> GeneratedProfile {
    let mut rng = stream(seed, index as u64, 0, Purpose::Profile);
    let first = FIRST_NAMES[rng.random_range(0..FIRST_NAMES.len())];
    let last = LAST_NAMES[rng.random_range(0..LAST_NAMES.len())];
    let topics: Vec<String> = row.topics.to_vec();
    let interests = if topics[0] == topics[1] {
        topics[0].to_lowercase()
    } else {
        format!(
            "{} and {}",
            topics[0].to_lowercase(),
            topics[1].to_lowercase()
        )
    };
    GeneratedProfile {
        realname: format!("{first} {last}"),
        username: format!("{}_{}{index}", first.to_lowercase(), last.to_lowercase()),
        bio: format!("{} | into {interests}", row.profession),
        persona: format!(
            "{first} is a {} {}, aged {}, working in {}. {first} has an {} personality, follows {interests} closely and posts about it now and then.",
            row.gender,
            row.mbti,
            row.age,
            row.profession.to_lowercase(),
            row.mbti
        ),
        topics,
        is_core: false,
        fallback: false,
    }
}

pub fn render_profile_prompt(row: &Demographics) -> String {
    PROFILE_PROMPT
        .replace("{age}", &row.age)
        .replace("{gender}", &row.gender)
        .replace("{mbti}", &row.mbti)
        .replace("{profession}", &row.profession)
        .replace("{topics}", &row.topics.join(", "))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteGeneratorConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: f64,
}

impl Default for RemoteGeneratorConfig {
    fn default() -> Self {
        RemoteGeneratorConfig {
            endpoint: String::new(),
            model: "default".into(),
            temperature: 0.7,
            timeout_secs: 60.0,
        }
    }
}

pub enum ProfileGenerator {
    Template,
    Remote(RemoteGeneratorConfig),
}

fn remote_profile(
    client: &reqwest::blocking::Client,
    cfg: &RemoteGeneratorConfig,
    row: &Demographics,
) -> Result<GeneratedProfile, UsergenError> {
    let gen_err = |e: String| UsergenError::Generator(e);
    let body = json!({
        "model": cfg.model,
        "messages": [{"role": "user", "content": render_profile_prompt(row)}],
        "temperature": cfg.temperature,
    });
    let resp: Value = client
        .post(&cfg.endpoint)
        .json(&body)
        .send()
        .and_then(|r| r.error_for_status())
        .and_then(|r| r.json())
        .map_err(|e| gen_err(e.to_string()))?;
    let text = resp
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| gen_err("no choices[0].message.content".into()))?;
    let start = text
        .find('{')
        .ok_or_else(|| gen_err("no JSON object".into()))?;
    let end = text
        .rfind('}')
        .ok_or_else(|| gen_err("no JSON object".into()))?;
    let v: Value = serde_json::from_str(&text[start..=end]).map_err(|e| gen_err(e.to_string()))?;
    let field = |k: &str| {
        v.get(k)
            .and_then(Value::as_str)
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().to_string())
            .ok_or_else(|| gen_err(format!("missing string field {k:?}")))
    };
    Ok(GeneratedProfile {
        realname: field("realname")?,
        username: field("username")?,
        bio: field("bio")?,
        persona: field("persona")?,
        topics: row.topics.to_vec(),
        is_core: false,
        fallback: false,
    })
}

/// Turns demographic rows into profiles. Usernames are made unique by
/// suffixing the row index on collision.
pub fn generate_profiles(
    rows: &[Demographics],
    generator: &ProfileGenerator,
    seed: u64,
) -> Result<Vec<GeneratedProfile>, UsergenError> {
    let mut out = Vec::with_capacity(rows.len());
    match generator {
        ProfileGenerator::Template => {
            out.extend(
                rows.iter()
                    .enumerate()
                    .map(|(i, r)| template_profile(r, i, seed)),
            );
        }
        ProfileGenerator::Remote(cfg) => {
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs_f64(cfg.timeout_secs))
                .build()
                .map_err(|e| UsergenError::Generator(e.to_string()))?;
            for (i, r) in rows.iter().enumerate() {
                let profile = remote_profile(&client, cfg, r).unwrap_or_else(|e| {
                    log::warn!("profile {i}: {e}; using template");
                    GeneratedProfile {
                        fallback: true,
                        ..template_profile(r, i, seed)
                    }
                });
                out.push(profile);
            }
        }
    }
    let mut seen = HashSet::new();
    for (i, p) in out.iter_mut().enumerate() {
        if !seen.insert(p.username.clone()) {
            p.username = format!("{}_{i}", p.username);
            seen.insert(p.username.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub p_follow_core: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec { p_follow_core: 0.1 }
    }
}

/// `(ordinary index, core index)` follow pairs. Each ordinary user gets one
/// draw per core sharing at least one of their topics.
pub fn build_network(
    ordinary: &[GeneratedProfile],
    cores: &[GeneratedProfile],
    spec: &NetworkSpec,
    seed: u64,
) -> Result<Vec<(usize, usize)>, UsergenError> {
    let p = spec.p_follow_core;
    if !(0.0..=1.0).contains(&p) {
        return Err(UsergenError::Probability(p));
    }
    let core_topics: Vec<BTreeSet<&str>> = cores
        .iter()
        .map(GeneratedProfile::distinct_topics)
        .collect();
    let mut edges = Vec::new();
    for (i, user) in ordinary.iter().enumerate() {
        let mine = user.distinct_topics();
        let mut rng = stream(seed, i as u64, 0, Purpose::Network);
        for (c, topics) in core_topics.iter().enumerate() {
            if mine.is_disjoint(topics) {
                continue;
            }
            if rng.random::<f64>() < p {
                edges.push((i, c));
            }
        }
    }
    Ok(edges)
}

/// Registers cores then ordinary users and adds the follow edges. Core `c`
/// becomes user `c + 1`; ordinary user `i` becomes `cores.len() + i + 1`.
pub fn population_store(
    cores: &[GeneratedProfile],
    ordinary: &[GeneratedProfile],
    edges: &[(usize, usize)],
    config: StoreConfig,
    now: SimTime,
) -> Result<Store, UsergenError> {
    let mut store = Store::open(config)?;
    for (agent, p) in cores.iter().chain(ordinary).enumerate() {
        store.register_user(
            NewUser::new(&p.username, &p.realname, &p.bio),
            agent as i64,
            now,
        )?;
    }
    let base = cores.len() as u64;
    for &(i, c) in edges {
        store.upsert_edge(EdgeKind::Follow, base + i as u64 + 1, c as u64 + 1, now)?;
    }
    Ok(store)
}

pub fn write_profiles_jsonl(
    path: &Path,
    profiles: &[GeneratedProfile],
) -> Result<(), UsergenError> {
    let mut out = String::new();
    for p in profiles {
        out.push_str(&serde_json::to_string(p).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_profiles_jsonl(path: &Path) -> Result<Vec<GeneratedProfile>, UsergenError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| UsergenError::ProfileFile {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn core(topic: &str, i: usize) -> GeneratedProfile {
        GeneratedProfile {
            realname: format!("Core {i}"),
            username: format!("core{i}"),
            bio: String::new(),
            persona: String::new(),
            topics: vec![topic.into()],
            is_core: true,
            fallback: false,
        }
    }

    #[test]
    fn point_masses_give_identical_rows() {
        let spec = DemographicSpec {
            age: Categorical::point("30"),
            gender: Categorical::point("f"),
            mbti: Categorical::point("INTJ"),
            profession: Categorical::point("Finance"),
            topics: Categorical::point("Sports"),
        };
        let rows = sample_population(&spec, 20, 1).unwrap();
        assert!(rows.iter().all(|r| r == &rows[0]));
    }

    #[test]
    fn bad_specs() {
        assert!(matches!(
            sample_population(&DemographicSpec::x(), 0, 1),
            Err(UsergenError::EmptyPopulation)
        ));
        let spec = DemographicSpec {
            gender: Categorical(vec![("a".into(), 0.5), ("b".into(), 0.4)]),
            ..DemographicSpec::x()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn mbti_counts_near_uniform() {
        let rows = sample_population(&DemographicSpec::x(), 16_000, 42).unwrap();
        for t in MBTI_TYPES {
            let n = rows.iter().filter(|r| r.mbti == t).count();
            assert!((880..=1120).contains(&n), "{t}: {n}");
        }
    }

    #[test]
    fn templates_are_reproducible_and_unique() {
        let rows = sample_population(&DemographicSpec::x(), 500, 3).unwrap();
        let a = generate_profiles(&rows, &ProfileGenerator::Template, 3).unwrap();
        assert_eq!(
            a,
            generate_profiles(&rows, &ProfileGenerator::Template, 3).unwrap()
        );
        let names: HashSet<_> = a.iter().map(|p| &p.username).collect();
        assert_eq!(names.len(), 500);
        assert!(a.iter().any(|p| p.distinct_topics().len() == 1));
    }

    #[test]
    fn network_extremes() {
        let rows = sample_population(&DemographicSpec::x(), 200, 5).unwrap();
        let users = generate_profiles(&rows, &ProfileGenerator::Template, 5).unwrap();
        let cores: Vec<_> = X_TOPICS
            .iter()
            .enumerate()
            .map(|(i, t)| core(t, i))
            .collect();
        let all = build_network(&users, &cores, &NetworkSpec { p_follow_core: 1.0 }, 1).unwrap();
        for (i, u) in users.iter().enumerate() {
            let followed: BTreeSet<&str> = all
                .iter()
                .filter(|e| e.0 == i)
                .map(|e| cores[e.1].topics[0].as_str())
                .collect();
            assert_eq!(followed, u.distinct_topics());
        }
        assert!(
            build_network(&users, &cores, &NetworkSpec { p_follow_core: 0.0 }, 1)
                .unwrap()
                .is_empty()
        );
        assert!(build_network(&users, &cores, &NetworkSpec { p_follow_core: 1.5 }, 1).is_err());
    }

    #[test]
    fn store_has_only_core_followers() {
        let rows = sample_population(&DemographicSpec::x(), 300, 9).unwrap();
        let users = generate_profiles(&rows, &ProfileGenerator::Template, 9).unwrap();
        let cores: Vec<_> = X_TOPICS
            .iter()
            .enumerate()
            .map(|(i, t)| core(t, i))
            .collect();
        let edges = build_network(&users, &cores, &NetworkSpec::default(), 9).unwrap();
        let store =
            population_store(&cores, &users, &edges, StoreConfig::memory(9), SimTime(0.0)).unwrap();
        let top = store
            .users()
            .iter()
            .max_by_key(|u| u.num_followers)
            .unwrap();
        assert!(top.user_id <= cores.len() as u64);
        assert!(store.users()[cores.len()..]
            .iter()
            .all(|u| u.num_followers == 0));
        assert_eq!(store.edge_count(EdgeKind::Follow), edges.len());
    }

    #[test]
    fn prompt_is_filled() {
        let rows = sample_population(&DemographicSpec::x(), 1, 0).unwrap();
        let p = render_profile_prompt(&rows[0]);
        assert!(!p.contains("{age}") && p.contains(&rows[0].mbti));
    }
}
