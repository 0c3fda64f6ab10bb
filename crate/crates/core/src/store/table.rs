//! CSV / JSONL table files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    CommentRecord, EdgeKind, PostRecord, RecCache, RelationEdge, Result, Store, StoreError,
    TraceEntry, UserRecord,
};
use crate::time::SimTime;

pub const TABLE_NAMES: [&str; 11] = [
    "user",
    "post",
    "comment",
    "like",
    "dislike",
    "comment_like",
    "comment_dislike",
    "follow",
    "mute",
    "trace",
    "rec",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Jsonl => "jsonl",
        }
    }
}

impl std::str::FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "jsonl" => Ok(ExportFormat::Jsonl),
            other => Err(format!(
                "unknown export format {other:?} (expected csv or jsonl)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Col {
    Int,
    OptInt,
    Real,
    Text,
}

#[derive(Debug, Clone)]
enum Cell {
    Int(i64),
    Null,
    Real(f64),
    Text(String),
}

type Schema = &'static [(&'static str, Col)];

fn schema(table: &str) -> Schema {
    use Col::*;
    match table {
        "user" => &[
            ("user_id", Int),
            ("agent_id", Int),
            ("user_name", Text),
            ("name", Text),
            ("bio", Text),
            ("created_at", Real),
            ("num_followings", Int),
            ("num_followers", Int),
        ],
        "post" => &[
            ("post_id", Int),
            ("user_id", Int),
            ("content", Text),
            ("created_at", Real),
            ("num_likes", Int),
            ("num_dislikes", Int),
            ("original_post_id", OptInt),
        ],
        "comment" => &[
            ("comment_id", Int),
            ("post_id", Int),
            ("user_id", Int),
            ("content", Text),
            ("created_at", Real),
            ("num_likes", Int),
            ("num_dislikes", Int),
        ],
        "like" => &[
            ("like_id", Int),
            ("user_id", Int),
            ("post_id", Int),
            ("created_at", Real),
        ],
        "dislike" => &[
            ("dislike_id", Int),
            ("user_id", Int),
            ("post_id", Int),
            ("created_at", Real),
        ],
        "comment_like" => &[
            ("comment_like_id", Int),
            ("user_id", Int),
            ("comment_id", Int),
            ("created_at", Real),
        ],
        "comment_dislike" => &[
            ("comment_dislike_id", Int),
            ("user_id", Int),
            ("comment_id", Int),
            ("created_at", Real),
        ],
        "follow" => &[
            ("follow_id", Int),
            ("follower_id", Int),
            ("followee_id", Int),
            ("created_at", Real),
        ],
        "mute" => &[
            ("mute_id", Int),
            ("muter_id", Int),
            ("mutee_id", Int),
            ("created_at", Real),
        ],
        "trace" => &[
            ("user_id", Int),
            ("created_at", Real),
            ("action", Text),
            ("info", Text),
        ],
        "rec" => &[("user_id", Int), ("post_id", Int)],
        _ => unreachable!("unknown table {table}"),
    }
}

fn edge_kind(table: &str) -> Option<EdgeKind> {
    EdgeKind::ALL.into_iter().find(|k| k.table() == table)
}

fn rows_of(store: &Store, table: &str) -> Vec<Vec<Cell>> {
    use Cell::*;
    let id = |v: u64| Int(v as i64);
    match table {
        "user" => store
            .users
            .iter()
            .map(|u| {
                vec![
                    id(u.user_id),
                    Int(u.agent_id),
                    Text(u.user_name.clone()),
                    Text(u.name.clone()),
                    Text(u.bio.clone()),
                    Real(u.created_at.0),
                    id(u.num_followings),
                    id(u.num_followers),
                ]
            })
            .collect(),
        "post" => store
            .posts
            .iter()
            .map(|p| {
                vec![
                    id(p.post_id),
                    id(p.user_id),
                    Text(p.content.clone()),
                    Real(p.created_at.0),
                    id(p.num_likes),
                    id(p.num_dislikes),
                    p.original_post_id.map(id).unwrap_or(Null),
                ]
            })
            .collect(),
        "comment" => store
            .comments
            .iter()
            .map(|c| {
                vec![
                    id(c.comment_id),
                    id(c.post_id),
                    id(c.user_id),
                    Text(c.content.clone()),
                    Real(c.created_at.0),
                    id(c.num_likes),
                    id(c.num_dislikes),
                ]
            })
            .collect(),
        "trace" => store
            .trace
            .iter()
            .map(|t| {
                vec![
                    id(t.user_id),
                    Real(t.created_at.0),
                    Text(t.action.clone()),
                    Text(t.info.clone()),
                ]
            })
            .collect(),
        "rec" => store
            .rec_rows()
            .into_iter()
            .map(|r| vec![id(r.user_id), id(r.post_id)])
            .collect(),
        edge => {
            let kind = edge_kind(edge).expect("edge table");
            store
                .edges(kind)
                .map(|e| {
                    vec![
                        id(e.edge_id),
                        id(e.source_id),
                        id(e.target_id),
                        Real(e.created_at.0),
                    ]
                })
                .collect()
        }
    }
}

fn table_path(dir: &Path, table: &str, format: ExportFormat) -> PathBuf {
    dir.join(format!("{table}.{}", format.extension()))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Int(v) => v.to_string(),
        Cell::Null => String::new(),
        Cell::Real(v) => v.to_string(),
        Cell::Text(s) => s.clone(),
    }
}

fn cell_json(c: &Cell) -> Value {
    match c {
        Cell::Int(v) => Value::from(*v),
        Cell::Null => Value::Null,
        Cell::Real(v) => Value::from(*v),
        Cell::Text(s) => Value::String(s.clone()),
    }
}

pub(super) fn export_dir(store: &Store, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::with_capacity(TABLE_NAMES.len());
    for table in TABLE_NAMES {
        let path = table_path(dir, table, format);
        let cols = schema(table);
        let rows = rows_of(store, table);
        let file = File::create(&path).map_err(io_err(&path))?;
        match format {
            ExportFormat::Csv => {
                let mut w = csv::Writer::from_writer(BufWriter::new(file));
                let csv_err = |e: csv::Error| StoreError::Io {
                    path: path.display().to_string(),
                    source: std::io::Error::other(e),
                };
                w.write_record(cols.iter().map(|(n, _)| *n))
                    .map_err(csv_err)?;
                for row in &rows {
                    w.write_record(row.iter().map(cell_text)).map_err(csv_err)?;
                }
                w.flush().map_err(io_err(&path))?;
            }
            ExportFormat::Jsonl => {
                let mut w = BufWriter::new(file);
                for row in &rows {
                    let obj: serde_json::Map<String, Value> = cols
                        .iter()
                        .zip(row)
                        .map(|((name, _), cell)| (name.to_string(), cell_json(cell)))
                        .collect();
                    writeln!(w, "{}", Value::Object(obj)).map_err(io_err(&path))?;
                }
                w.flush().map_err(io_err(&path))?;
            }
        }
        written.push(path);
    }
    Ok(written)
}

fn parse_text(table: &str, col: &str, ty: Col, raw: &str) -> Result<Cell> {
    let bad = || StoreError::Import {
        table: table.to_string(),
        reason: format!("column {col}: cannot parse {raw:?}"),
    };
    Ok(match ty {
        Col::Int => Cell::Int(raw.parse().map_err(|_| bad())?),
        Col::OptInt if raw.is_empty() => Cell::Null,
        Col::OptInt => Cell::Int(raw.parse().map_err(|_| bad())?),
        Col::Real => Cell::Real(raw.parse().map_err(|_| bad())?),
        Col::Text => Cell::Text(raw.to_string()),
    })
}

fn parse_json(table: &str, col: &str, ty: Col, v: Option<&Value>) -> Result<Cell> {
    let bad = || StoreError::Import {
        table: table.to_string(),
        reason: format!("column {col}: bad value {v:?}"),
    };
    let v = v.ok_or_else(bad)?;
    Ok(match ty {
        Col::Int => Cell::Int(v.as_i64().ok_or_else(bad)?),
        Col::OptInt if v.is_null() => Cell::Null,
        Col::OptInt => Cell::Int(v.as_i64().ok_or_else(bad)?),
        Col::Real => Cell::Real(v.as_f64().ok_or_else(bad)?),
        Col::Text => Cell::Text(v.as_str().ok_or_else(bad)?.to_string()),
    })
}

fn read_table(dir: &Path, table: &str, format: ExportFormat) -> Result<Vec<Vec<Cell>>> {
    let path = table_path(dir, table, format);
    let file = File::open(&path).map_err(io_err(&path))?;
    let cols = schema(table);
    let mut rows = Vec::new();
    match format {
        ExportFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(BufReader::new(file));
            let header = rdr
                .headers()
                .map_err(|e| StoreError::Import {
                    table: table.into(),
                    reason: e.to_string(),
                })?
                .clone();
            let expected: Vec<&str> = cols.iter().map(|(n, _)| *n).collect();
            if header.iter().collect::<Vec<_>>() != expected {
                return Err(StoreError::Import {
                    table: table.into(),
                    reason: format!("header {:?} != {:?}", header, expected),
                });
            }
            for rec in rdr.records() {
                let rec = rec.map_err(|e| StoreError::Import {
                    table: table.into(),
                    reason: e.to_string(),
                })?;
                let row = cols
                    .iter()
                    .zip(rec.iter())
                    .map(|((n, ty), raw)| parse_text(table, n, *ty, raw))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(row);
            }
        }
        ExportFormat::Jsonl => {
            for line in BufReader::new(file).lines() {
                let line = line.map_err(io_err(&path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let obj: Value = serde_json::from_str(&line).map_err(|e| StoreError::Import {
                    table: table.into(),
                    reason: e.to_string(),
                })?;
                let row = cols
                    .iter()
                    .map(|(n, ty)| parse_json(table, n, *ty, obj.get(*n)))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

fn int(c: &Cell) -> u64 {
    match c {
        Cell::Int(v) => *v as u64,
        _ => 0,
    }
}

fn opt_int(c: &Cell) -> Option<u64> {
    match c {
        Cell::Int(v) => Some(*v as u64),
        _ => None,
    }
}

fn real(c: &Cell) -> SimTime {
    match c {
        Cell::Real(v) => SimTime(*v),
        _ => SimTime(0.0),
    }
}

fn text(c: &Cell) -> String {
    match c {
        Cell::Text(s) => s.clone(),
        _ => String::new(),
    }
}

fn dense_check(table: &str, ids: impl Iterator<Item = u64>) -> Result<()> {
    for (i, id) in ids.enumerate() {
        if id != i as u64 + 1 {
            return Err(StoreError::Import {
                table: table.into(),
                reason: format!("row {} has id {id}, expected {}", i + 1, i + 1),
            });
        }
    }
    Ok(())
}

pub(super) fn import_dir(dir: &Path, format: ExportFormat) -> Result<Store> {
    let mut store = Store::default();
    for table in TABLE_NAMES {
        let rows = read_table(dir, table, format)?;
        match table {
            "user" => {
                store.users = rows
                    .iter()
                    .map(|r| UserRecord {
                        user_id: int(&r[0]),
                        agent_id: int(&r[1]) as i64,
                        user_name: text(&r[2]),
                        name: text(&r[3]),
                        bio: text(&r[4]),
                        created_at: real(&r[5]),
                        num_followings: int(&r[6]),
                        num_followers: int(&r[7]),
                    })
                    .collect();
                dense_check(table, store.users.iter().map(|u| u.user_id))?;
            }
            "post" => {
                store.posts = rows
                    .iter()
                    .map(|r| PostRecord {
                        post_id: int(&r[0]),
                        user_id: int(&r[1]),
                        content: text(&r[2]),
                        created_at: real(&r[3]),
                        num_likes: int(&r[4]),
                        num_dislikes: int(&r[5]),
                        original_post_id: opt_int(&r[6]),
                    })
                    .collect();
                dense_check(table, store.posts.iter().map(|p| p.post_id))?;
            }
            "comment" => {
                store.comments = rows
                    .iter()
                    .map(|r| CommentRecord {
                        comment_id: int(&r[0]),
                        post_id: int(&r[1]),
                        user_id: int(&r[2]),
                        content: text(&r[3]),
                        created_at: real(&r[4]),
                        num_likes: int(&r[5]),
                        num_dislikes: int(&r[6]),
                    })
                    .collect();
                dense_check(table, store.comments.iter().map(|c| c.comment_id))?;
            }
            "trace" => {
                store.trace = rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| TraceEntry {
                        seq: i as u64,
                        user_id: int(&r[0]),
                        created_at: real(&r[1]),
                        action: text(&r[2]),
                        info: text(&r[3]),
                    })
                    .collect();
            }
            "rec" => {
                let mut map: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
                for r in &rows {
                    map.entry(int(&r[0])).or_default().push(int(&r[1]));
                }
                store.rec = if map.is_empty() {
                    RecCache::Empty
                } else {
                    RecCache::PerUser(map)
                };
            }
            edge => {
                let kind = edge_kind(edge).expect("edge table");
                let t = &mut store.edges[kind.index()];
                for r in &rows {
                    let e = RelationEdge {
                        edge_id: int(&r[0]),
                        kind,
                        source_id: int(&r[1]),
                        target_id: int(&r[2]),
                        created_at: real(&r[3]),
                    };
                    if t.rows.insert(e.edge_id, e).is_some() {
                        return Err(StoreError::Import {
                            table: table.into(),
                            reason: "duplicate edge id".into(),
                        });
                    }
                }
            }
        }
    }
    store.reindex();
    store
        .verify_integrity()
        .map_err(|reason| StoreError::Import {
            table: "*".into(),
            reason,
        })?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::super::{NewUser, StoreConfig};
    use super::*;

    fn sample() -> Store {
        let mut s = Store::open(StoreConfig::memory(3)).unwrap();
        let t = |x: f64| SimTime(1_722_729_600.0 + x);
        s.register_user(
            NewUser::new("alice0101", "Alice", "Passionate, about \"law\"\nand more"),
            0,
            t(0.0),
        )
        .unwrap();
        s.register_user(NewUser::new("bob_good", "Bob", "ISTJ"), 1, t(1.0))
            .unwrap();
        let p = s
            .insert_post(1, "First post on here, hello everyone.", t(2.5))
            .unwrap();
        s.insert_repost(2, p, t(3.0)).unwrap();
        let c = s
            .insert_comment(2, p, "I agree with the post!", t(4.0))
            .unwrap();
        s.upsert_edge(EdgeKind::LikePost, 2, p, t(5.0)).unwrap();
        s.upsert_edge(EdgeKind::DislikeComment, 1, c, t(6.0))
            .unwrap();
        s.upsert_edge(EdgeKind::Follow, 2, 1, t(7.0)).unwrap();
        s.upsert_edge(EdgeKind::Mute, 1, 2, t(8.0)).unwrap();
        s.replace_rec_cache(RecCache::Global(vec![2, 1]));
        s
    }

    fn read_all(dir: &Path, format: ExportFormat) -> Vec<Vec<u8>> {
        TABLE_NAMES
            .iter()
            .map(|t| std::fs::read(table_path(dir, t, format)).unwrap())
            .collect()
    }

    #[test]
    fn empty_store_exports_header_only_csv() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(StoreConfig::memory(0)).unwrap();
        let files = s.export_tables(ExportFormat::Csv, dir.path()).unwrap();
        assert_eq!(files.len(), 11);
        let user = std::fs::read_to_string(dir.path().join("user.csv")).unwrap();
        assert_eq!(
            user,
            "user_id,agent_id,user_name,name,bio,created_at,num_followings,num_followers\n"
        );
        let jdir = tempfile::tempdir().unwrap();
        s.export_tables(ExportFormat::Jsonl, jdir.path()).unwrap();
        assert!(std::fs::read(jdir.path().join("post.jsonl"))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn export_import_export_is_byte_identical() {
        for format in [ExportFormat::Csv, ExportFormat::Jsonl] {
            let a = tempfile::tempdir().unwrap();
            let b = tempfile::tempdir().unwrap();
            let s = sample();
            s.export_tables(format, a.path()).unwrap();
            let back = Store::import_tables(format, a.path(), StoreConfig::memory(3)).unwrap();
            back.export_tables(format, b.path()).unwrap();
            assert_eq!(
                read_all(a.path(), format),
                read_all(b.path(), format),
                "{format:?}"
            );
            assert_eq!(back.row_counts(), s.row_counts());
            assert_eq!(back.cascade_root(2), 1);
        }
    }

    #[test]
    fn trace_csv_matches_layout() {
        let dir = tempfile::tempdir().unwrap();
        sample()
            .export_tables(ExportFormat::Csv, dir.path())
            .unwrap();
        let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        let mut lines = trace.lines();
        assert_eq!(lines.next(), Some("user_id,created_at,action,info"));
        assert!(lines.next().unwrap().starts_with("1,1722729600,sign_up,"));
    }

    #[test]
    fn import_rejects_inconsistent_counters() {
        let dir = tempfile::tempdir().unwrap();
        sample()
            .export_tables(ExportFormat::Csv, dir.path())
            .unwrap();
        let path = dir.path().join("like.csv");
        std::fs::write(&path, "like_id,user_id,post_id,created_at\n").unwrap();
        let err = Store::import_tables(ExportFormat::Csv, dir.path(), StoreConfig::memory(0))
            .unwrap_err();
        assert!(matches!(err, StoreError::Import { .. }), "{err}");
    }

    #[test]
    fn file_backed_store_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("db");
        let mut s = Store::open(StoreConfig::file(&path, 1)).unwrap();
        s.register_user(NewUser::new("a", "A", ""), 0, SimTime(0.0))
            .unwrap();
        s.insert_post(1, "x", SimTime(1.0)).unwrap();
        let counts = s.row_counts();
        s.close().unwrap();
        let reopened = Store::open(StoreConfig::file(&path, 1)).unwrap();
        assert_eq!(reopened.row_counts(), counts);
    }

    #[test]
    fn open_fails_on_unwritable_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("plain-file");
        std::fs::write(&blocker, b"x").unwrap();
        let err = Store::open(StoreConfig::file(blocker.join("db"), 0)).unwrap_err();
        assert!(matches!(err, StoreError::Open { .. }));
    }
}
