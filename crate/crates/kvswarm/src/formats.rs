//! Line-oriented text formats.
//!
//! ```text
//! kvtrace 1 <initial_entries>
//! step <idx> new=<ids|-> act=<ids|->
//!
//! kvclust 1 <tau> <n_entries> <n_clusters>
//! cluster <id> medoid=<id> members=<ids>
//!
//! kvplace 1 <n_disk>
//! entry <id> replicas=<dev:slot,...|->
//!
//! group <id> members=<ids>
//! bucket <device>: <ids>
//! ```
//!
//! Id lists are comma separated; `-` stands for an empty list. Lines starting
//! with `#` are comments and blank lines are ignored, so every writer can
//! stamp its output with a config hash.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use kvswarm_core::placement::{DeviceSlot, DramPlan, PlacementMap};
use kvswarm_core::{ActivationStep, ActivationTrace, ClusterSet, EntryId, IoPlan};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(#[from] kvswarm_core::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

fn perr(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Non-comment lines with their 1-based numbers.
fn content_lines<R: BufRead>(r: R) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push((i + 1, t.to_string()));
    }
    Ok(out)
}

fn header<'a>(
    lines: &'a [(usize, String)],
    magic: &str,
    fields: usize,
) -> Result<(usize, Vec<&'a str>)> {
    let (n, first) = lines
        .first()
        .ok_or_else(|| perr(0, format!("missing {magic} header")))?;
    let parts: Vec<&str> = first.split_whitespace().collect();
    if parts.first() != Some(&magic) {
        return Err(perr(*n, format!("expected `{magic}` header")));
    }
    if parts.get(1) != Some(&"1") {
        return Err(perr(*n, "unsupported version"));
    }
    if parts.len() != fields + 2 {
        return Err(perr(*n, format!("{magic} header needs {fields} fields")));
    }
    Ok((*n, parts[2..].to_vec()))
}

fn num<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| perr(line, format!("bad {what}: `{s}`")))
}

pub fn format_ids(ids: &[EntryId]) -> String {
    if ids.is_empty() {
        return "-".into();
    }
    let mut s = String::new();
    for (i, e) in ids.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{}", e.0).unwrap();
    }
    s
}

pub fn parse_ids(line: usize, s: &str) -> Result<Vec<EntryId>> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| num::<u32>(line, x, "entry id").map(EntryId))
        .collect()
}

fn field<'a>(line: usize, tok: Option<&'a str>, key: &str) -> Result<&'a str> {
    tok.and_then(|t| t.strip_prefix(key))
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| perr(line, format!("expected `{key}=`")))
}

fn write_comments<W: Write>(w: &mut W, comments: &[String]) -> io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    Ok(())
}

pub fn write_trace<W: Write>(
    w: &mut W,
    t: &ActivationTrace,
    comments: &[String],
) -> io::Result<()> {
    writeln!(w, "kvtrace 1 {}", t.initial_entries())?;
    write_comments(w, comments)?;
    for (i, s) in t.steps().iter().enumerate() {
        writeln!(
            w,
            "step {i} new={} act={}",
            format_ids(s.new_entries()),
            format_ids(s.activated())
        )?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(r: R) -> Result<ActivationTrace> {
    let lines = content_lines(r)?;
    let (hl, h) = header(&lines, "kvtrace", 1)?;
    let initial: u32 = num(hl, h[0], "entry count")?;
    let mut steps = Vec::new();
    for (n, l) in &lines[1..] {
        let mut it = l.split_whitespace();
        if it.next() != Some("step") {
            return Err(perr(*n, "expected `step`"));
        }
        let idx: usize = num(*n, it.next().unwrap_or(""), "step index")?;
        if idx != steps.len() {
            return Err(perr(
                *n,
                format!("step {idx} out of order, expected {}", steps.len()),
            ));
        }
        let new = parse_ids(*n, field(*n, it.next(), "new")?)?;
        let act = parse_ids(*n, field(*n, it.next(), "act")?)?;
        if it.next().is_some() {
            return Err(perr(*n, "trailing fields"));
        }
        steps.push(ActivationStep::new(act, new));
    }
    Ok(ActivationTrace::new(initial, steps)?)
}

pub fn write_clusters<W: Write>(w: &mut W, cs: &ClusterSet, comments: &[String]) -> io::Result<()> {
    writeln!(w, "kvclust 1 {} {} {}", cs.tau(), cs.n_entries(), cs.len())?;
    write_comments(w, comments)?;
    for c in cs.clusters() {
        writeln!(
            w,
            "cluster {} medoid={} members={}",
            c.id.0,
            c.medoid.0,
            format_ids(&c.members)
        )?;
    }
    Ok(())
}

pub fn read_clusters<R: BufRead>(r: R) -> Result<ClusterSet> {
    let lines = content_lines(r)?;
    let (hl, h) = header(&lines, "kvclust", 3)?;
    let tau: f64 = num(hl, h[0], "tau")?;
    let n_entries: usize = num(hl, h[1], "entry count")?;
    let n_clusters: usize = num(hl, h[2], "cluster count")?;
    let mut members = Vec::new();
    for (n, l) in &lines[1..] {
        let mut it = l.split_whitespace();
        if it.next() != Some("cluster") {
            return Err(perr(*n, "expected `cluster`"));
        }
        let id: usize = num(*n, it.next().unwrap_or(""), "cluster id")?;
        if id != members.len() {
            return Err(perr(*n, format!("cluster {id} out of order")));
        }
        let medoid: u32 = num(*n, field(*n, it.next(), "medoid")?, "medoid")?;
        let m = parse_ids(*n, field(*n, it.next(), "members")?)?;
        if m.first() != Some(&EntryId(medoid)) {
            return Err(perr(*n, "medoid must be the first member"));
        }
        if let Some(e) = m.iter().find(|e| e.index() >= n_entries) {
            return Err(perr(*n, format!("entry {} out of range", e.0)));
        }
        members.push(m);
    }
    if members.len() != n_clusters {
        return Err(perr(
            hl,
            format!("header says {n_clusters} clusters, found {}", members.len()),
        ));
    }
    Ok(ClusterSet::from_members(n_entries, tau, members)?)
}

pub fn write_placement<W: Write>(
    w: &mut W,
    pm: &PlacementMap,
    comments: &[String],
) -> io::Result<()> {
    writeln!(w, "kvplace 1 {}", pm.n_disk())?;
    write_comments(w, comments)?;
    for (e, reps) in pm.locations().iter().enumerate() {
        let list = if reps.is_empty() {
            "-".to_string()
        } else {
            reps.iter()
                .map(|s| format!("{}:{}", s.device, s.slot))
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(w, "entry {e} replicas={list}")?;
    }
    Ok(())
}

pub fn read_placement<R: BufRead>(r: R) -> Result<PlacementMap> {
    let lines = content_lines(r)?;
    let (hl, h) = header(&lines, "kvplace", 1)?;
    let n_disk: u32 = num(hl, h[0], "device count")?;
    let mut locations = Vec::new();
    for (n, l) in &lines[1..] {
        let mut it = l.split_whitespace();
        if it.next() != Some("entry") {
            return Err(perr(*n, "expected `entry`"));
        }
        let id: usize = num(*n, it.next().unwrap_or(""), "entry id")?;
        if id != locations.len() {
            return Err(perr(*n, format!("entry {id} out of order")));
        }
        let list = field(*n, it.next(), "replicas")?;
        let mut reps = Vec::new();
        if list != "-" {
            for r in list.split(',') {
                let (d, s) = r
                    .split_once(':')
                    .ok_or_else(|| perr(*n, format!("bad replica `{r}`")))?;
                reps.push(DeviceSlot {
                    device: num(*n, d, "device")?,
                    slot: num(*n, s, "slot")?,
                });
            }
        }
        locations.push(reps);
    }
    Ok(PlacementMap::from_locations(n_disk, locations)?)
}

pub fn write_groups<W: Write>(
    w: &mut W,
    groups: &[Vec<EntryId>],
    comments: &[String],
) -> io::Result<()> {
    write_comments(w, comments)?;
    for (g, m) in groups.iter().enumerate() {
        writeln!(w, "group {g} members={}", format_ids(m))?;
    }
    Ok(())
}

pub fn read_groups<R: BufRead>(r: R) -> Result<Vec<Vec<EntryId>>> {
    let mut out = Vec::new();
    for (n, l) in content_lines(r)? {
        let mut it = l.split_whitespace();
        if it.next() != Some("group") {
            return Err(perr(n, "expected `group`"));
        }
        let id: usize = num(n, it.next().unwrap_or(""), "group id")?;
        if id != out.len() {
            return Err(perr(n, format!("group {id} out of order")));
        }
        out.push(parse_ids(n, field(n, it.next(), "members")?)?);
    }
    Ok(out)
}

/// The DRAM side of a placement: medoid index, window and hot clusters.
pub fn write_dram<W: Write>(w: &mut W, d: &DramPlan, comments: &[String]) -> io::Result<()> {
    writeln!(
        w,
        "kvdram 1 {} {}",
        d.window_capacity, d.cache_budget_entries
    )?;
    write_comments(w, comments)?;
    for (c, (m, start)) in d.medoid_index.iter().enumerate() {
        writeln!(w, "medoid {c} entry={} start={start}", m.0)?;
    }
    let window: Vec<EntryId> = d.window.iter().copied().collect();
    writeln!(w, "window {}", format_ids(&window))?;
    // cluster ids share the id-list syntax
    let hot: Vec<EntryId> = d.hot_cache.iter().map(|c| EntryId(c.0)).collect();
    writeln!(w, "hot {}", format_ids(&hot))?;
    Ok(())
}

pub fn write_plan<W: Write>(w: &mut W, plan: &IoPlan) -> io::Result<()> {
    for (d, b) in plan.buckets.iter().enumerate() {
        writeln!(w, "bucket {d}: {}", format_ids(b))?;
    }
    Ok(())
}

pub fn read_plan<R: BufRead>(r: R) -> Result<IoPlan> {
    let mut buckets = Vec::new();
    for (n, l) in content_lines(r)? {
        let rest = l
            .strip_prefix("bucket ")
            .ok_or_else(|| perr(n, "expected `bucket`"))?;
        let (d, ids) = rest
            .split_once(':')
            .ok_or_else(|| perr(n, "expected `:`"))?;
        let d: usize = num(n, d.trim(), "device")?;
        if d != buckets.len() {
            return Err(perr(n, format!("bucket {d} out of order")));
        }
        buckets.push(parse_ids(n, ids.trim())?);
    }
    Ok(IoPlan::from_buckets(buckets))
}
