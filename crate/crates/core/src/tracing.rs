//! Spans across the abstraction levels and their latency summaries.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("span `{0}` ends before it starts")]
    NegativeDuration(String),
    #[error("span `{0}` has level `none`")]
    NoLevel(String),
    #[error("duplicate span id `{0}`")]
    Duplicate(String),
    #[error("span `{child}` [{child_start}, {child_end}] is not inside parent `{parent}` [{parent_start}, {parent_end}]")]
    NotContained {
        child: String,
        parent: String,
        child_start: u64,
        child_end: u64,
        parent_start: u64,
        parent_end: u64,
    },
    #[error("span `{child}` ({child_level}) is coarser than its parent `{parent}` ({parent_level})")]
    LevelOrder {
        child: String,
        parent: String,
        child_level: TraceLevel,
        parent_level: TraceLevel,
    },
    #[error("span `{span}` references unknown parent `{parent}`")]
    UnknownParent { span: String, parent: String },
    #[error("cyclic parent references through `{0}`")]
    Cycle(String),
}

/// Abstraction levels from coarsest to finest. `None` is only meaningful
/// as a requested level and disables collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    #[default]
    None,
    Application,
    Model,
    Framework,
    Layer,
    Library,
    Hardware,
}

impl TraceLevel {
    pub const SPAN_LEVELS: [TraceLevel; 6] = [
        TraceLevel::Application,
        TraceLevel::Model,
        TraceLevel::Framework,
        TraceLevel::Layer,
        TraceLevel::Library,
        TraceLevel::Hardware,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TraceLevel::None => "none",
            TraceLevel::Application => "application",
            TraceLevel::Model => "model",
            TraceLevel::Framework => "framework",
            TraceLevel::Layer => "layer",
            TraceLevel::Library => "library",
            TraceLevel::Hardware => "hardware",
        }
    }

    /// Whether a span at `level` is kept when `self` was requested.
    pub fn collects(self, level: TraceLevel) -> bool {
        level != TraceLevel::None && level <= self
    }
}

impl fmt::Display for TraceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TraceLevel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        std::iter::once(TraceLevel::None)
            .chain(TraceLevel::SPAN_LEVELS)
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown trace level `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSpan {
    pub span_id: String,
    #[serde(default)]
    pub parent_id: Option<String>,
    pub level: TraceLevel,
    pub name: String,
    pub start_ns: u64,
    pub end_ns: u64,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

impl TraceSpan {
    pub fn new(id: &str, parent: Option<&str>, level: TraceLevel, name: &str, start_ns: u64, end_ns: u64) -> Self {
        Self {
            span_id: id.to_string(),
            parent_id: parent.map(str::to_string),
            level,
            name: name.to_string(),
            start_ns,
            end_ns,
            tags: BTreeMap::new(),
        }
    }

    pub fn with_tag(mut self, key: &str, value: &str) -> Self {
        self.tags.insert(key.to_string(), value.to_string());
        self
    }

    pub fn duration_ns(&self) -> u64 {
        self.end_ns.saturating_sub(self.start_ns)
    }

    /// Logical layers covered by a fused span, from its `fused_of` tag
    /// (`a,b` or `[a, b]`). Empty when not fused.
    pub fn fused_of(&self) -> Vec<String> {
        self.tags
            .get("fused_of")
            .map(|v| {
                v.trim_matches(|c| c == '[' || c == ']')
                    .split(',')
                    .map(|s| s.trim().trim_matches('"').to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }
}

fn check_pair(parent: &TraceSpan, child: &TraceSpan) -> Result<(), TraceError> {
    if child.start_ns < parent.start_ns || child.end_ns > parent.end_ns {
        return Err(TraceError::NotContained {
            child: child.span_id.clone(),
            parent: parent.span_id.clone(),
            child_start: child.start_ns,
            child_end: child.end_ns,
            parent_start: parent.start_ns,
            parent_end: parent.end_ns,
        });
    }
    if child.level < parent.level {
        return Err(TraceError::LevelOrder {
            child: child.span_id.clone(),
            parent: parent.span_id.clone(),
            child_level: child.level,
            parent_level: parent.level,
        });
    }
    Ok(())
}

fn check_span(span: &TraceSpan) -> Result<(), TraceError> {
    if span.end_ns < span.start_ns {
        return Err(TraceError::NegativeDuration(span.span_id.clone()));
    }
    if span.level == TraceLevel::None {
        return Err(TraceError::NoLevel(span.span_id.clone()));
    }
    Ok(())
}

/// Checks a whole trace: every span valid, ids unique, parents known,
/// no cycles, containment and level order on every edge.
pub fn validate_spans(spans: &[TraceSpan]) -> Result<(), TraceError> {
    let mut by_id: HashMap<&str, &TraceSpan> = HashMap::with_capacity(spans.len());
    for s in spans {
        check_span(s)?;
        if by_id.insert(&s.span_id, s).is_some() {
            return Err(TraceError::Duplicate(s.span_id.clone()));
        }
    }
    for s in spans {
        if let Some(pid) = &s.parent_id {
            let parent = by_id.get(pid.as_str()).ok_or_else(|| TraceError::UnknownParent {
                span: s.span_id.clone(),
                parent: pid.clone(),
            })?;
            check_pair(parent, s)?;
        }
    }
    // containment alone cannot rule out equal-interval loops
    let mut acyclic: HashSet<&str> = HashSet::new();
    for s in spans {
        let mut path = HashSet::new();
        let mut cur = s;
        loop {
            if acyclic.contains(cur.span_id.as_str()) {
                break;
            }
            if !path.insert(cur.span_id.as_str()) {
                return Err(TraceError::Cycle(cur.span_id.clone()));
            }
            match cur.parent_id.as_deref() {
                Some(pid) => cur = by_id[pid],
                None => break,
            }
        }
        acyclic.extend(path);
    }
    Ok(())
}

/// Whether a span was kept by [`TraceCollector::record`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recorded {
    Kept,
    Dropped,
}

/// Per-evaluation span buffer. Spans finer than the requested level are
/// dropped on arrival; the rest are checked against whichever of their
/// parent and children have already arrived.
#[derive(Debug)]
pub struct TraceCollector {
    level: TraceLevel,
    spans: Mutex<Vec<TraceSpan>>,
}

impl TraceCollector {
    pub fn new(level: TraceLevel) -> Self {
        Self {
            level,
            spans: Mutex::new(Vec::new()),
        }
    }

    pub fn level(&self) -> TraceLevel {
        self.level
    }

    pub fn record(&self, span: TraceSpan) -> Result<Recorded, TraceError> {
        check_span(&span)?;
        if !self.level.collects(span.level) {
            return Ok(Recorded::Dropped);
        }
        let mut spans = self.spans.lock().expect("trace buffer poisoned");
        for other in spans.iter() {
            if other.span_id == span.span_id {
                return Err(TraceError::Duplicate(span.span_id));
            }
            if span.parent_id.as_deref() == Some(other.span_id.as_str()) {
                check_pair(other, &span)?;
            }
            if other.parent_id.as_deref() == Some(span.span_id.as_str()) {
                check_pair(&span, other)?;
            }
        }
        spans.push(span);
        Ok(Recorded::Kept)
    }

    /// The collected spans ordered by start time, after a full check.
    pub fn finish(&self) -> Result<Vec<TraceSpan>, TraceError> {
        let mut spans = self.spans.lock().expect("trace buffer poisoned").clone();
        validate_spans(&spans)?;
        spans.sort_by(|a, b| (a.start_ns, &a.span_id).cmp(&(b.start_ns, &b.span_id)));
        Ok(spans)
    }
}

/// Monotonic nanosecond clock plus id source for producing spans.
#[derive(Debug)]
pub struct Tracer {
    origin: Instant,
    next_id: AtomicU64,
    prefix: String,
    collector: TraceCollector,
}

/// A span that has been started but not recorded.
#[derive(Debug, Clone)]
pub struct OpenSpan {
    pub span_id: String,
    parent_id: Option<String>,
    level: TraceLevel,
    name: String,
    start_ns: u64,
}

impl Tracer {
    pub fn new(level: TraceLevel, prefix: &str) -> Self {
        Self {
            origin: Instant::now(),
            next_id: AtomicU64::new(1),
            prefix: prefix.to_string(),
            collector: TraceCollector::new(level),
        }
    }

    pub fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    pub fn level(&self) -> TraceLevel {
        self.collector.level()
    }

    pub fn start(&self, level: TraceLevel, name: &str, parent: Option<&OpenSpan>) -> OpenSpan {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        OpenSpan {
            span_id: format!("{}-{n}", self.prefix),
            parent_id: parent.map(|p| p.span_id.clone()),
            level,
            name: name.to_string(),
            start_ns: self.now_ns(),
        }
    }

    pub fn end(&self, open: OpenSpan, tags: &[(&str, String)]) -> Result<Recorded, TraceError> {
        let end_ns = self.now_ns();
        self.collector.record(TraceSpan {
            span_id: open.span_id,
            parent_id: open.parent_id,
            level: open.level,
            name: open.name,
            start_ns: open.start_ns,
            end_ns,
            tags: tags.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        })
    }

    pub fn finish(&self) -> Result<Vec<TraceSpan>, TraceError> {
        self.collector.finish()
    }
}

// ---------------------------------------------------------------------------
// Summaries

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRow {
    pub name: String,
    pub duration_ns: u64,
    /// Number of spans aggregated into this row.
    pub count: usize,
    /// Library-level calls under the layer's spans.
    pub library_calls: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fused_of: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEntry {
    pub span_id: String,
    pub name: String,
    pub level: TraceLevel,
    pub duration_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatencySummary {
    /// Wall time covered by root spans.
    pub total_ns: u64,
    /// Covered time per level; overlapping spans count once.
    pub per_level_ns: BTreeMap<TraceLevel, u64>,
    /// Ordered by first start time, then name.
    pub layers: Vec<LayerRow>,
    pub critical_path: Vec<PathEntry>,
}

/// Length of the union of half-open intervals.
pub fn union_length(intervals: &mut [(u64, u64)]) -> u64 {
    intervals.sort_unstable();
    let mut total = 0;
    let mut current: Option<(u64, u64)> = None;
    for &(s, e) in intervals.iter() {
        match current {
            Some((cs, ce)) if s <= ce => current = Some((cs, ce.max(e))),
            Some((cs, ce)) => {
                total += ce - cs;
                current = Some((s, e));
            }
            None => current = Some((s, e)),
        }
    }
    if let Some((cs, ce)) = current {
        total += ce - cs;
    }
    total
}

pub fn summarize(spans: &[TraceSpan]) -> Result<LatencySummary, TraceError> {
    validate_spans(spans)?;
    let mut per_level = BTreeMap::new();
    for level in TraceLevel::SPAN_LEVELS {
        let mut iv: Vec<_> = spans
            .iter()
            .filter(|s| s.level == level)
            .map(|s| (s.start_ns, s.end_ns))
            .collect();
        if !iv.is_empty() {
            per_level.insert(level, union_length(&mut iv));
        }
    }
    let mut roots: Vec<_> = spans
        .iter()
        .filter(|s| s.parent_id.is_none())
        .map(|s| (s.start_ns, s.end_ns))
        .collect();
    let total_ns = union_length(&mut roots);

    let mut children: HashMap<&str, Vec<&TraceSpan>> = HashMap::new();
    for s in spans {
        if let Some(p) = &s.parent_id {
            children.entry(p.as_str()).or_default().push(s);
        }
    }
    fn count_library(id: &str, children: &HashMap<&str, Vec<&TraceSpan>>) -> usize {
        children.get(id).map_or(0, |cs| {
            cs.iter()
                .map(|c| usize::from(c.level == TraceLevel::Library) + count_library(&c.span_id, children))
                .sum()
        })
    }

    let mut rows: BTreeMap<&str, (u64, LayerRow)> = BTreeMap::new();
    for s in spans.iter().filter(|s| s.level == TraceLevel::Layer) {
        let entry = rows.entry(s.name.as_str()).or_insert_with(|| {
            (
                s.start_ns,
                LayerRow {
                    name: s.name.clone(),
                    duration_ns: 0,
                    count: 0,
                    library_calls: 0,
                    fused_of: Vec::new(),
                },
            )
        });
        entry.0 = entry.0.min(s.start_ns);
        entry.1.duration_ns += s.duration_ns();
        entry.1.count += 1;
        entry.1.library_calls += count_library(&s.span_id, &children);
        for f in s.fused_of() {
            if !entry.1.fused_of.contains(&f) {
                entry.1.fused_of.push(f);
            }
        }
    }
    let mut rows: Vec<_> = rows.into_values().collect();
    rows.sort_by(|a, b| (a.0, &a.1.name).cmp(&(b.0, &b.1.name)));

    // longest root, then repeatedly its longest child
    let longest = |cands: &[&TraceSpan]| -> Option<TraceSpan> {
        cands
            .iter()
            .min_by(|a, b| {
                b.duration_ns()
                    .cmp(&a.duration_ns())
                    .then(a.start_ns.cmp(&b.start_ns))
                    .then(a.span_id.cmp(&b.span_id))
            })
            .map(|s| (*s).clone())
    };
    let root_spans: Vec<&TraceSpan> = spans.iter().filter(|s| s.parent_id.is_none()).collect();
    let mut critical_path = Vec::new();
    let mut cur = longest(&root_spans);
    while let Some(s) = cur {
        critical_path.push(PathEntry {
            span_id: s.span_id.clone(),
            name: s.name.clone(),
            level: s.level,
            duration_ns: s.duration_ns(),
        });
        cur = children.get(s.span_id.as_str()).and_then(|cs| longest(cs));
    }

    Ok(LatencySummary {
        total_ns,
        per_level_ns: per_level,
        layers: rows.into_iter().map(|(_, r)| r).collect(),
        critical_path,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompareRow {
    /// Member layer names joined with `+`.
    pub layer: String,
    pub members: Vec<String>,
    pub a_ns: Option<u64>,
    pub b_ns: Option<u64>,
    /// `a - b` when both sides have the layer.
    pub delta_ns: Option<i64>,
    pub matched: bool,
    /// Some row in the group is a fused span.
    pub fused: bool,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let p = self.parent[x];
        if p == x {
            return x;
        }
        let r = self.find(p);
        self.parent[x] = r;
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Matches layer rows across two summaries. A fused row and the rows of
/// the layers it covers land in one group, so a fused conv+relu compares
/// against separate conv and relu.
pub fn compare(a: &LatencySummary, b: &LatencySummary) -> Vec<CompareRow> {
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut intern = |n: &str, names: &mut Vec<String>| -> usize {
        *index.entry(n.to_string()).or_insert_with(|| {
            names.push(n.to_string());
            names.len() - 1
        })
    };
    let mut row_ids: Vec<(usize, bool, &LayerRow)> = Vec::new();
    let mut links: Vec<(usize, usize)> = Vec::new();
    for (side_a, summary) in [(true, a), (false, b)] {
        for row in &summary.layers {
            let id = intern(&row.name, &mut names);
            for f in &row.fused_of {
                let fid = intern(f, &mut names);
                links.push((id, fid));
            }
            row_ids.push((id, side_a, row));
        }
    }
    let mut uf = UnionFind {
        parent: (0..names.len()).collect(),
    };
    for (x, y) in links {
        uf.union(x, y);
    }

    let mut groups: Vec<usize> = Vec::new();
    let mut acc: HashMap<usize, CompareRow> = HashMap::new();
    for &(id, side_a, row) in &row_ids {
        let g = uf.find(id);
        let entry = acc.entry(g).or_insert_with(|| {
            groups.push(g);
            CompareRow {
                layer: String::new(),
                members: Vec::new(),
                a_ns: None,
                b_ns: None,
                delta_ns: None,
                matched: false,
                fused: false,
            }
        });
        let slot = if side_a { &mut entry.a_ns } else { &mut entry.b_ns };
        *slot = Some(slot.unwrap_or(0) + row.duration_ns);
        entry.fused |= !row.fused_of.is_empty();
        for n in std::iter::once(&row.name).chain(&row.fused_of) {
            if !entry.members.contains(n) {
                entry.members.push(n.clone());
            }
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let mut row = acc.remove(&g).expect("group present");
            row.layer = row.members.join("+");
            row.matched = row.a_ns.is_some() && row.b_ns.is_some();
            row.delta_ns = match (row.a_ns, row.b_ns) {
                (Some(x), Some(y)) => Some(x as i64 - y as i64),
                _ => None,
            };
            row
        })
        .collect()
}
