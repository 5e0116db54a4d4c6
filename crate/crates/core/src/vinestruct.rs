//! Regular vine tree sequences.
//!
//! Variables are 0-based internally; the JSON form uses 1-based labels.
//! Only trees up to the truncation level are stored, so a 2-truncated vine
//! on thousands of variables stays small.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paircop::Side;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructureKind {
    CVine,
    DVine,
    General,
}

impl std::str::FromStr for StructureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cvine" | "c-vine" | "c" => Ok(StructureKind::CVine),
            "dvine" | "d-vine" | "d" => Ok(StructureKind::DVine),
            "general" | "rvine" => Ok(StructureKind::General),
            other => Err(Error::Parse(format!("unknown structure `{other}`"))),
        }
    }
}

impl std::fmt::Display for StructureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StructureKind::CVine => "cvine",
            StructureKind::DVine => "dvine",
            StructureKind::General => "general",
        })
    }
}

/// Where an edge argument comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeInput {
    /// A margin of the sample (tree 1).
    Raw(usize),
    /// An h-function output of edge `index` in the previous tree.
    Parent { index: usize, side: Side },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    /// 1-based tree level.
    pub tree: usize,
    pub a: usize,
    pub b: usize,
    /// Conditioning set, sorted.
    pub cond: Vec<usize>,
    pub input_a: EdgeInput,
    pub input_b: EdgeInput,
}

impl Edge {
    /// `{a, b} ∪ D`, sorted.
    pub fn full_set(&self) -> Vec<usize> {
        let mut s = self.cond.clone();
        s.push(self.a);
        s.push(self.b);
        s.sort_unstable();
        s
    }

    pub fn contains_conditioned(&self, v: usize) -> bool {
        self.a == v || self.b == v
    }

    /// 1-based label such as `1,4;2,3`.
    pub fn label(&self) -> String {
        let mut s = format!("{},{}", self.a + 1, self.b + 1);
        if !self.cond.is_empty() {
            s.push(';');
            let d: Vec<String> = self.cond.iter().map(|v| (v + 1).to_string()).collect();
            s.push_str(&d.join(","));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RVineStructure {
    pub d: usize,
    pub trunc: usize,
    pub kind: StructureKind,
    /// `trees[t - 1]` holds tree `t`, for `t = 1..=trunc`.
    pub trees: Vec<Vec<Edge>>,
}

/// First invariant violation found by [`RVineStructure::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    /// 1-based tree.
    pub tree: usize,
    /// 0-based edge index within the tree, if edge-specific.
    pub edge: Option<usize>,
    pub reason: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.edge {
            Some(e) => write!(f, "tree {} edge {}: {}", self.tree, e, self.reason),
            None => write!(f, "tree {}: {}", self.tree, self.reason),
        }
    }
}

/// One step of sequential sampling: draw `var` by walking `chain`
/// (edges `(tree index, edge index)` with 0-based trees, ascending).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleStep {
    pub var: usize,
    pub chain: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct EdgeLabel {
    pub a: usize,
    pub b: usize,
    #[serde(rename = "D")]
    pub d: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct StructureJson {
    pub d: usize,
    pub trunc: usize,
    pub trees: Vec<Vec<EdgeLabel>>,
}

fn check_dims(d: usize, trunc: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::Structure(format!("dimension must be at least 2, got {d}")));
    }
    if trunc < 1 || trunc > d - 1 {
        return Err(Error::Structure(format!(
            "truncation level {trunc} outside [1, {}]",
            d - 1
        )));
    }
    Ok(())
}

/// Number of parameters of a `trunc`-truncated vine on `d` variables.
pub fn param_count_for(d: usize, trunc: usize, arity: usize) -> usize {
    arity * (trunc * d - trunc * (trunc + 1) / 2)
}

impl RVineStructure {
    pub fn build_dvine(d: usize) -> Result<Self> {
        Self::build_dvine_truncated(d, d.saturating_sub(1).max(1))
    }

    pub fn build_cvine(d: usize) -> Result<Self> {
        Self::build_cvine_truncated(d, d.saturating_sub(1).max(1))
    }

    pub fn build(kind: StructureKind, d: usize, trunc: usize) -> Result<Self> {
        match kind {
            StructureKind::CVine => Self::build_cvine_truncated(d, trunc),
            StructureKind::DVine => Self::build_dvine_truncated(d, trunc),
            StructureKind::General => Err(Error::Structure(
                "general structures must be loaded from labels".into(),
            )),
        }
    }

    pub fn build_dvine_truncated(d: usize, trunc: usize) -> Result<Self> {
        check_dims(d, trunc)?;
        let mut trees = Vec::with_capacity(trunc);
        for t in 1..=trunc {
            let edges = (0..d - t)
                .map(|j| {
                    let (input_a, input_b) = if t == 1 {
                        (EdgeInput::Raw(j), EdgeInput::Raw(j + 1))
                    } else {
                        (
                            EdgeInput::Parent {
                                index: j,
                                side: Side::FirstGivenSecond,
                            },
                            EdgeInput::Parent {
                                index: j + 1,
                                side: Side::SecondGivenFirst,
                            },
                        )
                    };
                    Edge {
                        tree: t,
                        a: j,
                        b: j + t,
                        cond: (j + 1..j + t).collect(),
                        input_a,
                        input_b,
                    }
                })
                .collect();
            trees.push(edges);
        }
        Ok(RVineStructure {
            d,
            trunc,
            kind: StructureKind::DVine,
            trees,
        })
    }

    pub fn build_cvine_truncated(d: usize, trunc: usize) -> Result<Self> {
        check_dims(d, trunc)?;
        let mut trees = Vec::with_capacity(trunc);
        for t in 1..=trunc {
            let root = t - 1;
            let edges = (root + 1..d)
                .map(|j| {
                    let (input_a, input_b) = if t == 1 {
                        (EdgeInput::Raw(root), EdgeInput::Raw(j))
                    } else {
                        // Parents are (root-1, root) and (root-1, j); both
                        // variables sit in the parents' second slot.
                        (
                            EdgeInput::Parent {
                                index: 0,
                                side: Side::SecondGivenFirst,
                            },
                            EdgeInput::Parent {
                                index: j - root,
                                side: Side::SecondGivenFirst,
                            },
                        )
                    };
                    Edge {
                        tree: t,
                        a: root,
                        b: j,
                        cond: (0..root).collect(),
                        input_a,
                        input_b,
                    }
                })
                .collect();
            trees.push(edges);
        }
        Ok(RVineStructure {
            d,
            trunc,
            kind: StructureKind::CVine,
            trees,
        })
    }

    /// Builds a structure from 0-based labels, deriving parent links from
    /// the conditioned and conditioning sets, and validates it.
    pub fn from_labels(d: usize, trunc: usize, labels: &[Vec<(usize, usize, Vec<usize>)>]) -> Result<Self> {
        check_dims(d, trunc)?;
        if labels.len() != trunc {
            return Err(Error::Structure(format!(
                "expected {trunc} trees, found {}",
                labels.len()
            )));
        }
        let mut trees: Vec<Vec<Edge>> = Vec::with_capacity(trunc);
        for (ti, tree_labels) in labels.iter().enumerate() {
            let t = ti + 1;
            let mut edges = Vec::with_capacity(tree_labels.len());
            let prev_full: Vec<Vec<usize>> = if t > 1 {
                trees[ti - 1].iter().map(Edge::full_set).collect()
            } else {
                Vec::new()
            };
            for (ei, (a, b, cond)) in tree_labels.iter().enumerate() {
                let (a, b) = if a < b { (*a, *b) } else { (*b, *a) };
                if b >= d {
                    return Err(Error::Structure(format!("tree {t} edge {ei}: variable out of range")));
                }
                let mut cond = cond.clone();
                cond.sort_unstable();
                let (input_a, input_b) = if t == 1 {
                    (EdgeInput::Raw(a), EdgeInput::Raw(b))
                } else {
                    let mut full: Vec<usize> = cond.clone();
                    full.push(a);
                    full.push(b);
                    full.sort_unstable();
                    let find = |v: usize| -> Option<usize> {
                        // Parent holding v: full set inside ours, missing the
                        // other conditioned variable.
                        let other = if v == a { b } else { a };
                        prev_full.iter().position(|pf| {
                            pf.len() == full.len() - 1
                                && pf.binary_search(&other).is_err()
                                && pf.iter().all(|x| full.binary_search(x).is_ok())
                        })
                    };
                    let (pa, pb) = match (find(a), find(b)) {
                        (Some(pa), Some(pb)) => (pa, pb),
                        _ => {
                            return Err(Error::Structure(format!(
                                "tree {t} edge {ei}: no parent edges match the label"
                            )))
                        }
                    };
                    let side_for = |p: usize, v: usize| {
                        if trees[ti - 1][p].a == v {
                            Side::FirstGivenSecond
                        } else {
                            Side::SecondGivenFirst
                        }
                    };
                    (
                        EdgeInput::Parent {
                            index: pa,
                            side: side_for(pa, a),
                        },
                        EdgeInput::Parent {
                            index: pb,
                            side: side_for(pb, b),
                        },
                    )
                };
                edges.push(Edge {
                    tree: t,
                    a,
                    b,
                    cond,
                    input_a,
                    input_b,
                });
            }
            trees.push(edges);
        }
        let mut s = RVineStructure {
            d,
            trunc,
            kind: StructureKind::General,
            trees,
        };
        if let Err(v) = s.validate() {
            return Err(Error::Structure(v.to_string()));
        }
        for kind in [StructureKind::CVine, StructureKind::DVine] {
            if let Ok(built) = Self::build(kind, d, trunc) {
                if built.trees == s.trees {
                    s.kind = kind;
                }
            }
        }
        Ok(s)
    }

    pub fn to_json(&self) -> StructureJson {
        StructureJson {
            d: self.d,
            trunc: self.trunc,
            trees: self
                .trees
                .iter()
                .map(|tree| {
                    tree.iter()
                        .map(|e| EdgeLabel {
                            a: e.a + 1,
                            b: e.b + 1,
                            d: e.cond.iter().map(|v| v + 1).collect(),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn from_json(j: &StructureJson) -> Result<Self> {
        let to0 = |v: usize| {
            v.checked_sub(1)
                .ok_or_else(|| Error::Structure("labels are 1-based".into()))
        };
        let mut labels = Vec::with_capacity(j.trees.len());
        for tree in &j.trees {
            let mut out = Vec::with_capacity(tree.len());
            for e in tree {
                let cond = e.d.iter().map(|&v| to0(v)).collect::<Result<Vec<_>>>()?;
                out.push((to0(e.a)?, to0(e.b)?, cond));
            }
            labels.push(out);
        }
        Self::from_labels(j.d, j.trunc, &labels)
    }

    pub fn n_edges(&self) -> usize {
        self.trees.iter().map(Vec::len).sum()
    }

    pub fn param_count(&self, arity: usize) -> usize {
        param_count_for(self.d, self.trunc, arity)
    }

    /// Offset of each tree's first edge in the flat (tree-major) edge order.
    pub fn tree_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.trees.len() + 1);
        let mut acc = 0;
        off.push(0);
        for tree in &self.trees {
            acc += tree.len();
            off.push(acc);
        }
        off
    }

    /// Edges in flat order.
    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.trees.iter().flatten()
    }

    pub fn truncated(&self, trunc: usize) -> Result<Self> {
        check_dims(self.d, trunc)?;
        if trunc > self.trunc {
            return self.with_trunc(trunc);
        }
        let mut s = self.clone();
        s.trees.truncate(trunc);
        s.trunc = trunc;
        Ok(s)
    }

    /// Same structure at a different truncation level. Deeper levels are
    /// only available for C- and D-vines.
    pub fn with_trunc(&self, trunc: usize) -> Result<Self> {
        match self.kind {
            StructureKind::CVine | StructureKind::DVine => Self::build(self.kind, self.d, trunc),
            StructureKind::General if trunc <= self.trunc => self.truncated(trunc),
            StructureKind::General => Err(Error::Structure(
                "cannot extend a truncated general structure".into(),
            )),
        }
    }

    /// All `d - 1` trees.
    pub fn complete(&self) -> Result<Self> {
        self.with_trunc(self.d - 1)
    }

    pub fn validate(&self) -> std::result::Result<(), Violation> {
        let whole = |tree: usize, reason: String| Violation {
            tree,
            edge: None,
            reason,
        };
        if self.d < 2 || self.trunc < 1 || self.trunc > self.d - 1 {
            return Err(whole(0, format!("bad dimensions d={} trunc={}", self.d, self.trunc)));
        }
        if self.trees.len() != self.trunc {
            return Err(whole(0, format!("{} trees stored, trunc is {}", self.trees.len(), self.trunc)));
        }
        for (ti, tree) in self.trees.iter().enumerate() {
            let t = ti + 1;
            if tree.len() != self.d - t {
                return Err(whole(t, format!("{} edges, expected {}", tree.len(), self.d - t)));
            }
            let mut uf = UnionFind::new(if t == 1 { self.d } else { self.d - t + 1 });
            for (ei, e) in tree.iter().enumerate() {
                let bad = |reason: String| Violation {
                    tree: t,
                    edge: Some(ei),
                    reason,
                };
                if e.tree != t {
                    return Err(bad(format!("edge records tree {}", e.tree)));
                }
                if !(e.a < e.b) || e.b >= self.d {
                    return Err(bad(format!("conditioned pair ({}, {}) invalid", e.a, e.b)));
                }
                if e.cond.len() != t - 1 {
                    return Err(bad(format!("conditioning set has {} elements", e.cond.len())));
                }
                if e.cond.windows(2).any(|w| w[0] >= w[1]) || e.cond.iter().any(|&v| v >= self.d) {
                    return Err(bad("conditioning set not sorted and unique".into()));
                }
                if e.cond.binary_search(&e.a).is_ok() || e.cond.binary_search(&e.b).is_ok() {
                    return Err(bad("conditioned variable inside conditioning set".into()));
                }
                let (na, nb) = if t == 1 {
                    match (e.input_a, e.input_b) {
                        (EdgeInput::Raw(x), EdgeInput::Raw(y)) if x == e.a && y == e.b => (x, y),
                        _ => return Err(bad("tree-1 inputs must be the raw margins".into())),
                    }
                } else {
                    let prev = &self.trees[ti - 1];
                    let (pa, sa, pb, sb) = match (e.input_a, e.input_b) {
                        (
                            EdgeInput::Parent { index: pa, side: sa },
                            EdgeInput::Parent { index: pb, side: sb },
                        ) if pa < prev.len() && pb < prev.len() && pa != pb => (pa, sa, pb, sb),
                        _ => return Err(bad("parents missing or identical".into())),
                    };
                    let fa = prev[pa].full_set();
                    let fb = prev[pb].full_set();
                    let sa_set: BTreeSet<usize> = fa.iter().copied().collect();
                    let sb_set: BTreeSet<usize> = fb.iter().copied().collect();
                    let inter: Vec<usize> = sa_set.intersection(&sb_set).copied().collect();
                    if inter.len() != t - 1 {
                        return Err(bad("proximity condition violated".into()));
                    }
                    let sym: Vec<usize> = sa_set.symmetric_difference(&sb_set).copied().collect();
                    if sym != [e.a, e.b] || !sa_set.contains(&e.a) || !sb_set.contains(&e.b) {
                        return Err(bad("conditioned pair does not match parents".into()));
                    }
                    if inter != e.cond {
                        return Err(bad("conditioning set does not match parents".into()));
                    }
                    for (p, side, v) in [(&prev[pa], sa, e.a), (&prev[pb], sb, e.b)] {
                        let expect = if p.a == v {
                            Side::FirstGivenSecond
                        } else if p.b == v {
                            Side::SecondGivenFirst
                        } else {
                            return Err(bad(format!("variable {} is not conditioned in its parent", v + 1)));
                        };
                        if side != expect {
                            return Err(bad("parent side mismatch".into()));
                        }
                    }
                    (pa, pb)
                };
                if !uf.union(na, nb) {
                    return Err(bad("edge closes a cycle".into()));
                }
            }
        }
        Ok(())
    }

    /// Order in which variables can be drawn by inverse Rosenblatt
    /// transformation, found by repeatedly peeling off a variable that is
    /// never conditioned on and is conditioned in at most one edge per tree.
    pub fn sampling_plan(&self) -> Result<Vec<SampleStep>> {
        let d = self.d;
        let tt = self.trunc;
        let mut cond_cnt = vec![0u32; d * tt];
        let mut in_d = vec![0u32; d];
        let mut by_var: Vec<Vec<(usize, usize)>> = vec![Vec::new(); d];
        for (ti, tree) in self.trees.iter().enumerate() {
            for (ei, e) in tree.iter().enumerate() {
                cond_cnt[e.a * tt + ti] += 1;
                cond_cnt[e.b * tt + ti] += 1;
                by_var[e.a].push((ti, ei));
                by_var[e.b].push((ti, ei));
                for &v in &e.cond {
                    in_d[v] += 1;
                }
            }
        }
        let mut alive_edge: Vec<Vec<bool>> = self.trees.iter().map(|t| vec![true; t.len()]).collect();
        let mut alive_var = vec![true; d];
        let mut peeled = Vec::with_capacity(d);
        for _ in 0..d {
            let v = (0..d)
                .rev()
                .find(|&v| {
                    alive_var[v] && in_d[v] == 0 && cond_cnt[v * tt..(v + 1) * tt].iter().all(|&c| c <= 1)
                })
                .ok_or_else(|| Error::Structure("no variable can be peeled off".into()))?;
            let mut chain: Vec<(usize, usize)> = by_var[v]
                .iter()
                .copied()
                .filter(|&(ti, ei)| alive_edge[ti][ei])
                .collect();
            chain.sort_unstable();
            for &(ti, ei) in &chain {
                alive_edge[ti][ei] = false;
                let e = &self.trees[ti][ei];
                cond_cnt[e.a * tt + ti] -= 1;
                cond_cnt[e.b * tt + ti] -= 1;
                for &c in &e.cond {
                    in_d[c] -= 1;
                }
            }
            if chain.iter().enumerate().any(|(k, &(ti, _))| ti != k) {
                return Err(Error::Structure(format!(
                    "variable {} does not have one edge per tree",
                    v + 1
                )));
            }
            alive_var[v] = false;
            peeled.push(SampleStep { var: v, chain });
        }
        peeled.reverse();
        Ok(peeled)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// False if already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}
