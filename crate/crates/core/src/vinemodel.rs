//! Vine copula models: pseudo-data recursion, sampling, log-likelihood and
//! the stacked score vector.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paircop::{clamp_unit, FamilyTag, PairCopula, Side};
use crate::special::norm_quantile;
use crate::vinestruct::{EdgeInput, RVineStructure, StructureJson, StructureKind};

/// Default degrees of freedom for Student's t models built from a
/// [`ThetaModelSpec`].
pub const DEFAULT_NU: f64 = 4.0;

/// Rows per parallel work item.
const ROW_CHUNK: usize = 512;

/// Column-major `n x d` matrix of observations.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn from_columns(cols: Vec<Vec<f64>>) -> Result<Self> {
        let d = cols.len();
        let n = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("columns differ in length".into()));
        }
        Ok(SampleMatrix {
            n,
            d,
            data: cols.concat(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = vec![0.0; n * d];
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Dimension(format!("row {} has {} entries, expected {d}", i + 1, r.len())));
            }
            for (j, &x) in r.iter().enumerate() {
                data[j * n + i] = x;
            }
        }
        Ok(SampleMatrix { n, d, data })
    }

    /// From a row-major buffer.
    pub fn from_row_major(n: usize, d: usize, buf: &[f64]) -> Self {
        assert_eq!(buf.len(), n * d);
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                data[j * n + i] = buf[i * d + j];
            }
        }
        SampleMatrix { n, d, data }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.d
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.d).map(|j| self.get(i, j)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        SampleMatrix {
            n: self.n,
            d: self.d,
            data: self.data.par_iter().map(|&x| f(x)).collect(),
        }
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.d);
        for j in 0..self.d {
            let c = self.col(j);
            data.extend(idx.iter().map(|&i| c[i]));
        }
        SampleMatrix {
            n: idx.len(),
            d: self.d,
            data,
        }
    }

    fn check_unit(&self) -> Result<()> {
        match self.data.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            Some(&x) => Err(Error::Domain(x)),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaModel {
    Zero,
    Geometric,
    Harmonic,
    SqrtSlow,
}

impl ThetaModel {
    pub fn name(self) -> &'static str {
        match self {
            ThetaModel::Zero => "zero",
            ThetaModel::Geometric => "geometric",
            ThetaModel::Harmonic => "harmonic",
            ThetaModel::SqrtSlow => "sqrt-slow",
        }
    }
}

impl FromStr for ThetaModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zero" => Ok(ThetaModel::Zero),
            "geometric" => Ok(ThetaModel::Geometric),
            "harmonic" => Ok(ThetaModel::Harmonic),
            "sqrt-slow" | "sqrtslow" | "sqrt" => Ok(ThetaModel::SqrtSlow),
            other => Err(Error::Parse(format!("unknown theta model `{other}`"))),
        }
    }
}

impl std::fmt::Display for ThetaModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-tree true parameter values; every edge of a tree shares its value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaModelSpec {
    pub name: ThetaModel,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl ThetaModelSpec {
    pub fn new(name: ThetaModel) -> Self {
        ThetaModelSpec { name, scale: 1.0 }
    }

    /// Value for 1-based tree `t`.
    pub fn value(&self, t: usize) -> f64 {
        let t = t as f64;
        let base = match self.name {
            ThetaModel::Zero => 0.0,
            ThetaModel::Geometric => 0.5_f64.powf(t),
            ThetaModel::Harmonic => 1.0 / (t + 1.0),
            ThetaModel::SqrtSlow => 0.5 / (t + 1.0).sqrt(),
        };
        self.scale * base
    }
}

/// Scale on which pseudo-data are carried. Vines built only from Gaussian
/// and independence copulas run on normal scores, which avoids a quantile
/// and a CDF call per edge and keeps full precision in the upper tail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Uniform,
    Normal,
}

impl Scale {
    pub fn for_copulas<'a>(cs: impl IntoIterator<Item = &'a PairCopula>) -> Scale {
        if cs.into_iter().all(PairCopula::has_normal_kernels) {
            Scale::Normal
        } else {
            Scale::Uniform
        }
    }

    pub fn for_families(fams: &[FamilyTag]) -> Scale {
        if fams
            .iter()
            .all(|f| matches!(f, FamilyTag::Gaussian | FamilyTag::Independence))
        {
            Scale::Normal
        } else {
            Scale::Uniform
        }
    }

    #[inline]
    pub fn from_unit(self, u: f64) -> f64 {
        match self {
            Scale::Uniform => clamp_unit(u),
            Scale::Normal => norm_quantile(clamp_unit(u)),
        }
    }

    #[inline]
    pub fn h(self, c: &PairCopula, a: f64, b: f64, side: Side) -> f64 {
        match self {
            Scale::Uniform => clamp_unit(c.h(a, b, side)),
            Scale::Normal => c.h_normal(a, b, side),
        }
    }

    #[inline]
    pub fn ln_pdf(self, c: &PairCopula, a: f64, b: f64) -> f64 {
        match self {
            Scale::Uniform => c.ln_pdf(a, b),
            Scale::Normal => c.ln_pdf_normal(a, b),
        }
    }

    #[inline]
    pub fn score(self, c: &PairCopula, a: f64, b: f64, out: &mut [f64]) {
        match self {
            Scale::Uniform => c.score_into(a, b, out),
            Scale::Normal => c.score_normal(a, b, out),
        }
    }
}

/// Inputs `(u_{a|D}, u_{b|D})` of one edge for every observation, on the
/// copula scale or as normal scores depending on the [`Scale`] used.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeData {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoData {
    pub n: usize,
    /// `trees[t][e]` feeds edge `e` of tree `t + 1`.
    pub trees: Vec<Vec<EdgeData>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VineModel {
    pub structure: RVineStructure,
    /// One pair copula per edge in flat (tree-major) order.
    pub copulas: Vec<PairCopula>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelJson {
    pub structure: StructureJson,
    pub families: Vec<FamilyTag>,
    pub theta: Vec<f64>,
}

/// Tree-1 inputs taken from the raw margins.
pub fn first_tree_inputs(structure: &RVineStructure, u: &SampleMatrix, scale: Scale) -> Vec<EdgeData> {
    structure.trees[0]
        .par_iter()
        .map(|e| {
            let col = |inp: EdgeInput| match inp {
                EdgeInput::Raw(v) => u.col(v).iter().map(|&x| scale.from_unit(x)).collect(),
                EdgeInput::Parent { .. } => unreachable!("tree-1 edge with a parent"),
            };
            EdgeData {
                u: col(e.input_a),
                v: col(e.input_b),
            }
        })
        .collect()
}

/// Inputs of tree `t + 1` (0-based `t >= 1`) from the inputs and copulas of
/// tree `t`. Each parent output is computed once even when shared.
pub fn next_tree_inputs(
    structure: &RVineStructure,
    t: usize,
    prev_copulas: &[PairCopula],
    prev: &[EdgeData],
    scale: Scale,
) -> Vec<EdgeData> {
    let tree = &structure.trees[t];
    let side_idx = |s: Side| match s {
        Side::FirstGivenSecond => 0,
        Side::SecondGivenFirst => 1,
    };
    let mut needed = vec![false; 2 * prev.len()];
    for e in tree {
        for inp in [e.input_a, e.input_b] {
            if let EdgeInput::Parent { index, side } = inp {
                needed[2 * index + side_idx(side)] = true;
            }
        }
    }
    let outputs: Vec<Option<Vec<f64>>> = (0..2 * prev.len())
        .into_par_iter()
        .map(|k| {
            if !needed[k] {
                return None;
            }
            let (idx, side) = (
                k / 2,
                if k % 2 == 0 {
                    Side::FirstGivenSecond
                } else {
                    Side::SecondGivenFirst
                },
            );
            let c = &prev_copulas[idx];
            let data = &prev[idx];
            Some(
                data.u
                    .iter()
                    .zip(&data.v)
                    .map(|(&a, &b)| scale.h(c, a, b, side))
                    .collect(),
            )
        })
        .collect();
    tree.par_iter()
        .map(|e| {
            let get = |inp: EdgeInput| match inp {
                EdgeInput::Parent { index, side } => {
                    outputs[2 * index + side_idx(side)].clone().expect("output computed")
                }
                EdgeInput::Raw(_) => unreachable!("raw input above tree 1"),
            };
            EdgeData {
                u: get(e.input_a),
                v: get(e.input_b),
            }
        })
        .collect()
}

impl VineModel {
    pub fn new(structure: RVineStructure, copulas: Vec<PairCopula>) -> Result<Self> {
        if copulas.len() != structure.n_edges() {
            return Err(Error::Dimension(format!(
                "{} copulas for {} edges",
                copulas.len(),
                structure.n_edges()
            )));
        }
        for c in &copulas {
            c.validate()?;
        }
        Ok(VineModel { structure, copulas })
    }

    /// Every edge of tree `t` gets `family` at `spec.value(t)`; Student's t
    /// edges use that value as `rho` and `nu` as degrees of freedom.
    pub fn from_theta_model(
        structure: RVineStructure,
        family: FamilyTag,
        spec: &ThetaModelSpec,
        nu: f64,
    ) -> Result<Self> {
        let mut copulas = Vec::with_capacity(structure.n_edges());
        for (ti, tree) in structure.trees.iter().enumerate() {
            let th = spec.value(ti + 1);
            let params: Vec<f64> = match family {
                FamilyTag::Independence => vec![],
                FamilyTag::Gaussian | FamilyTag::GumbelSigned => vec![th],
                FamilyTag::StudentT => vec![th, nu],
            };
            let c = PairCopula::new(family, &params)?;
            copulas.extend(std::iter::repeat_n(c, tree.len()));
        }
        Self::new(structure, copulas)
    }

    pub fn independence(structure: RVineStructure, family: FamilyTag) -> Result<Self> {
        Self::from_theta_model(structure, family, &ThetaModelSpec::new(ThetaModel::Zero), DEFAULT_NU)
    }

    pub fn d(&self) -> usize {
        self.structure.d
    }

    pub fn families(&self) -> Vec<FamilyTag> {
        self.copulas.iter().map(PairCopula::family).collect()
    }

    /// Start of each edge's block in the flat parameter vector, plus the
    /// total length at the end.
    pub fn param_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.copulas.len() + 1);
        let mut acc = 0;
        off.push(0);
        for c in &self.copulas {
            acc += c.family().arity();
            off.push(acc);
        }
        off
    }

    pub fn param_count(&self) -> usize {
        self.copulas.iter().map(|c| c.family().arity()).sum()
    }

    /// 1-based tree of each parameter.
    pub fn param_trees(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.param_count());
        let mut k = 0;
        for tree in &self.structure.trees {
            for e in tree {
                out.extend(std::iter::repeat_n(e.tree, self.copulas[k].family().arity()));
                k += 1;
            }
        }
        out
    }

    pub fn theta(&self) -> Vec<f64> {
        self.copulas.iter().flat_map(PairCopula::params).collect()
    }

    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        let m = self.with_theta_unchecked(theta)?;
        for c in &m.copulas {
            c.validate()?;
        }
        Ok(m)
    }

    /// No domain check on the new values.
    pub fn with_theta_unchecked(&self, theta: &[f64]) -> Result<Self> {
        let off = self.param_offsets();
        if theta.len() != *off.last().unwrap() {
            return Err(Error::Dimension(format!(
                "theta has length {}, expected {}",
                theta.len(),
                off.last().unwrap()
            )));
        }
        let copulas = self
            .copulas
            .iter()
            .enumerate()
            .map(|(k, c)| c.with_params_unchecked(&theta[off[k]..off[k + 1]]))
            .collect();
        Ok(VineModel {
            structure: self.structure.clone(),
            copulas,
        })
    }

    fn check_data(&self, u: &SampleMatrix) -> Result<()> {
        if u.ncols() != self.d() {
            return Err(Error::Dimension(format!(
                "data has {} columns, model has dimension {}",
                u.ncols(),
                self.d()
            )));
        }
        u.check_unit()
    }

    fn tree_copulas(&self, t: usize) -> &[PairCopula] {
        let off = self.structure.tree_offsets();
        &self.copulas[off[t]..off[t + 1]]
    }

    pub fn pseudo_data(&self, u: &SampleMatrix) -> Result<PseudoData> {
        self.check_data(u)?;
        let mut trees = Vec::with_capacity(self.structure.trunc);
        trees.push(first_tree_inputs(&self.structure, u, Scale::Uniform));
        for t in 1..self.structure.trunc {
            let next = next_tree_inputs(&self.structure, t, self.tree_copulas(t - 1), &trees[t - 1], Scale::Uniform);
            trees.push(next);
        }
        Ok(PseudoData { n: u.nrows(), trees })
    }

    pub fn scale(&self) -> Scale {
        Scale::for_copulas(&self.copulas)
    }

    /// Calls `f(t, copulas of tree t, inputs of tree t)` tree by tree on
    /// `scale`, keeping only one tree of pseudo-data alive.
    pub fn for_each_tree<F>(&self, u: &SampleMatrix, scale: Scale, mut f: F) -> Result<()>
    where
        F: FnMut(usize, &[PairCopula], &[EdgeData]),
    {
        self.check_data(u)?;
        let mut cur = first_tree_inputs(&self.structure, u, scale);
        for t in 0..self.structure.trunc {
            f(t, self.tree_copulas(t), &cur);
            if t + 1 < self.structure.trunc {
                cur = next_tree_inputs(&self.structure, t + 1, self.tree_copulas(t), &cur, scale);
            }
        }
        Ok(())
    }

    pub fn loglik(&self, u: &SampleMatrix) -> Result<f64> {
        Ok(self.loglik_by_tree(u)?.iter().sum())
    }

    /// Log-likelihood contribution of each tree.
    pub fn loglik_by_tree(&self, u: &SampleMatrix) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.structure.trunc);
        let scale = self.scale();
        self.for_each_tree(u, scale, |_, cops, data| {
            let per_edge: Vec<f64> = cops
                .par_iter()
                .zip(data)
                .map(|(c, e)| e.u.iter().zip(&e.v).map(|(&a, &b)| scale.ln_pdf(c, a, b)).sum())
                .collect();
            out.push(per_edge.iter().sum::<f64>());
        })?;
        Ok(out)
    }

    /// Stacked scores for every row: `out[j][i]` is entry `j` of `phi` at
    /// row `i`.
    pub fn phi_columns(&self, u: &SampleMatrix) -> Result<Vec<Vec<f64>>> {
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(self.param_count());
        let scale = self.scale();
        self.for_each_tree(u, scale, |_, cops, data| {
            let per_edge: Vec<Vec<Vec<f64>>> = cops
                .par_iter()
                .zip(data)
                .map(|(c, e)| {
                    let k = c.family().arity();
                    let mut out = vec![Vec::with_capacity(e.u.len()); k];
                    let mut s = [0.0; 2];
                    for (&a, &b) in e.u.iter().zip(&e.v) {
                        scale.score(c, a, b, &mut s);
                        for (o, &x) in out.iter_mut().zip(&s[..k]) {
                            o.push(x);
                        }
                    }
                    out
                })
                .collect();
            cols.extend(per_edge.into_iter().flatten());
        })?;
        Ok(cols)
    }

    /// Column means of [`Self::phi_columns`].
    pub fn phi_mean(&self, u: &SampleMatrix) -> Result<Vec<f64>> {
        let n = u.nrows() as f64;
        Ok(self
            .phi_columns(u)?
            .iter()
            .map(|c| c.iter().sum::<f64>() / n)
            .collect())
    }

    /// Estimating function at a single observation.
    pub fn phi(&self, row: &[f64]) -> Result<Vec<f64>> {
        let m = SampleMatrix::from_rows(&[row.to_vec()])?;
        Ok(self.phi_columns(&m)?.into_iter().map(|c| c[0]).collect())
    }

    /// Row-major `n x p` matrix of `phi` values.
    pub fn phi_matrix(&self, u: &SampleMatrix) -> Result<Vec<Vec<f64>>> {
        let cols = self.phi_columns(u)?;
        Ok((0..u.nrows())
            .map(|i| cols.iter().map(|c| c[i]).collect())
            .collect())
    }

    /// Draws `n` observations by inverse Rosenblatt transformation.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<SampleMatrix> {
        let d = self.d();
        let plan = self.structure.sampling_plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf: Vec<f64> = (0..n * d).map(|_| rng.sample(Open01)).collect();
        let toff = self.structure.tree_offsets();
        let n_edges = self.structure.n_edges();
        let trunc = self.structure.trunc;
        let results: Vec<Result<()>> = buf
            .par_chunks_mut(d * ROW_CHUNK)
            .map(|chunk| {
                let mut out = vec![[0.0f64; 2]; n_edges];
                let mut vals = vec![0.0f64; d];
                for row in chunk.chunks_mut(d) {
                    self.rosenblatt_row(&plan, &toff, trunc, row, &mut vals, &mut out)?;
                    row.copy_from_slice(&vals);
                }
                Ok(())
            })
            .collect();
        results.into_iter().collect::<Result<()>>()?;
        Ok(SampleMatrix::from_row_major(n, d, &buf))
    }

    fn rosenblatt_row(
        &self,
        plan: &[crate::vinestruct::SampleStep],
        toff: &[usize],
        trunc: usize,
        w: &[f64],
        vals: &mut [f64],
        out: &mut [[f64; 2]],
    ) -> Result<()> {
        let fetch = |inp: EdgeInput, t: usize, vals: &[f64], out: &[[f64; 2]]| match inp {
            EdgeInput::Raw(v) => vals[v],
            EdgeInput::Parent { index, side } => {
                out[toff[t - 1] + index][match side {
                    Side::FirstGivenSecond => 0,
                    Side::SecondGivenFirst => 1,
                }]
            }
        };
        for (k, step) in plan.iter().enumerate() {
            let var = step.var;
            let mut x = clamp_unit(w[k]);
            for &(t, e) in step.chain.iter().rev() {
                let edge = &self.structure.trees[t][e];
                let c = &self.copulas[toff[t] + e];
                let (partner, side) = if edge.a == var {
                    (edge.input_b, Side::FirstGivenSecond)
                } else {
                    (edge.input_a, Side::SecondGivenFirst)
                };
                x = c.h_inv(x, fetch(partner, t, vals, out), side)?;
            }
            vals[var] = x;
            for &(t, e) in &step.chain {
                if t + 1 >= trunc {
                    break;
                }
                let edge = &self.structure.trees[t][e];
                let c = &self.copulas[toff[t] + e];
                let a = fetch(edge.input_a, t, vals, out);
                let b = fetch(edge.input_b, t, vals, out);
                out[toff[t] + e] = [
                    clamp_unit(c.h(a, b, Side::FirstGivenSecond)),
                    clamp_unit(c.h(a, b, Side::SecondGivenFirst)),
                ];
            }
        }
        Ok(())
    }

    /// Correlation matrix of the normal scores implied by a Gaussian vine.
    /// Trees above the truncation level are treated as independence.
    pub fn implied_corr(&self) -> Result<DMatrix<f64>> {
        let mut rho_edges = Vec::with_capacity(self.copulas.len());
        for c in &self.copulas {
            match *c {
                PairCopula::Gaussian { rho } => rho_edges.push(rho),
                PairCopula::Independence => rho_edges.push(0.0),
                other => {
                    return Err(Error::FamilyMismatch {
                        expected: "gaussian",
                        found: other.family().name(),
                    })
                }
            }
        }
        let full = self.structure.complete()?;
        let d = self.d();
        let mut r = DMatrix::<f64>::identity(d, d);
        let mut k = 0;
        for tree in &full.trees {
            for e in tree {
                let pc = if k < rho_edges.len() { rho_edges[k] } else { 0.0 };
                k += 1;
                let val = if e.cond.is_empty() {
                    pc
                } else {
                    let m = e.cond.len();
                    let sdd = DMatrix::from_fn(m, m, |i, j| r[(e.cond[i], e.cond[j])]);
                    let ra = DVector::from_fn(m, |i, _| r[(e.a, e.cond[i])]);
                    let rb = DVector::from_fn(m, |i, _| r[(e.b, e.cond[i])]);
                    let chol = sdd
                        .cholesky()
                        .ok_or_else(|| Error::Structure("conditioning block not positive definite".into()))?;
                    let sa = chol.solve(&ra);
                    let sb = chol.solve(&rb);
                    let va = 1.0 - ra.dot(&sa);
                    let vb = 1.0 - rb.dot(&sb);
                    ra.dot(&sb) + pc * (va * vb).max(0.0).sqrt()
                };
                r[(e.a, e.b)] = val;
                r[(e.b, e.a)] = val;
            }
        }
        Ok(r)
    }

    pub fn to_json(&self) -> ModelJson {
        ModelJson {
            structure: self.structure.to_json(),
            families: self.families(),
            theta: self.theta(),
        }
    }

    pub fn from_json(j: &ModelJson) -> Result<Self> {
        let structure = RVineStructure::from_json(&j.structure)?;
        if j.families.len() != structure.n_edges() {
            return Err(Error::Dimension(format!(
                "{} families for {} edges",
                j.families.len(),
                structure.n_edges()
            )));
        }
        let mut copulas = Vec::with_capacity(j.families.len());
        let mut pos = 0;
        for &f in &j.families {
            let k = f.arity();
            let params = j
                .theta
                .get(pos..pos + k)
                .ok_or_else(|| Error::Dimension("theta too short".into()))?;
            copulas.push(PairCopula::new(f, params)?);
            pos += k;
        }
        if pos != j.theta.len() {
            return Err(Error::Dimension("theta too long".into()));
        }
        Self::new(structure, copulas)
    }

    pub fn kind(&self) -> StructureKind {
        self.structure.kind
    }
}
