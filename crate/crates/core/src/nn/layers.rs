use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::tokenize::RadiusGraph;

/// Affine map `x·W (+ b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add_xavier(format!("{name}.weight"), d_in, d_out, rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), 1, d_out));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Two affine layers with a ReLU in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            first: Linear::new(store, &format!("{name}.0"), d_in, d_hidden, true, rng),
            second: Linear::new(store, &format!("{name}.1"), d_hidden, d_out, true, rng),
        }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.first.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.second.forward(tape, store, h)
    }
}

/// Shared per-node `relu(x·W + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseMlp {
    pub linear: Linear,
}

impl PointwiseMlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            linear: Linear::new(store, name, d_in, d_out, true, rng),
        }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.linear.forward(tape, store, x)?;
        Ok(tape.relu(y))
    }
}

/// Chebyshev polynomial filter `Σ_m T_m(L̃) x θ_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebConv {
    pub theta: Vec<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl ChebConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        order: usize,
        rng: &mut R,
    ) -> Self {
        let theta = (0..=order)
            .map(|m| store.add_xavier(format!("{name}.theta{m}"), d_in, d_out, rng))
            .collect();
        Self { theta, d_in, d_out }
    }

    pub fn order(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &ParamStore,
        x: Var,
        scaled_laplacian: &'a SparseMatrix,
    ) -> Result<Var> {
        let n = tape.value(x).rows();
        if scaled_laplacian.n_rows() != n || scaled_laplacian.n_cols() != n {
            return Err(Error::ShapeMismatch(format!(
                "operator {}x{} for {n} nodes",
                scaled_laplacian.n_rows(),
                scaled_laplacian.n_cols()
            )));
        }
        let mut prev: Option<Var> = None;
        let mut cur = x;
        let mut out: Option<Var> = None;
        for (m, &theta) in self.theta.iter().enumerate() {
            if m == 1 {
                prev = Some(cur);
                cur = tape.spmm(scaled_laplacian, x)?;
            } else if m > 1 {
                let lt = tape.spmm(scaled_laplacian, cur)?;
                let two = tape.scale(lt, 2.0);
                let next = tape.sub(two, prev.expect("order >= 2 has a previous term"))?;
                prev = Some(cur);
                cur = next;
            }
            let w = tape.param(store, theta);
            let term = tape.matmul(cur, w)?;
            out = Some(match out {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
        out.ok_or(Error::InvalidConfig("chebconv without weights".into()))
    }
}

/// How attention scores are normalized over incoming edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionNorm {
    /// Independent softmax per feature channel.
    #[default]
    PerChannel,
    /// Channel-mean score, one softmax weight per edge.
    PerEdge,
}

/// Vector attention over a radius graph with relative positional encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointTransformer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub delta: Mlp2,
    pub phi: Mlp2,
    pub norm: AttentionNorm,
    pub value_position: bool,
    pub dim: usize,
}

impl PointTransformer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        norm: AttentionNorm,
        value_position: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, false, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, false, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, false, rng),
            delta: Mlp2::new(store, &format!("{name}.delta"), 3, dim, dim, rng),
            phi: Mlp2::new(store, &format!("{name}.phi"), dim, dim, dim, rng),
            norm,
            value_position,
            dim,
        }
    }

    /// `rel` is the constant `E × 3` matrix of `p_source − p_target` offsets.
    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        store: &ParamStore,
        tokens: Var,
        graph: &'a RadiusGraph,
        rel: Var,
    ) -> Result<Var> {
        let [n, d] = tape.value(tokens).shape();
        if n != graph.n_nodes() || d != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "{n}x{d} tokens for a {}-node graph of width {}",
                graph.n_nodes(),
                self.dim
            )));
        }
        if tape.value(rel).shape() != [graph.n_edges(), 3] {
            return Err(Error::ShapeMismatch("relative positions".into()));
        }
        graph.check_incoming()?;
        let q = self.query.forward(tape, store, tokens)?;
        let k = self.key.forward(tape, store, tokens)?;
        let v = self.value.forward(tape, store, tokens)?;
        let qi = tape.gather(q, graph.targets())?;
        let kj = tape.gather(k, graph.sources())?;
        let vj = tape.gather(v, graph.sources())?;
        let diff = tape.sub(qi, kj)?;
        let rel_score = self.phi.forward(tape, store, diff)?;
        let pos = self.delta.forward(tape, store, rel)?;
        let score = tape.add(rel_score, pos)?;
        let vals = if self.value_position { tape.add(vj, pos)? } else { vj };
        let weighted = match self.norm {
            AttentionNorm::PerChannel => {
                let a = tape.segment_softmax(score, graph.targets(), n)?;
                tape.mul(a, vals)?
            }
            AttentionNorm::PerEdge => {
                let s = tape.mean_cols(score)?;
                let a = tape.segment_softmax(s, graph.targets(), n)?;
                tape.broadcast_col_mul(a, vals)?
            }
        };
        let agg = tape.segment_sum(weighted, graph.targets(), n)?;
        tape.add(agg, tokens)
    }
}

/// Relative positions of a graph as a tape constant.
pub fn relative_positions<'a>(tape: &mut Tape<'a>, graph: &RadiusGraph, centers: &[crate::geom::Point3]) -> Var {
    let rel = graph.relative_positions(centers);
    tape.constant(Matrix::from_vec(graph.n_edges(), 3, rel))
}
