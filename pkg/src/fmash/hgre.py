"""Heterogeneous graph embedding.

Each homogeneous subgraph is smoothed by one GCN layer, serialized into a
sequence by sorting nodes on their subgraph degree, run through a
bidirectional selective-scan block, and scattered back to node order.  The
two enhanced blocks are then re-assembled in the global symptom-then-herb
order and the same GCN + scan treatment is applied once more over the full
edge set with full-graph degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import HeteroGraph
from .errors import NumericError
from .nn import Linear, Module, stage_rng
from .tape import Tensor, concat, stack

ACTIVATIONS = {
    "relu": lambda t: t.relu(),
    "tanh": lambda t: t.tanh(),
    "silu": lambda t: t.silu(),
    "identity": lambda t: t,
}


# ---------------------------------------------------------------------------
# GCN
# ---------------------------------------------------------------------------

class GcnParams(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)


def normalized_adjacency(n: int, edges: np.ndarray) -> np.ndarray:
    """Symmetric normalization with self-loops: D^(-1/2) (A + I) D^(-1/2)."""
    adj = np.eye(n)
    for u, v in np.asarray(edges).reshape(-1, 2):
        adj[u, v] = 1.0
        adj[v, u] = 1.0
    inv_sqrt = 1.0 / np.sqrt(adj.sum(axis=1))
    return adj * inv_sqrt[:, None] * inv_sqrt[None, :]


def gcn_forward(x: Tensor | np.ndarray, edges: np.ndarray, params: GcnParams,
                activation: str = "relu") -> Tensor:
    x = Tensor.ensure(x)
    n = x.shape[0]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and edges.max() >= n:
        raise ValueError(f"edge endpoint {edges.max()} out of range for {n} nodes")
    a_hat = Tensor(normalized_adjacency(n, edges))
    return ACTIVATIONS[activation](a_hat @ x @ params.weight + params.bias)


# ---------------------------------------------------------------------------
# degree-ordered serialization
# ---------------------------------------------------------------------------

@dataclass
class DegreePermutation:
    perm: np.ndarray      # node id at each sorted position
    inverse: np.ndarray   # sorted position of each node id


def degree_permutation(degrees: np.ndarray) -> DegreePermutation:
    """Descending degree; ties broken by ascending node index."""
    degrees = np.asarray(degrees)
    if degrees.size and degrees.min() < 0:
        raise ValueError("degrees must be non-negative")
    perm = np.argsort(-degrees, kind="stable")
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    return DegreePermutation(perm=perm, inverse=inverse)


# ---------------------------------------------------------------------------
# selective scan
# ---------------------------------------------------------------------------

class SsmDirection(Module):
    """One scan direction: diagonal negative-real state matrix plus the
    projections that produce the input-dependent step size and B/C."""

    def __init__(self, d: int, d_state: int, dt_rank: int, rng: np.random.Generator):
        # log-spaced diagonal per channel, kept negative through -exp(.)
        a = np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d, 1))
        self.a_log = Tensor(np.log(a), requires_grad=True)
        self.x_proj = Tensor(rng.normal(0.0, 1.0 / math.sqrt(d),
                                        size=(d, dt_rank + 2 * d_state)),
                             requires_grad=True)
        self.dt_weight = Tensor(rng.normal(0.0, 1.0 / math.sqrt(dt_rank),
                                           size=(dt_rank, d)), requires_grad=True)
        # bias chosen so softplus(bias) lands in a useful step-size range
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=d))
        self.dt_bias = Tensor(dt + np.log(-np.expm1(-dt)), requires_grad=True)


class SsmParams(Module):
    def __init__(self, d: int, rng: np.random.Generator, d_state: int = 16,
                 dt_rank: int | None = None, discretization: str = "zoh"):
        if discretization not in ("zoh", "euler"):
            raise ValueError(f"unknown discretization {discretization!r}")
        self.d = d
        self.d_state = d_state
        self.dt_rank = dt_rank if dt_rank is not None else max(1, math.ceil(d / 16))
        self.discretization = discretization
        self.fwd = SsmDirection(d, d_state, self.dt_rank, rng)
        self.bwd = SsmDirection(d, d_state, self.dt_rank, rng)
        self.gate = Linear(d, d, rng)
        self.merge = Linear(2 * d, d, rng, scale=0.5 / math.sqrt(2 * d))


def ssm_scan(seq: Tensor | np.ndarray, params: SsmParams,
             direction: str = "forward") -> Tensor:
    """Gated selective scan along one direction of an (L, d) sequence.

    Recurrence per channel with diagonal state: h_t = exp(dt_t * A) * h_{t-1}
    + (dt_t * B_t) * x_t and y_t = <C_t, h_t>, with dt_t kept positive by a
    softplus.  The block gate silu(W_g x + b_g) multiplies the scan output.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown scan direction {direction!r}")
    x = Tensor.ensure(seq)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("ssm_scan expects an (L, d) sequence with L >= 1")
    if direction == "backward":
        x = x.flip(0)
    dirp = params.fwd if direction == "forward" else params.bwd
    L, d = x.shape
    n, r = params.d_state, params.dt_rank

    proj = x @ dirp.x_proj                       # (L, r + 2n)
    delta = (proj[:, :r] @ dirp.dt_weight + dirp.dt_bias).softplus()   # (L, d) > 0
    b_in = proj[:, r:r + n]                      # (L, n)
    c_out = proj[:, r + n:]                      # (L, n)
    a = -dirp.a_log.exp()                        # (d, n), strictly negative

    h = Tensor(np.zeros((d, n)))
    ys = []
    for t in range(L):
        dt_t = delta[t].reshape(d, 1)
        if params.discretization == "zoh":
            a_bar = (dt_t * a).exp()
        else:
            a_bar = 1.0 + dt_t * a
        b_bar_x = dt_t * b_in[t].reshape(1, n) * x[t].reshape(d, 1)
        h = a_bar * h + b_bar_x
        ys.append((h * c_out[t].reshape(1, n)).sum(axis=1))
    y = stack(ys, axis=0)                        # (L, d)
    gated = y * (x @ params.gate.weight + params.gate.bias).silu()
    if not np.isfinite(gated.data).all():
        raise NumericError("non-finite values in selective scan output")
    if direction == "backward":
        gated = gated.flip(0)
    return gated


def bidirectional_block(seq: Tensor | np.ndarray, params: SsmParams) -> Tensor:
    """Forward and backward scans merged by a learned projection, with a
    residual connection around the block."""
    x = Tensor.ensure(seq)
    fwd = ssm_scan(x, params, "forward")
    bwd = ssm_scan(x, params, "backward")
    merged = params.merge(concat([fwd, bwd], axis=1))
    return x + merged


# ---------------------------------------------------------------------------
# subgraph and full-graph enhancement
# ---------------------------------------------------------------------------

def subgraph_enhance(x_s: Tensor | np.ndarray, edges_s: np.ndarray,
                     degrees_s: np.ndarray, gcn: GcnParams, ssm: SsmParams,
                     activation: str = "relu") -> Tensor:
    """GCN, serialize by degree order, bidirectional scan, scatter back."""
    smoothed = gcn_forward(x_s, edges_s, gcn, activation=activation)
    p = degree_permutation(degrees_s)
    enhanced = bidirectional_block(smoothed[p.perm], ssm)
    return enhanced[p.inverse]


class HgreParams(Module):
    """Parameter bundle: one GCN + scan block per subgraph plus the global
    pair; the global scan gets a doubled state size."""

    def __init__(self, d: int, seed: int, d_state: int = 16,
                 discretization: str = "zoh", activation: str = "relu"):
        self.activation = activation
        self.gcn_sym = GcnParams(d, d, stage_rng(seed, "hgre.gcn.sym"))
        self.gcn_herb = GcnParams(d, d, stage_rng(seed, "hgre.gcn.herb"))
        self.gcn_global = GcnParams(d, d, stage_rng(seed, "hgre.gcn.global"))
        self.ssm_sym = SsmParams(d, stage_rng(seed, "hgre.ssm.sym"),
                                 d_state=d_state, discretization=discretization)
        self.ssm_herb = SsmParams(d, stage_rng(seed, "hgre.ssm.herb"),
                                  d_state=d_state, discretization=discretization)
        self.ssm_global = SsmParams(d, stage_rng(seed, "hgre.ssm.global"),
                                    d_state=2 * d_state, discretization=discretization)


def hgre_forward(x: Tensor | np.ndarray, graph: HeteroGraph,
                 params: HgreParams) -> Tensor:
    """Full hierarchical pass; rows are symptoms then herbs throughout."""
    x = Tensor.ensure(x)
    s = graph.n_sym
    if x.shape[0] != s + graph.n_herb:
        raise ValueError("feature row count does not match the graph")
    act = params.activation
    enh_sym = subgraph_enhance(x[:s], graph.edges_ss, graph.sub_degrees_ss,
                               params.gcn_sym, params.ssm_sym, activation=act)
    enh_herb = subgraph_enhance(x[s:], graph.edges_hh, graph.sub_degrees_hh,
                                params.gcn_herb, params.ssm_herb, activation=act)
    x_e = concat([enh_sym, enh_herb], axis=0)
    smoothed = gcn_forward(x_e, graph.all_edges_global(), params.gcn_global,
                           activation=act)
    p = degree_permutation(graph.degrees)
    out = bidirectional_block(smoothed[p.perm], params.ssm_global)
    return out[p.inverse]
