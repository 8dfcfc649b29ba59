"""Merchant embeddings and the monotone linear objective-incentive head.

Three encoders share one output head:

* ``ge``: graph network. ``h0 = X_i W_x + (sum of incident Z rows) W_e``, then
  ``depth`` layers ``h <- act(agg({h_j : j in N(i) + {i}}) W_t)`` over sampled
  neighborhoods.
* ``mlp``: ``depth`` dense layers over node features only.
* ``linear``: a single linear map of node features.

The head turns an embedding ``h`` into ``gradient = softplus(h . W_g)`` and
``intercept = relu(h . W_p)`` so the predicted objective ``gradient * c +
intercept`` is strictly increasing in the treatment ``c``.

Forward passes record a :class:`Tape`; :func:`backward` runs reverse mode over
it by hand. There are no bias terms anywhere.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import (
    InvalidConfigError,
    NegativeTreatmentError,
    NonFiniteError,
    OutOfRangeError,
    ShapeMismatchError,
)
from .graph import TransactionGraph, derive_seed, sample_rows

Params = dict[str, np.ndarray]

KINDS = ("ge", "mlp", "linear")
AGGREGATORS = ("mean", "attention")
ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class ModelConfig:
    node_dim: int
    edge_dim: int = 0
    kind: str = "ge"
    depth: int = 2
    width: int = 32
    fanouts: tuple[int, ...] = (10, 10)
    aggregator: str = "mean"
    activation: str = "relu"

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidConfigError(f"kind must be one of {KINDS}")
        if self.aggregator not in AGGREGATORS:
            raise InvalidConfigError(f"aggregator must be one of {AGGREGATORS}")
        if self.activation not in ACTIVATIONS:
            raise InvalidConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.depth < 1 or self.width < 1:
            raise InvalidConfigError("depth and width must be >= 1")
        if self.node_dim < 0 or self.edge_dim < 0:
            raise InvalidConfigError("input dims must be non-negative")
        if self.kind == "ge" and len(self.fanouts) != self.depth:
            raise InvalidConfigError(f"need one fanout per layer ({self.depth}), got {len(self.fanouts)}")
        if any(f < 1 for f in self.fanouts):
            raise InvalidConfigError("fanouts must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["fanouts"] = tuple(int(f) for f in d.get("fanouts", ()))
        return cls(**d)


class MerchantCurve(NamedTuple):
    gradient: float
    intercept: float


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes for ``cfg``."""
    K, P = cfg.width, cfg.node_dim
    shapes: dict[str, tuple[int, ...]] = {"W_x": (P, K)}
    if cfg.kind == "ge":
        shapes["W_e"] = (cfg.edge_dim, K)
        for t in range(cfg.depth):
            shapes[f"W_{t}"] = (K, K)
            if cfg.aggregator == "attention":
                shapes[f"theta_self_{t}"] = (K, K)
                shapes[f"theta_nbr_{t}"] = (K, K)
                shapes[f"theta_score_{t}"] = (K,)
    elif cfg.kind == "mlp":
        for t in range(1, cfg.depth):
            shapes[f"W_{t}"] = (K, K)
    shapes["W_g"] = (K,)
    shapes["W_p"] = (K,)
    return shapes


def glorot_bound(shape: tuple[int, ...]) -> float:
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    return float(np.sqrt(6.0 / max(fan_in + fan_out, 1)))


def init_params(cfg: ModelConfig, seed: int) -> Params:
    """Glorot-uniform weights, deterministic in ``seed``."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        b = glorot_bound(shape)
        params[name] = rng.uniform(-b, b, size=shape)
    return params


def check_params(cfg: ModelConfig, params: Params) -> None:
    for name, shape in param_shapes(cfg).items():
        if name not in params:
            raise ShapeMismatchError(f"missing parameter {name}")
        if params[name].shape != shape:
            raise ShapeMismatchError(f"{name} has shape {params[name].shape}, expected {shape}")


# --- elementwise pieces ------------------------------------------------------

def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(x):
    return np.maximum(x, 0.0)


def _act(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return relu(x)
    if name == "tanh":
        return np.tanh(x)
    return x


def _act_grad(name: str, pre: np.ndarray, out: np.ndarray, d: np.ndarray) -> np.ndarray:
    if name == "relu":
        return d * (pre > 0)
    if name == "tanh":
        return d * (1.0 - out * out)
    return d


# --- sampled computation blocks ---------------------------------------------

@dataclass(eq=False)
class Block:
    """One aggregation layer: ``dst`` rows read from ``src`` rows.

    ``row``/``col`` list (dst position, src position) pairs including the self
    entry, sorted by dst then ascending node id.
    """

    dst: np.ndarray
    src: np.ndarray
    self_pos: np.ndarray
    row: np.ndarray
    col: np.ndarray
    row_ptr: np.ndarray

    @property
    def n_edges(self) -> int:
        return self.row.size

    def matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.col, self.row_ptr), shape=(self.dst.size, self.src.size))


def sample_blocks(graph: TransactionGraph, targets: np.ndarray, fanouts, seed: int) -> list[Block]:
    """Layered neighborhood of sorted unique ``targets``, ordered input to output.

    Hop ``k`` (``k = 0`` next to the targets) samples with ``fanouts[k]`` and a
    seed derived from ``(seed, k)``; a node's sample at a hop does not depend on
    which other nodes are in the batch.
    """
    dst = targets
    out = []
    for hop, fanout in enumerate(fanouts):
        counts, nbrs, _ = sample_rows(graph, dst, fanout, derive_seed(seed, hop))
        src = np.union1d(dst, nbrs)
        self_pos = np.searchsorted(src, dst)
        nbr_pos = np.searchsorted(src, nbrs)
        seg = np.repeat(np.arange(dst.size), counts)
        row = np.concatenate([np.arange(dst.size), seg])
        col = np.concatenate([self_pos, nbr_pos])
        order = np.lexsort((col, row))
        row_ptr = np.zeros(dst.size + 1, dtype=np.int64)
        np.cumsum(counts + 1, out=row_ptr[1:])
        out.append(Block(dst, src, self_pos, row[order], col[order], row_ptr))
        dst = src
    return out[::-1]


# --- forward / backward -----------------------------------------------------

@dataclass(eq=False)
class Tape:
    cfg: ModelConfig
    params: Params
    targets_inverse: np.ndarray
    inputs: np.ndarray  # rows fed into the first layer
    edge_sums: np.ndarray | None = None
    blocks: list[Block] = field(default_factory=list)
    layers: list[dict] = field(default_factory=list)
    h: np.ndarray | None = None  # final unique-row embeddings


def _validate_targets(graph: TransactionGraph, targets) -> np.ndarray:
    t = np.asarray(targets, dtype=np.int64).ravel()
    if t.size and (t.min() < 0 or t.max() >= graph.node_count):
        raise OutOfRangeError("target node out of range")
    return t


def _aggregate(blk: Block, h: np.ndarray, params: Params, t: int, aggregator: str, rec: dict) -> np.ndarray:
    if aggregator == "mean":
        counts = np.diff(blk.row_ptr)
        A = blk.matrix(np.repeat(1.0 / counts, counts))
        rec["A"] = A
        return A @ h
    # attention: score_e = v . tanh(h_dst W_self + h_src W_nbr), softmax per dst row
    u = h[blk.self_pos] @ params[f"theta_self_{t}"]
    w = h @ params[f"theta_nbr_{t}"]
    a = np.tanh(u[blk.row] + w[blk.col])
    score = a @ params[f"theta_score_{t}"]
    starts = blk.row_ptr[:-1]
    peak = np.maximum.reduceat(score, starts)
    ex = np.exp(score - peak[blk.row])
    alpha = ex / np.add.reduceat(ex, starts)[blk.row]
    A = blk.matrix(alpha)
    rec.update(A=A, a=a, alpha=alpha)
    return A @ h


def _aggregate_backward(blk, h, params, t, aggregator, rec, d_agg, grads) -> np.ndarray:
    A = rec["A"]
    dh = A.T @ d_agg
    if aggregator == "mean":
        return dh
    a, alpha = rec["a"], rec["alpha"]
    starts = blk.row_ptr[:-1]
    d_alpha = np.einsum("ek,ek->e", d_agg[blk.row], h[blk.col])
    d_score = alpha * (d_alpha - np.add.reduceat(alpha * d_alpha, starts)[blk.row])
    v = params[f"theta_score_{t}"]
    grads[f"theta_score_{t}"] = a.T @ d_score
    d_pre = np.outer(d_score, v) * (1.0 - a * a)
    d_u = np.add.reduceat(d_pre, starts, axis=0)
    scatter = sp.csr_matrix(
        (np.ones(blk.n_edges), (blk.col, np.arange(blk.n_edges))), shape=(blk.src.size, blk.n_edges)
    )
    d_w = scatter @ d_pre
    h_self = h[blk.self_pos]
    grads[f"theta_self_{t}"] = h_self.T @ d_u
    grads[f"theta_nbr_{t}"] = h.T @ d_w
    dh[blk.self_pos] += d_u @ params[f"theta_self_{t}"].T
    dh += d_w @ params[f"theta_nbr_{t}"].T
    return dh


def forward(graph: TransactionGraph, params: Params, cfg: ModelConfig, targets, seed: int = 0):
    """Embeddings for ``targets`` (rows in target order) and the tape for :func:`backward`."""
    check_params(cfg, params)
    t_ids = _validate_targets(graph, targets)
    if graph.node_dim != cfg.node_dim:
        raise ShapeMismatchError(f"graph has {graph.node_dim} node features, model expects {cfg.node_dim}")
    uniq, inv = np.unique(t_ids, return_inverse=True)
    if uniq.size == 0:
        return np.zeros((0, cfg.width)), None

    if cfg.kind != "ge":
        x = graph.node_features[uniq]
        tape = Tape(cfg, params, inv, x)
        if cfg.kind == "linear":
            h = x @ params["W_x"]
        else:
            h = x
            for t in range(cfg.depth):
                W = params["W_x"] if t == 0 else params[f"W_{t}"]
                pre = h @ W
                out = _act(cfg.activation, pre)
                tape.layers.append({"in": h, "pre": pre, "out": out, "W": "W_x" if t == 0 else f"W_{t}"})
                h = out
        tape.h = h
        return h[inv], tape

    if graph.edge_dim != cfg.edge_dim:
        raise ShapeMismatchError(f"graph has {graph.edge_dim} edge features, model expects {cfg.edge_dim}")
    blocks = sample_blocks(graph, uniq, cfg.fanouts, seed)
    inputs = blocks[0].src if blocks else uniq
    x = graph.node_features[inputs]
    zs = graph.edge_feature_sums[inputs]
    h = x @ params["W_x"] + zs @ params["W_e"]
    tape = Tape(cfg, params, inv, x, zs, blocks)
    for t, blk in enumerate(blocks):
        rec: dict = {"in": h}
        agg = _aggregate(blk, h, params, t, cfg.aggregator, rec)
        pre = agg @ params[f"W_{t}"]
        out = _act(cfg.activation, pre)
        rec.update(agg=agg, pre=pre, out=out)
        tape.layers.append(rec)
        h = out
    tape.h = h
    return h[inv], tape


def backward(tape: Tape, d_emb: np.ndarray) -> Params:
    """Gradients of all parameters given the gradient w.r.t. the target embeddings."""
    cfg, params = tape.cfg, tape.params
    dh = np.zeros_like(tape.h)
    np.add.at(dh, tape.targets_inverse, d_emb)
    grads: Params = {}

    if cfg.kind == "linear":
        grads["W_x"] = tape.inputs.T @ dh
        return grads
    if cfg.kind == "mlp":
        for rec in reversed(tape.layers):
            d_pre = _act_grad(cfg.activation, rec["pre"], rec["out"], dh)
            grads[rec["W"]] = rec["in"].T @ d_pre
            dh = d_pre @ params[rec["W"]].T
        return grads

    for t in range(len(tape.blocks) - 1, -1, -1):
        blk, rec = tape.blocks[t], tape.layers[t]
        d_pre = _act_grad(cfg.activation, rec["pre"], rec["out"], dh)
        grads[f"W_{t}"] = rec["agg"].T @ d_pre
        d_agg = d_pre @ params[f"W_{t}"].T
        dh = _aggregate_backward(blk, rec["in"], params, t, cfg.aggregator, rec, d_agg, grads)
    grads["W_x"] = tape.inputs.T @ dh
    grads["W_e"] = tape.edge_sums.T @ dh
    return grads


def embed(graph: TransactionGraph, params: Params, cfg: ModelConfig, targets, seed: int = 0) -> np.ndarray:
    """``len(targets) x width`` embedding matrix."""
    return forward(graph, params, cfg, targets, seed)[0]


# --- head -------------------------------------------------------------------

def head(h: np.ndarray, params: Params) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`curve`: gradients and intercepts for embedding rows."""
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise NonFiniteError("embedding contains NaN or Inf")
    return softplus(h @ params["W_g"]), relu(h @ params["W_p"])


def curve(h, params: Params) -> MerchantCurve:
    g, p = head(np.asarray(h, dtype=np.float64)[None, :], params)
    return MerchantCurve(float(g[0]), float(p[0]))


def predict(curve: MerchantCurve, c) -> float:
    if np.any(np.asarray(c) < 0):
        raise NegativeTreatmentError(f"treatment must be non-negative, got {c}")
    return curve.gradient * c + curve.intercept


def infer_curves(graph: TransactionGraph, params: Params, cfg: ModelConfig, targets, seed: int = 0,
                 batch_size: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Gradients and intercepts for many targets, in bounded-size batches."""
    targets = np.asarray(targets, dtype=np.int64)
    g = np.empty(targets.size)
    p = np.empty(targets.size)
    for lo in range(0, targets.size, batch_size):
        sl = slice(lo, lo + batch_size)
        g[sl], p[sl] = head(embed(graph, params, cfg, targets[sl], seed), params)
    return g, p


def baseline_predict(features, params: Params, cfg: ModelConfig, c) -> float:
    """Graph-blind prediction for one feature vector (``linear`` or ``mlp`` encoder)."""
    if cfg.kind == "ge":
        raise InvalidConfigError("baseline_predict needs a linear or mlp config")
    x = np.asarray(features, dtype=np.float64)[None, :]
    if x.shape[1] != cfg.node_dim:
        raise ShapeMismatchError(f"expected {cfg.node_dim} features, got {x.shape[1]}")
    if cfg.kind == "linear":
        h = x @ params["W_x"]
    else:
        h = x
        for t in range(cfg.depth):
            h = _act(cfg.activation, h @ (params["W_x"] if t == 0 else params[f"W_{t}"]))
    return predict(curve(h[0], params), c)
