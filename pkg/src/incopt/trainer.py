"""End-to-end training by mini-batch ADAM on the mean absolute error.

Subgradient conventions: ``d|r|/dr = 0`` at ``r = 0`` and ``relu'(0) = 0``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    EmptyBatchError,
    InsufficientDataError,
    InvalidConfigError,
    NonFiniteError,
    ShapeMismatchError,
)
from .graph import TransactionGraph, derive_seed
from .model import ModelConfig, Params, backward, check_params, embed, forward, head, init_params, sigmoid
from .samples import Samples

log = logging.getLogger(__name__)

TRANSFORMS = ("none", "scale", "log1p-zscore")
EVAL_SEED_SALT = 0x5EED
BLOCK_FLOOR = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 512
    epochs: int = 200
    label_transform: str = "scale"
    train_fraction: float = 0.8
    patience: int = 20
    seed: int = 0

    def validate(self) -> None:
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise InvalidConfigError("adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1:
            raise InvalidConfigError("batch_size and patience must be >= 1, epochs >= 0")
        if not 0 < self.train_fraction < 1:
            raise InvalidConfigError("train_fraction must lie in (0, 1)")
        if self.label_transform not in TRANSFORMS:
            raise InvalidConfigError(f"label_transform must be one of {TRANSFORMS}")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise InvalidConfigError("learning_rate and eps must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# --- label transforms -------------------------------------------------------

@dataclass(frozen=True)
class LabelTransform:
    """Invertible map applied to objectives before training.

    ``scale`` divides by ``rms(y) / rms(c)`` over the training samples, so a
    curve with unit gradient has the magnitude of the targets; this keeps them
    non-negative and the curve linear in ``c``. ``log1p-zscore`` standardizes
    ``log1p(y)``.
    """

    kind: str = "none"
    center: float = 0.0
    scale: float = 1.0

    @classmethod
    def fit(cls, kind: str, y, c=None) -> "LabelTransform":
        y = np.asarray(y, dtype=np.float64)
        if kind == "none":
            return cls("none")
        if kind == "scale":
            rms = float(np.sqrt(np.mean(y * y))) if y.size else 0.0
            if c is not None and np.size(c):
                c = np.asarray(c, dtype=np.float64)
                c_rms = float(np.sqrt(np.mean(c * c)))
                if c_rms > 0:
                    rms /= c_rms
            return cls("scale", 0.0, rms if rms > 0 else 1.0)
        if kind == "log1p-zscore":
            t = np.log1p(y)
            sd = float(t.std()) if y.size else 0.0
            return cls("log1p-zscore", float(t.mean()) if y.size else 0.0, sd if sd > 0 else 1.0)
        raise InvalidConfigError(f"unknown label transform {kind!r}")

    @property
    def is_linear(self) -> bool:
        return self.kind in ("none", "scale")

    def apply(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "log1p-zscore":
            return (np.log1p(y) - self.center) / self.scale
        return y / self.scale

    def inverse(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "log1p-zscore":
            return np.expm1(t * self.scale + self.center)
        return t * self.scale

    def to_dict(self) -> dict:
        return asdict(self)


# --- loss and gradients -----------------------------------------------------

def _check_batch(graph: TransactionGraph, batch: Samples) -> None:
    if len(batch) == 0:
        raise EmptyBatchError("batch is empty")
    if batch.merchant.min() < 0 or batch.merchant.max() >= graph.node_count:
        raise ShapeMismatchError("batch references merchants outside the graph")


def _loss_and_grads(graph, params, cfg, batch: Samples, seed):
    emb, tape = forward(graph, params, cfg, batch.merchant, seed)
    z_g = emb @ params["W_g"]
    z_p = emb @ params["W_p"]
    g = np.maximum(z_g, 0.0) + np.log1p(np.exp(-np.abs(z_g)))
    p = np.maximum(z_p, 0.0)
    resid = g * batch.treatment + p - batch.objective
    n = len(batch)
    loss = float(np.abs(resid).sum() / n)
    d_f = np.sign(resid) / n
    d_zg = d_f * batch.treatment * sigmoid(z_g)
    d_zp = d_f * (z_p > 0)
    grads = backward(tape, np.outer(d_zg, params["W_g"]) + np.outer(d_zp, params["W_p"]))
    grads["W_g"] = emb.T @ d_zg
    grads["W_p"] = emb.T @ d_zp
    return loss, grads


def loss_and_grads(
    graph: TransactionGraph,
    params: Params,
    cfg: ModelConfig,
    batch: Samples,
    seed: int = 0,
    fanouts=None,
    threads: int = 1,
) -> tuple[float, Params]:
    """Mean absolute error over ``batch`` and its exact reverse-mode gradient.

    With ``threads > 1`` the batch is split into contiguous chunks evaluated in
    worker threads and reduced in chunk order.
    """
    _check_batch(graph, batch)
    if fanouts is not None:
        cfg = ModelConfig.from_dict({**cfg.to_dict(), "fanouts": tuple(fanouts)})
    n = len(batch)
    if threads <= 1 or n < 2 * threads:
        loss, grads = _loss_and_grads(graph, params, cfg, batch, seed)
    else:
        bounds = np.linspace(0, n, threads + 1).astype(int)
        chunks = [batch.subset(slice(a, b)) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _loss_and_grads(graph, params, cfg, c, seed), chunks))
        loss = 0.0
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        for chunk, (l, gr) in zip(chunks, parts):
            w = len(chunk) / n
            loss += w * l
            for k in grads:
                grads[k] += w * gr[k]
    if not np.isfinite(loss) or not all(np.all(np.isfinite(v)) for v in grads.values()):
        raise NonFiniteError("loss or gradient is not finite")
    return loss, grads


def batch_loss(graph, params, cfg, batch: Samples, seed: int = 0) -> float:
    emb = forward(graph, params, cfg, batch.merchant, seed)[0]
    g, p = head(emb, params)
    return float(np.mean(np.abs(g * batch.treatment + p - batch.objective)))


@dataclass
class GradReport:
    """Largest relative error per parameter block, analytic vs central differences."""

    errors: dict[str, float]
    h: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def flagged(self, tol: float = 1e-2) -> list[str]:
        return [k for k, v in self.errors.items() if v > tol]

    def __str__(self) -> str:
        width = max((len(k) for k in self.errors), default=4)
        lines = [f"{k:<{width}}  {v:.3e}" for k, v in self.errors.items()]
        lines.append(f"{'max':<{width}}  {self.max_error:.3e}  (h={self.h:g})")
        return "\n".join(lines)


def relative_error(a, b, floor: float = 1e-8):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    graph: TransactionGraph,
    params: Params,
    cfg: ModelConfig,
    batch: Samples,
    h: float = 1e-5,
    seed: int = 0,
    max_coords: int = 200,
    grads: Params | None = None,
) -> GradReport:
    """Compare analytic gradients with ``(L(w+h) - L(w-h)) / 2h`` coordinate-wise.

    At most ``max_coords`` coordinates per block are probed, chosen by a fixed
    RNG. ``grads`` overrides the analytic gradients (for mutation tests).
    The relative-error denominator is floored at ``BLOCK_FLOOR`` times the
    block's largest analytic magnitude: coordinates far below that are
    dominated by round-off in the difference quotient, not by the derivative.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    _check_batch(graph, batch)
    if grads is None:
        _, grads = loss_and_grads(graph, params, cfg, batch, seed)
    rng = np.random.default_rng(0)
    work = {k: v.copy() for k, v in params.items()}
    errors = {}
    for name, w in work.items():
        flat = w.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_coords:
            idx = np.sort(rng.choice(flat.size, max_coords, replace=False))
        worst = 0.0
        floor = max(1e-8, BLOCK_FLOOR * float(np.abs(grads[name]).max(initial=0.0)))
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h
            up = batch_loss(graph, work, cfg, batch, seed)
            flat[k] = orig - h
            down = batch_loss(graph, work, cfg, batch, seed)
            flat[k] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, float(relative_error(grads[name].reshape(-1)[k], numeric, floor)))
        errors[name] = worst
    return GradReport(errors, h)


# --- ADAM -------------------------------------------------------------------

@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Params) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, 0)

    def copy(self) -> "AdamState":
        return AdamState({k: v.copy() for k, v in self.m.items()},
                         {k: v.copy() for k, v in self.v.items()}, self.step)


def adam_step(state: AdamState, params: Params, grads: Params, cfg: TrainConfig) -> tuple[Params, AdamState]:
    """One bias-corrected ADAM update; returns new params and state."""
    if set(grads) != set(params):
        raise ShapeMismatchError("gradient and parameter blocks differ")
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_params, m_new, v_new = {}, {}, {}
    for k, w in params.items():
        g = grads[k]
        if g.shape != w.shape:
            raise ShapeMismatchError(f"gradient {k} has shape {g.shape}, expected {w.shape}")
        m = b1 * state.m.get(k, np.zeros_like(w)) + (1.0 - b1) * g
        v = b2 * state.v.get(k, np.zeros_like(w)) + (1.0 - b2) * (g * g)
        new_params[k] = w - cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(m_new, v_new, t)


# --- fitting ----------------------------------------------------------------

@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: Params
    optimizer: AdamState
    transform: LabelTransform
    validation_merchants: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    best_epoch: int = 0

    @property
    def seed(self) -> int:
        return self.train_config.seed

    def curves(self, graph: TransactionGraph, merchants, seed: int | None = None):
        """Per-merchant gradient and intercept in training-label units."""
        from .model import infer_curves

        s = derive_seed(self.seed, EVAL_SEED_SALT) if seed is None else seed
        return infer_curves(graph, self.params, self.model_config, merchants, s)

    def original_curves(self, graph: TransactionGraph, merchants, seed: int | None = None):
        """Curves in objective units when the label transform is linear."""
        g, p = self.curves(graph, merchants, seed)
        if self.transform.is_linear:
            return g * self.transform.scale, p * self.transform.scale
        return g, p

    def predict_objective(self, graph: TransactionGraph, merchants, treatments, seed: int | None = None):
        g, p = self.curves(graph, merchants, seed)
        return self.transform.inverse(g * np.asarray(treatments, dtype=np.float64) + p)


def split_merchants(merchants: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random merchant-level split into sorted (train, validation) id arrays."""
    uniq = np.unique(merchants)
    if uniq.size < 2:
        raise InsufficientDataError("need samples from at least two merchants to split")
    rng = np.random.default_rng(derive_seed(seed, 0x5911))
    perm = rng.permutation(uniq)
    n_train = min(max(int(round(fraction * uniq.size)), 1), uniq.size - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def orient_intercept(graph: TransactionGraph, params: Params, cfg: ModelConfig, merchants, seed: int) -> Params:
    """Flip the sign of ``W_p`` if the intercept relu starts inactive for most merchants.

    Embeddings are often sign-aligned across merchants, so a random ``W_p`` can
    put ``W_p . h`` below zero for nearly all of them. The relu gradient there
    is exactly 0 and the intercept would never train.
    """
    h = embed(graph, params, cfg, merchants, seed)
    if h.shape[0] and np.median(h @ params["W_p"]) < 0:
        params = {**params, "W_p": -params["W_p"]}
    return params


def fit(
    graph: TransactionGraph,
    samples: Samples,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    threads: int = 1,
    init: Params | None = None,
) -> tuple[Checkpoint, list[tuple[int, float, float]]]:
    """Train and return the best-validation checkpoint with per-epoch history.

    History rows are ``(epoch, train_mae, val_mae)`` in transformed-label
    units; ``train_mae`` is the sample-weighted mean of the epoch's batch losses.
    """
    model_cfg.validate()
    train_cfg.validate()
    if len(samples) < 2:
        raise InsufficientDataError("need at least two samples")
    train_ids, val_ids = split_merchants(samples.merchant, train_cfg.train_fraction, train_cfg.seed)
    in_train = np.isin(samples.merchant, train_ids)
    train = samples.subset(np.flatnonzero(in_train))
    val = samples.subset(np.flatnonzero(~in_train))

    transform = LabelTransform.fit(train_cfg.label_transform, train.objective, train.treatment)
    train = train.with_objective(transform.apply(train.objective))
    val = val.with_objective(transform.apply(val.objective))

    eval_seed = derive_seed(train_cfg.seed, EVAL_SEED_SALT)
    if init is None:
        params = orient_intercept(graph, init_params(model_cfg, derive_seed(train_cfg.seed, 0x1417)),
                                  model_cfg, train_ids, eval_seed)
    else:
        params = init
    check_params(model_cfg, params)
    state = AdamState.zeros_like(params)
    best = Checkpoint(model_cfg, train_cfg, params, state, transform, val_ids, 0)
    history: list[tuple[int, float, float]] = []
    if train_cfg.epochs == 0:
        return best, history

    rng = np.random.default_rng(derive_seed(train_cfg.seed, 0xE90C))
    best_val = np.inf
    stale = 0
    n = len(train)
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, train_cfg.batch_size)):
            batch = train.subset(order[lo:lo + train_cfg.batch_size])
            loss, grads = loss_and_grads(
                graph, params, model_cfg, batch, derive_seed(train_cfg.seed, epoch, b), threads=threads
            )
            params, state = adam_step(state, params, grads, train_cfg)
            total += loss * len(batch)
        val_mae = batch_loss(graph, params, model_cfg, val, eval_seed)
        history.append((epoch, total / n, val_mae))
        log.debug("epoch %d train %.5f val %.5f", epoch, total / n, val_mae)
        if val_mae < best_val:
            best_val = val_mae
            stale = 0
            best = Checkpoint(model_cfg, train_cfg, params, state.copy(), transform, val_ids, epoch)
        else:
            stale += 1
            if stale >= train_cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, best.best_epoch)
                break
    return best, history
