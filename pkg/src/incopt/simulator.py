"""Synthetic campaigns with planted, graph-correlated incentive sensitivities.

Merchants and customers live in regions. Merchant-customer edges are drawn from
a region-blocked random bipartite model with a per-merchant activity multiplier,
and the planted curve of merchant ``i`` is

    g*_i = gradient_base[region_i] + degree_effect * log(1 + deg_i) + eps_g
    p*_i = intercept_base[region_i] + intercept_degree_effect * log(1 + deg_i) + eps_p

Node features expose region only through a noisy one-hot and degree only
through a coarse bin, so the neighborhood carries signal the features lack.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidConfigError
from .graph import TransactionGraph
from .samples import CampaignTruth, Samples

DEFAULT_TREATMENTS = (1.0, 2.0, 5.0, 10.0, 20.0)

_MIN_GRADIENT = 1e-2


@dataclass(frozen=True)
class SimConfig:
    merchants: int = 5000
    customers: int = 20000
    regions: int = 8
    intra_region_edge_prob: float = 0.006
    inter_region_edge_prob: float = 0.0002
    node_feature_dim: int = 12
    edge_feature_dim: int = 3
    treatment_set: tuple[float, ...] = DEFAULT_TREATMENTS
    bucket_count: int = 5
    noise_sd: float = 2.0
    days: int = 3
    # planted structure
    region_fidelity: float = 0.7
    degree_bin: int = 10
    degree_heterogeneity: float = 0.7
    degree_effect: float = 0.5
    intercept_degree_effect: float = 1.0
    latent_noise_scale: float = 0.05
    gradient_bases: tuple[float, ...] | None = None
    intercept_bases: tuple[float, ...] | None = None

    def validate(self) -> None:
        def bad(msg):
            raise InvalidConfigError(msg)

        if self.merchants < 0 or self.customers < 0:
            bad("merchants and customers must be non-negative")
        if self.regions < 1:
            bad("regions must be >= 1")
        for name in ("intra_region_edge_prob", "inter_region_edge_prob", "region_fidelity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                bad(f"{name} must lie in [0, 1], got {v}")
        if self.intra_region_edge_prob < self.inter_region_edge_prob:
            bad("intra_region_edge_prob must be >= inter_region_edge_prob")
        if self.node_feature_dim < self.regions + 3:
            bad(f"node_feature_dim must be >= regions + 3 = {self.regions + 3}")
        if self.edge_feature_dim < 0:
            bad("edge_feature_dim must be non-negative")
        c = self.treatment_set
        if len(c) < 1 or any(t < 0 for t in c) or any(b <= a for a, b in zip(c, c[1:])):
            bad("treatment_set must be non-empty, non-negative and strictly ascending")
        if self.bucket_count != len(c):
            bad(f"bucket_count ({self.bucket_count}) must equal |treatment_set| ({len(c)})")
        if self.noise_sd < 0 or self.latent_noise_scale < 0 or self.degree_heterogeneity < 0:
            bad("noise scales must be non-negative")
        if self.degree_bin < 1 or self.days < 1:
            bad("degree_bin and days must be >= 1")
        for name in ("gradient_bases", "intercept_bases"):
            v = getattr(self, name)
            if v is not None and len(v) != self.regions:
                bad(f"{name} needs one value per region")
        if self.gradient_bases is not None and min(self.gradient_bases) <= 0:
            bad("gradient_bases must be positive")
        if self.intercept_bases is not None and min(self.intercept_bases) < 0:
            bad("intercept_bases must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        for k in ("treatment_set", "gradient_bases", "intercept_bases"):
            if d.get(k) is not None:
                d[k] = tuple(float(v) for v in d[k])
        return cls(**d)


def _distinct_draws(rng, owner, pool_start, pool_size, members, n_cols):
    """For each slot draw a member of its pool so (owner, member) pairs are distinct.

    Duplicates are redrawn until none remain; the procedure is symmetric in the
    pool members, so each owner's picks are a uniform subset.
    """
    picks = members[pool_start + rng.integers(0, pool_size)]
    while True:
        key = owner * n_cols + picks
        _, first = np.unique(key, return_index=True)
        dup = np.ones(key.size, dtype=bool)
        dup[first] = False
        if not dup.any():
            return picks
        idx = np.flatnonzero(dup)
        picks[idx] = members[pool_start[idx] + rng.integers(0, pool_size[idx])]


def generate_campaign(cfg: SimConfig, seed: int) -> tuple[TransactionGraph, CampaignTruth]:
    cfg.validate()
    rng = np.random.default_rng(seed)
    M, C, R = cfg.merchants, cfg.customers, cfg.regions

    m_region = rng.integers(0, R, size=M)
    c_region = rng.integers(0, R, size=C)
    sig = cfg.degree_heterogeneity
    activity = np.exp(sig * rng.standard_normal(M) - 0.5 * sig * sig)

    probs = np.full((R, R), cfg.inter_region_edge_prob)
    np.fill_diagonal(probs, cfg.intra_region_edge_prob)
    members = np.argsort(c_region, kind="stable")
    pool_size = np.bincount(c_region, minlength=R)
    pool_start = np.concatenate([[0], np.cumsum(pool_size)[:-1]])

    p_is = np.clip(probs[m_region] * activity[:, None], 0.0, 1.0)  # (M, R)
    k_is = rng.binomial(np.broadcast_to(pool_size, (M, R)), p_is)
    owner = np.repeat(np.arange(M), k_is.sum(axis=1))
    pool = np.repeat(np.tile(np.arange(R), M), k_is.ravel())
    cust = _distinct_draws(rng, owner, pool_start[pool], pool_size[pool], members, max(C, 1))
    order = np.lexsort((cust, owner))
    owner, cust = owner[order], cust[order]
    edges = np.stack([owner, cust + M], axis=1)
    n_edges = edges.shape[0]

    D = cfg.edge_feature_dim
    z = np.zeros((n_edges, D))
    if D >= 1:
        z[:, 0] = 1.0
    if D >= 2:
        z[:, 1] = 1.0 + rng.poisson(2.0, size=n_edges)
    if D >= 3:
        z[:, 2] = rng.lognormal(0.0, 0.5, size=n_edges)
    if D >= 4:
        z[:, 3:] = rng.standard_normal((n_edges, D - 3))
    z *= 0.05

    deg = np.zeros(M + C, dtype=np.int64)
    np.add.at(deg, edges[:, 0], 1)
    np.add.at(deg, edges[:, 1], 1)

    region = np.concatenate([m_region, c_region])
    n = M + C
    shown = region.copy()
    flip = rng.random(n) >= cfg.region_fidelity
    if R > 1:
        shift = rng.integers(1, R, size=n)
        shown[flip] = (region[flip] + shift[flip]) % R
    P = cfg.node_feature_dim
    x = np.zeros((n, P))
    x[:, 0] = 1.0
    x[:M, 1] = 1.0
    x[np.arange(n), 2 + shown] = 1.0
    x[:, 2 + R] = np.floor(deg / cfg.degree_bin)
    if P > R + 3:
        x[:, R + 3:] = rng.standard_normal((n, P - R - 3))

    g_base = np.asarray(cfg.gradient_bases if cfg.gradient_bases is not None else np.linspace(0.2, 2.0, R))
    if cfg.intercept_bases is not None:
        p_base = np.asarray(cfg.intercept_bases)
    else:
        p_base = rng.permutation(np.linspace(1.0, 4.0, R))
    latent_sd = cfg.latent_noise_scale * cfg.noise_sd
    log_deg = np.log1p(deg[:M])
    g_star = g_base[m_region] + cfg.degree_effect * log_deg + latent_sd * rng.standard_normal(M)
    p_star = p_base[m_region] + cfg.intercept_degree_effect * log_deg + latent_sd * rng.standard_normal(M)
    g_star = np.maximum(g_star, _MIN_GRADIENT)
    p_star = np.maximum(p_star, 0.0)

    roles = ["M"] * M + ["C"] * C
    regions = [f"R{r}" for r in region]
    ext = [f"M{i}" for i in range(M)] + [f"C{j}" for j in range(C)]
    graph = TransactionGraph.from_edges(x, edges, z, roles, regions, ext)
    truth = CampaignTruth(np.arange(M, dtype=np.int64), g_star, p_star)
    return graph, truth


def run_experiment(graph: TransactionGraph, truth: CampaignTruth, cfg: SimConfig, seed: int) -> Samples:
    """Randomized bucketed experiment: one uniformly chosen treatment per merchant."""
    cfg.validate()
    merchants = np.asarray(truth.merchants)
    if merchants.size and (merchants.min() < 0 or merchants.max() >= graph.node_count):
        raise InvalidConfigError("truth references merchants outside the graph")
    rng = np.random.default_rng(seed)
    treatments = np.asarray(cfg.treatment_set, dtype=np.float64)
    bucket = rng.integers(0, cfg.bucket_count, size=merchants.size)
    c = treatments[bucket]
    noise = cfg.noise_sd * rng.standard_normal(merchants.size)
    y = np.maximum(0.0, truth.true_gradient * c + truth.true_intercept + noise)
    return Samples(merchants.copy(), c, y)
