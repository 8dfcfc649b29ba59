"""Reference synthetic campaign and the GE / DNN / LR comparison run on it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluator import recovery_metrics, regression_metrics
from .graph import TransactionGraph, derive_seed
from .model import ModelConfig
from .samples import CampaignTruth, Samples
from .simulator import SimConfig, generate_campaign, run_experiment
from .trainer import Checkpoint, TrainConfig, fit

REFERENCE_SIM = SimConfig()  # 5000 merchants, 20000 customers, 8 regions
REFERENCE_TRAIN = TrainConfig(learning_rate=0.003, batch_size=256, epochs=120, patience=20)
TEST_FRACTION = 0.2


def reference_models(graph: TransactionGraph) -> dict[str, ModelConfig]:
    P, D = graph.node_dim, graph.edge_dim
    return {
        "GE": ModelConfig(node_dim=P, edge_dim=D, kind="ge", depth=2, width=32, fanouts=(10, 10)),
        "DNN": ModelConfig(node_dim=P, kind="mlp", depth=2, width=32, fanouts=()),
        "LR": ModelConfig(node_dim=P, kind="linear", depth=1, width=32, fanouts=()),
    }


def reference_campaign(seed: int, cfg: SimConfig = REFERENCE_SIM):
    graph, truth = generate_campaign(cfg, seed)
    samples = run_experiment(graph, truth, cfg, derive_seed(seed, 1))
    return graph, truth, samples


def holdout_split(samples: Samples, seed: int, fraction: float = TEST_FRACTION) -> tuple[Samples, Samples]:
    """(fit, test) split by merchant; test merchants never reach ``fit``."""
    merchants = np.unique(samples.merchant)
    rng = np.random.default_rng(derive_seed(seed, 0x7E57))
    test_ids = rng.permutation(merchants)[: int(round(fraction * merchants.size))]
    is_test = np.isin(samples.merchant, test_ids)
    return samples.subset(np.flatnonzero(~is_test)), samples.subset(np.flatnonzero(is_test))


@dataclass
class ModelResult:
    name: str
    checkpoint: Checkpoint
    test_mae: float
    test_mse: float
    spearman: float
    gradients: dict[int, float]


@dataclass
class ReferenceRun:
    seed: int
    graph: TransactionGraph
    truth: CampaignTruth
    test: Samples
    models: dict[str, ModelResult]


def run_reference(seed: int, cfg: SimConfig = REFERENCE_SIM, train_cfg: TrainConfig = REFERENCE_TRAIN,
                  names=("GE", "DNN", "LR")) -> ReferenceRun:
    graph, truth, samples = reference_campaign(seed, cfg)
    fit_set, test = holdout_split(samples, seed)
    configs = reference_models(graph)
    true_g = dict(zip(truth.merchants.tolist(), truth.true_gradient.tolist()))
    results = {}
    for name in names:
        tc = TrainConfig.from_dict({**train_cfg.to_dict(), "seed": seed})
        ckpt, _ = fit(graph, fit_set, configs[name], tc)
        pred = ckpt.predict_objective(graph, test.merchant, test.treatment)
        reg = regression_metrics(pred, test.objective)
        g, _ = ckpt.original_curves(graph, test.merchant)
        grads = dict(zip(test.merchant.tolist(), g.tolist()))
        rec = recovery_metrics(grads, {m: true_g[m] for m in grads})
        results[name] = ModelResult(name, ckpt, reg.mae, reg.mse, rec.spearman, grads)
    return ReferenceRun(seed, graph, truth, test, results)
