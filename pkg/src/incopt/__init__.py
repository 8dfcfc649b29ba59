"""Merchant incentive curves from transaction graphs, and budgeted treatment allocation."""

__version__ = "0.1.0"

from .allocator import AllocationPlan, ScoreTable, best_response, lp_oracle, solve_budget, spend
from .graph import TransactionGraph, load_graph, neighbors, sample_neighbors, save_graph
from .model import MerchantCurve, ModelConfig, baseline_predict, curve, embed, init_params, predict
from .samples import CampaignTruth, LabeledSample, Samples
from .simulator import SimConfig, generate_campaign, run_experiment
from .trainer import Checkpoint, TrainConfig, adam_step, fit, grad_check, loss_and_grads

__all__ = [
    "AllocationPlan",
    "CampaignTruth",
    "Checkpoint",
    "LabeledSample",
    "MerchantCurve",
    "ModelConfig",
    "Samples",
    "ScoreTable",
    "SimConfig",
    "TrainConfig",
    "TransactionGraph",
    "adam_step",
    "baseline_predict",
    "best_response",
    "curve",
    "embed",
    "fit",
    "generate_campaign",
    "grad_check",
    "init_params",
    "load_graph",
    "loss_and_grads",
    "lp_oracle",
    "neighbors",
    "predict",
    "run_experiment",
    "sample_neighbors",
    "save_graph",
    "solve_budget",
    "spend",
]
