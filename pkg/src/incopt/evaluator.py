"""Offline evaluation: regression error, uplift splits, quintiles, region ratios, truth recovery."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import stats

from .errors import (
    BadTreatmentPairError,
    EmptyInputError,
    InsufficientDataError,
    LengthMismatchError,
    SetMismatchError,
)
from .samples import CampaignTruth, Samples

Z95 = 1.959963984540054


@dataclass
class RegressionReport:
    mae: float
    mse: float
    n: int


def regression_metrics(predictions, labels) -> RegressionReport:
    pred = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if pred.size != y.size:
        raise LengthMismatchError(f"{pred.size} predictions vs {y.size} labels")
    if y.size == 0:
        raise EmptyInputError("no predictions to score")
    d = pred - y
    return RegressionReport(float(np.mean(np.abs(d))), float(np.mean(d * d)), int(y.size))


@dataclass
class GroupUplift:
    group: str
    u: float | None  # None when either cell is empty
    n_high: int
    n_low: int
    mean_high: float | None
    mean_low: float | None
    se: float | None  # normal-approximation standard error of u

    @property
    def defined(self) -> bool:
        return self.u is not None


@dataclass
class UpliftReport:
    c_high: float
    c_low: float
    groups: list[GroupUplift] = field(default_factory=list)

    def by_group(self) -> dict[str, GroupUplift]:
        return {g.group: g for g in self.groups}

    @property
    def uplifts(self) -> list[float | None]:
        return [g.u for g in self.groups]

    def to_dict(self) -> dict:
        return {"c_high": self.c_high, "c_low": self.c_low, "groups": [asdict(g) for g in self.groups]}


def _cell_stats(y: np.ndarray):
    if y.size == 0:
        return None, None
    var = float(y.var(ddof=1)) if y.size > 1 else 0.0
    return float(y.mean()), var / y.size


def _check_pair(c_high: float, c_low: float, treatments: np.ndarray | None = None) -> None:
    if not c_high > c_low:
        raise BadTreatmentPairError(f"need c_high > c_low, got {c_high} and {c_low}")
    if treatments is not None:
        present = set(np.unique(treatments).tolist())
        if c_high not in present or c_low not in present:
            raise BadTreatmentPairError(f"treatments {c_high} and {c_low} must both occur in the samples")


def uplift_gain(samples: Samples, grouping: Mapping[int, object], c_high: float, c_low: float) -> UpliftReport:
    """Per-group ``mean(y | c_high) - mean(y | c_low)``.

    Samples at other treatments, or of merchants missing from ``grouping``, are
    ignored. Groups appear in first-seen order of ``grouping`` values.
    """
    _check_pair(c_high, c_low, samples.treatment)
    labels = []
    for g in grouping.values():
        if g not in labels:
            labels.append(g)
    report = UpliftReport(float(c_high), float(c_low))
    member = np.array([grouping.get(int(m), None) for m in samples.merchant], dtype=object)
    for g in labels:
        in_g = member == g
        hi = samples.objective[in_g & (samples.treatment == c_high)]
        lo = samples.objective[in_g & (samples.treatment == c_low)]
        mh, vh = _cell_stats(hi)
        ml, vl = _cell_stats(lo)
        if mh is None or ml is None:
            report.groups.append(GroupUplift(str(g), None, hi.size, lo.size, mh, ml, None))
        else:
            report.groups.append(GroupUplift(str(g), mh - ml, hi.size, lo.size, mh, ml, math.sqrt(vh + vl)))
    return report


def rank_merchants(gradients: Mapping[int, float]) -> list[int]:
    """Merchant ids by inferred gradient descending, ties by ascending id."""
    return sorted(gradients, key=lambda m: (-gradients[m], m))


def equal_groups(n: int, k: int) -> list[int]:
    """Sizes of ``k`` consecutive groups covering ``n``; earlier groups take the remainder."""
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def quintile_report(gradients: Mapping[int, float], samples: Samples, c_high: float, c_low: float,
                    groups: int = 5) -> UpliftReport:
    """Uplift per equal-size group of merchants sorted by inferred gradient (most sensitive first)."""
    with_samples = set(samples.merchant.tolist())
    ranked = [m for m in rank_merchants(gradients) if m in with_samples]
    if len(ranked) < groups:
        raise InsufficientDataError(f"need at least {groups} merchants with samples, got {len(ranked)}")
    grouping = {}
    start = 0
    for gi, size in enumerate(equal_groups(len(ranked), groups)):
        for m in ranked[start:start + size]:
            grouping[m] = gi + 1
        start += size
    return uplift_gain(samples, grouping, c_high, c_low)


@dataclass
class UpliftSplit:
    """Median split into sensitive (+) and insensitive (-) halves."""

    plus: GroupUplift
    minus: GroupUplift
    diff: float
    ci_low: float
    ci_high: float


def uplift_split(gradients: Mapping[int, float], samples: Samples, c_high: float, c_low: float) -> UpliftSplit:
    rep = quintile_report(gradients, samples, c_high, c_low, groups=2)
    plus, minus = rep.groups
    if not (plus.defined and minus.defined):
        raise InsufficientDataError("both halves need samples at c_high and c_low")
    diff = plus.u - minus.u
    se = math.hypot(plus.se, minus.se)
    return UpliftSplit(plus, minus, diff, diff - Z95 * se, diff + Z95 * se)


@dataclass
class RegionRow:
    region: str
    ratio: float
    n_hi: int
    n_lo: int


@dataclass
class RegionSensitivity:
    t_hi: float
    t_lo: float
    rows: list[RegionRow]
    missing: list[str]

    def ratios(self) -> dict[str, float]:
        return {r.region: r.ratio for r in self.rows}


def region_sensitivity(samples: Samples, regions: Mapping[int, str], t_hi: float, t_lo: float) -> RegionSensitivity:
    """Per-region ``mean(y | t_hi) / mean(y | t_lo)``; regions lacking a cell or with a zero denominator are missing."""
    if t_hi == t_lo:
        raise BadTreatmentPairError("t_hi and t_lo must differ")
    region_of = np.array([regions.get(int(m)) for m in samples.merchant], dtype=object)
    names = sorted({r for r in regions.values() if r is not None})
    rows, missing = [], []
    for r in names:
        in_r = region_of == r
        hi = samples.objective[in_r & (samples.treatment == t_hi)]
        lo = samples.objective[in_r & (samples.treatment == t_lo)]
        if hi.size == 0 or lo.size == 0 or lo.mean() <= 0 or hi.mean() <= 0:
            missing.append(r)
            continue
        rows.append(RegionRow(r, float(hi.mean() / lo.mean()), int(hi.size), int(lo.size)))
    return RegionSensitivity(float(t_hi), float(t_lo), rows, missing)


@dataclass
class RecoveryReport:
    spearman: float
    deciles: list[dict]  # decile of inferred gradient -> mean inferred and mean true gradient
    n: int


def recovery_metrics(inferred: Mapping[int, float], truth: CampaignTruth | Mapping[int, float]) -> RecoveryReport:
    """Spearman rank correlation of inferred vs planted gradients plus a decile table."""
    if isinstance(truth, CampaignTruth):
        truth = {int(m): float(g) for m, g in zip(truth.merchants, truth.true_gradient)}
    if set(inferred) != set(truth):
        raise SetMismatchError("inferred and true gradients cover different merchants")
    ids = sorted(inferred)
    a = np.array([inferred[m] for m in ids], dtype=np.float64)
    b = np.array([truth[m] for m in ids], dtype=np.float64)
    if a.size < 2:
        raise InsufficientDataError("need at least two merchants")
    rho = float(stats.spearmanr(a, b)[0])
    order = np.argsort(-a, kind="stable")
    deciles = []
    start = 0
    for d, size in enumerate(equal_groups(a.size, min(10, a.size))):
        sel = order[start:start + size]
        deciles.append({"decile": d + 1, "n": int(size), "mean_inferred": float(a[sel].mean()),
                        "mean_true": float(b[sel].mean())})
        start += size
    return RecoveryReport(rho, deciles, int(a.size))


# --- exports ----------------------------------------------------------------

def write_quintiles(report: UpliftReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "u", "n_high", "n_low"])
        for g in report.groups:
            w.writerow([g.group, "" if g.u is None else repr(g.u), g.n_high, g.n_low])


def write_regions(report: RegionSensitivity, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "ratio", "n_hi", "n_lo"])
        for r in report.rows:
            w.writerow([r.region, repr(r.ratio), r.n_hi, r.n_lo])


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
