"""Labeled experiment samples and planted truth tables."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DataError, DimMismatchError, LengthMismatchError, NonFiniteError


class LabeledSample(NamedTuple):
    merchant: int
    treatment: float
    objective: float


@dataclass(frozen=True, eq=False)
class Samples:
    """Columnar collection of :class:`LabeledSample` rows."""

    merchant: np.ndarray
    treatment: np.ndarray
    objective: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.merchant, dtype=np.int64)
        c = np.asarray(self.treatment, dtype=np.float64)
        y = np.asarray(self.objective, dtype=np.float64)
        if not (m.shape == c.shape == y.shape) or m.ndim != 1:
            raise LengthMismatchError("merchant, treatment and objective must be equal-length vectors")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(y))):
            raise NonFiniteError("samples contain NaN or Inf")
        object.__setattr__(self, "merchant", m)
        object.__setattr__(self, "treatment", c)
        object.__setattr__(self, "objective", y)

    @classmethod
    def from_rows(cls, rows) -> "Samples":
        rows = list(rows)
        if not rows:
            return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros(0))
        m, c, y = zip(*rows)
        return cls(np.array(m), np.array(c), np.array(y))

    def __len__(self) -> int:
        return self.merchant.size

    def __iter__(self):
        for m, c, y in zip(self.merchant, self.treatment, self.objective):
            yield LabeledSample(int(m), float(c), float(y))

    def subset(self, idx) -> "Samples":
        return Samples(self.merchant[idx], self.treatment[idx], self.objective[idx])

    def with_objective(self, y) -> "Samples":
        return Samples(self.merchant, self.treatment, y)


@dataclass(frozen=True, eq=False)
class CampaignTruth:
    """Planted per-merchant curve ``g*·c + p*`` (dense merchant ids)."""

    merchants: np.ndarray
    true_gradient: np.ndarray
    true_intercept: np.ndarray

    def as_dict(self) -> dict[int, tuple[float, float]]:
        return {
            int(m): (float(g), float(p))
            for m, g, p in zip(self.merchants, self.true_gradient, self.true_intercept)
        }


def _read_rows(path: Path):
    header = None
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            if line.startswith("#"):
                if header is None and not rows:
                    header = line[1:].split("\t")
                continue
            rows.append((lineno, line.split("\t")))
    return header, rows


def write_samples(samples: Samples, ext_ids, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#merchant_id\ttreatment\tobjective\n")
        for s in samples:
            fh.write(f"{ext_ids[s.merchant]}\t{s.treatment!r}\t{s.objective!r}\n")


def read_samples(path, id_index: dict[str, int], target: str = "objective") -> Samples:
    """Read ``merchant_id treatment objective [more targets...]``.

    ``target`` selects the label column by header name; without a header the
    third column is used.
    """
    path = Path(path)
    header, rows = _read_rows(path)
    col = 2
    if header is not None and len(header) > 2:
        if target not in header[2:]:
            raise DataError(f"{path.name}: no target column {target!r} (have {header[2:]})")
        col = header.index(target)
    elif target != "objective":
        raise DataError(f"{path.name}: headerless file cannot select target {target!r}")
    out = []
    for lineno, cells in rows:
        if len(cells) <= col:
            raise DimMismatchError(f"{path.name}:{lineno}: too few columns")
        try:
            m = id_index[cells[0]]
        except KeyError:
            raise DataError(f"{path.name}:{lineno}: unknown merchant {cells[0]!r}") from None
        try:
            out.append((m, float(cells[1]), float(cells[col])))
        except ValueError as exc:
            raise DataError(f"{path.name}:{lineno}: {exc}") from None
    return Samples.from_rows(out)


def write_truth(truth: CampaignTruth, ext_ids, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#merchant_id\tg_star\tp_star\n")
        for m, g, p in zip(truth.merchants, truth.true_gradient, truth.true_intercept):
            fh.write(f"{ext_ids[m]}\t{float(g)!r}\t{float(p)!r}\n")


def read_truth(path, id_index: dict[str, int]) -> CampaignTruth:
    path = Path(path)
    _, rows = _read_rows(path)
    m, g, p = [], [], []
    for lineno, cells in rows:
        if len(cells) != 3:
            raise DimMismatchError(f"{path.name}:{lineno}: expected 3 columns")
        try:
            m.append(id_index[cells[0]])
        except KeyError:
            raise DataError(f"{path.name}:{lineno}: unknown merchant {cells[0]!r}") from None
        g.append(float(cells[1]))
        p.append(float(cells[2]))
    return CampaignTruth(np.array(m, dtype=np.int64), np.array(g), np.array(p))
