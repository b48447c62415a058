"""Confusion counts, accuracy/FNR and activation-correlation diagnostics.

Malicious traffic (label 1) is the positive class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .network import QNetwork, forward


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(preds, labels) -> ConfusionCounts:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValidationError(f"length mismatch: {preds.shape} predictions vs {labels.shape} labels")
    if preds.size == 0:
        raise ValidationError("empty prediction set")
    p, y = preds == 1, labels == 1
    return ConfusionCounts(
        tp=int((p & y).sum()), tn=int((~p & ~y).sum()),
        fp=int((p & ~y).sum()), fn=int((~p & y).sum()),
    )


def accuracy_fnr(c: ConfusionCounts) -> tuple[float, float | None]:
    """(accuracy, fnr); fnr is None when there are no positives."""
    if c.total == 0:
        raise ValidationError("no samples")
    acc = (c.tp + c.tn) / c.total
    pos = c.tp + c.fn
    return acc, (c.fn / pos if pos else None)


def pcc(x, y) -> float | None:
    """Pearson correlation of two equal-length vectors; None when either is constant."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValidationError("pcc needs two 1-D vectors of equal length >= 2")
    r = _row_pcc(x[None], y[None])[0]
    return None if np.isnan(r) else float(r)


def _row_pcc(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise correlation; NaN where a row has zero variance."""
    a = A - A.mean(axis=1, keepdims=True)
    b = B - B.mean(axis=1, keepdims=True)
    na = np.sqrt((a * a).sum(axis=1))
    nb = np.sqrt((b * b).sum(axis=1))
    ok = (na > 0) & (nb > 0)
    r = np.full(len(A), np.nan)
    r[ok] = np.clip((a[ok] * b[ok]).sum(axis=1) / (na[ok] * nb[ok]), -1.0, 1.0)
    return r


@dataclass(frozen=True)
class PccSummary:
    pcc_x: float | None
    pcc_pertu: float | None
    skipped: int


def _mean_defined(r):
    ok = ~np.isnan(r)
    return (float(r[ok].mean()) if ok.any() else None), int((~ok).sum())


def pcc_metrics(net: QNetwork, x_clean: np.ndarray, x_adv: np.ndarray, delta: np.ndarray,
                layer="q") -> PccSummary:
    """Mean PCC(a(x), a(x_adv)) and PCC(a(delta), a(x_adv)) over rows.

    ``delta`` is one shared vector (a UAP) or one row per sample.  A row is
    skipped, and counted, when either of its two correlations is undefined.
    """
    x_clean = np.atleast_2d(x_clean)
    x_adv = np.atleast_2d(x_adv)
    if len(x_clean) == 0:
        return PccSummary(None, None, 0)
    a_x = forward(net, x_clean).layer(layer)
    a_adv = forward(net, x_adv).layer(layer)
    a_d = forward(net, np.atleast_2d(delta)).layer(layer)
    a_d = np.broadcast_to(a_d, a_adv.shape)
    rx = _row_pcc(a_x, a_adv)
    rp = _row_pcc(a_d, a_adv)
    bad = np.isnan(rx) | np.isnan(rp)
    rx[bad] = np.nan
    rp[bad] = np.nan
    mx, skipped = _mean_defined(rx)
    mp, _ = _mean_defined(rp)
    return PccSummary(mx, mp, skipped)
