"""Domain constraints for adversarial flow records.

Modifiable features (MF) are clamped to their valid range, related features
(RF) are recomputed from the MF values in raw units, and every other feature
(UF) is restored from the original row.
"""

from __future__ import annotations

import numpy as np

from .data.schema import FeatureSchema
from .errors import SchemaError, ValidationError

ROLE_ORDER = ("tot_fwd", "tot_bwd", "len_fwd", "len_bwd", "duration")
MIN_DURATION_US = 1.0
# absorbs normalize/denormalize round-off before int(); e.g. 29.999999999999996 -> 30
FLOOR_TOL = 1e-9


def _safe_div(num, den):
    ok = den > 0
    return np.where(ok, num / np.where(ok, den, 1.0), 0.0)


def _rates(r):
    dur = np.maximum(r["duration"], MIN_DURATION_US)
    return r["tot_fwd"] * 1e6 / dur, r["tot_bwd"] * 1e6 / dur, dur


def _fwd_pkts_per_s(r):
    return _rates(r)[0]


def _bwd_pkts_per_s(r):
    return _rates(r)[1]


def _flow_pkts_per_s(r):
    f, b, _ = _rates(r)
    return f + b


def _flow_byts_per_s(r):
    dur = _rates(r)[2]
    return (r["len_fwd"] + r["len_bwd"]) * 1e6 / dur


def _pkt_size_avg(r):
    return _safe_div(r["len_fwd"] + r["len_bwd"], r["tot_fwd"] + r["tot_bwd"])


def _fwd_seg_size_avg(r):
    return _safe_div(r["len_fwd"], r["tot_fwd"])


def _bwd_seg_size_avg(r):
    return _safe_div(r["len_bwd"], r["tot_bwd"])


def _down_up_ratio(r):
    return np.floor(_safe_div(r["tot_bwd"], r["tot_fwd"]) + FLOOR_TOL)


FORMULAS = {
    "fwd_pkts_per_s": _fwd_pkts_per_s,
    "bwd_pkts_per_s": _bwd_pkts_per_s,
    "flow_pkts_per_s": _flow_pkts_per_s,
    "flow_byts_per_s": _flow_byts_per_s,
    "pkt_size_avg": _pkt_size_avg,
    "fwd_seg_size_avg": _fwd_seg_size_avg,
    "bwd_seg_size_avg": _bwd_seg_size_avg,
    "down_up_ratio": _down_up_ratio,
}
FORMULA_ORDER = tuple(FORMULAS)


def _roles(raw_mf: np.ndarray) -> dict:
    raw_mf = np.asarray(raw_mf, dtype=np.float64)
    if raw_mf.shape[-1] != len(ROLE_ORDER):
        raise ValidationError(f"expected {len(ROLE_ORDER)} MF values, got {raw_mf.shape[-1]}")
    if not np.isfinite(raw_mf).all():
        raise ValidationError("non-finite MF value")
    if (raw_mf < 0).any():
        raise ValidationError("MF values must be non-negative")
    return {role: raw_mf[..., i] for i, role in enumerate(ROLE_ORDER)}


def recalc_related(raw_mf: np.ndarray) -> np.ndarray:
    """The eight related features from (tot_fwd, tot_bwd, len_fwd, len_bwd, duration).

    Output order: Fwd Pkts/s, Bwd Pkts/s, Flow Pkts/s, Flow Byts/s,
    Pkt Size Avg, Fwd Seg Size Avg, Bwd Seg Size Avg, Down/Up Ratio.
    Duration is floored at 1 us; an average or ratio with a zero packet count
    is 0.
    """
    r = _roles(raw_mf)
    return np.stack([FORMULAS[k](r) for k in FORMULA_ORDER], axis=-1)


def perturbation_mask(schema: FeatureSchema) -> np.ndarray:
    return schema.groups.mask(schema.n_features)


class ConstraintEngine:
    """Precomputed index/scale tables for one fitted schema."""

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        g = schema.groups
        self.mf, self.rf = g.mf, g.rf
        lo, hi = schema.mins, schema.maxs
        self.lo, self.span = lo, hi - lo
        self.role_cols = np.array([schema.role_index(r) for r in ROLE_ORDER], dtype=np.intp)
        self.rf_targets = []
        for name, formula in schema.related.items():
            self.rf_targets.append((schema.index(name), FORMULAS[formula]))
        self.mask = perturbation_mask(schema)
        self.clamped = 0  # RF entries pushed back into [0, 1] so far

    def related_raw(self, X: np.ndarray) -> dict:
        """Raw role values of the MF coordinates of normalized rows."""
        raw = self.lo[self.role_cols] + X[:, self.role_cols] * self.span[self.role_cols]
        return _roles(raw)

    def apply(self, x_orig: np.ndarray, x_cand: np.ndarray) -> np.ndarray:
        x_orig = np.asarray(x_orig, dtype=np.float64)
        single = x_orig.ndim == 1
        xo = np.atleast_2d(x_orig)
        xc = np.broadcast_to(np.atleast_2d(np.asarray(x_cand, dtype=np.float64)), xo.shape)
        if xo.shape[1] != self.schema.n_features:
            raise SchemaError(
                f"row width {xo.shape[1]} does not match schema {self.schema.name} "
                f"({self.schema.n_features} features)"
            )
        out = xo.copy()
        out[:, self.mf] = np.clip(xc[:, self.mf], 0.0, 1.0)
        roles = self.related_raw(out)
        for col, fn in self.rf_targets:
            raw = fn(roles)
            span = self.span[col]
            if span > 0:
                v = (raw - self.lo[col]) / span
            else:
                v = np.zeros_like(raw)
            bad = (v < 0) | (v > 1)
            self.clamped += int(bad.sum())
            out[:, col] = np.clip(v, 0.0, 1.0)
        return out[0] if single else out


_ENGINES: dict = {}


def engine_for(schema: FeatureSchema) -> ConstraintEngine:
    hit = _ENGINES.get(id(schema))
    if hit is None or hit[0] is not schema:
        hit = _ENGINES[id(schema)] = (schema, ConstraintEngine(schema))
    return hit[1]


def apply_constraints(x_orig: np.ndarray, x_cand: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Project candidate rows onto the feasible set defined by ``schema``.

    MF from ``x_cand`` clamped to [0, 1]; RF recomputed in raw units then
    renormalized and clamped; UF copied from ``x_orig``.  Works on a single
    row or a batch (``x_cand`` may broadcast against ``x_orig``).
    """
    return engine_for(schema).apply(x_orig, x_cand)
