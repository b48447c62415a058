"""Synthetic CICFlowMeter-style flows.

Rows use the full CICIDS2018 raw header so they go through exactly the same
ingest path as real captures.  The five modifiable features are drawn from
class-conditional log-normal/Poisson models, the eight related features are
computed from them with the constraint formulas (so every row is consistent
by construction), and the remaining columns are class-conditional noise.
``separation`` scales every class difference; at 0 the classes are
identically distributed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from .io import LoadStats, RawTable
from .schema import CICIDS2018_COLUMNS, MF_ROLES, RF_FORMULAS

MAX_DURATION_US = 1.2e8  # CICFlowMeter flow timeout
MAX_PKTS = 400
ATTACK_LABEL = "DoS attacks-Hulk"

ALWAYS_ZERO = (
    "Bwd PSH Flags", "Bwd URG Flags", "Fwd Byts/b Avg", "Fwd Pkts/b Avg", "Fwd Blk Rate Avg",
    "Bwd Byts/b Avg", "Bwd Pkts/b Avg", "Bwd Blk Rate Avg",
)
FLAG_COLUMNS = (
    "Fwd PSH Flags", "Fwd URG Flags", "FIN Flag Cnt", "SYN Flag Cnt", "RST Flag Cnt",
    "PSH Flag Cnt", "ACK Flag Cnt", "URG Flag Cnt", "CWE Flag Count", "ECE Flag Cnt",
)


@dataclass(frozen=True)
class SynthConfig:
    n_benign: int = 3600
    n_attack: int = 2400
    separation: float = 2.0
    seed: int = 0
    uf_signal: float = 0.25  # scale of per-column class shifts in the noise columns

    def __post_init__(self):
        if self.n_benign <= 0 or self.n_attack <= 0:
            raise ConfigurationError("n_benign and n_attack must be positive")
        if self.separation < 0:
            raise ConfigurationError("separation must be non-negative")


def _lognormal(rng, mu, sigma):
    return np.exp(rng.normal(mu, sigma))


def synth_generate(cfg: SynthConfig) -> RawTable:
    from ..constraints import recalc_related  # constraints imports data.schema

    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_benign + cfg.n_attack
    y = np.zeros(n, dtype=np.int64)
    y[cfg.n_benign:] = 1
    y = y[rng.permutation(n)]
    s = cfg.separation * y  # per-row shift, 0 for benign

    # ---- modifiable features
    log_dur = np.clip(rng.normal(5.3 - 1.2 * s, 0.8), 0.0, np.log10(MAX_DURATION_US))
    dur = np.maximum(np.round(10.0**log_dur), 1.0)
    tot_fwd = np.minimum(1 + rng.poisson(_lognormal(rng, np.log(6.0) - 0.7 * s, 0.5)), MAX_PKTS)
    bwd_ratio = _lognormal(rng, 0.1 - 0.6 * s, 0.4)
    tot_bwd = np.minimum(rng.poisson(tot_fwd * bwd_ratio), MAX_PKTS)
    seg_fwd = _lognormal(rng, np.log(90.0) + 0.6 * s, 0.4)
    seg_bwd = _lognormal(rng, np.log(500.0) - 0.5 * s, 0.5)
    len_fwd = np.round(tot_fwd * seg_fwd)
    len_bwd = np.round(tot_bwd * seg_bwd)
    mf = {
        "tot_fwd": tot_fwd.astype(np.float64), "tot_bwd": tot_bwd.astype(np.float64),
        "len_fwd": len_fwd, "len_bwd": len_bwd, "duration": dur,
    }
    cols = {MF_ROLES[r]: v for r, v in mf.items()}

    # ---- related features, exactly as the constraint engine computes them
    rel = recalc_related(np.stack([mf[r] for r in ("tot_fwd", "tot_bwd", "len_fwd", "len_bwd", "duration")], axis=1))
    for j, name in enumerate(RF_FORMULAS):
        cols[name] = rel[:, j]

    # ---- packet-length statistics loosely tied to the segment sizes
    spread = _lognormal(rng, -1.0, 0.3)
    for side, seg, pk in (("Fwd", seg_fwd, tot_fwd), ("Bwd", seg_bwd, tot_bwd)):
        has = pk > 0
        cols[f"{side} Pkt Len Mean"] = np.where(has, seg * _lognormal(rng, 0, 0.05), 0.0)
        cols[f"{side} Pkt Len Max"] = np.where(has, seg * (1 + 2 * spread), 0.0)
        cols[f"{side} Pkt Len Min"] = np.where(has, seg * np.maximum(1 - spread, 0.05), 0.0)
        cols[f"{side} Pkt Len Std"] = np.where(has, seg * spread, 0.0)
    cols["Pkt Len Min"] = np.minimum(cols["Fwd Pkt Len Min"], np.where(tot_bwd > 0, cols["Bwd Pkt Len Min"], np.inf))
    cols["Pkt Len Max"] = np.maximum(cols["Fwd Pkt Len Max"], cols["Bwd Pkt Len Max"])
    cols["Pkt Len Mean"] = 0.5 * (cols["Fwd Pkt Len Mean"] + cols["Bwd Pkt Len Mean"])
    cols["Pkt Len Std"] = 0.5 * (cols["Fwd Pkt Len Std"] + cols["Bwd Pkt Len Std"])
    cols["Pkt Len Var"] = cols["Pkt Len Std"] ** 2

    # ---- everything else: class-conditional noise with small per-column shifts
    fixed = set(cols) | set(ALWAYS_ZERO) | set(FLAG_COLUMNS) | {"Dst Port", "Protocol", "Timestamp", "Label"}
    col_rng = np.random.default_rng(20180216)  # column personalities independent of cfg.seed
    for name in CICIDS2018_COLUMNS:
        if name in fixed:
            continue
        mu = col_rng.uniform(2.0, 12.0)
        kappa = col_rng.uniform(-1.0, 1.0) * cfg.uf_signal
        cols[name] = np.round(_lognormal(rng, mu + kappa * s, 0.6), 3)
    for name in ALWAYS_ZERO:
        cols[name] = np.zeros(n)
    for name in FLAG_COLUMNS:
        p0 = col_rng.uniform(0.05, 0.6)
        shift = col_rng.uniform(-1.0, 1.0) * cfg.uf_signal * 0.3
        cols[name] = (rng.random(n) < np.clip(p0 + shift * s, 0.01, 0.99)).astype(np.float64)

    p_udp = np.clip(0.3 - 0.25 * np.minimum(s, 1.0), 0.02, 1.0)
    u = rng.random(n)
    cols["Protocol"] = np.where(u < 0.02, 0.0, np.where(u < 0.02 + p_udp, 17.0, 6.0))
    cols["Dst Port"] = np.where(cols["Protocol"] == 17, 53.0, np.where(rng.random(n) < 0.5, 80.0, 443.0))
    labels = np.where(y == 1, ATTACK_LABEL, "Benign").astype(object)
    table = RawTable({k: np.asarray(v, dtype=np.float64) for k, v in cols.items()}, labels, LoadStats(rows_read=n))
    return table


def write_csv(table: RawTable, path) -> None:
    """CICFlowMeter-layout CSV (timestamps are placeholders)."""
    order = [c for c in CICIDS2018_COLUMNS if c != "Label"]
    df = table.to_frame([c for c in order if c != "Timestamp"])
    df.insert(2, "Timestamp", "16/02/2018 08:00:00")
    df = df[list(CICIDS2018_COLUMNS)]
    df.to_csv(path, index=False, float_format="%.17g")
