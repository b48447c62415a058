"""Experiment grid: attacks x epsilon x runs -> metrics tables.

Per-input attacks (FGSM/BIM, constrained and not) are evaluated once per
epsilon on the malicious test rows.  UAP cells generate ``runs`` independent
perturbations on the training set and deploy each on the whole test set.
Rows are sorted by (attack, loss, epsilon, run) before writing, so the
output is byte-stable whatever the execution order or worker count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .attacks import AttackConfig, attack_dataset, adversarial_features
from .data.preprocess import ATTACK, FlowDataset
from .errors import ConfigurationError
from .losses import LossKind
from .metrics import accuracy_fnr, confusion, pcc_metrics
from .network import QNetwork
from .uap import UapConfig, apply_uap, generate_uap, run_seed

log = logging.getLogger(__name__)

PER_INPUT = ("fgsm", "bim", "fgsm_unconstrained", "bim_unconstrained")
MEAN_RUN = "mean"


def default_grid(n: int = 17, top: float = 0.04) -> tuple:
    return tuple(round(float(v), 10) for v in np.linspace(0.0, top, n))


def parse_grid(text: str) -> tuple:
    """``"lo:hi:n"`` for an evenly spaced grid or ``"a,b,c"`` for explicit values."""
    try:
        if ":" in text:
            lo, hi, n = text.split(":")
            vals = np.linspace(float(lo), float(hi), int(n))
        else:
            vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigurationError(f"bad epsilon grid {text!r}: {e}") from e
    return tuple(round(float(v), 10) for v in vals)


@dataclass(frozen=True)
class SweepConfig:
    grid: tuple = field(default_factory=default_grid)
    attacks: tuple = PER_INPUT
    losses: tuple = tuple(k.value for k in LossKind)
    runs: int = 80
    master_seed: int = 0
    seed_fraction: float = 0.001
    delta_target: float = 0.2
    max_iter: int = 10
    random_init: bool = False
    pcc_layer: str = "q"

    def __post_init__(self):
        g = tuple(float(v) for v in self.grid)
        if not g or list(g) != sorted(g) or g[0] != 0.0:
            raise ConfigurationError("epsilon grid must be sorted ascending and start at 0")
        if len(set(g)) != len(g):
            raise ConfigurationError("epsilon grid has duplicate values")
        object.__setattr__(self, "grid", g)
        for a in self.attacks:
            if a not in PER_INPUT:
                raise ConfigurationError(f"unknown attack {a!r}; choose from {PER_INPUT}")
        object.__setattr__(self, "losses", tuple(LossKind.parse(k).value for k in self.losses))
        if self.runs < 1:
            raise ConfigurationError("runs must be >= 1")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass
class MetricsRecord:
    attack: str
    loss: str
    epsilon: float
    run: object  # int, or "mean" for the aggregate row
    accuracy: float
    accuracy_benign_clean: float
    fnr: float
    fooling_rate: float
    train_fooling_rate: float
    pcc_x: float
    pcc_pertu: float
    pcc_skipped: float
    tp: float
    tn: float
    fp: float
    fn: float


COLUMNS = tuple(f.name for f in fields(MetricsRecord))
METRIC_COLUMNS = COLUMNS[4:]


def _nan(v):
    return float("nan") if v is None else float(v)


def _record(attack, loss, eps, run, net, test: FlowDataset, X_all, X_benign_clean, x_c, x_a, delta,
            layer, train_fr=float("nan")):
    """Metrics for one perturbed copy of the test set.

    ``X_all`` is the evaluated feature matrix, ``X_benign_clean`` the same
    with benign rows restored; (x_c, x_a, delta) feed the PCC diagnostics.
    """
    y = test.labels
    clean = net.predict(test.features)
    pred = net.predict(X_all)
    c = confusion(pred, y)
    acc, fnr = accuracy_fnr(c)
    acc_bc, _ = accuracy_fnr(confusion(net.predict(X_benign_clean), y))
    # fooling rate over the rows the attack touched
    touched = np.ones(len(y), dtype=bool) if attack == "uap" else (y == ATTACK)
    fr = float(np.mean(pred[touched] != clean[touched])) if touched.any() else float("nan")
    p = pcc_metrics(net, x_c, x_a, delta, layer)
    return MetricsRecord(
        attack, loss, float(eps), run, acc, acc_bc, _nan(fnr), fr, float(train_fr),
        _nan(p.pcc_x), _nan(p.pcc_pertu), float(p.skipped), c.tp, c.tn, c.fp, c.fn,
    )


# ---- worker side; state is installed once per process

_STATE: dict = {}


def _install(net, train, test, cfg):
    _STATE.update(net=net, train=train, test=test, cfg=cfg)


def _per_input_task(task):
    attack, eps = task
    net, test, cfg = _STATE["net"], _STATE["test"], _STATE["cfg"]
    method = attack.split("_")[0]
    acfg = AttackConfig(eps, constrained=not attack.endswith("_unconstrained"))
    with threadpool_limits(1):
        res = attack_dataset(net, test, method, acfg)
        X = adversarial_features(test, res)
        return _record(attack, LossKind.CE_TARGETED.value, eps, 0, net, test, X, X,
                       res.x_clean, res.x_adv, res.x_adv - res.x_clean, cfg.pcc_layer)


def _uap_task(task):
    loss, eps, run = task
    net, train, test, cfg = _STATE["net"], _STATE["train"], _STATE["test"], _STATE["cfg"]
    ucfg = UapConfig(
        epsilon=eps, loss=LossKind.parse(loss), seed_fraction=cfg.seed_fraction,
        delta_target=cfg.delta_target, max_iter=cfg.max_iter, random_init=cfg.random_init,
        seed=run_seed(cfg.master_seed, f"uap/{loss}/{eps!r}", run),
    )
    with threadpool_limits(1):
        res = generate_uap(net, train, ucfg, test.schema)
        X = apply_uap(test.features, res.uap, test.schema)
        Xb = X.copy()
        ben = test.labels != ATTACK
        Xb[ben] = test.features[ben]
        return _record("uap", loss, eps, run, net, test, X, Xb, test.features, X, res.uap,
                       cfg.pcc_layer, res.fooling_rate)


def _dispatch(task):
    kind, payload = task
    return _per_input_task(payload) if kind == "attack" else _uap_task(payload)


def _sort_key(r: MetricsRecord):
    run = r.run if isinstance(r.run, int) else 1 << 30
    return (r.attack, r.loss, r.epsilon, run)


def aggregate(records: list[MetricsRecord]) -> list[MetricsRecord]:
    """One mean row per (attack, loss, epsilon) cell; NaN-valued runs excluded per column."""
    cells: dict = {}
    for r in records:
        if r.run != MEAN_RUN:
            cells.setdefault((r.attack, r.loss, r.epsilon), []).append(r)
    out = []
    for (a, l, e), rs in cells.items():
        vals = {}
        for col in METRIC_COLUMNS:
            v = np.array([getattr(r, col) for r in rs], dtype=np.float64)
            ok = ~np.isnan(v)
            vals[col] = float(v[ok].mean()) if ok.any() else float("nan")
        out.append(MetricsRecord(a, l, e, MEAN_RUN, **vals))
    return out


def run_sweep(net: QNetwork, train: FlowDataset, test: FlowDataset, cfg: SweepConfig,
              jobs: int = 1) -> list[MetricsRecord]:
    if net is None or train is None or test is None:
        raise ConfigurationError("sweep needs a trained agent plus train and test datasets")
    if train.schema.fingerprint != test.schema.fingerprint:
        raise ConfigurationError("train and test datasets use different feature schemas")
    tasks = [("attack", (a, e)) for a in cfg.attacks for e in cfg.grid]
    tasks += [("uap", (l, e, r)) for l in cfg.losses for e in cfg.grid for r in range(cfg.runs)]
    log.info("sweep: %d tasks on %d worker(s)", len(tasks), jobs)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs, initializer=_install, initargs=(net, train, test, cfg)) as ex:
            records = list(ex.map(_dispatch, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        _install(net, train, test, cfg)
        try:
            records = [_dispatch(t) for t in tasks]
        finally:
            _STATE.clear()
    records += aggregate(records)
    records.sort(key=_sort_key)
    return records


def clean_baseline(net: QNetwork, test: FlowDataset) -> dict:
    c = confusion(net.predict(test.features), test.labels)
    acc, fnr = accuracy_fnr(c)
    return {"accuracy": acc, "fnr": fnr, **asdict(c)}


# ---- output formats

def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def to_csv(records: list[MetricsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    return buf.getvalue()


def to_long_csv(records: list[MetricsRecord]) -> str:
    """attack,loss,epsilon,run,metric,value: one line per metric, for plotting tools."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("attack", "loss", "epsilon", "run", "metric", "value"))
    for r in records:
        for c in METRIC_COLUMNS:
            w.writerow((r.attack, r.loss, _fmt(r.epsilon), r.run, c, _fmt(getattr(r, c))))
    return buf.getvalue()


def summary(records: list[MetricsRecord]) -> dict:
    """Per-cell mean and standard deviation of every metric, keyed "attack/loss/eps"."""
    cells: dict = {}
    for r in records:
        if r.run != MEAN_RUN:
            cells.setdefault(f"{r.attack}/{r.loss}/{r.epsilon!r}", []).append(r)
    out = {}
    for key in sorted(cells):
        rs = cells[key]
        entry = {"runs": len(rs)}
        for col in METRIC_COLUMNS:
            v = np.array([getattr(r, col) for r in rs], dtype=np.float64)
            v = v[~np.isnan(v)]
            entry[col] = {
                "mean": float(v.mean()) if v.size else None,
                "std": float(v.std()) if v.size else None,
            }
        out[key] = entry
    return out


def _num(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def read_csv(text: str) -> list[MetricsRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for row in rows:
        run = row["run"]
        out.append(MetricsRecord(
            row["attack"], row["loss"], float(row["epsilon"]),
            MEAN_RUN if run == MEAN_RUN else int(run),
            **{c: _num(row[c]) for c in METRIC_COLUMNS},
        ))
    return out


def write_outputs(records, out_prefix: str, baseline: dict | None = None) -> dict:
    """Write <prefix>.csv, <prefix>_long.csv and <prefix>_summary.json; returns paths."""
    paths = {
        "csv": f"{out_prefix}.csv",
        "long_csv": f"{out_prefix}_long.csv",
        "summary": f"{out_prefix}_summary.json",
    }
    with open(paths["csv"], "w", newline="") as f:
        f.write(to_csv(records))
    with open(paths["long_csv"], "w", newline="") as f:
        f.write(to_long_csv(records))
    with open(paths["summary"], "w") as f:
        json.dump({"clean": baseline, "cells": summary(records)}, f, indent=1, sort_keys=True,
                  allow_nan=False, default=str)
    return paths
