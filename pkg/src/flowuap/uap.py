"""Universal adversarial perturbations accumulated from targeted FGSM steps.

A small seedset drives the accumulation.  Each seed that the current UAP
does not yet fool contributes one full-budget sign step (masked to the
modifiable features); the running sum is clipped back into the eps-ball after
every update.  The outer loop stops when the fooling rate over the training set
reaches ``1 - delta_target`` or after ``max_iter`` passes.
"""

from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks import MAX_EPSILON
from .constraints import apply_constraints, perturbation_mask
from .data.preprocess import FlowDataset
from .data.schema import FeatureSchema
from .errors import ConfigurationError
from .losses import BENIGN, LossKind, batch_loss_and_grad
from .network import QNetwork


@dataclass(frozen=True)
class UapConfig:
    epsilon: float = 0.04
    loss: LossKind = LossKind.CE_TARGETED
    seed_fraction: float = 0.001
    delta_target: float = 0.2
    max_iter: int = 10
    seed: int = 0
    target_label: int = BENIGN
    # start from a random sign vector of size eps/10 instead of 0; lets losses
    # that are stationary at uap=0 (cosine similarity) move at all
    random_init: bool = False

    def __post_init__(self):
        if not 0 < self.seed_fraction <= 1:
            raise ConfigurationError("seed_fraction must lie in (0, 1]")
        if not 0 <= self.delta_target <= 1:
            raise ConfigurationError("delta_target must lie in [0, 1]")
        if self.max_iter < 0:
            raise ConfigurationError("max_iter must be >= 0")
        if not 0 <= self.epsilon <= MAX_EPSILON + 1e-12:
            raise ConfigurationError(f"epsilon must lie in [0, {MAX_EPSILON}]")
        if isinstance(self.loss, str):
            object.__setattr__(self, "loss", LossKind.parse(self.loss))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.value
        return d


@dataclass
class UapResult:
    uap: np.ndarray
    fooling_rate_history: list = field(default_factory=list)
    iterations_used: int = 0
    seedset: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    config: UapConfig = field(default_factory=UapConfig)

    @property
    def fooling_rate(self) -> float:
        return self.fooling_rate_history[-1] if self.fooling_rate_history else 0.0


def project_linf(v: np.ndarray, eps: float) -> np.ndarray:
    if eps < 0:
        raise ConfigurationError("eps must be >= 0")
    return np.clip(v, -eps, eps)


def apply_uap(features: np.ndarray, uap: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Deploy ``uap`` on every row: MF shifted and clamped, RF recomputed, UF kept."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return apply_constraints(X, X + uap, schema)


def fooling_rate(net: QNetwork, features: np.ndarray, uap: np.ndarray, schema: FeatureSchema,
                 clean_pred: np.ndarray | None = None) -> float:
    """Fraction of rows whose predicted label changes under the deployed UAP."""
    X = np.atleast_2d(features)
    if len(X) == 0:
        return 0.0
    if clean_pred is None:
        clean_pred = net.predict(X)
    return float(np.mean(net.predict(apply_uap(X, uap, schema)) != clean_pred))


def seedset_size(n_train: int, fraction: float) -> int:
    return max(1, int(round(fraction * n_train)))


def run_seed(master_seed: int, cell: str, run_index: int) -> int:
    """Independent per-run seed for (master seed, grid cell, run)."""
    ss = np.random.SeedSequence([master_seed, zlib.crc32(cell.encode()), run_index])
    return int(ss.generate_state(1)[0])


def generate_uap(net: QNetwork, train_set: FlowDataset, cfg: UapConfig,
                 schema: FeatureSchema | None = None) -> UapResult:
    schema = schema or train_set.schema
    X = train_set.features
    if len(X) == 0:
        raise ConfigurationError("empty training set: no seedset to draw")
    rng = np.random.default_rng(cfg.seed)
    seeds = np.sort(rng.choice(len(X), size=seedset_size(len(X), cfg.seed_fraction), replace=False))
    mask = perturbation_mask(schema)
    eps = cfg.epsilon
    kind = cfg.loss
    uap = np.zeros(schema.n_features)
    if cfg.random_init:
        uap = project_linf(0.1 * eps * rng.choice((-1.0, 1.0), size=uap.shape) * mask, eps)
    result = UapResult(uap, [], 0, seeds, cfg)
    clean_train = net.predict(X)
    fr = 0.0
    order = seeds.copy()
    while fr < 1.0 - cfg.delta_target and result.iterations_used < cfg.max_iter:
        rng.shuffle(order)
        for i in order:
            x = X[i]
            x_cur = apply_constraints(x, x + uap, schema)
            if net.predict(x_cur) != clean_train[i]:
                continue  # already fooled by the current uap
            ev = batch_loss_and_grad(net, x, uap, kind, cfg.target_label, x_adv=x_cur)
            if ev.degenerate[0]:
                continue
            step = kind.direction * eps * np.sign(ev.grad[0]) * mask
            ae = apply_constraints(x, x + step, schema)
            uap = project_linf(uap + (ae - x) * mask, eps)
        result.iterations_used += 1
        fr = fooling_rate(net, X, uap, schema, clean_train)
        result.fooling_rate_history.append(fr)
    result.uap = uap
    return result
