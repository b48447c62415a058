"""Per-input targeted attacks: one-step FGSM and iterative BIM.

Both accept a single row or a batch.  In constrained mode the step is masked
to the modifiable features and every iterate goes through the constraint
projection; unconstrained mode perturbs all 76 coordinates and only clips to
the [0, 1] feature box.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import apply_constraints, perturbation_mask
from .data.preprocess import ATTACK, FlowDataset
from .data.schema import FeatureSchema
from .errors import ConfigurationError, ValidationError
from .losses import BENIGN, LossKind, batch_loss_and_grad
from .network import QNetwork

MAX_EPSILON = 0.04
METHODS = ("fgsm", "bim")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    target_label: int = BENIGN
    bim_steps: int = 20
    bim_max_iter: int = 100
    constrained: bool = True
    loss: LossKind = LossKind.CE_TARGETED

    def __post_init__(self):
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ConfigurationError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if self.epsilon > MAX_EPSILON + 1e-12:
            raise ConfigurationError(f"epsilon {self.epsilon} exceeds budget cap {MAX_EPSILON}")
        if self.bim_steps < 1 or self.bim_max_iter < 0:
            raise ConfigurationError("bim_steps must be >= 1 and bim_max_iter >= 0")
        if self.target_label not in (0, 1):
            raise ConfigurationError("target_label must be 0 or 1")

    @property
    def alpha(self) -> float:
        return self.epsilon / self.bim_steps


def step_mask(schema: FeatureSchema, constrained: bool) -> np.ndarray:
    return perturbation_mask(schema) if constrained else np.ones(schema.n_features)


def sign_direction(net, x, x_adv, kind: LossKind, target: int, mask) -> np.ndarray:
    """dir * sign(grad J) restricted to ``mask``; degenerate rows get 0."""
    ev = batch_loss_and_grad(net, x, x_adv - x, kind, target, x_adv=x_adv)
    g = np.where(ev.degenerate[:, None], 0.0, ev.grad)
    return kind.direction * np.sign(g) * mask


def _project(x, cand, schema, constrained):
    if constrained:
        return apply_constraints(x, cand, schema)
    return np.clip(cand, 0.0, 1.0)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ValidationError("non-finite attack input")
    return np.atleast_2d(x), x.ndim == 1


def fgsm_candidate(net: QNetwork, x, cfg: AttackConfig, schema: FeatureSchema) -> np.ndarray:
    """x + eps * step before any clipping or constraint projection."""
    X, single = _as_batch(x)
    d = sign_direction(net, X, X, cfg.loss, cfg.target_label, step_mask(schema, cfg.constrained))
    out = X + cfg.epsilon * d
    return out[0] if single else out


def fgsm_targeted(net: QNetwork, x, cfg: AttackConfig, schema: FeatureSchema) -> np.ndarray:
    X, single = _as_batch(x)
    cand = fgsm_candidate(net, X, cfg, schema)
    out = _project(X, cand, schema, cfg.constrained)
    return out[0] if single else out


def bim_targeted(net: QNetwork, x, cfg: AttackConfig, schema: FeatureSchema) -> np.ndarray:
    """Iterated sign steps of size eps/bim_steps, clipped to the eps-ball around x.

    Runs for at most ``bim_max_iter`` iterations; a row stops moving as soon
    as it is classified as the target label.  Rows that already are stay put.
    """
    X, single = _as_batch(x)
    mask = step_mask(schema, cfg.constrained)
    eps = cfg.epsilon
    adv = _project(X, X, schema, cfg.constrained)
    active = net.predict(adv) != cfg.target_label
    for _ in range(cfg.bim_max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa, xo = adv[idx], X[idx]
        d = sign_direction(net, xo, xa, cfg.loss, cfg.target_label, mask)
        delta = np.clip(xa + cfg.alpha * d - xo, -eps, eps)
        adv[idx] = _project(xo, xo + delta, schema, cfg.constrained)
        active[idx] = net.predict(adv[idx]) != cfg.target_label
    return adv[0] if single else adv


ATTACKS = {"fgsm": fgsm_targeted, "bim": bim_targeted}


@dataclass
class AttackResult:
    method: str
    config: AttackConfig
    ids: np.ndarray
    x_clean: np.ndarray
    x_adv: np.ndarray
    clean_pred: np.ndarray
    adv_pred: np.ndarray
    mf_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))

    def rows(self):
        """One dict per attacked sample: id, eps, kind, predictions, MF deltas."""
        dmf = (self.x_adv - self.x_clean)[:, self.mf_index]
        for i in range(len(self.ids)):
            yield {
                "sample_id": int(self.ids[i]),
                "epsilon": self.config.epsilon,
                "attack": self.method + ("" if self.config.constrained else "_unconstrained"),
                "clean_pred": int(self.clean_pred[i]),
                "adv_pred": int(self.adv_pred[i]),
                **{f"delta_mf{j}": float(v) for j, v in enumerate(dmf[i])},
            }


def attack_dataset(net: QNetwork, ds: FlowDataset, method: str, cfg: AttackConfig) -> AttackResult:
    """Attack the malicious rows of ``ds``; benign rows are never touched."""
    if method not in ATTACKS:
        raise ConfigurationError(f"unknown attack {method!r}; choose from {METHODS}")
    sel = np.flatnonzero(ds.labels == ATTACK)
    X = ds.features[sel]
    if len(sel):
        adv = ATTACKS[method](net, X, cfg, ds.schema)
    else:
        adv = X.copy()
    return AttackResult(
        method, cfg, ds.ids[sel], X, adv, net.predict(X), net.predict(adv),
        np.asarray(ds.schema.groups.mf, dtype=np.intp),
    )


def adversarial_features(ds: FlowDataset, result: AttackResult) -> np.ndarray:
    """Full feature matrix with the attacked rows substituted."""
    out = ds.features.copy()
    out[ds.labels == ATTACK] = result.x_adv
    return out
