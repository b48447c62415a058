"""Attack objectives and their input gradients.

Every loss is evaluated at an adversarial point ``x_adv`` (normally
``x + delta``, or its constrained image) and differentiated with respect to
that point.  Batches are handled row-wise.

=============  ===========================================  ==========
kind           objective                                    direction
=============  ===========================================  ==========
CE_TARGETED    cross-entropy(softmax(q(x_adv)), target)     minimize
PCC_PERTU      pearson(a_l(x_adv), a_l(delta))              maximize
PD_MEAN        sum_l log(mean(a_l(x_adv)) + 1e-8)           maximize
PD_L2          sum_l log(||a_l(x_adv)||_2 + 1e-8)           maximize
COSSIM_L3/L4   -cos(a_l(x_adv), a_l(x))                     maximize
=============  ===========================================  ==========
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateGradientError
from .network import N_HIDDEN, QNetwork, backward_input, forward

BENIGN, ATTACK = 0, 1
PD_EPS = 1e-8
ALL_HIDDEN = tuple(range(1, N_HIDDEN + 1))


class LossKind(enum.Enum):
    CE_TARGETED = "ce"
    PCC_PERTU = "pcc_pertu"
    PD_MEAN = "pd_mean"
    PD_L2 = "pd_l2"
    COSSIM_L3 = "cossim_l3"
    COSSIM_L4 = "cossim_l4"

    @property
    def direction(self) -> int:
        """-1 to step down the loss, +1 to step up."""
        return -1 if self is LossKind.CE_TARGETED else 1

    @property
    def default_layer(self):
        return {
            LossKind.COSSIM_L3: 3,
            LossKind.COSSIM_L4: 4,
            LossKind.PCC_PERTU: 4,
        }.get(self)

    @classmethod
    def parse(cls, name: str) -> "LossKind":
        try:
            return cls(name.lower())
        except ValueError:
            try:
                return cls[name.upper()]
            except KeyError:
                choices = ", ".join(k.value for k in cls)
                raise ConfigurationError(f"unknown loss {name!r} (choose from {choices})") from None


@dataclass(frozen=True)
class LossEval:
    loss: np.ndarray  # (n,) or scalar; NaN where degenerate
    grad: np.ndarray  # dJ/dx_adv, zero where degenerate
    degenerate: np.ndarray  # bool per row


def pearson_and_grad(u: np.ndarray, v: np.ndarray):
    """Row-wise Pearson correlation of ``u`` with ``v`` and d(pcc)/du.

    Returns ``(r, dr_du, ok)``; rows where either side has zero variance get
    ``r = nan``, zero gradient and ``ok = False``.
    """
    u = np.atleast_2d(u)
    v = np.broadcast_to(np.atleast_2d(v), u.shape)
    uc = u - u.mean(axis=1, keepdims=True)
    vc = v - v.mean(axis=1, keepdims=True)
    su = np.sqrt((uc * uc).sum(axis=1))
    sv = np.sqrt((vc * vc).sum(axis=1))
    ok = (su > 0) & (sv > 0)
    su_ = np.where(ok, su, 1.0)
    sv_ = np.where(ok, sv, 1.0)
    r = (uc * vc).sum(axis=1) / (su_ * sv_)
    r = np.clip(r, -1.0, 1.0)
    grad = vc / (su_ * sv_)[:, None] - (r / su_**2)[:, None] * uc
    grad[~ok] = 0.0
    r = np.where(ok, r, np.nan)
    return r, grad, ok


def cosine_and_grad(u: np.ndarray, v: np.ndarray):
    """Row-wise cosine similarity of ``u`` with ``v`` and d(cos)/du."""
    u = np.atleast_2d(u)
    v = np.broadcast_to(np.atleast_2d(v), u.shape)
    nu = np.linalg.norm(u, axis=1)
    nv = np.linalg.norm(v, axis=1)
    ok = (nu > 0) & (nv > 0)
    nu_ = np.where(ok, nu, 1.0)
    nv_ = np.where(ok, nv, 1.0)
    c = np.clip((u * v).sum(axis=1) / (nu_ * nv_), -1.0, 1.0)
    grad = v / (nu_ * nv_)[:, None] - (c / nu_**2)[:, None] * u
    # identical rows sit exactly at the maximum; don't let rounding pick a sign
    same = (u == v).all(axis=1)
    c = np.where(same & ok, 1.0, c)
    grad[same | ~ok] = 0.0
    c = np.where(ok, c, np.nan)
    return c, grad, ok


def batch_loss_and_grad(
    net: QNetwork,
    x: np.ndarray,
    delta: np.ndarray,
    kind: LossKind,
    target: int = BENIGN,
    *,
    x_adv: np.ndarray | None = None,
    layer=None,
    pd_layers=ALL_HIDDEN,
) -> LossEval:
    """Vectorized loss/gradient over the rows of ``x`` (always 2-D output)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    delta = np.asarray(delta, dtype=np.float64)
    if x_adv is None:
        x_adv = x + delta
    x_adv = np.atleast_2d(x_adv)
    n = x_adv.shape[0]
    layer = kind.default_layer if layer is None else layer
    tr = forward(net, x_adv)
    grad_hidden = [None] * N_HIDDEN
    grad_q = None
    ok = np.ones(n, dtype=bool)

    if kind is LossKind.CE_TARGETED:
        logp = tr.qvalues - tr.qvalues.max(axis=1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
        loss = -logp[:, target]
        grad_q = tr.probs.copy()
        grad_q[:, target] -= 1.0

    elif kind is LossKind.PD_MEAN:
        loss = np.zeros(n)
        for li in pd_layers:
            a = tr.layer(li)
            m = a.mean(axis=1) + PD_EPS
            loss += np.log(m)
            grad_hidden[li - 1] = np.repeat((1.0 / (a.shape[1] * m))[:, None], a.shape[1], axis=1)

    elif kind is LossKind.PD_L2:
        loss = np.zeros(n)
        for li in pd_layers:
            a = tr.layer(li)
            nrm = np.linalg.norm(a, axis=1)
            loss += np.log(nrm + PD_EPS)
            scale = np.where(nrm > 0, 1.0 / (np.where(nrm > 0, nrm, 1.0) * (nrm + PD_EPS)), 0.0)
            grad_hidden[li - 1] = a * scale[:, None]

    elif kind in (LossKind.COSSIM_L3, LossKind.COSSIM_L4):
        ref = forward(net, x).layer(layer)
        c, dc, ok = cosine_and_grad(tr.layer(layer), ref)
        loss = -c
        g = -dc
        if layer == "q":
            grad_q = g
        else:
            grad_hidden[layer - 1] = g

    elif kind is LossKind.PCC_PERTU:
        ref = forward(net, np.atleast_2d(delta)).layer(layer)
        r, dr, ok = pearson_and_grad(tr.layer(layer), ref)
        loss = r
        if layer == "q":
            grad_q = dr
        else:
            grad_hidden[layer - 1] = dr

    else:  # pragma: no cover
        raise ConfigurationError(f"unsupported loss {kind}")

    grad = backward_input(net, tr, grad_q, grad_hidden)
    grad[~ok] = 0.0
    return LossEval(loss, grad, ~ok)


def loss_and_input_grad(
    net: QNetwork,
    x: np.ndarray,
    delta: np.ndarray,
    kind: LossKind,
    target: int = BENIGN,
    **kw,
) -> tuple[float, np.ndarray]:
    """Single-sample loss and ``dJ/dx_adv``; raises on a degenerate gradient."""
    ev = batch_loss_and_grad(net, x, delta, kind, target, **kw)
    if ev.degenerate[0]:
        raise DegenerateGradientError(kind)
    return float(ev.loss[0]), ev.grad[0]


@dataclass(frozen=True)
class LossContext:
    target: int = BENIGN
    delta: np.ndarray | None = None
    layer: object = None
    pd_layers: tuple = ALL_HIDDEN


def input_gradient(net: QNetwork, x: np.ndarray, loss: LossKind, context: LossContext = LossContext()):
    """dJ/dx at ``x`` itself (``x`` already includes any perturbation).

    For PCC_PERTU ``context.delta`` is the perturbation whose own activation
    is the reference; for the cosine losses ``x - delta`` is taken as the clean
    point.
    """
    x = np.asarray(x, dtype=np.float64)
    delta = np.zeros_like(x) if context.delta is None else np.asarray(context.delta, dtype=np.float64)
    _, g = loss_and_input_grad(
        net, x - delta, delta, loss, context.target,
        x_adv=x, layer=context.layer, pd_layers=context.pd_layers,
    )
    return g
