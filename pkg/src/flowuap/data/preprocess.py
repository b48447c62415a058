"""Encoding, min-max normalization, stratified split and undersampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, ValidationError
from ..network import N_FEATURES
from .io import RawTable
from .schema import FeatureSchema

log = logging.getLogger(__name__)

BENIGN, ATTACK = 0, 1


@dataclass
class FlowDataset:
    """Normalized features in [0, 1], binary labels and original row ids."""

    features: np.ndarray
    labels: np.ndarray
    schema: FeatureSchema
    ids: np.ndarray | None = None
    clamped: int = 0  # entries clamped into [0, 1] at normalization time

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids is None:
            self.ids = np.arange(len(self.labels), dtype=np.int64)
        if self.features.shape != (len(self.labels), self.schema.n_features):
            raise ConfigurationError(
                f"features {self.features.shape} vs {len(self.labels)} labels / "
                f"{self.schema.n_features} schema features"
            )

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "FlowDataset":
        idx = np.asarray(idx)
        return FlowDataset(self.features[idx], self.labels[idx], self.schema, self.ids[idx])

    def class_counts(self) -> tuple[int, int]:
        return int((self.labels == BENIGN).sum()), int((self.labels == ATTACK).sum())

    @property
    def malicious(self) -> "FlowDataset":
        return self.subset(np.flatnonzero(self.labels == ATTACK))


def encode(raw: RawTable, schema: FeatureSchema) -> tuple[np.ndarray, np.ndarray]:
    """Raw table -> (raw-unit feature matrix in schema order, 0/1 labels)."""
    n = len(raw)
    X = np.empty((n, schema.n_features))
    for j, f in enumerate(schema.features):
        if f.kind == "one-hot":
            X[:, j] = (raw.columns[f.source] == f.value).astype(np.float64)
        else:
            X[:, j] = raw.columns[f.name]
    benign = np.array(
        [str(v).strip().lower() == schema.benign_label.lower() for v in raw.labels], dtype=bool
    )
    y = np.where(benign, BENIGN, ATTACK).astype(np.int64)
    return X, y


def _check_width(schema):
    if schema.n_features != N_FEATURES:
        raise ConfigurationError(
            f"profile {schema.name} yields {schema.n_features} features, network expects {N_FEATURES}"
        )


def preprocess(raw: RawTable, schema: FeatureSchema, ids=None) -> FlowDataset:
    """Encode and normalize ``raw``; fits min/max on this table if ``schema`` is unfitted.

    Values outside a preset fit are clamped and counted.
    """
    _check_width(schema)
    X_raw, y = encode(raw, schema)
    if not schema.fitted:
        schema = schema.fit(X_raw)
    X, clamped = schema.normalize(X_raw)
    if clamped:
        log.warning("%d feature values outside the fitted range were clamped", clamped)
    ds = FlowDataset(X, y, schema, ids)
    ds.clamped = clamped
    return ds


def stratified_split_indices(labels, train_fraction: float = 0.8, seed: int = 0):
    labels = np.asarray(labels)
    if not 0 < train_fraction < 1:
        raise ConfigurationError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in (BENIGN, ATTACK):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            raise ValidationError(f"class {c} has {len(idx)} samples; need at least 2 to split")
        idx = rng.permutation(idx)
        k = int(round(train_fraction * len(idx)))
        k = min(max(k, 1), len(idx) - 1)
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_split(ds: FlowDataset, train_fraction: float = 0.8, seed: int = 0):
    tr, te = stratified_split_indices(ds.labels, train_fraction, seed)
    return ds.subset(tr), ds.subset(te)


def undersample_indices(labels, seed: int = 0) -> np.ndarray:
    labels = np.asarray(labels)
    ben = np.flatnonzero(labels == BENIGN)
    att = np.flatnonzero(labels == ATTACK)
    if len(ben) < len(att):
        raise ValidationError(
            f"undersampling removes benign rows only, but benign ({len(ben)}) < attack ({len(att)})"
        )
    rng = np.random.default_rng(seed)
    keep = rng.choice(ben, size=len(att), replace=False)
    return np.sort(np.concatenate([keep, att]))


def undersample(train: FlowDataset, seed: int = 0) -> FlowDataset:
    return train.subset(undersample_indices(train.labels, seed))


def reconcile(ds: FlowDataset, tol: float = 1e-9) -> int:
    """Replace RF columns by their recalculated values, in place.

    Returns the number of rows that moved by more than ``tol``.  Afterwards
    every row is a fixed point of the constraint projection.
    """
    from ..constraints import apply_constraints

    if not len(ds):
        return 0
    fixed = apply_constraints(ds.features, ds.features, ds.schema)
    moved = int((np.abs(fixed - ds.features) > tol).any(axis=1).sum())
    ds.features = fixed
    return moved


@dataclass
class PreparedData:
    train: FlowDataset  # full training split
    balanced: FlowDataset  # undersampled training split
    test: FlowDataset
    schema: FeatureSchema
    reconciled_rows: int = 0


def prepare(
    raw: RawTable,
    profile: FeatureSchema,
    seed: int = 0,
    train_fraction: float = 0.8,
    reconcile_related: bool = True,
) -> PreparedData:
    """Encode, split by class, fit min/max on train only, normalize, undersample.

    With ``reconcile_related`` the RF columns of every split are recomputed
    from the MF columns so clean rows already satisfy the domain constraints.
    """
    _check_width(profile)
    X_raw, y = encode(raw, profile)
    tr, te = stratified_split_indices(y, train_fraction, seed)
    schema = profile.fit(X_raw[tr])
    Xn, _ = schema.normalize(X_raw[tr])
    train = FlowDataset(Xn, y[tr], schema, tr)
    Xt, clamped = schema.normalize(X_raw[te])
    test = FlowDataset(Xt, y[te], schema, te)
    test.clamped = clamped
    moved = 0
    if reconcile_related:
        moved = reconcile(train) + reconcile(test)
    bal = undersample(train, seed + 1)
    return PreparedData(train, bal, test, schema, moved)
