"""Feature schema: column layout, MF/RF/UF grouping and fitted min/max.

A schema doubles as the dataset *profile*: it also carries the raw-ingest
rules (expected header, dropped columns, one-hot columns, label mapping).  An
unfitted schema has no min/max yet; :meth:`FeatureSchema.fit` produces the
frozen, fitted copy that every later stage shares.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigurationError, SchemaError

MF, RF, UF = "MF", "RF", "UF"

CICIDS2018_COLUMNS = (
    "Dst Port", "Protocol", "Timestamp", "Flow Duration", "Tot Fwd Pkts", "Tot Bwd Pkts",
    "TotLen Fwd Pkts", "TotLen Bwd Pkts", "Fwd Pkt Len Max", "Fwd Pkt Len Min",
    "Fwd Pkt Len Mean", "Fwd Pkt Len Std", "Bwd Pkt Len Max", "Bwd Pkt Len Min",
    "Bwd Pkt Len Mean", "Bwd Pkt Len Std", "Flow Byts/s", "Flow Pkts/s", "Flow IAT Mean",
    "Flow IAT Std", "Flow IAT Max", "Flow IAT Min", "Fwd IAT Tot", "Fwd IAT Mean",
    "Fwd IAT Std", "Fwd IAT Max", "Fwd IAT Min", "Bwd IAT Tot", "Bwd IAT Mean",
    "Bwd IAT Std", "Bwd IAT Max", "Bwd IAT Min", "Fwd PSH Flags", "Bwd PSH Flags",
    "Fwd URG Flags", "Bwd URG Flags", "Fwd Header Len", "Bwd Header Len", "Fwd Pkts/s",
    "Bwd Pkts/s", "Pkt Len Min", "Pkt Len Max", "Pkt Len Mean", "Pkt Len Std", "Pkt Len Var",
    "FIN Flag Cnt", "SYN Flag Cnt", "RST Flag Cnt", "PSH Flag Cnt", "ACK Flag Cnt",
    "URG Flag Cnt", "CWE Flag Count", "ECE Flag Cnt", "Down/Up Ratio", "Pkt Size Avg",
    "Fwd Seg Size Avg", "Bwd Seg Size Avg", "Fwd Byts/b Avg", "Fwd Pkts/b Avg",
    "Fwd Blk Rate Avg", "Bwd Byts/b Avg", "Bwd Pkts/b Avg", "Bwd Blk Rate Avg",
    "Subflow Fwd Pkts", "Subflow Fwd Byts", "Subflow Bwd Pkts", "Subflow Bwd Byts",
    "Init Fwd Win Byts", "Init Bwd Win Byts", "Fwd Act Data Pkts", "Fwd Seg Size Min",
    "Active Mean", "Active Std", "Active Max", "Active Min", "Idle Mean", "Idle Std",
    "Idle Max", "Idle Min", "Label",
)

# role -> column; the recalculation formulas are written against roles
MF_ROLES = {
    "tot_fwd": "Tot Fwd Pkts",
    "tot_bwd": "Tot Bwd Pkts",
    "len_fwd": "TotLen Fwd Pkts",
    "len_bwd": "TotLen Bwd Pkts",
    "duration": "Flow Duration",
}

# column -> formula id (see constraints.FORMULAS)
RF_FORMULAS = {
    "Fwd Pkts/s": "fwd_pkts_per_s",
    "Bwd Pkts/s": "bwd_pkts_per_s",
    "Flow Pkts/s": "flow_pkts_per_s",
    "Flow Byts/s": "flow_byts_per_s",
    "Pkt Size Avg": "pkt_size_avg",
    "Fwd Seg Size Avg": "fwd_seg_size_avg",
    "Bwd Seg Size Avg": "bwd_seg_size_avg",
    "Down/Up Ratio": "down_up_ratio",
}


@dataclass(frozen=True)
class FeatureDesc:
    name: str
    group: str
    raw_min: float | None = None
    raw_max: float | None = None
    kind: str = "numeric"  # or "one-hot"
    source: str | None = None  # raw column a one-hot feature came from
    value: float | None = None  # category value for one-hot features


@dataclass(frozen=True)
class FeatureGroups:
    mf: np.ndarray
    rf: np.ndarray
    uf: np.ndarray

    def mask(self, n: int) -> np.ndarray:
        m = np.zeros(n)
        m[self.mf] = 1.0
        return m


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    features: tuple
    raw_columns: tuple = ()
    drop: tuple = ()
    one_hot: dict = field(default_factory=dict)
    label_name: str = "Label"
    benign_label: str = "Benign"
    mf_roles: dict = field(default_factory=lambda: dict(MF_ROLES))
    related: dict = field(default_factory=lambda: dict(RF_FORMULAS))

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate feature names in schema")
        for role, col in self.mf_roles.items():
            if col not in names or self.features[names.index(col)].group != MF:
                raise ConfigurationError(f"MF role {role} -> {col!r} is not an MF feature")
        for col in self.related:
            if col not in names or self.features[names.index(col)].group != RF:
                raise ConfigurationError(f"related feature {col!r} is not an RF feature")
        for f in self.features:
            if f.raw_min is not None and f.raw_max is not None and not f.raw_min <= f.raw_max:
                raise ConfigurationError(f"{f.name}: raw_min > raw_max")

    # ------------------------------------------------------------------ layout
    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def n_features(self) -> int:
        return len(self.features)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"feature {name!r} not in schema {self.name}") from None

    @property
    def groups(self) -> FeatureGroups:
        by = {MF: [], RF: [], UF: []}
        for i, f in enumerate(self.features):
            by[f.group].append(i)
        return FeatureGroups(*(np.array(by[g], dtype=np.intp) for g in (MF, RF, UF)))

    def role_index(self, role: str) -> int:
        return self.index(self.mf_roles[role])

    @property
    def numeric_columns(self) -> list[str]:
        return [f.name for f in self.features if f.kind == "numeric"]

    @property
    def required_columns(self) -> list[str]:
        return self.numeric_columns + list(self.one_hot) + [self.label_name]

    # ----------------------------------------------------------------- fitting
    @property
    def fitted(self) -> bool:
        return all(f.raw_min is not None and f.raw_max is not None for f in self.features)

    @property
    def mins(self) -> np.ndarray:
        self._need_fit()
        return np.array([f.raw_min for f in self.features], dtype=np.float64)

    @property
    def maxs(self) -> np.ndarray:
        self._need_fit()
        return np.array([f.raw_max for f in self.features], dtype=np.float64)

    def _need_fit(self):
        if not self.fitted:
            raise ConfigurationError(f"schema {self.name} has no fitted min/max")

    def fit(self, X_raw: np.ndarray) -> "FeatureSchema":
        X_raw = np.asarray(X_raw, dtype=np.float64)
        if X_raw.ndim != 2 or X_raw.shape[1] != self.n_features or len(X_raw) == 0:
            raise ConfigurationError(f"cannot fit schema on array of shape {X_raw.shape}")
        lo, hi = X_raw.min(axis=0), X_raw.max(axis=0)
        feats = tuple(
            replace(f, raw_min=float(a), raw_max=float(b))
            for f, a, b in zip(self.features, lo, hi)
        )
        return replace(self, features=feats)

    def normalize(self, X_raw: np.ndarray) -> tuple[np.ndarray, int]:
        """Min-max map into [0, 1]; returns (X, number of clamped entries).

        Constant columns map to 0.
        """
        lo, hi = self.mins, self.maxs
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        X = (np.asarray(X_raw, dtype=np.float64) - lo) / safe
        X = np.where(span > 0, X, 0.0)
        out = (X < 0) | (X > 1)
        return np.clip(X, 0.0, 1.0), int(out.sum())

    def denormalize(self, X: np.ndarray) -> np.ndarray:
        lo, hi = self.mins, self.maxs
        return lo + np.asarray(X, dtype=np.float64) * (hi - lo)

    # ------------------------------------------------------------- persistence
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "label_name": self.label_name,
            "benign_label": self.benign_label,
            "raw_columns": list(self.raw_columns),
            "drop": list(self.drop),
            "one_hot": {k: list(v) for k, v in self.one_hot.items()},
            "mf_roles": dict(self.mf_roles),
            "related": dict(self.related),
            "features": [
                {k: v for k, v in f.__dict__.items() if v is not None} for f in self.features
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            name=d["name"],
            features=tuple(FeatureDesc(**f) for f in d["features"]),
            raw_columns=tuple(d.get("raw_columns", ())),
            drop=tuple(d.get("drop", ())),
            one_hot={k: tuple(v) for k, v in d.get("one_hot", {}).items()},
            label_name=d.get("label_name", "Label"),
            benign_label=d.get("benign_label", "Benign"),
            mf_roles=dict(d.get("mf_roles", MF_ROLES)),
            related=dict(d.get("related", RF_FORMULAS)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        return cls.from_dict(json.loads(text))

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _layout(raw_columns, drop, one_hot, label, mf_roles, related):
    feats = []
    for col in raw_columns:
        if col == label or col in drop:
            continue
        if col in one_hot:
            for v in one_hot[col]:
                feats.append(FeatureDesc(f"{col}={v:g}", UF, kind="one-hot", source=col, value=float(v)))
            continue
        if col in mf_roles.values():
            group = MF
        elif col in related:
            group = RF
        else:
            group = UF
        feats.append(FeatureDesc(col, group))
    return tuple(feats)


def make_profile(
    name: str,
    raw_columns=CICIDS2018_COLUMNS,
    drop=(),
    one_hot=None,
    label_name="Label",
    benign_label="Benign",
    mf_roles=None,
    related=None,
) -> FeatureSchema:
    one_hot = {k: tuple(v) for k, v in (one_hot or {}).items()}
    mf_roles = dict(MF_ROLES if mf_roles is None else mf_roles)
    related = dict(RF_FORMULAS if related is None else related)
    feats = _layout(raw_columns, set(drop), one_hot, label_name, mf_roles, related)
    return FeatureSchema(
        name, feats, tuple(raw_columns), tuple(drop), one_hot, label_name, benign_label,
        mf_roles, related,
    )


PROFILES = {
    # 80 raw columns minus port, protocol, timestamp and the label -> 76 numeric features
    "cicids2018": lambda: make_profile("cicids2018", drop=("Dst Port", "Protocol", "Timestamp")),
    # protocol one-hot (tcp/udp/hopopt); three all-zero flag columns dropped to stay at 76
    "cicids2018-proto": lambda: make_profile(
        "cicids2018-proto",
        drop=("Dst Port", "Timestamp", "Bwd PSH Flags", "Bwd URG Flags", "Fwd Byts/b Avg"),
        one_hot={"Protocol": (0, 6, 17)},
    ),
}


def get_profile(name_or_path: str) -> FeatureSchema:
    """A built-in profile by name, or a schema/profile JSON file."""
    if name_or_path in PROFILES:
        return PROFILES[name_or_path]()
    try:
        with open(name_or_path) as fh:
            return FeatureSchema.from_json(fh.read())
    except FileNotFoundError:
        raise ConfigurationError(
            f"unknown profile {name_or_path!r} (built-ins: {', '.join(PROFILES)})"
        ) from None
