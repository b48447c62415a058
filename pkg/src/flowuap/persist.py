"""Versioned, byte-deterministic artifact files.

Every artifact is a zip archive of ``.npy`` members plus a ``meta.json``
member.  Entry timestamps are fixed and members are written in sorted order,
so identical content always produces an identical file (and hash).
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import io
import json
import os
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .data.preprocess import FlowDataset
from .data.schema import FeatureSchema
from .errors import ConfigurationError
from .network import QNetwork
from .uap import UapConfig, UapResult

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(zf: zipfile.ZipFile, name: str, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_arrays(path, kind: str, arrays: dict, meta: dict) -> str:
    """Write an artifact; returns its sha256."""
    meta = {"format_version": FORMAT_VERSION, "kind": kind, **meta}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with zipfile.ZipFile(path, "w") as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            _member(zf, f"{name}.npy", buf.getvalue())
        _member(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
    return sha256_file(path)


def load_arrays(path, kind: str | None = None) -> tuple[dict, dict]:
    if not os.path.exists(path):
        raise ConfigurationError(f"no such artifact: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {}
            for n in zf.namelist():
                if n.endswith(".npy"):
                    arrays[n[:-4]] = np.lib.format.read_array(io.BytesIO(zf.read(n)), allow_pickle=False)
    except (zipfile.BadZipFile, KeyError, ValueError) as e:
        raise ConfigurationError(f"{path}: not a valid artifact ({e})") from e
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported format version {meta.get('format_version')}")
    if kind is not None and meta.get("kind") != kind:
        raise ConfigurationError(f"{path}: expected a {kind} artifact, found {meta.get('kind')}")
    return arrays, meta


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---- networks

def save_network(path, net: QNetwork, schema_hash: str = "", training: dict | None = None) -> str:
    arrays = {}
    for i, (w, b) in enumerate(zip(net.weights, net.biases), 1):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    meta = {
        "layer_sizes": [net.weights[0].shape[0]] + [w.shape[1] for w in net.weights],
        "rng_seed": net.rng_seed,
        "schema_hash": schema_hash,
        "training": training or {},
    }
    return save_arrays(path, "network", arrays, meta)


def load_network(path) -> tuple[QNetwork, dict]:
    arrays, meta = load_arrays(path, "network")
    n = len(meta["layer_sizes"]) - 1
    net = QNetwork(
        [arrays[f"W{i}"] for i in range(1, n + 1)],
        [arrays[f"b{i}"] for i in range(1, n + 1)],
        meta.get("rng_seed"),
    )
    return net, meta


# ---- datasets

def save_dataset(path, ds: FlowDataset, extra: dict | None = None) -> str:
    meta = {"schema": ds.schema.to_dict(), "clamped": int(ds.clamped), **(extra or {})}
    return save_arrays(path, "dataset", {"features": ds.features, "labels": ds.labels, "ids": ds.ids}, meta)


def load_dataset(path) -> FlowDataset:
    arrays, meta = load_arrays(path, "dataset")
    schema = FeatureSchema.from_dict(meta["schema"])
    ds = FlowDataset(arrays["features"], arrays["labels"], schema, arrays["ids"])
    ds.clamped = meta.get("clamped", 0)
    return ds


# ---- universal perturbations

def save_uap(path, result: UapResult, schema_hash: str = "") -> str:
    meta = {
        "config": result.config.to_dict(),
        "fooling_rate_history": [float(v) for v in result.fooling_rate_history],
        "iterations_used": result.iterations_used,
        "schema_hash": schema_hash,
    }
    return save_arrays(path, "uap", {"uap": result.uap, "seedset": result.seedset}, meta)


def load_uap(path) -> UapResult:
    arrays, meta = load_arrays(path, "uap")
    return UapResult(
        arrays["uap"], list(meta["fooling_rate_history"]), int(meta["iterations_used"]),
        arrays["seedset"], UapConfig(**meta["config"]),
    )


# ---- run manifests

@dataclass
class RunManifest:
    command: str
    config: dict
    master_seed: int
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)  # path -> sha256
    started: str = ""
    finished: str = ""

    def __post_init__(self):
        if not self.started:
            self.started = _now()

    def add_input(self, path):
        if os.path.isfile(path):
            self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path, digest: str | None = None):
        self.outputs[str(path)] = digest or sha256_file(path)

    def write(self, path):
        self.finished = _now()
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
