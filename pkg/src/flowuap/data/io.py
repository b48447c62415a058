"""CICFlowMeter CSV ingest.

Files are streamed in chunks.  Every schema column is parsed as float;
a row with an unparseable token in any required column is skipped and counted.
CICFlowMeter writes ``Infinity``/``NaN`` into rate columns when the flow
duration is zero: infinities are capped at the column's largest finite value,
NaN rates become 0.  Rows with NaN in a modifiable feature, or a negative one,
are dropped (they cannot be recalculated).
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..errors import ConfigurationError, SchemaError
from .schema import FeatureSchema

log = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.01
NAN_TOKENS = {"nan", "NaN", "NAN"}
CHUNK_ROWS = 200_000


@dataclass
class LoadStats:
    rows_read: int = 0
    skipped_malformed: int = 0
    header_repeats: int = 0
    dropped_invalid_mf: int = 0
    inf_substituted: int = 0
    nan_substituted: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RawTable:
    """Parsed flows: float columns keyed by name plus the string label column."""

    columns: dict  # name -> float64 array
    labels: np.ndarray  # object array of label strings
    stats: LoadStats = field(default_factory=LoadStats)

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, schema: FeatureSchema, stats=None) -> "RawTable":
        cols = {c: frame[c].to_numpy(dtype=np.float64) for c in schema.required_columns
                if c != schema.label_name}
        return cls(cols, frame[schema.label_name].to_numpy(dtype=object), stats or LoadStats())

    def to_frame(self, column_order=None) -> pd.DataFrame:
        data = dict(self.columns)
        order = list(column_order) if column_order else list(data)
        df = pd.DataFrame({c: data[c] for c in order if c in data})
        df["Label"] = self.labels
        return df


def is_rate_column(name: str) -> bool:
    return name.endswith("/s")


def _check_header(path, header, schema):
    have = {h.strip() for h in header}
    for col in schema.required_columns:
        if col not in have:
            raise SchemaError(f"{path}: missing column {col!r}")


def load_csv(paths, schema: FeatureSchema) -> RawTable:
    """Load one or more CICFlowMeter CSV files into a :class:`RawTable`."""
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    need = schema.required_columns
    numeric = [c for c in need if c != schema.label_name]
    mf_cols = set(schema.mf_roles.values())
    stats = LoadStats()
    parts = []
    for path in paths:
        if not os.path.exists(path):
            raise ConfigurationError(f"no such file: {path}")
        reader = pd.read_csv(
            path, dtype=str, keep_default_na=False, chunksize=CHUNK_ROWS,
            skipinitialspace=True,
        )
        first = True
        for chunk in reader:
            chunk.columns = [c.strip() for c in chunk.columns]
            if first:
                _check_header(path, chunk.columns, schema)
                first = False
            chunk = chunk[need]
            stats.rows_read += len(chunk)
            # files concatenated with `cat` repeat the header line mid-file
            rep = (chunk[schema.label_name] == schema.label_name).to_numpy()
            stats.header_repeats += int(rep.sum())
            chunk = chunk.loc[~rep]
            parsed = {}
            bad = np.zeros(len(chunk), dtype=bool)
            for c in numeric:
                s = chunk[c].str.strip()
                v = pd.to_numeric(s, errors="coerce").to_numpy(dtype=np.float64)
                c_bad = np.isnan(v) & ~s.isin(NAN_TOKENS).to_numpy()
                # to_numeric's fast parser can be 1 ulp off; redo valid tokens exactly
                ok = ~c_bad
                v[ok] = s.to_numpy()[ok].astype(np.float64)
                bad |= c_bad
                parsed[c] = v
            stats.skipped_malformed += int(bad.sum())
            keep = ~bad
            frame = pd.DataFrame({c: parsed[c][keep] for c in numeric})
            frame[schema.label_name] = chunk[schema.label_name].str.strip().to_numpy()[keep]
            parts.append(frame)
        if first:  # empty file: header only was never seen by the chunk loop
            header = pd.read_csv(path, nrows=0).columns
            _check_header(path, header, schema)

    data_rows = stats.rows_read - stats.header_repeats
    if data_rows and stats.skipped_malformed > MAX_MALFORMED_FRACTION * data_rows:
        raise ConfigurationError(
            f"{stats.skipped_malformed} of {data_rows} rows malformed "
            f"(limit {MAX_MALFORMED_FRACTION:.0%})"
        )
    if parts:
        frame = pd.concat(parts, ignore_index=True)
    else:
        frame = pd.DataFrame({c: np.empty(0) for c in numeric})
        frame[schema.label_name] = np.empty(0, dtype=object)

    # NaN/negative in a modifiable feature: nothing sensible to recalculate from
    mf_vals = frame[[c for c in numeric if c in mf_cols]].to_numpy(dtype=np.float64)
    invalid = (np.isnan(mf_vals) | (mf_vals < 0) | np.isinf(mf_vals)).any(axis=1)
    stats.dropped_invalid_mf = int(invalid.sum())
    frame = frame.loc[~invalid].reset_index(drop=True)

    for c in numeric:
        v = frame[c].to_numpy(dtype=np.float64).copy()
        if is_rate_column(c):
            pos_inf = np.isposinf(v)
            if pos_inf.any():
                finite = v[np.isfinite(v)]
                v[pos_inf] = finite.max() if finite.size else 0.0
                stats.inf_substituted += int(pos_inf.sum())
            nan = np.isnan(v)
            v[nan] = 0.0
            stats.nan_substituted += int(nan.sum())
        # non-rate NaN/inf tokens have no defined meaning
        nonfinite = ~np.isfinite(v)
        if nonfinite.any():
            v[nonfinite] = 0.0
            stats.nan_substituted += int(nonfinite.sum())
        frame[c] = v

    log.info("loaded %d rows (%s)", len(frame), stats.as_dict())
    return RawTable.from_frame(frame, schema, stats)
