"""CSV series parsing with strict header validation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

CSV_HEADER = "k,mean_sq_dist,stderr,envelope,beta_k"


class SchemaError(ValueError):
    """The file does not follow the series CSV schema."""


@dataclass
class SeriesFile:
    path: str
    ks: np.ndarray
    mean_sq_dist: np.ndarray
    stderr: np.ndarray
    envelope: np.ndarray  # NaN where the column is empty
    beta: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def label(self):
        return self.meta.get("label") or self.meta.get("method") or os.path.splitext(
            os.path.basename(self.path)
        )[0]

    @property
    def panel(self):
        return self.meta.get("panel")

    @property
    def has_envelope(self):
        return bool(np.any(np.isfinite(self.envelope)))


def read_series(path) -> SeriesFile:
    """Parse one series file, rejecting any header deviation."""
    meta = {}
    rows = []
    header = None
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                meta[key.strip()] = val.strip()
                continue
            if header is None:
                header = line
                if header != CSV_HEADER:
                    raise SchemaError(
                        f"{path}: header {header!r} does not match {CSV_HEADER!r}"
                    )
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise SchemaError(f"{path}: malformed row {line!r}")
            rows.append(parts)
    if header is None:
        raise SchemaError(f"{path}: missing header")
    try:
        ks = np.array([int(r[0]) for r in rows], dtype=np.int64)
        mean = np.array([float(r[1]) for r in rows])
        stderr = np.array([float(r[2]) for r in rows])
        envelope = np.array([float(r[3]) if r[3] else np.nan for r in rows])
        beta = np.array([float(r[4]) for r in rows])
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric cell ({exc})") from exc
    return SeriesFile(str(path), ks, mean, stderr, envelope, beta, meta)
