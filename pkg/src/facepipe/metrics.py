"""Evaluation metrics for reenactment and swapping output.

Per-frame scalars (L1, pose error, landmark error, identity similarity,
expression distance) are aggregated as mean and population standard
deviation; the Frechet distance is a single set-level scalar computed
from embedding means and covariances.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ImageBuffer, LandmarkSet, PoseAngles

FEC_DIM = 16


@dataclass(frozen=True)
class EmbeddingSet:
    """Row-per-sample embedding matrix (n, d), n >= 1, finite values."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"embeddings must be (n, d) with n, d >= 1, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("embeddings contain non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def load_embeddings(path: str | Path) -> EmbeddingSet:
    """Read a CSV of plain decimal floats, one vector per row."""
    rows = []
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if row:
                rows.append([float(v) for v in row])
    if not rows:
        raise ValueError(f"{path} contains no vectors")
    return EmbeddingSet(np.array(rows))


def save_embeddings(emb: EmbeddingSet, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for row in emb.vectors:
            w.writerow([repr(float(v)) for v in row])


def l1_distance(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean absolute per-pixel-channel difference, in [0, 1]."""
    if a.extent != b.extent or a.channels != b.channels:
        raise ValueError("images must share extent and channel count")
    return float(np.abs(a.data - b.data).mean())


def euler_distance(a: PoseAngles, b: PoseAngles) -> float:
    """Euclidean distance between pose angle triples, degrees."""
    return float(np.linalg.norm(a.as_array() - b.as_array()))


def landmark_distance(a: LandmarkSet, b: LandmarkSet) -> float:
    """Mean Euclidean distance over the 98 point pairs, pixels."""
    return float(np.linalg.norm(a.points - b.points, axis=1).mean())


def identity_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two identity embeddings."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cannot compare a zero embedding")
    return float((a / na) @ (b / nb))


def expression_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between 16-d expression embeddings."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != (FEC_DIM,) or b.shape != (FEC_DIM,):
        raise ValueError(f"expression embeddings must be {FEC_DIM}-d")
    return float(np.linalg.norm(a - b))


def _cov(v: np.ndarray) -> np.ndarray:
    if len(v) < 2:
        return np.zeros((v.shape[1], v.shape[1]))
    return np.cov(v, rowvar=False).reshape(v.shape[1], v.shape[1])


def frechet_distance(a: EmbeddingSet, b: EmbeddingSet) -> float:
    """Frechet distance between Gaussian fits of two embedding sets:

        ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))

    computed by eigendecomposition of S_a^(1/2) S_b S_a^(1/2).  Raises if
    that product has eigenvalues below -1e-8 (numerically invalid input).
    """
    if a.dim != b.dim:
        raise ValueError("embedding dimensions must match")
    mu_a, mu_b = a.vectors.mean(axis=0), b.vectors.mean(axis=0)
    s_a, s_b = _cov(a.vectors), _cov(b.vectors)

    w, u = np.linalg.eigh(s_a)
    root = (u * np.sqrt(np.clip(w, 0.0, None))) @ u.T
    m = root @ s_b @ root
    ev = np.linalg.eigvalsh((m + m.T) / 2.0)
    if (ev < -1e-8).any():
        raise ValueError(f"covariance product has negative eigenvalue {ev.min():.3e}")
    tr_sqrt = float(np.sqrt(np.clip(ev, 0.0, None)).sum())
    d2 = float(((mu_a - mu_b) ** 2).sum() + np.trace(s_a) + np.trace(s_b) - 2.0 * tr_sqrt)
    return max(d2, 0.0)


@dataclass
class MetricReport:
    """Per-frame metric series with mean and population-std aggregates."""

    series: dict[str, list[float]] = field(default_factory=dict)
    fid: float | None = None
    errors: list[str] = field(default_factory=list)

    def add(self, name: str, value: float) -> None:
        self.series.setdefault(name, []).append(value)

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for name, vals in self.series.items():
            arr = np.asarray(vals)
            out[name] = {"mean": float(arr.mean()), "std": float(arr.std()),
                         "count": len(vals)}
        return out

    def to_json(self, path: str | Path | None = None) -> str:
        doc = {"metrics": self.summary(), "series": self.series}
        if self.fid is not None:
            doc["fid"] = self.fid
        if self.errors:
            doc["errors"] = self.errors
        text = json.dumps(doc, indent=1)
        if path is not None:
            Path(path).write_text(text)
        return text

    def format_summary(self) -> str:
        lines = []
        for name, agg in self.summary().items():
            lines.append(f"{name}: mean {agg['mean']:.6g} "
                         f"std {agg['std']:.6g} n {agg['count']}")
        if self.fid is not None:
            lines.append(f"fid: {self.fid:.6g}")
        if self.errors:
            lines.append(f"errors: {len(self.errors)}")
        return "\n".join(lines) if lines else "no metrics computed"

    def to_csv(self, path: str | Path) -> None:
        names = sorted(self.series)
        n = max((len(v) for v in self.series.values()), default=0)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["frame"] + names)
            for i in range(n):
                w.writerow([i] + [self.series[k][i] if i < len(self.series[k]) else ""
                                  for k in names])
