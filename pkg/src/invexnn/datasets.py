"""Deterministic 2D toy dataset generators and CSV ingestion.

The published sources for these problems give point counts and qualitative
shapes only, so the exact formulas are all gathered here where they can be
swapped out if reference data becomes available.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


class CsvFormatError(ValueError):
    """Malformed CSV input; message carries row/column location."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    name: str
    seed: int = 0
    # standardization transform (identity unless loaded from CSV)
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.y.max()) + 1 if self.y.dtype.kind in "iu" else 0

    def bounding_box(self, inflate: float = 0.0) -> np.ndarray:
        """[[xmin, xmax], [ymin, ymax], ...], optionally inflated."""
        lo = self.X.min(axis=0)
        hi = self.X.max(axis=0)
        pad = (hi - lo) * inflate / 2.0
        return np.stack([lo - pad, hi + pad], axis=1)

    def destandardize(self, X: np.ndarray) -> np.ndarray:
        if self.mean is None:
            return X
        return X * self.std + self.mean

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow([f"x{i}" for i in range(self.dim)] + ["label"])
        is_int = self.y.dtype.kind in "iu"
        for row, label in zip(self.X, self.y):
            w.writerow([repr(float(v)) for v in row]
                       + [int(label) if is_int else repr(float(label))])
        return buf.getvalue()


def spiral(n: int = 400, seed: int = 0, jitter: float = 0.02) -> Dataset:
    """Two interleaved Archimedean spiral arms, labels 0/1 per arm."""
    if n % 2 != 0:
        raise ValueError("spiral: n must be even")
    rng = np.random.default_rng(seed)
    half = n // 2
    # spacing uniform in arc length (s ~ 0.45 t^2 + 0.1 t), not in t
    u = np.linspace(0.0, 1.0, half)
    t = (-0.1 + np.sqrt(0.01 + 1.8 * 0.55 * u)) / 0.9
    pts = []
    labels = []
    for arm in (0, 1):
        r = 0.1 + 0.9 * t
        theta = 2.5 * np.pi * t + arm * np.pi
        x = r * np.cos(theta) + rng.normal(0, jitter, half)
        y = r * np.sin(theta) + rng.normal(0, jitter, half)
        pts.append(np.stack([x, y], axis=1))
        labels.append(np.full(half, arm))
    X = np.concatenate(pts)
    X = X / max(1.0, np.abs(X).max())  # keep inside [-1, 1]^2
    return Dataset(X, np.concatenate(labels).astype(np.int64),
                   name="spiral", seed=seed)


def _bump_surface(grid_n: int, n_bumps: int, seed: int,
                  name: str) -> Dataset:
    rng = np.random.default_rng(seed)
    axis = np.linspace(-1.0, 1.0, grid_n)
    gx, gy = np.meshgrid(axis, axis)
    X = np.stack([gx.ravel(), gy.ravel()], axis=1)
    z = np.zeros(X.shape[0])
    for _ in range(n_bumps):
        center = rng.uniform(-0.6, 0.6, size=2)
        sigma = rng.uniform(0.18, 0.32)
        amp = rng.uniform(0.6, 1.0) * rng.choice([-1.0, 1.0])
        d2 = ((X - center) ** 2).sum(axis=1)
        z += amp * np.exp(-d2 / (2 * sigma**2))
    z = (z - z.min()) / (z.max() - z.min())  # scale targets to [0, 1]
    return Dataset(X, z, name=name, seed=seed)


def regression1(seed: int = 11) -> Dataset:
    """50x50 grid on [-1,1]^2 with a 3-bump target surface (2500 points)."""
    return _bump_surface(50, 3, seed, "regression1")


def regression2(seed: int = 12) -> Dataset:
    """75x75 grid on [-1,1]^2 with a 5-bump target surface (5625 points)."""
    return _bump_surface(75, 5, seed, "regression2")


def clusters5(seed: int = 0, per_cluster: int = 150) -> Dataset:
    """5 non-linear clusters, 3 classes; classes 1 and 2 are each split
    across two disconnected clusters. Clusters sit near (-1,-1) and (0,-1)
    so the scripted center-addition morphism has room to work."""
    rng = np.random.default_rng(seed)
    parts = []
    labels = []

    def blob(cx, cy, s, cls):
        parts.append(rng.normal([cx, cy], s, size=(per_cluster, 2)))
        labels.append(np.full(per_cluster, cls))

    def crescent(cx, cy, radius, a0, a1, cls):
        ang = rng.uniform(a0, a1, per_cluster)
        r = radius + rng.normal(0, 0.04, per_cluster)
        parts.append(np.stack([cx + r * np.cos(ang),
                               cy + r * np.sin(ang)], axis=1))
        labels.append(np.full(per_cluster, cls))

    blob(-1.0, -1.0, 0.13, 2)
    blob(0.0, -1.0, 0.13, 1)
    blob(-1.0, 0.9, 0.16, 0)
    crescent(0.7, 0.7, 0.5, 0.0, np.pi, 1)
    crescent(0.9, -0.3, 0.45, np.pi / 2, 3 * np.pi / 2, 2)
    X = np.clip(np.concatenate(parts), -1.5, 1.5)
    return Dataset(X, np.concatenate(labels).astype(np.int64),
                   name="clusters5", seed=seed)


def xor_groups(seed: int = 0, per_group: int = 100) -> Dataset:
    """Four gaussian groups at (+-1, +-1); diagonal groups share a class."""
    rng = np.random.default_rng(seed)
    centers = [(1, 1), (-1, 1), (1, -1), (-1, -1)]
    parts = [rng.normal(c, 0.25, size=(per_group, 2)) for c in centers]
    labels = [1, 0, 0, 1]  # (1,1) and (-1,-1) share a label
    y = np.concatenate([np.full(per_group, l) for l in labels])
    return Dataset(np.concatenate(parts), y.astype(np.int64),
                   name="xor_groups", seed=seed)


def blobs(k: int, seed: int = 0, per_blob: int = 60) -> Dataset:
    """k well-separated gaussian blobs on a circle; label = blob index."""
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(k) / k
    parts = []
    for a in angles:
        c = np.array([np.cos(a), np.sin(a)])
        parts.append(rng.normal(c, 0.12, size=(per_blob, 2)))
    y = np.concatenate([np.full(per_blob, i) for i in range(k)])
    return Dataset(np.concatenate(parts), y.astype(np.int64),
                   name=f"blobs{k}", seed=seed)


GENERATORS = {
    "spiral": spiral,
    "regression1": regression1,
    "regression2": regression2,
    "clusters5": clusters5,
    "xor_groups": xor_groups,
}


def make(name: str, seed: int = 0) -> Dataset:
    if name == "spiral":
        return spiral(seed=seed)
    if name in ("regression1", "regression2"):
        return GENERATORS[name]()  # fixed seeded surfaces
    if name.startswith("blobs"):
        return blobs(int(name[5:] or 2), seed=seed)
    if name in GENERATORS:
        return GENERATORS[name](seed=seed)
    raise KeyError(f"unknown dataset {name!r}")


def load_csv(source: str, label_column: str = "label",
             name: str = "csv", standardize: bool = True) -> Dataset:
    """Parse a rectangular numeric CSV with a header row.

    ``source`` is a path or raw CSV text. Features are standardized to mean 0
    and std 1; the transform is stored on the dataset.
    """
    if "\n" in source or "," in source:
        text = source
    else:
        with open(source, "r", encoding="utf-8") as f:
            text = f.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CsvFormatError("empty CSV") from None
    header = [h.strip() for h in header]
    if label_column not in header:
        raise CsvFormatError(f"unknown label column {label_column!r}")
    label_idx = header.index(label_column)
    feat_idx = [i for i in range(len(header)) if i != label_idx]
    rows, labels = [], []
    for rno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvFormatError(
                f"row {rno}: expected {len(header)} columns, got {len(row)}")
        vals = []
        for i in feat_idx:
            try:
                vals.append(float(row[i]))
            except ValueError:
                raise CsvFormatError(
                    f"row {rno}, column {header[i]!r}: "
                    f"non-numeric value {row[i]!r}") from None
        try:
            labels.append(float(row[label_idx]))
        except ValueError:
            raise CsvFormatError(
                f"row {rno}, column {label_column!r}: "
                f"non-numeric value {row[label_idx]!r}") from None
        rows.append(vals)
    if not rows:
        raise CsvFormatError("CSV has a header but no data rows")
    X = np.asarray(rows)
    yf = np.asarray(labels)
    y = yf.astype(np.int64) if np.allclose(yf, np.round(yf)) else yf
    mean = std = None
    if standardize:
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std == 0] = 1.0
        X = (X - mean) / std
    return Dataset(X, y, name=name, seed=0, mean=mean, std=std)
