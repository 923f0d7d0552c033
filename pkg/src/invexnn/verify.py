"""Empirical verification: invexity fraction, Lipschitz estimates and the
grid-based connectedness oracle.

Connectedness is checked on a finite window at finite resolution; it is a
necessary approximation of a global topological claim, not a certificate.
"""

from __future__ import annotations

import gc
import json
from collections import deque
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor, grad


@dataclass
class InvexityReport:
    n_checked: int
    n_satisfied: int
    n_skipped: int
    fraction: float
    point_source: str = "train"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LipschitzEstimate:
    max_grad_norm: float
    min_grad_norm: float
    argmax_point: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GridRaster:
    bounds: np.ndarray  # [[xmin, xmax], [ymin, ymax]]
    resolution: tuple[int, int]
    values: np.ndarray  # [ny, nx]

    def cell_centers(self) -> np.ndarray:
        nx, ny = self.resolution
        xs = np.linspace(self.bounds[0, 0], self.bounds[0, 1], nx)
        ys = np.linspace(self.bounds[1, 0], self.bounds[1, 1], ny)
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def to_json(self) -> str:
        return json.dumps({
            "bounds": self.bounds.tolist(),
            "resolution": list(self.resolution),
            "values": self.values.tolist(),
        })

    def to_csv(self) -> str:
        import io
        buf = io.StringIO()
        np.savetxt(buf, self.values, delimiter=",", fmt="%.10g")
        return buf.getvalue()


def input_gradients(model: Callable[[Tensor], Tensor], X: np.ndarray,
                    chunk: int = 20000) -> np.ndarray:
    """Per-sample gradient of the scalar model output w.r.t. each input row."""
    out = np.empty_like(X)
    for start in range(0, X.shape[0], chunk):
        xs = Tensor(X[start:start + chunk], requires_grad=True)
        y = model(xs)
        out[start:start + chunk] = grad(y.sum(), xs).data
        # vjp closures give the tape reference cycles; large chunked sweeps
        # outpace the generational collector without an explicit collect
        del xs, y
        gc.collect()
    return out


def projected_gradients(grads: np.ndarray, directions: np.ndarray,
                        eps: float = 1e-9,
                        normalize: bool = True) -> tuple[np.ndarray,
                                                         np.ndarray]:
    """Dot products with the (unit) guiding direction.

    Returns (pg values, valid mask); rows whose direction norm is below eps
    are masked out and counted as skipped by the caller.
    """
    norms = np.linalg.norm(directions, axis=1)
    valid = norms > eps
    unit = directions.copy()
    if normalize:
        unit[valid] /= norms[valid, None]
    pg = (grads * unit).sum(axis=1)
    return pg, valid


def check_invexity(model: Callable[[Tensor], Tensor], points: np.ndarray,
                   center: np.ndarray | None = None,
                   guide: Callable[[Tensor], Tensor] | None = None,
                   eps: float = 1e-9,
                   point_source: str = "train") -> InvexityReport:
    """Fraction of points where the projected-gradient rule pg > 0 holds.

    Direction is toward-center ((x - x*)/||x - x*||) when ``center`` is given,
    or the gradient field of ``guide`` otherwise.
    """
    if (center is None) == (guide is None):
        raise ValueError("check_invexity: pass exactly one of center/guide")
    grads = input_gradients(model, points)
    if center is not None:
        directions = points - np.asarray(center).reshape(1, -1)
        pg, valid = projected_gradients(grads, directions, eps=eps)
    else:
        directions = input_gradients(guide, points)
        pg, valid = projected_gradients(grads, directions, eps=eps,
                                        normalize=False)
    n_checked = int(valid.sum())
    n_satisfied = int((pg[valid] > 0).sum())
    fraction = n_satisfied / n_checked if n_checked else 0.0
    return InvexityReport(n_checked=n_checked, n_satisfied=n_satisfied,
                          n_skipped=int((~valid).sum()), fraction=fraction,
                          point_source=point_source)


def random_box_points(bounds: np.ndarray, n: int,
                      seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo, hi = bounds[:, 0], bounds[:, 1]
    return rng.uniform(lo, hi, size=(n, bounds.shape[0]))


def estimate_lipschitz(model: Callable[[Tensor], Tensor],
                       points: np.ndarray) -> LipschitzEstimate:
    """Max/min gradient norm of the scalar model over the given points."""
    if points.shape[0] < 1:
        raise ValueError("estimate_lipschitz: need at least one point")
    norms = np.linalg.norm(input_gradients(model, points), axis=1)
    i = int(np.argmax(norms))
    return LipschitzEstimate(max_grad_norm=float(norms.max()),
                             min_grad_norm=float(norms.min()),
                             argmax_point=[float(v) for v in points[i]])


def rasterize(fn: Callable[[np.ndarray], np.ndarray], bounds: np.ndarray,
              resolution: int | tuple[int, int],
              chunk: int = 40000) -> GridRaster:
    """Evaluate ``fn`` (batch of 2D points -> scalar per point) on a grid."""
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape != (2, 2):
        raise ValueError("rasterize: 2D input models only")
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    raster = GridRaster(bounds, resolution,
                        np.empty(resolution[1] * resolution[0]))
    pts = raster.cell_centers()
    vals = np.empty(pts.shape[0])
    for start in range(0, pts.shape[0], chunk):
        vals[start:start + chunk] = fn(pts[start:start + chunk])
    raster.values = vals.reshape(resolution[1], resolution[0])
    return raster


def sublevel_raster(model: Callable[[Tensor], Tensor], bounds,
                    resolution, threshold: float,
                    supersample: int = 1) -> GridRaster:
    """Binary raster of {x : model(x) < threshold}.

    With ``supersample`` s > 1 each cell is evaluated at an s x s subgrid
    and marked occupied if *any* subsample is below the threshold; this
    keeps filaments thinner than one cell from breaking the raster apart.
    """
    def fn(pts: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return model(Tensor(pts)).data.reshape(-1)
    if supersample <= 1:
        r = rasterize(fn, bounds, resolution)
        r.values = (r.values < threshold).astype(np.int64)
        return r
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    nx, ny = resolution
    s = int(supersample)
    hi = rasterize(fn, bounds, (nx * s, ny * s))
    occ = (hi.values < threshold).reshape(ny, s, nx, s).any(axis=(1, 3))
    return GridRaster(np.asarray(bounds, dtype=float), resolution,
                      occ.astype(np.int64))


def connected_components(raster: GridRaster, target) -> int:
    """4-connectivity flood-fill component count of cells matching target."""
    mask = raster.values == target
    if not mask.any():
        return 0
    ny, nx = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    for sy, sx in zip(*np.nonzero(mask)):
        if seen[sy, sx]:
            continue
        count += 1
        q = deque([(sy, sx)])
        seen[sy, sx] = True
        while q:
            y, x = q.popleft()
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                yy, xx = y + dy, x + dx
                if 0 <= yy < ny and 0 <= xx < nx and mask[yy, xx] \
                        and not seen[yy, xx]:
                    seen[yy, xx] = True
                    q.append((yy, xx))
    return count
