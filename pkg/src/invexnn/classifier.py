"""Multi-region classifier over an invertible latent space.

Each region is an invex "basin" in input space: either a latent half-space
arrangement (linear scores) or a latent Voronoi cell (euclidean scores).
Because the backbone is a bijection, every latent cell pulls back to a
connected region of the input, and classes are unions of regions.
"""

from __future__ import annotations

import csv
import io
import json

import numpy as np

from . import tensor as T
from .layers import InvertibleStack, Module
from .optim import Adam, TrainingDiverged
from .tensor import Tensor

# soft assignment weight for a freshly added region's class column
NEW_REGION_LOGIT = 10.0


class MultiInvexClassifier(Module):
    """Regions in latent space, soft class mixture over regions.

    weight_type "euclidean" gives Voronoi-style regions (supports region
    addition/removal); "linear" gives half-space scores.
    """

    def __init__(self, dim: int, n_regions: int, n_classes: int,
                 weight_type: str = "euclidean", n_blocks: int = 4,
                 hidden: int = 32, coeff: float = 0.9, seed: int = 0,
                 inverse_temp: float = 1.0):
        if weight_type not in ("euclidean", "linear"):
            raise ValueError(f"unknown weight_type {weight_type!r}")
        if n_regions < 1 or n_classes < 2:
            raise ValueError("need n_regions >= 1 and n_classes >= 2")
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.n_classes = n_classes
        self.weight_type = weight_type
        self.revision = 0
        self.backbone = InvertibleStack(dim, n_blocks=n_blocks, hidden=hidden,
                                        coeff=coeff, seed=seed)
        self.weight = Tensor(rng.normal(0.0, 0.5, size=(n_regions, dim)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(n_regions), requires_grad=True)
        # free logits; rows softmax to each region's class distribution
        self.region_class_logits = Tensor(
            rng.normal(0.0, 0.1, size=(n_regions, n_classes)),
            requires_grad=True)
        self.log_inverse_temp = Tensor(float(np.log(inverse_temp)),
                                       requires_grad=True)

    @property
    def n_regions(self) -> int:
        return self.weight.data.shape[0]

    # -- scoring -------------------------------------------------------------

    def region_scores(self, z: Tensor) -> Tensor:
        """[B, R] region scores in latent space, higher = closer."""
        if self.weight_type == "euclidean":
            d = T.div(T.cdist(z, self.weight),
                      Tensor(np.sqrt(float(self.dim))))
            raw = T.neg(T.add(d, T.reshape(self.bias, 1, -1)))
        else:
            raw = T.add(T.matmul(z, T.transpose(self.weight)),
                        T.reshape(self.bias, 1, -1))
        return T.mul(raw, T.exp(T.reshape(self.log_inverse_temp, 1, 1)))

    def class_probs(self) -> Tensor:
        return T.softmax(self.region_class_logits, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        """Soft class probabilities [B, C]."""
        scores = self.region_scores(self.backbone(x))
        return T.matmul(T.softmax(scores, axis=1), self.class_probs())

    def classify(self, X: np.ndarray) -> dict:
        """Hard and soft predictions plus the winning region per sample.

        Hard labels come from the argmax region's class row; argmax breaks
        ties toward the lowest region index.
        """
        with T.no_grad():
            z = self.backbone(Tensor(X))
            scores = self.region_scores(z).data
            soft = T.matmul(T.softmax(Tensor(scores), axis=1),
                            self.class_probs()).data
        region = np.argmax(scores, axis=1)
        region_class = np.argmax(self.class_probs().data, axis=1)
        return {
            "region": region,
            "label": region_class[region],
            "soft": soft,
            "latent": z.data,
        }

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classify(X)["label"]

    def renormalize(self, iters: int = 1) -> None:
        self.backbone.renormalize(iters)

    def init_from_data(self, X: np.ndarray, y: np.ndarray,
                       seed: int = 0) -> None:
        """Seed euclidean region centers at latent images of training points.

        Samples are drawn class-stratified so every class owns at least one
        region (when n_regions >= n_classes); class rows start as confident
        one-hots, exactly like freshly added regions.
        """
        if self.weight_type != "euclidean":
            raise ValueError("init_from_data requires euclidean regions")
        rng = np.random.default_rng(seed)
        y = np.asarray(y)
        picks = []
        classes = list(np.unique(y))
        for r in range(self.n_regions):
            cls = classes[r % len(classes)]
            picks.append(int(rng.choice(np.flatnonzero(y == cls))))
        with T.no_grad():
            latent = self.backbone(Tensor(X[picks])).data
        self.weight.data[:] = latent
        self.bias.data[:] = 0.0
        logits = np.zeros((self.n_regions, self.n_classes))
        logits[np.arange(self.n_regions), y[picks]] = NEW_REGION_LOGIT
        self.region_class_logits.data[:] = logits

    # -- morphism ------------------------------------------------------------

    def add_region(self, center: np.ndarray, class_label: int) -> int:
        """Insert a Voronoi region at an input-space point.

        The latent center is the backbone image of ``center``; zero bias
        keeps the new cell local to that point. Returns the region index.
        """
        if self.weight_type != "euclidean":
            raise ValueError("add_region requires euclidean regions")
        if not 0 <= class_label < self.n_classes:
            raise ValueError(f"class_label {class_label} out of range")
        center = np.asarray(center, dtype=float).reshape(1, -1)
        if center.shape[1] != self.dim:
            raise ValueError(f"center must have dim {self.dim}")
        with T.no_grad():
            latent = self.backbone(Tensor(center)).data
        self.weight = Tensor(np.concatenate([self.weight.data, latent]),
                             requires_grad=True)
        self.bias = Tensor(np.append(self.bias.data, 0.0),
                           requires_grad=True)
        row = np.zeros((1, self.n_classes))
        row[0, class_label] = NEW_REGION_LOGIT
        self.region_class_logits = Tensor(
            np.concatenate([self.region_class_logits.data, row]),
            requires_grad=True)
        self.revision += 1
        return self.n_regions - 1

    def remove_region(self, index: int) -> None:
        if self.n_regions < 2:
            raise ValueError("cannot remove the last region")
        if not 0 <= index < self.n_regions:
            raise IndexError(f"no region {index}")
        keep = [i for i in range(self.n_regions) if i != index]
        self.weight = Tensor(self.weight.data[keep], requires_grad=True)
        self.bias = Tensor(self.bias.data[keep], requires_grad=True)
        self.region_class_logits = Tensor(
            self.region_class_logits.data[keep], requires_grad=True)
        self.revision += 1

    # -- reporting / export ----------------------------------------------------

    def region_report(self, X: np.ndarray, y: np.ndarray) -> list[dict]:
        """Per-region occupancy, accuracy, medoid and center-nearest sample."""
        out = self.classify(X)
        region, label, latent = out["region"], out["label"], out["latent"]
        probs = self.class_probs().data
        report = []
        for r in range(self.n_regions):
            mask = region == r
            entry = {
                "region": r,
                "class_label": int(np.argmax(probs[r])),
                "count": int(mask.sum()),
                "empty": not bool(mask.any()),
                "accuracy": None,
                "medoid": None,
                "nearest_to_center": None,
            }
            if mask.any():
                pts = X[mask]
                entry["accuracy"] = float((label[mask] == y[mask]).mean())
                d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
                entry["medoid"] = pts[int(np.argmin(d2.sum(axis=1)))].tolist()
                if self.weight_type == "euclidean":
                    dc = np.linalg.norm(latent[mask] - self.weight.data[r],
                                        axis=1)
                    entry["nearest_to_center"] = pts[int(np.argmin(dc))] \
                        .tolist()
            report.append(entry)
        return report

    def report_csv(self, X: np.ndarray, y: np.ndarray) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["region", "class_label", "count", "empty", "accuracy",
                    "medoid", "nearest_to_center"])
        for e in self.region_report(X, y):
            w.writerow([e["region"], e["class_label"], e["count"],
                        int(e["empty"]),
                        "" if e["accuracy"] is None else repr(e["accuracy"]),
                        json.dumps(e["medoid"]),
                        json.dumps(e["nearest_to_center"])])
        return buf.getvalue()

    def state_summary(self) -> dict:
        return {
            "dim": self.dim,
            "n_regions": self.n_regions,
            "n_classes": self.n_classes,
            "weight_type": self.weight_type,
            "revision": self.revision,
            "inverse_temp": float(np.exp(self.log_inverse_temp.data)),
            "region_classes": np.argmax(self.class_probs().data,
                                        axis=1).tolist(),
        }


def _onehot(y: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((y.shape[0], n_classes))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def train_multi_invex(model: MultiInvexClassifier, X: np.ndarray,
                      y: np.ndarray, steps: int = 2000, lr: float = 1e-3,
                      sn_iters: int = 1, log_every: int = 100,
                      freeze_structure: bool = False):
    """Cross-entropy on the soft class mixture.

    ``freeze_structure`` trains the backbone only, keeping region centers,
    biases and class rows fixed (used after a morphism edit to preserve the
    user's intent).
    """
    onehot = Tensor(_onehot(np.asarray(y), model.n_classes))
    params = model.backbone.parameters() if freeze_structure \
        else model.parameters()
    opt = Adam(params, lr=lr)
    history = []
    for step in range(steps):
        model.renormalize(sn_iters)
        probs = model(Tensor(X))
        loss = T.cross_entropy(probs, onehot)
        if not np.isfinite(loss.item()):
            raise TrainingDiverged(step, loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % log_every == 0 or step == steps - 1:
            acc = float((np.argmax(probs.data, axis=1) == y).mean())
            history.append((step, loss.item(), acc))
    return history
