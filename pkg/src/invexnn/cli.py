"""Command-line entry point: train, verify, morph, export-grid, serve.

Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import checkpoint as ckpt
from . import datasets as D
from . import tensor as T
from .classifier import MultiInvexClassifier, train_multi_invex
from .gcgp import (GcgpConfig, LIPSCHITZ_METHODS, make_lipschitz_net,
                   train_basic_iinn, train_guided_iinn, train_lipschitz,
                   train_modified_iinn, train_ordinary)
from .invex import ConeHead, InvexComposite, train_invex_composite
from .layers import ConvexNet, MLP
from .optim import TrainingDiverged
from .tensor import Tensor
from .verify import (check_invexity, connected_components, estimate_lipschitz,
                     random_box_points, rasterize, sublevel_raster)

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

METHODS = ("ordinary", "convex", "invex_basic", "invex_modified",
           "invex_guided", "invex_invertible", "multi_invex") + tuple(
               f"lipschitz:{m}" for m in LIPSCHITZ_METHODS)


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


def _fail_diverged(e: TrainingDiverged):
    click.echo(f"error: {e}", err=True)
    sys.exit(EXIT_DIVERGED)


def _fail_io(e: OSError):
    click.echo(f"error: {e}", err=True)
    sys.exit(EXIT_IO)


def _load_dataset(name: str, seed: int, csv_path: str | None) -> D.Dataset:
    if csv_path:
        try:
            return D.load_csv(csv_path)
        except OSError as e:
            _fail_io(e)
        except D.CsvFormatError as e:
            raise ConfigError(str(e))
    try:
        return D.make(name, seed=seed)
    except KeyError as e:
        raise ConfigError(str(e.args[0]))


def _is_regression(data: D.Dataset) -> bool:
    return data.y.dtype.kind not in "iu"


def _write_outputs(out_dir: str, kind: str, model, extra: dict,
                   metrics_csv: str, summary: dict) -> None:
    try:
        os.makedirs(out_dir, exist_ok=True)
        ckpt.save(os.path.join(out_dir, "checkpoint.json"), kind, model,
                  extra)
        ckpt.write_atomic(os.path.join(out_dir, "metrics.csv"), metrics_csv)
        ckpt.write_atomic(os.path.join(out_dir, "summary.json"),
                          json.dumps(summary, indent=2) + "\n")
    except OSError as e:
        _fail_io(e)


def _history_csv(history) -> str:
    lines = ["step,loss,accuracy"]
    lines += [f"{s},{l!r},{a!r}" for s, l, a in history]
    return "\n".join(lines) + "\n"


@click.group()
def main():
    """Invex network training, verification and morphism tools."""


@main.command()
@click.option("--dataset", default="spiral", help="dataset name")
@click.option("--csv", "csv_path", default=None,
              help="train on a CSV file instead of a named dataset")
@click.option("--method", required=True,
              type=click.Choice(METHODS, case_sensitive=False))
@click.option("--lambda", "lambda_", type=float, default=None,
              help="constraint weight (required for penalty methods)")
@click.option("--steps", type=int, default=2000)
@click.option("--lr", type=float, default=1e-3)
@click.option("--seed", type=int, required=True)
@click.option("--widths", default="100,100",
              help="hidden widths, comma separated")
@click.option("--n-blocks", type=int, default=4,
              help="invertible backbone depth")
@click.option("--coeff", type=float, default=0.9,
              help="spectral coefficient for invertible blocks")
@click.option("--regions", type=int, default=5,
              help="region count for multi_invex")
@click.option("--target-k", type=float, default=1.0,
              help="Lipschitz target for lipschitz:* methods")
@click.option("--out", "out_dir", default="run", help="output directory")
def train(dataset, csv_path, method, lambda_, steps, lr, seed, widths,
          n_blocks, coeff, regions, target_k, out_dir):
    """Train a model; writes checkpoint.json, metrics.csv and summary.json."""
    method = method.lower()
    needs_lambda = method in ("invex_basic", "invex_modified",
                              "invex_guided") or method.startswith(
                                  "lipschitz:") and method != "lipschitz:sn"
    if needs_lambda and lambda_ is None:
        raise ConfigError(f"--lambda is required for method {method}")
    if steps < 1:
        raise ConfigError("--steps must be >= 1")
    data = _load_dataset(dataset, seed, csv_path)
    try:
        hidden = tuple(int(w) for w in widths.split(","))
    except ValueError:
        raise ConfigError(f"bad --widths {widths!r}")
    dims = (data.dim,) + hidden + (1,)

    try:
        result = _run_training(method, data, dims, lambda_, steps, lr, seed,
                               n_blocks, coeff, regions, target_k)
    except TrainingDiverged as e:
        _fail_diverged(e)
    kind, model, extra, metrics_csv, summary = result
    summary.update(method=method, dataset=data.name, seed=seed)
    _write_outputs(out_dir, kind, model, extra, metrics_csv, summary)
    click.echo(json.dumps(summary))


def _run_training(method, data, dims, lambda_, steps, lr, seed, n_blocks,
                  coeff, regions, target_k):
    task = "regression" if _is_regression(data) else "classification"
    cfg = GcgpConfig(lambda_=lambda_ if lambda_ is not None else 0.0,
                     steps=steps, lr=lr, seed=seed, task=task,
                     target_K=target_k)
    summary: dict = {}

    if method.startswith("lipschitz:"):
        m = method.split(":", 1)[1]
        model = make_lipschitz_net(task, m, seed=seed, dims=(data.dim, 10,
                                                             10, 1))
        hist, metrics = train_lipschitz(model, data, cfg, m)
        summary.update(final_loss=metrics["loss"],
                       empirical_K=metrics["empirical_K"],
                       invexity_fraction=None)
        if task == "classification":
            summary["final_accuracy"] = metrics["accuracy"]
        else:
            summary["final_mse"] = metrics["loss"]
        extra = {"config": {"task": task, "method": m,
                            "dims": [data.dim, 10, 10, 1]}}
        return "lipschitz", model, extra, hist.to_csv(), summary

    if method == "ordinary":
        model = MLP(dims, "leaky_relu", seed=seed)
        hist = train_ordinary(model, data, cfg)
        return ("mlp", model, {},
                hist.to_csv(), _scalar_summary(model, data, None, hist, task))

    if method == "convex":
        model = ConvexNet(dims, seed=seed)
        hist = train_ordinary(model, data, cfg)
        return ("convex", model, {},
                hist.to_csv(), _scalar_summary(model, data, None, hist, task))

    if method == "invex_basic":
        model = MLP(dims, "elu", seed=seed)
        center = Tensor(data.X.mean(axis=0), requires_grad=True)
        hist = train_basic_iinn(model, center, data, cfg)
        extra = {"center": center.data.tolist()}
        return ("mlp", model, extra, hist.to_csv(),
                _scalar_summary(model, data, center.data, hist, task))

    if method in ("invex_modified", "invex_guided"):
        g = MLP(dims, "elu", seed=seed)
        f = ConeHead(data.dim, center=data.X.mean(axis=0))
        if method == "invex_modified":
            model, hist = train_modified_iinn(g, f, data, cfg)
            kind = "mlp"  # only g's parameters are free; save g
            saved = g
        else:
            hist = train_guided_iinn(g, f, data, cfg)
            model, kind, saved = g, "mlp", g
        extra = {"guide_center": f.center.data.tolist(),
                 "guide_log_scale": float(f.log_scale.data),
                 "construction": method}
        return (kind, saved, extra, hist.to_csv(),
                _scalar_summary(model, data, f.center.data, hist, task))

    if method == "invex_invertible":
        model = InvexComposite(data.dim, n_blocks=n_blocks, coeff=coeff,
                               seed=seed)
        history = train_invex_composite(model, data.X, data.y, steps=steps,
                                        lr=lr)
        center = model.center_pullback()
        rep = check_invexity(model, data.X, center=center)
        summary = {"final_accuracy": history[-1][2],
                   "empirical_K": None,
                   "invexity_fraction": rep.fraction}
        return ("invex_composite", model, {}, _history_csv(history), summary)

    if method == "multi_invex":
        model = MultiInvexClassifier(data.dim, regions, data.n_classes,
                                     n_blocks=n_blocks, coeff=coeff,
                                     seed=seed)
        model.init_from_data(data.X, data.y, seed=seed)
        history = train_multi_invex(model, data.X, data.y, steps=steps,
                                    lr=lr)
        acc = float((model.predict(data.X) == data.y).mean())
        summary = {"final_accuracy": acc, "empirical_K": None,
                   "invexity_fraction": None}
        return ("multi_invex", model, {}, _history_csv(history), summary)

    raise ConfigError(f"unknown method {method!r}")


def _scalar_summary(model, data, center, hist, task) -> dict:
    est = estimate_lipschitz(model, data.X)
    frac = None
    if center is not None:
        frac = check_invexity(model, data.X, center=center).fraction
    out = {"empirical_K": est.max_grad_norm, "invexity_fraction": frac}
    if task == "classification":
        out["final_accuracy"] = hist.accuracy[-1]
    else:
        out["final_mse"] = hist.loss[-1]
    return out


def _load_checkpoint(path: str):
    try:
        return ckpt.load(path)
    except OSError as e:
        _fail_io(e)
    except ckpt.CheckpointError as e:
        raise ConfigError(str(e))


@main.command()
@click.argument("checkpoint_path")
@click.option("--dataset", default="spiral")
@click.option("--csv", "csv_path", default=None)
@click.option("--seed", type=int, default=0)
@click.option("--random-points", type=int, default=0,
              help="additionally check this many uniform box points")
@click.option("--grid", type=int, default=200,
              help="raster resolution for connectedness checks")
@click.option("--out", "out_path", default=None,
              help="write the verification JSON here as well")
def verify(checkpoint_path, dataset, csv_path, seed, random_points, grid,
           out_path):
    """Verify invexity / Lipschitz / connectedness for a checkpoint."""
    kind, model, extra = _load_checkpoint(checkpoint_path)
    data = _load_dataset(dataset, seed, csv_path)
    report: dict = {"kind": kind, "dataset": data.name}
    bounds = data.bounding_box(inflate=0.2)

    if kind == "multi_invex":
        if model.dim != data.dim:
            raise ConfigError(
                f"model dim {model.dim} != dataset dim {data.dim}")
        acc = float((model.predict(data.X) == data.y).mean())
        region_raster = rasterize(
            lambda pts: model.classify(pts)["region"].astype(float),
            bounds, min(grid, 400))
        comps = {str(r): connected_components(region_raster, float(r))
                 for r in range(model.n_regions)}
        report.update(accuracy=acc, region_components=comps,
                      state=model.state_summary())
    else:
        if _model_dim(kind, model, extra) not in (None, data.dim):
            raise ConfigError("model/dataset dimension mismatch")
        center = _model_center(kind, model, extra)
        if center is not None:
            rep = check_invexity(model, data.X, center=center)
            report["invexity"] = rep.to_dict()
            if random_points:
                pts = random_box_points(bounds, random_points, seed=seed)
                rrep = check_invexity(model, pts, center=center,
                                      point_source="random_box")
                report["invexity_random"] = rrep.to_dict()
        report["lipschitz"] = estimate_lipschitz(model, data.X).to_dict()
        if data.dim == 2:
            with T.no_grad():
                vals = model(Tensor(data.X)).data.reshape(-1)
            comps = {}
            for q in (0.1, 0.3, 0.5, 0.7, 0.9):
                thr = float(np.quantile(vals, q))
                r = sublevel_raster(model, bounds, min(grid, 400), thr)
                comps[f"{q:.1f}"] = connected_components(r, 1)
            report["sublevel_components"] = comps
    text = json.dumps(report, indent=2) + "\n"
    if out_path:
        try:
            ckpt.write_atomic(out_path, text)
        except OSError as e:
            _fail_io(e)
    click.echo(text.rstrip("\n"))


def _model_dim(kind, model, extra):
    if kind in ("mlp", "convex"):
        return model.dims[0]
    if kind == "invex_composite":
        return model.backbone.dim
    return None


def _model_center(kind, model, extra):
    if kind == "invex_composite":
        return model.center_pullback()
    if "center" in extra:
        return np.asarray(extra["center"])
    if "guide_center" in extra:
        return np.asarray(extra["guide_center"])
    return None


def parse_morph_script(text: str) -> list[tuple]:
    """Lines: 'add X Y CLASS' | 'remove REGION' | 'finetune STEPS'.

    Blank lines and '#' comments are skipped. Raises ValueError with the
    offending line number on malformed input.
    """
    ops = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "add" and len(parts) == 4:
                ops.append(("add", float(parts[1]), float(parts[2]),
                            int(parts[3])))
            elif parts[0] == "remove" and len(parts) == 2:
                ops.append(("remove", int(parts[1])))
            elif parts[0] == "finetune" and len(parts) == 2:
                steps = int(parts[1])
                if steps < 1:
                    raise ValueError
                ops.append(("finetune", steps))
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"line {lineno}: malformed morph op {raw!r}")
    return ops


def apply_morph_op(model: MultiInvexClassifier, op: tuple, data: D.Dataset,
                   lr: float = 1e-3) -> dict:
    """Apply one scripted op and report the resulting hard accuracy."""
    if op[0] == "add":
        idx = model.add_region(np.array(op[1:3]), op[3])
        detail = {"op": "add", "region": idx}
    elif op[0] == "remove":
        model.remove_region(op[1])
        detail = {"op": "remove", "region": op[1]}
    else:
        train_multi_invex(model, data.X, data.y, steps=op[1], lr=lr)
        detail = {"op": "finetune", "steps": op[1]}
    detail["revision"] = model.revision
    detail["accuracy"] = float((model.predict(data.X) == data.y).mean())
    return detail


@main.command()
@click.argument("checkpoint_path")
@click.argument("script_path")
@click.option("--dataset", default="clusters5")
@click.option("--csv", "csv_path", default=None)
@click.option("--seed", type=int, default=0)
@click.option("--lr", type=float, default=1e-3)
@click.option("--out", "out_dir", default="morphed")
def morph(checkpoint_path, script_path, dataset, csv_path, seed, lr,
          out_dir):
    """Replay a scripted morphism sequence against a multi_invex checkpoint."""
    kind, model, extra = _load_checkpoint(checkpoint_path)
    if kind != "multi_invex":
        raise ConfigError(f"morph needs a multi_invex checkpoint, got {kind}")
    if model.weight_type != "euclidean":
        raise ConfigError("morph requires euclidean region weights")
    data = _load_dataset(dataset, seed, csv_path)
    try:
        with open(script_path, "r", encoding="utf-8") as f:
            ops = parse_morph_script(f.read())
    except OSError as e:
        _fail_io(e)
    except ValueError as e:
        raise ConfigError(str(e))
    steps = []
    try:
        for op in ops:
            steps.append(apply_morph_op(model, op, data, lr=lr))
    except (ValueError, IndexError) as e:
        raise ConfigError(f"morph op failed: {e}")
    except TrainingDiverged as e:
        _fail_diverged(e)
    lines = ["index,op,region_or_steps,revision,accuracy"]
    for i, s in enumerate(steps):
        lines.append(f"{i},{s['op']},{s.get('region', s.get('steps'))},"
                     f"{s['revision']},{s['accuracy']!r}")
    try:
        os.makedirs(out_dir, exist_ok=True)
        ckpt.save(os.path.join(out_dir, "checkpoint.json"), kind, model,
                  extra)
        ckpt.write_atomic(os.path.join(out_dir, "morph_metrics.csv"),
                          "\n".join(lines) + "\n")
    except OSError as e:
        _fail_io(e)
    click.echo(json.dumps({"ops_applied": len(steps),
                           "final_accuracy": steps[-1]["accuracy"]
                           if steps else None,
                           "revision": model.revision}))


@main.command("export-grid")
@click.argument("checkpoint_path")
@click.option("--grid", type=int, default=200)
@click.option("--bounds", default="-1.5,1.5,-1.5,1.5",
              help="xmin,xmax,ymin,ymax")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
              default="csv")
@click.option("--out", "out_path", required=True)
def export_grid(checkpoint_path, grid, bounds, fmt, out_path):
    """Export a decision raster (region map or scalar field) for plotting."""
    kind, model, extra = _load_checkpoint(checkpoint_path)
    try:
        b = [float(v) for v in bounds.split(",")]
        if len(b) != 4:
            raise ValueError
    except ValueError:
        raise ConfigError(f"bad --bounds {bounds!r}")
    box = np.array([[b[0], b[1]], [b[2], b[3]]])
    if grid < 2 or grid > 400:
        raise ConfigError("--grid must be in [2, 400]")
    if kind == "multi_invex":
        r = rasterize(lambda pts: model.classify(pts)["label"].astype(float),
                      box, grid)
    else:
        def fn(pts):
            with T.no_grad():
                return model(Tensor(pts)).data.reshape(-1)
        r = rasterize(fn, box, grid)
    try:
        ckpt.write_atomic(out_path, r.to_csv() if fmt == "csv"
                          else r.to_json() + "\n")
    except OSError as e:
        _fail_io(e)
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--port", type=int, default=8765)
@click.option("--host", default="127.0.0.1")
def serve(port, host):
    """Start the morphism HTTP session service."""
    import uvicorn

    from .service import app
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
