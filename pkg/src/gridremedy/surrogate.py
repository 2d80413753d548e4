"""Neural load-flow approximation.

A from-scratch fully-connected network maps one grid state (loads, productions
and a one-hot single-line-outage tag) to the reference solver's outputs
(generator reactive power, load voltages, line flows in MW and A).  Trained
with mini-batch Adam on normalized targets; prediction is a single matrix
chain, which makes whole contingency sets cheap to screen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import Grid, GridError, UnknownElement
from .powerflow import SQRT3, SecurityCriterion, SecurityIssue
from .scenarios import Dataset

MODEL_VERSION = 1


class ShapeMismatch(GridError):
    pass


class LengthMismatch(GridError):
    pass


class NonFiniteLoss(GridError):
    pass


class EmptySplit(GridError):
    pass


class MultipleOutages(GridError):
    pass


# ---------------------------------------------------------------------------
# Encoding


@dataclass(frozen=True)
class Encoding:
    """Fixed element ordering plus per-feature normalization statistics.

    Input layout:  [load_p, load_q, gen_p, gen_v, onehot(n_line + 1)].
    Output layout: [gen_q, load_v, f_mw, f_a].
    Zero-variance features pass through unscaled.
    """

    load_ids: tuple[str, ...]
    gen_ids: tuple[str, ...]
    line_ids: tuple[str, ...]
    in_mean: np.ndarray
    in_sd: np.ndarray
    out_mean: np.ndarray
    out_sd: np.ndarray

    @property
    def n_in(self) -> int:
        return 2 * len(self.load_ids) + 2 * len(self.gen_ids) + len(self.line_ids) + 1

    @property
    def n_out(self) -> int:
        return len(self.gen_ids) + len(self.load_ids) + 2 * len(self.line_ids)

    def output_blocks(self) -> dict[str, slice]:
        ng, nc, nl = len(self.gen_ids), len(self.load_ids), len(self.line_ids)
        return {
            "gen_q": slice(0, ng),
            "load_v": slice(ng, ng + nc),
            "f_mw": slice(ng + nc, ng + nc + nl),
            "f_a": slice(ng + nc + nl, ng + nc + 2 * nl),
        }

    def normalize_in(self, X: np.ndarray) -> np.ndarray:
        return (X - self.in_mean) / self.in_sd

    def normalize_out(self, Y: np.ndarray) -> np.ndarray:
        return (Y - self.out_mean) / self.out_sd

    def denormalize_out(self, Y: np.ndarray) -> np.ndarray:
        return Y * self.out_sd + self.out_mean


def _safe_sd(sd: np.ndarray) -> np.ndarray:
    # near-zero spread means a degenerate column (e.g. a dead-end line whose
    # flow is numerical noise); scaling by it would amplify that noise
    return np.where(sd > 1e-8, sd, 1.0)


def dataset_inputs(ds: Dataset, rows: np.ndarray) -> np.ndarray:
    onehot = np.zeros((len(rows), len(ds.line_ids) + 1))
    onehot[np.arange(len(rows)), ds.outage_index[rows]] = 1.0
    return np.hstack([ds.load_p[rows], ds.load_q[rows],
                      ds.gen_p[rows], ds.gen_v[rows], onehot])


def dataset_targets(ds: Dataset, rows: np.ndarray) -> np.ndarray:
    return np.hstack([ds.gen_q[rows], ds.load_v[rows],
                      ds.f_mw[rows], ds.f_a[rows]])


def fit_encoding(ds: Dataset) -> Encoding:
    """Normalization statistics come from the training split only."""
    train = ds.rows(0)
    if len(train) == 0:
        raise EmptySplit("dataset has no training rows")
    X = dataset_inputs(ds, train)
    Y = dataset_targets(ds, train)
    return Encoding(
        load_ids=ds.load_ids, gen_ids=ds.gen_ids, line_ids=ds.line_ids,
        in_mean=X.mean(axis=0), in_sd=_safe_sd(X.std(axis=0)),
        out_mean=Y.mean(axis=0), out_sd=_safe_sd(Y.std(axis=0)),
    )


def encode_grid(enc: Encoding, grid: Grid) -> np.ndarray:
    """Raw input vector for a grid state; at most one line may be out."""
    loads = {l.id: l for l in grid.loads}
    gens = {g.id: g for g in grid.generators}
    lines = {l.id: l for l in grid.lines}
    for ids, have, what in ((enc.load_ids, loads, "load"),
                            (enc.gen_ids, gens, "generator"),
                            (enc.line_ids, lines, "line")):
        missing = set(ids) - set(have)
        if missing or len(have) != len(ids):
            raise UnknownElement(f"{what} set differs from the encoding")

    out = [lid for lid in enc.line_ids if not lines[lid].in_service]
    if len(out) > 1:
        raise MultipleOutages(f"{len(out)} lines out; the encoder handles one")
    onehot = np.zeros(len(enc.line_ids) + 1)
    onehot[enc.line_ids.index(out[0]) + 1 if out else 0] = 1.0

    return np.concatenate([
        [loads[i].p for i in enc.load_ids],
        [loads[i].q for i in enc.load_ids],
        [gens[i].p_set if gens[i].in_service else 0.0 for i in enc.gen_ids],
        [gens[i].v_set for i in enc.gen_ids],
        onehot,
    ])


@dataclass(frozen=True)
class Prediction:
    gen_q: dict[str, float]
    load_v: dict[str, float]
    f_mw: dict[str, float]
    f_a: dict[str, float]


def decode(enc: Encoding, y: np.ndarray) -> Prediction:
    if y.shape != (enc.n_out,):
        raise ShapeMismatch(f"expected output of length {enc.n_out}")
    b = enc.output_blocks()
    return Prediction(
        gen_q=dict(zip(enc.gen_ids, y[b["gen_q"]])),
        load_v=dict(zip(enc.load_ids, y[b["load_v"]])),
        f_mw=dict(zip(enc.line_ids, y[b["f_mw"]])),
        f_a=dict(zip(enc.line_ids, y[b["f_a"]])),
    )


# ---------------------------------------------------------------------------
# Network


@dataclass
class SurrogateModel:
    encoding: Encoding
    sizes: tuple[int, ...]  # n_in, hidden..., n_out
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, W in enumerate(self.weights):
            if W.shape != (self.sizes[k], self.sizes[k + 1]):
                raise ShapeMismatch(f"layer {k} weight shape {W.shape}")
            if not (np.isfinite(W).all() and np.isfinite(self.biases[k]).all()):
                raise NonFiniteLoss(f"layer {k} has non-finite parameters")


@dataclass(frozen=True)
class TrainConfig:
    hidden_sizes: tuple[int, ...] = (300, 300, 300)
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 200
    patience: int = 10
    lr_decay: float = 1.0  # per-epoch multiplier on the learning rate
    seed: int = 0


def _forward(weights, biases, X):
    """Returns (activations per layer incl. input, output)."""
    acts = [X]
    a = X
    last = len(weights) - 1
    for k, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W + b
        a = z if k == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts, a


def _loss_and_grad(weights, biases, X, Y):
    """MSE over all output entries plus analytic parameter gradients."""
    with np.errstate(over="ignore", invalid="ignore"):
        acts, out = _forward(weights, biases, X)
        diff = out - Y
        loss = float(np.mean(diff * diff))
        dZ = 2.0 * diff / diff.size
        dW = [None] * len(weights)
        db = [None] * len(weights)
        for k in range(len(weights) - 1, -1, -1):
            dW[k] = acts[k].T @ dZ
            db[k] = dZ.sum(axis=0)
            if k > 0:
                dZ = (dZ @ weights[k].T) * (acts[k] > 0.0)
    return loss, dW, db


def _init_params(sizes, rng):
    weights, biases = [], []
    for n_in, n_out in zip(sizes, sizes[1:]):
        scale = np.sqrt(2.0 / n_in)  # He initialization for ReLU
        weights.append(rng.normal(0.0, scale, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return weights, biases


def _run_training(ds, enc, cfg, lr):
    sizes = (enc.n_in,) + tuple(cfg.hidden_sizes) + (enc.n_out,)
    rng = np.random.default_rng(cfg.seed)
    weights, biases = _init_params(sizes, rng)

    Xtr = enc.normalize_in(dataset_inputs(ds, ds.rows(0)))
    Ytr = enc.normalize_out(dataset_targets(ds, ds.rows(0)))
    Xva = enc.normalize_in(dataset_inputs(ds, ds.rows(1)))
    Yva = enc.normalize_out(dataset_targets(ds, ds.rows(1)))

    mW = [np.zeros_like(W) for W in weights]
    vW = [np.zeros_like(W) for W in weights]
    mb = [np.zeros_like(b) for b in biases]
    vb = [np.zeros_like(b) for b in biases]
    b1, b2, eps = 0.9, 0.999, 1e-8
    step = 0

    best = (np.inf, [W.copy() for W in weights], [b.copy() for b in biases], 0)
    curve = []
    stale = 0
    for epoch in range(cfg.epochs):
        lr_t = lr * cfg.lr_decay ** epoch
        order = rng.permutation(len(Xtr))
        for lo in range(0, len(order), cfg.batch):
            idx = order[lo:lo + cfg.batch]
            loss, dW, db = _loss_and_grad(weights, biases, Xtr[idx], Ytr[idx])
            if not np.isfinite(loss):
                return None, curve
            step += 1
            corr = np.sqrt(1 - b2 ** step) / (1 - b1 ** step)
            for k in range(len(weights)):
                mW[k] = b1 * mW[k] + (1 - b1) * dW[k]
                vW[k] = b2 * vW[k] + (1 - b2) * dW[k] ** 2
                weights[k] -= lr_t * corr * mW[k] / (np.sqrt(vW[k]) + eps)
                mb[k] = b1 * mb[k] + (1 - b1) * db[k]
                vb[k] = b2 * vb[k] + (1 - b2) * db[k] ** 2
                biases[k] -= lr_t * corr * mb[k] / (np.sqrt(vb[k]) + eps)
        _, out_tr = _forward(weights, biases, Xtr)
        _, out_va = _forward(weights, biases, Xva)
        tr = float(np.mean((out_tr - Ytr) ** 2))
        va = float(np.mean((out_va - Yva) ** 2))
        curve.append((tr, va))
        if not (np.isfinite(tr) and np.isfinite(va)):
            return None, curve
        if va < best[0]:
            best = (va, [W.copy() for W in weights], [b.copy() for b in biases],
                    epoch)
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break
    return best, curve


def train(ds: Dataset, cfg: TrainConfig = TrainConfig()) -> SurrogateModel:
    """Mini-batch Adam on normalized MSE; keeps the best-validation weights.
    A non-finite loss triggers one retry at a tenth of the learning rate."""
    for split, name in ((0, "training"), (1, "validation"), (2, "test")):
        if len(ds.rows(split)) == 0:
            raise EmptySplit(f"dataset has no {name} rows")
    enc = fit_encoding(ds)
    lr = cfg.lr
    best, curve = _run_training(ds, enc, cfg, lr)
    if best is None:
        lr = cfg.lr / 10.0
        best, curve = _run_training(ds, enc, cfg, lr)
        if best is None:
            raise NonFiniteLoss("loss diverged even after lowering the rate")
    va, weights, biases, best_epoch = best
    sizes = (enc.n_in,) + tuple(cfg.hidden_sizes) + (enc.n_out,)
    return SurrogateModel(
        encoding=enc, sizes=sizes, weights=weights, biases=biases,
        meta={"epochs": len(curve), "best_epoch": best_epoch, "seed": cfg.seed,
              "lr": lr, "batch": cfg.batch, "val_loss": va,
              "loss_curve": curve},
    )


def predict_batch(model: SurrogateModel, X: np.ndarray) -> np.ndarray:
    # row-by-row vector products keep each row's result independent of the
    # batch size, so batch and single predictions agree bitwise
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.encoding.n_in:
        raise ShapeMismatch(
            f"expected (n, {model.encoding.n_in}), got {X.shape}")
    Xn = model.encoding.normalize_in(X)
    out = np.empty((len(Xn), model.encoding.n_out))
    for i in range(len(Xn)):
        _, out[i] = _forward(model.weights, model.biases, Xn[i])
    return model.encoding.denormalize_out(out)


def predict(model: SurrogateModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.encoding.n_in,):
        raise ShapeMismatch(f"expected input of length {model.encoding.n_in}")
    return predict_batch(model, x[None, :])[0]


def predict_grid(model: SurrogateModel, grid: Grid) -> Prediction:
    return decode(model.encoding, predict(model, encode_grid(model.encoding, grid)))


# ---------------------------------------------------------------------------
# Metrics


def mae(y_hat: Sequence[float], y_true: Sequence[float]) -> float:
    y_hat, y_true = np.asarray(y_hat, float), np.asarray(y_true, float)
    if y_hat.shape != y_true.shape:
        raise LengthMismatch(f"{y_hat.shape} vs {y_true.shape}")
    return float(np.mean(np.abs(y_hat - y_true)))


def mape(y_hat: Sequence[float], y_true: Sequence[float],
         eps: float = 1e-6) -> tuple[float, int]:
    """Mean absolute percentage error as a fraction, with each entry's error
    taken relative to the predicted value, plus the count of entries excluded
    for |y_true| < eps."""
    y_hat, y_true = np.asarray(y_hat, float), np.asarray(y_true, float)
    if y_hat.shape != y_true.shape:
        raise LengthMismatch(f"{y_hat.shape} vs {y_true.shape}")
    keep = np.abs(y_true) >= eps
    excluded = int(y_hat.size - keep.sum())
    if not keep.any():
        return 0.0, excluded
    denom = np.maximum(np.abs(y_hat[keep]), eps)
    value = float(np.mean(np.abs(y_hat[keep] - y_true[keep]) / denom))
    return value, excluded


def evaluate(model: SurrogateModel, ds: Dataset, split: int = 2) -> dict:
    """Per-output-block MAE and MAPE on one dataset split."""
    rows = ds.rows(split)
    if len(rows) == 0:
        raise EmptySplit(f"no rows in split {split}")
    Y = dataset_targets(ds, rows)
    P = predict_batch(model, dataset_inputs(ds, rows))
    report = {}
    for name, sl in model.encoding.output_blocks().items():
        m, excluded = mape(P[:, sl].ravel(), Y[:, sl].ravel())
        report[name] = {"mae": mae(P[:, sl].ravel(), Y[:, sl].ravel()),
                        "mape": m, "mape_excluded": excluded}
    return report


# ---------------------------------------------------------------------------
# Fast security screening


def _kv_of_sending_end(grid: Grid) -> dict[str, float]:
    subs = {s.id: s for s in grid.substations}
    return {l.id: subs[l.from_sub].base_kv for l in grid.lines}


def _issues_from_outputs(enc: Encoding, y: np.ndarray, grid: Grid,
                         criterion: SecurityCriterion, margin: float,
                         skip: frozenset[str]) -> list[SecurityIssue]:
    b = enc.output_blocks()
    f_mw = y[b["f_mw"]]
    f_a = y[b["f_a"]]
    kv = _kv_of_sending_end(grid)
    ratings = {l.id: l.rating for l in grid.lines}
    out = []
    for i, lid in enumerate(enc.line_ids):
        if lid in skip:
            continue
        apparent = max(abs(f_mw[i]), SQRT3 * kv[lid] * abs(f_a[i]) / 1000.0)
        ratio = apparent / ratings[lid]
        if ratio > criterion.threshold - margin:
            out.append(SecurityIssue(line_id=lid, flow_mva=apparent,
                                     limit_mva=ratings[lid], ratio=ratio))
    return out


def fast_screen(model: SurrogateModel, grid: Grid,
                criterion: SecurityCriterion = SecurityCriterion(),
                margin: float = 0.05) -> list[SecurityIssue]:
    """Predicted security issues of one grid state (recall-biased)."""
    enc = model.encoding
    lines = {l.id: l for l in grid.lines}
    skip = frozenset(lid for lid in enc.line_ids if not lines[lid].in_service)
    y = predict(model, encode_grid(enc, grid))
    return _issues_from_outputs(enc, y, grid, criterion, margin, skip)


@dataclass(frozen=True)
class ScreenReport:
    base_issues: tuple[SecurityIssue, ...]
    flagged: dict[str, tuple[SecurityIssue, ...]]  # outaged line -> issues

    def flagged_lines(self) -> frozenset[str]:
        return frozenset(self.flagged)


def fast_n_minus_1(model: SurrogateModel, grid: Grid,
                   criterion: SecurityCriterion = SecurityCriterion(),
                   margin: float = 0.05) -> ScreenReport:
    """One batched forward pass over the intact state and every single-line
    outage; flags the contingencies predicted to violate the criterion."""
    enc = model.encoding
    x0 = encode_grid(enc, grid)
    base_offset = 2 * len(enc.load_ids) + 2 * len(enc.gen_ids)
    if x0[base_offset] != 1.0:
        raise MultipleOutages("N-1 screening starts from an intact grid")
    n_line = len(enc.line_ids)
    X = np.tile(x0, (n_line + 1, 1))
    X[:, base_offset:] = 0.0
    X[np.arange(n_line + 1), base_offset + np.arange(n_line + 1)] = 1.0
    Y = predict_batch(model, X)

    base = tuple(_issues_from_outputs(enc, Y[0], grid, criterion, margin,
                                      frozenset()))
    flagged = {}
    for k, lid in enumerate(enc.line_ids):
        issues = _issues_from_outputs(enc, Y[k + 1], grid, criterion, margin,
                                      frozenset({lid}))
        if issues:
            flagged[lid] = tuple(issues)
    return ScreenReport(base_issues=base, flagged=flagged)


# ---------------------------------------------------------------------------
# Persistence


def save_model(model: SurrogateModel, path) -> None:
    enc = model.encoding
    payload = {
        "version": MODEL_VERSION,
        "sizes": np.array(model.sizes),
        "activation": np.array(model.activation),
        "meta": np.array(json.dumps(model.meta)),
        "load_ids": np.array(enc.load_ids),
        "gen_ids": np.array(enc.gen_ids),
        "line_ids": np.array(enc.line_ids),
        "in_mean": enc.in_mean, "in_sd": enc.in_sd,
        "out_mean": enc.out_mean, "out_sd": enc.out_sd,
    }
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        payload[f"W{k}"] = W
        payload[f"b{k}"] = b
    np.savez_compressed(path, **payload)


def load_model(path) -> SurrogateModel:
    with np.load(path, allow_pickle=False) as z:
        if int(z["version"]) != MODEL_VERSION:
            raise GridError(f"unsupported model version {z['version']}")
        enc = Encoding(
            load_ids=tuple(str(s) for s in z["load_ids"]),
            gen_ids=tuple(str(s) for s in z["gen_ids"]),
            line_ids=tuple(str(s) for s in z["line_ids"]),
            in_mean=z["in_mean"], in_sd=z["in_sd"],
            out_mean=z["out_mean"], out_sd=z["out_sd"],
        )
        sizes = tuple(int(s) for s in z["sizes"])
        weights = [z[f"W{k}"] for k in range(len(sizes) - 1)]
        biases = [z[f"b{k}"] for k in range(len(sizes) - 1)]
        return SurrogateModel(
            encoding=enc, sizes=sizes, weights=weights, biases=biases,
            activation=str(z["activation"]),
            meta=json.loads(str(z["meta"])),
        )
