"""Losses, Adam with decoupled weight decay, early stopping, metrics, and the
transductive / inductive training loops.

Both loops are full-batch per graph: one forward over the whole graph per
epoch (transductive) or one optimizer step per training graph (inductive),
early stopping on the validation metric with the best parameter state
restored before test metrics are computed exactly once.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .config import RunConfig
from .graph import MASK_TEST, MASK_TRAIN, MASK_VAL, DatasetBundle, Graph
from .layers import GsanParams, gsan_forward, init_params
from .tensor import FiniteError, Tensor, _as_tensor, _emit, _sigmoid_np, _tape_of


class DivergenceError(Exception):
    """Training loss went non-finite or ran away; the run is aborted."""


# ---------------------------------------------------------------------------
# losses


def masked_cross_entropy(logits, labels, mask) -> Tensor:
    """Mean negative log softmax probability of the true class over the mask."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("masked_cross_entropy: empty mask")
    tape = _tape_of(logits)
    rows = logits.data[idx]
    m = rows.max(axis=1, keepdims=True)
    shifted = rows - m
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + m
    picked = rows[np.arange(idx.size), labels[idx]]
    data = np.asarray((logz[:, 0] - picked).mean())
    if tape is None or logits.node_id is None:
        return _emit(data, tape, "masked_cross_entropy")
    l_id, shape = logits.node_id, logits.data.shape
    probs = np.exp(rows - logz)

    def fn(g):
        d = np.zeros(shape, dtype=probs.dtype)
        local = probs.copy()
        local[np.arange(idx.size), labels[idx]] -= 1.0
        d[idx] = local * (float(g) / idx.size)
        return [(l_id, d)]

    return _emit(data, tape, "masked_cross_entropy", fn)


def multilabel_bce(logits, targets) -> Tensor:
    """Mean stabilized sigmoid cross-entropy over every (node, label) cell."""
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.data.shape:
        raise ValueError("multilabel_bce: target shape mismatch")
    if not np.isin(targets, (0.0, 1.0)).all():
        raise ValueError("multilabel_bce: targets must be 0/1")
    tape = _tape_of(logits)
    z = logits.data
    cell = np.maximum(z, 0.0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    data = np.asarray(cell.mean())
    if tape is None or logits.node_id is None:
        return _emit(data, tape, "multilabel_bce")
    l_id = logits.node_id

    def fn(g):
        return [(l_id, (_sigmoid_np(z) - targets) * (float(g) / z.size))]

    return _emit(data, tape, "multilabel_bce", fn)


_NO_PENALTY_SUFFIXES = ("b_conv", "ln_gamma", "ln_beta", "head.b")


def _penalty_applies(name: str) -> bool:
    return not name.endswith(_NO_PENALTY_SUFFIXES)


def penalty(named_params, l1: float = 0.0, l2: float = 0.0, smooth_l1: float = 0.0) -> Tensor:
    """l1*sum|w| + l2*sum w^2 + smooth_l1*sum huber(w, 1) over weight tensors.

    Biases and norm parameters are excluded. Accepts (name, Tensor) pairs from
    a tracked parameter set so the penalty participates in the backward pass.
    """
    for coef in (l1, l2, smooth_l1):
        if coef < 0:
            raise ValueError("penalty coefficients must be >= 0")
    tensors = [t for name, t in named_params if _penalty_applies(name)]
    tape = _tape_of(*[t for t in tensors if isinstance(t, Tensor)]) if tensors else None
    total = 0.0
    for t in tensors:
        w = t.data if isinstance(t, Tensor) else np.asarray(t)
        total += l1 * np.abs(w).sum() + l2 * (w * w).sum()
        if smooth_l1:
            aw = np.abs(w)
            total += smooth_l1 * np.where(aw <= 1.0, 0.5 * w * w, aw - 0.5).sum()
    data = np.asarray(total)
    if tape is None:
        return _emit(data, None, "penalty")

    def fn(g):
        out = []
        for t in tensors:
            if not isinstance(t, Tensor) or t.node_id is None:
                continue
            w = t.data
            d = l1 * np.sign(w) + 2.0 * l2 * w
            if smooth_l1:
                d = d + smooth_l1 * np.clip(w, -1.0, 1.0)
            out.append((t.node_id, d * float(g)))
        return out

    return _emit(data, tape, "penalty", fn)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimState:
    """Adam moments plus step count; weight decay is decoupled from the moments."""

    lr: float = 0.005
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_config(cls, cfg: RunConfig) -> "OptimState":
        return cls(lr=cfg.lr, weight_decay=cfg.weight_decay,
                   beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


def adam_step(params: GsanParams, grads: dict, opt: OptimState) -> None:
    """One bias-corrected Adam update in place; decay applied as lr*wd*w."""
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for name, arr in params.named():
        g = grads.get(name)
        if g is None:
            continue
        m = opt.m.get(name)
        if m is None:
            m = opt.m[name] = np.zeros_like(arr)
        v = opt.v.get(name)
        if v is None:
            v = opt.v[name] = np.zeros_like(arr)
        m += (1.0 - opt.beta1) * (g - m)
        v += (1.0 - opt.beta2) * (g * g - v)
        update = (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
        if opt.weight_decay:
            update = update + opt.weight_decay * arr
        arr -= opt.lr * update


def grads_by_name(tracked: GsanParams, raw_grads: dict) -> dict:
    return {name: raw_grads.get(t.node_id) for name, t in tracked.named()}


# ---------------------------------------------------------------------------
# metrics


def accuracy(logits, labels, mask=None) -> float:
    """Fraction of argmax predictions matching labels; ties go to the lowest
    class index (numpy argmax convention)."""
    logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    labels = np.asarray(labels)
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        logits, labels = logits[keep], labels[keep]
    if labels.size == 0:
        raise ValueError("accuracy: nothing selected")
    return float((logits.argmax(axis=1) == labels).mean())


def micro_f1(logits, targets, threshold: float = 0.5) -> float:
    """Micro-averaged F1 with sigmoid(logit) >= threshold; 0/0 counts as 0."""
    logits = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    targets = np.asarray(targets).astype(bool)
    pred = _sigmoid_np(logits) >= threshold
    tp = int(np.sum(pred & targets))
    fp = int(np.sum(pred & ~targets))
    fn = int(np.sum(~pred & targets))
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0


# ---------------------------------------------------------------------------
# early stopping


@dataclass
class EarlyStop:
    """Keeps the best validation metric and its parameter snapshot; trips when
    the epochs since the best exceed the patience window."""

    patience: int = 10
    best: float = -np.inf
    best_epoch: int = -1
    snapshot: GsanParams | None = None

    def update(self, metric: float, epoch: int, params: GsanParams) -> None:
        if metric > self.best:
            self.best = metric
            self.best_epoch = epoch
            self.snapshot = params.copy()

    def should_stop(self, epoch: int) -> bool:
        return epoch - self.best_epoch > self.patience


# ---------------------------------------------------------------------------
# reports and loops


@dataclass
class TrainReport:
    seed: int
    config: dict
    epochs: list = field(default_factory=list)   # per-epoch metric records
    best_epoch: int = -1
    best_val_metric: float = 0.0
    test_metrics: dict = field(default_factory=dict)
    wall_clock_sec: float = 0.0
    graph_access_log: list = field(default_factory=list)
    final_params: object = None                  # restored best parameters

    def to_dict(self) -> dict:
        return {"seed": self.seed, "config": self.config, "epochs": self.epochs,
                "best_epoch": self.best_epoch, "best_val_metric": self.best_val_metric,
                "test_metrics": self.test_metrics, "wall_clock_sec": self.wall_clock_sec}

    def metrics_rows(self) -> list:
        return [(rec["epoch"], rec["train_loss"], rec["val_loss"],
                 rec["val_acc"], rec["val_f1"]) for rec in self.epochs]


class _DivergenceGuard:
    """Aborts when the loss is non-finite, or stays above 10x its initial
    value for 5 consecutive epochs."""

    def __init__(self):
        self.initial = None
        self.streak = 0

    def check(self, loss: float, epoch: int) -> None:
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        if self.initial is None:
            self.initial = max(abs(loss), 1e-12)
            return
        if loss > 10.0 * self.initial:
            self.streak += 1
            if self.streak >= 5:
                raise DivergenceError(
                    f"loss above 10x initial for 5 epochs (epoch {epoch})")
        else:
            self.streak = 0


def _loss_and_grads(g: Graph, params: GsanParams, cfg: RunConfig,
                    rng: np.random.Generator, multilabel: bool,
                    mask: np.ndarray | None):
    tape = tz.Tape()
    live = params.tracked(tape)
    logits, _ = gsan_forward(g, live, cfg, rng, training=True)
    if multilabel:
        loss = multilabel_bce(logits, g.labels)
    else:
        loss = masked_cross_entropy(logits, g.labels, mask)
    if cfg.l1 or cfg.l2 or cfg.smooth_l1:
        loss = tz.add(loss, penalty(list(live.named()), cfg.l1, cfg.l2, cfg.smooth_l1))
    raw = tz.backward(loss, tape)
    return float(loss.data), grads_by_name(live, raw)


def _eval_logits(g: Graph, params: GsanParams, cfg: RunConfig):
    logits, _ = gsan_forward(g, params, cfg, rng=None, training=False)
    return logits.data


def train_transductive(bundle: DatasetBundle, cfg: RunConfig, seed: int) -> TrainReport:
    """Full-graph training with early stopping on validation accuracy."""
    if bundle.task != "transductive":
        raise ValueError("need a transductive bundle")
    g = bundle.graph
    train_mask = g.masks == MASK_TRAIN
    val_mask = g.masks == MASK_VAL
    test_mask = g.masks == MASK_TEST
    if not train_mask.any():
        raise ValueError("empty train mask")
    if not val_mask.any():
        raise ValueError("empty validation mask (early stopping needs one)")
    rng = np.random.default_rng(seed)
    tz.set_default_dtype(cfg.dtype)
    params = init_params(cfg, bundle.n_features, bundle.n_classes, rng)
    opt = OptimState.for_config(cfg)
    stopper = EarlyStop(patience=cfg.patience)
    guard = _DivergenceGuard()
    report = TrainReport(seed=seed, config=cfg.to_dict())
    start = time.perf_counter()
    try:
        for epoch in range(cfg.max_epochs):
            loss, grads = _loss_and_grads(g, params, cfg, rng, False, train_mask)
            guard.check(loss, epoch)
            adam_step(params, grads, opt)
            logits = _eval_logits(g, params, cfg)
            val_loss = float(masked_cross_entropy(Tensor(logits), g.labels, val_mask).data)
            val_acc = accuracy(logits, g.labels, val_mask)
            report.epochs.append({"epoch": epoch, "train_loss": loss,
                                  "val_loss": val_loss, "val_acc": val_acc,
                                  "val_f1": val_acc})
            stopper.update(val_acc, epoch, params)
            if stopper.should_stop(epoch):
                break
    except FiniteError as e:
        raise DivergenceError(f"forward produced non-finite values: {e}") from e
    best = stopper.snapshot if stopper.snapshot is not None else params
    logits = _eval_logits(g, best, cfg)
    report.best_epoch = stopper.best_epoch
    report.best_val_metric = stopper.best
    report.test_metrics = {
        "test_acc": accuracy(logits, g.labels, test_mask) if test_mask.any() else 0.0,
        "test_loss": float(masked_cross_entropy(Tensor(logits), g.labels, test_mask).data)
        if test_mask.any() else 0.0,
    }
    report.wall_clock_sec = time.perf_counter() - start
    report.final_params = best
    return report


def _multi_graph_eval(graphs, params, cfg) -> tuple[float, float]:
    """Pooled micro-F1 and mean BCE loss over a list of graphs."""
    logit_blocks, target_blocks = [], []
    for g in graphs:
        logit_blocks.append(_eval_logits(g, params, cfg))
        target_blocks.append(g.labels)
    logits = np.vstack(logit_blocks)
    targets = np.vstack(target_blocks)
    return (micro_f1(logits, targets),
            float(multilabel_bce(Tensor(logits), targets).data))


def train_inductive(bundle: DatasetBundle, cfg: RunConfig, seed: int) -> TrainReport:
    """Per-graph optimizer steps over the training graphs, early stopping on
    validation micro-F1; the test graphs are only ever touched once at the end."""
    if bundle.task != "inductive":
        raise ValueError("need an inductive bundle")
    train_graphs = bundle.graphs_for("train")
    val_graphs = bundle.graphs_for("val")
    test_graphs = bundle.graphs_for("test")
    if not train_graphs or not val_graphs or not test_graphs:
        raise ValueError("inductive bundle must have train, val and test graphs")
    rng = np.random.default_rng(seed)
    tz.set_default_dtype(cfg.dtype)
    params = init_params(cfg, bundle.n_features, bundle.n_classes, rng)
    opt = OptimState.for_config(cfg)
    stopper = EarlyStop(patience=cfg.patience)
    guard = _DivergenceGuard()
    report = TrainReport(seed=seed, config=cfg.to_dict())
    start = time.perf_counter()
    try:
        for epoch in range(cfg.max_epochs):
            order = rng.permutation(len(train_graphs))
            epoch_loss = 0.0
            for gi in order:
                g = train_graphs[gi]
                report.graph_access_log.append(f"train:{g.name}")
                loss, grads = _loss_and_grads(g, params, cfg, rng, True, None)
                adam_step(params, grads, opt)
                epoch_loss += loss
            epoch_loss /= len(train_graphs)
            guard.check(epoch_loss, epoch)
            for g in val_graphs:
                report.graph_access_log.append(f"val:{g.name}")
            val_f1, val_loss = _multi_graph_eval(val_graphs, params, cfg)
            report.epochs.append({"epoch": epoch, "train_loss": epoch_loss,
                                  "val_loss": val_loss, "val_acc": val_f1, "val_f1": val_f1})
            stopper.update(val_f1, epoch, params)
            if stopper.should_stop(epoch):
                break
    except FiniteError as e:
        raise DivergenceError(f"forward produced non-finite values: {e}") from e
    best = stopper.snapshot if stopper.snapshot is not None else params
    for g in test_graphs:
        report.graph_access_log.append(f"test:{g.name}")
    report.best_epoch = stopper.best_epoch
    report.best_val_metric = stopper.best
    test_f1, test_loss = _multi_graph_eval(test_graphs, best, cfg)
    report.test_metrics = {"test_micro_f1": test_f1, "test_loss": test_loss}
    report.wall_clock_sec = time.perf_counter() - start
    report.final_params = best
    return report


def train(bundle: DatasetBundle, cfg: RunConfig, seed: int) -> TrainReport:
    if bundle.task == "transductive":
        return train_transductive(bundle, cfg, seed)
    return train_inductive(bundle, cfg, seed)


def final_metric(report: TrainReport) -> float:
    tm = report.test_metrics
    return tm.get("test_acc", tm.get("test_micro_f1", 0.0))


def run_repeats(bundle: DatasetBundle, cfg: RunConfig, k: int, seed0: int,
                max_workers: int = 1) -> dict:
    """k independent seeded runs; returns mean and (population) std of the
    final test metric, aggregated in seed order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    seeds = list(range(seed0, seed0 + k))
    if max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            reports = list(pool.map(lambda s: train(bundle, cfg, s), seeds))
    else:
        reports = [train(bundle, cfg, s) for s in seeds]
    values = np.array([final_metric(r) for r in reports], dtype=np.float64)
    return {"k": k, "seeds": seeds, "values": values.tolist(),
            "mean": float(values.mean()), "std": float(values.std()),
            "metric": "test_acc" if bundle.task == "transductive" else "test_micro_f1"}
