"""Loss, optimisers, metrics, the training loop, checkpoints and the ablation harness."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import tensor as T
from .config import RunConfig, TrainConfig
from .dataio import Dataset, export_csv
from .errors import ConfigError, DataError, LabelError, NumericalError, ShapeError
from .model import ABLATIONS, SteamModel, prepare_inputs
from .tensor import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "steam-eeg-checkpoint"
CHECKPOINT_VERSION = 1


# -- loss ------------------------------------------------------------------
def cross_entropy(logits, labels):
    """Mean of -log softmax(logits)[label] over the batch (a single (K,) row is allowed)."""
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    labels = np.atleast_1d(np.asarray(labels))
    if logits.ndim == 1:
        logits = T.reshape(logits, (1, logits.shape[0]))
    bsz, k = logits.shape
    if k < 2:
        raise ShapeError("cross entropy needs at least 2 logits")
    if labels.shape != (bsz,):
        raise ShapeError(f"{labels.shape[0]} labels for {bsz} rows")
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= k:
        raise LabelError(f"labels must be integers in [0, {k})")
    picked = T.log_softmax(logits, axis=1)[np.arange(bsz), labels]
    return -picked.mean()


# -- optimisers ------------------------------------------------------------
class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = _grad_of(p)
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params, lr=1e-2, momentum=0.0):
        self.params = list(params)
        self.lr, self.momentum = lr, momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, vel in zip(self.params, self.velocity):
            g = _grad_of(p)
            vel *= self.momentum
            vel += g
            p.data = p.data - self.lr * vel


def _grad_of(p):
    if p.grad is None:
        return np.zeros_like(p.data)
    if p.grad.shape != p.data.shape:
        raise ShapeError(f"gradient shape {p.grad.shape} does not match parameter {p.data.shape}")
    return p.grad


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    return SGD(params, cfg.lr, cfg.momentum)


# -- metrics ---------------------------------------------------------------
@dataclass
class Metrics:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray
    f1_average: str = "macro"
    score_f1: float = 0.0

    def rows(self):
        k = len(self.f1)
        names = [f"class{i}" for i in range(k)] + ["macro"]
        return {
            "class": names,
            "precision": list(self.precision) + [self.macro_precision],
            "recall": list(self.recall) + [self.macro_recall],
            "f1": list(self.f1) + [self.macro_f1],
            "support": [int(s) for s in self.confusion.sum(axis=1)] + [int(self.confusion.sum())],
        }


def confusion_matrix(y_true, y_pred, classes) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ShapeError("prediction and label counts differ")
    conf = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    return conf


def _ratio(num, den):
    return Fraction(int(num), int(den)) if den else Fraction(0)


def exact_scores(confusion):
    """Per-class precision, recall, F1 as Fractions; undefined ratios count as 0."""
    conf = np.asarray(confusion, dtype=np.int64)
    tp = np.diag(conf)
    predicted = conf.sum(axis=0)
    support = conf.sum(axis=1)
    prec = [_ratio(tp[i], predicted[i]) for i in range(len(tp))]
    rec = [_ratio(tp[i], support[i]) for i in range(len(tp))]
    f1 = [2 * p * r / (p + r) if p + r else Fraction(0) for p, r in zip(prec, rec)]
    return prec, rec, f1


def metrics_from_confusion(confusion, f1_average="macro") -> Metrics:
    conf = np.asarray(confusion, dtype=np.int64)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ShapeError("confusion matrix must be square")
    total = int(conf.sum())
    if total == 0:
        raise DataError("cannot score an empty set")
    missing = np.flatnonzero(conf.sum(axis=1) == 0)
    if missing.size:
        warnings.warn(f"classes {missing.tolist()} have no support; their F1 counts as 0", RuntimeWarning)
    prec, rec, f1 = exact_scores(conf)
    k = conf.shape[0]
    macro_p = sum(prec) / k
    macro_r = sum(rec) / k
    macro_f1 = sum(f1) / k
    accuracy = _ratio(np.trace(conf), total)
    if f1_average == "macro":
        score = macro_f1
    elif f1_average == "micro":
        score = accuracy
    elif f1_average == "binary":
        score = f1[1] if k > 1 else f1[0]
    else:
        raise ConfigError(f"unknown f1 average {f1_average!r}")
    return Metrics(float(accuracy), np.array([float(p) for p in prec]), np.array([float(r) for r in rec]),
                   np.array([float(x) for x in f1]), float(macro_p), float(macro_r), float(macro_f1), conf,
                   f1_average, float(score))


def compute_metrics(y_true, y_pred, classes, f1_average="macro") -> Metrics:
    return metrics_from_confusion(confusion_matrix(y_true, y_pred, classes), f1_average)


# -- data handling ---------------------------------------------------------
def stratified_split(labels, fraction, seed):
    """Seeded per-class split; returns (train_idx, val_idx) in ascending order."""
    labels = np.asarray(labels)
    if fraction <= 0:
        return np.arange(len(labels)), np.array([], dtype=int)
    rng = T.param_rng(seed, "split")
    val = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n_val = int(round(fraction * idx.size))
        if idx.size >= 2:
            n_val = min(max(n_val, 1), idx.size - 1)
        else:
            n_val = 0
        val.extend(rng.permutation(idx)[:n_val].tolist())
    val = np.array(sorted(val), dtype=int)
    train = np.setdiff1d(np.arange(len(labels)), val)
    return train, val


def _batches(n, size):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def predict_logits(model: SteamModel, inputs, batch_size=64) -> np.ndarray:
    model.eval()
    out = []
    with T.no_grad():
        for s, e in _batches(len(inputs), batch_size):
            out.append(model(inputs[s:e]).data)
    return np.concatenate(out) if out else np.zeros((0, model.classes))


def _loss_and_accuracy(logits, labels):
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    acc = float(np.mean(logits.argmax(axis=1) == labels))
    return loss, acc


# -- training --------------------------------------------------------------
@dataclass
class FitResult:
    model: SteamModel
    history: list
    best_epoch: int
    beta: float | None
    beta_scores: dict = field(default_factory=dict)
    config: RunConfig | None = None
    class_names: list = field(default_factory=list)


def _train_once(inputs, labels, train_idx, val_idx, shape, config: RunConfig, beta):
    tc = config.train
    channels, length, classes = shape
    model = SteamModel(channels, length, classes, config.net, config.mtf, tc.ablation, tc.seed)
    if beta is not None:
        model.set_beta(beta)
    opt = make_optimizer(model.parameters(), tc)
    history = []
    best = None
    stale = 0
    for epoch in range(1, tc.epochs + 1):
        model.train()
        order = T.param_rng(tc.seed, f"shuffle.{epoch}").permutation(train_idx)
        total_loss, correct = 0.0, 0
        for b, (s, e) in enumerate(_batches(order.size, tc.batch_size)):
            idx = order[s:e]
            try:
                logits = model(inputs[idx])
                loss = cross_entropy(logits, labels[idx])
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} batch {b}: {exc}") from None
            if not np.isfinite(loss.data):
                raise NumericalError(f"epoch {epoch} batch {b}: non-finite loss")
            model.zero_grad()
            loss.backward()
            opt.step()
            total_loss += float(loss.data) * idx.size
            correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
        row = {"epoch": epoch, "train_loss": total_loss / order.size, "train_accuracy": correct / order.size}
        if val_idx.size:
            row["val_loss"], row["val_accuracy"] = _loss_and_accuracy(
                predict_logits(model, inputs[val_idx], tc.batch_size), labels[val_idx])
        history.append(row)
        # monitored on validation when there is one, else on the training pass
        key = (row["val_accuracy"], -row["val_loss"]) if val_idx.size else (row["train_accuracy"], -row["train_loss"])
        # patience counts epochs without an accuracy gain; the kept weights
        # are the best by accuracy with loss as the tie-break
        stale = 0 if best is None or key[0] > best[0][0] else stale + 1
        if best is None or key > best[0]:
            best = (key, epoch, model.state_dict())
        log.info("epoch %d %s", epoch, row)
        if stale >= tc.patience:
            break
    model.load_state_dict(best[2])
    return model, history, best[1], best[0]


def fit(dataset: Dataset, config: RunConfig = None, inputs=None) -> FitResult:
    """Train on ``dataset`` (the training split). ``inputs`` may hold precomputed model inputs."""
    config = config or RunConfig()
    tc = config.train
    if len(dataset) == 0:
        raise DataError("training set is empty")
    labels = dataset.labels
    if np.unique(labels).size < 2:
        raise DataError("training labels hold fewer than two classes")
    if inputs is None:
        inputs = prepare_inputs(dataset, config.ssa, tc.ablation, tc.normalize)
    shape = (dataset.channel_count, inputs.shape[-1], dataset.class_count)
    train_idx, val_idx = stratified_split(labels, tc.val_fraction, tc.seed)
    grid = [None]
    if "no_mtf" not in tc.ablation:
        grid = list(config.mtf.beta_grid) if (tc.beta_search and val_idx.size) else [config.mtf.beta]
    runs = {}
    for beta in grid:
        runs[beta] = _train_once(inputs, labels, train_idx, val_idx, shape, config, beta)
    # best validation key wins; ties keep the earlier grid entry
    chosen = grid[0]
    for beta in grid[1:]:
        if runs[beta][3] > runs[chosen][3]:
            chosen = beta
    model, history, best_epoch, _ = runs[chosen]
    scores = {str(b): runs[b][3][0] for b in grid if b is not None}
    return FitResult(model, history, best_epoch, chosen, scores, config, list(dataset.class_names))


def evaluate(model: SteamModel, dataset: Dataset, config: RunConfig = None, inputs=None) -> Metrics:
    config = config or RunConfig()
    if len(dataset) == 0:
        raise DataError("test set is empty")
    if dataset.class_count != model.classes:
        raise ShapeError(f"dataset has {dataset.class_count} classes, model {model.classes}")
    if inputs is None:
        inputs = prepare_inputs(dataset, config.ssa, model.ablation, config.train.normalize)
    logits = predict_logits(model, inputs, config.train.batch_size)
    return compute_metrics(dataset.labels, logits.argmax(axis=1), model.classes, config.train.f1_average)


def majority_baseline(train: Dataset, test: Dataset) -> float:
    counts = np.bincount(train.labels, minlength=train.class_count)
    return float(np.mean(test.labels == int(np.argmax(counts))))


# -- checkpoints -----------------------------------------------------------
def checkpoint_dict(result: FitResult) -> dict:
    model = result.model
    # the output directory is a property of the run, not the model; leaving it
    # out keeps checkpoints byte-identical across output locations
    config = (result.config or RunConfig()).to_dict()
    config.pop("out")
    params = {name: {"shape": list(v.shape), "values": v.ravel().tolist()}
              for name, v in model.state_dict().items()}
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": {"channels": model.channels, "length": model.length, "classes": model.classes,
                  "ablation": sorted(model.ablation), "beta": result.beta,
                  "class_names": list(result.class_names), "best_epoch": result.best_epoch},
        "config": config,
        "params": params,
    }


def save_checkpoint(result: FitResult, path) -> None:
    with open(path, "w", encoding="utf8") as fh:
        json.dump(checkpoint_dict(result), fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Return (model, config, meta) from a checkpoint file."""
    with open(path, encoding="utf8") as fh:
        data = json.load(fh)
    if data.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not a checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {data.get('version')}")
    meta = data["model"]
    config = RunConfig.from_dict(data["config"])
    if meta["beta"] is not None:
        config.mtf = replace(config.mtf, beta=meta["beta"])
    model = SteamModel(meta["channels"], meta["length"], meta["classes"], config.net, config.mtf,
                       meta["ablation"], config.train.seed)
    state = {name: np.asarray(entry["values"], dtype=float).reshape(entry["shape"])
             for name, entry in data["params"].items()}
    model.load_state_dict(state)
    return model, config, meta


def history_table(history) -> dict:
    keys = list(history[0]) if history else ["epoch"]
    return {k: [row.get(k, float("nan")) for row in history] for k in keys}


# -- ablation --------------------------------------------------------------
VARIANTS = ("full",) + ABLATIONS


def ablate(train: Dataset, test: Dataset, config: RunConfig = None, name=None, path=None) -> dict:
    """Train and score the full model and each single-component removal.

    Returns a table with columns dataset, variant, accuracy, delta where delta
    is the accuracy change relative to the full model.
    """
    config = config or RunConfig()
    base = set(config.train.ablation)
    if base:
        raise ConfigError("ablate expects a base configuration without ablations")
    name = name or train.name or "dataset"
    accuracies = {}
    for variant in VARIANTS:
        abl = () if variant == "full" else (variant,)
        cfg = replace(config, train=replace(config.train, ablation=abl))
        result = fit(train, cfg)
        accuracies[variant] = evaluate(result.model, test, cfg).accuracy
        log.info("ablation %s accuracy %.4f", variant, accuracies[variant])
    full = accuracies["full"]
    table = {
        "dataset": [name] * len(VARIANTS),
        "variant": list(VARIANTS),
        "accuracy": [accuracies[v] for v in VARIANTS],
        "delta": [accuracies[v] - full for v in VARIANTS],
    }
    if path is not None:
        export_csv(table, path)
    return table
