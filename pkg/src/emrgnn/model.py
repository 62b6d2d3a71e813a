"""Decoupled classifier: feature transform, EnMP stack, linear read-out.

    logits = g_theta( EnMP^K( f(X; W) ) )

``f`` is one affine layer (ReLU or linear) with dropout in training mode, and
``g_theta`` is one affine layer. The relation coefficients are computed during
the forward pass and treated as constants by :func:`backward`; gradients flow
through the propagation recursion via its adjoint.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .enmp import EnmpHyper, PropagationTrace, gcn_averaged, propagate, propagate_adjoint
from .errors import NumericalError, ValidationError
from .graph import NormalizedRelation, RelationalGraph, normalize

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
PROPAGATIONS = ("enmp", "gcn")
ACTIVATIONS = ("relu", "linear")


@dataclass
class ModelParams:
    W: np.ndarray
    theta: np.ndarray
    bW: np.ndarray | None = None
    btheta: np.ndarray | None = None

    def named(self) -> dict[str, np.ndarray]:
        out = {"W": self.W, "theta": self.theta}
        if self.bW is not None:
            out["bW"] = self.bW
        if self.btheta is not None:
            out["btheta"] = self.btheta
        return out

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.named().items()})

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W.shape[0], self.W.shape[1], self.theta.shape[1]


def init_params(d_in: int, d_hid: int, d_out: int, rng: np.random.Generator, bias: bool = True) -> ModelParams:
    """Glorot-uniform weights, zero biases."""

    def glorot(a, b):
        lim = np.sqrt(6.0 / (a + b))
        return rng.uniform(-lim, lim, size=(a, b))

    W = glorot(d_in, d_hid)
    theta = glorot(d_hid, d_out)
    if bias:
        return ModelParams(W, theta, np.zeros(d_hid), np.zeros(d_out))
    return ModelParams(W, theta)


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    dropout_rate: float = 0.5
    seed: int = 0
    hidden: int = 64
    activation: str = "relu"
    bias: bool = True
    propagation: str = "enmp"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    early_stop_patience: int = 100
    hyper: EnmpHyper = field(default_factory=EnmpHyper)

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise ValidationError(f"train.epochs must be >= 1, got {self.epochs}")
        for name in ("learning_rate", "weight_decay", "dropout_rate"):
            if getattr(self, name) < 0:
                raise ValidationError(f"train.{name} must be >= 0")
        if not self.dropout_rate < 1:
            raise ValidationError("train.dropout_rate must be < 1")
        if int(self.hidden) < 1:
            raise ValidationError("train.hidden must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"train.activation must be one of {ACTIVATIONS}")
        if self.propagation not in PROPAGATIONS:
            raise ValidationError(f"train.propagation must be one of {PROPAGATIONS}")


@dataclass
class Metrics:
    accuracy: float
    macro_recall: float
    loss: float


@dataclass
class ForwardCache:
    X: np.ndarray
    pre: np.ndarray
    drop: np.ndarray | None
    H: np.ndarray
    trace: PropagationTrace
    logits: np.ndarray
    params: ModelParams
    rels: Sequence[NormalizedRelation]
    hyper: EnmpHyper
    activation: str
    propagation: str
    train_mode: bool


def _rels(graph) -> list[NormalizedRelation]:
    if isinstance(graph, RelationalGraph):
        return normalize(graph)
    return list(graph)


def _gcn_trace(H, rels, K) -> PropagationTrace:
    R = len(rels)
    zs = [H]
    for _ in range(K):
        zs.append(gcn_averaged(zs[-1], rels))
    uniform = np.full(R, 1.0 / R)
    return PropagationTrace(zs, [uniform.copy() for _ in range(K)], [np.full(R, np.nan) for _ in range(K)])


def forward(X, graph, params: ModelParams, hyper: EnmpHyper, train_mode: bool = False,
            seed=None, dropout: float = 0.0, activation: str = "relu",
            propagation: str = "enmp") -> tuple[np.ndarray, PropagationTrace, ForwardCache]:
    """Compute logits.

    ``graph`` is a :class:`RelationalGraph` or an already normalised relation
    list. ``seed`` (int or Generator) draws the dropout mask when
    ``train_mode`` is set. ``propagation="gcn"`` swaps the EnMP stack for ``K``
    plain averaged-graph steps (the baseline).
    """
    rels = _rels(graph)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != rels[0].n:
        raise ValidationError(f"X has shape {X.shape}; expected ({rels[0].n}, d_in)")
    if X.shape[1] != params.W.shape[0]:
        raise ValidationError(f"X has {X.shape[1]} columns but W expects {params.W.shape[0]}")

    pre = X @ params.W
    if params.bW is not None:
        pre += params.bW
    act = np.maximum(pre, 0.0) if activation == "relu" else pre
    drop = None
    if train_mode and dropout > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        drop = (rng.random(act.shape) >= dropout) / (1.0 - dropout)
        H = act * drop
    else:
        H = act
    if not np.all(np.isfinite(H)):
        raise NumericalError("non-finite activations in the feature transform")

    if propagation == "gcn":
        trace = _gcn_trace(np.ascontiguousarray(H), rels, int(hyper.K))
    else:
        trace = propagate(H, rels, hyper)
    Z = trace.output
    logits = Z @ params.theta
    if params.btheta is not None:
        logits += params.btheta
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits")
    cache = ForwardCache(X, pre, drop, H, trace, logits, params, rels, hyper, activation, propagation, train_mode)
    return logits, trace, cache


def _mask_index(mask, n: int) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        if mask.shape != (n,):
            raise ValidationError("boolean mask must have one entry per node")
        idx = np.flatnonzero(mask)
    else:
        idx = mask.astype(np.int64).ravel()
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValidationError("mask index out of range")
    if idx.size == 0:
        raise ValidationError("mask selects no nodes")
    return idx


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _masked_labels(labels, idx, C) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)[idx]
    if y.size and (y.min() < 0 or y.max() >= C):
        raise ValidationError(f"labels on masked nodes must lie in [0, {C})")
    return y


def loss(logits, labels, mask) -> float:
    """Mean softmax cross-entropy over the masked nodes."""
    logits = np.asarray(logits, dtype=np.float64)
    idx = _mask_index(mask, logits.shape[0])
    y = _masked_labels(labels, idx, logits.shape[1])
    lp = _log_softmax(logits[idx])
    return float(-lp[np.arange(idx.size), y].mean())


def backward(cache: ForwardCache, labels, mask) -> ModelParams:
    """Exact gradients of :func:`loss` w.r.t. the trainable weights."""
    if cache is None or cache.logits is None:
        raise ValidationError("backward needs the cache of a forward pass")
    params = cache.params
    logits = cache.logits
    n, C = logits.shape
    idx = _mask_index(mask, n)
    y = _masked_labels(labels, idx, C)

    dlogits = np.zeros_like(logits)
    p = np.exp(_log_softmax(logits[idx]))
    p[np.arange(idx.size), y] -= 1.0
    dlogits[idx] = p / idx.size

    Z = cache.trace.output
    dtheta = Z.T @ dlogits
    dbtheta = dlogits.sum(axis=0) if params.btheta is not None else None
    dZ = dlogits @ params.theta.T

    if cache.propagation == "gcn":
        dH = np.ascontiguousarray(dZ)
        for _ in range(cache.trace.K):
            dH = gcn_averaged(dH, cache.rels)
    else:
        dH = propagate_adjoint(dZ, cache.rels, cache.trace.mu_per_layer, cache.hyper.lambda1)

    dact = dH * cache.drop if cache.drop is not None else dH
    dpre = dact * (cache.pre > 0) if cache.activation == "relu" else dact
    dW = cache.X.T @ dpre
    dbW = dpre.sum(axis=0) if params.bW is not None else None
    return ModelParams(dW, dtheta, dbW, dbtheta)


def predict(logits) -> np.ndarray:
    return np.asarray(logits).argmax(axis=1)


def metrics(logits, labels, mask) -> Metrics:
    logits = np.asarray(logits)
    idx = _mask_index(mask, logits.shape[0])
    y = _masked_labels(labels, idx, logits.shape[1])
    pred = predict(logits[idx])
    recalls = [np.mean(pred[y == c] == c) for c in np.unique(y)]
    return Metrics(float(np.mean(pred == y)), float(np.mean(recalls)), loss(logits, labels, idx))


def parameter_count(params: ModelParams, hyper: EnmpHyper | None = None) -> int:
    """Number of trainable scalars, ``|W| + |theta|`` (biases included).

    The K x R relation coefficients are fitted in the forward pass and are not
    counted; see :func:`coefficient_count`.
    """
    return int(sum(a.size for a in params.named().values()))


def coefficient_count(hyper: EnmpHyper, num_relations: int) -> int:
    return int(hyper.K) * int(num_relations)


def rgcn_parameter_count(d: int, K: int, num_relations: int, bases: int) -> int:
    """Basis-decomposed relational GCN with K layers of width d: ``B K d^2 + B K R``."""
    return bases * K * d * d + bases * K * num_relations


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    trace: PropagationTrace
    best_epoch: int
    metrics: dict[str, Metrics]
    logits: np.ndarray


class _Adam:
    def __init__(self, params: ModelParams, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.named().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.named().items()}

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        c = self.cfg
        self.t += 1
        gnamed = grads.named()
        for name, p in params.named().items():
            g = gnamed[name]
            if c.weight_decay and name in ("W", "theta"):
                g = g + c.weight_decay * p
            self.m[name] = c.beta1 * self.m[name] + (1 - c.beta1) * g
            self.v[name] = c.beta2 * self.v[name] + (1 - c.beta2) * g * g
            mhat = self.m[name] / (1 - c.beta1 ** self.t)
            vhat = self.v[name] / (1 - c.beta2 ** self.t)
            p -= c.learning_rate * mhat / (np.sqrt(vhat) + c.eps)


def _split_index(splits, name: str) -> np.ndarray:
    idx = splits[name] if isinstance(splits, Mapping) else getattr(splits, name)
    return np.asarray(idx, dtype=np.int64)


def train(X, graph, labels, splits, config: TrainConfig | None = None) -> TrainResult:
    """Full-batch training; keeps the epoch with the best validation accuracy.

    Validation ties are broken by lower validation loss. Deterministic for a
    fixed ``config.seed``.
    """
    config = config or TrainConfig()
    rels = _rels(graph)
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    tr, va, te = (_split_index(splits, k) for k in ("train", "val", "test"))
    if len(set(tr) & set(va)) or len(set(tr) & set(te)) or len(set(va) & set(te)):
        raise ValidationError("train/val/test splits overlap")
    known = labels[labels >= 0]
    if known.size == 0:
        raise ValidationError("no labelled nodes")
    C = int(known.max()) + 1

    rng = np.random.default_rng(config.seed)
    params = init_params(X.shape[1], int(config.hidden), C, rng, bias=config.bias)
    opt = _Adam(params, config)
    kw = dict(activation=config.activation, propagation=config.propagation)

    history: list[EpochRecord] = []
    best = (-1.0, np.inf)
    best_params, best_epoch, stale = params.copy(), 0, 0
    for epoch in range(1, int(config.epochs) + 1):
        logits, _, cache = forward(X, rels, params, config.hyper, train_mode=True, seed=rng,
                                   dropout=config.dropout_rate, **kw)
        train_loss = loss(logits, labels, tr)
        if not np.isfinite(train_loss):
            raise NumericalError(f"training loss became non-finite at epoch {epoch}")
        opt.step(params, backward(cache, labels, tr))

        eval_logits, _, _ = forward(X, rels, params, config.hyper, **kw)
        vm = metrics(eval_logits, labels, va)
        history.append(EpochRecord(epoch, train_loss, vm.loss, vm.accuracy))
        if (vm.accuracy, -vm.loss) > (best[0], -best[1]):
            best, best_params, best_epoch, stale = (vm.accuracy, vm.loss), params.copy(), epoch, 0
        else:
            stale += 1
            if config.early_stop_patience and stale >= config.early_stop_patience:
                log.debug("early stop at epoch %d (best %d)", epoch, best_epoch)
                break

    logits, trace, _ = forward(X, rels, best_params, config.hyper, **kw)
    result_metrics = {name: metrics(logits, labels, idx) for name, idx in (("train", tr), ("val", va), ("test", te))}
    return TrainResult(best_params, history, trace, best_epoch, result_metrics, logits)


def evaluate(X, graph, labels, mask, params: ModelParams, config: TrainConfig) -> Metrics:
    logits, _, _ = forward(X, graph, params, config.hyper, activation=config.activation,
                           propagation=config.propagation)
    return metrics(logits, labels, mask)


def save_checkpoint(path, params: ModelParams, config_echo: Mapping | None = None) -> None:
    """Write an ``.npz`` container: format version, weights, config echo as JSON."""
    arrays = {k: np.ascontiguousarray(v) for k, v in params.named().items()}
    echo = json.dumps(dict(config_echo or {}), sort_keys=True, default=str)
    with Path(path).open("wb") as fh:
        np.savez(fh, format_version=np.array(CHECKPOINT_VERSION), config_json=np.array(echo), **arrays)


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {version}")
        params = ModelParams(z["W"], z["theta"], z["bW"] if "bW" in z else None,
                             z["btheta"] if "btheta" in z else None)
        echo = json.loads(str(z["config_json"]))
    return params, echo


def config_echo(config: TrainConfig) -> dict:
    """Flat, JSON-friendly view of a :class:`TrainConfig`."""
    d = asdict(replace(config))
    hyper = d.pop("hyper")
    rcl = hyper.pop("rcl")
    if hyper.get("fixed_mu") is not None:
        hyper["fixed_mu"] = np.asarray(hyper["fixed_mu"]).tolist()
    return {"train": d, "hyper": hyper, "rcl": rcl}
