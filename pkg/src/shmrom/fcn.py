"""Fully convolutional time-series classifier with hand-written backpropagation.

Three blocks of (same-padded 1-D convolution, temporal batch norm, ReLU),
global average pooling, a linear head and softmax. Arrays are laid out as
``(batch, time, channel)``.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

TINY = 1e-300  # floor for log arguments


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    epochs: int = 500
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    filters: tuple = (16, 32, 16)
    kernels: tuple = (8, 5, 3)
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3

    def __post_init__(self):
        self.filters = tuple(int(n) for n in self.filters)
        self.kernels = tuple(int(h) for h in self.kernels)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if len(self.filters) != len(self.kernels) or not self.filters:
            raise ValueError("filters and kernels must be non-empty and of equal length")
        if min(self.filters) < 1 or min(self.kernels) < 1:
            raise ValueError("filter counts and kernel sizes must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.bn_momentum < 1:
            raise ValueError("bn_momentum must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"], d["kernels"] = list(self.filters), list(self.kernels)
        return d


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------

def same_padding(H: int) -> tuple[int, int]:
    """Zero padding (left, right) keeping the length; even kernels pad one more on the left."""
    return H // 2, H - 1 - H // 2


def conv1d_forward(x, w, b):
    """Cross-correlation of ``x (B, L, Cin)`` with ``w (H, Cin, Cout)`` plus bias."""
    B, L, Cin = x.shape
    H, _, Cout = w.shape
    left, right = same_padding(H)
    if H > L + left + right:
        raise ValueError(f"kernel of length {H} exceeds the padded input")
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    cols = sliding_window_view(xp, H, axis=1).reshape(B * L, Cin * H)  # (.., Cin, H) order
    wm = w.transpose(1, 0, 2).reshape(Cin * H, Cout)
    y = (cols @ wm).reshape(B, L, Cout) + b
    return y, (cols, x.shape)


def conv1d_backward(dy, cache, w, need_dx=True):
    cols, (B, L, Cin) = cache
    H, _, Cout = w.shape
    dy2 = dy.reshape(B * L, Cout)
    dw = (cols.T @ dy2).reshape(Cin, H, Cout).transpose(1, 0, 2)
    db = dy2.sum(axis=0)
    dx = None
    if need_dx:
        wm = w.transpose(1, 0, 2).reshape(Cin * H, Cout)
        dcols = (dy2 @ wm.T).reshape(B, L, Cin, H)
        left, right = same_padding(H)
        dxp = np.zeros((B, L + left + right, Cin))
        for k in range(H):
            dxp[:, k:k + L, :] += dcols[:, :, :, k]
        dx = dxp[:, left:left + L, :]
    return dx, dw, db


def conv1d(u, w, b=None):
    """Single instance ``u (L, Cin)`` -> ``(L, Cout)``."""
    w = np.asarray(w, dtype=np.float64)
    b = np.zeros(w.shape[2]) if b is None else b
    return conv1d_forward(np.asarray(u, dtype=np.float64)[None], w, b)[0][0]


def batch_norm_forward(y, gamma, beta, running_mean, running_var, mode="train", momentum=0.99, eps=1e-3):
    """Per-channel normalization over batch and time.

    Returns ``(out, cache, (new_mean, new_var))``; running statistics are only
    updated in ``train`` mode.
    """
    if mode == "train":
        if y.shape[0] * y.shape[1] < 2:
            raise ValueError("batch norm needs more than one value per channel in train mode")
        mu = y.mean(axis=(0, 1))
        var = y.var(axis=(0, 1))
        new = (momentum * running_mean + (1.0 - momentum) * mu, momentum * running_var + (1.0 - momentum) * var)
    elif mode == "infer":
        mu, var = running_mean, running_var
        new = (running_mean, running_var)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (y - mu) * inv
    return gamma * xhat + beta, (xhat, inv), new


def batch_norm_backward(dout, cache, gamma):
    """Gradient through train-mode batch norm."""
    xhat, inv = cache
    n = dout.shape[0] * dout.shape[1]
    dgamma = (dout * xhat).sum(axis=(0, 1))
    dbeta = dout.sum(axis=(0, 1))
    dxhat = dout * gamma
    dx = (inv / n) * (n * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1)))
    return dx, dgamma, dbeta


def relu(y):
    return np.maximum(y, 0.0)


def gap(h):
    """Time average per channel: ``(B, L, C) -> (B, C)`` or ``(L, C) -> (C,)``."""
    return h.mean(axis=-2)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(target, probs) -> float:
    """Mean of ``-sum_g Z_g log p_g``; ``target`` is one-hot or integer labels."""
    p = np.atleast_2d(probs)
    t = np.asarray(target)
    if t.ndim == p.ndim:
        return float(-(np.atleast_2d(t) * np.log(np.maximum(p, TINY))).sum(axis=-1).mean())
    t = np.atleast_1d(t)
    return float(-np.log(np.maximum(p[np.arange(t.size), t], TINY)).mean())


def argmax_lowest(probs):
    """Class index of the largest probability; ties go to the lowest index."""
    return np.argmax(probs, axis=-1)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

@dataclass
class FcnModel:
    params: dict
    state: dict  # BN running statistics
    n_inputs: int
    n_classes: int
    config: TrainConfig
    mean: np.ndarray = None  # input standardization
    std: np.ndarray = None

    def __post_init__(self):
        if self.mean is None:
            self.mean = np.zeros(self.n_inputs)
        if self.std is None:
            self.std = np.ones(self.n_inputs)

    @property
    def n_blocks(self) -> int:
        return len(self.config.filters)

    def copy(self) -> "FcnModel":
        return copy.deepcopy(self)

    def standardize(self, U):
        return (np.asarray(U, dtype=np.float64) - self.mean) / self.std


def init_model(n_inputs: int, n_classes: int, config: TrainConfig, rng: np.random.Generator,
               mean=None, std=None) -> FcnModel:
    """Uniform fan-in scaled kernels (bound ``sqrt(6 / fan_in)``), zero biases, BN scale 1 shift 0."""
    params, state = {}, {}
    cin = n_inputs
    for k, (n, h) in enumerate(zip(config.filters, config.kernels), start=1):
        bound = np.sqrt(6.0 / (h * cin))
        params[f"conv{k}.w"] = rng.uniform(-bound, bound, size=(h, cin, n))
        params[f"conv{k}.b"] = np.zeros(n)
        params[f"bn{k}.gamma"] = np.ones(n)
        params[f"bn{k}.beta"] = np.zeros(n)
        state[f"bn{k}.mean"] = np.zeros(n)
        state[f"bn{k}.var"] = np.ones(n)
        cin = n
    bound = np.sqrt(6.0 / (cin + n_classes))
    params["head.w"] = rng.uniform(-bound, bound, size=(cin, n_classes))
    params["head.b"] = np.zeros(n_classes)
    return FcnModel(params=params, state=state, n_inputs=n_inputs, n_classes=n_classes, config=config,
                    mean=None if mean is None else np.asarray(mean, dtype=np.float64),
                    std=None if std is None else np.asarray(std, dtype=np.float64))


def _check(a, where):
    if not np.isfinite(a).all():
        raise TrainingError(f"non-finite activations in {where}")


def forward(model: FcnModel, X, mode="infer", update_stats=True, standardized=False):
    """Class probabilities for ``X (B, L, N0)`` (or one ``(L, N0)`` instance).

    Returns ``(probs, caches)``. In train mode the BN running statistics are
    updated unless ``update_stats`` is False.
    """
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.shape[2] != model.n_inputs:
        raise ValueError(f"expected {model.n_inputs} channels, got {X.shape[2]}")
    h = X if standardized else model.standardize(X)
    cfg, P, S = model.config, model.params, model.state
    caches = []
    for k in range(1, model.n_blocks + 1):
        y, ccache = conv1d_forward(h, P[f"conv{k}.w"], P[f"conv{k}.b"])
        z, bcache, (m, v) = batch_norm_forward(y, P[f"bn{k}.gamma"], P[f"bn{k}.beta"], S[f"bn{k}.mean"],
                                               S[f"bn{k}.var"], mode, cfg.bn_momentum, cfg.bn_eps)
        if mode == "train" and update_stats:
            S[f"bn{k}.mean"], S[f"bn{k}.var"] = m, v
        h = relu(z)
        _check(h, f"block {k}")
        caches.append((ccache, bcache, z))
    pooled = gap(h)
    logits = pooled @ P["head.w"] + P["head.b"]
    _check(logits, "head")
    probs = softmax(logits)
    caches.append((pooled, h.shape[1]))
    return (probs[0] if single else probs), caches


def backward(model: FcnModel, probs, labels, caches) -> dict:
    """Gradients of the mean batch cross-entropy w.r.t. every trainable tensor."""
    P = model.params
    B = probs.shape[0]
    pooled, L = caches[-1]
    d = probs.copy()
    d[np.arange(B), labels] -= 1.0
    d /= B
    grads = {"head.w": pooled.T @ d, "head.b": d.sum(axis=0)}
    dh = np.repeat((d @ P["head.w"].T)[:, None, :] / L, L, axis=1)
    for k in range(model.n_blocks, 0, -1):
        ccache, bcache, z = caches[k - 1]
        dz = dh * (z > 0)
        dy, grads[f"bn{k}.gamma"], grads[f"bn{k}.beta"] = batch_norm_backward(dz, bcache, P[f"bn{k}.gamma"])
        dh, grads[f"conv{k}.w"], grads[f"conv{k}.b"] = conv1d_backward(dy, ccache, P[f"conv{k}.w"], need_dx=k > 1)
    return grads


def loss_and_grads(model: FcnModel, X, labels, update_stats=True, standardized=False):
    labels = np.asarray(labels)
    probs, caches = forward(model, X, "train", update_stats=update_stats, standardized=standardized)
    loss = cross_entropy(labels, probs)
    return loss, backward(model, probs, labels, caches), probs


def predict_proba(model: FcnModel, U, batch_size: int = 256) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 2:
        return forward(model, U, "infer")[0]
    out = [forward(model, U[i:i + batch_size], "infer")[0] for i in range(0, len(U), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.n_classes))


def predict(model: FcnModel, U, batch_size: int = 256):
    """Predicted class(es); ties resolve to the lowest class index."""
    return argmax_lowest(predict_proba(model, U, batch_size))


# ---------------------------------------------------------------------------
# Optimizer and training loop
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> None:
    """Bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps_adam
    c1, c2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class TrainHistory:
    iter_loss: list = field(default_factory=list)
    iter_accuracy: list = field(default_factory=list)
    iter_epoch: list = field(default_factory=list)
    epoch_loss: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = 0

    def to_arrays(self) -> dict:
        return {k: np.asarray(v, dtype=np.float64) for k, v in asdict(self).items() if isinstance(v, list)}


def evaluate_loss(model: FcnModel, X, y, batch_size: int = 256) -> tuple[float, float]:
    if len(X) == 0:
        return float("nan"), float("nan")
    probs = predict_proba(model, X, batch_size)
    return cross_entropy(y, probs), float(np.mean(argmax_lowest(probs) == y))


def train(X_train, y_train, X_val, y_val, config: TrainConfig, n_classes: int, mean=None, std=None,
          progress: Optional[Callable[[int, TrainHistory], None]] = None) -> tuple[FcnModel, TrainHistory]:
    """Mini-batch Adam training; the best-validation-accuracy weights are returned.

    Ties in validation accuracy are broken by the lower validation loss; the
    earlier epoch wins a complete tie. Without a validation split the final
    weights are kept.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    if X_train.ndim != 3 or len(X_train) == 0:
        raise ValueError("training inputs must be a non-empty (I, L, N0) array")
    if y_train.min() < 0 or y_train.max() >= n_classes:
        raise ValueError("labels outside 0..n_classes-1")
    rng = np.random.default_rng(config.seed)
    model = init_model(X_train.shape[2], n_classes, config, rng, mean, std)
    Xs = model.standardize(X_train)
    has_val = X_val is not None and len(X_val) > 0
    opt = AdamState()
    hist = TrainHistory()
    best, best_key = None, None
    n = len(Xs)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        losses, hits = [], 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            if len(idx) * Xs.shape[1] < 2:
                continue
            loss, grads, probs = loss_and_grads(model, Xs[idx], y_train[idx], standardized=True)
            if not np.isfinite(loss):
                raise TrainingError(f"loss diverged at iteration {opt.t + 1}")
            adam_step(model.params, grads, opt, config)
            acc = float(np.mean(argmax_lowest(probs) == y_train[idx]))
            hist.iter_loss.append(loss)
            hist.iter_accuracy.append(acc)
            hist.iter_epoch.append(epoch)
            losses.append(loss * len(idx))
            hits += acc * len(idx)
        hist.epoch_loss.append(float(np.sum(losses) / n))
        hist.epoch_accuracy.append(float(hits / n))
        if has_val:
            vl, va = evaluate_loss(model, X_val, y_val)
            hist.val_loss.append(vl)
            hist.val_accuracy.append(va)
            key = (va, -vl)
            if best_key is None or key > best_key:
                best_key, best = key, model.copy()
                hist.best_epoch = epoch
        if progress:
            progress(epoch, hist)
    if best is None:
        best = model
        hist.best_epoch = config.epochs
    return best, hist


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------

def numerical_gradients(model: FcnModel, X, labels, step: float = 1e-5) -> dict:
    """Central finite differences of the train-mode batch loss (running stats frozen)."""
    out = {}
    for name, p in model.params.items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp = cross_entropy(labels, forward(model, X, "train", update_stats=False)[0])
            flat[i] = orig - step
            lm = cross_entropy(labels, forward(model, X, "train", update_stats=False)[0])
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * step)
        out[name] = g
    return out


def gradient_check(model: FcnModel, X, labels, step: float = 1e-5, floor: float = 1e-6) -> dict:
    """Max relative error per tensor, ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps components whose exact gradient vanishes (e.g. conv
    biases ahead of batch norm) from dividing round-off by round-off.
    """
    _, analytic, _ = loss_and_grads(model, X, labels, update_stats=False)
    numeric = numerical_gradients(model, X, labels, step)
    errs = {}
    for name in analytic:
        a, n = analytic[name], numeric[name]
        errs[name] = float((np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)).max())
    return errs


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def model_arrays(model: FcnModel) -> dict:
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    arrays.update({f"state/{k}": v for k, v in model.state.items()})
    arrays["std/mean"], arrays["std/std"] = model.mean, model.std
    return arrays


def model_from_arrays(arrays: dict, meta: dict) -> FcnModel:
    cfg = TrainConfig(**meta["train_config"])
    params = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("param/")}
    state = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("state/")}
    return FcnModel(params=params, state=state, n_inputs=int(meta["n_inputs"]), n_classes=int(meta["n_classes"]),
                    config=cfg, mean=arrays["std/mean"], std=arrays["std/std"])
