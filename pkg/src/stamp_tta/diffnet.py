"""Small dense classifier with batch norm and hand-written reverse-mode gradients.

Architecture is input -> (Linear -> BatchNorm -> ReLU) per hidden layer ->
Linear head. Everything runs in float64. Two forward modes exist: SOURCE_STATS
normalizes with the stored running statistics (a pure, row-independent
function), BATCH_STATS normalizes with the statistics of the current batch and
optionally folds them into the running buffers. Gradients are computed by an
explicit backward pass seeded with a logit-space gradient, so the adaptation
losses can stay autodiff-free.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import losses
from .errors import ConfigError, NumericalError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ForwardMode(Enum):
    SOURCE_STATS = "source_stats"
    BATCH_STATS = "batch_stats"


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    bn: BatchNorm | None = None  # present on hidden layers, absent on the head


@dataclass
class Model:
    input_dim: int
    num_classes: int
    layers: list[Layer] = field(default_factory=list)

    @property
    def hidden_sizes(self):
        return tuple(layer.weight.shape[1] for layer in self.layers[:-1])


def init_model(input_dim, hidden_sizes, num_classes, seed):
    """He-initialized MLP; BN starts at identity with zeroed running mean, unit var."""
    if input_dim < 1:
        raise ConfigError("input_dim must be >= 1")
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    hidden_sizes = tuple(int(h) for h in hidden_sizes)
    if len(hidden_sizes) == 0:
        raise ConfigError("at least one hidden layer is required")
    if any(h < 1 for h in hidden_sizes):
        raise ConfigError("zero-width layer in hidden_sizes")
    rng = np.random.default_rng(seed)
    sizes = (input_dim,) + hidden_sizes + (num_classes,)
    layers = []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        bias = np.zeros(fan_out)
        bn = None
        if i < len(sizes) - 2:  # no normalization on the classification head
            bn = BatchNorm(
                gamma=np.ones(fan_out),
                beta=np.zeros(fan_out),
                running_mean=np.zeros(fan_out),
                running_var=np.ones(fan_out),
            )
        layers.append(Layer(weight=weight, bias=bias, bn=bn))
    return Model(input_dim=input_dim, num_classes=num_classes, layers=layers)


@dataclass
class _LayerCache:
    inputs: np.ndarray
    pre_bn: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None  # sqrt(var + eps) actually used to normalize
    x_hat: np.ndarray | None = None
    relu_mask: np.ndarray | None = None


@dataclass
class ForwardCache:
    mode: ForwardMode
    layers: list[_LayerCache]
    logits: np.ndarray


def forward_cached(model, inputs, mode, update_stats=False):
    """Run the network; returns (probability matrix, cache for backward).

    BATCH_STATS requires at least two rows (the batch variance must be
    defined) and touches the running buffers only when update_stats is set,
    using the unbiased variance for the running update and the biased one for
    normalization. SOURCE_STATS never mutates the model.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("inputs must be a (batch, features) matrix")
    if x.shape[1] != model.input_dim:
        raise ValueError(
            f"input has {x.shape[1]} features, model expects {model.input_dim}"
        )
    if mode is ForwardMode.BATCH_STATS and x.shape[0] < 2:
        raise ValueError("BATCH_STATS mode needs a batch of size >= 2")
    if mode is ForwardMode.SOURCE_STATS and update_stats:
        raise ValueError("running statistics can only be updated in BATCH_STATS mode")

    caches = []
    a = x
    for layer in model.layers[:-1]:
        cache = _LayerCache(inputs=a)
        z = a @ layer.weight + layer.bias
        bn = layer.bn
        cache.pre_bn = z
        if mode is ForwardMode.BATCH_STATS:
            mean = z.mean(axis=0)
            var = z.var(axis=0)  # biased, used for normalization
            if update_stats:
                m = z.shape[0]
                unbiased = var * m / (m - 1)
                bn.running_mean = (1 - bn.momentum) * bn.running_mean + bn.momentum * mean
                bn.running_var = (1 - bn.momentum) * bn.running_var + bn.momentum * unbiased
        else:
            mean = bn.running_mean
            var = bn.running_var
        std = np.sqrt(var + bn.eps)
        x_hat = (z - mean) / std
        y = bn.gamma * x_hat + bn.beta
        cache.mean, cache.std, cache.x_hat = mean, std, x_hat
        cache.relu_mask = y > 0
        a = np.where(cache.relu_mask, y, 0.0)
        caches.append(cache)

    head = model.layers[-1]
    caches.append(_LayerCache(inputs=a))
    logits = a @ head.weight + head.bias
    probs = losses.softmax(logits)
    return probs, ForwardCache(mode=mode, layers=caches, logits=logits)


def forward(model, inputs, mode, update_stats=False):
    """Probability matrix only; see forward_cached."""
    probs, _ = forward_cached(model, inputs, mode, update_stats=update_stats)
    return probs


def adaptable_params(model):
    """Names of the BN scale/shift parameters, the only ones adaptation may touch.

    The classification head stays frozen. Order is stable: layer index
    ascending, gamma before beta.
    """
    names = []
    for i, layer in enumerate(model.layers):
        if layer.bn is not None:
            names.append(f"layers.{i}.bn.gamma")
            names.append(f"layers.{i}.bn.beta")
    if not names:
        raise ConfigError("model has no batch norm layers to adapt")
    return names


def all_param_names(model):
    names = []
    for i, layer in enumerate(model.layers):
        names.append(f"layers.{i}.weight")
        names.append(f"layers.{i}.bias")
        if layer.bn is not None:
            names.append(f"layers.{i}.bn.gamma")
            names.append(f"layers.{i}.bn.beta")
    return names


def _param_slot(model, name):
    parts = name.split(".")
    try:
        idx = int(parts[1])
        layer = model.layers[idx]
        if parts[0] != "layers":
            raise KeyError
        if len(parts) == 3 and parts[2] in ("weight", "bias"):
            return layer, parts[2]
        if len(parts) == 4 and parts[2] == "bn" and parts[3] in ("gamma", "beta"):
            if layer.bn is None:
                raise KeyError
            return layer.bn, parts[3]
        raise KeyError
    except (ValueError, IndexError, KeyError):
        raise KeyError(f"unknown parameter {name!r}") from None


def get_params(model, names):
    """Copies of the named parameter arrays, keyed by name in the given order."""
    out = {}
    for name in names:
        owner, attr = _param_slot(model, name)
        out[name] = getattr(owner, attr).copy()
    return out


def set_params(model, values):
    """Write parameter arrays back in place; shapes must match exactly."""
    for name, arr in values.items():
        owner, attr = _param_slot(model, name)
        current = getattr(owner, attr)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape != current.shape:
            raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {current.shape}")
        setattr(owner, attr, arr.copy())


def backward(model, cache, dlogits, wrt="adaptable"):
    """Backprop a logit-space gradient to the requested parameter set.

    In BATCH_STATS mode the gradient flows through the batch mean and
    variance; in SOURCE_STATS mode the running statistics are constants.
    Returns a name -> array dict covering wrt ("adaptable" or "all").
    """
    if wrt not in ("adaptable", "all"):
        raise ValueError("wrt must be 'adaptable' or 'all'")
    want = set(adaptable_params(model) if wrt == "adaptable" else all_param_names(model))
    grads = {}

    head = model.layers[-1]
    head_cache = cache.layers[-1]
    d = np.asarray(dlogits, dtype=np.float64)
    if d.shape != cache.logits.shape:
        raise ValueError("dlogits shape does not match logits")
    name = f"layers.{len(model.layers) - 1}"
    if f"{name}.weight" in want:
        grads[f"{name}.weight"] = head_cache.inputs.T @ d
        grads[f"{name}.bias"] = d.sum(axis=0)
    da = d @ head.weight.T

    for i in range(len(model.layers) - 2, -1, -1):
        layer = model.layers[i]
        lc = cache.layers[i]
        bn = layer.bn
        dy = np.where(lc.relu_mask, da, 0.0)
        if f"layers.{i}.bn.gamma" in want:
            grads[f"layers.{i}.bn.gamma"] = (dy * lc.x_hat).sum(axis=0)
            grads[f"layers.{i}.bn.beta"] = dy.sum(axis=0)
        dxhat = dy * bn.gamma
        if cache.mode is ForwardMode.BATCH_STATS:
            m = dy.shape[0]
            z_centered = lc.pre_bn - lc.mean
            dvar = (dxhat * z_centered).sum(axis=0) * (-0.5) / lc.std**3
            dmean = -dxhat.sum(axis=0) / lc.std
            dz = dxhat / lc.std + dvar * 2.0 * z_centered / m + dmean / m
        else:
            dz = dxhat / lc.std
        if f"layers.{i}.weight" in want:
            grads[f"layers.{i}.weight"] = lc.inputs.T @ dz
            grads[f"layers.{i}.bias"] = dz.sum(axis=0)
        da = dz @ layer.weight.T

    return {name: grads[name] for name in sorted(want, key=_param_sort_key)}


def _param_sort_key(name):
    parts = name.split(".")
    order = {"weight": 0, "bias": 1, "gamma": 2, "beta": 3}
    return (int(parts[1]), order[parts[-1]])


def grad(model, inputs, mode, logit_loss, wrt="adaptable", update_stats=False):
    """Forward, evaluate a (value, dlogits) logit loss, and backprop.

    Returns (loss value, gradient dict). Raises NumericalError naming the
    offending quantity if the loss or any gradient array is non-finite.
    """
    _, cache = forward_cached(model, inputs, mode, update_stats=update_stats)
    value, dlogits = logit_loss(cache.logits)
    if not np.isfinite(value):
        raise NumericalError("loss value is not finite")
    grads = backward(model, cache, dlogits, wrt=wrt)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    return value, grads


def snapshot_source(model):
    """Frozen deep copy of the model, used as the pre-adaptation reference."""
    return copy.deepcopy(model)


def predict_labels(model, inputs, mode=ForwardMode.SOURCE_STATS):
    probs = forward(model, inputs, mode)
    return np.argmax(probs, axis=1)


def evaluate_accuracy(model, inputs, labels):
    preds = predict_labels(model, inputs)
    return float(np.mean(preds == np.asarray(labels)))


def pretrain(model, inputs, labels, epochs, lr, seed, batch_size=64):
    """Source training: minibatch SGD on cross entropy, batch-stats forward.

    Mutates the model in place (epochs=0 leaves it untouched) and returns it.
    Singleton trailing batches are skipped since batch statistics need two
    rows. Raises NumericalError naming the epoch and batch on divergence.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels)
    if x.shape[0] != y.shape[0]:
        raise ValueError("inputs and labels disagree on sample count")
    if np.any(y < 0) or np.any(y >= model.num_classes):
        raise ValueError("label out of range")
    rng = np.random.default_rng(seed)
    names = all_param_names(model)
    for epoch in range(epochs):
        perm = rng.permutation(x.shape[0])
        for b, start in enumerate(range(0, x.shape[0], batch_size)):
            take = perm[start : start + batch_size]
            if take.shape[0] < 2:
                continue
            xb, yb = x[take], y[take]
            try:
                value, grads = grad(
                    model,
                    xb,
                    ForwardMode.BATCH_STATS,
                    lambda logits: losses.cross_entropy_loss(logits, yb),
                    wrt="all",
                    update_stats=True,
                )
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} batch {b}: {exc}") from exc
            params = get_params(model, names)
            set_params(model, {n: params[n] - lr * grads[n] for n in names})
    return model


def save_model(model, path):
    """Single-file npz checkpoint: architecture JSON plus every array, float64."""
    meta = {
        "input_dim": model.input_dim,
        "num_classes": model.num_classes,
        "hidden_sizes": list(model.hidden_sizes),
        "eps": [l.bn.eps for l in model.layers if l.bn is not None],
        "momentum": [l.bn.momentum for l in model.layers if l.bn is not None],
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for i, layer in enumerate(model.layers):
        arrays[f"layers.{i}.weight"] = layer.weight
        arrays[f"layers.{i}.bias"] = layer.bias
        if layer.bn is not None:
            arrays[f"layers.{i}.bn.gamma"] = layer.bn.gamma
            arrays[f"layers.{i}.bn.beta"] = layer.bn.beta
            arrays[f"layers.{i}.bn.running_mean"] = layer.bn.running_mean
            arrays[f"layers.{i}.bn.running_var"] = layer.bn.running_var
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    """Rebuild a model from save_model output, bit-exact."""
    with np.load(path) as data:
        try:
            meta = json.loads(bytes(data["meta"]).decode())
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"checkpoint {path} is missing architecture metadata") from exc
        model = init_model(
            meta["input_dim"], meta["hidden_sizes"], meta["num_classes"], seed=0
        )
        for i, layer in enumerate(model.layers):
            layer.weight = data[f"layers.{i}.weight"].copy()
            layer.bias = data[f"layers.{i}.bias"].copy()
            if layer.bn is not None:
                layer.bn.gamma = data[f"layers.{i}.bn.gamma"].copy()
                layer.bn.beta = data[f"layers.{i}.bn.beta"].copy()
                layer.bn.running_mean = data[f"layers.{i}.bn.running_mean"].copy()
                layer.bn.running_var = data[f"layers.{i}.bn.running_var"].copy()
                layer.bn.eps = meta["eps"][i]
                layer.bn.momentum = meta["momentum"][i]
    return model
