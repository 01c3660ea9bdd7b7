"""Optimization pieces: cosine step decay, SGD, and sharpness-aware steps.

The SAM step works on an abstract parameter dict plus a gradient oracle, so
the same code path serves both the network (via diffnet.grad) and the scalar
hand-trace checks. The perturbation radius is applied along the joint L2
direction of the first gradient across every adaptable tensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffnet
from .errors import ConfigError, NumericalError


@dataclass
class ScheduleState:
    """Cosine step-decay state: base_lr is alpha_0, horizon is T, step_count t."""

    base_lr: float
    horizon: int
    step_count: int = 0

    def validate(self):
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.step_count < 0:
            raise ConfigError("step_count must be >= 0")
        return self


def cosine_lr(sched):
    """Half-cosine decay from base_lr to 0 across horizon steps, then 0.

    lr(t) = base_lr / 2 * (1 + cos(pi * min(t, T) / T)); the min clamp holds
    the rate at exactly 0 once t >= T.
    """
    sched.validate()
    t = min(sched.step_count, sched.horizon)
    return 0.5 * sched.base_lr * (1.0 + math.cos(math.pi * t / sched.horizon))


@dataclass
class SamConfig:
    """Sharpness-aware step knobs; rho 0 degenerates to plain SGD."""

    rho: float = 0.05
    norm_floor: float = 1e-12

    def validate(self):
        if self.rho < 0:
            raise ConfigError("method.rho must be >= 0")
        if self.norm_floor <= 0:
            raise ConfigError("norm_floor must be positive")
        return self


def _check_grads(grads, where):
    for name, g in grads.items():
        if not np.all(np.isfinite(np.asarray(g))):
            raise NumericalError(f"non-finite gradient for {name} during {where}")


def sgd_step(params, grad_fn, lr):
    """One plain gradient step. grad_fn maps a param dict to (loss, grads).

    Returns (new params, loss at the starting point). Inputs are not mutated.
    """
    loss, grads = grad_fn(params)
    _check_grads(grads, "sgd step")
    return {k: params[k] - lr * grads[k] for k in params}, loss


def sam_step(params, grad_fn, sam_cfg, lr):
    """One sharpness-aware step: ascend to the worst nearby point, step from there.

    First gradient g1 defines the perturbation eps = rho * g1 / ||g1||_2 with
    the norm taken jointly over all tensors. The loss is re-evaluated at
    params + eps and that second gradient g2 drives the descent from the
    unperturbed parameters. If ||g1|| is at or below the norm floor the
    perturbation is skipped and g1 is applied directly.
    """
    sam_cfg.validate()
    loss, g1 = grad_fn(params)
    _check_grads(g1, "sam ascent")
    sq = 0.0
    for g in g1.values():
        sq += float(np.sum(np.square(g)))
    norm = math.sqrt(sq)
    if norm <= sam_cfg.norm_floor:
        return {k: params[k] - lr * g1[k] for k in params}, loss
    scale = sam_cfg.rho / norm
    perturbed = {k: params[k] + scale * g1[k] for k in params}
    _, g2 = grad_fn(perturbed)
    _check_grads(g2, "sam descent")
    return {k: params[k] - lr * g2[k] for k in params}, loss


def _model_grad_fn(model, inputs, mode, logit_loss, update_stats):
    """Gradient oracle over the model's adaptable parameters.

    Running statistics, when requested, are folded in on the first evaluation
    only; the SAM re-evaluation at the perturbed point must not double-count
    the batch.
    """
    state = {"update_stats": update_stats}

    def grad_fn(params):
        diffnet.set_params(model, params)
        value, grads = diffnet.grad(
            model,
            inputs,
            mode,
            logit_loss,
            wrt="adaptable",
            update_stats=state["update_stats"],
        )
        state["update_stats"] = False
        return value, grads

    return grad_fn


def sgd_update(model, inputs, mode, logit_loss, lr, update_stats=False):
    """In-place SGD step on the model's adaptable parameters; returns the loss."""
    names = diffnet.adaptable_params(model)
    params = diffnet.get_params(model, names)
    new_params, loss = sgd_step(
        params, _model_grad_fn(model, inputs, mode, logit_loss, update_stats), lr
    )
    diffnet.set_params(model, new_params)
    return loss


def sam_update(model, inputs, mode, logit_loss, sam_cfg, lr, update_stats=False):
    """In-place sharpness-aware step on the adaptable parameters; returns the loss.

    The gradient oracle writes candidate parameters into the model before each
    evaluation, so the final set_params restores the descent result.
    """
    names = diffnet.adaptable_params(model)
    params = diffnet.get_params(model, names)
    new_params, loss = sam_step(
        params, _model_grad_fn(model, inputs, mode, logit_loss, update_stats), sam_cfg, lr
    )
    diffnet.set_params(model, new_params)
    return loss
