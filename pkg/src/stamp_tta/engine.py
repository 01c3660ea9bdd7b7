"""The online adaptation loop and the baselines around it.

For each incoming batch the adapted model first emits per-sample predictions
and entropy OOD scores (before any update, so every sample is scored by the
model state that greeted it), then the method updates itself. The full
method averages predictions over randomized views, admits samples into a
class-balanced replay memory through the consistency and confidence filters,
and takes one sharpness-aware step of the self-weighted entropy loss over
the memory contents under a cosine-decayed step size. Every component can be
toggled off; with everything off the update degenerates to plain entropy
minimization on the raw batch.

Step functions receive feature matrices only. Truth columns never enter the
adaptation path; run_experiment joins them back in afterwards for scoring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import datagen, diffnet, losses, membank, metrics, optim
from .config import ExperimentConfig
from .diffnet import ForwardMode
from .errors import ConfigError
from .losses import WeightStrategy

_STRATEGY_BY_NAME = {
    "plain": WeightStrategy.PLAIN,
    "self": WeightStrategy.SELF_WEIGHTED,
    "static": WeightStrategy.STATIC_WEIGHTED,
    "eata": WeightStrategy.EATA_WEIGHTED,
}


@dataclass
class Toggles:
    """Ablation switches; the full method has all six on.

    use_filtering gates the two admission filters. With use_memory off and
    use_filtering on there is nothing to optimize (the filters exist only to
    feed the memory), so no updates happen; with both off the loss is taken
    over the raw incoming batch, which is entropy minimization in the
    classical online style.
    """

    use_memory: bool = True
    use_filtering: bool = True
    use_self_weight: bool = True
    use_sam: bool = True
    use_decay: bool = True
    use_augmentation: bool = True


@dataclass
class EvalRecord:
    """One emitted sample: position, prediction, OOD score, and eval-only truth."""

    index: int
    pred: int
    ood_score: float
    label: int
    outlier: bool


@dataclass
class AdaptState:
    """Everything one adaptation run mutates, bundled for determinism."""

    model: diffnet.Model
    source: diffnet.Model
    method: str
    toggles: Toggles
    sched: optim.ScheduleState
    sam: optim.SamConfig
    bank: membank.MemoryBank | None
    h_thr: float
    delta_thr: float
    beta: float = 0.1
    views: int = 16
    aug_strength: float = 1.0
    weight_strategy: WeightStrategy | None = None
    update_running_stats: bool = True
    seed: int = 0
    samples_seen: int = 0


def build_state(model, cfg: ExperimentConfig):
    """Fresh AdaptState for one run; the given model is never mutated."""
    cfg.validate()
    m = cfg.method
    toggles = Toggles(
        use_memory=m.use_memory,
        use_filtering=m.use_filtering,
        use_self_weight=m.use_self_weight,
        use_sam=m.use_sam,
        use_decay=m.use_decay,
        use_augmentation=m.use_augmentation,
    )
    strategy = _STRATEGY_BY_NAME[m.weight_strategy] if m.weight_strategy else None
    bank = None
    if m.name == "stamp" and m.use_memory:
        bank = membank.MemoryBank(m.capacity, cfg.data.num_classes)
    return AdaptState(
        model=diffnet.snapshot_source(model),
        source=diffnet.snapshot_source(model),
        method=m.name,
        toggles=toggles,
        sched=optim.ScheduleState(base_lr=m.base_lr, horizon=m.horizon).validate(),
        sam=optim.SamConfig(rho=m.rho, norm_floor=m.norm_floor).validate(),
        bank=bank,
        h_thr=cfg.h_thr(),
        delta_thr=cfg.delta_thr(),
        beta=m.beta,
        views=m.views,
        aug_strength=m.aug_strength,
        weight_strategy=strategy,
        update_running_stats=m.update_running_stats,
        seed=cfg.seed,
    )


def averaged_prediction(model, inputs, views, strength, seed, first_sample_id, enabled=True):
    """Augmentation-averaged probabilities and argmax labels for a batch.

    Runs one source-statistics forward over all views; rows are independent
    in this mode, so the batched call matches per-sample calls to float
    accuracy and is deterministic for a fixed batch layout. With augmentation
    disabled or strength 0 this is a single plain forward.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if not enabled or strength == 0:
        probs = diffnet.forward(model, x, ForwardMode.SOURCE_STATS)
    else:
        b, d = x.shape
        stack = np.empty((b * views, d))
        for i in range(b):
            stack[i * views : (i + 1) * views] = datagen.augment_views(
                x[i], views, strength, seed, first_sample_id + i
            )
        flat = diffnet.forward(model, stack, ForwardMode.SOURCE_STATS)
        probs = flat.reshape(b, views, -1).mean(axis=1)
    preds = np.argmax(probs, axis=1)  # ties break to the lowest index
    return probs, preds


def detect(scores, delta_thr):
    """Binary rejection decisions: 1 flags a suspected outlier (score >= thr)."""
    if delta_thr <= 0:
        raise ConfigError("delta_thr must be positive")
    return (np.asarray(scores, dtype=np.float64) >= delta_thr).astype(np.int64)


def _resolve_strategy(state):
    if state.weight_strategy is not None:
        return state.weight_strategy
    if state.toggles.use_self_weight:
        return WeightStrategy.SELF_WEIGHTED
    return WeightStrategy.PLAIN


def _apply_update(state, batch):
    """One optimization step on the adaptable parameters over `batch`."""
    strategy = _resolve_strategy(state)
    objective = losses.make_entropy_objective(strategy, h_thr=state.h_thr)
    lr = optim.cosine_lr(state.sched) if state.toggles.use_decay else state.sched.base_lr
    if state.toggles.use_sam:
        optim.sam_update(
            state.model,
            batch,
            ForwardMode.BATCH_STATS,
            objective,
            state.sam,
            lr,
            update_stats=state.update_running_stats,
        )
    else:
        optim.sgd_update(
            state.model,
            batch,
            ForwardMode.BATCH_STATS,
            objective,
            lr,
            update_stats=state.update_running_stats,
        )
    state.sched.step_count += 1


def stamp_step(state, inputs):
    """Process one batch with the full (or ablated) method.

    Order per batch: emit predictions and scores from the current model,
    admit samples into the memory, take one step of the entropy objective
    over the memory contents (or the raw batch when memory and filtering are
    both off), then refresh the smoothed class frequencies. Returns
    (preds, scores) for the batch.
    """
    x = np.asarray(inputs, dtype=np.float64)
    probs, preds = averaged_prediction(
        state.model,
        x,
        state.views,
        state.aug_strength,
        state.seed,
        state.samples_seen,
        enabled=state.toggles.use_augmentation,
    )
    scores = losses.entropy(probs)
    state.samples_seen += x.shape[0]

    if state.toggles.use_memory and state.bank is not None:
        if state.toggles.use_filtering:
            source_probs = diffnet.forward(state.source, x, ForwardMode.SOURCE_STATS)
            for i in range(x.shape[0]):
                verdict = membank.filter_masks(probs[i], source_probs[i], state.h_thr)
                if verdict.admitted:
                    state.bank.insert(x[i], preds[i], verdict)
        else:
            for i in range(x.shape[0]):
                state.bank.insert(x[i], preds[i])
        replay, _ = state.bank.contents()
        if replay.shape[0] >= 2:
            _apply_update(state, replay)
        state.bank.update_class_frequency(state.beta)
    elif not state.toggles.use_filtering:
        if x.shape[0] >= 2:
            _apply_update(state, x)

    return preds, scores


def baseline_step(state, inputs):
    """One batch under a baseline: source, bn_stats, or tent.

    source scores with the frozen model and running statistics. bn_stats
    re-estimates normalization from the batch but never updates parameters.
    tent additionally takes one constant-rate gradient step of mean entropy
    on the BN scale/shift parameters; its emission comes from the same
    batch-statistics view of the batch that the update differentiates.
    A singleton trailing batch (batch statistics undefined) falls back to a
    source-statistics emission and triggers no update.
    """
    x = np.asarray(inputs, dtype=np.float64)
    state.samples_seen += x.shape[0]
    if state.method == "source" or x.shape[0] < 2:
        probs = diffnet.forward(state.model, x, ForwardMode.SOURCE_STATS)
    else:
        probs = diffnet.forward(state.model, x, ForwardMode.BATCH_STATS)
        if state.method == "tent":
            objective = losses.make_entropy_objective(WeightStrategy.PLAIN)
            optim.sgd_update(
                state.model,
                x,
                ForwardMode.BATCH_STATS,
                objective,
                state.sched.base_lr,
            )
    preds = np.argmax(probs, axis=1)
    scores = losses.entropy(probs)
    return preds, scores


def step(state, inputs):
    if state.method == "stamp":
        return stamp_step(state, inputs)
    if state.method in ("source", "bn_stats", "tent"):
        return baseline_step(state, inputs)
    raise ConfigError(f"unknown method {state.method!r}")


def pretrain_source(cfg: ExperimentConfig):
    """Generate source data, train the classifier, and enforce the accuracy floor.

    The split between training and held-out rows is seeded by the model seed,
    so the same config always yields the same checkpoint.
    """
    d, mc = cfg.data, cfg.model
    features, labels = datagen.gen_source(
        d.num_classes, d.input_dim, d.source_size, d.source_seed
    )
    rng = np.random.default_rng(np.random.SeedSequence((mc.seed, 21)))
    perm = rng.permutation(d.source_size)
    n_val = max(1, int(round(d.val_fraction * d.source_size)))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    model = diffnet.init_model(d.input_dim, mc.hidden_sizes, d.num_classes, mc.seed)
    diffnet.pretrain(
        model,
        features[train_idx],
        labels[train_idx],
        epochs=mc.epochs,
        lr=mc.lr,
        seed=mc.seed,
        batch_size=mc.batch_size,
    )
    acc = diffnet.evaluate_accuracy(model, features[val_idx], labels[val_idx])
    if acc < mc.accuracy_floor:
        raise ConfigError(
            f"pretraining reached held-out accuracy {acc:.3f}, "
            f"below the configured floor {mc.accuracy_floor:.3f}"
        )
    return model, acc


def run_experiment(cfg: ExperimentConfig, model=None):
    """Run one method over one stream; returns (records, summary dict).

    The model comes from, in order: the argument, the configured checkpoint,
    or a fresh pretraining run. Identical configs produce identical records
    and summaries; the model is copied, never mutated in place.
    """
    cfg.validate()
    if model is None:
        if cfg.model.checkpoint:
            model = diffnet.load_model(cfg.model.checkpoint)
        else:
            model, _ = pretrain_source(cfg)
    d = cfg.data
    stream = datagen.gen_stream(
        datagen.StreamConfig(
            num_classes=d.num_classes,
            input_dim=d.input_dim,
            num_samples=d.num_samples,
            batch_size=d.batch_size,
            severity=d.severity,
            outlier_ratio=d.outlier_ratio,
            outlier_mode=d.outlier_mode,
            seed=cfg.seed,
        )
    )
    state = build_state(model, cfg)
    preds = np.empty(len(stream), dtype=np.int64)
    scores = np.empty(len(stream))
    for start, batch in stream.batches():
        p, s = step(state, batch)
        preds[start : start + len(p)] = p
        scores[start : start + len(p)] = s

    records = [
        EvalRecord(
            index=i,
            pred=int(preds[i]),
            ood_score=float(scores[i]),
            label=int(stream.labels[i]),
            outlier=bool(stream.outlier[i]),
        )
        for i in range(len(stream))
    ]
    ms = metrics.summarize(preds, scores, stream.labels, stream.outlier)
    rejected = detect(scores, state.delta_thr)
    # echo everything that determines the result; output routing does not,
    # so identical experiments produce identical summaries wherever written
    cfg_echo = cfg.to_dict()
    cfg_echo.pop("output", None)
    summary = {
        "method": cfg.method.name,
        "seed": cfg.seed,
        "num_samples": len(stream),
        "num_normal": ms.num_normal,
        "num_outlier": ms.num_outlier,
        "h_thr": state.h_thr,
        "delta_thr": state.delta_thr,
        "rejected_fraction": float(rejected.mean()),
        "metrics": {"acc": ms.acc, "auc": ms.auc, "h_score": ms.h},
        "config": cfg_echo,
    }
    return records, summary
