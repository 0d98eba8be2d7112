"""MSE training with Adam, early stopping, and the transfer-learning graft.

Targets are standardized with train-set statistics stored on the model
and inverted at prediction time. Early stopping restores the weights of
the best-validation epoch; frozen parameter groups are never touched, so
their tensors stay bit-identical through any number of steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import PreprocessedExample, batch_arrays, check_disjoint
from .errors import ConfigError, GraftError, NumericError
from .metrics import MetricsReport, evaluate_metrics, truth_matrix
from .models import (
    GROUP_EMG,
    ModelGraph,
    ModelHyper,
    _param_specs,
    build_model,
)

COPIED_GROUP_LR_SCALE = 0.1
EVAL_CHUNK = 1024

# The two reduced fine-tuning learning rates, as reported: 0.0001 and
# 0.0005 against the 0.001 primary rate. (The second is described as a
# fifth of the original but its stated value is half; the stated value
# wins here.)
FINETUNE_LR_TENTH = 0.1
FINETUNE_LR_FIFTH = 0.5


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings (paper defaults)."""

    batch_size: int = 2000
    max_epochs: int = 60
    patience: int = 5
    base_lr: float = 1e-3
    lr_scale: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0 (0 runs no optimization)")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        for name in ("base_lr", "lr_scale", "eps", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")

    @property
    def effective_lr(self) -> float:
        return self.base_lr * self.lr_scale

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stop_reason: str = "max_epochs"
    best_epoch: int = 0

    def to_dict(self) -> dict:
        return {"train_loss": self.train_loss, "val_loss": self.val_loss,
                "lr": self.lr, "stop_reason": self.stop_reason,
                "best_epoch": self.best_epoch}


class EarlyStopper:
    """Stop when the monitored loss sets no new strict minimum for
    ``patience`` consecutive epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.counter = 0
        self.improved = False

    def update(self, loss: float) -> bool:
        self.epoch += 1
        if loss < self.best:
            self.best = loss
            self.best_epoch = self.epoch
            self.counter = 0
            self.improved = True
            return False
        self.improved = False
        self.counter += 1
        return self.counter >= self.patience


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(m={n: np.zeros_like(p) for n, p in params.items()},
                   v={n: np.zeros_like(p) for n, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig,
              group_lr_scales: Optional[dict] = None,
              group_of: Optional[dict] = None,
              trainable: Optional[dict] = None) -> tuple[dict, AdamState]:
    """One Adam update with bias correction, in place.

    ``params`` and ``grads`` map names to arrays. Per-group learning rate
    is base_lr * config.lr_scale * group scale; frozen groups are skipped
    entirely.
    """
    state.t += 1
    t = state.t
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        group = group_of.get(name) if group_of else None
        if trainable is not None and group is not None and not trainable.get(group, True):
            continue
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        scale = 1.0
        if group_lr_scales and group is not None:
            scale = group_lr_scales.get(group, 1.0)
        lr = config.effective_lr * scale
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return params, state


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is <= max_norm."""
    total = sum(float((g ** 2).sum()) for g in grads.values())
    norm = np.sqrt(total)
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
        return factor
    return 1.0


def _subset(arrays: dict, idx: np.ndarray) -> dict:
    return {k: v[idx] for k, v in arrays.items()}


def _standardize_targets(model: ModelGraph, targets: np.ndarray) -> np.ndarray:
    return (targets - model.target_mean) / model.target_std


def _val_loss(model: ModelGraph, arrays: dict, y_std: np.ndarray) -> float:
    total = 0.0
    n = y_std.shape[0]
    with ad.no_grad():
        for start in range(0, n, EVAL_CHUNK):
            idx = np.arange(start, min(start + EVAL_CHUNK, n))
            pred, _ = model.forward_graph(_subset(arrays, idx))
            diff = pred.data - y_std[idx]
            total += float((diff ** 2).sum())
    return total / y_std.size


def predict_degrees(model: ModelGraph, examples: Sequence[PreprocessedExample]) -> np.ndarray:
    """Chunked de-standardized predictions for a list of examples."""
    arrays = batch_arrays(list(examples))
    preds = []
    n = len(examples)
    for start in range(0, n, EVAL_CHUNK):
        idx = np.arange(start, min(start + EVAL_CHUNK, n))
        degrees, _ = model.forward(_subset(arrays, idx))
        preds.append(degrees)
    return np.concatenate(preds, axis=0)


def train(model: ModelGraph, train_set: Sequence[PreprocessedExample],
          val_set: Optional[Sequence[PreprocessedExample]], config: TrainConfig,
          ) -> tuple[ModelGraph, TrainHistory]:
    """Minimize MSE on standardized targets with early stopping.

    Restores the best-validation-epoch weights. When ``val_set`` is None
    or empty the train loss is monitored instead (small fine-tune sets).
    Target statistics are taken from the train set on first training and
    kept on subsequent stages.
    """
    if not train_set:
        raise ConfigError("empty training set")
    val_set = list(val_set) if val_set else []
    if val_set:
        check_disjoint(train_set, val_set)

    arrays = batch_arrays(list(train_set))
    if model.target_mean is None or model.target_std is None:
        targets = arrays["target_deg"]
        model.set_target_stats(targets.mean(), max(float(targets.std()), 1e-8))
    y_train = _standardize_targets(model, arrays["target_deg"])
    val_arrays = batch_arrays(val_set) if val_set else None
    y_val = _standardize_targets(model, val_arrays["target_deg"]) if val_set else None

    params = {n: p.data for n, p in model.params.items()}
    state = AdamState.for_params(params)
    stopper = EarlyStopper(config.patience)
    history = TrainHistory()
    best_state = model.state_arrays()
    rng = np.random.default_rng(config.seed)

    n = len(train_set)
    batch_size = min(config.batch_size, n)
    for _epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            ad.zero_grads(model.params.values())
            pred, _ = model.forward_graph(_subset(arrays, idx))
            loss = ad.mse(pred, Tensor(y_train[idx]))
            if not np.isfinite(loss.data):
                raise NumericError("non-finite training loss")
            ad.backward(loss, model.params.values())
            grads = {name: p.grad for name, p in model.params.items()
                     if model.trainable[model.group_of[name]]}
            clip_global_norm(grads, config.clip_norm)
            adam_step(params, {n_: p.grad for n_, p in model.params.items()},
                      state, config, group_lr_scales=model.lr_scale,
                      group_of=model.group_of, trainable=model.trainable)
            loss_sum += loss.item() * len(idx)

        train_loss = loss_sum / n
        val_loss = _val_loss(model, val_arrays, y_val) if val_set else train_loss
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.lr.append(config.effective_lr)
        stop = stopper.update(val_loss)
        if stopper.improved:
            best_state = model.state_arrays()
        if stop:
            history.stop_reason = "early_stop"
            break
    else:
        history.stop_reason = "max_epochs"

    model.load_state_arrays(best_state)
    history.best_epoch = stopper.best_epoch
    return model, history


def finetune(model: ModelGraph, finetune_set: Sequence[PreprocessedExample],
             eval_set: Sequence[PreprocessedExample], config: TrainConfig,
             ) -> tuple[ModelGraph, MetricsReport, TrainHistory]:
    """Adapt at a reduced learning rate, then report metrics on eval_set.

    A trailing 20% slice of the fine-tune set is held out for early
    stopping when at least 10 examples are available; otherwise the train
    loss is monitored. The eval set never contributes a gradient.
    """
    if not finetune_set:
        raise ConfigError("empty fine-tune set")
    if not eval_set:
        raise ConfigError("empty evaluation set")
    check_disjoint(finetune_set, eval_set)
    if len(finetune_set) >= 10:
        n_train = int(np.ceil(0.8 * len(finetune_set)))
        fit_set = list(finetune_set)[:n_train]
        val_set = list(finetune_set)[n_train:]
    else:
        fit_set, val_set = list(finetune_set), None

    model, history = train(model, fit_set, val_set, config)
    preds = predict_degrees(model, eval_set)
    report = evaluate_metrics(preds, truth_matrix(eval_set))
    return model, report, history


@dataclass
class GraftReport:
    """What the SIC-to-DIC weight transfer did with each tensor."""

    copied: list
    reinitialized: list
    created: list

    def to_dict(self) -> dict:
        return {"copied": self.copied, "reinitialized": self.reinitialized,
                "created": self.created}


def transfer_sic_to_dic(source: ModelGraph, target_hyper: ModelHyper, seed: int,
                        target_scenario: str = "DIC",
                        ) -> tuple[ModelGraph, GraftReport]:
    """Graft a trained model's weights into a freshly built scenario model.

    Every tensor whose name and shape both match is copied bit-exactly;
    same-name tensors with different shapes are reinitialized (recorded);
    tensors new to the target are freshly seeded. Copied groups default to
    lr scale 0.1, new groups to 1.0. The EMG branch must be
    shape-compatible, otherwise the graft is refused.
    """
    mismatches = []
    for name, group, shape, _ in _param_specs(target_scenario, target_hyper):
        if group != GROUP_EMG:
            continue
        src = source.params.get(name)
        if src is None or src.shape != tuple(shape):
            have = None if src is None else src.shape
            mismatches.append(f"{name}: source {have} vs target {tuple(shape)}")
    if mismatches:
        raise GraftError("EMG branch incompatible with target hyperparameters: "
                         + "; ".join(mismatches))

    target = build_model(target_scenario, target_hyper, seed)
    copied, reinit, created = [], [], []
    for name, p in target.params.items():
        src = source.params.get(name)
        if src is None:
            created.append(name)
        elif src.shape == p.shape:
            p.data = src.data.copy()
            copied.append(name)
        else:
            reinit.append(name)

    copied_set = set(copied)
    for group in target.groups:
        names = [n for n in target.params if target.group_of[n] == group]
        fully_copied = all(n in copied_set for n in names)
        target.lr_scale[group] = COPIED_GROUP_LR_SCALE if fully_copied else 1.0

    target.target_mean = source.target_mean
    target.target_std = source.target_std
    target.meta = dict(source.meta)
    target.meta["graft_seed"] = seed
    provenance = list(target.meta.get("provenance", []))
    provenance.append({"stage": "graft", "from_scenario": source.scenario,
                       "to_scenario": target_scenario, "seed": seed})
    target.meta["provenance"] = provenance
    return target, GraftReport(copied, reinit, created)
