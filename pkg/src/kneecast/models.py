"""Scenario models: per-channel CNNs, channel attention, stacked LSTMs.

Four scenarios share one skeleton. SIC: each EMG channel runs its own
two-layer conv stack (200 steps down to 50), the per-channel features are
concatenated and fed through two LSTM layers, and the last hidden state
drives the dense head. DIC additionally reshapes the 200 knee-angle
samples into 50 chronological steps of 4, runs them through a kinematic
LSTM, and at every step attends (scaled dot-product over the 4 channels)
from the kinematic hidden state to the channel features; the attention
context and kinematic hidden state enter the first LSTM through a
separate input projection so the EMG-only weights keep their SIC shapes.
Force scenarios add a small conv branch over the two interaction-force
channels whose pooled feature vector joins the head input.

Parameters are tagged by group (emg_branch / kinematic_branch /
force_branch / head) with per-group trainability and learning-rate
scales, which is what the staged transfer workflow freezes and rescales.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import (
    PreprocessedExample,
    batch_arrays,
    scenario_uses_forces,
    scenario_uses_kinematics,
    validate_scenario,
)
from .errors import ConfigError, InvalidSpecError, ShapeError

N_EMG_CHANNELS = 4
N_FORCE_CHANNELS = 2
KIN_STEP_DIM = 4
PARAM_BUDGET = 100_000

GROUP_EMG = "emg_branch"
GROUP_KIN = "kinematic_branch"
GROUP_FORCE = "force_branch"
GROUP_HEAD = "head"


@dataclass(frozen=True)
class ModelHyper:
    """Layer sizes. Defaults satisfy the published constraints: the conv
    strides reduce 200 input steps to 50 feature steps and the largest
    scenario stays under the 100k parameter budget."""

    conv1_filters: int = 8
    conv1_kernel: int = 9
    conv1_stride: int = 2
    conv2_filters: int = 16
    conv2_kernel: int = 5
    conv2_stride: int = 2
    lstm1_hidden: int = 64
    lstm2_hidden: int = 48
    kin_lstm_hidden: int = 32
    attn_dim: int = 16
    force_feature_dim: int = 16
    horizon: int = 50
    input_len: int = 200

    def __post_init__(self):
        if self.conv1_stride * self.conv2_stride != KIN_STEP_DIM:
            raise InvalidSpecError(
                "conv strides must multiply to 4 (200 input steps -> 50 feature steps)")
        if self.input_len % (self.conv1_stride * self.conv2_stride) != 0:
            raise InvalidSpecError("input_len must be divisible by the stride product")
        if self.horizon < 1:
            raise InvalidSpecError("horizon must be >= 1")
        for name in ("conv1_filters", "conv2_filters", "lstm1_hidden", "lstm2_hidden",
                     "kin_lstm_hidden", "attn_dim", "force_feature_dim"):
            if getattr(self, name) < 1:
                raise InvalidSpecError(f"{name} must be >= 1")

    @property
    def emg_feature_dim(self) -> int:
        return self.conv2_filters

    @property
    def seq_len(self) -> int:
        return self.input_len // (self.conv1_stride * self.conv2_stride)

    def with_horizon(self, horizon: int) -> "ModelHyper":
        return replace(self, horizon=horizon)

    @classmethod
    def tiny(cls, horizon: int = 3) -> "ModelHyper":
        """Gradient-check scale: a 40-sample window and 4-wide layers."""
        return cls(conv1_filters=2, conv2_filters=4, lstm1_hidden=4, lstm2_hidden=4,
                   kin_lstm_hidden=4, attn_dim=4, force_feature_dim=4,
                   horizon=horizon, input_len=40)

    @classmethod
    def small(cls, horizon: int = 50) -> "ModelHyper":
        """Desk-scale training preset used by the acceptance experiments."""
        return cls(conv1_filters=3, conv2_filters=6, lstm1_hidden=16, lstm2_hidden=12,
                   kin_lstm_hidden=8, attn_dim=8, force_feature_dim=8, horizon=horizon)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelHyper":
        return cls(**d)


def _param_specs(scenario: str, hyper: ModelHyper) -> list[tuple[str, str, tuple, str]]:
    """(name, group, shape, init) for every tensor of a scenario model."""
    h = hyper
    specs: list[tuple[str, str, tuple, str]] = []
    for c in range(N_EMG_CHANNELS):
        specs.append((f"emg.conv1.c{c}.w", GROUP_EMG,
                      (h.conv1_filters, 1, h.conv1_kernel), "fanin"))
        specs.append((f"emg.conv1.c{c}.b", GROUP_EMG, (h.conv1_filters,), "zeros"))
        specs.append((f"emg.conv2.c{c}.w", GROUP_EMG,
                      (h.conv2_filters, h.conv1_filters, h.conv2_kernel), "fanin"))
        specs.append((f"emg.conv2.c{c}.b", GROUP_EMG, (h.conv2_filters,), "zeros"))
    emg_width = N_EMG_CHANNELS * h.emg_feature_dim
    specs.append(("emg.lstm1.wx", GROUP_EMG, (emg_width, 4 * h.lstm1_hidden), "fanin"))
    specs.append(("emg.lstm1.wh", GROUP_EMG, (h.lstm1_hidden, 4 * h.lstm1_hidden), "fanin"))
    specs.append(("emg.lstm1.b", GROUP_EMG, (4 * h.lstm1_hidden,), "lstm_bias"))
    specs.append(("emg.lstm2.wx", GROUP_EMG, (h.lstm1_hidden, 4 * h.lstm2_hidden), "fanin"))
    specs.append(("emg.lstm2.wh", GROUP_EMG, (h.lstm2_hidden, 4 * h.lstm2_hidden), "fanin"))
    specs.append(("emg.lstm2.b", GROUP_EMG, (4 * h.lstm2_hidden,), "lstm_bias"))

    if scenario_uses_kinematics(scenario):
        specs.append(("kin.lstm.wx", GROUP_KIN,
                      (KIN_STEP_DIM, 4 * h.kin_lstm_hidden), "fanin"))
        specs.append(("kin.lstm.wh", GROUP_KIN,
                      (h.kin_lstm_hidden, 4 * h.kin_lstm_hidden), "fanin"))
        specs.append(("kin.lstm.b", GROUP_KIN, (4 * h.kin_lstm_hidden,), "lstm_bias"))
        specs.append(("attn.wq", GROUP_KIN, (h.kin_lstm_hidden, h.attn_dim), "fanin"))
        specs.append(("attn.wk", GROUP_KIN, (h.emg_feature_dim, h.attn_dim), "fanin"))
        specs.append(("attn.wv", GROUP_KIN, (h.emg_feature_dim, h.emg_feature_dim), "fanin"))
        specs.append(("kin.lstm1_extra.wx", GROUP_KIN,
                      (h.emg_feature_dim + h.kin_lstm_hidden, 4 * h.lstm1_hidden), "fanin"))

    if scenario_uses_forces(scenario):
        specs.append(("force.conv1.w", GROUP_FORCE,
                      (h.conv1_filters, N_FORCE_CHANNELS, h.conv1_kernel), "fanin"))
        specs.append(("force.conv1.b", GROUP_FORCE, (h.conv1_filters,), "zeros"))
        specs.append(("force.conv2.w", GROUP_FORCE,
                      (h.force_feature_dim, h.conv1_filters, h.conv2_kernel), "fanin"))
        specs.append(("force.conv2.b", GROUP_FORCE, (h.force_feature_dim,), "zeros"))

    head_in = h.lstm2_hidden + (h.force_feature_dim if scenario_uses_forces(scenario) else 0)
    specs.append(("head.w", GROUP_HEAD, (head_in, h.horizon), "fanin"))
    specs.append(("head.b", GROUP_HEAD, (h.horizon,), "zeros"))
    return specs


def _tensor_seed(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode()).digest()
    key = int.from_bytes(digest[:4], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def _init_tensor(name: str, shape: tuple, init: str, seed: int, hyper: ModelHyper) -> np.ndarray:
    if init == "zeros":
        return np.zeros(shape)
    if init == "lstm_bias":
        b = np.zeros(shape)
        hidden = shape[0] // 4
        b[hidden : 2 * hidden] = 1.0  # forget-gate bias
        return b
    # uniform fan-in scaling
    if len(shape) == 3:
        fan_in = shape[1] * shape[2]
    else:
        fan_in = shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    rng = _tensor_seed(seed, name)
    return rng.uniform(-bound, bound, size=shape)


class ModelGraph:
    """A scenario model: named parameter tensors plus forward logic."""

    def __init__(self, scenario: str, hyper: ModelHyper, params: dict,
                 group_of: dict, target_mean: Optional[float] = None,
                 target_std: Optional[float] = None, meta: Optional[dict] = None):
        self.scenario = validate_scenario(scenario)
        self.hyper = hyper
        self.params = params
        self.group_of = group_of
        groups = list(dict.fromkeys(group_of.values()))
        self.trainable = {g: True for g in groups}
        self.lr_scale = {g: 1.0 for g in groups}
        self.target_mean = target_mean
        self.target_std = target_std
        self.meta = meta if meta is not None else {}

    # -- bookkeeping ----------------------------------------------------

    @property
    def groups(self) -> list[str]:
        return list(self.trainable)

    def parameters(self) -> dict:
        return self.params

    def trainable_params(self) -> dict:
        return {n: p for n, p in self.params.items()
                if self.trainable[self.group_of[n]]}

    def set_target_stats(self, mean: float, std: float) -> None:
        self.target_mean = float(mean)
        self.target_std = float(std)

    def state_arrays(self) -> dict:
        return {n: p.data.copy() for n, p in self.params.items()}

    def load_state_arrays(self, state: dict) -> None:
        for n, arr in state.items():
            self.params[n].data = arr.copy()

    # -- forward --------------------------------------------------------

    def _check_batch(self, batch: dict) -> int:
        h = self.hyper
        emg = batch.get("emg")
        if emg is None or emg.ndim != 3 or emg.shape[1:] != (N_EMG_CHANNELS, h.input_len):
            raise ShapeError(
                f"emg batch must be (B, {N_EMG_CHANNELS}, {h.input_len}), got "
                f"{None if emg is None else emg.shape}")
        if scenario_uses_kinematics(self.scenario):
            kin = batch.get("kinematic")
            if kin is None:
                raise ConfigError(f"scenario {self.scenario} needs kinematic input")
            if kin.shape != (emg.shape[0], h.input_len):
                raise ShapeError(f"kinematic batch must be (B, {h.input_len}), got {kin.shape}")
        if scenario_uses_forces(self.scenario):
            forces = batch.get("forces")
            if forces is None:
                raise ConfigError(f"scenario {self.scenario} needs force input")
            if forces.shape != (emg.shape[0], N_FORCE_CHANNELS, h.input_len):
                raise ShapeError(
                    f"forces batch must be (B, {N_FORCE_CHANNELS}, {h.input_len}), "
                    f"got {forces.shape}")
        return emg.shape[0]

    def _seq_matmul(self, x: Tensor, w: Tensor) -> Tensor:
        # (B, T, D) @ (D, M) as one flat GEMM
        b, t, d = x.shape
        flat = ad.matmul(ad.reshape(x, (b * t, d)), w)
        return ad.reshape(flat, (b, t, w.shape[1]))

    def _lstm(self, x_proj: Tensor, wh: Tensor, hidden: int, collect_all: bool):
        # gate columns ordered (input, forget, output, cell) so the three
        # sigmoids run as one contiguous activation
        b, t = x_proj.shape[0], x_proj.shape[1]
        h = Tensor(np.zeros((b, hidden)))
        c = Tensor(np.zeros((b, hidden)))
        collected = []
        for step in range(t):
            z = ad.add(x_proj[:, step, :], ad.matmul(h, wh))
            gates = ad.sigmoid(z[:, : 3 * hidden])
            i = gates[:, :hidden]
            f = gates[:, hidden : 2 * hidden]
            o = gates[:, 2 * hidden :]
            g = ad.tanh(z[:, 3 * hidden :])
            c = ad.add(ad.mul(f, c), ad.mul(i, g))
            h = ad.mul(o, ad.tanh(c))
            if collect_all:
                collected.append(h)
        return ad.stack(collected, axis=1) if collect_all else h

    def _emg_features(self, emg: np.ndarray) -> list[Tensor]:
        p = self.params
        h = self.hyper
        feats = []
        for c in range(N_EMG_CHANNELS):
            x = Tensor(emg[:, c : c + 1, :])
            y = ad.relu(ad.conv1d(x, p[f"emg.conv1.c{c}.w"], p[f"emg.conv1.c{c}.b"],
                                  stride=h.conv1_stride))
            y = ad.relu(ad.conv1d(y, p[f"emg.conv2.c{c}.w"], p[f"emg.conv2.c{c}.b"],
                                  stride=h.conv2_stride))
            feats.append(ad.transpose(y, (0, 2, 1)))  # (B, T, F)
        return feats

    def forward_graph(self, batch: dict):
        """Standardized predictions (B, H) and, for DIC, attention (B, T, 4)."""
        bsz = self._check_batch(batch)
        p = self.params
        h = self.hyper
        t = h.seq_len

        feats = self._emg_features(batch["emg"])
        emg_seq = ad.concat(feats, axis=2)  # (B, T, 4F)

        attn = None
        if scenario_uses_kinematics(self.scenario):
            kin_steps = batch["kinematic"].reshape(bsz, t, KIN_STEP_DIM)  # chronological
            kin_proj = ad.add(self._seq_matmul(Tensor(kin_steps), p["kin.lstm.wx"]),
                              p["kin.lstm.b"])
            kin_seq = self._lstm(kin_proj, p["kin.lstm.wh"], h.kin_lstm_hidden, True)

            q = self._seq_matmul(kin_seq, p["attn.wq"])          # (B, T, A)
            feat_stack = ad.stack(feats, axis=2)                 # (B, T, 4, F)
            fdim = h.emg_feature_dim
            flat = ad.reshape(feat_stack, (bsz * t * N_EMG_CHANNELS, fdim))
            keys = ad.reshape(ad.matmul(flat, p["attn.wk"]),
                              (bsz, t, N_EMG_CHANNELS, h.attn_dim))
            values = ad.reshape(ad.matmul(flat, p["attn.wv"]),
                                (bsz, t, N_EMG_CHANNELS, fdim))
            scores = ad.tensor_sum(
                ad.mul(ad.reshape(q, (bsz, t, 1, h.attn_dim)), keys), axis=3)
            scores = ad.mul(scores, 1.0 / np.sqrt(h.attn_dim))
            attn = ad.softmax(scores, axis=2)                    # (B, T, 4)
            context = ad.tensor_sum(
                ad.mul(ad.reshape(attn, (bsz, t, N_EMG_CHANNELS, 1)), values), axis=2)

            extra = ad.concat([context, kin_seq], axis=2)
            proj = ad.add(
                ad.add(self._seq_matmul(emg_seq, p["emg.lstm1.wx"]),
                       self._seq_matmul(extra, p["kin.lstm1_extra.wx"])),
                p["emg.lstm1.b"])
        else:
            proj = ad.add(self._seq_matmul(emg_seq, p["emg.lstm1.wx"]), p["emg.lstm1.b"])

        seq1 = self._lstm(proj, p["emg.lstm1.wh"], h.lstm1_hidden, True)
        proj2 = ad.add(self._seq_matmul(seq1, p["emg.lstm2.wx"]), p["emg.lstm2.b"])
        last = self._lstm(proj2, p["emg.lstm2.wh"], h.lstm2_hidden, False)

        if scenario_uses_forces(self.scenario):
            fx = Tensor(batch["forces"])
            y = ad.relu(ad.conv1d(fx, p["force.conv1.w"], p["force.conv1.b"],
                                  stride=h.conv1_stride))
            y = ad.relu(ad.conv1d(y, p["force.conv2.w"], p["force.conv2.b"],
                                  stride=h.conv2_stride))
            pooled = ad.mean(y, axis=2)  # (B, force_feature_dim)
            last = ad.concat([last, pooled], axis=1)

        pred = ad.add(ad.matmul(last, p["head.w"]), p["head.b"])
        return pred, attn

    def forward(self, batch_or_examples):
        """Predictions in degrees (de-standardized) plus attention weights."""
        if isinstance(batch_or_examples, (list, tuple)):
            batch = batch_arrays(batch_or_examples)
        else:
            batch = batch_or_examples
        if self.target_mean is None or self.target_std is None:
            raise ConfigError("target normalization stats are unset; train the "
                              "model or call set_target_stats first")
        with ad.no_grad():
            pred_std, attn = self.forward_graph(batch)
        degrees = pred_std.data * self.target_std + self.target_mean
        return degrees, (attn.data if attn is not None else None)


def build_model(scenario: str, hyper: Optional[ModelHyper] = None, seed: int = 0) -> ModelGraph:
    """Construct a scenario model with seeded fan-in uniform initialization.

    Tensors are seeded per name, so two scenarios built from the same seed
    share bit-identical values for the tensors they have in common.
    """
    validate_scenario(scenario)
    hyper = hyper if hyper is not None else ModelHyper()
    params: dict[str, Tensor] = {}
    group_of: dict[str, str] = {}
    for name, group, shape, init in _param_specs(scenario, hyper):
        params[name] = Tensor(_init_tensor(name, shape, init, seed, hyper),
                              requires_grad=True, op=name)
        group_of[name] = group
    model = ModelGraph(scenario, hyper, params, group_of)
    model.meta["build_seed"] = seed
    total = count_parameters(model)["total"]
    if total >= PARAM_BUDGET:
        raise InvalidSpecError(
            f"{scenario} model has {total} parameters, over the {PARAM_BUDGET} budget")
    return model


def count_parameters(model: ModelGraph) -> dict:
    """Exact scalar counts per group plus the total."""
    counts = {g: 0 for g in model.groups}
    for name, p in model.params.items():
        counts[model.group_of[name]] += p.size
    counts["total"] = sum(counts[g] for g in model.groups)
    return counts


def set_group_training(model: ModelGraph, group: str, trainable: bool,
                       lr_scale: Optional[float] = None) -> ModelGraph:
    """Toggle a parameter group's trainability and learning-rate scale."""
    if group not in model.trainable:
        raise ConfigError(
            f"unknown parameter group {group!r}; model has {model.groups}")
    model.trainable[group] = bool(trainable)
    if lr_scale is not None:
        if lr_scale <= 0:
            raise ConfigError("lr_scale must be positive")
        model.lr_scale[group] = float(lr_scale)
    return model
