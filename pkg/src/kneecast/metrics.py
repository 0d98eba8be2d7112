"""Evaluation metrics: NMAE, NRMSE, and R^2 with explicit normalization.

Errors are normalized by the peak-to-peak range of the flattened
evaluation ground truth; the range is always reported so any alternative
normalization can be re-derived from the same report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, MetricError, ShapeError


@dataclass
class MetricsReport:
    nmae: float
    nrmse: float
    r2: float
    normalization_range_deg: float
    n_examples: int
    horizon: int
    per_step: Optional[dict] = None

    def to_dict(self) -> dict:
        d = {
            "nmae": self.nmae,
            "nrmse": self.nrmse,
            "r2": self.r2,
            "normalization_range_deg": self.normalization_range_deg,
            "n_examples": self.n_examples,
            "horizon": self.horizon,
        }
        if self.per_step is not None:
            d["per_step"] = self.per_step
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def text_table(self) -> str:
        rows = [
            ("nmae", f"{self.nmae:.6f}"),
            ("nrmse", f"{self.nrmse:.6f}"),
            ("r2", f"{self.r2:.6f}"),
            ("range_deg", f"{self.normalization_range_deg:.4f}"),
            ("examples", str(self.n_examples)),
            ("horizon", str(self.horizon)),
        ]
        width = max(len(k) for k, _ in rows)
        vwidth = max(len(v) for _, v in rows)
        lines = [f"{k:<{width}}  {v:>{vwidth}}" for k, v in rows]
        if self.per_step is not None:
            lines.append("")
            lines.append("step  nmae      nrmse     r2")
            for i, (a, r, q) in enumerate(zip(self.per_step["nmae"],
                                              self.per_step["nrmse"],
                                              self.per_step["r2"]), start=1):
                lines.append(f"{i:>4}  {a:.6f}  {r:.6f}  {q:+.4f}")
        return "\n".join(lines) + "\n"


def _as_2d(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        return arr[:, None]
    return arr


def evaluate_metrics(pred, truth) -> MetricsReport:
    """Pooled NMAE / NRMSE / R^2 over all N*H entries plus per-step curves.

    NMAE = mean|e| / R and NRMSE = rms(e) / R with R the peak-to-peak
    range of the flattened truth; R^2 = 1 - SSres/SStot.
    """
    pred, truth = _as_2d(pred), _as_2d(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"pred shape {pred.shape} != truth shape {truth.shape}")
    n, horizon = truth.shape
    if n < 2:
        raise ContractError(f"need at least 2 evaluation examples, got {n}")
    rng = float(truth.max() - truth.min())
    if rng == 0.0:
        raise MetricError("metrics undefined: ground truth is constant (range 0)")

    err = pred - truth
    nmae = float(np.abs(err).mean() / rng)
    nrmse = float(np.sqrt((err ** 2).mean()) / rng)
    ss_res = float((err ** 2).sum())
    ss_tot = float(((truth - truth.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot

    per_step = None
    if horizon > 1:
        step_nmae, step_nrmse, step_r2 = [], [], []
        for hcol in range(horizon):
            e = err[:, hcol]
            y = truth[:, hcol]
            step_nmae.append(float(np.abs(e).mean() / rng))
            step_nrmse.append(float(np.sqrt((e ** 2).mean()) / rng))
            tot = float(((y - y.mean()) ** 2).sum())
            step_r2.append(1.0 - float((e ** 2).sum()) / tot if tot > 0 else float("nan"))
        per_step = {"nmae": step_nmae, "nrmse": step_nrmse, "r2": step_r2}

    return MetricsReport(nmae=nmae, nrmse=nrmse, r2=r2,
                         normalization_range_deg=rng,
                         n_examples=n, horizon=horizon, per_step=per_step)


def persistence_baseline(examples: Sequence) -> np.ndarray:
    """Last-observed-angle predictor: repeat the window's final knee angle."""
    if not examples:
        raise ContractError("no examples for baseline")
    horizon = examples[0].horizon
    last = np.array([ex.last_knee_deg for ex in examples])
    return np.repeat(last[:, None], horizon, axis=1)


def truth_matrix(examples: Sequence) -> np.ndarray:
    return np.stack([ex.target for ex in examples])
