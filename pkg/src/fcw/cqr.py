"""Split-conformal calibration of the quantile branch.

Nonconformity scores are E = max(L - y, y - U); the correction is the
ceil((1-a)(1+1/n) * n)-th order statistic of the calibration scores,
clamped to the maximum when the level exceeds one. One correction is kept
per (prediction-step, coordinate) pair, pooled across vehicles.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import HstanModel, PredictionBatch, WindowSample, forward_batch, outputs_to_predictions, prepare_batch


def nonconformity(lower, upper, y):
    """max(L - y, y - U); negative when y lies strictly inside (L, U)."""
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.maximum(lower - y, y - upper)


@dataclass
class ConformalCorrection:
    """Per-dimension correction (meters); may be negative when raw intervals over-cover."""

    q: np.ndarray  # (T', 2) or any broadcastable shape
    alpha: float
    n_cal: int


def calibrate_scores(scores: np.ndarray, alpha: float) -> float:
    """Finite-sample conformal quantile of a 1-D score sample."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    n = scores.size
    if n < 1:
        raise ValueError("empty calibration set")
    level = (1.0 - alpha) * (1.0 + 1.0 / n)
    k = math.ceil(level * n)
    k = min(max(k, 1), n)  # level > 1 clamps to the max score
    return float(np.sort(scores)[k - 1])


def calibrate(lower: np.ndarray, upper: np.ndarray, targets: np.ndarray, alpha: float) -> ConformalCorrection:
    """Calibrate per trailing-dimension streams.

    Inputs have shape (n_examples, *dims); a separate correction is fitted
    for every entry of ``dims`` by pooling over the example axis.
    """
    scores = nonconformity(lower, upper, targets)
    if scores.ndim == 1:
        q = np.array(calibrate_scores(scores, alpha))
    else:
        flat = scores.reshape(scores.shape[0], -1)
        q = np.array([calibrate_scores(flat[:, j], alpha) for j in range(flat.shape[1])])
        q = q.reshape(scores.shape[1:])
    return ConformalCorrection(q=q, alpha=alpha, n_cal=scores.shape[0])


def conformal_interval(lower, upper, corr: ConformalCorrection):
    """Widen (or shrink) raw intervals by the correction; crossings collapse to midpoint."""
    lo = np.asarray(lower, dtype=np.float64) - corr.q
    up = np.asarray(upper, dtype=np.float64) + corr.q
    crossed = lo > up
    if np.any(crossed):
        mid = 0.5 * (lo + up)
        lo = np.where(crossed, mid, lo)
        up = np.where(crossed, mid, up)
    return lo, up


def empirical_coverage(lower, upper, targets) -> tuple[float, float]:
    """Fraction of targets inside [L, U] (inclusive), and mean interval width."""
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if lower.shape != targets.shape or upper.shape != targets.shape:
        raise ValueError(f"count mismatch: {lower.shape}, {upper.shape}, {targets.shape}")
    inside = (lower <= targets) & (targets <= upper)
    return float(inside.mean()), float((upper - lower).mean())


# ---------------------------------------------------------------------------
# Model-level calibration
# ---------------------------------------------------------------------------


def raw_intervals(model: HstanModel, windows: list[WindowSample]):
    """Stack raw lower/upper/target trajectories over calibration windows.

    Returns arrays of shape (n_vehicles_total, T', 2); each vehicle in each
    window is one pooled example.
    """
    lowers, uppers, targets = [], [], []
    for w in windows:
        if w.target_abs is None:
            raise ValueError("calibration windows need ground-truth futures")
        batch = prepare_batch([w], model.config)
        out = forward_batch(model, batch)
        pred = outputs_to_predictions(out, batch, model.config)[0]
        lowers.append(pred.lower)
        uppers.append(pred.upper)
        targets.append(w.target_abs.transpose(1, 0, 2))  # (N, T', 2)
    return np.concatenate(lowers), np.concatenate(uppers), np.concatenate(targets)


def calibrate_model(model: HstanModel, windows: list[WindowSample], alpha: float) -> ConformalCorrection:
    lower, upper, targets = raw_intervals(model, windows)
    return calibrate(lower, upper, targets, alpha)


def apply_correction(pred: PredictionBatch, corr: ConformalCorrection | None) -> PredictionBatch:
    if corr is None:
        lo, up = np.minimum(pred.lower, pred.upper), np.maximum(pred.lower, pred.upper)
        return PredictionBatch(point=pred.point, lower=lo, upper=up, conformal_applied=False)
    lo, up = conformal_interval(pred.lower, pred.upper, corr)
    return PredictionBatch(point=pred.point, lower=lo, upper=up, conformal_applied=True)


def save_correction(path: str | Path, corr: ConformalCorrection, fingerprint: str = "") -> None:
    payload = {
        "alpha": corr.alpha,
        "n_cal": corr.n_cal,
        "q_shape": list(np.asarray(corr.q).shape),
        "q": np.asarray(corr.q).reshape(-1).tolist(),
        "fingerprint": fingerprint,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1))


def load_correction(path: str | Path) -> ConformalCorrection:
    payload = json.loads(Path(path).read_text())
    q = np.asarray(payload["q"], dtype=np.float64).reshape(payload["q_shape"])
    return ConformalCorrection(q=q, alpha=payload["alpha"], n_cal=payload["n_cal"])
