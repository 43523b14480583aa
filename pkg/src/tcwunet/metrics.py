"""Evaluation metrics: SDR loss, weighted SDR, SI-SNR, MSE and real-time factor."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, ShapeError

SI_SNR_CAP_DB = 100.0


@dataclass
class MetricReport:
    name: str
    value: float
    extras: dict[str, float] = field(default_factory=dict)
    degenerate: bool = False

    def to_line(self) -> str:
        parts = [f"{self.name}={self.value!r}"]
        parts += [f"{self.name}.{k}={v!r}" for k, v in sorted(self.extras.items())]
        if self.degenerate:
            parts.append(f"{self.name}.degenerate=1")
        return "\n".join(parts)

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "extras": dict(self.extras),
                "degenerate": self.degenerate}


def reports_to_text(reports) -> str:
    return "\n".join(r.to_line() for r in reports) + "\n"


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)


def _pair(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ShapeError(f"length mismatch: {y.size} vs {y_hat.size}")
    return y, y_hat


def sdr_loss(y, y_hat) -> float:
    """Negative cosine similarity ``-<y, y_hat> / (|y| |y_hat|)``, in [-1, 1]."""
    y, y_hat = _pair(y, y_hat)
    denom = np.linalg.norm(y) * np.linalg.norm(y_hat)
    if denom == 0.0:
        raise DegenerateInputError("SDR loss is undefined for a zero-norm signal")
    return float(np.clip(-np.dot(y, y_hat) / denom, -1.0, 1.0))


def wsdr_loss(x, y, y_hat) -> MetricReport:
    """Weighted SDR loss of estimate ``y_hat`` for clean ``y`` inside mixture ``x``.

    The noise is ``z = x - y`` and its estimate ``x - y_hat``; the speech term
    is weighted by ``alpha = |y|^2 / (|y|^2 + |z|^2)``.  A term whose cosine is
    undefined (a zero-norm vector) contributes 0 and flags the report.
    """
    x, y = _pair(x, y)
    _, y_hat = _pair(x, y_hat)
    z = x - y
    z_hat = x - y_hat
    ey, ez = float(np.dot(y, y)), float(np.dot(z, z))
    if ey + ez == 0.0:
        raise DegenerateInputError("wSDR is undefined when both speech and noise are silent")
    alpha = ey / (ey + ez)
    degenerate = False
    terms = []
    for ref, est, weight in ((y, y_hat, alpha), (z, z_hat, 1.0 - alpha)):
        if weight == 0.0:
            terms.append(0.0)
            continue
        try:
            terms.append(weight * sdr_loss(ref, est))
        except DegenerateInputError:
            degenerate = True
            terms.append(0.0)
    value = float(np.clip(terms[0] + terms[1], -1.0, 1.0))
    return MetricReport("wsdr", value, {"alpha": alpha}, degenerate)


def si_snr(y, y_hat) -> float:
    """Scale-invariant SNR in dB, clamped to ``±100``."""
    y, y_hat = _pair(y, y_hat)
    y = y - y.mean()
    y_hat = y_hat - y_hat.mean()
    ey = float(np.dot(y, y))
    if ey == 0.0:
        raise DegenerateInputError("SI-SNR needs a non-silent reference")
    target = np.dot(y_hat, y) / ey * y
    residual = y_hat - target
    num, den = float(np.dot(target, target)), float(np.dot(residual, residual))
    if den == 0.0:
        return SI_SNR_CAP_DB if num > 0.0 else -SI_SNR_CAP_DB
    if num == 0.0:
        return -SI_SNR_CAP_DB
    return float(np.clip(10.0 * math.log10(num / den), -SI_SNR_CAP_DB, SI_SNR_CAP_DB))


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean((y - y_hat) ** 2)) if y.size else 0.0


def rtf(processing_seconds: float, audio_seconds: float) -> float:
    """Real-time factor; below 1 means faster than real time."""
    if not audio_seconds > 0:
        raise ValueError(f"audio duration must be positive, got {audio_seconds}")
    if processing_seconds < 0:
        raise ValueError(f"processing time must be non-negative, got {processing_seconds}")
    return processing_seconds / audio_seconds
