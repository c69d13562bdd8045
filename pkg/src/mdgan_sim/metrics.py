"""Sample quality, detection quality, swap accounting and overhead timing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

COV_EPS = 1e-6


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray


def fit_gaussian(samples: np.ndarray, eps: float = COV_EPS) -> GaussianFit:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise ValueError("samples must be a 2-D array")
    n, d = x.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} samples for a {d}-D fit, got {n}")
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    cov = 0.5 * (cov + cov.T) + eps * np.eye(d)
    return GaussianFit(mean, cov)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh(0.5 * (m + m.T))
    if w.min() < -1e-8 * max(1.0, abs(w).max()):
        raise ValueError("covariance is not positive semi-definite")
    return (u * np.sqrt(np.clip(w, 0.0, None))) @ u.T


def frechet_from_moments(mu1, cov1, mu2, cov2) -> float:
    """||mu1 - mu2||^2 + tr(cov1 + cov2 - 2 (cov1 cov2)^(1/2)).

    The trace of the product root equals that of the symmetric matrix
    ``cov1^(1/2) cov2 cov1^(1/2)``, whose eigenvalues are real and non-negative.
    """
    mu1, mu2 = np.atleast_1d(mu1).astype(float), np.atleast_1d(mu2).astype(float)
    cov1, cov2 = np.atleast_2d(cov1).astype(float), np.atleast_2d(cov2).astype(float)
    r1 = _psd_sqrt(cov1)
    inner = r1 @ cov2 @ r1
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    tr_root = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_root)
    return max(value, 0.0)


def frechet_distance(real: np.ndarray, generated: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two sample sets (raw features)."""
    a = fit_gaussian(real)
    b = fit_gaussian(generated)
    return frechet_from_moments(a.mean, a.cov, b.mean, b.cov)


def precision_recall(flagged: Iterable[int], truth: Iterable[int]) -> tuple[float | None, float | None]:
    """Free-riders are the positive class. ``None`` where the ratio is undefined."""
    flagged, truth = set(flagged), set(truth)
    hit = len(flagged & truth)
    precision = hit / len(flagged) if flagged else None
    recall = hit / len(truth) if truth else None
    return precision, recall


@dataclass(frozen=True)
class SwapRecord:
    round: int
    a: int
    b: int
    role_a: str  # "benign" or "free_rider"
    role_b: str
    executed: bool
    gated: bool

    def to_json(self) -> dict:
        return {
            "a": self.a, "b": self.b, "role_a": self.role_a, "role_b": self.role_b,
            "executed": self.executed, "gated": self.gated,
        }


def swap_action_stats(records: Iterable[SwapRecord]) -> dict[str, float] | None:
    """Fractions of correct actions, wrong preventions and wrong permissions.

    Correct: executed benign-benign or free-rider pairs, prevented mixed pairs.
    Prevented free-rider pairs fall in none of the three buckets.
    """
    records = list(records)
    if not records:
        return None
    correct = wrong_prev = wrong_perm = 0
    for r in records:
        mixed = r.role_a != r.role_b
        if mixed:
            if r.executed:
                wrong_perm += 1
            else:
                correct += 1
        elif r.executed:
            correct += 1
        elif r.role_a == "benign":
            wrong_prev += 1
    n = len(records)
    return {"correct": correct / n, "wrong_prevention": wrong_prev / n, "wrong_permission": wrong_perm / n}


class PhaseTimer:
    """Accumulates wall-clock milliseconds per named phase."""

    def __init__(self):
        self.ms: dict[str, float] = {}

    def measure(self, phase: str):
        return _Span(self, phase)

    def get(self, phase: str) -> float:
        return self.ms.get(phase, 0.0)

    def reset(self):
        self.ms.clear()


class _Span:
    def __init__(self, timer: PhaseTimer, phase: str):
        self.timer, self.phase = timer, phase

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        dt = (time.perf_counter() - self.t0) * 1000.0
        self.timer.ms[self.phase] = self.timer.ms.get(self.phase, 0.0) + dt
        return False


METRICS_COLUMNS = [
    "round", "fd", "precision", "recall", "correct_frac", "wrong_prevention_frac",
    "wrong_permission_frac", "defense_ms", "train_ms",
]


@dataclass
class MetricsRecord:
    round: int
    frechet_distance: float
    precision: float | None = None
    recall: float | None = None
    correct_frac: float | None = None
    wrong_prevention_frac: float | None = None
    wrong_permission_frac: float | None = None
    defense_ms: float = 0.0
    train_ms: float = 0.0
    extra: dict = field(default_factory=dict)

    def row(self, timing: bool = False) -> list[str]:
        """CSV cells. Wall-clock cells stay empty unless ``timing`` is set (keeps files reproducible)."""
        def fmt(v):
            return "" if v is None else repr(float(v))
        cells = [
            str(self.round), fmt(self.frechet_distance), fmt(self.precision), fmt(self.recall),
            fmt(self.correct_frac), fmt(self.wrong_prevention_frac), fmt(self.wrong_permission_frac),
        ]
        cells += [fmt(self.defense_ms), fmt(self.train_ms)] if timing else ["", ""]
        return cells
