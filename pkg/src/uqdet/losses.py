"""Pure numerical training losses: entropy-regularized BCE and baselines.

The headline loss adds a per-sample entropy term weighted by beta times
the sample's uncertainty score to the binary cross-entropy mean. Two sign
conventions exist in the wild, so both are implemented: `literal` adds
the weighted entropy (a penalty), `max_entropy` subtracts it (a bonus).
All functions clamp probabilities to [1e-7, 1 - 1e-7] and use natural
logs throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_EPS = 1e-7

SIGN_LITERAL = "literal"
SIGN_MAX_ENTROPY = "max_entropy"


def _clamp(probs) -> np.ndarray:
    return np.clip(np.asarray(probs, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)


@dataclass(frozen=True, eq=False)
class LossBatch:
    """Aligned per-item inputs: predicted probs, 0/1 targets, uncertainty scores."""

    probs: np.ndarray
    targets: np.ndarray
    scores: np.ndarray
    beta: float = 0.0
    sign_mode: str = SIGN_LITERAL

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if not (probs.ndim == targets.ndim == scores.ndim == 1):
            raise ValueError("probs, targets, and scores must be 1-dimensional")
        if not (probs.shape == targets.shape == scores.shape):
            raise ValueError(f"length mismatch: probs {probs.shape}, "
                             f"targets {targets.shape}, scores {scores.shape}")
        if probs.size < 1:
            raise ValueError("batch is empty")
        if not np.all((targets == 0.0) | (targets == 1.0)):
            raise ValueError("targets must be 0 or 1")
        if np.any(scores < 0.0) or np.any(scores > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.sign_mode not in (SIGN_LITERAL, SIGN_MAX_ENTROPY):
            raise ValueError(f"unknown sign_mode {self.sign_mode!r}")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "scores", scores)

    def __len__(self) -> int:
        return self.probs.size

    @property
    def sign(self) -> float:
        return 1.0 if self.sign_mode == SIGN_LITERAL else -1.0


def bernoulli_entropy(probs) -> np.ndarray | float:
    """Entropy of a Bernoulli in nats: -p ln p - (1-p) ln(1-p)."""
    p = _clamp(probs)
    out = -(p * np.log(p) + (1.0 - p) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def mean_bce(probs, targets) -> float:
    """Mean binary cross-entropy in nats."""
    p = _clamp(probs)
    t = np.asarray(targets, dtype=np.float64)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log1p(-p))))


def ua_entropy_loss(batch: LossBatch) -> float:
    """Mean BCE plus/minus beta times the mean of score-weighted entropies."""
    p = _clamp(batch.probs)
    bce = mean_bce(p, batch.targets)
    regularizer = batch.beta * float(np.mean(batch.scores * bernoulli_entropy(p)))
    return bce + batch.sign * regularizer


def constant_entropy_loss(probs, targets, beta: float,
                          sign_mode: str = SIGN_LITERAL) -> float:
    """The entropy-regularized loss with every uncertainty score fixed to 1."""
    probs = np.asarray(probs, dtype=np.float64)
    return ua_entropy_loss(LossBatch(probs=probs, targets=targets,
                                     scores=np.ones_like(probs), beta=beta,
                                     sign_mode=sign_mode))


def focal_loss(probs, targets, gamma: float) -> float:
    """Mean of -(1 - p_t)^gamma * ln(p_t) with p_t the true-class probability."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    p = _clamp(probs)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: probs {p.shape}, targets {t.shape}")
    p_t = np.where(t == 1.0, p, 1.0 - p)
    return float(np.mean(-((1.0 - p_t) ** gamma) * np.log(p_t)))


def loss_gradient(batch: LossBatch) -> np.ndarray:
    """Analytic d(loss)/d(prob) per item for the entropy-regularized loss.

    Evaluated at the clamped probabilities; matches central finite
    differences of `ua_entropy_loss` at interior points.
    """
    p = _clamp(batch.probs)
    t = batch.targets
    n = p.size
    grad_bce = (1.0 - t) / (1.0 - p) - t / p
    grad_entropy = np.log1p(-p) - np.log(p)
    return (grad_bce + batch.sign * batch.beta * batch.scores * grad_entropy) / n
