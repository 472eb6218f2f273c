"""Distances between predicted distributions and the uniform guess.

The probability arguments may be a single vector or a stack of them (last
axis = classes); the distance functions then return one value per row.
Natural logarithms throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .data import LabeledDataset
from .errors import InputContractError, NumericContractError


@dataclass(frozen=True)
class UniformReference:
    n_classes: int

    def __post_init__(self):
        if self.n_classes < 2:
            raise InputContractError("need at least 2 classes")

    @property
    def vector(self) -> np.ndarray:
        return np.full(self.n_classes, 1.0 / self.n_classes)


def _probs(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] < 2:
        raise InputContractError("probability vectors need at least 2 entries")
    return theta


def mse_to_uniform(theta):
    """``(1/K) * sum_j (theta_j - 1/K)**2``; 0 at uniform, ``(K-1)/K**2`` at a vertex."""
    theta = _probs(theta)
    K = theta.shape[-1]
    dev = theta - 1.0 / K
    return (dev * dev).sum(axis=-1) / K


def _positive(theta) -> np.ndarray:
    theta = _probs(theta)
    if np.any(theta <= 0):
        raise NumericContractError("probability entries must be strictly positive")
    return theta


def ce_to_uniform(theta):
    """Cross-entropy of the prediction against the uniform reference, ``-(1/K) sum ln theta_j``."""
    theta = _positive(theta)
    return -np.log(theta).mean(axis=-1)


def kl_uniform(theta):
    """``KL(uniform || theta) = (1/K) sum ln((1/K) / theta_j)``."""
    theta = _positive(theta)
    K = theta.shape[-1]
    return np.log((1.0 / K) / theta).mean(axis=-1)


def lemma1_residual(theta):
    """``|CE(uniform, theta) - KL(uniform || theta) - ln K|``; zero up to rounding."""
    theta = _positive(theta)
    K = theta.shape[-1]
    return np.abs(ce_to_uniform(theta) - kl_uniform(theta) - np.log(K))


DISTANCES: dict[str, Callable] = {
    "mse": mse_to_uniform,
    "ce": ce_to_uniform,
    "kl": kl_uniform,
}


def _distance(name_or_fn):
    if callable(name_or_fn):
        return getattr(name_or_fn, "__name__", "custom"), name_or_fn
    try:
        return name_or_fn, DISTANCES[name_or_fn]
    except KeyError:
        raise InputContractError(f"unknown distance {name_or_fn!r}") from None


def class_prediction_distributions(predictions, labels, n_classes: int) -> np.ndarray:
    """Row ``k-1`` is the histogram of hard predictions over samples whose true label is ``k``."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1 or predictions.size == 0:
        raise InputContractError("predictions and labels must be equal-length, non-empty 1-D arrays")
    for arr, what in ((predictions, "prediction"), (labels, "label")):
        if np.any(arr < 1) or np.any(arr > n_classes):
            raise InputContractError(f"{what}s must lie in 1..{n_classes}")
    counts = np.zeros((n_classes, n_classes))
    np.add.at(counts, (labels - 1, predictions - 1), 1.0)
    totals = counts.sum(axis=1)
    for k in range(n_classes):
        if totals[k] == 0:
            raise InputContractError(f"class {k + 1} has no samples; its prediction distribution is undefined")
    return counts / totals[:, None]


def averaged_prediction_randomness(predictions, labels, n_classes: int, distance="mse") -> float:
    """Class-frequency-weighted distance of each class's prediction histogram from uniform."""
    _, fn = _distance(distance)
    P = class_prediction_distributions(predictions, labels, n_classes)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.bincount(labels - 1, minlength=n_classes) / labels.size
    if distance in ("ce", "kl") and np.any(P == 0):
        raise NumericContractError("a class histogram has an empty bin; CE/KL are undefined")
    return float(np.dot(weights, fn(P)))


def sample_wise_randomness(probs, distance="mse") -> float:
    """Mean per-sample distance from uniform of a stack of probability vectors."""
    _, fn = _distance(distance)
    probs = _probs(probs)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise InputContractError("expected a non-empty (N, K) probability matrix")
    return float(np.mean(fn(probs)))


def averaged_sample_wise_randomness(model: nn.ModelState, data: LabeledDataset,
                                    distance="mse") -> float:
    return sample_wise_randomness(nn.predict_proba(model, data.x), distance)


@dataclass(frozen=True, eq=False)
class RandomnessReport:
    r_p: float
    r_s: float
    class_distributions: np.ndarray = field(repr=False)
    distance: str = "mse"

    def as_row(self) -> dict[str, float]:
        return {"r_p": self.r_p, "r_s": self.r_s}


def randomness_report(model: nn.ModelState, data: LabeledDataset, distance="mse") -> RandomnessReport:
    name, _ = _distance(distance)
    probs = nn.predict_proba(model, data.x)
    preds = np.argmax(probs, axis=1) + 1
    return RandomnessReport(
        r_p=averaged_prediction_randomness(preds, data.y, data.n_classes, distance),
        r_s=sample_wise_randomness(probs, distance),
        class_distributions=class_prediction_distributions(preds, data.y, data.n_classes),
        distance=name,
    )
