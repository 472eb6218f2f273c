"""Noise-generator training and noise-bank emission.

Three surrogate training schemes share one outer loop (minibatch, craft the
training inputs, one SGD step) and differ only in how the inputs are crafted:

``em``
    error-minimizing noise only (min-min).
``rem``
    error-minimizing noise against the worst case inside the adversarial ball;
    every descent step on the protective noise is preceded by a fresh
    adversarial search.
``two-stage``
    error-minimizing noise first, then an adversarial search around the
    protected sample; the update adds ``asr_weight`` times the squared
    distance from uniform of the surrogate's predictions on the clean batch.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .data import LabeledDataset
from .errors import ConfigError, InputContractError, NumericContractError
from .perturb import (PerturbationBudget, is_feasible, pgd_error_maximize,
                      pgd_error_minimize, pgd_step)
from .randomness import mse_to_uniform

log = logging.getLogger(__name__)

METHODS = ("two-stage", "em", "rem")

# seed salts keep the random streams of different stages independent
_STAGE1, _STAGE2, _EMIT = 1, 2, 3


@dataclass(frozen=True)
class GeneratorConfig:
    arch: nn.Architecture
    iterations: int
    lr: float
    batch_size: int
    stage1: PerturbationBudget
    stage2: PerturbationBudget
    asr_weight: float = 1.0
    method: str = "two-stage"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.arch, str):
            object.__setattr__(self, "arch", nn.Architecture.parse(self.arch))
        problems = []
        if self.iterations < 0:
            problems.append("iterations must be >= 0")
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not self.asr_weight >= 0:
            problems.append("asr_weight must be >= 0")
        if self.method not in METHODS:
            problems.append(f"method must be one of {METHODS}")
        if self.stage2.radius > self.stage1.radius:
            problems.append(f"adversarial radius {self.stage2.radius} exceeds "
                            f"protective radius {self.stage1.radius}")
        if problems:
            raise ConfigError("; ".join(problems), problems)

    @property
    def n_classes(self) -> int:
        return self.arch.n_classes


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    ce_loss: float
    asr_term: float
    loss: float
    clean_acc: float
    r_s: float


@dataclass
class GeneratorTrace:
    records: list[TraceRecord] = field(default_factory=list)
    seconds: float = field(default=0.0, compare=False)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iter,ce_loss,asr_term,clean_acc,r_s\n")
            for r in self.records:
                fh.write(f"{r.iteration},{r.ce_loss!r},{r.asr_term!r},{r.clean_acc!r},{r.r_s!r}\n")


@dataclass(frozen=True, eq=False)
class NoiseBank:
    """Per-sample protective noise, row ``i`` belonging to sample ``i``."""

    dataset_hash: int
    deltas: np.ndarray
    budget: PerturbationBudget
    method: str
    seed: int

    def __post_init__(self):
        d = np.array(self.deltas, dtype=np.float64, copy=True)
        if d.ndim < 2:
            raise InputContractError("deltas must be (N, *sample_shape)")
        d.setflags(write=False)
        object.__setattr__(self, "deltas", d)

    def __len__(self):
        return self.deltas.shape[0]

    @property
    def radius(self) -> float:
        return self.budget.radius

    @property
    def sample_shape(self) -> tuple[int, ...]:
        return self.deltas.shape[1:]

    def same_as(self, other: "NoiseBank") -> bool:
        return (self.dataset_hash == other.dataset_hash and self.budget == other.budget
                and self.method == other.method and self.seed == other.seed
                and self.deltas.shape == other.deltas.shape
                and self.deltas.tobytes() == other.deltas.tobytes())

    def feasible_for(self, data: LabeledDataset) -> bool:
        return is_feasible(data.x, self.deltas.reshape(data.x.shape), self.radius, data.bounds)


def minibatches(n: int, batch_size: int, seed: int):
    """Endless index batches: a fresh permutation per epoch, no replacement within it."""
    rng = np.random.default_rng([int(seed), 0])
    while True:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield perm[start:start + batch_size]


def _check_data(data: LabeledDataset, arch: nn.Architecture):
    if data.dim != arch.n_inputs or data.n_classes != arch.n_classes:
        raise InputContractError(
            f"dataset (D={data.dim}, K={data.n_classes}) does not match architecture {arch}")


def _craft_em(model, cfg, xb, yb, idx, it, bounds):
    du = pgd_error_minimize(model, xb, yb, cfg.stage1, bounds,
                            seed=(cfg.seed, it, _STAGE1), indices=idx).delta
    return xb + du


def _craft_two_stage(model, cfg, xb, yb, idx, it, bounds):
    xp = _craft_em(model, cfg, xb, yb, idx, it, bounds)
    da = pgd_error_maximize(model, xp, yb, cfg.stage2, bounds,
                            seed=(cfg.seed, it, _STAGE2), indices=idx).delta
    return xp + da


def _craft_rem(model, cfg, xb, yb, idx, it, bounds):
    s1, s2 = cfg.stage1, cfg.stage2
    # zero-step budget only to reuse the initialisation logic
    du = pgd_error_minimize(model, xb, yb, replace(s1, steps=0), bounds,
                            seed=(cfg.seed, it, _STAGE1), indices=idx).delta
    for k in range(1, s1.steps + 1):
        da = pgd_error_maximize(model, xb + du, yb, s2, bounds,
                                seed=(cfg.seed, it, _STAGE2, k), indices=idx).delta
        du = pgd_step(model, xb, yb, du, s1.radius, s1.step_size, ascend=False,
                      bounds=bounds, offset=da, iteration=k)
    xp = xb + du
    da = pgd_error_maximize(model, xp, yb, s2, bounds,
                            seed=(cfg.seed, it, _STAGE2, 0), indices=idx).delta
    return xp + da


_CRAFTERS = {"em": _craft_em, "rem": _craft_rem, "two-stage": _craft_two_stage}


def train_generator(data: LabeledDataset, cfg: GeneratorConfig):
    """Train a surrogate with ``cfg.method``; returns ``(model, trace)``."""
    _check_data(data, cfg.arch)
    craft = _CRAFTERS[cfg.method]
    weight = cfg.asr_weight if cfg.method == "two-stage" else 0.0
    spec = nn.LossSpec(weight)
    model = nn.init_model(cfg.arch, cfg.seed)
    trace = GeneratorTrace()
    start = time.perf_counter()
    batches = minibatches(len(data), cfg.batch_size, cfg.seed)
    for it in range(1, cfg.iterations + 1):
        idx = next(batches)
        xb, yb = data.x[idx], data.y[idx]
        try:
            inputs = craft(model, cfg, xb, yb, idx, it, data.bounds)
            res = nn.loss_and_grads(model, inputs, yb, spec, clean_x=xb)
            model = nn.sgd_update(model, res.grads, cfg.lr)
        except NumericContractError as exc:
            raise NumericContractError(f"generator iteration {it}: {exc}") from exc
        if not np.all(np.isfinite(model.flat())):
            raise NumericContractError(f"generator iteration {it}: parameters diverged")
        probs = nn.predict_proba(model, data.x)
        acc = 100.0 * float(np.mean(np.argmax(probs, axis=1) + 1 == data.y))
        trace.records.append(TraceRecord(it, res.ce, res.asr, res.loss, acc,
                                         float(np.mean(mse_to_uniform(probs)))))
    trace.seconds = time.perf_counter() - start
    log.info("%s generator: %d iterations in %.2fs", cfg.method, cfg.iterations, trace.seconds)
    return model, trace


def _require(cfg: GeneratorConfig, method: str):
    if cfg.method != method:
        raise ConfigError(f"config method is {cfg.method!r}, expected {method!r}", ["method"])


def train_two_stage_generator(data: LabeledDataset, cfg: GeneratorConfig):
    _require(cfg, "two-stage")
    return train_generator(data, cfg)


def train_em_generator(data: LabeledDataset, cfg: GeneratorConfig):
    _require(cfg, "em")
    return train_generator(data, cfg)


def train_rem_generator(data: LabeledDataset, cfg: GeneratorConfig):
    _require(cfg, "rem")
    return train_generator(data, cfg)


def emit_noise_bank(surrogate: nn.ModelState, data: LabeledDataset, budget: PerturbationBudget,
                    *, seed: int = 0, method: str = "two-stage", batch_size: int = 256) -> NoiseBank:
    """Final error-minimizing pass of every sample against the frozen surrogate."""
    _check_data(data, surrogate.arch)
    n = len(data)
    deltas = np.empty_like(data.x)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        deltas[idx] = pgd_error_minimize(surrogate, data.x[idx], data.y[idx], budget, data.bounds,
                                         seed=(seed, _EMIT), indices=idx).delta
    return NoiseBank(data.identity_hash(), deltas, budget, method, seed)
