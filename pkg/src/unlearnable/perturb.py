"""L-infinity perturbations and the two signed-gradient PGD loops.

All functions work on a batch ``(B, D)``; a single sample ``(D,)`` is also
accepted. Samples never interact: each row's iterates depend only on that row,
and random starts come from a generator seeded by ``(seed, sample index)``, so
splitting a batch across workers reproduces the serial result bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InputContractError, NumericContractError

INIT_MODES = ("zero", "uniform")


@dataclass(frozen=True)
class PerturbationBudget:
    radius: float
    step_size: float
    steps: int
    init: str = "zero"

    def __post_init__(self):
        if not self.radius >= 0:
            raise InputContractError(f"radius must be >= 0, got {self.radius}")
        if self.steps < 0:
            raise InputContractError(f"steps must be >= 0, got {self.steps}")
        if self.steps > 0 and not self.step_size > 0:
            raise InputContractError("step_size must be positive when steps > 0")
        if self.init not in INIT_MODES:
            raise InputContractError(f"init must be one of {INIT_MODES}")


@dataclass(frozen=True, eq=False)
class Perturbation:
    delta: np.ndarray
    budget: PerturbationBudget


def project_linf(delta, radius: float) -> np.ndarray:
    if radius < 0:
        raise InputContractError("radius must be >= 0")
    return np.clip(np.asarray(delta, dtype=np.float64), -radius, radius)


def clamp_to_bounds(x, delta, bounds=(0.0, 1.0), radius: float | None = None) -> np.ndarray:
    """Shrink ``delta`` toward zero until ``x + delta`` lies inside ``bounds``.

    The check is on the floating-point sum itself, so callers that form
    ``x + delta`` get an in-bounds value exactly, not just up to rounding.
    With ``radius`` the realised change ``(x + delta) - x`` is also kept
    within the radius.
    """
    x = np.asarray(x, dtype=np.float64)
    lo, hi = bounds
    d = np.clip(np.asarray(delta, dtype=np.float64), lo - x, hi - x)
    # hi - x and the sum itself may round outward by an ulp
    while True:
        s = x + d
        over, under = s > hi, s < lo
        if radius is not None:
            moved = s - x
            over |= (moved > radius) | (d > radius)
            under |= (moved < -radius) | (d < -radius)
        if not (over.any() or under.any()):
            return d
        # step the sum to its neighbouring float; stepping d by its own ulp can
        # take ~1e16 rounds when |d| is far below the spacing of x
        down = np.nextafter(s, -np.inf) - x
        up = np.nextafter(s, np.inf) - x
        d = np.where(over, np.minimum(down, np.nextafter(d, -np.inf)), d)
        d = np.where(under, np.maximum(up, np.nextafter(d, np.inf)), d)


def is_feasible(x, delta, radius: float, bounds=(0.0, 1.0)) -> bool:
    x = np.asarray(x, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    s = x + delta
    return bool(np.all(np.abs(delta) <= radius) and np.all(np.abs(s - x) <= radius)
                and np.all(s >= bounds[0]) and np.all(s <= bounds[1]))


def sample_seeds(seed, indices) -> list[np.random.Generator]:
    """One generator per sample, keyed by ``(*seed, index)``; ``seed`` is an int or tuple of ints."""
    base = [int(s) for s in np.atleast_1d(seed)]
    return [np.random.default_rng([*base, int(i)]) for i in indices]


def init_delta(x, budget: PerturbationBudget, bounds=(0.0, 1.0), *, seed=0,
               indices=None) -> np.ndarray:
    """Starting point: zeros, or per-sample uniform draws in ``[-radius, radius]``."""
    x = np.asarray(x, dtype=np.float64)
    if budget.init == "zero" or budget.radius == 0:
        return np.zeros_like(x)
    rows = x.reshape(-1, x.shape[-1])
    if indices is None:
        indices = range(rows.shape[0])
    if len(indices) != rows.shape[0]:
        raise InputContractError(f"{len(indices)} indices for {rows.shape[0]} samples")
    d = np.stack([g.uniform(-budget.radius, budget.radius, rows.shape[1])
                  for g in sample_seeds(seed, indices)])
    return clamp_to_bounds(rows, d, bounds, budget.radius).reshape(x.shape)


def pgd_step(model: nn.ModelState, x, y, delta, radius: float, step_size: float, *,
             ascend: bool, bounds=(0.0, 1.0), offset=None, iteration: int = 0) -> np.ndarray:
    """One signed step on the cross-entropy at ``x + delta (+ offset)``, projected.

    ``sign(0) = 0`` so flat coordinates stay where they are. Feasibility is
    enforced relative to ``x``.
    """
    inputs = x + delta if offset is None else x + delta + offset
    try:
        g = nn.loss_and_grads(model, inputs, y, wrt_input=True).input_grad
    except NumericContractError as exc:
        raise NumericContractError(f"PGD iteration {iteration}: {exc}") from exc
    if not np.all(np.isfinite(g)):
        raise NumericContractError(f"non-finite input gradient at PGD iteration {iteration}")
    step = step_size * np.sign(g)
    delta = delta + step if ascend else delta - step
    return clamp_to_bounds(x, project_linf(delta, radius), bounds, radius)


def _run(model, x, y, budget, bounds, seed, indices, ascend, offset=None):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    yb = np.atleast_1d(np.asarray(y))
    delta = init_delta(xb, budget, bounds, seed=seed, indices=indices)
    off = None if offset is None else np.asarray(offset, dtype=np.float64).reshape(xb.shape)
    for k in range(budget.steps):
        delta = pgd_step(model, xb, yb, delta, budget.radius, budget.step_size,
                         ascend=ascend, bounds=bounds, offset=off, iteration=k + 1)
    return Perturbation(delta[0] if single else delta, budget)


def pgd_error_minimize(model: nn.ModelState, x, y, budget: PerturbationBudget,
                       bounds=(0.0, 1.0), *, seed=0, indices=None,
                       offset=None) -> Perturbation:
    """Error-minimizing noise: ``steps`` signed descent steps on the loss at ``x + delta``."""
    return _run(model, x, y, budget, bounds, seed, indices, ascend=False, offset=offset)


def pgd_error_maximize(model: nn.ModelState, x, y, budget: PerturbationBudget,
                       bounds=(0.0, 1.0), *, seed=0, indices=None) -> Perturbation:
    """Adversarial noise around ``x`` (typically already-protected samples): signed ascent."""
    return _run(model, x, y, budget, bounds, seed, indices, ascend=True)
