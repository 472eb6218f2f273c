"""Victim-side experiments: who learns what from protected data."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .data import LabeledDataset
from .errors import ConfigError, InputContractError, NumericContractError, ProvenanceError
from .generator import NoiseBank, minibatches
from .perturb import PerturbationBudget, pgd_error_maximize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VictimConfig:
    """Victim training setup. ``rho_a == 0`` (or ``steps == 0``) is standard training."""

    arch: nn.Architecture
    epochs: int
    lr: float
    batch_size: int
    rho_a: float = 0.0
    alpha: float = 0.0
    steps: int = 0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.arch, str):
            object.__setattr__(self, "arch", nn.Architecture.parse(self.arch))
        problems = []
        if self.epochs < 0:
            problems.append("epochs must be >= 0")
        if not self.lr > 0:
            problems.append("lr must be > 0")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not self.rho_a >= 0:
            problems.append("rho_a must be >= 0")
        if self.steps < 0:
            problems.append("steps must be >= 0")
        if self.adversarial and not self.alpha > 0:
            problems.append("alpha must be > 0 for adversarial training")
        if problems:
            raise ConfigError("; ".join(problems), problems)

    @property
    def adversarial(self) -> bool:
        return self.rho_a > 0 and self.steps > 0

    @property
    def budget(self) -> PerturbationBudget:
        return PerturbationBudget(self.rho_a, self.alpha, self.steps, init="uniform")


@dataclass(frozen=True)
class ProtectionPlan:
    percentage: float
    seed: int
    indices: tuple[int, ...]


def make_protection_plan(n: int, percentage: float, seed: int) -> ProtectionPlan:
    """Pick ``round_half_up(percentage * n / 100)`` distinct indices."""
    if not 0 <= percentage <= 100:
        raise InputContractError(f"percentage {percentage} outside [0, 100]")
    count = int(np.floor(percentage * n / 100.0 + 0.5))
    rng = np.random.default_rng([int(seed), 7])
    chosen = np.sort(rng.permutation(n)[:count])
    return ProtectionPlan(float(percentage), seed, tuple(int(i) for i in chosen))


def apply_protection(data: LabeledDataset, bank: NoiseBank, plan: ProtectionPlan) -> LabeledDataset:
    """Add each planned sample's noise. Always apply to the original dataset."""
    if bank.dataset_hash != data.identity_hash():
        raise ProvenanceError(
            f"noise bank was crafted for dataset {bank.dataset_hash:#010x}, "
            f"not {data.identity_hash():#010x}")
    idx = np.asarray(plan.indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= len(data) or np.unique(idx).size != idx.size):
        raise InputContractError("protection plan indices must be unique and in range")
    x = np.array(data.x)
    x[idx] = x[idx] + bank.deltas.reshape(data.x.shape)[idx]
    return data.with_features(x)


def train_victim(data: LabeledDataset | None, cfg: VictimConfig) -> nn.ModelState:
    """Plain or PGD adversarial training. ``data=None`` (nothing to learn from) returns the init."""
    model = nn.init_model(cfg.arch, cfg.seed)
    if data is None or cfg.epochs == 0:
        return model
    if data.dim != cfg.arch.n_inputs or data.n_classes != cfg.arch.n_classes:
        raise InputContractError(f"dataset does not match victim architecture {cfg.arch}")
    n = len(data)
    per_epoch = -(-n // cfg.batch_size)
    batches = minibatches(n, cfg.batch_size, cfg.seed)
    budget = cfg.budget if cfg.adversarial else None
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        for b in range(1, per_epoch + 1):
            step += 1
            idx = next(batches)
            xb, yb = data.x[idx], data.y[idx]
            try:
                if cfg.adversarial:
                    xb = xb + pgd_error_maximize(model, xb, yb, budget, data.bounds,
                                                 seed=(cfg.seed, step), indices=idx).delta
                res = nn.loss_and_grads(model, xb, yb)
                model = nn.sgd_update(model, res.grads, cfg.lr)
            except NumericContractError as exc:
                raise NumericContractError(f"victim epoch {epoch} batch {b}: {exc}") from exc
            if not np.all(np.isfinite(model.params[-2])):
                raise NumericContractError(f"victim epoch {epoch} batch {b}: parameters diverged")
    return model


def evaluate_accuracy(model: nn.ModelState, test: LabeledDataset) -> float:
    """Percentage of correct argmax predictions (ties go to the lowest class)."""
    return 100.0 * float(np.mean(nn.predict(model, test.x) == test.y))


# --- report tables ------------------------------------------------------------


@dataclass
class ReportTable:
    row_header: str
    row_labels: list[str]
    column_labels: list[str]
    cells: list[list[float]]
    runtime_seconds: dict[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.cells) != len(self.row_labels):
            raise InputContractError("one row of cells per row label")
        for row in self.cells:
            if len(row) != len(self.column_labels):
                raise InputContractError("table is not rectangular")
            if any(not 0 <= v <= 100 for v in row):
                raise InputContractError("accuracy cells must lie in [0, 100]")

    def cell(self, row: str, column: str) -> float:
        return self.cells[self.row_labels.index(row)][self.column_labels.index(column)]

    def row(self, label: str) -> dict[str, float]:
        return dict(zip(self.column_labels, self.cells[self.row_labels.index(label)]))

    def to_csv(self) -> str:
        lines = [",".join([self.row_header, *self.column_labels])]
        for label, row in zip(self.row_labels, self.cells):
            lines.append(",".join([label, *(f"{v:.2f}" for v in row)]))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        grid = [[self.row_header, *self.column_labels]]
        grid += [[label, *(f"{v:.2f}" for v in row)] for label, row in zip(self.row_labels, self.cells)]
        widths = [max(len(r[j]) for r in grid) for j in range(len(grid[0]))]
        out = []
        for i, r in enumerate(grid):
            out.append("  ".join(c.rjust(w) for c, w in zip(r, widths)).rstrip())
            if i == 0:
                out.append("  ".join("-" * w for w in widths))
        return "\n".join(out) + "\n"


def format_radius(r: float) -> str:
    """Radii print in 1/255 units when they are whole multiples, e.g. ``4/255``."""
    if r == 0:
        return "0"
    k = r * 255.0
    if abs(k - round(k)) < 1e-9:
        return f"{int(round(k))}/255"
    return f"{r:.6g}"


def _cell(args):
    train, test, cfg = args
    start = time.perf_counter()
    acc = evaluate_accuracy(train_victim(train, cfg), test)
    return acc, time.perf_counter() - start


def _run_cells(jobs: list, coords: list, n_workers: int):
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_cell, jobs))
    else:
        results = []
        for job, where in zip(jobs, coords):
            try:
                results.append(_cell(job))
            except Exception as exc:
                raise type(exc)(f"cell {where}: {exc}") from exc
    return results


def _victim_at(cfg: VictimConfig, rho: float, step_fraction: float) -> VictimConfig:
    if rho == 0:
        return replace(cfg, rho_a=0.0)
    return replace(cfg, rho_a=rho, alpha=rho * step_fraction)


def run_radius_sweep(train: LabeledDataset, test: LabeledDataset, banks: dict[str, NoiseBank],
                     radii, cfg: VictimConfig, *, step_fraction: float = 0.25,
                     jobs: int = 1) -> ReportTable:
    """Accuracy of victims trained on fully protected data, one row per adversarial radius.

    The first column trains on clean data; each further column on ``train``
    protected by the named bank. The victim PGD step is ``rho * step_fraction``.
    """
    radii = [float(r) for r in radii]
    if radii != sorted(radii):
        raise InputContractError("radii must be sorted ascending")
    if len({b.radius for b in banks.values()}) > 1:
        raise InputContractError("all banks must share the protective radius")
    full = make_protection_plan(len(train), 100.0, cfg.seed)
    datasets = {"clean": train}
    for name, bank in banks.items():
        datasets[name] = apply_protection(train, bank, full)
    columns = list(datasets)
    jobs_list, coords = [], []
    for r in radii:
        for c in columns:
            jobs_list.append((datasets[c], test, _victim_at(cfg, r, step_fraction)))
            coords.append((format_radius(r), c))
    results = _run_cells(jobs_list, coords, jobs)
    cells = [[results[i * len(columns) + j][0] for j in range(len(columns))]
             for i in range(len(radii))]
    runtime = {f"{r}|{c}": s for (r, c), (_, s) in zip(coords, results)}
    for (r, c), (acc, s) in zip(coords, results):
        log.info("radius sweep rho_a=%s %s: %.2f%% in %.2fs", r, c, acc, s)
    return ReportTable("rho_a", [format_radius(r) for r in radii], columns, cells, runtime)


def run_percentage_sweep(train: LabeledDataset, test: LabeledDataset, bank: NoiseBank,
                         percentages, cfg: VictimConfig, *, jobs: int = 1) -> ReportTable:
    """One row per protection percentage.

    ``mixed`` trains on the partially protected set; ``clean_only`` trains on
    just the unprotected remainder (at 100% that is nothing, so the victim
    keeps its initial weights).
    """
    percentages = [float(p) for p in percentages]
    jobs_list, coords = [], []
    for p in percentages:
        plan = make_protection_plan(len(train), p, cfg.seed)
        mixed = apply_protection(train, bank, plan)
        rest = np.setdiff1d(np.arange(len(train)), plan.indices)
        clean_only = train.subset(rest) if rest.size else None
        label = f"{p:g}"
        jobs_list += [(mixed, test, cfg), (clean_only, test, cfg)]
        coords += [(label, "mixed"), (label, "clean_only")]
    results = _run_cells(jobs_list, coords, jobs)
    cells = [[results[2 * i][0], results[2 * i + 1][0]] for i in range(len(percentages))]
    runtime = {f"{r}|{c}": s for (r, c), (_, s) in zip(coords, results)}
    for (r, c), (acc, s) in zip(coords, results):
        log.info("percentage sweep p=%s %s: %.2f%% in %.2fs", r, c, acc, s)
    return ReportTable("percent", [f"{p:g}" for p in percentages], ["mixed", "clean_only"],
                       cells, runtime)
