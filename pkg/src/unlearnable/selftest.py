"""Fast built-in checks of the numerical core, used by ``unlearnable selftest``.

Each check returns ``(ok, detail)``. The functions are also imported by the
acceptance tests, which run them at full size.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .data import synth_blobs
from .errors import CorruptionError
from .generator import GeneratorConfig, NoiseBank, emit_noise_bank, train_generator
from .perturb import PerturbationBudget, is_feasible
from .randomness import lemma1_residual, mse_to_uniform
from .storage import bank_metadata, decode_noise_bank, encode_noise_bank


def random_simplex(rng: np.random.Generator, n: int, K: int) -> np.ndarray:
    """Dirichlet(1) samples mixed with some sparse and near-vertex points."""
    p = rng.dirichlet(np.ones(K), size=n)
    sharp = rng.dirichlet(np.full(K, 0.05), size=n // 4)
    p[: n // 4] = np.maximum(sharp, 1e-300)
    return p / p.sum(axis=1, keepdims=True)


def check_lemma1(n=10_000, classes=(2, 10, 100), seed=0):
    rng = np.random.default_rng(seed)
    worst = max(float(lemma1_residual(random_simplex(rng, n, K)).max()) for K in classes)
    return worst < 1e-9, f"max residual {worst:.3e} over {n} points per K in {classes}"


def check_theorem1(n=10_000, classes=(2, 10, 100), seed=0):
    rng = np.random.default_rng(seed)
    problems = []
    for K in classes:
        p = random_simplex(rng, n, K)
        p[0] = 1.0 / K
        v = mse_to_uniform(p)
        uniform = np.all(p == 1.0 / K, axis=1)
        if np.any(v < 0) or np.any(v > 4.0 / K):
            problems.append(f"K={K}: outside [0, 4/K]")
        if np.any(v > (K - 1) / K**2 * (1 + 1e-12)):
            problems.append(f"K={K}: exceeds (K-1)/K^2")
        if not np.array_equal(v < 1e-12, uniform):
            problems.append(f"K={K}: zero set differs from the uniform points")
    return not problems, "; ".join(problems) or f"bounds hold for K in {classes}"


def check_gradients(n_models=10, eps=1e-4, seed=0):
    worst = 0.0
    for i in range(n_models):
        rng = np.random.default_rng([seed, i])
        act = ("tanh", "sigmoid", "relu")[i % 3]
        model = nn.init_model(f"mlp 6 8 5 4 {act}", seed=i)
        x = rng.uniform(size=(7, 6))
        clean = rng.uniform(size=(7, 6))
        y = rng.integers(1, 5, size=7)
        for weight in (0.0, 1.0):
            err = nn.grad_check(model, x, y, eps, nn.LossSpec(weight),
                                clean_x=clean if weight else None)
            worst = max(worst, err)
    return worst < 1e-3, f"max relative error {worst:.3e} over {n_models} models x 2 losses"


def check_feasibility(n_per_class=40, seed=0):
    data = synth_blobs(3, n_per_class, 12, 2.0, seed)
    s1 = PerturbationBudget(16 / 255, 4 / 255, 5)
    s2 = PerturbationBudget(8 / 255, 2 / 255, 3, "uniform")
    total, bad = 0, 0
    for method in ("two-stage", "em", "rem"):
        cfg = GeneratorConfig("mlp 12 16 3 tanh", 20, 0.3, 32, s1, s2, method=method, seed=seed)
        model, _ = train_generator(data, cfg)
        bank = emit_noise_bank(model, data, s1, seed=seed, method=method)
        ok = np.array([is_feasible(x, d, s1.radius) for x, d in zip(data.x, bank.deltas)])
        total += ok.size
        bad += int((~ok).sum())
    return bad == 0, f"{total - bad}/{total} emitted perturbations feasible"


def check_persistence(seed=0):
    rng = np.random.default_rng(seed)
    budget = PerturbationBudget(8 / 255, 2 / 255, 10)
    bank = NoiseBank(12345, rng.uniform(-8 / 255, 8 / 255, (9, 4)), budget, "em", seed)
    meta = bank_metadata(bank)
    raw = encode_noise_bank(bank)
    same = decode_noise_bank(raw, meta).same_as(bank)
    flipped = bytearray(raw)
    flipped[40] ^= 0x01
    try:
        decode_noise_bank(bytes(flipped), meta)
        caught = False
    except CorruptionError:
        caught = True
    return same and caught, f"round trip {'exact' if same else 'differs'}, corruption {'caught' if caught else 'missed'}"


CHECKS = {
    "lemma1": check_lemma1,
    "theorem1": check_theorem1,
    "gradients": check_gradients,
    "feasibility": check_feasibility,
    "persistence": check_persistence,
}


def run_all():
    results = []
    for name, fn in CHECKS.items():
        ok, detail = fn()
        results.append((name, bool(ok), detail))
    return results
