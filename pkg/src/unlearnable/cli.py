"""Command-line front end: ``unlearnable <subcommand> --config run.conf``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import selftest
from .config import REQUIRED, RunConfig, load_config
from .data import LabeledDataset, load_csv, load_idx, save_csv, stratified_split, synth_blobs
from .errors import ConfigError, InputContractError, UnlearnableError
from .generator import GeneratorConfig, NoiseBank, emit_noise_bank, train_generator
from .harness import (VictimConfig, apply_protection, evaluate_accuracy, make_protection_plan,
                      run_percentage_sweep, run_radius_sweep, train_victim)
from .perturb import PerturbationBudget
from .storage import load_model, load_noise_bank, save_model, save_noise_bank, write_report

# --- building blocks from a resolved config ----------------------------------


def build_dataset(cfg: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    if cfg.dataset == "blobs":
        full = synth_blobs(cfg.classes, cfg.per_class, cfg.dim, cfg.separation, cfg.seed,
                           frame=cfg.frame)
    elif cfg.dataset == "idx":
        full = load_idx(cfg.idx_images, cfg.idx_labels, limit=cfg.limit or None)
    else:
        full = load_csv(cfg.csv_path)
        if cfg.limit:
            full = full.subset(np.arange(min(cfg.limit, len(full))))
    return stratified_split(full, cfg.test_per_class, [cfg.seed, 1])


def _as_config_error(fn):
    """Values that pass the config grammar can still break a module invariant."""
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InputContractError as exc:
            raise ConfigError(f"invalid config: {exc}", [str(exc)]) from exc
    return wrapped


@_as_config_error
def generator_config(cfg: RunConfig, method: str | None = None) -> GeneratorConfig:
    return GeneratorConfig(
        arch=cfg.arch, iterations=cfg.iterations, lr=cfg.gen_lr, batch_size=cfg.gen_batch,
        stage1=PerturbationBudget(cfg.rho_u, cfg.alpha_u, cfg.steps_u),
        stage2=PerturbationBudget(cfg.rho_a, cfg.alpha_a, cfg.steps_a, "uniform"),
        asr_weight=cfg.asr_weight, method=method or cfg.method, seed=cfg.seed)


@_as_config_error
def victim_config(cfg: RunConfig) -> VictimConfig:
    rho = cfg.victim_rho_a
    return VictimConfig(arch=cfg.victim_arch or cfg.arch, epochs=cfg.epochs, lr=cfg.lr,
                        batch_size=cfg.batch, rho_a=rho, alpha=rho * cfg.victim_step_fraction,
                        steps=cfg.victim_steps, seed=cfg.seed)


def craft_bank(train: LabeledDataset, cfg: RunConfig, method: str | None = None):
    """Train a generator and emit its bank. Zero iterations means no surrogate, so no noise."""
    gcfg = generator_config(cfg, method)
    surrogate, trace = train_generator(train, gcfg)
    if gcfg.iterations == 0:
        bank = NoiseBank(train.identity_hash(), np.zeros_like(train.x), gcfg.stage1,
                         gcfg.method, cfg.seed)
    else:
        bank = emit_noise_bank(surrogate, train, gcfg.stage1, seed=cfg.seed, method=gcfg.method)
    return surrogate, trace, bank


# --- subcommands ---------------------------------------------------------------


def cmd_synth(cfg, out: Path) -> dict:
    train, test = build_dataset(cfg)
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")
    print(f"train={len(train)} test={len(test)} dim={train.dim} classes={train.n_classes}")
    return {}


def cmd_craft(cfg, out: Path) -> dict:
    train, _ = build_dataset(cfg)
    surrogate, trace, bank = craft_bank(train, cfg)
    save_model(surrogate, out / "surrogate.json")
    trace.write(out / "trace.csv")
    save_noise_bank(bank, out / "bank.unlb")
    last = trace.records[-1] if trace.records else None
    summary = f"method={bank.method} samples={len(bank)} iterations={len(trace)}"
    if last:
        summary += f" clean_acc={last.clean_acc:.2f} r_s={last.r_s:.6f}"
    print(summary)
    return {"craft": trace.seconds}


def cmd_train(cfg, out: Path) -> dict:
    train, _ = build_dataset(cfg)
    if cfg.bank:
        bank = load_noise_bank(cfg.bank)
        train = apply_protection(train, bank,
                                 make_protection_plan(len(train), cfg.protect_percent, cfg.seed))
    start = time.perf_counter()
    model = train_victim(train, victim_config(cfg))
    seconds = time.perf_counter() - start
    save_model(model, out / "model.json")
    print(f"trained {model.arch} on {len(train)} samples")
    return {"train": seconds}


def cmd_eval(cfg, out: Path) -> dict:
    _, test = build_dataset(cfg)
    acc = evaluate_accuracy(load_model(cfg.model), test)
    line = f"accuracy={acc:.2f}"
    (out / "eval.txt").write_text(line + "\n")
    print(line)
    return {}


def cmd_sweep(cfg, out: Path, jobs: int) -> dict:
    train, test = build_dataset(cfg)
    timings = {}
    if cfg.sweep == "radius":
        methods = cfg.methods
    else:
        methods = [cfg.method]
    banks = {}
    for m in methods:
        _, trace, banks[m] = craft_bank(train, cfg, m)
        save_noise_bank(banks[m], out / f"bank-{m}.unlb")
        timings[f"craft|{m}"] = trace.seconds
    vcfg = victim_config(cfg)
    if cfg.sweep == "radius":
        table = run_radius_sweep(train, test, banks, cfg.radii, vcfg,
                                 step_fraction=cfg.victim_step_fraction, jobs=jobs)
    else:
        table = run_percentage_sweep(train, test, banks[cfg.method], cfg.percentages, vcfg,
                                     jobs=jobs)
    write_report(table, out / "report.csv", "csv")
    write_report(table, out / "report.txt", "text")
    sys.stdout.write(table.to_text())
    timings.update({f"cell|{k}": v for k, v in table.runtime_seconds.items()})
    return timings


def cmd_selftest() -> bool:
    results = selftest.run_all()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return all(ok for _, ok, _ in results)


# --- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unlearnable", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [("synth", "write the train/test split as CSV"),
                       ("craft", "train a noise generator and emit a noise bank"),
                       ("train", "train a victim, optionally on protected data"),
                       ("eval", "clean test accuracy of a saved model"),
                       ("sweep", "radius or percentage sweep, written as a report table")]:
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="output directory (overrides the config)")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")
    sub.add_parser("selftest", help="run the built-in identity and gradient checks")
    return parser


def _fail(exc: Exception, code: int) -> int:
    doc = {"exit": code, "type": type(exc).__name__, "message": str(exc)}
    problems = getattr(exc, "problems", None)
    if problems:
        doc["problems"] = problems
    print("error: " + json.dumps(doc), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # non-finite values are detected explicitly; numpy's warnings would only add noise on stderr
    with np.errstate(all="ignore"):
        return _dispatch(args)


def _dispatch(args) -> int:
    try:
        if args.command == "selftest":
            return 0 if cmd_selftest() else 1
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.out is not None:
            overrides["out"] = args.out
        cfg = load_config(args.config, overrides=overrides, required=REQUIRED[args.command])
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.command}.conf").write_text(cfg.render())
        if args.command == "sweep":
            timings = cmd_sweep(cfg, out, args.jobs)
        else:
            timings = globals()[f"cmd_{args.command}"](cfg, out)
        if timings:
            (out / f"{args.command}-timings.json").write_text(json.dumps(timings, indent=1) + "\n")
        return 0
    except UnlearnableError as exc:
        return _fail(exc, exc.exit_code)
    except OSError as exc:
        return _fail(exc, 3)


if __name__ == "__main__":
    sys.exit(main())
