"""Command-line pipeline: gen-data -> learn -> abstract -> synthesize -> validate.

Every stage reads files and writes files; re-running a stage on the same
inputs writes the same bytes whatever ``--threads`` is.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .abstraction import Imdp, build_imdp, check_consistency
from .config import ConfigError, RunConfig, describe_keys
from .geometry import Partition
from .learning import (
    LearningError,
    NumericalError,
    build_residuals,
    learn_mode,
    select_kernel,
    learned_from_dict,
    learned_to_dict,
    read_dataset_csv,
    write_dataset_csv,
)
from .ltlf import Dfa, to_dfa
from .runtime import Controller, monte_carlo, wilson_half_width
from .scenarios import SCENARIOS, generate_samples, get_scenario
from .synthesis import ConvergenceError, SynthesisResult, build_product, synthesize

log = logging.getLogger("imdpsynth")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _load_config(path) -> RunConfig:
    try:
        return RunConfig.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None


def scenario_config(name: str) -> dict:
    sc = get_scenario(name)
    return {"scenario": name, **sc.defaults}


# ---------------------------------------------------------------------------
# stages


def cmd_gen_data(cfg: RunConfig, out: Path, samples=None, seed=None) -> None:
    if not cfg.scenario:
        raise ConfigError("gen-data needs a scenario")
    sc = get_scenario(cfg.scenario)
    per_mode = samples if samples is not None else cfg.samples_per_mode
    per_mode = sc.samples_per_mode if per_mode is None else int(per_mode)
    dom = cfg.domain_box()
    samples_ = generate_samples(sc, dom.lower, dom.upper, per_mode, cfg.seed if seed is None else seed)
    _write(out, write_dataset_csv(samples_, dom.dim))
    log.info("wrote %d samples to %s", len(samples_), out)


def learn_models(cfg: RunConfig, data_text: str) -> dict:
    samples, n = read_dataset_csv(data_text)
    if n != cfg.domain_box().dim:
        raise ConfigError(f"dataset has dimension {n}, domain has {cfg.domain_box().dim}")
    modes = sorted({s.u for s in samples})
    if not modes:
        raise LearningError("dataset has no samples")
    known = cfg.known_maps(modes)
    groups = build_residuals(samples, known, n)
    theta = cfg.noise_model().sub_gaussian_theta
    learned = {}
    for u in modes:
        X, Y = groups[u]
        grid = cfg.kernel_candidates(u)
        kernel = cfg.kernel_for(u) if grid is None else select_kernel(X, Y, grid)
        learned[u] = learn_mode(u, X, Y, kernel, theta, cfg.rkhs_bound, cfg.kappa, cfg.gamma_bound,
                                cfg.delta_min)
    return learned


def cmd_learn(cfg: RunConfig, data: Path, out: Path) -> None:
    learned = learn_models(cfg, data.read_text())
    doc = {
        "modes": [learned_to_dict(learned[u]) for u in sorted(learned)],
        "report": {
            str(u): {
                "samples": lm.m,
                "sigma": lm.sigma,
                "information_gain": list(lm.gamma_bound),
                "rkhs_bound": list(lm.rkhs_bound),
                "rkhs_bound_heuristic": lm.heuristic_rkhs,
            }
            for u, lm in sorted(learned.items())
        },
    }
    _write(out, _dump_json(doc))
    log.info("learned %d modes x %d dimensions", len(learned), cfg.domain_box().dim)


def _load_learned(path: Path) -> dict:
    doc = json.loads(path.read_text())
    return {d["mode"]: learned_from_dict(d) for d in doc["modes"]}


def run_abstraction(cfg: RunConfig, learned: dict, threads: int = 1, eta_fraction=None):
    part = cfg.partition()
    known = cfg.known_maps(sorted(learned))
    t0 = time.perf_counter()
    imdp, info = build_imdp(part, known, learned, cfg.noise_model(), cfg.abstraction_config(threads, eta_fraction))
    log.info("abstraction built in %.1f s", time.perf_counter() - t0)
    bad = check_consistency(imdp)
    if bad:
        raise NumericalError(f"{len(bad)} inconsistent rows after repair")
    widths = imdp.hi - imdp.lo
    info["states"] = imdp.n_states
    info["actions"] = list(imdp.actions)
    info["width_stats"] = {"mean": float(widths.mean()), "max": float(widths.max())}
    info["heuristic_rkhs"] = any(lm.heuristic_rkhs for lm in learned.values())
    return part, imdp, info


def _write_abstraction(out: Path, part: Partition, imdp: Imdp, info: dict) -> None:
    _write(out / "partition.json", part.dumps() + "\n")
    _write(out / "imdp.txt", imdp.dumps())
    _write(out / "abstraction.json", _dump_json(info))


def cmd_abstract(cfg: RunConfig, learned_path: Path, out: Path, threads: int) -> None:
    part, imdp, info = run_abstraction(cfg, _load_learned(learned_path), threads)
    _write_abstraction(out, part, imdp, info)
    rep = info["report"]
    log.info("%d states, %d entries, %d lower repairs, %d upper repairs", imdp.n_states, rep["entries"],
             rep["lower_scaled"], rep["upper_raised"])


def _load_abstraction(path: Path):
    return Partition.loads((path / "partition.json").read_text()), Imdp.loads((path / "imdp.txt").read_text())


def run_synthesis(cfg: RunConfig, part: Partition, imdp: Imdp, threads: int = 1):
    dfa = to_dfa(cfg.formula_ast(), sorted(cfg.formula_ast().atoms()))
    P = build_product(imdp, dfa)
    res = synthesize(P, cfg.threshold, cfg.tol, cfg.max_sweeps, threads)
    return dfa, res


def _summary(res: SynthesisResult) -> dict:
    cls = res.classes
    lo, up, star = res.cell_values()
    return {
        "threshold": res.threshold,
        "counts": {c: int(np.sum(cls == c)) for c in ("yes", "no", "maybe")},
        "mean_p_low": float(lo.mean()),
        "mean_gap": float(res.gap.mean()),
        "cells_gap_at_most_0.05": int(np.sum(res.gap <= 0.05)),
        "sweeps": res.sweeps,
    }


def _write_synthesis(out: Path, part: Partition, dfa: Dfa, res: SynthesisResult) -> None:
    _write(out / "dfa.txt", dfa.dumps())
    _write(out / "result.txt", res.dumps())
    _write(out / "heatmap.csv", res.heatmap_csv(part.cell_centers()))
    _write(out / "summary.json", _dump_json(_summary(res)))


def cmd_synthesize(cfg: RunConfig, abstraction: Path, out: Path, threads: int) -> None:
    part, imdp = _load_abstraction(abstraction)
    dfa, res = run_synthesis(cfg, part, imdp, threads)
    _write_synthesis(out, part, dfa, res)
    log.info("classes: %s", _summary(res)["counts"])


def validate_cells(cfg: RunConfig, part: Partition, dfa: Dfa, res: SynthesisResult, cells=None,
                   trials=None, seed=None) -> list:
    """Monte Carlo check of the certified bounds from random starts in
    ``cells`` (default: ``validate_cells`` random yes cells)."""
    if not cfg.scenario:
        raise ConfigError("validate needs a scenario")
    sc = get_scenario(cfg.scenario)
    seed = cfg.seed if seed is None else seed
    trials = cfg.trials if trials is None else trials
    rng = np.random.Generator(np.random.PCG64(seed))
    if cells is None:
        yes = np.flatnonzero(res.classes == "yes")
        k = min(int(cfg.validate_cells), yes.size)
        cells = sorted(rng.choice(yes, size=k, replace=False).tolist()) if k else []
    ctrl = Controller(part, dfa, res)
    lo, up, _ = res.cell_values()
    out = []
    for q in cells:
        box = part.cell(q)
        x0 = box.lower + box.widths * rng.random(box.dim)
        mc = monte_carlo(sc.step, sc.noise, ctrl, x0, trials, cfg.max_steps, seed + 1 + q, (lo[q], up[q]))
        hw = wilson_half_width(mc.satisfied, mc.trials)
        out.append({"cell": int(q), "x0": x0.tolist(), "p_low": float(lo[q]), "p_up": float(up[q]),
                    "half_width": hw, "rate_at_least_p_low": bool(mc.rate >= lo[q] - hw), **mc.to_dict()})
    return out


def cmd_validate(cfg: RunConfig, abstraction: Path, result: Path, out: Path, trials, seed) -> None:
    part = Partition.loads((abstraction / "partition.json").read_text())
    dfa = Dfa.loads((result / "dfa.txt").read_text())
    res = SynthesisResult.loads((result / "result.txt").read_text())
    cells = validate_cells(cfg, part, dfa, res, trials=trials, seed=seed)
    ok = sum(c["rate_at_least_p_low"] for c in cells)
    _write(out, _dump_json({"cells": cells, "passed": ok, "checked": len(cells)}))
    log.info("%d of %d cells reach their certified lower bound", ok, len(cells))


def cmd_sweep_eta(cfg: RunConfig, learned_path: Path, out: Path, threads: int) -> None:
    learned = _load_learned(learned_path)
    rows = ["eta_fraction,mean_p_low,yes,no,maybe"]
    for f in cfg.eta_fractions:
        part, imdp, info = run_abstraction(cfg, learned, threads, eta_fraction=float(f))
        dfa, res = run_synthesis(cfg, part, imdp, threads)
        sub = out / f"eta_{float(f):g}"
        _write_abstraction(sub, part, imdp, info)
        _write_synthesis(sub, part, dfa, res)
        s = _summary(res)
        rows.append(f"{float(f)!r},{s['mean_p_low']!r},{s['counts']['yes']},{s['counts']['no']},{s['counts']['maybe']}")
    _write(out / "sweep.csv", "\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    keys = "configuration keys (JSON object; unknown keys are errors), with defaults:\n" + describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="imdpsynth", description=__doc__, epilog=keys, formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, description=help_, epilog=keys, formatter_class=fmt)
        sp.add_argument("--config", required=name != "example-config", type=Path, help="run configuration (JSON)")
        return sp

    sp = add("example-config", "print a complete configuration for a built-in scenario")
    sp.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))

    sp = add("gen-data", "sample a dataset from the configured scenario")
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--samples", type=int, help="samples per mode (overrides the config)")
    sp.add_argument("--seed", type=int, help="overrides the config seed")

    sp = add("learn", "fit the per-mode regression models")
    sp.add_argument("--data", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--threads", type=int, default=1)

    sp = add("abstract", "build the interval MDP abstraction")
    sp.add_argument("--learned", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path, help="output directory")
    sp.add_argument("--threads", type=int, default=1)

    sp = add("synthesize", "compute the strategy, value bounds and classes")
    sp.add_argument("--abstraction", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path, help="output directory")
    sp.add_argument("--threads", type=int, default=1)

    sp = add("validate", "simulate the strategy on the scenario's true dynamics")
    sp.add_argument("--abstraction", required=True, type=Path)
    sp.add_argument("--result", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--seed", type=int)

    sp = add("sweep-eta", "abstract and synthesize once per eta fraction")
    sp.add_argument("--learned", required=True, type=Path)
    sp.add_argument("--out", required=True, type=Path, help="output directory")
    sp.add_argument("--threads", type=int, default=1)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "example-config":
            cfg = RunConfig.from_dict(scenario_config(args.scenario))
            sys.stdout.write(cfg.dumps())
            return EXIT_OK
        cfg = _load_config(args.config)
        threads = max(1, getattr(args, "threads", 1) or 1)
        if args.command == "gen-data":
            cmd_gen_data(cfg, args.out, args.samples, args.seed)
        elif args.command == "learn":
            cmd_learn(cfg, args.data, args.out)
        elif args.command == "abstract":
            cmd_abstract(cfg, args.learned, args.out, threads)
        elif args.command == "synthesize":
            cmd_synthesize(cfg, args.abstraction, args.out, threads)
        elif args.command == "validate":
            cmd_validate(cfg, args.abstraction, args.result, args.out, args.trials, args.seed)
        elif args.command == "sweep-eta":
            cmd_sweep_eta(cfg, args.learned, args.out, threads)
    except (ConfigError, LearningError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ConvergenceError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
