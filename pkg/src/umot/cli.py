"""``umot`` command-line front end.

Usage::

    umot <solve|barycenter|interpolate|track|validate> --config run.toml
         [--out DIR] [--seed N] [--log-json]

Node indices in config files are 1-based. Exit codes: 0 success,
1 input error, 2 numerical failure, 3 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import experiments as ex
from .errors import InputError, NumericalError, StaleMessageError, UMOTError
from .io import (ensure_dir, image_to_measure, read_csv_measure, read_pgm,
                 write_csv_columns, write_json, write_pgm)
from .measures import MarginalPenalty
from .solver import SolverConfig, TreeProblem, tree_sinkhorn, tree_marginal_projection
from .tree import validate_tree
from .validation import run_validation

log = logging.getLogger("umot")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_VALIDATION = 0, 1, 2, 3
SUBCOMMANDS = ("solve", "barycenter", "interpolate", "track", "validate")


class ValidationFailed(UMOTError):
    pass


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except FileNotFoundError:
        raise InputError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    cfg["_base"] = os.path.dirname(os.path.abspath(path))
    return cfg


def _resolve(cfg, p):
    return p if os.path.isabs(p) else os.path.join(cfg["_base"], p)


def solver_config(cfg: dict, section: dict) -> SolverConfig:
    opts = dict(cfg.get("solver", {}))
    opts.update(section.get("solver", {}))
    allowed = {"max_sweeps", "tol", "dual_every", "domain", "schedule", "check_messages"}
    unknown = set(opts) - allowed
    if unknown:
        raise InputError(f"unknown solver options {sorted(unknown)}")
    return SolverConfig(**opts)


def _tree_from(section: dict, n: int):
    edges = section.get("edges")
    if edges is None:
        raise InputError("config needs 'edges'")
    edges0 = [(int(j) - 1, int(k) - 1) for j, k in edges]
    given = [int(v) - 1 for v in section.get("given", [])]
    return validate_tree(n, edges0, section.get("weights"), given)


def _load_measure(cfg, path, normalize, scale):
    full = _resolve(cfg, path)
    if not os.path.exists(full):
        raise InputError(f"input file {full} not found")
    if full.lower().endswith(".pgm"):
        img, maxval = read_pgm(full)
        spacing = cfg.get("spacing", 1.0 / max(img.shape))
        return image_to_measure(img, normalize, spacing, maxval, scale), True
    return read_csv_measure(full), False


class Run:
    """Output sink shared by all subcommands."""

    def __init__(self, out: str, log_json: bool):
        self.out = ensure_dir(out)
        self.log_json = log_json
        self._diag = None
        if log_json:
            self._diag = open(os.path.join(out, "diagnostics.jsonl"), "w", encoding="utf-8")

    def diagnostics(self, run: str, diag) -> None:
        if self._diag is None:
            return
        for rec in diag.records:
            self._diag.write(json.dumps({"run": run, **rec}, sort_keys=True) + "\n")

    def path(self, name):
        return os.path.join(self.out, name)

    def close(self):
        if self._diag is not None:
            self._diag.close()


def cmd_solve(cfg, run: Run, seed) -> dict:
    sec = cfg.get("solve", {})
    paths = sec.get("measures")
    if not paths:
        raise InputError("[solve] needs 'measures'")
    normalize = sec.get("normalize", "none")
    scale = float(sec.get("scale", 1.0))
    loaded = [_load_measure(cfg, p, normalize, scale) for p in paths]
    measures = [m for m, _ in loaded]
    tree = _tree_from(sec, len(measures))
    pens = sec.get("penalties")
    if pens is None or len(pens) != tree.n:
        raise InputError("[solve] needs one penalty per node")
    problem = TreeProblem.build(tree, measures, [MarginalPenalty.parse(p) for p in pens],
                                float(sec["epsilon"]))
    state, diag = tree_sinkhorn(problem, solver_config(cfg, sec))
    run.diagnostics("solve", diag)
    masses = []
    for j, (m, is_img) in enumerate(loaded):
        w = tree_marginal_projection(state, problem, j)
        masses.append(float(w.sum()))
        if is_img:
            write_pgm(run.path(f"marginal_{j + 1}.pgm"), w.reshape(m.grid_shape))
        else:
            cols = {f"x{a + 1}": m.points[:, a] for a in range(m.dim)}
            cols["w"] = w
            write_csv_columns(run.path(f"marginal_{j + 1}.csv"), cols)
    return {"masses": masses, **diag.summary()}


def cmd_barycenter(cfg, run: Run, seed) -> dict:
    sec = cfg.get("barycenter", {})
    if "inputs" in sec:
        measures = [_load_measure(cfg, p, "none", 1.0)[0] for p in sec["inputs"]]
    else:
        g = dict(ex.GAUSSIAN_DEFAULTS)
        g.update(sec.get("gaussians", {}))
        measures = ex.gaussian_inputs(g["n"], g["means"], g["stds"], g["masses"])
    eps = float(sec.get("epsilon", ex.GAUSSIAN_DEFAULTS["epsilon"]))
    ts = sec.get("weights", sec.get("t", [0.25, 0.5, 0.75]))
    penalty = sec.get("penalty", "KL")
    coupled = bool(sec.get("coupled", True))
    results = ex.run_gaussian_barycenters(measures, ts, penalty, eps,
                                          solver_config(cfg, sec), coupled)
    summary = {"epsilon": eps, "input_masses": [m.mass for m in measures], "runs": []}
    monotone = True
    for k, res in enumerate(results):
        tag = "_".join(f"{w:g}" for w in res["weights"])
        xi = res["barycenter"]
        cols = {f"x{a + 1}": xi.points[:, a] for a in range(xi.dim)}
        cols["barycenter"] = xi.weights
        if coupled:
            cols["coupled_barycenter"] = res["coupled"].barycenter.weights
        for i, m in enumerate(measures):
            cols[f"input_{i + 1}"] = m.weights
        for i, m in enumerate(res["marginals"]):
            cols[f"marginal_{i + 1}"] = m.weights
        write_csv_columns(run.path(f"barycenter_{tag}.csv"), cols)
        run.diagnostics(f"barycenter_{tag}", res["diagnostics"])
        monotone &= res["diagnostics"].monotone
        entry = {"weights": list(res["weights"]), "barycenter_mass": xi.mass,
                 "marginal_masses": [m.mass for m in res["marginals"]],
                 "entropy": res["entropy"], **res["diagnostics"].summary()}
        if coupled:
            entry["coupled_mass"] = res["coupled"].barycenter.mass
            entry["coupled_entropy"] = res["coupled_entropy"]
            entry["coupled_iterations"] = res["coupled"].iterations
        summary["runs"].append(entry)
    summary["dual_value"] = results[-1]["diagnostics"].dual_value
    summary["dual_monotone"] = monotone
    return summary


def cmd_interpolate(cfg, run: Run, seed) -> dict:
    sec = cfg.get("interpolate", {})
    eps = float(sec.get("epsilon", 4e-4))
    penalty = sec.get("penalty", "0.05*KL")
    mode = sec.get("mode", "tree")
    tree = _tree_from(sec, int(sec.get("nodes", 7))) if "edges" in sec else ex.htree()
    if "images" in sec:
        imgs = []
        for p in sec["images"]:
            full = _resolve(cfg, p)
            if not os.path.exists(full):
                raise InputError(f"input file {full} not found")
            img, maxval = read_pgm(full)
            m = image_to_measure(img, sec.get("normalize", "sum"), 1.0, maxval,
                                 float(sec.get("scale", 1.0)))
            imgs.append(m.as_image())
    else:
        imgs = ex.htree_images(int(sec.get("size", 16)))
    res = ex.run_htree(imgs, penalty, eps, mode, solver_config(cfg, sec), tree,
                       sec.get("spacing"))
    summary = {"epsilon": eps, "mode": mode, "penalty": str(MarginalPenalty.parse(penalty))}
    if mode == "tree":
        for j, img in enumerate(res["marginals"]):
            write_pgm(run.path(f"node_{j + 1}.pgm"), img)
        run.diagnostics("tree", res["diagnostics"])
        summary.update({"masses": res["masses"], **res["diagnostics"].summary()})
    else:
        monotone = True
        for u in sorted(res["umot"]):
            write_pgm(run.path(f"star_umot_node_{u + 1}.pgm"), res["umot"][u])
            write_pgm(run.path(f"star_uot_node_{u + 1}.pgm"), res["uot"][u])
            run.diagnostics(f"star_{u + 1}", res["diagnostics"][u])
            monotone &= res["diagnostics"][u].monotone
        last = res["diagnostics"][max(res["diagnostics"])]
        summary.update({
            "masses_umot": {str(u + 1): v for u, v in res["masses_umot"].items()},
            "masses_uot": {str(u + 1): v for u, v in res["masses_uot"].items()},
            "star_weights": {str(u + 1): list(v) for u, v in res["star_weights"].items()},
            "dual_value": last.dual_value, "dual_monotone": monotone})
    return summary


def cmd_track(cfg, run: Run, seed) -> dict:
    sec = cfg.get("track", {})
    p = dict(ex.TRACK_DEFAULTS)
    p.update({k: v for k, v in sec.items() if k in p})
    seed = int(sec.get("seed", 0)) if seed is None else seed
    clean, noisy = ex.dots_sequence(p["size"], p["frames"], p["shift"], p["dot_threshold"],
                                    p["noise_threshold"], p["sigma"], seed)
    if sec.get("noiseless", False):
        noisy = [c.copy() for c in clean]
    res = ex.run_tracking(clean, noisy, p["epsilon"], p["tv_weight"], p["spacing"],
                          solver_config(cfg, sec), penalty=sec.get("penalty"))
    for i, (c, n, m) in enumerate(zip(clean, noisy, res["marginals"])):
        write_pgm(run.path(f"clean_{i + 1}.pgm"), c)
        write_pgm(run.path(f"noisy_{i + 1}.pgm"), n)
        write_pgm(run.path(f"marginal_{i + 1}.pgm"), m)
    write_pgm(run.path("propagated_umot.pgm"), res["propagated_umot"])
    write_pgm(run.path("propagated_uot.pgm"), res["propagated_uot"])
    write_pgm(run.path("ground_truth.pgm"), res["ground_truth"])
    run.diagnostics("umot", res["diagnostics"])
    for i, d in enumerate(res["uot_diagnostics"]):
        run.diagnostics(f"uot_{i + 1}", d)
    return {"seed": seed, "parameters": p,
            "squared_error_umot": res["error_umot"],
            "squared_error_uot": res["error_uot"],
            "umot_not_worse": res["error_umot"] <= res["error_uot"],
            "row_sum_deviation_umot": res["row_sum_dev_umot"],
            "row_sum_deviation_uot": res["row_sum_dev_uot"],
            **res["diagnostics"].summary()}


def cmd_validate(cfg, run: Run, seed) -> dict:
    sec = cfg.get("validate", {})
    seed = int(sec.get("seed", 0)) if seed is None else seed
    results = run_validation(seed, int(sec.get("instances", 20)),
                             bool(sec.get("inject_fault", False)))
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    summary = {"seed": seed, "checks": [
        {"name": r.name, "passed": r.passed, "value": r.value, "limit": r.limit,
         "detail": r.detail} for r in results],
        "dual_value": None, "dual_monotone": all(
            r.passed for r in results if r.name.startswith("dual"))}
    write_json(run.path("summary.json"), summary)
    if failed:
        raise ValidationFailed(f"{failed[0].name}: {failed[0].detail or 'limit exceeded'}")
    return summary


COMMANDS = {"solve": cmd_solve, "barycenter": cmd_barycenter,
            "interpolate": cmd_interpolate, "track": cmd_track, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="umot", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=False, help="TOML run configuration")
    ap.add_argument("--out", help="output directory (default: config 'out' or ./umot_out)")
    ap.add_argument("--seed", type=int, help="RNG seed for synthetic data")
    ap.add_argument("--log-json", action="store_true",
                    help="write per-sweep diagnostics as JSON lines")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    run = None
    try:
        cfg = load_config(args.config) if args.config else {"_base": os.getcwd()}
        if args.seed is not None and args.seed < 0:
            raise InputError("seed must be non-negative")
        out = args.out or cfg.get("out") or "umot_out"
        if not os.path.isabs(out) and args.out is None and args.config:
            out = _resolve(cfg, out)
        run = Run(out, args.log_json)
        summary = COMMANDS[args.command](cfg, run, args.seed)
        if args.command != "validate":
            write_json(run.path("summary.json"), summary)
        return EXIT_OK
    except (ValidationFailed, StaleMessageError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, OSError, KeyError, TypeError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        if run is not None:
            run.close()


if __name__ == "__main__":
    sys.exit(main())
