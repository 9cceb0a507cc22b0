"""Batch experiment harness.

Subcommands: `calib` (calibration curves to CSV + agreement summary),
`train` (ASGD / KRR runs with risk reports), `verify` (invariant suite),
`tasks` (catalog listing).  Configs are JSON with unknown keys rejected;
identical config + seed produce byte-identical outputs, and the worker
count never changes an emitted number.

Exit codes: 0 ok, 1 usage/config error, 2 verification failure,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import learning as ln
from . import surrogates as sg
from .tasks import TASK_KINDS, task_from_dict
from .verify import run_suite

__all__ = ["main", "cmd_calib", "cmd_train", "cmd_verify", "normalize_config"]


class ConfigError(ValueError):
    pass


def _check_keys(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}; "
                          f"allowed: {sorted(allowed)}")


_CALIB_METHODS = ("brute", "exact", "lower:generic", "lower:l2", "lower:crf",
                  "lower:at", "envelope", "lownoise")


def normalize_config(cfg: dict, command: str) -> dict:
    """Validate a config dict and fill documented defaults (fixpoint under
    re-normalization)."""
    if command == "calib":
        _check_keys(cfg, {"task", "surrogate", "epsilons", "methods", "grid",
                          "noise"}, "calib config")
        task = dict(cfg.get("task") or {})
        _check_keys(task, {"kind", "params", "name"}, "task")
        if task.get("kind") not in TASK_KINDS:
            raise ConfigError(f"task.kind must be one of {TASK_KINDS}")
        out = {
            "task": {"kind": task["kind"], "params": dict(task.get("params", {}))},
            "surrogate": cfg.get("surrogate", "quadratic"),
            "epsilons": [float(e) for e in cfg.get("epsilons",
                                                   list(np.arange(1, 10) / 10))],
            "methods": list(cfg.get("methods", ["brute", "exact",
                                                "lower:generic"])),
            "grid": dict(cfg.get("grid", {})),
            "noise": dict(cfg.get("noise", {"p": 0.0, "gamma_p": 1.0})),
        }
        for m in out["methods"]:
            if m not in _CALIB_METHODS:
                raise ConfigError(f"unknown method {m!r}; options: "
                                  f"{_CALIB_METHODS}")
        _check_keys(out["grid"], {"q_resolution", "box_points",
                                  "box_inflation"}, "grid")
        _check_keys(out["noise"], {"p", "gamma_p", "hard_margin_delta"},
                    "noise")
        if any(e <= 0 for e in out["epsilons"]):
            raise ConfigError("epsilons must be positive")
        return out
    if command == "train":
        _check_keys(cfg, {"task", "surrogate", "algo", "n", "n_list", "seeds",
                          "d", "family", "kernel", "lambda", "D", "n_eval",
                          "hard_margin_delta"}, "train config")
        task = dict(cfg.get("task") or {})
        _check_keys(task, {"kind", "params", "name"}, "task")
        if task.get("kind") not in TASK_KINDS:
            raise ConfigError(f"task.kind must be one of {TASK_KINDS}")
        n_list = cfg.get("n_list")
        if n_list is None:
            n_list = [cfg.get("n", 1000)]
        n_list = [int(n) for n in n_list]
        if any(n <= 0 for n in n_list):
            raise ConfigError("sample sizes must be positive")
        seeds = cfg.get("seeds", 5)
        seeds = list(range(int(seeds))) if isinstance(seeds, int) \
            else [int(s) for s in seeds]
        kernel = dict(cfg.get("kernel", {}))
        _check_keys(kernel, {"kind", "bandwidth"}, "kernel")
        d = int(cfg.get("d", 2))
        kernel.setdefault("kind", "gaussian")
        kernel.setdefault("bandwidth", float(np.sqrt(d)))
        algo = cfg.get("algo", "asgd")
        if algo not in ("asgd", "krr"):
            raise ConfigError("algo must be 'asgd' or 'krr'")
        return {
            "task": {"kind": task["kind"], "params": dict(task.get("params", {}))},
            "surrogate": cfg.get("surrogate", "crf"),
            "algo": algo,
            "n_list": n_list,
            "seeds": seeds,
            "d": d,
            "family": cfg.get("family", "smooth_logit"),
            "kernel": kernel,
            "lambda": float(cfg.get("lambda", 1e-3)),
            "D": cfg.get("D"),
            "n_eval": int(cfg.get("n_eval", 2000)),
            "hard_margin_delta": float(cfg.get("hard_margin_delta", 0.4)),
        }
    raise ConfigError(f"no config schema for command {command!r}")


def _zeta_exact(spec, decomp, eps):
    """Closed-form calibration value when one exists for this surrogate."""
    name = spec.name
    if name in ("logistic", "exponential", "square"):
        cost = spec.task.params.get("cost", 1.0)
        return cal.binary_zeta(spec.potential, eps, cost)
    if name.startswith("ova:"):
        return cal.calib_exact_ova(spec.margin_kind, eps)
    if name.startswith("indep:"):
        return cal.calib_exact_hamming(spec.margin_kind, eps,
                                       spec.task.params["k"])
    if name == "quadratic":
        return cal.calib_exact_quadratic(decomp, eps)["value"]
    return None


def cmd_calib(cfg: dict, out_dir: Path, seed: int, workers: int) -> int:
    cfg = normalize_config(cfg, "calib")
    task, decomp = task_from_dict(cfg["task"])
    spec = sg.make_by_name(cfg["surrogate"], decomp)
    eps = np.array(cfg["epsilons"], dtype=float)
    grid = cal.GridSpec(**cfg["grid"]) if cfg["grid"] else cal.GridSpec()
    curves = []
    summary = {"task": task.name, "surrogate": spec.name,
               "epsilons": list(map(float, eps)), "seed": seed}

    brute_curve = None
    if "brute" in cfg["methods"]:
        values, details = cal.calib_brute_force(spec, eps, grid,
                                                workers=workers,
                                                return_details=True)
        brute_curve = cal.CalibrationCurve(eps, values, "brute_force",
                                           task.name, spec.name)
        curves.append(brute_curve)
        summary["brute"] = {
            "n_moments": details["n_moments"], "n_scores": details["n_scores"],
            "tolerance_budget": [float(t) for t in details["tolerance_budget"]],
            "feasible": details["feasible"],
        }

    if "exact" in cfg["methods"]:
        try:
            vals = [_zeta_exact(spec, decomp, float(e)) for e in eps]
        except ValueError as exc:
            vals = None
            summary["exact"] = {"refused": str(exc)}
        if vals is not None and vals[0] is not None:
            exact_curve = cal.CalibrationCurve(eps, np.array(vals), "exact",
                                               task.name, spec.name)
            curves.append(exact_curve)
            if brute_curve is not None:
                summary["exact"] = {"max_abs_gap_vs_brute": float(
                    np.max(np.abs(exact_curve.values - brute_curve.values)))}
        elif vals is not None:
            summary["exact"] = {"refused": "no closed form for this surrogate"}

    for method in cfg["methods"]:
        if method.startswith("lower:"):
            variant = method.split(":", 1)[1]
            if variant == "at":
                if not spec.name.startswith("at:"):
                    summary[method] = {"refused": "at bound needs an "
                                                  "all-thresholds surrogate"}
                    continue
                vals = [cal.calib_lower_at(spec.margin_kind, float(e),
                                           spec.task.params["k"]) for e in eps]
            else:
                vals = [cal.calib_lower_bound(spec, float(e), variant)
                        for e in eps]
            curve = cal.CalibrationCurve(eps, np.array(vals),
                                         f"lower_bound:{variant}",
                                         task.name, spec.name)
            curves.append(curve)
            if brute_curve is not None:
                summary[method] = {"max_violation_vs_brute": float(
                    np.max(curve.values - brute_curve.values))}

    if "envelope" in cfg["methods"] and brute_curve is not None:
        curves.append(cal.convex_envelope(brute_curve))

    if "lownoise" in cfg["methods"]:
        noise = cal.NoiseModel(cfg["noise"]["p"], cfg["noise"]["gamma_p"])
        base = lambda e: cal.calib_lower_bound(spec, e, "generic")
        vals = [cal.low_noise_transform(base, noise, float(e)) for e in eps]
        curves.append(cal.CalibrationCurve(eps, np.array(vals), "low_noise",
                                           task.name, spec.name))

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "curves.csv").write_text(cal.curves_to_csv(curves))
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_train(cfg: dict, out_dir: Path, seed: int, workers: int) -> int:
    cfg = normalize_config(cfg, "train")
    task, decomp = task_from_dict(cfg["task"])
    spec = sg.make_by_name(cfg["surrogate"], decomp)
    kernel = ln.KernelSpec(cfg["kernel"]["kind"],
                           bandwidth=cfg["kernel"]["bandwidth"])
    if cfg["algo"] == "krr" and spec.name != "quadratic":
        raise ConfigError("krr estimates the quadratic surrogate; set "
                          "surrogate to 'quadratic'")

    report = {"config": cfg, "seed": seed, "runs": {}}
    trace_rows = []
    zeta_curve = None
    for n in cfg["n_list"]:
        per_seed = []
        for s in cfg["seeds"]:
            syn = ln.make_synthetic(decomp, cfg["family"], cfg["d"],
                                    seed * 100003 + s, kernel=kernel,
                                    hard_margin_delta=cfg["hard_margin_delta"])
            X, y = syn.sample(n, stream=1)
            if cfg["algo"] == "asgd":
                D = cfg["D"] or ln.default_radius(spec, syn, kernel)
                est, diag = ln.asgd_train(spec, X, y, kernel, D,
                                          record_trace=(s == cfg["seeds"][0]))
                if s == cfg["seeds"][0]:
                    trace_rows += [(n, *row) for row in diag["trace"]]
                bound = ln.eq15_bound(spec, kernel, D, diag["C"], n)
            else:
                model = ln.krr_train(X, y, kernel, cfg["lambda"])

                def est(Xq, model=model):
                    A = model.alpha_batch(Xq)
                    return (decomp.phi_mat[model.y_idx].T @ A).T

                diag, bound, D = {}, None, None
            risks = ln.evaluate_risks(spec, est, syn, n_eval=cfg["n_eval"],
                                      workers=workers)
            entry = {"seed": s, "true_excess": risks["true_excess"],
                     "surrogate_excess": risks["surrogate_excess"],
                     "bound_from_eq15": bound}
            if cfg["algo"] == "asgd":
                entry["grad_cap_ok"] = not diag["cap_violated"]
                entry["D"] = D
            per_seed.append(entry)
        mean_true = float(np.mean([e["true_excess"] for e in per_seed]))
        mean_sur = float(np.mean([e["surrogate_excess"] for e in per_seed]))
        if zeta_curve is None:
            eg = np.geomspace(1e-4, 4.0, 400)
            zeta_curve = cal.CalibrationCurve(
                eg, np.array([cal.calib_lower_bound(spec, float(e), "generic")
                              for e in eg]), "lower_bound")
        inv, saturated = cal.risk_bound_invert(zeta_curve, mean_sur)
        report["runs"][str(n)] = {
            "per_seed": per_seed,
            "mean_true_excess": mean_true,
            "mean_surrogate_excess": mean_sur,
            "bound_from_eq15": per_seed[0]["bound_from_eq15"],
            "risk_bound_inverted": inv,
            "risk_bound_saturated": saturated,
        }

    out_dir.mkdir(parents=True, exist_ok=True)
    lines = ["n,iteration,surrogate_risk_estimate,rkhs_norm"]
    lines += [f"{n},{i},{r:.17g},{g:.17g}" for n, i, r, g in trace_rows]
    (out_dir / "trace.csv").write_text("\n".join(lines) + "\n")
    (out_dir / "risks.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_verify(suite: str, seed: int, out_path) -> int:
    report = run_suite(suite, seed)
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if out_path is None:
        sys.stdout.write(text)
    else:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(text)
    return 0 if report["all_pass"] else 2


def cmd_tasks() -> int:
    catalog = {
        "tasks": {
            "multiclass": "0-1 loss, params {k}",
            "binary": "cost-sensitive 0-1, params {cost in (0,1]}",
            "multilabel": "Hamming over {-1,1}^k, params {k}",
            "ordinal": "absolute error, params {k}",
            "ndcg": "NDCG-type ranking loss, params {m, r_max}",
            "matching": "Hamming between permutations, params {m}",
        },
        "surrogates": sg.catalog_names(),
    }
    sys.stdout.write(json.dumps(catalog, sort_keys=True, indent=2) + "\n")
    return 0


def _load_config(path) -> dict:
    if path is None:
        raise ConfigError("--config is required for this command")
    with open(path) as fh:
        return json.load(fh)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="surrocal",
        description="calibrated surrogate losses for structured prediction")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("calib", "train"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=None)
    p = sub.add_parser("verify")
    p.add_argument("--suite", choices=("fast", "full"), default="fast")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=None)
    sub.add_parser("tasks")

    args = parser.parse_args(argv)
    workers = getattr(args, "workers", None)
    if workers is None:
        workers = int(os.environ.get("SURROCAL_WORKERS", "1"))

    try:
        if args.command == "tasks":
            return cmd_tasks()
        if args.command == "verify":
            return cmd_verify(args.suite, args.seed, args.out)
        cfg = _load_config(args.config)
        if args.command == "calib":
            return cmd_calib(cfg, Path(args.out), args.seed, workers)
        return cmd_train(cfg, Path(args.out), args.seed, workers)
    except (ConfigError, ValueError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
