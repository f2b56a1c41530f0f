"""Experiment driver: `distext run config.toml --out results/`.

One experiment per invocation, read from a TOML config with nested tables.
Numeric tables go to CSV (header row, '.' decimal separator, 17 significant
digits), structured reports to JSON.  Reruns with the same config are
bit-identical: all quadrature orders are fixed and random draws are seeded
from the config.

Exit codes: 0 ok, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .ambiguity import decompose_difference
from .core_types import ChartRegion, make_cutoff
from .distributions import PairingError, model
from .euler_flows import conjugation_residual, stock_field
from .extension import extend
from .microlocal import (
    cone_union, conormal, full_cone, wf_bound_check, wf_estimate,
    x_hyperplane_conormal,
)
from .renorm_product import ProductError, ProductRequest, renormalize_product
from .scaling_degree import (
    DegenerateFitError, default_lambda_grid, default_probes, estimate_degree,
)

__all__ = ["ConfigError", "main", "run"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class ConfigError(Exception):
    pass


_SCHEMA = {
    "": {"experiment", "seed", "threads"},
    "chart": {"n", "d", "box_x", "box_h"},
    "model": {"name", "a", "alpha", "g"},
    "model2": {"name", "a", "alpha", "g"},
    "cutoff": {"a", "b", "profile"},
    "cutoff2": {"a", "b", "profile"},
    "scaling": {"s", "lambda_points", "lambda_min", "s_target"},
    "probes": {"count", "straddle", "bumps"},
    "wf": {"points", "directions", "k_grid", "threshold", "window",
           "bound", "extend_first"},
    "fields": {"first", "second", "lambdas", "points"},
    "ambiguity": {"m", "x_grid"},
    "output": {"prefix"},
}

_EXPERIMENTS = ("degree", "extension", "wf", "conjugation", "ambiguity",
                "product")


def _validate(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a table")
    for key, val in cfg.items():
        if isinstance(val, dict):
            if key not in _SCHEMA or key == "":
                raise ConfigError(f"unknown table [{key}]")
            unknown = set(val) - _SCHEMA[key]
            if unknown:
                raise ConfigError(f"unknown keys in [{key}]: {sorted(unknown)}")
        else:
            if key not in _SCHEMA[""]:
                raise ConfigError(f"unknown top-level key {key!r}")
    kind = cfg.get("experiment")
    if kind not in _EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {_EXPERIMENTS}")
    return kind


def _chart(cfg):
    c = cfg.get("chart", {})
    return ChartRegion(int(c.get("n", 0)), int(c.get("d", 1)),
                       box_x=c.get("box_x"), box_h=c.get("box_h"))


def _model(cfg, chart, table="model"):
    spec = cfg.get(table)
    if not spec or "name" not in spec:
        raise ConfigError(f"[{table}] with a name is required")
    params = {k: v for k, v in spec.items() if k != "name"}
    if "alpha" in params and isinstance(params["alpha"], list):
        params["alpha"] = tuple(params["alpha"])
    try:
        return model(spec["name"], chart, **params)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad model spec: {exc}") from exc


def _cutoff(cfg, table="cutoff", default=(0.5, 1.0)):
    spec = cfg.get(table)
    if spec is None:
        if table != "cutoff":
            return None
        return make_cutoff(*default)
    try:
        return make_cutoff(spec.get("a", default[0]), spec.get("b", default[1]),
                           spec.get("profile", "exp"))
    except ValueError as exc:
        raise ConfigError(f"bad cutoff: {exc}") from exc


def _probes(cfg, chart, singular):
    spec = cfg.get("probes", {})
    if "bumps" in spec:
        from .core_types import make_bump
        probes = []
        for entry in spec["bumps"]:
            try:
                probes.append(make_bump(entry["center"], entry["radii"],
                                        n=chart.n))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad probe bump spec {entry!r}: {exc}") \
                    from exc
        if not probes:
            raise ConfigError("probes.bumps must not be empty")
        return probes
    count = int(spec.get("count", 8))
    if count < 1:
        raise ConfigError("probe count must be >= 1")
    straddle = bool(spec.get("straddle", not singular))
    fam = default_probes(chart, straddle=straddle)
    if count > len(fam):
        raise ConfigError(f"at most {len(fam)} stock probes available")
    return fam[:count]


def _grid(cfg):
    spec = cfg.get("scaling", {})
    return default_lambda_grid(int(spec.get("lambda_points", 40)),
                               float(spec.get("lambda_min", 1e-4)))


def _named_cone(name, chart):
    if name == "conormal":
        return conormal(chart)
    if name == "full":
        return full_cone(chart)
    if name == "optimality_v":
        return cone_union(x_hyperplane_conormal(chart, 0, over="all"),
                          conormal(chart))
    raise ConfigError(f"unknown bound cone {name!r}")


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _pmap(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# ---------------------------------------------------------------------------
# experiments


def _run_degree(cfg, out, prefix, threads=1):
    chart = _chart(cfg)
    t = _model(cfg, chart)
    probes = _probes(cfg, chart, t.singular_on_I)
    grid = _grid(cfg)
    rep = estimate_degree(t, probes=probes, grid=grid)
    _write_csv(out / f"{prefix}degree.csv",
               ["lambda"] + [f"probe{j}" for j in range(len(probes))],
               rep.to_csv_rows())
    _write_json(out / f"{prefix}degree.json", {
        "s_hat": rep.s_hat, "log_flag": rep.log_flag,
        "residual": rep.residual, "slopes": rep.slopes,
        "binding_probe": rep.binding_probe, "model": t.label,
    })
    return {"s_hat": rep.s_hat, "log_flag": rep.log_flag}


def _run_extension(cfg, out, prefix, threads=1):
    chart = _chart(cfg)
    t = _model(cfg, chart)
    s = float(cfg.get("scaling", {}).get("s", t.meta_degree or 0.0))
    chi1 = _cutoff(cfg)
    chi2 = _cutoff(cfg, "cutoff2")
    res1 = extend(t, s, chi1)
    results = [("chi1", res1)]
    if chi2 is not None:
        results.append(("chi2", extend(t, s, chi2, estimate=False)))
    probes = _probes(cfg, chart, singular=False)

    def one(jphi):
        j, phi = jphi
        vals = [res.tbar.pair(phi) for _, res in results]
        disc = max(vals) - min(vals) if len(vals) > 1 else 0.0
        return [j] + vals + [disc]

    rows = _pmap(one, list(enumerate(probes)), threads)
    max_disc = max((abs(r[-1]) for r in rows), default=0.0)
    _write_csv(out / f"{prefix}extension.csv",
               ["probe"] + [name for name, _ in results] + ["discrepancy"],
               rows)
    _write_json(out / f"{prefix}extension.json", {
        "model": t.label, "s_in": res1.s_in, "s_out": res1.s_out,
        "m": res1.m, "log_flag": res1.log_flag,
        "integer_boundary": res1.integer_boundary,
        "chi": [name for name, _ in results],
        "max_pairwise_discrepancy": max_disc,
        "wf_bound": res1.wf_bound.serialize(),
    })
    return {"s_out": res1.s_out, "m": res1.m, "log_flag": res1.log_flag,
            "max_pairwise_discrepancy": max_disc}


def _run_wf(cfg, out, prefix, threads=1):
    chart = _chart(cfg)
    t = _model(cfg, chart)
    spec = cfg.get("wf", {})
    if spec.get("extend_first", False):
        s = float(cfg.get("scaling", {}).get("s", t.meta_degree or 0.0))
        chi = _cutoff(cfg)
        t = extend(t, s, chi, estimate=False).tbar
    points = spec.get("points")
    directions = spec.get("directions")
    if not points or not directions:
        raise ConfigError("[wf] needs points and directions")
    kwargs = {}
    if "k_grid" in spec:
        kwargs["k_grid"] = tuple(float(k) for k in spec["k_grid"])
    if "threshold" in spec:
        kwargs["threshold"] = float(spec["threshold"])
    if "window" in spec:
        kwargs["window"] = float(spec["window"])
    rep = wf_estimate(t, points, directions, **kwargs)
    _write_csv(out / f"{prefix}wf.csv",
               [f"p{i}" for i in range(chart.dim)]
               + [f"dir{i}" for i in range(chart.dim)] + ["decay_exponent"],
               rep.to_csv_rows())
    payload = {"threshold": rep.threshold,
               "n_samples": len(rep.samples),
               "n_slow": len(rep.slow_samples()),
               "errors": rep.errors}
    if "bound" in spec:
        bound = _named_cone(spec["bound"], chart)
        payload["bound"] = spec["bound"]
        payload["bound_check"] = wf_bound_check(rep, bound)
    _write_json(out / f"{prefix}wf.json", payload)
    return {"n_slow": payload["n_slow"],
            "bound_check": payload.get("bound_check")}


def _field_from_spec(value, chart):
    """Stock field id, or a table of constant normal-form coefficients:
    A = [[i, j, c], ...] and B = [[i, j, k, c], ...]."""
    if isinstance(value, str):
        return stock_field(value, chart)
    from .euler_flows import EulerField, PolyND
    try:
        A = {(int(i), int(j)): PolyND.const(chart.dim, float(c))
             for i, j, c in value.get("A", [])}
        B = {(int(i), int(j), int(k)): PolyND.const(chart.dim, float(c))
             for i, j, k, c in value.get("B", [])}
        return EulerField(chart, A=A, B=B, name="config")
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad field spec {value!r}: {exc}") from exc


def _run_conjugation(cfg, out, prefix, threads=1):
    chart = _chart(cfg)
    spec = cfg.get("fields", {})
    rho1 = _field_from_spec(spec.get("first", "standard"), chart)
    rho2 = _field_from_spec(spec.get("second", "logistic"), chart)
    lams = [float(v) for v in spec.get("lambdas", (1.0, 0.1, 1e-2, 1e-3))]
    points = spec.get("points")
    if not points:
        raise ConfigError("[fields] needs points")
    cases = [(lam, p) for lam in lams for p in points]

    def one(case):
        lam, p = case
        res = conjugation_residual(rho1, rho2, lam, np.asarray(p, float))
        return [lam] + list(p) + [res]

    rows = _pmap(one, cases, threads)
    worst = max((r[-1] for r in rows), default=0.0)
    _write_csv(out / f"{prefix}conjugation.csv",
               ["lambda"] + [f"p{i}" for i in range(chart.dim)] + ["residual"],
               rows)
    _write_json(out / f"{prefix}conjugation.json",
                {"fields": [rho1.name, rho2.name], "max_residual": worst})
    return {"max_residual": worst}


def _run_ambiguity(cfg, out, prefix, threads=1):
    chart = _chart(cfg)
    t = _model(cfg, chart)
    s = float(cfg.get("scaling", {}).get("s", t.meta_degree or 0.0))
    chi1 = _cutoff(cfg)
    chi2 = _cutoff(cfg, "cutoff2", default=(0.25, 0.75)) or \
        make_cutoff(0.25, 0.75)
    spec = cfg.get("ambiguity", {})
    m = int(spec.get("m", 0))
    x_grid = spec.get("x_grid", [0.0] * min(chart.n, 1) or [])
    r1 = extend(t, s, chi1, estimate=False)
    r2 = extend(t, s, chi2, estimate=False)
    ct = decompose_difference(r1, r2, m, x_grid=x_grid)
    if ct == "equal":
        _write_csv(out / f"{prefix}counterterm.csv",
                   ["alpha", "x0", "coeff"], [])
        _write_json(out / f"{prefix}counterterm.json", {"equal": True})
        return {"equal": True}
    _write_csv(out / f"{prefix}counterterm.csv", ["alpha", "x0", "coeff"],
               ct.to_csv_rows())
    _write_json(out / f"{prefix}counterterm.json",
                {"equal": False, "max_abs": ct.max_abs()})
    return {"equal": False, "max_abs": ct.max_abs()}


def _run_product(cfg, out, prefix, threads=1):
    chart = _chart(cfg)
    u1 = _model(cfg, chart)
    u2 = _model(cfg, chart, table="model2")
    from .microlocal import Cone
    empty = Cone((), chart.n, chart.d)
    s1 = u1.meta_degree or 0.0
    s2 = u2.meta_degree or 0.0
    s_target = cfg.get("scaling", {}).get("s_target")
    req = ProductRequest(u1, u2, s1, s2, empty, empty,
                         s_target=float(s_target) if s_target is not None
                         else None)
    chi = _cutoff(cfg)
    res = renormalize_product(req, chi)
    probes = _probes(cfg, chart, singular=False)
    rows = [[j, res.tbar.pair(phi)] for j, phi in enumerate(probes)]
    _write_csv(out / f"{prefix}product.csv", ["probe", "value"], rows)
    _write_json(out / f"{prefix}product.json", {
        "factors": [u1.label, u2.label], "s_target": req.s_target,
        "m": res.m, "wf_bound": res.wf_bound.serialize(),
    })
    return {"s_target": req.s_target, "m": res.m}


_RUNNERS = {
    "degree": _run_degree,
    "extension": _run_extension,
    "wf": _run_wf,
    "conjugation": _run_conjugation,
    "ambiguity": _run_ambiguity,
    "product": _run_product,
}


def run(config_path, out_dir=None, verbose=False, threads=1):
    """Load a config, run its experiment, write artifacts; returns exit code."""
    config_path = Path(config_path)
    out = Path(out_dir) if out_dir else config_path.parent
    try:
        with open(config_path, "rb") as fh:
            cfg = tomllib.load(fh)
        kind = _validate(cfg)
    except (OSError, tomllib.TOMLDecodeError, ConfigError) as exc:
        _write_error(out, "config", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    np.random.seed(int(cfg.get("seed", 0)))
    out.mkdir(parents=True, exist_ok=True)
    prefix = cfg.get("output", {}).get("prefix", "")
    if prefix and not prefix.endswith("_"):
        prefix += "_"
    try:
        threads = max(int(cfg.get("threads", threads)), 1)
        summary = _RUNNERS[kind](cfg, out, prefix, threads=threads)
    except ConfigError as exc:
        _write_error(out, "config", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PairingError, ProductError, DegenerateFitError, ValueError,
            NotImplementedError) as exc:
        _write_error(out, "numeric", exc)
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if verbose:
        print(json.dumps(summary, indent=2, default=str))
    return EXIT_OK


def _write_error(out, kind, exc):
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "error.json",
                    {"kind": kind, "error": str(exc),
                     "type": type(exc).__name__})
    except OSError:
        pass


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="distext",
        description="distribution-extension experiment driver")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run one experiment config")
    runp.add_argument("config", help="TOML experiment config")
    runp.add_argument("--out", default=None, help="output directory")
    runp.add_argument("--threads", type=int, default=1,
                      help="worker threads for independent grid points")
    runp.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, out_dir=args.out, verbose=args.verbose,
                   threads=args.threads)
    parser.error("unknown command")


if __name__ == "__main__":
    sys.exit(main())
