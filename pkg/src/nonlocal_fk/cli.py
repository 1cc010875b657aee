"""Command line: ``nonlocal-fk solve|verify|diagnose|oracle --config FILE``.

Exit codes: 0 ok, 1 configuration error, 2 runtime error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config, path_config_from, problem_from_config, with_defaults
from .expr import EvaluationError
from .pathsim import PathConfig, resolve_workers, simulate_exit, write_trace_csv
from .sampler import RngStream

log = logging.getLogger("nonlocal_fk")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n")


def _require(cfg: dict, *keys: str) -> None:
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"missing required block {k!r} for this command")


def _header(cfg: dict, command: str) -> dict:
    return {"command": command, "version": __version__, "config": cfg}


# -- commands -------------------------------------------------------------------


def cmd_solve(cfg: dict, out: Path, threads: int) -> int:
    from .estimator import solve_grid, solve_point

    _require(cfg, "problem", "numerics")
    spec = problem_from_config(cfg["problem"])
    nc = cfg["numerics"]
    pcfg = path_config_from(nc)
    if "h" not in nc and "points" not in nc:
        raise ConfigError("numerics: give a grid spacing 'h' and/or a list of 'points'")
    seed = cfg["seed"]
    n = nc["n_paths"]
    summary = _header(cfg, "solve")
    summary["warnings"] = _validate(spec)
    t0 = time.perf_counter()
    if "points" in nc:
        pts = [np.asarray(p, dtype=float) for p in nc["points"]]
        for i, p in enumerate(pts):
            if p.shape != (spec.dim,):
                raise ConfigError(f"numerics.points.{i}: expected {spec.dim} coordinates")
            if not spec.domain.contains(p):
                raise ConfigError(f"numerics.points.{i}: point is not inside the domain")
        rows = []
        # point i uses streams [i n, (i + 1) n), as for grids
        for i, p in enumerate(pts):
            est = solve_point(spec, p, n, pcfg, seed=seed, workers=threads, stream_start=i * n)
            rows.append((p, est))
        with open(out / "points.csv", "w") as fh:
            fh.write(",".join([f"x{i + 1}" for i in range(spec.dim)] + ["u", "stderr", "n", "censored_frac"]) + "\n")
            for p, e in rows:
                fh.write(",".join([repr(float(v)) for v in p]
                                  + [repr(e.mean), repr(e.stderr), str(e.n_paths), repr(e.censored_fraction)]) + "\n")
        summary["points"] = [{"x": p.tolist(), **e.to_dict()} for p, e in rows]
    if "h" in nc:
        grid, ests = solve_grid(spec, nc["h"], n, pcfg, seed=seed, workers=threads)
        grid.to_csv(out / "grid.csv")
        summary["grid"] = {
            "h": nc["h"], "n_points": len(grid.points), "n_paths_per_point": n,
            "u_min": float(grid.values.min()), "u_max": float(grid.values.max()),
            "max_stderr": float(grid.stderr.max()), "max_censored_fraction": float(grid.censored_fraction.max()),
            "n_poisoned": int(sum(e.n_poisoned for e in ests)),
        }
    if cfg.get("output", {}).get("trace"):
        rec = simulate_exit(spec, np.asarray(nc["points"][0] if "points" in nc else spec.domain.center, dtype=float),
                            PathConfig(dt=pcfg.dt, t_max=pcfg.t_max, hit_tol=pcfg.hit_tol, record_trace=True),
                            RngStream(seed, 0))
        write_trace_csv(rec, out / "trace.csv")
    summary["wallclock"] = time.perf_counter() - t0
    write_json(out / "summary.json", summary)
    return EXIT_OK


def _validate(spec) -> list[str]:
    from .model import validate_spec

    return validate_spec(spec)


def cmd_verify(cfg: dict, out: Path, threads: int, config_dir: Path) -> int:
    from .estimator import GridFunction
    from .weakform import QuadraturePolicy, TestFunction, verify_solution

    _require(cfg, "problem", "verify")
    spec = problem_from_config(cfg["problem"])
    vc = cfg["verify"]
    if ("candidate_csv" in vc) == ("candidate_expr" in vc):
        raise ConfigError("verify: give exactly one of 'candidate_csv' and 'candidate_expr'")
    q = QuadraturePolicy(h_q=vc.get("h_q"), delta=vc.get("delta"), R=vc.get("R"))
    if "candidate_csv" in vc:
        if "h" not in vc:
            raise ConfigError("verify.h: grid spacing of the candidate is required")
        path = Path(vc["candidate_csv"])
        if not path.is_absolute():
            path = config_dir / path
        if not path.exists():
            raise ConfigError(f"verify.candidate_csv: file not found: {path}")
        cand = GridFunction.from_csv(path, spec.domain, vc["h"], dt=vc.get("dt", math.nan))
        if cand.points.shape[1] != spec.dim:
            raise ConfigError("verify.candidate_csv: column count does not match the problem dimension")
        expected = spec.domain.grid_points(vc["h"])
        if len(expected) != len(cand.points) or not np.allclose(expected, cand.points, rtol=0, atol=1e-9 * vc["h"]):
            raise ConfigError("verify.candidate_csv: grid does not match the domain lattice at spacing h")
    else:
        cand = vc["candidate_expr"]
    bumps = None
    if "bumps" in vc:
        bumps = [TestFunction(b["center"], b["width"]) for b in vc["bumps"]]
    try:
        rep = verify_solution(cand, spec, bumps, q, C=vc.get("C", 0.1), dt=vc.get("dt"))
    except ValueError as exc:
        raise ConfigError(f"verify: {exc}") from exc
    report = _header(cfg, "verify")
    report.update(rep.to_dict())
    write_json(out / "verify.json", report)
    print(f"verify: {'PASS' if rep.passed else 'FAIL'}  max normalized residual {rep.max_normalized:.3e}  "
          f"C_hat {rep.c_hat:.3g}  (C = {rep.threshold_constant:g})")
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_diagnose(cfg: dict, out: Path, threads: int) -> int:
    from . import estimator as est
    from .expr import parse_expression
    from .model import kato_profile

    _require(cfg, "problem", "diagnose")
    spec = problem_from_config(cfg["problem"])
    dc = cfg["diagnose"]
    seed = cfg["seed"]
    nc = cfg.get("numerics", {})
    dt = nc.get("dt", 1e-3)
    pcfg = PathConfig(dt=dt, t_max=nc.get("t_max", 20.0), hit_tol=nc.get("hit_tol"))
    res = _header(cfg, "diagnose")
    if dc.get("validate", True):
        res["warnings"] = _validate(spec)
    if "kato" in dc:
        k = dc["kato"]
        fld = getattr(spec, k.get("field", "c"))
        prof = kato_profile(fld, spec.domain, sorted(k["radii"], reverse=True), k["lattice_h"])
        res["kato"] = {"radii": prof.radii, "values": prof.values}
    if "density" in dc:
        k = dc["density"]
        x0 = k.get("x0", list(spec.domain.center))
        rep = est.empirical_density(spec, k["t"], x0, n=k.get("n", 10 ** 6), dt=k.get("dt", min(dt, k["t"] / 10)),
                                    seed=seed, workers=threads, min_count=k.get("min_count", 100),
                                    control=k.get("control", True))
        rep.write_csv(out / "density.csv")
        res["density"] = rep.to_dict()
    if "exit" in dc:
        k = dc["exit"]
        n = k.get("n", 10 ** 5)
        cfg_e = pcfg
        if k.get("calibrate_t_max", False):
            t_max, fit = est.calibrate_t_max(spec, k["x"], n, pcfg, seed=seed, t_min=k.get("t_min", 1.0))
            cfg_e = PathConfig(dt=pcfg.dt, t_max=t_max, hit_tol=pcfg.hit_tol)
            res["t_max_calibrated"] = t_max
        st = est.exit_statistics(spec, k["x"], n, cfg_e, seed=seed, workers=threads, t_min=k.get("t_min", 1.0))
        st.write_csv(out / "exit.csv")
        res["exit"] = st.to_dict()
        res["exit"]["censored_fraction"] = st.n_censored / n
    if "displacement" in dc:
        k = dc["displacement"]
        starts = np.asarray(k["starts"], dtype=float) if "starts" in k else est.default_start_lattice(spec.domain)
        rows = est.small_time_displacement(spec, starts, k["r"], sorted(k["times"], reverse=True), k.get("n", 20000),
                                           dt, seed=seed, workers=threads)
        with open(out / "displacement.csv", "w") as fh:
            fh.write("t,sup_prob,stderr\n")
            for r in rows:
                fh.write(f"{r.t!r},{r.sup_prob!r},{r.stderr!r}\n")
        res["displacement"] = {"rows": [{"t": r.t, "sup_prob": r.sup_prob, "stderr": r.stderr} for r in rows],
                               "strictly_decreasing": est.strictly_decreasing(rows)}
    if "occupation" in dc:
        k = dc["occupation"]
        e = est.occupation_estimate(spec, parse_expression(k["v"], spec.dim), k["x"], k.get("n", 20000), pcfg,
                                    seed=seed, workers=threads)
        res["occupation"] = e.to_dict()
    if "continuity" in dc:
        k = dc["continuity"]
        oracle = None
        if "oracle" in k:
            from .expr import compile_fields

            prog = compile_fields([parse_expression(k["oracle"], spec.dim)])
            oracle = lambda p: prog.eval(0, p)  # noqa: E731
        rep = est.boundary_continuity_probe(spec, k["z"], sorted(k["radii"], reverse=True), k.get("n", 20000), pcfg,
                                            seed=seed, workers=threads, oracle=oracle, tol=k.get("tol", 0.02))
        res["continuity"] = rep.to_dict()
    write_json(out / "diagnose.json", res)
    return EXIT_OK


def cmd_oracle(cfg: dict, out: Path, threads: int) -> int:
    from .oracles import DT_REF, run_oracles

    oc = cfg.get("oracle", {})
    try:
        results = run_oracles(dt=oc.get("dt", DT_REF), n_paths=oc.get("n_paths", 20000), seed=cfg["seed"],
                              only=oc.get("only"))
    except KeyError as exc:
        raise ConfigError(f"oracle.only: {exc.args[0]}") from exc
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:32s} error {r.error:.3e}  tol {r.tolerance:.3e}")
    summary = _header(cfg, "oracle")
    summary["all_passed"] = all(r.passed for r in results)
    summary["oracles"] = [r.to_dict() for r in results]
    write_json(out / "oracle.json", summary)
    return EXIT_OK if summary["all_passed"] else EXIT_VERIFY


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonlocal-fk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=["solve", "verify", "diagnose", "oracle"])
    p.add_argument("--config", help="JSON run configuration (optional for 'oracle')")
    p.add_argument("--out", help="output directory (default: output.dir from the config, else ./out)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, help="worker threads (default: config, then $NONLOCAL_FK_THREADS, then 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.config:
            cfg = load_config(args.config)
            config_dir = Path(args.config).resolve().parent
        elif args.command == "oracle":
            cfg = {}
            config_dir = Path.cwd()
        else:
            raise ConfigError("--config is required")
        cfg = with_defaults(cfg)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg["seed"] = args.seed
        threads = args.threads if args.threads is not None else cfg.get("threads")
        threads = resolve_workers(threads)
        if threads < 1:
            raise ConfigError("--threads must be positive")
        out = Path(args.out or cfg.get("output", {}).get("dir", "out"))
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(cfg, out, threads)
        if args.command == "verify":
            return cmd_verify(cfg, out, threads, config_dir)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, out, threads)
        return cmd_oracle(cfg, out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EvaluationError, ValueError, OSError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
