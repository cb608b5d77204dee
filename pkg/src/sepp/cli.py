"""Command-line interface.

Exit codes: 0 success, 1 model error, 2 input or usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .em import FitConfig, fit
from .errors import InputError, SeppError
from .evaluate import (aic, delta_aic, fit_poisson_baseline, information_gain, max_pai_cell, n_free_params,
                       rolling_hit_rates)
from .geometry import CovariateMap
from .inference import hessian_covariance, rathbun_covariance
from .model import InteriorSpec, ModelParams, log_likelihood
from .residuals import (FITTED_REFERENCE, HOMOGENEOUS_REFERENCE, residual_series, voronoi_residuals)
from .simulate import OffspringSpec, SimConfig, simulate
from .studies import STUDIES

EXIT_OK, EXIT_MODEL, EXIT_INPUT = 0, 1, 2
FIT_FORMAT = "sepp-fit/1"


def _parse_columns(text: str | None):
    if text is None or text.strip() == "":
        return None
    try:
        return [int(c) for c in text.split(",")]
    except ValueError:
        raise InputError(f"--columns must be comma-separated integers, got {text!r}") from None


def _load_cov(path, columns=None) -> CovariateMap:
    cov = sio.load_covariates(path)
    if columns is not None:
        bad = [c for c in columns if not 1 <= c < cov.p]
        if bad:
            raise InputError(f"covariate columns {bad} out of range 1..{cov.p - 1}")
        cov = cov.select(columns)
    return cov


def _interior_from_config(spec, catalog):
    if spec in (None, "auto"):
        return None
    if spec == "full":
        return "full"
    if isinstance(spec, dict) and set(spec) <= {"space_buffer", "time_buffer"}:
        return InteriorSpec(catalog.domain.erode(float(spec.get("space_buffer", 0.0))),
                            catalog.T - float(spec.get("time_buffer", 0.0)))
    raise InputError("interior must be 'auto', 'full' or {'space_buffer': d, 'time_buffer': t}")


FIT_KEYS = {"interior", "ll_tol", "param_tol", "max_iter", "delta", "spatial_cutoff", "temporal_cutoff",
            "columns", "covariance", "T"}


def _covariances(params, cov, catalog, methods, interior=None) -> dict:
    out = {}
    for method in methods:
        fn = {"rathbun": rathbun_covariance, "hessian": hessian_covariance}.get(method)
        if fn is None:
            raise InputError(f"unknown covariance method {method!r}")
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                res = fn(params, cov, catalog, interior=interior)
            out[method] = res.to_dict()
            out[method]["warnings"] = [str(w.message) for w in caught]
        except SeppError as exc:
            out[method] = {"error": str(exc)}
    return out


def cmd_fit(args) -> int:
    config = sio.read_json(args.config) if args.config else {}
    unknown = set(config) - FIT_KEYS
    if unknown:
        raise InputError(f"unknown fit config keys: {sorted(unknown)}")
    columns = _parse_columns(args.columns) if args.columns is not None else config.get("columns")
    cov = _load_cov(args.covariates, columns)
    catalog, meta = sio.read_events(args.events, cov.domain, T=args.T if args.T is not None else config.get("T"))
    if args.poisson:
        base = fit_poisson_baseline(catalog, cov, columns=range(1, cov.p))
        params, ll, k = base.params, base.loglik, base.k
        record = {"model": "poisson", "params": params.to_dict(), "loglik": ll, "ll_trace": [ll],
                  "converged": True, "iterations": 1, "flags": []}
    else:
        fc = FitConfig(interior=_interior_from_config(config.get("interior", "auto"), catalog),
                       **{k: config[k] for k in ("ll_tol", "param_tol", "max_iter", "delta", "spatial_cutoff",
                                                 "temporal_cutoff") if k in config})
        init = sio.params_from_fit(sio.read_json(args.init)) if args.init else None
        res = fit(catalog, cov, fc, init=init)
        params, ll, k = res.params, res.loglik, n_free_params(cov, catalog)
        record = {"model": "sepp", "params": params.to_dict(), "loglik": ll, "ll_trace": res.ll_trace,
                  "converged": res.converged, "iterations": res.iterations, "flags": res.flags,
                  "interior": {"t0": res.interior.t0, "x0_wkt": res.interior.x0.polygon.wkt},
                  "cutoffs": {"spatial": res.spatial_cutoff, "temporal": res.temporal_cutoff},
                  "expected_background": res.expected_background, "expected_triggered": res.expected_triggered,
                  "n_interior_targets": res.n_interior_targets}
        methods = config.get("covariance", ["rathbun", "hessian"])
        record["covariance"] = _covariances(params, cov, catalog, methods, res.interior)
    record.update({
        "format": FIT_FORMAT, "version": __version__,
        "vector_names": ModelParams.vector_names(cov.names, catalog.marks),
        "natural_units": sio.natural_units(params, meta), "units": meta.to_dict(),
        "k": k, "aic": aic(ll, k), "n_events": catalog.n, "n_target": int(np.sum(catalog.is_target)),
        "T": catalog.T, "columns": columns, "covariate_names": list(cov.names),
        "config": config,
        "inputs": {"events": str(Path(args.events).resolve()), "covariates": str(Path(args.covariates).resolve()),
                   "events_sha256": sio.file_digest(args.events),
                   "covariates_sha256": sio.file_digest(args.covariates)},
    })
    sio.write_json(args.out, record)
    print(f"wrote {args.out}: loglik={ll:.6f} AIC={record['aic']:.4f} k={k}")
    return EXIT_OK


def _load_fit(path):
    record = sio.read_json(path)
    if record.get("format") != FIT_FORMAT:
        raise InputError(f"{path} is not a fit record ({FIT_FORMAT})")
    return record


def _fit_cov(record, override=None):
    return _load_cov(override or record["inputs"]["covariates"], record.get("columns"))


def cmd_simulate(args) -> int:
    config = sio.read_json(args.config)
    base = Path(args.config).resolve().parent
    try:
        cov_path = base / config["covariates"]
        params = ModelParams.from_dict(config["params"])
        T = float(config["T"])
    except KeyError as exc:
        raise InputError(f"simulation config lacks {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid simulation parameters ({exc})") from None
    cov = _load_cov(cov_path, config.get("columns"))
    names = {f.name for f in fields(OffspringSpec)}
    off = config.get("offspring", {})
    if set(off) - names:
        raise InputError(f"unknown offspring keys: {sorted(set(off) - names)}")
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    sim = simulate(SimConfig(cov, params, T, offspring=OffspringSpec(**off), seed=seed,
                             exterior=config.get("exterior", "drop"),
                             target_mark=config.get("target_mark", "target"),
                             indicator_rates=config.get("indicator_rates", {}),
                             allow_supercritical=bool(config.get("allow_supercritical", False))))
    out = Path(args.out)
    meta = sio.EventMeta(time_unit=config.get("time_unit", "days"), length_unit=config.get("length_unit", "feet"),
                         epoch=config.get("epoch"))
    sio.write_events(out, sim.catalog, meta)
    prov = out.with_name(out.stem + ".provenance.csv")
    with open(prov, "w", encoding="utf-8", newline="") as fh:
        fh.write("index,generation,parent\n")
        for i, (g, p) in enumerate(zip(sim.generation, sim.parent)):
            fh.write(f"{i},{int(g)},{int(p)}\n")
    sio.write_json(out.with_name(out.stem + ".run.json"),
                   {"command": "simulate", "version": __version__, "seed": seed, "config": config,
                    "n_events": sim.catalog.n, "n_background": sim.n_background, "n_exterior": sim.n_exterior})
    print(f"wrote {out} ({sim.catalog.n} events, seed {seed})")
    return EXIT_OK


def cmd_residuals(args) -> int:
    record = _load_fit(args.fit)
    cov = _fit_cov(record, args.covariates)
    params = sio.params_from_fit(record)
    catalog, _ = sio.read_events(args.events, cov.domain, T=args.T)
    ref = {"fitted": FITTED_REFERENCE, "homogeneous": HOMOGENEOUS_REFERENCE}[args.reference]
    t1, t2 = args.window if args.window else (0.0, catalog.T)
    rmap = voronoi_residuals(params, cov, catalog, (t1, t2), n_mc=args.n_mc, seed=args.seed, reference=ref)
    doc = rmap.to_geojson()
    doc["properties"].update({"seed": args.seed, "n_mc": args.n_mc, "fit": str(Path(args.fit).resolve()),
                              "events_sha256": sio.file_digest(args.events), "version": __version__})
    sio.write_json(args.out, doc)
    print(f"wrote {args.out} ({len(rmap)} cells)")
    if args.animate:
        frames = args.frames or max(1, int((catalog.T - t1) // args.frame_dt))
        series = residual_series(params, cov, catalog, t1, args.frame_dt, frames, n_mc=args.n_mc, seed=args.seed,
                                 reference=ref)
        outdir = Path(args.frames_dir or Path(args.out).with_suffix("").as_posix() + "_frames")
        sio.write_frames(outdir, series)
        print(f"wrote {len(series.frames)} frames to {outdir}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, base = _load_fit(args.fit), _load_fit(args.baseline)
    cov_m = _fit_cov(model, args.covariates)
    cov_b = _fit_cov(base, args.covariates)
    test, _ = sio.read_events(args.test, cov_m.domain, T=args.T)
    pm, pb = sio.params_from_fit(model), sio.params_from_fit(base)
    ll_m = log_likelihood(pm, cov_m, test)
    ll_b = log_likelihood(pb, cov_b, test)
    k_m, k_b = int(model["k"]), int(base["k"])
    history = None
    if args.history:
        history, _ = sio.read_events(args.history, cov_m.domain)
    fractions = [float(f) for f in args.fractions.split(",")]
    report = {
        "version": __version__, "T": test.T, "n_test": test.n,
        "loglik_model": ll_m, "loglik_baseline": ll_b, "k_model": k_m, "k_baseline": k_b,
        "information_gain": information_gain(ll_m, ll_b, test.T),
        "delta_aic": delta_aic(ll_m, k_m, ll_b, k_b),
        "in_sample": {"information_gain": information_gain(model["loglik"], base["loglik"], model["T"]),
                      "delta_aic": model["aic"] - base["aic"]},
        "hit_rate_model": rolling_hit_rates(pm, cov_m, test, fractions, history=history, step=args.step,
                                            seed=args.seed),
        "hit_rate_baseline": rolling_hit_rates(pb, cov_b, test, fractions, history=history, step=args.step,
                                               seed=args.seed),
    }
    cell, best = max_pai_cell(np.bincount(test.cells(cov_m)[test.is_target], minlength=cov_m.ncells), cov_m.areas)
    report["max_pai_single_cell"] = {"cell": cell, "pai": best}
    report["inputs"] = {"fit": str(Path(args.fit).resolve()), "baseline": str(Path(args.baseline).resolve()),
                        "test_sha256": sio.file_digest(args.test), "seed": args.seed, "step": args.step}
    sio.write_json(args.out, report)
    print(f"wrote {args.out}: G={report['information_gain']:.6g} dAIC={report['delta_aic']:.6g}")
    return EXIT_OK


def cmd_study(args) -> int:
    runner, config_cls = STUDIES[args.name]
    overrides = sio.read_json(args.config) if args.config else {}
    valid = {f.name for f in fields(config_cls)}
    if set(overrides) - valid:
        raise InputError(f"unknown {args.name} config keys: {sorted(set(overrides) - valid)}")
    for key in ("reps", "seed"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    overrides = {k: tuple(map(tuple, v)) if k == "kernels" else tuple(v) if isinstance(v, list) else v
                 for k, v in overrides.items()}
    try:
        config = config_cls(**overrides)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid {args.name} config ({exc})") from None
    result = runner(config)
    paths = result.save(args.out)
    print(f"study {args.name} seed={config.seed}: " + ", ".join(paths.values()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sepp", description="Self-exciting point process with covariate background.")
    p.add_argument("--version", action="version", version=f"sepp {__version__}")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap for parallel studies (default: $SEPP_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit the model (or a Poisson baseline) by EM")
    f.add_argument("--events", required=True)
    f.add_argument("--covariates", required=True)
    f.add_argument("--config", help="fit config JSON")
    f.add_argument("--columns", help="covariate columns to keep (1-based, comma-separated)")
    f.add_argument("--T", type=float, help="observation window length (overrides the event sidecar)")
    f.add_argument("--init", help="fit.json whose parameters start EM")
    f.add_argument("--poisson", action="store_true", help="fit the covariate Poisson baseline without triggering")
    f.add_argument("--out", default="fit.json")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("simulate", help="simulate events from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", default="events.csv")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("residuals", help="Voronoi residuals as GeoJSON")
    r.add_argument("--fit", required=True)
    r.add_argument("--events", required=True)
    r.add_argument("--covariates", help="override the covariate path stored in the fit")
    r.add_argument("--T", type=float)
    r.add_argument("--window", type=float, nargs=2, metavar=("T1", "T2"))
    r.add_argument("--n-mc", type=int, default=2000)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--reference", choices=("fitted", "homogeneous"), default="fitted")
    r.add_argument("--animate", action="store_true", help="also write smoothed residual frames")
    r.add_argument("--frame-dt", type=float, default=7.0)
    r.add_argument("--frames", type=int)
    r.add_argument("--frames-dir")
    r.add_argument("--out", default="residuals.geojson")
    r.set_defaults(func=cmd_residuals)

    e = sub.add_parser("evaluate", help="information gain, AIC and hotspot scores on test events")
    e.add_argument("--fit", required=True)
    e.add_argument("--baseline", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--history", help="events preceding the test window")
    e.add_argument("--covariates")
    e.add_argument("--T", type=float)
    e.add_argument("--fractions", default="0.01,0.02,0.05,0.1,0.2")
    e.add_argument("--step", type=float, default=1.0)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="report.json")
    e.set_defaults(func=cmd_evaluate)

    st = sub.add_parser("study", help="run a simulation study")
    st.add_argument("name", choices=sorted(STUDIES))
    st.add_argument("--config", help="JSON overrides of the study config")
    st.add_argument("--reps", type=int)
    st.add_argument("--seed", type=int)
    st.add_argument("--out", default="study_out")
    st.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be at least 1", file=sys.stderr)
            return EXIT_INPUT
        os.environ["SEPP_THREADS"] = str(args.threads)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SeppError, ValueError, ArithmeticError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
