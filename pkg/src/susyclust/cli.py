"""Batch front-end: ``python -m susyclust {verify,green,bounds,ldos-scan}``.

Runs are driven by one YAML file (see ``DEFAULTS`` for the schema).  Unknown
keys are rejected.  Every CSV starts with a ``# config:`` line holding the
resolved configuration as JSON, and every JSON report carries it under
"config".  The thread count is a runtime knob and is not part of the embedded
configuration, so outputs are byte-identical across thread counts.

Exit codes: 0 ok, 1 suite failure, 2 usage or schema error, 3 precondition.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_PRECONDITION = 0, 1, 2, 3

DEFAULTS = {
    "model": {"D": 1, "extents": [6], "hopping": "laplacian", "hop_C": 1.0, "hop_alpha": 1.0, "block": None,
              "gamma": 1.0, "colours": 1},
    "disorder": {"kind": "gaussian", "sigma": 1.0},
    "spectral": {"E": [0.0], "eps": 0.1, "beta": 0.0, "branch": 1},
    "method": {"kind": "all", "N_max": 2, "n_omega": 12, "n_s": 4, "omega": "auto", "shift": None, "cutoff": None,
               "max_order": 2, "mc_samples": 100_000, "extrapolate_eps": [0.04, 0.02, 0.01], "max_distance": 3,
               "pairs": None, "seed": 0},
    "bounds": {"alpha": None, "theta": 0.5, "strong_example": None, "weak_example": "II.1", "W": None, "z": 0.0,
               "n_max": 8, "delta": None},
    "ldos": {"E": None, "E_min": -1.0, "E_max": 5.0, "n_E": 25, "eps": 0.05, "samples": 20_000, "site": None},
    "output": {"dir": ".", "green": "green.csv", "bounds": "bounds.json", "ldos": "ldos.csv"},
}

CHOICES = {
    ("model", "hopping"): ("laplacian", "exponential"),
    ("disorder", "kind"): ("gaussian", "bump"),
    ("method", "kind"): ("direct", "dual", "mc", "all"),
    ("method", "omega"): ("auto", "gauss", "mc"),
    ("spectral", "branch"): (1, -1),
    ("bounds", "strong_example"): (None, "I.1", "I.2"),
    ("bounds", "weak_example"): ("II.1", "II.2"),
}


class UsageError(Exception):
    pass


class PreconditionError(Exception):
    pass


# ---------------------------------------------------------------- configuration


def _check_type(path, default, value):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        if ok and isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            ok = value.is_integer()
            value = int(value) if ok else value
        elif ok and isinstance(default, float):
            value = float(value)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        value = [value] if isinstance(value, (int, float)) and not isinstance(value, bool) else value
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise UsageError(f"config key {path}: expected {type(default).__name__}, got {value!r}")
    return value


def resolve_config(raw: dict | None) -> dict:
    """Merge a user config into DEFAULTS, rejecting unknown keys and ill-typed values."""
    cfg = copy.deepcopy(DEFAULTS)
    raw = raw or {}
    if not isinstance(raw, dict):
        raise UsageError("config must be a mapping of sections")
    for sec, body in raw.items():
        if sec not in cfg:
            raise UsageError(f"unknown config section {sec!r}")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise UsageError(f"config section {sec!r} must be a mapping")
        for key, value in body.items():
            if key not in cfg[sec]:
                raise UsageError(f"unknown config key {sec}.{key}")
            cfg[sec][key] = _check_type(f"{sec}.{key}", DEFAULTS[sec][key], value)
    for (sec, key), allowed in CHOICES.items():
        if cfg[sec][key] not in allowed:
            raise UsageError(f"config key {sec}.{key} must be one of {allowed}")
    if cfg["model"]["D"] != len(cfg["model"]["extents"]):
        raise UsageError("model.D must equal the number of box extents")
    return cfg


def load_config(path) -> dict:
    if path is None:
        return resolve_config({})
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config is not valid YAML: {exc}") from exc
    return resolve_config(raw)


def config_header(cfg) -> str:
    return "# config: " + json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def _f(v) -> str:
    """17 significant digits, with inf/nan spelled out."""
    v = float(v)
    return f"{v:.16e}" if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")


# ---------------------------------------------------------------- model construction


def build_model(cfg):
    from .disorder import DisorderModel
    from .randschro import LatticeModel

    m = cfg["model"]
    block = tuple(tuple(complex(c) for c in row) for row in m["block"]) if m["block"] is not None else None
    model = LatticeModel(tuple(m["extents"]), m["colours"], m["hopping"], m["hop_C"], m["hop_alpha"], block,
                         m["gamma"])
    disorder = DisorderModel(cfg["disorder"]["kind"], cfg["disorder"]["sigma"])
    return model, disorder


def _positions(model):
    return np.array(model.sites, dtype=float)


def _alpha(cfg, model):
    a = cfg["bounds"]["alpha"]
    if a is not None:
        return a
    return model.hop_alpha if model.hopping == "exponential" else 1.0


def _delta(model, E):
    """Distance of E below (or above) the infinite-lattice band; 0 inside it."""
    from .randschro import band_edges

    lo, hi = band_edges(model)
    return max(lo - E, E - hi, 0.0)


def strong_chain(cfg, model, E):
    from .bounds import hopping_constants, imb_idb_constants, strong_threshold

    b = cfg["bounds"]
    H = _hamiltonian(model)
    alpha = _alpha(cfg, model)
    calC, calCt = hopping_constants(H, _positions(model), alpha, b["theta"], model.colours, model.dim)
    rec = imb_idb_constants(cfg["disorder"]["kind"], model.gamma, b["z"], b["strong_example"], None, b["n_max"],
                            cfg["disorder"]["sigma"])
    return strong_threshold(E, rec, alpha, calC, calCt, b["theta"], model.colours, model.dim), rec


def weak_chain(cfg, model, E, theta=None, record=None):
    """Weak-disorder chain at the distance delta of E to the band; the covariance is (H - E)^-1 on the box."""
    from .bounds import covariance_constants, imb_idb_constants, weak_threshold

    b = cfg["bounds"]
    delta = b["delta"] if b["delta"] is not None else _delta(model, E)
    if delta <= 0:
        raise PreconditionError(f"weak-disorder bounds need E outside the band (E = {E})")
    theta = b["theta"] if theta is None else theta
    H = _hamiltonian(model)
    C = np.linalg.inv(H - E * np.eye(len(H)))
    calC, calCt = covariance_constants(C, _positions(model), delta, theta, model.colours)
    rec = record or imb_idb_constants(cfg["disorder"]["kind"], model.gamma, b["z"], b["weak_example"], b["W"],
                                      b["n_max"], cfg["disorder"]["sigma"])
    return weak_threshold(delta, rec, calC, calCt, theta, model.colours, model.dim), rec


def _hamiltonian(model):
    from .randschro import build_hamiltonian

    return build_hamiltonian(model)


# ---------------------------------------------------------------- commands


def cmd_verify(suite, seed, out):
    from .suites import format_table, run_suite

    rows, secs = run_suite(suite, seed)
    text = format_table(rows)
    print(text)
    ok = all(r.passed for r in rows)
    print(f"suite {suite}: {'PASS' if ok else 'FAIL'} ({sum(r.passed for r in rows)}/{len(rows)} checks, {secs:.1f} s)")
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / f"verify_{suite}.txt").write_text(text + "\n")
    return EXIT_OK if ok else EXIT_FAIL


def _pairs(cfg, model):
    meth = cfg["method"]
    if meth["pairs"] is not None:
        return [(tuple(np.atleast_1d(x)), tuple(np.atleast_1d(y))) for x, y in meth["pairs"]]
    sites = model.sites
    out = []
    for i, x in enumerate(sites):
        for j, y in enumerate(sites):
            if j >= i and model.distance(i, j) <= meth["max_distance"]:
                out.append((x, y))
    return out


def green_rows(cfg, threads=1):
    """Rows (x, y, branch, method, order, value_re, value_im, err, bound) for every E and pair."""
    from .randschro import (ClusterOptions, SpectralPoint, _pref_abs, cluster_green, mc_green_extrapolated,
                            mc_green_matrix)

    model, disorder = build_model(cfg)
    sp, meth = cfg["spectral"], cfg["method"]
    kinds = ["direct", "dual", "mc"] if meth["kind"] == "all" else [meth["kind"]]
    opts = ClusterOptions(n_s=meth["n_s"], n_omega=meth["n_omega"], omega=meth["omega"], shift=meth["shift"],
                          seed=meth["seed"], cutoff=meth["cutoff"], max_order=meth["max_order"], threads=threads)
    rows = []
    pairs = _pairs(cfg, model)
    for E in sp["E"]:
        point = SpectralPoint(E, sp["eps"], sp["beta"], sp["branch"])
        chains = {}
        if "direct" in kinds:
            chains["direct"] = strong_chain(cfg, model, E)[0]
        if "dual" in kinds:
            chains["dual"] = weak_chain(cfg, model, E)[0] if _delta(model, E) > 0 else None
        mc = None
        if "mc" in kinds:
            if sp["eps"] == 0 and sp["beta"] == 0:
                mc = mc_green_extrapolated(model, disorder, point, tuple(meth["extrapolate_eps"]),
                                           meth["mc_samples"], meth["seed"], threads)
            else:
                mc = mc_green_matrix(model, disorder, point, meth["mc_samples"], meth["seed"], threads)
        for x, y in pairs:
            i, j = model.index(x), model.index(y)
            dist, same = model.distance(i, j), i == j
            xs, ys = " ".join(map(str, x)), " ".join(map(str, y))
            for kind in ("direct", "dual"):
                if kind not in kinds:
                    continue
                ch = chains[kind]
                bound = (lambda N, ch=ch: ch.truncation(N, model.gamma, dist, same)) if ch is not None else None
                g = cluster_green(model, disorder, point, x, y, meth["N_max"], kind, opts, bound)
                for t in g.table:
                    c = t.contribution.flat[0]
                    rows.append([xs, ys, sp["branch"], kind, t.order, _f(E), _f(c.real), _f(c.imag),
                                 _f((t.quad_err + t.mc_err) * _pref_abs(t) + t.cutoff_tail), ""])
                v = g.value.flat[0]
                tb = g.truncation_bound if ch is not None else math.nan
                rows.append([xs, ys, sp["branch"], kind, "sum", _f(E), _f(v.real), _f(v.imag), _f(g.error), _f(tb)])
            if mc is not None:
                G, se = mc.block(model, x, y)
                rows.append([xs, ys, sp["branch"], "mc", "sum", _f(E), _f(G[0, 0].real), _f(G[0, 0].imag),
                             _f(se[0, 0]), ""])
    return rows


GREEN_COLUMNS = ["x", "y", "branch", "method", "order", "E", "value_re", "value_im", "err", "bound"]


def _write_csv(path, cfg, columns, rows):
    buf = io.StringIO()
    buf.write(config_header(cfg) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def cmd_green(cfg, threads):
    rows = green_rows(cfg, threads)
    path = Path(cfg["output"]["dir"]) / cfg["output"]["green"]
    _write_csv(path, cfg, GREEN_COLUMNS, rows)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def bounds_report(cfg):
    """BoundReport dictionary: norms, stripping constants, strong and weak chains, Lifshitz minimizer."""
    from .bounds import (bound_report, lattice_norms, lifshitz_bound, omega_constant, omega_infimum, record_dict)

    model, _ = build_model(cfg)
    E = cfg["spectral"]["E"][0]
    H = _hamiltonian(model)
    alpha = _alpha(cfg, model)
    theta = cfg["bounds"]["theta"]
    plain = lattice_norms(H, 0.0, 0.0, _positions(model), model.colours)
    wt = lattice_norms(H, alpha, theta, _positions(model), model.colours)
    om, d_om = omega_constant(model.dim, 200)
    extra = {
        "norms.H": {"inf1": plain.inf1, "infinf": plain.infinf},
        "norms.H_theta": {"inf1": wt.inf1, "infinf": wt.infinf, "rate": alpha, "theta": theta},
        "Omega_D": {"value": omega_infimum(model.dim), "d_max_200_value": om, "d_at_min": d_om, "D": model.dim},
    }
    strong, rec_s = strong_chain(cfg, model, E)
    parts = [strong]
    extra["strong.records"] = record_dict(rec_s)
    extra["strong.truncation"] = dict(zip(("tail", "divergent"), strong.truncation(cfg["method"]["N_max"],
                                                                                     model.gamma)))
    extra["strong.ratio_at_gamma"] = strong.ratio(model.gamma)
    delta = cfg["bounds"]["delta"] if cfg["bounds"]["delta"] is not None else _delta(model, E)
    if delta > 0:
        weak, rec_w = weak_chain(cfg, model, E)
        parts.append(weak)
        extra["weak.records"] = record_dict(rec_w)
        extra["weak.delta_over_gamma"] = {"value": delta / model.gamma, "threshold": weak.C,
                                          "in_regime": weak.in_regime(model.gamma)}
        lf_chain, _ = weak_chain(cfg, model, E, theta=0.0, record=rec_w)
        lf = lifshitz_bound(model.gamma, delta, chain=lf_chain)
        extra["lifshitz"] = {"N_star": lf.N_star, "value": lf.value, "log_value": lf.log_value,
                             "log_C_prime": lf.log_C_prime, "in_regime": lf.in_regime,
                             "formula_id": "min_N gamma^-1 C' (N!)^(2p) (C' gamma/delta)^N, C' = C at theta = 0"}
    else:
        extra["weak"] = "E lies in the band: the weak-disorder chain does not apply"
    rep = bound_report(*parts, extra=extra)
    rep["config"] = cfg
    return rep


def cmd_bounds(cfg):
    from .bounds import dump_report

    rep = bounds_report(cfg)
    path = Path(cfg["output"]["dir"]) / cfg["output"]["bounds"]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    dump_report(rep, path)
    print(f"gamma_min = {rep['strong.gamma_min']['value']:.6g}")
    if "lifshitz" in rep:
        print(f"delta/gamma = {rep['weak.delta_over_gamma']['value']:.6g}, threshold C = "
              f"{rep['weak.C']['value']:.6g}, Lifshitz N* = {rep['lifshitz']['N_star']}")
    print(f"wrote {path}")
    return EXIT_OK


def ldos_rows(cfg, threads=1):
    """Rows (E, rho_mc, rho_stderr, lifshitz_bound, in_regime) over the configured E grid."""
    from .bounds import lifshitz_bound
    from .randschro import ldos

    model, disorder = build_model(cfg)
    lc = cfg["ldos"]
    if lc["eps"] <= 0:
        raise PreconditionError("the Monte Carlo LDOS needs ldos.eps > 0")
    grid = list(np.atleast_1d(lc["E"])) if lc["E"] is not None else list(np.linspace(lc["E_min"], lc["E_max"], lc["n_E"]))
    site = tuple(lc["site"]) if lc["site"] is not None else None
    record = None
    rows = []
    for E in grid:
        rho, err = ldos(model, disorder, float(E), lc["eps"], lc["samples"], cfg["method"]["seed"], threads, site)
        delta = _delta(model, float(E))
        if delta > 0 and disorder.sigma == 0:
            lb, reg = math.nan, 0  # no disorder constants without disorder
        elif delta > 0:
            chain, record = weak_chain(cfg, model, float(E), theta=0.0, record=record)
            lf = lifshitz_bound(model.gamma, delta, chain=chain)
            lb, reg = lf.value, int(lf.in_regime)
        else:
            lb, reg = math.inf, 0
        rows.append([_f(E), _f(rho), _f(err), _f(lb), reg])
    return rows


def cmd_ldos_scan(cfg, threads):
    rows = ldos_rows(cfg, threads)
    path = Path(cfg["output"]["dir"]) / cfg["output"]["ldos"]
    _write_csv(path, cfg, ["E", "rho_mc", "rho_stderr", "lifshitz_bound", "in_regime"], rows)
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser():
    from .suites import SUITES

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--seed", type=int, metavar="U64", help="overrides method.seed")
    common.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads (results do not depend on it)")
    common.add_argument("--out", metavar="DIR", help="overrides output.dir")
    p = argparse.ArgumentParser(prog="python -m susyclust", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("suite", choices=sorted(SUITES))
    sub.add_parser("green", parents=[common], help="cluster expansions and Monte Carlo Green's function (CSV)")
    sub.add_parser("bounds", parents=[common], help="constant chains and thresholds (JSON)")
    sub.add_parser("ldos-scan", parents=[common], help="Monte Carlo LDOS with the Lifshitz bound (CSV)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if args.command == "verify":
            return cmd_verify(args.suite, args.seed, args.out)
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["method"]["seed"] = args.seed
        if args.out is not None:
            cfg["output"]["dir"] = args.out
        if args.command == "green":
            return cmd_green(cfg, args.threads)
        if args.command == "bounds":
            return cmd_bounds(cfg)
        return cmd_ldos_scan(cfg, args.threads)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PreconditionError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


def console():
    sys.exit(main())
