"""Batch driver: validate a YAML run config, execute the pipeline stages and emit reports.

Exit codes: 0 success, 1 config or model error, 2 numerical stage failure,
3 I/O failure while writing outputs.
"""
from __future__ import annotations

import argparse
import csv
import functools
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .asymptotic import (dichotomy, fuchs_residual, large_time_symbol, levinson_modes, mu_exponent,
                         sigma_integrability)
from .diagonalize import class_grid, fit_symbol_class, hierarchy, identity_residual
from .models import model_from_spec
from .propagate import fit_power_law, liouville_defect, product_representation, solve_path
from .spectral import estimate_kappa
from .surfaces import contact_index, slowness_surface, surface_rows
from .zones import ZoneConfig, separating_time, xi_norm

STAGES = ("predict", "verify", "diagnose", "surfaces")
EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_IO = 0, 1, 2, 3
OUT_ENV = "HYPDECAY_OUT"

FAMILY_PARAMS = {
    "wave_dissipation": "mu0 (b = mu0/(1+t)) or b (coefficient preset)",
    "klein_gordon": "m0 and optionally m (coefficient preset)",
    "oscillating_pair": "b1, b2 (coefficient presets)",
    "first_order": "A (list of n square matrices), optional A_transient, B_inf",
    "cosmology": "scale_factor (preset), m0, n, optional friction",
}

DEFAULTS = {
    "zone": {"N": 1.0, "smoothing_width": 1.0},
    "horizon": [0.0, 1e3],
    "xi_samples": {"min": 1e-6, "max": 1e2, "count": 16},
    "tolerances": {"solver": 1e-10, "mu": 0.05, "kappa": 1e-6, "peano_baker": 1e-10},
    "predict": {"mu_horizon": 1e6, "kappa_t_max": 1e3, "kappa_xis": 8},
    "verify": {"t_points": 40, "window": None, "product_samples": 2, "product_k": 2},
    "diagnose": {"levinson_horizon": 1e4, "class_k": [1, 2], "direction": None},
    "surfaces": {"t": 10.0, "branches": None, "gamma_max": 4, "resolution_deg": 0.5, "n_points": 200},
    "output": {"dir": "out", "format": "both"},
}


class ConfigError(ValueError):
    """Invalid config; the message starts with ``file:line:col: key.path:``."""


# ---------------------------------------------------------------------------
# config loading and validation


def _collect_marks(node, path, out, source, keys):
    out[path] = node.start_mark
    if isinstance(node, yaml.MappingNode):
        seen = set()
        for k, v in node.value:
            key = k.value
            if key in seen:
                m = k.start_mark
                raise ConfigError(f"{source}:{m.line + 1}:{m.column + 1}: {'.'.join(map(str, path + (key,)))}: "
                                  "duplicate key")
            seen.add(key)
            keys[path + (key,)] = k.start_mark
            _collect_marks(v, path + (key,), out, source, keys)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _collect_marks(v, path + (i,), out, source, keys)


class _Checker:
    def __init__(self, source, marks, keys=None):
        self.source = source
        self.marks = marks
        self.keys = keys or {}

    def fail(self, path, msg, at_key=False):
        p = tuple(path)
        while p and p not in self.marks:
            p = p[:-1]
        m = self.keys.get(p) if at_key and p in self.keys else self.marks.get(p)
        loc = f"{self.source}:{m.line + 1}:{m.column + 1}" if m is not None else self.source
        raise ConfigError(f"{loc}: {'.'.join(map(str, path)) or '<root>'}: {msg}")

    def mapping(self, path, value, allowed):
        if not isinstance(value, dict):
            self.fail(path, f"expected a mapping, got {type(value).__name__}")
        for k in value:
            if k not in allowed:
                self.fail(path + (k,), f"unknown key; allowed: {', '.join(sorted(allowed))}", at_key=True)
        return value

    def number(self, path, value, lo=None, hi=None, lo_open=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            self.fail(path, f"expected a finite number, got {value!r}")
        if lo is not None and (value < lo or (lo_open and value == lo)):
            self.fail(path, f"must be {'>' if lo_open else '>='} {lo}, got {value}")
        if hi is not None and value > hi:
            self.fail(path, f"must be <= {hi}, got {value}")
        return float(value)

    def integer(self, path, value, lo=None, hi=None):
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(path, f"expected an integer, got {value!r}")
        if lo is not None and value < lo:
            self.fail(path, f"must be >= {lo}, got {value}")
        if hi is not None and value > hi:
            self.fail(path, f"must be <= {hi}, got {value}")
        return int(value)


@dataclass
class RunConfig:
    model: dict
    zone: ZoneConfig
    horizon: tuple
    xi_samples: object  # raw list or grid mapping; expanded once the model dimension is known
    pipeline: list | None
    tolerances: dict
    predict: dict
    verify: dict
    diagnose: dict
    surfaces: dict
    output: dict
    workers: int = 1
    seed: int | None = None
    source: str = "<config>"
    sha256: str = ""
    marks: dict = field(default_factory=dict, repr=False)

    def fail(self, path, msg):
        _Checker(self.source, self.marks).fail(path, msg)


def _section(chk, data, name, checks):
    raw = data.get(name)
    out = dict(DEFAULTS[name])
    if raw is None:
        return out
    chk.mapping((name,), raw, set(DEFAULTS[name]))
    for k, v in raw.items():
        if v is None and DEFAULTS[name][k] is not None:
            chk.fail((name, k), "must not be null")
        out[k] = checks[k]((name, k), v) if v is not None else None
    return out


def parse_config(text, source="<config>"):
    """Validate YAML ``text`` and return a :class:`RunConfig`."""
    if isinstance(text, bytes):
        raw = text
        text = text.decode("utf-8")
    else:
        raw = text.encode("utf-8")
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        m = getattr(exc, "problem_mark", None)
        loc = f"{source}:{m.line + 1}:{m.column + 1}" if m is not None else source
        raise ConfigError(f"{loc}: <root>: {getattr(exc, 'problem', None) or exc}") from None
    if node is None:
        raise ConfigError(f"{source}: <root>: empty config")
    marks, keys = {}, {}
    _collect_marks(node, (), marks, source, keys)
    chk = _Checker(source, marks, keys)
    top = {"model", "zone", "horizon", "xi_samples", "pipeline", "tolerances", "predict", "verify", "diagnose",
           "surfaces", "output", "workers", "seed"}
    chk.mapping((), data, top)

    if "model" not in data:
        chk.fail((), "missing required key 'model'")
    model = chk.mapping(("model",), data["model"], {"family", "params"})
    fam = model.get("family")
    if fam not in FAMILY_PARAMS:
        chk.fail(("model", "family"), f"unknown or unsupported family {fam!r}; choose one of "
                                      f"{', '.join(FAMILY_PARAMS)}")
    params = model.get("params") or {}
    chk.mapping(("model", "params"), params, set(params))

    zraw = _section(chk, data, "zone", {
        "N": lambda p, v: chk.number(p, v, 0.0, lo_open=True),
        "smoothing_width": lambda p, v: chk.number(p, v, 0.0, 1.0, lo_open=True),
    })
    zone = ZoneConfig(zraw["N"], zraw["smoothing_width"])

    hz = data.get("horizon", DEFAULTS["horizon"])
    if not isinstance(hz, list) or len(hz) != 2:
        chk.fail(("horizon",), "expected a list [start, end]")
    h0 = chk.number(("horizon", 0), hz[0], 0.0)
    h1 = chk.number(("horizon", 1), hz[1])
    if not h1 > h0:
        chk.fail(("horizon", 1), f"horizon end {h1} must exceed the start {h0}")

    xs = data.get("xi_samples", DEFAULTS["xi_samples"])
    if isinstance(xs, list):
        if not xs:
            chk.fail(("xi_samples",), "xi_samples must not be empty")
        for i, x in enumerate(xs):
            if isinstance(x, list):
                if not x:
                    chk.fail(("xi_samples", i), "empty frequency vector")
                for k, c in enumerate(x):
                    chk.number(("xi_samples", i, k), c)
            else:
                chk.number(("xi_samples", i), x, 0.0)
    else:
        chk.mapping(("xi_samples",), xs, {"min", "max", "count", "directions", "include_zero"})
        lo = chk.number(("xi_samples", "min"), xs.get("min", 1e-6), 0.0, lo_open=True)
        hi = chk.number(("xi_samples", "max"), xs.get("max", 1e2), lo)
        chk.integer(("xi_samples", "count"), xs.get("count", 16), 1)
        if xs.get("count", 16) > 1 and not hi > lo:
            chk.fail(("xi_samples", "max"), "max must exceed min when count > 1")
        if "directions" in xs:
            chk.integer(("xi_samples", "directions"), xs["directions"], 1)
        if not isinstance(xs.get("include_zero", False), bool):
            chk.fail(("xi_samples", "include_zero"), "expected true or false")

    pipeline = data.get("pipeline")
    if pipeline is not None:
        if not isinstance(pipeline, list):
            chk.fail(("pipeline",), "expected a list of stage names")
        for i, s in enumerate(pipeline):
            if s not in STAGES:
                chk.fail(("pipeline", i), f"unknown stage {s!r}; choose from {', '.join(STAGES)}")
        if len(set(pipeline)) != len(pipeline):
            chk.fail(("pipeline",), "duplicate stage")

    tol = _section(chk, data, "tolerances", {
        "solver": lambda p, v: chk.number(p, v, 1e-12, 1e-3),
        "mu": lambda p, v: chk.number(p, v, 0.0, lo_open=True),
        "kappa": lambda p, v: chk.number(p, v, 0.0, lo_open=True),
        "peano_baker": lambda p, v: chk.number(p, v, 1e-14, 1e-2),
    })
    pred = _section(chk, data, "predict", {
        "mu_horizon": lambda p, v: chk.number(p, v, 1e4),
        "kappa_t_max": lambda p, v: chk.number(p, v, 10.0, lo_open=True),
        "kappa_xis": lambda p, v: chk.integer(p, v, 1),
    })

    def window(p, v):
        if not isinstance(v, list) or len(v) != 2:
            chk.fail(p, "expected [lo, hi]")
        lo = chk.number(p + (0,), v[0], 0.0, lo_open=True)
        hi = chk.number(p + (1,), v[1])
        if hi / lo < 100:
            chk.fail(p, "the fit window must span two decades")
        return [lo, hi]

    def product_samples(p, v):
        if isinstance(v, list):
            for i, e in enumerate(v):
                chk.mapping(p + (i,), e, {"t", "xi"})
                if "t" not in e or "xi" not in e:
                    chk.fail(p + (i,), "product sample needs t and xi")
                chk.number(p + (i, "t"), e["t"], 0.0)
                vec = e["xi"] if isinstance(e["xi"], list) else [e["xi"]]
                for k, c in enumerate(vec):
                    chk.number(p + (i, "xi", k) if isinstance(e["xi"], list) else p + (i, "xi"), c)
            return v
        return chk.integer(p, v, 0)

    ver = _section(chk, data, "verify", {
        "t_points": lambda p, v: chk.integer(p, v, 8),
        "window": window,
        "product_samples": product_samples,
        "product_k": lambda p, v: chk.integer(p, v, 1, 3),
    })

    def class_k(p, v):
        if not isinstance(v, list):
            chk.fail(p, "expected a list of hierarchy depths")
        return [chk.integer(p + (i,), k, 1, 3) for i, k in enumerate(v)]

    diag = _section(chk, data, "diagnose", {
        "levinson_horizon": lambda p, v: chk.number(p, v, 10.0, lo_open=True),
        "class_k": class_k,
        "direction": lambda p, v: [chk.number(p + (i,), c) for i, c in enumerate(v)] if isinstance(v, list) and v
        and any(c != 0 for c in v) else chk.fail(p, "expected a non-zero vector"),
    })

    def branches(p, v):
        if not isinstance(v, list) or not v:
            chk.fail(p, "expected a non-empty list of branch indices")
        return [chk.integer(p + (i,), j, 0) for i, j in enumerate(v)]

    surf = _section(chk, data, "surfaces", {
        "t": lambda p, v: chk.number(p, v, 0.0),
        "branches": branches,
        "gamma_max": lambda p, v: chk.integer(p, v, 2, 8),
        "resolution_deg": lambda p, v: chk.number(p, v, 0.0, 10.0, lo_open=True),
        "n_points": lambda p, v: chk.integer(p, v, 20),
    })

    def fmt(p, v):
        if v not in ("json", "csv", "both"):
            chk.fail(p, f"format must be json, csv or both, got {v!r}")
        return v

    def out_dir(p, v):
        if not isinstance(v, str) or not v:
            chk.fail(p, "expected a directory path")
        return v

    out = _section(chk, data, "output", {"dir": out_dir, "format": fmt})
    workers = chk.integer(("workers",), data["workers"], 1) if "workers" in data else 1
    seed = chk.integer(("seed",), data["seed"]) if data.get("seed") is not None else None
    return RunConfig(
        {"family": fam, "params": params}, zone, (h0, h1), xs, pipeline, tol, pred, ver, diag, surf, out,
        workers, seed, source, hashlib.sha256(raw).hexdigest(), marks,
    )


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: <root>: cannot read config: {exc.strerror or exc}") from None
    return parse_config(raw, str(path))


def build_model(cfg):
    """Construct the model, mapping failures to :class:`ConfigError` with family diagnostics."""
    fam = cfg.model["family"]
    try:
        return model_from_spec(cfg.model)
    except (KeyError, ValueError, TypeError, IndexError) as exc:
        msg = f"missing parameter {exc}" if isinstance(exc, KeyError) else str(exc)
        cfg.fail(("model", "params"), f"cannot build family {fam!r}: {msg}; expected {FAMILY_PARAMS[fam]}")


def expand_xi(cfg, n):
    """Frequency vectors from ``xi_samples`` as a list of float lists of length ``n``."""
    xs = cfg.xi_samples
    out = []
    if isinstance(xs, list):
        for i, x in enumerate(xs):
            if isinstance(x, list):
                if len(x) != n:
                    cfg.fail(("xi_samples", i), f"frequency vector has length {len(x)}, model has n = {n}")
                out.append([float(c) for c in x])
            else:
                out.append([float(x)] + [0.0] * (n - 1))
        return out
    mags = np.geomspace(float(xs.get("min", 1e-6)), float(xs.get("max", 1e2)), int(xs.get("count", 16)))
    ndir = int(xs.get("directions", 8 if n >= 2 else 1))
    if n == 1:
        dirs = [[1.0]] if ndir == 1 else [[1.0], [-1.0]]
    else:
        ang = 2 * math.pi * np.arange(ndir) / ndir
        dirs = [[math.cos(a), math.sin(a)] + [0.0] * (n - 2) for a in ang]
    if xs.get("include_zero", False):
        out.append([0.0] * n)
    for m in mags:
        for d in dirs:
            out.append([float(m * c) for c in d])
    return out


# ---------------------------------------------------------------------------
# plain-data conversion and serialisation


def to_plain(obj):
    """Nested dicts/lists of str, bool, int, float; complex as ``{"re", "im"}``; callables dropped."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items() if not callable(v)}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def format_float(x):
    """17 significant digits; always parses back as a float."""
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = "%.17g" % x
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent=0):
    """JSON text of plain data with 17-digit floats, preserving key order."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if obj is None:
        return "null"
    return json.dumps(obj)


def _cell(v):
    if isinstance(v, float):
        return format_float(v)
    return "" if v is None else str(v)


# ---------------------------------------------------------------------------
# stages


@functools.lru_cache(maxsize=4)
def _cached_model(spec_json):
    return model_from_spec(json.loads(spec_json))


def _worker(task):
    """Run one verify task; models are rebuilt from the plain spec in each process."""
    kind, spec_json, payload = task
    sym = _cached_model(spec_json)
    try:
        if kind == "decay":
            xi = np.asarray(payload["xi"], dtype=float)
            ts = np.asarray(payload["ts"], dtype=float)
            s = payload["s"]
            Es, info = solve_path(sym, s, ts, xi, payload["tol"])
            norms = np.array([np.linalg.norm(E, 2) for E in Es])
            fit = fit_power_law(ts, norms)
            return {
                "xi": xi.tolist(),
                "xi_norm": xi_norm(xi),
                "exponent": fit.exponent,
                "intercept": fit.intercept,
                "residual": fit.residual,
                "window": list(fit.window),
                "reliable": fit.reliable,
                "liouville_defect": liouville_defect(sym, Es[-1], s, ts[-1], xi),
                "rhs_evaluations": info["nfev"],
                "samples": {"t": ts.tolist(), "norm": norms.tolist()},
            }
        rep = product_representation(sym, payload["k"], payload["t"], payload["xi"], payload["zone"],
                                     payload["tol"])
        return {"t": rep.t, "t_xi": rep.t_xi, "xi": rep.xi, "k": rep.k, "deviation": rep.deviation,
                "pb_terms": rep.pb_terms, "pb_tail": rep.pb_tail, "Q_norm": rep.Q_norm}
    except Exception as exc:  # recorded per sample; the stage is marked failed
        out = {"xi": [float(c) for c in np.atleast_1d(payload["xi"])], "error": f"{type(exc).__name__}: {exc}"}
        if kind == "decay":
            out["xi_norm"] = xi_norm(payload["xi"])
        return out


def _run_tasks(tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [_worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(_worker, tasks))


def _thin(items, k):
    if len(items) <= k:
        return list(items)
    idx = np.unique(np.round(np.linspace(0, len(items) - 1, k)).astype(int))
    return [items[i] for i in idx]


def stage_predict(sym, cfg, xis, ctx):
    out = {"sigma": sym.sigma}
    t_max = cfg.predict["kappa_t_max"]
    cand = [x for x in xis if np.isfinite(separating_time(x, cfg.zone))
            and 1 + separating_time(x, cfg.zone) < (1 + t_max) / 10]
    cand = _thin(cand, cfg.predict["kappa_xis"])
    if cand:
        k = estimate_kappa(sym, cfg.zone, xis=[np.asarray(x) for x in cand], t_max=t_max,
                           tol=cfg.tolerances["kappa"])
        out["kappa"] = {
            "kappa_plus": k.kappa_plus, "kappa_minus": k.kappa_minus, "C_plus": k.C_plus, "C_minus": k.C_minus,
            "witness_plus": k.witness_plus, "witness_minus": k.witness_minus,
            "raw_slope_min": k.raw_slope_min, "raw_slope_max": k.raw_slope_max, "xi_used": cand,
        }
    else:
        out["kappa"] = None
        out["kappa_note"] = "no frequency sample enters the hyperbolic zone early enough"
    H = cfg.predict["mu_horizon"]
    lts = large_time_symbol(sym, (1.0, H), sym.sigma)
    ctx["lts"] = lts
    mu = mu_exponent(lts, (1.0, H), cfg.tolerances["mu"])
    out["large_time"] = {"route": lts.route, "condition": lts.condition, "limit_matrix": lts.limit_matrix}
    out["mu"] = {"mu": mu.mu, "mu_j": mu.mu_j, "spread": mu.spread, "settled": mu.settled, "horizon": mu.horizon}
    dv = dichotomy(lts, sym.sigma, (1.0, H), cfg.tolerances["mu"])
    out["dichotomy"] = {"kind": dv.kind, "delta": dv.delta, "flags": dv.flags, "pairs": dv.pair_evidence}
    zero = np.zeros(sym.n)
    out["sigma_integral"] = sigma_integrability(lambda t, xi: fuchs_residual(sym, lts, t, xi), sym.sigma,
                                                [zero], cfg.zone)
    if out["kappa"] is not None:
        out["decay_rate"] = min(out["kappa"]["kappa_plus"], mu.mu)
    return out


def _fit_times(cfg):
    h0, h1 = cfg.horizon
    if cfg.verify["window"] is not None:
        lo, hi = cfg.verify["window"]
    else:
        lo, hi = max(h0, h1 / 100.0), h1
    if lo < h0 or hi > h1:
        cfg.fail(("verify", "window"), "fit window must lie inside the horizon")
    if lo <= 0 or hi / lo < 100 * (1 - 1e-12):
        cfg.fail(("horizon",), "decay fits need a horizon spanning two decades")
    return np.geomspace(lo, hi, cfg.verify["t_points"])


def _product_samples(cfg, xis):
    spec = cfg.verify["product_samples"]
    if isinstance(spec, list):
        return [(float(e["t"]), [float(c) for c in (e["xi"] if isinstance(e["xi"], list) else [e["xi"]])])
                for e in spec]
    h1 = cfg.horizon[1]
    cand = {}
    for x in xis:
        r = xi_norm(x)
        t0 = separating_time(x, cfg.zone)
        if 0 < r <= 10 * cfg.zone.N and t0 < h1 / 2:
            cand.setdefault(round(r, 12), x)
    chosen = _thin([cand[k] for k in sorted(cand)], spec) if spec else []
    out = []
    for x in chosen:
        t0 = separating_time(x, cfg.zone)
        out.append((float(min(h1, 20 * (1 + t0) - 1)), x))
    return out


def stage_verify(sym, cfg, xis, ctx):
    if not xis:
        cfg.fail(("xi_samples",), "verify needs at least one frequency sample")
    ts = _fit_times(cfg)
    spec_json = json.dumps(cfg.model, sort_keys=True)
    s = cfg.horizon[0]
    tol = cfg.tolerances["solver"]
    tasks = [("decay", spec_json, {"xi": x, "ts": ts.tolist(), "s": s, "tol": tol}) for x in xis]
    k = cfg.verify["product_k"]
    tasks += [("product", spec_json, {"xi": x, "t": t, "k": k, "zone": cfg.zone, "tol": cfg.tolerances["peano_baker"]})
              for t, x in _product_samples(cfg, xis)]
    results = _run_tasks(tasks, ctx["workers"])
    fits, prods = results[:len(xis)], results[len(xis):]
    defects = [r["liouville_defect"] for r in fits if "liouville_defect" in r]
    devs = [r["deviation"] for r in prods if "deviation" in r]
    errors = [r["error"] for r in results if "error" in r]
    out = {
        "s": s,
        "decay_fits": fits,
        "liouville_defect_max": max(defects) if defects else None,
        "product_representation": prods,
        "product_deviation_max": max(devs) if devs else None,
    }
    if errors:
        out["errors"] = errors
        ctx["partial_failure"] = f"{len(errors)} of {len(results)} verify tasks failed"
    return out


def stage_diagnose(sym, cfg, xis, ctx):
    out = {}
    d = cfg.diagnose["direction"]
    if d is None:
        # off the coordinate axes so that coupling between the A_j is visible
        d = np.arange(1.0, sym.n + 1.0)
    elif len(d) != sym.n:
        cfg.fail(("diagnose", "direction"), f"direction has length {len(d)}, model has n = {sym.n}")
    w = np.asarray(d, dtype=float) / np.linalg.norm(d)
    N = cfg.zone.N
    grid = class_grid((2.0 * N, 200.0 * N), (9.0, 999.0), 6, w)
    fits = []
    for k in cfg.diagnose["class_k"]:
        try:
            f = fit_symbol_class(lambda t, xi, k=k: hierarchy(sym, t, xi, k, check=False).R, grid, cfg.zone)
        except ValueError as exc:
            peak = max(np.abs(hierarchy(sym, t, xi, k, check=False).R).max() for t, xi in grid[::7])
            if peak == 0:
                fits.append({"k": k, "vanishes": True})
                continue
            raise ValueError(f"class fit of R_{k}: {exc}") from None
        fits.append({"k": k, "m1": f.m1, "m2": f.m2, "C": f.C, "residual": f.residual, "n_points": f.n_points})
    out["remainder_classes"] = fits
    t_id, xi_id = 49.0, 2.0 * N * w
    out["identity_residual"] = {"t": t_id, "xi": xi_id, "k": max(cfg.diagnose["class_k"]),
                                "residual": identity_residual(sym, max(cfg.diagnose["class_k"]), t_id, xi_id)}
    lts = ctx.get("lts") or large_time_symbol(sym, (1.0, cfg.predict["mu_horizon"]), sym.sigma)
    H = cfg.diagnose["levinson_horizon"]
    pd = [x for x in xis if separating_time(x, cfg.zone) >= 10.0]
    xl = min(pd, key=xi_norm) if pd else [0.0] * sym.n
    T = min(H, separating_time(xl, cfg.zone))
    lb = levinson_modes(sym, lts, xl, (1.0, T), cfg.zone)
    out["levinson"] = {
        "xi": xl, "horizon": [1.0, T], "convergence_defect": lb.convergence_defect,
        "wronskian_defect": lb.wronskian_defect, "wronskian_defect_asymptotic": lb.wronskian_defect_asymptotic,
        "reconstruction_defect": lb.reconstruction_defect, "hadamard_ratio": lb.hadamard_ratio,
    }
    return out


def stage_surfaces(sym, cfg, xis, ctx):
    if sym.n not in (2, 3):
        ctx["skip"] = f"slowness surfaces need n = 2 or 3, model has n = {sym.n}"
        return None
    sc = cfg.surfaces
    branches = sc["branches"] if sc["branches"] is not None else list(range(sym.dim))
    out = []
    for j in branches:
        if j >= sym.dim:
            cfg.fail(("surfaces", "branches"), f"branch {j} out of range for dimension {sym.dim}")
        surf = slowness_surface(sym, sc["t"], j, sym.n, sc["resolution_deg"], sc["n_points"])
        rep = contact_index(surf, sc["gamma_max"])
        head, rows = surface_rows(surf, rep)
        out.append({
            "branch": j, "t": sc["t"], "gamma": rep.gamma, "gamma0": rep.gamma0,
            "kappa_values": rep.kappa_values, "kappa0_values": rep.kappa0_values, "convex": rep.convex,
            "worst_point": rep.worst_point, "patch_radius": rep.patch_radius, "skipped_points": len(rep.skipped),
            "level_error": surf.level_error, "continuous": surf.continuous,
            "empty_directions": int(np.sum(surf.empty)),
            "table": {"columns": head, "rows": rows},
        })
    return out


STAGE_FUNCS = {"predict": stage_predict, "verify": stage_verify, "diagnose": stage_diagnose,
               "surfaces": stage_surfaces}
SECTION = {"predict": "predicted", "verify": "verified", "diagnose": "diagnostics", "surfaces": "surfaces"}


def run_pipeline(cfg, stages=None, workers=None):
    """Execute the requested stages (default: the config's pipeline, else all) in dependency order.

    A failing stage is recorded with its error and later stages still run.
    Model construction or config errors raise :class:`ConfigError`.
    """
    start = time.perf_counter()
    sym = build_model(cfg)
    xis = expand_xi(cfg, sym.n)
    if stages is None:
        stages = cfg.pipeline if cfg.pipeline is not None else list(STAGES)
    ordered = [s for s in STAGES if s in set(stages)]
    report = {
        "model": {
            "family": cfg.model["family"], "params": cfg.model["params"], "dim": sym.dim, "n": sym.n,
            "sigma": sym.sigma, "warnings": list(sym.params.get("warnings", [])),
            "predictions": dict(sym.predictions),
        },
        "stages": {},
    }
    ctx = {"workers": workers if workers is not None else cfg.workers}
    for name in ordered:
        ctx.pop("skip", None)
        ctx.pop("partial_failure", None)
        try:
            res = STAGE_FUNCS[name](sym, cfg, xis, ctx)
        except ConfigError:
            raise
        except Exception as exc:
            report["stages"][name] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
            continue
        if "skip" in ctx:
            report["stages"][name] = {"status": "skipped", "reason": ctx["skip"]}
            continue
        if "partial_failure" in ctx:
            report["stages"][name] = {"status": "failed", "error": ctx["partial_failure"]}
        else:
            report["stages"][name] = {"status": "ok"}
        report[SECTION[name]] = res
    report["provenance"] = {
        "config_sha256": cfg.sha256, "version": __version__, "seed": cfg.seed,
        "wall_time": time.perf_counter() - start,
    }
    return to_plain(report)


# ---------------------------------------------------------------------------
# output


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


DECAY_COLUMNS = ["xi_norm", "exponent", "residual", "window_lo", "window_hi"]


def emit(report, out_dir, fmt="both"):
    """Write ``report.json`` and/or one CSV per table; returns the written paths. Raises ``OSError``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if fmt in ("json", "both"):
        p = os.path.join(out_dir, "report.json")
        with open(p, "w") as fh:
            fh.write(dumps(report) + "\n")
        paths.append(p)
    if fmt in ("csv", "both"):
        ver = report.get("verified")
        if ver is not None:
            rows = [[r["xi_norm"], r["exponent"], r["residual"], r["window"][0], r["window"][1]]
                    for r in ver["decay_fits"] if "exponent" in r]
            p = os.path.join(out_dir, "decay_fits.csv")
            _write_csv(p, DECAY_COLUMNS, rows)
            paths.append(p)
        for s in report.get("surfaces") or []:
            p = os.path.join(out_dir, f"surface_branch{s['branch']}.csv")
            _write_csv(p, s["table"]["columns"], s["table"]["rows"])
            paths.append(p)
    return paths


COMMAND_STAGES = {"predict": ["predict"], "verify": ["predict", "verify"], "surfaces": ["surfaces"], "report": None}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="hypdecay", description="Decay exponents of time-dependent hyperbolic systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "predict": "estimate kappa+-, mu and the dichotomy verdict",
        "verify": "predict, then fit decay exponents from fundamental solutions",
        "surfaces": "slowness surfaces and contact indices",
        "report": "run the config pipeline (default: all stages) and write figures",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="YAML run config")
        p.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and output.dir)")
        p.add_argument("--workers", type=int, help="worker processes for the verify sweep")
        p.add_argument("--format", choices=["json", "csv", "both"], help="output format")
    args = parser.parse_args(argv)
    if args.workers is not None and args.workers < 1:
        parser.error("--workers must be >= 1")
    try:
        cfg = load_config(args.config)
        stages = COMMAND_STAGES[args.command]
        if stages is None:
            stages = cfg.pipeline if cfg.pipeline is not None else list(STAGES)
        report = run_pipeline(cfg, stages, args.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or os.environ.get(OUT_ENV) or cfg.output["dir"]
    fmt = args.format or cfg.output["format"]
    try:
        paths = emit(report, out_dir, fmt)
        if args.command == "report":
            from .plotting import write_figures

            paths += write_figures(report, os.path.join(out_dir, "figures"))
    except OSError as exc:
        print(f"error: cannot write outputs to {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO
    failed = [n for n, st in report["stages"].items() if st["status"] == "failed"]
    for n, st in report["stages"].items():
        line = f"{n}: {st['status']}"
        if st["status"] != "ok":
            line += f" ({st.get('error') or st.get('reason')})"
        print(line, file=sys.stderr)
    for p in paths:
        print(p)
    return EXIT_STAGE if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
