"""
Experiment runner: declarative JSON configs in, ``report.json`` and CSV
curves out.

A config names a manifold, a default experiment and a list of cases. Each
case declares its own generators and parameters and the verdict it expects;
a case passes when the measured verdict matches the expectation.

Exit codes: 0 success (or any verdict without ``--strict``), 1 a failed
verdict under ``--strict`` or a numerical failure, 2 usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, streams
from . import cocycle as co
from . import dimension as dm
from . import equidist as eq
from . import oracles
from . import walk as wk
from .diffeo import (
    DiffeoWord,
    SphereRotation,
    SphereTrigPerturb,
    ToralLinear,
    ToralTrigPerturb,
)
from .errors import ErgolabError, NumericError, PreconditionError
from .manifold import Euclidean, Sphere, Torus

EXPERIMENTS = (
    "spectrum", "gap-scan", "pinch-scan", "expansion", "nonconc", "ldp",
    "margulis", "dimension", "multislice", "linearize", "equidist", "pipeline",
)

# allowed parameter keys per experiment; anything else is rejected
PARAMS = {
    "spectrum": ["mode", "x", "word", "n_list", "oracle", "tol", "count", "step",
                 "halving_min", "K", "quad", "radius_max", "radius_min", "min_density_min"],
    "gap-scan": ["n0", "b", "kappa", "x_grid", "V_grid", "samples"],
    "pinch-scan": ["n0", "b0", "b1", "eta", "x_grid", "pairs", "samples"],
    "expansion": ["n0", "kappa", "x_grid", "v_size", "samples", "co"],
    "nonconc": ["n", "x", "V", "b", "rho_list", "rho_range", "N", "min_r2", "sigmas", "min_hits"],
    "ldp": ["chains", "epsilons", "n_max"],
    "margulis": ["s", "pair_samples", "n_list", "inner", "check", "sigmas"],
    "dimension": ["mode", "instances", "max_points", "x", "n", "N", "alpha", "scales",
                  "rho", "words_per_atom", "tau_budget", "batches", "tol"],
    "multislice": ["grid", "rho", "budget", "sweep"],
    "linearize": ["word", "x", "y", "zeta", "r", "samples"],
    "equidist": ["x", "n_list", "N", "rho", "reference", "w1_max", "w1_min", "lp_atoms"],
    "pipeline": ["x", "N", "rho_list", "n_phase1", "phase2", "n_list", "rho", "w1_threshold"],
}

_GENERATOR = {
    "type": "object",
    "properties": {
        "type": {"enum": ["toral-linear", "toral-trig", "rotation", "sphere-trig"]},
        "matrix": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "amplitude": {"type": "number"},
        "modes": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "frequency": {"type": "array", "items": {"type": "integer"}},
                    "phase": {"type": "number"},
                    "direction": {"type": "array", "items": {"type": "number"}},
                },
                "required": ["frequency", "direction"],
                "additionalProperties": False,
            },
        },
        "field": {"type": "string"},
    },
    "required": ["type", "matrix"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "experiment": {"enum": list(EXPERIMENTS)},
        "manifold": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["torus", "sphere", "euclidean"]},
                "d": {"type": "integer", "minimum": 1},
            },
            "required": ["kind", "d"],
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": ["integer", "null"], "minimum": 1},
        "cases": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "label": {"type": "string"},
                    "experiment": {"enum": list(EXPERIMENTS)},
                    "generators": {"type": "array", "items": _GENERATOR},
                    "letters": {
                        "oneOf": [
                            {"enum": ["forward", "symmetric"]},
                            {"type": "array", "items": {
                                "type": "array", "minItems": 2, "maxItems": 2,
                                "prefixItems": [{"type": "integer"}, {"type": "boolean"}]}},
                        ]
                    },
                    "weights": {"type": "array", "items": {"type": "number"}},
                    "params": {"type": "object"},
                    "expect": {"enum": ["holds", "fails"]},
                },
                "required": ["label"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["name", "experiment", "manifold", "cases"],
    "additionalProperties": False,
}


class ConfigError(ErgolabError, ValueError):
    pass


# ----------------------------------------------------------------------------
# Config loading


def canned_dir():
    return resources.files("ergolab") / "configs"


def canned_configs():
    """(name, description) of every packaged config in stable order."""
    out = []
    for p in sorted(canned_dir().iterdir(), key=lambda q: q.name):
        if p.name.endswith(".json"):
            cfg = json.loads(p.read_text())
            out.append((p.name[:-5], cfg.get("description", "")))
    return out


def resolve_path(path):
    """A file path, or the name of a packaged config (``ac05``,
    ``examples/ac05.json``)."""
    p = Path(path)
    if p.is_file():
        return p.read_text(), str(p)
    stem = p.name[:-5] if p.name.endswith(".json") else p.name
    cand = canned_dir() / f"{stem}.json"
    if cand.is_file() and (len(p.parts) == 1 or p.parent.name == "examples"):
        return cand.read_text(), f"<packaged>/{stem}.json"
    raise ConfigError(f"config not found: {path}")


def load_config(path):
    text, where = resolve_path(path)
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{where}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    validate(cfg, where)
    return cfg


def validate(cfg, where="<config>"):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {loc}: {exc.message}") from None
    for i, case in enumerate(cfg["cases"]):
        exp = case.get("experiment", cfg["experiment"])
        unknown = sorted(set(case.get("params", {})) - set(PARAMS[exp]))
        if unknown:
            raise ConfigError(f"{where}: cases/{i}/params: unknown keys {unknown} for {exp}")


# ----------------------------------------------------------------------------
# Builders


def build_manifold(spec):
    kind, d = spec["kind"], spec["d"]
    return {"torus": Torus, "sphere": Sphere, "euclidean": Euclidean}[kind](d)


def build_generator(g):
    M = np.array(g["matrix"], dtype=float)
    kind = g["type"]
    if kind == "toral-linear":
        return ToralLinear(M)
    if kind == "toral-trig":
        modes = tuple((m["frequency"], m.get("phase", 0.0), m["direction"]) for m in g.get("modes", []))
        return ToralTrigPerturb(ToralLinear(M), float(g["amplitude"]), modes)
    if kind == "rotation":
        return SphereRotation(M)
    return SphereTrigPerturb(SphereRotation(M), float(g["amplitude"]), g.get("field", "conformal:0"))


def build_measure(case):
    if not case.get("generators"):
        return None
    gens = [build_generator(g) for g in case["generators"]]
    letters = case.get("letters", "forward")
    if letters == "forward":
        letters = [(i, False) for i in range(len(gens))]
    elif letters == "symmetric":
        letters = [(i, False) for i in range(len(gens))] + [(i, True) for i in range(len(gens))]
    weights = case.get("weights") or [1.0 / len(letters)] * len(letters)
    return wk.GeneratorMeasure(tuple(gens), np.array(weights, dtype=float), tuple(map(tuple, letters)))


def _points(spec, m, seed, tag):
    if isinstance(spec, dict):
        if spec.get("kind") == "uniform":
            rng = streams.generator(seed, streams.GRID, tag)
            return m.sample_uniform(int(spec["size"]), rng)
        raise ConfigError(f"unknown point grid {spec!r}")
    return m.check_point(np.atleast_2d(np.array(spec, dtype=float)))


def _point(spec, m):
    return m.check_point(np.array(spec, dtype=float))


def _linear_part(g):
    return g.base.matrix if hasattr(g, "base") else g.matrix


def _subspaces(spec, mu, d, k, seed):
    if isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "eigenline":
            A = np.asarray(_linear_part(mu.gens[spec.get("generator", 0)]), dtype=float)
            vals, vecs = np.linalg.eig(A)
            order = np.argsort(np.abs(vals))
            j = order[-1] if spec.get("which", "expanding") == "expanding" else order[0]
            v = np.real(vecs[:, j])
            return (v / np.linalg.norm(v))[None, :, None]
        if kind == "grassmann":
            return co.grassmann_grid(d, k, int(spec.get("size", 256)), seed)
        raise ConfigError(f"unknown subspace grid {spec!r}")
    V = np.array(spec, dtype=float)
    return V if V.ndim == 3 else V[None]


def _aggregate(verdicts):
    s = set(verdicts)
    return s.pop() if len(s) == 1 else "mixed"


# ----------------------------------------------------------------------------
# Experiments. Each returns (result, verdict, csv tables).


def run_spectrum(ctx):
    p, mu, m = ctx["params"], ctx["mu"], ctx["manifold"]
    mode = p.get("mode", "cartan")
    if mode == "cartan":
        x = _point(p.get("x", [0.0] * m.ambient_dim), m)
        period = [tuple(l) for l in p.get("word", [[0, False]])]
        rows, errs = [], []
        oracle = None
        if p.get("oracle") == "symmetric-eigenvalues":
            A = np.asarray(_linear_part(mu.gens[period[0][0]]), dtype=float)
            if len(period) != 1 or not np.allclose(A, A.T):
                raise ConfigError("the eigenvalue oracle needs a one-letter word of a symmetric matrix")
            if period[0][1]:
                A = np.linalg.inv(A)
            oracle = np.sort(np.log(np.abs(np.linalg.eigvalsh(A))))
        for n in p.get("n_list", [1]):
            c = co.cartan(x, DiffeoWord(tuple(period) * int(n)), mu.gens)
            per = (c.lambdas / n).tolist()
            err = float(np.max(np.abs(c.lambdas / n - oracle))) if oracle is not None else None
            errs.append(err)
            rows.append([n] + per + [err])
            # reconstruction is a second route to the same factorization
        tol = float(p.get("tol", 1e-9))
        verdict = "holds" if oracle is None or max(errs) <= tol else "fails"
        header = ["n"] + [f"lambda{i + 1}_over_n" for i in range(m.d)] + ["oracle_err"]
        result = {"rows": rows, "oracle": None if oracle is None else oracle.tolist(), "tol": tol}
        return result, verdict, {"spectrum": (header, rows)}
    if mode == "variational":
        count, step = int(p.get("count", 100)), float(p.get("step", 1e-3))
        tol, need = float(p.get("tol", 1e-3)), int(p.get("halving_min", 90))
        rng = streams.generator(ctx["seed"], streams.GRID, 21)
        coarse = co.line_grid(int(round(math.pi / step)))
        fine = co.line_grid(2 * int(round(math.pi / step)))
        rows = []
        while len(rows) < count:
            J = rng.standard_normal((2, 2))
            if abs(np.linalg.det(J)) < 1e-3:
                continue
            s = np.linalg.svd(J, compute_uv=False)
            e = []
            for grid in (coarse, fine):
                up1, _ = co.variational_values(J, 1, grid)
                _, lo2 = co.variational_values(J, 2, grid)
                e.append(max(abs(up1 - s[-1]), abs(lo2 - s[0])))
            rows.append([len(rows), e[0], e[1], bool(e[1] <= e[0] / 2)])
        within = all(r[1] <= tol for r in rows)
        halved = sum(r[3] for r in rows)
        verdict = "holds" if within and halved >= need else "fails"
        result = {"count": count, "max_err": max(r[1] for r in rows), "within_tol": within,
                  "halved": halved, "halving_min": need}
        return result, verdict, {"variational": (["instance", "err_step", "err_half_step", "halved"], rows)}
    if mode == "fourier":
        rep = eq.fourier_transfer_spectrum(mu, int(p.get("K", 8)), int(p.get("quad", 128)))
        r = rep.block_radius
        ok = r <= p.get("radius_max", math.inf) and r >= p.get("radius_min", -math.inf)
        rows = [[i, z.real, z.imag, abs(z)] for i, z in enumerate(rep.leading_eigs)]
        return rep.to_dict(), "holds" if ok else "fails", {"eigs": (["rank", "re", "im", "abs"], rows)}
    if mode == "stationary":
        st = eq.stationary_density(mu, int(p.get("K", 8)), int(p.get("quad", 128)))
        ok = st.min_density >= p.get("min_density_min", -math.inf)
        nz = [[*k.tolist(), c.real, c.imag] for k, c in zip(st.freqs, st.coefficients) if abs(c) > 1e-12]
        result = {"min_density": st.min_density, "unit_eigs_in_block": st.unit_eigs_in_block,
                  "iterations": st.iterations, "nonzero_coefficients": len(nz)}
        header = [f"k{i + 1}" for i in range(m.d)] + ["re", "im"]
        return result, "holds" if ok else "fails", {"stationary": (header, nz)}
    raise ConfigError(f"unknown spectrum mode {mode!r}")


def _x_grid(ctx):
    return _points(ctx["params"].get("x_grid", {"kind": "uniform", "size": 16}), ctx["manifold"], ctx["seed"], 31)


def run_gap(ctx):
    p, mu, m = ctx["params"], ctx["mu"], ctx["manifold"]
    n0, b = int(p.get("n0", 1)), int(p.get("b", 1))
    V = _subspaces(p.get("V_grid", {"kind": "grassmann"}), mu, m.d, m.d - b, ctx["seed"])
    est = co.gap_estimate(mu, n0, b, _x_grid(ctx), V, int(p.get("samples", 1000)), ctx["seed"])
    kappas = p.get("kappa", [1.0])
    kappas = kappas if isinstance(kappas, list) else [kappas]
    recs = [est.verdict_record(-n0 * k, "below") | {"kappa": k} for k in kappas]
    rows = [[r["kappa"], r["value"], r["stderr"], r["verdict"]] for r in recs]
    result = {"value": est.value, "stderr": est.stderr, "exact": est.exact, "samples": est.samples,
              "grid": est.grid, "records": recs}
    return result, _aggregate(r["verdict"] for r in recs), {"gap": (["kappa", "value", "stderr", "verdict"], rows)}


def run_pinch(ctx):
    p, mu, m = ctx["params"], ctx["mu"], ctx["manifold"]
    n0, b0, b1 = int(p.get("n0", 1)), int(p.get("b0", 0)), int(p.get("b1", 1))
    pairs = co.nested_pairs(m.d, b0, b1, int(p.get("pairs", 16)), ctx["seed"])
    est = co.pinch_estimate(mu, n0, b0, b1, _x_grid(ctx), pairs, int(p.get("samples", 1000)), ctx["seed"])
    rec = est.verdict_record(n0 * float(p.get("eta", 0.1)), "below")
    return rec | {"exact": est.exact, "grid": est.grid}, rec["verdict"], {
        "pinch": (["value", "stderr", "threshold", "verdict"],
                  [[rec["value"], rec["stderr"], rec["threshold"], rec["verdict"]]])}


def run_expansion(ctx):
    p, mu, m = ctx["params"], ctx["mu"], ctx["manifold"]
    n0 = int(p.get("n0", 1))
    vs = co.unit_vectors(m.d, int(p.get("v_size", 64)))
    if isinstance(m, Sphere):
        raise ConfigError("expansion scans use ambient unit vectors; run them on the torus")
    est = co.expansion_estimate(mu, n0, _x_grid(ctx), vs, int(p.get("samples", 1000)), ctx["seed"],
                                bool(p.get("co", False)))
    rec = est.verdict_record(n0 * float(p.get("kappa", 0.0)), "above")
    return rec | {"exact": est.exact}, rec["verdict"], {
        "expansion": (["value", "stderr", "threshold", "verdict"],
                      [[rec["value"], rec["stderr"], rec["threshold"], rec["verdict"]]])}


def run_nonconc(ctx):
    p, mu, m = ctx["params"], ctx["mu"], ctx["manifold"]
    if "rho_range" in p:
        lo, hi, k = p["rho_range"]
        rhos = list(np.exp(np.linspace(math.log(lo), math.log(hi), int(k))))
    else:
        rhos = p.get("rho_list", [2.0**-j for j in range(3, 11)])
    rep = co.angle_nonconcentration(
        mu, int(p.get("n", 40)), _point(p["x"], m), np.array(p.get("V", [1.0, 0.0])),
        int(p.get("b", 1)), rhos, int(p.get("N", 10_000)), ctx["seed"], ctx["threads"],
        int(p.get("min_hits", 20)),
    )
    k, min_r2 = float(p.get("sigmas", 3)), float(p.get("min_r2", 0.9))
    if rep.available and rep.c - k * rep.c_stderr > 0 and rep.r2 >= min_r2:
        verdict = "holds"
    elif not rep.available or rep.r2 < min_r2 or rep.c + k * rep.c_stderr <= 0:
        verdict = "fails"
    else:
        verdict = "inconclusive"
    result = {"c": rep.c, "c_stderr": rep.c_stderr, "r2": rep.r2, "fit_points": rep.fit_points,
              "available": rep.available, "sigmas": k, "min_r2": min_r2}
    rows = [[r, f, s, int(h)] for (r, f, s), h in zip(rep.rows(), rep.hits)]
    return result, verdict, {"nonconc": (["rho", "freq", "stderr", "hits"], rows)}


def run_ldp(ctx):
    p = ctx["params"]
    rows, ok = [], True
    for ci, ch in enumerate(p["chains"]):
        chain = wk.FiniteChain(np.array(ch["P"], dtype=float), np.array(ch["f"], dtype=float))
        eps_list = [float(e) for e in p.get("epsilons", [0.1, 0.25, 0.5])]
        reports = wk.ldp_moment_sweep(chain, eps_list, int(p.get("n_max", 200)))
        for r in sorted(reports, key=lambda r: (eps_list.index(r.epsilon), r.n)):
            ok &= r.passed
            rows.append([ci, r.epsilon, r.n, r.gamma, r.lhs, r.rhs, r.passed, r.tail_prob, r.tail_bound])
    result = {"chains": len(p["chains"]), "checks": len(rows), "all_passed": bool(ok),
              "worst_ratio": max(r[4] / r[5] for r in rows)}
    header = ["chain", "epsilon", "n", "gamma", "lhs", "rhs", "pass", "tail_prob", "tail_bound"]
    return result, "holds" if ok else "fails", {"ldp": (header, rows)}


def run_margulis(ctx):
    p, mu = ctx["params"], ctx["mu"]
    rep = co.margulis_contraction(
        mu, float(p.get("s", 0.1)), int(p.get("pair_samples", 1000)), [int(n) for n in p.get("n_list", [5, 10, 20, 40])],
        ctx["seed"], int(p.get("inner", 16)), threads=ctx["threads"],
    )
    k = float(p.get("sigmas", 3))
    if p.get("check", "negative") == "zero":
        verdict = "holds" if rep.rate == 0.0 else "fails"
    elif rep.rate + k * rep.rate_stderr < 0:
        verdict = "holds"
    elif rep.rate - k * rep.rate_stderr >= 0:
        verdict = "fails"
    else:
        verdict = "inconclusive"
    result = {"s": rep.s, "rate": rep.rate, "rate_stderr": rep.rate_stderr, "C": rep.C,
              "check": p.get("check", "negative")}
    rows = [[n, r, e] for n, r, e in zip(rep.n_list, rep.ratio, rep.ratio_stderr)]
    return result, verdict, {"margulis": (["n", "ratio", "ratio_stderr"], rows)}


def _oracle_instances(ctx):
    p = ctx["params"]
    rng = streams.generator(ctx["seed"], streams.GRID, 71)
    tol = float(p.get("tol", 1e-12))
    rows = []
    for inst in range(int(p.get("instances", 50))):
        d = 2 + inst % 2
        m = Torus(d) if inst % 4 < 2 else Euclidean(d)
        n = int(rng.integers(50, int(p.get("max_points", 1500)) + 1))
        centres = rng.random((5, d))
        P = m.canonical(centres[rng.integers(0, 5, n)] + 0.03 * rng.standard_normal((n, d)))
        w = rng.random(n)
        w /= w.sum()
        nu = wk.EmpiricalMeasure(m, P, w)
        alpha = float(rng.uniform(0.1, 0.9))
        scales = dm.log_scales(0.01, 0.1, 2)
        rep = dm.robust_decompose(nu, alpha, scales)
        kept, _ = oracles.brute_greedy(m, P, w, scales, [s ** (d * alpha) for s in scales])
        kept_err = float(np.max(np.abs(kept - rep.kept)))
        ball_err = max(abs(float(oracles.brute_ball_masses(m, P, rep.kept, s).max()) - b)
                       for s, b in zip(scales, rep.max_ball_mass))
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        box = dm.Box(dm.Flag(Q), np.sort(rng.uniform(0.6, 1.0, d)), 0.01, P[int(rng.integers(n))])
        fast = dm.box_mass(nu, box)
        slow = oracles.brute_box_mass(m, P, w, box.flag.basis, box.half_widths, box.center)
        ok = kept_err <= tol and ball_err <= tol and abs(fast - slow) <= tol
        rows.append([inst, type(m).__name__.lower(), d, n, alpha, rep.cuts, kept_err, ball_err,
                     abs(fast - slow), ok])
    agree = all(r[-1] for r in rows)
    header = ["instance", "space", "d", "points", "alpha", "cuts", "kept_err", "ball_err", "box_err", "agree"]
    return {"instances": len(rows), "agree": agree, "tol": tol}, "holds" if agree else "fails", {"oracle": (header, rows)}


def run_dimension(ctx):
    p, mu, m = ctx["params"], ctx["mu"], ctx["manifold"]
    mode = p.get("mode", "robust")
    if mode == "oracle":
        return _oracle_instances(ctx)
    nu = wk.empirical_pushforward(mu, _point(p["x"], m), int(p.get("n", 20)), int(p.get("N", 4000)),
                                  ctx["seed"], ctx["threads"])
    alpha = float(p.get("alpha", 0.1))
    if mode == "robust":
        lo, hi = p.get("scales", [2.0**-8, 2.0**-2])
        rep = dm.robust_decompose(nu, alpha, dm.log_scales(lo, hi))
        result = {"alpha": alpha, "trash": rep.trash, "certified": rep.certified, "cuts": rep.cuts}
        return result, "holds" if rep.certified else "fails", {
            "robust": (["rho", "max_ball_mass", "bound", "pass"], [list(r) for r in rep.rows()])}
    if mode == "increment":
        inc = dm.dimension_increment_experiment(
            mu, nu, alpha, float(p.get("rho", 2.0**-12)), int(p.get("words_per_atom", 4)),
            tau_budget=float(p.get("tau_budget", 0.25)), batches=int(p.get("batches", 4)),
            seed=ctx["seed"], threads=ctx["threads"],
        )
        result = {"alpha": inc.alpha, "tau": inc.tau, "n_steps": inc.n_steps, "alpha_before": inc.alpha_before,
                  "alpha_after": inc.alpha_after, "alpha_after_stderr": inc.alpha_after_stderr}
        return result, "holds" if inc.alpha_after > alpha else "fails", {
            "increment": (["batch", "alpha"], [[i, a] for i, a in enumerate(inc.batches)])}
    raise ConfigError(f"unknown dimension mode {mode!r}")


def _flag(spec, d):
    if spec in (None, "standard"):
        return dm.Flag.standard(d)
    if isinstance(spec, str) and spec.startswith("rotated:") and d == 2:
        a = math.radians(float(spec.split(":", 1)[1]))
        return dm.Flag(np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]]))
    return dm.Flag(np.array(spec, dtype=float))


def run_multislice(ctx):
    p = ctx["params"]
    K = int(p.get("grid", 256))
    g = (np.arange(K) + 0.5) / K
    P = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    nu = dm.DiscreteSet(P, np.full(len(P), 1.0 / len(P)))
    rho, budget = float(p.get("rho", 2.0**-8)), float(p.get("budget", 0.05))
    rows = []
    for i, pt in enumerate(p["sweep"]):
        flag = _flag(pt.get("flag"), 2)
        t, a, gam = pt["t"], float(pt["alpha"]), float(pt["gamma"])
        rep = dm.multislicing_verify(nu, [(flag, t)], rho, a, gam, budget)
        leb = dm.box_leb(dm.Box(flag, t, rho, np.zeros(2)))
        closed = bool(leb ** (1 - a) <= rho**gam)
        s = rep.slices[0]
        rows.append([i, *t, a, gam, str(pt.get("flag", "standard")), leb, s.trash_fraction,
                     s.passed, closed, s.passed == closed])
    agree = all(r[-1] for r in rows)
    header = ["point", "t1", "t2", "alpha", "gamma", "flag", "box_leb", "trash_fraction",
              "verifier", "closed_form", "agree"]
    return {"points": len(rows), "agree": agree}, "holds" if agree else "fails", {"multislice": (header, rows)}


def run_linearize(ctx):
    p, mu, m = ctx["params"], ctx["mu"], ctx["manifold"]
    word = DiffeoWord(tuple(tuple(l) for l in p["word"]))
    rep = dm.linearization_check(word, mu.gens, _point(p["x"], m), _point(p["y"], m),
                                 float(p["zeta"]), float(p["r"]), int(p.get("samples", 2000)), ctx["seed"])
    return {"K": rep.K, "points": rep.points, "warning": rep.warning}, \
        "holds" if rep.warning is None else "fails", {}


def run_equidist(ctx):
    p, mu, m = ctx["params"], ctx["mu"], ctx["manifold"]
    curve = eq.equidistribution_curve(
        mu, _point(p["x"], m), p.get("n_list", [0, 10, 20, 40]), int(p.get("N", 10_000)),
        float(p.get("rho", 1 / 64)), ctx["seed"], p.get("reference", "auto"), ctx["threads"],
        int(p.get("lp_atoms", 2000)),
    )
    ok = True
    if "w1_max" in p:
        ok &= curve.final <= float(p["w1_max"])
    if "w1_min" in p:
        ok &= min(curve.w1) >= float(p["w1_min"])
    result = {"reference": curve.reference, "final": curve.final, "min": min(curve.w1),
              "decreasing_steps": curve.decreasing_steps,
              "w1_max": p.get("w1_max"), "w1_min": p.get("w1_min")}
    return result, "holds" if ok else "fails", {
        "equidist": (["n", "w1", "mc_err", "sub_err"], [list(r) for r in curve.rows()])}


def run_pipeline(ctx):
    p, mu, m = ctx["params"], ctx["mu"], ctx["manifold"]
    cfg = {k: v for k, v in p.items() if k != "x"} | {"seed": ctx["seed"]}
    rep = eq.phase_pipeline(mu, _point(p["x"], m), cfg)
    ok = all(rep[k]["pass"] for k in rep)
    rows = [[k, rep[k]["pass"]] for k in rep]
    return rep, "holds" if ok else "fails", {"phases": (["phase", "pass"], rows)}


HANDLERS = {
    "spectrum": run_spectrum, "gap-scan": run_gap, "pinch-scan": run_pinch,
    "expansion": run_expansion, "nonconc": run_nonconc, "ldp": run_ldp,
    "margulis": run_margulis, "dimension": run_dimension, "multislice": run_multislice,
    "linearize": run_linearize, "equidist": run_equidist, "pipeline": run_pipeline,
}


# ----------------------------------------------------------------------------
# Reports


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def run_config(cfg, seed=None, threads=None):
    """Run every case; returns the report dict and the CSV tables."""
    if seed is not None:
        cfg = dict(cfg, seed=int(seed))
    cfg = dict(cfg, seed=int(cfg.get("seed", 0)))
    thr = threads if threads is not None else cfg.get("threads")
    m = build_manifold(cfg["manifold"])
    t0 = time.perf_counter()
    cases, tables = [], {}
    for i, case in enumerate(cfg["cases"]):
        exp = case.get("experiment", cfg["experiment"])
        mu = build_measure(case)
        if mu is not None and mu.manifold != m:
            raise ConfigError(f"case {case['label']}: generators do not act on the declared manifold")
        ctx = {"params": case.get("params", {}), "mu": mu, "manifold": m,
               "seed": cfg["seed"], "threads": thr}
        result, verdict, csvs = HANDLERS[exp](ctx)
        expect = case.get("expect", "holds")
        status = "pass" if verdict == expect else ("inconclusive" if verdict == "inconclusive" else "fail")
        cases.append({"label": case["label"], "experiment": exp, "expect": expect,
                      "verdict": verdict, "status": status, "result": result})
        single = len(cfg["cases"]) == 1
        for name, tab in csvs.items():
            tables[name if single else f"{case['label']}_{name}"] = tab
    statuses = [c["status"] for c in cases]
    overall = "fail" if "fail" in statuses else ("inconclusive" if "inconclusive" in statuses else "pass")
    report = {
        "artifact": "ergolab",
        "version": __version__,
        "config": cfg,
        "seed": cfg["seed"],
        "experiment": cfg["experiment"],
        "cases": cases,
        "verdict": overall,
        "runtime": {"wall_clock_seconds": time.perf_counter() - t0,
                    "threads": int(thr) if thr else None},
    }
    return jsonable(report), tables


def dumps_report(report):
    return json.dumps(report, sort_keys=True, indent=2)


def deterministic_part(report):
    """The report without its timing block, as a canonical string."""
    return json.dumps({k: v for k, v in report.items() if k != "runtime"}, sort_keys=True)


def write_outputs(report, tables, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps_report(report) + "\n")
    for name, (header, rows) in sorted(tables.items()):
        with open(out / f"{name}.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            wr.writerows(jsonable(rows))


# ----------------------------------------------------------------------------
# Entry point


def main(argv=None):
    ap = argparse.ArgumentParser(prog="ergolab", description="Random-walk equidistribution experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--strict", action="store_true")
    r.add_argument("--out")
    sub.add_parser("list-examples", help="list the packaged configs")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.command == "list-examples":
        for name, desc in canned_configs():
            print(f"{name:16s} {desc}")
        return 0

    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be positive")
            os.environ["ERGOLAB_THREADS"] = str(args.threads)
        cfg = load_config(args.config)
        report, tables = run_config(cfg, args.seed, args.threads)
    except NumericError as exc:
        print(f"ergolab: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (ErgolabError, ValueError) as exc:
        extra = f" (witness: {exc.witness})" if isinstance(exc, PreconditionError) else ""
        print(f"ergolab: {exc}{extra}", file=sys.stderr)
        return 2
    out = args.out or os.path.join("ergolab-out", cfg["name"])
    report["strict"] = bool(args.strict)
    write_outputs(report, tables, out)
    for c in report["cases"]:
        print(f"{c['label']:28s} {c['verdict']:13s} expect {c['expect']:6s} {c['status']}")
    print(f"verdict: {report['verdict']}  ({out}/report.json)")
    if args.strict and report["verdict"] == "fail":
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
