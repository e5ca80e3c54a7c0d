"""Command-line experiment runner: ``run``, ``list`` and ``validate``.

Exit codes: 0 when every verdict is consistent, 2 when any verdict is
inconsistent or inconclusive, 1 on errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .core import PathEnsemble, TruncationFn, write_paths_csv
from .decompose import CONSISTENT, INCONSISTENT, DecompReport, classify
from .schema import ConfigError, parse_config
from .simulate import generate

EXIT_OK, EXIT_ERROR, EXIT_INCONSISTENT = 0, 1, 2
OUT_ENV = "DIRICHLET_LAB_OUT"
DEFAULT_OUT = "dirichlet_lab_out"
N_PATHS_CSV = 20
N_PATHS_PLOT = 5


# --------------------------------------------------------------------------
# bundled configs


def _config_dir():
    return resources.files("dirichlet_lab") / "configs"


def bundled_configs() -> dict:
    """id -> parsed config, for every bundled JSON file."""
    out = {}
    for entry in sorted(_config_dir().iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            cfg = parse_config(entry.read_text(encoding="utf-8"), entry.name)
            out[cfg["id"]] = cfg
    return out


def list_experiments() -> list[tuple[str, str, float]]:
    return [(i, c.get("description", ""), float(c.get("expected_runtime_s", 0.0)))
            for i, c in sorted(bundled_configs().items())]


def load_config(ref: str) -> tuple[dict, str]:
    """A config from a file path or a bundled id; returns (config, raw text)."""
    p = Path(ref)
    if p.is_file():
        text = p.read_text(encoding="utf-8")
        return parse_config(text, str(p)), text
    name = ref[:-5] if ref.endswith(".json") else ref
    entry = _config_dir() / f"{name}.json"
    if entry.is_file():
        text = entry.read_text(encoding="utf-8")
        return parse_config(text, entry.name), text
    raise ConfigError(f"no config file or bundled experiment named {ref!r}")


# --------------------------------------------------------------------------
# analyses


class Context:
    def __init__(self, cfg: dict, ens: PathEnsemble, out: Path, plots: bool):
        self.cfg = cfg
        self.gen = cfg["generator"]
        self.ens = ens
        self.out = out
        self.plots = plots
        self.grid = ens.grid

    def eps_list(self, a: dict, default=(1, 2, 5, 10)):
        steps = a.get("eps_steps", list(default))
        steps = [steps] if isinstance(steps, int) else steps
        bad = [m for m in steps if m > self.grid.n_steps]
        if bad:
            raise ConfigError(f"eps_steps {bad} exceed the number of grid steps {self.grid.n_steps}")
        return [m * self.grid.dt for m in steps]

    def law(self):
        from .laws import JumpKernel, law_from_json

        if self.gen["kind"] == "compound_poisson":
            return law_from_json(self.gen.get("law", {"family": "point", "at": 1.0}))
        if self.gen.get("jumps"):
            return JumpKernel.from_json(self.gen["jumps"]).law
        return None


def _test_function(text):
    from .mtgcheck import TestFunction

    return TestFunction.from_expression(str(text))


def _weak_qv(ctx: Context, a: dict, stem: str):
    from .brackets import ucp_bracket_values, weak_qv_diagnostic

    eps = ctx.eps_list(a, (1, 2, 5, 10, 20, 50))
    rep = weak_qv_diagnostic(ctx.ens, eps, delta=a.get("delta", 0.05), slack=a.get("slack", 2.0))
    rep.to_csv(ctx.out / f"{stem}.csv")
    verdicts = [CONSISTENT if rep.tight else INCONSISTENT]
    summary = DecompReport("weak-qv")
    summary.add("tightness", float(rep.sup_quantile), float(rep.slack * rep.quantile[-1]), verdicts[0])
    if "expect" in a:
        e = a["expect"]
        vals = ucp_bracket_values(ctx.ens, ctx.ens, e["eps_steps"] * ctx.grid.dt)
        dev = float(np.mean(vals)) - e["value"]
        band = e["tol"] + 3.0 * float(np.std(vals, ddof=1) / np.sqrt(vals.size))
        summary.add(f"mean bracket eps_steps={e['eps_steps']} minus {e['value']:g}", dev, band, classify(dev, band))
    summary.write(ctx.out / f"{stem}_summary.csv")
    if ctx.plots:
        from .svg import write_chart

        write_chart(ctx.out / f"{stem}.svg",
                    [("mean", rep.epsilons, rep.mean), (f"q{1 - rep.delta:g}", rep.epsilons, rep.quantile)],
                    title="[X,X]_eps(T)", xlabel="log10 eps", ylabel="bracket", logx=True)
    return summary


def _jump_split(ctx: Context, a: dict, stem: str):
    from .brackets import jump_square_sum, ucp_bracket_values

    eps = ctx.eps_list(a, (5,))[0]
    vals = ucp_bracket_values(ctx.ens, ctx.ens, eps)
    sq = jump_square_sum(ctx.ens)
    ok = np.abs(vals - sq) < a.get("rtol", 0.05) * sq + a.get("eps_multiple", 10.0) * eps
    frac = float(np.mean(ok))
    need = a.get("min_fraction", 0.95)
    rep = DecompReport("jump-split")
    rep.add("fraction of paths within tolerance", frac, need, CONSISTENT if frac >= need else INCONSISTENT)
    rep.add("mean [X,X]_eps - sum jumps^2", float(np.mean(vals - sq)), float("inf"), CONSISTENT)
    rep.write(ctx.out / f"{stem}.csv")
    return rep


def _orthogonality(ctx: Context, a: dict, stem: str):
    from .decompose import orthogonality_test, test_martingales

    rep = orthogonality_test(ctx.ens, test_martingales(ctx.ens), ctx.eps_list(a, (1, 5)), c=a.get("c", 1.0))
    rep.write(ctx.out / f"{stem}.csv")
    return rep


def _chain_rule(ctx: Context, a: dict, stem: str):
    from .decompose import chain_rule_check

    v = _test_function(a["v"])
    rep = chain_rule_check(ctx.ens, v, v.dx, ctx.eps_list(a, (1,)), c=a.get("c", 10.0))
    rep.write(ctx.out / f"{stem}.csv")
    return rep


def _gamma_k(ctx: Context, a: dict, stem: str):
    from .decompose import gamma_k_residual, gamma_report
    from .expr import Expression

    v = _test_function(a.get("v", "x"))
    k = TruncationFn.from_json(a.get("truncation", {"identity_radius": 1.0}))
    G = gamma_k_residual(ctx.ens, v, v.dx, k, ctx.law())
    exp = Expression(a.get("expected", "0"))
    rep = gamma_report(G, lambda t: exp(t, np.zeros_like(t)), c=a.get("c", 0.0))
    rep.write(ctx.out / f"{stem}.csv")
    if ctx.plots:
        from .svg import write_chart

        t = ctx.grid.times
        write_chart(ctx.out / f"{stem}.svg", [("mean Gamma", t, G.values.mean(axis=0)),
                                              ("expected", t, exp(t, np.zeros_like(t)))],
                    title="Gamma^k(v)", xlabel="t")
    return rep


def _special_wd(ctx: Context, a: dict, stem: str):
    from .decompose import special_wd_check

    rep = special_wd_check(ctx.ens, _test_function(a.get("v", "x")), a.get("a", 1.0))
    rep.write(ctx.out / f"{stem}.csv")
    return rep


def _htransform(ctx: Context, a: dict, stem: str):
    from .characteristics import b_bar_via_cutoff, transform_B_htransform, triplet_for_jump_diffusion
    from .simulate import jump_diffusion_from_json

    if ctx.gen["kind"] != "jump_diffusion":
        raise ConfigError("analysis htransform needs a jump_diffusion generator")
    h = _test_function(a["h"])
    d2 = h.derivative("xx")
    H = lambda x: h(0.0, x)
    dH = lambda x: h.dx(0.0, x)
    d2H = lambda x: d2(0.0, x)
    X = ctx.ens.path(a.get("path_index", 0))
    tr = triplet_for_jump_diffusion(jump_diffusion_from_json(ctx.gen), X)
    direct = transform_B_htransform(tr, H, dH, d2H, X).B.values
    cut, dist = b_bar_via_cutoff(tr, H, dH, d2H, X)
    gap = float(np.max(np.abs(direct - cut)))
    tol = a.get("eps_multiple", 10.0) * ctx.grid.dt + a.get("atol", 1e-6)
    rep = DecompReport("cross-method")
    rep.add("sup |B_bar direct - B_bar cut-off|", gap, tol, CONSISTENT if gap < tol else INCONSISTENT)
    rep.add("cut-off stabilization distance", dist, 1e-9, CONSISTENT if dist < 1e-9 else INCONSISTENT)
    rep.add("B_bar(T)", float(direct[-1]), float("inf"), CONSISTENT)
    rep.write(ctx.out / f"{stem}.csv")
    if ctx.plots:
        from .svg import write_chart

        t = ctx.grid.times
        write_chart(ctx.out / f"{stem}.svg", [("direct", t, direct), ("cut-off", t, cut)],
                    title="B_bar of h(X)", xlabel="t")
    return rep


def _martingale(ctx: Context, a: dict, stem: str):
    from .mtgcheck import build_Mv, martingale_test, operator_from_json

    spec = a.get("operator", "generator")
    if spec == "generator":
        if ctx.gen["kind"] not in ("pdmp", "jump_diffusion", "bm", "compound_poisson"):
            raise ConfigError(f"no generator operator for kind {ctx.gen['kind']!r}")
        spec = _generator_operator_json(ctx.gen)
    elif isinstance(spec, str):
        raise ConfigError("operator must be an object or the string 'generator'")
    op = operator_from_json(spec)
    x0 = float(ctx.ens.values[0, 0])
    M = {}
    for text in a.get("tests", ["x"]):
        v = _test_function(text)
        op.check_domain(v)
        M[str(text)] = build_Mv(op, v, ctx.ens, x0)
    rep = martingale_test(M, ctx.ens, alpha=a.get("alpha", 0.05))
    rep.to_csv(ctx.out / f"{stem}.csv")
    summary = DecompReport("martingale")
    zmax = float(np.max(np.abs(rep.z_scores())))
    summary.add("max |z|", zmax, rep.z_crit, INCONSISTENT if rep.rejected else CONSISTENT)
    return summary


def _generator_operator_json(gen: dict) -> dict:
    kind = gen["kind"]
    if kind == "pdmp":
        return dict(gen)
    if kind == "bm":
        return {"kind": "jump_diffusion", "drift": 0.0, "diffusion": gen.get("vol", 1.0)}
    if kind == "compound_poisson":
        rate = gen.get("rate", 1.0)
        return {"kind": "jump_diffusion", "jumps": {"intensity": rate, "rate_bound": rate,
                                                    "law": gen.get("law", {"family": "point", "at": 1.0})}}
    return {"kind": "jump_diffusion", "drift": gen.get("drift", 0.0), "diffusion": gen.get("diffusion", 0.0),
            "jumps": gen.get("jumps")}


def _distdrift(ctx: Context, a: dict, stem: str):
    from . import distdrift as dd
    from .expr import Expression

    if ctx.gen["kind"] != "distdrift":
        raise ConfigError("analysis distdrift needs a distdrift generator")
    spec = dd.drift_spec_from_json(ctx.gen)
    sig = dd.build_sigma(spec)
    ht = dd.build_h(sig)
    ht.to_csv(ctx.out / f"{stem}_table.csv")
    rep = DecompReport("distdrift")
    rep.add("Sigma schedule last sup-distance", sig.distances[-1], spec.tol,
            CONSISTENT if sig.converged else INCONSISTENT)
    if "expected_sigma" in a:
        exp = Expression(a["expected_sigma"])
        inner = np.abs(sig.x) <= min(2.0, spec.R)
        err = float(np.max(np.abs(sig.values[inner] - exp(0.0, sig.x[inner]))))
        tol = a.get("sigma_tol", 1e-3)
        rep.add("sup |Sigma - expected| on [-2,2]", err, tol, CONSISTENT if err < tol else INCONSISTENT)
    d0 = abs(float(ht.hprime(0.0)) - 1.0)
    rep.add("|h'(0) - 1|", d0, 1e-12, CONSISTENT if d0 <= 1e-12 else INCONSISTENT)
    phi = Expression(a.get("phi", "1 + x**2"))
    dphi = phi.diff("x")
    f = dd.DomainFunction(ht, lambda x: phi(0.0, x), lambda x: dphi(0.0, x))
    probe = np.linspace(-1.0, 1.0, 41)
    L1 = dd.apply_L(ht, spec.sigma_fn, f)
    L2 = dd.apply_L(ht, spec.sigma_fn, f.square())
    lhs = L2(probe) - 2.0 * f(probe) * L1(probe)
    rhs = (spec.sigma_fn(probe) * f.derivative(probe)) ** 2
    gap = float(np.max(np.abs(lhs - rhs)))
    itol = a.get("identity_tol", 1e-10)
    rep.add("sup |L(f^2) - 2 f Lf - (sigma f')^2|", gap, itol, CONSISTENT if gap < itol else INCONSISTENT)
    other = "bump" if spec.mollifier == "gaussian" else "gaussian"
    alt = dd.build_sigma(spec, mollifier=other)
    md = float(np.max(np.abs(alt.values - sig.values)))
    rep.add(f"sup |Sigma {spec.mollifier} - Sigma {other}|", md, 3 * spec.tol,
            CONSISTENT if md < 3 * spec.tol else INCONSISTENT)
    if a.get("drift_limit", True):
        lim = dd.drift_limit_term(spec, ht, ctx.ens)
        rep.add("drift limit last sup-distance", lim.distances[-1], 5 * lim.tol,
                CONSISTENT if lim.stabilized else INCONSISTENT)
        rep.notes.append(lim.note)
    rep.write(ctx.out / f"{stem}.csv")
    if ctx.plots:
        from .svg import write_chart

        write_chart(ctx.out / f"{stem}.svg", [("Sigma", sig.x, sig.values), ("h", ht.x, ht.h_values)],
                    title="Sigma and h", xlabel="x")
    return rep


ANALYSES = {
    "weak_qv": _weak_qv,
    "jump_split": _jump_split,
    "orthogonality": _orthogonality,
    "chain_rule": _chain_rule,
    "gamma_k": _gamma_k,
    "special_wd": _special_wd,
    "htransform": _htransform,
    "martingale": _martingale,
    "distdrift": _distdrift,
}


# --------------------------------------------------------------------------
# running


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _versions() -> dict:
    import scipy
    import sympy

    return {"dirichlet_lab": __version__, "kernel_backend": kernels.BACKEND, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "sympy": sympy.__version__}


def run_experiment(ref: str, out: str | None = None, workers: int | None = None,
                   seed_override: int | None = None, stream=sys.stdout) -> tuple[int, Path]:
    """Run a config; returns (exit code, output directory).  Config errors raise :class:`ConfigError`."""
    cfg, _ = load_config(ref)
    if seed_override is not None:
        if not 0 <= seed_override < 2**64:
            raise ConfigError("--seed-override must be an unsigned 64-bit integer")
        cfg["master_seed"] = int(seed_override)
    workers = int(workers or cfg.get("workers", 1))
    base = Path(out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    outdir = base / cfg["id"]
    outdir.mkdir(parents=True, exist_ok=True)
    plots = bool(cfg.get("plots", True))
    start = time.perf_counter()
    ens = generate(cfg["generator"], cfg["n_paths"], cfg["master_seed"], workers)
    write_paths_csv(outdir / "paths.csv", ens.subset(np.arange(min(N_PATHS_CSV, ens.n_paths))))
    if plots:
        from .svg import write_chart

        t = ens.grid.times
        write_chart(outdir / "paths.svg", [(f"path {i}", t, ens.values[i]) for i in range(min(N_PATHS_PLOT, ens.n_paths))],
                    title=f"{cfg['id']}: sample paths", xlabel="t", ylabel="X")
    ctx = Context(cfg, ens, outdir, plots)
    results = []
    counts: dict = {}
    for a in cfg["analyses"]:
        kind = a["kind"]
        counts[kind] = counts.get(kind, 0) + 1
        stem = a.get("name") or (kind if counts[kind] == 1 else f"{kind}_{counts[kind]}")
        rep = ANALYSES[kind](ctx, a, stem)
        results.append({"analysis": stem, "kind": kind, "verdict": rep.verdict, "outcome": rep.outcome})
        print(f"{stem}: {rep.verdict}", file=stream)
    wall = time.perf_counter() - start
    all_ok = all(r["outcome"] == CONSISTENT for r in results)
    manifest = {
        "id": cfg["id"],
        "config_sha256": config_hash(cfg),
        "master_seed": cfg["master_seed"],
        "seed_rule": ens.metadata.get("seed_rule"),
        "n_paths": cfg["n_paths"],
        "workers": workers,
        "grid": {"T": ens.grid.T, "n_steps": ens.grid.n_steps},
        "versions": _versions(),
        "wall_time_s": round(wall, 3),
        "results": results,
        "exit_code": EXIT_OK if all_ok else EXIT_INCONSISTENT,
    }
    (outdir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {outdir} ({wall:.1f} s)", file=stream)
    return manifest["exit_code"], outdir


# --------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dirichlet-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config (file path or bundled id)")
    r.add_argument("config")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    r.add_argument("--workers", type=int, help="worker threads for path simulation")
    r.add_argument("--seed-override", type=int, help="replace master_seed (unsigned 64-bit)")
    sub.add_parser("list", help="list bundled experiments")
    v = sub.add_parser("validate", help="validate a config against the schema")
    v.add_argument("config")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "list":
            for i, desc, rt in list_experiments():
                print(f"{i}\t{desc}\t~{rt:g} s")
            return EXIT_OK
        if args.command == "validate":
            cfg, _ = load_config(args.config)
            print(f"{cfg['id']}: valid (schema version {cfg['schema_version']})")
            return EXIT_OK
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        code, _ = run_experiment(args.config, args.out, args.workers, args.seed_override)
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # any execution failure maps to exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
