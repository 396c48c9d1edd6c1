"""Command-line front end.

Every subcommand reads defaults, then an optional flat ``key=value`` file
(``--config``), then an optional JSON object (``--json``) whose keys
override both. Outputs are written to ``--out-dir`` together with a
``manifest.json`` holding sha256 hashes; ``--verify`` re-hashes an
existing output directory instead of computing.

Exit codes: 0 success, 2 configuration error, 3 numerical failure or
verification mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .equilibria import (EvaluationError, GridTooShortError, ModelParams, find_equilibria,
                         locate_b_e, one_over_I)
from .io import verify_manifest, write_csv, write_manifest

log = logging.getLogger("nnlif")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "equilibria": {
        "V_R": 1.0, "V_F": 2.0, "b_list": "-2,-1,0,1,2.5", "N_max": 20.0,
        "curve_N_max": 5.0, "curve_points": 400, "b_sweep": "", "locate_b_e": True,
    },
    "nq": {
        "V_R": 1.0, "V_F": 2.0, "b": -5.0, "branch": "lower", "dv": 1e-3, "dt": 0.0,
        "T_end": 20.0,
    },
    "stability-map": {
        "V_R": 1.0, "V_F": 2.0, "b_min": -15.0, "b_max": 2.0, "n_b": 40, "d_min": 0.0,
        "d_max": 3.0, "n_d": 20, "dv": 1e-3, "T_end": 20.0,
    },
    "simulate": {
        "preset": "", "V_R": 1.0, "V_F": 2.0, "b": 0.1, "d": 0.0, "T_end": 20.0, "dv": 1e-3,
        "dt": 0.0, "initial": "gaussian", "eps": 1e-3, "N_cap": 1e3, "field_stride": 1,
    },
    "volterra": {
        "problem": "expdecay", "dt": 1e-3, "T": 10.0, "alpha": 0.0, "g": 1.0,
        "kernel_c": 0.5, "kernel_alpha": 0.0, "kernel_lam": 1.0, "d": 0.0,
        "b": -5.0, "eps": 1e-4, "dv": 1e-3, "V_R": 1.0, "V_F": 2.0,
    },
}

PRESETS = {
    "weak": {"b": 0.1, "d": 0.0, "T_end": 20.0, "initial": "gaussian"},
    "blowup": {"b": 3.0, "d": 0.0, "T_end": 2e-5, "dv": 1e-5, "dt": 1e-7,
               "initial": "concentrated", "field_stride": 100},
    "periodic": {"b": -12.0, "d": 10.0, "T_end": 1300.0, "dv": 4e-3,
                 "initial": "perturbed", "eps": 1e-3},
}


# --- configuration -------------------------------------------------------

def _coerce(value: str, default):
    if isinstance(default, bool):
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value.strip()


def parse_kv(text: str, defaults: dict) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {k!r}")
        try:
            out[k] = _coerce(v, defaults[k])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {k}: {exc}") from None
    return out


def resolve_config(command: str, config_path: str | None, json_path: str | None) -> dict:
    defaults = DEFAULTS[command]
    cfg = dict(defaults)
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg.update(parse_kv(text, defaults))
    if json_path:
        try:
            data = json.loads(Path(json_path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read JSON override: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON override: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("JSON override must be an object")
        for k, v in data.items():
            if k not in defaults and not k.endswith("_samples"):
                raise ConfigError(f"unknown key {k!r}")
            cfg[k] = v
    if command == "simulate" and cfg.get("preset"):
        if cfg["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {cfg['preset']!r}")
        merged = dict(defaults)
        merged.update(PRESETS[cfg["preset"]])
        # explicit settings win over the preset
        explicit = {}
        if config_path:
            explicit.update(parse_kv(Path(config_path).read_text(), defaults))
        if json_path:
            explicit.update(json.loads(Path(json_path).read_text()))
        merged.update(explicit)
        cfg = merged
    return cfg


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"not a list of numbers: {text!r}") from None


def _params(cfg, b=None) -> ModelParams:
    try:
        return ModelParams(float(cfg["b"] if b is None else b), float(cfg["V_R"]), float(cfg["V_F"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# --- commands ------------------------------------------------------------

def cmd_equilibria(cfg, out: Path, threads: int):
    bs = _floats(cfg["b_list"])
    if not bs:
        raise ConfigError("b_list is empty")
    N_max = float(cfg["N_max"])
    Ns = np.linspace(0.0, float(cfg["curve_N_max"]), int(cfg["curve_points"]) + 1)[1:]
    curve, rows = [], []
    sweep_bs = bs
    if cfg["b_sweep"]:
        lo, hi, n = str(cfg["b_sweep"]).split(":")
        sweep_bs = sorted(set(bs) | set(np.linspace(float(lo), float(hi), int(n)).tolist()))
    for b in bs:
        p = _params(cfg, b)
        curve += [(b, N, one_over_I(N, p)) for N in Ns]
    for b in sweep_bs:
        for k, st in enumerate(find_equilibria(_params(cfg, b), N_max)):
            rows.append((b, k, st.N_inf, st.residual, st.slope_S, st.branch))
    files = [write_csv(out / "IN_curve.csv", ["b", "N", "one_over_I"], curve),
             write_csv(out / "equilibria.csv",
                       ["b", "root_index", "N_inf", "residual", "slope_S", "branch"], rows)]
    extra = {}
    if cfg["locate_b_e"]:
        extra["b_e"] = locate_b_e(V_R=float(cfg["V_R"]), V_F=float(cfg["V_F"]), N_max=N_max)
    return files, extra


def _pick(states, branch):
    if not states:
        raise NumericalFailure("no equilibrium for these parameters")
    if branch == "higher":
        return states[-1]
    return states[0]


class NumericalFailure(RuntimeError):
    pass


def cmd_nq(cfg, out: Path, threads: int):
    from .linear_pde import compute_Nq

    st = _pick(find_equilibria(_params(cfg)), cfg["branch"])
    dt = float(cfg["dt"]) or None
    res = compute_Nq(st, dt=dt, dv=float(cfg["dv"]), T_end=float(cfg["T_end"]))
    tr = res.trace
    f = write_csv(out / "nq_trace.csv", ["t", "Nq"], zip(tr.t, tr.samples))
    extra = dict(N_inf=st.N_inf, slope_S=st.slope_S, branch=st.branch,
                 minus_b_int_Nq=-st.b * tr.integral(), tail_A=tr.tail_A, tail_lambda=tr.tail_lam,
                 tail_fit_residual=tr.fit_residual, tail_fit_valid=tr.fit_valid,
                 sign_changes=tr.sign_changes())
    return [f], extra


def cmd_stability_map(cfg, out: Path, threads: int):
    from .spectral_stability import stability_map

    n_b, n_d = int(cfg["n_b"]), int(cfg["n_d"])
    if n_b < 1 or n_d < 1:
        raise ConfigError("n_b and n_d must be positive")
    m = stability_map((float(cfg["b_min"]), float(cfg["b_max"])),
                      (float(cfg["d_min"]), float(cfg["d_max"])), (n_b, n_d),
                      ModelParams(0.0, float(cfg["V_R"]), float(cfg["V_F"])),
                      dv=float(cfg["dv"]), T_end=float(cfg["T_end"]), threads=threads)
    counts = {}
    for row in m.cells:
        for c in row:
            counts[c.verdict] = counts.get(c.verdict, 0) + 1
    return m.write(out), {"verdict_counts": counts}


def cmd_simulate(cfg, out: Path, threads: int):
    from .nonlinear_pde import SimConfig, perturbed_equilibrium, simulate

    p = _params(cfg)
    eqs = find_equilibria(p)
    sc = SimConfig(p, d=float(cfg["d"]), T_end=float(cfg["T_end"]), dv=float(cfg["dv"]),
                   dt=float(cfg["dt"]) or None, N_cap=float(cfg["N_cap"]),
                   target=eqs[0] if eqs else None)
    if cfg["initial"] == "perturbed":
        if not eqs:
            raise NumericalFailure("perturbed start needs an equilibrium")
        g = sc.resolve_grid()
        sc.grid = g
        sc.initial = perturbed_equilibrium(eqs[0], g, bump(g, p), float(cfg["eps"]))
        sc.history = eqs[0].N_inf
    elif cfg["initial"] in ("gaussian", "concentrated"):
        sc.initial = cfg["initial"]
    else:
        raise ConfigError(f"unknown initial profile {cfg['initial']!r}")
    res = simulate(sc)
    f1 = write_csv(out / "sim_trace.csv", ["t", "Np", "mass", "entropy"], res.rows())
    s = max(int(cfg["field_stride"]), 1)
    g = res.field.grid
    f2 = write_csv(out / "sim_field_final.csv", ["v", "p"],
                   zip(g.v[::s], res.field.values[::s]))
    rep = res.report
    report = dict(outcome=rep.outcome, l1_distance=rep.l1_distance, entropy=rep.entropy,
                  blow_up_time=rep.blow_up_time, period=rep.period, notes=rep.notes,
                  meta=res.meta)
    f3 = out / "regime.json"
    f3.write_text(json.dumps(report, indent=2, sort_keys=True, default=float) + "\n")
    return [f1, f2, f3], {"outcome": rep.outcome}


def bump(grid, p: ModelParams) -> np.ndarray:
    from .nonlinear_pde import zero_mass_bump

    return zero_mass_bump(grid, 0.5 * (p.V_R + p.V_F))


def cmd_volterra(cfg, out: Path, threads: int):
    from . import volterra as vt

    dt, T = float(cfg["dt"]), float(cfg["T"])
    prob = cfg["problem"]
    extra = {}
    if prob == "from-linearization":
        return _volterra_linearization(cfg, out)
    if prob == "expdecay":
        p = vt.RenewalProblem(1.0, vt.exp_kernel(0.5, 1.0))
        exact = lambda t: 2.0 - np.exp(-t / 2.0)
    elif prob == "growth":
        p = vt.RenewalProblem(1.0, vt.exp_kernel(2.0, 1.0), g_poles=(0.0,))
        exact = None
    elif prob == "custom":
        if "h_samples" in cfg:
            h = vt.SampledKernel(dt, np.asarray(cfg["h_samples"], dtype=float))
        else:
            h = vt.PowerExpKernel(float(cfg["kernel_c"]), float(cfg["kernel_alpha"]),
                                  float(cfg["kernel_lam"]))
        g = np.asarray(cfg["g_samples"], dtype=float) if "g_samples" in cfg else float(cfg["g"])
        p = vt.RenewalProblem(g, h, float(cfg["d"]))
        exact = None
    else:
        raise ConfigError(f"unknown problem {prob!r}")
    try:
        sol = vt.solve(p, dt, T)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    f = write_csv(out / "renewal_solution.csv", ["t", "f"], zip(sol.t, sol.f))
    extra["growth_flag"] = sol.growth
    if exact is not None:
        extra["sup_error_vs_closed_form"] = float(np.max(np.abs(sol.f - exact(sol.t))))
    if p.h.laplace(np.array([1.0 + 0j])) is not None:
        rep = vt.classify_asymptotics(p, float(cfg["alpha"]))
        extra["asymptotics"] = dict(kind=rep.kind, dominant=None if rep.dominant is None else
                                    [rep.dominant.real, rep.dominant.imag], degree=rep.degree)
    return [f], extra


def _volterra_linearization(cfg, out: Path):
    from .linear_pde import compute_Nq, simulate_linearized
    from .nonlinear_pde import SimConfig, perturbed_equilibrium, simulate
    from .volterra import reduction_problem, solve

    p = _params(cfg)
    st = _pick(find_equilibria(p), "lower")
    T, d, eps = float(cfg["T"]), float(cfg["d"]), float(cfg["eps"])
    res = compute_Nq(st, dv=float(cfg["dv"]))
    g, dt = res.grid, res.trace.dt
    u0 = bump(g, p)
    sol = solve(reduction_problem(res, u0, d, T), dt, T - dt)
    direct, _ = simulate_linearized(res, u0, d, T)

    def run(e):
        sc = SimConfig(p, d=d, T_end=T, grid=g, target=st, history=st.N_inf,
                       initial=perturbed_equilibrium(st, g, u0, e))
        return simulate(sc).trace.samples

    nonlin = (run(eps) - run(0.0)) / eps
    m = min(sol.f.size, direct.samples.size, nonlin.size)
    scale = np.max(np.abs(sol.f[:m]))
    t = (np.arange(m) + 0.5) * dt
    f = write_csv(out / "renewal_solution.csv", ["t", "f", "N_direct", "N_nonlinear_scaled"],
                  zip(t, sol.f[:m], direct.samples[:m], nonlin[:m]))
    extra = dict(rel_sup_direct=float(np.max(np.abs(sol.f[:m] - direct.samples[:m])) / scale),
                 rel_sup_nonlinear=float(np.max(np.abs(sol.f[:m] - nonlin[:m])) / scale))
    return [f], extra


COMMANDS = {
    "equilibria": cmd_equilibria,
    "nq": cmd_nq,
    "stability-map": cmd_stability_map,
    "simulate": cmd_simulate,
    "volterra": cmd_volterra,
}


def _defaults_help(name):
    lines = [f"  {k} = {v}" for k, v in DEFAULTS[name].items()]
    if name == "simulate":
        lines.append("presets: " + "; ".join(f"{k}: {v}" for k, v in PRESETS.items()))
    return "defaults:\n" + "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nnlif", description=__doc__.split("\n\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, epilog=_defaults_help(name),
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("--config", help="flat key=value file")
        sp.add_argument("--json", help="JSON object overriding config keys")
        sp.add_argument("--out-dir", default=".", help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker processes (map sweep)")
        sp.add_argument("--verify", action="store_true",
                        help="re-hash outputs listed in the manifest and exit")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out_dir)
    if args.verify:
        try:
            bad = verify_manifest(out)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            print(f"nnlif: cannot verify: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if bad:
            print("nnlif: hash mismatch: " + ", ".join(bad), file=sys.stderr)
            return EXIT_NUMERIC
        print("verified")
        return EXIT_OK
    if args.threads < 1:
        print("nnlif: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    try:
        cfg = resolve_config(args.command, args.config, args.json)
    except (ConfigError, ValueError) as exc:
        print(f"nnlif: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    # compute into a scratch directory so failures leave no partial outputs
    with tempfile.TemporaryDirectory(dir=out, prefix=".nnlif-") as tmp:
        tmpd = Path(tmp)
        try:
            files, extra = COMMANDS[args.command](cfg, tmpd, args.threads)
        except ConfigError as exc:
            print(f"nnlif: config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (NumericalFailure, EvaluationError, GridTooShortError, ArithmeticError,
                np.linalg.LinAlgError) as exc:
            print(f"nnlif: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        final = []
        for f in files:
            dest = out / Path(f).name
            shutil.move(str(f), dest)
            final.append(dest)
    from .kernels import BACKEND

    cfg_echo = {k: (v if not k.endswith("_samples") else f"<{len(v)} samples>")
                for k, v in cfg.items()}
    man = write_manifest(out, args.command, cfg_echo, final, time.perf_counter() - t0,
                         __version__, dict(extra, backend=BACKEND, threads=args.threads))
    print(f"wrote {len(final)} files and {man.name} to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
