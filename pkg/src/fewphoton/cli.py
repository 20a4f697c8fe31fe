"""Command-line interface: ``fewphoton {eval,scan,verify,oracle}``.

Exit codes: 0 success, 1 a check failed, 2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .assembly import assemble_cluster_route, engine_s_pieces
from .checks import SUITES, run_suite, summary
from .distribution import describe
from .engine import (MAX_ENGINE_PHOTONS, ONSHELL_TOL, FrequencyConfig, NearSingularWarning, OffShellError,
                     connected_density, connected_density_batch)
from .lattice import (LatticeError, LatticeModel, Packet, WavepacketRun, fit_linewidth, run_single_photon,
                      run_two_photon, spectrum_csv)
from .system import CapacityError, LocalSystem, SystemError_, build_kerr

THREADS_ENV = "FEWPHOTON_THREADS"

ORACLE_DEFAULTS = {
    1: dict(sites=2000, length=40.0, width=0.8, position=8.0, time=34.0, window=3.0, points=121),
    2: dict(sites=400, length=34.0, width=1.0, position=7.0, time=31.0, window=3.0, points=41),
}
SINGLE_TOL = 0.01
CORRELATED_TOL = 0.05
NULL_TOL = 1e-3


class UsageError(ValueError):
    pass


def human(x: float) -> str:
    return f"{x:.6g}"


def machine(x: float) -> str:
    return f"{x:.17g}"


def parse_floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    try:
        return tuple(float(x) for x in str(text).split(",") if x.strip())
    except ValueError as exc:
        raise UsageError(f"cannot parse number list {text!r}") from exc


def parse_kerr(text) -> dict:
    if isinstance(text, dict):
        items = text
    else:
        items = {}
        for part in str(text).split(","):
            if not part.strip():
                continue
            key, sep, value = part.partition("=")
            if not sep:
                raise UsageError(f"--kerr expects key=value pairs, got {part!r}")
            items[key.strip()] = value
    names = {"wc": "omega_c", "omega_c": "omega_c", "chi": "chi", "gamma": "gamma", "dim": "dim"}
    out = {}
    for key, value in items.items():
        if key not in names:
            raise UsageError(f"unknown Kerr parameter {key!r}; use wc, chi, gamma, dim")
        try:
            out[names[key]] = int(value) if key == "dim" else float(value)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {value!r}") from exc
    missing = {"omega_c", "chi"} - set(out)
    if missing:
        raise UsageError(f"--kerr needs {', '.join(sorted('wc' if m == 'omega_c' else m for m in missing))}")
    return out


def parse_grid(text) -> np.ndarray:
    parts = str(text).split(":")
    if len(parts) != 3:
        raise UsageError(f"grid must be start:stop:count, got {text!r}")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise UsageError(f"cannot parse grid {text!r}") from exc
    if count < 1:
        raise UsageError(f"grid needs a positive number of points, got {count}")
    return np.linspace(lo, hi, count)


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if value < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def resolve(args: argparse.Namespace) -> dict:
    """Merge config-file values under command-line flags."""
    cfg: dict = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
    for key, value in vars(args).items():
        if value is not None:
            cfg[key] = value
    return cfg


def load_system(cfg: dict, min_dim: int) -> LocalSystem:
    kerr, path = cfg.get("kerr"), cfg.get("system")
    if kerr is not None and path is not None:
        raise UsageError("give either --kerr or --system, not both")
    if path is not None:
        try:
            return LocalSystem.load(path)
        except OSError as exc:
            raise UsageError(f"cannot read system file {path}: {exc}") from exc
    if kerr is None:
        raise UsageError("a system is required: pass --kerr wc=..,chi=..,gamma=.. or --system FILE")
    params = parse_kerr(kerr)
    # one level of headroom above the minimum; results do not depend on it
    params.setdefault("dim", max(min_dim + 1, 2))
    if params["dim"] < min_dim:
        raise UsageError(f"Kerr truncation dim={params['dim']} is too small for {min_dim - 1} photons")
    return build_kerr(**params)


def emit(text: str, cfg: dict) -> None:
    out = cfg.get("output")
    if out:
        with open(out, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _value_fields(v: complex, fmt) -> list[str]:
    return [fmt(v.real), fmt(v.imag), fmt(abs(v))]


def cmd_eval(cfg: dict) -> int:
    if "p" not in cfg or "k" not in cfg:
        raise UsageError("eval needs --p and --k")
    p, k = parse_floats(cfg["p"]), parse_floats(cfg["k"])
    n = int(cfg.get("n", len(p)))
    if len(p) != n or len(k) != n:
        raise UsageError(f"--n {n} does not match {len(p)} output and {len(k)} input frequencies")
    if n > MAX_ENGINE_PHOTONS:
        raise CapacityError(f"the engine handles at most {MAX_ENGINE_PHOTONS} photons, got {n}")
    sys_ = load_system(cfg, n + 1)
    point = FrequencyConfig(p, k)
    point.check_on_shell(sys_.gamma)
    if cfg.get("save_system"):
        sys_.save(cfg["save_system"])
    rows: list[tuple[str, str, bool, complex | None]] = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NearSingularWarning)
        value = connected_density(sys_, point) + (1.0 if n == 1 else 0.0)
        rows.append(("connected", f"[{','.join(f'p{i + 1}' for i in range(n))}|"
                                  f"{','.join(f'k{i + 1}' for i in range(n))}]", True, value))
        if cfg.get("full"):
            expr = assemble_cluster_route(engine_s_pieces(sys_, n), n)
            pa, ka = np.asarray(p), np.asarray(k)
            for i, term in enumerate(expr.terms, 1):
                on = all(abs(pa[list(b.outputs)].sum() - ka[list(b.inputs)].sum()) <= ONSHELL_TOL * max(1.0, sys_.gamma)
                         for b in term.blocks)
                rows.append((f"term{i}", describe(term.blocks), on, term(pa, ka) if on else None))
    near = any(issubclass(w.category, NearSingularWarning) for w in caught)
    if near:
        print("note: point lies near a principal-value pole; value is a symmetric average", file=sys.stderr)
    if cfg.get("format", "text") == "csv":
        lines = ["term,blocks,on_support,re,im,abs"]
        for name, blocks, on, v in rows:
            vals = _value_fields(v, machine) if v is not None else ["", "", ""]
            lines.append(",".join([name, f'"{blocks}"', str(on).lower(), *vals]))
    else:
        fmt = ", ".join
        lines = [f"n: {n}", f"p: {fmt(human(x) for x in p)}", f"k: {fmt(human(x) for x in k)}",
                 f"system: dim={sys_.dim} bosonic={str(sys_.is_bosonic).lower()}"]
        for name, blocks, on, v in rows:
            if v is None:
                lines.append(f"{name} {blocks}: off-support")
            else:
                lines.append(f"{name} {blocks}: re={human(v.real)} im={human(v.imag)} abs={human(abs(v))}")
    emit("\n".join(lines) + "\n", cfg)
    return 0


def scan_points(n: int, totals: np.ndarray, p_off: tuple[float, ...], k_off: tuple[float, ...]):
    if len(p_off) != n or len(k_off) != n:
        raise UsageError(f"offset lists need {n} entries")
    if abs(sum(p_off)) > ONSHELL_TOL or abs(sum(k_off)) > ONSHELL_TOL:
        raise UsageError("output and input offsets must each sum to zero so every grid point is on-shell")
    base = totals[:, None] / n
    return base + np.asarray(p_off)[None, :], base + np.asarray(k_off)[None, :]


def cmd_scan(cfg: dict) -> int:
    n = int(cfg.get("n", 2))
    if n < 1 or n > MAX_ENGINE_PHOTONS:
        raise UsageError(f"--n must be between 1 and {MAX_ENGINE_PHOTONS}")
    if "total" not in cfg:
        raise UsageError("scan needs --total start:stop:count")
    totals = parse_grid(cfg["total"])
    p_off = parse_floats(cfg.get("p_offsets", ",".join("0" * n)))
    k_off = parse_floats(cfg.get("k_offsets", ",".join("0" * n)))
    sys_ = load_system(cfg, n + 1)
    p, k = scan_points(n, totals, p_off, k_off)
    workers = thread_count()
    chunks = np.array_split(np.arange(len(totals)), min(workers, len(totals)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearSingularWarning)
        # tables are cached per system, so fill the cache before fanning out
        connected_density_batch(sys_, p[:1], k[:1], warn=False)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda idx: connected_density_batch(sys_, p[idx], k[idx], warn=False), chunks))
    values = np.concatenate(parts) + (1.0 if n == 1 else 0.0)
    header = ["total"] + [f"p{i + 1}" for i in range(n)] + [f"k{i + 1}" for i in range(n)] + ["re", "im", "abs"]
    lines = [",".join(header)]
    for t, pr, kr, v in zip(totals, p, k, values):
        lines.append(",".join([machine(t), *map(machine, pr), *map(machine, kr), *_value_fields(v, machine)]))
    emit("\n".join(lines) + "\n", cfg)
    return 0


def cmd_verify(cfg: dict) -> int:
    suite = cfg.get("suite", "all")
    if suite != "all" and suite not in SUITES:
        raise UsageError(f"unknown suite {suite!r}; choose from {', '.join(sorted(SUITES))} or all")
    n = cfg.get("n")
    if n is not None and suite != "routes":
        raise UsageError("--n applies to the routes suite only")
    if n is not None and not 1 <= int(n) <= MAX_ENGINE_PHOTONS:
        raise UsageError(f"--n must be between 1 and {MAX_ENGINE_PHOTONS}")
    results = run_suite(suite, None if n is None else int(n))
    lines = [f"suite: {suite}"] + [r.line() for r in results] + [summary(results)]
    emit("\n".join(lines) + "\n", cfg)
    return 0 if all(r.passed for r in results) else 1


def cmd_oracle(cfg: dict) -> int:
    photons = int(cfg.get("photons", 1))
    if photons not in ORACLE_DEFAULTS:
        raise UsageError("--photons must be 1 or 2")
    opts = {key: cfg.get(key, default) for key, default in ORACLE_DEFAULTS[photons].items()}
    sys_ = load_system(cfg, photons + 1)
    center = float(cfg.get("center", _resonance(sys_)))
    model = LatticeModel(int(opts["sites"]), float(opts["length"]), sys_, band_center=center,
                         n_excitations=photons, max_basis=int(cfg.get("max_basis", 200_000)))
    model.check_budget()
    packet = Packet(center, float(opts["width"]), float(opts["position"]))
    run = WavepacketRun((packet,), float(opts["time"]), window=float(opts["window"]), points=int(opts["points"]))
    lines = [f"photons: {photons}", f"sites: {model.n_sites}", f"length: {human(model.length)}",
             f"hopping: {human(model.hopping)}", f"site_coupling: {human(model.site_coupling)}"]
    if photons == 1:
        res = run_single_photon(model, run)
        g_fit, w_fit = fit_linewidth(res.energies, res.ratio, sys_.gamma, center)
        ok = res.max_deviation < SINGLE_TOL
        lines += [f"norm_drift: {human(res.norm_drift)}",
                  f"fitted_gamma: {human(g_fit)}", f"fitted_center: {human(w_fit)}",
                  f"max_deviation: {human(res.max_deviation)} tolerance={human(SINGLE_TOL)} "
                  f"{'PASS' if ok else 'FAIL'}"]
        table = spectrum_csv(res.energies, res.ratio)
    else:
        res = run_two_photon(model, run)
        pred_scale = float(np.linalg.norm(res.predicted) / np.linalg.norm(res.output))
        linear = pred_scale < 1e-6
        ok = res.correlated_norm < NULL_TOL if linear else res.relative_l2 < CORRELATED_TOL
        lines += [f"norm_drift: {human(res.norm_drift)}",
                  f"symmetry_error: {human(res.symmetry_error)}",
                  f"correlated_norm: {human(res.correlated_norm)}"
                  + (f" tolerance={human(NULL_TOL)} {'PASS' if ok else 'FAIL'}" if linear else ""),
                  f"relative_l2: {human(res.relative_l2)}"
                  + ("" if linear else f" tolerance={human(CORRELATED_TOL)} {'PASS' if ok else 'FAIL'}")]
        rows = ["e1,e2,re,im,abs"]
        for i, e1 in enumerate(res.energies):
            for j, e2 in enumerate(res.energies):
                rows.append(",".join([machine(e1), machine(e2), *_value_fields(res.correlated[i, j], machine)]))
        table = "\n".join(rows) + "\n"
    if cfg.get("table"):
        Path(cfg["table"]).write_text(table)
    if cfg.get("save_run"):
        Path(cfg["save_run"]).write_text(run.dumps() + "\n")
    emit("\n".join(lines) + "\n", cfg)
    return 0 if ok else 1


def _resonance(sys_: LocalSystem) -> float:
    # real part of the lowest single-excitation energy
    h = sys_.h_eff
    adag0 = sys_.a_op.conj().T[:, sys_.ground]
    idx = int(np.argmax(np.abs(adag0)))
    return float(h[idx, idx].real)


def _add_system(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kerr", help="inline Kerr cavity, e.g. wc=0,chi=1,gamma=1[,dim=4]")
    p.add_argument("--system", help="path to a serialized local system (JSON)")
    p.add_argument("--config", help="JSON file with option values; flags override it")
    p.add_argument("--output", help="write the result here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fewphoton", description="Few-photon waveguide scattering matrices.")
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("eval", help="connected density (and optionally all terms) at one point")
    _add_system(ev)
    ev.add_argument("--n", type=int, help="photon number (default: length of --p)")
    ev.add_argument("--p", help="output frequencies, comma-separated")
    ev.add_argument("--k", help="input frequencies, comma-separated")
    ev.add_argument("--full", action="store_true", default=None, help="report every term of the S matrix")
    ev.add_argument("--format", choices=["text", "csv"], help="output format (default: text)")
    ev.add_argument("--save-system", dest="save_system", help="write the resolved system as JSON")

    sc = sub.add_parser("scan", help="densities along a total-detuning grid, as CSV")
    _add_system(sc)
    sc.add_argument("--n", type=int, help="photon number (default: 2)")
    sc.add_argument("--total", help="start:stop:count of the total frequency")
    sc.add_argument("--p-offsets", dest="p_offsets", help="per-photon output offsets summing to zero")
    sc.add_argument("--k-offsets", dest="k_offsets", help="per-photon input offsets summing to zero")

    ve = sub.add_parser("verify", help="run a named check suite")
    ve.add_argument("--suite", help=f"one of {', '.join(sorted(SUITES))}, all")
    ve.add_argument("--n", type=int, help="photon number for the routes suite")
    ve.add_argument("--config", help="JSON file with option values; flags override it")
    ve.add_argument("--output", help="write the report here instead of stdout")

    orc = sub.add_parser("oracle", help="lattice wave-packet simulation compared with the S matrix")
    _add_system(orc)
    orc.add_argument("--photons", type=int, help="1 or 2 (default: 1)")
    orc.add_argument("--sites", type=int, help="number of chain sites")
    orc.add_argument("--length", type=float, help="chain length in units of c/gamma")
    orc.add_argument("--width", type=float, help="packet width in length units")
    orc.add_argument("--position", type=float, help="initial packet center")
    orc.add_argument("--time", type=float, help="evolution time")
    orc.add_argument("--center", type=float, help="packet carrier frequency (default: system resonance)")
    orc.add_argument("--window", type=float,
                     help="half-width of the reported frequency window, in linewidths (one photon) "
                          "or packet bandwidths (two)")
    orc.add_argument("--points", type=int, help="frequency grid points per axis")
    orc.add_argument("--max-basis", dest="max_basis", type=int, help="basis-size budget of the lattice run")
    orc.add_argument("--table", help="write the spectrum or correlated table as CSV")
    orc.add_argument("--save-run", dest="save_run", help="write the run configuration and results as JSON")
    return parser


COMMANDS = {"eval": cmd_eval, "scan": cmd_scan, "verify": cmd_verify, "oracle": cmd_oracle}


# options whose values may start with '-' (negative frequencies, grids)
_VALUE_FLAGS = {"--p", "--k", "--total", "--p-offsets", "--k-offsets", "--center", "--kerr"}


def _join_values(argv: list[str]) -> list[str]:
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _VALUE_FLAGS and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = _join_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, OffShellError, CapacityError, SystemError_, LatticeError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2
