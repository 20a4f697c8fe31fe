"""Named numerical checks, grouped into suites for ``fewphoton verify``."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .assembly import (assemble_cluster_route, assemble_main_result_route, bell, block_assignments,
                       engine_s_pieces, enumerate_partitions, expressions_equal, kerr_s_pieces, main_result_classes,
                       multinomial_count, relative_deviation)
from .engine import FrequencyConfig, NearSingularWarning, connected_density, max_term_magnitude
from .kerr import KerrParams, connected_three_photon, connected_two_photon, single_photon_s, two_level_three_photon
from .system import build_kerr, build_two_level, catalan, enumerate_orderings


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    deviation: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"check {self.name}: {status} max_deviation={self.deviation:.6g} tolerance={self.tolerance:.6g}"
        return text + (f" ({self.detail})" if self.detail else "")


def random_on_shell(n: int, rng: np.random.Generator, scale: float = 2.0, avoid: float = 1e-2,
                    center: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Random on-shell point with every ``|p_i - k_j|`` and partial-sum gap above ``avoid``."""
    from itertools import combinations

    while True:
        p = rng.uniform(center - scale, center + scale, n)
        k = rng.uniform(center - scale, center + scale, n)
        k[-1] = p.sum() - k[:-1].sum()
        ok = True
        for m in range(1, n):
            for a in combinations(range(n), m):
                for b in combinations(range(n), m):
                    if abs(p[list(a)].sum() - k[list(b)].sum()) < avoid:
                        ok = False
        if ok:
            return p, k


def check_unitarity(params: KerrParams = KerrParams(0.0, 1.0, 1.0), samples: int = 10_000) -> list[CheckResult]:
    ks = np.random.default_rng(0).uniform(params.omega_c - 50 * params.gamma, params.omega_c + 50 * params.gamma,
                                          samples)
    mod_dev = float(np.max(np.abs(np.abs(single_photon_s(params, ks)) - 1.0)))
    res_dev = abs(complex(single_photon_s(params, params.omega_c)) + 1.0)
    sys = build_kerr(params.omega_c, params.chi, params.gamma, dim=2)
    eng = 1.0 + connected_density(sys, FrequencyConfig((params.omega_c,), (params.omega_c,)))
    return [
        CheckResult("unitarity-modulus", mod_dev < 1e-12, mod_dev, 1e-12, f"{samples} real k"),
        CheckResult("unitarity-resonance", res_dev < 1e-15, res_dev, 1e-15, "S(wc) = -1"),
        CheckResult("unitarity-engine-resonance", abs(eng + 1) < 1e-12, abs(eng + 1), 1e-12),
    ]


def check_closed_form(samples: int = 50, seed: int = 0,
                      params: KerrParams = KerrParams(0.3, 1.0, 1.0)) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    sys = build_kerr(params.omega_c, params.chi, params.gamma, dim=4)
    out = []
    for n, closed in ((2, lambda p, k: connected_two_photon(params, *p, *k)),
                      (3, lambda p, k: connected_three_photon(params, p, k))):
        dev = 0.0
        for _ in range(samples):
            p, k = random_on_shell(n, rng, center=params.omega_c)
            dev = max(dev, relative_deviation(connected_density(sys, FrequencyConfig(p, k)), closed(p, k)))
        out.append(CheckResult(f"closed-form-n{n}", dev < 1e-8, dev, 1e-8, f"{samples} points"))
    return out


def check_routes(ns=(1, 2, 3), samples: int = 20, seed: int = 0,
                 params: KerrParams = KerrParams(0.0, 1.0, 1.0)) -> list[CheckResult]:
    out = []
    for n in ns:
        sys = build_kerr(params.omega_c, params.chi, params.gamma, dim=max(n + 1, 2))
        main = assemble_main_result_route(sys, n)
        # closed forms exist up to three photons; beyond that both routes use the engine
        pieces = kerr_s_pieces(params) if n <= 3 else engine_s_pieces(sys, n)
        cluster = assemble_cluster_route(pieces, n)
        rep = expressions_equal(main, cluster, samples=samples, seed=seed)
        detail = f"{len(main)} terms, structural_match={rep.structural_match}"
        out.append(CheckResult(f"routes-n{n}", rep.passes(1e-8), rep.max_relative_deviation, 1e-8, detail))
    return out


def pv_points(n: int, count: int = 5) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Base points on ``p_i = k_j`` manifolds with an on-shell approach direction.

    Returns ``(p, k, dp, dk)``; the approach is ``(p + ε dp, k + ε dk)``.
    """
    rng = np.random.default_rng(7 + n)
    pairs = [(i, j) for i in range(n) for j in range(n)]
    out = []
    for c in range(count):
        i, j = pairs[(c * (n + 1)) % len(pairs)] if n > 2 else pairs[c % len(pairs)]
        while True:
            p, k = random_on_shell(n, rng, scale=1.5, avoid=0.05)
            shift = k[j] - p[i]
            p[i] += shift
            p[(i + 1) % n] -= shift
            ok = all(abs(p[a] - k[b]) > 0.05 for a in range(n) for b in range(n)
                     if (a, b) != (i, j) and not (n == 2 and (a, b) == (1 - i, 1 - j)))
            if ok:
                break
        dp = np.zeros(n)
        dp[i], dp[(i + 1) % n] = 1.0, -1.0
        out.append((p, k, dp, np.zeros(n)))
    return out


def check_pv_cancellation(params: KerrParams = KerrParams(0.3, 1.0, 1.0)) -> list[CheckResult]:
    eps_seq = [10.0 ** -e for e in range(1, 6)]
    sys = build_kerr(params.omega_c, params.chi, params.gamma, dim=4)
    out = []
    for n in (2, 3):
        worst = 0.0
        growth_ok = True
        for p, k, dp, dk in pv_points(n):
            vals, mags = [], []
            for eps in eps_seq:
                cfg = FrequencyConfig(p + eps * dp, k + eps * dk)
                vals.append(connected_density(sys, cfg))
                mags.append(max_term_magnitude(sys, cfg))
            diffs = [abs(vals[i + 1] - vals[i]) for i in range(len(vals) - 1)]
            scale = max(1.0, abs(vals[-1]))
            worst = max(worst, diffs[-1] / scale)
            growth_ok &= mags[-1] / mags[0] > 1e3 and all(np.isfinite(vals))
            growth_ok &= all(diffs[i + 1] < diffs[i] for i in range(len(diffs) - 1))
        out.append(CheckResult(f"pv-cancellation-n{n}", growth_ok and worst < 1e-3, worst, 1e-3,
                               "5 manifolds, eps 1e-1..1e-5, terms grow as 1/eps"))
    return out


def check_chi_infinity(samples: int = 20, seed: int = 0) -> list[CheckResult]:
    params = KerrParams(0.0, 1e6, 1.0)
    rng = np.random.default_rng(seed)
    sys = build_kerr(params.omega_c, params.chi, params.gamma, dim=4)
    atom = build_two_level(params.omega_c, params.gamma)
    dev_closed = dev_engine = dev_atom = 0.0
    for _ in range(samples):
        p, k = random_on_shell(3, rng)
        m1 = two_level_three_photon(params, p, k)
        dev_closed = max(dev_closed, relative_deviation(connected_three_photon(params, p, k), m1))
        dev_engine = max(dev_engine, relative_deviation(connected_density(sys, FrequencyConfig(p, k)), m1))
        dev_atom = max(dev_atom, relative_deviation(connected_density(atom, FrequencyConfig(p, k)), m1))
    return [
        CheckResult("chi-infinity-closed-form", dev_closed < 1e-3, dev_closed, 1e-3, "chi = 1e6 gamma"),
        CheckResult("chi-infinity-engine", dev_engine < 1e-3, dev_engine, 1e-3, "chi = 1e6 gamma"),
        CheckResult("two-level-engine", dev_atom < 1e-8, dev_atom, 1e-8, "two-level emitter vs first sector"),
    ]


def check_linear_null(params: KerrParams = KerrParams(0.0, 0.0, 1.0)) -> list[CheckResult]:
    sys = build_kerr(params.omega_c, params.chi, params.gamma, dim=3)
    worst_closed = worst_engine = 0.0
    for total in np.linspace(-2.0, 2.0, 5):
        for d in np.linspace(-1.1, 1.3, 5):
            p = (total / 2 + d, total / 2 - d)
            k = (total / 2 + 0.37, total / 2 - 0.37)
            worst_closed = max(worst_closed, abs(connected_two_photon(params, *p, *k)))
            worst_engine = max(worst_engine, abs(connected_density(sys, FrequencyConfig(p, k))))
    return [
        CheckResult("linear-null-closed-form", worst_closed < 1e-10, worst_closed, 1e-10, "5x5 grid, chi = 0"),
        CheckResult("linear-null-engine", worst_engine < 1e-10, worst_engine, 1e-10, "5x5 grid, chi = 0"),
    ]


def check_counts() -> list[CheckResult]:
    def exact(name, got, want):
        return CheckResult(name, got == want, 0.0 if got == want else 1.0, 0.0, f"got {got}, expected {want}")

    out = [exact("catalan-orderings", [len(enumerate_orderings(n)) for n in (1, 2, 3)], [1, 2, 5]),
           exact("catalan-formula", [len(enumerate_orderings(n)) for n in range(1, 6)],
                 [catalan(n) for n in range(1, 6)]),
           exact("bell-partitions", [len(enumerate_partitions(n)) for n in range(1, 7)], [bell(n) for n in range(1, 7)])]
    perms = all(len(block_assignments(part)) == multinomial_count(part)
                for n in range(1, 5) for part in enumerate_partitions(n))
    out.append(exact("distinct-permutations", perms, True))
    groups = [assemble_cluster_route(kerr_s_pieces(KerrParams(0, 1, 1)), n).group_sizes() for n in (1, 2, 3)]
    out.append(exact("cluster-groups-n3", list(groups[2].values()), [6, 9, 1]))
    out.append(exact("cluster-groups", [sum(g.values()) for g in groups], [1, 3, 16]))
    out.append(exact("main-result-classes-n5", len(main_result_classes(5)), 6))
    out.append(exact("subset-pairs-n2-m1", main_result_classes(2)[1].subset_pairs, 4))
    return out


SUITES: dict[str, Callable[[], list[CheckResult]]] = {
    "unitarity": check_unitarity,
    "closed-form": check_closed_form,
    "routes": check_routes,
    "pv-cancellation": check_pv_cancellation,
    "chi-infinity": check_chi_infinity,
    "linear-null": check_linear_null,
    "counts": check_counts,
}


def run_suite(name: str, n: int | None = None) -> list[CheckResult]:
    if name == "all":
        return [r for suite in SUITES for r in run_suite(suite)]
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(sorted(SUITES))} or all")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearSingularWarning)
        if name == "routes" and n is not None:
            return check_routes(ns=(n,))
        return SUITES[name]()


def summary(results: list[CheckResult]) -> str:
    passed = sum(r.passed for r in results)
    return f"summary: {passed}/{len(results)} passed"


