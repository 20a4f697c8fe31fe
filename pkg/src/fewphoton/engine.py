"""Frequency-domain Green functions of the local system.

Each time-ordering sector of the 2N-point Green function becomes, after
Fourier transformation in gap coordinates, a product of resolvents
``i / (flow - E + i0)``: one per gap between consecutive operators, where
``flow`` is the signed sum of external frequencies attached to the
operators later than the gap and ``E`` is the eigen-energy of the
intermediate state.  The overall time translation yields
``2π δ(Σp - Σk)``, which is stripped from every density below.

Gaps whose intermediate energy is real (the vacuum) split into a principal
part and a δ part.  Dropping every δ part leaves the connected density.
"""

from __future__ import annotations

import functools
import itertools
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .distribution import Block, DistributionTerm
from .system import (
    CapacityError,
    EigenData,
    LocalSystem,
    Op,
    OrderingClass,
    chains,
    eigen_decompose,
    enumerate_orderings,
    is_dyck,
    ladder_chain_amplitude,
)

MAX_ENGINE_PHOTONS = 4
ONSHELL_TOL = 1e-9
NEAR_SINGULAR = 1e-7
AVERAGING_EPS = 1e-4
REAL_ENERGY_TOL = 1e-12


class NearSingularWarning(UserWarning):
    """A principal-value denominator is close to zero; averaged value returned."""


class OffShellError(ValueError):
    """Frequencies violate overall energy conservation."""


@dataclass(frozen=True)
class FrequencyConfig:
    """Output frequencies ``p`` and input frequencies ``k``."""

    p: tuple[float, ...]
    k: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        object.__setattr__(self, "k", tuple(float(x) for x in self.k))
        if len(self.p) != len(self.k) or not self.p:
            raise ValueError(f"need equal, nonzero numbers of p and k, got {len(self.p)} and {len(self.k)}")

    @property
    def n_photons(self) -> int:
        return len(self.p)

    @property
    def mismatch(self) -> float:
        return math.fsum(self.p) - math.fsum(self.k)

    def check_on_shell(self, gamma: float = 1.0) -> None:
        tol = ONSHELL_TOL * max(1.0, gamma)
        if abs(self.mismatch) > tol:
            raise OffShellError(
                f"energy conservation violated: sum(p) - sum(k) = {self.mismatch:.6g} (tolerance {tol:.1g})"
            )

    def signed(self) -> np.ndarray:
        return np.concatenate([self.p, -np.asarray(self.k)])


@dataclass(frozen=True)
class Gap:
    """One gap between consecutive operators.

    The flow through the gap is ``Σ p[outputs] - Σ k[inputs]``.
    """

    outputs: frozenset
    inputs: frozenset
    energy: complex
    real: bool

    def flow(self, p: Sequence[float], k: Sequence[float]) -> float:
        return sum(p[i] for i in self.outputs) - sum(k[j] for j in self.inputs)


@dataclass(frozen=True)
class SectorTerm:
    ordering: OrderingClass
    out_perm: tuple[int, ...]
    in_perm: tuple[int, ...]
    chain: tuple[int, ...]
    coefficient: complex
    gaps: tuple[Gap, ...]

    @property
    def n_photons(self) -> int:
        return self.ordering.n_photons

    @property
    def slots(self) -> tuple[int, ...]:
        """Index of each operator slot into ``(p_1..p_N, k_1..k_N)``."""
        n = self.n_photons
        outs, ins = iter(self.out_perm), iter(self.in_perm)
        return tuple(next(outs) if op is Op.ANNIHILATE else n + next(ins) for op in self.ordering.pattern)

    def value(self, p: Sequence[float], k: Sequence[float]) -> complex:
        """Pointwise value with every real-energy gap taken as a principal part."""
        val = self.coefficient
        for gap in self.gaps:
            val *= 1j / (gap.flow(p, k) - gap.energy)
        return complex(val)


@functools.lru_cache(maxsize=64)
def decomposition(sys: LocalSystem) -> EigenData:
    return eigen_decompose(sys)


def _check_capacity(n: int, max_photons: int) -> None:
    if n < 1:
        raise ValueError(f"photon number must be positive, got {n}")
    if n > max_photons:
        raise CapacityError(f"N={n} exceeds engine capacity {max_photons}")


def enumerate_sector_terms(eig: EigenData, n_photons: int,
                           max_photons: int = MAX_ENGINE_PHOTONS) -> list[SectorTerm]:
    """All (ordering, output assignment, input assignment, chain) terms.

    The coefficient is ``(-γ)^N (2π)^(1-N)`` times the chain's matrix
    elements; with it the N=1 term reproduces ``s_k = -iγ/(k - α)``.
    """
    _check_capacity(n_photons, max_photons)
    n = n_photons
    gamma = eig.gamma
    norm = (-gamma) ** n * (2 * math.pi) ** (1 - n)
    real_tol = REAL_ENERGY_TOL * max(1.0, gamma)
    terms: list[SectorTerm] = []
    perms = list(itertools.permutations(range(n)))
    for ordering in enumerate_orderings(n, max_photons=max(max_photons, n)):
        chain_list = list(chains(eig, ordering))
        if not chain_list:
            continue
        for q in perms:
            for pp in perms:
                flows = _gap_sets(ordering, q, pp)
                for states, weight in chain_list:
                    gaps = tuple(
                        Gap(outs, ins, complex(eig.energies[st]), abs(eig.energies[st].imag) < real_tol)
                        for (outs, ins), st in zip(flows, states)
                    )
                    terms.append(SectorTerm(ordering, q, pp, states, norm * weight, gaps))
    return terms


def _gap_sets(ordering: OrderingClass, q: Sequence[int], pp: Sequence[int]) -> list[tuple[frozenset, frozenset]]:
    outs, ins = iter(q), iter(pp)
    cur_o: set[int] = set()
    cur_i: set[int] = set()
    result = []
    for op in ordering.pattern[:-1]:
        if op is Op.ANNIHILATE:
            cur_o.add(next(outs))
        else:
            cur_i.add(next(ins))
        result.append((frozenset(cur_o), frozenset(cur_i)))
    return result


@dataclass(frozen=True, eq=False)
class TermTable:
    """Sector terms packed into arrays for the evaluation kernels."""

    n_photons: int
    gamma: float
    coeffs: np.ndarray
    slots: np.ndarray
    energies: np.ndarray
    real_mask: np.ndarray
    terms: tuple[SectorTerm, ...]

    @classmethod
    def from_terms(cls, terms: Sequence[SectorTerm], n: int, gamma: float) -> "TermTable":
        if not terms:
            empty = np.zeros((0, 2 * n - 1))
            return cls(n, gamma, np.zeros(0, complex), np.zeros((0, 2 * n), np.int64),
                       empty.astype(complex), empty.astype(bool), ())
        coeffs = np.array([t.coefficient for t in terms], dtype=complex)
        slots = np.array([t.slots for t in terms], dtype=np.int64)
        energies = np.array([[g.energy for g in t.gaps] for t in terms], dtype=complex)
        real = np.array([[g.real for g in t.gaps] for t in terms], dtype=bool)
        return cls(n, gamma, coeffs, slots, energies, real, tuple(terms))

    def __len__(self) -> int:
        return len(self.coeffs)


@functools.lru_cache(maxsize=64)
def term_table(sys: LocalSystem, n_photons: int, max_photons: int = MAX_ENGINE_PHOTONS) -> TermTable:
    eig = decomposition(sys)
    return TermTable.from_terms(enumerate_sector_terms(eig, n_photons, max_photons), n_photons, sys.gamma)


@functools.lru_cache(maxsize=16)
def averaging_direction(n: int) -> np.ndarray:
    """Fixed on-shell displacement that moves every partial-sum flow.

    Returned in signed form ``(dp, -dk)`` with ``Σ dp = Σ dk``.
    """
    for seed in range(100):
        rng = np.random.default_rng(20240 + seed)
        dp = rng.uniform(-1.0, 1.0, n)
        dk = rng.uniform(-1.0, 1.0, n)
        dk += (dp.sum() - dk.sum()) / n
        z = np.concatenate([dp, -dk])
        ok = True
        for mask in itertools.product((0, 1), repeat=2 * n):
            if 0 < sum(mask) < 2 * n and abs(np.dot(mask, z)) < 0.05:
                if sum(mask[:n]) == n and sum(mask[n:]) == n:
                    continue
                ok = False
                break
        if ok:
            return z
    raise RuntimeError("no generic averaging direction found")  # pragma: no cover


def evaluate_connected(table: TermTable, zs: np.ndarray, backend: str | None = None,
                       warn: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Connected densities at signed points ``zs`` (rows ``(p, -k)``).

    Returns ``(values, near_singular)``; flagged points are evaluated as the
    symmetric average over ``±ε`` along a fixed on-shell direction.
    """
    impl = kernels.BACKENDS[backend] if backend else kernels
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    values = impl.resolvent_sum(table.coeffs, table.slots, table.energies, zs)
    near = impl.min_real_gap(table.slots, table.energies, table.real_mask, zs) < NEAR_SINGULAR * table.gamma
    if near.any():
        eps = AVERAGING_EPS * table.gamma
        d = averaging_direction(table.n_photons)
        flagged = zs[near]
        values[near] = _symmetric_average(impl, table, flagged, eps * d)
        if warn:
            warnings.warn(
                f"{int(near.sum())} point(s) within {NEAR_SINGULAR:g}*gamma of a principal-value pole; "
                "returning ±ε average",
                NearSingularWarning,
                stacklevel=3,
            )
    return values, near


def _symmetric_average(impl, table: TermTable, zs: np.ndarray, step: np.ndarray) -> np.ndarray:
    # ±ε average has O(ε²) bias; one Richardson step with 2ε removes it
    def avg(h):
        plus = impl.resolvent_sum(table.coeffs, table.slots, table.energies, zs + h)
        minus = impl.resolvent_sum(table.coeffs, table.slots, table.energies, zs - h)
        return 0.5 * (plus + minus)

    return (4.0 * avg(step) - avg(2.0 * step)) / 3.0


def connected_density(sys: LocalSystem, cfg: FrequencyConfig, max_photons: int = MAX_ENGINE_PHOTONS) -> complex:
    """Connected Green-function density at an on-shell configuration.

    For N > 1 this equals the connected S-matrix density.  For N = 1 it is
    ``s_k``; the single-photon S-matrix density is ``1 + s_k``
    (see :func:`connected_s_density`).
    """
    cfg.check_on_shell(sys.gamma)
    table = term_table(sys, cfg.n_photons, max_photons)
    values, _ = evaluate_connected(table, cfg.signed()[None, :])
    return complex(values[0])


def connected_s_density(sys: LocalSystem, cfg: FrequencyConfig, max_photons: int = MAX_ENGINE_PHOTONS) -> complex:
    val = connected_density(sys, cfg, max_photons)
    return val + 1.0 if cfg.n_photons == 1 else val


def connected_density_batch(sys: LocalSystem, p: np.ndarray, k: np.ndarray,
                            max_photons: int = MAX_ENGINE_PHOTONS, backend: str | None = None,
                            warn: bool = True) -> np.ndarray:
    """Vectorized :func:`connected_density` over rows of ``p`` and ``k``."""
    p = np.atleast_2d(np.asarray(p, dtype=float))
    k = np.atleast_2d(np.asarray(k, dtype=float))
    if p.shape != k.shape:
        raise ValueError(f"p and k shapes differ: {p.shape} vs {k.shape}")
    mismatch = np.abs(p.sum(axis=1) - k.sum(axis=1))
    tol = ONSHELL_TOL * max(1.0, sys.gamma)
    if np.any(mismatch > tol):
        bad = int(np.argmax(mismatch))
        raise OffShellError(f"energy conservation violated at row {bad}: |sum(p) - sum(k)| = {mismatch[bad]:.6g}")
    table = term_table(sys, p.shape[1], max_photons)
    values, _ = evaluate_connected(table, np.hstack([p, -k]), backend=backend, warn=warn)
    return values


def sector_contributions(sys: LocalSystem, cfg: FrequencyConfig,
                         max_photons: int = MAX_ENGINE_PHOTONS) -> dict[str, complex]:
    """Connected density split by ordering class (no averaging)."""
    table = term_table(sys, cfg.n_photons, max_photons)
    vals = kernels.term_values(table.coeffs, table.slots, table.energies, cfg.signed())
    out: dict[str, complex] = defaultdict(complex)
    for term, v in zip(table.terms, vals):
        out[str(term.ordering)] += v
    return dict(out)


def max_term_magnitude(sys: LocalSystem, cfg: FrequencyConfig, max_photons: int = MAX_ENGINE_PHOTONS) -> float:
    table = term_table(sys, cfg.n_photons, max_photons)
    return float(np.abs(kernels.term_values(table.coeffs, table.slots, table.energies, cfg.signed())).max())


# -- time domain -------------------------------------------------------------


def green_time_domain(sys: LocalSystem, t_out: Sequence[float], t_in: Sequence[float]) -> complex:
    """``(-γ)^N <0| T a(t'_1)..a(t'_N) a†(t_1)..a†(t_N) |0>`` under ``h_eff`` evolution.

    Coincident times place the annihilation operator to the left.
    """
    if len(t_out) != len(t_in) or not len(t_out):
        raise ValueError("need equal, nonzero numbers of output and input times")
    n = len(t_out)
    slots = [(float(t), 0, Op.ANNIHILATE) for t in t_out] + [(float(t), 1, Op.CREATE) for t in t_in]
    slots.sort(key=lambda s: (-s[0], s[1]))
    pattern = tuple(s[2] for s in slots)
    if not is_dyck(pattern):
        return 0j
    eig = decomposition(sys)
    amp = ladder_chain_amplitude(eig, OrderingClass(pattern), [s[0] for s in slots])
    return (-sys.gamma) ** n * amp


# -- distribution expansion -------------------------------------------------


class _GroupDensity:
    """Sum of member terms with some gaps replaced by δ factors."""

    def __init__(self, n: int):
        self.n = n
        self.coeffs: list[complex] = []
        self.slots: list[tuple[int, ...]] = []
        self.energies: list[list[complex]] = []
        self.keep: list[list[bool]] = []

    def add(self, coeff: complex, slots: tuple[int, ...], energies: list[complex], keep: list[bool]) -> None:
        self.coeffs.append(coeff)
        self.slots.append(slots)
        self.energies.append(energies)
        self.keep.append(keep)

    def freeze(self) -> "_GroupDensity":
        self._c = np.array(self.coeffs, dtype=complex)
        self._s = np.array(self.slots, dtype=np.int64)
        self._e = np.array(self.energies, dtype=complex)
        self._k = np.array(self.keep, dtype=bool)
        return self

    def __len__(self) -> int:
        return len(self.coeffs)

    def __call__(self, p, k) -> complex:
        z = np.concatenate([np.asarray(p, float), -np.asarray(k, float)])
        flows = np.cumsum(z[self._s], axis=1)[:, :-1]
        # δ-replaced gaps sit exactly on their pole; they are masked out below
        with np.errstate(divide="ignore", invalid="ignore"):
            factors = np.where(self._k, 1j / (flows - self._e), 1.0)
        return complex(np.sum(self._c * np.prod(factors, axis=1)))


def expand_to_distribution(terms: Sequence[SectorTerm]) -> list[DistributionTerm]:
    """Split real-energy gaps into ``i P/x`` and ``π δ(x)`` branches and group.

    Each δ branch at a vacuum gap cuts the operator string into independent
    segments; every segment becomes a frequency-conserving block.  Terms are
    grouped by their block set and the densities of a group are summed.
    The group with a single block is the connected part.

    Single-block and single-cut groups equal the corresponding cluster
    products.  Groups with two or more δ factors are naive: products of
    principal parts whose poles intersect carry extra δ·δ pieces that this
    pointwise bookkeeping drops.  At N = 3 the all-paired groups come out
    at 3/2 of the cluster product for that reason.
    """
    if not terms:
        return []
    n = terms[0].n_photons
    groups: dict[frozenset, _GroupDensity] = {}
    for term in terms:
        real_idx = [g for g, gap in enumerate(term.gaps) if gap.real]
        for gap_i in real_idx:
            gap = term.gaps[gap_i]
            if len(gap.outputs) != len(gap.inputs) or abs(gap.energy) > 0:
                raise ValueError("real-energy gap away from the vacuum has no block representation")
        slots = term.slots
        energies = [g.energy for g in term.gaps]
        for r in range(len(real_idx) + 1):
            for cut in itertools.combinations(real_idx, r):
                blocks = _segments(term, cut)
                keep = [g not in cut for g in range(len(term.gaps))]
                coeff = term.coefficient * math.pi ** len(cut)
                groups.setdefault(blocks, _GroupDensity(n)).add(coeff, slots, energies, keep)
    out = [DistributionTerm(blocks, dens.freeze()) for blocks, dens in groups.items()]
    return sorted(out, key=lambda t: (len(t.blocks), sorted(t.blocks)))


def _segments(term: SectorTerm, cut: Sequence[int]) -> frozenset:
    bounds = [-1, *cut, len(term.gaps)]
    outs_all, ins_all = [], []
    o_it, i_it = iter(term.out_perm), iter(term.in_perm)
    for op in term.ordering.pattern:
        if op is Op.ANNIHILATE:
            outs_all.append(next(o_it))
            ins_all.append(None)
        else:
            outs_all.append(None)
            ins_all.append(next(i_it))
    blocks = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        seg = range(lo + 1, hi + 1)
        outs = [outs_all[s] for s in seg if outs_all[s] is not None]
        ins = [ins_all[s] for s in seg if ins_all[s] is not None]
        blocks.append(Block(tuple(outs), tuple(ins)))
    return frozenset(blocks)
