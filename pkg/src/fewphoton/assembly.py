"""Full N-photon S matrices as sums of δ-supported terms.

Two independent constructions are provided:

* the cluster route sums, over set partitions of the outputs and distinct
  input assignments, products of connected S-matrix pieces;
* the main-result route sums, over subsets of photons that interact with
  the local system, full Green functions times bare δ pairings for the
  bypassing photons, then expands each Green function into connected
  Green functions.

Both produce an :class:`SMatrixExpression`; :func:`expressions_equal`
compares two of them term by term.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .distribution import Block, DistributionTerm, describe, sample_support, validate_blocks
from .engine import FrequencyConfig, MAX_ENGINE_PHOTONS, connected_density
from .kerr import KerrParams, connected_three_photon, connected_two_photon, single_photon_s, s
from .system import CapacityError, LocalSystem

MAX_PARTITION_SIZE = 6
MAX_ASSEMBLY_PHOTONS = MAX_ENGINE_PHOTONS

# piece(p_sub, k_sub) -> complex, evaluated on the block's own support
Piece = Callable[[np.ndarray, np.ndarray], complex]


@dataclass(frozen=True)
class SetPartition:
    """Partition of ``{0..n-1}`` into nonempty, sorted blocks."""

    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        blocks = tuple(sorted(tuple(sorted(b)) for b in self.blocks))
        if any(not b for b in blocks):
            raise ValueError("partition blocks must be nonempty")
        flat = sorted(i for b in blocks for i in b)
        if flat != list(range(len(flat))):
            raise ValueError(f"blocks {blocks} are not a partition of 0..{len(flat) - 1}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.blocks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(sorted(len(b) for b in self.blocks))

    def __str__(self) -> str:
        return "".join("{" + ",".join(str(i + 1) for i in b) + "}" for b in self.blocks)


def enumerate_partitions(n: int) -> list[SetPartition]:
    """All set partitions of ``n`` elements, via restricted growth strings.

    Order is lexicographic in the growth string, so ``{0..n-1}`` as a single
    block comes first and the all-singletons partition last.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if n > MAX_PARTITION_SIZE:
        raise CapacityError(f"set partitions are enumerated for n <= {MAX_PARTITION_SIZE}, got {n}")
    out: list[SetPartition] = []

    def grow(labels: list[int], top: int) -> None:
        if len(labels) == n:
            groups: dict[int, list[int]] = {}
            for i, lab in enumerate(labels):
                groups.setdefault(lab, []).append(i)
            out.append(SetPartition(tuple(tuple(g) for g in groups.values())))
            return
        for lab in range(top + 2):
            grow(labels + [lab], max(top, lab))

    grow([0], 0)
    return out


def bell(n: int) -> int:
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
    return row[0]


def block_assignments(partition: SetPartition) -> list[frozenset]:
    """Distinct ways to attach input indices to the output blocks.

    All ``n!`` input permutations are generated, each block's inputs are
    sorted and duplicates dropped; the survivors are the distinct block
    sets in order of first appearance.
    """
    n = partition.n
    seen: dict[frozenset, None] = {}
    for perm in itertools.permutations(range(n)):
        blocks = frozenset(Block(outs, tuple(perm[i] for i in outs)) for outs in partition.blocks)
        seen.setdefault(blocks, None)
    return list(seen)


def multinomial_count(partition: SetPartition) -> int:
    return math.factorial(partition.n) // math.prod(math.factorial(len(b)) for b in partition.blocks)


class _Product:
    """Density of a block set: product of per-block pieces."""

    def __init__(self, factors: Sequence[tuple[Block, Piece]]):
        self.factors = tuple(factors)

    def __call__(self, p: np.ndarray, k: np.ndarray) -> complex:
        val = 1.0 + 0j
        for b, piece in self.factors:
            val *= piece(p[list(b.outputs)], k[list(b.inputs)])
        return complex(val)


class _Sum:
    def __init__(self):
        self.parts: list[Callable[[np.ndarray, np.ndarray], complex]] = []

    def __call__(self, p: np.ndarray, k: np.ndarray) -> complex:
        return complex(sum(part(p, k) for part in self.parts))


@dataclass
class SMatrixExpression:
    """Sum of distribution terms, one per distinct block set.

    Terms added with an existing block set are merged by summing densities.
    """

    n: int
    terms: list[DistributionTerm] = field(default_factory=list)
    route: str = ""

    def __post_init__(self) -> None:
        self._index: dict[frozenset, int] = {}
        self._sums: dict[frozenset, _Sum] = {}
        pending, self.terms = self.terms, []
        for t in pending:
            self.add(t.blocks, t.density)

    def add(self, blocks, density) -> None:
        blocks = validate_blocks(blocks, self.n)
        if blocks not in self._index:
            acc = _Sum()
            self._sums[blocks] = acc
            self._index[blocks] = len(self.terms)
            self.terms.append(DistributionTerm(blocks, acc))
        self._sums[blocks].parts.append(density)

    def block_sets(self) -> set[frozenset]:
        return set(self._index)

    def term(self, blocks: frozenset) -> DistributionTerm:
        return self.terms[self._index[frozenset(blocks)]]

    def sort(self) -> None:
        self.terms.sort(key=lambda t: (len(t.blocks), describe(t.blocks)))
        self._index = {t.blocks: i for i, t in enumerate(self.terms)}

    def group_sizes(self) -> dict[tuple[int, ...], int]:
        """Number of terms per multiset of block sizes."""
        counts: dict[tuple[int, ...], int] = {}
        for t in self.terms:
            counts[t.block_sizes] = counts.get(t.block_sizes, 0) + 1
        return dict(sorted(counts.items()))

    def __len__(self) -> int:
        return len(self.terms)


def assemble_cluster_route(pieces: Mapping[int, Piece], n: int) -> SMatrixExpression:
    """``S = Σ_partitions Σ_distinct assignments Π S^C_block``.

    ``pieces[m]`` is the connected S-matrix density of ``m`` photons
    (``pieces[1]`` is ``1 + s_k``) evaluated on its own support.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    missing = [m for m in range(1, n + 1) if m not in pieces]
    if missing:
        raise KeyError(f"missing connected pieces for block sizes {missing}")
    expr = SMatrixExpression(n, route="cluster")
    for part in enumerate_partitions(n):
        for blocks in block_assignments(part):
            expr.add(blocks, _Product([(b, pieces[b.size]) for b in sorted(blocks)]))
    expr.sort()
    return expr


def _bare_delta(p: np.ndarray, k: np.ndarray) -> complex:
    return 1.0 + 0j


@dataclass(frozen=True)
class MainResultClass:
    """All terms with ``m`` photons passing through the local system."""

    m: int
    n: int

    @property
    def subset_pairs(self) -> int:
        return math.comb(self.n, self.m) ** 2

    @property
    def bypass_pairings(self) -> int:
        return math.factorial(self.n - self.m)


def main_result_classes(n: int) -> list[MainResultClass]:
    return [MainResultClass(m, n) for m in range(n + 1)]


def subset_pairs(n: int, m: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    combos = list(itertools.combinations(range(n), m))
    return [(b, d) for b in combos for d in combos]


def _green_clusters(outs: tuple[int, ...], ins: tuple[int, ...]) -> list[list[Block]]:
    """Block decompositions of a Green function with legs ``outs``/``ins``."""
    if not outs:
        return [[]]
    result = []
    for part in enumerate_partitions(len(outs)):
        for blocks in block_assignments(part):
            result.append([Block(tuple(outs[i] for i in b.outputs), tuple(ins[j] for j in b.inputs))
                           for b in sorted(blocks)])
    return result


def engine_green_pieces(sys: LocalSystem, n: int) -> dict[int, Piece]:
    """Connected Green-function densities ``G^C_m`` for ``m = 1..n`` from the engine."""

    def make(m):
        def piece(p, k):
            return connected_density(sys, FrequencyConfig(p, k))
        return piece

    return {m: make(m) for m in range(1, n + 1)}


def assemble_main_result_route(sys: LocalSystem, n: int, green_pieces: Mapping[int, Piece] | None = None
                               ) -> SMatrixExpression:
    """``S = Σ_M Σ_{B,D} G(p_B; k_D) Σ_P Π δ(p - k)`` with ``G`` cluster-expanded.

    Photons outside ``B``/``D`` bypass the local system and contribute bare
    δ pairings of density one.  Each full Green function ``G(p_B; k_D)`` is
    written as a sum over partitions of products of connected Green
    functions; ``G^C_1`` carries ``s_k`` on a pairing.
    """
    if n > MAX_ASSEMBLY_PHOTONS:
        raise CapacityError(f"assembly supports N <= {MAX_ASSEMBLY_PHOTONS}, got {n}")
    pieces = dict(green_pieces) if green_pieces is not None else engine_green_pieces(sys, n)
    expr = SMatrixExpression(n, route="main-result")
    for cls in main_result_classes(n):
        for b_set, d_set in subset_pairs(n, cls.m):
            rest_out = [i for i in range(n) if i not in b_set]
            rest_in = [j for j in range(n) if j not in d_set]
            for perm in itertools.permutations(rest_in):
                bare = [(Block((i,), (j,)), _bare_delta) for i, j in zip(rest_out, perm)]
                for cluster in _green_clusters(b_set, d_set):
                    factors = bare + [(b, pieces[b.size]) for b in cluster]
                    expr.add([b for b, _ in factors], _Product(factors))
    expr.sort()
    return expr


def engine_s_pieces(sys: LocalSystem, n: int) -> dict[int, Piece]:
    """Connected S-matrix pieces from the engine: ``1 + s_k`` and ``G^C_m``."""
    green = engine_green_pieces(sys, n)

    def single(p, k):
        return 1.0 + green[1](p, k)

    return {1: single, **{m: green[m] for m in range(2, n + 1)}}


def kerr_s_pieces(params: KerrParams) -> dict[int, Piece]:
    """Connected S-matrix pieces from the Kerr closed forms (up to three photons)."""
    return {
        1: lambda p, k: complex(single_photon_s(params, k[0])),
        2: lambda p, k: connected_two_photon(params, p[0], p[1], k[0], k[1]),
        3: lambda p, k: connected_three_photon(params, p, k),
    }


def kerr_green_pieces(params: KerrParams) -> dict[int, Piece]:
    pieces = kerr_s_pieces(params)
    pieces[1] = lambda p, k: complex(s(params, k[0]))
    return pieces


@dataclass
class EquivalenceReport:
    structural_match: bool
    only_in_x: list[str]
    only_in_y: list[str]
    max_relative_deviation: float
    per_term: dict[str, float]
    samples: int

    @property
    def ok(self) -> bool:
        return self.structural_match

    def passes(self, tol: float) -> bool:
        return self.structural_match and self.max_relative_deviation < tol

    def lines(self) -> list[str]:
        out = [f"structural_match: {self.structural_match}",
               f"samples_per_term: {self.samples}",
               f"max_relative_deviation: {self.max_relative_deviation:.6g}"]
        out += [f"only_in_x: {name}" for name in self.only_in_x]
        out += [f"only_in_y: {name}" for name in self.only_in_y]
        out += [f"term {name}: {dev:.6g}" for name, dev in self.per_term.items()]
        return out


def relative_deviation(a: complex, b: complex) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def expressions_equal(x: SMatrixExpression, y: SMatrixExpression, samples: int = 20, seed: int = 0,
                      center: float = 0.0, scale: float = 3.0) -> EquivalenceReport:
    """Compare block sets exactly and densities at random points on each support."""
    if x.n != y.n:
        return EquivalenceReport(False, [f"N={x.n}"], [f"N={y.n}"], math.inf, {}, samples)
    xs, ys = x.block_sets(), y.block_sets()
    only_x = sorted(describe(b) for b in xs - ys)
    only_y = sorted(describe(b) for b in ys - xs)
    rng = np.random.default_rng(seed)
    per_term: dict[str, float] = {}
    worst = 0.0
    for blocks in sorted(xs & ys, key=lambda b: (len(b), describe(b))):
        tx, ty = x.term(blocks), y.term(blocks)
        dev = 0.0
        for _ in range(samples):
            p, k = sample_support(blocks, x.n, rng, center=center, scale=scale)
            dev = max(dev, relative_deviation(tx(p, k), ty(p, k)))
        per_term[describe(blocks)] = dev
        worst = max(worst, dev)
    match = not only_x and not only_y
    return EquivalenceReport(match, only_x, only_y, worst if match else math.inf, per_term, samples)


def dump_expression(expr: SMatrixExpression, points: int = 3, seed: int = 0, center: float = 0.0,
                    scale: float = 3.0, digits: int = 17) -> str:
    """Structured text: one section per term with density values at sample points.

    ::

        expression route=cluster n=2 terms=3
        term 1 blocks=[p1|k1] [p2|k2] pairings=(1,1);(2,2)
          p=... k=... re=... im=... abs=...
    """
    rng = np.random.default_rng(seed)
    fmt = f"{{:.{digits}g}}"
    lines = [f"expression route={expr.route or 'custom'} n={expr.n} terms={len(expr)}"]
    for i, t in enumerate(expr.terms, 1):
        pairs = ";".join(f"({a + 1},{b + 1})" for a, b in sorted(t.pairings)) or "-"
        lines.append(f"term {i} blocks={describe(t.blocks)} pairings={pairs}")
        for _ in range(points):
            p, k = sample_support(t.blocks, expr.n, rng, center=center, scale=scale)
            v = t(p, k)
            lines.append("  p=" + ",".join(fmt.format(x) for x in p) + " k=" + ",".join(fmt.format(x) for x in k)
                         + f" re={fmt.format(v.real)} im={fmt.format(v.imag)} abs={fmt.format(abs(v))}")
    return "\n".join(lines) + "\n"
