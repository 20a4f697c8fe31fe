"""δ-supported distribution terms.

An N-photon S matrix (or Green function) is a finite sum of terms of the
form ``prod_b δ(Σ_{i in b.out} p_i - Σ_{j in b.in} k_j) * density(p, k)``.
The blocks of a term partition both the output and the input indices;
size-one blocks are the pairings ``δ(p_i - k_j)``.  Indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

Density = Callable[[np.ndarray, np.ndarray], complex]


@dataclass(frozen=True, order=True)
class Block:
    outputs: tuple[int, ...]
    inputs: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.outputs) != len(self.inputs) or not self.outputs:
            raise ValueError(f"block needs equal, nonzero leg counts: {self}")
        object.__setattr__(self, "outputs", tuple(sorted(self.outputs)))
        object.__setattr__(self, "inputs", tuple(sorted(self.inputs)))

    @property
    def size(self) -> int:
        return len(self.outputs)

    def __str__(self) -> str:
        outs = ",".join(f"p{i + 1}" for i in self.outputs)
        ins = ",".join(f"k{j + 1}" for j in self.inputs)
        return f"[{outs}|{ins}]"


BlockSet = frozenset  # frozenset[Block]


def validate_blocks(blocks: Iterable[Block], n: int) -> frozenset:
    blocks = frozenset(blocks)
    outs = sorted(i for b in blocks for i in b.outputs)
    ins = sorted(j for b in blocks for j in b.inputs)
    if outs != list(range(n)) or ins != list(range(n)):
        raise ValueError(f"blocks {sorted(blocks)} do not partition {n} legs")
    return blocks


def describe(blocks: frozenset) -> str:
    return " ".join(str(b) for b in sorted(blocks, key=lambda b: (b.size, b.outputs, b.inputs)))


@dataclass(frozen=True)
class DistributionTerm:
    """One δ-support pattern with its density.

    ``density(p, k)`` is only meaningful on the support, i.e. at points where
    every block conserves frequency.  Total conservation is implied by the
    blocks, so ``conserves_total`` is always true.
    """

    blocks: frozenset
    density: Density

    @property
    def n_photons(self) -> int:
        return sum(b.size for b in self.blocks)

    @property
    def pairings(self) -> frozenset:
        return frozenset((b.outputs[0], b.inputs[0]) for b in self.blocks if b.size == 1)

    @property
    def conserves_total(self) -> bool:
        return True

    @property
    def block_sizes(self) -> tuple[int, ...]:
        return tuple(sorted(b.size for b in self.blocks))

    @property
    def connected(self) -> bool:
        return len(self.blocks) == 1

    def __call__(self, p, k) -> complex:
        return self.density(np.asarray(p, dtype=float), np.asarray(k, dtype=float))

    def __str__(self) -> str:
        return describe(self.blocks)


def sum_densities(densities: list[Density]) -> Density:
    if len(densities) == 1:
        return densities[0]

    def total(p, k):
        return sum(d(p, k) for d in densities)

    return total


def sample_support(blocks: frozenset, n: int, rng: np.random.Generator, center: float = 0.0,
                   scale: float = 3.0, avoid: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Random point on the support of ``blocks``.

    Frequencies are uniform in ``center ± scale``; the last input of every
    block is fixed by conservation.  Points where any output/input
    difference or within-block partial sum falls below ``avoid`` are redrawn
    so that principal-value factors stay away from their poles.
    """
    for _ in range(1000):
        p = np.empty(n)
        k = np.empty(n)
        for b in sorted(blocks):
            ps = rng.uniform(center - scale, center + scale, size=b.size)
            ks = rng.uniform(center - scale, center + scale, size=b.size)
            ks[-1] = ps.sum() - ks[:-1].sum()
            p[list(b.outputs)] = ps
            k[list(b.inputs)] = ks
        if _generic(p, k, blocks, avoid):
            return p, k
    raise RuntimeError("could not draw a generic support point")


def _generic(p: np.ndarray, k: np.ndarray, blocks: frozenset, avoid: float) -> bool:
    from itertools import combinations

    for b in blocks:
        if b.size == 1:
            continue
        ps, ks = p[list(b.outputs)], k[list(b.inputs)]
        for m in range(1, b.size):
            for bo in combinations(range(b.size), m):
                for bi in combinations(range(b.size), m):
                    if abs(ps[list(bo)].sum() - ks[list(bi)].sum()) < avoid:
                        return False
    return True
