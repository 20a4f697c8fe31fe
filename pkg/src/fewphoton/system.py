"""Local system in effective-Hamiltonian form.

The local system is a finite matrix model: an effective Hamiltonian
``h_eff = H_sys - i*gamma/2 * a^dag a`` and the coupling operator ``a``.
Everything downstream (Green functions, sector terms, lattice runs) is
built from this object and its biorthogonal eigen-decomposition.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

GROUND_TOL = 1e-12
MAX_ORDERING_PHOTONS = 5


class SystemError_(ValueError):
    """Invalid local-system construction or decomposition."""


class NearDefectiveError(SystemError_):
    """Eigenvector matrix too ill-conditioned to trust."""


class CapacityError(ValueError):
    """Requested photon number exceeds the configured maximum."""


def _freeze(m: np.ndarray) -> np.ndarray:
    m = np.array(m, dtype=complex, copy=True)
    m.setflags(write=False)
    return m


@dataclass(frozen=True, eq=False)
class LocalSystem:
    """Finite-dimensional local system coupled to a one-mode waveguide.

    Attributes
    ----------
    h_eff : (dim, dim) complex array
        Effective Hamiltonian including the waveguide-induced decay.
    a_op : (dim, dim) complex array
        Coupling (lowering) operator.
    gamma : float
        Decay rate into the waveguide.
    ground : int
        Basis index of the vacuum state ``|0>``.
    """

    h_eff: np.ndarray
    a_op: np.ndarray
    gamma: float
    ground: int = 0
    label: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        h = _freeze(self.h_eff)
        a = _freeze(self.a_op)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise SystemError_(f"h_eff must be square, got shape {h.shape}")
        if a.shape != h.shape:
            raise SystemError_(f"a_op shape {a.shape} != h_eff shape {h.shape}")
        if h.shape[0] < 2:
            raise SystemError_("local system needs dim >= 2")
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise SystemError_(f"gamma must be positive, got {self.gamma}")
        if not 0 <= self.ground < h.shape[0]:
            raise SystemError_(f"ground index {self.ground} out of range")
        object.__setattr__(self, "h_eff", h)
        object.__setattr__(self, "a_op", a)
        object.__setattr__(self, "gamma", float(self.gamma))

        vac = np.zeros(self.dim, dtype=complex)
        vac[self.ground] = 1.0
        scale = max(1.0, float(np.abs(a).max()))
        if np.linalg.norm(a @ vac) > GROUND_TOL * scale:
            raise SystemError_("a_op does not annihilate the ground state")
        hscale = max(1.0, float(np.abs(h).max()))
        if np.linalg.norm(h @ vac) > GROUND_TOL * hscale:
            raise SystemError_("ground state is not a zero-energy eigenvector of h_eff")

    @property
    def dim(self) -> int:
        return self.h_eff.shape[0]

    @property
    def h_sys(self) -> np.ndarray:
        """Hermitian system Hamiltonian recovered from ``h_eff``."""
        a = self.a_op
        return self.h_eff + 0.5j * self.gamma * (a.conj().T @ a)

    @property
    def is_bosonic(self) -> bool:
        """True when ``[a, a^dag] = 1`` on every level below the truncation edge."""
        a = self.a_op
        comm = a @ a.conj().T - a.conj().T @ a
        top = self.dim - 1
        keep = [i for i in range(self.dim) if i != top]
        block = comm[np.ix_(keep, keep)]
        return bool(np.allclose(block, np.eye(len(keep)), atol=1e-10))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LocalSystem):
            return NotImplemented
        return (
            self.gamma == other.gamma
            and self.ground == other.ground
            and np.array_equal(self.h_eff, other.h_eff)
            and np.array_equal(self.a_op, other.a_op)
        )

    def __hash__(self) -> int:
        return hash((self.gamma, self.ground, self.h_eff.tobytes(), self.a_op.tobytes()))

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "gamma": self.gamma,
            "ground": self.ground,
            "h_eff": _matrix_to_pairs(self.h_eff),
            "a_op": _matrix_to_pairs(self.a_op),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LocalSystem":
        dim = int(data["dim"])
        h = _pairs_to_matrix(data["h_eff"], dim)
        a = _pairs_to_matrix(data["a_op"], dim)
        return cls(h, a, float(data["gamma"]), int(data.get("ground", 0)))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def loads(cls, text: str) -> "LocalSystem":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "LocalSystem":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _matrix_to_pairs(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def _pairs_to_matrix(rows: Sequence, dim: int) -> np.ndarray:
    m = np.array(rows, dtype=float)
    if m.shape != (dim, dim, 2):
        raise SystemError_(f"matrix payload has shape {m.shape}, expected {(dim, dim, 2)}")
    return m[..., 0] + 1j * m[..., 1]


def lowering(dim: int) -> np.ndarray:
    """Truncated bosonic annihilation operator, ``<n-1|a|n> = sqrt(n)``."""
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)


def build_kerr(omega_c: float, chi: float, gamma: float = 1.0, dim: int = 4) -> LocalSystem:
    """Kerr cavity ``H_eff = alpha n + chi/2 n(n-1)`` with ``alpha = omega_c - i gamma/2``."""
    if dim < 2:
        raise SystemError_(f"dim must be >= 2, got {dim}")
    if not gamma > 0:
        raise SystemError_(f"gamma must be positive, got {gamma}")
    alpha = omega_c - 0.5j * gamma
    n = np.arange(dim, dtype=float)
    h = np.diag(alpha * n + 0.5 * chi * n * (n - 1))
    return LocalSystem(h, lowering(dim), gamma, label=f"kerr(wc={omega_c},chi={chi},gamma={gamma})")


def build_two_level(omega_a: float, gamma: float = 1.0) -> LocalSystem:
    """Two-level emitter with ``a = sigma_minus``."""
    h = np.diag([0.0, omega_a - 0.5j * gamma])
    a = np.array([[0, 1], [0, 0]], dtype=complex)
    return LocalSystem(h, a, gamma, label=f"two-level(wa={omega_a},gamma={gamma})")


@dataclass(frozen=True, eq=False)
class EigenData:
    """Biorthogonal eigen-decomposition of ``h_eff``.

    ``right[:, j]`` is the right eigenvector of ``energies[j]`` and
    ``left[:, j]`` the matching left eigenvector, normalized so that
    ``left^dag @ right = I``.  Operator matrices are expressed in this
    eigenbasis, ``a_elements[m, n] = <L_m| a |R_n>``.
    """

    system: LocalSystem
    energies: np.ndarray
    right: np.ndarray
    left: np.ndarray
    a_elements: np.ndarray
    adag_elements: np.ndarray
    ground: int
    bra: np.ndarray
    ket: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.energies)

    @property
    def gamma(self) -> float:
        return self.system.gamma

    def element(self, create: bool) -> np.ndarray:
        return self.adag_elements if create else self.a_elements


def eigen_decompose(sys: LocalSystem, cond_limit: float = 1e12) -> EigenData:
    """Diagonalize ``sys.h_eff``.

    Diagonal input keeps its basis and order; otherwise eigenvalues are
    sorted by (Re, Im) ascending.
    """
    h = sys.h_eff
    if np.count_nonzero(h - np.diag(np.diag(h))) == 0:
        # diagonal input: keep the basis exactly
        energies = np.diag(h).copy()
        right = np.eye(sys.dim, dtype=complex)
    else:
        energies, right = np.linalg.eig(h)
        order = sorted(range(sys.dim), key=lambda j: (round(energies[j].real, 14), energies[j].imag, j))
        energies = energies[order]
        right = right[:, order]

    cond = np.linalg.cond(right)
    if not np.isfinite(cond) or cond > cond_limit:
        raise NearDefectiveError(f"near-defective system: eigenvector condition number {cond:.3g}")
    rinv = np.linalg.inv(right)
    left = rinv.conj().T

    a = sys.a_op
    a_el = rinv @ a @ right
    ad_el = rinv @ a.conj().T @ right

    vac = np.zeros(sys.dim, dtype=complex)
    vac[sys.ground] = 1.0
    ket = rinv @ vac
    bra = vac.conj() @ right
    g = int(np.argmin(np.abs(energies)))
    if abs(energies[g]) > GROUND_TOL * max(1.0, sys.gamma):
        raise SystemError_(f"no zero-energy ground state (closest {energies[g]})")
    # the vacuum must be a pure eigenstate in both bra and ket form
    others = np.arange(sys.dim) != g
    if np.abs(ket[others]).max(initial=0.0) > 1e-10 or np.abs(bra[others]).max(initial=0.0) > 1e-10:
        raise SystemError_("vacuum is not an isolated eigenstate of h_eff")

    return EigenData(
        system=sys,
        energies=energies,
        right=right,
        left=left,
        a_elements=_clean(a_el),
        adag_elements=_clean(ad_el),
        ground=g,
        bra=bra,
        ket=ket,
    )


def _clean(m: np.ndarray, tol: float = 1e-13) -> np.ndarray:
    scale = max(1.0, float(np.abs(m).max()))
    out = m.copy()
    out[np.abs(out) < tol * scale] = 0.0
    return out


def propagator_element(eig: EigenData, m: int, n: int, t: float) -> complex:
    """Return ``<m| exp(-i h_eff t) |n>`` in the input basis, for ``t >= 0``."""
    if t < 0:
        raise ValueError(f"propagator needs t >= 0, got {t}")
    phases = np.exp(-1j * eig.energies * t)
    return complex(np.sum(eig.right[m, :] * phases * eig.left[n, :].conj()))


def propagator(eig: EigenData, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError(f"propagator needs t >= 0, got {t}")
    return (eig.right * np.exp(-1j * eig.energies * t)) @ eig.left.conj().T


# -- orderings -------------------------------------------------------------


class Op(IntEnum):
    ANNIHILATE = 0
    CREATE = 1

    def __repr__(self) -> str:
        return "A" if self is Op.ANNIHILATE else "C"


@dataclass(frozen=True)
class OrderingClass:
    """Time-ordering pattern of N annihilation and N creation operators.

    ``pattern[0]`` is the latest operator (adjacent to the bra).
    """

    pattern: tuple[Op, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "pattern", tuple(Op(x) for x in self.pattern))
        if not is_dyck(self.pattern):
            raise ValueError(f"pattern {self} has vanishing vacuum expectation")

    @property
    def n_photons(self) -> int:
        return len(self.pattern) // 2

    def occupations(self) -> list[int]:
        """Excitation count in each of the ``2N - 1`` gaps between operators."""
        occ, out = 0, []
        for op in reversed(self.pattern[1:]):
            occ += 1 if op is Op.CREATE else -1
            out.append(occ)
        return out[::-1]

    def __str__(self) -> str:
        return "".join("a" if op is Op.ANNIHILATE else "c" for op in self.pattern)

    @classmethod
    def parse(cls, text: str) -> "OrderingClass":
        table = {"a": Op.ANNIHILATE, "A": Op.ANNIHILATE, "c": Op.CREATE, "C": Op.CREATE}
        return cls(tuple(table[ch] for ch in text))


def is_dyck(pattern: Sequence[Op]) -> bool:
    occ = 0
    n_a = 0
    for op in reversed(pattern):
        if op == Op.CREATE:
            occ += 1
        else:
            occ -= 1
            n_a += 1
            if occ < 0:
                return False
    return occ == 0 and 2 * n_a == len(pattern)


def enumerate_orderings(n_photons: int, max_photons: int = MAX_ORDERING_PHOTONS) -> list[OrderingClass]:
    """All Dyck-valid orderings, lexicographic with ANNIHILATE < CREATE."""
    if n_photons < 1:
        raise ValueError(f"n_photons must be positive, got {n_photons}")
    if n_photons > max_photons:
        raise CapacityError(f"n_photons={n_photons} exceeds maximum {max_photons}")
    out: list[OrderingClass] = []

    def grow(prefix: list[Op], n_a: int, n_c: int) -> None:
        if n_a == n_photons and n_c == n_photons:
            out.append(OrderingClass(tuple(prefix)))
            return
        # read left to right: annihilations so far must never be fewer than creations
        if n_a < n_photons:
            grow(prefix + [Op.ANNIHILATE], n_a + 1, n_c)
        if n_c < n_a:
            grow(prefix + [Op.CREATE], n_a, n_c + 1)

    grow([], 0, 0)
    return out


def ladder_chain_amplitude(eig: EigenData, ordering: OrderingClass, times: Sequence[float]) -> complex:
    """Vacuum expectation of the ordered operator string at the given times.

    ``times`` follow the pattern left to right and must be non-increasing;
    equal neighbours are allowed (zero gap).
    """
    times = np.asarray(times, dtype=float)
    pat = ordering.pattern
    if len(times) != len(pat):
        raise ValueError(f"need {len(pat)} times, got {len(times)}")
    gaps = times[:-1] - times[1:]
    if np.any(gaps < 0):
        raise ValueError("times must be descending along the ordering")
    vec = eig.ket.copy()
    vec = eig.element(pat[-1] == Op.CREATE) @ vec
    for op, gap in zip(pat[-2::-1], gaps[::-1]):
        vec = np.exp(-1j * eig.energies * gap) * vec
        vec = eig.element(op == Op.CREATE) @ vec
    return complex(eig.bra @ vec)


def chains(eig: EigenData, ordering: OrderingClass, tol: float = 1e-13) -> Iterable[tuple[tuple[int, ...], complex]]:
    """Eigenstate chains with nonzero matrix elements, with their amplitude.

    Yields ``(states, weight)`` where ``states`` lists the ``2N - 1``
    intermediate eigenstates and ``weight`` the product of matrix elements.
    """
    pat = ordering.pattern
    g = eig.ground
    mats = [eig.element(op == Op.CREATE) for op in pat]
    # backward reachability: which states can reach the ground through the tail
    reach: list[set[int]] = [set() for _ in range(len(pat) + 1)]
    reach[len(pat)] = {g}
    for s in range(len(pat) - 1, -1, -1):
        m = mats[s]
        reach[s] = {i for i in range(eig.dim) for j in reach[s + 1] if abs(m[i, j]) > tol}

    def walk(s: int, state: int, path: tuple[int, ...], weight: complex):
        if s == len(pat):
            if state == g:
                yield path[:-1], weight
            return
        m = mats[s]
        for nxt in sorted(reach[s + 1]):
            el = m[state, nxt]
            if abs(el) > tol:
                yield from walk(s + 1, nxt, path + (nxt,), weight * el)

    if g in reach[0]:
        yield from walk(0, g, (), complex(eig.bra[g] * eig.ket[g]))


def catalan(n: int) -> int:
    from math import comb

    return comb(2 * n, n) // (n + 1)


def brute_force_orderings(n: int) -> list[tuple[Op, ...]]:
    """All C(2n, n) interleavings filtered by the vacuum-expectation condition."""
    out = []
    for pos in itertools.combinations(range(2 * n), n):
        pat = tuple(Op.ANNIHILATE if i in pos else Op.CREATE for i in range(2 * n))
        if is_dyck(pat):
            out.append(pat)
    return out
