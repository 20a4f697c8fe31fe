"""Closed-form Kerr-cavity scattering amplitudes for up to three photons.

All functions return densities with the overall ``δ(Σp - Σk)`` stripped.
Sums over output/input permutations run in lexicographic order and every
(P, Q) pair is evaluated on its own, so the three-photon breakdown keeps
one entry per sector type.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .engine import NEAR_SINGULAR, AVERAGING_EPS, ONSHELL_TOL, NearSingularWarning, OffShellError, averaging_direction


@dataclass(frozen=True)
class KerrParams:
    omega_c: float
    chi: float
    gamma: float = 1.0

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def alpha(self) -> complex:
        return complex(self.omega_c, -0.5 * self.gamma)


def s(params: KerrParams, k):
    """``s_k = -iγ / (k - α)``, defined for any real argument."""
    return -1j * params.gamma / (np.asarray(k) - params.alpha)


def single_photon_s(params: KerrParams, k):
    """Full single-photon transmission ``1 + s_k``; unit modulus on the real axis."""
    return 1.0 + s(params, k)


def _check_shell(p, k, gamma: float) -> None:
    tol = ONSHELL_TOL * max(1.0, gamma)
    mismatch = math.fsum(p) - math.fsum(k)
    if abs(mismatch) > tol:
        raise OffShellError(f"energy conservation violated: sum(p) - sum(k) = {mismatch:.6g}")


def connected_two_photon(params: KerrParams, p1: float, p2: float, k1: float, k2: float) -> complex:
    _check_shell((p1, p2), (k1, k2), params.gamma)
    chi, g, a = params.chi, params.gamma, params.alpha
    # symmetric factors are formed first so swapping p1, p2 (or k1, k2) is bit-exact
    outs = s(params, p1) * s(params, p2)
    ins = s(params, k1) + s(params, k2)
    return complex(-chi / (math.pi * g) * outs * ins / ((k1 + k2) - 2 * a - chi))


def two_photon_sectors(params: KerrParams, p, k) -> tuple[complex, complex]:
    """The two sector sums ``iM1`` (principal part) and ``iM2`` before simplification."""
    m1 = m2 = 0j
    two = 2 * params.alpha + params.chi
    for q in itertools.permutations(range(2)):
        for pp in itertools.permutations(range(2)):
            ss = s(params, p[q[0]]) * s(params, k[pp[1]])
            m1 += -1j / (2 * math.pi) * ss / (p[q[1]] - k[pp[1]])
            m2 += 1j / math.pi * ss / (k[0] + k[1] - two)
    return complex(m1), complex(m2)


def three_photon_sectors(params: KerrParams, p, k) -> np.ndarray:
    """``[iM1, ..., iM5]`` at a generic on-shell point (principal parts as 1/x)."""
    sf = lambda x: -1j * params.gamma / (x - params.alpha)  # noqa: E731
    a, chi, g = params.alpha, params.chi, params.gamma
    two = 2 * a + chi
    three = 3 * a + 3 * chi
    ksum = k[0] + k[1] + k[2]
    m = np.zeros(5, dtype=complex)
    pi2 = math.pi ** 2
    for q in itertools.permutations(range(3)):
        for pp in itertools.permutations(range(3)):
            pq1, pq2, pq3 = p[q[0]], p[q[1]], p[q[2]]
            kp1, kp2, kp3 = k[pp[0]], k[pp[1]], k[pp[2]]
            sss = sf(pq1) * sf(kp2 + kp3 - pq3) * sf(kp3)
            pv_3 = 1.0 / (pq3 - kp3)
            pv_1 = 1.0 / (pq1 - kp1)
            out_pair = 1.0 / (pq1 + pq2 - two)
            in_pair = 1.0 / (kp2 + kp3 - two)
            m[0] += sss * pv_3 * pv_1 / (4 * pi2)
            m[1] += sss * pv_3 * out_pair / (2 * pi2)
            m[2] += -sss * pv_1 * in_pair / (2 * pi2)
            m[3] += -sss * out_pair * in_pair / pi2
            m[4] += 3j * g / (2 * pi2) * sf(pq1) * sf(kp3) / (ksum - three) * out_pair * in_pair
    return m


def _three_pv_distance(p, k) -> float:
    return min(abs(pi - kj) for pi in p for kj in k)


def connected_three_photon(params: KerrParams, p, k, breakdown: bool = False):
    """Connected three-photon density; with ``breakdown`` also the five sector sums.

    Within ``NEAR_SINGULAR * γ`` of a principal-value pole the total is the
    ``±ε`` average along a fixed on-shell direction and a
    :class:`NearSingularWarning` is issued; the breakdown is then ``None``.
    """
    p = np.asarray(p, dtype=float)
    k = np.asarray(k, dtype=float)
    _check_shell(p, k, params.gamma)
    if _three_pv_distance(p, k) < NEAR_SINGULAR * params.gamma:
        warnings.warn("three-photon point near a principal-value pole; returning ±ε average",
                      NearSingularWarning, stacklevel=2)
        eps = AVERAGING_EPS * params.gamma
        d = averaging_direction(3)
        dp, dk = d[:3], -d[3:]

        def avg(h):
            return 0.5 * (three_photon_sectors(params, p + h * dp, k + h * dk).sum()
                          + three_photon_sectors(params, p - h * dp, k - h * dk).sum())

        total = (4.0 * avg(eps) - avg(2.0 * eps)) / 3.0
        return (complex(total), None) if breakdown else complex(total)
    m = three_photon_sectors(params, p, k)
    return (complex(m.sum()), m) if breakdown else complex(m.sum())


def two_level_three_photon(params: KerrParams, p, k) -> complex:
    """The first sector alone: the connected density of a two-level emitter."""
    p = np.asarray(p, dtype=float)
    k = np.asarray(k, dtype=float)
    _check_shell(p, k, params.gamma)
    return complex(three_photon_sectors(params, p, k)[0])
