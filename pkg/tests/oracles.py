"""Independent reference computations used by the tests.

Nothing here goes through the eigen-decomposition or the sector-term
tables of the package; Green functions are built from dense matrix
exponentials of the effective Hamiltonian and integrated numerically.
"""

import itertools

import numpy as np
from scipy.linalg import expm


def dense_green(h_eff, a_op, gamma, t_out, t_in):
    """Time-ordered ``(-γ)^N <0|T a(t')..a†(t)..|0>`` by direct matrix products."""
    n = len(t_out)
    ops = [(t, 0) for t in t_out] + [(t, 1) for t in t_in]
    ops.sort(key=lambda x: (-x[0], x[1]))
    adag = a_op.conj().T
    vec = np.zeros(h_eff.shape[0], dtype=complex)
    vec[0] = 1.0
    prev = None
    for t, kind in reversed(ops):
        if prev is not None:
            vec = expm(-1j * h_eff * (t - prev)) @ vec
        vec = (adag if kind else a_op) @ vec
        prev = t
    return (-gamma) ** n * vec[0]


def _ordered_regions(n):
    """All orderings of the 2n external times (labels ('p', i) / ('k', j)), latest first."""
    labels = [("p", i) for i in range(n)] + [("k", j) for j in range(n)]
    return itertools.permutations(labels)


def two_photon_connected_by_quadrature(h_eff, a_op, gamma, p, k, nodes=40):
    """Connected two-photon density from the time-domain connected Green function.

    Every ordering of the four times is parametrized by three nonnegative
    gaps; the latest time sits at 0.  The integrand ``e^{iΦ} G^C`` is a sum of
    decaying exponentials in the gaps, integrated with Gauss-Laguerre
    quadrature scaled to the slowest decay rate ``γ/2``.
    """
    x, w = np.polynomial.laguerre.laggauss(nodes)
    c = 0.5 * gamma
    u = x / c
    wu = w * np.exp(x) / c
    adag = a_op.conj().T
    dim = h_eff.shape[0]
    props = np.array([expm(-1j * h_eff * ui) for ui in u])  # (nodes, dim, dim)
    ket = np.zeros(dim, dtype=complex)
    ket[0] = 1.0
    # single-photon Green function of a positive time difference, vectorized
    # through numpy's eigen-decomposition of the (small) effective Hamiltonian
    lam, vec = np.linalg.eig(h_eff)
    left = (a_op @ vec)[0, :]
    right = (np.linalg.inv(vec) @ adag)[:, 0]

    def g1(dt):
        vals = np.einsum("m,...m->...", left * right, np.exp(-1j * np.multiply.outer(np.maximum(dt, 0), lam)))
        return np.where(dt >= 0, -gamma * vals, 0)

    total = 0j
    for order in _ordered_regions(2):
        kinds = [1 if lab[0] == "k" else 0 for lab in order]
        # Dyck condition read from the right (earliest operator acts first)
        occ, ok = 0, True
        for kind in reversed(kinds):
            occ += 1 if kind else -1
            ok &= occ >= 0
        if not ok:
            continue
        mats = [adag if kind else a_op for kind in kinds]
        # vector after the earliest operator, then propagate through the gaps
        v = mats[3] @ ket  # (dim,)
        v = np.einsum("aij,j->ai", props, v)  # gap u3
        v = np.einsum("ij,aj->ai", mats[2], v)
        v = np.einsum("bij,aj->bai", props, v)  # gap u2 -> index b
        v = np.einsum("ij,baj->bai", mats[1], v)
        v = np.einsum("cij,baj->cbai", props, v)  # gap u1 -> index c
        v = np.einsum("ij,cbaj->cbai", mats[0], v)
        full = gamma ** 2 * v[..., 0]  # (u1, u2, u3) indices c, b, a
        u1, u2, u3 = np.meshgrid(u, u, u, indexing="ij")
        times = [np.zeros_like(u1), -u1, -u1 - u2, -u1 - u2 - u3]
        t = {lab: times[pos] for pos, lab in enumerate(order)}
        disc = (g1(t[("p", 0)] - t[("k", 0)]) * g1(t[("p", 1)] - t[("k", 1)])
                + g1(t[("p", 0)] - t[("k", 1)]) * g1(t[("p", 1)] - t[("k", 0)]))
        phase = np.exp(1j * (p[0] * t[("p", 0)] + p[1] * t[("p", 1)] - k[0] * t[("k", 0)] - k[1] * t[("k", 1)]))
        weight = wu[:, None, None] * wu[None, :, None] * wu[None, None, :]
        total += np.sum(weight * phase * (full - disc))
    return total / (2 * np.pi)
