"""Pure-numpy implementations of the resolvent-sum kernels.

Term tables use the layout produced by :mod:`fewphoton.engine`:

* ``coeffs``  (T,) complex prefactors
* ``slots``   (T, 2N) int index into the signed frequency vector
  ``z = (p_1..p_N, -k_1..-k_N)``, latest slot first
* ``energies`` (T, 2N-1) complex intermediate-state energies
"""

import numpy as np


def _flows(slots, z):
    # z: (M, 2N) -> flows (M, T, 2N-1)
    picked = z[:, slots]
    return np.cumsum(picked, axis=2)[:, :, :-1]


def term_values(coeffs, slots, energies, z):
    """Per-term contributions at a single point ``z``."""
    z = np.asarray(z, dtype=float)[None, :]
    flows = _flows(slots, z)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        return coeffs * np.prod(1j / (flows - energies), axis=1)


def resolvent_sum(coeffs, slots, energies, zs, chunk=256):
    """Sum of ``coeff * prod_g i/(flow_g - E_g)`` over terms, for each row of ``zs``."""
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    out = np.empty(len(zs), dtype=complex)
    for start in range(0, len(zs), chunk):
        block = zs[start:start + chunk]
        flows = _flows(slots, block)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[start:start + chunk] = np.sum(coeffs * np.prod(1j / (flows - energies), axis=2), axis=1)
    return out


def min_real_gap(slots, energies, real_mask, zs):
    """Smallest ``|flow - E|`` over gaps whose energy is real, per point."""
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    if not real_mask.any():
        return np.full(len(zs), np.inf)
    flows = _flows(slots, zs)
    dist = np.abs(flows - energies)
    dist = np.where(real_mask[None], dist, np.inf)
    return dist.reshape(len(zs), -1).min(axis=1)
