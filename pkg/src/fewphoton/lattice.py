"""Wave-packet scattering on a discretized waveguide.

The waveguide is a tight-binding chain with spacing ``h`` and hopping
``J = 1/(2h)``, so that near the band center the dispersion is linear with
unit group velocity.  The chain is semi-infinite: site 0 carries the local
system, the first bond is ``√2·J`` and all others are ``J``.  This is the
even-parity sector of an infinite chain with the system side-coupled at
its center; in that sector the coupling is purely absorptive,
``Σ(E) = -i g² / sqrt(4J² - (E - ω0)²)``, so ``g² = γ J`` gives decay rate
``γ`` at the band center without a Lamb shift.

An incoming packet travels toward site 0, scatters, and the outgoing part
is projected onto outgoing plane waves ``e^{iqn}`` on the sites beyond
``extraction_start``.  Two-photon states are stored as an unsymmetrized
``n × n`` amplitude (kept symmetric by the dynamics) plus one-photon ×
one-excitation and two-excitation local parts.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import least_squares
from scipy.sparse.linalg import expm_multiply

from .engine import FrequencyConfig, connected_density, connected_density_batch
from .system import CapacityError, LocalSystem, SystemError_

DEFAULT_MAX_BASIS = 200_000
BOUNDARY_TOL = 1e-8
CLEARANCE_TOL = 1e-3


class LatticeError(RuntimeError):
    pass


class ReflectionContaminationError(LatticeError):
    pass


class MemoryBudgetError(CapacityError):
    pass


def excitation_grades(sys: LocalSystem, max_grade: int, tol: float = 1e-12) -> list[list[int]]:
    """Basis indices of the local system grouped by excitation number.

    Grade ``j`` is the smallest set of basis states containing the support
    of ``a†`` applied to grade ``j-1`` and closed under ``H_sys``.  Raises
    if the grades overlap, i.e. if the system does not conserve excitation
    number in this basis, or if grade 1 is empty.
    """
    adag = np.abs(sys.a_op.conj().T) > tol
    hs = np.abs(sys.h_sys) > tol
    grades = [[sys.ground]]
    for _ in range(max_grade):
        seed = set(np.nonzero(adag[:, grades[-1]].any(axis=1))[0].tolist())
        frontier = list(seed)
        while frontier:
            i = frontier.pop()
            for j in np.nonzero(hs[:, i])[0].tolist():
                if j not in seed:
                    seed.add(j)
                    frontier.append(j)
        grades.append(sorted(seed))
    flat = [i for g in grades for i in g]
    if len(flat) != len(set(flat)):
        raise SystemError_("local system mixes excitation numbers; lattice runs need a number-conserving system")
    if not grades[1]:
        raise SystemError_("local system has no single-excitation states")
    # empty higher grades are fine: a two-level emitter cannot hold two photons
    return grades


@dataclass(frozen=True)
class LatticeModel:
    """Chain of ``n_sites`` sites of spacing ``length / n_sites`` with the system on site 0."""

    n_sites: int
    length: float
    sys: LocalSystem
    band_center: float = 0.0
    n_excitations: int = 1
    max_basis: int = DEFAULT_MAX_BASIS

    def __post_init__(self) -> None:
        if self.n_sites < 10:
            raise ValueError(f"need at least 10 sites, got {self.n_sites}")
        if not self.length > 0:
            raise ValueError("chain length must be positive")
        if self.n_excitations not in (1, 2):
            raise ValueError("n_excitations must be 1 or 2")

    @property
    def spacing(self) -> float:
        return self.length / self.n_sites

    @property
    def hopping(self) -> float:
        return 0.5 / self.spacing

    @property
    def site_coupling(self) -> float:
        return math.sqrt(self.sys.gamma * self.hopping)

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self.n_sites) * self.spacing

    def grades(self) -> list[list[int]]:
        return excitation_grades(self.sys, self.n_excitations)

    def basis_size(self) -> int:
        g = self.grades()
        n = self.n_sites
        if self.n_excitations == 1:
            return n + len(g[1])
        return n * n + n * len(g[1]) + len(g[2])

    def check_budget(self) -> None:
        size = self.basis_size()
        if size > self.max_basis:
            raise MemoryBudgetError(
                f"basis of {size} states exceeds the memory budget of {self.max_basis} "
                f"(two-photon runs fit up to about {int(math.sqrt(self.max_basis))} sites)"
            )

    def chain_hamiltonian(self) -> sp.csr_matrix:
        n, J = self.n_sites, self.hopping
        off = np.full(n - 1, -J)
        off[0] = -math.sqrt(2.0) * J
        diag = np.full(n, self.band_center)
        return sp.diags([off, diag, off], [-1, 0, 1], format="csr", dtype=complex)

    def energy(self, q) -> np.ndarray:
        return self.band_center - 2.0 * self.hopping * np.cos(q)

    def momentum(self, energy) -> np.ndarray:
        x = (self.band_center - np.asarray(energy, dtype=float)) / (2.0 * self.hopping)
        if np.any(np.abs(x) >= 1):
            raise ValueError("energy outside the lattice band")
        return np.arccos(x)

    def group_velocity(self, q) -> np.ndarray:
        return 2.0 * self.hopping * np.sin(q) * self.spacing

    def hamiltonian(self) -> sp.csr_matrix:
        """Hermitian Hamiltonian of the ``n_excitations`` sector."""
        self.check_budget()
        grades = self.grades()
        hc = self.chain_hamiltonian()
        hs = self.sys.h_sys
        adag = self.sys.a_op.conj().T
        g = self.site_coupling
        n = self.n_sites
        g0, g1 = grades[0], grades[1]
        h1 = sp.csr_matrix(hs[np.ix_(g1, g1)])
        if self.n_excitations == 1:
            # basis: chain sites, then grade-1 local states
            up = sp.csr_matrix((g * adag[g1, g0[0]].reshape(-1, 1)) @ _unit_row(n, 0))
            return sp.bmat([[hc, up.conj().T], [up, h1]], format="csr")
        g2 = grades[2]
        n1, n2 = len(g1), len(g2)
        eye = sp.identity(n, format="csr", dtype=complex)
        hpsi = sp.kron(hc, eye) + sp.kron(eye, hc)
        hchi = sp.kron(hc, sp.identity(n1, dtype=complex)) + sp.kron(eye, h1)
        hzeta = sp.csr_matrix(hs[np.ix_(g2, g2)])
        # psi -> chi: chi(m, l) += g <l|a†|0> (psi(0, m) + psi(m, 0)) / √2
        a01 = adag[g1, g0[0]]
        rows, cols, vals = [], [], []
        for m in range(n):
            for li, amp in enumerate(a01):
                if amp == 0:
                    continue
                for src in {0 * n + m, m * n + 0}:
                    rows.append(m * n1 + li)
                    cols.append(src)
                    vals.append(g * amp / math.sqrt(2.0) * (2.0 if m == 0 else 1.0))
        c_chi_psi = sp.csr_matrix((vals, (rows, cols)), shape=(n * n1, n * n))
        # chi -> zeta: zeta(k) += g <k|a†|l> chi(0, l)
        a12 = adag[np.ix_(g2, g1)]
        c_zeta_chi = sp.lil_matrix((n2, n * n1), dtype=complex)
        c_zeta_chi[:, 0:n1] = g * a12
        c_zeta_chi = c_zeta_chi.tocsr()
        return sp.bmat([
            [hpsi, c_chi_psi.conj().T, None],
            [c_chi_psi, hchi, c_zeta_chi.conj().T],
            [None, c_zeta_chi, hzeta],
        ], format="csr")


def _unit_row(n: int, i: int) -> sp.csr_matrix:
    return sp.csr_matrix(([1.0], ([0], [i])), shape=(1, n))


@dataclass(frozen=True)
class Packet:
    """Gaussian packet ``exp(-(x - position)²/(2 width²))`` heading toward the system."""

    center: float
    width: float
    position: float

    def amplitudes(self, model: LatticeModel) -> np.ndarray:
        q0 = float(model.momentum(self.center))
        n = np.arange(model.n_sites)
        env = np.exp(-0.5 * ((model.positions - self.position) / self.width) ** 2)
        psi = env * np.exp(-1j * q0 * n)
        return psi / np.linalg.norm(psi)


@dataclass
class WavepacketRun:
    """Configuration of one lattice run and, after running, its outputs."""

    packets: tuple[Packet, ...]
    time: float
    extraction_start: float = 2.0
    steps: int = 8
    window: float = 3.0
    points: int = 121
    linearity_tol: float = 0.01
    energies: np.ndarray | None = None
    amplitudes: np.ndarray | None = None
    norm_drift: float | None = None

    def __post_init__(self) -> None:
        self.packets = tuple(p if isinstance(p, Packet) else Packet(**p) for p in self.packets)
        if not self.packets:
            raise ValueError("need at least one packet")
        if not self.time > 0 or self.steps < 1 or self.points < 2:
            raise ValueError("time must be positive, steps and points at least 1 and 2")

    def to_dict(self) -> dict:
        out = {
            "packets": [asdict(p) for p in self.packets],
            "time": self.time,
            "extraction_start": self.extraction_start,
            "steps": self.steps,
            "window": self.window,
            "points": self.points,
            "linearity_tol": self.linearity_tol,
            "norm_drift": self.norm_drift,
        }
        if self.energies is not None:
            out["energies"] = np.asarray(self.energies).tolist()
            amp = np.asarray(self.amplitudes)
            out["amplitudes"] = np.stack([amp.real, amp.imag], axis=-1).tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "WavepacketRun":
        data = dict(data)
        energies = data.pop("energies", None)
        amps = data.pop("amplitudes", None)
        run = cls(**data)
        if energies is not None:
            run.energies = np.asarray(energies, dtype=float)
            a = np.asarray(amps, dtype=float)
            run.amplitudes = a[..., 0] + 1j * a[..., 1]
        return run

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "WavepacketRun":
        return cls.from_dict(json.loads(text))


def check_linear(model: LatticeModel, packet: Packet, tol: float) -> None:
    spread = 1.0 / packet.width
    q = model.momentum([packet.center - spread, packet.center + spread])
    dev = np.max(np.abs(model.group_velocity(q) - 1.0))
    if dev > tol:
        raise ValueError(
            f"packet spectrum leaves the linear part of the band: group velocity off by {dev:.3g} "
            f"(allowed {tol:.3g}); refine the chain or widen the packet"
        )


def _evolve(h: sp.csr_matrix, psi: np.ndarray, time: float, steps: int, check) -> tuple[np.ndarray, float]:
    norm0 = np.linalg.norm(psi)
    dt = time / steps
    for _ in range(steps):
        psi = expm_multiply(-1j * dt * h, psi)
        check(psi)
    return psi, abs(np.linalg.norm(psi) - norm0)


def _edge_sites(model: LatticeModel) -> int:
    return max(5, model.n_sites // 20)


def _extraction(model: LatticeModel, run: WavepacketRun) -> np.ndarray:
    return model.positions > run.extraction_start


def _transform(model: LatticeModel, energies: np.ndarray, sites: np.ndarray, outgoing: bool) -> np.ndarray:
    """Rows: energies; columns: sites.  Energy-normalized plane-wave projection."""
    q = model.momentum(energies)
    sign = -1.0 if outgoing else 1.0
    weight = 1.0 / np.sqrt(2.0 * np.pi * 2.0 * model.hopping * np.sin(q))
    return weight[:, None] * np.exp(sign * 1j * np.outer(q, sites))


@dataclass
class SinglePhotonResult:
    run: WavepacketRun
    energies: np.ndarray
    ratio: np.ndarray
    predicted: np.ndarray
    norm_drift: float
    residual: float

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.ratio - self.predicted)))

    def table(self) -> list[tuple[float, float, float, float]]:
        return [(float(e), float(r.real), float(r.imag), float(abs(r))) for e, r in zip(self.energies, self.ratio)]


def run_single_photon(model: LatticeModel, run: WavepacketRun) -> SinglePhotonResult:
    """Scatter one packet and return the output/input amplitude ratio per energy.

    The ratio is compared with the single-photon S matrix ``1 + s_k`` of
    the same local system, evaluated at the lattice energy of each
    outgoing plane wave.
    """
    if model.n_excitations != 1:
        raise ValueError("single-photon runs need n_excitations = 1")
    (packet,) = run.packets
    check_linear(model, packet, run.linearity_tol)
    h = model.hamiltonian()
    n = model.n_sites
    psi0 = np.zeros(h.shape[0], dtype=complex)
    psi0[:n] = packet.amplitudes(model)
    edge = _edge_sites(model)

    def check(psi):
        leak = float(np.sum(np.abs(psi[n - edge:n]) ** 2))
        if leak > BOUNDARY_TOL:
            raise ReflectionContaminationError(
                f"packet reached the chain end (probability {leak:.3g} in the last {edge} sites); "
                "use a longer chain or a shorter evolution time"
            )

    check(psi0)
    psi, drift = _evolve(h, psi0, run.time, run.steps, check)
    mask = _extraction(model, run)
    residual = 1.0 - float(np.sum(np.abs(psi[:n][mask]) ** 2))
    if residual > CLEARANCE_TOL:
        raise LatticeError(f"packet has not cleared the coupling region (probability {residual:.3g} left)")
    energies = packet.center + np.linspace(-run.window, run.window, run.points) * model.sys.gamma
    sites = np.arange(n)
    a_in = _transform(model, energies, sites, outgoing=False) @ psi0[:n]
    a_out = _transform(model, energies, sites[mask], outgoing=True) @ psi[:n][mask]
    ratio = a_out / (np.exp(-1j * energies * run.time) * a_in)
    predicted = np.array([1.0 + connected_density(model.sys, FrequencyConfig((e,), (e,))) for e in energies])
    run.energies, run.amplitudes, run.norm_drift = energies, ratio, drift
    return SinglePhotonResult(run, energies, ratio, predicted, drift, residual)


def fit_linewidth(energies: np.ndarray, ratio: np.ndarray, gamma0: float, omega0: float) -> tuple[float, float]:
    """Least-squares fit of ``(E - ω - iγ/2)/(E - ω + iγ/2)`` to a measured ratio; returns ``(γ, ω)``."""

    def resid(x):
        g, w = x
        model = (energies - w - 0.5j * g) / (energies - w + 0.5j * g)
        d = model - ratio
        return np.concatenate([d.real, d.imag])

    sol = least_squares(resid, x0=[gamma0, omega0], x_scale=[gamma0, gamma0])
    return float(sol.x[0]), float(sol.x[1])


@dataclass
class TwoPhotonResult:
    run: WavepacketRun
    energies: np.ndarray
    output: np.ndarray
    correlated: np.ndarray
    predicted: np.ndarray | None
    correlated_norm: float
    norm_drift: float
    residual: float
    symmetry_error: float
    local_population: float

    @property
    def relative_l2(self) -> float:
        if self.predicted is None:
            return math.nan
        return float(np.linalg.norm(self.correlated - self.predicted) / np.linalg.norm(self.predicted))


def _single_output(model: LatticeModel, run: WavepacketRun, packet: Packet) -> np.ndarray:
    single = LatticeModel(model.n_sites, model.length, model.sys, model.band_center, 1, model.max_basis)
    h = single.hamiltonian()
    psi = np.zeros(h.shape[0], dtype=complex)
    psi[:model.n_sites] = packet.amplitudes(model)
    psi, _ = _evolve(h, psi, run.time, run.steps, lambda _: None)
    return psi[:model.n_sites]


def run_two_photon(model: LatticeModel, run: WavepacketRun, predict: bool = True) -> TwoPhotonResult:
    """Scatter a two-photon product packet and isolate the correlated output.

    The correlated part is the two-photon output minus the product of the
    single-photon outputs of each packet.  Its energy representation is
    compared with ``(1/2) ∫ dk1 S^C(E1, E2; k1, E1+E2-k1) φ(k1) φ(E1+E2-k1)``
    times the free phase, with ``S^C`` from the engine.
    """
    if model.n_excitations != 2:
        raise ValueError("two-photon runs need n_excitations = 2")
    if len(run.packets) == 1:
        run.packets = run.packets * 2
    pa, pb = run.packets
    for pk in run.packets:
        check_linear(model, pk, run.linearity_tol)
    model.check_budget()
    n = model.n_sites
    h = model.hamiltonian()
    fa, fb = pa.amplitudes(model), pb.amplitudes(model)
    psi2 = (np.outer(fa, fb) + np.outer(fb, fa))
    psi2 /= np.linalg.norm(psi2)
    psi0 = np.zeros(h.shape[0], dtype=complex)
    psi0[:n * n] = psi2.ravel()
    edge = _edge_sites(model)

    def check(psi):
        amp = psi[:n * n].reshape(n, n)
        leak = float(np.sum(np.abs(amp[n - edge:, :]) ** 2))
        if leak > BOUNDARY_TOL:
            raise ReflectionContaminationError(
                f"two-photon packet reached the chain end (probability {leak:.3g}); "
                "use a longer chain or a shorter evolution time"
            )

    check(psi0)
    psi, drift = _evolve(h, psi0, run.time, run.steps, check)
    out = psi[:n * n].reshape(n, n)
    # the basis holds exactly two excitations, so local levels above grade 2
    # cannot be populated; what remains in the local system is reported
    local = float(np.sum(np.abs(psi[n * n:]) ** 2))
    sym_err = float(np.max(np.abs(out - out.T)))
    mask = _extraction(model, run)
    residual = 1.0 - float(np.sum(np.abs(out[np.ix_(mask, mask)]) ** 2))
    if residual > CLEARANCE_TOL:
        raise LatticeError(f"packets have not cleared the coupling region (probability {residual:.3g} left)")

    ga, gb = _single_output(model, run, pa), _single_output(model, run, pb)
    prod = np.outer(ga, gb) + np.outer(gb, ga)
    prod /= np.linalg.norm(np.outer(fa, fb) + np.outer(fb, fa))
    corr_pos = out - prod
    corr_norm = float(np.linalg.norm(corr_pos) / np.linalg.norm(out))

    center = 0.5 * (pa.center + pb.center)
    spread = run.window / min(pa.width, pb.width)
    energies = center + np.linspace(-spread, spread, run.points)
    t_out = _transform(model, energies, np.arange(n)[mask], outgoing=True)
    sub = np.ix_(mask, mask)
    output = t_out @ out[sub] @ t_out.T
    correlated = t_out @ corr_pos[sub] @ t_out.T

    predicted = None
    if predict:
        predicted = _predict_correlated(model, run, energies, fa, fb, psi2)
    run.energies, run.amplitudes, run.norm_drift = energies, correlated, drift
    return TwoPhotonResult(run, energies, output, correlated, predicted, corr_norm, drift, residual,
                           sym_err, local)


def _predict_correlated(model: LatticeModel, run: WavepacketRun, energies: np.ndarray,
                        fa: np.ndarray, fb: np.ndarray, psi2: np.ndarray, nk: int = 241) -> np.ndarray:
    pa, pb = run.packets
    spread = 2.0 * run.window / min(pa.width, pb.width)
    lo = min(pa.center, pb.center) - spread
    hi = max(pa.center, pb.center) + spread
    sites = np.arange(model.n_sites)
    scale = np.linalg.norm(np.outer(fa, fb) + np.outer(fb, fa))

    def amp_in(e):
        t = _transform(model, np.atleast_1d(e), sites, outgoing=False)
        return t @ fa, t @ fb

    e1, e2 = np.meshgrid(energies, energies, indexing="ij")
    total = (e1 + e2).ravel()
    k1 = np.linspace(lo, hi, nk)
    out = np.zeros(total.size, dtype=complex)
    p = np.stack([e1.ravel(), e2.ravel()], axis=1)
    for j, kk in enumerate(k1):
        k2 = total - kk
        inside = (k2 > lo) & (k2 < hi)
        if not inside.any():
            continue
        a1, b1 = amp_in(kk)
        a2, b2 = amp_in(k2[inside])
        phi = (a1 * b2 + b1 * a2) / scale
        dens = connected_density_batch(model.sys, p[inside], np.stack([np.full(inside.sum(), kk), k2[inside]], axis=1),
                                       warn=False)
        w = (k1[1] - k1[0]) * (0.5 if j in (0, nk - 1) else 1.0)
        out[inside] += 0.5 * w * dens * phi
    out = out.reshape(e1.shape)
    return out * np.exp(-1j * (e1 + e2) * run.time)


def spectrum_csv(energies: np.ndarray, values: np.ndarray, machine: bool = True) -> str:
    fmt = "{:.17g}" if machine else "{:.6g}"
    lines = ["k,re,im,abs"]
    for e, v in zip(energies, values):
        lines.append(",".join(fmt.format(x) for x in (e, v.real, v.imag, abs(v))))
    return "\n".join(lines) + "\n"


def save_run(run: WavepacketRun, path: str | Path) -> None:
    Path(path).write_text(run.dumps() + "\n")
