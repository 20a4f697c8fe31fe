import numpy as np
import pytest
import scipy.sparse as sp

from fewphoton.lattice import (
    CLEARANCE_TOL,
    LatticeError,
    LatticeModel,
    MemoryBudgetError,
    Packet,
    ReflectionContaminationError,
    WavepacketRun,
    excitation_grades,
    fit_linewidth,
    run_single_photon,
    run_two_photon,
    save_run,
    spectrum_csv,
)
from fewphoton.system import CapacityError, build_kerr, build_two_level


def single_run(n_sites=1000, center=0.0, time=34.0):
    model = LatticeModel(n_sites, 40.0, build_kerr(0.0, 1.0, 1.0, dim=2))
    return model, WavepacketRun((Packet(center, 0.8, 8.0),), time)


def small_two_photon(chi, sys=None):
    sys = sys if sys is not None else build_kerr(0.0, chi, 1.0, dim=3)
    model = LatticeModel(240, 24.0, sys, n_excitations=2)
    return model, WavepacketRun((Packet(0.0, 1.0, 6.0),), 20.0, points=21)


def test_grades_of_kerr():
    assert excitation_grades(build_kerr(0, 1, 1, dim=4), 2) == [[0], [1], [2]]
    assert excitation_grades(build_two_level(0.0), 2)[2] == []


def test_model_geometry():
    model = LatticeModel(400, 20.0, build_kerr(0, 1, 1, dim=2))
    assert model.spacing == 0.05 and model.hopping == 10.0
    assert model.site_coupling == pytest.approx(np.sqrt(10.0))
    q = np.pi / 2
    assert model.energy(q) == pytest.approx(0.0, abs=1e-12)
    assert model.group_velocity(q) == pytest.approx(1.0)
    assert model.momentum(0.0) == pytest.approx(q)
    with pytest.raises(ValueError):
        model.momentum(25.0)


@pytest.mark.parametrize("n_exc", [1, 2])
def test_hamiltonian_is_hermitian(n_exc):
    model = LatticeModel(30, 3.0, build_kerr(0.2, 1.0, 1.0, dim=4), n_excitations=n_exc)
    h = model.hamiltonian()
    assert h.shape == (model.basis_size(),) * 2
    assert sp.linalg.norm(h - h.conj().T) < 1e-12


def test_model_validation():
    sys = build_kerr(0, 1, 1, dim=2)
    with pytest.raises(ValueError):
        LatticeModel(5, 1.0, sys)
    with pytest.raises(ValueError):
        LatticeModel(100, 1.0, sys, n_excitations=3)


def test_budget_error():
    model = LatticeModel(1000, 40.0, build_kerr(0, 1, 1, dim=3), n_excitations=2)
    with pytest.raises(MemoryBudgetError, match="memory budget"):
        model.hamiltonian()
    assert issubclass(MemoryBudgetError, CapacityError)


def test_single_photon_matches_transmission():
    model, run = single_run()
    result = run_single_photon(model, run)
    assert result.max_deviation < 0.01
    assert result.norm_drift < 1e-8
    assert result.residual < CLEARANCE_TOL
    mid = np.argmin(np.abs(result.energies))
    assert abs(result.ratio[mid] + 1) < 0.02


def test_single_photon_convergence_is_monotone():
    devs = [run_single_photon(*single_run(n)).max_deviation for n in (500, 1000, 2000)]
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 0.01


def test_linewidth_fit():
    model, run = single_run(2000)
    result = run_single_photon(model, run)
    gamma, omega = fit_linewidth(result.energies, result.ratio, 0.7, 0.3)
    assert gamma == pytest.approx(1.0, abs=0.01)
    assert omega == pytest.approx(0.0, abs=0.01)


def test_far_detuned_packet_is_nearly_transmitted():
    sys = build_kerr(20.0, 1.0, 1.0, dim=2)
    model = LatticeModel(2000, 40.0, sys, band_center=0.0)
    result = run_single_photon(model, WavepacketRun((Packet(0.0, 0.8, 8.0),), 34.0))
    # the Lorentzian tail at 20γ still bends the phase by up to ~0.06 across ±3γ
    assert np.max(np.abs(result.ratio - 1)) < 0.06
    assert result.max_deviation < 0.01


def test_reflection_contamination():
    model, run = single_run(500, time=60.0)
    with pytest.raises(ReflectionContaminationError, match="chain end"):
        run_single_photon(model, run)


def test_packet_not_cleared():
    # at t = 8 the packet centre sits on the system
    model, run = single_run(500, time=8.0)
    with pytest.raises(LatticeError, match="cleared"):
        run_single_photon(model, run)


def test_packet_outside_linear_band():
    model = LatticeModel(100, 40.0, build_kerr(0, 1, 1, dim=2))
    with pytest.raises(ValueError, match="linear"):
        run_single_photon(model, WavepacketRun((Packet(0.0, 0.8, 8.0),), 34.0))


def test_single_photon_run_needs_one_excitation():
    model, run = small_two_photon(0.0)
    with pytest.raises(ValueError):
        run_single_photon(model, run)


def test_two_photon_linear_has_no_correlation():
    model, run = small_two_photon(0.0)
    result = run_two_photon(model, run, predict=False)
    assert result.correlated_norm < 1e-3
    assert result.norm_drift < 1e-8
    assert result.symmetry_error < 1e-12
    np.testing.assert_allclose(result.output, result.output.T, atol=1e-12)


def test_two_photon_nonlinear_matches_prediction():
    model, run = small_two_photon(1.0)
    result = run_two_photon(model, run)
    assert result.correlated_norm > 1e-2
    assert result.relative_l2 < 0.05
    assert result.local_population < CLEARANCE_TOL


def test_two_photon_two_level_emitter():
    # grade 2 is empty, so the local system can never hold both photons
    model, run = small_two_photon(None, sys=build_two_level(0.0))
    result = run_two_photon(model, run)
    assert result.relative_l2 < 0.05


def test_run_serialization_round_trip(tmp_path):
    model, run = single_run(500)
    run_single_photon(model, run)
    again = WavepacketRun.loads(run.dumps())
    assert again.packets == run.packets and again.time == run.time
    np.testing.assert_array_equal(again.energies, run.energies)
    np.testing.assert_array_equal(again.amplitudes, run.amplitudes)
    path = tmp_path / "run.json"
    save_run(run, path)
    assert WavepacketRun.loads(path.read_text()).norm_drift == run.norm_drift


def test_run_validation():
    with pytest.raises(ValueError):
        WavepacketRun((), 1.0)
    with pytest.raises(ValueError):
        WavepacketRun((Packet(0, 1, 1),), -1.0)


def test_spectrum_csv():
    text = spectrum_csv(np.array([0.0, 0.5]), np.array([1 + 0j, 0.6 - 0.8j]))
    lines = text.splitlines()
    assert lines[0] == "k,re,im,abs"
    assert [float(x) for x in lines[2].split(",")] == [0.5, 0.6, -0.8, 1.0]
    assert spectrum_csv(np.array([1 / 3]), np.array([0j]), machine=False).splitlines()[1].startswith("0.333333,")


@pytest.mark.slow
def test_two_photon_reference_size():
    model = LatticeModel(400, 34.0, build_kerr(0.0, 1.0, 1.0, dim=3), n_excitations=2)
    result = run_two_photon(model, WavepacketRun((Packet(0.0, 1.0, 7.0),), 31.0, points=41))
    assert result.relative_l2 < 0.05
    assert result.norm_drift < 1e-8
