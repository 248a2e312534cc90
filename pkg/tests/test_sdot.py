import numpy as np
import pytest

from wgflow.errors import ConvergenceError
from wgflow.measures import BoxDomain, GridDensity, sample_density
from wgflow.sdot import (
    SdotConfig,
    quantization_sweep,
    run_sdot_flow,
    save_diagram,
    save_sweep,
    sdot_energy,
    sdot_flow_step,
    solve_laguerre,
)

UNIT = BoxDomain([0.0], [1.0])
UNIFORM = GridDensity.uniform(UNIT, 512)


def test_1d_symmetric_two_sites():
    sites = np.array([[0.3], [0.7]])
    diag = solve_laguerre(sites, UNIFORM)
    assert np.allclose(diag.cell_masses, 0.5, atol=1e-12)
    assert np.allclose(diag.centroids[:, 0], [0.25, 0.75], atol=1e-12)
    assert diag.weights[0] == pytest.approx(diag.weights[1])


def test_1d_quantile_centroids():
    # oracle: uniform target, N=4 -> quantile-interval midpoints
    sites = np.array([[0.1], [0.4], [0.6], [0.9]])
    diag = solve_laguerre(sites, UNIFORM)
    assert np.allclose(diag.centroids[:, 0], [1 / 8, 3 / 8, 5 / 8, 7 / 8], atol=1e-12)
    assert np.allclose(diag.cell_masses, 0.25, atol=1e-12)


def test_1d_unsorted_sites_alignment():
    sites = np.array([[0.9], [0.1]])
    diag = solve_laguerre(sites, UNIFORM)
    # diagram rows align with the input order
    assert diag.centroids[0, 0] == pytest.approx(0.75)
    assert diag.centroids[1, 0] == pytest.approx(0.25)


def test_coincident_sites_rejected():
    with pytest.raises(ValueError, match="coincident"):
        solve_laguerre(np.array([[0.5], [0.5]]), UNIFORM)


def test_energy_at_centroids_and_decomposition():
    # oracle: variance of a uniform on an interval of length 1/4 is 1/(12*16)
    sites = np.array([[1 / 8], [3 / 8], [5 / 8], [7 / 8]])
    diag = solve_laguerre(sites, UNIFORM)
    energy = sdot_energy(diag, sites)
    assert energy.bias == pytest.approx(0.0, abs=1e-20)
    assert energy.total == pytest.approx(1 / 192, rel=1e-5)
    assert energy.total == pytest.approx(energy.bias + energy.within, rel=1e-12)


def test_energy_single_site_variance():
    # oracle: one site at the mean pays exactly the target's variance
    tri = GridDensity.from_function(UNIT, 1024, lambda x: x[:, 0])
    mean = float((tri.centers()[:, 0] * tri.cell_masses()).sum())
    var = float(((tri.centers()[:, 0] - mean) ** 2 * tri.cell_masses()).sum())
    diag = solve_laguerre(np.array([[mean]]), tri)
    assert sdot_energy(diag, np.array([[mean]])).total == pytest.approx(var, rel=1e-10)


def test_energy_stale_diagram_error():
    sites = np.array([[0.3], [0.7]])
    diag = solve_laguerre(sites, UNIFORM)
    with pytest.raises(ValueError, match="stale"):
        sdot_energy(diag, sites + 0.01)


def test_flow_step_fixed_point_and_lloyd():
    sites = np.array([[1 / 8], [3 / 8], [5 / 8], [7 / 8]])
    diag = solve_laguerre(sites, UNIFORM)
    assert np.allclose(sdot_flow_step(sites, diag, 0.5), sites, atol=1e-12)
    off = np.array([[0.2], [0.35], [0.55], [0.95]])
    diag2 = solve_laguerre(off, UNIFORM)
    jump = sdot_flow_step(off, diag2, 1.0)
    assert np.allclose(jump, diag2.centroids)
    with pytest.raises(ValueError):
        sdot_flow_step(off, diag2, 1.5)


def test_flow_converges_to_optimal_quantizer(rng):
    # oracle: optimal uniform 1-d quantizer sites (2i-1)/(2N), energy 1/(12 N^2)
    n = 8
    sites0 = sample_density(UNIFORM, n, rng).positions
    res = run_sdot_flow(sites0, UNIFORM, SdotConfig(dt=0.5, max_steps=100))
    assert res.converged
    expected_sites = (2 * np.arange(1, n + 1) - 1) / (2 * n)
    assert np.allclose(np.sort(res.sites[:, 0]), expected_sites, atol=1e-3)
    assert res.energies[-1] == pytest.approx(1 / (12 * n**2), rel=0.02)


def test_flow_decay_and_envelope(rng):
    # discrete-time energy is nonincreasing above the floor, and the gap to
    # the floor obeys the exponential envelope with 10% slack
    n = 16
    sites0 = sample_density(UNIFORM, n, rng).positions
    cfg = SdotConfig(dt=0.5, max_steps=80, bias_rel_tol=1e-10)
    res = run_sdot_flow(sites0, UNIFORM, cfg)
    floor = res.withins[-1]
    above = res.energies > 1.05 * floor
    diffs = np.diff(res.energies)
    assert np.all(diffs[above[:-1]] <= 1e-14)
    gap0 = res.energies[0] - floor
    envelope = gap0 * np.exp(-2.0 * (1.0 - cfg.dt) * res.times)
    gaps = res.energies - floor
    assert np.all(gaps <= 1.1 * envelope + 1e-14)


def test_decomposition_identity_along_flow(rng):
    n = 12
    sites0 = sample_density(UNIFORM, n, rng).positions
    res = run_sdot_flow(sites0, UNIFORM, SdotConfig(dt=0.5, max_steps=40))
    assert np.allclose(res.energies, res.biases + res.withins, rtol=1e-12)


def test_domain_diameter_scaling(rng):
    # oracle: doubling the domain scales the ultimate energy by 4 (D^2 law)
    n = 8
    big = GridDensity.uniform(BoxDomain([0.0], [2.0]), 512)
    sites_small = sample_density(UNIFORM, n, 3).positions
    sites_big = 2.0 * sites_small
    e_small = run_sdot_flow(sites_small, UNIFORM, SdotConfig(max_steps=100)).energies[-1]
    e_big = run_sdot_flow(sites_big, big, SdotConfig(max_steps=100)).energies[-1]
    assert e_big == pytest.approx(4.0 * e_small, rel=1e-3)


def test_2d_grid_solver_masses(rng):
    dom2 = BoxDomain([0.0, 0.0], [1.0, 1.0])
    target = GridDensity.uniform(dom2, (96, 96))
    sites = sample_density(target, 8, rng).positions
    diag = solve_laguerre(sites, target, mass_tol=2e-3)
    assert np.abs(diag.cell_masses - 1 / 8).max() <= 2e-3
    assert abs(diag.cell_masses.sum() - 1.0) < 1e-8
    assert dom2.contains(diag.centroids)


def test_2d_solver_nonconvergence_raises(rng):
    dom2 = BoxDomain([0.0, 0.0], [1.0, 1.0])
    target = GridDensity.uniform(dom2, (16, 16))
    sites = sample_density(target, 7, rng).positions
    with pytest.raises(ConvergenceError, match="mass defect"):
        solve_laguerre(sites, target, mass_tol=1e-9, max_iter=5)


def test_quantization_sweep_1d():
    report = quantization_sweep(UNIFORM, [4, 8, 16], SdotConfig(max_steps=100, seed=2))
    assert report.slope == pytest.approx(-2.0, abs=0.1)
    # oracle: constant 1/12 from the uniform quantizer law
    assert report.constant == pytest.approx(1 / 12, rel=0.05)


def test_exports(tmp_path):
    sites = np.array([[0.3], [0.7]])
    diag = solve_laguerre(sites, UNIFORM)
    save_diagram(tmp_path / "d.csv", diag)
    text = (tmp_path / "d.csv").read_text()
    assert text.startswith("site0,weight,mass,centroid0,withinCellVariance")
    report = quantization_sweep(UNIFORM, [4, 8], SdotConfig(max_steps=60, seed=2))
    save_sweep(tmp_path / "s.csv", report)
    assert (tmp_path / "s.csv").read_text().startswith("N,ultimateEnergy,includedInFit")
