import numpy as np
import pytest

from wgflow.fields import VelocityField
from wgflow.kde import (
    KernelSpec,
    bandwidth_rule,
    convolved_agent_inputs,
    kde_evaluate,
    kde_perturbation_bound,
    nadaraya_velocity,
    save_agent_inputs,
)
from wgflow.measures import BoxDomain, GridDensity, ParticleEnsemble

DOM = BoxDomain([-4.0], [4.0])


def test_bandwidth_rule():
    assert bandwidth_rule(1, 0.7, 3) == pytest.approx(0.7)
    # direct arithmetic: 1000^(-1/3) ~ 0.1
    assert bandwidth_rule(1000, 1.0, 1) == pytest.approx(0.1, rel=1e-12)
    assert bandwidth_rule(2000, 1.0, 1) < bandwidth_rule(1000, 1.0, 1)
    with pytest.raises(ValueError):
        bandwidth_rule(0, 1.0, 1)


def test_kernel_moments_closed_forms():
    # gaussian: mu1 = E|N(0, I_d)|, mu2 = d
    g1 = KernelSpec("gaussian", 0.3, 1)
    assert g1.mu1 == pytest.approx(np.sqrt(2 / np.pi))
    assert g1.mu2 == 1.0
    g2 = KernelSpec("gaussian", 0.3, 2)
    assert g2.mu1 == pytest.approx(np.sqrt(np.pi / 2))
    assert g2.mu2 == 2.0
    # epanechnikov in 1-d: mu1 = 3/8, mu2 = 1/5
    e1 = KernelSpec("epanechnikov", 0.3, 1)
    assert e1.mu1 == pytest.approx(3 / 8)
    assert e1.mu2 == pytest.approx(1 / 5)
    with pytest.raises(ValueError):
        KernelSpec("box", 0.3, 1)


@pytest.mark.parametrize("family", ["gaussian", "epanechnikov"])
@pytest.mark.parametrize("dim", [1, 2])
def test_kernel_unit_mass_and_moments_by_quadrature(family, dim):
    # oracle: midpoint quadrature of the kernel over a wide box; the compact
    # kernel's edge kink limits the quadrature accuracy, not the closed forms
    h = 0.5
    mass_tol = 1e-6 if family == "gaussian" else 1e-3
    k = KernelSpec(family, h, dim)
    dom = BoxDomain.centered(dim, 5.0)
    grid = GridDensity.uniform(dom, 400 if dim == 1 else 200)
    centers = grid.centers()
    sq = (centers**2).sum(axis=1)
    vals = k.values(sq)
    vol = grid.cell_volume
    assert vals.sum() * vol == pytest.approx(1.0, abs=mass_tol)
    assert (vals * np.sqrt(sq)).sum() * vol == pytest.approx(h * k.mu1, rel=2e-3)
    assert (vals * sq).sum() * vol == pytest.approx(h**2 * k.mu2, rel=2e-3)


def test_kde_single_particle_bump():
    z = ParticleEnsemble(DOM, np.array([[0.5]]))
    dens = kde_evaluate(z, KernelSpec("gaussian", 0.2, 1), 128)
    assert dens.mass() == pytest.approx(1.0, abs=1e-6)
    xs = dens.axis_centers(0)
    assert abs(xs[np.argmax(dens.values)] - 0.5) < 0.05


def test_kde_coincident_particles_linearity():
    one = ParticleEnsemble(DOM, np.array([[0.5]]))
    two = ParticleEnsemble(DOM, np.array([[0.5], [0.5]]))
    k = KernelSpec("gaussian", 0.2, 1)
    assert np.allclose(kde_evaluate(one, k, 64).values, kde_evaluate(two, k, 64).values)


def test_kde_l1_convergence(rng):
    # Monte-Carlo convergence against the analytic density at the A1 bandwidth
    n = 100_000
    sigma = 0.8
    pts = np.clip(rng.normal(0, sigma, (n, 1)), -3.9, 3.9)
    z = ParticleEnsemble(DOM, pts)
    h = bandwidth_rule(n, 1.06 * sigma, 1)
    dens = kde_evaluate(z, KernelSpec("gaussian", h, 1), 256)
    truth = GridDensity.from_function(
        DOM, 256, lambda x: np.exp(-0.5 * x[:, 0] ** 2 / sigma**2)
    )
    l1 = np.abs(dens.values - truth.values).sum() * dens.cell_volume
    assert l1 < 0.05


def test_nadaraya_single_agent_constant_field():
    z = ParticleEnsemble(DOM, np.array([[0.3]]))
    k = KernelSpec("gaussian", 0.3, 1)
    field = nadaraya_velocity(z, k, lambda pts: np.cos(pts))
    g = field.agent_inputs
    query = np.array([[-2.0], [0.3], [1.7]])
    out = field.at_points(query)
    assert np.allclose(out, g[0])


def test_nadaraya_linear_field_identity(rng):
    # Gaussian convolution of the identity is the identity (zero-mean kernel)
    n = 60
    pts = 2.0 * (rng.random((n, 1)) - 0.5)  # bulk, far from the boundary
    z = ParticleEnsemble(DOM, pts)
    k = KernelSpec("gaussian", 0.15, 1)
    g = convolved_agent_inputs(z, k, lambda p: p)
    assert np.allclose(g, pts, atol=1e-6)


def test_nadaraya_bandwidth_taylor_limit(rng):
    # h -> 0 on a smooth field: agent inputs approach the field, O(h^2)
    pts = 1.5 * (rng.random((40, 1)) - 0.5)
    z = ParticleEnsemble(DOM, pts)
    field = lambda p: np.sin(p)
    errs = []
    for h in (0.4, 0.2, 0.1):
        g = convolved_agent_inputs(z, KernelSpec("gaussian", h, 1), field)
        errs.append(np.abs(g - np.sin(pts)).max())
    errs = np.array(errs)
    ratios = errs[:-1] / errs[1:]
    assert np.all(ratios > 3.0)  # ~4x per halving


def test_nadaraya_undersampled_quadrature_error():
    z = ParticleEnsemble(DOM, np.array([[0.0]]))
    k = KernelSpec("gaussian", 0.05, 1)
    with pytest.raises(ValueError, match="coarser"):
        convolved_agent_inputs(z, k, lambda p: p, resolution=16)


def test_nadaraya_convex_combination(rng):
    # the regression field lies in the convex hull of the agent inputs
    pts = 3.0 * (rng.random((30, 1)) - 0.5)
    z = ParticleEnsemble(DOM, pts)
    k = KernelSpec("gaussian", 0.25, 1)
    field = nadaraya_velocity(z, k, lambda p: np.tanh(2 * p))
    g = field.agent_inputs
    queries = np.linspace(-3.5, 3.5, 77)[:, None]
    out = field.at_points(queries)
    assert np.all(out >= g.min() - 1e-12)
    assert np.all(out <= g.max() + 1e-12)


def test_nadaraya_floor_fallback():
    # far from every agent the compactly supported kernel vanishes; the field
    # falls back to the nearest agent's input
    z = ParticleEnsemble(DOM, np.array([[-1.0], [1.0]]))
    k = KernelSpec("epanechnikov", 0.2, 1)
    field = nadaraya_velocity(z, k, lambda p: p)
    out = field.at_points(np.array([[3.5], [-3.5]]))
    g = field.agent_inputs
    assert out[0] == pytest.approx(g[1])
    assert out[1] == pytest.approx(g[0])


def test_perturbation_bound_trivial_scalings():
    k1 = KernelSpec("gaussian", 0.2, 1)
    k_half = KernelSpec("gaussian", 0.1, 1)
    assert kde_perturbation_bound(0.0, k1) == 0.0
    assert kde_perturbation_bound(2.0, k_half) == pytest.approx(
        kde_perturbation_bound(2.0, k1) / 4.0
    )
    with pytest.raises(ValueError):
        kde_perturbation_bound(-1.0, k1)


def test_perturbation_bound_scaling_law():
    # under the bandwidth law the bound scales like N^(-2/(d+2))
    for d in (1, 2):
        ns = np.array([100, 1000, 10000])
        vals = [
            kde_perturbation_bound(1.3, KernelSpec("gaussian", bandwidth_rule(n, 0.7, d), d))
            for n in ns
        ]
        slope = np.polyfit(np.log(ns), np.log(vals), 1)[0]
        assert slope == pytest.approx(-2.0 / (d + 2), abs=0.05)


def test_measured_error_below_bound(rng):
    # quadratic field with known Lipschitz gradient; the measured deviation
    # of the regression field stays under the closed-form bound
    L = 1.5
    n = 800
    pts = np.clip(rng.normal(0, 0.8, (n, 1)), -2.5, 2.5)
    z = ParticleEnsemble(DOM, pts)
    h = bandwidth_rule(n, 0.8, 1)
    k = KernelSpec("gaussian", h, 1)
    ideal = lambda p: -L * p
    field = nadaraya_velocity(z, k, ideal)
    dens = kde_evaluate(z, k, 256)
    centers = dens.centers()
    dev = field.at_points(centers) - ideal(centers)
    measured = float(((dev**2).sum(axis=1) * dens.cell_masses()).sum())
    assert measured <= kde_perturbation_bound(L, k)


def test_save_agent_inputs(tmp_path, rng):
    g = rng.random((5, 2))
    save_agent_inputs(tmp_path / "g.csv", g)
    assert (tmp_path / "g.csv").read_text().startswith("# g0,g1")
