import numpy as np
import pytest

from wgflow.functionals import (
    check_gradient_dominance,
    check_l_smoothness,
    check_quadratic_growth,
    entropy_functional,
    eval_functional,
    fisher_information,
    gradient_field,
    ot_to_target,
    potential_energy,
    quadratic_potential,
    save_report,
)
from wgflow.measures import BoxDomain, GridDensity, ParticleEnsemble, TargetSet

DOM = BoxDomain([-5.0], [5.0])
ORIGIN = TargetSet.from_points([[0.0]])


def random_ensembles(rng, count, n_range=(2, 200), dim=1, scale=2.0):
    out = []
    for _ in range(count):
        n = int(rng.integers(*n_range))
        dom = BoxDomain.centered(dim, 5.0)
        out.append(ParticleEnsemble(dom, scale * (rng.random((n, dim)) - 0.5)))
    return out


# ---------------------------------------------------------------------------
# evaluation


def test_eval_quadratic_examples(rng):
    F = quadratic_potential()
    at_zero = ParticleEnsemble(DOM, np.zeros((5, 1)))
    assert eval_functional(F, at_zero) == 0.0
    # oracle: int_0^1 x^2/2 dx = 1/6
    uni = ParticleEnsemble(BoxDomain([0.0], [1.0]), rng.random((100_000, 1)))
    assert eval_functional(F, uni) == pytest.approx(1 / 6, abs=0.005)


def test_eval_ot_to_target_self(rng):
    pts = 2.0 * (rng.random((40, 1)) - 0.5)
    rho = ParticleEnsemble(DOM, pts)
    F = ot_to_target(TargetSet.from_ensemble(rho))
    assert eval_functional(F, rho) == 0.0


def test_eval_entropy_needs_surrogate(rng):
    F = entropy_functional()
    rho = ParticleEnsemble(DOM, rng.random((10, 1)))
    with pytest.raises(ValueError, match="surrogate"):
        eval_functional(F, rho)
    # oracle: entropy of uniform on [-5,5] is -log(10)
    uniform = GridDensity.uniform(DOM, 64)
    assert eval_functional(F, rho, surrogate=uniform) == pytest.approx(-np.log(10))


# ---------------------------------------------------------------------------
# gradient fields


def test_gradient_field_quadratic_exact(rng):
    F = quadratic_potential()
    rho = ParticleEnsemble(DOM, 2.0 * (rng.random((30, 1)) - 0.5))
    v = gradient_field(F, rho)(rho)
    assert np.allclose(v, -rho.positions)


def test_gradient_field_ot_self_is_zero(rng):
    pts = 2.0 * (rng.random((24, 2)) - 0.5)
    rho = ParticleEnsemble(BoxDomain.centered(2, 5.0), pts)
    F = ot_to_target(TargetSet.from_ensemble(rho))
    v = gradient_field(F, rho)(rho)
    assert np.abs(v).max() < 1e-12


def test_gradient_consistency_finite_differences(rng):
    # directional finite differences of the value match the field to first order
    V = lambda x: (0.5 * x[:, 0] ** 2 + 0.25 * np.cos(x[:, 0])).reshape(-1)
    gV = lambda x: np.stack([x[:, 0] - 0.25 * np.sin(x[:, 0])], axis=1)
    F = potential_energy(V, gV)
    rho = ParticleEnsemble(DOM, 2.0 * (rng.random((50, 1)) - 0.5))
    v = gradient_field(F, rho)(rho)
    step = 1e-5 * DOM.diameter
    direction = rng.standard_normal(rho.positions.shape)
    direction /= np.linalg.norm(direction)
    plus = rho.with_positions(rho.positions + step * direction)
    minus = rho.with_positions(rho.positions - step * direction)
    fd = (eval_functional(F, plus) - eval_functional(F, minus)) / (2 * step)
    # the field is minus the gradient of the first variation
    analytic = float(np.sum(-v * direction) / rho.n)
    assert fd == pytest.approx(analytic, rel=1e-4)


def test_entropy_gradient_oracle_score(rng):
    # analytic score of N(0, sigma^2): grad log rho = -x / sigma^2
    sigma = 0.8
    score = lambda pts: -pts / sigma**2
    F = entropy_functional(score=score)
    rho = ParticleEnsemble(DOM, np.clip(rng.normal(0, sigma, (200, 1)), -4.9, 4.9))
    v = gradient_field(F, rho)(rho)
    assert np.allclose(v, rho.positions / sigma**2)
    # points away from the mode
    assert np.all(v * np.sign(rho.positions) >= 0)


def test_entropy_gradient_kde_bulk(rng):
    # the KDE score is a noisy per-particle estimator; in aggregate its bulk
    # regression slope recovers 1/sigma^2, and it points away from the mode
    sigma = 1.0
    n = 4000
    pts = np.clip(rng.normal(0, sigma, (n, 1)), -4.9, 4.9)
    rho = ParticleEnsemble(DOM, pts)
    F = entropy_functional(kernel_c=2.0 * sigma)
    v = gradient_field(F, rho)(rho)
    bulk = np.abs(pts[:, 0]) < 1.5
    slope = np.polyfit(pts[bulk, 0], v[bulk, 0], 1)[0]
    assert slope == pytest.approx(1.0 / sigma**2, rel=0.25)
    away = np.abs(pts[:, 0]) > 0.5
    assert np.mean(np.sign(v[away, 0]) == np.sign(pts[away, 0])) > 0.9


# ---------------------------------------------------------------------------
# checkers (quadratic identities are exact)


def test_quadratic_growth_identity(rng):
    F = quadratic_potential()
    samples = random_ensembles(rng, 100)
    report = check_quadratic_growth(F, samples, ORIGIN)
    assert report.empirical_modulus >= 1 - 1e-6
    assert report.empirical_modulus == pytest.approx(1.0, abs=1e-10)
    assert report.passed


def test_quadratic_growth_skips_target_samples():
    F = quadratic_potential()
    at_target = ParticleEnsemble(DOM, np.zeros((3, 1)))
    off = ParticleEnsemble(DOM, np.ones((3, 1)))
    report = check_quadratic_growth(F, [at_target, off], ORIGIN)
    assert report.skipped == [0]


def test_quadratic_growth_modulus_scaling(rng):
    F2 = quadratic_potential(modulus=2.0)
    report = check_quadratic_growth(F2, random_ensembles(rng, 30), ORIGIN)
    assert report.empirical_modulus == pytest.approx(2.0, abs=1e-10)


def test_gradient_dominance_identity(rng):
    F = quadratic_potential()
    samples = random_ensembles(rng, 100)
    report = check_gradient_dominance(F, samples, ORIGIN)
    assert report.empirical_modulus == pytest.approx(1.0, abs=1e-10)
    at_min = ParticleEnsemble(DOM, np.zeros((4, 1)))
    rep2 = check_gradient_dominance(F, [at_min], ORIGIN)
    assert rep2.skipped == [0]


def test_gradient_dominance_modulus_scaling(rng):
    lam = 3.0
    F = quadratic_potential(modulus=lam)
    report = check_gradient_dominance(F, random_ensembles(rng, 30), ORIGIN)
    assert report.empirical_modulus == pytest.approx(lam, rel=1e-10)


def test_l_smoothness_quadratic_identity(rng):
    F = quadratic_potential()
    pairs = [
        (a, b)
        for a, b in zip(random_ensembles(rng, 20, n_range=(2, 40)),
                        random_ensembles(rng, 20, n_range=(2, 40)))
        if a.n == b.n
    ]
    pairs = []
    for _ in range(20):
        n = int(rng.integers(2, 40))
        pairs.append(
            (
                ParticleEnsemble(DOM, 2 * (rng.random((n, 1)) - 0.5)),
                ParticleEnsemble(DOM, 2 * (rng.random((n, 1)) - 0.5)),
            )
        )
    report = check_l_smoothness(F, pairs)
    assert report.empirical_modulus == pytest.approx(1.0, abs=1e-10)
    same = pairs[0][0]
    rep2 = check_l_smoothness(F, [(same, same)])
    assert rep2.skipped == [0]


def test_l_smoothness_hessian_bound(rng):
    # oracle: |V''| <= l pointwise implies the empirical modulus <= l;
    # V(x) = x^2/2 + 0.1 sin(2x) has V'' = 1 - 0.4 sin(2x), so l = 1.4
    V = lambda x: (0.5 * x[:, 0] ** 2 + 0.1 * np.sin(2 * x[:, 0])).reshape(-1)
    gV = lambda x: np.stack([x[:, 0] + 0.2 * np.cos(2 * x[:, 0])], axis=1)
    F = potential_energy(V, gV, smoothness=1.4)
    pairs = []
    for _ in range(100):
        n = int(rng.integers(2, 30))
        pairs.append(
            (
                ParticleEnsemble(DOM, 3 * (rng.random((n, 1)) - 0.5)),
                ParticleEnsemble(DOM, 3 * (rng.random((n, 1)) - 0.5)),
            )
        )
    report = check_l_smoothness(F, pairs)
    assert report.empirical_modulus <= 1.4 + 1e-9
    assert report.passed


def test_proper_loss_lift_passes_all_checks(rng):
    # a non-quadratic proper loss: V = x^2/2 + log cosh(x) has
    # V'' = 1 + sech^2 in [1, 2], so lambda = 1 and l = 2 hold
    V = lambda x: (0.5 * x[:, 0] ** 2 + np.log(np.cosh(x[:, 0]))).reshape(-1)
    gV = lambda x: np.stack([x[:, 0] + np.tanh(x[:, 0])], axis=1)
    F = potential_energy(V, gV, grad_lipschitz=2.0, convexity=1.0, smoothness=2.0)
    samples = random_ensembles(rng, 100)
    growth = check_quadratic_growth(F, samples, ORIGIN)
    dom = check_gradient_dominance(F, samples, ORIGIN)
    assert growth.passed and dom.passed
    pairs = []
    for _ in range(100):
        n = int(rng.integers(2, 30))
        pairs.append(
            (
                ParticleEnsemble(DOM, 2 * (rng.random((n, 1)) - 0.5)),
                ParticleEnsemble(DOM, 2 * (rng.random((n, 1)) - 0.5)),
            )
        )
    smooth = check_l_smoothness(F, pairs)
    assert smooth.passed


def test_appendix_consistency_same_modulus(rng):
    # strongly convex lifted losses pass growth and dominance with one lambda
    lam = 1.7
    F = quadratic_potential(modulus=lam)
    samples = random_ensembles(rng, 50)
    g = check_quadratic_growth(F, samples, ORIGIN, claimed=lam)
    d = check_gradient_dominance(F, samples, ORIGIN, claimed=lam)
    assert g.passed and d.passed


# ---------------------------------------------------------------------------
# Fisher information


def test_fisher_uniform_zero():
    g = GridDensity.uniform(DOM, 64)
    assert fisher_information(g) == 0.0


def test_fisher_gaussian_oracle():
    # oracle: I = 1/sigma^2 for a 1-d Gaussian
    wide = BoxDomain([-10.0], [10.0])
    for sigma, expected in ((1.0, 1.0), (0.5, 4.0)):
        g = GridDensity.from_function(
            wide, 800, lambda x: np.exp(-0.5 * x[:, 0] ** 2 / sigma**2)
        )
        assert fisher_information(g, on_low="clip") == pytest.approx(expected, rel=0.02)


def test_fisher_floor_error_names_cell():
    vals = np.ones(8)
    vals[3] = 0.0
    g = GridDensity.from_values(BoxDomain([0.0], [1.0]), vals)
    with pytest.raises(ValueError, match=r"cell \(3,\)"):
        fisher_information(g)


def test_report_csv(tmp_path, rng):
    F = quadratic_potential()
    report = check_quadratic_growth(F, random_ensembles(rng, 5), ORIGIN)
    save_report(tmp_path / "r.csv", report)
    text = (tmp_path / "r.csv").read_text()
    assert text.startswith("sample,lhs,rhs,ratio")
    assert "quadratic-growth" in text
