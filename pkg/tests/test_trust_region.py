import numpy as np
import pytest

from motrbench.trust_region import (
    TrustRegionProblem,
    brute_force,
    condition_number,
    objective,
    solve,
)


def random_problem(rng, d, D):
    P = rng.uniform(-1.0, 1.0, size=(d, d))
    p = rng.uniform(-1.0, 1.0, size=d)
    return TrustRegionProblem(P, p, D)


def kkt_residual(prob, sol):
    S = 0.5 * (prob.P + prob.P.T)
    return np.linalg.norm(2.0 * S @ sol.z + prob.p - 2.0 * sol.multiplier * sol.z)


def test_condition_number_examples():
    prob = TrustRegionProblem(np.diag([1.0, 0.0]), np.array([1.0, 0.0]), 2.0)
    assert condition_number(prob) == pytest.approx(4.0)

    prob = TrustRegionProblem(np.zeros((2, 2)), np.zeros(2), 1.0)
    assert condition_number(prob) == pytest.approx(1.0)

    prob = TrustRegionProblem(np.diag([0.1, 0.0]), np.array([0.1, 0.0]), 0.5)
    assert condition_number(prob) == pytest.approx(2.0)


def test_solve_linear_objective():
    prob = TrustRegionProblem(np.zeros((2, 2)), np.array([1.0, 0.0]), 2.0)
    sol = solve(prob)
    assert np.allclose(sol.z, [2.0, 0.0], atol=1e-9)
    assert sol.value == pytest.approx(2.0)
    assert sol.on_boundary


def test_solve_hard_case_zero_linear_term():
    prob = TrustRegionProblem(np.diag([1.0, -1.0]), np.zeros(2), 1.0)
    sol = solve(prob)
    assert sol.hard_case
    assert sol.on_boundary
    assert sol.value == pytest.approx(1.0)
    assert abs(abs(sol.z[0]) - 1.0) < 1e-9 and abs(sol.z[1]) < 1e-9
    assert sol.multiplier == pytest.approx(1.0)


def test_solve_hard_case_orthogonal_linear_term():
    # p lives entirely off the top eigenspace.
    prob = TrustRegionProblem(np.diag([2.0, -1.0]), np.array([0.0, 0.5]), 1.0)
    sol = solve(prob)
    assert sol.hard_case
    assert sol.on_boundary
    assert kkt_residual(prob, sol) < 1e-6 * (1.0 + np.linalg.norm(prob.p))
    ref = brute_force(prob, samples=200000)
    assert sol.value >= ref.value - 1e-6


def test_solve_near_hard_case():
    prob = TrustRegionProblem(np.diag([2.0, -1.0]), np.array([1e-9, 0.5]), 1.0)
    sol = solve(prob)
    assert sol.on_boundary
    assert kkt_residual(prob, sol) < 1e-6 * (1.0 + np.linalg.norm(prob.p))
    ref = brute_force(prob, samples=200000)
    assert sol.value >= ref.value - 1e-6


def test_solve_interior():
    prob = TrustRegionProblem(np.diag([-1.0, -2.0]), np.array([0.2, 0.0]), 5.0)
    sol = solve(prob)
    # 2Sz + p = 0 -> z = (0.1, 0).
    assert np.allclose(sol.z, [0.1, 0.0], atol=1e-12)
    assert not sol.on_boundary
    assert sol.multiplier == 0.0
    assert kkt_residual(prob, sol) < 1e-10


def test_solve_all_zero():
    prob = TrustRegionProblem(np.zeros((3, 3)), np.zeros(3), 1.5)
    sol = solve(prob)
    assert sol.value == pytest.approx(0.0)
    assert np.linalg.norm(sol.z) <= 1.5 * (1 + 1e-9)


def test_solve_scalar_dimension():
    prob = TrustRegionProblem(np.array([[2.0]]), np.array([-0.5]), 1.0)
    sol = solve(prob)
    # max over [-1,1] of 2z^2 - 0.5z is at z = -1: value 2.5.
    assert sol.value == pytest.approx(2.5)
    assert sol.z[0] == pytest.approx(-1.0)


def test_brute_force_linear_matches():
    prob = TrustRegionProblem(np.zeros((2, 2)), np.array([1.0, 0.0]), 2.0)
    ref = brute_force(prob, samples=5000)
    assert ref.value == pytest.approx(2.0, abs=1e-3)


def test_brute_force_interior_matches_closed_form():
    rng = np.random.default_rng(5)
    for _ in range(10):
        Droot = rng.uniform(0.5, 1.5, size=(3, 3))
        S = -(Droot @ Droot.T) - 0.5 * np.eye(3)  # negative definite
        p = 0.05 * rng.standard_normal(3)
        prob = TrustRegionProblem(S, p, 2.0)
        z0 = np.linalg.solve(-2.0 * S, p)
        assert np.linalg.norm(z0) < 2.0
        ref = brute_force(prob, samples=2000)
        assert ref.value == pytest.approx(objective(prob, z0), rel=1e-12, abs=1e-12)


def test_brute_force_argument_errors():
    prob5 = TrustRegionProblem(np.eye(5), np.zeros(5), 1.0)
    with pytest.raises(ValueError):
        brute_force(prob5, samples=2000)
    prob2 = TrustRegionProblem(np.eye(2), np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        brute_force(prob2, samples=10)


def test_random_suite_against_sampling_oracle():
    rng = np.random.default_rng(42)
    radii = [0.5, 1.0, 2.0]
    for i in range(100):
        d = 2 + (i % 2)
        prob = random_problem(rng, d, radii[i % 3])
        sol = solve(prob, eps=1e-9)
        samples = 100000 if d == 2 else 1000000
        ref = brute_force(prob, samples=samples)
        assert abs(sol.value - ref.value) < 1e-4
        assert sol.value >= ref.value - 1e-9
        assert np.linalg.norm(sol.z) <= prob.D * (1.0 + 1e-9)
        assert abs(sol.value - objective(prob, sol.z)) <= 1e-9 * (1.0 + abs(sol.value))
        if sol.on_boundary:
            S = 0.5 * (prob.P + prob.P.T)
            assert kkt_residual(prob, sol) <= 1e-6 * (1.0 + np.linalg.norm(prob.p))
            assert sol.multiplier >= np.linalg.eigvalsh(S)[-1] - 1e-8
            assert sol.multiplier >= -1e-12


def test_scale_equivariance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        prob = random_problem(rng, 3, 1.0)
        sol = solve(prob)
        c = 7.5
        scaled = TrustRegionProblem(c * prob.P, c * prob.p, prob.D)
        sol_c = solve(scaled)
        assert sol_c.value == pytest.approx(c * sol.value, rel=1e-6, abs=1e-9)
        # The scaled argmax is optimal for the original problem too.
        assert objective(prob, sol_c.z) >= sol.value - 1e-6 * (1.0 + abs(sol.value))


def test_monotone_in_radius():
    rng = np.random.default_rng(8)
    for _ in range(10):
        P = rng.uniform(-1.0, 1.0, size=(3, 3))
        p = rng.uniform(-1.0, 1.0, size=3)
        values = [solve(TrustRegionProblem(P, p, D)).value for D in (0.25, 0.5, 1.0, 2.0, 4.0)]
        for a, b in zip(values, values[1:]):
            assert b >= a - 1e-10


def test_problem_validation():
    with pytest.raises(ValueError):
        TrustRegionProblem(np.eye(2), np.zeros(3), 1.0)
    with pytest.raises(ValueError):
        TrustRegionProblem(np.eye(2), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        TrustRegionProblem(np.full((2, 2), np.nan), np.zeros(2), 1.0)
