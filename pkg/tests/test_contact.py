import logging
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import least_squares

from quadsim.contact import (
    ActiveContactSet,
    Contact,
    ContactProblem,
    ContactSolver,
    build_contact_problem,
    detect_contacts,
    parameterize,
    residual,
    solve_contact_impulses,
    stabilization_offset,
)
from quadsim.dynamics import dynamics_terms
from quadsim.sim import default_stance, drop_scenario, run
from conftest import random_q, random_qdot

HAND_CASES = [
    # (V0, mu, x, lam, V)
    ((0.3, 0.0, 0.0), 0.6, (0.3, 0.0, 0.0), (0.0, 0.0, 0.0), (0.3, 0.0, 0.0)),
    ((-1.0, 0.5, 0.0), 0.6, (-0.5, 0.25, 0.0), (0.5, -0.25, 0.0), (0.0, 0.0, 0.0)),
    ((-1.0, 4.0, 0.0), 0.3, (-0.5, 3.85, 0.0), (0.5, -0.15, 0.0), (0.0, 3.7, 0.0)),
]


def feet_at(*z):
    feet = np.array([[0.3, -0.1, z[0]], [0.3, 0.1, z[1]], [-0.3, -0.1, z[2]], [-0.3, 0.1, z[3]]])
    return SimpleNamespace(feet=feet)


def test_detect_none_when_airborne(model):
    assert len(detect_contacts(model, feet_at(0.1, 0.1, 0.1, 0.1))) == 0


def test_detect_one_penetrating(model):
    cs = detect_contacts(model, feet_at(0.1, -1e-4, 0.1, 0.1))
    assert cs.feet == (1,)
    assert cs.contacts[0].penetration == pytest.approx(1e-4)


def test_detect_all_ordered(model):
    cs = detect_contacts(model, feet_at(0.0, 0.0, 0.0, 0.0))
    assert cs.feet == (0, 1, 2, 3)


def test_detect_threshold_and_speculative(model):
    assert detect_contacts(model, feet_at(9e-6, 1.1e-5, 1, 1)).feet == (0,)
    vel = np.zeros((4, 3))
    vel[2, 2] = -1.0
    cs = detect_contacts(model, feet_at(1, 1, 5e-4, 1), foot_velocities=vel, h=1e-3)
    assert cs.feet == (2,)
    assert cs.contacts[0].penetration == pytest.approx(-5e-4)


def test_stabilization_offset():
    cs = ActiveContactSet((Contact(0, np.zeros(3), 1e-4), Contact(1, np.zeros(3), 1e-1),
                           Contact(2, np.zeros(3), -2e-4)))
    off = stabilization_offset(cs, 1e-3)
    assert off[0] == pytest.approx(-0.2 * 1e-4 / 1e-3)
    assert off[3] == pytest.approx(-0.1)           # clamped
    assert off[6] == pytest.approx(0.2)            # gap / h
    assert np.all(off[[1, 2, 4, 5, 7, 8]] == 0)
    off = stabilization_offset(cs, 1e-3, enabled=False)
    assert off[0] == 0 and off[3] == 0 and off[6] == pytest.approx(0.2)


def test_empty_problem(model):
    t = dynamics_terms(model, default_stance(model), np.zeros(20))
    p = build_contact_problem(t.M, t.C, t.G, np.zeros((0, 20)), np.zeros(20), np.zeros(14), 1e-3, 0.6)
    assert p.n_contacts == 0
    sol = solve_contact_impulses(p)
    assert sol.lam.shape == (0,) and sol.converged


def test_build_problem_rejects_bad_step(model):
    t = dynamics_terms(model, default_stance(model), np.zeros(20))
    with pytest.raises(ValueError):
        build_contact_problem(t.M, t.C, t.G, t.J_C, np.zeros(20), np.zeros(14), 0.0, 0.6)


def test_free_body_normal_velocity(model):
    h = 1e-3
    t = dynamics_terms(model, default_stance(model), np.zeros(20))
    p = build_contact_problem(t.M, np.zeros(20), t.G, t.J_C, np.zeros(20), np.zeros(14), h, 0.6)
    V0 = p.V0.reshape(4, 3)
    assert np.allclose(V0[:, 0], -h * model.gravity, atol=1e-14)
    assert np.allclose(V0[:, 1:], 0.0, atol=1e-14)


def test_problem_matrix_symmetric_psd(model):
    rng = np.random.default_rng(0)
    for _ in range(50):
        q, v = random_q(rng), random_qdot(rng)
        t = dynamics_terms(model, q, v)
        p = build_contact_problem(t.M, t.C, t.G, t.J_C, v, np.zeros(14), 1e-3, 0.6)
        assert np.array_equal(p.A, p.A.T)
        assert np.linalg.eigvalsh(p.A)[0] >= -1e-10


@pytest.mark.parametrize("V0, mu, x, lam, V", HAND_CASES)
def test_parameterize_hand_cases(V0, mu, x, lam, V):
    l, v, _ = parameterize(np.array(x), mu)
    assert np.allclose(l, lam, atol=1e-15)
    assert np.allclose(v, V, atol=1e-15)


@pytest.mark.parametrize("V0, mu, x, lam, V", HAND_CASES)
def test_residual_zero_at_hand_solutions(V0, mu, x, lam, V):
    p = ContactProblem(2 * np.eye(3), np.array(V0), mu, 1e-3)
    assert np.abs(residual(np.array(x), p)).max() < 1e-15


@pytest.mark.parametrize("V0, mu, x, lam, V", HAND_CASES)
def test_solver_hand_cases(V0, mu, x, lam, V):
    p = ContactProblem(2 * np.eye(3), np.array(V0), mu, 1e-3)
    sol = solve_contact_impulses(p)
    assert sol.converged and sol.residual_norm < 1e-10
    assert np.abs(sol.lam - lam).max() < 1e-8


def test_zero_tangent_means_sticking():
    lam, V, s = parameterize(np.array([-0.4, 0.0, 0.0]), 0.5)
    assert s[0] == 1.0
    assert np.array_equal(lam, [0.4, 0.0, 0.0]) and np.array_equal(V, [0.0, 0.0, 0.0])


@settings(max_examples=300, deadline=None)
@given(x=st.lists(st.floats(-10, 10), min_size=3, max_size=12).filter(lambda v: len(v) % 3 == 0),
       mu=st.floats(0.0, 2.0))
def test_parameterization_identity_and_cone(x, mu):
    x = np.array(x)
    lam, V, _ = parameterize(x, mu)
    assert np.abs(V - (lam + x)).max() <= 1e-15 * (1 + np.abs(x).max())
    for l, v in zip(lam.reshape(-1, 3), V.reshape(-1, 3)):
        assert l[0] >= 0 and v[0] >= 0 and l[0] * v[0] == 0
        assert np.hypot(*l[1:]) <= mu * l[0] + 1e-12
        assert l[1:] @ v[1:] <= 1e-12


def random_problem(rng, c):
    B = rng.normal(size=(3 * c, 3 * c))
    A = B @ B.T / (3 * c) + 0.1 * np.eye(3 * c)
    return ContactProblem(A, rng.uniform(-1, 1, 3 * c), rng.uniform(0.1, 1.0), 1e-3)


def check_solution(p, sol, bias=0.0, tol=1e-8):
    assert np.abs(p.A @ sol.lam + p.V0 - sol.V).max() <= sol.residual_norm + 1e-15
    for l, v in zip(sol.lam.reshape(-1, 3), sol.V.reshape(-1, 3)):
        assert l[0] >= 0
        assert v[0] >= -bias - tol
        assert abs(l[0] * v[0]) <= tol
        lt, vt = l[1:], v[1:]
        assert np.linalg.norm(lt) <= p.mu * l[0] + tol
        assert lt @ vt <= tol
        if np.linalg.norm(lt) > 1e-9 and np.linalg.norm(vt) > 1e-9:
            cosang = -(lt @ vt) / (np.linalg.norm(lt) * np.linalg.norm(vt))
            assert np.arccos(min(1.0, cosang)) <= 1e-6


def test_random_problems_converge_and_satisfy_constraints():
    rng = np.random.default_rng(1)
    for _ in range(400):
        p = random_problem(rng, int(rng.integers(1, 5)))
        sol = solve_contact_impulses(p)
        assert sol.converged, sol.residual_norm
        check_solution(p, sol)


GRID = np.stack(np.meshgrid(*[np.linspace(-10, 10, 41)] * 3, indexing="ij"), -1).reshape(-1, 3)


def grid_oracle(p, n_refine=5):
    """Brute force: evaluate |r|^2 on a grid over [-10, 10]^3 and polish the best cells."""
    lam_n = np.maximum(0.0, -GRID[:, 0])
    nt = np.hypot(GRID[:, 1], GRID[:, 2])
    s = np.ones(len(GRID))
    nz = nt > 0
    s[nz] = np.minimum(1.0, p.mu * lam_n[nz] / nt[nz])
    lam = np.column_stack([lam_n, -s[:, None] * GRID[:, 1:]])
    R = lam @ p.A.T + p.V0 - (lam + GRID)
    best = None
    for i in np.argsort((R * R).sum(axis=1))[:n_refine]:
        sol = least_squares(lambda x: residual(x, p), GRID[i], method="lm",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if best is None or sol.cost < best.cost:
            best = sol
    return parameterize(best.x, p.mu)[0], np.sqrt(2 * best.cost)


def random_single_problem(rng):
    B = rng.normal(size=(3, 3))
    return ContactProblem(B @ B.T / 3 + 0.2 * np.eye(3), rng.uniform(-1, 1, 3),
                          rng.uniform(0.1, 1.0), 1e-3)


def test_single_contact_matches_grid_oracle():
    rng = np.random.default_rng(2)
    for _ in range(40):
        p = random_single_problem(rng)
        lam_o, r_o = grid_oracle(p)
        assert r_o < 1e-9
        assert np.abs(solve_contact_impulses(p).lam - lam_o).max() < 1e-4


def test_iteration_cap_returns_best_iterate(caplog):
    rng = np.random.default_rng(3)
    p = random_problem(rng, 4)
    with caplog.at_level(logging.WARNING, logger="quadsim.contact"):
        sol = solve_contact_impulses(p, max_iter=1, tol=1e-300)
    assert not sol.converged
    assert np.isfinite(sol.residual_norm)
    assert any("did not converge" in r.getMessage() for r in caplog.records)


def test_warm_start_memory_resets_on_active_set_change():
    p = ContactProblem(2 * np.eye(3), np.array([-1.0, 0.5, 0.0]), 0.6, 1e-3)
    solver = ContactSolver()
    first = solver.solve(p, (0,))
    again = solver.solve(p, (0,))
    assert again.iterations == 0
    moved = solver.solve(p, (1,))
    assert moved.iterations == first.iterations


def test_warm_start_reduces_iterations(model):
    sc = drop_scenario(model, duration=1.0)
    cold = run(model, sc.__class__(**{**sc.__dict__, "warm_start": False}))
    warm = run(model, sc)
    ic = np.array(cold.solver_iters)
    iw = np.array(warm.solver_iters)
    assert np.median(iw[iw > 0]) < np.median(ic[ic > 0])


def test_impulse_scales_with_step(model):
    """Doubling h doubles the impulse that holds a robot standing at rest."""
    q = default_stance(model)
    t = dynamics_terms(model, q, np.zeros(20))
    lam = []
    for h in (1e-3, 2e-3):
        p = build_contact_problem(t.M, t.C, t.G, t.J_C, np.zeros(20), np.zeros(14), h, model.mu)
        sol = solve_contact_impulses(p)
        assert sol.converged
        lam.append(sol.lam)
    assert np.all(lam[0].reshape(4, 3)[:, 0] > 0)
    assert np.allclose(lam[1], 2 * lam[0], rtol=1e-8, atol=1e-12)
