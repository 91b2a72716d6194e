import numpy as np
import pytest

from robustqoc.nlp import Constraint, NLPProblem, SolverOptions, check_gradient, solve


def quadratic(x):
    return float(x @ x), 2 * x


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a**2) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a**2), 200 * (b - a**2)])
    return float(f), g


def test_equality_projection():
    p = NLPProblem(4, quadratic, eq_constraints=[Constraint.linear([[1, 0, 0, 0]], [1.0])])
    rep = solve(p, np.array([0.3, -1.0, 2.0, 0.5]))
    assert rep.converged
    assert np.allclose(rep.x, [1, 0, 0, 0], atol=1e-6)
    assert rep.objective == pytest.approx(1.0, abs=1e-6)


def test_active_box_bound():
    p = NLPProblem(1, lambda x: (float(x[0] ** 2), 2 * x), lower=np.array([2.0]))
    rep = solve(p, np.array([5.0]))
    assert rep.converged
    assert rep.x[0] == pytest.approx(2.0)


def test_initial_point_is_projected():
    p = NLPProblem(2, quadratic, lower=np.array([1.0, -np.inf]), upper=np.array([3.0, np.inf]))
    rep = solve(p, np.array([-10.0, 4.0]))
    assert rep.converged
    assert np.allclose(rep.x, [1.0, 0.0], atol=1e-6)


def test_rosenbrock_with_equality_matches_grid():
    p = NLPProblem(2, rosenbrock, eq_constraints=[Constraint.linear([[1, 1]], [1.0])])
    rep = solve(p, np.array([-1.5, 1.8]))
    assert rep.converged
    # the constraint leaves one free coordinate: brute force along it on [-2, 2]
    a = np.linspace(-2, 2, 400001)
    vals = (1 - a) ** 2 + 100 * ((1 - a) - a**2) ** 2
    best = a[np.argmin(vals)]
    assert rep.x[0] == pytest.approx(best, abs=1e-4)
    assert rep.x[1] == pytest.approx(1 - best, abs=1e-4)


def test_nonlinear_inequality():
    # min (x-2)^2 + (y-1)^2  s.t.  x^2 + y^2 <= 1
    def obj(x):
        r = x - np.array([2.0, 1.0])
        return float(r @ r), 2 * r

    def disk(x):
        return np.array([x @ x - 1.0]), lambda w: 2 * x * w[0]

    p = NLPProblem(2, obj, ineq_constraints=[Constraint(disk, 1, "disk")])
    rep = solve(p, np.zeros(2))
    assert rep.converged
    assert np.allclose(rep.x, np.array([2.0, 1.0]) / np.sqrt(5), atol=1e-5)
    assert rep.ineq_multipliers[0] > 0


def test_inactive_inequality_has_zero_multiplier():
    def disk(x):
        return np.array([x @ x - 4.0]), lambda w: 2 * x * w[0]

    rep = solve(NLPProblem(2, quadratic, ineq_constraints=[Constraint(disk, 1)]), np.array([1.0, 1.0]))
    assert rep.converged
    assert np.allclose(rep.x, 0, atol=1e-6)
    assert rep.ineq_multipliers[0] == pytest.approx(0.0)


def test_nonlinear_equality_with_preconditioner():
    # Jacobian and curvature hooks only change the path, not the answer
    def circle(x):
        return np.array([x @ x - 1.0]), lambda w: 2 * x * w[0]

    def obj(x):
        return float(x[0] + 2 * x[1]), np.array([1.0, 2.0])

    import scipy.sparse

    plain = NLPProblem(2, obj, eq_constraints=[Constraint(circle, 1)])
    hooked = NLPProblem(
        2,
        obj,
        eq_constraints=[Constraint(circle, 1, jacobian=lambda x: scipy.sparse.csr_matrix(2 * x[None]))],
        curvature=lambda x: scipy.sparse.identity(2, format="csr") * 0.0,
    )
    expected = -np.array([1.0, 2.0]) / np.sqrt(5)
    for p in (plain, hooked):
        rep = solve(p, np.array([0.3, 0.1]))
        assert rep.converged
        assert np.allclose(rep.x, expected, atol=1e-5)


def test_report_histories_and_feasibility():
    p = NLPProblem(3, quadratic, eq_constraints=[Constraint.linear([[1, 1, 1]], [3.0])])
    rep = solve(p, np.zeros(3), SolverOptions(record_iterates=True))
    assert rep.converged
    assert len(rep.objective_history) == len(rep.violation_history) == len(rep.iterate_snapshots)
    assert rep.max_violation < SolverOptions().tol_feas
    assert rep.kkt_residual < SolverOptions().tol_opt
    for start, end, _ in rep.outer_history:
        assert end <= start + 1e-10


def test_determinism():
    p = NLPProblem(2, rosenbrock, eq_constraints=[Constraint.linear([[1, 1]], [1.0])])
    a = solve(p, np.array([0.5, -0.3]))
    b = solve(p, np.array([0.5, -0.3]))
    assert np.array_equal(a.x, b.x)
    assert a.objective_history == b.objective_history


def test_non_finite_objective_stalls():
    p = NLPProblem(1, lambda x: (float("nan"), np.zeros(1)))
    rep = solve(p, np.zeros(1))
    assert rep.status == "stalled"
    assert "non-finite" in rep.message


def test_infeasible_problem_is_not_converged():
    p = NLPProblem(
        1,
        lambda x: (0.0, np.zeros(1)),
        eq_constraints=[Constraint.linear([[1.0]], [5.0])],
        upper=np.array([1.0]),
    )
    rep = solve(p, np.zeros(1), SolverOptions(max_outer=15))
    assert not rep.converged
    assert rep.status in ("infeasible", "max_iter", "stalled")


def test_options_from_dict():
    opts = SolverOptions.from_dict({"tol_opt": 1e-5, "max_outer": 3})
    assert opts.tol_opt == 1e-5 and opts.max_outer == 3
    with pytest.raises(ValueError):
        SolverOptions.from_dict({"bogus": 1})


def test_problem_validation():
    with pytest.raises(ValueError):
        NLPProblem(2, quadratic, lower=np.ones(2), upper=np.zeros(2))
    with pytest.raises(ValueError):
        NLPProblem(2, quadratic, lower=np.ones(3))


def test_check_gradient_quadratic_form():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(5, 5))
    A = A @ A.T

    def f(x):
        return float(x @ A @ x), 2 * A @ x

    assert check_gradient(f, rng.normal(size=5)) < 1e-8


def test_check_gradient_detects_wrong_gradient():
    def f(x):
        return float(x @ x), 3 * x

    assert check_gradient(f, np.array([1.0, -2.0])) > 0.1
    assert check_gradient(f, np.array([1.0, -2.0]), indices=[1]) > 0.1
