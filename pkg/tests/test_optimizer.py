import math

import numpy as np
import pytest

from gebo.optimizer import BoConfig, run, stop_check
from gebo.problems import Problem, make_problem
from gebo.trace import EvalRecord, RunTrace


class Parabola(Problem):
    name = "parabola"
    n_d = 1

    def exact(self, x):
        x = float(np.ravel(x)[0])
        return (x - 1.0) ** 2, np.array([2.0 * (x - 1.0)])


class FailingOracle(Parabola):
    """Raises on ``n_fail`` consecutive calls after the first."""

    def __init__(self, n_fail):
        self.calls = 0
        self.n_fail = n_fail

    def exact(self, x):
        self.calls += 1
        if 2 <= self.calls < 2 + self.n_fail:
            raise FloatingPointError("oracle blew up")
        return super().exact(x)


def make_trace(f_values, grad_norms):
    trace = RunTrace(0, "bo", "test")
    best = math.inf
    for i, (f, g) in enumerate(zip(f_values, grad_norms)):
        best = min(best, f)
        trace.records.append(EvalRecord(i, i + 1, np.zeros(1), f, g, best, g, g / grad_norms[0]))
    return trace


# --- stop rules -----------------------------------------------------------


def test_first_iteration_continues():
    assert stop_check(make_trace([1.0], [2.0]), BoConfig()) == "continue"


def test_converged_just_below_threshold():
    assert stop_check(make_trace([1.0, 0.5], [2.0, 2.0 * 0.99e-10]), BoConfig()) == "converged"
    assert stop_check(make_trace([1.0, 0.5], [2.0, 2.0 * 1.01e-10]), BoConfig()) == "continue"


def test_convergence_uses_best_point():
    # the newest point is tiny in gradient but not the best
    assert stop_check(make_trace([1.0, 0.5, 0.7], [2.0, 1.0, 1e-12]), BoConfig()) == "continue"


def test_stalls_after_twenty_unimproved_evaluations():
    f = [1.0, 0.5] + [0.6] * 20
    assert stop_check(make_trace(f, [1.0] * 22), BoConfig()) == "stalled"
    assert stop_check(make_trace(f[:-1], [1.0] * 21), BoConfig()) == "continue"


def test_budget():
    cfg = BoConfig(max_evals=5)
    assert stop_check(make_trace([5.0, 4.0, 3.0, 2.0, 1.0], [1.0] * 5), cfg) == "budget_exhausted"


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        stop_check(RunTrace(0, "bo", "x"), BoConfig())


# --- runs -----------------------------------------------------------------


def test_parabola_converges_quickly():
    trace = run(Parabola(), [0.0], BoConfig(max_evals=60), rng_seed=0)
    assert trace.status == "converged"
    assert trace.n_feval <= 60
    assert trace.records[-1].opt_ratio <= 1e-10


@pytest.fixture(scope="module")
def quad_trace():
    return run(make_problem("quad:3"), [3.0, -2.0, 0.5], BoConfig(max_evals=40), rng_seed=5)


def test_f_best_non_increasing(quad_trace):
    fb = [r.f_best for r in quad_trace.records]
    assert all(b <= a for a, b in zip(fb, fb[1:]))
    assert fb[-1] == min(r.f for r in quad_trace.records)


def test_points_respect_circular_region(quad_trace):
    recs = quad_trace.records
    for k in range(1, len(recs)):
        prev = recs[:k]
        x_best = min(prev, key=lambda r: (r.f, r.n_feval)).x
        assert np.sum((recs[k].x - x_best) ** 2) <= recs[k].u_c + 1e-8


def test_one_evaluation_per_iteration(quad_trace):
    assert [r.n_feval for r in quad_trace.records] == list(range(1, len(quad_trace.records) + 1))


def test_deterministic(quad_trace):
    again = run(make_problem("quad:3"), [3.0, -2.0, 0.5], BoConfig(max_evals=40), rng_seed=5)
    assert again.records == quad_trace.records
    assert again.status == quad_trace.status


def test_noisy_mode_reports_noise_free_optimality():
    cfg = BoConfig.from_flat({"noisy_mode": True, "max_evals": 15})
    trace = run(make_problem("quad:2", grad_noise=1e-2, seed=3), [2.0, 0.0], cfg, rng_seed=1)
    exact = make_problem("quad:2")
    for k, r in enumerate(trace.records):
        best = min(trace.records[: k + 1], key=lambda q: (q.f, q.n_feval))
        assert r.opt_norm == pytest.approx(np.linalg.norm(exact(best.x)[1]), rel=1e-12)
    assert any(math.isfinite(r.sigma_grad_hat) for r in trace.records[1:])


def test_single_oracle_failure_is_retried():
    trace = run(FailingOracle(1), [0.0], BoConfig(max_evals=10), rng_seed=0)
    assert trace.status != "failed"
    assert "oracle_retry" in trace.records[1].flags


def test_two_oracle_failures_abort():
    trace = run(FailingOracle(2), [0.0], BoConfig(max_evals=10), rng_seed=0)
    assert trace.status == "failed"
    assert len(trace.records) == 1


def test_flat_config():
    cfg = BoConfig.from_flat({"kernel": "matern", "rho_inc": 3.0, "n_lhs": 10, "acq_n_lhs": 7, "dup_tol": 1e-9})
    assert cfg.kernel.name == "matern"
    assert cfg.tr.rho_inc == 3.0
    assert cfg.hp.n_lhs == 10
    assert cfg.acq.n_lhs == 7
    assert cfg.acq.dup_tol == 1e-9
    with pytest.raises(KeyError):
        BoConfig.from_flat({"bogus": 1})
    with pytest.raises(ValueError):
        BoConfig(cond_max=1.0)
