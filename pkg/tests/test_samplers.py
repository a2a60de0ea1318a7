import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import eval_chebyt, eval_chebyu

from poissonpnp.diagnostics import WelfordAccumulator
from poissonpnp.likelihood import PoissonModel, simulate
from poissonpnp.mirror import BurgMap
from poissonpnp.oracle import GaussianTarget
from poissonpnp.priors import GaussianDenoiser
from poissonpnp.samplers import (
    BoxConstraint, ChainConfig, ChainDivergence, ChainState, chain_rng, chebyshev_t, chebyshev_t_prime,
    delta_l, initial_state, make_kernel, project_box, reflect_box, resolve_delta, run_chain, run_chains,
    skrock_coeffs, step_pnp_mla, step_ppnp_ula, step_rpnp_skrock, step_rpnp_ula,
)
from poissonpnp.tensor import BlurOperator, gaussian_kernel

UNIT = BoxConstraint(0.0, 1.0)
WIDE = BoxConstraint(-1e6, 1e6)


class Flat:
    def grad_log_lik(self, x):
        return np.zeros_like(x)


class ConstantPull:
    def __init__(self, g):
        self.g = g

    def grad_log_lik(self, x):
        return np.full_like(x, self.g)


class Broken:
    def __init__(self, after):
        self.calls, self.after = 0, after

    def grad_log_lik(self, x):
        self.calls += 1
        return np.full_like(x, np.nan if self.calls > self.after else 0.0)


def test_project_examples():
    np.testing.assert_array_equal(project_box(UNIT, np.array([-0.5, 0.5, 1.5])), [0.0, 0.5, 1.0])


def test_reflect_examples():
    np.testing.assert_allclose(reflect_box(UNIT, np.array([-0.3, 1.2, 0.4])), [0.3, 0.8, 0.4])


@settings(max_examples=200)
@given(
    x=st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=10),
    a=st.floats(-5, 5), w=st.floats(0.01, 10),
)
def test_box_operators_map_into_box(x, a, w):
    c = BoxConstraint(a, a + w)
    x = np.array(x)
    r, p = c.reflect(x), c.project(x)
    assert c.contains(r) and c.contains(p)
    np.testing.assert_array_equal(c.project(p), p)
    single = 2 * np.clip(x, c.lower, c.upper) - x
    ok = (single >= c.lower) & (single <= c.upper)
    np.testing.assert_array_equal(r[ok], single[ok])


def test_box_validation():
    with pytest.raises(ValueError):
        BoxConstraint(1.0, 1.0)


def test_chain_config_validation():
    with pytest.raises(ValueError):
        ChainConfig(delta=0.0, n_iter=1)
    with pytest.raises(ValueError):
        ChainConfig(delta=0.1, n_iter=1, s=1)
    with pytest.raises(ValueError):
        ChainConfig(delta=0.1, n_iter=1, thin=0)


# ---------------------------------------------------------------- single steps


@pytest.mark.parametrize("kernel", ["rpnp-ula", "ppnp-ula", "rpnp-skrock"])
def test_zero_drift_zero_noise_is_fixed_point(kernel):
    x = np.random.default_rng(0).uniform(0.1, 0.9, (1, 3, 3))
    k = make_kernel(kernel, Flat(), None, ChainConfig(delta=0.3, n_iter=1), UNIT)
    # SKROCK telescopes through nu_j + k_j = 1, so only rounding survives
    np.testing.assert_allclose(k.step(x, np.zeros_like(x)), x, rtol=0, atol=1e-14)


def test_mla_zero_drift_zero_noise_is_fixed_point():
    x = np.random.default_rng(1).uniform(0.1, 5.0, 6)
    k = make_kernel("pnp-mla", Flat(), None, ChainConfig(delta=0.3, n_iter=1), mirror=BurgMap())
    np.testing.assert_allclose(k.step(x, np.zeros_like(x)), x, rtol=1e-15)


def test_reflection_and_projection_after_drift():
    x = np.array([0.2])
    cfg = ChainConfig(delta=0.5, n_iter=1)
    # drift lands at 0.2 - 0.5 * 1.0 = -0.3
    r = make_kernel("rpnp-ula", ConstantPull(-1.0), None, cfg, UNIT).step(x, np.zeros(1))
    p = make_kernel("ppnp-ula", ConstantPull(-1.0), None, cfg, UNIT).step(x, np.zeros(1))
    np.testing.assert_allclose(r, [0.3])
    np.testing.assert_array_equal(p, [0.0])
    far = make_kernel("rpnp-ula", ConstantPull(-7.0), None, cfg, UNIT).step(x, np.zeros(1))
    assert UNIT.contains(far)


def test_step_functions_advance_state():
    target = GaussianTarget(0.0, 1.0)
    cfg = ChainConfig(delta=0.01, n_iter=1)
    for fn in (step_rpnp_ula, step_ppnp_ula, step_rpnp_skrock):
        s = ChainState(x=np.zeros(2), k=0, rng=chain_rng(0))
        s2 = fn(s, target, None, WIDE, cfg)
        assert s2.k == 1 and s2.x.shape == (2,) and not np.array_equal(s2.x, s.x)
    s = ChainState(x=np.ones(2), k=4, rng=chain_rng(0))
    s2 = step_pnp_mla(s, ConstantPull(0.0), None, BurgMap(), cfg)
    assert s2.k == 5 and np.all(s2.x > 0)


def test_divergence_reports_iteration():
    cfg = ChainConfig(delta=0.1, n_iter=50)
    with pytest.raises(ChainDivergence) as info:
        run_chain("rpnp-ula", Broken(after=7), None, cfg, constraint=WIDE, x0=np.zeros(1))
    assert info.value.iteration == 8
    assert "iteration 8" in str(info.value)
    with pytest.raises(ChainDivergence) as info:
        run_chain("rpnp-skrock", Broken(after=3), None, cfg, constraint=WIDE, x0=np.zeros(1))
    assert info.value.stage == 4 and info.value.iteration == 1


# ---------------------------------------------------------------- SKROCK


def test_skrock_l_s():
    assert skrock_coeffs(10, 0.05).l_s == pytest.approx(9.5**2 * (2 - 4 / 3 * 0.05) - 1.5, abs=1e-10)
    assert abs(skrock_coeffs(10, 0.05).l_s - 172.98333333333333) < 1e-10


@pytest.mark.parametrize("s", [2, 5, 10, 25, 50])
def test_skrock_coefficient_identities(s):
    c = skrock_coeffs(s, 0.05)
    j = np.arange(2, s + 1)
    assert np.max(np.abs(c.k[2:] - (1 - c.nu[2:]))) <= 1e-14
    t = chebyshev_t(50, c.omega0)
    ref = np.cosh(np.arange(51) * np.arccosh(c.omega0))
    assert np.max(np.abs(t - ref) / ref) < 1e-12
    np.testing.assert_allclose(c.mu[2:], 2 * c.omega1 * c.cheb[j - 1] / c.cheb[j], rtol=1e-15)
    assert c.mu1 == pytest.approx(c.omega1 / c.omega0)
    assert c.nu1 == pytest.approx(s * c.omega1 / 2)
    assert c.k1 == pytest.approx(s * c.omega1 / c.omega0)


def test_chebyshev_derivative():
    x, h = 1.0007, 1e-6
    for n in (2, 7, 10):
        fd = (chebyshev_t(n, x + h)[n] - chebyshev_t(n, x - h)[n]) / (2 * h)
        assert chebyshev_t_prime(n, x) == pytest.approx(fd, rel=1e-7)


def test_skrock_rejects_bad_stage_count():
    with pytest.raises(ValueError):
        skrock_coeffs(1, 0.05)
    with pytest.raises(ValueError):
        skrock_coeffs(10, 0.0)


def linear_stationary_variance(kernel, delta, var=1.0, **cfg):
    """Exact stationary variance of a kernel applied to a Gaussian target with a huge box.

    On a linear drift one step is x' = a x + b z, so the stationary variance is b^2 / (1 - a^2).
    """
    k = make_kernel(kernel, GaussianTarget(0.0, var), None, ChainConfig(delta=delta, n_iter=1, **cfg), WIDE)
    a = k.step(np.ones(1), np.zeros(1))[0]
    b = k.step(np.zeros(1), np.ones(1))[0]
    return b * b / (1 - a * a)


def test_linear_oracle_reproduces_ula_formula():
    assert linear_stationary_variance("rpnp-ula", 0.1) == pytest.approx(1 / (1 - 0.05), rel=1e-12)


@pytest.mark.parametrize("delta", [0.3, 2.0, 4.0, 20.0, 150.0])
def test_skrock_matches_stability_polynomials(delta):
    # for f(x) = -x one step is A(p) x + B(p) sqrt(2 delta) z with p = -delta and
    # A = T_s(w0 + w1 p) / T_s(w0), B = U_{s-1}(w0 + w1 p) / U_{s-1}(w0) (1 + w1 p / 2)
    s, c = 10, skrock_coeffs(10, 0.05)
    k = make_kernel("rpnp-skrock", GaussianTarget(0.0, 1.0), None, ChainConfig(delta=delta, n_iter=1), WIDE)
    p = -delta
    A = eval_chebyt(s, c.omega0 + c.omega1 * p) / eval_chebyt(s, c.omega0)
    B = eval_chebyu(s - 1, c.omega0 + c.omega1 * p) / eval_chebyu(s - 1, c.omega0) * (1 + c.omega1 * p / 2)
    assert k.step(np.ones(1), np.zeros(1))[0] == pytest.approx(A, rel=1e-10, abs=1e-13)
    assert k.step(np.zeros(1), np.ones(1))[0] == pytest.approx(B * np.sqrt(2 * delta), rel=1e-10, abs=1e-13)
    assert abs(A) < 1


def test_skrock_bias_decreases_with_step():
    errs = [abs(linear_stationary_variance("rpnp-skrock", d) - 1.0) for d in (1.0, 0.5, 0.25)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] < 0.05


def test_literal_box_signs_flip_the_likelihood_term():
    ascent = linear_stationary_variance("rpnp-skrock", 0.5)
    literal = make_kernel(
        "rpnp-skrock", GaussianTarget(0.0, 1.0), None, ChainConfig(delta=0.5, n_iter=1, literal_box_signs=True), WIDE
    )
    # descent on log-density pushes away from the mode
    assert abs(literal.step(np.ones(1), np.zeros(1))[0]) > 1.0
    assert ascent == pytest.approx(1.0, rel=0.05)


def test_skrock_gaussian_chain():
    cfg = ChainConfig(delta=0.5, n_iter=100_000, burn_in=1000, seed=4)
    acc = WelfordAccumulator()
    run_chain("rpnp-skrock", GaussianTarget(0.0, 1.0), None, cfg, [acc], constraint=WIDE, x0=np.zeros(1))
    exact = linear_stationary_variance("rpnp-skrock", 0.5)
    assert abs(acc.mean[0]) < 0.05
    assert acc.variance()[0] == pytest.approx(exact, rel=0.05)
    assert acc.variance()[0] == pytest.approx(1.0, rel=0.05)


# ---------------------------------------------------------------- chains


def small_problem(seed=0):
    x = np.random.default_rng(seed).uniform(0.2, 0.8, (1, 6, 6))
    op = BlurOperator(gaussian_kernel(3, 0.7), x.shape)
    y = simulate(x, op, 20.0, seed)
    return PoissonModel(op, 20.0, 0.05, y), GaussianDenoiser(0.5, 0.05, 0.01)


def test_ppnp_rpnp_identical_in_interior():
    cfg = ChainConfig(delta=1e-3, n_iter=200, seed=9)
    traj = {}
    for kern in ("rpnp-ula", "ppnp-ula"):
        xs = []
        run_chain(kern, GaussianTarget(0.0, 1.0), None, cfg, constraint=BoxConstraint(-50, 50),
                  x0=np.zeros(3), callback=lambda k, x: xs.append(x.copy()))
        traj[kern] = np.array(xs)
    np.testing.assert_array_equal(traj["rpnp-ula"], traj["ppnp-ula"])


def test_run_chain_deterministic():
    model, d = small_problem()
    cfg = ChainConfig(delta=resolve_delta("rpnp-skrock", 5.0, model, d), n_iter=300, burn_in=50, seed=3)
    reps = []
    for _ in range(2):
        acc = WelfordAccumulator()
        r = run_chain("rpnp-skrock", model, d, cfg, [acc], constraint=UNIT)
        reps.append((r.x_final.tobytes(), acc.mean.tobytes(), acc.m2.tobytes(), r.n_samples, r.nfe))
    assert reps[0] == reps[1]


def test_noise_batching_matches_single_draws():
    cfg = ChainConfig(delta=0.05, n_iter=5000, seed=11)
    xs = []
    run_chain("rpnp-ula", GaussianTarget(0.0, 1.0), None, cfg, constraint=WIDE, x0=np.zeros(2),
              callback=lambda k, x: xs.append(x.copy()))
    state = ChainState(x=np.zeros(2), k=0, rng=chain_rng(11))
    for _ in range(5000):
        state = step_rpnp_ula(state, GaussianTarget(0.0, 1.0), None, WIDE, cfg)
    np.testing.assert_array_equal(state.x, xs[-1])


def test_thinning_and_burn_in_counts():
    cfg = ChainConfig(delta=0.1, n_iter=1200, burn_in=200, thin=10)
    acc = WelfordAccumulator()
    r = run_chain("rpnp-ula", GaussianTarget(), None, cfg, [acc], constraint=WIDE, x0=np.zeros(1))
    assert r.n_samples == 100 == acc.count
    empty = WelfordAccumulator()
    r = run_chain("rpnp-ula", GaussianTarget(), None, ChainConfig(delta=0.1, n_iter=200, burn_in=200), [empty],
                  constraint=WIDE, x0=np.zeros(1))
    assert r.n_samples == 0 and empty.count == 0 and r.status == "insufficient samples" and r.mean is None


@pytest.mark.parametrize("kernel", ["rpnp-ula", "ppnp-ula", "rpnp-skrock"])
def test_euclidean_states_stay_in_box(kernel):
    model, d = small_problem(1)
    cfg = ChainConfig(delta=resolve_delta(kernel, 50.0, model, d), n_iter=300, seed=2)
    inside = []
    run_chain(kernel, model, d, cfg, constraint=UNIT, callback=lambda k, x: inside.append(UNIT.contains(x)))
    assert all(inside)


def test_mirror_states_stay_positive():
    model, d = small_problem(2)
    cfg = ChainConfig(delta=1e-4, n_iter=300, seed=2)
    pos = []
    run_chain("pnp-mla", model, d, cfg, callback=lambda k, x: pos.append(bool(np.all(x > 0))))
    assert all(pos)


def test_dual_clamp_keeps_iterates_positive():
    # strong upward pull drives the dual variable towards zero
    k = make_kernel("pnp-mla", ConstantPull(1e12), None, ChainConfig(delta=1.0, n_iter=1), mirror=BurgMap())
    x = k.step(np.ones(3), np.zeros(3))
    np.testing.assert_allclose(x, 1e8)


def test_chain_report_fields():
    model, d = small_problem()
    cfg = ChainConfig(delta=resolve_delta("rpnp-skrock", 1.0, model, d), n_iter=20, burn_in=5)
    r = run_chain("rpnp-skrock", model, d, cfg, [WelfordAccumulator()], constraint=UNIT)
    assert r.nfe == 20 * 10
    rep = r.as_dict()
    for key in ("kernel", "status", "delta", "n_iter", "n_samples", "nfe", "wall_clock_s", "iterations_per_sec"):
        assert key in rep
    assert r.mean.shape == model.y.shape and r.std.shape == model.y.shape


def test_initial_state():
    model, _ = small_problem()
    x0 = initial_state("rpnp-ula", model, UNIT)
    assert UNIT.contains(x0)
    ref = model.operator.adjoint(model.y) / (model.alpha * model.operator.norm_sq())
    np.testing.assert_allclose(x0, np.clip(ref, 0, 1))
    assert np.all(initial_state("pnp-mla", model, None) >= 0.01)


def test_step_size_rules():
    model, d = small_problem()
    dl = 1.0 / (model.lipschitz_bound() + d.lipschitz / d.epsilon)
    assert delta_l(model, d) == pytest.approx(dl)
    assert resolve_delta("rpnp-ula", 3.0, model, d) == pytest.approx(3 * dl)
    assert resolve_delta("pnp-mla", 3.0, model, d) == pytest.approx(3 * dl)
    assert resolve_delta("rpnp-skrock", 3.0, model, d) == pytest.approx(3 * skrock_coeffs(10, 0.05).l_s * dl)


def test_large_step_warns_but_runs(caplog):
    model, d = small_problem()
    cfg = ChainConfig(delta=resolve_delta("rpnp-ula", 10.0, model, d), n_iter=3)
    with caplog.at_level(logging.WARNING, logger="poissonpnp.samplers"):
        r = run_chain("rpnp-ula", model, d, cfg, constraint=UNIT)
    assert r.n_iter == 3 and "exceeds" in caplog.text


def test_unknown_kernel():
    with pytest.raises(ValueError, match="unknown kernel"):
        make_kernel("hmc", Flat(), None, ChainConfig(delta=0.1, n_iter=1))


def test_chain_streams_are_independent():
    a = chain_rng(5, 0).standard_normal(1000)
    b = chain_rng(5, 1).standard_normal(1000)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.15
    np.testing.assert_array_equal(a, chain_rng(5, 0).standard_normal(1000))


def test_run_chains_parallel_matches_serial():
    cfg = ChainConfig(delta=0.1, n_iter=2000, burn_in=100, seed=1)
    kwargs = dict(constraint=WIDE, x0=np.zeros(2))
    rep_p, acc_p = run_chains("rpnp-ula", GaussianTarget(), None, cfg, 3, lambda: [WelfordAccumulator()], workers=3, **kwargs)
    rep_s, acc_s = run_chains("rpnp-ula", GaussianTarget(), None, cfg, 3, lambda: [WelfordAccumulator()], **kwargs)
    for ap, as_ in zip(acc_p, acc_s):
        np.testing.assert_array_equal(ap[0].mean, as_[0].mean)
    assert len({r.x_final.tobytes() for r in rep_p}) == 3
    merged = acc_p[0][0].merge(acc_p[1][0]).merge(acc_p[2][0])
    assert merged.count == 3 * 1900
