import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from qsdctl.errors import (ModelError, NonConvergenceError, SolverError,
                           ThresholdNotFoundError)
from qsdctl.expressions import parse_rate_expression as rx
from qsdctl.generator import build_generator
from qsdctl.models import (Action, ControlSet, HypothesisConstants,
                           MarkovControl, ModelSpec, ProgenyDist)
from qsdctl.qsd import (conditional_evolution, eta_limit_check,
                        lyapunov_threshold, solve_qsd, survival_profile,
                        total_variation, truncation_sweep)

from test_models import make_model

# eigen-solved rates of the bundled models, frozen for regression; the
# dense-eigendecomposition cross-checks below keep them honest
LOGISTIC_LAM_200 = 1.148765241261827
GEOMETRIC_LAM_100 = 0.7362339585924322
CULLING_LAM_KEEP = 0.474608065007655
CULLING_LAM_CULL = 0.9290248887341586


def dense_triple(active):
    """Oracle: quasi-stationary triple by full eigendecomposition."""
    w, vl, vr = scipy.linalg.eig(active, left=True, right=True)
    i = int(np.argmax(w.real))
    lam = -float(w[i].real)
    pi = vl[:, i].real
    pi = np.abs(pi) / np.abs(pi).sum()
    eta = np.abs(vr[:, i].real)
    eta = eta / float(pi @ eta)
    return lam, pi, eta


class TestPureDeathClosedForms:
    def test_rate_is_one(self, pd_qsd):
        assert pd_qsd.lam == pytest.approx(1.0, abs=1e-10)

    def test_profile_is_point_mass_at_one(self, pd_qsd):
        assert pd_qsd.pi[0] == pytest.approx(1.0, abs=1e-9)
        assert pd_qsd.pi[1:].sum() == pytest.approx(0.0, abs=1e-9)

    def test_survival_shape_is_linear(self, pd_qsd):
        np.testing.assert_allclose(pd_qsd.eta, np.arange(1, 201),
                                   rtol=1e-8, atol=1e-8)

    def test_residuals_meet_contract(self, pd_qsd):
        assert pd_qsd.residual_left <= 1e-10
        assert pd_qsd.residual_right <= 1e-10

    def test_no_reducibility_flag_without_births(self, pd_qsd):
        assert not pd_qsd.reducible_warning


class TestAgainstDenseEig:
    def test_culling_all_controls(self, culling):
        for assignment in [(0,) * 6, (1,) * 6, (0, 1, 0, 1, 0, 1)]:
            gen = build_generator(culling, MarkovControl(assignment), 6)
            sol = solve_qsd(gen)
            lam, pi, eta = dense_triple(gen.active)
            assert sol.lam == pytest.approx(lam, abs=1e-9)
            assert total_variation(sol.pi, pi) < 1e-8
            np.testing.assert_allclose(sol.eta, eta, atol=1e-8)

    def test_geometric(self, geometric_gen, geometric_qsd):
        lam, pi, eta = dense_triple(geometric_gen.active)
        assert geometric_qsd.lam == pytest.approx(lam, abs=1e-8)
        assert total_variation(geometric_qsd.pi, pi) < 1e-7

    def test_logistic(self, logistic_gen, logistic_qsd):
        lam, _, _ = dense_triple(logistic_gen.active)
        assert logistic_qsd.lam == pytest.approx(lam, abs=1e-8)


class TestRegressionRates:
    def test_logistic_frozen(self, logistic_qsd):
        assert logistic_qsd.lam == pytest.approx(LOGISTIC_LAM_200, abs=1e-9)

    def test_geometric_frozen(self, geometric_qsd):
        assert geometric_qsd.lam == pytest.approx(GEOMETRIC_LAM_100, abs=1e-9)

    def test_linear_rate_is_death_minus_birth(self, linear):
        gen = build_generator(linear, linear.constant_control(0), 100)
        sol = solve_qsd(gen)
        assert sol.lam == pytest.approx(1.0, abs=1e-9)

    def test_culling_constants(self, culling):
        for a, expect in ((0, CULLING_LAM_KEEP), (1, CULLING_LAM_CULL)):
            gen = build_generator(culling, culling.constant_control(a), 6)
            assert solve_qsd(gen).lam == pytest.approx(expect, abs=1e-9)


class TestDefiningRelations:
    def test_triple_identities(self, culling, geometric_gen, geometric_qsd):
        gen = build_generator(culling, culling.constant_control(1), 6)
        for g, sol in ((gen, solve_qsd(gen)), (geometric_gen, geometric_qsd)):
            a = g.active
            assert sol.pi.sum() == pytest.approx(1.0, abs=1e-12)
            assert float(sol.pi @ sol.eta) == pytest.approx(1.0, rel=1e-10)
            assert np.max(np.abs(sol.pi @ a + sol.lam * sol.pi)) <= 1e-10
            assert np.max(np.abs(a @ sol.eta + sol.lam * sol.eta)) <= 1e-10
            assert np.all(sol.pi >= 0)
            assert np.all(sol.eta >= 0)

    def test_logistic_underflow_flag(self, logistic_qsd):
        # the stationary profile genuinely underflows in the far tail
        assert logistic_qsd.reducible_warning
        assert logistic_qsd.pi[-1] == 0.0
        assert logistic_qsd.pi[:20].sum() > 0.999

    def test_zero_death_rejected(self):
        # states 1..5 cannot die, so extinction is unreachable from them
        m = make_model(death="max(0, n - 5)", d_bar="n",
                       d_lower=None, epsilon=None)
        with pytest.raises(ModelError, match="zero death rate"):
            solve_qsd(build_generator(m, m.constant_control(0, 8), 8))

    def test_iteration_cap(self, culling):
        gen = build_generator(culling, culling.constant_control(0), 6)
        with pytest.raises(NonConvergenceError):
            solve_qsd(gen, tol=1e-13, max_iter=32)


class TestTransient:
    def test_survival_matches_expm(self, culling):
        gen = build_generator(culling, MarkovControl((1, 0, 1, 0, 1, 0)), 6)
        times = [0.3, 0.9, 2.1]
        prof = survival_profile(gen, times)
        for i, t in enumerate(times):
            ref = scipy.linalg.expm(gen.active * t) @ np.ones(6)
            np.testing.assert_allclose(prof[i], ref, atol=1e-12)

    def test_pure_death_survival_closed_form(self, pd_gen):
        # from state 2: two independent unit-rate lifetimes
        t = 1.3
        prof = survival_profile(pd_gen, [t])
        expect = 2 * math.exp(-t) - math.exp(-2 * t)
        assert prof[0, 1] == pytest.approx(expect, abs=1e-12)

    def test_times_validated(self, pd_gen):
        with pytest.raises(SolverError):
            survival_profile(pd_gen, [2.0, 1.0])
        with pytest.raises(SolverError):
            survival_profile(pd_gen, [-1.0])

    def test_conditional_law_is_binomial(self, pd_gen):
        # pure death from 3: alive individuals ~ Binomial(3, e^-t) given >= 1
        t = 0.7
        mu0 = np.zeros(200)
        mu0[2] = 1.0
        evo = conditional_evolution(pd_gen, mu0, t, steps=1)
        p = math.exp(-t)
        ref = np.array([3 * p * (1 - p) ** 2, 3 * p ** 2 * (1 - p), p ** 3])
        ref /= ref.sum()
        np.testing.assert_allclose(evo.laws[-1][:3], ref, atol=1e-12)
        assert evo.laws[-1][3:].sum() == 0.0
        assert evo.survival[-1] == pytest.approx(1 - (1 - p) ** 3, abs=1e-12)

    def test_multistep_matches_single_step(self, culling):
        gen = build_generator(culling, culling.constant_control(0), 6)
        mu0 = np.full(6, 1 / 6)
        one = conditional_evolution(gen, mu0, 2.0, steps=1)
        many = conditional_evolution(gen, mu0, 2.0, steps=8)
        np.testing.assert_allclose(many.laws[-1], one.laws[-1], atol=1e-10)
        assert many.survival[-1] == pytest.approx(one.survival[-1], rel=1e-10)

    def test_long_horizon_survival_no_underflow(self, culling):
        # e^(-lam t) with lam*t ~ 1400 underflows double precision; the
        # log-space mass tracking must survive it
        gen = build_generator(culling, culling.constant_control(1), 6)
        mu0 = np.zeros(6)
        mu0[0] = 1.0
        evo = conditional_evolution(gen, mu0, 1500.0, steps=200)
        assert evo.survival[-1] == 0.0 or evo.survival[-1] < 1e-290
        assert evo.laws[-1].sum() == pytest.approx(1.0, abs=1e-9)


class TestEtaLimit:
    def test_deviation_decays_and_rate_is_gap(self, culling):
        gen = build_generator(culling, culling.constant_control(0), 6)
        sol = solve_qsd(gen)
        diag = eta_limit_check(gen, sol, [1.0, 2.0, 4.0, 6.0],
                               tv_probes=[1, 5])
        dev = diag.eta_deviation
        assert all(a > b for a, b in zip(dev, dev[1:]))
        assert dev[-1] < 1e-6
        for probe in (1, 5):
            tvs = diag.tv_to_pi[probe]
            assert tvs[-1] < 1e-7
        # the fitted decay rate approximates the spectral gap
        w = np.sort(scipy.linalg.eigvals(gen.active).real)[::-1]
        gap = float(w[0] - w[1])
        assert diag.fitted_decay_rate == pytest.approx(gap, rel=0.05)


class TestLyapunovThreshold:
    def test_logistic_threshold(self, logistic, logistic_qsd):
        thr = lyapunov_threshold(logistic, logistic_qsd.lam)
        assert thr.x_threshold == 6
        assert thr.margin < 0
        assert thr.n_check == 200

    def test_requires_declared_floor(self, linear):
        with pytest.raises(ModelError, match="d_lower/epsilon"):
            lyapunov_threshold(linear, 1.0)

    def test_requires_floor_to_hold(self, pure_death):
        # pure death declares a floor that fails its own check
        with pytest.raises(ModelError, match="floor"):
            lyapunov_threshold(pure_death, 1.0)

    def test_window_too_small(self, logistic):
        with pytest.raises(ThresholdNotFoundError):
            lyapunov_threshold(logistic, 1.148765241261827, n_check=4)


class TestSweepAndTV:
    def test_total_variation_pads(self):
        assert total_variation(np.array([1.0]), np.array([0.5, 0.5])) == 0.5
        assert total_variation(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0

    def test_truncation_sweep_converges(self, logistic):
        control = logistic.constant_control(0, 120)
        sweep = truncation_sweep(logistic, control, [30, 60, 120])
        rows = sweep.rows
        assert [r.level for r in rows] == [30, 60, 120]
        assert rows[-1].lam_gap_to_largest == 0.0
        assert rows[-1].tv_to_largest == 0.0
        assert rows[0].lam_gap_to_largest >= rows[1].lam_gap_to_largest
        # 30 states already hold the bulk: lam is stable to many digits
        assert rows[0].lam_gap_to_largest < 1e-8


# random-chain property: the returned triple satisfies its defining
# identities whatever the rates

@settings(max_examples=25, deadline=None)
@given(
    level=st.integers(min_value=2, max_value=12),
    seed=st.integers(min_value=0, max_value=2 ** 31),
)
def test_qsd_identities_random_chain(level, seed):
    rng = np.random.default_rng(seed)
    b_coef = float(rng.uniform(0.0, 3.0))
    d_coef = float(rng.uniform(0.5, 3.0))
    k_max = int(rng.integers(1, 4))
    probs = rng.dirichlet(np.ones(k_max))
    m = ModelSpec(
        name="rand", controls=ControlSet((Action("a", {}),)),
        birth=rx(f"{b_coef!r} * n"), death=rx(f"{d_coef!r} * n"), cost=rx("1"),
        progeny=ProgenyDist.from_table(probs, 1),
        constants=HypothesisConstants(
            b_bar=b_coef + 1e-6, m_bound=float(k_max),
            d_bar=rx(f"{d_coef!r} * n")),
        level=level)
    gen = build_generator(m, m.constant_control(0, level), level)
    sol = solve_qsd(gen)
    a = gen.active
    assert sol.lam > 0
    assert sol.pi.sum() == pytest.approx(1.0, abs=1e-10)
    scale = max(1.0, float(np.max(np.abs(a))))
    assert np.max(np.abs(sol.pi @ a + sol.lam * sol.pi)) <= 1e-10 * scale
    assert np.max(np.abs(a @ sol.eta + sol.lam * sol.eta)) <= 1e-10 * scale
