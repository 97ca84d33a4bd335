"""Tests for path simulation, moment estimators, and the closed-form MGF."""

import math

import numpy as np
import pytest

from uvpricer.errors import PoleError
from uvpricer.model import ModelParams, PiecewiseLinearPayoff
from uvpricer.rng import normal_increments
from uvpricer.sde import (
    CoupledGap,
    coupled_payoff_gap,
    estimate_moment,
    mgf_closed_form,
    mgf_components,
    simulate_paths,
)


def make_params(**overrides):
    base = dict(
        r=0.0, a=0.6, b=0.5, alpha=2.0, sigma=0.5, rho=0.5,
        sigma_min=0.1, sigma_max=0.2, delta=0.5,
    )
    base.update(overrides)
    return ModelParams(**base)


class TestSimulatePaths:
    def test_initial_columns(self):
        """Every path starts at the requested initial state."""
        batch = simulate_paths(make_params(), 100.0, -1.0, 0.15, 50, 10, 0.15, seed=1)
        assert np.all(batch.x_paths[:, 0] == 100.0)
        assert np.all(batch.v_paths[:, 0] == -1.0)
        assert batch.x_paths.shape == (50, 11)

    def test_delta_zero_freezes_factor(self):
        """With delta = 0 the factor stays exactly at v0 on every path."""
        batch = simulate_paths(
            make_params(delta=0.0), 100.0, -0.7, 0.2, 64, 16, 0.15, seed=3
        )
        assert np.all(batch.v_paths == -0.7)

    def test_paths_stay_positive(self):
        """Log-space stepping keeps the asset strictly positive."""
        batch = simulate_paths(
            make_params(delta=1.0, sigma_max=0.2), 5.0, 0.4, 0.2, 200, 40, 1.0, seed=5
        )
        assert np.all(batch.x_paths > 0.0)

    def test_deterministic_and_chunk_independent(self):
        """Seed fixes the batch bit-for-bit regardless of chunk schedule."""
        kwargs = dict(x0=100.0, v0=-1.0, q_policy=0.15, n_paths=37,
                      n_steps=11, T=0.15, seed=11)
        a = simulate_paths(make_params(), **kwargs)
        b = simulate_paths(make_params(), **kwargs, chunk_size=5)
        assert np.array_equal(a.x_paths, b.x_paths)
        assert np.array_equal(a.v_paths, b.v_paths)

    def test_frozen_factor_matches_exact_gbm(self):
        """At delta = 0 the log-Euler terminal value equals the exact GBM map."""
        p = make_params(delta=0.0, r=0.02)
        q, x0, v0, T, n = 0.2, 80.0, -0.5, 0.5, 16
        batch = simulate_paths(p, x0, v0, q, 25, n, T, seed=21)
        z = normal_increments(21, 25, n)
        w_T = math.sqrt(T / n) * z[:, :, 0].sum(axis=1)
        vol = q * math.exp(v0)
        exact = x0 * np.exp((p.r - 0.5 * vol**2) * T + vol * w_T)
        assert batch.x_paths[:, -1] == pytest.approx(exact, rel=1e-12)

    def test_martingale_mean_under_fixed_vol(self):
        """With r = 0 the sample mean of X_T sits within 3 SE of x0."""
        p = make_params(sigma_min=0.15, sigma_max=0.15, delta=0.5)
        batch = simulate_paths(p, 100.0, -1.0, 0.15, 20000, 25, 0.15, seed=42)
        report = estimate_moment(batch, which="X", k=1)
        assert abs(report.estimate - 100.0) <= 3.0 * report.std_error

    def test_perfect_correlation_gives_identical_increments(self):
        """rho = 1 makes both Brownian increment streams coincide."""
        p = make_params(rho=1.0, delta=0.8)
        q, x0, v0, T, n = 0.2, 100.0, -1.0, 0.3, 12
        batch = simulate_paths(p, x0, v0, q, 30, n, T, seed=7)
        dt = T / n
        v = batch.v_paths
        x = batch.x_paths
        drift_v = p.delta * (p.a - p.b * np.exp(p.alpha * v[:, :-1]))
        dw2 = (v[:, 1:] - v[:, :-1] - drift_v * dt) / (math.sqrt(p.delta) * p.sigma)
        ev = np.exp(v[:, :-1])
        dlog = np.log(x[:, 1:]) - np.log(x[:, :-1])
        dw1 = (dlog - (p.r - 0.5 * q**2 * ev**2) * dt) / (q * ev)
        assert dw1 == pytest.approx(dw2, abs=1e-10)

    def test_empirical_increment_correlation(self):
        """Recovered increment streams correlate at rho within MC tolerance."""
        rho = 0.5
        p = make_params(rho=rho, delta=1.0)
        q, T, n = 0.15, 0.3, 16
        batch = simulate_paths(p, 100.0, -1.0, q, 4000, n, T, seed=13)
        dt = T / n
        v = batch.v_paths
        drift_v = p.delta * (p.a - p.b * np.exp(p.alpha * v[:, :-1]))
        dw2 = (v[:, 1:] - v[:, :-1] - drift_v * dt) / (math.sqrt(p.delta) * p.sigma)
        ev = np.exp(v[:, :-1])
        dlog = np.log(batch.x_paths[:, 1:]) - np.log(batch.x_paths[:, :-1])
        dw1 = (dlog - (p.r - 0.5 * q**2 * ev**2) * dt) / (q * ev)
        corr = np.corrcoef(dw1.ravel(), dw2.ravel())[0, 1]
        assert corr == pytest.approx(rho, abs=4.0 / math.sqrt(dw1.size))

    def test_policy_object_is_queried(self):
        """A state-dependent policy is evaluated with (t, x, v) each step."""

        class Extremes:
            tag = "bang-bang on v"

            def values(self, t, x, v):
                assert x.shape == v.shape
                return np.where(v < -1.0, 0.2, 0.1)

        batch = simulate_paths(make_params(), 100.0, -1.0, Extremes(), 10, 5, 0.1, seed=2)
        assert batch.control_tag == "bang-bang on v"

    @pytest.mark.parametrize(
        "kwargs, exc",
        [
            (dict(q_policy=0.05), ValueError),
            (dict(q_policy=0.25), ValueError),
            (dict(q_policy="mid"), TypeError),
            (dict(x0=0.0), ValueError),
            (dict(x0=np.nan), ValueError),
            (dict(v0=np.inf), ValueError),
            (dict(n_paths=0), ValueError),
            (dict(n_steps=0), ValueError),
            (dict(T=0.0), ValueError),
        ],
    )
    def test_invalid_inputs_rejected(self, kwargs, exc):
        """Out-of-interval multipliers and bad state/sizes raise."""
        base = dict(x0=100.0, v0=-1.0, q_policy=0.15, n_paths=4, n_steps=4,
                    T=0.1, seed=0)
        base.update(kwargs)
        with pytest.raises(exc):
            simulate_paths(make_params(), **base)


class TestEstimateMoment:
    def test_frozen_factor_moment_is_exact(self):
        """delta = 0 makes the terminal V moment deterministic."""
        batch = simulate_paths(
            make_params(delta=0.0), 100.0, -1.5, 0.15, 50, 8, 0.1, seed=4
        )
        for k in (1, 2, 3):
            rep = estimate_moment(batch, which="V", k=k)
            assert rep.estimate == pytest.approx(1.5**k)
            assert rep.std_error == 0.0
            assert rep.order == k and rep.n_paths == 50

    def test_time_integrated_variant(self):
        """The integrated frozen-factor moment equals T |v0|^k."""
        T = 0.2
        batch = simulate_paths(
            make_params(delta=0.0), 100.0, -2.0, 0.15, 20, 10, T, seed=4
        )
        rep = estimate_moment(batch, which="V", k=2, time_integrated=True)
        assert rep.estimate == pytest.approx(T * 4.0)
        assert rep.time_integrated

    def test_second_moment_bands_overlap_across_delta(self):
        """E[X_T^2] estimates agree within 3 SE bands as delta varies."""
        reports = []
        for delta in (0.25, 0.5, 1.0):
            batch = simulate_paths(
                make_params(delta=delta), 100.0, -1.0, 0.15, 8000, 24, 0.15,
                seed=99,
            )
            reports.append(estimate_moment(batch, which="X", k=2))
        lows = [r.estimate - 3 * r.std_error for r in reports]
        highs = [r.estimate + 3 * r.std_error for r in reports]
        assert max(lows) <= min(highs)

    def test_rejects_bad_arguments(self):
        """Unknown processes and zero orders raise ValueError."""
        batch = simulate_paths(make_params(), 100.0, -1.0, 0.15, 4, 4, 0.1, seed=0)
        with pytest.raises(ValueError):
            estimate_moment(batch, which="Y", k=1)
        with pytest.raises(ValueError):
            estimate_moment(batch, which="X", k=0)


class TestCoupledPayoffGap:
    PAYOFF = PiecewiseLinearPayoff.butterfly(90.0, 100.0, 110.0)

    def test_delta_zero_gap_vanishes(self):
        """Frozen dynamics coincide, so the gap is exactly zero."""
        rep = coupled_payoff_gap(
            make_params(delta=0.0), self.PAYOFF, 100.0, -1.0, 0.15, 500, 10,
            0.15, seed=8,
        )
        gap, se = rep
        assert gap == 0.0 and se == 0.0
        assert rep.payoff_gap_sq == 0.0

    def test_gap_scales_roughly_linearly_in_delta(self):
        """gap_sq/delta stays within a factor 3 across a delta sweep."""
        ratios = []
        for delta in (0.1, 0.2, 0.4):
            rep = coupled_payoff_gap(
                make_params(delta=delta), self.PAYOFF, 100.0, -1.0, 0.15,
                8000, 32, 0.15, seed=17,
            )
            ratios.append(rep.gap_sq / delta)
        assert max(ratios) / min(ratios) < 3.0

    def test_step_refinement_stable(self):
        """Doubling n_steps moves gap_sq by less than 3 standard errors."""
        coarse = coupled_payoff_gap(
            make_params(), self.PAYOFF, 100.0, -1.0, 0.15, 6000, 16, 0.15, seed=23
        )
        fine = coupled_payoff_gap(
            make_params(), self.PAYOFF, 100.0, -1.0, 0.15, 6000, 32, 0.15, seed=23
        )
        tol = 3.0 * max(coarse.std_error, fine.std_error)
        assert abs(coarse.gap_sq - fine.gap_sq) <= tol

    def test_payoff_gap_controlled_by_lipschitz_constant(self):
        """The payoff gap obeys the Lipschitz comparison with the asset gap."""
        rep = coupled_payoff_gap(
            make_params(delta=0.5), self.PAYOFF, 100.0, -1.0, 0.2, 4000, 24,
            0.15, seed=31,
        )
        assert isinstance(rep, CoupledGap)
        assert 0.0 <= rep.payoff_gap_sq <= self.PAYOFF.lipschitz**2 * rep.gap_sq + 1e-12


class TestMgfClosedForm:
    def test_unit_at_eta_zero(self):
        """The MGF equals 1 at eta = 0 for any (delta, sigma, t, v)."""
        rng = np.random.default_rng(5)
        for _ in range(50):
            p = make_params(
                delta=float(rng.uniform(0.01, 1.0)),
                sigma=float(rng.uniform(0.2, 1.5)),
            )
            t = float(rng.uniform(0.0, 1.0))
            v = float(rng.uniform(-2.0, 1.0))
            assert mgf_closed_form(p, 0.0, t, v) == pytest.approx(1.0, abs=1e-12)

    def test_small_delta_limit_is_one(self):
        """As delta -> 0+ with eta fixed the value tends to 1."""
        p = make_params(delta=1e-10, sigma=0.5)
        assert mgf_closed_form(p, 0.5, 0.1, -1.0) == pytest.approx(1.0, abs=1e-6)

    def test_real_branch_bound(self):
        """On the hyperbolic branch Psi respects the exp(T/2) power bound."""
        rng = np.random.default_rng(9)
        T = 1.0
        for _ in range(100):
            delta = float(rng.uniform(0.05, 1.0))
            sigma = float(rng.uniform(0.3, 1.2))
            p = make_params(delta=delta, sigma=sigma)
            t = float(rng.uniform(0.0, T))
            # eta <= delta/(2 sigma^2) keeps the discriminant nonnegative.
            eta = float(rng.uniform(0.0, delta / (2.0 * sigma**2)))
            psi, xi = mgf_components(p, eta, t)
            bound = math.exp(0.5 * T) ** (2.0 / sigma**2)
            assert psi <= bound * (1 + 1e-12)
            assert xi >= 0.0
            v = float(rng.uniform(0.0, 2.0))  # v*Xi >= 0 keeps the damping
            assert mgf_closed_form(p, eta, t, v) <= bound * (1 + 1e-12)

    def test_trigonometric_branch_continuous_with_real_branch(self):
        """Crossing the discriminant's zero changes the value smoothly."""
        p = make_params(delta=0.5, sigma=0.5)
        eta_star = p.delta / (2.0 * p.sigma**2)
        below = mgf_closed_form(p, eta_star - 1e-7, 0.3, -1.0)
        above = mgf_closed_form(p, eta_star + 1e-7, 0.3, -1.0)
        assert above == pytest.approx(below, rel=1e-5)

    def test_pole_detection(self):
        """A vanishing trigonometric denominator raises PoleError."""
        # With sigma = 1, delta = 0.5, eta = 0.5: theta = delta, and at
        # t = 3 pi / (2 delta) the angle is 3 pi / 4 where cos + sin = 0.
        p = make_params(delta=0.5, sigma=1.0)
        with pytest.raises(PoleError):
            mgf_closed_form(p, 0.5, 3.0 * math.pi / (2.0 * 0.5), -1.0)

    def test_negative_base_fractional_power_rejected(self):
        """Negative eta under a non-integer exponent is flagged as non-real."""
        p = make_params(delta=0.5, sigma=0.7)
        with pytest.raises(ValueError):
            mgf_closed_form(p, -1.0, 0.3, -1.0)

    def test_negative_t_rejected(self):
        """Negative times raise ValueError."""
        with pytest.raises(ValueError):
            mgf_closed_form(make_params(), 0.1, -0.1, 0.0)
