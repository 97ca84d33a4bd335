"""Tests for the backward-representation drivers and diagnostics."""

import dataclasses
import json

import numpy as np
import pytest

from uvpricer.analytic import bs_call
from uvpricer.bsde import (
    BsdeResidualReport,
    build_driver,
    driver_consistency,
    martingale_check,
    simulate_2bsde_residual,
)
from uvpricer.hjb import min_time_steps, solve_bsb_1d, solve_hjb_2d
from uvpricer.model import GridSpec, ModelParams, PiecewiseLinearPayoff
from uvpricer.surface import WorstCaseControl


def mk_params(sigma_min=0.1, sigma_max=0.2, delta=0.0, rho=0.5, r=0.0, sigma=0.5):
    return ModelParams(r=r, a=0.6, b=0.5, alpha=2.0, sigma=sigma, rho=rho,
                       sigma_min=sigma_min, sigma_max=sigma_max, delta=delta)


def mk_grid(params, kind, x_min=80.0, x_max=120.0, n_x=99, v_min=-1.0,
            v_max=0.0, n_v=15, T=0.15):
    trial = GridSpec(x_min=x_min, x_max=x_max, n_x=n_x, v_min=v_min,
                     v_max=v_max, n_v=n_v, T=T, n_t=1)
    return dataclasses.replace(trial, n_t=min_time_steps(params, trial, kind))


def limit_family(params, payoff, **grid_kwargs):
    grid = mk_grid(params, "bsb", **grid_kwargs)
    return solve_bsb_1d(params, payoff, grid, store_slices=True,
                        max_kept_slices=10**9)


class TestDriverSpec:
    def test_vanishes_without_curvature(self):
        """Zero Hessian and gradient give a zero driver for both kinds."""
        p = mk_params(delta=0.3)
        for kind in ("f0", "f_delta"):
            d = build_driver(p, kind)
            assert d(100.0, -1.0, 0.0, 0.0, 0.0, 0.0) == 0.0

    def test_zero_delta_collapses_to_limit_driver(self):
        """The moving-factor driver at delta=0 equals the limit driver."""
        p = mk_params(delta=0.0)
        f0 = build_driver(p, "f0")
        fd = build_driver(p, "f_delta")
        rs = np.random.default_rng(3)
        x = rs.uniform(1.0, 200.0, 100)
        v, z2, s11, s12, s22 = (rs.uniform(-2.0, 2.0, 100) for _ in range(5))
        assert np.array_equal(fd(x, v, z2, s11, s12, s22),
                              f0(x, v, z2, s11, s12, s22))

    def test_multiplier_follows_curvature_sign(self):
        """sigma_bar flips at the curvature sign, with ties to sigma_max."""
        d = build_driver(mk_params(), "f0")
        assert np.array_equal(d.sigma_bar([1.0, 0.0, -1.0]), [0.2, 0.2, 0.1])
        # f0 = -x^2 e^{2v} sigma_bar^2 s11 / 2 at x=10, v=0
        assert d(10.0, 0.0, 0.0, 1.0, 0.0, 0.0) == pytest.approx(-0.5 * 100 * 0.04)
        assert d(10.0, 0.0, 0.0, -1.0, 0.0, 0.0) == pytest.approx(0.5 * 100 * 0.01)

    def test_literal_variant_coefficients(self):
        """The literal form drops one power of x and doubles the cross term."""
        p = mk_params(delta=0.25)
        rec = build_driver(p, "f0")
        lit = build_driver(p, "f0", literal=True)
        x = np.array([2.0, 50.0, 120.0])
        args = (x, -0.4, 0.0, 1.3, 0.7, -0.2)
        assert lit(*args) * x == pytest.approx(rec(*args))
        # cross term only (s11 = 0): reconstructed uses sigma_bar(0) = max,
        # literal uses twice sigma_bar(s12)
        rec_d = build_driver(p, "f_delta")
        lit_d = build_driver(p, "f_delta", literal=True)
        up = (100.0, -0.5, 0.0, 0.0, 1.0, 0.0)
        assert lit_d(*up) == pytest.approx(2.0 * rec_d(*up))
        dn = (100.0, -0.5, 0.0, 0.0, -1.0, 0.0)
        assert lit_d(*dn) == pytest.approx(2.0 * (0.1 / 0.2) * rec_d(*dn))

    def test_scalar_and_array_forms(self):
        """Scalar inputs give a float, arrays give arrays."""
        d = build_driver(mk_params(), "f0")
        assert isinstance(d(10.0, 0.0, 0.0, 1.0, 0.0, 0.0), float)
        out = d(np.ones(4) * 10.0, np.zeros(4), 0.0, np.ones(4), 0.0, 0.0)
        assert out.shape == (4,)

    def test_unknown_kind_rejected(self):
        """Only f0 and f_delta are valid driver kinds."""
        with pytest.raises(ValueError):
            build_driver(mk_params(), "f1")


class TestResidualSimulation:
    def test_constant_payoff_is_exact(self):
        """A constant claim has zero fields and an exactly zero residual."""
        p = mk_params(sigma_min=0.15, sigma_max=0.15)
        h = PiecewiseLinearPayoff(knots=(100.0,), slopes=(0.0, 0.0),
                                  anchor_value=5.0)
        surface = limit_family(p, h, n_x=39, n_v=7)
        rep = simulate_2bsde_residual(surface, p, (100.0, -0.5), 500, 16,
                                      seed=9, payoff=h)
        assert rep.y0_fd == pytest.approx(5.0, abs=1e-12)
        assert rep.terminal_residual_rms == 0.0
        assert rep.y0_mean == pytest.approx(5.0, abs=1e-12)
        assert rep.n_paths_used + rep.n_paths_discarded == 500
        assert rep.n_paths_discarded > 0  # the narrow factor range loses paths

    def test_degenerate_call_residual_small(self):
        """One-vol call: the residual is a few percent of the price."""
        p = mk_params(sigma_min=0.15, sigma_max=0.15)
        h = PiecewiseLinearPayoff.call(100.0)
        surface = limit_family(p, h)
        rep = simulate_2bsde_residual(surface, p, (100.0, -0.5), 20000, 64,
                                      seed=77, payoff=h)
        exact = bs_call(100.0, 100.0, 0.15 * np.exp(-0.5), 0.15)
        assert rep.y0_fd == pytest.approx(exact, rel=5e-3)
        assert rep.terminal_residual_rms / rep.y0_fd < 0.08
        # the implied initial value carries the scheme's O(dt) weak bias
        assert rep.y0_mean == pytest.approx(rep.y0_fd, rel=0.05)

    def test_residual_shrinks_under_refinement(self):
        """Joint grid/step refinement reduces the terminal residual."""
        p = mk_params(sigma_min=0.15, sigma_max=0.15)
        h = PiecewiseLinearPayoff.call(100.0)
        coarse = limit_family(p, h, n_x=49, n_v=9)
        fine = limit_family(p, h, n_x=99, n_v=17)
        rep_c = simulate_2bsde_residual(coarse, p, (100.0, -0.5), 8000, 32,
                                        seed=11, payoff=h)
        rep_f = simulate_2bsde_residual(fine, p, (100.0, -0.5), 8000, 64,
                                        seed=11, payoff=h)
        assert rep_f.terminal_residual_rms < rep_c.terminal_residual_rms
        # the implied-initial-value bias shrinks with the time step too
        assert abs(rep_f.y0_mean - rep_f.y0_fd) < abs(rep_c.y0_mean - rep_c.y0_fd)

    def test_terminal_slice_payoff_matches_explicit(self):
        """On a node-aligned grid the stored terminal slice is the payoff."""
        p = mk_params(sigma_min=0.15, sigma_max=0.15)
        h = PiecewiseLinearPayoff.call(100.0)
        surface = limit_family(p, h, n_x=49, n_v=9)
        a = simulate_2bsde_residual(surface, p, (100.0, -0.5), 4000, 32,
                                    seed=21, payoff=h)
        b = simulate_2bsde_residual(surface, p, (100.0, -0.5), 4000, 32,
                                    seed=21)
        assert b.terminal_residual_rms == pytest.approx(
            a.terminal_residual_rms, rel=1e-9
        )
        assert b.n_paths_used == a.n_paths_used

    def test_chunking_and_determinism(self):
        """Chunk size never changes the outcome; reruns are identical."""
        p = mk_params(sigma_min=0.15, sigma_max=0.15)
        h = PiecewiseLinearPayoff.call(100.0)
        surface = limit_family(p, h, n_x=49, n_v=9)
        reps = [
            simulate_2bsde_residual(surface, p, (100.0, -0.5), 3000, 16,
                                    seed=4, payoff=h, chunk_size=cs)
            for cs in (None, 3000, 700)
        ]
        for rep in reps[1:]:
            assert rep.terminal_residual_rms == pytest.approx(
                reps[0].terminal_residual_rms, rel=1e-12
            )
            assert rep.y0_mean == pytest.approx(reps[0].y0_mean, rel=1e-12)
            assert rep.n_paths_used == reps[0].n_paths_used

    def test_start_point_validation(self):
        """Starts outside the open grid rectangle are rejected."""
        p = mk_params()
        surface = limit_family(p, PiecewiseLinearPayoff.call(100.0),
                               n_x=39, n_v=7)
        for bad in [(120.0, -0.5), (70.0, -0.5), (100.0, 0.0), (100.0, -1.5)]:
            with pytest.raises(ValueError):
                simulate_2bsde_residual(surface, p, bad, 100, 8, seed=1)

    def test_sparse_slices_rejected(self):
        """Slices coarser than the simulation step are refused."""
        p = mk_params(sigma_min=0.15, sigma_max=0.15)
        grid = mk_grid(p, "bsb", n_x=49, n_v=9)
        thin = solve_bsb_1d(p, PiecewiseLinearPayoff.call(100.0), grid,
                            store_slices=True, max_kept_slices=10)
        with pytest.raises(ValueError, match="store_slices"):
            simulate_2bsde_residual(thin, p, (100.0, -0.5), 100, 64, seed=1)

    def test_all_paths_discarded(self):
        """A factor range much narrower than the noise drops every path."""
        p = mk_params(sigma_min=0.15, sigma_max=0.15)
        surface = limit_family(p, PiecewiseLinearPayoff.call(100.0),
                               n_x=39, v_min=-0.55, v_max=-0.45, n_v=5)
        with pytest.raises(RuntimeError, match="left the grid"):
            simulate_2bsde_residual(surface, p, (100.0, -0.5), 200, 16, seed=2)

    def test_report_json_round_trip(self, tmp_path):
        """The JSON export carries every field plus the discard fraction."""
        rep = BsdeResidualReport(y0_fd=1.5, y0_mean=1.49,
                                 terminal_residual_rms=0.02,
                                 n_paths_used=900, n_paths_discarded=100)
        out = tmp_path / "residual.json"
        rep.to_json(out, extra={"config_hash": "deadbeef"})
        doc = json.loads(out.read_text())
        assert doc["y0_fd"] == 1.5
        assert doc["n_paths_discarded"] == 100
        assert doc["discard_fraction"] == pytest.approx(0.1)
        assert doc["config_hash"] == "deadbeef"

    def test_report_validation(self):
        """Negative residuals or counts cannot be constructed."""
        with pytest.raises(ValueError):
            BsdeResidualReport(y0_fd=1.0, y0_mean=1.0,
                               terminal_residual_rms=-0.1,
                               n_paths_used=10, n_paths_discarded=0)
        with pytest.raises(ValueError):
            BsdeResidualReport(y0_fd=1.0, y0_mean=1.0,
                               terminal_residual_rms=0.1,
                               n_paths_used=-1, n_paths_discarded=0)


class TestMartingaleCheck:
    def test_discounting_rejected(self):
        """The drift diagnostic is only defined without discounting."""
        p = mk_params(r=0.02)
        surface = limit_family(mk_params(), PiecewiseLinearPayoff.call(100.0),
                               n_x=39, n_v=7)
        with pytest.raises(ValueError, match="r = 0"):
            martingale_check(surface, p, 0.15, 100.0, -0.5, 100, 8, seed=1)

    def test_optimal_control_drift_vanishes(self):
        """Under the maximizing control the surface value is a martingale."""
        p = mk_params()
        h = PiecewiseLinearPayoff.call(100.0)
        surface = limit_family(p, h, x_min=0.0, x_max=300.0, n_x=149)
        rep = martingale_check(surface, p, 0.2, 100.0, -0.5, 20000, 64, seed=5)
        assert abs(rep.drift_estimate) < 3.0 * rep.std_error + 0.01 * surface.value_at(
            0, 100.0, -0.5
        )
        assert rep.policy_tag == "fixed q=0.2"

    def test_suboptimal_control_drifts_down(self):
        """A convex claim run at sigma_min loses the full vol gap."""
        p = mk_params()
        h = PiecewiseLinearPayoff.call(100.0)
        surface = limit_family(p, h, x_min=0.0, x_max=300.0, n_x=149)
        rep = martingale_check(surface, p, 0.1, 100.0, -0.5, 20000, 64, seed=6)
        gap = bs_call(100.0, 100.0, 0.2 * np.exp(-0.5), 0.15) - bs_call(
            100.0, 100.0, 0.1 * np.exp(-0.5), 0.15
        )
        assert rep.drift_estimate < -3.0 * rep.std_error
        assert rep.drift_estimate == pytest.approx(-gap, rel=0.1)

    def test_supermartingale_ordering(self):
        """No fixed control beats the worst-case field beyond noise."""
        p = mk_params()
        h = PiecewiseLinearPayoff.call(100.0)
        surface = limit_family(p, h, x_min=0.0, x_max=300.0, n_x=149)
        policy = WorstCaseControl(surface, p)
        ref = martingale_check(surface, p, policy, 100.0, -0.5, 8000, 32, seed=8)
        assert ref.policy_tag == "worst-case field"
        for q in np.linspace(0.1, 0.2, 5):
            rep = martingale_check(surface, p, float(q), 100.0, -0.5, 8000, 32,
                                   seed=8)
            assert rep.drift_estimate <= ref.drift_estimate + 3.0 * (
                rep.std_error + ref.std_error
            )


class TestDriverConsistency:
    def test_limit_family_is_discretely_exact(self):
        """With every slice kept, the limit driver reproduces the march."""
        p = mk_params(sigma_min=0.15, sigma_max=0.15)
        surface = limit_family(p, PiecewiseLinearPayoff.call(100.0),
                               n_x=49, n_v=9)
        _, rms = driver_consistency(surface, p)
        assert rms.max() < 1e-9

    def test_gap_shrinks_under_refinement(self):
        """The moving-factor consistency gap decreases with the mesh."""
        p = mk_params(delta=0.25)
        h = PiecewiseLinearPayoff.call(100.0)

        def solve(n_x, n_v):
            grid = mk_grid(p, "full", n_x=n_x, n_v=n_v)
            return solve_hjb_2d(p, h, grid, store_slices=True,
                                max_kept_slices=10**9)

        _, rms_c = driver_consistency(solve(49, 9), p)
        _, rms_f = driver_consistency(solve(99, 17), p)
        assert rms_f.mean() < rms_c.mean()

    def test_profile_shape(self):
        """One RMS entry per retained slice pair, timed at the later slice."""
        p = mk_params(sigma_min=0.15, sigma_max=0.15)
        surface = limit_family(p, PiecewiseLinearPayoff.call(100.0),
                               n_x=39, n_v=7)
        t, rms = driver_consistency(surface, p)
        assert len(t) == len(rms) == surface.n_kept - 1
        assert t[-1] == pytest.approx(surface.grid.T)
        assert np.all(rms >= 0.0)
