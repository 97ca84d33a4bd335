"""Explicit finite-difference solvers for the pricing PDEs.

Three backward-in-time marches share one discretization (central second
differences, 4-point cross stencil, drift-sign upwinding, explicit Euler
steps):

* :func:`solve_hjb_2d` — the full worst-case pricing equation in (x, v)
  with the pointwise supremum over the volatility multiplier,
* :func:`solve_bsb_1d` — the frozen-factor limit equation, where the factor
  level only enters through ``e^{2v}`` so each v-node solves independently,
* :func:`solve_corrector` — the linear first-order correction PDE driven by
  the mixed derivative of a stored limit solve.

Boundary treatment: at ``x_min = 0`` the equation degenerates and is solved
exactly; at ``x_max`` curvature is set to zero (linear extrapolation); the
v-edges use a vanishing second derivative with one-sided first derivatives.
All solves refuse to run when the requested step count violates the explicit
stability bound, reporting the minimum admissible ``n_t``.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import NonFiniteError, StabilityError
from .model import GridSpec, ModelParams, PiecewiseLinearPayoff
from .surface import PriceSurface


def min_time_steps(
    params: ModelParams, grid: GridSpec, kind: str = "full", v: float | None = None
) -> int:
    """Smallest admissible number of explicit time steps for the grid.

    Sums the worst-case diffusion, cross, drift, and discounting rates over
    the grid (a conservative bound: the sum dominates the max) and applies
    the grid's CFL safety factor.  ``kind`` selects which terms are active:
    ``"full"`` includes the factor direction, ``"bsb"`` and ``"corrector"``
    only the asset direction (with ``e^{2v}`` at ``v`` when given, else at
    the top of the v-range).
    """
    if kind not in ("full", "bsb", "corrector"):
        raise ValueError(f"unknown solver kind {kind!r}")
    x_peak = grid.x_nodes[-2]
    v_peak = grid.v_max if v is None else float(v)
    rate = params.sigma_max**2 * math.exp(2.0 * v_peak) * x_peak**2 / grid.dx**2
    rate += params.r * x_peak / grid.dx + params.r
    if kind == "full":
        rate += params.delta * params.sigma**2 / grid.dv**2
        rate += (
            math.sqrt(params.delta)
            * params.sigma_max
            * abs(params.rho)
            * params.sigma
            * math.exp(grid.v_max)
            * x_peak
            / (grid.dx * grid.dv)
        )
        drift = params.delta * np.abs(
            params.a - params.b * np.exp(params.alpha * grid.v_nodes)
        )
        rate += float(drift.max()) / grid.dv
    return max(1, math.ceil(grid.T * rate / grid.cfl_safety))


def _require_stability(params, grid, kind, v=None) -> None:
    needed = min_time_steps(params, grid, kind, v)
    if grid.n_t < needed:
        raise StabilityError(
            f"n_t={grid.n_t} violates the explicit stability bound for this "
            f"grid; need at least {needed} time steps",
            min_time_steps=needed,
        )


def _kept_indices(n_t: int, store_slices: bool, max_kept: int) -> tuple[int, ...]:
    """Ascending time indices to retain; always contains 0 and n_t."""
    if not store_slices:
        return (0, n_t) if n_t > 0 else (0,)
    stride = max(1, math.ceil(n_t / max(1, max_kept - 1)))
    kept = set(range(0, n_t, stride))
    kept.update((0, n_t))
    return tuple(sorted(kept))


def _terminal_slice(
    payoff: PiecewiseLinearPayoff, grid: GridSpec, cell_average: bool
) -> np.ndarray:
    x = grid.x_nodes
    if cell_average:
        half = 0.5 * grid.dx
        col = np.array([payoff.average(xi - half, xi + half) for xi in x])
    else:
        col = np.asarray(payoff(x), dtype=float)
    return np.repeat(col[:, None], grid.n_v, axis=1)


def _check_finite(P: np.ndarray, time_index: int) -> None:
    if not np.all(np.isfinite(P)):
        bad = np.argwhere(~np.isfinite(P))[0]
        raise NonFiniteError(
            f"non-finite value at time index {time_index}, node "
            f"({bad[0]}, {bad[1] if bad.size > 1 else 0})",
            time_index=time_index,
            node=(int(bad[0]), int(bad[1]) if bad.size > 1 else 0),
        )


class _Marcher:
    """Backward marcher handling slice retention and boundary rows."""

    def __init__(self, params, payoff, grid, kept):
        self.params = params
        self.grid = grid
        self.kept = kept
        self.pos = {k: p for p, k in enumerate(kept)}
        self.h0 = float(payoff(grid.x_min))
        self.exact_x_min = grid.x_min == 0.0

    def run(self, terminal: np.ndarray, rhs) -> np.ndarray:
        """March ``terminal`` down to t=0; ``rhs(P, k)`` returns the interior
        time derivative used at step ``k -> k-1``."""
        grid = self.grid
        dt = grid.dt
        values = np.empty((len(self.kept), *terminal.shape))
        P = terminal.copy()
        if grid.n_t in self.pos:
            values[self.pos[grid.n_t]] = P
        for k in range(grid.n_t, 0, -1):
            new = np.empty_like(P)
            new[1:-1] = P[1:-1] + dt * rhs(P, k)
            t_new = (k - 1) * dt
            if self.exact_x_min:
                new[0] = math.exp(-self.params.r * (grid.T - t_new)) * self.h0
            else:
                new[0] = 2.0 * new[1] - new[2]
            new[-1] = 2.0 * new[-2] - new[-3]
            _check_finite(new, k - 1)
            P = new
            if (k - 1) in self.pos:
                values[self.pos[k - 1]] = P
        return values


def solve_hjb_2d(
    params: ModelParams,
    payoff: PiecewiseLinearPayoff,
    grid: GridSpec,
    store_slices: bool = False,
    max_kept_slices: int = 601,
    cell_average_terminal: bool = False,
) -> PriceSurface:
    """Worst-case price surface from the full two-dimensional equation.

    At every interior node the supremum over the multiplier interval of the
    quadratic ``q^2 (x^2 e^{2v} Gamma_xx)/2 + q sqrt(delta) rho sigma x e^v
    Gamma_xv`` is resolved exactly: both endpoints are tried, plus the
    stationary point when the quadratic is concave and the stationary point
    is interior.  Ties prefer ``sigma_max``.
    """
    _require_stability(params, grid, "full")
    kept = _kept_indices(grid.n_t, store_slices, max_kept_slices)
    xc = grid.x_nodes[1:-1][:, None]
    ev = np.exp(grid.v_nodes)[None, :]
    a_coef = 0.5 * xc**2 * ev**2
    b_coef = math.sqrt(params.delta) * params.rho * params.sigma * xc * ev
    c_vv = 0.5 * params.delta * params.sigma**2
    drift_v = params.delta * (params.a - params.b * np.exp(params.alpha * grid.v_nodes))
    n_v = grid.n_v
    # Upwind gather: forward difference where the drift is nonnegative,
    # backward where negative, clamped to one-sided at the v-edges.
    j_upwind = np.where(drift_v >= 0.0, np.arange(n_v), np.arange(n_v) - 1)
    j_upwind = np.clip(j_upwind, 0, n_v - 2)
    dx, dv, r = grid.dx, grid.dv, params.r
    lo, hi = params.sigma_min, params.sigma_max

    def rhs(P, k):
        inner = P[1:-1]
        pxx = (P[2:] - 2.0 * inner + P[:-2]) / dx**2
        d_x = (P[2:] - P[:-2]) / (2.0 * dx)
        pxv = np.empty_like(d_x)
        pxv[:, 1:-1] = (d_x[:, 2:] - d_x[:, :-2]) / (2.0 * dv)
        pxv[:, 0] = (d_x[:, 1] - d_x[:, 0]) / dv
        pxv[:, -1] = (d_x[:, -1] - d_x[:, -2]) / dv
        pvv = np.zeros_like(d_x)
        pvv[:, 1:-1] = (inner[:, 2:] - 2.0 * inner[:, 1:-1] + inner[:, :-2]) / dv**2
        dfwd = (inner[:, 1:] - inner[:, :-1]) / dv
        pv = dfwd[:, j_upwind]
        aa = a_coef * pxx
        bb = b_coef * pxv
        ham = np.maximum(lo * lo * aa + lo * bb, hi * hi * aa + hi * bb)
        concave = aa < 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            q_hat = np.where(concave, -bb / (2.0 * aa), hi)
            f_hat = np.where(concave, -(bb * bb) / (4.0 * aa), -np.inf)
        inside = concave & (q_hat > lo) & (q_hat < hi)
        ham = np.where(inside, np.maximum(ham, f_hat), ham)
        out = ham + c_vv * pvv + drift_v[None, :] * pv
        if r != 0.0:
            out += r * (xc * d_x - inner)
        return out

    marcher = _Marcher(params, payoff, grid, kept)
    terminal = _terminal_slice(payoff, grid, cell_average_terminal)
    values = marcher.run(terminal, rhs)
    values.flags.writeable = False
    return PriceSurface(
        values=values, grid=grid, params=params, kind="full_delta", kept_times=kept
    )


def solve_bsb_1d(
    params: ModelParams,
    payoff: PiecewiseLinearPayoff,
    grid: GridSpec,
    v: float | None = None,
    store_slices: bool = False,
    max_kept_slices: int = 601,
    cell_average_terminal: bool = False,
) -> PriceSurface:
    """Frozen-factor limit price, bang-bang in the curvature sign.

    With ``v`` given, a single spot-volatility level ``e^v`` is solved and
    broadcast across the v-axis (``v_constant`` is set on the result);
    otherwise every v-node is solved independently, yielding the full limit
    family on the grid.  The supremum reduces to choosing ``sigma_max``
    where the discrete curvature is nonnegative and ``sigma_min`` below
    (ties to ``sigma_max``).
    """
    _require_stability(params, grid, "bsb", v)
    kept = _kept_indices(grid.n_t, store_slices, max_kept_slices)
    xc = grid.x_nodes[1:-1][:, None]
    if v is None:
        e2v = np.exp(2.0 * grid.v_nodes)[None, :]
        width = grid.n_v
    else:
        if not np.isfinite(v):
            raise ValueError(f"v must be finite, got {v}")
        e2v = np.array([[math.exp(2.0 * v)]])
        width = 1
    a_coef = 0.5 * xc**2 * e2v
    dx, r = grid.dx, params.r
    lo2, hi2 = params.sigma_min**2, params.sigma_max**2

    def rhs(P, k):
        inner = P[1:-1]
        pxx = (P[2:] - 2.0 * inner + P[:-2]) / dx**2
        ham = a_coef * np.where(pxx >= 0.0, hi2, lo2) * pxx
        if r != 0.0:
            d_x = (P[2:] - P[:-2]) / (2.0 * dx)
            ham = ham + r * (xc * d_x - inner)
        return ham

    marcher = _Marcher(params, payoff, grid, kept)
    terminal = _terminal_slice(payoff, grid, cell_average_terminal)[:, :width]
    values = marcher.run(terminal, rhs)
    if v is not None:
        values = np.repeat(values, grid.n_v, axis=2)
    values.flags.writeable = False
    return PriceSurface(
        values=values,
        grid=grid,
        params=params,
        kind="limit_p0",
        kept_times=kept,
        v_constant=None if v is None else float(v),
    )


def solve_corrector(
    params: ModelParams,
    payoff: PiecewiseLinearPayoff,
    grid: GridSpec,
    p0: PriceSurface,
    store_slices: bool = False,
    max_kept_slices: int = 601,
) -> PriceSurface:
    """First-order correction surface driven by a stored limit solve.

    Marches the linear equation with diffusion coefficient frozen at the
    limit solve's bang-bang multiplier and source ``q* rho sigma e^v x``
    times the mixed derivative of the stored limit slices, from a zero
    terminal condition.  Needs ``r = 0`` (the correction PDE is derived in
    the undiscounted setting), a ``limit_p0`` surface on the same grid
    solved per v-node with slices retained.
    """
    if p0.kind != "limit_p0":
        raise ValueError(f"corrector needs a limit_p0 surface, got {p0.kind!r}")
    if p0.grid != grid:
        raise ValueError("limit surface was solved on a different grid")
    if p0.v_constant is not None:
        raise ValueError(
            "corrector needs the per-v-node limit family, not a single-v solve"
        )
    if dataclasses.replace(p0.params, delta=params.delta) != params:
        raise ValueError(
            "parameter mismatch with the limit surface (only delta may differ)"
        )
    if params.r != 0.0:
        raise ValueError("corrector is defined for r = 0")
    if p0.n_kept < min(3, grid.n_t + 1):
        raise ValueError(
            "corrector needs the limit solve with stored slices "
            "(solve_bsb_1d(..., store_slices=True))"
        )
    _require_stability(params, grid, "corrector")
    kept = _kept_indices(grid.n_t, store_slices, max_kept_slices)
    xc = grid.x_nodes[1:-1][:, None]
    ev = np.exp(grid.v_nodes)[None, :]
    diff_coef = 0.5 * xc**2 * ev**2
    src_coef = params.rho * params.sigma * xc * ev
    dx, dv = grid.dx, grid.dv
    lo, hi = params.sigma_min, params.sigma_max

    cache = {"pos": -1, "q0": None, "source": None}

    def frozen_fields(k):
        pos = p0.nearest_pos(k * grid.dt)
        if pos != cache["pos"]:
            F0 = p0.values[pos]
            gxx0 = (F0[2:] - 2.0 * F0[1:-1] + F0[:-2]) / dx**2
            q0 = np.where(gxx0 >= 0.0, hi, lo)
            d_x0 = (F0[2:] - F0[:-2]) / (2.0 * dx)
            vanna0 = np.empty_like(d_x0)
            vanna0[:, 1:-1] = (d_x0[:, 2:] - d_x0[:, :-2]) / (2.0 * dv)
            vanna0[:, 0] = (d_x0[:, 1] - d_x0[:, 0]) / dv
            vanna0[:, -1] = (d_x0[:, -1] - d_x0[:, -2]) / dv
            cache["pos"] = pos
            cache["q0"] = q0
            cache["source"] = q0 * src_coef * vanna0
        return cache["q0"], cache["source"]

    def rhs(P, k):
        q0, source = frozen_fields(k)
        pxx = (P[2:] - 2.0 * P[1:-1] + P[:-2]) / dx**2
        return diff_coef * q0**2 * pxx + source

    marcher = _Marcher(params, payoff, grid, kept)
    # Zero boundary data: the payoff plays no role beyond the x_min row,
    # which the correction keeps at zero where the equation degenerates.
    marcher.h0 = 0.0
    terminal = np.zeros((grid.n_x + 2, grid.n_v))
    values = marcher.run(terminal, rhs)
    values.flags.writeable = False
    return PriceSurface(
        values=values, grid=grid, params=params, kind="corrector_p1", kept_times=kept
    )
