"""Convergence experiments: delta sweeps, slope fits, and error terms.

The worst-case price converges to its frozen-factor limit as the factor
slows down; this module measures that convergence.  A sweep solves the
moving-factor equation for each delta and the limit equation once,
tabulates the pointwise errors, and fits a log-log slope over the rows
that sit safely above the scheme's noise floor.  The corrector sweep
subtracts the first-order term as well and checks that the remainder
scales linearly.  The Feynman-Kac estimator evaluates the probabilistic
representation of that remainder: along worst-case paths, the leading
terms are time integrals of control-disagreement indicators weighted by
Greeks of the limit and corrector surfaces.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError
from .hjb import min_time_steps, solve_bsb_1d, solve_corrector, solve_hjb_2d
from .model import GridSpec, ModelParams, PiecewiseLinearPayoff
from .sde import simulate_paths
from .surface import PriceSurface, WorstCaseControl, greeks


def _json_safe(value: float) -> float | None:
    return float(value) if math.isfinite(value) else None


def fit_loglog(deltas, abs_errors) -> tuple[float, float]:
    """Least-squares slope and intercept of log|error| against log delta."""
    d = np.asarray(deltas, dtype=float)
    e = np.asarray(abs_errors, dtype=float)
    if d.size < 2:
        raise ValueError("need at least two points for a slope fit")
    if np.any(e <= 0.0):
        raise ValueError("errors must be positive for a log-log fit")
    slope, intercept = np.polyfit(np.log(d), np.log(e), 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class SweepRow:
    """One delta of a convergence sweep, evaluated at the report's point."""

    delta: float
    p_delta: float
    p0: float
    error: float
    abs_error: float
    excluded: bool


@dataclass(frozen=True)
class ConvergenceReport:
    """Delta-sweep errors at a fixed point with a fitted log-log slope.

    Rows are ordered by descending delta.  ``deltas_excluded`` lists the
    rows left out of the fit because their error is within a factor ten
    of ``noise_floor`` (the discretization error measured by re-solving
    the smallest delta on a refined grid).
    """

    point: tuple[float, float, float]
    rows: tuple[SweepRow, ...]
    slope: float
    intercept: float
    deltas_excluded: tuple[float, ...]
    noise_floor: float
    grid: GridSpec
    params: ModelParams

    def __post_init__(self):
        deltas = [row.delta for row in self.rows]
        if deltas != sorted(deltas, reverse=True):
            raise ValueError("rows must be sorted by descending delta")

    @property
    def usable_rows(self) -> tuple[SweepRow, ...]:
        return tuple(row for row in self.rows if not row.excluded)

    def to_csv(self, path, header_lines=()) -> None:
        """Write ``delta,p_delta,p0,error,abs_error,excluded`` rows."""
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("delta,p_delta,p0,error,abs_error,excluded\n")
            for row in self.rows:
                fh.write(
                    f"{row.delta!r},{row.p_delta!r},{row.p0!r},"
                    f"{row.error!r},{row.abs_error!r},{int(row.excluded)}\n"
                )

    def as_dict(self) -> dict:
        return {
            "point": list(self.point),
            "rows": [dataclasses.asdict(row) for row in self.rows],
            "slope": _json_safe(self.slope),
            "intercept": _json_safe(self.intercept),
            "deltas_excluded": list(self.deltas_excluded),
            "n_usable_rows": len(self.usable_rows),
            "noise_floor": self.noise_floor,
            "grid": dataclasses.asdict(self.grid),
            "params": dataclasses.asdict(self.params),
        }

    def to_json(self, path, extra: dict | None = None) -> None:
        doc = self.as_dict()
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_plot_script(self, path, csv_name: str, header_lines=()) -> None:
        """Emit a gnuplot script rendering |error| against delta, log-log."""
        fit = f"exp({self.intercept!r}) * x**({self.slope!r})"
        lines = [f"# {line}" for line in header_lines]
        lines += [
            "set datafile separator ','",
            "set datafile commentschars '#'",
            "set logscale xy",
            "set xlabel 'delta'",
            "set ylabel '|P_delta - P_0|'",
            "set key left top",
            f"plot '{csv_name}' every ::1 using 1:5 with points pt 7 "
            "title 'measured', \\",
            f"     {fit} with lines title 'fit, slope={self.slope:.3f}'",
        ]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _attach_delta(exc: Exception, delta: float) -> None:
    note = f"while solving at delta={delta!r}"
    if exc.args and isinstance(exc.args[0], str):
        exc.args = (f"{exc.args[0]} ({note})",) + exc.args[1:]
    else:
        exc.args = exc.args + (note,)


def _check_sweep_inputs(grid: GridSpec, point, deltas) -> list[float]:
    x0, v0 = float(point[0]), float(point[1])
    if not grid.contains(x0, v0):
        raise ValueError(f"evaluation point ({x0}, {v0}) lies outside the grid")
    ds = [float(d) for d in deltas]
    if not ds:
        raise ValueError("delta list is empty")
    if len(set(ds)) != len(ds):
        raise ValueError(f"deltas must be distinct, got {ds}")
    if any(not 0.0 < d <= 1.0 for d in ds):
        raise ValueError(f"deltas must lie in (0, 1], got {ds}")
    return sorted(ds, reverse=True)


def _refined_for_floor(params: ModelParams, grid: GridSpec) -> GridSpec:
    fine = grid.refined(factor_x=2)
    return dataclasses.replace(
        fine, n_t=min_time_steps(params, fine, "full")
    )


def run_delta_sweep(
    params_base: ModelParams,
    payoff: PiecewiseLinearPayoff,
    grid: GridSpec,
    point: tuple[float, float],
    deltas,
    cell_average_terminal: bool = False,
    noise_floor: float | None = None,
) -> ConvergenceReport:
    """Solve the moving-factor and limit equations across a delta grid.

    Both surfaces are evaluated at ``(t=0, point)``; the error column is
    their signed difference.  Unless supplied, the noise floor is the
    change of the error at the smallest delta when the grid is refined
    (half the x-spacing, step count re-matched to the stability bound):
    shared discretization error cancels in the difference, so the floor
    isolates genuine scheme noise.  Rows with ``|error|`` below ten times
    the floor are excluded from the slope fit; at least two rows must
    survive.
    """
    ds = _check_sweep_inputs(grid, point, deltas)
    x0, v0 = float(point[0]), float(point[1])

    p0_surface = solve_bsb_1d(
        params_base, payoff, grid, cell_average_terminal=cell_average_terminal
    )
    p0_val = p0_surface.value_at(0, x0, v0)

    p_vals: dict[float, float] = {}
    for d in ds:
        params_d = params_base.with_delta(d)
        try:
            surface = solve_hjb_2d(
                params_d, payoff, grid, cell_average_terminal=cell_average_terminal
            )
        except Exception as exc:
            _attach_delta(exc, d)
            raise
        p_vals[d] = surface.value_at(0, x0, v0)

    if noise_floor is None:
        d_min = ds[-1]
        params_d = params_base.with_delta(d_min)
        fine = _refined_for_floor(params_d, grid)
        try:
            pd_fine = solve_hjb_2d(
                params_d, payoff, fine, cell_average_terminal=cell_average_terminal
            ).value_at(0, x0, v0)
            p0_fine = solve_bsb_1d(
                params_base, payoff, fine,
                cell_average_terminal=cell_average_terminal,
            ).value_at(0, x0, v0)
        except Exception as exc:
            _attach_delta(exc, d_min)
            raise
        err_coarse = p_vals[d_min] - p0_val
        noise_floor = abs((pd_fine - p0_fine) - err_coarse)

    rows = []
    for d in ds:
        err = p_vals[d] - p0_val
        excluded = abs(err) < 10.0 * noise_floor or err == 0.0
        rows.append(
            SweepRow(delta=d, p_delta=p_vals[d], p0=p0_val, error=err,
                     abs_error=abs(err), excluded=excluded)
        )

    usable = [row for row in rows if not row.excluded]
    report_kwargs = dict(
        point=(0.0, x0, v0),
        rows=tuple(rows),
        deltas_excluded=tuple(row.delta for row in rows if row.excluded),
        noise_floor=float(noise_floor),
        grid=grid,
        params=params_base,
    )
    if len(usable) < 2:
        partial = ConvergenceReport(
            slope=float("nan"), intercept=float("nan"), **report_kwargs
        )
        raise FitError(
            f"only {len(usable)} of {len(rows)} sweep rows sit above the "
            f"noise floor {noise_floor!r}; need at least 2 for a slope fit",
            report=partial,
        )
    slope, intercept = fit_loglog(
        [row.delta for row in usable], [row.abs_error for row in usable]
    )
    return ConvergenceReport(slope=slope, intercept=intercept, **report_kwargs)


@dataclass(frozen=True)
class CorrectorRow:
    """One delta of a corrector sweep at the report's point."""

    delta: float
    p_delta: float
    p0: float
    p1: float
    e_delta: float
    e_over_delta: float
    excluded: bool


@dataclass(frozen=True)
class CorrectorReport:
    """Remainder after subtracting the first-order correction, per delta.

    ``ratio`` is max/min of ``|e_delta|/delta`` over the usable rows; a
    bounded ratio across a delta sweep is the numerical signature of the
    linear scaling of the remainder.
    """

    point: tuple[float, float, float]
    rows: tuple[CorrectorRow, ...]
    noise_floor: float
    grid: GridSpec
    params: ModelParams

    @property
    def usable_rows(self) -> tuple[CorrectorRow, ...]:
        return tuple(row for row in self.rows if not row.excluded)

    @property
    def ratio(self) -> float:
        scaled = [abs(row.e_over_delta) for row in self.usable_rows]
        if len(scaled) < 2:
            return float("nan")
        return max(scaled) / min(scaled)

    def to_csv(self, path, header_lines=()) -> None:
        """Write ``delta,p_delta,p0,p1,e_delta,e_over_delta,excluded`` rows."""
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("delta,p_delta,p0,p1,e_delta,e_over_delta,excluded\n")
            for row in self.rows:
                fh.write(
                    f"{row.delta!r},{row.p_delta!r},{row.p0!r},{row.p1!r},"
                    f"{row.e_delta!r},{row.e_over_delta!r},{int(row.excluded)}\n"
                )

    def as_dict(self) -> dict:
        return {
            "point": list(self.point),
            "rows": [dataclasses.asdict(row) for row in self.rows],
            "ratio": _json_safe(self.ratio),
            "n_usable_rows": len(self.usable_rows),
            "noise_floor": self.noise_floor,
            "grid": dataclasses.asdict(self.grid),
            "params": dataclasses.asdict(self.params),
        }

    def to_json(self, path, extra: dict | None = None) -> None:
        doc = self.as_dict()
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def corrector_sweep(
    params_base: ModelParams,
    payoff: PiecewiseLinearPayoff,
    grid: GridSpec,
    point: tuple[float, float],
    deltas,
    cell_average_terminal: bool = False,
    noise_floor: float | None = None,
) -> CorrectorReport:
    """Tabulate the remainder after the square-root correction per delta.

    The limit and corrector surfaces are solved once (neither depends on
    delta); each delta adds one moving-factor solve.  The remainder is
    ``p_delta - p0 - sqrt(delta) p1`` at ``(0, point)``.  The noise floor
    is measured like :func:`run_delta_sweep`, on the remainder itself.
    """
    ds = _check_sweep_inputs(grid, point, deltas)
    x0, v0 = float(point[0]), float(point[1])

    p0_surface = solve_bsb_1d(
        params_base, payoff, grid, store_slices=True,
        cell_average_terminal=cell_average_terminal,
    )
    params_any = params_base.with_delta(ds[0])
    p1_surface = solve_corrector(params_any, payoff, grid, p0_surface)
    p0_val = p0_surface.value_at(0, x0, v0)
    p1_val = p1_surface.value_at(0, x0, v0)

    p_vals: dict[float, float] = {}
    for d in ds:
        params_d = params_base.with_delta(d)
        try:
            surface = solve_hjb_2d(
                params_d, payoff, grid, cell_average_terminal=cell_average_terminal
            )
        except Exception as exc:
            _attach_delta(exc, d)
            raise
        p_vals[d] = surface.value_at(0, x0, v0)

    def remainder(pd, p0v, p1v, d):
        return pd - p0v - math.sqrt(d) * p1v

    if noise_floor is None:
        d_min = ds[-1]
        params_d = params_base.with_delta(d_min)
        fine = _refined_for_floor(params_d, grid)
        try:
            pd_fine = solve_hjb_2d(
                params_d, payoff, fine, cell_average_terminal=cell_average_terminal
            ).value_at(0, x0, v0)
            p0_fine_surface = solve_bsb_1d(
                params_base, payoff, fine, store_slices=True,
                cell_average_terminal=cell_average_terminal,
            )
            p1_fine = solve_corrector(
                params_d, payoff, fine, p0_fine_surface
            ).value_at(0, x0, v0)
        except Exception as exc:
            _attach_delta(exc, d_min)
            raise
        e_coarse = remainder(p_vals[d_min], p0_val, p1_val, d_min)
        e_fine = remainder(pd_fine, p0_fine_surface.value_at(0, x0, v0),
                           p1_fine, d_min)
        noise_floor = abs(e_fine - e_coarse)

    rows = []
    for d in ds:
        e = remainder(p_vals[d], p0_val, p1_val, d)
        excluded = abs(e) < 10.0 * noise_floor or e == 0.0
        rows.append(
            CorrectorRow(delta=d, p_delta=p_vals[d], p0=p0_val, p1=p1_val,
                         e_delta=e, e_over_delta=e / d, excluded=excluded)
        )
    return CorrectorReport(
        point=(0.0, x0, v0),
        rows=tuple(rows),
        noise_floor=float(noise_floor),
        grid=grid,
        params=params_base,
    )


@dataclass(frozen=True)
class FeynmanKacReport:
    """Monte-Carlo estimates of the leading error-representation terms."""

    i0: float
    i0_std_error: float
    i1: float
    i1_std_error: float
    delta: float
    n_paths: int
    control_source: str
    i2: float | None = None
    i2_std_error: float | None = None
    i3: float | None = None
    i3_std_error: float | None = None

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _dense_enough(surface: PriceSurface, n_steps: int, name: str) -> None:
    if surface.n_kept < surface.grid.n_t + 1:
        gaps = np.diff(surface.kept_times) * surface.grid.dt
        if gaps.max() > surface.grid.T / n_steps * (1.0 + 1e-9):
            raise ValueError(
                f"{name} surface slices are coarser in time than the "
                f"simulation; re-solve with store_slices=True and "
                f"max_kept_slices >= {n_steps + 1}"
            )


def feynman_kac_terms(
    params: ModelParams,
    payoff: PiecewiseLinearPayoff,
    grid: GridSpec,
    p0: PriceSurface,
    p1: PriceSurface,
    delta: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    point: tuple[float, float] = (100.0, -1.0),
    p_delta: PriceSurface | None = None,
    control_source: str = "delta",
    include_higher: bool = False,
) -> FeynmanKacReport:
    """Estimate the error-representation integrals along worst-case paths.

    The asset follows the model dynamics under the maximizing multiplier
    field of the moving-factor solve (``control_source="p0"`` substitutes
    the limit field, flagged in the report, for deltas too small to
    matter).  The leading integrand pairs the control-disagreement
    indicator with Greeks of the limit surface along the path; all
    curvatures are read by bilinear interpolation, which keeps the
    sub-grid shift of the curvature sign-change line — the disagreement
    set lives exactly on that scale — visible to the indicators.  The
    next order adds the corrector curvature.  Time integrals use the
    trapezoid rule on the simulation times; ``include_higher`` also
    returns the two remaining (delta- and delta^{3/2}-weighted) terms.
    """
    if p0.kind != "limit_p0" or p0.v_constant is not None:
        raise ValueError("p0 must be the per-v-node limit family")
    if p1.kind != "corrector_p1":
        raise ValueError(f"p1 must be a corrector surface, got {p1.kind!r}")
    if p0.grid != grid or p1.grid != grid:
        raise ValueError("surfaces must live on the sweep grid")
    if control_source not in ("delta", "p0"):
        raise ValueError(f"control_source must be 'delta' or 'p0', got "
                         f"{control_source!r}")
    params_d = params.with_delta(float(delta))
    if p_delta is None:
        p_delta = solve_hjb_2d(
            params_d, payoff, grid, store_slices=True,
            max_kept_slices=2 * n_steps + 1,
        )
    elif p_delta.kind != "full_delta" or p_delta.grid != grid:
        raise ValueError("p_delta must be a full_delta surface on the grid")
    for surface, name in ((p0, "p0"), (p1, "p1"), (p_delta, "p_delta")):
        _dense_enough(surface, n_steps, name)

    x0, v0 = float(point[0]), float(point[1])
    policy_surface = p_delta if control_source == "delta" else p0
    policy = WorstCaseControl(policy_surface, params_d)
    batch = simulate_paths(
        params_d, x0, v0, policy, n_paths, n_steps, grid.T, seed
    )
    dt = grid.T / n_steps
    lo, hi = params.sigma_min, params.sigma_max
    d_lin = hi - lo
    d_sq = hi * hi - lo * lo
    rho_sigma = params.rho * params.sigma

    caches = {id(s): {"pos": -1, "g": None} for s in (p_delta, p0, p1)}

    def greeks_at(surface, t):
        cache = caches[id(surface)]
        pos = surface.nearest_pos(t)
        if pos != cache["pos"]:
            cache["g"] = greeks(surface, surface.kept_times[pos])
            cache["pos"] = pos
        return cache["g"]

    i0_acc = np.zeros(n_paths)
    i1_acc = np.zeros(n_paths)
    i2_acc = np.zeros(n_paths) if include_higher else None
    i3_acc = np.zeros(n_paths) if include_higher else None
    for k in range(n_steps + 1):
        t = k * dt
        w = dt * (0.5 if k in (0, n_steps) else 1.0)
        x = batch.x_paths[:, k]
        v = batch.v_paths[:, k]
        jx = np.clip(np.floor((x - grid.x_min) / grid.dx).astype(int),
                     0, grid.n_x)
        jv = np.clip(np.floor((v - grid.v_min) / grid.dv).astype(int),
                     0, grid.n_v - 2)
        wx = (x - grid.x_min) / grid.dx - jx
        wv = (v - grid.v_min) / grid.dv - jv

        def interp(F):
            return (
                F[jx, jv] * (1.0 - wx) * (1.0 - wv)
                + F[jx + 1, jv] * wx * (1.0 - wv)
                + F[jx, jv + 1] * (1.0 - wx) * wv
                + F[jx + 1, jv + 1] * wx * wv
            )

        g_d = greeks_at(p_delta, t)
        g_0 = greeks_at(p0, t)
        gamma_d = interp(g_d.gamma)
        gamma_0 = interp(g_0.gamma)
        ind = (
            (gamma_d >= 0.0).astype(float) - (gamma_0 >= 0.0).astype(float)
        )
        ev = np.exp(v)
        g_1 = greeks_at(p1, t)
        base = 0.5 * d_sq * ind * ev * ev * x * x
        i0_acc += w * base * gamma_0
        i1_acc += w * (
            d_lin * ind * rho_sigma * ev * x * interp(g_0.vanna)
            + base * interp(g_1.gamma)
        )
        if include_higher:
            q_star = np.where(gamma_d >= 0.0, hi, lo)
            drift_v = params.a - params.b * np.exp(params.alpha * v)
            i2_acc += w * (
                q_star * rho_sigma * ev * x * interp(g_1.vanna)
                + 0.5 * params.sigma**2 * interp(g_0.vomma)
                + drift_v * interp(g_0.vega)
            )
            i3_acc += w * (
                0.5 * params.sigma**2 * interp(g_1.vomma)
                + drift_v * interp(g_1.vega)
            )

    def stats(acc):
        return float(acc.mean()), float(acc.std(ddof=1) / math.sqrt(n_paths))

    i0, i0_se = stats(i0_acc)
    i1, i1_se = stats(i1_acc)
    extra = {}
    if include_higher:
        extra["i2"], extra["i2_std_error"] = stats(i2_acc)
        extra["i3"], extra["i3_std_error"] = stats(i3_acc)
    return FeynmanKacReport(
        i0=i0, i0_std_error=i0_se, i1=i1, i1_std_error=i1_se,
        delta=float(delta), n_paths=int(n_paths),
        control_source=("full_delta field" if control_source == "delta"
                        else "limit field (proxy)"),
        **extra,
    )
