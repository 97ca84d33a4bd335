"""Price surfaces on the (t, x, v) grid and fields derived from them.

A :class:`PriceSurface` stores selected time slices of a finite-difference
solve, tagged by ``kind``:

* ``full_delta`` — the worst-case price with the moving factor,
* ``limit_p0``  — the frozen-factor (delta = 0) limit price,
* ``corrector_p1`` — the first-order correction term.

From a slice one can read discrete Greeks, extract the pointwise optimal
volatility multiplier, and build masks of the curvature zero set and of the
nodes where the moving-factor and limit controls disagree.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import GridSpec, ModelParams


def _axis_first_deriv(F: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Central first derivative, second-order one-sided at the two edges."""
    F = np.moveaxis(F, axis, 0)
    out = np.empty_like(F)
    out[1:-1] = (F[2:] - F[:-2]) / (2.0 * h)
    out[0] = (-3.0 * F[0] + 4.0 * F[1] - F[2]) / (2.0 * h)
    out[-1] = (3.0 * F[-1] - 4.0 * F[-2] + F[-3]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def _axis_second_deriv(F: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Central second derivative; one-sided (second order when the axis has
    at least four nodes, else copied from the nearest interior) at edges."""
    F = np.moveaxis(F, axis, 0)
    out = np.empty_like(F)
    h2 = h * h
    out[1:-1] = (F[2:] - 2.0 * F[1:-1] + F[:-2]) / h2
    if F.shape[0] >= 4:
        out[0] = (2.0 * F[0] - 5.0 * F[1] + 4.0 * F[2] - F[3]) / h2
        out[-1] = (2.0 * F[-1] - 5.0 * F[-2] + 4.0 * F[-3] - F[-4]) / h2
    else:
        out[0] = out[1]
        out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


@dataclass(frozen=True)
class GreekFields:
    """Discrete sensitivities of one time slice on the full node grid."""

    delta: np.ndarray
    gamma: np.ndarray
    vega: np.ndarray
    vanna: np.ndarray
    vomma: np.ndarray


@dataclass(frozen=True)
class ControlField:
    """Pointwise optimal volatility multiplier on one time slice."""

    q_star: np.ndarray
    source_kind: str
    gamma_tolerance: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.q_star)):
            raise ValueError("control field contains non-finite entries")

    def to_csv(self, path, x_nodes, v_nodes, header_lines=()) -> None:
        """Write the field as ``x,v,q_star`` rows."""
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["x", "v", "q_star"])
            for i, x in enumerate(x_nodes):
                for j, v in enumerate(v_nodes):
                    writer.writerow([repr(float(x)), repr(float(v)),
                                     repr(float(self.q_star[i, j]))])


@dataclass(frozen=True)
class MismatchMasks:
    """Curvature zero set and control-disagreement set on one time slice.

    ``s0`` marks nodes where the limit curvature is inside the dead band;
    ``a_delta`` marks nodes where the moving-factor curvature is positive
    while the limit curvature is negative (both beyond the dead band), i.e.
    where the two bang-bang controls genuinely disagree.
    """

    a_delta: np.ndarray
    s0: np.ndarray
    gamma_tolerance: float

    @property
    def a_delta_fraction(self) -> float:
        return float(self.a_delta.mean())

    @property
    def s0_fraction(self) -> float:
        return float(self.s0.mean())


@dataclass(frozen=True)
class PriceSurface:
    """Selected time slices of a finite-difference solve.

    ``values`` has shape ``(n_kept, n_x + 2, n_v)`` with rows ordered by
    ``kept_times`` (ascending time indices; 0 and ``n_t`` always present).
    ``v_constant`` is set when the solve ran at a single factor level and
    the v-axis is a broadcast copy.
    """

    values: np.ndarray
    grid: GridSpec
    params: ModelParams
    kind: str
    kept_times: tuple[int, ...]
    v_constant: float | None = None

    def __post_init__(self):
        kept = tuple(int(k) for k in self.kept_times)
        object.__setattr__(self, "kept_times", kept)
        if kept != tuple(sorted(set(kept))):
            raise ValueError("kept_times must be strictly increasing")
        if kept[0] != 0 or kept[-1] != self.grid.n_t:
            raise ValueError("kept_times must include 0 and n_t")
        expected = (len(kept), self.grid.n_x + 2, self.grid.n_v)
        if self.values.shape != expected:
            raise ValueError(
                f"values shape {self.values.shape} does not match {expected}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("surface contains non-finite values")

    @property
    def n_kept(self) -> int:
        return len(self.kept_times)

    def pos_of(self, time_index: int) -> int:
        """Storage row of an exact time index; KeyError when not retained."""
        kept = np.asarray(self.kept_times)
        pos = int(np.searchsorted(kept, time_index))
        if pos >= len(kept) or kept[pos] != time_index:
            raise KeyError(
                f"time slice {time_index} not retained (kept: "
                f"{self.n_kept} of {self.grid.n_t + 1})"
            )
        return pos

    def nearest_pos(self, t: float) -> int:
        """Storage row whose time value is closest to ``t``."""
        times = np.asarray(self.kept_times) * self.grid.dt
        return int(np.argmin(np.abs(times - t)))

    def slice_at(self, time_index: int) -> np.ndarray:
        """The (n_x+2, n_v) slice at an exact time index."""
        return self.values[self.pos_of(time_index)]

    def value_at(self, time_index: int, x, v, extrapolate: bool = True):
        """Bilinear read of the slice at ``time_index``; linear extrapolation
        outside the rectangle unless ``extrapolate`` is False (then clamped)."""
        F = self.slice_at(time_index)
        return _bilinear(self.grid, F, x, v, extrapolate)

    def value_near_time(self, t: float, x, v, extrapolate: bool = True):
        """Like :meth:`value_at` but snapping ``t`` to the nearest kept slice."""
        F = self.values[self.nearest_pos(t)]
        return _bilinear(self.grid, F, x, v, extrapolate)

    def to_csv(self, path, time_indices=None, header_lines=()) -> None:
        """Write ``t,x,v,value`` rows for the chosen time indices
        (default: the initial and terminal slices)."""
        if time_indices is None:
            time_indices = (0, self.grid.n_t)
        x_nodes = self.grid.x_nodes
        v_nodes = self.grid.v_nodes
        dt = self.grid.dt
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "v", "value"])
            for k in time_indices:
                F = self.slice_at(int(k))
                t = k * dt
                for i, x in enumerate(x_nodes):
                    for j, v in enumerate(v_nodes):
                        writer.writerow(
                            [repr(float(t)), repr(float(x)), repr(float(v)),
                             repr(float(F[i, j]))]
                        )


def _bilinear(grid: GridSpec, F: np.ndarray, x, v, extrapolate: bool):
    x_arr = np.asarray(x, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    fx = (x_arr - grid.x_min) / grid.dx
    fv = (v_arr - grid.v_min) / grid.dv
    ix = np.clip(np.floor(fx).astype(int), 0, grid.n_x)
    iv = np.clip(np.floor(fv).astype(int), 0, grid.n_v - 2)
    wx = fx - ix
    wv = fv - iv
    if not extrapolate:
        wx = np.clip(wx, 0.0, 1.0)
        wv = np.clip(wv, 0.0, 1.0)
    out = (
        F[ix, iv] * (1.0 - wx) * (1.0 - wv)
        + F[ix + 1, iv] * wx * (1.0 - wv)
        + F[ix, iv + 1] * (1.0 - wx) * wv
        + F[ix + 1, iv + 1] * wx * wv
    )
    if np.isscalar(x) and np.isscalar(v):
        return float(out)
    return out


def greeks(surface: PriceSurface, time_index: int) -> GreekFields:
    """Discrete Greeks of the retained slice at ``time_index``.

    Central differences in the interior, second-order one-sided at the
    boundary nodes; the mixed derivative composes the two first-derivative
    stencils.
    """
    F = surface.slice_at(time_index)
    dx = surface.grid.dx
    dv = surface.grid.dv
    delta = _axis_first_deriv(F, dx, axis=0)
    return GreekFields(
        delta=delta,
        gamma=_axis_second_deriv(F, dx, axis=0),
        vega=_axis_first_deriv(F, dv, axis=1),
        vanna=_axis_first_deriv(delta, dv, axis=1),
        vomma=_axis_second_deriv(F, dv, axis=1),
    )


def default_gamma_tolerance(surface: PriceSurface) -> float:
    """Curvature dead band: 1e-6 times the payoff scale over dx^2.

    Discrete curvature of a kinked terminal condition has spikes of order
    ``|h|/dx^2``; the dead band is a small fraction of that scale.
    """
    payoff_scale = float(np.max(np.abs(surface.values[-1])))
    return max(1e-6 * payoff_scale / surface.grid.dx**2, 1e-12)


def optimal_control_field(
    surface: PriceSurface,
    params: ModelParams,
    time_index: int,
    gamma_tolerance: float | None = None,
) -> ControlField:
    """Pointwise maximizing multiplier on the slice at ``time_index``.

    For a ``limit_p0`` surface this is the bang-bang rule (``sigma_max``
    where the curvature is above ``-gamma_tolerance``, else ``sigma_min``).
    For ``full_delta`` the quadratic in ``q`` built from the discrete
    curvature and vanna is maximized over the two endpoints and, where the
    quadratic is concave, its interior stationary point.  Ties go to
    ``sigma_max``.
    """
    if surface.kind not in ("full_delta", "limit_p0"):
        raise ValueError(
            f"control extraction needs a price surface, got kind={surface.kind!r}"
        )
    if gamma_tolerance is None:
        gamma_tolerance = default_gamma_tolerance(surface)
    g = greeks(surface, time_index)
    lo, hi = params.sigma_min, params.sigma_max
    if surface.kind == "limit_p0":
        q = np.where(g.gamma >= -gamma_tolerance, hi, lo)
    else:
        x = surface.grid.x_nodes[:, None]
        ev = np.exp(surface.grid.v_nodes)[None, :]
        aa = 0.5 * ev**2 * x**2 * g.gamma
        bb = np.sqrt(params.delta) * params.rho * params.sigma * x * ev * g.vanna
        f_lo = lo * lo * aa + lo * bb
        f_hi = hi * hi * aa + hi * bb
        q = np.where(f_hi >= f_lo, hi, lo)
        concave = aa < 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            q_hat = np.where(concave, -bb / (2.0 * aa), hi)
            f_hat = np.where(concave, -(bb * bb) / (4.0 * aa), -np.inf)
        inside = concave & (q_hat > lo) & (q_hat < hi)
        better = inside & (f_hat > np.maximum(f_lo, f_hi))
        q = np.where(better, q_hat, q)
    return ControlField(
        q_star=q, source_kind=surface.kind, gamma_tolerance=float(gamma_tolerance)
    )


def mismatch_set(
    p_delta: PriceSurface,
    p0: PriceSurface,
    time_index: int,
    gamma_tolerance: float | None = None,
) -> MismatchMasks:
    """Masks of the limit-curvature zero set and the control-disagreement set.

    Both surfaces must live on the same grid.  A node lands in the
    disagreement set when the moving-factor curvature exceeds the dead band
    while the limit curvature lies below its negative.
    """
    if p_delta.kind != "full_delta" or p0.kind != "limit_p0":
        raise ValueError(
            "expected (full_delta, limit_p0) surfaces, got "
            f"({p_delta.kind!r}, {p0.kind!r})"
        )
    if p_delta.grid != p0.grid:
        raise ValueError("surfaces live on different grids")
    if gamma_tolerance is None:
        gamma_tolerance = default_gamma_tolerance(p_delta)
    g_delta = greeks(p_delta, time_index).gamma
    g_zero = greeks(p0, time_index).gamma
    s0 = np.abs(g_zero) <= gamma_tolerance
    a_delta = (g_delta > gamma_tolerance) & (g_zero < -gamma_tolerance)
    return MismatchMasks(
        a_delta=a_delta, s0=s0, gamma_tolerance=float(gamma_tolerance)
    )


class WorstCaseControl:
    """Path policy reading the maximizing multiplier off a solved surface.

    ``values(t, x, v)`` snaps ``t`` to the nearest retained slice and
    ``(x, v)`` to the nearest grid node of that slice's control field —
    nearest-node sampling keeps the bang-bang structure intact instead of
    smearing it by interpolation.
    """

    tag = "worst-case field"

    def __init__(self, surface: PriceSurface, params: ModelParams,
                 gamma_tolerance: float | None = None):
        if surface.n_kept < 3 and surface.grid.n_t > 1:
            raise ValueError(
                "worst-case policy needs a surface solved with stored slices"
            )
        self._surface = surface
        self._params = params
        self._tolerance = gamma_tolerance
        self._cached_pos = -1
        self._cached_field = None

    def _field_at(self, pos: int) -> np.ndarray:
        if pos != self._cached_pos:
            time_index = self._surface.kept_times[pos]
            field = optimal_control_field(
                self._surface, self._params, time_index, self._tolerance
            )
            self._cached_field = field.q_star
            self._cached_pos = pos
        return self._cached_field

    def values(self, t: float, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        grid = self._surface.grid
        q_grid = self._field_at(self._surface.nearest_pos(t))
        ix = np.clip(
            np.rint((np.asarray(x) - grid.x_min) / grid.dx).astype(int),
            0, grid.n_x + 1,
        )
        iv = np.clip(
            np.rint((np.asarray(v) - grid.v_min) / grid.dv).astype(int),
            0, grid.n_v - 1,
        )
        return q_grid[ix, iv]
