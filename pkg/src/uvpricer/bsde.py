"""Second-order BSDE representation checks against a solved price surface.

The worst-case price admits a backward representation along trivial forward
dynamics: both state coordinates are driven directly by a standard
two-dimensional Brownian motion, and the entire model enters through the
driver, which absorbs the nonlinear diffusion coefficient.  For the value
function ``u`` of the pricing equation (without discounting) the driver
identity is ``f = du/dt``, so

* ``Y_s = u(s, X_s)`` integrates ``dY = f ds + Z . dW + (S11 + S22)/2 ds``
  (the Ito form of the Stratonovich pairing against ``dX = dW``),
* ``Y_T`` must reproduce the payoff, and
* the price surface evaluated along worst-case paths is a martingale
  (supermartingale under any other admissible control).

This module builds the drivers, runs the forward/backward simulation with
fields read off a stored surface, and reports the terminal residual and
martingale drift as representation diagnostics.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .model import ModelParams, PiecewiseLinearPayoff
from .sde import simulate_paths
from .surface import GreekFields, PriceSurface, greeks

_CHUNK_CELLS = 1 << 22


@dataclass(frozen=True)
class DriverSpec:
    """Driver of the backward equation under trivial forward dynamics.

    ``kind`` selects the moving-factor driver (``f_delta``) or its frozen
    limit (``f0``).  The default coefficients are the ones forced by the
    pricing equation — quadratic in the asset coordinate, with the
    curvature-sign multiplier applied to both asset terms; ``literal=True``
    switches to the variant with the asset coordinate to the first power,
    a doubled cross coefficient, and the multiplier keyed to the mixed
    entry, kept selectable for side-by-side comparison only.
    """

    kind: str
    params: ModelParams
    literal: bool = False

    def __post_init__(self):
        if self.kind not in ("f0", "f_delta"):
            raise ValueError(f"driver kind must be f0 or f_delta, got {self.kind!r}")

    def sigma_bar(self, s11):
        """Curvature-sign multiplier: sigma_max where the entry is >= 0."""
        p = self.params
        return np.where(np.asarray(s11) >= 0.0, p.sigma_max, p.sigma_min)

    def __call__(self, x, v, z2, s11, s12, s22):
        """Evaluate the driver at state (x, v) with gradient entry ``z2``
        and Hessian entries ``s11, s12, s22`` (time and y do not enter)."""
        p = self.params
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        ev = np.exp(v)
        sb = self.sigma_bar(s11)
        x_diff = x if self.literal else x * x
        out = -0.5 * x_diff * ev * ev * sb * sb * np.asarray(s11)
        if self.kind == "f_delta":
            if self.literal:
                cross = (
                    2.0 * math.sqrt(p.delta) * x * ev * p.sigma * p.rho
                    * self.sigma_bar(s12) * np.asarray(s12)
                )
            else:
                cross = (
                    math.sqrt(p.delta) * x * ev * p.sigma * p.rho
                    * sb * np.asarray(s12)
                )
            out = out - cross - p.delta * (
                0.5 * p.sigma**2 * np.asarray(s22)
                + (p.a - p.b * np.exp(p.alpha * v)) * np.asarray(z2)
            )
        if out.ndim == 0:
            return float(out)
        return out


def build_driver(params: ModelParams, kind: str, literal: bool = False) -> DriverSpec:
    """Driver paired with a solved surface kind: ``f_delta`` for the
    moving-factor equation, ``f0`` for the frozen limit."""
    return DriverSpec(kind=kind, params=params, literal=literal)


@dataclass(frozen=True)
class BsdeResidualReport:
    """Terminal residual of the backward representation.

    ``y0_fd`` is the surface value at the start point; ``y0_mean`` is the
    Monte-Carlo-implied initial value (``y0_fd`` plus the mean signed
    residual), which matches ``y0_fd`` when the representation holds in
    mean; ``terminal_residual_rms`` is the root-mean-square of
    ``Y_T - h(X_T)`` over the paths that stayed on the grid.
    """

    y0_fd: float
    y0_mean: float
    terminal_residual_rms: float
    n_paths_used: int
    n_paths_discarded: int

    def __post_init__(self):
        if self.terminal_residual_rms < 0.0:
            raise ValueError("terminal residual RMS cannot be negative")
        if self.n_paths_used < 0 or self.n_paths_discarded < 0:
            raise ValueError("path counts cannot be negative")

    @property
    def n_paths(self) -> int:
        return self.n_paths_used + self.n_paths_discarded

    @property
    def discard_fraction(self) -> float:
        return self.n_paths_discarded / max(self.n_paths, 1)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["discard_fraction"] = self.discard_fraction
        return d

    def to_json(self, path, extra: dict | None = None) -> None:
        """Write every field (plus ``extra`` entries) as a JSON document."""
        doc = self.as_dict()
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class MartingaleReport:
    """Monte-Carlo drift of the surface value along simulated paths."""

    drift_estimate: float
    std_error: float
    n_paths: int
    policy_tag: str

    def __iter__(self):
        return iter((self.drift_estimate, self.std_error))


def _driver_for_surface(surface: PriceSurface, params: ModelParams) -> DriverSpec:
    kind = {"full_delta": "f_delta", "limit_p0": "f0"}.get(surface.kind)
    if kind is None:
        raise ValueError(
            f"no driver is associated with surface kind {surface.kind!r}"
        )
    return build_driver(params, kind)


def _interp_weights(grid, x, v):
    fx = (x - grid.x_min) / grid.dx
    fv = (v - grid.v_min) / grid.dv
    ix = np.clip(np.floor(fx).astype(int), 0, grid.n_x)
    iv = np.clip(np.floor(fv).astype(int), 0, grid.n_v - 2)
    return ix, iv, fx - ix, fv - iv


def _interp_field(F, ix, iv, wx, wv):
    return (
        F[ix, iv] * (1.0 - wx) * (1.0 - wv)
        + F[ix + 1, iv] * wx * (1.0 - wv)
        + F[ix, iv + 1] * (1.0 - wx) * wv
        + F[ix + 1, iv + 1] * wx * wv
    )


def simulate_2bsde_residual(
    surface: PriceSurface,
    params: ModelParams,
    x_tilde0: tuple[float, float],
    n_paths: int,
    n_steps: int,
    seed: int,
    payoff: PiecewiseLinearPayoff | None = None,
    driver: DriverSpec | None = None,
    chunk_size: int | None = None,
) -> BsdeResidualReport:
    """Forward-simulate the backward representation and report the residual.

    Both state coordinates evolve as independent standard Brownian
    increments from ``x_tilde0``.  At each step the gradient and Hessian
    fields are read off the surface (bilinear in the state, nearest
    retained slice in time) and ``Y`` is advanced by ``f dt + Z . dW +
    (S11 + S22)/2 dt`` from ``Y_0 = u(0, x_tilde0)``.  Paths leaving the
    grid rectangle are discarded from the residual and counted.  The
    terminal payoff is evaluated exactly when ``payoff`` is given, else
    read from the stored terminal slice.

    The retained slices must be at least as dense in time as the
    simulation steps, so the nearest-slice lookup never skips a level.
    """
    grid = surface.grid
    x0, v0 = float(x_tilde0[0]), float(x_tilde0[1])
    if not (grid.x_min < x0 < grid.x_max and grid.v_min < v0 < grid.v_max):
        raise ValueError(
            f"start point ({x0}, {v0}) is not inside the grid interior"
        )
    if n_paths <= 0 or n_steps <= 0:
        raise ValueError("n_paths and n_steps must be positive")
    if surface.n_kept < grid.n_t + 1:
        gaps = np.diff(surface.kept_times) * grid.dt
        if gaps.max() > grid.T / n_steps * (1.0 + 1e-9):
            raise ValueError(
                "retained slices are coarser in time than the simulation; "
                "re-solve with store_slices=True and max_kept_slices >= "
                f"{n_steps + 1}"
            )
    if driver is None:
        driver = _driver_for_surface(surface, params)
    dt = grid.T / n_steps
    sqdt = math.sqrt(dt)
    y0_fd = surface.value_at(0, x0, v0)
    terminal = surface.slice_at(grid.n_t)
    fields: dict[int, GreekFields] = {}
    positions = [surface.nearest_pos(k * dt) for k in range(n_steps)]

    def fields_at(pos: int) -> GreekFields:
        if pos not in fields:
            fields[pos] = greeks(surface, surface.kept_times[pos])
        return fields[pos]

    if chunk_size is None:
        chunk_size = max(1, _CHUNK_CELLS // (2 * n_steps))
    sum_resid = 0.0
    sum_sq = 0.0
    n_used = 0
    for start, m in rng.chunk_ranges(n_paths, chunk_size):
        z = rng.normal_increments(seed, m, n_steps, first_path=start)
        x = np.full(m, x0)
        v = np.full(m, v0)
        y = np.full(m, y0_fd)
        alive = np.ones(m, dtype=bool)
        for k in range(n_steps):
            g = fields_at(positions[k])
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            xa, va = x[idx], v[idx]
            ix, iv, wx, wv = _interp_weights(grid, xa, va)
            z1a = _interp_field(g.delta, ix, iv, wx, wv)
            z2a = _interp_field(g.vega, ix, iv, wx, wv)
            s11 = _interp_field(g.gamma, ix, iv, wx, wv)
            s12 = _interp_field(g.vanna, ix, iv, wx, wv)
            s22 = _interp_field(g.vomma, ix, iv, wx, wv)
            f = driver(xa, va, z2a, s11, s12, s22)
            dw1 = sqdt * z[idx, k, 0]
            dw2 = sqdt * z[idx, k, 1]
            y[idx] += (f + 0.5 * (s11 + s22)) * dt + z1a * dw1 + z2a * dw2
            x[idx] = xa + dw1
            v[idx] = va + dw2
            alive[idx] = (
                (x[idx] >= grid.x_min) & (x[idx] <= grid.x_max)
                & (v[idx] >= grid.v_min) & (v[idx] <= grid.v_max)
            )
        idx = np.flatnonzero(alive)
        if idx.size:
            if payoff is not None:
                h_term = np.asarray(payoff(x[idx]), dtype=float)
            else:
                ix, iv, wx, wv = _interp_weights(grid, x[idx], v[idx])
                h_term = _interp_field(terminal, ix, iv, wx, wv)
            resid = h_term - y[idx]
            sum_resid += float(resid.sum())
            sum_sq += float((resid**2).sum())
            n_used += idx.size
    if n_used == 0:
        raise RuntimeError(
            "every path left the grid before maturity; enlarge the domain"
        )
    return BsdeResidualReport(
        y0_fd=float(y0_fd),
        y0_mean=float(y0_fd + sum_resid / n_used),
        terminal_residual_rms=math.sqrt(sum_sq / n_used),
        n_paths_used=int(n_used),
        n_paths_discarded=int(n_paths - n_used),
    )


def martingale_check(
    surface: PriceSurface,
    params: ModelParams,
    q_policy,
    x0: float,
    v0: float,
    n_paths: int,
    n_steps: int,
    seed: int,
    chunk_size: int | None = None,
) -> MartingaleReport:
    """Drift of the surface value along model paths under a control.

    Simulates the model state under ``q_policy`` (a fixed multiplier or a
    policy object) and estimates ``E[P(T, X_T, V_T) - P(0, x0, v0)]``.
    Zero within noise certifies the martingale property of the worst-case
    control; a negative drift shows a fixed control is suboptimal
    (supermartingale).  Requires the undiscounted setting.
    """
    if params.r != 0.0:
        raise ValueError("martingale check is defined for r = 0")
    batch = simulate_paths(
        params, x0, v0, q_policy, n_paths, n_steps, surface.grid.T, seed,
        chunk_size=chunk_size,
    )
    m0 = surface.value_at(0, x0, v0)
    m_term = surface.value_at(
        surface.grid.n_t, batch.x_paths[:, -1], batch.v_paths[:, -1]
    )
    diff = m_term - m0
    tag = getattr(q_policy, "tag", None) or f"fixed q={float(q_policy):g}"
    return MartingaleReport(
        drift_estimate=float(diff.mean()),
        std_error=float(diff.std(ddof=1) / math.sqrt(n_paths)),
        n_paths=int(n_paths),
        policy_tag=tag,
    )


def driver_consistency(
    surface: PriceSurface,
    params: ModelParams,
    driver: DriverSpec | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-slice RMS gap between the discrete time derivative and the driver.

    For each adjacent pair of retained slices the backward time difference
    of the surface is compared, on interior nodes, with the driver
    evaluated from the later slice's discrete Greeks.  Returns the slice
    times and the RMS profile; the profile shrinks under grid refinement
    as both sides converge to ``du/dt``.
    """
    if driver is None:
        driver = _driver_for_surface(surface, params)
    if surface.n_kept < 2:
        raise ValueError("need at least two retained slices")
    grid = surface.grid
    X = grid.x_nodes[1:-1, None]
    V = grid.v_nodes[None, 1:-1]
    times = []
    rms = []
    for pos in range(1, surface.n_kept):
        k0, k1 = surface.kept_times[pos - 1], surface.kept_times[pos]
        g = greeks(surface, k1)
        f = driver(
            np.broadcast_to(X, (X.shape[0], V.shape[1])),
            np.broadcast_to(V, (X.shape[0], V.shape[1])),
            g.vega[1:-1, 1:-1],
            g.gamma[1:-1, 1:-1],
            g.vanna[1:-1, 1:-1],
            g.vomma[1:-1, 1:-1],
        )
        du_dt = (
            surface.values[pos][1:-1, 1:-1] - surface.values[pos - 1][1:-1, 1:-1]
        ) / ((k1 - k0) * grid.dt)
        times.append(k1 * grid.dt)
        rms.append(float(np.sqrt(np.mean((du_dt - f) ** 2))))
    return np.asarray(times), np.asarray(rms)
