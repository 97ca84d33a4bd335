"""Monte Carlo simulation of the asset/factor system and closed-form checks.

The asset follows ``dX = r X dt + X q e^V dW1`` and the factor
``dV = delta (a - b e^{alpha V}) dt + sqrt(delta) sigma dW2`` with
``corr(dW1, dW2) = rho``.  ``X`` is discretized in log space
(``d log X = (r - q^2 e^{2V}/2) dt + q e^V dW1``) so paths stay strictly
positive; ``V`` uses plain Euler-Maruyama.  ``delta = 0`` freezes the factor
exactly — no drift or noise is applied at all.

Increments come from :mod:`uvpricer.rng`, so batches are reproducible and
chunk-order independent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import PoleError
from .model import ModelParams, PiecewiseLinearPayoff
from .rng import chunk_ranges, normal_increments

# Increment chunks are capped near this many (path, step) cells.
_CHUNK_CELLS = 1 << 22


@dataclass(frozen=True)
class PathBatch:
    """Simulated paths of ``(X, V)`` on a uniform time grid.

    ``x_paths`` and ``v_paths`` have shape ``(n_paths, n_steps + 1)`` with
    column 0 holding the initial state.  ``control_tag`` records which
    volatility-multiplier policy generated the batch.
    """

    x_paths: np.ndarray
    v_paths: np.ndarray
    dt: float
    seed: int
    control_tag: str

    @property
    def n_paths(self) -> int:
        return self.x_paths.shape[0]

    @property
    def n_steps(self) -> int:
        return self.x_paths.shape[1] - 1

    @property
    def t_nodes(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def to_csv(self, path, max_paths: int | None = None, header_lines=()) -> None:
        """Write paths in long format (``path,step,t,x,v``), optionally truncated."""
        keep = self.n_paths if max_paths is None else min(max_paths, self.n_paths)
        t = self.t_nodes
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh)
            writer.writerow(["path", "step", "t", "x", "v"])
            for i in range(keep):
                for k in range(self.n_steps + 1):
                    writer.writerow(
                        [i, k, repr(float(t[k])),
                         repr(float(self.x_paths[i, k])),
                         repr(float(self.v_paths[i, k]))]
                    )


@dataclass(frozen=True)
class MomentReport:
    """Monte Carlo estimate of a path-functional moment."""

    order: int
    estimate: float
    std_error: float
    n_paths: int
    which: str = "X"
    time_integrated: bool = False


@dataclass(frozen=True)
class CoupledGap:
    """Mean-square distance between moving-factor and frozen-factor paths.

    ``gap_sq`` estimates ``E[(X^moving_T - X^frozen_T)^2]``; the payoff
    fields do the same for ``h`` applied to the terminal values.  Iterating
    the report yields ``(gap_sq, std_error)``.
    """

    gap_sq: float
    std_error: float
    payoff_gap_sq: float
    payoff_std_error: float
    n_paths: int

    def __iter__(self):
        yield self.gap_sq
        yield self.std_error


def _policy_tag(q_policy) -> str:
    if isinstance(q_policy, (int, float)):
        return f"fixed q={float(q_policy)}"
    return str(getattr(q_policy, "tag", q_policy.__class__.__name__))


def _check_initial_state(x0: float, v0: float) -> None:
    if not (np.isfinite(x0) and np.isfinite(v0)):
        raise ValueError(f"initial state must be finite, got x0={x0}, v0={v0}")
    if x0 <= 0.0:
        raise ValueError(
            f"x0 must be positive for the log-space scheme, got {x0}"
        )


def _check_fixed_q(params: ModelParams, q: float) -> float:
    q = float(q)
    if not params.sigma_min <= q <= params.sigma_max:
        raise ValueError(
            f"fixed multiplier q={q} outside admissible interval "
            f"[{params.sigma_min}, {params.sigma_max}]"
        )
    return q


def simulate_paths(
    params: ModelParams,
    x0: float,
    v0: float,
    q_policy,
    n_paths: int,
    n_steps: int,
    T: float,
    seed: int,
    chunk_size: int | None = None,
) -> PathBatch:
    """Euler-Maruyama batch of ``(X, V)`` paths up to horizon ``T``.

    ``q_policy`` is either a fixed multiplier inside the admissible
    interval, or any object with ``values(t, x, v) -> array`` (and an
    optional ``tag``) evaluated at the start of each step.
    """
    if n_paths < 1 or n_steps < 1:
        raise ValueError(f"need n_paths >= 1 and n_steps >= 1, got {n_paths}, {n_steps}")
    if not T > 0.0:
        raise ValueError(f"horizon must be positive, got {T}")
    _check_initial_state(x0, v0)
    fixed_q = None
    if isinstance(q_policy, (int, float)):
        fixed_q = _check_fixed_q(params, q_policy)
    elif not hasattr(q_policy, "values"):
        raise TypeError(
            "q_policy must be a number or expose values(t, x, v); got "
            f"{type(q_policy).__name__}"
        )

    dt = T / n_steps
    sq_dt = math.sqrt(dt)
    rho = params.rho
    rho_perp = math.sqrt(max(0.0, 1.0 - rho * rho))
    freeze_v = params.delta == 0.0
    drift_scale = params.delta
    noise_scale = math.sqrt(params.delta) * params.sigma

    if chunk_size is None:
        chunk_size = max(1, _CHUNK_CELLS // n_steps)

    x_out = np.empty((n_paths, n_steps + 1))
    v_out = np.empty((n_paths, n_steps + 1))
    for first, count in chunk_ranges(n_paths, chunk_size):
        z = normal_increments(seed, count, n_steps, first_path=first)
        dw1 = sq_dt * z[:, :, 0]
        dw2 = rho * dw1 + rho_perp * sq_dt * z[:, :, 1]
        log_x = np.full(count, math.log(x0))
        v = np.full(count, float(v0))
        x_out[first : first + count, 0] = x0
        v_out[first : first + count, 0] = v0
        for k in range(n_steps):
            ev = np.exp(v)
            if fixed_q is not None:
                q = fixed_q
            else:
                q = q_policy.values(k * dt, np.exp(log_x), v)
            log_x += (params.r - 0.5 * q * q * ev * ev) * dt + q * ev * dw1[:, k]
            if not freeze_v:
                v = v + drift_scale * (params.a - params.b * np.exp(params.alpha * v)) * dt
                v += noise_scale * dw2[:, k]
            x_out[first : first + count, k + 1] = np.exp(log_x)
            v_out[first : first + count, k + 1] = v
    x_out.flags.writeable = False
    v_out.flags.writeable = False
    return PathBatch(
        x_paths=x_out, v_paths=v_out, dt=dt, seed=seed, control_tag=_policy_tag(q_policy)
    )


def _mean_and_se(samples: np.ndarray) -> tuple[float, float]:
    n = samples.size
    mean = float(samples.mean())
    if n < 2:
        return mean, 0.0
    return mean, float(samples.std(ddof=1) / math.sqrt(n))


def estimate_moment(
    batch: PathBatch, which: str = "X", k: int = 1, time_integrated: bool = False
) -> MomentReport:
    """Estimate ``E[|Z_T|^k]`` (or ``E[int_0^T |Z_s|^k ds]``) for ``Z``
    in ``{X, V}``."""
    if k < 1:
        raise ValueError(f"moment order must be >= 1, got {k}")
    key = which.upper()
    if key == "X":
        paths = batch.x_paths
    elif key == "V":
        paths = batch.v_paths
    else:
        raise ValueError(f"which must be 'X' or 'V', got {which!r}")
    if time_integrated:
        samples = np.trapezoid(np.abs(paths) ** k, dx=batch.dt, axis=1)
    else:
        samples = np.abs(paths[:, -1]) ** k
    estimate, std_error = _mean_and_se(samples)
    return MomentReport(
        order=k,
        estimate=estimate,
        std_error=std_error,
        n_paths=batch.n_paths,
        which=key,
        time_integrated=time_integrated,
    )


def coupled_payoff_gap(
    params: ModelParams,
    payoff: PiecewiseLinearPayoff,
    x0: float,
    v0: float,
    q: float,
    n_paths: int,
    n_steps: int,
    T: float,
    seed: int,
    chunk_size: int | None = None,
) -> CoupledGap:
    """Mean-square terminal gap between the moving-factor asset and its
    frozen-factor twin driven by the same Brownian increments.

    Both assets start at ``x0`` with multiplier ``q``; the twin keeps
    ``V = v0`` for ever.  The report also carries the payoff-level gap
    ``E[(h(X^moving_T) - h(X^frozen_T))^2]``.
    """
    if n_paths < 1 or n_steps < 1:
        raise ValueError(f"need n_paths >= 1 and n_steps >= 1, got {n_paths}, {n_steps}")
    if not T > 0.0:
        raise ValueError(f"horizon must be positive, got {T}")
    _check_initial_state(x0, v0)
    q = _check_fixed_q(params, q)

    dt = T / n_steps
    sq_dt = math.sqrt(dt)
    rho = params.rho
    rho_perp = math.sqrt(max(0.0, 1.0 - rho * rho))
    freeze = params.delta == 0.0
    noise_scale = math.sqrt(params.delta) * params.sigma
    ev0 = math.exp(v0)
    if chunk_size is None:
        chunk_size = max(1, _CHUNK_CELLS // n_steps)

    gap_samples = np.empty(n_paths)
    pay_samples = np.empty(n_paths)
    for first, count in chunk_ranges(n_paths, chunk_size):
        z = normal_increments(seed, count, n_steps, first_path=first)
        dw1 = sq_dt * z[:, :, 0]
        dw2 = rho * dw1 + rho_perp * sq_dt * z[:, :, 1]
        log_x_mov = np.full(count, math.log(x0))
        log_x_frz = np.full(count, math.log(x0))
        v = np.full(count, float(v0))
        for k in range(n_steps):
            ev = np.exp(v)
            log_x_mov += (params.r - 0.5 * q * q * ev * ev) * dt + q * ev * dw1[:, k]
            log_x_frz += (params.r - 0.5 * q * q * ev0 * ev0) * dt + q * ev0 * dw1[:, k]
            if not freeze:
                v = v + params.delta * (params.a - params.b * np.exp(params.alpha * v)) * dt
                v += noise_scale * dw2[:, k]
        x_mov = np.exp(log_x_mov)
        x_frz = np.exp(log_x_frz)
        gap_samples[first : first + count] = (x_mov - x_frz) ** 2
        pay_samples[first : first + count] = (payoff(x_mov) - payoff(x_frz)) ** 2
    gap, gap_se = _mean_and_se(gap_samples)
    pay, pay_se = _mean_and_se(pay_samples)
    return CoupledGap(
        gap_sq=gap,
        std_error=gap_se,
        payoff_gap_sq=pay,
        payoff_std_error=pay_se,
        n_paths=n_paths,
    )


_POLE_TOL = 1e-12
# Below this value of |argument| the 0/0 ratios are evaluated by series.
_SERIES_TOL = 1e-6


def mgf_components(params: ModelParams, eta: float, t: float) -> tuple[float, float]:
    """The pair ``(Psi, Xi)`` of the closed-form integrated-factor MGF.

    Both carry the exponent ``2/sigma^2``; the branch follows the sign of
    ``delta^2 - 2 eta delta sigma^2`` (hyperbolic vs trigonometric).
    Raises :class:`PoleError` when the shared denominator vanishes and
    ``ValueError`` when a fractional power of a negative base appears.
    """
    if t < 0.0:
        raise ValueError(f"t must be non-negative, got {t}")
    delta, sigma = params.delta, params.sigma
    power = 2.0 / sigma**2
    half = 0.5 * t
    disc = delta**2 - 2.0 * eta * delta * sigma**2
    if disc >= 0.0:
        bb = math.sqrt(disc)
        if bb * half < _SERIES_TOL:
            # Removable 0/0: expand sinh/cosh to first order in (bb*t/2).
            psi_inner = math.exp(delta * half) / (1.0 + delta * half)
            xi_inner = eta * t / (1.0 + delta * half)
        else:
            den = bb * math.cosh(bb * half) + delta * math.sinh(bb * half)
            if abs(den) < _POLE_TOL:
                raise PoleError(
                    f"closed-form denominator vanished (eta={eta}, t={t})"
                )
            psi_inner = bb * math.exp(delta * half) / den
            xi_inner = 2.0 * eta * math.sinh(bb * half) / den
    else:
        theta = math.sqrt(-disc)
        if theta * half < _SERIES_TOL:
            psi_inner = math.exp(delta * half) / (1.0 + delta * half)
            xi_inner = eta * t / (1.0 + delta * half)
        else:
            den = theta * math.cos(theta * half) + delta * math.sin(theta * half)
            if abs(den) < _POLE_TOL:
                raise PoleError(
                    f"closed-form denominator vanished on the trigonometric "
                    f"branch (eta={eta}, t={t})"
                )
            psi_inner = theta * math.exp(delta * half) / den
            xi_inner = 2.0 * eta * math.sin(theta * half) / den
    with np.errstate(invalid="ignore"):
        psi = float(np.power(psi_inner, power))
        xi = float(np.power(xi_inner, power))
    if math.isnan(psi) or math.isnan(xi):
        raise ValueError(
            "fractional power of a negative base: the closed form is not "
            f"real-valued at eta={eta}, t={t} (sigma={sigma})"
        )
    return psi, xi


def mgf_closed_form(params: ModelParams, eta: float, t: float, v: float) -> float:
    """Closed-form MGF ``Psi(eta, t) * exp(-v * Xi(eta, t))`` of the
    integrated factor."""
    psi, xi = mgf_components(params, eta, t)
    return psi * math.exp(-v * xi)
