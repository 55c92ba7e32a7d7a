"""Unperturbed linear DDE: fundamental matrix and deterministic solutions.

Integration is a fixed-step classical RK4 on each unit interval ``[j, j+1]``
with the delayed argument read from the previous interval.  The step must
divide 1 so that delayed node values are exact grid reads; the RK4 half-step
stages need delayed values between nodes, which come from cubic Hermite
interpolation using the stored one-sided derivatives.  The scheme is
restarted at every integer time, where the solution is only continuous.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .model import InitialFunction, SddeSystem

__all__ = [
    "FundamentalGrid",
    "Trajectory",
    "GridError",
    "steps_per_delay",
    "fundamental_matrix",
    "solve_dde",
    "representation_formula",
    "fit_envelope",
    "grid_to_csv",
]

MIN_STEPS_PER_DELAY = 32


class GridError(ValueError):
    pass


def steps_per_delay(dt: float, minimum: int = MIN_STEPS_PER_DELAY) -> int:
    """Return ``m`` with ``dt == 1/m``; raise when ``dt`` does not divide 1."""
    if not dt > 0:
        raise GridError("dt must be positive")
    m = int(round(1.0 / dt))
    if m < 1 or abs(m * dt - 1.0) > 1e-12:
        raise GridError(f"dt={dt!r} does not divide the unit delay")
    if m < minimum:
        raise GridError(f"dt={dt!r} gives {m} steps per delay, need at least {minimum}")
    return m


@dataclass(frozen=True, eq=False)
class _StepSolution:
    """Node values plus one-sided derivatives, shape ``(M+1,) + state``."""

    dt: float
    values: np.ndarray
    d_right: np.ndarray
    d_left: np.ndarray

    @property
    def times(self):
        return np.arange(self.values.shape[0]) * self.dt

    def hermite(self, t):
        """Cubic Hermite interpolation; at nodes the right-hand cell is used."""
        t = np.asarray(t, dtype=float)
        h = self.dt
        M = self.values.shape[0] - 1
        c = np.clip(np.floor(t / h + 1e-12).astype(int), 0, M - 1)
        s = (t - c * h) / h
        s = s.reshape(s.shape + (1,) * (self.values.ndim - 1))
        y0, y1 = self.values[c], self.values[c + 1]
        m0, m1 = self.d_right[c] * h, self.d_left[c + 1] * h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1


def _integrate(system: SddeSystem, x0, hist, hist_mid, dt, t_max) -> _StepSolution:
    """Method of steps for ``x' = A x + B x(t-1)``.

    ``hist[i]`` holds the delayed input on the first unit interval at node
    ``i`` (``m+1`` values, the last one being the left limit at ``t=1``) and
    ``hist_mid[i]`` at the half-node ``i + 1/2``.
    """
    m = steps_per_delay(dt)
    if t_max < dt:
        raise GridError("t_max must be at least one step")
    M = int(np.ceil(t_max / dt - 1e-9))
    A, B = system.A, system.B
    x = np.empty((M + 1,) + np.shape(x0))
    dr = np.empty_like(x)
    dl = np.empty_like(x)
    x[0] = x0
    h = dt
    d_now = hist
    d_mid = hist_mid
    for j in range(0, (M + m - 1) // m):
        base = j * m
        if j > 0:
            # delayed input on [j, j+1] is the solution on [j-1, j]
            prev = slice(base - m, base + 1)
            d_now = x[prev]
            left, right = dr[base - m:base], dl[base - m + 1:base + 1]
            d_mid = 0.5 * (x[base - m:base] + x[base - m + 1:base + 1]) + (h / 8) * (left - right)
        stop = min(m, M - base)
        for i in range(stop):
            y = x[base + i]
            bd0 = B @ d_now[i]
            bdm = B @ d_mid[i]
            bd1 = B @ d_now[i + 1]
            k1 = A @ y + bd0
            k2 = A @ (y + 0.5 * h * k1) + bdm
            k3 = A @ (y + 0.5 * h * k2) + bdm
            k4 = A @ (y + h * k3) + bd1
            x[base + i + 1] = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            dr[base + i] = k1
            dl[base + i + 1] = A @ x[base + i + 1] + bd1
    dl[0] = dr[0]
    dr[M] = dl[M]
    return _StepSolution(dt, x, dr, dl)


@dataclass(frozen=True, eq=False)
class FundamentalGrid:
    """Fundamental matrix ``X(t_m)`` on ``t_m = m dt``; ``X = 0`` on ``[-1, 0)``."""

    dt: float
    t_max: float
    values: np.ndarray
    d_right: np.ndarray
    d_left: np.ndarray
    envelope: tuple | None = None

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def times(self):
        return np.arange(self.values.shape[0]) * self.dt

    @property
    def steps_per_delay(self):
        return int(round(1 / self.dt))

    def norms(self):
        return np.sum(np.abs(self.values), axis=(1, 2))

    def at(self, t):
        """``X(t)`` by cubic Hermite interpolation, zero for ``t < 0``."""
        t = np.asarray(t, dtype=float)
        sol = _StepSolution(self.dt, self.values, self.d_right, self.d_left)
        out = sol.hermite(np.clip(t, 0.0, self.times[-1]))
        return np.where((t < 0)[..., None, None], 0.0, out)

    def shifted(self):
        """``X(t_m - 1)`` on the same nodes (zero before ``t = 1``)."""
        m = self.steps_per_delay
        out = np.zeros_like(self.values)
        out[m:] = self.values[:-m]
        return out

    def with_envelope(self, K, alpha):
        return FundamentalGrid(self.dt, self.t_max, self.values, self.d_right, self.d_left, (K, alpha))


@dataclass(frozen=True, eq=False)
class Trajectory:
    dt: float
    t_max: float
    values: np.ndarray
    d_right: np.ndarray | None = None
    d_left: np.ndarray | None = None

    @property
    def times(self):
        return np.arange(self.values.shape[0]) * self.dt

    def delayed(self, phi: InitialFunction):
        """``x(t_m - 1)`` on the nodes, taken from ``phi`` before ``t = 1``."""
        m = int(round(1 / self.dt))
        out = np.empty_like(self.values)
        k = min(m, len(out))
        out[:k] = phi(self.times[:k] - 1.0)
        out[m:] = self.values[:-m]
        return out


def fundamental_matrix(system: SddeSystem, dt: float, t_max: float) -> FundamentalGrid:
    """Fundamental matrix by the method of steps.

    Examples
    --------
    >>> s = SddeSystem.build(np.diag([-1.0, -2.0]))
    >>> X = fundamental_matrix(s, 1 / 64, 1.0)
    >>> bool(np.allclose(X.values[-1], np.diag(np.exp([-1.0, -2.0])), atol=1e-8))
    True
    """
    m = steps_per_delay(dt)
    n = system.n
    zero = np.zeros((m + 1, n, n))
    sol = _integrate(system, np.eye(n), zero, zero[:m], dt, t_max)
    return FundamentalGrid(dt, sol.times[-1], sol.values, sol.d_right, sol.d_left)


def solve_dde(system: SddeSystem, phi: InitialFunction, dt: float, t_max: float) -> Trajectory:
    """Solution ``x_phi`` of the unperturbed DDE with history ``phi``.

    This is also the mean ``E x(t; phi)`` of the stochastic equation.
    """
    m = steps_per_delay(dt)
    if phi.n != system.n:
        raise ValueError("initial function dimension does not match the system")
    nodes = np.arange(m + 1) * dt - 1.0
    mids = (np.arange(m) + 0.5) * dt - 1.0
    sol = _integrate(system, phi(0.0), phi(nodes), phi(mids), dt, t_max)
    return Trajectory(dt, sol.times[-1], sol.values, sol.d_right, sol.d_left)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


def representation_formula(system: SddeSystem, phi: InitialFunction, grid: FundamentalGrid):
    """Evaluate ``X(t) phi(0) + int_{-1}^0 X(t-1-s) B phi(s) ds`` on the grid nodes.

    The integral runs over cells of the grid in ``u = t - 1 - s``; each cell
    uses 4-point Gauss-Legendre with Hermite-interpolated ``X``.
    """
    h = grid.dt
    m = grid.steps_per_delay
    X = grid.values
    M = X.shape[0] - 1
    xi = 0.5 * (_GL_X + 1.0)
    w = 0.5 * _GL_W * h
    # X at quadrature points of every cell
    tq = (np.arange(M)[:, None] + xi[None, :]) * h
    sol = _StepSolution(h, X, grid.d_right, grid.d_left)
    Xq = sol.hermite(tq)  # (M, 4, n, n)
    out = X @ phi(0.0)
    for d in range(1, m + 1):
        # cell c = node - d covers u in [c h, (c+1) h]; s = (d - xi) h - 1
        s = (d - xi) * h - 1.0
        bp = phi(s) @ system.B.T  # (4, n)
        contrib = np.einsum("cqij,qj,q->ci", Xq[: M - d + 1], bp, w)
        out[d:] += contrib
    return out


def fit_envelope(grid: FundamentalGrid, alpha: float, alpha0: float | None = None) -> float:
    """Smallest ``K`` with ``||X(t_m)|| <= K exp(alpha t_m)`` on the grid (L1 norm).

    Raises
    ------
    ValueError
        If ``alpha0`` is given and ``alpha <= alpha0``: the envelope would not
        persist beyond the grid horizon.
    """
    if alpha0 is not None and alpha <= alpha0:
        raise ValueError(f"envelope rate {alpha} must exceed the Lyapunov exponent {alpha0}")
    return float(np.max(grid.norms() * np.exp(-alpha * grid.times)))


def grid_to_csv(values, dt, header_prefix="X") -> str:
    """CSV text with a ``t`` column and row-major matrix entries."""
    values = np.asarray(values)
    n1, n2 = values.shape[1:]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t"] + [f"{header_prefix}_{i + 1}{j + 1}" for i in range(n1) for j in range(n2)])
    for i, row in enumerate(values.reshape(len(values), -1)):
        w.writerow([repr(i * dt)] + [repr(float(v)) for v in row])
    return buf.getvalue()
