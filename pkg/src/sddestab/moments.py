"""Second-moment trajectories from the Volterra equations.

For the centred solution ``x~ = x - E x`` the moments ``M(t) = E x~(t) x~(t)^T``
and ``N(t) = E x~(t) x~(t-1)^T`` satisfy

    M(t) = int_0^t X(t-s) (P(s) + Q(s)) X(t-s)^T ds
    N(t) = int_0^{t-1} X(t-s) (P(s) + Q(s)) X(t-1-s)^T ds

where ``P`` is built from the mean and ``Q`` is linear in ``M(s)``,
``M(s-1)`` and ``N(s)``.  ``F(t)`` denotes the ``P`` part of ``M``.  The
convolutions are discretized with the trapezoidal rule on the fundamental
matrix grid; the step divides the delay, so the kinks of ``X`` at integer
lags sit on nodes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import dde
from .model import InitialFunction, NoiseClass, SddeSystem, classify_noise

__all__ = [
    "MomentTrajectory",
    "moment_volterra",
    "moment_additive",
    "growth_exponent",
    "psd_violation",
]


@dataclass(frozen=True, eq=False)
class MomentTrajectory:
    dt: float
    t_max: float
    M: np.ndarray
    N_lag: np.ndarray
    F: np.ndarray
    P: np.ndarray
    psd_min: float = 0.0

    @property
    def times(self):
        return np.arange(self.M.shape[0]) * self.dt

    @property
    def P_diag(self):
        """The mean-noise products ``P_lp(s)`` used at every node."""
        return self.P

    def at(self, t):
        """Nearest-node lookup of ``M`` at times ``t``."""
        idx = np.rint(np.asarray(t, dtype=float) / self.dt).astype(int)
        return self.M[idx]

    def trace(self):
        return np.trace(self.M, axis1=1, axis2=2)

    def to_csv(self) -> str:
        n = self.M.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        mcols = [(i, j) for i in range(n) for j in range(i, n)]
        ncols = [(i, j) for i in range(n) for j in range(n)]
        w.writerow(["t"] + [f"M{i + 1}{j + 1}" for i, j in mcols] + [f"N{i + 1}{j + 1}" for i, j in ncols]
                   + [f"F{i + 1}{i + 1}" for i in range(n)])
        for k, t in enumerate(self.times):
            row = [t] + [self.M[k, i, j] for i, j in mcols] + [self.N_lag[k, i, j] for i, j in ncols]
            row += [self.F[k, i, i] for i in range(n)]
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def psd_violation(M):
    """Smallest eigenvalue relative to the trace, per node (``<= 0`` means fine)."""
    ev = np.linalg.eigvalsh(M)[..., 0]
    tr = np.trace(M, axis1=-2, axis2=-1)
    return -ev / np.maximum(tr, 1e-300)


def _kernels(grid: dde.FundamentalGrid, M_steps):
    X = grid.values[: M_steps + 1]
    n = X.shape[1]
    KK = np.einsum("uil,ujp->uijlp", X, X).reshape(-1, n * n, n * n)
    Xs = grid.shifted()[: M_steps + 1]
    KS = np.einsum("uil,ujp->uijlp", X, Xs).reshape(-1, n * n, n * n)
    return KK, KS


def _check_grid(grid, dt, t_max):
    if dt is not None and abs(dt - grid.dt) > 1e-15:
        raise ValueError(f"step {dt} differs from the fundamental grid step {grid.dt}")
    steps = int(round(t_max / grid.dt))
    if steps > grid.values.shape[0] - 1 + 1e-9:
        raise ValueError(f"t_max={t_max} exceeds the fundamental grid horizon {grid.t_max}")
    return steps


def _mean_noise(system: SddeSystem, phi: InitialFunction, dt, steps):
    """``P(s)`` at the nodes: ``sum_k E(Sigma_l^k) E(Sigma_p^k)``."""
    traj = dde.solve_dde(system, phi, dt, max(steps * dt, dt))
    m = traj.values[: steps + 1]
    md = traj.delayed(phi)[: steps + 1]
    mean_sig = system.mu[None] + np.einsum("ljk,sj->slk", system.sigma, m) + np.einsum("ljk,sj->slk", system.eta, md)
    return np.einsum("slk,spk->slp", mean_sig, mean_sig)


def moment_volterra(system: SddeSystem, phi: InitialFunction, grid: dde.FundamentalGrid, t_max: float,
                    dt: float | None = None) -> MomentTrajectory:
    """March the moment equations with the trapezoidal rule.

    The endpoint of the ``M`` convolution involves ``Q(t)`` and hence
    ``M(t)`` itself; this is solved exactly as the linear system
    ``(I - h/2 C_ss) vec M(t) = rhs``.  ``N(t)`` only needs data up to
    ``t - 1`` and is explicit.

    Examples
    --------
    >>> s = SddeSystem.decoupled(np.diag([-1.0, -2.0]), mu=(1.0, 0.0))
    >>> g = dde.fundamental_matrix(s, 1 / 64, 2.0)
    >>> tr = moment_volterra(s, InitialFunction.constant([1.0, 1.0]), g, 1.0)
    >>> bool(abs(tr.M[-1, 0, 0] - (1 - np.exp(-2.0)) / 2) < 1e-4)
    True
    """
    steps = _check_grid(grid, dt, t_max)
    h = grid.dt
    m1 = grid.steps_per_delay
    n = system.n
    n2 = n * n
    KK, KS = _kernels(grid, steps)
    P = _mean_noise(system, phi, h, steps)
    Pv = P.reshape(-1, n2)
    s, e = system.sigma, system.eta
    Css = np.einsum("ljk,pqk->lpjq", s, s).reshape(n2, n2)
    Cee = np.einsum("ljk,pqk->lpjq", e, e).reshape(n2, n2)
    Cse = (np.einsum("ljk,pqk->lpjq", s, e) + np.einsum("lqk,pjk->lpjq", e, s)).reshape(n2, n2)
    noisy = bool(np.any(Css) or np.any(Cee) or np.any(Cse))

    Mv = np.zeros((steps + 1, n2))
    Nv = np.zeros((steps + 1, n2))
    Fv = np.zeros((steps + 1, n2))
    Qv = np.zeros((steps + 1, n2))
    lhs = np.eye(n2) - 0.5 * h * Css
    for k in range(1, steps + 1):
        w = np.ones(k)
        w[0] = 0.5
        ker = KK[k:0:-1]  # X(t_k - s_i) kron X(t_k - s_i), i = 0..k-1
        F = h * (np.einsum("iab,ib,i->a", ker, Pv[:k], w) + 0.5 * Pv[k])
        rest = h * np.einsum("iab,ib,i->a", ker, Qv[:k], w)
        if k >= m1:
            jmax = k - m1  # s runs over [0, t - 1]
            wn = np.ones(jmax + 1)
            wn[0] = 0.5
            wn[-1] = 0.5 if jmax > 0 else 0.0
            ks = KS[k:k - jmax - 1:-1] if k - jmax - 1 >= 0 else KS[k::-1][: jmax + 1]
            Y = Pv[: jmax + 1] + Qv[: jmax + 1]
            Nv[k] = h * np.einsum("iab,ib,i->a", ks, Y, wn)
        Fv[k] = F
        if noisy:
            Mlag = Mv[k - m1] if k >= m1 else 0.0
            explicit = Cee @ Mlag + Cse @ Nv[k] if k >= m1 else Cse @ Nv[k]
            vecM = np.linalg.solve(lhs, F + rest + 0.5 * h * explicit)
            Mk = vecM.reshape(n, n)
            Mk = 0.5 * (Mk + Mk.T)
            Mv[k] = Mk.reshape(-1)
            Qv[k] = Css @ Mv[k] + explicit
        else:
            Mk = F.reshape(n, n)
            Mv[k] = (0.5 * (Mk + Mk.T)).reshape(-1)
    M = Mv.reshape(-1, n, n)
    viol = psd_violation(M[1:]) if steps > 0 else np.zeros(1)
    return MomentTrajectory(h, steps * h, M, Nv.reshape(-1, n, n), Fv.reshape(-1, n, n), P,
                            float(np.max(viol)) if viol.size else 0.0)


def moment_additive(system: SddeSystem, grid: dde.FundamentalGrid, t_max: float) -> MomentTrajectory:
    """Closed-form moments for additive noise: a running integral of ``X mu mu^T X^T``."""
    if classify_noise(system) not in (NoiseClass.ADDITIVE, NoiseClass.DETERMINISTIC):
        raise ValueError("moment_additive needs additive noise (sigma = eta = 0)")
    steps = _check_grid(grid, None, t_max)
    h = grid.dt
    n = system.n
    KK, KS = _kernels(grid, steps)
    Pv = (system.mu @ system.mu.T).reshape(-1)
    f = KK @ Pv  # integrand X(u) P X(u)^T at u = t_i
    g = KS @ Pv
    cum = np.concatenate([[np.zeros(n * n)], np.cumsum(0.5 * h * (f[1:] + f[:-1]), axis=0)])
    m1 = grid.steps_per_delay
    gn = np.zeros_like(g)
    gn[m1:] = g[m1:]
    cumN = np.zeros_like(cum)
    if steps >= m1:
        seg = 0.5 * h * (gn[m1 + 1:] + gn[m1:-1])
        cumN[m1 + 1:] = np.cumsum(seg, axis=0)
    M = cum.reshape(-1, n, n)
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    P = np.broadcast_to(Pv.reshape(n, n), M.shape).copy()
    viol = psd_violation(M[1:]) if steps > 0 else np.zeros(1)
    return MomentTrajectory(h, steps * h, M, cumN.reshape(-1, n, n), M.copy(), P, float(np.max(viol)))


def growth_exponent(values, times=None, window=None, dt=None):
    """Least-squares slope of ``log(values)`` against time.

    Parameters
    ----------
    values : array_like
        Positive samples.
    times : array_like, optional
        Sample times; ``dt`` spacing from 0 is assumed when omitted.
    window : tuple, optional
        ``(t0, t1)``; only samples inside are used.

    Examples
    --------
    >>> t = np.linspace(0, 10, 50)
    >>> round(growth_exponent(np.exp(0.25 * t), t), 6)
    0.25
    """
    v = np.asarray(values, dtype=float)
    if times is None:
        times = np.arange(len(v)) * (1.0 if dt is None else dt)
    t = np.asarray(times, dtype=float)
    if window is not None:
        sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
        t, v = t[sel], v[sel]
    if len(v) < 2:
        raise ValueError("need at least two samples in the window")
    if np.any(~(v > 0)):
        raise ValueError("growth exponent needs positive values in the window")
    slope = np.polyfit(t, np.log(v), 1)[0]
    return float(slope)
