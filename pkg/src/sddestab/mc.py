"""Euler-Maruyama ensembles for the SDDE.

Every path draws its normals from its own Philox stream keyed by
``(seed, path_index)``, so an ensemble is a pure function of the system, the
history and the spec.  Paths are marched in fixed-size chunks; chunks may run
on worker threads but their per-path checkpoint states are concatenated in
path order before any reduction, which keeps the estimates bit-identical
for any thread count.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dde
from .model import InitialFunction, SddeSystem
from .moments import growth_exponent

__all__ = [
    "EnsembleSpec",
    "EnsembleMoments",
    "simulate_ensemble",
    "euler_maruyama",
    "sample_moments",
    "empirical_boundedness",
    "BOUNDED",
    "UNBOUNDED",
    "AMBIGUOUS",
]

CHUNK = 512
MAX_BLOCK_FLOATS = 1 << 22
DEAD_BAND = 0.05
BOUNDED, UNBOUNDED, AMBIGUOUS = "bounded-consistent", "unbounded-consistent", "ambiguous"


@dataclass(frozen=True)
class EnsembleSpec:
    paths: int
    dt: float
    t_max: float
    seed: int
    checkpoint_times: tuple = ()

    def __post_init__(self):
        if self.paths < 100:
            raise ValueError("an ensemble needs at least 100 paths")
        if self.dt > 1 / 32 + 1e-15:
            raise ValueError("dt must not exceed 1/32")
        dde.steps_per_delay(self.dt)
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must be an unsigned 64-bit integer")
        cps = tuple(float(t) for t in self.checkpoint_times) or (float(self.t_max),)
        for t in cps:
            k = t / self.dt
            if t < 0 or t > self.t_max + 1e-12 or abs(k - round(k)) > 1e-9:
                raise ValueError(f"checkpoint {t} is not a grid node in [0, t_max]")
        object.__setattr__(self, "checkpoint_times", tuple(sorted(cps)))

    @property
    def steps(self):
        return int(round(self.t_max / self.dt))

    def to_dict(self):
        return {"paths": self.paths, "dt": self.dt, "t_max": self.t_max, "seed": self.seed,
                "checkpoint_times": list(self.checkpoint_times)}


@dataclass(frozen=True, eq=False)
class EnsembleMoments:
    checkpoints: np.ndarray
    mean: np.ndarray
    M_hat: np.ndarray
    N_hat: np.ndarray
    stderr_mean: np.ndarray
    stderr_M: np.ndarray
    stderr_N: np.ndarray
    paths: int
    spec: dict = field(default_factory=dict)

    @property
    def stderr(self):
        return self.stderr_M

    def trace(self):
        return np.trace(self.M_hat, axis1=1, axis2=2)

    def trace_stderr(self):
        # conservative: entries added in quadrature would need covariances
        return np.sum(np.diagonal(self.stderr_M, axis1=1, axis2=2), axis=1)

    def to_csv(self) -> str:
        n = self.mean.shape[1]
        pairs = [(i, j) for i in range(n) for j in range(i, n)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"mean_{i + 1}" for i in range(n)] + [f"M_{i + 1}{j + 1}" for i, j in pairs]
                   + [f"se_mean_{i + 1}" for i in range(n)] + [f"se_M_{i + 1}{j + 1}" for i, j in pairs])
        for c, t in enumerate(self.checkpoints):
            row = [t] + list(self.mean[c]) + [self.M_hat[c, i, j] for i, j in pairs]
            row += list(self.stderr_mean[c]) + [self.stderr_M[c, i, j] for i, j in pairs]
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def to_dict(self):
        return {"checkpoints": self.checkpoints.tolist(), "mean": self.mean.tolist(),
                "M_hat": self.M_hat.tolist(), "N_hat": self.N_hat.tolist(),
                "stderr_mean": self.stderr_mean.tolist(), "stderr_M": self.stderr_M.tolist(),
                "stderr_N": self.stderr_N.tolist(), "paths": self.paths, "spec": self.spec}


def _march(system: SddeSystem, phi: InitialFunction, dt, steps, paths, draw, record):
    """Euler-Maruyama with a ring buffer of one delay of states.

    ``draw(i0, i1)`` returns the Wiener increments of steps ``i0..i1-1`` as
    an array ``(paths, i1 - i0, k)``.  ``record`` is the sorted list of node
    indices whose state and delayed state are returned.
    """
    m = dde.steps_per_delay(dt)
    n, k = system.n, system.k
    A_T, B_T = system.A.T, system.B.T
    S2 = system.sigma.transpose(1, 0, 2).reshape(n, n * k)
    E2 = system.eta.transpose(1, 0, 2).reshape(n, n * k)
    mu = system.mu.reshape(1, n, k)
    hist = phi(np.arange(m + 1) * dt - 1.0)  # phi on [-1, 0]
    ring = np.empty((m, paths, n))
    ring[:] = hist[:m, None, :]
    x = np.broadcast_to(hist[m], (paths, n)).copy()
    want = {int(r): c for c, r in enumerate(record)}
    out_x = np.empty((len(record), paths, n))
    out_d = np.empty((len(record), paths, n))

    def save(i, xd_now):
        c = want.get(i)
        if c is not None:
            out_x[c] = x
            out_d[c] = xd_now

    block = max(1, min(steps, MAX_BLOCK_FLOATS // max(1, paths * k)))
    i = 0
    while i < steps:
        i1 = min(steps, i + block)
        dW = draw(i, i1)
        for s in range(i1 - i):
            xd = ring[i % m]  # x(t_i - 1)
            save(i, xd)
            g = mu + (x @ S2 + xd @ E2).reshape(paths, n, k)
            xn = x + (x @ A_T + xd @ B_T) * dt + np.einsum("pik,pk->pi", g, dW[:, s])
            ring[i % m] = x  # x(t_i) becomes the delayed value at t_{i+m}
            x = xn
            i += 1
    save(steps, ring[steps % m])
    return out_x, out_d


def euler_maruyama(system: SddeSystem, phi: InitialFunction, dt: float, dW: np.ndarray) -> np.ndarray:
    """Paths driven by explicit Wiener increments ``dW`` of shape ``(paths, steps, k)``.

    Returns the states at every node, shape ``(paths, steps + 1, n)``.
    """
    dW = np.asarray(dW, dtype=float)
    paths, steps, k = dW.shape
    if k != system.k:
        raise ValueError("increment array has the wrong number of Wiener processes")
    xs, _ = _march(system, phi, dt, steps, paths, lambda a, b: dW[:, a:b], list(range(steps + 1)))
    return np.transpose(xs, (1, 0, 2))


def _path_generator(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), index]))


def _run_chunk(system, phi, spec: EnsembleSpec, start, stop, record):
    gens = [_path_generator(spec.seed, p) for p in range(start, stop)]
    sq = np.sqrt(spec.dt)
    k = system.k

    def draw(a, b):
        return np.stack([g.standard_normal((b - a, k)) for g in gens]) * sq

    return _march(system, phi, spec.dt, spec.steps, stop - start, draw, record)


def sample_moments(xs, xd, checkpoints, spec_dict=None) -> EnsembleMoments:
    """Across-path estimates from checkpoint states ``(C, paths, n)``."""
    P = xs.shape[1]
    # shifting by the first path keeps identical paths at exactly zero spread
    d = xs - xs[:, :1]
    dd = xd - xd[:, :1]
    dbar, ddbar = d.mean(axis=1), dd.mean(axis=1)
    mean = xs[:, 0] + dbar
    d = d - dbar[:, None]
    dd = dd - ddbar[:, None]
    prod = d[:, :, :, None] * d[:, :, None, :]
    lag = d[:, :, :, None] * dd[:, :, None, :]
    M = prod.sum(axis=1) / (P - 1)
    N = lag.sum(axis=1) / (P - 1)
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    se = lambda v: v.std(axis=1, ddof=1) / np.sqrt(P)  # noqa: E731
    return EnsembleMoments(np.asarray(checkpoints, dtype=float), mean, M, N, se(xs), se(prod), se(lag), P,
                           spec_dict or {})


def simulate_ensemble(system: SddeSystem, phi: InitialFunction, spec: EnsembleSpec, threads: int = 1,
                      return_states: bool = False):
    """Monte Carlo moments at ``spec.checkpoint_times``.

    Examples
    --------
    >>> s = SddeSystem.build(np.array([[-1.0]]), mu=np.array([[1.0]]))
    >>> spec = EnsembleSpec(400, 1 / 32, 2.0, 7, (1.0, 2.0))
    >>> a = simulate_ensemble(s, InitialFunction.zero(1), spec, threads=1)
    >>> b = simulate_ensemble(s, InitialFunction.zero(1), spec, threads=2)
    >>> bool(np.array_equal(a.M_hat, b.M_hat))
    True
    """
    if phi.n != system.n:
        raise ValueError("initial function dimension does not match the system")
    record = [int(round(t / spec.dt)) for t in spec.checkpoint_times]
    bounds = [(s, min(spec.paths, s + CHUNK)) for s in range(0, spec.paths, CHUNK)]
    job = lambda b: _run_chunk(system, phi, spec, b[0], b[1], record)  # noqa: E731
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    xs = np.concatenate([p[0] for p in parts], axis=1)
    xd = np.concatenate([p[1] for p in parts], axis=1)
    res = sample_moments(xs, xd, spec.checkpoint_times, spec.to_dict())
    return (res, xs) if return_states else res


def empirical_boundedness(times, trace=None, stderr=None, dead_band: float = DEAD_BAND):
    """Classify a second-moment trace as bounded, unbounded or ambiguous.

    Accepts either an :class:`EnsembleMoments` or explicit ``times``,
    ``trace`` and optional ``stderr``.  Only checkpoints whose trace
    exceeds three standard errors enter the fit; sample moments of heavily
    skewed paths are then not mistaken for decay.  The fitted log-slope is
    compared with ``+-dead_band``.

    Returns
    -------
    (label, slope) : tuple
        ``slope`` is ``nan`` when no fit was possible.
    """
    if isinstance(times, EnsembleMoments):
        ens = times
        times, trace, stderr = ens.checkpoints, ens.trace(), ens.trace_stderr()
    t = np.asarray(times, dtype=float)
    tr = np.asarray(trace, dtype=float)
    if len(t) < 5 or t[-1] - t[0] < 20 - 1e-9:
        raise ValueError("need at least 5 checkpoints spanning 20 time units")
    if np.all(tr == 0):
        return BOUNDED, float("-inf")
    ok = tr > 0
    if stderr is not None:
        ok &= tr > 3 * np.asarray(stderr, dtype=float)
    if ok.sum() < 5 or t[ok][-1] - t[ok][0] < 20 - 1e-9:
        return AMBIGUOUS, float("nan")
    slope = growth_exponent(tr[ok], t[ok])
    if slope > dead_band:
        return UNBOUNDED, slope
    if slope < -dead_band:
        return BOUNDED, slope
    return AMBIGUOUS, slope
