"""Laplace transforms of products of fundamental-matrix entries.

Two independent routes are provided for

    K[i, h, j, p](l) = L(X_i^h(t) X_j^p(t))(l)
    L[i, h, j, p](l) = L(X_i^h(t) X_j^p(t - 1))(l)

The frequency route uses the convolution theorem for the transform of a
product along the vertical line ``Re s = Re(l)/2`` (valid whenever
``Re l > 2 alpha0``)::

    L(f g)(l) = 1/(2 pi) int F(c + iu) G(l - c - iu) du,

with ``F, G`` entries of ``Delta^{-1}``.  The leading ``1/s`` behaviour of the
diagonal entries is removed by subtracting the same product for
``e^{-kappa t}``, whose transform is known in closed form; the remainder
decays like ``|u|^{-3}``.  The time route integrates the RK4 grid of ``X``
directly with composite Simpson and an exponential envelope tail bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dde
from .model import SddeSystem, l1_norm
from .spectral import spectral_summary

__all__ = [
    "TransferMatrix",
    "ProductKind",
    "ProductTransform",
    "QuadratureError",
    "TailError",
    "transfer",
    "transfer_entries",
    "product_tensors_freq",
    "product_transform_freq",
    "product_transform_time",
    "FreqProvider",
    "TimeProvider",
]

# Gauss-Kronrod 7/15 abscissae and weights on [-1, 1] (QUADPACK qk15)
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
GK_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
GK_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
G_WEIGHTS = np.zeros(15)
G_WEIGHTS[1:7:2] = _WG[:3]
G_WEIGHTS[7] = _WG[3]
G_WEIGHTS[9:15:2] = _WG[2::-1]


class QuadratureError(RuntimeError):
    pass


class TailError(RuntimeError):
    def __init__(self, msg, required_t_max):
        super().__init__(msg)
        self.required_t_max = required_t_max


@dataclass(frozen=True)
class TransferMatrix:
    lam: complex
    entries: np.ndarray
    residual: float


def transfer_entries(system: SddeSystem, s):
    """``Delta(s)^{-1}`` for an array of points, shape ``s.shape + (n, n)``."""
    s = np.asarray(s, dtype=complex)
    if system.n == 2:
        e = np.exp(-s)
        (a11, a12), (a21, a22) = system.A
        (b11, b12), (b21, b22) = system.B
        h = (s - a11 - b11 * e) * (s - a22 - b22 * e) - (a12 + b12 * e) * (a21 + b21 * e)
        out = np.empty(s.shape + (2, 2), dtype=complex)
        out[..., 0, 0] = s - a22 - b22 * e
        out[..., 0, 1] = a12 + b12 * e
        out[..., 1, 0] = a21 + b21 * e
        out[..., 1, 1] = s - a11 - b11 * e
        return out / h[..., None, None]
    return np.linalg.inv(system.delta(s))


def transfer(system: SddeSystem, lam, tol: float = 1e-12) -> TransferMatrix:
    """Transform of the fundamental matrix, ``Delta(l)^{-1}``.

    Examples
    --------
    >>> s = SddeSystem.build(np.diag([-1.0, -2.0]))
    >>> transfer(s, 0.0).entries.real.round(12).tolist()
    [[1.0, 0.0], [0.0, 0.5]]
    """
    lam = complex(lam)
    D = system.delta(lam)
    h = np.linalg.det(D)
    scale = (abs(lam) + l1_norm(system.A) + l1_norm(system.B) * np.exp(-lam.real)) ** system.n
    if abs(h) <= tol * max(1.0, scale):
        raise ValueError(f"l={lam} is within tolerance of a characteristic root")
    F = transfer_entries(system, lam)
    res = float(np.abs(D @ F - np.eye(system.n)).max())
    return TransferMatrix(lam, F, res)


@dataclass(frozen=True)
class ProductKind:
    """``X_i^h(t) X_j^p(t)`` or, if ``shifted``, ``X_i^h(t) X_j^p(t-1)``; 0-based."""

    shifted: bool
    i: int
    h: int
    j: int
    p: int

    @classmethod
    def plain(cls, i, j, k):
        return cls(False, i, k, j, k)

    @classmethod
    def delayed(cls, i, j, k):
        return cls(True, i, k, j, k)

    @property
    def index(self):
        return (self.i, self.h, self.j, self.p)

    def label(self):
        base = f"X{self.i + 1}{self.h + 1}*X{self.j + 1}{self.p + 1}"
        return base + ("(t-1)" if self.shifted else "")


@dataclass(frozen=True)
class ProductTransform:
    lam: complex
    kind: ProductKind
    value: complex
    quad_error: float


def _gk_panels(g, a, b):
    """Apply GK15 on panels ``[a_k, b_k]``; returns (K15, |K15 - G7|) sums per panel."""
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    u = mid[:, None] + half[:, None] * GK_NODES[None, :]
    vals = g(u.ravel()).reshape(u.shape + (-1,))
    k = np.einsum("pqe,q->pe", vals, GK_WEIGHTS) * half[:, None]
    gs = np.einsum("pqe,q->pe", vals, G_WEIGHTS) * half[:, None]
    return k, np.abs(k - gs).max(axis=1)


def _adaptive(g, a, b, tol, max_rounds=40):
    """Adaptive GK15 over panels, vectorized; returns (integral, error)."""
    total = 0.0
    err_done = 0.0
    length = float(np.sum(b - a))
    for _ in range(max_rounds):
        k, e = _gk_panels(g, a, b)
        w = b - a
        ok = e <= tol * w / length
        # panels narrower than rounding resolution are accepted as they are
        ok |= w < 1e-10 * (1 + np.abs(a))
        total = total + k[ok].sum(axis=0)
        err_done += float(e[ok].sum())
        if ok.all():
            return total, err_done
        a_bad, b_bad = a[~ok], b[~ok]
        m = 0.5 * (a_bad + b_bad)
        a = np.concatenate([a_bad, m])
        b = np.concatenate([m, b_bad])
    raise QuadratureError("adaptive panel refinement did not converge")


def _alpha0(system, alpha0):
    if alpha0 is None:
        alpha0 = spectral_summary(system).alpha0
    return float(alpha0)


def product_tensors_freq(system: SddeSystem, lam, alpha0=None, quad_tol=1e-8, omega_limit=2.0**17):
    """All plain and shifted product transforms at one point, frequency route.

    Returns
    -------
    K, L : ndarray
        Complex tensors of shape ``(n, n, n, n)``.
    errK, errL : ndarray
        Error estimates (panel error plus tail estimate), same shapes.
    """
    lam = complex(lam)
    n = system.n
    a0 = _alpha0(system, alpha0)
    margin = 1e-9 * (1 + abs(a0))
    if not lam.real > 2 * a0 + margin:
        raise ValueError(f"Re l = {lam.real} must exceed 2*alpha0 = {2 * a0}")
    c = 0.5 * lam.real
    kappa = max(1.0, 1.0 - c)
    eye4 = np.einsum("ih,jp->ihjp", np.eye(n), np.eye(n)).reshape(-1)
    n4 = n**4

    def g(u):
        s = c + 1j * u
        Fs = transfer_entries(system, s)
        Fl = transfer_entries(system, lam - s)
        es = np.exp(-s)
        base = 1.0 / ((s + kappa) * (lam - s + kappa))
        plain = np.einsum("uih,ujp->uihjp", Fs, Fl).reshape(-1, n4) - base[:, None] * eye4
        shift = (np.einsum("uih,ujp->uihjp", Fl, Fs).reshape(-1, n4) - base[:, None] * eye4) * es[:, None]
        v = np.concatenate([plain, shift], axis=1) / (2 * np.pi)
        return np.concatenate([v.real, v.imag], axis=1)

    # core range holds all structure from poles near both factors
    reach = l1_norm(system.A) + l1_norm(system.B) * np.exp(-min(c, lam.real - c))
    omega = float(2.0 ** np.ceil(np.log2(64.0 + 2.0 * (abs(lam.imag) + reach))))
    w0 = 0.5
    edges = np.arange(-omega, omega + w0 / 2, w0)
    core, core_err = _adaptive(g, edges[:-1], edges[1:], quad_tol / 4)
    total = core
    err = core_err
    tail = np.inf
    while omega < omega_limit:
        # shell [omega, 2 omega] on both sides with panels of width <= 2
        npan = int(np.ceil(omega / 2.0))
        e = np.linspace(omega, 2 * omega, npan + 1)
        a = np.concatenate([e[:-1], -e[1:]])
        b = np.concatenate([e[1:], -e[:-1]])
        shell, shell_err = _adaptive(g, a, b, quad_tol / 8)
        total = total + shell
        err += shell_err
        omega *= 2
        incr = shell[: 2 * n4] + 1j * shell[2 * n4:]
        # remainder decays like |u|^-3, so the untouched tail is ~ incr / 7
        tail = np.abs(incr) * (8.0 / 7.0)
        if tail.max() < quad_tol / 2:
            break
    else:
        raise QuadratureError(f"tail estimate {tail.max():.2e} above quad_tol at Omega={omega:g}")
    vals = total[: 2 * n4] + 1j * total[2 * n4:]
    K = vals[:n4] + eye4 / (lam + 2 * kappa)
    L = vals[n4:] + eye4 * np.exp(-(lam + kappa)) / (lam + 2 * kappa)
    errK = tail[:n4] + err
    errL = tail[n4:] + err
    shape = (n, n, n, n)
    # the swapped ordering is the same integral along the reflected line; averaging makes K exactly symmetric
    K = K.reshape(shape)
    K = 0.5 * (K + K.transpose(2, 3, 0, 1))
    return K, L.reshape(shape), errK.reshape(shape), errL.reshape(shape)


def product_transform_freq(system: SddeSystem, kind: ProductKind, lam, alpha0=None, quad_tol=1e-8):
    """Single product transform by the frequency route.

    Examples
    --------
    >>> s = SddeSystem.build(np.diag([-1.0, -2.0]))
    >>> r = product_transform_freq(s, ProductKind.delayed(0, 0, 0), 0.0, alpha0=-1.0)
    >>> round(r.value.real, 6)
    0.18394
    """
    K, L, eK, eL = product_tensors_freq(system, lam, alpha0=alpha0, quad_tol=quad_tol)
    src, err = (L, eL) if kind.shifted else (K, eK)
    return ProductTransform(complex(lam), kind, complex(src[kind.index]), float(err[kind.index]))


class FreqProvider:
    """Caching provider of ``(K, L)`` tensors by the frequency route."""

    def __init__(self, system: SddeSystem, alpha0=None, quad_tol=1e-8):
        self.system = system
        self.alpha0 = _alpha0(system, alpha0)
        self.quad_tol = quad_tol
        self._cache = {}
        self.max_error = 0.0

    def _one(self, lam):
        key = complex(lam)
        hit = self._cache.get(key)
        if hit is None:
            K, L, eK, eL = product_tensors_freq(self.system, key, self.alpha0, self.quad_tol)
            hit = (K, L, max(eK.max(), eL.max()))
            self._cache[key] = hit
            self.max_error = max(self.max_error, hit[2])
        return hit

    def tensors(self, lams):
        lams = np.atleast_1d(np.asarray(lams, dtype=complex))
        out = [self._one(v) for v in lams.ravel()]
        K = np.stack([o[0] for o in out]).reshape(lams.shape + out[0][0].shape)
        L = np.stack([o[1] for o in out]).reshape(lams.shape + out[0][1].shape)
        return K, L

    @property
    def valid_re(self):
        return 2 * self.alpha0


def _simpson_weights(M, h):
    w = np.ones(M + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return w * h / 3


class TimeProvider:
    """Products integrated on a fundamental-matrix grid (composite Simpson).

    The grid must end at an integer time and use an even number of steps per
    delay; the integrand is smooth between integer times so Simpson never
    straddles a derivative jump.  Errors combine the Richardson difference
    against the half-resolution rule with the envelope tail bound
    ``K^2 e^{(2a - Re l) T} / (Re l - 2a)`` minimized over trial rates
    ``a > alpha0``.
    """

    def __init__(self, system: SddeSystem, grid: dde.FundamentalGrid | None = None, alpha0=None,
                 dt=1 / 64, t_max=60.0, quad_tol=1e-8, strict=True):
        self.system = system
        self.alpha0 = _alpha0(system, alpha0)
        if grid is None:
            grid = dde.fundamental_matrix(system, dt, float(np.ceil(t_max)))
        m = grid.steps_per_delay
        if m % 4:
            raise ValueError("time route needs steps per delay divisible by 4")
        self.grid = grid
        self.quad_tol = quad_tol
        self.strict = strict
        X = grid.values
        Xs = grid.shifted()
        M = X.shape[0] - 1
        if M % m:
            raise ValueError("time route needs a grid ending at an integer time")
        n = system.n
        self._t = grid.times
        P = np.einsum("tih,tjp->tihjp", X, X).reshape(M + 1, -1)
        Q = np.einsum("tih,tjp->tihjp", X, Xs).reshape(M + 1, -1)
        # products carry the envelope e^{2 alpha0 t}; store them without it so that
        # only e^{-(l - 2 alpha0) t} is formed, which does not overflow for Re l > 2 alpha0
        self._ref = 2 * self.alpha0
        # where e^{2 alpha0 t} underflows the products are zero already; cap the factor
        damp = np.exp(np.minimum(-self._ref * self._t, 700.0))[:, None]
        self._P, self._Q = P * damp, Q * damp
        # shifted products vanish on [0, 1) and jump at t = 1: integrate from 1
        h = grid.dt
        self._wP = _simpson_weights(M, h)
        self._wP2 = np.zeros(M + 1)
        self._wP2[::2] = _simpson_weights(M // 2, 2 * h)
        self._wQ = np.zeros(M + 1)
        self._wQ[m:] = _simpson_weights(M - m, h)
        self._wQ2 = np.zeros(M + 1)
        self._wQ2[m::2] = _simpson_weights((M - m) // 2, 2 * h)
        self._n4 = n**4
        self._norms = grid.norms()
        self.max_error = 0.0

    def tail_bound(self, lam_re):
        """Envelope bound on ``int_T^inf |X_a X_b| e^{-Re l t} dt``."""
        T = self._t[-1]
        d = lam_re - 2 * self.alpha0
        if d <= 0:
            return np.inf
        best = np.inf
        for frac in (0.05, 0.1, 0.2, 0.3, 0.4):
            a = self.alpha0 + frac * d
            K = np.max(self._norms * np.exp(-a * self._t))
            # shifted products carry an extra e^{-a} from X(t-1)
            bound = K * K * max(1.0, np.exp(-a)) * np.exp((2 * a - lam_re) * T) / (lam_re - 2 * a)
            best = min(best, bound)
        return best

    def required_t_max(self, lam_re):
        d = lam_re - 2 * self.alpha0
        a = self.alpha0 + 0.2 * d
        K = np.max(self._norms * np.exp(-a * self._t))
        rate = lam_re - 2 * a
        need = np.log(K * K * max(1.0, np.exp(-a)) / (rate * self.quad_tol)) / rate
        return float(np.ceil(max(need, self._t[-1])))

    def _weighted(self, coarse):
        key = "_PQc" if coarse else "_PQf"
        if not hasattr(self, key):
            wP, wQ = (self._wP2, self._wQ2) if coarse else (self._wP, self._wQ)
            setattr(self, key, np.concatenate([self._P * wP[:, None], self._Q * wQ[:, None]], axis=1))
        return getattr(self, key)

    def _sums(self, flat, coarse=False):
        """Weighted sums of ``e^{-(l - 2 alpha0) t}`` times the stored products.

        The exponential is factored over unit intervals,
        ``e^{-z (j + tau)} = e^{-z j} e^{-z tau}``, to avoid one complex
        exponential per node.
        """
        W = self._weighted(coarse)
        m = self.grid.steps_per_delay
        N = len(self._t)
        nint = (N - 1) // m + 1
        tau = np.arange(m) * self.grid.dt
        out = np.empty((len(flat), W.shape[1]), dtype=complex)
        for a in range(0, len(flat), 128):
            z = flat[a:a + 128] - self._ref
            # points left of 2 alpha0 (stray Newton iterates) come out non-finite
            with np.errstate(over="ignore", invalid="ignore"):
                ej = np.exp(-np.outer(z, np.arange(nint)))
                et = np.exp(-np.outer(z, tau))
                E = (ej[:, :, None] * et[:, None, :]).reshape(len(z), -1)[:, :N]
                out[a:a + 128] = E @ W
        return out

    def evaluate(self, lams):
        """Return ``K, L, err`` with ``err`` a per-point error estimate."""
        lams = np.atleast_1d(np.asarray(lams, dtype=complex))
        flat = lams.ravel()
        fine = self._sums(flat)
        coarse = self._sums(flat, coarse=True)
        rich = np.abs(fine - coarse).max(axis=1) / 15.0
        tails = np.array([self.tail_bound(v.real) for v in flat])
        err = rich + tails
        if self.strict:
            bad = tails > self.quad_tol
            if bad.any():
                v = flat[bad][0]
                raise TailError(
                    f"grid horizon too short for Re l = {v.real:.4g}", self.required_t_max(v.real)
                )
        self.max_error = max(self.max_error, float(err.max()))
        return self._shape(fine, lams.shape) + (err.reshape(lams.shape),)

    def _shape(self, vals, shape):
        n = self.system.n
        full = shape + (n, n, n, n)
        return vals[:, : self._n4].reshape(full), vals[:, self._n4:].reshape(full)

    def tensors(self, lams):
        """``K, L`` without error estimation (used inside root scans)."""
        lams = np.atleast_1d(np.asarray(lams, dtype=complex))
        return self._shape(self._sums(lams.ravel()), lams.shape)

    @property
    def valid_re(self):
        return 2 * self.alpha0


def product_transform_time(grid: dde.FundamentalGrid, kind: ProductKind, lam, system=None, alpha0=None,
                           quad_tol=1e-8):
    """Single product transform by the time route (see :class:`TimeProvider`)."""
    if system is None:
        raise ValueError("system is required to bound the integration tail")
    prov = TimeProvider(system, grid, alpha0=alpha0, quad_tol=quad_tol)
    K, L, err = prov.evaluate(np.array([lam]))
    src = L if kind.shifted else K
    return ProductTransform(complex(lam), kind, complex(src[(0,) + kind.index]), float(err[0]))
