"""Characteristic roots of the delay equation and a generic zero scanner.

``rightmost_root`` works on any analytic evaluator: it counts zeros of a
rectangle with the argument principle, bisects rectangles that contain
zeros (right-most first) and polishes each isolated zero with Newton's
method.  Every zero in the scan region is accounted for either as a
polished root or as a pruned rectangle lying strictly left of the
rightmost root found.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .model import NoiseClass, SddeSystem, classify_noise, l1_norm

__all__ = [
    "CharCoefficients2D",
    "ScanRegion",
    "Root",
    "SpectralSummary",
    "AssumptionHReport",
    "ContourError",
    "char_coefficients",
    "eval_h",
    "eval_h_expansion",
    "eval_h_derivative",
    "h_region",
    "rightmost_root",
    "spectral_summary",
    "winding_number",
    "real_roots",
    "check_assumption_h",
]


class ContourError(RuntimeError):
    pass


@dataclass(frozen=True)
class CharCoefficients2D:
    a: float
    b: float
    c: float
    d: float
    r: float

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=complex)
        e = np.exp(-lam)
        return lam**2 + self.a * lam + self.b + (self.c * lam + self.d) * e + self.r * e**2

    def derivative(self, lam):
        lam = np.asarray(lam, dtype=complex)
        e = np.exp(-lam)
        return 2 * lam + self.a + (self.c - self.c * lam - self.d) * e - 2 * self.r * e**2


def char_coefficients(system: SddeSystem) -> CharCoefficients2D:
    """Coefficients of ``h = l^2 + a l + b + (c l + d) e^{-l} + r e^{-2l}``.

    Examples
    --------
    >>> char_coefficients(SddeSystem.build(np.diag([-1.0, -2.0])))
    CharCoefficients2D(a=3.0, b=2.0, c=0.0, d=0.0, r=0.0)
    """
    if system.n != 2:
        raise ValueError("the quasi-polynomial expansion needs n = 2")
    (a11, a12), (a21, a22) = system.A
    (b11, b12), (b21, b22) = system.B
    return CharCoefficients2D(
        a=float(-a11 - a22) + 0.0,
        b=float(a11 * a22 - a12 * a21) + 0.0,
        c=float(-b11 - b22) + 0.0,
        d=float(a11 * b22 + a22 * b11 - a12 * b21 - a21 * b12) + 0.0,
        r=float(b11 * b22 - b12 * b21) + 0.0,
    )


def eval_h(system: SddeSystem, lam):
    """``det(l I - A - B e^{-l})``, vectorized over ``lam``."""
    return np.linalg.det(system.delta(lam))


def eval_h_expansion(system: SddeSystem, lam):
    return char_coefficients(system)(lam)


def _adjugate(M):
    """Adjugate of a stack of square matrices via cofactors (no inversion)."""
    n = M.shape[-1]
    if n == 1:
        return np.ones_like(M)
    adj = np.empty_like(M)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(M, i, axis=-2), j, axis=-1)
            adj[..., j, i] = (-1) ** (i + j) * np.linalg.det(minor)
    return adj


def eval_h_derivative(system: SddeSystem, lam):
    """``h'`` by Jacobi's formula ``tr(adj(Delta) (I + B e^{-l}))``."""
    lam = np.asarray(lam, dtype=complex)
    D = system.delta(lam)
    dD = np.eye(system.n) + system.B * np.exp(-lam)[..., None, None]
    return np.einsum("...ij,...ji->...", _adjugate(D), dD)


@dataclass(frozen=True)
class ScanRegion:
    re_min: float
    re_max: float
    omega_max: float

    def __post_init__(self):
        if not (self.re_min < self.re_max and self.omega_max > 0):
            raise ValueError(f"degenerate scan region {self}")

    def to_dict(self):
        return {"re_min": self.re_min, "re_max": self.re_max, "omega_max": self.omega_max}


def h_region(system: SddeSystem, omega_cap: float = 200.0) -> ScanRegion:
    """Rectangle that holds the rightmost zeros of ``h``.

    A zero satisfies ``|l| <= rho(A + B e^{-l}) <= ||A|| + ||B|| e^{-Re l}``
    (the L1 tensor norm dominates the spectral radius), which bounds
    ``Re l`` from above and ``|Im l|`` on ``Re l >= re_min``.  Zeros left of
    ``re_min`` never lie right of the eigenvalue-type zeros caught by the
    Gershgorin edge, so they cannot be rightmost.
    """
    A, B = system.A, system.B
    nA, nB = l1_norm(A), l1_norm(B)
    radii = np.sum(np.abs(A), axis=1) - np.abs(np.diag(A))
    gersh = float(np.min(np.diag(A) - radii))
    re_min = min(-5.0, 2.0 * gersh)
    re_max = max(2.0, nA + nB) + 0.5
    omega = min(omega_cap, nA + nB * np.exp(-re_min) + 1.0)
    return ScanRegion(float(re_min), float(re_max), float(max(omega, 4.0)))


@dataclass(frozen=True)
class Root:
    value: complex
    residual: float
    multiplicity: int
    confidence_radius: float

    def to_dict(self):
        return {
            "re": self.value.real,
            "im": self.value.imag,
            "residual": self.residual,
            "multiplicity": self.multiplicity,
            "confidence_radius": self.confidence_radius,
        }


@dataclass(frozen=True)
class SpectralSummary:
    """Outcome of a scan.  ``alpha0`` is ``-inf`` when no zeros were found."""

    alpha0: float
    roots: tuple
    scan_region: ScanRegion
    confidence_radius: float
    total_count: int
    certificate: tuple = field(default=(), repr=False)
    warnings: tuple = ()

    @property
    def no_roots(self):
        return self.total_count == 0

    @property
    def rightmost(self):
        return max(self.roots, key=lambda r: r.value.real) if self.roots else None

    def to_dict(self):
        return {
            "alpha0": None if self.no_roots else self.alpha0,
            "no_roots": self.no_roots,
            "confidence_radius": self.confidence_radius,
            "scan_region": self.scan_region.to_dict(),
            "total_count": self.total_count,
            "roots": [r.to_dict() for r in self.roots],
            "certificate": [dict(c) for c in self.certificate],
            "warnings": list(self.warnings),
        }


class _NearZero(Exception):
    pass


def _edge_phase(f, z0, z1, min_len, n0, fp=None):
    """Continuous change of ``arg f`` along the segment ``z0 -> z1``.

    Segments are halved until the phase and modulus change little between
    neighbours.  With a derivative available, a segment must also be short
    against ``1/|f'/f|``, a proxy for the distance to the nearest zero, which
    rules out a zero slipping between two samples unnoticed.
    """
    t = np.linspace(0.0, 1.0, n0 + 1)
    z = z0 + (z1 - z0) * t
    w = f(z)
    g = np.abs(fp(z) / w) if fp is not None else None
    L = abs(z1 - z0)
    for _ in range(80):
        if np.any(~np.isfinite(w)) or np.any(w == 0):
            raise _NearZero
        ratio = w[1:] / w[:-1]
        bad = (np.abs(np.angle(ratio)) > np.pi / 8) | (np.abs(np.log(np.abs(ratio))) > 0.7)
        dt = t[1:] - t[:-1]
        if g is not None:
            bad |= dt * L * np.maximum(g[1:], g[:-1]) > 0.5
        if not bad.any():
            return float(np.sum(np.angle(ratio)))
        if dt[bad].min() * L < min_len:
            raise _NearZero
        tm = 0.5 * (t[:-1] + t[1:])[bad]
        zm = z0 + (z1 - z0) * tm
        wm = f(zm)
        t = np.concatenate([t, tm])
        w = np.concatenate([w, wm])
        order = np.argsort(t, kind="stable")
        t, w = t[order], w[order]
        if g is not None:
            g = np.concatenate([g, np.abs(fp(zm) / wm)])[order]
    raise _NearZero


def winding_number(f, re0, re1, im0, im1, density=8.0, min_len=None, fprime=None):
    """Number of zeros of ``f`` inside the rectangle (argument principle)."""
    corners = [complex(re0, im0), complex(re1, im0), complex(re1, im1), complex(re0, im1)]
    size = max(re1 - re0, im1 - im0)
    if min_len is None:
        min_len = 1e-11 * (1.0 + size + max(abs(c) for c in corners))
    total = 0.0
    for a, b in zip(corners, corners[1:] + corners[:1]):
        n0 = max(8, int(np.ceil(abs(b - a) * density)))
        total += _edge_phase(f, a, b, min_len, n0, fprime)
    k = total / (2 * np.pi)
    count = int(round(k))
    if abs(k - count) > 0.1:
        raise _NearZero
    return count


def _newton(f, fp, z, m=1, steps=60, tol=1e-14):
    for _ in range(steps):
        fz = complex(f(np.array([z]))[0])
        dz = complex(fp(np.array([z]))[0])
        if fz == 0:
            return z, True
        if dz == 0 or not np.isfinite(dz):
            return z, False
        step = m * fz / dz
        z = z - step
        if not np.isfinite(z):
            return z, False
        if abs(step) <= tol * (1 + abs(z)):
            return z, True
    return z, abs(step) <= 1e-9 * (1 + abs(z))


def _fd_derivative(f):
    def fp(z):
        z = np.asarray(z, dtype=complex)
        h = 1e-6 * (1 + np.abs(z))
        with np.errstate(all="ignore"):
            return (f(z + h) - f(z - h)) / (2 * h)

    return fp


def rightmost_root(
    f,
    region: ScanRegion,
    fprime=None,
    root_tol: float = 1e-9,
    seed: int = 0,
    full: bool = False,
    density: float = 8.0,
    max_rects: int = 20000,
    scale=None,
) -> SpectralSummary:
    """Locate the rightmost zeros of an analytic function in ``region``.

    Parameters
    ----------
    f : callable
        Vectorized evaluator, complex array in, complex array out.
    fprime : callable, optional
        Analytic derivative; a central difference is used otherwise.
    root_tol : float
        Maximum accepted ``|f(root)|``.
    seed : int
        Seeds the jitter of bisection split points.
    full : bool
        Resolve every zero in the region instead of stopping once no
        unresolved rectangle can hold a zero right of the best root.
    scale : callable, optional
        Magnitude of the terms of ``f`` near a point, used for the rounding
        part of the confidence radius.
    """
    rng = np.random.default_rng(seed)
    fp = fprime if fprime is not None else _fd_derivative(f)
    warnings = []

    # top-level count; nudge the outer boundary if it grazes a zero
    box = [region.re_min, region.re_max, -region.omega_max, region.omega_max]
    for attempt in range(6):
        try:
            total = winding_number(f, *box, density=density, fprime=fprime)
            break
        except _NearZero:
            bump = 1e-3 * (attempt + 1) * (1 + rng.random())
            box = [box[0] - bump, box[1] + bump, box[2] - bump, box[3] + bump]
            warnings.append(f"outer contour nudged by {bump:.2e}")
    else:
        raise ContourError("outer contour passes through a zero after retries")
    used = ScanRegion(box[0], box[1], box[3])

    roots: list[Root] = []
    certificate = []
    heap = []
    counter = 0
    if total > 0:
        heapq.heappush(heap, (-box[1], counter, tuple(box), total, 0))
    accounted = 0
    processed = 0

    def best_re():
        return max((r.value.real for r in roots), default=-np.inf)

    def try_polish(rect, count):
        re0, re1, im0, im1 = rect
        z0 = complex(0.5 * (re0 + re1), 0.5 * (im0 + im1))
        size = max(re1 - re0, im1 - im0)
        z, ok = _newton(f, fp, z0, m=count)
        if count > 1 and ok:
            # refine with the plain iteration on f^(1/m): already multiplicity-aware
            pass
        if not ok:
            return None
        # a zero polished from here must belong to this rectangle
        pad = 1e-12 * (1 + abs(z0))
        if not (re0 - pad <= z.real <= re1 + pad and im0 - pad <= z.imag <= im1 + pad):
            return None
        res = abs(complex(f(np.array([z]))[0]))
        if not res < root_tol * (1.0 if scale is None else max(1.0, scale(z))):
            return None
        if count > 1:
            # the cluster must really be confined near z
            r = max(1e-3 * size, 1e-6 * (1 + abs(z)))
            try:
                if winding_number(f, z.real - r, z.real + r, z.imag - r, z.imag + r, fprime=fprime) != count:
                    return None
            except _NearZero:
                return None
        dz = complex(fp(np.array([z]))[0])
        sc = 1.0 if scale is None else scale(z)
        newton_r = abs(count * res / dz) if dz != 0 else np.inf
        floor_r = (1e-15 * sc) ** (1.0 / count) * (1 + abs(z))
        return Root(complex(z), float(res), int(count), float(max(newton_r, floor_r)))

    while heap:
        neg_right, _, rect, count, depth = heapq.heappop(heap)
        if not full and roots and -neg_right < best_re() - 1e-9:
            certificate.append({"rect": list(rect), "count": count, "status": "pruned"})
            accounted += count
            continue
        processed += 1
        if processed > max_rects:
            raise ContourError("bisection budget exhausted")
        re0, re1, im0, im1 = rect
        size = max(re1 - re0, im1 - im0)
        if count == 1 or (count > 1 and size < 0.05):
            root = try_polish(rect, count)
            if root is not None and not any(abs(root.value - r.value) < 1e-8 * (1 + abs(r.value)) for r in roots):
                roots.append(root)
                certificate.append({"rect": list(rect), "count": count, "status": "resolved"})
                accounted += count
                continue
            if root is not None:
                # duplicate: Newton drifted to a zero owned by another rectangle
                pass
        if size < 1e-9 * (1 + abs(re0) + abs(im0)):
            warnings.append(f"unresolved cluster of {count} zeros near {complex(re0, im0)}")
            certificate.append({"rect": list(rect), "count": count, "status": "unresolved"})
            accounted += count
            continue
        split_re = (re1 - re0) >= (im1 - im0)
        for attempt in range(8):
            frac = 0.5 + rng.uniform(-0.1, 0.1) if attempt == 0 else rng.uniform(0.3, 0.7)
            try:
                if split_re:
                    cut = re0 + frac * (re1 - re0)
                    kids = [(re0, cut, im0, im1), (cut, re1, im0, im1)]
                else:
                    cut = im0 + frac * (im1 - im0)
                    kids = [(re0, re1, im0, cut), (re0, re1, cut, im1)]
                c0 = winding_number(f, *kids[0], density=density * (1 + attempt), fprime=fprime)
                c1 = winding_number(f, *kids[1], density=density * (1 + attempt), fprime=fprime)
                if c0 + c1 != count or min(c0, c1) < 0:
                    raise _NearZero
                break
            except _NearZero:
                continue
        else:
            raise ContourError(f"cannot split rectangle {rect} away from its zeros")
        for kid, c in zip(kids, (c0, c1)):
            if c > 0:
                counter += 1
                heapq.heappush(heap, (-kid[1], counter, kid, c, depth + 1))

    roots.sort(key=lambda r: (r.value.real, r.value.imag))
    if accounted != total:
        warnings.append(f"accounted for {accounted} of {total} zeros")
    if roots:
        top = max(roots, key=lambda r: r.value.real)
        alpha0 = top.value.real
        conf = max(r.confidence_radius for r in roots if r.value.real >= alpha0 - 1e-9)
    else:
        alpha0, conf = -np.inf, 0.0
    return SpectralSummary(
        alpha0=float(alpha0),
        roots=tuple(roots),
        scan_region=used,
        confidence_radius=float(conf),
        total_count=int(total),
        certificate=tuple(certificate),
        warnings=tuple(warnings),
    )


def _h_scale(system):
    nA, nB = l1_norm(system.A), l1_norm(system.B)

    def scale(z):
        return (abs(z) + nA + nB * np.exp(-z.real)) ** system.n

    return scale


def spectral_summary(system: SddeSystem, region: ScanRegion | None = None, root_tol=1e-9, seed=0, full=False):
    """Scan ``h`` of ``system`` and return its rightmost zeros (``alpha0``)."""
    region = region or h_region(system)

    def f(z):
        if system.n == 2:
            return char_coefficients(system)(z)
        return eval_h(system, z)

    return rightmost_root(
        f, region, fprime=lambda z: eval_h_derivative(system, z), root_tol=root_tol,
        seed=seed, full=full, scale=_h_scale(system),
    )


def real_roots(system: SddeSystem, re_min: float, re_max: float, resolution=1e-3, extra=()):
    """Real zeros of ``h`` on ``[re_min, re_max]``.

    Sign changes on a grid of the given resolution are polished with Brent's
    method.  Even-order zeros do not change sign, so near-real entries of
    ``extra`` (e.g. roots from a complex scan) are merged in as well.
    """
    def hr(x):
        return float(np.real(eval_h(system, complex(x))))

    x = np.arange(re_min, re_max + resolution, resolution)
    vals = np.real(eval_h(system, x.astype(complex)))
    out = [float(xi) for xi, v in zip(x, vals) if v == 0.0]
    for i in np.nonzero(vals[:-1] * vals[1:] < 0)[0]:
        out.append(brentq(hr, x[i], x[i + 1], xtol=1e-15, rtol=1e-15))
    for z in extra:
        z = complex(z)
        if abs(z.imag) < 1e-6 * (1 + abs(z)) and re_min <= z.real <= re_max:
            out.append(z.real)
    out.sort()
    merged = []
    for r in out:
        if not merged or abs(r - merged[-1]) > 1e-7 * (1 + abs(r)):
            merged.append(r)
    return merged


@dataclass(frozen=True)
class AssumptionHReport:
    holds: bool
    witness: tuple | None
    residual: float
    checked: tuple = ()
    reason: str = ""

    def to_dict(self):
        w = None
        if self.witness is not None:
            w = {"lambda": self.witness[0], "c": [float(v) for v in self.witness[1]]}
        return {
            "holds": self.holds,
            "witness": w,
            "residual": self.residual,
            "checked_roots": list(self.checked),
            "reason": self.reason,
        }


def check_assumption_h(system: SddeSystem, spectral: SpectralSummary | None = None, tol: float = 1e-7):
    """Look for a real root ``l`` of ``h`` with a deterministic solution
    ``e^{l t} c`` that the noise does not see.

    The test needs ``mu = 0`` and a unit vector ``c`` with ``Delta(l) c = 0``
    and ``sum_j (sigma_i^{jk} + e^{-l} eta_i^{jk}) c_j = 0`` for all ``i, k``.
    Candidate vectors range over the numerical null space of ``Delta(l)``.
    """
    if np.any(system.mu != 0):
        return AssumptionHReport(False, None, float("inf"), reason="mu is nonzero")
    if spectral is None:
        spectral = spectral_summary(system, full=True)
    region = spectral.scan_region
    extra = [r.value for r in spectral.roots]
    lams = real_roots(system, region.re_min, region.re_max, extra=extra)
    best = (float("inf"), None)
    n = system.n
    for lam in lams:
        D = np.real(system.delta(complex(lam)))
        scale = 1.0 + np.abs(D).max()
        _, s, vh = np.linalg.svd(D)
        null = vh[s <= max(1e-7 * scale, s[0] * 1e-9 if len(s) else 0)]
        if len(null) == 0:
            null = vh[-1:]
        V = null.T  # (n, r)
        Ns = (system.sigma + np.exp(-lam) * system.eta).transpose(0, 2, 1).reshape(-1, n)
        nscale = 1.0 + np.abs(Ns).max()
        M = Ns @ V
        if M.size == 0 or not np.any(M):
            c = V[:, 0]
            res = 0.0
        else:
            _, s2, vh2 = np.linalg.svd(M)
            if len(s2) < V.shape[1]:
                s_min = 0.0
            else:
                s_min = s2[-1]
            c = V @ vh2[-1]
            res = float(s_min / nscale)
        res = max(res, float(np.linalg.norm(D @ c) / scale))
        if res < best[0]:
            best = (res, (float(lam), c / np.linalg.norm(c)))
    holds = best[0] < tol
    return AssumptionHReport(
        holds=bool(holds),
        witness=best[1] if holds else None,
        residual=float(best[0]),
        checked=tuple(lams),
        reason="" if holds else ("no real root of h" if not lams else "noise does not vanish on any real-root mode"),
    )
