"""Equation data model for linear SDDEs with a unit delay.

The system is

    dx_i = (a_i^j x_j(t) + b_i^j x_j(t-1)) dt
           + (mu_i^k + sigma_i^{jk} x_j(t) + eta_i^{jk} x_j(t-1)) dW_k

with summation over repeated indices.  Tensors are stored as numpy arrays
with shapes ``A, B: (n, n)``, ``mu: (n, k)``, ``sigma, eta: (n, n, k)``, and
``sigma[i, j, k]`` multiplies ``x_j`` in the ``i``-th equation against ``W_k``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

__all__ = [
    "ConfigError",
    "SddeSystem",
    "InitialFunction",
    "AnalysisSettings",
    "NoiseClass",
    "classify_noise",
    "load_system",
    "loads_system",
    "dump_system",
    "l1_norm",
]


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration documents."""


def l1_norm(a) -> float:
    """Entrywise L1 norm, the tensor norm used for every envelope constant."""
    return float(np.sum(np.abs(a)))


def _frozen(a, shape, name):
    arr = np.array(a, dtype=float)
    if arr.shape != shape:
        raise ConfigError(f"{name} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SddeSystem:
    """Coefficient tensors of a linear SDDE with delay normalized to 1."""

    A: np.ndarray
    B: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    eta: np.ndarray
    delay: float = 1.0

    def __post_init__(self):
        if self.delay != 1.0:
            raise ConfigError("delay must be exactly 1; rescale time before building the system")
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise ConfigError(f"A must be a non-empty square matrix, got shape {A.shape}")
        n = A.shape[0]
        mu = np.asarray(self.mu, dtype=float)
        if mu.ndim != 2 or mu.shape[0] != n or mu.shape[1] < 1:
            raise ConfigError(f"mu must have shape ({n}, k), got {mu.shape}")
        k = mu.shape[1]
        object.__setattr__(self, "A", _frozen(A, (n, n), "A"))
        object.__setattr__(self, "B", _frozen(self.B, (n, n), "B"))
        object.__setattr__(self, "mu", _frozen(mu, (n, k), "mu"))
        object.__setattr__(self, "sigma", _frozen(self.sigma, (n, n, k), "sigma"))
        object.__setattr__(self, "eta", _frozen(self.eta, (n, n, k), "eta"))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.mu.shape[1]

    @classmethod
    def build(cls, A, B=None, mu=None, sigma=None, eta=None, k=None):
        """Convenience constructor filling absent tensors with zeros."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        n = A.shape[0]
        if k is None:
            k = np.asarray(mu).shape[1] if mu is not None else n
        B = np.zeros((n, n)) if B is None else B
        mu = np.zeros((n, k)) if mu is None else mu
        sigma = np.zeros((n, n, k)) if sigma is None else sigma
        eta = np.zeros((n, n, k)) if eta is None else eta
        return cls(A=A, B=B, mu=mu, sigma=sigma, eta=eta)

    @classmethod
    def decoupled(cls, A, B=None, mu=(0.0, 0.0), sigma=None, eta=None):
        """Two-dimensional system with noise on matching Wiener indices only.

        ``mu[i]``, ``sigma[i][j]`` and ``eta[i][j]`` are the reduced
        coefficients acting on ``W_i`` in equation ``i``.
        """
        s = np.zeros((2, 2)) if sigma is None else np.asarray(sigma, dtype=float)
        e = np.zeros((2, 2)) if eta is None else np.asarray(eta, dtype=float)
        mu_t = np.diag(np.asarray(mu, dtype=float))
        sig_t = np.zeros((2, 2, 2))
        eta_t = np.zeros((2, 2, 2))
        for i in range(2):
            sig_t[i, :, i] = s[i]
            eta_t[i, :, i] = e[i]
        return cls.build(A, B, mu_t, sig_t, eta_t, k=2)

    def without_noise(self) -> "SddeSystem":
        z = np.zeros_like
        return SddeSystem(self.A, self.B, z(self.mu), z(self.sigma), z(self.eta))

    def reduced_noise(self):
        """Return ``(mu_i, sigma_i^j, eta_i^j)`` for a decoupled 2-D system."""
        if classify_noise(self) not in (NoiseClass.DECOUPLED2D, NoiseClass.DETERMINISTIC) or self.n != 2:
            raise ValueError("reduced noise coefficients need a decoupled 2-D system")
        if self.k != 2:
            raise ValueError("reduced noise coefficients need k = 2")
        mu = np.array([self.mu[0, 0], self.mu[1, 1]])
        sig = np.array([self.sigma[0, :, 0], self.sigma[1, :, 1]])
        eta = np.array([self.eta[0, :, 0], self.eta[1, :, 1]])
        return mu, sig, eta

    def delta(self, lam):
        """Characteristic matrix ``lam I - A - B exp(-lam)``; broadcasts over ``lam``."""
        lam = np.asarray(lam, dtype=complex)
        eye = np.eye(self.n)
        return (lam[..., None, None] * eye - self.A
                - self.B * np.exp(-lam)[..., None, None])

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "eta": self.eta.tolist(),
        }


class NoiseClass(str, Enum):
    DETERMINISTIC = "deterministic"
    ADDITIVE = "additive"
    DECOUPLED2D = "decoupled2d"
    GENERAL = "general"


def classify_noise(system: SddeSystem) -> NoiseClass:
    """Tag the noise structure; the four classes partition all systems."""
    has_mu = bool(np.any(system.mu != 0))
    has_mult = bool(np.any(system.sigma != 0) or np.any(system.eta != 0))
    if not has_mu and not has_mult:
        return NoiseClass.DETERMINISTIC
    if not has_mult:
        return NoiseClass.ADDITIVE
    if system.n == 2 and system.k == 2:
        off = np.array([[0, 1], [1, 0]], dtype=bool)
        ok = (not np.any(system.mu[off])
              and not np.any(system.sigma[:, :, 1][0])
              and not np.any(system.sigma[:, :, 0][1])
              and not np.any(system.eta[:, :, 1][0])
              and not np.any(system.eta[:, :, 0][1]))
        if ok:
            return NoiseClass.DECOUPLED2D
    return NoiseClass.GENERAL


@dataclass(frozen=True, eq=False)
class InitialFunction:
    """History ``phi`` on ``[-1, 0]`` from one of three parametric families.

    constant
        ``params = {"value": [v_1, ..., v_n]}``
    polynomial
        ``params = {"coeffs": [[c_0, c_1, ...], ...]}`` with
        ``phi_i(t) = sum_p coeffs[i][p] * t**p``
    cosine-exponential
        ``params = {"amplitude": [...], "phase": [...], "rate": r, "frequency": w}``
        with ``phi_i(t) = amplitude_i * exp(r t) * cos(w t + phase_i)``, i.e.
        ``Re(exp(lam t) c)`` for ``lam = r + i w``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    KINDS = ("constant", "polynomial", "cosine-exponential")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown initial function kind {self.kind!r}")
        expected = {
            "constant": {"value"},
            "polynomial": {"coeffs"},
            "cosine-exponential": {"amplitude", "phase", "rate", "frequency"},
        }[self.kind]
        got = set(self.params)
        if got != expected:
            raise ConfigError(f"{self.kind} initial function needs fields {sorted(expected)}, got {sorted(got)}")
        rows = self.params["coeffs"] if self.kind == "polynomial" else list(self.params.values())
        for val in rows:
            try:
                ok = np.all(np.isfinite(np.asarray(val, dtype=float)))
            except (TypeError, ValueError):
                ok = False
            if not ok:
                raise ConfigError(f"{self.kind} initial function parameters must be finite numbers")
        if self.kind == "cosine-exponential" and len(self.params["amplitude"]) != len(self.params["phase"]):
            raise ConfigError("amplitude and phase must have equal length")

    @property
    def n(self) -> int:
        p = self.params
        if self.kind == "constant":
            return len(p["value"])
        if self.kind == "polynomial":
            return len(p["coeffs"])
        return len(p["amplitude"])

    @classmethod
    def constant(cls, value):
        return cls("constant", {"value": [float(v) for v in np.atleast_1d(value)]})

    @classmethod
    def zero(cls, n):
        return cls.constant([0.0] * n)

    @classmethod
    def polynomial(cls, coeffs):
        return cls("polynomial", {"coeffs": [[float(c) for c in row] for row in coeffs]})

    @classmethod
    def cosine_exponential(cls, amplitude, phase, rate, frequency):
        return cls("cosine-exponential", {
            "amplitude": [float(a) for a in amplitude],
            "phase": [float(p) for p in phase],
            "rate": float(rate),
            "frequency": float(frequency),
        })

    @classmethod
    def eigen(cls, lam: complex, c) -> "InitialFunction":
        """History ``Re(exp(lam t) c)`` for a complex vector ``c``."""
        c = np.asarray(c, dtype=complex)
        return cls.cosine_exponential(np.abs(c), np.angle(c), lam.real, lam.imag)

    def __call__(self, t):
        """Evaluate at times ``t``; returns an array of shape ``t.shape + (n,)``."""
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.broadcast_to(np.asarray(p["value"], dtype=float), t.shape + (self.n,)).copy()
        if self.kind == "polynomial":
            out = np.empty(t.shape + (self.n,))
            for i, row in enumerate(p["coeffs"]):
                out[..., i] = np.polynomial.polynomial.polyval(t, row)
            return out
        amp = np.asarray(p["amplitude"], dtype=float)
        ph = np.asarray(p["phase"], dtype=float)
        tt = t[..., None]
        return amp * np.exp(p["rate"] * tt) * np.cos(p["frequency"] * tt + ph)

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        p = self.params
        if self.kind == "constant":
            return np.zeros(t.shape + (self.n,))
        if self.kind == "polynomial":
            out = np.empty(t.shape + (self.n,))
            for i, row in enumerate(p["coeffs"]):
                out[..., i] = np.polynomial.polynomial.polyval(t, np.polynomial.polynomial.polyder(row)) if len(row) > 1 else 0.0
            return out
        amp = np.asarray(p["amplitude"], dtype=float)
        ph = np.asarray(p["phase"], dtype=float)
        r, w = p["rate"], p["frequency"]
        tt = t[..., None]
        return amp * np.exp(r * tt) * (r * np.cos(w * tt + ph) - w * np.sin(w * tt + ph))

    def sup_norm(self, samples: int = 2049) -> float:
        """``sup_theta sum_i |phi_i(theta)|`` sampled on ``[-1, 0]``."""
        return float(np.max(np.sum(np.abs(self(np.linspace(-1.0, 0.0, samples))), axis=-1)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params}


@dataclass(frozen=True)
class AnalysisSettings:
    t_max: float = 40.0
    dt: float = 1.0 / 64
    omega_max: float = 200.0
    quad_tol: float = 1e-8
    root_tol: float = 1e-9
    paths: int = 10000
    seed: int = 20240521

    def __post_init__(self):
        for name in ("t_max", "dt", "omega_max", "quad_tol", "root_tol"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                raise ConfigError(f"analysis.{name} must be a positive finite number")
        if not isinstance(self.paths, int) or self.paths < 1:
            raise ConfigError("analysis.paths must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("analysis.seed must be an unsigned 64-bit integer")

    def replace(self, **kw) -> "AnalysisSettings":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return AnalysisSettings(**d)

    def to_dict(self) -> dict:
        return {
            "t_max": self.t_max, "dt": self.dt, "omega_max": self.omega_max,
            "quad_tol": self.quad_tol, "root_tol": self.root_tol,
            "paths": self.paths, "seed": self.seed,
        }


_TOP_FIELDS = {"n", "k", "A", "B", "mu", "sigma", "eta", "phi", "analysis"}
_REQUIRED = {"n", "k", "A"}


def _reject_constant(name):
    raise ConfigError(f"non-finite literal {name} is not allowed")


def loads_system(text: str):
    """Parse a JSON config document.

    Returns
    -------
    (SddeSystem, InitialFunction, AnalysisSettings)
    """
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(doc) - _TOP_FIELDS
    if unknown:
        raise ConfigError(f"unknown field(s): {sorted(unknown)}")
    missing = _REQUIRED - set(doc)
    if missing:
        raise ConfigError(f"missing field(s): {sorted(missing)}")
    n, k = doc["n"], doc["k"]
    if not (isinstance(n, int) and n >= 1 and isinstance(k, int) and k >= 1):
        raise ConfigError("n and k must be positive integers")

    def arr(name, shape):
        if name not in doc:
            return np.zeros(shape)
        try:
            a = np.array(doc[name], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name} is not a numeric array") from exc
        if a.shape != shape:
            raise ConfigError(f"{name} has shape {a.shape}, expected {shape}")
        return a

    system = SddeSystem(
        A=arr("A", (n, n)), B=arr("B", (n, n)), mu=arr("mu", (n, k)),
        sigma=arr("sigma", (n, n, k)), eta=arr("eta", (n, n, k)),
    )
    phi_doc = doc.get("phi", {"kind": "constant", "params": {"value": [1.0] * n}})
    if not isinstance(phi_doc, dict) or set(phi_doc) - {"kind", "params"}:
        raise ConfigError("phi must be an object with fields kind and params")
    phi = InitialFunction(phi_doc.get("kind"), dict(phi_doc.get("params", {})))
    if phi.n != n:
        raise ConfigError(f"phi has {phi.n} components, expected {n}")
    an = doc.get("analysis", {})
    if not isinstance(an, dict):
        raise ConfigError("analysis must be an object")
    bad = set(an) - set(AnalysisSettings().to_dict())
    if bad:
        raise ConfigError(f"unknown analysis field(s): {sorted(bad)}")
    settings = AnalysisSettings(**an)
    return system, phi, settings


def load_system(path):
    with open(path, encoding="utf-8") as fh:
        return loads_system(fh.read())


def dump_system(system: SddeSystem, phi: InitialFunction | None = None,
                settings: AnalysisSettings | None = None) -> str:
    doc: dict[str, Any] = system.to_dict()
    if phi is not None:
        doc["phi"] = phi.to_dict()
    if settings is not None:
        doc["analysis"] = settings.to_dict()
    return json.dumps(doc, indent=2)
