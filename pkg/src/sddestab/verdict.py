"""Boundedness verdicts for the second moment.

``decide`` applies the available criteria cheapest first and records the
evidence each one rests on:

1. no noise: bounded, the moments vanish;
2. additive noise: sign of ``alpha0``;
3. ``alpha0 > 0`` in the decoupled 2-D class: unbounded, unless a
   noise-free exponential solution exists;
4. decoupled 2-D class with ``alpha_bar0 < 0``: sign of ``beta0``;
5. ``n = 2`` and ``alpha0 < 0``: the envelope certificate of
   :func:`bk_search`;
6. otherwise inconclusive.

A dead band ``critical_tol`` around zero for ``alpha0`` and ``beta0`` never
yields a conclusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import charfn, dde, spectral
from .model import AnalysisSettings, InitialFunction, NoiseClass, SddeSystem, classify_noise

__all__ = ["Verdict", "BkCertificate", "decide", "bk_search", "bk_lhs", "CRITICAL_TOL", "RULES"]

CRITICAL_TOL = 1e-4
RULES = ("Thm-bou", "Thm-unb", "Thm-bound-i", "Thm-bound-ii", "Thm-BK", "none-applicable")
H_CAVEAT = "a noise-free exponential solution exists; the unboundedness rules do not apply"


def _fin(x):
    return None if x is None or not np.isfinite(x) else float(x)


@dataclass(frozen=True)
class BkCertificate:
    alpha: float
    K_bar: float
    lhs: float
    rhs: float
    satisfied: bool
    horizon: float = 0.0

    def to_dict(self):
        return {"alpha": self.alpha, "K_bar": self.K_bar, "lhs": self.lhs, "rhs": self.rhs,
                "satisfied": self.satisfied, "envelope_horizon": self.horizon}


@dataclass
class Verdict:
    conclusion: str
    rule: str
    evidence: dict = field(default_factory=dict)
    caveats: list = field(default_factory=list)

    def to_dict(self):
        return {"conclusion": self.conclusion, "rule": self.rule, "evidence": self.evidence,
                "caveats": list(self.caveats)}


def bk_lhs(system: SddeSystem) -> float:
    """``sum_l sum_k (sum_j |sigma_l^{jk}| + |eta_l^{jk}|)^2``."""
    rows = np.abs(system.sigma).sum(axis=1) + np.abs(system.eta).sum(axis=1)  # (l, k)
    return float(np.sum(rows**2))


def bk_search(system: SddeSystem, grid: dde.FundamentalGrid, alpha0: float, samples: int = 400) -> BkCertificate:
    """Best envelope certificate ``||X(t)|| <= K e^{alpha t}`` with ``alpha0 < alpha < 0``.

    ``K`` is the grid supremum of ``||X(t)|| e^{-alpha t}``; rates whose
    supremum sits in the last tenth of the grid are discarded because the
    envelope is then not resolved by the horizon.

    Examples
    --------
    >>> s = SddeSystem.decoupled(np.diag([-1.0, -2.0]), sigma=[[0.2, 0], [0, 0]], mu=(1.0, 0.0))
    >>> g = dde.fundamental_matrix(s, 1 / 64, 40.0)
    >>> c = bk_search(s, g, -1.0)
    >>> c.satisfied, round(c.K_bar, 6), round(c.lhs, 6)
    (True, 2.0, 0.04)
    """
    if not alpha0 < 0:
        raise ValueError(f"envelope certificate needs alpha0 < 0, got {alpha0}")
    if system.n != 2:
        raise ValueError("the envelope certificate is stated for n = 2")
    lhs = bk_lhs(system)
    hi = alpha0 * (1 - 1e-3)
    alphas = np.linspace(hi, 0.0, samples + 1)[:-1]
    norms = grid.norms()
    times = grid.times
    cut = int(0.9 * (len(times) - 1))
    best = None
    for a in alphas:
        w = norms * np.exp(-a * times)
        j = int(np.argmax(w))
        if j >= cut:
            continue
        K = float(w[j])
        rhs = -a / (2 * K * K)
        if best is None or rhs - lhs > best.rhs - best.lhs:
            best = BkCertificate(float(a), K, lhs, float(rhs), bool(lhs < rhs), float(grid.t_max))
    if best is None:
        a = float(alphas[-1])
        K = dde.fit_envelope(grid, a)
        best = BkCertificate(a, K, lhs, -a / (2 * K * K), False, float(grid.t_max))
    return best


def decide(system: SddeSystem, phi: InitialFunction | None = None, settings: AnalysisSettings | None = None,
           critical_tol: float = CRITICAL_TOL, seed: int = 0) -> Verdict:
    """Boundedness verdict with the evidence that supports it.

    The verdict concerns the second moment of every solution; ``phi`` is
    accepted for interface uniformity and recorded only.
    """
    settings = settings or AnalysisSettings()
    cls = classify_noise(system)
    evidence = {"noise_class": cls.value}
    if phi is not None:
        evidence["phi"] = phi.to_dict()
    caveats: list = []

    spec = spectral.spectral_summary(system, root_tol=settings.root_tol, seed=seed, full=True)
    a0 = spec.alpha0
    evidence["alpha0"] = _fin(a0)
    evidence["spectral"] = spec.to_dict()
    hrep = spectral.check_assumption_h(system, spec)
    evidence["assumption_h"] = hrep.to_dict()
    if hrep.holds:
        caveats.append(H_CAVEAT)
    critical_a0 = abs(a0) < critical_tol
    if critical_a0:
        caveats.append(f"alpha0 = {a0:.3g} lies within the critical band {critical_tol:g}")

    def out(conclusion, rule):
        return Verdict(conclusion, rule, evidence, caveats)

    if cls == NoiseClass.DETERMINISTIC:
        caveats.append("no noise: the second moment vanishes identically")
        return out("bounded", "none-applicable")

    if cls == NoiseClass.ADDITIVE:
        if critical_a0:
            return out("inconclusive", "none-applicable")
        if a0 < 0:
            try:
                prov = charfn.default_provider(system, a0, 2 * a0 + 0.25)
                evidence["M_inf"] = charfn.stationary_moment_genN(system, prov).tolist()
            except Exception as exc:  # evidence only
                caveats.append(f"stationary moment not computed: {exc}")
        return out("bounded" if a0 < 0 else "unbounded", "Thm-bou")

    decoupled = cls == NoiseClass.DECOUPLED2D
    if a0 > critical_tol:
        if hrep.holds:
            return out("inconclusive", "none-applicable")
        if decoupled:
            return out("unbounded", "Thm-unb")
        caveats.append("alpha0 > 0 with coupled noise: the unboundedness theorem covers the decoupled 2-D class only")
        return out("inconclusive", "none-applicable")
    if critical_a0:
        return out("inconclusive", "none-applicable")

    conclusion = None
    if decoupled:
        try:
            ms = charfn.compute_beta0(system, settings, spec, seed=seed)
        except ValueError as exc:
            caveats.append(f"beta0 not computed: {exc}")
            ms = None
        if ms is not None:
            evidence["alpha_bar0"] = _fin(ms.alpha_bar0)
            evidence["beta0"] = _fin(ms.beta0) if not ms.beta0_no_roots else None
            evidence["beta0_no_roots"] = ms.beta0_no_roots
            if ms.beta0_no_roots and ms.H_region is not None:
                evidence["beta0_upper_bound"] = float(ms.H_region.re_min)
            evidence["moment_spectral"] = ms.to_dict()
            caveats.extend(ms.warnings)
            b0 = ms.beta0
            if ms.alpha_bar0 < -critical_tol:
                if b0 < -critical_tol:
                    try:
                        prov = charfn.default_provider(system, a0, 2 * a0 + 0.25)
                        evidence["M_inf"] = charfn.stationary_moment(system, prov).tolist()
                    except Exception as exc:
                        caveats.append(f"stationary moment not computed: {exc}")
                    conclusion = ("bounded", "Thm-bound-i")
                elif b0 > critical_tol:
                    if not hrep.holds:
                        conclusion = ("unbounded", "Thm-bound-ii")
                else:
                    caveats.append(f"beta0 = {b0:.3g} lies within the critical band {critical_tol:g}")
            else:
                caveats.append("alpha_bar0 is not safely negative")

    if system.n == 2:
        grid = dde.fundamental_matrix(system, settings.dt, settings.t_max)
        cert = bk_search(system, grid, a0)
        evidence["bk"] = cert.to_dict()
        if conclusion is None and cert.satisfied:
            caveats.append("envelope constant fitted on a finite horizon")
            conclusion = ("bounded", "Thm-BK")
    if conclusion is None:
        return out("inconclusive", "none-applicable")
    return out(*conclusion)
