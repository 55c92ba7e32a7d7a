"""Reference systems and the built-in verification checks.

``SOUNDNESS`` is a dozen systems spanning additive, multiplicative and
delayed noise, each bounded and unbounded.  ``CHECKS`` pairs names with
callables returning ``(passed, detail)``; every check compares a computed
value with an independently derived closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import lambertw

from . import charfn, dde, laplace, mc, moments, spectral, verdict
from .model import InitialFunction, SddeSystem

__all__ = ["CorpusSystem", "SOUNDNESS", "CHECKS", "run_checks", "scalar_family", "lambert_alpha0"]


@dataclass(frozen=True)
class CorpusSystem:
    name: str
    category: str
    system: SddeSystem
    phi: InitialFunction


def scalar_family(a, sigma, mu1=1.0, inert=-2.0):
    """Decoupled 2-D embedding of ``dx = a x dt + (mu1 + sigma x) dW``."""
    return SddeSystem.decoupled(np.diag([a, inert]), mu=(mu1, 0.0), sigma=[[sigma, 0.0], [0.0, 0.0]])


def lambert_alpha0():
    """Real part of the principal solution of ``l e^l = -1``."""
    return float(lambertw(-1.0, 0).real)


def _general_noise():
    sigma = np.zeros((2, 2, 2))
    sigma[0, 0, 0], sigma[0, 1, 1], sigma[1, 1, 1], sigma[1, 0, 0] = 0.08, 0.05, 0.08, 0.04
    return SddeSystem.build(np.array([[-1.5, 0.3], [0.2, -1.2]]), B=np.array([[0.2, 0.0], [0.0, 0.1]]),
                            mu=np.array([[0.0, 0.0], [0.0, 0.0]]), sigma=sigma)


def _soundness():
    one = InitialFunction.constant([1.0, 1.0])
    D = SddeSystem.decoupled
    return (
        CorpusSystem("additive-stable", "additive stable", D(np.diag([-1.0, -2.0]), mu=(1.0, 1.0)), one),
        CorpusSystem("additive-stable-delay", "additive stable",
                     D(np.array([[-1.0, 0.3], [0.2, -1.5]]), B=np.array([[0.2, 0.0], [0.1, -0.3]]), mu=(1.0, 0.5)),
                     one),
        CorpusSystem("additive-unstable", "additive unstable", D(np.diag([0.3, -2.0]), mu=(1.0, 0.0)), one),
        CorpusSystem("additive-unstable-delay", "additive unstable",
                     D(np.zeros((2, 2)), B=np.diag([0.5, -1.0]), mu=(1.0, 1.0)), one),
        CorpusSystem("mult-bounded", "multiplicative bounded",
                     D(np.diag([-1.0, -2.0]), sigma=[[0.5, 0.0], [0.0, 0.0]]), one),
        CorpusSystem("mult-bounded-coupled", "multiplicative bounded",
                     D(np.array([[-2.0, 0.5], [0.3, -1.5]]), sigma=[[0.4, 0.2], [0.1, 0.5]]), one),
        CorpusSystem("mult-unbounded-beta", "multiplicative unbounded", scalar_family(-1.0, 1.5), one),
        CorpusSystem("mult-unbounded-alpha", "multiplicative unbounded",
                     D(np.diag([0.2, -1.0]), mu=(1.0, 0.0), sigma=[[0.3, 0.0], [0.0, 0.2]]), one),
        CorpusSystem("delay-noise-bounded", "delayed-noise bounded",
                     D(np.diag([-1.0, -1.5]), eta=[[0.5, 0.0], [0.0, 0.4]]), one),
        CorpusSystem("delay-noise-bounded-mixed", "delayed-noise bounded",
                     D(np.diag([-2.0, -2.0]), B=np.array([[0.5, 0.0], [0.0, 0.3]]),
                       sigma=[[0.3, 0.0], [0.0, 0.2]], eta=[[0.3, 0.1], [0.0, 0.3]]), one),
        CorpusSystem("delay-noise-unbounded", "delayed-noise unbounded",
                     D(np.diag([-0.5, -2.0]), mu=(1.0, 0.0), eta=[[1.3, 0.0], [0.0, 0.0]]), one),
        CorpusSystem("general-noise-bounded", "multiplicative bounded", _general_noise(), one),
    )


SOUNDNESS = _soundness()


def _close(value, target, tol):
    err = abs(value - target)
    return bool(err <= tol), f"value={value:.10g} target={target:.10g} err={err:.2e} tol={tol:.0e}"


def _c_fundamental():
    s = SddeSystem.build(np.diag([-1.0, -2.0]))
    g = dde.fundamental_matrix(s, 1 / 64, 1.0)
    err = float(np.max(np.abs(g.values[-1] - np.diag(np.exp([-1.0, -2.0])))))
    return err < 1e-8, f"max err {err:.2e}"


def _c_steps():
    s = SddeSystem.build(np.zeros((2, 2)), B=np.diag([-1.0, -1.0]))
    g = dde.fundamental_matrix(s, 1 / 64, 2.0)
    x = dde.solve_dde(s, InitialFunction.constant([1.0, 1.0]), 1 / 64, 2.0)
    ok1, d1 = _close(float(g.at(1.5)[0, 0]), 0.5, 1e-8)
    ok2, d2 = _close(float(x.values[96, 0]), -0.375, 1e-8)
    return ok1 and ok2, f"X(1.5): {d1}; x(1.5): {d2}"


def _c_envelope():
    s = SddeSystem.build(np.diag([-1.0, -2.0]))
    g = dde.fundamental_matrix(s, 1 / 64, 20.0)
    return _close(dde.fit_envelope(g, -1.0), 2.0, 1e-12)


def _c_lambert_root():
    s = SddeSystem.build(np.zeros((2, 2)), B=np.diag([-1.0, -1.0]))
    lam = complex(lambertw(-1.0, 0))
    v = abs(spectral.eval_h(s, lam))
    return bool(v < 1e-10), f"|h(W0(-1))| = {v:.2e}"


def _c_lambert_alpha0():
    s = SddeSystem.build(np.zeros((2, 2)), B=np.diag([-1.0, -1.0]))
    return _close(spectral.spectral_summary(s).alpha0, lambert_alpha0(), 1e-6)


def _c_assumption_h():
    s = SddeSystem.decoupled(np.diag([-1.0, -2.0]), sigma=[[1.0, 0.0], [0.0, 0.0]])
    rep = spectral.check_assumption_h(s)
    ok = rep.holds and abs(rep.witness[0] + 2.0) < 1e-9
    return ok, f"holds={rep.holds} witness={rep.witness}"


def _c_laplace_plain():
    s = SddeSystem.build(np.diag([-1.0, -2.0]))
    v = laplace.product_transform_freq(s, laplace.ProductKind.plain(0, 0, 0), 0.0, -1.0, 1e-10).value
    return _close(v.real, 0.5, 1e-7)


def _c_laplace_shift():
    s = SddeSystem.build(np.diag([-1.0, -2.0]))
    v = laplace.product_transform_freq(s, laplace.ProductKind.delayed(0, 0, 0), 0.0, -1.0, 1e-10).value
    g = dde.fundamental_matrix(s, 1 / 128, 40.0)
    w = laplace.product_transform_time(g, laplace.ProductKind.delayed(0, 0, 0), 0.0, s, -1.0).value
    ok1, d1 = _close(v.real, math.exp(-1) / 2, 1e-7)
    ok2, d2 = _close(w.real, math.exp(-1) / 2, 1e-6)
    return ok1 and ok2, f"freq {d1}; time {d2}"


def _c_dual_path():
    s = SddeSystem.build(np.array([[-1.0, 0.5], [0.2, -2.0]]), B=np.array([[0.3, -0.4], [0.1, 0.5]]))
    a0 = spectral.spectral_summary(s).alpha0
    rng = np.random.default_rng(3)
    lams = rng.uniform(-0.5 * abs(a0), 2.0, 6) + 1j * rng.uniform(-10, 10, 6)
    tp = laplace.TimeProvider(s, None, alpha0=a0, dt=1 / 128, t_max=80.0, strict=False)
    K2, L2, e2 = tp.evaluate(lams)
    worst = 0.0
    for i, lam in enumerate(lams):
        K1, L1, eK, eL = laplace.product_tensors_freq(s, lam, a0)
        tol = np.maximum(1e-6, 3 * (np.maximum(eK, eL) + e2[i]))
        worst = max(worst, float(np.max(np.maximum(np.abs(K1 - K2[i]), np.abs(L1 - L2[i])) / tol)))
    return worst <= 1.0, f"max diff / tol = {worst:.3f}"


def _c_H_closed():
    s = scalar_family(-1.0, 1.0, mu1=0.0, inert=-2.0)
    tp = charfn.default_provider(s, -1.0, -1.75)
    ev = charfn.eval_charfn(s, -0.5 + 0.3j, tp)
    target = 1 - 1 / (-0.5 + 0.3j + 2)
    ok1, d1 = _close(abs(ev.H_val - target), 0.0, 1e-6)
    h = charfn.eval_H_direct(s, np.array([-1.0 + 0j]), tp)[0]
    ok2, d2 = _close(abs(h), 0.0, 1e-6)
    return ok1 and ok2, f"H(-0.5+0.3i) {d1}; H(-1) {d2}"


def _c_beta0(a, sig):
    def run():
        ms = charfn.compute_beta0(scalar_family(a, sig))
        return _close(ms.beta0, 2 * a + sig * sig, 1e-5)
    return run


def _c_genN():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(3):
        A = np.diag(rng.uniform(-2.5, -1.0, 2)) + rng.uniform(-0.3, 0.3, (2, 2))
        B = rng.uniform(-0.3, 0.3, (2, 2))
        s = SddeSystem.decoupled(A, B=B, sigma=rng.uniform(-0.5, 0.5, (2, 2)), eta=rng.uniform(-0.5, 0.5, (2, 2)))
        a0 = spectral.spectral_summary(s).alpha0
        tp = charfn.default_provider(s, a0, 2 * a0 + 0.25)
        lams = rng.uniform(0.5 * a0, 2.0, 10) + 1j * rng.uniform(-8, 8, 10)
        H1 = charfn.eval_H_direct(s, lams, tp)
        H2 = charfn.eval_charfn_genN(s, lams, tp)
        worst = max(worst, float(np.max(np.abs(H1 - H2) / np.abs(H1))))
    return worst < 1e-8, f"max relative diff {worst:.2e}"


def _c_stationary():
    out = []
    ok = True
    s = SddeSystem.decoupled(np.diag([-1.0, -2.0]), mu=(1.0, 1.0))
    M = charfn.stationary_moment(s, charfn.default_provider(s, -1.0, -1.75))
    e = float(np.max(np.abs(M - np.diag([0.5, 0.25]))))
    ok &= e < 1e-6
    out.append(f"OU pair err {e:.1e}")
    s = scalar_family(-1.0, 1.0)
    M = charfn.stationary_moment(s, charfn.default_provider(s, -1.0, -1.75))
    e = abs(M[0, 0] - 1.0)
    ok &= e < 1e-6
    out.append(f"multiplicative err {e:.1e}")
    return bool(ok), "; ".join(out)


def _c_volterra_ou():
    s = scalar_family(-1.0, 0.0)
    g = dde.fundamental_matrix(s, 1 / 64, 5.0)
    tr = moments.moment_volterra(s, InitialFunction.constant([1.0, 1.0]), g, 5.0)
    t = tr.times
    err = float(np.max(np.abs(tr.M[:, 0, 0] - (1 - np.exp(-2 * t)) / 2)))
    return err < 1e-4, f"max err {err:.2e} (M11(1)={tr.M[64, 0, 0]:.6f})"


def _c_volterra_mult():
    s = SddeSystem.build(np.array([[-1.0]]), sigma=np.array([[[1.0]]]))
    g = dde.fundamental_matrix(s, 1 / 64, 5.0)
    tr = moments.moment_volterra(s, InitialFunction.constant([1.0]), g, 5.0)
    t = tr.times
    err = float(np.max(np.abs(tr.M[:, 0, 0] - (np.exp(-t) - np.exp(-2 * t)))))
    return err < 1e-4, f"max err {err:.2e} (M11(1)={tr.M[64, 0, 0]:.6f})"


def _c_volterra_unstable():
    s = SddeSystem.decoupled(np.diag([1.0, -2.0]), mu=(1.0, 0.0))
    g = dde.fundamental_matrix(s, 1 / 64, 3.0)
    a = moments.moment_additive(s, g, 3.0)
    v = moments.moment_volterra(s, InitialFunction.zero(2), g, 3.0)
    t = a.times
    rel = float(np.max(np.abs(a.M[1:, 0, 0] - (np.exp(2 * t[1:]) - 1) / 2) / ((np.exp(2 * t[1:]) - 1) / 2)))
    agree = float(np.max(np.abs(a.M - v.M)))
    m22 = float(np.max(np.abs(a.M[:, 1, 1])))
    return rel < 1e-4 and agree < 1e-8 and m22 == 0.0, f"rel err {rel:.2e}; additive vs Volterra {agree:.1e}"


def _c_growth():
    s = SddeSystem.build(np.array([[-1.0]]), sigma=np.array([[[1.5]]]))
    g = dde.fundamental_matrix(s, 1 / 64, 40.0)
    tr = moments.moment_volterra(s, InitialFunction.constant([1.0]), g, 40.0)
    return _close(moments.growth_exponent(tr.M[:, 0, 0], tr.times, (20.0, 40.0)), 0.25, 0.02)


def _c_mc_ou():
    s = SddeSystem.build(np.array([[-1.0]]), mu=np.array([[1.0]]))
    e = mc.simulate_ensemble(s, InitialFunction.zero(1), mc.EnsembleSpec(10000, 1 / 64, 5.0, 1, (5.0,)))
    z = abs(e.M_hat[0, 0, 0] - 0.5) / e.stderr_M[0, 0, 0]
    return bool(z < 3), f"M_hat={e.M_hat[0, 0, 0]:.4f} z={z:.2f}"


def _c_empirical():
    out, ok = [], True
    for sig, want in ((1.5, mc.UNBOUNDED), (1.0, mc.BOUNDED)):
        s = SddeSystem.build(np.array([[-1.0]]), sigma=np.array([[[sig]]]))
        g = dde.fundamental_matrix(s, 1 / 64, 40.0)
        tr = moments.moment_volterra(s, InitialFunction.constant([1.0]), g, 40.0)
        idx = np.arange(0, len(tr.times), 256)
        label, slope = mc.empirical_boundedness(tr.times[idx], tr.trace()[idx])
        ok &= label == want
        out.append(f"sigma={sig}: {label} ({slope:.3f})")
    label, _ = mc.empirical_boundedness(np.arange(6) * 4.0, np.zeros(6))
    ok &= label == mc.BOUNDED
    out.append(f"zero noise: {label}")
    return bool(ok), "; ".join(out)


def _c_verdict_additive():
    v = verdict.decide(SddeSystem.decoupled(np.diag([-1.0, -2.0]), mu=(1.0, 1.0)))
    ok = v.conclusion == "bounded" and v.rule == "Thm-bou" and abs(v.evidence["alpha0"] + 1) < 1e-9
    return ok, f"{v.conclusion} via {v.rule}"


def _c_verdict_unbounded():
    v = verdict.decide(scalar_family(-1.0, 1.5))
    ok = v.conclusion == "unbounded" and v.rule == "Thm-bound-ii" and abs(v.evidence["beta0"] - 0.25) < 1e-5
    return ok, f"{v.conclusion} via {v.rule}, beta0={v.evidence.get('beta0')}"


def _c_bk():
    out, ok = [], True
    for sig, want in ((0.2, True), (1.0, False)):
        s = scalar_family(-1.0, sig)
        g = dde.fundamental_matrix(s, 1 / 64, 40.0)
        c = verdict.bk_search(s, g, -1.0)
        ok &= c.satisfied == want
        out.append(f"sigma={sig}: lhs={c.lhs:.3f} rhs={c.rhs:.4f} K={c.K_bar:.3f} satisfied={c.satisfied}")
    s = SddeSystem.decoupled(np.diag([-1.0, -2.0]), mu=(1.0, 0.0))
    c = verdict.bk_search(s, dde.fundamental_matrix(s, 1 / 64, 40.0), -1.0)
    ok &= c.satisfied and c.lhs == 0.0
    return bool(ok), "; ".join(out)


CHECKS = (
    ("dde: X(1) = diag(e^-1, e^-2)", _c_fundamental),
    ("dde: pure delay values at t=1.5", _c_steps),
    ("dde: envelope constant 2", _c_envelope),
    ("spectral: h vanishes at W0(-1)", _c_lambert_root),
    ("spectral: alpha0 matches Lambert W", _c_lambert_alpha0),
    ("spectral: deterministic mode at -2", _c_assumption_h),
    ("laplace: transform of X11^2 at 0", _c_laplace_plain),
    ("laplace: shifted product at 0", _c_laplace_shift),
    ("laplace: frequency vs time route", _c_dual_path),
    ("charfn: H = 1 - 1/(l+2)", _c_H_closed),
    ("charfn: beta0 for (-1, 1)", _c_beta0(-1.0, 1.0)),
    ("charfn: beta0 for (-1, 1.5)", _c_beta0(-1.0, 1.5)),
    ("charfn: beta0 for (-2, 1)", _c_beta0(-2.0, 1.0)),
    ("charfn: general-n form matches 2-D", _c_genN),
    ("charfn: stationary moments", _c_stationary),
    ("moments: OU variance", _c_volterra_ou),
    ("moments: multiplicative scalar", _c_volterra_mult),
    ("moments: unstable additive growth", _c_volterra_unstable),
    ("moments: growth exponent 0.25", _c_growth),
    ("mc: OU stationary variance", _c_mc_ou),
    ("mc: empirical boundedness labels", _c_empirical),
    ("verdict: additive bounded", _c_verdict_additive),
    ("verdict: beta0 unbounded", _c_verdict_unbounded),
    ("verdict: envelope certificates", _c_bk),
)


def run_checks(checks=CHECKS, stream=None):
    """Run checks, print a table and return ``[(name, passed, detail)]``."""
    rows = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append((name, bool(ok), detail))
        if stream is not None:
            print(f"{'PASS' if ok else 'FAIL'}  {name:<40s} {detail}", file=stream, flush=True)
    return rows
