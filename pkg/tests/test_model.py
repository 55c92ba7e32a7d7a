import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sddestab.model import (
    AnalysisSettings, ConfigError, InitialFunction, NoiseClass, SddeSystem, classify_noise, dump_system,
    loads_system,
)


def doc(**kw):
    base = {"n": 2, "k": 2, "A": [[-1, 0], [0, -2]]}
    base.update(kw)
    return json.dumps(base)


def test_deterministic_document():
    system, phi, settings = loads_system(doc())
    assert classify_noise(system) == NoiseClass.DETERMINISTIC
    assert phi.kind == "constant" and settings == AnalysisSettings()


def test_additive_document():
    system, _, _ = loads_system(json.dumps({"n": 2, "k": 1, "A": [[-1, 0], [0, -2]], "mu": [[1], [1]]}))
    assert classify_noise(system) == NoiseClass.ADDITIVE


def test_cross_term_is_general():
    sigma = np.zeros((2, 2, 2))
    sigma[0, 1, 1] = 0.3  # sigma_1^{21}: noise on the wrong Wiener index
    system, _, _ = loads_system(doc(sigma=sigma.tolist()))
    assert classify_noise(system) == NoiseClass.GENERAL


def test_decoupled_and_three_dimensional():
    s = SddeSystem.decoupled(np.diag([-1.0, -2.0]), mu=(1.0, 0.5), sigma=[[0.2, 0.1], [0.0, 0.3]])
    assert classify_noise(s) == NoiseClass.DECOUPLED2D
    s3 = SddeSystem.build(-np.eye(3), mu=np.ones((3, 3)) * np.eye(3))
    assert classify_noise(s3) == NoiseClass.ADDITIVE
    s3 = SddeSystem.build(-np.eye(3), sigma=np.full((3, 3, 3), 0.1))
    assert classify_noise(s3) == NoiseClass.GENERAL


@pytest.mark.parametrize("bad", [
    doc(C=1),
    doc(analysis={"tmax": 3}),
    doc(A=[[1, 2, 3]]),
    doc(mu=[[1]]),
    '{"n": 2, "k": 2, "A": [[NaN, 0], [0, 1]]}',
    '{"n": 2, "k": 2, "A": [[Infinity, 0], [0, 1]]}',
    '{"n": 2, "A": [[1, 0], [0, 1]]}',
    doc(phi={"kind": "constant", "params": {"value": [1, 2, 3]}}),
    doc(phi={"kind": "spline", "params": {}}),
    "[1, 2]",
    "{not json",
])
def test_rejections(bad):
    with pytest.raises(ConfigError):
        loads_system(bad)


def test_delay_is_fixed():
    with pytest.raises(ConfigError):
        SddeSystem(np.eye(1), np.eye(1), np.zeros((1, 1)), np.zeros((1, 1, 1)), np.zeros((1, 1, 1)), delay=2.0)


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.data())
def test_round_trip_bit_exact(n, k, data):
    arr = lambda shape: np.array(data.draw(st.lists(finite, min_size=int(np.prod(shape)),  # noqa: E731
                                                    max_size=int(np.prod(shape))))).reshape(shape)
    s = SddeSystem.build(arr((n, n)), arr((n, n)), arr((n, k)), arr((n, n, k)), arr((n, n, k)))
    phi = InitialFunction.cosine_exponential(arr((n,)), arr((n,)), 0.5, 2.0)
    st_ = AnalysisSettings(t_max=12.0, seed=2**63 + 5)
    s2, phi2, st2 = loads_system(dump_system(s, phi, st_))
    for name in ("A", "B", "mu", "sigma", "eta"):
        assert np.array_equal(getattr(s, name), getattr(s2, name))
    assert phi2.to_dict() == phi.to_dict() and st2 == st_


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.data())
def test_classes_partition(n, k, data):
    pick = lambda shape: np.array(data.draw(st.lists(st.sampled_from([0.0, 0.0, 1.0]),  # noqa: E731
                                                     min_size=int(np.prod(shape)),
                                                     max_size=int(np.prod(shape))))).reshape(shape)
    s = SddeSystem.build(-np.eye(n), None, pick((n, k)), pick((n, n, k)), pick((n, n, k)))
    c = classify_noise(s)
    has_mu, has_m = bool(s.mu.any()), bool(s.sigma.any() or s.eta.any())
    assert (c == NoiseClass.DETERMINISTIC) == (not has_mu and not has_m)
    assert (c == NoiseClass.ADDITIVE) == (has_mu and not has_m)
    if c == NoiseClass.DECOUPLED2D:
        assert n == 2 and k == 2


def test_initial_functions():
    p = InitialFunction.polynomial([[1.0, 2.0], [0.0, 0.0, 3.0]])
    assert np.allclose(p(np.array([-0.5])), [[0.0, 0.75]])
    assert np.allclose(p.derivative(np.array([-0.5])), [[2.0, -3.0]])
    lam, c = complex(-0.3, 1.3), np.array([1 + 1j, 0.5])
    e = InitialFunction.eigen(lam, c)
    t = np.linspace(-1, 0, 7)
    assert np.allclose(e(t), np.real(np.exp(lam * t)[:, None] * c))
    assert InitialFunction.constant([1.0, -2.0]).sup_norm() == 3.0
