import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import rk4_excess

from coagfuse.core import C0, Particle, ParticleSystem
from coagfuse.flow import (ADAPTIVE, CLOSED_FORM, FlowError, FlowStepSpec, flow_particle,
                           flow_system, relax_adaptive, relax_closed_form, relax_excess)
from coagfuse.kernels import FusionKernel, FusionKernelParams, TruncationParams

LINEAR = FusionKernelParams(1.0, 0.0, 0.0)
AREA = FusionKernelParams(1.0, 1.0, 0.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        FlowStepSpec(0.0, 1.0)
    with pytest.raises(ValueError):
        FlowStepSpec(1.0, -1.0)
    with pytest.raises(ValueError):
        FlowStepSpec(1.0, 1.0, method="euler")
    with pytest.raises(ValueError):
        FlowStepSpec(1.0, 1.0, rel_tol=0.0)


def test_linear_example():
    p = Particle(1.0, 10.0 - C0)
    out = flow_particle(p, LINEAR, FlowStepSpec(1.0, 1.0))
    assert out.a == pytest.approx(C0 + (10.0 - C0) * math.exp(-1.0), rel=1e-14)
    assert out.a == pytest.approx(6.73571, abs=1e-5)
    assert out.v == p.v


@pytest.mark.parametrize("method", [CLOSED_FORM, ADAPTIVE])
def test_sphere_is_fixed_point(method):
    p = Particle(3.0, 0.0)
    params = AREA if method == CLOSED_FORM else FusionKernelParams(1.0, 0.5, 0.0)
    assert flow_particle(p, params, FlowStepSpec(1e-3, 10.0, method)).e == 0.0


@pytest.mark.parametrize("sigma", [0.0, 0.7])
def test_mu0_closed_form_matches_exponential(sigma):
    params = FusionKernelParams(2.0, 0.0, sigma)
    rng = np.random.default_rng(0)
    for _ in range(200):
        v, e, lam, dt = rng.lognormal(), rng.exponential(5.0), rng.uniform(0.1, 10), rng.uniform(0, 3)
        exact = e * math.exp(-2.0 * v ** sigma * dt / lam)
        got = relax_excess(e, v, params, FlowStepSpec(lam, dt))
        if exact >= 1e-14 * max(1.0, C0 * v ** (2 / 3)):
            assert got == pytest.approx(exact, rel=1e-10)
        # the adaptive scheme is exact on this linear problem too
        ada = relax_excess(e, v, params, FlowStepSpec(lam, dt, ADAPTIVE))
        if exact >= 1e-14 * max(1.0, C0 * v ** (2 / 3)):
            assert ada == pytest.approx(exact, rel=1e-10)


@pytest.mark.parametrize("e0,v,lam,dt", [(5.0, 1.0, 1.0, 0.2), (40.0, 8.0, 10.0, 0.5),
                                          (0.3, 0.5, 2.0, 1.0)])
def test_mu1_adaptive_vs_fixed_step_reference(e0, v, lam, dt):
    r = lambda a: a  # noqa: E731  R=1, mu=1, sigma=0
    ref = rk4_excess(e0, v, r, lam, dt, 2 ** 20)
    coarse = rk4_excess(e0, v, r, lam, dt, 2 ** 18)
    # self-convergence of the reference itself
    assert abs(ref - coarse) <= 1e-12 * ref
    got = relax_adaptive(e0, v, FusionKernel(AREA), lam, dt)
    assert got == pytest.approx(ref, rel=1e-8)
    # and the Bernoulli closed form agrees with both
    assert relax_closed_form(e0, v, AREA, lam, dt) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("mu", [-1.0, -0.5, 0.5, 2.0])
def test_adaptive_general_mu_vs_reference(mu):
    params = FusionKernelParams(1.5, mu, 0.3)
    v, e0, lam, dt = 2.0, 3.0, 1.0, 0.3
    ref = rk4_excess(e0, v, lambda a: 1.5 * a ** mu * v ** 0.3, lam, dt, 2 ** 16)
    got = relax_adaptive(e0, v, FusionKernel(params), lam, dt)
    assert got == pytest.approx(ref, rel=1e-8)


def test_stiff_fast_fusion_decays_to_zero():
    es = []
    for k in range(1, 7):
        es.append(relax_excess(5.0, 1.0, LINEAR, FlowStepSpec(10.0 ** -k, 0.5)))
    assert all(b <= a for a, b in zip(es, es[1:]))
    assert es[-1] < 1e-12
    # adaptive on a stiff mu=2 problem stays monotone and ends on the line
    e = relax_adaptive(5.0, 1.0, FusionKernel(FusionKernelParams(1.0, 2.0, 0.0)), 1e-6, 1.0)
    assert e == 0.0


def test_lambda_halving_doubles_exponent():
    v, e, dt = 2.0, 3.0, 0.4
    params = FusionKernelParams(1.0, 0.0, 0.5)
    k = v ** 0.5 * dt
    e1 = relax_excess(e, v, params, FlowStepSpec(1.0, dt))
    e2 = relax_excess(e, v, params, FlowStepSpec(0.5, dt))
    assert e1 == pytest.approx(e * math.exp(-k), rel=1e-14)
    assert e2 == pytest.approx(e * math.exp(-2 * k), rel=1e-14)


@given(st.floats(1e-3, 1e3), st.floats(0.0, 1e3), st.floats(1e-3, 1e3), st.floats(0.0, 5.0),
       st.sampled_from([-1.0, -0.3, 0.0, 0.5, 1.0, 1.7]))
def test_flow_monotone_and_nonnegative(v, e, lam, dt, mu):
    params = FusionKernelParams(1.0, mu, 0.0)
    out = flow_particle(Particle(v, e), params, FlowStepSpec(lam, dt, rel_tol=1e-8))
    assert 0.0 <= out.e <= e
    assert out.v == v


@pytest.mark.parametrize("params,method", [(AREA, CLOSED_FORM),
                                           (FusionKernelParams(1.0, 0.5, 0.2), ADAPTIVE)])
def test_semigroup(params, method):
    e0, v, lam = 4.0, 1.5, 0.7
    full = relax_excess(e0, v, params, FlowStepSpec(lam, 0.9, method))
    half = relax_excess(e0, v, params, FlowStepSpec(lam, 0.4, method))
    two = relax_excess(half, v, params, FlowStepSpec(lam, 0.5, method))
    assert two == pytest.approx(full, rel=1e-8)


def test_truncated_kernel_uses_adaptive():
    kern = FusionKernel(AREA, TruncationParams(delta=1e-2))
    with pytest.raises(ValueError):
        relax_excess(1.0, 1.0, kern, FlowStepSpec(1.0, 1.0, CLOSED_FORM))
    e = relax_excess(1.0, 1.0, kern, FlowStepSpec(1.0, 1.0))
    assert 0.0 < e < 1.0


def test_flow_system_conserves_counts_and_volume():
    rng = np.random.default_rng(5)
    s = ParticleSystem(rng.lognormal(size=300), rng.exponential(2.0, 300), 1 / 300, time=0.5)
    out = flow_system(s, AREA, FlowStepSpec(0.3, 0.2))
    assert len(out) == len(s)
    assert out.weight == s.weight
    np.testing.assert_array_equal(out.v, s.v)
    assert np.all(out.e <= s.e)
    assert out.time == pytest.approx(0.7)
    assert out.a.sum() <= s.a.sum()
    same = flow_system(s, AREA, FlowStepSpec(0.3, 0.0))
    np.testing.assert_array_equal(same.e, s.e)


def test_flow_system_is_independent_of_order():
    rng = np.random.default_rng(6)
    v, e = rng.lognormal(size=50), rng.exponential(2.0, 50)
    params = FusionKernelParams(1.0, 0.5, 0.0)
    s = ParticleSystem(v, e, 0.02)
    perm = rng.permutation(50)
    a = flow_system(s, params, FlowStepSpec(1.0, 0.3)).e
    b = flow_system(ParticleSystem(v[perm], e[perm], 0.02), params, FlowStepSpec(1.0, 0.3)).e
    np.testing.assert_array_equal(a[perm], b)


def test_flow_error_carries_context():
    class Exploding(FusionKernel):
        def __call__(self, a, v):
            return math.nan

        def da(self, a, v):
            return math.nan

    with pytest.raises(FlowError, match="particle"):
        flow_particle(Particle(1.0, 1.0), Exploding(AREA), FlowStepSpec(1.0, 1.0, ADAPTIVE))
