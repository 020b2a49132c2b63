import math

import numpy as np
import pytest

from coagfuse.core import C0
from coagfuse.flow import relax_closed_form
from coagfuse.kernels import (CoagKernel, CoagKernelParams, FusionKernelParams, Sphericity,
                              TruncationParams)
from coagfuse.sectional import (CoagOperator, Grid2D, GridState, SectionalOptions,
                                StabilityError, advect_step, anchored_log_edges, cfl_bound,
                                coag_step, geometric_centres, pivot_split, project_points,
                                run_sectional)

CONST = CoagKernelParams(0.5, 0.0, 0.0, relaxed=True)  # K == 1
BASE = CoagKernelParams(0.25, 0.25, 0.5, Sphericity(0.5))
LINEAR = FusionKernelParams(1.0, 0.0, 0.0)
AREA = FusionKernelParams(1.0, 1.0, 0.0)


def pow2_grid(ne=16, e_max=100.0):
    v_edges = 2.0 ** (np.arange(5) - 0.5)  # pivots 1, 2, 4, 8
    e_edges = np.concatenate(([0.0], np.geomspace(1e-3, e_max, ne)))
    return Grid2D(v_edges, e_edges)


def e_grid_with_pivot(target, ratio, below, above, nv_edges=(0.9, 1.1, 1.3)):
    """Grid with a single v column whose excess pivots include ``target``."""
    k = np.arange(-below, above + 1) - 0.5
    e_edges = np.concatenate(([0.0], target * ratio ** k))
    return Grid2D(np.array(nv_edges), e_edges)


def volume(state):
    return state.moment(0, 1) + state.exits.volume


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid2D(np.array([1.0, 2.0, 3.0]), np.array([0.1, 1.0, 2.0]))  # first e edge must be 0
    with pytest.raises(ValueError):
        Grid2D(np.array([1.0, 3.0, 2.0]), np.array([0.0, 1.0, 2.0]))
    g = Grid2D.build(nv=8, ne=4)
    assert g.shape == (8, 4)  # ne counts the zero-pivot bin
    assert g.e_piv[0] == 0.0
    assert g.v_piv[0] == pytest.approx(1.0, rel=1e-14)


def test_anchored_edges():
    edges = anchored_log_edges(2.0, 100.0, 10)
    assert geometric_centres(edges)[0] == pytest.approx(2.0, rel=1e-14)
    assert edges[-1] == 100.0


def test_pivot_split_conserves_first_moment():
    piv = np.array([1.0, 2.0, 4.0, 8.0])
    x = np.array([1.0, 1.5, 3.0, 7.9, 8.0, 9.0, 0.5])
    k, f, inside = pivot_split(piv, x)
    assert inside.tolist() == [True, True, True, True, True, False, False]
    rec = f * piv[k] + (1 - f) * piv[k + 1]
    np.testing.assert_allclose(rec[inside], x[inside], rtol=1e-15)


def test_projection_conserves_number_volume_area():
    rng = np.random.default_rng(0)
    g = Grid2D.build(nv=32, ne=16, v_anchor=0.5, v_max=100.0)
    v = rng.uniform(0.6, 50, 500)
    e = rng.exponential(5.0, 500) * (rng.random(500) < 0.7)
    st = project_points(g, v, e, 0.002)
    assert st.exits.number == 0.0
    assert st.moment(0, 0) == pytest.approx(1.0, rel=1e-12)
    assert st.moment(0, 1) == pytest.approx(0.002 * v.sum(), rel=1e-12)
    assert st.moment(1, 0) == pytest.approx(0.002 * (e + C0 * v ** (2 / 3)).sum(), rel=1e-12)


def test_two_cell_step_by_hand():
    g = pow2_grid()
    n = np.zeros(g.shape)
    n[0, 0], n[1, 0] = 1.0, 0.5
    out = coag_step(GridState(g, n), CONST, 0.1)
    cols = out.n.sum(axis=1)
    np.testing.assert_allclose(cols, [0.85, 0.5, 0.0375, 0.0], atol=1e-14)
    assert volume(out) == pytest.approx(2.0, rel=1e-14)
    assert out.moment(1, 0) == pytest.approx(GridState(g, n).moment(1, 0), rel=1e-12)
    assert out.time == pytest.approx(0.1)


def test_stability_refusal():
    g = pow2_grid()
    n = np.zeros(g.shape)
    n[0, 0], n[1, 0] = 1.0, 0.5
    op = CoagOperator(g, CONST)
    assert op.stability_bound(n.reshape(-1)) == pytest.approx(0.5 / 1.5)
    with pytest.raises(StabilityError) as err:
        coag_step(GridState(g, n), CONST, 0.5, op)
    assert err.value.bound == pytest.approx(1 / 3)


def test_symmetric_pair_tables():
    g = Grid2D.build(nv=12, ne=6)
    rng = np.random.default_rng(1)
    n = rng.random(g.shape)
    op = CoagOperator(g, BASE)
    flat = n.reshape(-1)
    # loss rate of each cell equals sum_j K_ij n_j from the full symmetric kernel matrix
    a = g.area_piv().reshape(-1)
    v = np.repeat(g.v_piv, g.shape[1])
    kmat = CoagKernel(BASE)(a[:, None], v[:, None], a[None, :], v[None, :])
    assert np.array_equal(kmat, kmat.T)
    np.testing.assert_allclose(op.loss_rates(flat), kmat @ flat, rtol=1e-12)


def test_coag_conserves_volume_and_area_with_exits():
    g = Grid2D.build(nv=16, ne=8, v_max=20.0, e_max=50.0)
    rng = np.random.default_rng(2)
    n = rng.random(g.shape) * 0.05
    st = GridState(g, n)
    area0 = st.moment(1, 0)
    op = CoagOperator(g, BASE)
    for _ in range(20):
        st = coag_step(st, BASE, 0.5 * op.stability_bound(st.n.reshape(-1)), op)
    assert st.exits.volume > 0.0
    assert volume(st) == pytest.approx(GridState(g, n).moment(0, 1), rel=1e-12)
    assert st.moment(1, 0) + st.exits.area == pytest.approx(area0, rel=1e-12)
    assert np.all(st.n >= 0.0)


def test_advection_identity_on_line():
    g = Grid2D.build(nv=8, ne=8)
    n = np.zeros(g.shape)
    n[:, 0] = 1.0
    out = advect_step(GridState(g, n), AREA, 0.01, 1.0 * cfl_bound(g, AREA, 0.01))
    np.testing.assert_array_equal(out.n, n)


def test_advection_keeps_columns_and_refuses_cfl():
    g = Grid2D.build(nv=8, ne=12)
    rng = np.random.default_rng(3)
    st = GridState(g, rng.random(g.shape))
    dt = cfl_bound(g, AREA, 1.0)
    out = advect_step(st, AREA, 1.0, dt)
    np.testing.assert_allclose(out.n.sum(axis=1), st.n.sum(axis=1), rtol=1e-14)
    assert out.moment(1, 0) <= st.moment(1, 0)
    with pytest.raises(StabilityError):
        advect_step(st, AREA, 1.0, 1.5 * dt)


def centre_of_mass_error(ratio, params, t_end=1.0, e0=4.0):
    g = e_grid_with_pivot(e0, ratio, below=int(math.log(1e4) / math.log(ratio)),
                          above=int(math.log(5) / math.log(ratio)) + 2)
    n = np.zeros(g.shape)
    n[0, int(np.argmin(np.abs(g.e_piv - e0)))] = 1.0
    st = GridState(g, n)
    steps = math.ceil(t_end / (0.5 * cfl_bound(g, params, 1.0)))
    for _ in range(steps):
        st = advect_step(st, params, 1.0, t_end / steps)
    com = float((st.n[0] * g.e_piv).sum() / st.n[0].sum())
    exact = relax_closed_form(e0, float(g.v_piv[0]), params, 1.0, t_end)
    return abs(com - exact) / exact


def test_advection_centre_of_mass_first_order():
    err = centre_of_mass_error(1.2, LINEAR)
    assert err < 0.05
    assert centre_of_mass_error(1.2 ** 0.5, LINEAR) < err


def test_advection_refinement_factor():
    errs = [centre_of_mass_error(1.2 ** (0.5 ** k), AREA) for k in range(3)]
    for coarse, fine in zip(errs, errs[1:]):
        assert coarse / fine >= 1.7


def test_constant_kernel_run_tracks_analytic():
    g = Grid2D.build(nv=64, ne=16, v_max=2000.0)
    init = project_points(g, [1.0], [0.0], [1.0])
    hist, recs = run_sectional(init, CONST, AREA, 1e9, 1.0, [0.5])
    for rec in recs:
        assert rec[(0.0, 0.0)] == pytest.approx(1.0 / (1.0 + rec.time / 2.0), rel=0.02)
    assert volume(hist[-1]) == pytest.approx(1.0, rel=1e-10)


def test_coagulation_off_matches_flow():
    g = e_grid_with_pivot(4.0, 1.05, below=190, above=20)
    n = np.zeros(g.shape)
    n[0, int(np.argmin(np.abs(g.e_piv - 4.0)))] = 1.0
    off = CoagKernel(BASE, TruncationParams(big_r=1e-12))
    hist, _ = run_sectional(GridState(g, n), off, LINEAR, 1.0, 1.0, [],
                            options=SectionalOptions(dt_max=0.05))
    st = hist[-1]
    com = float((st.n[0] * g.e_piv).sum() / st.n[0].sum())
    assert com == pytest.approx(4.0 * math.exp(-1.0), rel=0.02)
    assert st.n.sum() == pytest.approx(1.0, rel=1e-12)


def test_baseline_run_conservation_and_positivity():
    g = Grid2D.build(nv=24, ne=12)
    init = project_points(g, [1.0], [0.0], [1.0])
    hist, recs = run_sectional(init, BASE, AREA, 1.0, 1.0, [0.25, 0.5])
    for st in hist:
        assert np.all(st.n >= 0.0)
        assert abs(volume(st) - 1.0) <= 1e-8 * max(st.time, 1.0)
    m10 = [r[(1.0, 0.0)] for r in recs]
    assert all(b <= a + 1e-12 for a, b in zip(m10, m10[1:]))
