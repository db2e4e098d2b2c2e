from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drift_homog.resolvent import KernelMembershipError, ResolventLab, RouteDisagreement
from drift_homog.scenarios import example3
from drift_homog.spectral import (ModeLattice, SpectralField, inner_h1_lambda, norm,
                                  norm_1lambda)

seeds = st.integers(0, 2**32 - 1)


def _c(lab, k, a=1.0):
    return SpectralField.cos(lab.lattice, k, a)


def test_solve_eigenfunction(lab3):
    g = _c(lab3, (1, 0, 0))
    for c in (0.0, 3.0, -50.0):
        assert norm(lab3.solve_resolvent(c, 1.0, g) - g / 2) < 1e-12


def test_solve_c0_and_large_c(lab3):
    g = _c(lab3, (0, 1, 0))
    r0 = lab3.solve_resolvent(0.0, 1.0, g)
    assert norm(r0 - g / 2) < 1e-12
    r100 = lab3.solve_resolvent(100.0, 1.0, g)
    assert norm(r100) < 0.35 * norm(r0)
    assert norm(r100 - lab3.finite_c_mode_formula(100.0, 1.0, g)) < 1e-10


def test_lambda_must_be_positive(lab3):
    with pytest.raises(ValueError):
        lab3.solve_resolvent(1.0, 0.0, _c(lab3, (1, 0, 0)))


def test_kernel_example3_small(lab3_small):
    kb = lab3_small.kernel_basis(1.0)
    assert kb.dim == 5
    lat = lab3_small.lattice
    on_axis = np.all(lat.modes[:, 1:] == 0, axis=1)
    assert np.max(np.abs(kb.vectors[~on_axis])) < 1e-12
    assert np.allclose(kb.gram(), np.eye(5), atol=1e-10)
    assert np.max(lab3_small.B_ext.matrix @ kb.vectors, initial=0) <= 1e-8 * kb.report.singular_values.max()


def test_kernel_zero_and_irrational(lab_zero, lab_irr):
    assert lab_zero.kernel_basis(1.0).dim == lab_zero.lattice.size
    kb = lab_irr.kernel_basis(1.0)
    assert kb.dim == 1 and not kb.report.ambiguous


def test_kernel_reorthonormalization_stable(lab3):
    kb = lab3.kernel_basis(0.5)
    W = kb.reorthonormalized()
    assert W.shape[1] == kb.dim
    assert np.allclose(W.conj().T @ W, np.eye(kb.dim), atol=1e-12)


def test_kernel_growth_with_K():
    dims = [ResolventLab(example3(), ModeLattice(3, K)).kernel_basis(1.0).dim for K in (2, 3)]
    assert dims[1] - dims[0] == 2


def test_projection_examples(lab3, rng):
    kb = lab3.kernel_basis(1.0)
    c1, c2 = _c(lab3, (1, 0, 0)), _c(lab3, (0, 1, 0))
    assert norm(lab3.project_1lambda(c1, kb) - c1) < 1e-12
    assert norm(lab3.project_1lambda(c2, kb)) < 1e-12
    f = SpectralField.random(lab3.lattice, rng)
    p = lab3.project_1lambda(f, kb)
    assert norm(lab3.project_1lambda(p, kb) - p) < 1e-12


def test_limit_resolvent_examples(lab3):
    c1, c2 = _c(lab3, (1, 0, 0)), _c(lab3, (0, 1, 0))
    for route in ("projection", "spectral"):
        assert norm(lab3.limit_resolvent(1.0, c1, route) - c1 / 2) < 1e-12
        assert norm(lab3.limit_resolvent(1.0, c2, route)) < 1e-12
        assert norm(lab3.limit_resolvent(1.0, c1 + c2, route) - c1 / 2) < 1e-12
    lab3.limit_resolvent(1.0, c1 + c2, cross_check=True)


def test_route_disagreement_raises(lab3, monkeypatch):
    md = lab3.mode_decomposition(2.0)
    monkeypatch.setitem(lab3._modes, 2.0, dataclasses.replace(md, theta=md.theta * 0.5))
    with pytest.raises(RouteDisagreement):
        lab3.limit_resolvent(2.0, _c(lab3, (0, 1, 0)), cross_check=True)


def test_mode_decomposition_structure(labc):
    md = labc.mode_decomposition(1.0)
    w = labc.lattice.k2 + 1.0
    G = md.theta.conj().T @ (w[:, None] * md.theta)
    assert np.allclose(G, np.eye(G.shape[0]), atol=1e-10)
    assert np.all(np.diff(np.abs(md.mu)) <= 1e-12)


def test_finite_c_formula_examples(lab3):
    c1, c2 = _c(lab3, (1, 0, 0)), _c(lab3, (0, 1, 0))
    assert norm(lab3.finite_c_mode_formula(17.0, 1.0, c1) - c1 / 2) < 1e-12
    d = lab3.finite_c_mode_formula(10.0, 1.0, c2) - lab3.solve_resolvent(10.0, 1.0, c2)
    assert norm_1lambda(d, 1.0) < 1e-8
    assert norm(lab3.finite_c_mode_formula(0.0, 1.0, c2) + SpectralField(lab3.lattice, lab3.gamma(1.0, c2))) < 1e-12


def test_verify_properties_examples(lab3):
    lat = lab3.lattice
    rep = lab3.verify_limit_properties(1.0, 2.0, _c(lab3, (1, 0, 0)))
    assert rep["pseudo_resolvent_defect"] < 1e-14
    g = (SpectralField.constant(lat) + _c(lab3, (1, 0, 0))) / 2
    rep = lab3.verify_limit_properties(1.0, 2.0, g)
    assert rep["markov_range"][0] == pytest.approx(0.25)
    assert rep["markov_range"][1] == pytest.approx(0.75)
    rep = lab3.verify_limit_properties(1.0, 2.0, _c(lab3, (0, 1, 0)))
    assert rep["kernel_check"] <= 1e-10
    with pytest.raises(ValueError):
        lab3.verify_limit_properties(1.0, 1.0, g)


def test_strong_continuity(lab3):
    lat = lab3.lattice
    rows = lab3.strong_continuity_curve(_c(lab3, (1, 0, 0)), [9.0, 999.0])
    assert rows[0]["dist_H"] == pytest.approx(0.1 * np.sqrt(0.5), abs=1e-12)
    assert rows[1]["dist_H"] == pytest.approx(7.07e-4, rel=1e-3)
    rows = lab3.strong_continuity_curve(SpectralField.constant(lat), [1.0, 10.0])
    assert max(r["dist_H"] for r in rows) < 1e-14
    with pytest.raises(KernelMembershipError):
        lab3.strong_continuity_curve(_c(lab3, (0, 1, 0)), [1.0])


def test_convergence_curve(lab3):
    c1 = _c(lab3, (1, 0, 0))
    rows = lab3.convergence_curve(c1, 1.0, [0.0, 10.0, 100.0])["rows"]
    assert max(r["dist_H"] for r in rows) < 1e-12
    g = _c(lab3, (0, 1, 0))
    out = lab3.convergence_curve(g, 1.0, [0.0, 10.0])
    direct = norm(lab3.solve_resolvent(0.0, 1.0, g) - lab3.limit_resolvent(1.0, g))
    assert out["rows"][0]["dist_H"] == pytest.approx(direct, rel=1e-14)


def test_minimizer(lab3, rng):
    assert lab3.minimizer_check(1.0, _c(lab3, (1, 0, 0))) < 1e-14
    assert lab3.minimizer_check(1.0, _c(lab3, (0, 1, 0))) < 1e-10
    small = ResolventLab(example3(), ModeLattice(3, 3))
    assert small.minimizer_check(1.0, SpectralField.random(small.lattice, rng)) < 1e-10


@settings(max_examples=10, deadline=None)
@given(seeds, st.sampled_from([0.5, 1.0, 2.0]))
def test_route_agreement_property(labc, seed, lam):
    g = SpectralField.random(labc.lattice, np.random.default_rng(seed))
    p = labc.limit_resolvent(lam, g, "projection")
    s = labc.limit_resolvent(lam, g, "spectral")
    assert norm_1lambda(p - s, 1.0) <= 1e-8


@settings(max_examples=10, deadline=None)
@given(seeds, st.sampled_from([0.0, 1.0, -1.0, 10.0, -10.0, 100.0, -100.0]))
def test_mode_formula_property(lab3, seed, c):
    g = SpectralField.random(lab3.lattice, np.random.default_rng(seed))
    d = lab3.finite_c_mode_formula(c, 1.0, g) - lab3.solve_resolvent(c, 1.0, g)
    assert norm_1lambda(d, 1.0) <= 1e-8


@settings(max_examples=10, deadline=None)
@given(seeds, st.sampled_from([0.5, 1.0, 2.0]))
def test_contraction_and_range_property(labc, seed, lam):
    g = SpectralField.random(labc.lattice, np.random.default_rng(seed))
    r = labc.limit_resolvent(lam, g)
    assert lam * norm(r) <= norm(g) + 1e-12
    assert labc.kernel_defect(r) <= 1e-10


def test_symmetry_in_c(lab3):
    g = _c(lab3, (0, 1, 0)) + _c(lab3, (1, 1, 0))
    gaps = [norm(lab3.solve_resolvent(c, 1.0, g) - lab3.solve_resolvent(-c, 1.0, g))
            for c in (1.0, 10.0, 100.0, 1000.0)]
    assert gaps[-1] < gaps[0]
    assert gaps[-1] < 1e-2


def test_range_of_B_conjunction(lab3):
    # g in the range of B: R^(c) g tends to R* g, and R* g vanishes
    f = _c(lab3, (0, 1, 1))
    g = lab3.B.apply(f)
    assert norm(lab3.limit_resolvent(1.0, g)) < 1e-12
    d = [norm(lab3.solve_resolvent(c, 1.0, g)) for c in (1.0, 10.0, 100.0)]
    assert d[0] > d[1] > d[2]


def test_h1_lambda_geometry(lab3, rng):
    g = SpectralField.random(lab3.lattice, rng)
    gam = SpectralField(lab3.lattice, lab3.gamma(1.0, g))
    p = -1 * lab3.limit_resolvent(1.0, g)
    kb = lab3.kernel_basis(1.0)
    for v in kb.fields[:3]:
        assert abs(inner_h1_lambda(gam - p, v, 1.0)) < 1e-12
