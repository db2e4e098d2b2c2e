from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drift_homog.spectral import (AliasingError, GridField, LatticeMismatch, ModeLattice,
                                  SpectralField, eval_on_grid, field_from_grid, inner,
                                  inner_h1_lambda, multiply, norm, sobolev_norm,
                                  truncation_loss)

seeds = st.integers(0, 2**32 - 1)


def test_lattice_ordering_and_negation():
    lat = ModeLattice(2, 3)
    assert lat.size == 49
    m = lat.modes
    assert np.array_equal(m[lat.neg], -m)
    assert tuple(m[lat.zero]) == (0, 0)
    assert lat.index((1, -2)) == lat.index((1, -2))
    assert np.array_equal(ModeLattice(2, 3).modes, m)


def test_eval_cos_on_grid():
    lat = ModeLattice(1, 2)
    g = eval_on_grid(SpectralField.cos(lat, (1,)), 8)
    assert np.allclose(g.values, np.cos(2 * np.pi * np.arange(8) / 8), atol=1e-14)


def test_eval_constant():
    lat = ModeLattice(2, 2)
    g = eval_on_grid(SpectralField.constant(lat), 5)
    assert np.allclose(g.values, 1.0)


def test_aliasing_rejected():
    with pytest.raises(AliasingError):
        eval_on_grid(SpectralField.zeros(ModeLattice(2, 4)), 8)


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(1, 3))
def test_round_trip(seed, d):
    lat = ModeLattice(d, 4 if d < 3 else 3)
    f = SpectralField.random(lat, np.random.default_rng(seed), decay=0.0)
    back = field_from_grid(eval_on_grid(f, lat.side), lat)
    assert np.max(np.abs(back.coeffs - f.coeffs)) <= 1e-12


def test_from_grid_basis_function():
    lat = ModeLattice(2, 4)
    x = 2 * np.pi * np.arange(16) / 16
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    f = field_from_grid(GridField(np.cos(X2)), lat)
    ref = SpectralField.cos(lat, (0, 1))
    assert np.max(np.abs(f.coeffs - ref.coeffs)) <= 1e-12


def test_from_grid_bessel_zero_mode():
    lat = ModeLattice(1, 8)
    x = 2 * np.pi * np.arange(64) / 64
    f = field_from_grid(GridField(np.cos(np.cos(x))), lat)
    assert abs(f.coeff((0,)) - 0.7651976865579666) <= 1e-12


def test_from_grid_constant_and_complex_rejected():
    lat = ModeLattice(2, 2)
    f = field_from_grid(GridField(np.full((7, 7), 3.0)), lat)
    assert abs(f.coeff((0, 0)) - 3.0) < 1e-14
    assert norm(f - 3.0) < 1e-14
    with pytest.raises(ValueError):
        field_from_grid(GridField(np.full((7, 7), 1j)), lat)


def test_inner_examples():
    lat = ModeLattice(2, 2)
    c, s, one = SpectralField.cos(lat, (1, 0)), SpectralField.sin(lat, (1, 0)), SpectralField.constant(lat)
    assert inner(c, c) == pytest.approx(0.5, abs=1e-15)
    assert abs(inner(c, s)) < 1e-15
    assert inner(one, one) == pytest.approx(1.0)
    with pytest.raises(LatticeMismatch):
        inner(c, SpectralField.cos(ModeLattice(2, 3), (1, 0)))


def test_inner_h1_lambda_examples():
    lat = ModeLattice(2, 2)
    c1, c2, one = SpectralField.cos(lat, (1, 0)), SpectralField.cos(lat, (0, 1)), SpectralField.constant(lat)
    assert inner_h1_lambda(c1, c1, 1.0) == pytest.approx(1.0)
    assert inner_h1_lambda(one, one, 2.5) == pytest.approx(2.5)
    assert abs(inner_h1_lambda(c1, c2, 1.0)) < 1e-15
    with pytest.raises(ValueError):
        inner_h1_lambda(c1, c1, 0.0)


def test_sobolev_examples():
    lat = ModeLattice(1, 3)
    assert sobolev_norm(SpectralField.cos(lat, (1,)), 1) == pytest.approx(np.sqrt(0.5))
    assert sobolev_norm(SpectralField.constant(lat), 1) == 0.0
    assert sobolev_norm(SpectralField.cos(lat, (2,)), 2) == pytest.approx(np.sqrt(8.0))


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(1, 3), st.floats(0.01, 50.0))
def test_parseval_and_norm_properties(seed, d, lam):
    rng = np.random.default_rng(seed)
    lat = ModeLattice(d, 4 if d < 3 else 3)
    f, h = SpectralField.random(lat, rng), SpectralField.random(lat, rng)
    res = lat.side + 1
    quad = np.mean(eval_on_grid(f, res).values * eval_on_grid(h, res).values)
    assert abs(inner(f, h) - quad) <= 1e-10
    assert inner_h1_lambda(f, f, lam) >= lam * inner(f, f) - 1e-12
    m = f.mean()
    assert norm(f) ** 2 == pytest.approx(norm(f - m) ** 2 + m ** 2, rel=1e-12, abs=1e-14)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_operations_preserve_hermitian_symmetry(seed):
    rng = np.random.default_rng(seed)
    lat = ModeLattice(2, 3)
    f, h = SpectralField.random(lat, rng), SpectralField.random(lat, rng)
    for out in (f + h, f - h, 2.5 * f, -f, f / 3, f + 1.0, multiply(f, h)):
        c = out.coeffs
        assert np.max(np.abs(c[lat.neg] - np.conj(c))) == 0.0
        assert out.coeffs[lat.zero].imag == 0.0


def test_non_hermitian_rejected():
    lat = ModeLattice(1, 1)
    with pytest.raises(ValueError):
        SpectralField(lat, np.array([0, 0, 1.0 + 0j]))


def test_multiply_matches_pointwise():
    lat = ModeLattice(2, 4)
    c1, c2 = SpectralField.cos(lat, (1, 0)), SpectralField.cos(lat, (0, 1))
    p = multiply(c1, c2)
    # cos a cos b = (cos(a-b) + cos(a+b)) / 2
    ref = SpectralField.cos(lat, (1, -1), 0.5) + SpectralField.cos(lat, (1, 1), 0.5)
    assert norm(p - ref) < 1e-14


def test_truncation_loss():
    lat = ModeLattice(1, 2)
    x = 2 * np.pi * np.arange(32) / 32
    assert truncation_loss(GridField(np.cos(x)), lat) < 1e-28
    assert truncation_loss(GridField(np.cos(3 * x)), lat) == pytest.approx(1.0)


def test_json_and_csv(tmp_path):
    lat = ModeLattice(2, 2)
    f = SpectralField.cos(lat, (1, 2), 0.3) + SpectralField.sin(lat, (0, 1))
    text = f.to_json()
    data = json.loads(text)
    assert data["d"] == 2 and data["K"] == 2
    g = SpectralField.from_json(text)
    assert np.array_equal(g.coeffs, f.coeffs)
    path = tmp_path / "grid.csv"
    eval_on_grid(f, 5).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x1,x2,value" and len(lines) == 26
