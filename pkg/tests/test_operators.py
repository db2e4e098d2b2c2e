from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drift_homog.operators import (DivergenceError, TrigVectorField, antisymmetry_defect,
                                   apply_Ac, assemble_A, assemble_B, validate_divergence_free)
from drift_homog.scenarios import cellular2d, example3, zero_field
from drift_homog.spectral import LatticeMismatch, ModeLattice, SpectralField, inner, norm


def test_assemble_A_entries():
    lat = ModeLattice(3, 1)
    A = assemble_A(lat)
    d = np.diag(A.matrix)
    assert d[lat.index((1, 0, 0))] == -1
    assert d[lat.index((1, 1, 1))] == -3
    assert d[lat.index((0, 0, 0))] == 0
    assert np.count_nonzero(A.matrix - np.diag(d)) == 0


def test_B_example3_on_cos_x2():
    lat = ModeLattice(3, 3)
    B = assemble_B(example3(), lat)
    out = B.apply(SpectralField.cos(lat, (0, 1, 0)))
    ref = SpectralField.cos(lat, (1, -1, 0), -0.5) + SpectralField.cos(lat, (1, 1, 0), 0.5)
    assert norm(out - ref) < 1e-14
    out = B.apply(SpectralField.cos(lat, (1, 0, 0)))
    assert np.max(np.abs(out.coeffs)) == 0


def test_B_zero_field():
    lat = ModeLattice(2, 2)
    assert np.count_nonzero(assemble_B(zero_field(2), lat).matrix) == 0


def test_divergence_reports():
    assert validate_divergence_free(example3()).max_defect == 0
    assert validate_divergence_free(cellular2d()).passed
    bad = TrigVectorField(2, {(1, 0): (-0.5j, 0), (-1, 0): (0.5j, 0)})   # (sin x1, 0)
    rep = validate_divergence_free(bad)
    assert not rep.passed and rep.max_defect == pytest.approx(0.5)
    with pytest.raises(DivergenceError):
        assemble_B(bad, ModeLattice(2, 2))


def test_dimension_mismatch():
    with pytest.raises(LatticeMismatch):
        assemble_B(example3(), ModeLattice(2, 2))


def test_antisymmetry_defects():
    assert antisymmetry_defect(assemble_B(example3(), ModeLattice(3, 3))) <= 1e-14
    assert antisymmetry_defect(assemble_B(zero_field(2), ModeLattice(2, 2))) == 0
    assert antisymmetry_defect(assemble_B(cellular2d(), ModeLattice(2, 8))) <= 1e-14
    with pytest.raises(ValueError):
        antisymmetry_defect(assemble_B(example3(), ModeLattice(3, 2), extended=True))


def test_apply_Ac_examples():
    lat = ModeLattice(3, 3)
    A, B = assemble_A(lat), assemble_B(example3(), lat)
    c1, c2 = SpectralField.cos(lat, (1, 0, 0)), SpectralField.cos(lat, (0, 1, 0))
    assert norm(apply_Ac(7.3, c1, A, B) + c1) < 1e-14
    assert norm(apply_Ac(0.0, c2, A, B) + c2) < 1e-14
    ref = -1 * c2 - SpectralField.cos(lat, (1, -1, 0)) + SpectralField.cos(lat, (1, 1, 0))
    assert norm(apply_Ac(2.0, c2, A, B) - ref) < 1e-14


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_galerkin_antisymmetry_and_dissipation(seed):
    rng = np.random.default_rng(seed)
    lat = ModeLattice(2, 4)
    B = assemble_B(cellular2d(), lat)
    A = assemble_A(lat)
    f, h = SpectralField.random(lat, rng), SpectralField.random(lat, rng)
    Bf, Bh = B.apply(f), B.apply(h)
    assert abs(inner(f, Bh) + inner(Bf, h)) <= 1e-12
    assert inner(f, A.apply(f)) <= 0


def test_A_zero_only_for_constants():
    lat = ModeLattice(2, 2)
    A = assemble_A(lat)
    one = SpectralField.constant(lat, 2.0)
    assert inner(one, A.apply(one)) == 0


def test_extended_restricts_to_galerkin():
    lat = ModeLattice(3, 2)
    ext = assemble_B(example3(), lat, extended=True)
    gal = assemble_B(example3(), lat)
    assert ext.target.K == 3
    assert np.array_equal(ext.restricted().matrix, gal.matrix)
