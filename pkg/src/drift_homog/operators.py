"""Galerkin assembly of the diffusion generator and the drift operator."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .spectral import LatticeMismatch, ModeLattice, SpectralField, symmetrize

DIV_TOL = 1e-12


class DivergenceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrigVectorField:
    """Vector field ``b(x) = sum_m amp(m) exp(i m.x)`` with ``amp(m) in C^d``.

    ``terms`` maps each drift mode to its amplitude vector. Real-valuedness
    requires ``amp(-m) = conj(amp(m))``, which is checked on construction.
    """

    d: int
    terms: dict
    name: str = "custom"
    flow_map: Callable | None = field(default=None, repr=False)
    flow_formula: str = ""

    def __post_init__(self):
        clean = {}
        for m, a in self.terms.items():
            m = tuple(int(v) for v in m)
            a = np.asarray(a, dtype=complex).reshape(-1)
            if len(m) != self.d or a.shape != (self.d,):
                raise ValueError(f"mode {m} / amplitude shape mismatch for d={self.d}")
            clean[m] = a
        for m, a in clean.items():
            partner = clean.get(tuple(-v for v in m))
            if partner is None or np.max(np.abs(partner - np.conj(a))) > 1e-14:
                raise ValueError(f"component amplitudes not Hermitian at mode {m}")
        object.__setattr__(self, "terms", clean)

    @property
    def modes(self) -> np.ndarray:
        if not self.terms:
            return np.zeros((0, self.d), dtype=int)
        return np.array(list(self.terms), dtype=int)

    @property
    def amplitudes(self) -> np.ndarray:
        if not self.terms:
            return np.zeros((0, self.d), dtype=complex)
        return np.array(list(self.terms.values()))

    @property
    def radius(self) -> int:
        """Largest ``|m_j|`` over drift modes (``K_b``)."""
        return int(np.max(np.abs(self.modes))) if self.terms else 0

    def __call__(self, x) -> np.ndarray:
        """Evaluate ``b`` at points ``x`` of shape ``(..., d)``."""
        x = np.asarray(x, dtype=float)
        if not self.terms:
            return np.zeros_like(x)
        phase = np.exp(1j * (x @ self.modes.T.astype(float)))
        return (phase @ self.amplitudes).real

    @cached_property
    def max_speed(self) -> float:
        """``max |b|`` estimated on a fine grid (exact for the presets)."""
        if not self.terms:
            return 0.0
        n = {1: 256, 2: 128, 3: 48}[self.d]
        axes = [2 * np.pi * np.arange(n) / n] * self.d
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        return float(np.max(np.linalg.norm(self(pts), axis=1)))

    def divergence_coefficients(self) -> np.ndarray:
        """``i m.amp(m)`` for every drift mode."""
        if not self.terms:
            return np.zeros(0, dtype=complex)
        return 1j * np.sum(self.modes * self.amplitudes, axis=1)

    def scaled(self, c: float) -> "TrigVectorField":
        return TrigVectorField(self.d, {m: c * a for m, a in self.terms.items()},
                               name=f"{c}*{self.name}")


@dataclass(frozen=True)
class DivergenceReport:
    max_defect: float
    tol: float
    worst_mode: tuple | None

    @property
    def passed(self) -> bool:
        return self.max_defect <= self.tol


def validate_divergence_free(b: TrigVectorField, tol: float = DIV_TOL) -> DivergenceReport:
    div = np.abs(b.divergence_coefficients())
    if div.size == 0:
        return DivergenceReport(0.0, tol, None)
    i = int(np.argmax(div))
    return DivergenceReport(float(div[i]), tol, tuple(int(v) for v in b.modes[i]))


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense matrix acting on coefficient vectors, rows indexed by ``target``
    modes and columns by ``source`` modes."""

    source: ModeLattice
    target: ModeLattice
    matrix: np.ndarray = field(repr=False)
    kind: str = ""

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def square(self) -> bool:
        return self.source == self.target

    def apply(self, f: SpectralField) -> SpectralField:
        if f.lattice != self.source:
            raise LatticeMismatch(f"{f.lattice} vs operator source {self.source}")
        return SpectralField(self.target, self.matrix @ f.coeffs)

    def restricted(self) -> "OperatorMatrix":
        """Rows belonging to the source lattice (back-projection)."""
        if self.square:
            return self
        rows = self.target.flat_index(self.source.modes)
        return OperatorMatrix(self.source, self.source,
                              np.ascontiguousarray(self.matrix[rows]), self.kind)


def assemble_A(lattice: ModeLattice) -> OperatorMatrix:
    return OperatorMatrix(lattice, lattice, np.diag(-lattice.k2).astype(complex), "A")


def assemble_B(b: TrigVectorField, lattice: ModeLattice,
               extended: bool = False, tol: float = DIV_TOL) -> OperatorMatrix:
    """Matrix of ``f -> b . grad f``.

    ``extended=True`` keeps every output mode (target truncation ``K + K_b``);
    otherwise rows outside the source lattice are dropped.
    """
    if b.d != lattice.d:
        raise LatticeMismatch(f"drift is {b.d}-dimensional, lattice {lattice.d}")
    report = validate_divergence_free(b, tol)
    if not report.passed:
        raise DivergenceError(
            f"divergence defect {report.max_defect:.3e} at mode {report.worst_mode}")
    target = lattice.grown(b.radius) if extended else lattice
    mat = np.zeros((target.size, lattice.size), dtype=complex)
    src = lattice.modes
    cols = np.arange(lattice.size)
    for m, amp in b.terms.items():
        out = src + np.asarray(m)
        ok = target.contains(out)
        rows = target.flat_index(out[ok])
        # b.grad e^{ik.x} = sum_j i k_j amp_j(m) e^{i(k+m).x}
        mat[rows, cols[ok]] += 1j * (src[ok] @ amp)
    return OperatorMatrix(lattice, target, mat, "B_ext" if extended else "B")


def antisymmetry_defect(B: OperatorMatrix) -> float:
    if not B.square:
        raise ValueError("antisymmetry defect needs the square Galerkin form")
    M = B.matrix
    return float(np.max(np.abs(M + M.conj().T))) if M.size else 0.0


def apply_Ac(c: float, f: SpectralField, A: OperatorMatrix, B: OperatorMatrix) -> SpectralField:
    """``A f + c B f`` with the Galerkin drift matrix."""
    if not (A.square and B.square) or f.lattice != A.source or B.source != A.source:
        raise LatticeMismatch("operators and field must share one lattice")
    out = A.matrix @ f.coeffs + c * (B.matrix @ f.coeffs)
    return SpectralField(f.lattice, symmetrize(f.lattice, out))


def generator_matrix(c: float, A: OperatorMatrix, B: OperatorMatrix) -> np.ndarray:
    return A.matrix + c * B.matrix
