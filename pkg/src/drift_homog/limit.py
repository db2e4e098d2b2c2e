"""Limit generator, semigroups and the Dirichlet form of the limit process."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .operators import generator_matrix
from .resolvent import KernelMembershipError, ResolventLab
from .spectral import SpectralField, inner, inner_h1, norm, symmetrize

KERNEL_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class LimitGenerator:
    """Matrix ``<w_i, A w_j>`` of the limit generator in an L2-orthonormal
    kernel basis ``w``."""

    basis: np.ndarray = field(repr=False)
    matrix: np.ndarray = field(repr=False)
    lam: float

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def to_json(self) -> dict:
        return {"lambda": self.lam, "dim": int(self.matrix.shape[0]),
                "matrix": np.round(self.matrix, 14).tolist()}


@dataclass
class SemigroupReport:
    t: float
    rows: list

    def to_csv_rows(self):
        return [(r["c"], self.t, r["dist"]) for r in self.rows]


class LimitProcess:
    """Semigroups ``T_t^(c)`` and ``T*_t`` on top of an assembled ``ResolventLab``."""

    def __init__(self, lab: ResolventLab, lam: float = 1.0):
        self.lab = lab
        self.lattice = lab.lattice
        self.generator = limit_generator(lab, lam)
        w, U = np.linalg.eigh(self.generator.matrix)
        self._eig = (w, U)
        self._expm: dict = {}

    # ------------------------------------------------------------ kernel maps
    def coordinates(self, f: SpectralField) -> np.ndarray:
        W = self.generator.basis
        c = W.conj().T @ f.coeffs
        resid = np.linalg.norm(f.coeffs - W @ c)
        if resid > KERNEL_TOL * max(np.linalg.norm(f.coeffs), 1.0):
            raise KernelMembershipError(f"field is {resid:.3e} away from the kernel span")
        return c

    def project(self, f: SpectralField) -> SpectralField:
        """``P_E`` (L2-orthogonal projection onto the kernel span)."""
        W = self.generator.basis
        return SpectralField(self.lattice, symmetrize(self.lattice, W @ (W.conj().T @ f.coeffs)))

    # ------------------------------------------------------------ semigroups
    def propagator(self, c: float, t: float) -> np.ndarray:
        if t < 0:
            raise ValueError("time must be nonnegative")
        key = (float(c), float(t))
        if key not in self._expm:
            self._expm[key] = sla.expm(t * generator_matrix(c, self.lab.A, self.lab.B))
            if len(self._expm) > 32:
                self._expm.pop(next(iter(self._expm)))
        return self._expm[key]

    def apply_semigroup(self, c: float, t: float, g: SpectralField) -> SpectralField:
        """``exp(t (A + c B)) g``."""
        if t < 0:
            raise ValueError("time must be nonnegative")
        if t == 0:
            return g
        out = self.propagator(c, t) @ g.coeffs
        return SpectralField(self.lattice, symmetrize(self.lattice, out))

    def apply_limit_semigroup(self, t: float, g: SpectralField) -> SpectralField:
        if t < 0:
            raise ValueError("time must be nonnegative")
        a = self.coordinates(g)
        w, U = self._eig
        a = U @ (np.exp(t * w) * (U.T @ a))
        out = self.generator.basis @ a
        return SpectralField(self.lattice, symmetrize(self.lattice, out))

    # --------------------------------------------------------- Dirichlet form
    def dirichlet_form(self, u: SpectralField, v: SpectralField) -> float:
        self.coordinates(u)
        self.coordinates(v)
        return inner_h1(u, v)

    def dform_limit_curve(self, u: SpectralField, v: SpectralField, lams) -> list:
        self.coordinates(u)
        self.coordinates(v)
        rows = []
        for lam in lams:
            val = lam * inner(u - lam * self.lab.limit_resolvent(lam, u), v)
            rows.append({"lambda": float(lam), "value": val})
        return rows

    def semigroup_convergence_curve(self, psi: SpectralField, t: float, cs) -> SemigroupReport:
        star = self.apply_limit_semigroup(t, psi)
        rows = [{"c": float(c), "dist": norm(self.apply_semigroup(c, t, psi) - star)}
                for c in cs]
        return SemigroupReport(float(t), rows)

    def resolvent_by_quadrature(self, c: float, lam: float, g: SpectralField,
                                steps_per_unit: int = 200) -> SpectralField:
        """``int_0^T e^{-lam t} T_t^(c) g dt`` with ``T = 40/lam`` (composite Simpson)."""
        T = 40.0 / lam
        n = int(np.ceil(T * steps_per_unit / 2)) * 2
        h = T / n
        P = sla.expm(h * generator_matrix(c, self.lab.A, self.lab.B))
        x = g.coeffs.astype(complex)
        acc = np.zeros_like(x)
        for j in range(n + 1):
            wgt = 1.0 if j in (0, n) else (4.0 if j % 2 else 2.0)
            acc += wgt * np.exp(-lam * j * h) * x
            x = P @ x
        return SpectralField(self.lattice, symmetrize(self.lattice, acc * h / 3))


def limit_generator(lab: ResolventLab, lam: float = 1.0) -> LimitGenerator:
    kb = lab.kernel_basis(lam)
    W = kb.reorthonormalized()
    if W.shape[1] != kb.dim:
        raise RuntimeError("rank lost while re-orthonormalizing the kernel basis")
    M = W.conj().T @ (lab.A.matrix @ W)
    if np.max(np.abs(M.imag), initial=0.0) > 1e-10:
        raise RuntimeError("limit generator matrix is not real")
    M = M.real
    sym = float(np.max(np.abs(M - M.T), initial=0.0))
    if sym > 1e-10:
        raise RuntimeError(f"limit generator symmetry defect {sym:.3e}")
    return LimitGenerator(W, 0.5 * (M + M.T), float(lam))
