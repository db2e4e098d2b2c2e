"""Accelerated resolvents, the drift kernel and the limit pseudo-resolvent.

Everything is computed on one ``ModeLattice``. Two forms of the drift
matrix are kept: the square Galerkin matrix drives the linear solves, and
the rectangular extended matrix (no back-projection) defines the numerical
kernel. The Galerkin truncation of a shift operator can acquire spurious
null vectors; the extended form does not.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .operators import TrigVectorField, assemble_A, assemble_B, generator_matrix
from .spectral import (LatticeMismatch, ModeLattice, SpectralField, eval_on_grid,
                       inner, norm, norm_1lambda, sobolev_norm,
                       symmetrize)

TAU_NULL = 1e-8


class RouteDisagreement(RuntimeError):
    """Projection and spectral limit routes disagree (truncation inconsistency)."""


class KernelMembershipError(ValueError):
    pass


@dataclass(frozen=True)
class SingularValueReport:
    singular_values: np.ndarray = field(repr=False)
    threshold: float
    rank_deficiency: int
    ambiguous: bool


@dataclass(frozen=True, eq=False)
class KernelBasis:
    """Basis of the numerical ``Ker(B) ∩ H^1``, orthonormal in ``<.,.>_{1,lam}``.

    ``vectors`` holds the coefficient vectors as columns; every column is
    Hermitian symmetric, i.e. a real field.
    """

    lam: float
    lattice: ModeLattice
    vectors: np.ndarray = field(repr=False)
    report: SingularValueReport

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def fields(self) -> list:
        return [SpectralField(self.lattice, self.vectors[:, j]) for j in range(self.dim)]

    def weights(self) -> np.ndarray:
        return self.lattice.k2 + self.lam

    def gram(self) -> np.ndarray:
        V = self.vectors
        return V.conj().T @ (self.weights()[:, None] * V)

    def coordinates(self, coeffs: np.ndarray) -> np.ndarray:
        return self.vectors.conj().T @ (self.weights() * coeffs)

    def project(self, coeffs: np.ndarray) -> np.ndarray:
        return self.vectors @ self.coordinates(coeffs)

    def reorthonormalized(self, weights: np.ndarray | None = None) -> np.ndarray:
        """Basis of the same span orthonormal in the weighted inner product
        (plain L2 when ``weights`` is None)."""
        w = np.ones(self.lattice.size) if weights is None else weights
        return _orthonormalize(self.lattice, self.vectors, w)


def _orthonormalize(lattice: ModeLattice, V: np.ndarray, w: np.ndarray,
                    rank_tol: float = 1e-10) -> np.ndarray:
    """Orthonormalize real-field columns through their (real) Gram matrix so
    that the result stays Hermitian symmetric."""
    if V.shape[1] == 0:
        return V
    G = (V.conj().T @ (w[:, None] * V)).real
    G = 0.5 * (G + G.T)
    s, U = np.linalg.eigh(G)
    keep = s > rank_tol * max(s.max(), 1e-300)
    U, s = U[:, keep], s[keep]
    # fix the sign/order of the basis deterministically
    Q = V @ (U / np.sqrt(s))
    Q = Q[:, ::-1]
    for j in range(Q.shape[1]):
        i = int(np.argmax(np.abs(Q[:, j]) > 1e-8 * np.max(np.abs(Q[:, j]))))
        if Q[i, j].real < 0 or (Q[i, j].real == 0 and Q[i, j].imag < 0):
            Q[:, j] *= -1
    Q = np.stack([symmetrize(lattice, Q[:, j]) for j in range(Q.shape[1])], axis=1)
    return Q


def _real_span(lattice: ModeLattice, V: np.ndarray) -> np.ndarray:
    """Real-field combinations spanning the conjugation-closed span of ``V``."""
    conj = np.conj(V[lattice.neg])
    return np.concatenate([0.5 * (V + conj), -0.5j * (V - conj)], axis=1)


@dataclass(frozen=True, eq=False)
class ModeDecomposition:
    """Eigenpairs ``L theta_k = i mu_k theta_k`` of ``L = (A - lam)^{-1} B`` on
    the ``<.,.>_{1,lam}`` complement of the kernel.

    ``spurious`` counts complement eigenvalues that vanish numerically; they
    come from the Galerkin truncation, not from the drift.
    """

    lam: float
    mu: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    spurious: int

    def coefficients(self, gamma: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return self.theta.conj().T @ (weights * gamma)


class ResolventLab:
    """Assembled operators for one drift field on one lattice.

    Kernel bases and mode decompositions are cached per ``lam``.
    """

    def __init__(self, b: TrigVectorField, lattice: ModeLattice,
                 tau_null: float = TAU_NULL):
        if b.d != lattice.d:
            raise LatticeMismatch("drift and lattice dimensions differ")
        self.b = b
        self.lattice = lattice
        self.tau_null = tau_null
        self.A = assemble_A(lattice)
        self.B = assemble_B(b, lattice)
        self.B_ext = assemble_B(b, lattice, extended=True)
        self._kernels: dict = {}
        self._modes: dict = {}
        self._lu: dict = {}

    # ------------------------------------------------------------------ solves
    def _factor(self, c: float, lam: float):
        key = (float(c), float(lam))
        if key not in self._lu:
            M = generator_matrix(c, self.A, self.B) - lam * np.eye(self.lattice.size)
            self._lu[key] = (sla.lu_factor(M), M)
            if len(self._lu) > 64:
                self._lu.pop(next(iter(self._lu)))
        return self._lu[key]

    def solve_resolvent(self, c: float, lam: float, g: SpectralField) -> SpectralField:
        """``R_lam^(c) g = -(A_c - lam)^{-1} g`` on the truncated lattice."""
        if not lam > 0:
            raise ValueError("lambda must be positive")
        self._check(g)
        lu, M = self._factor(c, lam)
        psi = sla.lu_solve(lu, g.coeffs)
        resid = np.linalg.norm(M @ psi - g.coeffs)
        assert resid <= 1e-10 * max(np.linalg.norm(g.coeffs), 1e-300), resid
        return SpectralField(self.lattice, symmetrize(self.lattice, -psi))

    def _check(self, f: SpectralField):
        if f.lattice != self.lattice:
            raise LatticeMismatch(f"{f.lattice} vs lab lattice {self.lattice}")

    def gamma(self, lam: float, g: SpectralField) -> np.ndarray:
        """``(A - lam)^{-1} g`` (diagonal)."""
        return -g.coeffs / (self.lattice.k2 + lam)

    # ------------------------------------------------------------------ kernel
    @cached_property
    def _svd(self):
        M = self.B_ext.matrix
        _, s, Vh = np.linalg.svd(M, full_matrices=False)
        full = np.zeros(self.lattice.size)
        full[:s.size] = s
        return full, Vh

    def kernel_basis(self, lam: float) -> KernelBasis:
        if not lam > 0:
            raise ValueError("lambda must be positive")
        key = float(lam)
        if key in self._kernels:
            return self._kernels[key]
        s, Vh = self._svd
        smax = float(s.max()) if s.size else 0.0
        thr = self.tau_null * smax
        null = s <= thr
        ambiguous = bool(smax > 0 and np.any((s > thr / 10) & (s < thr * 10)))
        V = Vh[null].conj().T
        w = self.lattice.k2 + lam
        Q = _orthonormalize(self.lattice, _real_span(self.lattice, V), w)
        if Q.shape[1] != V.shape[1]:
            raise RuntimeError(
                f"kernel span not conjugation closed ({Q.shape[1]} vs {V.shape[1]})")
        report = SingularValueReport(s, thr, int(null.sum()), ambiguous)
        kb = KernelBasis(key, self.lattice, Q, report)
        self._kernels[key] = kb
        return kb

    def kernel_defect(self, f: SpectralField) -> float:
        """Relative L2 distance of ``f`` from the kernel span."""
        self._check(f)
        W = self.kernel_basis(1.0).reorthonormalized()
        c = f.coeffs
        resid = c - W @ (W.conj().T @ c)
        return float(np.linalg.norm(resid) / max(np.linalg.norm(c), 1e-300))

    def project_1lambda(self, f: SpectralField, basis: KernelBasis) -> SpectralField:
        self._check(f)
        return SpectralField(self.lattice, basis.project(f.coeffs))

    # ------------------------------------------------------- mode decomposition
    def mode_decomposition(self, lam: float) -> ModeDecomposition:
        key = float(lam)
        if key in self._modes:
            return self._modes[key]
        kb = self.kernel_basis(lam)
        D = np.sqrt(self.lattice.k2 + lam)
        # M = D L D^{-1} = -D^{-1} B D^{-1} is skew-Hermitian; H = iM Hermitian
        M = -(self.B.matrix / D[None, :]) / D[:, None]
        Q = D[:, None] * kb.vectors
        Z = sla.null_space(Q.conj().T) if kb.dim else np.eye(self.lattice.size)
        if Z.shape[1] + kb.dim != self.lattice.size:
            raise RuntimeError("kernel complement has wrong dimension (rank deficiency)")
        Hc = Z.conj().T @ (1j * M) @ Z
        Hc = 0.5 * (Hc + Hc.conj().T)
        nu, Y = np.linalg.eigh(Hc)
        mu = -nu
        order = np.argsort(-np.abs(mu), kind="stable")
        mu, Y = mu[order], Y[:, order]
        theta = (Z @ Y) / D[:, None]
        scale = max(float(np.max(np.abs(mu))) if mu.size else 0.0, 1e-300)
        spurious = int(np.sum(np.abs(mu) <= 1e-10 * scale))
        md = ModeDecomposition(key, mu, theta, spurious)
        self._modes[key] = md
        return md

    # ----------------------------------------------------------- limit routes
    def limit_resolvent(self, lam: float, g: SpectralField, route: str = "projection",
                        cross_check: bool = False) -> SpectralField:
        """``R*_lam g = -P_{1,lam} (A - lam)^{-1} g``.

        ``route="projection"`` projects onto the kernel basis; ``"spectral"``
        removes the mode-decomposition components and keeps the remainder.
        With ``cross_check`` both are computed and a disagreement beyond
        ``1e-6`` in ``||.||_{1,lam}`` raises ``RouteDisagreement``.
        """
        if not lam > 0:
            raise ValueError("lambda must be positive")
        self._check(g)
        gam = self.gamma(lam, g)
        if route not in ("projection", "spectral"):
            raise ValueError(f"unknown route {route!r}")
        proj = spec = None
        if route == "projection" or cross_check:
            proj = -self.kernel_basis(lam).project(gam)
        if route == "spectral" or cross_check:
            md = self.mode_decomposition(lam)
            beta = md.coefficients(gam, self.lattice.k2 + lam)
            spec = -(gam - md.theta @ beta)
        if cross_check:
            diff = SpectralField(self.lattice, symmetrize(self.lattice, proj - spec))
            gap = norm_1lambda(diff, lam)
            if gap > 1e-6:
                raise RouteDisagreement(f"limit routes differ by {gap:.3e}")
        out = proj if route == "projection" else spec
        return SpectralField(self.lattice, symmetrize(self.lattice, out))

    def finite_c_mode_formula(self, c: float, lam: float, g: SpectralField) -> SpectralField:
        """``R_lam^(c) g`` through ``alpha_k = beta_k / (1 + i c mu_k)``."""
        self._check(g)
        md = self.mode_decomposition(lam)
        w = self.lattice.k2 + lam
        gam = self.gamma(lam, g)
        gam_K = self.kernel_basis(lam).project(gam)
        beta = md.coefficients(gam, w)
        psi = gam_K + md.theta @ (beta / (1 + 1j * c * md.mu))
        return SpectralField(self.lattice, symmetrize(self.lattice, -psi))

    def minimizer_check(self, lam: float, g: SpectralField) -> float:
        """Max ``|<psi* - gamma, v>_{1,lam}|`` over kernel basis vectors."""
        kb = self.kernel_basis(lam)
        psi_star = -self.limit_resolvent(lam, g).coeffs
        r = psi_star - self.gamma(lam, g)
        coords = kb.coordinates(r)
        return float(np.max(np.abs(coords))) if coords.size else 0.0

    # -------------------------------------------------------------- diagnostics
    def verify_limit_properties(self, lam: float, mu: float, g: SpectralField,
                                rng: np.random.Generator | None = None,
                                n_random: int = 5, grid: int = 32) -> dict:
        """Pseudo-resolvent, self-adjointness, contraction, Markov and kernel
        diagnostics for one ``g``."""
        if lam == mu:
            raise ValueError("need two distinct lambdas")
        rng = np.random.default_rng(0) if rng is None else rng
        R = self.limit_resolvent
        Rl, Rm = R(lam, g), R(mu, g)
        pseudo = norm((mu - lam) * R(lam, Rm) - Rl + Rm)
        sa = 0.0
        for _ in range(n_random):
            f = SpectralField.random(self.lattice, rng)
            h = SpectralField.random(self.lattice, rng)
            sa = max(sa, abs(inner(R(lam, f), h) - inner(f, R(lam, h))))
        lRg = lam * Rl
        vals = eval_on_grid(lRg, grid).values
        gvals = eval_on_grid(g, grid).values
        kb = self.kernel_basis(lam)
        W = kb.reorthonormalized()
        gperp = g.coeffs - W @ (W.conj().T @ g.coeffs)
        gperp = SpectralField(self.lattice, symmetrize(self.lattice, gperp))
        return {
            "lambda": lam,
            "mu": mu,
            "pseudo_resolvent_defect": pseudo,
            "self_adjoint_defect": sa,
            "contraction_margin": norm(lRg) - norm(g),
            "g_range": [float(gvals.min()), float(gvals.max())],
            "markov_range": [float(vals.min()), float(vals.max())],
            "kernel_check": norm(R(lam, gperp)),
        }

    def strong_continuity_curve(self, g: SpectralField, lams) -> list:
        if self.kernel_defect(g) > 1e-8:
            raise KernelMembershipError("g is not in the kernel span")
        rows = []
        for lam in lams:
            d = lam * self.limit_resolvent(lam, g) - g
            rows.append({"lambda": float(lam), "dist_H": norm(d),
                         "dist_1lambda": norm_1lambda(d, lam)})
        return rows

    def convergence_curve(self, g: SpectralField, lam: float, cs) -> dict:
        star = self.limit_resolvent(lam, g)
        rows = []
        for c in cs:
            d = self.solve_resolvent(c, lam, g) - star
            rows.append({"c": float(c), "dist_H": norm(d), "dist_H1": sobolev_norm(d, 1)})
        fit = [(np.log(r["c"]), np.log(r["dist_H"])) for r in rows
               if r["c"] > 0 and r["dist_H"] > 1e-300]
        slope = None
        if len(fit) >= 2:
            x, y = np.array(fit).T
            slope = float(np.polyfit(x, y, 1)[0])
        return {"rows": rows, "slope": slope}


def projection_residual_norm(lab: ResolventLab, f: SpectralField, lam: float) -> float:
    p = lab.project_1lambda(f, lab.kernel_basis(lam))
    return norm_1lambda(f - p, lam)
