"""Truncated Fourier representation of real fields on the flat torus.

Fields live on ``T^d = [0, 2pi)^d`` with the normalized volume as reference
measure, so the Fourier modes ``exp(i k.x)`` form an orthonormal eigenbasis
of the Laplacian with eigenvalues ``-|k|^2``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

IMAG_TOL = 1e-12


class AliasingError(ValueError):
    """Grid too coarse to represent the lattice without aliasing."""


class LatticeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModeLattice:
    """Cube of integer modes ``|k_j| <= K`` in ``d`` dimensions.

    Modes are ordered C-style with each component running from ``-K`` to
    ``K``; negation therefore reverses the flat order.
    """

    d: int
    K: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.K < 1:
            raise ValueError(f"truncation must be positive, got {self.K}")

    @property
    def side(self) -> int:
        return 2 * self.K + 1

    @property
    def size(self) -> int:
        return self.side ** self.d

    @cached_property
    def modes(self) -> np.ndarray:
        r = np.arange(-self.K, self.K + 1)
        grids = np.meshgrid(*([r] * self.d), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.modes ** 2, axis=1).astype(float)

    @cached_property
    def neg(self) -> np.ndarray:
        """Permutation taking the index of ``k`` to the index of ``-k``."""
        return np.arange(self.size)[::-1].copy()

    @property
    def zero(self) -> int:
        return self.size // 2

    def index(self, k) -> int:
        k = np.asarray(k, dtype=int)
        if k.shape != (self.d,) or np.any(np.abs(k) > self.K):
            raise KeyError(f"mode {tuple(k)} not in lattice d={self.d}, K={self.K}")
        return int(np.ravel_multi_index(tuple(k + self.K), (self.side,) * self.d))

    def contains(self, modes: np.ndarray) -> np.ndarray:
        return np.all(np.abs(modes) <= self.K, axis=-1)

    def flat_index(self, modes: np.ndarray) -> np.ndarray:
        """Vectorized ``index`` for an ``(n, d)`` array of in-lattice modes."""
        shifted = (modes + self.K).T
        return np.ravel_multi_index(tuple(shifted), (self.side,) * self.d)

    def grown(self, extra: int) -> "ModeLattice":
        return ModeLattice(self.d, self.K + extra)


def hermitian_defect(lattice: ModeLattice, coeffs: np.ndarray) -> float:
    if coeffs.size == 0:
        return 0.0
    return float(np.max(np.abs(coeffs - np.conj(coeffs[lattice.neg]))))


def symmetrize(lattice: ModeLattice, coeffs: np.ndarray) -> np.ndarray:
    return 0.5 * (coeffs + np.conj(coeffs[lattice.neg]))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real field given by its Fourier coefficients on a ``ModeLattice``.

    The constructor symmetrizes the coefficients; inputs whose Hermitian
    defect exceeds ``1e-9`` times their magnitude are rejected as
    not representing a real function.
    """

    lattice: ModeLattice
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex).reshape(-1)
        if c.shape != (self.lattice.size,):
            raise ValueError(
                f"expected {self.lattice.size} coefficients, got {c.shape[0]}")
        scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
        defect = hermitian_defect(self.lattice, c)
        if defect > 1e-9 * scale:
            raise ValueError(f"coefficients not Hermitian symmetric (defect {defect:.3e})")
        c = symmetrize(self.lattice, c)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # construction helpers
    @classmethod
    def zeros(cls, lattice: ModeLattice) -> "SpectralField":
        return cls(lattice, np.zeros(lattice.size, dtype=complex))

    @classmethod
    def constant(cls, lattice: ModeLattice, value: float = 1.0) -> "SpectralField":
        c = np.zeros(lattice.size, dtype=complex)
        c[lattice.zero] = value
        return cls(lattice, c)

    @classmethod
    def from_modes(cls, lattice: ModeLattice, terms: dict) -> "SpectralField":
        """Build from ``{mode tuple: coefficient}``; the conjugate partner of
        every listed mode is filled in unless it is listed too."""
        c = np.zeros(lattice.size, dtype=complex)
        for k, v in terms.items():
            c[lattice.index(k)] = v
        for k, v in terms.items():
            nk = tuple(-np.asarray(k))
            if nk not in terms:
                c[lattice.index(nk)] = np.conj(v)
        return cls(lattice, c)

    @classmethod
    def cos(cls, lattice: ModeLattice, k, amplitude: float = 1.0) -> "SpectralField":
        """``amplitude * cos(k.x)``."""
        k = tuple(int(v) for v in k)
        if not any(k):
            return cls.constant(lattice, amplitude)
        return cls.from_modes(lattice, {k: amplitude / 2})

    @classmethod
    def sin(cls, lattice: ModeLattice, k, amplitude: float = 1.0) -> "SpectralField":
        """``amplitude * sin(k.x)``."""
        k = tuple(int(v) for v in k)
        return cls.from_modes(lattice, {k: -0.5j * amplitude})

    @classmethod
    def random(cls, lattice: ModeLattice, rng: np.random.Generator,
               decay: float = 1.0) -> "SpectralField":
        """Random real field with coefficients damped by ``(1+|k|^2)^-decay``."""
        n = lattice.size
        c = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        c *= (1.0 + lattice.k2) ** (-decay)
        return cls(lattice, symmetrize(lattice, c))

    # arithmetic
    def _check(self, other: "SpectralField"):
        if other.lattice != self.lattice:
            raise LatticeMismatch(f"{self.lattice} vs {other.lattice}")

    def __add__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.lattice, self.coeffs + other.coeffs)
        c = self.coeffs.copy()
        c[self.lattice.zero] += other
        return SpectralField(self.lattice, c)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rsub__(self, other):
        return (-1.0) * self + other

    def __mul__(self, s):
        if isinstance(s, SpectralField):
            raise TypeError("use multiply() for pointwise products")
        return SpectralField(self.lattice, self.coeffs * float(s))

    __rmul__ = __mul__

    def __truediv__(self, s):
        return self * (1.0 / float(s))

    def __neg__(self):
        return self * -1.0

    def mean(self) -> float:
        return float(self.coeffs[self.lattice.zero].real)

    def coeff(self, k) -> complex:
        return complex(self.coeffs[self.lattice.index(k)])

    def restrict(self, lattice: ModeLattice) -> "SpectralField":
        """Truncate to (or zero-pad into) another lattice of the same dimension."""
        if lattice.d != self.lattice.d:
            raise LatticeMismatch("dimension mismatch")
        out = np.zeros(lattice.size, dtype=complex)
        keep = lattice.contains(self.lattice.modes)
        out[lattice.flat_index(self.lattice.modes[keep])] = self.coeffs[keep]
        return SpectralField(lattice, out)

    def __call__(self, x) -> np.ndarray:
        """Evaluate at points ``x`` of shape ``(..., d)`` by direct summation."""
        return evaluate_points(self, x)

    # serialization
    def to_json(self) -> str:
        nz = np.flatnonzero(np.abs(self.coeffs) > 0)
        rows = [[self.lattice.modes[i].tolist(), float(self.coeffs[i].real),
                 float(self.coeffs[i].imag)] for i in nz]
        return json.dumps({"d": self.lattice.d, "K": self.lattice.K, "coeffs": rows})

    @classmethod
    def from_json(cls, text: str) -> "SpectralField":
        data = json.loads(text)
        lattice = ModeLattice(int(data["d"]), int(data["K"]))
        c = np.zeros(lattice.size, dtype=complex)
        for k, re, im in data["coeffs"]:
            c[lattice.index(k)] = complex(re, im)
        return cls(lattice, c)


def evaluate_points(f: SpectralField, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    nz = np.flatnonzero(np.abs(f.coeffs) > 0)
    if nz.size == 0:
        return np.zeros(x.shape[:-1])
    modes = f.lattice.modes[nz].astype(float)
    out = np.zeros(x.shape[:-1])
    flat = x.reshape(-1, f.lattice.d)
    res = np.zeros(flat.shape[0])
    # chunked to bound the (points x modes) phase matrix
    step = max(1, 2_000_000 // max(1, nz.size))
    for s in range(0, flat.shape[0], step):
        phase = flat[s:s + step] @ modes.T
        res[s:s + step] = (np.exp(1j * phase) @ f.coeffs[nz]).real
    out[...] = res.reshape(x.shape[:-1])
    return out


@dataclass(frozen=True, eq=False)
class GridField:
    """Real samples on the uniform periodic grid ``x_j = 2 pi j / n``."""

    values: np.ndarray

    @property
    def resolution(self) -> tuple:
        return self.values.shape

    @property
    def d(self) -> int:
        return self.values.ndim

    def points(self) -> np.ndarray:
        return grid_points(self.resolution)

    def mean(self) -> float:
        return float(np.mean(self.values))

    def to_csv(self, path) -> None:
        pts = self.points().reshape(-1, self.d)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(self.d)] + ["value"])
            for p, v in zip(pts, self.values.ravel()):
                w.writerow([repr(float(a)) for a in p] + [repr(float(v))])


def grid_points(resolution) -> np.ndarray:
    axes = [2 * np.pi * np.arange(n) / n for n in resolution]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def _resolution(res, d) -> tuple:
    if np.isscalar(res):
        return (int(res),) * d
    res = tuple(int(r) for r in res)
    if len(res) != d:
        raise ValueError(f"need {d} resolutions, got {len(res)}")
    return res


def _fft_slots(lattice: ModeLattice, res: tuple) -> tuple:
    if min(res) < lattice.side:
        raise AliasingError(
            f"grid resolution {res} below 2K+1 = {lattice.side}")
    return tuple(np.mod(lattice.modes[:, j], res[j]) for j in range(lattice.d))


def eval_on_grid(f: SpectralField, res) -> GridField:
    res = _resolution(res, f.lattice.d)
    slots = _fft_slots(f.lattice, res)
    spec = np.zeros(res, dtype=complex)
    spec[slots] = f.coeffs
    vals = np.fft.ifftn(spec) * np.prod(res)
    resid = float(np.max(np.abs(vals.imag))) if vals.size else 0.0
    if resid > IMAG_TOL * max(1.0, float(np.max(np.abs(f.coeffs)))):
        raise ValueError(f"imaginary residue {resid:.3e} after synthesis")
    return GridField(np.ascontiguousarray(vals.real))


def grid_spectrum(g: GridField) -> np.ndarray:
    values = np.asarray(g.values)
    if np.iscomplexobj(values):
        if np.max(np.abs(values.imag)) > IMAG_TOL:
            raise ValueError("grid values must be real")
        values = values.real
    return np.fft.fftn(values) / values.size


def field_from_grid(g: GridField, lattice: ModeLattice,
                    return_defect: bool = False):
    """Discrete Fourier coefficients of ``g`` restricted to ``lattice``.

    With ``return_defect`` the Hermitian defect removed by symmetrization is
    returned alongside the field.
    """
    if g.d != lattice.d:
        raise LatticeMismatch("grid and lattice dimensions differ")
    spec = grid_spectrum(g)
    c = spec[_fft_slots(lattice, g.resolution)]
    defect = hermitian_defect(lattice, c)
    f = SpectralField(lattice, symmetrize(lattice, c))
    return (f, defect) if return_defect else f


def truncation_loss(g: GridField, lattice: ModeLattice) -> float:
    """Energy fraction of ``g`` carried by grid modes outside ``lattice``."""
    spec = grid_spectrum(g)
    total = float(np.sum(np.abs(spec) ** 2))
    if total == 0.0:
        return 0.0
    kept = float(np.sum(np.abs(spec[_fft_slots(lattice, g.resolution)]) ** 2))
    return max(0.0, (total - kept) / total)


def _pair(f: SpectralField, h: SpectralField):
    if f.lattice != h.lattice:
        raise LatticeMismatch(f"{f.lattice} vs {h.lattice}")
    return f.coeffs, h.coeffs


def _real(z: complex, scale: float) -> float:
    if abs(z.imag) > IMAG_TOL * max(1.0, scale):
        raise ValueError(f"inner product has imaginary part {z.imag:.3e}")
    return float(z.real)


def inner(f: SpectralField, h: SpectralField) -> float:
    """L2 inner product with respect to the normalized volume."""
    a, b = _pair(f, h)
    z = np.vdot(b, a)
    return _real(complex(z), float(np.linalg.norm(a) * np.linalg.norm(b)))


def inner_h1_lambda(f: SpectralField, h: SpectralField, lam: float) -> float:
    """``<f, h>_{H1} + lam <f, h>``, i.e. ``<f, (lam - A) h>``."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    a, b = _pair(f, h)
    w = f.lattice.k2 + lam
    z = np.vdot(b, w * a)
    return _real(complex(z), float(np.sqrt(np.vdot(a, w * a).real * np.vdot(b, w * b).real)))


def inner_h1(f: SpectralField, h: SpectralField) -> float:
    a, b = _pair(f, h)
    z = np.vdot(b, f.lattice.k2 * a)
    return _real(complex(z), float(np.linalg.norm(a) * np.linalg.norm(b)) * f.lattice.K ** 2)


def sobolev_norm(f: SpectralField, m: int) -> float:
    """H^m norm; for ``m >= 1`` the constant mode does not contribute."""
    if m < 0:
        raise ValueError("Sobolev order must be nonnegative")
    a2 = np.abs(f.coeffs) ** 2
    if m == 0:
        return float(np.sqrt(np.sum(a2)))
    return float(np.sqrt(np.sum(a2 * f.lattice.k2 ** m)))


def norm(f: SpectralField) -> float:
    return sobolev_norm(f, 0)


def norm_1lambda(f: SpectralField, lam: float) -> float:
    return float(np.sqrt(max(0.0, inner_h1_lambda(f, f, lam))))


def multiply(f: SpectralField, h: SpectralField,
             lattice: ModeLattice | None = None) -> SpectralField:
    """Pointwise product truncated to ``lattice`` (default: the inputs' lattice)."""
    _pair(f, h)
    if lattice is None:
        lattice = f.lattice
    big = f.lattice.grown(f.lattice.K)
    res = 2 * big.K + 1
    prod = eval_on_grid(f.restrict(big), res).values * eval_on_grid(h.restrict(big), res).values
    return field_from_grid(GridField(prod), big).restrict(lattice)


def field_from_function(func, lattice: ModeLattice, res=None) -> SpectralField:
    """Sample ``func`` on a grid and keep the lattice modes."""
    if res is None:
        res = max(64, 4 * lattice.side)
    res = _resolution(res, lattice.d)
    pts = grid_points(res)
    vals = np.asarray(func(*[pts[..., j] for j in range(lattice.d)]), dtype=float)
    return field_from_grid(GridField(np.broadcast_to(vals, res).copy()), lattice)

