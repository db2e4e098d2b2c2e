"""Registry of named drift fields and their known structure."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import TrigVectorField
from .spectral import ModeLattice, SpectralField

TWO_PI = 2 * np.pi


def zero_field(d: int = 2) -> TrigVectorField:
    return TrigVectorField(d, {}, name="zero",
                           flow_map=lambda x, t: np.array(x, dtype=float, copy=True),
                           flow_formula="Phi_t(x) = x")


def _example3_flow(x, t):
    x = np.asarray(x, dtype=float)
    x1, x2, x3, t = np.broadcast_arrays(x[..., 0], x[..., 1], x[..., 2], t)
    return np.stack([x1, x2 + t * np.sin(x1), x3 + t * np.cos(x1)], axis=-1)


def example3() -> TrigVectorField:
    """``b(x) = (0, sin x1, cos x1)`` on the 3-torus."""
    return TrigVectorField(
        3,
        {(1, 0, 0): (0, -0.5j, 0.5), (-1, 0, 0): (0, 0.5j, 0.5)},
        name="example3",
        flow_map=_example3_flow,
        flow_formula="Phi_t(x) = (x1, x2 + t sin x1, x3 + t cos x1)",
    )


def irrational(alpha: float = np.sqrt(2.0)) -> TrigVectorField:
    """Constant field ``(1, alpha)`` on the 2-torus."""
    v = np.array([1.0, alpha])

    def flow(x, t):
        t = np.asarray(t, dtype=float)
        return np.asarray(x, dtype=float) + t[..., None] * v

    return TrigVectorField(2, {(0, 0): (1.0, alpha)}, name="irrational",
                           flow_map=flow,
                           flow_formula=f"Phi_t(x) = x + t (1, {alpha:.12g})")


def cellular2d() -> TrigVectorField:
    """``b(x) = (sin x2, -sin x1)``; stream function ``H = cos x1 + cos x2``."""
    return TrigVectorField(
        2,
        {(0, 1): (-0.5j, 0), (0, -1): (0.5j, 0),
         (1, 0): (0, 0.5j), (-1, 0): (0, -0.5j)},
        name="cellular2d",
    )


def stream_function(lattice: ModeLattice) -> SpectralField:
    """``H = cos x1 + cos x2`` (invariant of the cellular flow)."""
    return SpectralField.cos(lattice, (1, 0)) + SpectralField.cos(lattice, (0, 1))


@dataclass(frozen=True)
class Scenario:
    name: str
    d: int
    K: int
    description: str
    quotient: str

    def field(self, **params) -> TrigVectorField:
        if self.name == "zero":
            return zero_field(params.get("d", self.d))
        if self.name == "example3":
            return example3()
        if self.name == "irrational":
            return irrational(float(params.get("alpha", np.sqrt(2.0))))
        if self.name == "cellular2d":
            return cellular2d()
        raise KeyError(self.name)

    def lattice(self, K: int | None = None, d: int | None = None) -> ModeLattice:
        return ModeLattice(d or self.d, K or self.K)


SCENARIOS = {
    "zero": Scenario("zero", 2, 4, "b = 0", "quotient = M itself ([x] = {x})"),
    "irrational": Scenario("irrational", 2, 4, "b = (1, alpha), alpha irrational",
                           "quotient = single point (dense orbits)"),
    "example3": Scenario("example3", 3, 4, "b = (0, sin x1, cos x1) on T^3",
                         "quotient = circle parametrized by x1"),
    "cellular2d": Scenario("cellular2d", 2, 8, "b = (sin x2, -sin x1) on T^2",
                           "quotient = level sets of H = cos x1 + cos x2"),
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {sorted(SCENARIOS)}") from None


def list_scenarios() -> str:
    rows = []
    for s in SCENARIOS.values():
        b = s.field()
        rows.append((s.name, f"d={s.d}", s.description,
                     b.flow_formula or "(no closed form; RK4)", s.quotient))
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    header = ("name", "dim", "drift", "flow map", "expected quotient")
    widths = [max(w, len(h)) for w, h in zip(widths, header)]
    fmt = "  ".join("{:<%d}" % w for w in widths)
    lines = [fmt.format(*header), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*r) for r in rows]
    return "\n".join(lines)
