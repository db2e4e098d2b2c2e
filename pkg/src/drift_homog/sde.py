"""Monte-Carlo simulation of the accelerated diffusion ``dY = c b(Y) dt + sqrt(2) dW``
on the torus, and characteristic-function estimators with spectral references."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .operators import TrigVectorField
from .resolvent import KernelMembershipError
from .spectral import (GridField, SpectralField, evaluate_points, field_from_grid,
                       grid_points, inner, norm, truncation_loss)

TWO_PI = 2 * np.pi
TRUNCATION_TOL = 1e-6
LIMIT_KERNEL_TOL = 1e-3
_HEADER = struct.Struct("<qqqdQ")


class TruncationError(ValueError):
    pass


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class StepRule:
    dt0: float = 1e-3
    theta: float = 0.05

    def dt(self, c: float, speed: float) -> float:
        if c == 0 or speed == 0:
            return self.dt0
        return min(self.dt0, self.theta / (abs(c) * speed))


@dataclass(eq=False)
class PathEnsemble:
    c: float
    times: np.ndarray
    states: np.ndarray = field(repr=False)        # (n, m, d)
    seed: int
    rule: StepRule
    init: dict
    dense_times: np.ndarray | None = field(default=None, repr=False)
    dense_states: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    def time_index(self, t: float) -> int:
        j = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[j] - t) > 1e-12 * max(1.0, abs(t)):
            raise GridMismatch(f"t={t} is not on the time grid")
        return j

    def at(self, t: float) -> np.ndarray:
        return self.states[:, self.time_index(t)]


def parse_init(init, d: int) -> dict:
    """Normalize ``"uniform"``, ``{"density": a}`` or ``{"point": x0}``."""
    if isinstance(init, str):
        if init != "uniform":
            raise ValueError(f"unknown init {init!r}")
        return {"kind": "uniform"}
    init = dict(init)
    if "kind" in init:
        kind = init["kind"]
    elif "density" in init:
        kind, init = "density", {"a": init["density"], "mode": init.get("mode", 1),
                                 "axis": init.get("axis", 0)}
    elif "point" in init:
        kind, init = "point", {"x0": init["point"]}
    else:
        raise ValueError(f"cannot parse init {init!r}")
    if kind == "uniform":
        return {"kind": "uniform"}
    if kind == "density":
        a = float(init["a"])
        if abs(a) > 1:
            raise ValueError("density 1 + a cos(m x_j) needs |a| <= 1")
        m, axis = int(init.get("mode", 1)), int(init.get("axis", 0))
        if m < 1 or not 0 <= axis < d:
            raise ValueError("density mode must be >= 1 on an existing axis")
        return {"kind": "density", "a": a, "mode": m, "axis": axis}
    if kind == "point":
        x0 = [float(v) for v in init["x0"]]
        if len(x0) != d:
            raise ValueError("initial point has wrong dimension")
        return {"kind": "point", "x0": x0}
    raise ValueError(f"unknown init kind {kind!r}")


def _inverse_cdf(u: np.ndarray, a: float, m: int = 1) -> np.ndarray:
    """Invert ``F(x) = (x + (a/m) sin(m x)) / 2pi`` on ``[0, 2pi]`` by bisection."""
    lo = np.zeros_like(u)
    hi = np.full_like(u, TWO_PI)
    target = TWO_PI * u
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        below = mid + (a / m) * np.sin(m * mid) < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def _path_generators(seed: int, n: int) -> list:
    # counter-based substream per (seed, path); draws advance the counter
    return [np.random.Generator(np.random.Philox(key=[int(seed), i])) for i in range(n)]


def _initial_states(init: dict, gens: list, d: int) -> np.ndarray:
    n = len(gens)
    if init["kind"] == "point":
        return np.tile(np.mod(np.asarray(init["x0"], float), TWO_PI), (n, 1))
    u = np.stack([g.random(d) for g in gens])
    x = TWO_PI * u
    if init["kind"] == "density" and init["a"] != 0.0:
        j = init["axis"]
        x[:, j] = _inverse_cdf(u[:, j], init["a"], init["mode"])
    return x


def _drift_step(b: TrigVectorField, x: np.ndarray, s: float) -> np.ndarray:
    """Flow of ``b`` for time ``s`` (already multiplied by ``c``)."""
    if b.flow_map is not None:
        return b.flow_map(x, np.full(x.shape[0], s))
    k1 = b(x)
    k2 = b(x + 0.5 * s * k1)
    k3 = b(x + 0.5 * s * k2)
    k4 = b(x + s * k3)
    return x + (s / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate(b: TrigVectorField, c: float, init, t_grid, n: int, seed: int,
             rule: StepRule | None = None, dense_stride: int | None = None,
             block: int = 256) -> PathEnsemble:
    """Strang splitting: half drift, Gaussian step, half drift.

    Each path owns a Philox stream keyed by ``(seed, path index)``, so the
    result does not depend on how paths are batched. ``dense_stride`` keeps
    every ``dense_stride``-th step for path-modulus diagnostics.
    """
    if n < 1:
        raise ValueError("need at least one path")
    rule = rule or StepRule()
    t_grid = np.asarray(t_grid, dtype=float).ravel()
    if t_grid.size == 0:
        raise ValueError("empty time grid")
    if t_grid[0] != 0.0:
        t_grid = np.concatenate([[0.0], t_grid])
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("time grid must be strictly increasing from 0")
    d = b.d
    init = parse_init(init, d)
    gens = _path_generators(seed, n)
    x = _initial_states(init, gens, d)
    dt_max = rule.dt(c, b.max_speed)

    states = np.empty((n, t_grid.size, d))
    states[:, 0] = x
    dense_t, dense_x = ([0.0], [x.copy()]) if dense_stride else (None, None)
    step_count = 0
    pending = np.empty((n, 0, d))
    for j in range(1, t_grid.size):
        span = t_grid[j] - t_grid[j - 1]
        steps = int(np.ceil(span / dt_max - 1e-9))
        dt = span / steps
        t = t_grid[j - 1]
        for s in range(steps):
            if pending.shape[1] == 0:
                pending = np.stack([g.standard_normal((block, d)) for g in gens])
            z, pending = pending[:, 0], pending[:, 1:]
            if c != 0:
                x = _drift_step(b, x, 0.5 * c * dt)
            x = x + np.sqrt(2.0 * dt) * z
            if c != 0:
                x = _drift_step(b, x, 0.5 * c * dt)
            x = np.mod(x, TWO_PI)
            x[x >= TWO_PI] = 0.0
            step_count += 1
            t = t_grid[j - 1] + (s + 1) * dt
            if dense_stride and step_count % dense_stride == 0:
                dense_t.append(t)
                dense_x.append(x.copy())
        states[:, j] = x
    ens = PathEnsemble(float(c), t_grid, states, int(seed), rule, init)
    if dense_stride:
        ens.dense_times = np.asarray(dense_t)
        ens.dense_states = np.stack(dense_x, axis=1)
    return ens


# ---------------------------------------------------------------- estimators
@dataclass(frozen=True)
class CharFnEstimate:
    value: complex
    stderr_re: float
    stderr_im: float
    n: int
    observable: dict

    @property
    def stderr(self) -> float:
        return float(np.hypot(self.stderr_re, self.stderr_im))

    def within(self, ref: complex, k: float = 3.0) -> bool:
        return (abs(self.value.real - ref.real) <= k * self.stderr_re + 1e-15
                and abs(self.value.imag - ref.imag) <= k * self.stderr_im + 1e-15)

    def to_json(self) -> dict:
        return {"re": self.value.real, "im": self.value.imag,
                "stderr_re": self.stderr_re, "stderr_im": self.stderr_im,
                "n": self.n, "observable": self.observable}


def _estimate(z: np.ndarray, obs: dict) -> CharFnEstimate:
    n = z.size
    mean = complex(np.mean(z.real), np.mean(z.imag))
    if n > 1:
        se_re = float(np.std(z.real, ddof=1) / np.sqrt(n))
        se_im = float(np.std(z.imag, ddof=1) / np.sqrt(n))
    else:
        se_re = se_im = float("inf")
    return CharFnEstimate(mean, se_re, se_im, n, obs)


def char_fn(ens: PathEnsemble, f: SpectralField, xi: float, t: float) -> CharFnEstimate:
    """Sample mean of ``exp(i xi f(Y_t))``."""
    vals = evaluate_points(f, ens.at(t))
    return _estimate(np.exp(1j * xi * vals), {"xi": float(xi), "t": float(t)})


def two_time_char_fn(ens: PathEnsemble, f: SpectralField, xi1: float, xi2: float,
                     t1: float, t2: float) -> CharFnEstimate:
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    v1 = evaluate_points(f, ens.at(t1))
    v2 = evaluate_points(f, ens.at(t2))
    return _estimate(np.exp(1j * (xi1 * v1 + xi2 * v2)),
                     {"xi1": float(xi1), "xi2": float(xi2), "t1": float(t1), "t2": float(t2)})


def mean_estimate(ens: PathEnsemble, f: SpectralField, t: float) -> CharFnEstimate:
    """Plain ``E[f(Y_t)]`` (the xi-derivative of the characteristic function at 0)."""
    vals = evaluate_points(f, ens.at(t)).astype(complex)
    return _estimate(vals, {"moment": 1, "t": float(t)})


def exp_field(f: SpectralField, xi: float, res=None, tol: float = TRUNCATION_TOL):
    """Real and imaginary parts of ``exp(i xi f)`` on ``f``'s lattice."""
    lat = f.lattice
    if res is None:
        res = max(64, 8 * lat.side) if lat.d == 1 else 4 * lat.side
    res = (int(res),) * lat.d
    vals = evaluate_points(f, grid_points(res))
    parts = []
    for g in (GridField(np.cos(xi * vals)), GridField(np.sin(xi * vals))):
        loss = truncation_loss(g, lat)
        if loss > tol:
            raise TruncationError(
                f"exp(i xi f) loses {loss:.2e} of its energy outside K={lat.K}; increase K")
        parts.append(field_from_grid(g, lat))
    return parts[0], parts[1]


def spectral_char_fn(process, mode: str, f: SpectralField, xi: float, t: float,
                     g: SpectralField, c: float | None = None,
                     kernel_tol: float = LIMIT_KERNEL_TOL) -> complex:
    """``<g, T_t exp(i xi f)>`` with the finite-c or the limit semigroup.

    ``process`` is a ``LimitProcess``. In limit mode ``exp(i xi f)`` is
    replaced by its kernel projection; for an invariant ``f`` the truncated
    exponential is only approximately in the numerical kernel, so its
    relative distance from the kernel has to stay below ``kernel_tol``.
    ``g`` enters through its kernel projection.
    """
    re, im = exp_field(f, xi)
    if mode == "finite-c":
        if c is None:
            raise ValueError("finite-c mode needs c")
        return complex(inner(g, process.apply_semigroup(c, t, re)),
                       inner(g, process.apply_semigroup(c, t, im)))
    if mode == "limit":
        parts = []
        for p in (re, im):
            q = process.project(p)
            scale = max(norm(p), 1e-300)
            if norm(p - q) > kernel_tol * max(scale, 1.0):
                raise KernelMembershipError(
                    f"exp(i xi f) is {norm(p - q):.2e} away from the kernel span")
            parts.append(q)
        re, im = parts
        gp = process.project(g)
        return complex(inner(gp, process.apply_limit_semigroup(t, re)),
                       inner(gp, process.apply_limit_semigroup(t, im)))
    raise ValueError(f"unknown mode {mode!r}")


def path_modulus_report(ens: PathEnsemble, f: SpectralField, deltas, eps: float) -> list:
    """Empirical ``P(sup_{|s-t|<delta} |f(Y_s) - f(Y_t)| >= eps)`` per delta."""
    if ens.dense_states is None:
        raise ValueError("ensemble was simulated without dense storage")
    v = evaluate_points(f, ens.dense_states)
    tt = ens.dense_times
    rows = []
    for delta in deltas:
        hit = np.zeros(ens.n, dtype=bool)
        lag = 1
        while lag < tt.size:
            ok = (tt[lag:] - tt[:-lag]) < delta
            if not ok.any():
                break
            diff = np.abs(v[:, lag:] - v[:, :-lag])[:, ok]
            hit |= np.any(diff >= eps, axis=1)
            lag += 1
        p = float(hit.mean())
        rows.append({"delta": float(delta), "eps": float(eps), "prob": p,
                     "stderr": float(np.sqrt(p * (1 - p) / ens.n))})
    return rows


# ---------------------------------------------------------------- persistence
def save_ensemble(path, ens: PathEnsemble) -> None:
    """Binary layout: int64 d, n, m; float64 c; uint64 seed; then the
    ``(n, m, d)`` states row-major as little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(ens.d, ens.n, ens.times.size, ens.c, ens.seed))
        fh.write(np.ascontiguousarray(ens.states, dtype="<f8").tobytes())


def load_ensemble(path) -> dict:
    with open(path, "rb") as fh:
        d, n, m, c, seed = _HEADER.unpack(fh.read(_HEADER.size))
        states = np.frombuffer(fh.read(), dtype="<f8")
    if states.size != n * m * d:
        raise ValueError("truncated ensemble file")
    return {"d": d, "n": n, "m": m, "c": c, "seed": seed,
            "states": states.reshape(n, m, d).copy()}


def estimates_to_json(estimates: dict) -> str:
    return json.dumps({k: v.to_json() for k, v in estimates.items()}, indent=2, sort_keys=True)
