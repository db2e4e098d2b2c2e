"""Desk-scale acceptance suite.

Every criterion is a function ``criterion_<id>(ctx) -> CriterionResult``;
``run_criteria`` evaluates a selection and is shared by ``verify`` and the
test-suite. Heavy objects (assembled labs, chain graphs) are cached on the
``Context`` so one run builds each of them once.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import quotient as Q
from . import sde
from .limit import LimitProcess
from .resolvent import TAU_NULL, ResolventLab
from .scenarios import cellular2d, example3, irrational, stream_function, zero_field
from .spectral import ModeLattice, SpectralField, eval_on_grid, multiply, norm, norm_1lambda

LAMBDAS = (0.5, 1.0, 2.0)


@dataclass
class CriterionResult:
    id: str
    title: str
    passed: bool
    metrics: dict
    seconds: float = 0.0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        brief = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items()
                          if np.isscalar(v))
        return f"[{flag}] criterion {self.id}: {self.title} ({brief})"

    def to_json(self) -> dict:
        return {"id": self.id, "title": self.title, "passed": bool(self.passed),
                "metrics": _plain(self.metrics)}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.3e}"
    return str(v)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


@dataclass
class Context:
    """Shared settings and caches for one acceptance run."""

    tau_null: float = TAU_NULL
    seed: int = 20240611
    mc_paths: int = 20_000
    quotient_samples: int = 400
    _labs: dict = field(default_factory=dict, repr=False)
    _procs: dict = field(default_factory=dict, repr=False)
    _graphs: dict = field(default_factory=dict, repr=False)

    def lab(self, name: str, K: int | None = None) -> ResolventLab:
        b, d, K0 = {"example3": (example3, 3, 4), "cellular2d": (cellular2d, 2, 8),
                    "irrational": (irrational, 2, 4), "zero": (lambda: zero_field(2), 2, 4)}[name]
        K = K or K0
        key = (name, K)
        if key not in self._labs:
            self._labs[key] = ResolventLab(b(), ModeLattice(d, K), tau_null=self.tau_null)
        return self._labs[key]

    def process(self, name: str) -> LimitProcess:
        if name not in self._procs:
            self._procs[name] = LimitProcess(self.lab(name))
        return self._procs[name]

    def graph(self, name: str) -> Q.ChainGraph:
        if name not in self._graphs:
            n = self.quotient_samples
            if name == "example3":
                g = Q.build_chain_graph(example3(), n, 500.0, 0.05, stride=2)
            elif name == "cellular2d":
                g = Q.build_chain_graph(cellular2d(), n, 50.0, 0.05, stride=2)
            elif name == "irrational":
                # linear closed-form flow: a coarse time step loses nothing; the
                # dense cloud needs a short gap radius to keep the search small
                g = Q.build_chain_graph(irrational(), n, 2000.0, 0.5, stride=1, cutoff=0.01)
            elif name == "zero":
                g = Q.build_chain_graph(zero_field(2), 64, 1.0, 0.5, stride=1)
            else:
                raise KeyError(name)
            self._graphs[name] = g
        return self._graphs[name]

    def rng(self, salt: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, salt])


def _cos(lat, k, a=1.0):
    return SpectralField.cos(lat, k, a)


def _e(lat, j, m=1):
    k = [0] * lat.d
    k[j] = m
    return tuple(k)


# ------------------------------------------------------------- criteria
def criterion_K0(ctx: Context) -> CriterionResult:
    """Kernel dimensions against their analytic values."""
    expected = {"example3": 2 * 4 + 1, "irrational": 1, "zero": 9 ** 2}
    got = {n: ctx.lab(n).kernel_basis(1.0).dim for n in expected}
    ok = all(got[n] == expected[n] for n in expected)
    m = {f"dim_{n}": got[n] for n in expected}
    m.update({f"expected_{n}": expected[n] for n in expected})
    m["tau_null"] = ctx.tau_null
    return CriterionResult("K0", "kernel dimensions", ok, m)


def criterion_1(ctx):
    lab = ctx.lab("example3")
    g = _cos(lab.lattice, _e(lab.lattice, 0))
    worst = 0.0
    for c in (0.0, 10.0, 100.0):
        for lam in LAMBDAS:
            worst = max(worst, norm(lab.solve_resolvent(c, lam, g) - g / (1 + lam)))
    return CriterionResult("1", "eigenfunction resolvent", worst <= 1e-10,
                           {"max_error": worst, "tol": 1e-10})


def _random_fields(ctx, lat, n, salt):
    rng = ctx.rng(salt)
    return [SpectralField.random(lat, rng) for _ in range(n)]


def criterion_2(ctx):
    worst = {}
    for name in ("example3", "cellular2d"):
        lab = ctx.lab(name)
        w = 0.0
        for g in _random_fields(ctx, lab.lattice, 50, 2):
            for lam in LAMBDAS:
                p = lab.limit_resolvent(lam, g, "projection")
                s = lab.limit_resolvent(lam, g, "spectral")
                w = max(w, norm_1lambda(p - s, 1.0))
        worst[name] = w
    m = {f"max_gap_{k}": v for k, v in worst.items()}
    m["tol"] = 1e-8
    return CriterionResult("2", "route equivalence", max(worst.values()) <= 1e-8, m)


def criterion_3(ctx):
    worst = {}
    for name in ("example3", "cellular2d"):
        lab = ctx.lab(name)
        w = 0.0
        for g in _random_fields(ctx, lab.lattice, 20, 3):
            for c in (0, 1, -1, 10, -10, 100, -100):
                d = lab.finite_c_mode_formula(c, 1.0, g) - lab.solve_resolvent(c, 1.0, g)
                w = max(w, norm_1lambda(d, 1.0))
        worst[name] = w
    m = {f"max_gap_{k}": v for k, v in worst.items()}
    m["tol"] = 1e-8
    return CriterionResult("3", "mode-formula fidelity", max(worst.values()) <= 1e-8, m)


def criterion_4(ctx):
    pseudo = sa = 0.0
    for name in ("example3", "cellular2d"):
        lab = ctx.lab(name)
        fields = _random_fields(ctx, lab.lattice, 20, 4)
        rng = ctx.rng(40)
        for g in fields:
            for lam in LAMBDAS:
                for mu in LAMBDAS:
                    if lam == mu:
                        continue
                    Rm = lab.limit_resolvent(mu, g)
                    Rl = lab.limit_resolvent(lam, g)
                    pseudo = max(pseudo, norm((mu - lam) * lab.limit_resolvent(lam, Rm) - Rl + Rm))
        from .spectral import inner
        for lam in LAMBDAS:
            for _ in range(20):
                f = SpectralField.random(lab.lattice, rng)
                h = SpectralField.random(lab.lattice, rng)
                sa = max(sa, abs(inner(lab.limit_resolvent(lam, f), h)
                                 - inner(f, lab.limit_resolvent(lam, h))))
    ok = pseudo <= 1e-8 and sa <= 1e-10
    return CriterionResult("4", "pseudo-resolvent identity", ok,
                           {"pseudo_defect": pseudo, "self_adjoint_defect": sa,
                            "tol_pseudo": 1e-8, "tol_sa": 1e-10})


def _unit_interval_field(lat, rng, res=32):
    """Random field affinely mapped into ``[0, 1]`` on the ``res`` grid."""
    f = SpectralField.random(lat, rng)
    v = eval_on_grid(f, res).values
    lo, hi = float(v.min()), float(v.max())
    return (f - lo) / (hi - lo)


def criterion_5(ctx):
    lab = ctx.lab("example3")
    lat = lab.lattice
    rng = ctx.rng(5)
    gs = [(SpectralField.constant(lat) + _cos(lat, _e(lat, 0))) / 2]
    gs += [_unit_interval_field(lat, rng) for _ in range(10)]
    lo, hi, margin = np.inf, -np.inf, -np.inf
    for g in gs:
        gv = eval_on_grid(g, 32).values
        assert gv.min() >= -1e-12 and gv.max() <= 1 + 1e-12
        for lam in LAMBDAS:
            out = lam * lab.limit_resolvent(lam, g)
            v = eval_on_grid(out, 32).values
            lo, hi = min(lo, float(v.min())), max(hi, float(v.max()))
            margin = max(margin, norm(out) - norm(g))
    ok = lo >= -1e-8 and hi <= 1 + 1e-8 and margin <= 0
    return CriterionResult("5", "Markov + contraction", ok,
                           {"min_value": lo, "max_value": hi, "contraction_margin": margin})


def criterion_6(ctx):
    lab = ctx.lab("example3")
    g = _cos(lab.lattice, _e(lab.lattice, 0))
    rows = lab.strong_continuity_curve(g, [9.0, 99.0, 999.0])
    err = max(abs(r["dist_H"] - np.sqrt(0.5) / (1 + r["lambda"])) for r in rows)
    return CriterionResult("6", "strong continuity", err <= 1e-10,
                           {"max_error": err, "dist_999": rows[-1]["dist_H"]})


def criterion_7(ctx):
    perp = rng_ = 0.0
    for name in ("example3", "cellular2d"):
        lab = ctx.lab(name)
        lat = lab.lattice
        W = lab.kernel_basis(1.0).reorthonormalized()
        for g in _random_fields(ctx, lat, 20, 7):
            c = g.coeffs - W @ (W.conj().T @ g.coeffs)
            gp = SpectralField(lat, 0.5 * (c + np.conj(c[lat.neg])))
            for lam in LAMBDAS:
                perp = max(perp, norm(lab.limit_resolvent(lam, gp)))
                rng_ = max(rng_, lab.kernel_defect(lab.limit_resolvent(lam, g)))
    ok = perp <= 1e-10 and rng_ <= 1e-10
    return CriterionResult("7", "kernel/range", ok,
                           {"max_perp_norm": perp, "max_range_defect": rng_})


def criterion_8(ctx):
    lab = ctx.lab("example3")
    g = _cos(lab.lattice, _e(lab.lattice, 1))
    rows = lab.convergence_curve(g, 1.0, [10.0, 100.0])["rows"]
    ratio = rows[0]["dist_H"] / rows[1]["dist_H"]
    return CriterionResult("8", "convergence rate", 8 <= ratio <= 12,
                           {"dist_c10": rows[0]["dist_H"], "dist_c100": rows[1]["dist_H"],
                            "ratio": ratio, "K": lab.lattice.K})


def criterion_9(ctx):
    proc = ctx.process("example3")
    lat = proc.lattice
    W = proc.generator.basis
    # every basis vector is a function of x1; read off its |k1|^2 weights
    k1sq = lat.modes[:, 0].astype(float) ** 2
    expected = -(np.abs(W) ** 2 * k1sq[:, None]).sum(axis=0)
    M = proc.generator.matrix
    diag_err = float(np.max(np.abs(M - np.diag(expected))))
    expected_set = sorted(-float(k * k) for k in range(-lat.K, lat.K + 1))
    eig_err = float(np.max(np.abs(np.sort(proc.generator.eigenvalues) - expected_set)))
    rng = ctx.rng(9)
    heat = 0.0
    for _ in range(5):
        coeffs = np.zeros(lat.size, dtype=complex)
        on_axis = np.all(lat.modes[:, 1:] == 0, axis=1)
        coeffs[on_axis] = rng.normal(size=on_axis.sum()) + 1j * rng.normal(size=on_axis.sum())
        g = SpectralField(lat, 0.5 * (coeffs + np.conj(coeffs[lat.neg])))
        for t in (0.1, 0.5, 1.0, 2.0):
            ref = SpectralField(lat, g.coeffs * np.exp(-t * k1sq))
            heat = max(heat, norm(proc.apply_limit_semigroup(t, g) - ref))
    ok = diag_err <= 1e-10 and eig_err <= 1e-10 and heat <= 1e-10
    return CriterionResult("9", "limit generator", ok,
                           {"diag_error": diag_err, "eig_error": eig_err, "heat_error": heat})


def criterion_10(ctx):
    p3, pc = ctx.process("example3"), ctx.process("cellular2d")
    c1 = _cos(p3.lattice, _e(p3.lattice, 0))
    H = stream_function(pc.lattice)
    e1, eH = p3.dirichlet_form(c1, c1), pc.dirichlet_form(H, H)
    r1 = p3.dform_limit_curve(c1, c1, [1e3])[0]["value"]
    rH = pc.dform_limit_curve(H, H, [1e3])[0]["value"]
    rel = max(abs(r1 - e1) / e1, abs(rH - eH) / eH)
    ok = abs(e1 - 0.5) <= 1e-12 and abs(eH - 1.0) <= 1e-12 and rel <= 2e-3
    return CriterionResult("10", "Dirichlet form", ok,
                           {"E_cos": e1, "E_H": eH, "curve_rel_gap": rel})


def criterion_11(ctx):
    proc = ctx.process("cellular2d")
    H = stream_function(proc.lattice)
    rep = proc.semigroup_convergence_curve(multiply(H, H), 0.5, [1.0, 10.0, 100.0])
    d = [r["dist"] for r in rep.rows]
    ok = d[0] > d[1] > d[2] and d[2] < 0.2 * d[0]
    return CriterionResult("11", "semigroup convergence", ok,
                           {"dist_c1": d[0], "dist_c10": d[1], "dist_c100": d[2],
                            "final_over_initial": d[2] / d[0]})


def criterion_12(ctx):
    g3 = ctx.graph("example3")
    same = Q.quotient_distance(g3, (0.0, 0.0, 0.0), (0.0, np.pi, np.pi))
    pairs = [((0.0, 0.0, 0.0), (np.pi, 0.0, 0.0)), ((0.5, 1.0, 2.0), (2.0, 0.3, 4.0)),
             ((5.8, 2.0, 1.0), (0.3, 2.0, 1.0))]
    cross = 0.0
    for x, y in pairs:
        dx = abs(x[0] - y[0]) % (2 * np.pi)
        dx = min(dx, 2 * np.pi - dx)
        cross = max(cross, abs(Q.quotient_distance(g3, x, y) - dx) / dx)
    gz = ctx.graph("zero")
    zerr = float(np.max(np.abs(gz.distances - Q.torus_distance(
        gz.samples[:, None], gz.samples[None, :]))))
    zx, zy = (0.3, 1.2), (4.0, 6.0)
    zerr = max(zerr, abs(Q.quotient_distance(gz, zx, zy) - float(Q.torus_distance(zx, zy))))
    n_irr = Q.equivalence_classes(ctx.graph("irrational"), 0.1).n_classes
    ok = same <= 0.05 and cross <= 0.05 and zerr <= 1e-9 and n_irr == 1
    return CriterionResult("12", "quotient geometry", ok,
                           {"same_slice": same, "cross_slice_rel_err": cross,
                            "zero_field_err": zerr, "irrational_classes": n_irr})


ATLAS_DELTA = 0.005


def criterion_13(ctx):
    lab3, labc = ctx.lab("example3"), ctx.lab("cellular2d")
    p3, pc = ctx.process("example3"), ctx.process("cellular2d")
    l3 = lab3.lattice
    f3 = _cos(l3, _e(l3, 0)) + _cos(l3, _e(l3, 1))
    a3 = Q.equivalence_classes(ctx.graph("example3"), ATLAS_DELTA)
    d3 = Q.consistency_defect(f3, a3, p3.project)
    H = stream_function(labc.lattice)
    H2 = multiply(H, H)
    ac = Q.equivalence_classes(ctx.graph("cellular2d"), ATLAS_DELTA)
    dc = Q.consistency_defect(H2, ac, pc.project)
    ok = d3 <= 0.05 and dc <= 0.05
    return CriterionResult("13", "projection consistency", ok,
                           {"defect_example3": d3, "defect_cellular2d": dc,
                            "classes_example3": a3.n_classes, "classes_cellular2d": ac.n_classes})


def criterion_14(ctx):
    l3 = ctx.lab("example3").lattice
    a3 = Q.equivalence_classes(ctx.graph("example3"), ATLAS_DELTA)
    rep = Q.isometry_and_algebra_check(_cos(l3, _e(l3, 0)), SpectralField.sin(l3, _e(l3, 0)), a3)
    ok = abs(rep["isometry_value"] - 0.5) <= 0.02 and rep["product_defect"] <= 0.02
    return CriterionResult("14", "isometry/algebra", ok,
                           {"isometry_value": rep["isometry_value"],
                            "product_defect": rep["product_defect"],
                            "lift_defect": rep["lift_defect"]})


def criterion_15(ctx):
    proc = ctx.process("example3")
    lat = proc.lattice
    b = example3()
    f = _cos(lat, _e(lat, 0))
    g = SpectralField.constant(lat) + f
    m = {}
    ok = True
    for c in (0.0, 50.0):
        ens = sde.simulate(b, c, {"density": 1.0}, [0.25, 1.0], ctx.mc_paths, ctx.seed)
        for t in (0.25, 1.0):
            est = sde.char_fn(ens, f, 1.0, t)
            ref = sde.spectral_char_fn(proc, "finite-c", f, 1.0, t, g, c=c)
            z = max(abs(est.value.real - ref.real) / est.stderr_re,
                    abs(est.value.imag - ref.imag) / est.stderr_im)
            m[f"z_c{c:g}_t{t:g}"] = z
            ok &= z <= 3
        mean = sde.mean_estimate(ens, f, 1.0)
        zm = abs(mean.value.real - np.exp(-1) / 2) / mean.stderr_re
        m[f"z_mean_c{c:g}"] = zm
        ok &= zm <= 3
    return CriterionResult("15", "MC vs spectral", bool(ok), m)


MC16 = {"xi": 0.5, "t": 0.25, "init": {"density": 1.0, "mode": 2}}


def criterion_16(ctx):
    proc = ctx.process("cellular2d")
    lat = proc.lattice
    H = stream_function(lat)
    f = multiply(H, H)
    g = SpectralField.constant(lat) + _cos(lat, (2, 0))
    xi, t = MC16["xi"], MC16["t"]
    lim = sde.spectral_char_fn(proc, "limit", f, xi, t, g)
    gaps = {}
    for c in (1.0, 100.0):
        ens = sde.simulate(cellular2d(), c, MC16["init"], [t], ctx.mc_paths, ctx.seed)
        gaps[c] = abs(sde.char_fn(ens, f, xi, t).value - lim)
    return CriterionResult("16", "MC limit trend", gaps[100.0] < gaps[1.0],
                           {"gap_c1": gaps[1.0], "gap_c100": gaps[100.0]})


CRITERIA = {
    "K0": criterion_K0, "1": criterion_1, "2": criterion_2, "3": criterion_3,
    "4": criterion_4, "5": criterion_5, "6": criterion_6, "7": criterion_7,
    "8": criterion_8, "9": criterion_9, "10": criterion_10, "11": criterion_11,
    "12": criterion_12, "13": criterion_13, "14": criterion_14, "15": criterion_15,
    "16": criterion_16,
}


def run_criteria(ids=None, ctx: Context | None = None, echo=None) -> list:
    ctx = ctx or Context()
    out = []
    for cid in (ids or list(CRITERIA)):
        t0 = time.perf_counter()
        res = CRITERIA[str(cid)](ctx)
        res.seconds = time.perf_counter() - t0
        if echo:
            echo(res.line())
        out.append(res)
    return out
