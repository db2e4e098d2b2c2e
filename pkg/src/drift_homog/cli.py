"""Experiment runner: validated YAML configs, staged pipelines, report files.

    drift-homog run --config cfg.yaml --stages assemble,resolvent
    drift-homog list-scenarios
    drift-homog verify --config cfg.yaml

Exit codes: 0 ok, 1 a check failed, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__
from . import acceptance
from . import quotient as Q
from . import sde
from .limit import LimitProcess
from .operators import antisymmetry_defect, validate_divergence_free
from .resolvent import TAU_NULL, ResolventLab
from .scenarios import SCENARIOS, get_scenario, list_scenarios, stream_function
from .spectral import ModeLattice, SpectralField, multiply

STAGES = ("assemble", "resolvent", "limit", "semigroup", "quotient", "simulate")
WORKERS_ENV = "DRIFT_HOMOG_WORKERS"

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


class StageDependencyError(ConfigError):
    pass


_NUM_LIST = {"type": "array", "items": {"type": "number"}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario"],
    "properties": {
        "scenario": {"enum": sorted(SCENARIOS)},
        "lattice": {
            "type": "object", "additionalProperties": False,
            "properties": {"d": {"enum": [1, 2, 3]},
                           "K": {"type": "integer", "minimum": 1, "maximum": 16}},
        },
        "drift": {"type": "object"},
        "tau_null": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "lambdas": {**_NUM_LIST, "items": {"type": "number", "exclusiveMinimum": 0}},
        "cs": _NUM_LIST,
        "times": {**_NUM_LIST, "items": {"type": "number", "exclusiveMinimum": 0}},
        "quotient": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n_samples": {"type": "integer", "minimum": 2},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "stride": {"type": "integer", "minimum": 1},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "budget": {"type": "integer", "minimum": 1},
                "cutoff": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "mc": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "cs": _NUM_LIST,
                "xi": {"type": "number"},
                "init": {},
            },
        },
        "verify": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "criteria": {"type": "array", "minItems": 1,
                             "items": {"enum": list(acceptance.CRITERIA)}},
                "mc_paths": {"type": "integer", "minimum": 2},
                "quotient_samples": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "output": {"type": "string", "minLength": 1},
    },
}


def _defaults(scenario: str) -> dict:
    sc = get_scenario(scenario)
    q = {"example3": (400, 500.0, 0.05, 2, 0.05), "cellular2d": (400, 50.0, 0.05, 2, 0.05),
         "irrational": (400, 2000.0, 0.5, 1, 0.01), "zero": (64, 1.0, 0.5, 1, 0.05)}[scenario]
    return {
        "scenario": scenario,
        "lattice": {"d": sc.d, "K": sc.K},
        "drift": {},
        "tau_null": TAU_NULL,
        "lambdas": [0.5, 1.0, 2.0],
        "cs": [0.0, 1.0, 10.0, 100.0, 1000.0],
        "times": [0.25, 1.0],
        "quotient": {"n_samples": q[0], "T": q[1], "h": q[2], "stride": q[3],
                     "cutoff": q[4], "delta": acceptance.ATLAS_DELTA, "budget": 12_000_000},
        "mc": {"n": 20_000, "seed": 12345, "cs": [0.0, 50.0],
               "xi": 0.5 if scenario == "cellular2d" else 1.0,
               "init": {"density": 1.0}},
        "verify": {"criteria": list(acceptance.CRITERIA), "mc_paths": 20_000,
                   "quotient_samples": 400, "seed": 20240611},
        "output": "out",
    }


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("drift",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ScenarioConfig:
    """Schema-validated configuration with every default filled in."""

    data: dict

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
        try:
            jsonschema.validate(raw, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"{where}: {exc.message}") from None
        data = _merge(_defaults(raw["scenario"]), raw)
        init = data["mc"]["init"]
        try:
            sde.parse_init(init, data["lattice"]["d"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"mc/init: {exc}") from None
        sc = get_scenario(data["scenario"])
        if data["lattice"]["d"] != sc.d and data["scenario"] != "zero":
            raise ConfigError(f"lattice/d: scenario {sc.name} lives in dimension {sc.d}")
        return cls(data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from None
        return cls.from_dict(raw or {})

    def __getitem__(self, key):
        return self.data[key]

    @property
    def canonical(self) -> str:
        # the output location does not affect results, so it stays out of the hash
        data = {k: v for k, v in self.data.items() if k != "output"}
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical.encode()).hexdigest()

    def field(self):
        sc = get_scenario(self["scenario"])
        params = dict(self["drift"])
        if sc.name == "zero":
            params["d"] = self["lattice"]["d"]
        return sc.field(**params)

    def lattice(self) -> ModeLattice:
        return ModeLattice(self["lattice"]["d"], self["lattice"]["K"])


@dataclass
class RunReport:
    config: dict
    stages: dict = field(default_factory=dict)
    files: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    version: str = __version__

    @property
    def ok(self) -> bool:
        return all(s["status"] == "ok" for s in self.stages.values())

    def to_json(self) -> dict:
        return {"ok": self.ok, "version": self.version, "config": self.config,
                "stages": self.stages, "files": self.files, "timings": self.timings}


# ------------------------------------------------------------- file output
class Writer:
    def __init__(self, cfg: ScenarioConfig, report: RunReport):
        self.cfg = cfg
        self.report = report
        self.out = Path(cfg["output"])
        self.out.mkdir(parents=True, exist_ok=True)

    def _name(self, stage, artifact, ext):
        return self.out / f"{self.cfg['scenario']}_{stage}_{artifact}.{ext}"

    def _sidecar(self, path: Path):
        meta = path.with_name(path.name + ".meta.json")
        meta.write_text(json.dumps({"file": path.name, "config_hash": self.cfg.hash,
                                    "version": __version__}, sort_keys=True, indent=2) + "\n")
        self.report.files.append(meta.name)

    def csv(self, stage, artifact, header, rows):
        path = self._name(stage, artifact, "csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
        self.report.files.append(path.name)
        self._sidecar(path)

    def json(self, stage, artifact, payload):
        path = self._name(stage, artifact, "json")
        path.write_text(json.dumps(acceptance._plain(payload), sort_keys=True, indent=2) + "\n")
        self.report.files.append(path.name)
        self._sidecar(path)


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# ------------------------------------------------------------------ stages
def _probe_fields(name: str, lat: ModeLattice):
    """(non-invariant probe g, invariant probe psi) per scenario."""
    e = lambda j, m=1: tuple(m if i == j else 0 for i in range(lat.d))
    g = SpectralField.cos(lat, e(min(1, lat.d - 1)))
    if name == "cellular2d":
        H = stream_function(lat)
        return SpectralField.cos(lat, e(0)), multiply(H, H)
    if name == "example3":
        return g, SpectralField.cos(lat, e(0)) + SpectralField.cos(lat, e(0, 2))
    if name == "irrational":
        return SpectralField.cos(lat, e(0)), SpectralField.constant(lat)
    return SpectralField.cos(lat, e(0)), SpectralField.cos(lat, e(0))


class Pipeline:
    def __init__(self, cfg: ScenarioConfig, report: RunReport):
        self.cfg = cfg
        self.w = Writer(cfg, report)
        self.lab: ResolventLab | None = None
        self.proc: LimitProcess | None = None
        self.b = cfg.field()
        self.lattice = cfg.lattice()

    def assemble(self):
        div = validate_divergence_free(self.b)
        self.lab = ResolventLab(self.b, self.lattice, tau_null=self.cfg["tau_null"])
        anti = antisymmetry_defect(self.lab.B)
        kb = self.lab.kernel_basis(self.cfg["lambdas"][0])
        expected = _expected_kernel_dim(self.cfg["scenario"], self.lattice)
        checks = {"divergence": div.passed, "antisymmetry": anti <= 1e-12,
                  "kernel_dimension": expected is None or kb.dim == expected}
        self.w.json("assemble", "operators", {
            "modes": self.lattice.size, "divergence_defect": div.max_defect,
            "antisymmetry_defect": anti, "kernel_dim": kb.dim,
            "expected_kernel_dim": expected, "tau_null": self.cfg["tau_null"],
            "ambiguous": kb.report.ambiguous, "checks": checks})
        s = kb.report.singular_values
        self.w.csv("assemble", "singular_values", ["index", "sigma"], enumerate(s))
        return checks

    def resolvent(self):
        g, _ = _probe_fields(self.cfg["scenario"], self.lattice)
        lams = self.cfg["lambdas"]
        lam = 1.0 if 1.0 in lams else lams[0]
        curve = self.lab.convergence_curve(g, lam, self.cfg["cs"])
        self.w.csv("resolvent", "convergence", ["c", "dist_H", "dist_H1"],
                   [(r["c"], r["dist_H"], r["dist_H1"]) for r in curve["rows"]])
        rng = np.random.default_rng(self.cfg["mc"]["seed"])
        props, route = [], 0.0
        for i, l1 in enumerate(lams):
            for l2 in lams[i + 1:]:
                props.append(self.lab.verify_limit_properties(l1, l2, g, rng))
            self.lab.limit_resolvent(l1, g, cross_check=True)
            f = SpectralField.random(self.lattice, rng)
            p = self.lab.limit_resolvent(l1, f, "projection")
            s = self.lab.limit_resolvent(l1, f, "spectral")
            from .spectral import norm_1lambda
            route = max(route, norm_1lambda(p - s, 1.0))
        checks = {"route_agreement": route <= 1e-8}
        if props:
            checks.update({
                "pseudo_resolvent": max(p["pseudo_resolvent_defect"] for p in props) <= 1e-8,
                "self_adjoint": max(p["self_adjoint_defect"] for p in props) <= 1e-10,
                "contraction": max(p["contraction_margin"] for p in props) <= 1e-12,
                "kernel": max(p["kernel_check"] for p in props) <= 1e-10})
        self.w.json("resolvent", "properties", {"slope": curve["slope"], "route_gap": route,
                                                "properties": props, "checks": checks})
        return checks

    def limit(self):
        self.proc = LimitProcess(self.lab, self.cfg["lambdas"][0])
        gen = self.proc.generator
        eig = gen.eigenvalues
        self.w.json("limit", "generator", {**gen.to_json(), "eigenvalues": eig.tolist()})
        _, psi = _probe_fields(self.cfg["scenario"], self.lattice)
        lams = [1.0, 10.0, 100.0, 1000.0]
        rows = self.proc.dform_limit_curve(psi, psi, lams)
        E = self.proc.dirichlet_form(psi, psi)
        self.w.csv("limit", "dform", ["lambda", "value", "E_star"],
                   [(r["lambda"], r["value"], E) for r in rows])
        vals = [r["value"] for r in rows]
        return {"negative_semidefinite": bool(np.all(eig <= 1e-10)),
                "dform_monotone": bool(np.all(np.diff(vals) >= -1e-12)),
                "dform_limit": abs(vals[-1] - E) <= 1e-2 * max(abs(E), 1e-12)}

    def semigroup(self):
        if self.proc is None:
            self.proc = LimitProcess(self.lab, self.cfg["lambdas"][0])
        _, psi = _probe_fields(self.cfg["scenario"], self.lattice)
        cs = [c for c in self.cfg["cs"] if c >= 0]
        rows = []
        mono = True
        for t in [0.0] + list(self.cfg["times"]):
            if t == 0:
                rows += [(c, 0.0, 0.0) for c in cs]
                continue
            rep = self.proc.semigroup_convergence_curve(psi, t, cs)
            rows += rep.to_csv_rows()
            d = [r["dist"] for r in rep.rows]
            mono &= len(d) < 2 or d[-1] <= d[-2] + 1e-12
        self.w.csv("semigroup", "convergence", ["c", "t", "dist"], rows)
        return {"eventual_decrease": bool(mono)}

    def quotient(self):
        q = self.cfg["quotient"]
        graph = Q.build_chain_graph(self.b, q["n_samples"], q["T"], q["h"],
                                    stride=q["stride"], cutoff=q["cutoff"],
                                    budget=q["budget"])
        atlas = Q.equivalence_classes(graph, q["delta"])
        self.w.json("quotient", "atlas", atlas.to_json())
        D = graph.distances
        self.w.csv("quotient", "distances", ["u"] + [f"z{j}" for j in range(graph.n)],
                   [[i] + list(D[i]) for i in range(graph.n)])
        tor = Q.torus_distance(graph.samples[:, None], graph.samples[None, :])
        checks = {"below_torus_distance": bool(np.all(D <= tor + 1e-12)),
                  "symmetric": bool(np.allclose(D, D.T, rtol=0, atol=0)),
                  "weights_sum": abs(float(atlas.weights.sum()) - 1) <= 1e-12}
        if self.lab is not None:
            proc = self.proc or LimitProcess(self.lab, self.cfg["lambdas"][0])
            _, psi = _probe_fields(self.cfg["scenario"], self.lattice)
            g, _ = _probe_fields(self.cfg["scenario"], self.lattice)
            f = psi + g
            defect = Q.consistency_defect(f, atlas, proc.project)
            self.w.json("quotient", "consistency", {"defect": defect,
                                                    "n_classes": atlas.n_classes})
            checks["consistency"] = defect <= 0.05
        return checks

    def simulate(self):
        mc = self.cfg["mc"]
        proc = self.proc or LimitProcess(self.lab, self.cfg["lambdas"][0])
        psi = _mc_observable(self.cfg["scenario"], self.lattice)
        init = sde.parse_init(mc["init"], self.lattice.d)
        g = _density_field(init, self.lattice)
        rows, est_json, ok = [], {}, True
        for c in mc["cs"]:
            ens = sde.simulate(self.b, c, init, self.cfg["times"], mc["n"], mc["seed"])
            for t in self.cfg["times"]:
                est = sde.char_fn(ens, psi, mc["xi"], t)
                ref = sde.spectral_char_fn(proc, "finite-c", psi, mc["xi"], t, g, c=c)
                within = est.within(ref)
                ok &= within
                rows.append((c, t, est.value.real, est.value.imag, est.stderr_re,
                             est.stderr_im, ref.real, ref.imag, int(within)))
                est_json[f"c={c:g},t={t:g}"] = est.to_json()
        self.w.csv("simulate", "charfn",
                   ["c", "t", "re", "im", "stderr_re", "stderr_im", "ref_re", "ref_im", "within"],
                   rows)
        self.w.json("simulate", "estimates", est_json)
        return {"mc_vs_spectral": bool(ok)}


def _mc_observable(name: str, lat: ModeLattice) -> SpectralField:
    if name == "cellular2d":
        H = stream_function(lat)
        return multiply(H, H)
    return SpectralField.cos(lat, tuple(1 if i == 0 else 0 for i in range(lat.d)))


def _density_field(init: dict, lat: ModeLattice) -> SpectralField:
    one = SpectralField.constant(lat)
    if init["kind"] == "uniform":
        return one
    if init["kind"] == "density":
        k = [0] * lat.d
        k[init["axis"]] = init["mode"]
        return one + SpectralField.cos(lat, tuple(k), init["a"])
    raise ConfigError("spectral comparisons need a density initialization")


def _expected_kernel_dim(name: str, lat: ModeLattice):
    if name == "zero":
        return lat.size
    if name == "irrational":
        return 1
    if name == "example3":
        return lat.side
    return None


def _order(stages) -> list:
    stages = list(dict.fromkeys(s.strip() for s in stages if s.strip()))
    if not stages:
        raise ConfigError("empty stage list")
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stages {bad}; known: {list(STAGES)}")
    if "assemble" not in stages:
        raise StageDependencyError(f"stages {stages} need 'assemble'")
    return [s for s in STAGES if s in stages]


def run_experiment(cfg: ScenarioConfig, stages) -> RunReport:
    order = _order(stages)
    report = RunReport(cfg.data)
    pipe = Pipeline(cfg, report)
    for stage in order:
        t0 = time.perf_counter()
        try:
            checks = getattr(pipe, stage)()
            status = "ok" if all(checks.values()) else "check_failed"
            report.stages[stage] = {"status": status, "checks": checks}
        except Exception as exc:  # noqa: BLE001 - recorded in the report
            report.stages[stage] = {"status": "error", "error": f"{type(exc).__name__}: {exc}"}
            report.timings[stage] = time.perf_counter() - t0
            break
        report.timings[stage] = time.perf_counter() - t0
    _write_report(pipe.w.out / f"{cfg['scenario']}_run_report.json", report)
    return report


def _write_report(path: Path, report: RunReport):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(acceptance._plain(report.to_json()), sort_keys=True, indent=2) + "\n")
    os.replace(tmp, path)


def verify_all(cfg: ScenarioConfig, echo=None) -> RunReport:
    """Run the acceptance criteria selected in ``verify.criteria``."""
    v = cfg["verify"]
    ctx = acceptance.Context(tau_null=cfg["tau_null"], seed=v["seed"],
                             mc_paths=v["mc_paths"], quotient_samples=v["quotient_samples"])
    report = RunReport(cfg.data)
    w = Writer(cfg, report)
    results = []
    for cid in v["criteria"]:
        t0 = time.perf_counter()
        try:
            res = acceptance.CRITERIA[cid](ctx)
            report.stages[f"criterion_{cid}"] = {
                "status": "ok" if res.passed else "check_failed", "title": res.title}
        except Exception as exc:  # noqa: BLE001
            res = acceptance.CriterionResult(cid, "error", False,
                                             {"error": f"{type(exc).__name__}: {exc}"})
            report.stages[f"criterion_{cid}"] = {"status": "error", "error": res.metrics["error"]}
        res.seconds = time.perf_counter() - t0
        report.timings[f"criterion_{cid}"] = res.seconds
        if echo:
            echo(res.line())
        results.append(res)
    w.json("verify", "criteria", [r.to_json() for r in results])
    w.csv("verify", "summary", ["criterion", "passed"], [(r.id, int(r.passed)) for r in results])
    _write_report(w.out / f"{cfg['scenario']}_verify_report.json", report)
    return report


# -------------------------------------------------------------------- main
def _workers(arg) -> int:
    raw = arg if arg is not None else os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"worker count must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("worker count must be positive")
    return n


def _cap_threads(n: int):
    # numpy/scipy BLAS pools honour these when set before first use
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _error(msg: str, kind: str) -> int:
    print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
    return EXIT_USAGE


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="drift-homog", description=__doc__.splitlines()[0])
    parser.add_argument("--workers", type=str, default=None,
                        help=f"cap on worker threads (default: ${WORKERS_ENV} or 1)")
    sub = parser.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="run pipeline stages")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--stages", default=",".join(STAGES))
    sub.add_parser("list-scenarios", help="print the scenario registry")
    p_ver = sub.add_parser("verify", help="run the acceptance criteria")
    p_ver.add_argument("--config", required=True)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        _cap_threads(_workers(args.workers))
        if args.cmd == "list-scenarios":
            print(list_scenarios())
            return EXIT_OK
        cfg = ScenarioConfig.load(args.config)
        if args.cmd == "run":
            report = run_experiment(cfg, args.stages.split(","))
            for name, st in report.stages.items():
                print(f"{name}: {st['status']}")
        else:
            report = verify_all(cfg, echo=print)
        return EXIT_OK if report.ok else EXIT_CHECK
    except StageDependencyError as exc:
        return _error(str(exc), "dependency")
    except ConfigError as exc:
        return _error(str(exc), "schema")


if __name__ == "__main__":
    sys.exit(main())
