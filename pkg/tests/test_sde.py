from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from drift_homog import sde
from drift_homog.resolvent import KernelMembershipError
from drift_homog.scenarios import cellular2d, example3, zero_field
from drift_homog.spectral import ModeLattice, SpectralField

TWO_PI = 2 * np.pi


def _wrapped_normal_cdf(x, var, terms=6):
    s = np.sqrt(var)
    out = np.zeros_like(np.asarray(x, float))
    for j in range(-terms, terms + 1):
        out += stats.norm.cdf((x + TWO_PI * j) / s) - stats.norm.cdf(TWO_PI * j / s)
    return out


def test_determinism_and_batch_independence():
    b = example3()
    a = sde.simulate(b, 5.0, "uniform", [0.1, 0.2], 50, 9)
    c = sde.simulate(b, 5.0, "uniform", [0.1, 0.2], 50, 9)
    assert np.array_equal(a.states, c.states)
    # a different block size reorganizes the draws without changing them
    d = sde.simulate(b, 5.0, "uniform", [0.1, 0.2], 50, 9, block=7)
    assert np.array_equal(a.states, d.states)
    # the first paths do not depend on how many paths are simulated
    e = sde.simulate(b, 5.0, "uniform", [0.1, 0.2], 10, 9)
    assert np.array_equal(a.states[:10], e.states)


def test_invalid_inputs():
    b = example3()
    with pytest.raises(ValueError):
        sde.simulate(b, 1.0, {"density": 1.5}, [1.0], 10, 0)
    with pytest.raises(ValueError):
        sde.simulate(b, 1.0, "uniform", [], 10, 0)
    with pytest.raises(ValueError):
        sde.simulate(b, 1.0, "uniform", [1.0], 0, 0)


def test_brownian_variance_at_c0():
    t = 0.5
    ens = sde.simulate(zero_field(3), 0.0, {"point": [0.0, 0.0, 0.0]}, [t], 10_000, 3,
                       rule=sde.StepRule(dt0=0.05))
    # unwrap: increments are small compared to pi with t = 0.5
    x = ens.at(t)
    inc = np.where(x > np.pi, x - TWO_PI, x)
    n = inc.shape[0]
    var = inc.var(axis=0, ddof=1)
    se = np.sqrt(2.0 / (n - 1)) * 2 * t
    assert np.all(np.abs(var - 2 * t) <= 3 * se)


@pytest.mark.parametrize("c", [0.0, 40.0])
def test_x1_marginal_is_wrapped_normal(c):
    t = 0.5
    ens = sde.simulate(example3(), c, {"point": [0.0, 1.0, 2.0]}, [t], 10_000, 11)
    x1 = ens.at(t)[:, 0]
    res = stats.kstest(x1, lambda x: _wrapped_normal_cdf(x, 2 * t))
    crit = 1.628 / np.sqrt(x1.size)   # 1% critical value
    assert res.statistic < crit


def test_density_init_mean():
    lat = ModeLattice(3, 2)
    ens = sde.simulate(example3(), 0.0, {"density": 1.0}, [0.01], 20_000, 4)
    est = sde.mean_estimate(ens, SpectralField.cos(lat, (1, 0, 0)), 0.0)
    assert abs(est.value.real - 0.5) <= 3 * est.stderr_re


def test_char_fn_examples():
    lat = ModeLattice(3, 4)
    f = SpectralField.cos(lat, (1, 0, 0))
    ens = sde.simulate(example3(), 10.0, "uniform", [0.5, 1.0], 4000, 5)
    e0 = sde.char_fn(ens, f, 0.0, 0.5)
    assert e0.value == 1 and e0.stderr_re == 0 and e0.stderr_im == 0
    m = sde.mean_estimate(ens, f, 1.0)
    assert abs(m.value.real) <= 3 * m.stderr_re
    est = sde.char_fn(ens, f, 1.0, 1.0)
    assert abs(est.value) <= 1 + 3 * est.stderr
    with pytest.raises(sde.GridMismatch):
        sde.char_fn(ens, f, 1.0, 0.3)


def test_two_time_examples():
    lat = ModeLattice(3, 4)
    f = SpectralField.cos(lat, (1, 0, 0))
    e = {c: sde.simulate(example3(), c, {"density": 0.5}, [0.5, 1.0], 4000, 21) for c in (0.0, 50.0)}
    z = sde.two_time_char_fn(e[0.0], f, 0.0, 0.0, 0.5, 1.0)
    assert z.value == 1
    one = sde.char_fn(e[0.0], f, 0.7, 0.5)
    red = sde.two_time_char_fn(e[0.0], f, 0.7, 0.0, 0.5, 1.0)
    assert red.value == one.value
    a = sde.two_time_char_fn(e[0.0], f, 0.7, -1.1, 0.5, 1.0)
    b = sde.two_time_char_fn(e[50.0], f, 0.7, -1.1, 0.5, 1.0)
    se = np.hypot(a.stderr_re, b.stderr_re)
    assert abs(a.value.real - b.value.real) <= 3 * se
    with pytest.raises(ValueError):
        sde.two_time_char_fn(e[0.0], f, 1.0, 1.0, 1.0, 0.5)


def test_spectral_char_fn_t0(proc3):
    lat = proc3.lattice
    f = SpectralField.cos(lat, (1, 0, 0))
    one = SpectralField.constant(lat)
    z = sde.spectral_char_fn(proc3, "finite-c", f, 1.0, 0.0, one, c=3.0)
    assert z.real == pytest.approx(0.7651976865579666, abs=1e-12)
    assert abs(z.imag) < 1e-12
    g = one + SpectralField.cos(lat, (1, 0, 0), 0.5) + SpectralField.sin(lat, (0, 1, 0), 0.2)
    x = TWO_PI * np.arange(64) / 64
    ref = np.mean((1 + 0.5 * np.cos(x)) * np.exp(1j * np.cos(x)))
    z = sde.spectral_char_fn(proc3, "finite-c", f, 1.0, 0.0, g, c=0.0)
    assert abs(z - ref) < 1e-8


def test_spectral_limit_is_circle_heat(proc3):
    lat = proc3.lattice
    f = SpectralField.cos(lat, (1, 0, 0))
    g = SpectralField.constant(lat) + f
    t = 0.6
    x = TWO_PI * np.arange(256) / 256
    phi = np.exp(1j * np.cos(x))
    ph = np.fft.fft(phi) / x.size
    k = np.fft.fftfreq(x.size, 1 / x.size)
    heat = np.fft.ifft(ph * np.exp(-t * k ** 2)) * x.size
    ref = np.mean((1 + np.cos(x)) * heat)
    z = sde.spectral_char_fn(proc3, "limit", f, 1.0, t, g)
    assert abs(z - ref) < 1e-6


def test_spectral_errors(proc3):
    lat = proc3.lattice
    one = SpectralField.constant(lat)
    with pytest.raises(sde.TruncationError):
        sde.spectral_char_fn(proc3, "finite-c", SpectralField.cos(lat, (3, 0, 0)), 4.0, 0.5, one, c=1.0)
    with pytest.raises(KernelMembershipError):
        sde.spectral_char_fn(proc3, "limit", SpectralField.cos(lat, (0, 1, 0)), 1.0, 0.5, one)
    with pytest.raises(ValueError):
        sde.spectral_char_fn(proc3, "finite-c", SpectralField.cos(lat, (1, 0, 0)), 1.0, 0.5, one)


def test_mc_matches_spectral_cellular(procc):
    lat = procc.lattice
    f = SpectralField.cos(lat, (1, 0)) + SpectralField.cos(lat, (0, 1))
    g = SpectralField.constant(lat) + SpectralField.cos(lat, (2, 0), 0.8)
    ens = sde.simulate(cellular2d(), 5.0, {"density": 0.8, "mode": 2}, [0.25], 8000, 17)
    est = sde.char_fn(ens, f, 0.5, 0.25)
    ref = sde.spectral_char_fn(procc, "finite-c", f, 0.5, 0.25, g, c=5.0)
    assert est.within(ref, 3.0)


def test_uniform_law_preserved():
    ens = sde.simulate(cellular2d(), 20.0, "uniform", [1.0], 8000, 8)
    x = ens.at(1.0)
    bins = np.floor(x / (TWO_PI / 4)).astype(int).clip(0, 3)
    counts = np.bincount(bins[:, 0] * 4 + bins[:, 1], minlength=16)
    assert stats.chisquare(counts).pvalue > 0.01


def test_path_modulus():
    lat = ModeLattice(3, 2)
    f = SpectralField.cos(lat, (1, 0, 0))
    reps = {}
    for c in (0.0, 50.0):
        ens = sde.simulate(example3(), c, {"density": 1.0}, [0.5], 3000, 2, dense_stride=10)
        reps[c] = sde.path_modulus_report(ens, f, [0.2, 0.1, 0.05, 0.02, 0.0], 0.3)
    probs = [r["prob"] for r in reps[0.0]]
    assert all(a >= b for a, b in zip(probs, probs[1:]))
    assert probs[-1] == 0.0
    for a, b in zip(reps[0.0], reps[50.0]):
        assert abs(a["prob"] - b["prob"]) <= 3 * np.hypot(a["stderr"], b["stderr"]) + 1e-12
    big = sde.path_modulus_report(ens, f, [0.2], 4.1)
    assert big[0]["prob"] == 0.0
    with pytest.raises(ValueError):
        sde.path_modulus_report(sde.simulate(example3(), 0.0, "uniform", [0.1], 5, 0), f, [0.1], 0.1)


def test_persistence_roundtrip(tmp_path):
    ens = sde.simulate(example3(), 2.0, "uniform", [0.1, 0.2], 7, 3)
    path = tmp_path / "ens.bin"
    sde.save_ensemble(path, ens)
    data = sde.load_ensemble(path)
    assert (data["d"], data["n"], data["m"], data["c"], data["seed"]) == (3, 7, 3, 2.0, 3)
    assert np.array_equal(data["states"], ens.states)
    assert path.stat().st_size == 40 + 7 * 3 * 3 * 8


def test_estimates_json_stable():
    lat = ModeLattice(3, 2)
    ens = sde.simulate(example3(), 1.0, "uniform", [0.1], 100, 3)
    e = {"a": sde.char_fn(ens, SpectralField.cos(lat, (1, 0, 0)), 1.0, 0.1)}
    assert sde.estimates_to_json(e) == sde.estimates_to_json(e)


def test_step_rule():
    r = sde.StepRule()
    assert r.dt(0.0, 1.0) == 1e-3
    assert r.dt(100.0, 1.0) == pytest.approx(5e-4)
