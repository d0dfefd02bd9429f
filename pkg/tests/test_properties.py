"""Property-based checks of the structural identities and solver guarantees."""

import math

import numpy as np
from hypothesis import given, strategies as st

from dropletmm import kernels, oracles
from dropletmm.energy import HysteresisParams, dissipation, field_dirichlet_energy, minmax_identity_report
from dropletmm.evolution import ForcingSchedule, PartitionSpec
from dropletmm.instances import tiny_instance
from dropletmm.outputs import csv_text, pgm_bytes
from dropletmm.solver import MAX, MIN, MinimizeSpec, energy_of_mask, minimize

seeds = st.integers(min_value=0, max_value=2**31 - 1)
indices = st.integers(min_value=0, max_value=999)
params_st = st.builds(HysteresisParams, st.floats(0.01, 0.95), st.floats(0.01, 2.0))


def _solve(ins, amp, sel):
    spec = MinimizeSpec(ins.mask0, amp, sel, allow_guard_contact=True)
    return minimize(spec, ins.domain, ins.params)


@given(seeds, indices)
def test_extreme_minimizers_match_enumeration(seed, index):
    ins = tiny_instance(seed, index)
    bf = oracles.brute_force(ins.domain, ins.mask0, ins.amplitude, ins.params)
    tol = 1e-10 * max(1.0, abs(bf.min_energy))
    for sel, ref in ((MAX, bf.mask_union()), (MIN, bf.mask_intersection())):
        res = _solve(ins, ins.amplitude, sel)
        assert abs(res.breakdown.total_E - bf.min_energy) <= tol
        assert np.array_equal(res.profile.mask, ref)


@given(seeds, indices)
def test_argmin_set_is_a_lattice(seed, index):
    ins = tiny_instance(seed, index)
    ok, why = oracles.brute_force(ins.domain, ins.mask0, ins.amplitude, ins.params).lattice_closed()
    assert ok, why


@given(seeds, indices, st.floats(1.0, 1.6))
def test_forcing_comparison(seed, index, factor):
    ins = tiny_instance(seed, index)
    a, b = ins.amplitude, ins.amplitude * factor
    lo_a, hi_a = _solve(ins, a, MIN).profile.mask, _solve(ins, a, MAX).profile.mask
    lo_b, hi_b = _solve(ins, b, MIN).profile.mask, _solve(ins, b, MAX).profile.mask
    assert not np.any(lo_a & ~lo_b)
    assert not np.any(hi_a & ~hi_b)
    if b > a:
        assert not np.any(hi_a & ~lo_b)


@given(seeds, indices, st.data())
def test_minmax_inequality(seed, index, data):
    ins = tiny_instance(seed, index)
    d = ins.domain
    n = int(d.flippable.sum())
    bits = st.lists(st.booleans(), min_size=n, max_size=n)
    masks = []
    for _ in range(2):
        m = d.dirichlet.copy()
        m[d.flippable] = data.draw(bits)
        masks.append(m)
    amp = data.draw(st.floats(0.2, 2.0))
    p, _ = energy_of_mask(d, ins.params, ins.mask0, masks[0], amp)
    q, _ = energy_of_mask(d, ins.params, ins.mask0, masks[1], amp)
    rep = minmax_identity_report(ins.mask0, p, q, ins.params)
    assert rep.diss_count_defect == 0
    assert rep.energy_defect >= -1e-12 * max(1.0, abs(rep.energy_lhs))


@given(st.data(), params_st)
def test_dissipation_quasi_metric(data, p):
    n = data.draw(st.integers(1, 40))
    a, b, c = (np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n))) for _ in range(3))
    assert dissipation(a, a, p) == 0
    assert dissipation(a, c, p) <= dissipation(a, b, p) + dissipation(b, c, p) + 1e-12


@given(seeds, indices, st.floats(-0.5, 0.5))
def test_harmonic_field_minimizes_dirichlet_energy(seed, index, eps):
    ins = tiny_instance(seed, index)
    d = ins.domain
    prof, _ = energy_of_mask(d, ins.params, ins.mask0, ins.mask0, ins.amplitude)
    free = prof.mask & d.interior
    rng = np.random.default_rng(seed)
    pert = np.where(free, rng.standard_normal(d.shape), 0.0)
    base = field_dirichlet_energy(d, prof.u)
    assert field_dirichlet_energy(d, prof.u + eps * pert) >= base - 1e-12 * max(1.0, base)


@given(st.floats(0.05, 3.0), st.floats(0.0, 3.0), params_st)
def test_oracle_1d_global_minimum(F, s0, p):
    r = oracles.oracle_1d(F, s0, p)
    for s in np.linspace(1e-3, 10.0, 2001):
        assert r.energy <= oracles._energy_1d(F, s, s0, p) + 1e-12 * max(1.0, r.energy)
    if r.regime == oracles.PINNED:
        assert math.sqrt(p.q_receding) * s0 <= F <= math.sqrt(p.q_advancing) * s0


@given(st.floats(0.05, 2.0), st.floats(0.05, 2.0), st.floats(0.0, 1.5), params_st)
def test_oracle_1d_monotone_in_forcing(F1, F2, s0, p):
    lo, hi = sorted((F1, F2))
    assert oracles.oracle_1d(lo, s0, p).s_star <= oracles.oracle_1d(hi, s0, p).s_star + 1e-15


@given(st.floats(0.1, 5.0), st.floats(1.0, 3.0), params_st)
def test_radial_oracle_balance(F, rho0, p):
    r = oracles.oracle_radial(F, 1.0, rho0, p)
    slope = F / (r.rho_star * math.log(r.rho_star)) if r.rho_star > 1 else math.inf
    if r.regime == oracles.ADVANCING:
        assert math.isclose(slope, math.sqrt(p.q_advancing), rel_tol=1e-9)
    elif r.regime == oracles.RECEDING:
        assert math.isclose(slope, math.sqrt(p.q_receding), rel_tol=1e-9)
    else:
        assert math.sqrt(p.q_receding) - 1e-12 <= slope <= math.sqrt(p.q_advancing) + 1e-12


@given(st.lists(st.floats(0.01, 5.0), min_size=2, max_size=6), st.floats(0.05, 3.0))
def test_partition_fineness(amps, delta):
    if any(a == b for a, b in zip(amps[:-1], amps[1:])):
        return
    sched = ForcingSchedule(tuple(float(i) for i in range(len(amps))), tuple(amps))
    ts = PartitionSpec(delta).times(sched)
    assert set(sched.times) <= set(np.round(ts, 12))
    assert np.all(np.diff(ts) > 0) and np.max(np.diff(ts)) <= delta + 1e-9


@given(seeds, indices)
def test_kernel_backends_agree(seed, index):
    ins = tiny_instance(seed, index)
    args = oracles.reduced_problem(ins.domain, ins.mask0, ins.amplitude, ins.params)[1:]
    ref = np.asarray(kernels.get_backend("python").brute_force_energies(*args))
    got = np.asarray(kernels.brute_force_energies(*args))
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12, equal_nan=True)


@given(st.integers(1, 12), st.integers(1, 12), st.data())
def test_pgm_header_and_payload(h, w, data):
    vals = data.draw(st.lists(st.integers(0, 255), min_size=h * w, max_size=h * w))
    img = np.array(vals, dtype=np.uint8).reshape(h, w)
    raw = pgm_bytes(img)
    header = f"P5\n{w} {h}\n255\n".encode()
    assert raw.startswith(header) and raw[len(header):] == img.tobytes()


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_csv_floats_roundtrip(xs):
    lines = csv_text(["v"], [[x] for x in xs]).splitlines()[1:]
    assert [float(v) for v in lines] == [float(x) for x in xs]
