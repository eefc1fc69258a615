import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from omnt.problem import (ProblemSpec, Signal, act, cryo_spec, group_compose,
                          group_elements, group_identity, group_inverse,
                          haar_sample, load_samples_bin, mra_spec, project,
                          random_signal, restrict_symmetric, sampleset_from_json,
                          sampleset_to_json, save_samples_bin, signal_from_json,
                          signal_to_json, simulate, spec_from_dict, spec_to_dict,
                          symmetric_support)
from omnt.rng import make_rng


def test_spec_validation():
    with pytest.raises(ValueError):
        ProblemSpec(group="cyclic", p=0)
    with pytest.raises(ValueError):
        ProblemSpec(group="cyclic", p=4, projection="mra_ring")  # p must be odd
    with pytest.raises(ValueError):
        ProblemSpec(group="symmetric", p=3, projection="equator")
    with pytest.raises(ValueError):
        ProblemSpec(group="cyclic", p=3, K=2, weights=(0.7, 0.7))
    with pytest.raises(ValueError):
        ProblemSpec(group="cyclic", p=3, sigma=-1.0)


def test_dimensions():
    assert mra_spec(7).dim == 7
    assert mra_spec(7, projected=True).dim_observed == 3
    spec = cryo_spec(2, 3)
    assert spec.dim == 2 * (3 + 5 + 7)
    assert spec.dim_observed == 2 * 7
    assert cryo_spec(2, 3, projected=False).dim_observed == spec.dim


def test_so3_indexing():
    spec = cryo_spec(2, 2, projected=False)
    seen = set()
    for s, l, a, b in spec.so3_blocks():
        assert b - a == 2 * l + 1
        for m in range(-l, l + 1):
            idx = spec.so3_index(s, l, m)
            assert a <= idx < b
            seen.add(idx)
    assert seen == set(range(spec.dim))


def test_haar_trivial_group_identity():
    spec = mra_spec(1)
    rng = make_rng(0, "haar")
    assert all(haar_sample(spec, rng).shift == 0 for _ in range(10))


def test_haar_cyclic_uniform():
    spec = mra_spec(5)
    rng = make_rng(1, "haar")
    counts = np.zeros(5)
    n = 10 ** 5
    for _ in range(n):
        counts[haar_sample(spec, rng).shift] += 1
    assert np.all(np.abs(counts / n - 0.2) < 0.01)


def test_haar_so3_angle_moment():
    # E[cos(phi)] under density (1/pi)(1-cos phi) is -1/2:
    # (1/pi) \int_0^pi (1 - cos p) cos p dp = (1/pi)(0 - pi/2)
    spec = cryo_spec(1, 1)
    rng = make_rng(2, "haar")
    n = 10 ** 5
    vals = [math.cos(haar_sample(spec, rng).angle) for _ in range(n)]
    assert abs(np.mean(vals) + 0.5) < 0.01


def test_haar_so3_angle_density_histogram():
    spec = cryo_spec(1, 1)
    rng = make_rng(3, "haar")
    n = 40000
    angles = np.array([haar_sample(spec, rng).angle for _ in range(n)])
    hist, edges = np.histogram(angles, bins=16, range=(0.0, math.pi), density=True)
    mids = 0.5 * (edges[:-1] + edges[1:])
    expected = (1.0 - np.cos(mids)) / math.pi
    assert np.abs(hist - expected).max() < 0.05


def test_act_cyclic_convention():
    spec = mra_spec(3)
    g = haar_sample(spec, make_rng(0, "x"))
    out = act(spec, type(g)("cyclic", shift=1), np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(out, [3.0, 1.0, 2.0])


def test_act_identity_and_norm():
    for spec in (mra_spec(6), ProblemSpec(group="symmetric", p=4),
                 cryo_spec(2, 3, projected=False)):
        theta = random_signal(spec, 3).vector
        assert np.allclose(act(spec, group_identity(spec), theta), theta)
        rng = make_rng(4, "act", spec.group)
        for _ in range(5):
            g = haar_sample(spec, rng)
            assert abs(np.linalg.norm(act(spec, g, theta))
                       - np.linalg.norm(theta)) < 1e-10


def test_group_action_law():
    rng = make_rng(5, "law")
    for spec in (mra_spec(7), ProblemSpec(group="symmetric", p=5),
                 cryo_spec(1, 3, projected=False)):
        theta = random_signal(spec, 8).vector
        for _ in range(10):
            g, h = haar_sample(spec, rng), haar_sample(spec, rng)
            lhs = act(spec, g, act(spec, h, theta))
            rhs = act(spec, group_compose(spec, g, h), theta)
            assert np.abs(lhs - rhs).max() < 1e-10


def test_group_inverse():
    rng = make_rng(6, "inv")
    for spec in (mra_spec(6), ProblemSpec(group="symmetric", p=4),
                 cryo_spec(1, 2, projected=False)):
        theta = random_signal(spec, 9).vector
        g = haar_sample(spec, rng)
        gi = group_inverse(spec, g)
        assert np.abs(act(spec, gi, act(spec, g, theta)) - theta).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=6), st.integers(min_value=0, max_value=6))
def test_cyclic_compose_property(a, b):
    spec = mra_spec(7)
    from omnt.problem import GroupElement

    g = group_compose(spec, GroupElement("cyclic", shift=a),
                      GroupElement("cyclic", shift=b))
    assert g.shift == (a + b) % 7


def test_project_mra_ring_example():
    spec = mra_spec(5, projected=True)
    out = project(spec, np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
    assert np.array_equal(out, [6.0, 6.0])


def test_project_equator_f1_m0_vanishes():
    # P_1^0(0) = 0, so a pure l=1, m=0 coefficient never reaches the equator
    spec = cryo_spec(1, 1)
    theta = np.zeros(spec.dim)
    theta[spec.so3_index(1, 1, 0)] = 1.0
    out = project(spec, theta)
    assert abs(out[1]) < 1e-15  # h_0 component of the only shell


def test_project_linearity_and_zero():
    spec = cryo_spec(2, 2)
    assert np.array_equal(project(spec, np.zeros(spec.dim)), np.zeros(spec.dim_observed))
    v1 = random_signal(spec, 1).vector
    v2 = random_signal(spec, 2).vector
    assert np.allclose(project(spec, v1 + 2 * v2),
                       project(spec, v1) + 2 * project(spec, v2))


def test_project_requires_projection():
    with pytest.raises(ValueError):
        project(mra_spec(5), np.zeros(5))


def test_simulate_noiseless_shifts():
    spec = mra_spec(3)
    sig = Signal(spec, np.array([[1.0, 2.0, 3.0]]))
    ss = simulate(spec, sig, 10, seed=0)
    shifts = {tuple(np.roll([1.0, 2.0, 3.0], g)) for g in range(3)}
    for y in ss.y:
        assert tuple(y) in shifts


def test_simulate_mean_matches_first_moment():
    from omnt.invariants import exact_moment

    spec = ProblemSpec(group="cyclic", p=4, sigma=1.0)
    sig = random_signal(spec, 11)
    n = 10 ** 5
    ss = simulate(spec, sig, n, seed=3)
    t1 = exact_moment(spec, sig, 1)
    bound = 3.0 * (1.0 + spec.sigma) / math.sqrt(n)
    for i in range(4):
        assert abs(ss.y[:, i].mean() - t1.get(i)) < bound


def test_simulate_degenerate_weights_match_k1():
    spec2 = ProblemSpec(group="cyclic", p=3, K=2, weights=(1.0, 0.0))
    theta1 = np.array([1.0, 2.0, 3.0])
    sig = Signal(spec2, np.stack([theta1, 10 * theta1]))
    ss = simulate(spec2, sig, 50, seed=5)
    shifts = {tuple(np.roll(theta1, g)) for g in range(3)}
    for y in ss.y:
        assert tuple(y) in shifts


def test_simulate_deterministic_and_chunked():
    spec = ProblemSpec(group="cyclic", p=3, sigma=0.5)
    sig = random_signal(spec, 1)
    n = 70000  # crosses the internal chunk boundary
    a = simulate(spec, sig, n, seed=9)
    b = simulate(spec, sig, n, seed=9)
    assert np.array_equal(a.y, b.y)
    # prefix property: chunked streams keyed by chunk index
    c = simulate(spec, sig, 65536, seed=9)
    assert np.array_equal(a.y[:65536], c.y)


def test_restrict_symmetric_counts():
    spec = cryo_spec(1, 3, symmetry=2, projected=False)
    sig = Signal(spec, np.ones((1, spec.dim)))
    restricted = restrict_symmetric(spec, sig)
    assert int(np.count_nonzero(restricted.components)) == 7  # 1 + 3 + 3
    # idempotent
    again = restrict_symmetric(spec, restricted)
    assert np.array_equal(again.components, restricted.components)
    assert len(symmetric_support(spec)) == 7


def test_restrict_symmetric_large_l_keeps_m0():
    spec = cryo_spec(2, 3, symmetry=7, projected=False)  # L > 2F
    sig = Signal(spec, np.ones((1, spec.dim)))
    restricted = restrict_symmetric(spec, sig)
    assert int(np.count_nonzero(restricted.components)) == 2 * 3  # F per shell


def test_restrict_symmetric_requires_so3():
    with pytest.raises(ValueError):
        restrict_symmetric(mra_spec(5), random_signal(mra_spec(5), 0))


def test_signal_immutable_and_validated():
    spec = mra_spec(3)
    sig = Signal(spec, np.array([[1.0, 2.0, 3.0]]))
    with pytest.raises(ValueError):
        sig.components[0, 0] = 9.0
    with pytest.raises(ValueError):
        Signal(spec, np.array([[1.0, np.inf, 3.0]]))
    with pytest.raises(ValueError):
        Signal(spec, np.ones((1, 4)))


def test_spec_json_roundtrip():
    spec = cryo_spec(2, 3, K=2, sigma=0.7, weights=(0.3, 0.7))
    assert spec_from_dict(json.loads(json.dumps(spec_to_dict(spec)))) == spec


def test_signal_json_roundtrip():
    spec = mra_spec(4, K=2)
    sig = random_signal(spec, 13)
    back = signal_from_json(signal_to_json(sig))
    assert back.spec == spec
    assert np.array_equal(back.components, sig.components)


def test_sampleset_json_roundtrip():
    spec = ProblemSpec(group="cyclic", p=3, sigma=0.2)
    sig = random_signal(spec, 1)
    ss = simulate(spec, sig, 7, seed=2)
    back = sampleset_from_json(sampleset_to_json(ss))
    assert np.allclose(back.y, ss.y)
    assert back.sigma == ss.sigma and back.seed == ss.seed


def test_samples_binary_roundtrip(tmp_path):
    spec = ProblemSpec(group="cyclic", p=5, sigma=1.5)
    sig = random_signal(spec, 4)
    ss = simulate(spec, sig, 100, seed=8)
    path = str(tmp_path / "samples.omnt")
    save_samples_bin(ss, path)
    with open(path, "rb") as fh:
        header = fh.read(64)
    assert header[:4] == b"OMNT"
    back = load_samples_bin(path, spec=spec, seed=8)
    assert np.array_equal(back.y, ss.y)
    assert back.sigma == 1.5


def test_group_elements_cap():
    with pytest.raises(ValueError):
        group_elements(ProblemSpec(group="symmetric", p=12))
    assert len(group_elements(ProblemSpec(group="symmetric", p=4))) == 24


def test_simulate_noiseless_projected_orbit():
    spec = mra_spec(5, projected=True)
    theta = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    sig = Signal(spec, theta[None, :])
    ss = simulate(spec, sig, 20, seed=12)
    allowed = {tuple(np.round(project(spec, np.roll(theta, g)), 12))
               for g in range(5)}
    for y in ss.y:
        assert tuple(np.round(y, 12)) in allowed
