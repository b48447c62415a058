import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowuap.constraints import (
    ConstraintEngine,
    apply_constraints,
    perturbation_mask,
    recalc_related,
)
from flowuap.data import SynthConfig, get_profile, prepare, synth_generate
from flowuap.errors import SchemaError, ValidationError
from oracles import rf_identity_report, related_raw_oracle


@pytest.fixture(scope="module")
def prep():
    return prepare(synth_generate(SynthConfig(n_benign=600, n_attack=400, seed=21)),
                   get_profile("cicids2018"), seed=0)


def test_recalc_worked_example():
    out = recalc_related(np.array([10.0, 20.0, 1000.0, 4000.0, 2e6]))
    np.testing.assert_allclose(out, [5, 10, 15, 2500, 5000 / 30, 100, 200, 2], rtol=1e-12)
    assert round(out[4], 2) == 166.67


def test_recalc_zero_denominators():
    out = recalc_related(np.array([1.0, 0.0, 60.0, 0.0, 1e6]))
    assert out[6] == 0.0  # Bwd Seg Size Avg
    assert out[7] == 0.0  # Down/Up
    out = recalc_related(np.array([0.0, 0.0, 0.0, 0.0, 1e6]))
    assert out[4] == 0.0 and out[5] == 0.0


def test_recalc_duration_floor():
    out = recalc_related(np.array([3.0, 2.0, 300.0, 100.0, 0.0]))
    assert out[0] == 3e6 and out[1] == 2e6 and out[3] == 400e6


def test_recalc_down_up_is_floor():
    assert recalc_related(np.array([3.0, 10.0, 1.0, 1.0, 1.0]))[7] == 3.0
    assert recalc_related(np.array([3.0, 9.0, 1.0, 1.0, 1.0]))[7] == 3.0
    # round-off just below an integer ratio still floors to that integer
    assert recalc_related(np.array([10.0, 29.999999999999996, 1.0, 1.0, 1.0]))[7] == 3.0


def test_recalc_rejects_negative_and_nonfinite():
    with pytest.raises(ValidationError):
        recalc_related(np.array([1.0, -1.0, 1.0, 1.0, 1.0]))
    with pytest.raises(ValidationError):
        recalc_related(np.array([1.0, np.inf, 1.0, 1.0, 1.0]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1e7, allow_nan=False), min_size=5, max_size=5))
def test_recalc_matches_plain_arithmetic(mf):
    mf[0], mf[1] = float(int(mf[0]) % 1000), float(int(mf[1]) % 1000)
    np.testing.assert_allclose(recalc_related(np.array(mf)), related_raw_oracle(*mf), rtol=1e-12, atol=0)


def test_mask_exactly_five_ones(prep):
    m = perturbation_mask(prep.schema)
    assert m.sum() == 5 and set(np.unique(m)) == {0.0, 1.0}
    assert np.array_equal(m * m, m)
    g = np.random.default_rng(0).normal(size=76) * m
    assert np.all(g[prep.schema.groups.rf] == 0) and np.all(g[prep.schema.groups.uf] == 0)


def test_consistent_row_is_fixed_point(prep):
    X = prep.test.features
    out = apply_constraints(X, X, prep.schema)
    assert np.max(np.abs(out - X)) <= 1e-9


def test_mf_clamped_before_recalculation(prep):
    x = prep.test.features[0]
    j = prep.schema.role_index("tot_fwd")
    cand = x.copy()
    cand[j] = 1.3
    out = apply_constraints(x, cand, prep.schema)
    assert out[j] == 1.0
    ref = cand.copy()
    ref[j] = 1.0
    np.testing.assert_array_equal(out, apply_constraints(x, ref, prep.schema))


def test_perturbed_row_matches_raw_space_oracle(prep, rng):
    s = prep.schema
    mf = s.groups.mf
    for x in prep.test.features[:40]:
        cand = x.copy()
        cand[mf] += rng.uniform(-0.05, 0.05, size=5)
        out = apply_constraints(x, cand, s)
        worst, _, bad = rf_identity_report(s, out[None])
        assert bad == 0 and worst < 1e-6


def test_uf_restored_from_original_not_candidate(prep, rng):
    s = prep.schema
    x = prep.test.features[3]
    cand = rng.random(76)
    out = apply_constraints(x, cand, s)
    uf = s.groups.uf
    assert np.array_equal(out[uf], x[uf])
    np.testing.assert_array_equal(out[s.groups.mf], cand[s.groups.mf])


def test_batch_and_broadcast(prep, rng):
    s = prep.schema
    X = prep.test.features[:10]
    delta = rng.uniform(-0.03, 0.03, size=76)
    batch = apply_constraints(X, X + delta, s)
    rows = np.stack([apply_constraints(x, x + delta, s) for x in X])
    np.testing.assert_array_equal(batch, rows)
    single = apply_constraints(X, X[0], s)
    assert single.shape == X.shape


def test_width_mismatch_is_schema_error(prep):
    with pytest.raises(SchemaError):
        apply_constraints(np.zeros(75), np.zeros(75), prep.schema)


def test_clamp_counter_reports_out_of_range_rf(prep):
    eng = ConstraintEngine(prep.schema)
    X = prep.test.features[:50].copy()
    cand = X.copy()
    cand[:, prep.schema.role_index("duration")] = 0.0  # every rate explodes
    eng.apply(X, cand)
    assert eng.clamped > 0


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5))
def test_constraint_properties(seed, scale):
    s = _PREP.schema
    r = np.random.default_rng(seed)
    x = _PREP.test.features[r.integers(len(_PREP.test))]
    cand = x + r.uniform(-scale, scale, size=76)
    out = apply_constraints(x, cand, s)
    assert np.array_equal(out[s.groups.uf], x[s.groups.uf])
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.array_equal(apply_constraints(x, out, s), out)
    assert np.array_equal(apply_constraints(out, out, s), out)


_PREP = prepare(synth_generate(SynthConfig(n_benign=300, n_attack=200, seed=22)),
                get_profile("cicids2018"), seed=0)
