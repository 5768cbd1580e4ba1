import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chromunroll.metrics import (
    METRIC_COLUMNS,
    SCATTER_COLUMNS,
    PeakSupport,
    evaluate_dataset,
    extract_hal,
    extract_supports,
    mse,
    nmae,
    overlap_class,
    overlap_ratio,
    record_metrics,
    snr,
    tsnr,
)
from chromunroll.sigmodel import KernelSpec, generate_split, preset, sample_kernel

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def _peaks(kernel, pos, amp, n):
    p = np.zeros(n)
    for q, a in zip(pos, amp):
        for j, t in enumerate(kernel.taps):
            i = q + kernel.offset + j
            if 0 <= i < n:
                p[i] += a * t
    return p


def test_mse_examples(rng):
    p = rng.standard_normal(7)
    assert mse(p, p) == 0.0
    assert mse([1.0, 1.0], [0.0, 0.0]) == 1.0
    q = rng.standard_normal(7)
    assert mse(p, q) == pytest.approx(sum((a - b) ** 2 for a, b in zip(p, q)) / 7, rel=1e-15)
    with pytest.raises(ValueError):
        mse([1.0], [1.0, 2.0])


def test_snr_examples(rng):
    p = rng.standard_normal(20)
    assert snr(p, np.zeros(20)) == 0.0
    assert snr(p, p) == math.inf
    e = rng.standard_normal(20)
    assert snr(p, p + e / 10) - snr(p, p + e) == pytest.approx(20.0, abs=1e-12)
    with pytest.raises(ValueError):
        snr(np.zeros(3), np.ones(3))


def test_tsnr_examples(rng):
    p, q = rng.standard_normal((2, 16))
    assert tsnr(p, q, np.arange(16)) == pytest.approx(snr(p, q), abs=1e-12)
    S = np.array([1, 2, 3, 9, 10, 11])
    r = q.copy()
    r[S] = p[S]
    assert tsnr(p, r, S) == math.inf
    direct = 10 * math.log10(sum(p[i] ** 2 for i in S) / sum((p[i] - q[i]) ** 2 for i in S))
    assert tsnr(p, q, S) == pytest.approx(direct, rel=1e-13)
    mask = np.zeros(16, bool)
    mask[S] = True
    assert tsnr(p, q, mask) == tsnr(p, q, S)
    assert tsnr(p, q, S, literal=True) == pytest.approx(2 * direct, rel=1e-13)
    with pytest.raises(ValueError):
        tsnr(p, q, [])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 12, elements=finite), arrays(np.float64, 12, elements=finite))
def test_tsnr_full_support_is_snr(p, q):
    if not np.sum(p * p) > 0 or not np.sum((p - q) ** 2) > 0:
        return
    assert abs(tsnr(p, q, np.ones(12, bool)) - snr(p, q)) <= 1e-12 * max(1.0, abs(snr(p, q)))


def test_gaussian_support_width():
    k = sample_kernel(KernelSpec(1.0, 0.0))
    sup, truth = extract_supports(k, [20], [1.0], 41)
    # exp(-t^2/2) > 1/20  <=>  |t| < sqrt(2 ln 20) = 2.448, so integers within +-2
    half = math.floor(math.sqrt(2 * math.log(20)))
    assert (sup[0].start, sup[0].stop) == (20 - half, 20 + half + 1)
    assert truth.height[0] == 1.0 and truth.location[0] == 20


def test_support_shrinks_to_argmax():
    k = sample_kernel(KernelSpec(1.0, 0.0))
    sup, _ = extract_supports(k, [20], [2.0], 41, threshold=0.999)
    assert (sup[0].start, sup[0].stop) == (20, 21)
    with pytest.raises(ValueError):
        extract_supports(k, [20], [2.0], 41, threshold=1.0)


def test_far_spikes_disjoint():
    k = sample_kernel(KernelSpec(1.0, 0.2))
    sup, _ = extract_supports(k, [10, 60], [1.0, 0.3], 80)
    assert sup[0].stop <= sup[1].start
    np.testing.assert_array_equal(overlap_ratio(sup), [0.0, 0.0])


def test_support_invariants():
    spec = preset("D2", n=300, count_train=4)
    k = sample_kernel(spec.kernel_spec)
    for rec in generate_split(spec, "train"):
        sup, truth = extract_supports(k, rec.positions, rec.amplitudes, spec.n)
        for s, q, a, h, loc in zip(sup, rec.positions, rec.amplitudes, truth.height, truth.location):
            iso = _peaks(k, [q], [a], spec.n)
            assert np.all(iso[s.start : s.stop] > s.threshold * h)
            assert s.start <= loc < s.stop and h > 0
        assert np.all(truth.area >= 0)


def test_oracle_roundtrip():
    spec = preset("D0", n=400, count_train=3)
    k = sample_kernel(spec.kernel_spec)
    for rec in generate_split(spec, "train"):
        sup, truth = extract_supports(k, rec.positions, rec.amplitudes, spec.n)
        iso_ok = overlap_ratio(sup) == 0
        # on isolated peaks the mixture equals the isolated peak, so estimate == truth
        est = extract_hal(rec.p, sup)
        np.testing.assert_array_equal(est.height[iso_ok], truth.height[iso_ok])
        np.testing.assert_array_equal(est.area[iso_ok], truth.area[iso_ok])
        np.testing.assert_array_equal(est.location[iso_ok], truth.location[iso_ok])
        zero = extract_hal(np.zeros(spec.n), sup)
        assert np.all(zero.height == 0) and np.all(zero.area == 0)


def test_trapezoid_triangle():
    est = extract_hal(np.array([0.0, 0.0, 1.0, 0.0, 0.0]), [PeakSupport(0, 1, 4, 0.05)])
    assert est.area[0] == 1.0 and est.height[0] == 1.0 and est.location[0] == 2


def test_argmax_ties_smallest_index():
    est = extract_hal(np.array([0.0, 2.0, 2.0, 1.0]), [PeakSupport(0, 0, 4, 0.05)])
    assert est.location[0] == 1


def test_isolated_area_matches_analytic():
    sf, a = 8.0, 0.1
    k = sample_kernel(KernelSpec(sf, a))
    _, truth = extract_supports(k, [200], [1.7], 400)
    # integral of the unit-height Fraser-Suzuki profile: sigma*sqrt(2 pi)*exp(a^2/2)
    exact = 1.7 * sf * math.sqrt(2 * math.pi) * math.exp(a * a / 2)
    assert abs(truth.area[0] - exact) <= 0.02 * exact


def test_nmae_examples():
    t = np.array([2.0, 2.0])
    assert nmae(t, t) == 0.0
    assert nmae(t, np.zeros(2)) == 1.0
    assert nmae(t, [1.0, 3.0]) == 0.5
    with pytest.raises(ValueError):
        nmae([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        nmae([], [])


@settings(max_examples=80, deadline=None)
@given(
    arrays(np.float64, 5, elements=st.floats(0.1, 10)),
    arrays(np.float64, 5, elements=finite),
    st.floats(0.01, 100) | st.floats(-100, -0.01),
)
def test_nmae_pair_scale_invariance(t, e, alpha):
    assert nmae(alpha * t, alpha * e) == pytest.approx(nmae(t, e), rel=1e-12, abs=1e-15)


def test_overlap_examples():
    a, b = PeakSupport(0, 0, 10, 0.05), PeakSupport(1, 5, 15, 0.05)
    np.testing.assert_array_equal(overlap_ratio([a, b]), [0.5, 0.5])
    np.testing.assert_array_equal(overlap_ratio([a, PeakSupport(1, 0, 10, 0.05)]), [1.0, 1.0])
    np.testing.assert_array_equal(overlap_ratio([a]), [0.0])
    assert list(overlap_class([0.3, 0.31, 0.0])) == ["isolated", "overlapping", "isolated"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 40), st.integers(1, 12)), min_size=1, max_size=6), st.randoms())
def test_overlap_symmetric_and_bounded(spans, rnd):
    sup = [PeakSupport(j, s, s + w, 0.05) for j, (s, w) in enumerate(spans)]
    r = overlap_ratio(sup)
    assert np.all((r >= 0) & (r <= 1))
    perm = list(range(len(sup)))
    rnd.shuffle(perm)
    np.testing.assert_array_equal(overlap_ratio([sup[i] for i in perm]), r[perm])


@pytest.fixture(scope="module")
def d1_test():
    spec = preset("D1", n=300, count_test=6, seed=2)
    return spec, sample_kernel(spec.kernel_spec), generate_split(spec, "test")


@pytest.fixture(scope="module")
def d0_test():
    spec = preset("D0", n=300, count_test=6, seed=2)
    return spec, sample_kernel(spec.kernel_spec), generate_split(spec, "test")


def test_perfect_restorer_with_overlaps(d1_test):
    # truth HAL comes from isolated peaks, the estimate from the mixture, so
    # touching neighbours leave a small residual even for p_hat = p
    spec, k, recs = d1_test
    ev = evaluate_dataset(lambda z: (np.stack([r.p for r in recs]), 0.0), recs, k)
    assert ev.row["mse_mean"] == 0
    assert 0 <= ev.row["nmae_h_mean"] < 1e-3


def test_evaluate_perfect_and_zero(d0_test):
    spec, k, recs = d0_test
    truth = {id(r.z): r.p for r in recs}

    def oracle(z):
        return np.stack([truth[id(r.z)] for r in recs[: len(z)]]), 0.0

    ev = evaluate_dataset(oracle, recs, k, "D1", "oracle", batch_size=64)
    row = ev.row
    assert list(row) == list(METRIC_COLUMNS)
    assert row["mse_mean"] == 0 and row["snr_mean"] == math.inf and row["snr_std"] == 0
    for key in ("nmae_h_mean", "nmae_a_mean", "nmae_l_mean"):
        assert row[key] == 0

    ev0 = evaluate_dataset(lambda z: (np.zeros_like(z), 0.0), recs, k, "D1", "zero")
    assert ev0.row["snr_mean"] == 0 and ev0.row["nmae_h_mean"] == 1 and ev0.row["nmae_a_mean"] == 1
    rows = ev0.scatter_rows()
    assert list(rows[0]) == list(SCATTER_COLUMNS)
    assert [r["peak_id"] for r in rows] == list(range(len(recs) * spec.num_spikes))
    assert all(r["est_h"] == 0 for r in rows)


def test_evaluate_reports_record_index(d1_test):
    spec, k, recs = d1_test
    bad = list(recs)
    bad[3] = type(recs[3])(s=recs[3].s, p=np.zeros(spec.n), z=recs[3].z,
                          positions=recs[3].positions, amplitudes=recs[3].amplitudes)
    with pytest.raises(ValueError, match="record 3"):
        evaluate_dataset(lambda z: (np.zeros_like(z), 0.0), bad, k)


def test_record_metrics_fields(d0_test):
    spec, k, recs = d0_test
    r = recs[0]
    m = record_metrics(r.p, 0.9 * r.p, k, r.positions, r.amplitudes)
    assert m.nmae_h == pytest.approx(0.1) and m.nmae_a == pytest.approx(0.1)
    assert m.nmae_l == 0 and m.snr == pytest.approx(20.0)
