import math

import numpy as np
import pytest

from chromunroll.sigmodel import (
    PRESETS,
    DatasetSpec,
    KernelSpec,
    PlacementError,
    degrade,
    fraser_suzuki,
    gaussian_blur_taps,
    generate_record,
    generate_spike_train,
    generate_split,
    preset,
    record_rng,
    sample_kernel,
)
from chromunroll.kernels import conv_same

# benchmark preset rows: P/N, d_min, sigma_f, a, sigma_e
TABLE1 = {
    "D0": (0.015, 5, 0.5, 0.2, 0.02),
    "D1": (0.03, 3, 0.5, 0.2, 0.02),
    "D2": (0.045, 1, 0.5, 0.2, 0.02),
    "D3": (0.015, 5, 0.5, 0.4, 0.02),
    "D4": (0.015, 5, 0.5, 0.6, 0.02),
    "D5": (0.03, 3, 0.5, 0.2, 0.04),
    "D6": (0.03, 3, 0.5, 0.2, 0.06),
}


def test_kernel_peak_is_one_at_center():
    k = sample_kernel(KernelSpec(0.5, 0.2))
    assert k.value_at(0) == 1.0
    assert k.taps.max() == 1.0


def test_gaussian_kernel_symmetric():
    k = sample_kernel(KernelSpec(1.0, 0.0))
    assert k.offset == -(len(k.taps) - 1) // 2
    np.testing.assert_array_equal(k.taps, k.taps[::-1])


def test_domain_cutoff_a06():
    spec = KernelSpec(0.5, 0.6)
    assert spec.lower_bound == pytest.approx(-0.5 / 0.6, abs=1e-15)
    k = sample_kernel(spec)
    # first admissible integer above -0.8333 is 0
    assert k.offset == 0
    assert k.taps[0] == 1.0
    assert np.all(k.support > -0.5 / 0.6)


@pytest.mark.parametrize("sf,a", [(0.5, 0.2), (0.5, 0.4), (0.5, 0.6), (1.0, 0.0), (2.5, 0.3), (8.0, 0.1)])
def test_kernel_invariants(sf, a):
    spec = KernelSpec(sf, a)
    k = sample_kernel(spec)
    assert np.all(k.taps >= 0)
    assert k.taps.max() == 1.0
    assert k.taps[-1] <= spec.trunc_eps
    if k.offset + 0.0 > spec.lower_bound + 1.0 or a == 0:
        assert k.taps[0] <= spec.trunc_eps
    peak = int(np.argmax(k.taps))
    assert np.all(np.diff(k.taps[: peak + 1]) > 0)
    assert np.all(np.diff(k.taps[peak:]) < 0)


def test_kernel_matches_formula():
    spec = KernelSpec(0.5, 0.2)
    k = sample_kernel(spec)
    x = k.support.astype(float)
    u = x / 0.5
    direct = np.exp(-np.log(1 + 0.2 * u) ** 2 / (2 * 0.2**2))
    np.testing.assert_allclose(k.taps, direct / direct.max(), rtol=1e-15)


def test_gaussian_limit_continuity():
    k0 = sample_kernel(KernelSpec(0.5, 0.0))
    k1 = sample_kernel(KernelSpec(0.5, 1e-12))
    assert k0.offset == k1.offset
    assert np.max(np.abs(k0.taps - k1.taps)) < 1e-6
    # just above the switch the log form is used and still lands close
    x = np.arange(-6, 7, dtype=float)
    assert np.max(np.abs(fraser_suzuki(x, 0.5, 1e-7) - fraser_suzuki(x, 0.5, 0.0))) < 1e-6


def test_kernel_rejects_bad_width():
    with pytest.raises(ValueError):
        KernelSpec(0.0, 0.2)
    with pytest.raises(ValueError):
        KernelSpec(-1.0, 0.2)


def test_spike_train_spacing():
    s, pos, amp = generate_spike_train(10, 2, 5, record_rng(3, "train", 0))
    assert len(pos) == 2 and pos[1] - pos[0] >= 5
    assert np.count_nonzero(s) == 2
    assert np.all(amp >= 0)


def test_spike_train_infeasible():
    with pytest.raises(ValueError):
        generate_spike_train(10, 3, 5, record_rng(0, "train", 0))


def test_spike_train_deterministic():
    a = generate_spike_train(2000, 30, 5, np.random.default_rng(42))
    b = generate_spike_train(2000, 30, 5, np.random.default_rng(42))
    assert len(a[1]) == 30
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)


def test_spike_train_budget_exhausted():
    # P*d_min == n leaves exactly one packing; random draws cannot find it
    with pytest.raises(PlacementError):
        generate_spike_train(40, 8, 5, np.random.default_rng(0))


def test_degrade_noise_free_is_blur(rng):
    p = rng.random(50)
    g = gaussian_blur_taps(1.0)
    np.testing.assert_array_equal(degrade(p, 1.0, 0.0, rng), conv_same(p, g.taps, g.offset))
    assert abs(g.taps.sum() - 1.0) < 1e-15


def test_degrade_tiny_blur_is_identity(rng):
    p = rng.random(50)
    np.testing.assert_array_equal(degrade(p, 0.05, 0.0, rng), p)


def test_degrade_noise_statistics():
    p = np.zeros(2000)
    z = degrade(p, 1.0, 0.02, np.random.default_rng(5))
    assert abs(z.std() - 0.02) < 0.1 * 0.02
    z2 = degrade(p, 1.0, 0.02, np.random.default_rng(5))
    np.testing.assert_array_equal(z, z2)


def test_degrade_rejects_nonfinite(rng):
    with pytest.raises(ValueError):
        degrade(np.array([0.0, np.nan]), 1.0, 0.0, rng)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_match_table(name):
    spec = preset(name)
    assert (spec.p_over_n, spec.d_min, spec.sigma_f, spec.a, spec.sigma_e) == TABLE1[name]


def test_preset_unknown():
    with pytest.raises(KeyError):
        preset("D9")


def test_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec(n=10, p_over_n=0.3, d_min=5)
    with pytest.raises(ValueError):
        DatasetSpec(n=10, p_over_n=0.01)  # rounds to zero spikes
    with pytest.raises(ValueError):
        DatasetSpec(sigma_g=0.0)
    assert DatasetSpec(n=500, p_over_n=0.015).num_spikes == 8  # 7.5 rounds half-up
    assert DatasetSpec(n=2000).num_spikes == 30


def test_spec_roundtrip():
    spec = preset("D3", n=100, seed=9)
    assert DatasetSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        DatasetSpec.from_dict({**spec.to_dict(), "bogus": 1})


def _brute_peaks(kernel, pos, amp, n):
    p = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for q, w in zip(pos, amp):
            acc += w * kernel.value_at(i - int(q))
        p[i] = acc
    return p


@pytest.mark.parametrize("name", PRESETS)
def test_records_consistent(name):
    spec = preset(name, n=300, count_train=3, count_val=1, count_test=1, seed=11)
    kernel = sample_kernel(spec.kernel_spec)
    for rec in generate_split(spec, "train"):
        assert len(rec.positions) == spec.num_spikes
        assert np.count_nonzero(rec.s) == spec.num_spikes
        assert np.all(np.diff(rec.positions) >= spec.d_min)
        ref = _brute_peaks(kernel, rec.positions, rec.amplitudes, spec.n)
        assert np.max(np.abs(rec.p - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_records_independent_of_threads():
    spec = preset("D1", n=400, count_train=12, seed=3)
    a = generate_split(spec, "train", threads=1)
    b = generate_split(spec, "train", threads=4)
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u.z, v.z)
    single = generate_record(spec, "train", 7)
    np.testing.assert_array_equal(single.z, a[7].z)


def test_splits_use_distinct_streams():
    spec = preset("D0", n=200, seed=3)
    assert not np.array_equal(generate_record(spec, "train", 0).z, generate_record(spec, "val", 0).z)
