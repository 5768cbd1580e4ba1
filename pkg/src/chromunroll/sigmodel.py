"""Sparse chromatographic signal simulation.

Peaks follow the Fraser-Suzuki shape sampled on the integer grid, spikes are
placed by rejection sampling with a minimum spacing, and observations are a
Gaussian blur of the clean peak signal plus white Gaussian noise.

Random numbers come from numpy's PCG64 bit generator; normal deviates use
numpy's ziggurat transform (``Generator.standard_normal``). Each record owns
a substream keyed by ``(seed, split, index)`` through ``SeedSequence``, so a
record never depends on how many others were generated before it or on the
number of worker threads.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .kernels import conv_same

GAUSSIAN_LIMIT = 1e-8
BLUR_TRUNC = 1e-8
SPLITS = ("train", "val", "test")
_SPLIT_CODES = {"train": 0, "val": 1, "test": 2}


class PlacementError(RuntimeError):
    """Raised when spikes cannot be placed within the retry budget."""


@dataclass(frozen=True)
class KernelSpec:
    """Fraser-Suzuki peak shape on the sample grid.

    Parameters
    ----------
    sigma_f : float
        Peak width in samples.
    a : float
        Asymmetry; values below ``1e-8`` use the Gaussian limit.
    m : float
        Peak center in samples.
    trunc_eps : float
        Relative amplitude below which sampling stops.
    """

    sigma_f: float
    a: float = 0.0
    m: float = 0.0
    trunc_eps: float = 1e-4

    def __post_init__(self):
        if not self.sigma_f > 0:
            raise ValueError(f"sigma_f must be positive, got {self.sigma_f}")
        if not self.a >= 0:
            raise ValueError(f"asymmetry a must be nonnegative, got {self.a}")
        if not 0 < self.trunc_eps < 1:
            raise ValueError(f"trunc_eps must lie in (0, 1), got {self.trunc_eps}")

    @property
    def lower_bound(self) -> float:
        """Left edge of the admissible domain (``-inf`` in the Gaussian limit)."""
        if self.a < GAUSSIAN_LIMIT:
            return -math.inf
        return self.m - self.sigma_f / self.a

    def max_reach(self) -> int:
        # per-side cap; 12 widths, but never below 32 samples so heavy right
        # tails (a ~ 0.6) still decay under trunc_eps
        return max(int(math.ceil(12 * self.sigma_f)), 32)


@dataclass(frozen=True)
class SampledKernel:
    """Peak taps on the grid; ``taps[j]`` sits at displacement ``offset + j``."""

    taps: np.ndarray
    offset: int

    @property
    def support(self) -> np.ndarray:
        return np.arange(self.offset, self.offset + len(self.taps))

    def value_at(self, d: int) -> float:
        j = d - self.offset
        return float(self.taps[j]) if 0 <= j < len(self.taps) else 0.0


def fraser_suzuki(x, sigma_f, a, m=0.0):
    """Unnormalized Fraser-Suzuki profile, zero outside the admissible domain."""
    x = np.asarray(x, dtype=np.float64)
    u = (x - m) / sigma_f
    if a < GAUSSIAN_LIMIT:
        return np.exp(-0.5 * u * u)
    arg = 1.0 + a * u
    out = np.zeros_like(u)
    ok = arg > 0
    out[ok] = np.exp(-np.log(arg[ok]) ** 2 / (2.0 * a * a))
    return out


def sample_kernel(spec: KernelSpec) -> SampledKernel:
    """Sample the peak shape on integer grid points around ``spec.m``.

    Taps are rescaled to a unit maximum and extended on each side until the
    first sample at or below ``trunc_eps`` (or the admissible-domain edge, or
    the per-side cap).
    """
    reach = spec.max_reach()
    center = int(round(spec.m))
    lo_bound = spec.lower_bound
    xs = np.arange(center - reach, center + reach + 1, dtype=np.float64)
    xs = xs[xs > lo_bound]
    vals = fraser_suzuki(xs, spec.sigma_f, spec.a, spec.m)
    vals = vals / vals.max()
    peak = int(np.argmax(vals))
    left = peak
    while left > 0 and vals[left] > spec.trunc_eps:
        left -= 1
    right = peak
    while right < len(vals) - 1 and vals[right] > spec.trunc_eps:
        right += 1
    taps = vals[left : right + 1].copy()
    taps /= taps.max()
    taps.setflags(write=False)
    return SampledKernel(taps=taps, offset=int(xs[left]))


def gaussian_blur_taps(sigma_g: float) -> SampledKernel:
    """Unit-sum Gaussian blur of width ``sigma_g``, centred on displacement 0."""
    if not sigma_g > 0:
        raise ValueError(f"sigma_g must be positive, got {sigma_g}")
    radius = int(math.floor(sigma_g * math.sqrt(2.0 * math.log(1.0 / BLUR_TRUNC))))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (t / sigma_g) ** 2)
    g /= g.sum()
    g.setflags(write=False)
    return SampledKernel(taps=g, offset=-radius)


def generate_spike_train(n: int, P: int, d_min: int, rng: np.random.Generator):
    """Draw ``P`` spikes at least ``d_min`` samples apart.

    Returns
    -------
    s : ndarray, shape (n,)
    positions : ndarray of int, sorted ascending
    amplitudes : ndarray, absolute values of standard normal draws
    """
    if P < 0 or n < 1 or d_min < 1:
        raise ValueError(f"invalid placement request n={n}, P={P}, d_min={d_min}")
    if P * d_min > n:
        raise ValueError(f"cannot place {P} spikes {d_min} apart in {n} samples")
    budget = 1000 * max(P, 1)
    taken = np.zeros(n, dtype=bool)
    positions = []
    attempts = 0
    while len(positions) < P:
        if attempts >= budget:
            raise PlacementError(
                f"placed {len(positions)}/{P} spikes after {budget} attempts"
            )
        attempts += 1
        q = int(rng.integers(0, n))
        if taken[max(0, q - d_min + 1) : q + d_min].any():
            continue
        taken[q] = True
        positions.append(q)
    positions = np.sort(np.asarray(positions, dtype=np.int64))
    amplitudes = np.abs(rng.standard_normal(P))
    s = np.zeros(n)
    s[positions] = amplitudes
    return s, positions, amplitudes


def degrade(p, sigma_g: float, sigma_e: float, rng: np.random.Generator):
    """Blur ``p`` with a unit-sum Gaussian and add white noise of std ``sigma_e``."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("clean signal has non-finite samples")
    if sigma_e < 0:
        raise ValueError(f"sigma_e must be nonnegative, got {sigma_e}")
    g = gaussian_blur_taps(sigma_g)
    z = conv_same(p, g.taps, g.offset)
    if sigma_e > 0:
        z = z + sigma_e * rng.standard_normal(p.shape)
    return z


@dataclass(frozen=True)
class DatasetSpec:
    """Generation parameters for one benchmark dataset."""

    n: int = 2000
    p_over_n: float = 0.015
    d_min: int = 5
    sigma_f: float = 0.5
    a: float = 0.2
    sigma_e: float = 0.02
    sigma_g: float = 1.0
    seed: int = 0
    count_train: int = 1000
    count_val: int = 200
    count_test: int = 200
    trunc_eps: float = 1e-4
    name: str = "custom"

    def __post_init__(self):
        problems = []
        if self.n < 1:
            problems.append("n must be >= 1")
        if not 0 < self.p_over_n < 1:
            problems.append("p_over_n must lie in (0, 1)")
        if self.d_min < 1:
            problems.append("d_min must be >= 1")
        if self.sigma_e < 0:
            problems.append("sigma_e must be >= 0")
        if not self.sigma_g > 0:
            problems.append("sigma_g must be > 0")
        if not self.sigma_f > 0 or self.a < 0:
            problems.append("kernel needs sigma_f > 0 and a >= 0")
        if min(self.count_train, self.count_val, self.count_test) < 0:
            problems.append("record counts must be >= 0")
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be a 64-bit unsigned integer")
        if not problems:
            P = self.num_spikes
            if P < 1:
                problems.append(f"p_over_n * n rounds to {P} spikes")
            elif P * self.d_min > self.n:
                problems.append(f"P*d_min = {P * self.d_min} exceeds n = {self.n}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def num_spikes(self) -> int:
        # half-up rounding on the decimal value, immune to 0.015*500 = 7.4999...
        return int(math.floor(round(self.p_over_n * self.n, 9) + 0.5))

    @property
    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(sigma_f=self.sigma_f, a=self.a, trunc_eps=self.trunc_eps)

    def counts(self) -> dict:
        return {"train": self.count_train, "val": self.count_val, "test": self.count_test}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown dataset spec fields: {sorted(unknown)}")
        return cls(**d)


# Benchmark rows: (P/N, d_min, sigma_f, a, sigma_e)
_PRESET_ROWS = {
    "D0": (0.015, 5, 0.5, 0.2, 0.02),
    "D1": (0.03, 3, 0.5, 0.2, 0.02),
    "D2": (0.045, 1, 0.5, 0.2, 0.02),
    "D3": (0.015, 5, 0.5, 0.4, 0.02),
    "D4": (0.015, 5, 0.5, 0.6, 0.02),
    "D5": (0.03, 3, 0.5, 0.2, 0.04),
    "D6": (0.03, 3, 0.5, 0.2, 0.06),
}
PRESETS = tuple(_PRESET_ROWS)


def preset(name: str, **overrides) -> DatasetSpec:
    """Return the named benchmark dataset spec, optionally overriding fields."""
    try:
        p_over_n, d_min, sigma_f, a, sigma_e = _PRESET_ROWS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    fields = dict(
        name=name, p_over_n=p_over_n, d_min=d_min, sigma_f=sigma_f, a=a, sigma_e=sigma_e
    )
    fields.update(overrides)
    return DatasetSpec(**fields)


@dataclass(frozen=True)
class SignalTriple:
    """One ground-truth / observation record."""

    s: np.ndarray
    p: np.ndarray
    z: np.ndarray
    positions: np.ndarray
    amplitudes: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.s)


def record_rng(seed: int, split: str, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_SPLIT_CODES[split], int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def generate_record(spec: DatasetSpec, split: str, index: int, kernel=None) -> SignalTriple:
    """Generate record ``index`` of ``split`` from its own substream."""
    rng = record_rng(spec.seed, split, index)
    kernel = kernel if kernel is not None else sample_kernel(spec.kernel_spec)
    s, pos, amp = generate_spike_train(spec.n, spec.num_spikes, spec.d_min, rng)
    p = conv_same(s, kernel.taps, kernel.offset)
    z = degrade(p, spec.sigma_g, spec.sigma_e, rng)
    return SignalTriple(s=s, p=p, z=z, positions=pos, amplitudes=amp)


def generate_split(spec: DatasetSpec, split: str, threads: int = 1) -> list:
    kernel = sample_kernel(spec.kernel_spec)
    count = spec.counts()[split]
    if threads <= 1:
        return [generate_record(spec, split, i, kernel) for i in range(count)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda i: generate_record(spec, split, i, kernel), range(count)))
