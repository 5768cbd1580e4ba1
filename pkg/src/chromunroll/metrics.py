"""Restoration quality measures.

Standard measures (MSE, SNR, truncated SNR) compare the clean peak signal
with its estimate. Peak-morphology measures compare per-peak height, area and
location on oracle supports taken from the ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

DEFAULT_THRESHOLD = 1.0 / 20.0
OVERLAP_CUTOFF = 0.30

METRIC_COLUMNS = (
    "dataset", "method",
    "mse_mean", "mse_std", "snr_mean", "snr_std", "tsnr_mean", "tsnr_std",
    "nmae_h_mean", "nmae_h_std", "nmae_a_mean", "nmae_a_std", "nmae_l_mean", "nmae_l_std",
)
SCATTER_COLUMNS = ("peak_id", "true_h", "est_h", "overlap_ratio", "overlap_class")


def _pair(p, p_hat):
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p.shape != p_hat.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {p_hat.shape}")
    return p, p_hat


def mse(p, p_hat) -> float:
    p, p_hat = _pair(p, p_hat)
    d = p - p_hat
    return float(d @ d) / len(p)


def _db(num, den, scale):
    if num == 0:
        raise ValueError("reference signal is zero")
    if den == 0:
        return math.inf
    return scale * math.log10(num / den)


def snr(p, p_hat) -> float:
    """``20 log10(||p|| / ||p - p_hat||)`` in dB; ``inf`` for a perfect estimate."""
    p, p_hat = _pair(p, p_hat)
    return _db(float(np.linalg.norm(p)), float(np.linalg.norm(p - p_hat)), 20.0)


def tsnr(p, p_hat, support, literal: bool = False) -> float:
    """SNR restricted to ``support`` (indices or boolean mask).

    Energy ratio in dB, ``10 log10(sum p^2 / sum (p - p_hat)^2)``, which
    equals :func:`snr` on the full index set. ``literal=True`` applies
    ``20 log10`` to the same squared sums instead.
    """
    p, p_hat = _pair(p, p_hat)
    idx = np.asarray(support)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    if idx.size == 0:
        raise ValueError("empty support")
    num = float(np.sum(p[idx] ** 2))
    d = p[idx] - p_hat[idx]
    return _db(num, float(d @ d), 20.0 if literal else 10.0)


@dataclass(frozen=True)
class PeakSupport:
    """Contiguous index range ``[start, stop)`` of peak ``j``."""

    j: int
    start: int
    stop: int
    threshold: float

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.start, self.stop)

    def __len__(self):
        return self.stop - self.start


@dataclass(frozen=True)
class TruthHAL:
    height: np.ndarray
    area: np.ndarray
    location: np.ndarray


def extract_supports(kernel, positions, amplitudes, n, threshold=DEFAULT_THRESHOLD):
    """Oracle supports and true HAL values from each isolated convolved peak.

    Parameters
    ----------
    kernel : SampledKernel
        Peak shape the ground truth was built with.
    positions, amplitudes : array_like
        Spike list of the record.
    n : int
        Signal length.
    threshold : float
        Fraction of the peak height defining the support.

    Returns
    -------
    supports : list of PeakSupport
    truth : TruthHAL
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    taps, off = np.asarray(kernel.taps), kernel.offset
    supports, H, A, L = [], [], [], []
    for j, (q, amp) in enumerate(zip(positions, amplitudes)):
        q = int(q)
        lo, hi = max(0, q + off), min(n, q + off + len(taps))
        peak = float(amp) * taps[lo - q - off : hi - q - off]
        k = int(np.argmax(peak))
        h = float(peak[k])
        if not h > 0:
            raise ValueError(f"peak {j} has nonpositive height {h}")
        above = peak > threshold * h
        a = k
        while a > 0 and above[a - 1]:
            a -= 1
        b = k
        while b + 1 < len(peak) and above[b + 1]:
            b += 1
        supports.append(PeakSupport(j=j, start=lo + a, stop=lo + b + 1, threshold=threshold))
        H.append(h)
        L.append(lo + k)
        A.append(float(_trapezoid(peak[a : b + 1])) if b > a else 0.0)
    if any(len(s) == 0 for s in supports):
        raise ValueError("empty peak support")
    return supports, TruthHAL(np.array(H), np.array(A), np.array(L, dtype=np.float64))


def extract_hal(p_hat, supports):
    """Estimated (height, area, location) of every peak on its oracle support.

    Height is the maximum over the support, location its first index, area
    the trapezoid rule over the support samples.
    """
    p_hat = np.asarray(p_hat, dtype=np.float64)
    H, A, L = [], [], []
    for s in supports:
        seg = p_hat[s.start : s.stop]
        k = int(np.argmax(seg))
        H.append(float(seg[k]))
        L.append(float(s.start + k))
        A.append(float(_trapezoid(seg)) if len(seg) > 1 else 0.0)
    return TruthHAL(np.array(H), np.array(A), np.array(L))


def nmae(true_vec, est_vec) -> float:
    """``sum |true - est| / sum |true|``."""
    t = np.asarray(true_vec, dtype=np.float64)
    e = np.asarray(est_vec, dtype=np.float64)
    if t.shape != e.shape or t.size == 0:
        raise ValueError("nmae needs two nonempty vectors of equal length")
    den = float(np.abs(t).sum())
    if den == 0:
        raise ValueError("nmae reference vector is all zero")
    return float(np.abs(t - e).sum()) / den


def overlap_ratio(supports) -> np.ndarray:
    """Fraction of each support covered by the union of the other supports."""
    if not supports:
        return np.zeros(0)
    hi = max(s.stop for s in supports)
    cover = np.zeros(hi + 1, dtype=np.int64)
    for s in supports:
        cover[s.start : s.stop] += 1
    out = np.empty(len(supports))
    for i, s in enumerate(supports):
        out[i] = np.count_nonzero(cover[s.start : s.stop] > 1) / len(s)
    return out


def overlap_class(ratio, cutoff=OVERLAP_CUTOFF):
    return np.where(np.asarray(ratio) > cutoff, "overlapping", "isolated")


def union_mask(supports, n) -> np.ndarray:
    m = np.zeros(n, dtype=bool)
    for s in supports:
        m[s.start : s.stop] = True
    return m


@dataclass
class PeakReport:
    truth: TruthHAL
    estimate: TruthHAL
    overlap: np.ndarray
    supports: list


@dataclass
class RecordMetrics:
    mse: float
    snr: float
    tsnr: float
    nmae_h: float
    nmae_a: float
    nmae_l: float
    report: PeakReport


def record_metrics(p, p_hat, kernel, positions, amplitudes, threshold=DEFAULT_THRESHOLD, literal_tsnr=False):
    p, p_hat = _pair(p, p_hat)
    supports, truth = extract_supports(kernel, positions, amplitudes, len(p), threshold)
    est = extract_hal(p_hat, supports)
    rep = PeakReport(truth=truth, estimate=est, overlap=overlap_ratio(supports), supports=supports)
    return RecordMetrics(
        mse=mse(p, p_hat),
        snr=snr(p, p_hat),
        tsnr=tsnr(p, p_hat, union_mask(supports, len(p)), literal=literal_tsnr),
        nmae_h=nmae(truth.height, est.height),
        nmae_a=nmae(truth.area, est.area),
        nmae_l=nmae(truth.location, est.location),
        report=rep,
    )


def _mean_std(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return math.nan, math.nan
    if np.all(np.isfinite(v)):
        return float(v.mean()), float(v.std())
    if np.all(v == v[0]):
        return float(v[0]), 0.0
    return float(v.mean()), math.nan


@dataclass
class Evaluation:
    row: dict
    records: list
    times: list

    def scatter_rows(self):
        """Per-peak rows for height scatter plots, numbered across the split."""
        out, pid = [], 0
        for rec in self.records:
            r = rec.report
            cls = overlap_class(r.overlap)
            for j in range(len(r.truth.height)):
                out.append(
                    {
                        "peak_id": pid,
                        "true_h": float(r.truth.height[j]),
                        "est_h": float(r.estimate.height[j]),
                        "overlap_ratio": float(r.overlap[j]),
                        "overlap_class": str(cls[j]),
                    }
                )
                pid += 1
        return out


def evaluate_dataset(restore, records, kernel, dataset="", method="", batch_size=64, literal_tsnr=False):
    """Score ``restore`` on ``records``.

    ``restore`` maps a ``(batch, n)`` observation array to ``(p_hat, seconds)``.
    Returns an :class:`Evaluation` whose ``row`` follows ``METRIC_COLUMNS``.
    """
    per, times = [], []
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        z = np.stack([r.z for r in chunk])
        p_hat, secs = restore(z)
        times.extend([secs / len(chunk)] * len(chunk))
        for i, rec in enumerate(chunk):
            try:
                per.append(
                    record_metrics(rec.p, p_hat[i], kernel, rec.positions, rec.amplitudes, literal_tsnr=literal_tsnr)
                )
            except ValueError as exc:
                raise ValueError(f"record {start + i}: {exc}") from exc
    row = {"dataset": dataset, "method": method}
    for key in ("mse", "snr", "tsnr", "nmae_h", "nmae_a", "nmae_l"):
        m, s = _mean_std([getattr(r, key) for r in per])
        row[f"{key}_mean"], row[f"{key}_std"] = m, s
    return Evaluation(row=row, records=per, times=times)
