"""On-disk dataset format.

A dataset directory holds ``manifest.json`` and one ``<split>.pkf`` file per
split. Split files are little-endian::

    b"PKF1"  u64 record_count
    repeat record_count times:
        u32 n  u32 P
        f64[n] s   f64[n] p   f64[n] z
        P x (u32 position, f64 amplitude)
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .sigmodel import SPLITS, DatasetSpec, SignalTriple, generate_split

MAGIC = b"PKF1"
FORMAT_VERSION = 1
_PEAK = np.dtype([("position", "<u4"), ("amplitude", "<f8")])


class DatasetFormatError(ValueError):
    pass


def encode_records(records) -> bytes:
    chunks = [MAGIC, struct.pack("<Q", len(records))]
    for rec in records:
        n, P = len(rec.s), len(rec.positions)
        chunks.append(struct.pack("<II", n, P))
        for arr in (rec.s, rec.p, rec.z):
            chunks.append(np.asarray(arr, dtype="<f8").tobytes())
        peaks = np.empty(P, dtype=_PEAK)
        peaks["position"] = rec.positions
        peaks["amplitude"] = rec.amplitudes
        chunks.append(peaks.tobytes())
    return b"".join(chunks)


def decode_records(buf: bytes) -> list:
    if buf[:4] != MAGIC:
        raise DatasetFormatError("bad magic, not a PKF1 file")
    (count,) = struct.unpack_from("<Q", buf, 4)
    off = 12
    out = []
    try:
        for _ in range(count):
            n, P = struct.unpack_from("<II", buf, off)
            off += 8
            arrs = []
            for _ in range(3):
                arrs.append(np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(np.float64))
                off += 8 * n
            peaks = np.frombuffer(buf, dtype=_PEAK, count=P, offset=off)
            off += _PEAK.itemsize * P
            out.append(
                SignalTriple(
                    s=arrs[0],
                    p=arrs[1],
                    z=arrs[2],
                    positions=peaks["position"].astype(np.int64),
                    amplitudes=peaks["amplitude"].astype(np.float64),
                )
            )
    except ValueError as exc:
        raise DatasetFormatError(f"truncated PKF1 payload: {exc}") from exc
    if off != len(buf):
        raise DatasetFormatError(f"{len(buf) - off} trailing bytes after {count} records")
    return out


def spec_fingerprint(spec: DatasetSpec) -> str:
    """Hash of the fields that define the forward model and noise level."""
    keys = ("n", "sigma_f", "a", "sigma_g", "sigma_e", "trunc_eps")
    payload = json.dumps({k: getattr(spec, k) for k in keys}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def generate_dataset(spec: DatasetSpec, out_dir, threads: int = 1) -> Path:
    """Generate every split of ``spec`` into ``out_dir``; return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checksums = {}
    for split in SPLITS:
        blob = encode_records(generate_split(spec, split, threads=threads))
        (out_dir / f"{split}.pkf").write_bytes(blob)
        checksums[split] = hashlib.sha256(blob).hexdigest()
    manifest = {
        "format": "chromunroll-dataset",
        "format_version": FORMAT_VERSION,
        "spec": spec.to_dict(),
        "num_spikes": spec.num_spikes,
        "fingerprint": spec_fingerprint(spec),
        "files": {split: f"{split}.pkf" for split in SPLITS},
        "checksums": checksums,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


class Dataset:
    """Read access to a generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "manifest.json"
        if not path.is_file():
            raise FileNotFoundError(f"no manifest.json in {self.root}")
        self.manifest = json.loads(path.read_text())
        if self.manifest.get("format_version") != FORMAT_VERSION:
            raise DatasetFormatError(
                f"unsupported dataset format version {self.manifest.get('format_version')}"
            )
        self.spec = DatasetSpec.from_dict(self.manifest["spec"])
        self._cache = {}

    @property
    def fingerprint(self) -> str:
        return self.manifest["fingerprint"]

    def split(self, name: str, verify: bool = True) -> list:
        if name not in self._cache:
            blob = (self.root / self.manifest["files"][name]).read_bytes()
            if verify and hashlib.sha256(blob).hexdigest() != self.manifest["checksums"][name]:
                raise DatasetFormatError(f"checksum mismatch for split {name!r}")
            self._cache[name] = decode_records(blob)
        return self._cache[name]
