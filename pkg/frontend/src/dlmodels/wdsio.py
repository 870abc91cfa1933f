"""Readers and writers for the simulator's file interfaces.

This package talks to the waveform simulator exclusively through files, so
the two binary layouts are implemented here from their documented contracts
rather than imported:

.wds (training shards, little-endian):
    magic "WDS1" | mode u8 (0 PURE, 1 FDD, 2 SEQ2SEQ) | layout u8
    (0 TEMPORAL, 1 FLAT) | b u32 | window_length u32 | d u32 |
    float32 inputs [b * window_length * d], C order | float32 targets [b * d]
    JSON manifest sidecar at path + ".json".

.wfld (waveforms, little-endian):
    magic "WFLD" | version u32 = 1 | num_samples u64 | sample_rate_hz f64 |
    center_wavelength_m f64 | position_km f64 | num_samples records of
    [XI, XQ, YI, YQ] as f64. Optional JSON sidecar at path + ".json".

Symbol rows pack one symbol as 4*sps reals, sample-point-major:
[XI(0), XQ(0), YI(0), YQ(0), XI(1), ...]. d = 4*sps.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "Shard",
    "Waveform",
    "read_shard",
    "read_wfld",
    "write_wfld",
    "field_to_rows",
    "rows_to_field",
]


class DataError(Exception):
    """Malformed or inconsistent interface file."""


_WDS_HEADER = struct.Struct("<4sBBIII")
_WDS_MAGIC = b"WDS1"
_MODES = {0: "PURE", 1: "FDD", 2: "SEQ2SEQ"}
_LAYOUTS = {0: "TEMPORAL", 1: "FLAT"}

_WFLD_HEADER = struct.Struct("<4sIQddd")
_WFLD_MAGIC = b"WFLD"


@dataclass(frozen=True)
class Shard:
    """One training shard, always presented temporally: [b, window, d]."""

    inputs: np.ndarray
    targets: np.ndarray
    mode: str
    layout: str
    manifest: dict

    @property
    def b(self) -> int:
        return self.inputs.shape[0]

    @property
    def window_length(self) -> int:
        return self.inputs.shape[1]

    @property
    def d(self) -> int:
        return self.inputs.shape[2]

    def split_indices(self, label: str) -> np.ndarray:
        """Row indices of one split: '0' train, '1' validation, '2' test."""
        split = self.manifest.get("split")
        if not isinstance(split, str) or len(split) != self.b:
            raise DataError("manifest split string missing or wrong length")
        return np.flatnonzero(np.frombuffer(split.encode(), dtype=np.uint8)
                              == ord(label))


def read_shard(path) -> Shard:
    """Load a .wds shard; FLAT payloads are reshaped to [b, window, d]."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _WDS_HEADER.size:
        raise DataError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, mode_code, layout_code, b, wl, d = _WDS_HEADER.unpack_from(raw, 0)
    if magic != _WDS_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if mode_code not in _MODES:
        raise DataError(f"{path}: unknown mode code {mode_code}")
    if layout_code not in _LAYOUTS:
        raise DataError(f"{path}: unknown layout code {layout_code}")
    expected = _WDS_HEADER.size + 4 * (b * wl * d + b * d)
    if len(raw) != expected:
        raise DataError(f"{path}: payload is {len(raw)} bytes, header implies {expected}")
    flat = np.frombuffer(raw, dtype="<f4", count=b * wl * d, offset=_WDS_HEADER.size)
    inputs = np.array(flat, dtype=np.float32).reshape(b, wl, d)
    targets = np.array(
        np.frombuffer(raw, dtype="<f4", count=b * d,
                      offset=_WDS_HEADER.size + 4 * b * wl * d),
        dtype=np.float32,
    ).reshape(b, d)
    sidecar = path.with_name(path.name + ".json")
    manifest = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return Shard(
        inputs=inputs,
        targets=targets,
        mode=_MODES[mode_code],
        layout=_LAYOUTS[layout_code],
        manifest=manifest,
    )


@dataclass(frozen=True)
class Waveform:
    """A dual-polarization complex field read from a .wfld file."""

    x: np.ndarray
    y: np.ndarray
    sample_rate_hz: float
    center_wavelength_m: float
    position_km: float

    @property
    def num_samples(self) -> int:
        return self.x.size


def read_wfld(path) -> Waveform:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _WFLD_HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, version, n, fs, wavelength, position = _WFLD_HEADER.unpack_from(raw, 0)
    if magic != _WFLD_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise DataError(f"{path}: unsupported version {version}")
    expected = _WFLD_HEADER.size + 32 * n
    if len(raw) != expected:
        raise DataError(f"{path}: payload is {len(raw)} bytes, header implies {expected}")
    records = np.frombuffer(raw, dtype="<f8", offset=_WFLD_HEADER.size).reshape(n, 4)
    return Waveform(
        x=np.ascontiguousarray(records[:, 0] + 1j * records[:, 1]),
        y=np.ascontiguousarray(records[:, 2] + 1j * records[:, 3]),
        sample_rate_hz=fs,
        center_wavelength_m=wavelength,
        position_km=position,
    )


def write_wfld(path, x, y, sample_rate_hz, center_wavelength_m, position_km,
               manifest: dict | None = None) -> Path:
    path = Path(path)
    x = np.asarray(x, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if x.shape != y.shape or x.ndim != 1 or x.size == 0:
        raise DataError("x/y must be 1-D, same length, nonempty")
    n = x.size
    records = np.empty((n, 4), dtype="<f8")
    records[:, 0] = x.real
    records[:, 1] = x.imag
    records[:, 2] = y.real
    records[:, 3] = y.imag
    header = _WFLD_HEADER.pack(
        _WFLD_MAGIC, 1, n, sample_rate_hz, center_wavelength_m, position_km
    )
    path.write_bytes(header + records.tobytes())
    if manifest is not None:
        path.with_name(path.name + ".json").write_text(
            json.dumps(manifest, indent=1, sort_keys=True) + "\n"
        )
    return path


def field_to_rows(x: np.ndarray, y: np.ndarray, sps: int,
                  dtype=np.float32) -> np.ndarray:
    """[n_sym, 4*sps] symbol rows from a complex field pair."""
    n = x.size
    if sps < 1 or n % sps != 0:
        raise DataError(f"{n} samples do not align to a symbol grid at sps={sps}")
    stacked = np.stack([x.real, x.imag, y.real, y.imag], axis=-1)
    return stacked.reshape(n // sps, 4 * sps).astype(dtype)


def rows_to_field(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of field_to_rows; returns (x, y) complex128 sample arrays."""
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[1] % 4 != 0:
        raise DataError(f"symbol rows must be [n, 4*sps], got {rows.shape}")
    parts = rows.reshape(rows.shape[0], rows.shape[1] // 4, 4).astype(np.float64)
    flat = parts.reshape(-1, 4)
    return flat[:, 0] + 1j * flat[:, 1], flat[:, 2] + 1j * flat[:, 3]
