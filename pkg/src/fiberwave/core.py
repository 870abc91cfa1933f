"""Shared domain types, unit conversions, PRNG streams, and the waveform file format.

Conventions used throughout the package:

* fields are complex baseband envelopes in sqrt-W, powers in W, dBm only at
  configuration surfaces;
* the time axis is periodic over the whole frame (circular convolution);
* beta2 is stored in ps^2/km and converted to SI only where phase is applied.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import numpy as np

C_LIGHT_M_S = 299792458.0        # CODATA
H_PLANCK_J_S = 6.62607015e-34    # CODATA, exact


class FiberwaveError(Exception):
    """Base class for package errors."""


class ConfigError(FiberwaveError):
    """Invalid or inconsistent configuration input."""


class FieldFormatError(FiberwaveError):
    """Malformed waveform file; carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class PropagationError(FiberwaveError):
    """Numerical failure during propagation; carries the failing step index."""

    def __init__(self, message: str, step_index: int):
        super().__init__(f"{message} (step {step_index})")
        self.step_index = step_index


class NumericError(FiberwaveError):
    """A numeric procedure could not reach its target (e.g. noise loading)."""


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


def dbm_to_watts(dbm: float) -> float:
    return 1e-3 * 10.0 ** (dbm / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts / 1e-3)


def derive_beta2(dispersion_ps_nm_km: float, wavelength_m: float) -> float:
    """Group-velocity dispersion beta2 [ps^2/km] from D [ps/(nm km)].

    beta2 = -D * lambda^2 / (2 pi c); the ps/nm/km -> ps^2/km conversion
    collapses to a factor 1e21 with lambda in meters.
    """
    if not (math.isfinite(dispersion_ps_nm_km) and math.isfinite(wavelength_m)):
        raise ConfigError("dispersion and wavelength must be finite")
    if wavelength_m <= 0:
        raise ConfigError("wavelength_m must be positive")
    return -dispersion_ps_nm_km * wavelength_m**2 * 1e21 / (2.0 * math.pi * C_LIGHT_M_S)


def derive_dispersion(beta2_ps2_per_km: float, wavelength_m: float) -> float:
    """Inverse of derive_beta2."""
    if not math.isfinite(beta2_ps2_per_km):
        raise ConfigError("beta2 must be finite")
    if wavelength_m <= 0:
        raise ConfigError("wavelength_m must be positive")
    return -beta2_ps2_per_km * 2.0 * math.pi * C_LIGHT_M_S / (wavelength_m**2 * 1e21)


class PrngAlgorithm(str, Enum):
    MT = "MT"
    PCG = "PCG"
    PHILOX = "PHILOX"
    SFC = "SFC"


_BIT_GENERATORS = {
    PrngAlgorithm.MT: np.random.MT19937,
    PrngAlgorithm.PCG: np.random.PCG64,
    PrngAlgorithm.PHILOX: np.random.Philox,
    PrngAlgorithm.SFC: np.random.SFC64,
}


@dataclass(frozen=True)
class PrngSpec:
    """Deterministic random stream identity: (algorithm, seed, stream_id).

    Equal specs produce bit-identical draw sequences. Distinct stream_ids (or
    extra subkeys passed to generator()) give statistically independent streams,
    so every consumer owns its stream and no generator state is ever shared.
    """

    algorithm: PrngAlgorithm = PrngAlgorithm.PCG
    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "algorithm", PrngAlgorithm(self.algorithm))
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) < 2**64:
                raise ConfigError(f"{name} must be an unsigned 64-bit integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    def generator(self, *subkeys: int) -> np.random.Generator:
        """Fresh generator for this stream; subkeys derive child streams."""
        ss = np.random.SeedSequence(entropy=(self.seed, self.stream_id, *subkeys))
        return np.random.Generator(_BIT_GENERATORS[self.algorithm](ss))

    def child(self, *subkeys: int) -> "PrngSpec":
        """Spec for a derived stream (same algorithm, mixed stream_id)."""
        ss = np.random.SeedSequence(entropy=(self.seed, self.stream_id, *subkeys))
        derived = int(ss.generate_state(1, np.uint64)[0])
        return PrngSpec(self.algorithm, self.seed, derived)

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm.value, "seed": self.seed, "stream_id": self.stream_id}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PrngSpec":
        return _dataclass_from_dict(cls, data)


@dataclass(frozen=True)
class DualPolField:
    """Dual-polarization complex baseband field sampled on a uniform grid.

    x_samples/y_samples are sqrt-W amplitudes; position_km is the z coordinate
    the field lives at. Instances are immutable (arrays are read-only views);
    every operation returns a new field.
    """

    x_samples: np.ndarray
    y_samples: np.ndarray
    sample_rate_hz: float
    center_wavelength_m: float = 1550e-9
    position_km: float = 0.0

    def __post_init__(self):
        x = np.ascontiguousarray(self.x_samples, dtype=np.complex128)
        y = np.ascontiguousarray(self.y_samples, dtype=np.complex128)
        if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape or x.size < 1:
            raise ConfigError("x/y samples must be 1-D, same length, length >= 1")
        if not (np.all(np.isfinite(x.view(np.float64))) and np.all(np.isfinite(y.view(np.float64)))):
            raise ConfigError("field amplitudes must be finite")
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise ConfigError("sample_rate_hz must be positive and finite")
        if not (self.center_wavelength_m > 0 and math.isfinite(self.center_wavelength_m)):
            raise ConfigError("center_wavelength_m must be positive and finite")
        if self.position_km < 0 or not math.isfinite(self.position_km):
            raise ConfigError("position_km must be nonnegative and finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x_samples", x)
        object.__setattr__(self, "y_samples", y)

    @property
    def num_samples(self) -> int:
        return self.x_samples.size

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    @property
    def mean_power_w(self) -> float:
        return float(np.mean(np.abs(self.x_samples) ** 2 + np.abs(self.y_samples) ** 2))

    @property
    def peak_power_w(self) -> float:
        return float(np.max(np.abs(self.x_samples) ** 2 + np.abs(self.y_samples) ** 2))

    def energy(self) -> float:
        """Sum of |x|^2 + |y|^2 over the frame (units W, grid-normalized)."""
        return float(np.sum(np.abs(self.x_samples) ** 2 + np.abs(self.y_samples) ** 2))

    def replace(self, **changes: Any) -> "DualPolField":
        return dataclasses.replace(self, **changes)

    def with_samples(self, x: np.ndarray, y: np.ndarray, position_km: float | None = None) -> "DualPolField":
        return dataclasses.replace(
            self, x_samples=x, y_samples=y,
            position_km=self.position_km if position_km is None else position_km,
        )


@dataclass(frozen=True)
class WdmConfig:
    """WDM transmitter grid: C channels of DP-16QAM on an even spacing.

    channel_spacing_hz defaults to max(S*(1+rolloff), S + 10 GHz): collision-free
    for any rolloff and matching the 10 GHz guard band the window-length
    calibration is anchored to. samples_per_symbol defaults to 4*num_channels so
    the simulation bandwidth scales with the WDM band.
    """

    num_channels: int = 5
    symbol_rate_baud: float = 50e9
    channel_spacing_hz: float | None = None
    rolloff: float = 0.1
    launch_power_dbm_per_channel: float = 0.0
    modulation: str = "DP16QAM"
    samples_per_symbol: int | None = None

    def __post_init__(self):
        if not (isinstance(self.num_channels, (int, np.integer)) and self.num_channels >= 1):
            raise ConfigError("num_channels must be a positive integer")
        object.__setattr__(self, "num_channels", int(self.num_channels))
        if not (self.symbol_rate_baud > 0 and math.isfinite(self.symbol_rate_baud)):
            raise ConfigError("symbol_rate_baud must be positive")
        if not 0 < self.rolloff <= 1:
            raise ConfigError("rolloff must be in (0, 1]")
        if self.modulation != "DP16QAM":
            raise ConfigError(f"unsupported modulation {self.modulation!r}")
        if not math.isfinite(self.launch_power_dbm_per_channel):
            raise ConfigError("launch_power_dbm_per_channel must be finite")
        min_spacing = self.symbol_rate_baud * (1.0 + self.rolloff)
        if self.channel_spacing_hz is not None and self.channel_spacing_hz < min_spacing * (1 - 1e-12):
            raise ConfigError(
                f"channel_spacing_hz {self.channel_spacing_hz:g} overlaps adjacent "
                f"channels; need >= {min_spacing:g}"
            )
        if self.samples_per_symbol is not None:
            if not (isinstance(self.samples_per_symbol, (int, np.integer)) and self.samples_per_symbol >= 2):
                raise ConfigError("samples_per_symbol must be an integer >= 2")
            object.__setattr__(self, "samples_per_symbol", int(self.samples_per_symbol))
        if self.sample_rate_hz < self.num_channels * self.spacing_hz * (1 - 1e-12):
            raise ConfigError(
                f"sample rate {self.sample_rate_hz:g} Hz cannot carry the WDM band; "
                f"need >= {self.num_channels * self.spacing_hz:g} Hz"
            )

    @property
    def spacing_hz(self) -> float:
        if self.channel_spacing_hz is not None:
            return self.channel_spacing_hz
        return max(self.symbol_rate_baud * (1.0 + self.rolloff), self.symbol_rate_baud + 10e9)

    @property
    def sps(self) -> int:
        if self.samples_per_symbol is not None:
            return self.samples_per_symbol
        return 4 * self.num_channels

    @property
    def sample_rate_hz(self) -> float:
        return self.sps * self.symbol_rate_baud

    def channel_offset_hz(self, channel_index: int) -> float:
        """Center-frequency offset of 1-based channel k: (k - (C+1)/2) * spacing."""
        if not 1 <= channel_index <= self.num_channels:
            raise ConfigError(f"channel_index {channel_index} out of range 1..{self.num_channels}")
        return (channel_index - (self.num_channels + 1) / 2.0) * self.spacing_hz

    @property
    def center_channel(self) -> int:
        """The channel under test: middle of the grid (1-based)."""
        return (self.num_channels + 1) // 2

    @property
    def launch_power_w_per_channel(self) -> float:
        return dbm_to_watts(self.launch_power_dbm_per_channel)

    @property
    def total_launch_power_w(self) -> float:
        return self.num_channels * self.launch_power_w_per_channel

    def replace(self, **changes: Any) -> "WdmConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "WdmConfig":
        return _dataclass_from_dict(cls, data)


@dataclass(frozen=True)
class FiberSpanParams:
    """One fiber span: attenuation, dispersion, Kerr coefficient, length.

    Give either dispersion_ps_nm_km or beta2_ps2_per_km; the other is derived
    at wavelength_m. If both are given they must agree to 1e-12 relative.
    """

    attenuation_db_per_km: float = 0.2
    dispersion_ps_nm_km: float | None = 17.0
    beta2_ps2_per_km: float | None = None
    gamma_per_w_km: float = 1.3
    span_length_km: float = 80.0
    max_nonlinear_phase_rad: float = 0.005
    wavelength_m: float = 1550e-9

    def __post_init__(self):
        if self.attenuation_db_per_km < 0 or not math.isfinite(self.attenuation_db_per_km):
            raise ConfigError("attenuation_db_per_km must be >= 0")
        if self.gamma_per_w_km < 0 or not math.isfinite(self.gamma_per_w_km):
            raise ConfigError("gamma_per_w_km must be >= 0")
        if not (self.span_length_km > 0 and math.isfinite(self.span_length_km)):
            raise ConfigError("span_length_km must be positive")
        if not 0 < self.max_nonlinear_phase_rad <= 0.1:
            raise ConfigError("max_nonlinear_phase_rad must be in (0, 0.1]")
        if self.dispersion_ps_nm_km is None and self.beta2_ps2_per_km is None:
            raise ConfigError("give dispersion_ps_nm_km or beta2_ps2_per_km")
        if self.beta2_ps2_per_km is None:
            object.__setattr__(
                self, "beta2_ps2_per_km",
                derive_beta2(self.dispersion_ps_nm_km, self.wavelength_m),
            )
        elif self.dispersion_ps_nm_km is None:
            object.__setattr__(
                self, "dispersion_ps_nm_km",
                derive_dispersion(self.beta2_ps2_per_km, self.wavelength_m),
            )
        else:
            derived = derive_beta2(self.dispersion_ps_nm_km, self.wavelength_m)
            scale = max(abs(derived), abs(self.beta2_ps2_per_km))
            if scale > 0 and abs(derived - self.beta2_ps2_per_km) > 1e-12 * scale:
                raise ConfigError(
                    f"beta2_ps2_per_km {self.beta2_ps2_per_km} inconsistent with "
                    f"dispersion {self.dispersion_ps_nm_km} (derived {derived})"
                )
        if not math.isfinite(self.beta2_ps2_per_km):
            raise ConfigError("beta2 must be finite")

    @property
    def alpha_linear_per_km(self) -> float:
        """Power attenuation coefficient in 1/km (0.2 dB/km -> 0.046052/km)."""
        return self.attenuation_db_per_km * math.log(10.0) / 10.0

    @property
    def beta2_s2_per_km(self) -> float:
        return self.beta2_ps2_per_km * 1e-24

    @property
    def loss_db(self) -> float:
        """Total span loss in dB."""
        return self.attenuation_db_per_km * self.span_length_km

    def replace(self, **changes: Any) -> "FiberSpanParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FiberSpanParams":
        return _dataclass_from_dict(cls, data)


@dataclass(frozen=True)
class EdfaParams:
    """Lumped amplifier at a span end.

    gain_db None means exact span-loss compensation (resolved when the link is
    assembled). ase_enabled False amplifies without noise; enabled False
    bypasses the amplifier entirely.
    """

    gain_db: float | None = None
    noise_figure_db: float = 5.0
    enabled: bool = True
    ase_enabled: bool = True
    ase_seed: int = 0

    def __post_init__(self):
        if self.gain_db is not None:
            if not math.isfinite(self.gain_db):
                raise ConfigError("gain_db must be finite")
            if self.enabled and self.gain_db < 0:
                raise ConfigError("gain_db must be >= 0 when the EDFA is enabled")
        if not math.isfinite(self.noise_figure_db):
            raise ConfigError("noise_figure_db must be finite")
        if not isinstance(self.ase_seed, (int, np.integer)) or not 0 <= int(self.ase_seed) < 2**64:
            raise ConfigError("ase_seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "ase_seed", int(self.ase_seed))

    def replace(self, **changes: Any) -> "EdfaParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EdfaParams":
        return _dataclass_from_dict(cls, data)


@dataclass(frozen=True)
class LinkConfig:
    """Ordered chain of (span, amplifier) pairs."""

    spans: tuple

    def __post_init__(self):
        spans = tuple(self.spans)
        if not all(
            isinstance(s, tuple) and len(s) == 2
            and isinstance(s[0], FiberSpanParams) and isinstance(s[1], EdfaParams)
            for s in spans
        ):
            raise ConfigError("spans must be (FiberSpanParams, EdfaParams) pairs")
        # resolve gain_db=None to exact span-loss compensation
        spans = tuple(
            (sp, ed.replace(gain_db=sp.loss_db) if ed.gain_db is None else ed)
            for sp, ed in spans
        )
        object.__setattr__(self, "spans", spans)

    @classmethod
    def uniform(
        cls,
        num_spans: int,
        span: FiberSpanParams | None = None,
        edfa: EdfaParams | None = None,
        ase_seeds: list[int] | None = None,
    ) -> "LinkConfig":
        """Identical spans; per-span ase seeds default to edfa.ase_seed + index."""
        if num_spans < 0:
            raise ConfigError("num_spans must be >= 0")
        span = span if span is not None else FiberSpanParams()
        edfa = edfa if edfa is not None else EdfaParams()
        if ase_seeds is None:
            ase_seeds = [edfa.ase_seed + i for i in range(num_spans)]
        if len(ase_seeds) != num_spans:
            raise ConfigError("ase_seeds must have one entry per span")
        return cls(tuple((span, edfa.replace(ase_seed=s)) for s in ase_seeds))

    @property
    def num_spans(self) -> int:
        return len(self.spans)

    @property
    def total_distance_km(self) -> float:
        return sum(sp.span_length_km for sp, _ in self.spans)

    def truncated(self, num_spans: int) -> "LinkConfig":
        """The first num_spans spans of this link."""
        if not 0 <= num_spans <= self.num_spans:
            raise ConfigError(f"num_spans {num_spans} out of range 0..{self.num_spans}")
        return LinkConfig(self.spans[:num_spans])

    def to_dict(self) -> dict:
        return {"spans": [{"span": sp.to_dict(), "edfa": ed.to_dict()} for sp, ed in self.spans]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LinkConfig":
        unknown = set(data) - {"spans", "num_spans", "span", "edfa", "ase_seeds"}
        if unknown:
            raise ConfigError(f"unknown LinkConfig keys: {sorted(unknown)}")
        if "spans" in data:
            if {"num_spans", "span", "edfa", "ase_seeds"} & set(data):
                raise ConfigError("give either 'spans' or the uniform-link keys, not both")
            pairs = []
            for entry in data["spans"]:
                bad = set(entry) - {"span", "edfa"}
                if bad:
                    raise ConfigError(f"unknown span entry keys: {sorted(bad)}")
                pairs.append((
                    FiberSpanParams.from_dict(entry.get("span", {})),
                    EdfaParams.from_dict(entry.get("edfa", {})),
                ))
            return cls(tuple(pairs))
        if "num_spans" not in data:
            raise ConfigError("LinkConfig needs 'spans' or 'num_spans'")
        return cls.uniform(
            int(data["num_spans"]),
            FiberSpanParams.from_dict(data.get("span", {})),
            EdfaParams.from_dict(data.get("edfa", {})),
            list(data["ase_seeds"]) if "ase_seeds" in data else None,
        )


def _dataclass_from_dict(cls, data: Mapping[str, Any]):
    """Strict dataclass construction: unknown keys are configuration errors."""
    if not isinstance(data, Mapping):
        raise ConfigError(f"{cls.__name__} config must be a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


_WFLD_MAGIC = b"WFLD"
_WFLD_VERSION = 1
_WFLD_HEADER = struct.Struct("<4sIQddd")


def write_field(field: DualPolField, path, manifest: Mapping[str, Any] | None = None) -> Path:
    """Write a field to the '.wfld' binary format; optional JSON sidecar.

    Layout (little-endian): magic "WFLD", u32 version=1, u64 num_samples,
    f64 sample_rate_hz, f64 center_wavelength_m, f64 position_km, then
    num_samples records of [XI, XQ, YI, YQ] as f64. Lossless for finite fields.
    """
    path = Path(path)
    n = field.num_samples
    header = _WFLD_HEADER.pack(
        _WFLD_MAGIC, _WFLD_VERSION, n,
        field.sample_rate_hz, field.center_wavelength_m, field.position_km,
    )
    records = np.empty((n, 4), dtype="<f8")
    records[:, 0] = field.x_samples.real
    records[:, 1] = field.x_samples.imag
    records[:, 2] = field.y_samples.real
    records[:, 3] = field.y_samples.imag
    path.write_bytes(header + records.tobytes())
    if manifest is not None:
        sidecar_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def read_field(path) -> DualPolField:
    """Read a '.wfld' file; FieldFormatError names the defective byte offset."""
    raw = Path(path).read_bytes()
    if len(raw) < _WFLD_HEADER.size:
        if raw[:4] != _WFLD_MAGIC:
            raise FieldFormatError("bad magic", offset=0)
        raise FieldFormatError("truncated header", offset=len(raw))
    magic, version, n, fs, wavelength, position = _WFLD_HEADER.unpack_from(raw, 0)
    if magic != _WFLD_MAGIC:
        raise FieldFormatError("bad magic", offset=0)
    if version != _WFLD_VERSION:
        raise FieldFormatError(f"unsupported version {version}", offset=4)
    expected = _WFLD_HEADER.size + 32 * n
    if len(raw) < expected:
        raise FieldFormatError(
            f"truncated payload: expected {expected} bytes, got {len(raw)}", offset=len(raw)
        )
    records = np.frombuffer(raw, dtype="<f8", count=4 * n, offset=_WFLD_HEADER.size)
    records = records.reshape(n, 4)
    return DualPolField(
        x_samples=records[:, 0] + 1j * records[:, 1],
        y_samples=records[:, 2] + 1j * records[:, 3],
        sample_rate_hz=fs,
        center_wavelength_m=wavelength,
        position_km=position,
    )


def read_field_manifest(path) -> dict | None:
    """The JSON sidecar written next to a '.wfld' file, if present."""
    sp = sidecar_path(path)
    if not sp.exists():
        return None
    return json.loads(sp.read_text())
