"""Training-set construction from split-step runs.

Span taps become (input, target) waveform pairs, optionally linearly decoupled
so targets keep only nonlinear structure, power-normalized, cut into sliding
symbol windows, and exported in a small binary format (".wds") consumed by the
model-training component.

The ".wds" byte layout (little-endian) is the cross-component contract:

    offset 0   magic "WDS1" (4 bytes)
    offset 4   mode          u8   (0 PURE, 1 FDD, 2 SEQ2SEQ)
    offset 5   layout        u8   (0 TEMPORAL, 1 FLAT)
    offset 6   b             u32  window count
    offset 10  window_length u32  symbols per window (2m+1)
    offset 14  d             u32  reals per symbol position (4 * sps)
    offset 18  inputs        float32[b * window_length * d], C order
    ...        targets       float32[b * d]

A JSON manifest sidecar sits next to each file at path + ".json".
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field as dataclass_field
from enum import Enum
from pathlib import Path

import numpy as np

from fiberwave.core import (
    ConfigError,
    DualPolField,
    FieldFormatError,
    LinkConfig,
    PrngSpec,
    WdmConfig,
)
from fiberwave.rxdsp import cdc
from fiberwave.ssfm import propagate_link

__all__ = [
    "WindowMode",
    "ShardLayout",
    "WindowSpec",
    "DatasetShard",
    "window_length",
    "fdd_decouple",
    "power_normalize",
    "build_windows",
    "split_labels",
    "collect_training_set",
    "write_dataset",
    "read_dataset",
]


class WindowMode(str, Enum):
    PURE = "PURE"
    FDD = "FDD"
    SEQ2SEQ = "SEQ2SEQ"


class ShardLayout(str, Enum):
    TEMPORAL = "TEMPORAL"
    FLAT = "FLAT"


_MODE_CODES = {WindowMode.PURE: 0, WindowMode.FDD: 1, WindowMode.SEQ2SEQ: 2}
_LAYOUT_CODES = {ShardLayout.TEMPORAL: 0, ShardLayout.FLAT: 1}
_MODES_BY_CODE = {v: k for k, v in _MODE_CODES.items()}
_LAYOUTS_BY_CODE = {v: k for k, v in _LAYOUT_CODES.items()}


@dataclass(frozen=True)
class WindowSpec:
    """Input window geometry for one dataset mode.

    n_isi is the dispersive memory over the full length, n_nl its analogue
    over the effective nonlinear length; m is the half-window of the mode's
    chosen length (window_length = 2m + 1, always odd).
    """

    n_isi: int
    n_nl: int
    m: int
    mode: WindowMode
    spectrum_width_hz: float
    effective_length_km: float

    def __post_init__(self):
        if self.n_isi < 1 or self.n_nl < 1 or self.m < 0:
            raise ConfigError("window sizes must be positive")
        if self.n_isi % 2 == 0 or self.n_nl % 2 == 0:
            raise ConfigError("window lengths must be odd")

    @property
    def window_length(self) -> int:
        return 2 * self.m + 1


def _odd_ceil(value: float) -> int:
    """Smallest odd integer >= value (>= 1)."""
    n = max(int(math.ceil(value)), 1)
    return n if n % 2 == 1 else n + 1


def window_length(
    cfg: WdmConfig,
    distance_km: float,
    alpha_db_per_km: float,
    beta2_ps2_per_km: float,
    mode: WindowMode | str = WindowMode.PURE,
) -> WindowSpec:
    """Symbol window sizes from the dispersive memory of the link.

    The dispersive memory in symbols is L * |beta2| * (2 pi W) * S with W the
    full multiplex width in Hz and S the symbol rate; the window is that value
    rounded up to the next odd integer. The nonlinear variant replaces L with
    the asymptotic effective length 1/alpha (the span length when alpha = 0),
    since nonlinear mixing happens almost entirely before the power has
    decayed.
    """
    mode = WindowMode(mode)
    if mode is WindowMode.SEQ2SEQ:
        raise ConfigError("SEQ2SEQ windows are asymmetric; size them explicitly")
    if distance_km < 0 or alpha_db_per_km < 0:
        raise ConfigError("distance and attenuation must be >= 0")
    width_hz = cfg.num_channels * cfg.spacing_hz
    beta2_s2_per_km = abs(beta2_ps2_per_km) * 1e-24
    per_km = beta2_s2_per_km * 2.0 * math.pi * width_hz * cfg.symbol_rate_baud
    if alpha_db_per_km > 0:
        alpha_linear = alpha_db_per_km * math.log(10.0) / 10.0
        l_eff = 1.0 / alpha_linear
    else:
        l_eff = distance_km
    n_isi = _odd_ceil(distance_km * per_km)
    n_nl = _odd_ceil(l_eff * per_km)
    chosen = n_isi if mode is WindowMode.PURE else n_nl
    return WindowSpec(
        n_isi=n_isi,
        n_nl=n_nl,
        m=(chosen - 1) // 2,
        mode=mode,
        spectrum_width_hz=width_hz,
        effective_length_km=l_eff,
    )


def fdd_decouple(
    output_field: DualPolField, beta2_ps2_per_km: float, span_length_km: float
) -> DualPolField:
    """Remove one span's dispersion from a span output so the target keeps
    only the nonlinear (and loss/gain) structure."""
    if span_length_km < 0:
        raise ConfigError("span_length_km must be >= 0")
    return cdc(output_field, beta2_ps2_per_km, span_length_km)


def power_normalize(field: DualPolField, cfg: WdmConfig) -> DualPolField:
    """Scale the field by 1/sqrt(total configured launch power in watts)."""
    total_w = cfg.total_launch_power_w
    if total_w <= 0:
        raise ConfigError("total launch power must be positive")
    scale = 1.0 / math.sqrt(total_w)
    if scale == 1.0:
        return field
    return field.with_samples(field.x_samples * scale, field.y_samples * scale)


@dataclass(frozen=True)
class DatasetShard:
    """One (seed, span) worth of window tensors plus its manifest."""

    inputs: np.ndarray
    targets: np.ndarray
    manifest: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float32)
        targets = np.ascontiguousarray(self.targets, dtype=np.float32)
        if targets.ndim != 2:
            raise ConfigError("targets must be [b, d]")
        b, d = targets.shape
        if inputs.ndim == 3:
            if inputs.shape[0] != b or inputs.shape[2] != d:
                raise ConfigError(
                    f"TEMPORAL inputs {inputs.shape} inconsistent with targets {targets.shape}"
                )
        elif inputs.ndim == 2:
            if inputs.shape[0] != b or inputs.shape[1] % d != 0:
                raise ConfigError(
                    f"FLAT inputs {inputs.shape} inconsistent with targets {targets.shape}"
                )
        else:
            raise ConfigError("inputs must be [b, 2m+1, d] or [b, (2m+1)*d]")
        inputs.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def b(self) -> int:
        return self.targets.shape[0]

    @property
    def d(self) -> int:
        return self.targets.shape[1]

    @property
    def layout(self) -> ShardLayout:
        return ShardLayout.TEMPORAL if self.inputs.ndim == 3 else ShardLayout.FLAT

    @property
    def window_symbols(self) -> int:
        if self.inputs.ndim == 3:
            return self.inputs.shape[1]
        return self.inputs.shape[1] // self.d


def _symbol_matrix(field: DualPolField, sps: int) -> np.ndarray:
    """[n_sym, 4*sps] float32 matrix: per sample point [XI, XQ, YI, YQ]."""
    n = field.num_samples
    if sps < 1 or n % sps != 0:
        raise ConfigError(f"{n} samples do not align to a symbol grid at sps={sps}")
    stacked = np.stack(
        [
            field.x_samples.real,
            field.x_samples.imag,
            field.y_samples.real,
            field.y_samples.imag,
        ],
        axis=-1,
    )
    return stacked.reshape(n // sps, 4 * sps).astype(np.float32)


def build_windows(
    input_field: DualPolField,
    target_field: DualPolField,
    spec: WindowSpec,
    layout: ShardLayout | str,
    cfg: WdmConfig,
    manifest: dict | None = None,
) -> DatasetShard:
    """Cut aligned input/target fields into circular sliding-window tensors.

    One window per symbol position: inputs cover the 2m+1 symbols around it
    (wrapping around the circular frame), targets the center symbol only.
    """
    layout = ShardLayout(layout)
    if input_field.num_samples != target_field.num_samples:
        raise ConfigError("input and target fields differ in length")
    if input_field.sample_rate_hz != target_field.sample_rate_hz:
        raise ConfigError("input and target fields differ in sample rate")
    if input_field.sample_rate_hz != cfg.sample_rate_hz:
        raise ConfigError("field sample rate does not match the WDM config")
    sps = cfg.sps
    in_mat = _symbol_matrix(input_field, sps)
    tgt_mat = _symbol_matrix(target_field, sps)
    n_sym = in_mat.shape[0]
    wl = spec.window_length
    if n_sym < wl:
        raise ConfigError(f"frame of {n_sym} symbols shorter than window {wl}")
    idx = (np.arange(n_sym)[:, None] + np.arange(-spec.m, spec.m + 1)[None, :]) % n_sym
    windows = in_mat[idx]  # [b, 2m+1, d]
    if layout is ShardLayout.FLAT:
        windows = windows.reshape(n_sym, wl * in_mat.shape[1])
    meta = dict(manifest or {})
    meta.setdefault("mode", spec.mode.value)
    meta.setdefault("layout", layout.value)
    meta.setdefault("window_length", wl)
    meta.setdefault("d", in_mat.shape[1])
    meta.setdefault("b", n_sym)
    return DatasetShard(inputs=windows, targets=tgt_mat, manifest=meta)


def split_labels(seed: int, span_index: int, count: int) -> np.ndarray:
    """Deterministic 8:2:1 split labels (0 train, 1 val, 2 test) per window.

    Hash of "seed:span:index" (64-bit blake2b, little-endian) mod 11:
    0-7 train, 8-9 val, 10 test. Stable across platforms and sessions.
    """
    labels = np.empty(count, dtype=np.uint8)
    for i in range(count):
        digest = hashlib.blake2b(
            f"{seed}:{span_index}:{i}".encode(), digest_size=8
        ).digest()
        bucket = int.from_bytes(digest, "little") % 11
        labels[i] = 0 if bucket < 8 else (1 if bucket < 10 else 2)
    return labels


def _prng_manifest(prng: PrngSpec) -> dict:
    return {
        "algorithm": prng.algorithm.value,
        "seed": prng.seed,
        "stream_id": prng.stream_id,
    }


def collect_training_set(
    link: LinkConfig,
    cfg: WdmConfig,
    seeds,
    taps=(1, 3, 5, 7, 9),
    mode: WindowMode | str = WindowMode.FDD,
    layout: ShardLayout | str = ShardLayout.TEMPORAL,
    num_symbols: int = 7680,
    spec: WindowSpec | None = None,
) -> list:
    """Run the link once per seed and cut (span input, span output) pairs.

    Targets are the pre-amplifier span outputs with the amplifier's flat gain
    applied noiselessly, so a perfect model plus external ASE injection
    reproduces the physical cascade. Inputs are the fields entering each
    tapped span (amplifier noise from earlier spans included). FDD mode
    removes one span of dispersion from each target; both sides share one
    power normalization constant derived from the configured launch powers.
    """
    from fiberwave.txdsp import transmit

    mode = WindowMode(mode)
    layout = ShardLayout(layout)
    taps = tuple(sorted(set(int(t) for t in taps)))
    if not taps:
        raise ConfigError("need at least one tap")
    if taps[0] < 1 or taps[-1] > link.num_spans:
        raise ConfigError(f"taps {taps} outside 1..{link.num_spans}")
    if spec is None:
        span0 = link.spans[0][0]
        spec = window_length(
            cfg,
            span0.span_length_km,
            span0.attenuation_db_per_km,
            span0.beta2_ps2_per_km,
            mode if mode is not WindowMode.SEQ2SEQ else WindowMode.PURE,
        )
    # inputs for span k live at the previous span's amplifier output
    need = set(taps) | {t - 1 for t in taps if t > 1}
    shards = []
    for prng in seeds:
        frame = transmit(cfg, prng, num_symbols=num_symbols)
        result = propagate_link(frame.field, link, taps=need)
        records = {r.span_index: r for r in result.tap_records}
        for t in taps:
            span, edfa = link.spans[t - 1]
            entry = frame.field if t == 1 else records[t - 1].field_after_edfa
            raw_target = records[t].field_before_edfa
            amp = 10.0 ** (edfa.gain_db / 20.0) if edfa.enabled else 1.0
            target = raw_target.with_samples(
                raw_target.x_samples * amp, raw_target.y_samples * amp
            )
            if mode is WindowMode.FDD:
                target = fdd_decouple(target, span.beta2_ps2_per_km, span.span_length_km)
            entry = power_normalize(entry, cfg)
            target = power_normalize(target, cfg)
            labels = split_labels(prng.seed, t, num_symbols)
            manifest = {
                "format": "wds-manifest",
                "mode": mode.value,
                "layout": layout.value,
                "span_index": t,
                "num_symbols": num_symbols,
                "prng": _prng_manifest(prng),
                "wdm": dataclasses.asdict(cfg),
                "span_params": dataclasses.asdict(span),
                "edfa_gain_db": edfa.gain_db if edfa.enabled else 0.0,
                "normalization_scale_per_sqrt_w": 1.0 / math.sqrt(cfg.total_launch_power_w),
                "window": dataclasses.asdict(spec),
                "split": "".join("012"[v] for v in labels),
                "split_rule": "blake2b64(seed:span:index) % 11 -> 0-7 train, 8-9 val, 10 test",
            }
            manifest["window"]["mode"] = spec.mode.value
            shards.append(
                build_windows(entry, target, spec, layout, cfg, manifest=manifest)
            )
    return shards


_WDS_MAGIC = b"WDS1"
_WDS_HEADER = struct.Struct("<4sBBIII")


def write_dataset(shard: DatasetShard, path) -> None:
    """Serialize one shard to a ".wds" file plus its JSON manifest sidecar."""
    path = Path(path)
    mode = WindowMode(shard.manifest.get("mode", WindowMode.PURE.value))
    header = _WDS_HEADER.pack(
        _WDS_MAGIC,
        _MODE_CODES[mode],
        _LAYOUT_CODES[shard.layout],
        shard.b,
        shard.window_symbols,
        shard.d,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(shard.inputs, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(shard.targets, dtype="<f4").tobytes())
    sidecar = path.with_name(path.name + ".json")
    manifest = dict(shard.manifest)
    manifest.setdefault("b", shard.b)
    manifest.setdefault("d", shard.d)
    manifest.setdefault("window_length", shard.window_symbols)
    with open(sidecar, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_dataset(path) -> DatasetShard:
    """Read a ".wds" file back; offsets in errors point at the defect."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _WDS_HEADER.size:
        raise FieldFormatError(f"file shorter than the {_WDS_HEADER.size}-byte header", offset=len(raw))
    magic, mode_code, layout_code, b, wl, d = _WDS_HEADER.unpack_from(raw, 0)
    if magic != _WDS_MAGIC:
        raise FieldFormatError(f"bad magic {magic!r}, expected {_WDS_MAGIC!r}", offset=0)
    if mode_code not in _MODES_BY_CODE:
        raise FieldFormatError(f"unknown mode code {mode_code}", offset=4)
    if layout_code not in _LAYOUTS_BY_CODE:
        raise FieldFormatError(f"unknown layout code {layout_code}", offset=5)
    n_inputs = b * wl * d
    n_targets = b * d
    expected = _WDS_HEADER.size + 4 * (n_inputs + n_targets)
    if len(raw) != expected:
        raise FieldFormatError(
            f"payload is {len(raw)} bytes, expected {expected}", offset=min(len(raw), expected)
        )
    flat = np.frombuffer(raw, dtype="<f4", count=n_inputs, offset=_WDS_HEADER.size)
    targets = np.frombuffer(
        raw, dtype="<f4", count=n_targets, offset=_WDS_HEADER.size + 4 * n_inputs
    ).reshape(b, d)
    layout = _LAYOUTS_BY_CODE[layout_code]
    if layout is ShardLayout.TEMPORAL:
        inputs = flat.reshape(b, wl, d)
    else:
        inputs = flat.reshape(b, wl * d)
    sidecar = path.with_name(path.name + ".json")
    manifest = {}
    if sidecar.exists():
        manifest = json.loads(sidecar.read_text())
    manifest.setdefault("mode", _MODES_BY_CODE[mode_code].value)
    manifest.setdefault("layout", layout.value)
    return DatasetShard(inputs=inputs.copy(), targets=targets.copy(), manifest=manifest)
