"""Transmitter DSP: bits, DP-16QAM mapping, RRC pulse shaping, WDM multiplexing.

The pulse shaper works in the frequency domain over the circular frame, so the
root-raised-cosine pair satisfies the Nyquist criterion exactly (no FIR
truncation ripple) and a back-to-back chain recovers the symbols to float
rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as fft

from fiberwave.core import (
    ConfigError,
    DualPolField,
    PrngSpec,
    WdmConfig,
)

# Gray-coded square 16QAM, frozen. A symbol consumes 4 bits (b0, b1, b2, b3):
# (b0, b1) selects the I level, (b2, b3) the Q level, through
#   00 -> -3,  01 -> -1,  11 -> +1,  10 -> +3,
# and the grid is scaled by 1/sqrt(10) so its mean power is exactly 1.
# Adjacent levels differ in one bit, so one symbol error costs ~1 bit error.
_LEVELS_BY_MSB_LSB = np.array([-3.0, -1.0, 3.0, 1.0]) / math.sqrt(10.0)  # index = 2*b_msb + b_lsb

QAM16_CONSTELLATION = np.array(
    [
        _LEVELS_BY_MSB_LSB[2 * b0 + b1] + 1j * _LEVELS_BY_MSB_LSB[2 * b2 + b3]
        for b0 in (0, 1)
        for b1 in (0, 1)
        for b2 in (0, 1)
        for b3 in (0, 1)
    ]
)


@dataclass(frozen=True)
class BitStream:
    """A bit sequence, optionally tagged with the stream that generated it.

    Receiver-side decisions produce BitStreams too; those carry prng=None.
    """

    bits: np.ndarray
    prng: PrngSpec | None = None

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 1 or bits.size == 0:
            raise ConfigError("bits must be a nonempty 1-D sequence")
        if not np.all((bits == 0) | (bits == 1)):
            raise ConfigError("bits must be 0/1 valued")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return self.bits.size


@dataclass(frozen=True)
class SymbolStream:
    """Per-channel dual-polarization symbol sequences, unit average grid power."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.complex128)
        y = np.ascontiguousarray(self.y, dtype=np.complex128)
        if x.ndim != 1 or x.shape != y.shape or x.size == 0:
            raise ConfigError("symbol streams must be 1-D, same length, nonempty")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def num_symbols(self) -> int:
        return self.x.size


def generate_bits(prng: PrngSpec, count: int) -> BitStream:
    """Uniform i.i.d. bits, bit-reproducible from the PrngSpec."""
    if count <= 0:
        raise ConfigError("count must be positive")
    bits = prng.generator().integers(0, 2, size=count, dtype=np.uint8)
    return BitStream(bits=bits, prng=prng)


def map_bits_to_symbols(bits: np.ndarray) -> np.ndarray:
    """Map a flat bit array (length divisible by 4) to 16QAM symbols."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % 4 != 0:
        raise ConfigError(f"bit count {bits.size} not divisible by 4")
    quads = bits.reshape(-1, 4)
    i_idx = 2 * quads[:, 0] + quads[:, 1]
    q_idx = 2 * quads[:, 2] + quads[:, 3]
    return _LEVELS_BY_MSB_LSB[i_idx] + 1j * _LEVELS_BY_MSB_LSB[q_idx]


def map_qam16(bits: BitStream) -> SymbolStream:
    """Map one frame's bits to a dual-polarization symbol stream.

    The stream covers both polarizations: the first half of the bits maps to X,
    the second half to Y (each half 4 bits per symbol).
    """
    n = len(bits)
    if n % 8 != 0:
        raise ConfigError(f"bit count {n} not divisible by 8 (4 bits/symbol x 2 polarizations)")
    half = n // 2
    return SymbolStream(
        x=map_bits_to_symbols(bits.bits[:half]),
        y=map_bits_to_symbols(bits.bits[half:]),
    )


def rrc_frequency_response(num_samples: int, num_symbols: int, rolloff: float) -> np.ndarray:
    """Root-raised-cosine transfer function on the circular FFT grid.

    Scaled by sqrt(upsample) so that shaping, matched filtering, and
    symbol-rate decimation compose to the identity on the circular frame
    (the raised-cosine aliases fold to exactly 1 on every symbol-grid bin).
    """
    if not 0 < rolloff <= 1:
        raise ConfigError("rolloff must be in (0, 1]")
    if num_samples % num_symbols != 0:
        raise ConfigError(f"{num_samples} samples not an integer multiple of {num_symbols} symbols")
    upsample = num_samples // num_symbols
    # |f| in units of the symbol rate; Nyquist edge at 0.5
    f = np.abs(fft.fftfreq(num_samples)) * upsample
    lo = (1.0 - rolloff) / 2.0
    hi = (1.0 + rolloff) / 2.0
    rc = np.zeros(num_samples)
    rc[f <= lo] = 1.0
    band = (f > lo) & (f < hi)
    rc[band] = 0.5 * (1.0 + np.cos(np.pi / rolloff * (f[band] - lo)))
    return np.sqrt(upsample * rc)


def pulse_shape(
    symbols: SymbolStream,
    rolloff: float,
    upsample: int,
    symbol_rate_baud: float,
) -> DualPolField:
    """Shape a symbol stream into a baseband field at upsample x symbol rate."""
    if upsample < 2:
        raise ConfigError("upsample must be >= 2")
    n_sym = symbols.num_symbols
    n = n_sym * upsample
    h = rrc_frequency_response(n, n_sym, rolloff)
    # the upsampled impulse train has a periodic spectrum: tile the symbol DFT
    out = []
    for s in (symbols.x, symbols.y):
        spec = np.tile(fft.fft(s), upsample) * h
        out.append(fft.ifft(spec))
    return DualPolField(
        x_samples=out[0],
        y_samples=out[1],
        sample_rate_hz=upsample * symbol_rate_baud,
        position_km=0.0,
    )


def channel_offset_bin(cfg: WdmConfig, channel_index: int, num_samples: int) -> int:
    """FFT-bin offset of a channel on a num_samples grid (offsets snap to bins)."""
    df = cfg.sample_rate_hz / num_samples
    return int(round(cfg.channel_offset_hz(channel_index) / df))


def wdm_multiplex(channels: list[DualPolField], cfg: WdmConfig) -> DualPolField:
    """Sum per-channel fields shifted to their grid offsets: A = sum_k A_k e^{j dw_k t}.

    Each channel is first scaled so its average power equals the configured
    per-channel launch power. Offsets snap to integer FFT bins, which keeps
    multiplex/demultiplex exactly invertible on the circular frame.
    """
    if len(channels) != cfg.num_channels:
        raise ConfigError(f"expected {cfg.num_channels} channel fields, got {len(channels)}")
    n = channels[0].num_samples
    fs = cfg.sample_rate_hz
    for ch in channels:
        if ch.num_samples != n:
            raise ConfigError("channel fields must share one frame length")
        if not math.isclose(ch.sample_rate_hz, fs, rel_tol=1e-12):
            raise ConfigError(
                f"channel sample rate {ch.sample_rate_hz:g} != WDM grid rate {fs:g}"
            )
    # band check: outermost channel edge must fit inside the simulated band
    edge = abs(cfg.channel_offset_hz(cfg.num_channels)) + cfg.symbol_rate_baud * (1 + cfg.rolloff) / 2
    if edge > fs / 2 * (1 + 1e-12):
        raise ConfigError(
            f"WDM band exceeds the sampling bandwidth: need sample_rate >= {2 * edge:g} Hz, have {fs:g} Hz"
        )
    target_w = cfg.launch_power_w_per_channel
    spec_x = np.zeros(n, dtype=np.complex128)
    spec_y = np.zeros(n, dtype=np.complex128)
    for k, ch in enumerate(channels, start=1):
        p = ch.mean_power_w
        if p <= 0:
            raise ConfigError(f"channel {k} has zero power; cannot scale to launch power")
        scale = math.sqrt(target_w / p)
        shift = channel_offset_bin(cfg, k, n)
        spec_x += np.roll(fft.fft(ch.x_samples), shift) * scale
        spec_y += np.roll(fft.fft(ch.y_samples), shift) * scale
    return DualPolField(
        x_samples=fft.ifft(spec_x),
        y_samples=fft.ifft(spec_y),
        sample_rate_hz=fs,
        center_wavelength_m=channels[0].center_wavelength_m,
        position_km=0.0,
    )


@dataclass(frozen=True)
class TxFrame:
    """One transmitted WDM frame with everything the receiver side needs."""

    field: DualPolField
    symbols: tuple
    bits: tuple
    cfg: WdmConfig
    prng: PrngSpec

    @property
    def num_symbols(self) -> int:
        return self.symbols[0].num_symbols

    def cut_symbols(self) -> SymbolStream:
        """Reference symbols of the channel under test (center channel)."""
        return self.symbols[self.cfg.center_channel - 1]

    def cut_bits(self) -> BitStream:
        return self.bits[self.cfg.center_channel - 1]


def transmit(cfg: WdmConfig, prng: PrngSpec, num_symbols: int = 7680) -> TxFrame:
    """Full transmitter: bits -> symbols -> RRC shaping -> WDM multiplex.

    Each channel draws its bits from a child stream keyed by the channel index,
    so frames are reproducible channel-by-channel.
    """
    if num_symbols < 1:
        raise ConfigError("num_symbols must be positive")
    streams = []
    bitstreams = []
    for k in range(1, cfg.num_channels + 1):
        bits = generate_bits(prng.child(k), 4 * num_symbols * 2)
        bitstreams.append(bits)
        streams.append(map_qam16(bits))
    channels = [
        pulse_shape(s, cfg.rolloff, cfg.sps, cfg.symbol_rate_baud) for s in streams
    ]
    field = wdm_multiplex(channels, cfg)
    return TxFrame(
        field=field,
        symbols=tuple(streams),
        bits=tuple(bitstreams),
        cfg=cfg,
        prng=prng,
    )
