"""Receiver chain: channel demux, dispersion compensation or full-band digital
backpropagation, matched filtering, carrier phase recovery, hard decisions, and
calibrated receiver-side noise loading.

All frequency-domain kernels use the same FFT sign convention as the forward
propagation module, so cdc with positive distance is the exact inverse of the
dispersion accumulated over that distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft

from fiberwave.core import (
    ConfigError,
    DualPolField,
    LinkConfig,
    NumericError,
    PrngSpec,
    WdmConfig,
    db_to_linear,
)
from fiberwave.ssfm import SsfmPlan, backpropagate_span, plan_steps
from fiberwave.txdsp import BitStream, _LEVELS_BY_MSB_LSB, rrc_frequency_response

__all__ = [
    "RxSymbols",
    "demux_cut",
    "matched_filter_downsample",
    "cdc",
    "multi_channel_dbp",
    "cpr",
    "hard_decide_qam16",
    "unit_noise_realization",
    "load_noise_to_target_ber",
]


@dataclass(frozen=True)
class RxSymbols:
    """Received dual-polarization symbols, index-aligned with the Tx frame."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.complex128)
        y = np.ascontiguousarray(self.y, dtype=np.complex128)
        if x.ndim != 1 or x.shape != y.shape or x.size == 0:
            raise ConfigError("rx symbol streams must be 1-D, same length, nonempty")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def num_symbols(self) -> int:
        return self.x.size


def _channel_bin(cfg: WdmConfig, channel_index: int, num_samples: int) -> int:
    offset_hz = cfg.channel_offset_hz(channel_index)
    df = cfg.sample_rate_hz / num_samples
    return int(round(offset_hz / df))


def demux_cut(
    field: DualPolField, cfg: WdmConfig, channel_index: int | None = None
) -> DualPolField:
    """Extract one channel: shift it to baseband, then brick-wall filter to the
    channel spacing. Defaults to the channel under test (the center channel)."""
    if channel_index is None:
        channel_index = cfg.center_channel
    if not 1 <= channel_index <= cfg.num_channels:
        raise ConfigError(
            f"channel_index {channel_index} outside 1..{cfg.num_channels}"
        )
    n = field.num_samples
    if field.sample_rate_hz != cfg.sample_rate_hz:
        raise ConfigError(
            f"field rate {field.sample_rate_hz} differs from config rate {cfg.sample_rate_hz}"
        )
    shift = _channel_bin(cfg, channel_index, n)
    freqs = fft.fftfreq(n, d=1.0 / field.sample_rate_hz)
    keep = np.abs(freqs) < cfg.spacing_hz / 2.0
    spec = np.vstack([fft.fft(field.x_samples), fft.fft(field.y_samples)])
    spec = np.roll(spec, -shift, axis=1)
    spec *= keep
    out = fft.ifft(spec, axis=1)
    return field.with_samples(out[0], out[1])


def matched_filter_downsample(field: DualPolField, rolloff: float, sps: int) -> RxSymbols:
    """Matched RRC filtering followed by symbol-instant decimation.

    The shaping filter's scaling makes shape -> match -> decimate the exact
    identity on a circular frame, so back-to-back recovery is error-free.
    """
    n = field.num_samples
    if sps < 1 or n % sps != 0:
        raise ConfigError(f"frame of {n} samples is not a whole number of symbols at sps={sps}")
    h = rrc_frequency_response(n, n // sps, rolloff)
    x = fft.ifft(fft.fft(field.x_samples) * h)
    y = fft.ifft(fft.fft(field.y_samples) * h)
    return RxSymbols(x=x[::sps], y=y[::sps])


def cdc(field: DualPolField, beta2_ps2_per_km: float, distance_km: float) -> DualPolField:
    """Chromatic dispersion compensation over the given distance.

    Applies the inverse of the dispersion phase accumulated in propagation:
    exp(+i (beta2/2) omega^2 L). Attenuation and nonlinearity are untouched.
    """
    if distance_km == 0.0 or beta2_ps2_per_km == 0.0:
        return field
    beta2_s2_per_km = beta2_ps2_per_km * 1e-24
    w = 2.0 * np.pi * fft.fftfreq(field.num_samples, d=1.0 / field.sample_rate_hz)
    kernel = np.exp(0.5j * beta2_s2_per_km * w**2 * distance_km)
    x = fft.ifft(fft.fft(field.x_samples) * kernel)
    y = fft.ifft(fft.fft(field.y_samples) * kernel)
    return field.with_samples(x, y)


def _undo_gain(field: DualPolField, gain_db: float) -> DualPolField:
    if gain_db == 0.0:
        return field
    amp = 10.0 ** (-gain_db / 20.0)
    return field.with_samples(field.x_samples * amp, field.y_samples * amp)


def multi_channel_dbp(
    field: DualPolField, link: LinkConfig, plans: tuple | None = None
) -> DualPolField:
    """Full-band digital backpropagation of the whole link.

    Per span, last to first: undo the amplifier gain (ASE cannot be removed),
    then run the split-step inverse with the forward step plan reversed. Pass
    the plans recorded by the forward run for an exact mirror; without them
    each span's plan is re-derived from the recovered span-entry peak power
    (re-running the span once if the first derivation disagrees).
    """
    spans = link.spans
    if plans is not None:
        if len(plans) != len(spans):
            raise ConfigError(f"need {len(spans)} plans, got {len(plans)}")
        for plan, (span, _) in zip(plans, spans):
            if not isinstance(plan, SsfmPlan):
                raise ConfigError("plans must be SsfmPlan instances")
            if abs(plan.span_length_km - span.span_length_km) > 1e-12 * span.span_length_km:
                raise ConfigError("plan span length does not match link span length")
    current = field
    for i in reversed(range(len(spans))):
        span, edfa = spans[i]
        if edfa.enabled:
            if edfa.gain_db is None:
                raise ConfigError("gain_db unresolved; assemble spans via LinkConfig")
            current = _undo_gain(current, edfa.gain_db)
        if plans is not None:
            plan = plans[i]
        else:
            # Forward plans anchor at the span-entry peak power, which is only
            # known after inverting the span; seed with the analytic envelope
            # estimate and refine once if the resulting plan differs.
            entry_peak_est = current.peak_power_w * math.exp(
                span.alpha_linear_per_km * span.span_length_km
            )
            plan = plan_steps(span, entry_peak_est)
            recovered = backpropagate_span(current, span, plan)
            replanned = plan_steps(span, recovered.peak_power_w)
            if replanned.step_lengths_km == plan.step_lengths_km:
                current = recovered
                continue
            plan = replanned
        current = backpropagate_span(current, span, plan)
    return current


def _block_phases(rx: np.ndarray, tx: np.ndarray, block_size: int) -> np.ndarray:
    n = rx.size
    phases = np.empty(n)
    for start in range(0, n, block_size):
        sl = slice(start, min(start + block_size, n))
        corr = np.sum(rx[sl] * np.conj(tx[sl]))
        if corr == 0.0:
            raise NumericError(f"zero-energy CPR block at symbols {sl.start}:{sl.stop}")
        phases[sl] = np.angle(corr)
    return phases


def cpr(rx: RxSymbols, tx, block_size: int = 512) -> RxSymbols:
    """Data-aided carrier phase recovery against the known Tx symbols.

    Two least-squares stages per polarization: a blockwise phase estimate
    (arg of the block correlation; scale-invariant) removed block by block,
    then one global complex scale fixing amplitude and any residual common
    rotation. Each stage minimizes the residual over a family containing the
    identity, so the data-aided ESNR can only improve.
    """
    if block_size < 1:
        raise ConfigError("block_size must be >= 1")
    tx_x = np.asarray(tx.x, dtype=np.complex128)
    tx_y = np.asarray(tx.y, dtype=np.complex128)
    if tx_x.shape != rx.x.shape or tx_y.shape != rx.y.shape:
        raise ConfigError("rx/tx symbol counts differ")
    out = []
    for r, t in ((rx.x, tx_x), (rx.y, tx_y)):
        power = np.sum(np.abs(r) ** 2)
        if power == 0.0:
            raise NumericError("zero-energy polarization in CPR")
        aligned = r * np.exp(-1j * _block_phases(r, t, block_size))
        aligned = aligned * (np.sum(t * np.conj(aligned)) / power)
        out.append(aligned)
    return RxSymbols(x=out[0], y=out[1])


_DECISION_EDGES = np.array([-2.0, 0.0, 2.0]) / math.sqrt(10.0)
_LEVELS_ASCENDING = np.array([-3.0, -1.0, 1.0, 3.0]) / math.sqrt(10.0)
# Gray bits (msb, lsb) of each ascending level; inverse of the mapper table.
_BITS_BY_LEVEL_INDEX = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)


def _decide_axis(values: np.ndarray) -> np.ndarray:
    return np.digitize(values, _DECISION_EDGES)


def _decide_pol(symbols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-distance decisions for one polarization: (bits, symbols)."""
    i_idx = _decide_axis(symbols.real)
    q_idx = _decide_axis(symbols.imag)
    bits = np.empty((symbols.size, 4), dtype=np.uint8)
    bits[:, 0:2] = _BITS_BY_LEVEL_INDEX[i_idx]
    bits[:, 2:4] = _BITS_BY_LEVEL_INDEX[q_idx]
    decided = _LEVELS_ASCENDING[i_idx] + 1j * _LEVELS_ASCENDING[q_idx]
    return bits.ravel(), decided


def hard_decide_qam16(rx: RxSymbols) -> BitStream:
    """Minimum-distance 16QAM decisions and Gray demapping for both
    polarizations (X bits first, then Y, mirroring the mapper layout).

    The constellation scale is estimated data-aided: an initial unit-power
    normalization, provisional decisions, then one least-squares rescale
    against those decisions. The refinement removes the noise-power bias of
    the blind moment estimate.
    """
    bit_halves = []
    for r in (rx.x, rx.y):
        power = np.mean(np.abs(r) ** 2)
        if power == 0.0:
            raise NumericError("zero-energy polarization in decisions")
        normed = r / math.sqrt(power)
        _, provisional = _decide_pol(normed)
        scale = np.sum(np.conj(provisional) * normed) / np.sum(np.abs(provisional) ** 2)
        if scale == 0.0:
            raise NumericError("degenerate decision-directed scale")
        bits, _ = _decide_pol(normed / scale)
        bit_halves.append(bits)
    return BitStream(bits=np.concatenate(bit_halves), prng=None)


def unit_noise_realization(prng: PrngSpec, count: int) -> tuple[np.ndarray, np.ndarray]:
    """The noise-loading unit realization: circular complex Gaussian, unit
    variance per symbol, for both polarizations.

    Draw order is part of the loading contract (the same PrngSpec must yield
    the bit-identical realization wherever it is replayed):
    standard_normal((4, count)) rows [x_re, x_im, y_re, y_im], each complex
    pair scaled by 1/sqrt(2).
    """
    g = prng.generator().standard_normal((4, count))
    return (g[0] + 1j * g[1]) / math.sqrt(2.0), (g[2] + 1j * g[3]) / math.sqrt(2.0)


def load_noise_to_target_ber(
    rx: RxSymbols,
    tx,
    target_ber: float,
    prng: PrngSpec,
    tolerance: float = 2e-3,
    max_iterations: int = 40,
) -> tuple[RxSymbols, float]:
    """Additive receiver-side noise loading to a target bit error rate.

    One fixed unit-variance noise realization is drawn from the PrngSpec and
    only its scale sigma is bisected, so two signals loaded with the same
    PrngSpec receive the identical noise shape. The achieved BER lands within
    the tolerance of the target; an unreachable target (pre-load BER already
    above it) is an error.
    """
    if not 0.0 < target_ber < 0.5:
        raise ConfigError(f"target_ber must lie in (0, 0.5), got {target_ber}")
    tx_bits = hard_decide_qam16(RxSymbols(x=np.asarray(tx.x), y=np.asarray(tx.y))).bits

    unit_x, unit_y = unit_noise_realization(prng, rx.num_symbols)

    def ber_at(sigma: float) -> tuple[float, RxSymbols]:
        loaded = RxSymbols(x=rx.x + sigma * unit_x, y=rx.y + sigma * unit_y)
        decided = hard_decide_qam16(loaded).bits
        return float(np.count_nonzero(decided != tx_bits)) / decided.size, loaded

    pre_ber, _ = ber_at(0.0)
    if pre_ber > target_ber:
        raise NumericError(
            f"pre-load BER {pre_ber:.4g} already exceeds target {target_ber:.4g}; no loading applied"
        )
    if abs(pre_ber - target_ber) <= tolerance:
        return rx, 0.0

    # Bracket the target, then bisect on sigma.
    signal_rms = math.sqrt(float(np.mean(np.abs(rx.x) ** 2 + np.abs(rx.y) ** 2)) / 2.0)
    lo, hi = 0.0, max(signal_rms, 1e-30)
    ber_hi, loaded_hi = ber_at(hi)
    doublings = 0
    while ber_hi < target_ber:
        hi *= 2.0
        doublings += 1
        if doublings > 60:
            raise NumericError("noise loading failed to bracket the target BER")
        ber_hi, loaded_hi = ber_at(hi)
    if abs(ber_hi - target_ber) <= tolerance:
        return loaded_hi, hi

    best = (abs(ber_hi - target_ber), loaded_hi, hi)
    for _ in range(max_iterations):
        mid = 0.5 * (lo + hi)
        ber_mid, loaded_mid = ber_at(mid)
        if abs(ber_mid - target_ber) <= tolerance:
            return loaded_mid, mid
        if abs(ber_mid - target_ber) < best[0]:
            best = (abs(ber_mid - target_ber), loaded_mid, mid)
        if ber_mid < target_ber:
            lo = mid
        else:
            hi = mid
    raise NumericError(
        f"noise loading did not reach BER {target_ber} +/- {tolerance} in "
        f"{max_iterations} bisections (closest miss {best[0]:.4g})"
    )
