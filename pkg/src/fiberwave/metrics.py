"""Waveform and transmission quality metrics: NMSE, ESNR, BER, Q-factor.

Unbounded values (zero error vector, zero bit errors) are +/- math.inf in
memory; JSON serialization maps them to the sentinels "unbounded" and
"-unbounded" so report files never contain bare infinities.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from fiberwave.core import ConfigError, NumericError

_SQRT2 = math.sqrt(2.0)
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)

# Rational approximation of the inverse normal CDF (Acklam), max relative
# error ~1.15e-9; two Newton refinements below push erfcinv to full double
# precision.
_ACK_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
          1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ACK_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
          6.680131188771972e+01, -1.328068155288572e+01)
_ACK_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
          -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ACK_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
          3.754408661907416e+00)


def _norm_inv(p: float) -> float:
    """Inverse standard normal CDF by Acklam's rational approximation."""
    a, b, c, d = _ACK_A, _ACK_B, _ACK_C, _ACK_D
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    if p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
               (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    q = math.sqrt(-2.0 * math.log(1.0 - p))
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)


def erfcinv(y: float) -> float:
    """Inverse complementary error function on (0, 2).

    Rational initial guess via the inverse normal CDF (erfcinv(y) =
    -norminv(y/2)/sqrt(2)) refined by two Newton steps on erfc(x) - y.
    Relative error below 1e-14 across the domain.
    """
    if not 0.0 < y < 2.0:
        raise ValueError(f"erfcinv domain is (0, 2), got {y}")
    if y == 1.0:
        return 0.0
    x = -_norm_inv(y / 2.0) / _SQRT2
    for _ in range(2):
        err = math.erfc(x) - y
        # d/dx erfc(x) = -2/sqrt(pi) exp(-x^2)
        x += err / (_TWO_OVER_SQRT_PI * math.exp(-x * x))
    return x


def _as_sample_block(obj: Any) -> np.ndarray:
    """Stack any dual-channel sample container into one complex vector."""
    if hasattr(obj, "x_samples"):
        return np.concatenate([np.asarray(obj.x_samples), np.asarray(obj.y_samples)])
    if hasattr(obj, "x"):
        return np.concatenate([np.asarray(obj.x), np.asarray(obj.y)])
    if isinstance(obj, (tuple, list)):
        return np.concatenate([np.asarray(part) for part in obj])
    return np.asarray(obj).ravel()


def nmse(reference: Any, candidate: Any) -> float:
    """Normalized mean square error over both polarizations jointly."""
    ref = _as_sample_block(reference)
    cand = _as_sample_block(candidate)
    if ref.shape != cand.shape:
        raise ConfigError(f"length mismatch: reference {ref.shape}, candidate {cand.shape}")
    den = float(np.sum(np.abs(ref) ** 2))
    if den == 0.0:
        raise NumericError("zero-energy reference in NMSE")
    num = float(np.sum(np.abs(cand - ref) ** 2))
    return num / den


def esnr(rx: Any, tx: Any) -> float:
    """Effective SNR in dB: 10 log10(P_s / E|rx - tx|^2), +inf when error-free."""
    r = _as_sample_block(rx)
    t = _as_sample_block(tx)
    if r.shape != t.shape:
        raise ConfigError(f"length mismatch: rx {r.shape}, tx {t.shape}")
    p_signal = float(np.mean(np.abs(t) ** 2))
    if p_signal == 0.0:
        raise NumericError("zero-power reference symbols in ESNR")
    p_err = float(np.mean(np.abs(r - t) ** 2))
    if p_err == 0.0:
        return math.inf
    return 10.0 * math.log10(p_signal / p_err)


def q_from_ber(ber: float) -> float:
    """Q-factor in dB: 20 log10(sqrt(2) erfcinv(2 BER)); sentinels at 0 and >= 0.5."""
    if not 0.0 <= ber <= 1.0:
        raise ConfigError(f"ber must lie in [0, 1], got {ber}")
    if ber == 0.0:
        return math.inf
    if ber >= 0.5:
        return -math.inf
    return 20.0 * math.log10(_SQRT2 * erfcinv(2.0 * ber))


def ber_q(bits_rx: Any, bits_tx: Any) -> tuple[float, float]:
    """Bit error rate and its Q-factor transform."""
    rx = np.asarray(getattr(bits_rx, "bits", bits_rx), dtype=np.uint8)
    tx = np.asarray(getattr(bits_tx, "bits", bits_tx), dtype=np.uint8)
    if rx.shape != tx.shape:
        raise ConfigError(f"bit count mismatch: {rx.shape} vs {tx.shape}")
    if rx.size == 0:
        raise ConfigError("empty bit streams")
    ber = float(np.count_nonzero(rx != tx)) / rx.size
    return ber, q_from_ber(ber)


def q_error(q_ssfm_db: float, q_model_db: float) -> float:
    """Reference-minus-model Q difference; sentinel inputs are rejected."""
    if not (math.isfinite(q_ssfm_db) and math.isfinite(q_model_db)):
        raise NumericError("q_error requires finite Q values (got a sentinel)")
    return q_ssfm_db - q_model_db


def analytic_ber_qam16(esnr_db: float) -> float:
    """Gray-coded square 16QAM bit error rate on AWGN at the given Es/N0 [dB]."""
    s = math.sqrt(10.0 ** (esnr_db / 10.0) / 10.0)
    return (3.0 / 8.0) * math.erfc(s) + 0.25 * math.erfc(3.0 * s) - 0.125 * math.erfc(5.0 * s)


def q_from_esnr_qam16(esnr_db: float) -> float:
    """Q-factor implied by an ESNR through the analytic 16QAM BER curve.

    Strictly increasing in ESNR, so optima and curve shapes in ESNR carry over
    unchanged; used where counted BER is below the resolution of one frame.
    """
    return q_from_ber(analytic_ber_qam16(esnr_db))


_UNBOUNDED_POS = "unbounded"
_UNBOUNDED_NEG = "-unbounded"


def _encode(value):
    if isinstance(value, float):
        if value == math.inf:
            return _UNBOUNDED_POS
        if value == -math.inf:
            return _UNBOUNDED_NEG
    return value


def _decode(value):
    if value == _UNBOUNDED_POS:
        return math.inf
    if value == _UNBOUNDED_NEG:
        return -math.inf
    return value


@dataclass(frozen=True)
class MetricsReport:
    """One DSP variant's quality numbers for a single evaluation point."""

    nmse: float | None = None
    esnr_db: float | None = None
    ber: float | None = None
    q_db: float | None = None
    q_error_db: float | None = None
    n_data: int | None = None
    n_bits: int | None = None
    n_errors: int | None = None
    signal_power_w: float | None = None

    def __post_init__(self):
        if self.nmse is not None and self.nmse < 0:
            raise ConfigError("nmse must be >= 0")
        # counted BER can exceed 0.5 on a finite frame when the true rate
        # sits at 0.5, so the domain is the full [0, 1]
        if self.ber is not None and not 0.0 <= self.ber <= 1.0:
            raise ConfigError("ber must lie in [0, 1]")
        if (
            self.ber is not None
            and self.q_db is not None
            and math.isfinite(self.q_db)
            and 0.0 < self.ber < 0.5
        ):
            expected = q_from_ber(self.ber)
            if abs(expected - self.q_db) > 1e-9:
                raise ConfigError(
                    f"q_db {self.q_db} inconsistent with ber {self.ber} (expected {expected})"
                )

    def to_json_dict(self) -> dict:
        return {k: _encode(v) for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_json_dict(cls, data: Mapping[str, Any]) -> "MetricsReport":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown MetricsReport keys: {sorted(unknown)}")
        return cls(**{k: _decode(v) for k, v in data.items()})
