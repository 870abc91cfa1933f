"""Symmetric split-step Fourier propagation of the Manakov equation.

Sign convention, frozen package-wide: the forward linear operator multiplies
the spectrum by exp(-(alpha/2)h) * exp(-i (beta2/2) w^2 h), and the Kerr
rotation is exp(-i (8/9) gamma (|Ax|^2+|Ay|^2) h_eff). Chromatic dispersion
compensation with the kernel exp(+i (beta2/2) w^2 L) is then its exact inverse,
which the receiver-side tests pin down.

The per-step nonlinear phase uses the intra-step effective length
h_eff = (1 - e^{-alpha h}) / alpha, with attenuation itself carried by the
linear operator, so the nonlinear step preserves sample magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as fft

from fiberwave.core import (
    C_LIGHT_M_S,
    ConfigError,
    DualPolField,
    EdfaParams,
    FiberSpanParams,
    H_PLANCK_J_S,
    LinkConfig,
    PropagationError,
    db_to_linear,
)

MANAKOV_FACTOR = 8.0 / 9.0

_MAX_PLAN_STEPS = 5_000_000


@dataclass(frozen=True)
class SsfmPlan:
    """Ordered step lengths for one span plus the policy that produced them."""

    step_lengths_km: tuple
    span_length_km: float
    policy: str

    def __post_init__(self):
        steps = tuple(float(h) for h in self.step_lengths_km)
        if not steps or any(h <= 0 for h in steps):
            raise ConfigError("plan needs at least one step; all steps must be positive")
        total = sum(steps)
        if abs(total - self.span_length_km) > 1e-12 * self.span_length_km:
            raise ConfigError(
                f"steps sum to {total} km, span is {self.span_length_km} km"
            )
        object.__setattr__(self, "step_lengths_km", steps)

    @property
    def num_steps(self) -> int:
        return len(self.step_lengths_km)


@dataclass(frozen=True)
class SpanTapRecord:
    """Fields at a span boundary: before and after the amplifier."""

    span_index: int
    field_before_edfa: DualPolField
    field_after_edfa: DualPolField


@dataclass(frozen=True)
class SpanResult:
    field: DualPolField
    tap: SpanTapRecord | None
    plan: SsfmPlan
    diagnostics: dict


@dataclass(frozen=True)
class LinkResult:
    field: DualPolField
    tap_records: tuple
    span_plans: tuple
    diagnostics: dict


def effective_step_length(alpha_linear_per_km: float, h_km: float) -> float:
    """Intra-step effective length (1 - e^{-alpha h}) / alpha; h when alpha = 0."""
    if alpha_linear_per_km == 0.0:
        return h_km
    return -math.expm1(-alpha_linear_per_km * h_km) / alpha_linear_per_km


def plan_steps(params: FiberSpanParams, peak_power_w: float) -> SsfmPlan:
    """Max-nonlinear-phase step plan.

    Each step h at position z satisfies (8/9) gamma P_peak(z) h <= phi_max with
    the analytic decay envelope P_peak(z) = peak_power_w * e^{-alpha z}, so step
    lengths grow along the span (the last step is truncated to the span end).
    The plan depends on the input only through its peak power, never on
    per-step measurements.
    """
    if not (peak_power_w > 0 and math.isfinite(peak_power_w)):
        raise ConfigError("peak_power_w must be positive and finite")
    L = params.span_length_km
    gamma = params.gamma_per_w_km
    phi_max = params.max_nonlinear_phase_rad
    if gamma == 0.0:
        return SsfmPlan((L,), L, "max_nonlinear_phase: linear span, single step")
    alpha = params.alpha_linear_per_km
    rate0 = MANAKOV_FACTOR * gamma * peak_power_w  # rad/km at span entry
    steps = []
    z = 0.0
    while True:
        h = phi_max / (rate0 * math.exp(-alpha * z))
        if z + h >= L or len(steps) >= _MAX_PLAN_STEPS:
            break
        steps.append(h)
        z += h
    last = L - z
    if last > 0:
        steps.append(last)
    else:
        steps[-1] += last
    return SsfmPlan(
        tuple(steps), L,
        f"max_nonlinear_phase(phi_max={phi_max}, peak_power_w={peak_power_w})",
    )


def uniform_plan(params: FiberSpanParams, n_steps: int) -> SsfmPlan:
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    L = params.span_length_km
    h = L / n_steps
    steps = [h] * n_steps
    steps[-1] = L - h * (n_steps - 1)
    return SsfmPlan(tuple(steps), L, f"uniform(n_steps={n_steps})")


def _omega_grid(num_samples: int, sample_rate_hz: float) -> np.ndarray:
    return 2.0 * np.pi * fft.fftfreq(num_samples, d=1.0 / sample_rate_hz)


def _linear_exponent(params: FiberSpanParams, field: DualPolField) -> np.ndarray:
    """Per-km complex exponent of the linear operator on the field's grid."""
    w = _omega_grid(field.num_samples, field.sample_rate_hz)
    return -0.5 * params.alpha_linear_per_km - 0.5j * params.beta2_s2_per_km * w**2


def linear_half_step(field: DualPolField, params: FiberSpanParams, h_km: float) -> DualPolField:
    """Attenuation + dispersion over a length h (the 'half' refers to its role
    in the symmetric composition; the length applied is exactly h)."""
    if h_km < 0:
        raise ConfigError("h_km must be >= 0")
    if h_km == 0.0:
        return field
    kernel = np.exp(_linear_exponent(params, field) * h_km)
    x = fft.ifft(fft.fft(field.x_samples) * kernel)
    y = fft.ifft(fft.fft(field.y_samples) * kernel)
    return field.with_samples(x, y)


def nonlinear_full_step(field: DualPolField, params: FiberSpanParams, h_km: float) -> DualPolField:
    """Manakov Kerr rotation by (8/9) gamma (|Ax|^2 + |Ay|^2) h_eff; magnitudes
    are untouched (attenuation lives in the linear operator)."""
    if h_km < 0:
        raise ConfigError("h_km must be >= 0")
    if h_km == 0.0 or params.gamma_per_w_km == 0.0:
        return field
    h_eff = effective_step_length(params.alpha_linear_per_km, h_km)
    power = np.abs(field.x_samples) ** 2 + np.abs(field.y_samples) ** 2
    rot = np.exp(-1j * (MANAKOV_FACTOR * params.gamma_per_w_km * h_eff) * power)
    return field.with_samples(field.x_samples * rot, field.y_samples * rot)


def _split_step_run(
    a: np.ndarray,
    params: FiberSpanParams,
    plan: SsfmPlan,
    exponent: np.ndarray,
    inverse: bool,
) -> tuple[np.ndarray, float]:
    """Shared forward/backward split-step loop on a (2, N) sample block.

    Consecutive linear half-steps are merged, so the loop does one linear
    kernel and one Kerr rotation per step. inverse=True applies the exact
    mirror: reversed step order, negated operators, identical h_eff per step,
    which undoes the forward pass to float rounding.
    """
    steps = plan.step_lengths_km
    if inverse:
        steps = steps[::-1]
    sign = -1.0 if inverse else 1.0
    cnl = sign * MANAKOV_FACTOR * params.gamma_per_w_km
    alpha = params.alpha_linear_per_km
    max_phi = 0.0

    spec = fft.fft(a, axis=1)
    spec *= np.exp(exponent * (sign * steps[0] / 2.0))
    for k, h in enumerate(steps):
        a = fft.ifft(spec, axis=1)
        with np.errstate(over="ignore", invalid="ignore"):
            power = np.abs(a[0]) ** 2 + np.abs(a[1]) ** 2
        if not np.all(np.isfinite(power)):
            raise PropagationError("field overflow/NaN during split-step", step_index=k)
        if cnl != 0.0:
            phi = (cnl * effective_step_length(alpha, h)) * power
            step_max = float(np.max(np.abs(phi)))
            if step_max > max_phi:
                max_phi = step_max
            a = a * np.exp(-1j * phi)
        spec = fft.fft(a, axis=1)
        if k + 1 < len(steps):
            half = sign * (h + steps[k + 1]) / 2.0
        else:
            half = sign * h / 2.0
        spec *= np.exp(exponent * half)
    a = fft.ifft(spec, axis=1)
    return a, max_phi


def propagate_span(
    field: DualPolField,
    params: FiberSpanParams,
    edfa: EdfaParams,
    tap: bool = False,
    plan: SsfmPlan | None = None,
    span_index: int = 1,
) -> SpanResult:
    """One span of symmetric split-step propagation followed by the amplifier.

    The tap captures the field before the EDFA adds noise (and, for dataset
    use, the post-gain twin lives in the same record after amplification).
    """
    if plan is None:
        plan = plan_steps(params, field.peak_power_w)
    elif abs(plan.span_length_km - params.span_length_km) > 1e-12 * params.span_length_km:
        raise ConfigError("plan span length does not match params.span_length_km")
    a = np.vstack([field.x_samples, field.y_samples])
    exponent = _linear_exponent(params, field)
    a, max_phi = _split_step_run(a, params, plan, exponent, inverse=False)
    out_position = field.position_km + params.span_length_km
    before = field.with_samples(a[0], a[1], position_km=out_position)
    after = edfa_amplify(before, edfa)
    record = SpanTapRecord(span_index, before, after) if tap else None
    diagnostics = {
        "span_index": span_index,
        "num_steps": plan.num_steps,
        "max_nonlinear_phase_rad": max_phi,
        "policy": plan.policy,
    }
    return SpanResult(field=after, tap=record, plan=plan, diagnostics=diagnostics)


def backpropagate_span(
    field: DualPolField,
    params: FiberSpanParams,
    plan: SsfmPlan,
) -> DualPolField:
    """Inverse split-step over one span: the forward plan reversed with negated
    linear and Kerr operators (amplifier gain must be undone by the caller)."""
    a = np.vstack([field.x_samples, field.y_samples])
    exponent = _linear_exponent(params, field)
    a, _ = _split_step_run(a, params, plan, exponent, inverse=True)
    new_position = max(field.position_km - params.span_length_km, 0.0)
    return field.with_samples(a[0], a[1], position_km=new_position)


def ase_noise_variance_w(edfa: EdfaParams, sample_rate_hz: float, wavelength_m: float) -> float:
    """Per-polarization, per-complex-sample ASE variance: S_ASE * F_s with
    S_ASE = (G_lin - 1) n_sp h nu and n_sp = NF_lin / 2."""
    if edfa.gain_db is None:
        raise ConfigError("gain_db unresolved; assemble the link or set gain explicitly")
    g_lin = db_to_linear(edfa.gain_db)
    n_sp = db_to_linear(edfa.noise_figure_db) / 2.0
    nu = C_LIGHT_M_S / wavelength_m
    return (g_lin - 1.0) * n_sp * H_PLANCK_J_S * nu * sample_rate_hz


def ase_noise_realization(
    ase_seed: int, num_samples: int, sigma2_w: float
) -> tuple[np.ndarray, np.ndarray]:
    """Circular complex Gaussian noise for both polarizations.

    Counter-based (Philox) and keyed only by (ase_seed, num_samples), so the
    same seed always yields the bit-identical realization regardless of the
    signal it lands on. Draw order: standard_normal((4, N)) rows =
    [x_re, x_im, y_re, y_im], scaled by sqrt(sigma2/2).
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(ase_seed)))
    g = rng.standard_normal((4, num_samples))
    s = math.sqrt(sigma2_w / 2.0)
    return (g[0] + 1j * g[1]) * s, (g[2] + 1j * g[3]) * s


def edfa_amplify(field: DualPolField, edfa: EdfaParams) -> DualPolField:
    """Flat gain plus ASE. Gain 0 dB with zero-variance noise is the identity."""
    if not edfa.enabled:
        return field
    if edfa.gain_db is None:
        raise ConfigError("gain_db unresolved; assemble the link or set gain explicitly")
    amp = 10.0 ** (edfa.gain_db / 20.0)
    x = field.x_samples * amp
    y = field.y_samples * amp
    if edfa.ase_enabled:
        sigma2 = ase_noise_variance_w(edfa, field.sample_rate_hz, field.center_wavelength_m)
        if sigma2 > 0.0:
            nx, ny = ase_noise_realization(edfa.ase_seed, field.num_samples, sigma2)
            x = x + nx
            y = y + ny
    return field.with_samples(x, y)


def propagate_link(
    field: DualPolField,
    link: LinkConfig,
    taps: frozenset | set = frozenset(),
    plans: tuple | None = None,
) -> LinkResult:
    """Propagate through every span in order; collect taps for the requested
    1-based span indices and keep per-span plans for later backpropagation."""
    n = link.num_spans
    taps = frozenset(taps)
    bad = [t for t in taps if not 1 <= t <= n]
    if bad:
        raise ConfigError(f"tap indices {sorted(bad)} outside 1..{n}")
    if plans is not None and len(plans) != n:
        raise ConfigError(f"need {n} plans, got {len(plans)}")
    records = []
    used_plans = []
    span_diags = []
    current = field
    for i, (span, edfa) in enumerate(link.spans, start=1):
        result = propagate_span(
            current, span, edfa,
            tap=i in taps,
            plan=None if plans is None else plans[i - 1],
            span_index=i,
        )
        current = result.field
        used_plans.append(result.plan)
        span_diags.append(result.diagnostics)
        if result.tap is not None:
            records.append(result.tap)
    diagnostics = {
        "num_spans": n,
        "total_distance_km": link.total_distance_km,
        "total_steps": int(sum(d["num_steps"] for d in span_diags)),
        "spans": span_diags,
    }
    return LinkResult(
        field=current,
        tap_records=tuple(records),
        span_plans=tuple(used_plans),
        diagnostics=diagnostics,
    )
