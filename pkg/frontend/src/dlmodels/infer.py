"""Span-cascaded waveform inference.

One trained surrogate predicts one span; long links are covered by feeding
each span's prediction back in as the next span's input. Per span:

    physical field -> x scale -> symbol windows -> network -> symbol rows
    -> (FDD only) forward span dispersion -> / scale -> + EDFA noise

The network works on power-normalized rows because that is what it was
trained on; its prediction already carries the amplifier's flat gain, since
the dataset targets do. FDD-mode targets had one span of dispersion removed,
so inference re-applies that dispersion with the physical kernel - with an
all-zero residual head the cascade then degenerates to pure forward
dispersion, which pins down the sign and discretization of the kernel
independently of any learning.

Amplifier noise is injected with the caller-supplied seeds using the
simulator's published draw: numpy Philox keyed by SeedSequence(seed),
standard_normal((4, n)) rows [x_re, x_im, y_re, y_im], each complex pair
scaled by sqrt(sigma2 / 2), added after the gain. Keyed by seed and length
only, the realization is bit-identical to the one the reference link saw.

The whole cascade runs in float64; the float32 training precision applies
to the weights, not to the signal path.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import torch

from dlmodels.train import SurrogateBundle
from dlmodels.wdsio import DataError, Waveform, field_to_rows, read_wfld, rows_to_field, write_wfld

__all__ = ["GeometryError", "cascade_nmse", "infer_cascade", "run_job"]

_FORWARD_CHUNK = 2048


class GeometryError(DataError):
    """Input waveform or job does not match the bundle's training geometry."""


def _forward_dispersion(x: np.ndarray, y: np.ndarray, sample_rate_hz: float,
                        beta2_s2_per_km: float, length_km: float):
    """Apply one span of chromatic dispersion in the propagation direction.

    exp(-i (beta2/2) omega^2 L): the exact inverse of the receiver-side
    compensation filter, which is also what the dataset used to decouple
    FDD targets.
    """
    if length_km == 0.0 or beta2_s2_per_km == 0.0:
        return x, y
    w = 2.0 * np.pi * np.fft.fftfreq(x.size, d=1.0 / sample_rate_hz)
    kernel = np.exp(-0.5j * beta2_s2_per_km * w**2 * length_km)
    return np.fft.ifft(np.fft.fft(x) * kernel), np.fft.ifft(np.fft.fft(y) * kernel)


def _ase_realization(seed: int, num_samples: int, sigma2_w: float):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    g = rng.standard_normal((4, num_samples))
    s = math.sqrt(sigma2_w / 2.0)
    return (g[0] + 1j * g[1]) * s, (g[2] + 1j * g[3]) * s


def _check_tx(bundle: SurrogateBundle, tx: Waveform) -> int:
    sps = bundle.sps
    fs = bundle.sample_rate_hz
    if not math.isclose(tx.sample_rate_hz, fs, rel_tol=1e-9):
        raise GeometryError(
            f"waveform sample rate {tx.sample_rate_hz:g} Hz does not match the "
            f"bundle geometry ({fs:g} Hz)"
        )
    wavelength = float(bundle.span_params.get("wavelength_m", tx.center_wavelength_m))
    if not math.isclose(tx.center_wavelength_m, wavelength, rel_tol=1e-9):
        raise GeometryError(
            f"waveform wavelength {tx.center_wavelength_m:g} m does not match "
            f"the bundle's {wavelength:g} m"
        )
    if tx.num_samples % sps != 0:
        raise GeometryError(
            f"{tx.num_samples} samples do not align to the symbol grid at sps={sps}"
        )
    n_sym = tx.num_samples // sps
    if n_sym < bundle.window_length:
        raise GeometryError(
            f"frame of {n_sym} symbols shorter than the {bundle.window_length}-symbol window"
        )
    return n_sym


def _per_span(value, num_spans: int, name: str) -> tuple:
    if value is None:
        return (None,) * num_spans
    if np.isscalar(value):
        return (value,) * num_spans
    value = tuple(value)
    if len(value) < num_spans:
        raise GeometryError(f"{name}: got {len(value)} entries for {num_spans} spans")
    return value[:num_spans]


def infer_cascade(
    bundle: SurrogateBundle,
    tx_field,
    num_spans: int,
    edfa_seeds=None,
    ase_sigma2_w=0.0,
    out_dir=None,
    run_id: str = "run",
    seed_label: int = 0,
) -> list:
    """Predict the waveform after each of num_spans cascaded spans.

    tx_field is a Waveform or a .wfld path. edfa_seeds (per span, or None for
    noiseless) and ase_sigma2_w (scalar or per span, watts) control the noise
    injected between spans. Returns one Waveform per span; num_spans = 0
    echoes the Tx. With out_dir set, writes {out_dir}/{run_id}/
    span{n}_seed{seed_label}.wfld per span plus an index.json.
    """
    if num_spans < 0:
        raise GeometryError("num_spans must be >= 0")
    tx = tx_field if isinstance(tx_field, Waveform) else read_wfld(tx_field)
    n_sym = _check_tx(bundle, tx)
    outputs = [tx] if num_spans == 0 else []
    if num_spans > 0:
        seeds = _per_span(edfa_seeds, num_spans, "edfa_seeds")
        sigmas = _per_span(ase_sigma2_w, num_spans, "ase_sigma2_w")
        model = bundle.build_model(torch.float64)
        sps = bundle.sps
        scale = bundle.normalization_scale_per_sqrt_w
        m = (bundle.window_length - 1) // 2
        gather = (np.arange(n_sym)[:, None] + np.arange(-m, m + 1)[None, :]) % n_sym
        x, y = tx.x, tx.y
        position = tx.position_km
        for n in range(1, num_spans + 1):
            rows = field_to_rows(x * scale, y * scale, sps, dtype=np.float64)
            pred = np.empty_like(rows)
            with torch.no_grad():
                for start in range(0, n_sym, _FORWARD_CHUNK):
                    sel = gather[start:start + _FORWARD_CHUNK]
                    windows = torch.from_numpy(rows[sel])
                    pred[start:start + _FORWARD_CHUNK] = model(windows).numpy()
            xn, yn = rows_to_field(pred)
            if bundle.mode == "FDD":
                xn, yn = _forward_dispersion(
                    xn, yn, bundle.sample_rate_hz,
                    bundle.beta2_s2_per_km, bundle.span_length_km,
                )
            x, y = xn / scale, yn / scale
            sigma2 = float(sigmas[n - 1] or 0.0)
            if seeds[n - 1] is not None and sigma2 > 0.0:
                nx, ny = _ase_realization(int(seeds[n - 1]), x.size, sigma2)
                x = x + nx
                y = y + ny
            position += bundle.span_length_km
            outputs.append(
                Waveform(
                    x=x, y=y,
                    sample_rate_hz=tx.sample_rate_hz,
                    center_wavelength_m=tx.center_wavelength_m,
                    position_km=position,
                )
            )
    if out_dir is not None:
        _write_outputs(bundle, outputs if num_spans > 0 else [], out_dir, run_id, seed_label)
    return outputs


def _write_outputs(bundle: SurrogateBundle, outputs: list, out_dir, run_id: str,
                   seed_label: int) -> Path:
    out = Path(out_dir) / run_id
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for n, wf in enumerate(outputs, start=1):
        name = f"span{n}_seed{seed_label}.wfld"
        write_wfld(
            out / name, wf.x, wf.y, wf.sample_rate_hz,
            wf.center_wavelength_m, wf.position_km,
        )
        files[str(n)] = name
    index = {
        "format": "surrogate-cascade-index",
        "run_id": run_id,
        "seed": seed_label,
        "mode": bundle.mode,
        "num_spans": len(outputs),
        "files": files,
        "val_nmse": bundle.val_nmse,
    }
    with open(out / "index.json", "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return out


def _match(a: float, b: float, what: str):
    if not math.isclose(float(a), float(b), rel_tol=1e-9, abs_tol=1e-30):
        raise GeometryError(f"job {what} {a!r} does not match bundle {b!r}")


def run_job(bundle: SurrogateBundle, job_dir, out_dir=None) -> dict:
    """Fill a harness-exported candidate job with surrogate predictions.

    Reads {job_dir}/job.json and the Tx waveform next to it, checks the job's
    link against the bundle geometry, cascades to the deepest requested span,
    and writes the expected span{n}_seed{s}.wfld files (plus index.json) into
    out_dir (default: the job directory itself, ready for harness pickup).
    """
    job_dir = Path(job_dir)
    job = json.loads((job_dir / "job.json").read_text())
    if job.get("format") != "candidate-job":
        raise DataError(f"{job_dir}/job.json: not a candidate job")
    wdm = job["wdm"]
    for key in ("num_channels", "symbol_rate_baud", "samples_per_symbol"):
        if wdm.get(key) != bundle.wdm.get(key):
            raise GeometryError(
                f"job wdm.{key}={wdm.get(key)!r} does not match the bundle's "
                f"{bundle.wdm.get(key)!r}"
            )
    spans = job["spans"]
    distances = sorted(int(n) for n in job["distances_spans"])
    if not distances or distances[-1] > len(spans):
        raise GeometryError(f"job requests spans {distances} of {len(spans)}")
    for entry in spans[: distances[-1]]:
        params = entry["span_params"]
        _match(params["beta2_ps2_per_km"], bundle.span_params["beta2_ps2_per_km"],
               "span beta2")
        _match(params["span_length_km"], bundle.span_length_km, "span length")
        gain = entry["edfa"]["gain_db"] if entry["edfa"]["enabled"] else 0.0
        _match(gain, bundle.edfa_gain_db, "EDFA gain")
    tx = read_wfld(job_dir / job["tx_field"])
    seeds = [e["edfa"]["ase_seed"] for e in spans]
    sigmas = [e["edfa"].get("ase_sigma2_w", 0.0) for e in spans]
    outputs = infer_cascade(
        bundle, tx, distances[-1], edfa_seeds=seeds, ase_sigma2_w=sigmas,
    )
    out = Path(out_dir) if out_dir is not None else job_dir
    out.mkdir(parents=True, exist_ok=True)
    pattern = job.get("path_pattern", "span{span}_seed{seed}.wfld")
    seed = job.get("frame_seed", 0)
    files = {}
    for n in distances:
        wf = outputs[n - 1]
        name = pattern.format(span=n, seed=seed)
        write_wfld(out / name, wf.x, wf.y, wf.sample_rate_hz,
                   wf.center_wavelength_m, wf.position_km)
        files[str(n)] = name
    index = {
        "format": "surrogate-cascade-index",
        "run_id": job.get("run_id", "run"),
        "seed": seed,
        "mode": bundle.mode,
        "num_spans": distances[-1],
        "files": files,
        "val_nmse": bundle.val_nmse,
    }
    with open(out / "index.json", "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return index


def cascade_nmse(outputs, references) -> list:
    """Per-span NMSE of predicted vs reference waveforms (both polarizations)."""
    values = []
    for wf, ref in zip(outputs, references):
        ref = ref if isinstance(ref, Waveform) else read_wfld(ref)
        if wf.num_samples != ref.num_samples:
            raise GeometryError("waveform lengths differ")
        num = np.sum(np.abs(wf.x - ref.x) ** 2) + np.sum(np.abs(wf.y - ref.y) ** 2)
        den = np.sum(np.abs(ref.x) ** 2) + np.sum(np.abs(ref.y) ** 2)
        values.append(float(num / den))
    return values
