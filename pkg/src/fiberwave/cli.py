"""Batch front door: JSON run configs, subcommands, reproducible artifacts.

One process per command. Every run writes resolved_config.json (the full
configuration after defaults and flag overrides) into the output directory,
then the command's own artifacts. Outputs carry no timestamps, so a repeated
run with the same config and seeds reproduces the primary artifacts
(waveforms, datasets, tables, manifests) byte for byte; wall-clock timing
fields in bench.json and report.json vary by nature.

Exit codes: 0 ok, 2 configuration error, 3 numeric failure, 4 IO/format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

from fiberwave.core import (
    ConfigError,
    FieldFormatError,
    LinkConfig,
    NumericError,
    PrngAlgorithm,
    PrngSpec,
    PropagationError,
    WdmConfig,
    write_field,
)
from fiberwave.dataset import collect_training_set, write_dataset
from fiberwave.harness import (
    CandidateKind,
    CandidateModel,
    benchmark_inference,
    evaluate,
    prbs_robustness,
    receive_chain,
    sweep_launch_power,
)
from fiberwave.metrics import (
    MetricsReport,
    ber_q,
    esnr,
    q_from_esnr_qam16,
)
from fiberwave.rxdsp import hard_decide_qam16
from fiberwave.ssfm import propagate_link
from fiberwave.txdsp import transmit

__all__ = ["RunConfig", "load_run_config", "main"]

_COMMANDS = (
    "simulate", "dataset", "evaluate", "sweep-power", "sweep-distance", "prbs", "bench",
)
# config sections use underscores (JSON-friendly), commands use dashes
_SECTION_BY_COMMAND = {c: c.replace("-", "_") for c in _COMMANDS}
_TOP_LEVEL_KEYS = {"wdm", "link", "prng", "num_symbols", "output_dir"} | set(
    _SECTION_BY_COMMAND.values()
)
_SECTION_KEYS = {
    "simulate": {"taps", "dsp"},
    "dataset": {"seeds", "taps", "mode", "layout"},
    "evaluate": {"candidate", "distances"},
    "sweep_power": {"powers"},
    "sweep_distance": {"distances"},
    "prbs": {"candidate", "span", "seeds"},
    "bench": {"candidate", "repeats"},
}


@dataclass(frozen=True)
class RunConfig:
    """One resolved run: physics, seeds, frame length, output dir, and the
    active command's option section."""

    wdm: WdmConfig
    link: LinkConfig
    prng: PrngSpec
    num_symbols: int = 7680
    output_dir: str = "out"
    options: Mapping = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.num_symbols < 1:
            raise ConfigError("num_symbols must be positive")


def _parse_list(text, convert, what: str):
    try:
        return tuple(convert(part) for part in str(text).split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad {what} list {text!r}: {exc}") from None


def _candidate_from_config(value) -> CandidateModel:
    """Candidate from a config mapping or a flag shorthand string.

    Shorthands: self | identity-cdc | gamma:<scale> | beta2:<scale> |
    external:<path pattern with {span} and {seed}>.
    """
    if isinstance(value, CandidateModel):
        return value
    if isinstance(value, Mapping):
        allowed = {"kind", "description", "path_pattern", "gamma_scale", "beta2_scale"}
        unknown = set(value) - allowed
        if unknown:
            raise ConfigError(f"unknown candidate keys: {sorted(unknown)}")
        if "kind" not in value:
            raise ConfigError("candidate config needs a 'kind'")
        kind_text = str(value["kind"]).upper().replace("-", "_")
        aliases = {
            "EXTERNAL": CandidateKind.EXTERNAL_WAVEFORM,
            "PERTURBED": CandidateKind.PERTURBED_SSFM,
            "SELF": CandidateKind.PERTURBED_SSFM,
            "REFERENCE": CandidateKind.PERTURBED_SSFM,
            "IDENTITY_CDC": CandidateKind.IDENTITY_PLUS_CDC,
        }
        try:
            kind = aliases.get(kind_text) or CandidateKind(kind_text)
        except ValueError:
            raise ConfigError(f"unknown candidate kind {value['kind']!r}") from None
        return CandidateModel(
            kind=kind,
            description=value.get("description", ""),
            path_pattern=value.get("path_pattern"),
            gamma_scale=float(value.get("gamma_scale", 1.0)),
            beta2_scale=float(value.get("beta2_scale", 1.0)),
        )
    text = str(value).strip()
    if text in ("self", "reference"):
        return CandidateModel.reference()
    if text in ("identity-cdc", "identity_plus_cdc"):
        return CandidateModel.identity_plus_cdc()
    for prefix, field in (("gamma:", "gamma_scale"), ("beta2:", "beta2_scale")):
        if text.startswith(prefix):
            try:
                return CandidateModel.perturbed_ssfm(**{field: float(text[len(prefix):])})
            except ValueError:
                raise ConfigError(f"bad candidate scale in {text!r}") from None
    if text.startswith("external:"):
        return CandidateModel.external(text[len("external:"):])
    raise ConfigError(
        f"unknown candidate {text!r}; use self, identity-cdc, gamma:<x>, "
        f"beta2:<x> or external:<pattern>"
    )


def load_run_config(args) -> RunConfig:
    """Read the JSON config (if any), apply flag overrides, build RunConfig."""
    raw = {}
    if args.config is not None:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
    if not isinstance(raw, Mapping):
        raise ConfigError("run config must be a JSON object")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    wdm_dict = dict(raw.get("wdm", {}))
    link_dict = dict(raw.get("link", {}))
    prng_dict = dict(raw.get("prng", {}))
    if args.channels is not None:
        wdm_dict["num_channels"] = args.channels
    if args.power_dbm is not None:
        wdm_dict["launch_power_dbm_per_channel"] = args.power_dbm
    if args.spans is not None:
        if "spans" in link_dict:
            raise ConfigError("--spans only applies to uniform link configs")
        link_dict["num_spans"] = args.spans
    elif not link_dict:
        link_dict["num_spans"] = 1
    if args.seed is not None:
        prng_dict["seed"] = args.seed
    if args.prng is not None:
        prng_dict["algorithm"] = args.prng

    section_name = _SECTION_BY_COMMAND[args.command]
    options = dict(raw.get(section_name, {}))
    unknown = set(options) - _SECTION_KEYS[section_name]
    if unknown:
        raise ConfigError(f"unknown {section_name} option keys: {sorted(unknown)}")
    for flag in _SECTION_KEYS[section_name]:
        value = getattr(args, flag, None)
        if value is not None:
            options[flag] = value

    return RunConfig(
        wdm=WdmConfig.from_dict(wdm_dict),
        link=LinkConfig.from_dict(link_dict),
        prng=PrngSpec.from_dict(prng_dict),
        num_symbols=int(args.num_symbols if args.num_symbols is not None
                        else raw.get("num_symbols", 7680)),
        output_dir=str(args.output_dir if args.output_dir is not None
                       else raw.get("output_dir", "out")),
        options=options,
    )


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _resolved_config_dict(run: RunConfig, command: str) -> dict:
    return {
        "command": command,
        "wdm": dataclasses.asdict(run.wdm),
        "link": {
            "spans": [
                {"span": dataclasses.asdict(sp), "edfa": dataclasses.asdict(ed)}
                for sp, ed in run.link.spans
            ]
        },
        "prng": {
            "algorithm": run.prng.algorithm.value,
            "seed": run.prng.seed,
            "stream_id": run.prng.stream_id,
        },
        "num_symbols": run.num_symbols,
        "output_dir": run.output_dir,
        "options": {k: run.options[k] for k in sorted(run.options)},
    }


def _seed_specs(run: RunConfig, seeds) -> tuple:
    return tuple(PrngSpec(algorithm=run.prng.algorithm, seed=int(s)) for s in seeds)


def _all_spans(run: RunConfig) -> tuple:
    return tuple(range(1, run.link.num_spans + 1))


def _counted_metrics(rec, frame, field) -> MetricsReport:
    bits = hard_decide_qam16(rec)
    ber, q_db = ber_q(bits, frame.cut_bits())
    return MetricsReport(
        esnr_db=esnr(rec, frame.cut_symbols()),
        ber=ber,
        q_db=q_db,
        n_data=2 * rec.num_symbols,
        n_bits=len(frame.cut_bits()),
        n_errors=int(round(ber * len(frame.cut_bits()))),
        signal_power_w=field.mean_power_w,
    )


def cmd_simulate(run: RunConfig, out: Path) -> int:
    """Tx frame, per-span fields, and rx metrics for the reference channel."""
    dsp = str(run.options.get("dsp", "both"))
    if dsp not in ("linear", "nonlinear", "both"):
        raise ConfigError(f"dsp must be linear, nonlinear or both, got {dsp!r}")
    taps = tuple(int(t) for t in run.options.get("taps", _all_spans(run)))
    if any(t < 1 or t > run.link.num_spans for t in taps):
        raise ConfigError(f"taps {taps} outside 1..{run.link.num_spans}")
    frame = transmit(run.wdm, run.prng, num_symbols=run.num_symbols)
    write_field(frame.field, out / "tx.wfld")
    result = propagate_link(frame.field, run.link, taps=set(taps))
    files = ["tx.wfld"]
    for record in result.tap_records:
        name = f"span{record.span_index}.wfld"
        write_field(record.field_after_edfa, out / name)
        files.append(name)
    n = run.link.num_spans
    variants = ("linear", "nonlinear") if dsp == "both" else (dsp,)
    metrics = {}
    for variant in variants:
        rec = receive_chain(
            result.field, frame, run.link, run.wdm, n, variant, result.span_plans
        )
        metrics[variant] = _counted_metrics(rec, frame, result.field).to_json_dict()
    _write_json(out / "metrics.json", {
        "num_spans": n,
        "distance_km": run.link.total_distance_km,
        "rx": metrics,
    })
    _write_json(out / "manifest.json", {
        "command": "simulate",
        "files": files + ["metrics.json"],
        "num_spans": n,
        "span_steps": [plan.num_steps for plan in result.span_plans],
        "config": _resolved_config_dict(run, "simulate"),
    })
    return 0


def cmd_dataset(run: RunConfig, out: Path) -> int:
    """Span-level training shards (.wds), one file per (span, frame seed)."""
    seeds = run.options.get("seeds", (run.prng.seed,))
    taps = run.options.get(
        "taps", tuple(t for t in _all_spans(run) if t % 2 == 1)
    )
    shards = collect_training_set(
        run.link,
        run.wdm,
        _seed_specs(run, seeds),
        taps=tuple(int(t) for t in taps),
        mode=str(run.options.get("mode", "FDD")),
        layout=str(run.options.get("layout", "TEMPORAL")),
        num_symbols=run.num_symbols,
    )
    files = []
    for shard in shards:
        name = (
            f"span{shard.manifest['span_index']}_"
            f"seed{shard.manifest['prng']['seed']}.wds"
        )
        write_dataset(shard, out / name)
        files.append(name)
    _write_json(out / "manifest.json", {
        "command": "dataset",
        "files": files,
        "window": shards[0].manifest["window"],
        "split_rule": shards[0].manifest["split_rule"],
        "config": _resolved_config_dict(run, "dataset"),
    })
    return 0


def cmd_evaluate(run: RunConfig, out: Path) -> int:
    """Candidate-versus-reference report (JSON) and distance curve (CSV)."""
    candidate = _candidate_from_config(run.options.get("candidate", "self"))
    distances = tuple(
        int(d) for d in run.options.get("distances", (run.link.num_spans,))
    )
    report = evaluate(
        run.link, candidate, run.wdm, distances, run.prng,
        num_symbols=run.num_symbols,
    )
    report.write_json(out / "report.json")
    report.write_csv(out / "curve.csv")
    _write_json(out / "manifest.json", {
        "command": "evaluate",
        "files": ["report.json", "curve.csv"],
        "config": _resolved_config_dict(run, "evaluate"),
    })
    return 0


def cmd_sweep_power(run: RunConfig, out: Path) -> int:
    """Q versus launch power over the full link; optimum and stressed point."""
    powers = run.options.get("powers")
    if powers is None:
        powers = tuple(float(p) for p in range(-2, 9))
    result = sweep_launch_power(
        run.link, run.wdm, tuple(float(p) for p in powers), run.prng,
        num_symbols=run.num_symbols,
    )
    result.write_csv(out / "sweep_power.csv")
    _write_json(out / "sweep_power.json", result.to_json_dict())
    _write_json(out / "manifest.json", {
        "command": "sweep-power",
        "files": ["sweep_power.csv", "sweep_power.json"],
        "optimum_dbm": result.optimum_dbm,
        "config": _resolved_config_dict(run, "sweep-power"),
    })
    return 0


def cmd_sweep_distance(run: RunConfig, out: Path) -> int:
    """Reference reach curve: ESNR and analytic Q per distance, both chains."""
    distances = tuple(
        int(d) for d in run.options.get("distances", _all_spans(run))
    )
    if not distances or list(distances) != sorted(set(distances)):
        raise ConfigError("distances must be strictly increasing span counts")
    if distances[0] < 1 or distances[-1] > run.link.num_spans:
        raise ConfigError(f"distances {distances} outside 1..{run.link.num_spans}")
    frame = transmit(run.wdm, run.prng, num_symbols=run.num_symbols)
    result = propagate_link(
        frame.field, run.link.truncated(distances[-1]), taps=set(distances)
    )
    fields = {r.span_index: r.field_after_edfa for r in result.tap_records}
    rows = []
    for n in distances:
        row = {"spans": n, "distance_km": sum(
            sp.span_length_km for sp, _ in run.link.spans[:n]
        )}
        for variant in ("linear", "nonlinear"):
            rec = receive_chain(
                fields[n], frame, run.link, run.wdm, n, variant, result.span_plans
            )
            e = esnr(rec, frame.cut_symbols())
            row[f"esnr_{variant}_db"] = e
            row[f"q_{variant}_db"] = q_from_esnr_qam16(e)
        rows.append(row)
    lines = ["distance_km,esnr_linear_db,q_linear_db,esnr_nonlinear_db,q_nonlinear_db"]
    for row in rows:
        lines.append(
            f"{row['distance_km']:.6g},{row['esnr_linear_db']:.6g},"
            f"{row['q_linear_db']:.6g},{row['esnr_nonlinear_db']:.6g},"
            f"{row['q_nonlinear_db']:.6g}"
        )
    (out / "sweep_distance.csv").write_text("\n".join(lines) + "\n")
    _write_json(out / "sweep_distance.json", {"rows": rows})
    _write_json(out / "manifest.json", {
        "command": "sweep-distance",
        "files": ["sweep_distance.csv", "sweep_distance.json"],
        "config": _resolved_config_dict(run, "sweep-distance"),
    })
    return 0


def cmd_prbs(run: RunConfig, out: Path) -> int:
    """Candidate NMSE across bit generators at a fixed distance."""
    candidate = _candidate_from_config(run.options.get("candidate", "identity-cdc"))
    kwargs = {}
    if "seeds" in run.options:
        from fiberwave.harness import default_prbs_specs

        kwargs["prng_specs"] = default_prbs_specs(
            tuple(int(s) for s in run.options["seeds"])
        )
    result = prbs_robustness(
        run.link, run.wdm, candidate,
        num_spans=int(run.options.get("span", 1)),
        num_symbols=run.num_symbols,
        **kwargs,
    )
    lines = ["generator,nmse"]
    for label, value in zip(result.labels, result.nmse_values):
        lines.append(f"{label},{value:.9g}")
    (out / "prbs.csv").write_text("\n".join(lines) + "\n")
    _write_json(out / "prbs.json", {
        "labels": list(result.labels),
        "nmse": list(result.nmse_values),
        "mean": result.mean,
        "std": result.std,
    })
    _write_json(out / "manifest.json", {
        "command": "prbs",
        "files": ["prbs.csv", "prbs.json"],
        "config": _resolved_config_dict(run, "prbs"),
    })
    return 0


def cmd_bench(run: RunConfig, out: Path) -> int:
    """Wall-clock comparison of a candidate against the split-step baseline."""
    candidate = _candidate_from_config(run.options.get("candidate", "identity-cdc"))
    result = benchmark_inference(
        candidate, run.wdm, link=run.link,
        repeats=int(run.options.get("repeats", 5)),
        num_symbols=run.num_symbols,
    )
    _write_json(out / "bench.json", {
        "ssfm_median_s": result.ssfm_median_s,
        "candidate_median_s": result.candidate_median_s,
        "speedup": result.ssfm_median_s / result.candidate_median_s
        if result.candidate_median_s > 0 else None,
        "num_steps": result.num_steps,
        "num_samples": result.num_samples,
        "repeats": result.repeats,
    })
    _write_json(out / "manifest.json", {
        "command": "bench",
        "files": ["bench.json"],
        "config": _resolved_config_dict(run, "bench"),
    })
    return 0


_HANDLERS = {
    "simulate": cmd_simulate,
    "dataset": cmd_dataset,
    "evaluate": cmd_evaluate,
    "sweep-power": cmd_sweep_power,
    "sweep-distance": cmd_sweep_distance,
    "prbs": cmd_prbs,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fiberwave",
        description="WDM fiber transmission simulator and model evaluation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run config; flags override its keys")
        p.add_argument("--output-dir", help="artifact directory (default 'out')")
        p.add_argument("--threads", type=int, default=1,
                       help="upper bound on worker threads (the pipeline itself "
                            "is sequential; this caps numeric library pools)")
        p.add_argument("--seed", type=int, help="bit-source seed")
        p.add_argument("--prng", choices=[a.value for a in PrngAlgorithm],
                       help="bit-source generator algorithm")
        p.add_argument("--num-symbols", type=int, help="symbols per frame")
        p.add_argument("--spans", type=int, help="span count for uniform links")
        p.add_argument("--power-dbm", type=float, help="per-channel launch power")
        p.add_argument("--channels", type=int, help="WDM channel count")

    specs = {
        "simulate": [
            ("--taps", dict(type=lambda s: _parse_list(s, int, "taps"),
                            help="span indices to dump (default: all)")),
            ("--dsp", dict(choices=["linear", "nonlinear", "both"],
                           help="receiver chains to run (default both)")),
        ],
        "dataset": [
            ("--seeds", dict(type=lambda s: _parse_list(s, int, "seeds"),
                             help="frame seeds, comma separated")),
            ("--taps", dict(type=lambda s: _parse_list(s, int, "taps"),
                            help="span indices to cut pairs at (default: odd spans)")),
            ("--mode", dict(choices=["PURE", "FDD"], help="target framing")),
            ("--layout", dict(choices=["TEMPORAL", "FLAT"], help="tensor layout")),
        ],
        "evaluate": [
            ("--candidate", dict(help="self | identity-cdc | gamma:<x> | "
                                      "beta2:<x> | external:<pattern>")),
            ("--distances", dict(type=lambda s: _parse_list(s, int, "distances"),
                                 help="span counts to score at")),
        ],
        "sweep-power": [
            ("--powers", dict(type=lambda s: _parse_list(s, float, "powers"),
                              help="launch powers in dBm, comma separated "
                                   "(use --powers=-2,0,2 for negative values)")),
        ],
        "sweep-distance": [
            ("--distances", dict(type=lambda s: _parse_list(s, int, "distances"),
                                 help="span counts to report (default: every span)")),
        ],
        "prbs": [
            ("--candidate", dict(help="candidate shorthand (default identity-cdc)")),
            ("--span", dict(type=int, help="distance in spans (default 1)")),
            ("--seeds", dict(type=lambda s: _parse_list(s, int, "seeds"),
                             help="seeds per generator algorithm (default 1,2)")),
        ],
        "bench": [
            ("--candidate", dict(help="candidate shorthand (default identity-cdc)")),
            ("--repeats", dict(type=int, help="timing repeats (default 5)")),
        ],
    }
    for command in _COMMANDS:
        p = sub.add_parser(command, help=_HANDLERS[command].__doc__)
        common(p)
        for flag, kwargs in specs[command]:
            p.add_argument(flag, **kwargs)
    return parser


def _bound_threads(n: int) -> None:
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _bound_threads(args.threads)
        run = load_run_config(args)
        out = Path(run.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "resolved_config.json", _resolved_config_dict(run, args.command))
        return _HANDLERS[args.command](run, out)
    except ConfigError as exc:
        print(f"fiberwave: config error: {exc}", file=sys.stderr)
        return 2
    except (PropagationError, NumericError) as exc:
        print(f"fiberwave: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (FieldFormatError, OSError) as exc:
        print(f"fiberwave: io/format error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
