"""Waveform-level WDM fiber transmission simulation and surrogate-model evaluation."""

from fiberwave.core import (
    ConfigError,
    DualPolField,
    EdfaParams,
    FiberwaveError,
    FiberSpanParams,
    FieldFormatError,
    LinkConfig,
    NumericError,
    PrngAlgorithm,
    PrngSpec,
    PropagationError,
    WdmConfig,
    derive_beta2,
    read_field,
    write_field,
)
from fiberwave.dataset import (
    DatasetShard,
    ShardLayout,
    WindowMode,
    WindowSpec,
    collect_training_set,
    read_dataset,
    window_length,
    write_dataset,
)
from fiberwave.harness import (
    CandidateKind,
    CandidateModel,
    EvalReport,
    benchmark_inference,
    evaluate,
    prbs_robustness,
    reference_run,
    sweep_launch_power,
)
from fiberwave.metrics import MetricsReport, ber_q, esnr, nmse, q_from_ber
from fiberwave.rxdsp import (
    RxSymbols,
    cdc,
    cpr,
    demux_cut,
    hard_decide_qam16,
    load_noise_to_target_ber,
    matched_filter_downsample,
    multi_channel_dbp,
)
from fiberwave.ssfm import (
    LinkResult,
    SsfmPlan,
    plan_steps,
    propagate_link,
    propagate_span,
)
from fiberwave.txdsp import TxFrame, transmit

__version__ = "0.1.0"

__all__ = [
    "CandidateKind",
    "CandidateModel",
    "ConfigError",
    "DatasetShard",
    "DualPolField",
    "EdfaParams",
    "EvalReport",
    "FiberwaveError",
    "FiberSpanParams",
    "FieldFormatError",
    "LinkConfig",
    "LinkResult",
    "MetricsReport",
    "NumericError",
    "PrngAlgorithm",
    "PrngSpec",
    "PropagationError",
    "RxSymbols",
    "ShardLayout",
    "SsfmPlan",
    "TxFrame",
    "WdmConfig",
    "WindowMode",
    "WindowSpec",
    "ber_q",
    "benchmark_inference",
    "cdc",
    "collect_training_set",
    "cpr",
    "demux_cut",
    "derive_beta2",
    "esnr",
    "evaluate",
    "hard_decide_qam16",
    "load_noise_to_target_ber",
    "matched_filter_downsample",
    "multi_channel_dbp",
    "nmse",
    "plan_steps",
    "prbs_robustness",
    "propagate_link",
    "propagate_span",
    "q_from_ber",
    "read_dataset",
    "read_field",
    "reference_run",
    "sweep_launch_power",
    "transmit",
    "window_length",
    "write_dataset",
    "write_field",
    "__version__",
]
