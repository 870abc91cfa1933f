"""Learned span surrogates for the waveform simulator.

Trains windowed BiLSTM regressors (plain and dispersion-decoupled) on .wds
shards exported by the simulator, and cascades them span by span to emit
predicted .wfld waveforms that the simulator's evaluation harness can score.
The two packages communicate only through those files.
"""

from dlmodels.infer import GeometryError, cascade_nmse, infer_cascade, run_job
from dlmodels.models import WindowRegressor
from dlmodels.train import SurrogateBundle, TrainingConfig, TrainingError, train
from dlmodels.wdsio import (
    DataError,
    Shard,
    Waveform,
    field_to_rows,
    read_shard,
    read_wfld,
    rows_to_field,
    write_wfld,
)

__all__ = [
    "DataError",
    "GeometryError",
    "Shard",
    "SurrogateBundle",
    "TrainingConfig",
    "TrainingError",
    "Waveform",
    "WindowRegressor",
    "cascade_nmse",
    "field_to_rows",
    "infer_cascade",
    "read_shard",
    "read_wfld",
    "rows_to_field",
    "run_job",
    "train",
    "write_wfld",
]

__version__ = "0.1.0"
