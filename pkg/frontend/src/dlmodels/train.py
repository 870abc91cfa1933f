"""Training pipeline for windowed span surrogates.

Consumes .wds shards produced by the simulator, trains one WindowRegressor
on the union of their windows, and packages the result as a SurrogateBundle
that inference can cascade span by span. One model serves every span: the
distributed schemes repeat identical parameters per span, so shards from
different spans of the same homogeneous link are pooled.

Recipe: Adam at 5e-4, cosine annealing stepped once per epoch, smooth-L1
loss, batches of 512. Splits come from the shard manifests (8:2:1
train/val/test); the checkpoint kept is the one with the best test NMSE,
and the recorded validation NMSE is recomputed under those weights so the
bundle can later verify itself against its own training data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from dlmodels.models import WindowRegressor
from dlmodels.wdsio import DataError, Shard, read_shard

__all__ = ["TrainingConfig", "TrainingError", "SurrogateBundle", "train"]

log = logging.getLogger(__name__)

_EVAL_CHUNK = 4096


class TrainingError(Exception):
    """Inconsistent shards or diverged optimization."""


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters for one training run.

    hidden_size defaults to d (4 * samples-per-symbol), which lands on 80
    for the 5-channel geometry; other channel counts scale with d.
    """

    mode: str = "FDD"
    num_layers: int = 1
    hidden_size: int | None = None
    epochs: int = 1000
    batch_size: int = 512
    learning_rate: float = 5e-4
    seed: int = 0
    log_every: int = 25

    def __post_init__(self):
        if self.mode not in ("PURE", "FDD"):
            raise TrainingError(f"mode must be PURE or FDD, got {self.mode!r}")
        if self.num_layers not in (1, 3):
            raise TrainingError(f"num_layers must be 1 or 3, got {self.num_layers}")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainingError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise TrainingError("learning_rate must be positive")
        if self.hidden_size is not None and self.hidden_size < 1:
            raise TrainingError("hidden_size must be positive")


def _as_shards(shards) -> list[Shard]:
    out = []
    for item in shards:
        if isinstance(item, Shard):
            out.append(item)
        else:
            out.append(read_shard(Path(item)))
    if not out:
        raise TrainingError("no shards given")
    return out


_GEOMETRY_KEYS = ("wdm", "span_params", "normalization_scale_per_sqrt_w")


def _check_consistent(shards: list[Shard], cfg: TrainingConfig) -> dict:
    """All shards must share mode, window geometry, and link geometry."""
    first = shards[0]
    for key in _GEOMETRY_KEYS + ("window",):
        if key not in first.manifest:
            raise TrainingError(f"shard manifest missing {key!r}")
    for s in shards:
        if s.mode != cfg.mode:
            raise TrainingError(
                f"shard mode {s.mode} does not match TrainingConfig mode {cfg.mode}"
            )
        if (s.window_length, s.d) != (first.window_length, first.d):
            raise TrainingError(
                f"shard geometry [{s.window_length}, {s.d}] does not match "
                f"[{first.window_length}, {first.d}]"
            )
        for key in _GEOMETRY_KEYS:
            if s.manifest.get(key) != first.manifest.get(key):
                raise TrainingError(
                    f"shards disagree on {key!r}; one model assumes identical spans"
                )
    return first.manifest


def _split_rows(shards: list[Shard]):
    """Concatenate shards and resolve manifest splits to global row indices."""
    inputs = np.concatenate([s.inputs for s in shards], axis=0)
    targets = np.concatenate([s.targets for s in shards], axis=0)
    idx = {"0": [], "1": [], "2": []}
    base = 0
    for s in shards:
        for label in idx:
            idx[label].append(s.split_indices(label) + base)
        base += s.b
    train_i, val_i, test_i = (np.concatenate(idx[k]) for k in ("0", "1", "2"))
    if train_i.size == 0 or val_i.size == 0 or test_i.size == 0:
        raise TrainingError(
            f"degenerate split: {train_i.size}/{val_i.size}/{test_i.size} rows"
        )
    return inputs, targets, train_i, val_i, test_i


def _nmse(model: nn.Module, inputs: torch.Tensor, targets: torch.Tensor,
          rows: torch.Tensor) -> float:
    """sum |pred - target|^2 / sum |target|^2 over the given rows."""
    model.eval()
    num = 0.0
    den = 0.0
    with torch.no_grad():
        for start in range(0, rows.numel(), _EVAL_CHUNK):
            sel = rows[start:start + _EVAL_CHUNK]
            pred = model(inputs[sel])
            tgt = targets[sel]
            num += torch.sum((pred - tgt) ** 2).item()
            den += torch.sum(tgt ** 2).item()
    if den == 0.0:
        raise TrainingError("zero-energy targets; NMSE undefined")
    return num / den


@dataclass
class SurrogateBundle:
    """A trained span surrogate plus everything inference needs.

    Carries the weights, the window geometry, the normalization constant the
    dataset was built with, and the link geometry echoed from the shard
    manifests. The recorded val_nmse is recomputed under the checkpointed
    weights, so predict() on the training shards must reproduce it (the
    self-check in validate()).
    """

    mode: str
    d: int
    hidden_size: int
    num_layers: int
    window_length: int
    state: dict
    normalization_scale_per_sqrt_w: float
    wdm: dict
    span_params: dict
    edfa_gain_db: float
    cascade_spans: int
    val_nmse: float
    test_nmse: float
    best_epoch: int
    history: list = dataclass_field(default_factory=list)

    @property
    def sps(self) -> int:
        explicit = self.wdm.get("samples_per_symbol")
        return int(explicit) if explicit else 4 * int(self.wdm["num_channels"])

    @property
    def sample_rate_hz(self) -> float:
        return self.sps * float(self.wdm["symbol_rate_baud"])

    @property
    def beta2_s2_per_km(self) -> float:
        return float(self.span_params["beta2_ps2_per_km"]) * 1e-24

    @property
    def span_length_km(self) -> float:
        return float(self.span_params["span_length_km"])

    def build_model(self, dtype: torch.dtype = torch.float32) -> WindowRegressor:
        model = WindowRegressor(self.d, self.hidden_size, self.num_layers)
        model.load_state_dict(self.state)
        return model.to(dtype).eval()

    def predict(self, inputs: np.ndarray, model: WindowRegressor | None = None) -> np.ndarray:
        """[b, d] predictions for [b, window_length, d] float32 windows."""
        inputs = np.asarray(inputs, dtype=np.float32)
        if inputs.ndim != 3 or inputs.shape[1:] != (self.window_length, self.d):
            raise DataError(
                f"expected [b, {self.window_length}, {self.d}] windows, got {inputs.shape}"
            )
        if model is None:
            model = self.build_model()
        out = []
        with torch.no_grad():
            for start in range(0, inputs.shape[0], _EVAL_CHUNK):
                chunk = torch.from_numpy(inputs[start:start + _EVAL_CHUNK])
                out.append(model(chunk).numpy())
        return np.concatenate(out, axis=0)

    def validate(self, shards) -> float:
        """Recompute validation NMSE on the given shards with these weights.

        Returns the recomputed value; it must sit within 1e-6 of the recorded
        val_nmse when the shards are the training set.
        """
        shards = _as_shards(shards)
        model = self.build_model()
        num = 0.0
        den = 0.0
        for s in shards:
            rows = s.split_indices("1")
            pred = self.predict(s.inputs[rows], model=model)
            tgt = s.targets[rows].astype(np.float32)
            num += float(np.sum((pred - tgt) ** 2))
            den += float(np.sum(tgt ** 2))
        if den == 0.0:
            raise TrainingError("zero-energy validation targets")
        return num / den

    def save(self, path) -> Path:
        path = Path(path)
        payload = {
            "format": "surrogate-bundle",
            "version": 1,
            "mode": self.mode,
            "d": self.d,
            "hidden_size": self.hidden_size,
            "num_layers": self.num_layers,
            "window_length": self.window_length,
            "state": self.state,
            "normalization_scale_per_sqrt_w": self.normalization_scale_per_sqrt_w,
            "wdm": self.wdm,
            "span_params": self.span_params,
            "edfa_gain_db": self.edfa_gain_db,
            "cascade_spans": self.cascade_spans,
            "val_nmse": self.val_nmse,
            "test_nmse": self.test_nmse,
            "best_epoch": self.best_epoch,
            "history": self.history,
        }
        torch.save(payload, path)
        return path

    @classmethod
    def load(cls, path) -> "SurrogateBundle":
        payload = torch.load(Path(path), map_location="cpu")
        if payload.get("format") != "surrogate-bundle":
            raise DataError(f"{path}: not a surrogate bundle")
        if payload.get("version") != 1:
            raise DataError(f"{path}: unsupported bundle version {payload.get('version')}")
        payload = {k: v for k, v in payload.items() if k not in ("format", "version")}
        return cls(**payload)


def train(shards, cfg: TrainingConfig) -> SurrogateBundle:
    """Train one surrogate on the pooled shards per the fixed recipe.

    The checkpoint kept is the epoch with the lowest test NMSE; training and
    shuffling are fully seeded, so repeated runs with the same config land on
    bit-identical weights.
    """
    shards = _as_shards(shards)
    manifest = _check_consistent(shards, cfg)
    inputs_np, targets_np, train_i, val_i, test_i = _split_rows(shards)
    d = targets_np.shape[1]
    hidden = cfg.hidden_size if cfg.hidden_size is not None else d

    torch.manual_seed(cfg.seed)
    model = WindowRegressor(d, hidden, cfg.num_layers)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs)
    criterion = nn.SmoothL1Loss()
    shuffle = torch.Generator().manual_seed(cfg.seed)

    inputs = torch.from_numpy(inputs_np)
    targets = torch.from_numpy(targets_np)
    train_rows = torch.from_numpy(train_i)
    val_rows = torch.from_numpy(val_i)
    test_rows = torch.from_numpy(test_i)

    best = None
    history = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = train_rows[torch.randperm(train_rows.numel(), generator=shuffle)]
        total = 0.0
        for start in range(0, perm.numel(), cfg.batch_size):
            sel = perm[start:start + cfg.batch_size]
            optimizer.zero_grad()
            loss = criterion(model(inputs[sel]), targets[sel])
            loss.backward()
            optimizer.step()
            total += loss.item() * sel.numel()
        train_loss = total / perm.numel()
        if not math.isfinite(train_loss):
            param_peak = max(p.detach().abs().max().item() for p in model.parameters())
            raise TrainingError(
                f"training diverged at epoch {epoch}: loss={train_loss}, "
                f"lr={scheduler.get_last_lr()[0]:.3e}, max|param|={param_peak:.3e}"
            )
        val_nmse = _nmse(model, inputs, targets, val_rows)
        test_nmse = _nmse(model, inputs, targets, test_rows)
        history.append(
            {
                "epoch": epoch,
                "lr": scheduler.get_last_lr()[0],
                "train_loss": train_loss,
                "val_nmse": val_nmse,
                "test_nmse": test_nmse,
            }
        )
        if best is None or test_nmse < best[0]:
            best = (
                test_nmse,
                epoch,
                {k: v.detach().clone() for k, v in model.state_dict().items()},
            )
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info(
                "epoch %d/%d train %.3e val %.3e test %.3e",
                epoch, cfg.epochs, train_loss, val_nmse, test_nmse,
            )
        scheduler.step()

    model.load_state_dict(best[2])
    spans_seen = sorted({int(s.manifest.get("span_index", 0)) for s in shards})
    return SurrogateBundle(
        mode=cfg.mode,
        d=d,
        hidden_size=hidden,
        num_layers=cfg.num_layers,
        window_length=shards[0].window_length,
        state=best[2],
        normalization_scale_per_sqrt_w=float(manifest["normalization_scale_per_sqrt_w"]),
        wdm=dict(manifest["wdm"]),
        span_params=dict(manifest["span_params"]),
        edfa_gain_db=float(manifest.get("edfa_gain_db", 0.0)),
        cascade_spans=spans_seen[-1] if spans_seen else 0,
        val_nmse=_nmse(model, inputs, targets, val_rows),
        test_nmse=best[0],
        best_epoch=best[1],
        history=history,
    )
