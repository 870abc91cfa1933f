"""BiLSTM regressors over symbol windows.

The network sees a window of symbol rows [window, d] and predicts the d
features of the center symbol. The prediction is a residual on top of the
raw center row:

    y_hat = x[:, center, :] + head(lstm(x)[:, center, :])

and the head starts at zero, so a fresh model reproduces its input exactly
and training only has to learn the correction. For FDD-mode surrogates the
zero-head limit coincides with plain dispersion-compensated propagation:
the untrained model IS the physical prior, and a degenerate task whose
targets equal its inputs (a zero-nonlinearity channel) is solved from the
first step. The head still receives gradient at zero, so nothing is frozen.
"""

from __future__ import annotations

import torch
from torch import nn

__all__ = ["WindowRegressor"]


class WindowRegressor(nn.Module):
    """Bidirectional-LSTM residual predictor of the center symbol row.

    Parameters
    ----------
    d : int
        Features per symbol row (4 * samples_per_symbol).
    hidden_size : int
        LSTM hidden width per direction.
    num_layers : int
        Stacked LSTM layers (1 or 3 in the configurations used here).
    """

    def __init__(self, d: int, hidden_size: int, num_layers: int = 1):
        super().__init__()
        if d < 1 or hidden_size < 1 or num_layers < 1:
            raise ValueError("d, hidden_size, num_layers must be positive")
        self.d = d
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.lstm = nn.LSTM(
            input_size=d,
            hidden_size=hidden_size,
            num_layers=num_layers,
            batch_first=True,
            bidirectional=True,
        )
        self.head = nn.Linear(2 * hidden_size, d)
        # start at the residual-free prior; see the module docstring
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 3 or x.shape[-1] != self.d:
            raise ValueError(f"expected [batch, window, {self.d}], got {tuple(x.shape)}")
        if x.shape[1] % 2 == 0:
            raise ValueError(f"window length must be odd, got {x.shape[1]}")
        center = x.shape[1] // 2
        out, _ = self.lstm(x)
        return x[:, center, :] + self.head(out[:, center, :])

    @torch.no_grad()
    def zero_head_(self) -> "WindowRegressor":
        """Re-zero the output head in place (the initial state): forward then
        echoes the center row regardless of the LSTM weights."""
        self.head.weight.zero_()
        self.head.bias.zero_()
        return self
