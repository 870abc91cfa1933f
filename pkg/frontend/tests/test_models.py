"""Network-architecture tests."""

import numpy as np
import pytest
import torch

from dlmodels.models import WindowRegressor


def test_output_shape():
    model = WindowRegressor(d=8, hidden_size=16, num_layers=1)
    out = model(torch.randn(5, 7, 8))
    assert out.shape == (5, 8)


def test_window_must_be_odd():
    model = WindowRegressor(d=8, hidden_size=16)
    with pytest.raises(ValueError, match="odd"):
        model(torch.randn(5, 6, 8))


def test_feature_width_checked():
    model = WindowRegressor(d=8, hidden_size=16)
    with pytest.raises(ValueError, match="expected"):
        model(torch.randn(5, 7, 9))


def test_zero_head_echoes_center_row():
    torch.manual_seed(0)
    model = WindowRegressor(d=12, hidden_size=20, num_layers=3).zero_head_()
    x = torch.randn(9, 11, 12, dtype=torch.float64)
    out = model.double()(x)
    # LSTM output is multiplied by exact zeros; the residual vanishes exactly
    assert torch.equal(out, x[:, 5, :])


def test_fresh_model_is_residual_free():
    # zero-initialized head: an untrained model echoes the center row exactly
    torch.manual_seed(1)
    model = WindowRegressor(d=16, hidden_size=16)
    x = torch.randn(64, 9, 16)
    assert torch.equal(model(x), x[:, 4, :])


def test_head_gets_gradient_at_zero_init():
    # the residual head is trainable from the first step even though its
    # weights start at zero (the LSTM path unlocks once the head moves)
    model = WindowRegressor(d=6, hidden_size=8, num_layers=1)
    x = torch.randn(4, 5, 6)
    loss = (model(x) - x[:, 2, :] - 1.0).pow(2).sum()
    loss.backward()
    assert torch.any(model.head.weight.grad != 0)
    assert torch.any(model.head.bias.grad != 0)


def test_three_layers_add_capacity():
    count = lambda m: sum(p.numel() for p in m.parameters())
    assert count(WindowRegressor(8, 16, 3)) > 2 * count(WindowRegressor(8, 16, 1))


def test_invalid_sizes_rejected():
    with pytest.raises(ValueError):
        WindowRegressor(d=0, hidden_size=4)
    with pytest.raises(ValueError):
        WindowRegressor(d=4, hidden_size=4, num_layers=0)
