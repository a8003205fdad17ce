from __future__ import annotations

import numpy as np
import pytest
import torch


def central_difference(f, param: torch.Tensor, index: tuple, h: float = 1e-4) -> float:
    with torch.no_grad():
        old = param[index].item()
        param[index] = old + h
        up = float(f())
        param[index] = old - h
        down = float(f())
        param[index] = old
    return (up - down) / (2 * h)


def check_gradient(f, param: torch.Tensor, n_entries: int = 6, h: float = 1e-4, rtol: float = 1e-3, seed: int = 0) -> None:
    """Compare autodiff against central differences on a few entries of ``param`` (float64)."""
    assert param.dtype == torch.float64
    if param.grad is not None:
        param.grad = None
    f().backward()
    grad = param.grad.detach().clone()
    rng = np.random.default_rng(seed)
    flat = rng.choice(param.numel(), size=min(n_entries, param.numel()), replace=False)
    for i in flat:
        index = np.unravel_index(int(i), tuple(param.shape))
        numeric = central_difference(f, param, index, h)
        analytic = grad[index].item()
        scale = max(abs(numeric), abs(analytic), 1e-6)
        assert abs(numeric - analytic) <= rtol * scale, (index, analytic, numeric)


@pytest.fixture
def torch_seed():
    with torch.random.fork_rng():
        torch.manual_seed(0)
        yield


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
