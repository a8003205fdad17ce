"""Gradient gates: identity in the forward pass, scaled gradient in the backward pass."""

from __future__ import annotations

import torch

GATE_MODES = ("stop", "reverse")


class _ScaleGradient(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x: torch.Tensor, scale: float) -> torch.Tensor:
        ctx.scale = scale
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor):
        return grad_output * ctx.scale, None


def gradient_gate(x: torch.Tensor, mode: str) -> torch.Tensor:
    """``stop`` multiplies the upstream gradient by 0, ``reverse`` by -1."""
    if mode == "stop":
        return _ScaleGradient.apply(x, 0.0)
    if mode == "reverse":
        return _ScaleGradient.apply(x, -1.0)
    raise ValueError(f"unknown gate mode {mode!r}; expected one of {GATE_MODES}")


def stop_gradient(x: torch.Tensor) -> torch.Tensor:
    return gradient_gate(x, "stop")


def reverse_gradient(x: torch.Tensor) -> torch.Tensor:
    return gradient_gate(x, "reverse")
