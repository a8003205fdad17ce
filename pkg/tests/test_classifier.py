from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from aster.classifier import (
    AnomalyScore,
    ClassifierConfig,
    MLPClassifier,
    TransformerClassifier,
    bce_loss,
    build_classifier,
    classify,
    matched_mlp_hidden,
    transformer_parameter_count,
)
from aster.errors import ConfigError

from conftest import check_gradient


def _transformer(M=8, L=4, heads=2, depth=2, seed=0, **kw):
    torch.manual_seed(seed)
    return TransformerClassifier(ClassifierConfig(M=M, heads=heads, depth=depth, window_length=L, **kw)).double()


def _ln(x):
    mu = x.mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean(-1, keepdims=True) + 1e-5)


def _gelu(x):
    return 0.5 * x * (1 + np.vectorize(math.erf)(x / math.sqrt(2)))


def test_zero_head_gives_half():
    psi = _transformer()
    with torch.no_grad():
        psi.head.weight.zero_()
        psi.head.bias.zero_()
    score = classify(torch.randn(3, 4, 8, dtype=torch.float64), psi)
    assert torch.equal(score.raw, torch.zeros(3, dtype=torch.float64))
    assert torch.equal(score.probability, torch.full((3,), 0.5, dtype=torch.float64))


def test_probability_is_sigmoid():
    s = AnomalyScore(torch.tensor([0.0, 2.0, -3.0], dtype=torch.float64))
    np.testing.assert_allclose(s.probability.numpy(), 1 / (1 + np.exp(-np.array([0.0, 2.0, -3.0]))), rtol=0, atol=1e-15)


def test_hand_computed_forward():
    psi = _transformer(M=2, L=2, heads=1, depth=1, seed=3)
    p = {n: t.detach().numpy().copy() for n, t in psi.named_parameters()}
    c = np.array([[0.7, -1.2], [0.1, 2.3]])

    pe = np.array([[0.0, 1.0], [math.sin(1), math.cos(1)], [math.sin(2), math.cos(2)]])
    x = np.vstack([p["cls"][None], c]) + pe
    h = _ln(x)
    W = lambda n: (p[f"encoder.layers.0.attn.{n}.weight"], p[f"encoder.layers.0.attn.{n}.bias"])
    q, k, v = (h @ W(n)[0].T + W(n)[1] for n in "qkv")
    logits = q @ k.T / math.sqrt(2)
    a = np.exp(logits - logits.max(1, keepdims=True))
    a /= a.sum(1, keepdims=True)
    x = x + (a @ v) @ W("o")[0].T + W("o")[1]
    hid = _gelu(_ln(x) @ p["encoder.layers.0.mlp.fc.weight"].T + p["encoder.layers.0.mlp.fc.bias"])
    x = x + hid @ p["encoder.layers.0.mlp.proj.weight"].T + p["encoder.layers.0.mlp.proj.bias"]
    out = _ln(x)[0] @ p["head.weight"].T + p["head.bias"]
    assert abs(psi(torch.from_numpy(c)).item() - out.item()) < 1e-6


def test_permutation_invariance_without_positional_encoding():
    psi = _transformer(use_pe=False)
    c = torch.randn(4, 8, dtype=torch.float64)
    perm = torch.tensor([2, 0, 3, 1])
    torch.testing.assert_close(psi(c[perm]), psi(c), rtol=0, atol=1e-12)
    with_pe = _transformer()
    assert not torch.allclose(with_pe(c[perm]), with_pe(c), atol=1e-9)


def test_bce_values():
    half = torch.tensor(0.5, dtype=torch.float64)
    assert bce_loss(half, 0).item() == pytest.approx(math.log(2), abs=1e-12)
    assert bce_loss(half, 1).item() == pytest.approx(0.693147, abs=1e-6)
    assert bce_loss(torch.tensor(0.9, dtype=torch.float64), 0).item() == pytest.approx(2.302585, abs=1e-6)
    assert bce_loss(AnomalyScore(torch.tensor(60.0, dtype=torch.float64)), 1).item() < 1e-6


def test_bce_clamped_and_finite():
    for p, y in [(0.0, 1), (1.0, 0), (0.0, 0), (1.0, 1)]:
        loss = bce_loss(torch.tensor(p, dtype=torch.float64), y)
        assert torch.isfinite(loss)
    assert bce_loss(torch.tensor(1.0, dtype=torch.float64), 0).item() == pytest.approx(-math.log(1e-7), rel=1e-6)


@pytest.mark.parametrize("y", [0.0, 1.0])
def test_bce_gradient_equals_probability_minus_label(y):
    raw = torch.linspace(-8, 8, 41, dtype=torch.float64, requires_grad=True)
    bce_loss(AnomalyScore(raw), y).sum().backward()
    expected = torch.sigmoid(raw.detach()) - y
    assert torch.max(torch.abs(raw.grad - expected)).item() < 1e-9


def test_bce_convex_in_raw():
    raw = torch.linspace(-10, 10, 201, dtype=torch.float64)
    for y in (0.0, 1.0):
        loss = bce_loss(torch.sigmoid(raw), y).numpy()
        assert np.all(np.diff(loss, 2) >= -1e-12)


def test_transformer_gradients_match_finite_differences():
    psi = _transformer(M=8, L=4, heads=2, seed=2)
    c = torch.randn(3, 4, 8, dtype=torch.float64)
    f = lambda: bce_loss(torch.sigmoid(psi(c)), 1.0).sum()
    check_gradient(f, psi.cls)
    check_gradient(f, psi.encoder.layers[0].attn.k.weight)
    check_gradient(f, psi.encoder.layers[1].mlp.fc.weight)
    check_gradient(f, psi.head.weight)


def test_mlp_gradients_match_finite_differences():
    torch.manual_seed(0)
    mlp = MLPClassifier(ClassifierConfig(variant="mlp", M=8, window_length=4, heads=2)).double()
    c = torch.randn(3, 4, 8, dtype=torch.float64)
    f = lambda: bce_loss(torch.sigmoid(mlp(c)), 0.0).sum()
    check_gradient(f, mlp.net[0].weight)
    check_gradient(f, mlp.net[-1].weight)


def test_mlp_parameter_count_matched_within_five_percent():
    for M, L, depth in [(64, 4, 2), (16, 8, 1), (32, 2, 3)]:
        cfg = ClassifierConfig(variant="mlp", M=M, heads=4, window_length=L, depth=depth)
        n_mlp = sum(p.numel() for p in build_classifier(cfg).parameters())
        n_tr = transformer_parameter_count(cfg)
        assert abs(n_mlp - n_tr) / n_tr < 0.05, (M, L, depth, n_mlp, n_tr)
        assert len(matched_mlp_hidden(cfg)) == depth


def test_variants_have_disjoint_parameters():
    tr = build_classifier(ClassifierConfig(M=8, heads=2))
    mlp = build_classifier(ClassifierConfig(variant="mlp", M=8, heads=2))
    assert not {id(p) for p in tr.parameters()} & {id(p) for p in mlp.parameters()}


def test_mlp_rejects_other_window_length():
    mlp = build_classifier(ClassifierConfig(variant="mlp", M=8, heads=2, window_length=4))
    with pytest.raises(ValueError):
        mlp(torch.zeros(1, 5, 8))


def test_unbatched_input():
    psi = _transformer()
    c = torch.randn(4, 8, dtype=torch.float64)
    assert psi(c).shape == ()
    assert psi(c).item() == psi(c[None])[0].item()


@pytest.mark.parametrize("kw", [dict(variant="cnn"), dict(depth=0), dict(M=6, heads=4)])
def test_invalid_config(kw):
    with pytest.raises(ConfigError):
        build_classifier(ClassifierConfig(**kw))
