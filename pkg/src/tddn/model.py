"""Degradation network: causal conv encoder, feature attention, regressor.

A (window, features) input passes through a stack of width-2 causal
convolutions with ReLU and 2/2 max pooling, is expanded back to a
(window, features) grid of abstract features by a dense layer, reduced
to a single feature row by attention against the first (healthiest) row,
and regressed to a scalar remaining-useful-life estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    Conv1d,
    Flatten,
    Linear,
    MaxPool1d,
    Module,
    Param,
    ReLU,
    Reshape,
    Sequential,
    glorot_uniform,
    softmax,
    softmax_backward,
)

CONV_CHANNEL_LADDER = (32, 64, 128, 256)


def conv_channels_for_depth(depth: int) -> tuple[int, ...]:
    """Channel progression for a stack of ``depth`` conv/pool stages."""
    if not 1 <= depth <= len(CONV_CHANNEL_LADDER):
        raise ValueError(f"depth must be in 1..{len(CONV_CHANNEL_LADDER)}, got {depth}")
    return CONV_CHANNEL_LADDER[:depth]


def pooled_length(window: int, n_stages: int, pool: int = 2, stride: int = 2) -> int:
    """Time-axis length after ``n_stages`` pool layers, floor semantics."""
    length = window
    for stage in range(1, n_stages + 1):
        if length < pool:
            raise ValueError(
                f"window {window} leaves only {length} steps at pool stage {stage}"
            )
        length = (length - pool) // stride + 1
    return length


@dataclass(frozen=True)
class ModelConfig:
    """Shape hyperparameters of the network.

    ``attention_hidden`` defaults to the window length when omitted.
    """

    window: int = 64
    n_features: int = 15
    conv_channels: tuple[int, ...] = (32, 64, 128)
    kernel: int = 2
    attention_hidden: int | None = None
    regressor_hidden: int = 8

    def __post_init__(self) -> None:
        if self.window < 4:
            raise ValueError(f"window must be >= 4, got {self.window}")
        if self.n_features < 1:
            raise ValueError(f"n_features must be >= 1, got {self.n_features}")
        if not self.conv_channels or any(c < 1 for c in self.conv_channels):
            raise ValueError(f"bad conv channels {self.conv_channels}")
        if self.kernel < 1:
            raise ValueError(f"kernel must be >= 1, got {self.kernel}")
        if self.regressor_hidden < 1:
            raise ValueError(f"regressor_hidden must be >= 1, got {self.regressor_hidden}")
        if self.attention_hidden is None:
            object.__setattr__(self, "attention_hidden", self.window)
        if self.attention_hidden < 1:
            raise ValueError(f"attention_hidden must be >= 1, got {self.attention_hidden}")
        # raises when the window is too short for the conv/pool stack
        pooled_length(self.window, len(self.conv_channels))

    @property
    def depth(self) -> int:
        return len(self.conv_channels)


@dataclass(frozen=True, eq=False)
class ModelTrace:
    """Intermediate activations of one forward pass, for inspection."""

    temporal: np.ndarray
    abstract: np.ndarray
    attention: np.ndarray
    prediction: np.ndarray


class FeatureAttention(Module):
    """Pools (B, w, m) feature rows into (B, m) by attention.

    Each row is compared against the first row through the augmented
    vector [row, first, row - first, row * first], scored by a shared
    one-hidden-layer tanh MLP against a trainable context vector, and
    the softmax-weighted sum of the original rows is returned. The
    weights of the latest forward stay readable as ``last_weights``.
    """

    def __init__(self, n_features: int, hidden: int, rng: np.random.Generator):
        self.n_features = n_features
        self.hidden = hidden
        self.weight = Param(
            "attention.weight",
            glorot_uniform(rng, 4 * n_features, hidden, (4 * n_features, hidden)),
        )
        self.bias = Param("attention.bias", np.zeros(hidden))
        self.context = Param(
            "attention.context", glorot_uniform(rng, hidden, 1, (hidden,))
        )
        self.last_weights: np.ndarray | None = None

    def params(self) -> list[Param]:
        return [self.weight, self.bias, self.context]

    def forward(self, h: np.ndarray) -> np.ndarray:
        m = h.shape[2]
        if m != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {m}")
        first = np.broadcast_to(h[:, :1, :], h.shape)
        augmented = np.concatenate([h, first, h - first, h * first], axis=2)
        hidden = np.tanh(augmented @ self.weight.value + self.bias.value)
        scores = hidden @ self.context.value
        weights = softmax(scores, axis=1)
        pooled = np.einsum("bw,bwm->bm", weights, h)
        self.last_weights = weights
        self._cache = (h, augmented, hidden, weights)
        return pooled

    def backward(self, gout: np.ndarray) -> np.ndarray:
        h, augmented, hidden, weights = self._take_cache()
        batch, n_rows, m = h.shape
        gweights = np.einsum("bm,bwm->bw", gout, h)
        gh = weights[:, :, None] * gout[:, None, :]
        gscores = softmax_backward(weights, gweights, axis=1)
        self.context.grad += np.einsum("bwd,bw->d", hidden, gscores)
        gpre = gscores[:, :, None] * self.context.value * (1.0 - hidden * hidden)
        flat_aug = augmented.reshape(batch * n_rows, 4 * m)
        flat_gpre = gpre.reshape(batch * n_rows, self.hidden)
        self.weight.grad += flat_aug.T @ flat_gpre
        self.bias.grad += flat_gpre.sum(axis=0)
        gaug = (flat_gpre @ self.weight.value.T).reshape(batch, n_rows, 4 * m)
        g_row, g_first, g_diff, g_prod = np.split(gaug, 4, axis=2)
        first = h[:, :1, :]
        gh += g_row + g_diff + g_prod * first
        # everything routed through the broadcast first row lands on row 0
        gh[:, 0, :] += (g_first - g_diff + g_prod * h).sum(axis=1)
        return gh


class DegradationNetwork(Module):
    """Full network: windows (B, w, m) in, RUL estimates (B,) out."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        w, m = config.window, config.n_features
        stages: list[Module] = []
        c_in = m
        for i, c_out in enumerate(config.conv_channels, start=1):
            stages.append(Conv1d(c_in, c_out, config.kernel, rng, name=f"conv{i}"))
            stages.append(ReLU())
            stages.append(MaxPool1d(pool=2, stride=2))
            c_in = c_out
        self.conv_stack = Sequential(*stages)
        n_flat = pooled_length(w, config.depth) * config.conv_channels[-1]
        self.flatten = Flatten()
        self.expand = Linear(n_flat, w * m, rng, name="expand")
        self.expand_act = ReLU()
        self.reshape = Reshape(w, m)
        self.attention = FeatureAttention(m, config.attention_hidden, rng)
        self.regressor = Sequential(
            Linear(m, config.regressor_hidden, rng, name="regress1"),
            ReLU(),
            Linear(config.regressor_hidden, 1, rng, name="regress2"),
        )

    def params(self) -> list[Param]:
        return (
            self.conv_stack.params()
            + self.expand.params()
            + self.attention.params()
            + self.regressor.params()
        )

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.params())

    def trace(self, x: np.ndarray) -> ModelTrace:
        """Forward pass that also exposes the intermediate activations."""
        if x.ndim != 3 or x.shape[1:] != (self.config.window, self.config.n_features):
            raise ValueError(
                f"expected input (B, {self.config.window}, {self.config.n_features}), "
                f"got {x.shape}"
            )
        temporal = self.conv_stack(x)
        abstract = self.reshape(self.expand_act(self.expand(self.flatten(temporal))))
        pooled = self.attention(abstract)
        prediction = self.regressor(pooled)[:, 0]
        assert self.attention.last_weights is not None
        return ModelTrace(
            temporal=temporal,
            abstract=abstract,
            attention=self.attention.last_weights,
            prediction=prediction,
        )

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.trace(x).prediction

    def backward(self, gout: np.ndarray) -> np.ndarray:
        g = self.regressor.backward(gout[:, None])
        g = self.attention.backward(g)
        g = self.flatten.backward(self.expand.backward(self.expand_act.backward(self.reshape.backward(g))))
        return self.conv_stack.backward(g)


def state_arrays(model: DegradationNetwork) -> dict[str, np.ndarray]:
    """Named parameter values in the fixed traversal order."""
    arrays: dict[str, np.ndarray] = {}
    for p in model.params():
        if p.name in arrays:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        arrays[p.name] = p.value
    return arrays


def load_state_arrays(model: DegradationNetwork, arrays: dict[str, np.ndarray]) -> None:
    """Copy named arrays into the model parameters, shapes must match."""
    params = {p.name: p for p in model.params()}
    missing = sorted(params.keys() - arrays.keys())
    extra = sorted(arrays.keys() - params.keys())
    if missing or extra:
        raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
    for name, p in params.items():
        value = np.asarray(arrays[name], dtype=np.float64)
        if value.shape != p.value.shape:
            raise ValueError(
                f"shape mismatch for {name}: expected {p.value.shape}, got {value.shape}"
            )
        p.value[...] = value
