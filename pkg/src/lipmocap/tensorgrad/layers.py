"""Neural layers on top of the autodiff core: linear, MLP, GRU, bi-GRU, PointNet."""
from __future__ import annotations

import numpy as np

from . import core as T
from .core import Tensor, parameter


class Module:
    """Container with an insertion-ordered registry of parameters and sub-modules."""

    def __setattr__(self, key, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self.__dict__.setdefault("_params", {})[key] = value
        elif isinstance(value, Module):
            self.__dict__.setdefault("_children", {})[key] = value
        object.__setattr__(self, key, value)

    def named_parameters(self, prefix=""):
        for k, v in self.__dict__.get("_params", {}).items():
            yield prefix + k, v
        for k, m in self.__dict__.get("_children", {}).items():
            yield from m.named_parameters(prefix + k + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {k: p.data for k, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        bad = sorted(k for k in own if k in state and tuple(state[k].shape) != own[k].shape)
        if missing or extra or bad:
            parts = []
            if missing:
                parts.append(f"missing {missing}")
            if extra:
                parts.append(f"unexpected {extra}")
            if bad:
                parts.append("shape mismatch " + ", ".join(
                    f"{k}: {tuple(state[k].shape)} vs {own[k].shape}" for k in bad))
            raise ValueError("state dict does not match model: " + "; ".join(parts))
        for k, p in own.items():
            p.data = np.array(state[k], dtype=p.dtype)
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """``y = x @ W + b`` with ``W`` of shape ``(in, out)``."""

    def __init__(self, n_in, n_out, rng, dtype=None):
        dtype = dtype or T.default_dtype()
        self.n_in, self.n_out = n_in, n_out
        self.weight = parameter(_uniform(rng, n_in, (n_in, n_out), dtype), dtype=dtype)
        self.bias = parameter(np.zeros(n_out, dtype=dtype), dtype=dtype)

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise T.ShapeError(f"linear: expected last dim {self.n_in}, got {x.shape}")
        if x.ndim == 2:
            return T.add(T.matmul(x, self.weight), self.bias)
        lead = x.shape[:-1]
        y = T.add(T.matmul(T.reshape(x, (-1, self.n_in)), self.weight), self.bias)
        return T.reshape(y, lead + (self.n_out,))


class MLP(Module):
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims, rng, dtype=None, final_relu=False):
        self.dims = tuple(dims)
        self.final_relu = final_relu
        self.n_layers = len(dims) - 1
        for i in range(self.n_layers):
            setattr(self, f"fc{i}", Linear(dims[i], dims[i + 1], rng, dtype))

    def forward(self, x):
        lead = x.shape[:-1]
        if x.ndim != 2:
            x = T.reshape(x, (-1, x.shape[-1]))
        for i in range(self.n_layers):
            x = getattr(self, f"fc{i}")(x)
            if i < self.n_layers - 1 or self.final_relu:
                x = T.relu(x)
        if len(lead) != 1:
            x = T.reshape(x, lead + (x.shape[-1],))
        return x


class GRUCell(Module):
    """Gated recurrent unit with the reset gate applied to ``U_n h + b_hn``.

    ``r = s(W_r x + U_r h + b_r)``, ``z = s(W_z x + U_z h + b_z)``,
    ``n = tanh(W_n x + b_in + r * (U_n h + b_hn))``, ``h' = (1 - z) * n + z * h``.
    Gate blocks are stacked ``[r | z | n]`` along the output axis.
    """

    def __init__(self, n_in, hidden, rng, dtype=None):
        dtype = dtype or T.default_dtype()
        self.n_in, self.hidden = n_in, hidden
        self.weight_ih = parameter(_uniform(rng, n_in, (n_in, 3 * hidden), dtype), dtype=dtype)
        self.weight_hh = parameter(_uniform(rng, hidden, (hidden, 3 * hidden), dtype), dtype=dtype)
        self.bias_ih = parameter(np.zeros(3 * hidden, dtype=dtype), dtype=dtype)
        self.bias_hh = parameter(np.zeros(3 * hidden, dtype=dtype), dtype=dtype)

    def input_gates(self, x):
        return T.add(T.matmul(x, self.weight_ih), self.bias_ih)

    def step(self, gi, h):
        """One update from precomputed input gates ``gi`` (B, 3H)."""
        H = self.hidden
        gh = T.add(T.matmul(h, self.weight_hh), self.bias_hh)
        r = T.sigmoid(T.add(gi[:, :H], gh[:, :H]))
        z = T.sigmoid(T.add(gi[:, H:2 * H], gh[:, H:2 * H]))
        n = T.tanh(T.add(gi[:, 2 * H:], T.mul(r, gh[:, 2 * H:])))
        return T.add(T.mul(T.sub(1.0, z), n), T.mul(z, h))

    def forward(self, x, h):
        return self.step(self.input_gates(x), h)


def gru_cell(x, h_prev, cell: GRUCell):
    return cell(x, h_prev)


class GRU(Module):
    """Unidirectional GRU over a ``(T, B, F)`` sequence; returns ``(T, B, H)``."""

    def __init__(self, n_in, hidden, rng, dtype=None, reverse=False):
        self.cell = GRUCell(n_in, hidden, rng, dtype)
        self.reverse = reverse

    @property
    def hidden(self):
        return self.cell.hidden

    def forward(self, x, h0=None):
        if x.ndim != 3:
            raise T.ShapeError(f"gru: expected (T, B, F) input, got {x.shape}")
        steps, B, F = x.shape
        gi = T.reshape(self.cell.input_gates(T.reshape(x, (steps * B, F))), (steps, B, -1))
        h = h0 if h0 is not None else T.Tensor(np.zeros((B, self.hidden), dtype=x.dtype))
        outs = [None] * steps
        order = range(steps - 1, -1, -1) if self.reverse else range(steps)
        for t in order:
            h = self.cell.step(gi[t], h)
            outs[t] = h
        return T.stack(outs, axis=0)


class BiGRU(Module):
    """Forward and backward GRUs with independent weights; outputs concatenated (2H)."""

    def __init__(self, n_in, hidden, rng, dtype=None):
        self.fwd = GRU(n_in, hidden, rng, dtype)
        self.bwd = GRU(n_in, hidden, rng, dtype, reverse=True)

    def forward(self, x):
        return T.concat([self.fwd(x), self.bwd(x)], axis=-1)


def bigru_forward(seq, model: BiGRU):
    return model(seq)


class PointNetEncoder(Module):
    """Shared per-point MLP followed by a max-pool over points.

    The last shared layer, its ReLU and the max-pool run as one fused op so
    the widest activations never enter the tape.
    """

    def __init__(self, widths=(3, 64, 128, 1024), rng=None, dtype=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.widths = tuple(widths)
        if len(self.widths) < 2:
            raise ValueError("pointnet needs at least an input and an output width")
        self.mlp = MLP(self.widths[:-1], rng, dtype, final_relu=True) if len(self.widths) > 2 else None
        self.last = Linear(self.widths[-2], self.widths[-1], rng, dtype)

    def _hidden(self, clouds):
        F, P, C = clouds.shape
        if self.mlp is None:
            return clouds
        return T.reshape(self.mlp(T.reshape(clouds, (F * P, C))), (F, P, -1))

    def point_features(self, clouds):
        """Per-point features ``(F, P, k)`` before pooling."""
        return T.relu(self.last(self._hidden(clouds)))

    def forward(self, clouds):
        """``clouds``: ``(F, P, 3)`` -> global features ``(F, k)``."""
        if clouds.ndim != 3 or clouds.shape[-1] != self.widths[0]:
            raise T.ShapeError(f"pointnet: expected (F, P, {self.widths[0]}) input, got {clouds.shape}")
        return T.linear_relu_maxpool(self._hidden(clouds), self.last.weight, self.last.bias)


def pointnet_encode(cloud, model: PointNetEncoder):
    """Single cloud ``(P, 3)`` -> ``(k,)``."""
    return T.reshape(model(T.reshape(T.as_tensor(cloud), (1,) + tuple(cloud.shape))), (-1,))
