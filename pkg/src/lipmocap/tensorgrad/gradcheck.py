"""Finite-difference verification of every primitive and composite layer.

Each check builds a scalar ``L = sum(f(inputs) * W)`` with a fixed random
weight ``W`` and compares the tape gradient of every input with central
differences (float64, ``h = 1e-5``). The reported error for a check is

    max |g_tape - g_fd| / max(max |g_tape|, max |g_fd|)

taken over all inputs, i.e. the largest entry-wise deviation relative to the
gradient's scale.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import core as T
from . import geometry, layers

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-5
H = 1e-5


@dataclass
class CheckResult:
    name: str
    kind: str  # "primitive" | "composite"
    error: float
    tol: float

    @property
    def ok(self):
        return bool(np.isfinite(self.error) and self.error < self.tol)


def check_gradients(fn, arrays, rng, h=H, params=()):
    """Max relative error between tape and finite-difference gradients.

    ``fn`` maps a list of input tensors to an output tensor. ``params`` are
    extra leaf tensors (e.g. layer weights) that are checked as well.
    """
    with T.precision(np.float64):
        inputs = [T.parameter(np.array(a, dtype=np.float64)) for a in arrays]
        leaves = inputs + list(params)
        for p in leaves:
            p.data = p.data.astype(np.float64)
            p.zero_grad()
        out = fn(inputs)
        w = rng.standard_normal(out.shape)
        T.backward(T.tsum(T.mul(out, T.Tensor(w))))
        analytic = [p.grad.copy() for p in leaves]

        def value():
            return float(np.sum(fn(inputs).data * w))

        worst = 0.0
        for p, ga in zip(leaves, analytic):
            gn = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = value()
                flat[i] = orig - h
                fm = value()
                flat[i] = orig
                gn.reshape(-1)[i] = (fp - fm) / (2 * h)
            scale = max(np.abs(ga).max(initial=0.0), np.abs(gn).max(initial=0.0))
            if scale == 0.0:
                continue
            worst = max(worst, float(np.abs(ga - gn).max() / scale))
        return worst


def _away_from_zero(rng, shape, lo=0.2):
    x = rng.uniform(lo, 1.5, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _pointnet_margin(pn, x):
    """Smallest distance of any ReLU input or max-pool runner-up from a kink."""
    h = x.reshape(-1, x.shape[-1])
    margin = np.inf
    layers_ = [getattr(pn.mlp, f"fc{i}") for i in range(pn.mlp.n_layers)] if pn.mlp else []
    for lin in layers_:
        z = h @ lin.weight.data + lin.bias.data
        margin = min(margin, np.abs(z).min())
        h = np.maximum(z, 0.0)
    y = (h @ pn.last.weight.data).reshape(x.shape[0], x.shape[1], -1)
    top = np.sort(y, axis=1)
    margin = min(margin, (top[:, -1] - top[:, -2]).min(), np.abs(top[:, -1] + pn.last.bias.data).min())
    return float(margin)


def _smooth_pointnet_case(rng, widths, shape, min_margin=1e-3):
    """PointNet with nonzero biases and a cloud whose kinks are far from the FD step."""
    pn = layers.PointNetEncoder(widths, rng)
    for p in pn.parameters():
        if p.data.ndim == 1:
            p.data = _away_from_zero(rng, p.data.shape) * 0.3
    for _ in range(1000):
        x = rng.standard_normal(shape)
        if _pointnet_margin(pn, x) > min_margin:
            return pn, x
    raise RuntimeError("could not draw a kink-free PointNet case")


def _primitive_cases(rng):
    a = lambda *s: rng.standard_normal(s)  # noqa: E731
    pos = lambda *s: rng.uniform(0.5, 2.0, size=s)  # noqa: E731
    return {
        "add": (lambda x: T.add(x[0], x[1]), [a(3, 4), a(4)]),
        "sub": (lambda x: T.sub(x[0], x[1]), [a(3, 4), a(3, 4)]),
        "mul": (lambda x: T.mul(x[0], x[1]), [a(3, 4), a(3, 1)]),
        "div": (lambda x: T.div(x[0], x[1]), [a(3, 4), pos(3, 4)]),
        "matmul": (lambda x: T.matmul(x[0], x[1]), [a(3, 5), a(5, 2)]),
        "bmm": (lambda x: T.matmul(x[0], x[1]), [a(2, 3, 3), a(2, 3, 3)]),
        "cross": (lambda x: T.cross(x[0], x[1]), [a(4, 3), a(4, 3)]),
        "tanh": (lambda x: T.tanh(x[0]), [a(3, 4)]),
        "sigmoid": (lambda x: T.sigmoid(x[0]), [a(3, 4)]),
        "relu": (lambda x: T.relu(x[0]), [_away_from_zero(rng, (3, 4))]),
        "sqrt": (lambda x: T.sqrt(x[0]), [pos(3, 4)]),
        "square": (lambda x: T.square(x[0]), [a(3, 4)]),
        "sum": (lambda x: T.tsum(x[0], axis=1), [a(3, 4)]),
        "mean": (lambda x: T.mean(x[0], axis=0), [a(3, 4)]),
        "max_over_axis": (lambda x: T.max_over_axis(x[0], axis=1),
                          [rng.permutation(24).reshape(2, 12, 1) * 0.1 + a(2, 12, 3) * 0.01]),
        "linear_relu_maxpool": (lambda x: T.linear_relu_maxpool(x[0], x[1], x[2]),
                                [a(2, 9, 3), a(3, 5), a(5) * 0.1]),
        "mse": (lambda x: T.mse(x[0], x[1]), [a(3, 4), a(3, 4)]),
        "sum_squared_error": (lambda x: T.sum_squared_error(x[0], x[1]), [a(3, 4), a(3, 4)]),
        "reshape": (lambda x: T.reshape(x[0], (2, 6)), [a(3, 4)]),
        "transpose": (lambda x: T.transpose(x[0], (1, 0, 2)), [a(2, 3, 4)]),
        "slice": (lambda x: x[0][1:3, ::2], [a(4, 5)]),
        "take": (lambda x: T.take(x[0], [2, 0, 2, 1], axis=0), [a(3, 4)]),
        "concat": (lambda x: T.concat([x[0], x[1]], axis=1), [a(3, 2), a(3, 4)]),
        "stack": (lambda x: T.stack([x[0], x[1]], axis=0), [a(3, 4), a(3, 4)]),
    }


def _chain_skeleton():
    from ..kinematics import Skeleton

    return Skeleton(parents=[-1, 0, 1], offsets=[[0, 0, 0], [0, 1, 0], [0.3, 0.8, 0.1]],
                    imu_joints=[0, 1, 2, 2])


def _composite_cases(rng):
    """(fn, arrays, params) per composite; layers are built in float64."""
    cases = {}
    with T.precision(np.float64):
        cell = layers.GRUCell(3, 4, rng)
        cases["gru_cell"] = (lambda x: cell(x[0], x[1]), [rng.standard_normal((2, 3)),
                                                          rng.standard_normal((2, 4))], cell.parameters())
        bi = layers.BiGRU(3, 4, rng)
        cases["bigru_T4"] = (lambda x: bi(x[0]), [rng.standard_normal((4, 2, 3))], bi.parameters())
        pn, cloud = _smooth_pointnet_case(rng, (3, 5, 6, 7), (2, 8, 3))
        cases["pointnet_8pt"] = (lambda x: pn(x[0]), [cloud], pn.parameters())
        lin = layers.Linear(4, 3, rng)
        cases["linear"] = (lambda x: lin(x[0]), [rng.standard_normal((5, 4))], lin.parameters())
        cases["rot6d_to_matrix"] = (lambda x: geometry.rot6d_to_matrix_t(x[0]),
                                    [rng.standard_normal((3, 6))], [])
        skel = _chain_skeleton()
        target = rng.standard_normal((2, 3, 3))

        def fk_loss(x):
            R = geometry.rot6d_to_matrix_t(T.reshape(x[0], (2, 3, 6)))
            return T.sum_squared_error(geometry.fk_t(skel, R), T.Tensor(target))

        cases["fk_loss_3joint"] = (fk_loss, [rng.standard_normal((2, 18))], [])

        from ..lipnet import EstimatorModel, ModelConfig, Stage1Model, loss_prior

        tiny = ModelConfig.tiny()
        s1 = Stage1Model(tiny, np.random.default_rng(1))
        clouds = rng.standard_normal((3, 8, 3)) * 0.3
        j_gt = rng.standard_normal((3, 1, 72)) * 0.3
        r_gt = rng.standard_normal((3, 1, 6))

        def s1_loss(x):
            jp, rr = s1.forward_frames(x[0], np.arange(3).reshape(3, 1))
            return loss_prior(jp, rr, T.Tensor(j_gt), T.Tensor(r_gt), 1.0, 1.0)

        cases["stage1_loss"] = (s1_loss, [clouds], s1.parameters())
        est = EstimatorModel(126, 72, tiny, np.random.default_rng(2))
        j_fine_gt = rng.standard_normal((3, 1, 72))
        cases["jointmap_3gru"] = (lambda x: T.sum_squared_error(est(x[0]), T.Tensor(j_fine_gt)),
                                  [rng.standard_normal((3, 1, 126))], est.parameters())
    return cases


def run_suite(seed=0, names=None):
    """Run every check; returns a list of :class:`CheckResult` in a fixed order."""
    results = []
    rng = np.random.default_rng(seed)
    cases = [(n, "primitive", fn, arrays, ()) for n, (fn, arrays) in _primitive_cases(rng).items()]
    cases += [(n, "composite", fn, arrays, params)
              for n, (fn, arrays, params) in _composite_cases(rng).items()]
    for name, kind, fn, arrays, params in cases:
        if names and name not in names:
            continue
        # per-check stream so a subset run reproduces the full run's numbers
        wrng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        err = check_gradients(fn, arrays, wrng, params=params)
        results.append(CheckResult(name, kind, err, PRIMITIVE_TOL if kind == "primitive" else COMPOSITE_TOL))
    return results
