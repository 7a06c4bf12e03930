"""Finite-difference audit of every differentiable kernel and of a small composed model."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import nn
from .graph import Graph
from .model import CrawlModel, ModelConfig, make_batch
from .nn import ops
from .nn.gradcheck import GradCheckReport, grad_check
from .nn.tensor import Tensor


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> np.ndarray:
    # keeps ReLU and |x| kinks out of the finite-difference stencil
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _set_parameter(module: nn.Module, dotted: str, value: Tensor) -> None:
    *path, leaf = dotted.split(".")
    obj = module
    for part in path:
        obj = obj[int(part)] if isinstance(obj, list) else getattr(obj, part)
    setattr(obj, leaf, value)


def kernel_checks(seed: int = 0, tolerance: float = 1e-4) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    reports = []

    def check(name, fn, **inputs):
        reports.append(grad_check(fn, inputs, tolerance=tolerance, seed=seed, name=name))

    check(
        "linear",
        lambda x, w, b, tape: ops.linear(x, w, b, tape),
        x=rng.normal(size=(2, 3, 4)),
        w=rng.normal(size=(4, 5)),
        b=rng.normal(size=5),
    )
    check("conv1d", lambda x, w, tape: ops.conv1d(x, w, tape), x=rng.normal(size=(3, 7, 4)), w=rng.normal(size=(4, 5, 3)))
    check("conv1d_k1", lambda x, w, tape: ops.conv1d(x, w, tape), x=rng.normal(size=(2, 5, 3)), w=rng.normal(size=(3, 4, 1)))
    check(
        "depthwise_conv1d",
        lambda x, w, tape: ops.depthwise_conv1d(x, w, tape),
        x=rng.normal(size=(3, 8, 4)),
        w=rng.normal(size=(4, 3)),
    )
    for training in (True, False):
        state = ops.BatchNormState.create(4)
        state.running_mean = rng.normal(size=4)
        state.running_var = rng.uniform(0.5, 2.0, size=4)

        def bn(x, gamma, beta, tape, state=state, training=training):
            return ops.batch_norm(x, gamma, beta, state, training, tape)

        check(
            f"batch_norm_{'train' if training else 'eval'}",
            bn,
            x=rng.normal(size=(3, 5, 4)),
            gamma=rng.normal(size=4),
            beta=rng.normal(size=4),
        )
    check("relu", lambda x, tape: ops.relu(x, tape), x=_away_from_zero(rng, (4, 6)))

    def drop(x, tape):
        return ops.dropout(x, 0.4, np.random.default_rng(7), True, tape)

    check("dropout", drop, x=rng.normal(size=(5, 6)))
    check("add", lambda a, b, tape: ops.add(a, b, tape), a=rng.normal(size=(3, 4)), b=rng.normal(size=(3, 4)))
    idx = rng.integers(0, 5, size=(3, 6))
    check("gather_rows", lambda h, tape: ops.gather_rows(h, idx, tape), h=rng.normal(size=(5, 3)))
    const = rng.normal(size=(3, 6, 2))
    check(
        "concat",
        lambda a, b, tape: ops.concat([a, const, b], tape),
        a=rng.normal(size=(3, 6, 3)),
        b=rng.normal(size=(3, 6, 1)),
    )
    mat = sp.random(4, 12, density=0.4, random_state=seed, format="csr")
    check("sparse_matmul", lambda x, tape: ops.sparse_matmul(mat, x, tape), x=rng.normal(size=(3, 4, 5)))
    target = rng.integers(0, 5, size=6)
    check("cross_entropy", lambda z, tape: ops.cross_entropy(z, target, tape), z=rng.normal(size=(6, 5)))
    pred = rng.normal(size=(6, 1))
    check("l1_loss", lambda p, tape: ops.l1_loss(p, pred.ravel(), tape), p=pred + _away_from_zero(rng, (6, 1)))

    conv = nn.ConvModule(4, 5, 3, rng)
    x0 = rng.normal(size=(4, 9, 4))

    def conv_stack(x, pi, dw, po, gamma, beta, tape):
        conv.pointwise_in, conv.depthwise, conv.pointwise_out = pi, dw, po
        conv.bn.gamma, conv.bn.beta = gamma, beta
        return conv(x, True, tape)

    check(
        "conv_module",
        conv_stack,
        x=x0,
        pi=conv.pointwise_in.value,
        dw=conv.depthwise.value,
        po=conv.pointwise_out.value,
        gamma=conv.bn.gamma.value,
        beta=conv.bn.beta.value,
    )
    return reports


def model_check(seed: int = 0, tolerance: float = 1e-4) -> GradCheckReport:
    """Loss gradient of a 2-layer, d=4, s=2 model on a 6-node graph with frozen walks."""
    g = Graph(6, ((0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)), label=1)
    h = Graph(5, ((0, 1), (1, 2), (2, 3), (3, 4), (4, 0)), label=0)
    cfg = ModelConfig(
        num_layers=2, hidden=4, s=2, out_dim=3, virtual_node=True, dropout=0.0, strategy="uniform", dtype="float64"
    )
    model = CrawlModel(cfg, seed=seed)
    batch = make_batch([g, h], cfg, [seed + 11, seed + 12], ell=8)
    labels = np.array([1, 0])
    names = [name for name, _ in model.named_parameters()]
    keys = {name: name.replace(".", "__") for name in names}

    def loss_fn(tape, **params):
        for name in names:
            _set_parameter(model, name, params[keys[name]])
        out = model.forward(batch, training=True, tape=tape)
        return model.loss(out, labels, tape)

    inputs = {keys[name]: p.value.copy() for name, p in model.named_parameters()}
    return grad_check(loss_fn, inputs, tolerance=tolerance, seed=seed, name="crawl_model_2layer")


def gradient_audit(seed: int = 0, tolerance: float = 1e-4) -> list[GradCheckReport]:
    return kernel_checks(seed, tolerance) + [model_check(seed, tolerance)]
