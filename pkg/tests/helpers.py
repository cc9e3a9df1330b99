"""Shared test helpers."""

import numpy as np

from nervpp import tensor as tn
from nervpp.model import ArchConfig, BlockSpec

from oracles import numerical_grad, rel_error


def gradcheck(fn, *arrays, seed=0, h=1e-5):
    """Relative error between backprop and central differences of a random projection of ``fn``."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out_shape = fn(*[tn.Tensor(a) for a in arrays]).shape
    proj = np.random.default_rng(seed).standard_normal(out_shape)

    def scalar():
        with tn.no_grad():
            return float(np.sum(fn(*[tn.Tensor(a) for a in arrays]).data * proj))

    leaves = [tn.Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    tn.backward(tn.sum_(out * proj))
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
    numeric = numerical_grad(scalar, arrays, h=h)
    return max(rel_error(a, n) for a, n in zip(analytic, numeric))


def toy_arch(variant_star=False, **kw):
    """16x16 output from a 2x2 grid: small enough for finite differences over every weight."""
    defaults = dict(
        base_grid=(2, 2),
        base_channels=4,
        blocks=(BlockSpec(2, 3, dw_kernel=3, expansion=2), BlockSpec(2, 2, dw_kernel=3, expansion=2), BlockSpec(2, 2, dw_kernel=3, expansion=2)),
        pe_levels=3,
        stem_hidden=6,
        head_kernel=3,
        variant_star=variant_star,
    )
    defaults.update(kw)
    return ArchConfig(**defaults)
