"""Shared test helpers for walking and perturbing parameter trees."""

import dataclasses

import numpy as np

from prformer import nn
from prformer.tensor import Tensor, grad_check


def cast_tree(obj, dtype=np.float64):
    """Deep-copy a parameter tree with every Tensor cast to `dtype`."""
    if isinstance(obj, Tensor):
        return Tensor(obj.data.astype(dtype), requires_grad=obj.requires_grad)
    if dataclasses.is_dataclass(obj):
        return type(obj)(**{f.name: cast_tree(getattr(obj, f.name), dtype)
                            for f in dataclasses.fields(obj)})
    if isinstance(obj, list):
        return [cast_tree(v, dtype) for v in obj]
    if isinstance(obj, tuple):
        return tuple(cast_tree(v, dtype) for v in obj)
    if isinstance(obj, dict):
        return {k: cast_tree(v, dtype) for k, v in obj.items()}
    return obj


def set_by_path(tree, path, value):
    """Replace the leaf at dotted `path` (as produced by nn.iter_params)."""
    parts = path.split(".")
    node = tree
    for part in parts[:-1]:
        if isinstance(node, (list, tuple)):
            node = node[int(part)]
        elif isinstance(node, dict):
            node = node[part]
        else:
            node = getattr(node, part)
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    elif isinstance(node, dict):
        node[last] = value
    else:
        setattr(node, last, value)


def grad_check_all_params(make_loss, params, eps=1e-5, limit=None):
    """Finite-difference check every parameter leaf of a float64 tree.

    `make_loss(tree)` must return a scalar Tensor. Returns the worst
    (name, relative error) pair. `limit` caps per-leaf coordinates checked by
    slicing an equivalent smaller problem is the caller's job; here every
    coordinate of every chosen leaf is checked.
    """
    worst = ("", 0.0)
    names = [n for n, _ in nn.iter_params(params)]
    if limit is not None:
        names = names[:limit]
    for name in names:
        tree = cast_tree(params)

        def f(t, name=name, tree=tree):
            set_by_path(tree, name, t)
            return make_loss(tree)

        leaf = dict(nn.iter_params(params))[name]
        err = grad_check(f, Tensor(leaf.data.astype(np.float64)), eps=eps)
        if err > worst[1]:
            worst = (name, err)
    return worst
