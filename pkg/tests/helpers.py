"""Shared test utilities: reduced network builds and gradient checking."""

import warnings

import numpy as np

from motionhash import network as net
from motionhash.preprocessing import amplitude_normalize
from motionhash.training import TrainingSet

TINY_KINK_MARGIN = 1e-3


def tiny_training_set(rng, n_accounts=3, k=2, pool=6, frames=16):
    """Random normalized signals shaped for the reduced architecture."""
    def batch(count):
        raw = np.cumsum(rng.standard_normal((count, frames, 9)), axis=1)
        return np.stack([amplitude_normalize(sig) for sig in raw]).astype(np.float32)

    registration = batch(n_accounts * k).reshape(n_accounts, k, frames, 9)
    augmented = batch(n_accounts * pool).reshape(n_accounts, pool, frames, 9)
    return TrainingSet(account_ids=list(range(n_accounts)),
                       registration=registration, augmented=augmented)


def tiny_spec(dtype=np.float64, hash_bits=4, n_classes=3):
    """Reduced architecture: 16x9 input, conv channels 4/8 (one max and
    one avg pool), latent 8."""
    return net.NetSpec(hash_bits=hash_bits, n_classes=n_classes, frames=16,
                       in_channels=9, conv_channels=(4, 8), pools=("max", "avg"),
                       latent=8, dtype=dtype)


def tiny_params(seed=0, dtype=np.float64, hash_bits=4, n_classes=3,
                random_bias=True):
    spec = tiny_spec(dtype=dtype, hash_bits=hash_bits, n_classes=n_classes)
    rng = np.random.default_rng(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        params = net.init_params(rng, spec.hash_bits, spec.n_classes, spec)
    if random_bias:
        for name in params.names():
            if name.endswith("_b"):
                params.tensors[name] = rng.uniform(-0.1, 0.1,
                                                   params[name].shape).astype(spec.dtype)
    return params


def fd_gradient(loss_fn, params, name, flat_index, eps_scale=1e-6):
    """Central finite difference of loss_fn w.r.t. one parameter entry."""
    flat = params.tensors[name].ravel()
    old = flat[flat_index]
    eps = eps_scale * max(1.0, abs(old))
    flat[flat_index] = old + eps
    lp = loss_fn(params)
    flat[flat_index] = old - eps
    lm = loss_fn(params)
    flat[flat_index] = old
    return (lp - lm) / (2.0 * eps)


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(floor, abs(a), abs(b))
