"""Two-phase progressive training.

Phase 1 pretrains the conv stack with the softmax head and cross-entropy;
the projection layer is not touched. Phase 2 trains end to end with the
pairwise loss and band regularizers, ramping the inner-band weight beta
on a step schedule and mining hard different-account pairs from accounts
whose current hash codes collide (< 3 bits apart). All randomness comes
from one seeded generator, so a (seed, dataset, config) triple fixes the
entire trajectory.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import network
from .errors import DataError, NonFiniteActivation

COLLISION_BITS = 3


@dataclass
class TrainConfig:
    hash_bits: int = 16
    p: float = 10.0
    q: float = 5.0
    m: float | None = None          # defaults to p * sqrt(hash_bits)
    alpha: float = 0.1
    beta_start: float = 1e-4
    beta_factor: float = 10.0
    beta_every: int = 2000
    beta_cap: float = 0.1
    pair_count: int = 200           # M; a batch holds 2M pairs, M per class
    lr: float = 1e-3
    pretrain_iters: int = 1000
    pairwise_iters: int = 10000
    mine_refresh: int = 20
    augment_target: int = 125
    seed: int = 0

    def __post_init__(self):
        if self.q >= self.p:
            raise DataError("q must be smaller than p")
        if self.margin <= 0:
            raise DataError("pair margin must be positive")
        for name in ("pair_count", "pretrain_iters", "pairwise_iters", "mine_refresh"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")

    @property
    def margin(self) -> float:
        if self.m is not None:
            return self.m
        return self.p * math.sqrt(self.hash_bits)


def beta_at(iteration: int, config: TrainConfig) -> float:
    """Step schedule: beta_start for the first beta_every iterations, then
    multiplied by beta_factor per window until beta_cap."""
    if not 0 <= iteration < config.pairwise_iters:
        raise DataError(f"iteration {iteration} outside [0, {config.pairwise_iters})")
    k = iteration // config.beta_every
    return min(config.beta_cap, config.beta_start * config.beta_factor ** k)


@dataclass
class TrainingSet:
    """Processed signals arranged for training.

    account_ids: external id per account index.
    registration: (n_accounts, K, frames, channels) original signals,
        used for enrollment-style code computation during mining.
    augmented: (n_accounts, T, frames, channels) expanded training pool.
    """

    account_ids: list
    registration: np.ndarray
    augmented: np.ndarray

    def __post_init__(self):
        n, t = self.augmented.shape[0], self.augmented.shape[1]
        self.flat = self.augmented.reshape(n * t, *self.augmented.shape[2:])
        self.flat_labels = np.repeat(np.arange(n), t)

    @property
    def n_accounts(self) -> int:
        return self.augmented.shape[0]

    @property
    def pool_size(self) -> int:
        return self.augmented.shape[1]


@dataclass
class PairBatch:
    idx1: np.ndarray    # flat indices into TrainingSet.flat
    idx2: np.ndarray
    y: np.ndarray       # 0 = same account, 1 = different accounts


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)   # (iteration, loss, beta, collisions)
    code_refreshes: int = 0

    def append(self, iteration, loss, beta, collisions):
        self.entries.append((iteration, float(loss), float(beta), int(collisions)))

    def write(self, path):
        with open(path, "w") as fh:
            for it, loss, beta, collisions in self.entries:
                fh.write(f"{it} {loss:.6f} {beta:.6g} {collisions}\n")


def account_codes(params, training_set: TrainingSet):
    """Hash code of every account from its registration signals, using the
    deployment enrollment rule: mean latent, then project and sign."""
    n, k = training_set.registration.shape[0], training_set.registration.shape[1]
    flat = training_set.registration.reshape(n * k, *training_set.registration.shape[2:])
    h, _ = network.forward_latent(params, flat)
    mean_h = h.reshape(n, k, -1).mean(axis=1)
    return network.quantize(network.forward_projection(params, mean_h))


def colliding_account_pairs(codes: np.ndarray, bits: int = COLLISION_BITS) -> np.ndarray:
    """(P, 2) array of account index pairs whose codes differ by < bits."""
    sims = codes.astype(np.int32) @ codes.astype(np.int32).T
    dist = (codes.shape[1] - sims) // 2
    close = np.triu(dist < bits, k=1)
    return np.argwhere(close)


def _distinct_pair(rng, high, size):
    a = rng.integers(0, high, size=size)
    b = rng.integers(0, high - 1, size=size)
    b = np.where(b >= a, b + 1, b)
    return a, b


def mine_pairs(training_set: TrainingSet, codes: np.ndarray, rng: np.random.Generator,
               config: TrainConfig) -> PairBatch:
    """Batch of 2M pairs: M same-account and M different-account.

    Different-account pairs come half from currently colliding account
    pairs (when any exist) and half uniformly, so training focuses on
    collisions without collapsing onto a few accounts.
    """
    m = config.pair_count
    n = training_set.n_accounts
    pool = training_set.pool_size

    acc = rng.integers(0, n, size=m)
    s1, s2 = _distinct_pair(rng, pool, m)
    same1 = acc * pool + s1
    same2 = acc * pool + s2

    colliding = colliding_account_pairs(codes)
    if len(colliding) > 0:
        n_hard = m // 2
        pick = rng.integers(0, len(colliding), size=n_hard)
        hard_a = colliding[pick, 0]
        hard_b = colliding[pick, 1]
        uni_a, uni_b = _distinct_pair(rng, n, m - n_hard)
        diff_a = np.concatenate([hard_a, uni_a])
        diff_b = np.concatenate([hard_b, uni_b])
    else:
        diff_a, diff_b = _distinct_pair(rng, n, m)
    diff1 = diff_a * pool + rng.integers(0, pool, size=m)
    diff2 = diff_b * pool + rng.integers(0, pool, size=m)

    idx1 = np.concatenate([same1, diff1])
    idx2 = np.concatenate([same2, diff2])
    y = np.concatenate([np.zeros(m, dtype=np.float32), np.ones(m, dtype=np.float32)])
    return PairBatch(idx1=idx1, idx2=idx2, y=y)


class Checkpointer:
    """Writes model snapshots every `every` global iterations."""

    def __init__(self, directory, every: int):
        if every < 1:
            raise DataError("checkpoint interval must be >= 1")
        self.directory = directory
        self.every = every
        os.makedirs(directory, exist_ok=True)

    def __call__(self, params, global_iter: int) -> None:
        if global_iter % self.every == 0:
            path = os.path.join(self.directory, f"checkpoint_{global_iter:06d}.fmh")
            network.save_model(path, params)


def pretrain_softmax(params, training_set: TrainingSet, config: TrainConfig,
                     rng: np.random.Generator, log: TrainLog,
                     checkpointer: Checkpointer | None = None) -> None:
    """Phase 1: cross-entropy on uniformly sampled signals. The projection
    tensors are neither read nor written."""
    batch = 2 * config.pair_count
    trainable = [n for n in params.names() if not n.startswith("proj_")]
    state = network.adam_init(params, trainable)
    for it in range(1, config.pretrain_iters + 1):
        idx = rng.integers(0, len(training_set.flat), size=batch)
        x = training_set.flat[idx]
        labels = training_set.flat_labels[idx]
        h, cache = network.forward_latent(params, x)
        probs = network.forward_softmax(params, h)
        loss, dlogits = network.loss_crossentropy(probs, labels)
        if not np.isfinite(loss):
            raise NonFiniteActivation(f"pretraining loss diverged at iteration {it}")
        head_grads, dh = network.softmax_backward(params, h, dlogits)
        grads = network.backward_latent(params, cache, dh)
        grads.update(head_grads)
        network.adam_step(state, params, grads, config.lr, it)
        log.append(it, loss, 0.0, 0)
        if checkpointer is not None:
            checkpointer(params, it)


def train_pairwise(params, training_set: TrainingSet, config: TrainConfig,
                   rng: np.random.Generator, log: TrainLog,
                   iteration_offset: int = 0,
                   checkpointer: Checkpointer | None = None) -> None:
    """Phase 2: pairwise loss with band regularizers and hard-pair mining."""
    trainable = [n for n in params.names() if not n.startswith("softmax_")]
    state = network.adam_init(params, trainable)
    m_pairs = config.pair_count
    codes = None
    collisions = 0
    for it in range(config.pairwise_iters):
        if it % config.mine_refresh == 0:
            codes = account_codes(params, training_set)
            collisions = len(colliding_account_pairs(codes))
            log.code_refreshes += 1
        batch = mine_pairs(training_set, codes, rng, config)
        beta = beta_at(it, config)

        x = training_set.flat[np.concatenate([batch.idx1, batch.idx2])]
        h, cache = network.forward_latent(params, x)
        z = network.forward_projection(params, h)
        z1, z2 = z[:2 * m_pairs], z[2 * m_pairs:]
        loss, dz1, dz2 = network.loss_pairwise(
            z1, z2, batch.y, config.margin, config.alpha, beta, config.p, config.q)
        if not np.isfinite(loss):
            raise NonFiniteActivation(f"pairwise loss diverged at iteration {it}")
        proj_grads, dh = network.projection_backward(params, h, np.concatenate([dz1, dz2]))
        grads = network.backward_latent(params, cache, dh)
        grads.update(proj_grads)
        network.adam_step(state, params, grads, config.lr, it + 1)
        log.append(iteration_offset + it + 1, loss, beta, collisions)
        if checkpointer is not None:
            checkpointer(params, iteration_offset + it + 1)


def train_full(training_set: TrainingSet, config: TrainConfig,
               spec: "network.NetSpec | None" = None,
               checkpoint_dir=None, checkpoint_every: int | None = None):
    """Initialize, pretrain, then pairwise-train; returns (params, log).

    With checkpoint_dir and checkpoint_every set, model snapshots are
    written every that many global iterations.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed]))
    if spec is None:
        params = network.init_params(rng, config.hash_bits, training_set.n_accounts)
    else:
        params = network.init_params(rng, spec.hash_bits, spec.n_classes, spec)
    checkpointer = None
    if checkpoint_dir is not None and checkpoint_every is not None:
        checkpointer = Checkpointer(checkpoint_dir, checkpoint_every)
    log = TrainLog()
    pretrain_softmax(params, training_set, config, rng, log, checkpointer)
    train_pairwise(params, training_set, config, rng, log,
                   iteration_offset=config.pretrain_iters,
                   checkpointer=checkpointer)
    return params, log
