"""Training-set expansion: warp-align registration signals, then splice.

K registration signals become K^2 by aligning every signal onto every
other's time base with DTW, and the set is topped up to the configured
target by exchanging random frame segments between aligned pairs.
Test signals are never augmented.
"""

import numpy as np

from .dtw import dtw_align
from .errors import TooFewSignals
from .preprocessing import amplitude_normalize

SEGMENT_MIN = 16
SEGMENT_MAX = 128
DEFAULT_TARGET = 125


def warp_to_reference(reference: np.ndarray, query: np.ndarray, path: np.ndarray) -> np.ndarray:
    """Project query onto the reference time base along a warp path.

    Output frame i is the mean of all query frames aligned to reference
    frame i. Frame averaging perturbs channel statistics, so the result
    is amplitude-normalized again.
    """
    n = reference.shape[0]
    out = np.zeros_like(reference)
    counts = np.zeros(n)
    np.add.at(out, path[:, 0], query[path[:, 1]])
    np.add.at(counts, path[:, 0], 1.0)
    out /= counts[:, None]
    return amplitude_normalize(out)


def expand_by_alignment(signals) -> list:
    """K signals -> K^2: each signal kept as reference plus the K-1
    others warped onto its time base."""
    k = len(signals)
    if k < 2:
        raise TooFewSignals(f"alignment expansion needs >= 2 signals, got {k}")
    out = []
    for ref_idx, ref in enumerate(signals):
        out.append(np.array(ref, copy=True))
        for qry_idx, qry in enumerate(signals):
            if qry_idx == ref_idx:
                continue
            _, path = dtw_align(ref, qry)
            out.append(warp_to_reference(ref, qry, path))
    return out


def splice_frames(a: np.ndarray, b: np.ndarray, start: int, end: int) -> np.ndarray:
    """a with frames [start, end) replaced by b's, renormalized."""
    out = np.array(a, copy=True)
    out[start:end] = b[start:end]
    return amplitude_normalize(out)


def segment_exchange(a: np.ndarray, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Replace a random segment of a with the same segment of b.

    Segment length is uniform in [SEGMENT_MIN, SEGMENT_MAX] frames: long
    enough to change content, short enough to preserve identity.
    """
    n = a.shape[0]
    length = int(rng.integers(SEGMENT_MIN, SEGMENT_MAX + 1))
    start = int(rng.integers(0, n - length + 1))
    return splice_frames(a, b, start, start + length)


def augment_account(signals, target: int = DEFAULT_TARGET,
                    rng: np.random.Generator | None = None) -> list:
    """Expand K registration signals to exactly `target` training signals:
    K^2 aligned plus (target - K^2) segment exchanges of random aligned pairs."""
    if len(signals) < 2:
        raise TooFewSignals(f"augmentation needs >= 2 signals, got {len(signals)}")
    if rng is None:
        rng = np.random.default_rng(0)
    aligned = expand_by_alignment(signals)
    if len(aligned) >= target:
        return aligned[:target]
    out = list(aligned)
    n = len(aligned)
    while len(out) < target:
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n - 1))
        if j >= i:
            j += 1
        out.append(segment_exchange(aligned[i], aligned[j], rng))
    return out


def augment_dataset(train_signals: np.ndarray, target: int = DEFAULT_TARGET,
                    seed: int = 0) -> np.ndarray:
    """Augment every account of a (n_accounts, K, frames, channels) stack.

    Returns (n_accounts, target, frames, channels) float32. Each account
    uses its own seed-derived rng so the expansion parallelizes and stays
    order-independent.
    """
    n_accounts = train_signals.shape[0]
    frames, channels = train_signals.shape[2], train_signals.shape[3]
    out = np.empty((n_accounts, target, frames, channels), dtype=np.float32)
    for a in range(n_accounts):
        rng = np.random.default_rng(np.random.SeedSequence([seed, a]))
        sigs = [train_signals[a, k].astype(np.float64) for k in range(train_signals.shape[1])]
        for t, sig in enumerate(augment_account(sigs, target, rng)):
            out[a, t] = sig.astype(np.float32)
    return out
