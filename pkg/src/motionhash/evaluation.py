"""Identification metrics and hash-code statistics.

A test signal is a true positive of its account when identified as it,
a false positive of account B when identified as B instead, and a
failure when no candidate is found. Per-account TP + FN always equals
the number of test signals of that account, so miss rate, failure rate
and accuracy partition the test set.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import network
from .database import AccountDatabase
from .errors import DataError, EmptyTestSet


@dataclass
class IdentificationMetrics:
    tolerance: int
    avg_precision: float
    avg_recall: float
    miss_rate: float
    fail_rate: float
    n_tests: int


@dataclass
class EvalReport:
    metrics: dict                      # tolerance -> IdentificationMetrics
    bit_one_fraction: np.ndarray       # (B,)
    bit_correlation: np.ndarray        # (B, B)
    intra_hist: np.ndarray             # (B+1,)
    inter_hist: np.ndarray             # (B+1,)
    pair_distances: np.ndarray         # (n, n)
    pair_summary: dict = field(default_factory=dict)


def query_batch(params, signals: np.ndarray):
    """Codes and latents for a stack of processed signals."""
    h, _ = network.forward_latent(params, signals)
    z = network.forward_projection(params, h)
    return network.quantize(z), h


def predict(params, db: AccountDatabase, account_ids, signals: np.ndarray, tolerance: int):
    """(true_id, predicted_id or None) for every test signal.

    signals: (n_accounts, k_test, frames, channels) aligned with account_ids.
    """
    n, k = signals.shape[0], signals.shape[1]
    if n == 0 or k == 0:
        raise EmptyTestSet("no test signals")
    codes, latents = query_batch(params, signals.reshape(n * k, *signals.shape[2:]))
    pairs = []
    for i in range(n * k):
        res = db.lookup(codes[i], latents[i], tolerance)
        pairs.append((account_ids[i // k], res.account_id))
    return pairs


def metrics_from_pairs(pairs, account_ids, tolerance: int) -> IdentificationMetrics:
    """Pure aggregation of (truth, prediction) pairs.

    Accounts that never appear in the predictions contribute precision 1,
    so an abstaining classifier is not penalized on untouched accounts.
    """
    if not pairs:
        raise EmptyTestSet("no prediction pairs")
    tp = {a: 0 for a in account_ids}
    fp = {a: 0 for a in account_ids}
    fn = {a: 0 for a in account_ids}
    misses = failures = 0
    for truth, pred in pairs:
        if pred == truth:
            tp[truth] += 1
        elif pred is None:
            failures += 1
            fn[truth] += 1
        else:
            misses += 1
            fn[truth] += 1
            fp[pred] += 1
    precisions = []
    recalls = []
    for a in account_ids:
        denom = tp[a] + fp[a]
        precisions.append(tp[a] / denom if denom else 1.0)
        denom = tp[a] + fn[a]
        recalls.append(tp[a] / denom if denom else 1.0)
    n_tests = len(pairs)
    return IdentificationMetrics(
        tolerance=tolerance,
        avg_precision=float(np.mean(precisions)),
        avg_recall=float(np.mean(recalls)),
        miss_rate=misses / n_tests,
        fail_rate=failures / n_tests,
        n_tests=n_tests,
    )


def evaluate_identification(params, db, account_ids, signals, tolerance: int):
    return metrics_from_pairs(predict(params, db, account_ids, signals, tolerance),
                              account_ids, tolerance)


def _sorted_codes(db: AccountDatabase) -> np.ndarray:
    if len(db.records) < 2:
        raise DataError("need at least 2 enrolled accounts")
    return np.stack([db.records[a].code for a in sorted(db.records)])


def bit_statistics(db: AccountDatabase):
    """Per-bit one-fraction and the bit-pair Pearson correlation matrix.

    Bits with zero variance get correlation 0 by convention; the diagonal
    is exactly 1.
    """
    codes = _sorted_codes(db).astype(np.float64)
    one_fraction = np.mean(codes > 0, axis=0)
    centered = codes - codes.mean(axis=0)
    cov = centered.T @ centered / codes.shape[0]
    std = np.sqrt(np.diag(cov))
    denom = np.outer(std, std)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, cov / np.where(denom > 0, denom, 1.0), 0.0)
    np.fill_diagonal(corr, 1.0)
    return one_fraction, corr


def distance_distributions(params, db: AccountDatabase, account_ids, signals: np.ndarray):
    """Hamming-distance histograms of test-signal codes against their own
    account code (intra) and every other account's code (inter)."""
    n, k = signals.shape[0], signals.shape[1]
    if n == 0 or k == 0:
        raise EmptyTestSet("no test signals")
    codes, _ = query_batch(params, signals.reshape(n * k, *signals.shape[2:]))
    bits = db.hash_bits
    intra = np.zeros(bits + 1, dtype=np.int64)
    inter = np.zeros(bits + 1, dtype=np.int64)
    for i in range(n * k):
        own = account_ids[i // k]
        sig_code = codes[i].astype(np.int32)
        for account_id in sorted(db.records):
            d = int(np.sum(db.records[account_id].code.astype(np.int32) != sig_code))
            if account_id == own:
                intra[d] += 1
            else:
                inter[d] += 1
    return intra, inter


def account_pair_distances(db: AccountDatabase):
    """Pairwise Hamming distances between account codes plus a summary."""
    codes = _sorted_codes(db).astype(np.int32)
    sims = codes @ codes.T
    dist = (codes.shape[1] - sims) // 2
    np.fill_diagonal(dist, 0)
    iu = np.triu_indices(len(codes), k=1)
    off = dist[iu]
    summary = {
        "min": int(off.min()),
        "mean": float(off.mean()),
        "max": int(off.max()),
    }
    return dist, summary


def separated_fraction(pair_distances: np.ndarray, bits: int = 3) -> float:
    """Fraction of unordered account pairs at Hamming distance >= bits."""
    iu = np.triu_indices(pair_distances.shape[0], k=1)
    off = pair_distances[iu]
    return float(np.mean(off >= bits))


def build_report(params, db, account_ids, signals, tolerances=(0, 1, 2)) -> EvalReport:
    metrics = {l: evaluate_identification(params, db, account_ids, signals, l)
               for l in tolerances}
    one_fraction, corr = bit_statistics(db)
    intra, inter = distance_distributions(params, db, account_ids, signals)
    dist, summary = account_pair_distances(db)
    return EvalReport(metrics=metrics, bit_one_fraction=one_fraction,
                      bit_correlation=corr, intra_hist=intra, inter_hist=inter,
                      pair_distances=dist, pair_summary=summary)


def format_report(report: EvalReport) -> str:
    lines = ["# identification metrics"]
    for l in sorted(report.metrics):
        m = report.metrics[l]
        lines.append(
            f"tolerance {l}: precision {m.avg_precision:.6f} recall {m.avg_recall:.6f} "
            f"miss_rate {m.miss_rate:.6f} fail_rate {m.fail_rate:.6f} tests {m.n_tests}"
        )
    s = report.pair_summary
    lines.append("# account pair code distance")
    lines.append(f"min {s['min']} mean {s['mean']:.4f} max {s['max']}")
    lines.append(f"separated_3bit_fraction {separated_fraction(report.pair_distances):.6f}")
    lines.append("# per-bit one fraction")
    lines.append(" ".join(f"{v:.4f}" for v in report.bit_one_fraction))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, outdir) -> None:
    """Structured text summary plus plot-ready one-value-per-line files."""
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "report.txt"), "w") as fh:
        fh.write(format_report(report))
    for name, hist in (("intra_hist.txt", report.intra_hist),
                       ("inter_hist.txt", report.inter_hist)):
        with open(os.path.join(outdir, name), "w") as fh:
            fh.write("# hamming_distance count\n")
            for d, c in enumerate(hist):
                fh.write(f"{d} {c}\n")
    with open(os.path.join(outdir, "bit_one_fraction.txt"), "w") as fh:
        fh.write("# bit one_fraction\n")
        for j, v in enumerate(report.bit_one_fraction):
            fh.write(f"{j} {v:.6f}\n")
    with open(os.path.join(outdir, "bit_correlation.txt"), "w") as fh:
        fh.write("# row per bit\n")
        for row in report.bit_correlation:
            fh.write(" ".join(f"{v:.6f}" for v in row) + "\n")
    with open(os.path.join(outdir, "account_distances.txt"), "w") as fh:
        fh.write("# row per account\n")
        for row in report.pair_distances:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")
