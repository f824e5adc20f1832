"""Acceptance suite: one test per exit criterion, each printing a
PASS line with its measured numbers (run with -s or -rP to see them).

The end-to-end criterion trains the full-size network three times on a
50-account synthetic dataset; expect a few minutes of wall time.
"""

import math
import time

import numpy as np
import pytest

from helpers import relative_error, tiny_params, tiny_spec, tiny_training_set
from motionhash import network as net
from motionhash.database import (AccountDatabase, AccountRecord, hamming_ball,
                                 save_database)
from motionhash.dtw import brute_force_cost, dtw_cost
from motionhash.evaluation import query_batch, write_report
from motionhash.experiment import preprocess_dataset, run_experiment, run_repeated
from motionhash.network import save_model
from motionhash.preprocessing import preprocess
from motionhash.synth import Jitter, SynthParams, generate_dataset, generate_template, sample_instance
from motionhash.training import TrainConfig, beta_at, train_full

DATASET_SEED = 7
E2E_CONFIG = TrainConfig(hash_bits=16, pair_count=16, pretrain_iters=300,
                         pairwise_iters=800, beta_every=160, mine_refresh=20,
                         augment_target=125, seed=0)


@pytest.fixture(scope="module")
def endtoend():
    """50 accounts, K=5 train + 5 test, default jitter, B=16, three runs."""
    t0 = time.perf_counter()
    raw = generate_dataset(SynthParams(n_accounts=50, k_train=5, k_test=5,
                                       seed=DATASET_SEED))
    processed = preprocess_dataset(raw)
    results, averages = run_repeated(processed, E2E_CONFIG, repeats=3)
    wall = time.perf_counter() - t0
    return {"raw": raw, "processed": processed, "results": results,
            "averages": averages, "wall": wall}


# --- criterion 1: gradient oracle ------------------------------------------


def _sample_without_kinks(seed):
    """Shrunken float64 net + inputs with margin from every kink.

    Margins guard the leaky-ReLU corners, the pair-distance hinge, and
    the |z| band boundaries so central differences stay one-sided.
    """
    margin = 1e-3
    pair_args = dict(m=1.0, alpha=0.1, beta=0.05, p=0.2, q=0.05)
    for attempt in range(50):
        rng = np.random.default_rng([seed, attempt])
        params = tiny_params(seed=seed + 1000 * attempt, dtype=np.float64)
        x = rng.standard_normal((4, 16, 9))
        labels = np.array([0, 1, 2, 1])
        y = np.array([0.0, 1.0])
        h, cache = net.forward_latent(params, x)
        pre_ok = all(np.abs(layer["pre"]).min() > margin
                     for layer in cache["layers"])
        pre_ok = pre_ok and np.abs(cache["fc_pre"]).min() > margin
        z = net.forward_projection(params, h)
        z1, z2 = z[:2], z[2:]
        dist = np.sqrt(np.sum((z1 - z2) ** 2, axis=1))
        z_ok = (np.abs(z).min() > margin / 10
                and np.abs(np.abs(z) - pair_args["p"]).min() > margin / 10
                and np.abs(np.abs(z) - pair_args["q"]).min() > margin / 10
                and dist.min() > margin
                and np.abs(pair_args["m"] - dist).min() > margin)
        if pre_ok and z_ok:
            return params, x, labels, y, pair_args
    raise AssertionError("could not sample a kink-free configuration")


def _spread_points(rng, params, names, total):
    points = []
    per = math.ceil(total / len(names))
    for name in names:
        size = params[name].size
        take = min(per, size)
        for idx in rng.choice(size, size=take, replace=False):
            points.append((name, int(idx)))
    return points[:total]


def test_criterion_1_gradient_oracle():
    started = time.perf_counter()
    params, x, labels, y, pair_args = _sample_without_kinks(17)
    rng = np.random.default_rng(99)

    def ce_loss(p):
        h, _ = net.forward_latent(p, x)
        return net.loss_crossentropy(net.forward_softmax(p, h), labels)[0]

    h, cache = net.forward_latent(params, x)
    probs = net.forward_softmax(params, h)
    _, dlogits = net.loss_crossentropy(probs, labels)
    head, dh = net.softmax_backward(params, h, dlogits)
    ce_grads = net.backward_latent(params, cache, dh)
    ce_grads.update(head)

    ce_names = [n for n in params.names() if not n.startswith("proj_")]
    worst = 0.0
    for name, idx in _spread_points(rng, params, ce_names, 50):
        flat = params.tensors[name].ravel()
        old = flat[idx]
        eps = 1e-6 * max(1.0, abs(old))
        flat[idx] = old + eps
        lp = ce_loss(params)
        flat[idx] = old - eps
        lm = ce_loss(params)
        flat[idx] = old
        fd = (lp - lm) / (2 * eps)
        rel = relative_error(fd, ce_grads[name].ravel()[idx])
        worst = max(worst, rel)
        assert rel < 1e-4, f"cross-entropy grad of {name}[{idx}]: rel err {rel:.2e}"

    def pw_loss(p):
        hh, _ = net.forward_latent(p, x)
        zz = net.forward_projection(p, hh)
        return net.loss_pairwise(zz[:2], zz[2:], y, **pair_args)[0]

    h, cache = net.forward_latent(params, x)
    z = net.forward_projection(params, h)
    _, dz1, dz2 = net.loss_pairwise(z[:2], z[2:], y, **pair_args)
    pg, dh = net.projection_backward(params, h, np.concatenate([dz1, dz2]))
    pw_grads = net.backward_latent(params, cache, dh)
    pw_grads.update(pg)

    pw_names = [n for n in params.names() if not n.startswith("softmax_")]
    for name, idx in _spread_points(rng, params, pw_names, 50):
        flat = params.tensors[name].ravel()
        old = flat[idx]
        eps = 1e-6 * max(1.0, abs(old))
        flat[idx] = old + eps
        lp = pw_loss(params)
        flat[idx] = old - eps
        lm = pw_loss(params)
        flat[idx] = old
        fd = (lp - lm) / (2 * eps)
        rel = relative_error(fd, pw_grads[name].ravel()[idx])
        worst = max(worst, rel)
        assert rel < 1e-4, f"pairwise grad of {name}[{idx}]: rel err {rel:.2e}"

    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    print(f"ACCEPTANCE 1 gradient-oracle: PASS "
          f"(worst rel err {worst:.2e}, {elapsed:.1f}s)")


# --- criterion 2: loss unit values ------------------------------------------


def test_criterion_2_loss_unit_values():
    assert net.regularizer_P(np.array([11.0, 0.0]), 10.0) == 1.0
    assert net.regularizer_Q(np.zeros(16), 5.0) == 80.0
    z = np.full(16, 7.0)
    loss0, _, _ = net.loss_pairwise(z, z, 0, m=40.0, alpha=0.1, beta=0.1, p=10.0, q=5.0)
    assert loss0 == 0.0
    loss1, _, _ = net.loss_pairwise(z, z, 1, m=40.0, alpha=0.1, beta=0.1, p=10.0, q=5.0)
    assert loss1 == 40.0
    print("ACCEPTANCE 2 loss-unit-values: PASS (P=1, Q=80, L0=0, L1=m)")


# --- criterion 3: DTW oracle -------------------------------------------------


def test_criterion_3_dtw_oracle():
    rng = np.random.default_rng(1234)
    for trial in range(100):
        n, m = rng.integers(2, 9, size=2)
        a = rng.standard_normal((n, 9))
        b = rng.standard_normal((m, 9))
        dp = dtw_cost(a, b)
        brute = brute_force_cost(a, b)
        assert dp == brute, f"trial {trial}: {dp} != {brute}"
    print("ACCEPTANCE 3 dtw-oracle: PASS (100 exact matches, lengths <= 8)")


# --- criterion 4: Hamming ball and probe count -------------------------------


def test_criterion_4_hamming_ball_and_probes():
    code = np.ones(16, dtype=np.int8)
    sizes = [len(hamming_ball(code, l)) for l in (0, 1, 2)]
    assert sizes == [1, 17, 137]

    rng = np.random.default_rng(5)
    for n_accounts in (10, 1000):
        db = AccountDatabase(16)
        for i in range(n_accounts):
            c = np.where(rng.standard_normal(16) < 0, -1, 1).astype(np.int8)
            db.add_record(AccountRecord(id=i, code=c,
                                        latent=rng.standard_normal(512).astype(np.float32)))
        for l, expected in ((0, 1), (1, 17), (2, 137)):
            res = db.lookup(np.ones(16, dtype=np.int8), rng.standard_normal(512), l)
            assert res.probes == expected
    print("ACCEPTANCE 4 hamming-ball: PASS (|S|=1/17/137; probes invariant at 10 and 1000 accounts)")


# --- criterion 5: index/scan equivalence -------------------------------------


def test_criterion_5_index_scan_equivalence(endtoend):
    result = endtoend["results"][0]
    params, db = result.params, result.db
    processed = endtoend["processed"]

    # 500 queries: the 250 test signals plus 250 fresh instances with
    # stronger jitter for near-miss coverage
    queries = [processed.test.reshape(-1, 256, 9)]
    hard = Jitter(warp=0.2, noise=0.15, amp=0.1)
    extra = []
    for account_id in range(50):
        tpl = generate_template(DATASET_SEED, account_id)
        for k in range(5):
            raw = sample_instance(tpl, [DATASET_SEED, account_id, 1000 + k], hard)
            extra.append(preprocess(raw))
    queries.append(np.asarray(extra, dtype=np.float32))
    signals = np.concatenate(queries)
    assert signals.shape[0] == 500

    codes, latents = query_batch(params, signals)
    checked = 0
    for i in range(500):
        for l in (0, 1, 2):
            fast = db.lookup(codes[i], latents[i], l)
            slow = db.scan(codes[i], latents[i], l)
            assert fast.account_id == slow.account_id
            assert fast.candidates_examined == slow.candidates_examined
            checked += 1
    print(f"ACCEPTANCE 5 index-scan-equivalence: PASS ({checked} lookups agree)")


# --- criterion 6: shape contract ---------------------------------------------


def test_criterion_6_shape_contract():
    for bits in (16, 32, 48, 64):
        params = net.init_params(np.random.default_rng(0), bits, 200)
        _, cache = net.forward_latent(params, np.zeros((1, 256, 9), dtype=np.float32))
        assert cache["trace"] == [(128, 48), (64, 96), (32, 128), (16, 192),
                                  (8, 256), (512,)]
        assert params.count("conv1") == 1344
        assert params.count("fc") == 1_049_088
        assert params.count("proj") == 512 * bits + bits
        z = net.forward_projection(params, np.zeros((1, 512), dtype=np.float32))
        assert z.shape == (1, bits)
    print("ACCEPTANCE 6 shape-contract: PASS (B in {16,32,48,64})")


# --- criterion 7: end-to-end synthetic run -----------------------------------


def test_criterion_7_end_to_end(endtoend):
    avg = endtoend["averages"]
    wall = endtoend["wall"]
    l0 = avg[0]
    l2 = avg[2]
    sep = avg["separated_3bit_fraction"]
    of = avg["bit_one_fraction"]

    assert l0["avg_precision"] >= 0.95, f"l=0 precision {l0['avg_precision']:.4f}"
    assert l0["avg_recall"] >= 0.85, f"l=0 recall {l0['avg_recall']:.4f}"
    assert l2["fail_rate"] <= 0.05, f"l=2 fail rate {l2['fail_rate']:.4f}"
    assert sep >= 0.95, f"3-bit separation fraction {sep:.4f}"
    assert np.all(of >= 0.2) and np.all(of <= 0.8), f"bit one-fraction {of}"
    assert wall < 600.0, f"wall time {wall:.0f}s"

    # training sanity on every run: pretraining beats the uniform loss,
    # pairwise loss decreases from the first 100 to the last 100 iterations
    pre_iters = E2E_CONFIG.pretrain_iters
    for result in endtoend["results"]:
        losses = [e[1] for e in result.log.entries]
        assert losses[pre_iters - 1] < math.log(50)
        pairwise = losses[pre_iters:]
        assert np.mean(pairwise[-100:]) < np.mean(pairwise[:100])
    print(f"ACCEPTANCE 7 end-to-end: PASS (precision {l0['avg_precision']:.4f}, "
          f"recall {l0['avg_recall']:.4f}, l2 fail {l2['fail_rate']:.4f}, "
          f"sep3 {sep:.3f}, one-frac [{of.min():.2f},{of.max():.2f}], {wall:.0f}s)")


# --- criterion 8: beta schedule and protocol counts --------------------------


def test_criterion_8_beta_schedule_and_protocol_counts():
    cfg = TrainConfig()
    assert beta_at(0, cfg) == 1e-4
    assert beta_at(1999, cfg) == 1e-4
    assert beta_at(2000, cfg) == 1e-3
    assert beta_at(4000, cfg) == 1e-2
    assert beta_at(6000, cfg) == 1e-1
    assert beta_at(9999, cfg) == 1e-1

    # full default protocol length on the reduced architecture
    ts = tiny_training_set(np.random.default_rng(0), n_accounts=2, k=2, pool=4)
    spec = tiny_spec(dtype=np.float32, hash_bits=4, n_classes=2)
    cfg = TrainConfig(hash_bits=4, pair_count=2, pretrain_iters=1000,
                      pairwise_iters=10000, beta_every=2000, mine_refresh=20,
                      augment_target=4, seed=0)
    params, log = train_full(ts, cfg, spec=spec)
    assert len(log.entries) == 11000
    assert log.code_refreshes == 500
    betas = [entry[2] for entry in log.entries[1000:]]
    assert betas[0] == 1e-4 and betas[2000] == 1e-3 and betas[-1] == 1e-1
    assert all(e[2] == 0.0 for e in log.entries[:1000])
    print("ACCEPTANCE 8 protocol-counts: PASS (11000 log lines, 500 code refreshes, "
          "beta boundaries exact)")


# --- criterion 9: determinism ------------------------------------------------


def test_criterion_9_determinism(tmp_path):
    params = SynthParams(n_accounts=6, k_train=3, k_test=2, seed=21)
    cfg = TrainConfig(hash_bits=16, pair_count=4, pretrain_iters=40,
                      pairwise_iters=80, beta_every=16, mine_refresh=10,
                      augment_target=9, seed=3)

    digests = []
    for run in ("a", "b"):
        processed = preprocess_dataset(generate_dataset(params))
        result = run_experiment(processed, cfg)
        outdir = tmp_path / run
        outdir.mkdir()
        save_model(outdir / "model.fmh", result.params)
        save_database(outdir / "accounts.fmdb", result.db)
        write_report(result.report, outdir / "report")
        files = sorted(p.relative_to(outdir) for p in outdir.rglob("*") if p.is_file())
        digests.append({str(rel): (outdir / rel).read_bytes() for rel in files})

    assert digests[0].keys() == digests[1].keys()
    for name in digests[0]:
        assert digests[0][name] == digests[1][name], f"{name} differs between runs"
    print(f"ACCEPTANCE 9 determinism: PASS ({len(digests[0])} artifacts bit-identical)")
