"""Command-line entry point.

Subcommands cover the full pipeline: synth, preprocess, augment, train,
enroll, identify, evaluate, stats. Every command is deterministic given
its flags. Exit codes: 0 ok, 1 identification miss, 2 usage, 3 data
error, 4 numeric fault.

Heavy imports happen inside the command functions so --threads can pin
the BLAS thread pool before numpy loads.
"""

import argparse
import json
import os
import sys


class UsageError(Exception):
    pass


def _int_at_least(minimum):
    def parse(text):
        value = int(text)
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}")
        return value
    return parse


def _nonneg_float(text):
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


def _tolerances(text):
    try:
        values = [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated ints") from None
    if not values or any(v < 0 for v in values):
        raise argparse.ArgumentTypeError("tolerances must be >= 0")
    return values


TRAIN_KEYS = ("hash_bits", "pretrain_iters", "pairwise_iters", "pairs", "lr", "seed",
              "augment_target", "beta_every", "p", "q", "m", "alpha", "mine_refresh")

TRAIN_DEFAULTS = {
    "hash_bits": 16, "pretrain_iters": 1000, "pairwise_iters": 10000, "pairs": 200,
    "lr": 1e-3, "seed": 0, "augment_target": 125, "beta_every": 2000,
    "p": 10.0, "q": 5.0, "m": None, "alpha": 0.1, "mine_refresh": 20,
}


def _add_train_flags(sub):
    sub.add_argument("--config", help="JSON file with training keys; flags override it")
    sub.add_argument("--hash-bits", dest="hash_bits", type=int,
                     help="code size B (default 16)")
    sub.add_argument("--pretrain-iters", dest="pretrain_iters", type=_int_at_least(1),
                     help="softmax pretraining iterations (default 1000)")
    sub.add_argument("--pairwise-iters", dest="pairwise_iters", type=_int_at_least(1),
                     help="pairwise training iterations (default 10000)")
    sub.add_argument("--pairs", dest="pairs", type=_int_at_least(1),
                     help="M: batch holds 2M pairs, M per class (default 200)")
    sub.add_argument("--lr", type=_nonneg_float, help="Adam learning rate (default 0.001)")
    sub.add_argument("--seed", type=int, help="training seed (default 0)")
    sub.add_argument("--augment-target", dest="augment_target", type=_int_at_least(2),
                     help="training signals per account after expansion (default 125)")
    sub.add_argument("--beta-every", dest="beta_every", type=_int_at_least(1),
                     help="iterations per inner-band weight step (default 2000)")
    sub.add_argument("--p", type=_nonneg_float, help="outer band bound (default 10)")
    sub.add_argument("--q", type=_nonneg_float, help="inner band bound (default 5)")
    sub.add_argument("--m", type=_nonneg_float,
                     help="pair margin (default p*sqrt(hash_bits))")
    sub.add_argument("--alpha", type=_nonneg_float,
                     help="outer band weight (default 0.1)")
    sub.add_argument("--mine-refresh", dest="mine_refresh", type=_int_at_least(1),
                     help="iterations between account-code recomputes (default 20)")


def _train_config(args):
    from .training import TrainConfig

    values = dict(TRAIN_DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(TRAIN_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for key in TRAIN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return TrainConfig(
        hash_bits=values["hash_bits"], p=values["p"], q=values["q"], m=values["m"],
        alpha=values["alpha"], beta_every=values["beta_every"], lr=values["lr"],
        pair_count=values["pairs"], pretrain_iters=values["pretrain_iters"],
        pairwise_iters=values["pairwise_iters"], mine_refresh=values["mine_refresh"],
        augment_target=values["augment_target"], seed=values["seed"],
    )


def cmd_synth(args):
    from .synth import Jitter, SynthParams, generate_dataset, write_dataset

    params = SynthParams(
        n_accounts=args.accounts, k_train=args.k_train, k_test=args.k_test,
        seed=args.seed,
        jitter=Jitter(warp=args.jitter_warp, noise=args.jitter_noise, amp=args.jitter_amp),
    )
    dataset = generate_dataset(params)
    write_dataset(dataset, args.out)
    n_signals = args.accounts * (args.k_train + args.k_test)
    print(f"wrote {args.accounts} accounts, {n_signals} signals to {args.out}")
    return 0


def cmd_preprocess(args):
    from .preprocessing import preprocess, read_raw_signal, write_processed_signal

    data = preprocess(read_raw_signal(args.input))
    write_processed_signal(args.output, data)
    print(f"wrote {data.shape[0]}x{data.shape[1]} processed signal to {args.output}")
    return 0


def cmd_augment(args):
    import numpy as np

    from .augment import augment_account
    from .preprocessing import preprocess, write_processed_signal
    from .synth import load_dataset

    dataset = load_dataset(args.dataset)
    accounts = dataset.accounts
    if args.account is not None:
        accounts = [a for a in accounts if a.id == args.account]
        if not accounts:
            raise UsageError(f"account {args.account} not in dataset")
    total = 0
    for acc in accounts:
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, acc.id]))
        signals = [preprocess(sig) for sig in acc.train]
        outdir = os.path.join(args.out, str(acc.id))
        os.makedirs(outdir, exist_ok=True)
        for k, sig in enumerate(augment_account(signals, args.target, rng)):
            write_processed_signal(os.path.join(outdir, f"{k}.txt"), sig)
            total += 1
    print(f"wrote {total} augmented signals to {args.out}")
    return 0


def cmd_train(args):
    from .experiment import build_training_set, preprocess_dataset
    from .network import save_model
    from .synth import load_dataset
    from .training import train_full

    config = _train_config(args)
    processed = preprocess_dataset(load_dataset(args.dataset))
    training_set = build_training_set(processed, config.augment_target, config.seed)
    params, log = train_full(training_set, config,
                             checkpoint_dir=args.checkpoint_dir,
                             checkpoint_every=args.checkpoint_every)
    save_model(args.model_out, params)
    if args.log_out:
        log.write(args.log_out)
    final = log.entries[-1]
    print(f"trained {len(log.entries)} iterations, final loss {final[1]:.6f}; "
          f"model written to {args.model_out}")
    return 0


def cmd_enroll(args):
    from .database import save_database
    from .experiment import enroll_all, preprocess_dataset
    from .network import load_model
    from .synth import load_dataset

    params = load_model(args.model)
    processed = preprocess_dataset(load_dataset(args.dataset))
    db = enroll_all(params, processed)
    save_database(args.db_out, db)
    print(f"enrolled {len(db)} accounts into {args.db_out}")
    return 0


def cmd_identify(args):
    from .database import identify, load_database
    from .errors import FormatError
    from .network import load_model
    from .preprocessing import preprocess, read_raw_signal

    params = load_model(args.model)
    db = load_database(args.db)
    if db.hash_bits != params.spec.hash_bits:
        raise FormatError(f"model B={params.spec.hash_bits} but database B={db.hash_bits}")
    x = preprocess(read_raw_signal(args.signal))
    result = identify(params, db, x, args.tolerance)
    if result.identified:
        print(result.account_id)
        return 0
    print("NOIDENT")
    return 1


def cmd_evaluate(args):
    from .database import load_database
    from .errors import FormatError
    from .evaluation import build_report, format_report, write_report
    from .experiment import preprocess_dataset, run_repeated
    from .network import load_model
    from .synth import load_dataset

    processed = preprocess_dataset(load_dataset(args.dataset))
    if args.repeat:
        config = _train_config(args)
        results, averages = run_repeated(processed, config, args.repeat,
                                         tuple(args.tolerances))
        os.makedirs(args.out, exist_ok=True)
        for r, res in enumerate(results):
            write_report(res.report, os.path.join(args.out, f"run{r}"))
        with open(os.path.join(args.out, "averages.txt"), "w") as fh:
            for l in args.tolerances:
                a = averages[l]
                fh.write(f"tolerance {l}: precision {a['avg_precision']:.6f} "
                         f"recall {a['avg_recall']:.6f} miss_rate {a['miss_rate']:.6f} "
                         f"fail_rate {a['fail_rate']:.6f}\n")
            fh.write(f"separated_3bit_fraction {averages['separated_3bit_fraction']:.6f}\n")
        print(f"wrote {args.repeat} run reports and averages to {args.out}")
        return 0

    if not (args.model and args.db):
        raise UsageError("evaluate needs --model and --db (or --repeat R)")
    params = load_model(args.model)
    db = load_database(args.db)
    if db.hash_bits != params.spec.hash_bits:
        raise FormatError(f"model B={params.spec.hash_bits} but database B={db.hash_bits}")
    report = build_report(params, db, processed.account_ids, processed.test,
                          tuple(args.tolerances))
    write_report(report, args.out)
    print(format_report(report), end="")
    return 0


def cmd_stats(args):
    import numpy as np

    from .database import load_database
    from .evaluation import account_pair_distances, bit_statistics, separated_fraction

    db = load_database(args.db)
    one_fraction, corr = bit_statistics(db)
    dist, summary = account_pair_distances(db)
    iu = np.triu_indices(corr.shape[0], k=1)
    print(f"accounts {len(db)} hash_bits {db.hash_bits}")
    print("bit one-fraction: " + " ".join(f"{v:.3f}" for v in one_fraction))
    print(f"max |off-diagonal bit correlation|: {np.abs(corr[iu]).max():.4f}")
    print(f"pair distance min {summary['min']} mean {summary['mean']:.3f} "
          f"max {summary['max']}")
    print(f"separated_3bit_fraction {separated_fraction(dist):.6f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="motionhash",
        description="Binary fuzzy hashing of in-air-handwriting for user identification.",
    )
    parser.add_argument("--threads", type=_int_at_least(1), default=None,
                        help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--accounts", type=_int_at_least(2), required=True,
                   help="number of accounts (>= 2)")
    s.add_argument("--k-train", dest="k_train", type=_int_at_least(2), default=5,
                   help="registration signals per account")
    s.add_argument("--k-test", dest="k_test", type=_int_at_least(0), default=5,
                   help="test signals per account")
    s.add_argument("--seed", type=int, default=0, help="dataset seed")
    s.add_argument("--jitter-warp", dest="jitter_warp", type=_nonneg_float, default=0.1,
                   help="time-warp strength")
    s.add_argument("--jitter-noise", dest="jitter_noise", type=_nonneg_float, default=0.05,
                   help="smooth noise std relative to signal std")
    s.add_argument("--jitter-amp", dest="jitter_amp", type=_nonneg_float, default=0.05,
                   help="per-axis amplitude jitter std")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", help="raw signal file -> processed signal file")
    s.add_argument("--input", required=True, help="raw signal file (t x y z per line)")
    s.add_argument("--output", required=True, help="processed signal file (256 x 9)")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("augment", help="dump augmented training signals (debugging)",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--dataset", required=True, help="dataset directory")
    s.add_argument("--account", type=int, default=None,
                   help="restrict to one account id (default: all)")
    s.add_argument("--target", type=_int_at_least(2), default=125,
                   help="signals per account after expansion")
    s.add_argument("--seed", type=int, default=0, help="augmentation seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train a model on a dataset's train split")
    s.add_argument("--dataset", required=True, help="dataset directory")
    s.add_argument("--model-out", dest="model_out", required=True,
                   help="output model file")
    s.add_argument("--log-out", dest="log_out", default=None,
                   help="training log file: `iter loss beta collisions` per line")
    s.add_argument("--checkpoint-dir", dest="checkpoint_dir", default=None,
                   help="directory for periodic model snapshots")
    s.add_argument("--checkpoint-every", dest="checkpoint_every",
                   type=_int_at_least(1), default=None,
                   help="iterations between snapshots (needs --checkpoint-dir)")
    _add_train_flags(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("enroll", help="build an account database from the train split")
    s.add_argument("--dataset", required=True, help="dataset directory")
    s.add_argument("--model", required=True, help="trained model file")
    s.add_argument("--db-out", dest="db_out", required=True, help="output database file")
    s.set_defaults(func=cmd_enroll)

    s = sub.add_parser("identify", help="identify one raw signal file",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    s.add_argument("--model", required=True, help="trained model file")
    s.add_argument("--db", required=True, help="account database file")
    s.add_argument("--signal", required=True, help="raw signal file")
    s.add_argument("--tolerance", type=_int_at_least(0), default=2,
                   help="Hamming search tolerance l")
    s.set_defaults(func=cmd_identify)

    s = sub.add_parser("evaluate", help="full evaluation report on the test split")
    s.add_argument("--dataset", required=True, help="dataset directory")
    s.add_argument("--model", default=None, help="trained model file")
    s.add_argument("--db", default=None, help="account database file")
    s.add_argument("--tolerances", type=_tolerances, default=[0, 1, 2],
                   help="comma-separated tolerance list (default 0,1,2)")
    s.add_argument("--out", required=True, help="report output directory")
    s.add_argument("--repeat", type=_int_at_least(1), default=None,
                   help="retrain R times (seeds seed..seed+R-1) and average")
    _add_train_flags(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("stats", help="hash-code statistics of a database")
    s.add_argument("--db", required=True, help="account database file")
    s.set_defaults(func=cmd_stats)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .errors import DataError, NumericError

    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"usage error: bad config file: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
