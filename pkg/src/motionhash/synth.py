"""Reproducible synthetic accounts: smooth 3D pseudo-handwriting.

Each account owns a template trajectory (a sum of random sinusoids per
axis). Instances of an account are the template re-sampled through a
smooth monotone time warp plus amplitude jitter and low-pass additive
noise, imitating the small variations between repetitions of the same
writing. Everything is a pure function of integer seeds.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .dtw import dtw_cost
from .errors import DataError, SeparationUnreachable
from .preprocessing import RawSignal, amplitude_normalize, read_raw_signal, write_raw_signal

SAMPLE_RATE_HZ = 110.0
SINUSOIDS_PER_AXIS = 4
FREQ_RANGE = (0.5, 6.0)        # cycles per signal
DURATION_RANGE = (3.0, 8.0)    # seconds
SEPARATION_POINTS = 64         # template signature length for the DTW gate
DEFAULT_SEPARATION = 30.0      # minimum inter-template DTW distance
MAX_REJECTIONS = 100


@dataclass
class Jitter:
    """Instance-level variation strengths (all >= 0).

    warp: monotone time-warp strength.
    noise: additive smooth-noise std, relative to per-axis signal std.
    amp: per-axis amplitude scaling std.
    """

    warp: float = 0.1
    noise: float = 0.05
    amp: float = 0.05

    def __post_init__(self):
        if min(self.warp, self.noise, self.amp) < 0:
            raise DataError("jitter levels must be >= 0")

    @classmethod
    def none(cls):
        return cls(0.0, 0.0, 0.0)


@dataclass
class SynthParams:
    n_accounts: int
    k_train: int = 5
    k_test: int = 5
    seed: int = 0
    jitter: Jitter = field(default_factory=Jitter)

    def __post_init__(self):
        if self.n_accounts < 2:
            raise DataError("need at least 2 accounts")
        if self.k_train < 2:
            raise DataError("need at least 2 registration signals per account")
        if self.k_test < 0:
            raise DataError("k_test must be >= 0")


@dataclass
class AccountTemplate:
    id: int
    duration: float
    amps: np.ndarray    # (SINUSOIDS_PER_AXIS, 3)
    freqs: np.ndarray   # cycles per signal
    phases: np.ndarray

    def positions(self, u: np.ndarray) -> np.ndarray:
        """Evaluate the template at normalized time u in [0, 1] -> (len(u), 3)."""
        phase = 2.0 * np.pi * self.freqs[None, :, :] * u[:, None, None] + self.phases[None, :, :]
        return np.sum(self.amps[None, :, :] * np.sin(phase), axis=1)

    def signature(self) -> np.ndarray:
        """Standardized fixed-length curve used for separation checks."""
        u = np.linspace(0.0, 1.0, SEPARATION_POINTS)
        return amplitude_normalize(self.positions(u))


def template_distance(a: AccountTemplate, b: AccountTemplate) -> float:
    return dtw_cost(a.signature(), b.signature())


def _candidate(seed: int, account_id: int, attempt: int) -> AccountTemplate:
    rng = np.random.default_rng(np.random.SeedSequence([seed, account_id, attempt]))
    duration = rng.uniform(*DURATION_RANGE)
    amps = rng.uniform(0.3, 1.0, size=(SINUSOIDS_PER_AXIS, 3))
    freqs = rng.uniform(*FREQ_RANGE, size=(SINUSOIDS_PER_AXIS, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(SINUSOIDS_PER_AXIS, 3))
    return AccountTemplate(id=account_id, duration=duration, amps=amps, freqs=freqs, phases=phases)


def generate_templates(seed: int, n: int, separation: float = DEFAULT_SEPARATION):
    """Generate n templates, rejection-resampling any that land closer
    than `separation` (DTW on standardized signatures) to an earlier one."""
    accepted: list[AccountTemplate] = []
    signatures: list[np.ndarray] = []
    for account_id in range(n):
        for attempt in range(MAX_REJECTIONS):
            cand = _candidate(seed, account_id, attempt)
            sig = cand.signature()
            if all(dtw_cost(sig, s) >= separation for s in signatures):
                accepted.append(cand)
                signatures.append(sig)
                break
        else:
            raise SeparationUnreachable(
                f"no template for account {account_id} after {MAX_REJECTIONS} attempts"
            )
    return accepted


def generate_template(seed: int, account_id: int, separation: float = DEFAULT_SEPARATION) -> AccountTemplate:
    """Template for one account (deterministic in (seed, id))."""
    return generate_templates(seed, account_id + 1, separation)[-1]


def sample_instance(template: AccountTemplate, instance_seed, jitter: Jitter) -> RawSignal:
    """One noisy writing of the template, sampled at 110 Hz.

    All random draws happen in a fixed order regardless of the jitter
    strengths, so sweeping one strength with a fixed instance_seed keeps
    the other variation sources paired.
    """
    rng = np.random.default_rng(np.random.SeedSequence(instance_seed))
    n = int(round(template.duration * SAMPLE_RATE_HZ)) + 1
    t = np.arange(n) / SAMPLE_RATE_HZ
    u = t / t[-1]

    warp_coef = rng.uniform(-1.0, 1.0, size=3)
    axis_eps = rng.standard_normal(3)
    knots = rng.standard_normal((16, 3))

    # Monotone warp: u + w * sum_k c_k sin(pi k u), coefficients scaled so
    # the derivative stays positive for any w < 1.25.
    k = np.arange(1, 4)
    denom = np.pi * np.sum(k * np.abs(warp_coef))
    if denom > 0 and jitter.warp > 0:
        scale = 0.8 / denom
        tau = u + jitter.warp * scale * np.sin(np.pi * np.outer(u, k)) @ warp_coef
    else:
        tau = u
    pos = template.positions(tau)

    axis_scale = np.maximum(0.1, 1.0 + jitter.amp * axis_eps)
    pos = pos * axis_scale

    if jitter.noise > 0:
        knot_u = np.linspace(0.0, 1.0, knots.shape[0])
        smooth = np.empty((n, 3))
        for a in range(3):
            smooth[:, a] = np.interp(u, knot_u, knots[:, a])
        std = smooth.std(axis=0)
        std[std < 1e-12] = 1.0
        smooth /= std
        pos = pos + smooth * (jitter.noise * pos.std(axis=0))

    return RawSignal(t=t, pos=pos)


@dataclass
class RawAccount:
    id: int
    train: list
    test: list


@dataclass
class RawDataset:
    params: SynthParams
    accounts: list


def generate_dataset(params: SynthParams) -> RawDataset:
    """n_accounts x (k_train + k_test) raw signals, deterministic in params."""
    templates = generate_templates(params.seed, params.n_accounts)
    accounts = []
    for tpl in templates:
        train = [
            sample_instance(tpl, [params.seed, tpl.id, k], params.jitter)
            for k in range(params.k_train)
        ]
        test = [
            sample_instance(tpl, [params.seed, tpl.id, params.k_train + k], params.jitter)
            for k in range(params.k_test)
        ]
        accounts.append(RawAccount(id=tpl.id, train=train, test=test))
    return RawDataset(params=params, accounts=accounts)


def write_dataset(dataset: RawDataset, root) -> None:
    os.makedirs(root, exist_ok=True)
    p = dataset.params
    with open(os.path.join(root, "manifest.txt"), "w") as fh:
        fh.write(f"n_accounts {p.n_accounts}\n")
        fh.write(f"k_train {p.k_train}\n")
        fh.write(f"k_test {p.k_test}\n")
        fh.write(f"seed {p.seed}\n")
        fh.write(f"jitter_warp {p.jitter.warp:.9g}\n")
        fh.write(f"jitter_noise {p.jitter.noise:.9g}\n")
        fh.write(f"jitter_amp {p.jitter.amp:.9g}\n")
    for acc in dataset.accounts:
        for split, signals in (("train", acc.train), ("test", acc.test)):
            d = os.path.join(root, str(acc.id), split)
            os.makedirs(d, exist_ok=True)
            for k, sig in enumerate(signals):
                write_raw_signal(os.path.join(d, f"{k}.txt"), sig)


def _read_manifest(root) -> dict:
    values = {}
    path = os.path.join(root, "manifest.txt")
    if os.path.exists(path):
        with open(path) as fh:
            for line in fh:
                fields = line.split()
                if len(fields) == 2:
                    values[fields[0]] = fields[1]
    return values


def load_dataset(root) -> RawDataset:
    """Read a dataset tree written by write_dataset."""
    ids = sorted(
        int(name) for name in os.listdir(root)
        if os.path.isdir(os.path.join(root, name)) and name.isdigit()
    )
    if not ids:
        raise DataError(f"{root}: no account directories")
    accounts = []
    for account_id in ids:
        signals = {}
        for split in ("train", "test"):
            d = os.path.join(root, str(account_id), split)
            if not os.path.isdir(d):
                signals[split] = []
                continue
            names = sorted(
                (f for f in os.listdir(d) if f.endswith(".txt")),
                key=lambda f: int(os.path.splitext(f)[0]),
            )
            signals[split] = [read_raw_signal(os.path.join(d, f)) for f in names]
        if len(signals["train"]) < 2:
            raise DataError(f"account {account_id}: needs >= 2 registration signals")
        accounts.append(RawAccount(id=account_id, train=signals["train"], test=signals["test"]))
    manifest = _read_manifest(root)
    jitter = Jitter(warp=float(manifest.get("jitter_warp", 0.1)),
                    noise=float(manifest.get("jitter_noise", 0.05)),
                    amp=float(manifest.get("jitter_amp", 0.05)))
    params = SynthParams(n_accounts=len(ids), k_train=len(accounts[0].train),
                         k_test=len(accounts[0].test),
                         seed=int(manifest.get("seed", 0)), jitter=jitter)
    return RawDataset(params=params, accounts=accounts)
