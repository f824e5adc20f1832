"""Account store indexed by hash code, with tolerance-l identification.

Enrollment averages the latent vectors of an account's registration
signals and quantizes the projection of that mean. Identification probes
the hash table once per code in the Hamming ball around the query code,
then reranks the candidate accounts by latent-space distance. The probe
count depends only on the ball size, never on how many accounts exist.
"""

import struct
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import network
from .errors import DuplicateId, EmptyDatabase, FormatError, UnknownId

DB_MAGIC = b"FMDB1"
LATENT_DIM = 512


@dataclass
class AccountRecord:
    id: int
    code: np.ndarray      # (B,) int8 in {-1, +1}
    latent: np.ndarray    # (latent_dim,) float32


@dataclass
class IdentifyResult:
    account_id: int | None
    candidates_examined: int
    probes: int

    @property
    def identified(self) -> bool:
        return self.account_id is not None


def code_key(code: np.ndarray) -> int:
    """Pack a {-1,+1} code into an int (bit j set iff code[j] == +1)."""
    bits = 0
    for j, v in enumerate(code):
        if v > 0:
            bits |= 1 << j
    return bits


def hamming_ball(code: np.ndarray, tolerance: int):
    """All codes within `tolerance` bit flips, by distance then by
    lexicographic flip positions. Size is sum_j C(B, j)."""
    out = [code.copy()]
    positions = range(len(code))
    for dist in range(1, tolerance + 1):
        for flips in combinations(positions, dist):
            flipped = code.copy()
            flipped[list(flips)] *= -1
            out.append(flipped)
    return out


class AccountDatabase:
    def __init__(self, hash_bits: int):
        self.hash_bits = int(hash_bits)
        self.records: dict[int, AccountRecord] = {}
        self._index: dict[int, list[int]] = {}

    def __len__(self):
        return len(self.records)

    def _rebuild_index(self) -> None:
        index: dict[int, list[int]] = {}
        for account_id in sorted(self.records):
            index.setdefault(code_key(self.records[account_id].code), []).append(account_id)
        self._index = index  # single reference swap: readers see old or new, never partial

    def add_record(self, record: AccountRecord) -> None:
        if record.id in self.records:
            raise DuplicateId(f"account {record.id} already enrolled")
        if len(record.code) != self.hash_bits:
            raise FormatError(f"code length {len(record.code)} != B={self.hash_bits}")
        self.records[record.id] = record
        self._index.setdefault(code_key(record.code), []).append(record.id)
        self._index[code_key(record.code)].sort()

    def remove(self, account_id: int) -> None:
        if account_id not in self.records:
            raise UnknownId(f"account {account_id} not enrolled")
        record = self.records.pop(account_id)
        key = code_key(record.code)
        self._index[key].remove(account_id)
        if not self._index[key]:
            del self._index[key]

    def lookup(self, code: np.ndarray, latent: np.ndarray, tolerance: int) -> IdentifyResult:
        """Tolerance-l search of a precomputed (code, latent) query."""
        if not self.records:
            raise EmptyDatabase("no accounts enrolled")
        probes = 0
        candidates: list[int] = []
        seen = set()
        for probe_code in hamming_ball(code, tolerance):
            probes += 1
            for account_id in self._index.get(code_key(probe_code), ()):
                if account_id not in seen:
                    seen.add(account_id)
                    candidates.append(account_id)
        if not candidates:
            return IdentifyResult(account_id=None, candidates_examined=0, probes=probes)
        latent = np.asarray(latent, dtype=np.float64)
        best_id = None
        best_dist = np.inf
        for account_id in sorted(candidates):   # ties resolve to the smallest id
            d = float(np.linalg.norm(self.records[account_id].latent.astype(np.float64) - latent))
            if d < best_dist:
                best_dist = d
                best_id = account_id
        return IdentifyResult(account_id=best_id, candidates_examined=len(candidates),
                              probes=probes)

    def scan(self, code: np.ndarray, latent: np.ndarray, tolerance: int) -> IdentifyResult:
        """Brute-force equivalent of lookup: linear scan over every record,
        filter by code distance, rerank by latent distance."""
        if not self.records:
            raise EmptyDatabase("no accounts enrolled")
        code = np.asarray(code, dtype=np.int32)
        latent = np.asarray(latent, dtype=np.float64)
        candidates = []
        for account_id in sorted(self.records):
            rec = self.records[account_id]
            dist = int(np.sum(rec.code.astype(np.int32) != code))
            if dist <= tolerance:
                candidates.append(account_id)
        if not candidates:
            return IdentifyResult(account_id=None, candidates_examined=0,
                                  probes=len(self.records))
        best_id = None
        best_dist = np.inf
        for account_id in candidates:
            d = float(np.linalg.norm(self.records[account_id].latent.astype(np.float64) - latent))
            if d < best_dist:
                best_dist = d
                best_id = account_id
        return IdentifyResult(account_id=best_id, candidates_examined=len(candidates),
                              probes=len(self.records))


def enroll(params, db: AccountDatabase, account_id: int, signals: np.ndarray) -> AccountRecord:
    """Enroll an account from its K registration signals.

    The latent vectors are averaged first and the mean is projected,
    not the other way around (projection is affine, quantization is not).
    """
    if account_id in db.records:
        raise DuplicateId(f"account {account_id} already enrolled")
    signals = np.asarray(signals)
    if signals.ndim == 2:
        signals = signals[None]
    h, _ = network.forward_latent(params, signals)
    mean_h = h.mean(axis=0)
    code = network.quantize(network.forward_projection(params, mean_h[None])[0])
    record = AccountRecord(id=account_id, code=code,
                           latent=mean_h.astype(np.float32))
    db.add_record(record)
    return record


def query_signal(params, x: np.ndarray):
    """(code, latent) of one processed signal."""
    h, _ = network.forward_latent(params, x)
    z = network.forward_projection(params, h)
    return network.quantize(z[0]), h[0]


def identify(params, db: AccountDatabase, x: np.ndarray, tolerance: int) -> IdentifyResult:
    """Full identification of one processed signal."""
    code, latent = query_signal(params, x)
    return db.lookup(code, latent, tolerance)


def save_database(path, db: AccountDatabase) -> None:
    with open(path, "wb") as fh:
        fh.write(DB_MAGIC)
        fh.write(struct.pack("<II", db.hash_bits, len(db.records)))
        packed_len = (db.hash_bits + 7) // 8
        for account_id in sorted(db.records):
            rec = db.records[account_id]
            if rec.latent.shape != (LATENT_DIM,):
                raise FormatError(f"database file stores {LATENT_DIM}-dim latents, "
                                  f"got {rec.latent.shape}")
            fh.write(struct.pack("<q", account_id))
            fh.write(code_key(rec.code).to_bytes(packed_len, "little"))
            fh.write(np.ascontiguousarray(rec.latent, dtype="<f4").tobytes())


def load_database(path) -> AccountDatabase:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != DB_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {DB_MAGIC!r}")
        hash_bits, count = struct.unpack("<II", fh.read(8))
        db = AccountDatabase(hash_bits)
        packed_len = (hash_bits + 7) // 8
        for _ in range(count):
            (account_id,) = struct.unpack("<q", fh.read(8))
            bits = int.from_bytes(fh.read(packed_len), "little")
            code = np.array([1 if bits & (1 << j) else -1 for j in range(hash_bits)],
                            dtype=np.int8)
            latent = np.frombuffer(fh.read(4 * LATENT_DIM), dtype="<f4").astype(np.float32)
            db.add_record(AccountRecord(id=account_id, code=code, latent=latent))
    return db
