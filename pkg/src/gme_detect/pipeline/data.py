"""Labeled datasets: generation, the GMED container, and stratified splits.

Container layout (little-endian)::

    b"GMED" | u32 version | u8 kind | u16 n_qubits | u64 count | u64 length
    then per sample: i8 label | u8 marginal | f64[length] features

Labels are -1 (genuinely entangled) and +1 (not detected).
"""

from __future__ import annotations

import logging
import struct
from collections.abc import Callable, Iterator
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from ..featurize import DENSE, GHZ_DIAGONAL, feature_length, featurize_dense, featurize_ghz_diagonal
from ..gmn_oracle import ENTANGLED, LABEL_THRESHOLD, NOT_DETECTED, gmn_analytic, is_marginal, noise_threshold
from ..rng import derive_seed, make_rng
from ..sdp import MAX_SDP_QUBITS, SdpCapacityError, SdpConvergenceError, gmn_sdp
from ..statekit import random_density_matrix, random_ghz_diagonal, random_product_state

log = logging.getLogger(__name__)

MAGIC = b"GMED"
VERSION = 1
KIND_CODES = {DENSE: 0, GHZ_DIAGONAL: 1}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
LABELS = (ENTANGLED, NOT_DETECTED)

ANALYTIC = "analytic"
SDP = "sdp"
LABELERS = (ANALYTIC, SDP)

# Stream identifiers under the master seed.
_STREAM_GHZ = 0
_STREAM_DENSE = 1
_STREAM_NOISY = 2
_STREAM_PRODUCT = 3
_STREAM_SPLIT = 4

_HEADER = struct.Struct("<4sIBHQQ")


class DatasetError(ValueError):
    pass


class DegenerateGridError(DatasetError):
    """No state of one class exists at the requested noise level."""


@dataclass
class Dataset:
    kind: str
    n_qubits: int
    features: np.ndarray
    labels: np.ndarray
    marginal: np.ndarray
    # not stored in the container; kept in run manifests
    seeds: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.marginal = np.asarray(self.marginal, dtype=bool)
        if self.kind not in KIND_CODES:
            raise DatasetError(f"unknown feature kind {self.kind!r}")
        if self.features.ndim != 2:
            raise DatasetError("features must be a (samples, length) array")
        count, length = self.features.shape
        if self.labels.shape != (count,) or self.marginal.shape != (count,):
            raise DatasetError("labels / marginal flags do not match the sample count")
        if not np.isin(self.labels, LABELS).all():
            raise DatasetError("labels must be -1 or +1")
        if count and length != feature_length(self.kind, self.n_qubits):
            raise DatasetError(f"feature length {length} does not fit {self.kind} at n={self.n_qubits}")
        if not np.isfinite(self.features).all():
            raise DatasetError("features contain non-finite values")

    def __len__(self) -> int:
        return self.labels.size

    @property
    def feature_length(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> dict[int, int]:
        return {lab: int(np.sum(self.labels == lab)) for lab in LABELS}

    def subset(self, idx: np.ndarray) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        seeds = None if self.seeds is None else self.seeds[idx]
        return Dataset(self.kind, self.n_qubits, self.features[idx], self.labels[idx], self.marginal[idx], seeds)


# ---------------------------------------------------------------------------
# container
# ---------------------------------------------------------------------------


def dataset_bytes(ds: Dataset) -> bytes:
    count, length = len(ds), feature_length(ds.kind, ds.n_qubits)
    head = _HEADER.pack(MAGIC, VERSION, KIND_CODES[ds.kind], ds.n_qubits, count, length)
    rec = np.dtype([("label", "i1"), ("marginal", "u1"), ("x", "<f8", (length,))])
    body = np.zeros(count, dtype=rec)
    body["label"] = ds.labels
    body["marginal"] = ds.marginal
    body["x"] = ds.features.reshape(count, length)
    return head + body.tobytes()


def parse_dataset(data: bytes) -> Dataset:
    if len(data) < _HEADER.size:
        raise DatasetError("file too short for a dataset header")
    magic, version, kind, n, count, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DatasetError("not a dataset file (bad magic)")
    if version != VERSION:
        raise DatasetError(f"unsupported dataset version {version}")
    if kind not in KIND_NAMES:
        raise DatasetError(f"unknown feature kind code {kind}")
    rec = np.dtype([("label", "i1"), ("marginal", "u1"), ("x", "<f8", (length,))])
    if len(data) != _HEADER.size + count * rec.itemsize:
        raise DatasetError("dataset payload size does not match its header")
    body = np.frombuffer(data, dtype=rec, offset=_HEADER.size, count=count)
    return Dataset(
        KIND_NAMES[kind],
        n,
        body["x"].astype(np.float64).reshape(count, length),
        body["label"].astype(np.int8),
        body["marginal"].astype(bool),
    )


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())


# ---------------------------------------------------------------------------
# candidate generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Candidate:
    index: int
    seed: int
    features: np.ndarray | None
    label: int
    marginal: bool
    value: float
    failure: str | None = None


def _dense_candidate(n: int, master_seed: int, sdp_tol: float, j: int) -> Candidate:
    seed = derive_seed(master_seed, _STREAM_DENSE, j)
    rng = make_rng(seed)
    rank = int(rng.integers(1, (1 << n) + 1))
    rho = random_density_matrix(n, rank, derive_seed(seed, 1))
    try:
        sol = gmn_sdp(rho, tol=sdp_tol)
    except SdpConvergenceError as exc:
        return Candidate(j, seed, None, 0, False, float("nan"), f"no convergence: {exc}")
    value = sol.gmn_value if sol.gmn_value > sdp_tol else 0.0
    marginal = is_marginal(value, LABEL_THRESHOLD)
    label = ENTANGLED if value > LABEL_THRESHOLD else NOT_DETECTED
    return Candidate(j, seed, featurize_dense(rho), label, marginal, value)


def _noisy_candidate(n: int, p: float, master_seed: int, j: int) -> Candidate:
    seed = derive_seed(master_seed, _STREAM_NOISY, j)
    base_target = ENTANGLED if j % 2 == 0 else NOT_DETECTED
    spec = random_ghz_diagonal(n, base_target, seed).with_white_noise(p)
    res = gmn_analytic(spec)
    return Candidate(j, seed, featurize_ghz_diagonal(spec), res.label, res.marginal, res.value)


def _run_candidates(make: Callable[[int], Candidate], start: int, count: int, workers: int) -> list[Candidate]:
    idx = list(range(start, start + count))
    if workers <= 1 or count == 1:
        return [make(j) for j in idx]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(make, idx))


def _fill_balanced(
    make: Callable[[int], Candidate],
    count_per_label: int,
    max_candidates: int,
    workers: int,
    chunk: int,
) -> tuple[list[Candidate], dict]:
    """Accept candidates in index order until each class has ``count_per_label``."""
    accepted = {lab: [] for lab in LABELS}
    stats = {"candidates": 0, "marginal_rejected": 0, "failures": 0, "overflow": 0}
    j = 0
    while any(len(v) < count_per_label for v in accepted.values()):
        if j >= max_candidates:
            have = {lab: len(v) for lab, v in accepted.items()}
            raise DegenerateGridError(
                f"gave up after {max_candidates} candidates with class counts {have}"
            )
        batch = _run_candidates(make, j, min(chunk, max_candidates - j), workers)
        j += len(batch)
        for cand in batch:
            if all(len(v) >= count_per_label for v in accepted.values()):
                break
            stats["candidates"] += 1
            if cand.failure is not None:
                stats["failures"] += 1
                log.warning("candidate %d skipped: %s", cand.index, cand.failure)
                continue
            if cand.marginal:
                stats["marginal_rejected"] += 1
                continue
            if len(accepted[cand.label]) < count_per_label:
                accepted[cand.label].append(cand)
            else:
                stats["overflow"] += 1
    # interleave classes: -1, +1, -1, +1, ...
    chosen = [c for pair in zip(*(accepted[lab] for lab in LABELS)) for c in pair]
    return chosen, stats


def _to_dataset(kind: str, n: int, chosen: list[Candidate], stats: dict) -> Dataset:
    length = feature_length(kind, n)
    feats = np.array([c.features for c in chosen]) if chosen else np.zeros((0, length))
    return Dataset(
        kind,
        n,
        feats,
        np.array([c.label for c in chosen], dtype=np.int8),
        np.array([c.marginal for c in chosen], dtype=bool),
        np.array([c.seed for c in chosen], dtype=np.uint64),
        stats,
    )


def _ghz_samples(n: int, count_per_label: int, master_seed: int) -> Iterator[tuple[int, int, np.ndarray]]:
    for j in range(count_per_label):
        for code, lab in enumerate(LABELS):
            seed = derive_seed(master_seed, _STREAM_GHZ, code, j)
            spec = random_ghz_diagonal(n, lab, seed)
            yield lab, seed, featurize_ghz_diagonal(spec)


def build_dataset(
    kind: str,
    n: int,
    count_per_label: int,
    labeler: str,
    master_seed: int,
    workers: int = 1,
    sdp_tol: float = 1e-7,
    max_candidates: int | None = None,
) -> Dataset:
    """Balanced dataset with exactly ``count_per_label`` samples per class.

    GHZ-diagonal data is generated per label directly (labels are exact by
    construction and re-checked against the closed form).  Dense data is
    Hilbert-Schmidt sampled with a uniformly random rank, labeled by the
    witness SDP, and accepted in candidate order; marginal states
    (``1e-7 < N_g <= 1e-6`` with the default tolerance) and solver failures
    are skipped.
    """
    if labeler not in LABELERS:
        raise DatasetError(f"unknown labeler {labeler!r}")
    if count_per_label < 1:
        raise DatasetError("count_per_label must be positive")
    if kind == GHZ_DIAGONAL:
        if labeler != ANALYTIC:
            raise DatasetError("GHZ-diagonal datasets are labeled analytically")
        rows = list(_ghz_samples(n, count_per_label, master_seed))
        feats = np.array([r[2] for r in rows])
        labels = np.array([r[0] for r in rows], dtype=np.int8)
        return Dataset(kind, n, feats, labels, np.zeros(len(rows), bool), np.array([r[1] for r in rows], dtype=np.uint64),
                       {"candidates": len(rows), "marginal_rejected": 0, "failures": 0, "overflow": 0})
    if kind == DENSE:
        if labeler != SDP:
            raise DatasetError("dense datasets need the sdp labeler")
        if n > MAX_SDP_QUBITS:
            raise SdpCapacityError(f"SDP labeling is limited to n <= {MAX_SDP_QUBITS}, got n={n}")
        make = partial(_dense_candidate, n, master_seed, sdp_tol)
        limit = max_candidates or 200 * count_per_label
        chosen, stats = _fill_balanced(make, count_per_label, limit, workers, chunk=max(8, 4 * workers))
        return _to_dataset(kind, n, chosen, stats)
    raise DatasetError(f"unknown feature kind {kind!r}")


def build_noisy_dataset(
    n: int,
    p: float,
    count_per_label: int,
    master_seed: int,
    workers: int = 1,
    max_candidates: int | None = None,
) -> Dataset:
    """Balanced GHZ-diagonal dataset of white-noised states labeled after mixing.

    Base specs alternate between entangled and not-detected targets; noise is
    applied in spec space and the label is recomputed from the noisy state.
    Raises :class:`DegenerateGridError` when ``p`` is at or below the point
    where no noisy state can be entangled.
    """
    if not 0.0 <= p <= 1.0:
        raise DatasetError("p must lie in [0, 1]")
    if p <= noise_threshold(n):
        raise DegenerateGridError(
            f"at p={p} every {n}-qubit noisy state has GHZ fidelity <= 1/2; no entangled samples exist"
        )
    make = partial(_noisy_candidate, n, p, master_seed)
    limit = max_candidates or 2000 * count_per_label
    chosen, stats = _fill_balanced(make, count_per_label, limit, workers, chunk=max(256, 64 * workers))
    return _to_dataset(GHZ_DIAGONAL, n, chosen, stats)


def build_product_dataset(n: int, count: int, master_seed: int, sdp_tol: float = 1e-7) -> Dataset:
    """Unbalanced dense dataset of random pure product states, SDP labeled."""
    if n > MAX_SDP_QUBITS:
        raise SdpCapacityError(f"SDP labeling is limited to n <= {MAX_SDP_QUBITS}, got n={n}")
    feats, labels, marg, seeds = [], [], [], []
    for j in range(count):
        seed = derive_seed(master_seed, _STREAM_PRODUCT, j)
        rho = random_product_state(n, seed)
        value = gmn_sdp(rho, tol=sdp_tol).gmn_value
        value = value if value > sdp_tol else 0.0
        feats.append(featurize_dense(rho))
        labels.append(ENTANGLED if value > LABEL_THRESHOLD else NOT_DETECTED)
        marg.append(is_marginal(value, LABEL_THRESHOLD))
        seeds.append(seed)
    return Dataset(DENSE, n, np.array(feats).reshape(count, -1), labels, marg, np.array(seeds, dtype=np.uint64),
                   {"candidates": count, "marginal_rejected": 0, "failures": 0, "overflow": 0})


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------


def split_indices(labels: np.ndarray, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified train/test indices: ``round(fraction * class size)`` of each class to train."""
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError("train_fraction must lie strictly between 0 and 1")
    labels = np.asarray(labels)
    rng = make_rng(derive_seed(seed, _STREAM_SPLIT))
    train, test = [], []
    for lab in LABELS:
        idx = np.flatnonzero(labels == lab)
        if idx.size == 0:
            continue
        k = int(round(train_fraction * idx.size))
        if idx.size < 2 or k == 0 or k == idx.size:
            raise DatasetError(f"class {lab:+d} has {idx.size} samples, too few to stratify")
        perm = rng.permutation(idx)
        train.append(perm[:k])
        test.append(perm[k:])
    if not train:
        raise DatasetError("cannot split an empty dataset")
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def split(ds: Dataset, train_fraction: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    tr, te = split_indices(ds.labels, train_fraction, seed)
    return ds.subset(tr), ds.subset(te)
