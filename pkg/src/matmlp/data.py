"""Synthetic datasets, PCA ingestion and dataset files.

Two on-disk formats are used:

* vectors go to a headered CSV whose first line is ``# matmlp-vectors`` plus a
  JSON metadata object, followed by a column-name row and one row per sample;
* stacks of matrices go to a binary tensor container: the 8-byte magic
  ``MMLPTNS1``, a little-endian ``uint32`` header length, a UTF-8 JSON header
  (shape, dtype, sha256 of the payload, metadata) and the raw little-endian
  float64 payload in C order.

Floats in the CSV are written with ``repr`` so a round trip is bitwise exact.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, RankDeficient
from .linalg import sym, sym_eig

GENERATOR_VERSION = "1"
TENSOR_MAGIC = b"MMLPTNS1"
CSV_MARKER = "# matmlp-vectors "
CHUNK = 1 << 20

INPUT_DIM = 20
SPD_DRAWS = 10_000
SIGMA_EIG_RANGE = (0.1, 2.0)


@dataclass
class Dataset:
    """Inputs ``(n, p)``, optional matrix targets ``(n, d, d)`` and metadata."""

    inputs: np.ndarray
    targets: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.inputs)

    def split(self, n_first: int):
        first = Dataset(self.inputs[:n_first], None if self.targets is None else self.targets[:n_first], dict(self.meta))
        rest = Dataset(self.inputs[n_first:], None if self.targets is None else self.targets[n_first:], dict(self.meta))
        return first, rest


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def gen_spd_dataset(n: int, d0: int, seed: int, input_dim: int = INPUT_DIM, draws: int = SPD_DRAWS,
                    mixing: np.ndarray | None = None, with_population: bool = False):
    """Pairs ``(x_i, Y_i)`` of class means and trace-one class covariances.

    A fixed Gaussian mixing matrix ``A`` (``d0 x input_dim``) maps draws
    ``t ~ N(mu_i, Sigma_i)``; ``Y_i`` is the sample covariance of the mapped
    draws scaled to unit trace and the input is ``x_i = mu_i``. ``Sigma_i``
    has a random orthogonal basis and log-uniform eigenvalues in
    ``[0.1, 2]``. Pass ``mixing`` to share ``A`` between a train and a test
    draw; otherwise it comes from the seed.

    With ``with_population`` the return value is ``(dataset, mixing, sigmas)``
    so callers can compare ``Y_i`` with :func:`population_target`.
    """
    if d0 < 2:
        raise ValueError("d0 must be at least 2")
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d0, input_dim)) if mixing is None else np.asarray(mixing, dtype=float)
    if a.shape != (d0, input_dim):
        raise ValueError(f"mixing matrix must be {(d0, input_dim)}")
    lo, hi = np.log(SIGMA_EIG_RANGE[0]), np.log(SIGMA_EIG_RANGE[1])
    inputs = np.empty((n, input_dim))
    targets = np.empty((n, d0, d0))
    sigmas = np.empty((n, input_dim, input_dim)) if with_population else None
    for i in range(n):
        mu = rng.standard_normal(input_dim)
        q = random_orthogonal(input_dim, rng)
        lam = np.exp(rng.uniform(lo, hi, size=input_dim))
        chol = q * np.sqrt(lam)
        if with_population:
            sigmas[i] = (q * lam) @ q.T
        t = mu + rng.standard_normal((draws, input_dim)) @ chol.T
        cov = np.cov(t @ a.T, rowvar=False)
        inputs[i] = mu
        targets[i] = sym(cov / np.trace(cov))
    meta = {"kind": "spd", "seed": int(seed), "d0": d0, "input_dim": input_dim, "draws": draws,
            "generator_version": GENERATOR_VERSION, "input_definition": "class mean"}
    ds = Dataset(inputs, targets, meta)
    return (ds, a, sigmas) if with_population else ds


def population_target(mixing: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    c = mixing @ sigma @ mixing.T
    return c / np.trace(c)


@dataclass
class LinearGaussianTruth:
    """``x = W s + b + e`` with ``s ~ N(0, I_k)`` and ``e ~ N(0, Psi)``."""

    weights: np.ndarray
    offset: np.ndarray
    noise_cov: np.ndarray

    @property
    def marginal_cov(self):
        return self.weights @ self.weights.T + self.noise_cov

    def loglik(self, x: np.ndarray) -> np.ndarray:
        """Exact log marginal likelihood of each row of ``x``."""
        x = np.atleast_2d(x)
        cov = self.marginal_cov
        chol = np.linalg.cholesky(cov)
        sol = np.linalg.solve(chol, (x - self.offset).T)
        d = cov.shape[0]
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        return -0.5 * (d * np.log(2 * np.pi) + logdet + np.sum(sol * sol, axis=0))


def gen_vae_dataset(n: int, d: int, k_true: int, seed: int, noise_scale: float = 0.3) -> tuple[Dataset, LinearGaussianTruth]:
    """Linear-Gaussian latent data whose noise covariance is dense.

    The noise has strong correlations between coordinates, so a model with a
    full dispersion matrix can fit it while a diagonal one cannot.
    """
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((d, k_true)) / np.sqrt(k_true)
    offset = 0.5 * rng.standard_normal(d)
    q = random_orthogonal(d, rng)
    lam = noise_scale ** 2 * np.exp(rng.uniform(np.log(0.05), np.log(3.0), size=d))
    noise_cov = sym((q * lam) @ q.T)
    s = rng.standard_normal((n, k_true))
    e = rng.standard_normal((n, d)) @ np.linalg.cholesky(noise_cov).T
    x = s @ w.T + offset + e
    meta = {"kind": "vectors", "seed": int(seed), "d": d, "k_true": k_true,
            "generator_version": GENERATOR_VERSION, "source": "linear-gaussian"}
    return Dataset(x, None, meta), LinearGaussianTruth(w, offset, noise_cov)


@dataclass
class PcaResult:
    scores: np.ndarray
    loadings: np.ndarray  # (p, n_components), orthonormal columns
    mean: np.ndarray
    variances: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.scores @ self.loadings.T + self.mean


def pca_reduce(data: np.ndarray, n_components: int, rank_tol: float = 1e-10) -> PcaResult:
    """Centered PCA through the symmetric eigensolver of the sample covariance."""
    data = np.asarray(data, dtype=float)
    mean = data.mean(axis=0)
    centered = data - mean
    cov = sym(centered.T @ centered / max(len(data) - 1, 1))
    eig = sym_eig(cov)
    rank = int(np.sum(eig.values > rank_tol * max(eig.values[0], np.finfo(float).tiny)))
    if n_components > rank:
        raise RankDeficient(f"asked for {n_components} components but the data has rank {rank}")
    loadings = eig.vectors[:, :n_components]
    return PcaResult(centered @ loadings, loadings, mean, eig.values[:n_components])


# files -----------------------------------------------------------------------

def save_vectors_csv(path, array: np.ndarray, meta: dict | None = None):
    array = np.atleast_2d(np.asarray(array, dtype=float))
    with open(path, "w", newline="") as fh:
        fh.write(CSV_MARKER + json.dumps(meta or {}, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(array.shape[1])])
        for row in array:
            writer.writerow([repr(float(v)) for v in row])


def load_vectors_csv(path) -> tuple[np.ndarray, dict]:
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith(CSV_MARKER):
            raise FormatError(f"{path}:1: missing '{CSV_MARKER.strip()}' header line")
        try:
            meta = json.loads(first[len(CSV_MARKER):])
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:1: metadata is not valid JSON ({exc.msg})") from exc
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise FormatError(f"{path}:2: missing column header") from None
        rows = []
        for lineno, row in enumerate(reader, start=3):
            if len(row) != len(names):
                raise FormatError(f"{path}:{lineno}: expected {len(names)} fields, found {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from exc
    return np.array(rows, dtype=float).reshape(len(rows), len(names)), meta


def save_tensor(path, array: np.ndarray, meta: dict | None = None):
    payload = np.ascontiguousarray(np.asarray(array, dtype="<f8")).tobytes()
    header = {"shape": list(np.shape(array)), "dtype": "<f8", "order": "C",
              "sha256": hashlib.sha256(payload).hexdigest(), "meta": meta or {}}
    raw = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(payload)


def load_tensor(path) -> tuple[np.ndarray, dict]:
    """Stream a tensor container, checking size and checksum as it reads."""
    with open(path, "rb") as fh:
        if fh.read(8) != TENSOR_MAGIC:
            raise FormatError(f"{path}: bad magic, not a tensor container")
        size = fh.read(4)
        if len(size) != 4:
            raise FormatError(f"{path}: truncated header length")
        (n_header,) = struct.unpack("<I", size)
        try:
            header = json.loads(fh.read(n_header).decode())
            shape = tuple(int(s) for s in header["shape"])
            expected = header["sha256"]
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: unreadable tensor header ({exc})") from exc
        if header.get("dtype") != "<f8":
            raise FormatError(f"{path}: unsupported dtype {header.get('dtype')!r}")
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
        digest = hashlib.sha256()
        buf = io.BytesIO()
        remaining = n_bytes
        while remaining:
            chunk = fh.read(min(CHUNK, remaining))
            if not chunk:
                raise FormatError(f"{path}: payload truncated, {remaining} bytes missing")
            digest.update(chunk)
            buf.write(chunk)
            remaining -= len(chunk)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    if digest.hexdigest() != expected:
        raise FormatError(f"{path}: checksum mismatch")
    array = np.frombuffer(buf.getvalue(), dtype="<f8").reshape(shape).astype(float)
    return array, header.get("meta", {})


def save_dataset(stem, dataset: Dataset):
    """Write ``<stem>.csv`` (inputs) and, with targets, ``<stem>.tensor``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    save_vectors_csv(stem.with_suffix(".csv"), dataset.inputs, dataset.meta)
    if dataset.targets is not None:
        save_tensor(stem.with_suffix(".tensor"), dataset.targets, dataset.meta)


def load_dataset(stem) -> Dataset:
    stem = Path(stem)
    inputs, meta = load_vectors_csv(stem.with_suffix(".csv"))
    targets = None
    tensor_path = stem.with_suffix(".tensor")
    if tensor_path.exists():
        targets, tmeta = load_tensor(tensor_path)
        if len(targets) != len(inputs):
            raise FormatError(f"{tensor_path}: {len(targets)} targets for {len(inputs)} inputs")
        meta = {**tmeta, **meta}
    return Dataset(inputs, targets, meta)
