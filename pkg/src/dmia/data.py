"""Dataset ingestion and the member/non-member split protocol.

Binary loaders cover the classic 3073-byte-record color-image batch format
(1 label byte + 3x32x32 pixel bytes per record) and the big-endian IDX
format for grayscale images. Pixels map to [-1, 1] via x/127.5 - 1.

Synthetic generators provide desk-scale stand-ins: "gaussians" and "rings"
emit 2-D points for the MLP model path, "bars" emits 16x16 (or any square)
one-channel images of random axis-aligned bars with values in {-1, +1} for
the U-Net path. Datasets are addressable by URI-like strings, e.g.
``synth:bars?n=600&size=16&seed=7`` or ``cifar10:/path/to/batch.bin``.

A split carves a member set D out of a dataset, keeps the remainder as the
non-member pool, and fixes equal-size evaluation subsets from each; all
index sets are disjoint by construction and validated on creation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

import numpy as np

from .errors import ContractViolation, FormatError
from .numerics import RngStream

CIFAR_RECORD = 3073  # 1 label byte + 3*32*32 pixels
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SYNTH_KINDS = ("gaussians", "rings", "bars")


def _scale_pixels(raw: np.ndarray) -> np.ndarray:
    return (raw.astype(np.float32) / 127.5) - 1.0


def load_cifar10(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read one binary batch: images (n, 3, 32, 32) in [-1, 1] plus labels."""
    blob = Path(path).read_bytes()
    if len(blob) == 0 or len(blob) % CIFAR_RECORD != 0:
        offset = (len(blob) // CIFAR_RECORD) * CIFAR_RECORD
        raise FormatError(
            f"{path}: file size {len(blob)} is not a multiple of {CIFAR_RECORD}; truncated record at byte {offset}",
            offset=offset,
        )
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        bad = int(np.argmax(records[:, 0] > 9))
        raise FormatError(f"{path}: label {labels[bad]} out of range at record {bad}", offset=bad * CIFAR_RECORD)
    images = _scale_pixels(records[:, 1:].reshape(-1, 3, 32, 32))
    return images, labels


def load_idx(path: str | Path) -> np.ndarray:
    """Read an IDX file: images come back as (n, 1, rows, cols) in [-1, 1]."""
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise FormatError(f"{path}: too short for an IDX header", offset=len(blob))
    (magic,) = struct.unpack(">I", blob[:4])
    if magic == IDX_IMAGES_MAGIC:
        if len(blob) < 16:
            raise FormatError(f"{path}: truncated IDX image header", offset=len(blob))
        n, rows, cols = struct.unpack(">III", blob[4:16])
        expected = 16 + n * rows * cols
        if len(blob) != expected:
            raise FormatError(f"{path}: expected {expected} bytes, got {len(blob)}", offset=min(len(blob), expected))
        raw = np.frombuffer(blob, dtype=np.uint8, offset=16).reshape(n, 1, rows, cols)
        return _scale_pixels(raw)
    if magic == IDX_LABELS_MAGIC:
        (n,) = struct.unpack(">I", blob[4:8])
        if len(blob) != 8 + n:
            raise FormatError(f"{path}: expected {8 + n} bytes, got {len(blob)}", offset=min(len(blob), 8 + n))
        return np.frombuffer(blob, dtype=np.uint8, offset=8).astype(np.int64)
    raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}", offset=0)


def save_idx(path: str | Path, images: np.ndarray) -> None:
    """Write (n, 1, rows, cols) images in [-1, 1] as an IDX file (inverse of load_idx)."""
    x = np.asarray(images)
    if x.ndim != 4 or x.shape[1] != 1:
        raise ContractViolation(f"expected (n, 1, rows, cols) grayscale images, got {x.shape}")
    raw = np.clip(np.round((x + 1.0) * 127.5), 0, 255).astype(np.uint8)
    n, _, rows, cols = x.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(raw.tobytes())


def synth_dataset(kind: str, n: int, size: int = 16, dims: int = 2, seed: int = 0) -> np.ndarray:
    """Deterministic synthetic datasets; see module docstring for kinds."""
    if n < 1:
        raise ContractViolation(f"need n >= 1, got {n}")
    rng = RngStream(seed, 0)
    if kind == "gaussians":
        return rng.normal((n, dims))
    if kind == "rings":
        g = rng.generator()
        radii = np.where(g.integers(0, 2, size=n) == 0, 0.45, 0.9)
        angles = g.uniform(0, 2 * np.pi, size=n)
        noise = g.normal(scale=0.02, size=(n, 2))
        pts = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1) + noise
        return np.clip(pts, -1, 1).astype(np.float32)
    if kind == "bars":
        g = rng.generator()
        imgs = np.full((n, 1, size, size), -1.0, dtype=np.float32)
        counts = g.integers(1, 5, size=n)
        for i in range(n):
            for _ in range(counts[i]):
                horizontal = g.integers(0, 2) == 0
                pos = int(g.integers(0, size))
                thickness = int(g.integers(1, 4))
                lo, hi = pos, min(pos + thickness, size)
                if horizontal:
                    imgs[i, 0, lo:hi, :] = 1.0
                else:
                    imgs[i, 0, :, lo:hi] = 1.0
        return imgs
    raise ContractViolation(f"unknown synthetic kind '{kind}' (choose from {SYNTH_KINDS})")


def load_dataset(uri: str) -> np.ndarray:
    """Resolve a dataset URI to a data array.

    Schemes: ``synth:<kind>?n=..&size=..&dims=..&seed=..``,
    ``cifar10:<path>`` (images only), ``idx:<path>``.
    """
    scheme, _, rest = uri.partition(":")
    if not rest:
        raise ContractViolation(f"dataset URI '{uri}' has no payload")
    if scheme == "synth":
        parts = urlsplit("synth://host/" + rest)
        kind = rest.split("?")[0]
        q = {k: v[-1] for k, v in parse_qs(parts.query).items()}
        unknown = set(q) - {"n", "size", "dims", "seed"}
        if unknown:
            raise ContractViolation(f"unknown synth parameters {sorted(unknown)} in '{uri}'")
        try:
            params = {k: int(v) for k, v in q.items()}
        except ValueError as e:
            raise ContractViolation(f"bad synth parameter in '{uri}': {e}") from None
        return synth_dataset(
            kind,
            n=params.get("n", 1000),
            size=params.get("size", 16),
            dims=params.get("dims", 2),
            seed=params.get("seed", 0),
        )
    if scheme == "cifar10":
        return load_cifar10(rest)[0]
    if scheme == "idx":
        return load_idx(rest)
    raise ContractViolation(f"unknown dataset scheme '{scheme}' in '{uri}'")


@dataclass(frozen=True)
class DatasetSplit:
    """Member set, disjoint non-member pool, and equal-size eval subsets (by index)."""

    data: np.ndarray
    member_idx: np.ndarray
    nonmember_idx: np.ndarray
    eval_member_idx: np.ndarray
    eval_nonmember_idx: np.ndarray
    seed: int

    def __post_init__(self):
        members = set(self.member_idx.tolist())
        pool = set(self.nonmember_idx.tolist())
        if members & pool:
            raise ContractViolation("member set and non-member pool overlap")
        if len(self.eval_member_idx) != len(self.eval_nonmember_idx):
            raise ContractViolation("evaluation subsets must have equal sizes")
        if not set(self.eval_member_idx.tolist()) <= members:
            raise ContractViolation("eval members must come from the member set")
        if not set(self.eval_nonmember_idx.tolist()) <= pool:
            raise ContractViolation("eval non-members must come from the non-member pool")

    @property
    def members(self) -> np.ndarray:
        return self.data[self.member_idx]

    @property
    def eval_members(self) -> np.ndarray:
        return self.data[self.eval_member_idx]

    @property
    def eval_nonmembers(self) -> np.ndarray:
        return self.data[self.eval_nonmember_idx]


def make_split(dataset: np.ndarray, n_members: int, n_eval: int, seed: int) -> DatasetSplit:
    """Seeded shuffle; first n_members indices become D, evals drawn from each side."""
    total = len(dataset)
    if n_members + n_eval > total:
        raise ContractViolation(f"need n_members + n_eval <= {total}, got {n_members} + {n_eval}")
    if n_eval > n_members:
        raise ContractViolation(f"need n_eval <= n_members, got {n_eval} > {n_members}")
    if n_eval < 1:
        raise ContractViolation("need n_eval >= 1")
    perm = RngStream(seed, 0).permutation(total)
    member_idx = np.sort(perm[:n_members])
    nonmember_idx = np.sort(perm[n_members:])
    eval_member_idx = np.sort(perm[:n_eval])
    eval_nonmember_idx = np.sort(perm[n_members : n_members + n_eval])
    return DatasetSplit(dataset, member_idx, nonmember_idx, eval_member_idx, eval_nonmember_idx, seed)
