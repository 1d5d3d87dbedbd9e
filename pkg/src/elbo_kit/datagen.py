"""Deterministic synthetic datasets and their on-disk CSV format.

Two generators:

* ``gen_bars``: binary side-by-side images, each containing exactly one
  horizontal or one vertical bar of ones.  2*side classes; a two-latent
  VAE can model them, which keeps training demos at desk scale.
* ``gen_gaussian_blobs``: 2-D points from an equal-weight Gaussian
  mixture.  Points are squashed into the unit square by the fixed affine
  map u = (p + 8) / 16 (so [-8, 8]^2 maps onto [0, 1]^2) and then clipped
  to [0, 1]; with centers within a few units of the origin and moderate
  spread the clip never engages.

File format: one comment header line ``# name,seed,data_dim`` followed by
comma-separated rows.  Values are rendered with repr, Python's shortest
round-trip form, so load(save(d)) reproduces d bit for bit.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from elbo_kit.gaussian_core import RngState

_AFFINE_SHIFT = 8.0
_AFFINE_SCALE = 16.0


@dataclass
class Dataset:
    """Rows in [0, 1]^data_dim plus the provenance needed to regenerate them."""

    rows: np.ndarray
    name: str
    seed: int

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ValueError(f"rows must be 2-D, got shape {self.rows.shape}")
        if np.any(self.rows < 0.0) or np.any(self.rows > 1.0):
            raise ValueError("dataset values must lie in [0, 1]")

    @property
    def data_dim(self) -> int:
        return self.rows.shape[1]

    @property
    def n(self) -> int:
        return self.rows.shape[0]


def gen_bars(n: int, side: int, rng: RngState) -> Dataset:
    """n flattened side x side binary images, one full bar of ones each.

    Bar k < side is horizontal row k; bar k >= side is vertical column
    k - side.  Every row therefore sums to exactly ``side``.
    """
    if side < 2:
        raise ValueError(f"side must be >= 2, got {side}")
    rows = np.zeros((n, side * side))
    for i in range(n):
        k = rng.integer_below(2 * side)
        img = rows[i].reshape(side, side)
        if k < side:
            img[k, :] = 1.0
        else:
            img[:, k - side] = 1.0
    return Dataset(rows=rows, name=f"bars{side}", seed=rng.seed)


def gen_gaussian_blobs(n: int, centers, spread: float, rng: RngState) -> Dataset:
    """n 2-D mixture samples squashed into the unit square (see module doc)."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim != 2 or centers.shape[1] != 2 or centers.shape[0] < 1:
        raise ValueError(f"centers must be (k, 2) with k >= 1, got {centers.shape}")
    if not spread > 0.0:
        raise ValueError(f"spread must be positive, got {spread}")
    picks = np.array([rng.integer_below(centers.shape[0]) for _ in range(n)])
    noise = rng.normals(2 * n).reshape(n, 2)
    points = centers[picks] + spread * noise
    squashed = np.clip((points + _AFFINE_SHIFT) / _AFFINE_SCALE, 0.0, 1.0)
    return Dataset(rows=squashed, name="blobs", seed=rng.seed)


def squash_point(p) -> np.ndarray:
    """The blob generator's affine map (then clip), exposed for tests."""
    return np.clip((np.asarray(p, dtype=np.float64) + _AFFINE_SHIFT) / _AFFINE_SCALE, 0.0, 1.0)


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write header + CSV rows atomically (temp file, then rename)."""
    lines = [f"# {dataset.name},{dataset.seed},{dataset.data_dim}\n"]
    for row in dataset.rows:
        lines.append(",".join(repr(float(v)) for v in row) + "\n")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.writelines(lines)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def load_dataset(path: str) -> Dataset:
    """Read a dataset file; malformed content reports its line number."""
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# "):
            raise ValueError(f"{path}:1: missing '# name,seed,data_dim' header")
        fields = header[2:].strip().split(",")
        if len(fields) != 3:
            raise ValueError(f"{path}:1: malformed header {header.strip()!r}")
        name, seed_text, dim_text = fields
        try:
            seed, data_dim = int(seed_text), int(dim_text)
        except ValueError as err:
            raise ValueError(f"{path}:1: malformed header {header.strip()!r}") from err
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            try:
                values = [float(p) for p in parts]
            except ValueError as err:
                raise ValueError(f"{path}:{lineno}: malformed row {line.strip()!r}") from err
            if len(values) != data_dim:
                raise ValueError(
                    f"{path}:{lineno}: expected {data_dim} values, got {len(values)}"
                )
            rows.append(values)
    return Dataset(rows=np.array(rows).reshape(len(rows), data_dim), name=name, seed=seed)
