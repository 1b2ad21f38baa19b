"""Rank-1 lattice point sets with random shifting.

A generating vector z* of positive integers defines the node set
frac(k z* / N + shift) for k = 0..N-1. Vector files are plain text with
whitespace/newline-separated base-10 positive integers, the j-th integer
being z*_j.
"""

import importlib.resources
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

DEFAULT_VECTOR_NAME = "cbc_pod_n16384_s16.txt"


class LatticeError(Exception):
    pass


class VectorParseError(LatticeError):
    pass


@dataclass(frozen=True)
class GeneratingVector:
    components: np.ndarray
    source: str = "unspecified"
    base2_embedded: bool = False

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=np.int64)
        if comps.ndim != 1 or comps.size < 1:
            raise LatticeError("generating vector must be a nonempty 1-D integer array")
        if np.any(comps < 1):
            raise LatticeError("generating vector components must be >= 1")
        object.__setattr__(self, "components", comps)

    def __len__(self):
        return int(self.components.size)

    def reduced(self, N, s):
        """First s components reduced mod N; nonzero residues required."""
        if s > self.components.size:
            raise LatticeError(
                f"dimension {s} exceeds generating vector length {self.components.size}")
        zred = self.components[:s] % N
        if np.any(zred == 0):
            j = int(np.argmax(zred == 0))
            raise LatticeError(
                f"component {j + 1} reduces to 0 mod N={N}; lattice would collapse")
        return zred


@dataclass(frozen=True)
class ShiftedLattice:
    gen: GeneratingVector
    N: int
    s: int
    shift: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise LatticeError("point count N must be >= 1")
        if self.s > len(self.gen):
            raise LatticeError(
                f"dimension {self.s} exceeds generating vector length {len(self.gen)}")
        shift = np.asarray(self.shift, dtype=np.float64)
        if shift.shape != (self.s,):
            raise LatticeError("shift must have one coordinate per dimension")
        if np.any(shift < 0.0) or np.any(shift >= 1.0):
            raise LatticeError("shift coordinates must lie in [0, 1)")
        object.__setattr__(self, "shift", shift)


def load_generating_vector(path, base2_embedded=True):
    """Parse a generating-vector text file; errors carry the offending line."""
    components = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0]
            for tok in body.split():
                try:
                    val = int(tok)
                except ValueError:
                    raise VectorParseError(
                        f"{path}: line {lineno}: token {tok!r} is not an integer")
                if val < 1:
                    raise VectorParseError(
                        f"{path}: line {lineno}: component {val} must be positive")
                components.append(val)
    if not components:
        raise VectorParseError(f"{path}: file contains no components")
    return GeneratingVector(np.asarray(components, dtype=np.int64),
                            source=str(path), base2_embedded=base2_embedded)


def write_generating_vector(path, gen):
    with open(path, "w", encoding="utf-8") as fh:
        for z in gen.components:
            fh.write(f"{int(z)}\n")


def default_generating_vector():
    """The generating vector shipped with the package (CBC-built, base-2 friendly)."""
    ref = importlib.resources.files("latis").joinpath("data", DEFAULT_VECTOR_NAME)
    with importlib.resources.as_file(ref) as path:
        return load_generating_vector(path, base2_embedded=True)


def random_shift(s, seed):
    """Deterministic uniform shift in [0,1)^s keyed by (s, seed)."""
    if s < 0:
        raise LatticeError("dimension must be nonnegative")
    if s == 0:
        return np.empty(0, dtype=np.float64)
    bg = np.random.Philox(key=np.array([np.uint64(seed & (2**64 - 1)),
                                        np.uint64(0x5348)], dtype=np.uint64))
    return np.random.Generator(bg).random(s)


def lattice_points(lat):
    """N x s matrix with row k equal to frac(k z*/N + shift), entries in [0, 1).

    k z*_j is evaluated in exact 64-bit modular arithmetic (reduce mod N
    before dividing); any fractional part that rounds to 1.0 is clamped to
    the largest double below 1.
    """
    zred = lat.gen.reduced(lat.N, lat.s)
    return _kernels.lattice_points_raw(zred, lat.N, lat.shift)
