"""Equal-weight particle clouds and box domains.

A :class:`DiscreteMeasure` is a cloud of ``N`` atoms in ``R^d``, each carrying
mass ``1/N``. Coincident atoms are allowed, so a Dirac mass is simply ``N``
copies of the same point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial.distance import pdist

__all__ = [
    "BoxDomain",
    "DiscreteMeasure",
    "SupportStats",
    "discretize_uniform",
    "pushforward",
    "support_stats",
]


def _as_points(points, dim: int | None = None) -> np.ndarray:
    arr = np.array(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None] if dim in (None, 1) else arr.reshape(-1, dim)
    if arr.ndim != 2:
        raise ValueError(f"points must be an (N, d) array, got shape {arr.shape}")
    return arr


class DiscreteMeasure:
    """Uniform empirical measure ``(1/N) sum_i delta_{x_i}``.

    The coordinate array is copied on construction and made read-only.
    """

    __slots__ = ("_points",)

    def __init__(self, points, dim: int | None = None):
        arr = _as_points(points, dim)
        if arr.shape[0] < 1:
            raise ValueError("a measure needs at least one atom")
        if arr.shape[1] < 1:
            raise ValueError("dimension must be positive")
        if dim is not None and arr.shape[1] != dim:
            raise ValueError(f"expected dim={dim}, got {arr.shape[1]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("atom coordinates must be finite")
        arr.setflags(write=False)
        self._points = arr

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def n(self) -> int:
        return self._points.shape[0]

    @property
    def dim(self) -> int:
        return self._points.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def mean(self) -> np.ndarray:
        return self._points.mean(axis=0)

    def translate(self, v) -> DiscreteMeasure:
        return DiscreteMeasure(self._points + np.asarray(v, dtype=float))

    def same_atoms(self, other: DiscreteMeasure) -> bool:
        """Multiset equality of the atoms (exact)."""
        if self.n != other.n or self.dim != other.dim:
            return False
        a = self._points[np.lexsort(self._points.T[::-1])]
        b = other._points[np.lexsort(other._points.T[::-1])]
        return bool(np.array_equal(a, b))

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n={self.n}, dim={self.dim})"


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``[lower, upper]``; also used for open boxes via ``strict``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ValueError("lower and upper must have the same length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"lower must not exceed upper: {lo} vs {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def edges(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.edges))

    def is_degenerate(self) -> bool:
        return bool(np.any(self.edges <= 0))

    def contains(self, points, strict: bool = True) -> np.ndarray:
        """Membership mask; ``strict=True`` treats the box as open."""
        p = _as_points(points, self.dim)
        if strict:
            inside = (p > self.lo) & (p < self.hi)
        else:
            inside = (p >= self.lo) & (p <= self.hi)
        return np.all(inside, axis=1)

    def contains_box(self, other: BoxDomain) -> bool:
        return bool(np.all(self.lo <= other.lo) and np.all(other.hi <= self.hi))

    def inner_distance(self, points) -> np.ndarray:
        """Euclidean distance to the complement of the open box (0 outside)."""
        p = _as_points(points, self.dim)
        gap = np.minimum(p - self.lo, self.hi - p)
        return np.clip(gap.min(axis=1), 0.0, None)

    def clamp(self, points) -> np.ndarray:
        return np.clip(_as_points(points, self.dim), self.lo, self.hi)


class SupportStats(NamedTuple):
    diameter: float
    bounding_box: BoxDomain
    mean: np.ndarray


def pushforward(mu: DiscreteMeasure, images) -> DiscreteMeasure:
    """Image measure of ``mu`` under the map ``x_i -> images[i]``."""
    img = np.array(images, dtype=float)
    if img.ndim == 1 and mu.dim == 1:
        img = img[:, None]
    if img.ndim != 2 or img.shape[0] != mu.n:
        raise ValueError(
            f"images must be aligned with the {mu.n} atoms of mu, got shape {img.shape}"
        )
    if img.shape[1] != mu.dim:
        raise ValueError(f"image dimension {img.shape[1]} != measure dimension {mu.dim}")
    if not np.all(np.isfinite(img)):
        raise FloatingPointError("pushforward images contain non-finite values")
    return DiscreteMeasure(img)


def _diameter(points: np.ndarray) -> float:
    n, d = points.shape
    if n < 2:
        return 0.0
    if d == 1:
        return float(points.max() - points.min())
    if n > 3000:
        # only hull vertices can realize the diameter
        from scipy.spatial import ConvexHull, QhullError

        try:
            points = points[ConvexHull(points).vertices]
        except (QhullError, ValueError):
            pass
    return float(pdist(points).max())


def support_stats(mu: DiscreteMeasure) -> SupportStats:
    pts = mu.points
    box = BoxDomain(pts.min(axis=0), pts.max(axis=0))
    return SupportStats(_diameter(pts), box, pts.mean(axis=0))


def discretize_uniform(
    box: BoxDomain, n: int, seed: int = 0, mode: str = "grid"
) -> DiscreteMeasure:
    """Discretize the uniform law on ``box`` with ``n`` atoms.

    ``grid`` puts atoms at the centers of a regular ``k^d`` cell partition and
    requires ``n = k^d``; ``random`` draws i.i.d. uniform atoms from ``seed``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    d = box.dim
    if mode == "grid":
        k = int(round(n ** (1.0 / d)))
        if k**d != n:
            raise ValueError(f"grid mode needs n to be a perfect {d}-th power, got {n}")
        centers = (2.0 * np.arange(1, k + 1) - 1.0) / (2.0 * k)
        axes = [lo + (hi - lo) * centers for lo, hi in zip(box.lower, box.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return DiscreteMeasure(np.stack([m.ravel() for m in mesh], axis=1))
    if mode == "random":
        if box.is_degenerate():
            raise ValueError("random mode needs a box with positive volume")
        rng = np.random.default_rng(seed)
        return DiscreteMeasure(rng.uniform(box.lo, box.hi, size=(n, d)))
    raise ValueError(f"unknown discretization mode {mode!r}")


def as_measure(obj: DiscreteMeasure | Sequence | np.ndarray) -> DiscreteMeasure:
    return obj if isinstance(obj, DiscreteMeasure) else DiscreteMeasure(obj)
