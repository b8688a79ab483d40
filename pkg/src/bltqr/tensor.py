"""Dense tensors and PARAFAC (CP) coefficient tensors.

Dense tensors are plain C-ordered ``float64`` numpy arrays of order 2 or 3.
A :class:`ParafacCoef` stores one factor matrix per mode, ``margins[j]`` of
shape ``(p_j, R)``, whose column ``r`` is the margin vector of component ``r``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SUPPORTED_ORDERS = (2, 3)


class TensorShapeError(ValueError):
    pass


def check_order(dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) not in SUPPORTED_ORDERS:
        raise TensorShapeError(f"tensor order must be 2 or 3, got {len(dims)} (dims={dims})")
    if any(d <= 0 for d in dims):
        raise TensorShapeError(f"dims must be positive, got {dims}")
    return dims


def as_dense(x, dims=None) -> np.ndarray:
    """Return ``x`` as a C-ordered float64 array, reshaping a flat buffer if ``dims`` is given."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if dims is not None:
        dims = check_order(dims)
        if arr.size != int(np.prod(dims)):
            raise TensorShapeError(f"data length {arr.size} != prod(dims) {int(np.prod(dims))}")
        arr = arr.reshape(dims)
    else:
        check_order(arr.shape)
    return arr


@dataclass
class ParafacCoef:
    """Rank-R CP representation ``sum_r m_1[:, r] o ... o m_D[:, r]``."""

    margins: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.margins = [np.ascontiguousarray(m, dtype=np.float64) for m in self.margins]
        if not self.margins:
            raise TensorShapeError("ParafacCoef needs at least one margin matrix")
        check_order([m.shape[0] for m in self.margins])
        ranks = {m.shape[1] for m in self.margins if m.ndim == 2}
        if any(m.ndim != 2 for m in self.margins) or len(ranks) != 1:
            raise TensorShapeError(
                "margins must be 2-D (p_j, R) arrays sharing one rank, got shapes "
                f"{[m.shape for m in self.margins]}"
            )

    @classmethod
    def zeros(cls, dims, rank: int) -> "ParafacCoef":
        dims = check_order(dims)
        if rank < 1:
            raise ValueError(f"rank must be >= 1, got {rank}")
        return cls([np.zeros((p, rank)) for p in dims])

    @classmethod
    def from_vectors(cls, components) -> "ParafacCoef":
        """Build from ``components[r][j]`` margin vectors."""
        components = [[np.asarray(v, dtype=np.float64) for v in comp] for comp in components]
        order = {len(c) for c in components}
        if len(order) != 1:
            raise TensorShapeError("all components must have the same number of margins")
        D = order.pop()
        margins = []
        for j in range(D):
            lens = {len(c[j]) for c in components}
            if len(lens) != 1:
                raise TensorShapeError(f"mode {j} margins have mismatched lengths {sorted(lens)}")
            margins.append(np.column_stack([c[j] for c in components]))
        return cls(margins)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.margins)

    @property
    def rank(self) -> int:
        return self.margins[0].shape[1]

    @property
    def order(self) -> int:
        return len(self.margins)

    def n_params(self) -> int:
        return self.rank * sum(self.dims)

    def copy(self) -> "ParafacCoef":
        return ParafacCoef([m.copy() for m in self.margins])


def materialize(c: ParafacCoef) -> np.ndarray:
    """Dense tensor ``out[k1..kD] = sum_r prod_j margins[j][k_j, r]``."""
    if c.order == 2:
        a, b = c.margins
        return a @ b.T
    a, b, d = c.margins
    return np.einsum("ir,jr,kr->ijk", a, b, d, optimize=False)


def materialize_component(c: ParafacCoef, r: int) -> np.ndarray:
    _check_index(c, r, 0)
    vecs = [m[:, r] for m in c.margins]
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return out


def inner_product(x, b) -> float:
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if x.shape != b.shape:
        raise TensorShapeError(f"shape mismatch: {x.shape} vs {b.shape}")
    check_order(x.shape)
    return float(np.dot(x.ravel(), b.ravel()))


def batch_inner(X: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Inner products of a stack of images ``X`` (N, *dims) with one tensor ``b``."""
    if X.shape[1:] != b.shape:
        raise TensorShapeError(f"image dims {X.shape[1:]} != coefficient dims {b.shape}")
    return X.reshape(X.shape[0], -1) @ b.ravel()


def _check_index(c: ParafacCoef, r: int, j: int) -> None:
    if not 0 <= r < c.rank:
        raise IndexError(f"component {r} out of range for rank {c.rank}")
    if not 0 <= j < c.order:
        raise IndexError(f"mode {j} out of range for order {c.order}")


def margin_design_vector(x, c: ParafacCoef, r: int, j: int) -> np.ndarray:
    """Contract ``x`` against every margin of component ``r`` except mode ``j``.

    The result ``v`` satisfies ``<x, component_r> == v @ c.margins[j][:, r]``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != c.dims:
        raise TensorShapeError(f"shape mismatch: {x.shape} vs {c.dims}")
    return margin_design_matrix(x[None], c, r, j)[0]


def margin_design_matrix(X: np.ndarray, c: ParafacCoef, r: int, j: int) -> np.ndarray:
    """Row-stacked :func:`margin_design_vector` for images ``X`` of shape (N, *dims)."""
    _check_index(c, r, j)
    if X.shape[1:] != c.dims:
        raise TensorShapeError(f"image dims {X.shape[1:]} != coefficient dims {c.dims}")
    others = [c.margins[l][:, r] for l in range(c.order) if l != j]
    if c.order == 2:
        (u,) = others
        return X @ u if j == 0 else u @ X
    u, w = others
    N, p1, p2, p3 = X.shape
    if j == 0:
        return X.reshape(N, p1, p2 * p3) @ np.outer(u, w).ravel()
    if j == 1:
        return u @ (X @ w)
    return np.outer(u, w).ravel() @ X.reshape(N, p1 * p2, p3)
