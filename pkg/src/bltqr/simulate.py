"""Synthetic longitudinal imaging data with known coefficient tensors.

Each scenario places one shape per visit (rectangle, cross, triangle, disc or
cube) whose location, size and magnitude drift across visits, and adds
isolated sparse voxels at the last visit. Shapes are defined on the unit
square/cube and rasterized at cell centres, so any ``dims`` can be used.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage

from . import rand
from .model import Dataset
from .tensor import check_order

N_SPARSE = 10
SPARSE_RANGE = (1.2, 2.0)

# (centre, half-size, magnitude) per visit for the 2-D scenarios on the unit square.
# Visit-to-visit the shape is translated and rescaled; consecutive supports overlap
# so a visit-invariant component exists.
_LAYOUT_2D = [
    ((0.36, 0.36), 0.14, 1.0),
    ((0.42, 0.44), 0.16, 1.2),
    ((0.50, 0.52), 0.14, 1.5),
]
_LAYOUT_3D = [
    ((0.40, 0.40, 0.40), 0.15, 1.0),
    ((0.45, 0.45, 0.45), 0.15, 1.0),
    ((0.50, 0.50, 0.50), 0.15, 1.5),
]
SCENARIO_SHAPES = {1: "rectangle", 2: "cross", 3: "triangle", 4: "circle", 5: "cube"}


@dataclass
class ScenarioSpec:
    scenario_id: int = 1
    dims: tuple[int, ...] | None = None
    n_train: int = 250
    n_test: int = 50
    n_visits: int = 3
    q: float = 0.5
    sigma: float = 1.0
    seed: int = 0
    misspecified: bool = False

    def __post_init__(self):
        if self.scenario_id not in SCENARIO_SHAPES:
            raise ValueError(f"unsupported scenario {self.scenario_id}; choose 1-5")
        if self.dims is None:
            self.dims = (30, 30, 30) if self.scenario_id == 5 else (48, 48)
        self.dims = check_order(self.dims)
        if (self.scenario_id == 5) != (len(self.dims) == 3):
            raise ValueError(f"scenario {self.scenario_id} needs {'3' if self.scenario_id == 5 else '2'}-D dims")
        if not 1 <= self.n_visits <= 3:
            raise ValueError("scenarios define at most 3 visits")
        rand._check_q(self.q)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        return d


def _centres(dims):
    axes = [(np.arange(p) + 0.5) / p for p in dims]
    return np.meshgrid(*axes, indexing="ij")


def shape_mask(kind: str, dims, centre, half: float) -> np.ndarray:
    grid = _centres(dims)
    rel = [g - c for g, c in zip(grid, centre)]
    if kind == "rectangle":
        return (np.abs(rel[0]) <= half) & (np.abs(rel[1]) <= 0.7 * half)
    if kind == "cross":
        arm = 0.35 * half
        return ((np.abs(rel[0]) <= half) & (np.abs(rel[1]) <= arm)) | (
            (np.abs(rel[1]) <= half) & (np.abs(rel[0]) <= arm))
    if kind == "triangle":
        # right triangle with the right angle at the lower-left of the bounding box
        u = (rel[0] + half) / (2 * half)
        v = (rel[1] + half) / (2 * half)
        return (u >= 0) & (v >= 0) & (u + v <= 1.0)
    if kind == "circle":
        return rel[0] ** 2 + rel[1] ** 2 <= half**2
    if kind == "cube":
        return np.all([np.abs(r) <= half for r in rel], axis=0)
    raise ValueError(f"unknown shape {kind!r}")


def _ensure_nonempty(mask, dims, centre):
    if not mask.any():
        idx = tuple(min(int(c * p), p - 1) for c, p in zip(centre, dims))
        mask[idx] = True
    return mask


def main_shape(spec: ScenarioSpec, t: int) -> np.ndarray:
    layout = _LAYOUT_3D if spec.scenario_id == 5 else _LAYOUT_2D
    centre, half, mag = layout[t]
    mask = _ensure_nonempty(shape_mask(SCENARIO_SHAPES[spec.scenario_id], spec.dims, centre, half),
                            spec.dims, centre)
    return mag * mask


def _spread(rng, pool, k, tries=200):
    """Pick ``k`` pairwise non-adjacent integers from ``pool``, or None."""
    for _ in range(tries):
        if len(pool) < k:
            return None
        pick = np.sort(rng.choice(pool, size=k, replace=False))
        if np.all(np.diff(pick) >= 2):
            return pick
    return None


def sparse_voxels(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices and magnitudes of the last-visit sparse signals.

    The voxels sit on a randomly placed lattice (2 rows x 5 columns in 2-D,
    2 x 1 x 5 in 3-D) of pairwise non-adjacent lines, every cell at Chebyshev
    distance >= 3 from all main-shape cells. The lattice keeps the sparse
    pattern low-rank while each voxel stays isolated. Falls back to uniform
    scatter outside the shapes when no lattice fits.
    """
    rng = rand.make_rng(10_007 * spec.seed + spec.scenario_id)
    D = len(spec.dims)
    near = np.zeros(spec.dims, bool)
    for t in range(spec.n_visits):
        near |= main_shape(spec, t) != 0
    box = ndimage.binary_dilation(near, structure=np.ones((5,) * D, bool))
    counts = (2, 5) if D == 2 else (2, 1, 5)
    for _ in range(500):
        lines = [_spread(rng, np.arange(p), k) for p, k in zip(spec.dims, counts)]
        if any(l is None for l in lines):
            break
        cells = np.stack(np.meshgrid(*lines, indexing="ij"), axis=-1).reshape(-1, D)
        if not box[tuple(cells.T)].any():
            idx = np.sort(np.ravel_multi_index(tuple(cells.T), spec.dims))
            return idx, rng.uniform(*SPARSE_RANGE, size=idx.size)
    candidates = np.flatnonzero(~box.ravel())
    if candidates.size < N_SPARSE:
        candidates = np.flatnonzero(~near.ravel())
    idx = np.sort(rng.choice(candidates, size=min(N_SPARSE, candidates.size), replace=False))
    return idx, rng.uniform(*SPARSE_RANGE, size=idx.size)


def true_signal(spec: ScenarioSpec, t: int) -> np.ndarray:
    """Ground-truth coefficient tensor at visit ``t`` (0-based)."""
    if not 0 <= t < spec.n_visits:
        raise IndexError(f"visit {t} out of range for {spec.n_visits} visits")
    out = main_shape(spec, t).astype(np.float64)
    if t == spec.n_visits - 1 and spec.n_visits == 3:
        idx, vals = sparse_voxels(spec)
        out.ravel()[idx] = vals
    return out


def _noise(rng, spec: ScenarioSpec, n):
    if spec.sigma == 0:
        return np.zeros(n)
    if spec.misspecified:
        return spec.sigma * rng.standard_normal(n)
    return rand.sample_ald(rng, 0.0, spec.sigma, spec.q, size=n)


def _make(rng, spec, truth, n_subjects):
    rows_y, rows_X, subj, vis, times = [], [], [], [], []
    for t in range(spec.n_visits):
        X = rng.standard_normal((n_subjects,) + spec.dims)
        y = X.reshape(n_subjects, truth[t].size) @ truth[t].ravel() + _noise(rng, spec, n_subjects)
        rows_y.append(y)
        rows_X.append(X)
        subj.append(np.arange(n_subjects))
        vis.append(np.full(n_subjects, t))
        times.append(np.full(n_subjects, float(t)))
    return Dataset(np.concatenate(rows_y), np.concatenate(rows_X), np.concatenate(subj),
                   np.concatenate(vis), np.concatenate(times), n_subjects=n_subjects, n_visits=spec.n_visits)


def generate(spec: ScenarioSpec):
    """Return ``(train, test, truth)``; ``truth[t]`` is the visit-t coefficient tensor.

    Every subject is observed at every visit with time-from-baseline ``t``;
    images are iid N(0, 1) and errors ALD(0, sigma, q) (N(0, sigma^2) when
    ``spec.misspecified``).
    """
    truth = [true_signal(spec, t) for t in range(spec.n_visits)]
    rng = rand.make_rng(spec.seed)
    train = _make(rng, spec, truth, spec.n_train)
    test = _make(rng, spec, truth, spec.n_test)
    return train, test, truth


def generate_misspecified(spec: ScenarioSpec):
    return generate(ScenarioSpec(**{**spec.to_dict(), "dims": spec.dims, "misspecified": True}))


def generate_low_rank(dims, rank: int, n: int, n_visits: int = 1, q: float = 0.5, sigma: float = 1.0,
                      seed: int = 0, magnitude: float = 1.0):
    """Data whose visit-invariant coefficient is an exact rank-``rank`` PARAFAC tensor.

    Margins are disjoint blocks of ones so the components do not overlap.
    Returns ``(dataset, truth)``.
    """
    dims = check_order(dims)
    truth = np.zeros(dims)
    for r in range(rank):
        vecs = []
        for p in dims:
            width = max(1, p // (2 * rank + 1))
            v = np.zeros(p)
            start = (2 * r + 1) * width
            v[start:start + width + (r % 2)] = 1.0
            vecs.append(v)
        comp = vecs[0]
        for v in vecs[1:]:
            comp = np.multiply.outer(comp, v)
        truth += magnitude * (r + 1) * comp
    spec = ScenarioSpec(scenario_id=5 if len(dims) == 3 else 1, dims=dims, n_train=n, n_test=0,
                        n_visits=n_visits, q=q, sigma=sigma, seed=seed)
    rng = rand.make_rng(seed)
    data = _make(rng, spec, [truth] * n_visits, n)
    return data, truth


def generate_null(spec: ScenarioSpec):
    """Pure-noise data with the scenario's layout: every coefficient tensor is zero."""
    truth = [np.zeros(spec.dims) for _ in range(spec.n_visits)]
    rng = rand.make_rng(spec.seed)
    return _make(rng, spec, truth, spec.n_train), _make(rng, spec, truth, spec.n_test), truth
