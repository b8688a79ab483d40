"""Data containers, hyperparameters and the complete MCMC state."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, asdict

import numpy as np

from . import rand
from .tensor import ParafacCoef, batch_inner, check_order, materialize


@dataclass
class Dataset:
    """Longitudinal records stacked one row per observed (subject, visit) pair.

    Visits and subjects are 0-based integers. A missing visit has no row.
    ``Z`` holds time-invariant covariates, one row per subject (may have zero columns).
    """

    y: np.ndarray
    X: np.ndarray
    subject: np.ndarray
    visit: np.ndarray
    time: np.ndarray
    Z: np.ndarray | None = None
    n_subjects: int | None = None
    n_visits: int | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64).ravel()
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.subject = np.asarray(self.subject, dtype=np.int64).ravel()
        self.visit = np.asarray(self.visit, dtype=np.int64).ravel()
        self.time = np.asarray(self.time, dtype=np.float64).ravel()
        N = self.y.size
        if self.X.shape[0] != N or self.subject.size != N or self.visit.size != N or self.time.size != N:
            raise ValueError(
                f"record arrays disagree in length: y={N}, X={self.X.shape[0]}, "
                f"subject={self.subject.size}, visit={self.visit.size}, time={self.time.size}"
            )
        check_order(self.X.shape[1:])
        if N and (self.subject.min() < 0 or self.visit.min() < 0):
            raise ValueError("subject and visit indices must be nonnegative")
        if self.n_subjects is None:
            self.n_subjects = int(self.subject.max()) + 1 if N else 0
        if self.n_visits is None:
            self.n_visits = int(self.visit.max()) + 1 if N else 0
        if N and (self.subject.max() >= self.n_subjects or self.visit.max() >= self.n_visits):
            raise ValueError("subject/visit index exceeds n_subjects/n_visits")
        keys = self.subject * max(self.n_visits, 1) + self.visit
        if np.unique(keys).size != N:
            raise ValueError("duplicate (subject, visit) records")
        if self.Z is None:
            self.Z = np.zeros((self.n_subjects, 0))
        self.Z = np.asarray(self.Z, dtype=np.float64)
        if self.Z.ndim != 2 or self.Z.shape[0] != self.n_subjects:
            raise ValueError(f"Z must have shape (n_subjects, p), got {self.Z.shape}")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.X.shape[1:])

    @property
    def n_obs(self) -> int:
        return self.y.size

    @property
    def n_covariates(self) -> int:
        return self.Z.shape[1]

    def observed(self, i: int, t: int) -> bool:
        return bool(np.any((self.subject == i) & (self.visit == t)))

    def observed_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_subjects, self.n_visits), dtype=bool)
        mask[self.subject, self.visit] = True
        return mask

    def row(self, i: int, t: int) -> int:
        idx = np.flatnonzero((self.subject == i) & (self.visit == t))
        if idx.size == 0:
            raise KeyError(f"no record for subject {i} at visit {t}")
        return int(idx[0])

    def visit_rows(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.visit == t)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.y[rows], self.X[rows], self.subject[rows], self.visit[rows], self.time[rows],
            self.Z, self.n_subjects, self.n_visits,
        )


def alpha_grid(rank: int, order: int, size: int = 10) -> np.ndarray:
    """Dirichlet concentration grid ``R**-e`` with exponents evenly spaced from D down to 0.1."""
    return float(rank) ** -np.linspace(order, 0.1, size)


@dataclass
class Hyperparams:
    q: float = 0.5
    rank: int = 3
    rank_t: int = 3
    order: int = 2
    alpha: float | None = None
    a_lambda: float = 3.0
    b_lambda: float | None = None
    a_tau: float | None = None
    b_tau: float | None = None
    a_zeta: float = 1.0
    b_zeta: float = 1.0
    spike: float = 1e-4
    n0: float = 1.0
    s0: float = 1.0
    prior_var_b0: float = 1.0
    prior_var_b1: float = 1.0
    prior_var_b0i: float = 1.0
    prior_var_eta: float = 1.0
    sample_alpha: bool = True

    def __post_init__(self):
        if self.rank < 1 or self.rank_t < 1:
            raise ValueError(f"ranks must be >= 1, got {self.rank}, {self.rank_t}")
        if self.alpha is None:
            self.alpha = 1.0 / self.rank
        if self.b_lambda is None:
            self.b_lambda = self.a_lambda ** (1.0 / (2 * self.order))
        if self.a_tau is None:
            self.a_tau = self.rank * self.alpha
        if self.b_tau is None:
            self.b_tau = self.alpha * self.rank ** (1.0 / self.order)
        self.validate()

    def validate(self):
        rand._check_q(self.q)
        if self.rank < 1 or self.rank_t < 1:
            raise ValueError("ranks must be >= 1")
        if self.order not in (2, 3):
            raise ValueError("order must be 2 or 3")
        positive = ("alpha", "a_lambda", "b_lambda", "a_tau", "b_tau", "a_zeta", "b_zeta", "spike",
                    "n0", "s0", "prior_var_b0", "prior_var_b1", "prior_var_b0i", "prior_var_eta")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"hyperparameter {name} must be positive, got {getattr(self, name)}")
        # the (phi, tau) block update relies on tau ~ Ga(sum(alpha), b_tau)
        if not math.isclose(self.a_tau, self.rank * self.alpha, rel_tol=1e-9):
            raise ValueError(f"a_tau must equal rank*alpha={self.rank * self.alpha}, got {self.a_tau}")

    @property
    def theta(self) -> float:
        return rand.theta_rho(self.q)[0]

    @property
    def rho(self) -> float:
        return rand.theta_rho(self.q)[1]

    def tau_rate(self, alpha: float, rank: int) -> float:
        """Rate of the global-scale prior at concentration ``alpha``."""
        return self.b_tau * (alpha / self.alpha) * (rank / self.rank) ** (1.0 / self.order)

    def grid(self, rank: int) -> np.ndarray:
        return alpha_grid(rank, self.order)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ShrinkageBlock:
    """A PARAFAC coefficient with its multiway shrinkage (and optional spike-and-slab) state.

    ``w[j]`` and ``pi[j]`` are ``(p_j, R)`` arrays aligned with ``coef.margins[j]``;
    ``lam`` and ``zeta`` are ``(D, R)``.
    """

    coef: ParafacCoef
    w: list[np.ndarray]
    lam: np.ndarray
    phi: np.ndarray
    tau: float
    alpha: float
    pi: list[np.ndarray] | None = None
    zeta: np.ndarray | None = None

    @property
    def rank(self) -> int:
        return self.coef.rank

    def dense(self) -> np.ndarray:
        return materialize(self.coef)

    def copy(self) -> "ShrinkageBlock":
        return ShrinkageBlock(
            self.coef.copy(), [w.copy() for w in self.w], self.lam.copy(), self.phi.copy(),
            self.tau, self.alpha,
            None if self.pi is None else [p.copy() for p in self.pi],
            None if self.zeta is None else self.zeta.copy(),
        )


@dataclass
class McmcState:
    sigma: float
    nu: np.ndarray
    b0: float
    b0i: np.ndarray
    b1: float
    eta: np.ndarray
    B0: ShrinkageBlock | None
    Bt: list[ShrinkageBlock] | None
    theta: float = field(default=0.0)
    rho: float = field(default=1.0)

    def copy(self) -> "McmcState":
        return McmcState(
            self.sigma, self.nu.copy(), self.b0, self.b0i.copy(), self.b1, self.eta.copy(),
            None if self.B0 is None else self.B0.copy(),
            None if self.Bt is None else [b.copy() for b in self.Bt],
            self.theta, self.rho,
        )


def init_state(data: Dataset, hyper: Hyperparams, rng, use_b0: bool = True, use_bt: bool = True) -> McmcState:
    """Sparse-null starting point: small random margins, all spike flags off, scalars at zero."""
    dims = data.dims
    theta, rho = rand.theta_rho(hyper.q)
    lam0 = hyper.a_lambda / hyper.b_lambda

    def block(rank, spike):
        coef = ParafacCoef([rng.normal(0.0, 0.1, (p, rank)) for p in dims])
        if spike:
            w = [np.full((p, rank), hyper.spike) for p in dims]
            pi = [np.zeros((p, rank), dtype=np.int8) for p in dims]
            zeta = np.full((len(dims), rank), hyper.a_zeta / (hyper.a_zeta + hyper.b_zeta))
        else:
            w, pi, zeta = [np.ones((p, rank)) for p in dims], None, None
        return ShrinkageBlock(coef, w, np.full((len(dims), rank), lam0), np.full(rank, 1.0 / rank),
                              1.0, hyper.a_tau / rank, pi, zeta)

    B0 = block(hyper.rank, False) if use_b0 else None
    Bt = [block(hyper.rank_t, True) for _ in range(data.n_visits)] if use_bt else None
    return McmcState(
        sigma=1.0, nu=np.ones(data.n_obs), b0=0.0, b0i=np.zeros(data.n_subjects), b1=0.0,
        eta=np.zeros(data.n_covariates), B0=B0, Bt=Bt, theta=theta, rho=rho,
    )


def scalar_part(state: McmcState, data: Dataset) -> np.ndarray:
    return state.b0 + state.b0i[data.subject] + state.b1 * data.time + data.Z[data.subject] @ state.eta


def tensor_part(state: McmcState, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``<X, B0>`` and ``<X, B_visit>`` (zeros for a switched-off block)."""
    f0 = batch_inner(data.X, state.B0.dense()) if state.B0 is not None else np.zeros(data.n_obs)
    ft = np.zeros(data.n_obs)
    if state.Bt is not None:
        for t, blk in enumerate(state.Bt):
            rows = data.visit_rows(t)
            if rows.size:
                ft[rows] = batch_inner(data.X[rows], blk.dense())
    return f0, ft


def linear_predictors(state: McmcState, data: Dataset, include_theta_nu: bool = False) -> np.ndarray:
    f0, ft = tensor_part(state, data)
    mu = scalar_part(state, data) + f0 + ft
    if include_theta_nu:
        mu = mu + state.theta * state.nu
    return mu


def linear_predictor(state: McmcState, data: Dataset, i: int, t: int, include_theta_nu: bool = False) -> float:
    """Linear predictor of subject ``i`` at visit ``t``; raises ``KeyError`` if unobserved."""
    row = data.row(i, t)
    x = data.X[row]
    mu = state.b0 + state.b0i[i] + state.b1 * data.time[row] + float(data.Z[i] @ state.eta)
    if state.B0 is not None:
        mu += float(np.vdot(x, state.B0.dense()))
    if state.Bt is not None:
        mu += float(np.vdot(x, state.Bt[t].dense()))
    if include_theta_nu:
        mu += state.theta * state.nu[row]
    return mu
