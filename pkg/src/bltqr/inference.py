"""Posterior summaries: bands and voxel selection, quantile prediction, DIC, Geweke."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rand

MIN_DRAWS_FOR_BANDS = 20
SCALAR_KEYS = ("sigma", "b0", "b1")


@dataclass
class ChainOutput:
    """Stored post-burn-in draws plus the run manifest.

    ``draws`` maps names to arrays whose first axis indexes the K stored draws:
    ``B0`` (K, *dims), ``Bt`` (K, T, *dims), ``sigma``/``b0``/``b1`` (K,),
    ``b0i`` (K, n), ``eta`` (K, p), ``pi`` (K, T, R_t, sum(dims)), ``tau0``, ``taut``.
    A switched-off block (CsB1 has no ``B0``, CsB2 no ``Bt``) is simply absent.
    """

    draws: dict[str, np.ndarray]
    manifest: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return int(self.draws["sigma"].shape[0])

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.manifest["dims"])

    @property
    def n_visits(self) -> int:
        return int(self.manifest["n_visits"])

    @property
    def q(self) -> float:
        return float(self.manifest["hyper"]["q"])

    def coefficients(self, visit: int) -> np.ndarray:
        """Draws of the total image effect ``B0 + B_visit``, shape (K, *dims)."""
        if not 0 <= visit < self.n_visits:
            raise IndexError(f"visit {visit} out of range for {self.n_visits} visits")
        out = np.zeros((self.n_draws,) + self.dims)
        if "B0" in self.draws:
            out += self.draws["B0"]
        if "Bt" in self.draws:
            out += self.draws["Bt"][:, visit]
        return out

    def posterior_mean(self, visit: int) -> np.ndarray:
        return self.coefficients(visit).mean(axis=0)

    def thinned(self, step: int) -> "ChainOutput":
        return ChainOutput({k: v[::step] for k, v in self.draws.items()}, dict(self.manifest))


@dataclass
class SelectionMap:
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    selected: np.ndarray
    mask: np.ndarray | None = None

    @property
    def n_selected(self) -> int:
        return int(self.selected.sum())


def _band_inputs(chain_or_draws, visit, alpha):
    draws = chain_or_draws.coefficients(visit) if isinstance(chain_or_draws, ChainOutput) else np.asarray(chain_or_draws, float)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if draws.shape[0] < MIN_DRAWS_FOR_BANDS:
        raise ValueError(f"credible bands need at least {MIN_DRAWS_FOR_BANDS} draws, got {draws.shape[0]}")
    est = draws.mean(axis=0)
    lo, hi = np.quantile(draws, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    return est, lo, hi


def _select(lower, upper, mask):
    sel = (lower > 0) | (upper < 0)
    if mask is not None:
        sel &= mask
    return sel


def pointwise_bands(chain, visit: int = 0, alpha: float = 0.1, mask=None) -> SelectionMap:
    """Equal-tailed per-voxel credible intervals; a voxel is selected when its interval excludes 0."""
    est, lo, hi = _band_inputs(chain, visit, alpha)
    mask = None if mask is None else np.asarray(mask, bool)
    return SelectionMap(est, lo, hi, _select(lo, hi, mask), mask)


def mdev_bands(chain, visit: int = 0, alpha: float = 0.1, mask=None) -> SelectionMap:
    """Simultaneous bands from the maximal deviation of pointwise quantiles around the posterior mean.

    ``chain`` is a :class:`ChainOutput` or an array of draws with shape (K, *dims).
    When ``mask`` is given, deviations are maximized over masked voxels only and
    voxels outside it are never selected.
    """
    est, lo, hi = _band_inputs(chain, visit, alpha)
    mask = None if mask is None else np.asarray(mask, bool)
    region = np.ones(est.shape, bool) if mask is None else mask
    if not region.any():
        raise ValueError("mask selects no voxels")
    dev_lo = np.max((est - lo)[region])
    dev_hi = np.max((hi - est)[region])
    lower = est - dev_lo
    upper = est + dev_hi
    return SelectionMap(est, lower, upper, _select(lower, upper, mask), mask)


def _scalar_means(chain: ChainOutput):
    d = chain.draws
    return d["b0"].mean(), d["b1"].mean(), d["b0i"].mean(axis=0), d["eta"].mean(axis=0)


def predict_quantile(chain: ChainOutput, data, known_subjects=None) -> np.ndarray:
    """Posterior-mean q-th quantile of each record (the linear predictor without theta*nu).

    ``known_subjects`` is a per-record boolean; where true, ``data.subject``
    indexes the training subjects and their intercept draws are used, otherwise
    the subject intercept is set to its prior mean 0.
    """
    b0, b1, b0i, eta = _scalar_means(chain)
    pred = b0 + b1 * data.time
    if data.n_covariates:
        pred = pred + data.Z[data.subject] @ eta
    if known_subjects is not None:
        known = np.asarray(known_subjects, bool)
        pred = pred + np.where(known, b0i[np.where(known, data.subject, 0)], 0.0)
    flat = data.X.reshape(data.n_obs, -1)
    for t in range(chain.n_visits):
        rows = data.visit == t
        if rows.any():
            pred[rows] += flat[rows] @ chain.posterior_mean(t).ravel()
    return pred


def _predictor_draws(chain: ChainOutput, data) -> np.ndarray:
    """Linear predictor for every draw and training record, shape (K, N)."""
    d = chain.draws
    mu = d["b0"][:, None] + d["b1"][:, None] * data.time[None, :] + d["b0i"][:, data.subject]
    if data.n_covariates:
        mu = mu + d["eta"] @ data.Z[data.subject].T
    flat = data.X.reshape(data.n_obs, -1)
    for t in range(chain.n_visits):
        rows = np.flatnonzero(data.visit == t)
        if rows.size:
            coef = chain.coefficients(t).reshape(chain.n_draws, -1)
            mu[:, rows] += coef @ flat[rows].T
    return mu


def deviance_draws(chain: ChainOutput, data) -> np.ndarray:
    mu = _predictor_draws(chain, data)
    sigma = chain.draws["sigma"][:, None]
    return -2.0 * rand.ald_logpdf(data.y[None, :], mu, sigma, chain.q).sum(axis=1)


def dic(chain: ChainOutput, data) -> dict:
    """Deviance information criterion with the collapsed ALD likelihood.

    Returns ``{"dic", "dbar", "pd", "dhat"}``; ``dhat`` is evaluated at the posterior
    mean of (b0, b0i, b1, eta, image effects, sigma).
    """
    dev = deviance_draws(chain, data)
    dbar = float(dev.mean())
    mu_hat = _predictor_draws(chain, data).mean(axis=0)
    sigma_hat = chain.draws["sigma"].mean()
    dhat = float(-2.0 * rand.ald_logpdf(data.y, mu_hat, sigma_hat, chain.q).sum())
    pd = dbar - dhat
    return {"dic": dbar + pd, "dbar": dbar, "pd": pd, "dhat": dhat}


def _batch_mean_var(x: np.ndarray) -> np.ndarray:
    """Variance of the segment mean by non-overlapping batch means, ceil(sqrt(m)) batches."""
    m = x.shape[0]
    nb = max(2, math.ceil(math.sqrt(m)))
    size = m // nb
    if size < 1:
        raise ValueError(f"segment of {m} draws is too short for batch means")
    batches = x[: nb * size].reshape((nb, size) + x.shape[1:]).mean(axis=1)
    return batches.var(axis=0, ddof=1) / nb


def geweke_z(draws, first: float = 0.1, last: float = 0.5) -> np.ndarray:
    """Geweke z-scores comparing the first ``first`` and last ``last`` fractions of each column."""
    x = np.asarray(draws, float)
    K = x.shape[0]
    na = int(math.floor(first * K))
    nb = int(math.floor(last * K))
    if na < 4 or nb < 4:
        raise ValueError(f"chain of {K} draws is too short for a Geweke test")
    a, b = x[:na], x[K - nb:]
    with np.errstate(divide="ignore", invalid="ignore"):
        return (a.mean(axis=0) - b.mean(axis=0)) / np.sqrt(_batch_mean_var(a) + _batch_mean_var(b))


def geweke(chain, first: float = 0.1, last: float = 0.5, threshold: float = 1.96) -> dict:
    """Geweke z-scores for every stored coefficient cell and scalar.

    Accepts a :class:`ChainOutput` or a raw (K, ...) array. Columns with zero
    variance (e.g. a block fixed at zero) give NaN and are excluded from
    ``pass_fraction``.
    """
    if isinstance(chain, ChainOutput):
        K = chain.n_draws
        parts = {}
        if "B0" in chain.draws:
            parts["B0"] = chain.draws["B0"].reshape(K, -1)
        if "Bt" in chain.draws:
            parts["Bt"] = chain.draws["Bt"].reshape(K, -1)
        for key in SCALAR_KEYS:
            parts[key] = chain.draws[key].reshape(K, -1)
    else:
        arr = np.asarray(chain, float)
        parts = {"draws": arr.reshape(arr.shape[0], -1)}
    z = {k: geweke_z(v, first, last) for k, v in parts.items()}
    allz = np.concatenate([v.ravel() for v in z.values()])
    finite = np.isfinite(allz)
    frac = float(np.mean(np.abs(allz[finite]) < threshold)) if finite.any() else float("nan")
    return {"z": z, "pass_fraction": frac, "n_tested": int(finite.sum())}
