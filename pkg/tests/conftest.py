import math

import numpy as np
import pytest
from scipy import stats

from bltqr import rand
from bltqr.model import Dataset, Hyperparams
from bltqr.sampler import GibbsSampler, SamplerConfig

REPORT: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(REPORT):
            terminalreporter.write_line(line)


def tiny_dataset(seed=0, n=8, n_visits=2, dims=(3, 3), n_cov=1, drop=()):
    """Random longitudinal records; ``drop`` lists (subject, visit) pairs left unobserved."""
    rng = np.random.default_rng(seed)
    pairs = [(i, t) for i in range(n) for t in range(n_visits) if (i, t) not in set(drop)]
    subj = np.array([p[0] for p in pairs])
    vis = np.array([p[1] for p in pairs])
    X = rng.standard_normal((len(pairs),) + tuple(dims))
    y = rng.standard_normal(len(pairs)) * 2.0
    Z = rng.standard_normal((n, n_cov))
    return Dataset(y, X, subj, vis, vis.astype(float), Z, n, n_visits)


def frozen_tiny_sampler(seed=0, variant="bltqr", spike=1e-4, q=0.3):
    """A sampler on a tiny dataset with a random, fixed non-default state."""
    data = tiny_dataset(seed)
    hyper = Hyperparams(q=q, rank=1, rank_t=1, order=2, spike=spike)
    smp = GibbsSampler(data, hyper, SamplerConfig(iterations=2, burn_in=0, seed=seed, variant=variant))
    rng = np.random.default_rng(seed + 1000)
    s = smp.state
    s.sigma = 0.7
    s.nu = rng.gamma(2.0, 0.5, data.n_obs)
    s.b0, s.b1 = 0.3, 0.2
    s.b0i = rng.normal(0.0, 0.5, data.n_subjects)
    s.eta = rng.normal(0.0, 0.5, data.n_covariates)
    blocks = ([s.B0] if s.B0 is not None else []) + (s.Bt or [])
    for blk in blocks:
        for m in blk.coef.margins:
            m[:] = rng.normal(0.0, 0.5, m.shape)
    smp.refresh()
    return smp, data, hyper


def dense_predictor(state, data):
    """Linear predictor (without theta*nu) by explicit per-record dense sums."""
    out = np.empty(data.n_obs)
    B0 = None if state.B0 is None else state.B0.dense()
    for k in range(data.n_obs):
        i, t = data.subject[k], data.visit[k]
        mu = state.b0 + state.b0i[i] + state.b1 * data.time[k] + float(np.sum(data.Z[i] * state.eta))
        if B0 is not None:
            mu += float(np.sum(data.X[k] * B0))
        if state.Bt is not None:
            mu += float(np.sum(data.X[k] * state.Bt[t].dense()))
        out[k] = mu
    return out


def log_joint(state, data, hyper):
    """Log joint density of y, nu, sigma and the scalar effects (tensor priors omitted)."""
    theta, rho = rand.theta_rho(hyper.q)
    mu = dense_predictor(state, data) + theta * state.nu
    sd = np.sqrt(rho**2 * state.sigma * state.nu)
    lp = np.sum(stats.norm.logpdf(data.y, mu, sd))
    lp += np.sum(stats.expon.logpdf(state.nu, scale=state.sigma))
    lp += stats.invgamma.logpdf(state.sigma, hyper.n0 / 2.0, scale=hyper.s0 / 2.0)
    lp += stats.norm.logpdf(state.b0, 0.0, math.sqrt(hyper.prior_var_b0))
    lp += stats.norm.logpdf(state.b1, 0.0, math.sqrt(hyper.prior_var_b1))
    lp += np.sum(stats.norm.logpdf(state.b0i, 0.0, math.sqrt(hyper.prior_var_b0i)))
    lp += np.sum(stats.norm.logpdf(state.eta, 0.0, math.sqrt(hyper.prior_var_eta)))
    return float(lp)


@pytest.fixture
def rng():
    return rand.make_rng(12345)
