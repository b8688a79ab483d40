"""Gibbs / Metropolis-within-Gibbs sampler for longitudinal tensor quantile regression.

One sweep updates, in order: sigma, the mixing variables nu, b0, the subject
intercepts b0i, b1, the global (alpha, phi, tau) of the visit-invariant block,
its margins (back-fitting over components then modes), then for every visit
the visit-specific globals, the add/delete/swap inclusion move and the visit
margins, then the inclusion probabilities zeta and finally eta.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, asdict

import numpy as np
from scipy import linalg, special

from . import rand
from .inference import ChainOutput
from .model import Dataset, Hyperparams, McmcState, ShrinkageBlock, init_state, scalar_part, tensor_part
from .tensor import margin_design_matrix, materialize

log = logging.getLogger(__name__)

VARIANTS = ("bltqr", "csb1", "csb2")
PHI_FLOOR = 1e-12


class SamplerError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    iterations: int = 3000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    variant: str = "bltqr"
    refresh_every: int = 100
    inclusion_moves: int | None = None
    debug: bool = False

    def __post_init__(self):
        self.variant = self.variant.lower()
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError(f"need 0 <= burn_in < iterations, got {self.burn_in}, {self.iterations}")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    @property
    def n_stored(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))

    def to_dict(self) -> dict:
        return asdict(self)


def _gaussian_draw(rng, V, resid, weights, prior_var):
    """Draw from N(A^-1 b, A^-1), A = diag(1/prior_var) + V' W V, b = V' W resid."""
    Vw = V * weights[:, None]
    A = Vw.T @ V
    A[np.diag_indices_from(A)] += 1.0 / prior_var
    L = linalg.cholesky(A, lower=True, check_finite=False)
    mean = linalg.cho_solve((L, True), Vw.T @ resid, check_finite=False)
    z = rng.standard_normal(mean.size)
    return mean + linalg.solve_triangular(L.T, z, lower=False, check_finite=False)


def log_alpha_weights(grid, scales, n_margin_cells, rate_fn):
    """Log marginal likelihood of each grid concentration, (phi, tau) integrated out.

    With ``psi_r = phi_r * tau`` iid ``Ga(alpha, b_tau(alpha))`` and margin
    cells ``N(0, psi_r * w)``, the integral over ``psi_r`` is a Bessel-K term.
    ``scales[r]`` is ``sum_jk beta_jk^2 / w_jk`` of component ``r``.
    """
    out = np.empty(len(grid))
    order_shift = n_margin_cells / 2.0
    for g, alpha in enumerate(grid):
        b = rate_fn(alpha)
        lam = alpha - order_shift
        total = 0.0
        for c in scales:
            c = max(c, 1e-300)
            total += (alpha * math.log(b) - special.gammaln(alpha) + math.log(2.0)
                      + 0.5 * lam * math.log(c / (2.0 * b)) + rand.log_besselk(lam, math.sqrt(2.0 * b * c)))
        out[g] = total
    return out


class GibbsSampler:
    """Owns one chain: data, hyperparameters, state and cached linear-predictor pieces."""

    def __init__(self, data: Dataset, hyper: Hyperparams, config: SamplerConfig | None = None,
                 state: McmcState | None = None, rng=None):
        self.data = data
        self.hyper = hyper
        self.config = config or SamplerConfig()
        self.rng = rng if rng is not None else rand.make_rng(self.config.seed)
        if hyper.order != len(data.dims):
            raise ValueError(f"hyperparameter order {hyper.order} != image order {len(data.dims)}")
        if state is None:
            state = init_state(data, hyper, self.rng,
                               use_b0=self.config.variant != "csb1", use_bt=self.config.variant != "csb2")
        self.state = state
        self._visit_rows = [data.visit_rows(t) for t in range(data.n_visits)]
        self.refresh()

    # ------------------------------------------------------------------ caches

    def refresh(self):
        self.scal = scalar_part(self.state, self.data)
        self.f0, self.ft = tensor_part(self.state, self.data)

    def _weights(self, rows=slice(None)):
        s = self.state
        return 1.0 / (s.rho**2 * s.sigma * s.nu[rows])

    # ------------------------------------------------------------------ scalars

    def sigma_conditional(self):
        """``(a, b)`` with sigma ~ IG(a/2, b/2); each record contributes 1/2 from its normal and 1 from nu."""
        s, d, h = self.state, self.data, self.hyper
        mu = self.scal + self.f0 + self.ft + s.theta * s.nu
        a = h.n0 + 3.0 * d.n_obs
        b = h.s0 + np.sum((d.y - mu) ** 2 / s.nu) / s.rho**2 + 2.0 * np.sum(s.nu)
        return a, b

    def update_sigma(self):
        a, b = self.sigma_conditional()
        assert b > 0
        self.state.sigma = float(rand.inverse_gamma(self.rng, a / 2.0, b / 2.0))

    def nu_params(self):
        s = self.state
        resid = self.data.y - self.scal - self.f0 - self.ft
        chi = resid**2 / (s.rho**2 * s.sigma)
        psi = s.theta**2 / (s.rho**2 * s.sigma) + 2.0 / s.sigma
        return chi, np.full_like(chi, psi)

    def update_nu(self):
        chi, psi = self.nu_params()
        self.state.nu = np.asarray(rand.sample_gig(self.rng, 0.5, chi, psi), dtype=float)

    def _resid_all(self):
        s = self.state
        return self.data.y - self.scal - self.f0 - self.ft - s.theta * s.nu

    def b0_conditional(self):
        wts = self._weights()
        resid = self._resid_all() + self.state.b0
        var = 1.0 / (wts.sum() + 1.0 / self.hyper.prior_var_b0)
        return var * np.dot(wts, resid), var

    def update_b0(self):
        mean, var = self.b0_conditional()
        new = mean + math.sqrt(var) * self.rng.standard_normal()
        self.scal += new - self.state.b0
        self.state.b0 = float(new)

    def b0i_conditional(self):
        d = self.data
        wts = self._weights()
        old = self.state.b0i[d.subject]
        resid = self._resid_all() + old
        prec = np.bincount(d.subject, weights=wts, minlength=d.n_subjects) + 1.0 / self.hyper.prior_var_b0i
        var = 1.0 / prec
        mean = var * np.bincount(d.subject, weights=wts * resid, minlength=d.n_subjects)
        return mean, var

    def update_b0i(self):
        mean, var = self.b0i_conditional()
        new = mean + np.sqrt(var) * self.rng.standard_normal(mean.size)
        d = self.data
        self.scal += new[d.subject] - self.state.b0i[d.subject]
        self.state.b0i = new

    def b1_conditional(self):
        d = self.data
        wts = self._weights()
        resid = self._resid_all() + self.state.b1 * d.time
        var = 1.0 / (np.dot(wts, d.time**2) + 1.0 / self.hyper.prior_var_b1)
        return var * np.dot(wts * d.time, resid), var

    def update_b1(self):
        mean, var = self.b1_conditional()
        new = mean + math.sqrt(var) * self.rng.standard_normal()
        self.scal += (new - self.state.b1) * self.data.time
        self.state.b1 = float(new)

    def eta_conditional(self):
        d, s = self.data, self.state
        Zr = d.Z[d.subject]
        wts = self._weights()
        resid = self._resid_all() + Zr @ s.eta
        prec = (Zr * wts[:, None]).T @ Zr + np.eye(d.n_covariates) / self.hyper.prior_var_eta
        cov = linalg.inv(prec)
        return cov @ (Zr.T @ (wts * resid)), cov

    def update_eta(self):
        d = self.data
        if d.n_covariates == 0:
            return
        Zr = d.Z[d.subject]
        wts = self._weights()
        resid = self._resid_all() + Zr @ self.state.eta
        new = _gaussian_draw(self.rng, Zr, resid, wts, self.hyper.prior_var_eta)
        self.scal += Zr @ (new - self.state.eta)
        self.state.eta = new

    # ------------------------------------------------------------------ tensor blocks

    def update_globals(self, blk: ShrinkageBlock):
        """Griddy-Gibbs draw of alpha, then (phi, tau) through independent psi_r draws."""
        h = self.hyper
        R = blk.rank
        margins = blk.coef.margins
        scales = np.array([sum(np.sum(m[:, r] ** 2 / w[:, r]) for m, w in zip(margins, blk.w)) for r in range(R)])
        P = sum(m.shape[0] for m in margins)

        def rate(a):
            return h.tau_rate(a, R)

        if h.sample_alpha and R > 1:
            grid = h.grid(R)
            logw = log_alpha_weights(grid, scales, P, rate)
            prob = np.exp(logw - logw.max())
            blk.alpha = float(grid[self.rng.choice(grid.size, p=prob / prob.sum())])
        elif h.sample_alpha:
            blk.alpha = 1.0
        psi = np.array([
            rand.sample_gig(self.rng, blk.alpha - P / 2.0, max(c, 1e-300), 2.0 * rate(blk.alpha)) for c in scales
        ])
        blk.tau = float(psi.sum())
        blk.phi = psi / blk.tau

    def _margin_sweep(self, blk: ShrinkageBlock, X, rows, fit_other, fit_self, spike_slab: bool):
        """Back-fit every (r, j) margin of ``blk``; returns the updated per-row fit of ``blk``."""
        h, s = self.hyper, self.state
        base = self.data.y[rows] - self.scal[rows] - fit_other - s.theta * s.nu[rows]
        wts = self._weights(rows)
        fit = fit_self.copy()
        for r in range(blk.rank):
            s2 = max(blk.phi[r], PHI_FLOOR) * blk.tau
            for j in range(blk.coef.order):
                beta = blk.coef.margins[j][:, r]
                p_j = beta.size
                if spike_slab:
                    slab = blk.pi[j][:, r] == 1
                    n_slab = int(slab.sum())
                    l1 = np.abs(beta[slab]).sum()
                    blk.lam[j, r] = float(rand.gamma(self.rng, h.a_lambda + n_slab, h.b_lambda + l1 / math.sqrt(s2)))
                    if n_slab:
                        blk.w[j][slab, r] = rand.sample_gig(self.rng, 0.5, beta[slab] ** 2 / s2,
                                                            np.full(n_slab, blk.lam[j, r] ** 2))
                else:
                    l1 = np.abs(beta).sum()
                    blk.lam[j, r] = float(rand.gamma(self.rng, h.a_lambda + p_j, h.b_lambda + l1 / math.sqrt(s2)))
                    blk.w[j][:, r] = rand.sample_gig(self.rng, 0.5, beta**2 / s2, np.full(p_j, blk.lam[j, r] ** 2))
                V = margin_design_matrix(X, blk.coef, r, j)
                comp = V @ beta
                resid = base - (fit - comp)
                new = _gaussian_draw(self.rng, V, resid, wts, s2 * blk.w[j][:, r])
                fit += V @ (new - beta)
                blk.coef.margins[j][:, r] = new
        return fit

    def update_b0_globals(self):
        if self.state.B0 is not None:
            self.update_globals(self.state.B0)

    def update_b0_margins(self):
        blk = self.state.B0
        if blk is None:
            return
        rows = slice(None)
        self.f0 = self._margin_sweep(blk, self.data.X, rows, self.ft, self.f0, spike_slab=False)

    def update_bt_globals(self, t: int):
        self.update_globals(self.state.Bt[t])

    def update_bt_margins(self, t: int):
        blk = self.state.Bt[t]
        rows = self._visit_rows[t]
        if rows.size == 0:
            X = np.zeros((0,) + self.data.dims)
            self._margin_sweep(blk, X, rows, np.zeros(0), np.zeros(0), spike_slab=True)
            return
        self.ft[rows] = self._margin_sweep(blk, self.data.X[rows], rows, self.f0[rows], self.ft[rows],
                                           spike_slab=True)

    def update_bt_inclusion(self, t: int):
        blk = self.state.Bt[t]
        for r in range(blk.rank):
            s2 = max(blk.phi[r], PHI_FLOOR) * blk.tau
            for j in range(blk.coef.order):
                inclusion_moves(self.rng, blk, j, r, s2, self.hyper.spike, self._n_moves(blk.coef.dims[j]))

    def _n_moves(self, p_j: int) -> int:
        return p_j if self.config.inclusion_moves is None else self.config.inclusion_moves

    def update_zeta(self, t: int):
        blk = self.state.Bt[t]
        h = self.hyper
        for j, pi in enumerate(blk.pi):
            n1 = pi.sum(axis=0)
            n0 = pi.shape[0] - n1
            blk.zeta[j] = rand.beta(self.rng, h.a_zeta + n1, h.b_zeta + n0)

    # ------------------------------------------------------------------ sweep

    def sweep(self):
        s = self.state
        self.update_sigma()
        self.update_nu()
        self.update_b0()
        self.update_b0i()
        self.update_b1()
        if s.B0 is not None:
            self.update_b0_globals()
            self.update_b0_margins()
        if s.Bt is not None:
            for t in range(len(s.Bt)):
                self.update_bt_globals(t)
                self.update_bt_inclusion(t)
                self.update_bt_margins(t)
            for t in range(len(s.Bt)):
                self.update_zeta(t)
        self.update_eta()

    def run(self, progress: bool = False) -> ChainOutput:
        cfg, d = self.config, self.data
        K = cfg.n_stored
        T = d.n_visits
        s = self.state
        draws = {
            "sigma": np.empty(K), "b0": np.empty(K), "b1": np.empty(K),
            "b0i": np.empty((K, d.n_subjects)), "eta": np.empty((K, d.n_covariates)),
        }
        if s.B0 is not None:
            draws["B0"] = np.empty((K,) + d.dims)
            draws["tau0"] = np.empty(K)
        if s.Bt is not None:
            draws["Bt"] = np.empty((K, T) + d.dims)
            draws["taut"] = np.empty((K, T))
            draws["pi"] = np.empty((K, T, self.hyper.rank_t, sum(d.dims)), dtype=np.int8)
        start = time.perf_counter()
        k = 0
        for it in range(cfg.iterations):
            try:
                self.sweep()
                if (it + 1) % cfg.refresh_every == 0:
                    self.refresh()
                if cfg.debug:
                    check_invariants(self.state, self.hyper.spike)
            except Exception as exc:
                raise SamplerError(f"iteration {it}: {type(exc).__name__}: {exc}") from exc
            if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
                self._store(draws, k)
                k += 1
            if progress and (it + 1) % 500 == 0:
                log.info("iteration %d/%d (%.1fs)", it + 1, cfg.iterations, time.perf_counter() - start)
        elapsed = time.perf_counter() - start
        manifest = {
            "config": cfg.to_dict(),
            "hyper": self.hyper.to_dict(),
            "dims": list(d.dims),
            "n_visits": T,
            "n_subjects": d.n_subjects,
            "n_obs": d.n_obs,
            "timing_seconds": round(elapsed, 3),
        }
        return ChainOutput(draws=draws, manifest=manifest)

    def _store(self, draws, k):
        s = self.state
        draws["sigma"][k] = s.sigma
        draws["b0"][k] = s.b0
        draws["b1"][k] = s.b1
        draws["b0i"][k] = s.b0i
        draws["eta"][k] = s.eta
        if s.B0 is not None:
            draws["B0"][k] = materialize(s.B0.coef)
            draws["tau0"][k] = s.B0.tau
        if s.Bt is not None:
            for t, blk in enumerate(s.Bt):
                draws["Bt"][k, t] = materialize(blk.coef)
                draws["taut"][k, t] = blk.tau
                draws["pi"][k, t] = np.concatenate(blk.pi, axis=0).T


def inclusion_moves(rng, blk: ShrinkageBlock, j: int, r: int, s2: float, spike: float, n_moves: int = 1) -> int:
    """Add/delete/swap Metropolis-Hastings moves on the inclusion flags of margin (j, r).

    Flipped-on entries draw ``w`` from ``Exp(lam^2 / 2)`` and flipped-off entries
    take the spike value, so the ``w`` prior and proposal densities cancel; the
    ratio keeps the Gaussian margin likelihood, the Bernoulli prior and the
    move-selection probabilities. Returns the number of accepted moves.
    """
    pi_col = blk.pi[j][:, r]
    w_col = blk.w[j][:, r]
    chi2 = (blk.coef.margins[j][:, r] ** 2 / s2).tolist()
    w = w_col.tolist()
    ones = [k for k, v in enumerate(pi_col.tolist()) if v == 1]
    zeros = [k for k, v in enumerate(pi_col.tolist()) if v == 0]
    zeta = min(max(float(blk.zeta[j, r]), 1e-12), 1.0 - 1e-12)
    log_odds = math.log(zeta) - math.log1p(-zeta)
    scale = 2.0 / float(blk.lam[j, r]) ** 2
    u = rng.random((n_moves, 4)).tolist()
    slab_draws = (rng.standard_exponential(n_moves) * scale).tolist()
    accepted = 0
    for m in range(n_moves):
        n0, n1 = len(zeros), len(ones)
        moves = _feasible_moves(n0, n1)
        if not moves:
            break
        um, u0, u1, ua = u[m]
        move = moves[int(um * len(moves))]
        if move == "add":
            a = int(u0 * n0)
            k_on, k_off = zeros[a], None
            log_ratio = (math.log(len(moves)) + math.log(n0)
                         - math.log(len(_feasible_moves(n0 - 1, n1 + 1))) - math.log(n1 + 1) + log_odds)
        elif move == "delete":
            b = int(u1 * n1)
            k_on, k_off = None, ones[b]
            log_ratio = (math.log(len(moves)) + math.log(n1)
                         - math.log(len(_feasible_moves(n0 + 1, n1 - 1))) - math.log(n0 + 1) - log_odds)
        else:
            a, b = int(u0 * n0), int(u1 * n1)
            k_on, k_off = zeros[a], ones[b]
            log_ratio = 0.0
        if k_on is not None:
            w_on = slab_draws[m]
            log_ratio += _log_normal_ratio(chi2[k_on], w_on, w[k_on])
        if k_off is not None:
            log_ratio += _log_normal_ratio(chi2[k_off], spike, w[k_off])
        if ua > 0.0 and math.log(ua) < log_ratio:
            accepted += 1
            if k_on is not None:
                w[k_on] = w_on
                zeros.remove(k_on)
                ones.append(k_on)
            if k_off is not None:
                w[k_off] = spike
                ones.remove(k_off)
                zeros.append(k_off)
            # keep index lists ordered so the move choice is a function of the flags only
            zeros.sort()
            ones.sort()
    if accepted:
        w_col[:] = w
        pi_col[:] = 0
        pi_col[ones] = 1
    return accepted


def _feasible_moves(n_zero: int, n_one: int) -> list[str]:
    moves = []
    if n_zero:
        moves.append("add")
    if n_one:
        moves.append("delete")
    if n_zero and n_one:
        moves.append("swap")
    return moves


def _log_normal_ratio(x2_over_s2, w_new, w_old):
    """log N(x | 0, s2 w_new) - log N(x | 0, s2 w_old), given x^2 / s2."""
    return -0.5 * (math.log(w_new / w_old) + x2_over_s2 * (1.0 / w_new - 1.0 / w_old))


def check_invariants(state: McmcState, spike: float):
    assert state.sigma > 0 and np.all(state.nu > 0)
    blocks = ([state.B0] if state.B0 is not None else []) + (state.Bt or [])
    for blk in blocks:
        assert blk.tau > 0 and np.all(blk.lam > 0)
        assert abs(blk.phi.sum() - 1.0) < 1e-12
        for w in blk.w:
            assert np.all(w > 0)
        if blk.pi is not None:
            for w, pi in zip(blk.w, blk.pi):
                assert np.all((pi == 0) == (w == spike))


def run_chain(config: SamplerConfig, data: Dataset, hyper: Hyperparams, progress: bool = False) -> ChainOutput:
    return GibbsSampler(data, hyper, config).run(progress=progress)
