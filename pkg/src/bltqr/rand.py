"""Random variate generators and log densities used by the sampler.

All samplers take a :class:`numpy.random.Generator` (``rng``); construct one
with :func:`make_rng` so that a seed fully determines every draw.

Parameterizations
-----------------
* ``gamma(shape, rate)`` has mean ``shape / rate``.
* ``inverse_gamma(shape, scale)`` is ``scale / Gamma(shape, 1)``.
* GIG(lam, chi, psi) has density proportional to
  ``x**(lam - 1) * exp(-(chi / x + psi * x) / 2)`` on ``x > 0``.
* ALD(loc, scale, q) has density ``q(1-q)/scale * exp(-check_q((y - loc)/scale))``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate, optimize, special

MAX_REJECTIONS = 10_000


class DistributionError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def theta_rho(q: float) -> tuple[float, float]:
    """Location shift and scale of the exponential-normal mixture for ALD at level ``q``."""
    _check_q(q)
    theta = (1.0 - 2.0 * q) / (q * (1.0 - q))
    rho = math.sqrt(2.0 / (q * (1.0 - q)))
    return theta, rho


def _check_q(q):
    if not 0.0 < q < 1.0:
        raise DistributionError(f"quantile level must lie in (0, 1), got {q}")


# ---------------------------------------------------------------------------
# standard families


def normal(rng, mean=0.0, sd=1.0, size=None):
    if np.any(np.asarray(sd) < 0):
        raise DistributionError("sd must be nonnegative")
    return rng.normal(mean, sd, size)


def exponential(rng, rate=1.0, size=None):
    rate = np.asarray(rate, dtype=float)
    if np.any(rate <= 0):
        raise DistributionError(f"exponential rate must be positive, got {rate}")
    return rng.standard_exponential(size if size is not None else rate.shape) / rate


def gamma(rng, shape, rate, size=None):
    shape = np.asarray(shape, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise DistributionError(f"gamma shape and rate must be positive, got {shape}, {rate}")
    return rng.gamma(shape, 1.0, size) / rate


def inverse_gamma(rng, shape, scale, size=None):
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise DistributionError(f"inverse-gamma scale must be positive, got {scale}")
    return scale / gamma(rng, shape, 1.0, size)


def beta(rng, a, b, size=None):
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise DistributionError(f"beta parameters must be positive, got {a}, {b}")
    return rng.beta(a, b, size)


def bernoulli(rng, p, size=None):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise DistributionError(f"bernoulli probability outside [0, 1]: {p}")
    return (rng.random(size if size is not None else p.shape) < p).astype(np.int8)


def sample_dirichlet(rng, alphas) -> np.ndarray:
    """Dirichlet draw, stable for small concentrations.

    Uses ``log G_r = log Gamma(a_r + 1) + log(U) / a_r`` so that tiny ``a_r``
    does not underflow every gamma variate to zero.
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim != 1 or alphas.size == 0 or np.any(alphas <= 0):
        raise DistributionError(f"Dirichlet concentrations must be positive, got {alphas}")
    if alphas.size == 1:
        return np.ones(1)
    logg = np.log(rng.gamma(alphas + 1.0)) + np.log(rng.random(alphas.size)) / alphas
    w = np.exp(logg - logg.max())
    return w / w.sum()


# ---------------------------------------------------------------------------
# asymmetric Laplace


def sample_ald(rng, location, scale, q, size=None):
    """ALD draw via ``loc + theta*nu + rho*sqrt(scale*nu)*u`` with ``nu = scale*Exp(1)``."""
    _check_q(q)
    scale = np.asarray(scale, dtype=float)
    if np.any(scale <= 0):
        raise DistributionError(f"ALD scale must be positive, got {scale}")
    theta, rho = theta_rho(q)
    shape = size if size is not None else np.broadcast(np.asarray(location), scale).shape
    nu = scale * rng.standard_exponential(shape)
    u = rng.standard_normal(shape)
    return location + theta * nu + rho * np.sqrt(scale * nu) * u


def check_function(u, q):
    u = np.asarray(u, dtype=float)
    return u * (q - (u < 0))


def ald_logpdf(y, location, scale, q):
    _check_q(q)
    scale = np.asarray(scale, dtype=float)
    return np.log(q * (1.0 - q) / scale) - check_function((np.asarray(y) - location) / scale, q)


# ---------------------------------------------------------------------------
# generalized inverse Gaussian


def log_besselk(order, z):
    """``log K_order(z)`` for scalar ``z > 0``, robust to overflow at large order."""
    order = abs(float(order))
    z = float(z)
    val = special.kve(order, z)
    if np.isfinite(val) and val > 0:
        return math.log(val) - z
    import mpmath

    return float(mpmath.log(mpmath.besselk(order, z)))


def gig_logpdf(x, lam, chi, psi):
    """Normalized GIG log density (requires ``chi > 0`` and ``psi > 0``)."""
    x = np.asarray(x, dtype=float)
    omega = math.sqrt(chi * psi)
    log_norm = (lam / 2.0) * math.log(psi / chi) - math.log(2.0) - log_besselk(lam, omega)
    return log_norm + (lam - 1.0) * np.log(x) - 0.5 * (chi / x + psi * x)


def gig_mean(lam, chi, psi) -> float:
    omega = math.sqrt(chi * psi)
    return math.sqrt(chi / psi) * math.exp(log_besselk(lam + 1.0, omega) - log_besselk(lam, omega))


def _check_gig(lam, chi, psi):
    chi = np.asarray(chi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if np.any(chi < 0) or np.any(psi < 0) or not np.all(np.isfinite(chi)) or not np.all(np.isfinite(psi)):
        raise DistributionError("GIG chi and psi must be finite and nonnegative")
    bad = (chi == 0) & (psi == 0)
    if lam > 0:
        bad |= psi == 0
    elif lam < 0:
        bad |= chi == 0
    else:
        bad |= (chi == 0) | (psi == 0)
    if np.any(bad):
        raise DistributionError(f"improper GIG(lam={lam}) with chi={chi[bad]}, psi={psi[bad]}")
    return chi, psi


def sample_inverse_gaussian(rng, mean, shape):
    """Inverse Gaussian IG(mean, shape) by transformation with one accept/flip step.

    The root is written as ``mean / (1 + f + sqrt(f^2 + 2f))`` which avoids the
    cancellation in the textbook form when ``mean/shape`` is large.
    """
    mean, shape = np.broadcast_arrays(np.asarray(mean, float), np.asarray(shape, float))
    y = rng.standard_normal(mean.shape) ** 2
    f = mean * y / (2.0 * shape)
    x = mean / (1.0 + f + np.sqrt(f * f + 2.0 * f))
    flip = rng.random(mean.shape) * (mean + x) > mean
    return np.where(flip, mean * mean / x, x)


def sample_gig(rng, lam, chi, psi):
    """Draw from GIG(lam, chi, psi); vectorized over ``chi`` and ``psi``.

    Order +-1/2 goes through an exact inverse-Gaussian transform; other orders
    use Devroye's log-concave rejection sampler. ``chi == 0`` (or ``psi == 0``)
    falls back to the gamma (inverse gamma) limit.
    """
    lam = float(lam)
    chi, psi = _check_gig(lam, chi, psi)
    chi, psi = np.broadcast_arrays(chi, psi)
    out = np.empty(chi.shape)
    zero_chi = chi == 0
    zero_psi = psi == 0
    reg = ~(zero_chi | zero_psi)
    if zero_chi.any():
        out[zero_chi] = rng.gamma(lam, 1.0, zero_chi.sum()) * 2.0 / psi[zero_chi]
    if zero_psi.any():
        out[zero_psi] = 0.5 * chi[zero_psi] / rng.gamma(-lam, 1.0, zero_psi.sum())
    if reg.any():
        c, p = chi[reg], psi[reg]
        if abs(lam) == 0.5:
            # 1/X ~ GIG(-lam, psi, chi); GIG(-1/2, a, b) is IG(sqrt(a/b), a)
            if lam > 0:
                out[reg] = 1.0 / sample_inverse_gaussian(rng, np.sqrt(p / c), p)
            else:
                out[reg] = sample_inverse_gaussian(rng, np.sqrt(c / p), c)
        else:
            out[reg] = [sample_gig_devroye(rng, lam, ci, pi) for ci, pi in zip(c.ravel(), p.ravel())]
    return out if out.ndim else float(out)


def sample_gig_devroye(rng, lam: float, chi: float, psi: float) -> float:
    """Scalar GIG draw by Devroye's (2014) rejection method on the log scale."""
    omega = math.sqrt(chi * psi)
    scale = math.sqrt(chi / psi)
    z = _devroye_two_param(rng, abs(lam), omega)
    if z is None:
        return _gig_inverse_cdf(rng, lam, chi, psi)
    return scale * (z if lam >= 0 else 1.0 / z)


def _devroye_two_param(rng, lam, omega):
    """Draw from density ~ x^(lam-1) exp(-omega (x + 1/x) / 2), lam >= 0."""
    alpha = math.sqrt(omega * omega + lam * lam) - lam

    def logf(x):
        return -alpha * (math.cosh(x) - 1.0) - lam * (math.expm1(x) - x)

    def dlogf(x):
        return -alpha * math.sinh(x) - lam * math.expm1(x)

    v = -logf(1.0)
    if 0.5 <= v <= 2.0:
        t = 1.0
    elif v > 2.0:
        t = math.sqrt(2.0 / (alpha + lam))
    else:
        t = math.log(4.0 / (alpha + 2.0 * lam))

    v = -logf(-1.0)
    if 0.5 <= v <= 2.0:
        s = 1.0
    elif v > 2.0:
        s = math.sqrt(4.0 / (alpha * math.cosh(1.0) + lam))
    else:
        s = math.log1p(1.0 / alpha + math.sqrt(1.0 / alpha**2 + 2.0 / alpha)) if alpha > 0 else math.inf
        if lam > 0:
            s = min(1.0 / lam, s)

    eta, zeta = -logf(t), -dlogf(t)
    theta, xi = -logf(-s), dlogf(-s)
    p, r = 1.0 / xi, 1.0 / zeta
    td = t - r * eta
    sd = s - p * theta
    qq = td + sd
    total = p + qq + r

    for _ in range(MAX_REJECTIONS):
        u, v, w = rng.random(3)
        if u * total < qq:
            x = -sd + qq * v
        elif u * total < qq + r:
            x = td - r * math.log(v)
        else:
            x = -sd + p * math.log(v)
        if -sd <= x <= td:
            env = 1.0
        elif x > td:
            env = math.exp(-eta - zeta * (x - t))
        else:
            env = math.exp(-theta + xi * (x + s))
        if w * env <= math.exp(logf(x)):
            return math.exp(x) * (lam / omega + math.sqrt(1.0 + (lam / omega) ** 2))
    return None


def _gig_inverse_cdf(rng, lam, chi, psi) -> float:
    """Fallback: invert the numerically integrated CDF at one uniform."""
    mode = _gig_mode(lam, chi, psi)
    log_peak = (lam - 1.0) * math.log(mode) - 0.5 * (chi / mode + psi * mode)

    def dens(x):
        return math.exp((lam - 1.0) * math.log(x) - 0.5 * (chi / x + psi * x) - log_peak) if x > 0 else 0.0

    total = integrate.quad(dens, 0.0, mode)[0] + integrate.quad(dens, mode, math.inf)[0]
    target = rng.random() * total

    def cdf_gap(x):
        if x <= mode:
            return integrate.quad(dens, 0.0, x)[0] - target
        return integrate.quad(dens, 0.0, mode)[0] + integrate.quad(dens, mode, x)[0] - target

    hi = mode
    while cdf_gap(hi) < 0:
        hi *= 2.0
    return optimize.brentq(cdf_gap, 0.0, hi, xtol=1e-14 * max(hi, 1.0), rtol=1e-12)


def _gig_mode(lam, chi, psi) -> float:
    if psi == 0:
        return chi / (2.0 * (1.0 - lam))
    return ((lam - 1.0) + math.sqrt((lam - 1.0) ** 2 + chi * psi)) / psi
