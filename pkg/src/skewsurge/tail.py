"""Covariate-parameterized GPD tail for threshold-exceeding skew surges.

The tail of the skew-surge distribution above the monthly threshold u_j is

    P(Y > y) = lambda_(d,x) * [1 + xi * (y - u_j) / sigma_(d,x)]_+ ** (-1/xi)

with a single site-level shape xi. The exceedance rate lambda follows a
logit-linear model in a within-month day term, a seasonal harmonic of the
standardized peak tide, and optionally a long-term trend in standardized
year (families R1/R2) or GMT anomaly (R3/R4); even-numbered families give
each season its own trend slope. The scale sigma is a seasonal harmonic
plus a linear peak-tide term, with the analogous optional trends (S1-S4).

Below u_j the distribution is the tide-banded empirical body; the combined
CDF is evaluated by :func:`eval_cdf`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .body import eval_body_cdf
from .data import SEASON_INDEX_OF_MONTH

RATE_FAMILIES = ("R0", "R1", "R2", "R3", "R4")
SCALE_FAMILIES = ("S0", "S1", "S2", "S3", "S4")

# Families whose trend covariate is the standardized year vs the GMT anomaly;
# even-numbered families carry one slope per season (winter..autumn).
YEAR_FAMILIES = frozenset({"R1", "R2", "S1", "S2"})
GMT_FAMILIES = frozenset({"R3", "R4", "S3", "S4"})
SEASONAL_FAMILIES = frozenset({"R2", "R4", "S2", "S4"})

_TWO_PI_OVER_F = 2.0 * np.pi / 365.0


def logit(p):
    """Log-odds of a probability in (0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("logit requires 0 < p < 1")
    out = np.log(p / (1.0 - p))
    return out if out.ndim else float(out)


def inv_logit(t):
    """Inverse of :func:`logit`, numerically stable for large |t|."""
    t = np.asarray(t, dtype=float)
    # np.where evaluates both branches; the off-branch may overflow harmlessly.
    with np.errstate(over="ignore", invalid="ignore"):
        out = np.where(
            t >= 0, 1.0 / (1.0 + np.exp(-t)), np.exp(t) / (1.0 + np.exp(t))
        )
    return out if out.ndim else float(out)


def _harmonic(d, phase):
    return np.sin(_TWO_PI_OVER_F * (np.asarray(d, dtype=float) - phase))


@dataclass
class RateParams:
    """Exceedance-rate model parameters plus the data standardizers.

    ``month_mean_day`` holds the observed mean day-of-month per month
    (the centering constant for the day term); ``tide_mean``/``tide_sd``
    standardize peak tide. ``delta`` is a scalar for R1/R3, a length-4
    seasonal array (winter, spring, summer, autumn) for R2/R4, unused
    for R0.
    """

    family: str = "R0"
    lam: float = 0.05
    beta_day: float = 0.0
    phi_day: float = 0.0
    alpha_tide: float = 0.0
    beta_tide: float = 0.0
    phi_tide: float = 0.0
    tide_mean: float = 0.0
    tide_sd: float = 1.0
    month_mean_day: np.ndarray = field(default_factory=lambda: np.full(12, 15.5))
    delta: float | np.ndarray | None = None

    def __post_init__(self):
        if self.family not in RATE_FAMILIES:
            raise ValueError(f"unknown rate family {self.family!r}")
        self.month_mean_day = np.asarray(self.month_mean_day, dtype=float)
        if self.family in SEASONAL_FAMILIES and self.delta is not None:
            self.delta = np.asarray(self.delta, dtype=float)

    def to_dict(self):
        d = {
            "family": self.family,
            "lam": self.lam,
            "beta_day": self.beta_day,
            "phi_day": self.phi_day,
            "alpha_tide": self.alpha_tide,
            "beta_tide": self.beta_tide,
            "phi_tide": self.phi_tide,
            "tide_mean": self.tide_mean,
            "tide_sd": self.tide_sd,
            "month_mean_day": self.month_mean_day.tolist(),
        }
        if self.delta is not None:
            d["delta"] = (
                self.delta.tolist() if isinstance(self.delta, np.ndarray)
                else self.delta
            )
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "month_mean_day" in d:
            d["month_mean_day"] = np.asarray(d["month_mean_day"], dtype=float)
        return cls(**d)


@dataclass
class ScaleParams:
    """GPD scale model parameters (metres). ``delta`` as in RateParams."""

    family: str = "S0"
    alpha: float = 0.1
    beta: float = 0.01
    phi: float = 0.0
    gamma: float = 0.0
    delta: float | np.ndarray | None = None

    def __post_init__(self):
        if self.family not in SCALE_FAMILIES:
            raise ValueError(f"unknown scale family {self.family!r}")
        if self.family in SEASONAL_FAMILIES and self.delta is not None:
            self.delta = np.asarray(self.delta, dtype=float)

    def to_dict(self):
        d = {
            "family": self.family,
            "alpha": self.alpha,
            "beta": self.beta,
            "phi": self.phi,
            "gamma": self.gamma,
        }
        if self.delta is not None:
            d["delta"] = (
                self.delta.tolist() if isinstance(self.delta, np.ndarray)
                else self.delta
            )
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TailParams:
    """Complete tail specification: rate family, scale family, shared shape."""

    rate: RateParams
    scale: ScaleParams
    xi: float = 0.0

    def to_dict(self):
        return {"rate": self.rate.to_dict(), "scale": self.scale.to_dict(),
                "xi": self.xi}

    @classmethod
    def from_dict(cls, d):
        return cls(
            rate=RateParams.from_dict(d["rate"]),
            scale=ScaleParams.from_dict(d["scale"]),
            xi=d["xi"],
        )


def _seasonal_lookup(delta, d):
    """Per-record seasonal slope for day-of-year d (via month and season)."""
    from .data import month_of_day

    season = SEASON_INDEX_OF_MONTH[month_of_day(d)]
    return np.asarray(delta, dtype=float)[season]


def _trend(family, delta, d, year_std, gmt):
    if family in ("R0", "S0"):
        return 0.0
    if family in YEAR_FAMILIES:
        cov, cov_name = year_std, "year_std (standardized year)"
    else:
        cov, cov_name = gmt, "gmt (GMT anomaly)"
    if cov is None:
        raise ValueError(f"family {family} needs the {cov_name} covariate")
    if delta is None:
        raise ValueError(f"family {family} has no trend delta set")
    cov = np.asarray(cov, dtype=float)
    if family in SEASONAL_FAMILIES:
        return _seasonal_lookup(delta, d) * cov
    return float(delta) * cov


def rate_logit(rp, d, d_j, j, x, year_std=None, gmt=None):
    """Logit of the per-cycle exceedance probability; broadcasts over arrays.

    Args:
        rp: RateParams.
        d: day of year (1..365).
        d_j: day of month (1..31).
        j: month (1..12).
        x: peak tide (metres).
        year_std, gmt: trend covariates, required by the matching families.
    """
    if rp.tide_sd == 0:
        raise ValueError("tide_sd is zero")
    if not 0.0 < rp.lam < 1.0:
        raise ValueError("baseline rate must be in (0, 1)")
    d = np.asarray(d, dtype=float)
    d_j = np.asarray(d_j, dtype=float)
    j = np.asarray(j)
    x = np.asarray(x, dtype=float)
    g = logit(rp.lam) \
        + (d_j - rp.month_mean_day[j - 1]) * rp.beta_day * _harmonic(d, rp.phi_day) \
        + ((x - rp.tide_mean) / rp.tide_sd) * (
            rp.alpha_tide + rp.beta_tide * _harmonic(d, rp.phi_tide)
        )
    g = g + _trend(rp.family, rp.delta, d, year_std, gmt)
    return g if np.ndim(g) else float(g)


def rate_at(rp, d, d_j, j, x, year_std=None, gmt=None):
    """Per-cycle threshold exceedance probability lambda_(d,x)."""
    return inv_logit(rate_logit(rp, d, d_j, j, x, year_std, gmt))


def scale_at(sp, d, x, year_std=None, gmt=None):
    """GPD scale sigma_(d,x) in metres; broadcasts over arrays.

    Values are returned as computed; callers that need positivity (the
    likelihood, the simulator) must check, since an optimizer may propose
    parameters that push sigma negative somewhere.
    """
    d = np.asarray(d, dtype=float)
    x = np.asarray(x, dtype=float)
    sigma = sp.alpha + sp.beta * _harmonic(d, sp.phi) + sp.gamma * x
    sigma = sigma + _trend(sp.family, sp.delta, d, year_std, gmt)
    return sigma if np.ndim(sigma) else float(sigma)


XI_ZERO_TOL = 1e-8


def gpd_tail_prob(y, u, lam_eff, sigma_eff, xi):
    """P(Y > y) for y above the threshold u.

    Uses the exponential limit for |xi| < 1e-8 and returns 0 beyond the
    upper endpoint u - sigma/xi when xi < 0. Broadcasts over arrays.
    """
    y = np.asarray(y, dtype=float)
    sigma_eff = np.asarray(sigma_eff, dtype=float)
    if np.any(sigma_eff <= 0):
        raise ValueError("sigma must be positive")
    excess = y - np.asarray(u, dtype=float)
    if np.any(excess < 0):
        raise ValueError("gpd_tail_prob requires y > u")
    scaled = excess / sigma_eff
    if abs(xi) < XI_ZERO_TOL:
        surv = np.exp(-scaled)
    else:
        inner = np.maximum(1.0 + xi * scaled, 0.0)
        surv = np.power(inner, -1.0 / xi, where=inner > 0, out=np.zeros_like(inner))
    out = np.asarray(lam_eff, dtype=float) * surv
    return out if out.ndim else float(out)


def gpd_excess_logpdf(excess, sigma_eff, xi):
    """Log density of the GPD for excesses above the threshold.

    Returns -inf where the excess is outside the support (xi < 0 upper
    endpoint). Broadcasts over arrays.
    """
    excess = np.asarray(excess, dtype=float)
    sigma_eff = np.asarray(sigma_eff, dtype=float)
    if np.any(sigma_eff <= 0):
        raise ValueError("sigma must be positive")
    scaled = excess / sigma_eff
    if abs(xi) < XI_ZERO_TOL:
        out = -np.log(sigma_eff) - scaled
    else:
        inner = 1.0 + xi * scaled
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(
                inner > 0,
                -np.log(sigma_eff) - (1.0 + 1.0 / xi) * np.log(np.maximum(inner, 1e-300)),
                -np.inf,
            )
    return out if out.ndim else float(out)


def mean_excess(sigma_eff, xi):
    """Mean excess above the threshold: sigma / (1 - xi); requires xi < 1."""
    if xi >= 1:
        raise ValueError("mean excess undefined for xi >= 1")
    sigma_eff = np.asarray(sigma_eff, dtype=float)
    if np.any(sigma_eff <= 0):
        raise ValueError("sigma must be positive")
    out = sigma_eff / (1.0 - xi)
    return out if out.ndim else float(out)


@dataclass
class SkewSurgeModel:
    """Fitted skew-surge distribution: empirical body + GPD tail + thresholds."""

    body: object  # TideBandedEmpirical
    params: TailParams
    thresholds: object  # MonthlyThresholds

    def cdf(self, y, d, d_j, j, x, year_std=None, gmt=None):
        return eval_cdf(
            y, d, d_j, j, x,
            body=self.body, params=self.params, thresholds=self.thresholds,
            year_std=year_std, gmt=gmt,
        )


def eval_cdf(y, d, d_j, j, x, *, body, params, thresholds, year_std=None, gmt=None):
    """Full skew-surge CDF: empirical body for y <= u_j, GPD tail above.

    All record arguments broadcast. The two branches are evaluated as-is,
    so there is a small jump at u_j wherever the local exceedance rate
    differs from the threshold percentile's complement.
    """
    y = np.asarray(y, dtype=float)
    d = np.asarray(d)
    d_j = np.asarray(d_j)
    j = np.asarray(j)
    x = np.asarray(x, dtype=float)
    y, d, d_j, j, x = np.broadcast_arrays(y, d, d_j, j, x)
    cov_ys = None if year_std is None else np.broadcast_to(np.asarray(year_std, dtype=float), y.shape)
    cov_m = None if gmt is None else np.broadcast_to(np.asarray(gmt, dtype=float), y.shape)
    u = thresholds.for_month(j)
    above = y > u
    out = np.empty(y.shape, dtype=float)
    if (~above).any():
        out[~above] = np.asarray(
            eval_body_cdf(body, y[~above], j[~above], x[~above]), dtype=float
        )
    if above.any():
        sel = above
        lam = rate_at(
            params.rate, d[sel], d_j[sel], j[sel], x[sel],
            None if cov_ys is None else cov_ys[sel],
            None if cov_m is None else cov_m[sel],
        )
        sigma = scale_at(
            params.scale, d[sel], x[sel],
            None if cov_ys is None else cov_ys[sel],
            None if cov_m is None else cov_m[sel],
        )
        out[sel] = 1.0 - gpd_tail_prob(y[sel], u[sel], lam, sigma, params.xi)
    return out if out.ndim else float(out)


def delta_lambda(rp, d, d_j, j, x, covariate, a, b):
    """Change in exceedance probability when the trend covariate moves a -> b.

    ``covariate`` is "year_std" (families R1/R2) or "gmt" (R3/R4); the
    result broadcasts over the record arguments.
    """
    if covariate == "year_std":
        if rp.family not in ("R1", "R2"):
            raise ValueError(f"family {rp.family} has no year trend")
        hi = rate_at(rp, d, d_j, j, x, year_std=b)
        lo = rate_at(rp, d, d_j, j, x, year_std=a)
    elif covariate == "gmt":
        if rp.family not in ("R3", "R4"):
            raise ValueError(f"family {rp.family} has no GMT trend")
        hi = rate_at(rp, d, d_j, j, x, gmt=b)
        lo = rate_at(rp, d, d_j, j, x, gmt=a)
    else:
        raise ValueError(f"unknown covariate {covariate!r}")
    return hi - lo
