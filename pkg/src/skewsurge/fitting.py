"""Likelihood inference for the threshold-exceedance skew-surge model.

The per-cycle likelihood is a Bernoulli term for the exceedance indicator
(probability from the rate model) times, for exceedances, the GPD density
of the excess above the monthly threshold (scale from the scale model,
shared shape). An optional Normal penalty on the shape enters as an
additive log-density term; with it enabled the reported log-likelihood is
the penalized objective value.

Fitting is multi-start Nelder-Mead within box bounds followed by an
L-BFGS-B polish using central-difference gradients; standard errors come
from the numerical Hessian at the optimum. Phases are rescaled by 1/365
inside the optimizer so all coordinates move on comparable scales.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import Bounds, minimize

from .data import SEASON_INDEX_OF_MONTH, SEASONS, monthly_thresholds
from .tail import (
    GMT_FAMILIES,
    RATE_FAMILIES,
    SCALE_FAMILIES,
    SEASONAL_FAMILIES,
    XI_ZERO_TOL,
    RateParams,
    ScaleParams,
    TailParams,
    YEAR_FAMILIES,
)

_TWO_PI_OVER_F = 2.0 * np.pi / 365.0

RATE_BASE_NAMES = ("lam", "beta_day", "phi_day", "alpha_tide", "beta_tide", "phi_tide")
SCALE_BASE_NAMES = ("alpha_sigma", "beta_sigma", "phi_sigma", "gamma_sigma")

_BOUNDS = {
    "lam": (1e-6, 1.0 - 1e-6),
    "beta_day": (0.0, 10.0),
    "phi_day": (0.0, 365.0),
    "alpha_tide": (-20.0, 20.0),
    "beta_tide": (0.0, 20.0),
    "phi_tide": (0.0, 365.0),
    "delta_rate": (-20.0, 20.0),
    "alpha_sigma": (1e-6, 10.0),
    "beta_sigma": (0.0, 10.0),
    "phi_sigma": (0.0, 365.0),
    "gamma_sigma": (-5.0, 5.0),
    "delta_sigma": (-5.0, 5.0),
    "xi": (-0.49, 0.999),
}

# Optimizer coordinate divisor: phases move in days and the cycle rate on
# the order of its typical value; everything else is order 1 already.
_PHASE_NAMES = ("phi_day", "phi_tide", "phi_sigma")
_OPT_SCALE = {"phi_day": 365.0, "phi_tide": 365.0, "phi_sigma": 365.0,
              "lam": 0.05}
_SIMPLEX_STEP = {
    "lam": 0.01,
    "beta_day": 0.02,
    "phi_day": 30.0,
    "alpha_tide": 0.05,
    "beta_tide": 0.05,
    "phi_tide": 30.0,
    "delta_rate": 0.05,
    "alpha_sigma": 0.02,
    "beta_sigma": 0.01,
    "phi_sigma": 30.0,
    "gamma_sigma": 0.01,
    "delta_sigma": 0.02,
    "xi": 0.05,
}
_PERTURB_FLOOR = {
    "lam": 0.02,
    "beta_day": 0.05,
    "phi_day": 91.0,
    "alpha_tide": 0.1,
    "beta_tide": 0.05,
    "phi_tide": 91.0,
    "delta_rate": 0.1,
    "alpha_sigma": 0.01,
    "beta_sigma": 0.02,
    "phi_sigma": 91.0,
    "gamma_sigma": 0.02,
    "delta_sigma": 0.02,
    "xi": 0.1,
}

PHASE_INIT_GRID = (0.0, 91.0, 182.0, 273.0)


def _base_key(name):
    """Bounds/step table key for a parameter name (seasonal deltas share one)."""
    if name.startswith("delta_rate"):
        return "delta_rate"
    if name.startswith("delta_sigma"):
        return "delta_sigma"
    return name


def rate_param_names(family):
    if family not in RATE_FAMILIES:
        raise ValueError(f"unknown rate family {family!r}")
    names = list(RATE_BASE_NAMES)
    if family in ("R1", "R3"):
        names.append("delta_rate")
    elif family in ("R2", "R4"):
        names.extend(f"delta_rate_{s}" for s in SEASONS)
    return names


def scale_param_names(family):
    if family not in SCALE_FAMILIES:
        raise ValueError(f"unknown scale family {family!r}")
    names = list(SCALE_BASE_NAMES)
    if family in ("S1", "S3"):
        names.append("delta_sigma")
    elif family in ("S2", "S4"):
        names.extend(f"delta_sigma_{s}" for s in SEASONS)
    return names


def param_names(rate_family, scale_family):
    """Full ordered parameter-name list for a family pair."""
    return rate_param_names(rate_family) + scale_param_names(scale_family) + ["xi"]


@dataclass
class ShapePrior:
    """Normal penalty on the GPD shape, entering the objective as a log-density."""

    mean: float = 0.0119
    variance: float = 0.0343

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("prior variance must be positive")

    def neg_log_density(self, xi):
        return 0.5 * ((xi - self.mean) ** 2 / self.variance
                      + math.log(2.0 * math.pi * self.variance))


@dataclass
class FitConfig:
    """Fitting options: families, optimizer tolerances, starts, prior, context.

    ``frozen`` maps parameter names to fixed values excluded from
    optimization. ``run_length`` is carried along for reporting only.
    """

    rate_family: str = "R0"
    scale_family: str = "S0"
    grad_tol: float = 1e-6
    step_tol: float = 1e-8
    max_iter: int = 10000
    multi_start: int = 5
    shape_prior: ShapePrior | None = None
    run_length: int = 4
    frozen: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.rate_family not in RATE_FAMILIES:
            raise ValueError(f"unknown rate family {self.rate_family!r}")
        if self.scale_family not in SCALE_FAMILIES:
            raise ValueError(f"unknown scale family {self.scale_family!r}")
        if self.grad_tol <= 0 or self.step_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1 or self.multi_start < 1:
            raise ValueError("max_iter and multi_start must be >= 1")
        valid = set(param_names(self.rate_family, self.scale_family))
        bad = set(self.frozen) - valid
        if bad:
            raise ValueError(f"frozen names not in family: {sorted(bad)}")


@dataclass
class FitResult:
    """Maximum-likelihood fit of one family pair on one site.

    ``max_scaled_gradient`` is the largest projected-gradient component
    at the optimum, measured in se-standardized coordinates when the
    Hessian is usable (optimizer-scaled coordinates otherwise); the
    ``converged`` flag is that value against a 1e-3 cutoff.
    """

    site_id: str
    rate_family: str
    scale_family: str
    estimates: dict
    params: TailParams
    loglik: float
    n_obs: int
    n_exceed: int
    n_params: int
    aic: float
    bic: float
    std_errors: dict | None
    conf_intervals: dict | None
    converged: bool
    hessian_ok: bool
    n_iter: int
    n_starts: int
    best_start: int
    max_scaled_gradient: float
    frozen: dict
    run_length: int
    message: str

    def to_dict(self):
        return {
            "site_id": self.site_id,
            "rate_family": self.rate_family,
            "scale_family": self.scale_family,
            "estimates": self.estimates,
            "params": self.params.to_dict(),
            "loglik": self.loglik,
            "n_obs": self.n_obs,
            "n_exceed": self.n_exceed,
            "n_params": self.n_params,
            "aic": self.aic,
            "bic": self.bic,
            "std_errors": self.std_errors,
            "conf_intervals": {k: list(v) for k, v in self.conf_intervals.items()}
            if self.conf_intervals is not None else None,
            "converged": self.converged,
            "hessian_ok": self.hessian_ok,
            "n_iter": self.n_iter,
            "n_starts": self.n_starts,
            "best_start": self.best_start,
            "max_scaled_gradient": self.max_scaled_gradient,
            "frozen": self.frozen,
            "run_length": self.run_length,
            "message": self.message,
        }


@dataclass
class _Prepared:
    """Arrays and precomputed pieces the objective consumes."""

    n: int
    n_exceed: int
    sin_d: np.ndarray
    cos_d: np.ndarray
    day_dev: np.ndarray  # day-of-month minus its monthly mean
    tide_std: np.ndarray  # standardized peak tide
    tide: np.ndarray
    season: np.ndarray
    year_std: np.ndarray | None
    gmt: np.ndarray | None
    bern_sign: np.ndarray  # +1 non-exceedance, -1 exceedance
    exc_idx: np.ndarray
    excess: np.ndarray
    tide_mean: float
    tide_sd: float
    month_mean_day: np.ndarray


def _prepare(series, thresholds, rate_family, scale_family):
    n = len(series)
    if n == 0:
        raise ValueError("empty series")
    tide = series.peak_tide
    tide_mean = float(tide.mean())
    tide_sd = float(tide.std())
    if tide_sd == 0.0:
        raise ValueError("peak tide has zero variance")
    month_mean_day = np.full(12, np.nan)
    for j in range(1, 13):
        sel = series.month == j
        if sel.any():
            month_mean_day[j - 1] = series.day_of_month[sel].mean()
    needs_year = rate_family in YEAR_FAMILIES or scale_family in YEAR_FAMILIES
    needs_gmt = rate_family in GMT_FAMILIES or scale_family in GMT_FAMILIES
    if needs_year and series.year_std is None:
        raise ValueError(
            "family needs the standardized-year covariate; call attach_covariates"
        )
    if needs_gmt and series.gmt is None:
        raise ValueError("family needs the GMT covariate; call attach_covariates")
    u = thresholds.for_month(series.month)
    exceed = series.skew_surge > u
    d = series.day_of_year.astype(float)
    return _Prepared(
        n=n,
        n_exceed=int(exceed.sum()),
        sin_d=np.sin(_TWO_PI_OVER_F * d),
        cos_d=np.cos(_TWO_PI_OVER_F * d),
        day_dev=series.day_of_month - month_mean_day[series.month - 1],
        tide_std=(tide - tide_mean) / tide_sd,
        tide=tide,
        season=SEASON_INDEX_OF_MONTH[series.month],
        year_std=None if series.year_std is None else series.year_std,
        gmt=None if series.gmt is None else series.gmt,
        bern_sign=np.where(exceed, -1.0, 1.0),
        exc_idx=np.flatnonzero(exceed),
        excess=(series.skew_surge - u)[exceed],
        tide_mean=tide_mean,
        tide_sd=tide_sd,
        month_mean_day=month_mean_day,
    )


def _trend_vector(family, values, prefix, data, idx=None):
    """Per-record additive trend for one family from the values dict."""
    if family.endswith("0"):
        return 0.0
    cov = data.year_std if family in YEAR_FAMILIES else data.gmt
    if idx is not None:
        cov = cov[idx]
    if family in SEASONAL_FAMILIES:
        season = data.season if idx is None else data.season[idx]
        delta = np.array([values[f"{prefix}_{s}"] for s in SEASONS])
        return delta[season] * cov
    return values[prefix] * cov


def _nll_values(values, data, rate_family, scale_family, prior):
    """Negative (penalized) log-likelihood from a flat name->value dict.

    Invalid proposals (rate outside (0,1), nonpositive scale anywhere on
    the data hull, scale amplitude exceeding its level, shape at or past 1)
    return +inf so optimizers can back off.
    """
    lam = values["lam"]
    if not 0.0 < lam < 1.0:
        return np.inf
    if not values["alpha_sigma"] > 0.0 or values["beta_sigma"] < 0.0:
        return np.inf
    if values["beta_sigma"] > values["alpha_sigma"]:
        return np.inf
    xi = values["xi"]
    if xi >= 1.0:
        return np.inf
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        phi_d = _TWO_PI_OVER_F * values["phi_day"]
        phi_t = _TWO_PI_OVER_F * values["phi_tide"]
        harm_day = data.sin_d * math.cos(phi_d) - data.cos_d * math.sin(phi_d)
        harm_tide = data.sin_d * math.cos(phi_t) - data.cos_d * math.sin(phi_t)
        g = (
            math.log(lam / (1.0 - lam))
            + data.day_dev * values["beta_day"] * harm_day
            + data.tide_std * (values["alpha_tide"] + values["beta_tide"] * harm_tide)
        )
        g = g + _trend_vector(rate_family, values, "delta_rate", data)
        nll = float(np.logaddexp(0.0, data.bern_sign * g).sum())

        phi_s = _TWO_PI_OVER_F * values["phi_sigma"]
        sigma = (
            values["alpha_sigma"]
            + values["beta_sigma"] * (data.sin_d * math.cos(phi_s)
                                      - data.cos_d * math.sin(phi_s))
            + values["gamma_sigma"] * data.tide
        )
        sigma = sigma + _trend_vector(scale_family, values, "delta_sigma", data)
        if np.min(sigma) <= 0.0:
            return np.inf
        sig_exc = sigma[data.exc_idx]
        scaled = data.excess / sig_exc
        if abs(xi) < XI_ZERO_TOL:
            nll += float(np.log(sig_exc).sum() + scaled.sum())
        else:
            inner = 1.0 + xi * scaled
            if np.min(inner) <= 0.0:
                return np.inf
            nll += float(np.log(sig_exc).sum()
                         + (1.0 + 1.0 / xi) * np.log(inner).sum())
    if prior is not None:
        nll += prior.neg_log_density(xi)
    return nll if np.isfinite(nll) else np.inf


def params_to_values(tp):
    """Flatten TailParams into the name->value dict used by the optimizer."""
    values = {
        "lam": tp.rate.lam,
        "beta_day": tp.rate.beta_day,
        "phi_day": tp.rate.phi_day,
        "alpha_tide": tp.rate.alpha_tide,
        "beta_tide": tp.rate.beta_tide,
        "phi_tide": tp.rate.phi_tide,
        "alpha_sigma": tp.scale.alpha,
        "beta_sigma": tp.scale.beta,
        "phi_sigma": tp.scale.phi,
        "gamma_sigma": tp.scale.gamma,
        "xi": tp.xi,
    }
    if tp.rate.family in ("R1", "R3"):
        values["delta_rate"] = float(tp.rate.delta)
    elif tp.rate.family in SEASONAL_FAMILIES:
        for i, s in enumerate(SEASONS):
            values[f"delta_rate_{s}"] = float(tp.rate.delta[i])
    if tp.scale.family in ("S1", "S3"):
        values["delta_sigma"] = float(tp.scale.delta)
    elif tp.scale.family in SEASONAL_FAMILIES:
        for i, s in enumerate(SEASONS):
            values[f"delta_sigma_{s}"] = float(tp.scale.delta[i])
    return values


def values_to_params(values, rate_family, scale_family, data):
    """Assemble TailParams from a flat dict plus the data standardizers."""
    if rate_family in ("R1", "R3"):
        rate_delta = values["delta_rate"]
    elif rate_family in SEASONAL_FAMILIES:
        rate_delta = np.array([values[f"delta_rate_{s}"] for s in SEASONS])
    else:
        rate_delta = None
    if scale_family in ("S1", "S3"):
        scale_delta = values["delta_sigma"]
    elif scale_family in SEASONAL_FAMILIES:
        scale_delta = np.array([values[f"delta_sigma_{s}"] for s in SEASONS])
    else:
        scale_delta = None
    rate = RateParams(
        family=rate_family,
        lam=values["lam"],
        beta_day=values["beta_day"],
        phi_day=values["phi_day"],
        alpha_tide=values["alpha_tide"],
        beta_tide=values["beta_tide"],
        phi_tide=values["phi_tide"],
        tide_mean=data.tide_mean,
        tide_sd=data.tide_sd,
        month_mean_day=data.month_mean_day.copy(),
        delta=rate_delta,
    )
    scale = ScaleParams(
        family=scale_family,
        alpha=values["alpha_sigma"],
        beta=values["beta_sigma"],
        phi=values["phi_sigma"],
        gamma=values["gamma_sigma"],
        delta=scale_delta,
    )
    return TailParams(rate=rate, scale=scale, xi=values["xi"])


def neg_loglik(params, series, thresholds, shape_prior=None):
    """Negative (penalized) log-likelihood of TailParams on a site series.

    Sums a Bernoulli exceedance term per tidal cycle and a GPD density term
    per exceedance; +inf for invalid parameters.
    """
    data = _prepare(series, thresholds, params.rate.family, params.scale.family)
    return _nll_values(
        params_to_values(params), data,
        params.rate.family, params.scale.family, shape_prior,
    )


@dataclass
class _Layout:
    names: list
    lo: np.ndarray
    hi: np.ndarray
    scale: np.ndarray
    steps: np.ndarray
    frozen: dict


def _build_layout(rate_family, scale_family, frozen):
    names = [n for n in param_names(rate_family, scale_family) if n not in frozen]
    lo = np.array([_BOUNDS[_base_key(n)][0] for n in names])
    hi = np.array([_BOUNDS[_base_key(n)][1] for n in names])
    scale = np.array([_OPT_SCALE.get(_base_key(n), 1.0) for n in names])
    steps = np.array([_SIMPLEX_STEP[_base_key(n)] for n in names])
    return _Layout(names=names, lo=lo, hi=hi, scale=scale, steps=steps,
                   frozen=dict(frozen))


def _vector_to_values(x, layout):
    values = dict(layout.frozen)
    values.update(zip(layout.names, x))
    return values


def _initial_values(data, rate_family, scale_family):
    """Moments-based stationary initial values; trends start at zero."""
    frac = data.n_exceed / data.n
    init = {
        "lam": min(max(frac, 1e-4), 0.5),
        "beta_day": 0.01,
        "phi_day": 0.0,
        "alpha_tide": 0.0,
        "beta_tide": 0.01,
        "phi_tide": 0.0,
        "alpha_sigma": 0.1,
        "beta_sigma": 0.01,
        "phi_sigma": 0.0,
        "gamma_sigma": 0.0,
        "xi": 0.0,
    }
    if data.n_exceed >= 2:
        m = float(data.excess.mean())
        s2 = float(data.excess.var())
        if m > 0 and s2 > 0:
            ratio = m * m / s2
            xi0 = 0.5 * (1.0 - ratio)
            sigma0 = 0.5 * m * (ratio + 1.0)
            init["xi"] = float(np.clip(xi0, -0.45, 0.9))
            init["alpha_sigma"] = float(np.clip(sigma0, 1e-4, 5.0))
    init["beta_sigma"] = min(0.01, 0.5 * init["alpha_sigma"])
    for name in param_names(rate_family, scale_family):
        if name.startswith("delta_"):
            init[name] = 0.0
    return init


def _clip_into(x, layout):
    return np.minimum(np.maximum(x, layout.lo), layout.hi)


def _phase_grid_start(x0, layout, objective):
    """Pick the best common value for all free phases from a coarse grid."""
    phase_idx = [i for i, n in enumerate(layout.names) if _base_key(n) in _PHASE_NAMES]
    if not phase_idx:
        return x0
    best_x, best_f = x0, objective(x0)
    for phi in PHASE_INIT_GRID:
        cand = x0.copy()
        cand[phase_idx] = phi
        f = objective(cand)
        if f < best_f:
            best_x, best_f = cand, f
    return best_x


def _projected_gradient(grad, x, lo, hi, tol=1e-12):
    pg = grad.copy()
    pg[(x <= lo + tol) & (grad > 0)] = 0.0
    pg[(x >= hi - tol) & (grad < 0)] = 0.0
    return pg


def _central_gradient(f, x, lo, hi, f0=None):
    """Central differences with one-sided fallback at the box boundary."""
    g = np.empty_like(x)
    if f0 is None:
        f0 = f(x)
    for i in range(x.size):
        h = 6e-5 * max(abs(x[i]), 0.1)
        up, dn = x[i] + h, x[i] - h
        if up <= hi[i] and dn >= lo[i]:
            xp = x.copy(); xp[i] = up
            xm = x.copy(); xm[i] = dn
            g[i] = (f(xp) - f(xm)) / (2.0 * h)
        elif up <= hi[i]:
            xp = x.copy(); xp[i] = up
            g[i] = (f(xp) - f0) / h
        else:
            xm = x.copy(); xm[i] = dn
            g[i] = (f0 - f(xm)) / h
    return g


def numeric_hessian(f, x, steps):
    """Symmetric central-difference Hessian of f at x with per-axis steps."""
    x = np.asarray(x, dtype=float)
    k = x.size
    h = np.asarray(steps, dtype=float)
    hess = np.empty((k, k))
    f0 = f(x)
    for i in range(k):
        xp = x.copy(); xp[i] += h[i]
        xm = x.copy(); xm[i] -= h[i]
        hess[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / h[i] ** 2
    for i in range(k):
        for j in range(i + 1, k):
            xpp = x.copy(); xpp[i] += h[i]; xpp[j] += h[j]
            xpm = x.copy(); xpm[i] += h[i]; xpm[j] -= h[j]
            xmp = x.copy(); xmp[i] -= h[i]; xmp[j] += h[j]
            xmm = x.copy(); xmm[i] -= h[i]; xmm[j] -= h[j]
            hess[i, j] = hess[j, i] = (
                f(xpp) - f(xpm) - f(xmp) + f(xmm)
            ) / (4.0 * h[i] * h[j])
    return hess


def wald_intervals(hessian, x):
    """Standard errors and 95% intervals from a curvature matrix.

    Returns (se, ci, ok); ok is False when the Hessian is not positive
    definite, in which case se and ci are None.
    """
    x = np.asarray(x, dtype=float)
    hessian = np.asarray(hessian, dtype=float)
    if not np.all(np.isfinite(hessian)):
        return None, None, False
    try:
        np.linalg.cholesky(hessian)
    except np.linalg.LinAlgError:
        return None, None, False
    diag = np.diag(np.linalg.inv(hessian))
    if np.any(diag <= 0):
        return None, None, False
    se = np.sqrt(diag)
    ci = np.stack([x - 1.96 * se, x + 1.96 * se], axis=1)
    return se, ci, True


def _hessian_steps(x, layout):
    rel = 1.22e-4
    return rel * np.maximum(np.abs(x), layout.scale)


def _newton_polish(objective, layout, x, f, max_grad):
    """Damped Newton steps using the CI Hessian to finish the optimization.

    Quasi-Newton polishing can stop (on relative f-improvement) while a
    stiff coordinate still carries a visible gradient; a Newton step
    resolves that without re-running the optimizer. Returns the possibly
    moved (x, f), the scaled projected gradient vector at the final
    point, and the Hessian there.
    """
    s = layout.scale
    zlo, zhi = layout.lo / s, layout.hi / s

    def fz(z):
        return objective(z * s)

    def pgrad(xc):
        g = _central_gradient(fz, xc / s, zlo, zhi)
        return _projected_gradient(g, xc / s, zlo, zhi)

    hess = numeric_hessian(objective, x, _hessian_steps(x, layout))
    gz = pgrad(x)
    moved_any = False
    if np.all(np.isfinite(hess)):
        for _ in range(3):
            if max_grad < 5e-4:
                break
            try:
                dx = np.linalg.solve(hess, -(gz / s))
            except np.linalg.LinAlgError:
                break
            moved = False
            for t in (1.0, 0.5, 0.25):
                cand = np.minimum(np.maximum(x + t * dx, layout.lo), layout.hi)
                fc = objective(cand)
                if np.isfinite(fc) and fc < f:
                    x, f, moved = cand, fc, True
                    break
            if not moved:
                break
            moved_any = True
            gz = pgrad(x)
            max_grad = float(np.max(np.abs(gz))) if gz.size else 0.0
        if moved_any:
            hess = numeric_hessian(objective, x, _hessian_steps(x, layout))
    return x, f, gz, hess


def _optimize_start(x0, objective, layout, config):
    """Nelder-Mead within bounds, then an L-BFGS-B polish; scaled coords."""
    s = layout.scale
    zlo, zhi = layout.lo / s, layout.hi / s

    def fz(z):
        return objective(z * s)

    z0 = x0 / s
    simplex = [z0]
    for i in range(z0.size):
        step = layout.steps[i] / s[i]
        zi = z0.copy()
        zi[i] = min(zi[i] + step, zhi[i])
        if zi[i] - z0[i] < 0.5 * step:
            zi[i] = max(z0[i] - step, zlo[i])
        simplex.append(zi)
    res = minimize(
        fz, z0, method="Nelder-Mead",
        bounds=Bounds(zlo, zhi),
        options={
            "maxiter": config.max_iter,
            "maxfev": config.max_iter,
            "xatol": max(config.step_tol, 1e-7),
            "fatol": 1e-9,
            "adaptive": True,
            "initial_simplex": np.array(simplex),
        },
    )
    nfev = res.nfev
    z_best, f_best = res.x, res.fun
    if not np.isfinite(f_best):
        return z_best * s, np.inf, nfev, np.inf

    def grad_z(z):
        return _central_gradient(fz, z, zlo, zhi)

    # Restarting L-BFGS-B clears its curvature memory; a second round often
    # pushes the gradient below the convergence cutoff when ftol stops the
    # first one early.
    max_grad = np.inf
    for _ in range(3):
        try:
            pol = minimize(
                fz, z_best, method="L-BFGS-B", jac=grad_z,
                bounds=Bounds(zlo, zhi),
                options={"maxiter": 200, "ftol": 1e-13,
                         "gtol": config.grad_tol},
            )
        except (FloatingPointError, np.linalg.LinAlgError):
            break
        nfev += pol.nfev * (1 + 2 * z0.size)
        if np.isfinite(pol.fun) and pol.fun <= f_best:
            z_best, f_best = pol.x, pol.fun
        grad = _projected_gradient(grad_z(z_best), z_best, zlo, zhi)
        max_grad = float(np.max(np.abs(grad))) if grad.size else 0.0
        if max_grad < 5e-4:
            break
    if not np.isfinite(max_grad):
        grad = _projected_gradient(grad_z(z_best), z_best, zlo, zhi)
        max_grad = float(np.max(np.abs(grad))) if grad.size else 0.0
    return z_best * s, f_best, nfev, max_grad


def _perturbed_start(x0, layout, rng):
    span = 0.2 * np.maximum(
        np.abs(x0), [_PERTURB_FLOOR[_base_key(n)] for n in layout.names]
    )
    x = x0 + span * rng.uniform(-1.0, 1.0, size=x0.size)
    x = _clip_into(x, layout)
    # Keep strictly-interior parameters off their open bounds.
    eps = 1e-9
    return np.minimum(np.maximum(x, layout.lo + eps * (layout.hi - layout.lo)),
                      layout.hi - eps * (layout.hi - layout.lo))


def fit_tail(series, config, thresholds=None, init_overrides=None):
    """Fit the tail model by penalized maximum likelihood.

    Runs ``config.multi_start`` optimizations (a moments/phase-grid start
    plus seeded ±20% perturbations of it), keeps the best final objective
    (ties broken by lowest start index), then computes Hessian-based
    standard errors. Requires at least 50 threshold exceedances.
    ``init_overrides`` replaces named initial values, e.g. to warm-start
    a larger family from a nested fit.
    """
    if thresholds is None:
        thresholds = monthly_thresholds(series)
    rf, sf = config.rate_family, config.scale_family
    data = _prepare(series, thresholds, rf, sf)
    if data.n_exceed < 50:
        raise ValueError(
            f"site {series.site_id}: {data.n_exceed} exceedances; need >= 50"
        )
    layout = _build_layout(rf, sf, config.frozen)
    if not layout.names:
        raise ValueError("every parameter is frozen; nothing to fit")

    def objective(x):
        return _nll_values(_vector_to_values(x, layout), data, rf, sf,
                           config.shape_prior)

    init = _initial_values(data, rf, sf)
    if init_overrides:
        init.update(init_overrides)
    x0 = _clip_into(np.array([init[n] for n in layout.names]), layout)
    x0 = _phase_grid_start(x0, layout, objective)

    rng = np.random.default_rng(config.seed)
    starts = [x0] + [
        _perturbed_start(x0, layout, rng) for _ in range(config.multi_start - 1)
    ]
    best = None
    total_nfev = 0
    for k, xs in enumerate(starts):
        x_opt, f_opt, nfev, max_grad = _optimize_start(xs, objective, layout, config)
        total_nfev += nfev
        if np.isfinite(f_opt) and (best is None or f_opt < best[1]):
            best = (x_opt, f_opt, k, max_grad)
    if best is None:
        raise RuntimeError(
            f"site {series.site_id}: no start produced a finite objective"
        )
    x_opt, f_opt, best_start, max_grad = best
    k_free = len(layout.names)

    se_map = ci_map = None
    hessian_ok = False
    if k_free:
        x_opt, f_opt, gz, hess = _newton_polish(
            objective, layout, x_opt, f_opt, max_grad
        )
        max_grad = float(np.max(np.abs(gz))) if gz.size else 0.0
        se, ci, hessian_ok = wald_intervals(hess, x_opt)
        if hessian_ok:
            se_map = {n: float(se[i]) for i, n in enumerate(layout.names)}
            ci_map = {n: (float(ci[i, 0]), float(ci[i, 1]))
                      for i, n in enumerate(layout.names)}
            # Convergence is judged on the gradient in se-standardized
            # coordinates; a raw cutoff is unattainable for stiff
            # coordinates where machine precision in the objective already
            # implies a visible gradient.
            max_grad = float(np.max(np.abs(gz) * se / layout.scale))

    values = _vector_to_values(x_opt, layout)
    for name in _PHASE_NAMES:
        if name in values:
            values[name] = float(np.mod(values[name], 365.0))
    params = values_to_params(values, rf, sf, data)
    loglik = -f_opt
    aic = 2.0 * k_free - 2.0 * loglik
    bic = k_free * math.log(data.n) - 2.0 * loglik

    converged = max_grad < 1e-3
    return FitResult(
        site_id=series.site_id,
        rate_family=rf,
        scale_family=sf,
        estimates={n: float(values[n]) for n in layout.names},
        params=params,
        loglik=loglik,
        n_obs=data.n,
        n_exceed=data.n_exceed,
        n_params=k_free,
        aic=aic,
        bic=bic,
        std_errors=se_map,
        conf_intervals=ci_map,
        converged=converged,
        hessian_ok=hessian_ok,
        n_iter=total_nfev,
        n_starts=len(starts),
        best_start=best_start,
        max_scaled_gradient=max_grad,
        frozen=dict(config.frozen),
        run_length=config.run_length,
        message="ok" if converged else
        f"max scaled gradient {max_grad:.2e} above 1e-3",
    )


def hessian_ci(fit, series, thresholds=None, shape_prior=None):
    """Recompute standard errors and 95% CIs for a fit on its data.

    Pass the same ``shape_prior`` the fit used so the curvature matches
    the objective that was optimized. Returns (std_errors,
    conf_intervals, ok); ok is False (with None maps) when the Hessian
    is not positive definite.
    """
    if thresholds is None:
        thresholds = monthly_thresholds(series)
    rf, sf = fit.rate_family, fit.scale_family
    data = _prepare(series, thresholds, rf, sf)
    layout = _build_layout(rf, sf, fit.frozen)

    def objective(x):
        return _nll_values(_vector_to_values(x, layout), data, rf, sf,
                           shape_prior)

    x = np.array([fit.estimates[n] for n in layout.names])
    hess = numeric_hessian(objective, x, _hessian_steps(x, layout))
    se, ci, ok = wald_intervals(hess, x)
    if not ok:
        return None, None, False
    se_map = {n: float(se[i]) for i, n in enumerate(layout.names)}
    ci_map = {n: (float(ci[i, 0]), float(ci[i, 1]))
              for i, n in enumerate(layout.names)}
    return se_map, ci_map, True


def model_scores(fit):
    """(AIC, BIC) from a fit: 2k - 2l and k ln(n) - 2l."""
    aic = 2.0 * fit.n_params - 2.0 * fit.loglik
    bic = fit.n_params * math.log(fit.n_obs) - 2.0 * fit.loglik
    return aic, bic


@dataclass
class PooledSpec:
    """Datasets to fit jointly and the parameter names tied across them.

    ``datasets`` is a list of SiteSeries or (SiteSeries, MonthlyThresholds)
    pairs; thresholds are computed per site when omitted.
    """

    datasets: list
    shared: list

    def normalized(self):
        out = []
        for item in self.datasets:
            if isinstance(item, tuple):
                out.append(item)
            else:
                out.append((item, None))
        return out


@dataclass
class PooledFitResult:
    """Joint fit with named parameters tied equal across sites."""

    shared_names: list
    shared_estimates: dict
    shared_std_errors: dict | None
    shared_conf_intervals: dict | None
    site_results: list
    loglik: float
    n_obs: int
    n_params: int
    aic: float
    bic: float
    untied_aic: float
    untied_bic: float
    converged: bool
    hessian_ok: bool
    max_scaled_gradient: float

    def to_dict(self):
        return {
            "shared_names": self.shared_names,
            "shared_estimates": self.shared_estimates,
            "shared_std_errors": self.shared_std_errors,
            "shared_conf_intervals": {
                k: list(v) for k, v in self.shared_conf_intervals.items()
            } if self.shared_conf_intervals is not None else None,
            "site_results": [r.to_dict() for r in self.site_results],
            "loglik": self.loglik,
            "n_obs": self.n_obs,
            "n_params": self.n_params,
            "aic": self.aic,
            "bic": self.bic,
            "untied_aic": self.untied_aic,
            "untied_bic": self.untied_bic,
            "converged": self.converged,
            "hessian_ok": self.hessian_ok,
            "max_scaled_gradient": self.max_scaled_gradient,
        }


def fit_pooled(spec, config):
    """Maximize the summed per-site log-likelihood with tied parameters.

    Initializes from independent per-site fits (shared values averaged),
    polishes jointly, and reports pooled AIC/BIC next to the untied
    alternative (the sum of the independent fits' scores). The Normal
    shape penalty, when enabled, is charged once per distinct shape
    parameter in the joint objective.
    """
    datasets = spec.normalized()
    if not datasets:
        raise ValueError("PooledSpec has no datasets")
    rf, sf = config.rate_family, config.scale_family
    valid = set(param_names(rf, sf)) - set(config.frozen)
    missing = [n for n in spec.shared if n not in valid]
    if missing:
        raise ValueError(f"shared names not free in family {rf}/{sf}: {missing}")

    singles = []
    prepared = []
    for series, thr in datasets:
        thr = thr if thr is not None else monthly_thresholds(series)
        singles.append(fit_tail(series, config, thresholds=thr))
        prepared.append(_prepare(series, thr, rf, sf))

    layout = _build_layout(rf, sf, config.frozen)
    shared = [n for n in layout.names if n in spec.shared]
    own = [n for n in layout.names if n not in spec.shared]
    n_sites = len(datasets)

    # Global vector: shared block then one own-parameter block per site.
    names_global = list(shared) + [f"{n}@{i}" for i in range(n_sites) for n in own]
    lo = np.array([_BOUNDS[_base_key(n.split("@")[0])][0] for n in names_global])
    hi = np.array([_BOUNDS[_base_key(n.split("@")[0])][1] for n in names_global])
    scale = np.array([
        _OPT_SCALE.get(_base_key(n.split("@")[0]), 1.0) for n in names_global
    ])
    glayout = _Layout(names=names_global, lo=lo, hi=hi, scale=scale,
                      steps=np.array([
                          _SIMPLEX_STEP[_base_key(n.split("@")[0])]
                          for n in names_global
                      ]),
                      frozen=dict(config.frozen))

    def site_values(x, i):
        values = dict(config.frozen)
        for a, n in enumerate(shared):
            values[n] = x[a]
        base = len(shared) + i * len(own)
        for a, n in enumerate(own):
            values[n] = x[base + a]
        return values

    prior = config.shape_prior

    def site_nll(x, i, with_prior):
        p = prior if (with_prior and ("xi" in own or i == 0)) else None
        return _nll_values(site_values(x, i), prepared[i], rf, sf, p)

    def objective(x):
        return sum(site_nll(x, i, True) for i in range(n_sites))

    x0 = np.empty(len(names_global))
    for a, n in enumerate(shared):
        x0[a] = np.mean([s.estimates[n] for s in singles])
    for i in range(n_sites):
        base = len(shared) + i * len(own)
        for a, n in enumerate(own):
            x0[base + a] = singles[i].estimates[n]
    x0 = _clip_into(x0, glayout)

    rng = np.random.default_rng(config.seed)
    starts = [x0] + [
        _perturbed_start(
            x0,
            _Layout(names=[n.split("@")[0] for n in names_global],
                    lo=lo, hi=hi, scale=scale, steps=glayout.steps,
                    frozen=glayout.frozen),
            rng,
        )
        for _ in range(config.multi_start - 1)
    ]
    best = None
    for k, xs in enumerate(starts):
        x_opt, f_opt, _nfev, max_grad = _optimize_start(xs, objective, glayout, config)
        if np.isfinite(f_opt) and (best is None or f_opt < best[1]):
            best = (x_opt, f_opt, k, max_grad)
    if best is None:
        raise RuntimeError("pooled fit: no start produced a finite objective")
    x_opt, f_opt, _best_k, max_grad = best

    x_opt, f_opt, gz, hess = _newton_polish(
        objective, glayout, x_opt, f_opt, max_grad
    )
    max_grad = float(np.max(np.abs(gz))) if gz.size else 0.0
    se, ci, hessian_ok = wald_intervals(hess, x_opt)
    if hessian_ok:
        max_grad = float(np.max(np.abs(gz) * se / glayout.scale))

    shared_est = {n: float(x_opt[a]) for a, n in enumerate(shared)}
    shared_se = shared_ci = None
    if hessian_ok:
        shared_se = {n: float(se[a]) for a, n in enumerate(shared)}
        shared_ci = {n: (float(ci[a, 0]), float(ci[a, 1]))
                     for a, n in enumerate(shared)}

    site_results = []
    for i, (series, _thr) in enumerate(datasets):
        values = site_values(x_opt, i)
        for name in _PHASE_NAMES:
            if name in values:
                values[name] = float(np.mod(values[name], 365.0))
        ll_i = -site_nll(x_opt, i, False)
        k_i = len(layout.names)
        est = {n: float(values[n]) for n in layout.names}
        se_i = ci_i = None
        if hessian_ok:
            se_i, ci_i = {}, {}
            for n in layout.names:
                pos = shared.index(n) if n in shared \
                    else len(shared) + i * len(own) + own.index(n)
                se_i[n] = float(se[pos])
                ci_i[n] = (float(ci[pos, 0]), float(ci[pos, 1]))
        site_results.append(FitResult(
            site_id=series.site_id,
            rate_family=rf,
            scale_family=sf,
            estimates=est,
            params=values_to_params(values, rf, sf, prepared[i]),
            loglik=float(ll_i),
            n_obs=prepared[i].n,
            n_exceed=prepared[i].n_exceed,
            n_params=k_i,
            aic=2.0 * k_i - 2.0 * ll_i,
            bic=k_i * math.log(prepared[i].n) - 2.0 * ll_i,
            std_errors=se_i,
            conf_intervals=ci_i,
            converged=max_grad < 1e-3,
            hessian_ok=hessian_ok,
            n_iter=0,
            n_starts=len(starts),
            best_start=0,
            max_scaled_gradient=max_grad,
            frozen=dict(config.frozen),
            run_length=config.run_length,
            message="pooled",
        ))

    n_total = sum(p.n for p in prepared)
    k_global = len(names_global)
    loglik = -f_opt
    return PooledFitResult(
        shared_names=list(shared),
        shared_estimates=shared_est,
        shared_std_errors=shared_se,
        shared_conf_intervals=shared_ci,
        site_results=site_results,
        loglik=loglik,
        n_obs=n_total,
        n_params=k_global,
        aic=2.0 * k_global - 2.0 * loglik,
        bic=k_global * math.log(n_total) - 2.0 * loglik,
        untied_aic=sum(s.aic for s in singles),
        untied_bic=sum(s.bic for s in singles),
        converged=max_grad < 1e-3,
        hessian_ok=hessian_ok,
        max_scaled_gradient=max_grad,
    )
