"""Shared fixtures: synthetic series used across the test modules."""

import numpy as np
import pytest

from skewsurge import SimSpec, simulate_series
from skewsurge.data import MonthlyThresholds, SiteSeries, day_of_year_365
from skewsurge.tail import RateParams, ScaleParams, TailParams

# Rate/scale harmonics whose true value is zero sit on the boundary of
# their box constraints, so recovery tests freeze them there.
FROZEN_HARMONICS = {
    "beta_day": 0.0, "phi_day": 0.0, "beta_tide": 0.0, "phi_tide": 0.0,
}

R0_TRUTH = TailParams(
    rate=RateParams(family="R0", lam=0.05),
    scale=ScaleParams(family="S0", alpha=0.12, beta=0.04, phi=91.25,
                      gamma=0.01),
    xi=0.05,
)


@pytest.fixture(scope="session")
def sim_r0():
    """A stationary R0/S0 record: (series, effective truth, thresholds)."""
    spec = SimSpec(params=R0_TRUTH, thresholds=0.3, n_cycles=8000)
    series, params = simulate_series(spec, seed=11)
    return series, params, spec.thresholds


def columns_series(month, tide, surge, site_id="T"):
    """Hand-built SiteSeries from month/tide/surge columns.

    Timestamps are synthetic and strictly increasing; the calendar columns
    are derived from the month column (day-of-month cycles 1..28), which is
    all the body and threshold code paths look at.
    """
    month = np.asarray(month, dtype=int)
    tide = np.asarray(tide, dtype=float)
    surge = np.asarray(surge, dtype=float)
    n = len(month)
    t0 = np.datetime64("2000-01-01T00:00:00", "s")
    timestamps = t0 + np.timedelta64(44700, "s") * np.arange(n)
    day_of_month = (np.arange(n) % 28) + 1
    return SiteSeries(
        site_id=site_id,
        timestamps=timestamps,
        peak_tide=tide,
        max_sea_level=tide + surge,
        skew_surge=surge,
        year=np.full(n, 2000),
        month=month,
        day_of_month=day_of_month,
        day_of_year=day_of_year_365(month, day_of_month),
    )


def flat_thresholds(u, percentile=0.95):
    return MonthlyThresholds(values=np.full(12, float(u)),
                             percentile=percentile)
