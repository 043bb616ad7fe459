"""Weighted least-squares fits used by calibration and moment extraction."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from errors import FitError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LineFit:
    """Result of y = slope * x fitted through the origin."""

    slope: float
    slope_sigma: float
    chi2: float


def _weights(sigmas, n):
    if sigmas is None:
        return np.ones(n)
    sigmas = np.asarray(sigmas, dtype=float)
    if sigmas.shape != (n,) or np.any(~(sigmas > 0.0)):
        raise FitError("sigmas must be positive and match the data")
    weights = 1.0 / sigmas**2
    # scale so homogeneous sigmas reproduce the unweighted fit bit-for-bit
    return weights / np.max(weights)


def fit_through_origin(x, y, sigmas=None, min_points=1):
    """Weighted least-squares slope of y = b x with weights 1/sigma^2.

    slope_sigma comes from the fit covariance, sqrt(1 / sum(x^2 / sigma^2)).
    Without sigmas it is the unit-weight value and only the slope is
    meaningful.

    Raises:
        FitError: too few points or every x is zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be 1-d sequences of equal length")
    if x.size < min_points:
        raise FitError(f"need at least {min_points} points, got {x.size}")
    w = _weights(sigmas, x.size)
    sxx = float(np.sum(w * x * x))
    if sxx == 0.0:
        raise FitError("all abscissae are zero; slope is undetermined")
    slope = float(np.sum(w * x * y)) / sxx
    if sigmas is None:
        slope_sigma = math.sqrt(1.0 / sxx)
    else:
        raw = 1.0 / np.asarray(sigmas, dtype=float) ** 2
        slope_sigma = math.sqrt(1.0 / float(np.sum(raw * x * x)))
        w = raw
    chi2 = float(np.sum(w * (y - slope * x) ** 2))
    return LineFit(slope=slope, slope_sigma=slope_sigma, chi2=chi2)


def fit_even_polynomial(x, y, sigmas=None, degrees=(2, 4)):
    """Weighted fit of y = sum_d c_d x^d over the given degrees.

    Returns:
        Dict mapping degree to coefficient.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < len(degrees) + 1:
        raise FitError(
            f"need more than {len(degrees)} points for degrees {degrees}"
        )
    design = np.column_stack([x**d for d in degrees])
    root_w = np.sqrt(_weights(sigmas, x.size))
    coeffs, _, rank, _ = np.linalg.lstsq(
        design * root_w[:, None], y * root_w, rcond=None
    )
    if rank < len(degrees):
        raise FitError("design matrix is rank deficient")
    return {d: float(c) for d, c in zip(degrees, coeffs)}
