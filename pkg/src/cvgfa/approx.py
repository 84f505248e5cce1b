"""Special functions and moment approximations used by the inference engine.

Dependency-free digamma and trigamma, geometric expectations of gamma and
beta variables, exact moments of sums of independent Bernoullis, and the
second-order approximations for expected shifted logs and Chinese restaurant
table counts. Everything here is a pure function.
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "BernoulliSumMoments",
    "P_PLUS_FLOOR",
    "digamma",
    "trigamma",
    "geo_expect_gamma",
    "geo_expect_beta",
    "bernoulli_sum_moments",
    "expect_log_shifted_count",
    "crt_mean_exact",
    "crt_mean_approx",
]

# Below this mass the conditional moments of a Bernoulli sum are treated as 0.
P_PLUS_FLOOR = 1e-12

# Arguments are pushed above this point before the asymptotic series is used.
_SERIES_START = 6.0


@dataclass(frozen=True)
class BernoulliSumMoments:
    """Moments of l = sum of independent Bernoulli(xi_i) variables.

    mean_plus and var_plus are the moments of l conditional on l > 0; both
    are defined as 0 when p_plus < P_PLUS_FLOOR.
    """

    mean: float
    variance: float
    p_plus: float
    mean_plus: float
    var_plus: float


def digamma(x):
    """Digamma function for positive arguments, elementwise on arrays.

    Applies the recurrence psi(x) = psi(x + 1) - 1/x until the argument
    exceeds 6, then evaluates the asymptotic expansion
    psi(x) ~ log x - 1/(2x) - sum_n B_2n / (2n x^2n).

    Parameters
    ----------
    x : float or array_like
        Positive argument(s).

    Returns
    -------
    float or ndarray
        psi evaluated at x; a plain float for scalar input.
    """
    scalar = np.ndim(x) == 0
    y = np.array(x, dtype=float, copy=True, ndmin=1)
    if not np.all(y > 0):
        raise ValueError("digamma requires x > 0")
    acc = np.zeros_like(y)
    small = y < _SERIES_START
    while small.any():
        acc[small] -= 1.0 / y[small]
        y[small] += 1.0
        small = y < _SERIES_START
    inv = 1.0 / y
    inv2 = inv * inv
    # B_2n/(2n) coefficients, innermost last
    tail = 1.0 / 12.0 - inv2 * (
        1.0 / 120.0
        - inv2
        * (
            1.0 / 252.0
            - inv2
            * (
                1.0 / 240.0
                - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))
            )
        )
    )
    acc += np.log(y) - 0.5 * inv - inv2 * tail
    return float(acc[0]) if scalar else acc


def trigamma(x):
    """Trigamma function for positive arguments, elementwise on arrays.

    Same scheme as :func:`digamma`: recurrence psi'(x) = psi'(x+1) + 1/x^2
    up to 6, then psi'(x) ~ 1/x + 1/(2x^2) + sum_n B_2n / x^(2n+1).
    """
    scalar = np.ndim(x) == 0
    y = np.array(x, dtype=float, copy=True, ndmin=1)
    if not np.all(y > 0):
        raise ValueError("trigamma requires x > 0")
    acc = np.zeros_like(y)
    small = y < _SERIES_START
    while small.any():
        acc[small] += 1.0 / (y[small] * y[small])
        y[small] += 1.0
        small = y < _SERIES_START
    inv = 1.0 / y
    inv2 = inv * inv
    tail = 1.0 / 6.0 - inv2 * (
        1.0 / 30.0
        - inv2
        * (
            1.0 / 42.0
            - inv2
            * (
                1.0 / 30.0
                - inv2 * (5.0 / 66.0 - inv2 * (691.0 / 2730.0 - inv2 * (7.0 / 6.0)))
            )
        )
    )
    acc += inv + 0.5 * inv2 + inv * inv2 * tail
    return float(acc[0]) if scalar else acc


def geo_expect_gamma(shape, rate):
    """Geometric expectation exp(E[log y]) of y ~ Gamma(shape, rate).

    Equals exp(psi(shape)) / rate, strictly below the arithmetic mean.
    """
    shape_arr = np.asarray(shape, dtype=float)
    rate_arr = np.asarray(rate, dtype=float)
    if not (np.all(shape_arr > 0) and np.all(rate_arr > 0)):
        raise ValueError("gamma parameters must be positive")
    out = np.exp(digamma(shape_arr)) / rate_arr
    return float(out) if np.ndim(out) == 0 else out


def geo_expect_beta(a, b):
    """Geometric expectation exp(E[log y]) of y ~ Beta(a, b).

    Equals exp(psi(a) - psi(a + b)), strictly below a / (a + b).
    """
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if not (np.all(a_arr > 0) and np.all(b_arr > 0)):
        raise ValueError("beta parameters must be positive")
    out = np.exp(digamma(a_arr) - digamma(a_arr + b_arr))
    return float(out) if np.ndim(out) == 0 else out


def bernoulli_sum_moments(probs) -> BernoulliSumMoments:
    """Exact moments of a sum of independent Bernoulli variables.

    Parameters
    ----------
    probs : array_like
        Success probabilities, each in [0, 1].

    Returns
    -------
    BernoulliSumMoments
        Unconditional mean/variance, the probability p_plus that the sum is
        positive, and the conditional moments given a positive sum.

    Notes
    -----
    p_plus is computed as -expm1(sum(log1p(-xi))) to avoid cancellation;
    any xi equal to 1 forces p_plus = 1 exactly.
    """
    xi = np.asarray(probs, dtype=float).ravel()
    if xi.size and not (np.all(xi >= 0) and np.all(xi <= 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    mean = float(np.sum(xi))
    variance = float(np.sum(xi * (1.0 - xi)))
    if np.any(xi == 1.0):
        p_plus = 1.0
    else:
        p_plus = float(-np.expm1(np.sum(np.log1p(-xi))))
    if p_plus < P_PLUS_FLOOR:
        mean_plus = 0.0
        var_plus = 0.0
    else:
        mean_plus = mean / p_plus
        var_plus = variance / p_plus
    return BernoulliSumMoments(mean, variance, p_plus, mean_plus, var_plus)


def expect_log_shifted_count(shift_geo, count_mean, count_var):
    """Approximate E[log(c + n)] for a Bernoulli-sum count n.

    The shift c enters through its geometric expectation; the count through
    its exact mean and variance. Second-order expansion:
    log(shift_geo + count_mean) - count_var / (2 (shift_geo + count_mean)^2).
    """
    if not shift_geo > 0:
        raise ValueError("shift_geo must be positive")
    total = shift_geo + count_mean
    return math.log(total) - count_var / (2.0 * total * total)


def crt_mean_exact(a, l):
    """Exact mean table count of a Chinese restaurant process.

    Closed form sum_{i=0}^{l-1} a / (a + i) for concentration a and l
    customers; a = 0 or l = 0 gives 0. Serves as the brute-force oracle for
    :func:`crt_mean_approx`.
    """
    if a < 0 or l < 0:
        raise ValueError("requires a >= 0 and l >= 0")
    if a == 0:
        return 0.0
    return float(sum(a / (a + i) for i in range(int(l))))


def crt_mean_approx(a_geo, count: BernoulliSumMoments):
    """Approximate mean table count when the customer count is random.

    Evaluates a_geo * p_plus * (psi(a_geo + E+) - psi(a_geo)
    + V+ * psi'(a_geo + E+) / 2) with the conditional count moments. For a
    deterministic count this telescopes to the exact CRT mean.
    """
    if not a_geo > 0:
        raise ValueError("a_geo must be positive")
    if count.p_plus < P_PLUS_FLOOR:
        return 0.0
    shifted = a_geo + count.mean_plus
    bracket = (
        digamma(shifted) - digamma(a_geo) + 0.5 * count.var_plus * trigamma(shifted)
    )
    return a_geo * count.p_plus * bracket
