"""PAC-Bayesian risk bounds and latent class collision quantities.

All bound evaluators are pure functions of already-estimated empirical
quantities; nothing here touches networks or data. Exponentials are routed
through expm1/log so certificates stay meaningful at extreme lambda and a
diverging chi-square yields an infinite (vacuous) bound instead of an
overflow error.
"""

from dataclasses import dataclass, field
from math import comb, exp, expm1, inf, log, pi, sqrt

import numpy as np
from scipy.optimize import minimize_scalar

from .losses import loss_at_zero

# lambda search range for the certificate minimisation, as multiples of 1/m
# at the low end and an absolute cap at the high end
_LAMBDA_MAX = 1.0e7
_GRID_POINTS = 100


def tau_collision(rho):
    """Probability that two classes drawn iid from rho collide."""
    rho = np.asarray(rho, dtype=np.float64)
    return float(np.sum(rho * rho))


def tau_k(rho, k):
    """Probability that any of k iid negative classes hits the positive class."""
    rho = np.asarray(rho, dtype=np.float64)
    return float(1.0 - np.sum(rho * (1.0 - rho) ** k))


def collision_term(rho, k, loss_kind):
    """E[ ell(0 vector of colliding negatives) | at least one collision ].

    Exact: the number of colliding negatives given the positive class c is
    Binomial(k, rho(c)). Cost O(|C| k), no sampling.
    """
    rho = np.asarray(rho, dtype=np.float64)
    t_k = tau_k(rho, k)
    if t_k <= 0.0:
        raise ValueError("collision probability is zero, conditional undefined")
    num = 0.0
    for p in rho:
        for j in range(1, k + 1):
            num += p * comb(k, j) * p**j * (1.0 - p) ** (k - j) * loss_at_zero(loss_kind, j)
    return num / t_k


def _catoni_form(r_hat, pen_over_m, lam):
    # (1 - exp(-lam r - pen/m)) / (1 - exp(-lam)), via expm1 for stability
    return expm1(-(lam * r_hat + pen_over_m)) / expm1(-lam)


def catoni_bound(r_hat, kl, m, lam, delta):
    """Posterior-expected risk bound for a [0, 1] loss at fixed lambda > 0."""
    if lam <= 0.0:
        raise ValueError("lambda must be positive")
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    return _catoni_form(r_hat, (kl + log(1.0 / delta)) / m, lam)


def iid_supervised_bound(l_hat_un, kl, m, lam, delta, tau, loss_sup):
    """Supervised mean-classifier risk bound from the unsupervised loss.

    Catoni-style bound on the rescaled loss (range loss_sup), then the
    collision correction (subtract tau, divide by 1 - tau).
    """
    if tau >= 1.0:
        raise ValueError("tau must be < 1")
    pen = (kl + log(1.0 / delta)) / m
    inner = loss_sup * expm1(-((lam / loss_sup) * l_hat_un + pen)) / expm1(-lam)
    return (inner - tau) / (1.0 - tau)


def j_index(grid_b, grid_c, sigma2_p):
    """Continuous index of sigma2_p on the grid {grid_c * e^(-j/grid_b)}."""
    if sigma2_p <= 0.0 or sigma2_p >= grid_c:
        raise ValueError("prior variance must lie in (0, grid_c)")
    return grid_b * log(grid_c / sigma2_p)


def _chi2_penalty(j, chi2_log1p, m, delta, dependency_t, loss_sup=1.0):
    # pi * j * sqrt(loss_sup^2 (1 + 8T) (chi2 + 1) / (24 m delta)), in log space
    log_pen = (
        log(pi * j)
        + 0.5
        * (
            chi2_log1p
            + 2.0 * log(loss_sup)
            + log(1.0 + 8.0 * dependency_t)
            - log(24.0 * m * delta)
        )
    )
    if log_pen > 700.0:
        return inf
    return exp(log_pen)


def noniid_bound(l_hat_un, j, chi2_log1p, m, delta, dependency_t, loss_sup):
    """Chi-square risk bound for T-dependent tuples, on the bounded loss."""
    return l_hat_un + _chi2_penalty(j, chi2_log1p, m, delta, dependency_t, loss_sup)


def selection_penalty_iid(kl, j, m, delta):
    """Complexity term of the model-selection certificate at prior index j."""
    return kl + log(pi * pi * j * j / 6.0) + log(2.0 * sqrt(m) / delta)


def selection_bound_iid(r_hat, kl, j, m, delta):
    """Model-selection certificate on the zero-one contrastive risk.

    Minimises the Catoni form over lambda: a 100-point log grid over
    [1/m, 1e7] brackets the minimum, a bounded scalar minimiser refines it.

    Returns (bound value, minimising lambda).
    """
    pen_over_m = selection_penalty_iid(kl, j, m, delta) / m

    def f(log_lam):
        return _catoni_form(r_hat, pen_over_m, exp(log_lam))

    lo, hi = log(1.0 / m), log(_LAMBDA_MAX)
    grid = np.linspace(lo, hi, _GRID_POINTS)
    vals = [f(x) for x in grid]
    i = int(np.argmin(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, _GRID_POINTS - 1)]
    res = minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": 1e-10})
    log_lam_star = float(res.x) if res.fun <= vals[i] else float(grid[i])
    return f(log_lam_star), exp(log_lam_star)


def selection_bound_noniid(r_hat, j, chi2_log1p, m, delta, dependency_t):
    """Model-selection certificate on the zero-one risk for dependent data.

    Direct evaluation, no lambda: the zero-one risk already has range 1.
    """
    return r_hat + _chi2_penalty(j, chi2_log1p, m, delta, dependency_t)


@dataclass
class BoundReport:
    """Everything needed to audit one certificate."""

    bound_kind: str            # "iid-selection" | "iid-loss" | "noniid-selection" | "noniid-loss"
    bound_value: float
    empirical_risk: float
    risk_kind: str             # "zero-one" | "loss"
    loss_kind: str
    divergence_kind: str       # "kl" | "chi2"
    divergence_value: float
    j: float
    m: int
    delta: float
    n_risk_samples: int
    lam: float | None = None
    tau: float | None = None
    loss_sup: float | None = None
    feature_bound: float | None = None
    dependency_t: int | None = None
    extras: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        doc = {
            "format": "pbcurl-bound-v1",
            "bound_kind": self.bound_kind,
            "bound_value": self.bound_value,
            "empirical_risk": self.empirical_risk,
            "risk_kind": self.risk_kind,
            "loss_kind": self.loss_kind,
            "divergence_kind": self.divergence_kind,
            "divergence_value": self.divergence_value,
            "j": self.j,
            "m": self.m,
            "delta": self.delta,
            "n_risk_samples": self.n_risk_samples,
            "lambda": self.lam,
            "tau": self.tau,
            "loss_sup": self.loss_sup,
            "feature_bound": self.feature_bound,
            "dependency_t": self.dependency_t,
            "extras": self.extras,
            "provenance": self.provenance,
        }
        return doc
