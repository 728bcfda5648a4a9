"""Ground-truth noise predictors.

The analytic predictor is the exact optimal epsilon for an isotropic
Gaussian mixture pushed through the forward process.  With
``x = a * x0 + s * z`` (``a`` = mean scale, ``s`` = noise std) the noisy
marginal is ``sum_k w_k N(a mu_k, (a^2 s_k^2 + s^2) I)`` and the predictor
is ``-s * grad log p``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .latent import LatentState, Trajectory
from .schedulers import NoiseLevel, SchedulerPlan


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray  # (K, D)
    scales: np.ndarray  # (K,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        s = np.asarray(self.scales, dtype=np.float64)
        if w.ndim != 1 or s.shape != w.shape or mu.shape[0] != w.size:
            raise ValueError("weights, means and scales must agree on the component count")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if np.any(s <= 0):
            raise ValueError("component scales must be positive")
        for a in (w, mu, s):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "scales", s)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    @classmethod
    def single(cls, dim: int, scale: float = 1.0, mean=None) -> "GmmModel":
        mu = np.zeros((1, dim)) if mean is None else np.asarray(mean, dtype=np.float64).reshape(1, dim)
        return cls(np.array([1.0]), mu, np.array([scale]))

    @classmethod
    def random(cls, seed: int, n_components: int = 3, dim: int = 16,
               scale_range=(0.2, 1.0), mean_std: float = 1.0) -> "GmmModel":
        rng = np.random.default_rng(seed)
        w = rng.dirichlet(np.full(n_components, 2.0))
        w = w / w.sum()
        mu = mean_std * rng.standard_normal((n_components, dim))
        s = rng.uniform(*scale_range, size=n_components)
        return cls(w, mu, s)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "means": self.means.tolist(),
                "scales": self.scales.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        try:
            return cls(np.array(d["weights"], dtype=np.float64),
                       np.array(d["means"], dtype=np.float64),
                       np.array(d["scales"], dtype=np.float64))
        except KeyError as exc:
            raise ValueError(f"model block is missing {exc}") from None


def _marginal(model: GmmModel, level: NoiseLevel):
    a, s = level.mean_scale, level.noise_std
    var = a * a * model.scales ** 2 + s * s
    return a * model.means, var, s


def gmm_log_density(model: GmmModel, x, level: NoiseLevel) -> float:
    x = x.values if isinstance(x, LatentState) else np.asarray(x, dtype=np.float64)
    centers, var, _ = _marginal(model, level)
    d = x.size
    sq = np.sum((x[None, :] - centers) ** 2, axis=1)
    logp = np.log(model.weights) - 0.5 * d * np.log(2 * np.pi * var) - 0.5 * sq / var
    return float(logsumexp(logp))


def responsibilities(model: GmmModel, x: np.ndarray, level: NoiseLevel) -> np.ndarray:
    centers, var, _ = _marginal(model, level)
    d = x.size
    sq = np.sum((x[None, :] - centers) ** 2, axis=1)
    logr = np.log(model.weights) - 0.5 * d * np.log(var) - 0.5 * sq / var
    logr -= logr.max()
    r = np.exp(logr)
    return r / r.sum()


def gmm_epsilon(model: GmmModel, x, level: NoiseLevel) -> np.ndarray:
    x = x.values if isinstance(x, LatentState) else np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValueError(f"latent shape {x.shape} does not match model dimension {model.dim}")
    centers, var, s = _marginal(model, level)
    if model.n_components == 1:
        return s * (x - centers[0]) / var[0]
    r = responsibilities(model, x, level)
    return s * np.sum((r / var)[:, None] * (x[None, :] - centers), axis=0)


def _pair_spread_sup(d: float, v_k: float, v_j: float, log_prior_odds: float, dim: int) -> float:
    """sup over x of rho (1 - rho) ||m_k - m_j||^2 for one pair of components.

    ``rho`` is the pairwise responsibility of k and ``m = (center - x) / v``.
    Placing x at ``c_j + alpha e + beta e_perp`` reduces the problem to the
    two coordinates (alpha, beta >= 0).
    """
    dv = 1.0 / v_k - 1.0 / v_j
    if dv == 0.0:
        return 0.25 * (d / v_k) ** 2
    bias = log_prior_odds - 0.5 * dim * np.log(v_k / v_j)

    def objective(alpha, beta):
        logit = bias - 0.5 * ((alpha - d) ** 2 + beta ** 2) / v_k + 0.5 * (alpha ** 2 + beta ** 2) / v_j
        # rho (1 - rho) = exp(-|logit|) / (1 + exp(-|logit|))^2
        el = np.exp(-np.abs(logit))
        spread = (d / v_k - alpha * dv) ** 2 + (beta * dv) ** 2
        return spread * el / (1.0 + el) ** 2

    reach = 12.0 * np.sqrt(max(v_k, v_j)) + 2.0 * d + 1.0
    A, B = np.meshgrid(np.linspace(-reach, reach + d, 481), np.linspace(0.0, reach, 241), indexing="ij")
    vals = objective(A, B)
    best = float(vals.max())
    for idx in np.argsort(vals, axis=None)[::-1][:5]:
        res = optimize.minimize(lambda p: -objective(p[0], abs(p[1])), x0=[A.flat[idx], B.flat[idx]],
                                method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        best = max(best, float(-res.fun))
    return best


def gmm_lipschitz_bound(model: GmmModel, level: NoiseLevel, safety: float = 1.25) -> float:
    """Upper bound on the spatial Lipschitz constant of ``gmm_epsilon`` at one level.

    The Jacobian is ``s * (sum_k r_k / v_k I - Cov_r(m))`` with
    ``m_k = (center_k - x) / v_k``, so its spectral norm is at most
    ``s * max(1/v_min, lambda_max(Cov) - 1/v_max)``.  A single component is
    exact.  For mixtures ``lambda_max(Cov)`` is bounded by
    ``sum_{k<j} sup rho(1-rho) ||m_k - m_j||^2``; with equal variances this is
    closed form, otherwise each pair's supremum is found numerically and
    inflated by ``safety``.
    """
    _, var, s = _marginal(model, level)
    if s == 0.0:
        return 0.0
    if model.n_components == 1:
        return float(s / var[0])
    a = level.mean_scale
    K = model.n_components
    cov_bound = 0.0
    equal_var = np.all(var == var[0])
    if equal_var:
        diffs = [a * np.linalg.norm(model.means[k] - model.means[j]) / var[0]
                 for k in range(K) for j in range(k + 1, K)]
        # projection onto any unit vector spans at most the diameter
        cov_bound = min(0.25 * max(diffs) ** 2, 0.25 * sum(d * d for d in diffs))
    else:
        for k in range(K):
            for j in range(k + 1, K):
                d = a * float(np.linalg.norm(model.means[k] - model.means[j]))
                lpo = float(np.log(model.weights[k] / model.weights[j]))
                cov_bound += safety * _pair_spread_sup(d, var[k], var[j], lpo, model.dim)
    return float(s * max(1.0 / var.min(), cov_bound - 1.0 / var.max()))


class GmmDenoiser:
    """Counts every prediction; cached reuse never goes through here."""

    kind = "analytic-gmm"

    def __init__(self, model: GmmModel):
        self.model = model
        self.eval_counter = 0

    def predict(self, x, plan: SchedulerPlan, i: int) -> np.ndarray:
        self.eval_counter += 1
        return gmm_epsilon(self.model, x, plan.level(i))

    def spawn(self) -> "GmmDenoiser":
        return GmmDenoiser(self.model)


def replay_epsilon(recorded: Trajectory, i: int) -> np.ndarray:
    try:
        return recorded.noise_for_step(i).copy()
    except IndexError:
        raise KeyError(f"recorded trajectory has no step {i}") from None


class ReplayDenoiser:
    """Serves recorded noises by step index, ignoring the queried latent."""

    kind = "replay"

    def __init__(self, recorded: Trajectory):
        self.recorded = recorded
        self.eval_counter = 0

    def predict(self, x, plan: SchedulerPlan, i: int) -> np.ndarray:
        self.eval_counter += 1
        return replay_epsilon(self.recorded, i)

    def spawn(self) -> "ReplayDenoiser":
        return ReplayDenoiser(self.recorded)
