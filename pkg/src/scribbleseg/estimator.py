"""EM estimation of class mixture ratios over unlabeled pixels.

Network posteriors were fitted against the labeled-pixel class frequencies
``f``; assuming labeled and unlabeled pixels share class-conditional
densities, ``p(x | c_k)`` is proportional to ``p(c_k | x) / f_k`` and the
unlabeled prior ``pi`` is the mixing weight of those fixed components. EM on
that mixture alternates posterior adaptation and averaging, and never
decreases the marginal log-likelihood
``l(pi) = sum_i log sum_k pi_k p(c_k | x_i) / f_k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ScribbleSegError

FREQ_FLOOR = 1e-6


class ClassUnobserved(ScribbleSegError):
    pass


class DegeneratePosterior(ScribbleSegError):
    pass


@dataclass(frozen=True)
class PosteriorBatch:
    posteriors: np.ndarray  # (n_u, m) raw predicted posteriors of unlabeled pixels
    labeled_freq: np.ndarray  # (m,) empirical class frequencies on labeled pixels

    def __post_init__(self):
        p = np.asarray(self.posteriors, dtype=np.float64)
        f = np.asarray(self.labeled_freq, dtype=np.float64)
        if p.ndim != 2 or f.shape != (p.shape[1],):
            raise ScribbleSegError("posteriors must be (n_u, m) with m frequencies")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ScribbleSegError("posterior rows must lie on the simplex")
        if np.any(f <= 0):
            raise ClassUnobserved("every class needs a positive labeled frequency")
        object.__setattr__(self, "posteriors", p)
        object.__setattr__(self, "labeled_freq", f)
        object.__setattr__(self, "_ratios", p / np.maximum(f, FREQ_FLOOR))

    @property
    def n_u(self) -> int:
        return self.posteriors.shape[0]

    @property
    def m(self) -> int:
        return self.posteriors.shape[1]

    def likelihood_ratios(self) -> np.ndarray:
        return self._ratios


@dataclass
class PiEstimate:
    pi: np.ndarray
    iterations: int
    trace: list = field(default_factory=list)
    converged: bool = False

    def to_dict(self) -> dict:
        return {"pi": [float(v) for v in self.pi], "iterations": self.iterations,
                "converged": self.converged, "trace": [float(v) for v in self.trace]}


def init_pi(stats) -> np.ndarray:
    """Labeled class frequencies ``n_l^k / n_l`` (accepts stats or a count vector)."""
    counts = np.asarray(getattr(stats, "n_labeled", stats), dtype=np.float64)
    if counts.ndim != 1 or counts.size < 2:
        raise ScribbleSegError("need a count per class")
    missing = np.flatnonzero(counts <= 0)
    if missing.size:
        raise ClassUnobserved(f"classes without labeled pixels: {missing.tolist()}")
    return counts / counts.sum()


def _check_pi(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ScribbleSegError("pi must lie on the simplex")
    return pi


def adapt_posterior(batch: PosteriorBatch, pi) -> np.ndarray:
    """Re-weight each posterior from the labeled prior to ``pi``; rows renormalized."""
    pi = _check_pi(pi)
    if pi.shape != (batch.m,):
        raise ScribbleSegError("pi length must match the class count")
    num = batch.likelihood_ratios() * pi
    den = num.sum(axis=1, keepdims=True)
    if np.any(den <= 0):
        raise DegeneratePosterior(f"{int(np.count_nonzero(den <= 0))} pixels have zero evidence under pi")
    return num / den


def em_step(batch: PosteriorBatch, pi) -> np.ndarray:
    """One EM update: mean adapted posterior over the unlabeled pixels."""
    return _em_update(batch, _check_pi(pi))[0]


def _em_update(batch: PosteriorBatch, pi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # mean_i r_ik pi_k / (r_i . pi) as two mat-vec products; also returns r_i . pi
    r = batch.likelihood_ratios()
    den = r @ pi
    if np.any(den <= 0):
        raise DegeneratePosterior(f"{int(np.count_nonzero(den <= 0))} pixels have zero evidence under pi")
    new = pi * ((1.0 / den) @ r) / batch.n_u
    return new / new.sum(), den


def log_likelihood(batch: PosteriorBatch, pi) -> float:
    mix = batch.likelihood_ratios() @ np.asarray(pi, dtype=np.float64)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(mix)))


def estimate_pi(batch: PosteriorBatch, pi0, tol: float = 1e-6, max_iter: int = 100) -> PiEstimate:
    """Iterate :func:`em_step` until the L-inf change drops below ``tol``.

    ``trace[t]`` is the log-likelihood after ``t`` updates (``trace[0]`` at
    ``pi0``).
    """
    if tol <= 0:
        raise ScribbleSegError("tol must be positive")
    pi = _check_pi(pi0).copy()
    trace = []
    converged = False
    it = 0
    while it < max_iter:
        new, den = _em_update(batch, pi)
        trace.append(float(np.sum(np.log(den))))  # likelihood at the current pi
        it += 1
        delta = float(np.max(np.abs(new - pi)))
        pi = new
        if delta < tol:
            converged = True
            break
    trace.append(log_likelihood(batch, pi))
    return PiEstimate(pi, it, trace, converged)


def synthetic_posteriors(pi, n_u: int, labeled_freq, rng: np.random.Generator,
                         separation: float = 4.0) -> tuple[PosteriorBatch, np.ndarray]:
    """Posteriors of a classifier fitted under ``labeled_freq`` on a known mixture.

    Pixels are drawn from ``pi``; class ``k`` emits ``x ~ N(k * separation, 1)``
    and the posterior is the exact Bayes posterior under the labeled
    frequencies. Returns the batch and the drawn classes.
    """
    pi = _check_pi(pi)
    f = np.asarray(labeled_freq, dtype=np.float64)
    y = rng.choice(pi.size, size=int(n_u), p=pi)
    x = rng.normal(y * separation, 1.0)
    mu = np.arange(pi.size) * separation
    logit = np.log(f)[None, :] - 0.5 * (x[:, None] - mu[None, :]) ** 2
    logit -= logit.max(axis=1, keepdims=True)
    post = np.exp(logit)
    post /= post.sum(axis=1, keepdims=True)
    return PosteriorBatch(post, f), y
