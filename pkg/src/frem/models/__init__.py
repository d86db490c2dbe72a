"""Model zoo: ready-made chains with their statistic decompositions.

Each model module exposes ``make_model(...) -> ChainModel`` and
``make_suffstats(...) -> SuffStatModel``; :func:`build` constructs the pair
from a registry name plus keyword parameters, which is also how worker
processes rebuild models (the objects themselves hold closures and are not
sent across process boundaries).
"""

from __future__ import annotations

from ..chain import ChainModel, ObservationSet
from ..em import SuffStatModel
from ..errors import ConfigError
from ..reverse import ReverseChainSpec
from . import cir, hmm2d, ou

_DEFAULT_HMM_SIGMA = ((1.0, 0.0), (0.0, 1.0))


def ou_suffstats(dt: float) -> SuffStatModel:
    """Statistic decomposition for the linear-drift chain."""
    return ou.make_suffstats(dt)


def ou_exact_mle(obs: ObservationSet, dt: float) -> tuple[float, float]:
    """Reference incomplete-data estimate ``(lam_hat, loglik)`` for the
    linear-drift chain, from the closed-form multi-step transition law."""
    return ou.exact_mle(obs.times, obs.values, dt)


def hmm_suffstats(Sigma, k: int = 1) -> SuffStatModel:
    """Statistic decomposition for the 2-d partially observed chain.

    ``k`` is the recording period of the second component (the first is seen
    at every step).  The statistics condition on whatever is observed, so the
    decomposition itself is the same for every ``k``; the argument documents
    the intended scheme and is validated here.
    """
    if int(k) != k or k < 1:
        raise ConfigError(f"observation period k must be a positive integer, "
                          f"got {k!r}")
    return hmm2d.make_suffstats(Sigma)


def cir_suffstats(dt: float, gamma: float) -> SuffStatModel:
    """Statistic decomposition for the mean-reverting chain with
    state-dependent noise."""
    return cir.make_suffstats(dt, gamma)


def cir_reverse(dt: float, gamma: float, theta, horizon: int) -> ReverseChainSpec:
    """Reverse chain with drift and diffusion mirrored at the current state;
    the weight factor is the exact one-step density ratio."""
    return cir.make_reverse(dt, gamma, theta, horizon)


def _build_ou(dt: float = 0.1):
    return ou.make_model(dt), ou.make_suffstats(dt)


def _build_hmm2d(Sigma=_DEFAULT_HMM_SIGMA):
    return hmm2d.make_model(Sigma), hmm2d.make_suffstats(Sigma)


def _build_cir(dt: float = 0.1, gamma: float = 0.0):
    return cir.make_model(dt, gamma), cir.make_suffstats(dt, gamma)


BUILDERS = {
    "ou": _build_ou,
    "hmm2d": _build_hmm2d,
    "cir": _build_cir,
}


def build(name: str, **params) -> tuple[ChainModel, SuffStatModel]:
    """Construct ``(ChainModel, SuffStatModel)`` for a registered model."""
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise ConfigError(
            f"unknown model {name!r}; available: {sorted(BUILDERS)}") from None
    try:
        return builder(**params)
    except TypeError as err:
        raise ConfigError(f"bad parameters for model {name!r}: {err}") from None


__all__ = ["build", "BUILDERS", "ou", "hmm2d", "cir", "ou_suffstats",
           "ou_exact_mle", "hmm_suffstats", "cir_suffstats", "cir_reverse"]
