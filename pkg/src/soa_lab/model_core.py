"""Core data containers and multinomial-logit probability kernels.

Everything downstream (estimation, divergence oracles, posterior samplers)
funnels through the handful of functions here, so they are written once, in
log space with max-shifting, and never duplicated elsewhere.

Conventions used throughout the package:

* An observation's alternatives carry dense integer ids 0..J-1.
* A "sampled set" is a subset of those ids that always contains the chosen
  alternative, together with one log conditional sampling probability per
  member: entry j holds the log probability that exactly this subset would
  have been drawn had j been the chosen alternative.
* A correction mode says how those log probabilities enter the utilities
  before the softmax: "mcfadden" adds them, "none" ignores them, and
  "uniform_constant" requires them to share a single value (which then
  cancels from the softmax).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

CORRECTION_MODES = ("mcfadden", "none", "uniform_constant")


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------

@dataclass
class Alternative:
    """One alternative inside an observation: an id plus its attribute row."""

    id: int
    attributes: np.ndarray

    def __post_init__(self):
        self.attributes = np.asarray(self.attributes, dtype=float)
        if self.attributes.ndim != 1:
            raise InvalidInputError("alternative attributes must be a 1-d vector")
        if not np.all(np.isfinite(self.attributes)):
            raise InvalidInputError("alternative attributes must be finite")


@dataclass
class Observation:
    """A single choice situation: J alternatives and the index chosen.

    ``individual_id`` groups observations into panels; for cross-sectional
    data it simply repeats ``obs_id``.
    """

    obs_id: int
    alternatives: list[Alternative]
    chosen: int
    individual_id: int | None = None

    def __post_init__(self):
        if self.individual_id is None:
            self.individual_id = self.obs_id
        ids = [a.id for a in self.alternatives]
        if ids != list(range(len(ids))):
            raise InvalidInputError(
                f"alternative ids must be dense 0..J-1, got {ids}")
        if not ids:
            raise InvalidInputError("observation needs at least one alternative")
        sizes = {a.attributes.shape[0] for a in self.alternatives}
        if len(sizes) != 1:
            raise InvalidInputError("alternatives disagree on attribute length")
        if not 0 <= self.chosen < len(ids):
            raise InvalidInputError(
                f"chosen id {self.chosen} outside 0..{len(ids) - 1}")

    @property
    def n_alts(self) -> int:
        return len(self.alternatives)

    @property
    def n_attrs(self) -> int:
        return self.alternatives[0].attributes.shape[0]

    def attribute_matrix(self) -> np.ndarray:
        """(J, K) matrix with row j = attributes of alternative j."""
        return np.stack([a.attributes for a in self.alternatives])


class Dataset:
    """A collection of observations sharing the same J and K.

    Built either from ``Observation`` objects or straight from arrays via
    :meth:`from_arrays` (the fast path used by the generators and file
    readers).  Array views used by the vectorized estimators are cached.
    """

    def __init__(self, observations: list[Observation]):
        if not observations:
            raise InvalidInputError("dataset needs at least one observation")
        J = observations[0].n_alts
        K = observations[0].n_attrs
        for obs in observations:
            if obs.n_alts != J or obs.n_attrs != K:
                raise InvalidInputError(
                    "all observations must share the same J and K")
        self.observations = observations
        self.J = J
        self.K = K
        self._X = None
        self._chosen = None
        self._individual = None

    @classmethod
    def from_arrays(cls, X: np.ndarray, chosen: np.ndarray,
                    individual_ids: np.ndarray | None = None) -> "Dataset":
        """Build a dataset from an (N, J, K) attribute tensor.

        ``chosen`` holds one alternative id per observation;
        ``individual_ids`` defaults to 0..N-1 (cross-sectional data).
        """
        X = np.asarray(X, dtype=float)
        chosen = np.asarray(chosen, dtype=int)
        if X.ndim != 3:
            raise InvalidInputError("X must have shape (N, J, K)")
        n, J, _ = X.shape
        if chosen.shape != (n,):
            raise InvalidInputError("chosen must have one entry per observation")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("attributes must be finite")
        if np.any(chosen < 0) or np.any(chosen >= J):
            raise InvalidInputError("chosen ids outside 0..J-1")
        if individual_ids is None:
            individual_ids = np.arange(n)
        individual_ids = np.asarray(individual_ids, dtype=int)
        if individual_ids.shape != (n,):
            raise InvalidInputError("individual_ids must have one entry per observation")

        self = cls.__new__(cls)
        self.J = J
        self.K = X.shape[2]
        self._X = X
        self._chosen = chosen
        self._individual = individual_ids
        self._observations = None
        return self

    # Lazy object view for array-built datasets.
    @property
    def observations(self) -> list[Observation]:
        if getattr(self, "_observations", "unset") is None:
            obs = []
            for i in range(self._X.shape[0]):
                alts = [Alternative(j, self._X[i, j]) for j in range(self.J)]
                obs.append(Observation(i, alts, int(self._chosen[i]),
                                       int(self._individual[i])))
            self._observations = obs
        return self._observations

    @observations.setter
    def observations(self, value):
        self._observations = value

    @property
    def n_obs(self) -> int:
        if self._X is not None:
            return self._X.shape[0]
        return len(self._observations)

    def attribute_tensor(self) -> np.ndarray:
        """(N, J, K) stacked attribute matrices."""
        if self._X is None:
            self._X = np.stack([o.attribute_matrix() for o in self._observations])
        return self._X

    def chosen_ids(self) -> np.ndarray:
        if self._chosen is None:
            self._chosen = np.array([o.chosen for o in self._observations], dtype=int)
        return self._chosen

    def individual_ids(self) -> np.ndarray:
        if self._individual is None:
            self._individual = np.array(
                [o.individual_id for o in self._observations], dtype=int)
        return self._individual


@dataclass
class UtilityParams:
    """Linear-in-attributes utility coefficients."""

    beta: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        if self.beta.ndim != 1:
            raise InvalidInputError("beta must be a 1-d vector")
        if not np.all(np.isfinite(self.beta)):
            raise InvalidInputError("beta must be finite")


@dataclass
class SampledSet:
    """A drawn subset of one observation's alternatives.

    ``member_ids`` always contains the chosen alternative.  Entry k of
    ``log_cond_prob`` is the log probability that this exact subset would be
    drawn conditional on member k being the chosen one; all entries must be
    finite (positive conditioning) and non-positive.
    """

    member_ids: np.ndarray
    log_cond_prob: np.ndarray
    correction_mode: str = "mcfadden"

    def __post_init__(self):
        self.member_ids = np.asarray(self.member_ids, dtype=int)
        self.log_cond_prob = np.asarray(self.log_cond_prob, dtype=float)
        if self.member_ids.ndim != 1 or self.log_cond_prob.shape != self.member_ids.shape:
            raise InvalidInputError("member_ids and log_cond_prob must be 1-d and aligned")
        if self.member_ids.size == 0:
            raise InvalidInputError("sampled set cannot be empty")
        if len(set(self.member_ids.tolist())) != self.member_ids.size:
            raise InvalidInputError("sampled set has repeated member ids")
        if not np.all(np.isfinite(self.log_cond_prob)):
            raise InvalidInputError(
                "log conditional probabilities must be finite "
                "(the drawing protocol must give every drawn set positive "
                "probability under each of its members)")
        if np.any(self.log_cond_prob > 0.0):
            raise InvalidInputError("log conditional probabilities must be <= 0")
        if self.correction_mode not in CORRECTION_MODES:
            raise InvalidInputError(
                f"unknown correction mode {self.correction_mode!r}")

    @property
    def size(self) -> int:
        return self.member_ids.size

    def position_of(self, alt_id: int) -> int:
        """Index of ``alt_id`` inside ``member_ids`` (error if absent)."""
        hits = np.nonzero(self.member_ids == alt_id)[0]
        if hits.size != 1:
            raise InvalidInputError(f"alternative {alt_id} not in sampled set")
        return int(hits[0])


# ---------------------------------------------------------------------------
# numerical kernels
# ---------------------------------------------------------------------------

def log_sum_exp(values) -> float:
    """log(sum(exp(values))) with max-shift; safe for entries up to ~1e308's log."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise InvalidInputError("log_sum_exp of an empty vector")
    m = np.max(v)
    if not np.isfinite(m):
        # All -inf collapses to -inf; a +inf or nan input is a caller bug.
        if m == -np.inf:
            return -np.inf
        raise InvalidInputError("log_sum_exp requires finite (or -inf) entries")
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_softmax(values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-wise log probabilities exp(v)/sum exp(v), max-shifted.

    -inf entries are allowed and come back as -inf (zero probability);
    used by the estimators to pad ragged sampled sets.
    """
    v = np.asarray(values, dtype=float)
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = v - m
    with np.errstate(divide="ignore", invalid="ignore"):
        lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
        out = shifted - lse
    # A row that is entirely -inf carries no mass; keep it -inf rather than
    # letting the (-inf) - (-inf) subtraction produce nans.
    return np.where(np.isneginf(lse), -np.inf, out)


def linear_utility(attributes: np.ndarray, params: UtilityParams) -> float:
    """Deterministic utility x'beta for one alternative."""
    x = np.asarray(attributes, dtype=float)
    if x.shape != params.beta.shape:
        raise InvalidInputError(
            f"attribute/parameter length mismatch: {x.shape} vs {params.beta.shape}")
    return float(x @ params.beta)


def utilities(observation: Observation, params: UtilityParams) -> np.ndarray:
    """Vector of linear utilities for every alternative of an observation."""
    X = observation.attribute_matrix()
    if X.shape[1] != params.beta.shape[0]:
        raise InvalidInputError("parameter length does not match attributes")
    return X @ params.beta


def mnl_prob_full(v: np.ndarray) -> np.ndarray:
    """Choice probabilities over the full set: exp(v_j)/sum_k exp(v_k)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError("utilities must be a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("utilities must be finite")
    return np.exp(log_softmax(v))


def mnl_prob_sampled_uncorrected(v_members: np.ndarray) -> np.ndarray:
    """Probabilities over a sampled subset with no correction.

    Identical arithmetic to :func:`mnl_prob_full` restricted to the members:
    this is the (generally inconsistent) estimator that simply forgets the
    rest of the choice set.
    """
    return mnl_prob_full(v_members)


def canonical_corrections(c: np.ndarray) -> np.ndarray:
    """Shift a correction vector so its maximum is exactly zero.

    Shifting by a constant cannot change any probability, and it makes a
    shared-constant correction vector vanish bit-for-bit, so corrected and
    uncorrected computations coincide exactly whenever they should.
    """
    c = np.asarray(c, dtype=float)
    return c - np.max(c)


def mnl_prob_sampled_corrected(v_members: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Probabilities over a sampled subset with additive utility corrections.

    P_j = exp(v_j + c_j) / sum_k exp(v_k + c_k), computed with the correction
    vector re-centred (a no-op for the result) and max-shifted utilities.
    """
    v = np.asarray(v_members, dtype=float)
    c = np.asarray(c, dtype=float)
    if v.shape != c.shape:
        raise InvalidInputError(
            f"utility/correction length mismatch: {v.shape} vs {c.shape}")
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError("utilities must be a non-empty 1-d vector")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(c))):
        raise InvalidInputError("utilities and corrections must be finite")
    return np.exp(log_softmax(v + canonical_corrections(c)))


