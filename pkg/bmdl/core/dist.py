"""
Random variates and special functions for the Gibbs sampler.

All stochastic primitives live behind ``RandomStream`` so that every draw in a
chain can be replayed from (seed, spawn key, generator state). Gamma
distributions take a SCALE as their second parameter everywhere.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from .errors import ParameterDomainError

TINY = float(np.finfo(float).tiny)
# gamma draws are clamped to [TINY, HUGE]; counts saturate at MAX_COUNT
HUGE = 1e150
MAX_COUNT = 2 ** 53
BETA_EPS = 1e-12
DEFAULT_CRT_CUTOFF = 1000

_MAX_SEED = 2 ** 64
# upper bound on Bernoulli draws materialized at once by the vectorized CRT
_CRT_CHUNK = 1 << 22

ArrayLike = Union[float, int, Sequence[float], np.ndarray]


class RandomStream:
    """
    Seeded, splittable random stream backed by numpy's PCG64.

    A stream is single-owner. ``split(i)`` derives an independent child whose
    draws depend only on (seed, parent spawn key, i).
    """

    def __init__(self, seed: int, spawn_key: Tuple[int, ...] = ()):
        if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
            raise ParameterDomainError(f"seed must be an integer, got {seed!r}")
        if not 0 <= int(seed) < _MAX_SEED:
            raise ParameterDomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.spawn_key = tuple(int(i) for i in spawn_key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def split(self, index: int) -> "RandomStream":
        """Child stream reproducible from (seed, spawn key, index)."""
        if index < 0:
            raise ParameterDomainError(f"split index must be non-negative, got {index}")
        return RandomStream(self.seed, self.spawn_key + (int(index),))

    def get_state(self) -> Dict[str, Any]:
        """JSON-serializable snapshot of the stream."""
        return {
            "seed": self.seed,
            "spawn_key": list(self.spawn_key),
            "bit_generator": self.generator.bit_generator.state,
        }

    def set_state(self, state: Dict[str, Any]) -> None:
        if int(state["seed"]) != self.seed or tuple(state["spawn_key"]) != self.spawn_key:
            raise ParameterDomainError("state belongs to a different stream")
        self.generator.bit_generator.state = state["bit_generator"]

    @classmethod
    def from_state(cls, state: Dict[str, Any]) -> "RandomStream":
        stream = cls(int(state["seed"]), tuple(state["spawn_key"]))
        stream.generator.bit_generator.state = state["bit_generator"]
        return stream

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, spawn_key={self.spawn_key})"


@dataclass(frozen=True)
class GammaParams:
    """Gamma(shape, scale); shape 0 is the point mass at 0."""
    shape: float
    scale: float

    def __post_init__(self):
        if not (math.isfinite(self.shape) and math.isfinite(self.scale)):
            raise ParameterDomainError(f"gamma parameters must be finite: {self}")
        if self.shape < 0:
            raise ParameterDomainError(f"gamma shape must be >= 0, got {self.shape}")
        if self.scale <= 0:
            raise ParameterDomainError(f"gamma scale must be > 0, got {self.scale}")

    @property
    def mean(self) -> float:
        return self.shape * self.scale


def _check_finite(name: str, value: ArrayLike) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ParameterDomainError(f"{name} must be finite")
    return arr


def _check_count(name: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 0:
        raise ParameterDomainError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)


def _log_gamma_draws(shape: np.ndarray, rng: RandomStream) -> np.ndarray:
    """log of Gamma(shape, 1) draws, stable for very small shapes."""
    boosted = rng.generator.gamma(shape + 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        return np.log(boosted) + np.log(rng.generator.random(shape.shape)) / shape


# ---------------------------------------------------------------------------
# Scalar samplers
# ---------------------------------------------------------------------------

def sample_gamma(params: GammaParams, rng: RandomStream) -> float:
    """Draw from Gamma(shape, scale); exactly 0 when shape is 0."""
    if params.shape == 0:
        return 0.0
    return min(max(float(rng.generator.gamma(params.shape, params.scale)), TINY), HUGE)


def sample_beta(a: float, b: float, rng: RandomStream) -> float:
    """Beta draw clamped to [1e-12, 1 - 1e-12]."""
    return float(beta_draws(a, b, rng))


def sample_dirichlet(concentrations: ArrayLike, rng: RandomStream) -> np.ndarray:
    conc = _check_finite("dirichlet concentrations", concentrations)
    if conc.ndim != 1 or conc.size == 0:
        raise ParameterDomainError("dirichlet concentrations must be a non-empty vector")
    if np.any(conc <= 0):
        raise ParameterDomainError("dirichlet concentrations must be > 0")
    return dirichlet_columns(conc[:, None], rng)[:, 0]


def sample_poisson(rate: float, rng: RandomStream) -> int:
    if not math.isfinite(rate) or rate < 0:
        raise ParameterDomainError(f"poisson rate must be finite and >= 0, got {rate}")
    if rate == 0:
        return 0
    return int(poisson_draws(np.asarray([rate]), rng)[0])


def sample_multinomial(total: int, probs: ArrayLike, rng: RandomStream) -> np.ndarray:
    total = _check_count("multinomial total", total)
    p = _check_finite("multinomial probabilities", probs)
    if p.ndim != 1 or p.size == 0:
        raise ParameterDomainError("multinomial probabilities must be a non-empty vector")
    if np.any(p < 0):
        raise ParameterDomainError("multinomial probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ParameterDomainError(f"multinomial probabilities sum to {p.sum()}, not 1")
    if total == 0:
        return np.zeros(p.size, dtype=np.int64)
    return rng.generator.multinomial(total, p / p.sum()).astype(np.int64)


def sample_crt_exact(n: int, r: float, rng: RandomStream) -> int:
    """CRT(n, r) as a sum of Bernoulli(r / (r + t - 1)), t = 1..n."""
    n = _check_count("CRT customer count", n)
    if not math.isfinite(r) or r < 0:
        raise ParameterDomainError(f"CRT concentration must be finite and >= 0, got {r}")
    if n == 0 or r == 0:
        return 0
    probs = r / (r + np.arange(n, dtype=float))
    return int(np.count_nonzero(rng.generator.random(n) < probs))


def sample_crt_approx(n: int, r: float, m: int, rng: RandomStream) -> int:
    """
    CRT(m, r) plus a Poisson tail for the customers beyond the cutoff m.

    For n <= m this is the exact sampler, draw for draw.
    """
    m = _check_count("CRT cutoff", m)
    if m < 1:
        raise ParameterDomainError("CRT cutoff must be >= 1")
    n = _check_count("CRT customer count", n)
    if n <= m:
        return sample_crt_exact(n, r, rng)
    head = sample_crt_exact(m, r, rng)
    if r == 0:
        return head
    return head + sample_poisson(float(crt_tail_rate(n, m, r)), rng)


def sample_logarithmic(p: float, rng: RandomStream) -> int:
    """Logarithmic-series draw, pmf -p^u / (u ln(1 - p)), u >= 1."""
    if not math.isfinite(p) or not 0 < p < 1:
        raise ParameterDomainError(f"logarithmic parameter must lie in (0, 1), got {p}")
    return int(rng.generator.logseries(p))


def sample_negative_binomial(r: float, p: float, rng: RandomStream) -> int:
    """NB(r, p) with mean r p / (1 - p); r = 0 gives 0."""
    return int(nb_draws(np.asarray([r], dtype=float), p, rng)[0])


def digamma(x: float) -> float:
    if not math.isfinite(x) or x <= 0:
        raise ParameterDomainError(f"digamma argument must be > 0, got {x}")
    return float(special.digamma(x))


# ---------------------------------------------------------------------------
# Vectorized samplers used inside the sweep
# ---------------------------------------------------------------------------

def gamma_draws(shape: ArrayLike, scale: ArrayLike, rng: RandomStream) -> np.ndarray:
    """Elementwise Gamma(shape, scale); zero-shape entries are exactly 0."""
    shape_arr = _check_finite("gamma shape", shape)
    scale_arr = np.broadcast_to(_check_finite("gamma scale", scale), shape_arr.shape)
    if np.any(shape_arr < 0):
        raise ParameterDomainError("gamma shape must be >= 0")
    if np.any(scale_arr <= 0):
        raise ParameterDomainError("gamma scale must be > 0")
    out = np.zeros(shape_arr.shape)
    positive = shape_arr > 0
    if positive.any():
        with np.errstate(over="ignore"):
            draws = rng.generator.gamma(shape_arr[positive], scale_arr[positive])
        out[positive] = np.clip(draws, TINY, HUGE)
    return out


def beta_draws(a: ArrayLike, b: ArrayLike, rng: RandomStream) -> np.ndarray:
    """Elementwise Beta(a, b) clamped away from 0 and 1."""
    a_arr = _check_finite("beta a", a)
    b_arr = _check_finite("beta b", b)
    a_arr, b_arr = np.broadcast_arrays(a_arr, b_arr)
    if np.any(a_arr <= 0) or np.any(b_arr <= 0):
        raise ParameterDomainError("beta parameters must be > 0")
    log_x = _log_gamma_draws(a_arr, rng)
    log_y = _log_gamma_draws(b_arr, rng)
    with np.errstate(invalid="ignore"):
        diff = log_x - log_y
    # both draws underflowed
    diff = np.where(np.isnan(diff), 0.0, diff)
    return np.clip(special.expit(diff), BETA_EPS, 1.0 - BETA_EPS)


def dirichlet_columns(concentrations: np.ndarray, rng: RandomStream) -> np.ndarray:
    """Independent Dirichlet draw for every column of a V x K concentration matrix."""
    conc = np.asarray(concentrations, dtype=float)
    log_g = _log_gamma_draws(conc, rng)
    top = log_g.max(axis=0, keepdims=True)
    lost = ~np.isfinite(top[0])
    top[:, lost] = 0.0
    weights = np.exp(log_g - top)
    if lost.any():
        # every gamma draw underflowed: use the small-concentration limit, a
        # vertex picked with probability proportional to the concentrations
        for k in np.flatnonzero(lost):
            column = conc[:, k] / conc[:, k].sum()
            weights[:, k] = 0.0
            weights[rng.generator.choice(column.size, p=column), k] = 1.0
    return weights / weights.sum(axis=0, keepdims=True)


def poisson_draws(rate: ArrayLike, rng: RandomStream) -> np.ndarray:
    """Elementwise Poisson; rates and draws saturate at ``MAX_COUNT``."""
    rate_arr = np.asarray(rate, dtype=float)
    if np.any(np.isnan(rate_arr)) or np.any(rate_arr < 0):
        raise ParameterDomainError("poisson rate must be >= 0")
    draws = rng.generator.poisson(np.minimum(rate_arr, MAX_COUNT))
    return np.minimum(draws, MAX_COUNT).astype(np.int64)


def crt_tail_rate(n: ArrayLike, m: ArrayLike, r: ArrayLike) -> np.ndarray:
    """
    r (digamma(n + r) - digamma(m + r)), the expected tables of customers m+1..n.

    Past 1e6 the digamma difference cancels, so r log1p((n - m) / (m + r)) is used.
    """
    n_arr, m_arr, r_arr = np.broadcast_arrays(np.asarray(n, dtype=float), np.asarray(m, dtype=float),
                                              np.asarray(r, dtype=float))
    large = m_arr + r_arr > 1e6
    exact = r_arr * (special.digamma(n_arr + r_arr) - special.digamma(m_arr + r_arr))
    asymptotic = r_arr * np.log1p((n_arr - m_arr) / (m_arr + r_arr))
    return np.maximum(np.where(large, asymptotic, exact), 0.0)


def nb_draws(shape: ArrayLike, p: ArrayLike, rng: RandomStream) -> np.ndarray:
    """Elementwise NB(shape, p) through its gamma-Poisson mixture."""
    p_arr = _check_finite("negative binomial p", p)
    if np.any(p_arr <= 0) or np.any(p_arr >= 1):
        raise ParameterDomainError("negative binomial p must lie in (0, 1)")
    rate = gamma_draws(shape, p_arr / (1.0 - p_arr), rng)
    return poisson_draws(rate, rng)


def sample_crt_counts(n: ArrayLike, r: ArrayLike, rng: RandomStream,
                     cutoff: Optional[int] = None) -> Tuple[np.ndarray, int]:
    """
    Vectorized CRT(n_i, r_i) over arrays.

    With a cutoff, entries with n_i > cutoff use the head-plus-Poisson-tail
    scheme of ``sample_crt_approx``. Returns the draws and the number of
    Bernoulli trials spent.
    """
    n_arr = np.asarray(n)
    if n_arr.size and (not np.issubdtype(n_arr.dtype, np.integer) or n_arr.min() < 0):
        raise ParameterDomainError("CRT customer counts must be non-negative integers")
    n_arr = n_arr.astype(np.int64)
    r_arr = np.broadcast_to(_check_finite("CRT concentration", r), n_arr.shape)
    if np.any(r_arr < 0):
        raise ParameterDomainError("CRT concentration must be >= 0")
    if cutoff is not None and cutoff < 1:
        raise ParameterDomainError("CRT cutoff must be >= 1")

    out = np.zeros(n_arr.shape, dtype=np.int64)
    active = np.flatnonzero((n_arr > 0) & (r_arr > 0))
    if active.size == 0:
        return out, 0
    customers = n_arr.reshape(-1)[active]
    conc = r_arr.reshape(-1)[active]
    head = customers if cutoff is None else np.minimum(customers, cutoff)

    tables = np.empty(active.size, dtype=np.int64)
    ends = np.cumsum(head)
    start = 0
    while start < active.size:
        base = ends[start - 1] if start else 0
        stop = max(start + 1, int(np.searchsorted(ends, base + _CRT_CHUNK, side="right")))
        h = head[start:stop]
        owner = np.repeat(np.arange(stop - start), h)
        seat = np.arange(owner.size) - np.repeat(np.cumsum(h) - h, h)
        c = conc[start:stop][owner]
        hits = rng.generator.random(owner.size) < c / (c + seat)
        tables[start:stop] = np.bincount(owner, weights=hits, minlength=stop - start).astype(np.int64)
        start = stop

    if cutoff is not None:
        tail = customers > cutoff
        if tail.any():
            tables[tail] += poisson_draws(crt_tail_rate(customers[tail], cutoff, conc[tail]), rng)

    out.reshape(-1)[active] = tables
    return out, int(head.sum())
