"""Alpha-divergence generators and their convex conjugates.

The generator family is

    f_a(x) = ((x**a - 1) - a * (x - 1)) / (a * (a - 1))

normalized so that f(1) = f'(1) = 0 and f''(1) = 1.  Its conjugate is

    f*_a(y) = ((1 + (a - 1) y) ** (a / (a - 1)) - 1) / a,   y (1 - a) < 1

and (f*)' = (f')^{-1} maps dual arguments to density ratios.  The removable
singularities at a = 0 (reverse KL) and a = 1 (KL) use dedicated closed
forms.  All evaluators accept scalars or arrays; scalar in, float out.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConjugateDomain",
    "DomainError",
    "FiniteDistribution",
    "GeneratorSpec",
    "NAMED_CASES",
    "conjugate_domain",
    "divergence",
    "f",
    "f_prime",
    "f_star",
    "f_star_prime",
]

# Distance to 0 or 1 below which the closed-form limits are used.
SINGULAR_ATOL = 1e-9
# exp(700) is close to the largest finite double.
EXP_CAP = 700.0
# Slack on the closed boundary for a > 1, absorbs rounding in (A - lambda + kappa) / eta.
BOUNDARY_SLACK = 1e-12

NAMED_CASES = {
    "kl": 1.0,
    "reverse_kl": 0.0,
    "pearson": 2.0,
    "neyman": -1.0,
    "hellinger": 0.5,
}


class DomainError(ValueError):
    """Argument outside the domain of a generator or its conjugate."""


def _scalar_or_array(value, scalar):
    return float(value) if scalar else value


@dataclass(frozen=True)
class ConjugateDomain:
    """Half-line (or the real line) on which f* is defined.

    ``side`` is ``"upper"`` for y < bound, ``"lower"`` for y > bound and
    ``None`` when f* is finite everywhere.  ``closed`` marks the a > 1 case,
    where f* and (f*)' extend continuously to the bound.
    """

    side: str | None
    bound: float = float("nan")
    closed: bool = False

    def contains(self, y):
        y = np.asarray(y, dtype=float)
        if self.side is None:
            return np.isfinite(y)
        if self.side == "upper":
            return y < self.bound
        if self.closed:
            return y >= self.bound
        return y > self.bound

    def __str__(self):
        if self.side is None:
            return "R"
        op = "<" if self.side == "upper" else ">"
        return f"y {op} {self.bound:g}"


@dataclass(frozen=True)
class GeneratorSpec:
    """One member of the alpha-divergence family together with its calculus."""

    alpha: float
    named_case: str = field(default="", compare=False)

    def __post_init__(self):
        alpha = float(self.alpha)
        if not np.isfinite(alpha):
            raise ValueError(f"alpha must be finite, got {self.alpha!r}")
        object.__setattr__(self, "alpha", alpha)
        if not self.named_case:
            object.__setattr__(self, "named_case", _case_for(alpha))

    @classmethod
    def named(cls, name: str) -> "GeneratorSpec":
        key = name.lower().replace("-", "_").replace(" ", "_")
        if key not in NAMED_CASES:
            raise KeyError(f"unknown divergence {name!r}; known: {sorted(NAMED_CASES)}")
        return cls(NAMED_CASES[key])

    @property
    def is_kl(self) -> bool:
        return abs(self.alpha - 1.0) < SINGULAR_ATOL

    @property
    def is_reverse_kl(self) -> bool:
        return abs(self.alpha) < SINGULAR_ATOL

    @property
    def boundary(self) -> float:
        """Finite end of the conjugate domain, y = 1 / (1 - alpha); inf for KL."""
        if self.is_kl:
            return float("inf")
        return 1.0 / (1.0 - self.alpha)

    # -- generator ---------------------------------------------------------

    def f(self, x):
        scalar = np.ndim(x) == 0
        x = self._check_positive(x)
        a = self.alpha
        if self.is_kl:
            out = x * np.log(x) - (x - 1.0)
        elif self.is_reverse_kl:
            out = -np.log(x) + (x - 1.0)
        else:
            out = (np.expm1(a * np.log(x)) - a * (x - 1.0)) / (a * (a - 1.0))
        return _scalar_or_array(out, scalar)

    def f_prime(self, x):
        scalar = np.ndim(x) == 0
        x = self._check_positive(x)
        a = self.alpha
        if self.is_kl:
            out = np.log(x)
        elif self.is_reverse_kl:
            out = 1.0 - 1.0 / x
        else:
            out = np.expm1((a - 1.0) * np.log(x)) / (a - 1.0)
        return _scalar_or_array(out, scalar)

    def f_second(self, x):
        scalar = np.ndim(x) == 0
        x = self._check_positive(x)
        return _scalar_or_array(x ** (self.alpha - 2.0), scalar)

    def f_at_zero(self) -> float:
        """Limit of f(x) as x -> 0+, which is 1/alpha for alpha > 0 and +inf otherwise."""
        if self.alpha > SINGULAR_ATOL:
            return 1.0 if self.is_kl else 1.0 / self.alpha
        return float("inf")

    # -- conjugate ---------------------------------------------------------

    def f_star(self, y):
        scalar = np.ndim(y) == 0
        y = self._check_conjugate(y)
        value, _, _ = self._conjugate_terms(y)
        return _scalar_or_array(value, scalar)

    def f_star_prime(self, y):
        scalar = np.ndim(y) == 0
        y = self._check_conjugate(y)
        _, slope, _ = self._conjugate_terms(y)
        return _scalar_or_array(slope, scalar)

    def f_star_second(self, y):
        scalar = np.ndim(y) == 0
        y = self._check_conjugate(y)
        _, _, curv = self._conjugate_terms(y)
        return _scalar_or_array(curv, scalar)

    def conjugate_domain(self) -> ConjugateDomain:
        if self.is_kl:
            return ConjugateDomain(None)
        if self.alpha < 1.0:
            return ConjugateDomain("upper", self.boundary)
        return ConjugateDomain("lower", self.boundary, closed=True)

    def clip_to_domain(self, y):
        """Project y onto the closed conjugate domain for alpha > 1; identity otherwise.

        The amount moved, times eta, is the non-negativity multiplier kappa.
        """
        if self.alpha > 1.0 and not self.is_kl:
            return np.maximum(y, self.boundary)
        return y

    def _conjugate_terms(self, y):
        """(f*, f*', f*'') evaluated without domain checks.

        Out-of-domain entries come back as inf or nan; callers that need
        errors go through ``_check_conjugate`` first.
        """
        y = np.asarray(y, dtype=float)
        a = self.alpha
        if self.is_kl:
            with np.errstate(over="ignore"):
                slope = np.exp(y)
                value = np.expm1(y)
            return value, slope, slope
        if self.is_reverse_kl:
            with np.errstate(divide="ignore", invalid="ignore"):
                base = 1.0 - y
                slope = np.where(base > 0, 1.0 / base, np.inf)
                value = np.where(base > 0, -np.log1p(-np.minimum(y, 1.0)), np.inf)
            return value, slope, slope * slope
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            base = 1.0 + (a - 1.0) * y
            if a > 1.0:
                base = np.where((base < 0) & (base >= -BOUNDARY_SLACK), 0.0, base)
            inside = base > 0
            log_base = np.log1p(np.where(inside, (a - 1.0) * y, 0.0))
            value = np.expm1(a / (a - 1.0) * log_base) / a
            slope = np.exp(log_base / (a - 1.0))
            curv = slope ** (2.0 - a)
            if a > 1.0:
                at_edge = base == 0
                value = np.where(at_edge, -1.0 / a, value)
                slope = np.where(at_edge, 0.0, slope)
                curv = np.where(at_edge, 0.0, curv)
            bad = base < 0 if a > 1.0 else ~inside
            value = np.where(bad, np.inf, value)
            slope = np.where(bad, np.nan, slope)
            curv = np.where(bad, np.nan, curv)
        return value, slope, curv

    # -- guards ------------------------------------------------------------

    @staticmethod
    def _check_positive(x):
        x = np.asarray(x, dtype=float)
        if np.any(~(x > 0)):
            bad = x[~(x > 0)].flat[0]
            raise DomainError(f"generator argument must be > 0, got {bad!r}")
        return x

    def _check_conjugate(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(np.isnan(y)):
            raise DomainError("conjugate argument is nan")
        if self.is_kl:
            if np.any(y > EXP_CAP):
                raise DomainError(
                    f"conjugate argument {y.max():g} exceeds {EXP_CAP:g}; exp would overflow"
                )
            return y
        base = 1.0 + (self.alpha - 1.0) * y
        limit = -BOUNDARY_SLACK if self.alpha > 1.0 else 0.0
        violated = base < limit if self.alpha > 1.0 else base <= limit
        if np.any(violated):
            bad = float(y[violated].flat[0])
            raise DomainError(
                f"conjugate argument y={bad!r} violates y*(1-alpha) < 1 "
                f"(alpha={self.alpha:g}, need {self.conjugate_domain()})"
            )
        return y


def _case_for(alpha: float) -> str:
    for name, value in NAMED_CASES.items():
        if abs(alpha - value) < SINGULAR_ATOL:
            return name
    return "generic"


def _as_spec(spec) -> GeneratorSpec:
    if isinstance(spec, GeneratorSpec):
        return spec
    if isinstance(spec, str):
        return GeneratorSpec.named(spec)
    return GeneratorSpec(float(spec))


def f(spec, x):
    return _as_spec(spec).f(x)


def f_prime(spec, x):
    return _as_spec(spec).f_prime(x)


def f_star(spec, y):
    return _as_spec(spec).f_star(y)


def f_star_prime(spec, y):
    return _as_spec(spec).f_star_prime(y)


def conjugate_domain(spec) -> ConjugateDomain:
    return _as_spec(spec).conjugate_domain()


@dataclass(frozen=True)
class FiniteDistribution:
    """Non-negative weights over a finite outcome set.

    Unnormalized measures are allowed (``normalized=False``); the generalized
    divergences are defined for them too.
    """

    weights: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise ValueError("distribution needs at least one outcome")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("distribution weights must be finite and non-negative")
        if self.normalized and abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"normalized distribution sums to {w.sum()!r}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_weights(cls, weights) -> "FiniteDistribution":
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum())

    @classmethod
    def uniform(cls, n: int) -> "FiniteDistribution":
        return cls(np.full(n, 1.0 / n))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def __len__(self):
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)


def divergence(spec, p, q) -> float:
    """D_f(p || q) = sum_a q(a) f(p(a) / q(a)) over the support of q.

    Raises ``DomainError`` if p puts mass where q has none.
    """
    spec = _as_spec(spec)
    p = np.asarray(p, dtype=float).reshape(-1)
    q = np.asarray(q, dtype=float).reshape(-1)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("distributions must be non-negative")
    off_support = (q == 0) & (p > 0)
    if np.any(off_support):
        idx = int(np.flatnonzero(off_support)[0])
        raise DomainError(
            f"p is not absolutely continuous w.r.t. q: outcome {idx} has p={p[idx]!r}, q=0"
        )
    on = q > 0
    ratio = p[on] / q[on]
    terms = np.empty_like(ratio)
    pos = ratio > 0
    terms[pos] = spec.f(ratio[pos])
    terms[~pos] = spec.f_at_zero()
    return float(np.sum(q[on] * terms))
