"""Scalar nonlinearities used by the implicit scheme.

Three families live here:

* monotone graphs: a nondecreasing map ``value`` (the time nonlinearity),
  its convex primitive ``primitive``, the Legendre conjugate of the
  primitive, and the inverse map;
* flux laws: a convex gradient potential and its derivative, evaluated on
  face gradient vectors;
* source laws: a reaction term together with its truncation to a fixed cap
  and the primitive of the truncated composition.

Everything is vectorized over numpy arrays and stateless, so the same
objects can be shared between runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "GraphDomainError",
    "OutOfRangeError",
    "GraphSpecError",
    "MonotoneGraph",
    "power_graph",
    "tan_graph",
    "log1p_graph",
    "rational_graph",
    "identity_graph",
    "custom_graph",
    "construct_graph",
    "graph_conjugate_eval",
    "SourceLaw",
    "zero_source",
    "linear_source",
    "power_source",
    "sine_source",
    "quadratic_source",
    "custom_source",
    "truncate_source",
    "psi_truncated_primitive",
    "lipschitz_on_interval",
    "FluxLaw",
    "p_laplacian",
    "sum_p_laplacian",
    "flux_eval",
    "potential_eval",
]

_DERIVATIVE_FLOOR = 1e-10


class GraphDomainError(ValueError):
    """An argument fell outside the admissible interval of a graph."""


class OutOfRangeError(ValueError):
    """A dual argument fell outside the closure of the graph's range."""


class GraphSpecError(ValueError):
    """A graph or flux descriptor is malformed."""


def _as_float_array(s):
    a = np.asarray(s, dtype=float)
    if not np.all(np.isfinite(a)):
        raise GraphDomainError("non-finite argument")
    return a


def _match_shape(out, template):
    # scalar in, scalar out
    if np.isscalar(template) or np.ndim(template) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# monotone graphs


@dataclass(frozen=True)
class MonotoneGraph:
    """Nondecreasing scalar map with convex primitive and its conjugate.

    ``value`` is defined on the open interval ``(domain_lo, domain_hi)``
    with ``value(0) = 0``; ``primitive`` is its convex antiderivative with
    ``primitive(0) = 0``; ``conjugate`` is the Legendre transform of the
    primitive, finite on the closure of the range of ``value``.
    """

    kind: str
    domain_lo: float
    domain_hi: float
    range_lo: float
    range_hi: float
    params: tuple = ()
    _value: Callable = field(repr=False, default=None)
    _primitive: Callable = field(repr=False, default=None)
    _conjugate: Callable = field(repr=False, default=None)
    _inverse: Callable = field(repr=False, default=None)
    _derivative: Callable = field(repr=False, default=None)

    # -- domain helpers -----------------------------------------------------

    def contains(self, s, closed: bool = False) -> bool:
        a = np.asarray(s, dtype=float)
        if closed:
            return bool(np.all(a >= self.domain_lo) and np.all(a <= self.domain_hi))
        return bool(np.all(a > self.domain_lo) and np.all(a < self.domain_hi))

    def _require_open(self, a):
        if not (np.all(a > self.domain_lo) and np.all(a < self.domain_hi)):
            bad = a[(a <= self.domain_lo) | (a >= self.domain_hi)]
            raise GraphDomainError(
                f"argument {float(np.ravel(bad)[0]):g} outside open interval "
                f"({self.domain_lo:g}, {self.domain_hi:g}) of {self.kind} graph"
            )

    def _require_closure(self, a):
        if not (np.all(a >= self.domain_lo) and np.all(a <= self.domain_hi)):
            bad = a[(a < self.domain_lo) | (a > self.domain_hi)]
            raise GraphDomainError(
                f"argument {float(np.ravel(bad)[0]):g} outside closed interval "
                f"[{self.domain_lo:g}, {self.domain_hi:g}] of {self.kind} graph"
            )

    # -- evaluations ---------------------------------------------------------

    def value(self, s):
        """The monotone map itself."""
        a = _as_float_array(s)
        self._require_open(a)
        return _match_shape(self._value(a), s)

    def primitive(self, s):
        """Convex antiderivative of ``value``; finite or +inf on the closure."""
        a = _as_float_array(s)
        self._require_closure(a)
        return _match_shape(self._primitive(a), s)

    def conjugate(self, sigma):
        """Legendre transform of ``primitive`` on the closure of the range."""
        a = _as_float_array(sigma)
        if not (np.all(a >= self.range_lo) and np.all(a <= self.range_hi)):
            bad = a[(a < self.range_lo) | (a > self.range_hi)]
            raise OutOfRangeError(
                f"dual argument {float(np.ravel(bad)[0]):g} outside closure "
                f"[{self.range_lo:g}, {self.range_hi:g}] of the range of {self.kind}"
            )
        return _match_shape(self._conjugate(a), sigma)

    def inverse(self, sigma):
        """Inverse map; minimal-norm selection on flat pieces."""
        a = _as_float_array(sigma)
        if not (np.all(a > self.range_lo) and np.all(a < self.range_hi)):
            bad = a[(a <= self.range_lo) | (a >= self.range_hi)]
            raise OutOfRangeError(
                f"dual argument {float(np.ravel(bad)[0]):g} outside open range "
                f"({self.range_lo:g}, {self.range_hi:g}) of {self.kind}"
            )
        if self._inverse is not None:
            return _match_shape(self._inverse(a), sigma)
        out = np.vectorize(lambda v: _minimal_norm_inverse(self, v))(a)
        return _match_shape(out, sigma)

    def derivative(self, s):
        """Pointwise slope of ``value``; may be 0 or +inf at isolated points."""
        a = _as_float_array(s)
        self._require_open(a)
        if self._derivative is not None:
            return _match_shape(self._derivative(a), s)
        # centered difference quotient with a domain-respecting width
        width = 1e-7 * np.maximum(1.0, np.abs(a))
        lo = np.maximum(a - width, np.nextafter(self.domain_lo, self.domain_hi))
        hi = np.minimum(a + width, np.nextafter(self.domain_hi, self.domain_lo))
        out = (self._value(hi) - self._value(lo)) / (hi - lo)
        return _match_shape(out, s)

    def derivative_clipped(self, s, floor: float = _DERIVATIVE_FLOOR):
        """Slope clipped into [floor, 1/floor]; keeps Newton matrices definite."""
        d = np.asarray(self.derivative(s), dtype=float)
        d = np.where(np.isfinite(d), d, 1.0 / floor)
        return np.clip(d, floor, 1.0 / floor)


def _minimal_norm_inverse(graph: MonotoneGraph, sigma: float, tol: float = 1e-13) -> float:
    """Smallest-|s| solution of ``value(s) = sigma`` by monotone bisection.

    On a flat piece of the graph the predicate switch point is the endpoint
    of the piece closest to zero, which is the minimal-norm selection.
    """
    val = lambda s: float(graph._value(np.asarray(float(s))))
    v0 = val(0.0)
    if sigma == v0:
        return 0.0
    if sigma > v0:
        lo, hi = 0.0, 1.0 if np.isinf(graph.domain_hi) else 0.5 * graph.domain_hi
        for _ in range(2000):
            if val(hi) >= sigma:
                break
            lo = hi
            hi = 2.0 * hi if np.isinf(graph.domain_hi) else 0.5 * (hi + graph.domain_hi)
        else:
            raise OutOfRangeError(f"no preimage of {sigma:g} in the graph interval")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if val(mid) >= sigma:
                hi = mid
            else:
                lo = mid
            if hi - lo <= tol * max(1.0, abs(hi)):
                break
        return hi
    lo, hi = -1.0 if np.isinf(graph.domain_lo) else 0.5 * graph.domain_lo, 0.0
    for _ in range(2000):
        if val(lo) <= sigma:
            break
        hi = lo
        lo = 2.0 * lo if np.isinf(graph.domain_lo) else 0.5 * (lo + graph.domain_lo)
    else:
        raise OutOfRangeError(f"no preimage of {sigma:g} in the graph interval")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if val(mid) <= sigma:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(lo)):
            break
    return lo


# -- shipped graph families --------------------------------------------------


def power_graph(q: float) -> MonotoneGraph:
    """``s -> |s|^(q-2) s`` on the whole line; needs ``q > 1``."""
    if not q > 1.0:
        raise GraphSpecError(f"power graph needs exponent q > 1, got {q}")
    qc = q / (q - 1.0)

    def val(s):
        return np.sign(s) * np.abs(s) ** (q - 1.0)

    def prim(s):
        return np.abs(s) ** q / q

    def conj(sig):
        return np.abs(sig) ** qc / qc

    def inv(sig):
        return np.sign(sig) * np.abs(sig) ** (qc - 1.0)

    def deriv(s):
        with np.errstate(divide="ignore"):
            return np.where(s == 0.0, np.inf if q < 2.0 else (1.0 if q == 2.0 else 0.0),
                            (q - 1.0) * np.abs(np.where(s == 0.0, 1.0, s)) ** (q - 2.0))

    return MonotoneGraph("power", -np.inf, np.inf, -np.inf, np.inf, (q,),
                         val, prim, conj, inv, deriv)


def identity_graph() -> MonotoneGraph:
    return power_graph(2.0)


def tan_graph() -> MonotoneGraph:
    """``tan`` on (-pi/2, pi/2); the primitive blows up at the endpoints."""

    def prim(s):
        with np.errstate(divide="ignore"):
            out = -np.log(np.cos(np.clip(s, -np.pi / 2, np.pi / 2)))
        return np.where(np.abs(s) >= np.pi / 2, np.inf, out)

    def conj(sig):
        return sig * np.arctan(sig) - 0.5 * np.log1p(sig * sig)

    return MonotoneGraph("tan", -np.pi / 2, np.pi / 2, -np.inf, np.inf, (),
                         np.tan, prim, conj, np.arctan,
                         lambda s: 1.0 / np.cos(s) ** 2)


def log1p_graph() -> MonotoneGraph:
    """``log(1+s)`` on (-1, inf); the primitive stays finite at -1."""

    def prim(s):
        with np.errstate(invalid="ignore", divide="ignore"):
            out = (1.0 + s) * np.log1p(s) - s
        return np.where(s == -1.0, 1.0, out)

    def conj(sig):
        return np.expm1(sig) - sig

    return MonotoneGraph("log1p", -1.0, np.inf, -np.inf, np.inf, (),
                         np.log1p, prim, conj, np.expm1,
                         lambda s: 1.0 / (1.0 + s))


def rational_graph() -> MonotoneGraph:
    """``s/(1+s)`` on (-1, inf); range is (-inf, 1) so the dual side saturates."""

    def val(s):
        return s / (1.0 + s)

    def prim(s):
        with np.errstate(divide="ignore"):
            return np.where(s == -1.0, np.inf, s - np.log1p(s))

    def conj(sig):
        with np.errstate(divide="ignore"):
            return np.where(sig == 1.0, np.inf, -sig - np.log1p(-sig))

    def inv(sig):
        return sig / (1.0 - sig)

    return MonotoneGraph("rational", -1.0, np.inf, -np.inf, 1.0, (),
                         val, prim, conj, inv,
                         lambda s: 1.0 / (1.0 + s) ** 2)


def custom_graph(value: Callable, primitive: Callable,
                 conjugate: Optional[Callable] = None,
                 inverse: Optional[Callable] = None,
                 derivative: Optional[Callable] = None,
                 domain: tuple = (-np.inf, np.inf),
                 value_range: tuple = (-np.inf, np.inf)) -> MonotoneGraph:
    """Wrap user-supplied evaluations; missing hooks fall back to numeric ones."""
    lo, hi = float(domain[0]), float(domain[1])
    if not lo < 0.0 < hi:
        raise GraphSpecError("custom graph interval must contain 0")
    if float(value(np.asarray(0.0))) != 0.0:
        raise GraphSpecError("custom graph must vanish at 0")
    cell: dict = {}
    if conjugate is None:
        conjugate = lambda sig: np.vectorize(
            lambda v: _conjugate_by_maximization(cell["graph"], v))(sig)
    g = MonotoneGraph("custom", lo, hi, float(value_range[0]), float(value_range[1]),
                      (), value, primitive, conjugate, inverse, derivative)
    cell["graph"] = g
    return g


_GRAPH_BUILDERS = {
    "power": lambda q: power_graph(float(q)),
    "identity": identity_graph,
    "tan": tan_graph,
    "log1p": log1p_graph,
    "rational": rational_graph,
}


def construct_graph(kind: str, **params) -> MonotoneGraph:
    """Front door used by configuration code; ``kind`` picks the family."""
    try:
        builder = _GRAPH_BUILDERS[kind]
    except KeyError:
        raise GraphSpecError(
            f"unknown graph kind {kind!r}; choose from {sorted(_GRAPH_BUILDERS)}")
    try:
        return builder(**params)
    except TypeError as exc:
        raise GraphSpecError(f"bad parameters for {kind!r} graph: {exc}") from exc


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _conjugate_by_maximization(graph: MonotoneGraph, sigma: float,
                               tol: float = 1e-10) -> float:
    """sup_s (sigma*s - primitive(s)) by golden section plus a bisection polish.

    The maximand is concave, so the golden section bracket is reliable; the
    polish drives ``value(s) - sigma`` to zero, which sharpens the maximizer
    to the requested tolerance.
    """
    jfun = lambda s: float(graph._primitive(np.asarray(float(s))))
    obj = lambda s: sigma * s - jfun(s)
    lo = graph.domain_lo + 1e-12 if np.isfinite(graph.domain_lo) else -1.0
    hi = graph.domain_hi - 1e-12 if np.isfinite(graph.domain_hi) else 1.0
    # expand until the objective decreases outward on both sides
    for _ in range(400):
        if np.isfinite(graph.domain_hi) or obj(hi) <= obj(hi / 2.0) or hi > 1e150:
            break
        hi *= 2.0
    for _ in range(400):
        if np.isfinite(graph.domain_lo) or obj(lo) <= obj(lo / 2.0) or lo < -1e150:
            break
        lo *= 2.0
    a, b = lo, hi
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = obj(c), obj(d)
    while b - a > 1e-12 * max(1.0, abs(a), abs(b)):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = obj(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = obj(d)
    s_star = 0.5 * (a + b)
    # polish: the stationarity condition is value(s) = sigma
    slo, shi = a, b
    for _ in range(100):
        g = float(graph._value(np.asarray(s_star))) - sigma
        if abs(g) < tol:
            break
        if g > 0:
            shi = s_star
        else:
            slo = s_star
        s_star = 0.5 * (slo + shi)
    return obj(s_star)


def graph_conjugate_eval(graph: MonotoneGraph, sigma):
    """Conjugate evaluation; variational fallback when no closed form exists."""
    return graph.conjugate(sigma)


# ---------------------------------------------------------------------------
# source laws


@dataclass(frozen=True)
class SourceLaw:
    """Reaction term F with an optional truncation cap.

    ``raw`` is the untruncated law; ``truncated`` clamps it to
    ``[-cap, cap]``.  ``monotone`` records whether the law is nondecreasing,
    which the comparison machinery relies on.
    """

    kind: str
    func: Callable = field(repr=False)
    monotone: bool = False
    cap: Optional[float] = None
    params: tuple = ()

    def raw(self, s):
        return _match_shape(self.func(np.asarray(s, dtype=float)), s)

    def truncated(self, s):
        if self.cap is None:
            raise GraphSpecError("source law has no truncation cap set")
        out = np.clip(self.func(np.asarray(s, dtype=float)), -self.cap, self.cap)
        return _match_shape(out, s)

    def with_cap(self, cap: float) -> "SourceLaw":
        if not cap > 0.0:
            raise GraphSpecError(f"truncation cap must be positive, got {cap}")
        return replace(self, cap=float(cap))

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"


def zero_source() -> SourceLaw:
    return SourceLaw("zero", lambda s: np.zeros_like(s), monotone=True)


def linear_source(coefficient: float = 1.0) -> SourceLaw:
    c = float(coefficient)
    return SourceLaw("linear", lambda s: c * s, monotone=c >= 0.0, params=(c,))


def power_source(exponent: float, coefficient: float = 1.0) -> SourceLaw:
    """``F(s) = coefficient * |s|^(exponent-2) s``; monotone for positive coefficient."""
    r, c = float(exponent), float(coefficient)
    if not r > 1.0:
        raise GraphSpecError(f"power source needs exponent > 1, got {r}")
    return SourceLaw("power",
                     lambda s: c * np.sign(s) * np.abs(s) ** (r - 1.0),
                     monotone=c >= 0.0, params=(r, c))


def sine_source(coefficient: float = 1.0, frequency: float = 1.0) -> SourceLaw:
    c, w = float(coefficient), float(frequency)
    return SourceLaw("sine", lambda s: c * np.sin(w * s), monotone=False, params=(c, w))


def quadratic_source(coefficient: float = 1.0) -> SourceLaw:
    c = float(coefficient)
    return SourceLaw("quadratic", lambda s: c * s * s, monotone=False, params=(c,))


def custom_source(func: Callable, monotone: bool = False) -> SourceLaw:
    return SourceLaw("custom", func, monotone=monotone)


def truncate_source(law: SourceLaw, s):
    """Clamp of the raw law; identical to the raw law while |F| <= cap."""
    return law.truncated(s)


def lipschitz_on_interval(law: SourceLaw, lo: float, hi: float,
                          samples: int = 4097, truncated: bool = False) -> float:
    """Largest difference quotient of the law over a dense grid on [lo, hi].

    With ``truncated`` the clamped law is sampled instead; clamping never
    increases the constant, and where the cap is active the raw quotients
    would say nothing about the dynamics actually computed.
    """
    if hi <= lo:
        return 0.0
    pts = np.linspace(lo, hi, samples)
    vals = law.truncated(pts) if truncated else law.func(pts)
    quot = np.abs(np.diff(vals)) / np.diff(pts)
    return float(np.max(quot)) if quot.size else 0.0


def psi_truncated_primitive(law: SourceLaw, graph: MonotoneGraph, s):
    """Antiderivative of the truncated law composed with the graph.

    Returns ``integral over [0, s] of truncated(value(t)) dt`` for each
    entry of ``s``; entries must lie in the closure of the graph interval.
    The integrand is bounded by the cap, so the bound ``|result| <= cap*|s|``
    holds by construction.
    """
    if law.cap is None:
        raise GraphSpecError("source law has no truncation cap set")
    arr = np.asarray(s, dtype=float)
    if not (np.all(arr >= graph.domain_lo) and np.all(arr <= graph.domain_hi)):
        raise GraphDomainError("primitive endpoint outside the closed graph interval")
    flat = arr.ravel()

    def integrand(t):
        return np.clip(law.func(graph._value(t)), -law.cap, law.cap)

    # integrate once over each gap between consecutive sorted endpoints and
    # accumulate, so repeated values cost nothing extra
    nodes = np.unique(np.concatenate(([0.0], flat)))
    segs = np.stack([nodes[:-1], nodes[1:]], axis=1)
    seg_ints = _adaptive_segments(integrand, segs)
    cum = np.concatenate(([0.0], np.cumsum(seg_ints)))
    zero_pos = int(np.searchsorted(nodes, 0.0))
    lookup = cum - cum[zero_pos]
    idx = np.searchsorted(nodes, flat)
    out = lookup[idx].reshape(arr.shape)
    return _match_shape(out, s)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _gauss_batch(fn: Callable, a: np.ndarray, b: np.ndarray, panels: int) -> np.ndarray:
    """Composite Gauss rule over each [a_k, b_k] with the given panel count."""
    frac = np.linspace(0.0, 1.0, panels + 1)
    edges = a[:, None] + (b - a)[:, None] * frac[None, :]       # (nseg, panels+1)
    mid = 0.5 * (edges[:, :-1] + edges[:, 1:])[:, :, None]
    half = 0.5 * (edges[:, 1:] - edges[:, :-1])[:, :, None]
    pts = mid + half * _GL_NODES[None, None, :]
    vals = fn(pts)
    return np.sum(half * vals * _GL_WEIGHTS[None, None, :], axis=(1, 2))


def _adaptive_segments(fn: Callable, segments: np.ndarray,
                       rel_tol: float = 1e-13, max_depth: int = 14) -> np.ndarray:
    """Gauss panels per segment, doubled until each integral stabilizes."""
    if segments.size == 0:
        return np.zeros(0)
    a, b = segments[:, 0].copy(), segments[:, 1].copy()
    out = _gauss_batch(fn, a, b, 1)
    active = b > a
    out[~active] = 0.0
    for depth in range(1, max_depth + 1):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        cur = _gauss_batch(fn, a[idx], b[idx], 2 ** depth)
        settled = np.abs(cur - out[idx]) <= rel_tol * (1.0 + np.abs(cur))
        out[idx] = cur
        active[idx[settled]] = False
    return out


# ---------------------------------------------------------------------------
# flux laws


def _safe_power(base, exponent):
    """``base ** exponent`` with the 0**negative limit taken as 0.

    Every use multiplies the result by a factor that vanishes at base 0, so
    the limit value is the correct one; positive exponents pass through.
    """
    if exponent >= 0.0:
        return base ** exponent
    with np.errstate(divide="ignore"):
        out = np.where(base == 0.0, 0.0, base ** np.where(base == 0.0, 1.0, exponent))
    return out


@dataclass(frozen=True)
class FluxLaw:
    """Convex gradient potential and its derivative on face vectors.

    ``terms`` holds (weight, exponent) pairs; a single pair is the plain
    power-growth law, several pairs sum them.  ``p`` is the growth exponent
    (the largest term exponent), ``coercivity``/``growth`` are the structure
    constants the sampling checks use, ``epsilon`` smooths the singular
    branch, and ``coefficient`` optionally scales the law per face position.
    """

    kind: str
    terms: tuple
    p: float
    coercivity: float
    growth: float
    epsilon: float = 0.0
    coefficient: Optional[Callable] = field(repr=False, default=None)

    @property
    def homogeneous(self) -> bool:
        return self.coefficient is None

    @property
    def needs_full_gradient(self) -> bool:
        # linear laws act componentwise, so tangential reconstruction only
        # matters when some exponent differs from 2
        return any(p != 2.0 for _, p in self.terms)

    def with_epsilon(self, epsilon: float) -> "FluxLaw":
        return replace(self, epsilon=float(epsilon))

    def _coef(self, x, shape):
        if self.coefficient is None:
            return 1.0
        if x is None:
            raise GraphSpecError("spatially varying flux law needs face positions")
        return np.asarray(self.coefficient(x), dtype=float).reshape(shape)

    def potential(self, z, x=None):
        """Convex potential; the shift makes it vanish at z = 0 exactly."""
        zz = np.asarray(z, dtype=float)
        sq = np.sum(zz * zz, axis=-1)
        acc = np.zeros_like(sq)
        e2 = self.epsilon * self.epsilon
        for w, p in self.terms:
            acc += (w / p) * ((sq + e2) ** (0.5 * p) - self.epsilon ** p)
        return acc * self._coef(x, acc.shape)

    def flux(self, z, x=None):
        """Derivative of the potential with respect to the gradient vector."""
        zz = np.asarray(z, dtype=float)
        sq = np.sum(zz * zz, axis=-1, keepdims=True)
        e2 = self.epsilon * self.epsilon
        acc = np.zeros_like(zz)
        for w, p in self.terms:
            acc += w * _safe_power(sq + e2, 0.5 * p - 1.0) * zz
        coef = self._coef(x, acc.shape[:-1])
        return acc * (coef if np.isscalar(coef) else coef[..., None])

    def flux_jacobian(self, z, x=None):
        """d x d derivative blocks of the flux, one per face."""
        zz = np.asarray(z, dtype=float)
        d = zz.shape[-1]
        sq = np.sum(zz * zz, axis=-1)
        e2 = self.epsilon * self.epsilon
        eye = np.eye(d)
        out = np.zeros(zz.shape[:-1] + (d, d))
        for w, p in self.terms:
            base = sq + e2
            m = _safe_power(base, 0.5 * p - 1.0)
            out += w * m[..., None, None] * eye
            if p != 2.0:
                mp = _safe_power(base, 0.5 * p - 2.0)
                out += w * (p - 2.0) * mp[..., None, None] \
                    * zz[..., :, None] * zz[..., None, :]
        coef = self._coef(x, sq.shape)
        return out * (coef if np.isscalar(coef) else coef[..., None, None])


def _structure_constants(terms: Sequence[tuple]) -> tuple:
    p_eff = max(p for _, p in terms)
    w_eff = sum(w for w, p in terms if p == p_eff)
    if p_eff >= 2.0:
        mono = 2.0 ** (2.0 - p_eff)
    else:
        mono = p_eff - 1.0
    coercivity = w_eff * min(1.0 / p_eff, mono)
    growth = sum(w * max(1.0 / p, 1.0) for w, p in terms) + sum(w for w, _ in terms)
    return p_eff, coercivity, growth


def p_laplacian(p: float, epsilon: Optional[float] = None,
                coefficient: Optional[Callable] = None) -> FluxLaw:
    """Power-growth gradient law; ``epsilon`` defaults to 1e-8 when singular."""
    p = float(p)
    if not p > 1.0:
        raise GraphSpecError(f"gradient exponent must exceed 1, got {p}")
    if epsilon is None:
        epsilon = 1e-8 if p < 2.0 else 0.0
    if epsilon < 0.0:
        raise GraphSpecError("regularization must be nonnegative")
    terms = ((1.0, p),)
    p_eff, coer, grow = _structure_constants(terms)
    return FluxLaw("p_laplacian", terms, p_eff, coer, grow, float(epsilon), coefficient)


def sum_p_laplacian(exponents: Sequence[float], weights: Optional[Sequence[float]] = None,
                    epsilon: Optional[float] = None) -> FluxLaw:
    """Weighted sum of power-growth laws; the growth exponent is the largest."""
    ps = [float(p) for p in exponents]
    if not ps or any(p <= 1.0 for p in ps):
        raise GraphSpecError("all gradient exponents must exceed 1")
    ws = [1.0] * len(ps) if weights is None else [float(w) for w in weights]
    if len(ws) != len(ps) or any(w <= 0.0 for w in ws):
        raise GraphSpecError("weights must be positive and match the exponents")
    terms = tuple(zip(ws, ps))
    p_eff, coer, grow = _structure_constants(terms)
    if epsilon is None:
        epsilon = 1e-8 if min(ps) < 2.0 else 0.0
    return FluxLaw("sum_p_laplacian", terms, p_eff, coer, grow, float(epsilon))


def flux_eval(law: FluxLaw, x, z):
    """Flux at face position ``x`` and gradient vector ``z``."""
    return law.flux(z, x)


def potential_eval(law: FluxLaw, x, z):
    """Potential at face position ``x`` and gradient vector ``z``."""
    return law.potential(z, x)
