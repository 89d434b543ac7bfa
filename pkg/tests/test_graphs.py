"""Graph laws: closed forms, duality, inverses, sources, flux laws."""

import math

import numpy as np
import pytest

from dnflow.graphs import (
    GraphDomainError,
    GraphSpecError,
    OutOfRangeError,
    construct_graph,
    custom_graph,
    custom_source,
    flux_eval,
    identity_graph,
    linear_source,
    lipschitz_on_interval,
    log1p_graph,
    p_laplacian,
    potential_eval,
    power_graph,
    power_source,
    psi_truncated_primitive,
    quadratic_source,
    rational_graph,
    sine_source,
    sum_p_laplacian,
    tan_graph,
    truncate_source,
    zero_source,
)

ALL_GRAPHS = [
    power_graph(1.5),
    power_graph(2.0),
    power_graph(3.0),
    power_graph(4.0),
    tan_graph(),
    log1p_graph(),
    rational_graph(),
]


def sample_domain(graph, count, rng, margin=1e-3):
    lo = graph.domain_lo if np.isfinite(graph.domain_lo) else -8.0
    hi = graph.domain_hi if np.isfinite(graph.domain_hi) else 8.0
    span = hi - lo
    return lo + margin * span + (1.0 - 2.0 * margin) * span * rng.random(count)


# -- closed-form spot values -------------------------------------------------------

def test_power_graph_closed_forms():
    g = power_graph(3.0)
    assert g.value(2.0) == pytest.approx(4.0, abs=1e-15)
    assert g.value(-2.0) == pytest.approx(-4.0, abs=1e-15)
    assert g.primitive(2.0) == pytest.approx(8.0 / 3.0, abs=1e-14)
    # conjugate exponent of 1.5 is 3: primitive(4) = 4^1.5/1.5, conjugate(2) = 8/3
    g15 = power_graph(1.5)
    assert g15.primitive(4.0) == pytest.approx(16.0 / 3.0, abs=1e-13)
    assert g15.conjugate(2.0) == pytest.approx(8.0 / 3.0, abs=1e-14)


def test_identity_graph_is_quadratic():
    g = identity_graph()
    s = np.linspace(-3.0, 3.0, 41)
    assert np.allclose(g.value(s), s, atol=1e-15)
    assert np.allclose(g.primitive(s), 0.5 * s * s, atol=1e-15)
    assert np.allclose(g.conjugate(s), 0.5 * s * s, atol=1e-15)


def test_tan_graph_closed_forms():
    g = tan_graph()
    assert g.value(0.3) == pytest.approx(math.tan(0.3), abs=1e-15)
    assert g.primitive(0.3) == pytest.approx(-math.log(math.cos(0.3)), abs=1e-15)
    # conjugate(1) = arctan(1) - log(2)/2
    assert g.conjugate(1.0) == pytest.approx(0.43882457311747564, abs=1e-15)
    assert g.primitive(np.pi / 2) == np.inf


def test_log1p_graph_closed_forms():
    g = log1p_graph()
    assert g.primitive(1.0) == pytest.approx(2.0 * math.log(2.0) - 1.0, abs=1e-15)
    # conjugate(log 2) = 1 - log 2
    assert g.conjugate(math.log(2.0)) == pytest.approx(0.3068528194400547,
                                                       abs=1e-15)
    # the primitive closes up finitely at the left endpoint
    assert g.primitive(-1.0) == pytest.approx(1.0, abs=1e-15)


def test_rational_graph_closed_forms():
    g = rational_graph()
    assert g.value(1.0) == pytest.approx(0.5, abs=1e-16)
    assert g.primitive(1.0) == pytest.approx(1.0 - math.log(2.0), abs=1e-15)
    assert g.conjugate(0.5) == pytest.approx(math.log(2.0) - 0.5, abs=1e-15)
    assert g.inverse(0.5) == pytest.approx(1.0, abs=1e-14)
    # the range saturates at 1 from below
    assert g.range_hi == 1.0
    assert g.conjugate(1.0) == np.inf


# -- duality properties ------------------------------------------------------------

@pytest.mark.parametrize("graph", ALL_GRAPHS, ids=lambda g: f"{g.kind}{g.params}")
def test_fenchel_young_equality_on_graph(graph):
    """j(s) + j*(beta(s)) = s * beta(s) when the dual point sits on the graph."""
    rng = np.random.default_rng(11)
    s = sample_domain(graph, 400, rng)
    sigma = graph.value(s)
    gap = graph.primitive(s) + graph.conjugate(sigma) - s * sigma
    scale = 1.0 + np.abs(graph.primitive(s)) + np.abs(graph.conjugate(sigma))
    assert float(np.max(np.abs(gap) / scale)) < 1e-12


@pytest.mark.parametrize("graph", ALL_GRAPHS, ids=lambda g: f"{g.kind}{g.params}")
def test_young_inequality_off_graph(graph):
    """j(s) + j*(sigma) >= s*sigma for arbitrary admissible pairs."""
    rng = np.random.default_rng(12)
    s = sample_domain(graph, 300, rng)
    sigma = graph.value(sample_domain(graph, 300, rng))
    slack = graph.primitive(s) + graph.conjugate(sigma) - s * sigma
    assert float(np.min(slack)) > -1e-10


@pytest.mark.parametrize("graph", ALL_GRAPHS, ids=lambda g: f"{g.kind}{g.params}")
def test_subgradient_inequality(graph):
    """beta(s) supports the primitive: j(t) >= j(s) + beta(s)(t - s)."""
    rng = np.random.default_rng(13)
    s = sample_domain(graph, 300, rng)
    t = sample_domain(graph, 300, rng)
    slack = (graph.primitive(t) - graph.primitive(s)
             - graph.value(s) * (t - s))
    assert float(np.min(slack)) > -1e-10


@pytest.mark.parametrize("graph", ALL_GRAPHS, ids=lambda g: f"{g.kind}{g.params}")
def test_inverse_recovers_argument(graph):
    rng = np.random.default_rng(14)
    s = sample_domain(graph, 300, rng)
    back = graph.inverse(graph.value(s))
    assert float(np.max(np.abs(back - s))) < 1e-10


def test_derivative_matches_difference_quotient():
    for graph in ALL_GRAPHS:
        rng = np.random.default_rng(15)
        s = sample_domain(graph, 50, rng, margin=5e-3)
        d = np.asarray(graph.derivative(s))
        eps = 1e-6 * np.maximum(1.0, np.abs(s))
        quot = (np.asarray(graph.value(s + eps))
                - np.asarray(graph.value(s - eps))) / (2.0 * eps)
        ok = np.abs(d - quot) <= 1e-4 * (1.0 + np.abs(d))
        assert bool(np.all(ok)), graph.kind


def test_derivative_clipping_bounds():
    g = power_graph(1.5)
    # slope blows up at the origin; the clipped variant stays finite
    assert np.isinf(g.derivative(0.0))
    clipped = g.derivative_clipped(np.array([0.0, 1.0]))
    assert np.all(np.isfinite(clipped))
    assert clipped[0] == pytest.approx(1e10)
    g4 = power_graph(4.0)
    assert g4.derivative(0.0) == 0.0
    assert g4.derivative_clipped(0.0) == pytest.approx(1e-10)


# -- minimal-norm inverse on a flat piece -------------------------------------------

def test_minimal_norm_inverse_on_flat_graph():
    """A graph flat on [-1, 1] must invert interior duals to the nearest zero."""
    def val(s):
        return np.maximum(s - 1.0, 0.0) + np.minimum(s + 1.0, 0.0)

    def prim(s):
        return 0.5 * np.maximum(np.abs(s) - 1.0, 0.0) ** 2

    g = custom_graph(val, prim)
    assert g.inverse(0.0) == pytest.approx(0.0, abs=1e-9)
    assert g.inverse(0.5) == pytest.approx(1.5, abs=1e-8)
    assert g.inverse(-2.0) == pytest.approx(-3.0, abs=1e-8)
    # variational conjugate agrees with the closed form sigma^2/2 + |sigma|
    sig = np.array([-1.5, -0.25, 0.0, 0.75, 2.0])
    expect = 0.5 * sig * sig + np.abs(sig)
    assert np.allclose(g.conjugate(sig), expect, atol=1e-8)


# -- domain and construction errors -------------------------------------------------

def test_domain_violations_raise():
    g = tan_graph()
    with pytest.raises(GraphDomainError):
        g.value(np.pi / 2)
    with pytest.raises(GraphDomainError):
        g.primitive(2.0)
    r = rational_graph()
    with pytest.raises(OutOfRangeError):
        r.conjugate(1.5)
    with pytest.raises(OutOfRangeError):
        r.inverse(1.0)


def test_construct_graph_front_door():
    assert construct_graph("power", q=3.0).kind == "power"
    assert construct_graph("tan").kind == "tan"
    with pytest.raises(GraphSpecError):
        construct_graph("power", q=0.5)
    with pytest.raises(GraphSpecError):
        construct_graph("powerlaw")
    with pytest.raises(GraphSpecError):
        construct_graph("tan", q=2.0)
    with pytest.raises(GraphSpecError):
        construct_graph("power")


def test_custom_graph_must_vanish_at_zero():
    with pytest.raises(GraphSpecError):
        custom_graph(lambda s: s + 1.0, lambda s: 0.5 * s * s + s)
    with pytest.raises(GraphSpecError):
        custom_graph(lambda s: s, lambda s: 0.5 * s * s, domain=(0.5, 2.0))


# -- source laws -------------------------------------------------------------------

def test_source_truncation_clamps():
    law = linear_source(2.0).with_cap(3.0)
    s = np.array([-5.0, -1.0, 0.0, 1.0, 5.0])
    assert np.allclose(law.truncated(s), [-3.0, -2.0, 0.0, 2.0, 3.0])
    assert np.allclose(law.raw(s), 2.0 * s)
    assert np.allclose(truncate_source(law, s), law.truncated(s))


def test_source_without_cap_rejects_truncation():
    law = quadratic_source(1.0)
    with pytest.raises(GraphSpecError):
        law.truncated(1.0)
    with pytest.raises(GraphSpecError):
        law.with_cap(0.0)


def test_source_flags():
    assert zero_source().is_zero
    assert zero_source().monotone
    assert linear_source(1.0).monotone
    assert not linear_source(-1.0).monotone
    assert power_source(3.0).monotone
    assert not sine_source().monotone
    assert not quadratic_source().monotone
    assert custom_source(lambda s: s ** 3, monotone=True).monotone
    with pytest.raises(GraphSpecError):
        power_source(1.0)


def test_lipschitz_on_interval_linear():
    law = linear_source(2.5)
    assert lipschitz_on_interval(law, -2.0, 2.0) == pytest.approx(2.5, rel=1e-12)
    assert lipschitz_on_interval(law, 2.0, 2.0) == 0.0


def test_lipschitz_on_interval_power_and_truncation():
    # F(s) = |s| s has slope 2|s|, maximal at the endpoints
    law = power_source(3.0)
    raw = lipschitz_on_interval(law, -2.0, 2.0)
    assert raw == pytest.approx(4.0, rel=1e-3)
    capped = law.with_cap(1.0)
    trunc = lipschitz_on_interval(capped, -2.0, 2.0, truncated=True)
    # the clamp flattens the outer region, so the constant drops to ~2|s|=2
    assert trunc == pytest.approx(2.0, rel=1e-2)
    assert trunc <= raw


def test_psi_truncated_primitive_linear_identity():
    """For beta = id and F = c s, psi(s) = c s^2 / 2 while the cap is slack."""
    law = linear_source(2.0).with_cap(10.0)
    g = identity_graph()
    s = np.array([-2.0, -0.5, 0.0, 1.0, 2.0])
    assert np.allclose(psi_truncated_primitive(law, g, s), s * s, atol=1e-10)
    # an active cap freezes the integrand at +-cap
    tight = linear_source(2.0).with_cap(2.0)
    # for s > 1 integrand is capped at 2: psi(2) = 1 + 2*(2-1) = 3
    assert psi_truncated_primitive(tight, g, 2.0) == pytest.approx(3.0, abs=1e-8)
    with pytest.raises(GraphSpecError):
        psi_truncated_primitive(linear_source(1.0), g, 1.0)
    with pytest.raises(GraphDomainError):
        psi_truncated_primitive(tight, rational_graph(), -2.0)


# -- flux laws ---------------------------------------------------------------------

def test_p_laplacian_quadratic_case():
    law = p_laplacian(2.0)
    z = np.array([[3.0], [-1.0], [0.0]])
    assert np.allclose(law.potential(z), [4.5, 0.5, 0.0], atol=1e-15)
    assert np.allclose(law.flux(z), z, atol=1e-15)
    assert law.epsilon == 0.0
    assert law.homogeneous


def test_p_laplacian_singular_defaults_regularized():
    law = p_laplacian(1.5)
    assert law.epsilon == pytest.approx(1e-8)
    # the epsilon shift keeps the potential exactly zero at the origin
    assert law.potential(np.zeros((1, 2)))[0] == 0.0
    assert np.allclose(law.flux(np.zeros((1, 2))), 0.0)


def test_flux_gradient_consistency():
    rng = np.random.default_rng(21)
    for p in (1.5, 2.0, 3.0, 4.0):
        law = p_laplacian(p)
        z = rng.normal(size=(40, 2)) * 2.0
        a = law.flux(z)
        step = 1e-6
        for comp in range(2):
            zp = z.copy(); zp[:, comp] += step
            zm = z.copy(); zm[:, comp] -= step
            quot = (law.potential(zp) - law.potential(zm)) / (2.0 * step)
            denom = 1.0 + np.abs(a[:, comp])
            assert float(np.max(np.abs(a[:, comp] - quot) / denom)) < 1e-6, p


def test_flux_jacobian_consistency():
    rng = np.random.default_rng(22)
    law = p_laplacian(3.0)
    z = rng.normal(size=(25, 2)) * 1.5
    jac = law.flux_jacobian(z)
    step = 1e-6
    for comp in range(2):
        zp = z.copy(); zp[:, comp] += step
        zm = z.copy(); zm[:, comp] -= step
        quot = (law.flux(zp) - law.flux(zm)) / (2.0 * step)
        assert np.allclose(jac[:, :, comp], quot, atol=1e-4)


def test_flux_monotonicity_sampled():
    rng = np.random.default_rng(23)
    for p in (1.5, 2.0, 3.0, 4.0):
        law = p_laplacian(p)
        z1 = rng.normal(size=(500, 2)) * 3.0
        z2 = rng.normal(size=(500, 2)) * 3.0
        inc = np.sum((law.flux(z1) - law.flux(z2)) * (z1 - z2), axis=-1)
        assert float(np.min(inc)) > -1e-12, p


def test_sum_flux_terms_and_constants():
    law = sum_p_laplacian((2.0, 4.0), weights=(1.0, 0.5))
    assert law.p == 4.0
    z = np.array([[2.0, 0.0]])
    # potential = 1/2 |z|^2 + 0.5/4 |z|^4 = 2 + 2
    assert law.potential(z)[0] == pytest.approx(4.0, abs=1e-13)
    with pytest.raises(GraphSpecError):
        sum_p_laplacian((2.0, 1.0))
    with pytest.raises(GraphSpecError):
        sum_p_laplacian((2.0,), weights=(1.0, 2.0))
    with pytest.raises(GraphSpecError):
        p_laplacian(1.0)
    with pytest.raises(GraphSpecError):
        p_laplacian(2.0, epsilon=-1.0)


def test_flux_eval_spatial_coefficient():
    law = p_laplacian(2.0, coefficient=lambda x: 1.0 + x[..., 0])
    x = np.array([[0.0], [1.0]])
    z = np.array([[2.0], [2.0]])
    assert np.allclose(flux_eval(law, x, z).ravel(), [2.0, 4.0])
    assert np.allclose(potential_eval(law, x, z), [2.0, 4.0])
    assert not law.homogeneous
    with pytest.raises(GraphSpecError):
        law.potential(z)     # positions required for a varying coefficient
