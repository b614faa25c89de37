import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbitlink import coords as cs
from orbitlink.coords import CoordSet
from orbitlink.dynamics import MU_EARTH
from orbitlink.errors import DomainError

MU = MU_EARTH

elements = st.tuples(
    st.floats(7000, 60000),            # a
    st.floats(0.0, 0.95),              # e
    st.floats(0.001, math.pi - 0.1),   # i
    st.floats(0, 2 * math.pi - 1e-9),  # raan
    st.floats(0, 2 * math.pi - 1e-9),  # argp
    st.floats(0, 2 * math.pi - 1e-9),  # nu
).filter(lambda el: el[0] * (1 - el[1]) > 6600)


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1.0)


def textbook_cart(el):
    """Perifocal position/velocity rotated by R3(-raan) R1(-i) R3(-argp)."""
    a, e, i, raan, argp, nu = el
    p = a * (1 - e * e)
    r = p / (1 + e * math.cos(nu))
    rp = np.array([r * math.cos(nu), r * math.sin(nu), 0.0])
    vp = math.sqrt(MU / p) * np.array([-math.sin(nu), e + math.cos(nu), 0.0])

    def r3(t):
        return np.array([[math.cos(t), -math.sin(t), 0], [math.sin(t), math.cos(t), 0], [0, 0, 1]])

    def r1(t):
        return np.array([[1, 0, 0], [0, math.cos(t), -math.sin(t)], [0, math.sin(t), math.cos(t)]])

    Q = r3(raan) @ r1(i) @ r3(argp)
    return np.concatenate((Q @ rp, Q @ vp))


# ---------------------------------------------------------------- COE

@settings(max_examples=200, deadline=None)
@given(elements)
def test_coe_to_cart_matches_textbook(el):
    np.testing.assert_allclose(cs.coe_to_cart(el, MU), textbook_cart(el), rtol=1e-11, atol=1e-8)


@settings(max_examples=300, deadline=None)
@given(elements)
def test_cart_coe_round_trip(el):
    s = textbook_cart(el)
    back = cs.coe_to_cart(cs.cart_to_coe(s, MU), MU)
    assert rel_err(back[:3], s[:3]) < 1e-9 and rel_err(back[3:], s[3:]) < 1e-9


def test_round_trips_on_1000_random_states():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        a = rng.uniform(7000, 60000)
        e = rng.uniform(0, min(0.95, 1 - 6600 / a))
        el = [a, e, rng.uniform(0.001, math.pi - 0.1), *rng.uniform(0, 2 * math.pi, 3)]
        s = cs.coe_to_cart(el, MU)
        for coords in (CoordSet.COE, CoordSet.MEE):
            back = cs.to_cart(coords, cs.from_cart(coords, s, MU), MU)
            assert rel_err(back[:3], s[:3]) < 1e-9
            assert rel_err(back[3:], s[3:]) < 1e-9


def test_circular_inclined_uses_node_convention():
    el = cs.cart_to_coe(cs.coe_to_cart([42164.17, 0.0, 0.3, 1.0, 0.0, 0.7], MU), MU)
    assert el[4] == 0.0
    assert el[5] == pytest.approx(0.7, abs=1e-12)


def test_circular_equatorial_is_singular_for_coe():
    r = 42164.17
    s = [r, 0, 0, 0, math.sqrt(MU / r), 0]
    with pytest.raises(DomainError, match="inclination"):
        cs.cart_to_coe(s, MU)


@pytest.mark.parametrize("scale,match", [(1.5, "eccentric"), (2.0, "eccentric")])
def test_unbound_orbits_rejected(scale, match):
    r = 42164.17
    s = [r, 0, 1.0, 0, scale * math.sqrt(MU / r), 0.1]
    with pytest.raises(DomainError, match=match):
        cs.cart_to_coe(s, MU)


def test_circular_orbit_constant_radius():
    radii = [np.linalg.norm(cs.coe_to_cart([42164.17, 0, 0.01, 0.3, 0.2, nu], MU)[:3])
             for nu in np.linspace(0, 2 * math.pi, 37)]
    np.testing.assert_allclose(radii, 42164.17, rtol=1e-14)


# ---------------------------------------------------------------- MEE

def test_mee_definitions_by_hand():
    a, e, i, raan, argp, nu = 24326.0, 0.7284, 0.1, 0.3, 0.5, 0.2
    eq = cs.coe_to_mee([a, e, i, raan, argp, nu])
    expected = [a * (1 - e * e), e * math.cos(argp + raan), e * math.sin(argp + raan),
                math.tan(i / 2) * math.cos(raan), math.tan(i / 2) * math.sin(raan),
                raan + argp + nu]
    np.testing.assert_allclose(eq, expected, rtol=1e-14)
    assert eq[0] == pytest.approx(24326.0 * (1 - 0.7284 ** 2), rel=1e-14)


def test_mee_degenerate_circular_equatorial():
    eq = cs.coe_to_mee([42164.17, 0.0, 0.0, 0.0, 0.0, 1.0])
    np.testing.assert_allclose(eq[1:5], 0.0, atol=1e-15)
    assert eq[0] == 42164.17


def test_cart_to_mee_handles_circular_equatorial():
    r = 42164.17
    eq = cs.cart_to_mee([r, 0, 0, 0, math.sqrt(MU / r), 0], MU)
    np.testing.assert_allclose(eq, [r, 0, 0, 0, 0, 0], atol=1e-9)


@settings(max_examples=300, deadline=None)
@given(elements)
def test_cart_mee_round_trip(el):
    s = textbook_cart(el)
    back = cs.mee_to_cart(cs.cart_to_mee(s, MU), MU)
    assert rel_err(back[:3], s[:3]) < 1e-9 and rel_err(back[3:], s[3:]) < 1e-9


@settings(max_examples=200, deadline=None)
@given(elements)
def test_coe_mee_round_trip(el):
    back = cs.mee_to_coe(cs.coe_to_mee(el))
    np.testing.assert_allclose(back[:3], el[:3], rtol=1e-10, atol=1e-12)
    d = cs.difference(CoordSet.COE, back, np.array(el))
    assert abs(d[3]) < 1e-9
    # only argp + nu is defined on circular orbits
    assert abs(cs.wrap_pi(d[4] + d[5])) < 1e-9
    if el[1] > 1e-6:
        assert abs(d[4]) < 1e-9 / el[1]


def test_retrograde_singular_rejected():
    with pytest.raises(DomainError):
        cs.coe_to_mee([42164.17, 0.1, math.pi, 0.1, 0.2, 0.3])


# ---------------------------------------------------------------- Jacobians

STATE = cs.coe_to_cart([24326.0, 0.7284, 0.1, 0.3, 0.5, 0.2], MU)


def test_identity_jacobian():
    for c in CoordSet:
        np.testing.assert_allclose(cs.jacobian(c, c, cs.from_cart(c, STATE, MU), MU), np.eye(6),
                                   atol=1e-9)


def test_inverse_jacobians_multiply_to_identity():
    mee = cs.from_cart(CoordSet.MEE, STATE, MU)
    J1 = cs.jacobian(CoordSet.CC, CoordSet.MEE, STATE, MU)
    J2 = cs.jacobian(CoordSet.MEE, CoordSet.CC, mee, MU)
    np.testing.assert_allclose(J2 @ J1, np.eye(6), atol=1e-5)


def test_chain_rule():
    coe = cs.from_cart(CoordSet.COE, STATE, MU)
    J_cc_coe = cs.jacobian(CoordSet.CC, CoordSet.COE, STATE, MU)
    J_coe_mee = cs.jacobian(CoordSet.COE, CoordSet.MEE, coe, MU)
    J_cc_mee = cs.jacobian(CoordSet.CC, CoordSet.MEE, STATE, MU)
    prod = J_coe_mee @ J_cc_coe
    assert np.abs(prod - J_cc_mee).max() <= 1e-5 * np.abs(J_cc_mee).max()


@settings(max_examples=40, deadline=None)
@given(elements)
def test_jacobian_nonsingular(el):
    s = textbook_cart(el)
    # COE is not differentiable on circular orbits; MEE is
    targets = (CoordSet.COE, CoordSet.MEE) if el[1] > 1e-3 else (CoordSet.MEE,)
    for dst in targets:
        J = cs.jacobian(CoordSet.CC, dst, s, MU)
        assert np.linalg.cond(J) < 1e14
        assert abs(np.linalg.det(J)) > 0


def test_covariance_transport_keeps_spd():
    rng = np.random.default_rng(2)
    B = rng.normal(size=(6, 6))
    cov = B @ B.T * 1e-4 + np.diag([1e-2] * 3 + [1e-8] * 3)
    for dst in (CoordSet.COE, CoordSet.MEE):
        out = cs.transform_covariance(CoordSet.CC, dst, STATE, cov, MU)
        assert np.array_equal(out, out.T)
        np.linalg.cholesky(out)


def test_angle_difference_wraps():
    a = np.array([1, 0, 0, 0, 0, 0.1])
    b = np.array([1, 0, 0, 0, 0, 2 * math.pi - 0.1])
    assert cs.difference(CoordSet.MEE, a, b)[5] == pytest.approx(0.2)
    assert cs.difference(CoordSet.CC, a, b)[5] == pytest.approx(0.2 - 2 * math.pi)


# ---------------------------------------------------------------- RTN

def test_rtn_circular_transverse_along_velocity():
    r = 42164.17
    s = cs.coe_to_cart([r, 0.0, 0.2, 0.1, 0.3, 1.0], MU)
    R = cs.rtn_frame(s)
    np.testing.assert_allclose(R[1], s[3:] / np.linalg.norm(s[3:]), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(elements)
def test_rtn_orthonormal_right_handed(el):
    R = cs.rtn_frame(textbook_cart(el))
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_rtn_rectilinear_rejected():
    with pytest.raises(DomainError):
        cs.rtn_frame([7000, 0, 0, 1, 0, 0])
