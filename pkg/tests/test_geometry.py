import math

import pytest
from hypothesis import given, strategies as st

from lanemerge.geometry import (
    EARTH_RADIUS_M,
    MergeTriple,
    Polyline,
    SafetyParams,
    StalenessError,
    ValidationError,
    VehicleState,
    heading_vector,
    is_safe_slot,
    longitudinal_gap,
    project_coordinates,
    unproject_coordinates,
    vector_heading,
    wrap_heading,
)

from conftest import car

ORIGIN = (48.0, 2.0)


def haversine(lat1, lon1, lat2, lon2):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    a = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(math.radians(lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


class TestProjection:
    def test_origin_maps_to_zero(self):
        assert project_coordinates(48.0, 2.0, ORIGIN) == (0.0, 0.0)

    def test_small_northward_step(self):
        x, y = project_coordinates(48.0 + 1e-5, 2.0, ORIGIN)
        # frozen from the haversine oracle above
        assert x == 0.0
        assert y == pytest.approx(1.1119492665983, abs=1e-3)
        assert y == pytest.approx(haversine(48.0, 2.0, 48.0 + 1e-5, 2.0), abs=1e-3)

    def test_small_eastward_step_matches_great_circle(self):
        x, y = project_coordinates(48.0, 2.0 + 1e-5, ORIGIN)
        assert x == pytest.approx(0.7440392869018972, abs=1e-3)
        assert y == 0.0

    @pytest.mark.parametrize("lat,lon", [(91.0, 0.0), (0.0, 181.0), (float("nan"), 0.0)])
    def test_out_of_range_rejected(self, lat, lon):
        with pytest.raises(ValidationError):
            project_coordinates(lat, lon, ORIGIN)

    @given(st.floats(-2000, 2000), st.floats(-2000, 2000))
    def test_round_trip_within_two_km(self, x, y):
        lat, lon = unproject_coordinates(x, y, ORIGIN)
        x2, y2 = project_coordinates(lat, lon, ORIGIN)
        lat2, lon2 = unproject_coordinates(x2, y2, ORIGIN)
        assert abs(lat2 - lat) < 1e-9 and abs(lon2 - lon) < 1e-9

    @given(st.floats(-0.015, 0.015), st.floats(-0.02, 0.02))
    def test_round_trip_from_degrees(self, dlat, dlon):
        lat, lon = ORIGIN[0] + dlat, ORIGIN[1] + dlon
        back = unproject_coordinates(*project_coordinates(lat, lon, ORIGIN), ORIGIN)
        assert abs(back[0] - lat) < 1e-9 and abs(back[1] - lon) < 1e-9


class TestGap:
    @pytest.mark.parametrize("sep,expected", [(10.0, 6.0), (4.0, 0.0), (2.0, -2.0)])
    def test_bumper_gap(self, sep, expected):
        assert longitudinal_gap(car("a", 0.0), car("b", sep)) == pytest.approx(expected)

    def test_staleness(self):
        with pytest.raises(StalenessError):
            longitudinal_gap(car("a", 0.0, t=0), car("b", 10.0, t=101))
        longitudinal_gap(car("a", 0.0, t=0), car("b", 10.0, t=100))

    @given(st.floats(-100, 100), st.floats(-100, 100), st.floats(1, 10), st.floats(1, 10), st.floats(0, 2 * math.pi))
    def test_role_swap_with_negated_axis(self, ya, yb, la, lb, ang):
        axis = (math.sin(ang), math.cos(ang))
        a = VehicleState("a", 0, ya * axis[0], ya * axis[1], 1.0, length=la)
        b = VehicleState("b", 0, yb * axis[0], yb * axis[1], 1.0, length=lb)
        g1 = longitudinal_gap(a, b, axis)
        g2 = longitudinal_gap(b, a, (-axis[0], -axis[1]))
        assert g1 == pytest.approx(g2, abs=1e-9)


class TestSafeSlot:
    def test_centered_in_wide_slot(self):
        # centroids 30 m apart, two half-lengths of 2 m -> 26 m bumper gap, required 6 m
        m, p, f = car("m", 0.0), car("p", 30.0), car("f", -30.0)
        assert longitudinal_gap(m, p) == pytest.approx(26.0)
        assert is_safe_slot(m, p, f, SafetyParams(1.0, 0.5))

    def test_behind_follower(self):
        assert not is_safe_slot(car("m", -40.0), car("p", 30.0), car("f", -30.0))

    def test_zero_gap_between_p_and_f(self):
        assert not is_safe_slot(car("m", 2.0), car("p", 4.0), car("f", 0.0))

    def test_required_gap_boundary(self):
        # at 10 m/s the required gap is exactly 6 m
        params = SafetyParams(1.0, 0.5)
        assert params.required_gap(10.0) == 6.0
        m, f = car("m", 0.0), car("f", -30.0)
        assert is_safe_slot(m, car("p", 10.0), f, params)
        assert not is_safe_slot(m, car("p", 9.999), f, params)

    @given(
        st.floats(-50, 50), st.floats(0.1, 40), st.floats(0.1, 40),
        st.floats(0, 30), st.floats(0, 30), st.floats(0, 30), st.floats(0, 10), st.floats(0, 10),
    )
    def test_monotone_in_gaps(self, ym, dp, df, vm, vp, vf, extra_p, extra_f):
        m = car("m", ym, vm)
        before = is_safe_slot(m, car("p", ym + dp, vp), car("f", ym - df, vf))
        after = is_safe_slot(m, car("p", ym + dp + extra_p, vp), car("f", ym - df - extra_f, vf))
        assert not (before and not after)

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
    def test_false_unless_strictly_between(self, ym, yp, yf):
        if not yf < ym < yp:
            assert not is_safe_slot(car("m", ym, 0.0), car("p", yp, 0.0), car("f", yf, 0.0))


class TestTypes:
    @pytest.mark.parametrize(
        "kw", [dict(speed=-1.0), dict(length=0.0), dict(width=-1.0), dict(heading=360.0), dict(timestamp=-1)]
    )
    def test_vehicle_state_invariants(self, kw):
        base = dict(vehicle_id="a", timestamp=0, x=0.0, y=0.0, speed=1.0)
        with pytest.raises(ValidationError):
            VehicleState(**{**base, **kw})

    def test_triple_needs_distinct_ids(self):
        with pytest.raises(ValidationError):
            MergeTriple("a", "a", "b", 1, (0.0, 0.0), 40)
        with pytest.raises(ValidationError):
            MergeTriple("a", "b", "c", 1, (0.0, 0.0), 70)

    def test_params_invariants(self):
        with pytest.raises(ValidationError):
            SafetyParams(0.0, 0.5)
        with pytest.raises(ValidationError):
            SafetyParams(1.0, -0.1)


class TestHeadings:
    @given(st.floats(-1e4, 1e4))
    def test_wrap_range(self, h):
        w = wrap_heading(h)
        assert 0.0 <= w < 360.0

    @given(st.floats(0, 359.99))
    def test_vector_round_trip(self, h):
        back = vector_heading(*heading_vector(h))
        assert min(abs(back - h), 360 - abs(back - h)) < 1e-9


class TestPolyline:
    def test_straight_line_frenet(self):
        line = Polyline([(0.0, 0.0), (0.0, 100.0)])
        s, e = line.to_frenet(-2.0, 30.0)
        assert (s, e) == pytest.approx((30.0, 2.0))  # west of a north lane is left
        assert line.from_frenet(30.0, 2.0) == pytest.approx((-2.0, 30.0))
        assert line.heading_at(0.0, 50.0) == pytest.approx(0.0)

    def test_extends_beyond_ends(self):
        line = Polyline([(0.0, 0.0), (0.0, 10.0), (10.0, 20.0)])
        s, e = line.to_frenet(0.0, -5.0)
        assert s == pytest.approx(-5.0) and e == pytest.approx(0.0)

    @given(st.floats(1, 150), st.floats(-3, 3))
    def test_round_trip_on_bent_line(self, s, e):
        line = Polyline([(0.0, 0.0), (0.0, 50.0), (20.0, 100.0), (20.0, 160.0)])
        x, y = line.from_frenet(s, e)
        s2, e2 = line.to_frenet(x, y)
        # near a convex vertex the nearest segment may change, so only check the point itself
        assert line.from_frenet(s2, e2) == pytest.approx((x, y), abs=1e-6)

    def test_rejects_degenerate(self):
        with pytest.raises(ValidationError):
            Polyline([(0.0, 0.0)])
        with pytest.raises(ValidationError):
            Polyline([(0.0, 0.0), (0.0, 0.0)])
