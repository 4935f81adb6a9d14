import pytest

from lanemerge.geometry import VehicleState


def car(vid, y, speed=10.0, *, x=0.0, t=0, length=4.0, accel=0.0, heading=0.0, lane=1, **kw):
    """Vehicle on a north-pointing lane; ``y`` is the along-lane position."""
    return VehicleState(vid, t, x, y, speed, accel, heading, lane, length, **kw)


@pytest.fixture
def make_car():
    return car


LANE_WIDTH = 3.66


def straight_instance(m_y=0.0, p_y=30.0, f_y=-30.0, speeds=(10.0, 10.0, 10.0), m_acc=None, m_speeds=None, tm=40):
    """Synthetic 70-frame window on a north-pointing road.

    P and F drive the target lane (lane 1, x = 0); M starts one lane to the
    right (lane 2) and switches lanes at frame ``tm``. Positions advance at
    constant speed; ``m_acc`` and ``m_speeds`` override M's recorded values.
    """
    from lanemerge.dataset.merges import WINDOW, MergeInstance
    from lanemerge.geometry import MergeTriple

    frames = []
    for i in range(WINDOW):
        t = i * 100
        vm = m_speeds[i] if m_speeds is not None else speeds[0]
        am = m_acc[i] if m_acc is not None else 0.0
        m = car("M", m_y + speeds[0] * 0.1 * i, vm, x=LANE_WIDTH, t=t, accel=am, lane=2 if i < tm else 1)
        p = car("P", p_y + speeds[1] * 0.1 * i, speeds[1], t=t)
        f = car("F", f_y + speeds[2] * 0.1 * i, speeds[2], t=t)
        frames.append((m, p, f))
    triple = MergeTriple("M", "P", "F", 1, frames[tm][0].position, tm)
    return MergeInstance(triple, tuple(frames))


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    entry = ACCEPTANCE.setdefault(marker.args[0], {"passed": True, "skipped": False, "details": []})
    if rep.skipped:
        entry["skipped"] = True
    elif rep.failed:
        entry["passed"] = False
    for k, v in item.user_properties:
        if k == "detail" and str(v) not in entry["details"]:
            entry["details"].append(str(v))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        e = ACCEPTANCE[n]
        status = "SKIP" if e["skipped"] and e["passed"] else "PASS" if e["passed"] else "FAIL"
        detail = "; ".join(e["details"])
        terminalreporter.write_line(f"criterion {n}: {status}" + (f" ({detail})" if detail else ""))
