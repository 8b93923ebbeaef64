import pytest

from sdbridge.calibrate import Calibration, Targets, bisect, calibrate
from sdbridge.errors import Unreachable


def test_bisect_finds_root():
    assert bisect(lambda x: x * x, 2.0, 0, 2, increasing=True, iterations=40) == pytest.approx(2 ** 0.5)
    assert bisect(lambda x: 1 / x, 4.0, 0.01, 10, increasing=False, iterations=40,
                  log=True) == pytest.approx(0.25)


def toy_measure(cal, kernel):
    """Closed-form stand-in: copy tracks port bandwidth with a latency penalty,
    scale additionally pays per-flop time."""
    copy = cal.port_bandwidth_mibs * 0.98
    if kernel == "copy":
        return copy
    line_ns = 64e3 / (copy * 1.048576)
    return copy * line_ns / (line_ns + 8 * cal.flop_ns)


def test_calibrate_hits_targets_and_is_deterministic():
    t = Targets(1060, 749)
    a = calibrate(toy_measure, t)
    b = calibrate(toy_measure, t)
    assert a == b
    assert toy_measure(a, "copy") == pytest.approx(1060, rel=0.02)
    assert toy_measure(a, "scale") == pytest.approx(749, rel=0.02)
    assert a.slave_latency_ns == Calibration().slave_latency_ns


def test_unreachable_targets():
    with pytest.raises(Unreachable):
        calibrate(toy_measure, Targets(0))
    with pytest.raises(Unreachable):
        calibrate(toy_measure, Targets(1e9))
    with pytest.raises(Unreachable):
        calibrate(toy_measure, Targets(1060, 2000))  # scale cannot beat copy
