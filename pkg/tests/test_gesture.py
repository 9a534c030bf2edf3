import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from iris_ring.errors import LowConfidence
from iris_ring.gesture import (
    GestureConfig,
    GestureEvent,
    GestureKind,
    GestureRecognizer,
    GestureState,
    map_rotation,
    process_sample,
    recognize,
    tilt_degrees,
)

K = GestureKind
LEVEL = (0.0, 0.0, 1.0)


def accel_for(tilt):
    r = math.radians(tilt - 90)
    return (0.0, math.sin(r), math.cos(r))


def presses(*spans, end=None, step=1):
    """Samples at ``step`` ms with the button down during each (start, stop) span."""
    end = end if end is not None else spans[-1][1] + 1000
    return [(t, any(a <= t < b for a, b in spans), LEVEL) for t in range(0, end, step)]


def kinds(events):
    return [e.kind for e in events]


# -- tilt


@pytest.mark.parametrize(
    "accel,deg",
    [((0, 0, 1), 90.0), ((0, 1, 0), 180.0), ((0, -1, 0), 0.0), ((0, 0, -1), 180.0), ((0.9, 0, 0.5), 90.0)],
)
def test_tilt_examples(accel, deg):
    assert tilt_degrees(accel) == pytest.approx(deg, abs=1e-12)


def test_tilt_needs_gravity():
    with pytest.raises(LowConfidence):
        tilt_degrees((0, 0.1, 0.2))
    with pytest.raises(LowConfidence):
        tilt_degrees((0, 0, 0.25))


@given(
    st.floats(-4, 4), st.floats(-4, 4), st.floats(-4, 4), st.floats(0.01, 100),
)
def test_tilt_scale_invariant(x, y, z, k):
    if math.sqrt(x * x + y * y + z * z) <= 0.25 or math.sqrt(x * x + y * y + z * z) * k <= 0.25:
        return
    assert tilt_degrees((x, y, z)) == pytest.approx(tilt_degrees((k * x, k * y, k * z)), abs=1e-9)


def test_axis_remap():
    cfg = GestureConfig(lateral_axis=(0, -1), normal_axis=(2, 1))
    assert tilt_degrees((-1, 0, 0), cfg) == pytest.approx(180)


def test_low_confidence_holds_last_tilt():
    rec = GestureRecognizer()
    rec.process_sample(0, False, (0, 0, 1))
    rec.process_sample(10, False, (0, 0.01, 0.01))
    assert rec.state.tilt == 90.0


# -- clicks


def test_single_click():
    ev = recognize(presses((1000, 1100)))
    assert ev == [GestureEvent(K.CLICK, 1100)]


def test_double_click():
    ev = recognize(presses((1000, 1100), (1300, 1400)))
    assert kinds(ev) == [K.DOUBLE_CLICK]


@pytest.mark.parametrize("gap,expected", [(399, [K.DOUBLE_CLICK]), (400, [K.CLICK, K.CLICK]), (401, [K.CLICK, K.CLICK])])
def test_double_click_window_boundary(gap, expected):
    # gap runs from the first release to the second press
    ev = recognize(presses((1000, 1100), (1100 + gap, 1200 + gap)))
    assert kinds(ev) == expected


def test_click_is_withheld_until_window_lapses():
    rec = GestureRecognizer()
    out = []
    for t, b, a in presses((0, 100), end=500):
        out += rec.process_sample(t, b, a)
    assert out == []
    assert kinds(rec.process_sample(500, False, LEVEL)) == [K.CLICK]


def test_flush_forces_pending_click():
    rec = GestureRecognizer()
    rec.process_sample(0, True)
    rec.process_sample(50, False)
    assert rec.flush(100) == []
    assert kinds(rec.flush()) == [K.CLICK]
    assert rec.flush() == []


def test_click_then_hold_emits_click_first():
    ev = recognize(presses((0, 100), (300, 1200)))
    assert kinds(ev) == [K.CLICK, K.HOLD_START, K.HOLD_END]
    assert ev[0].t_ms < ev[1].t_ms


def test_hold_threshold():
    assert kinds(recognize(presses((0, 499)))) == [K.CLICK]
    assert kinds(recognize(presses((0, 501)))) == [K.HOLD_START, K.HOLD_END]


# -- rotation


def sweep_trace(start=90.0, stop=135.0, press=(0, 2000), ramp=(600, 1800), step=10):
    samples = []
    for t in range(0, press[1] + 500, step):
        frac = min(1.0, max(0.0, (t - ramp[0]) / (ramp[1] - ramp[0])))
        samples.append((t, press[0] <= t < press[1], accel_for(start + (stop - start) * frac)))
    return samples


def test_45_degree_sweep_gives_25_steps():
    samples = sweep_trace()
    ev = recognize(samples)
    rot = [e for e in ev if e.kind is K.ROTATE_DELTA]
    assert kinds(ev)[0] is K.HOLD_START and kinds(ev)[-1] is K.HOLD_END
    assert len(rot) == 25 and all(e.degrees == 1.8 for e in rot)
    held = [tilt_degrees(a) for t, b, a in samples if b]
    assert sum(e.degrees for e in rot) == pytest.approx(oracles.quantized_rotation(held, 1.8))


def test_rotation_during_press_before_hold_is_kept():
    ev = recognize(sweep_trace(90, 99, ramp=(100, 400)))
    rot = [e for e in ev if e.kind is K.ROTATE_DELTA]
    assert len(rot) == 5 and rot[0].t_ms == 500


def test_negative_rotation():
    ev = recognize(sweep_trace(120, 84))
    rot = [e.degrees for e in ev if e.kind is K.ROTATE_DELTA]
    assert rot == [-1.8] * 20


@given(st.floats(0, 180), st.floats(0, 180), st.integers(3, 60))
def test_monotone_sweep_within_one_step(a, b, n):
    samples = sweep_trace(a, b, ramp=(600, 600 + 20 * n))
    rot = sum(e.degrees for e in recognize(samples) if e.kind is K.ROTATE_DELTA)
    assert abs(rot - (b - a)) <= 1.8 + 1e-9


@given(st.lists(st.tuples(st.integers(1, 300), st.booleans(), st.floats(0, 180)), max_size=80))
def test_event_invariants(steps):
    t = 0
    samples = []
    for dt, b, tilt in steps:
        t += dt
        samples.append((t, b, accel_for(tilt)))
    ev = recognize(samples)
    times = [e.t_ms for e in ev]
    assert times == sorted(times)
    holding = False
    for e in ev:
        if e.kind is K.HOLD_START:
            holding = True
        elif e.kind is K.HOLD_END:
            holding = False
        elif e.kind is K.ROTATE_DELTA:
            assert holding


def test_functional_process_sample():
    state = GestureState()
    state, ev = process_sample(state, 0, True, LEVEL)
    state, ev = process_sample(state, 600, True, LEVEL)
    assert kinds(ev) == [K.HOLD_START]


@pytest.mark.parametrize("deg,rng,out", [(90, (0, 100), 50), (-180, (0, 100), -100), (1.8, (0, 100), 1), (45, (0, 255), 63.75)])
def test_map_rotation(deg, rng, out):
    assert map_rotation(deg, rng) == pytest.approx(out, abs=1e-12)


def test_map_rotation_rejects_empty_range():
    with pytest.raises(ValueError):
        map_rotation(10, (5, 5))


def test_event_format():
    assert GestureEvent(K.ROTATE_DELTA, 1200, -1.8).format() == "1200 RotateDelta -1.8"
    assert GestureEvent(K.CLICK, 5).format() == "5 Click"
