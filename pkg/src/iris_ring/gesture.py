"""Button + accelerometer gesture recognition.

Short presses become clicks (two within the double-click window merge into a
DoubleClick), long presses become holds during which wrist roll is reported
as fixed-size RotateDelta steps.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .errors import LowConfidence

MIN_ACCEL_G = 0.25
_EPS = 1e-9


class GestureKind(enum.Enum):
    CLICK = "Click"
    DOUBLE_CLICK = "DoubleClick"
    HOLD_START = "HoldStart"
    ROTATE_DELTA = "RotateDelta"
    HOLD_END = "HoldEnd"


@dataclass(frozen=True)
class GestureEvent:
    kind: GestureKind
    t_ms: float
    degrees: float | None = None

    def format(self) -> str:
        t = f"{self.t_ms:g}"
        if self.kind is GestureKind.ROTATE_DELTA:
            return f"{t} {self.kind.value} {self.degrees:+g}"
        return f"{t} {self.kind.value}"


@dataclass(frozen=True)
class GestureConfig:
    hold_threshold_ms: float = 500
    double_click_window_ms: float = 400
    rotate_step_deg: float = 1.8
    # accelerometer axes (index, sign) used as lateral and palm-normal
    lateral_axis: tuple[int, int] = (1, 1)
    normal_axis: tuple[int, int] = (2, 1)

    def __post_init__(self):
        if min(self.hold_threshold_ms, self.double_click_window_ms, self.rotate_step_deg) <= 0:
            raise ValueError("gesture timing constants must be positive")


def tilt_degrees(accel, config: GestureConfig = GestureConfig()) -> float:
    """Wrist-roll tilt in [0, 180]: atan2(lateral, normal) offset by 90 and clamped.

    Raises LowConfidence when |accel| <= 0.25 g.
    """
    ax, ay, az = accel
    if math.sqrt(ax * ax + ay * ay + az * az) <= MIN_ACCEL_G:
        raise LowConfidence("acceleration too small for a tilt estimate")
    (li, ls), (ni, ns) = config.lateral_axis, config.normal_axis
    raw = math.degrees(math.atan2(ls * accel[li], ns * accel[ni]))
    return min(180.0, max(0.0, raw + 90.0))


def map_rotation(delta_deg: float, value_range: tuple[float, float] = (0, 100)) -> float:
    """Convert a rotation in degrees to a control increment (180 deg spans the range)."""
    lo, hi = value_range
    if not hi > lo:
        raise ValueError("range max must exceed min")
    return delta_deg / 180.0 * (hi - lo)


@dataclass
class GestureState:
    pressed: bool = False
    press_t: float = 0.0
    holding: bool = False
    pending_click_t: float | None = None
    tilt: float | None = None
    prev_tilt: float | None = None
    rotation_acc: float = 0.0


@dataclass
class GestureRecognizer:
    config: GestureConfig = field(default_factory=GestureConfig)
    state: GestureState = field(default_factory=GestureState)

    def process_sample(self, t_ms: float, button: bool, accel=None) -> list[GestureEvent]:
        """Consume one sample; ``accel`` (in g) may be None when no IMU data arrived."""
        cfg, st = self.config, self.state
        events: list[GestureEvent] = []

        if accel is not None:
            try:
                st.tilt = tilt_degrees(accel, cfg)
            except LowConfidence:
                pass  # hold the last valid tilt

        self._lapse_click(t_ms, events)

        if button and not st.pressed:
            st.pressed = True
            st.press_t = t_ms
            st.prev_tilt = st.tilt
            st.rotation_acc = 0.0

        if button:
            if st.tilt is not None:
                if st.prev_tilt is not None:
                    st.rotation_acc += st.tilt - st.prev_tilt
                st.prev_tilt = st.tilt
            if not st.holding and t_ms - st.press_t >= cfg.hold_threshold_ms:
                if st.pending_click_t is not None:
                    events.append(GestureEvent(GestureKind.CLICK, st.pending_click_t))
                    st.pending_click_t = None
                st.holding = True
                events.append(GestureEvent(GestureKind.HOLD_START, t_ms))
            if st.holding:
                self._emit_rotation(t_ms, events)
        elif st.pressed:
            st.pressed = False
            if st.holding:
                st.holding = False
                events.append(GestureEvent(GestureKind.HOLD_END, t_ms))
            elif st.pending_click_t is not None:
                st.pending_click_t = None
                events.append(GestureEvent(GestureKind.DOUBLE_CLICK, t_ms))
            else:
                st.pending_click_t = t_ms
        return events

    def flush(self, t_ms: float | None = None) -> list[GestureEvent]:
        """Release a withheld Click once its window has lapsed (always, if ``t_ms`` is None)."""
        events: list[GestureEvent] = []
        if t_ms is None:
            if self.state.pending_click_t is not None:
                events.append(GestureEvent(GestureKind.CLICK, self.state.pending_click_t))
                self.state.pending_click_t = None
        else:
            self._lapse_click(t_ms, events)
        return events

    def _lapse_click(self, t_ms: float, events: list[GestureEvent]) -> None:
        st = self.state
        if st.pressed:
            return  # a second press began inside the window
        if st.pending_click_t is not None and t_ms - st.pending_click_t >= self.config.double_click_window_ms:
            events.append(GestureEvent(GestureKind.CLICK, st.pending_click_t))
            st.pending_click_t = None

    def _emit_rotation(self, t_ms: float, events: list[GestureEvent]) -> None:
        st, step = self.state, self.config.rotate_step_deg
        q = st.rotation_acc / step
        n = int(q + _EPS) if q >= 0 else -int(-q + _EPS)
        if n == 0:
            return
        st.rotation_acc -= n * step
        delta = step if n > 0 else -step
        events.extend(GestureEvent(GestureKind.ROTATE_DELTA, t_ms, delta) for _ in range(abs(n)))


def process_sample(
    state: GestureState, t_ms: float, button: bool, accel=None, config: GestureConfig = GestureConfig()
) -> tuple[GestureState, list[GestureEvent]]:
    rec = GestureRecognizer(config, state)
    events = rec.process_sample(t_ms, button, accel)
    return rec.state, events


def recognize(samples, config: GestureConfig = GestureConfig()) -> list[GestureEvent]:
    """Run a whole (t_ms, button, accel_g) sequence and flush the tail."""
    rec = GestureRecognizer(config)
    events: list[GestureEvent] = []
    for t, button, accel in samples:
        events.extend(rec.process_sample(t, button, accel))
    events.extend(rec.flush())
    return events
