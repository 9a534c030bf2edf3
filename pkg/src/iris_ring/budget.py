"""Closed-form throughput, latency and battery-life calculators."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction

from .errors import InvalidGestureRate
from .ringsim import QUOTED_CURRENT_PROFILE, LinkConfig, PowerProfile, PowerState

GESTURE_SECONDS = 3.0
SECONDS_PER_HOUR = 3600.0


def ble_throughput(link: LinkConfig = LinkConfig()) -> int:
    """Effective link throughput in bits per second (floored)."""
    bits = Fraction(1000) * link.packets_per_interval * link.packet_size_bytes * 8
    return math.floor(bits / Fraction(link.connection_interval_ms))


def frame_latency_ms(width: int, height: int, bits_per_px: int = 8, link: LinkConfig = LinkConfig()) -> float:
    """Time to move one uncompressed frame over the link, in ms."""
    if width <= 0 or height <= 0 or bits_per_px <= 0:
        raise ValueError("frame dimensions must be positive")
    return width * height * bits_per_px / ble_throughput(link) * 1000.0


def frame_rate_fps(width: int, height: int, bits_per_px: int = 8, link: LinkConfig = LinkConfig()) -> float:
    return 1000.0 / frame_latency_ms(width, height, bits_per_px, link)


@dataclass(frozen=True)
class LatencyProfile:
    hardware_ms: float = 293.0
    yolo_ms: float = 28.0
    embed_gen_ms: float = 8.0
    # (database size, query ms) measurements; interpolated piecewise-linearly
    query_points: tuple[tuple[float, float], ...] = ((4, 9), (50, 244), (100, 423))

    def __post_init__(self):
        if min(self.hardware_ms, self.yolo_ms, self.embed_gen_ms) < 0:
            raise ValueError("latency components must be nonnegative")
        if len(self.query_points) < 2:
            raise ValueError("query model needs at least two points")

    def query_ms(self, n: float) -> float:
        """Query time for ``n`` candidates, extrapolating the end segments, never negative."""
        if n <= 0:
            return 0.0
        xs = [p[0] for p in self.query_points]
        k = min(max(bisect.bisect_right(xs, n), 1), len(xs) - 1)
        (x0, y0), (x1, y1) = self.query_points[k - 1], self.query_points[k]
        return max(0.0, y0 + (n - x0) * (y1 - y0) / (x1 - x0))


def e2e_latency_ms(
    profile: LatencyProfile = LatencyProfile(),
    db_size: int = 0,
    use_class_scoping: bool = False,
    class_partition_size: int = 0,
) -> float:
    """Button press to command dispatch: hardware + detector + embedding + query."""
    if not db_size >= class_partition_size >= 0:
        raise ValueError("need db_size >= class_partition_size >= 0")
    n = class_partition_size if use_class_scoping else db_size
    return profile.hardware_ms + profile.yolo_ms + profile.embed_gen_ms + profile.query_ms(n)


def awake_current_ma(gestures_per_hour: float, profile: PowerProfile = QUOTED_CURRENT_PROFILE) -> float:
    """Average current over an awake hour with N three-second ACTIVE gestures."""
    if not 0 <= gestures_per_hour <= SECONDS_PER_HOUR / GESTURE_SECONDS:
        raise InvalidGestureRate(f"gesture rate {gestures_per_hour}/h outside [0, 1200]")
    active_s = gestures_per_hour * GESTURE_SECONDS
    return (
        active_s * profile.current_ma(PowerState.ACTIVE)
        + (SECONDS_PER_HOUR - active_s) * profile.current_ma(PowerState.IDLE)
    ) / SECONDS_PER_HOUR


def battery_life_hours(
    gestures_per_hour: float,
    profile: PowerProfile = QUOTED_CURRENT_PROFILE,
    sleep_fraction: float = 0.0,
) -> float:
    """Hours on one charge for a gesture rate and a fraction of time spent asleep.

    The default profile uses the quoted per-state currents; pass
    ``PowerProfile()`` to work from the measured powers instead.
    """
    if not 0.0 <= sleep_fraction < 1.0:
        raise ValueError("sleep_fraction must lie in [0, 1)")
    awake = awake_current_ma(gestures_per_hour, profile)
    blended = (1.0 - sleep_fraction) * awake + sleep_fraction * profile.current_ma(PowerState.SLEEP)
    return profile.battery_mah / blended


# Published values, used by the CLI to print computed and reported side by side.
REPORTED_THROUGHPUT_BPS = 526_933
REPORTED_FRAME_LATENCY = {(320, 320): (1562.5, 0.64), (160, 120): (290.0, 3.43)}
REPORTED_LATENCY_TABLE = {4: 338, 50: 573, 100: 752}
REPORTED_BATTERY_TABLE = {10: (16.6, 32.9), 30: (15.9, 31.5), 60: (14.9, 29.5)}
