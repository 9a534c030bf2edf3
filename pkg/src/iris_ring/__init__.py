"""Desk-scale simulation of a camera smart ring and its phone-side pipeline.

Covers the ring-to-phone packet protocol, a simulated ring device, IMU gesture
recognition, centered-object selection, patch-embedding instance resolution,
a smart-device command dispatcher and closed-form latency/battery calculators.
"""

__version__ = "0.1.0"
