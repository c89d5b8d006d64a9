from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError
from .streams import keyed_rng

_LATENCY = 7


@dataclass(frozen=True)
class LatencyProfile:
    """Lognormal delays per device: ``median * exp(sigma * z)``.

    ``compute_median`` holds one median per device; network delays share one
    median each, scaled by the same per-device factor as compute.
    """

    compute_median: tuple[float, ...]
    compute_sigma: float = 0.2
    uplink_median: float = 0.1
    uplink_sigma: float = 0.2
    downlink_median: float = 0.1
    downlink_sigma: float = 0.2
    network_scale: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if any(m <= 0 for m in self.compute_median) or self.uplink_median <= 0 or self.downlink_median <= 0:
            raise ConfigError("latency medians must be positive")
        if min(self.compute_sigma, self.uplink_sigma, self.downlink_sigma) < 0:
            raise ConfigError("latency sigmas must be non-negative")

    @classmethod
    def build(cls, num_devices: int, compute_median=1.0, slow_devices=(), slow_factor=10.0, **kw):
        scale = tuple(slow_factor if k in set(slow_devices) else 1.0 for k in range(num_devices))
        return cls(tuple(compute_median * s for s in scale), network_scale=scale, **kw)


def sample_latency(profile: LatencyProfile, device_id: int, round_index: int) -> tuple[float, float, float]:
    """``(compute, uplink, downlink)`` seconds; a pure function of ``(seed, device, round)``."""
    z = keyed_rng(profile.seed, _LATENCY, device_id, round_index).standard_normal(3)
    scale = profile.network_scale[device_id] if profile.network_scale else 1.0
    return (profile.compute_median[device_id] * math.exp(profile.compute_sigma * z[0]),
            scale * profile.uplink_median * math.exp(profile.uplink_sigma * z[1]),
            scale * profile.downlink_median * math.exp(profile.downlink_sigma * z[2]))
