"""Coverage flight planning for tunnel inspection UAVs.

Builds a probabilistic roadmap over a box-obstacle tunnel map, turns it into
closed coverage circuits, propagates a position-error belief along each
candidate, and validates the resulting ranking with a measurement-replay
Monte Carlo harness.
"""

__version__ = "0.1.0"
