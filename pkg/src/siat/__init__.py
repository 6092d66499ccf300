"""Desk-scale streaming video analytics stack.

Layers: an embedded log-based broker with per-service queues, the SVB1
mini-batch wire codec, stream acquisition, a journaled catalog control
plane with role-based access, per-user object spaces, deterministic
processing/mining kernels, a typed pipeline runtime with data-parallel
execution and service chaining, a triple-store knowledge layer, and an
HTTP/CLI gateway.
"""

from .system import SiatSystem

__version__ = "0.1.0"

__all__ = ["SiatSystem", "__version__"]
