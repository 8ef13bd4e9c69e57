"""Request-driven FPGA offload reconfiguration engine.

The package watches a production request log, finds which application
kernels are worth offloading to the FPGA, and swaps the active offload
pattern when the projected win clears a configurable threshold. The
expensive part (circuit compilation) happens while the old circuit is
still serving traffic, so the actual stop/start gap stays near the
reconfiguration latency of the device.
"""

from fpga_reconf.errors import (
    CompileError,
    CycleError,
    MeasurementError,
    OffloadError,
    ProfileError,
    SearchError,
)
from fpga_reconf.loops import AppCodeProfile, LoopDescriptor, compute_intensity, top_n_by_intensity
from fpga_reconf.search import OffloadPattern, SearchResult, run_search

__all__ = [
    "AppCodeProfile",
    "CompileError",
    "CycleError",
    "LoopDescriptor",
    "MeasurementError",
    "OffloadError",
    "OffloadPattern",
    "ProfileError",
    "SearchError",
    "SearchResult",
    "compute_intensity",
    "run_search",
    "top_n_by_intensity",
]
