"""Simulator, adversary and property checker for ROBERT, DP3T and CWA exposure notification."""

from .propcheck import PATTERNS, Property, Violation, check, check_soundness, check_upload_auth, classify
from .runner import RunReport, list_scenarios, run, run_all
from .worldmodel import EventKind, Trace, TraceEvent, World

__version__ = "0.1.0"

__all__ = [
    "PATTERNS",
    "EventKind",
    "Property",
    "RunReport",
    "Trace",
    "TraceEvent",
    "Violation",
    "World",
    "check",
    "check_soundness",
    "check_upload_auth",
    "classify",
    "list_scenarios",
    "run",
    "run_all",
]
