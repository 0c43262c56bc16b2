"""Next-activity prediction from semantic stories rendered out of process event logs."""

from .errors import SnapError
from .eventlog import END, EventLog, enumerate_prefixes, load_csv, load_xes, log_stats

__version__ = "0.1.0"

__all__ = ["END", "EventLog", "SnapError", "enumerate_prefixes", "load_csv", "load_xes", "log_stats", "__version__"]
