"""Chart-to-table evaluation, chart QA scoring and chart preprocessing."""

__version__ = "0.1.0"
