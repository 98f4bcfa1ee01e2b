"""Time-limited cache of computed reports for the results API.

Exact hypothesis-class reports are deterministic but cost seconds to
enumerate, so they are kept for CACHE_TTL_HOURS. Reports read from the
results directory ('summary') always come from disk.
"""

from datetime import datetime, timedelta
from typing import Optional

# Cache TTL in hours
CACHE_TTL_HOURS = 4

UNCACHED_OPTIONS = frozenset({"summary"})


class ResultCache:
    """
    In-memory report cache keyed by API option.

    All entries expire together CACHE_TTL_HOURS after the first access of the
    current period.
    """

    def __init__(self, ttl: timedelta = timedelta(hours=CACHE_TTL_HOURS)):
        self.ttl = ttl
        self._reports = {}
        self._period_start = None

    def _expire(self, now: datetime) -> None:
        if self._period_start is None:
            self._period_start = now
        elif now - self._period_start >= self.ttl:
            self._reports.clear()
            self._period_start = now

    def get(self, option: str, now: Optional[datetime] = None) -> Optional[dict]:
        """
        Cached report for an option, or None.

        Args:
            option: API option name
            now: Current time (default: datetime.now())
        """
        if option in UNCACHED_OPTIONS:
            return None
        self._expire(now or datetime.now())
        return self._reports.get(option)

    def set(self, option: str, report: dict, now: Optional[datetime] = None) -> None:
        if option in UNCACHED_OPTIONS:
            return
        self._expire(now or datetime.now())
        self._reports[option] = report

    def has(self, option: str, now: Optional[datetime] = None) -> bool:
        if option in UNCACHED_OPTIONS:
            return False
        self._expire(now or datetime.now())
        return option in self._reports

    def clear(self) -> None:
        self._reports.clear()
        self._period_start = None


_global_cache = ResultCache()


def get_cache() -> ResultCache:
    """The process-wide cache used by the API."""
    return _global_cache
