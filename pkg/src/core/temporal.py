"""
Temporal references: parsing the four surface forms, relative-date
arithmetic and the canonical chronological order.
"""
import calendar
import datetime
import logging
import re
from typing import List, Optional, Tuple

from .types import TemporalRef

logger = logging.getLogger(__name__)

_ISO = r"(\d{4}-\d{2}-\d{2})"
_ON_DATE = re.compile(rf"^{_ISO}$")
_BEFORE = re.compile(rf"^before\s+{_ISO}$", re.IGNORECASE)
_AFTER = re.compile(rf"^after\s+{_ISO}$", re.IGNORECASE)
# "Before 2023-03-05 to 2023-03-22" is read as the plain range
_RANGE = re.compile(rf"^(?:before\s+)?{_ISO}\s+to\s+{_ISO}$", re.IGNORECASE)

_NUMBER_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
    "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12,
    "a": 1, "an": 1,
}
_DAYS_AGO = re.compile(r"^(\w+)\s+days?\s+ago$")
_IN_DAYS = re.compile(r"^in\s+(\w+)\s+days?$")


class UnresolvableDate(ValueError):
    """Relative expression outside the supported set."""


def _to_date(text: str) -> Optional[datetime.date]:
    try:
        return datetime.date.fromisoformat(text)
    except ValueError:
        return None


def _count(word: str) -> int:
    if word.isdigit():
        return int(word)
    if word in _NUMBER_WORDS:
        return _NUMBER_WORDS[word]
    raise UnresolvableDate(f"unknown count {word!r}")


def _previous_month(d: datetime.date) -> datetime.date:
    year, month = (d.year, d.month - 1) if d.month > 1 else (d.year - 1, 12)
    last_day = calendar.monthrange(year, month)[1]
    return datetime.date(year, month, min(d.day, last_day))


def resolve_relative_date(expression: str, message_date: datetime.date) -> datetime.date:
    """
    Exact date arithmetic for: yesterday, N days ago, last week, last month,
    tomorrow, in N days. Raises UnresolvableDate for anything else.
    """
    expr = " ".join(expression.strip().lower().split())
    if expr == "yesterday":
        return message_date - datetime.timedelta(days=1)
    if expr == "tomorrow":
        return message_date + datetime.timedelta(days=1)
    if expr == "last week":
        return message_date - datetime.timedelta(days=7)
    if expr == "last month":
        return _previous_month(message_date)
    match = _DAYS_AGO.match(expr)
    if match:
        return message_date - datetime.timedelta(days=_count(match.group(1)))
    match = _IN_DAYS.match(expr)
    if match:
        return message_date + datetime.timedelta(days=_count(match.group(1)))
    raise UnresolvableDate(f"unsupported relative expression {expression!r}")


def parse_temporal(text: str, fallback: datetime.date) -> Tuple[TemporalRef, List[str]]:
    """
    Total parser: every string yields a TemporalRef. Unparseable input
    degrades to on_date(fallback) and returns a warning.
    """
    raw = (text or "").strip()
    warnings: List[str] = []

    match = _ON_DATE.match(raw)
    if match and _to_date(match.group(1)):
        return TemporalRef.on_date(_to_date(match.group(1))), warnings

    for pattern, factory in ((_BEFORE, TemporalRef.before), (_AFTER, TemporalRef.after)):
        match = pattern.match(raw)
        if match and _to_date(match.group(1)):
            return factory(_to_date(match.group(1))), warnings

    match = _RANGE.match(raw)
    if match:
        start, end = _to_date(match.group(1)), _to_date(match.group(2))
        if start and end:
            if start > end:
                warnings.append(f"reversed range {raw!r} swapped")
                logger.warning(f"Temporal range {raw!r} is reversed; swapping ends")
                start, end = end, start
            return TemporalRef.between(start, end), warnings

    try:
        return TemporalRef.on_date(resolve_relative_date(raw, fallback)), warnings
    except UnresolvableDate:
        pass

    warnings.append(f"unparseable date {raw!r}; using {fallback.isoformat()}")
    logger.warning(f"Could not parse temporal {raw!r}, falling back to {fallback.isoformat()}")
    return TemporalRef.on_date(fallback), warnings


def compare_temporal(a: TemporalRef, b: TemporalRef) -> int:
    """-1 / 0 / 1. Anchor date first, then before < on_date < range < after."""
    ka, kb = a.sort_key(), b.sort_key()
    return (ka > kb) - (ka < kb)
