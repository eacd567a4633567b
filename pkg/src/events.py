"""
Event calendar and multiplicative event intervention on sentiment scores
"""
import math
import os
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Sequence, Tuple

from loguru import logger

from .config import Config, read_text
from .dataset import Period, QuarterlyRecord, parse_period
from .errors import CalendarError, DataValidationError, PeriodParseError

CALENDAR_KEYS = ('name', 'polarity', 'weight', 'scope', 'start', 'end')


class Polarity(str, Enum):
    POSITIVE = 'positive'
    NEGATIVE = 'negative'


class Scope(str, Enum):
    INTERNAL = 'internal'
    EXTERNAL = 'external'


@dataclass(frozen=True)
class EventSpec:
    """A named intervention event active over an inclusive quarter range"""
    name: str
    polarity: Polarity
    weight: float
    scope: Scope
    start: Period
    end: Period

    def __post_init__(self):
        if not self.name or self.name != self.name.strip() or Config.EVENT_SEPARATOR in self.name:
            raise CalendarError(f"invalid event name '{self.name}'")
        if not math.isfinite(self.weight) or self.weight <= 0:
            raise CalendarError(f"event '{self.name}' weight must be a positive number, got {self.weight}")
        if self.polarity is Polarity.POSITIVE and self.weight <= 1:
            raise CalendarError(f"positive event '{self.name}' needs weight > 1, got {self.weight}")
        if self.polarity is Polarity.NEGATIVE and self.weight >= 1:
            raise CalendarError(f"negative event '{self.name}' needs weight < 1, got {self.weight}")
        if self.start > self.end:
            raise CalendarError(f"event '{self.name}' starts ({self.start}) after it ends ({self.end})")

    def contains(self, period: Period) -> bool:
        return self.start <= period <= self.end


@dataclass(frozen=True)
class EventCalendar:
    """Ordered events with unique names"""
    events: Tuple[EventSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'events', tuple(self.events))
        seen = set()
        for event in self.events:
            if event.name in seen:
                raise CalendarError(f"duplicate event name '{event.name}'")
            seen.add(event.name)

    def __len__(self) -> int:
        return len(self.events)

    def __contains__(self, name: str) -> bool:
        return any(event.name == name for event in self.events)

    @property
    def names(self) -> List[str]:
        return [event.name for event in self.events]

    def get(self, name: str) -> EventSpec:
        for event in self.events:
            if event.name == name:
                return event
        raise CalendarError(f"unknown event '{name}'")

    def after(self, period: Period) -> 'EventCalendar':
        """Events starting after period"""
        return EventCalendar(tuple(event for event in self.events if event.start > period))


def active_events(calendar: EventCalendar, period: Period) -> List[EventSpec]:
    """Events whose range contains period, in calendar order"""
    return [event for event in calendar.events if event.contains(period)]


def intervention_multiplier(events: Iterable[EventSpec]) -> float:
    """Product of event weights; 1.0 when no event is active"""
    return math.prod((event.weight for event in events), start=1.0)


def apply_intervention(base: float, events: Sequence[EventSpec]) -> float:
    """Scale a base score by the active events and clamp to [0, 100]"""
    if not math.isfinite(base) or not Config.SENTIMENT_MIN <= base <= Config.SENTIMENT_MAX:
        raise DataValidationError(f"base sentiment {base} outside [0, 100]")
    value = base * intervention_multiplier(events)
    return min(Config.SENTIMENT_MAX, max(Config.SENTIMENT_MIN, value))


def enrich(records: Sequence[QuarterlyRecord], calendar: EventCalendar) -> List[QuarterlyRecord]:
    """Attach active events and effective sentiment to every record"""
    enriched = []
    for record in records:
        if record.base_sentiment is None:
            raise DataValidationError(f"base sentiment missing at {record.period}",
                                      column=Config.SENTIMENT_COLUMN)
        unknown = [name for name in record.events if name not in calendar]
        if unknown:
            raise CalendarError(f"unknown event(s) at {record.period}: {', '.join(unknown)}")
        events = active_events(calendar, record.period)
        enriched.append(replace(
            record,
            events=tuple(event.name for event in events),
            effective_sentiment=apply_intervention(record.base_sentiment, events),
        ))
    touched = sum(1 for record in enriched if record.events)
    logger.info(f"Enriched {len(enriched)} records, {touched} with active events")
    return enriched


def without_intervention(records: Sequence[QuarterlyRecord]) -> List[QuarterlyRecord]:
    """Baseline enrichment: effective sentiment equals the base score and event labels are dropped"""
    baseline = []
    for record in records:
        if record.base_sentiment is None:
            raise DataValidationError(f"base sentiment missing at {record.period}",
                                      column=Config.SENTIMENT_COLUMN)
        baseline.append(replace(record, events=(), effective_sentiment=record.base_sentiment))
    logger.info(f"Enriched {len(baseline)} records without event intervention")
    return baseline


def read_blocks(text: str, label: str = '<text>') -> List[Tuple[int, Dict[str, str]]]:
    """Blank-line separated key=value blocks, each with its first line number"""
    blocks = []
    current: Dict[str, str] = {}
    first_line = 0
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith('#'):
            continue
        if not line:
            if current:
                blocks.append((first_line, current))
                current = {}
            continue
        if '=' not in line:
            raise CalendarError(f"{label} line {line_number}: expected key=value, got '{line}'")
        key, value = (part.strip() for part in line.split('=', 1))
        if not current:
            first_line = line_number
        if key in current:
            raise CalendarError(f"{label} line {line_number}: duplicate key '{key}'")
        current[key] = value
    if current:
        blocks.append((first_line, current))
    return blocks


def _event_from_block(block: Dict[str, str]) -> EventSpec:
    missing = [key for key in CALENDAR_KEYS if key not in block]
    if missing:
        raise CalendarError(f"missing field(s) {', '.join(missing)}")
    unknown = [key for key in block if key not in CALENDAR_KEYS]
    if unknown:
        raise CalendarError(f"unknown field(s) {', '.join(unknown)}")
    try:
        polarity = Polarity(block['polarity'])
        scope = Scope(block['scope'])
    except ValueError as e:
        raise CalendarError(str(e)) from None
    try:
        weight = float(block['weight'])
    except ValueError:
        raise CalendarError(f"non-numeric weight '{block['weight']}'") from None
    try:
        start, end = parse_period(block['start']), parse_period(block['end'])
    except PeriodParseError as e:
        raise CalendarError(str(e)) from None
    return EventSpec(block['name'], polarity, weight, scope, start, end)


def calendar_from_blocks(blocks: Sequence[Tuple[int, Dict[str, str]]], label: str = '<text>') -> EventCalendar:
    events = []
    for line_number, block in blocks:
        try:
            events.append(_event_from_block(block))
        except CalendarError as e:
            raise CalendarError(f"{label} block at line {line_number}: {e}") from None
    return EventCalendar(tuple(events))


def parse_calendar(text: str, label: str = '<text>') -> EventCalendar:
    return calendar_from_blocks(read_blocks(text, label), label)


def load_calendar(path: str) -> EventCalendar:
    if not os.path.isfile(path):
        raise CalendarError(f"calendar file not found: {path}")
    calendar = parse_calendar(read_text(path, CalendarError), label=path)
    logger.debug(f"Loaded {len(calendar)} events from {path}")
    return calendar


def default_calendar() -> EventCalendar:
    """Bundled calendar of the positive and negative events"""
    return load_calendar(Config.CALENDAR_PATH)


def format_calendar(calendar: EventCalendar) -> str:
    blocks = []
    for event in calendar.events:
        blocks.append('\n'.join([
            f"name={event.name}",
            f"polarity={event.polarity.value}",
            f"weight={event.weight!r}",
            f"scope={event.scope.value}",
            f"start={event.start}",
            f"end={event.end}",
        ]))
    return '\n\n'.join(blocks) + ('\n' if blocks else '')
