"""Input events and the sources that produce them.

Events come from replay files, a consented foreground capture of the
operator's own terminal, or a seeded synthetic generator. The text grammar is
one event per line::

    <timestamp_ms> key_press <key>
    <timestamp_ms> key_release <key>
    <timestamp_ms> mouse_move <x> <y>
    <timestamp_ms> mouse_click <x> <y> <left|right|middle>

Lines whose first non-blank character is ``#`` are comments.
"""
from __future__ import annotations

import logging
import random
import re
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

from keylog_guard.common.errors import CaptureError, ScriptParseError

NAMED_KEYS = frozenset({"ENTER", "SPACE", "TAB", "BACKSPACE"})
PRINTABLE_KEYS = frozenset(chr(code) for code in range(0x21, 0x7F))

_NUMBER = re.compile(r"0|[1-9][0-9]*")
_BLANK = " \t"

LOGGER = logging.getLogger(__name__)


class EventKind(str, Enum):
    KEY_PRESS = "key_press"
    KEY_RELEASE = "key_release"
    MOUSE_MOVE = "mouse_move"
    MOUSE_CLICK = "mouse_click"

    @property
    def is_key(self) -> bool:
        return self in (EventKind.KEY_PRESS, EventKind.KEY_RELEASE)


class MouseButton(str, Enum):
    LEFT = "left"
    RIGHT = "right"
    MIDDLE = "middle"


def is_valid_key(key: str) -> bool:
    return key in PRINTABLE_KEYS or key in NAMED_KEYS


@dataclass(frozen=True, slots=True)
class InputEvent:
    timestamp_ms: int
    kind: EventKind
    key: Optional[str] = None
    x: Optional[int] = None
    y: Optional[int] = None
    button: Optional[MouseButton] = None

    def __post_init__(self) -> None:
        if self.timestamp_ms < 0:
            raise ValueError("timestamp_ms must be non-negative")
        if self.kind.is_key:
            if self.key is None or not is_valid_key(self.key):
                raise ValueError(f"{self.kind.value} requires a known key, got {self.key!r}")
            if self.x is not None or self.y is not None or self.button is not None:
                raise ValueError(f"{self.kind.value} cannot carry coordinates or a button")
            return
        if self.key is not None:
            raise ValueError(f"{self.kind.value} cannot carry a key")
        if self.x is None or self.y is None or self.x < 0 or self.y < 0:
            raise ValueError(f"{self.kind.value} requires non-negative x and y")
        if self.kind is EventKind.MOUSE_CLICK and self.button is None:
            raise ValueError("mouse_click requires a button")
        if self.kind is EventKind.MOUSE_MOVE and self.button is not None:
            raise ValueError("mouse_move cannot carry a button")

    def to_line(self) -> str:
        if self.kind.is_key:
            return f"{self.timestamp_ms} {self.kind.value} {self.key}"
        if self.kind is EventKind.MOUSE_MOVE:
            return f"{self.timestamp_ms} {self.kind.value} {self.x} {self.y}"
        return f"{self.timestamp_ms} {self.kind.value} {self.x} {self.y} {self.button.value}"


@dataclass(frozen=True, slots=True)
class EventScript:
    events: tuple[InputEvent, ...] = ()
    source_label: str = ""

    def __post_init__(self) -> None:
        # accept lists from callers, store a tuple
        object.__setattr__(self, "events", tuple(self.events))
        previous = 0
        for event in self.events:
            if event.timestamp_ms < previous:
                raise ValueError(
                    f"timestamps must be non-decreasing ({event.timestamp_ms} after {previous})"
                )
            previous = event.timestamp_ms

    def __len__(self) -> int:
        return len(self.events)


def parse_event_script(text: str, source_label: str = "") -> EventScript:
    """Parse a whole script document, rejecting it on the first malformed line."""
    events: list[InputEvent] = []
    previous = 0
    lines = text.split("\n")
    if lines and not lines[-1]:
        lines.pop()
    for line_number, raw_line in enumerate(lines, start=1):
        line = raw_line[:-1] if raw_line.endswith("\r") else raw_line
        stripped = line.lstrip(_BLANK)
        if not stripped or stripped.startswith("#"):
            continue
        event = _parse_line(_split_fields(line, line_number), line_number)
        if event.timestamp_ms < previous:
            raise ScriptParseError(
                f"timestamp {event.timestamp_ms} is earlier than previous {previous}",
                line=line_number,
            )
        previous = event.timestamp_ms
        events.append(event)
    return EventScript(tuple(events), source_label)


def _split_fields(line: str, line_number: int) -> list[str]:
    """Fields are separated by exactly one ASCII space, as ``serialize_events`` writes them."""
    fields = line.split(" ")
    if "" in fields:
        raise ScriptParseError("fields must be separated by single spaces", line=line_number)
    for field_text in fields:
        if not field_text.isascii() or not field_text.isprintable():
            raise ScriptParseError(f"unexpected character in field {field_text!r}", line=line_number)
    return fields


def _parse_line(fields: Sequence[str], line_number: int) -> InputEvent:
    if len(fields) < 2:
        raise ScriptParseError("expected '<timestamp_ms> <kind> <args...>'", line=line_number)
    timestamp = _parse_number(fields[0], "timestamp", line_number)
    try:
        kind = EventKind(fields[1])
    except ValueError:
        raise ScriptParseError(f"unknown event kind {fields[1]!r}", line=line_number) from None
    args = fields[2:]

    if kind.is_key:
        _expect_args(kind, args, 1, line_number)
        if not is_valid_key(args[0]):
            raise ScriptParseError(f"unknown key {args[0]!r}", line=line_number)
        return InputEvent(timestamp, kind, key=args[0])

    expected = 2 if kind is EventKind.MOUSE_MOVE else 3
    _expect_args(kind, args, expected, line_number)
    x = _parse_number(args[0], "x", line_number)
    y = _parse_number(args[1], "y", line_number)
    if kind is EventKind.MOUSE_MOVE:
        return InputEvent(timestamp, kind, x=x, y=y)
    try:
        button = MouseButton(args[2])
    except ValueError:
        raise ScriptParseError(f"unknown mouse button {args[2]!r}", line=line_number) from None
    return InputEvent(timestamp, kind, x=x, y=y, button=button)


def _expect_args(kind: EventKind, args: Sequence[str], count: int, line_number: int) -> None:
    if len(args) != count:
        raise ScriptParseError(
            f"{kind.value} takes {count} argument(s), got {len(args)}", line=line_number
        )


def _parse_number(token: str, name: str, line_number: int) -> int:
    if not _NUMBER.fullmatch(token):
        raise ScriptParseError(f"{name} must be a non-negative integer, got {token!r}", line=line_number)
    return int(token)


def serialize_events(script: EventScript) -> bytes:
    return "".join(f"{event.to_line()}\n" for event in script.events).encode("utf-8")


def load_event_script(path: Union[str, Path]) -> EventScript:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ScriptParseError(f"{path} is not UTF-8 text: {exc}") from exc
    return parse_event_script(text, source_label=str(path))


_SYNTHETIC_KEYS = tuple(sorted(PRINTABLE_KEYS)) + tuple(sorted(NAMED_KEYS))
SCREEN_WIDTH = 1920
SCREEN_HEIGHT = 1080


def generate_synthetic(seed: int, count: int) -> EventScript:
    """Deterministic pseudo-random script for a given ``(seed, count)``."""
    if count < 0:
        raise ValueError("count must be non-negative")
    rng = random.Random(seed)
    kinds = tuple(EventKind)
    buttons = tuple(MouseButton)
    events: list[InputEvent] = []
    timestamp = 0
    for _ in range(count):
        timestamp += rng.randint(1, 250)
        kind = rng.choice(kinds)
        if kind.is_key:
            events.append(InputEvent(timestamp, kind, key=rng.choice(_SYNTHETIC_KEYS)))
        else:
            x = rng.randrange(SCREEN_WIDTH)
            y = rng.randrange(SCREEN_HEIGHT)
            button = rng.choice(buttons) if kind is EventKind.MOUSE_CLICK else None
            events.append(InputEvent(timestamp, kind, x=x, y=y, button=button))
    return EventScript(tuple(events), f"synthetic({seed})")


_CHARACTER_KEYS = {" ": "SPACE", "\t": "TAB"}


def capture_interactive(
    lines: Iterable[str],
    *,
    clock: Callable[[], float] = time.monotonic,
    source_label: str = "stdin",
) -> EventScript:
    """Turn an operator-typed line stream into key_press events.

    Every character becomes one key_press; every line ends with ``ENTER``.
    A read failure raises :class:`CaptureError` carrying what was captured.
    """
    started = clock()
    events: list[InputEvent] = []
    skipped = 0

    def stamp() -> int:
        return max(0, int((clock() - started) * 1000))

    iterator = iter(lines)
    while True:
        try:
            line = next(iterator)
        except StopIteration:
            break
        except (OSError, UnicodeDecodeError) as exc:
            partial = EventScript(tuple(events), source_label)
            raise CaptureError(f"input stream failed after {len(events)} event(s): {exc}", script=partial) from exc

        for character in line.rstrip("\r\n"):
            key = _CHARACTER_KEYS.get(character, character)
            if not is_valid_key(key):
                skipped += 1
                continue
            events.append(InputEvent(_monotonic(events, stamp()), EventKind.KEY_PRESS, key=key))
        events.append(InputEvent(_monotonic(events, stamp()), EventKind.KEY_PRESS, key="ENTER"))

    if skipped:
        LOGGER.warning("Skipped %s character(s) outside the key alphabet", skipped)
    LOGGER.info("Captured %s key events from %s", len(events), source_label)
    return EventScript(tuple(events), source_label)


def _monotonic(events: Sequence[InputEvent], timestamp: int) -> int:
    if events and timestamp < events[-1].timestamp_ms:
        return events[-1].timestamp_ms
    return timestamp


__all__ = [
    "NAMED_KEYS",
    "PRINTABLE_KEYS",
    "EventKind",
    "EventScript",
    "InputEvent",
    "MouseButton",
    "capture_interactive",
    "generate_synthetic",
    "is_valid_key",
    "load_event_script",
    "parse_event_script",
    "serialize_events",
]
