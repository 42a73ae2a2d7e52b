"""Tokens-per-minute admission control shared by concurrent runs."""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass
from typing import Callable


@dataclass
class Ticket:
    id: int
    admitted_at: float
    estimate: int
    charged: int


class TokenRateLimiter:
    """Sliding-window limiter: a request is admitted once the tokens charged in
    the last ``window_s`` seconds plus its own fit the budget.

    Requests are delayed, never dropped; one larger than the whole budget is
    admitted into an empty window. Each admission is charged its estimate
    until :meth:`reconcile` swaps in the backend-reported count.
    """

    def __init__(
        self,
        tokens_per_minute: int,
        window_s: float = 60.0,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if tokens_per_minute <= 0:
            raise ValueError("tokens_per_minute must be positive")
        self.budget = int(tokens_per_minute)
        self.window_s = float(window_s)
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._live: dict[int, Ticket] = {}
        self._ids = itertools.count()
        self.ledger_total = 0
        self.waited_s = 0.0

    def _expire(self, now: float) -> None:
        for tid in [t.id for t in self._live.values() if t.admitted_at + self.window_s <= now]:
            del self._live[tid]

    def in_window(self) -> int:
        with self._lock:
            self._expire(self._clock())
            return sum(t.charged for t in self._live.values())

    def acquire(self, tokens: int) -> Ticket:
        tokens = max(0, int(tokens))
        while True:
            with self._lock:
                now = self._clock()
                self._expire(now)
                used = sum(t.charged for t in self._live.values())
                if tokens == 0 or used + tokens <= self.budget or not self._live:
                    ticket = Ticket(next(self._ids), now, tokens, tokens)
                    self._live[ticket.id] = ticket
                    self.ledger_total += tokens
                    return ticket
                wait = min(t.admitted_at for t in self._live.values()) + self.window_s - now
            wait = max(wait, 1e-3)
            self.waited_s += wait
            self._sleep(wait)

    def reconcile(self, ticket: Ticket, actual_tokens: int) -> None:
        """Replace the estimate with the actual usage in both the window and the ledger."""
        actual = max(0, int(actual_tokens))
        with self._lock:
            self.ledger_total += actual - ticket.charged
            ticket.charged = actual
