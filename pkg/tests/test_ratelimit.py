import threading

import pytest

from atc_arena.harness.ratelimit import TokenRateLimiter


class FakeClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now

    def sleep(self, s):
        self.now += s


def test_third_request_waits_a_window():
    clock = FakeClock()
    lim = TokenRateLimiter(6000, clock=clock, sleep=clock.sleep)
    times = [lim.acquire(3000).admitted_at for _ in range(3)]
    assert times[:2] == [0.0, 0.0]
    assert times[2] >= 60.0


def test_reconcile_frees_budget():
    clock = FakeClock()
    lim = TokenRateLimiter(6000, clock=clock, sleep=clock.sleep)
    t = lim.acquire(5000)
    lim.reconcile(t, 1000)
    assert lim.in_window() == 1000 and lim.ledger_total == 1000
    assert lim.acquire(5000).admitted_at == 0.0


def test_oversized_request_admitted_into_empty_window():
    clock = FakeClock()
    lim = TokenRateLimiter(100, clock=clock, sleep=clock.sleep)
    assert lim.acquire(500).admitted_at == 0.0
    assert lim.acquire(1).admitted_at >= 60.0


def test_window_never_exceeded_threaded():
    lim = TokenRateLimiter(10_000_000)
    tickets = []

    def worker():
        for _ in range(50):
            tickets.append(lim.acquire(1000))

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert lim.ledger_total == 400 * 1000 == lim.in_window()
    assert len({t.id for t in tickets}) == 400


def test_rejects_bad_budget():
    with pytest.raises(ValueError):
        TokenRateLimiter(0)
