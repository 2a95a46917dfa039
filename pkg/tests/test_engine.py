import pytest

from roamsim.engine import EventQueue, PastTimeError


def test_schedule_and_fire():
    q = EventQueue()
    fired = []
    q.schedule(10, lambda: fired.append(q.clock))
    q.run_until(100)
    assert fired == [10]


def test_same_time_fifo_order():
    q = EventQueue()
    order = []
    q.schedule(10, lambda: order.append("A"))
    q.schedule(10, lambda: order.append("B"))
    q.run_until(10)
    assert order == ["A", "B"]


def test_past_time_rejected():
    q = EventQueue()
    q.schedule(5, lambda: None)
    q.run_until(20)
    with pytest.raises(PastTimeError):
        q.schedule(5, lambda: None)


def test_run_until_counts_and_sets_clock():
    q = EventQueue()
    assert q.run_until(100) == 0
    assert q.clock == 100
    for t in (110, 120, 130):
        q.schedule(t, lambda: None)
    assert q.run_until(120) == 2
    assert q.clock == 120


def test_cascading_events_within_horizon():
    q = EventQueue()
    seen = []

    def first():
        seen.append("first")
        q.schedule(2, lambda: seen.append("second"))

    q.schedule(1, first)
    executed = q.run_until(5)
    assert executed == 2
    assert seen == ["first", "second"]


def test_cancel_skips_event():
    q = EventQueue()
    fired = []
    keep = q.schedule(10, lambda: fired.append("keep"))
    drop = q.schedule(10, lambda: fired.append("drop"))
    q.cancel(drop)
    q.run_until(10)
    assert fired == ["keep"]
    assert keep != drop


def test_deterministic_interleaving():
    def run():
        q = EventQueue()
        log = []
        q.schedule(3, lambda: log.append("c"))
        q.schedule(1, lambda: (log.append("a"),
                               q.schedule(3, lambda: log.append("d"))))
        q.schedule(2, lambda: log.append("b"))
        q.run_until(10)
        return log

    assert run() == run() == ["a", "b", "c", "d"]


def test_clock_monotone_and_never_rewinds():
    q = EventQueue()
    q.run_until(50)
    q.run_until(10)
    assert q.clock == 50
