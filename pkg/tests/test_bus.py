from __future__ import annotations

from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from drama.bus import (CONTROL, Bus, Directive, Heartbeat, IntentionClaim, UnknownRecipient,
                       UnknownSender, payload_to_dict)


def make_bus(*endpoints):
    bus = Bus()
    for e in endpoints:
        bus.register(e)
    return bus


def test_empty_drain():
    assert make_bus(CONTROL).drain(CONTROL, 10) == []


def test_fifo_per_sender():
    bus = make_bus(CONTROL, 0)
    bus.send(0, Heartbeat(0), 1, CONTROL)
    bus.send(0, IntentionClaim(0, ("x",)), 1, CONTROL)
    got = bus.drain(CONTROL, 2)
    assert [type(m.payload) for m in got] == [Heartbeat, IntentionClaim]
    assert [m.seq for m in got] == [1, 2]


def test_unknown_sender():
    with pytest.raises(UnknownSender):
        make_bus(CONTROL).send(7, Heartbeat(7), 0, CONTROL)


def test_unknown_recipient():
    bus = make_bus(CONTROL)
    with pytest.raises(UnknownRecipient):
        bus.drain(4, 0)
    with pytest.raises(UnknownRecipient):
        bus.send(CONTROL, Heartbeat(0), 0, 4)


def test_broadcast_reaches_each_other_endpoint_once():
    bus = make_bus(CONTROL, 0, 1, 2)
    bus.send(1, IntentionClaim(1, ("cupcake_1",)), 3)
    counts = {e: len(bus.drain(e, 4)) for e in (CONTROL, 0, 1, 2)}
    assert counts == {CONTROL: 1, 0: 1, 1: 0, 2: 1}


def test_next_tick_visibility():
    bus = make_bus(CONTROL, 0)
    bus.send(0, Heartbeat(0), 5, CONTROL)
    assert bus.drain(CONTROL, 5) == []
    assert len(bus.drain(CONTROL, 6)) == 1


def test_interleaved_senders_order():
    bus = make_bus(CONTROL, 0, 1)
    bus.send(0, Heartbeat(0), 2, CONTROL)
    bus.send(1, Heartbeat(1), 2, CONTROL)
    bus.send(0, IntentionClaim(0), 2, CONTROL)
    got = [(m.sender, m.seq) for m in bus.drain(CONTROL, 3)]
    assert got == [(0, 1), (0, 2), (1, 1)]


def test_dropped_endpoint_receives_nothing():
    bus = make_bus(CONTROL, 0, 1)
    bus.send(CONTROL, Directive("evict", 1, 0), 1, 0)
    bus.drop(0)
    bus.send(CONTROL, Directive("evict", 2, 0), 2, 0)   # silently discarded
    bus.send(1, IntentionClaim(1), 2)
    assert bus.drain(0, 10) == []
    assert bus.endpoints == [CONTROL, 1]


def test_payload_json():
    d = payload_to_dict(IntentionClaim(2, ("a", "b")))
    assert d == {"type": "IntentionClaim", "agent": 2, "objects": ["a", "b"]}
    assert payload_to_dict(Directive("evict", 3, 1))["op"] == "evict"


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.sampled_from([None, CONTROL, 0, 1, 2, 3]),
                          st.integers(0, 6)), max_size=40))
def test_no_loss_or_duplication(sends):
    bus = make_bus(CONTROL, 0, 1, 2, 3)
    expected = {e: Counter() for e in (CONTROL, 0, 1, 2, 3)}
    seqs = {}
    for sender, recipient, tick in sends:
        m = bus.send(sender, Heartbeat(sender), tick, recipient)
        assert m.seq > seqs.get(sender, 0)
        seqs[sender] = m.seq
        targets = [e for e in expected if e != sender] if recipient is None else [recipient]
        for e in targets:
            expected[e][(m.sender, m.seq)] += 1
    for e in expected:
        got = bus.drain(e, 100)
        assert Counter((m.sender, m.seq) for m in got) == expected[e]
        assert [m.order_key for m in got] == sorted(m.order_key for m in got)
