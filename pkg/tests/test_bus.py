import pytest

from choreocep.bus import BusStopped, Faults, InMemoryBus, SubscriptionError


def collector(bus, topic, sid, **kw):
    got = []
    bus.subscribe(topic, sid, got.append, **kw)
    return got


class TestPublish:
    def test_no_subscribers_is_fine(self, bus):
        seq = bus.publish("Nobody", {"x": 1})
        assert seq == 1
        assert bus.pump() == 0

    def test_single_publisher_order_preserved(self, bus):
        got = collector(bus, "A", "s1")
        for i in range(3):
            bus.publish("A", i, publisher="p")
        bus.pump()
        assert [m.payload for m in got] == [0, 1, 2]

    def test_two_publishers_keep_per_publisher_order(self, bus):
        got = collector(bus, "A", "s1")
        for i in range(100):
            bus.publish("A", ("p1", i), publisher="p1")
            bus.publish("A", ("p2", i), publisher="p2")
        bus.pump()
        assert len(got) == 200
        for who in ("p1", "p2"):
            mine = [m for m in got if m.publisher == who]
            assert [m.payload[1] for m in mine] == list(range(100))
            assert [m.seq for m in mine] == sorted(m.seq for m in mine)

    def test_every_subscriber_gets_a_copy(self, bus):
        a = collector(bus, "A", "s1")
        b = collector(bus, "A", "s2")
        bus.publish("A", "hello")
        bus.pump()
        assert [m.payload for m in a] == [m.payload for m in b] == ["hello"]

    def test_messages_published_before_subscribing_are_not_delivered(self, bus):
        bus.publish("A", "early")
        got = collector(bus, "A", "s1")
        bus.publish("A", "late")
        bus.pump()
        assert [m.payload for m in got] == ["late"]

    def test_unsubscribe_stops_delivery(self, bus):
        got = collector(bus, "A", "s1")
        for i in range(5):
            bus.publish("A", i)
        bus.pump()
        bus.unsubscribe(bus.subscription("A", "s1"))
        for i in range(5):
            bus.publish("A", i)
        bus.pump()
        assert len(got) == 5

    def test_topics_are_isolated(self, bus):
        a = collector(bus, "A", "s1")
        bus.publish("B", 1)
        bus.pump()
        assert a == []

    def test_stopped_bus_refuses_publish(self, bus):
        bus.stop()
        with pytest.raises(BusStopped):
            bus.publish("A", 1)

    def test_tracer_sees_every_publish(self, clock):
        seen = []
        bus = InMemoryBus(clock, tracer=seen.append)
        bus.publish("A", 1)
        bus.publish("B", 2)
        assert [m.topic for m in seen] == ["A", "B"]


class TestSubscriptions:
    def test_duplicate_subscription_rejected(self, bus):
        bus.subscribe("A", "s1")
        with pytest.raises(SubscriptionError):
            bus.subscribe("A", "s1")

    def test_empty_ids_rejected(self, bus):
        with pytest.raises(SubscriptionError):
            bus.subscribe("A", "")
        with pytest.raises(SubscriptionError):
            bus.subscribe("", "s1")

    def test_polled_subscription_queues(self, bus):
        sub = bus.subscribe("A", "s1")
        bus.publish("A", 1)
        bus.publish("A", 2)
        assert [m.payload for m in sub.drain()] == [1, 2]
        assert sub.poll() is None

    def test_children_delivered_before_later_roots(self, bus):
        order = []

        def fan_out(msg):
            order.append(msg.payload)
            if msg.payload == "root1":
                bus.publish("B", "child", parent=msg, label=("B", 0))

        bus.subscribe("A", "s1", fan_out)
        bus.subscribe("B", "s2", lambda m: order.append(m.payload))
        bus.publish("A", "root1")
        bus.publish("A", "root2")
        bus.pump()
        assert order == ["root1", "child", "root2"]

    def test_disconnect_and_takeover_redelivers_unacked(self, bus):
        first = []
        sub = bus.subscribe("A", "w1:A", first.append, owner="w1", durable=True, auto_ack=False)
        for i in range(3):
            bus.publish("A", i)
        bus.pump()
        sub.ack()
        bus.publish("A", 3)
        bus.pump()
        bus.disconnect("w1")
        bus.publish("A", 4)
        bus.pump()
        second = []
        assert bus.takeover("A", "w1:A", "w2:A", second.append, owner="w2") is not None
        bus.pump()
        assert [m.payload for m in first] == [0, 1, 2, 3]
        assert [m.payload for m in second] == [3, 4]
        assert all(m.redelivered for m in second)
        assert bus.subscribers("A") == ["w2:A"]

    def test_disconnect_removes_non_durable(self, bus):
        bus.subscribe("A", "s1", lambda m: None, owner="w1")
        bus.disconnect("w1")
        assert bus.subscribers("A") == []

    def test_takeover_without_orphan_returns_none(self, bus):
        bus.subscribe("A", "s1", lambda m: None, owner="w1", durable=True)
        assert bus.takeover("A", "s1", "s2", lambda m: None) is None


class TestFaults:
    def test_drop_everything(self, clock):
        bus = InMemoryBus(clock, faults=Faults(drop=1.0))
        got = collector(bus, "A", "s1")
        bus.publish("A", 1)
        bus.pump()
        assert got == []
        assert bus.stats["dropped"] == 1

    def test_duplicate_everything(self, clock):
        bus = InMemoryBus(clock, faults=Faults(duplicate=1.0))
        got = collector(bus, "A", "s1")
        bus.publish("A", 1)
        bus.pump()
        assert [m.payload for m in got] == [1, 1]

    def test_delay_holds_until_clock_advances(self, clock):
        bus = InMemoryBus(clock, faults=Faults(delay_ms=50))
        got = collector(bus, "A", "s1")
        bus.publish("A", 1)
        bus.pump()
        assert got == []
        clock.advance_to(50)
        bus.pump()
        assert len(got) == 1

    def test_data_scope_spares_control_topics(self, clock):
        bus = InMemoryBus(clock, faults=Faults(drop=1.0))
        got = collector(bus, "ctl.heartbeat", "s1")
        bus.publish("ctl.heartbeat", {})
        bus.pump()
        assert len(got) == 1
