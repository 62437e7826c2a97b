import random
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import cidr_contains, sliding_window_blocks

from edgeguard.firewall import (
    Allow,
    Block,
    BlockReason,
    Firewall,
    FirewallError,
    FirewallRuleSet,
    RuleDelta,
    format_rules,
    parse_rules,
)


def _rate(n, w):
    return FirewallRuleSet(packet_threshold=n, time_threshold=w)


def test_banned_ip():
    fw = Firewall(parse_rules("ban-ip 10.0.0.5\n"))
    assert fw.check("10.0.0.5", 1883, 0.0) == Block(BlockReason.BANNED_IP)
    assert isinstance(fw.check("10.0.0.6", 1883, 0.0), Allow)


def test_banned_prefix():
    fw = Firewall(parse_rules("ban-prefix 192.168.0.0/16"))
    assert fw.check("192.168.7.9", 1883, 0.0) == Block(BlockReason.BANNED_PREFIX)
    assert fw.check("192.169.0.1", 1883, 0.0)


def test_banned_port():
    fw = Firewall(parse_rules("ban-port 8883"))
    assert fw.check("1.2.3.4", 8883, 0.0) == Block(BlockReason.BANNED_PORT)
    assert fw.check("1.2.3.4", 1883, 0.0)


def test_eleventh_packet_in_window_is_blocked():
    events = [("10.0.0.1", i * 0.05) for i in range(11)]
    expected = sliding_window_blocks(events, 10, 1.0)
    fw = Firewall(_rate(10, 1.0))
    got = [isinstance(fw.check(s, 1883, t), Block) for s, t in events]
    assert got == expected
    assert got[9] is False and got[10] is True
    assert fw.check("10.0.0.1", 1883, 0.6) == Block(BlockReason.RATE_LIMIT)


def test_window_is_half_open():
    fw = Firewall(_rate(1, 1.0))
    assert fw.check("10.0.0.1", 1, 0.0)
    # The packet at exactly t - window has left the window.
    assert fw.check("10.0.0.1", 1, 1.0)
    assert not fw.check("10.0.0.1", 1, 1.5)


def test_reason_order_first_hit_wins():
    rules = parse_rules("ban-ip 10.0.0.1\nban-prefix 10.0.0.0/8\nban-port 1883\nrate 1 10")
    fw = Firewall(rules)
    assert fw.check("10.0.0.1", 1883, 0).reason is BlockReason.BANNED_IP
    assert fw.check("10.0.0.2", 1883, 0).reason is BlockReason.BANNED_PREFIX
    assert fw.check("11.0.0.2", 1883, 0).reason is BlockReason.BANNED_PORT
    fw.check("12.0.0.2", 1, 0)
    assert fw.check("12.0.0.2", 1, 0).reason is BlockReason.RATE_LIMIT
    assert len({r.value for r in BlockReason}) == 4


def _random_sequence(rng: random.Random):
    n_src = rng.randint(1, 4)
    t = 0.0
    events = []
    for _ in range(rng.randint(1, 60)):
        t += rng.choice([0.0, 0.0, rng.random() * 0.5, rng.random() * 3])
        t = round(t, 3)
        events.append((f"10.0.0.{rng.randint(1, n_src)}", t))
    return events, rng.randint(1, 6), rng.choice([0.25, 0.5, 1.0, 2.0, 3.7])


def test_rate_limiter_matches_oracle_on_ten_thousand_sequences():
    rng = random.Random(20240601)
    for _ in range(10_000):
        events, threshold, window = _random_sequence(rng)
        fw = Firewall(_rate(threshold, window))
        got = [fw.check(s, 1883, t) == Block(BlockReason.RATE_LIMIT) for s, t in events]
        assert got == sliding_window_blocks(events, threshold, window), (events, threshold, window)
        assert fw.ledger_size() <= len({s for s, _ in events}) * threshold


@settings(max_examples=300)
@given(
    st.lists(st.tuples(st.integers(1, 3), st.integers(0, 50)), min_size=1, max_size=80),
    st.integers(1, 8),
    st.sampled_from([1, 3, 5, 10]),
)
def test_rate_limiter_matches_oracle_property(raw, threshold, window):
    t, events = 0, []
    for src, gap in raw:
        t += gap
        events.append((f"172.16.0.{src}", t / 10))
    fw = Firewall(_rate(threshold, window))
    got = [not fw.check(s, 1883, ts) for s, ts in events]
    assert got == sliding_window_blocks(events, threshold, window)


def test_cidr_containment_over_sampled_slash24():
    rng = random.Random(7)
    for _ in range(4):
        a, b, c = rng.randrange(256), rng.randrange(256), rng.randrange(256)
        for bits in (0, 8, 16, 20, 23, 24, 25, 30, 32):
            base = f"{a}.{b}.{c}.{rng.randrange(256)}"
            prefix = f"{base}/{bits}"
            fw = Firewall(parse_rules(f"ban-prefix {prefix}"))
            for last in range(256):
                addr = f"{a}.{b}.{c}.{last}"
                assert (fw.check(addr, 1, 0) == Block(BlockReason.BANNED_PREFIX)) == cidr_contains(prefix, addr)
            # Neighbouring /24s exercise the upper bits.
            for _ in range(64):
                addr = ".".join(str(rng.randrange(256)) for _ in range(4))
                assert (fw.check(addr, 1, 0) == Block(BlockReason.BANNED_PREFIX)) == cidr_contains(prefix, addr)


def test_add_then_remove_ip():
    fw = Firewall()
    e1 = fw.update_rules(RuleDelta(add_ips=("10.1.1.1",)))
    assert not fw.check("10.1.1.1", 1, 0)
    e2 = fw.update_rules(RuleDelta(remove_ips=("10.1.1.1",)))
    assert fw.check("10.1.1.1", 1, 0)
    assert e2 == e1 + 1


def test_empty_rules_allow_everything_but_rate_still_applies():
    fw = Firewall(FirewallRuleSet())
    assert all(fw.check(f"10.0.0.{i}", i, i) for i in range(1, 100))
    fw = Firewall(_rate(2, 1))
    assert [bool(fw.check("1.1.1.1", 1, 0)) for _ in range(3)] == [True, True, False]


def test_invalid_updates_rejected():
    fw = Firewall()
    with pytest.raises(FirewallError):
        fw.update_rules(RuleDelta(add_prefixes=("10.0.0.0/33",)))
    with pytest.raises(FirewallError):
        fw.update_rules(RuleDelta(add_ips=("300.1.1.1",)))
    assert fw.epoch == 0
    with pytest.raises(FirewallError):
        FirewallRuleSet(packet_threshold=0, time_threshold=1)
    with pytest.raises(FirewallError):
        FirewallRuleSet(packet_threshold=3)


def test_rules_parser_and_format_round_trip():
    text = "# edge rules\nban-ip 10.0.0.5\nban-prefix 192.168.0.0/16  # lab\nban-port 23\nrate 10 1\ncount initiating\n"
    rules = parse_rules(text)
    assert parse_rules(format_rules(rules)) == rules
    assert not rules.count_all
    for bad in ("ban-ip", "ban-prefix 10.0.0.0", "rate 10", "allow 1.2.3.4", "ban-port 70000"):
        with pytest.raises(FirewallError, match="line 1"):
            parse_rules(bad)


def test_count_initiating_only():
    fw = Firewall(parse_rules("rate 1 10\ncount initiating"))
    assert fw.check("1.1.1.1", 1, 0, initiating=True)
    assert all(fw.check("1.1.1.1", 1, 0, initiating=False) for _ in range(5))
    assert not fw.check("1.1.1.1", 1, 0, initiating=True)


ips = st.sampled_from([f"10.0.{a}.{b}" for a in range(2) for b in range(4)])


@settings(max_examples=300)
@given(
    st.lists(st.tuples(ips, st.sampled_from([1883, 23, 80]), st.integers(0, 30)), min_size=1, max_size=40),
    st.sampled_from(["ban-ip 10.0.1.2", "ban-prefix 10.0.0.0/24", "ban-port 23", "ban-prefix 10.0.0.0/30"]),
    st.booleans(),
)
def test_adding_a_ban_never_unblocks(events, extra, rate):
    base = "rate 3 2\n" if rate else ""
    a, b = Firewall(parse_rules(base)), Firewall(parse_rules(base + extra))
    t = 0.0
    for ip, port, gap in events:
        t += gap / 10
        va, vb = a.check(ip, port, t), b.check(ip, port, t)
        if not va:
            assert not vb


def test_expire_bounds_ledger():
    fw = Firewall(_rate(3, 1.0))
    for i in range(50):
        for _ in range(5):
            fw.check(f"10.0.{i // 250}.{i % 250}", 1, 0.0)
    assert fw.ledger_size() == 50 * 3
    assert fw.expire(5.0) == 50
    assert fw.ledger_size() == 0


def test_concurrent_checks_see_one_epoch():
    banned = FirewallRuleSet(banned_ips=frozenset(parse_rules("ban-ip 10.9.9.9").banned_ips))
    open_ = FirewallRuleSet()
    fw = Firewall(open_)
    stop = threading.Event()
    errors = []

    def checker():
        while not stop.is_set():
            epoch, verdict = fw.check_with_epoch("10.9.9.9", 1883, 0.0)
            # Odd epochs carry the ban, even epochs do not.
            if bool(verdict) != (epoch % 2 == 0):
                errors.append((epoch, verdict))

    threads = [threading.Thread(target=checker) for _ in range(6)]
    for th in threads:
        th.start()
    for i in range(2000):
        fw.replace_rules(banned if i % 2 == 0 else open_)
    stop.set()
    for th in threads:
        th.join()
    assert not errors
    assert fw.epoch == 2000


def test_rate_ledger_is_thread_safe():
    fw = Firewall(_rate(100, 1000.0))
    allowed = []

    def hammer():
        allowed.append(sum(bool(fw.check("10.1.1.1", 1, 1.0)) for _ in range(500)))

    threads = [threading.Thread(target=hammer) for _ in range(8)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert sum(allowed) == 100
