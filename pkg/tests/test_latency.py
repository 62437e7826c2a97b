import math
from dataclasses import replace
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import LINK, frame_time, rts_cts_exchange

from edgeguard.latency import (
    LatencyParams,
    ParamError,
    TlsParams,
    curve_csv,
    exchange_delay,
    latency_curve,
    load_params,
    network_delay,
    node_delay,
    num_packets,
    packet_delay,
    parse_size,
    read_curve_csv,
    tcp_latency,
    tls_overhead,
    without_node_processing,
)

P, T = load_params()


def close(a, b, rel=1e-12):
    return math.isclose(float(a), float(b), rel_tol=rel, abs_tol=1e-15)


def test_defaults_match_reference_values():
    assert (P.distance, P.propagation_speed, P.pprc, P.pprs) == (100, 2e8, 10000, 50000)
    assert (P.sifs, P.difs, P.data_rate, P.control_rate) == (20e-6, 300e-6, 54e6, 1e6)
    assert (P.swc, P.tcph, P.iph, P.wh, P.sctcp, P.mplw) == (74, 20, 20, 34, 74, 2346)
    assert P.tcp_control_signals == 4
    assert (T.client_hello, T.server_hello, T.per_certificate, T.chain_length) == (170, 75, 1500, 4)
    assert (T.client_key_exchange, T.finished, T.handshake_header, T.record_header) == (130, 12, 4, 5)
    assert T.tls_messages == 10


def test_packet_count():
    assert P.payload_per_packet == 2272
    assert num_packets(508928, P) == 224
    assert num_packets(parse_size("497KB"), P) == 224
    assert num_packets(1, P) == 1
    assert num_packets(2272, P) == 1 and num_packets(2273, P) == 2
    with pytest.raises(ValueError):
        num_packets(0, P)


@given(st.integers(1, 10**9))
def test_packet_count_is_ceiling(size):
    n = num_packets(size, P)
    assert (n - 1) * 2272 < size <= n * 2272


def test_node_delay():
    factor = Fraction(1, 10000) + Fraction(1, 50000)
    assert factor == Fraction(120, 10**6)
    assert close(node_delay(1, 0, P), factor)
    assert close(node_delay(224, 4, P), 228 * factor)
    assert close(node_delay(224, 4, P), 0.02736)
    assert node_delay(0, 0, P) == 0
    with pytest.raises(ValueError):
        node_delay(-1, 0, P)


def test_packet_delay():
    assert close(packet_delay(2346, 54e6, P), frame_time(2346, LINK["dr"]))
    assert round(packet_delay(2346, 54e6, P) * 1e6, 2) == 348.06
    assert close(packet_delay(74, 1e6, P), 592.5e-6)
    far = replace(P, distance=200)
    assert close(packet_delay(74, 1e6, far) - packet_delay(74, 1e6, P), 0.5e-6, rel=1e-9)
    with pytest.raises(ValueError):
        packet_delay(0, 1e6, P)


def test_one_full_exchange():
    assert close(exchange_delay(2346, P), rts_cts_exchange(2346))
    assert round(network_delay(1, P) * 1e6, 2) == 2485.56


@given(st.integers(1, 2346))
def test_exchange_matches_exact_oracle(length):
    assert close(exchange_delay(length, P), rts_cts_exchange(length))


@given(st.integers(0, 5000), st.integers(0, 10))
def test_network_delay_is_linear(n, ctrl):
    assert close(network_delay(2 * n, P, ctrl) - network_delay(n, P, ctrl), network_delay(n, P) - network_delay(0, P),
                 rel=1e-9)
    assert close(network_delay(n, P, ctrl), n * float(rts_cts_exchange(2346)) + ctrl * float(rts_cts_exchange(74)),
                 rel=1e-9)


def test_control_share_independent_of_data_rate():
    fast = replace(P, data_rate=2 * P.data_rate)
    diff = network_delay(10, P) - network_delay(10, fast)
    assert close(diff, 10 * 2346 * 8 / 108e6, rel=1e-9)


def test_tcp_latency_for_497kb():
    b = tcp_latency(508928, P)
    assert b.n_data_packets == 224 and b.n_ctrl == 4
    assert close(b.node_delay, 0.02736)
    expected_net = 224 * rts_cts_exchange(2346) + 4 * rts_cts_exchange(74)  # 224 x 2272 == 508928: no short tail
    assert close(b.network_delay, expected_net)
    assert close(b.total, b.node_delay + b.network_delay)
    assert any("data_packets = 224" in line for line in b.trace)


@given(st.integers(1, 10**7))
def test_breakdown_conservation_and_tail(size):
    b = tcp_latency(size, P)
    assert close(b.total, b.node_delay + b.network_delay)
    n = b.n_data_packets
    tail = size - (n - 1) * 2272
    net = (n - 1) * rts_cts_exchange(2346) + rts_cts_exchange(tail + 74) + 4 * rts_cts_exchange(74)
    assert close(b.network_delay, net, rel=1e-9)


@given(st.integers(1, 10**7), st.integers(1, 10**5))
def test_latency_increases_with_size(size, extra):
    assert tcp_latency(size + extra, P).total > tcp_latency(size, P).total


@settings(max_examples=50)
@given(st.floats(1, 1e4), st.floats(1.01, 10))
def test_monotone_in_distance_and_inverse_rate(distance, factor):
    base = replace(P, distance=distance)
    assert tcp_latency(10**5, replace(base, distance=distance * factor)).total > tcp_latency(10**5, base).total
    assert tcp_latency(10**5, replace(base, data_rate=base.data_rate * factor)).total < tcp_latency(10**5, base).total


def test_infinite_processing_removes_node_delay():
    fast = without_node_processing(P)
    b = tcp_latency(508928, fast)
    assert b.node_delay == 0 and b.total == b.network_delay


def _tls_oracle(t, p, certs=None):
    certs = t.chain_length if certs is None else certs
    body = t.client_hello + t.server_hello + t.per_certificate * certs + t.client_key_exchange + 2 * t.finished
    total = body + 7 * t.handshake_header + t.tls_messages * t.record_header
    return (Fraction(total * 8) / LINK["dr"] + t.tls_messages * (1 / LINK["pprc"] + 1 / LINK["pprs"])
            + 2 * LINK["distance"] / LINK["ps"])


def test_tls_overhead_default():
    assert T.handshake_bytes() == 6477
    value = tls_overhead(T, P)
    assert close(value, _tls_oracle(T, P))
    assert close(value, 2.160556e-3, rel=1e-6)
    assert 2.12e-3 <= value <= 3.18e-3


@pytest.mark.parametrize("certs", [1, 2, 3, 4, 6])
def test_each_certificate_costs_its_air_time(certs):
    t = replace(T, chain_length=certs)
    assert close(tls_overhead(t, P), _tls_oracle(T, P, certs))
    fewer = replace(T, chain_length=1)
    assert close(tls_overhead(t, P) - tls_overhead(fewer, P), (certs - 1) * 1500 * 8 / 54e6, rel=1e-9)


def test_doubling_rate_halves_only_byte_term():
    fast = replace(P, data_rate=2 * P.data_rate)
    byte_term = T.handshake_bytes() * 8 / P.data_rate
    assert close(tls_overhead(T, P) - tls_overhead(T, fast), byte_term / 2, rel=1e-9)


def test_invalid_params_rejected():
    with pytest.raises(ParamError):
        replace(T, chain_length=0)
    with pytest.raises(ParamError):
        replace(T, finished=-1)
    with pytest.raises(ParamError):
        replace(P, mplw=74)
    with pytest.raises(ParamError):
        replace(P, sifs=0)
    with pytest.raises(ParamError):
        load_params(overrides={"warp_factor": 9})


def test_param_file_overrides(tmp_path):
    f = tmp_path / "p.txt"
    f.write_text("# faster radio\ndata_rate = 108e6\nchain_length = 2\n")
    p, t = load_params(f)
    assert p.data_rate == 108e6 and t.chain_length == 2 and p.mplw == 2346
    f.write_text("data_rate fast\n")
    with pytest.raises(ParamError):
        load_params(f)


def test_curve():
    sizes = [1024, 10 * 1024, 100 * 1024]
    rows = latency_curve(sizes, P, T)
    assert [r.size for r in rows] == sizes
    assert all(a.tcp < b.tcp and a.tls < b.tls for a, b in zip(rows, rows[1:]))
    overhead = tls_overhead(T, P)
    assert all(close(r.tls - r.tcp, overhead, rel=1e-9) for r in rows)
    assert read_curve_csv(curve_csv(rows)) == rows
    with pytest.raises(ValueError):
        latency_curve([], P, T)


def test_parse_size():
    assert parse_size("497KB") == 508928
    assert parse_size("1MB") == 1024**2
    assert parse_size("12") == 12
    assert parse_size("1.5 kb") == 1536
    for bad in ("", "-1KB", "1.3B", "0", "10 parsecs"):
        with pytest.raises(ValueError):
            parse_size(bad)
