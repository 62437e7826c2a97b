"""Stateless ban lists plus a per-source sliding-window rate limiter."""

from __future__ import annotations

import enum
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path


class FirewallError(ValueError):
    pass


class BlockReason(enum.Enum):
    BANNED_IP = "banned-ip"
    BANNED_PREFIX = "banned-prefix"
    BANNED_PORT = "banned-port"
    RATE_LIMIT = "rate-limit"


@dataclass(frozen=True)
class Allow:
    def __bool__(self) -> bool:
        return True


@dataclass(frozen=True)
class Block:
    reason: BlockReason

    def __bool__(self) -> bool:
        return False


ALLOW = Allow()


def _ip(text) -> IPv4Address:
    try:
        return IPv4Address(text)
    except ValueError as exc:
        raise FirewallError(f"invalid IPv4 address {text!r}: {exc}") from None


def _net(text) -> IPv4Network:
    try:
        return IPv4Network(text, strict=False)
    except ValueError as exc:
        raise FirewallError(f"invalid CIDR prefix {text!r}: {exc}") from None


def _port(value) -> int:
    try:
        port = int(value)
    except (TypeError, ValueError):
        raise FirewallError(f"invalid port {value!r}") from None
    if not 0 <= port <= 65535:
        raise FirewallError(f"port {port} out of range")
    return port


@dataclass(frozen=True)
class FirewallRuleSet:
    banned_ips: frozenset[IPv4Address] = frozenset()
    banned_prefixes: frozenset[IPv4Network] = frozenset()
    banned_ports: frozenset[int] = frozenset()
    packet_threshold: int | None = None
    time_threshold: float | None = None
    # Count every packet toward the rate, or only connection-opening ones.
    count_all: bool = True

    def __post_init__(self):
        if (self.packet_threshold is None) != (self.time_threshold is None):
            raise FirewallError("packet and time thresholds must be set together")
        if self.packet_threshold is not None and (self.packet_threshold <= 0 or self.time_threshold <= 0):
            raise FirewallError("rate thresholds must be positive")

    @property
    def rate_limited(self) -> bool:
        return self.packet_threshold is not None


@dataclass(frozen=True)
class RuleDelta:
    add_ips: tuple[str, ...] = ()
    remove_ips: tuple[str, ...] = ()
    add_prefixes: tuple[str, ...] = ()
    remove_prefixes: tuple[str, ...] = ()
    add_ports: tuple[int, ...] = ()
    remove_ports: tuple[int, ...] = ()
    # (packets, seconds); (0, 0) clears the limit.
    rate: tuple[int, float] | None = None

    def apply(self, rules: FirewallRuleSet) -> FirewallRuleSet:
        ips = (set(rules.banned_ips) | {_ip(a) for a in self.add_ips}) - {_ip(a) for a in self.remove_ips}
        nets = (set(rules.banned_prefixes) | {_net(p) for p in self.add_prefixes}) - {
            _net(p) for p in self.remove_prefixes
        }
        ports = (set(rules.banned_ports) | {_port(p) for p in self.add_ports}) - {
            _port(p) for p in self.remove_ports
        }
        out = replace(rules, banned_ips=frozenset(ips), banned_prefixes=frozenset(nets), banned_ports=frozenset(ports))
        if self.rate is not None:
            packets, seconds = self.rate
            if packets == 0 and seconds == 0:
                out = replace(out, packet_threshold=None, time_threshold=None)
            else:
                out = replace(out, packet_threshold=int(packets), time_threshold=float(seconds))
        return out


def parse_rules(text: str) -> FirewallRuleSet:
    """Parse ``ban-ip``, ``ban-prefix``, ``ban-port``, ``rate`` and ``count`` directives."""
    ips, nets, ports = set(), set(), set()
    threshold = window = None
    count_all = True
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, *args = line.split()
        try:
            if word == "ban-ip" and len(args) == 1:
                ips.add(_ip(args[0]))
            elif word == "ban-prefix" and len(args) == 1:
                if "/" not in args[0]:
                    raise FirewallError(f"prefix {args[0]!r} lacks /bits")
                nets.add(_net(args[0]))
            elif word == "ban-port" and len(args) == 1:
                ports.add(_port(args[0]))
            elif word == "rate" and len(args) == 2:
                threshold, window = int(args[0]), float(args[1])
            elif word == "count" and len(args) == 1 and args[0] in ("all", "initiating"):
                count_all = args[0] == "all"
            else:
                raise FirewallError(f"unrecognized directive {line!r}")
        except (FirewallError, ValueError) as exc:
            raise FirewallError(f"rules line {lineno}: {exc}") from None
    return FirewallRuleSet(frozenset(ips), frozenset(nets), frozenset(ports), threshold, window, count_all)


def load_rules(path: str | Path) -> FirewallRuleSet:
    return parse_rules(Path(path).read_text(encoding="utf-8"))


def format_rules(rules: FirewallRuleSet) -> str:
    lines = [f"ban-ip {ip}" for ip in sorted(rules.banned_ips)]
    lines += [f"ban-prefix {net}" for net in sorted(rules.banned_prefixes)]
    lines += [f"ban-port {p}" for p in sorted(rules.banned_ports)]
    if rules.rate_limited:
        lines.append(f"rate {rules.packet_threshold} {rules.time_threshold:g}")
    if not rules.count_all:
        lines.append("count initiating")
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class _SourceLedger:
    lock: threading.Lock = field(default_factory=threading.Lock)
    times: deque = field(default_factory=deque)


class Firewall:
    """Thread-safe rule checker.

    Rules live in an immutable (epoch, ruleset) snapshot that updates replace
    wholesale, so each check sees exactly one epoch.  The rate ledger keeps at
    most `packet_threshold` timestamps per source.
    """

    def __init__(self, rules: FirewallRuleSet | None = None):
        self._snapshot = (0, rules or FirewallRuleSet())
        self._update_lock = threading.Lock()
        self._ledger: dict[str, _SourceLedger] = {}
        self._ledger_lock = threading.Lock()

    @property
    def epoch(self) -> int:
        return self._snapshot[0]

    @property
    def rules(self) -> FirewallRuleSet:
        return self._snapshot[1]

    def snapshot(self) -> tuple[int, FirewallRuleSet]:
        return self._snapshot

    def check(self, src_ip: str, dst_port: int, now: float, initiating: bool = True) -> Allow | Block:
        return self.check_with_epoch(src_ip, dst_port, now, initiating)[1]

    def check_with_epoch(self, src_ip: str, dst_port: int, now: float, initiating: bool = True):
        epoch, rules = self._snapshot
        addr = _ip(src_ip)
        # Every packet enters the rate ledger, banned or not, so adding a ban
        # never lowers another packet's count.
        limited = False
        if rules.rate_limited and (rules.count_all or initiating):
            limited = self._rate_exceeded(str(addr), now, rules.packet_threshold, rules.time_threshold)
        if addr in rules.banned_ips:
            return epoch, Block(BlockReason.BANNED_IP)
        if any(addr in net for net in rules.banned_prefixes):
            return epoch, Block(BlockReason.BANNED_PREFIX)
        if dst_port in rules.banned_ports:
            return epoch, Block(BlockReason.BANNED_PORT)
        if limited:
            return epoch, Block(BlockReason.RATE_LIMIT)
        return epoch, ALLOW

    def _rate_exceeded(self, src: str, now: float, threshold: int, window: float) -> bool:
        with self._ledger_lock:
            entry = self._ledger.get(src)
            if entry is None:
                entry = self._ledger[src] = _SourceLedger()
        with entry.lock:
            q = entry.times
            if q.maxlen != threshold:
                q = entry.times = deque(q, maxlen=threshold)
            # Blocked when `threshold` earlier packets already sit in (now - window, now].
            exceeded = len(q) == threshold and q[0] > now - window
            q.append(now)
            return exceeded

    def expire(self, now: float) -> int:
        """Drop ledger entries for sources idle longer than the window."""
        _, rules = self._snapshot
        if not rules.rate_limited:
            with self._ledger_lock:
                n = len(self._ledger)
                self._ledger.clear()
                return n
        with self._ledger_lock:
            stale = [s for s, e in self._ledger.items() if not e.times or e.times[-1] <= now - rules.time_threshold]
            for s in stale:
                del self._ledger[s]
            return len(stale)

    def ledger_size(self) -> int:
        with self._ledger_lock:
            return sum(len(e.times) for e in self._ledger.values())

    def replace_rules(self, rules: FirewallRuleSet) -> int:
        with self._update_lock:
            epoch = self._snapshot[0] + 1
            self._snapshot = (epoch, rules)
            return epoch

    def update_rules(self, delta: RuleDelta) -> int:
        with self._update_lock:
            epoch, rules = self._snapshot
            new = delta.apply(rules)
            self._snapshot = (epoch + 1, new)
            return epoch + 1

