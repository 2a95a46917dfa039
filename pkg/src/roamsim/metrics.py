"""Traffic measurement: CBR probe, per-flow statistics, percentiles.

The probe sends numbered, time-stamped packets at a constant interval; a
reflector echoes each one.  Loss, duplicates, inter-arrival jitter and the
disruption interval are computed from the forward stream at its receiver,
round-trip times from the echo stream at the sender.

Two jitter statistics are kept: the mean absolute deviation of the
inter-arrival time from its nominal value, and an exponentially smoothed
estimate of consecutive inter-arrival differences.  The disruption interval
is the longest inter-receive gap minus the nominal interval, the natural
reading of a loss-dominated outage on a constant-rate stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EmptySampleError(ValueError):
    pass


class ZeroBaselineError(ValueError):
    """Baseline jitter is exactly 0; amplification needs noisy links."""


@dataclass
class ProbeConfig:
    interval_us: int = 15_000          # typical trigger 10 to 20 ms
    payload_len: int = 32
    start_us: int = 0
    stop_us: int = 1_000_000
    reflect: bool = True
    flow: str = "probe"

    def __post_init__(self) -> None:
        if self.interval_us <= 0:
            raise ValueError("interval must be > 0")


class FlowCollector:
    """Raw per-flow event log; statistics are derived afterwards."""

    def __init__(self, flow: str) -> None:
        self.flow = flow
        self.sends: list[tuple[int, int]] = []            # (seq, t)
        self.deliveries: list[tuple[int, int, bool]] = []  # (seq, t, via_home)
        self.rtts: list[tuple[int, int]] = []              # (seq, rtt_us)
        self.first_seen: dict[int, int] = {}
        self.duplicate_times: list[int] = []

    def on_send(self, seq: int, t: int) -> None:
        self.sends.append((seq, t))

    def on_deliver(self, seq: int, t: int, via_home: bool = False) -> None:
        self.deliveries.append((seq, t, via_home))
        if seq in self.first_seen:
            self.duplicate_times.append(t)
        else:
            self.first_seen[seq] = t

    def on_rtt(self, seq: int, rtt_us: int) -> None:
        self.rtts.append((seq, rtt_us))


@dataclass
class FlowStats:
    sent: int
    received: int
    received_unique: int
    lost: int
    duplicates: int
    rtt_us: list[int]
    interarrival_us: list[int]
    disruption_interval_us: int
    jitter_mad_us: float
    jitter_smoothed_us: float
    nominal_interval_us: int

    @property
    def rtt_mean_us(self) -> float:
        return float(np.mean(self.rtt_us)) if self.rtt_us else float("nan")


def flow_stats(col: FlowCollector, nominal_interval_us: int,
               window: tuple[int, int] | None = None,
               via_home: bool | None = None) -> FlowStats:
    """Derive statistics, optionally restricted to an arrival-time window
    and to one routing flavour (direct vs. home-agent detour)."""
    sends = col.sends
    if window is not None:
        t0, t1 = window
        sends = [(s, t) for s, t in sends if t0 <= t < t1]
    sent_seqs = {s for s, _ in sends}

    arrivals = []
    received = 0
    duplicates = 0
    seen: set[int] = set()
    for seq, t, flavor in col.deliveries:
        if window is not None and not (window[0] <= t < window[1]):
            continue
        if via_home is not None and flavor != via_home:
            continue
        received += 1
        if seq in seen:
            duplicates += 1
        else:
            seen.add(seq)
            arrivals.append(t)

    unique_in_scope = len(sent_seqs & seen) if window else len(seen)
    lost = len(sent_seqs) - unique_in_scope

    arrivals.sort()
    gaps = np.diff(arrivals) if len(arrivals) > 1 else np.array([], dtype=int)
    disruption = int(max(0, gaps.max() - nominal_interval_us)) if gaps.size else 0
    deviations = np.abs(gaps - nominal_interval_us) if gaps.size else gaps
    jitter_mad = float(deviations.mean()) if gaps.size else 0.0

    smoothed = 0.0
    for d in deviations:
        smoothed += (float(d) - smoothed) / 16.0

    rtts = [r for _, r in col.rtts]
    return FlowStats(
        sent=len(sends),
        received=received,
        received_unique=unique_in_scope,
        lost=lost,
        duplicates=duplicates,
        rtt_us=rtts,
        interarrival_us=[int(g) for g in gaps],
        disruption_interval_us=disruption,
        jitter_mad_us=jitter_mad,
        jitter_smoothed_us=smoothed,
        nominal_interval_us=nominal_interval_us,
    )


def percentile(samples, p: float) -> float:
    """Nearest-rank percentile; p=0 returns the minimum."""
    values = sorted(samples)
    if not values:
        raise EmptySampleError("no samples")
    if not 0 <= p <= 100:
        raise ValueError(f"percentile {p} out of [0, 100]")
    if p == 0:
        return values[0]
    import math
    rank = math.ceil(p / 100.0 * len(values))
    return values[rank - 1]


def jitter_amplification(before: FlowStats, after: FlowStats) -> float:
    """Ratio of detour-window jitter to stationary jitter (MAD form)."""
    if before.jitter_mad_us == 0:
        raise ZeroBaselineError("stationary jitter is 0; measure with epsilon > 0")
    return after.jitter_mad_us / before.jitter_mad_us


class ProbeDriver:
    """Constant-bit-rate sender hooked to a node's data-path policy.

    `send_fn(seq, sent_at, payload)` is supplied by the owning node agent
    and is responsible for addressing and routing; the driver only keeps
    the clock grid and the send log.
    """

    def __init__(self, net, cfg: ProbeConfig, send_fn, collector: FlowCollector):
        self.net = net
        self.cfg = cfg
        self.send_fn = send_fn
        self.collector = collector
        self._seq = 0
        net.queue.schedule(cfg.start_us, self._tick)

    def _tick(self) -> None:
        now = self.net.now
        if now >= self.cfg.stop_us:
            return
        seq = self._seq
        self._seq += 1
        self.collector.on_send(seq, now)
        self.send_fn(seq, now, bytes(self.cfg.payload_len))
        self.net.queue.schedule(now + self.cfg.interval_us, self._tick)
