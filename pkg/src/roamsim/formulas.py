"""Closed-form handover latency and jitter expressions.

All delays are integer microseconds.  The profile's round trips are measured
mobile-side: `home_rtt_us` to the home agent, `corr_rtt_us` to the
correspondent, `home_corr_rtt_us` between home agent and correspondent.
`local_us` is the one-sided local readdressing time.

The binding update with the correspondent runs through the four-message
reachability exchange: the two token-init messages travel in parallel, the
two token replies travel in parallel, then the update itself goes out with
its acknowledgement suppressed.  Each stage costs a one-way leg, which the
half factor converts from the round-trip inputs.  The two max terms are kept
as separate summands on purpose; they mirror the stage structure and the
single division by two happens last, on a sum that is checked to be even.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class DelayProfile:
    local_us: int
    home_rtt_us: int
    corr_rtt_us: int
    home_corr_rtt_us: int | None = None

    def __post_init__(self) -> None:
        for name in ("local_us", "home_rtt_us", "corr_rtt_us"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.home_corr_rtt_us is not None and self.home_corr_rtt_us < 0:
            raise ValueError("home_corr_rtt_us must be >= 0")

    @property
    def hc_rtt(self) -> int:
        """Home-agent/correspondent round trip, approximated by corr_rtt_us
        when the topology does not pin it."""
        if self.home_corr_rtt_us is None:
            return self.corr_rtt_us
        return self.home_corr_rtt_us


def _half_even(total: int) -> int:
    if total % 2:
        raise ValueError(f"odd duration sum {total}; round trips must be even")
    return total // 2


def correspondent_update_exact(p: DelayProfile) -> int:
    """Reachability exchange plus unacknowledged update, stage by stage."""
    stage = max(p.corr_rtt_us, p.hc_rtt + p.home_rtt_us)
    return _half_even(stage + stage + p.corr_rtt_us)


def correspondent_update_approx(p: DelayProfile) -> int:
    """Far-from-home simplification: 3/2 corr round trip + home round trip."""
    return _half_even(3 * p.corr_rtt_us) + p.home_rtt_us


def handoff_time_exact(p: DelayProfile) -> int:
    """Local readdressing + home registration + correspondent update."""
    return p.local_us + p.home_rtt_us + correspondent_update_exact(p)


def handoff_time_approx(p: DelayProfile) -> int:
    """Approximate total: local + 3/2 corr round trip + 2 home round trips."""
    return p.local_us + _half_even(3 * p.corr_rtt_us) + 2 * p.home_rtt_us


def jitter_ratio_exact(p: DelayProfile) -> float:
    """Post-handover to stationary jitter ratio under triangular routing.

    Jitter scales with traversed network length, so forwarding over the
    home-agent detour inflates it by the detour-to-direct length ratio.
    """
    if p.corr_rtt_us == 0:
        raise ZeroDivisionError("corr_rtt_us must be > 0 for a jitter ratio")
    return (p.hc_rtt + p.home_rtt_us) / p.corr_rtt_us


def jitter_ratio_approx(p: DelayProfile) -> float:
    """Ratio with the home-agent/correspondent leg approximated away."""
    if p.corr_rtt_us == 0:
        raise ZeroDivisionError("corr_rtt_us must be > 0 for a jitter ratio")
    return (p.home_rtt_us + p.corr_rtt_us) / p.corr_rtt_us
