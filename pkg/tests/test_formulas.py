import random

import pytest

from roamsim.formulas import (
    DelayProfile,
    correspondent_update_approx,
    correspondent_update_exact,
    handoff_time_approx,
    handoff_time_exact,
    jitter_ratio_approx,
    jitter_ratio_exact,
)

MS = 1_000


class TestHandoffExact:
    def test_worked_example(self):
        p = DelayProfile(local_us=5 * MS, home_rtt_us=80 * MS,
                         corr_rtt_us=40 * MS, home_corr_rtt_us=40 * MS)
        # 5 + 80 + (120 + 120 + 40)/2 = 225 ms
        assert handoff_time_exact(p) == 225 * MS

    def test_all_zero(self):
        assert handoff_time_exact(DelayProfile(0, 0, 0, 0)) == 0

    def test_agent_on_direct_path_collapses_max(self):
        # home leg shorter than the direct correspondent path
        p = DelayProfile(local_us=1 * MS, home_rtt_us=2 * MS,
                         corr_rtt_us=40 * MS, home_corr_rtt_us=10 * MS)
        assert handoff_time_exact(p) == 1 * MS + 2 * MS + (3 * 40 * MS) // 2

    def test_correspondent_stage_example(self):
        p = DelayProfile(local_us=0, home_rtt_us=160 * MS,
                         corr_rtt_us=80 * MS, home_corr_rtt_us=80 * MS)
        assert correspondent_update_exact(p) == 280 * MS

    def test_near_home_limit(self):
        # zero home leg and equal legs: 3/2 of the correspondent round trip
        t = 50 * MS
        p = DelayProfile(local_us=0, home_rtt_us=0, corr_rtt_us=t,
                         home_corr_rtt_us=t)
        assert correspondent_update_exact(p) == (3 * t) // 2

    def test_missing_home_corr_defaults_to_corr(self):
        p = DelayProfile(local_us=0, home_rtt_us=10 * MS, corr_rtt_us=40 * MS)
        q = DelayProfile(local_us=0, home_rtt_us=10 * MS, corr_rtt_us=40 * MS,
                         home_corr_rtt_us=40 * MS)
        assert handoff_time_exact(p) == handoff_time_exact(q)

    def test_odd_sum_rejected(self):
        with pytest.raises(ValueError):
            handoff_time_exact(DelayProfile(0, 0, 1, 1))


class TestHandoffApprox:
    def test_worked_example(self):
        p = DelayProfile(local_us=5 * MS, home_rtt_us=80 * MS,
                         corr_rtt_us=40 * MS)
        assert handoff_time_approx(p) == 225 * MS

    def test_zero_home_round_trip(self):
        p = DelayProfile(local_us=7 * MS, home_rtt_us=0, corr_rtt_us=40 * MS)
        assert handoff_time_approx(p) == 7 * MS + 60 * MS

    def test_equals_exact_on_subdomain(self):
        rng = random.Random(4242)
        for _ in range(10_000):
            corr = 2 * rng.randrange(0, 200_000)
            home = 2 * rng.randrange(0, 200_000)
            if corr > home + corr:          # impossible, kept for clarity
                continue
            local = rng.randrange(0, 100_000)
            p = DelayProfile(local, home, corr, home_corr_rtt_us=corr)
            assert handoff_time_approx(p) == handoff_time_exact(p)

    def test_differs_when_agent_near_direct_path(self):
        p = DelayProfile(local_us=0, home_rtt_us=2 * MS, corr_rtt_us=40 * MS,
                         home_corr_rtt_us=10 * MS)
        assert handoff_time_approx(p) > handoff_time_exact(p)


def test_monotone_in_every_argument():
    rng = random.Random(7)
    for _ in range(2_000):
        base = DelayProfile(rng.randrange(0, 50_000),
                            2 * rng.randrange(0, 50_000),
                            2 * rng.randrange(0, 50_000),
                            2 * rng.randrange(0, 50_000))
        bumped = [
            DelayProfile(base.local_us + 1000, base.home_rtt_us,
                         base.corr_rtt_us, base.home_corr_rtt_us),
            DelayProfile(base.local_us, base.home_rtt_us + 2000,
                         base.corr_rtt_us, base.home_corr_rtt_us),
            DelayProfile(base.local_us, base.home_rtt_us,
                         base.corr_rtt_us + 2000, base.home_corr_rtt_us),
            DelayProfile(base.local_us, base.home_rtt_us,
                         base.corr_rtt_us, base.home_corr_rtt_us + 2000),
        ]
        for p in bumped:
            assert handoff_time_exact(p) >= handoff_time_exact(base)
        assert handoff_time_approx(bumped[0]) >= handoff_time_approx(base)


class TestJitterRatios:
    def test_symmetric_triangle_doubles(self):
        t = 40 * MS
        p = DelayProfile(0, home_rtt_us=t, corr_rtt_us=t, home_corr_rtt_us=t)
        assert jitter_ratio_exact(p) == 2.0
        assert jitter_ratio_approx(p) == 2.0

    def test_agent_on_direct_path(self):
        t = 40 * MS
        p = DelayProfile(0, home_rtt_us=0, corr_rtt_us=t, home_corr_rtt_us=t)
        assert jitter_ratio_exact(p) == 1.0

    def test_zero_corr_round_trip_rejected(self):
        p = DelayProfile(0, 0, 0, 0)
        with pytest.raises(ZeroDivisionError):
            jitter_ratio_exact(p)
        with pytest.raises(ZeroDivisionError):
            jitter_ratio_approx(p)

    def test_approx_pins_home_corr_to_corr(self):
        p = DelayProfile(0, home_rtt_us=30 * MS, corr_rtt_us=40 * MS,
                         home_corr_rtt_us=40 * MS)
        assert jitter_ratio_exact(p) == jitter_ratio_approx(p)
        q = DelayProfile(0, home_rtt_us=30 * MS, corr_rtt_us=40 * MS,
                         home_corr_rtt_us=10 * MS)
        assert jitter_ratio_exact(q) != jitter_ratio_approx(q)


def test_negative_durations_rejected():
    with pytest.raises(ValueError):
        DelayProfile(-1, 0, 0, 0)
    with pytest.raises(ValueError):
        DelayProfile(0, 0, 0, -2)
