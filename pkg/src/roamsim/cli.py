"""Command line surface: validate, run, budget, compare.

`run` emits one row per trial and handover with the measured disruption and
traffic statistics.  `budget` prints the closed-form latency and jitter
table for the scenario's geometry without simulating.  `compare` joins the
two and flags rows where the simulated disruption departs from the exact
form by more than the tolerance.  All output is byte-stable for a given
scenario and seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

from . import runner as run_mod
from .formulas import (
    correspondent_update_approx,
    correspondent_update_exact,
    handoff_time_approx,
    handoff_time_exact,
    jitter_ratio_approx,
    jitter_ratio_exact,
)
from .metrics import flow_stats
from .scenario import ParseError, Scenario, ValidationError, load_scenario
from .unicast import Variant

RUN_COLUMNS = ["trial", "variant", "handover_index", "disruption_us", "lost",
               "duplicates", "jitter_mad_before", "jitter_mad_after",
               "rtt_mean_us"]
BUDGET_COLUMNS = ["move_index", "ap", "t_local_us", "home_rtt_us",
                  "corr_rtt_us", "home_corr_rtt_us", "bu_cn_exact_us",
                  "bu_cn_approx_us", "handoff_exact_us", "handoff_approx_us",
                  "jitter_ratio_exact", "jitter_ratio_approx"]
COMPARE_COLUMNS = ["trial", "handover_index", "variant", "disruption_us",
                   "handoff_exact_us", "delta_us", "flagged"]

JITTER_WINDOW_US = 1_000_000


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def _emit(rows: list[dict], columns: list[str], fmt: str, out_path: str | None) -> None:
    if fmt == "json":
        text = json.dumps(rows, sort_keys=True, indent=2) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(c)) for c in columns])
        text = buf.getvalue()
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _run_rows(scenario: Scenario, trials: int, seed: int | None) -> list[dict]:
    rows = []
    for trial in range(trials):
        live = run_mod.run_trial(scenario, trial, seed)
        probe_flow = scenario.probes[0].flow if scenario.probes else None
        for mn_id, mn in live.mobiles.items():
            reports = mn.reports
            for report in reports:
                row = {
                    "trial": trial,
                    "variant": report.variant.value,
                    "handover_index": report.index,
                    "disruption_us": report.disruption_us,
                    "lost": None, "duplicates": None,
                    "jitter_mad_before": None, "jitter_mad_after": None,
                    "rtt_mean_us": None,
                }
                if probe_flow is not None:
                    nexts = [r.l2_up_at for r in reports
                             if r.l2_up_at > report.l2_up_at]
                    end = min(nexts) if nexts else scenario.end_time()
                    col = live.collectors[probe_flow]
                    nominal = live.nominal[probe_flow]
                    span = flow_stats(col, nominal,
                                      window=(report.l2_up_at, end))
                    before = flow_stats(col, nominal,
                                        window=(report.l2_up_at - JITTER_WINDOW_US,
                                                report.l2_up_at),
                                        via_home=False)
                    after = flow_stats(col, nominal,
                                       window=(report.l2_up_at, end),
                                       via_home=True)
                    echo = live.stats(probe_flow + "-echo")
                    row.update({
                        "lost": span.lost,
                        "duplicates": span.duplicates,
                        "jitter_mad_before": before.jitter_mad_us,
                        "jitter_mad_after": (after.jitter_mad_us
                                             if after.received_unique >= 3
                                             else None),
                        "rtt_mean_us": (echo.rtt_mean_us
                                        if echo.rtt_us else None),
                    })
                rows.append(row)
    return rows


def _budget_rows(scenario: Scenario) -> list[dict]:
    live = run_mod.build(scenario, trial=0)
    rows = []
    t_local = run_mod.expected_local_us(scenario.protocol.detection)
    for index, move in enumerate(scenario.moves):
        mn_id = move.mn or next(iter(live.mobiles))
        mn = live.mobiles[mn_id]
        if not mn.correspondents:
            continue
        report = run_mod.HandoverReport(index=index, variant=scenario.protocol.variant,
                                        ap=move.ap, l2_up_at=0)
        profile = live.profile_for(report, mn_id, t_local_us=t_local)
        rows.append({
            "move_index": index,
            "ap": move.ap,
            "t_local_us": profile.local_us,
            "home_rtt_us": profile.home_rtt_us,
            "corr_rtt_us": profile.corr_rtt_us,
            "home_corr_rtt_us": profile.hc_rtt,
            "bu_cn_exact_us": correspondent_update_exact(profile),
            "bu_cn_approx_us": correspondent_update_approx(profile),
            "handoff_exact_us": handoff_time_exact(profile),
            "handoff_approx_us": handoff_time_approx(profile),
            "jitter_ratio_exact": jitter_ratio_exact(profile),
            "jitter_ratio_approx": jitter_ratio_approx(profile),
        })
    return rows


def _compare_rows(scenario: Scenario, trials: int, seed: int | None,
                  tolerance_us: int) -> tuple[list[dict], int]:
    rows = []
    flagged_total = 0
    for trial in range(trials):
        live = run_mod.run_trial(scenario, trial, seed)
        for mn_id, mn in live.mobiles.items():
            for report in mn.reports:
                if report.superseded or report.disruption_us is None:
                    continue
                row = {
                    "trial": trial,
                    "handover_index": report.index,
                    "variant": report.variant.value,
                    "disruption_us": report.disruption_us,
                    "handoff_exact_us": None,
                    "delta_us": None,
                    "flagged": "",
                }
                if report.variant is Variant.MIPV6 and mn.correspondents:
                    profile = live.profile_for(report, mn_id)
                    exact = handoff_time_exact(profile)
                    delta = report.disruption_us - exact
                    flagged = abs(delta) > tolerance_us
                    flagged_total += int(flagged)
                    row.update({"handoff_exact_us": exact, "delta_us": delta,
                                "flagged": "yes" if flagged else "no"})
                rows.append(row)
    return rows, flagged_total


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="roamsim",
        description="IPv6 mobility handover simulator and latency budget tool")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "budget", "compare", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=True, help="scenario file path")
        if name in ("run", "compare"):
            p.add_argument("--trials", type=int, default=None)
            p.add_argument("--seed", type=int, default=None)
        if name == "compare":
            p.add_argument("--tolerance", type=int, default=1,
                           help="flag threshold in microseconds")
        if name != "validate":
            p.add_argument("--out", default=None, help="output path (default stdout)")
            p.add_argument("--format", choices=("csv", "json"), default="csv")
    args = parser.parse_args(argv)

    try:
        scenario = load_scenario(args.scenario)
    except ParseError as err:
        print(f"parse error: {err}", file=sys.stderr)
        return 2
    except ValidationError as err:
        for problem in err.problems:
            print(f"invalid scenario: {problem}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"cannot read scenario: {err}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"ok: {len(scenario.nodes)} nodes, {len(scenario.links)} links, "
              f"{len(scenario.moves)} moves")
        return 0

    trials = getattr(args, "trials", None)
    if trials is None:
        trials = scenario.trials

    if args.command == "run":
        rows = _run_rows(scenario, trials, args.seed)
        _emit(rows, RUN_COLUMNS, args.format, args.out)
        return 0
    if args.command == "budget":
        rows = _budget_rows(scenario)
        _emit(rows, BUDGET_COLUMNS, args.format, args.out)
        return 0
    if args.command == "compare":
        rows, flagged = _compare_rows(scenario, trials, args.seed,
                                      args.tolerance)
        _emit(rows, COMPARE_COLUMNS, args.format, args.out)
        return 0 if flagged == 0 else 1
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
