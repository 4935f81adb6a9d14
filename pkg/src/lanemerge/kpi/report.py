"""Write KPI tables and figures for a set of simulation logs and reward logs."""

from __future__ import annotations

import csv
import json
import logging
import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ..dqn.agent import read_reward_log, reward_histogram, top_quartile_mass  # noqa: E402
from ..sim.runner import read_log  # noqa: E402
from .metrics import (  # noqa: E402
    compute_ecdf,
    compute_maneuver,
    compute_rtt,
    executed_accelerations,
    fraction_within,
    recommended_accelerations,
    role_ids,
    ticks,
)

log = logging.getLogger(__name__)

HEADLINE_RANGE = (0.0, 2.0)
PNG_META = {"Software": None}


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 9))
    return "" if v is None else v


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=100, metadata=PNG_META)
    plt.close(fig)


def _accel_artifacts(out: Path, runs: dict[str, list[dict]], summary: dict) -> None:
    rec_acc: list[float] = []
    series: dict[str, list[float]] = {}
    for name, records in runs.items():
        rec_acc += recommended_accelerations(records)
        for vid, vals in executed_accelerations(records).items():
            series.setdefault(f"{name}:{vid}", []).extend(vals)
    rows = []
    if rec_acc:
        series = {"recommended:merging": rec_acc, **series}
    for key, vals in series.items():
        rows += [(key, x, p) for x, p in compute_ecdf(vals)]
    _write_csv(out / "accel_ecdf.csv", ["series", "accel_mps2", "cumulative_fraction"], rows)
    headline = fraction_within(rec_acc, *HEADLINE_RANGE) if rec_acc else None
    headline_abs = fraction_within(rec_acc, *HEADLINE_RANGE, absolute=True) if rec_acc else None
    summary["recommended_accel_count"] = len(rec_acc)
    summary["recommended_accel_fraction_0_2"] = headline
    summary["recommended_accel_abs_fraction_0_2"] = headline_abs
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, vals in series.items():
        pts = compute_ecdf(vals)
        ax.step([x for x, _ in pts], [p for _, p in pts], where="post", label=key)
    ax.axvspan(*HEADLINE_RANGE, color="0.9", zorder=0)
    ax.set_xlabel("acceleration [m/s²]")
    ax.set_ylabel("ECDF")
    if headline is not None:
        ax.set_title(f"recommended accel in [0, 2] m/s²: {headline:.1%}")
    ax.legend(fontsize="small")
    _save(fig, out / "accel_ecdf.png")


def _rtt_artifacts(out: Path, runs: dict[str, list[dict]], summary: dict) -> None:
    rows, unmatched = [], []
    for name, records in runs.items():
        res = compute_rtt(records)
        rows += [(name, rid, v) for rid, v in res.samples.items()]
        unmatched += [(name, rid) for rid in res.unmatched]
    _write_csv(out / "rtt.csv", ["run", "recommendation_id", "rtt_ms"], rows)
    _write_csv(out / "rtt_unmatched.csv", ["run", "recommendation_id"], unmatched)
    vals = [v for *_, v in rows]
    summary["rtt_count"] = len(vals)
    summary["rtt_unmatched"] = len(unmatched)
    if vals:
        summary["rtt_ms_min"] = min(vals)
        summary["rtt_ms_mean"] = sum(vals) / len(vals)
        summary["rtt_ms_max"] = max(vals)
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(vals, bins=20, color="tab:blue")
        ax.set_xlabel("recommendation round trip [ms]")
        ax.set_ylabel("count")
        _save(fig, out / "rtt.png")


def _maneuver_artifacts(out: Path, runs: dict[str, list[dict]], summary: dict) -> None:
    rows, gap_rows = [], []
    for name, records in runs.items():
        roles = role_ids(records)
        if "merging" not in roles:
            continue
        man = compute_maneuver(records, roles["merging"])
        rows.append((name, man.vehicle_id, man.completed, man.start_ms, man.end_ms, man.length_s, man.length_m,
                     man.min_gap_preceding_m, man.min_gap_following_m))
        gap_rows += [(name, t, gp, gf) for t, gp, gf in man.gaps]
    _write_csv(out / "maneuver.csv", ["run", "vehicle_id", "completed", "start_ms", "end_ms", "length_s",
                                      "length_m", "min_gap_preceding_m", "min_gap_following_m"], rows)
    _write_csv(out / "inter_vehicle_distance.csv", ["run", "t_ms", "gap_to_preceding_m", "gap_to_following_m"],
               gap_rows)
    summary["maneuvers"] = [
        {"run": r[0], "completed": r[2], "length_s": r[5], "length_m": r[6],
         "min_gap_preceding_m": r[7], "min_gap_following_m": r[8]}
        for r in rows
    ]


def _overlay_artifacts(out: Path, runs: dict[str, list[dict]]) -> None:
    rows = []
    for name, records in runs.items():
        roles = role_ids(records)
        m = roles.get("merging")
        if m is None:
            continue
        for r in ticks(records):
            for v in r["vehicles"]:
                if v["id"] == m:
                    rows.append((name, "executed", m, "", r["t"], v["lat"], v["lon"]))
        for r in records:
            msg = r.get("message") if r.get("event") == "send" else None
            if msg and msg.get("type") == "recommendation" and msg.get("target_uuid") == m:
                for w in msg["waypoints"]:
                    rows.append((name, "recommended", m, msg["recommendation_id"], w["timestamp_ms"], w["lat"], w["lon"]))
    _write_csv(out / "trajectory_overlay.csv", ["run", "role", "vehicle_id", "recommendation_id", "t_ms",
                                                "lat_deg", "lon_deg"], rows)
    if rows:
        fig, ax = plt.subplots(figsize=(5, 6))
        rec = [r for r in rows if r[1] == "recommended"]
        exe = [r for r in rows if r[1] == "executed"]
        if rec:
            ax.scatter([r[6] for r in rec], [r[5] for r in rec], s=2, color="tab:orange", alpha=0.3, label="recommended")
        ax.plot([r[6] for r in exe], [r[5] for r in exe], color="tab:blue", label="executed")
        ax.set_xlabel("longitude [deg]")
        ax.set_ylabel("latitude [deg]")
        ax.ticklabel_format(useOffset=False)
        ax.legend(fontsize="small")
        fig.tight_layout()
        _save(fig, out / "trajectory_overlay.png")


def _reward_artifacts(out: Path, reward_logs: Sequence[Path], summary: dict) -> None:
    rows = []
    fig, ax = plt.subplots(figsize=(6, 4))
    summary["reward_histograms"] = {}
    for path in reward_logs:
        recs = read_reward_log(path)
        by_variant: dict[str, list[float]] = {}
        for r in recs:
            by_variant.setdefault(r.variant, []).append(r.reward)
        for variant, vals in sorted(by_variant.items()):
            hist = reward_histogram(vals, variant)
            rows += [(Path(path).name, variant, lo, hi, n) for lo, hi, n in hist]
            summary["reward_histograms"][f"{Path(path).name}:{variant}"] = {
                "count": len(vals), "top_quartile_mass": top_quartile_mass(hist),
            }
            total = sum(n for *_, n in hist) or 1
            ax.bar([lo for lo, _, _ in hist], [n / total for *_, n in hist], width=hist[0][1] - hist[0][0],
                   align="edge", alpha=0.5, label=variant)
    _write_csv(out / "reward_histogram.csv", ["log", "variant", "bin_low", "bin_high", "count"], rows)
    ax.set_xlabel("assigned reward")
    ax.set_ylabel("fraction of steps")
    ax.legend(fontsize="small")
    _save(fig, out / "reward_histogram.png")


def build_report(
    out_dir: str | Path,
    sim_logs: Sequence[str | Path] = (),
    reward_logs: Sequence[str | Path] = (),
) -> dict:
    """Write every artifact the inputs allow; returns the summary also saved as ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary: dict = {"notes": []}
    runs: dict[str, list[dict]] = {}
    for p in sim_logs:
        p = Path(p)
        if not p.exists():
            summary["notes"].append(f"missing simulation log {p.name}; skipped")
            continue
        runs[p.stem] = read_log(p)
    present = [Path(p) for p in reward_logs if Path(p).exists()]
    for p in reward_logs:
        if not Path(p).exists():
            summary["notes"].append(f"missing reward log {Path(p).name}; skipped")
    if runs:
        _accel_artifacts(out, runs, summary)
        _rtt_artifacts(out, runs, summary)
        _maneuver_artifacts(out, runs, summary)
        _overlay_artifacts(out, runs)
        summary["runs"] = {
            name: next((r["outcome"] for r in recs if r.get("event") == "end"), None) for name, recs in runs.items()
        }
    else:
        summary["notes"].append("no simulation logs; acceleration, RTT, manoeuvre and overlay artifacts skipped")
    if present:
        _reward_artifacts(out, present, summary)
    else:
        summary["notes"].append("no reward logs; reward histogram skipped")
    summary = _clean(summary)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    head = summary.get("recommended_accel_fraction_0_2")
    if head is not None:
        log.info("recommended accelerations in [0, 2] m/s2: %.1f%%", 100 * head)
    return summary


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    return obj
