"""
Merge a detector report and a popularity table into one summary, with CSV
series and PNG figures for each.
"""

import csv
import json
import math
from collections import Counter
from pathlib import Path

from .errors import InvalidArgument
from .popularity import read_table_json

SEVERITIES = ("NOTE", "SUSPICIOUS", "ALARM")
RULES = ("FREQUENCY", "PREPOSITION", "DISTANCE_RATIO", "SWITCH_COUNT", "CONSECUTIVE")
RATIO_BINS = 8  # decades: [1,10), [10,100), ..., [10^7, inf)


def _ratio_value(r):
    if r == "inf":
        return math.inf
    return float(r)


def ratio_histogram(detect_json):
    """Counts of responsible-slot ratios per decade, plus a bin for distance 0."""
    counts = [0] * RATIO_BINS
    for entry in detect_json.get("timeline", []):
        for rep in entry["replicas"]:
            for slot in rep["hsdirs"]:
                r = _ratio_value(slot["ratio"])
                if math.isinf(r):
                    b = RATIO_BINS - 1
                else:
                    b = min(RATIO_BINS - 1, int(math.log10(r)) if r >= 1 else 0)
                counts[b] += 1
    rows = []
    for b, n in enumerate(counts):
        hi = "inf" if b == RATIO_BINS - 1 else str(10 ** (b + 1))
        rows.append((str(10 ** b) if b else "0", hi, n))
    return rows


def findings_by_rule(detect_json):
    tally = Counter((f["rule"], f["severity"]) for f in detect_json.get("findings", []))
    return [(rule, sev, tally[(rule, sev)]) for rule in RULES for sev in SEVERITIES]


def build_summary(detect_json=None, popularity=None, top=20):
    if detect_json is None and popularity is None:
        raise InvalidArgument("need a detect report, a popularity table, or both")
    out = {}
    if detect_json is not None:
        try:
            out["detection"] = {
                "onion": detect_json["onion"],
                "range": detect_json["range"],
                "summary": detect_json["summary"],
                "top_identities": detect_json["scores"][:top],
                "clusters": detect_json["clusters"],
            }
        except (KeyError, TypeError) as exc:
            raise InvalidArgument(f"not a detect report: missing {exc}") from exc
    if popularity is not None:
        out["popularity"] = {
            "total": popularity.total,
            "resolved": popularity.resolved,
            "unresolved": popularity.unresolved,
            "ambiguous": popularity.ambiguous,
            "unresolved_fraction": (round(popularity.unresolved / popularity.total, 6)
                                    if popularity.total else None),
            "top": [{"rank": r, "count": c, "onion": o} for r, c, o in popularity.rows[:top]],
        }
    if detect_json is not None and popularity is not None:
        target = detect_json["onion"]
        hit = [r for r in popularity.rows if r[2] == target]
        out["target_popularity"] = ({"rank": hit[0][0], "count": hit[0][1]} if hit else None)
    return out


def summary_text(summary):
    lines = []
    det = summary.get("detection")
    if det:
        s = det["summary"]
        lines.append(f"Detection for {det['onion']}.onion: {s['periods']} periods, "
                     f"{s['findings']} findings, max severity {s['max_severity'] or 'none'}")
        for sev in SEVERITIES:
            lines.append(f"  {sev:<10} {s['by_severity'].get(sev, 0)}")
        for ident in det["top_identities"][:5]:
            lines.append(f"  {ident['identity']:<22} score {ident['score']}  "
                         f"{','.join(ident['rules'])}")
    pop = summary.get("popularity")
    if pop:
        if lines:
            lines.append("")
        lines.append(f"Requests: {pop['total']} total, {pop['resolved']} resolved, "
                     f"{pop['unresolved']} unresolved, {pop['ambiguous']} ambiguous")
        lines.append(f"{'#':>4} {'RQSTS':>8}  Addr")
        for row in pop["top"]:
            lines.append(f"{row['rank']:>4} {row['count']:>8}  {row['onion']}")
    if "target_popularity" in summary:
        tp = summary["target_popularity"]
        lines.append("")
        lines.append("Target not seen in request log" if tp is None
                     else f"Target rank {tp['rank']} with {tp['count']} requests")
    return "\n".join(lines) + "\n"


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        w.writerows(rows)


def _figure(path, kind, labels, values, title, xlabel, ylabel):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed metadata so identical inputs give identical bytes
    fig, ax = plt.subplots(figsize=(7, 4), dpi=100)
    if kind == "barh":
        ax.barh(range(len(values)), values, color="#4c72b0")
        ax.set_yticks(range(len(values)))
        ax.set_yticklabels(labels, fontsize=7)
        ax.invert_yaxis()
    else:
        ax.bar(range(len(values)), values, color="#4c72b0")
        ax.set_xticks(range(len(values)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def write_report(out_dir, detect_json=None, popularity=None, top=20, figures=True):
    """Write summary.json/.txt, CSV series and (optionally) PNG figures.

    Returns the list of files written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = build_summary(detect_json, popularity, top)
    written = []

    def emit(name, text):
        (out / name).write_text(text, encoding="utf-8")
        written.append(out / name)

    emit("summary.json", json.dumps(summary, indent=2) + "\n")
    emit("summary.txt", summary_text(summary))

    if detect_json is not None:
        by_rule = findings_by_rule(detect_json)
        _write_csv(out / "findings_by_rule.csv", ["rule", "severity", "count"], by_rule)
        hist = ratio_histogram(detect_json)
        _write_csv(out / "ratio_histogram.csv", ["ratio_from", "ratio_to", "slots"], hist)
        _write_csv(out / "identity_scores.csv",
                   ["identity", "score", "max_severity", "rules", "nicknames"],
                   [(s["identity"], s["score"], s["max_severity"], " ".join(s["rules"]),
                     " ".join(s["nicknames"])) for s in detect_json["scores"]])
        written += [out / "findings_by_rule.csv", out / "ratio_histogram.csv",
                    out / "identity_scores.csv"]
        if figures:
            per_rule = Counter()
            for rule, _, n in by_rule:
                per_rule[rule] += n
            _figure(out / "findings_by_rule.png", "bar", list(RULES),
                    [per_rule[r] for r in RULES], "Findings per rule", "rule", "findings")
            _figure(out / "ratio_histogram.png", "bar",
                    [f"{a}-{b}" for a, b, _ in hist], [n for *_, n in hist],
                    "avg_dist / distance of responsible HSDirs", "ratio", "slots")
            written += [out / "findings_by_rule.png", out / "ratio_histogram.png"]

    if popularity is not None:
        _write_csv(out / "popularity_top.csv", ["rank", "count", "onion"], popularity.rows[:top])
        _write_csv(out / "request_categories.csv", ["category", "count"],
                   [("resolved", popularity.resolved), ("unresolved", popularity.unresolved),
                    ("ambiguous", popularity.ambiguous)])
        written += [out / "popularity_top.csv", out / "request_categories.csv"]
        if figures and popularity.rows:
            rows = popularity.rows[:top]
            _figure(out / "popularity_top.png", "barh", [o for _, _, o in rows],
                    [c for _, c, _ in rows], "Most requested services", "requests", "")
            written.append(out / "popularity_top.png")
    return written


def load_detect_json(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict) or "findings" not in data:
        raise InvalidArgument(f"{path}: not a detect report")
    return data


def load_popularity_json(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{path}: invalid JSON: {exc}") from exc
    return read_table_json(data)
