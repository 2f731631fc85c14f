"""
Command-line entry point: derive, simulate, detect, resolve, report.

Exit status: detect returns 0/1/2 for none/SUSPICIOUS/ALARM. Usage errors
exit 64, invalid input 65, unreadable or missing files 66.
"""

import argparse
import datetime as dt
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .clients import read_request_log
from .consensus import read_archive
from .detector import DetectorConfig, detect
from .errors import ConfigError
from .popularity import build_index, read_onion_list, resolve
from .protocol import REPLICAS, OnionAddress, descriptor_id, period_start, time_period
from .report import load_detect_json, load_popularity_json, write_report
from .simulator import SimConfig, load_config, run_simulation

EX_USAGE = 64
EX_DATAERR = 65
EX_NOINPUT = 66

DAY = 86400
_DEFAULTS = DetectorConfig()


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _date(text):
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad date {text!r}, want YYYY-MM-DD") from None


def _onion(text):
    try:
        return OnionAddress.from_text(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _epoch(date):
    return int(dt.datetime(date.year, date.month, date.day, tzinfo=dt.timezone.utc).timestamp())


def _iso(t):
    return dt.datetime.fromtimestamp(t, dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# ------------------------------------------------------------------ commands

def cmd_derive(args):
    period = time_period(_epoch(args.date), args.onion)
    start = period_start(period, args.onion)
    print(f"onion {args.onion.text}.onion  period {period}  "
          f"valid {_iso(start)} .. {_iso(start + DAY)}")
    for replica in REPLICAS:
        print(f"replica {replica}: {descriptor_id(args.onion, period, replica).text}")
    return 0


def cmd_simulate(args):
    data = load_config(args.config)
    data["seed"] = args.seed
    config = SimConfig.from_mapping(data)
    out = run_simulation(config).write(args.out)
    truth = json.loads((out / "ground_truth.json").read_text())
    print(f"wrote {out}/archive.jsonl ({config.duration} snapshots), requests.csv "
          f"({truth['requests']['total']} requests), ground_truth.json")
    return 0


_THRESHOLDS = (
    # flag, config field, type, help
    ("--z", "z_threshold", float, "frequency rule: flag counts above mu + z*sigma"),
    ("--ratio-warn", "ratio_warn", int, "avg_dist/distance ratio giving a NOTE"),
    ("--ratio-alarm", "ratio_alarm", int, "avg_dist/distance ratio giving an ALARM"),
    ("--min-occurrences", "preposition_min_occurrences", int,
     "fresh-key responsible periods before a preposition finding"),
    ("--lookback", "change_lookback", int, "seconds before upload to look for key changes"),
    ("--switch-threshold", "switch_count_threshold", int,
     "fingerprint switches within the window to flag"),
    ("--switch-window", "switch_window", int, "sliding window for switch counting, seconds"),
    ("--min-run", "consecutive_min_run", int, "consecutive responsible periods to flag"),
)


def _detector_config(args):
    data = {}
    if args.config:
        raw = load_config(args.config)
        data = dict(raw.get("detector", raw))  # bare table or a [detector] section
    for _, name, _, _ in _THRESHOLDS:
        value = getattr(args, name)
        if value is not None:
            data[name] = value
    if args.fresh_window is not None:
        data["fresh_window"] = tuple(args.fresh_window)
    return DetectorConfig.from_mapping(data)


def cmd_detect(args):
    config = _detector_config(args)
    if args.to < getattr(args, "from"):
        raise ConfigError({"to": "must not be before --from"})
    archive = read_archive(args.archive)
    start = _epoch(getattr(args, "from"))
    end = _epoch(args.to) + DAY  # --to is inclusive
    report = detect(archive, args.onion, start, end, config)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.dumps())
        (out / "report.txt").write_text(report.to_text())
    if not args.quiet:
        sys.stdout.write(report.to_text())
    return report.exit_status()


def cmd_resolve(args):
    if args.to < getattr(args, "from"):
        raise ConfigError({"to": "must not be before --from"})
    with open(args.onions, encoding="utf-8") as fh:
        onions = read_onion_list(fh)
    with open(args.log, encoding="utf-8", newline="") as fh:
        log = read_request_log(fh)
    index = build_index(onions, getattr(args, "from"), args.to)
    table = resolve(log, index)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "popularity.csv", "w", encoding="utf-8", newline="") as fh:
        table.write_csv(fh)
    (out / "popularity.json").write_text(table.dumps())
    print(f"{len(onions)} onions, {len(index)} descriptor IDs; "
          f"{table.resolved} of {table.total} requests resolved to {len(table.rows)} services")
    for rank, count, onion in table.rows[:args.top]:
        print(f"{rank:>4} {count:>8}  {onion}")
    return 0


def cmd_report(args):
    if not args.detect and not args.popularity:
        raise UsageError("report needs --detect and/or --popularity")
    det = load_detect_json(args.detect) if args.detect else None
    pop = load_popularity_json(args.popularity) if args.popularity else None
    files = write_report(args.out, det, pop, top=args.top, figures=not args.no_figures)
    for f in files:
        print(f)
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="hsdirwatch", description=__doc__.strip().splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    d = sub.add_parser("derive", help="descriptor IDs of an onion for a date")
    d.add_argument("--onion", type=_onion, required=True, help="16-character onion address")
    d.add_argument("--date", type=_date, required=True, help="UTC date, YYYY-MM-DD")
    d.set_defaults(func=cmd_derive)

    s = sub.add_parser("simulate", help="run the directory simulator")
    s.add_argument("--config", required=True, help="simulation config (.toml or .json)")
    s.add_argument("--seed", type=int, required=True, help="random seed (required)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("detect", help="tracking analysis for one onion")
    t.add_argument("--archive", required=True, help="consensus archive, JSON lines")
    t.add_argument("--onion", type=_onion, required=True, help="onion address to analyse")
    t.add_argument("--from", type=_date, required=True, help="first UTC date (inclusive)")
    t.add_argument("--to", type=_date, required=True, help="last UTC date (inclusive)")
    t.add_argument("--config", help="detector thresholds (.toml or .json); flags override it")
    for flag, name, typ, text in _THRESHOLDS:
        t.add_argument(flag, dest=name, type=typ, default=None, metavar="N",
                       help=f"{text} (default: {getattr(_DEFAULTS, name)})")
    t.add_argument("--fresh-window", nargs=2, type=int, metavar=("LO", "HI"), default=None,
                   help="first-seen age band at upload counting as freshly placed, seconds "
                        f"(default: {' '.join(map(str, _DEFAULTS.fresh_window))})")
    t.add_argument("--out", help="directory for report.json and report.txt")
    t.add_argument("-q", "--quiet", action="store_true", help="do not print the text report")
    t.set_defaults(func=cmd_detect)

    r = sub.add_parser("resolve", help="rank services from a request log")
    r.add_argument("--log", required=True, help="request log CSV")
    r.add_argument("--onions", required=True, help="onion list, one address per line")
    r.add_argument("--from", type=_date, required=True, help="first UTC date (inclusive)")
    r.add_argument("--to", type=_date, required=True, help="last UTC date (inclusive)")
    r.add_argument("--out", required=True, help="directory for popularity.csv and .json")
    r.add_argument("--top", type=int, default=10, help="rows to print (default: 10)")
    r.set_defaults(func=cmd_resolve)

    m = sub.add_parser("report", help="merge detect and resolve outputs")
    m.add_argument("--detect", help="report.json from detect")
    m.add_argument("--popularity", help="popularity.json from resolve")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--top", type=int, default=20, help="rows in top lists (default: 20)")
    m.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    m.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except ConfigError as exc:
        for name, problem in sorted(exc.problems.items()):
            print(f"hsdirwatch: invalid {name}: {problem}", file=sys.stderr)
        return EX_DATAERR
    except OSError as exc:
        print(f"hsdirwatch: {exc}", file=sys.stderr)
        return EX_NOINPUT
    except (ValueError, LookupError) as exc:
        print(f"hsdirwatch: {exc}", file=sys.stderr)
        return EX_DATAERR


if __name__ == "__main__":
    sys.exit(main())
