"""Command-line entry point: ``ppmsdp <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import files
from .attacks import audit_series, audit_targets
from .metrics import align, contingency, linkage_risks, nil, parse_filter, prr
from .model import VARIANTS, InfeasibleReleaseError, PrivacyConfig, SchemaError, format_number
from .pipeline import DataIntegrityError, anonymize
from .taxonomy import TaxonomyError

log = logging.getLogger("ppmsdp")

DP_VARIANTS = ("num", "all")


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    if x is None:
        return "NA"
    return format_number(x) if isinstance(x, (int, float)) else str(x)


def _add_taxonomy(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--taxonomy", required=required, metavar="DIR",
                   help="directory with schema.json and one <attr>.json tree per categorical QID")


# -- anonymize -----------------------------------------------------------

def cmd_anonymize(args) -> int:
    if args.variant in DP_VARIANTS and args.seed is None:
        raise UsageError(f"--seed is required for variant {args.variant!r}")
    schema, trees = files.load_taxonomy_dir(args.taxonomy)
    theta = files.load_theta(args.theta)
    history = files.load_history(args.history, schema) if args.history else files.ReleaseHistory()
    rejections: list = []
    records = files.load_records(args.input, schema, trees, rejections)
    for r in rejections[:10]:
        log.warning("rejected line %d (case %s): %s", r.line, r.case_id or "?", r.reason)
    if rejections:
        log.warning("%d row(s) rejected", len(rejections))
    cfg = PrivacyConfig(k=args.k, theta=theta, epsilon=args.epsilon, lifespan_x=args.lifespan,
                        variant=args.variant, seed=args.seed or 0, workers=args.workers)
    release = anonymize(records, history, cfg, schema, trees)
    files.store_release(args.output, release, schema, emit_groups=args.emit_groups)
    if release.suppressed:
        log.warning("%d case(s) suppressed: %s", len(release.suppressed), ", ".join(release.suppressed[:20]))
    if args.append_history:
        if not args.history:
            raise UsageError("--append-history needs --history")
        config = {"variant": cfg.variant, "k": cfg.k, "epsilon": cfg.epsilon, "seed": cfg.seed,
                  "theta": {"default": theta.default, **theta.overrides}, "lifespan": cfg.lifespan_x,
                  "source": Path(args.input).name}
        files.append_history(args.history, release, schema, config)
    print(f"release {release.index}: {len(release.records)} records written to {args.output}, "
          f"{len(release.suppressed)} suppressed, {len(rejections)} rejected")
    return 0


# -- audit ---------------------------------------------------------------

def _originals(directory: Path, indices: Sequence[int], schema, trees) -> list:
    out = []
    for i in indices:
        p = directory / f"D_{i}.csv"
        if not p.exists():
            raise FileNotFoundError(f"no raw file {p} for release R_{i}")
        out.append(files.load_records(p, schema, trees))
    return out


def cmd_audit(args) -> int:
    history_dir = Path(args.history_dir)
    if not history_dir.is_dir():
        raise FileNotFoundError(f"history directory {history_dir} does not exist")
    schema, trees = files.load_taxonomy_dir(args.taxonomy or history_dir)
    theta = files.load_theta(args.theta)
    history = files.load_history(history_dir, schema)
    if not len(history):
        raise UsageError(f"{history_dir} holds no R_<i>.csv releases")
    rules = files.load_background(args.background) if args.background else None
    releases = history.releases
    targets_file = args.targets or (history_dir / "targets.json" if (history_dir / "targets.json").exists() else None)
    if args.originals:
        originals = _originals(Path(args.originals), [r.index for r in releases], schema, trees)
        report = audit_series(releases, originals, schema, trees, args.k, theta, rules, args.coverage_fraction)
    elif targets_file:
        report = audit_targets(files.load_targets(targets_file), releases, schema, trees, args.k, theta,
                               rules, args.coverage_fraction)
    else:
        raise UsageError("audit needs --originals DIR or a targets file (--targets or HISTORY_DIR/targets.json)")
    print(report.to_text(args.max_findings))
    if args.json:
        files.atomic_write_text(args.json, report.to_json() + "\n")
    if args.figure:
        from .report import plot_audit
        plot_audit(report, args.figure)
    return 0


# -- metrics / signal ----------------------------------------------------

def _paired(args, schema, trees):
    original = files.load_records(args.original, schema, trees)
    anonymized = files.load_release(args.anonymized, schema, index=0)
    oi, ai = align(original, anonymized.records)
    if not oi:
        raise files.FormatError("no anonymized row matches an original case id")
    D = [original[i] for i in oi]
    Dp = [anonymized.records[j] for j in ai]
    groups = [anonymized.groups[j] for j in ai] if anonymized.groups is not None else None
    return D, Dp, groups, len(original) - len(oi)


def cmd_metrics(args) -> int:
    schema, trees = files.load_taxonomy_dir(args.taxonomy)
    D, Dp, groups, dropped = _paired(args, schema, trees)
    rows = [("records", len(D)), ("unmatched_original", dropped),
            ("nil", nil(D, Dp, groups, schema, trees))]
    if not args.skip_linkage:
        record_risk, attr_risk = linkage_risks(D, Dp, schema, trees)
        rows += [("rr", record_risk), ("ar_rev", attr_risk)]
    print("metric\tvalue")
    for name, value in rows:
        print(f"{name}\t{_fmt(value)}")
    return 0


def cmd_signal(args) -> int:
    schema, trees = files.load_taxonomy_dir(args.taxonomy)
    D, Dp, _, _ = _paired(args, schema, trees)
    where = parse_filter(args.filter, schema) if args.filter else None
    before = contingency(D, args.drug_attr, args.drug, args.reaction_attr, args.reaction, where)
    after = contingency(Dp, args.drug_attr, args.drug, args.reaction_attr, args.reaction, where)
    p0, p1 = prr(before), prr(after)
    print("table\ta\tb\tc\td\tprr")
    for name, t, p in (("original", before, p0), ("anonymized", after, p1)):
        print(f"{name}\t{t.a}\t{t.b}\t{t.c}\t{t.d}\t{_fmt(p)}")
    print(f"bias\t{_fmt(None if p0 is None or p1 is None else abs(p0 - p1))}")
    return 0


# -- synth / sweep -------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import SynthConfig, synth_generate, write_series

    raw = files._read_json(args.config) if args.config else {}
    if args.seed is not None:
        raw = {**raw, "seed": args.seed}
    try:
        cfg = SynthConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise files.FormatError(f"{args.config}: {exc}") from None
    series = synth_generate(cfg)
    paths = write_series(args.output, series, cfg)
    print(f"wrote {len(paths)} release file(s) to {args.output}")
    return 0


def cmd_sweep(args) -> int:
    from .pipeline import anonymize_series, precompute_groupings
    from .synth import SynthConfig, synth_generate

    data = Path(args.data) if args.data else None
    if data:
        schema, trees = files.load_taxonomy_dir(data)
        raws = sorted(data.glob("D_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
        if not raws:
            raise UsageError(f"{data} holds no D_<i>.csv files")
        series = [files.load_records(p, schema, trees) for p in raws]
        theta = files.load_theta(args.theta) if args.theta else files.load_theta(data / "theta.json")
    else:
        syn = synth_generate(SynthConfig(releases=args.releases, records_per_release=args.records, seed=args.seed))
        schema, trees, series = syn.schema, syn.trees, syn.releases
        theta = files.load_theta(args.theta) if args.theta else syn.theta
    base = PrivacyConfig(k=args.k, theta=theta, seed=args.seed)
    groupings = precompute_groupings(series, base, schema, trees)
    rows = []
    for variant in args.variants:
        for eps in (args.epsilons if variant in DP_VARIANTS else args.epsilons[:1]):
            cfg = PrivacyConfig(k=args.k, theta=theta, epsilon=eps, variant=variant, seed=args.seed)
            out = anonymize_series(series, cfg, schema, trees, groupings)
            last, raw = out[-1], series[-1]
            oi, ai = align(raw, last.records)
            D, Dp = [raw[i] for i in oi], [last.records[j] for j in ai]
            groups = [last.groups[j] for j in ai]
            record_risk, attr_risk = linkage_risks(D, Dp, schema, trees)
            rows.append({"variant": variant, "epsilon": eps, "nil": nil(D, Dp, groups, schema, trees),
                         "rr": record_risk, "ar_rev": attr_risk})
            log.info("swept %s eps=%s", variant, eps)
    lines = ["variant\tepsilon\tnil\trr\tar_rev"]
    lines += [f"{r['variant']}\t{_fmt(r['epsilon'])}\t{r['nil']:.6f}\t{r['rr']:.6f}\t{r['ar_rev']:.6f}"
              for r in rows]
    text = "\n".join(lines) + "\n"
    if args.output:
        files.atomic_write_text(args.output, text)
    sys.stdout.write(text)
    if args.figure:
        from .report import plot_sweep
        plot_sweep(rows, args.figure)
    return 0


# -- parser --------------------------------------------------------------

def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppmsdp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("anonymize", help="anonymize one release against the published history")
    p.add_argument("input", metavar="IN.csv")
    p.add_argument("-o", "--output", required=True, metavar="OUT.csv")
    p.add_argument("--variant", choices=VARIANTS, default="num")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--theta", required=True, metavar="FILE")
    _add_taxonomy(p)
    p.add_argument("--history", metavar="DIR", help="directory of previously published R_<i>.csv")
    p.add_argument("--append-history", action="store_true", help="add the new release to --history")
    p.add_argument("--seed", type=int)
    p.add_argument("--lifespan", type=_positive_int, help="only the last N releases count as history")
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--emit-groups", action="store_true", help="write a group column")
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("audit", help="simulate backward/forward/latest attacks on a release history")
    p.add_argument("history_dir", metavar="HISTORY_DIR")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--theta", required=True, metavar="FILE")
    p.add_argument("--background", metavar="FILE", help="sensitive value -> QID constraint rules")
    _add_taxonomy(p, required=False)
    p.add_argument("--targets", metavar="FILE", help="attacker targets (default HISTORY_DIR/targets.json)")
    p.add_argument("--originals", metavar="DIR", help="raw D_<i>.csv files; audits every published case")
    p.add_argument("--coverage-fraction", type=float, default=0.05)
    p.add_argument("--max-findings", type=int, default=20)
    p.add_argument("--json", metavar="FILE")
    p.add_argument("--figure", metavar="PNG")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("metrics", help="NIL, RR and AR_rev of an anonymized table")
    p.add_argument("--original", required=True)
    p.add_argument("--anonymized", required=True)
    _add_taxonomy(p)
    p.add_argument("--skip-linkage", action="store_true", help="only compute NIL (linkage is quadratic)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("signal", help="PRR before and after anonymization")
    p.add_argument("--drug", required=True)
    p.add_argument("--reaction", required=True)
    p.add_argument("--filter", help='numeric or categorical filter such as "Weight>50"')
    p.add_argument("--original", required=True)
    p.add_argument("--anonymized", required=True)
    p.add_argument("--drug-attr", default="Drug")
    p.add_argument("--reaction-attr", default="Reaction")
    _add_taxonomy(p)
    p.set_defaults(func=cmd_signal)

    p = sub.add_parser("synth", help="generate a synthetic report series")
    p.add_argument("--config", metavar="FILE")
    p.add_argument("-o", "--output", required=True, metavar="DIR")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="utility/risk of each variant across epsilons")
    p.add_argument("--data", metavar="DIR", help="synth output directory (default: generate one)")
    p.add_argument("--releases", type=_positive_int, default=2)
    p.add_argument("--records", type=_positive_int, default=1000)
    p.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    p.add_argument("--epsilons", nargs="+", type=float, default=[0.1, 1.0, 10.0])
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--theta", metavar="FILE")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", metavar="TSV")
    p.add_argument("--figure", metavar="PNG")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (OSError, ValueError, KeyError, SchemaError, TaxonomyError, InfeasibleReleaseError,
            DataIntegrityError) as exc:
        print(f"ppmsdp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
