"""Command-line entry point: ``run`` (full pipeline), ``validate``
(schema and coverage checks only) and ``synth`` (synthetic panel
emission).

Configuration comes from a flat key-value file (``key = value``, full
lines starting with ``#`` are comments); command-line flags override
file values, which override defaults.  Outputs are byte-deterministic
for a given input and configuration: no timestamps, fixed ordering,
fixed float formatting.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import __version__
from .cgo import write_weekly_csv
from .double_sort import double_sort_csv_rows, format_double_sort_table
from .errors import CgolabError, ConfigError
from .fama_macbeth import fm_csv_rows, format_fm_table
from .panel import StockPanel, default_paths, load_panel, save_panel
from .pipeline import PipelineConfig, run_pipeline, worker_count
from .preprocess import UniverseConfig, apply_longevity_filter, fill_missing, monthly_universe
from .proxies import PROXY_NAMES, write_monthly_csv
from .synth import DgpConfig, generate_panel, write_ground_truth_csv

_UNIVERSE_KEYS = {
    "min_history_years": float,
    "min_price": float,
    "exclude_blacklisted": bool,
    "exclude_untradable": bool,
    "winsor_lower": float,
    "winsor_upper": float,
    "max_ffill_gap": int,
    "normalize_features": bool,
}
_PIPELINE_KEYS = {
    "data_dir": str,
    "output_dir": str,
    "sample_start": str,
    "sample_end": str,
    "nw_lag": "nw_lag",
    "proxies": "list",
    "emit_formats": "list",
    "full_grid": bool,
    "dump_monthly": bool,
}


def parse_config_file(path) -> dict[str, str]:
    """Flat ``key = value`` grammar; lines starting with '#' and blank
    lines are ignored."""
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(kind, raw: str):
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse {raw!r} as a boolean")
    if kind == "list":
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    if kind == "nw_lag":
        return "auto" if raw.strip().lower() == "auto" else int(raw)
    return kind(raw)


def assemble_config(flag_values: dict, file_values: dict) -> PipelineConfig:
    """Materialize a PipelineConfig with flag > file > default precedence."""
    merged: dict = {}
    uni: dict = {}
    for key, raw in file_values.items():
        if key in _PIPELINE_KEYS:
            merged[key] = _coerce(_PIPELINE_KEYS[key], raw)
        elif key in _UNIVERSE_KEYS:
            uni[key] = _coerce(_UNIVERSE_KEYS[key], raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for key, value in flag_values.items():
        if value is None:
            continue
        if key in _PIPELINE_KEYS:
            merged[key] = value
        elif key in _UNIVERSE_KEYS:
            uni[key] = value
    merged["universe"] = UniverseConfig(**uni)
    return PipelineConfig(**merged)


def _write_csv(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(",".join(row) + "\n")


def _manifest_lines(config: PipelineConfig, panel: StockPanel, result) -> list[str]:
    lines = [
        f"cgolab_version = {__version__}",
        "",
        "# configuration (all values materialized; flag > file > default)",
    ]
    for f in dataclasses.fields(PipelineConfig):
        value = getattr(config, f.name)
        if f.name == "universe":
            for uf in dataclasses.fields(UniverseConfig):
                lines.append(f"{uf.name} = {getattr(value, uf.name)}")
        elif isinstance(value, tuple):
            lines.append(f"{f.name} = {','.join(map(str, value))}")
        else:
            lines.append(f"{f.name} = {value}")
    lines += [
        f"nw_lag_resolved = {result.nw_lag}",
        f"threads = {worker_count()}",
        "",
        "# input after preprocessing",
        f"stocks = {len(panel.stocks)}",
        f"weeks = {len(panel.weeks)}",
        f"months = {len(panel.months)}",
        f"days = {len(panel.daily_return.index)}",
        f"formation_months = {len(result.formation_months)}"
        f" ({result.formation_months[0]} .. {result.formation_months[-1]})",
    ]
    for key, value in sorted(result.proxies.metadata.items()):
        lines.append(f"{key} = {value}")
    lines.append("")
    lines.append("# skipped months")
    for name in config.proxies:
        skipped = result.tables[name].skipped
        detail = "; ".join(f"{m} ({reason})" for m, reason in skipped) if skipped else "none"
        lines.append(f"double_sort {name}: {detail}")
    for name in config.proxies:
        for spec_id, months in sorted(result.fm_skipped[name].items()):
            detail = ", ".join(str(m) for m in months) if months else "none"
            lines.append(f"fm {name} spec({spec_id}): {detail}")
    if result.warnings:
        lines.append("")
        lines.append("# warnings")
        lines.extend(result.warnings)
    return lines


def cmd_run(args) -> int:
    stage = "config"
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        flag_values = {
            "data_dir": args.data_dir,
            "output_dir": args.out,
            "sample_start": args.sample_start,
            "sample_end": args.sample_end,
            "nw_lag": args.nw_lag,
            "proxies": tuple(args.proxies.split(",")) if args.proxies else None,
            "full_grid": True if args.full_grid else None,
            "dump_monthly": True if args.dump_monthly else None,
        }
        config = assemble_config(flag_values, file_values)

        stage = "panel_store"
        panel = load_panel(config.data_dir)

        stage = "preprocess"
        panel = fill_missing(panel, config.universe)
        panel = apply_longevity_filter(panel, config.universe)

        stage = "pipeline"
        result = run_pipeline(panel, config)

        stage = "report"
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []

        rows = [("month", "p10", "p50", "p90")]
        for _, r in result.percentiles.iterrows():
            rows.append((str(r["month"]), repr(r["p10"]), repr(r["p50"]), repr(r["p90"])))
        _write_csv(out / "cgo_percentiles.csv", rows)
        written.append("cgo_percentiles.csv")

        for name in config.proxies:
            table = result.tables[name]
            if "text" in config.emit_formats:
                (out / f"doublesort_{name}.txt").write_text(
                    format_double_sort_table(table, full_grid=config.full_grid), encoding="utf-8"
                )
                written.append(f"doublesort_{name}.txt")
            if "csv" in config.emit_formats:
                _write_csv(out / f"doublesort_{name}.csv",
                           double_sort_csv_rows(table, full_grid=config.full_grid))
                written.append(f"doublesort_{name}.csv")
            if "text" in config.emit_formats:
                (out / f"fm_{name}.txt").write_text(
                    format_fm_table(name, result.fm[name], nw_lag=result.nw_lag), encoding="utf-8"
                )
                written.append(f"fm_{name}.txt")
            if "csv" in config.emit_formats:
                _write_csv(out / f"fm_{name}.csv", fm_csv_rows(name, result.fm[name]))
                written.append(f"fm_{name}.csv")
            if config.dump_monthly:
                rows = [("month", "spec", "column", "coefficient", "n_obs")]
                for spec_id, res in sorted(result.fm[name].items()):
                    for month in res.monthly.index:
                        n = str(int(res.n_obs.loc[month])) if res.n_obs is not None else ""
                        for col in res.monthly.columns:
                            rows.append((str(month), str(spec_id), col,
                                         repr(float(res.monthly.loc[month, col])), n))
                _write_csv(out / f"fm_monthly_{name}.csv", rows)
                written.append(f"fm_monthly_{name}.csv")

        (out / "run_manifest.txt").write_text(
            "\n".join(_manifest_lines(config, panel, result)) + "\n", encoding="utf-8"
        )
        written.append("run_manifest.txt")
        print(f"wrote {len(written)} files to {out}")
        return 0
    except CgolabError as exc:
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return 1


def cmd_validate(args) -> int:
    try:
        file_values = parse_config_file(args.config) if args.config else {}
        flag_values = {"data_dir": args.data_dir}
        config = assemble_config(flag_values, file_values)

        data_dir = Path(config.data_dir)
        paths = default_paths(data_dir)
        for role, path in paths.items():
            if not path.exists():
                print(f"error [panel_store]: missing {path}", file=sys.stderr)
                return 1
            n = sum(1 for _ in open(path, encoding="utf-8")) - 1
            print(f"{role}: {path.name}, {n} rows")

        panel = load_panel(data_dir)
        print(f"stocks: {len(panel.stocks)}")
        if len(panel.weeks):
            print(f"weekly calendar: {panel.weeks[0].date()} .. {panel.weeks[-1].date()} ({len(panel.weeks)} weeks)")
        if len(panel.months):
            print(f"monthly calendar: {panel.months[0]} .. {panel.months[-1]} ({len(panel.months)} months)")
        if len(panel.daily_return.index):
            d = panel.daily_return.index
            print(f"daily calendar: {d[0].date()} .. {d[-1].date()} ({len(d)} days)")
        print(f"factor coverage: {panel.factors.index[0]} .. {panel.factors.index[-1]}")

        empty = []
        for month in panel.months:
            size = len(monthly_universe(panel, month, config.universe))
            if size == 0:
                empty.append(str(month))
        if empty:
            print(f"warning: empty universe in {len(empty)} months: {', '.join(empty)}")
        print("OK")
        return 0
    except CgolabError as exc:
        print(f"error [panel_store]: {exc}", file=sys.stderr)
        return 1


def cmd_synth(args) -> int:
    try:
        betas = (0.0,) * 7
        if args.betas:
            parts = [float(x) for x in args.betas.split(",")]
            if len(parts) != 7:
                raise ConfigError("--betas needs 7 comma-separated values")
            betas = tuple(parts)
        config = DgpConfig(
            n_stocks=args.stocks,
            n_months=args.months,
            seed=args.seed,
            noise_sd=args.noise_sd,
            listing_stagger=args.stagger,
            start_month=args.start_month,
            planted_eq3_betas=betas,
            with_daily=not args.no_daily,
        )
        panel, truth = generate_panel(config)
        out = Path(args.out)
        paths = save_panel(panel, out)
        write_ground_truth_csv(truth, out / "ground_truth.csv")
        names = sorted(p.name for p in out.iterdir() if p.suffix == ".csv")
        print(f"wrote {', '.join(names)} to {out}")
        return 0
    except CgolabError as exc:
        print(f"error [synth_market]: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cgolab",
        description="Overhang/risk-proxy research pipeline over CSV stock panels",
    )
    parser.add_argument("--version", action="version", version=f"cgolab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full pipeline and emit tables")
    run.add_argument("--config", help="flat key-value config file")
    run.add_argument("--data-dir", help="directory with the five input CSVs")
    run.add_argument("--out", help="output directory")
    run.add_argument("--sample-start", help="first sample month, YYYY-MM")
    run.add_argument("--sample-end", help="last sample month, YYYY-MM")
    run.add_argument("--proxies", help=f"comma-separated subset of {','.join(PROXY_NAMES)}")
    run.add_argument("--nw-lag", type=lambda s: _coerce("nw_lag", s), help="Newey-West lag or 'auto'")
    run.add_argument("--full-grid", action="store_true", help="print/export all 25 cells")
    run.add_argument("--dump-monthly", action="store_true", help="per-month coefficient dump")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="schema and coverage checks, no estimation")
    val.add_argument("--config", help="flat key-value config file")
    val.add_argument("--data-dir", help="directory with the five input CSVs")
    val.set_defaults(func=cmd_validate)

    syn = sub.add_parser("synth", help="write a synthetic panel with known ground truth")
    syn.add_argument("--out", required=True, help="output directory for the CSVs")
    syn.add_argument("--seed", type=int, default=0)
    syn.add_argument("--stocks", type=int, default=100)
    syn.add_argument("--months", type=int, default=60)
    syn.add_argument("--noise-sd", type=float, default=1.0)
    syn.add_argument("--stagger", type=int, default=0)
    syn.add_argument("--start-month", default="2000-01")
    syn.add_argument("--betas", help="7 comma-separated planted regression coefficients")
    syn.add_argument("--no-daily", action="store_true", help="skip daily returns and factors")
    syn.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
