"""Batch command-line front end.

One command per invocation: decompose, compare, backtest, simulate, oracle or
diagnose.  Input is a CSV with named columns (mapping by header, not
position); rows are taken in file order as the time index.  Reports are
emitted as text tables, CSV, or json-lines with a versioned schema field.

Exit codes: 0 success, 2 input error, 3 estimation error, 4 degenerate
inference escalated by --strict.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .backtests import basel_traffic_light, make_hits, nz_test, regression_backtest, vqr_backtest
from .decomposition import decompose, split_mcb
from .errors import EstimationError, InputError
from .inference import test_dsc_zero, test_equal_dsc, test_equal_mcb, test_equal_score, test_mcb_zero
from .longrun import HacOptions
from .scoring import CHECK_LOSS, ScoringSpec, identification
from .simlab import (
    MEAN_SCENARIO_IDS,
    QUANTILE_SCENARIO_IDS,
    StudyConfig,
    mean_scenario,
    quantile_scenario,
    rejection_rows_to_csv,
    run_rejection_study,
)

SCHEMA_VERSION = "1"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ESTIMATION = 3
EXIT_DEGENERATE = 4


@dataclass
class RunConfig:
    """Resolved invocation: one command plus its column mapping and options."""

    command: str
    input: str | None = None
    y_col: str | None = None
    x_cols: tuple = ()
    extra_cols: tuple = ()
    loss: str = "se"
    alpha: float | None = None
    hac_kernel: str = "qs"
    hac_bandwidth: object = "andrews"
    level: float = 0.1
    seed: int = 0
    reps: int = 1000
    out: str | None = None
    fmt: str = "text"
    strict: bool = False
    scenarios: tuple = ()
    k_grid: tuple = (0.0,)
    T: int = 500
    tests: tuple = ("equal_mcb", "equal_dsc", "dm")
    n_jobs: int = 1
    plot: str | None = None

    def scoring_spec(self) -> ScoringSpec:
        if self.loss == "se":
            return ScoringSpec.squared_error()
        if self.loss == "qlike":
            return ScoringSpec.qlike()
        if self.loss == "check":
            if self.alpha is None:
                raise InputError("the check loss needs --alpha")
            return ScoringSpec.check_loss(self.alpha)
        raise InputError(f"unknown loss {self.loss!r}")

    def hac(self) -> HacOptions:
        return HacOptions(kernel=self.hac_kernel, bandwidth=self.hac_bandwidth)


def _parse_bandwidth(text: str):
    if text == "andrews":
        return "andrews"
    if text.startswith("fixed:"):
        try:
            return float(text.split(":", 1)[1])
        except ValueError as exc:
            raise InputError(f"bad fixed bandwidth {text!r}") from exc
    raise InputError("--hac-bandwidth must be 'andrews' or 'fixed:<value>'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scoredecomp", description=__doc__)
    parser.add_argument("--command", required=True, choices=["decompose", "compare", "backtest", "simulate", "oracle", "diagnose"])
    parser.add_argument("--input", help="input CSV path")
    parser.add_argument("--y-col", help="realization column name")
    parser.add_argument("--x-cols", default="", help="comma-separated forecast column names")
    parser.add_argument("--extra-cols", default="", help="comma-separated extra recalibration covariates")
    parser.add_argument("--loss", default="se", choices=["se", "qlike", "check"])
    parser.add_argument("--alpha", type=float, default=None, help="quantile level for check loss / backtests")
    parser.add_argument("--hac-kernel", default="qs", choices=["qs", "bartlett"])
    parser.add_argument("--hac-bandwidth", default="andrews", help="'andrews' or 'fixed:<value>'")
    parser.add_argument("--level", type=float, default=0.1, help="nominal level for simulate")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--reps", type=int, default=1000)
    parser.add_argument("--out", default=None, help="output file path (stdout when omitted)")
    parser.add_argument("--format", dest="fmt", default="text", choices=["text", "csv", "json-lines"])
    parser.add_argument("--strict", action="store_true", help="escalate degenerate-inference warnings to exit code 4")
    parser.add_argument("--scenario", default="", help="comma-separated scenario ids (e.g. m2a,q2) for simulate/oracle")
    parser.add_argument("--k-grid", default="0", help="comma-separated misspecification values")
    parser.add_argument("--T", type=int, default=500, help="sample size per replication")
    parser.add_argument("--tests", default="equal_mcb,equal_dsc,dm")
    parser.add_argument("--n-jobs", type=int, default=1)
    parser.add_argument("--plot", default=None, help="write an MCB-DSC SVG plot to this path (decompose/compare)")
    return parser


def _split(text: str) -> tuple:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def config_from_args(args) -> RunConfig:
    return RunConfig(
        command=args.command,
        input=args.input,
        y_col=args.y_col,
        x_cols=_split(args.x_cols),
        extra_cols=_split(args.extra_cols),
        loss=args.loss,
        alpha=args.alpha,
        hac_kernel=args.hac_kernel,
        hac_bandwidth=_parse_bandwidth(args.hac_bandwidth),
        level=args.level,
        seed=args.seed,
        reps=args.reps,
        out=args.out,
        fmt=args.fmt,
        strict=args.strict,
        scenarios=_split(args.scenario),
        k_grid=tuple(float(v) for v in _split(args.k_grid)) or (0.0,),
        T=args.T,
        tests=_split(args.tests),
        n_jobs=args.n_jobs,
        plot=args.plot,
    )


# ---------------------------------------------------------------------------
# input handling
# ---------------------------------------------------------------------------


def load_columns(path: str, columns) -> dict:
    """Read the named columns from a CSV, rejecting NaN/inf cells with row diagnostics."""
    try:
        # round_trip parsing: re-ingesting our own full-precision output
        # reproduces bit-identical numbers
        frame = pd.read_csv(path, float_precision="round_trip")
    except FileNotFoundError as exc:
        raise InputError(f"input file {path!r} not found") from exc
    except Exception as exc:  # malformed CSV
        raise InputError(f"could not parse {path!r}: {exc}") from exc
    out = {}
    for name in columns:
        if name not in frame.columns:
            raise InputError(f"column {name!r} not in {path!r} (have: {', '.join(frame.columns)})")
        values = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=float)
        bad = np.nonzero(~np.isfinite(values))[0]
        if bad.size:
            raise InputError(
                f"column {name!r} has {bad.size} non-numeric/NaN/inf cells; first offending data row "
                f"{int(bad[0]) + 1}"
            )
        out[name] = values
    return out


# ---------------------------------------------------------------------------
# report writers
# ---------------------------------------------------------------------------


def _fmt_value(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_report(rows, columns, fmt, stream, schema: str):
    if fmt == "csv":
        stream.write(",".join(columns) + "\n")
        for row in rows:
            stream.write(",".join(_fmt_value(row.get(c, "")) for c in columns) + "\n")
    elif fmt == "json-lines":
        for row in rows:
            payload = {"schema": f"scoredecomp/{schema}.v{SCHEMA_VERSION}"}
            payload.update({c: row.get(c, None) for c in columns})
            stream.write(json.dumps(payload, allow_nan=False, sort_keys=False) + "\n")
    else:
        widths = {c: max(len(c), *(len(_short(row.get(c, ""))) for row in rows)) if rows else len(c) for c in columns}
        stream.write("  ".join(c.ljust(widths[c]) for c in columns) + "\n")
        for row in rows:
            stream.write("  ".join(_short(row.get(c, "")).ljust(widths[c]) for c in columns) + "\n")


def _short(v):
    if isinstance(v, float):
        return format(v, ".6g")
    return str(v)


def stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_decompose(config: RunConfig):
    spec = config.scoring_spec()
    if not config.x_cols:
        raise InputError("decompose needs --x-cols")
    data = load_columns(config.input, (config.y_col, *config.x_cols, *config.extra_cols))
    y = data[config.y_col]
    extra = np.column_stack([data[c] for c in config.extra_cols]) if config.extra_cols else None
    rows = []
    notes = []
    decs = []
    for col in config.x_cols:
        x = data[col]
        dec = decompose(spec, x, y, extra)
        umcb, cmcb = split_mcb(spec, x, y)
        rep_mcb = test_mcb_zero(spec, x, y, extra, config.hac())
        rep_dsc = test_dsc_zero(spec, x, y, extra, config.hac())
        notes.extend(rep_mcb.notes + rep_dsc.notes)
        decs.append((col, dec))
        rows.append(
            {
                "model": col,
                "score": dec.s_bar,
                "mcb": dec.mcb,
                "dsc": dec.dsc,
                "unc": dec.unc,
                "umcb": umcb,
                "cmcb": cmcb,
                "p_mcb_zero": rep_mcb.p_value,
                "p_dsc_zero": rep_dsc.p_value,
            }
        )
    columns = ["model", "score", "mcb", "dsc", "unc", "umcb", "cmcb", "p_mcb_zero", "p_dsc_zero"]
    if config.plot:
        emit_mcb_dsc_plot(decs, config.plot)
    return rows, columns, "decompose", notes


def cmd_compare(config: RunConfig):
    spec = config.scoring_spec()
    if len(config.x_cols) != 2:
        raise InputError("compare needs exactly two --x-cols")
    data = load_columns(config.input, (config.y_col, *config.x_cols, *config.extra_cols))
    y = data[config.y_col]
    extra = np.column_stack([data[c] for c in config.extra_cols]) if config.extra_cols else None
    x1, x2 = data[config.x_cols[0]], data[config.x_cols[1]]
    dec1 = decompose(spec, x1, y, extra)
    dec2 = decompose(spec, x2, y, extra)
    rep_dm = test_equal_score(spec, x1, x2, y, extra, extra, config.hac())
    rep_mcb = test_equal_mcb(spec, x1, x2, y, extra, extra, config.hac())
    rep_dsc = test_equal_dsc(spec, x1, x2, y, extra, extra, config.hac())
    notes = rep_dm.notes + rep_mcb.notes + rep_dsc.notes
    row = {
        "model_1": config.x_cols[0],
        "model_2": config.x_cols[1],
        "d_score": dec1.s_bar - dec2.s_bar,
        "p_dm": rep_dm.p_value,
        "stars_dm": stars(rep_dm.p_value),
        "d_mcb": dec1.mcb - dec2.mcb,
        "p_equal_mcb": rep_mcb.p_value,
        "stars_mcb": stars(rep_mcb.p_value),
        "d_dsc": dec1.dsc - dec2.dsc,
        "p_equal_dsc": rep_dsc.p_value,
        "stars_dsc": stars(rep_dsc.p_value),
    }
    columns = list(row.keys())
    if config.plot:
        emit_mcb_dsc_plot([(config.x_cols[0], dec1), (config.x_cols[1], dec2)], config.plot)
    return [row], columns, "compare", notes


def cmd_backtest(config: RunConfig):
    if config.alpha is None:
        raise InputError("backtest needs --alpha")
    if not config.x_cols:
        raise InputError("backtest needs --x-cols")
    data = load_columns(config.input, (config.y_col, *config.x_cols))
    y = data[config.y_col]
    rows = []
    notes = []
    for col in config.x_cols:
        x = data[col]
        hits = make_hits(x, y, config.alpha)
        zone, p_basel = basel_traffic_light(hits.v.size, config.alpha, hits.n_hits)
        reports = {
            "uc": regression_backtest(hits, "UC"),
            "cc": regression_backtest(hits, "CC"),
            "dq": regression_backtest(hits, "DQ"),
            "dqx": regression_backtest(hits, "DQX", x=x),
            "nz": nz_test(hits, x, config.hac()),
            "vqr": vqr_backtest(x, y, config.alpha, config.hac()),
        }
        for rep in reports.values():
            notes.extend(rep.notes)
        rows.append(
            {
                "model": col,
                "p_uc": reports["uc"].p_value,
                "p_basel": p_basel,
                "basel_zone": zone,
                "p_cc": reports["cc"].p_value,
                "p_nz": reports["nz"].p_value,
                "p_vqr": reports["vqr"].p_value,
                "p_dq": reports["dq"].p_value,
                "p_dqx": reports["dqx"].p_value,
                "hit_freq": hits.hit_freq,
            }
        )
    columns = ["model", "p_uc", "p_basel", "basel_zone", "p_cc", "p_nz", "p_vqr", "p_dq", "p_dqx", "hit_freq"]
    return rows, columns, "backtest", notes


def _resolve_scenarios(config: RunConfig):
    scenarios = []
    for sid in config.scenarios:
        for k in config.k_grid:
            if sid.startswith("m"):
                row = sid[1:]
                if row not in MEAN_SCENARIO_IDS:
                    raise InputError(f"unknown scenario id {sid!r}")
                scenarios.append(mean_scenario(row, k))
            elif sid.startswith("q"):
                row = sid[1:]
                if row not in QUANTILE_SCENARIO_IDS:
                    raise InputError(f"unknown scenario id {sid!r}")
                if config.alpha is None:
                    raise InputError("quantile scenarios need --alpha")
                scenarios.append(quantile_scenario(row, k, config.alpha))
            else:
                raise InputError(f"scenario ids start with 'm' or 'q', got {sid!r}")
    if not scenarios:
        raise InputError("simulate/oracle need --scenario")
    return scenarios


def cmd_simulate(config: RunConfig):
    scenarios = _resolve_scenarios(config)
    study = StudyConfig(
        scenarios=scenarios,
        T=config.T,
        reps=config.reps,
        level=config.level,
        tests=config.tests,
        seed=config.seed,
        n_jobs=config.n_jobs,
        hac=config.hac(),
    )
    rows = run_rejection_study(study)
    columns = ["scenario", "k", "alpha", "test", "T", "reps", "rate", "mc_se"]
    return rows, columns, "simulate", []


def cmd_oracle(config: RunConfig):
    scenarios = _resolve_scenarios(config)
    rows = []
    for scenario in scenarios:
        oracle = scenario.oracle()
        rows.append(
            {
                "scenario": scenario.table_id,
                "k": scenario.k,
                "alpha": "" if scenario.alpha is None else scenario.alpha,
                "mcb1": oracle.mcb1,
                "dsc1": oracle.dsc1,
                "mcb2": oracle.mcb2,
                "dsc2": oracle.dsc2,
                "unc": oracle.unc,
            }
        )
    columns = ["scenario", "k", "alpha", "mcb1", "dsc1", "mcb2", "dsc2", "unc"]
    return rows, columns, "oracle", []


def cmd_diagnose(config: RunConfig):
    spec = config.scoring_spec()
    if not config.x_cols:
        raise InputError("diagnose needs --x-cols")
    data = load_columns(config.input, (config.y_col, *config.x_cols, *config.extra_cols))
    y = data[config.y_col]
    extra = np.column_stack([data[c] for c in config.extra_cols]) if config.extra_cols else None
    rows = []
    for col in config.x_cols:
        x = data[col]
        dec = decompose(spec, x, y, extra)
        if spec.family == CHECK_LOSS:
            resid = identification(spec, dec.fitted, y)
        else:
            resid = y - dec.fitted
        for xf, rr in zip(x, resid):
            rows.append({"model": col, "forecast": float(xf), "residual": float(rr)})
    columns = ["model", "forecast", "residual"]
    return rows, columns, "diagnose", []


# ---------------------------------------------------------------------------
# MCB-DSC plot (deterministic SVG)
# ---------------------------------------------------------------------------


def emit_mcb_dsc_plot(named_decomps, path: str) -> None:
    """Scatter of (MCB, DSC) per model with slope-one iso-score lines.

    One iso-line is drawn through each distinct average score; models with
    equal scores share a line by the identity S = MCB - DSC + UNC.  Byte
    output is deterministic given the inputs.
    """
    width, height = 640.0, 480.0
    ml, mr, mt, mb = 70.0, 20.0, 20.0, 50.0
    pw, ph = width - ml - mr, height - mt - mb

    pts = [(name, dec.mcb, dec.dsc, dec.s_bar, dec.unc) for name, dec in named_decomps]
    xmax = max([p[1] for p in pts] + [1e-12]) * 1.25
    ymax = max([p[2] for p in pts] + [1e-12]) * 1.25

    def sx(v):
        return ml + pw * v / xmax

    def sy(v):
        return mt + ph * (1.0 - v / ymax)

    out = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">')
    out.append('<rect width="100%" height="100%" fill="white"/>')
    out.append(
        f'<line x1="{ml:.2f}" y1="{mt + ph:.2f}" x2="{ml + pw:.2f}" y2="{mt + ph:.2f}" stroke="black" stroke-width="1"/>'
    )
    out.append(f'<line x1="{ml:.2f}" y1="{mt:.2f}" x2="{ml:.2f}" y2="{mt + ph:.2f}" stroke="black" stroke-width="1"/>')
    out.append(
        f'<text x="{ml + pw / 2:.2f}" y="{height - 12:.2f}" text-anchor="middle" font-family="monospace" font-size="13">MCB (miscalibration)</text>'
    )
    out.append(
        f'<text x="16" y="{mt + ph / 2:.2f}" text-anchor="middle" font-family="monospace" font-size="13" transform="rotate(-90 16 {mt + ph / 2:.2f})">DSC (discrimination)</text>'
    )

    # iso-score lines DSC = MCB + (UNC - S); models with equal S share one line
    seen = []
    for name, mcb, dsc, s, unc in pts:
        c = unc - s
        if any(abs(c - c0) <= 1e-12 * max(1.0, abs(c)) for c0 in seen):
            continue
        seen.append(c)
        x0, x1v = 0.0, xmax
        y0, y1v = c, xmax + c
        seg = _clip_segment(x0, y0, x1v, y1v, xmax, ymax)
        if seg is None:
            continue
        (cx0, cy0), (cx1, cy1) = seg
        out.append(
            f'<line x1="{sx(cx0):.2f}" y1="{sy(cy0):.2f}" x2="{sx(cx1):.2f}" y2="{sy(cy1):.2f}" '
            f'stroke="#999999" stroke-width="0.8" stroke-dasharray="4,3"/>'
        )
        out.append(
            f'<text x="{sx(cx1) - 4:.2f}" y="{sy(cy1) + 12:.2f}" text-anchor="end" font-family="monospace" '
            f'font-size="10" fill="#777777">S={s:.4f}</text>'
        )

    for name, mcb, dsc, s, unc in pts:
        out.append(f'<circle cx="{sx(mcb):.2f}" cy="{sy(dsc):.2f}" r="4" fill="#1f5fbf"/>')
        out.append(
            f'<text x="{sx(mcb) + 6:.2f}" y="{sy(dsc) - 6:.2f}" font-family="monospace" font-size="12">{name}</text>'
        )

    for frac in (0.0, 0.5, 1.0):
        xv = frac * xmax
        yv = frac * ymax
        out.append(
            f'<text x="{sx(xv):.2f}" y="{mt + ph + 16:.2f}" text-anchor="middle" font-family="monospace" font-size="10">{xv:.4f}</text>'
        )
        out.append(
            f'<text x="{ml - 6:.2f}" y="{sy(yv) + 3:.2f}" text-anchor="end" font-family="monospace" font-size="10">{yv:.4f}</text>'
        )
    out.append("</svg>")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


def _clip_segment(x0, y0, x1, y1, xmax, ymax):
    """Clip the slope-one segment to the plotting rectangle [0,xmax] x [0,ymax]."""
    c = y0 - x0
    lo_x = max(0.0, -c)
    hi_x = min(xmax, ymax - c)
    if lo_x > hi_x:
        return None
    return (lo_x, lo_x + c), (hi_x, hi_x + c)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "decompose": cmd_decompose,
    "compare": cmd_compare,
    "backtest": cmd_backtest,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "diagnose": cmd_diagnose,
}


def run(config: RunConfig, stdout=None) -> int:
    stdout = stdout if stdout is not None else sys.stdout
    if config.command in ("decompose", "compare", "backtest", "diagnose"):
        if not config.input or not config.y_col:
            raise InputError(f"{config.command} needs --input and --y-col")
    rows, columns, schema, notes = _COMMANDS[config.command](config)
    if config.command == "simulate":
        text = rejection_rows_to_csv(rows)
        if config.out:
            with open(config.out, "w", newline="") as fh:
                fh.write(text)
        else:
            stdout.write(text)
    else:
        if config.out:
            with open(config.out, "w", newline="") as fh:
                write_report(rows, columns, config.fmt, fh, schema)
        else:
            write_report(rows, columns, config.fmt, stdout, schema)
    if notes:
        for note in dict.fromkeys(notes):
            print(f"note: {note}", file=sys.stderr)
        if config.strict:
            return EXIT_DEGENERATE
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = config_from_args(args)
        code = run(config)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except NotImplementedError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return code


if __name__ == "__main__":
    sys.exit(main())
