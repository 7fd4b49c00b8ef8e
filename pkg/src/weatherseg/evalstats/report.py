"""Fold-report assembly: per-test-set means/stds and p-values, CSV and text."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from ..corpus import DataError
from .experiment import FoldResults
from .stats import SampleSummary, t_test_b_lower

STAT_ROWS = (
    "clear_mean",
    "clear_std",
    "aug_mean",
    "aug_std",
    "weather_mean",
    "weather_std",
    "p_aug_lt_clear",
    "p_weather_lt_aug",
)
STAT_LABELS = {
    "clear_mean": "Clear Mean",
    "clear_std": "Clear Stdev",
    "aug_mean": "Augmented Mean",
    "aug_std": "Augmented Stdev",
    "weather_mean": "Weather Mean",
    "weather_std": "Weather Stdev",
    "p_aug_lt_clear": "Augmented lower loss than clear, p-value",
    "p_weather_lt_aug": "Weather lower loss than augmented, p-value",
}
CAVEAT = ("Note: fold models share training data, so the per-fold losses are not "
          "independent samples; p-values are optimistic.")


@dataclass
class FoldReport:
    columns: tuple[str, ...]
    values: dict[str, dict[str, float]]  # stat -> column -> value

    def row(self, stat: str) -> list[float]:
        return [self.values[stat][c] for c in self.columns]


def build_report(results: dict[str, FoldResults], welch: bool = False) -> FoldReport:
    try:
        clear, aug, weather = results["clear"], results["augmented"], results["weather"]
    except KeyError as e:
        raise ValueError(f"build_report needs all three regimes, missing {e}") from None
    cols = clear.test_sets
    if aug.test_sets != cols or weather.test_sets != cols:
        raise ValueError("regimes were evaluated on different test sets")
    values: dict[str, dict[str, float]] = {s: {} for s in STAT_ROWS}
    for j, col in enumerate(cols):
        summaries = {}
        for key, fr in (("clear", clear), ("aug", aug), ("weather", weather)):
            s = SampleSummary.of(fr.losses[:, j])
            summaries[key] = s
            values[f"{key}_mean"][col] = s.mean
            values[f"{key}_std"][col] = s.std
        values["p_aug_lt_clear"][col] = t_test_b_lower(summaries["clear"], summaries["aug"], welch).p_value
        values["p_weather_lt_aug"][col] = t_test_b_lower(summaries["aug"], summaries["weather"], welch).p_value
    return FoldReport(tuple(cols), values)


def report_csv(report: FoldReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("stat",) + report.columns)
    for stat in STAT_ROWS:
        w.writerow([stat] + [repr(float(v)) for v in report.row(stat)])
    return buf.getvalue()


def write_report(report: FoldReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(report_csv(report))


def read_report(path) -> FoldReport:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise DataError(f"{path}: {e}") from e
    if not rows or rows[0][:1] != ["stat"]:
        raise DataError(f"{path}: missing 'stat' header")
    cols = tuple(rows[0][1:])
    values = {}
    for line_no, row in enumerate(rows[1:], start=2):
        if len(row) != len(cols) + 1:
            raise DataError(f"{path}:{line_no}: expected {len(cols) + 1} fields, got {len(row)}")
        try:
            values[row[0]] = {c: float(v) for c, v in zip(cols, row[1:])}
        except ValueError as e:
            raise DataError(f"{path}:{line_no}: {e}") from e
    missing = [s for s in STAT_ROWS if s not in values]
    if missing:
        raise DataError(f"{path}: missing stat rows {', '.join(missing)}")
    return FoldReport(cols, values)


def format_p(p: float) -> str:
    return "<0.0001" if p < 1e-4 else f"{p:.5f}"


def render_table(report: FoldReport) -> str:
    """Aligned text table; means/stds at 4 decimals, p-values at 5."""
    header = [""] + list(report.columns)
    body = []
    for stat in STAT_ROWS:
        fmt = format_p if stat.startswith("p_") else (lambda v: f"{v:.4f}")
        body.append([STAT_LABELS[stat]] + [fmt(v) for v in report.row(stat)])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = []
    for r in [header] + body:
        cells = [r[0].ljust(widths[0])] + [c.rjust(widths[i]) for i, c in enumerate(r) if i]
        lines.append("  ".join(cells).rstrip())
    lines.append("")
    lines.append(CAVEAT)
    return "\n".join(lines) + "\n"
