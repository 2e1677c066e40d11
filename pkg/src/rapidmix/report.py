"""report.md and figures built only from the CSV files in an output directory."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

TABLE_ROWS = 40


def read_csv(path: Path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), list(reader)


def _table(header: list[str], rows: list[dict]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in rows[:TABLE_ROWS]:
        lines.append("| " + " | ".join(r[h] for h in header) + " |")
    if len(rows) > TABLE_ROWS:
        lines.append(f"\n({len(rows) - TABLE_ROWS} more rows in the CSV)")
    return "\n".join(lines)


def _f(x: str) -> float:
    return float(x)


def _positive(xs, ys):
    pts = [(x, y) for x, y in zip(xs, ys) if y > 0]
    return [p[0] for p in pts], [p[1] for p in pts]


def plot_scan(rows, out: Path) -> None:
    series = defaultdict(list)
    for r in rows:
        series[r["measure"]].append((_f(r["l"]), _f(r["value"])))
    fig, ax = plt.subplots(figsize=(6, 4))
    for m, pts in sorted(series.items()):
        xs, ys = _positive(*zip(*pts))
        if xs:
            ax.semilogy(xs, ys, "o-", label=m)
    ax.set_xlabel("separation l")
    ax.set_ylabel("value")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


def plot_xy(rows, x: str, ys: list[str], out: Path, logy: bool = False, xlabel=None) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for y in ys:
        xs, vs = [_f(r[x]) for r in rows], [_f(r[y]) for r in rows]
        if logy:
            xs, vs = _positive(xs, vs)
            ax.semilogy(xs, vs, "o-", label=y, ms=3)
        else:
            ax.plot(xs, vs, "o-", label=y, ms=3)
    ax.set_xlabel(xlabel or x)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)


# csv stem -> (title, plotter or None)
PLOTS = {
    "clustering_scan": ("Clustering measures against separation",
                        lambda rows, out: plot_scan(rows, out)),
    "davies_gap": ("Davies spectral gap against system size",
                   lambda rows, out: plot_xy(rows, "n", ["gap"], out)),
    "mlsi": ("MLSI estimates against system size",
             lambda rows, out: plot_xy(rows, "n", ["gap", "mlsi_estimate"], out)),
    "mixing_trajectory": ("Distance to the Gibbs state along a trajectory",
                          lambda rows, out: plot_xy(rows, "t", ["trace_distance", "rel_entropy"], out, logy=True)),
    "tensorization": ("Approximate tensorization slack against overlap distance",
                      lambda rows, out: plot_xy(sorted(rows, key=lambda r: _f(r["l"])), "l", ["slack"], out)),
    "c_of_l": ("Empirical C(L)", lambda rows, out: plot_xy(rows, "L", ["c_hat"], out)),
}

ORDER = ["verify", "clustering_scan", "clustering_fits", "davies_gap", "mlsi", "mixing", "mixing_trajectory",
         "tensorization", "c_of_l"]


def build_report(out_dir: str | Path) -> list[Path]:
    """Write report.md and PNG figures; returns the paths written."""
    out_dir = Path(out_dir)
    figs = out_dir / "figures"
    csvs = {p.stem: p for p in sorted(out_dir.glob("*.csv"))}
    stems = [s for s in ORDER if s in csvs] + [s for s in csvs if s not in ORDER]
    written = []
    parts = ["# rapidmix report", "", "Every number below is copied from a CSV file in this directory.", ""]
    for stem in stems:
        header, rows = read_csv(csvs[stem])
        title = PLOTS.get(stem, (stem.replace("_", " "), None))[0]
        parts += [f"## {title}", "", f"Source: `{csvs[stem].name}`", ""]
        if stem in PLOTS and rows:
            figs.mkdir(exist_ok=True)
            png = figs / f"{stem}.png"
            PLOTS[stem][1](rows, png)
            written.append(png)
            parts += [f"![{stem}](figures/{png.name})", ""]
        parts += [_table(header, rows) if rows else "(empty)", ""]
    md = out_dir / "report.md"
    md.write_text("\n".join(parts))
    written.append(md)
    return written
