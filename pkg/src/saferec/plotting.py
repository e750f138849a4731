"""Deterministic SVG line charts of sweep results."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

_RC = {"svg.hashsalt": "saferec", "svg.fonttype": "none", "path.simplify": False}


@dataclass
class PlotSpec:
    """What to draw.

    Parameters
    ----------
    x, y : str
        Result columns for the axes.
    group_by : list of str
        One line per distinct combination of these columns.
    diagonal : bool
        Draw the ``y = x`` reference line.
    name : str, optional
        File stem; defaults to ``"{y}_vs_{x}"``.
    """

    x: str
    y: str
    group_by: tuple[str, ...] = ()
    diagonal: bool = False
    name: str | None = None
    title: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "PlotSpec":
        gb = d.get("group_by") or ()
        if isinstance(gb, str):
            gb = (gb,)
        return cls(x=d["x"], y=d["y"], group_by=tuple(gb), diagonal=bool(d.get("diagonal", False)),
                   name=d.get("name"), title=d.get("title"))

    @property
    def stem(self) -> str:
        return self.name or f"{self.y}_vs_{self.x}"


def _check_columns(df: pd.DataFrame, spec: PlotSpec) -> None:
    for col in (spec.x, spec.y, *spec.group_by):
        if col not in df.columns:
            raise KeyError(f"unknown column {col!r}; available columns: {', '.join(map(str, df.columns))}")


def plot(results, spec: PlotSpec | dict, out_dir: str | Path) -> list[Path]:
    """Render ``spec`` from a results table (DataFrame or CSV path) to SVG.

    Rows sharing ``(group, x)`` are averaged. Output is byte-identical for
    identical input.
    """
    df = pd.read_csv(results) if isinstance(results, (str, Path)) else results
    if isinstance(spec, dict):
        spec = PlotSpec.from_dict(spec)
    if len(df) == 0:
        raise ValueError("results are empty")
    _check_columns(df, spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    data = df[[spec.x, spec.y, *spec.group_by]].copy()
    data[spec.x] = pd.to_numeric(data[spec.x], errors="coerce")
    data[spec.y] = pd.to_numeric(data[spec.y], errors="coerce")
    data = data.dropna(subset=[spec.x, spec.y])

    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        if spec.group_by:
            groups = data.groupby(list(spec.group_by), sort=True, dropna=False)
        else:
            groups = [((), data)]
        for key, g in groups:
            key = key if isinstance(key, tuple) else (key,)
            m = g.groupby(spec.x, sort=True)[spec.y].mean()
            label = ", ".join(f"{c}={v}" for c, v in zip(spec.group_by, key)) or None
            ax.plot(m.index.to_numpy(), m.to_numpy(), marker="o", label=label)
        if spec.diagonal and len(data):
            lo = float(min(data[spec.x].min(), data[spec.y].min(), 0.0))
            hi = float(max(data[spec.x].max(), data[spec.y].max(), 1.0))
            ax.plot([lo, hi], [lo, hi], linestyle="--", color="grey", linewidth=1, label="y = x")
        ax.set_xlabel(spec.x)
        ax.set_ylabel(spec.y)
        if spec.title:
            ax.set_title(spec.title)
        if spec.group_by or spec.diagonal:
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / f"{spec.stem}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return [path]


SWEEP_PLOTS = (
    PlotSpec("target_reduction", "achieved_reduction", ("strategy", "beta"), diagonal=True, name="reduction"),
    PlotSpec("target_reduction", "ndcg", ("strategy", "beta"), name="ndcg"),
    PlotSpec("target_reduction", "recall", ("strategy", "beta"), name="recall"),
    PlotSpec("target_reduction", "mean_set_size", ("strategy", "beta"), name="set_size"),
)
GROUP_PLOTS = (
    PlotSpec("target_reduction", "achieved_reduction", ("group", "strategy"), diagonal=True, name="group_reduction"),
)


def sweep_plots(results: pd.DataFrame, groups: pd.DataFrame | None, out_dir: str | Path) -> list[Path]:
    """Standard figure set for a sweep: metric vs target reduction."""
    paths = []
    for spec in SWEEP_PLOTS:
        paths += plot(results, spec, out_dir)
    if groups is not None and len(groups):
        for spec in GROUP_PLOTS:
            paths += plot(groups, spec, out_dir)
    return paths
