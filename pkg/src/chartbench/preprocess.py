"""Offline chart preprocessing.

Re-plots a gold table as a minimal chart (the positive sample), builds a
value-shuffled negative, and stacks a row/column banner above chart images.
Every step is deterministic given its seeds.
"""
from __future__ import annotations

import json
import random
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib.backends.backend_agg import FigureCanvasAgg  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
from PIL import Image as PILImage  # noqa: E402
from PIL import ImageDraw, ImageFont  # noqa: E402

from .imaging import Image  # noqa: E402
from .io_utils import atomic_write_text  # noqa: E402
from .table import Table  # noqa: E402

CHART_TYPES = ("pie", "bar", "line")
SPEC_SCHEMA_VERSION = 1
DEFAULT_SIZE = (640, 480)
MIN_CANVAS = (160, 120)

# Tableau-style 12-color cycle
PALETTE = (
    (31, 119, 180),
    (255, 127, 14),
    (44, 160, 44),
    (214, 39, 40),
    (148, 103, 189),
    (140, 86, 75),
    (227, 119, 194),
    (127, 127, 127),
    (188, 189, 34),
    (23, 190, 207),
    (174, 199, 232),
    (255, 187, 120),
)

_SHUFFLE_RETRIES = 16
_FONT_PATH = Path(matplotlib.get_data_path()) / "fonts" / "ttf" / "DejaVuSans.ttf"
_BANNER_FONT_SIZE = 14
_BANNER_PAD = 6
_render_lock = threading.Lock()


class PreprocessError(ValueError):
    pass


class NonNumericCell(PreprocessError):
    pass


class PieShapeError(PreprocessError):
    pass


class TooFewValues(PreprocessError):
    pass


class CanvasTooSmall(PreprocessError):
    pass


# ---------------------------------------------------------------------------
# chart specs


@dataclass(frozen=True)
class ChartSpec:
    chart_type: str
    series: tuple  # ((name, ((label, value), ...)), ...)
    palette: tuple
    title: Optional[str] = None
    orientation: str = "vertical"
    width: int = DEFAULT_SIZE[0]
    height: int = DEFAULT_SIZE[1]

    def __post_init__(self):
        if self.chart_type not in CHART_TYPES:
            raise ValueError(f"unsupported chart type {self.chart_type!r}")
        if self.orientation not in ("vertical", "horizontal"):
            raise ValueError(f"bad orientation {self.orientation!r}")
        labels = {tuple(lbl for lbl, _ in pts) for _, pts in self.series}
        if len(labels) > 1:
            raise ValueError("all series must share one label sequence")
        if self.chart_type == "pie":
            if len(self.series) != 1:
                raise PieShapeError("a pie chart has exactly one series")
            values = [v for _, v in self.series[0][1]]
            if any(v < 0 for v in values) or not any(v > 0 for v in values):
                raise PieShapeError("pie values must be >= 0 with at least one > 0")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lbl for lbl, _ in self.series[0][1]) if self.series else ()

    def texts(self) -> set[str]:
        """All free text the rendered chart may contain besides tick numbers."""
        out = {name for name, _ in self.series} | set(self.labels)
        if self.title:
            out.add(self.title)
        return out

    def to_json(self) -> str:
        doc = {"schema_version": SPEC_SCHEMA_VERSION, **asdict(self)}
        doc["series"] = [
            {"name": name, "points": [[lbl, v] for lbl, v in pts]}
            for name, pts in self.series
        ]
        doc["palette"] = [list(c) for c in self.palette]
        return json.dumps(doc, sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "ChartSpec":
        doc = json.loads(text)
        version = doc.pop("schema_version", None)
        if version != SPEC_SCHEMA_VERSION:
            raise ValueError(f"unsupported chart spec schema {version!r}")
        doc["series"] = tuple(
            (s["name"], tuple((lbl, float(v)) for lbl, v in s["points"]))
            for s in doc["series"]
        )
        doc["palette"] = tuple(tuple(c) for c in doc["palette"])
        return cls(**doc)


def build_chart_spec(
    t: Table,
    chart_type: str,
    style_seed: int = 0,
    *,
    width: int = DEFAULT_SIZE[0],
    height: int = DEFAULT_SIZE[1],
    orientation: str = "vertical",
) -> ChartSpec:
    """Describe the minimal re-plot of ``t``: one series per column."""
    if chart_type not in CHART_TYPES:
        raise ValueError(f"unsupported chart type {chart_type!r}")
    if not t.rows or not t.col_headers:
        raise PreprocessError("cannot plot an empty table")
    if chart_type == "pie" and len(t.col_headers) != 1:
        raise PieShapeError(
            f"pie chart needs exactly one value column, table has {len(t.col_headers)}"
        )
    series = []
    for c, name in enumerate(t.col_headers):
        points = []
        for label, cells in t.rows:
            cell = cells[c]
            if cell.numeric is None:
                raise NonNumericCell(f"{label!r}/{name!r}: {cell.raw!r} is not numeric")
            points.append((label, cell.numeric))
        series.append((name, tuple(points)))
    n_colors = len(t.rows) if chart_type == "pie" else len(series)
    shift = style_seed % len(PALETTE)
    palette = tuple(PALETTE[(shift + k) % len(PALETTE)] for k in range(n_colors))
    return ChartSpec(
        chart_type=chart_type,
        series=tuple(series),
        palette=palette,
        title=t.title,
        orientation=orientation if chart_type == "bar" else "vertical",
        width=width,
        height=height,
    )


# ---------------------------------------------------------------------------
# rendering


def _fmt(v: float) -> str:
    return f"{v:g}"


def _rgb(c) -> tuple[float, float, float]:
    return tuple(x / 255.0 for x in c)


def _padded_limits(values) -> tuple[float, float]:
    lo, hi = min(0.0, *values), max(0.0, *values)
    if lo == hi:
        return lo - 1.0, hi + 1.0
    span = hi - lo
    return (lo - 0.1 * span if lo < 0 else lo), hi + 0.12 * span


def _draw_bar(ax, spec: ChartSpec):
    labels = spec.labels
    x = np.arange(len(labels), dtype=float)
    k = len(spec.series)
    width = 0.8 / k
    horizontal = spec.orientation == "horizontal"
    values = []
    for s, ((name, pts), color) in enumerate(zip(spec.series, spec.palette)):
        vals = [v for _, v in pts]
        values.extend(vals)
        pos = x - 0.4 + width * (s + 0.5)
        if horizontal:
            bars = ax.barh(pos, vals, width, label=name, color=_rgb(color))
        else:
            bars = ax.bar(pos, vals, width, label=name, color=_rgb(color))
        ax.bar_label(bars, labels=[_fmt(v) for v in vals], fontsize=7, padding=2)
    lo, hi = _padded_limits(values)
    if horizontal:
        ax.set_yticks(x, labels)
        ax.set_xlim(lo, hi)
    else:
        ax.set_xticks(x, labels)
        ax.set_ylim(lo, hi)


def _draw_line(ax, spec: ChartSpec):
    labels = spec.labels
    x = np.arange(len(labels), dtype=float)
    values = []
    for (name, pts), color in zip(spec.series, spec.palette):
        vals = [v for _, v in pts]
        values.extend(vals)
        ax.plot(x, vals, marker="o", label=name, color=_rgb(color))
        for xi, v in zip(x, vals):
            ax.annotate(
                _fmt(v), (xi, v), textcoords="offset points", xytext=(0, 5),
                ha="center", fontsize=7,
            )
    lo, hi = _padded_limits(values)
    ax.set_xticks(x, labels)
    ax.set_ylim(lo, hi)
    if len(x) == 1:
        ax.set_xlim(-1.0, 1.0)


def _draw_pie(ax, spec: ChartSpec):
    name, pts = spec.series[0]
    labels = [lbl for lbl, _ in pts]
    vals = [v for _, v in pts]
    wedges, _ = ax.pie(
        vals,
        labels=[_fmt(v) for v in vals],
        labeldistance=0.65,
        colors=[_rgb(c) for c in spec.palette],
        startangle=90,
        counterclock=False,
        textprops={"fontsize": 7},
    )
    ax.set_aspect("equal")
    ax.legend(wedges, labels, title=name, fontsize=7, loc="upper right")


def render_chart(spec: ChartSpec, provenance: str = "simple") -> Image:
    """Rasterize ``spec`` at exactly ``spec.width`` x ``spec.height`` pixels."""
    if spec.width < MIN_CANVAS[0] or spec.height < MIN_CANVAS[1]:
        raise CanvasTooSmall(
            f"{spec.width}x{spec.height} is below the {MIN_CANVAS[0]}x{MIN_CANVAS[1]} minimum"
        )
    dpi = 100
    with _render_lock, matplotlib.rc_context(
        {"font.family": "DejaVu Sans", "axes.unicode_minus": False}
    ):
        fig = Figure(figsize=(spec.width / dpi, spec.height / dpi), dpi=dpi)
        canvas = FigureCanvasAgg(fig)
        ax = fig.add_subplot(1, 1, 1)
        if spec.chart_type == "bar":
            _draw_bar(ax, spec)
        elif spec.chart_type == "line":
            _draw_line(ax, spec)
        else:
            _draw_pie(ax, spec)
        if spec.chart_type != "pie":
            ax.legend(fontsize=7, loc="upper right")
            for lbl in ax.get_xticklabels() + ax.get_yticklabels():
                lbl.set_fontsize(7)
        if spec.title:
            ax.set_title(spec.title, fontsize=10)
        canvas.draw()
        arr = np.asarray(canvas.buffer_rgba())
        img = Image.from_array(arr, provenance)
    if (img.width, img.height) != (spec.width, spec.height):  # pragma: no cover
        raise RuntimeError("canvas size drifted from the requested size")
    return img


# ---------------------------------------------------------------------------
# negatives


def generate_negative(t: Table, seed: int) -> Table:
    """Permute the numeric cells of ``t`` across the whole grid.

    Up to 16 reshuffles are tried to move at least one value; labels,
    headers and non-numeric cells stay where they are.
    """
    slots = [
        (r, c)
        for r, (_, cells) in enumerate(t.rows)
        for c, cell in enumerate(cells)
        if cell.is_numeric
    ]
    if len(slots) < 2:
        raise TooFewValues(f"need at least 2 numeric cells, found {len(slots)}")
    cells = [t.rows[r][1][c] for r, c in slots]
    rng = random.Random(seed)
    for _ in range(1 + _SHUFFLE_RETRIES):
        perm = list(range(len(cells)))
        rng.shuffle(perm)
        shuffled = [cells[k] for k in perm]
        if any(a.numeric != b.numeric for a, b in zip(cells, shuffled)):
            break
    grid = [list(row_cells) for _, row_cells in t.rows]
    for (r, c), cell in zip(slots, shuffled):
        grid[r][c] = cell
    return Table(
        t.col_headers,
        tuple((label, tuple(g)) for (label, _), g in zip(t.rows, grid)),
        title=t.title,
        corner=t.corner,
        source_id=t.source_id,
    )


# ---------------------------------------------------------------------------
# row/column banner


@dataclass(frozen=True)
class RowColAnnotation:
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    origin: str = "ground_truth"

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "cols", tuple(self.cols))
        if self.origin not in ("ground_truth", "lmm_extracted"):
            raise ValueError(f"unknown origin {self.origin!r}")
        if any(not s.strip() for s in self.rows + self.cols):
            raise ValueError("row and column names must be non-empty")

    @classmethod
    def from_table(cls, t: Table) -> "RowColAnnotation":
        return cls(t.row_labels, t.col_headers, "ground_truth")

    def to_json(self) -> str:
        return json.dumps(
            {"rows": list(self.rows), "cols": list(self.cols), "origin": self.origin},
            ensure_ascii=False,
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "RowColAnnotation":
        doc = json.loads(text)
        return cls(tuple(doc["rows"]), tuple(doc["cols"]), doc["origin"])


def sidecar_path(image_path: str | Path) -> Path:
    """``chart.png`` -> ``chart.rowcol.json``."""
    p = Path(image_path)
    return p.with_name(p.stem + ".rowcol.json")


def write_sidecar(image_path: str | Path, ann: RowColAnnotation) -> Path:
    path = sidecar_path(image_path)
    atomic_write_text(path, ann.to_json() + "\n")
    return path


def read_sidecar(image_path: str | Path) -> RowColAnnotation:
    return RowColAnnotation.from_json(sidecar_path(image_path).read_text("utf-8"))


def _font():
    return ImageFont.truetype(str(_FONT_PATH), _BANNER_FONT_SIZE)


def _fit(draw, text: str, font, limit: float) -> str:
    if draw.textlength(text, font=font) <= limit:
        return text
    while text and draw.textlength(text + "…", font=font) > limit:
        text = text[:-1]
    return text + "…"


def _wrap(draw, prefix: str, items, font, limit: float) -> list[str]:
    words = [prefix] + [it + ("," if k < len(items) - 1 else "") for k, it in enumerate(items)]
    lines: list[str] = []
    line = ""
    for word in words:
        candidate = f"{line} {word}" if line else word
        if draw.textlength(candidate, font=font) <= limit:
            line = candidate
            continue
        if line:
            lines.append(line)
        line = _fit(draw, word, font, limit)
    lines.append(line)
    return lines


def banner_lines(ann: RowColAnnotation, width: int) -> list[str]:
    """Text lines the banner will carry for an image ``width`` pixels wide."""
    font = _font()
    draw = ImageDraw.Draw(PILImage.new("RGB", (1, 1)))
    limit = max(width - 2 * _BANNER_PAD, 1)
    return _wrap(draw, "Rows:", ann.rows, font, limit) + _wrap(
        draw, "Columns:", ann.cols, font, limit
    )


def render_row_col_banner(img: Image, ann: RowColAnnotation) -> Image:
    """Return ``img`` with a white text banner stacked on top.

    The banner lists the rows and then the columns, wrapped to the image
    width; the chart pixels are copied unchanged below it.
    """
    font = _font()
    lines = banner_lines(ann, img.width)
    ascent, descent = font.getmetrics()
    line_h = ascent + descent + 2
    banner_h = 2 * _BANNER_PAD + line_h * len(lines)
    banner = PILImage.new("RGB", (img.width, banner_h), (255, 255, 255))
    draw = ImageDraw.Draw(banner)
    for k, line in enumerate(lines):
        draw.text((_BANNER_PAD, _BANNER_PAD + k * line_h), line, fill=(0, 0, 0), font=font)
    stacked = np.concatenate([np.asarray(banner), img.to_array()], axis=0)
    return Image.from_array(stacked, "annotated")


def banner_height(original: Image, annotated: Image) -> int:
    return annotated.height - original.height


# ---------------------------------------------------------------------------
# training triple


def make_training_triple(
    original: Image,
    t: Table,
    chart_type: str,
    seed: int,
    ann: Optional[RowColAnnotation] = None,
) -> tuple[Image, Image, Image]:
    """``(anchor, positive, negative)`` images sharing one row/column banner.

    The simple charts are rendered at the original's pixel size.
    """
    ann = ann or RowColAnnotation.from_table(t)
    size = {"width": original.width, "height": original.height}
    positive = render_chart(build_chart_spec(t, chart_type, seed, **size), "simple")
    negative = render_chart(
        build_chart_spec(generate_negative(t, seed), chart_type, seed, **size), "negative"
    )
    return (
        render_row_col_banner(original, ann),
        render_row_col_banner(positive, ann),
        render_row_col_banner(negative, ann),
    )
