"""
Self-contained SVG charts: line curves, boxplots and stacked proportions.
"""
from xml.sax.saxutils import escape, quoteattr

import numpy as np

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]

MARGIN_FRACTION = 0.05


class SvgCanvas:
    def __init__(self, width, height):
        self.width = width
        self.height = height
        self.svg = ""
        self.header()

    def header(self):
        self.svg += (
            '<?xml version="1.0" encoding="UTF-8" standalone="no"?>\n'
            f'<svg version="1.1" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}" xmlns="http://www.w3.org/2000/svg">\n'
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="white"/>\n'
        )

    def group_start(self, attr):
        g_attr = [f'{key}={quoteattr(str(value))}' for key, value in attr.items()]
        self.svg += f'<g {" ".join(g_attr)}>\n'
        if 'title' in attr:
            self.svg += f'<title>{escape(str(attr["title"]))}</title>\n'

    def group_end(self):
        self.svg += '</g>\n'

    def line(self, x1, y1, x2, y2, stroke="#000000", width=1.0, extra=""):
        self.svg += (f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                     f'stroke="{stroke}" stroke-width="{width}" {extra}/>\n')

    def polyline(self, points, stroke, width=1.5, label=None):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        title = f'<title>{escape(label)}</title>' if label else ''
        self.svg += (f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
                     f'stroke-width="{width}">{title}</polyline>\n')

    def polygon(self, points, fill, label=None):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        title = f'<title>{escape(label)}</title>' if label else ''
        self.svg += f'<polygon points="{coords}" fill="{fill}" stroke="none">{title}</polygon>\n'

    def filled_rectangle(self, x1, y1, x2, y2, fill, extra=""):
        width = x2 - x1
        height = y2 - y1
        self.svg += f'<rect x="{x1:.2f}" y="{y1:.2f}" width="{width:.2f}" height="{height:.2f}" fill="{fill}" {extra}/>\n'

    def text(self, x, y, string, size=11, anchor="start", extra=""):
        self.svg += (f'<text x="{x:.2f}" y="{y:.2f}" font-family="sans-serif" font-size="{size}" '
                     f'text-anchor="{anchor}" {extra}>{escape(str(string))}</text>\n')

    def get_svg(self):
        return f"{self.svg}</svg>\n"


def _padded_range(values):
    values = np.asarray([v for v in values if v is not None and np.isfinite(v)], dtype=float)
    if values.size == 0:
        return 0.0, 1.0
    lo, hi = float(values.min()), float(values.max())
    span = hi - lo
    pad = MARGIN_FRACTION * span if span > 0 else max(abs(hi), 1.0) * MARGIN_FRACTION
    return lo - pad, hi + pad


class _Frame:
    """Maps data coordinates into a plotting box."""

    def __init__(self, left, top, width, height, x_range, y_range):
        self.left, self.top, self.width, self.height = left, top, width, height
        self.x_range, self.y_range = x_range, y_range

    def px(self, x):
        lo, hi = self.x_range
        return self.left + (x - lo) / (hi - lo) * self.width

    def py(self, y):
        lo, hi = self.y_range
        return self.top + self.height - (y - lo) / (hi - lo) * self.height

    def draw_axes(self, canvas, title, xlabel, ylabel, ticks=5):
        bottom = self.top + self.height
        canvas.line(self.left, bottom, self.left + self.width, bottom)
        canvas.line(self.left, self.top, self.left, bottom)
        for value in np.linspace(*self.x_range, ticks):
            x = self.px(value)
            canvas.line(x, bottom, x, bottom + 4)
            canvas.text(x, bottom + 16, f"{value:.4g}", size=9, anchor="middle")
        for value in np.linspace(*self.y_range, ticks):
            y = self.py(value)
            canvas.line(self.left - 4, y, self.left, y)
            canvas.text(self.left - 6, y + 3, f"{value:.4g}", size=9, anchor="end")
        canvas.text(self.left + self.width / 2, self.top - 10, title, size=12, anchor="middle")
        if xlabel:
            canvas.text(self.left + self.width / 2, bottom + 32, xlabel, size=10, anchor="middle")
        if ylabel:
            cx, cy = self.left - 48, self.top + self.height / 2
            canvas.text(cx, cy, ylabel, size=10, anchor="middle", extra=f'transform="rotate(-90 {cx:.2f} {cy:.2f})"')


def _legend(canvas, left, top, labels):
    for i, label in enumerate(labels):
        y = top + 14 * i
        canvas.filled_rectangle(left, y - 8, left + 10, y + 2, PALETTE[i % len(PALETTE)])
        canvas.text(left + 14, y, label, size=10)


def _line_panel(canvas, box, title, xlabel, ylabel, series):
    left, top, width, height = box
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys if y is not None]
    frame = _Frame(left, top, width, height, _padded_range(xs_all), _padded_range(ys_all))
    frame.draw_axes(canvas, title, xlabel, ylabel)
    for i, (label, xs, ys) in enumerate(series):
        points = [(frame.px(x), frame.py(y)) for x, y in zip(xs, ys) if y is not None and np.isfinite(y)]
        if points:
            canvas.polyline(points, PALETTE[i % len(PALETTE)], label=label)


def line_chart(title, xlabel, ylabel, series, width=720, height=440):
    """One polyline per ``(label, xs, ys)`` entry of ``series``."""
    canvas = SvgCanvas(width, height)
    _line_panel(canvas, (80, 40, width - 260, height - 100), title, xlabel, ylabel, series)
    _legend(canvas, width - 160, 60, [label for label, _, _ in series])
    return canvas.get_svg()


def panel_chart(title, panels, columns=2, panel_width=340, panel_height=240):
    """Small multiples: each panel is ``(panel_title, series)`` sharing one legend."""
    rows = max(1, int(np.ceil(len(panels) / columns)))
    width = columns * (panel_width + 90) + 170
    height = rows * (panel_height + 80) + 50
    canvas = SvgCanvas(width, height)
    canvas.text(width / 2, 20, title, size=13, anchor="middle")
    labels = []
    for index, (panel_title, series) in enumerate(panels):
        row, col = divmod(index, columns)
        box = (80 + col * (panel_width + 90), 60 + row * (panel_height + 80), panel_width, panel_height)
        _line_panel(canvas, box, panel_title, "round", None, series)
        labels = labels or [label for label, _, _ in series]
    _legend(canvas, width - 150, 60, labels)
    return canvas.get_svg()


def box_stats(values):
    """Quartiles plus whiskers at the most extreme points within 1.5 IQR."""
    values = np.sort(np.asarray(values, dtype=float))
    q1, median, q3 = np.percentile(values, [25, 50, 75])
    iqr = q3 - q1
    inside = values[(values >= q1 - 1.5 * iqr) & (values <= q3 + 1.5 * iqr)]
    return {
        "q1": float(q1), "median": float(median), "q3": float(q3),
        "whisker_low": float(inside.min()), "whisker_high": float(inside.max()),
        "outliers": [float(v) for v in values if v < inside.min() or v > inside.max()],
    }


def box_chart(title, ylabel, groups, width=720, height=440):
    """``groups`` is a list of ``(label, values)``; one box per group."""
    canvas = SvgCanvas(width, height)
    left, top, plot_w, plot_h = 80, 40, width - 120, height - 110
    all_values = [v for _, values in groups for v in values]
    frame = _Frame(left, top, plot_w, plot_h, (0.0, float(len(groups))), _padded_range(all_values))
    bottom = top + plot_h
    canvas.line(left, bottom, left + plot_w, bottom)
    canvas.line(left, top, left, bottom)
    for value in np.linspace(*frame.y_range, 5):
        y = frame.py(value)
        canvas.line(left - 4, y, left, y)
        canvas.text(left - 6, y + 3, f"{value:.4g}", size=9, anchor="end")
    canvas.text(left + plot_w / 2, top - 10, title, size=12, anchor="middle")
    cx, cy = left - 55, top + plot_h / 2
    canvas.text(cx, cy, ylabel, size=10, anchor="middle", extra=f'transform="rotate(-90 {cx:.2f} {cy:.2f})"')

    for i, (label, values) in enumerate(groups):
        color = PALETTE[i % len(PALETTE)]
        stats = box_stats(values)
        center = frame.px(i + 0.5)
        half = 0.3 * plot_w / max(len(groups), 1)
        canvas.group_start({"class": "box", "title": label})
        canvas.line(center, frame.py(stats["whisker_low"]), center, frame.py(stats["q1"]), stroke=color)
        canvas.line(center, frame.py(stats["q3"]), center, frame.py(stats["whisker_high"]), stroke=color)
        canvas.filled_rectangle(center - half, frame.py(stats["q3"]), center + half, frame.py(stats["q1"]),
                                "none", extra=f'stroke="{color}" stroke-width="1.5"')
        canvas.line(center - half, frame.py(stats["median"]), center + half, frame.py(stats["median"]),
                    stroke=color, width=2.0)
        for outlier in stats["outliers"]:
            canvas.text(center, frame.py(outlier) + 3, "o", size=8, anchor="middle", extra=f'fill="{color}"')
        canvas.group_end()
        canvas.text(center, bottom + 16, label, size=9, anchor="middle")
    return canvas.get_svg()


def stacked_chart(title, xs, layers, width=720, height=440):
    """Stacked areas; ``layers`` is a list of ``(label, ys)`` whose columns sum to one."""
    canvas = SvgCanvas(width, height)
    frame = _Frame(80, 40, width - 260, height - 100, _padded_range(xs), (0.0, 1.0))
    frame.draw_axes(canvas, title, "round", "proportion")
    base = np.zeros(len(xs))
    for i, (label, ys) in enumerate(layers):
        upper = base + np.asarray(ys, dtype=float)
        points = [(frame.px(x), frame.py(y)) for x, y in zip(xs, upper)]
        points += [(frame.px(x), frame.py(y)) for x, y in zip(reversed(xs), reversed(base))]
        canvas.polygon(points, PALETTE[i % len(PALETTE)], label=label)
        base = upper
    _legend(canvas, width - 160, 60, [label for label, _ in layers])
    return canvas.get_svg()
