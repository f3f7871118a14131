import math

import numpy as np
import plotly.graph_objects as go

SVG_WIDTH = 640
SVG_HEIGHT = 400
MARGIN = 60
TRACE_COLUMNS = [
    ("l2_norm", "||u||"),
    ("h1_seminorm", "||grad u||"),
    ("l2_mean_x1", "||<u>||"),
    ("l2_perp", "||u_perp||"),
]


def _ticks(lo, hi):
    """Decade ticks covering [lo, hi] in log10 units."""
    first, last = math.floor(lo), math.ceil(hi)
    if last == first:
        last = first + 1
    return list(range(first, last + 1))


def generate_decay_svg(times, values, title="L2 decay", y_label="||u||_L2"):
    """
    Standalone SVG of a series on a log-linear plot (log10 y-axis).
    Non-positive samples are dropped.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.isfinite(values) & (values > 0) & np.isfinite(times)
    times, values = times[keep], values[keep]

    plot_w = SVG_WIDTH - 2 * MARGIN
    plot_h = SVG_HEIGHT - 2 * MARGIN
    body = ""
    if times.size == 0:
        body = f'<text x="{SVG_WIDTH / 2}" y="{SVG_HEIGHT / 2}" text-anchor="middle">no positive samples</text>'
    else:
        logs = np.log10(values)
        ticks = _ticks(float(logs.min()), float(logs.max()))
        y_lo, y_hi = ticks[0], ticks[-1]
        t_lo, t_hi = float(times.min()), float(times.max())
        t_span = t_hi - t_lo if t_hi > t_lo else 1.0

        def px(t):
            return MARGIN + (t - t_lo) / t_span * plot_w

        def py(y):
            return MARGIN + (y_hi - y) / (y_hi - y_lo) * plot_h

        points = " ".join(f"{px(t):.2f},{py(y):.2f}" for t, y in zip(times, logs))
        grid_lines = "".join(
            f'<line class="grid" x1="{MARGIN}" x2="{MARGIN + plot_w}" y1="{py(k):.2f}" y2="{py(k):.2f}"/>'
            f'<text class="tick" x="{MARGIN - 6}" y="{py(k) + 4:.2f}" text-anchor="end">1e{k}</text>'
            for k in ticks
        )
        x_labels = (
            f'<text class="tick" x="{MARGIN}" y="{MARGIN + plot_h + 18}" text-anchor="middle">{t_lo:.4g}</text>'
            f'<text class="tick" x="{MARGIN + plot_w}" y="{MARGIN + plot_h + 18}" text-anchor="middle">{t_hi:.4g}</text>'
        )
        body = f'{grid_lines}{x_labels}<polyline class="series" points="{points}"/>'

    svg_content = f"""<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">
<style>
    .grid {{ stroke: #dddddd; stroke-width: 1; }}
    .axis {{ stroke: #000000; stroke-width: 1; }}
    .series {{ fill: none; stroke: #1f77b4; stroke-width: 2; }}
    .tick {{ font-family: Helvetica, sans-serif; font-size: 11px; }}
    .title {{ font-family: Helvetica, sans-serif; font-size: 15px; font-weight: bold; }}
</style>
<rect width="100%" height="100%" fill="#ffffff"/>
<text class="title" x="{SVG_WIDTH / 2}" y="{MARGIN / 2}" text-anchor="middle">{title}</text>
<line class="axis" x1="{MARGIN}" y1="{MARGIN + plot_h}" x2="{MARGIN + plot_w}" y2="{MARGIN + plot_h}"/>
<line class="axis" x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{MARGIN + plot_h}"/>
<text class="tick" x="{MARGIN + plot_w / 2}" y="{SVG_HEIGHT - 12}" text-anchor="middle">t</text>
<text class="tick" x="14" y="{MARGIN + plot_h / 2}" transform="rotate(-90 14 {MARGIN + plot_h / 2})" text-anchor="middle">{y_label}</text>
{body}
</svg>
"""
    return svg_content


def generate_trajectory_html(frame, title="Trajectory diagnostics"):
    """Interactive HTML of the norm columns against t (log y-axis)."""
    fig = go.Figure()
    for column, label in TRACE_COLUMNS:
        if column not in frame.columns:
            continue
        series = frame[["t", column]]
        series = series[series[column] > 0]
        fig.add_trace(go.Scatter(x=series["t"], y=series[column], mode="lines", name=label))
    if "blowup_energy" in frame.columns:
        fig.add_trace(go.Scatter(x=frame["t"], y=frame["blowup_energy"], mode="lines",
                                 name="E(u)", yaxis="y2", line=dict(dash="dot")))
    fig.update_layout(
        title=title,
        xaxis_title="t",
        yaxis=dict(title="norm", type="log"),
        yaxis2=dict(title="E(u)", overlaying="y", side="right"),
        template="plotly_white",
        legend=dict(orientation="h"),
    )
    return fig.to_html(full_html=True, include_plotlyjs="cdn")
