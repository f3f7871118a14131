from reportlab.lib.pagesizes import A4, landscape
from reportlab.lib import colors
from reportlab.platypus import SimpleDocTemplate, Table, TableStyle, Paragraph, Spacer, KeepTogether
from reportlab.lib.styles import getSampleStyleSheet, ParagraphStyle
from io import BytesIO
import math
from xml.sax.saxutils import escape
import pandas as pd
from datetime import datetime

MAX_TABLE_ROWS = 25

HEADER_STYLE = [
    ('BACKGROUND', (0, 0), (-1, 0), colors.lightgrey),
    ('TEXTCOLOR', (0, 0), (-1, 0), colors.black),
    ('ALIGN', (0, 0), (-1, -1), 'LEFT'),
    ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
    ('FONTSIZE', (0, 0), (-1, -1), 8),
    ('GRID', (0, 0), (-1, -1), 0.5, colors.black),
    ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
]


def build_header(elements, styles, title, subtitle):
    title_style = ParagraphStyle(
        'ReportTitle',
        parent=styles['Heading1'],
        fontSize=18,
        spaceAfter=10,
        textColor=colors.black
    )
    subtitle_style = ParagraphStyle(
        'ReportSubtitle',
        parent=styles['Normal'],
        fontSize=10,
        spaceAfter=20,
        textColor=colors.black
    )

    elements.append(Paragraph(title, title_style))
    current_time = datetime.now().strftime("%d-%m-%Y %H:%M")
    elements.append(Paragraph(f"{subtitle} | generated {current_time}", subtitle_style))
    elements.append(Spacer(1, 10))


def format_value(value):
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if math.isnan(value):
            return "-"
        return f"{value:.6g}"
    if isinstance(value, dict):
        return ", ".join(f"{k}={format_value(v)}" for k, v in sorted(value.items()))
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def _thin_rows(df, max_rows=MAX_TABLE_ROWS):
    """Evenly spaced rows, always keeping the first and the last."""
    if len(df) <= max_rows:
        return df
    step = (len(df) - 1) / (max_rows - 1)
    picks = sorted({round(i * step) for i in range(max_rows)})
    return df.iloc[picks]


def frame_table(df, col_widths=None):
    df = _thin_rows(df)
    data = [list(df.columns)]
    for row in df.itertuples(index=False):
        data.append([format_value(v.item() if hasattr(v, "item") else v) for v in row])
    t = Table(data, colWidths=col_widths, hAlign='LEFT', repeatRows=1)
    t.setStyle(TableStyle(HEADER_STYLE))
    return t


def _is_row_list(value):
    return isinstance(value, list) and value and all(isinstance(v, dict) for v in value)


def generate_run_report(summary, frame=None, title="Run report"):
    """
    Summary of one scenario run.

    Args:
        summary: the run's summary mapping (scalars, nested dicts, lists of row dicts)
        frame: optional trajectory DataFrame; an evenly thinned excerpt is printed

    Returns:
        BytesIO: the PDF, rewound
    """
    buffer = BytesIO()
    doc = SimpleDocTemplate(buffer, pagesize=A4)
    elements = []
    styles = getSampleStyleSheet()

    subtitle = f"scenario {summary.get('scenario', '?')} | config {summary.get('config_hash', '?')}"
    build_header(elements, styles, title, subtitle)

    scalars = [["Key", "Value"]]
    row_lists = []
    for key in sorted(summary):
        value = summary[key]
        if _is_row_list(value):
            row_lists.append((key, value))
        else:
            scalars.append([key, Paragraph(escape(format_value(value)), styles['Normal'])])

    t = Table(scalars, colWidths=[150, 330], hAlign='LEFT')
    t.setStyle(TableStyle(HEADER_STYLE))
    elements.append(t)
    elements.append(Spacer(1, 15))

    for key, rows in row_lists:
        block_elements = [Paragraph(key.replace("_", " ").title(), styles['Heading2']),
                          frame_table(pd.DataFrame(rows)), Spacer(1, 15)]
        elements.append(KeepTogether(block_elements))

    if frame is not None and not frame.empty:
        elements.append(Paragraph("Trajectory (excerpt)", styles['Heading2']))
        elements.append(frame_table(frame))

    doc.build(elements)
    buffer.seek(0)
    return buffer


def generate_sweep_report(table, title="Sweep report"):
    buffer = BytesIO()
    doc = SimpleDocTemplate(buffer, pagesize=landscape(A4))
    elements = []
    styles = getSampleStyleSheet()

    build_header(elements, styles, title, f"{len(table)} rows")
    shown = table.drop(columns=[c for c in ("output_dir", "error") if c in table.columns])
    elements.append(frame_table(shown))

    failures = table[table["error"].notna() & (table["error"] != "")] if "error" in table.columns else table.iloc[0:0]
    if not failures.empty:
        elements.append(Spacer(1, 15))
        elements.append(Paragraph("Failed rows", styles['Heading2']))
        for row in failures.itertuples(index=False):
            elements.append(Paragraph(escape(f"row {row.row}: {row.error}"), styles['Normal']))

    doc.build(elements)
    buffer.seek(0)
    return buffer
