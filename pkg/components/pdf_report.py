# components/pdf_report.py

import io
import pandas as pd
from reportlab.platypus import SimpleDocTemplate, Paragraph, Spacer, Table, TableStyle
from reportlab.lib.styles import getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.lib import colors
from reportlab.lib.pagesizes import letter

from .config_loader import ExperimentConfig

MODEL_FIELDS = ("H", "eta", "rho", "xi", "r", "s0", "T", "N", "runs", "batch_size", "seed")


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def generate_pdf_report(summary: pd.DataFrame, config: ExperimentConfig,
                        title: str = "Rough volatility pricer report") -> bytes:
    """
    Generates a basic PDF report: experiment settings and the summary table.
    Built with invariant=1 so identical inputs give identical bytes.
    """
    buffer = io.BytesIO()
    doc = SimpleDocTemplate(buffer, pagesize=letter, invariant=1)
    styles = getSampleStyleSheet()
    report_elements = []

    report_elements.append(Paragraph(title, styles['h1']))
    report_elements.append(Spacer(1, 0.2 * inch))

    report_elements.append(Paragraph("<b>Experiment</b>", styles['h2']))
    settings = config.to_dict()
    report_elements.append(Paragraph(f"Scheme: {config.scheme} (config {config.hash})", styles['Normal']))
    for key in MODEL_FIELDS:
        report_elements.append(Paragraph(f"{key}: {_format_cell(settings[key])}", styles['Normal']))

    report_elements.append(Spacer(1, 0.2 * inch))

    if not summary.empty:
        report_elements.append(Paragraph("<b>Summary</b>", styles['h2']))
        columns = [c for c in summary.columns if c != "config_hash"]
        table_data = [columns]
        for _, row in summary[columns].iterrows():
            table_data.append([_format_cell(row[c]) for c in columns])

        table = Table(table_data)
        table.setStyle(TableStyle([('BACKGROUND', (0,0), (-1,0), colors.grey), ('TEXTCOLOR',(0,0),(-1,0),colors.whitesmoke)]))
        report_elements.append(table)

    doc.build(report_elements)
    buffer.seek(0)
    return buffer.getvalue()
