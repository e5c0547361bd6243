"""
Ecriture des resultats : EvalReport en JSON, ligne de results.csv,
agregation des ablations (moyenne / ecart-type par ligne) et page HTML de synthese.
"""

import csv
import html
import json
from datetime import datetime
from pathlib import Path

import numpy as np

from evaluation import EvalReport

RUN_FIELDS = ["axis", "row", "seed"]


def write_report(report: EvalReport, path) -> Path:
    """EvalReport en JSON indente (pas d'horodatage : deux runs identiques donnent les memes octets)."""
    path = Path(path)
    path.write_text(report.to_json() + "\n", encoding='utf-8')
    return path


def append_results(report: EvalReport, path, label: str = "") -> Path:
    """Ajoute une ligne a results.csv (cree l'en-tete au premier appel)."""
    path = Path(path)
    fields = ["label", "seed", "config_digest", *EvalReport.METRICS]
    is_new = not path.exists()
    row = report.to_dict()
    with open(path, 'a', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        if is_new:
            writer.writeheader()
        writer.writerow({"label": label, **{key: row[key] for key in fields if key != "label"}})
    return path


def aggregate(runs: list) -> list:
    """
    Regroupe les runs d'ablation par (axe, ligne).

    Args:
        runs: dicts {axis, row, seed, <metriques>}

    Returns:
        Une entree par ligne, ordre de premiere apparition : n_seeds, <m>_mean, <m>_std
    """
    groups = {}
    for run in runs:
        groups.setdefault((run["axis"], run["row"]), []).append(run)
    summary = []
    for (axis, row), members in groups.items():
        entry = {"axis": axis, "row": row, "n_seeds": len(members)}
        for metric in EvalReport.METRICS:
            values = np.array([m[metric] for m in members], dtype=np.float64)
            entry[f"{metric}_mean"] = float(values.mean())
            entry[f"{metric}_std"] = float(values.std())
        summary.append(entry)
    return summary


def write_csv(rows: list, path, fields: list) -> Path:
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row.get(key, "") for key in fields})
    return path


def write_ablation(runs: list, out_dir) -> dict:
    """
    Ecrit ablation_runs.csv (un run par ligne) et ablation.csv (agrege).

    Returns:
        {"runs": chemin, "summary": chemin, "rows": resume agrege}
    """
    out_dir = Path(out_dir)
    summary = aggregate(runs)
    metric_fields = [f"{m}_{s}" for m in EvalReport.METRICS for s in ("mean", "std")]
    return {
        "runs": write_csv(runs, out_dir / "ablation_runs.csv", RUN_FIELDS + list(EvalReport.METRICS)),
        "summary": write_csv(summary, out_dir / "ablation.csv", ["axis", "row", "n_seeds"] + metric_fields),
        "rows": summary,
    }


def get_score_color(value: float) -> str:
    if value >= 0.8:
        return "#22c55e"
    elif value >= 0.5:
        return "#f59e0b"
    else:
        return "#ef4444"


def generate_ablation_html(summary: list, title: str) -> str:
    """Page de synthese : une ligne par variante, moyenne +/- ecart-type des metriques principales."""
    if not summary:
        return "<html><body>Aucun run</body></html>"

    shown = ("known_acc", "novel_acc", "novel_nmi", "novel_ari", "auc", "oscr")
    best = max(summary, key=lambda r: r["novel_ari_mean"])

    rows = ""
    for row in summary:
        cells = "".join(
            f"<td style=\"color:{get_score_color(row[f'{m}_mean'])}\"><b>{row[f'{m}_mean'] * 100:.2f}</b>"
            f" <small>&plusmn; {row[f'{m}_std'] * 100:.2f}</small></td>"
            for m in shown
        )
        marker = " class=\"best\"" if row is best else ""
        rows += (f"<tr{marker}><td><code>{html.escape(row['axis'])}</code></td>"
                 f"<td><code>{html.escape(row['row'])}</code></td><td>{row['n_seeds']}</td>{cells}</tr>\n")
    header = "".join(f"<th>{m}</th>" for m in shown)

    return f"""<!DOCTYPE html>
<html lang="fr">
<head>
    <meta charset="UTF-8">
    <title>Ablation - {html.escape(title)}</title>
    <style>
        body {{ font-family: -apple-system, 'Segoe UI', Roboto, sans-serif; background: #f1f5f9; padding: 20px; }}
        h1 {{ color: #1e3a5f; }}
        table {{ width: 100%; border-collapse: collapse; background: white; }}
        th, td {{ padding: 8px 12px; text-align: left; border-bottom: 1px solid #e2e8f0; font-size: 13px; }}
        th {{ background: #f8fafc; text-transform: uppercase; font-size: 11px; color: #64748b; }}
        tr.best {{ background: #eff6ff; }}
    </style>
</head>
<body>
    <h1>Ablation : {html.escape(title)}</h1>
    <p>{len(summary)} variantes, genere le {datetime.now().strftime('%d/%m/%Y %H:%M:%S')}.
       Meilleur ARI nouveaux : <code>{html.escape(best['row'])}</code> ({best['novel_ari_mean'] * 100:.2f}).</p>
    <table>
        <tr><th>Axe</th><th>Variante</th><th>Graines</th>{header}</tr>
        {rows}
    </table>
</body>
</html>"""
