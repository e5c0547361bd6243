"""
Mesure du surcout : parametres et multiplications-accumulations (MAC) ajoutes par
les branches d'attention, et profiling cProfile d'une etape d'entrainement.
"""

import cProfile
import html
import pstats
import time
from pathlib import Path

import numpy as np

from model import CDALModel

OVERHEAD_BOUND = 0.05
LAB_DIR = Path(__file__).resolve().parent
BASE_GROUPS = ("backbone", "base_head")


def count_parameters(model: CDALModel) -> dict:
    """Nombre de scalaires par groupe de parametres."""
    return {group: int(sum(p.size for p in params.values())) for group, params in model.modules().items()}


def _ce_macs(in_channels: int, out_channels: int, kernel: int, n_experts: int, reduction: int,
             spatial: int, depthwise: bool) -> int:
    hidden = max(1, in_channels // reduction)
    gate = in_channels * hidden + hidden * n_experts
    per_expert = (in_channels if depthwise else out_channels * in_channels) * kernel * kernel
    conv = per_expert * spatial
    return gate + n_experts * per_expert + conv


def count_macs(model: CDALModel) -> dict:
    """
    MAC d'une passe avant par groupe, pour une image du format configure.

    Les branches comptent leur extraction sur X ; la tete partagee compte les
    deux predictions (factuelle et contrefactuelle) et la ponderation Σ_i X * A_i.
    """
    cfg = model.cfg
    height, width = cfg["data.height"], cfg["data.width"]
    feat_h, feat_w = height // 4, width // 4
    spatial = feat_h * feat_w
    conv1, conv2 = model.backbone.conv1.shape, model.backbone.conv2.shape
    channels = conv2[0]
    k = model.n_classes
    macs = {
        "backbone": int(np.prod(conv1) * height * width + np.prod(conv2) * (height // 2) * (width // 2)),
        "base_head": channels * k,
    }
    n_maps, n_experts, reduction = cfg["model.n_maps"], cfg["model.n_experts"], cfg["model.reduction"]
    half = n_maps // 2
    branch = (_ce_macs(channels, half, 1, n_experts, reduction, spatial, False)
              + _ce_macs(half, half, 3, n_experts, reduction, spatial, True)
              + half * half * spatial)
    for name in ("factual", "counterfactual"):
        if getattr(model, name) is not None:
            macs[name] = branch
    if model.head is not None:
        predictions = 1 if model.kind == "vanilla" else 2
        macs["head"] = predictions * ((n_maps + channels) * spatial + channels * k)
    return macs


def _split(counts: dict) -> dict:
    base = sum(v for g, v in counts.items() if g in BASE_GROUPS)
    added = sum(v for g, v in counts.items() if g not in BASE_GROUPS)
    return {"base": base, "cdal": added, "ratio": added / base if base else 0.0, "groups": counts}


def overhead_report(model: CDALModel) -> dict:
    """
    Surcout CDAL relatif a extracteur + tete de base.

    Returns:
        {"parameters": {...}, "macs": {...}, "within_bound": ratio MAC <= 5 %,
         "params_within_bound": ratio de parametres <= 5 %}
    """
    params = _split(count_parameters(model))
    macs = _split(count_macs(model))
    return {"parameters": params, "macs": macs, "within_bound": macs["ratio"] <= OVERHEAD_BOUND,
            "params_within_bound": params["ratio"] <= OVERHEAD_BOUND}


def extract_function_stats(profiler, root: Path = LAB_DIR) -> list:
    """
    Statistiques par fonction, restreintes aux modules du laboratoire et a numpy/scipy.

    Les lignes sont triees par temps cumule decroissant.
    """
    rows = []
    for (filename, line, func_name), (ncalls, _, tottime, cumtime, _) in pstats.Stats(profiler).stats.items():
        path = Path(filename)
        if filename[:1] not in ("<", "~") and path.resolve().parent == root:
            origin = path.stem
        elif any(lib in path.parts for lib in ("numpy", "scipy")):
            origin = next(lib for lib in ("numpy", "scipy") if lib in path.parts)
        else:
            continue
        rows.append({
            "name": f"{origin}.{func_name}",
            "line": line,
            "ncalls": ncalls,
            "tottime": round(tottime, 6),
            "cumtime": round(cumtime, 6),
        })
    return sorted(rows, key=lambda r: r["cumtime"], reverse=True)


def profile_call(fn, *args, top: int = 30, **kwargs) -> dict:
    """
    Execute `fn` sous cProfile.

    Returns:
        {"wall_time", "total_calls", "functions": les `top` plus couteuses}
    """
    profiler = cProfile.Profile()
    start = time.perf_counter()
    profiler.enable()
    try:
        fn(*args, **kwargs)
    finally:
        profiler.disable()
    wall_time = time.perf_counter() - start

    functions = extract_function_stats(profiler)
    return {
        "wall_time": round(wall_time, 6),
        "total_calls": sum(f["ncalls"] for f in functions),
        "functions": functions[:top],
    }


def get_time_color(share: float) -> str:
    """Vert sous 10 % du temps mur, orange sous 30 %, rouge au-dela."""
    if share < 0.10:
        return "#22c55e"
    elif share < 0.30:
        return "#f59e0b"
    return "#ef4444"


def _verdict(ok: bool) -> str:
    return "dans la borne" if ok else "hors borne"


def _overhead_rows(overhead: dict) -> str:
    params, macs = overhead["parameters"]["groups"], overhead["macs"]["groups"]
    rows = ""
    for group in params:
        role = "base" if group in BASE_GROUPS else "cdal"
        rows += (f"<tr><td><code>{html.escape(group)}</code></td><td>{role}</td>"
                 f"<td>{params[group]}</td><td>{macs.get(group, 0)}</td></tr>")
    bound = OVERHEAD_BOUND * 100
    verdicts = [f"{overhead[kind]['ratio'] * 100:.2f}% des {label} ({_verdict(overhead[key])} de {bound:.0f}%)"
                for kind, label, key in (("macs", "MAC", "within_bound"),
                                         ("parameters", "parametres", "params_within_bound"))]
    return (f"<h2>Surcout CDAL : {' ; '.join(verdicts)}</h2>"
            "<table><tr><th>Groupe</th><th>Role</th><th>Parametres</th><th>MAC</th></tr>" + rows + "</table>")


def generate_profile_html(profile_data: dict, title: str, overhead: dict = None) -> str:
    """Page HTML : table de surcout par groupe puis fonctions les plus couteuses."""
    wall = profile_data.get("wall_time", 0.0)
    rows = ""
    for func in profile_data.get("functions", []):
        share = func["cumtime"] / wall if wall > 0 else 0.0
        rows += (f"<tr><td><code>{html.escape(func['name'])}</code>:{func['line']}</td>"
                 f"<td>{func['ncalls']}</td><td>{func['tottime']:.4f}s</td><td>{func['cumtime']:.4f}s</td>"
                 f"<td style=\"color:{get_time_color(share)}\">{share * 100:.1f}%</td></tr>")

    return f"""<!DOCTYPE html>
<html lang="fr">
<head>
    <meta charset="UTF-8">
    <title>Profiling - {html.escape(title)}</title>
    <style>
        body {{ font-family: -apple-system, 'Segoe UI', Roboto, sans-serif; background: #f8fafc; padding: 24px; }}
        h1 {{ color: #4c1d95; }}
        h2 {{ font-size: 16px; margin: 24px 0 8px; }}
        table {{ width: 100%; border-collapse: collapse; background: white; }}
        th, td {{ padding: 8px 12px; text-align: left; border-bottom: 1px solid #e2e8f0; font-size: 13px; }}
        th {{ background: #f1f5f9; text-transform: uppercase; font-size: 11px; color: #64748b; }}
    </style>
</head>
<body>
    <h1>Profiling d'une etape d'entrainement</h1>
    <p>{html.escape(title)} : {wall * 1000:.2f} ms, {profile_data.get('total_calls', 0)} appels</p>
    {_overhead_rows(overhead) if overhead else ''}
    <h2>Fonctions les plus couteuses</h2>
    <table>
        <tr><th>Fonction</th><th>Appels</th><th>Temps propre</th><th>Temps cumule</th><th>Part du temps mur</th></tr>
        {rows}
    </table>
</body>
</html>"""
