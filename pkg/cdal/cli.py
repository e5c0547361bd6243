"""
Point d'entree en ligne de commande du laboratoire CDAL.

Usage (depuis cdal/) :
    python cli.py gen-data --out runs/data
    python cli.py train --data runs/data --out runs/train
    python cli.py eval --checkpoint runs/train/checkpoint.cdck --data runs/data --out runs/eval
    python cli.py ablate --data runs/data --axis counterfactual --seeds 5 --out runs/ablate
    python cli.py export-attention --checkpoint runs/train/checkpoint.cdck --data runs/data --out runs/maps
    python cli.py gradcheck
    python cli.py profile --data runs/data --out runs/profile
"""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from attention import extract, static_counterfactual
from benchmark import build_dataset, load_dataset, save_dataset
from config import CDAL_THREADS, describe_keys, load_config, merge
from errors import CDALError, DataError
from evaluation import evaluate
from gradcheck import check_pipeline, run_op_checks
from model import CDALModel
from profiler import generate_profile_html, overhead_report, profile_call
from report import append_results, generate_ablation_html, write_ablation, write_report
from tensor_io import write_pgm, write_tensor
from trainer import SGD, TrainState, load_model, train, train_step
from utils import derive_rng, ensure_dir, log, write_file

ABLATION_AXES = {
    "counterfactual": [
        (mode, {"train.counterfactual_mode": mode})
        for mode in ("learned", "random", "uniform", "reversed", "shuffle")
    ],
    "experts": [(f"n_experts={n}", {"model.n_experts": n}) for n in range(1, 7)],
    "components": [
        ("baseline", {"train.cdal_enabled": False}),
        ("fa", {"train.counterfactual_mode": "random", "train.augment_enabled": False}),
        ("fa_ca", {"train.counterfactual_mode": "learned", "train.augment_enabled": False}),
        ("fa_ca_ea", {"train.counterfactual_mode": "learned", "train.augment_enabled": True}),
    ],
    "losses": [
        ("original", {"loss.eta1": 0.0, "loss.eta2": 0.0, "loss.eta3": 0.0}),
        ("+causal", {"loss.eta2": 0.0, "loss.eta3": 0.0}),
        ("+causal+decor", {"loss.eta3": 0.0}),
        ("+causal+decor+aug", {}),
    ],
    "attention": [
        ("baseline", {"train.cdal_enabled": False}),
        ("vanilla_attention", {"train.vanilla_attention": True}),
        ("cdal", {}),
    ],
}

# chaque ligne part du mode CDAL complet, puis applique ses propres valeurs
ABLATION_BASE = {"train.cdal_enabled": True, "train.vanilla_attention": False}


def ablation_configs(cfg: dict, axis: str, seeds: int) -> list:
    """Liste des runs (ligne, graine, configuration) d'un axe d'ablation."""
    runs = []
    for offset in range(seeds):
        for row, overrides in ABLATION_AXES[axis]:
            run_cfg = merge(cfg, {**ABLATION_BASE, **overrides, "seed": cfg["seed"] + offset})
            runs.append((row, run_cfg))
    return runs


def run_ablation_row(axis: str, row: str, cfg: dict, data_dir: str) -> dict:
    """Un run isole : entrainement puis evaluation, sans rien ecrire."""
    dataset = load_dataset(data_dir)
    result = train(cfg, dataset)
    report = evaluate(result.model, dataset, cfg, derive_rng(cfg["seed"], "eval"))
    return {"axis": axis, "row": row, "seed": cfg["seed"], **{m: getattr(report, m) for m in report.METRICS}}


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    dataset = build_dataset(cfg)
    save_dataset(dataset, args.out)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    dataset = load_dataset(args.data)
    overhead = overhead_report(CDALModel(cfg, len(dataset.known_ids)))
    log("TRAIN", f"Parametres base={overhead['parameters']['base']} cdal={overhead['parameters']['cdal']} ; "
                 f"MAC base={overhead['macs']['base']} cdal={overhead['macs']['cdal']}")
    train(cfg, dataset, args.out)
    return 0


def cmd_eval(args) -> int:
    model, metadata = load_model(args.checkpoint)
    cfg = metadata["config"]
    dataset = load_dataset(args.data)
    report = evaluate(model, dataset, cfg, derive_rng(cfg["seed"], "eval"))
    out = ensure_dir(args.out)
    write_report(report, out / "eval_report.json")
    append_results(report, out / "results.csv", args.label or model.kind)
    log("EVAL", f"Rapport ecrit dans {out / 'eval_report.json'}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    if args.seeds < 1:
        raise DataError("--seeds doit etre >= 1")
    load_dataset(args.data)
    planned = ablation_configs(cfg, args.axis, args.seeds)
    log("ABLATE", f"Axe {args.axis} : {len(planned)} runs, {CDAL_THREADS} processus")

    if CDAL_THREADS > 1:
        with ProcessPoolExecutor(max_workers=CDAL_THREADS) as pool:
            futures = [pool.submit(run_ablation_row, args.axis, row, run_cfg, args.data) for row, run_cfg in planned]
            runs = [future.result() for future in futures]
    else:
        runs = [run_ablation_row(args.axis, row, run_cfg, args.data) for row, run_cfg in planned]

    out = ensure_dir(args.out)
    written = write_ablation(runs, out)
    write_file(str(out / "ablation.html"), generate_ablation_html(written["rows"], args.axis))
    for row in written["rows"]:
        log("ABLATE", f"{row['row']:<22} novel_ari={row['novel_ari_mean']:.4f} +/- {row['novel_ari_std']:.4f}")
    return 0


def cmd_export_attention(args) -> int:
    model, metadata = load_model(args.checkpoint)
    if model.factual is None:
        raise DataError("Checkpoint sans branche d'attention (mode baseline)")
    dataset = load_dataset(args.data)
    pool = dataset.unlabeled_indices()
    count = min(args.samples, len(pool))
    chosen = pool[np.linspace(0, len(pool) - 1, count).astype(int)] if count else []
    out = ensure_dir(args.out)
    index = []
    for i in chosen:
        sample = dataset.sample(int(i))
        x = model.features(sample.image)
        sets = {"factual": extract(model.factual, x, "factual")}
        if model.counterfactual is not None:
            sets["counterfactual"] = extract(model.counterfactual, x, "counterfactual")
        elif model.kind == "cdal":
            rng = derive_rng(metadata["config"]["seed"], "export", int(i))
            sets["counterfactual"] = static_counterfactual(model.counterfactual_mode, sets["factual"], rng)
        sample_dir = ensure_dir(out / f"sample_{int(i):05d}")
        for kind, attention in sets.items():
            maps = attention.maps.data
            write_tensor(sample_dir / f"{kind}.cdt", maps)
            for j, m in enumerate(maps):
                write_pgm(sample_dir / f"{kind}_{j}.pgm", m)
        index.append({"sample_index": int(i), "gen_id": sample.gen_id, "identity_id": sample.identity_id,
                      "labeled": sample.labeled, "maps": sorted(sets)})
    write_file(str(out / "index.json"), json.dumps(index, indent=2))
    log("EXPORT", f"{len(index)} echantillons exportes dans {out}")
    return 0


def cmd_gradcheck(args) -> int:
    rows = run_op_checks(seed=args.seed)
    if not args.ops_only:
        rows += check_pipeline(seed=args.seed)
    print(f"{'operation':<48} {'erreur relative':>16}  statut")
    for row in rows:
        status = "PASS" if row["passed"] else "FAIL"
        print(f"{row['op']:<48} {row['max_rel_error']:>16.3e}  {status}")
    if args.out:
        out = ensure_dir(args.out)
        write_file(str(out / "gradcheck.json"), json.dumps(rows, indent=2))
    failed = [row["op"] for row in rows if not row["passed"]]
    if failed:
        log("GRADCHECK", f"{len(failed)} echec(s): {', '.join(failed[:5])}")
        return 4
    return 0


def cmd_profile(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    dataset = load_dataset(args.data)
    class_of = {g: c for c, g in enumerate(dataset.known_ids)}
    model = CDALModel(cfg, len(class_of))
    state = TrainState(model=model, optimizer=SGD(model.parameters(), cfg["train.learning_rate"],
                                                  cfg["train.momentum"], cfg["train.grad_clip"]), cfg=cfg)
    labeled = dataset.labeled_indices()[:cfg["train.batch_size"]]
    batch = [(dataset.images[i], class_of[int(dataset.gen_ids[i])]) for i in labeled]

    profile = profile_call(train_step, state, batch, derive_rng(cfg["seed"], "profile"))
    overhead = overhead_report(model)
    out = ensure_dir(args.out)
    write_file(str(out / "profile.json"), json.dumps({"profile": profile, "overhead": overhead}, indent=2))
    title = f"{model.kind} / batch {len(batch)}"
    write_file(str(out / "profile.html"), generate_profile_html(profile, title, overhead))

    params, macs = overhead["parameters"], overhead["macs"]
    print(f"parametres : base={params['base']} cdal={params['cdal']} ({params['ratio'] * 100:.2f}%)")
    print(f"MAC        : base={macs['base']} cdal={macs['cdal']} ({macs['ratio'] * 100:.2f}%)")
    print(f"surcout de calcul (MAC) <= 5%  : {'oui' if overhead['within_bound'] else 'non'}")
    print(f"surcout en parametres <= 5%    : {'oui' if overhead['params_within_bound'] else 'non'}"
          f" ({params['ratio'] * 100:.2f}%)")
    return 0


def _add_config_options(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="Fichier JSON a cles pointees")
    parser.add_argument("--set", action="append", default=[], metavar="CLE=VALEUR",
                        help="Surcharge une cle (repetable)")
    parser.add_argument("--seed", type=int, help="Graine du run (prioritaire)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdal", description="Laboratoire CDAL : entrainement et evaluation",
                                     epilog=describe_keys(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, handler, help_text):
        p = sub.add_parser(name, help=help_text, epilog=describe_keys(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(handler=handler)
        return p

    p = command("gen-data", cmd_gen_data, "Genere le jeu synthetique")
    _add_config_options(p)
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "Entraine un modele")
    _add_config_options(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = command("eval", cmd_eval, "Evalue un checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", default="", help="Libelle de la ligne de results.csv")

    p = command("ablate", cmd_ablate, "Lance un axe d'ablation sur plusieurs graines")
    _add_config_options(p)
    p.add_argument("--data", required=True)
    p.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True)

    p = command("export-attention", cmd_export_attention, "Exporte des cartes d'attention (CDT1 + PGM)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--samples", type=int, default=8)
    p.add_argument("--out", required=True)

    p = command("gradcheck", cmd_gradcheck, "Verifie les gradients par differences finies")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops-only", action="store_true", help="Saute la verification du pipeline complet")
    p.add_argument("--out")

    p = command("profile", cmd_profile, "Profile une etape d'entrainement et compte le surcout")
    _add_config_options(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except CDALError as e:
        message = " ".join(str(e).split())
        print(f"ERROR code={e.exit_code} kind={e.kind} message={message}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
