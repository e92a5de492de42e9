"""Command-line entry point: ``coreda {gen,train,eval,gradcheck}``.

Exit codes: 0 ok, 2 usage/config/data problems, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config
from .gradcheck import run_suite
from .inference import MixConfig, Predictor, predict_absolute, select_exemplars
from .metrics import EvalReport
from .model import CheckpointError, ConfigConflictError, read_checkpoint
from .numkernel import ContractError
from .synthdata import FormatError, gen_dataset, load_dataset, read_sealed_labels
from .trainer import NonFiniteLossError, train_coreda, train_semisupervised, train_source_only

log = logging.getLogger("coreda")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

SOURCE_STEM = "source"
TARGET_STEM = "target"
SEALED_LABELS = "target_labels.sealed.json"
LABELED_IDS = "labeled_target_ids.json"


class UsageError(Exception):
    pass


def _config(args, overrides: dict | None = None):
    over = dict(overrides or {})
    if getattr(args, "seed", None) is not None:
        over.setdefault("gen", {})["seed"] = args.seed
        over.setdefault("train", {})["seed"] = args.seed
    return load_config(args.config, args.profile, over)


def cmd_gen(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.gen.seed
    gen_dataset(cfg.n_source, True, cfg.source_domain, cfg.gen, seed, out / SOURCE_STEM, domain="source")
    gen_dataset(
        cfg.n_target, False, cfg.target_domain, cfg.gen, seed, out / TARGET_STEM,
        domain="target", sealed_labels_path=out / SEALED_LABELS,
    )
    (out / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    print(f"wrote {cfg.n_source} source and {cfg.n_target} target videos to {out}")
    return EXIT_OK


def _load_data(data_dir: Path):
    src = data_dir / f"{SOURCE_STEM}.json"
    tgt = data_dir / f"{TARGET_STEM}.json"
    if not src.exists() or not tgt.exists():
        raise UsageError(f"no datasets under {data_dir}; run `coreda gen` first")
    return load_dataset(src), load_dataset(tgt)


def _train_overrides(args) -> dict:
    t = {}
    for flag, key in [
        ("no_sup_rel", "disable_sup_rel"),
        ("no_sup_abs", "disable_sup_abs"),
        ("no_cons_s", "disable_cons_s"),
        ("no_cons_t", "disable_cons_t"),
        ("no_stopgrad", "disable_stopgrad"),
    ]:
        if getattr(args, flag):
            t[key] = True
    if args.epochs is not None:
        t["epochs"] = args.epochs
    return {"train": t} if t else {}


def cmd_train(args) -> int:
    cfg = _config(args, _train_overrides(args))
    data_dir = Path(args.data)
    D_S, D_T = _load_data(data_dir)
    out = Path(args.out)
    enc = cfg.encoder
    if args.mode == "coreda":
        train_coreda(D_S, D_T, cfg.train, enc, out_dir=out)
    elif args.mode == "source-only":
        train_source_only(D_S, cfg.train, enc, out_dir=out)
    else:
        # the few-shot labels are the only target labels training may read
        sealed = read_sealed_labels(data_dir / SEALED_LABELS)
        rng = np.random.default_rng([cfg.train.seed, 3])
        ids = sorted(rng.choice([v.id for v in D_T], size=cfg.train.n_shots, replace=False).tolist())
        out.mkdir(parents=True, exist_ok=True)
        (out / LABELED_IDS).write_text(json.dumps(ids))
        train_semisupervised(D_S, D_T, {i: sealed[i] for i in ids}, cfg.train, enc, out_dir=out)
    (out / "run_config.json").write_text(json.dumps({"mode": args.mode, **cfg.to_dict()}, indent=1))
    print(f"checkpoint written to {out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    run_dir = Path(args.run)
    ck_path = run_dir / "checkpoint.bin" if run_dir.is_dir() else run_dir
    if not ck_path.exists():
        raise UsageError(f"no checkpoint at {ck_path}")
    ck = read_checkpoint(ck_path)
    m = ck.model
    mode = ck.extra.get("mode", "coreda")
    data_dir = Path(args.data)
    D_S, D_T = _load_data(data_dir)
    if args.split == "source":
        videos, labels = D_S, {v.id: v.label for v in D_S}
    else:
        videos, labels = D_T, read_sealed_labels(data_dir / SEALED_LABELS)
    exclude = set()
    ids_file = ck_path.parent / LABELED_IDS
    if args.split == "target" and ids_file.exists():
        exclude = set(json.loads(ids_file.read_text()))
    videos = [v for v in videos if v.id not in exclude]
    if videos and videos[0].frames.shape[1:] != (m.cfg.c, m.cfg.h, m.cfg.w):
        raise ConfigConflictError("checkpoint input geometry does not match the dataset")

    head = args.head or ("abs" if mode == "source-only" else "rel")
    lam = 0.0 if args.no_bg_mix else (args.lam if args.lam is not None else cfg.mix.lam)
    M = args.M if args.M is not None else cfg.M
    if head == "rel":
        ex = select_exemplars(D_S, M, np.random.default_rng([cfg.train.seed, 4]))
        predictor = Predictor(m, ex, MixConfig(lam))

        def one(v):
            out = predictor(v)
            return out.prediction, out.per_exemplar.tolist()
    else:
        def one(v):
            return predict_absolute(m, v), []

    if args.workers > 1:
        with ThreadPoolExecutor(args.workers) as pool:
            results = list(pool.map(one, videos))
    else:
        results = [one(v) for v in videos]
    rows = [
        {"id": v.id, "true_label": labels[v.id], "prediction": p, "per_exemplar": per}
        for v, (p, per) in zip(videos, results)
    ]
    report = EvalReport.from_predictions([r["prediction"] for r in rows], [r["true_label"] for r in rows], rows)
    out = Path(args.out) if args.out else ck_path.parent
    stem = f"eval_{args.split}"
    report.write(out, stem)
    print(json.dumps(report.summary(), indent=1))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_suite(args.seed or 0)
    for line in report.lines():
        print(line)
    print("gradcheck:", "PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coreda", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config overlay")
        sp.add_argument("--profile", default="desk", choices=["desk", "full"])
        sp.add_argument("--seed", type=int)

    g = sub.add_parser("gen", help="generate source and target datasets")
    common(g)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--mode", choices=["coreda", "source-only", "semi-sup"], default="coreda")
    t.add_argument("--epochs", type=int)
    for flag in ("no-sup-rel", "no-sup-abs", "no-cons-s", "no-cons-t", "no-stopgrad"):
        t.add_argument(f"--{flag}", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("--run", required=True, help="run directory or checkpoint file")
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.add_argument("--split", choices=["target", "source"], default="target")
    e.add_argument("--head", choices=["rel", "abs"])
    e.add_argument("--M", type=int)
    e.add_argument("--lambda", dest="lam", type=float)
    e.add_argument("--no-bg-mix", action="store_true")
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, ConfigError, ConfigConflictError, CheckpointError, FormatError, ContractError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
