"""Command-line interface.

Subcommands: gen-data, encode, fit-adapter, train, eval, sweep, report.
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
VQAPROBE_THREADS caps BLAS thread count (read before numpy loads).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_threads = os.environ.get("VQAPROBE_THREADS")
if _threads:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, _threads)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqaprobe", description=__doc__)
    parser.add_argument("--config", help="TOML or JSON experiment file")
    parser.add_argument("--seed", type=int, help="override dataset seed")
    parser.add_argument("--serial", action="store_true", help="force serial (bit-deterministic) mode")
    parser.add_argument("--out", help="override output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", help="sample scenes and questions, write JSON (+ optional PNGs)")
    p = sub.add_parser("encode", help="run a built-in encoder over scenes into a VQFS store")
    p.add_argument("--profile", default=None, help="gt | raw | text (default: config encoder)")
    p.add_argument("--scenes", help="scenes JSON (default: sample per config)")
    p.add_argument("--questions", help="questions JSON (text profile only)")
    p.add_argument("--store", required=True, help="output store path")

    p = sub.add_parser("fit-adapter", help="fit a PCA compressor for a store under a memory regime")
    p.add_argument("--store", required=True)
    p.add_argument("--pca-out", required=True)

    sub.add_parser("train", help="train the reasoning module per the config")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="val", choices=["train", "val"])

    sub.add_parser("sweep", help="few-shot sweep over training fractions")

    p = sub.add_parser("report", help="regenerate report artifacts for a run directory")
    p.add_argument("--run", required=True)

    p = sub.add_parser("render", help="rasterize scenes to PNG files")
    p.add_argument("--scenes", required=True)
    p.add_argument("--dir", required=True)
    p.add_argument("--size", type=int, default=192)
    return parser


def _load_config(args):
    from .config import ExperimentConfig, load_config

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.dataset.seed = args.seed
    if args.serial:
        cfg.training.mode = "serial"
    if args.out:
        cfg.out_dir = args.out
    cfg.validate()
    return cfg


def _cmd_gen_data(cfg):
    from pathlib import Path

    from .harness import prepare_corpus
    from .questions import questions_to_json
    from .scenes import save_scenes

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = prepare_corpus(cfg)
    scenes = [corpus.scenes[k] for k in sorted(corpus.scenes)]
    save_scenes(scenes, out / "scenes.json")
    (out / "questions.json").write_text(json.dumps(questions_to_json(corpus.questions)))
    print(f"wrote {len(scenes)} scenes and {len(corpus.questions)} questions to {out}")


def _cmd_encode(cfg, args):
    import numpy as np

    from .encoders import make_encoder
    from .feature_store import EncoderGeometry, write_store
    from .questions import load_questions
    from .scenes import load_scenes, sample_scene
    from .text import FrozenTextEmbedder

    profile = args.profile or cfg.encoder.profile
    if args.scenes:
        scenes = load_scenes(args.scenes)
    else:
        d = cfg.dataset
        scenes = [sample_scene(d.seed, (d.min_objects, d.max_objects), scene_id=i)
                  for i in range(d.train_scenes + d.val_scenes)]
    if profile == "text":
        if not args.questions:
            raise SystemExit("encode --profile text needs --questions")
        questions = load_questions(args.questions, {s.id: s for s in scenes})
        embedder = FrozenTextEmbedder(d_text=cfg.encoder.text_dim)
        embedded = [embedder.embed(q.text).embedding for q in questions]
        n_max = max(e.shape[0] for e in embedded)
        records = []
        lengths = {}
        for i, emb in enumerate(embedded):
            padded = np.zeros((n_max, embedder.d_text), dtype=np.float32)
            padded[: emb.shape[0]] = emb
            records.append((str(i), padded))
            lengths[str(i)] = emb.shape[0]
        geometry = EncoderGeometry("text", n_max, embedder.d_text)
        write_store(records, geometry, args.store, encoder="builtin-text",
                    notes="frozen seeded text embeddings")
        import json as _json
        from .feature_store import manifest_path

        manifest = _json.loads(manifest_path(args.store).read_text())
        manifest["lengths"] = lengths
        manifest_path(args.store).write_text(_json.dumps(manifest, indent=1, sort_keys=True))
        print(f"wrote text store with {len(records)} question records to {args.store}")
        return
    encoder = make_encoder(profile, cfg.encoder.raster_size)
    records = [(s.id, encoder.encode(s).values.astype(np.float32)) for s in scenes]
    write_store(records, encoder.geometry, args.store, encoder=encoder.name,
                notes=f"built-in {encoder.name} encoder")
    print(f"wrote {len(records)} records ({encoder.geometry.n_tokens}x{encoder.geometry.dim}) to {args.store}")


def _cmd_fit_adapter(cfg, args):
    import numpy as np

    from .adapter import MemoryRegime, adaptive_avg_pool, fit_pca, plan_adaptation, save_pca
    from .encoders import profile_for
    from .feature_store import FeatureStore

    store = FeatureStore(args.store)

    class _Shim:
        name = store.encoder
        geometry = store.geometry

    plan = plan_adaptation(store.geometry, MemoryRegime(cfg.budget), profile_for(_Shim()))
    if plan.mode != "compress":
        print(f"plan {plan.n_tokens}x{plan.dim} mode={plan.mode}: no PCA needed")
        return
    pools = []
    for sid in store.sample_ids():
        mat = store.get(sid)
        if store.geometry.kind == "grid":
            h, w = store.geometry.grid
            mat = adaptive_avg_pool(mat.reshape(h, w, -1), plan.pooled_grid[0]).reshape(plan.n_tokens, -1)
        pools.append(mat)
    model = fit_pca(np.concatenate(pools, axis=0), plan.dim)
    save_pca(model, args.pca_out)
    print(f"fitted PCA {plan.native_dim} -> {plan.dim} on {len(pools)} records; saved to {args.pca_out}")


def _cmd_train(cfg):
    from .harness import train_run

    result = train_run(cfg, out_dir=cfg.out_dir)
    rep = result.report
    print(f"overall validation accuracy: {rep.overall:.4f}")
    for fam, acc in rep.per_family.items():
        print(f"  {fam}: {acc:.4f}")
    print(f"artifacts in {result.out_dir}")


def _cmd_eval(cfg, args):
    from .harness import evaluate_checkpoint

    report = evaluate_checkpoint(cfg, args.checkpoint, split=args.split)
    print(json.dumps(report.to_dict(), indent=1, sort_keys=True))


def _cmd_sweep(cfg):
    from .harness import fewshot_sweep

    points = fewshot_sweep(cfg, out_dir=cfg.out_dir)
    for p in points:
        print(f"fraction {p['fraction']:g}: overall {p['metrics']['report']['overall']:.4f}")


def _cmd_report(args):
    from .report import report_directory

    for path in report_directory(args.run):
        print(f"wrote {path}")


def _cmd_render(cfg, args):
    from pathlib import Path

    from .scenes import image_to_png, load_scenes, rasterize_scene

    out = Path(args.dir)
    out.mkdir(parents=True, exist_ok=True)
    scenes = load_scenes(args.scenes)
    for s in scenes:
        image_to_png(rasterize_scene(s, args.size, args.size), out / f"scene_{s.id:06d}.png")
    print(f"rendered {len(scenes)} scenes to {out}")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    from .errors import ConfigError, DataError, NumericError

    try:
        if args.command == "report":
            _cmd_report(args)
            return 0
        cfg = _load_config(args)
        if args.command == "gen-data":
            _cmd_gen_data(cfg)
        elif args.command == "encode":
            _cmd_encode(cfg, args)
        elif args.command == "fit-adapter":
            _cmd_fit_adapter(cfg, args)
        elif args.command == "train":
            _cmd_train(cfg)
        elif args.command == "eval":
            _cmd_eval(cfg, args)
        elif args.command == "sweep":
            _cmd_sweep(cfg)
        elif args.command == "render":
            _cmd_render(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
