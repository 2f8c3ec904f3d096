"""End-to-end orchestration: corpus preparation, budgeted dataset assembly,
the training loop with warmup + step decay, evaluation, and few-shot sweeps.

The frozen boundary is audited with checksums: text embeddings, adapted
visual tokens, and the PCA model must hash identically before and after
every training run.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff
from .adapter import AdapterPlan, MemoryRegime, PCAModel, TokenSequence, adaptive_avg_pool, apply_adapter, fit_pca, plan_adaptation
from .autodiff import Tape, backward
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .encoders import make_encoder, profile_for
from .errors import ConfigError, DataError, GenerationExhausted, NumericError
from .feature_store import FeatureStore
from .model import ANSWER_TYPE_ORDER, ReasoningModule, predict_answer
from .optim import AdamW, LrSchedule, lr_at
from .questions import FAMILIES, Question, generate_questions, load_questions
from .scenes import DEFAULT_VOCAB, Scene, load_scenes, sample_scene
from .seeding import substream
from .text import FrozenTextEmbedder


@dataclass
class Corpus:
    """Scenes, questions, and native encoder tokens, before any budgeting."""

    scenes: dict[int, Scene]
    questions: list[Question]
    native: dict[int, TokenSequence]
    encoder_name: str
    geometry: object
    profile: object
    text_dim: int
    text_table: np.ndarray  # frozen [V, d_text]
    text_ids: list[np.ndarray]  # per question
    text_checksum: str


@dataclass
class Split:
    scene_ids: list[int]
    visual: np.ndarray  # [n_scenes, N_v, d]
    visual_valid: np.ndarray  # [n_scenes, N_v]
    q_scene: np.ndarray  # [n_q] row index into visual
    q_scene_id: np.ndarray  # [n_q] scene identifier
    text_ids: np.ndarray  # [n_q, T]
    text_mask: np.ndarray  # [n_q, T]
    y_type: np.ndarray
    y_value: np.ndarray
    family: np.ndarray

    @property
    def n_questions(self) -> int:
        return len(self.q_scene)


@dataclass
class BudgetedDataset:
    train: Split
    val: Split
    plan: AdapterPlan
    pca: PCAModel | None
    grid_ids: np.ndarray | None
    text_table: np.ndarray
    d_text: int
    checksums: dict[str, str]
    pca_fit_scene_ids: list[int] = field(default_factory=list)


@dataclass
class MetricsReport:
    overall: float
    per_family: dict[str, float]
    family_counts: dict[str, int]
    answer_type_accuracy: float
    curve: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_family": self.per_family,
            "family_counts": self.family_counts,
            "answer_type_accuracy": self.answer_type_accuracy,
            "curve": self.curve,
        }


def _sha(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def prepare_corpus(cfg: ExperimentConfig) -> Corpus:
    """Sample (or load) scenes and questions, run the frozen encoder."""
    d = cfg.dataset
    total = d.train_scenes + d.val_scenes
    per_family = d.per_family()
    if d.scenes_path:
        scene_list = load_scenes(d.scenes_path)
        if len(scene_list) < total:
            raise DataError(f"{d.scenes_path} holds {len(scene_list)} scenes, config needs {total}")
        scene_list = scene_list[:total]
        scenes = {s.id: s for s in scene_list}
        if len(scenes) != len(scene_list):
            raise DataError("duplicate scene ids in corpus")
        if d.questions_path:
            questions = load_questions(d.questions_path, scenes)
        else:
            questions = []
            for s in scene_list:
                questions.extend(generate_questions(s, d.seed, per_family=per_family))
    else:
        # A scene variant that cannot host the full question complement
        # (e.g. no two uniquely describable objects) is resampled.
        scene_list = []
        questions = []
        for i in range(total):
            for variant in range(50):
                scene = sample_scene(d.seed, (d.min_objects, d.max_objects), scene_id=i, variant=variant)
                try:
                    qs = generate_questions(scene, d.seed, per_family=per_family)
                except GenerationExhausted:
                    continue
                scene_list.append(scene)
                questions.extend(qs)
                break
            else:
                raise GenerationExhausted(f"scene {i}: no viable variant after 50 resamples")
        scenes = {s.id: s for s in scene_list}
    encoder = make_encoder(cfg.encoder.profile, cfg.encoder.raster_size)
    native = {s.id: encoder.encode(s) for s in scene_list}
    if cfg.encoder.text.startswith("store:"):
        store = FeatureStore(cfg.encoder.text[len("store:"):])
        if store.geometry.kind != "text":
            raise ConfigError("text store must carry text geometry")
        lengths = store.manifest.get("lengths", {})
        table = None
        text_ids = []
        embeddings = []
        for i, _q in enumerate(questions):
            mat = store.get(str(i))
            n = int(lengths.get(str(i), mat.shape[0]))
            embeddings.append(mat[:n])
        d_text = store.geometry.dim
        corpus_text = _StoreText(embeddings)
        checksum = hashlib.sha256(Path(cfg.encoder.text[len("store:"):]).read_bytes()).hexdigest()
        return Corpus(
            scenes=scenes, questions=questions, native=native, encoder_name=encoder.name,
            geometry=encoder.geometry, profile=profile_for(encoder), text_dim=d_text,
            text_table=corpus_text, text_ids=[], text_checksum=checksum,
        )
    embedder = FrozenTextEmbedder(d_text=cfg.encoder.text_dim)
    text_ids = [embedder.encode_ids(q.text) for q in questions]
    return Corpus(
        scenes=scenes, questions=questions, native=native, encoder_name=encoder.name,
        geometry=encoder.geometry, profile=profile_for(encoder), text_dim=embedder.d_text,
        text_table=embedder.table, text_ids=text_ids, text_checksum=embedder.checksum(),
    )


class _StoreText:
    """Precomputed per-question embeddings (ingestion path)."""

    def __init__(self, embeddings: list[np.ndarray]):
        self.embeddings = embeddings


def _answer_targets(q: Question) -> tuple[int, int]:
    kind = q.answer_type
    type_idx = ANSWER_TYPE_ORDER.index(kind)
    if kind == "binary":
        return type_idx, int(bool(q.answer))
    if kind == "count":
        return type_idx, int(q.answer)
    return type_idx, DEFAULT_VOCAB.answer_index(str(q.answer))


def _build_split(corpus: Corpus, scene_ids: list[int], adapted: dict[int, TokenSequence], max_text_len: int) -> Split:
    keep = set(scene_ids)
    row_of = {sid: i for i, sid in enumerate(scene_ids)}
    n_v, dim = adapted[scene_ids[0]].values.shape
    visual = np.stack([adapted[sid].values for sid in scene_ids]).astype(np.float32)
    valid = np.stack([
        adapted[sid].valid if adapted[sid].valid is not None else np.ones(n_v, dtype=bool)
        for sid in scene_ids
    ])
    q_idx = [i for i, q in enumerate(corpus.questions) if q.scene_id in keep]
    if not q_idx:
        raise DataError("split contains no questions")
    if isinstance(corpus.text_table, _StoreText):
        lengths = [len(corpus.text_table.embeddings[i]) for i in q_idx]
    else:
        lengths = [len(corpus.text_ids[i]) for i in q_idx]
    t_max = max(lengths)
    if t_max > max_text_len:
        raise DataError(f"question length {t_max} exceeds model max_text_len {max_text_len}")
    text_ids = np.zeros((len(q_idx), t_max), dtype=np.int32)
    text_mask = np.zeros((len(q_idx), t_max), dtype=bool)
    y_type = np.zeros(len(q_idx), dtype=np.int64)
    y_value = np.zeros(len(q_idx), dtype=np.int64)
    family = np.zeros(len(q_idx), dtype=np.int64)
    q_scene = np.zeros(len(q_idx), dtype=np.int64)
    q_scene_id = np.zeros(len(q_idx), dtype=np.int64)
    for row, i in enumerate(q_idx):
        q = corpus.questions[i]
        if not isinstance(corpus.text_table, _StoreText):
            ids = corpus.text_ids[i]
            text_ids[row, : len(ids)] = ids
        text_mask[row, : lengths[row]] = True
        y_type[row], y_value[row] = _answer_targets(q)
        family[row] = FAMILIES.index(q.family)
        q_scene[row] = row_of[q.scene_id]
        q_scene_id[row] = q.scene_id
    split = Split(
        scene_ids=scene_ids, visual=visual, visual_valid=valid, q_scene=q_scene,
        q_scene_id=q_scene_id, text_ids=text_ids, text_mask=text_mask,
        y_type=y_type, y_value=y_value, family=family,
    )
    if isinstance(corpus.text_table, _StoreText):
        split.store_rows = [corpus.text_table.embeddings[i] for i in q_idx]  # type: ignore[attr-defined]
    return split


def build_dataset(cfg: ExperimentConfig, corpus: Corpus | None = None, fraction: float | None = None) -> BudgetedDataset:
    """Split scenes, limit the training split to `fraction`, fit the adapter
    on training data only, and assemble model-ready arrays."""
    cfg.validate()
    if corpus is None:
        corpus = prepare_corpus(cfg)
    if fraction is None:
        fraction = cfg.training.fraction
    d = cfg.dataset
    all_ids = sorted(corpus.scenes)
    rng = substream(d.seed, "split")
    perm = rng.permutation(len(all_ids))
    train_ids = [all_ids[i] for i in perm[: d.train_scenes]]
    val_ids = [all_ids[i] for i in perm[d.train_scenes : d.train_scenes + d.val_scenes]]
    kept = max(1, int(np.floor(fraction * len(train_ids) + 0.5)))
    train_ids = train_ids[:kept]
    regime = MemoryRegime(cfg.budget)
    plan = plan_adaptation(corpus.geometry, regime, corpus.profile)
    pca = None
    fit_ids: list[int] = []
    if plan.mode == "compress":
        pools = []
        for sid in train_ids:
            tok = corpus.native[sid]
            values = tok.values
            if tok.kind == "grid":
                h, w = tok.grid
                values = adaptive_avg_pool(values.reshape(h, w, -1), plan.pooled_grid[0]).reshape(plan.n_tokens, -1)
            pools.append(values)
            fit_ids.append(sid)
        samples = np.concatenate(pools, axis=0)
        pca = fit_pca(samples, plan.dim)
    adapted = {sid: apply_adapter(plan, pca, corpus.native[sid]) for sid in corpus.scenes}
    grid_ids = None
    if plan.pooled_grid is not None and corpus.profile.positional:
        g = plan.pooled_grid[0]
        grid_ids = np.array([i * 4 + j for i in range(g) for j in range(g)], dtype=np.int64)
    train = _build_split(corpus, train_ids, adapted, cfg.model.max_text_len)
    val = _build_split(corpus, val_ids, adapted, cfg.model.max_text_len)
    checksums = {
        "text": corpus.text_checksum,
        "visual": _sha(train.visual, val.visual),
        "pca": _sha(pca.mean, pca.components, pca.explained_variance) if pca else "none",
    }
    table = corpus.text_table if not isinstance(corpus.text_table, _StoreText) else None
    ds = BudgetedDataset(
        train=train, val=val, plan=plan, pca=pca, grid_ids=grid_ids,
        text_table=table, d_text=corpus.text_dim, checksums=checksums, pca_fit_scene_ids=fit_ids,
    )
    _audit_split_hygiene(ds)
    return ds


def _audit_split_hygiene(ds: BudgetedDataset) -> None:
    train_set = set(ds.train.scene_ids)
    val_set = set(ds.val.scene_ids)
    if train_set & val_set:
        raise DataError(f"split leak: scenes {sorted(train_set & val_set)[:5]} in both splits")
    if not set(ds.pca_fit_scene_ids) <= train_set:
        raise DataError("PCA was fitted on scenes outside the training split")


def _gather_text(split: Split, table: np.ndarray | None, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = split.text_mask[idx]
    t = int(mask.any(axis=0).sum()) or 1
    mask = mask[:, :t]
    if table is None:
        rows = split.store_rows  # type: ignore[attr-defined]
        d = rows[0].shape[1]
        emb = np.zeros((len(idx), t, d), dtype=np.float32)
        for r, i in enumerate(idx):
            emb[r, : len(rows[i])] = rows[i][:t]
        return emb, mask
    return table[split.text_ids[idx][:, :t]], mask


def _forward_batch(model: ReasoningModule, ds: BudgetedDataset, split: Split, idx: np.ndarray,
                   tape: Tape | None, training: bool, rng) -> object:
    emb, mask = _gather_text(split, ds.text_table, idx)
    vis = split.visual[split.q_scene[idx]]
    valid = split.visual_valid[split.q_scene[idx]]
    fused, full_mask = model.project_inputs(tape, emb, mask, vis, valid, grid_ids=ds.grid_ids)
    return model.forward(tape, fused, full_mask, training=training, rng=rng)


def evaluate_split(model: ReasoningModule, ds: BudgetedDataset, split: Split, batch_size: int = 256,
                   with_loss: bool = False) -> tuple[MetricsReport, float | None]:
    n = split.n_questions
    correct = np.zeros(n, dtype=bool)
    type_correct = np.zeros(n, dtype=bool)
    losses = []
    weights = []
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        bundle = _forward_batch(model, ds, split, idx, None, False, None)
        preds = predict_answer(bundle)
        for r, (t_hat, v_hat) in enumerate(preds):
            i = idx[r]
            type_correct[i] = t_hat == split.y_type[i]
            correct[i] = type_correct[i] and v_hat == split.y_value[i]
        if with_loss:
            lb = model.compute_loss(None, bundle, split.y_type[idx], split.y_value[idx])
            losses.append(lb.total_value)
            weights.append(len(idx))
    per_family = {}
    counts = {}
    for k, fam in enumerate(FAMILIES):
        rows = split.family == k
        counts[fam] = int(rows.sum())
        per_family[fam] = float(correct[rows].mean()) if rows.any() else 0.0
    report = MetricsReport(
        overall=float(correct.mean()),
        per_family=per_family,
        family_counts=counts,
        answer_type_accuracy=float(type_correct.mean()),
    )
    val_loss = float(np.average(losses, weights=weights)) if losses else None
    return report, val_loss


@dataclass
class TrainResult:
    model: ReasoningModule
    report: MetricsReport
    metrics: dict
    out_dir: Path | None


def train_run(
    cfg: ExperimentConfig,
    corpus: Corpus | None = None,
    fraction: float | None = None,
    out_dir=None,
    label: str | None = None,
) -> TrainResult:
    """Train the reasoning module per the configured schedule; retain the
    best-validation checkpoint; audit the frozen boundary."""
    t_start = time.time()
    cfg.validate()
    if corpus is None:
        corpus = prepare_corpus(cfg)
    ds = build_dataset(cfg, corpus, fraction=fraction)
    tcfg = cfg.training
    autodiff.CHECK_FINITE = tcfg.mode == "serial"
    n_train = ds.train.n_questions
    iters_per_epoch = max(1, n_train // tcfg.batch_size)
    total_iters = iters_per_epoch * tcfg.epochs
    warmup = cfg.resolved_warmup(total_iters)
    schedule = LrSchedule(
        base_lr=tcfg.base_lr, warmup_iters=warmup, decay_epochs=tuple(tcfg.decay_epochs),
        decay_factor=tcfg.decay_factor, iters_per_epoch=iters_per_epoch,
    )
    model = ReasoningModule(cfg.model, d_text=ds.d_text, d_visual=ds.plan.dim, seed=cfg.dataset.seed)
    optimizer = AdamW(model.params)
    train_rng = substream(cfg.dataset.seed, "train-loop")
    curve: list[dict] = []
    best = {"accuracy": -1.0, "epoch": -1, "params": None}
    max_disconnected = 0
    iteration = 0
    for epoch in range(tcfg.epochs):
        perm = train_rng.permutation(n_train)
        for step in range(iters_per_epoch):
            idx = perm[step * tcfg.batch_size : (step + 1) * tcfg.batch_size]
            if idx.size == 0:
                idx = perm
            tape = Tape()
            try:
                bundle = _forward_batch(model, ds, ds.train, idx, tape, True, train_rng)
                loss = model.compute_loss(tape, bundle, ds.train.y_type[idx], ds.train.y_value[idx])
            except NumericError as exc:
                raise NumericError(f"iteration {iteration}: {exc}") from exc
            if not np.isfinite(loss.total_value):
                raise NumericError(f"non-finite loss at iteration {iteration}")
            optimizer.zero_grad()
            missing = backward(tape, loss.total, params=model.params)
            max_disconnected = max(max_disconnected, len(missing))
            optimizer.step(lr=lr_at(schedule, iteration, epoch), weight_decay=tcfg.weight_decay)
            if iteration % tcfg.log_interval == 0:
                curve.append({"iteration": iteration, "epoch": epoch,
                              "train_loss": loss.total_value, "val_loss": None, "val_accuracy": None})
            iteration += 1
        val_report, val_loss = evaluate_split(model, ds, ds.val, with_loss=True)
        curve.append({"iteration": iteration, "epoch": epoch, "train_loss": None,
                      "val_loss": val_loss, "val_accuracy": val_report.overall})
        if val_report.overall > best["accuracy"]:
            best = {
                "accuracy": val_report.overall,
                "epoch": epoch,
                "params": {k: p.data.copy() for k, p in model.params.items()},
            }
    final_epoch_report, _ = evaluate_split(model, ds, ds.val)
    final_params = {k: p.data.copy() for k, p in model.params.items()}
    if best["params"] is not None:
        model.load_state(best["params"])
    headline, _ = evaluate_split(model, ds, ds.val)
    headline.curve = curve
    # Frozen boundary audit: nothing outside the reasoning module may move.
    after = {
        "text": ds.checksums["text"] if ds.text_table is None else hashlib.sha256(ds.text_table.tobytes()).hexdigest(),
        "visual": _sha(ds.train.visual, ds.val.visual),
        "pca": _sha(ds.pca.mean, ds.pca.components, ds.pca.explained_variance) if ds.pca else "none",
    }
    frozen_ok = after == ds.checksums
    if not frozen_ok:
        raise NumericError("frozen-boundary audit failed: checksums changed during training")
    metrics = {
        "label": label or f"{corpus.encoder_name}-{cfg.budget}",
        "encoder": corpus.encoder_name,
        "budget": cfg.budget,
        "fraction": fraction if fraction is not None else tcfg.fraction,
        "train_scenes": len(ds.train.scene_ids),
        "val_scenes": len(ds.val.scene_ids),
        "n_train_questions": int(n_train),
        "n_val_questions": int(ds.val.n_questions),
        "plan": {"n_tokens": ds.plan.n_tokens, "dim": ds.plan.dim, "mode": ds.plan.mode},
        "schedule": {"warmup_iters": warmup, "iters_per_epoch": iters_per_epoch,
                     "total_iters": total_iters, "decay_epochs": list(tcfg.decay_epochs)},
        "best_epoch": best["epoch"],
        "final_epoch_overall": final_epoch_report.overall,
        "checksums": ds.checksums,
        "frozen_boundary_ok": frozen_ok,
        "max_disconnected_params": max_disconnected,
        "run_seconds": time.time() - t_start,
        "report": headline.to_dict(),
    }
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        meta = {"config": cfg.to_dict(), "plan": metrics["plan"], "d_text": ds.d_text,
                "grid_ids": None if ds.grid_ids is None else ds.grid_ids.tolist(),
                "label": metrics["label"]}
        save_checkpoint(out_path / "checkpoint_best.vqck", model.params, optimizer=None,
                        rng=train_rng, metadata=meta)
        final_model_params = {k: autodiff.Tensor(v, name=k) for k, v in final_params.items()}
        save_checkpoint(out_path / "checkpoint_final.vqck", final_model_params,
                        optimizer=optimizer, rng=train_rng, metadata=meta)
        (out_path / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))
        (out_path / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True))
        from .report import write_run_artifacts

        write_run_artifacts(out_path)
    return TrainResult(model=model, report=headline, metrics=metrics, out_dir=out_path)


def evaluate_checkpoint(cfg: ExperimentConfig, checkpoint_path, split: str = "val") -> MetricsReport:
    blob = load_checkpoint(checkpoint_path)
    corpus = prepare_corpus(cfg)
    ds = build_dataset(cfg, corpus)
    meta = blob["metadata"]
    stored_plan = meta.get("plan")
    if stored_plan and (stored_plan["n_tokens"], stored_plan["dim"]) != (ds.plan.n_tokens, ds.plan.dim):
        raise DataError(
            f"geometry mismatch: checkpoint adapted to {stored_plan['n_tokens']}x{stored_plan['dim']}, "
            f"dataset provides {ds.plan.n_tokens}x{ds.plan.dim}"
        )
    model = ReasoningModule(cfg.model, d_text=ds.d_text, d_visual=ds.plan.dim, seed=cfg.dataset.seed)
    model.load_state(blob["params"])
    data = ds.val if split == "val" else ds.train
    report, _ = evaluate_split(model, ds, data)
    return report


def fewshot_sweep(cfg: ExperimentConfig, fractions: list[float] | None = None, out_dir=None) -> list[dict]:
    """One independent run per training fraction over a shared validation set."""
    fractions = list(fractions if fractions is not None else cfg.sweep_fractions)
    if not fractions:
        raise ConfigError("sweep needs at least one fraction")
    for f in fractions:
        if not (0.0 < f <= 1.0):
            raise ConfigError(f"sweep fraction {f} outside (0, 1]")
    corpus = prepare_corpus(cfg)
    points = []
    base = Path(out_dir) if out_dir is not None else None
    for f in sorted(fractions):
        run_dir = base / f"fraction_{f:g}" if base is not None else None
        result = train_run(cfg, corpus=corpus, fraction=f, out_dir=run_dir,
                           label=f"{corpus.encoder_name}-{cfg.budget}-f{f:g}")
        points.append({"fraction": f, "metrics": result.metrics})
    if base is not None:
        base.mkdir(parents=True, exist_ok=True)
        (base / "sweep.json").write_text(json.dumps(points, indent=1, sort_keys=True))
        from .report import write_sweep_artifacts

        write_sweep_artifacts(base)
    return points
