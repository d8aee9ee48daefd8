"""Pipeline commands: file-based stage handoff with manifest records.

Every command acquires the output-directory lock, verifies its upstream
artifacts, writes its own artifacts, and appends a manifest line with input
and output hashes.  Stage outputs are pure functions of (inputs, config,
seeds), which the manifest hashes make checkable.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .. import corpus, hardness, vrrmodel
from ..corpus import SyntheticWorld, Triplet, TripletDataset
from ..diffusion import (
    DiffusionTrainConfig,
    RANDOM_SEED_MODE,
    SO_SEED_MODE,
    generate_for_augmented,
    linear_schedule,
    load_diffusion,
    save_diffusion,
    train,
)
from ..diffusion.checkpoint import CheckpointMismatchError
from ..encoders import EmbeddingStore, store_read, store_write, synthetic_text_encode
from ..taxonomy import Taxonomy
from .config import ConfigError, DependencyError, PipelineConfig
from .manifest import append_record, output_lock

ART = {
    "dataset": "dataset.tsv",
    "test_dataset": "test_dataset.tsv",
    "object_vocab": "objects.txt",
    "relation_vocab": "relations.txt",
    "taxonomy": "taxonomy.tsv",
    "regions": "regions.emb",
    "boxes": "boxes.emb",
    "text": "text.emb",
    "test_regions": "test_regions.emb",
    "world": "world.json",
    "augmented": "augmented.tsv",
    "aug_text": "aug_text.emb",
    "kmeans": "kmeans.emb",
    "diffusion": "diffusion.ckpt",
    "generated": "generated.emb",
    "baseline": "baseline.ckpt",
    "finetuned": "finetuned.ckpt",
}

_PATH_KEYS = {
    "dataset": "dataset_path",
    "test_dataset": "test_dataset_path",
    "object_vocab": "object_vocab_path",
    "relation_vocab": "relation_vocab_path",
    "taxonomy": "taxonomy_path",
    "regions": "region_store_path",
    "boxes": "box_store_path",
    "text": "text_store_path",
    "test_regions": "test_region_store_path",
    "world": "world_path",
    "aug_text": "aug_text_store_path",
}


def artifact_path(cfg: PipelineConfig, name: str) -> Path:
    key = _PATH_KEYS.get(name)
    if key is not None:
        return cfg.artifact(key, ART[name])
    return cfg.out() / ART[name]


def _require(cfg: PipelineConfig, name: str, producer: str) -> Path:
    path = artifact_path(cfg, name)
    if not path.exists():
        raise DependencyError(
            f"missing {name} artifact at {path}; produce it with `tailforge {producer}`"
        )
    return path


def _with_sidecar(path: Path) -> dict[str, Path]:
    out = {path.name: path}
    idx = Path(str(path) + ".idx")
    if idx.exists():
        out[idx.name] = idx
    meta = Path(str(path) + ".meta.json")
    if meta.exists():
        out[meta.name] = meta
    return out


def _run(cfg: PipelineConfig, command: str, body: Callable[[], tuple[dict, dict]]) -> dict[str, Path]:
    start = time.monotonic()
    with output_lock(cfg.out_dir):
        inputs, outputs = body()
        append_record(cfg.out(), command, cfg.snapshot(), inputs, outputs,
                      time.monotonic() - start)
    return outputs


def _load_dataset(cfg: PipelineConfig, producer: str = "synth-bench") -> tuple[TripletDataset, dict]:
    inputs = {
        "dataset": _require(cfg, "dataset", producer),
        "object_vocab": _require(cfg, "object_vocab", producer),
        "relation_vocab": _require(cfg, "relation_vocab", producer),
    }
    ds = TripletDataset.from_files(
        inputs["dataset"], inputs["object_vocab"], inputs["relation_vocab"]
    )
    return ds, inputs


def _region_rows(ds: TripletDataset, store: EmbeddingStore) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    labels = []
    for i, t in enumerate(ds.triplets):
        if t.region_key is None:
            raise ValueError(f"triplet {i} has no region key; cannot look up its embedding")
        rows.append(store.get(t.region_key))
        labels.append((t.subject_id, t.relation_id, t.object_id))
    return np.asarray(rows, dtype=np.float64), np.asarray(labels, dtype=np.int64)


# -- commands -----------------------------------------------------------------


def cmd_synth_bench(cfg: PipelineConfig) -> dict[str, Path]:
    def body():
        world, dataset, stores = corpus.generate_synthetic_world(
            num_obj_classes=cfg.synth_obj_classes,
            num_rel_classes=cfg.synth_rel_classes,
            dim_visual=cfg.synth_dim_visual,
            dim_text=cfg.synth_dim_text,
            zipf_exponent=cfg.synth_zipf,
            total_triplets=cfg.synth_triplets,
            rng_seed=cfg.synth_seed,
            noise_sigma=cfg.synth_noise_sigma,
            text_sigma=cfg.synth_text_sigma,
            boxes_per_class=cfg.synth_boxes_per_class,
        )
        test_dataset, test_regions = corpus.make_eval_set(
            world, cfg.synth_eval_samples, rng_seed=cfg.synth_seed + 1
        )
        paths = {name: artifact_path(cfg, name) for name in (
            "dataset", "test_dataset", "object_vocab", "relation_vocab", "taxonomy",
            "regions", "boxes", "text", "test_regions", "world",
        )}
        dataset.to_files(paths["dataset"], paths["object_vocab"], paths["relation_vocab"])
        test_dataset.to_files(paths["test_dataset"], paths["object_vocab"], paths["relation_vocab"])
        corpus.synthetic_taxonomy(
            world.object_labels, cfg.synth_group_size, rng_seed=cfg.synth_seed
        ).to_file(paths["taxonomy"])
        store_write(stores.regions, paths["regions"])
        store_write(stores.boxes, paths["boxes"])
        store_write(stores.text, paths["text"])
        store_write(test_regions, paths["test_regions"])
        paths["world"].write_text(
            json.dumps(world.to_json_dict(), sort_keys=True) + "\n", encoding="utf-8"
        )
        outputs = {}
        for path in paths.values():
            outputs.update(_with_sidecar(path))
        return {}, outputs

    return _run(cfg, "synth-bench", body)


def cmd_augment(cfg: PipelineConfig) -> dict[str, Path]:
    def body():
        ds, inputs = _load_dataset(cfg)
        inputs["taxonomy"] = _require(cfg, "taxonomy", "synth-bench")
        tax = Taxonomy.from_file(inputs["taxonomy"])
        result = corpus.augment_triplets(
            ds, tax, cfg.lch_threshold, cfg.budget_few, cfg.budget_medium, cfg.augment_seed
        )
        out_path = artifact_path(cfg, "augmented")
        corpus.write_augmented(out_path, result, ds)
        return inputs, {out_path.name: out_path}

    return _run(cfg, "augment", body)


def cmd_fit_hardness(cfg: PipelineConfig) -> dict[str, Path]:
    def body():
        text_path = _require(cfg, "text", "synth-bench")
        store = store_read(text_path, expect_kind="text")
        model = hardness.fit_kmeans(
            store.matrix.astype(np.float64), cfg.kmeans_k, cfg.kmeans_seed,
            max_iters=cfg.kmeans_max_iters, tol=cfg.kmeans_tol,
            n_init=cfg.kmeans_n_init,
        )
        out_path = artifact_path(cfg, "kmeans")
        hardness.save_kmeans(model, out_path)
        return {"text": text_path}, _with_sidecar(out_path)

    return _run(cfg, "fit-hardness", body)


def _condition_tokens(cfg: PipelineConfig, text_matrix: np.ndarray,
                      inputs: dict) -> list[np.ndarray]:
    tokens = [text_matrix]
    if cfg.hardness_condition:
        kmeans_path = _require(cfg, "kmeans", "fit-hardness")
        inputs["kmeans"] = kmeans_path
        model = hardness.load_kmeans(kmeans_path)
        tokens.append(hardness.hardness_matrix(text_matrix, model))
    return tokens


def cmd_train_diffusion(cfg: PipelineConfig) -> dict[str, Path]:
    def body():
        region_path = _require(cfg, "regions", "synth-bench")
        text_path = _require(cfg, "text", "synth-bench")
        inputs = {"regions": region_path, "text": text_path}
        regions = store_read(region_path, expect_kind="visual")
        text = store_read(text_path, expect_kind="text")
        missing = [k for k in regions.keys() if k not in text]
        if missing:
            raise DependencyError(
                f"{len(missing)} region rows lack a text embedding "
                f"(first: {missing[0]!r}); regenerate the text store"
            )
        order = [text.row_index(k) for k in regions.keys()]
        x0 = regions.matrix.astype(np.float64)
        text_matrix = text.matrix.astype(np.float64)[order]
        cond = _condition_tokens(cfg, text_matrix, inputs)
        schedule = linear_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)
        state = train(x0, cond, schedule, DiffusionTrainConfig(
            steps=cfg.diffusion_train_steps, batch=cfg.diffusion_batch,
            lr=cfg.diffusion_lr, seed=cfg.diffusion_train_seed,
            hidden=cfg.diffusion_hidden, depth=cfg.diffusion_depth,
            attn_width=cfg.diffusion_attn_width, time_width=cfg.diffusion_time_width,
        ))
        out_path = artifact_path(cfg, "diffusion")
        save_diffusion(out_path, state.net, schedule)
        return inputs, {out_path.name: out_path}

    return _run(cfg, "train-diffusion", body)


@dataclass(frozen=True)
class _SampleItem:
    key: str
    triplet: Triplet


def _load_world(cfg: PipelineConfig) -> SyntheticWorld:
    world_path = artifact_path(cfg, "world")
    data = json.loads(world_path.read_text(encoding="utf-8"))
    return SyntheticWorld.from_json_dict(data)


def _augmented_text_store(cfg, aug_result, inputs, outputs) -> EmbeddingStore:
    """Text embeddings for augmented triplets: explicit store, else synthesized
    from the world and persisted for downstream stages."""
    explicit = artifact_path(cfg, "aug_text")
    if explicit.exists():
        inputs["aug_text"] = explicit
        return store_read(explicit, expect_kind="text")
    world_path = artifact_path(cfg, "world")
    if not world_path.exists():
        raise DependencyError(
            f"no augmented-triplet text store at {explicit} and no world file at "
            f"{world_path}; provide aug_text_store_path or run `tailforge synth-bench`"
        )
    inputs["world"] = world_path
    world = _load_world(cfg)
    store = EmbeddingStore(width=world.dim_text, kind="text")
    for aug in aug_result.triplets:
        store.add(aug.key, synthetic_text_encode(aug.triplet, world))
    store_write(store, explicit)
    outputs.update(_with_sidecar(explicit))
    return store


def cmd_sample(cfg: PipelineConfig) -> dict[str, Path]:
    def body():
        ckpt_path = _require(cfg, "diffusion", "train-diffusion")
        aug_path = _require(cfg, "augmented", "augment")
        ds, inputs = _load_dataset(cfg)
        inputs["diffusion"] = ckpt_path
        inputs["augmented"] = aug_path
        net, schedule = load_diffusion(ckpt_path)
        expected_tokens = 2 if cfg.hardness_condition else 1
        if len(net.config.cond_widths) != expected_tokens:
            raise CheckpointMismatchError(
                f"{ckpt_path}: checkpoint takes {len(net.config.cond_widths)} condition "
                f"tokens but hardness_condition={cfg.hardness_condition}; retrain the "
                f"diffusion model with the matching flag"
            )
        aug_result = corpus.read_augmented(aug_path, ds)

        outputs: dict[str, Path] = {}
        base_text = _augmented_text_store(cfg, aug_result, inputs, outputs)

        model = None
        if cfg.hardness_condition:
            kmeans_path = _require(cfg, "kmeans", "fit-hardness")
            inputs["kmeans"] = kmeans_path
            model = hardness.load_kmeans(kmeans_path)

        boxes = None
        seed_mode = SO_SEED_MODE if cfg.so_seed else RANDOM_SEED_MODE
        if cfg.so_seed:
            boxes_path = _require(cfg, "boxes", "synth-bench")
            inputs["boxes"] = boxes_path
            boxes = store_read(boxes_path, expect_kind="visual")

        if cfg.samples_per_triplet < 1:
            raise ConfigError("samples_per_triplet must be >= 1")
        items = []
        text_store = base_text
        if cfg.samples_per_triplet == 1:
            items = [_SampleItem(a.key, a.triplet) for a in aug_result.triplets]
        else:
            text_store = EmbeddingStore(width=base_text.width, kind="text")
            for a in aug_result.triplets:
                row = base_text.get(a.key) if a.key in base_text else None
                for k in range(cfg.samples_per_triplet):
                    key = f"{a.key}#{k}"
                    items.append(_SampleItem(key, a.triplet))
                    if row is not None:
                        text_store.add(key, row)

        result = generate_for_augmented(
            net, schedule, items, text_store, model, boxes,
            seed_mode, cfg.sample_seed, batch_size=cfg.sample_batch,
        )
        if result.errors and len(result.store) == 0:
            raise RuntimeError(
                f"all {len(result.errors)} items failed to sample "
                f"(first: {result.errors[0].message})"
            )
        gen_path = artifact_path(cfg, "generated")
        store_write(result.store, gen_path)
        outputs.update(_with_sidecar(gen_path))
        if result.errors:
            err_path = cfg.out() / "generated.errors.txt"
            err_path.write_text(
                "".join(f"{e.key}\t{e.stage}\t{e.message}\n" for e in result.errors),
                encoding="utf-8",
            )
            outputs[err_path.name] = err_path
        return inputs, outputs

    return _run(cfg, "sample", body)


def cmd_train_baseline(cfg: PipelineConfig) -> dict[str, Path]:
    def body():
        ds, inputs = _load_dataset(cfg)
        region_path = _require(cfg, "regions", "synth-bench")
        inputs["regions"] = region_path
        regions = store_read(region_path, expect_kind="visual")
        x, labels = _region_rows(ds, regions)
        freqs = ds.frequencies()
        model = vrrmodel.train_baseline(
            x, labels, len(ds.object_vocab), len(ds.relation_vocab),
            cfg.baseline_loss, vrrmodel.VRRTrainConfig(
                steps=cfg.baseline_steps, batch=cfg.baseline_batch,
                lr=cfg.baseline_lr, seed=cfg.baseline_seed, hidden=cfg.baseline_hidden,
            ),
            obj_freqs=freqs.object_counts, rel_freqs=freqs.relation_counts,
        )
        out_path = artifact_path(cfg, "baseline")
        vrrmodel.save_classifier(model, out_path)
        return inputs, {out_path.name: out_path}

    return _run(cfg, "train-baseline", body)


def cmd_finetune(cfg: PipelineConfig) -> dict[str, Path]:
    def body():
        baseline_path = _require(cfg, "baseline", "train-baseline")
        gen_path = _require(cfg, "generated", "sample")
        aug_path = _require(cfg, "augmented", "augment")
        ds, inputs = _load_dataset(cfg)
        inputs.update({"baseline": baseline_path, "generated": gen_path, "augmented": aug_path})

        model = vrrmodel.load_classifier(baseline_path)
        generated = store_read(gen_path, expect_kind="visual")
        aug_result = corpus.read_augmented(aug_path, ds)
        by_key = {a.key: a for a in aug_result.triplets}

        x = generated.matrix.astype(np.float64)
        labels = np.zeros((len(generated), 3), dtype=np.int64)
        aug_for_row = []
        for i, key in enumerate(generated.keys()):
            base_key = key.split("#")[0]
            if base_key not in by_key:
                raise DependencyError(
                    f"generated row {key!r} has no matching augmented triplet; "
                    f"re-run `tailforge sample` after `tailforge augment`"
                )
            t = by_key[base_key].triplet
            labels[i] = (t.subject_id, t.relation_id, t.object_id)
            aug_for_row.append(by_key[base_key])

        curriculum = None
        if cfg.curriculum:
            kmeans_path = _require(cfg, "kmeans", "fit-hardness")
            inputs["kmeans"] = kmeans_path
            kmodel = hardness.load_kmeans(kmeans_path)
            outputs_tmp: dict[str, Path] = {}
            text_store = _augmented_text_store(cfg, aug_result, inputs, outputs_tmp)
            texts = np.stack([
                text_store.get(a.key).astype(np.float64) for a in aug_for_row
            ])
            curriculum = hardness.curriculum_split(hardness.hardness_matrix(texts, kmodel))

        freqs = ds.frequencies()
        if cfg.finetune_mix_ratio > 0.0:
            region_path = _require(cfg, "regions", "synth-bench")
            inputs["regions"] = region_path
            regions = store_read(region_path, expect_kind="visual")
            orig_x, orig_labels = _region_rows(ds, regions)
            n_mix = min(int(round(cfg.finetune_mix_ratio * x.shape[0])), orig_x.shape[0])
            if n_mix > 0:
                rng = np.random.default_rng(cfg.finetune_seed)
                pick = rng.choice(orig_x.shape[0], size=n_mix, replace=False)
                if curriculum is not None:
                    # mixed-in originals train first, alongside the easy group
                    easy, hard = curriculum
                    easy = np.concatenate([easy, np.arange(n_mix) + x.shape[0]])
                    curriculum = (easy, hard)
                x = np.vstack([x, orig_x[pick]])
                labels = np.vstack([labels, orig_labels[pick]])

        tuned = vrrmodel.finetune(
            model, x, labels, vrrmodel.FinetuneConfig(
                epochs=cfg.finetune_epochs, batch=cfg.finetune_batch,
                lr=cfg.finetune_lr, seed=cfg.finetune_seed, loss_kind=cfg.baseline_loss,
            ),
            curriculum=curriculum,
            obj_freqs=freqs.object_counts, rel_freqs=freqs.relation_counts,
        )
        out_path = artifact_path(cfg, "finetuned")
        vrrmodel.save_classifier(tuned, out_path)
        return inputs, {out_path.name: out_path}

    return _run(cfg, "finetune", body)


def cmd_evaluate(cfg: PipelineConfig) -> dict[str, Path]:
    def body():
        model_path = Path(cfg.eval_model_path) if cfg.eval_model_path else artifact_path(cfg, "finetuned")
        if not model_path.exists():
            raise DependencyError(
                f"missing model checkpoint at {model_path}; produce it with "
                f"`tailforge finetune` (or `tailforge train-baseline` and set eval_model_path)"
            )
        ds, inputs = _load_dataset(cfg)
        test_path = _require(cfg, "test_dataset", "synth-bench")
        test_region_path = _require(cfg, "test_regions", "synth-bench")
        inputs.update({"model": model_path, "test_dataset": test_path,
                       "test_regions": test_region_path})
        test_ds = TripletDataset.from_files(
            test_path, artifact_path(cfg, "object_vocab"), artifact_path(cfg, "relation_vocab")
        )
        test_regions = store_read(test_region_path, expect_kind="visual")
        x, labels = _region_rows(test_ds, test_regions)

        freqs = ds.frequencies()
        obj_splits = corpus.compute_splits(freqs.object_counts)
        rel_splits = corpus.compute_splits(freqs.relation_counts)
        model = vrrmodel.load_classifier(model_path)
        report = vrrmodel.evaluate(model, x, labels, obj_splits, rel_splits, meta={
            "model": model_path.stem,
            "flags.so_seed": str(cfg.so_seed).lower(),
            "flags.hardness_condition": str(cfg.hardness_condition).lower(),
            "flags.curriculum": str(cfg.curriculum).lower(),
        })
        kv_path = cfg.out() / f"eval_{model_path.stem}.kv"
        txt_path = cfg.out() / f"eval_{model_path.stem}.txt"
        kv_path.write_text("\n".join(report.to_kv_lines()) + "\n", encoding="utf-8")
        txt_path.write_text(report.to_text(), encoding="utf-8")
        return inputs, {kv_path.name: kv_path, txt_path.name: txt_path}

    return _run(cfg, "evaluate", body)


def cmd_report(cfg: PipelineConfig) -> dict[str, Path]:
    from .. import report as report_mod

    def body():
        if not cfg.report_inputs:
            raise ConfigError("report_inputs is empty; expected label=path[,label=path...]")
        inputs: dict[str, Path] = {}
        labeled: list[tuple[str, Path]] = []
        for item in cfg.report_inputs.split(","):
            item = item.strip()
            if not item:
                continue
            if "=" not in item:
                raise ConfigError(f"report_inputs entry {item!r} must look like label=path")
            label, raw_path = item.split("=", 1)
            path = Path(raw_path)
            if not path.is_absolute():
                path = cfg.out() / path
            if not path.exists():
                raise DependencyError(
                    f"missing evaluation report {path}; produce it with `tailforge evaluate`"
                )
            labeled.append((label.strip(), path))
            inputs[f"eval:{label.strip()}"] = path
        outputs = report_mod.render_report(labeled, cfg.out())
        return inputs, outputs

    return _run(cfg, "report", body)


COMMANDS: dict[str, Callable[[PipelineConfig], dict[str, Path]]] = {
    "synth-bench": cmd_synth_bench,
    "augment": cmd_augment,
    "fit-hardness": cmd_fit_hardness,
    "train-diffusion": cmd_train_diffusion,
    "sample": cmd_sample,
    "train-baseline": cmd_train_baseline,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}
