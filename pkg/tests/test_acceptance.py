"""Acceptance suite: one test per criterion, one printed PASS line each.

Criteria 8 and 9 share a module-scoped synthetic-benchmark fixture; the
chain (world -> baseline -> diffusion -> generated samples) takes about two
minutes on one CPU and every step is seeded, so results are reproducible
bit for bit.
"""

import dataclasses
import math
from decimal import Decimal
from pathlib import Path

import numpy as np
import pytest

from tailforge import corpus, hardness, vrrmodel
from tailforge.corpus import compute_splits, generate_synthetic_world, make_eval_set
from tailforge.diffusion import (
    DenoiserConfig,
    DenoiserNetwork,
    DiffusionTrainConfig,
    SO_SEED_MODE,
    forward_diffuse,
    generate_for_augmented,
    linear_schedule,
    sample,
    train,
    training_loss,
)
from tailforge.diffusion.training import loss_and_grads
from tailforge.encoders import EmbeddingStore, build_condition, synthetic_text_encode
from tailforge.pipeline import stages
from tailforge.pipeline.config import PipelineConfig
from tailforge.pipeline.manifest import output_hashes, read_manifest

from .conftest import random_taxonomy
from .test_hardness import exhaustive_two_means
from .test_taxonomy import brute_force_paths


def _report(criterion: str, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: PASS ({detail})")


def test_criterion_01_split_rule_fidelity():
    sizes_so = compute_splits(np.ones(1703, dtype=int)).sizes
    sizes_r = compute_splits(np.ones(310, dtype=int)).sizes
    assert sizes_so == (86, 255, 1362)
    assert sizes_r == (16, 46, 248)
    _report("1 split-rule fidelity", f"1703 -> {sizes_so}, 310 -> {sizes_r}")


def test_criterion_02_lch_oracle_equivalence():
    rng = np.random.default_rng(20260809)
    checked_pairs = 0
    for _ in range(50):
        tax = random_taxonomy(rng, max_nodes=200)
        oracle_paths = brute_force_paths(tax)
        nodes = sorted(tax.nodes)
        depth = tax.depth
        ident = -math.log(1.0 / (2 * depth))
        for a in nodes:
            assert abs(tax.lch_similarity(a, a) - ident) <= 1e-12
        for (a, b), p in oracle_paths.items():
            expected = -math.log((p + 1) / (2.0 * depth))
            assert tax.lch_similarity(a, b) == expected
            checked_pairs += 1
        labels = list(tax.labels)
        by_label = {lab: tax.synsets_for(lab)[0] for lab in labels}
        for query in rng.choice(labels, size=3, replace=False):
            threshold = float(rng.uniform(0.2, 1.5))
            expected_list = sorted(
                (-(-math.log((oracle_paths[(by_label[query], by_label[c])] + 1)
                             / (2.0 * depth))), i, c)
                for i, c in enumerate(labels)
                if c != query and (by_label[query], by_label[c]) in oracle_paths
                and -math.log((oracle_paths[(by_label[query], by_label[c])] + 1)
                              / (2.0 * depth)) >= threshold
            )
            got = tax.similar_classes(query, threshold)
            assert [(c, -neg) for neg, _i, c in expected_list] == got
    _report("2 LCH oracle equivalence", f"50 taxonomies, {checked_pairs} pairs exact")


def test_criterion_03_forward_statistics():
    sched = linear_schedule(50, 1e-3, 0.05)
    rng = np.random.default_rng(7)
    n = 100_000
    worst = 0.0
    for t in (1, 13, 25, 37, 50):
        noise = rng.standard_normal((n, 4))
        x_t = forward_diffuse(sched, np.zeros((n, 4)), t, noise)
        target = 1.0 - sched.alpha_bar(t)
        tol = 3.0 * target * math.sqrt(2.0 / (n - 1))
        deviation = np.abs(x_t.var(axis=0) - target)
        worst = max(worst, float((deviation / tol).max()))
        assert np.all(deviation <= tol)
    _report("3 forward statistics", f"5 steps x 4 coords, worst dev {worst:.2f} of 3-sigma")


def test_criterion_04_gradient_correctness():
    config = DenoiserConfig(input_width=8, cond_widths=(6, 5), hidden=12,
                            depth=2, attn_width=8, time_width=8)
    net = DenoiserNetwork(config, rng_seed=7)
    sched = linear_schedule(10, 1e-3, 0.05)
    rng = np.random.default_rng(3)
    batch = 5
    x0 = rng.standard_normal((batch, 8))
    cond = [rng.standard_normal((batch, 6)), rng.standard_normal((batch, 5))]
    t = rng.integers(1, 11, batch)
    noise = rng.standard_normal((batch, 8))
    _, grads = loss_and_grads(net, sched, x0, cond, t, noise)
    h = 1e-6
    worst = 0.0
    for name, param in net.params.items():
        fd = np.zeros_like(param)
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = param[ix]
            param[ix] = orig + h
            up = training_loss(net, sched, x0, cond, t, noise)
            param[ix] = orig - h
            down = training_loss(net, sched, x0, cond, t, noise)
            param[ix] = orig
            fd[ix] = (up - down) / (2 * h)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(grads[name])), 1e-8)
        rel = float((np.abs(fd - grads[name]) / denom).max())
        worst = max(worst, rel)
        assert rel < 1e-4, f"parameter group {name}: relative error {rel:.2e}"
    _report("4 gradient correctness", f"{len(net.params)} groups, worst rel err {worst:.1e}")


def test_criterion_05_conditional_fidelity():
    sched = linear_schedule(50)
    rng = np.random.default_rng(0)
    n = 512
    cond_a = np.array([1.0, 0.0, 0.0, 0.0])
    cond_b = np.array([0.0, 1.0, 0.0, 0.0])
    modes = rng.integers(0, 2, n)
    x0 = np.where(modes == 0, -3.0, 3.0)[:, None]
    cond = [np.where(modes[:, None] == 0, cond_a, cond_b)]
    state = train(x0, cond, sched, DiffusionTrainConfig(
        steps=3000, batch=64, lr=1e-3, seed=1, hidden=64, depth=2,
        attn_width=16, time_width=16))
    draw_rng = np.random.default_rng(77)
    hits = 0
    for cvec, target in ((cond_a, -3.0), (cond_b, 3.0)):
        for _ in range(250):
            out = sample(state.net, sched, build_condition(cvec), rng=draw_rng)
            hits += abs(out[0] - target) <= 1.0
    rate = hits / 500
    assert rate >= 0.95
    _report("5 conditional fidelity", f"{hits}/500 within +-1.0 after 3000 steps")


def test_criterion_06_kmeans_small_scale_optimality():
    rng = np.random.default_rng(2026)
    for trial in range(40):
        n = int(rng.integers(4, 9))
        dim = int(rng.integers(1, 4))
        pts = rng.standard_normal((n, dim)) * float(rng.uniform(0.5, 3.0))
        model = hardness.fit_kmeans(pts, 2, rng_seed=trial, n_init=100)
        oracle = exhaustive_two_means(pts)
        assert model.inertia == pytest.approx(oracle, rel=1e-9, abs=1e-9)
    _report("6 k-means optimality", "40 datasets of <= 8 points match exhaustive optimum")


def test_criterion_07_hardness_invariants():
    rng = np.random.default_rng(5)
    total = 0
    for _ in range(20):
        k = int(rng.integers(2, 40))
        width = int(rng.integers(2, 16))
        centers = rng.standard_normal((k, width))
        model = hardness.KMeansModel(centers=centers, iterations=1, inertia=0.0,
                                     seed=0, inertia_history=(0.0,))
        embs = rng.standard_normal((500, width))
        mat = hardness.hardness_matrix(embs, model)
        total += mat.shape[0]
        assert np.all(mat >= 0)
        assert np.all(np.abs(mat.sum(axis=1) - 1.0) <= 1e-9)
        for row in mat[:50]:
            assert 0.0 <= hardness.hardness_entropy(row) <= math.log(k) + 1e-12
        c = float(rng.uniform(0.01, 100.0))
        scaled_model = hardness.KMeansModel(centers=centers * c, iterations=1,
                                            inertia=0.0, seed=0, inertia_history=(0.0,))
        mat_scaled = hardness.hardness_matrix(embs * c, scaled_model)
        assert np.max(np.abs(mat - mat_scaled)) <= 1e-12
    assert total == 10_000
    _report("7 hardness invariants", "10^4 vectors: L1=1, entropy in [0, ln K], scale-stable")


# -- shared synthetic benchmark for criteria 8 and 9 ---------------------------


@pytest.fixture(scope="module")
def benchmark():
    world, ds, stores = generate_synthetic_world(
        num_obj_classes=60, num_rel_classes=20, dim_visual=48, dim_text=24,
        zipf_exponent=1.5, total_triplets=6000, rng_seed=11, noise_sigma=0.15)
    test_ds, test_regions = make_eval_set(world, 1200, rng_seed=12)
    x = np.array([stores.regions.get(t.region_key) for t in ds.triplets], dtype=np.float64)
    labels = np.array([(t.subject_id, t.relation_id, t.object_id) for t in ds.triplets])
    freqs = ds.frequencies()
    obj_splits = compute_splits(freqs.object_counts)
    rel_splits = compute_splits(freqs.relation_counts)
    baseline = vrrmodel.train_baseline(
        x, labels, 60, 20, "ce",
        vrrmodel.VRRTrainConfig(steps=3000, batch=128, lr=1e-3, seed=5, hidden=96))
    x_test = np.array([test_regions.get(t.region_key) for t in test_ds.triplets], dtype=np.float64)
    y_test = np.array([(t.subject_id, t.relation_id, t.object_id) for t in test_ds.triplets])

    tax = corpus.synthetic_taxonomy(world.object_labels, 4, rng_seed=11)
    aug = corpus.augment_triplets(ds, tax, 0.5, 2000, 2000, rng_seed=7)
    km = hardness.fit_kmeans(stores.text.matrix.astype(np.float64), 32, 0)
    text_mat = np.array([stores.text.get(t.region_key) for t in ds.triplets], dtype=np.float64)
    sched = linear_schedule(50)
    state = train(x, [text_mat, hardness.hardness_matrix(text_mat, km)], sched,
                  DiffusionTrainConfig(steps=8000, batch=128, lr=1e-3, seed=2,
                                       hidden=160, depth=2, attn_width=32, time_width=16))
    aug_text = EmbeddingStore(width=24, kind="text")
    for a in aug.triplets:
        aug_text.add(a.key, synthetic_text_encode(a.triplet, world))
    gen = generate_for_augmented(state.net, sched, aug.triplets, aug_text, km,
                                 stores.boxes, SO_SEED_MODE, rng_seed=9)
    assert not gen.errors
    gen_x = gen.store.matrix.astype(np.float64)
    gen_labels = np.array(
        [(a.triplet.subject_id, a.triplet.relation_id, a.triplet.object_id)
         for a in aug.triplets])
    report_base = vrrmodel.evaluate(baseline, x_test, y_test, obj_splits, rel_splits)
    return dict(baseline=baseline, report_base=report_base, gen_x=gen_x,
                gen_labels=gen_labels, x_test=x_test, y_test=y_test,
                obj_splits=obj_splits, rel_splits=rel_splits)


def test_criterion_08_end_to_end_tail_improvement(benchmark):
    b = benchmark
    tuned = vrrmodel.finetune(
        b["baseline"], b["gen_x"], b["gen_labels"],
        vrrmodel.FinetuneConfig(epochs=10, batch=256, lr=1e-4, seed=3))
    report = vrrmodel.evaluate(tuned, b["x_test"], b["y_test"],
                               b["obj_splits"], b["rel_splits"])
    base = b["report_base"]
    few_gain = report.so.few - base.so.few
    combined_gain = report.combined - base.combined
    assert few_gain >= 2.0, f"few-split S/O gain {few_gain:.2f} < 2.0"
    assert combined_gain >= 1.0, f"combined gain {combined_gain:.2f} < 1.0"
    _report(
        "8 end-to-end tail improvement",
        f"few S/O {base.so.few:.2f} -> {report.so.few:.2f} (+{few_gain:.2f}), "
        f"combined {base.combined:.2f} -> {report.combined:.2f} (+{combined_gain:.2f}), "
        f"many S/O {base.so.many:.2f} -> {report.so.many:.2f}",
    )


def test_criterion_09_budget_monotonicity(benchmark):
    b = benchmark
    full = b["gen_x"].shape[0]
    medians = []
    for ratio in (1, 3, 5):
        size = full * ratio // 5
        combined = []
        for seed in (101, 202, 303):
            pick = np.random.default_rng(seed).choice(full, size=size, replace=False)
            tuned = vrrmodel.finetune(
                b["baseline"], b["gen_x"][pick], b["gen_labels"][pick],
                vrrmodel.FinetuneConfig(epochs=10, batch=256, lr=1e-4, seed=seed))
            report = vrrmodel.evaluate(tuned, b["x_test"], b["y_test"],
                                       b["obj_splits"], b["rel_splits"])
            combined.append(report.combined)
        medians.append(float(np.median(combined)))
    assert medians[0] <= medians[1] <= medians[2], medians
    _report("9 budget monotonicity",
            "budgets 1:3:5 -> medians " + " <= ".join(f"{m:.2f}" for m in medians))


# -- criterion 10: flag grid through the pipeline ------------------------------

FLAG_GRID = [  # (so_seed, hardness_condition, curriculum)
    (False, False, False),
    (False, True, False),
    (False, True, True),
    (True, False, False),
    (True, True, False),
    (True, True, True),
]

GRID_PARAMS = dict(
    synth_obj_classes=12, synth_rel_classes=6, synth_dim_visual=12, synth_dim_text=12,
    synth_zipf=1.0, synth_triplets=150, synth_eval_samples=60, synth_seed=2,
    synth_boxes_per_class=2,
    lch_threshold=0.5, budget_few=40, budget_medium=40, augment_seed=1,
    kmeans_k=6, kmeans_seed=0, kmeans_n_init=3,
    diffusion_steps=8, diffusion_hidden=16, diffusion_depth=1,
    diffusion_attn_width=8, diffusion_time_width=8,
    diffusion_train_steps=60, diffusion_batch=16, diffusion_lr=1e-3,
    baseline_steps=60, baseline_batch=32, baseline_lr=1e-3,
    finetune_epochs=2, finetune_batch=32, finetune_lr=1e-4,
)

GRID_COMMANDS = ("synth-bench", "augment", "fit-hardness", "train-diffusion",
                 "sample", "train-baseline", "finetune", "evaluate")


def _run_grid_combo(out_dir: Path, flags) -> dict[str, dict[str, str]]:
    so, hard, curr = flags
    cfg = PipelineConfig(out_dir=str(out_dir), so_seed=so, hardness_condition=hard,
                         curriculum=curr, **GRID_PARAMS)
    for name in GRID_COMMANDS:
        stages.COMMANDS[name](cfg)
    records = read_manifest(out_dir)
    return {cmd: output_hashes(records, cmd) for cmd in GRID_COMMANDS}


def test_criterion_10_flag_grid_reproducibility(tmp_path):
    kv_paths = []
    for i, flags in enumerate(FLAG_GRID):
        first = _run_grid_combo(tmp_path / f"combo{i}-a", flags)
        second = _run_grid_combo(tmp_path / f"combo{i}-b", flags)
        assert first == second, f"combo {flags}: re-run hashes differ"
        kv = tmp_path / f"combo{i}-a" / "eval_finetuned.kv"
        parsed = vrrmodel.parse_kv_report(kv.read_text())
        for key in ("so.all", "relation.all", "combined.all"):
            assert key in parsed, f"combo {flags} report missing {key}"
        kv_paths.append((f"combo{i}", kv))

    report_cfg = PipelineConfig(
        out_dir=str(tmp_path / "grid-report"),
        report_inputs=",".join(f"{label}={path}" for label, path in kv_paths),
    )
    outputs = stages.COMMANDS["report"](report_cfg)
    assert "report.tsv" in outputs
    assert "report_flags.png" in outputs
    table = (tmp_path / "grid-report" / "report.tsv").read_text().splitlines()
    assert len(table) == 1 + len(FLAG_GRID)
    _report("10 flag-grid reproducibility",
            "6 combos ran twice with identical output hashes; ablation report rendered")


def test_criterion_11_metric_arithmetic():
    combined = vrrmodel.display_combined(17.51, 11.80)
    assert combined == Decimal("14.66")
    _report("11 metric arithmetic", f"(17.51, 11.80) -> {combined}")
