import numpy as np
import pytest

from vtalign import evaluation, training
from vtalign.errors import (
    BadKError,
    ClassOverlapError,
    ConfigError,
    EmptyLabelSetError,
    InsufficientVideosError,
    NeedThreeGroupsError,
)
from vtalign.evaluation import (
    ablation_suite,
    evaluate,
    few_shot_split,
    mean_average_precision,
    multilabel_topk_accuracy,
    pearson_r,
    split_videos,
    subset_classes,
    topk_accuracy,
    tpp_correlation_study,
    zero_shot_eval,
)
from vtalign.pipeline import init_params
from vtalign.synthetic import SyntheticConfig, generate_candidate_groups, generate_synthetic


# -- topk ---------------------------------------------------------------------

def test_topk_perfect_one_hot():
    scores = np.eye(4)
    labels = np.arange(4)
    assert topk_accuracy(scores, labels, 1) == 1.0


def test_topk_k_equals_c_is_one(rng):
    scores = rng.standard_normal((6, 3))
    labels = rng.integers(3, size=6)
    assert topk_accuracy(scores, labels, 3) == 1.0


def test_topk_hand_built_third():
    scores = np.array([
        [0.9, 0.1, 0.0],   # correct (label 0)
        [0.2, 0.1, 0.7],   # wrong (label 1)
        [0.5, 0.4, 0.1],   # wrong (label 2)
    ])
    labels = np.array([0, 1, 2])
    assert topk_accuracy(scores, labels, 1) == pytest.approx(1 / 3)


def test_topk_monotone_in_k(rng):
    scores = rng.standard_normal((20, 6))
    labels = rng.integers(6, size=20)
    accs = [topk_accuracy(scores, labels, k) for k in range(1, 7)]
    assert all(a <= b for a, b in zip(accs, accs[1:]))
    assert accs[0] <= accs[-1] == 1.0


def test_topk_tie_break_prefers_lower_index():
    scores = np.array([[0.5, 0.5]])
    assert topk_accuracy(scores, np.array([0]), 1) == 1.0
    assert topk_accuracy(scores, np.array([1]), 1) == 0.0


def test_topk_bad_k(rng):
    scores = rng.standard_normal((3, 4))
    labels = np.zeros(3, dtype=int)
    with pytest.raises(BadKError):
        topk_accuracy(scores, labels, 0)
    with pytest.raises(BadKError):
        topk_accuracy(scores, labels, 5)


# -- mAP -----------------------------------------------------------------------

def test_map_single_positive_first():
    # one scored class, its single positive ranked first
    scores = np.array([[0.9], [0.1]])
    assert mean_average_precision(scores, [(0,), (1,)]) == 1.0


def test_map_positive_ranked_last():
    # one class, two videos, the only positive ranked second -> AP = 1/2
    scores = np.array([[0.9], [0.1]])
    labelsets = [(1,), (0,)]  # label 1 never appears as a column here
    ap = mean_average_precision(scores, labelsets)
    assert ap == pytest.approx(0.5)


def test_map_hand_built_four_by_two():
    scores = np.array([
        [0.9, 0.1],
        [0.8, 0.7],
        [0.2, 0.6],
        [0.4, 0.3],
    ])
    labelsets = [(0,), (1,), (1,), (0,)]
    # class 0 ranking: v0, v1, v3, v2 -> positives at ranks 1 and 3:
    #   AP0 = (1/1 + 2/3) / 2 = 5/6
    # class 1 ranking: v1, v2, v3, v0 -> positives at ranks 1 and 2: AP1 = 1
    assert mean_average_precision(scores, labelsets) == pytest.approx(11 / 12)


def test_map_is_one_when_positives_outrank(rng):
    for _ in range(20):
        labels = rng.integers(3, size=8)
        scores = np.zeros((8, 3))
        scores[np.arange(8), labels] = 1.0 + rng.uniform(size=8)
        assert mean_average_precision(scores, [(l,) for l in labels]) == 1.0


def test_map_empty_labelset():
    with pytest.raises(EmptyLabelSetError):
        mean_average_precision(np.ones((2, 2)), [(0,), ()])
    with pytest.raises(EmptyLabelSetError):
        multilabel_topk_accuracy(np.ones((1, 2)), [()], 1)


def test_multilabel_topk_hit_if_any():
    scores = np.array([[0.9, 0.5, 0.1]])
    assert multilabel_topk_accuracy(scores, [(1, 2)], 2) == 1.0
    assert multilabel_topk_accuracy(scores, [(2,)], 2) == 0.0


# -- evaluate -------------------------------------------------------------------

def test_evaluate_report_fields():
    ds = generate_synthetic(SyntheticConfig(classes=6, videos_per_class=3,
                                            dim=16, seed=1))
    report = evaluate(ds, init_params(16, seed=0))
    assert 0.0 <= report.top1 <= report.top5 <= 1.0
    assert report.map is not None and 0.0 <= report.map <= 1.0
    assert set(report.per_class) == set(ds.class_names)
    assert report.n_videos == 18


def test_evaluate_multilabel_path(rng):
    import dataclasses
    ds = generate_synthetic(SyntheticConfig(classes=4, videos_per_class=2,
                                            dim=16, seed=2))
    videos = list(ds.videos)
    videos[0] = dataclasses.replace(videos[0], labels=(0, 1))
    multi = dataclasses.replace(ds, videos=tuple(videos))
    report = evaluate(multi, init_params(16, seed=0))
    assert report.map is not None
    assert 0.0 <= report.top1 <= report.top5 <= 1.0


# -- splits -----------------------------------------------------------------------

def test_few_shot_split_counts_and_determinism():
    ds = generate_synthetic(SyntheticConfig(classes=3, videos_per_class=10,
                                            dim=16, seed=3))
    train_ds, eval_ds = few_shot_split(ds, shots=2, seed=5)
    assert len(train_ds.videos) == 6
    assert len(eval_ds.videos) == 24
    per_class = {}
    for v in train_ds.videos:
        per_class[v.label] = per_class.get(v.label, 0) + 1
    assert per_class == {0: 2, 1: 2, 2: 2}
    ids = {v.video_id for v in train_ds.videos} | {v.video_id for v in eval_ds.videos}
    assert len(ids) == 30  # disjoint union is the whole dataset
    again, _ = few_shot_split(ds, shots=2, seed=5)
    assert [v.video_id for v in again.videos] == [v.video_id for v in train_ds.videos]


def test_few_shot_split_leave_one_out():
    ds = generate_synthetic(SyntheticConfig(classes=2, videos_per_class=4,
                                            dim=16, seed=4))
    train_ds, eval_ds = few_shot_split(ds, shots=3, seed=0)
    counts = {}
    for v in eval_ds.videos:
        counts[v.label] = counts.get(v.label, 0) + 1
    assert counts == {0: 1, 1: 1}


def test_few_shot_split_insufficient():
    ds = generate_synthetic(SyntheticConfig(classes=2, videos_per_class=2,
                                            dim=16, seed=5))
    with pytest.raises(InsufficientVideosError):
        few_shot_split(ds, shots=2, seed=0)


def test_split_videos_stratified():
    ds = generate_synthetic(SyntheticConfig(classes=4, videos_per_class=10,
                                            dim=16, seed=6))
    train_ds, eval_ds = split_videos(ds, eval_fraction=0.3, seed=1)
    assert len(train_ds.videos) == 28 and len(eval_ds.videos) == 12
    with pytest.raises(ConfigError):
        split_videos(ds, eval_fraction=1.5, seed=0)


def test_subset_classes_remaps_labels():
    ds = generate_synthetic(SyntheticConfig(classes=5, videos_per_class=2,
                                            dim=16, seed=7))
    sub = subset_classes(ds, [3, 4])
    assert sub.class_names == (ds.classes[3].class_name, ds.classes[4].class_name)
    assert len(sub.videos) == 4
    assert all(v.label in (0, 1) for v in sub.videos)


# -- zero-shot ---------------------------------------------------------------------

def test_zero_shot_rejects_overlap():
    ds = generate_synthetic(SyntheticConfig(classes=4, videos_per_class=2,
                                            dim=16, seed=8))
    params = init_params(16, seed=0)
    with pytest.raises(ClassOverlapError):
        zero_shot_eval(params, ds.class_names, ds)


def test_zero_shot_disjoint_runs():
    ds = generate_synthetic(SyntheticConfig(classes=6, videos_per_class=2,
                                            dim=16, seed=9))
    a = subset_classes(ds, range(3))
    b = subset_classes(ds, range(3, 6))
    report = zero_shot_eval(init_params(16, seed=0), a.class_names, b)
    assert 0.0 <= report.top1 <= 1.0


def test_zero_shot_untrained_on_clean_planted_is_perfect():
    ds = generate_synthetic(SyntheticConfig(
        classes=6, videos_per_class=5, noise=0.0, rho=0.0,
        background_segments=0, concentration=2.0, seed=15))
    a = subset_classes(ds, range(3))
    b = subset_classes(ds, range(3, 6))
    report = zero_shot_eval(init_params(ds.dim, seed=0), a.class_names, b)
    assert report.top1 == 1.0


# -- ablation -------------------------------------------------------------------

def test_ablation_table_has_complete_row_set():
    ds = generate_synthetic(SyntheticConfig(classes=3, videos_per_class=6,
                                            dim=16, seed=10))
    cfg = training.TrainConfig(epochs=2, batch_size=6, lr=0.01, warmup_epochs=1)
    table = ablation_suite(ds, cfg, seeds=[0], eval_fraction=0.4)
    assert [r.variant for r in table.rows] == ["baseline", "coarse", "fine", "full"]
    assert [r.label for r in table.rows] == [
        "mean-pool baseline", "coarse-only", "fine-only", "coarse+fine"]
    csv = table.to_csv()
    assert csv.startswith("variant,top1,top5")
    assert len(csv.strip().split("\n")) == 5


def test_ablation_saturates_on_clean_data():
    ds = generate_synthetic(SyntheticConfig(
        classes=3, videos_per_class=6, dim=16, noise=0.0, rho=0.0,
        background_segments=0, seed=11))
    cfg = training.TrainConfig(epochs=1, batch_size=6, lr=0.001, warmup_epochs=1)
    table = ablation_suite(ds, cfg, seeds=[0], eval_fraction=0.4)
    for row in table.rows:
        assert row.top1 == 1.0


# -- correlation study ---------------------------------------------------------------

def test_pearson_degenerate_and_value():
    assert pearson_r(np.array([1.0, 1.0, 1.0]), np.array([1.0, 2.0, 3.0])) is None
    r = pearson_r(np.array([1.0, 2.0, 3.0]), np.array([2.0, 4.0, 6.0]))
    assert r == pytest.approx(1.0)


def test_study_needs_three_groups():
    cfg = SyntheticConfig(classes=2, videos_per_class=4, dim=16, seed=12)
    ds = generate_synthetic(cfg)
    cands = generate_candidate_groups(cfg, 2)
    with pytest.raises(NeedThreeGroupsError):
        tpp_correlation_study(ds, cands, training.TrainConfig(epochs=1))


def test_study_flags_degenerate_variance():
    cfg = SyntheticConfig(classes=2, videos_per_class=4, dim=16, seed=13)
    ds = generate_synthetic(cfg)
    cands = generate_candidate_groups(cfg, 3)
    # identical groups: install group 0 three times
    same = [type(c)(class_index=c.class_index, groups=(c.groups[0],) * 3)
            for c in cands]
    result = tpp_correlation_study(
        ds, same, training.TrainConfig(epochs=1, batch_size=4, warmup_epochs=0))
    assert result.degenerate
    assert result.pearson_r is None


def test_study_emits_pairs_and_finite_r():
    cfg = SyntheticConfig(classes=3, videos_per_class=5, dim=16, seed=14)
    ds = generate_synthetic(cfg)
    cands = generate_candidate_groups(cfg, 3)
    result = tpp_correlation_study(
        ds, cands, training.TrainConfig(epochs=2, batch_size=8, warmup_epochs=1))
    assert len(result.pairs) == 3
    lines = result.to_csv().strip().split("\n")
    assert lines[0] == "group,tpp,top1"
    assert len(lines) == 4
