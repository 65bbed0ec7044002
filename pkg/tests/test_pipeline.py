import math

import numpy as np
import pytest

import oracles
from conftest import random_dataset, random_text
from vtalign import pipeline
from vtalign.errors import (
    DimMismatchError,
    EmptyClassListError,
    EmptySubtextsError,
    ZeroVectorError,
)
from vtalign.pipeline import (
    AttentionParams,
    FfnParams,
    FusionParams,
    ModelParams,
    augment_global_text,
    classify,
    classify_dataset,
    coarse_embedding,
    coarse_importance,
    cross_attention,
    fine_embedding,
    fine_importance,
    fuse,
    init_params,
    mean_pool_baseline,
    video_embedding,
)
from vtalign.store import TextTokens


def identity_ffn(dim):
    return FfnParams(np.eye(dim), np.zeros(dim))


def zero_attention(dim):
    return AttentionParams(np.zeros((dim, dim)), np.zeros((dim, dim)),
                           np.zeros((dim, dim)))


def plain_params(dim, tau=0.05):
    return ModelParams(zero_attention(dim),
                       FusionParams(identity_ffn(dim), identity_ffn(dim)), tau=tau)


# -- cross_attention -----------------------------------------------------------

def test_attention_identical_keys_gives_mean_value(rng):
    k = np.tile(rng.standard_normal(4), (3, 1))
    v = rng.standard_normal((3, 4))
    q = rng.standard_normal((2, 4))
    out = cross_attention(q, k, v)
    assert np.allclose(out, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)


def test_attention_zero_query_gives_mean_value(rng):
    k = rng.standard_normal((3, 4))
    v = rng.standard_normal((3, 4))
    out = cross_attention(np.zeros((2, 4)), k, v)
    assert np.allclose(out, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)


def test_attention_matches_loop_oracle(rng):
    for _ in range(20):
        q = rng.standard_normal((2, 4))
        k = rng.standard_normal((3, 4))
        v = rng.standard_normal((3, 4))
        got = cross_attention(q, k, v)
        want = oracles.cross_attention(q.tolist(), k.tolist(), v.tolist())
        assert np.allclose(got, want, atol=1e-12)


def test_attention_dim_mismatch():
    with pytest.raises(DimMismatchError):
        cross_attention(np.ones((2, 4)), np.ones((3, 5)), np.ones((3, 4)))
    with pytest.raises(DimMismatchError):
        cross_attention(np.ones((2, 4)), np.ones((3, 4)), np.ones((2, 4)))


# -- augment_global_text ----------------------------------------------------------

def test_augment_zero_projections_residual_identity(rng):
    g = random_text(rng, 3, 4)
    subs = [random_text(rng, 2, 4), random_text(rng, 3, 4)]
    out = augment_global_text(g, subs, zero_attention(4))
    # bit-exact: zero value rows make the attention term exactly zero
    assert np.array_equal(out, g.tokens)


def test_augment_single_key_copies_value(rng):
    g = random_text(rng, 2, 4)
    token = rng.standard_normal(4)
    sub = TextTokens(tokens=token[None, :], summary=token)
    p = AttentionParams(np.zeros((4, 4)), np.zeros((4, 4)), np.eye(4))
    out = augment_global_text(g, [sub], p)
    assert np.allclose(out, g.tokens + token[None, :], atol=1e-12)


def test_augment_matches_composed_oracle(rng):
    for _ in range(20):
        g = random_text(rng, 2, 4)
        subs = [random_text(rng, 3, 4), random_text(rng, 2, 4)]
        p = AttentionParams(*[rng.standard_normal((4, 4)) for _ in range(3)])
        got = augment_global_text(g, subs, p)
        want = oracles.augment_global_text(
            g.tokens.tolist(), [s.tokens.tolist() for s in subs],
            p.wq.tolist(), p.wk.tolist(), p.wv.tolist())
        assert np.allclose(got, want, atol=1e-12)


def test_augment_requires_subtexts(rng):
    with pytest.raises(EmptySubtextsError):
        augment_global_text(random_text(rng, 2, 4), [], zero_attention(4))


# -- coarse importance / embedding ---------------------------------------------

def test_coarse_importance_identical_frames(rng):
    frame = rng.standard_normal(4)
    frames = np.tile(frame, (2, 1))
    t_hat = rng.standard_normal((3, 4))
    a = coarse_importance(t_hat, frames)
    assert np.allclose(a, [1.5, 1.5], atol=1e-12)


def test_coarse_importance_single_frame(rng):
    a = coarse_importance(rng.standard_normal((3, 4)), rng.standard_normal((1, 4)))
    assert np.allclose(a, [3.0], atol=1e-12)


def test_coarse_importance_softmax_of_unit_sims():
    frames = np.array([[1.0, 0.0], [0.0, 1.0]])
    t_hat = np.array([[1.0, 0.0]])
    a = coarse_importance(t_hat, frames)
    e = math.exp(1.0)
    assert np.allclose(a, [e / (e + 1), 1 / (e + 1)], atol=1e-12)


def test_coarse_importance_matches_oracle(rng):
    for _ in range(20):
        t_hat = rng.standard_normal((3, 5))
        frames = rng.standard_normal((4, 5))
        assert np.allclose(coarse_importance(t_hat, frames),
                           oracles.coarse_importance(t_hat.tolist(), frames.tolist()),
                           atol=1e-12)


def test_coarse_importance_literal_form_matches_oracle(rng):
    for _ in range(20):
        # positive vectors keep the literal denominator well away from zero
        t_hat = rng.uniform(0.1, 1.0, size=(3, 5))
        frames = rng.uniform(0.1, 1.0, size=(4, 5))
        got = coarse_importance(t_hat, frames, literal_form=True)
        want = oracles.coarse_importance_literal(t_hat.tolist(), frames.tolist())
        assert np.allclose(got, want, atol=1e-12)


def test_coarse_importance_rejects_zero_rows(rng):
    frames = rng.standard_normal((3, 4))
    frames[1] = 0.0
    with pytest.raises(ZeroVectorError):
        coarse_importance(rng.standard_normal((2, 4)), frames)


def test_coarse_embedding_one_hot_and_cancellation(rng):
    frames = rng.standard_normal((3, 4))
    a = np.array([0.0, 1.0, 0.0])
    assert np.array_equal(coarse_embedding(frames, a), frames[1])
    v = rng.standard_normal(4)
    pair = np.stack([v, -v])
    assert np.allclose(coarse_embedding(pair, np.array([0.5, 0.5])), np.zeros(4),
                       atol=1e-15)


def test_coarse_embedding_matches_oracle(rng):
    for _ in range(20):
        frames = rng.standard_normal((4, 8))
        a = rng.standard_normal(4)
        assert np.allclose(coarse_embedding(frames, a),
                           oracles.weighted_sum(frames.tolist(), a.tolist()),
                           atol=1e-12)


# -- fine importance / embedding ---------------------------------------------------

def test_fine_importance_identical_frames_uniform(rng):
    frames = np.tile(rng.standard_normal(4), (3, 1))
    subs = [random_text(rng, 2, 4)]
    assert np.allclose(fine_importance(subs, frames), np.full(3, 1 / 3), atol=1e-12)


def test_fine_importance_single_frame(rng):
    assert np.allclose(fine_importance([random_text(rng, 2, 4)],
                                       rng.standard_normal((1, 4))), [1.0])


def test_fine_importance_softmax_of_unit_sims():
    frames = np.array([[1.0, 0.0], [0.0, 1.0]])
    sub = TextTokens(tokens=np.array([[1.0, 0.0]]), summary=np.array([1.0, 0.0]))
    a = fine_importance([sub], frames)
    e = math.exp(1.0)
    assert np.allclose(a, [e / (e + 1), 1 / (e + 1)], atol=1e-12)


def test_fine_importance_matches_oracle(rng):
    for _ in range(20):
        subs = [random_text(rng, int(rng.integers(1, 4)), 5) for _ in range(3)]
        frames = rng.standard_normal((4, 5))
        got = fine_importance(subs, frames)
        want = oracles.fine_importance([s.tokens.tolist() for s in subs],
                                       frames.tolist())
        assert np.allclose(got, want, atol=1e-12)


def test_fine_embedding_uniform_and_one_hot(rng):
    frames = rng.standard_normal((4, 6))
    uniform = np.full(4, 0.25)
    assert np.allclose(fine_embedding(frames, uniform), frames.mean(axis=0), atol=1e-12)
    one_hot = np.array([0.0, 0.0, 1.0, 0.0])
    assert np.array_equal(fine_embedding(frames, one_hot), frames[2])


# -- fuse -------------------------------------------------------------------------

def test_fuse_identity_heads_sum(rng):
    a, b = rng.standard_normal(4), rng.standard_normal(4)
    p = FusionParams(identity_ffn(4), identity_ffn(4))
    assert np.allclose(fuse(a, b, p), a + b, atol=1e-15)


def test_fuse_zero_weights_gives_bias_sum(rng):
    b1, b2 = rng.standard_normal(4), rng.standard_normal(4)
    p = FusionParams(FfnParams(np.zeros((4, 4)), b1), FfnParams(np.zeros((4, 4)), b2))
    assert np.allclose(fuse(rng.standard_normal(4), rng.standard_normal(4), p),
                       b1 + b2, atol=1e-15)


def test_fuse_matches_affine_oracle(rng):
    for _ in range(20):
        wc, wf = rng.standard_normal((5, 5)), rng.standard_normal((5, 5))
        bc, bf = rng.standard_normal(5), rng.standard_normal(5)
        oc, of = rng.standard_normal(5), rng.standard_normal(5)
        p = FusionParams(FfnParams(wc, bc), FfnParams(wf, bf))
        want = oracles.fuse(oc.tolist(), of.tolist(), wc.tolist(), bc.tolist(),
                            wf.tolist(), bf.tolist())
        assert np.allclose(fuse(oc, of, p), want, atol=1e-12)


def test_fuse_hidden_layer_shapes(rng):
    p = init_params(6, seed=0, hidden=3)
    x = rng.standard_normal(6)
    out = p.fusion.coarse.apply(x[None])[0]
    assert out.shape == (6,)


# -- video_embedding / classify -------------------------------------------------

def test_video_embedding_single_frame_single_token(rng):
    ds = random_dataset(rng, n_videos=1, n_classes=1, frames=1, dim=4, tokens=1)
    o, prof = video_embedding(ds.videos[0], ds.classes[0], plain_params(4))
    # coarse weight = token count = 1, fine weight = 1, identity heads sum both
    assert np.allclose(o, 2 * ds.videos[0].frames[0], atol=1e-12)
    assert np.allclose(prof.coarse, [1.0]) and np.allclose(prof.fine, [1.0])


def test_video_embedding_identical_frames_independent_of_length(rng):
    frame = rng.standard_normal(6)
    ds2 = random_dataset(rng, n_videos=1, n_classes=1, frames=2, dim=6)
    import dataclasses
    v2 = dataclasses.replace(ds2.videos[0], frames=np.tile(frame, (2, 1)))
    v5 = dataclasses.replace(ds2.videos[0], frames=np.tile(frame, (5, 1)))
    p = init_params(6, seed=3)
    o2, _ = video_embedding(v2, ds2.classes[0], p)
    o5, _ = video_embedding(v5, ds2.classes[0], p)
    assert np.allclose(o2, o5, atol=1e-12)


def test_video_embedding_matches_staged_composition(rng):
    for _ in range(10):
        ds = random_dataset(rng, n_videos=1, n_classes=1, frames=4, dim=6, subtexts=2)
        p = init_params(6, seed=int(rng.integers(1000)))
        o, prof = video_embedding(ds.videos[0], ds.classes[0], p)
        bundle = ds.classes[0]
        t_hat = augment_global_text(bundle.global_text, bundle.subtexts, p.attention)
        a_c = coarse_importance(t_hat, ds.videos[0].frames)
        a_f = fine_importance(bundle.subtexts, ds.videos[0].frames)
        staged = fuse(coarse_embedding(ds.videos[0].frames, a_c),
                      fine_embedding(ds.videos[0].frames, a_f), p.fusion)
        assert np.allclose(o, staged, atol=1e-10)
        assert np.allclose(prof.coarse, a_c) and np.allclose(prof.fine, a_f)


def test_classify_single_class_and_tie_break(rng):
    ds = random_dataset(rng, n_videos=1, n_classes=1)
    p = init_params(ds.dim, seed=0)
    scores, winner = classify(ds.videos[0], ds.classes, p)
    assert winner == 0 and -1.0 <= scores[0] <= 1.0

    twin = (ds.classes[0], ds.classes[0])
    scores, winner = classify(ds.videos[0], twin, p)
    assert scores[0] == scores[1] and winner == 0


def test_classify_empty_class_list(rng):
    ds = random_dataset(rng, n_videos=1)
    with pytest.raises(EmptyClassListError):
        classify(ds.videos[0], [], init_params(ds.dim))


def test_classify_planted_zero_noise(rng):
    from vtalign.synthetic import SyntheticConfig, generate_synthetic
    ds = generate_synthetic(SyntheticConfig(
        classes=4, videos_per_class=3, noise=0.0, rho=0.0,
        background_segments=0, seed=7))
    p = plain_params(ds.dim)
    for v in ds.videos:
        _, winner = classify(v, ds.classes, p)
        assert winner == v.label


# -- mean pool ----------------------------------------------------------------

def test_mean_pool_cases(rng):
    frame = rng.standard_normal(5)
    assert np.allclose(mean_pool_baseline(np.tile(frame, (3, 1))), frame, atol=1e-15)
    v = rng.standard_normal(5)
    assert np.allclose(mean_pool_baseline(np.stack([v, -v])), np.zeros(5), atol=1e-15)
    frames = rng.standard_normal((4, 5))
    want = [sum(frames[l][x] for l in range(4)) / 4 for x in range(5)]
    assert np.allclose(mean_pool_baseline(frames), want, atol=1e-12)


# -- invariants -------------------------------------------------------------------

def test_fine_weights_are_probabilities(rng):
    for _ in range(200):
        n_frames = int(rng.integers(1, 7))
        subs = [random_text(rng, int(rng.integers(1, 4)), 5)
                for _ in range(int(rng.integers(1, 4)))]
        a = fine_importance(subs, rng.standard_normal((n_frames, 5)))
        assert np.all(a > 0)
        assert abs(a.sum() - 1.0) < 1e-9


def test_coarse_weights_sum_to_token_count(rng):
    for _ in range(200):
        n_tokens = int(rng.integers(1, 6))
        n_frames = int(rng.integers(1, 7))
        a = coarse_importance(rng.standard_normal((n_tokens, 5)),
                              rng.standard_normal((n_frames, 5)))
        assert np.all(a > 0)
        assert abs(a.sum() - n_tokens) < 1e-9


def test_permutation_equivariance_is_exact(rng):
    import dataclasses
    for _ in range(50):
        ds = random_dataset(rng, n_videos=1, n_classes=2, frames=5, dim=6)
        p = init_params(6, seed=int(rng.integers(1000)))
        video = ds.videos[0]
        perm = rng.permutation(video.num_frames)
        shuffled = dataclasses.replace(video, frames=video.frames[perm])

        bundle = ds.classes[0]
        t_hat = augment_global_text(bundle.global_text, bundle.subtexts, p.attention)
        a_c = coarse_importance(t_hat, video.frames)
        a_f = fine_importance(bundle.subtexts, video.frames)
        a_c_perm = coarse_importance(t_hat, shuffled.frames)
        a_f_perm = fine_importance(bundle.subtexts, shuffled.frames)
        assert np.array_equal(a_c[perm], a_c_perm)
        assert np.array_equal(a_f[perm], a_f_perm)
        assert np.array_equal(coarse_embedding(video.frames, a_c),
                              coarse_embedding(shuffled.frames, a_c_perm))

        s0, _ = classify(video, ds.classes, p)
        s1, _ = classify(shuffled, ds.classes, p)
        assert np.array_equal(s0, s1)


def test_fine_importance_invariant_to_row_rescaling(rng):
    frames = rng.standard_normal((4, 5))
    subs = [random_text(rng, 2, 5)]
    base = fine_importance(subs, frames)
    scaled = frames.copy()
    scaled[2] *= 37.0
    assert np.allclose(fine_importance(subs, scaled), base, atol=1e-12)
    big_tokens = TextTokens(subs[0].tokens * 11.0, subs[0].summary)
    assert np.allclose(fine_importance([big_tokens], frames), base, atol=1e-12)


def test_classify_argmax_invariant_under_monotone_transform(rng):
    ds = random_dataset(rng, n_videos=5, n_classes=4)
    p = init_params(ds.dim, seed=9)
    for v in ds.videos:
        scores, winner = classify(v, ds.classes, p)
        assert int(np.argmax(np.exp(3.0 * scores) + 2.0)) == winner


def test_classify_dataset_matches_per_video_and_threads(rng):
    ds = random_dataset(rng, n_videos=12, n_classes=3, frames=4, dim=6)
    p = init_params(6, seed=2)
    block = classify_dataset(list(ds.videos), ds.classes, p)
    for i, v in enumerate(ds.videos):
        scores, _ = classify(v, ds.classes, p)
        assert np.allclose(block[i], scores, atol=1e-12)
    threaded = classify_dataset(list(ds.videos), ds.classes, p, threads=4)
    assert np.array_equal(block, threaded)
