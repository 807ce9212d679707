"""Skip-gram pretraining: pair enumeration, gradients, reproducibility."""

import numpy as np
import pytest

from qgen.corpus import N_RESERVED, Genre, Poem, build_vocab
from qgen.embeddings import (EmbeddingMatrix, cosine, init_embedding_matrix,
                             negative_sampling_table, pair_loss,
                             pair_loss_grads, skipgram_pairs, train_skipgram)


def test_skipgram_pairs_matches_brute_force():
    for n, window in ((1, 1), (5, 2), (9, 3), (12, 5)):
        got = sorted(skipgram_pairs(list(range(n)), window))
        expect = sorted((i, j) for i in range(n) for j in range(n)
                        if i != j and abs(i - j) <= window)
        assert got == expect


def test_negative_sampling_table():
    freqs = np.array([1.0, 16.0, 81.0])
    p = negative_sampling_table(freqs)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(p, np.array([1.0, 8.0, 27.0]) / 36.0, atol=1e-12)
    assert p[0] < p[1] < p[2]


def test_pair_loss_grads_match_finite_differences():
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(20):
        d = 5
        u, v = rng.normal(size=d), rng.normal(size=d)
        negs = [rng.normal(size=d) for _ in range(3)]
        du, dv, dnegs = pair_loss_grads(u, v, negs)

        def fd(vec, grad):
            for i in range(d):
                orig = vec[i]
                vec[i] = orig + h
                fp = pair_loss(u, v, negs)
                vec[i] = orig - h
                fm = pair_loss(u, v, negs)
                vec[i] = orig
                assert abs(grad[i] - (fp - fm) / (2 * h)) < 1e-5
        fd(u, du)
        fd(v, dv)
        for vn, dn in zip(negs, dnegs):
            fd(vn, dn)


def test_training_deterministic():
    stream = list("甲乙甲乙甲乙丙丁丙丁丙丁" * 12)
    a = train_skipgram(stream, window=1, d=8, negatives=2, epochs=3, seed=5)
    b = train_skipgram(stream, window=1, d=8, negatives=2, epochs=3, seed=5)
    np.testing.assert_array_equal(a.matrix, b.matrix)
    c = train_skipgram(stream, window=1, d=8, negatives=2, epochs=3, seed=6)
    assert not np.array_equal(a.matrix, c.matrix)


def test_training_learns_distributional_similarity():
    # 甲 and 乙 only ever appear in the context of 中: their input vectors
    # should converge, while the directly co-occurring pair need not
    stream = list("甲中乙中" * 40)
    a = train_skipgram(stream, window=1, d=8, negatives=2, epochs=10, seed=5)
    same_context = cosine(a.vector("甲"), a.vector("乙"))
    cooccurring = cosine(a.vector("甲"), a.vector("中"))
    assert same_context > 0.9
    assert same_context > cooccurring + 0.5


def test_save_load_roundtrip(tmp_path):
    stream = list("白日依山尽黄河入海流" * 6)
    emb = train_skipgram(stream, window=2, d=6, negatives=2, seed=0)
    path = tmp_path / "emb.txt"
    emb.save_text(str(path))
    loaded = EmbeddingMatrix.load_text(str(path))
    assert loaded.chars == emb.chars
    np.testing.assert_array_equal(loaded.matrix, emb.matrix)


def test_init_embedding_matrix_copies_pretrained_rows():
    poems = [Poem(Genre.FIVE_CHAR, ["白日依山尽", "黄河入海流",
                                    "欲穷千里目", "更上一层楼"])]
    vocab = build_vocab(poems)
    stream = [c for p in poems for c in p.chars()]
    emb = train_skipgram(stream, window=2, d=6, negatives=2, seed=0)
    mat = init_embedding_matrix(emb, vocab, 6, seed=1)
    assert mat.shape == (len(vocab), 6)
    np.testing.assert_array_equal(mat[vocab.id("白")], emb.vector("白"))
    # reserved rows come from the seeded init, inside the init range
    assert np.all(np.abs(mat[:N_RESERVED]) <= 0.08)
    with pytest.raises(ValueError):
        init_embedding_matrix(emb, vocab, 7, seed=1)


def test_embedding_matrix_validation_and_args():
    with pytest.raises(ValueError):
        EmbeddingMatrix(["a", "b"], np.zeros((3, 4)))
    with pytest.raises(ValueError):
        train_skipgram(list("abcdef"), window=0)
    with pytest.raises(ValueError):
        train_skipgram(list("ab"), window=5)
