import string

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mcm.embeddings import (
    PAD_INDEX,
    UNK_INDEX,
    EmbeddingFormatError,
    EmbeddingMatrix,
    NegativeSampler,
    SkipGramConfig,
    SkipGramTrainer,
    Vocabulary,
    char_hash_embed,
    char_ngrams,
    cosine,
    encode,
    init_random,
    load_pretrained,
    nearest_neighbors,
    save_embeddings,
    sgns_loss_and_grads,
    train_skipgram,
    write_embedding_file,
)
from mcm.rng import Rng
from mcm.tensor import Tensor, default_dtype

from .gradcheck import relative_error


def group_corpus(seed, n=400, group_size=6, groups=2, length=6):
    """Sentences drawn from disjoint token groups; tokens co-occur only within a group."""
    g = np.random.default_rng(seed)
    names = [[f"g{j}t{i}" for i in range(group_size)] for j in range(groups)]
    return [list(g.choice(names[i % groups], size=length)) for i in range(n)]


@pytest.fixture
def vocab():
    return Vocabulary(["acha", "bohat", "kharab", "good", "nahi"])


# vocabulary -------------------------------------------------------------------


def test_vocab_reserved_indices(vocab):
    assert vocab["<pad>"] == PAD_INDEX == 0
    assert vocab["<unk>"] == UNK_INDEX == 1
    assert len(vocab) == 7
    with pytest.raises(ValueError):
        vocab.add("<pad>")


def test_encode_known_and_unknown(vocab):
    assert encode(["acha", "good"], vocab) == [2, 5]
    assert encode(["zabardast"], vocab) == [UNK_INDEX]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(alphabet=string.ascii_lowercase, min_size=1, max_size=8), min_size=1, max_size=30))
def test_encode_decode_roundtrip(tokens):
    vocab = Vocabulary(tokens)
    assert vocab.decode(vocab.encode(tokens)) == tokens
    assert len(set(vocab.itos)) == len(vocab)
    assert all(vocab.stoi[t] == i for i, t in enumerate(vocab.itos))


def test_from_corpus_min_freq():
    v = Vocabulary.from_corpus([["a", "a", "b"]], min_freq=2)
    assert v.itos == ["<pad>", "<unk>", "a"]
    v1 = Vocabulary.from_corpus([["a", "a", "b"]], min_freq=1)
    assert set(v1.tokens()) == {"a", "b"}


# random init ------------------------------------------------------------------


def test_init_random_deterministic_and_pad_zero(vocab):
    a = init_random(vocab, 300, Rng(5))
    b = init_random(vocab, 300, Rng(5))
    np.testing.assert_array_equal(a.vectors, b.vectors)
    np.testing.assert_array_equal(a.vectors[PAD_INDEX], 0)
    assert a.vectors.shape == (7, 300)
    assert a.provenance == "random"


def test_init_random_distribution():
    vocab = Vocabulary(f"t{i}" for i in range(400))
    m = init_random(vocab, 300, Rng(1)).vectors[1:]
    assert m.size > 100_000
    assert np.abs(m).max() <= 0.05
    # U(-a, a) has sd a/sqrt(3); the sample mean's sd is that over sqrt(n)
    sigma = 0.05 / np.sqrt(3) / np.sqrt(m.size)
    assert abs(m.mean()) < 3 * sigma


def test_embedding_matrix_validates():
    with pytest.raises(ValueError):
        EmbeddingMatrix(np.array([[np.nan, 0.0], [0.0, 0.0]]))
    m = EmbeddingMatrix(np.ones((3, 2)))
    np.testing.assert_array_equal(m.vectors[0], 0)


# char hash --------------------------------------------------------------------


def test_char_hash_deterministic_unit_norm():
    a = char_hash_embed("zabardast", 64)
    np.testing.assert_array_equal(a, char_hash_embed("zabardast", 64))
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-6)
    assert not np.array_equal(a, char_hash_embed("zabardast", 64, seed=1))
    with pytest.raises(ValueError):
        char_hash_embed("", 8)


def test_char_ngrams_boundaries():
    assert char_ngrams("ab") == ["<ab", "ab>"]
    assert char_ngrams("a") == ["<a>"]


def _edit(token, g):
    chars = list(token)
    pos = g.integers(len(chars))
    chars[pos] = string.ascii_lowercase[(string.ascii_lowercase.index(chars[pos]) + 1 + g.integers(25)) % 26]
    return "".join(chars)


def test_char_hash_similar_spellings_are_closer():
    g = np.random.default_rng(0)
    d = 300
    wins = 0
    for _ in range(1000):
        tok = "".join(g.choice(list(string.ascii_lowercase), size=10))
        variant = _edit(tok, g)
        shared = set(char_ngrams(tok)) & set(char_ngrams(variant))
        assert shared
        r1 = "".join(g.choice(list(string.ascii_lowercase), size=10))
        r2 = "".join(g.choice(list(string.ascii_lowercase), size=10))
        wins += cosine(char_hash_embed(tok, d), char_hash_embed(variant, d)) > cosine(char_hash_embed(r1, d), char_hash_embed(r2, d))
    assert wins == 1000


# file io ----------------------------------------------------------------------


def test_load_pretrained_full_and_zero_coverage(tmp_path, vocab):
    path = tmp_path / "vecs.txt"
    rng = np.random.default_rng(0)
    vecs = rng.normal(size=(5, 4)).astype(np.float32)
    write_embedding_file(path, vocab.tokens(), vecs)
    m = load_pretrained(path, vocab)
    assert m.coverage == 1.0
    np.testing.assert_array_equal(m.vectors[2:], vecs)
    np.testing.assert_array_equal(m.vectors[PAD_INDEX], 0)
    assert m.provenance == "pretrained" and not m.trainable

    other = tmp_path / "other.txt"
    write_embedding_file(other, ["x", "y"], rng.normal(size=(2, 4)))
    m0 = load_pretrained(other, vocab)
    assert m0.coverage == 0.0
    for tok in vocab.tokens():
        np.testing.assert_allclose(m0.vectors[vocab[tok]], char_hash_embed(tok, 4), rtol=1e-6)


def test_load_pretrained_dimension_error_names_line(tmp_path, vocab):
    path = tmp_path / "bad.txt"
    path.write_text("4 4\nacha 1 2 3 4\nbohat 1 2 3 4\nkharab 1 2 3\ngood 1 2 3 4\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError, match=r"bad.txt:4.*'kharab'"):
        load_pretrained(path, vocab)
    with pytest.raises(EmbeddingFormatError):
        load_pretrained(tmp_path / "missing.txt", vocab)
    (tmp_path / "hdr.txt").write_text("oops\n", encoding="utf-8")
    with pytest.raises(EmbeddingFormatError, match="header"):
        load_pretrained(tmp_path / "hdr.txt", vocab)


def test_load_save_load_is_bit_identical(tmp_path, vocab):
    path = tmp_path / "a.txt"
    write_embedding_file(path, ["acha", "good"], np.random.default_rng(1).normal(size=(2, 16)) / 3)
    m1 = load_pretrained(path, vocab)
    save_embeddings(tmp_path / "b.txt", m1, vocab)
    m2 = load_pretrained(tmp_path / "b.txt", vocab)
    assert m1.vectors.tobytes() == m2.vectors.tobytes()
    assert m2.coverage == 1.0


# negative sampling --------------------------------------------------------------


def test_negative_sampler_matches_unigram_power():
    counts = np.random.default_rng(2).integers(1, 500, size=50)
    sampler = NegativeSampler(counts, 0.75)
    draws = sampler.sample(np.random.default_rng(3), 1_000_000)
    observed = np.bincount(draws, minlength=50)
    expected = counts**0.75 / (counts**0.75).sum() * len(draws)
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_negative_sampler_never_draws_zero_count():
    sampler = NegativeSampler(np.array([0, 0, 5, 1]))
    assert set(np.unique(sampler.sample(np.random.default_rng(0), 10_000))) <= {2, 3}


# skip-gram ----------------------------------------------------------------------


def test_sgns_gradients_match_autodiff():
    """The hand-derived update must agree with the tape on the same objective."""
    rng = np.random.default_rng(4)
    v, u = rng.normal(size=5), rng.normal(size=(4, 5))
    labels = np.array([1.0, 0, 0, 0])
    loss, gv, gu = sgns_loss_and_grads(v, u, labels)
    with default_dtype(np.float64):
        tv, tu = Tensor(v, requires_grad=True), Tensor(u, requires_grad=True)
        sign = Tensor(np.where(labels > 0, 1.0, -1.0))
        score = (tu * tv).sum(axis=1) * sign
        tape_loss = -score.sigmoid().log().sum()
        tape_loss.backward()
    assert loss == pytest.approx(tape_loss.item(), rel=1e-10)
    assert relative_error(gv, tv.grad) < 1e-10
    assert relative_error(gu, tu.grad) < 1e-10


def test_skipgram_zero_iterations_returns_init():
    c = group_corpus(0, n=20)
    v = Vocabulary.from_corpus(c, min_freq=1)
    cfg = SkipGramConfig(dim=16, iterations=0)
    m = train_skipgram(c, v, cfg, Rng(3))
    init = Rng(3).stream("skipgram").uniform(-0.5 / 16, 0.5 / 16, size=(len(v), 16))
    init[0] = 0
    np.testing.assert_array_equal(m.vectors, init.astype(np.float32))
    assert m.provenance == "multilingual"


def test_skipgram_cooccurring_tokens_are_closer():
    c = group_corpus(1)
    v = Vocabulary.from_corpus(c, min_freq=1)
    m = train_skipgram(c, v, SkipGramConfig(dim=50, iterations=20_000), Rng(1)).vectors
    x, y, z = m[v["g0t0"]], m[v["g0t1"]], m[v["g1t0"]]
    assert cosine(x, y) > cosine(x, z)
    m_emb = EmbeddingMatrix(m, provenance="multilingual")
    top = [t for t, _ in nearest_neighbors(m_emb, v, "g0t0", k=5)]
    assert all(t.startswith("g0") for t in top)


def test_skipgram_loss_windows_non_increasing():
    c = group_corpus(0, groups=4, group_size=20, length=8)
    v = Vocabulary.from_corpus(c, min_freq=1)
    trainer = SkipGramTrainer(v, SkipGramConfig(dim=50, iterations=10_000, lr=0.05), Rng(0))
    trainer.fit(c)
    windows = np.array(trainer.losses).reshape(10, 1000).mean(axis=1)
    assert (np.diff(windows) <= 0).all(), windows


def test_skipgram_is_deterministic():
    c = group_corpus(2, n=30)
    v = Vocabulary.from_corpus(c, min_freq=1)
    cfg = SkipGramConfig(dim=8, iterations=500)
    a = train_skipgram(c, v, cfg, Rng(9)).vectors
    b = train_skipgram(c, v, cfg, Rng(9)).vectors
    assert a.tobytes() == b.tobytes()


def test_skipgram_errors():
    v = Vocabulary(["a", "b"])
    with pytest.raises(ValueError, match="no trainable pairs"):
        train_skipgram([["a"], ["b"]], v, SkipGramConfig(dim=4, iterations=10))
    with pytest.raises(ValueError, match="empty corpus"):
        train_skipgram([["zzz"]], v, SkipGramConfig(dim=4, iterations=10))
    with pytest.raises(ValueError):
        SkipGramConfig(window=0)
