import numpy as np
import pytest

from labembed.corpus import Sentence, TokenMode, Vocabulary
from labembed.embedstore import cosine_similarity
from labembed.glove import (
    CooccurrenceTable,
    GloveHyperparams,
    NonPositiveCount,
    build_cooccurrence,
    glove_entry_loss,
    glove_weight,
    load_cooccurrence,
    save_cooccurrence,
    train_glove,
    vocab_fingerprint,
)
from labembed.w2v import DegenerateVocab, EmptyCorpus, TrainingDiverged


def _sent(ids, visit="v0"):
    return Sentence(token_ids=np.asarray(ids, dtype=np.int32), visit_id=visit)


def _vocab(n):
    tokens = [f"t{i}" for i in range(n)]
    return Vocabulary(tokens, {t: 100 for t in tokens}, TokenMode.LoincOnly, 1)


class TestHyperparams:
    @pytest.mark.parametrize(
        "overrides",
        [
            {"dim": 0},
            {"epochs": 0},
            {"batch_size": 0},
            {"x_max": 0.0},
            {"alpha": 0.0},
            {"alpha": 1.5},
            {"initial_lr": 0.0},
        ],
    )
    def test_validate_rejects(self, overrides):
        with pytest.raises(ValueError):
            GloveHyperparams(**overrides).validate()


class TestCooccurrence:
    def test_hand_counts_with_distance_weighting(self):
        table = build_cooccurrence([_sent([0, 1, 2])], _vocab(3), window=5)
        want = {(0, 1): 1.0, (1, 0): 1.0, (1, 2): 1.0, (2, 1): 1.0, (0, 2): 0.5, (2, 0): 0.5}
        assert table.entries == pytest.approx(want)
        assert table.n_entries == 6

    def test_hand_counts_unweighted(self):
        table = build_cooccurrence([_sent([0, 1, 2])], _vocab(3), window=5, distance_weighting=False)
        assert table.entries[(0, 2)] == 1.0

    def test_self_pairs_excluded(self):
        table = build_cooccurrence([_sent([0, 0, 1])], _vocab(2), window=5)
        # (pos0,pos1) is 0-0 and skipped; 0-1 appears at distances 1 and 2
        assert table.entries == pytest.approx({(0, 1): 1.5, (1, 0): 1.5})

    def test_window_limits_pairs(self):
        table = build_cooccurrence([_sent([0, 1, 2])], _vocab(3), window=1)
        assert (0, 2) not in table.entries

    def test_symmetry(self, rng):
        sents = [_sent(rng.integers(0, 6, rng.integers(2, 9)), f"v{i}") for i in range(30)]
        table = build_cooccurrence(sents, _vocab(6), window=4)
        for (i, j), x in table.entries.items():
            assert table.value(j, i) == pytest.approx(x)
        assert table.n_entries % 2 == 0

    def test_total_mass_counts_pairs(self):
        # unweighted total = 2 * (number of in-window position pairs with
        # distinct tokens): [0,1,2] gives 3 such pairs, [0,0,1] gives 2
        table = build_cooccurrence(
            [_sent([0, 1, 2]), _sent([0, 0, 1], "v1")], _vocab(3), window=5, distance_weighting=False
        )
        assert table.weights.sum() == pytest.approx(10.0)

    def test_value_lookup(self):
        table = build_cooccurrence([_sent([0, 1])], _vocab(3), window=2)
        assert table.value(0, 1) == 1.0
        assert table.value(0, 2) == 0.0

    def test_errors(self):
        with pytest.raises(ValueError):
            build_cooccurrence([_sent([0, 1])], _vocab(2), window=0)
        with pytest.raises(EmptyCorpus):
            build_cooccurrence([], _vocab(2))
        with pytest.raises(EmptyCorpus):
            build_cooccurrence([_sent([0]), _sent([1], "v1")], _vocab(2))

    def test_save_load_roundtrip(self, tmp_path):
        vocab = _vocab(4)
        table = build_cooccurrence([_sent([0, 1, 2, 3, 1])], vocab, window=3)
        path = tmp_path / "cooc.bin"
        save_cooccurrence(table, path)
        back = load_cooccurrence(path)
        assert np.array_equal(back.rows, table.rows)
        assert np.array_equal(back.cols, table.cols)
        assert back.weights == pytest.approx(table.weights)
        assert back.vocab_size == table.vocab_size
        assert back.window == table.window
        assert back.distance_weighting == table.distance_weighting
        assert back.vocab_fingerprint == vocab_fingerprint(vocab)

    def test_load_rejects_other_files(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a table\n")
        with pytest.raises(ValueError):
            load_cooccurrence(path)


class TestWeightAndLoss:
    def test_weight_function(self):
        assert glove_weight(100.0, x_max=100.0) == 1.0
        assert glove_weight(250.0, x_max=100.0) == 1.0
        assert glove_weight(25.0, x_max=100.0, alpha=0.5) == pytest.approx(0.5)
        assert glove_weight(10.0, x_max=100.0, alpha=0.75) == pytest.approx(0.1**0.75)

    def test_weight_rejects_nonpositive(self):
        with pytest.raises(NonPositiveCount):
            glove_weight(0.0)
        with pytest.raises(NonPositiveCount):
            glove_weight(-1.0)
        with pytest.raises(NonPositiveCount):
            glove_weight(1.0, x_max=0.0)

    def test_entry_loss_value(self):
        w_i = np.array([1.0, 0.0])
        w_j = np.array([2.0, 0.0])
        x = float(np.e)
        # diff = 2 + 0.5 + 0.25 - 1 = 1.75
        want = glove_weight(x) * 1.75**2
        assert glove_entry_loss(w_i, w_j, 0.5, 0.25, x) == pytest.approx(want, abs=1e-12)

    def test_entry_loss_rejects_bad_count(self):
        with pytest.raises(NonPositiveCount):
            glove_entry_loss(np.zeros(2), np.zeros(2), 0.0, 0.0, 0.0)

    def test_entry_gradients_match_fd(self, rng):
        d = 5
        w_i = rng.normal(size=d) * 0.3
        w_j = rng.normal(size=d) * 0.3
        b_i, b_j, x = 0.1, -0.2, 7.5
        diff = float(w_i @ w_j) + b_i + b_j - np.log(x)
        f = glove_weight(x)
        eps = 1e-6
        for k in range(d):
            e = np.zeros(d)
            e[k] = eps
            fd = (glove_entry_loss(w_i + e, w_j, b_i, b_j, x) - glove_entry_loss(w_i - e, w_j, b_i, b_j, x)) / (2 * eps)
            assert fd == pytest.approx(2.0 * f * diff * w_j[k], abs=1e-6)
        fd_b = (glove_entry_loss(w_i, w_j, b_i + eps, b_j, x) - glove_entry_loss(w_i, w_j, b_i - eps, b_j, x)) / (2 * eps)
        assert fd_b == pytest.approx(2.0 * f * diff, abs=1e-6)


class TestTraining:
    def _single_entry_table(self, x):
        return CooccurrenceTable(
            rows=np.array([0, 1]),
            cols=np.array([1, 0]),
            weights=np.array([x, x]),
            vocab_size=2,
            window=5,
            distance_weighting=True,
            vocab_fingerprint="f" * 64,
        )

    def test_single_entry_fit(self):
        # a lone symmetric entry X = e must be fit almost exactly:
        # w.wt + b + bt -> log X = 1
        x = float(np.e)
        table = self._single_entry_table(x)
        hp = GloveHyperparams(dim=4, epochs=1000, initial_lr=0.05, seed=3)
        model = train_glove(table, _vocab(2), hp)
        curve = [float(v) for v in model.metadata["loss_curve"].split(",")]
        assert curve[-1] < 1e-5
        # implied bound on the fitted scores themselves
        f = glove_weight(x)
        assert np.sqrt(2.0 * curve[-1] / f) < 1e-2

    def test_learns_planted_pairs(self):
        vocab = _vocab(4)
        sents = []
        for i in range(100):
            sents.append(_sent([0, 1], f"v{i}x"))
            sents.append(_sent([2, 3], f"v{i}y"))
        table = build_cooccurrence(sents, vocab, window=2)
        model = train_glove(table, vocab, GloveHyperparams(dim=8, epochs=60, seed=0))
        va, vb, vc, vd = (model.vectors[i] for i in range(4))
        assert cosine_similarity(va, vb) > cosine_similarity(va, vc)
        assert cosine_similarity(vc, vd) > cosine_similarity(vc, vb)
        curve = [float(v) for v in model.metadata["loss_curve"].split(",")]
        assert curve[-1] < curve[0]

    def test_deterministic_and_seed_sensitive(self):
        table = self._single_entry_table(10.0)
        hp = GloveHyperparams(dim=4, epochs=5, seed=9)
        m1 = train_glove(table, _vocab(2), hp)
        m2 = train_glove(table, _vocab(2), GloveHyperparams(dim=4, epochs=5, seed=9))
        assert np.array_equal(m1.vectors, m2.vectors)
        m3 = train_glove(table, _vocab(2), GloveHyperparams(dim=4, epochs=5, seed=10))
        assert not np.array_equal(m1.vectors, m3.vectors)

    def test_metadata(self):
        table = self._single_entry_table(10.0)
        model = train_glove(table, _vocab(2), GloveHyperparams(dim=4, epochs=2, seed=0))
        md = model.metadata
        assert md["algorithm"] == "GloVe"
        assert md["combination"] == "w+wt"
        assert md["token_mode"] == "LoincOnly"
        assert md["window"] == 5
        assert model.context_vectors.shape == model.vectors.shape

    def test_vocab_size_mismatch(self):
        table = self._single_entry_table(10.0)
        with pytest.raises(ValueError):
            train_glove(table, _vocab(3), GloveHyperparams(dim=4, epochs=1))

    def test_degenerate_vocab(self):
        table = CooccurrenceTable(
            rows=np.array([0]),
            cols=np.array([0]),
            weights=np.array([1.0]),
            vocab_size=1,
            window=5,
            distance_weighting=True,
            vocab_fingerprint="f" * 64,
        )
        with pytest.raises(DegenerateVocab):
            train_glove(table, _vocab(1), GloveHyperparams(epochs=1))

    def test_empty_table(self):
        table = CooccurrenceTable(
            rows=np.empty(0, dtype=np.int64),
            cols=np.empty(0, dtype=np.int64),
            weights=np.empty(0),
            vocab_size=3,
            window=5,
            distance_weighting=True,
            vocab_fingerprint="f" * 64,
        )
        with pytest.raises(EmptyCorpus):
            train_glove(table, _vocab(3), GloveHyperparams(epochs=1))

    def test_norm_guard(self):
        table = self._single_entry_table(10.0)
        hp = GloveHyperparams(dim=4, epochs=1, seed=0, max_vector_norm=1e-9)
        with pytest.raises(TrainingDiverged):
            train_glove(table, _vocab(2), hp)
