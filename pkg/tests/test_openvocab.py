import numpy as np
import pytest

from seg2hoi.openvocab import (
    HashWordEmbedder,
    build_text_bank,
    object_sentence,
    pool_visual_prompt,
    retrieve_text,
    retrieve_visual,
    similarity_logits,
    verb_sentence,
)


class TestTemplates:
    def test_object_sentence(self):
        assert object_sentence("cup") == "A photo of a person and a/an cup"

    def test_verb_sentence_ing(self):
        assert verb_sentence("hold") == "A photo of a person holding"
        assert verb_sentence("ride") == "A photo of a person riding"


class TestEmbedder:
    def test_deterministic(self):
        emb = HashWordEmbedder(dim=32)
        a = emb("a person holding a cup")
        b = emb("a person holding a cup")
        assert np.array_equal(a, b)

    def test_unit_norm(self):
        emb = HashWordEmbedder(dim=32)
        assert np.linalg.norm(emb("ball")) == pytest.approx(1.0)

    def test_word_overlap_raises_similarity(self):
        emb = HashWordEmbedder(dim=64)
        shared = float(emb("person holding cup") @ emb("a photo of a person and a/an cup"))
        unshared = float(emb("person holding cup") @ emb("a photo of a person and a/an ball"))
        assert shared > unshared

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            HashWordEmbedder()("  !! ")


class TestBank:
    def test_rows_unit_norm_and_stable(self):
        emb = HashWordEmbedder(dim=48)
        bank = build_text_bank(["cup", "ball"], ["hold", "near"], emb)
        again = build_text_bank(["cup", "ball"], ["hold", "near"], emb)
        assert np.array_equal(bank.objects, again.objects)
        assert np.allclose(np.linalg.norm(bank.objects, axis=1), 1.0)
        assert np.allclose(np.linalg.norm(bank.verbs, axis=1), 1.0)
        assert bank.object_sentences[0] == "A photo of a person and a/an cup"

    def test_empty_names_rejected(self):
        with pytest.raises(ValueError):
            build_text_bank([], ["hold"], HashWordEmbedder())


class TestSimilarity:
    def test_proportional_row_scores_one(self):
        bank = np.eye(3, 8)
        e = np.zeros((2, 8))
        e[0] = 7.5 * bank[1]
        sims = similarity_logits(e, bank)
        assert sims[0, 1] == pytest.approx(1.0)
        assert sims[0, 0] == pytest.approx(0.0)

    def test_zero_row_guard(self):
        sims = similarity_logits(np.zeros((1, 4)), np.eye(2, 4))
        assert np.all(sims == 0)

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(3)
        e = rng.standard_normal((5, 16))
        bank = rng.standard_normal((4, 16))
        got = similarity_logits(e, bank)
        for i in range(5):
            for j in range(4):
                want = e[i] @ bank[j] / (np.linalg.norm(e[i]) * np.linalg.norm(bank[j]))
                assert got[i, j] == pytest.approx(want, abs=1e-6)

    def test_bounded(self):
        rng = np.random.default_rng(4)
        sims = similarity_logits(rng.standard_normal((6, 8)), rng.standard_normal((3, 8)))
        assert np.all(sims <= 1 + 1e-9) and np.all(sims >= -1 - 1e-9)


class TestRetrieval:
    def test_visual_orthonormal_rows(self):
        e_u = np.eye(5, 12)
        assert retrieve_visual(e_u[3].copy(), e_u) == 3
        assert retrieve_visual(10.0 * e_u[3], e_u) == 3  # scale invariant

    def test_visual_linear_scan_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            e_u = rng.standard_normal((8, 16))
            prompt = rng.standard_normal(16)
            sims = [
                float(prompt @ e_u[i] / (np.linalg.norm(prompt) * np.linalg.norm(e_u[i])))
                for i in range(8)
            ]
            assert retrieve_visual(prompt, e_u) == int(np.argmax(sims))

    def test_text_product_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            e_o = rng.standard_normal((7, 16))
            e_v = rng.standard_normal((7, 16))
            prompt = rng.standard_normal(16)

            def cos(a, b):
                return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))

            products = [cos(e_o[i], prompt) * cos(e_v[i], prompt) for i in range(7)]
            assert retrieve_text(prompt, e_o, e_v) == int(np.argmax(products))

    def test_text_clear_winner(self):
        prompt = np.zeros(8)
        prompt[0] = 1.0
        e_o = np.zeros((3, 8))
        e_v = np.zeros((3, 8))
        e_o[1, 0] = 1.0
        e_v[1, 0] = 1.0
        assert retrieve_text(prompt, e_o, e_v) == 1

    def test_orthogonal_prompt_ties_to_zero(self):
        prompt = np.zeros(8)
        prompt[7] = 1.0
        e = np.eye(3, 8)
        assert retrieve_text(prompt, e, e) == 0


class TestVisualPooling:
    def test_single_point_picks_cell(self):
        f_seg = np.arange(4 * 4 * 2, dtype=float).reshape(4, 4, 2)
        got = pool_visual_prompt(f_seg, [(9.0, 5.0)], image_size=(16, 16))
        assert np.array_equal(got, f_seg[1, 2])

    def test_duplicate_points_idempotent(self):
        rng = np.random.default_rng(8)
        f_seg = rng.standard_normal((4, 4, 3))
        one = pool_visual_prompt(f_seg, [(3.0, 3.0)], (16, 16))
        many = pool_visual_prompt(f_seg, [(3.0, 3.0)] * 5, (16, 16))
        assert np.allclose(one, many)

    def test_out_of_bounds_rejected(self):
        f_seg = np.zeros((4, 4, 2))
        with pytest.raises(ValueError):
            pool_visual_prompt(f_seg, [(20.0, 3.0)], (16, 16))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pool_visual_prompt(np.zeros((4, 4, 2)), [], (16, 16))
