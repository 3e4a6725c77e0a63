from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfx.chunker import NounPhrase, chunk
from cfx.corpus import Corpus, Description, ImageRecord, Lexicon
from cfx.errors import HeadUnknown, NoAlternative, Unmodified
from cfx.negmine import (
    AttributeInventory,
    TrainingPair,
    build_inventory,
    flip,
    load_pairs,
    make_training_pairs,
    save_pairs,
)
from cfx.synthworld import oracle_present


def corpus_of(*descs_per_image):
    lex = Lexicon.default()
    records = []
    for i, descs in enumerate(descs_per_image):
        rid = f"i{i}"
        records.append(ImageRecord(rid, "a", [float(i)], tuple(Description.from_text(rid, d, lex) for d in descs)))
    return Corpus(tuple(records), {"a": "Alpha"}, lex, 1)


RED_EYE = NounPhrase(("red",), "eye")
BLACK_EYE = NounPhrase(("black",), "eye")


class TestBuildInventory:
    def test_single_phrase(self):
        assert build_inventory(corpus_of(["a red eye"])).as_dict() == {"eye": [["red"]]}

    def test_two_modifiers_sorted(self):
        inv = build_inventory(corpus_of(["a red eye"], ["a black eye", "a red eye"]))
        assert inv.as_dict() == {"eye": [["black"], ["red"]]}

    def test_bare_nouns_only(self):
        assert len(build_inventory(corpus_of(["an eye and a wing"]))) == 0

    def test_heads_sorted(self):
        inv = build_inventory(corpus_of(["a red wing and a blue eye and a black pointy beak"]))
        assert list(inv) == ["beak", "eye", "wing"]
        assert inv["beak"] == (("black", "pointy"),)


class TestFlip:
    def test_red_to_black(self):
        inv = AttributeInventory({"eye": [("red",), ("black",)]})
        assert flip(RED_EYE, inv, np.random.default_rng(0)) == BLACK_EYE

    def test_no_alternative(self):
        with pytest.raises(NoAlternative):
            flip(RED_EYE, AttributeInventory({"eye": [("red",)]}), np.random.default_rng(0))

    def test_unknown_head(self):
        with pytest.raises(HeadUnknown):
            flip(NounPhrase(("red",), "tail"), AttributeInventory({"eye": [("red",)]}), np.random.default_rng(0))

    def test_unmodified(self):
        with pytest.raises(Unmodified):
            flip(NounPhrase((), "eye"), AttributeInventory({"eye": [("red",)]}), np.random.default_rng(0))

    def test_uniform_over_three_alternatives(self):
        inv = AttributeInventory({"eye": [("red",), ("black",), ("white",), ("orange",)]})
        rng = np.random.default_rng(17)
        counts = Counter(flip(RED_EYE, inv, rng).canonical for _ in range(10000))
        assert set(counts) == {"black eye", "white eye", "orange eye"}
        for c in counts.values():
            assert abs(c / 10000 - 1 / 3) <= 0.05 / 3

    @given(st.lists(st.sampled_from(["red", "black", "pale", "tiny"]), min_size=1, max_size=3), st.integers(0, 999))
    def test_head_kept_and_changed(self, mods, seed):
        inv = AttributeInventory({"eye": [("red",), ("black", "tiny"), ("pale",), tuple(mods)]})
        np_ = NounPhrase(tuple(mods), "eye")
        out = flip(np_, inv, np.random.default_rng(seed))
        assert out.head == "eye" and out != np_
        assert out.modifiers in inv["eye"]


class TestTrainingPairs:
    def test_single_image(self):
        c = corpus_of(["a red eye"])
        inv = AttributeInventory({"eye": [("red",), ("black",)]})
        pairs = make_training_pairs(c, inv, np.random.default_rng(0))
        assert pairs == [TrainingPair("i0", RED_EYE, True), TrainingPair("i0", BLACK_EYE, False)]

    def test_unflippable_gives_positives_only(self):
        c = corpus_of(["a red eye and a blue wing"])
        pairs = make_training_pairs(c, build_inventory(c), np.random.default_rng(0))
        assert pairs and all(p.positive for p in pairs)

    def test_collision_with_own_description_filtered(self):
        # the same image is described with both eyes
        c = corpus_of(["a red eye", "a black eye"])
        pairs = make_training_pairs(c, build_inventory(c), np.random.default_rng(0))
        assert [p.positive for p in pairs] == [True, True]

    def test_deterministic(self, small_world):
        inv = build_inventory(small_world)
        a = make_training_pairs(small_world, inv, np.random.default_rng(5))
        b = make_training_pairs(small_world, inv, np.random.default_rng(5))
        assert a == b

    def test_synthetic_negatives_absent_from_oracle(self, default_world):
        inv = build_inventory(default_world)
        pairs = make_training_pairs(default_world, inv, np.random.default_rng(17))
        violations = [p for p in pairs if not p.positive and oracle_present(default_world, p.image_id, p.phrase)]
        assert violations == []
        positives = [p for p in pairs if p.positive]
        assert all(oracle_present(default_world, p.image_id, p.phrase) for p in positives)
        n_chunks = sum(
            1 for r in default_world for d in r.descriptions for np_ in chunk(d.tokens) if np_.modifiers
        )
        assert len(positives) == n_chunks

    def test_flips_are_attested(self, small_world):
        inv = build_inventory(small_world)
        for p in make_training_pairs(small_world, inv, np.random.default_rng(1)):
            assert p.phrase.modifiers in inv[p.phrase.head]

    def test_dump_round_trip(self, tmp_path, small_world):
        pairs = make_training_pairs(small_world, build_inventory(small_world), np.random.default_rng(2))
        save_pairs(pairs, tmp_path / "p.jsonl")
        assert load_pairs(tmp_path / "p.jsonl") == pairs
