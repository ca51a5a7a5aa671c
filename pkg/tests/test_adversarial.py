import random
from collections import Counter

import pytest

from demoner.adversarial import (
    ADLConfig,
    LabelPermutation,
    adl_loss,
    apply_label_permutation,
    compose,
    identity_permutation,
    permute_examples,
    relabel_instance,
    sample_label_permutation,
)
from demoner.corpus import Instance
from demoner.demo import DemoEntry, Demonstration, demonstrated_input
from demoner.errors import DataError


def _entry(ident, feature, score=0.5):
    inst = Instance.from_tags(ident, (f"E{ident}", "spoke"), (f"B-{feature}", "O"))
    return DemoEntry(inst, score, feature)


class TestPermuteExamples:
    def test_single_entry_unchanged(self):
        demo = Demonstration((_entry("a", "PER"),))
        assert permute_examples(demo, random.Random(0)) is demo

    def test_two_entries_always_swap(self):
        demo = Demonstration((_entry("a", "PER"), _entry("b", "LOC")))
        for seed in range(50):
            out = permute_examples(demo, random.Random(seed))
            assert [e.instance.id for e in out.entries] == ["b", "a"]

    def test_multiset_preserved_and_identity_rejected(self):
        demo = Demonstration(
            (_entry("a", "PER"), _entry("b", "LOC"), _entry("c", "ORG"))
        )
        originals = [e.instance.id for e in demo.entries]
        for seed in range(1000):
            out = permute_examples(demo, random.Random(seed))
            ids = [e.instance.id for e in out.entries]
            assert sorted(ids) == sorted(originals)
            assert ids != originals

    def test_rendered_block_set_preserved(self):
        from demoner.demo import render_template

        demo = Demonstration(
            (_entry("a", "PER"), _entry("b", "LOC"), _entry("c", "ORG"))
        )
        blocks = set(render_template(demo).split(" [SEP] "))
        out = permute_examples(demo, random.Random(3))
        assert set(render_template(out).split(" [SEP] ")) == blocks


class TestSampleLabelPermutation:
    def test_two_features_always_the_swap(self):
        for seed in range(50):
            pi = sample_label_permutation({"PER", "LOC"}, random.Random(seed))
            assert pi.mapping == {"PER": "LOC", "LOC": "PER"}

    def test_three_features_all_five_derangements_possible(self):
        seen = Counter()
        for seed in range(2000):
            pi = sample_label_permutation({"A", "B", "C"}, random.Random(seed))
            assert not pi.is_identity
            seen[tuple(sorted(pi.mapping.items()))] += 1
        assert len(seen) == 5  # 3! - 1 non-identity permutations

    def test_nil_never_remapped(self):
        for seed in range(1000):
            pi = sample_label_permutation({"PER", "LOC", "ORG"}, random.Random(seed))
            assert "O" not in pi.mapping
            assert pi.tag("O") == "O"

    def test_fewer_than_two_features(self):
        with pytest.raises(DataError):
            sample_label_permutation({"PER"}, random.Random(0))

    def test_two_cycle_only_is_a_transposition(self):
        for seed in range(200):
            pi = sample_label_permutation(
                {"A", "B", "C", "D"}, random.Random(seed), two_cycle_only=True
            )
            moved = [f for f, t in pi.mapping.items() if f != t]
            assert len(moved) == 2
            a, b = moved
            assert pi.mapping[a] == b and pi.mapping[b] == a


class TestLabelPermutation:
    def test_must_be_bijection(self):
        with pytest.raises(DataError):
            LabelPermutation({"PER": "LOC", "LOC": "LOC"})

    def test_nil_cannot_be_permuted(self):
        with pytest.raises(DataError):
            LabelPermutation({"O": "PER", "PER": "O"})

    def test_tag_mapping_preserves_prefix(self):
        pi = LabelPermutation({"PER": "LOC", "LOC": "PER"})
        assert pi.tag("B-PER") == "B-LOC"
        assert pi.tag("I-LOC") == "I-PER"
        assert pi.tag("O") == "O"

    def test_unknown_feature_is_error(self):
        pi = LabelPermutation({"PER": "LOC", "LOC": "PER"})
        with pytest.raises(DataError, match="outside"):
            pi.tag("B-ORG")


@pytest.fixture()
def fig4_demonstrated(fig4_instance):
    query = Instance.from_tags(
        "q", ("John", "flew", "to", "Paris"), ("B-PER", "O", "O", "B-LOC")
    )
    demo = Demonstration((DemoEntry(fig4_instance, 0.8, "PER"),))
    return demonstrated_input(query, demo), query


class TestApplyLabelPermutation:
    def test_swap_rewrites_demonstration_and_gold(self, fig4_demonstrated):
        d, query = fig4_demonstrated
        pi = LabelPermutation({"PER": "LOC", "LOC": "PER"})
        permuted, gold = apply_label_permutation(d, query.tags, pi)
        assert permuted.rendered == (
            "John flew to Paris [SEP] Mary traveled to New York last month. "
            "Mary is [LOC]. New York is [PER]."
        )
        # the model is now expected to label John as LOC and Paris as PER
        assert gold == ("B-LOC", "O", "O", "B-PER")

    def test_identity_changes_nothing(self, fig4_demonstrated):
        d, query = fig4_demonstrated
        pi = identity_permutation(["PER", "LOC"])
        permuted, gold = apply_label_permutation(d, query.tags, pi)
        assert permuted.rendered == d.rendered
        assert gold == query.tags

    def test_round_trip_bit_exact(self, fig4_demonstrated):
        d, query = fig4_demonstrated
        pi = LabelPermutation({"PER": "LOC", "LOC": "PER"})
        permuted, gold = apply_label_permutation(d, query.tags, pi)
        restored, gold_back = apply_label_permutation(permuted, gold, pi.inverse())
        assert restored.rendered == d.rendered
        assert gold_back == query.tags

    def test_tag_outside_domain(self, fig4_demonstrated):
        d, _query = fig4_demonstrated
        pi = LabelPermutation({"PER": "LOC", "LOC": "PER"})
        with pytest.raises(DataError):
            apply_label_permutation(d, ("B-ORG", "O", "O", "O"), pi)

    def test_group_action_on_random_permutations(self):
        features = ["A", "B", "C", "D"]
        inst = Instance.from_tags(
            "e",
            ("Ea", "x", "Eb", "x", "Ec", "x", "Ed"),
            ("B-A", "O", "B-B", "O", "B-C", "O", "B-D"),
        )
        query = Instance.from_tags(
            "q", ("Qa", "y", "Qb"), ("B-A", "O", "B-C")
        )
        d = demonstrated_input(
            query, Demonstration((DemoEntry(inst, 0.7, "A"),))
        )
        rng = random.Random(17)
        for _ in range(100):
            p1 = sample_label_permutation(features, rng)
            p2 = sample_label_permutation(features, rng)
            via_two, gold_two = apply_label_permutation(
                *apply_label_permutation(d, query.tags, p1), p2
            )
            combined = compose(p2, p1)
            via_one, gold_one = apply_label_permutation(d, query.tags, combined)
            assert via_two.rendered == via_one.rendered
            assert gold_two == gold_one

    def test_structure_invariants_under_permutation(self, fig4_demonstrated):
        d, query = fig4_demonstrated
        pi = LabelPermutation({"PER": "LOC", "LOC": "PER"})
        permuted, gold = apply_label_permutation(d, query.tags, pi)
        for before, after in zip(d.demonstration.entries, permuted.demonstration.entries):
            assert after.instance.tokens == before.instance.tokens
            assert [(m.start, m.end) for m in after.instance.markups] == [
                (m.start, m.end) for m in before.instance.markups
            ]
        assert [t == "O" for t in gold] == [t == "O" for t in query.tags]

    def test_relabel_requires_tags(self):
        pi = LabelPermutation({"PER": "LOC", "LOC": "PER"})
        with pytest.raises(DataError):
            relabel_instance(Instance(id="u", tokens=("a",)), pi)


class TestAdlLoss:
    def test_reference_value(self):
        config = ADLConfig(alpha=0.9, beta=0.4)
        # 0.9*1 + 0.1*(0.6*2 + 0.4*3) = 0.9 + 0.1*2.4 = 1.14
        assert adl_loss(1.0, 2.0, 3.0, config) == pytest.approx(1.14, abs=1e-12)

    def test_alpha_one_is_main_only(self):
        assert adl_loss(1.5, 9.0, 7.0, ADLConfig(alpha=1.0, beta=0.3)) == 1.5

    def test_alpha_zero_beta_one_is_label_only(self):
        assert adl_loss(1.5, 9.0, 7.0, ADLConfig(alpha=0.0, beta=1.0)) == 7.0

    def test_linear_in_each_argument(self):
        config = ADLConfig(alpha=0.7, beta=0.2)
        base = adl_loss(1.0, 1.0, 1.0, config)
        assert adl_loss(2.0, 1.0, 1.0, config) - base == pytest.approx(
            0.7, abs=1e-12
        )
        assert adl_loss(1.0, 2.0, 1.0, config) - base == pytest.approx(
            0.3 * 0.8, abs=1e-12
        )
        assert adl_loss(1.0, 1.0, 2.0, config) - base == pytest.approx(
            0.3 * 0.2, abs=1e-12
        )

    def test_rejects_bad_losses(self):
        config = ADLConfig()
        with pytest.raises(DataError):
            adl_loss(float("inf"), 1.0, 1.0, config)
        with pytest.raises(DataError):
            adl_loss(1.0, -0.1, 1.0, config)

    def test_config_validation(self):
        with pytest.raises(DataError):
            ADLConfig(alpha=1.2)
        with pytest.raises(DataError):
            ADLConfig(beta=-0.1)
