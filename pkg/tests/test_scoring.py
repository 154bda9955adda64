"""Enrollment selection, pair generation/scoring, and score summaries."""

import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from voxclean.embeddings import EmbeddingTable, EmbeddingVector, table_provider
from voxclean.errors import EmptyInputError
from voxclean.ingest import mark_eligibility, parse_manifest
from voxclean.scoring import (
    PairStatus,
    ScoredPair,
    generate_pairs,
    histogram_bin,
    read_pairs_tsv,
    score_pairs,
    select_enrollment,
    summarize_scores,
    write_pairs_tsv,
)


def tsv(*rows):
    header = "client_id\tpath\tsentence"
    return ("\n".join([header, *rows]) + "\n").encode("utf-8")


def manifest_with_tags(*rows, language="en"):
    m = parse_manifest(tsv(*rows), language)
    return m, mark_eligibility(m)


def make_table(dim, ids, rng):
    table = EmbeddingTable(dim)
    for uid in ids:
        table.add(EmbeddingVector(uid, rng.standard_normal(dim).astype(np.float32)))
    return table


class TestSelectEnrollment:
    def test_final_row_wins(self):
        rows = [f"pad\tp{i}\tx y z" for i in range(4)]
        rows.insert(2, "c\ta\tone two three")
        rows.append("c\tb\tfour five six")
        rows.append("c\tc\tseven eight nine")
        m, tags = manifest_with_tags(*rows, "pad\tp9\tx y z")
        assignment = select_enrollment(m, tags)
        assert assignment["c"] == "c"  # greatest row_index for client c

    def test_enrollment_even_if_short(self):
        # the final recording anchors the client even under 3 tokens
        m, tags = manifest_with_tags("c\ta\tone two three", "c\tb\ttwo only")
        assert select_enrollment(m, tags)["c"] == "b"

    def test_singleton_absent(self):
        m, tags = manifest_with_tags(
            "solo\ta\tone two three", "duo\tb\tx y z", "duo\tc\tx y z"
        )
        assignment = select_enrollment(m, tags)
        assert "solo" not in assignment
        assert assignment == {"duo": "c"}

    def test_two_clients_independent(self):
        m, tags = manifest_with_tags(
            "c1\ta\tx y z", "c2\tb\tx y z", "c1\tc\tx y z", "c2\td\tx y z"
        )
        assert select_enrollment(m, tags) == {"c1": "c", "c2": "d"}


class TestGeneratePairs:
    def test_k_minus_one_pairs(self):
        rows = [f"c\tu{i}\tword word word" for i in range(6)]
        m, tags = manifest_with_tags(*rows)
        pairs = generate_pairs(m, select_enrollment(m, tags), tags)
        assert len(pairs) == 5
        assert all(p.test_id != p.enrollment_id for p in pairs)

    def test_too_short_becomes_skipped(self):
        # Oracle: enumerate the rule by hand. 3 records, enrollment = u2;
        # u0 scorable, u1 too short -> one unscored pair + one skipped pair.
        m, tags = manifest_with_tags(
            "c\tu0\tone two three", "c\tu1\ttwo words", "c\tu2\tfour five six"
        )
        pairs = generate_pairs(m, select_enrollment(m, tags), tags)
        statuses = {p.test_id: p.status for p in pairs}
        assert statuses == {
            "u0": PairStatus.UNSCORED,
            "u1": PairStatus.SKIPPED_TOO_SHORT,
        }

    def test_empty_assignment(self):
        m, tags = manifest_with_tags("solo\tu0\tone two three")
        assert generate_pairs(m, select_enrollment(m, tags), tags) == []

    def test_deterministic_order(self):
        rows = [
            "b\tu3\tx y z",
            "a\tu1\tx y z",
            "b\tu4\tx y z",
            "a\tu2\tx y z",
            "b\tu5\tx y z",
        ]
        m, tags = manifest_with_tags(*rows)
        pairs = generate_pairs(m, select_enrollment(m, tags), tags)
        assert [(p.client_id, p.test_id) for p in pairs] == [
            ("a", "u1"),
            ("b", "u3"),
            ("b", "u4"),
        ]

    @given(st.lists(st.integers(2, 7), min_size=1, max_size=6))
    def test_pair_count_recount(self, sizes):
        rows = []
        for c, k in enumerate(sizes):
            rows.extend(f"c{c}\tu{c}_{i}\tone two three" for i in range(k))
        m, tags = manifest_with_tags(*rows)
        pairs = generate_pairs(m, select_enrollment(m, tags), tags)
        # brute-force recount: every client contributes (records - 1) pairs
        assert len(pairs) == sum(k - 1 for k in sizes)


class TestScorePairs:
    def test_scoring_and_missing_statuses(self):
        m, tags = manifest_with_tags(
            "c\tu0\tone two three",
            "c\tu1\tone two three",
            "c\tu2\tone two three",
            "d\tu3\tone two three",
            "d\tu4\tone two three",
        )
        pairs = generate_pairs(m, select_enrollment(m, tags), tags)
        rng = np.random.default_rng(7)
        table = make_table(8, ["u0", "u1", "u2", "u3"], rng)  # u4 = d's enrollment missing
        scored = score_pairs(pairs, table_provider(table))
        by_test = {p.test_id: p for p in scored}
        assert by_test["u0"].status is PairStatus.SCORED
        assert -1.0 <= by_test["u0"].score <= 1.0
        assert by_test["u3"].status is PairStatus.MISSING_ENROLLMENT_EMBEDDING
        assert by_test["u3"].score is None

    def test_missing_test_embedding(self):
        m, tags = manifest_with_tags("c\tu0\tone two three", "c\tu1\tone two three")
        pairs = generate_pairs(m, select_enrollment(m, tags), tags)
        table = make_table(4, ["u1"], np.random.default_rng(0))
        scored = score_pairs(pairs, table_provider(table))
        assert scored[0].status is PairStatus.MISSING_TEST_EMBEDDING

    def test_determinism_over_ten_thousand_pairs(self):
        rng = np.random.default_rng(11)
        rows = []
        for c in range(500):
            rows.extend(f"c{c}\tu{c}_{i}\tone two three" for i in range(21))
        m, tags = manifest_with_tags(*rows)
        pairs = generate_pairs(m, select_enrollment(m, tags), tags)
        assert len(pairs) == 10_000
        ids = [r.utterance_id for r in m.records]
        provider = table_provider(make_table(16, ids, rng))
        first = score_pairs(pairs, provider)
        second = score_pairs(pairs, provider)
        assert first == second


def sp(score, language="en", n=[0]):
    n[0] += 1
    return ScoredPair(language, "c", "e", f"t{n[0]}", score, PairStatus.SCORED)


class TestSummaries:
    def test_median_odd(self):
        s = summarize_scores([sp(0.1), sp(0.2), sp(0.3)])
        assert s.median == pytest.approx(0.2)

    def test_quartiles_interpolated(self):
        # hand-evaluated linear interpolation at (n-1)p over {1,2,3,4},
        # shrunk into [-1,1] by scaling x/10
        s = summarize_scores([sp(0.1), sp(0.2), sp(0.3), sp(0.4)])
        assert s.q1 == pytest.approx(0.175, abs=1e-12)
        assert s.q3 == pytest.approx(0.325, abs=1e-12)
        assert s.iqr == pytest.approx(0.15, abs=1e-12)

    def test_degenerate_all_equal(self):
        s = summarize_scores([sp(0.5), sp(0.5), sp(0.5)])
        assert s.q1 == s.median == s.q3 == 0.5
        assert s.iqr == 0.0

    def test_empty_group_errors(self):
        with pytest.raises(EmptyInputError):
            summarize_scores([sp(0.5, language="en")], group="fr")

    def test_histogram_mass_and_bins(self):
        scores = [-1.0, -0.975, 0.0, 0.999, 1.0]
        s = summarize_scores([sp(x) for x in scores])
        assert sum(s.histogram) == s.n == 5
        assert s.histogram[0] == 2  # [-1.0, -0.95)
        assert s.histogram[20] == 1  # [0.0, 0.05)
        assert s.histogram[39] == 2  # [0.95, 1.0] closed above

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=300))
    def test_quartiles_match_independent_oracle(self, scores):
        s = summarize_scores([sp(x) for x in scores])

        def oracle(p):
            data = sorted(scores)
            idx = (len(data) - 1) * p
            lo = int(idx)
            hi = min(lo + 1, len(data) - 1)
            frac = idx - lo
            return data[lo] * (1 - frac) + data[hi] * frac

        assert s.q1 == pytest.approx(oracle(0.25), abs=1e-12)
        assert s.median == pytest.approx(oracle(0.5), abs=1e-12)
        assert s.q3 == pytest.approx(oracle(0.75), abs=1e-12)
        assert sum(s.histogram) == len(scores)

    @given(st.floats(-1, 1))
    def test_histogram_bin_unique(self, score):
        b = histogram_bin(score)
        assert 0 <= b < 40
        lower = -1 + 0.05 * b
        upper = -1 + 0.05 * (b + 1)
        if b < 39:
            assert lower <= score < upper
        else:
            assert lower <= score <= 1.0


class TestPairsTsv:
    def test_round_trip_with_missing_scores(self, tmp_path):
        pairs = [
            ScoredPair("en", "c", "e", "t1", 0.123456789, PairStatus.SCORED),
            ScoredPair("en", "c", "e", "t2", None, PairStatus.SKIPPED_TOO_SHORT),
            ScoredPair(
                "fr", "d", "e2", "t3", None, PairStatus.MISSING_TEST_EMBEDDING
            ),
        ]
        path = tmp_path / "pairs.tsv"
        assert write_pairs_tsv(path, pairs) == 3
        again = read_pairs_tsv(path)
        assert [p.status for p in again] == [p.status for p in pairs]
        assert again[0].score == pytest.approx(0.123457, abs=5e-7)  # 6 decimals
        assert again[1].score is None
        text = path.read_text()
        assert "0.123457" in text

    def test_score_formatting_six_decimals(self):
        buf = io.StringIO()
        write_pairs_tsv(buf, [ScoredPair("en", "c", "e", "t", 0.5, PairStatus.SCORED)])
        assert "0.500000" in buf.getvalue()
