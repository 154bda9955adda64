"""Cosine similarity contract and embedding-table I/O."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from voxclean.embeddings import (
    EmbeddingTable,
    EmbeddingVector,
    cosine_similarity,
    load_embedding_table,
    table_provider,
    write_embedding_table,
)
from voxclean.errors import (
    DegenerateInputError,
    DimensionMismatchError,
    DuplicateIdError,
    EmbeddingFormatError,
)


def vec(vid, *values):
    return EmbeddingVector(vid, np.array(values, dtype=np.float32))


class TestCosine:
    def test_self_similarity(self):
        a = vec("a", 0.3, -0.4, 0.5)
        assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-7)

    def test_orthogonal(self):
        assert cosine_similarity(vec("a", 1, 0), vec("b", 0, 1)) == pytest.approx(
            0.0, abs=1e-7
        )

    def test_analytic_sqrt2_over_2(self):
        got = cosine_similarity(vec("a", 1, 0), vec("b", 1, 1))
        assert got == pytest.approx(math.sqrt(2) / 2, abs=1e-7)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine_similarity(vec("a", 1, 0), vec("b", 1, 0, 0))

    def test_zero_norm(self):
        with pytest.raises(DegenerateInputError):
            cosine_similarity(vec("a", 0, 0), vec("b", 1, 0))

    @given(
        st.integers(2, 64).flatmap(
            lambda d: st.tuples(
                arrays(np.float32, d, elements=st.floats(-10, 10, width=32)),
                arrays(np.float32, d, elements=st.floats(-10, 10, width=32)),
            )
        )
    )
    def test_bounds_and_symmetry(self, pair):
        a_values, b_values = pair
        if np.linalg.norm(a_values) == 0 or np.linalg.norm(b_values) == 0:
            return
        a, b = EmbeddingVector("a", a_values), EmbeddingVector("b", b_values)
        s = cosine_similarity(a, b)
        assert -1.0 <= s <= 1.0
        assert cosine_similarity(b, a) == s

    @settings(max_examples=50)
    @given(
        arrays(np.float32, 8, elements=st.floats(-5, 5, width=32)),
        st.floats(0.01, 100.0),
    )
    def test_scale_invariance(self, values, c):
        if np.linalg.norm(values) == 0:
            return
        a = EmbeddingVector("a", values)
        b = vec("b", *range(1, 9))
        scaled = EmbeddingVector("a2", (values.astype(np.float64) * c).astype(np.float32))
        if np.linalg.norm(scaled.values) == 0 or not np.all(
            np.isfinite(scaled.values)
        ):
            return
        assert cosine_similarity(scaled, b) == pytest.approx(
            cosine_similarity(a, b), abs=1e-6
        )

    def test_nonfinite_rejected_at_construction(self):
        with pytest.raises(EmbeddingFormatError):
            vec("a", float("nan"), 1.0)


EXAMPLE_TABLE = b"""dim\t4
u1\t0.1 0.2 0.3 0.4
u2\t-1.0 0.5 2.5e-1 1e0
"""


class TestTableIO:
    def test_load_two_rows(self):
        table = load_embedding_table(io.BytesIO(EXAMPLE_TABLE))
        assert len(table) == 2
        assert table.dim == 4
        assert table.get("u2").values[3] == pytest.approx(1.0)

    def test_row_dim_mismatch(self):
        bad = b"dim\t4\nu1\t0.1 0.2 0.3\n"
        with pytest.raises(EmbeddingFormatError, match="line 2"):
            load_embedding_table(io.BytesIO(bad))

    def test_duplicate_id(self):
        bad = b"dim\t2\nu1\t0.1 0.2\nu1\t0.3 0.4\n"
        with pytest.raises(DuplicateIdError):
            load_embedding_table(io.BytesIO(bad))

    def test_nonfinite_value(self):
        bad = b"dim\t2\nu1\tnan 0.2\n"
        with pytest.raises(EmbeddingFormatError):
            load_embedding_table(io.BytesIO(bad))

    def test_bad_header(self):
        with pytest.raises(EmbeddingFormatError):
            load_embedding_table(io.BytesIO(b"dimension 4\n"))

    def test_round_trip(self, tmp_path):
        table = load_embedding_table(io.BytesIO(EXAMPLE_TABLE))
        out = tmp_path / "emb.tsv"
        write_embedding_table(out, table.dim, (table.get(i) for i in table.ids()))
        again = load_embedding_table(out)
        assert again.ids() == table.ids()
        for uid in table.ids():
            np.testing.assert_array_equal(again.get(uid).values, table.get(uid).values)


class TestProvider:
    def test_known_unknown_and_dim(self):
        table = load_embedding_table(io.BytesIO(EXAMPLE_TABLE))
        provider = table_provider(table)
        assert provider.get("u1").utterance_id == "u1"
        assert provider.get("missing") is None
        assert provider.dim() == 4

    def test_table_rejects_wrong_dim_add(self):
        table = EmbeddingTable(3)
        with pytest.raises(DimensionMismatchError):
            table.add(vec("a", 1.0, 2.0))
