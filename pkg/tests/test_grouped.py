import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupednormal.errors import (
    IndexOutOfRange,
    MalformedCSV,
    MalformedEdge,
    NegativeCount,
    ShapeMismatch,
)
from groupednormal.grouped import (
    Axis,
    GroupedTable,
    Rectangle,
    bin_samples,
    cell_rectangle,
    format_ext_real,
    load_galton,
    marginal,
    parse_ext_real,
    parse_grouped_csv,
    read_grouped_csv,
    to_csv,
    write_grouped_csv,
)

THREE_BINS = "lo,hi,count\n-inf,66,10\n66,70,80\n70,inf,10\n"


class TestExtReal:
    @pytest.mark.parametrize("tok,val", [("inf", np.inf), ("-INF", -np.inf), ("+Inf", np.inf),
                                         ("66", 66.0), (" 1.5e2 ", 150.0)])
    def test_parse(self, tok, val):
        assert parse_ext_real(tok) == val

    @pytest.mark.parametrize("tok", ["nan", "", "abc", "1,5"])
    def test_parse_rejects(self, tok):
        with pytest.raises(MalformedCSV):
            parse_ext_real(tok)

    @given(st.floats(allow_nan=False))
    def test_round_trip_bit_exact(self, x):
        assert parse_ext_real(format_ext_real(x)) == x

    def test_order(self):
        edges = [parse_ext_real(t) for t in ("-inf", "-1e300", "0", "1e300", "inf")]
        assert edges == sorted(edges)


class TestAxis:
    def test_valid(self):
        ax = Axis([-np.inf, 66, 70, np.inf])
        assert ax.k == 3
        np.testing.assert_array_equal(ax.lower, [-np.inf, 66, 70])

    @pytest.mark.parametrize("edges", [[1.0], [0, 0, 1], [0, 2, 1], [0, np.inf, 2],
                                       [0, np.nan, 1], [np.inf, 1]])
    def test_invalid(self, edges):
        with pytest.raises(MalformedEdge):
            Axis(edges)


class TestParse:
    def test_three_bins(self):
        t = parse_grouped_csv(THREE_BINS)
        assert t.d == 1 and t.shape == (3,) and t.n == 100
        np.testing.assert_array_equal(t.axes[0].edges, [-np.inf, 66, 70, np.inf])

    def test_stream_input_and_row_order(self):
        shuffled = "lo,hi,count\n70,inf,10\n-inf,66,10\n66,70,80\n"
        t = parse_grouped_csv(io.StringIO(shuffled))
        np.testing.assert_array_equal(t.counts, [10, 80, 10])

    def test_hi_not_above_lo(self):
        with pytest.raises(MalformedEdge):
            parse_grouped_csv("lo,hi,count\n-inf,66,10\n66,66,5\n")

    def test_negative(self):
        with pytest.raises(NegativeCount):
            parse_grouped_csv("lo,hi,count\n-inf,0,-1\n0,inf,3\n")

    def test_gap(self):
        with pytest.raises(MalformedEdge):
            parse_grouped_csv("lo,hi,count\n-inf,0,1\n1,inf,3\n")

    def test_incomplete_grid(self):
        text = "lo_1,hi_1,lo_2,hi_2,count\n-inf,0,-inf,0,1\n0,inf,-inf,0,1\n-inf,0,0,inf,1\n"
        with pytest.raises(ShapeMismatch):
            parse_grouped_csv(text)

    def test_duplicate(self):
        with pytest.raises(ShapeMismatch):
            parse_grouped_csv("lo,hi,count\n-inf,0,1\n-inf,0,1\n0,inf,3\n")

    @pytest.mark.parametrize("text", ["", "a,b,c\n1,2,3\n", "lo,hi,count\n0,1\n",
                                      "lo,hi,count\n0,1,2.5\n"])
    def test_malformed(self, text):
        with pytest.raises(MalformedCSV):
            parse_grouped_csv(text)

    def test_dims_mismatch(self):
        with pytest.raises(ShapeMismatch):
            parse_grouped_csv(THREE_BINS, dims=2)

    def test_zero_counts_kept(self):
        t = parse_grouped_csv("lo,hi,count\n-inf,0,0\n0,1,4\n1,inf,0\n")
        assert t.shape == (3,) and t.n == 4


class TestCells:
    def test_cell_rectangle_1d(self):
        t = parse_grouped_csv(THREE_BINS)
        assert cell_rectangle(t, 0) == Rectangle.interval(-np.inf, 66)
        assert cell_rectangle(t, (2,)) == Rectangle.interval(70, np.inf)

    def test_cell_rectangle_2d(self):
        t = GroupedTable([[0, 1, 2, 3], [-np.inf, 5, np.inf]], np.ones((3, 2), int))
        r = cell_rectangle(t, (1, 0))
        np.testing.assert_array_equal(r.lower, [1, -np.inf])
        np.testing.assert_array_equal(r.upper, [2, 5])

    @pytest.mark.parametrize("idx", [3, (-1,), (0, 0)])
    def test_out_of_range(self, idx):
        t = parse_grouped_csv(THREE_BINS)
        with pytest.raises(IndexOutOfRange):
            cell_rectangle(t, idx)

    def test_tiling(self, rng):
        """Random points fall in exactly one cell."""
        t = GroupedTable([[-np.inf, -1, 0, 2, np.inf], [-np.inf, 0.5, np.inf]],
                         np.ones((4, 2), int))
        x = rng.normal(size=(2000, 2)) * 2
        hits = sum(r.contains(x).astype(int) for _, r, _ in t.cells())
        np.testing.assert_array_equal(hits, 1)

    def test_rectangle_validation(self):
        with pytest.raises(MalformedEdge):
            Rectangle(np.array([0.0, 1.0]), np.array([1.0, 1.0]))


class TestGalton:
    def test_totals(self, galton_2d, galton_parent, galton_child):
        assert galton_2d.n == 928 and galton_2d.shape == (11, 14)
        np.testing.assert_array_equal(marginal(galton_2d, 0).counts, galton_parent.counts)
        np.testing.assert_array_equal(marginal(galton_2d, 1).counts, galton_child.counts)
        assert galton_parent.n == galton_child.n == 928

    def test_parent_histogram(self, galton_parent):
        np.testing.assert_array_equal(
            galton_parent.counts, [14, 23, 66, 78, 211, 219, 183, 68, 43, 19, 4])

    def test_unknown(self):
        with pytest.raises(ValueError):
            load_galton("grandchild")


class TestMarginal:
    def test_identity_1d(self):
        t = parse_grouped_csv(THREE_BINS)
        assert marginal(t, 0) == t

    def test_bad_dim(self, galton_2d):
        with pytest.raises(IndexOutOfRange):
            marginal(galton_2d, 2)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 50), min_size=24, max_size=24))
    def test_conservation(self, counts):
        counts = np.array(counts).reshape(2, 3, 4)
        if counts.sum() == 0:
            counts[0, 0, 0] = 1
        t = GroupedTable([[0, 1, 2], [0, 1, 2, 3], [0, 1, 2, 3, 4]], counts)
        for j in range(3):
            assert marginal(t, j).n == t.n


class TestRoundTrip:
    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=5, unique=True),
        st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=4, unique=True),
        st.booleans(),
        st.data(),
    )
    def test_2d(self, e1, e2, open_ends, data):
        def edges(v):
            v = sorted(v)
            return [-np.inf, *v, np.inf] if open_ends or len(v) < 2 else v
        ax = [edges(e1), edges(e2)]
        shape = (len(ax[0]) - 1, len(ax[1]) - 1)
        if 0 in shape:
            return
        cnt = np.array(data.draw(st.lists(st.integers(0, 1000), min_size=shape[0] * shape[1],
                                          max_size=shape[0] * shape[1]))).reshape(shape)
        cnt.flat[0] += 1
        t = GroupedTable(ax, cnt)
        assert parse_grouped_csv(to_csv(t)) == t

    def test_file(self, tmp_path, galton_2d):
        p = tmp_path / "g.csv"
        write_grouped_csv(galton_2d, p)
        assert read_grouped_csv(p, dims=2) == galton_2d


class TestBinning:
    def test_boundary_goes_up(self):
        t = bin_samples([0.0, 1.0, 1.0, 2.5], [[-np.inf, 1.0, 2.0, np.inf]])
        np.testing.assert_array_equal(t.counts, [1, 2, 1])

    def test_outside(self):
        with pytest.raises(IndexOutOfRange):
            bin_samples([5.0], [[0.0, 1.0]])

    def test_total(self, rng):
        x = rng.normal(size=(500, 2))
        t = bin_samples(x, [[-np.inf, 0, np.inf], [-np.inf, -1, 1, np.inf]])
        assert t.n == 500 and t.shape == (2, 3)
