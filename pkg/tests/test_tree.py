import numpy as np
import pytest
from hypothesis import given, strategies as st

from scotkit.tree import (AdaptedProcess, NoiseSpec, NoiseSpecError, TreeTooLargeError, build_tree,
                          cond_expectation, expectation, renormalize, to_children)


def rad_tree(d=1, N=2):
    return build_tree(NoiseSpec.rademacher(d, N))


def three_point():
    # values -a, 0, a with P(+-a) = 1/(2 a^2) has mean 0 and variance 1
    a = 2.0
    return [(-a, 1 / (2 * a * a)), (0.0, 1 - 1 / (a * a)), (a, 1 / (2 * a * a))]


@st.composite
def trees(draw, max_N=3, max_d=2):
    d = draw(st.integers(1, max_d))
    N = draw(st.integers(1, max_N))
    kinds = draw(st.lists(st.sampled_from(["rad", "three"]), min_size=d, max_size=d))
    sup = [[(1.0, 0.5), (-1.0, 0.5)] if k == "rad" else three_point() for k in kinds]
    return build_tree(NoiseSpec(d=d, N=N, support=sup))


class TestBuild:
    def test_binary_counts(self):
        t = rad_tree(1, 2)
        assert t.total_nodes == 7
        assert t.n_nodes == [1, 2, 4]
        np.testing.assert_allclose(t.prob[2], 0.25, atol=0)

    def test_two_coordinates(self):
        t = rad_tree(2, 1)
        assert t.total_nodes == 5
        np.testing.assert_allclose(t.prob[1], 0.25, atol=0)

    def test_variance_two_rejected(self):
        spec = NoiseSpec(d=1, N=1, support=[[(-1.0, 2 / 3), (2.0, 1 / 3)]])
        with pytest.raises(NoiseSpecError, match=r"coordinate 1 \(stage 1\).*second moment"):
            build_tree(spec)

    @pytest.mark.parametrize("support,msg", [
        ([[(1.0, 1.0)]], "support size"),
        ([[(1.0, 0.6), (-1.0, 0.6)]], "sum to"),
        ([[(1.0, 0.5), (-0.5, 0.5)]], "mean"),
        ([[(1.0, 1.5), (-1.0, -0.5)]], "probabilities must be > 0"),
    ])
    def test_bad_laws(self, support, msg):
        with pytest.raises(NoiseSpecError, match=msg):
            build_tree(NoiseSpec(d=1, N=1, support=support))

    def test_stage_override(self):
        spec = NoiseSpec(d=1, N=2, support=[[(1.0, 0.5), (-1.0, 0.5)]],
                         stage_overrides={2: [three_point()]})
        t = build_tree(spec)
        assert t.n_nodes == [1, 2, 6]
        bad = NoiseSpec(d=1, N=2, support=[[(1.0, 0.5), (-1.0, 0.5)]],
                        stage_overrides={2: [[(-1.0, 2 / 3), (2.0, 1 / 3)]]})
        with pytest.raises(NoiseSpecError, match="stage 2"):
            bad.validate()

    def test_root_and_order(self):
        t = rad_tree(2, 2)
        root = t.node(0)
        assert root.parent == -1 and root.prob == 1.0
        np.testing.assert_array_equal(root.w, 0.0)
        # lexicographic: first coordinate varies slowest
        np.testing.assert_array_equal(t.branch_noise[1], [[1, 1], [1, -1], [-1, 1], [-1, -1]])
        assert t.children(0) == [1, 2, 3, 4]
        assert t.node(5).parent == 1

    def test_node_budget(self):
        with pytest.raises(TreeTooLargeError):
            build_tree(NoiseSpec.rademacher(3, 10), max_nodes=1000)

    def test_renormalize(self):
        spec = NoiseSpec(d=1, N=1, support=[[(0.0, 1.0), (2.0, 1.0)]])
        fixed = renormalize(spec)
        fixed.validate()
        np.testing.assert_allclose([v for v, _ in fixed.support[0]], [-1.0, 1.0])


class TestExpectations:
    def test_examples(self):
        t = rad_tree(1, 1)
        assert expectation(t.constant(1, 7.0)) == pytest.approx(7.0)
        x = AdaptedProcess(t, 1, np.array([2.0, 4.0]))  # w=+1 first
        assert expectation(x) == pytest.approx(3.0)
        w = t.noise_process(1, 1)
        assert expectation(w) == pytest.approx(0.0)
        assert cond_expectation(w).values[0] == pytest.approx(0.0)
        assert cond_expectation(w, weight=1).values[0] == pytest.approx(1.0)
        assert cond_expectation(x).values[0] == pytest.approx(3.0)

    def test_bad_weight(self):
        t = rad_tree(1, 1)
        with pytest.raises(ValueError):
            cond_expectation(t.noise_process(1, 1), weight=2)
        with pytest.raises(ValueError):
            cond_expectation(t.constant(0, 1.0))

    @given(trees(), st.integers(0, 2**31 - 1))
    def test_tower_and_orthogonality(self, t, seed):
        rng = np.random.default_rng(seed)
        for k in range(1, t.N + 1):
            x = AdaptedProcess(t, k, rng.normal(size=(t.n_nodes[k], 2)))
            ce = cond_expectation(x)
            np.testing.assert_allclose(expectation(ce), expectation(x), atol=1e-12)
            y = AdaptedProcess(t, k - 1, rng.normal(size=(t.n_nodes[k - 1], 2)))
            resid = x - to_children(ce)
            inner = expectation(to_children(y) * resid)
            np.testing.assert_allclose(inner, 0.0, atol=1e-12)

    @given(trees())
    def test_probabilities(self, t):
        for k in range(1, t.N + 1):
            par = t.parent_index(k)
            sums = np.bincount(par, weights=t.prob[k])
            np.testing.assert_allclose(sums, t.prob[k - 1], atol=1e-12)
        # leaf probability = product along its path
        for gid in range(t.offsets[t.N], t.total_nodes):
            prod, node = 1.0, t.node(gid)
            while node.parent >= 0:
                j = node.id - t.offsets[node.stage]
                prod *= t.branch_prob[node.stage][j % t.branching(node.stage)]
                node = t.node(node.parent)
            assert abs(prod - t.node(gid).prob) <= 1e-12

    def test_process_shape_check(self):
        t = rad_tree(1, 1)
        with pytest.raises(ValueError, match="needs 2 node values"):
            AdaptedProcess(t, 1, np.zeros(3))
