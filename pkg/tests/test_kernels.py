import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hierfuse.hierarchy import SequenceInstance, TreeInstance, tree_from_parents
from hierfuse.kernels import (
    GramMatrix,
    KernelError,
    PackedInstances,
    atomic_kernel,
    brute_force_kernel,
    build_gram,
    composite_kernel,
    cross_gram,
    normalize,
    read_gram,
    sequence_kernel,
    subpaths,
    tree_kernel,
    write_gram,
)

# features 10 apart with gamma 10: cross atomic values exp(-1000) underflow to 0
A, B = np.zeros(8), np.full(8, 10 / math.sqrt(8))


def seq(*rows):
    return SequenceInstance(np.array(rows, dtype=np.float64))


def rand_seq(rng, n, d=8):
    return SequenceInstance(rng.normal(size=(n, d)))


def rand_tree(rng, n, d=8):
    parents = [0]
    path = [1]
    for i in range(2, n + 1):
        path = path[: int(rng.integers(1, len(path) + 1))]
        parents.append(path[-1])
        path.append(i)
    return TreeInstance(rng.normal(size=(n, d)), np.array(parents))


def contiguous_oracle(s, s2, gamma):
    """Sum over equal-length contiguous runs, written independently of the package."""
    x, y = s.features, s2.features
    total = 0.0
    for length in range(1, min(len(x), len(y)) + 1):
        for i, j in itertools.product(range(len(x) - length + 1), range(len(y) - length + 1)):
            total += math.prod(
                math.exp(-gamma * float(np.sum((x[i + t] - y[j + t]) ** 2))) for t in range(length)
            )
    return total


def test_atomic_examples():
    assert atomic_kernel([1.0, 2.0], [1.0, 2.0], 3.0) == 1.0
    assert atomic_kernel([0.0], [math.sqrt(math.log(2))], 1.0) == pytest.approx(0.5, abs=1e-15)
    assert atomic_kernel([0.0, 0.0], [1.0, 1.0], 0.5) == pytest.approx(0.367879, abs=1e-6)


def test_atomic_errors():
    with pytest.raises(KernelError):
        atomic_kernel([0.0], [0.0, 1.0], 1.0)
    for g in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(KernelError):
            atomic_kernel([0.0], [0.0], g)


def test_sequence_hand_value():
    s = seq(A, B)
    assert atomic_kernel(A, B, 10.0) < 1e-12
    assert sequence_kernel(s, s, 10.0) == pytest.approx(3.0, abs=1e-9)
    assert brute_force_kernel(s, s, 10.0) == pytest.approx(3.0, abs=1e-9)


def test_tree_hand_value():
    t = TreeInstance(np.array([A, B, B]), np.array([0, 1, 1]))
    assert tree_kernel(t, t, 10.0) == pytest.approx(9.0, abs=1e-9)
    assert brute_force_kernel(t, t, 10.0) == pytest.approx(9.0, abs=1e-9)


def test_single_nodes():
    x, y = np.arange(8.0) / 8, np.ones(8) / 3
    assert sequence_kernel(seq(x), seq(x), 0.7) == 1.0
    assert brute_force_kernel(seq(x), seq(y), 0.7) == pytest.approx(atomic_kernel(x, y, 0.7), rel=1e-15)
    t = TreeInstance(np.array([x]), np.array([0]))
    assert tree_kernel(t, t, 2.0) == 1.0


def test_subpath_enumeration():
    assert sorted(subpaths(seq(A, B, A))) == sorted([(0,), (1,), (2,), (0, 1), (1, 2), (0, 1, 2)])
    t = TreeInstance(np.array([A, B, B, A]), np.array([0, 1, 2, 1]))
    assert sorted(subpaths(t)) == sorted([(0,), (1,), (2,), (3,), (0, 1), (1, 2), (0, 1, 2), (0, 3)])


@given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([0.1, 1.0, 10.0]), st.integers(0, 2**32 - 1))
def test_sequence_matches_independent_oracle(n, m, gamma, seed):
    rng = np.random.default_rng(seed)
    a, b = rand_seq(rng, n, 3), rand_seq(rng, m, 3)
    ref = contiguous_oracle(a, b, gamma)
    assert abs(sequence_kernel(a, b, gamma) - ref) <= 1e-9 * max(1.0, ref)
    assert abs(brute_force_kernel(a, b, gamma) - ref) <= 1e-9 * max(1.0, ref)


@given(st.integers(1, 12), st.integers(1, 12), st.sampled_from([0.1, 1.0, 10.0]), st.integers(0, 2**32 - 1))
def test_tree_matches_brute_force(n, m, gamma, seed):
    rng = np.random.default_rng(seed)
    a, b = rand_tree(rng, n), rand_tree(rng, m)
    ref = brute_force_kernel(a, b, gamma)
    assert abs(tree_kernel(a, b, gamma) - ref) <= 1e-9 * max(1.0, ref)


@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_symmetry(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rand_tree(rng, n), rand_tree(rng, m)
    assert tree_kernel(a, b, 0.3) == pytest.approx(tree_kernel(b, a, 0.3), rel=1e-13)
    s, t = rand_seq(rng, n), rand_seq(rng, m)
    assert sequence_kernel(s, t, 0.3) == pytest.approx(sequence_kernel(t, s, 0.3), rel=1e-13)


def _shuffle_siblings(t, rng):
    kids = tree_from_parents(t.parents)
    for k in kids:
        rng.shuffle(k)
    order, parent_of, stack = [], {0: -1}, [0]
    while stack:
        v = stack.pop()
        order.append(v)
        for c in reversed(kids[v]):
            parent_of[c] = v
            stack.append(c)
    pos = {v: i + 1 for i, v in enumerate(order)}
    parents = [0] + [pos[parent_of[v]] for v in order[1:]]
    return TreeInstance(t.features[order], np.array(parents))


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_sibling_order_invariance(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rand_tree(rng, n), rand_tree(rng, m)
    k = tree_kernel(a, b, 0.5)
    assert tree_kernel(_shuffle_siblings(a, rng), _shuffle_siblings(b, rng), 0.5) == pytest.approx(k, rel=1e-12)


@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_path_tree_equals_sequence(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rand_seq(rng, n), rand_seq(rng, m)
    ta = TreeInstance(a.features, np.arange(n))
    tb = TreeInstance(b.features, np.arange(m))
    assert tree_kernel(ta, tb, 0.2) == sequence_kernel(a, b, 0.2)


@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_self_kernel_monotone_in_length(n, seed):
    s = rand_seq(np.random.default_rng(seed), n + 1)
    shorter = SequenceInstance(s.features[:n])
    assert sequence_kernel(s, s, 1.0) >= sequence_kernel(shorter, shorter, 1.0)


def test_kernel_errors():
    empty = SequenceInstance(np.zeros((0, 8)))
    with pytest.raises(KernelError):
        sequence_kernel(empty, seq(A), 1.0)
    with pytest.raises(KernelError):
        sequence_kernel(seq(A), SequenceInstance(np.zeros((1, 3))), 1.0)
    big = SequenceInstance(np.zeros((15, 2)))
    with pytest.raises(KernelError, match="cap"):
        brute_force_kernel(big, big, 1.0)
    with pytest.raises(KernelError):
        brute_force_kernel(seq(A), TreeInstance(np.array([A]), np.array([0])), 1.0)


def test_normalize_examples():
    assert normalize(5, 5, 5) == 1.0
    assert normalize(3, 4, 9) == 0.5
    with pytest.raises(KernelError):
        normalize(1.0, 0.0, 1.0)


@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_normalized_at_most_one(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rand_tree(rng, n), rand_tree(rng, m)
    v = normalize(tree_kernel(a, b, 0.1), tree_kernel(a, a, 0.1), tree_kernel(b, b, 0.1))
    assert 0 < v <= 1 + 1e-12


def test_composite_examples():
    assert composite_kernel(0.8, 0.3, 1.0) == 0.8
    assert composite_kernel(0.8, 0.3, 0.0) == 0.3
    assert composite_kernel(0.8, 0.6, 0.5) == pytest.approx(0.7, abs=1e-15)
    with pytest.raises(KernelError):
        composite_kernel(0.8, 0.6, 1.5)


def _instances(rng, n):
    return [(rand_seq(rng, 8), rand_tree(rng, int(rng.integers(1, 8)))) for _ in range(n)]


def test_gram_small_cases(rng):
    inst = _instances(rng, 1)
    np.testing.assert_array_equal(build_gram(inst, "sequence", 1.0).values, [[1.0]])
    twice = inst * 2
    for kind in ("sequence", "tree", "gaussian"):
        np.testing.assert_allclose(build_gram(twice, kind, 1.0).values, np.ones((2, 2)), rtol=0, atol=1e-15)
    np.testing.assert_allclose(build_gram(twice, "composite", 1.0, 0.3).values, np.ones((2, 2)), rtol=0, atol=1e-15)


@pytest.mark.parametrize("kind, rho", [("sequence", None), ("tree", None), ("composite", 0.5), ("gaussian", None)])
def test_gram_psd_and_normalized(rng, kind, rho):
    g = build_gram(_instances(rng, 30), kind, 0.05, rho)
    v = g.values
    assert np.array_equal(v, v.T)
    np.testing.assert_array_equal(np.diag(v), 1.0)
    assert np.all(v > 0) and np.all(v <= 1)
    eig = np.linalg.eigvalsh(v)
    assert eig.min() >= -1e-8 * eig.max()


def test_gram_entries_match_scalar_kernels(rng):
    inst = _instances(rng, 6)
    g = build_gram(inst, "tree", 0.2).values
    for i, j in itertools.combinations(range(6), 2):
        ti, tj = inst[i][1], inst[j][1]
        ref = normalize(tree_kernel(ti, tj, 0.2), tree_kernel(ti, ti, 0.2), tree_kernel(tj, tj, 0.2))
        assert g[i, j] == pytest.approx(ref, rel=1e-12)
    gs = build_gram(inst, "gaussian", 0.2).values
    assert gs[0, 1] == pytest.approx(atomic_kernel(inst[0][0].features[0], inst[1][0].features[0], 0.2), rel=1e-12)


@pytest.mark.parametrize("kind, rho", [("sequence", None), ("tree", None), ("composite", 0.3), ("gaussian", None)])
def test_cross_gram_consistent_with_gram(rng, kind, rho):
    inst = _instances(rng, 7)
    g = build_gram(inst, kind, 0.1, rho).values
    c = cross_gram(inst[:3], inst, kind, 0.1, rho)
    np.testing.assert_allclose(c, g[:3], rtol=1e-12, atol=1e-15)


def test_packed_take_and_first_nodes(rng):
    inst = [rand_tree(rng, n) for n in (3, 1, 5)]
    p = PackedInstances.pack(inst)
    assert len(p) == 3 and p.max_size == 5
    sub = p.take([2, 0])
    np.testing.assert_array_equal(sub.features, np.concatenate([inst[2].features, inst[0].features]))
    np.testing.assert_array_equal(sub.offsets, [0, 5, 8])
    first = p.first_nodes()
    np.testing.assert_array_equal(first.features, [t.features[0] for t in inst])


def test_gram_file_round_trip(tmp_path, rng):
    g = build_gram(_instances(rng, 4), "composite", 0.25, 0.7)
    write_gram(g, tmp_path / "k.gram")
    raw = (tmp_path / "k.gram").read_bytes()
    assert raw.startswith(b"GRAM 4 composite 0.25 0.7\n")
    back = read_gram(tmp_path / "k.gram")
    assert back.values.tobytes() == g.values.tobytes()
    assert (back.kind, back.gamma, back.rho) == ("composite", 0.25, 0.7)


def test_gram_file_errors(tmp_path):
    p = tmp_path / "k.gram"
    p.write_bytes(b"GRAM 2 tree 1.0\n" + bytes(8 * 3))
    with pytest.raises(KernelError):
        read_gram(p)
    p.write_bytes(b"KERNEL 1 tree 1.0\n" + bytes(8))
    with pytest.raises(KernelError):
        read_gram(p)
    with pytest.raises(KernelError):
        GramMatrix(np.eye(1), "graph", 1.0)
