import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import chisquare

from cdrb.buffer import ReplayBuffer, build, kmeans_compress
from cdrb.errors import DimensionMismatch, EmptyBuffer, FormatError, InvalidK

BACKENDS = ("kdtree", "brute")


def grid_points(n=10):
    xs, ys = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float), indexing="ij")
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def scan_ball(P, c, eps):
    return [i for i, p in enumerate(P) if np.sum((p - c) ** 2) <= eps * eps]


def scan_nearest(P, q):
    d = [float(np.sum((p - q) ** 2)) for p in P]
    return d.index(min(d))


def test_build_basics():
    buf = build(np.array([[0.3, -0.2]]))
    assert len(buf) == 1
    assert np.array_equal(buf.nearest(np.array([5.0, 5.0])), [0.3, -0.2])
    with pytest.raises(EmptyBuffer):
        build(np.zeros((0, 2)))
    with pytest.raises(DimensionMismatch):
        build(np.zeros(3))
    with pytest.raises(DimensionMismatch):
        build(np.zeros((3, 2)), actions=np.zeros((2, 2)))


def test_d_max_is_half_the_bounding_box_diagonal():
    buf = build(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.3, 0.7]]))
    assert buf.d_max == pytest.approx(np.sqrt(2) / 2)
    assert build(np.zeros((3, 2)), d_max=0.25).d_max == 0.25


def test_duplicates_are_kept():
    P = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    assert len(build(P)) == 3


@pytest.mark.parametrize("backend", BACKENDS)
def test_ball_sample_examples(backend):
    rng = np.random.default_rng(0)
    P = grid_points()
    buf = ReplayBuffer(P, backend=backend)
    assert np.array_equal(buf.ball_sample(P[37], 0.0, rng), P[37])
    two = ReplayBuffer(np.array([[0.0, 0.0], [2.0, 0.0]]), backend=backend)
    assert all(np.array_equal(two.ball_sample(np.zeros(2), 1.0, rng), [0.0, 0.0]) for _ in range(50))
    # empty ball falls back to the nearest point
    assert np.array_equal(two.ball_sample(np.array([1.9, 5.0]), 0.1, rng), [2.0, 0.0])


@pytest.mark.parametrize("backend", BACKENDS)
def test_ball_sample_uniform_over_seven_members(backend):
    P = grid_points()
    c = np.array([4.2, 4.1])
    eps = 1.4
    members = scan_ball(P, c, eps)
    assert len(members) == 7
    buf = ReplayBuffer(P, backend=backend)
    idx = buf.ball_sample_indices(np.repeat(c[None], 10_000, axis=0), eps, np.random.default_rng(1))
    assert set(idx.tolist()) == set(members)
    counts = np.bincount(idx, minlength=len(P))[members]
    assert chisquare(counts).pvalue > 1e-4


def test_ball_sample_uniform_in_four_dimensions():
    # exercises every sampling path of the tree backend: rejection, enumeration, fallback
    rng = np.random.default_rng(2)
    P = rng.uniform(-1, 1, size=(3000, 4))
    buf = ReplayBuffer(P)
    for eps in (0.15, 0.4, 1.0, 3.0):
        c = P[17] + 0.01
        members = scan_ball(P, c, eps)
        draws = buf.ball_sample_indices(np.repeat(c[None], 20 * len(members), axis=0), eps, rng)
        assert set(draws.tolist()) <= set(members)
        if len(members) >= 2:
            counts = np.bincount(draws, minlength=len(P))[members]
            assert chisquare(counts).pvalue > 1e-4


def test_full_radius_draws_from_entire_buffer():
    P = grid_points(4)
    buf = ReplayBuffer(P)
    for c in (np.array([1.5, 1.5]), np.array([0.7, 2.9])):
        idx = buf.ball_sample_indices(np.repeat(c[None], 8000, axis=0), 2 * buf.d_max, np.random.default_rng(3))
        assert set(idx.tolist()) == set(range(16))
        assert chisquare(np.bincount(idx)).pvalue > 1e-4


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 60), st.just(3)), elements=st.floats(-1, 1)),
    arrays(np.float64, (3,), elements=st.floats(-1.5, 1.5)),
    st.floats(0.0, 2.0),
    st.integers(0, 2**31 - 1),
)
def test_ball_sample_postcondition(P, c, eps, seed):
    buf = ReplayBuffer(P)
    i = int(buf.ball_sample_indices(c[None], eps, np.random.default_rng(seed))[0])
    members = scan_ball(P, c, eps)
    if members:
        assert i in members
    else:
        assert np.sum((P[i] - c) ** 2) == min(np.sum((P - c) ** 2, axis=1))


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 80), st.integers(1, 4)), elements=st.floats(-1, 1, width=16)),
    st.integers(0, 2**31 - 1),
)
def test_index_agrees_with_linear_scan(P, seed):
    rng = np.random.default_rng(seed)
    d = P.shape[1]
    Q = np.concatenate([P[rng.integers(len(P), size=3)], rng.uniform(-1.2, 1.2, size=(3, d))])
    fast, slow = ReplayBuffer(P, backend="kdtree"), ReplayBuffer(P, backend="brute")
    want = [scan_nearest(P, q) for q in Q]
    assert fast.nearest_index(Q).tolist() == want
    assert slow.nearest_index(Q).tolist() == want
    eps = float(rng.uniform(0, 1.5))
    for q in Q:
        assert fast.ball_indices(q, eps).tolist() == scan_ball(P, q, eps)
        assert slow.ball_indices(q, eps).tolist() == scan_ball(P, q, eps)


def test_nearest_examples_and_ties():
    buf = build(np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert buf.nearest_index(np.array([[0.9, 0.9]])).tolist() == [1]
    tied = build(np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]]))
    assert tied.nearest_index(np.zeros((1, 2))).tolist() == [0]


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (4,), elements=st.floats(-2, 2)))
def test_nearest_idempotent(q):
    P = np.random.default_rng(0).uniform(-1, 1, (200, 4))
    buf = build(P)
    n1 = buf.nearest(q)
    assert np.array_equal(buf.nearest(n1), n1)


def test_nearest_uses_actions_when_the_query_has_them():
    S = np.array([[0.0, 0.0], [0.0, 0.0]])
    A = np.array([[5.0], [0.0]])
    buf = build(S, actions=A)
    assert buf.has_actions and buf.dim == 3
    assert buf.nearest_index(np.array([[0.0, 0.0, 0.1]])).tolist() == [1]
    assert buf.nearest_index(np.array([[0.0, 0.0]])).tolist() == [0]


def test_membership():
    P = np.random.default_rng(4).random((50, 4))
    buf = build(P)
    assert buf.contains(P).all()
    assert not buf.contains(P + 1e-12).any()


def test_kmeans_examples():
    rng = np.random.default_rng(5)
    P = rng.standard_normal((300, 4))
    buf = build(P)
    same = kmeans_compress(buf, len(buf), 10, rng)
    assert {tuple(r) for r in same.points} == {tuple(r) for r in P}
    one = kmeans_compress(buf, 1, 10, rng)
    assert len(one) == 1
    assert np.array_equal(one.points[0], P[np.argmin(np.sum((P - P.mean(axis=0)) ** 2, axis=1))])
    with pytest.raises(InvalidK):
        kmeans_compress(buf, 0, 10, rng)
    with pytest.raises(InvalidK):
        kmeans_compress(buf, 301, 10, rng)


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 200), st.integers(0, 2**31 - 1))
def test_kmeans_output_is_buffer_subset(n, seed):
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((n, 3))
    k = int(rng.integers(1, n + 1))
    small = kmeans_compress(build(P), k, 10, rng)
    assert len(small) <= k
    assert build(P).contains(small.points).all()
    assert len(np.unique(small.points, axis=0)) == len(small)


def test_buffer_file_round_trip(tmp_path):
    P = np.random.default_rng(6).random((20, 4))
    buf = build(P[:, :3], actions=P[:, 3:])
    p = tmp_path / "buf.jsonl"
    buf.save(p)
    back = ReplayBuffer.load(p)
    assert np.array_equal(back.points, buf.points) and back.state_dim == 3 and back.d_max == buf.d_max
    p.write_text("{}\n")
    with pytest.raises(FormatError):
        ReplayBuffer.load(p)


def test_query_order_insensitive():
    rng = np.random.default_rng(7)
    P = rng.random((100, 2))
    perm = rng.permutation(100)
    a, b = build(P), build(P[perm])
    Q = rng.random((20, 2))
    assert np.array_equal(a.points[a.nearest_index(Q)], b.points[b.nearest_index(Q)])
