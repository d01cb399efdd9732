import numpy as np
import pytest
from hypothesis import given, strategies as st

from netrates.network import (
    ConstantWeights,
    GraphGenerationError,
    IidLinkFailures,
    MarkovLinkFailures,
    NotPrimitiveError,
    Topology,
    check_stochastic,
    laplacian_weight_matrix,
    left_perron_vector,
    load_topology,
    next_weight_matrix,
    random_geometric_graph,
    save_topology,
    subdominant_modulus,
)
from conftest import random_stochastic

PATH_4 = Topology(4, ((0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)))


def test_topology_validation():
    with pytest.raises(ValueError):
        Topology(3, ((0, 0),))  # self loop
    with pytest.raises(ValueError):
        Topology(2, ((0, 5),))  # out of range
    with pytest.raises(ValueError):
        Topology(0, ())


def test_check_stochastic():
    W = check_stochastic([[0.5, 0.5], [-1e-15, 1.0]])
    assert W[1, 0] == 0.0  # tiny negative clamped
    with pytest.raises(ValueError):
        check_stochastic([[0.6, 0.6], [0.5, 0.5]])
    with pytest.raises(ValueError):
        check_stochastic([[0.5, 0.5], [-1e-3, 1.001]])
    with pytest.raises(ValueError):
        check_stochastic(np.full((2, 2), 0.5), topology=Topology(2, ()))  # off-pattern


def test_geometric_graph_trivial_cases():
    rng = np.random.default_rng(0)
    single = random_geometric_graph(1, 0.5, rng)
    assert single.n_edges == 0
    pair = random_geometric_graph(2, 2.0, rng)
    assert set(pair.edges) == {(0, 1), (1, 0)}


def test_geometric_graph_connected_and_symmetric():
    rng = np.random.default_rng(4)
    for _ in range(5):
        top = random_geometric_graph(10, 0.4, rng)
        assert top.is_connected_undirected()
        pairs = set(top.edges)
        assert all((i, j) in pairs for j, i in pairs)
        # edges match the generating positions
        pos = top.positions
        for j, i in top.edges:
            assert np.linalg.norm(pos[j] - pos[i]) <= 0.4


def test_geometric_graph_generation_failure():
    rng = np.random.default_rng(1)
    with pytest.raises(GraphGenerationError):
        random_geometric_graph(30, 1e-4, rng, max_attempts=20)


def test_laplacian_weight_matrix_examples():
    n2 = Topology(2, ((0, 1), (1, 0)))
    W = laplacian_weight_matrix(n2, n2.edges, 0.5)
    assert np.allclose(W, [[0.5, 0.5], [0.5, 0.5]])
    # empty active set gives the identity
    assert np.array_equal(laplacian_weight_matrix(n2, (), 0.5), np.eye(2))
    # complete graph with alpha = 1/n gives the averaging matrix J
    n = 5
    full = Topology(n, tuple((j, i) for j in range(n) for i in range(n) if i != j))
    W = laplacian_weight_matrix(full, full.edges, 1.0 / n)
    assert np.allclose(W, np.full((n, n), 1.0 / n), atol=1e-15)


def test_laplacian_alpha_bounds():
    with pytest.raises(ValueError):
        laplacian_weight_matrix(PATH_4, PATH_4.edges, 0.9)  # above 1/(d_max+1) = 1/3
    with pytest.raises(ValueError):
        laplacian_weight_matrix(PATH_4, PATH_4.edges, 0.0)
    with pytest.raises(ValueError):
        laplacian_weight_matrix(PATH_4, ((0, 3),), 0.2)  # not a subset


def test_laplacian_is_stochastic_with_pattern():
    rng = np.random.default_rng(8)
    for _ in range(20):
        top = random_geometric_graph(8, 0.5, rng)
        active = rng.random(top.n_edges) < 0.5
        W = laplacian_weight_matrix(top, active, top.default_alpha())
        check_stochastic(W, topology=top)


def test_iid_failures_extremes():
    rng = np.random.default_rng(2)
    always = IidLinkFailures(PATH_4, p=1.0)
    full = laplacian_weight_matrix(PATH_4, PATH_4.edges, always.alpha)
    assert np.array_equal(next_weight_matrix(always, rng), full)
    never = IidLinkFailures(PATH_4, p=0.0)
    assert np.array_equal(next_weight_matrix(never, rng), np.eye(4))


def test_markov_stationary_fraction():
    # long-run on-fraction (1-q2)/((1-q1)+(1-q2)) = 0.75 within 0.01
    rng = np.random.default_rng(3)
    proc = MarkovLinkFailures(PATH_4, q1=0.7, q2=0.1)
    assert proc.stationary_on_fraction() == pytest.approx(0.75)
    steps = 100_000
    on = np.zeros(PATH_4.n_edges)
    for _ in range(steps):
        proc.next_matrix(rng)
        on += proc.state
    frac = on / steps
    assert np.all(np.abs(frac - 0.75) < 0.01)


def test_markov_reduces_to_iid():
    # q1 = 1 - q2 makes transitions state-independent: on-fraction matches p = q1
    rng = np.random.default_rng(9)
    p = 0.6
    proc = MarkovLinkFailures(PATH_4, q1=p, q2=1 - p)
    steps = 40_000
    on = np.zeros(PATH_4.n_edges)
    for _ in range(steps):
        proc.next_matrix(rng)
        on += proc.state
    sigma = np.sqrt(p * (1 - p) / steps)
    assert np.all(np.abs(on / steps - p) < 3.5 * sigma)


def test_markov_clone_owns_state():
    rng = np.random.default_rng(10)
    proc = MarkovLinkFailures(PATH_4, q1=0.5, q2=0.5)
    clone = proc.clone()
    proc.next_matrix(rng)
    assert clone.state.all()  # untouched initial all-online state


def test_process_output_respects_pattern():
    rng = np.random.default_rng(12)
    top = random_geometric_graph(7, 0.5, rng)
    for proc in (IidLinkFailures(top, 0.5), MarkovLinkFailures(top, 0.6, 0.4)):
        for _ in range(10):
            check_stochastic(next_weight_matrix(proc, rng), topology=top)


def test_left_perron_examples():
    A = np.array([[0.5, 0.5], [0.25, 0.75]])
    assert np.allclose(left_perron_vector(A), [1 / 3, 2 / 3], atol=1e-10)
    # doubly stochastic, strongly connected, positive diagonal -> uniform
    B = np.array([[0.6, 0.3, 0.1], [0.1, 0.6, 0.3], [0.3, 0.1, 0.6]])
    assert np.allclose(left_perron_vector(B), np.full(3, 1 / 3), atol=1e-10)
    # leader row: a = e_i
    L = np.array([[1.0, 0.0], [0.5, 0.5]])
    assert np.allclose(left_perron_vector(L), [1.0, 0.0], atol=1e-10)


def test_left_perron_fixed_point_property():
    rng = np.random.default_rng(6)
    for n in (2, 4, 8):
        for _ in range(10):
            A = random_stochastic(rng, n)
            a = left_perron_vector(A)
            assert a.min() >= 0
            assert a.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.max(np.abs(a @ A - a)) <= 1e-10


def test_left_perron_not_primitive():
    with pytest.raises(NotPrimitiveError):
        left_perron_vector(np.eye(3))  # two initial classes
    with pytest.raises(NotPrimitiveError):
        left_perron_vector(np.array([[0.0, 1.0], [1.0, 0.0]]))  # periodic


def test_subdominant_examples():
    assert subdominant_modulus(np.full((4, 4), 0.25)) == pytest.approx(0.0, abs=1e-10)
    assert subdominant_modulus(np.eye(3)) == pytest.approx(1.0, abs=1e-9)
    A = np.array([[0.5, 0.5], [0.25, 0.75]])
    assert subdominant_modulus(A) == pytest.approx(0.25, abs=1e-9)


def test_subdominant_matches_dense_eigensolver():
    rng = np.random.default_rng(13)
    for _ in range(20):
        A = random_stochastic(rng, 6)
        eigs = np.sort(np.abs(np.linalg.eigvals(A)))
        got, approx = subdominant_modulus(A, with_flag=True)
        assert got == pytest.approx(eigs[-2], abs=1e-7)


def test_subdominant_complex_pair_flagged():
    # rotation-like chain: dominant subdominant pair is complex
    A = np.array(
        [
            [0.1, 0.8, 0.05, 0.05],
            [0.05, 0.1, 0.8, 0.05],
            [0.05, 0.05, 0.1, 0.8],
            [0.8, 0.05, 0.05, 0.1],
        ]
    )
    value, approx = subdominant_modulus(A, with_flag=True)
    eigs = np.sort(np.abs(np.linalg.eigvals(A)))
    assert abs(value - eigs[-2]) < 1e-3  # two-step ratio estimate
    assert approx


def test_topology_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(14)
    top = random_geometric_graph(9, 0.45, rng)
    path = tmp_path / "topo.txt"
    save_topology(top, path)
    text = path.read_text().splitlines()
    assert text[0] == "n=9"
    back = load_topology(path)
    assert back.n == top.n
    assert back.edges == top.edges


def test_constant_weights_validation():
    with pytest.raises(ValueError):
        ConstantWeights(np.array([[0.7, 0.7], [0.5, 0.5]]))
    proc = ConstantWeights(np.eye(3))
    assert proc.clone() is proc
