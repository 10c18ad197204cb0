import numpy as np
import pytest
from scipy import stats

from spdemc import NoisePlan, TimeGrid, load_path
from spdemc.noise import concatenate


GRID = TimeGrid(T=0.5, n_steps=8)


def test_zero_modes_gives_empty_matrix():
    plan = NoisePlan(master_seed=1, m=0, d=1)
    w = plan.sample_w(GRID)
    assert w.dw.shape == (8, 0)


def test_same_stream_bit_identical():
    plan = NoisePlan(master_seed=7, m=2, d=1)
    a = plan.sample_w(GRID)
    b = plan.sample_w(GRID)
    assert np.array_equal(a.dw, b.dw)
    h1 = plan.sample_w_hat(GRID, replicate=3)
    h2 = plan.sample_w_hat(GRID, replicate=3)
    assert np.array_equal(h1.dw_hat, h2.dw_hat)


def test_distinct_streams_differ():
    plan = NoisePlan(master_seed=7, m=1, d=1)
    assert not np.array_equal(plan.sample_w(GRID, stream=0).dw,
                              plan.sample_w(GRID, stream=1).dw)
    assert not np.array_equal(plan.sample_w(GRID).dw[:, 0],
                              plan.sample_w_hat(GRID, 0).dw_hat[:, 0])


def test_final_time_variance_matches_T():
    # Monte Carlo variance oracle: sample variance of w_T over N paths is
    # T within 4 * stderr, stderr = T * sqrt(2/(N-1))
    grid = TimeGrid(T=0.5, n_steps=4)
    plan = NoisePlan(master_seed=5, m=1, d=1)
    N = 100_000
    finals = np.empty(N)
    for i in range(N):
        finals[i] = plan.sample_w(grid, stream=i).cumulative_w()[-1, 0]
    var = finals.var(ddof=1)
    stderr = grid.T * np.sqrt(2.0 / (N - 1))
    assert abs(var - grid.T) <= 4 * stderr


def test_replicate_independence_correlation():
    # correlation oracle over 10^4 plans: |corr| <= 4/sqrt(N)
    grid = TimeGrid(T=0.5, n_steps=2)
    N = 10_000
    a = np.empty(N)
    b = np.empty(N)
    for s in range(N):
        plan = NoisePlan(master_seed=s, m=0, d=1)
        a[s] = plan.sample_w_hat(grid, replicate=0).cumulative_w_hat()[-1, 0]
        b[s] = plan.sample_w_hat(grid, replicate=1).cumulative_w_hat()[-1, 0]
    corr = np.corrcoef(a, b)[0, 1]
    assert abs(corr) <= 4.0 / np.sqrt(N)


def test_single_step_increment_is_gaussian():
    # KS oracle at the 1% level on 10^4 single-step draws
    grid = TimeGrid(T=0.25, n_steps=1)
    plan = NoisePlan(master_seed=3, m=0, d=1)
    draws = np.array([plan.sample_w_hat(grid, replicate=j).dw_hat[0, 0]
                      for j in range(10_000)])
    res = stats.kstest(draws / np.sqrt(grid.dt), "norm")
    assert res.pvalue > 0.01


def test_w_and_what_streams_uncorrelated():
    grid = TimeGrid(T=0.5, n_steps=2)
    N = 10_000
    a = np.empty(N)
    b = np.empty(N)
    for s in range(N):
        plan = NoisePlan(master_seed=s, m=1, d=1)
        a[s] = plan.sample_w(grid).cumulative_w()[-1, 0]
        b[s] = plan.sample_w_hat(grid, 0).cumulative_w_hat()[-1, 0]
    assert abs(np.corrcoef(a, b)[0, 1]) <= 4.0 / np.sqrt(N)


def test_restrict_identity_and_composition():
    plan = NoisePlan(master_seed=11, m=2, d=2)
    w = plan.sample_w(GRID).with_hat(plan.sample_w_hat(GRID, 0, d=2))
    full = w.restrict(0, 8)
    assert np.array_equal(full.dw, w.dw)
    assert np.array_equal(w.restrict(1, 7).restrict(2, 5).dw,
                          w.restrict(3, 6).dw)


def test_restrict_partition_recovers_increments():
    plan = NoisePlan(master_seed=11, m=1, d=1)
    w = plan.sample_w(GRID)
    first, second = w.restrict(0, 3), w.restrict(3, 8)
    glued = concatenate(first, second)
    assert np.array_equal(glued.dw, w.dw)
    assert glued.grid.dt == w.grid.dt


def test_restrict_rezeroes_cumulative():
    plan = NoisePlan(master_seed=2, m=1, d=1)
    w = plan.sample_w(GRID)
    sub = w.restrict(2, 6)
    cum = w.cumulative_w()
    np.testing.assert_allclose(sub.cumulative_w(),
                               cum[2:7] - cum[2], atol=1e-15)
    assert sub.cumulative_w()[0, 0] == 0.0


def test_restrict_index_errors():
    plan = NoisePlan(master_seed=2, m=1, d=1)
    w = plan.sample_w(GRID)
    with pytest.raises(IndexError):
        w.restrict(5, 3)
    with pytest.raises(IndexError):
        w.restrict(0, 9)


def test_dump_load_roundtrip(tmp_path):
    plan = NoisePlan(master_seed=13, m=3, d=2)
    w = plan.sample_w(GRID).with_hat(plan.sample_w_hat(GRID, 1, d=2))
    path = tmp_path / "path.bin"
    w.dump(str(path))
    back = load_path(str(path))
    assert np.array_equal(back.dw, w.dw)
    assert np.array_equal(back.dw_hat, w.dw_hat)
    assert back.grid.n_steps == w.grid.n_steps
    assert back.grid.T == w.grid.T
    # documented little-endian header: magic, version, n, m, d, flags
    raw = path.read_bytes()
    assert raw[:4] == b"WPTH"
    header = np.frombuffer(raw[4:24], dtype="<u4")
    assert list(header) == [1, 8, 3, 2, 3]


def test_checksum_tracks_content():
    plan = NoisePlan(master_seed=13, m=1, d=1)
    w1 = plan.sample_w(GRID)
    w2 = plan.sample_w(GRID, stream=1)
    assert w1.checksum() == plan.sample_w(GRID).checksum()
    assert w1.checksum() != w2.checksum()
