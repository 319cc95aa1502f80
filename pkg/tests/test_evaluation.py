import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from musicsim.calibration import CalibrationConfig, Weighting
from musicsim.errors import (
    ConstantInput,
    EmptyResults,
    InsufficientPairs,
    LengthMismatch,
    MissingEmbedding,
    TooShort,
    ZeroVectorWarning,
)
from musicsim.evaluation import (
    ActivationSet,
    GridResult,
    GridSpec,
    cosine_similarity,
    emit_report,
    grid_search,
    pair_similarities,
    rank_average,
    report_csv,
    run_config,
    select_best,
    spearman,
)
from musicsim.pairs import LabeledPair, SamplerConfig, WindowRef, sample_pairs
from musicsim.synthetic import planted_activations

from oracles import brute_ranks, brute_spearman


class TestCosine:
    def test_basic(self):
        assert cosine_similarity([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
        assert cosine_similarity([1, 0], [0, 5]) == 0.0
        assert cosine_similarity([1, -2], [2, -4]) == pytest.approx(1.0)

    def test_zero_vector(self):
        with pytest.warns(ZeroVectorWarning):
            assert cosine_similarity([0, 0], [1, 2]) == 0.0

    def test_batched_matches_scalar(self, rng, impl):
        E = rng.standard_normal((10, 6))
        E[3] = 0
        ia = rng.integers(0, 10, 50)
        ib = rng.integers(0, 10, 50)
        sims, zeros = impl["pair_cosines"](E, ia, ib)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroVectorWarning)
            want = [cosine_similarity(E[a], E[b]) for a, b in zip(ia, ib)]
        np.testing.assert_allclose(sims, want, atol=1e-12)
        assert zeros == sum((a == 3) or (b == 3) for a, b in zip(ia, ib))

    def test_pair_similarities_warns(self):
        with pytest.warns(ZeroVectorWarning):
            pair_similarities(np.zeros((2, 3)), [0], [1])


class TestSpearman:
    def test_monotone(self):
        assert spearman([1, 2, 3], [10, 20, 30]).rho == 1.0
        assert spearman([1, 2, 3], [30, 20, 10]).rho == -1.0

    def test_known_value(self):
        # d^2 = 1+1+1+1 = 4 -> 1 - 24/60
        assert spearman([1, 2, 3, 4], [2, 1, 4, 3]).rho == pytest.approx(0.6, abs=1e-15)

    def test_ranks_match_counting(self, rng, impl):
        x = rng.integers(0, 6, 40).astype(float)
        assert impl["rank_average"](x).tolist() == brute_ranks(list(x))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(-5, 5), st.floats(-3, 3, allow_nan=False)),
                    min_size=3, max_size=60))
    def test_matches_oracle(self, pts):
        x = [float(a) for a, _ in pts]
        y = [b for _, b in pts]
        if len(set(x)) < 2 or len(set(y)) < 2:
            with pytest.raises(ConstantInput):
                spearman(x, y)
            return
        assert spearman(x, y).rho == pytest.approx(brute_spearman(x, y), abs=1e-12)

    def test_pvalue_matches_scipy(self, rng):
        x = rng.standard_normal(50)
        y = x + rng.standard_normal(50) * 2
        ours = spearman(x, y)
        ref = sps.spearmanr(x, y)
        assert ours.rho == pytest.approx(ref.statistic, abs=1e-12)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)

    def test_zero_rho(self):
        r = spearman([1, 2, 3], [2, 1, 2])
        assert r.rho == 0.0 and r.p_value == 1.0

    def test_perfect_p_positive(self):
        p = spearman(range(10), range(10)).p_value
        assert 0 < p < 1e-300

    def test_permutation_mode(self, rng):
        x = rng.standard_normal(12)
        r1 = spearman(x, x + 0.1 * rng.standard_normal(12), "permutation", 500, seed=3)
        r2 = spearman(x, rng.standard_normal(12), "permutation", 500, seed=3)
        assert r1.p_value < 0.01 and r2.p_value > 0.01

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            spearman([1, 2, 3], [1, 2])
        with pytest.raises(TooShort):
            spearman([1, 2], [1, 2])
        with pytest.raises(ConstantInput):
            spearman([1, 1, 1], [1, 2, 3])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(-1000, 1000), min_size=5, max_size=40, unique=True))
    def test_monotone_transform_invariance(self, sims):
        # cubic stays exact and strictly increasing on this integer range
        labels = [i % 2 for i in range(len(sims))]
        x = np.asarray(sims, dtype=float)
        a = spearman(x, labels).rho
        b = spearman(x ** 3 + 7 * x, labels).rho
        assert a == b

    def test_anti_monotone_sign(self):
        labels = [1] * 10 + [0] * 10
        sims = [0.1] * 10 + [0.9] * 10
        assert spearman(sims, labels).rho < 0


def _pairs_and_embeddings(rng, n_pos=50, n_neg=50, h=4):
    keys = [WindowRef("p", i) for i in range(2 * (n_pos + n_neg))]
    pairs, emb = [], {}
    for i in range(n_pos + n_neg):
        a, b = keys[2 * i], keys[2 * i + 1]
        pairs.append(LabeledPair(a, b, int(i < n_pos)))
        emb[a] = rng.standard_normal(h)
        emb[b] = rng.standard_normal(h)
    return pairs, emb


class TestRunConfig:
    def test_two_level_similarities(self):
        # positives at similarity 0.9, negatives at 0.1: ranks split perfectly
        pairs, emb = [], {}
        for i in range(40):
            a, b = WindowRef("p", 2 * i), WindowRef("p", 2 * i + 1)
            label = int(i < 20)
            emb[a] = np.array([1.0, 0.0])
            cos = 0.9 if label else 0.1
            emb[b] = np.array([cos, np.sqrt(1 - cos ** 2)])
            pairs.append(LabeledPair(a, b, label))
        res = run_config(emb, pairs, CalibrationConfig(1))
        sims = [0.9] * 20 + [0.1] * 20
        assert res.rho == pytest.approx(brute_spearman(sims, [1] * 20 + [0] * 20), abs=1e-12)
        assert res.rho > 0.99 and res.pair_count == 40

    def test_shuffled_labels_average_zero(self, rng):
        sims = rng.uniform(size=400)
        labels = np.array([1] * 200 + [0] * 200)
        rhos = [spearman(sims, rng.permutation(labels)).rho for _ in range(1000)]
        assert abs(np.mean(rhos)) < 0.05

    def test_constant_similarities(self):
        emb = {WindowRef("p", i): np.array([1.0, 1.0]) for i in range(6)}
        pairs = [LabeledPair(WindowRef("p", 0), WindowRef("p", 1), 1),
                 LabeledPair(WindowRef("p", 2), WindowRef("p", 3), 0),
                 LabeledPair(WindowRef("p", 4), WindowRef("p", 5), 1)]
        with pytest.raises(ConstantInput):
            run_config(emb, pairs, CalibrationConfig(1))

    def test_missing_embedding(self, rng):
        pairs, emb = _pairs_and_embeddings(rng)
        del emb[pairs[0].a]
        with pytest.raises(MissingEmbedding):
            run_config(emb, pairs, CalibrationConfig(1))

    def test_deterministic(self, rng):
        pairs, emb = _pairs_and_embeddings(rng)
        assert run_config(emb, pairs, CalibrationConfig(1)) == run_config(emb, pairs,
                                                                          CalibrationConfig(1))


@pytest.fixture(scope="module")
def planted():
    pc = planted_activations(layers=4, seq_len=8, hidden=32, windows_per_piece=4, seed=5)
    pairs = sample_pairs(pc.windows, SamplerConfig(8, positives=400, negatives=400, seed=1))
    return pc, pairs


class TestGrid:
    def test_single_config_equals_run_config(self, planted):
        pc, pairs = planted
        spec = GridSpec((3,), (True,), (1,), (Weighting.LINEAR,))
        (res,) = grid_search(pc.acts, pairs, spec).results
        from musicsim.calibration import fit_and_calibrate, raw_embeddings

        emb, _, _ = fit_and_calibrate(raw_embeddings(pc.acts.data, 3, Weighting.LINEAR),
                                      res.config)
        assert res == run_config((pc.acts.keys, emb), pairs, res.config)

    def test_planted_structure(self, planted):
        pc, pairs = planted
        search = grid_search(pc.acts, pairs, GridSpec.full(4))
        r = {(c.config.weighting, c.config.sn, c.config.layer_avg, c.config.natsv_k): c.rho
             for c in search.results}
        assert search.best.config.sn
        for la in range(1, 5):
            assert r[(Weighting.UNIFORM, True, la, 0)] > r[(Weighting.UNIFORM, False, la, 0)]
            assert r[(Weighting.UNIFORM, False, la, 1)] > r[(Weighting.UNIFORM, False, la, 0)]

    def test_sorted_and_complete(self, planted):
        pc, pairs = planted
        search = grid_search(pc.acts, pairs, GridSpec.full(4), jobs=3)
        keys = [r.config.sort_key for r in search.results]
        assert keys == sorted(keys)
        assert len(keys) == len(set(keys)) == 3 * 2 * 4 * 3 + 2 * 3
        serial = grid_search(pc.acts, pairs, GridSpec.full(4), jobs=1)
        assert serial.results == search.results

    def test_scale_invariance(self, planted):
        pc, pairs = planted
        scaled = ActivationSet(pc.acts.keys, pc.acts.data * np.float32(4.0))
        spec = GridSpec.full(4)
        a = grid_search(pc.acts, pairs, spec).results
        b = grid_search(scaled, pairs, spec).results
        for x, y in zip(a, b):
            assert x.config == y.config
            assert abs(x.rho - y.rho) < 1e-9

    def test_argmax_permutation_stable(self, rng):
        cfgs = GridSpec.full(3).configs()
        results = [GridResult(c, float(rng.choice([0.1, 0.2, 0.3])), 0.01, 10) for c in cfgs]
        best = select_best(results)
        for _ in range(20):
            assert select_best(list(rng.permutation(results))) == best
        assert best.rho == 0.3
        tied = [r for r in results if r.rho == 0.3]
        assert best.config.layer_avg == min(r.config.layer_avg for r in tied)

    def test_argmax_tie_break_order(self):
        c = lambda la, sn, k: CalibrationConfig(la, sn, k)
        rs = [GridResult(c(2, True, 0), 0.5, 0.1, 3), GridResult(c(2, False, 0), 0.5, 0.1, 3),
              GridResult(c(1, True, 1), 0.5, 0.1, 3), GridResult(c(1, True, 0), 0.5, 0.1, 3)]
        assert select_best(rs).config == c(1, True, 0)
        assert select_best(rs[:2]).config == c(2, False, 0)

    def test_needs_both_labels(self, planted):
        pc, pairs = planted
        with pytest.raises(InsufficientPairs):
            grid_search(pc.acts, [p for p in pairs if p.label == 1], GridSpec.full(4))

    def test_errored_config_recorded(self):
        keys = [WindowRef("p", i) for i in range(4)]
        data = np.ones((4, 2, 3, 2), dtype=np.float32)
        pairs = [LabeledPair(keys[0], keys[1], 1), LabeledPair(keys[2], keys[3], 0),
                 LabeledPair(keys[0], keys[2], 0)]
        search = grid_search(ActivationSet(keys, data), pairs, GridSpec((1,), (False,), (0,),
                                                                        (Weighting.UNIFORM,)))
        assert search.errors and search.best is None


class TestReport:
    def test_single_row(self, tmp_path):
        r = GridResult(CalibrationConfig(8, True, 0), 0.2231234567, 1.5e-5, 200000)
        text = report_csv([r])
        assert text == ("weighting,sn,layer_avg,natsv_k,rho,p_value,pairs\n"
                        "uniform,on,8,0,0.223123,0.000015,200000\n")
        paths = emit_report([r], tmp_path)
        assert (tmp_path / "report.csv").read_text() == text
        assert {p.name for p in paths} >= {"report.csv", "summary.json", "report_uniform.svg"}

    def test_byte_identical(self, planted, tmp_path):
        pc, pairs = planted
        search = grid_search(pc.acts, pairs, GridSpec.full(4))
        emit_report(search, tmp_path / "a")
        emit_report(search, tmp_path / "b")
        for name in ("report.csv", "summary.json", "report_linear.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_row_count_enumeration(self):
        rows = 0
        for w, sn, la, k in itertools.product(range(3), range(2), range(13), range(3)):
            if la == 0 and w != 0:
                continue
            rows += 1
        assert len(GridSpec.full(12).configs()) == rows == 222

    def test_empty(self, tmp_path):
        with pytest.raises(EmptyResults):
            emit_report([], tmp_path)
