import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edk.data import (
    DatasetSchema,
    InstanceRecord,
    Rule,
    SplitSpec,
    SyntheticConfig,
    encode_records,
    generate_synthetic,
    load_dataset,
    load_schema,
    save_schema,
    shift_benchmark,
    temporal_split,
    write_dataset,
)
from edk.errors import ConfigError, DataError, ParseError


@pytest.fixture
def schema():
    return DatasetSchema((("user", 5), ("item", 7), ("ctx", 3)))


@pytest.fixture
def hist_schema():
    return DatasetSchema((("user", 5), ("item", 7)), has_history=True, max_history_len=3)


def _write(path, text):
    path.write_text(text)
    return path


class TestSchema:
    def test_needs_two_fields(self):
        with pytest.raises(ConfigError):
            DatasetSchema((("a", 3),))

    def test_unique_names(self):
        with pytest.raises(ConfigError):
            DatasetSchema((("a", 3), ("a", 2)))

    def test_positive_vocab(self):
        with pytest.raises(ConfigError):
            DatasetSchema((("a", 3), ("b", 0)))

    def test_json_round_trip(self, tmp_path, hist_schema):
        save_schema(hist_schema, tmp_path / "s.json")
        assert load_schema(tmp_path / "s.json") == hist_schema
        assert load_schema(tmp_path / "s.json").fingerprint() == hist_schema.fingerprint()


class TestLoadDataset:
    def test_three_rows(self, tmp_path, schema):
        p = _write(tmp_path / "d.csv", "user,item,ctx,label,timestamp\n0,1,2,1,10\n4,6,0,0,11\n2,2,2,1,12\n")
        recs = load_dataset(p, schema)
        assert len(recs) == 3
        assert recs[0] == InstanceRecord((0, 1, 2), 1, 10)
        assert [r.timestamp for r in recs] == [10, 11, 12]

    def test_bad_label_names_row(self, tmp_path, schema):
        p = _write(tmp_path / "d.csv", "user,item,ctx,label,timestamp\n0,1,2,1,10\n0,1,2,2,11\n")
        with pytest.raises(ParseError, match="row 3") as exc:
            load_dataset(p, schema)
        assert exc.value.row == 3

    def test_id_out_of_vocab(self, tmp_path, schema):
        p = _write(tmp_path / "d.csv", "user,item,ctx,label,timestamp\n0,7,2,1,10\n")
        with pytest.raises(ParseError, match="row 2"):
            load_dataset(p, schema)

    def test_wrong_column_count(self, tmp_path, schema):
        p = _write(tmp_path / "d.csv", "user,item,ctx,label,timestamp\n0,1,1,10\n")
        with pytest.raises(ParseError, match="columns"):
            load_dataset(p, schema)

    def test_missing_file(self, tmp_path, schema):
        with pytest.raises(DataError):
            load_dataset(tmp_path / "nope.csv", schema)

    def test_history_column(self, tmp_path, hist_schema):
        p = _write(tmp_path / "d.csv", "user,item,label,timestamp,history\n0,1,1,5,\n0,2,0,6,1|3\n")
        recs = load_dataset(p, hist_schema)
        assert recs[0].history == ()
        assert recs[1].history == (1, 3)
        enc = encode_records(recs, hist_schema)
        np.testing.assert_array_equal(enc.hist, [[-1, -1, -1], [1, 3, -1]])

    def test_history_too_long(self, tmp_path, hist_schema):
        p = _write(tmp_path / "d.csv", "user,item,label,timestamp,history\n0,1,1,5,1|2|3|4\n")
        with pytest.raises(ParseError):
            load_dataset(p, hist_schema)

    def test_round_trip_byte_identical(self, tmp_path, hist_schema):
        rng = np.random.default_rng(0)
        recs = []
        for i in range(100):
            h = tuple(int(v) for v in rng.integers(0, 7, size=rng.integers(0, 4)))
            recs.append(InstanceRecord((int(rng.integers(5)), int(rng.integers(7))), int(rng.integers(2)), i * 3, h))
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_dataset(recs, hist_schema, p1)
        loaded = load_dataset(p1, hist_schema)
        assert loaded == recs
        write_dataset(loaded, hist_schema, p2)
        assert p1.read_bytes() == p2.read_bytes()


def _records(ts):
    return [InstanceRecord((0, 0, 0), i % 2, int(t)) for i, t in enumerate(ts)]


class TestTemporalSplit:
    def test_boundaries(self):
        recs = _records([1, 2, 3, 4])
        spec = SplitSpec(T0=2, T1=3, valid_fraction=0.5, split_seed=1)
        for seed in range(20):
            try:
                old, train, valid, test = temporal_split(recs, SplitSpec(2, 3, 0.5, seed))
            except ConfigError:
                continue  # both post-T1 rows hashed to the same side
            break
        assert [r.timestamp for r in old] == [1]
        assert [r.timestamp for r in train] == [2]
        assert sorted(r.timestamp for r in valid + test) == [3, 4]
        assert spec.valid_fraction == 0.5

    def test_empty_train(self):
        with pytest.raises(ConfigError, match="D_train empty"):
            temporal_split(_records([0, 1, 5, 6, 7, 8]), SplitSpec(T0=2, T1=3))

    def test_empty_input(self):
        with pytest.raises(DataError):
            temporal_split([], SplitSpec(0, 1))

    def test_t0_before_t1(self):
        with pytest.raises(ConfigError):
            SplitSpec(T0=5, T1=5)

    def test_binomial_proportions(self):
        n = 10_000
        ts = np.random.default_rng(3).integers(0, 1000, size=n)
        old, train, valid, test = temporal_split(_records(ts), SplitSpec(T0=300, T1=600, valid_fraction=0.5))
        n_post = int((ts >= 600).sum())
        assert len(old) == int((ts < 300).sum())
        assert len(train) == int(((ts >= 300) & (ts < 600)).sum())
        sigma = math.sqrt(n_post * 0.25)
        assert abs(len(valid) - n_post / 2) < 3 * sigma

    @settings(max_examples=50, deadline=None)
    @given(
        ts=st.lists(st.integers(0, 99), min_size=1, max_size=200),
        t0=st.integers(0, 98),
        gap=st.integers(1, 50),
        frac=st.floats(0.05, 0.95),
        seed=st.integers(0, 10**6),
    )
    def test_is_partition_and_deterministic(self, ts, t0, gap, frac, seed):
        recs = [InstanceRecord((i, 0, 0), 0, t) for i, t in enumerate(ts)]
        spec = SplitSpec(t0, t0 + gap, frac, seed)
        try:
            parts = temporal_split(recs, spec)
        except ConfigError:
            return
        ids = [r.field_values[0] for p in parts for r in p]
        assert sorted(ids) == list(range(len(ts)))
        assert temporal_split(recs, spec) == parts
        old, train, valid, test = parts
        assert all(r.timestamp < t0 for r in old)
        assert all(t0 <= r.timestamp < t0 + gap for r in train)
        assert all(r.timestamp >= t0 + gap for r in valid + test)


def _cfg(**kw):
    base = dict(vocab_sizes=(5, 4, 3), n_records=10_000, T0=400, T1=700, horizon=1000, seed=11)
    base.update(kw)
    return SyntheticConfig(**base)


class TestSynthetic:
    def test_pure_noise(self):
        recs = generate_synthetic(_cfg(noise_rate=0.5, base_rate=0.2))
        assert abs(np.mean([r.label for r in recs]) - 0.5) < 0.02

    def test_invariant_rule_rate(self):
        recs = generate_synthetic(_cfg(vocab_sizes=(4, 4, 3), invariant_rules=(Rule(((0, 3),), 0.9),)))
        hit = [r.label for r in recs if r.field_values[0] == 3]
        assert len(hit) > 1500
        assert abs(np.mean(hit) - 0.9) < 0.02

    def test_spurious_rule_flips(self):
        cfg = _cfg(spurious_rules=(Rule(((1, 2),), 0.85),), base_rate=0.5)
        recs = generate_synthetic(cfg)

        def corr(rs):
            a = np.array([r.field_values[1] == 2 for r in rs], dtype=float)
            y = np.array([r.label for r in rs], dtype=float)
            return np.corrcoef(a, y)[0, 1]

        before = corr([r for r in recs if r.timestamp < cfg.T1])
        after = corr([r for r in recs if r.timestamp >= cfg.T1])
        assert before > 0.2 and after < -0.2

    def test_deterministic(self):
        cfg = shift_benchmark(seed=3, n_records=3000)
        assert generate_synthetic(cfg) == generate_synthetic(cfg)
        other = generate_synthetic(shift_benchmark(seed=4, n_records=3000))
        assert other != generate_synthetic(cfg)

    def test_contradictory_rules(self):
        with pytest.raises(ConfigError, match="contradictory"):
            generate_synthetic(_cfg(invariant_rules=(Rule(((0, 1), (1, 2)), 0.9),), spurious_rules=(Rule(((1, 2), (0, 1)), 0.2),)))

    def test_invalid_rule_value(self):
        with pytest.raises(ConfigError):
            generate_synthetic(_cfg(invariant_rules=(Rule(((0, 5),), 0.9),)))

    def test_invalid_probability(self):
        with pytest.raises(ConfigError):
            generate_synthetic(_cfg(invariant_rules=(Rule(((0, 1),), 1.5),)))

    def test_history_is_past_positive_items(self):
        cfg = _cfg(n_records=2000, has_history=True, max_history_len=4, noise_rate=0.3)
        recs = generate_synthetic(cfg)
        seen = {}
        for r in recs:
            u = r.field_values[0]
            assert r.history == tuple(seen.get(u, [])[-4:])
            if r.label == 1:
                seen.setdefault(u, []).append(r.field_values[1])

    def test_dict_round_trip(self):
        cfg = shift_benchmark(seed=1)
        assert SyntheticConfig.from_dict(cfg.to_dict()) == cfg
