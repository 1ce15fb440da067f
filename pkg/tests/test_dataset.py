import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fleetwatch.dataset import (
    MONTH,
    TRAIN_SPAN,
    DataError,
    ManifestEntry,
    Normalizer,
    clean,
    fit_normalizer,
    load_fleet,
    load_unit,
    normalize,
    normalize_and_filter_train,
    prepare_training,
    read_manifest,
    split,
    to_time,
    write_manifest,
    write_unit,
)

from conftest import make_series


def write_text(path, text):
    path.write_text(text)
    return path


class TestLoadUnit:
    def test_three_rows(self, tmp_path):
        p = write_text(tmp_path / "a.csv", "timestamp,x,y\n"
                       "2021-01-01T00:00:00Z,1,2\n2021-01-01T00:05:00Z,3,4\n2021-01-01T00:10:00Z,5,6\n")
        s = load_unit(p)
        assert len(s) == 3 and s.signal_names == ("x", "y") and s.unit_id == "a"
        assert s.period == np.timedelta64(300, "s")

    def test_backwards_timestamp(self, tmp_path):
        p = write_text(tmp_path / "a.csv", "timestamp,x\n2021-01-01T00:05:00Z,1\n2021-01-01T00:00:00Z,2\n")
        with pytest.raises(DataError):
            load_unit(p)

    def test_empty_file(self, tmp_path):
        with pytest.raises(DataError):
            load_unit(write_text(tmp_path / "e.csv", ""))

    def test_header_only(self, tmp_path):
        with pytest.raises(DataError):
            load_unit(write_text(tmp_path / "h.csv", "timestamp,x\n"))

    def test_bad_number(self, tmp_path):
        with pytest.raises(DataError):
            load_unit(write_text(tmp_path / "b.csv", "timestamp,x\n2021-01-01T00:00:00Z,abc\n"))

    def test_twenty_four_signals(self, tmp_path):
        names = [f"sensor{i}" for i in range(15)] + [f"iso{i}" for i in range(9)]
        rows = [",".join(["2021-01-01T00:00:00Z"] + ["1.5"] * 24)]
        p = write_text(tmp_path / "w.csv", "timestamp," + ",".join(names) + "\n" + "\n".join(rows) + "\n")
        s = load_unit(p)
        assert s.values.shape == (1, 24) and list(s.signal_names) == names

    def test_missing_tokens(self, tmp_path):
        p = write_text(tmp_path / "m.csv", "timestamp,x,y\n2021-01-01T00:00:00Z,,2\n"
                       "2021-01-01T00:05:00Z,NaN,4\n2021-01-01T00:10:00Z,5,6\n")
        s = load_unit(p)
        assert np.isnan(s.values[0, 0]) and np.isnan(s.values[1, 0]) and len(clean(s)) == 1

    def test_round_trip_exact(self, tmp_path, rng):
        s = make_series(rng.standard_normal((50, 3)) * 1e3, fault_time="2021-01-01T02:00:00")
        write_unit(s, tmp_path / "r.csv")
        back = load_unit(tmp_path / "r.csv", fault_time=s.fault_time, unit_id="u")
        assert np.array_equal(back.values, s.values) and np.array_equal(back.timestamps, s.timestamps)
        assert back.fault_time == s.fault_time

    def test_timezone_offsets_normalised_to_utc(self, tmp_path):
        p = write_text(tmp_path / "z.csv", "timestamp,x\n2021-01-01T01:00:00+01:00,1\n2021-01-01T00:05:00Z,2\n")
        s = load_unit(p)
        assert s.timestamps[0] == np.datetime64("2021-01-01T00:00:00")


class TestClean:
    def test_zero_row_removed(self):
        s = make_series([[1, 2], [0, 5], [3, 4]])
        assert np.array_equal(clean(s).values, [[1, 2], [3, 4]])

    def test_identity_when_nothing_to_drop(self):
        s = make_series([[1, 2], [3, 4]])
        assert clean(s) is s

    def test_single_missing_cell(self, rng):
        v = rng.random((10, 3)) + 1
        v[4, 1] = np.nan
        assert len(clean(make_series(v))) == 9

    def test_all_removed(self):
        with pytest.raises(DataError):
            clean(make_series([[0, 1], [np.nan, 2]]))

    @given(arrays(np.float64, (12, 3), elements=st.sampled_from([0.0, 1.0, -2.5, np.nan, 3.0])))
    @settings(max_examples=60, deadline=None)
    def test_idempotent(self, v):
        s = make_series(v)
        try:
            once = clean(s)
        except DataError:
            return
        assert np.array_equal(clean(once).values, once.values, equal_nan=True)
        assert not np.any(np.isnan(once.values) | (once.values == 0))


class TestNormalizer:
    def test_uniform_midpoint_maps_near_zero(self):
        s = make_series(np.linspace(0, 100, 1001)[:, None])
        norm = fit_normalizer(s)
        # sorting oracle: 1st/99th percentiles of 0..100 in 0.1 steps are 1 and 99
        assert norm.p1[0] == pytest.approx(1.0) and norm.p99[0] == pytest.approx(99.0)
        assert norm.apply(np.array([[50.0]]))[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_percentiles_map_to_unit_endpoints(self, rng):
        s = make_series(rng.standard_normal((500, 4)))
        norm = fit_normalizer(s)
        assert np.allclose(norm.apply(norm.p1[None, :]), -1.0) and np.allclose(norm.apply(norm.p99[None, :]), 1.0)

    def test_constant_signal_rejected(self, rng):
        v = rng.standard_normal((50, 2))
        v[:, 1] = 4.0
        with pytest.raises(DataError):
            fit_normalizer(make_series(v))

    def test_outside_fraction_bounded(self, rng):
        s = make_series(rng.standard_normal((2000, 3)))
        out = normalize(s, fit_normalizer(s)).values
        assert np.all(np.mean(np.abs(out) > 1, axis=0) <= 0.02)

    @given(arrays(np.float64, 40, elements=st.floats(-1e3, 1e3)))
    @settings(max_examples=50, deadline=None)
    def test_order_preserved(self, col):
        if np.ptp(col) == 0 or np.percentile(col, 99) <= np.percentile(col, 1):
            return
        s = make_series(col[:, None])
        out = normalize(s, fit_normalizer(s)).values[:, 0]
        assert np.all(np.diff(out[np.argsort(col, kind="stable")]) >= 0)

    def test_window_restricts_fit(self):
        v = np.concatenate([np.linspace(0, 1, 100), np.linspace(100, 200, 100)])[:, None]
        s = make_series(v)
        norm = fit_normalizer(s, (s.start, s.timestamps[100]))
        assert norm.p99[0] < 1.0

    def test_signal_mismatch(self, rng):
        a = make_series(rng.standard_normal((30, 2)))
        b = make_series(rng.standard_normal((30, 2)), names=("p", "q"))
        with pytest.raises(DataError):
            normalize(b, fit_normalizer(a))

    def test_dict_round_trip(self, rng):
        norm = fit_normalizer(make_series(rng.standard_normal((30, 3))))
        back = Normalizer.from_dict(json.loads(json.dumps(norm.to_dict())))
        assert np.array_equal(back.p1, norm.p1) and np.array_equal(back.p99, norm.p99)


class TestFilter:
    def _norm(self):
        return Normalizer(("s0", "s1"), np.array([-1.0, -1.0]), np.array([1.0, 1.0]))

    def test_row_above_three_removed(self):
        out = normalize_and_filter_train(make_series([[0.5, 4.0], [0.5, 2.9]]), self._norm())
        assert np.array_equal(out.values, [[0.5, 2.9]])

    def test_negative_side_kept(self):
        out = normalize_and_filter_train(make_series([[0.5, -4.0]]), self._norm())
        assert len(out) == 1

    def test_everything_filtered(self):
        with pytest.raises(DataError):
            normalize_and_filter_train(make_series([[5.0, 5.0]]), self._norm())


class TestSplit:
    def _year(self, fault_day=None):
        n = 365 * 24
        v = np.random.default_rng(0).random((n, 2)) + 1
        ft = None if fault_day is None else np.datetime64("2021-01-01T00:00:00") + np.timedelta64(fault_day, "D")
        return make_series(v, step_minutes=60, fault_time=ft)

    def test_fault_at_month_ten(self):
        s = self._year(fault_day=300)
        spec = split(s)
        assert spec.train_end == s.start + TRAIN_SPAN
        assert spec.blackout_start == s.start + np.timedelta64(270, "D")
        m = spec.masks(s.timestamps)
        days = (s.timestamps - s.start).astype(float) / 86400
        assert days[m["healthy"]].min() == pytest.approx(61) and days[m["healthy"]].max() < 270
        assert days[m["fault"]].min() == pytest.approx(300)

    def test_no_fault(self):
        m = split(self._year()).masks(self._year().timestamps)
        assert not m["fault"].any() and not m["blackout"].any() and m["healthy"].sum() == 365 * 24 - 61 * 24

    def test_fault_too_early(self):
        with pytest.raises(DataError):
            split(self._year(fault_day=75))

    def test_too_short(self):
        with pytest.raises(DataError):
            split(make_series(np.ones((10, 1)) + 1))

    def test_windows_disjoint_and_cover(self):
        s = self._year(fault_day=320)
        m = split(s).masks(s.timestamps)
        stack = np.stack([m[k] for k in ("train", "healthy", "blackout", "fault")]).astype(int)
        assert np.all(stack.sum(axis=0) == 1)


def test_prepare_training_window(rng):
    s = make_series(rng.random((24 * 100, 3)) + 1, step_minutes=60)
    norm, train = prepare_training(s)
    assert train.end < s.start + TRAIN_SPAN and len(train) == 61 * 24
    norm2, whole = prepare_training(s, whole=True)
    assert np.array_equal(norm.p1, norm2.p1) and len(whole) == len(s)


def test_manifest_round_trip(tmp_path, rng):
    s = make_series(rng.random((10, 2)) + 1, unit_id="a")
    write_unit(s, tmp_path / "a.csv")
    ft = to_time("2021-01-01T00:20:00Z")
    write_manifest(tmp_path / "m.json", [ManifestEntry("a", tmp_path / "a.csv", ft)])
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["units"][0]["path"] == "a.csv" and doc["units"][0]["fault_time"] == "2021-01-01T00:20:00Z"
    (entry,) = read_manifest(tmp_path / "m.json")
    assert entry.fault_time == ft
    (unit,) = load_fleet(tmp_path / "m.json")
    assert unit.fault_time == ft and unit.unit_id == "a"


def test_month_is_thirty_days():
    assert MONTH == np.timedelta64(30, "D") and TRAIN_SPAN == np.timedelta64(61, "D")
