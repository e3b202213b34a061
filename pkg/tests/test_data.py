import math

import numpy as np
import pytest

from sysident import (NoiseSpec, Rng, generate_held_gaussian_input,
                      load_csv_dataset, make_chen_dataset, normalize_dataset,
                      save_csv_dataset, simulate_chen)
from sysident.data import (Dataset, SequenceRecord, compute_norm_constants,
                           denormalize_output)
from sysident.errors import (DataError, NumericError, ParameterError,
                             SchemaError)

NO_NOISE = NoiseSpec(0.0, 0.0, 0)


class TestSimulateChen:
    def test_pure_input_step(self):
        # zero past, u[k-1]=1, u[k-2]=0: all state terms vanish -> y[k]=1
        rec = simulate_chen([0.0, 1.0, 0.0], NO_NOISE, Rng(0))
        assert rec.y[0, 2] == 1.0

    def test_state_term(self):
        # u=[1,0,0] reaches y*[1]=1, y*[0]=0; at k=2 the state contributes
        # (0.8 - 0.5 e^{-1}) and the input tail 0.2*u[0]
        rec = simulate_chen([1.0, 0.0, 0.0], NO_NOISE, Rng(0))
        assert rec.y[0, 1] == 1.0
        state_only = rec.y[0, 2] - 0.2 * 1.0
        assert state_only == pytest.approx(0.8 - 0.5 * math.exp(-1.0), abs=1e-15)
        assert state_only == pytest.approx(0.6160602794142788, abs=1e-12)

    def test_cross_term(self):
        # u[k-1]=u[k-2]=1 contributes 1 + 0.2 + 0.1 = 1.3 on top of the state
        # terms; with u=[1,1,0] the state at k=2 is y*[1]=1, y*[0]=0
        rec = simulate_chen([1.0, 1.0, 0.0], NO_NOISE, Rng(0))
        assert rec.y_clean[0, 1] == 1.0
        e = math.exp(-1.0)
        state_part = (0.8 - 0.5 * e) * 1.0 - (0.3 + 0.9 * e) * 0.0
        assert rec.y[0, 2] == pytest.approx(state_part + 1.3, abs=1e-15)

    def test_bit_reproducible(self):
        noise = NoiseSpec(0.3, 0.3, 0)
        u = generate_held_gaussian_input(200, 5, Rng(1))
        a = simulate_chen(u, noise, Rng(2))
        b = simulate_chen(u, noise, Rng(2))
        assert np.array_equal(a.y, b.y)
        assert np.array_equal(a.y_clean, b.y_clean)

    def test_noiseless_output_equals_clean(self):
        u = generate_held_gaussian_input(100, 5, Rng(3))
        rec = simulate_chen(u, NO_NOISE, Rng(4))
        assert np.array_equal(rec.y, rec.y_clean)

    def test_bounded_input_stays_bounded(self):
        rng = Rng(5)
        u = np.clip(rng.gaussian(10 ** 5), -1.0, 1.0)
        rec = simulate_chen(u, NO_NOISE, rng)
        assert np.max(np.abs(rec.y_clean)) < 10.0

    def test_blow_up_raises_diagnostic(self):
        # the u[k-1]u[k-2] cross term alone exceeds the guard at this drive
        with pytest.raises(NumericError, match="sample"):
            simulate_chen(np.full(10, 1e4), NO_NOISE, Rng(6))


class TestHeldGaussianInput:
    def test_hold_one_is_white(self):
        u = generate_held_gaussian_input(50, 1, Rng(7))
        assert len(np.unique(u)) == 50

    def test_hold_five_runs(self):
        u = generate_held_gaussian_input(10, 5, Rng(8))
        assert len(np.unique(u)) == 2
        assert np.all(u[:5] == u[0]) and np.all(u[5:] == u[5])

    def test_deterministic(self):
        assert np.array_equal(generate_held_gaussian_input(40, 5, Rng(9)),
                              generate_held_gaussian_input(40, 5, Rng(9)))

    def test_truncates_to_length(self):
        assert generate_held_gaussian_input(13, 5, Rng(10)).shape == (13,)

    def test_bad_hold(self):
        with pytest.raises(ParameterError):
            generate_held_gaussian_input(10, 0, Rng(0))


class TestMakeChenDataset:
    def test_sample_count(self):
        ds = make_chen_dataset(20, 100, NoiseSpec(0.3, 0.3, 0), seed=1)
        assert len(ds.records) == 20
        assert ds.num_samples == 2000

    def test_noiseless_clean(self):
        ds = make_chen_dataset(3, 50, NO_NOISE, seed=2)
        for rec in ds.records:
            assert np.array_equal(rec.y, rec.y_clean)

    def test_records_are_distinct_and_weakly_correlated(self):
        ds = make_chen_dataset(6, 100, NO_NOISE, seed=4)
        us = [r.u[0] for r in ds.records]
        corrs = []
        for i in range(len(us)):
            for j in range(i + 1, len(us)):
                assert not np.array_equal(us[i], us[j])
                corrs.append(abs(np.corrcoef(us[i], us[j])[0, 1]))
        # held-5 inputs have ~20 effective draws; average over pairs stays low
        assert np.mean(corrs) < 0.2

    def test_reproducible(self):
        a = make_chen_dataset(2, 30, NoiseSpec(0.1, 0.1, 0), seed=4)
        b = make_chen_dataset(2, 30, NoiseSpec(0.1, 0.1, 0), seed=4)
        for ra, rb in zip(a.records, b.records):
            assert np.array_equal(ra.y, rb.y)


class TestCsvRoundTrip:
    def test_small_file(self, tmp_path):
        path = tmp_path / "small.csv"
        path.write_text("u1,y1\n1.0,2.0\n3.0,4.0\n5.5,6.5\n-1.0,0.25\n0.0,9.0\n")
        ds = load_csv_dataset(path)
        assert len(ds.records) == 1
        assert ds.records[0].length == 5
        assert ds.records[0].u[0, 0] == 1.0
        assert ds.records[0].y[0, 4] == 9.0

    def test_multichannel_layout(self, tmp_path):
        # aircraft-benchmark style: 2 inputs, 3 outputs
        path = tmp_path / "f16.csv"
        header = "u1,u2,y1,y2,y3"
        rows = ["%f,%f,%f,%f,%f" % tuple(range(i, i + 5)) for i in range(4)]
        path.write_text(header + "\n" + "\n".join(rows) + "\n")
        ds = load_csv_dataset(path)
        rec = ds.records[0]
        assert rec.u.shape == (2, 4)
        assert rec.y.shape == (3, 4)

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("u1,y1\n1.0,2.0\n1.0,oops\n")
        with pytest.raises(DataError, match="line 3"):
            load_csv_dataset(path)

    def test_missing_column_schema_error(self, tmp_path):
        path = tmp_path / "cols.csv"
        path.write_text("u1,y1\n1.0,2.0\n")
        with pytest.raises(SchemaError, match="u2"):
            load_csv_dataset(path, u_cols=["u1", "u2"], y_cols=["y1"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_csv_dataset(tmp_path / "nope.csv")

    def test_save_load_exact_round_trip(self, tmp_path):
        ds = make_chen_dataset(3, 40, NoiseSpec(0.3, 0.3, 0), seed=5)
        path = tmp_path / "chen.csv"
        save_csv_dataset(ds, path)
        loaded = load_csv_dataset(path, role="training")
        assert len(loaded.records) == 3      # segments survive via the sidecar
        for orig, back in zip(ds.records, loaded.records):
            assert np.array_equal(orig.u, back.u)
            assert np.array_equal(orig.y, back.y)

    def test_ystar_column_written_for_clean_records(self, tmp_path):
        ds = make_chen_dataset(1, 10, NO_NOISE, seed=6)
        path = tmp_path / "clean.csv"
        save_csv_dataset(ds, path)
        header = path.read_text().splitlines()[0]
        assert header == "u1,y1,ystar1"


class TestNormalization:
    def test_standardized_data_unchanged(self):
        rng = Rng(11)
        recs = [SequenceRecord(u=rng.gaussian(4000), y=rng.gaussian(4000))]
        ds = Dataset(records=recs)
        # force exactly standardized channels
        u = (recs[0].u - recs[0].u.mean()) / recs[0].u.std()
        y = (recs[0].y - recs[0].y.mean()) / recs[0].y.std()
        ds = Dataset(records=[SequenceRecord(u=u, y=y)])
        out = normalize_dataset(ds)
        assert np.allclose(out.records[0].u, u, atol=1e-12)
        assert np.allclose(out.records[0].y, y, atol=1e-12)

    def test_constant_offset_removed(self):
        rng = Rng(12)
        u = rng.gaussian(500) + 7.0
        ds = Dataset(records=[SequenceRecord(u=u, y=rng.gaussian(500))])
        out = normalize_dataset(ds)
        assert abs(out.records[0].u.mean()) < 1e-12

    def test_validation_uses_training_constants(self):
        train = Dataset(records=[SequenceRecord(u=Rng(13).gaussian(400) + 1.0,
                                                y=Rng(14).gaussian(400))])
        valid = Dataset(records=[SequenceRecord(u=Rng(15).gaussian(400) + 3.0,
                                                y=Rng(16).gaussian(400))],
                        role="validation")
        consts = compute_norm_constants(train)
        out = normalize_dataset(valid, consts)
        own = normalize_dataset(valid)
        # transformed with foreign constants: mean stays away from 0
        assert abs(out.records[0].u.mean()) > 0.5
        assert abs(own.records[0].u.mean()) < 1e-12

    def test_round_trip_within_tolerance(self):
        rng = Rng(17)
        rec = SequenceRecord(u=rng.gaussian(300, mean=2.0, std=4.0),
                             y=rng.gaussian(300, mean=-1.0, std=0.5))
        ds = Dataset(records=[rec])
        out = normalize_dataset(ds)
        back = denormalize_output(out.records[0].y, out.normalization)
        assert np.allclose(back, rec.y, atol=1e-12)

    def test_zero_variance_channel_rejected(self):
        ds = Dataset(records=[SequenceRecord(u=np.ones(50), y=Rng(18).gaussian(50))])
        with pytest.raises(DataError, match="zero-variance"):
            normalize_dataset(ds)


def test_noise_spec_validation():
    with pytest.raises(ParameterError):
        NoiseSpec(sigma_v=-0.1)
