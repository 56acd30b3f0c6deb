import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import pfm_fixture, random_rotation
from parallaxdepth.errors import DataError, FormatError, SchemaError, ShapeError, ValidationError
from parallaxdepth.maps import (
    CameraFrame,
    FlowMap,
    RegionMask,
    ScalarMap,
    pfm_bytes,
    read_mask,
    read_pfm,
    read_rgb,
    read_sequence_meta,
    write_mask,
    write_pfm,
    write_rgb,
    write_sequence_meta,
)

f32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


def frame_doc(**over):
    doc = {"id": 0, "fx": 100.0, "fy": 100.0, "cx": 10.0, "cy": 8.0, "k1": 0.0,
           "rotation": [1, 0, 0, 0, 1, 0, 0, 0, 1], "translation": [0, 0, 0], "visible_features": [1, 2]}
    doc.update(over)
    return doc


class TestPfm:
    def test_minimal_scalar(self, tmp_path):
        p = tmp_path / "one.pfm"
        p.write_bytes(pfm_fixture("Pf", 1, 1, [[2.5]]))
        m = read_pfm(p)
        assert isinstance(m, ScalarMap)
        assert m.values.tolist() == [[2.5]] and m.valid.tolist() == [[True]]

    def test_flow_validity_channel_from_struct_fixture(self, tmp_path):
        rows = [[(1.0, 2.0, 1.0), (3.0, 4.0, 0.0)], [(5.0, 6.0, 1.0), (7.0, 8.0, 0.0)]]
        p = tmp_path / "flow.pfm"
        p.write_bytes(pfm_fixture("PF", 2, 2, rows))
        m = read_pfm(p)
        assert isinstance(m, FlowMap)
        assert m.valid.reshape(-1).tolist() == [True, False, True, False]
        assert m.u[m.valid].tolist() == [1.0, 5.0]
        assert m.v[m.valid].tolist() == [2.0, 6.0]

    def test_big_endian_and_row_order(self, tmp_path):
        p = tmp_path / "be.pfm"
        p.write_bytes(pfm_fixture("Pf", 3, 2, [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], little_endian=False))
        m = read_pfm(p)
        assert m.values.tolist() == [[1, 2, 3], [4, 5, 6]]

    def test_writer_matches_struct_fixture_bytes(self):
        vals = np.array([[0.5, -1.25, 3.0], [7.0, 0.0, 1e-3]])
        valid = np.array([[True, True, False], [True, True, True]])
        m = ScalarMap(np.where(valid, vals, 0.0), valid)
        rows = [[float(np.float32(v)) if ok else float("nan") for v, ok in zip(r, rv)] for r, rv in zip(vals, valid)]
        assert pfm_bytes(m) == pfm_fixture("Pf", 3, 2, rows)

        flow = FlowMap(vals, -vals, valid)
        frows = [[(float(np.float32(u)), float(np.float32(-u)), 1.0) if ok else (0.0, 0.0, 0.0)
                  for u, ok in zip(r, rv)] for r, rv in zip(vals, valid)]
        assert pfm_bytes(flow) == pfm_fixture("PF", 3, 2, frows)

    def test_invalid_scalar_pixel_is_nan_on_disk(self, tmp_path):
        m = ScalarMap(np.array([[1.0, 2.0]]), np.array([[True, False]]))
        write_pfm(m, tmp_path / "a.pfm")
        raw = np.frombuffer((tmp_path / "a.pfm").read_bytes()[-8:], dtype="<f4")
        assert raw[0] == 1.0 and np.isnan(raw[1])

    def test_flow_file_size(self, tmp_path):
        m = FlowMap(np.zeros((2, 3)), np.zeros((2, 3)), np.ones((2, 3), bool))
        write_pfm(m, tmp_path / "f.pfm")
        header = b"PF\n3 2\n-1.0\n"
        assert (tmp_path / "f.pfm").stat().st_size == len(header) + 3 * 2 * 3 * 4

    @given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=f32),
           st.data())
    def test_scalar_round_trip_bit_exact(self, vals, data):
        valid = data.draw(arrays(bool, vals.shape))
        m = ScalarMap(np.where(valid, vals.astype(np.float64), 0.0), valid)
        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "x.pfm"
            write_pfm(m, p)
            assert read_pfm(p).equals(m)

    @given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=f32), st.data())
    def test_flow_round_trip_bit_exact(self, u, data):
        v = data.draw(arrays(np.float32, u.shape, elements=f32))
        valid = data.draw(arrays(bool, u.shape))
        m = FlowMap(np.where(valid, u, 0.0), np.where(valid, v, 0.0), valid)
        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "x.pfm"
            write_pfm(m, p)
            assert read_pfm(p).equals(m)

    @pytest.mark.parametrize("blob", [b"P7\n1 1\n-1\n" + b"\0" * 4, b"Pf\n1 1\n", b"Pf\n2 2\n-1.0\n" + b"\0" * 4,
                                      b"Pf\n1 1\n0\n" + b"\0" * 4, b""])
    def test_malformed(self, tmp_path, blob):
        p = tmp_path / "bad.pfm"
        p.write_bytes(blob)
        with pytest.raises(FormatError):
            read_pfm(p)

    def test_nan_in_valid_flow_pixel(self, tmp_path):
        p = tmp_path / "nan.pfm"
        p.write_bytes(pfm_fixture("PF", 1, 1, [[(float("nan"), 0.0, 1.0)]]))
        with pytest.raises(DataError):
            read_pfm(p)

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(FormatError, match="nothere"):
            read_pfm(tmp_path / "nothere.pfm")


class TestMapsTypes:
    def test_nonfinite_valid_rejected(self):
        with pytest.raises(DataError):
            ScalarMap(np.array([[np.nan]]), np.array([[True]]))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ScalarMap(np.zeros((2, 2)), np.zeros((2, 3), bool))

    def test_immutable(self):
        m = ScalarMap(np.zeros((2, 2)), np.ones((2, 2), bool))
        with pytest.raises(ValueError):
            m.values[0, 0] = 1.0

    def test_mask_and_rgb_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        human = rng.random((5, 7)) > 0.5
        write_mask(RegionMask(human), tmp_path / "m.pgm")
        assert np.array_equal(read_mask(tmp_path / "m.pgm").human, human)
        raw = (tmp_path / "m.pgm").read_bytes()
        assert raw.startswith(b"P5\n7 5\n255\n") and set(raw[len(b"P5\n7 5\n255\n"):]) <= {0, 255}
        rgb = rng.random((5, 7, 3))
        write_rgb(rgb, tmp_path / "c.ppm")
        assert np.max(np.abs(read_rgb(tmp_path / "c.ppm") - rgb)) <= 0.5 / 65535 + 1e-12


class TestSequenceMeta:
    def write(self, tmp_path, frames):
        p = tmp_path / "poses.json"
        p.write_text(json.dumps({"frames": frames}))
        return p

    def test_identity_parses(self, tmp_path):
        frames = read_sequence_meta(self.write(tmp_path, [frame_doc()]))
        assert len(frames) == 1
        assert np.array_equal(frames[0].rotation, np.eye(3))
        assert frames[0].visible_features == {1, 2}

    def test_reflection_rejected(self, tmp_path):
        p = self.write(tmp_path, [frame_doc(rotation=[-1, 0, 0, 0, 1, 0, 0, 0, 1])])
        with pytest.raises(ValidationError):
            read_sequence_meta(p)

    def test_non_orthonormal_rejected(self, tmp_path):
        p = self.write(tmp_path, [frame_doc(rotation=[1.001, 0, 0, 0, 1, 0, 0, 0, 1])])
        with pytest.raises(ValidationError):
            read_sequence_meta(p)

    def test_duplicate_ids(self, tmp_path):
        p = self.write(tmp_path, [frame_doc(), frame_doc()])
        with pytest.raises(SchemaError, match="duplicate"):
            read_sequence_meta(p)

    @pytest.mark.parametrize("field", ["id", "fx", "rotation", "translation", "visible_features", "k1"])
    def test_missing_field_named(self, tmp_path, field):
        doc = frame_doc()
        del doc[field]
        with pytest.raises(SchemaError, match=f"'{field}'"):
            read_sequence_meta(self.write(tmp_path, [doc]))

    def test_order_preserved_and_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        frames = [CameraFrame(i, 50.0 + i, 60.0, 3.0, 4.0, 0.01, random_rotation(rng), rng.normal(size=3), {i, 7})
                  for i in (5, 2, 9)]
        write_sequence_meta(frames, tmp_path / "p.json")
        back = read_sequence_meta(tmp_path / "p.json")
        assert [f.id for f in back] == [5, 2, 9]
        for a, b in zip(frames, back):
            assert np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)
            assert a.visible_features == b.visible_features

    def test_bad_json(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("{nope")
        with pytest.raises(FormatError):
            read_sequence_meta(p)

    def test_nonpositive_focal(self, tmp_path):
        with pytest.raises(ValidationError):
            read_sequence_meta(self.write(tmp_path, [frame_doc(fx=0)]))
