"""Tests for facefill.data.synthetic and the UVF1 codec."""

import numpy as np
import pytest

from facefill.data import (
    FaceParams,
    UVField,
    decode_uv_field,
    encode_uv_field,
    generate_synthetic_face,
    read_uv_field,
    render_face,
    write_uv_field,
)
from facefill.data.uvio import MAGIC
from facefill.errors import ContractError, IngestionError, ShapeError


def raw_uvf(u: np.ndarray, v: np.ndarray, validity: np.ndarray) -> bytes:
    """UVF1 bytes written without the field checks."""
    h, w = validity.shape
    return b"".join(
        [
            MAGIC,
            np.array([h, w], dtype="<u4").tobytes(),
            u.astype("<f4").tobytes(),
            v.astype("<f4").tobytes(),
            validity.astype(np.uint8).tobytes(),
        ]
    )


def uv_components(rule: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """A 4x4 field broken in exactly one way."""
    validity = np.zeros((4, 4), np.uint8)
    validity[1:3, 1:3] = 1
    u = np.where(validity == 1, 0.4, 0.0)
    v = np.where(validity == 1, 0.6, 0.0)
    if rule == "binary":
        validity[1, 1] = 2
    elif rule == "range":
        u[2, 2] = 1.25
    elif rule == "off_face":
        v[0, 0] = 0.3
    return u, v, validity


UV_RULES = {"binary": "binary", "range": r"\[0, 1\]", "off_face": "where validity is 0"}


class TestGenerateSyntheticFace:
    def test_shapes_and_range(self) -> None:
        image, uv = generate_synthetic_face(5, 64, 48)
        assert image.shape == (3, 64, 48)
        assert image.dtype == np.float32
        assert 0.0 <= image.min() and image.max() <= 1.0
        assert uv.shape == (64, 48)

    def test_deterministic_per_seed(self) -> None:
        a, uv_a = generate_synthetic_face(11, 32, 32)
        b, uv_b = generate_synthetic_face(11, 32, 32)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(uv_a.u, uv_b.u)

    def test_distinct_seeds_distinct_faces(self) -> None:
        a, _ = generate_synthetic_face(1, 32, 32)
        b, _ = generate_synthetic_face(2, 32, 32)
        assert not np.array_equal(a, b)

    def test_uv_valid_only_on_face(self) -> None:
        _, uv = generate_synthetic_face(3, 64, 64)
        valid = uv.validity.astype(bool)
        assert valid.any() and not valid.all()
        assert np.all(uv.u[~valid] == 0.0) and np.all(uv.v[~valid] == 0.0)
        assert 0.0 <= uv.u[valid].min() and uv.u[valid].max() <= 1.0
        assert 0.0 <= uv.v[valid].min() and uv.v[valid].max() <= 1.0

    def test_u_increases_across_face(self) -> None:
        _, uv = render_face(FaceParams(), 64, 64)
        row = uv.u[32][uv.validity[32].astype(bool)]
        assert np.all(np.diff(row) > 0)

    def test_rejects_small_canvas(self) -> None:
        with pytest.raises(ShapeError):
            generate_synthetic_face(0, 16, 64)


class TestUVField:
    def test_rejects_mismatched_components(self) -> None:
        with pytest.raises(ShapeError, match="disagree"):
            UVField(u=np.zeros((4, 4)), v=np.zeros((4, 5)), validity=np.zeros((4, 4)))

    def test_accepts_well_formed_field(self) -> None:
        u, v, validity = uv_components("none")
        assert UVField(u=u, v=v, validity=validity).shape == (4, 4)

    @pytest.mark.parametrize("rule", sorted(UV_RULES))
    def test_rejects_each_broken_rule(self, rule: str) -> None:
        u, v, validity = uv_components(rule)
        with pytest.raises(ContractError, match=UV_RULES[rule]):
            UVField(u=u, v=v, validity=validity)

    def test_rejects_negative_and_nan_components(self) -> None:
        u, v, validity = uv_components("none")
        u[1, 2] = -0.01
        with pytest.raises(ContractError, match="component u"):
            UVField(u=u, v=v, validity=validity)
        u, v, validity = uv_components("none")
        v[1, 1] = np.nan
        with pytest.raises(ContractError, match="component v"):
            UVField(u=u, v=v, validity=validity)

    def test_synthetic_fields_satisfy_rules(self) -> None:
        for seed in range(5):
            _, field = generate_synthetic_face(seed, 48, 40)
            assert set(np.unique(field.validity)) <= {0, 1}
            assert np.all(field.u[field.validity == 0] == 0.0)
            assert np.all(field.v[field.validity == 0] == 0.0)

    def test_stacked(self) -> None:
        field = UVField(
            u=np.full((2, 3), 0.25), v=np.full((2, 3), 0.75), validity=np.ones((2, 3), np.uint8)
        )
        stacked = field.stacked()
        assert stacked.shape == (2, 2, 3)
        assert stacked.dtype == np.float32


class TestUVFCodec:
    def test_header_layout(self) -> None:
        _, field = generate_synthetic_face(0, 32, 40)
        payload = encode_uv_field(field)
        assert payload[:4] == MAGIC
        assert int.from_bytes(payload[4:8], "little") == 32
        assert int.from_bytes(payload[8:12], "little") == 40
        assert len(payload) == 12 + 32 * 40 * 9

    def test_file_preserves_field(self, tmp_path) -> None:
        _, field = generate_synthetic_face(4, 32, 32)
        path = write_uv_field(tmp_path / "face.npyish", field)
        loaded = read_uv_field(path)
        np.testing.assert_array_equal(loaded.u, field.u)
        np.testing.assert_array_equal(loaded.v, field.v)
        np.testing.assert_array_equal(loaded.validity, field.validity)

    def test_bad_magic(self) -> None:
        _, field = generate_synthetic_face(0, 32, 32)
        payload = b"XXXX" + encode_uv_field(field)[4:]
        with pytest.raises(IngestionError, match="bad magic"):
            decode_uv_field(payload, source="bad.uvf")

    def test_truncated_body_names_file(self) -> None:
        _, field = generate_synthetic_face(0, 32, 32)
        with pytest.raises(IngestionError) as excinfo:
            decode_uv_field(encode_uv_field(field)[:-5], source="short.uvf")
        assert excinfo.value.path == "short.uvf"

    def test_clean_payload_decodes(self) -> None:
        field = decode_uv_field(raw_uvf(*uv_components("none")), source="ok.uvf")
        assert field.validity.sum() == 4

    @pytest.mark.parametrize("rule", sorted(UV_RULES))
    def test_broken_rule_names_file(self, rule: str, tmp_path) -> None:
        path = tmp_path / f"{rule}.uvf"
        path.write_bytes(raw_uvf(*uv_components(rule)))
        with pytest.raises(IngestionError, match=UV_RULES[rule]) as excinfo:
            read_uv_field(path)
        assert excinfo.value.path == str(path)
        assert str(excinfo.value).startswith(f"{path}: ")

    def test_missing_file(self, tmp_path) -> None:
        with pytest.raises(IngestionError, match="unreadable"):
            read_uv_field(tmp_path / "absent.uvf")
