import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossmap.errors import FormatError
from crossmap.formats import (
    read_feature_file,
    read_point_feature_file,
    read_xyz_file,
    write_feature_file,
    write_point_feature_file,
    write_xyz_file,
)
from crossmap.types import FeatureMap, PointFeatureSet


def random_map(rng, h, w, d):
    return FeatureMap(
        data=rng.standard_normal((h, w, d)).astype(np.float32).astype(np.float64),
        valid=rng.random((h, w)) > 0.3,
    )


def test_dense_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    fmap = random_map(rng, 2, 2, 3)
    path = tmp_path / "m.cfmf"
    write_feature_file(fmap, path)
    back = read_feature_file(path)
    assert np.array_equal(back.data.astype(np.float32), fmap.data.astype(np.float32))
    assert np.array_equal(back.valid, fmap.valid)


def test_dense_bad_magic(tmp_path):
    path = tmp_path / "bad.cfmf"
    path.write_bytes(b"XXXX" + b"\0" * 64)
    with pytest.raises(FormatError):
        read_feature_file(path)


def test_dense_truncated(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "t.cfmf"
    write_feature_file(random_map(rng, 4, 4, 2), path)
    data = path.read_bytes()
    path.write_bytes(data[:-5])
    with pytest.raises(FormatError):
        read_feature_file(path)


def test_dense_file_size_full_res(tmp_path):
    # exact byte count: 4 magic + 4*4 header ints + H*W mask + H*W*D*4 payload
    h, w, d = 224, 224, 768
    fmap = FeatureMap(data=np.zeros((h, w, d), dtype=np.float32), valid=np.ones((h, w), bool))
    path = tmp_path / "big.cfmf"
    write_feature_file(fmap, path)
    assert path.stat().st_size == 4 + 16 + h * w + h * w * d * 4
    back = read_feature_file(path)
    assert back.data.shape == (h, w, d)
    assert np.array_equal(back.data, fmap.data)


def test_point_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    pfs = PointFeatureSet(
        centers=rng.standard_normal((7, 3)).astype(np.float32).astype(np.float64),
        feats=rng.standard_normal((7, 5)).astype(np.float32).astype(np.float64),
    )
    path = tmp_path / "p.cfmp"
    write_point_feature_file(pfs, path)
    back = read_point_feature_file(path)
    assert np.array_equal(back.centers.astype(np.float32), pfs.centers.astype(np.float32))
    assert np.array_equal(back.feats.astype(np.float32), pfs.feats.astype(np.float32))


def test_xyz_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    xyz = rng.standard_normal((5, 6, 3)).astype(np.float32)
    path = tmp_path / "x.cfmx"
    write_xyz_file(xyz, path)
    assert np.array_equal(read_xyz_file(path), xyz)


def test_xyz_bad_shape(tmp_path):
    with pytest.raises(FormatError):
        write_xyz_file(np.zeros((4, 4, 2), dtype=np.float32), tmp_path / "x.cfmx")


@settings(max_examples=25, deadline=None)
@given(
    h=st.integers(1, 8),
    w=st.integers(1, 8),
    d=st.integers(1, 6),
    seed=st.integers(0, 2**31),
)
def test_dense_round_trip_property(tmp_path_factory, h, w, d, seed):
    rng = np.random.default_rng(seed)
    fmap = random_map(rng, h, w, d)
    path = tmp_path_factory.mktemp("fmt") / "m.cfmf"
    write_feature_file(fmap, path)
    back = read_feature_file(path)
    assert np.array_equal(back.data.astype(np.float32), fmap.data.astype(np.float32))
    assert np.array_equal(back.valid, fmap.valid)
