import numpy as np
import pytest

from martrain.io import (
    KIND_HU,
    KIND_NORMALIZED,
    MarvVolume,
    read_manifest,
    read_marv,
    write_marv,
)


def test_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    vol = MarvVolume(rng.normal(size=(3, 4, 5)).astype(np.float32), (0.5, 0.6, 0.7), KIND_HU)
    p = tmp_path / "v.marv"
    write_marv(vol, p)
    got = read_marv(p)
    assert np.array_equal(got.data, vol.data)
    assert got.kind == KIND_HU
    assert got.spacing == pytest.approx(vol.spacing)


def test_cross_component_bit_exact(tmp_path):
    """Files written here parse in the dataset package and vice versa."""
    marsim_volume = pytest.importorskip("marsim.volume")
    rng = np.random.default_rng(1)
    data = rng.random((4, 5, 6)).astype(np.float32)

    ours = tmp_path / "ours.marv"
    write_marv(MarvVolume(data, (0.2, 0.2, 0.2), KIND_NORMALIZED), ours)
    theirs_vol = marsim_volume.read_volume(ours)
    assert np.array_equal(theirs_vol.data, data)
    assert theirs_vol.kind == marsim_volume.VolumeKind.NORMALIZED

    theirs = tmp_path / "theirs.marv"
    marsim_volume.write_volume(theirs_vol, theirs)
    assert theirs.read_bytes() == ours.read_bytes()


def test_bad_files_rejected(tmp_path):
    p = tmp_path / "bad.marv"
    p.write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        read_marv(p)
    write_marv(MarvVolume(np.zeros((2, 2, 2), dtype=np.float32), (1, 1, 1), KIND_HU), p)
    p.write_bytes(p.read_bytes()[:-2])
    with pytest.raises(ValueError):
        read_marv(p)


def test_manifest_parsing(tmp_path):
    m = tmp_path / "manifest.tsv"
    m.write_text(
        "# index\tclean\tartifact\ttarget\talpha_r\tseed\n"
        "0\tc.marv\ta.marv\tt.marv\t0.01\t42\n"
        "# sample 1 failed: whatever\n"
        "2\tc2.marv\ta2.marv\tt2.marv\t0.002\t7\n"
    )
    entries = read_manifest(m)
    assert len(entries) == 2
    assert entries[0].index == 0
    assert entries[0].clean == tmp_path / "c.marv"
    assert entries[1].alpha_r == 0.002
    assert entries[1].seed == 7
