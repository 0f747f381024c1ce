"""Episode dataset serialization round-trip and corruption handling."""

import numpy as np
import pytest

from latentdrive.errors import FormatError
from latentdrive.world.dataset import read_dataset, write_dataset
from latentdrive.world.generate import generate_episode
from latentdrive.world.types import WorldConfig

CFG = WorldConfig()


@pytest.fixture(scope="module")
def episodes():
    return [generate_episode(CFG, [9000, i]) for i in range(5)]


def test_round_trip_bit_exact(tmp_path, episodes):
    path = tmp_path / "d.dwep"
    write_dataset(path, episodes)
    back = read_dataset(path)
    assert len(back) == len(episodes)
    for a, b in zip(episodes, back):
        assert a.command == b.command
        assert np.array_equal(a.expert_traj.waypoints, b.expert_traj.waypoints)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.bev, fb.bev)
            assert fa.ego.as_array().tobytes() == fb.ego.as_array().tobytes()
            assert np.array_equal(fa.agents, fb.agents)


def test_rewrite_identical_bytes(tmp_path, episodes):
    p1, p2 = tmp_path / "a.dwep", tmp_path / "b.dwep"
    write_dataset(p1, episodes)
    write_dataset(p2, episodes)
    assert p1.read_bytes() == p2.read_bytes()


def test_empty_dataset(tmp_path):
    path = tmp_path / "empty.dwep"
    write_dataset(path, [])
    assert read_dataset(path) == []


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.dwep"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(FormatError):
        read_dataset(path)


def test_truncated_file(tmp_path, episodes):
    path = tmp_path / "t.dwep"
    write_dataset(path, episodes)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(FormatError):
        read_dataset(path)
