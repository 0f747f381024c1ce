"""Episode dataset file I/O (DWEP format).

Layout, all little-endian:

    magic "DWEP" | u32 version | u32 episode count
    per episode: u64 payload length, then payload =
        config echo: u32 grid_h, grid_w, n_classes, horizon_hist,
                     horizon_fut, n_agents; f64 cell_size, dt
        u8 command id | rasters u8[n_frames*gh*gw]
        ego f64[n_frames*4] | agents f64[n_frames*n_agents*4]
        expert waypoints f64[horizon_fut*2]
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError
from .types import COMMANDS, EgoState, Episode, Frame, Trajectory, WorldConfig

MAGIC = b"DWEP"
VERSION = 1

_CFG_FMT = "<6I2d"


def _encode_episode(ep: Episode) -> bytes:
    cfg = ep.config
    parts = [
        struct.pack(
            _CFG_FMT,
            cfg.grid_h, cfg.grid_w, cfg.n_classes,
            cfg.horizon_hist, cfg.horizon_fut, cfg.n_agents,
            cfg.cell_size, cfg.dt,
        ),
        struct.pack("<B", COMMANDS.index(ep.command)),
    ]
    rasters = np.stack([f.bev for f in ep.frames]).astype(np.uint8)
    egos = np.stack([f.ego.as_array() for f in ep.frames])
    agents = np.stack([f.agents for f in ep.frames])
    parts.append(rasters.tobytes())
    parts.append(egos.astype("<f8").tobytes())
    parts.append(agents.astype("<f8").tobytes())
    parts.append(ep.expert_traj.waypoints.astype("<f8").tobytes())
    return b"".join(parts)


def _decode_episode(payload: bytes, base_cfg: WorldConfig | None = None) -> Episode:
    off = struct.calcsize(_CFG_FMT)
    if len(payload) < off + 1:
        raise FormatError("truncated episode record")
    gh, gw, ncls, hist, fut, n_agents, cell, dt = struct.unpack_from(_CFG_FMT, payload)
    cfg = base_cfg or WorldConfig()
    cfg = WorldConfig(
        grid_h=gh, grid_w=gw, cell_size=cell, n_classes=ncls,
        horizon_hist=hist, horizon_fut=fut, dt=dt, n_agents=n_agents,
        seed=cfg.seed, road_half_width=cfg.road_half_width,
        comfort_accel_max=cfg.comfort_accel_max,
        comfort_yaw_rate_max=cfg.comfort_yaw_rate_max,
    )
    (cmd_id,) = struct.unpack_from("<B", payload, off)
    off += 1
    n_frames = hist + 1 + fut
    sizes = [
        n_frames * gh * gw,
        n_frames * 4 * 8,
        n_frames * n_agents * 4 * 8,
        fut * 2 * 8,
    ]
    if len(payload) != off + sum(sizes):
        raise FormatError("episode record length mismatch")
    rasters = np.frombuffer(payload, dtype=np.uint8, count=sizes[0], offset=off)
    rasters = rasters.reshape(n_frames, gh, gw)
    off += sizes[0]
    egos = np.frombuffer(payload, dtype="<f8", count=n_frames * 4, offset=off)
    egos = egos.reshape(n_frames, 4)
    off += sizes[1]
    agents = np.frombuffer(payload, dtype="<f8", count=n_frames * n_agents * 4, offset=off)
    agents = agents.reshape(n_frames, n_agents, 4)
    off += sizes[2]
    wpts = np.frombuffer(payload, dtype="<f8", count=fut * 2, offset=off).reshape(fut, 2)

    frames = [
        Frame(
            bev=rasters[f].copy(),
            ego=EgoState.from_array(egos[f]),
            agents=agents[f].copy(),
            time_index=f - hist,
        )
        for f in range(n_frames)
    ]
    return Episode(
        frames=frames,
        expert_traj=Trajectory(wpts.copy()),
        command=COMMANDS[cmd_id],
        config=cfg,
    )


def write_dataset(path, episodes):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<2I", VERSION, len(episodes)))
        for ep in episodes:
            payload = _encode_episode(ep)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)


def read_dataset(path, base_cfg: WorldConfig | None = None):
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != MAGIC:
            raise FormatError("not a DWEP dataset file")
        version, count = struct.unpack("<2I", head[4:])
        if version != VERSION:
            raise FormatError(f"unsupported DWEP version {version}")
        episodes = []
        for _ in range(count):
            lenb = fh.read(8)
            if len(lenb) < 8:
                raise FormatError("truncated dataset file")
            (plen,) = struct.unpack("<Q", lenb)
            payload = fh.read(plen)
            if len(payload) < plen:
                raise FormatError("truncated episode payload")
            episodes.append(_decode_episode(payload, base_cfg))
    return episodes
