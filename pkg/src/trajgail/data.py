"""Scenes: loading/saving the trajectory CSV, synthetic IDM experts, and
expert (observation, action) extraction.

CSV layout::

    # dt=0.1
    # lanes=3            (optional)
    # ...                (other comment lines are ignored)
    scene_id,vehicle_id,frame,x,y,lane
    0,1,0,0.000000000,0.000000000,0
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from . import env

CSV_HEADER = ["scene_id", "vehicle_id", "frame", "x", "y", "lane"]
LANE_WIDTH = 3.5


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Track:
    vehicle_id: int
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lane: np.ndarray

    def __post_init__(self):
        if len(self.frames) and np.any(np.diff(self.frames) <= 0):
            raise DataError(f"vehicle {self.vehicle_id}: frames not strictly increasing")

    def __len__(self):
        return len(self.frames)

    def positions(self) -> np.ndarray:
        return np.stack([self.x, self.y], axis=1)

    def kinematics(self, dt: float) -> np.ndarray:
        """``(n, 6)`` ego-state rows ``x, y, vx, vy, ax, ay`` by backward differences.

        The first frame borrows the forward difference for velocity and has
        zero acceleration, so replaying the position increments through
        :func:`trajgail.env.step` reproduces rows 1.. exactly.
        """
        return env.kinematics_from_positions(self.positions(), dt)

    def index_of(self, frame: int) -> int:
        i = int(np.searchsorted(self.frames, frame))
        if i >= len(self.frames) or self.frames[i] != frame:
            raise KeyError(frame)
        return i


@dataclass(eq=False)
class Scene:
    scene_id: str
    tracks: dict[int, Track]
    dt: float = 0.1
    n_lanes: int = 0
    lane_width: float = LANE_WIDTH
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        top = max((int(t.lane.max()) for t in self.tracks.values() if len(t)), default=-1)
        self.n_lanes = max(self.n_lanes, top + 1, 1)

    @property
    def vehicle_ids(self) -> list[int]:
        return sorted(self.tracks)

    @property
    def first_frame(self) -> int:
        return min(int(t.frames[0]) for t in self.tracks.values())

    @property
    def last_frame(self) -> int:
        return max(int(t.frames[-1]) for t in self.tracks.values())

    @cached_property
    def _kin(self) -> dict[int, np.ndarray]:
        return {vid: t.kinematics(self.dt) for vid, t in self.tracks.items()}

    @cached_property
    def _frames(self) -> dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """frame -> (vehicle ids, kinematic rows, lanes) of vehicles present."""
        rows: dict[int, list] = {}
        for vid in self.vehicle_ids:
            t = self.tracks[vid]
            kin = self._kin[vid]
            for i, f in enumerate(t.frames):
                rows.setdefault(int(f), []).append((vid, kin[i], int(t.lane[i])))
        out = {}
        for f, items in rows.items():
            ids = np.array([r[0] for r in items], dtype=np.int64)
            kin = np.array([r[1] for r in items], dtype=np.float64)
            lanes = np.array([r[2] for r in items], dtype=np.int64)
            out[f] = (ids, kin, lanes)
        return out

    def vehicles_at(self, frame: int):
        empty = (np.zeros(0, np.int64), np.zeros((0, 6)), np.zeros(0, np.int64))
        return self._frames.get(int(frame), empty)

    def ego_state(self, vehicle_id: int, frame: int) -> np.ndarray:
        t = self.tracks.get(vehicle_id)
        if t is None:
            raise DataError(f"no vehicle {vehicle_id} in scene {self.scene_id}")
        try:
            i = t.index_of(frame)
        except KeyError:
            raise DataError(f"vehicle {vehicle_id} absent at frame {frame}") from None
        return self._kin[vehicle_id][i].copy()

    @cached_property
    def lane_centers(self) -> np.ndarray:
        centers = np.arange(self.n_lanes) * self.lane_width
        ys: dict[int, list] = {}
        for t in self.tracks.values():
            for lane, y in zip(t.lane, t.y):
                ys.setdefault(int(lane), []).append(y)
        for lane, vals in ys.items():
            centers[lane] = float(np.mean(vals))
        return centers

    def lane_of(self, y: float) -> int:
        return int(np.argmin(np.abs(self.lane_centers - y)))

    def translated(self, dx: float, dy: float) -> "Scene":
        tracks = {
            vid: Track(vid, t.frames.copy(), t.x + dx, t.y + dy, t.lane.copy())
            for vid, t in self.tracks.items()
        }
        return Scene(self.scene_id, tracks, self.dt, self.n_lanes, self.lane_width, dict(self.meta))

    def equals(self, other: "Scene", atol: float = 1e-9) -> bool:
        if (self.scene_id, self.dt, self.n_lanes) != (other.scene_id, other.dt, other.n_lanes):
            return False
        if self.vehicle_ids != other.vehicle_ids:
            return False
        for vid in self.vehicle_ids:
            a, b = self.tracks[vid], other.tracks[vid]
            if not (np.array_equal(a.frames, b.frames) and np.array_equal(a.lane, b.lane)):
                return False
            if not (np.allclose(a.x, b.x, rtol=0, atol=atol) and np.allclose(a.y, b.y, rtol=0, atol=atol)):
                return False
        return True


# ------------------------------------------------------------------- CSV I/O


def _parse_meta(line: str) -> tuple[str, str] | None:
    body = line.lstrip("#").strip()
    if "=" not in body:
        return None
    key, _, val = body.partition("=")
    key = key.strip()
    if not key.isidentifier():
        return None
    return key, val.strip()


def load_trajectories(path) -> list[Scene]:
    """Read a trajectory CSV into scenes grouped by ``scene_id``."""
    text = Path(path).read_text()
    return loads_trajectories(text, source=str(path))


def loads_trajectories(text: str, source: str = "<string>") -> list[Scene]:
    meta: dict[str, str] = {}
    lines = text.splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        if line.startswith("#"):
            kv = _parse_meta(line)
            if kv:
                meta.setdefault(*kv)
            continue
        if line.strip():
            body_start = i
            break
    else:
        raise DataError(f"{source}: no header row")
    if "dt" not in meta:
        raise DataError(f"{source}: missing '# dt=<seconds>' metadata line")
    try:
        dt = float(meta["dt"])
    except ValueError:
        raise DataError(f"{source}: unparsable dt {meta['dt']!r}") from None
    if not dt > 0:
        raise DataError(f"{source}: dt must be positive")

    reader = csv.reader(lines[body_start:])
    header = [h.strip() for h in next(reader)]
    for col in CSV_HEADER:
        if col not in header:
            raise DataError(f"{source}: missing column '{col}'")
    idx = [header.index(c) for c in CSV_HEADER]

    rows: dict[tuple[str, int], list[tuple[int, float, float, int]]] = {}
    seen: set[tuple[str, int, int]] = set()
    for offset, rec in enumerate(reader):
        lineno = body_start + 2 + offset
        if not rec or not "".join(rec).strip() or rec[0].startswith("#"):
            continue
        try:
            sid = rec[idx[0]].strip()
            vid = int(rec[idx[1]])
            frame = int(rec[idx[2]])
            x = float(rec[idx[3]])
            y = float(rec[idx[4]])
            lane = int(rec[idx[5]])
        except (ValueError, IndexError) as exc:
            raise DataError(f"{source}: line {lineno}: {exc}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataError(f"{source}: line {lineno}: non-finite position")
        if lane < 0:
            raise DataError(f"{source}: line {lineno}: negative lane")
        key = (sid, vid, frame)
        if key in seen:
            raise DataError(f"{source}: line {lineno}: duplicate row for vehicle {vid} frame {frame}")
        seen.add(key)
        rows.setdefault((sid, vid), []).append((frame, x, y, lane))
    if not rows:
        raise DataError(f"{source}: no tracks")

    n_lanes = int(meta.get("lanes", 0) or 0)
    lane_width = float(meta.get("lane_width", LANE_WIDTH))
    scenes: dict[str, dict[int, Track]] = {}
    for (sid, vid), recs in rows.items():
        recs.sort()
        arr = np.array(recs, dtype=np.float64)
        frames = arr[:, 0].astype(np.int64)
        if np.any(np.diff(frames) <= 0):
            raise DataError(f"{source}: vehicle {vid}: non-monotone frames")
        scenes.setdefault(sid, {})[vid] = Track(vid, frames, arr[:, 1], arr[:, 2], arr[:, 3].astype(np.int64))
    return [
        Scene(sid, tracks, dt, n_lanes, lane_width, dict(meta))
        for sid, tracks in sorted(scenes.items(), key=lambda kv: _scene_sort_key(kv[0]))
    ]


def _scene_sort_key(sid: str):
    return (0, int(sid), "") if sid.lstrip("-").isdigit() else (1, 0, sid)


def dumps_trajectories(scenes: Iterable[Scene], comments: Iterable[str] = ()) -> str:
    scenes = list(scenes)
    if not scenes:
        raise DataError("nothing to write")
    buf = io.StringIO()
    buf.write(f"# dt={scenes[0].dt!r}\n")
    buf.write(f"# lanes={max(s.n_lanes for s in scenes)}\n")
    buf.write(f"# lane_width={scenes[0].lane_width!r}\n")
    for c in comments:
        buf.write(f"# {c}\n")
    buf.write(",".join(CSV_HEADER) + "\n")
    for s in scenes:
        for vid in s.vehicle_ids:
            t = s.tracks[vid]
            for f, x, y, lane in zip(t.frames, t.x, t.y, t.lane):
                buf.write(f"{s.scene_id},{vid},{int(f)},{x:.12g},{y:.12g},{int(lane)}\n")
    return buf.getvalue()


def save_trajectories(path, scenes: Iterable[Scene], comments: Iterable[str] = ()) -> None:
    Path(path).write_text(dumps_trajectories(scenes, comments))


# ------------------------------------------------------------------ IDM synth


@dataclass
class IDMParams:
    v0: float = 15.0
    T: float = 1.5
    a_max: float = 1.0
    b: float = 1.5
    s0: float = 2.0
    delta: float = 4.0

    def validate(self) -> None:
        for name in ("v0", "T", "a_max", "b", "s0", "delta"):
            if not getattr(self, name) > 0:
                raise DataError(f"IDM parameter {name} must be positive")


def idm_acceleration(v, gap, dv, p: IDMParams):
    """IDM acceleration; ``dv`` is the approach rate ``v - v_leader``.

    ``gap`` may be ``inf`` for a free road.
    """
    v = np.asarray(v, dtype=np.float64)
    s_star = p.s0 + np.maximum(0.0, v * p.T + v * dv / (2.0 * np.sqrt(p.a_max * p.b)))
    with np.errstate(divide="ignore"):
        interaction = np.where(np.isinf(gap), 0.0, (s_star / np.asarray(gap, float)) ** 2)
    return p.a_max * (1.0 - (v / p.v0) ** p.delta - interaction)


def equilibrium_gap(v: float, p: IDMParams) -> float:
    """Bumper gap at which a follower at speed ``v`` behind a leader at ``v`` has zero acceleration."""
    return (p.s0 + v * p.T) / math.sqrt(1.0 - (v / p.v0) ** p.delta)


@dataclass
class SynthConfig:
    n_vehicles: int = 8
    n_lanes: int = 3
    n_frames: int = 600
    dt: float = 0.1
    idm: IDMParams = field(default_factory=IDMParams)
    leader_profile: str = "stopgo"  # or "constant"
    period: float = 60.0
    vehicle_length: float = 5.0
    leader_tau: float = 2.0
    init_speed: tuple[float, float] = (0.3, 0.7)
    scene_id: str = "0"

    def validate(self) -> None:
        self.idm.validate()
        if self.n_vehicles < 1:
            raise DataError("vehicle count must be at least 1")
        if self.n_lanes < 1:
            raise DataError("lane count must be at least 1")
        if self.n_frames < 2:
            raise DataError("horizon (n_frames) must be at least 2")
        if not self.dt > 0 or not self.period > 0:
            raise DataError("dt and period must be positive")
        if self.leader_profile not in ("stopgo", "constant"):
            raise DataError(f"unknown leader profile {self.leader_profile!r}")


def leader_target_speed(t, v0: float, period: float, phase: float = 0.0):
    """Periodic target speed in [0, v0] with a standstill phase every period."""
    return v0 * np.clip(0.5 + 0.75 * np.cos(2 * np.pi * np.asarray(t) / period + phase), 0.0, 1.0)


def simulate_platoon(x0, v0s, n_frames: int, cfg: SynthConfig, phase: float = 0.0):
    """Euler-integrate one lane's platoon.  Vehicle 0 leads.

    Returns ``(n_frames, n)`` positions and speeds.
    """
    p = cfg.idm
    dt = cfg.dt
    x = np.array(x0, dtype=np.float64)
    v = np.array(v0s, dtype=np.float64)
    n = len(x)
    xs = np.empty((n_frames, n))
    vs = np.empty((n_frames, n))
    lead_speed = v[0]
    for k in range(n_frames):
        xs[k] = x
        vs[k] = v
        a = np.empty(n)
        if cfg.leader_profile == "stopgo":
            target = leader_target_speed(k * dt, p.v0, cfg.period, phase)
            a[0] = np.clip((target - v[0]) / cfg.leader_tau, -2.0 * p.b, p.a_max)
        else:
            a[0] = (lead_speed - v[0]) / cfg.leader_tau
        if n > 1:
            gap = x[:-1] - x[1:] - cfg.vehicle_length
            a[1:] = idm_acceleration(v[1:], gap, v[1:] - v[:-1], p)
        x = x + v * dt
        v = np.maximum(0.0, v + a * dt)
    return xs, vs


def synth_experts(cfg: SynthConfig | None = None, rng: np.random.Generator | None = None) -> Scene:
    """Multi-lane car-following scene with stop-and-go leaders, no lane changes."""
    cfg = cfg or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(0) if rng is None else rng
    p = cfg.idm
    per_lane = [list(range(i, cfg.n_vehicles, cfg.n_lanes)) for i in range(cfg.n_lanes)]
    tracks: dict[int, Track] = {}
    frames = np.arange(cfg.n_frames, dtype=np.int64)
    for lane, members in enumerate(per_lane):
        if not members:
            continue
        v_init = p.v0 * rng.uniform(*cfg.init_speed)
        spacing = equilibrium_gap(v_init, p) + cfg.vehicle_length
        head = rng.uniform(0.0, 20.0) + spacing * (len(members) - 1)
        jitter = rng.uniform(0.0, 0.2 * spacing, len(members))
        jitter[0] = 0.0
        x0 = head - spacing * np.arange(len(members)) - jitter
        phase = rng.uniform(0.0, 2 * np.pi)
        xs, _ = simulate_platoon(x0, np.full(len(members), v_init), cfg.n_frames, cfg, phase)
        for j, idx in enumerate(members):
            vid = idx + 1
            tracks[vid] = Track(
                vid,
                frames.copy(),
                xs[:, j].copy(),
                np.full(cfg.n_frames, lane * LANE_WIDTH),
                np.full(cfg.n_frames, lane, dtype=np.int64),
            )
    return Scene(cfg.scene_id, tracks, cfg.dt, cfg.n_lanes, LANE_WIDTH, {})


# ------------------------------------------------------------- expert pairs


@dataclass
class ExpertPair:
    observation: np.ndarray
    action: np.ndarray


def expert_pairs(scene: Scene, ego_id: int, scaler=None) -> list[ExpertPair]:
    """(observation at t, position(t+1) - position(t)) for consecutive frames."""
    t = scene.tracks.get(ego_id)
    if t is None:
        raise DataError(f"no vehicle {ego_id} in scene {scene.scene_id}")
    if len(t) < 2:
        raise DataError(f"vehicle {ego_id}: track shorter than 2 frames")
    obs = env.expert_observations(scene, ego_id, scaler=scaler)
    pos = t.positions()
    acts = np.diff(pos, axis=0)
    return [ExpertPair(obs[i], acts[i]) for i in range(len(t) - 1)]
