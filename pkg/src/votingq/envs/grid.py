"""Small, fully observable grid-world puzzles in the style of MiniGrid.

The agent has a position, a facing direction and may carry one object. The
seven actions are turn-left, turn-right, forward, pickup, drop, toggle and
done. Keys open locked doors of their colour, toggling a box reveals what it
hides, and balls/keys/boxes block movement.

Each environment instance holds one layout drawn from its seed. Every
reachable configuration of the world is enumerated once (breadth first from
the start states) and given a dense index, so tabular agents can use
``encode_state`` directly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import CapacityError, ConfigurationError, DomainError
from .base import EnvStep, EpisodeMixin, TabularDynamics, sample_index, success_reward

ACTIONS = ("left", "right", "forward", "pickup", "drop", "toggle", "done")
LEFT, RIGHT, FORWARD, PICKUP, DROP, TOGGLE, DONE = range(7)
# east, south, west, north
DIR_VEC = ((1, 0), (0, 1), (-1, 0), (0, -1))
DIR_CHAR = ">v<^"

OPEN, CLOSED, LOCKED = 0, 1, 2
GRID_KINDS = ("doorkey", "multiroom", "keycorridor", "obstructedmaze")
MAX_STATES = 2_000_000


@dataclass(frozen=True)
class GridConfig:
    kind: str = "doorkey"
    size: int = 6
    max_steps: int | None = None
    n_rooms: int = 3
    room_size: int = 2
    rows: int = 2
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.lower().replace("-", "").replace("_", "")
        if kind not in GRID_KINDS:
            raise ConfigurationError(f"unknown grid kind {self.kind!r} (choose from {', '.join(GRID_KINDS)})")
        object.__setattr__(self, "kind", kind)
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError("max_steps must be positive")
        if kind == "doorkey" and self.size < 5:
            raise ConfigurationError("doorkey needs size >= 5")
        if self.room_size < 1 or self.n_rooms < 2 or self.rows < 1:
            raise ConfigurationError("room_size >= 1, n_rooms >= 2 and rows >= 1 required")

    @property
    def action_count(self) -> int:
        return len(ACTIONS)


@dataclass(frozen=True)
class Obj:
    kind: str  # "key" | "ball" | "box"
    color: str
    contains: int = -1  # object id revealed when a box is toggled


@dataclass
class Layout:
    """Static part of a puzzle plus the initial placement of movable things."""

    width: int
    height: int
    walls: np.ndarray  # [y, x] bool
    doors: list[tuple[int, int, str]] = field(default_factory=list)
    door_init: list[int] = field(default_factory=list)
    objects: list[Obj] = field(default_factory=list)
    object_init: list[tuple[int, int] | None] = field(default_factory=list)
    goal: tuple[int, int] | None = None
    target: int = -1  # object id whose pickup solves the task
    start: tuple[int, int] = (1, 1)
    start_dirs: tuple[int, ...] = (0, 1, 2, 3)
    max_steps: int = 100

    def add_object(self, obj: Obj, pos) -> int:
        self.objects.append(obj)
        self.object_init.append(pos)
        return len(self.objects) - 1


# state = (x, y, dir, carrying, object positions, door states)
State = tuple


class GridWorld(EpisodeMixin):
    def __init__(self, config: GridConfig | None = None, **kwargs):
        self.config = config if config is not None else GridConfig(**kwargs)
        self.layout = build_layout(self.config)
        self._door_at = {(x, y): i for i, (x, y, _) in enumerate(self.layout.doors)}
        self._enumerate()
        self.state: State | None = None

    # -- dynamics -----------------------------------------------------------

    def initial_states(self) -> list[State]:
        L = self.layout
        objs = tuple(L.object_init)
        doors = tuple(L.door_init)
        return [(L.start[0], L.start[1], d, -1, objs, doors) for d in L.start_dirs]

    def _object_at(self, objs, x, y) -> int:
        for i, p in enumerate(objs):
            if p is not None and p[0] == x and p[1] == y:
                return i
        return -1

    def transition(self, state: State, action: int) -> tuple[State, bool]:
        """Pure dynamics: ``(next_state, solved)``."""
        if not 0 <= action < len(ACTIONS):
            raise DomainError(f"invalid action {action}")
        L = self.layout
        x, y, d, carrying, objs, doors = state
        if action == LEFT:
            return (x, y, (d + 3) % 4, carrying, objs, doors), False
        if action == RIGHT:
            return (x, y, (d + 1) % 4, carrying, objs, doors), False
        if action == DONE:
            return state, False
        fx, fy = x + DIR_VEC[d][0], y + DIR_VEC[d][1]
        if not (0 <= fx < L.width and 0 <= fy < L.height) or L.walls[fy, fx]:
            return state, False
        door = self._door_at.get((fx, fy), -1)
        obj = self._object_at(objs, fx, fy)
        if action == FORWARD:
            if obj >= 0 or (door >= 0 and doors[door] != OPEN):
                return state, False
            return (fx, fy, d, carrying, objs, doors), L.goal == (fx, fy)
        if action == PICKUP:
            if carrying >= 0 or obj < 0 or L.objects[obj].kind == "box":
                return state, False
            objs = objs[:obj] + (None,) + objs[obj + 1:]
            return (x, y, d, obj, objs, doors), obj == L.target
        if action == DROP:
            if carrying < 0 or obj >= 0 or door >= 0 or L.goal == (fx, fy):
                return state, False
            objs = objs[:carrying] + ((fx, fy),) + objs[carrying + 1:]
            return (x, y, d, -1, objs, doors), False
        # toggle
        if door >= 0:
            st = doors[door]
            if st == LOCKED:
                held = L.objects[carrying] if carrying >= 0 else None
                if held is None or held.kind != "key" or held.color != L.doors[door][2]:
                    return state, False
                st = OPEN
            else:
                st = CLOSED if st == OPEN else OPEN
            return (x, y, d, carrying, objs, doors[:door] + (st,) + doors[door + 1:]), False
        if obj >= 0 and L.objects[obj].kind == "box":
            inner = L.objects[obj].contains
            new = list(objs)
            new[obj] = None
            if inner >= 0:
                new[inner] = (fx, fy)
            return (x, y, d, carrying, tuple(new), doors), False
        return state, False

    # -- state indexing -----------------------------------------------------

    def _enumerate(self):
        # states entered by a solving move end the episode, so they are indexed
        # but not expanded (their rows become self-loops)
        index: dict[State, int] = {}
        states: list[State] = []
        expanded: set[int] = set()
        queue = deque()

        def visit(s, expand):
            i = index.get(s)
            if i is None:
                if len(states) >= MAX_STATES:
                    raise CapacityError(f"grid state space exceeds {MAX_STATES} states")
                i = index[s] = len(states)
                states.append(s)
            if expand and i not in expanded:
                expanded.add(i)
                queue.append(s)
            return i

        for s in self.initial_states():
            visit(s, True)
        rows: dict[int, tuple[list[int], list[bool]]] = {}
        while queue:
            s = queue.popleft()
            row_n, row_s = [], []
            for a in range(len(ACTIONS)):
                s2, solved = self.transition(s, a)
                row_n.append(visit(s2, not solved))
                row_s.append(solved)
            rows[index[s]] = (row_n, row_s)
        nxt_rows, solved_rows = [], []
        for i in range(len(states)):
            row_n, row_s = rows.get(i, ([i] * len(ACTIONS), [False] * len(ACTIONS)))
            nxt_rows.append(row_n)
            solved_rows.append(row_s)
        self._index = index
        self._states = states
        self._next = np.array(nxt_rows, dtype=np.int64)
        self._solved = np.array(solved_rows, dtype=bool)

    @property
    def n_states(self) -> int:
        return len(self._states)

    @property
    def n_actions(self) -> int:
        return len(ACTIONS)

    @property
    def max_steps(self) -> int:
        return self.layout.max_steps

    def encode_state(self, state: State) -> int:
        try:
            return self._index[state]
        except KeyError:
            raise DomainError(f"state {state!r} is not reachable in this layout") from None

    def decode_state(self, index: int) -> State:
        return self._states[index]

    # -- episode interface --------------------------------------------------

    def reset(self, rng: np.random.Generator) -> int:
        self._begin()
        starts = self.initial_states()
        cdf = np.arange(1, len(starts) + 1) / len(starts)
        self.state = starts[sample_index(cdf, rng.random())]
        return self.encode_state(self.state)

    def step(self, action: int) -> EnvStep:
        self._guard()
        self.state, solved = self.transition(self.state, action)
        self.step_count += 1
        reward = success_reward(self.step_count, self.max_steps) if solved else 0.0
        truncated = not solved and self.step_count >= self.max_steps
        return self._finish(EnvStep(self.encode_state(self.state), reward, solved, truncated))

    def tabulate(self) -> TabularDynamics:
        starts = np.array([self.encode_state(s) for s in self.initial_states()], dtype=np.int64)
        cdf = np.arange(1, len(starts) + 1) / len(starts)
        return TabularDynamics(self._next.copy(), np.zeros(self._next.shape), self._solved.copy(),
                               starts, cdf, self.max_steps, True)

    # -- debugging ----------------------------------------------------------

    def render(self, state: State | None = None) -> str:
        """Text art: ``#`` wall, ``G`` goal, ``D``/``d``/``L`` open/closed/locked door,
        ``K`` key, ``B`` ball, ``X`` box, arrow = agent."""
        L = self.layout
        state = state if state is not None else (self.state or self.initial_states()[0])
        x0, y0, d, carrying, objs, doors = state
        grid = [["#" if L.walls[y, x] else "." for x in range(L.width)] for y in range(L.height)]
        if L.goal is not None:
            grid[L.goal[1]][L.goal[0]] = "G"
        for i, (x, y, _) in enumerate(L.doors):
            grid[y][x] = "DdL"[doors[i]]
        for i, p in enumerate(objs):
            if p is not None:
                grid[p[1]][p[0]] = {"key": "K", "ball": "B", "box": "X"}[L.objects[i].kind]
        grid[y0][x0] = DIR_CHAR[d]
        text = "\n".join("".join(r) for r in grid)
        if carrying >= 0:
            text += f"\ncarrying: {L.objects[carrying].color} {L.objects[carrying].kind}"
        return text

    def describe(self) -> str:
        cfg = self.config
        return "\n".join([
            f"{cfg.kind}: {self.layout.width}x{self.layout.height} grid, 7 actions, "
            f"max_steps {self.max_steps}",
            f"state-space size: {self.n_states}",
            self.render(),
        ])


# -- layout generators ------------------------------------------------------

def _box(width, height):
    walls = np.zeros((height, width), dtype=bool)
    walls[0, :] = walls[-1, :] = True
    walls[:, 0] = walls[:, -1] = True
    return walls


def _free_cells(layout: Layout, x_range, y_range, taken):
    cells = []
    for y in y_range:
        for x in x_range:
            if not layout.walls[y, x] and (x, y) not in taken:
                cells.append((x, y))
    return cells


def _pick(rng, cells):
    return cells[int(rng.integers(len(cells)))]


def build_layout(config: GridConfig) -> Layout:
    rng = np.random.default_rng(config.seed)
    builder = {
        "doorkey": _doorkey,
        "multiroom": _multiroom,
        "keycorridor": _keycorridor,
        "obstructedmaze": _obstructedmaze,
    }[config.kind]
    layout = builder(config, rng)
    if config.max_steps is not None:
        layout.max_steps = config.max_steps
    return layout


def _doorkey(config, rng) -> Layout:
    n = config.size
    walls = _box(n, n)
    split = int(rng.integers(2, n - 2))
    walls[:, split] = True
    door_y = int(rng.integers(1, n - 1))
    walls[door_y, split] = False
    L = Layout(n, n, walls, max_steps=10 * n * n)
    L.doors.append((split, door_y, "yellow"))
    L.door_init.append(LOCKED)
    L.goal = (n - 2, n - 2)
    left = _free_cells(L, range(1, split), range(1, n - 1), set())
    L.start = _pick(rng, left)
    key_pos = _pick(rng, [c for c in left if c != L.start])
    L.add_object(Obj("key", "yellow"), key_pos)
    L.start_dirs = (int(rng.integers(4)),)
    return L


def _multiroom(config, rng) -> Layout:
    # rooms in a row, each room_size x room_size inside, joined by closed doors
    r, k = config.room_size, config.n_rooms
    width, height = k * (r + 1) + 1, r + 2
    walls = _box(width, height)
    L = Layout(width, height, walls, max_steps=20 * k * (r + 1))
    for i in range(1, k):
        x = i * (r + 1)
        walls[:, x] = True
        y = int(rng.integers(1, r + 1))
        walls[y, x] = False
        L.doors.append((x, y, "red"))
        L.door_init.append(CLOSED)
    first = _free_cells(L, range(1, r + 1), range(1, r + 1), set())
    last = _free_cells(L, range(width - 1 - r, width - 1), range(1, r + 1), set())
    L.start = _pick(rng, first)
    L.goal = _pick(rng, last)
    L.start_dirs = (int(rng.integers(4)),)
    return L


def _keycorridor(config, rng) -> Layout:
    # vertical corridor with `rows` rooms on each side; one room is locked and
    # holds the ball, the key lies in another room
    r, rows = config.room_size, config.rows
    width, height = 2 * r + 5, rows * (r + 1) + 1
    walls = _box(width, height)
    cx = r + 2
    walls[:, r + 1] = True
    walls[:, r + 3] = True
    walls[1:-1, cx] = False
    for j in range(1, rows):
        y = j * (r + 1)
        walls[y, :] = True
        walls[y, cx] = False
    L = Layout(width, height, walls, max_steps=30 * (r + 1) * (r + 1) * rows)
    rooms = []
    for side in (0, 1):
        x_range = range(1, r + 1) if side == 0 else range(r + 4, 2 * r + 4)
        wall_x = r + 1 if side == 0 else r + 3
        for j in range(rows):
            y_range = range(j * (r + 1) + 1, j * (r + 1) + 1 + r)
            rooms.append((x_range, y_range, wall_x))
    locked = int(rng.integers(len(rooms)))
    key_room = int(rng.integers(len(rooms) - 1))
    key_room += key_room >= locked
    for i, (x_range, y_range, wall_x) in enumerate(rooms):
        y = int(y_range[int(rng.integers(len(y_range)))])
        walls[y, wall_x] = False
        L.doors.append((wall_x, y, "purple" if i == locked else "grey"))
        L.door_init.append(LOCKED if i == locked else CLOSED)
    xr, yr, _ = rooms[locked]
    ball = L.add_object(Obj("ball", "purple"), _pick(rng, _free_cells(L, xr, yr, set())))
    L.target = ball
    xr, yr, _ = rooms[key_room]
    L.add_object(Obj("key", "purple"), _pick(rng, _free_cells(L, xr, yr, set())))
    L.start = (cx, int(rng.integers(1, height - 1)))
    L.start_dirs = (int(rng.integers(4)),)
    return L


def _obstructedmaze(config, rng) -> Layout:
    # two rooms joined by a locked door; a ball blocks the door on the agent's
    # side and the key is hidden in a box
    r = max(config.room_size, 2)
    width, height = 2 * r + 3, r + 2
    walls = _box(width, height)
    wx = r + 1
    walls[:, wx] = True
    door_y = int(rng.integers(1, r + 1))
    walls[door_y, wx] = False
    L = Layout(width, height, walls, max_steps=40 * (r + 1) * (r + 1))
    L.doors.append((wx, door_y, "blue"))
    L.door_init.append(LOCKED)
    L.add_object(Obj("ball", "green"), (wx - 1, door_y))
    left = _free_cells(L, range(1, wx), range(1, r + 1), {(wx - 1, door_y)})
    key = L.add_object(Obj("key", "blue"), None)
    box_pos = _pick(rng, left)
    L.add_object(Obj("box", "yellow", contains=key), box_pos)
    right = _free_cells(L, range(wx + 1, width - 1), range(1, r + 1), set())
    L.target = L.add_object(Obj("ball", "blue"), _pick(rng, right))
    L.start = _pick(rng, [c for c in left if c != box_pos])
    L.start_dirs = (int(rng.integers(4)),)
    return L
