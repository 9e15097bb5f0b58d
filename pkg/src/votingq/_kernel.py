"""Compiled training loop.

Mirrors ``EnsembleAgent.act``/``observe`` and the environments' ``step``
operation for operation, so that for raw utilities both routes produce
bit-identical Q-tables and episode logs (checked in the test suite). All
randomness arrives as pre-drawn uniform arrays; ties always go to the lowest
index.
"""

import math

import numpy as np
from numba import njit

# rule codes
PLURALITY, BLOC, CCR, BORDA, JUDGE, LOTTERY = range(6)
# decision modes
MODE_TOP1, MODE_THRESHOLD, MODE_BOLTZMANN = range(3)


@njit(cache=True)
def _utilities(q, s, softmax, out):
    k, m = out.shape
    for v in range(k):
        if softmax:
            mx = q[v, s, 0]
            for a in range(1, m):
                if q[v, s, a] > mx:
                    mx = q[v, s, a]
            z = 0.0
            for a in range(m):
                out[v, a] = math.exp(q[v, s, a] - mx)
                z += out[v, a]
            for a in range(m):
                out[v, a] = out[v, a] / z
        else:
            for a in range(m):
                out[v, a] = q[v, s, a]


@njit(cache=True)
def _positions(u, pos):
    k, m = u.shape
    for v in range(k):
        order = np.argsort(-u[v], kind="mergesort")
        for j in range(m):
            pos[v, order[j]] = j + 1


@njit(cache=True)
def elect(u, rule, top1, s_thresh, lottery_voter, members, pos, cur, taken):
    """Greedy election on utilities ``u``; fills ``members`` and returns ``(size, score)``.

    With ``top1`` the committee has one member, otherwise it grows until the
    score exceeds ``s_thresh`` or every candidate is in.
    """
    k, m = u.shape
    if rule == LOTTERY:
        best = 0
        for a in range(1, m):
            if u[lottery_voter, a] > u[lottery_voter, best]:
                best = a
        members[0] = best
        return 1, u[lottery_voter, best]
    if rule != JUDGE:
        _positions(u, pos)
    for v in range(k):
        cur[v] = 0.0
    for a in range(m):
        taken[a] = False
    size = 0
    score = 0.0
    while True:
        window = size + 1
        if rule == BLOC:
            for v in range(k):
                c = 0.0
                for j in range(size):
                    if pos[v, members[j]] <= window:
                        c += 1.0
                cur[v] = c
        best = -1
        best_score = 0.0
        for a in range(m):
            if taken[a]:
                continue
            total = 0.0
            for v in range(k):
                if rule == PLURALITY:
                    val = cur[v]
                    if pos[v, a] == 1:
                        val = 1.0
                elif rule == BLOC:
                    val = cur[v]
                    if pos[v, a] <= window:
                        val += 1.0
                elif rule == CCR:
                    val = cur[v]
                    beta = m - pos[v, a]
                    if beta > val:
                        val = beta
                elif rule == BORDA:
                    val = cur[v] + (m - pos[v, a])
                else:
                    val = cur[v] + u[v, a]
                total += val
            if best < 0 or total > best_score:
                best = a
                best_score = total
        members[size] = best
        taken[best] = True
        size += 1
        score = best_score
        for v in range(k):
            if rule == PLURALITY:
                if pos[v, best] == 1:
                    cur[v] = 1.0
            elif rule == CCR:
                beta = m - pos[v, best]
                if beta > cur[v]:
                    cur[v] = beta
            elif rule == BORDA:
                cur[v] = cur[v] + (m - pos[v, best])
            elif rule == JUDGE:
                cur[v] = cur[v] + u[v, best]
        if top1 or size == m or score > s_thresh:
            return size, score


@njit(cache=True)
def boltzmann_pick(u, uniform):
    """Sample from the head-averaged softmax probabilities in ``u`` by inverse CDF."""
    k, m = u.shape
    cum = 0.0
    for a in range(m):
        p = 0.0
        for v in range(k):
            p += u[v, a]
        cum += p / k
        if uniform < cum:
            return a
    return m - 1


@njit(cache=True)
def train(next_state, reward, terminal, start_states, start_cdf, episode_cap, timed_reward,
          q, mode, rule, s_thresh, softmax, alpha, gamma,
          eps_start, eps_end, anneal_steps, total_steps,
          u_action, u_start, u_head, u_mask, update_prob):
    k, S, m = q.shape
    log_step = np.empty(total_steps, dtype=np.int64)
    log_return = np.empty(total_steps, dtype=np.float64)
    util = np.empty((k, m))
    pos = np.empty((k, m), dtype=np.int64)
    cur = np.empty(k)
    taken = np.empty(m, dtype=np.bool_)
    members = np.empty(m, dtype=np.int64)
    use_mask = update_prob >= 0.0
    top1 = mode == MODE_TOP1
    n_cdf = start_cdf.shape[0]

    t = 0
    episodes = 0
    head = 0
    while t < total_steps:
        head = int(math.floor(u_head[episodes] * k))
        j = 0
        while j < n_cdf - 1 and not (start_cdf[j] > u_start[episodes]):
            j += 1
        s = start_states[j]
        ret = 0.0
        steps = 0
        while True:
            if t >= anneal_steps:
                eps = eps_end
            else:
                eps = eps_start + (eps_end - eps_start) * (t / anneal_steps)
            if u_action[t, 0] < eps:
                a = int(math.floor(u_action[t, 1] * m))
            else:
                _utilities(q, s, softmax or mode == MODE_BOLTZMANN, util)
                if mode == MODE_BOLTZMANN:
                    a = boltzmann_pick(util, u_action[t, 1])
                else:
                    size, _ = elect(util, rule, top1, s_thresh, head, members, pos, cur, taken)
                    a = members[int(math.floor(u_action[t, 1] * size))]
            s2 = next_state[s, a]
            done = terminal[s, a]
            steps += 1
            r = 0.0
            if done:
                if timed_reward:
                    r = 1.0 - 0.9 * (steps / episode_cap)
                else:
                    r = reward[s, a]
            for v in range(k):
                if use_mask and not (u_mask[t, v] < update_prob):
                    continue
                boot = 0.0
                if not done:
                    boot = q[v, s2, 0]
                    for b in range(1, m):
                        if q[v, s2, b] > boot:
                            boot = q[v, s2, b]
                q[v, s, a] = (1.0 - alpha) * q[v, s, a] + alpha * (r + gamma * boot)
            ret += r
            t += 1
            s = s2
            if done or steps >= episode_cap:
                log_step[episodes] = t
                log_return[episodes] = ret
                episodes += 1
                break
            if t >= total_steps:
                break
    return log_step[:episodes].copy(), log_return[:episodes].copy(), head
