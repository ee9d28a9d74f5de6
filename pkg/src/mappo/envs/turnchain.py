"""Turnchain: a rank-only cooperative card game played in turns.

Each player holds ``hand_size`` cards it cannot see; everyone else can.  The
team builds one pile 1, 2, ..., max_rank.  On its turn a player may

  * play slot h      (actions 0 .. H-1)     +1 raw reward if it extends the pile,
                                             otherwise a life is lost
  * discard slot h   (actions H .. 2H-1)    regains a hint token
  * hint player +o   (actions 2H .. 2H+n-2) reveals that player's ranks; costs a token

The game ends on a complete pile (win), when lives run out, when the deck is
empty and every player has had one final turn, or at the episode limit.

Only the acting player moves.  Its turn reward is the sum of raw rewards from
its own move up to (not including) its next move, i.e. over the next
``n_players`` raw steps; see :func:`turn_rewards` and
:class:`TurnRewardAccumulator`.
"""

from __future__ import annotations

import numpy as np

from .base import EnvDescriptor, EnvStep, MultiAgentEnv, register

NO_ACTION = -1


def turn_rewards(raw_rewards, actors, n_players):
    """Forward-accumulated turn reward for every raw step of one episode.

    ``out[s]`` belongs to ``actors[s]`` and sums ``raw_rewards[s:u]`` where ``u``
    is that player's next turn (or the episode end).
    """
    raw = np.asarray(raw_rewards, dtype=np.float64)
    actors = np.asarray(actors)
    out = np.zeros_like(raw)
    nxt = {}
    for s in range(len(raw) - 1, -1, -1):
        u = nxt.get(int(actors[s]), len(raw))
        out[s] = raw[s:u].sum()
        nxt[int(actors[s])] = s
    return out


class TurnRewardAccumulator:
    """Streaming version of :func:`turn_rewards` for vectorised collection.

    Every raw reward is credited to each player's open window, i.e. the buffer
    slot of that player's most recent turn in the current episode.
    """

    def __init__(self, num_envs, n_players):
        self.open = np.full((num_envs, n_players), -1, dtype=np.int64)

    def open_window(self, env, player, slot):
        self.open[env, player] = slot

    def credit(self, env, reward, rewards_buffer):
        """Add a raw reward to all open windows; ``rewards_buffer[slot, env, player]``."""
        for p, slot in enumerate(self.open[env]):
            if slot >= 0:
                rewards_buffer[slot, env, p] += reward

    def close_episode(self, env):
        """Returns the slot index of each player's last turn (-1 if none)."""
        last = self.open[env].copy()
        self.open[env] = -1
        return last

    def truncate(self):
        """Buffer boundary: windows stop accumulating into the finished buffer."""
        self.open[:] = -1


class TurnchainEnv(MultiAgentEnv):
    def __init__(self, n_players=2, deck_size=None, max_rank=4, hand_size=2, seed=0,
                 max_hints=3, lives=2, episode_limit=60):
        if n_players not in (2, 3, 4):
            raise ValueError("turnchain supports 2, 3 or 4 players")
        deck_size = 4 * max_rank if deck_size is None else deck_size
        if deck_size < max_rank:
            raise ValueError("deck must hold at least one card of every rank")
        self.n, self.R, self.H = n_players, max_rank, hand_size
        self.deck_size, self.max_hints, self.max_lives = deck_size, max_hints, lives
        self.rng = np.random.default_rng(seed)
        C = max_rank + 1
        obs_dim = (n_players - 1) * hand_size * C + hand_size * C + C + 4
        # state: all hands, pile one-hot, hints, lives, deck fraction, current player
        state_dim = n_players * hand_size * C + C + 3 + n_players
        pile0 = n_players * hand_size * C
        overlap = tuple(range(pile0, pile0 + C + 3))
        self.descriptor = EnvDescriptor("turnchain", n_players, obs_dim, state_dim,
                                        2 * hand_size + n_players - 1, episode_limit,
                                        fp_overlap_index=overlap, turn_based=True)

    def reset(self) -> EnvStep:
        cards = np.array([(i % self.R) + 1 for i in range(self.deck_size)])
        self.deck = list(self.rng.permutation(cards))
        self.hands = np.zeros((self.n, self.H), dtype=np.int64)
        self.known = np.zeros((self.n, self.H), dtype=np.int64)
        for p in range(self.n):
            for h in range(self.H):
                self.hands[p, h] = self.deck.pop() if self.deck else 0
        self.pile = 0
        self.hints = self.max_hints
        self.lives = self.max_lives
        self.final_turns = None
        self.current = 0
        self.t = 0
        return self._record(0.0, False, {})

    def available(self, player) -> np.ndarray:
        """Moves open to ``player`` were it to act now (turn order is enforced in play())."""
        H = self.H
        avail = np.zeros(self.descriptor.n_actions, dtype=bool)
        filled = self.hands[player] > 0
        avail[:H] = filled
        avail[H:2 * H] = filled
        if self.hints > 0:
            avail[2 * H:] = True
        return avail

    def _draw(self, player, slot):
        self.hands[player, slot] = self.deck.pop() if self.deck else 0
        self.known[player, slot] = 0
        if not self.deck and self.final_turns is None:
            self.final_turns = self.n

    def play(self, player, action) -> EnvStep:
        if player != self.current:
            raise ValueError(f"player {player} acted out of turn (player {self.current} to move)")
        if not self.available(player)[action]:
            raise ValueError(f"action {action} unavailable for player {player}")
        H, reward = self.H, 0.0
        if action < H:
            card = self.hands[player, action]
            if card == self.pile + 1:
                self.pile += 1
                reward = 1.0
            else:
                self.lives -= 1
            self._draw(player, action)
        elif action < 2 * H:
            self.hints = min(self.hints + 1, self.max_hints)
            self._draw(player, action - H)
        else:
            target = (player + 1 + action - 2 * H) % self.n
            self.known[target] = self.hands[target]
            self.hints -= 1
        self.t += 1
        if self.final_turns is not None:
            self.final_turns -= 1
        self.current = (self.current + 1) % self.n
        win = self.pile == self.R
        done = (win or self.lives <= 0 or (self.final_turns is not None and self.final_turns <= 0)
                or self.t >= self.descriptor.episode_limit or not self.available(self.current).any())
        return self._record(reward, done, {"win": win} if done else {})

    def step(self, actions) -> EnvStep:
        """Simultaneous-style entry point: only the acting player's entry may be set."""
        actions = np.asarray(actions)
        movers = np.flatnonzero(actions != NO_ACTION)
        if len(movers) != 1 or movers[0] != self.current:
            raise ValueError(f"only player {self.current} may act; got actions {actions.tolist()}")
        return self.play(self.current, int(actions[self.current]))

    def _onehot_ranks(self, ranks):
        out = np.zeros((len(ranks), self.R + 1))
        out[np.arange(len(ranks)), ranks] = 1.0
        return out.reshape(-1)

    def _shared_features(self):
        return np.concatenate([self._onehot_ranks([self.pile]),
                               [self.hints / self.max_hints, self.lives / self.max_lives,
                                len(self.deck) / self.deck_size]])

    def observe(self):
        shared = self._shared_features()
        obs = []
        for p in range(self.n):
            others = [self._onehot_ranks(self.hands[(p + k) % self.n]) for k in range(1, self.n)]
            obs.append(np.concatenate(others + [self._onehot_ranks(self.known[p]), shared,
                                                [float(p == self.current)]]))
        return np.stack(obs)

    def global_state(self):
        cur = np.zeros(self.n)
        cur[self.current] = 1.0
        hands = np.concatenate([self._onehot_ranks(self.hands[p]) for p in range(self.n)])
        return np.concatenate([hands, self._shared_features(), cur])

    def _record(self, reward, done, info):
        avail = np.stack([self.available(p) for p in range(self.n)])
        return EnvStep(self.observe(), self.global_state(), reward, done,
                       np.ones(self.n, dtype=bool), avail, info, acting=self.current)


@register("turnchain")
def turnchain_env(n_players=2, deck_size=None, seed=0, **kw) -> TurnchainEnv:
    return TurnchainEnv(n_players=n_players, deck_size=deck_size, seed=seed, **kw)
