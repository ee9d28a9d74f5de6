"""
Rewards in a turn-based game
============================

In turnchain only one player moves per step.  The reward a player's move
is credited with is everything the team earns from that move until the
player's next turn, so with four players a turn at raw step k collects
r_k + r_{k+1} + r_{k+2} + r_{k+3}.
"""

import numpy as np

from mappo.envs.turnchain import NO_ACTION, TurnchainEnv, turn_rewards

env = TurnchainEnv(n_players=4, seed=3)
st = env.reset()
rng = np.random.default_rng(3)

raw, actors = [], []
while not st.done:
    p = st.acting
    actions = np.full(4, NO_ACTION)
    # peek at the hidden hand half of the time so the pile actually grows
    fits = np.flatnonzero(env.hands[p] == env.pile + 1)
    if len(fits) and rng.random() < 0.5:
        actions[p] = fits[0]
    else:
        actions[p] = rng.choice(np.flatnonzero(st.avail[p]))
    actors.append(p)
    st = env.step(actions)
    raw.append(st.reward)

credited = turn_rewards(raw, actors, 4)
print("step player raw credited")
for k, (p, r, c) in enumerate(zip(actors, raw, credited)):
    print(f"{k:>4} {p:>6} {r:>3.0f} {c:>8.0f}")

# every raw reward lands in the window of each player who has already moved
# this episode, so the credited total counts most rewards four times
print("raw total", sum(raw), "credited total", credited.sum())

# during training the same sums are built online by TurnRewardAccumulator;
# the turn-based collector stores one row per round, so each player's value
# and policy terms line up with the turns it actually took
