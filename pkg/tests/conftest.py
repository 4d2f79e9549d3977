import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from emorl.dataset import Transition, TransitionDataset
from emorl.mdp import ALL_ACTIONS, ALL_STATES, reward
from emorl.sim import SimConfig, generate_dataset

states = st.sampled_from(ALL_STATES)
actions = st.sampled_from(ALL_ACTIONS)


@st.composite
def datasets(draw, max_episodes=4, max_len=6):
    """Valid datasets with consecutive episodes and time steps."""
    transitions = []
    for ep in range(draw(st.integers(1, max_episodes))):
        s = draw(states)
        n = draw(st.integers(1, max_len))
        for t in range(n):
            a, s2 = draw(actions), draw(states)
            terminal = draw(st.booleans()) if t == n - 1 else False
            transitions.append(Transition(ep, t, s, a, reward(s2), s2, terminal))
            s = s2
    return TransitionDataset(tuple(transitions))


def make_dataset(pairs, rewards=None, episode_breaks=()):
    """Dataset from (state, action) pairs in one episode per break segment."""
    transitions, ep, t = [], 0, 0
    for i, (s, a) in enumerate(pairs):
        if i in episode_breaks:
            ep, t = ep + 1, 0
        s2 = pairs[i + 1][0] if i + 1 < len(pairs) else s
        r = reward(s2) if rewards is None else rewards[i]
        transitions.append(Transition(ep, t, s, a, r, s2, False))
        t += 1
    return TransitionDataset(tuple(transitions))


@pytest.fixture(scope="session")
def default_cfg():
    return SimConfig()


@pytest.fixture(scope="session")
def default_data(default_cfg):
    return generate_dataset(default_cfg, 42)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(k.rstrip("ab")), k)):
        ok, detail = results[key]
        terminalreporter.write_line(f"criterion {key:>3}: {'PASS' if ok else 'FAIL'}  {detail}")
