"""One synchronization round of the server/agent protocol.

The server hands every agent the same broadcast payload; each agent
computes a reply from its own shard only; the server consumes the sum
of the replies. Replies are summed in ascending agent-id order no
matter how the shard list is arranged, so shard order never changes
a single bit of the result.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class RoundOutcome:
    server_state: object
    agent_states: list
    finite: bool


def execute_round(broadcast, shards, agent_fn, server_fn, agent_states=None):
    """Run one round.

    agent_fn(broadcast, shard, agent_state) -> (reply tuple of arrays, new agent_state)
    server_fn(aggregate tuple) -> new server state

    agent_states aligns positionally with shards (None for stateless agents).
    """
    if agent_states is None:
        agent_states = [None] * len(shards)
    if len(agent_states) != len(shards):
        raise ValueError("agent_states must align with shards")

    order = sorted(range(len(shards)), key=lambda i: shards[i].agent_id)
    ids = [shards[i].agent_id for i in order]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate agent_id in shards")

    aggregate = None
    new_states = list(agent_states)
    for i in order:
        reply, new_states[i] = agent_fn(broadcast, shards[i], agent_states[i])
        if aggregate is None:
            aggregate = [np.array(part, dtype=np.float64, copy=True) for part in reply]
        else:
            if len(reply) != len(aggregate):
                raise ValueError("agents returned replies of different arity")
            for acc, part in zip(aggregate, reply):
                acc += part

    aggregate = tuple(aggregate)
    finite = all(np.all(np.isfinite(part)) for part in aggregate)
    server_state = server_fn(aggregate)
    return RoundOutcome(server_state=server_state, agent_states=new_states, finite=finite)
