import numpy as np
import pytest

from cavmarl.env import MetaAction, observe
from cavmarl.maddpg import (ExplorationSchedule, ReplayBuffer, Transition, actor_forward, actor_update,
                            buffer_push, buffer_sample, critic_update, init_actor, init_agent, soft_update)
from cavmarl.nn.tensor import Tensor

from scenes import make_world, route


def _transition(k, agents=2, n_cap=8):
    return Transition(np.full((agents, n_cap, 6), float(k)), np.ones((agents, n_cap), bool),
                      np.full(agents, k % 3), np.full(agents, float(k)), np.zeros((agents, n_cap, 6)),
                      np.ones((agents, n_cap), bool), np.zeros(agents, bool))


def _random_batch(rng, b, agents=2, n_cap=8):
    mask = rng.random((b, agents, n_cap)) < 0.6
    mask[..., 0] = True
    return {"obs": rng.normal(size=(b, agents, n_cap, 6)) * 20, "mask": mask,
            "actions": rng.integers(0, 3, size=(b, agents)), "rewards": rng.normal(size=(b, agents)),
            "next_obs": rng.normal(size=(b, agents, n_cap, 6)) * 20, "next_mask": mask.copy(),
            "dones": np.zeros((b, agents), bool)}


def test_buffer_is_fifo():
    buf = ReplayBuffer(capacity=5)
    for k in range(6):
        buffer_push(buf, _transition(k))
    assert len(buf) == 5
    stored = [buf.get(s).rewards[0] for s in buf.indices_in_order()]
    assert stored == [1.0, 2.0, 3.0, 4.0, 5.0]


def test_buffer_sampling():
    buf = ReplayBuffer(capacity=50)
    for k in range(10):
        buffer_push(buf, _transition(k))
    assert buffer_sample(buf, 11, np.random.default_rng(0)) is None
    a = buf.sample_indices(8, np.random.default_rng(3))
    b = buf.sample_indices(8, np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert buffer_sample(buf, 8, np.random.default_rng(3))["obs"].shape == (8, 2, 8, 6)


def test_transition_arity_checked():
    with pytest.raises(ValueError):
        Transition(np.zeros((2, 8, 6)), np.ones((2, 8), bool), np.zeros(3, int), np.zeros(2),
                   np.zeros((2, 8, 6)), np.ones((2, 8), bool), np.zeros(2, bool))


def test_soft_update_closed_forms():
    t, p = Tensor(np.zeros(3)), Tensor(np.ones(3))
    soft_update([t], [p], 0.01)
    assert np.array_equal(t.data, np.full(3, 0.01))
    t0 = 0.3
    t = Tensor(np.array([t0]))
    for _ in range(2):
        soft_update([t], [Tensor(np.array([1.0]))], 0.01)
    assert abs(t.data[0] - (1 - 0.99 ** 2 * (1 - t0))) < 1e-12
    soft_update([t], [Tensor(np.array([-4.0]))], 1.0)
    assert t.data[0] == -4.0
    with pytest.raises(ValueError):
        soft_update([t], [p], 0.0)


def test_critic_fixed_point():
    rng = np.random.default_rng(0)
    agent = init_agent(rng, "mlp", 2)
    last_w, last_b = agent.critic.mlp.weights[-1], agent.critic.mlp.biases[-1]
    last_w.data[:] = 0.0
    last_b.data[:] = 0.7
    batch = _random_batch(rng, 16)
    batch["rewards"][:] = 0.7
    before = [p.data.copy() for p in agent.critic.parameters()]
    loss = critic_update(agent, 0, batch, [agent.target_actor] * 2, gamma=0.0)
    assert loss < 1e-20
    for a, p in zip(before, agent.critic.parameters()):
        assert np.abs(a - p.data).max() <= 1e-8


def test_critic_loss_is_a_mean():
    rng = np.random.default_rng(1)
    one = _random_batch(rng, 1)
    many = {k: np.repeat(v, 8, axis=0) for k, v in one.items()}
    grads = []
    for batch in (one, many):
        agent = init_agent(np.random.default_rng(2), "attention", 2)
        critic_update(agent, 1, batch, [agent.target_actor] * 2)
        grads.append(np.concatenate([p.grad.ravel() for p in agent.critic.parameters()]))
    assert np.allclose(grads[0], grads[1], rtol=1e-10, atol=1e-14)


def test_undersized_batch_is_a_no_op():
    agent = init_agent(np.random.default_rng(0), "mlp", 2)
    assert critic_update(agent, 0, None, []) is None
    assert actor_update(agent, 0, None, np.random.default_rng(0)) is None


def test_zero_critic_leaves_actor_unchanged():
    rng = np.random.default_rng(3)
    agent = init_agent(rng, "attention", 2)
    for p in agent.critic.parameters():
        p.data[:] = 0.0
    before = [p.data.copy() for p in agent.actor.parameters()]
    actor_update(agent, 0, _random_batch(rng, 16), rng)
    for a, p in zip(before, agent.actor.parameters()):
        assert np.abs(a - p.data).max() <= 1e-8


def test_actor_learns_bandit():
    rng = np.random.default_rng(4)
    agent = init_agent(rng, "attention", 1)
    ws, bs = agent.critic.mlp.weights, agent.critic.mlp.biases
    for p in agent.critic.parameters():
        p.data[:] = 0.0
    ws[0].data[8 * 6 + MetaAction.FASTER, 0] = 1.0  # Q = one-hot weight on FASTER
    ws[1].data[0, 0] = 1.0
    ws[2].data[0, 0] = 1.0
    for _ in range(500):
        actor_update(agent, 0, _random_batch(rng, 32, agents=1), rng)
    test = _random_batch(rng, 500, agents=1)
    logits, _ = agent.actor.forward(test["obs"][:, 0], test["mask"][:, 0])
    assert np.mean(logits.data.argmax(axis=1) == MetaAction.FASTER) >= 0.95


def _obs():
    world = make_world([{"route": route("S"), "s": 10.0, "v": 5.0}, {"route": route("W"), "s": 15.0, "v": 6.0}])
    return observe(world, 0)


def test_uniform_when_epsilon_is_one():
    actor = init_actor(np.random.default_rng(0), "mlp")
    rng = np.random.default_rng(1)
    obs = _obs()
    counts = np.bincount([actor_forward(actor, obs, True, rng, epsilon=1.0).action for _ in range(30_000)],
                         minlength=3)
    assert np.abs(counts / 30_000 - 1 / 3).max() < 0.02


def test_greedy_is_deterministic():
    actor = init_actor(np.random.default_rng(0), "mlp")
    obs = _obs()
    assert actor_forward(actor, obs).action == actor_forward(actor, obs).action


def test_ego_alone_attention():
    actor = init_actor(np.random.default_rng(0), "attention")
    world = make_world([{"route": route("S"), "s": 10.0, "v": 5.0}])
    res = actor_forward(actor, observe(world, 0))
    assert res.weights[0] == 1.0 and not res.weights[1:].any()


def test_exploration_schedule_endpoints():
    sched = ExplorationSchedule()
    assert sched.at(0, 100) == (0.3, 1.0)
    eps, temp = sched.at(99, 100)
    assert abs(eps - 0.05) < 1e-12 and abs(temp - 0.5) < 1e-12
