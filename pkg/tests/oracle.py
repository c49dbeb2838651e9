"""Step-by-step reference recomputation of the losses, written without the library's graph code.

Everything here works on plain float64 arrays extracted from the networks and
re-derives each quantity from its definition: a loop-based MLP forward, the
squashed-Gaussian density via log(1 - tanh^2) directly, a max-shifted
log-sum-exp, and explicit per-sample loops.
"""

import math

import numpy as np


def mlp(weights, biases, activation, x):
    h = np.asarray(x, dtype=np.float64)
    for k, (w, b) in enumerate(zip(weights, biases)):
        out = np.empty(h.shape[:-1] + (w.shape[0],))
        for idx in np.ndindex(h.shape[:-1]):
            for j in range(w.shape[0]):
                out[idx + (j,)] = sum(w[j, i] * h[idx + (i,)] for i in range(w.shape[1])) + b[j]
        h = out
        if k < len(weights) - 1:
            h = np.maximum(h, 0.0) if activation == "relu" else np.tanh(h)
    return h


def params_of(net):
    return [w.data.copy() for w in net.weights], [b.data.copy() for b in net.biases], net.hidden_activation


def policy_head(pol_params, s):
    w, b, act = pol_params
    raw = mlp(w, b, act, s)
    d = raw.shape[-1] // 2
    return raw[..., :d], np.clip(raw[..., d:], -5.0, 2.0)


def per_dim_log_prob(mu, log_sigma, x):
    sigma = np.exp(log_sigma)
    gauss = -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma * math.sqrt(2.0 * math.pi))
    return gauss - np.log(1.0 - np.tanh(x) ** 2)


def sigmoid_entropy(logp, h_max=1.0, m=0.0, t=1.0):
    s = -logp
    return np.sum(h_max / (1.0 + np.exp(-(s - m) / t)), axis=-1)


def q(net_params, s, a):
    w, b, act = net_params
    return mlp(w, b, act, np.concatenate([s, a], axis=-1))[..., 0]


def draw(pol_params, s, noise):
    mu, ls = policy_head(pol_params, s)
    x = mu + np.exp(ls) * noise
    return np.tanh(x), per_dim_log_prob(mu, ls, x)


def critic_loss(nets, batch, cfg, alpha, noise_target, noise_ood):
    """Returns (loss_1, loss_2). ``noise_*`` are the standard normals the library draws.

    noise_target: (B, d) for a' at s'; noise_ood: (B, 2n, d) for the OOD set.
    """
    pol, q1, q2, q1t, q2t = nets
    B = len(batch.rewards)
    a_next, logp_next = draw(pol, batch.next_states, noise_target)
    y = np.empty(B)
    for i in range(B):
        qmin = min(q(q1t, batch.next_states[i], a_next[i]), q(q2t, batch.next_states[i], a_next[i]))
        h = sigmoid_entropy(logp_next[i])
        y[i] = batch.rewards[i] + (1.0 - batch.dones[i]) * cfg.gamma * (qmin + alpha * h)

    n = noise_ood.shape[1] // 2
    ood = np.empty_like(noise_ood)
    for i in range(B):
        for j in range(2 * n):
            st = batch.states[i] if j < n else batch.next_states[i]
            mu, ls = policy_head(pol, st)
            ood[i, j] = np.tanh(mu + np.exp(ls) * noise_ood[i, j])

    losses = []
    for net in (q1, q2):
        td, reg = 0.0, 0.0
        for i in range(B):
            q_data = q(net, batch.states[i], batch.actions[i])
            td += (q_data - y[i]) ** 2
            cands = [q_data]
            for j in range(2 * n):
                v = q(net, batch.states[i], ood[i, j])
                if cfg.use_mc_lower_bound:
                    v = max(v, batch.returns[i])
                cands.append(v)
            z = np.array(cands) / cfg.beta
            top = z.max()
            reg += cfg.beta * (top + math.log(np.sum(np.exp(z - top)))) - q_data
        losses.append(td / B + cfg.lambda_ood * reg / B)
    return tuple(losses)


def policy_objective(nets, agent_batch, expert_batch, gbc, alpha, noise, entropy="sigmoid"):
    pol, q1, q2 = nets
    a, logp = draw(pol, agent_batch.states, noise)
    total = 0.0
    for i in range(len(a)):
        qmin = min(q(q1, agent_batch.states[i], a[i]), q(q2, agent_batch.states[i], a[i]))
        bonus = sigmoid_entropy(logp[i]) if entropy == "sigmoid" else -np.sum(logp[i])
        total += qmin + alpha * bonus
    value = total / len(a)
    pen = 0.0
    for i in range(len(expert_batch.rewards)):
        mu, _ = policy_head(pol, expert_batch.states[i])
        a_mean = np.tanh(mu)
        diff = a_mean - expert_batch.actions[i]
        sq = float(np.dot(diff, diff))
        if gbc.gate_mode == "l2_norm":
            open_ = math.sqrt(sq) > gbc.epsilon
        else:
            open_ = sq / len(diff) > gbc.epsilon_bc**2
        pen += sq if open_ else 0.0
    pen /= len(expert_batch.rewards)
    return value - gbc.lambda_bc * pen
