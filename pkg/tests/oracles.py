"""Independent reference implementations used as test oracles.

None of these import from the package internals they check. They trade
speed for obviousness: homogeneous matrices instead of quaternions, dense
point sampling instead of closed forms, explicit loops instead of
vectorized algebra.
"""

from __future__ import annotations

import math

import numpy as np


# -- kinematics -----------------------------------------------------------------

def rodrigues(axis, angle) -> np.ndarray:
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def quat_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def chain_joints(base_position, base_orientation, axes, offsets, q) -> np.ndarray:
    """Joint positions of one chain by composing 4x4 homogeneous transforms."""
    T = np.eye(4)
    T[:3, :3] = quat_matrix(base_orientation)
    T[:3, 3] = base_position
    pts = [T[:3, 3].copy()]
    for axis, off, angle in zip(axes, offsets, q):
        R = np.eye(4)
        R[:3, :3] = rodrigues(axis, angle)
        D = np.eye(4)
        D[:3, 3] = off
        T = T @ R @ D
        pts.append(T[:3, 3].copy())
    return np.array(pts)


# -- distances --------------------------------------------------------------------

def _segment_points(a, b, n):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return np.asarray(a, float) + t * (np.asarray(b, float) - np.asarray(a, float))


def dense_segment_box(a, b, center, half, orientation, n=10_000) -> float:
    """Minimum over n evenly spaced segment points of the exact point-box distance."""
    R = quat_matrix(orientation)
    pts = _segment_points(a, b, n)
    local = (pts - np.asarray(center, float)) @ R
    outside = np.maximum(np.abs(local) - np.asarray(half, float), 0.0)
    return float(np.min(np.linalg.norm(outside, axis=1)))


def dense_segment_sphere(a, b, center, radius, n=10_000) -> float:
    pts = _segment_points(a, b, n)
    return max(0.0, float(np.min(np.linalg.norm(pts - np.asarray(center, float), axis=1))) - radius)


def dense_segment_segment(a, b, c, d, n=2_000, refine=401) -> float:
    """Grid minimum over both segments, refined locally around the best pair."""
    P = _segment_points(a, b, n)
    Q = _segment_points(c, d, n)
    best = math.inf
    bi = bj = 0
    for i in range(0, n, 200):
        dd = np.linalg.norm(P[i:i + 200, None, :] - Q[None, :, :], axis=2)
        k = int(np.argmin(dd))
        if dd.flat[k] < best:
            best = float(dd.flat[k])
            bi, bj = i + k // n, k % n
    # local refinement on a finer grid around the coarse minimum
    s0, s1 = max(0, bi - 1) / (n - 1), min(n - 1, bi + 1) / (n - 1)
    t0, t1 = max(0, bj - 1) / (n - 1), min(n - 1, bj + 1) / (n - 1)
    a, b, c, d = (np.asarray(v, float) for v in (a, b, c, d))
    s = np.linspace(s0, s1, refine)[:, None, None]
    t = np.linspace(t0, t1, refine)[None, :, None]
    diff = (a + s * (b - a)) - (c + t * (d - c))
    return min(best, float(np.min(np.linalg.norm(diff, axis=2))))


def oracle_clearances(env_dict: dict, q, n: int = 300) -> np.ndarray:
    """Surface clearances (distance minus radii) for every tested pair.

    Works from the serialized environment so it shares no code with the
    package: joint positions from homogeneous transforms, distances as
    minima over ``n`` evenly spaced points per link. Sampling can only
    overestimate a distance, by at most the sum of half spacings of the two
    sampled sets, which is under 1e-3 for 0.2 m links at n=300.
    """
    q = np.asarray(q, dtype=float)
    segs, owner, index, radii = [], [], [], []
    k = 0
    for ri, robot in enumerate(env_dict["robots"]):
        links = robot["links"]
        pts = chain_joints(robot["base_position"], robot["base_orientation"],
                           [l["joint_axis"] for l in links], [l["link_offset"] for l in links],
                           q[k:k + len(links)])
        k += len(links)
        for j, link in enumerate(links):
            segs.append(_segment_points(pts[j], pts[j + 1], n))
            owner.append(ri)
            index.append(j)
            radii.append(link["capsule_radius"])
    P = np.array(segs)                       # (links, n, 3)
    radii = np.array(radii)
    out = []
    for ob in env_dict["obstacles"]:
        c = np.asarray(ob["center"], float)
        if ob["kind"] == "sphere":
            d = np.linalg.norm(P - c, axis=2).min(axis=1) - ob["radius"]
        else:
            local = (P - c) @ quat_matrix(ob["orientation"])
            gap = np.maximum(np.abs(local) - np.asarray(ob["half_extents"], float), 0.0)
            d = np.linalg.norm(gap, axis=2).min(axis=1)
        out.append(np.maximum(d, 0.0) - radii)
    pairs = [(i, j) for i in range(len(segs)) for j in range(i + 1, len(segs))
             if not (owner[i] == owner[j] and abs(index[i] - index[j]) <= 1)]
    if pairs:
        I = np.array([p[0] for p in pairs])
        J = np.array([p[1] for p in pairs])
        sq = np.einsum("lnk,lnk->ln", P, P)
        for s in range(0, len(pairs), 16):
            a, b = I[s:s + 16], J[s:s + 16]
            d2 = sq[a][:, :, None] + sq[b][:, None, :] - 2 * np.matmul(P[a], P[b].transpose(0, 2, 1))
            d = np.sqrt(np.maximum(d2.reshape(len(a), -1).min(axis=1), 0.0))
            out.append(d - radii[a] - radii[b])
    return np.concatenate(out) if out else np.zeros(0)


# -- deepcollide --------------------------------------------------------------------

def reference_forward(params: dict, running: dict, x: np.ndarray, L: int, sigma: float, hidden: int,
                      train: bool, eps: float = 1e-5) -> np.ndarray:
    """Row-by-row scalar reimplementation of the network (no matrix products)."""
    n, d = x.shape
    enc = np.zeros((n, 2 * L * d))
    for r in range(n):
        c = 0
        for j in range(d):
            for k in range(1, L + 1):
                enc[r, c] = math.sin(k * sigma * x[r, j])
                enc[r, c + 1] = math.cos(k * sigma * x[r, j])
                c += 2
    h = enc
    for i in range(6):
        inp = np.concatenate([h, enc], axis=1) if i == 3 else h
        W, b = params[f"W{i}"], params[f"b{i}"]
        fan_out = W.shape[1]
        z = np.zeros((n, fan_out))
        for r in range(n):
            for o in range(fan_out):
                z[r, o] = math.fsum(inp[r, m] * W[m, o] for m in range(W.shape[0])) + b[o]
        out = np.zeros_like(z)
        for o in range(fan_out):
            if train:
                mu = math.fsum(z[:, o]) / n
                var = math.fsum((z[:, o] - mu) ** 2) / n
            else:
                mu, var = running[f"mean{i}"][o], running[f"var{i}"][o]
            for r in range(n):
                v = params[f"gamma{i}"][o] * (z[r, o] - mu) / math.sqrt(var + eps) + params[f"shift{i}"][o]
                out[r, o] = max(v, 0.0) if i < 5 else v
        h = out
    return h[:, 0]


def adam_trace(grads, lr, beta1=0.9, beta2=0.999, eps=1e-8, x0=0.0) -> list[float]:
    """Scalar Adam written out step by step."""
    x, m, v = x0, 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(x)
    return out


# -- fastron / pareto -------------------------------------------------------------

def naive_scores(features, alpha, queries, gamma) -> np.ndarray:
    out = np.zeros(len(queries))
    for qi, xq in enumerate(queries):
        s = 0.0
        for i, a in enumerate(alpha):
            if a != 0:
                d2 = float(np.sum((features[i] - xq) ** 2))
                s += a * (1 + 0.5 * gamma * d2) ** -2
        out[qi] = s
    return out


def brute_pareto(points) -> list[int]:
    keep = []
    for i, (ti, ei) in enumerate(points):
        dominated = any(tj < ti and ej < ei for j, (tj, ej) in enumerate(points) if j != i)
        if not dominated:
            keep.append(i)
    return keep


def finite_difference_grads(loss_fn, params: dict, step: float = 1e-4) -> dict:
    """Central differences of ``loss_fn()`` for every entry of every array in ``params``."""
    out = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss_fn()
            flat[k] = orig - step
            down = loss_fn()
            flat[k] = orig
            g.reshape(-1)[k] = (up - down) / (2 * step)
        out[name] = g
    return out
