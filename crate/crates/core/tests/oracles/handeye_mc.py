"""Monte-Carlo bound for the closed-loop hand-eye averaging estimator.

Independent numpy implementation. Draws N_c = 16 camera poses looking at a
fixed board from ~0.5 m, perturbs every board-to-camera measurement with
per-axis rotation noise (0.1 deg) and translation noise (1 mm), averages the
inverted loop products, projects to SO(3) and records the error against the
ground truth. Prints percentiles over 100 seeds.
"""
import numpy as np


def rotvec(v):
    th = np.linalg.norm(v)
    if th < 1e-300:
        return np.eye(3)
    k = v / th
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K


def se3(R, t):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return T


def look_at(eye, target, roll):
    z = target - eye
    z /= np.linalg.norm(z)
    up = np.array([0.0, 0.0, 1.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=1) @ rotvec(np.array([0, 0, roll]))
    return se3(R, eye)


def trial(seed, n_c=16, rot_sigma_deg=0.1, trans_sigma=0.001):
    rng = np.random.default_rng(seed)
    t_true = se3(rotvec(np.array([0.05, -0.1, 1.2])), np.array([0.03, -0.02, 0.11]))
    board_in_base = se3(rotvec(np.array([0.0, 0.0, 0.3])), np.array([0.5, 0.0, 0.0]))
    base_to_board = np.linalg.inv(board_in_base)
    acc = np.zeros((4, 4))
    for _ in range(n_c):
        az = rng.uniform(-np.pi, np.pi)
        el = rng.uniform(np.radians(50), np.radians(85))
        dist = rng.uniform(0.4, 0.6)
        centre = board_in_base[:3, 3]
        eye = centre + dist * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
        cam = look_at(eye, centre, rng.uniform(-0.5, 0.5))
        flange = cam @ np.linalg.inv(t_true)
        b2c = np.linalg.inv(base_to_board @ flange @ t_true)
        noise = se3(rotvec(rng.normal(0, np.radians(rot_sigma_deg), 3)), rng.normal(0, trans_sigma, 3))
        b2c = noise @ b2c
        acc += np.linalg.inv(b2c @ base_to_board @ flange)
    m = acc / n_c
    U, _, Vt = np.linalg.svd(m[:3, :3])
    d = np.sign(np.linalg.det(U @ Vt))
    R = U @ np.diag([1, 1, d]) @ Vt
    chord = np.linalg.norm(R - t_true[:3, :3])
    ang = np.degrees(2 * np.arcsin(min(1.0, chord / (2 * np.sqrt(2)))))
    terr = np.linalg.norm(m[:3, 3] - t_true[:3, 3])
    return ang, terr


if __name__ == "__main__":
    res = np.array([trial(s) for s in range(100)])
    for name, col, unit in [("rotation", res[:, 0], "deg"), ("translation", res[:, 1] * 1000, "mm")]:
        print(f"{name}: mean {col.mean():.4f} p95 {np.percentile(col, 95):.4f} max {col.max():.4f} {unit}")
