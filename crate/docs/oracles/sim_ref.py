"""Independent reference for kinematics, arm stepping, scene layout and the
grid camera. Prints the values frozen in crates/core/tests/oracles.rs."""
import math
from rng_ref import Rng

KP, KD, DAMP = 100.0, 20.0, 2.0


def fk(links, q):
    frames, x, y, a = [(0.0, 0.0)], 0.0, 0.0, 0.0
    for l, t in zip(links, q):
        a += t
        x += math.cos(a) * l
        y += math.sin(a) * l
        frames.append((x, y))
    return frames


def arm_step(q, v, target, lims, objs, links, dt):
    ee0 = fk(links, q)[-1]
    q2, v2 = [], []
    for j in range(len(q)):
        u = KP * (target[j] - q[j]) - KD * v[j]
        nv = v[j] + dt * u
        nq = q[j] + dt * nv
        lo, hi = lims[j]
        if nq <= lo:
            nq, nv = lo, max(nv, 0.0)
        elif nq >= hi:
            nq, nv = hi, min(nv, 0.0)
        q2.append(nq)
        v2.append(nv)
    ee = fk(links, q2)[-1]
    out = []
    for (px, py, vx, vy, r) in objs:
        d = 1.0 - DAMP * dt
        vx, vy = vx * d, vy * d
        px, py = px + vx * dt, py + vy * dt
        ox, oy = px - ee[0], py - ee[1]
        n = math.hypot(ox, oy)
        if n < r:
            nx, ny = (ox / n, oy / n) if n > 0 else (1.0, 0.0)
            px, py = ee[0] + nx * r, ee[1] + ny * r
        out.append((px, py, vx, vy, r))
    return q2, v2, out


def camera(w, h, reach, frames, discs):
    e = reach + 0.1
    img = [0.0] * (w * h)
    for row in range(h):
        for col in range(w):
            cx = -e + (col + 0.5) * (2 * e / w)
            cy = e - (row + 0.5) * (2 * e / h)
            val = 0.0
            for (ax, ay), (bx, by) in zip(frames, frames[1:]):
                abx, aby = bx - ax, by - ay
                ls = abx * abx + aby * aby
                t = 0.0 if ls == 0 else min(1.0, max(0.0, ((cx - ax) * abx + (cy - ay) * aby) / ls))
                dx, dy = cx - (ax + abx * t), cy - (ay + aby * t)
                if dx * dx + dy * dy <= 0.02 * 0.02:
                    val = 1.0
            for (px, py, r, c) in discs:
                if (cx - px) ** 2 + (cy - py) ** 2 <= r * r:
                    val = max(val, (c % 8 + 1) / 8)
            img[row * w + col] = val
    return img


if __name__ == "__main__":
    print("fk", [tuple(map(float.hex, f)) for f in fk([0.8, 0.6, 0.4], [0.3, -0.2, 0.5])])
    print("fk_dec", fk([0.8, 0.6, 0.4], [0.3, -0.2, 0.5]))

    links, lims = [0.5, 0.4, 0.3], [(-2.8, 2.8)] * 3
    q, v = [0.0, 0.6, 0.6], [0.0, 0.0, 0.0]
    ee = fk(links, q)[-1]
    objs = [(ee[0] + 0.03, ee[1] - 0.05, 0.0, 0.0, 0.05)]
    print("ee_home", ee)
    target = [-0.2, 0.6, 0.6]
    for step in range(3):
        for _ in range(5):
            q, v, objs = arm_step(q, v, target, lims, objs, links, 0.01)
        print("push", step, [x.hex() for x in q + v + list(objs[0][:4])])
        print("push_dec", step, q, v, objs[0][:4])

    r = Rng(7, 2)
    x = 0.55 + (0.65 - 0.55) * r.uniform()
    y = -0.05 + (0.05 - -0.05) * r.uniform()
    m = 0.5 + (1.5 - 0.5) * r.uniform()
    print("scene7", x.hex(), y.hex(), m.hex(), repr(x), repr(y), repr(m))

    frames = fk([0.5, 0.4, 0.3], [0.4, 0.6, -0.3])
    img = camera(84, 84, 1.2, frames, [(0.6, -0.1, 0.05, 2), (-0.3, 0.5, 0.08, 7)])
    print("cam", sum(1 for p in img if p == 1.0), sum(1 for p in img if p == 3 / 8),
          sum(1 for p in img if p == 1.0 and False), sum(1 for p in img if p > 0), repr(sum(img)))
