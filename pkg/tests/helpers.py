"""Shared test utilities: finite differences and tolerance checks."""
import numpy as np


def rel_close(a, b, tol, floor=1.0):
    """|a - b| <= tol * max(|a|, |b|, floor)."""
    return abs(a - b) <= tol * max(abs(a), abs(b), floor)


def sample_coords(arrays, count, rng):
    """Random (array_index, flat_index) pairs across a parameter list."""
    sizes = np.array([a.size for a in arrays])
    total = sizes.sum()
    picks = rng.choice(total, size=min(count, total), replace=False)
    bounds = np.cumsum(sizes)
    out = []
    for p in picks:
        ai = int(np.searchsorted(bounds, p, side="right"))
        out.append((ai, int(p - (bounds[ai - 1] if ai else 0))))
    return out


def fd_grad(f, arrays, ai, flat_idx, h=1e-5):
    """Central finite difference of scalar f() w.r.t. one coordinate of
    arrays[ai]; f must read the (temporarily mutated) arrays."""
    a = arrays[ai]
    flat = a.reshape(-1)
    old = flat[flat_idx]
    flat[flat_idx] = old + h
    up = f()
    flat[flat_idx] = old - h
    down = f()
    flat[flat_idx] = old
    return (up - down) / (2.0 * h)


def check_grads_fd(f, arrays, grads, rng, count=100, h=1e-5, tol=1e-4):
    """Compare analytic grads (list aligned with arrays) against central
    differences on `count` random coordinates. The comparison floor is a
    fraction of the largest sampled analytic gradient so that noise-level
    coordinates are judged absolutely. Returns the number checked."""
    coords = sample_coords(arrays, count, rng)
    gmax = max(abs(float(grads[ai].reshape(-1)[idx])) for ai, idx in coords)
    floor = max(1e-6, 1e-3 * gmax)
    for ai, idx in coords:
        num = fd_grad(f, arrays, ai, idx, h)
        ana = float(grads[ai].reshape(-1)[idx])
        assert rel_close(num, ana, tol, floor), (
            f"array {ai} flat {idx}: fd {num!r} vs analytic {ana!r}")
    return len(coords)
