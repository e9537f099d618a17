"""Test helpers: a central finite-difference oracle independent of the tape, model randomization."""

import numpy as np

H = 1e-3


def numeric_grad(f, arrays, h=H, entries=None, rng=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arrays`` (mutated in place).

    ``entries`` caps the number of probed positions per array (random subset);
    returns a list of (flat_indices, numeric_values).
    """
    rng = rng or np.random.default_rng(0)
    out = []
    for a in arrays:
        flat = a.reshape(-1)
        idx = np.arange(flat.size)
        if entries is not None and flat.size > entries:
            idx = rng.choice(flat.size, entries, replace=False)
        vals = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            vals[k] = (fp - fm) / (2 * h)
        out.append((idx, vals))
    return out


def smooth_numeric_grad(f, arrays, h=H, entries=None, rng=None, tol=1e-4):
    """Like numeric_grad, but drop probes whose +-h interval contains a kink.

    With D(k) = slope(+k) - slope(-k) from one-sided differences, a smooth f has
    D(k) = f'' k + O(k^3), so D(h) = 2 D(h/2) = 4 D(h/4) up to third order. A
    leaky-ReLU pre-activation crossing zero inside the interval adds a slope
    jump that breaks this scaling; such probes are discarded. Probes are drawn
    in random order until ``entries`` smooth ones are found.
    Returns (flat_indices, numeric_values, n_skipped) per array.
    """
    rng = rng or np.random.default_rng(0)
    steps = (h, h / 2, h / 4)
    out = []
    for a in arrays:
        flat = a.reshape(-1)
        want = flat.size if entries is None else min(entries, flat.size)
        idx, vals, skipped = [], [], 0
        for i in rng.permutation(flat.size):
            if len(idx) == want:
                break
            old = flat[i]
            fx = f()
            samples = {}
            for step in steps + tuple(-k for k in steps):
                flat[i] = old + step
                samples[step] = f()
            flat[i] = old
            d = {k: (samples[k] - fx) / k - (fx - samples[-k]) / k for k in steps}
            g = (samples[h] - samples[-h]) / (2 * h)
            scale = max(1.0, abs(g))
            if max(abs(d[h] - 2 * d[h / 2]), abs(d[h / 2] - 2 * d[h / 4])) > tol * scale:
                skipped += 1
                continue
            idx.append(i)
            vals.append(g)
        out.append((np.array(idx, dtype=int), np.array(vals), skipped))
    return out


def max_rel_error(analytic, numeric):
    """max |a - n| / max |n| over the probed entries (normwise relative error)."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def randomize(model, rng, scale=0.05):
    """Give every parameter (final convolutions included) small random values."""
    for _, p in model.named_parameters():
        p.data = (rng.standard_normal(p.shape) * scale).astype(p.data.dtype)
    return model


def randomize_outputs(model, rng, scale=0.1):
    """Keep the default initialization but give the zero-initialized output convolutions random values."""
    for name, p in model.named_parameters():
        if ".conv_out." in name:
            p.data = (rng.standard_normal(p.shape) * scale).astype(p.data.dtype)
    return model


def worst_gradient_error(f, arrays, grads, entries=None, rng=None, max_skip=0.1):
    """Largest normwise relative error of ``grads`` against smooth central differences.

    Fails if a kink spoils more than ``max_skip`` of the probes, or all probes of
    one array, since the base point then sits on a nondifferentiable point.
    """
    results = smooth_numeric_grad(f, arrays, entries=entries, rng=rng)
    probed = sum(len(idx) + skipped for idx, _, skipped in results)
    skipped = sum(s for _, _, s in results)
    assert skipped <= max_skip * probed, f"{skipped}/{probed} probes straddle a kink"
    worst = 0.0
    for (idx, num, _), g in zip(results, grads):
        assert len(idx), "no smooth probe for one array"
        worst = max(worst, max_rel_error(np.asarray(g).ravel()[idx], num))
    return worst
