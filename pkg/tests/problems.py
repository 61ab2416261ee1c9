"""Random small models and batches for gradient checks."""

import numpy as np

from uvote.model import ArchitectureSpec, build_model
from uvote.nncore import Trace, forward

KINK_MARGIN = 1e-3


def random_problem(seed, n=10, max_width=32, max_depth=2, max_experts=3, activation="relu"):
    """Model, batch and weights whose loss is smooth within the FD step.

    Central differences are only a valid oracle away from the ReLU and
    ``|y - y_hat|`` kinks, so inputs are redrawn until every pre-activation
    and residual clears ``KINK_MARGIN``.
    """
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, max_experts + 1))
    depth = int(rng.integers(1, max_depth + 1))
    hidden = tuple(int(h) for h in rng.integers(2, max_width + 1, size=depth))
    model = build_model(ArchitectureSpec(3, hidden, m, activation), seed)
    for layer in model.trunk:
        layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
    for layer in (model.head_y, model.head_s):
        layer.bias[:] = rng.normal(scale=0.3, size=layer.bias.shape)
    for _ in range(1000):
        x = rng.normal(size=(n, 3))
        y = rng.normal(scale=2.0, size=n)
        tr = Trace()
        forward(model.trunk, x, tr)
        y_hat = model.predict_all(x).y_hat
        if min(np.abs(a).min() for a in tr.preacts) > KINK_MARGIN and \
                np.abs(y[:, None] - y_hat).min() > KINK_MARGIN:
            break
    else:
        raise RuntimeError("could not draw a kink-free batch")
    w = rng.uniform(0.1, 3.0, size=(n, m))
    return model, x, y, w, rng
