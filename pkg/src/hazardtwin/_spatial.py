import numpy as np


def pairwise_distances(xy):
    xy = np.asarray(xy, dtype=float)
    diff = xy[:, None, :] - xy[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def nearest_indices(xy, k, include_self=True):
    """Row i holds the ``k`` nearest node indices to node i.

    Ties in distance go to the lower node index (stable sort on an index-ordered
    row). With ``include_self`` the node itself is always first.
    """
    d = pairwise_distances(xy)
    n = d.shape[0]
    if not include_self:
        d = d.copy()
        d[np.arange(n), np.arange(n)] = np.inf
    order = np.argsort(d, axis=1, kind="stable")
    if include_self:
        # a coincident neighbour with a lower id must not displace self
        rest = order[order != np.arange(n)[:, None]].reshape(n, n - 1)
        order = np.column_stack([np.arange(n), rest])
    return order[:, :k]
