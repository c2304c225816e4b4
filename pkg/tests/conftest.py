import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_wall_cloud(angle_deg, n_per_wall=3000, length=8.0, height=3.0,
                    noise=0.0, seed=0):
    """Two perpendicular wall planes rotated by angle_deg, as a 3D cloud."""
    r = np.random.default_rng(seed)
    t1 = r.uniform(0, length, n_per_wall)
    t2 = r.uniform(0, length, n_per_wall)
    a = np.radians(angle_deg)
    d1 = np.array([np.cos(a), np.sin(a)])
    d2 = np.array([-np.sin(a), np.cos(a)])
    xy = np.concatenate([t1[:, None] * d1, t2[:, None] * d2])
    z = r.uniform(0, height, 2 * n_per_wall)
    pts = np.column_stack([xy, z])
    if noise:
        pts += r.normal(0, noise, pts.shape)
    return pts


def make_story_cloud(seed=0, n_plane=4000, n_wall=1500, z_floor=0.0, z_ceiling=3.0,
                     extent=6.0, outlier_frac=0.0, outlier_z=50.0):
    """Floor and ceiling planes plus sparse wall points, optional outliers."""
    r = np.random.default_rng(seed)
    floor = np.column_stack([r.uniform(0, extent, (n_plane, 2)),
                             np.full(n_plane, z_floor)])
    ceil = np.column_stack([r.uniform(0, extent, (n_plane, 2)),
                            np.full(n_plane, z_ceiling)])
    wall = np.column_stack([r.uniform(0, extent, n_wall),
                            np.zeros(n_wall),
                            r.uniform(z_floor, z_ceiling, n_wall)])
    pts = np.concatenate([floor, ceil, wall])
    n_out = int(outlier_frac * len(pts))
    if n_out:
        idx = r.choice(len(pts), n_out, replace=False)
        pts[idx, 2] = outlier_z
    return pts
