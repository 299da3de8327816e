"""Shared builders for pose-graph tests."""

import numpy as np

from loopforge.geometry import Sim3Transform, sim3_compose, sim3_exp, sim3_inverse
from loopforge.pose_graph import PoseEdge, PoseGraph, edge_residual


def random_tangent(rng, t_scale=1.0, r_scale=0.3, s_scale=0.2) -> np.ndarray:
    return np.concatenate([
        rng.normal(0, t_scale, 3),
        rng.normal(0, r_scale, 3),
        rng.normal(0, s_scale, 1),
    ])


def chain_ground_truth(rng, n: int) -> dict[int, Sim3Transform]:
    poses = {0: Sim3Transform.identity()}
    for i in range(1, n):
        poses[i] = sim3_compose(poses[i - 1], sim3_exp(random_tangent(rng)))
    return poses


def relative(a: Sim3Transform, b: Sim3Transform) -> Sim3Transform:
    return sim3_compose(sim3_inverse(a), b)


def consistent_graph(rng, n: int, n_loops: int = 2, init_noise: float = 0.1) -> tuple:
    """Chain + random loop edges, all measured from ground truth; noisy init."""
    gt = chain_ground_truth(rng, n)
    graph = PoseGraph()
    graph.add_node(0, gt[0])
    for i in range(1, n):
        init = sim3_compose(gt[i], sim3_exp(rng.normal(0, init_noise, 7)))
        graph.add_node(i, init)
        graph.add_edge(PoseEdge(i - 1, i, relative(gt[i - 1], gt[i])))
    for _ in range(n_loops):
        a, b = sorted(rng.choice(n, size=2, replace=False))
        if a == b:
            continue
        graph.add_edge(PoseEdge(int(a), int(b), relative(gt[a], gt[b]),
                                weight=10.0, kind="loop"))
    return graph, gt


def numeric_edge_jacobian(edge, poses, which: int, h: float = 1e-6) -> np.ndarray:
    jac = np.zeros((7, 7))
    for k in range(7):
        step = np.zeros(7)
        step[k] = h
        plus = dict(poses)
        minus = dict(poses)
        plus[which] = sim3_compose(poses[which], sim3_exp(step))
        minus[which] = sim3_compose(poses[which], sim3_exp(-step))
        jac[:, k] = (edge_residual(edge, plus) - edge_residual(edge, minus)) / (2 * h)
    return jac
