import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from learncollide.kinematics import (
    InvalidSpecError,
    LinkSpec,
    RobotChainSpec,
    desk_robot,
    fk_features,
    fk_features_batch,
    forward_kinematics,
    joint_positions,
    link_segments,
)

from oracles import chain_joints

# Midpoints of the default robot at q = 0, worked by hand: every link offset
# is (0, 0, 0.2) and no joint rotates, so joints stack straight up the z axis
# at 0, 0.2, ..., 1.4 and the midpoints sit halfway between them.
DESK_ZERO_MIDPOINTS = np.array([[0.0, 0.0, 0.1], [0.0, 0.0, 0.3], [0.0, 0.0, 0.5], [0.0, 0.0, 0.7],
                                [0.0, 0.0, 0.9], [0.0, 0.0, 1.1], [0.0, 0.0, 1.3]])


def one_link(offset=(1.0, 0.0, 0.0), axis=(0.0, 0.0, 1.0)):
    return RobotChainSpec((0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0),
                          (LinkSpec(axis, offset, 0.05),))


def random_robot(rng, n_links=5):
    links = []
    for _ in range(n_links):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        links.append(LinkSpec(tuple(axis), tuple(rng.uniform(-0.3, 0.3, 3)), 0.04))
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return RobotChainSpec(tuple(rng.uniform(-1, 1, 3)), tuple(q), tuple(links))


def test_single_link_at_zero():
    cp = forward_kinematics(one_link(), [0.0])
    np.testing.assert_allclose(cp.points, [[0.5, 0.0, 0.0]], atol=1e-15)


def test_single_link_quarter_turn():
    cp = forward_kinematics(one_link(), [math.pi / 2])
    np.testing.assert_allclose(cp.points, [[0.0, 0.5, 0.0]], atol=1e-12)


def test_single_link_features():
    np.testing.assert_allclose(fk_features([one_link()], [0.0]), [0.5, 0.0, 0.0], atol=1e-15)


def test_desk_robot_zero_golden():
    cp = forward_kinematics(desk_robot(), np.zeros(7))
    np.testing.assert_allclose(cp.points, DESK_ZERO_MIDPOINTS, atol=1e-12)


def test_two_robot_feature_length():
    robots = [desk_robot(), desk_robot((1.0, 0.0, 0.0))]
    assert fk_features(robots, np.zeros(14)).shape == (42,)


def test_permuting_robots_permutes_blocks():
    rng = np.random.default_rng(3)
    a, b = desk_robot(), desk_robot((0.5, -0.2, 0.1))
    qa, qb = rng.uniform(-3, 3, 7), rng.uniform(-3, 3, 7)
    ab = fk_features([a, b], np.concatenate([qa, qb]))
    ba = fk_features([b, a], np.concatenate([qb, qa]))
    np.testing.assert_array_equal(ab[:21], ba[21:])
    np.testing.assert_array_equal(ab[21:], ba[:21])


def test_matches_homogeneous_transform_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        robot = random_robot(rng)
        q = rng.uniform(-math.pi, math.pi, robot.dof)
        ours = joint_positions(robot, q[None, :])[0]
        ref = chain_joints(robot.base_position, robot.base_orientation,
                           [l.joint_axis for l in robot.links], [l.link_offset for l in robot.links], q)
        np.testing.assert_allclose(ours, ref, atol=1e-12)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        forward_kinematics(desk_robot(), np.zeros(6))
    with pytest.raises(ValueError):
        fk_features([desk_robot()], np.zeros(8))


def test_non_unit_axis_rejected():
    with pytest.raises(InvalidSpecError):
        LinkSpec((0.0, 0.0, 2.0), (0.0, 0.0, 0.2), 0.05)


def test_invalid_specs_rejected():
    with pytest.raises(InvalidSpecError):
        LinkSpec((0.0, 0.0, 1.0), (0.0, 0.0, 0.2), 0.0)
    with pytest.raises(InvalidSpecError):
        RobotChainSpec((0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0), ())
    with pytest.raises(InvalidSpecError):
        RobotChainSpec((0.0, 0.0, 0.0), (1.0, 0.1, 0.0, 0.0), (LinkSpec((0, 0, 1), (0, 0, 0.2), 0.05),))


def test_rigid_body_invariance():
    rng = np.random.default_rng(0)
    robot = random_robot(rng, 7)
    q = rng.uniform(-math.pi, math.pi, (1000, robot.dof))
    pts = joint_positions(robot, q)
    lengths = np.linalg.norm(np.diff(pts, axis=1), axis=2)
    expected = np.array([np.linalg.norm(l.link_offset) for l in robot.links])
    assert np.max(np.abs(lengths - expected)) < 1e-9


def test_reachability_bound():
    rng = np.random.default_rng(1)
    robot = desk_robot((0.3, -0.4, 0.2))
    q = rng.uniform(-math.pi, math.pi, (1000, 7))
    starts, ends = link_segments([robot], q)
    mid = 0.5 * (starts + ends)
    dist = np.linalg.norm(mid - np.array(robot.base_position), axis=2)
    assert np.all(dist <= robot.reach + 1e-12)


def test_rotation_about_final_axis_leaves_axis_points_fixed():
    # last link offset lies along its own joint axis, so spinning it moves nothing
    robot = desk_robot()
    rng = np.random.default_rng(5)
    q = rng.uniform(-3, 3, 7)
    base = forward_kinematics(robot, q)
    q2 = q.copy()
    q2[-1] += 1.234
    spun = forward_kinematics(robot, q2)
    np.testing.assert_allclose(spun.points, base.points, atol=1e-12)


def test_batch_matches_single_and_is_deterministic():
    rng = np.random.default_rng(2)
    robots = [desk_robot(), desk_robot((1.0, 1.0, 0.0))]
    Q = rng.uniform(-3, 3, (8, 14))
    batch = fk_features_batch(robots, Q)
    for i in range(8):
        np.testing.assert_allclose(batch[i], fk_features(robots, Q[i]), atol=1e-14)
    np.testing.assert_array_equal(batch, fk_features_batch(robots, Q))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-math.pi, math.pi), min_size=7, max_size=7))
def test_midpoints_are_link_midpoints(q):
    cp = forward_kinematics(desk_robot(), q)
    np.testing.assert_allclose(cp.points, 0.5 * (cp.starts + cp.ends), atol=1e-15)
    assert cp.points.shape == (7, 3)
