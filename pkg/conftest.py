"""
PruneGNN — Shared test fixtures.
"""

import sys
import os
sys.path.insert(0, os.path.dirname(__file__))

import numpy as np
import pytest

from engine.netsim import NetworkInstance, ScenarioConfig


def make_instance(channel, weights=None, noise_power=1.0, p_max=1.0, tx=None, rx=None,
                  path_loss_exponent=3.5, instance_id=0):
    """NetworkInstance from an explicit channel; positions default to a spread-out line."""
    channel = np.atleast_2d(np.asarray(channel, dtype=complex))
    t = channel.shape[0]
    if tx is None:
        tx = np.column_stack([np.arange(t) * 50.0, np.zeros(t)])
    if rx is None:
        rx = np.asarray(tx, dtype=float) + np.array([0.0, 3.0])
    return NetworkInstance(
        positions_tx=np.asarray(tx, dtype=float),
        positions_rx=np.asarray(rx, dtype=float),
        channel=channel,
        weights=np.ones(t) if weights is None else np.asarray(weights, dtype=float),
        noise_power=noise_power,
        p_max=p_max,
        path_loss_exponent=path_loss_exponent,
        instance_id=instance_id,
    )


def permute_instance(net: NetworkInstance, perm) -> NetworkInstance:
    perm = np.asarray(perm)
    return NetworkInstance(
        positions_tx=net.positions_tx[perm],
        positions_rx=net.positions_rx[perm],
        channel=net.channel[np.ix_(perm, perm)],
        weights=net.weights[perm],
        noise_power=net.noise_power,
        p_max=net.p_max,
        path_loss_exponent=net.path_loss_exponent,
        reference_distance=net.reference_distance,
        instance_id=net.instance_id,
    )


@pytest.fixture
def small_scenario():
    """Ten pairs packed into 40×40 m so every pair sees real interference."""
    return ScenarioConfig(num_pairs=10, region_side=40.0, seed=7)


@pytest.fixture
def tiny_scenario():
    return ScenarioConfig(num_pairs=5, region_side=30.0, seed=11)
