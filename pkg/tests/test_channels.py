import numpy as np
import pytest

from jminv.channels import (ChannelSet, channel_momentum, kinematics_at, open_weight,
                            weight_at)


@pytest.fixture
def cs():
    return ChannelSet(0.495, 5, 10.0)


def test_threshold_energies(cs):
    assert cs.eps_threshold == pytest.approx(0.5 * 0.495**2 * 10, rel=1e-15)
    assert cs.eps(6.0) == pytest.approx(4.41045, rel=1e-15)
    assert cs.eps(np.sqrt(10.0)) == pytest.approx(1.225125, rel=1e-14)
    assert cs.k_threshold == pytest.approx(np.sqrt(10.0))
    assert cs.k_of_eps(cs.eps(2.7)) == pytest.approx(2.7, rel=1e-15)
    assert cs.dim == 10


def test_channel_momenta(cs):
    assert channel_momentum(4.0, 10.0) == pytest.approx(np.sqrt(6.0))
    assert channel_momentum(2.0, 10.0) == pytest.approx(1j * np.sqrt(6.0))
    # bound-state momentum: k = i kappa gives k2 = i sqrt(kappa^2 + delta)
    assert channel_momentum(2j, 10.0) == pytest.approx(1j * np.sqrt(14.0))
    kin = kinematics_at(cs, 4.0)
    assert kin.q_alpha[1] == pytest.approx(0.495 * np.sqrt(6.0))
    assert kin.k_alpha[0] == 4.0


def test_open_weight(cs):
    assert weight_at(cs, 2.0).p22 == 0.0
    assert weight_at(cs, 4.0).p22 == pytest.approx(4.0 / np.sqrt(6.0))
    assert weight_at(cs, 4.0).p11 == 1.0
    assert np.all(open_weight(np.array([0.5, 1.0]), 0.0) == 1.0)
    assert np.allclose(weight_at(cs, 5.0).as_array(), np.diag([1.0, 5.0 / np.sqrt(15.0)]))


@pytest.mark.parametrize("kw", [dict(rho=0.5, N=5, delta=-1.0), dict(rho=0.5, N=1),
                                dict(rho=-0.5, N=5), dict(rho=0.5, N=5, ell=(0, 0, 0))])
def test_invalid_channel_sets(kw):
    with pytest.raises(ValueError):
        ChannelSet(**kw)


def test_negative_momentum_rejected(cs):
    with pytest.raises(ValueError):
        kinematics_at(cs, -1.0)
    with pytest.raises(ValueError):
        weight_at(cs, -1.0)
