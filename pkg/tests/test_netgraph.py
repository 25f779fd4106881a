import numpy as np
import pytest

from gflnet.blockmath import I2, J, cnorm_inf_mat, is_complex_form, kron_i2
from gflnet.core import ModelError
from gflnet.netgraph import (
    Line,
    NetworkModel,
    assemble_admittance,
    branch_admittance,
    expand_load_voltages,
    incidence_matrix,
    kron_reduce,
    purely_resistive_reduction,
    radial_chain,
)

OMEGA = 120 * np.pi
V_G = 120 * np.sqrt(2)


def test_line_validation():
    with pytest.raises(ValueError, match="zero impedance"):
        Line(bus_from=0, bus_to=1, r_ohm=0.0, l_henry=0.0)
    with pytest.raises(ValueError, match="self loop"):
        Line(bus_from=2, bus_to=2, r_ohm=1.0, l_henry=0.0)
    with pytest.raises(ValueError):
        Line(bus_from=0, bus_to=1, r_ohm=-1.0, l_henry=0.0)


def test_network_validation():
    lines = [Line(bus_from=0, bus_to=1, r_ohm=1.0, l_henry=0.0)]
    with pytest.raises(ValueError, match="disconnected"):
        NetworkModel(n_inverters=2, lines=lines)
    with pytest.raises(ValueError, match="outside"):
        NetworkModel(n_inverters=1, lines=lines + [Line(bus_from=1, bus_to=5, r_ohm=1.0, l_henry=0.0)])
    with pytest.raises(ValueError, match="load resistances"):
        NetworkModel(n_inverters=1, n_loads=1, lines=lines, load_resistances=[])
    with pytest.raises(ValueError, match="nonpositive"):
        NetworkModel(
            n_inverters=1,
            n_loads=1,
            lines=lines + [Line(bus_from=1, bus_to=2, r_ohm=1.0, l_henry=0.0)],
            load_resistances=[0.0],
        )
    with pytest.raises(ValueError):
        NetworkModel(n_inverters=1, lines=lines, v_g=0.0)


def test_bus_classes(loaded_network):
    assert loaded_network.n_buses == 4
    assert loaded_network.load_buses == [1]
    assert loaded_network.inverter_buses == [2, 3]
    assert loaded_network.is_inductive
    assert not loaded_network.is_resistive


def test_incidence_matrix(radial3):
    B = incidence_matrix(radial3)
    assert B.shape == (4, 3)
    assert np.allclose(B.sum(axis=0), 0.0)
    assert B[0, 0] == 1.0 and B[1, 0] == -1.0


def test_unit_resistive_line():
    model = radial_chain(1, 1.0, 0.0)
    adm = assemble_admittance(model)
    assert np.allclose(adm.branch, I2)
    assert np.allclose(adm.Y, np.block([[I2, -I2], [-I2, I2]]))


def test_branch_admittance_closed_form():
    r, l = 0.02, 2e-5
    a = branch_admittance(r, l, OMEGA)
    assert np.allclose(a @ (r * I2 + OMEGA * l * J), I2)
    assert np.allclose(a, (r * I2 - OMEGA * l * J) / (r ** 2 + (OMEGA * l) ** 2))


def test_admittance_laplacian_structure(radial3):
    adm = assemble_admittance(radial3)
    Y = adm.Y
    assert is_complex_form(Y)
    assert np.allclose(Y, Y.reshape(4, 2, 4, 2).transpose(2, 1, 0, 3).reshape(8, 8))
    # every block row sums to zero
    block_sums = Y.reshape(4, 2, 4, 2).sum(axis=2)
    assert np.allclose(block_sums, 0.0)
    BB = kron_i2(adm.B)
    assert np.allclose(Y, BB @ adm.branch @ BB.T, rtol=1e-10)


def test_partition_shapes(loaded_network):
    adm = assemble_admittance(loaded_network)
    assert adm.Y00.shape == (2, 2)
    assert adm.YLL.shape == (2, 2)
    assert adm.YII.shape == (4, 4)
    assert adm.YIL.shape == (4, 2)
    assert adm.BI.shape == (2, 3)
    with pytest.raises(ModelError, match="bus class"):
        adm.block("X", "I")


def test_no_loads_reduction(radial3):
    adm = assemble_admittance(radial3)
    red = kron_reduce(adm, radial3)
    assert np.allclose(red.y_red, adm.YII)
    assert np.allclose(red.y_g, adm.YI0)


def test_no_load_voltage_is_grid_voltage():
    model = radial_chain(1, 0.02, 2e-5)
    red = kron_reduce(assemble_admittance(model), model)
    assert np.allclose(red.w, [0.0, V_G])
    assert np.allclose(red.w_hat, [0.0, 1.0])
    assert np.allclose(red.y_red_hat @ red.y_red_hat_inv, np.eye(2))


def test_dimensionless_scaling(loaded_network):
    red = kron_reduce(assemble_admittance(loaded_network), loaded_network)
    scale = V_G ** 2 / 1000.0
    assert np.allclose(red.y_red_hat, scale * red.y_red)
    assert np.allclose(red.w_hat, red.w / V_G)
    assert is_complex_form(red.y_red_hat)


def test_filter_capacitance_only_on_diagonal(loaded_network):
    c_f = [2e-3, 1e-3]
    red = kron_reduce(assemble_admittance(loaded_network), loaded_network, c_f=c_f)
    diff = red.y_cred - red.y_red
    assert np.allclose(diff, OMEGA * np.kron(np.diag(c_f), J))
    assert np.allclose(red.tau_pp_lc, np.asarray(c_f) * OMEGA * V_G ** 2 / 1000.0)


def test_line_matrices(loaded_network):
    red = kron_reduce(assemble_admittance(loaded_network), loaded_network)
    scale = V_G ** 2 / 1000.0
    assert np.allclose(red.z_hat[:2, :2], (0.02 * I2 + OMEGA * 2e-5 * J) / scale)
    coupling = red.z_l - red.z_hat
    assert np.allclose(coupling, kron_i2(red.bl.T @ np.diag(red.r_load_hat) @ red.bl))
    assert np.min(np.linalg.eigvalsh(red.z_l + red.z_l.T)) > 0
    assert np.allclose(red.line_gain, scale / np.array([2e-5, 1e-5, 3e-5]))


def test_kron_reduction_current_consistency(loaded_network, rng):
    adm = assemble_admittance(loaded_network)
    red = kron_reduce(adm, loaded_network)
    v_g = np.array([0.0, V_G])
    for _ in range(5):
        v_inv = rng.normal(scale=V_G, size=4)
        v_load = expand_load_voltages(adm, loaded_network, v_inv)
        full = adm.YI0 @ v_g + adm.YIL @ v_load + adm.YII @ v_inv
        reduced = red.y_red @ v_inv + red.y_g @ v_g
        assert np.allclose(full, reduced, rtol=1e-9, atol=1e-9 * np.max(np.abs(full)))
        # load current equals the current drawn by the load resistance
        load_current = adm.YL0 @ v_g + adm.YLL @ v_load + adm.YLI @ v_inv
        assert np.allclose(load_current, -v_load / 20.0)


def test_example1_reduced_norm():
    model = radial_chain(25, 1e-2, 1e-5)
    red = kron_reduce(assemble_admittance(model), model)
    norm = cnorm_inf_mat(red.y_red_hat_inv)
    # chain impedance grows with the square of n
    assert norm > cnorm_inf_mat(
        kron_reduce(assemble_admittance(radial_chain(5, 1e-2, 1e-5)), radial_chain(5, 1e-2, 1e-5)).y_red_hat_inv
    )
    assert np.isfinite(norm)


def test_singular_reduced_block_named(logger):
    model = radial_chain(2, 1.0, 0.0)
    adm = assemble_admittance(model)
    adm.Y[2:, 2:] = 0.0
    with pytest.raises(ArithmeticError, match="inverter block"):
        kron_reduce(adm, model, logger=logger)


def test_purely_resistive_single_line():
    model = radial_chain(1, 0.02, 0.0)
    l_red, u_hat = purely_resistive_reduction(assemble_admittance(model), model)
    r_hat = 0.02 * 1000.0 / V_G ** 2
    assert np.allclose(l_red, [[1.0 / r_hat]])
    assert np.allclose(u_hat, [1.0])


def test_purely_resistive_matches_block_reduction(resistive_network):
    adm = assemble_admittance(resistive_network)
    l_red, u_hat = purely_resistive_reduction(adm, resistive_network)
    red = kron_reduce(adm, resistive_network)
    assert np.allclose(kron_i2(l_red), red.y_red_hat)
    assert np.allclose(np.kron(u_hat, [0.0, 1.0]), red.w_hat)
    assert np.all(np.linalg.inv(l_red) >= 0)


def test_purely_resistive_rejects_inductive(radial3):
    with pytest.raises(ModelError, match="not purely resistive"):
        purely_resistive_reduction(assemble_admittance(radial3), radial3)
