import numpy as np
import pytest

from mrn import triangle as tri
from mrn import unet as un
from mrn.errors import FormatError, ResolutionError, ShapeError
from mrn.spaces import MultiResFunction, coarse_part, detail_part


def _batch(spec, level, n=2, seed=0):
    res = spec.grid_resolution(level)
    return np.random.default_rng(seed).standard_normal((n, spec.in_channels) + (2**res,) * spec.dims)


def test_parameter_count_small_net():
    spec = un.UNetSpec(J=1, width=2)
    state = un.build_unet(spec, 0)
    # enc1: 2*1*3 + 2 + 1*2*3 + 1 = 15; dec1: 2*2*3 + 2 + 1*2*3 + 1 = 21
    assert state.count("enc") == 15 and state.count("dec") == 21 and state.count() == 36


def test_multiresnet_has_no_encoder_parameters():
    state = un.build_unet(un.UNetSpec(J=3, encoder="identity"), 0)
    assert state.count("enc") == 0
    assert all(un.param_level(k) in (1, 2, 3) for k in state.params)


def test_hidden_width_doubles_towards_coarse_levels():
    spec = un.UNetSpec(J=3, width=4)
    assert [spec.hidden_width(l) for l in (0, 1, 2, 3)] == [16, 16, 8, 4]
    assert [spec.grid_resolution(l) for l in (0, 1, 2, 3)] == [0, 0, 1, 2]


def test_param_level():
    assert un.param_level("enc3.w1") == 3
    assert un.param_level("bott.b2") == 0
    assert un.param_level("tail12.w") == 12


@pytest.mark.parametrize("domain", ["interval", "square"])
def test_zero_residual_net_is_coarse_projection(domain):
    spec = un.UNetSpec(J=3, domain=domain, base_resolution=1)
    state = un.zero_residuals(un.build_unet(spec, 1))
    res = spec.grid_resolution(3)
    v = MultiResFunction(domain, res, np.random.default_rng(2).standard_normal((2**res,) * spec.dims))
    w = un.unet_forward(state, v)
    np.testing.assert_allclose(w.coeffs, coarse_part(v, spec.base_resolution).coeffs, atol=1e-14)


def test_zeroed_skips_ignore_fine_details():
    spec = un.UNetSpec(J=2, base_resolution=2, encoder="identity", skip_mode="zeroed")
    state = un.build_unet(spec, 3)
    rng = np.random.default_rng(4)
    v = MultiResFunction("interval", 3, rng.standard_normal(8))
    noise = detail_part(MultiResFunction("interval", 3, rng.standard_normal(8)), 2)
    a = un.unet_forward(state, v)
    b = un.unet_forward(state, v.replace(coeffs=v.coeffs + noise.coeffs))
    np.testing.assert_allclose(a.coeffs, b.coeffs, atol=1e-12)
    normal = un.build_unet(un.UNetSpec(J=2, base_resolution=2, encoder="identity"), 3)
    assert not np.allclose(un.unet_forward(normal, v).coeffs,
                           un.unet_forward(normal, v.replace(coeffs=v.coeffs + noise.coeffs)).coeffs)


def test_orthogonal_haar_projection_matches_avg_pool():
    x = _batch(un.UNetSpec(J=3, domain="square"), 3)
    outs = [un.unet_forward(un.build_unet(un.UNetSpec(J=3, domain="square", projection=p), 5), x)
            for p in un.PROJECTIONS]
    np.testing.assert_array_equal(outs[0], outs[1])


def test_identity_heads_do_not_change_the_output():
    x = _batch(un.UNetSpec(J=2), 2)
    plain = un.unet_forward(un.build_unet(un.UNetSpec(J=2), 6), x)
    headed = un.build_unet(un.UNetSpec(J=2, heads=True), 6)
    np.testing.assert_allclose(un.unet_forward(headed, x), plain, atol=1e-15)
    with pytest.raises(ValueError):
        un.precondition_split(headed, x, 2)


def test_lower_levels_accept_coarser_inputs():
    spec = un.UNetSpec(J=3, base_resolution=1)
    state = un.build_unet(spec, 7)
    for level in range(4):
        y = un.unet_forward(state, _batch(spec, level), level)
        assert y.shape == (2, 1, 2 ** spec.grid_resolution(level))


def test_forward_errors():
    spec = un.UNetSpec(J=2, base_resolution=1)
    state = un.build_unet(spec, 0)
    with pytest.raises(ResolutionError):
        un.unet_forward(state, _batch(spec, 2), 3)
    with pytest.raises(ShapeError):
        un.unet_forward(state, np.zeros((1, 1, 16)), 2)
    with pytest.raises(ShapeError):
        un.unet_forward(state, np.zeros((1, 2, 4)), 2)
    with pytest.raises(ResolutionError):
        un.precondition_split(state, _batch(spec, 0), 0)


def test_spec_validation():
    with pytest.raises(ValueError):
        un.UNetSpec(J=0)
    with pytest.raises(ValueError):
        un.UNetSpec(encoder="deep")
    with pytest.raises(ShapeError):
        un.UNetSpec(in_channels=1, out_channels=2)
    un.UNetSpec(in_channels=1, out_channels=2, bottleneck="linear")


def test_triangle_net_works_through_the_encoding():
    spec = un.UNetSpec(J=2, domain="triangle", base_resolution=1)
    state = un.build_unet(spec, 8)
    f = tri.tri_synth("bump", 2)
    g = un.unet_forward(state, f)
    assert g.domain == "triangle" and g.resolution == 2
    direct = un.unet_forward(state, tri.encode(f.grid, 2)[None])
    np.testing.assert_array_equal(tri.encode(g.grid, 2), direct[0])


def test_multiresnet_skips_are_pooled_inputs():
    v = MultiResFunction("interval", 2, np.array([1.0, 3.0, 5.0, 7.0]))
    skips = un.multiresnet_skips(v)
    assert [s.coeffs.tolist() for s in skips] == [[1, 3, 5, 7], [2, 6], [4]]
    assert len(un.multiresnet_skips(v, coarsest=1)) == 2
    with pytest.raises(ResolutionError):
        un.multiresnet_skips(v, coarsest=3)


def test_serialization_round_trip(tmp_path):
    spec = un.UNetSpec(J=2, domain="square", bottleneck="resnet", heads=True)
    state = un.build_unet(spec, 9)
    state.frozen = {0, 1}
    path = tmp_path / "n.uns"
    un.save_unet(path, state)
    back = un.load_unet(path)
    assert back.spec == spec and back.frozen == {0, 1}
    assert all(back.params[k].data.tobytes() == state.params[k].data.tobytes() for k in state.params)
    assert un.dumps(back) == un.dumps(state)


def test_serialization_rejects_corruption():
    buf = un.dumps(un.build_unet(un.UNetSpec(J=1), 0))
    for bad in (b"UNS2" + buf[4:], buf[:-3], buf + b"\0"):
        with pytest.raises(FormatError):
            un.loads(bad)
    other = un.dumps(un.build_unet(un.UNetSpec(J=1, width=3), 0))
    # splice the header of one net onto the tensors of another
    cut = 12 + int.from_bytes(buf[8:12], "little")
    cut_o = 12 + int.from_bytes(other[8:12], "little")
    with pytest.raises(FormatError):
        un.loads(buf[:cut] + other[cut_o:])
