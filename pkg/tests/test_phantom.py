import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from dualcycle.errors import ParameterError, PhantomGenerationError
from dualcycle.phantom import (
    PhantomSpec,
    control_displacements,
    displacement_field,
    draw_random_lines,
    elastic_deform,
    generate_dataset,
    generate_phantom,
    minmax_scale,
    rasterize_segments,
    sample_segments,
)
from dualcycle.volume import Volume3D


@pytest.fixture(scope="module")
def default_lines():
    spec = PhantomSpec()
    return spec, sample_segments(spec), draw_random_lines(spec)


class TestPhantomSpec:
    @pytest.mark.parametrize("kw", [
        {"dims": (8, 32, 32)},
        {"line_count_range": (0, 5)},
        {"line_count_range": (5, 20_000)},
        {"line_count_range": (10, 5)},
        {"line_thickness_sigma": 0.0},
        {"elastic_grid": 1},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            PhantomSpec(**kw)

    def test_dict_round_trip(self):
        spec = PhantomSpec(dims=(32, 40, 48), seed=7)
        assert PhantomSpec.from_dict(spec.to_dict()) == spec


class TestDrawRandomLines:
    def test_degenerate_segment_is_single_blob(self):
        spec = PhantomSpec(dims=(16, 16, 16), line_count_range=(1, 1))
        seg = np.array([[[8.0, 5.0, 3.0], [8.0, 5.0, 3.0]]])
        arr = draw_random_lines(spec, seg).data
        assert np.unravel_index(arr.argmax(), arr.shape) == (8, 5, 3)
        assert arr[8, 5, 3] == 1.0
        _, n = ndimage.label(arr > 0)
        assert n == 1
        # isotropic Gaussian blob: neighbours along each axis are equal
        assert arr[7, 5, 3] == arr[9, 5, 3] == arr[8, 4, 3] == arr[8, 6, 3] == arr[8, 5, 2]
        assert arr[7, 5, 3] == pytest.approx(np.exp(-0.5), rel=1e-6)

    def test_profile_matches_distance_oracle(self):
        seg = np.array([[[2.0, 4.0, 4.0], [13.0, 4.0, 4.0]]])
        arr = rasterize_segments((16, 9, 9), seg, 1.0)
        # an axis-aligned segment: profile depends on the (y, x) distance only
        for y, x in [(4, 4), (4, 5), (5, 5), (6, 4)]:
            d2 = (y - 4) ** 2 + (x - 4) ** 2
            assert arr[7, y, x] == pytest.approx(np.exp(-d2 / 2.0))
        # beyond the end cap the distance is to the endpoint
        assert arr[0, 4, 4] == pytest.approx(np.exp(-4 / 2.0))
        assert arr[15, 4, 4] == pytest.approx(np.exp(-4 / 2.0))

    def test_nonzero_fraction(self, default_lines):
        _, _, v = default_lines
        frac = np.count_nonzero(v.data) / v.data.size
        assert 0.0 < frac < 1.0

    def test_segment_count_by_connected_components(self, default_lines):
        spec, segs, v = default_lines
        # crossings merge the components of the union, so each segment is
        # labelled on its own and the union is checked to be their maximum
        assert spec.line_count_range[0] <= len(segs) <= spec.line_count_range[1]
        union = np.zeros(spec.dims)
        for seg in segs:
            single = rasterize_segments(spec.dims, seg[None], spec.line_thickness_sigma)
            _, n = ndimage.label(single > 0)
            assert n == 1
            union = np.maximum(union, single)
        np.testing.assert_array_equal(v.data, union.astype(np.float32))

    def test_deterministic(self):
        spec = PhantomSpec(dims=(24, 24, 24), seed=5)
        assert draw_random_lines(spec).data.tobytes() == draw_random_lines(spec).data.tobytes()

    def test_line_count_concentration(self):
        counts = [len(sample_segments(PhantomSpec(seed=s))) for s in range(200)]
        assert 38 <= np.mean(counts) <= 42
        assert min(counts) >= 30 and max(counts) <= 50

    def test_endpoints_inside_volume(self):
        segs = sample_segments(PhantomSpec(dims=(20, 30, 40), seed=3))
        assert segs.min() >= 0
        assert np.all(segs.max(axis=(0, 1)) <= np.array([19, 29, 39]))


class TestElasticDeform:
    def test_sigma_zero_identity(self):
        v = Volume3D(np.random.default_rng(0).random((16, 16, 16)))
        np.testing.assert_allclose(elastic_deform(v, 4, 0.0, 1).data, v.data, atol=1e-6)

    def test_field_reproduces_control_vectors(self):
        control = control_displacements(4, 3.0, seed=2)
        field = displacement_field((31, 31, 31), control)
        knots = [0, 10, 20, 30]
        sampled = field[:, knots][:, :, knots][:, :, :, knots]
        np.testing.assert_allclose(sampled, control, atol=1e-6)

    def test_field_shape_anisotropic_grid(self):
        control = control_displacements(3, 1.0, seed=0)
        assert displacement_field((16, 20, 24), control).shape == (3, 16, 20, 24)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.5, 12.0), st.integers(0, 10_000))
    def test_range_convexity(self, sigma, seed):
        v = Volume3D(np.random.default_rng(seed).random((16, 16, 16)) * 3 - 1)
        out = elastic_deform(v, 4, sigma, seed).data
        assert out.min() >= v.data.min() - 1e-6
        assert out.max() <= v.data.max() + 1e-6

    def test_deterministic_and_seed_dependent(self):
        v = Volume3D(np.random.default_rng(0).random((16, 16, 16)))
        a, b, c = elastic_deform(v, seed=1), elastic_deform(v, seed=1), elastic_deform(v, seed=2)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_bad_grid(self):
        with pytest.raises(ParameterError):
            elastic_deform(Volume3D(np.zeros((4, 4, 4))), grid=1)


class TestGenerateDataset:
    def test_six_default_volumes(self):
        vols = generate_dataset([PhantomSpec(seed=s) for s in range(6)])
        assert len(vols) == 6
        for v in vols:
            assert v.shape == (120, 120, 120)
            assert v.data.min() == 0.0 and v.data.max() == 1.0

    def test_singleton(self):
        assert len(generate_dataset([PhantomSpec(dims=(16, 16, 16))])) == 1

    def test_byte_identical(self):
        specs = [PhantomSpec(dims=(24, 24, 24), seed=s) for s in (3, 4)]
        a, b = generate_dataset(specs), generate_dataset(specs)
        assert [v.data.tobytes() for v in a] == [v.data.tobytes() for v in b]

    def test_empty_list(self):
        with pytest.raises(ParameterError):
            generate_dataset([])

    def test_constant_volume_rejected(self):
        with pytest.raises(PhantomGenerationError):
            minmax_scale(np.zeros((4, 4, 4)))

    def test_retries_next_seed(self, monkeypatch):
        import dualcycle.phantom as ph

        real = ph.generate_phantom
        seen = []

        def flaky(spec):
            seen.append(spec.seed)
            if spec.seed == 10:
                raise PhantomGenerationError("empty")
            return real(spec)

        monkeypatch.setattr(ph, "generate_phantom", flaky)
        (v,) = ph.generate_dataset([PhantomSpec(dims=(16, 16, 16), seed=10)])
        assert seen == [10, 11]
        assert v.data.tobytes() == real(PhantomSpec(dims=(16, 16, 16), seed=11)).data.tobytes()

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31))
    def test_scaled_range_property(self, seed):
        v = generate_phantom(PhantomSpec(dims=(16, 16, 16), line_count_range=(2, 4), seed=seed))
        assert v.data.min() == 0.0 and v.data.max() == 1.0
