"""Iterated function systems, attractor constants and meshes."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fractalbem import library
from fractalbem.geometry import total_measure
from fractalbem.ifs import (AttractorModel, IFSError, IteratedFunctionSystem, SimilarityMap,
                            attractor_barycenter, generate_diameter_mesh, generate_level_mesh,
                            invariant_bounding_ball, mesh_to_csv_rows, parent,
                            similarity_dimension)
from fractalbem.quadrature import chaos_game

finite = st.floats(-10, 10, allow_nan=False)


# ---------------------------------------------------------------------------
# similarity maps
# ---------------------------------------------------------------------------
@given(rho=st.floats(0.01, 0.99), angle=st.floats(0, 360), reflect=st.booleans(),
       pts=st.lists(finite, min_size=6, max_size=6))
def test_similarity_scales_distances(rho, angle, reflect, pts):
    s = SimilarityMap.from_angle(rho, angle, pts[4:6], reflect)
    x, y = np.array(pts[0:2]), np.array(pts[2:4])
    assert np.linalg.norm(s(x) - s(y)) == pytest.approx(rho * np.linalg.norm(x - y), rel=1e-12, abs=1e-12)
    assert np.allclose(s.orthogonal @ s.orthogonal.T, np.eye(2), atol=1e-12)


@given(a=st.floats(0.1, 0.9), b=st.floats(0.1, 0.9), angle=st.floats(0, 360),
       x=st.lists(finite, min_size=2, max_size=2))
def test_compose_and_inverse(a, b, angle, x):
    s = SimilarityMap.from_angle(a, angle, (1.0, -2.0))
    t = SimilarityMap.from_angle(b, -angle / 3, (0.5, 0.25), reflect=True)
    assert np.allclose(s.compose(t)(x), s(t(x)), atol=1e-12)
    assert np.allclose(s.inverse()(s(x)), x, atol=1e-9)


def test_non_orthogonal_part_rejected():
    with pytest.raises(IFSError, match="orthogonal"):
        SimilarityMap(0.5, np.array([[1.0, 0.1], [0.0, 1.0]]), np.zeros(2))


@pytest.mark.parametrize("rho", [0.0, 1.0, 1.2, -0.5])
def test_contraction_ratio_range(rho):
    good = SimilarityMap.scaling(0.5, [0.0])
    with pytest.raises(IFSError, match=r"maps\[1\]\.rho"):
        IteratedFunctionSystem((good, SimilarityMap.scaling(rho, [1.0])))


def test_single_map_rejected():
    with pytest.raises(IFSError):
        IteratedFunctionSystem((SimilarityMap.scaling(0.5, [0.0]),))


def test_flags():
    assert library.unit_square().is_homogeneous
    assert library.unit_square().is_n_attractor
    assert not library.koch_snowflake().is_homogeneous
    assert all(make().is_n_attractor for make in library.LIBRARY.values())
    cantor = IteratedFunctionSystem((SimilarityMap.scaling(1 / 3, [0.0]), SimilarityMap.scaling(1 / 3, [2 / 3])))
    assert cantor.is_homogeneous and not cantor.is_n_attractor


def test_parent():
    assert parent((3, 1, 2)) == (3, 1)
    assert parent((4,)) == ()
    with pytest.raises(IFSError):
        parent(())


# ---------------------------------------------------------------------------
# similarity dimension
# ---------------------------------------------------------------------------
def test_dimension_of_square():
    assert similarity_dimension(library.unit_square()) == pytest.approx(2.0, abs=1e-12)


def test_dimension_of_cantor_set():
    cantor = IteratedFunctionSystem((SimilarityMap.scaling(1 / 3, [0.0]), SimilarityMap.scaling(1 / 3, [2 / 3])))
    assert similarity_dimension(cantor) == pytest.approx(math.log(2) / math.log(3), abs=1e-12)
    assert math.log(2) / math.log(3) == pytest.approx(0.630930, abs=1e-6)


def test_dimension_of_ten_map_example():
    ifs = library.infinitely_many_components()
    assert sorted(ifs.rhos) == [0.25] * 8 + [0.5] * 2
    assert similarity_dimension(ifs) == pytest.approx(2.0, abs=1e-12)


@given(st.lists(st.floats(0.05, 0.9), min_size=2, max_size=8))
def test_dimension_solves_moran_equation(rhos):
    ifs = IteratedFunctionSystem(tuple(SimilarityMap.scaling(r, [float(i)]) for i, r in enumerate(rhos)))
    d = similarity_dimension(ifs)
    assert d > 0
    assert sum(r ** d for r in rhos) == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# bounding ball, diameter, barycenter, measure
# ---------------------------------------------------------------------------
@pytest.mark.parametrize("name", sorted(library.LIBRARY))
def test_bounding_ball_is_invariant(name):
    ifs = library.get(name)
    c, R = invariant_bounding_ball(ifs)
    for m in ifs.maps:
        assert m.rho * R + np.linalg.norm(m(c) - c) <= R


def test_square_ball():
    c, R = invariant_bounding_ball(library.unit_square())
    assert np.allclose(c, [0.5, 0.5], atol=1e-15)
    assert R <= math.sqrt(2) / 2 + 1e-12


def test_duplicated_map_ball_is_a_point():
    s = SimilarityMap.scaling(0.5, [0.0])
    c, R = invariant_bounding_ball(IteratedFunctionSystem((s, s)))
    assert np.allclose(c, [0.0]) and R == 0.0


def test_koch_ball_encloses_samples(koch):
    pts = chaos_game(koch, 100_000, np.random.default_rng(5), depth=8)
    assert np.linalg.norm(pts - koch.ball_center, axis=1).max() <= koch.ball_radius


def test_square_diameter(square):
    assert square.h0 == pytest.approx(math.sqrt(2), abs=1e-9)
    assert square.h0_gap < 1e-9 * square.ball_radius * 1.0001


def test_alpha_family_diameter(alpha):
    assert alpha.h0 == pytest.approx(1.0, abs=1e-9)


def test_koch_diameter_against_point_cloud(koch):
    # brute force over deep sample points: a lower bound that the certified value must dominate
    pts = chaos_game(koch, 10_000, np.random.default_rng(11))
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1)).max()
    assert d <= koch.h0 + 0.5 * koch.h0_gap
    assert d > koch.h0 - 0.02
    # tips lie on a circle of radius 1/2, so the exact diameter is 1
    assert koch.h0 == pytest.approx(1.0, abs=koch.h0_gap + 1e-12)


@pytest.mark.parametrize("name", sorted(library.LIBRARY))
def test_barycenter_fixed_point(name):
    ifs = library.get(name)
    xb = attractor_barycenter(ifs)
    w = ifs.rhos ** ifs.ambient_dim
    assert np.linalg.norm(sum(wm * m(xb) for wm, m in zip(w, ifs.maps)) - xb) < 1e-12


def test_square_barycenter(square):
    assert np.allclose(square.barycenter, [0.5, 0.5], atol=1e-15)


def test_alpha_barycenter_against_chaos_game(alpha):
    # ten million samples of the normalized measure
    pts = chaos_game(alpha, 10_000_000, np.random.default_rng(2))[:, 0]
    mean, se = pts.mean(), pts.std() / math.sqrt(pts.size)
    assert abs(alpha.barycenter[0] - mean) < 3 * se
    # measure-weighted midpoints of the intervals [a^(2m+1), a^(2m)] give the same value
    a = 0.5
    m = np.arange(200)
    lo, hi = a ** (2 * m + 1), a ** (2 * m)
    assert alpha.barycenter[0] == pytest.approx(np.sum((hi - lo) * (hi + lo) / 2) / np.sum(hi - lo), rel=1e-12)


@pytest.mark.parametrize("name", ["unit_square", "koch_snowflake", "alpha_family"])
def test_child_barycenter_equivariance(models, name):
    model = models[name]
    mesh = generate_level_mesh(model, 1)
    for cell, m in zip(mesh.cells, model.ifs.maps):
        assert np.allclose(cell.barycenter, m(model.barycenter), atol=1e-15)


def test_declared_measure_is_exact(square):
    est = total_measure(square)
    assert est.estimate == 1.0 and est.error_bar == 0.0


def test_koch_raster_measure_self_consistent(koch):
    coarse = total_measure(koch, koch.h0 / 256, use_declared=False)
    fine = total_measure(koch, koch.h0 / 512, use_declared=False)
    assert abs(coarse.estimate - fine.estimate) <= coarse.error_bar
    # and both brackets contain the analytic snowflake area
    for est in (coarse, fine):
        assert abs(est.estimate - koch.ifs.declared_measure) <= est.error_bar


def test_separated_squares_measure():
    model = AttractorModel.from_ifs(library.separated_squares().with_measure(None))
    assert abs(model.measure - 2.0) <= model.measure_error
    # the default raster cannot reach the 1e-3 relative target, which is reported
    assert model.measure_flagged
    finer = total_measure(model, model.h0 / 1024, use_declared=False)
    assert abs(finer.estimate - 2.0) <= finer.error_bar < model.measure_error


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------
def test_square_half_diameter_mesh_is_first_level(square):
    mesh = generate_diameter_mesh(square, math.sqrt(2) / 2)
    assert len(mesh) == 4
    assert mesh.indices == [(1,), (2,), (3,), (4,)]
    assert np.allclose(mesh.diameters, math.sqrt(2) / 2, rtol=1e-15)


def test_alpha_family_half_mesh(alpha):
    mesh = generate_diameter_mesh(alpha, 0.5)
    assert mesh.indices == [(1,), (2,), (3,)]
    assert np.allclose(mesh.diameters, [0.25, 0.5, 0.25], rtol=1e-9)


def test_root_mesh(koch):
    mesh = generate_diameter_mesh(koch, koch.h0)
    assert mesh.indices == [()]
    assert mesh.cell(0).composed_map.is_close(SimilarityMap.scaling(1.0, [0.0, 0.0]))


@pytest.mark.parametrize("h", [0.0, -1.0, 1.5])
def test_bad_mesh_size_rejected(koch, h):
    with pytest.raises(IFSError):
        generate_diameter_mesh(koch, h)


def test_negative_level_rejected(square):
    with pytest.raises(IFSError):
        generate_level_mesh(square, -1)


def _prefix_free(indices):
    seen = set(indices)
    return all(idx[:j] not in seen for idx in indices for j in range(len(idx)))


@settings(max_examples=60, deadline=None)
@given(name=st.sampled_from(sorted(library.LIBRARY)), frac=st.floats(0.02, 1.0))
def test_diameter_mesh_law(models, name, frac):
    model = models[name]
    h = frac * model.h0
    mesh = generate_diameter_mesh(model, h)
    rho_min = model.ifs.rho_min
    assert np.all(mesh.diameters <= h)
    assert np.all(mesh.diameters > rho_min * h)
    assert mesh.measures.sum() == pytest.approx(model.measure, rel=1e-12)
    assert _prefix_free(mesh.indices)


@pytest.mark.parametrize("level", [0, 1, 2, 3])
@pytest.mark.parametrize("name", ["alpha_family", "koch_snowflake", "infinitely_many_components"])
def test_level_mesh(models, name, level):
    model = models[name]
    ifs = model.ifs
    mesh = generate_level_mesh(model, level)
    assert len(mesh) == ifs.M ** level
    assert np.all(mesh.diameters >= ifs.rho_min ** level * model.h0 * (1 - 1e-15))
    assert np.all(mesh.diameters <= ifs.rho_max ** level * model.h0 * (1 + 1e-15))
    assert mesh.measures.sum() == pytest.approx(model.measure, rel=1e-12)
    nxt = generate_level_mesh(model, level + 1)
    assert nxt.indices == sorted(idx + (m,) for idx in mesh.indices for m in range(1, ifs.M + 1))


def test_cell_bookkeeping(koch):
    mesh = generate_diameter_mesh(koch, 0.1)
    rhos = koch.ifs.rhos
    for i in range(0, len(mesh), 17):
        cell = mesh.cell(i)
        ratio = 1.0
        for m in cell.index:
            ratio *= rhos[m - 1]
        assert cell.diameter == ratio * koch.h0
        assert cell.measure == pytest.approx(ratio ** 2 * koch.measure, rel=1e-15)
        composed = SimilarityMap.scaling(1.0, [0.0, 0.0])
        for m in cell.index:
            composed = composed.compose(koch.ifs.maps[m - 1])
        assert composed.is_close(cell.composed_map, 1e-14)
        assert np.allclose(cell.composed_map(koch.barycenter), cell.barycenter, atol=1e-15)


def test_mesh_csv(square):
    rows = list(mesh_to_csv_rows(generate_diameter_mesh(square, 0.1)))
    assert rows[0] == "index;diameter;measure;barycenter_0;barycenter_1"
    assert sum(float(r.split(";")[2]) for r in rows[1:]) == pytest.approx(1.0, rel=1e-12)
