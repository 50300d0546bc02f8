"""SVG map rendering"""

import re

import numpy as np
import pytest

from riskgrid.services import eval_service, render_service
from riskgrid.services.autocorr_service import LocalMoranResult
from riskgrid.services.synthetic_service import rectangle_boundary, uniform_points
from riskgrid.utils import constants
from riskgrid.utils.parallel import stream_rng
from tests.conftest import X0, Y0


def local_result(labels):
    n = len(labels)
    return LocalMoranResult(local_i=np.linspace(-0.5, 1.5, n), p=np.ones(n), z=np.zeros(n), lag=np.zeros(n),
                            p_adj=np.ones(n), labels=tuple(labels))


@pytest.mark.unit
class TestClusterFigure:

    def test_one_rectangle_per_cell_and_panel(self, rectangle_fishnet):
        svg = render_service.render_cluster_figure(rectangle_fishnet, [0, 1, 2, 3, 4, 9],
                                                   local_result([constants.NOT_SIGNIFICANT] * 6),
                                                   reproducible=True).decode('utf-8')
        for panel in ('counts', 'local', 'clusters'):
            assert len(re.findall(rf'id="cell-{panel}-\d+"', svg)) == 6

    def test_colour_bounds_in_metadata(self, rectangle_fishnet):
        svg = render_service.render_cluster_figure(rectangle_fishnet, [0, 1, 2, 3, 4, 9],
                                                   local_result([constants.NOT_SIGNIFICANT] * 6),
                                                   reproducible=True).decode('utf-8')
        assert float(re.search(r'riskgrid:vmin=([^;<]+)', svg).group(1)) == 0.0
        assert float(re.search(r'riskgrid:vmax=([^;<]+)', svg).group(1)) == 9.0
        assert float(re.search(r'riskgrid:local_vmax=([^;<]+)', svg).group(1)) == 1.5

    def test_legend_lists_present_labels_only(self, rectangle_fishnet):
        svg = render_service.render_cluster_figure(rectangle_fishnet, np.arange(6),
                                                   local_result([constants.NOT_SIGNIFICANT] * 6),
                                                   reproducible=True).decode('utf-8')
        assert constants.NOT_SIGNIFICANT in svg
        assert constants.HIGH_HIGH not in svg

        labels = [constants.HIGH_HIGH] * 2 + [constants.NOT_SIGNIFICANT] * 4
        svg = render_service.render_cluster_figure(rectangle_fishnet, np.arange(6), local_result(labels),
                                                   reproducible=True).decode('utf-8')
        assert constants.HIGH_HIGH in svg

    def test_reproducible_bytes(self, rectangle_fishnet):
        args = (rectangle_fishnet, np.arange(6), local_result([constants.NOT_SIGNIFICANT] * 6))
        first = render_service.render_cluster_figure(*args, reproducible=True)
        second = render_service.render_cluster_figure(*args, reproducible=True)
        assert first == second


@pytest.mark.unit
class TestOtherMaps:

    def test_scatter_bounds(self):
        svg = render_service.render_scatter([0, 2, 5], [1.0, 2.5, 7.0], 'poisson', reproducible=True).decode('utf-8')
        assert float(re.search(r'riskgrid:vmin=([^;<]+)', svg).group(1)) == 0.0
        assert float(re.search(r'riskgrid:vmax=([^;<]+)', svg).group(1)) == 7.0

    def test_dot_maps_record_counts(self):
        boundary = rectangle_boundary((X0, Y0), 3000.0, 3000.0)
        observed = uniform_points(boundary, 30, stream_rng(0, 0))
        simulated = uniform_points(boundary, 30, stream_rng(0, 1))
        svg = render_service.render_dot_maps(boundary, observed, simulated, reproducible=True).decode('utf-8')
        assert 'riskgrid:n_observed=30' in svg
        assert 'riskgrid:n_simulated=30' in svg


@pytest.mark.unit
class TestImportanceFigure:

    @staticmethod
    def table():
        return eval_service.ImportanceTable(
            ranked={'poisson': [('agg_A', 9.0), ('NN_B', 4.0), ('ed_C', 1.5)],
                    'forest': [('NN_B', 12.0), ('agg_A', 3.0)],
                    'sdem': []},
            common=['agg_A'], k=3)

    def test_one_panel_per_model(self):
        svg = render_service.render_importance(self.table(), reproducible=True).decode('utf-8')
        assert re.findall(r'id="panel-(\w+)"', svg) == ['poisson', 'forest', 'sdem']
        assert len(re.findall(r'id="bar-poisson-\d+"', svg)) == 3
        assert len(re.findall(r'id="bar-forest-\d+"', svg)) == 2
        assert 'no ranked features' in svg
        assert 'riskgrid:models=poisson,forest,sdem;riskgrid:k=3' in svg

    def test_axis_labels(self):
        svg = render_service.render_importance(self.table(), reproducible=True).decode('utf-8')
        assert '-log10 p' in svg
        assert 'Impurity importance' in svg

    def test_reproducible_bytes(self):
        assert (render_service.render_importance(self.table(), reproducible=True)
                == render_service.render_importance(self.table(), reproducible=True))
