import logging

import numpy as np
import pytest

from graphunlearn import (
    DatasetDescriptor,
    InputError,
    ParseError,
    UnlearnRequest,
    gen_sbm,
    load_citation_dataset,
    load_dataset,
    load_graph_json,
    load_request,
    random_split,
    save_citation_dataset,
    save_graph_json,
    save_request,
)
from graphunlearn.datasets import split_masks


CONTENT = """\
paper_a 1 0 1 Genetics
paper_b 0 1 0 Theory
paper_c 1 1 0 Genetics
paper_d 0 0 1 Systems
"""

CITES = """\
paper_a paper_b
paper_b paper_a
paper_c paper_a
paper_c paper_c
paper_d paper_x
"""


def write_pair(tmp_path, content=CONTENT, cites=CITES):
    content_path = tmp_path / "toy.content"
    cites_path = tmp_path / "toy.cites"
    content_path.write_text(content)
    cites_path.write_text(cites)
    return DatasetDescriptor(
        name="toy", content_path=str(content_path), cites_path=str(cites_path),
        split_fraction=0.75, split_seed=3,
    )


class TestCitationLoader:
    def test_parses_toy_pair(self, tmp_path, caplog):
        with caplog.at_level(logging.WARNING):
            graph = load_citation_dataset(write_pair(tmp_path))
        assert graph.num_nodes == 4
        assert graph.num_features == 3
        # labels sorted: Genetics=0, Systems=1, Theory=2
        np.testing.assert_array_equal(graph.labels, [0, 2, 0, 1])
        # a-b and b-a collapse to one edge, self and unknown citations drop
        assert graph.edges == {(0, 1), (0, 2)}
        assert "dropped 2" in caplog.text

    def test_non_binary_feature_token_names_line(self, tmp_path):
        bad = CONTENT.replace("paper_c 1 1 0", "paper_c 1 2 0")
        descriptor = write_pair(tmp_path, content=bad)
        with pytest.raises(ParseError, match="toy.content:3"):
            load_citation_dataset(descriptor)

    def test_inconsistent_width_rejected(self, tmp_path):
        bad = CONTENT.replace("paper_d 0 0 1 Systems", "paper_d 0 1 Systems")
        descriptor = write_pair(tmp_path, content=bad)
        with pytest.raises(ParseError, match="feature tokens"):
            load_citation_dataset(descriptor)

    def test_malformed_cites_line_rejected(self, tmp_path):
        descriptor = write_pair(tmp_path, cites="paper_a paper_b paper_c\n")
        with pytest.raises(ParseError, match="toy.cites:1"):
            load_citation_dataset(descriptor)

    def test_duplicate_node_id_rejected(self, tmp_path):
        descriptor = write_pair(tmp_path, content=CONTENT + "paper_a 1 1 1 Theory\n")
        with pytest.raises(ParseError, match="duplicate"):
            load_citation_dataset(descriptor)

    def test_round_trip(self, tmp_path):
        graph = load_citation_dataset(write_pair(tmp_path))
        save_citation_dataset(graph, tmp_path / "out.content", tmp_path / "out.cites")
        reloaded = load_citation_dataset(
            DatasetDescriptor(
                name="out",
                content_path=str(tmp_path / "out.content"),
                cites_path=str(tmp_path / "out.cites"),
                split_fraction=0.75, split_seed=3,
            )
        )
        assert reloaded == graph

    def test_non_binary_graph_cannot_be_exported(self, tmp_path):
        graph = gen_sbm(blocks=2, nodes_per_block=5, p_intra=0.5, p_inter=0.1,
                        feature_dim=4, seed=0)
        with pytest.raises(InputError):
            save_citation_dataset(graph, tmp_path / "x.content", tmp_path / "x.cites")


class TestSplit:
    def test_split_is_deterministic(self):
        a_train, a_test = split_masks(100, 0.9, 7)
        b_train, b_test = split_masks(100, 0.9, 7)
        np.testing.assert_array_equal(a_train, b_train)
        np.testing.assert_array_equal(a_test, b_test)
        assert a_train.sum() == 90 and a_test.sum() == 10

    def test_masks_partition_disjointly(self):
        train, test = split_masks(31, 0.5, 0)
        assert not (train & test).any()
        assert (train | test).all()

    def test_random_split_keeps_topology(self, sbm_graph):
        resplit = random_split(sbm_graph, 0.5, 99)
        assert resplit.edges == sbm_graph.edges
        np.testing.assert_array_equal(resplit.features, sbm_graph.features)
        assert resplit.train_mask.sum() == round(0.5 * sbm_graph.num_nodes)


class TestSbmGenerator:
    def test_extreme_probabilities_give_cliques_only(self):
        graph = gen_sbm(blocks=2, nodes_per_block=4, p_intra=1.0, p_inter=0.0,
                        feature_dim=4, seed=0)
        within = {(u, v) for u, v in graph.edges if graph.labels[u] == graph.labels[v]}
        assert len(within) == 2 * (4 * 3 // 2)
        assert within == graph.edges

    def test_deterministic_per_seed(self):
        kwargs = dict(blocks=3, nodes_per_block=10, p_intra=0.4, p_inter=0.05,
                      feature_dim=9, seed=13)
        assert gen_sbm(**kwargs) == gen_sbm(**kwargs)

    def test_label_counts_match_blocks(self):
        graph = gen_sbm(blocks=3, nodes_per_block=10, p_intra=0.3, p_inter=0.0,
                        feature_dim=6, seed=1)
        np.testing.assert_array_equal(np.bincount(graph.labels), [10, 10, 10])

    def test_block_signal_in_features(self):
        graph = gen_sbm(blocks=2, nodes_per_block=3, p_intra=0.5, p_inter=0.1,
                        feature_dim=8, seed=2)
        signal = graph.features[0, :4].mean() - graph.features[0, 4:].mean()
        assert signal > 0.5

    def test_invalid_probabilities_rejected(self):
        with pytest.raises(InputError):
            gen_sbm(blocks=2, nodes_per_block=3, p_intra=0.1, p_inter=0.5,
                    feature_dim=4, seed=0)


class TestDescriptor:
    def test_requires_exactly_one_source(self):
        with pytest.raises(InputError):
            DatasetDescriptor(name="nothing")
        with pytest.raises(InputError):
            DatasetDescriptor(content_path="a.content", cites_path="a.cites", blocks=2)
        with pytest.raises(InputError):
            DatasetDescriptor(content_path="a.content")

    def test_load_dataset_dispatches_to_generator(self):
        descriptor = DatasetDescriptor(
            blocks=2, nodes_per_block=5, p_intra=0.6, p_inter=0.1, feature_dim=4,
            seed=4, split_fraction=0.8, split_seed=1,
        )
        graph = load_dataset(descriptor)
        assert graph.num_nodes == 10

    def test_load_dataset_dispatches_to_json(self, tmp_path, sbm_graph):
        path = tmp_path / "graph.json"
        save_graph_json(sbm_graph, path)
        descriptor = DatasetDescriptor(graph_path=str(path))
        assert load_dataset(descriptor) == sbm_graph


class TestGraphJson:
    def test_round_trip(self, tmp_path, sbm_graph):
        path = tmp_path / "g.json"
        save_graph_json(sbm_graph, path)
        assert load_graph_json(path) == sbm_graph

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ParseError):
            load_graph_json(path)


class TestRequestFiles:
    @pytest.mark.parametrize("request_obj", [
        UnlearnRequest.nodes([3, 1, 2]),
        UnlearnRequest.edges([(4, 2), (0, 1)]),
        UnlearnRequest.features([0]),
        UnlearnRequest.edges([]),
    ])
    def test_round_trip(self, tmp_path, request_obj):
        path = tmp_path / "req.txt"
        save_request(request_obj, path)
        assert load_request(path) == request_obj

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "req.txt"
        path.write_text("vertex\n1\n")
        with pytest.raises(ParseError, match="header"):
            load_request(path)

    def test_bad_element_names_line(self, tmp_path):
        path = tmp_path / "req.txt"
        path.write_text("edge\n1 2\n3\n")
        with pytest.raises(ParseError, match="req.txt:3"):
            load_request(path)
