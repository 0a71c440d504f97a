import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wrapsched.core import (
    Configuration,
    LayerNode,
    MachineModel,
    Mode,
    gpu_shares,
    microbatch_groups,
    serialize_graph,
)
from wrapsched.errors import (
    CyclicGraphError,
    InvalidConfigurationError,
    ValidationError,
)


def test_serialize_linear_chain_is_identity():
    dag = [LayerNode(0), LayerNode(1, predecessors=(0,)),
           LayerNode(2, predecessors=(1,)), LayerNode(3, predecessors=(2,))]
    chain = serialize_graph(dag)
    assert chain.layers == (0, 1, 2, 3)
    assert chain.relay_annotations == ()
    assert chain.synthetic_ids == ()


def test_serialize_diamond():
    # A -> {B, C} -> D ordered A,B,C,D: A's output relays through B's slot
    # (for C) and B's output through C's slot (for D)
    dag = [LayerNode(0), LayerNode(1, predecessors=(0,)),
           LayerNode(2, predecessors=(0,)), LayerNode(3, predecessors=(1, 2))]
    chain = serialize_graph(dag)
    assert chain.layers == (0, 1, 2, 3)
    relays = {(a.source, a.destination): a.positions for a in chain.relay_annotations}
    assert relays == {(0, 2): (1,), (1, 3): (2,)}


def test_serialize_skip_edge_relay_traffic():
    # skip edge L0 -> L3 over L1, L2: relays at positions 1 and 2; the extra
    # boundary traffic equals 2 x size(Y_L0)
    dag = [LayerNode(0), LayerNode(1, predecessors=(0,)),
           LayerNode(2, predecessors=(1,)), LayerNode(3, predecessors=(2, 0))]
    chain = serialize_graph(dag)
    relays = [a for a in chain.relay_annotations if (a.source, a.destination) == (0, 3)]
    assert len(relays) == 1
    assert relays[0].positions == (1, 2)
    # boundary after position 0 carries only the trunk; the next two carry
    # the relayed copy as well
    assert chain.boundary_sources(0) == (0,)
    assert chain.boundary_sources(1) == (0, 1)
    assert chain.boundary_sources(2) == (0, 2)


def test_serialize_cycle_raises():
    dag = [LayerNode(0, predecessors=(1,)), LayerNode(1, predecessors=(0,))]
    with pytest.raises(CyclicGraphError):
        serialize_graph(dag)


def test_serialize_multi_sink_gets_synthetic_join():
    dag = [LayerNode(0), LayerNode(1, predecessors=(0,)), LayerNode(2, predecessors=(0,))]
    chain = serialize_graph(dag)
    assert len(chain.synthetic_ids) == 1
    join = chain.synthetic_ids[0]
    assert chain.layers[-1] == join
    assert any("sinks" in d for d in chain.diagnostics)
    # both real sinks feed the join
    assert (1, join) in chain.edges and (2, join) in chain.edges


def test_serialize_multi_source_gets_synthetic_root():
    dag = [LayerNode(0), LayerNode(1), LayerNode(2, predecessors=(0, 1))]
    chain = serialize_graph(dag)
    assert len(chain.synthetic_ids) == 1
    root = chain.synthetic_ids[0]
    assert chain.layers[0] == root
    assert any("sources" in d for d in chain.diagnostics)
    assert (root, 0) in chain.edges and (root, 1) in chain.edges


def test_serialize_preserves_reachability_random():
    rng = random.Random(11)
    for _ in range(40):
        n = rng.randrange(2, 12)
        dag = [LayerNode(0)]
        for i in range(1, n):
            preds = tuple(sorted(rng.sample(range(i), rng.randrange(1, min(i, 3) + 1))))
            dag.append(LayerNode(i, predecessors=preds))
        chain = serialize_graph(dag)
        pos = {layer: p for p, layer in enumerate(chain.layers)}
        for node in dag:
            for pred in node.predecessors:
                assert pos[pred] < pos[node.id]
                gap = pos[node.id] - pos[pred]
                if gap > 1:
                    assert any(a.source == pred and a.destination == node.id
                               for a in chain.relay_annotations)
                # the predecessor's output crosses every boundary in between
                for boundary in range(pos[pred], pos[node.id]):
                    assert pred in chain.boundary_sources(boundary)


def test_machine_model_validation():
    with pytest.raises(ValidationError):
        MachineModel(gpu_count=0, gpu_mem_capacity=1, pcie_bandwidth=1)
    with pytest.raises(ValidationError):
        MachineModel(gpu_count=2, gpu_mem_capacity=0, pcie_bandwidth=1)
    with pytest.raises(ValidationError):
        MachineModel(gpu_count=2, gpu_mem_capacity=1, pcie_bandwidth=1,
                     p2p_groups=((0,),))  # gpu 1 missing
    m = MachineModel(gpu_count=4, gpu_mem_capacity=1, pcie_bandwidth=10,
                     p2p_groups=((0, 1), (2, 3)))
    assert m.root_link_bandwidth == 10
    assert m.same_p2p_group(0, 1) and not m.same_p2p_group(1, 2)


def test_configuration_validation():
    good = Configuration(u_f=2, p_f=((0, 1), (2, 3)), u_b=1,
                         p_b=((0, 0), (1, 1), (2, 3)), minibatch=4, mode=Mode.PP)
    good.validate()
    assert good.layer_count == 4

    bad_shared = Configuration(u_f=1, p_f=((0, 2), (3, 3)), u_b=1,
                               p_b=((0, 1), (2, 3)), minibatch=2, mode=Mode.PP)
    with pytest.raises(InvalidConfigurationError):
        bad_shared.validate()

    gap = Configuration(u_f=1, p_f=((0, 0), (2, 3)), u_b=1,
                        p_b=((0, 0), (2, 3)), minibatch=2, mode=Mode.PP)
    with pytest.raises(InvalidConfigurationError):
        gap.validate()

    big_u = Configuration(u_f=3, p_f=((0, 1),), u_b=1, p_b=((0, 1),),
                          minibatch=2, mode=Mode.PP)
    with pytest.raises(InvalidConfigurationError):
        big_u.validate()


def test_microbatch_groups_and_shares():
    assert microbatch_groups(8, 2) == (2, 2, 2, 2)
    assert microbatch_groups(7, 2) == (2, 2, 2, 1)
    assert microbatch_groups(1, 4) == (1,)
    assert microbatch_groups(0, 3) == ()
    assert gpu_shares(10, 4) == (3, 3, 2, 2)
    assert gpu_shares(8, 4) == (2, 2, 2, 2)


@given(total=st.integers(min_value=0, max_value=500),
       u=st.integers(min_value=1, max_value=64),
       n=st.integers(min_value=1, max_value=16))
def test_grouping_and_share_properties(total, u, n):
    groups = microbatch_groups(total, u)
    assert sum(groups) == total
    assert all(1 <= g <= u for g in groups)
    assert all(g == u for g in groups[:-1])  # only the last group may shrink
    shares = gpu_shares(total, n)
    assert sum(shares) == total
    assert max(shares) - min(shares) <= 1
    assert shares == tuple(sorted(shares, reverse=True))
