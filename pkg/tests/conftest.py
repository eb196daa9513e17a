import numpy as np
import pytest

from sgxleak.enclave import ServiceChain, generate_rules
from sgxleak.traffic import CorpusParams, PacketGroundTruth, generate_corpus


@pytest.fixture(scope="session")
def small_rules():
    return generate_rules(11, n_waf=200, n_ids=300, n_nat=200)


@pytest.fixture(scope="session")
def rules():
    return generate_rules(1)


@pytest.fixture(scope="session")
def corpus():
    return generate_corpus(7, 20)


def make_packet(uid="v0-0", page=0, obj=0, kind="response-segment", n=500, cls="text",
                suspicious=False, loggable=False, constant=True, t=0.0):
    return PacketGroundTruth(uid, page, obj, kind, n, cls, suspicious, loggable, constant, t)


@pytest.fixture
def packet_factory():
    return make_packet
